use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_FORMAT: &str = "expertgraph-manifest";
pub const MANIFEST_VERSION: u32 = 1;

/// What a stage consumed and produced, by content hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub stage: String,
    /// Hash of the config sections the stage reads.
    pub config_hash: String,
    pub seed: u64,
    pub stage_seed: u64,
    /// Upstream stage name (or `file:<label>`) to the digest it had when consumed.
    pub inputs: BTreeMap<String, String>,
    /// Output file name to its sha256.
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    /// Digest of the outputs, which downstream manifests record as their input.
    pub fn digest(&self) -> String {
        hash_json(&self.outputs)
    }

    pub fn read(dir: &Path) -> Result<Option<Manifest>> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if m.format != MANIFEST_FORMAT || m.version != MANIFEST_VERSION {
            return Err(Error::Format(format!(
                "{}: unsupported manifest",
                path.display()
            )));
        }
        Ok(Some(m))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let mut text =
            serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Hash of a value's JSON form; object keys are sorted, so equal values hash equally.
pub fn hash_json<T: Serialize>(v: &T) -> String {
    let value = serde_json::to_value(v).expect("config values serialise");
    sha256_bytes(value.to_string().as_bytes())
}

/// Stage seed: the first eight bytes of `sha256("<seed>:<stage>")`, little endian.
pub fn derive_seed(seed: u64, stage: &str) -> u64 {
    let d = Sha256::digest(format!("{seed}:{stage}").as_bytes());
    let mut b = [0u8; 8];
    b.copy_from_slice(&d[..8]);
    u64::from_le_bytes(b)
}
