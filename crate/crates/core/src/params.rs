//! Named parameter tensors and JSON checkpoints.

use std::path::Path;

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::Rng;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "expertgraph-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(name: impl Into<String>, shape: &[usize], v: f64) -> Self {
        let mut t = Self::zeros(name, shape);
        t.data.fill(v);
        t
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform<R: Rng>(
        name: impl Into<String>,
        shape: &[usize],
        bound: f64,
        rng: &mut R,
    ) -> Self {
        let mut t = Self::zeros(name, shape);
        for v in &mut t.data {
            *v = rng.random_range(-bound..=bound);
        }
        t
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn vec(&self) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.data[..])
    }

    pub fn vec_mut(&mut self) -> ArrayViewMut1<'_, f64> {
        ArrayViewMut1::from(&mut self.data[..])
    }

    pub fn mat(&self) -> ArrayView2<'_, f64> {
        assert_eq!(self.shape.len(), 2, "{} is not a matrix", self.name);
        ArrayView2::from_shape((self.shape[0], self.shape[1]), &self.data).expect("shape checked")
    }

    pub fn mat_mut(&mut self) -> ArrayViewMut2<'_, f64> {
        assert_eq!(self.shape.len(), 2, "{} is not a matrix", self.name);
        ArrayViewMut2::from_shape((self.shape[0], self.shape[1]), &mut self.data)
            .expect("shape checked")
    }
}

/// Ordered list of tensors. Models address their tensors by position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new(tensors: Vec<Tensor>) -> Self {
        Self { tensors }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.name.clone(), &t.shape))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, flat: usize) -> f64 {
        let (t, i) = self.locate(flat);
        self.tensors[t].data[i]
    }

    pub fn set(&mut self, flat: usize, v: f64) {
        let (t, i) = self.locate(flat);
        self.tensors[t].data[i] = v;
    }

    /// `(tensor, offset)` of a flat index.
    pub fn locate(&self, mut flat: usize) -> (usize, usize) {
        for (t, tensor) in self.tensors.iter().enumerate() {
            if flat < tensor.len() {
                return (t, flat);
            }
            flat -= tensor.len();
        }
        panic!("flat parameter index out of range");
    }

    pub fn name_of(&self, flat: usize) -> String {
        let (t, i) = self.locate(flat);
        format!("{}[{i}]", self.tensors[t].name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.tensors.iter().flat_map(|t| t.data.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.tensors.iter_mut().flat_map(|t| t.data.iter_mut())
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, a: f64) {
        self.iter_mut().for_each(|v| *v *= a);
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &ParamSet) {
        self.check_same_layout(other)
            .expect("parameter layouts differ");
        for (x, y) in self.iter_mut().zip(other.iter()) {
            *x += a * y;
        }
    }

    pub fn check_same_layout(&self, other: &ParamSet) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::Format(format!(
                "expected {} tensors, found {}",
                self.tensors.len(),
                other.tensors.len()
            )));
        }
        for (a, b) in self.tensors.iter().zip(&other.tensors) {
            if a.name != b.name
                || a.shape != b.shape
                || b.data.len() != b.shape.iter().product::<usize>()
            {
                return Err(Error::Format(format!(
                    "tensor {} {:?} does not match {} {:?}",
                    b.name, b.shape, a.name, a.shape
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    model: String,
    config: serde_json::Value,
    tensors: Vec<Tensor>,
}

/// Writes a model config and its parameters as one JSON document.
pub fn save_checkpoint<C: Serialize>(
    path: &Path,
    model: &str,
    config: &C,
    params: &ParamSet,
) -> Result<()> {
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        model: model.into(),
        config: serde_json::to_value(config).map_err(|e| Error::Format(e.to_string()))?,
        tensors: params.tensors.clone(),
    };
    let text = serde_json::to_string(&file).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a checkpoint written by [`save_checkpoint`] for `model`.
pub fn load_checkpoint<C: DeserializeOwned>(path: &Path, model: &str) -> Result<(C, ParamSet)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CheckpointFile = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if file.format != CHECKPOINT_FORMAT || file.version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported checkpoint {} v{}",
            path.display(),
            file.format,
            file.version
        )));
    }
    if file.model != model {
        return Err(Error::Format(format!(
            "{}: checkpoint holds a {} model, expected {model}",
            path.display(),
            file.model
        )));
    }
    let config = serde_json::from_value(file.config).map_err(|e| Error::Format(e.to_string()))?;
    let params = ParamSet::new(file.tensors);
    for t in &params.tensors {
        if t.data.len() != t.shape.iter().product::<usize>() {
            return Err(Error::Format(format!(
                "tensor {} has the wrong length",
                t.name
            )));
        }
    }
    Ok((config, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        ParamSet::new(vec![
            Tensor::uniform("w", &[2, 3], 0.5, &mut rng),
            Tensor::filled("b", &[3], 0.25),
        ])
    }

    #[test]
    fn flat_indexing_walks_tensors_in_order() {
        let mut p = sample();
        assert_eq!(p.len(), 9);
        assert_eq!(p.locate(6), (1, 0));
        p.set(7, 4.0);
        assert_eq!(p.tensors[1].data[1], 4.0);
        assert_eq!(p.name_of(2), "w[2]");
        assert!(p.tensors[0].data.iter().all(|v| v.abs() <= 0.5));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let p = sample();
        save_checkpoint(&path, "toy", &vec![1u32, 2], &p).unwrap();
        let (cfg, q): (Vec<u32>, ParamSet) = load_checkpoint(&path, "toy").unwrap();
        assert_eq!(cfg, vec![1, 2]);
        assert_eq!(p, q);
        assert!(load_checkpoint::<Vec<u32>>(&path, "other").is_err());
    }
}
