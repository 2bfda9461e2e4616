//! Canonical data types, file ingestion, returns and daily cross-sectional normalisation.

mod io;
mod normalize;
mod types;

pub(crate) use io::csv_err;
pub use io::{
    fmt_num, load_panel, load_panel_paths, load_posts, load_posts_path, write_bars, write_posts,
    write_sectors, PanelLoad, PostLoad,
};
pub use normalize::{cross_sectional_normalize, normalize_day, FeatureCube};
pub use types::{
    compute_return, Bar, MarketPanel, PostRecord, ReturnRatio, Sentiment, UNKNOWN_SECTOR,
};
