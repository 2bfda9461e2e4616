//! Per-user prediction tracking and expert / inverse-expert classification.

mod config;
mod store;
mod trace;

pub use config::TracerConfig;
pub use store::{
    append_track_log, evaluate_prediction, long_term_accuracy, long_term_counts, read_track_log,
    recent_window, write_track_log_header, Counters, Outcome, RecentWindow, ResolvedRecord,
    SessionDay, StoreSnapshot, TrackStore, TrackedPost, UserSnapshot, UserTrackRecord,
    TRACK_LOG_HEADER,
};
pub use trace::{
    assign_sessions, classify, classify_user, close_time, filter_daily_latest, trace_all,
    trace_day, Classification, DayTrace, ExpertCall, Role,
};
