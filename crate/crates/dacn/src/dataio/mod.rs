//! Dataset preparation: standardization, windowing, splitting, and task
//! assembly, plus CSV ingestion for externally generated data.

pub mod csvio;
pub mod split;
pub mod stats;
pub mod task;
pub mod window;

pub use csvio::{ingest_csv, load_dataset, CsvSchema};
pub use split::split;
pub use stats::{compute_stats, standardize, ChannelStats, STD_FLOOR};
pub use task::{build_task, fault_label, StatsScope, TaskBundle, TaskSpec};
pub use window::{window, LabelPolicy, SampleSet};
