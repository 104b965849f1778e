//! Run configuration, checkpoints, metrics, training, ablation and sweeps.

mod ablate;
mod checkpoint;
mod config;
mod metrics;
mod sweep;
mod train;

pub use ablate::{ablate, ablation_config, ablation_table, AblationRow, ARMS};
pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};
pub use config::{RunConfig, CONFIG_KEYS};
pub use metrics::{
    read_metrics, DirSink, MemorySink, MetricsRecord, Phase, RecordKind, RunSink, BEST_CHECKPOINT, METRICS_FILE,
};
pub use sweep::{load_ranges, parse_ranges, sample_configs, sweep, Range, Sample, SweepRow};
pub use train::{train, Dataset, TrainOutcome};
