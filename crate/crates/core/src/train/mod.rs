//! Loss assembly, training orchestration, evaluation and benchmarks.

pub mod bench;
pub mod loss;
pub mod metrics;
pub mod trainer;

pub use bench::{bench_attention, doubling_ratios, write_bench_csv, AttentionVariant, BenchRow};
pub use loss::{class_colors, frame_loss, FrameLoss, LossWeights, ViewLabels, PROB_EPS};
pub use metrics::{evaluate_depth, evaluate_occupancy, DepthAccumulator, DepthReport, OccupancyAccumulator, OccupancyReport};
pub use trainer::{learning_rate, window, EvalReport, RenderedSet, StepLog, Trainer};
