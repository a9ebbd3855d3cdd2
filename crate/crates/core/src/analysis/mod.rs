//! Stream metrics and figures over run records.

mod metrics;
mod plot;
mod report;
mod transfer;

pub use metrics::{
    aggregate, dominates, forward_transfer, forward_transfer_from_auc, mean_std, nearest_cflop, normalized_auc,
    pareto_front, regret_curve, slice_aggregates, Aggregate, ParetoPoint, ResolutionBucket, SizeBucket, Slice,
};
pub use plot::{plot_fwt, plot_pareto, plot_regret, plot_transfer};
pub use report::{report_rows, run_label, transfer_rows, write_csv, ReportRow, TransferRow};
pub use transfer::{transfer_matrix, TransferConfig, TransferMatrix};
