//! Experiment protocols: split, train (with a checkpoint cache), stream the
//! held-out videos, score, and write tables, heatmaps and PR points.

mod protocol;
mod report;
mod workspace;

pub use protocol::{
    plan_cells, run_protocol, run_protocol_in, CellPlan, CellResult, MatrixSlot, Protocol,
    ProtocolResult, ProtocolSpec, Provenance, WORKERS_ENV,
};
pub use report::{
    emit_report, mean_std, HEATMAP_DIR, PROVENANCE_FILE, PR_DIR, RESULT_FILE, SUMMARY_FILE,
};
pub use workspace::{training_key, Fitted, Workspace};
