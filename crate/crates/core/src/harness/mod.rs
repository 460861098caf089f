//! Experiment driver: optimizer, configs, the toy and router studies, and
//! report emission. Everything here is `f64`.

pub mod adam;
pub mod config;
pub mod grad;
pub mod report;
pub mod router_sim;
pub mod svg;
pub mod table;
pub mod toy;
pub mod upcycle_check;

pub use adam::{adam_step, AdamState};
pub use config::{
    ExperimentConfig, ExperimentKind, RegularizerSpec, SimMoeSpec, SourceSpec, TaskSpec,
};
pub use grad::{softmax_chain, softmax_chain_rows};
pub use report::{emit_report, Manifest, RunReport};
pub use router_sim::{run_router_sim, RouterSim};
pub use table::write_specfun_table;
pub use toy::run_shape_toy;
pub use upcycle_check::{run_upcycle_check, UpcycleCheck};

use crate::error::Result;

/// Runs the experiment `config.kind` describes.
pub fn run(config: &ExperimentConfig) -> Result<RunReport> {
    match config.kind {
        ExperimentKind::ShapeToy => run_shape_toy(config),
        ExperimentKind::RouterSim => run_router_sim(config),
        ExperimentKind::UpcycleCheck => run_upcycle_check(config),
    }
}
