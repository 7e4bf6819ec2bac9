//! Parametric and elastic registration of frame pairs on a multiscale
//! smoothing-spline schedule.

pub mod error;
pub mod grid;
pub mod image;
pub mod objective;
pub mod pipeline;
pub mod solver;
pub mod spline;
pub mod synth;
pub mod transforms;

pub use error::{Error, Result};
pub use grid::{cell_centered_grid, Grid, Point};
pub use image::{load_frame, pad_image, Domain, ScalarImage};
pub use objective::{elastic_energy, elastic_operator_apply, ndm, ssd, ElasticConfig};
pub use pipeline::{
    extract_pose, register, run_meir, run_meir_iterated, run_mpir, run_speed_curve, select_method, two_level_prereg,
    Method, NdmCurve, Pose, RegistrationConfig, RegistrationResult,
};
pub use solver::{solve_elastic, solve_parametric, SolverConfig, SolverTrace, StopReason};
pub use spline::{build_interpolant, interp_eval, Interpolant, ScaleSchedule};
pub use synth::{make_elastic_synthetic, make_rigid_synthetic, run_benchmark, synthesize, BenchCase, BenchmarkRow, SynthKind, SynthSpec};
pub use transforms::{
    apply_displacement, apply_rigid, closest_rigid_like, compose, rigid_to_displacement, warp_image,
    DisplacementField, RigidLikeParams,
};
