//! Multiscale registration schedules: the parametric baseline (MPIR), the
//! elastic schedule with rigid-like pre-registration (MEIR), its twice
//! iterated variant, pose readout and NDM speed curves.

use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{cell_centered_grid, Grid};
use crate::image::ScalarImage;
use crate::objective::{ndm, ElasticConfig};
use crate::solver::{solve_elastic_with, solve_parametric, Regularization, SolverConfig, SolverTrace};
use crate::spline::{build_interpolant, Interpolant, ScaleSchedule};
use crate::transforms::{
    closest_rigid_like, compose, rigid_to_displacement, warp_image, DisplacementField, RigidLikeParams,
};

/// Two methods are "comparable" when the parametric NDM is within this
/// factor of the elastic one.
pub const COMPARABILITY_FACTOR: f64 = 1.5;

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationConfig {
    pub schedule: ScaleSchedule,
    pub grid_n: usize,
    pub elastic: ElasticConfig,
    pub parametric_solver: SolverConfig,
    pub elastic_solver: SolverConfig,
    pub prereg_two_level: bool,
    pub iterate_twice: bool,
    /// Pose of iterated MEIR from the composed map (`true`) or from the
    /// Step-2 field alone.
    pub pose_from_composition: bool,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        RegistrationConfig {
            schedule: ScaleSchedule::default(),
            grid_n: 128,
            elastic: ElasticConfig::default(),
            parametric_solver: SolverConfig::parametric(),
            elastic_solver: SolverConfig::elastic(),
            prereg_two_level: false,
            iterate_twice: true,
            pose_from_composition: true,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_n < 16 || !self.grid_n.is_power_of_two() {
            return Err(Error::invalid(format!(
                "grid size {} must be a power of two of at least 16",
                self.grid_n
            )));
        }
        self.elastic.validate()?;
        self.parametric_solver.validate()?;
        self.elastic_solver.validate()
    }

    pub fn grid(&self, template: &ScalarImage) -> Grid {
        cell_centered_grid(self.grid_n, self.grid_n, template.domain())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Mpir,
    Meir,
    MeirIterated,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Mpir => "mpir",
            Method::Meir => "meir",
            Method::MeirIterated => "meir-iterated",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Prereg,
    Parametric,
    Elastic,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Prereg => "prereg",
            Stage::Parametric => "parametric",
            Stage::Elastic => "elastic",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleRecord {
    /// 1 or 2 within iterated MEIR, 1 otherwise.
    pub pass: usize,
    pub stage: Stage,
    pub theta: f64,
    pub objective_before: f64,
    pub objective_after: f64,
    pub trace: SolverTrace,
}

#[derive(Debug, Clone)]
pub struct RegistrationResult {
    pub method: Method,
    pub per_scale: Vec<ScaleRecord>,
    pub final_displacement: DisplacementField,
    pub final_rigid: RigidLikeParams,
    pub ndm: f64,
    pub warped_template: ScalarImage,
    /// Seconds.
    pub wall_time: f64,
    /// Nonconverged scales and fallbacks.
    pub warnings: Vec<String>,
}

impl RegistrationResult {
    pub fn traces(&self) -> impl Iterator<Item = &SolverTrace> {
        self.per_scale.iter().map(|s| &s.trace)
    }
}

/// Interpolants of both images at one scale.
struct ScalePair {
    r: Interpolant,
    t: Interpolant,
}

fn scale_pair(r: &ScalarImage, t: &ScalarImage, theta: f64) -> Result<ScalePair> {
    Ok(ScalePair {
        r: build_interpolant(r, theta)?,
        t: build_interpolant(t, theta)?,
    })
}

fn check_pair(r: &ScalarImage, t: &ScalarImage, cfg: &RegistrationConfig) -> Result<()> {
    cfg.validate()?;
    if r.domain() != t.domain() {
        return Err(Error::contract("reference and template live on different domains"));
    }
    Ok(())
}

/// The reference sampled on the registration grid.
fn reference_on_grid(r: &ScalarImage, grid: &Grid) -> Result<ScalarImage> {
    if r.width() == grid.nx() && r.height() == grid.ny() {
        return Ok(r.clone());
    }
    Ok(build_interpolant(r, 0.0)?.sample(grid))
}

fn record(pass: usize, stage: Stage, theta: f64, trace: SolverTrace, warnings: &mut Vec<String>) -> ScaleRecord {
    if !trace.converged {
        warnings.push(format!(
            "pass {pass} {} theta={theta}: stopped by {}",
            stage.as_str(),
            trace.stop_reason.as_str()
        ));
    }
    ScaleRecord {
        pass,
        stage,
        theta,
        objective_before: trace.initial_objective(),
        objective_after: trace.final_objective(),
        trace,
    }
}

/// Final warp at θ = 0 and its NDM against the reference.
fn finish(r: &ScalarImage, t: &ScalarImage, u: &DisplacementField) -> Result<(ScalarImage, f64)> {
    let grid = u.grid();
    let on_grid = t.width() == grid.nx() && t.height() == grid.ny();
    let warped = if on_grid && u.max_magnitude() == 0.0 {
        t.clone()
    } else {
        warp_image(&build_interpolant(t, 0.0)?, &u.mapped_points(), grid)?
    };
    let value = ndm(&reference_on_grid(r, grid)?, &warped)?;
    Ok((warped, value))
}

/// Rigid-like registration at every scale of the schedule, each warm-started
/// from the previous scale.
pub fn run_mpir(r: &ScalarImage, t: &ScalarImage, cfg: &RegistrationConfig) -> Result<RegistrationResult> {
    check_pair(r, t, cfg)?;
    let start = Instant::now();
    let grid = cfg.grid(t);
    let mut warnings = Vec::new();
    let mut per_scale = Vec::new();
    let mut w = RigidLikeParams::IDENTITY;
    for &theta in cfg.schedule.thetas() {
        let sp = scale_pair(r, t, theta)?;
        let (next, trace) = solve_parametric(&sp.r, &sp.t, &grid, w, &cfg.parametric_solver)?;
        w = next;
        per_scale.push(record(1, Stage::Parametric, theta, trace, &mut warnings));
    }
    let field = rigid_to_displacement(&w, &grid);
    let (warped_template, ndm) = finish(r, t, &field)?;
    Ok(RegistrationResult {
        method: Method::Mpir,
        per_scale,
        final_displacement: field,
        final_rigid: w,
        ndm,
        warped_template,
        wall_time: start.elapsed().as_secs_f64(),
        warnings,
    })
}

/// Rigid-like pre-registration at the coarsest scale, solved first on a
/// half-resolution grid and then refined on the full grid.
pub fn two_level_prereg(r: &ScalarImage, t: &ScalarImage, cfg: &RegistrationConfig) -> Result<RigidLikeParams> {
    check_pair(r, t, cfg)?;
    let sp = scale_pair(r, t, cfg.schedule.coarsest())?;
    Ok(two_level_solve(&sp, t, cfg)?.0)
}

fn two_level_solve(
    sp: &ScalePair,
    t: &ScalarImage,
    cfg: &RegistrationConfig,
) -> Result<(RigidLikeParams, SolverTrace, SolverTrace)> {
    if cfg.grid_n < 32 {
        return Err(Error::invalid("two-level pre-registration needs a grid of at least 32"));
    }
    let coarse = cell_centered_grid(cfg.grid_n / 2, cfg.grid_n / 2, t.domain());
    let (w, coarse_trace) = solve_parametric(&sp.r, &sp.t, &coarse, RigidLikeParams::IDENTITY, &cfg.parametric_solver)?;
    let fine = cfg.grid(t);
    let (w, fine_trace) = solve_parametric(&sp.r, &sp.t, &fine, w, &cfg.parametric_solver)?;
    Ok((w, coarse_trace, fine_trace))
}

fn meir_pass(
    r: &ScalarImage,
    t: &ScalarImage,
    cfg: &RegistrationConfig,
    pass: usize,
    per_scale: &mut Vec<ScaleRecord>,
    warnings: &mut Vec<String>,
) -> Result<DisplacementField> {
    let grid = cfg.grid(t);
    let thetas = cfg.schedule.thetas();
    let mut coarse_pair = Some(scale_pair(r, t, thetas[0])?);
    let w = if cfg.prereg_two_level {
        let sp = coarse_pair.as_ref().expect("coarse interpolants");
        let (w, coarse_trace, fine_trace) = two_level_solve(sp, t, cfg)?;
        per_scale.push(record(pass, Stage::Prereg, thetas[0], coarse_trace, warnings));
        per_scale.push(record(pass, Stage::Prereg, thetas[0], fine_trace, warnings));
        w
    } else {
        let sp = coarse_pair.as_ref().expect("coarse interpolants");
        let (w, trace) = solve_parametric(&sp.r, &sp.t, &grid, RigidLikeParams::IDENTITY, &cfg.parametric_solver)?;
        per_scale.push(record(pass, Stage::Prereg, thetas[0], trace, warnings));
        w
    };
    let prereg = rigid_to_displacement(&w, &grid);
    let mut u = prereg.clone();
    for &theta in thetas {
        let sp = match coarse_pair.take() {
            Some(sp) => sp,
            None => scale_pair(r, t, theta)?,
        };
        let (next, trace) = solve_elastic_with(
            &sp.r,
            &sp.t,
            &grid,
            &u,
            Regularization::Anchored(&prereg),
            &cfg.elastic,
            &cfg.elastic_solver,
        )?;
        u = next;
        per_scale.push(record(pass, Stage::Elastic, theta, trace, warnings));
    }
    Ok(u)
}

/// Rigid-like pre-registration at the coarsest scale followed by elastic
/// registration at every scale, coarse to fine.
pub fn run_meir(r: &ScalarImage, t: &ScalarImage, cfg: &RegistrationConfig) -> Result<RegistrationResult> {
    check_pair(r, t, cfg)?;
    let start = Instant::now();
    let mut warnings = Vec::new();
    let mut per_scale = Vec::new();
    let u = meir_pass(r, t, cfg, 1, &mut per_scale, &mut warnings)?;
    let (warped_template, ndm) = finish(r, t, &u)?;
    let final_rigid = closest_rigid_like(&u)?;
    Ok(RegistrationResult {
        method: Method::Meir,
        per_scale,
        final_displacement: u,
        final_rigid,
        ndm,
        warped_template,
        wall_time: start.elapsed().as_secs_f64(),
        warnings,
    })
}

/// MEIR applied twice: the second pass registers the reference against the
/// first pass's warped template. The reported field is the composition of
/// both maps. If the second pass would raise the NDM it is discarded.
pub fn run_meir_iterated(r: &ScalarImage, t: &ScalarImage, cfg: &RegistrationConfig) -> Result<RegistrationResult> {
    check_pair(r, t, cfg)?;
    let start = Instant::now();
    let mut warnings = Vec::new();
    let mut per_scale = Vec::new();
    let u1 = meir_pass(r, t, cfg, 1, &mut per_scale, &mut warnings)?;
    let (warped1, ndm1) = finish(r, t, &u1)?;

    let grid = u1.grid().clone();
    let r_grid = reference_on_grid(r, &grid)?;
    let mut second = Vec::new();
    let mut second_warnings = Vec::new();
    let u2 = meir_pass(&r_grid, &warped1, cfg, 2, &mut second, &mut second_warnings)?;
    let (warped2, ndm2) = finish(&r_grid, &warped1, &u2)?;

    let (final_displacement, final_rigid, warped_template, ndm) = if ndm2 <= ndm1 {
        per_scale.extend(second);
        warnings.extend(second_warnings);
        let composed = compose(&u1, &u2)?;
        let pose = if cfg.pose_from_composition {
            closest_rigid_like(&composed)?
        } else {
            closest_rigid_like(&u2)?
        };
        (composed, pose, warped2, ndm2)
    } else {
        warnings.push(format!(
            "second pass raised NDM from {ndm1:.6} to {ndm2:.6}; kept the first pass"
        ));
        let pose = closest_rigid_like(&u1)?;
        (u1, pose, warped1, ndm1)
    };
    Ok(RegistrationResult {
        method: Method::MeirIterated,
        per_scale,
        final_displacement,
        final_rigid,
        ndm,
        warped_template,
        wall_time: start.elapsed().as_secs_f64(),
        warnings,
    })
}

/// Runs `method`; [`Method::Meir`] is promoted to the iterated variant when
/// `cfg.iterate_twice` is set.
pub fn register(r: &ScalarImage, t: &ScalarImage, method: Method, cfg: &RegistrationConfig) -> Result<RegistrationResult> {
    match method {
        Method::Mpir => run_mpir(r, t, cfg),
        Method::Meir if cfg.iterate_twice => run_meir_iterated(r, t, cfg),
        Method::Meir => run_meir(r, t, cfg),
        Method::MeirIterated => run_meir_iterated(r, t, cfg),
    }
}

/// Scale, rotation and translation of a result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub scale: f64,
    pub rotation_degrees: f64,
    pub translation: [f64; 2],
}

impl From<RigidLikeParams> for Pose {
    fn from(w: RigidLikeParams) -> Self {
        Pose {
            scale: w.scale,
            rotation_degrees: w.rotation_degrees(),
            translation: [w.tx, w.ty],
        }
    }
}

/// MPIR reports its final parameters; the elastic methods report the rigid-like
/// map closest to their final field.
pub fn extract_pose(res: &RegistrationResult) -> Pose {
    Pose::from(res.final_rigid)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    /// Index of the template frame; the reference is the next frame.
    pub index: usize,
    pub ndm: f64,
    /// The registration did not converge at some scale or fell back.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NdmCurve {
    pub method: Method,
    pub points: Vec<CurvePoint>,
}

/// Registers each consecutive pair with template = frame k and reference =
/// frame k+1. Pairs run in parallel; the curve is ordered by k.
pub fn run_speed_curve(frames: &[ScalarImage], method: Method, cfg: &RegistrationConfig) -> Result<NdmCurve> {
    if frames.len() < 2 {
        return Err(Error::invalid("a speed curve needs at least two frames"));
    }
    let points = (0..frames.len() - 1)
        .into_par_iter()
        .map(|k| {
            let res = register(&frames[k + 1], &frames[k], method, cfg)?;
            Ok(CurvePoint {
                index: k,
                ndm: res.ndm,
                flagged: !res.warnings.is_empty(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NdmCurve { method, points })
}

/// The cheaper parametric model wins unless the elastic NDM is clearly lower.
pub fn select_method(ndm_mpir: f64, ndm_meir: f64) -> Method {
    if ndm_mpir <= COMPARABILITY_FACTOR * ndm_meir {
        Method::Mpir
    } else {
        Method::Meir
    }
}
