//! Synthetic frames with known ground truth and the benchmark sweeps built
//! on them.
//!
//! A synthetic template is `T(x) = I(ψ⁻¹(x + p(x)))` where `I` is the zero
//! padded source frame, `ψ` the rigid-like map about the domain center and
//! `p` a smooth random perturbation. Registering `R = I` against `T`
//! therefore recovers `ψ`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{cell_centered_grid, Point};
use crate::image::{pad_image, ScalarImage};
use crate::pipeline::{extract_pose, run_meir_iterated, run_mpir, RegistrationConfig, RegistrationResult};
use crate::spline::build_interpolant;
use crate::transforms::{DisplacementField, RigidLikeParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    Rigid,
    Elastic,
    RigidElastic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub scale: f64,
    pub rotation_degrees: f64,
    /// Maximum perturbation magnitude in cells.
    pub elastic_intensity: f64,
    pub seed: u64,
    /// Gaussian width in cells.
    pub smoothing_sigma: f64,
    pub pad_margin: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            kind: SynthKind::Rigid,
            scale: 1.0,
            rotation_degrees: 0.0,
            elastic_intensity: 0.0,
            seed: 0,
            smoothing_sigma: 5.0,
            pad_margin: 0.25,
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) || !self.rotation_degrees.is_finite() {
            return Err(Error::invalid("synthetic scale must be positive and rotation finite"));
        }
        if !(self.elastic_intensity >= 0.0 && self.elastic_intensity.is_finite()) {
            return Err(Error::invalid("elastic intensity must be nonnegative"));
        }
        if !(self.smoothing_sigma > 0.0 && self.smoothing_sigma.is_finite()) {
            return Err(Error::invalid("smoothing sigma must be positive"));
        }
        Ok(())
    }

    fn has_rigid(&self) -> bool {
        self.kind != SynthKind::Elastic
    }

    fn has_elastic(&self) -> bool {
        self.kind != SynthKind::Rigid && self.elastic_intensity > 0.0
    }

    /// The centered rigid-like map `ψ` registration should recover.
    pub fn rigid(&self, center: Point) -> RigidLikeParams {
        if self.has_rigid() {
            RigidLikeParams::about_center(self.scale, self.rotation_degrees.to_radians(), center)
        } else {
            RigidLikeParams::IDENTITY
        }
    }
}

/// A synthesized pair and its ground truth.
#[derive(Debug, Clone)]
pub struct SynthPair {
    /// The padded source frame.
    pub reference: ScalarImage,
    pub template: ScalarImage,
    pub truth: RigidLikeParams,
    pub perturbation: Option<DisplacementField>,
    pub warnings: Vec<String>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator seed for frame `index` of a run seeded with `seed`.
pub fn frame_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index))
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian filter with replicated borders.
fn gaussian_smooth(values: &[f64], nx: usize, ny: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut rows = vec![0.0; values.len()];
    for i2 in 0..ny {
        for i1 in 0..nx {
            rows[i1 + nx * i2] = k
                .iter()
                .enumerate()
                .map(|(m, w)| w * values[clamp(i1 as isize + m as isize - r, nx) + nx * i2])
                .sum();
        }
    }
    let mut out = vec![0.0; values.len()];
    for i2 in 0..ny {
        for i1 in 0..nx {
            out[i1 + nx * i2] = k
                .iter()
                .enumerate()
                .map(|(m, w)| w * rows[i1 + nx * clamp(i2 as isize + m as isize - r, ny)])
                .sum();
        }
    }
    out
}

/// Side of the grid the elastic perturbation is drawn on, whatever the
/// frame resolution.
pub const PERTURBATION_N: usize = 128;

/// Smoothed, centered uniform noise on a `PERTURBATION_N`² grid over the
/// image domain whose largest vector has magnitude `intensity · h`.
pub fn elastic_perturbation(img: &ScalarImage, spec: &SynthSpec) -> Result<DisplacementField> {
    spec.validate()?;
    let grid = cell_centered_grid(PERTURBATION_N, PERTURBATION_N, img.domain());
    let (nx, ny) = (grid.nx(), grid.ny());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut component = || {
        let raw: Vec<f64> = (0..nx * ny).map(|_| rng.random::<f64>()).collect();
        let mut c = gaussian_smooth(&raw, nx, ny, spec.smoothing_sigma);
        let mean = c.iter().sum::<f64>() / c.len() as f64;
        c.iter_mut().for_each(|v| *v -= mean);
        c
    };
    let (mut p1, mut p2) = (component(), component());
    if spec.elastic_intensity == 0.0 {
        p1.iter_mut().chain(p2.iter_mut()).for_each(|v| *v = 0.0);
        return DisplacementField::new(grid, p1, p2);
    }
    let peak = p1.iter().zip(&p2).map(|(a, b)| a.hypot(*b)).fold(0.0, f64::max);
    if peak == 0.0 {
        return Err(Error::Estimation("perturbation vanished after smoothing".into()));
    }
    let factor = spec.elastic_intensity * grid.cell_size()[0] / peak;
    p1.iter_mut().chain(p2.iter_mut()).for_each(|v| *v *= factor);
    DisplacementField::new(grid, p1, p2)
}

/// Pads `img` and resamples it so the result is `I(ψ⁻¹(x))`.
pub fn make_rigid_synthetic(img: &ScalarImage, spec: &SynthSpec) -> Result<SynthPair> {
    let rigid_only = SynthSpec {
        kind: SynthKind::Rigid,
        ..*spec
    };
    synthesize(img, &rigid_only)
}

/// The image interpolated at the perturbed grid `x + p(x)`, without padding,
/// and the perturbed points. The output lives on the perturbation grid,
/// except that zero intensity returns the input unchanged.
pub fn make_elastic_synthetic(img: &ScalarImage, spec: &SynthSpec) -> Result<(ScalarImage, Vec<Point>)> {
    if spec.elastic_intensity == 0.0 {
        spec.validate()?;
        return Ok((img.clone(), img.grid().points().to_vec()));
    }
    let p = elastic_perturbation(img, spec)?;
    let points: Vec<Point> = p
        .grid()
        .points()
        .iter()
        .zip(p.u1().iter().zip(p.u2()))
        .map(|(x, (a, b))| [x[0] + a, x[1] + b])
        .collect();
    let itp = build_interpolant(img, 0.0)?;
    let samples = points.iter().map(|&q| itp.eval(q)).collect();
    Ok((ScalarImage::new(PERTURBATION_N, PERTURBATION_N, samples, img.domain())?, points))
}

/// Pads the frame, then applies the perturbation and the inverse rigid map
/// in a single resampling.
pub fn synthesize(img: &ScalarImage, spec: &SynthSpec) -> Result<SynthPair> {
    spec.validate()?;
    let reference = pad_image(img, spec.pad_margin)?;
    let domain = reference.domain();
    let truth = spec.rigid(domain.center());
    let perturbation = if spec.has_elastic() {
        Some(elastic_perturbation(&reference, spec)?)
    } else {
        None
    };
    let mut warnings = Vec::new();
    if truth == RigidLikeParams::IDENTITY && perturbation.is_none() {
        return Ok(SynthPair {
            template: reference.clone(),
            reference,
            truth,
            perturbation,
            warnings,
        });
    }
    let grid = reference.grid();
    let inverse = truth.inverse();
    let points: Vec<Point> = grid
        .points()
        .iter()
        .map(|x| {
            let y = match &perturbation {
                Some(p) => {
                    let d = p.sample_bilinear(*x);
                    [x[0] + d[0], x[1] + d[1]]
                }
                None => *x,
            };
            inverse.apply(y)
        })
        .collect();
    // content escapes when the forward map sends content-bearing cells
    // outside the domain
    let lost = grid
        .points()
        .iter()
        .zip(reference.samples())
        .filter(|(x, v)| **v != 0.0 && !domain.contains(truth.apply(**x)))
        .count();
    if lost > 0 {
        warnings.push(format!("{lost} nonzero samples leave the domain"));
    }
    let itp = build_interpolant(&reference, 0.0)?;
    let samples = points.iter().map(|&q| itp.eval(q)).collect();
    Ok(SynthPair {
        template: ScalarImage::new(reference.width(), reference.height(), samples, domain)?,
        reference,
        truth,
        perturbation,
        warnings,
    })
}

/// A smooth random grayscale texture in [0, 1]: Gaussian blobs of mixed
/// widths over a faint low-frequency background.
pub fn texture_frame(n: usize, seed: u64) -> ScalarImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blobs: Vec<(f64, f64, f64, f64)> = (0..40)
        .map(|_| {
            (
                rng.random::<f64>(),
                rng.random::<f64>(),
                rng.random_range(0.02..0.12),
                rng.random_range(0.3..1.0),
            )
        })
        .collect();
    let (fx, fy, ph) = (
        rng.random_range(1.0..3.0),
        rng.random_range(1.0..3.0),
        rng.random_range(0.0..std::f64::consts::TAU),
    );
    let img = ScalarImage::from_fn(n, n, |x, y| {
        let b: f64 = blobs
            .iter()
            .map(|&(cx, cy, w, a)| a * (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * w * w)).exp())
            .sum();
        b + 0.3 * (1.0 + (fx * x * 6.0 + fy * y * 4.0 + ph).sin())
    });
    let hi = img.samples().iter().cloned().fold(f64::MIN, f64::max);
    let lo = img.samples().iter().cloned().fold(f64::MAX, f64::min);
    let samples = img.samples().iter().map(|v| (v - lo) / (hi - lo)).collect();
    ScalarImage::from_samples(n, samples).expect("texture samples are finite")
}

/// The four synthetic benchmark settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchCase {
    /// Elastic only.
    I,
    /// Rotation with elastic, original scale.
    Ii,
    /// Scale with elastic, original orientation.
    Iii,
    /// Rotation, scale and elastic; the sweep runs over rotations at
    /// `fixed_scale` or over scales at `fixed_rotation`.
    Iv,
}

impl BenchCase {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "i" | "1" => Ok(BenchCase::I),
            "ii" | "2" => Ok(BenchCase::Ii),
            "iii" | "3" => Ok(BenchCase::Iii),
            "iv" | "4" => Ok(BenchCase::Iv),
            other => Err(Error::invalid(format!("unknown benchmark case '{other}'"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            BenchCase::I => "i",
            BenchCase::Ii => "ii",
            BenchCase::Iii => "iii",
            BenchCase::Iv => "iv",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Case4Sweep {
    Rotations { fixed_scale: f64 },
    Scales { fixed_rotation_degrees: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSettings {
    pub case: BenchCase,
    /// Rotations (degrees) for cases ii and iv-by-rotation, scales for iii
    /// and iv-by-scale; ignored for case i.
    pub sweep: Vec<f64>,
    pub case4: Case4Sweep,
    pub elastic_intensity: f64,
    pub smoothing_sigma: f64,
    pub pad_margin: f64,
    pub seed: u64,
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings {
            case: BenchCase::I,
            sweep: vec![0.0],
            case4: Case4Sweep::Rotations { fixed_scale: 1.4 },
            elastic_intensity: 5.0,
            smoothing_sigma: 5.0,
            pad_margin: 0.25,
            seed: 0,
        }
    }
}

impl BenchSettings {
    fn spec_for(&self, value: f64) -> SynthSpec {
        let (scale, rotation_degrees) = match (self.case, self.case4) {
            (BenchCase::I, _) => (1.0, 0.0),
            (BenchCase::Ii, _) => (1.0, value),
            (BenchCase::Iii, _) => (value, 0.0),
            (BenchCase::Iv, Case4Sweep::Rotations { fixed_scale }) => (fixed_scale, value),
            (BenchCase::Iv, Case4Sweep::Scales { fixed_rotation_degrees }) => (value, fixed_rotation_degrees),
        };
        SynthSpec {
            kind: if self.case == BenchCase::I {
                SynthKind::Elastic
            } else {
                SynthKind::RigidElastic
            },
            scale,
            rotation_degrees,
            elastic_intensity: self.elastic_intensity,
            seed: self.seed,
            smoothing_sigma: self.smoothing_sigma,
            pad_margin: self.pad_margin,
        }
    }

    fn sweep_values(&self) -> Vec<f64> {
        if self.case == BenchCase::I {
            vec![0.0]
        } else {
            self.sweep.clone()
        }
    }

    fn label(&self, value: f64) -> String {
        match (self.case, self.case4) {
            (BenchCase::I, _) => "original".to_string(),
            (BenchCase::Ii, _) | (BenchCase::Iv, Case4Sweep::Rotations { .. }) => format!("rotation={value}"),
            (BenchCase::Iii, _) | (BenchCase::Iv, Case4Sweep::Scales { .. }) => format!("scale={value}"),
        }
    }
}

/// Outcome of both methods on one synthetic pair.
#[derive(Debug, Clone)]
pub struct PairOutcome {
    pub frame: usize,
    pub sweep_index: usize,
    pub truth: RigidLikeParams,
    pub meir: RegistrationResult,
    pub mpir: RegistrationResult,
}

impl PairOutcome {
    fn errors(res: &RegistrationResult, truth: &RigidLikeParams) -> (f64, f64) {
        let pose = extract_pose(res);
        (
            (pose.scale - truth.scale).abs(),
            angle_error_degrees(pose.rotation_degrees, truth.rotation_degrees()),
        )
    }

    /// Absolute scale and rotation (degrees) errors of MEIR.
    pub fn meir_errors(&self) -> (f64, f64) {
        Self::errors(&self.meir, &self.truth)
    }

    pub fn mpir_errors(&self) -> (f64, f64) {
        Self::errors(&self.mpir, &self.truth)
    }
}

/// Smallest absolute difference between two angles in degrees.
pub fn angle_error_degrees(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub label: String,
    pub value: f64,
    pub ndm_meir: f64,
    pub ndm_mpir: f64,
    pub scale_err_meir: f64,
    pub scale_err_mpir: f64,
    pub rot_err_meir: f64,
    pub rot_err_mpir: f64,
    pub count: usize,
    pub failures: usize,
}

#[derive(Debug, Clone)]
pub struct BenchmarkReport {
    pub rows: Vec<BenchmarkRow>,
    pub outcomes: Vec<PairOutcome>,
}

/// Synthesizes every (frame, sweep value) pair, registers it with iterated
/// MEIR and MPIR and aggregates mean NDM and absolute pose errors per sweep
/// value. Each frame carries its own deformation, seeded from the run seed
/// and the frame index. Failed pairs are counted and left out of the means.
pub fn run_benchmark(frames: &[ScalarImage], settings: &BenchSettings, cfg: &RegistrationConfig) -> Result<BenchmarkReport> {
    if frames.is_empty() {
        return Err(Error::invalid("benchmark needs at least one frame"));
    }
    let values = settings.sweep_values();
    if values.is_empty() {
        return Err(Error::invalid("benchmark sweep is empty"));
    }
    cfg.validate()?;
    let tasks: Vec<(usize, usize)> = (0..values.len())
        .flat_map(|s| (0..frames.len()).map(move |f| (s, f)))
        .collect();
    let results: Vec<Result<PairOutcome>> = tasks
        .par_iter()
        .map(|&(s, f)| {
            let spec = SynthSpec {
                seed: frame_seed(settings.seed, f as u64),
                ..settings.spec_for(values[s])
            };
            let pair = synthesize(&frames[f], &spec)?;
            let meir = run_meir_iterated(&pair.reference, &pair.template, cfg)?;
            let mpir = run_mpir(&pair.reference, &pair.template, cfg)?;
            Ok(PairOutcome {
                frame: f,
                sweep_index: s,
                truth: pair.truth,
                meir,
                mpir,
            })
        })
        .collect();

    let mut rows = Vec::with_capacity(values.len());
    let mut outcomes = Vec::new();
    let mut per_value: Vec<(Vec<PairOutcome>, usize)> = values.iter().map(|_| (Vec::new(), 0)).collect();
    for (&(s, f), res) in tasks.iter().zip(results) {
        match res {
            Ok(o) => per_value[s].0.push(o),
            Err(e) => {
                log::warn!("benchmark pair (frame {f}, sweep {}) failed: {e}", values[s]);
                per_value[s].1 += 1;
            }
        }
    }
    for (s, (group, failures)) in per_value.into_iter().enumerate() {
        let n = group.len();
        let mean = |f: &dyn Fn(&PairOutcome) -> f64| {
            if n == 0 {
                f64::NAN
            } else {
                group.iter().map(f).sum::<f64>() / n as f64
            }
        };
        rows.push(BenchmarkRow {
            label: settings.label(values[s]),
            value: values[s],
            ndm_meir: mean(&|o| o.meir.ndm),
            ndm_mpir: mean(&|o| o.mpir.ndm),
            scale_err_meir: mean(&|o| o.meir_errors().0),
            scale_err_mpir: mean(&|o| o.mpir_errors().0),
            rot_err_meir: mean(&|o| o.meir_errors().1),
            rot_err_mpir: mean(&|o| o.mpir_errors().1),
            count: n,
            failures,
        });
        outcomes.extend(group);
    }
    Ok(BenchmarkReport { rows, outcomes })
}

/// True when every accepted iterate in every trace of the report is
/// non-increasing.
pub fn all_traces_monotone(report: &BenchmarkReport) -> bool {
    report
        .outcomes
        .iter()
        .flat_map(|o| o.meir.traces().chain(o.mpir.traces()))
        .all(|t| t.is_monotone())
}
