//! Rigid-like maps `x ↦ s·R(a)·x + t`, nonparametric displacement fields
//! `φ = Id − u`, image warping and the least-squares rigid-like fit of a
//! displacement field.
//!
//! Rotation is about the coordinate origin. Angles are radians here; the
//! degree conversions live at the reporting boundary.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{Grid, Point};
use crate::image::ScalarImage;
use crate::spline::Interpolant;

/// Scale, rotation (radians) and translation of a rigid-like map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidLikeParams {
    pub scale: f64,
    pub rotation: f64,
    pub tx: f64,
    pub ty: f64,
}

impl RigidLikeParams {
    pub const IDENTITY: RigidLikeParams = RigidLikeParams {
        scale: 1.0,
        rotation: 0.0,
        tx: 0.0,
        ty: 0.0,
    };

    pub fn new(scale: f64, rotation: f64, tx: f64, ty: f64) -> Self {
        RigidLikeParams {
            scale,
            rotation,
            tx,
            ty,
        }
    }

    pub fn from_degrees(scale: f64, rotation_degrees: f64, tx: f64, ty: f64) -> Self {
        Self::new(scale, rotation_degrees.to_radians(), tx, ty)
    }

    /// The map `x ↦ c + s·R(a)·(x − c)` written in origin-centered form.
    pub fn about_center(scale: f64, rotation: f64, center: Point) -> Self {
        let (sn, cs) = rotation.sin_cos();
        let rc = [scale * (cs * center[0] - sn * center[1]), scale * (sn * center[0] + cs * center[1])];
        Self::new(scale, rotation, center[0] - rc[0], center[1] - rc[1])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.scale, self.rotation, self.tx, self.ty]
    }

    pub fn from_array(w: [f64; 4]) -> Self {
        Self::new(w[0], w[1], w[2], w[3])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn rotation_degrees(&self) -> f64 {
        self.rotation.to_degrees()
    }

    #[inline]
    pub fn apply(&self, p: Point) -> Point {
        let (sn, cs) = self.rotation.sin_cos();
        [
            self.scale * (cs * p[0] - sn * p[1]) + self.tx,
            self.scale * (sn * p[0] + cs * p[1]) + self.ty,
        ]
    }

    /// Analytic inverse; requires a nonzero scale.
    pub fn inverse(&self) -> Self {
        let s = 1.0 / self.scale;
        let a = -self.rotation;
        let (sn, cs) = a.sin_cos();
        Self::new(
            s,
            a,
            -s * (cs * self.tx - sn * self.ty),
            -s * (sn * self.tx + cs * self.ty),
        )
    }

    /// `∂φ/∂ω` at `p`: rows are the two output coordinates, columns
    /// `(scale, rotation, tx, ty)`.
    #[inline]
    pub fn jacobian(&self, p: Point) -> [[f64; 4]; 2] {
        let (sn, cs) = self.rotation.sin_cos();
        let rx = [cs * p[0] - sn * p[1], sn * p[0] + cs * p[1]];
        [
            [rx[0], -self.scale * rx[1], 1.0, 0.0],
            [rx[1], self.scale * rx[0], 0.0, 1.0],
        ]
    }
}

impl Default for RigidLikeParams {
    fn default() -> Self {
        Self::IDENTITY
    }
}

pub fn apply_rigid(w: &RigidLikeParams, pts: &[Point]) -> Vec<Point> {
    pts.iter().map(|&p| w.apply(p)).collect()
}

/// Deformation `u = (u1, u2)` sampled on a grid. The induced map is
/// `φ(x) = x − u(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    grid: Grid,
    u1: Vec<f64>,
    u2: Vec<f64>,
}

impl DisplacementField {
    pub fn new(grid: Grid, u1: Vec<f64>, u2: Vec<f64>) -> Result<Self> {
        if u1.len() != grid.len() || u2.len() != grid.len() {
            return Err(Error::contract(format!(
                "displacement components of length {}/{} on a grid of {} points",
                u1.len(),
                u2.len(),
                grid.len()
            )));
        }
        if u1.iter().chain(&u2).any(|v| !v.is_finite()) {
            return Err(Error::invalid("displacement field has non-finite entries"));
        }
        Ok(DisplacementField { grid, u1, u2 })
    }

    pub fn zeros(grid: &Grid) -> Self {
        let n = grid.len();
        DisplacementField {
            grid: grid.clone(),
            u1: vec![0.0; n],
            u2: vec![0.0; n],
        }
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(Point) -> [f64; 2]) -> Self {
        let (u1, u2) = grid.points().iter().map(|&p| {
            let v = f(p);
            (v[0], v[1])
        }).unzip();
        DisplacementField {
            grid: grid.clone(),
            u1,
            u2,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn u1(&self) -> &[f64] {
        &self.u1
    }

    pub fn u2(&self) -> &[f64] {
        &self.u2
    }

    pub fn components_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.u1, &mut self.u2)
    }

    pub fn into_components(self) -> (Vec<f64>, Vec<f64>) {
        (self.u1, self.u2)
    }

    /// `φ(x_j) = x_j − u(x_j)` at every grid point.
    pub fn mapped_points(&self) -> Vec<Point> {
        self.grid
            .points()
            .iter()
            .zip(self.u1.iter().zip(&self.u2))
            .map(|(p, (a, b))| [p[0] - a, p[1] - b])
            .collect()
    }

    /// Bilinear interpolation of `u` at an arbitrary point; beyond the
    /// outermost cell centers the border values are held constant.
    pub fn sample_bilinear(&self, p: Point) -> [f64; 2] {
        let (nx, ny) = (self.grid.nx(), self.grid.ny());
        let q = self.grid.to_index_space(p);
        let locate = |v: f64, n: usize| -> (usize, usize, f64) {
            if n == 1 {
                return (0, 0, 0.0);
            }
            let v = v.clamp(0.0, (n - 1) as f64);
            let i = (v.floor() as usize).min(n - 2);
            (i, i + 1, v - i as f64)
        };
        let (x0, x1, tx) = locate(q[0], nx);
        let (y0, y1, ty) = locate(q[1], ny);
        let at = |c: &[f64], i: usize, j: usize| c[i + nx * j];
        let lerp2 = |c: &[f64]| {
            (1.0 - ty) * ((1.0 - tx) * at(c, x0, y0) + tx * at(c, x1, y0))
                + ty * ((1.0 - tx) * at(c, x0, y1) + tx * at(c, x1, y1))
        };
        [lerp2(&self.u1), lerp2(&self.u2)]
    }

    pub fn max_magnitude(&self) -> f64 {
        self.u1
            .iter()
            .zip(&self.u2)
            .map(|(a, b)| a.hypot(*b))
            .fold(0.0, f64::max)
    }
}

/// Maps grid points through `φ = Id − u`.
pub fn apply_displacement(u: &DisplacementField, pts: &[Point]) -> Result<Vec<Point>> {
    if pts.len() != u.grid.len() {
        return Err(Error::contract(format!(
            "{} points for a displacement field on {} grid points",
            pts.len(),
            u.grid.len()
        )));
    }
    Ok(pts
        .iter()
        .zip(u.u1.iter().zip(&u.u2))
        .map(|(p, (a, b))| [p[0] - a, p[1] - b])
        .collect())
}

/// Displacement `u(x) = x − φ_ω(x)` of a rigid-like map on `grid`.
pub fn rigid_to_displacement(w: &RigidLikeParams, grid: &Grid) -> DisplacementField {
    DisplacementField::from_fn(grid, |p| {
        let q = w.apply(p);
        [p[0] - q[0], p[1] - q[1]]
    })
}

/// Resamples `itp` at the mapped points, producing an image on `grid`.
pub fn warp_image(itp: &Interpolant, phi_points: &[Point], grid: &Grid) -> Result<ScalarImage> {
    if phi_points.len() != grid.len() {
        return Err(Error::contract(format!(
            "{} warp targets for a grid of {} points",
            phi_points.len(),
            grid.len()
        )));
    }
    let samples = phi_points.iter().map(|&p| itp.eval(p)).collect();
    ScalarImage::new(grid.nx(), grid.ny(), samples, grid.domain())
}

/// Least-squares rigid-like map between corresponding point sets:
/// minimizes `Σ ‖dst_j − (s·R(a)·src_j + t)‖²`.
pub fn fit_rigid_like(src: &[Point], dst: &[Point]) -> Result<RigidLikeParams> {
    if src.len() != dst.len() {
        return Err(Error::contract("point sets differ in size"));
    }
    if src.is_empty() {
        return Err(Error::Estimation("no points".into()));
    }
    let n = src.len() as f64;
    let mean = |pts: &[Point]| {
        let s = pts.iter().fold(Complex64::new(0.0, 0.0), |acc, p| acc + Complex64::new(p[0], p[1]));
        s / n
    };
    let (xm, ym) = (mean(src), mean(dst));
    let mut cross = Complex64::new(0.0, 0.0);
    let mut spread = 0.0;
    for (p, q) in src.iter().zip(dst) {
        let xc = Complex64::new(p[0], p[1]) - xm;
        let yc = Complex64::new(q[0], q[1]) - ym;
        cross += yc * xc.conj();
        spread += xc.norm_sqr();
    }
    let extent = src
        .iter()
        .map(|p| (Complex64::new(p[0], p[1]) - xm).norm())
        .fold(0.0, f64::max);
    if spread <= f64::EPSILON * n * extent.max(1.0).powi(2) || extent == 0.0 {
        return Err(Error::Estimation("source points are degenerate".into()));
    }
    let coeff = cross / spread;
    let t = ym - coeff * xm;
    Ok(RigidLikeParams::new(coeff.norm(), coeff.arg(), t.re, t.im))
}

/// The rigid-like map closest to `φ = Id − u` over the field's grid, with
/// uniform weights.
pub fn closest_rigid_like(u: &DisplacementField) -> Result<RigidLikeParams> {
    fit_rigid_like(u.grid.points(), &u.mapped_points())
}

/// Grid-sampled displacement of `φ_first ∘ φ_second`, i.e.
/// `x ↦ φ_second(x) − u_first(φ_second(x))` with `u_first` bilinearly
/// interpolated. Both fields must share a grid.
pub fn compose(first: &DisplacementField, second: &DisplacementField) -> Result<DisplacementField> {
    if first.grid != second.grid {
        return Err(Error::contract("composed fields live on different grids"));
    }
    let targets = second.mapped_points();
    let (u1, u2) = first
        .grid
        .points()
        .iter()
        .zip(&targets)
        .map(|(x, y)| {
            let v = first.sample_bilinear(*y);
            let phi = [y[0] - v[0], y[1] - v[1]];
            (x[0] - phi[0], x[1] - phi[1])
        })
        .unzip();
    DisplacementField::new(first.grid.clone(), u1, u2)
}
