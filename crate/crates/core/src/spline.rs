//! Scale-space cubic B-spline interpolation.
//!
//! An image is represented by tensor-product cubic B-spline coefficients on
//! its own cell-centered grid, with half-sample mirrored coefficients past
//! the border. The coefficients along each axis solve the penalized fit
//!
//! ```text
//!     (BᵀB + θ DᵀD) c = Bᵀ s
//! ```
//!
//! where `B` collocates the basis at the cell centers and `D` takes second
//! differences of the coefficients. `θ = 0` is plain interpolation; larger
//! `θ` removes detail and yields the coarse representations used in the
//! coarse-to-fine schedule. Both axes are solved in turn, so the 2-D normal
//! matrix is the Kronecker product of the per-axis ones.
//!
//! Evaluation outside the image domain returns zero with zero gradient.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::{Grid, Point};
use crate::image::{Domain, ScalarImage};

/// Decreasing sequence of smoothing parameters, coarse first.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleSchedule(Vec<f64>);

impl ScaleSchedule {
    pub fn new(thetas: Vec<f64>) -> Result<Self> {
        if thetas.is_empty() {
            return Err(Error::invalid("scale schedule is empty"));
        }
        if thetas.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::invalid("scale parameters must be finite and nonnegative"));
        }
        if thetas.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::invalid(format!("scale schedule {thetas:?} is not strictly decreasing")));
        }
        Ok(ScaleSchedule(thetas))
    }

    pub fn thetas(&self) -> &[f64] {
        &self.0
    }

    pub fn coarsest(&self) -> f64 {
        self.0[0]
    }
}

impl Default for ScaleSchedule {
    fn default() -> Self {
        ScaleSchedule(vec![100.0, 10.0, 1.0, 0.0])
    }
}

/// Maps any integer index onto `0..n` by half-sample reflection.
#[inline]
fn mirror(k: isize, n: usize) -> usize {
    let n = n as isize;
    let m = k.rem_euclid(2 * n);
    (if m >= n { 2 * n - 1 - m } else { m }) as usize
}

/// Cubic B-spline weights and derivatives for the four taps `i0-1..=i0+2`
/// at fractional offset `t ∈ [0,1)` from `i0`.
#[inline]
fn taps(t: f64) -> ([f64; 4], [f64; 4]) {
    let t2 = t * t;
    let t3 = t2 * t;
    let s = 1.0 - t;
    (
        [
            s * s * s / 6.0,
            (4.0 - 6.0 * t2 + 3.0 * t3) / 6.0,
            (1.0 + 3.0 * t + 3.0 * t2 - 3.0 * t3) / 6.0,
            t3 / 6.0,
        ],
        [-0.5 * s * s, -2.0 * t + 1.5 * t2, 0.5 + t - 1.5 * t2, 0.5 * t2],
    )
}

/// Collocation matrix of the mirrored cubic basis at the `n` cell centers.
pub(crate) fn collocation_matrix(n: usize) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(n, n);
    for i in 0..n {
        for (off, w) in [(-1isize, 1.0 / 6.0), (0, 4.0 / 6.0), (1, 1.0 / 6.0)] {
            b[(i, mirror(i as isize + off, n))] += w;
        }
    }
    b
}

/// Dense `K = (BᵀB + θ DᵀD)⁻¹ Bᵀ`, mapping samples to coefficients along one axis.
fn axis_smoother(n: usize, theta: f64) -> Result<DMatrix<f64>> {
    let b = collocation_matrix(n);
    let mut normal = b.transpose() * &b;
    if theta > 0.0 && n >= 3 {
        for r in 0..n - 2 {
            let row = [(r, 1.0), (r + 1, -2.0), (r + 2, 1.0)];
            for &(i, a) in &row {
                for &(j, c) in &row {
                    normal[(i, j)] += theta * a * c;
                }
            }
        }
    }
    let chol = normal
        .cholesky()
        .ok_or_else(|| Error::Solver("spline normal system is not positive definite".into()))?;
    Ok(chol.solve(&b.transpose()))
}

/// Smoothed spline representation of an image at one scale.
#[derive(Debug, Clone)]
pub struct Interpolant {
    nx: usize,
    ny: usize,
    domain: Domain,
    cell_size: [f64; 2],
    coefficients: Vec<f64>,
    theta: f64,
}

/// Fits the scale-`theta` spline coefficients of `img`.
pub fn build_interpolant(img: &ScalarImage, theta: f64) -> Result<Interpolant> {
    if !(theta >= 0.0 && theta.is_finite()) {
        return Err(Error::invalid(format!("scale parameter {theta} must be finite and >= 0")));
    }
    let (nx, ny) = (img.width(), img.height());
    let kx = axis_smoother(nx, theta)?;
    let ky = axis_smoother(ny, theta)?;
    let s = img.samples();

    let mut rows = vec![0.0; nx * ny];
    for i2 in 0..ny {
        let src = &s[i2 * nx..(i2 + 1) * nx];
        let dst = &mut rows[i2 * nx..(i2 + 1) * nx];
        for (k, d) in dst.iter_mut().enumerate() {
            *d = (0..nx).map(|j| kx[(k, j)] * src[j]).sum();
        }
    }
    let mut coefficients = vec![0.0; nx * ny];
    let mut column = vec![0.0; ny];
    for i1 in 0..nx {
        for (i2, c) in column.iter_mut().enumerate() {
            *c = rows[i1 + nx * i2];
        }
        for k in 0..ny {
            coefficients[i1 + nx * k] = (0..ny).map(|j| ky[(k, j)] * column[j]).sum();
        }
    }
    Interpolant::from_coefficients(nx, ny, img.domain(), coefficients, theta)
}

impl Interpolant {
    /// Wraps raw coefficients laid out like the source image.
    pub fn from_coefficients(
        nx: usize,
        ny: usize,
        domain: Domain,
        coefficients: Vec<f64>,
        theta: f64,
    ) -> Result<Self> {
        if coefficients.len() != nx * ny || nx == 0 || ny == 0 {
            return Err(Error::contract("coefficient count does not match grid"));
        }
        Ok(Interpolant {
            nx,
            ny,
            domain,
            cell_size: [domain.width() / nx as f64, domain.height() / ny as f64],
            coefficients,
            theta,
        })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    #[inline]
    pub fn eval(&self, p: Point) -> f64 {
        self.eval_with_gradient(p).0
    }

    /// Value and analytic gradient `(∂1, ∂2)` in domain units.
    #[inline]
    pub fn eval_with_gradient(&self, p: Point) -> (f64, [f64; 2]) {
        if !self.domain.contains(p) {
            return (0.0, [0.0, 0.0]);
        }
        let xi = (p[0] - self.domain.x_min) / self.cell_size[0] - 0.5;
        let eta = (p[1] - self.domain.y_min) / self.cell_size[1] - 0.5;
        let (fx, fy) = (xi.floor(), eta.floor());
        let (ix, iy) = (fx as isize, fy as isize);
        let (wx, dx) = taps(xi - fx);
        let (wy, dy) = taps(eta - fy);

        let (nx, ny) = (self.nx as isize, self.ny as isize);
        let mut cols = [0usize; 4];
        let mut rows = [0usize; 4];
        if ix >= 1 && ix + 2 < nx {
            for a in 0..4 {
                cols[a] = (ix + a as isize - 1) as usize;
            }
        } else {
            for a in 0..4 {
                cols[a] = mirror(ix + a as isize - 1, self.nx);
            }
        }
        if iy >= 1 && iy + 2 < ny {
            for b in 0..4 {
                rows[b] = (iy + b as isize - 1) as usize * self.nx;
            }
        } else {
            for b in 0..4 {
                rows[b] = mirror(iy + b as isize - 1, self.ny) * self.nx;
            }
        }

        let (mut v, mut gx, mut gy) = (0.0, 0.0, 0.0);
        for b in 0..4 {
            let base = rows[b];
            let (mut sv, mut sd) = (0.0, 0.0);
            for a in 0..4 {
                let c = self.coefficients[base + cols[a]];
                sv += wx[a] * c;
                sd += dx[a] * c;
            }
            v += wy[b] * sv;
            gy += dy[b] * sv;
            gx += wy[b] * sd;
        }
        (v, [gx / self.cell_size[0], gy / self.cell_size[1]])
    }

    /// Samples the interpolant at the centers of `grid`.
    pub fn sample(&self, grid: &Grid) -> ScalarImage {
        let samples = grid.points().iter().map(|&p| self.eval(p)).collect();
        ScalarImage::new(grid.nx(), grid.ny(), samples, grid.domain())
            .expect("spline evaluation is finite")
    }
}

/// Evaluates values and gradients at arbitrary points.
pub fn interp_eval(itp: &Interpolant, pts: &[Point]) -> (Vec<f64>, Vec<[f64; 2]>) {
    pts.iter().map(|&p| itp.eval_with_gradient(p)).unzip()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn textured(n: usize) -> ScalarImage {
        ScalarImage::from_fn(n, n, |x, y| {
            0.5 + 0.3 * (9.0 * x + 2.0 * y).sin() * (5.0 * y).cos() + 0.1 * (23.0 * x * y).sin()
        })
    }

    #[test]
    fn mirror_reflects() {
        assert_eq!(mirror(-1, 5), 0);
        assert_eq!(mirror(-2, 5), 1);
        assert_eq!(mirror(5, 5), 4);
        assert_eq!(mirror(6, 5), 3);
        assert_eq!(mirror(-2, 1), 0);
        assert_eq!(mirror(3, 1), 0);
    }

    #[test]
    fn taps_partition_unity() {
        for t in [0.0, 0.2, 0.5, 0.999] {
            let (w, d) = taps(t);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
            assert!(d.iter().sum::<f64>().abs() < 1e-15);
        }
    }

    #[test]
    fn constants_are_reproduced_at_every_scale() {
        let img = ScalarImage::constant(12, 9, 0.37);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for theta in [0.0, 1.0, 10.0, 100.0] {
            let itp = build_interpolant(&img, theta).unwrap();
            for _ in 0..200 {
                let p = [rng.random::<f64>(), rng.random::<f64>()];
                let (v, g) = itp.eval_with_gradient(p);
                assert!((v - 0.37).abs() < 1e-12, "theta {theta}: {v}");
                assert!(g[0].abs() < 1e-9 && g[1].abs() < 1e-9);
            }
        }
    }

    #[test]
    fn interpolates_at_theta_zero() {
        let img = textured(32);
        let itp = build_interpolant(&img, 0.0).unwrap();
        let back = itp.sample(&img.grid());
        assert!(back.max_abs_diff(&img) < 1e-8);
    }

    #[test]
    fn outside_domain_is_zero() {
        let itp = build_interpolant(&textured(16), 1.0).unwrap();
        assert_eq!(itp.eval_with_gradient([-1.0, -1.0]), (0.0, [0.0, 0.0]));
        assert_eq!(itp.eval_with_gradient([0.5, 1.0 + 1e-9]), (0.0, [0.0, 0.0]));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let img = ScalarImage::from_samples(24, (0..24 * 24).map(|_| rng.random::<f64>()).collect()).unwrap();
        let itp = build_interpolant(&img, 1.0).unwrap();
        let h = 1e-5;
        for _ in 0..100 {
            let p = [rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)];
            let (_, g) = itp.eval_with_gradient(p);
            let fd = [
                (itp.eval([p[0] + h, p[1]]) - itp.eval([p[0] - h, p[1]])) / (2.0 * h),
                (itp.eval([p[0], p[1] + h]) - itp.eval([p[0], p[1] - h])) / (2.0 * h),
            ];
            for k in 0..2 {
                let scale = g[k].abs().max(fd[k].abs()).max(1e-3);
                assert!((g[k] - fd[k]).abs() / scale <= 1e-4, "{:?} vs {:?}", g, fd);
            }
        }
    }

    #[test]
    fn schedule_validation() {
        assert!(ScaleSchedule::new(vec![100.0, 10.0, 1.0, 0.0]).is_ok());
        assert!(ScaleSchedule::new(vec![10.0, 10.0]).is_err());
        assert!(ScaleSchedule::new(vec![1.0, -1.0]).is_err());
        assert!(ScaleSchedule::new(vec![]).is_err());
        assert_eq!(ScaleSchedule::default().thetas(), &[100.0, 10.0, 1.0, 0.0]);
    }

    #[test]
    fn negative_theta_rejected() {
        assert!(build_interpolant(&textured(8), -1.0).is_err());
    }
}
