//! Distance, regularization and dissimilarity measures.
//!
//! Integrals over the domain use midpoint quadrature on the cell-centered
//! grid. The elastic energy differences each displacement component with
//! forward differences; the last row/column repeats the previous difference
//! (a zero-Neumann closure), so linear fields are differenced exactly and
//! constant fields lie in the operator's null space.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::image::ScalarImage;
use crate::transforms::DisplacementField;

/// Weight and Lamé constants of the linear-elastic regularizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElasticConfig {
    pub alpha: f64,
    pub lambda: f64,
    pub mu: f64,
}

impl Default for ElasticConfig {
    fn default() -> Self {
        ElasticConfig {
            alpha: 10.0,
            lambda: 0.0,
            mu: 1.0,
        }
    }
}

impl ElasticConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.lambda.is_finite() && self.mu.is_finite()) {
            return Err(Error::invalid("elastic parameters must be finite"));
        }
        if self.alpha < 0.0 {
            return Err(Error::invalid("alpha must be nonnegative"));
        }
        if self.mu < 0.0 || self.lambda + self.mu < 0.0 {
            return Err(Error::invalid("elastic energy needs mu >= 0 and lambda + mu >= 0"));
        }
        if self.alpha > 0.0 && self.mu <= 0.0 {
            return Err(Error::invalid("mu must be positive when alpha > 0"));
        }
        Ok(())
    }
}

/// `½ · cell_area · Σ (t − r)²`.
pub fn ssd(r_vals: &[f64], t_vals: &[f64], cell_area: f64) -> Result<f64> {
    if r_vals.len() != t_vals.len() {
        return Err(Error::contract(format!(
            "ssd of arrays with lengths {} and {}",
            r_vals.len(),
            t_vals.len()
        )));
    }
    let s: f64 = r_vals.iter().zip(t_vals).map(|(r, t)| (t - r) * (t - r)).sum();
    Ok(0.5 * cell_area * s)
}

/// Normalized dissimilarity `‖T(φ) − R‖ / ‖R‖` over the whole grid.
pub fn ndm(r_img: &ScalarImage, t_warped: &ScalarImage) -> Result<f64> {
    if r_img.width() != t_warped.width() || r_img.height() != t_warped.height() {
        return Err(Error::contract("ndm of images on different grids"));
    }
    let norm_r: f64 = r_img.samples().iter().map(|v| v * v).sum();
    if norm_r == 0.0 {
        return Err(Error::UndefinedMeasure);
    }
    let diff: f64 = r_img
        .samples()
        .iter()
        .zip(t_warped.samples())
        .map(|(r, t)| (t - r) * (t - r))
        .sum();
    // the cell area cancels in the ratio
    Ok((diff / norm_r).sqrt())
}

/// Matrix-free linear-elastic operator on a grid.
#[derive(Debug, Clone)]
pub struct ElasticOperator {
    nx: usize,
    ny: usize,
    h: [f64; 2],
    weight: f64,
    lambda: f64,
    mu: f64,
}

impl ElasticOperator {
    pub fn new(grid: &Grid, cfg: &ElasticConfig) -> Self {
        ElasticOperator {
            nx: grid.nx(),
            ny: grid.ny(),
            h: grid.cell_size(),
            weight: grid.cell_area(),
            lambda: cfg.lambda,
            mu: cfg.mu,
        }
    }

    fn len(&self) -> usize {
        self.nx * self.ny
    }

    /// Forward difference along an axis with `count` entries spaced `stride`
    /// apart in `lines` independent lines.
    #[allow(clippy::too_many_arguments)]
    fn diff_into(v: &[f64], out: &mut [f64], count: usize, stride: usize, lines: usize, line_step: usize, h: f64) {
        for l in 0..lines {
            let base = l * line_step;
            if count == 1 {
                out[base] = 0.0;
                continue;
            }
            for i in 0..count - 1 {
                out[base + i * stride] = (v[base + (i + 1) * stride] - v[base + i * stride]) / h;
            }
            out[base + (count - 1) * stride] = out[base + (count - 2) * stride];
        }
    }

    /// Adjoint of [`Self::diff_into`], accumulated into `out`.
    #[allow(clippy::too_many_arguments)]
    fn diff_adjoint_add(g: &[f64], out: &mut [f64], count: usize, stride: usize, lines: usize, line_step: usize, h: f64, scale: f64) {
        if count == 1 {
            return;
        }
        let c = scale / h;
        for l in 0..lines {
            let base = l * line_step;
            for i in 0..count - 1 {
                let gi = g[base + i * stride] * c;
                out[base + i * stride] -= gi;
                out[base + (i + 1) * stride] += gi;
            }
            let gl = g[base + (count - 1) * stride] * c;
            out[base + (count - 2) * stride] -= gl;
            out[base + (count - 1) * stride] += gl;
        }
    }

    fn dx(&self, v: &[f64], out: &mut [f64]) {
        Self::diff_into(v, out, self.nx, 1, self.ny, self.nx, self.h[0]);
    }

    fn dy(&self, v: &[f64], out: &mut [f64]) {
        Self::diff_into(v, out, self.ny, self.nx, self.nx, 1, self.h[1]);
    }

    fn dxt_add(&self, g: &[f64], out: &mut [f64], scale: f64) {
        Self::diff_adjoint_add(g, out, self.nx, 1, self.ny, self.nx, self.h[0], scale);
    }

    fn dyt_add(&self, g: &[f64], out: &mut [f64], scale: f64) {
        Self::diff_adjoint_add(g, out, self.ny, self.nx, self.nx, 1, self.h[1], scale);
    }

    /// Elastic energy of `(u1, u2)`.
    pub fn energy(&self, u1: &[f64], u2: &[f64]) -> f64 {
        let n = self.len();
        let mut d11 = vec![0.0; n];
        let mut d21 = vec![0.0; n];
        let mut d12 = vec![0.0; n];
        let mut d22 = vec![0.0; n];
        self.dx(u1, &mut d11);
        self.dy(u1, &mut d21);
        self.dx(u2, &mut d12);
        self.dy(u2, &mut d22);
        let lm = self.lambda + self.mu;
        let mut total = 0.0;
        for j in 0..n {
            let div = d11[j] + d22[j];
            total += 0.5 * lm * div * div
                + 0.5 * self.mu * (d11[j] * d11[j] + d21[j] * d21[j] + d12[j] * d12[j] + d22[j] * d22[j]);
        }
        self.weight * total
    }

    /// `A u`, with `energy(u) = ½ ⟨u, A u⟩`, written into `out1`, `out2`.
    pub fn apply_into(&self, u1: &[f64], u2: &[f64], out1: &mut [f64], out2: &mut [f64]) {
        let n = self.len();
        let mut d11 = vec![0.0; n];
        let mut d21 = vec![0.0; n];
        let mut d12 = vec![0.0; n];
        let mut d22 = vec![0.0; n];
        self.dx(u1, &mut d11);
        self.dy(u1, &mut d21);
        self.dx(u2, &mut d12);
        self.dy(u2, &mut d22);
        let lm = self.lambda + self.mu;
        let w = self.weight;
        out1.fill(0.0);
        out2.fill(0.0);
        let div: Vec<f64> = d11.iter().zip(&d22).map(|(a, b)| a + b).collect();
        self.dxt_add(&div, out1, w * lm);
        self.dyt_add(&div, out2, w * lm);
        self.dxt_add(&d11, out1, w * self.mu);
        self.dyt_add(&d21, out1, w * self.mu);
        self.dxt_add(&d12, out2, w * self.mu);
        self.dyt_add(&d22, out2, w * self.mu);
    }

    /// Diagonal of `A`, per component.
    pub fn diagonal(&self) -> (Vec<f64>, Vec<f64>) {
        // column sums of squares of one forward-difference matrix
        let axis = |count: usize, h: f64| -> Vec<f64> {
            let mut d = vec![0.0; count];
            if count > 1 {
                for i in 0..count - 1 {
                    d[i] += 1.0;
                    d[i + 1] += 1.0;
                }
                d[count - 2] += 1.0;
                d[count - 1] += 1.0;
            }
            d.iter().map(|v| v / (h * h)).collect()
        };
        let (ax, ay) = (axis(self.nx, self.h[0]), axis(self.ny, self.h[1]));
        let lm = self.lambda + self.mu;
        let n = self.len();
        let (mut a, mut b) = (vec![0.0; n], vec![0.0; n]);
        for i2 in 0..self.ny {
            for i1 in 0..self.nx {
                let j = i1 + self.nx * i2;
                a[j] = self.weight * ((lm + self.mu) * ax[i1] + self.mu * ay[i2]);
                b[j] = self.weight * (self.mu * ax[i1] + (lm + self.mu) * ay[i2]);
            }
        }
        (a, b)
    }

    pub fn apply(&self, u1: &[f64], u2: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.len();
        let (mut a, mut b) = (vec![0.0; n], vec![0.0; n]);
        self.apply_into(u1, u2, &mut a, &mut b);
        (a, b)
    }
}

/// Elastic regularization energy of `u` (without the weight `alpha`).
pub fn elastic_energy(u: &DisplacementField, cfg: &ElasticConfig) -> f64 {
    ElasticOperator::new(u.grid(), cfg).energy(u.u1(), u.u2())
}

/// The operator `A` of the quadratic form `elastic_energy(u) = ½ ⟨u, A u⟩`.
pub fn elastic_operator_apply(u: &DisplacementField, cfg: &ElasticConfig) -> DisplacementField {
    let (a, b) = ElasticOperator::new(u.grid(), cfg).apply(u.u1(), u.u2());
    DisplacementField::new(u.grid().clone(), a, b).expect("operator output matches grid")
}
