//! Gauss-Newton minimization with Armijo backtracking.
//!
//! [`solve_parametric`] fits the four rigid-like parameters; [`solve_elastic`]
//! fits a nonparametric displacement field under the elastic regularizer,
//! solving its normal equations matrix-free by conjugate gradients.

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::objective::{ElasticConfig, ElasticOperator};
use crate::spline::Interpolant;
use crate::transforms::{DisplacementField, RigidLikeParams};

/// Gray levels per unit intensity.
pub const DATA_SCALE: f64 = 255.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Relative to `1 + |J₀|`.
    pub grad_tolerance: f64,
    /// Max-norm of the accepted update.
    pub step_tolerance: f64,
    /// Relative to `1 + |J₀|`.
    pub objective_tolerance: f64,
    pub armijo_beta: f64,
    pub armijo_c1: f64,
    pub armijo_max_backtracks: usize,
    pub cg_max_iterations: usize,
    pub cg_tolerance: f64,
    /// Residuals are multiplied by this before squaring, so the data term is
    /// measured in 8-bit gray levels while images stay in [0, 1].
    pub data_scale: f64,
}

impl SolverConfig {
    pub fn parametric() -> Self {
        SolverConfig {
            max_iterations: 50,
            grad_tolerance: 1e-6,
            step_tolerance: 1e-6,
            objective_tolerance: 1e-6,
            armijo_beta: 0.5,
            armijo_c1: 1e-4,
            armijo_max_backtracks: 10,
            cg_max_iterations: 50,
            cg_tolerance: 1e-2,
            data_scale: DATA_SCALE,
        }
    }

    pub fn elastic() -> Self {
        SolverConfig {
            max_iterations: 30,
            cg_max_iterations: 20,
            cg_tolerance: 1e-1,
            ..Self::parametric()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.grad_tolerance,
            self.step_tolerance,
            self.objective_tolerance,
            self.armijo_c1,
            self.cg_tolerance,
            self.data_scale,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("solver tolerances must be positive"));
        }
        if !(self.armijo_beta > 0.0 && self.armijo_beta < 1.0) {
            return Err(Error::invalid("armijo beta must lie in (0,1)"));
        }
        if self.armijo_c1 >= 0.5 {
            return Err(Error::invalid("armijo c1 must be below 0.5"));
        }
        if self.max_iterations == 0 || self.armijo_max_backtracks == 0 || self.cg_max_iterations == 0 {
            return Err(Error::invalid("iteration caps must be positive"));
        }
        Ok(())
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self::parametric()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Gradient,
    Step,
    ObjectiveChange,
    MaxIterations,
    LineSearchFailure,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::Gradient => "gradient",
            StopReason::Step => "step",
            StopReason::ObjectiveChange => "objective-change",
            StopReason::MaxIterations => "max-iterations",
            StopReason::LineSearchFailure => "line-search-failure",
        }
    }
}

/// One accepted iterate: index, objective, gradient norm at the iterate and
/// the step length that produced it (0 for the starting point).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterateRecord {
    pub iteration: usize,
    pub objective: f64,
    pub grad_norm: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverTrace {
    pub iterates: Vec<IterateRecord>,
    pub converged: bool,
    pub stop_reason: StopReason,
    pub notes: Vec<String>,
}

impl SolverTrace {
    pub fn initial_objective(&self) -> f64 {
        self.iterates.first().map_or(f64::NAN, |r| r.objective)
    }

    pub fn final_objective(&self) -> f64 {
        self.iterates.last().map_or(f64::NAN, |r| r.objective)
    }

    /// Accepted objective values never increase.
    pub fn is_monotone(&self) -> bool {
        self.iterates.windows(2).all(|w| w[1].objective <= w[0].objective)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearch {
    pub step: f64,
    pub accepted: bool,
    /// Objective at the returned step.
    pub value: f64,
}

/// Backtracking over `1, β, β², …, β^max_backtracks` until the sufficient
/// decrease condition `f(s) ≤ f(0) + c1·s·f'(0)` holds.
pub fn armijo_search(
    mut objective: impl FnMut(f64) -> f64,
    base_value: f64,
    directional_derivative: f64,
    cfg: &SolverConfig,
) -> Result<LineSearch> {
    if !(directional_derivative < 0.0) {
        return Err(Error::contract(format!(
            "line search along a non-descent direction (slope {directional_derivative})"
        )));
    }
    let mut step = 1.0;
    let mut last = f64::NAN;
    for _ in 0..=cfg.armijo_max_backtracks {
        let value = objective(step);
        if value.is_finite() && value <= base_value + cfg.armijo_c1 * step * directional_derivative {
            return Ok(LineSearch {
                step,
                accepted: true,
                value,
            });
        }
        last = value;
        step *= cfg.armijo_beta;
    }
    Ok(LineSearch {
        step: step / cfg.armijo_beta,
        accepted: false,
        value: last,
    })
}

/// Result of a conjugate-gradient solve started from zero.
#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub breakdown: bool,
    pub residual_norms: Vec<f64>,
    /// Quadratic model `½xᵀHx − bᵀx` after each iteration.
    pub model_values: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Matrix-free conjugate gradients for `H x = b` with symmetric `H`,
/// optionally preconditioned by a symmetric positive definite `z = M⁻¹ r`.
/// Stops when `‖r‖ ≤ tol·‖b‖`; reports breakdown on nonpositive curvature.
pub fn conjugate_gradient(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    rhs: &[f64],
    preconditioner: Option<&dyn Fn(&[f64], &mut [f64])>,
    tol: f64,
    max_iterations: usize,
) -> CgOutcome {
    let n = rhs.len();
    let precondition = |r: &[f64], z: &mut [f64]| match preconditioner {
        Some(m) => m(r, z),
        None => z.copy_from_slice(r),
    };
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut z = vec![0.0; n];
    precondition(&r, &mut z);
    let mut p = z.clone();
    let mut hp = vec![0.0; n];
    let b_norm = dot(rhs, rhs).sqrt();
    let mut rz = dot(&r, &z);
    let mut out = CgOutcome {
        solution: Vec::new(),
        iterations: 0,
        converged: b_norm == 0.0,
        breakdown: false,
        residual_norms: vec![b_norm],
        model_values: vec![0.0],
    };
    if out.converged {
        out.solution = x;
        return out;
    }
    for k in 0..max_iterations {
        apply(&p, &mut hp);
        let curvature = dot(&p, &hp);
        if !(curvature > 0.0) || !curvature.is_finite() {
            out.breakdown = true;
            break;
        }
        let step = rz / curvature;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * hp[i];
        }
        let r_norm = dot(&r, &r).sqrt();
        out.iterations = k + 1;
        out.residual_norms.push(r_norm);
        out.model_values
            .push(-0.5 * x.iter().zip(rhs.iter().zip(&r)).map(|(xi, (bi, ri))| xi * (bi + ri)).sum::<f64>());
        if r_norm <= tol * b_norm {
            out.converged = true;
            break;
        }
        precondition(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        rz = rz_new;
    }
    out.solution = x;
    out
}

fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Reference values sampled at the grid points.
fn reference_values(r_itp: &Interpolant, grid: &Grid) -> Vec<f64> {
    grid.points().iter().map(|&p| r_itp.eval(p)).collect()
}

struct ParametricProblem<'a> {
    t_itp: &'a Interpolant,
    grid: &'a Grid,
    reference: Vec<f64>,
    weight: f64,
}

impl ParametricProblem<'_> {
    fn objective(&self, w: &RigidLikeParams) -> f64 {
        let s: f64 = self
            .grid
            .points()
            .iter()
            .zip(&self.reference)
            .map(|(&x, r)| {
                let d = self.t_itp.eval(w.apply(x)) - r;
                d * d
            })
            .sum();
        0.5 * self.weight * s
    }

    /// Objective, gradient and Gauss-Newton matrix.
    fn linearize(&self, w: &RigidLikeParams) -> (f64, Vector4<f64>, Matrix4<f64>) {
        let mut f = 0.0;
        let mut g = Vector4::zeros();
        let mut h = Matrix4::zeros();
        for (&x, r) in self.grid.points().iter().zip(&self.reference) {
            let (v, grad) = self.t_itp.eval_with_gradient(w.apply(x));
            let res = v - r;
            f += res * res;
            if grad == [0.0, 0.0] {
                continue;
            }
            let jac = w.jacobian(x);
            let row = Vector4::from_fn(|k, _| grad[0] * jac[0][k] + grad[1] * jac[1][k]);
            g += row * res;
            h += row * row.transpose();
        }
        (0.5 * self.weight * f, g * self.weight, h * self.weight)
    }
}

/// Gauss-Newton fit of the rigid-like map minimizing `½‖T(φ_ω) − R‖²`.
pub fn solve_parametric(
    r_itp: &Interpolant,
    t_itp: &Interpolant,
    grid: &Grid,
    w0: RigidLikeParams,
    cfg: &SolverConfig,
) -> Result<(RigidLikeParams, SolverTrace)> {
    cfg.validate()?;
    if r_itp.domain() != t_itp.domain() {
        return Err(Error::contract("reference and template live on different domains"));
    }
    let problem = ParametricProblem {
        t_itp,
        grid,
        reference: reference_values(r_itp, grid),
        weight: grid.cell_area() * cfg.data_scale * cfg.data_scale,
    };

    let mut w = w0;
    let (mut f, mut g, mut h) = problem.linearize(&w);
    let scale_ref = 1.0 + f.abs();
    let mut trace = SolverTrace {
        iterates: vec![IterateRecord {
            iteration: 0,
            objective: f,
            grad_norm: g.norm(),
            step: 0.0,
        }],
        converged: false,
        stop_reason: StopReason::MaxIterations,
        notes: Vec::new(),
    };

    for k in 1..=cfg.max_iterations {
        if g.norm() <= cfg.grad_tolerance * scale_ref {
            trace.converged = true;
            trace.stop_reason = StopReason::Gradient;
            break;
        }
        let mut dir = match h.cholesky() {
            Some(c) => c.solve(&(-g)),
            None => {
                let shift = 1e-10 * (h.trace().abs() / 4.0).max(1.0);
                trace.notes.push(format!("iteration {k}: singular normal matrix, shifted by {shift:e}"));
                (h + Matrix4::identity() * shift)
                    .lu()
                    .solve(&(-g))
                    .unwrap_or(-g)
            }
        };
        let mut slope = g.dot(&dir);
        if !(slope < 0.0) || !dir.iter().all(|v| v.is_finite()) {
            trace.notes.push(format!("iteration {k}: Gauss-Newton direction not descending, using -gradient"));
            dir = -g;
            slope = g.dot(&dir);
        }
        let base = RigidLikeParams::from_array(w.to_array());
        let along = |s: f64| {
            let mut a = base.to_array();
            for (ai, di) in a.iter_mut().zip(dir.iter()) {
                *ai += s * di;
            }
            RigidLikeParams::from_array(a)
        };
        let ls = armijo_search(|s| problem.objective(&along(s)), f, slope, cfg)?;
        if !ls.accepted {
            trace.stop_reason = StopReason::LineSearchFailure;
            break;
        }
        w = along(ls.step);
        let f_prev = f;
        (f, g, h) = problem.linearize(&w);
        trace.iterates.push(IterateRecord {
            iteration: k,
            objective: f,
            grad_norm: g.norm(),
            step: ls.step,
        });
        if max_abs(dir.iter().map(|d| d * ls.step)) <= cfg.step_tolerance {
            trace.converged = true;
            trace.stop_reason = StopReason::Step;
            break;
        }
        if (f_prev - f).abs() <= cfg.objective_tolerance * scale_ref {
            trace.converged = true;
            trace.stop_reason = StopReason::ObjectiveChange;
            break;
        }
    }
    Ok((w, trace))
}

/// Data term, gradient pieces and image gradients at the current field.
struct ElasticState {
    objective: f64,
    /// Full gradient, components stacked `[u1; u2]`.
    gradient: Vec<f64>,
    /// Template gradient at `x − u(x)` per grid point.
    image_grad: Vec<[f64; 2]>,
}

struct Preconditioner {
    inv_diag: Vec<f64>,
    basis: Vec<Vec<f64>>,
    coarse: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
}

impl Preconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        for ((zi, ri), di) in z.iter_mut().zip(r).zip(&self.inv_diag) {
            *zi = ri * di;
        }
        if let Some(c) = &self.coarse {
            let proj = DVector::from_iterator(self.basis.len(), self.basis.iter().map(|q| dot(q, r)));
            let y = c.solve(&proj);
            for (q, yk) in self.basis.iter().zip(y.iter()) {
                z.iter_mut().zip(q).for_each(|(a, b)| *a += yk * b);
            }
        }
    }
}

/// What the elastic energy is measured against.
#[derive(Debug, Clone, Copy)]
pub enum Regularization<'a> {
    /// `S(u)`.
    Plain,
    /// `S(u − anchor)`.
    Anchored(&'a DisplacementField),
    /// `S(u − Pu)` with `P` the least-squares projection onto rigid-like
    /// displacement fields, so rigid-like motion is not penalized.
    RigidFree,
}

/// Orthonormal basis of the displacement fields of rigid-like maps on a
/// grid: translations, dilation and infinitesimal rotation about the
/// centroid.
struct RigidBasis(Vec<Vec<f64>>);

impl RigidBasis {
    fn new(grid: &Grid) -> Self {
        let n = grid.len();
        let pts = grid.points();
        let c = pts.iter().fold([0.0, 0.0], |a, p| [a[0] + p[0], a[1] + p[1]]);
        let c = [c[0] / n as f64, c[1] / n as f64];
        let field = |f: &dyn Fn([f64; 2]) -> [f64; 2]| -> Vec<f64> {
            let (mut a, mut b) = (Vec::with_capacity(n), Vec::with_capacity(n));
            for p in pts {
                let v = f([p[0] - c[0], p[1] - c[1]]);
                a.push(v[0]);
                b.push(v[1]);
            }
            [a, b].concat()
        };
        let raw = [
            field(&|_| [1.0, 0.0]),
            field(&|_| [0.0, 1.0]),
            field(&|q| q),
            field(&|q| [-q[1], q[0]]),
        ];
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(4);
        for mut v in raw {
            for q in &basis {
                let d = dot(q, &v);
                v.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
            }
            let norm = dot(&v, &v).sqrt();
            if norm > 1e-12 {
                v.iter_mut().for_each(|a| *a /= norm);
                basis.push(v);
            }
        }
        RigidBasis(basis)
    }

    /// `v ← v − Pv`.
    fn project_out(&self, v: &mut [f64]) {
        for q in &self.0 {
            let d = dot(q, v);
            v.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
        }
    }
}

enum Base {
    Zero,
    Anchor(Vec<f64>),
    RigidFree(RigidBasis),
}

struct ElasticProblem<'a> {
    t_itp: &'a Interpolant,
    grid: &'a Grid,
    reference: Vec<f64>,
    weight: f64,
    alpha: f64,
    op: ElasticOperator,
    base: Base,
}

impl<'a> ElasticProblem<'a> {
    fn new(
        r_itp: &Interpolant,
        t_itp: &'a Interpolant,
        grid: &'a Grid,
        reg: Regularization<'_>,
        ecfg: &ElasticConfig,
        data_scale: f64,
    ) -> Self {
        ElasticProblem {
            t_itp,
            grid,
            reference: reference_values(r_itp, grid),
            weight: grid.cell_area() * data_scale * data_scale,
            alpha: ecfg.alpha,
            op: ElasticOperator::new(grid, ecfg),
            base: match reg {
                Regularization::Plain => Base::Zero,
                Regularization::Anchored(a) => Base::Anchor(stack(a)),
                Regularization::RigidFree => Base::RigidFree(RigidBasis::new(grid)),
            },
        }
    }

    /// The part of `u` the energy sees.
    fn relative<'b>(&self, u: &'b [f64]) -> std::borrow::Cow<'b, [f64]> {
        match &self.base {
            Base::Zero => u.into(),
            Base::Anchor(a) => u.iter().zip(a).map(|(x, y)| x - y).collect::<Vec<_>>().into(),
            Base::RigidFree(b) => {
                let mut v = u.to_vec();
                b.project_out(&mut v);
                v.into()
            }
        }
    }

    fn regularizer(&self, u: &[f64]) -> f64 {
        let v = self.relative(u);
        let (v1, v2) = v.split_at(self.grid.len());
        self.alpha * self.op.energy(v1, v2)
    }

    /// Regularizer Hessian applied to `v`, written into `out`.
    fn reg_apply(&self, v: &[f64], out: &mut [f64], scratch: &mut (Vec<f64>, Vec<f64>)) {
        let n = self.grid.len();
        let projected;
        let v = match &self.base {
            Base::RigidFree(b) => {
                let mut w = v.to_vec();
                b.project_out(&mut w);
                projected = w;
                &projected[..]
            }
            _ => v,
        };
        let (v1, v2) = v.split_at(n);
        self.op.apply_into(v1, v2, &mut scratch.0, &mut scratch.1);
        out[..n].copy_from_slice(&scratch.0);
        out[n..].copy_from_slice(&scratch.1);
        if let Base::RigidFree(b) = &self.base {
            b.project_out(out);
        }
    }

    fn objective(&self, u: &[f64]) -> f64 {
        let n = self.grid.len();
        let (u1, u2) = u.split_at(n);
        let data: f64 = self
            .grid
            .points()
            .iter()
            .enumerate()
            .map(|(j, x)| {
                let d = self.t_itp.eval([x[0] - u1[j], x[1] - u2[j]]) - self.reference[j];
                d * d
            })
            .sum();
        0.5 * self.weight * data + self.regularizer(u)
    }

    fn linearize(&self, u: &[f64]) -> ElasticState {
        let n = self.grid.len();
        let (u1, u2) = u.split_at(n);
        let mut data = 0.0;
        let mut gradient = vec![0.0; 2 * n];
        let mut image_grad = Vec::with_capacity(n);
        for (j, x) in self.grid.points().iter().enumerate() {
            let (v, g) = self.t_itp.eval_with_gradient([x[0] - u1[j], x[1] - u2[j]]);
            let res = v - self.reference[j];
            data += res * res;
            // d/du of T(x - u) is -∇T
            gradient[j] = -self.weight * res * g[0];
            gradient[n + j] = -self.weight * res * g[1];
            image_grad.push(g);
        }
        let v = self.relative(u);
        let mut reg_grad = vec![0.0; 2 * n];
        let mut scratch = (vec![0.0; n], vec![0.0; n]);
        self.reg_apply(&v, &mut reg_grad, &mut scratch);
        for (g, r) in gradient.iter_mut().zip(&reg_grad) {
            *g += self.alpha * r;
        }
        let (v1, v2) = v.split_at(n);
        ElasticState {
            objective: 0.5 * self.weight * data + self.alpha * self.op.energy(v1, v2),
            gradient,
            image_grad,
        }
    }

    /// Jacobi smoothing plus an exact solve on the rigid-like fields, whose
    /// modes plain CG resolves slowly where the images carry no data.
    fn preconditioner(
        &self,
        image_grad: &[[f64; 2]],
        reg_diag: &[f64],
        scratch: &mut (Vec<f64>, Vec<f64>),
    ) -> Preconditioner {
        let n = self.grid.len();
        let inv_diag = (0..2 * n)
            .map(|i| {
                let g = image_grad[i % n][i / n];
                1.0 / (self.weight * g * g + self.alpha * reg_diag[i])
            })
            .collect();
        let basis = match &self.base {
            Base::RigidFree(b) => b.0.clone(),
            _ => RigidBasis::new(self.grid).0,
        };
        let m = basis.len();
        let mut coarse = DMatrix::zeros(m, m);
        let mut hz = vec![0.0; 2 * n];
        for (j, z) in basis.iter().enumerate() {
            self.normal_apply(image_grad, z, &mut hz, scratch);
            for (i, q) in basis.iter().enumerate() {
                coarse[(i, j)] = dot(q, &hz);
            }
        }
        let coarse = (0.5 * (&coarse + coarse.transpose())).cholesky();
        Preconditioner {
            inv_diag,
            basis,
            coarse,
        }
    }

    /// `(w·diag(∇T ∇Tᵀ) + α H_S) v`.
    fn normal_apply(&self, image_grad: &[[f64; 2]], v: &[f64], out: &mut [f64], scratch: &mut (Vec<f64>, Vec<f64>)) {
        let n = self.grid.len();
        self.reg_apply(v, out, scratch);
        let (v1, v2) = v.split_at(n);
        let (o1, o2) = out.split_at_mut(n);
        for j in 0..n {
            let g = image_grad[j];
            let gv = g[0] * v1[j] + g[1] * v2[j];
            o1[j] = self.weight * g[0] * gv + self.alpha * o1[j];
            o2[j] = self.weight * g[1] * gv + self.alpha * o2[j];
        }
    }
}

/// Gauss-Newton minimization of `½‖T(x − u) − R‖² + α S(u)` from `u0`.
pub fn solve_elastic(
    r_itp: &Interpolant,
    t_itp: &Interpolant,
    grid: &Grid,
    u0: &DisplacementField,
    ecfg: &ElasticConfig,
    cfg: &SolverConfig,
) -> Result<(DisplacementField, SolverTrace)> {
    solve_elastic_with(r_itp, t_itp, grid, u0, Regularization::Plain, ecfg, cfg)
}

/// As [`solve_elastic`] with the energy measured per `reg`.
pub fn solve_elastic_with(
    r_itp: &Interpolant,
    t_itp: &Interpolant,
    grid: &Grid,
    u0: &DisplacementField,
    reg: Regularization<'_>,
    ecfg: &ElasticConfig,
    cfg: &SolverConfig,
) -> Result<(DisplacementField, SolverTrace)> {
    cfg.validate()?;
    if matches!(reg, Regularization::Anchored(a) if a.grid() != grid) {
        return Err(Error::contract("anchor field is not on the registration grid"));
    }
    ecfg.validate()?;
    if !(ecfg.alpha > 0.0) {
        return Err(Error::invalid("elastic registration needs alpha > 0"));
    }
    if u0.grid() != grid {
        return Err(Error::contract("initial field is not on the registration grid"));
    }
    if r_itp.domain() != t_itp.domain() {
        return Err(Error::contract("reference and template live on different domains"));
    }
    let n = grid.len();
    let problem = ElasticProblem::new(r_itp, t_itp, grid, reg, ecfg, cfg.data_scale);

    let mut u = stack(u0);
    let mut state = problem.linearize(&u);
    let scale_ref = 1.0 + state.objective.abs();
    let mut trace = SolverTrace {
        iterates: vec![IterateRecord {
            iteration: 0,
            objective: state.objective,
            grad_norm: dot(&state.gradient, &state.gradient).sqrt(),
            step: 0.0,
        }],
        converged: false,
        stop_reason: StopReason::MaxIterations,
        notes: Vec::new(),
    };
    let mut scratch = (vec![0.0; n], vec![0.0; n]);
    let reg_diag = {
        let (a, b) = problem.op.diagonal();
        [a, b].concat()
    };
    let mut candidate = vec![0.0; 2 * n];

    for k in 1..=cfg.max_iterations {
        let gnorm = dot(&state.gradient, &state.gradient).sqrt();
        if gnorm <= cfg.grad_tolerance * scale_ref {
            trace.converged = true;
            trace.stop_reason = StopReason::Gradient;
            break;
        }
        let rhs: Vec<f64> = state.gradient.iter().map(|g| -g).collect();
        let image_grad = &state.image_grad;
        let pre = problem.preconditioner(image_grad, &reg_diag, &mut scratch);
        let cg = conjugate_gradient(
            |v, out| problem.normal_apply(image_grad, v, out, &mut scratch),
            &rhs,
            Some(&|r: &[f64], z: &mut [f64]| pre.apply(r, z)),
            cfg.cg_tolerance,
            cfg.cg_max_iterations,
        );
        let mut dir = cg.solution;
        let mut slope = dot(&state.gradient, &dir);
        if cg.breakdown || !(slope < 0.0) {
            trace.notes.push(format!(
                "iteration {k}: conjugate gradients broke down, using steepest descent"
            ));
            // Cauchy-scaled steepest descent
            let mut hg = vec![0.0; 2 * n];
            problem.normal_apply(image_grad, &state.gradient, &mut hg, &mut scratch);
            let curv = dot(&state.gradient, &hg);
            let scale = if curv > 0.0 { gnorm * gnorm / curv } else { 1.0 };
            dir = state.gradient.iter().map(|g| -scale * g).collect();
            slope = dot(&state.gradient, &dir);
        }
        let ls = armijo_search(
            |s| {
                for i in 0..2 * n {
                    candidate[i] = u[i] + s * dir[i];
                }
                problem.objective(&candidate)
            },
            state.objective,
            slope,
            cfg,
        )?;
        if !ls.accepted {
            trace.stop_reason = StopReason::LineSearchFailure;
            break;
        }
        for i in 0..2 * n {
            u[i] += ls.step * dir[i];
        }
        let f_prev = state.objective;
        state = problem.linearize(&u);
        trace.iterates.push(IterateRecord {
            iteration: k,
            objective: state.objective,
            grad_norm: dot(&state.gradient, &state.gradient).sqrt(),
            step: ls.step,
        });
        if max_abs(dir.iter().map(|d| d * ls.step)) <= cfg.step_tolerance {
            trace.converged = true;
            trace.stop_reason = StopReason::Step;
            break;
        }
        if (f_prev - state.objective).abs() <= cfg.objective_tolerance * scale_ref {
            trace.converged = true;
            trace.stop_reason = StopReason::ObjectiveChange;
            break;
        }
    }
    let u2 = u.split_off(n);
    Ok((DisplacementField::new(grid.clone(), u, u2)?, trace))
}

fn stack(u: &DisplacementField) -> Vec<f64> {
    u.u1().iter().chain(u.u2()).copied().collect()
}

/// Objective `½ d²‖T(x − u) − R‖² + α S(·)` with `d = data_scale` and the
/// energy measured per `reg`, and its gradient stacked `[u1; u2]`.
pub fn elastic_objective(
    r_itp: &Interpolant,
    t_itp: &Interpolant,
    u: &DisplacementField,
    reg: Regularization<'_>,
    ecfg: &ElasticConfig,
    data_scale: f64,
) -> (f64, Vec<f64>) {
    let problem = ElasticProblem::new(r_itp, t_itp, u.grid(), reg, ecfg, data_scale);
    let state = problem.linearize(&stack(u));
    (state.objective, state.gradient)
}

/// Objective `½ d²‖T(φ_ω) − R‖²` with `d = data_scale` and its gradient `Jᵀr`
/// with respect to ω.
pub fn parametric_objective(
    r_itp: &Interpolant,
    t_itp: &Interpolant,
    grid: &Grid,
    w: &RigidLikeParams,
    data_scale: f64,
) -> (f64, [f64; 4]) {
    let problem = ParametricProblem {
        t_itp,
        grid,
        reference: reference_values(r_itp, grid),
        weight: grid.cell_area() * data_scale * data_scale,
    };
    let (f, g, _) = problem.linearize(w);
    (f, [g[0], g[1], g[2], g[3]])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn newton_step_on_quadratic_is_accepted() {
        // f(s) = ½(1 − s)², f(0) = ½, f'(0) = −1
        let cfg = SolverConfig::default();
        let ls = armijo_search(|s| 0.5 * (1.0 - s) * (1.0 - s), 0.5, -1.0, &cfg).unwrap();
        assert!(ls.accepted);
        assert_eq!(ls.step, 1.0);
    }

    #[test]
    fn flat_objective_is_rejected() {
        let cfg = SolverConfig::default();
        let ls = armijo_search(|_| 1.0, 1.0, -1e-9, &cfg).unwrap();
        assert!(!ls.accepted);
    }

    #[test]
    fn ladder_matches_direct_evaluation() {
        let cfg = SolverConfig::default();
        let f = |s: f64| (1.0 - s).powi(2) + 0.3 * s * s;
        let (f0, slope) = (1.0, -2.0);
        let ls = armijo_search(f, f0, slope, &cfg).unwrap();
        let expected = (0..=cfg.armijo_max_backtracks)
            .map(|k| 0.5f64.powi(k as i32))
            .find(|&s| f(s) <= f0 + 1e-4 * s * slope)
            .unwrap();
        assert!(ls.accepted);
        assert_eq!(ls.step, expected);
        assert_eq!(ls.step, 1.0);
    }

    #[test]
    fn ascent_direction_is_contract_error() {
        let cfg = SolverConfig::default();
        assert!(matches!(armijo_search(|s| s, 0.0, 0.5, &cfg), Err(Error::Contract(_))));
    }

    #[test]
    fn cg_solves_spd_system() {
        // tridiagonal SPD matrix
        let n = 40;
        let apply = |v: &[f64], out: &mut [f64]| {
            for i in 0..n {
                let mut s = 4.0 * v[i];
                if i > 0 {
                    s -= v[i - 1];
                }
                if i + 1 < n {
                    s -= v[i + 1];
                }
                out[i] = s;
            }
        };
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        let out = conjugate_gradient(apply, &rhs, None, 1e-12, 200);
        let jacobi = |r: &[f64], z: &mut [f64]| z.iter_mut().zip(r).for_each(|(a, b)| *a = 0.25 * b);
        let pre = conjugate_gradient(apply, &rhs, Some(&jacobi), 1e-12, 200);
        assert!(pre.converged);
        for (a, b) in pre.solution.iter().zip(&out.solution) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(out.converged && !out.breakdown);
        let mut check = vec![0.0; n];
        apply(&out.solution, &mut check);
        for (a, b) in check.iter().zip(&rhs) {
            assert!((a - b).abs() < 1e-10);
        }
        let floor = 1e-12 * out.model_values.last().unwrap().abs();
        assert!(out.model_values.windows(2).all(|w| w[1] <= w[0] + floor));
    }

    #[test]
    fn cg_reports_breakdown_on_indefinite() {
        let apply = |v: &[f64], out: &mut [f64]| {
            out[0] = -v[0];
            out[1] = v[1];
        };
        let out = conjugate_gradient(apply, &[1.0, 0.0], None, 1e-8, 10);
        assert!(out.breakdown);
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::parametric().validate().is_ok());
        let bad = SolverConfig {
            armijo_c1: 0.6,
            ..SolverConfig::parametric()
        };
        assert!(bad.validate().is_err());
        let bad = SolverConfig {
            armijo_beta: 1.0,
            ..SolverConfig::parametric()
        };
        assert!(bad.validate().is_err());
        assert_eq!(SolverConfig::elastic().max_iterations, 30);
    }
}
