//! Server-side density reconstruction.
//!
//! The perturbed-data density `g` is tied to the private-data density `f` by
//! `g(y) = ∫ p(x, y) f(x) dx`. On the interest grid this becomes the linear
//! map `G = P · diag(Δz) · V`, and `V` is recovered by minimizing the
//! symmetric KL divergence between the estimated `G` and the image of `V`,
//! plus L1/L2 penalties, subject to unit area and `0 <= v_i <= 1`.
//!
//! The minimization is a sequential quadratic programming loop: each outer
//! iteration builds a second-order model of the objective and solves the
//! resulting box- and equality-constrained QP with a primal active-set
//! method, then backtracks along the QP step. Iterates stay feasible
//! throughout.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{DensityVector, InterestGrid, PerturbationConfig, PerturbedReport, TransitionMatrix};
use crate::error::{invalid, Error, Result};
use crate::kde::{kde_at, KdeConfig};
use crate::perturbation::kernel_unchecked;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconstructionConfig {
    /// Weight of `Σ |v_i|`.
    pub lambda1: f64,
    /// Weight of `Σ v_i²`.
    pub lambda2: f64,
    /// Floor applied to every probability mass before taking logarithms.
    pub kl_floor: f64,
    pub max_iterations: usize,
    /// Allowed `|Σ v_i Δz_i - 1|`.
    pub constraint_tolerance: f64,
    /// Objective changes below this count as no progress.
    pub objective_tolerance: f64,
    /// Allowed sup-norm of the projected-gradient residual `v - Π(v - ∇F)`.
    pub optimality_tolerance: f64,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        Self {
            lambda1: 1e-3,
            lambda2: 1e-3,
            kl_floor: 1e-12,
            max_iterations: 200,
            constraint_tolerance: 1e-9,
            objective_tolerance: 1e-15,
            optimality_tolerance: 1e-10,
        }
    }
}

impl ReconstructionConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |v: f64| v >= 0.0 && v.is_finite();
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !(nonneg(self.lambda1) && nonneg(self.lambda2)) {
            return Err(invalid("regularization weights must be finite and >= 0"));
        }
        if !(pos(self.kl_floor)
            && pos(self.constraint_tolerance)
            && pos(self.objective_tolerance)
            && pos(self.optimality_tolerance))
        {
            return Err(invalid("KL floor and tolerances must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(invalid("max_iterations must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionResult {
    pub density: DensityVector,
    pub objective_value: f64,
    pub constraint_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Fills `entries[j][i] = p(z_i, z_j)`.
pub fn build_transition_matrix(grid: &Arc<InterestGrid>, config: &PerturbationConfig) -> Result<TransitionMatrix> {
    if !grid.lies_within(config.range()) {
        return Err(invalid("grid points must lie within the data range"));
    }
    let z = grid.points();
    let entries: Vec<f64> = z
        .par_iter()
        .flat_map_iter(|&zj| z.iter().map(move |&zi| kernel_unchecked(zi, zj, config)))
        .collect();
    Ok(TransitionMatrix::from_row_major(Arc::clone(grid), entries))
}

/// Left-endpoint rectangular rule: `g(z_j) = Σ_i p(z_i, z_j) f(z_i) Δz_i`.
pub fn forward_map(matrix: &TransitionMatrix, f: &DensityVector) -> Result<DensityVector> {
    if !(Arc::ptr_eq(matrix.grid(), f.grid()) || **matrix.grid() == **f.grid()) {
        return Err(invalid("density and matrix are defined on different grids"));
    }
    let weighted: Vec<f64> = f.masses();
    let values = (0..matrix.size())
        .map(|j| matrix.row(j).iter().zip(&weighted).map(|(p, m)| p * m).sum::<f64>().max(0.0))
        .collect();
    DensityVector::new(Arc::clone(matrix.grid()), values)
}

fn normalized_masses(density: &[f64], widths: &[f64]) -> Vec<f64> {
    let masses: Vec<f64> = density.iter().zip(widths).map(|(v, w)| v * w).collect();
    let total: f64 = masses.iter().sum();
    if total > 0.0 {
        masses.iter().map(|m| m / total).collect()
    } else {
        vec![1.0 / masses.len() as f64; masses.len()]
    }
}

/// Objective with everything that does not depend on `v` precomputed.
///
/// With `M = diag(Δz) P diag(Δz)` the unnormalized output masses are
/// `u = M v`, `q = u / Σu`, and the data term is `KL(t‖q) + KL(q‖t)` on the
/// floored masses.
struct Problem {
    mass_map: DMatrix<f64>,
    column_sums: DVector<f64>,
    target: Vec<f64>,
    widths: Vec<f64>,
    lambda1: f64,
    lambda2: f64,
    floor: f64,
}

struct Evaluation {
    value: f64,
    q: Vec<f64>,
    total: f64,
    /// `∂φ/∂q_j`, zero where `q_j` sits on the floor.
    dq: Vec<f64>,
}

impl Problem {
    fn new(matrix: &TransitionMatrix, g_target: &DensityVector, config: &ReconstructionConfig) -> Result<Self> {
        if !(Arc::ptr_eq(matrix.grid(), g_target.grid()) || **matrix.grid() == **g_target.grid()) {
            return Err(invalid("target density and matrix are defined on different grids"));
        }
        let m = matrix.size();
        let widths = matrix.grid().widths();
        let mass_map = DMatrix::from_fn(m, m, |j, i| widths[j] * matrix.get(j, i) * widths[i]);
        let column_sums = DVector::from_iterator(m, mass_map.column_iter().map(|c| c.sum()));
        let target = normalized_masses(g_target.values(), &widths)
            .into_iter()
            .map(|t| t.max(config.kl_floor))
            .collect();
        Ok(Self {
            mass_map,
            column_sums,
            target,
            widths,
            lambda1: config.lambda1,
            lambda2: config.lambda2,
            floor: config.kl_floor,
        })
    }

    fn size(&self) -> usize {
        self.widths.len()
    }

    fn evaluate(&self, v: &[f64]) -> Evaluation {
        let vv = DVector::from_column_slice(v);
        let u = &self.mass_map * &vv;
        let total = u.sum();
        let m = self.size();
        let mut q = vec![0.0; m];
        let mut dq = vec![0.0; m];
        let mut value = 0.0;
        for j in 0..m {
            let raw = if total > 0.0 { u[j] / total } else { 0.0 };
            let t = self.target[j];
            let qf = raw.max(self.floor);
            value += t * (t / qf).ln() + qf * (qf / t).ln();
            q[j] = raw;
            if raw > self.floor {
                dq[j] = -t / raw + (raw / t).ln() + 1.0;
            }
        }
        value += v.iter().map(|x| self.lambda1 * x.abs() + self.lambda2 * x * x).sum::<f64>();
        Evaluation { value, q, total, dq }
    }

    fn value(&self, v: &[f64]) -> f64 {
        self.evaluate(v).value
    }

    fn gradient(&self, v: &[f64], e: &Evaluation) -> Vec<f64> {
        let dq = DVector::from_column_slice(&e.dq);
        let r = self.mass_map.tr_mul(&dq);
        let beta: f64 = e.dq.iter().zip(&e.q).map(|(a, b)| a * b).sum();
        (0..self.size())
            .map(|i| {
                let data = if e.total > 0.0 { (r[i] - beta * self.column_sums[i]) / e.total } else { 0.0 };
                data + self.lambda1 * v[i].signum() + 2.0 * self.lambda2 * v[i]
            })
            .collect()
    }

    /// Exact Hessian when `exact`, otherwise the Gauss-Newton part only.
    fn hessian(&self, e: &Evaluation, exact: bool) -> DMatrix<f64> {
        let m = self.size();
        let s = e.total;
        let mut h = DMatrix::zeros(m, m);
        if s > 0.0 {
            // J = (M - q cᵀ) / s
            let mut jac = self.mass_map.clone();
            for i in 0..m {
                let ci = self.column_sums[i];
                for j in 0..m {
                    jac[(j, i)] = (jac[(j, i)] - e.q[j] * ci) / s;
                }
            }
            let mut scaled = jac.clone();
            for j in 0..m {
                let qj = e.q[j];
                let d = if qj > self.floor { self.target[j] / (qj * qj) + 1.0 / qj } else { 0.0 };
                scaled.row_mut(j).scale_mut(d);
            }
            h = jac.tr_mul(&scaled);
            if exact {
                let dq = DVector::from_column_slice(&e.dq);
                let r = self.mass_map.tr_mul(&dq);
                let beta: f64 = e.dq.iter().zip(&e.q).map(|(a, b)| a * b).sum();
                let s2 = s * s;
                for i in 0..m {
                    for k in 0..m {
                        let ci = self.column_sums[i];
                        let ck = self.column_sums[k];
                        h[(i, k)] += (-(r[i] * ck + ci * r[k]) + 2.0 * beta * ci * ck) / s2;
                    }
                }
            }
        }
        for i in 0..m {
            h[(i, i)] += 2.0 * self.lambda2;
        }
        h
    }
}

/// Value of the reconstruction objective at `v`.
pub fn objective(
    v: &DensityVector,
    g_target: &DensityVector,
    matrix: &TransitionMatrix,
    config: &ReconstructionConfig,
) -> Result<f64> {
    if !v.same_grid(g_target) {
        return Err(invalid("candidate and target densities are on different grids"));
    }
    Ok(Problem::new(matrix, g_target, config)?.value(v.values()))
}

/// Analytic gradient of [`objective`] with respect to the density values.
pub fn objective_gradient(
    v: &DensityVector,
    g_target: &DensityVector,
    matrix: &TransitionMatrix,
    config: &ReconstructionConfig,
) -> Result<Vec<f64>> {
    if !v.same_grid(g_target) {
        return Err(invalid("candidate and target densities are on different grids"));
    }
    let problem = Problem::new(matrix, g_target, config)?;
    let e = problem.evaluate(v.values());
    Ok(problem.gradient(v.values(), &e))
}

/// Euclidean projection onto `{x : Σ w_i x_i = 1, 0 <= x_i <= 1}`.
fn project_feasible(y: &[f64], widths: &[f64]) -> Vec<f64> {
    let apply = |mu: f64| -> Vec<f64> {
        y.iter().zip(widths).map(|(yi, wi)| (yi - mu * wi).clamp(0.0, 1.0)).collect()
    };
    let area = |x: &[f64]| -> f64 { x.iter().zip(widths).map(|(a, b)| a * b).sum() };

    let mut lo = -1.0;
    while area(&apply(lo)) < 1.0 {
        lo *= 2.0;
    }
    let mut hi = 1.0;
    while area(&apply(hi)) > 1.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if area(&apply(mid)) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lo_x = apply(lo);
    let hi_x = apply(hi);
    if (area(&lo_x) - 1.0).abs() <= (area(&hi_x) - 1.0).abs() {
        lo_x
    } else {
        hi_x
    }
}

fn area_residual(v: &[f64], widths: &[f64]) -> f64 {
    (v.iter().zip(widths).map(|(a, b)| a * b).sum::<f64>() - 1.0).abs()
}

fn projected_gradient_norm(v: &[f64], grad: &[f64], widths: &[f64]) -> f64 {
    let y: Vec<f64> = v.iter().zip(grad).map(|(a, g)| a - g).collect();
    project_feasible(&y, widths)
        .iter()
        .zip(v)
        .map(|(p, x)| (p - x).abs())
        .fold(0.0, f64::max)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Bound {
    Free,
    Lower,
    Upper,
}

/// Solves `min gᵀp + ½ pᵀHp` s.t. `wᵀp = 0`, `0 <= v + p <= 1` by a primal
/// active-set method started from `p = 0`.
fn solve_qp(h: &DMatrix<f64>, g: &[f64], v: &[f64], w: &[f64]) -> Vec<f64> {
    let m = v.len();
    let mut p = vec![0.0; m];
    let mut state: Vec<Bound> = v
        .iter()
        .map(|x| {
            if *x <= 0.0 {
                Bound::Lower
            } else if *x >= 1.0 {
                Bound::Upper
            } else {
                Bound::Free
            }
        })
        .collect();

    let scale = (0..m).map(|i| h[(i, i)].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let max_inner = 20 * m + 100;

    for _ in 0..max_inner {
        let hp = h * DVector::from_column_slice(&p);
        let gq: Vec<f64> = (0..m).map(|i| g[i] + hp[i]).collect();
        let free: Vec<usize> = (0..m).filter(|i| state[*i] == Bound::Free).collect();

        let (step, mu) = if free.is_empty() {
            (Vec::new(), fixed_multiplier(&gq, w, &state))
        } else {
            equality_step(h, &gq, w, &free, scale)
        };

        let step_norm = step.iter().fold(0.0f64, |acc, s| acc.max(s.abs()));
        let p_norm = p.iter().fold(0.0f64, |acc, s| acc.max(s.abs()));
        if step_norm <= 1e-15 * (1.0 + p_norm) {
            // Release the bound whose multiplier has the wrong sign.
            let mut worst: Option<(usize, f64)> = None;
            for i in 0..m {
                let lambda = gq[i] + mu * w[i];
                let violation = match state[i] {
                    Bound::Lower => -lambda,
                    Bound::Upper => lambda,
                    Bound::Free => continue,
                };
                if violation > 1e-14 * (1.0 + gq[i].abs()) && worst.map_or(true, |(_, v)| violation > v) {
                    worst = Some((i, violation));
                }
            }
            match worst {
                Some((i, _)) => state[i] = Bound::Free,
                None => break,
            }
            continue;
        }

        let mut alpha = 1.0;
        let mut blocking = None;
        for (k, &i) in free.iter().enumerate() {
            let x = v[i] + p[i];
            let s = step[k];
            let (t, bound) = if s < 0.0 {
                ((0.0 - x) / s, Bound::Lower)
            } else if s > 0.0 {
                ((1.0 - x) / s, Bound::Upper)
            } else {
                continue;
            };
            if t < alpha {
                alpha = t.max(0.0);
                blocking = Some((i, bound));
            }
        }
        for (k, &i) in free.iter().enumerate() {
            p[i] += alpha * step[k];
        }
        if let Some((i, bound)) = blocking {
            p[i] = match bound {
                Bound::Lower => -v[i],
                _ => 1.0 - v[i],
            };
            state[i] = bound;
        }
    }
    p
}

/// Equality-constrained step on the free set via the range-space formula.
fn equality_step(h: &DMatrix<f64>, gq: &[f64], w: &[f64], free: &[usize], scale: f64) -> (Vec<f64>, f64) {
    let n = free.len();
    let mut hff = DMatrix::from_fn(n, n, |r, c| h[(free[r], free[c])]);
    let rhs = DVector::from_iterator(n, free.iter().map(|i| -gq[*i]));
    let wf = DVector::from_iterator(n, free.iter().map(|i| w[*i]));

    let mut damping = 0.0;
    let chol = loop {
        if let Some(c) = hff.clone().cholesky() {
            break c;
        }
        let next = if damping == 0.0 { 1e-12 * scale } else { damping * 10.0 };
        for k in 0..n {
            hff[(k, k)] += next - damping;
        }
        damping = next;
    };
    let a = chol.solve(&rhs);
    let b = chol.solve(&wf);
    let mu = wf.dot(&a) / wf.dot(&b);
    let step = (a - b * mu).iter().copied().collect();
    (step, mu)
}

/// Multiplier for the area constraint when every variable sits on a bound.
fn fixed_multiplier(gq: &[f64], w: &[f64], state: &[Bound]) -> f64 {
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for i in 0..gq.len() {
        let cut = -gq[i] / w[i];
        match state[i] {
            Bound::Lower => lo = lo.max(cut),
            Bound::Upper => hi = hi.min(cut),
            Bound::Free => {}
        }
    }
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) => 0.5 * (lo + hi),
        (true, false) => lo,
        (false, true) => hi,
        (false, false) => 0.0,
    }
}

/// Minimizes the objective for a known perturbed-data density.
pub fn reconstruct_from_target(
    g_target: &DensityVector,
    matrix: &TransitionMatrix,
    initial: &[f64],
    config: &ReconstructionConfig,
) -> Result<ReconstructionResult> {
    config.validate()?;
    let grid = Arc::clone(matrix.grid());
    let widths = grid.widths();
    if widths.iter().sum::<f64>() < 1.0 {
        return Err(Error::InfeasibleProblem(format!(
            "total cell width {} < 1: no density bounded by 1 can have unit area",
            widths.iter().sum::<f64>()
        )));
    }
    if initial.len() != widths.len() {
        return Err(invalid("initial guess has the wrong length"));
    }
    let problem = Problem::new(matrix, g_target, config)?;

    let mut v = project_feasible(initial, &widths);
    let mut e = problem.evaluate(&v);
    let mut best = (v.clone(), e.value);
    let mut converged = false;
    let mut iterations = 0;
    let mut stalled = 0;

    while iterations < config.max_iterations {
        let grad = problem.gradient(&v, &e);
        if projected_gradient_norm(&v, &grad, &widths) <= config.optimality_tolerance
            && area_residual(&v, &widths) <= config.constraint_tolerance
        {
            converged = true;
            break;
        }
        iterations += 1;

        let mut step = solve_qp(&problem.hessian(&e, true), &grad, &v, &widths);
        let mut slope: f64 = grad.iter().zip(&step).map(|(g, s)| g * s).sum();
        if !(slope < 0.0) {
            step = solve_qp(&problem.hessian(&e, false), &grad, &v, &widths);
            slope = grad.iter().zip(&step).map(|(g, s)| g * s).sum();
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        if slope < 0.0 {
            while alpha > 1e-12 {
                let trial: Vec<f64> = v
                    .iter()
                    .zip(&step)
                    .map(|(x, s)| (x + alpha * s).clamp(0.0, 1.0))
                    .collect();
                let te = problem.evaluate(&trial);
                if te.value <= e.value + 1e-4 * alpha * slope {
                    accepted = Some((trial, te));
                    break;
                }
                alpha *= 0.5;
            }
        }

        let Some((trial, te)) = accepted else {
            break;
        };
        let change = (e.value - te.value).abs();
        // Keep the area constraint tight against round-off drift.
        v = if area_residual(&trial, &widths) > 1e-14 {
            project_feasible(&trial, &widths)
        } else {
            trial
        };
        e = problem.evaluate(&v);
        if e.value < best.1 {
            best = (v.clone(), e.value);
        }
        if change < config.objective_tolerance {
            stalled += 1;
            if stalled >= 10 {
                break;
            }
        } else {
            stalled = 0;
        }
    }

    if converged && e.value <= best.1 {
        best = (v, e.value);
    }
    let residual = area_residual(&best.0, &widths);
    Ok(ReconstructionResult {
        density: DensityVector::new(grid, best.0)?,
        objective_value: best.1,
        constraint_residual: residual,
        iterations,
        converged,
    })
}

/// Full server-side pipeline: pool samples, estimate `G` by KDE, build the
/// transition matrix and solve for the private-data density.
pub fn reconstruct(
    reports: &[PerturbedReport],
    grid: &Arc<InterestGrid>,
    pconfig: &PerturbationConfig,
    kconfig: &KdeConfig,
    rconfig: &ReconstructionConfig,
) -> Result<ReconstructionResult> {
    if reports.is_empty() {
        return Err(invalid("no reports to reconstruct from"));
    }
    rconfig.validate()?;
    let samples: Vec<f64> = reports.iter().flat_map(|r| r.samples.iter().copied()).collect();
    let g_target = kde_at(grid, &samples, kconfig)?;
    let matrix = build_transition_matrix(grid, pconfig)?;
    let uniform = vec![1.0 / pconfig.range().width(); grid.len()];
    reconstruct_from_target(&g_target, &matrix, &uniform, rconfig)
}
