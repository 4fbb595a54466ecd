//! Discrete energies and their minimization.
//!
//! The bulk indicators are smoothed by a C¹ ramp of width δ and driven
//! toward the sharp functional by continuation; the degenerate p-Laplacian
//! is regularized through `(|∇u|² + ε²)^{p/2}`. Reported energies always
//! use the exact indicator via [`jtp_energy`], which measures phase volumes
//! by a sub-cell linear reconstruction of the zero set.

use serde::{Deserialize, Serialize};

use crate::grid::cell_gradient_of;
use crate::{Error, Grid, ProblemParams, Result, ScalarField};

/// Nodes with |u| below this fraction of ‖u‖∞ belong to neither phase.
pub const PHASE_TIE_TOL: f64 = 1e-14;

/// Exact (unsmoothed) energy split of a field.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    /// ∫ |∇u|^p
    pub dirichlet: f64,
    /// (p−1) λ₊^p |{u>0}|
    pub bulk_plus: f64,
    /// (p−1) λ₋^p |{u<0}|
    pub bulk_minus: f64,
    pub total: f64,
}

/// Knobs for [`minimize_jtp`]. Zero-valued smoothing widths are resolved at
/// solve time: δ_start = 0.25·osc(bc), δ_end = 0.35·h·max(λ±, osc/diam).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimizeOptions {
    pub smoothing_delta_start: f64,
    pub smoothing_delta_end: f64,
    pub continuation_factor: f64,
    /// Descent iteration cap per continuation stage.
    pub max_outer_iters: usize,
    /// Tolerance on the volume-scaled first variation, max norm.
    pub grad_tol: f64,
    pub line_search_c: f64,
    pub line_search_shrink: f64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions {
            smoothing_delta_start: 0.0,
            smoothing_delta_end: 0.0,
            continuation_factor: 0.5,
            max_outer_iters: 20_000,
            grad_tol: 1e-6,
            line_search_c: 1e-4,
            line_search_shrink: 0.5,
        }
    }
}

impl MinimizeOptions {
    pub fn validate(&self) -> Result<()> {
        if self.smoothing_delta_start < 0.0 || self.smoothing_delta_end < 0.0 {
            return Err(Error::config("smoothing widths must be nonnegative"));
        }
        if self.smoothing_delta_start > 0.0
            && self.smoothing_delta_end > self.smoothing_delta_start
        {
            return Err(Error::config(
                "smoothing_delta_end must not exceed smoothing_delta_start",
            ));
        }
        if !(self.continuation_factor > 0.0 && self.continuation_factor < 1.0) {
            return Err(Error::config("continuation_factor must lie in (0,1)"));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::config("grad_tol must be positive"));
        }
        if !(self.line_search_c > 0.0 && self.line_search_c < 1.0)
            || !(self.line_search_shrink > 0.0 && self.line_search_shrink < 1.0)
        {
            return Err(Error::config("line search parameters must lie in (0,1)"));
        }
        Ok(())
    }
}

/// Per-stage diagnostics of one [`minimize_jtp`] run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MinimizeReport {
    pub stages: Vec<StageReport>,
    pub breakdown: EnergyBreakdown,
    pub max_principle_slack: f64,
    pub eps_reg: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageReport {
    pub delta: f64,
    pub iters: usize,
    pub grad_inf: f64,
    pub smoothed_energy: f64,
    pub exact_total: f64,
}

/// Σ_cells |∇_h u|^p · cell volume, with the cell-centered gradient.
pub fn p_dirichlet_energy(u: &ScalarField, params: &ProblemParams) -> f64 {
    let g = u.grid();
    let vol = g.cell_volume();
    let p = params.p;
    let mut acc = 0.0;
    g.for_each_cell(|c| {
        let grad = u.cell_gradient(c);
        let g2 = grad[0] * grad[0] + grad[1] * grad[1] + grad[2] * grad[2];
        acc += g2.powf(0.5 * p) * vol;
    });
    acc
}

/// Exact energy breakdown. Phase volumes come from the sub-cell linear
/// reconstruction û = mean + ∇_h·(x − x_c); cells whose corner values all
/// sit below the tie tolerance count as dead.
pub fn jtp_energy(u: &ScalarField, params: &ProblemParams) -> EnergyBreakdown {
    let g = u.grid();
    let vol = g.cell_volume();
    let p = params.p;
    let coef_plus = (p - 1.0) * params.lambda_plus.powf(p);
    let coef_minus = (p - 1.0) * params.lambda_minus.powf(p);
    let tie = PHASE_TIE_TOL * u.max_abs();
    let mut h = [0.0f64; 3];
    for a in 0..g.dim() {
        h[a] = g.spacing(a);
    }
    let mut dirichlet = 0.0;
    let mut vol_plus = 0.0;
    let mut vol_minus = 0.0;
    g.for_each_cell(|c| {
        let grad = u.cell_gradient(c);
        let g2 = grad[0] * grad[0] + grad[1] * grad[1] + grad[2] * grad[2];
        dirichlet += g2.powf(0.5 * p) * vol;
        if u.cell_max_abs(c) <= tie {
            return;
        }
        let mean = u.cell_mean(c);
        let fp = positive_fraction(g.dim(), mean, &grad, &h);
        let fm = positive_fraction(g.dim(), -mean, &[-grad[0], -grad[1], -grad[2]], &h);
        vol_plus += fp * vol;
        vol_minus += fm * vol;
    });
    let bulk_plus = coef_plus * vol_plus;
    let bulk_minus = coef_minus * vol_minus;
    EnergyBreakdown {
        dirichlet,
        bulk_plus,
        bulk_minus,
        total: dirichlet + bulk_plus + bulk_minus,
    }
}

/// Volume fraction of {mean + g·x > 0} over the centered cell Π[-h_a/2, h_a/2].
pub(crate) fn positive_fraction(dim: usize, mean: f64, grad: &[f64; 3], h: &[f64; 3]) -> f64 {
    // Reduce to Vol{Σ a_i y_i ≤ t} on the unit cube, a_i ≥ 0.
    let mut a = [0.0f64; 3];
    let mut t = -mean;
    let mut d = 0;
    let scale: f64 = (0..dim)
        .map(|i| (grad[i] * h[i]).abs())
        .fold(mean.abs(), f64::max);
    let tiny = 1e-300_f64.max(1e-15 * scale);
    for i in 0..dim {
        let b = grad[i] * h[i];
        if b.abs() <= tiny {
            continue;
        }
        a[d] = b.abs();
        t += 0.5 * b.abs(); // recentering plus the flip of negative axes
        d += 1;
    }
    if d == 0 {
        return if mean > 0.0 { 1.0 } else { 0.0 };
    }
    // Condition {û > 0} became Σ a_i y_i > t; return 1 − V(t).
    1.0 - simplex_cut_volume(d, &a, t)
}

/// Vol{y ∈ [0,1]^d : Σ a_i y_i ≤ t} with a_i > 0, by inclusion–exclusion.
fn simplex_cut_volume(d: usize, a: &[f64; 3], t: f64) -> f64 {
    let total: f64 = a[..d].iter().sum();
    if t <= 0.0 {
        return 0.0;
    }
    if t >= total {
        return 1.0;
    }
    let mut acc = 0.0;
    for mask in 0..(1usize << d) {
        let mut shift = t;
        let mut sign = 1.0;
        for i in 0..d {
            if mask >> i & 1 == 1 {
                shift -= a[i];
                sign = -sign;
            }
        }
        if shift > 0.0 {
            acc += sign * shift.powi(d as i32);
        }
    }
    let fact = [1.0, 1.0, 2.0, 6.0][d];
    let denom: f64 = a[..d].iter().product();
    (acc / (fact * denom)).clamp(0.0, 1.0)
}

/// C¹ ramp: 0 below 0, 1 above δ, cubic smoothstep between.
#[inline]
fn ramp(t: f64, delta: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= delta {
        1.0
    } else {
        let s = t / delta;
        s * s * (3.0 - 2.0 * s)
    }
}

#[inline]
fn ramp_deriv(t: f64, delta: f64) -> f64 {
    if t <= 0.0 || t >= delta {
        0.0
    } else {
        let s = t / delta;
        6.0 * s * (1.0 - s) / delta
    }
}

/// Precomputed cell topology: corner offsets and per-axis edge pairings.
struct CellTopology {
    dim: usize,
    corner_offsets: Vec<usize>,
    /// corner_signs[corner][axis] = ±1 (axis bit set / clear in the corner).
    corner_signs: Vec<[f64; 3]>,
    inv_h: [f64; 3],
    edge_weight: f64, // 1 / 2^{dim-1}
}

impl CellTopology {
    fn new(g: &Grid) -> Self {
        let dim = g.dim();
        let mut strides = [0usize; 3];
        // flat(c) strides per axis, derived from the lexicographic layout.
        let mut s = 1usize;
        for a in (0..dim).rev() {
            strides[a] = s;
            s *= g.n_cells(a) + 1;
        }
        let corners = 1usize << dim;
        let mut corner_offsets = Vec::with_capacity(corners);
        let mut corner_signs = Vec::with_capacity(corners);
        for corner in 0..corners {
            let mut off = 0usize;
            let mut sg = [0.0f64; 3];
            for a in 0..dim {
                if corner >> a & 1 == 1 {
                    off += strides[a];
                    sg[a] = 1.0;
                } else {
                    sg[a] = -1.0;
                }
            }
            corner_offsets.push(off);
            corner_signs.push(sg);
        }
        let mut inv_h = [0.0f64; 3];
        for a in 0..dim {
            inv_h[a] = 1.0 / g.spacing(a);
        }
        CellTopology {
            dim,
            corner_offsets,
            corner_signs,
            inv_h,
            edge_weight: 1.0 / (1usize << (dim - 1)) as f64,
        }
    }

    #[inline]
    fn gradient_and_mean(&self, values: &[f64], base: usize) -> ([f64; 3], f64) {
        let corners = self.corner_offsets.len();
        let mut grad = [0.0f64; 3];
        let mut mean = 0.0;
        for (k, &off) in self.corner_offsets.iter().enumerate() {
            let v = values[base + off];
            mean += v;
            let sg = &self.corner_signs[k];
            for a in 0..self.dim {
                grad[a] += sg[a] * v;
            }
        }
        for a in 0..self.dim {
            grad[a] *= self.edge_weight * self.inv_h[a];
        }
        (grad, mean / corners as f64)
    }
}

/// Smoothed objective shared by the two minimizers. Bulk coefficients are
/// zero in p-harmonic mode.
struct SmoothedEnergy<'a> {
    grid: &'a Grid,
    topo: CellTopology,
    p: f64,
    eps2: f64,
    coef_plus: f64,
    coef_minus: f64,
    delta: f64,
    vol: f64,
}

impl<'a> SmoothedEnergy<'a> {
    fn new(grid: &'a Grid, p: f64, eps_reg: f64, coef_plus: f64, coef_minus: f64, delta: f64) -> Self {
        SmoothedEnergy {
            grid,
            topo: CellTopology::new(grid),
            p,
            eps2: eps_reg * eps_reg,
            coef_plus,
            coef_minus,
            delta,
            vol: grid.cell_volume(),
        }
    }

    fn energy(&self, values: &[f64]) -> f64 {
        let mut acc = 0.0;
        self.grid.for_each_cell(|c| {
            let base = self.grid.flat(c);
            let (grad, mean) = self.topo.gradient_and_mean(values, base);
            let g2 = grad[0] * grad[0] + grad[1] * grad[1] + grad[2] * grad[2] + self.eps2;
            let mut cell = g2.powf(0.5 * self.p);
            if self.coef_plus != 0.0 || self.coef_minus != 0.0 {
                cell += self.coef_plus * ramp(mean, self.delta)
                    + self.coef_minus * ramp(-mean, self.delta);
            }
            acc += cell;
        });
        acc * self.vol
    }

    fn gradient(&self, values: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let corners = self.topo.corner_offsets.len();
        let mean_w = 1.0 / corners as f64;
        self.grid.for_each_cell(|c| {
            let base = self.grid.flat(c);
            let (grad, mean) = self.topo.gradient_and_mean(values, base);
            let g2 = grad[0] * grad[0] + grad[1] * grad[1] + grad[2] * grad[2] + self.eps2;
            let dfac = self.p * g2.powf(0.5 * self.p - 1.0) * self.vol;
            let bulk = if self.coef_plus != 0.0 || self.coef_minus != 0.0 {
                (self.coef_plus * ramp_deriv(mean, self.delta)
                    - self.coef_minus * ramp_deriv(-mean, self.delta))
                    * self.vol
                    * mean_w
            } else {
                0.0
            };
            let mut gw = [0.0f64; 3];
            for a in 0..self.topo.dim {
                gw[a] = dfac * grad[a] * self.topo.edge_weight * self.topo.inv_h[a];
            }
            for (k, &off) in self.topo.corner_offsets.iter().enumerate() {
                let sg = &self.topo.corner_signs[k];
                let mut val = bulk;
                for a in 0..self.topo.dim {
                    val += sg[a] * gw[a];
                }
                out[base + off] += val;
            }
        });
    }
}

struct DescentOutcome {
    iters: usize,
    grad_inf: f64,
    energy: f64,
    converged: bool,
}

/// Projected gradient descent with a Barzilai–Borwein initial step and an
/// Armijo backtracking safeguard. Dirichlet components are frozen; an
/// optional box bound clamps iterates (the admissible class is invariant
/// under truncation at the boundary sup).
fn descent(
    values: &mut [f64],
    dirichlet: &[bool],
    obj: &SmoothedEnergy,
    grad_tol_scaled: f64,
    max_iters: usize,
    c_armijo: f64,
    shrink: f64,
    box_bound: Option<f64>,
) -> DescentOutcome {
    let n = values.len();
    let inv_vol = 1.0 / obj.vol;
    let mut grad = vec![0.0; n];
    let mut prev_grad = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut energy = obj.energy(values);
    let mut step = 0.0f64;
    let mut prev_step_vec: Option<Vec<f64>> = None;
    let clamp = |v: f64| match box_bound {
        Some(b) => v.clamp(-b, b),
        None => v,
    };
    let mut iters = 0;
    let mut grad_inf = f64::INFINITY;
    while iters < max_iters {
        obj.gradient(values, &mut grad);
        for i in 0..n {
            if dirichlet[i] {
                grad[i] = 0.0;
            }
        }
        grad_inf = grad.iter().fold(0.0f64, |m, g| m.max(g.abs())) * inv_vol;
        if grad_inf <= grad_tol_scaled {
            return DescentOutcome {
                iters,
                grad_inf,
                energy,
                converged: true,
            };
        }
        // BB1 step from the previous move; fall back to a conservative scale.
        let gnorm2: f64 = grad.iter().map(|g| g * g).sum();
        step = if let Some(s) = &prev_step_vec {
            let mut sty = 0.0;
            let mut sts = 0.0;
            for i in 0..n {
                let si = s[i];
                sts += si * si;
                sty += si * (grad[i] - prev_grad[i]);
            }
            if sty > 1e-300 {
                (sts / sty).clamp(1e-14, 1e14)
            } else {
                (step * 2.0).max(1e-14)
            }
        } else {
            let gmax = grad_inf * obj.vol;
            0.01 * (1.0 + values.iter().fold(0.0f64, |m, v| m.max(v.abs()))) / (gmax + 1e-300)
        };
        // Armijo backtracking on the projected step.
        let mut accepted = false;
        for _ in 0..60 {
            let mut decrease = 0.0;
            for i in 0..n {
                let v = clamp(values[i] - step * grad[i]);
                trial[i] = v;
                let d = v - values[i];
                decrease += d * d;
            }
            let e_trial = obj.energy(&trial);
            if e_trial <= energy - c_armijo / step.max(1e-300) * decrease {
                let mut s_vec = vec![0.0; n];
                for i in 0..n {
                    s_vec[i] = trial[i] - values[i];
                }
                values.copy_from_slice(&trial);
                prev_grad.copy_from_slice(&grad);
                prev_step_vec = Some(s_vec);
                energy = e_trial;
                accepted = true;
                break;
            }
            step *= shrink;
        }
        iters += 1;
        if !accepted {
            // Line search stalled at machine precision: treat as converged
            // to the attainable accuracy.
            let _ = gnorm2;
            return DescentOutcome {
                iters,
                grad_inf,
                energy,
                converged: grad_inf <= grad_tol_scaled * 100.0,
            };
        }
    }
    DescentOutcome {
        iters,
        grad_inf,
        energy,
        converged: false,
    }
}

/// Cheap smoothing sweeps of the masked Laplace problem, used only to build
/// starting guesses for the nonlinear descents.
fn laplace_presolve(field: &mut ScalarField, sweeps: usize) {
    let g = *field.grid();
    let dim = g.dim();
    let mut inv_h2 = [0.0f64; 3];
    let mut diag = 0.0;
    for a in 0..dim {
        inv_h2[a] = 1.0 / (g.spacing(a) * g.spacing(a));
        diag += 2.0 * inv_h2[a];
    }
    let omega = 1.7;
    let mask = field.mask().to_vec();
    for _ in 0..sweeps {
        let mut order = 0..g.node_count();
        let values = field.values_mut();
        for idx in &mut order {
            if mask[idx] {
                continue;
            }
            let c = g.coords(idx);
            let mut acc = 0.0;
            for a in 0..dim {
                let mut cm = c;
                cm[a] -= 1;
                let mut cp = c;
                cp[a] += 1;
                acc += (values[g.flat(cm)] + values[g.flat(cp)]) * inv_h2[a];
            }
            let new = acc / diag;
            values[idx] += omega * (new - values[idx]);
        }
    }
}

fn effective_eps(params: &ProblemParams, bc: &ScalarField) -> f64 {
    if params.eps_reg > 0.0 {
        params.eps_reg
    } else {
        let osc = boundary_oscillation(bc);
        (1e-8 * (osc + 1e-6) / bc.grid().diameter()).max(1e-14)
    }
}

/// max − min over Dirichlet nodes.
pub fn boundary_oscillation(bc: &ScalarField) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (v, m) in bc.values().iter().zip(bc.mask()) {
        if *m {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
    }
    if hi >= lo {
        hi - lo
    } else {
        0.0
    }
}

/// Minimizer of the regularized discrete p-Dirichlet energy with the
/// Dirichlet data carried by `bc` (masked nodes; free values are the
/// initial guess). Returns when the volume-scaled first variation drops
/// below `tol` in the max norm.
pub fn solve_p_harmonic(bc: &ScalarField, params: &ProblemParams, tol: f64) -> Result<ScalarField> {
    params.validate()?;
    bc.validate()?;
    if !(tol > 0.0) {
        return Err(Error::config("tolerance must be positive"));
    }
    let mut field = bc.clone();
    laplace_presolve(&mut field, 120);
    let eps = effective_eps(params, bc);
    let obj = SmoothedEnergy::new(bc.grid(), params.p, eps, 0.0, 0.0, 1.0);
    let mask = field.mask().to_vec();
    let out = descent(
        field.values_mut(),
        &mask,
        &obj,
        tol,
        60_000,
        1e-4,
        0.5,
        None,
    );
    if !out.converged {
        return Err(Error::NonConvergence {
            message: "p-harmonic descent hit the iteration cap".into(),
            residual: out.grad_inf,
            iters: out.iters,
            last: Some(Box::new(field)),
            trace: vec![out.energy],
        });
    }
    Ok(field)
}

/// Minimize the two-phase energy with the Dirichlet data carried by `bc`.
pub fn minimize_jtp(
    bc: &ScalarField,
    params: &ProblemParams,
    opts: &MinimizeOptions,
) -> Result<ScalarField> {
    minimize_jtp_report(bc, params, opts).map(|(f, _)| f)
}

/// Same as [`minimize_jtp`], returning the stage-by-stage report.
pub fn minimize_jtp_report(
    bc: &ScalarField,
    params: &ProblemParams,
    opts: &MinimizeOptions,
) -> Result<(ScalarField, MinimizeReport)> {
    params.validate()?;
    opts.validate()?;
    bc.validate()?;
    let grid = bc.grid();
    let p = params.p;
    let osc = boundary_oscillation(bc);
    let bound = bc.max_abs_dirichlet();
    let slope_scale = params
        .lambda_plus
        .max(params.lambda_minus)
        .max(osc / grid.diameter());
    let delta_start = if opts.smoothing_delta_start > 0.0 {
        opts.smoothing_delta_start
    } else {
        0.25 * (osc + 1e-12)
    };
    let delta_end = if opts.smoothing_delta_end > 0.0 {
        opts.smoothing_delta_end.min(delta_start)
    } else {
        (0.35 * grid.min_spacing() * slope_scale).min(delta_start)
    };
    let eps = effective_eps(params, bc);
    let coef_plus = (p - 1.0) * params.lambda_plus.powf(p);
    let coef_minus = (p - 1.0) * params.lambda_minus.powf(p);

    let mut field = bc.clone();
    laplace_presolve(&mut field, 120);
    for v in field.values_mut().iter_mut() {
        *v = v.clamp(-bound, bound);
    }
    let mask = field.mask().to_vec();

    // Continuation schedule: geometric from δ_start down to exactly δ_end.
    let mut deltas = vec![delta_start];
    while *deltas.last().unwrap() > delta_end * 1.0001 {
        let next = (deltas.last().unwrap() * opts.continuation_factor).max(delta_end);
        deltas.push(next);
    }

    let mut stages = Vec::with_capacity(deltas.len());
    for &delta in &deltas {
        let obj = SmoothedEnergy::new(grid, p, eps, coef_plus, coef_minus, delta);
        let before = obj.energy(field.values());
        let out = descent(
            field.values_mut(),
            &mask,
            &obj,
            opts.grad_tol,
            opts.max_outer_iters,
            opts.line_search_c,
            opts.line_search_shrink,
            Some(bound),
        );
        if out.energy > before + 1e-10 * (1.0 + before.abs()) {
            return Err(Error::NonConvergence {
                message: format!("smoothed energy increased across the δ = {delta:.3e} stage"),
                residual: out.energy - before,
                iters: out.iters,
                last: Some(Box::new(field)),
                trace: stages.iter().map(|s: &StageReport| s.smoothed_energy).collect(),
            });
        }
        let exact = jtp_energy(&field, params);
        stages.push(StageReport {
            delta,
            iters: out.iters,
            grad_inf: out.grad_inf,
            smoothed_energy: out.energy,
            exact_total: exact.total,
        });
    }

    let breakdown = jtp_energy(&field, params);
    let slack = field.max_abs() - bound;
    let report = MinimizeReport {
        stages,
        breakdown,
        max_principle_slack: slack,
        eps_reg: eps,
    };
    Ok((field, report))
}

/// Volume-scaled residual of the regularized p-Laplace operator at a node
/// (the first variation of the Dirichlet part alone). Used to check
/// p-harmonicity away from the smoothing band.
pub fn p_harmonic_residual(u: &ScalarField, params: &ProblemParams, node: usize) -> f64 {
    let g = u.grid();
    let eps = params.eps_reg.max(1e-14);
    let obj = SmoothedEnergy::new(g, params.p, eps, 0.0, 0.0, 1.0);
    // Gradient of the energy with respect to this node only: loop the cells
    // touching it.
    let c = g.coords(node);
    let dim = g.dim();
    let mut acc = 0.0;
    let corners = 1usize << dim;
    for corner in 0..corners {
        let mut cell = [0usize; 3];
        let mut ok = true;
        for a in 0..dim {
            if corner >> a & 1 == 1 {
                if c[a] == 0 {
                    ok = false;
                    break;
                }
                cell[a] = c[a] - 1;
            } else {
                if c[a] >= g.n_cells(a) {
                    ok = false;
                    break;
                }
                cell[a] = c[a];
            }
        }
        if !ok {
            continue;
        }
        let grad = cell_gradient_of(g, u.values(), cell);
        let g2 = grad[0] * grad[0] + grad[1] * grad[1] + grad[2] * grad[2] + eps * eps;
        let dfac = params.p * g2.powf(0.5 * params.p - 1.0) * obj.vol;
        for a in 0..dim {
            let sign = if corner >> a & 1 == 1 { 1.0 } else { -1.0 };
            acc += dfac * grad[a] * sign * obj.topo.edge_weight * obj.topo.inv_h[a];
        }
    }
    acc / obj.vol
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::twoplane::TwoPlane;

    fn params(p: f64, lp: f64, lm: f64) -> ProblemParams {
        ProblemParams::new(p, lp, lm).unwrap()
    }

    #[test]
    fn dirichlet_energy_of_constants_is_zero() {
        let g = Grid::centered(2, 1.0, 16).unwrap();
        let u = ScalarField::constant(g, 3.0);
        assert_eq!(p_dirichlet_energy(&u, &params(3.0, 1.0, 1.0)), 0.0);
    }

    #[test]
    fn dirichlet_energy_of_unit_slope() {
        // u = x·e with |e| = 1 on the unit square: ∫ 1 = 1 for any p.
        let g = Grid::new(2, &[[0.0, 1.0], [0.0, 1.0]], &[16, 16]).unwrap();
        let e = [0.6, 0.8, 0.0];
        let u = ScalarField::from_fn(g, |x| x[0] * e[0] + x[1] * e[1]);
        let val = p_dirichlet_energy(&u, &params(3.0, 1.0, 1.0));
        assert!((val - 1.0).abs() < 1e-12, "got {val}");
    }

    #[test]
    fn dirichlet_energy_slope_two() {
        let g = Grid::new(2, &[[0.0, 1.0], [0.0, 1.0]], &[8, 8]).unwrap();
        let u = ScalarField::from_fn(g, |x| 2.0 * x[0]);
        let val = p_dirichlet_energy(&u, &params(2.0, 1.0, 1.0));
        assert!((val - 4.0).abs() < 1e-12, "got {val}");
    }

    #[test]
    fn jtp_energy_of_zero_field() {
        let g = Grid::centered(2, 1.0, 8).unwrap();
        let u = ScalarField::constant(g, 0.0);
        let b = jtp_energy(&u, &params(2.0, 1.0, 1.0));
        assert_eq!(b.dirichlet, 0.0);
        assert_eq!(b.bulk_plus, 0.0);
        assert_eq!(b.bulk_minus, 0.0);
        assert_eq!(b.total, 0.0);
    }

    #[test]
    fn jtp_energy_of_unit_two_plane() {
        // H with α = β = 1, e = e₂ on [−1,1]², p = 2, λ± = 1:
        // analytic integration gives 4 + 2 + 2.
        let g = Grid::centered(2, 1.0, 64).unwrap();
        let tp = TwoPlane::with_slopes(1.0, 1.0, [0.0, 1.0, 0.0]).unwrap();
        let u = ScalarField::from_fn(g, |x| tp.eval(x));
        let b = jtp_energy(&u, &params(2.0, 1.0, 1.0));
        assert!((b.dirichlet - 4.0).abs() < 1e-12, "dirichlet {}", b.dirichlet);
        assert!((b.bulk_plus - 2.0).abs() < 1e-12, "bulk_plus {}", b.bulk_plus);
        assert!((b.bulk_minus - 2.0).abs() < 1e-12, "bulk_minus {}", b.bulk_minus);
        assert!((b.total - 8.0).abs() < 1e-12);
    }

    #[test]
    fn jtp_energy_of_one_phase_ramp() {
        let g = Grid::centered(2, 1.0, 64).unwrap();
        let u = ScalarField::from_fn(g, |x| x[1].max(0.0));
        let b = jtp_energy(&u, &params(2.0, 1.0, 1.0));
        assert!((b.dirichlet - 2.0).abs() < 1e-12, "dirichlet {}", b.dirichlet);
        assert!((b.bulk_plus - 2.0).abs() < 1e-12, "bulk_plus {}", b.bulk_plus);
        assert_eq!(b.bulk_minus, 0.0);
    }

    #[test]
    fn breakdown_components_sum() {
        let g = Grid::centered(2, 1.0, 32).unwrap();
        let u = ScalarField::from_fn(g, |x| (2.0 * x[0]).sin() * (x[1] + 0.3));
        let b = jtp_energy(&u, &params(2.5, 1.3, 0.8));
        assert!((b.total - (b.dirichlet + b.bulk_plus + b.bulk_minus)).abs() <= 1e-12 * b.total);
        assert!(b.dirichlet >= 0.0 && b.bulk_plus >= 0.0 && b.bulk_minus >= 0.0);
    }

    #[test]
    fn positive_fraction_against_monte_carlo() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for dim in 1..=3usize {
            for _ in 0..40 {
                let mut grad = [0.0f64; 3];
                let mut h = [0.0f64; 3];
                for a in 0..dim {
                    grad[a] = rng.gen_range(-2.0..2.0);
                    h[a] = rng.gen_range(0.3..1.5);
                }
                let mean = rng.gen_range(-1.0..1.0);
                let exact = positive_fraction(dim, mean, &grad, &h);
                let samples = 40_000;
                let mut hits = 0usize;
                for _ in 0..samples {
                    let mut v = mean;
                    for a in 0..dim {
                        let x: f64 = rng.gen_range(-0.5..0.5) * h[a];
                        v += grad[a] * x;
                    }
                    if v > 0.0 {
                        hits += 1;
                    }
                }
                let mc = hits as f64 / samples as f64;
                assert!(
                    (exact - mc).abs() < 0.02,
                    "dim {dim}: exact {exact}, mc {mc}"
                );
            }
        }
    }

    #[test]
    fn p_harmonic_1d_affine() {
        // u(0)=0, u(1)=1: the affine interpolant is p-harmonic for every p.
        for &p in &[1.5, 2.0, 3.0] {
            let g = Grid::new(1, &[[0.0, 1.0]], &[64]).unwrap();
            let bc = ScalarField::from_fn(g, |x| x[0]);
            let sol = solve_p_harmonic(&bc, &params(p, 1.0, 1.0), 1e-9).unwrap();
            g.for_each_node(|c| {
                let x = g.node_pos(c)[0];
                assert!(
                    (sol.value(g.flat(c)) - x).abs() < 1e-6,
                    "p = {p}: deviation at {x}"
                );
            });
        }
    }

    #[test]
    fn p_harmonic_constant_data() {
        let g = Grid::centered(2, 1.0, 12).unwrap();
        let bc = ScalarField::constant(g, 2.5);
        let sol = solve_p_harmonic(&bc, &params(4.0, 1.0, 1.0), 1e-10).unwrap();
        for v in sol.values() {
            assert!((v - 2.5).abs() < 1e-8);
        }
    }

    #[test]
    fn minimize_jtp_zero_data_stays_dead() {
        let g = Grid::centered(2, 1.0, 16).unwrap();
        let bc = ScalarField::constant(g, 0.0);
        let (u, report) =
            minimize_jtp_report(&bc, &params(2.0, 1.0, 1.0), &MinimizeOptions::default()).unwrap();
        assert!(u.max_abs() <= 1e-12);
        assert!(report.breakdown.total <= 1e-12);
    }

    #[test]
    fn minimize_jtp_respects_maximum_principle() {
        let g = Grid::centered(2, 1.0, 24).unwrap();
        let pr = params(2.0, 1.0, 0.8);
        let tp = crate::twoplane::make_two_plane(1.2, [0.0, 1.0, 0.0], &pr).unwrap();
        let bc = ScalarField::from_fn(g, |x| tp.eval(x) + 0.05 * (3.0 * x[0]).sin());
        let (u, report) = minimize_jtp_report(&bc, &pr, &MinimizeOptions::default()).unwrap();
        assert!(report.max_principle_slack <= 1e-8);
        assert!(u.max_abs() <= bc.max_abs_dirichlet() + 1e-8);
    }
}
