//! Solvers for the linearized interface problems: the anisotropic operator
//! `L_p(v) = Δv + (p−2)∂ₙₙv`, the transmission problem with flux matching
//! `a₊ ∂ₙv₊ = a₋ ∂ₙv₋` across the hyperplane {xₙ=0}, and the two-membrane
//! problem, solved through its decomposition into a Neumann problem and a
//! thin-obstacle problem on the lower half after the (p−1)^{1/2} change of
//! variables.
//!
//! Discrete interface quantities come in two flavours. The variational
//! slope (the energy-consistent thin-row residual scaled by the spacing) is
//! what the discrete problems control exactly at convergence and is a
//! second-order consistent discretization of ∂ₙ; it is used for the
//! complementarity and membrane interface conditions. One-sided three-point
//! differences are kept for the transmission problem, whose solutions are
//! smooth up to the interface, and as diagnostics elsewhere.

use serde::{Deserialize, Serialize};

use crate::{Error, Grid, Point, Result, ScalarField};

/// The constants of the two-membrane problem: phase constants, the coupling
/// constant ℓ ≥ 0, and the exponent p.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MembraneParams {
    pub lambda_plus: f64,
    pub lambda_minus: f64,
    pub ell: f64,
    pub p: f64,
}

impl MembraneParams {
    pub fn new(lambda_plus: f64, lambda_minus: f64, ell: f64, p: f64) -> Result<Self> {
        if !(lambda_plus > 0.0) || !(lambda_minus > 0.0) {
            return Err(Error::config("membrane constants λ± must be positive"));
        }
        if !(ell >= 0.0) {
            return Err(Error::config("ell must be nonnegative"));
        }
        if !(p > 1.0) {
            return Err(Error::config("p must exceed 1"));
        }
        Ok(MembraneParams {
            lambda_plus,
            lambda_minus,
            ell,
            p,
        })
    }
}

/// A pair of fields over the two closed halves of a box split by the
/// hyperplane {xₙ=0} (normal axis = last axis). Values are stored on the
/// full grid; `v_plus` is meaningful on planes at or above the interface,
/// `v_minus` at or below. Both carry interface values, which may differ
/// (the membranes may jump).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HalfDomainPair {
    pub grid: Grid,
    /// Node-plane index of {xₙ=0} along the normal axis.
    pub interface_plane: usize,
    pub v_plus: Vec<f64>,
    pub v_minus: Vec<f64>,
}

impl HalfDomainPair {
    pub fn normal_axis(&self) -> usize {
        self.grid.dim() - 1
    }

    /// Iterate interface node indices (all planes k = interface_plane).
    pub fn interface_nodes(&self) -> Vec<usize> {
        let g = &self.grid;
        let nz = g.dim() - 1;
        let mut out = Vec::new();
        g.for_each_node(|c| {
            if c[nz] == self.interface_plane {
                out.push(g.flat(c));
            }
        });
        out
    }
}

/// Apply `L_p(v) = Δv + (p−2) ∂ₙₙ v` with second-order central stencils.
/// Boundary nodes are set to zero.
pub fn apply_lp(v: &ScalarField, p: f64) -> ScalarField {
    let g = *v.grid();
    let dim = g.dim();
    let nz = dim - 1;
    let mut out = ScalarField::constant(g, 0.0);
    g.for_each_node(|c| {
        if g.is_boundary(c) {
            return;
        }
        let mut acc = 0.0;
        for a in 0..dim {
            let h2 = g.spacing(a) * g.spacing(a);
            let mut cm = c;
            cm[a] -= 1;
            let mut cp = c;
            cp[a] += 1;
            let second =
                (v.value(g.flat(cp)) - 2.0 * v.value(g.flat(c)) + v.value(g.flat(cm))) / h2;
            acc += if a == nz { (p - 1.0) * second } else { second };
        }
        let idx = g.flat(c);
        out.values_mut()[idx] = acc;
    });
    out
}

/// Max |L_p| over interior nodes of one half of a pair (the interface plane
/// itself is excluded: the open halves only).
pub fn lp_interior_residual(pair: &HalfDomainPair, p: f64, upper: bool) -> f64 {
    let g = &pair.grid;
    let dim = g.dim();
    let nz = dim - 1;
    let k0 = pair.interface_plane;
    let values = if upper { &pair.v_plus } else { &pair.v_minus };
    let mut worst = 0.0f64;
    g.for_each_node(|c| {
        if g.is_boundary(c) || c[nz] == k0 {
            return;
        }
        if (upper && c[nz] < k0) || (!upper && c[nz] > k0) {
            return;
        }
        let mut acc = 0.0;
        for a in 0..dim {
            let h2 = g.spacing(a) * g.spacing(a);
            let mut cm = c;
            cm[a] -= 1;
            let mut cp = c;
            cp[a] += 1;
            let second =
                (values[g.flat(cp)] - 2.0 * values[g.flat(c)] + values[g.flat(cm)]) / h2;
            acc += if a == nz { (p - 1.0) * second } else { second };
        }
        worst = worst.max(acc.abs());
    });
    worst
}

/// One-sided three-point (second-order) normal derivative at an interface
/// node, from above (`upper = true`) or below.
pub fn one_sided_normal(pair: &HalfDomainPair, flat_idx: usize, upper: bool) -> f64 {
    let g = &pair.grid;
    let nz = g.dim() - 1;
    let h = g.spacing(nz);
    let c = g.coords(flat_idx);
    let values = if upper { &pair.v_plus } else { &pair.v_minus };
    let mut c1 = c;
    let mut c2 = c;
    if upper {
        c1[nz] += 1;
        c2[nz] += 2;
        (-3.0 * values[g.flat(c)] + 4.0 * values[g.flat(c1)] - values[g.flat(c2)]) / (2.0 * h)
    } else {
        c1[nz] -= 1;
        c2[nz] -= 2;
        (3.0 * values[g.flat(c)] - 4.0 * values[g.flat(c1)] + values[g.flat(c2)]) / (2.0 * h)
    }
}

fn interface_plane_of(g: &Grid) -> Result<usize> {
    let nz = g.dim() - 1;
    let h = g.spacing(nz);
    let k = (-g.lo()[nz] / h).round();
    if k < 1.0 || k > (g.n_cells(nz) - 1) as f64 || (g.lo()[nz] + k * h).abs() > 1e-10 * h.max(1.0)
    {
        return Err(Error::config(
            "the hyperplane {xₙ=0} must fall on an interior grid plane of the normal axis",
        ));
    }
    Ok(k as usize)
}

#[derive(Clone, Copy, PartialEq)]
enum NodeKind {
    Dirichlet,
    Interior,
    Thin,
    Interface,
}

/// Successive over-relaxation on the interface/half-domain stencils.
/// `project` clamps thin-row values from below at zero (the thin obstacle).
struct RelaxProblem {
    grid: Grid,
    kinds: Vec<NodeKind>,
    /// Tangential-coefficient pair (upper, lower) for interface rows; the
    /// anisotropy factor multiplying the normal second difference.
    coef_up: f64,
    coef_dn: f64,
    normal_factor: f64,
    project: bool,
}

struct RelaxOutcome {
    sweeps: usize,
    residual: f64,
}

impl RelaxProblem {
    fn diag_and_rhs(&self, values: &[f64], c: [usize; 3]) -> (f64, f64) {
        let g = &self.grid;
        let dim = g.dim();
        let nz = dim - 1;
        let kind = self.kinds[g.flat(c)];
        let mut diag = 0.0;
        let mut rhs = 0.0;
        match kind {
            NodeKind::Interior => {
                for a in 0..dim {
                    let w = if a == nz { self.normal_factor } else { 1.0 };
                    let inv_h2 = w / (g.spacing(a) * g.spacing(a));
                    let mut cm = c;
                    cm[a] -= 1;
                    let mut cp = c;
                    cp[a] += 1;
                    diag += 2.0 * inv_h2;
                    rhs += (values[g.flat(cm)] + values[g.flat(cp)]) * inv_h2;
                }
            }
            NodeKind::Thin => {
                // Variational Neumann/obstacle row: half-weight tangential
                // couplings, single vertical edge below.
                for a in 0..dim - 1 {
                    let inv_h2 = 0.5 / (g.spacing(a) * g.spacing(a));
                    let mut cm = c;
                    cm[a] -= 1;
                    let mut cp = c;
                    cp[a] += 1;
                    diag += 2.0 * inv_h2;
                    rhs += (values[g.flat(cm)] + values[g.flat(cp)]) * inv_h2;
                }
                let inv_h2 = 1.0 / (g.spacing(nz) * g.spacing(nz));
                let mut cd = c;
                cd[nz] -= 1;
                diag += inv_h2;
                rhs += values[g.flat(cd)] * inv_h2;
            }
            NodeKind::Interface => {
                // Flux-weighted row: a₊ above, a₋ below, averaged tangential.
                let avg = 0.5 * (self.coef_up + self.coef_dn);
                for a in 0..dim - 1 {
                    let inv_h2 = avg / (g.spacing(a) * g.spacing(a));
                    let mut cm = c;
                    cm[a] -= 1;
                    let mut cp = c;
                    cp[a] += 1;
                    diag += 2.0 * inv_h2;
                    rhs += (values[g.flat(cm)] + values[g.flat(cp)]) * inv_h2;
                }
                let inv_h2 = self.normal_factor / (g.spacing(nz) * g.spacing(nz));
                let mut cu = c;
                cu[nz] += 1;
                let mut cd = c;
                cd[nz] -= 1;
                diag += (self.coef_up + self.coef_dn) * inv_h2;
                rhs += (self.coef_up * values[g.flat(cu)] + self.coef_dn * values[g.flat(cd)])
                    * inv_h2;
            }
            NodeKind::Dirichlet => {}
        }
        (diag, rhs)
    }

    fn sweep(&self, values: &mut [f64], omega: f64, pinned: Option<&[bool]>) -> f64 {
        let g = self.grid;
        let mut worst = 0.0f64;
        g.for_each_node(|c| {
            let idx = g.flat(c);
            if self.kinds[idx] == NodeKind::Dirichlet {
                return;
            }
            if let Some(p) = pinned {
                if p[idx] {
                    return;
                }
            }
            let (diag, rhs) = self.diag_and_rhs(values, c);
            let gs = rhs / diag;
            let mut new = values[idx] + omega * (gs - values[idx]);
            if self.project && self.kinds[idx] == NodeKind::Thin && new < 0.0 {
                new = 0.0;
            }
            let moved = (new - values[idx]).abs();
            // Projection can mask a genuine residual; measure against the
            // unconstrained target for inactive nodes only.
            let r = if self.project && self.kinds[idx] == NodeKind::Thin && new == 0.0 {
                // Active node: violation only if the unconstrained target is
                // positive (the equation pushes off the obstacle).
                gs.max(0.0)
            } else {
                moved.max((gs - new).abs())
            };
            worst = worst.max(r);
            values[idx] = new;
        });
        worst
    }

    fn solve(
        &self,
        values: &mut [f64],
        tol: f64,
        max_sweeps: usize,
        pinned: Option<&[bool]>,
    ) -> RelaxOutcome {
        let n_max = (0..self.grid.dim())
            .map(|a| self.grid.n_cells(a))
            .max()
            .unwrap();
        let omega = 2.0 / (1.0 + (std::f64::consts::PI / n_max as f64).sin());
        let mut residual = f64::INFINITY;
        for sweep in 1..=max_sweeps {
            residual = self.sweep(values, omega, pinned);
            if residual <= tol {
                return RelaxOutcome {
                    sweeps: sweep,
                    residual,
                };
            }
        }
        RelaxOutcome {
            sweeps: max_sweeps,
            residual,
        }
    }
}

fn half_kinds(g: &Grid) -> Vec<NodeKind> {
    // Lower-half grid: Dirichlet on sides and bottom, thin row on top.
    let dim = g.dim();
    let nz = dim - 1;
    let top = g.n_cells(nz);
    let mut kinds = vec![NodeKind::Interior; g.node_count()];
    g.for_each_node(|c| {
        let idx = g.flat(c);
        let side = (0..dim - 1).any(|a| c[a] == 0 || c[a] == g.n_cells(a));
        if side || c[nz] == 0 {
            kinds[idx] = NodeKind::Dirichlet;
        } else if c[nz] == top {
            kinds[idx] = NodeKind::Thin;
        }
    });
    kinds
}

fn check_lower_half_grid(g: &Grid) -> Result<()> {
    if g.dim() < 2 {
        return Err(Error::config(
            "half-domain problems need at least one tangential axis",
        ));
    }
    let nz = g.dim() - 1;
    if g.hi()[nz].abs() > 1e-12 * g.spacing(nz) {
        return Err(Error::config(
            "lower-half grids must end at xₙ = 0 (the thin boundary)",
        ));
    }
    Ok(())
}

/// Variational normal slope at a thin node: the energy-consistent thin-row
/// residual scaled by the normal spacing. Exact on linear fields; equals
/// ∂ₙu + O(h²) on discrete-harmonic ones.
pub fn thin_slope(field: &ScalarField, flat_idx: usize) -> f64 {
    let g = field.grid();
    let dim = g.dim();
    let nz = dim - 1;
    let c = g.coords(flat_idx);
    let values = field.values();
    let mut r = 0.0;
    for a in 0..dim - 1 {
        if c[a] == 0 || c[a] == g.n_cells(a) {
            continue;
        }
        let inv_h2 = 0.5 / (g.spacing(a) * g.spacing(a));
        let mut cm = c;
        cm[a] -= 1;
        let mut cp = c;
        cp[a] += 1;
        r += (2.0 * values[flat_idx] - values[g.flat(cm)] - values[g.flat(cp)]) * inv_h2;
    }
    let hn = g.spacing(nz);
    let mut cd = c;
    cd[nz] -= 1;
    r += (values[flat_idx] - values[g.flat(cd)]) / (hn * hn);
    r * hn
}

/// Harmonic function on the lower half with zero normal derivative on the
/// thin boundary {xₙ=0} (variational Neumann row) and Dirichlet data from
/// `bc` on the sides and bottom.
pub fn neumann_harmonic(
    grid: &Grid,
    bc: impl Fn(&Point) -> f64,
    tol: f64,
) -> Result<ScalarField> {
    check_lower_half_grid(grid)?;
    let kinds = half_kinds(grid);
    let mut field = ScalarField::from_fn(*grid, &bc);
    // Free nodes start from the boundary interpolant; fine as a seed.
    let problem = RelaxProblem {
        grid: *grid,
        kinds: kinds.clone(),
        coef_up: 1.0,
        coef_dn: 1.0,
        normal_factor: 1.0,
        project: false,
    };
    let scale = 1.0 + field.max_abs();
    let out = problem.solve(field.values_mut(), tol * scale, 200_000, None);
    if out.residual > tol * scale {
        return Err(Error::NonConvergence {
            message: "Neumann relaxation hit the sweep cap".into(),
            residual: out.residual,
            iters: out.sweeps,
            last: Some(Box::new(field)),
            trace: vec![],
        });
    }
    let mask: Vec<bool> = kinds.iter().map(|k| *k != NodeKind::Interior).collect();
    ScalarField::from_parts(*grid, field.values().to_vec(), mask)
}

/// Complementarity residuals of a thin-obstacle solution, measured with the
/// variational slope (value ≥ 0 is exact after projection; the slope is the
/// quantity the discrete problem drives to the KKT signs).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ComplementarityTriple {
    /// min over thin nodes of w (≥ −tol required).
    pub min_value: f64,
    /// min over thin nodes of the variational ∂ₙw (≥ −tol required).
    pub min_slope: f64,
    /// max over thin nodes of |w · ∂ₙw| (≤ tol required).
    pub max_product: f64,
}

/// Thin-obstacle solution on the lower half.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SignoriniSolution {
    pub field: ScalarField,
    pub triple: ComplementarityTriple,
    pub sweeps: usize,
}

/// Solve the thin-obstacle problem: harmonic below, and on {xₙ=0}
/// w ≥ 0, ∂ₙw ≥ 0, w·∂ₙw = 0, with Dirichlet data on sides and bottom.
/// Projected relaxation sweeps with an active-set polish.
pub fn solve_signorini(
    grid: &Grid,
    bc: impl Fn(&Point) -> f64,
    tol: f64,
) -> Result<SignoriniSolution> {
    check_lower_half_grid(grid)?;
    let kinds = half_kinds(grid);
    let mut field = ScalarField::from_fn(*grid, &bc);
    // Feasible start on the thin row.
    let g = *grid;
    let nz = g.dim() - 1;
    let top = g.n_cells(nz);
    g.for_each_node(|c| {
        if c[nz] == top && kinds[g.flat(c)] == NodeKind::Thin {
            let idx = g.flat(c);
            if field.values()[idx] < 0.0 {
                field.values_mut()[idx] = 0.0;
            }
        }
    });
    let problem = RelaxProblem {
        grid: g,
        kinds: kinds.clone(),
        coef_up: 1.0,
        coef_dn: 1.0,
        normal_factor: 1.0,
        project: true,
    };
    let scale = 1.0 + field.max_abs();
    let mut total_sweeps = 0usize;
    let mut converged = false;
    // Projected sweeps, then pin the active set and polish the inactive
    // equations; release any pinned node whose multiplier went negative.
    for _round in 0..6 {
        let out = problem.solve(field.values_mut(), 0.2 * tol * scale, 120_000, None);
        total_sweeps += out.sweeps;
        if out.residual > 0.2 * tol * scale {
            break;
        }
        let mut pinned = vec![false; g.node_count()];
        g.for_each_node(|c| {
            let idx = g.flat(c);
            if kinds[idx] == NodeKind::Thin && field.values()[idx] <= 0.0 {
                pinned[idx] = true;
            }
        });
        let out2 = problem.solve(field.values_mut(), 0.05 * tol * scale, 120_000, Some(&pinned));
        total_sweeps += out2.sweeps;
        // KKT sign check on the pinned set.
        let mut violated = false;
        g.for_each_node(|c| {
            let idx = g.flat(c);
            if pinned[idx] && thin_slope(&field, idx) < -0.5 * tol * scale {
                violated = true;
            }
        });
        if !violated {
            converged = true;
            break;
        }
    }
    let triple = complementarity_triple(&field, &kinds);
    if !converged
        || triple.min_value < -tol * scale
        || triple.min_slope < -tol * scale
        || triple.max_product > tol * scale * scale
    {
        return Err(Error::NonConvergence {
            message: "thin-obstacle relaxation did not reach complementarity".into(),
            residual: (-triple.min_slope)
                .max(-triple.min_value)
                .max(triple.max_product),
            iters: total_sweeps,
            last: Some(Box::new(field)),
            trace: vec![triple.min_value, triple.min_slope, triple.max_product],
        });
    }
    let mask: Vec<bool> = kinds.iter().map(|k| *k != NodeKind::Interior).collect();
    let field = ScalarField::from_parts(g, field.values().to_vec(), mask)?;
    Ok(SignoriniSolution {
        field,
        triple,
        sweeps: total_sweeps,
    })
}

fn complementarity_triple(field: &ScalarField, kinds: &[NodeKind]) -> ComplementarityTriple {
    let g = field.grid();
    let mut min_value = f64::INFINITY;
    let mut min_slope = f64::INFINITY;
    let mut max_product = 0.0f64;
    g.for_each_node(|c| {
        let idx = g.flat(c);
        if kinds[idx] != NodeKind::Thin {
            return;
        }
        let v = field.value(idx);
        let s = thin_slope(field, idx);
        min_value = min_value.min(v);
        min_slope = min_slope.min(s);
        max_product = max_product.max((v * s).abs());
    });
    ComplementarityTriple {
        min_value,
        min_slope,
        max_product,
    }
}

/// Residual summary of a transmission solve.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TransmissionResiduals {
    /// Max |L_p v| over the open halves (matched stencil).
    pub lp_plus: f64,
    pub lp_minus: f64,
    /// Max |a₊ ∂ₙv₊ − a₋ ∂ₙv₋| over interior interface nodes, one-sided
    /// three-point differences.
    pub flux_mismatch: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransmissionSolution {
    pub pair: HalfDomainPair,
    pub residuals: TransmissionResiduals,
    pub sweeps: usize,
}

/// Solve the transmission problem on a box split by {xₙ=0}: `L_p(v±) = 0`
/// in each open half, continuity across, and flux matching
/// `α∞^p ∂ₙv₊ = β∞^p ∂ₙv₋`, with Dirichlet data `bc` on the outer boundary.
pub fn solve_transmission(
    grid: &Grid,
    bc: impl Fn(&Point) -> f64,
    alpha_inf: f64,
    beta_inf: f64,
    p: f64,
    tol: f64,
) -> Result<TransmissionSolution> {
    if grid.dim() < 2 {
        return Err(Error::config(
            "the transmission problem needs at least one tangential axis",
        ));
    }
    if !(alpha_inf > 0.0) || !(beta_inf > 0.0) {
        return Err(Error::domain("transmission weights must be positive"));
    }
    if !(p > 1.0) {
        return Err(Error::domain("p must exceed 1"));
    }
    let k0 = interface_plane_of(grid)?;
    let g = *grid;
    let nz = g.dim() - 1;
    let mut kinds = vec![NodeKind::Interior; g.node_count()];
    g.for_each_node(|c| {
        let idx = g.flat(c);
        if g.is_boundary(c) {
            kinds[idx] = NodeKind::Dirichlet;
        } else if c[nz] == k0 {
            kinds[idx] = NodeKind::Interface;
        }
    });
    let a_up = alpha_inf.powf(p);
    let a_dn = beta_inf.powf(p);
    let problem = RelaxProblem {
        grid: g,
        kinds: kinds.clone(),
        coef_up: a_up,
        coef_dn: a_dn,
        normal_factor: p - 1.0,
        project: false,
    };
    let mut field = ScalarField::from_fn(g, &bc);
    let scale = 1.0 + field.max_abs();
    let out = problem.solve(field.values_mut(), tol * scale, 300_000, None);
    if out.residual > tol * scale {
        return Err(Error::NonConvergence {
            message: "transmission relaxation hit the sweep cap".into(),
            residual: out.residual,
            iters: out.sweeps,
            last: Some(Box::new(field)),
            trace: vec![],
        });
    }
    let values = field.values().to_vec();
    let pair = HalfDomainPair {
        grid: g,
        interface_plane: k0,
        v_plus: values.clone(),
        v_minus: values,
    };
    let mut flux = 0.0f64;
    for idx in pair.interface_nodes() {
        let c = g.coords(idx);
        if g.is_boundary(c) {
            continue;
        }
        let dp = one_sided_normal(&pair, idx, true);
        let dm = one_sided_normal(&pair, idx, false);
        flux = flux.max((a_up * dp - a_dn * dm).abs());
    }
    let residuals = TransmissionResiduals {
        lp_plus: lp_interior_residual(&pair, p, true),
        lp_minus: lp_interior_residual(&pair, p, false),
        flux_mismatch: flux,
    };
    Ok(TransmissionSolution {
        pair,
        residuals,
        sweeps: out.sweeps,
    })
}

/// Interface residuals of a two-membrane solve, through the variational
/// slopes of the underlying Neumann and thin-obstacle fields.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MembraneResiduals {
    pub lp_plus: f64,
    pub lp_minus: f64,
    /// min over the interface of λ±^p ∂ₙv± + ℓ (≥ −tol required).
    pub min_sign_plus: f64,
    pub min_sign_minus: f64,
    /// max over the jump set of |λ±^p ∂ₙv± + ℓ| (= 0 there).
    pub jump_equality: f64,
    /// max over the contact set of |λ₊^p ∂ₙv₊ − λ₋^p ∂ₙv₋|.
    pub contact_flux: f64,
    /// min over the interface of v₋ − v₊ (≥ −tol required).
    pub min_ordering: f64,
    /// Composition identity: max |w± − (w̃ ∓ λ±^{-p} w_S)| rebuilt from the
    /// returned pieces.
    pub composition: f64,
    /// Diagnostics: the same flux mismatch through raw one-sided
    /// three-point differences (O(√h) noise near contact transitions).
    pub contact_flux_three_point: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TwoMembraneSolution {
    pub pair: HalfDomainPair,
    /// Harmonic part on the lower w-half (zero thin-row slope).
    pub w_tilde: ScalarField,
    /// Thin-obstacle part on the lower w-half.
    pub w_signorini: ScalarField,
    pub residuals: MembraneResiduals,
    pub triple: ComplementarityTriple,
    pub jump_nodes: usize,
    pub contact_nodes: usize,
}

/// Solve the two-membrane problem on a symmetric box: `L_p(v±) = 0` in the
/// open halves, `v₊ ≤ v₋` on {xₙ=0}, `λ±^p ∂ₙv± + ℓ ≥ 0` with equality on
/// the jump set, and flux matching on the contact set.
///
/// The solve goes through the change of variables
/// `w±(x) = v±(x', √(p−1)·xₙ) + ℓ√(p−1)·λ±^{−p}·xₙ` and the composition
/// `w±(x', xₙ) = w̃(x', ∓xₙ) ∓ λ±^{−p}·w_S(x', ∓xₙ)` with `w̃` the Neumann
/// part and `w_S` the thin-obstacle part, both on the lower half of the
/// stretched grid; the stretched grid shares node indices with the input
/// grid, so the composition and the inverse change of variables are exact
/// arithmetic.
pub fn solve_two_membrane(
    grid: &Grid,
    bc_plus: impl Fn(&Point) -> f64,
    bc_minus: impl Fn(&Point) -> f64,
    mp: &MembraneParams,
    tol: f64,
) -> Result<TwoMembraneSolution> {
    if grid.dim() < 2 {
        return Err(Error::config(
            "the two-membrane problem needs at least one tangential axis",
        ));
    }
    let g = *grid;
    let nz = g.dim() - 1;
    let k0 = interface_plane_of(&g)?;
    if 2 * k0 != g.n_cells(nz) {
        return Err(Error::config(
            "the membrane grid must be symmetric about {xₙ=0}",
        ));
    }
    let stretch = (mp.p - 1.0).sqrt();
    let lam_p = mp.lambda_plus.powf(mp.p);
    let lam_m = mp.lambda_minus.powf(mp.p);
    let inv_p = 1.0 / lam_p;
    let inv_m = 1.0 / lam_m;

    // Stretched lower-half grid: same tangential axes, normal spacing h/√(p−1).
    let hv = g.spacing(nz);
    let hw = hv / stretch;
    let mut ext = Vec::new();
    let mut nc = Vec::new();
    for a in 0..g.dim() - 1 {
        ext.push([g.lo()[a], g.hi()[a]]);
        nc.push(g.n_cells(a));
    }
    ext.push([-(k0 as f64) * hw, 0.0]);
    nc.push(k0);
    let wgrid = Grid::new(g.dim(), &ext, &nc)?;

    // Dirichlet traces for w̃ and w_S from the v± traces via the composition.
    let vplane = |c: [usize; 3], plane: usize| -> Point {
        let mut cv = c;
        cv[nz] = plane;
        g.node_pos(cv)
    };
    let traces = |c: [usize; 3]| -> (f64, f64) {
        // w node at plane j ↔ mirrored upper v plane 2k0 − j and lower v
        // plane j.
        let j = c[nz];
        let zn = (j as f64 - k0 as f64) * hw; // w-node normal coordinate ≤ 0
        let x_up = vplane(c, 2 * k0 - j);
        let x_dn = vplane(c, j);
        let w_plus_mirror = bc_plus(&x_up) + mp.ell * stretch * inv_p * (-zn);
        let w_minus = bc_minus(&x_dn) + mp.ell * stretch * inv_m * zn;
        let ws = (w_minus - w_plus_mirror) / (inv_p + inv_m);
        let wt = (inv_m * w_plus_mirror + inv_p * w_minus) / (inv_p + inv_m);
        (wt, ws)
    };

    // Ordering precondition where both traces are prescribed on {xₙ=0}.
    let mut order_violation = 0.0f64;
    g.for_each_node(|c| {
        if c[nz] == k0 && g.is_boundary(c) {
            let x = g.node_pos(c);
            order_violation = order_violation.max(bc_plus(&x) - bc_minus(&x));
        }
    });
    let scale = {
        let mut m = 0.0f64;
        g.for_each_node(|c| {
            if g.is_boundary(c) {
                let x = g.node_pos(c);
                m = m.max(bc_plus(&x).abs()).max(bc_minus(&x).abs());
            }
        });
        1.0 + m
    };
    if order_violation > 1e-10 * scale {
        return Err(Error::domain(format!(
            "boundary traces violate the ordering v₊ ≤ v₋ on the interface (by {order_violation:.3e})"
        )));
    }

    let w_tilde = neumann_harmonic(&wgrid, |x| {
        let c = nearest_node(&wgrid, x);
        traces(c).0
    }, tol)?;
    let signorini = solve_signorini(&wgrid, |x| {
        let c = nearest_node(&wgrid, x);
        traces(c).1
    }, tol)?;
    let w_s = &signorini.field;

    // Reconstruct v± on the input grid; node indices line up by design.
    let mut v_plus = vec![0.0; g.node_count()];
    let mut v_minus = vec![0.0; g.node_count()];
    g.for_each_node(|c| {
        let idx = g.flat(c);
        let m = c[nz];
        let xn = (m as f64 - k0 as f64) * hv;
        if m >= k0 {
            let mut cw = c;
            cw[nz] = 2 * k0 - m; // mirror into the lower w-half
            let widx = wgrid.flat(cw);
            let wp = w_tilde.value(widx) - inv_p * w_s.value(widx);
            v_plus[idx] = wp - mp.ell * inv_p * xn;
        }
        if m <= k0 {
            let mut cw = c;
            cw[nz] = m;
            let widx = wgrid.flat(cw);
            let wm = w_tilde.value(widx) + inv_m * w_s.value(widx);
            v_minus[idx] = wm - mp.ell * inv_m * xn;
        }
    });
    let pair = HalfDomainPair {
        grid: g,
        interface_plane: k0,
        v_plus,
        v_minus,
    };

    // Interface residuals through the variational slopes of w̃ and w_S.
    let wtop = wgrid.n_cells(wgrid.dim() - 1);
    let jump_threshold = 10.0 * tol * scale;
    let mut min_sign_plus = f64::INFINITY;
    let mut min_sign_minus = f64::INFINITY;
    let mut jump_equality = 0.0f64;
    let mut contact_flux = 0.0f64;
    let mut contact_flux_3pt = 0.0f64;
    let mut min_ordering = f64::INFINITY;
    let mut jump_nodes = 0usize;
    let mut contact_nodes = 0usize;
    wgrid.for_each_node(|c| {
        let side = (0..wgrid.dim() - 1).any(|a| c[a] == 0 || c[a] == wgrid.n_cells(a));
        if c[wgrid.dim() - 1] != wtop || side {
            return;
        }
        let widx = wgrid.flat(c);
        let st = thin_slope(&w_tilde, widx);
        let ss = thin_slope(w_s, widx);
        // λ₊^p ∂ₙv₊ + ℓ = λ₊^p(−slope(w̃) + λ₊^{−p} slope(w_S)) / √(p−1)
        let sign_plus = lam_p * (-st + inv_p * ss) / stretch;
        let sign_minus = lam_m * (st + inv_m * ss) / stretch;
        min_sign_plus = min_sign_plus.min(sign_plus);
        min_sign_minus = min_sign_minus.min(sign_minus);
        let gap = (inv_p + inv_m) * w_s.value(widx);
        min_ordering = min_ordering.min(gap);
        if w_s.value(widx) > jump_threshold {
            jump_nodes += 1;
            jump_equality = jump_equality.max(sign_plus.abs()).max(sign_minus.abs());
        } else {
            contact_nodes += 1;
            contact_flux = contact_flux.max((sign_plus - sign_minus).abs());
            // Diagnostic: the same through raw one-sided differences on v±.
            let mut cv = c;
            cv[nz] = k0;
            let vidx = g.flat(cv);
            let dp = one_sided_normal(&pair, vidx, true);
            let dm = one_sided_normal(&pair, vidx, false);
            contact_flux_3pt = contact_flux_3pt.max((lam_p * dp - lam_m * dm).abs());
        }
    });

    // Composition identity: rebuild w± from the returned pieces and from
    // the returned v±, and compare.
    let mut composition = 0.0f64;
    g.for_each_node(|c| {
        let m = c[nz];
        let idx = g.flat(c);
        let xn = (m as f64 - k0 as f64) * hv;
        if m >= k0 {
            let mut cw = c;
            cw[nz] = 2 * k0 - m;
            let widx = wgrid.flat(cw);
            let from_parts = w_tilde.value(widx) - inv_p * w_s.value(widx);
            let from_v = pair.v_plus[idx] + mp.ell * inv_p * xn;
            composition = composition.max((from_parts - from_v).abs());
        }
        if m <= k0 {
            let mut cw = c;
            cw[nz] = m;
            let widx = wgrid.flat(cw);
            let from_parts = w_tilde.value(widx) + inv_m * w_s.value(widx);
            let from_v = pair.v_minus[idx] + mp.ell * inv_m * xn;
            composition = composition.max((from_parts - from_v).abs());
        }
    });

    let residuals = MembraneResiduals {
        lp_plus: lp_interior_residual(&pair, mp.p, true),
        lp_minus: lp_interior_residual(&pair, mp.p, false),
        min_sign_plus,
        min_sign_minus,
        jump_equality,
        contact_flux,
        min_ordering,
        composition,
        contact_flux_three_point: contact_flux_3pt,
    };
    Ok(TwoMembraneSolution {
        pair,
        w_tilde,
        w_signorini: signorini.field.clone(),
        residuals,
        triple: signorini.triple,
        jump_nodes,
        contact_nodes,
    })
}

fn nearest_node(g: &Grid, x: &Point) -> [usize; 3] {
    let mut c = [0usize; 3];
    for a in 0..g.dim() {
        let t = ((x[a] - g.lo()[a]) / g.spacing(a)).round();
        c[a] = (t.max(0.0) as usize).min(g.n_cells(a));
    }
    c
}

/// First-order expansion fit of a half-domain pair at the origin:
/// v(x) ≈ v(0) + v·x' + s·xₙ⁺ − t·xₙ⁻, with the remainder measured over
/// dyadic radii up to r_p = 1/4 (p ≤ 2) or 1/(4√(p−1)) (p > 2).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExpansionFit {
    pub tangential_gradient: Point,
    pub s: f64,
    pub t: f64,
    pub radii: Vec<f64>,
    pub remainders: Vec<f64>,
    /// Log-log slope of the remainders; `None` when they sit at machine level.
    pub remainder_rate: Option<f64>,
    /// |λ₊^p s − λ₋^p t| under the supplied constants.
    pub flux_mismatch: f64,
    /// λ₊^p s + ℓ (must be ≥ −tol for membrane solutions).
    pub sign_slack: f64,
}

/// Expansion radius cap: 1/4 for p ≤ 2, 1/(4√(p−1)) for p > 2.
pub fn expansion_radius(p: f64) -> f64 {
    if p <= 2.0 {
        0.25
    } else {
        0.25 / (p - 1.0).sqrt()
    }
}

pub fn quadratic_expansion_fit(pair: &HalfDomainPair, mp: &MembraneParams) -> Result<ExpansionFit> {
    let g = &pair.grid;
    let dim = g.dim();
    let nz = dim - 1;
    let k0 = pair.interface_plane;
    // Origin node.
    let mut c0 = [0usize; 3];
    for a in 0..dim - 1 {
        let t = (-g.lo()[a] / g.spacing(a)).round();
        c0[a] = t as usize;
        if (g.lo()[a] + c0[a] as f64 * g.spacing(a)).abs() > 1e-10 {
            return Err(Error::domain(
                "expansion fit needs an origin-centered pair (0 must be a grid node)",
            ));
        }
    }
    c0[nz] = k0;
    let idx0 = g.flat(c0);
    let v0p = pair.v_plus[idx0];
    let v0m = pair.v_minus[idx0];
    if (v0p - v0m).abs() > 1e-8 * (1.0 + v0p.abs()) {
        return Err(Error::domain(
            "expansion fit needs a contact point at the origin (v₊(0) = v₋(0))",
        ));
    }
    let v0 = 0.5 * (v0p + v0m);
    // Tangential gradient: central differences of the interface average.
    let mut tang = [0.0f64; 3];
    for a in 0..dim - 1 {
        let mut cm = c0;
        cm[a] -= 1;
        let mut cp = c0;
        cp[a] += 1;
        let avg_m = 0.5 * (pair.v_plus[g.flat(cm)] + pair.v_minus[g.flat(cm)]);
        let avg_p = 0.5 * (pair.v_plus[g.flat(cp)] + pair.v_minus[g.flat(cp)]);
        tang[a] = (avg_p - avg_m) / (2.0 * g.spacing(a));
    }
    let s = one_sided_normal(pair, idx0, true);
    let t = one_sided_normal(pair, idx0, false);

    let h_max = g.max_spacing();
    let mut radii = Vec::new();
    let mut r = expansion_radius(mp.p).min(0.999 * g.max_ball_radius(&[0.0; 3]));
    while r >= 4.0 * h_max {
        radii.push(r);
        r *= 0.5;
    }
    if radii.len() < 2 {
        return Err(Error::domain(
            "too few resolvable radii for the expansion fit",
        ));
    }
    let mut remainders = vec![0.0f64; radii.len()];
    let scale_floor = 1e-13 * (1.0 + v0.abs() + s.abs() + t.abs());
    g.for_each_node(|c| {
        let x = g.node_pos(c);
        let rr = crate::norm(&x);
        if rr > radii[0] {
            return;
        }
        let idx = g.flat(c);
        let model = |xn: f64| {
            let mut m = v0;
            for a in 0..dim - 1 {
                m += tang[a] * x[a];
            }
            m + if xn >= 0.0 { s * xn } else { t * xn }
        };
        for (ri, rad) in radii.iter().enumerate() {
            if rr <= *rad {
                if c[nz] >= k0 {
                    let dev = (pair.v_plus[idx] - model(x[nz])).abs();
                    if dev > remainders[ri] {
                        remainders[ri] = dev;
                    }
                }
                if c[nz] <= k0 {
                    let dev = (pair.v_minus[idx] - model(x[nz])).abs();
                    if dev > remainders[ri] {
                        remainders[ri] = dev;
                    }
                }
            }
        }
    });
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (rad, rem) in radii.iter().zip(&remainders) {
        if *rem > scale_floor {
            xs.push(rad.ln());
            ys.push(rem.ln());
        }
    }
    let remainder_rate = if xs.len() >= 2 {
        Some(crate::fbgeom::ls_slope(&xs, &ys))
    } else {
        None
    };
    let lam_p = mp.lambda_plus.powf(mp.p);
    let lam_m = mp.lambda_minus.powf(mp.p);
    Ok(ExpansionFit {
        tangential_gradient: tang,
        s,
        t,
        radii,
        remainders,
        remainder_rate,
        flux_mismatch: (lam_p * s - lam_m * t).abs(),
        sign_slack: lam_p * s + mp.ell,
    })
}
