//! The property-checking harness: free-boundary condition residuals,
//! non-degeneracy ratios, coherent growth, the Lipschitz dichotomy trace,
//! and the two explicit barriers (the radial cutoff with its four
//! properties, and the annulus barrier with its p-superharmonicity range).

use serde::{Deserialize, Serialize};

use crate::fbgeom::{extract_free_boundary, PointClass};
use crate::solver::PHASE_TIE_TOL;
use crate::{dot, norm, Error, Point, ProblemParams, Result, ScalarField};

/// Per-point record of the free-boundary condition residuals: the two-phase
/// balance |(|∇u⁺|^p − |∇u⁻|^p) − (λ₊^p − λ₋^p)|, the one-phase defect
/// ||∇u^±| − λ±|, and the slack of the lower bounds |∇u^±| ≥ λ±.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FBConditionRecord {
    pub location: Point,
    pub class: PointClass,
    pub grad_plus: Option<f64>,
    pub grad_minus: Option<f64>,
    pub residual_tp: Option<f64>,
    pub residual_op: Option<f64>,
    pub lower_bound_slack: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FBConditionReport {
    pub probe: f64,
    pub records: Vec<FBConditionRecord>,
    pub median_residual_tp: Option<f64>,
    pub median_residual_op: Option<f64>,
    pub min_lower_bound_slack: Option<f64>,
}

/// One-sided gradient magnitudes at every free-boundary point, by
/// least-squares linear fits over the phase-side nodes of the probe ball.
pub fn check_fb_conditions(
    u: &ScalarField,
    params: &ProblemParams,
    probe: f64,
) -> Result<FBConditionReport> {
    params.validate()?;
    let g = u.grid();
    if probe < 4.0 * g.max_spacing() {
        return Err(Error::domain(format!(
            "probe radius {probe} is under four grid spacings; gradient fits would be rank-deficient"
        )));
    }
    let tie = PHASE_TIE_TOL * u.max_abs();
    let mut points = extract_free_boundary(u);
    // Deterministic output: lexicographic point order.
    points.sort_by(|a, b| {
        a.location
            .partial_cmp(&b.location)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let gap = params.slope_gap();
    let p = params.p;
    let mut records = Vec::new();
    for fb in points {
        let r = probe.min(0.999 * g.max_ball_radius(&fb.location));
        if r < 3.0 * g.max_spacing() {
            continue; // too close to the outer boundary for a stable fit
        }
        let nodes = g.nodes_in_ball(&fb.location, r);
        let grad_plus = fit_gradient_magnitude(u, &nodes, 1, tie);
        let grad_minus = fit_gradient_magnitude(u, &nodes, -1, tie);
        let (residual_tp, residual_op, lower_bound_slack) = match fb.class {
            PointClass::TpInterior | PointClass::TpBranch => {
                let (tp, slack) = match (grad_plus, grad_minus) {
                    (Some(gp), Some(gm)) => (
                        Some((gp.powf(p) - gm.powf(p) - gap).abs()),
                        Some((gp - params.lambda_plus).min(gm - params.lambda_minus)),
                    ),
                    _ => (None, None),
                };
                (tp, None, slack)
            }
            PointClass::OpPlus => (
                None,
                grad_plus.map(|gp| (gp - params.lambda_plus).abs()),
                None,
            ),
            PointClass::OpMinus => (
                None,
                grad_minus.map(|gm| (gm - params.lambda_minus).abs()),
                None,
            ),
        };
        records.push(FBConditionRecord {
            location: fb.location,
            class: fb.class,
            grad_plus,
            grad_minus,
            residual_tp,
            residual_op,
            lower_bound_slack,
        });
    }
    let median_residual_tp = median(records.iter().filter_map(|r| r.residual_tp));
    let median_residual_op = median(records.iter().filter_map(|r| r.residual_op));
    let min_lower_bound_slack = records
        .iter()
        .filter_map(|r| r.lower_bound_slack)
        .fold(None, |acc: Option<f64>, v| {
            Some(acc.map_or(v, |a| a.min(v)))
        });
    Ok(FBConditionReport {
        probe,
        records,
        median_residual_tp,
        median_residual_op,
        min_lower_bound_slack,
    })
}

fn median(vals: impl Iterator<Item = f64>) -> Option<f64> {
    let mut v: Vec<f64> = vals.collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Some(v[v.len() / 2])
}

/// Least-squares linear fit of u over one phase side of a node set; returns
/// |∇| of the fit, or None when the side is empty or rank-deficient.
fn fit_gradient_magnitude(
    u: &ScalarField,
    nodes: &[usize],
    side: i8,
    tie: f64,
) -> Option<f64> {
    let g = u.grid();
    let dim = g.dim();
    let m = dim + 1;
    // Normal equations for u ≈ a + b·x over the selected nodes.
    let mut ata = [[0.0f64; 4]; 4];
    let mut atb = [0.0f64; 4];
    let mut count = 0usize;
    for &idx in nodes {
        let v = u.value(idx);
        let included = match side {
            1 => v > tie,
            _ => v < -tie,
        };
        if !included {
            continue;
        }
        count += 1;
        let x = g.node_pos_flat(idx);
        let mut row = [1.0f64; 4];
        row[1..(dim + 1)].copy_from_slice(&x[..dim]);
        for i in 0..m {
            for j in 0..m {
                ata[i][j] += row[i] * row[j];
            }
            atb[i] += row[i] * v;
        }
    }
    if count < m + 1 {
        return None;
    }
    let sol = solve_small(&mut ata, &mut atb, m)?;
    let mut g2 = 0.0;
    for b in sol.iter().take(m).skip(1) {
        g2 += b * b;
    }
    Some(g2.sqrt())
}

fn solve_small(a: &mut [[f64; 4]; 4], b: &mut [f64; 4], m: usize) -> Option<[f64; 4]> {
    for col in 0..m {
        let mut pivot = col;
        for row in (col + 1)..m {
            if a[row][col].abs() > a[pivot][col].abs() {
                pivot = row;
            }
        }
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        let d = a[col][col];
        for row in (col + 1)..m {
            let f = a[row][col] / d;
            for k in col..m {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0f64; 4];
    for col in (0..m).rev() {
        let mut acc = b[col];
        for k in (col + 1)..m {
            acc -= a[col][k] * x[k];
        }
        x[col] = acc / a[col][col];
    }
    Some(x)
}

/// Ball-average growth ratios (⨍ (u^±)^p) / r^p per radius. Radii under
/// four spacings are skipped (reported in `skipped`).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NondegeneracyReport {
    pub rows: Vec<(f64, f64, f64)>,
    pub skipped: Vec<f64>,
}

pub fn nondegeneracy_check(
    u: &ScalarField,
    x0: &Point,
    radii: &[f64],
    params: &ProblemParams,
) -> Result<NondegeneracyReport> {
    let g = u.grid();
    let p = params.p;
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for &r in radii {
        if r < 4.0 * g.max_spacing() {
            skipped.push(r);
            continue;
        }
        if !g.contains_ball(x0, r) {
            return Err(Error::domain(format!(
                "ball of radius {r} around {:?} exits the domain",
                &x0[..g.dim()]
            )));
        }
        let nodes = g.nodes_in_ball(x0, r);
        let mut acc_p = 0.0;
        let mut acc_m = 0.0;
        for &idx in &nodes {
            let v = u.value(idx);
            acc_p += v.max(0.0).powf(p);
            acc_m += (-v).max(0.0).powf(p);
        }
        let n = nodes.len() as f64;
        let rp = r.powf(p);
        rows.push((r, acc_p / n / rp, acc_m / n / rp));
    }
    Ok(NondegeneracyReport { rows, skipped })
}

/// Linear growth quotients sup_{B_r} u^± / r per radius.
pub fn coherent_growth_check(
    u: &ScalarField,
    x0: &Point,
    radii: &[f64],
) -> Result<Vec<(f64, f64, f64)>> {
    let g = u.grid();
    let mut rows = Vec::new();
    for &r in radii {
        if r < g.max_spacing() {
            continue;
        }
        if !g.contains_ball(x0, r) {
            return Err(Error::domain(format!(
                "ball of radius {r} around {:?} exits the domain",
                &x0[..g.dim()]
            )));
        }
        let nodes = g.nodes_in_ball(x0, r);
        let mut sp = 0.0f64;
        let mut sm = 0.0f64;
        for &idx in &nodes {
            let v = u.value(idx);
            sp = sp.max(v);
            sm = sm.max(-v);
        }
        rows.push((r, sp / r, sm / r));
    }
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DichotomyBranch {
    Lipschitz,
    Decay,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DichotomyLevel {
    pub level: usize,
    pub scale: f64,
    /// sup_{B_scale} |u| / scale.
    pub sup_norm_ratio: f64,
    pub branch: DichotomyBranch,
}

/// Trace of the scale iteration behind the Lipschitz estimate: per level
/// either the normalized sup decays by half (relative to the threshold) or
/// the Lipschitz branch is recorded. `c_measured` is the smallest constant
/// with sup_{B_r}|u| ≤ C·max(S₀/r₀, L)·r over all recorded levels.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DichotomyTrace {
    pub delta: f64,
    pub l_threshold: f64,
    pub levels: Vec<DichotomyLevel>,
    pub c_measured: f64,
    pub truncated: bool,
}

pub fn lipschitz_dichotomy(
    u: &ScalarField,
    x0: &Point,
    delta: f64,
    l_threshold: f64,
    levels: usize,
) -> Result<DichotomyTrace> {
    if !(delta > 0.0 && delta <= 0.5) {
        return Err(Error::domain(format!("delta = {delta} must lie in (0, 1/2]")));
    }
    let g = u.grid();
    if u.max_abs() > 0.0 {
        // x0 must sit on the free boundary; reuse the classifier's proximity
        // logic through a small probe.
        let probe = (4.0 * g.max_spacing()).min(0.999 * g.max_ball_radius(x0));
        crate::fbgeom::classify_point(u, x0, probe)?;
    }
    let r0 = 0.999 * g.max_ball_radius(x0);
    let floor = g.max_spacing();
    let mut rows: Vec<DichotomyLevel> = Vec::new();
    let mut truncated = false;
    let mut prev_ratio = f64::NAN;
    for k in 0..=levels {
        let r = r0 * delta.powi(k as i32);
        if r < floor {
            truncated = true;
            break;
        }
        let nodes = g.nodes_in_ball(x0, r);
        let sup = nodes
            .iter()
            .map(|&i| u.value(i).abs())
            .fold(0.0f64, f64::max);
        let ratio = sup / r;
        let branch = if k == 0 {
            DichotomyBranch::Lipschitz
        } else if ratio <= 0.5 * prev_ratio.max(l_threshold) {
            DichotomyBranch::Decay
        } else {
            DichotomyBranch::Lipschitz
        };
        rows.push(DichotomyLevel {
            level: k,
            scale: r,
            sup_norm_ratio: ratio,
            branch,
        });
        prev_ratio = ratio;
    }
    if rows.is_empty() {
        return Err(Error::domain(
            "no dichotomy scale fits above the resolution floor",
        ));
    }
    let reference = rows[0].sup_norm_ratio.max(l_threshold);
    let c_measured = rows
        .iter()
        .map(|r| r.sup_norm_ratio / reference)
        .fold(0.0f64, f64::max);
    Ok(DichotomyTrace {
        delta,
        l_threshold,
        levels: rows,
        c_measured,
        truncated,
    })
}

/// Barrier cutoff exponent γ(n,p) = max{1, (1+n−p)/(p−1), (1+n)/(p−1) − 2, n+p−3}.
pub fn barrier_exponent(n: usize, p: f64) -> f64 {
    let nf = n as f64;
    1.0f64
        .max((1.0 + nf - p) / (p - 1.0))
        .max((1.0 + nf) / (p - 1.0) - 2.0)
        .max(nf + p - 3.0)
}

/// Center of the barrier cutoff.
pub fn barrier_center(n: usize) -> Point {
    let mut q = [0.0; 3];
    q[n - 1] = 0.2;
    q
}

fn barrier_kappa(gamma: f64) -> f64 {
    1.0 / (100f64.powf(gamma) - (4.0f64 / 3.0).powf(gamma))
}

/// Radial cutoff barrier: 1 on B_{1/100}(Q), κ(|x−Q|^{−γ} − (3/4)^{−γ}) on
/// the shell, 0 outside B_{3/4}(Q); κ makes it continuous at the inner
/// sphere, and it vanishes continuously at the outer one.
pub fn barrier_phi(x: &Point, n: usize, p: f64) -> Result<f64> {
    if !(2..=3).contains(&n) {
        return Err(Error::domain("the barrier cutoff is defined for n ∈ {2,3}"));
    }
    let q = barrier_center(n);
    let gamma = barrier_exponent(n, p);
    let kappa = barrier_kappa(gamma);
    let d = crate::dist(x, &q);
    Ok(if d <= 0.01 {
        1.0
    } else if d < 0.75 {
        kappa * (d.powf(-gamma) - 0.75f64.powf(-gamma))
    } else {
        0.0
    })
}

/// Analytic gradient of the cutoff (zero off the shell).
pub fn barrier_phi_gradient(x: &Point, n: usize, p: f64) -> Point {
    let q = barrier_center(n);
    let gamma = barrier_exponent(n, p);
    let kappa = barrier_kappa(gamma);
    let d = crate::dist(x, &q);
    if d <= 0.01 || d >= 0.75 {
        return [0.0; 3];
    }
    let f = -kappa * gamma * d.powf(-gamma - 2.0);
    [f * (x[0] - q[0]), f * (x[1] - q[1]), f * (x[2] - q[2])]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PhiPropertyReport {
    pub n: usize,
    pub p: f64,
    /// (φ.1): range bounds and the boundary value max over |x| = 1 samples.
    pub range_ok: bool,
    pub boundary_max: f64,
    /// (φ.2): per requested s, the measured floor of
    /// −div(|eₙ − s∇φ|^{p−2}(eₙ − s∇φ)) over the open shell.
    pub divergence_floors: Vec<(f64, f64)>,
    /// (φ.3): floor of ∂ₙφ over the shell slab {|xₙ| ≤ 1/100}.
    pub normal_derivative_floor: f64,
    /// (φ.4): floor of φ over B_{1/6}.
    pub ball_floor: f64,
    /// Continuity defects at the two interior radii.
    pub continuity_inner: f64,
    pub continuity_outer: f64,
    pub violations: Vec<String>,
}

impl PhiPropertyReport {
    pub fn all_pass(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Numerically verify the four cutoff properties on a fine grid: the range
/// bounds, the positive divergence floor of the perturbed flux for small
/// s > 0, the positive normal derivative near the zero plane, and the
/// positive floor on B_{1/6}.
pub fn barrier_phi_properties(
    n: usize,
    p: f64,
    s_values: &[f64],
    grid_n: usize,
) -> Result<PhiPropertyReport> {
    if !(2..=3).contains(&n) {
        return Err(Error::domain("the barrier cutoff is defined for n ∈ {2,3}"));
    }
    let q = barrier_center(n);
    let mut violations = Vec::new();

    // Sample nodes of a uniform grid over [−1,1]^n.
    let steps = grid_n;
    let h = 2.0 / steps as f64;
    let fd = 1e-4;
    let margin = 3.0 * fd;

    let mut range_ok = true;
    let mut normal_floor = f64::INFINITY;
    let mut ball_floor = f64::INFINITY;
    let mut div_floors: Vec<(f64, f64)> = s_values.iter().map(|s| (*s, f64::INFINITY)).collect();

    let flux = |x: &Point, s: f64| -> Point {
        let g = barrier_phi_gradient(x, n, p);
        let v = [
            -s * g[0] + if n == 1 { 1.0 } else { 0.0 },
            -s * g[1] + if n == 2 { 1.0 } else { 0.0 },
            -s * g[2] + if n == 3 { 1.0 } else { 0.0 },
        ];
        let mag2 = dot(&v, &v);
        let w = mag2.powf(0.5 * (p - 2.0));
        [w * v[0], w * v[1], w * v[2]]
    };

    let mut visit = |x: Point| -> Result<()> {
        let phi = barrier_phi(&x, n, p)?;
        if !(-1e-15..=1.0 + 1e-15).contains(&phi) {
            range_ok = false;
            violations.push(format!("range violation at {:?}: φ = {phi}", &x[..n]));
        }
        let d = crate::dist(&x, &q);
        let in_shell = d > 0.01 + margin && d < 0.75 - margin;
        if in_shell && x[n - 1].abs() <= 0.01 {
            let gphi = barrier_phi_gradient(&x, n, p);
            normal_floor = normal_floor.min(gphi[n - 1]);
        }
        if norm(&x) <= 1.0 / 6.0 {
            ball_floor = ball_floor.min(phi);
        }
        if in_shell {
            for (s, floor) in div_floors.iter_mut() {
                let mut div = 0.0;
                for a in 0..n {
                    let mut xp = x;
                    xp[a] += fd;
                    let mut xm = x;
                    xm[a] -= fd;
                    div += (flux(&xp, *s)[a] - flux(&xm, *s)[a]) / (2.0 * fd);
                }
                *floor = (*floor).min(-div);
            }
        }
        Ok(())
    };

    let mut err = None;
    let mut loop_body = |x: Point| {
        if err.is_none() {
            if let Err(e) = visit(x) {
                err = Some(e);
            }
        }
    };
    if n == 2 {
        for i in 0..=steps {
            for j in 0..=steps {
                loop_body([-1.0 + i as f64 * h, -1.0 + j as f64 * h, 0.0]);
            }
        }
    } else {
        for i in 0..=steps {
            for j in 0..=steps {
                for k in 0..=steps {
                    loop_body([
                        -1.0 + i as f64 * h,
                        -1.0 + j as f64 * h,
                        -1.0 + k as f64 * h,
                    ]);
                }
            }
        }
    }
    if let Some(e) = err {
        return Err(e);
    }

    // Boundary values on |x| = 1: sample a sphere/circle.
    let mut boundary_max = 0.0f64;
    let samples = 720;
    for i in 0..samples {
        let x = if n == 2 {
            let th = 2.0 * std::f64::consts::PI * i as f64 / samples as f64;
            [th.cos(), th.sin(), 0.0]
        } else {
            let th = std::f64::consts::PI * (i as f64 + 0.5) / samples as f64;
            let ph = 2.0 * std::f64::consts::PI * (i as f64 * 0.618);
            [th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()]
        };
        boundary_max = boundary_max.max(barrier_phi(&x, n, p)?.abs());
    }
    if boundary_max > 0.0 {
        violations.push(format!("nonzero on the unit sphere: {boundary_max}"));
    }

    // Continuity at the two interior radii: the shell formula evaluated at
    // each radius must match the adjacent constant branch exactly.
    let gamma = barrier_exponent(n, p);
    let kappa = barrier_kappa(gamma);
    let shell_at = |d: f64| kappa * (d.powf(-gamma) - 0.75f64.powf(-gamma));
    let continuity_inner = (shell_at(0.01) - 1.0).abs();
    let continuity_outer = shell_at(0.75).abs();
    if continuity_inner > 1e-12 {
        violations.push(format!("inner-radius jump {continuity_inner}"));
    }
    if continuity_outer > 1e-12 {
        violations.push(format!("outer-radius jump {continuity_outer}"));
    }

    for (s, floor) in &div_floors {
        if *floor <= 0.0 {
            violations.push(format!(
                "perturbed flux divergence not uniformly positive for s = {s}: floor {floor}"
            ));
        }
    }
    if normal_floor <= 0.0 {
        violations.push(format!(
            "normal derivative not positive on the zero slab: floor {normal_floor}"
        ));
    }
    if ball_floor <= 0.0 {
        violations.push(format!("no positive floor on B_1/6: {ball_floor}"));
    }

    Ok(PhiPropertyReport {
        n,
        p,
        range_ok,
        boundary_max,
        divergence_floors: div_floors,
        normal_derivative_floor: normal_floor,
        ball_floor,
        continuity_inner,
        continuity_outer,
        violations,
    })
}

/// Gaussian annulus barrier on B_√k ∖ B_k, zero on B_k:
/// v(x) = C₁·ε·(e^{−μ|x|²} − e^{−μk²}).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AnnulusBarrier {
    pub dim: usize,
    pub p: f64,
    pub k: f64,
    pub eps: f64,
    pub mu: f64,
    pub c1: f64,
}

/// Largest admissible μ: (n + p − 2) / (2k(p − 1)).
pub fn annulus_mu_bound(dim: usize, p: f64, k: f64) -> f64 {
    (dim as f64 + p - 2.0) / (2.0 * k * (p - 1.0))
}

impl AnnulusBarrier {
    pub fn new(dim: usize, p: f64, k: f64, eps: f64, mu: f64, c1: f64) -> Result<Self> {
        if !(0.0 < k && k < 1.0) {
            return Err(Error::domain(format!("k = {k} must lie in (0,1)")));
        }
        let bound = annulus_mu_bound(dim, p, k);
        if !(mu > 0.0 && mu <= bound) {
            return Err(Error::domain(format!(
                "mu = {mu} violates the admissible range (0, (n+p−2)/(2k(p−1))] = (0, {bound:.6}]"
            )));
        }
        Ok(AnnulusBarrier {
            dim,
            p,
            k,
            eps,
            mu,
            c1,
        })
    }

    /// The C₁ giving |v| = √k·ε on the outer sphere ∂B_√k with the sign
    /// that keeps the barrier p-superharmonic on the annulus.
    pub fn normalized_c1(dim: usize, p: f64, k: f64, mu: f64) -> Result<f64> {
        if !(0.0 < k && k < 1.0) {
            return Err(Error::domain(format!("k = {k} must lie in (0,1)")));
        }
        let _ = dim;
        let _ = p;
        let denom = (-mu * k * k).exp() - (-mu * k).exp();
        Ok(k.sqrt() / denom)
    }

    pub fn eval(&self, x: &Point) -> f64 {
        let r = norm(x);
        if r <= self.k {
            0.0
        } else {
            self.c1 * self.eps * ((-self.mu * r * r).exp() - (-self.mu * self.k * self.k).exp())
        }
    }

    fn gradient(&self, x: &Point) -> Point {
        let r2 = dot(x, x);
        if r2.sqrt() <= self.k {
            return [0.0; 3];
        }
        let f = -2.0 * self.c1 * self.eps * self.mu * (-self.mu * r2).exp();
        [f * x[0], f * x[1], f * x[2]]
    }

    /// Max of the numerically evaluated p-Laplacian over annulus sample
    /// nodes (central differences of the flux |∇v|^{p−2}∇v of the analytic
    /// gradient). Nonpositive values certify p-superharmonicity.
    pub fn p_laplacian_max(&self, samples_per_axis: usize) -> f64 {
        let fd = 1e-5;
        let margin = 3.0 * fd;
        let lo = self.k + margin;
        let hi = self.k.sqrt() - margin;
        let flux = |x: &Point| -> Point {
            let g = self.gradient(x);
            let mag2 = dot(&g, &g);
            if mag2 == 0.0 {
                return [0.0; 3];
            }
            let w = mag2.powf(0.5 * (self.p - 2.0));
            [w * g[0], w * g[1], w * g[2]]
        };
        let mut worst = f64::NEG_INFINITY;
        let steps = samples_per_axis;
        let h = 2.0 * self.k.sqrt() / steps as f64;
        let mut visit = |x: Point| {
            let r = norm(&x);
            if r < lo || r > hi {
                return;
            }
            let mut div = 0.0;
            for a in 0..self.dim {
                let mut xp = x;
                xp[a] += fd;
                let mut xm = x;
                xm[a] -= fd;
                div += (flux(&xp)[a] - flux(&xm)[a]) / (2.0 * fd);
            }
            worst = worst.max(div);
        };
        let half = self.k.sqrt();
        if self.dim == 2 {
            for i in 0..=steps {
                for j in 0..=steps {
                    visit([-half + i as f64 * h, -half + j as f64 * h, 0.0]);
                }
            }
        } else {
            for i in 0..=steps {
                for j in 0..=steps {
                    for k in 0..=steps {
                        visit([
                            -half + i as f64 * h,
                            -half + j as f64 * h,
                            -half + k as f64 * h,
                        ]);
                    }
                }
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::twoplane::make_two_plane;

    fn params(p: f64, lp: f64, lm: f64) -> ProblemParams {
        ProblemParams::new(p, lp, lm).unwrap()
    }

    #[test]
    fn fb_conditions_on_exact_two_plane() {
        let g = Grid::centered(2, 1.0, 64).unwrap();
        let pr = params(3.0, 1.5, 1.0);
        let tp = make_two_plane(1.8, [0.0, 1.0, 0.0], &pr).unwrap();
        let u = ScalarField::from_fn(g, |x| tp.eval(x));
        let rep = check_fb_conditions(&u, &pr, 6.0 * g.max_spacing()).unwrap();
        let med = rep.median_residual_tp.expect("two-phase points exist");
        assert!(med < 1e-8, "median residual {med}");
        assert!(rep.min_lower_bound_slack.unwrap() > -1e-8);
    }

    #[test]
    fn fb_conditions_on_one_phase_ramp() {
        let g = Grid::centered(2, 1.0, 64).unwrap();
        let pr = params(2.0, 1.3, 1.0);
        let u = ScalarField::from_fn(g, |x| 1.3 * x[1].max(0.0));
        let rep = check_fb_conditions(&u, &pr, 6.0 * g.max_spacing()).unwrap();
        let med = rep.median_residual_op.expect("one-phase points exist");
        assert!(med < 1e-8, "median op residual {med}");
    }

    #[test]
    fn fb_conditions_empty_for_signless_field() {
        let g = Grid::centered(2, 1.0, 32).unwrap();
        let pr = params(2.0, 1.0, 1.0);
        let u = ScalarField::constant(g, 2.0);
        let rep = check_fb_conditions(&u, &pr, 6.0 * g.max_spacing()).unwrap();
        assert!(rep.records.is_empty());
        assert!(rep.median_residual_tp.is_none());
    }

    #[test]
    fn nondegeneracy_constant_ratio_on_two_plane() {
        let g = Grid::centered(2, 1.0, 128).unwrap();
        let pr = params(2.0, 1.0, 1.0);
        let tp = make_two_plane(1.4, [0.0, 1.0, 0.0], &pr).unwrap();
        let u = ScalarField::from_fn(g, |x| tp.eval(x));
        let rep = nondegeneracy_check(&u, &[0.0; 3], &[0.2, 0.4, 0.8], &pr).unwrap();
        assert_eq!(rep.rows.len(), 3);
        // 1-homogeneity makes the ratios scale-free.
        let first = rep.rows[0].1;
        for (_, rp, _) in &rep.rows {
            assert!((rp - first).abs() < 0.05 * first, "ratios {rp} vs {first}");
        }
    }

    #[test]
    fn nondegeneracy_flags_dead_field() {
        let g = Grid::centered(2, 1.0, 64).unwrap();
        let pr = params(2.0, 1.0, 1.0);
        let u = ScalarField::constant(g, 0.0);
        let rep = nondegeneracy_check(&u, &[0.0; 3], &[0.25, 0.5], &pr).unwrap();
        for (_, rp, rm) in &rep.rows {
            assert_eq!(*rp, 0.0);
            assert_eq!(*rm, 0.0);
        }
    }

    #[test]
    fn nondegeneracy_skips_unresolvable_radii() {
        let g = Grid::centered(2, 1.0, 32).unwrap();
        let pr = params(2.0, 1.0, 1.0);
        let u = ScalarField::from_fn(g, |x| x[1]);
        let rep = nondegeneracy_check(&u, &[0.0; 3], &[0.01, 0.5], &pr).unwrap();
        assert_eq!(rep.skipped, vec![0.01]);
        assert_eq!(rep.rows.len(), 1);
    }

    #[test]
    fn coherent_growth_quotients_of_two_plane() {
        let g = Grid::centered(2, 1.0, 128).unwrap();
        let pr = params(2.0, 1.2, 0.9);
        let tp = make_two_plane(1.5, [0.0, 1.0, 0.0], &pr).unwrap();
        let u = ScalarField::from_fn(g, |x| tp.eval(x));
        let rows = coherent_growth_check(&u, &[0.0; 3], &[0.25, 0.5, 0.9]).unwrap();
        for (r, qp, qm) in rows {
            assert!((qp - tp.alpha).abs() < 0.05, "r={r}: plus quotient {qp}");
            assert!((qm - tp.beta).abs() < 0.05, "r={r}: minus quotient {qm}");
        }
    }

    #[test]
    fn dichotomy_on_homogeneous_profile() {
        let g = Grid::centered(2, 1.0, 256).unwrap();
        let pr = params(2.0, 1.0, 1.0);
        let tp = make_two_plane(1.5, [0.0, 1.0, 0.0], &pr).unwrap();
        let u = ScalarField::from_fn(g, |x| tp.eval(x));
        let trace = lipschitz_dichotomy(&u, &[0.0; 3], 0.25, 1.0, 3).unwrap();
        let h = g.max_spacing();
        for lvl in &trace.levels {
            // Node sups under-resolve small balls by up to ~2h/r.
            let lo = 1.5 * (1.0 - 2.0 * h / lvl.scale);
            assert!(
                lvl.sup_norm_ratio >= lo && lvl.sup_norm_ratio <= 1.5 + 1e-9,
                "scale {}: ratio {}",
                lvl.scale,
                lvl.sup_norm_ratio
            );
            assert_eq!(lvl.branch, DichotomyBranch::Lipschitz);
        }
        assert!(trace.c_measured <= 1.0 + 1e-9);
    }

    #[test]
    fn dichotomy_on_zero_field() {
        let g = Grid::centered(2, 1.0, 64).unwrap();
        let u = ScalarField::constant(g, 0.0);
        let trace = lipschitz_dichotomy(&u, &[0.0; 3], 0.25, 1.0, 2).unwrap();
        for lvl in trace.levels.iter().skip(1) {
            assert_eq!(lvl.branch, DichotomyBranch::Decay);
            assert_eq!(lvl.sup_norm_ratio, 0.0);
        }
    }

    #[test]
    fn barrier_exponent_matches_stated_max() {
        assert!((barrier_exponent(2, 2.0) - 1.0).abs() < 1e-15);
        // n=3, p=2: max{1, 2, 2, 2} = 2.
        assert!((barrier_exponent(3, 2.0) - 2.0).abs() < 1e-15);
        // n=2, p=4: max{1, −1/3, 1 − 2, 3} = 3.
        assert!((barrier_exponent(2, 4.0) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn barrier_phi_values_at_radii() {
        let n = 2;
        let p = 2.0;
        let q = barrier_center(n);
        assert_eq!(barrier_phi(&q, n, p).unwrap(), 1.0);
        let x = [q[0], q[1] + 0.75, 0.0];
        assert_eq!(barrier_phi(&x, n, p).unwrap(), 0.0);
        // Continuity at the inner radius.
        let just_out = [q[0] + 0.01 + 1e-12, q[1], 0.0];
        assert!((barrier_phi(&just_out, n, p).unwrap() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn barrier_phi_properties_pass_for_p2() {
        let rep = barrier_phi_properties(2, 2.0, &[0.01, 0.05], 256).unwrap();
        assert!(rep.all_pass(), "violations: {:?}", rep.violations);
        assert!(rep.continuity_inner < 1e-12);
        assert!(rep.continuity_outer < 1e-12);
    }

    #[test]
    fn annulus_barrier_boundary_values() {
        let (dim, p, k, eps) = (2usize, 3.0f64, 0.25f64, 0.1f64);
        let mu = 0.9 * annulus_mu_bound(dim, p, k);
        let c1 = AnnulusBarrier::normalized_c1(dim, p, k, mu).unwrap();
        let b = AnnulusBarrier::new(dim, p, k, eps, mu, c1).unwrap();
        // Zero on the inner sphere, |v| = √k·ε on the outer one.
        assert_eq!(b.eval(&[k, 0.0, 0.0]), 0.0);
        let outer = b.eval(&[k.sqrt(), 0.0, 0.0]);
        assert!(
            (outer.abs() - k.sqrt() * eps).abs() < 1e-12,
            "outer value {outer}"
        );
    }

    #[test]
    fn annulus_barrier_rejects_oversized_mu() {
        let (dim, p, k) = (2usize, 3.0f64, 0.25f64);
        let mu = 1.01 * annulus_mu_bound(dim, p, k);
        let err = AnnulusBarrier::new(dim, p, k, 0.1, mu, 1.0).unwrap_err();
        assert!(format!("{err}").contains("admissible range"));
    }

    #[test]
    fn annulus_barrier_superharmonic_within_bound() {
        let (dim, p, k, eps) = (2usize, 3.0f64, 0.25f64, 0.1f64);
        let mu = 0.9 * annulus_mu_bound(dim, p, k);
        let c1 = AnnulusBarrier::normalized_c1(dim, p, k, mu).unwrap();
        let b = AnnulusBarrier::new(dim, p, k, eps, mu, c1).unwrap();
        let worst = b.p_laplacian_max(160);
        assert!(worst <= 1e-9, "max p-Laplacian {worst}");
    }
}
