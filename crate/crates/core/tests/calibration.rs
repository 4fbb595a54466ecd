// Scratch calibration runs for solver tuning; not part of the final suite.
use twophase_core::fbgeom::extract_free_boundary;
use twophase_core::solver::{jtp_energy, minimize_jtp_report, MinimizeOptions};
use twophase_core::twoplane::make_two_plane;
use twophase_core::{Grid, Point, ProblemParams, ScalarField};

/// Brute-force 1D oracle: minimize over piecewise-affine candidates with a
/// free-boundary location / optional dead interval.
fn oracle_1d(a: f64, b: f64, params: &ProblemParams) -> (f64, Vec<f64>) {
    let p = params.p;
    let lp = params.lambda_plus.powf(p);
    let lm = params.lambda_minus.powf(p);
    // Pure affine candidate (no zero contact in the open interval).
    let slope = (b - a) / 2.0;
    let mut best = slope.abs().powf(p) * 2.0
        + (p - 1.0)
            * (lp * measure_pos_affine(a, b) + lm * measure_neg_affine(a, b));
    let mut best_knots: Vec<f64> = Vec::new();
    // Two-knot family: u = a→0 on [−1,z1], 0 on [z1,z2], 0→b on [z2,1].
    let n = 800;
    let mut refine = |z1: f64, z2: f64, span: f64, steps: usize| -> (f64, f64, f64) {
        let mut local_best = f64::INFINITY;
        let (mut bz1, mut bz2) = (z1, z2);
        for i in 0..=steps {
            for j in 0..=steps {
                let c1 = (z1 - span + 2.0 * span * i as f64 / steps as f64).clamp(-1.0, 1.0);
                let c2 = (z2 - span + 2.0 * span * j as f64 / steps as f64).clamp(-1.0, 1.0);
                if c1 > c2 {
                    continue;
                }
                let e = knot_energy(a, b, c1, c2, p, lp, lm);
                if e < local_best {
                    local_best = e;
                    bz1 = c1;
                    bz2 = c2;
                }
            }
        }
        (local_best, bz1, bz2)
    };
    let (mut e, mut z1, mut z2) = refine(0.0, 0.0, 1.0, n);
    for k in 0..6 {
        let span = 1.0 / (n as f64) * 4.0 / (4f64.powi(k));
        let r = refine(z1, z2, span, 40);
        e = r.0;
        z1 = r.1;
        z2 = r.2;
    }
    if e < best {
        best = e;
        best_knots = if z2 - z1 > 1e-9 {
            vec![z1, z2]
        } else {
            vec![0.5 * (z1 + z2)]
        };
    }
    (best, best_knots)
}

fn knot_energy(a: f64, b: f64, z1: f64, z2: f64, p: f64, lp: f64, lm: f64) -> f64 {
    let left_len = z1 + 1.0;
    let right_len = 1.0 - z2;
    let mut e = 0.0;
    if left_len > 1e-12 {
        e += (a.abs() / left_len).powf(p) * left_len;
        e += (p - 1.0) * if a > 0.0 { lp } else { lm } * left_len;
    } else if a.abs() > 1e-12 {
        return f64::INFINITY;
    }
    if right_len > 1e-12 {
        e += (b.abs() / right_len).powf(p) * right_len;
        e += (p - 1.0) * if b > 0.0 { lp } else { lm } * right_len;
    } else if b.abs() > 1e-12 {
        return f64::INFINITY;
    }
    e
}

fn measure_pos_affine(a: f64, b: f64) -> f64 {
    // |{u > 0}| for the affine interpolant on (−1,1).
    if a > 0.0 && b > 0.0 {
        2.0
    } else if a <= 0.0 && b <= 0.0 {
        0.0
    } else {
        let z = -1.0 + 2.0 * (0.0 - a) / (b - a);
        if b > 0.0 {
            1.0 - z
        } else {
            z + 1.0
        }
    }
}

fn measure_neg_affine(a: f64, b: f64) -> f64 {
    2.0 - measure_pos_affine(a, b) - if a == 0.0 && b == 0.0 { 2.0 } else { 0.0 }
}

fn minimize_1d(a: f64, b: f64, params: &ProblemParams, n: usize) -> (f64, Vec<f64>, usize) {
    let g = Grid::new(1, &[[-1.0, 1.0]], &[n]).unwrap();
    let mut bc = ScalarField::constant(g, 0.0);
    let n0 = g.flat([0, 0, 0]);
    let n1 = g.flat([n, 0, 0]);
    bc.set_dirichlet(n0, a);
    bc.set_dirichlet(n1, b);
    let opts = MinimizeOptions::default();
    let (u, rep) = minimize_jtp_report(&bc, params, &opts).unwrap();
    let fbs: Vec<f64> = extract_free_boundary(&u)
        .iter()
        .map(|p| p.location[0])
        .collect();
    let iters: usize = rep.stages.iter().map(|s| s.iters).sum();
    (jtp_energy(&u, params).total, fbs, iters)
}

#[test]
#[ignore]
fn calibrate_1d_oracle() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let start = std::time::Instant::now();
    for &p in &[1.5, 2.0, 3.0] {
        let params = ProblemParams::new(p, 1.0, 0.8).unwrap();
        for _ in 0..4 {
            let a = -rng.gen_range(0.3..1.8);
            let b = rng.gen_range(0.3..1.8);
            let (e_oracle, knots) = oracle_1d(a, b, &params);
            let (e_solver, fbs, iters) = minimize_1d(a, b, &params, 2000);
            let fb_err: f64 = knots
                .iter()
                .map(|z| {
                    fbs.iter()
                        .map(|f| (f - z).abs())
                        .fold(f64::INFINITY, f64::min)
                })
                .fold(0.0, f64::max);
            println!(
                "p={p} a={a:.3} b={b:.3}: E_oracle={e_oracle:.6} E_solver={e_solver:.6} dE={:.2e} fb_err={fb_err:.2e} iters={iters} knots={knots:?} fbs={fbs:?}",
                e_solver - e_oracle
            );
        }
    }
    println!("elapsed {:?}", start.elapsed());
}

#[test]
#[ignore]
fn calibrate_2d_two_plane_refinement() {
    // Exact two-plane data, tilted direction: interior sup deviation vs h.
    let th: f64 = 0.5;
    let e = [th.sin(), th.cos(), 0.0];
    let params = ProblemParams::new(2.0, 1.0, 0.7).unwrap();
    let tp = make_two_plane(1.3, e, &params).unwrap();
    let start = std::time::Instant::now();
    for &n in &[64usize, 128, 256] {
        let g = Grid::centered(2, 1.0, n).unwrap();
        let bc = ScalarField::from_fn(g, |x| tp.eval(x));
        let opts = MinimizeOptions::default();
        let (u, rep) = minimize_jtp_report(&bc, &params, &opts).unwrap();
        let mut dev = 0.0f64;
        g.for_each_node(|c| {
            let x = g.node_pos(c);
            dev = dev.max((u.value(g.flat(c)) - tp.eval(&x)).abs());
        });
        let iters: usize = rep.stages.iter().map(|s| s.iters).sum();
        println!(
            "n={n}: dev={dev:.3e} iters={iters} stages={} energy={:.8} elapsed={:?}",
            rep.stages.len(),
            rep.breakdown.total,
            start.elapsed()
        );
    }
}

#[test]
#[ignore]
fn calibrate_flatness_gamma() {
    let params = ProblemParams::new(2.0, 1.0, 1.0).unwrap();
    let alpha = 1.2;
    let tp = make_two_plane(alpha, [0.0, 1.0, 0.0], &params).unwrap();
    let amp = 0.02;
    let start = std::time::Instant::now();
    for &n in &[128usize, 256] {
        let g = Grid::centered(2, 1.0, n).unwrap();
        let bc = ScalarField::from_fn(g, |x| {
            tp.eval(x) + amp * (std::f64::consts::PI * x[0]).sin() * (1.0 + 0.3 * x[1])
        });
        let opts = MinimizeOptions::default();
        let (u, _) = minimize_jtp_report(&bc, &params, &opts).unwrap();
        // Free-boundary point nearest the origin.
        let pts = extract_free_boundary(&u);
        let x0: Point = pts
            .iter()
            .map(|p| p.location)
            .min_by(|a, b| {
                (a[0] * a[0] + a[1] * a[1])
                    .partial_cmp(&(b[0] * b[0] + b[1] * b[1]))
                    .unwrap()
            })
            .unwrap();
        let rep =
            twophase_core::fbgeom::flatness_decay_experiment(&u, &x0, 0.5, 3, &params).unwrap();
        println!(
            "n={n}: x0={x0:?} gamma={:?} devs={:?} floors={:?} drift={:?} elapsed={:?}",
            rep.gamma_hat,
            rep.fits.iter().map(|f| f.deviation).collect::<Vec<_>>(),
            rep.resolution_floor,
            rep.alpha_drift,
            start.elapsed()
        );
    }
}
