//! End-to-end acceptance checks. Runs as a plain binary and prints one
//! PASS/FAIL line per criterion; set `ZC_CRITERIA=1,5` to run a subset.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use zc_core::calibration::{
    clear_with, evaluate, fit_scales, synthetic_series, CostScales, FitSettings, GradientForm, Mechanism,
};
use zc_core::cm::common::zonal_constraints;
use zc_core::cm::{
    build_mcqp, build_stack_curves, build_sub_cqp, cm_objective_given_y, run_bbtree, run_ibcqp, run_ieqlp,
    run_ieqp_on, run_ieqp_wr, stack_objective, ActiveEstimate, BbSettings, IbCqpSettings, IeQpSettings,
    IeqLpSettings, StackSegment, ZonalStackCurve,
};
use zc_core::fixtures::{fixture_instance, CM_OPTIMUM};
use zc_core::harness::{profit_sweep, random_suite, run_algorithm, Algorithm, BenchSettings, OpponentProfile, SweepSpec};
use zc_core::kernel::{solve_cqp, solve_lp, trust_region_solve, Ellipsoid, LinearProgram, LpStatus};
use zc_core::market::{check_paradoxical_orders, MarketInstance, SolveStatus};
use zc_core::settings::Tolerances;
use zc_core::swm::{clear_swm, SwmSettings};

/// Standard normal draws.
fn normal_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Uniform weights on the simplex.
fn dirichlet(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..n).map(|_| rng.sample(Exp1)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

const SUITE_SIZE: usize = 200;
const SUITE_SEED: u64 = 1000;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new() -> Self {
        Self {
            pass: true,
            detail: String::new(),
        }
    }

    fn check(&mut self, ok: bool, note: impl AsRef<str>) {
        if !ok {
            self.pass = false;
        }
        if !self.detail.is_empty() {
            self.detail.push_str("; ");
        }
        if !ok {
            self.detail.push_str("[x] ");
        }
        self.detail.push_str(note.as_ref());
    }
}

fn suite() -> &'static [MarketInstance] {
    static SUITE: OnceLock<Vec<MarketInstance>> = OnceLock::new();
    SUITE.get_or_init(|| random_suite(SUITE_SIZE, SUITE_SEED).expect("suite generation"))
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let out = f();
    (out, t.elapsed())
}

/// Global optimum of the cost-minimisation problem by solving the convex
/// QP of every combination of non-vertical stack pieces.
fn exhaustive_optimum(inst: &MarketInstance) -> (f64, Vec<f64>) {
    let curves = build_stack_curves(inst).unwrap();
    let pieces: Vec<Vec<&StackSegment>> = curves
        .iter()
        .map(|c| c.segments.iter().filter(|s| !s.vertical).collect())
        .collect();
    let mut best = (f64::INFINITY, Vec::new());
    let mut idx = vec![0usize; pieces.len()];
    loop {
        let segs: Vec<&StackSegment> = idx.iter().enumerate().map(|(z, &k)| pieces[z][k]).collect();
        let qp = build_sub_cqp(inst, &segs).unwrap();
        if let Ok(sol) = solve_cqp(&qp, 1e-12) {
            if sol.status == LpStatus::Optimal {
                let y: Vec<f64> = sol.x.iter().copied().collect();
                let f: f64 = segs.iter().zip(&y).map(|(s, &v)| s.cost(v)).sum();
                if f < best.0 {
                    best = (f, y);
                }
            }
        }
        let mut z = 0;
        loop {
            if z == idx.len() {
                return best;
            }
            idx[z] += 1;
            if idx[z] < pieces[z].len() {
                break;
            }
            idx[z] = 0;
            z += 1;
        }
    }
}

fn fixture_objectives() -> Verdict {
    let mut v = Verdict::new();
    let inst = fixture_instance();
    let est = ActiveEstimate::all(&inst);
    let limit = Duration::from_secs(10);

    let (bb, t) = timed(|| run_bbtree(&inst, &est, &BbSettings::default()).unwrap());
    let f = bb.outcome.objective;
    v.check(
        (f - CM_OPTIMUM).abs() <= 0.01 && bb.gap < 1e-5 && t < limit,
        format!("bbtree {f:.5} gap {:.1e} {:.2}s", bb.gap, t.as_secs_f64()),
    );

    let (ib, t) = timed(|| run_ibcqp(&inst, &IbCqpSettings { cqp_tol: 1e-4, ..Default::default() }).unwrap());
    v.check(
        (ib.objective - CM_OPTIMUM).abs() <= 0.01 && t < limit,
        format!("ibcqp {:.5} {:.3}s", ib.objective, t.as_secs_f64()),
    );

    let (qp, t) = timed(|| run_ieqp_wr(&inst, &est, &IeQpSettings::default()).unwrap());
    v.check(
        (qp.objective - CM_OPTIMUM).abs() <= 0.05 && t < limit,
        format!("ieqp-wr {:.5} {:.3}s", qp.objective, t.as_secs_f64()),
    );

    let (lp, t) = timed(|| run_ieqlp(&inst, &est, &IeqLpSettings::default()).unwrap());
    v.check(
        (77.453..=79.1).contains(&lp.objective) && t < limit,
        format!("ieqlp-ma {:.5} {:.3}s", lp.objective, t.as_secs_f64()),
    );
    v
}

fn cost_dominance() -> Verdict {
    let mut v = Verdict::new();
    let settings = BenchSettings {
        bbtree: BbSettings {
            gap: 1e-4,
            ..Default::default()
        },
        ..Default::default()
    };
    let start = Instant::now();
    let mut worse = 0;
    let mut failed = 0;
    let mut open = 0;
    let mut best_ratio = f64::INFINITY;
    for inst in suite() {
        let swm = clear_swm(inst, &SwmSettings::default());
        let bb = run_algorithm(inst, Algorithm::BbTree, &settings);
        match (swm, bb) {
            (Ok(s), Ok(b)) => {
                if b.total_cost > s.total_cost + 1e-6 * s.total_cost.abs().max(1.0) {
                    worse += 1;
                }
                if b.diagnostics.status != SolveStatus::Converged {
                    open += 1;
                }
                best_ratio = best_ratio.min(b.total_cost / s.total_cost);
            }
            _ => failed += 1,
        }
    }
    let elapsed = start.elapsed();
    v.check(worse == 0, format!("{worse}/{} instances dearer than SWM", suite().len()));
    v.check(failed == 0, format!("{failed} solver failures"));
    v.check(elapsed < Duration::from_secs(1800), format!("{:.0}s", elapsed.as_secs_f64()));
    v.check(true, format!("{open} stopped at the node cap; lowest cost ratio {best_ratio:.4}"));
    v
}

fn swm_pricing() -> Verdict {
    let mut v = Verdict::new();
    let tol = Tolerances::default();
    let mut bad_price = 0;
    let mut paradoxical = 0;
    let mut bad_kkt = 0;
    for inst in suite() {
        let out = clear_swm(inst, &SwmSettings::default()).unwrap();
        for z in 0..inst.num_zones() {
            let members = inst.zone_members(z);
            let active: Vec<usize> = members.iter().copied().filter(|&i| tol.is_active(out.x[i], inst.players[i].q)).collect();
            let top = active
                .iter()
                .map(|&i| inst.players[i].marginal_price(out.x[i]))
                .fold(f64::NEG_INFINITY, f64::max);
            let expect = if active.is_empty() { 0.0 } else { top };
            if (out.v[z] - expect).abs() > 1e-9 * (1.0 + expect.abs()) {
                bad_price += 1;
            }
            let slack = 1e-6 * (1.0 + out.v[z].abs());
            for &i in &members {
                let p = &inst.players[i];
                let lam = p.marginal_price(out.x[i]);
                let interior = out.x[i] > 1e-7 * p.q && out.x[i] < p.q * (1.0 - 1e-7);
                let idle = out.x[i] <= 1e-7 * p.q;
                if (interior && (lam - out.v[z]).abs() > slack) || (idle && !active.is_empty() && p.a < out.v[z] - slack) {
                    bad_kkt += 1;
                }
            }
        }
        if !check_paradoxical_orders(inst, &out, &tol).is_empty() {
            paradoxical += 1;
        }
    }
    v.check(bad_price == 0, format!("{bad_price} zones priced off the highest active ask"));
    v.check(paradoxical == 0, format!("{paradoxical} instances with paradoxical orders"));
    v.check(bad_kkt == 0, format!("{bad_kkt} players off the merit order"));
    v
}

fn curve_shape_ok(curve: &ZonalStackCurve) -> bool {
    let mono = curve.breakpoints.windows(2).all(|w| w[1] >= w[0]) && curve.quantities.windows(2).all(|w| w[1] >= w[0]);
    let joined = curve.segments.windows(2).all(|w| {
        (w[0].v_hi - w[1].v_lo).abs() <= 1e-12 * (1.0 + w[0].v_hi.abs())
            && (w[0].y_hi - w[1].y_lo).abs() <= 1e-12 * (1.0 + w[0].y_hi.abs())
    });
    let ends = curve.segments.iter().filter(|s| !s.vertical).all(|s| {
        (s.price(s.y_lo) - s.v_lo).abs() <= 1e-9 * (1.0 + s.v_lo.abs())
            && (s.price(s.y_hi) - s.v_hi).abs() <= 1e-9 * (1.0 + s.v_hi.abs())
    });
    mono && joined && ends
}

/// Random points of `{M y <= b, 1'y = d, 0 <= y <= cap}`: convex
/// combinations of LP vertices for random directions.
fn feasible_points(inst: &MarketInstance, count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let nz = inst.num_zones();
    let (a, b, a_eq, b_eq) = zonal_constraints(inst, &ActiveEstimate::all(inst), &inst.polytope);
    let mut vertices = Vec::new();
    for _ in 0..(3 * nz).max(8) {
        let c = DVector::from_vec(normal_vec(rng, nz));
        let lp = LinearProgram::new(c, a.clone(), b.clone(), a_eq.clone(), b_eq.clone()).unwrap();
        let sol = solve_lp(&lp, 1e-10).unwrap();
        if sol.status == LpStatus::Optimal {
            vertices.push(sol.x);
        }
    }
    (0..count)
        .map(|_| {
            let w = dirichlet(rng, vertices.len());
            let mut y = DVector::zeros(nz);
            for (wk, vk) in w.iter().zip(&vertices) {
                y += vk * *wk;
            }
            y.iter().copied().collect()
        })
        .collect()
}

/// Fixed-`y` LP value with, per zone, the cheapest-intercept prefix of
/// players that minimises the zonal price.
fn fixed_y_oracle(inst: &MarketInstance, y: &[f64]) -> f64 {
    let nz = inst.num_zones();
    let order: Vec<Vec<usize>> = (0..nz)
        .map(|z| {
            let mut m = inst.zone_members(z);
            m.sort_by(|&i, &j| inst.players[i].a.total_cmp(&inst.players[j].a).then(i.cmp(&j)));
            m
        })
        .collect();
    let min_len: Vec<usize> = (0..nz)
        .map(|z| {
            let mut cap = 0.0;
            let mut k = 0;
            while k < order[z].len() && cap < y[z] - 1e-9 * (1.0 + y[z]) {
                cap += inst.players[order[z][k]].q;
                k += 1;
            }
            k.max(1)
        })
        .collect();
    let levels = order.iter().map(|o| o.len()).max().unwrap_or(1);
    let mut price = vec![f64::INFINITY; nz];
    for level in 1..=levels {
        let sets = (0..nz)
            .map(|z| order[z][..level.max(min_len[z]).min(order[z].len())].to_vec())
            .collect();
        let est = ActiveEstimate { sets };
        if let Ok(sol) = cm_objective_given_y(inst, &est, y) {
            for z in 0..nz {
                price[z] = price[z].min(sol.v[z]);
            }
        }
    }
    price.iter().zip(y).map(|(p, y)| p * y).sum()
}

fn stack_oracle() -> Verdict {
    let mut v = Verdict::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = 0;
    let mut checked = 0;
    let mut worst = 0.0f64;
    let mut bad_curves = 0;
    for inst in suite() {
        let curves = build_stack_curves(inst).unwrap();
        bad_curves += curves.iter().filter(|c| !curve_shape_ok(c)).count();
        for y in feasible_points(inst, 200, &mut rng) {
            let stack = stack_objective(&curves, &y).unwrap();
            let oracle = fixed_y_oracle(inst, &y);
            let rel = (stack - oracle).abs() / oracle.abs().max(1.0);
            worst = worst.max(rel);
            checked += 1;
            if !(rel <= 1e-6) {
                mismatches += 1;
            }
        }
    }
    v.check(mismatches == 0, format!("{mismatches}/{checked} points differ, worst {worst:.1e}"));
    v.check(bad_curves == 0, format!("{bad_curves} curves not monotone or not continuous"));
    v
}

fn bound_sandwich() -> Verdict {
    let mut v = Verdict::new();
    let inst = fixture_instance();
    let (f_star, _) = exhaustive_optimum(&inst);
    v.check((f_star - CM_OPTIMUM).abs() < 1e-3, format!("optimum {f_star:.8}"));
    let res = run_bbtree(&inst, &ActiveEstimate::all(&inst), &BbSettings::default()).unwrap();
    let slack = 1e-9;
    let below = res.trace.iter().filter(|r| r.f_lb > f_star + slack).count();
    let above = res.trace.iter().filter(|r| r.f_ub < f_star - slack).count();
    let ub_up = res.trace.windows(2).filter(|w| w[1].f_ub > w[0].f_ub + 1e-12).count();
    let lb_down = res.trace.windows(2).filter(|w| w[1].f_lb < w[0].f_lb - 1e-12).count();
    v.check(below == 0 && above == 0, format!("{} iterations, {below} lower and {above} upper violations", res.trace.len()));
    v.check(ub_up == 0 && lb_down == 0, format!("{ub_up} upper increases, {lb_down} lower decreases"));
    v
}

fn dikin_containment() -> Verdict {
    let mut v = Verdict::new();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut instances = vec![fixture_instance()];
    instances.extend(suite().iter().take(20).cloned());
    let mut count = 0;
    let mut worst = 0.0f64;
    let mut skipped = 0;
    for inst in &instances {
        let form = build_mcqp(inst, &ActiveEstimate::all(inst), &[]).unwrap();
        let res = match run_ieqp_on(&form, inst, None, &IeQpSettings::default()) {
            Ok(r) => r,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        for (ell, rows) in &res.ellipsoids {
            count += 1;
            let n = ell.p_s.len();
            for _ in 0..1000 {
                let u = DVector::from_vec(normal_vec(&mut rng, n));
                let z = ell.boundary_point(&u).unwrap();
                for &l in rows {
                    let viol = (form.a_i.row(l) * &z)[0] - form.b_i[l];
                    worst = worst.max(viol / (1.0 + form.b_i[l].abs()));
                }
            }
        }
    }
    v.check(worst <= 1e-9, format!("{count} ellipsoids, worst violation {worst:.1e}"));
    v.check(count > 0 && skipped == 0, format!("{skipped} runs failed"));
    v
}

/// Best objective `z'Gz + l'z` found by projected gradient from many starts
/// on the ball parametrisation of the feasible ellipse slice.
fn tr_oracle(g: &DMatrix<f64>, lin: &DVector<f64>, m_e: &DMatrix<f64>, b_e: &DVector<f64>, ell: &Ellipsoid, rng: &mut ChaCha8Rng) -> f64 {
    let n = g.nrows();
    let (z0, basis) = if m_e.nrows() > 0 {
        let svd = m_e.clone().svd(true, true);
        let z0 = svd.solve(b_e, 1e-12).unwrap();
        let v_t = svd.v_t.unwrap();
        let full = m_e.clone().transpose().svd(true, true);
        let _ = full;
        // complete the row space to an orthonormal basis of R^n
        let rank = m_e.nrows();
        let mut q = DMatrix::zeros(n, n);
        for k in 0..rank {
            q.set_column(k, &v_t.row(k).transpose());
        }
        let mut filled = rank;
        for e in 0..n {
            if filled == n {
                break;
            }
            let mut col = DVector::zeros(n);
            col[e] = 1.0;
            for k in 0..filled {
                let qk = q.column(k).clone_owned();
                col -= &qk * qk.dot(&col);
            }
            if col.norm() > 1e-8 {
                q.set_column(filled, &(&col / col.norm()));
                filled += 1;
            }
        }
        (z0, q.columns(rank, n - rank).clone_owned())
    } else {
        (DVector::zeros(n), DMatrix::identity(n, n))
    };
    let k = basis.ncols();
    let b_mat = &ell.a_s * &basis;
    let c = &ell.a_s * &z0 - &ell.p_s;
    let qr = b_mat.clone().qr();
    let (q, r) = (qr.q(), qr.r());
    let qc = q.tr_mul(&c);
    let rho = (ell.r * ell.r - (c.norm_squared() - qc.norm_squared())).max(0.0).sqrt();
    let r_inv = r.try_inverse().unwrap();
    // z = z0 + N R^-1 (u - Q'c), ||u|| <= rho
    let t = &basis * &r_inv;
    let shift = &z0 - &t * &qc;
    let gs = (g + g.transpose()) * 0.5;
    let hess = t.transpose() * &gs * &t * 2.0;
    let grad0 = t.transpose() * (&gs * &shift * 2.0 + lin);
    let f = |u: &DVector<f64>| {
        let z = &shift + &t * u;
        z.dot(&(&gs * &z)) + lin.dot(&z)
    };
    let lip = hess.symmetric_eigenvalues().amax().max(1e-12);
    let mut best = f64::INFINITY;
    for _ in 0..64 {
        let mut u = DVector::from_vec(normal_vec(rng, k));
        let scale = rho * rng.gen_range(0.0..1.0f64).powf(1.0 / k as f64) / u.norm().max(1e-300);
        u *= scale;
        for _ in 0..4000 {
            let grad = &hess * &u + &grad0;
            u -= grad / lip;
            let nu = u.norm();
            if nu > rho {
                u *= rho / nu;
            }
        }
        best = best.min(f(&u));
    }
    best
}

fn trust_region_accuracy() -> Verdict {
    let mut v = Verdict::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_gap = 0.0f64;
    let mut worst_kkt = 0.0f64;
    let mut failures = 0;
    for _ in 0..50 {
        let n = rng.gen_range(2..=6);
        let neq = rng.gen_range(0..=(n - 1).min(2));
        let g = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let lin = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let a_s = DMatrix::identity(n, n) + DMatrix::from_fn(n, n, |_, _| rng.gen_range(-0.3..0.3));
        let centre = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let r = rng.gen_range(0.5..2.0);
        let ell = Ellipsoid {
            p_s: &a_s * &centre,
            a_s,
            r,
        };
        let inside = ell.boundary_point(&DVector::from_vec(normal_vec(&mut rng, n))).unwrap() * 0.5 + &centre * 0.5;
        let m_e = DMatrix::from_fn(neq, n, |_, _| rng.gen_range(-1.0..1.0));
        let b_e = &m_e * &inside;
        match trust_region_solve(&g, Some(&lin), &m_e, &b_e, &ell, 1e-12) {
            Ok(sol) => {
                let oracle = tr_oracle(&g, &lin, &m_e, &b_e, &ell, &mut rng);
                worst_gap = worst_gap.max((sol.objective - oracle).abs());
                let feas = (ell.norm_at(&sol.z) - ell.r).max(0.0) + (&m_e * &sol.z - &b_e).amax();
                worst_kkt = worst_kkt.max(sol.stationarity).max(sol.complementarity).max(feas);
            }
            Err(_) => failures += 1,
        }
    }
    v.check(worst_gap <= 1e-4, format!("worst objective gap {worst_gap:.1e}"));
    v.check(worst_kkt <= 1e-8, format!("worst KKT residual {worst_kkt:.1e}"));
    v.check(failures == 0, format!("{failures} solver errors"));
    v
}

fn partitions(series: &zc_core::calibration::CalibrationSeries, s: &CostScales) -> Vec<Vec<(Vec<usize>, Vec<usize>)>> {
    series
        .instances
        .iter()
        .map(|inst| {
            let out = clear_with(&s.apply(inst).unwrap(), Mechanism::Swm).unwrap();
            out.active.iter().map(|a| (a.marginal.clone(), a.full.clone())).collect()
        })
        .collect()
}

fn calibration_round_trip() -> Verdict {
    let mut v = Verdict::new();
    let base = fixture_instance();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let nz = base.num_zones();
    let truth = CostScales {
        s_c: (0..nz).map(|_| rng.gen_range(0.7..1.4)).collect(),
        s_b: (0..nz).map(|_| rng.gen_range(0.7..1.4)).collect(),
    };
    let series = synthetic_series(&base, 50, &truth, Mechanism::Swm, 0.02, 9).unwrap();
    let (rep, t) = timed(|| fit_scales(&series, &FitSettings::default()).unwrap());
    let worst = truth
        .s_c
        .iter()
        .chain(&truth.s_b)
        .zip(rep.scales.s_c.iter().chain(&rep.scales.s_b))
        .map(|(a, b)| (a - b).abs() / a)
        .fold(0.0, f64::max);
    v.check(
        worst <= 0.05,
        format!("worst scale error {:.2}% after {} steps ({:.1}s)", 100.0 * worst, rep.iterations, t.as_secs_f64()),
    );

    // central differences on a short series away from the fit
    let other = CostScales {
        s_c: vec![1.2, 0.9, 1.1],
        s_b: vec![0.85, 1.15, 1.05],
    };
    let short = synthetic_series(&base, 5, &other, Mechanism::Swm, 0.02, 10).unwrap();
    let s0 = CostScales::ones(nz);
    let base_parts = partitions(&short, &s0);
    let analytic = evaluate(&short, &s0, Mechanism::Swm, GradientForm::MarginalSet).unwrap().grad;
    let printed = evaluate(&short, &s0, Mechanism::Swm, GradientForm::MarginalPlayer).unwrap().grad;
    let h = 1e-4;
    let mut worst_fd = 0.0f64;
    let mut worst_printed = 0.0f64;
    let mut excluded = 0;
    for j in 0..2 * nz {
        let shifted = |sign: f64| {
            let mut s = s0.clone();
            if j < nz {
                s.s_c[j] += sign * h;
            } else {
                s.s_b[j - nz] += sign * h;
            }
            s
        };
        let (sp, sm) = (shifted(1.0), shifted(-1.0));
        if partitions(&short, &sp) != base_parts || partitions(&short, &sm) != base_parts {
            excluded += 1;
            continue;
        }
        let fp = evaluate(&short, &sp, Mechanism::Swm, GradientForm::MarginalSet).unwrap().f;
        let fm = evaluate(&short, &sm, Mechanism::Swm, GradientForm::MarginalSet).unwrap().f;
        let fd = (fp - fm) / (2.0 * h);
        worst_fd = worst_fd.max((analytic[j] - fd).abs() / (1.0 + analytic[j].abs()));
        worst_printed = worst_printed.max((printed[j] - fd).abs() / (1.0 + printed[j].abs()));
    }
    v.check(
        worst_fd <= 1e-5 && excluded < 2 * nz,
        format!("gradient vs differences {worst_fd:.1e} ({excluded} switching coordinates excluded)"),
    );
    v.check(true, format!("single-player form {worst_printed:.1e}"));
    v
}

fn sweep_agreement() -> Verdict {
    let mut v = Verdict::new();
    let inst = fixture_instance();
    let settings = BenchSettings::default();
    let mut agree = 0;
    let mut total = 0;
    let mut t_bb = 0.0;
    let mut t_ib = 0.0;
    for profile in [OpponentProfile::PROFILE_I, OpponentProfile::PROFILE_II] {
        for player in 0..inst.num_players() {
            let spec = SweepSpec::fixture(player, profile);
            let bb = profit_sweep(&inst, &spec, Algorithm::BbTree, &settings).unwrap();
            let ib = profit_sweep(&inst, &spec, Algorithm::IbCqp, &settings).unwrap();
            t_bb += bb.time_ms;
            t_ib += ib.time_ms;
            for (a, b) in bb.rows.iter().zip(&ib.rows) {
                total += 1;
                let scale = a.profit.abs().max(b.profit.abs()).max(1e-9);
                if a.error.is_none() && b.error.is_none() && (a.profit - b.profit).abs() <= 1e-3 * scale {
                    agree += 1;
                }
            }
        }
    }
    let share = agree as f64 / total as f64;
    v.check(share >= 0.9, format!("{agree}/{total} points agree"));
    v.check(
        t_bb >= 10.0 * t_ib,
        format!("sweep time bbtree {:.1}s vs ibcqp {:.3}s", t_bb / 1e3, t_ib / 1e3),
    );
    v
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 9] = [
        ("fixture objectives", fixture_objectives),
        ("cost dominance over SWM", cost_dominance),
        ("SWM marginal pricing", swm_pricing),
        ("stack curve equals fixed-y oracle", stack_oracle),
        ("tree bounds sandwich the optimum", bound_sandwich),
        ("Dikin ellipsoid containment", dikin_containment),
        ("trust-region accuracy", trust_region_accuracy),
        ("calibration round trip", calibration_round_trip),
        ("profit sweep agreement", sweep_agreement),
    ];
    let selected: Option<Vec<usize>> = std::env::var("ZC_CRITERIA")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let id = k + 1;
        if selected.as_ref().is_some_and(|s| !s.contains(&id)) {
            continue;
        }
        let (res, t) = timed(|| catch_unwind(AssertUnwindSafe(run)));
        let verdict = res.unwrap_or_else(|e| Verdict {
            pass: false,
            detail: format!(
                "panicked: {}",
                e.downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default()
            ),
        });
        if !verdict.pass {
            failed += 1;
        }
        println!(
            "criterion {id} {name}: {} ({:.1}s) {}",
            if verdict.pass { "PASS" } else { "FAIL" },
            t.as_secs_f64(),
            verdict.detail
        );
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
