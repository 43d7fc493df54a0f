//! Property tests for the invariants of each module.

use proptest::prelude::*;

use hystereq::adiff::{Tape, Var};
use hystereq::dataset::{Channel, Dataset, DatasetMeta};
use hystereq::eval::{link_vars, nrmse, resimulate, DiscoveredModel};
use hystereq::excitation::{make_excitation, ExcitationSpec};
use hystereq::io::{load_dataset, save_dataset, write_columns};
use hystereq::learner::{init_z, Case, LearnOptions, LossProbe, ObservationSpec};
use hystereq::simulate::{
    add_noise, measured_snr_db, rk4_step, simulate_with, stiffness_term, BoucWenParams, IntegrateOptions, State,
};
use hystereq::sindy::{stlsq, stlsq_from, threshold_grid};
use hystereq::symreg::{canonicalize, discover, Expr, SRConfig};

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

// ---------------------------------------------------------------------------
// automatic differentiation

/// A pipeline touching every differentiable primitive; `b` and `c` must stay
/// away from zero because of `abs` and the fractional power.
fn pipeline_f64(a: f64, b: f64, c: f64) -> f64 {
    let p = b.abs().powf(1.5);
    a.sin() * b + (0.5 * c).exp() * (a * b).tanh() + p * c.cos() - (c * c + 1.0).ln() + a / (b * b + 1.0) + (a - c).powi(2)
}

fn pipeline_var<'t>(a: Var<'t>, b: Var<'t>, c: Var<'t>) -> Var<'t> {
    let p = b.abs().powf(1.5);
    a.sin() * b + c.scale(0.5).exp() * (a * b).tanh() + p * c.cos() - (c * c).shift(1.0).ln() + a / (b * b).shift(1.0)
        + (a - c).square()
}

fn pipeline_grad(x: [f64; 3]) -> (f64, [f64; 3]) {
    let tape = Tape::new();
    let v = tape.lift_all(&x);
    let y = pipeline_var(v[0], v[1], v[2]);
    let g = tape.backward(&y);
    (y.value(), [g.wrt(&v[0]), g.wrt(&v[1]), g.wrt(&v[2])])
}

fn away_from_zero() -> impl Strategy<Value = f64> {
    (-2.0..2.0f64).prop_filter("domain margin", |v| v.abs() > 1e-3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn ad_gradient_matches_central_differences(a in -2.0..2.0f64, b in away_from_zero(), c in away_from_zero()) {
        let x = [a, b, c];
        let (y, g) = pipeline_grad(x);
        prop_assert!(close(y, pipeline_f64(a, b, c), 1e-14));
        let h = 1e-6;
        for i in 0..3 {
            let (mut up, mut dn) = (x, x);
            up[i] += h;
            dn[i] -= h;
            let fd = (pipeline_f64(up[0], up[1], up[2]) - pipeline_f64(dn[0], dn[1], dn[2])) / (2.0 * h);
            prop_assert!((g[i] - fd).abs() / fd.abs().max(1.0) < 1e-5, "coordinate {}: ad {} fd {}", i, g[i], fd);
        }
    }

    #[test]
    fn ad_is_deterministic(a in -2.0..2.0f64, b in away_from_zero(), c in away_from_zero()) {
        let (y1, g1) = pipeline_grad([a, b, c]);
        let (y2, g2) = pipeline_grad([a, b, c]);
        prop_assert_eq!(y1.to_bits(), y2.to_bits());
        for i in 0..3 {
            prop_assert_eq!(g1[i].to_bits(), g2[i].to_bits());
        }
    }

    #[test]
    fn backward_is_linear(a in -2.0..2.0f64, b in away_from_zero(), alpha in -3.0..3.0f64, beta in -3.0..3.0f64) {
        let tape = Tape::new();
        let (va, vb) = (tape.lift(a), tape.lift(b));
        let f = va.sin() * vb;
        let g = (va * vb).tanh() + vb.abs().powf(2.5);
        let gf = tape.backward(&f);
        let gg = tape.backward(&g);
        let h = f * alpha + g * beta;
        let gh = tape.backward(&h);
        for v in [&va, &vb] {
            let expect = alpha * gf.wrt(v) + beta * gg.wrt(v);
            prop_assert!(close(gh.wrt(v), expect, 1e-12), "{} vs {}", gh.wrt(v), expect);
        }
    }
}

// ---------------------------------------------------------------------------
// simulation

fn complex_system() -> BoucWenParams {
    BoucWenParams::complex_structure()
}

/// Terminal state, plus whether `ẋ` and `z` kept their signs throughout.
/// `|ẋ|` and `|z|^(n-1)` make the vector field non-smooth where either
/// crosses zero, and no fixed-step method keeps its order across a kink.
fn terminal_state(p: &BoucWenParams, s0: State, dt: f64, duration: f64) -> (State, bool) {
    let u = |t: f64| (2.0 * t).sin();
    let steps = (duration / dt).round() as usize;
    let mut s = s0;
    let mut smooth = true;
    for i in 0..steps {
        let next = rk4_step(s, i as f64 * dt, dt, p, &u).unwrap();
        smooth &= next[1].signum() == s0[1].signum() && next[2].signum() == s0[2].signum();
        s = next;
    }
    (s, smooth)
}

fn state_error(a: State, b: State) -> f64 {
    a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

fn sweep(duration: f64, rate: f64) -> ExcitationSpec {
    ExcitationSpec::sinesweep(40.0, 20.0, 50.0, duration, rate)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn rk4_is_fourth_order(x0 in -2.0..2.0f64, v0 in 0.05..1.5f64, z0 in 0.05..1.0f64, flip in any::<bool>()) {
        let p = complex_system();
        let sgn = if flip { -1.0 } else { 1.0 };
        let s0 = [x0, sgn * v0, sgn * z0];
        let dt = 0.01;
        let (reference, smooth) = terminal_state(&p, s0, dt / 16.0, 1.0);
        prop_assume!(smooth);
        let coarse = state_error(terminal_state(&p, s0, dt, 1.0).0, reference);
        let fine = state_error(terminal_state(&p, s0, dt / 2.0, 1.0).0, reference);
        let ratio = coarse / fine;
        prop_assert!((12.0..=20.0).contains(&ratio), "error ratio {} ({} / {})", ratio, coarse, fine);
    }

    #[test]
    fn simulated_channels_satisfy_the_motion_law(x0 in -1e-3..1e-3f64, v0 in -0.1..0.1f64, z0 in -1e-3..1e-3f64) {
        let p = BoucWenParams::benchmark();
        let exc = make_excitation(&sweep(0.3, 3000.0)).unwrap();
        let ds = simulate_with(&p, &exc, [x0, v0, z0], IntegrateOptions::default()).unwrap();
        let (x, v, a, z) = (ds.x.as_ref().unwrap(), ds.xdot.as_ref().unwrap(), ds.xddot.as_ref().unwrap(), ds.z.as_ref().unwrap());
        let umax = ds.u.iter().fold(0.0f64, |m, u| m.max(u.abs()));
        for i in 0..ds.len() {
            let r = p.m * a[i] + p.c * v[i] + p.k * stiffness_term(x[i], p.stiffness_power) + p.alpha * z[i] - ds.u[i];
            prop_assert!(r.abs() < 1e-9 * umax, "residual {} at {}", r, i);
        }
    }

    #[test]
    fn noise_reaches_the_requested_snr(snr in 10.0..40.0f64, seed in any::<u64>()) {
        let n = 100_000;
        let t: Vec<f64> = (0..n).map(|i| i as f64 * 1e-3).collect();
        let x: Vec<f64> = t.iter().map(|t| std::f64::consts::SQRT_2 * (7.0 * t).sin()).collect();
        let ds = Dataset { u: vec![0.0; n], x: Some(x.clone()), xdot: None, xddot: None, z: None, t, meta: DatasetMeta::default() };
        let noisy = add_noise(&ds, snr, seed).unwrap();
        let measured = measured_snr_db(&x, noisy.x.as_ref().unwrap());
        prop_assert!((measured - snr).abs() <= 0.2, "{} dB vs {} dB", measured, snr);
        prop_assert_eq!(&noisy.u, &ds.u);
        let again = add_noise(&ds, snr, seed).unwrap();
        prop_assert_eq!(noisy, again);
    }
}

// ---------------------------------------------------------------------------
// evaluation

fn nonconstant_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..64).prop_flat_map(|n| {
        (prop::collection::vec(-100.0..100.0f64, n), prop::collection::vec(-100.0..100.0f64, n))
            .prop_filter("truth needs a range", |(_, t)| t.iter().any(|v| (v - t[0]).abs() > 1e-3))
    })
}

proptest! {
    #[test]
    fn nrmse_is_affine_invariant((pred, truth) in nonconstant_pair(), a in prop_oneof![-10.0..-0.1f64, 0.1..10.0f64], b in -50.0..50.0f64) {
        let base = nrmse(&pred, &truth).unwrap();
        let p: Vec<f64> = pred.iter().map(|v| a * v + b).collect();
        let t: Vec<f64> = truth.iter().map(|v| a * v + b).collect();
        let moved = nrmse(&p, &t).unwrap();
        prop_assert!((moved - base).abs() <= 1e-9 * (1.0 + base), "{} vs {}", moved, base);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn resimulating_the_true_law_reproduces_the_simulator(
        scale_m in 0.5..2.0f64, scale_k in 0.5..2.0f64, scale_a in 0.5..2.0f64,
        beta in 400.0..1200.0f64, gamma in -1100.0..1100.0f64,
    ) {
        let mut p = BoucWenParams::benchmark();
        p.m *= scale_m;
        p.k *= scale_k;
        p.a *= scale_a;
        p.beta = beta;
        p.gamma = gamma;
        let exc = make_excitation(&sweep(0.2, 3000.0)).unwrap();
        let opts = IntegrateOptions::default();
        // some draws leave the stable regime; that says nothing about the round trip
        let truth = simulate_with(&p, &exc, [0.0; 3], opts);
        prop_assume!(truth.is_ok());
        let truth = truth.unwrap();
        let pred = resimulate(&DiscoveredModel::from_params(&p), &exc, [0.0; 3], opts).unwrap();
        for c in [Channel::X, Channel::Xdot, Channel::Xddot] {
            let (a, b) = (truth.require(c).unwrap(), pred.require(c).unwrap());
            let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (u, w) in a.iter().zip(b) {
                prop_assert!((u - w).abs() <= 1e-9 * scale, "{}: {} vs {}", c.name(), u, w);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// learner

fn complex_record(seconds: f64) -> Dataset {
    let p = complex_system();
    let exc = make_excitation(&ExcitationSpec::sinusoid(1.0, 2.0, seconds, 100.0)).unwrap();
    simulate_with(&p, &exc, [0.5, 0.0, 0.0], IntegrateOptions::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn init_z_scales_inversely_with_alpha(m0 in 0.1..5.0f64, c0 in 0.0..2.0f64, k0 in 0.1..5.0f64, alpha0 in 0.1..10.0f64, s in 0.01..100.0f64) {
        let ds = complex_record(1.0);
        let z = init_z(&ds, m0, c0, k0, alpha0, 3).unwrap();
        let zs = init_z(&ds, m0, c0, k0, alpha0 * s, 3).unwrap();
        for (a, b) in z.iter().zip(&zs) {
            prop_assert!((a / s - b).abs() <= 4.0 * f64::EPSILON * (a / s).abs(), "{} vs {}", a / s, b);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn learner_gradient_matches_finite_differences(seed in 0u64..1000, jitter in 0.9..1.1f64) {
        let ds = complex_record(1.5);
        let opts = LearnOptions { seed, ..LearnOptions::default() };
        let probe = LossProbe::new(&[ds], None, Case::HysteresisDiscovery, &ObservationSpec::all(), &opts).unwrap();
        let mut params = probe.params().to_vec();
        for v in params.iter_mut() {
            *v *= jitter;
        }
        let (_, grad) = probe.loss_and_grad(&params).unwrap();
        let mut rng = rand_indices(seed, params.len());
        for _ in 0..20 {
            let i = rng.next().unwrap();
            let h = 1e-6 * params[i].abs().max(1e-3);
            let (mut up, mut dn) = (params.clone(), params.clone());
            up[i] += h;
            dn[i] -= h;
            let fd = (probe.loss(&up).unwrap() - probe.loss(&dn).unwrap()) / (2.0 * h);
            let err = (grad[i] - fd).abs() / fd.abs().max(grad[i].abs()).max(1e-8);
            prop_assert!(err < 1e-4, "coordinate {}: ad {} fd {}", i, grad[i], fd);
        }
    }
}

/// Deterministic pseudo-random coordinates, the first few always being the
/// motion parameters.
fn rand_indices(seed: u64, n: usize) -> impl Iterator<Item = usize> {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    (0..).map(move |k| {
        if k < 4 {
            return k % n;
        }
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 33) as usize) % n
    })
}

// ---------------------------------------------------------------------------
// symbolic regression

fn small_sr(seed: u64) -> SRConfig {
    SRConfig {
        population: 64,
        generations: 8,
        refine_iters: 20,
        max_rows: 200,
        seed,
        ..SRConfig::default()
    }
}

fn features(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let phase = (seed % 17) as f64 * 0.3;
    let a = (0..n).map(|i| (0.07 * i as f64 + phase).sin()).collect();
    let b = (0..n).map(|i| (0.031 * i as f64).cos() * 2.0).collect();
    (a, b)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn sr_is_deterministic_and_its_front_valid(seed in 0u64..1000, c1 in -3.0..3.0f64, c2 in -3.0..3.0f64) {
        let n = 400;
        let (a, b) = features(n, seed);
        let target: Vec<f64> = a.iter().zip(&b).map(|(x, y)| c1 * x + c2 * x * y.abs()).collect();
        let cols = [("a", a.as_slice()), ("b", b.as_slice())];
        let cfg = small_sr(seed);
        let f1 = discover(&target, &cols, &cfg).unwrap();
        let f2 = discover(&target, &cols, &cfg).unwrap();
        prop_assert_eq!(&f1, &f2);
        prop_assert!(!f1.is_empty());
        for w in f1.members.windows(2) {
            prop_assert!(w[0].complexity < w[1].complexity);
            prop_assert!(w[0].loss > w[1].loss);
        }
        for m in &f1.members {
            prop_assert_eq!(m.complexity, m.expr.complexity());
        }
    }
}

fn arb_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (-3.0..3.0f64).prop_map(Expr::Const),
        Just(Expr::var(0)),
        Just(Expr::var(1)),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::add(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::sub(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::mul(a, b)),
            inner.clone().prop_map(Expr::abs),
            inner.clone().prop_map(Expr::neg),
            (inner, prop_oneof![Just(0.5), Just(1.5), Just(2.0)]).prop_map(|(a, e)| Expr::pow(Expr::abs(a), e)),
        ]
    })
}

/// Sum of absolute values of every subexpression, bounding the rounding
/// error of either evaluation order.
fn magnitude(e: &Expr, row: &[f64]) -> f64 {
    let mut total = 0.0;
    e.visit(&mut |s| total += s.eval_row(row).abs());
    total
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn canonicalization_preserves_values(e in arb_expr(), v in -2.0..2.0f64, z in -2.0..2.0f64) {
        let row = [v, z];
        let c = canonicalize(&e);
        let (a, b) = (e.eval_row(&row), c.eval_row(&row));
        prop_assume!(a.is_finite());
        let tol = 1e-9 * (1.0 + magnitude(&e, &row));
        prop_assert!((a - b).abs() <= tol, "{:?} -> {:?}: {} vs {}", e, c, a, b);
        prop_assert_eq!(canonicalize(&c), c.clone());
    }

    #[test]
    fn bouc_wen_link_is_odd(a in 1.0..10.0f64, beta in -10.0..10.0f64, gamma in -10.0..10.0f64,
                            n in prop_oneof![Just(1.0), Just(1.5), Just(2.0)], v in -2.0..2.0f64, z in -2.0..2.0f64) {
        let p = BoucWenParams { a, beta, gamma, n, ..BoucWenParams::benchmark() };
        let g = DiscoveredModel::from_params(&p).link;
        let (fwd, back) = (g.eval_row(&[v, z]), g.eval_row(&[-v, -z]));
        prop_assert!((fwd + back).abs() <= 1e-6 * fwd.abs().max(1.0), "{} vs {}", fwd, back);
        prop_assert_eq!(link_vars().len(), 2);
    }
}

// ---------------------------------------------------------------------------
// sparse regression

fn gaussian_columns(seed: u64, n: usize, k: usize) -> Vec<Vec<f64>> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..k).map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()).collect()
}

fn sparse_problem(seed: u64, snr_db: f64) -> (Vec<Vec<f64>>, Vec<f64>, Vec<bool>) {
    let (n, k) = (400, 8);
    let mut cols = gaussian_columns(seed, n, k + 1);
    let noise = cols.pop().unwrap();
    let support: Vec<bool> = (0..k).map(|j| (seed >> j) & 1 == 1 || j == (seed as usize % k)).take(k).collect();
    let coef: Vec<f64> = (0..k).map(|j| if support[j] { 0.5 + (j as f64 * 0.37 + seed as f64 * 0.11) % 1.5 } else { 0.0 }).collect();
    let clean: Vec<f64> = (0..n).map(|i| (0..k).map(|j| coef[j] * cols[j][i]).sum()).collect();
    let p = clean.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let sigma = (p / 10f64.powf(snr_db / 10.0)).sqrt();
    let target = clean.iter().zip(&noise).map(|(c, e)| c + sigma * e).collect();
    (cols, target, support)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn stlsq_recovers_support_over_a_decade_of_thresholds(seed in 1u64..4096, snr in 40.0..60.0f64) {
        let (cols, target, support) = sparse_problem(seed, snr);
        let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
        let recovered = threshold_grid(0.01, 0.1, 10)
            .into_iter()
            .any(|th| stlsq(&refs, &target, th, 0.0).map(|f| f.active == support).unwrap_or(false));
        prop_assert!(recovered, "support {:?} not recovered", support);
    }

    #[test]
    fn stlsq_is_a_fixed_point_of_its_support(seed in 1u64..4096, snr in 10.0..60.0f64, th in 0.01..0.3f64) {
        let (cols, target, _) = sparse_problem(seed, snr);
        let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
        let fit = stlsq(&refs, &target, th, 1e-8).unwrap();
        let again = stlsq_from(&refs, &target, th, 1e-8, &fit.active).unwrap();
        prop_assert_eq!(&fit.active, &again.active);
        prop_assert_eq!(&fit.coefficients, &again.coefficients);
        for (c, a) in fit.coefficients.iter().zip(&fit.active) {
            if !a {
                prop_assert_eq!(*c, 0.0);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// data files

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn dataset_csv_round_trips_bitwise(values in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 8..40), dt in 1e-4..1.0f64) {
        let n = values.len() / 4;
        prop_assume!(n >= 2);
        let t: Vec<f64> = (0..n).map(|i| i as f64 * dt).collect();
        let ds = Dataset {
            t,
            u: values[..n].to_vec(),
            x: Some(values[n..2 * n].to_vec()),
            xdot: Some(values[2 * n..3 * n].to_vec()),
            xddot: Some(values[3 * n..4 * n].to_vec()),
            z: None,
            meta: DatasetMeta::default(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        save_dataset(&path, &ds).unwrap();
        let back = load_dataset(&path, false).unwrap();
        for (a, b) in [(&ds.t, &back.t), (&ds.u, &back.u)] {
            prop_assert!(a.iter().zip(b).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
        for c in [Channel::X, Channel::Xdot, Channel::Xddot] {
            let (a, b) = (ds.channel(c).unwrap(), back.channel(c).unwrap());
            prop_assert!(a.iter().zip(b).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }

    #[test]
    fn shuffled_rows_are_rejected(seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let n = 50;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        prop_assume!(order.iter().enumerate().any(|(i, &j)| i != j));
        let t: Vec<f64> = order.iter().map(|&i| i as f64 * 0.01).collect();
        let u: Vec<f64> = t.iter().map(|t| t.sin()).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        write_columns(&path, &["t", "u", "x"], &[&t, &u, &u]).unwrap();
        prop_assert!(load_dataset(&path, false).is_err());
    }
}

#[test]
fn missing_channels_are_derived_and_marked() {
    let p = BoucWenParams::benchmark();
    let exc = make_excitation(&sweep(0.5, 3000.0)).unwrap();
    let ds = simulate_with(&p, &exc, [0.0; 3], IntegrateOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x_only.csv");
    write_columns(&path, &["t", "u", "x"], &[&ds.t, &ds.u, ds.x.as_ref().unwrap()]).unwrap();
    let back = load_dataset(&path, true).unwrap();
    assert!(back.meta.derived.contains(&"xdot".to_string()));
    assert!(back.meta.derived.contains(&"xddot".to_string()));
    let err = nrmse(back.xdot.as_ref().unwrap(), ds.xdot.as_ref().unwrap()).unwrap();
    assert!(err < 1.0, "derived velocity NRMSE {err}%");
}
