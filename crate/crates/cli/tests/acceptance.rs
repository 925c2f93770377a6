//! Acceptance criteria. Each test prints one `criterion N ... PASS|FAIL`
//! line before asserting.
//!
//! Run alone with `cargo test -p temu-cli --test acceptance -- --nocapture`.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::Rng;
use statrs::distribution::{ContinuousCDF, InverseGamma as IgDist};
use temu::abm::{abm_step, simulate, AbmParams, AbmState};
use temu::calibrate::{gibbs, Chain, Grids, InverseGamma, Observation, ObservationSet, Priors, UniformPrior};
use temu::design::{latin_hypercube, Bounds};
use temu::glacier::{build_glacier_tensor, thickness, GlacierConstants, GlacierRanges};
use temu::tensor::{frobenius_residual, hosvd, hosvd_full};
use temu::{build_emulator, build_svd_emulator, Matrix, ModeSpec, RngSeed, SurrogateConfig, SurrogateKind, Tensor};
use temu_cli::config::{
    AbmEmulatorKind, AbmExperimentConfig, CalibrateConfig, Combination, Config, FlatBaselineConfig,
    GlacierExperimentConfig, DEFAULT_SEED,
};
use temu_cli::pipelines::{self, GlacierRow};

const SEED: RngSeed = RngSeed(DEFAULT_SEED);

fn verdict(n: u32, name: &str, pass: bool, detail: String) {
    println!("criterion {n:>2} {name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n} {name} failed: {detail}");
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn random_matrix(r: usize, c: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.random::<f64>() * 2.0 - 1.0)
}

#[test]
fn c01_full_rank_hosvd_is_exact() {
    let start = Instant::now();
    let mut rng = RngSeed(101).rng();
    let (mut worst_rec, mut worst_orth) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let order = rng.random_range(2..=5);
        let dims: Vec<usize> = (0..order).map(|_| rng.random_range(1..=12)).collect();
        let t = Tensor::from_fn(dims, |_| rng.random::<f64>() * 2.0 - 1.0).unwrap();
        let f = hosvd_full(&t).unwrap();
        let rec = f.reconstruct().sub(&t).unwrap().frobenius_norm() / t.frobenius_norm().max(f64::MIN_POSITIVE);
        worst_rec = worst_rec.max(rec);
        for u in f.factors() {
            let gram = u.transpose() * u;
            let dev = (gram - Matrix::identity(u.ncols(), u.ncols())).abs().max();
            worst_orth = worst_orth.max(dev);
        }
    }
    let elapsed = start.elapsed();
    verdict(
        1,
        "full-rank HOSVD exactness",
        worst_rec < 1e-10 && worst_orth < 1e-10 && elapsed < Duration::from_secs(10),
        format!("max relative error {worst_rec:.2e}, max orthonormality error {worst_orth:.2e}, {elapsed:.1?}"),
    );
}

#[test]
fn c02_two_mode_emulator_equals_svd_emulator() {
    let start = Instant::now();
    let mut rng = RngSeed(102).rng();
    let kinds = [SurrogateKind::Gp, SurrogateKind::Rf, SurrogateKind::Nn];
    let mut worst = 0.0f64;
    for m in 0..20 {
        let kind = kinds[m % 3];
        let (rows, runs) = (rng.random_range(5..=15), rng.random_range(8..=20));
        let c = random_matrix(rows, runs, &mut rng);
        let inputs = random_matrix(runs, 2, &mut rng);
        let r = rng.random_range(1..=rows.min(runs).min(5));
        let seed = RngSeed(1000 + m as u64);
        let base = build_svd_emulator(&c, r, kind, &inputs, &SurrogateConfig::default(), seed).unwrap();
        let specs = vec![ModeSpec::Grid, ModeSpec::learned(kind, inputs)];
        let e = build_emulator(&Tensor::from_matrix(&c), &[r, r], specs, seed).unwrap();
        for _ in 0..5 {
            let q = [rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0];
            let a = base.emulate(&q).unwrap();
            let b = e.emulate(&[&q]).unwrap();
            for (x, y) in a.iter().zip(b.data()) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    let elapsed = start.elapsed();
    verdict(
        2,
        "tensor vs SVD emulator equivalence",
        worst < 1e-10 && elapsed < Duration::from_secs(30),
        format!("max difference {worst:.2e}, {elapsed:.1?}"),
    );
}

#[test]
fn c03_glacier_truncation_residual() {
    let cfg = GlacierExperimentConfig::default();
    let mut detail = Vec::new();
    let mut pass = true;
    for s in [10usize, 20] {
        let start = Instant::now();
        let d = build_glacier_tensor(s, &cfg.ranges, &cfg.constants, SEED.split(1).split_path(&[0, s as u64]), false)
            .unwrap();
        let ranks = [cfg.max_rank.min(s * s), s, cfg.max_rank.min(s * s)];
        let f = hosvd(&d.tensor, &ranks).unwrap();
        let res = frobenius_residual(&d.tensor, &f).unwrap();
        let elapsed = start.elapsed();
        pass &= res < 1e-7 && elapsed < Duration::from_secs(300);
        detail.push(format!("s={s}: residual {res:.2e} m (max {:.0} m), {elapsed:.1?}", d.tensor.max_abs()));
    }
    verdict(3, "glacier truncation residual", pass, detail.join("; "));
}

const REPLICATES: usize = 10;

/// s = 20 glacier runs over ten replicates for the RF, GP and mixed
/// combinations, shared by the trend, combination and baseline criteria.
fn glacier_s20() -> &'static [GlacierRow] {
    static ROWS: OnceLock<Vec<GlacierRow>> = OnceLock::new();
    ROWS.get_or_init(|| {
        let cfg = GlacierExperimentConfig {
            sizes: vec![20],
            replicates: REPLICATES,
            combinations: vec![Combination::Rf, Combination::Gp, Combination::Mixed],
            ..Default::default()
        };
        pipelines::glacier_experiment(&cfg, SEED, None).unwrap()
    })
}

fn mares(rows: &[GlacierRow], s: usize, c: Combination) -> Vec<f64> {
    let mut rows: Vec<&GlacierRow> = rows.iter().filter(|r| r.s == s && r.combination == c).collect();
    rows.sort_by_key(|r| r.replicate);
    rows.iter().map(|r| r.mare).collect()
}

#[test]
fn c04_mixed_error_decreases_with_size() {
    let cfg = GlacierExperimentConfig {
        sizes: vec![10],
        replicates: 3,
        combinations: vec![Combination::Mixed],
        ..Default::default()
    };
    let small = mares(&pipelines::glacier_experiment(&cfg, SEED, None).unwrap(), 10, Combination::Mixed);
    let large = mares(glacier_s20(), 20, Combination::Mixed);
    let pairs: Vec<(f64, f64)> = small.iter().copied().zip(large.iter().copied()).collect();
    let decreasing = pairs.iter().filter(|(a, b)| b < a).count();
    verdict(
        4,
        "mixed MARE decreases from s=10 to s=20",
        decreasing >= 2,
        format!(
            "{decreasing}/3 replicates decrease: {}",
            pairs.iter().map(|(a, b)| format!("{a:.4}->{b:.4}")).collect::<Vec<_>>().join(", ")
        ),
    );
}

#[test]
fn c05_mixed_beats_pure_combinations() {
    let rows = glacier_s20();
    let [rf, gp, mixed] = [Combination::Rf, Combination::Gp, Combination::Mixed].map(|c| median(mares(rows, 20, c)));
    verdict(
        5,
        "mixed median MARE <= pure RF and pure GP at s=20",
        mixed <= rf && mixed <= gp,
        format!("medians over {REPLICATES} replicates: mixed {mixed:.4}, rf {rf:.4}, gp {gp:.4}"),
    );
}

#[test]
fn c06_flat_baseline_magnitudes() {
    let cfg = Config::default();
    let flat = FlatBaselineConfig { kinds: vec![SurrogateKind::Rf, SurrogateKind::Gp], ..cfg.flat };
    let rows = pipelines::flat_baseline(&flat, &cfg.glacier, SEED, None).unwrap();
    let get = |k| rows.iter().find(|r| r.kind == k).unwrap().mare;
    let (rf, gp) = (get(SurrogateKind::Rf), get(SurrogateKind::Gp));
    let mixed = median(mares(glacier_s20(), 20, Combination::Mixed));
    verdict(
        6,
        "flat baseline magnitudes",
        (0.02..=0.10).contains(&rf) && (0.015..=0.08).contains(&gp) && mixed < gp,
        format!("flat rf {rf:.4} in [0.02, 0.10], flat gp {gp:.4} in [0.015, 0.08], mixed s=20 median {mixed:.4}"),
    );
}

#[test]
fn c07_abm_emulation_fidelity() {
    let start = Instant::now();
    let cfg = AbmExperimentConfig::default();
    let rows = pipelines::abm_experiment(&cfg, SEED, None).unwrap();
    let elapsed = start.elapsed();
    let row = |case, kind| rows.iter().find(|r| r.case == case && r.emulator == kind).unwrap();
    let c1 = row(1, AbmEmulatorKind::Mixed);
    let (c2m, c2r) = (row(2, AbmEmulatorKind::Mixed), row(2, AbmEmulatorKind::Rf));
    let ratio = c1.spread_error / c1.mean_spread;
    verdict(
        7,
        "agent-model emulation fidelity",
        ratio <= 0.15
            && c2m.spread_error <= c2r.spread_error
            && c2m.elongation_error <= c2r.elongation_error
            && elapsed < Duration::from_secs(600),
        format!(
            "case 1 spread error {:.1}% of mean spread; case 2 spread {:.4} (mixed) vs {:.4} (rf), \
             elongation {:.4} (mixed) vs {:.4} (rf); {elapsed:.1?}",
            100.0 * ratio,
            c2m.spread_error,
            c2r.spread_error,
            c2m.elongation_error,
            c2r.elongation_error
        ),
    );
}

#[test]
fn c08_bootstrap_matches_enumeration() {
    let mut rng = RngSeed(108).rng();
    let c = random_matrix(4, 3, &mut rng);
    let inputs = Matrix::from_column_slice(3, 1, &[0.0, 0.5, 1.0]);
    let specs = vec![ModeSpec::Grid, ModeSpec::learned(SurrogateKind::Gp, inputs)];
    let mut e = build_emulator(&Tensor::from_matrix(&c), &[2, 2], specs, RngSeed(5)).unwrap();
    let residuals = Matrix::from_row_slice(3, 2, &[0.05, -0.02, -0.03, 0.04, 0.01, 0.0]);
    e.set_residuals(1, residuals.clone()).unwrap();

    let q: &[f64] = &[0.4];
    let row = &e.learned_rows(&[q]).unwrap()[0];
    let outcomes: Vec<Tensor> = (0..3)
        .map(|j| {
            let shifted: Vec<f64> = row.iter().enumerate().map(|(k, v)| v + residuals[(j, k)]).collect();
            e.contract(&[shifted]).unwrap()
        })
        .collect();
    let b = 100_000;
    let samples = e.bootstrap_predict(&[q], b, RngSeed(12)).unwrap();
    let mut counts = [0usize; 3];
    let mut unmatched = 0;
    for s in &samples {
        match outcomes.iter().position(|o| o.data().iter().zip(s.data()).all(|(x, y)| (x - y).abs() < 1e-12)) {
            Some(j) => counts[j] += 1,
            None => unmatched += 1,
        }
    }
    let p = 1.0 / 3.0;
    let se = (p * (1.0 - p) / b as f64).sqrt();
    let worst = counts.iter().map(|&c| (c as f64 / b as f64 - p).abs() / se).fold(0.0, f64::max);
    verdict(
        8,
        "bootstrap vs exhaustive enumeration",
        unmatched == 0 && worst < 3.0,
        format!("counts {counts:?}, {unmatched} unmatched, worst deviation {worst:.2} SE at B={b}"),
    );
}

fn ks(mut draws: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    draws.sort_by(f64::total_cmp);
    let n = draws.len() as f64;
    let mut d: f64 = 0.0;
    let mut k = 0;
    while k < draws.len() {
        let x = draws[k];
        let below = k as f64 / n;
        while k < draws.len() && draws[k] == x {
            k += 1;
        }
        let f = cdf(x);
        d = d.max((f - below).abs()).max((k as f64 / n - f).abs());
    }
    d
}

fn zero_model(agents: usize, times: usize) -> impl Fn(f64, f64) -> temu::Result<(Matrix, Matrix)> + Sync {
    move |_, _| Ok((Matrix::zeros(agents, times), Matrix::zeros(agents, times)))
}

#[test]
fn c09_calibration() {
    // (a) four unit x-residuals with (rho, v) pinned: sampled sigma²_x mean
    // against quadrature of prior × likelihood.
    let prior = InverseGamma { shape: 3.0, scale: 4.0 };
    let log_lik = |s2: f64| -2.0 * (2.0 * std::f64::consts::PI * s2).ln() - 4.0 / (2.0 * s2);
    let h = 1e-4;
    let (mut z, mut first) = (0.0, 0.0);
    for k in 1..2_000_000 {
        let s2 = k as f64 * h;
        let w = (prior.ln_pdf(s2) + log_lik(s2)).exp();
        z += w;
        first += s2 * w;
    }
    let integrated = first / z;
    let records =
        [(0, 0), (0, 1), (1, 0), (1, 1)].map(|(agent, time)| Observation { agent, time, x: 1.0, y: 0.0 }).to_vec();
    let o = ObservationSet::new(records).unwrap();
    let priors = Priors::default();
    let pinned = Grids { rho: vec![10.0], v: vec![2.0] };
    let chain = gibbs(&o, &priors, &pinned, 100_000, RngSeed(31), &zero_model(2, 2)).unwrap();
    let sampled = chain.sigma2_x.iter().sum::<f64>() / chain.len() as f64;
    let rel_a = (sampled - integrated).abs() / integrated;

    // (b) synthetic trajectories at (v, rho) = (0.5, 35) through the emulators.
    let cfg = CalibrateConfig::default();
    let run = pipelines::calibrate(&cfg, SEED, None, None, None).unwrap();
    let step = |g: &[f64]| g[1] - g[0];
    let (rho_step, v_step) = (step(&run.grids.rho), step(&run.grids.v));
    let s = &run.summary;
    let rho_ok = (s.rho.mode - cfg.synthetic.rho).abs() <= rho_step + 1e-9;
    let v_ok = (s.v.mode - cfg.synthetic.v).abs() <= v_step + 1e-9;
    let width = |lo: f64, hi: f64, u: UniformPrior| (hi - lo) / (u.hi - u.lo);
    let (rho_w, v_w) = (width(s.rho.lower, s.rho.upper, cfg.priors.rho), width(s.v.lower, s.v.upper, cfg.priors.v));
    let narrow = rho_w <= 0.25 && v_w <= 0.25;

    // (c) no data: marginals are the priors.
    let grids = Grids::spanning(&priors, 64);
    let chain: Chain =
        gibbs(&ObservationSet::default(), &priors, &grids, 10_000, RngSeed(5), &zero_model(1, 1)).unwrap();
    let unif = |u: UniformPrior| move |x: f64| ((x - u.lo) / (u.hi - u.lo)).clamp(0.0, 1.0);
    let ig = IgDist::new(3.0, 4.0).unwrap();
    let d = [
        ks(chain.rho.clone(), unif(priors.rho)),
        ks(chain.v.clone(), unif(priors.v)),
        ks(chain.sigma2_x.clone(), |x| ig.cdf(x)),
        ks(chain.sigma2_y.clone(), |x| ig.cdf(x)),
    ];
    let ks_max = d.iter().copied().fold(0.0, f64::max);

    verdict(
        9,
        "calibration",
        rel_a < 0.01 && rho_ok && v_ok && narrow && ks_max < 0.05,
        format!(
            "(a) sampled {sampled:.4} vs integrated {integrated:.4}, rel {rel_a:.2e}; \
             (b) modes rho {:.2} (step {rho_step:.3}), v {:.4} (step {v_step:.4}), \
             95% widths {:.1}% / {:.1}% of prior; (c) max KS {ks_max:.4}",
            s.rho.mode,
            s.v.mode,
            100.0 * rho_w,
            100.0 * v_w
        ),
    );
}

#[test]
fn c10_invariant_suite() {
    let mut failures: Vec<String> = Vec::new();
    let mut rng = RngSeed(110).rng();

    // Unit-norm headings along noisy runs.
    for case in 0..20u64 {
        let params = AbmParams {
            v: rng.random_range(0.1..1.0),
            rho: rng.random_range(1.0..50.0),
            alpha: 0.5,
            noise_var: 0.025,
            steps: 30,
        };
        let mut state = AbmState::scatter(rng.random_range(1..=25), 10.0, RngSeed(case)).unwrap();
        let mut step_rng = RngSeed(500 + case).rng();
        for _ in 0..params.steps {
            state = abm_step(&state, &params, &mut step_rng);
            for d in state.directions() {
                let norm = d[0].hypot(d[1]);
                if (norm - 1.0).abs() > 1e-12 {
                    failures.push(format!("heading norm {norm} in case {case}"));
                }
            }
        }
    }

    // Noise-free translation equivariance.
    for case in 0..20u64 {
        let params = AbmParams { v: 0.5, rho: rng.random_range(2.0..40.0), alpha: 0.5, noise_var: 0.0, steps: 40 };
        let init = AbmState::scatter(15, 10.0, RngSeed(case)).unwrap();
        let offset = [rng.random_range(-1e3..1e3), rng.random_range(-1e3..1e3)];
        let a = simulate(&init, &params, RngSeed(case)).unwrap();
        let b = simulate(&init.translated(offset), &params, RngSeed(case)).unwrap();
        let dev =
            (&b.x.add_scalar(-offset[0]) - &a.x).abs().max().max((&b.y.add_scalar(-offset[1]) - &a.y).abs().max());
        if dev > 1e-9 {
            failures.push(format!("translation deviation {dev:e} in case {case}"));
        }
    }

    // Radial symmetry and periodicity of the glacier.
    let c = GlacierConstants::default();
    let r = GlacierRanges::default();
    for _ in 0..1000 {
        let (x, y) = (rng.random_range(r.xy.0..r.xy.1), rng.random_range(r.xy.0..r.xy.1));
        let t = rng.random_range(r.time.0..r.time.1);
        let (period, amp) = (rng.random_range(r.period.0..r.period.1), rng.random_range(r.amplitude.0..r.amplitude.1));
        let h = thickness(x, y, t, period, amp, &c);
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let (sn, cs) = theta.sin_cos();
        let rotated = thickness(cs * x - sn * y, sn * x + cs * y, t, period, amp, &c);
        let shifted = thickness(x, y, t + 3.0 * period, period, amp, &c);
        for (what, other) in [("rotation", rotated), ("period shift", shifted)] {
            if (other - h).abs() > 1e-9 * h.abs().max(1.0) {
                failures.push(format!("{what}: {h} vs {other} at ({x}, {y}, {t})"));
            }
        }
    }

    // Latin hypercube stratification.
    for case in 0..20u64 {
        let n = rng.random_range(1..=60);
        let bounds = Bounds::new(vec![(-1.0, 3.0), (0.0, 1e4), (5.0, 5.5)]).unwrap();
        let pts = latin_hypercube(n, &bounds, RngSeed(case)).unwrap();
        for (j, &(lo, hi)) in bounds.ranges().iter().enumerate() {
            let mut seen = vec![false; n];
            for i in 0..n {
                let k = (((pts[(i, j)] - lo) / (hi - lo) * n as f64).floor() as usize).min(n - 1);
                seen[k] = true;
            }
            if seen.iter().any(|s| !s) {
                failures.push(format!("stratum missed: n={n}, column {j}"));
            }
        }
    }

    // Fixed seeds reproduce every stochastic stage.
    let d1 = build_glacier_tensor(4, &r, &c, RngSeed(9), false).unwrap();
    let d2 = build_glacier_tensor(4, &r, &c, RngSeed(9), false).unwrap();
    if d1.tensor != d2.tensor {
        failures.push("glacier tensor not reproducible".into());
    }
    let [loc, time, par] = d1.mode_inputs();
    let specs = || {
        vec![
            ModeSpec::learned(SurrogateKind::Gp, loc.clone()),
            ModeSpec::learned(SurrogateKind::Nn, time.clone()),
            ModeSpec::learned(SurrogateKind::Rf, par.clone()),
        ]
    };
    let e1 = build_emulator(&d1.tensor, &[4, 4, 4], specs(), RngSeed(3)).unwrap();
    let e2 = build_emulator(&d1.tensor, &[4, 4, 4], specs(), RngSeed(3)).unwrap();
    if e1 != e2 {
        failures.push("emulator fit not reproducible".into());
    }
    let q: [&[f64]; 3] = [&[0.0, 1e5], &[500.0], &[2e3, 200.0]];
    if e1.bootstrap_predict(&q, 50, RngSeed(4)).unwrap() != e2.bootstrap_predict(&q, 50, RngSeed(4)).unwrap() {
        failures.push("bootstrap not reproducible".into());
    }
    let params = AbmParams { v: 0.5, rho: 35.0, alpha: 0.5, noise_var: 0.025, steps: 20 };
    let init = AbmState::scatter(10, 10.0, RngSeed(1)).unwrap();
    if simulate(&init, &params, RngSeed(2)).unwrap() != simulate(&init, &params, RngSeed(2)).unwrap() {
        failures.push("agent simulation not reproducible".into());
    }
    let abm = AbmExperimentConfig { agents: 5, steps: 11, v_points: 4, rho_points: 4, ..Default::default() };
    if pipelines::abm_experiment(&abm, RngSeed(6), None).unwrap()
        != pipelines::abm_experiment(&abm, RngSeed(6), None).unwrap()
    {
        failures.push("agent experiment not reproducible".into());
    }
    let obs = ObservationSet::new(vec![Observation { agent: 0, time: 0, x: 0.3, y: -0.2 }]).unwrap();
    let grids = Grids::spanning(&Priors::default(), 8);
    let g1 = gibbs(&obs, &Priors::default(), &grids, 50, RngSeed(8), &zero_model(1, 1)).unwrap();
    let g2 = gibbs(&obs, &Priors::default(), &grids, 50, RngSeed(8), &zero_model(1, 1)).unwrap();
    if g1 != g2 {
        failures.push("Gibbs chain not reproducible".into());
    }

    verdict(
        10,
        "invariant suite",
        failures.is_empty(),
        if failures.is_empty() {
            "0 failures".into()
        } else {
            format!("{} failures: {}", failures.len(), failures.join("; "))
        },
    );
}
