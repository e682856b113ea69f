//! End-to-end acceptance checks. Each test prints one PASS/FAIL line to the
//! real stdout (bypassing the test harness capture) before asserting.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use modsel::environment::{Design, EnvironmentSpec, NestedFeatureSpec};
use modsel::harness::cli::simulate;
use modsel::harness::report::best_per_base;
use modsel::harness::{run_all, ExperimentConfig};
use modsel::learners::{
    default_clip, sample_ball, Exp4Config, Exp4State, LinearPolicy, PolicySource,
};
use modsel::linalg::SymMatrix;
use modsel::modcb::{concat_non_nested, preprocess_maps};
use modsel::residual::{estimate_residual_rows, plug_in_gap_rows, population_residual};
use modsel::util::{rng_from_seed, SimRng};

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "\ncriterion {id:>2} [{verdict}] {name}: {detail}");
    let _ = out.flush();
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
}

fn gaussian_vec(n: usize, rng: &mut SimRng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

fn gaussian_mat(r: usize, c: usize, rng: &mut SimRng) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Pairwise oracle: `Σ_{s≠t} y_s y_t x_sᵀ R Σ R x_t / (n(n−1))` with
/// `R = blockdiag(Σ₁⁻¹, 0) − Σ⁻¹`, using plain LU inverses.
fn naive_gap(xs: &DMatrix<f64>, ys: &[f64], sigma1: &DMatrix<f64>, sigma: &DMatrix<f64>) -> f64 {
    let n = xs.nrows();
    let d1 = sigma1.nrows();
    let mut r = -sigma.clone().try_inverse().unwrap();
    let inv1 = sigma1.clone().try_inverse().unwrap();
    let mut block = r.view_mut((0, 0), (d1, d1));
    block += &inv1;
    let m = &r * sigma * &r;
    let mut total = 0.0;
    for s in 0..n {
        let ms = &m * xs.row(s).transpose();
        for t in 0..n {
            if s != t {
                total += ys[s] * ys[t] * xs.row(t).dot(&ms.transpose());
            }
        }
    }
    total / (n * (n - 1)) as f64
}

#[test]
fn criterion_01_fast_estimator_matches_pairwise_sum() {
    let mut rng = rng_from_seed(101);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let d = rng.gen_range(2..=50);
        let d1 = rng.gen_range(1..d);
        let n = rng.gen_range(2..=200);
        let a = gaussian_mat(d, d + 10, &mut rng);
        let sigma = &a * a.transpose() / (d + 10) as f64 + DMatrix::identity(d, d) * 0.1;
        let sigma1 = sigma.view((0, 0), (d1, d1)).into_owned();
        let xs = gaussian_mat(n, d, &mut rng);
        let beta = gaussian_vec(d, &mut rng);
        let ys: Vec<f64> = (0..n)
            .map(|s| xs.row(s).dot(&beta.transpose()) + 0.3 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let fast = estimate_residual_rows(
            &xs,
            &ys,
            &SymMatrix::new(sigma1.clone()).unwrap(),
            &SymMatrix::new(sigma.clone()).unwrap(),
        )
        .unwrap();
        let slow = naive_gap(&xs, &ys, &sigma1, &sigma);
        worst = worst.max((fast - slow).abs() / slow.abs());
    }
    report(
        1,
        "fast estimator equals pairwise U-statistic",
        worst <= 1e-9,
        &format!("max relative error {worst:.2e} over 100 instances (tol 1e-9)"),
    );
}

#[test]
fn criterion_02_estimator_is_unbiased_with_exact_moments() {
    let (d, d1, n) = (50, 5, 100);
    let mut rng = rng_from_seed(202);
    let sigma = SymMatrix::identity(d);
    let sigma1 = SymMatrix::identity(d1);
    // Head coefficients are irrelevant to the gap; the tail has unit norm.
    let mut beta = gaussian_vec(d, &mut rng);
    let tail_norm = beta.rows(d1, d - d1).norm();
    beta.rows_mut(d1, d - d1).scale_mut(1.0 / tail_norm);
    let truth = population_residual(&sigma, &sigma1, &beta).unwrap();
    let runs: Vec<f64> = (0..200)
        .map(|_| {
            let xs = gaussian_mat(n, d, &mut rng);
            let ys: Vec<f64> = (0..n)
                .map(|s| {
                    xs.row(s).dot(&beta.transpose()) + 0.5 * rng.sample::<f64, _>(StandardNormal)
                })
                .collect();
            estimate_residual_rows(&xs, &ys, &sigma1, &sigma).unwrap()
        })
        .collect();
    let (m, se) = mean_se(&runs);
    let pass = (truth - 1.0).abs() < 1e-12 && (m - truth).abs() <= 3.0 * se;
    report(
        2,
        "estimator unbiased with exact second moments",
        pass,
        &format!(
            "E = {truth:.6}, mean estimate {m:.4} ± {se:.4} over 200 runs (within 3 SE required)"
        ),
    );
}

#[test]
fn criterion_03_error_rate_and_plug_in_comparison() {
    let (d, d1, m_unlabeled) = (400, 200, 50_000);
    let noise = 1.0;
    let mut rng = rng_from_seed(303);
    // A small gap (0.1) with unit noise: the regime where the pairwise term,
    // not the linear one, dominates the error.
    let mut beta = gaussian_vec(d, &mut rng);
    let tail_norm = beta.rows(d1, d - d1).norm();
    beta.rows_mut(d1, d - d1)
        .scale_mut(0.1f64.sqrt() / tail_norm);
    let head_norm = beta.rows(0, d1).norm();
    beta.rows_mut(0, d1).scale_mut(0.5 / head_norm);
    let truth =
        population_residual(&SymMatrix::identity(d), &SymMatrix::identity(d1), &beta).unwrap();

    let (mut err_1k, mut err_4k, mut err_plug) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..50 {
        // Unlabeled contexts as columns.
        let unlabeled = gaussian_mat(d, m_unlabeled, &mut rng);
        let gram = &unlabeled * unlabeled.transpose() / m_unlabeled as f64;
        let sigma_hat = SymMatrix::new((&gram + gram.transpose()) * 0.5).unwrap();
        let sigma_hat_1 = sigma_hat.leading_block(d1).unwrap();
        let xs = gaussian_mat(4000, d, &mut rng);
        let ys: Vec<f64> = (0..4000)
            .map(|s| {
                xs.row(s).dot(&beta.transpose()) + noise * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        let head = xs.rows(0, 1000).into_owned();
        let e1 = estimate_residual_rows(&head, &ys[..1000], &sigma_hat_1, &sigma_hat).unwrap();
        let e4 = estimate_residual_rows(&xs, &ys, &sigma_hat_1, &sigma_hat).unwrap();
        let p1 = plug_in_gap_rows(&head, &ys[..1000], d1, &sigma_hat).unwrap();
        err_1k.push((e1 - truth).abs());
        err_4k.push((e4 - truth).abs());
        err_plug.push((p1 - truth).abs());
    }
    let (m1, m4, mp) = (median(err_1k), median(err_4k), median(err_plug));
    let rate_ok = m4 <= (0.5 + 0.2) * m1;
    let plug_ok = mp >= 2.0 * m1;
    report(
        3,
        "sublinear error rate and plug-in comparison",
        rate_ok && plug_ok,
        &format!(
            "median error n=1000 {m1:.4}, n=4000 {m4:.4} (ratio {:.3}, need <= 0.7); plug-in n=1000 {mp:.4} (factor {:.2}, need >= 2)",
            m4 / m1,
            mp / m1
        ),
    );
}

fn random_environment(rng: &mut SimRng) -> EnvironmentSpec {
    let num_classes = rng.gen_range(2..=4);
    let mut dims = Vec::new();
    let mut d = 0;
    for _ in 0..num_classes {
        d += rng.gen_range(1..=4);
        dims.push(d);
    }
    let num_actions = rng.gen_range(2..=4);
    let design = if rng.gen_bool(0.5) {
        Design::IsotropicGaussian
    } else {
        Design::CorrelatedGaussian {
            condition_number: rng.gen_range(1.0..10.0),
        }
    };
    let m_star = rng.gen_range(1..=num_classes);
    let d_star = dims[m_star - 1];
    let raw = gaussian_vec(d_star, rng);
    let beta = raw.scale(rng.gen_range(0.3..0.95) / raw.norm());
    let features = NestedFeatureSpec::new(dims, num_actions, design).unwrap();
    EnvironmentSpec::gaussian(features, m_star, beta.iter().copied().collect(), 0.3).unwrap()
}

#[test]
fn criterion_04_policy_gap_bounded_by_square_loss_gap() {
    let mut rng = rng_from_seed(404);
    let mut violations = Vec::new();
    let mut nonzero = Vec::new();
    let mut worst_slack = f64::INFINITY;
    let mut checked = 0;
    while checked < 20 {
        let env = random_environment(&mut rng);
        let m = env.num_classes();
        if env.m_star == 1 && m == 1 {
            continue;
        }
        // A pair i < j with j ≥ m*.
        let j = rng.gen_range(env.m_star.max(2)..=m);
        let i = rng.gen_range(1..j);
        let gap = env.population_gap(i, j).unwrap();
        let (mean, se) = env.policy_gap_monte_carlo(i, j, 100_000, &mut rng).unwrap();
        let bound = (4.0 * env.num_actions() as f64 * gap).sqrt() + 3.0 * se;
        worst_slack = worst_slack.min(bound - mean);
        if mean > bound {
            violations.push(format!("({i},{j}): {mean:.4} > {bound:.4}"));
        }
        for a in env.m_star..=m {
            for b in a + 1..=m {
                let g = env.population_gap(a, b).unwrap();
                if g != 0.0 {
                    nonzero.push(format!("E({a},{b}) = {g:e}"));
                }
            }
        }
        checked += 1;
    }
    report(
        4,
        "policy gap <= sqrt(4K E) and exact zero gaps above m*",
        violations.is_empty() && nonzero.is_empty(),
        &format!(
            "20 instances, smallest slack {worst_slack:.4}, violations {violations:?}, nonzero gaps {nonzero:?}"
        ),
    );
}

#[test]
fn criterion_05_population_beta_padding_and_regression() {
    let features = NestedFeatureSpec::new(
        vec![2, 4, 8],
        3,
        Design::CorrelatedGaussian {
            condition_number: 4.0,
        },
    )
    .unwrap();
    let env = EnvironmentSpec::gaussian(features, 2, vec![0.5, -0.3, 0.4, 0.2], 0.5).unwrap();
    let mut pad_err: f64 = 0.0;
    for m in env.m_star..=env.num_classes() {
        let d = env.features.dims[m - 1];
        let mut padded = DVector::zeros(d);
        padded.rows_mut(0, 4).copy_from(&env.beta_star);
        pad_err = pad_err.max((env.population_beta(m).unwrap() - padded).amax());
    }

    let mut rng = rng_from_seed(505);
    let mut reg_err: f64 = 0.0;
    let samples: Vec<_> = (0..100_000).map(|_| env.sample_round(&mut rng)).collect();
    for m in 1..=env.num_classes() {
        let d = env.features.dims[m - 1];
        let mut gram = DMatrix::<f64>::zeros(d, d);
        let mut cross = DVector::<f64>::zeros(d);
        for s in &samples {
            for (phi, l) in s.features.iter().zip(&s.loss) {
                let x = phi.rows(0, d);
                gram.ger(1.0, &x, &x, 1.0);
                cross.axpy(*l, &x, 1.0);
            }
        }
        let fit = gram.cholesky().unwrap().solve(&cross);
        reg_err = reg_err.max((fit - env.population_beta(m).unwrap()).norm());
    }
    report(
        5,
        "population beta equals padded beta*, regression agrees",
        pad_err <= 1e-9 && reg_err <= 0.02,
        &format!("padding error {pad_err:e} (tol 1e-9), worst regression l2 error {reg_err:.4} (tol 0.02)"),
    );
}

#[test]
fn criterion_06_zero_gap_soundness() {
    let cfg = ExperimentConfig::from_json(
        r#"{
        "environment": {"num_classes": 3, "dims": [10, 50, 200], "num_actions": 2,
                        "design": {"kind": "IsotropicGaussian"}, "m_star": 1,
                        "beta_star": [0.3, -0.3, 0.3, -0.3, 0.3, -0.3, 0.3, -0.3, 0.3, -0.3],
                        "noise_sigma": 0.5},
        "algorithms": [{"kind": "ModCB"}],
        "horizon": 10000, "replicates": 20, "base_seed": 606
    }"#,
    )
    .unwrap();
    let runs = run_all(&cfg).unwrap();
    let advanced = runs.iter().filter(|r| !r.advances.is_empty()).count();
    report(
        6,
        "no spurious advances when the smallest class is realizable",
        advanced <= 2,
        &format!("{advanced} of 20 replicates advanced (at most 2 allowed)"),
    );
}

#[test]
fn criterion_07_advance_completeness() {
    let cfg = ExperimentConfig::from_json(
        r#"{
        "environment": {"num_classes": 3, "dims": [2, 4, 8], "num_actions": 2,
                        "design": {"kind": "IsotropicGaussian"}, "m_star": 2,
                        "beta_star": [0.3, 0.0, 0.6, 0.6], "noise_sigma": 0.5},
        "algorithms": [{"kind": "ModCB", "settings": {"c1": 0.1}}],
        "horizon": 20000, "replicates": 20, "base_seed": 707
    }"#,
    )
    .unwrap();
    let env = &cfg.environment;
    let gap = env.population_gap(1, 2).unwrap();
    let params = cfg.algorithms[0].clone();
    let settings = match params {
        modsel::harness::AlgorithmSpec::ModCB { settings, .. } => settings,
        _ => unreachable!(),
    };
    let params = settings.params(env, env.num_classes(), cfg.horizon);
    let runs = run_all(&cfg).unwrap();
    let d_star = env.d_star();
    let reached = runs
        .iter()
        .filter(|r| {
            r.records
                .last()
                .is_some_and(|x| env.features.dims[x.m_hat - 1] >= d_star)
        })
        .count();
    let early: Vec<_> = runs
        .iter()
        .flat_map(|r| r.advances.iter())
        .filter(|a| a.t < params.t_min(env.features.dims[a.to - 1]))
        .collect();
    report(
        7,
        "advances reach the realizable class and respect T_min",
        gap >= 0.5 && reached >= 18 && early.is_empty(),
        &format!(
            "E(1,2) = {gap:.3}; {reached} of 20 replicates reached d >= {d_star} (need 18); advances before T_min: {}",
            early.len()
        ),
    );
}

#[test]
fn criterion_08_modcb_beats_ambient_linucb_at_desk_scale() {
    let base = ExperimentConfig::from_json(
        r#"{
        "environment": {"num_classes": 7, "dims": [2, 5, 10, 20, 50, 100, 200], "num_actions": 2,
                        "design": {"kind": "IsotropicGaussian"}, "m_star": 3,
                        "beta_star": [0.3, 0.3, 0.3, 0.3, 0.3, 0.3, 0.3, 0.3, 0.3, 0.3],
                        "noise_sigma": 0.5},
        "algorithms": [{"kind": "ModCB"}, {"kind": "LinUCB"}],
        "horizon": 20000, "replicates": 10, "base_seed": 808
    }"#,
    )
    .unwrap();
    let cfg = base
        .sweep("ModCB.c1", &[0.03, 0.1, 0.3])
        .and_then(|c| c.sweep("LinUCB.premultiplier", &[0.1, 0.3, 1.0]))
        .unwrap();
    let out = tempfile::tempdir().unwrap();
    let rows = simulate(&cfg, Some(out.path())).unwrap();
    let best = best_per_base(&rows);
    let modcb = best
        .iter()
        .find(|r| r.algorithm.starts_with("ModCB"))
        .unwrap();
    let linucb = best
        .iter()
        .find(|r| r.algorithm.starts_with("LinUCB"))
        .unwrap();
    let combined = (modcb.se_pseudo_regret.powi(2) + linucb.se_pseudo_regret.powi(2)).sqrt();
    let margin = linucb.mean_pseudo_regret - modcb.mean_pseudo_regret;
    report(
        8,
        "ModCB beats LinUCB on the ambient dimension",
        margin > 2.0 * combined,
        &format!(
            "best {} {:.1} ± {:.1}, best {} {:.1} ± {:.1}; margin {margin:.1} vs 2 SE {:.1}",
            modcb.algorithm,
            modcb.mean_pseudo_regret,
            modcb.se_pseudo_regret,
            linucb.algorithm,
            linucb.mean_pseudo_regret,
            linucb.se_pseudo_regret,
            2.0 * combined
        ),
    );
}

/// Cumulative pseudo-regret at `T` and `2T` of Exp4-IX on a fixed 50-policy set.
fn exp4_regret_at(seed: u64, big_t: usize) -> (f64, f64) {
    let features = NestedFeatureSpec::new(vec![2], 2, Design::IsotropicGaussian).unwrap();
    let env = EnvironmentSpec::gaussian(features, 1, vec![1.0, 0.0], 0.0).unwrap();
    let mut pool_rng = rng_from_seed(9_000);
    let mut pool = vec![LinearPolicy::new(env.beta_star.clone())];
    while pool.len() < 50 {
        pool.push(LinearPolicy::new(sample_ball(2, 1.0, &mut pool_rng)));
    }
    let horizon = 2 * big_t;
    let delta = 0.1;
    let mut learner = Exp4State::new(Exp4Config {
        dim: 2,
        complexity: 2.0,
        num_actions: 2,
        horizon,
        delta,
        clip: default_clip(env.tau, horizon, 2, delta),
        source: PolicySource::Fixed(pool),
    });
    let mut env_rng = rng_from_seed(seed);
    let mut rng = rng_from_seed(seed ^ 0x5eed);
    let (mut regret, mut at_t) = (0.0, 0.0);
    for t in 1..=horizon {
        let s = env.sample_round(&mut env_rng);
        let (a, _) = learner.act(&s.features, &mut rng);
        let means = env.expected_losses(&s);
        regret += means[a] - means[env.optimal_action(&s)];
        learner.update(&s.features, a, s.loss[a]);
        if t == big_t {
            at_t = regret;
        }
    }
    (at_t, regret)
}

#[test]
fn criterion_09_exp4ix_regret_scaling() {
    let big_t = 5000;
    let (mut at_t, mut at_2t) = (0.0, 0.0);
    for seed in 0..10 {
        let (a, b) = exp4_regret_at(seed, big_t);
        at_t += a / 10.0;
        at_2t += b / 10.0;
    }
    let ratio = at_2t / at_t;
    report(
        9,
        "Exp4-IX regret ratio Reg(2T)/Reg(T)",
        ratio <= 1.7,
        &format!("mean Reg(T) {at_t:.1}, Reg(2T) {at_2t:.1}, ratio {ratio:.3} (need <= 1.7), T = {big_t}, 10 seeds"),
    );
}

#[test]
fn criterion_10_rounds_csv_is_deterministic() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/smoke.json");
    let cfg = ExperimentConfig::load(path).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    simulate(&cfg, Some(a.path())).unwrap();
    simulate(&cfg, Some(b.path())).unwrap();
    let first = std::fs::read(a.path().join("rounds.csv")).unwrap();
    let second = std::fs::read(b.path().join("rounds.csv")).unwrap();
    report(
        10,
        "identical config and seed give identical rounds.csv",
        !first.is_empty() && first == second,
        &format!("{} bytes, identical: {}", first.len(), first == second),
    );
}

#[test]
fn criterion_11_feature_map_transforms() {
    let (_, thinned) = preprocess_maps(&[2, 5, 9, 20], 1000);
    let concat = concat_non_nested(&[2, 3]);
    report(
        11,
        "feature map thinning and concatenation",
        thinned == vec![2, 5, 20] && concat == vec![2, 5],
        &format!("thinned {thinned:?} (want [2, 5, 20]), concatenated {concat:?} (want [2, 5])"),
    );
}
