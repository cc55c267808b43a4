mod common;

use hybrid_core::bayes::{draw_tau, mcmc_sample, BayesData, BorrowVariant, McmcOptions};
use hybrid_core::datagen::gen_dataset;
use hybrid_core::fullmatch::{optimal_full_match, MatchProblem};
use hybrid_core::harness::{builtin_scenario, run_replication, run_study, McmcSettings, Method, ScenarioEntry, StudyConfig};
use hybrid_core::rng;
use hybrid_core::truth::true_marginal_loghr;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn full_match_equals_enumeration(ps in proptest::collection::vec(0.01..0.99f64, 2..=7), split in 1usize..6) {
        let nt = split.min(ps.len() - 1);
        let problem = MatchProblem::from_scores(&ps[..nt], &ps[nt..]).unwrap();
        let result = optimal_full_match(&problem).unwrap();
        prop_assert!(result.is_valid_structure(problem.n_treated(), problem.n_controls()));
        prop_assert_eq!(result.scaled_objective, common::enumerate_full_match(&problem));
    }
}

#[test]
fn integer_distances_enumerate_exactly() {
    // Ties everywhere: many optimal partitions, one optimal value.
    let problem = MatchProblem::new(vec![vec![1.0, 2.0, 1.0], vec![2.0, 1.0, 1.0], vec![1.0, 1.0, 2.0]]).unwrap();
    let result = optimal_full_match(&problem).unwrap();
    assert_eq!(result.scaled_objective, common::enumerate_full_match(&problem));
    assert_eq!(result.objective, 3.0);
}

#[test]
fn precision_draws_converge_tightly() {
    let mut rng = rng::stream(17, &[]);
    let (a, b, r) = (1.0, 0.001, 0.05);
    let n = 2_000_000;
    let draws: Vec<f64> = (0..n).map(|_| draw_tau(&mut rng, a, b, r)).collect();
    let mean = draws.iter().sum::<f64>() / n as f64;
    let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let (shape, rate) = (a + 0.5, b + r * r / 2.0);
    assert!((mean * rate / shape - 1.0).abs() < 0.005);
    assert!((var * rate * rate / shape - 1.0).abs() < 0.01);
}

fn quick(seed: u64) -> McmcOptions {
    McmcOptions {
        chains: 3,
        adapt_iters: 500,
        sample_iters: 3000,
        seed,
        ..Default::default()
    }
}

fn trial(scenario: usize, seed: u64) -> BayesData {
    let spec = builtin_scenario(scenario).unwrap();
    BayesData::from_trial(&gen_dataset(&spec, seed).unwrap()).unwrap()
}

#[test]
fn non_borrowing_posterior_ignores_historical_data() {
    let spec = builtin_scenario(3).unwrap();
    let data = gen_dataset(&spec, 5).unwrap();
    let mut altered = data.clone();
    for s in altered.subjects.iter_mut().filter(|s| s.source.is_historical()) {
        s.time *= 3.0;
        s.event = !s.event;
    }
    let a = mcmc_sample(&BayesData::from_trial(&data).unwrap(), BorrowVariant::Nb, &quick(1)).unwrap();
    let b = mcmc_sample(&BayesData::from_trial(&altered).unwrap(), BorrowVariant::Nb, &quick(1)).unwrap();
    assert_eq!(a.delta(), b.delta());
}

#[test]
fn tight_commensurate_prior_approaches_full_borrowing() {
    let data = trial(2, 8);
    let fb = mcmc_sample(&data, BorrowVariant::Fb, &quick(2)).unwrap().summary();
    let options = McmcOptions {
        fixed_tau: Some(1e8),
        ..quick(3)
    };
    let ips = mcmc_sample(&data, BorrowVariant::Ips, &options).unwrap().summary();
    assert!((fb.0 - ips.0).abs() < 0.05, "FB {fb:?} vs tight IPS {ips:?}");
    assert!((fb.1 / ips.1 - 1.0).abs() < 0.25);
}

#[test]
fn informative_prior_borrows_more_than_noninformative() {
    // Scenario 2 has exchangeable historical controls.
    let data = trial(2, 21);
    let var = |v| mcmc_sample(&data, v, &quick(4)).unwrap().summary().1;
    let (nb, nps, ips, fb) = (
        var(BorrowVariant::Nb),
        var(BorrowVariant::Nps),
        var(BorrowVariant::Ips),
        var(BorrowVariant::Fb),
    );
    assert!(ips < nps && nps < nb, "NB {nb} NPS {nps} IPS {ips}");
    assert!(fb < nb);
}

#[test]
fn fixed_shape_is_held() {
    let fx = common::fixture();
    let options = McmcOptions {
        fixed_shape: Some(1.5),
        ..quick(5)
    };
    let post = mcmc_sample(&fx.data(), BorrowVariant::Nps, &options).unwrap();
    assert!(post.pooled("shape").unwrap().iter().all(|&p| p == 1.5));
}

fn smoke_config() -> StudyConfig {
    StudyConfig {
        scenarios: vec![ScenarioEntry::Builtin(1)],
        mt_sizes: vec![16],
        reps: 20,
        seed: 3,
        methods: ["NB", "FB", "JIPTW.Cox"].iter().map(|m| m.parse().unwrap()).collect(),
        truth_reps: 100,
        mcmc: McmcSettings {
            chains: 2,
            adapt_iters: 200,
            sample_iters: 400,
            ..Default::default()
        },
        ..Default::default()
    }
}

#[test]
fn smoke_study_has_one_row_per_method() {
    let report = run_study(&smoke_config()).unwrap();
    assert_eq!(report.summaries.len(), 3);
    assert_eq!(report.replications.len(), 60);
    for s in &report.summaries {
        assert_eq!(s.n_used + s.n_failed, 20);
        assert!(s.bias.is_finite() && s.variance > 0.0);
    }
    let nb = report.summary("1", 16, "NB".parse().unwrap()).unwrap();
    assert!(nb.ess.is_nan(), "NB anchors the Bayesian ESS and has none itself");
    let fb = report.summary("1", 16, "FB".parse().unwrap()).unwrap();
    assert!(fb.ess > 16.0, "FB should borrow, got ESS {}", fb.ess);
}

#[test]
fn single_replication_reruns_identically() {
    let config = smoke_config();
    let report = run_study(&config).unwrap();
    let scenario = builtin_scenario(1).unwrap();
    let rerun = run_replication(&config, &scenario, 0, 16, 7);
    let logged: Vec<_> = report.replications.iter().filter(|r| r.rep == 7).cloned().collect();
    assert_eq!(format!("{rerun:?}"), format!("{logged:?}"));
}

#[test]
fn marginal_effect_is_attenuated_toward_null() {
    let spec = builtin_scenario(2).unwrap();
    let truth = true_marginal_loghr(&spec, 300, 9).unwrap();
    assert!(truth.theta0 < -3.0 * truth.mcse);
    assert!(truth.theta0 > 0.5f64.ln() + 3.0 * truth.mcse);
    let null = true_marginal_loghr(&builtin_scenario(1).unwrap(), 300, 9).unwrap();
    assert!(null.theta0.abs() < 4.0 * null.mcse);
}

#[test]
fn methods_parse_from_labels() {
    for m in Method::all() {
        assert_eq!(m.label().parse::<Method>().unwrap(), m);
    }
}
