mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rankscope::completion::*;
use rankscope::deterministic::{Claim, DEFAULT_BUDGET};
use rankscope::patterns::{bernoulli_pattern, ObservedData, SamplingPattern};
use rankscope::{Model, RankSpec};

use common::{contract, max_rel_error};

#[test]
fn generators_match_their_contractions() {
    let cases = vec![
        random_low_rank_matrix(7, 9, 3, 1).unwrap(),
        random_cp_tensor(&[3, 4, 5], 2, 2).unwrap(),
        random_tucker_tensor(&[3, 4, 3], &[2, 3, 2], 1, 3).unwrap(),
        random_tt_tensor(&[2, 3, 4, 2], &[2, 3, 2], 4).unwrap(),
    ];
    for g in cases {
        let direct = contract(&g);
        assert!(max_rel_error(&g.values, &direct) < 1e-10, "{:?}", g.model);
    }
}

#[test]
fn rank_one_matrix_has_singular_minors() {
    let g = random_low_rank_matrix(6, 7, 1, 9).unwrap();
    let m = g.as_matrix().unwrap();
    for (i, k) in [(0, 1), (2, 5), (3, 4)] {
        for (j, l) in [(0, 6), (1, 2), (4, 5)] {
            let det = m[(i, j)] * m[(k, l)] - m[(i, l)] * m[(k, j)];
            assert!(det.abs() < 1e-12);
        }
    }
}

#[test]
fn low_rank_draws_have_their_nominal_rank() {
    for seed in 0..100u64 {
        let r = 1 + (seed % 8) as usize;
        let g = random_low_rank_matrix(50, 80, r, seed).unwrap();
        assert_eq!(numerical_rank(&g.as_matrix().unwrap(), 1e-6), r, "seed {seed}");
    }
    assert_eq!(random_low_rank_matrix(40, 60, 5, 0).unwrap().as_matrix().map(|m| numerical_rank(&m, 1e-6)).unwrap(), 5);
}

#[test]
fn generators_are_deterministic_and_validate_ranks() {
    assert_eq!(random_cp_tensor(&[3, 3, 3], 2, 5).unwrap(), random_cp_tensor(&[3, 3, 3], 2, 5).unwrap());
    assert!(random_low_rank_matrix(4, 5, 0, 0).is_err());
    assert!(random_low_rank_matrix(4, 5, 5, 0).is_err());
    assert!(random_tt_tensor(&[2, 2, 2], &[3, 1], 0).is_err());
    assert!(random_tucker_tensor(&[2, 2, 2], &[3, 1, 1], 1, 0).is_err());
}

#[test]
fn tensor_ranks_show_up_in_unfoldings() {
    let cp = random_cp_tensor(&[3, 4, 5], 1, 7).unwrap();
    for mode in 1..=3 {
        assert_eq!(numerical_rank(&matricization(&cp.values, &cp.dims, mode), 1e-9), 1);
    }
    let tt = random_tt_tensor(&[2, 2, 2], &[2, 1], 7).unwrap();
    assert_eq!(completion_rank(&tt.values, &tt.dims, Model::Tt, None, 1e-9).unwrap(), RankSpec::Tt(vec![2, 1]));
    let tk = random_tucker_tensor(&[3, 3, 3], &[2, 2, 2], 1, 7).unwrap();
    let ranks: Vec<usize> = (1..=3).map(|m| numerical_rank(&matricization(&tk.values, &tk.dims, m), 1e-9)).collect();
    assert_eq!(ranks, vec![2, 2, 2]);
}

#[test]
fn numerical_rank_cutoff_rule() {
    assert_eq!(numerical_rank(&DMatrix::zeros(4, 3), 1e-6), 0);
    assert_eq!(numerical_rank(&DMatrix::from_diagonal(&nalgebra::dvector![1.0, 1e-12]), 1e-6), 1);
}

#[test]
fn fully_observed_matrix_is_reproduced() {
    let g = random_low_rank_matrix(20, 30, 2, 3).unwrap();
    let obs = g.observe(&SamplingPattern::full(&[20, 30]).unwrap()).unwrap();
    let res = svt_complete(&obs, &SolverParams::default()).unwrap();
    assert!(res.converged);
    assert!(res.relative_residual <= 1e-4);
    assert_eq!(res.numerical_rank, 2);
}

#[test]
fn rank_one_recovery_at_moderate_sampling() {
    for seed in 0..10u64 {
        let g = random_low_rank_matrix(50, 50, 1, seed).unwrap();
        let obs = g.observe(&bernoulli_pattern(&[50, 50], 0.7, seed + 100).unwrap()).unwrap();
        let res = svt_complete(&obs, &SolverParams::default()).unwrap();
        assert_eq!(res.numerical_rank, 1, "seed {seed}");
        let err = res.completed.iter().zip(&g.values).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-3, "seed {seed}: {err}");
    }
}

#[test]
fn zero_matrix_completes_to_zero() {
    let p = bernoulli_pattern(&[10, 12], 0.5, 1).unwrap();
    let obs = ObservedData::from_dense(p, &vec![0.0; 120]).unwrap();
    let res = svt_complete(&obs, &SolverParams::default()).unwrap();
    assert_eq!(res.numerical_rank, 0);
    assert!(res.completed.iter().all(|&v| v == 0.0));
}

#[test]
fn reported_residual_matches_output() {
    let g = random_low_rank_matrix(30, 40, 3, 8).unwrap();
    let p = bernoulli_pattern(&[30, 40], 0.6, 8).unwrap();
    let obs = g.observe(&p).unwrap();
    let params = SolverParams { max_iterations: 40, ..SolverParams::default() };
    let res = svt_complete(&obs, &params).unwrap();
    let maps = p.index_maps();
    let residual = p
        .coords()
        .map(|c| {
            let l = maps.linear(&c);
            (res.completed[l] - g.values[l]).abs()
        })
        .fold(0.0f64, f64::max);
    assert!((residual - res.residual).abs() <= 1e-12 * residual.max(1.0));
    assert!(res.iterations <= 40);
}

#[test]
fn full_observation_pipeline_certifies_rank_two() {
    let g = random_low_rank_matrix(5, 5, 2, 4).unwrap();
    let obs = g.observe(&SamplingPattern::full(&[5, 5]).unwrap()).unwrap();
    let rep = estimate_rank_pipeline(&obs, CertifyMode::Deterministic, &SolverParams::default(), DEFAULT_BUDGET).unwrap();
    assert_eq!(rep.completion.as_ref().unwrap().numerical_rank, 2);
    assert_eq!(rep.certificate.claim, Claim::UpperBoundWithProbOne);
}

#[test]
fn probabilistic_mode_below_threshold_reports_deficit() {
    let rep = probabilistic_certificate(&[300, 15000], &RankSpec::Single(10), 0.3, 0.1).unwrap();
    assert_eq!(rep.certificate.claim, Claim::NoClaim);
    let t = rep.threshold.unwrap();
    assert!((rep.deficit.unwrap() - (t.p_threshold - 0.3)).abs() < 1e-15);
    let rep = probabilistic_certificate(&[300, 15000], &RankSpec::Single(10), 0.7, 0.1).unwrap();
    assert_eq!(rep.certificate.claim, Claim::UpperBoundHighProb);
}

#[test]
fn full_sampling_gives_zero_gaps() {
    let s = gap_experiment(20, 40, 3, 1.0, 5, 11, &SolverParams::default()).unwrap();
    assert_eq!(s.runs.len(), 5);
    assert!(s.runs.iter().all(|r| r.gap == 0 && r.converged));
    assert_eq!((s.d_min, s.d_max), (0, 0));
}

#[test]
fn gap_runs_are_reproducible() {
    let a = gap_experiment(30, 60, 2, 0.8, 3, 5, &SolverParams::default()).unwrap();
    let b = gap_experiment(30, 60, 2, 0.8, 3, 5, &SolverParams::default()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.runs[1].seed, run_seed(5, 2, 1));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn numerical_rank_ignores_positive_scaling(seed in 0u64..1000, r in 1usize..5, scale in 1e-6f64..1e6) {
        let m = random_low_rank_matrix(12, 15, r, seed).unwrap().as_matrix().unwrap();
        prop_assert_eq!(numerical_rank(&(m.clone() * scale), 1e-6), numerical_rank(&m, 1e-6));
    }

    #[test]
    fn contraction_identity_for_random_cp(seed in 0u64..1000, r in 1usize..4) {
        let g = random_cp_tensor(&[3, 3, 4], r, seed).unwrap();
        prop_assert!(max_rel_error(&g.values, &contract(&g)) < 1e-10);
    }
}
