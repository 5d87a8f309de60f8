use lqetc::analysis::{closed_form_pst_cost, SERIES_TOLERANCE};
use lqetc::linalg::trace_of_product;
use lqetc::network::{full_network_success_probability, NetworkConfig};
use lqetc::presets::{reference_experiment, reference_plant};
use lqetc::sim::{
    performance_gain, run_episode, run_monte_carlo, sweep_grid, Experiment, ExperimentConfig,
    LoopConfig, RecordLevel, Wiring,
};
use lqetc::{Error, GainSet, Policy};
use nalgebra::DVector;

fn config(policy: Policy, p: f64, q: f64, runs: usize, horizon: usize) -> ExperimentConfig {
    let mut cfg = reference_experiment(11);
    cfg.loops[0].policy = policy;
    cfg.loops[0].p = p;
    cfg.network = NetworkConfig::Abstracted { q };
    cfg.runs = runs;
    cfg.horizon = horizon;
    cfg
}

#[test]
fn always_connected_loop_reaches_lqg_cost() {
    let cfg = config(Policy::Pst, 1.0, 1.0, 4, 100_000);
    let res = run_monte_carlo(&cfg).unwrap();
    let gains = GainSet::solve(&reference_plant()).unwrap();
    let expected = gains.cost_floor(&reference_plant()) + trace_of_product(&gains.theta, &gains.y);
    let j = res.loops[0].j_mean;
    assert!((j - expected).abs() / expected < 0.02, "{j} vs {expected}");
    assert_eq!(res.loops[0].trigger_freq, 1.0);
    assert_eq!(res.loops[0].success_freq, 1.0);
}

#[test]
fn identical_seeds_give_identical_results() {
    let cfg = config(Policy::Cett, 0.4, 0.5, 3, 5_000);
    assert_eq!(run_monte_carlo(&cfg).unwrap(), run_monte_carlo(&cfg).unwrap());
}

#[test]
fn serial_and_parallel_execution_agree() {
    let mut cfg = config(Policy::Cett, 0.6, 0.5, 5, 5_000);
    cfg.record_level = RecordLevel::Moments;
    let parallel = run_monte_carlo(&cfg).unwrap();
    cfg.parallel = false;
    assert_eq!(parallel, run_monte_carlo(&cfg).unwrap());
}

#[test]
fn single_run_aggregate_equals_episode() {
    let cfg = config(Policy::Pst, 0.3, 1.0, 1, 10_000);
    let res = run_monte_carlo(&cfg).unwrap();
    let ep = run_episode(&cfg, 0).unwrap();
    assert_eq!(res.loops[0].j_mean, ep.loops[0].cost);
    assert!(res.loops[0].j_stderr.is_nan());
}

#[test]
fn standard_error_shrinks_with_more_runs() {
    let se = |runs| run_monte_carlo(&config(Policy::Pst, 0.5, 0.5, runs, 10_000)).unwrap().loops[0].j_stderr;
    let ratio = se(10) / se(40);
    assert!((1.2..3.4).contains(&ratio), "ratio {ratio}, expected about 2");
}

#[test]
fn decomposed_and_direct_costs_agree() {
    let res = run_monte_carlo(&config(Policy::Cett, 0.5, 0.5, 10, 50_000)).unwrap();
    let s = &res.loops[0];
    let se = (s.j_stderr.powi(2) + s.j_direct_stderr.powi(2)).sqrt();
    assert!((s.j_mean - s.j_direct_mean).abs() < 3.0 * se, "{} vs {} (se {se})", s.j_mean, s.j_direct_mean);
}

#[test]
fn decomposed_cost_matches_closed_form_at_half_availability() {
    let res = run_monte_carlo(&config(Policy::Pst, 0.5, 0.5, 10, 100_000)).unwrap();
    let params = reference_plant();
    let gains = GainSet::solve(&params).unwrap();
    let cf = closed_form_pst_cost(&params, &gains, 0.5, 0.5, SERIES_TOLERANCE).unwrap();
    assert!((res.loops[0].j_mean - cf).abs() / cf < 0.02);
}

#[test]
fn self_comparison_gain_is_exactly_zero() {
    let res = run_monte_carlo(&config(Policy::Cett, 0.5, 1.0, 3, 2_000)).unwrap();
    let g = performance_gain(&res.loops[0], &res.loops[0]).unwrap();
    assert_eq!(g.gain, 0.0);
    assert_eq!(g.stderr, 0.0);
}

#[test]
fn literal_wiring_matches_error_coordinates() {
    for policy in [Policy::Pst, Policy::Cett] {
        let mut cfg = config(policy, 0.5, 0.5, 2, 3_000);
        cfg.record_level = RecordLevel::FullTrace;
        let exp = Experiment::prepare(&cfg).unwrap();
        let a = exp.run_monte_carlo().unwrap();
        let b = exp.clone().with_wiring(Wiring::Direct).run_monte_carlo().unwrap();
        let (sa, sb) = (&a.loops[0], &b.loops[0]);
        for (ta, tb) in sa.traces.iter().zip(&sb.traces) {
            assert_eq!(ta.delta, tb.delta);
            assert_eq!(ta.sigma, tb.sigma);
            for (xa, xb) in ta.x.iter().zip(&tb.x) {
                assert!((xa - xb).norm() <= 1e-9 * (1.0 + xa.norm()));
            }
        }
        assert!((sa.j_mean - sb.j_mean).abs() < 1e-9 * sa.j_mean);
        assert!((sa.j_direct_mean - sb.j_direct_mean).abs() < 1e-9 * sa.j_direct_mean);
    }
}

#[test]
fn doubled_gain_leaves_channel_sequences_unchanged() {
    let mut cfg = config(Policy::Cett, 0.3, 0.5, 2, 20_000);
    cfg.record_level = RecordLevel::FullTrace;
    let exp = Experiment::prepare(&cfg).unwrap();
    let mut doubled = exp.clone();
    doubled.override_gain(0, &exp.loops[0].gains.k * 2.0).unwrap();
    let a = exp.run_monte_carlo().unwrap();
    let b = doubled.run_monte_carlo().unwrap();
    for (ta, tb) in a.loops[0].traces.iter().zip(&b.loops[0].traces) {
        assert_eq!(ta.delta, tb.delta);
        assert_eq!(ta.sigma, tb.sigma);
        assert_ne!(ta.u, tb.u);
    }
    assert_ne!(a.loops[0].j_direct_mean, b.loops[0].j_direct_mean);
    assert!(doubled.override_gain(0, nalgebra::DMatrix::zeros(2, 2)).is_err());
}

#[test]
fn sweep_shape_and_unit_grid() {
    let cfg = config(Policy::Pst, 0.5, 1.0, 2, 1_000);
    let rows = sweep_grid(&cfg, &[Policy::Pst, Policy::Cett], &[0.2, 0.5, 0.8], &[0.5, 1.0]).unwrap();
    assert_eq!(rows.len(), 12);
    assert_eq!((rows[0].policy, rows[0].p, rows[0].q), (Policy::Pst, 0.2, 0.5));
    assert_eq!((rows[1].policy, rows[1].p, rows[1].q), (Policy::Cett, 0.2, 0.5));
    assert_eq!((rows[11].p, rows[11].q), (0.8, 1.0));

    let single = sweep_grid(&cfg, &[Policy::Cett], &[0.4], &[0.5]).unwrap();
    let mut direct = cfg.clone();
    direct.loops[0].policy = Policy::Cett;
    direct.loops[0].p = 0.4;
    direct.network = NetworkConfig::Abstracted { q: 0.5 };
    assert_eq!(single.len(), 1);
    assert_eq!(single[0].summary, run_monte_carlo(&direct).unwrap().loops.remove(0));
}

#[test]
fn trigger_frequency_is_p_in_every_history_class() {
    let mut cfg = config(Policy::Cett, 0.5, 0.5, 4, 100_000);
    cfg.record_level = RecordLevel::Moments;
    let res = run_monte_carlo(&cfg).unwrap();
    let stats = res.loops[0].moments.as_ref().unwrap();
    let mut checked = 0;
    for (d, pair) in stats.bins.iter().enumerate().skip(1) {
        for (collided, bin) in pair.iter().enumerate() {
            if bin.slots < 1_000 {
                continue;
            }
            let se = (0.25 / bin.slots as f64).sqrt();
            assert!(
                (bin.frequency() - 0.5).abs() < 3.0 * se,
                "gap {d}, collided {collided}: {} over {} slots",
                bin.frequency(),
                bin.slots
            );
            checked += 1;
        }
    }
    assert!(checked >= 8);
}

#[test]
fn success_frequency_is_qp() {
    let res = run_monte_carlo(&config(Policy::Cett, 0.7, 0.5, 4, 50_000)).unwrap();
    let s = &res.loops[0];
    let n = s.slots as f64;
    assert!((s.success_freq - 0.35).abs() < 3.0 * (0.35 * 0.65 / n).sqrt());
    assert!((s.collision_freq - (s.trigger_freq - s.success_freq)).abs() < 1e-12);
}

#[test]
fn reference_loop_stays_bounded() {
    for (p, q) in [(0.1, 0.5), (0.9, 1.0)] {
        let res = run_monte_carlo(&config(Policy::Cett, p, q, 2, 100_000)).unwrap();
        assert!(res.loops[0].diverged_runs.is_empty());
        assert!(res.loops[0].max_state_norms.iter().all(|&n| n < 1e3));
    }
}

#[test]
fn divergence_is_flagged_and_costs_infinite() {
    let mut cfg = config(Policy::Pst, 0.0, 1.0, 2, 10_000);
    cfg.loops[0].params = lqetc::PlantParams::scalar(1.2, 1.0, 1.5, 1.0, 1.5, 1.0, 0.1);
    cfg.divergence_threshold = 50.0;
    let exp = Experiment::prepare(&cfg).unwrap();
    assert_eq!(exp.mss_warnings().len(), 1);
    let res = exp.run_monte_carlo().unwrap();
    let s = &res.loops[0];
    assert_eq!(s.diverged_runs, vec![0, 1]);
    assert!(s.j_mean.is_infinite());
    assert!((s.slots as usize) < 2 * cfg.horizon);
}

#[test]
fn pure_stett_refuses_to_continue_after_a_collision() {
    let err = run_monte_carlo(&config(Policy::Stett, 0.5, 0.5, 1, 1_000)).unwrap_err();
    assert!(matches!(err, Error::StettAfterCollision { .. }));
    // Without collisions pure STETT runs to the end.
    let ok = run_monte_carlo(&config(Policy::Stett, 0.5, 1.0, 1, 1_000)).unwrap();
    assert!((ok.loops[0].trigger_freq - 0.5).abs() < 0.06);
}

#[test]
fn full_network_success_rates_follow_product_formula() {
    let ps = [0.2, 0.3, 0.1];
    let cfg = ExperimentConfig {
        loops: ps.iter().map(|&p| LoopConfig::new(reference_plant(), Policy::Pst, p)).collect(),
        network: NetworkConfig::Full,
        horizon: 50_000,
        runs: 4,
        master_seed: 5,
        record_level: RecordLevel::FullTrace,
        divergence_threshold: 1e12,
        parallel: true,
    };
    let res = run_monte_carlo(&cfg).unwrap();
    for (i, s) in res.loops.iter().enumerate() {
        let eta = full_network_success_probability(&ps, i);
        let se = (eta * (1.0 - eta) / s.slots as f64).sqrt();
        assert!((s.success_freq - eta).abs() < 3.0 * se, "loop {i}: {} vs {eta}", s.success_freq);
        assert!(s.q.is_none());
    }
    for run in 0..cfg.runs {
        for k in 0..cfg.horizon {
            let winners = res.loops.iter().filter(|s| s.traces[run].sigma[k]).count();
            assert!(winners <= 1);
        }
    }
}

#[test]
fn periodic_schedule_sets_the_average_rate() {
    let mut cfg = config(Policy::Cett, 0.5, 1.0, 2, 40_000);
    cfg.loops[0].p_schedule = Some(vec![0.2, 0.8]);
    let res = run_monte_carlo(&cfg).unwrap();
    assert!((res.loops[0].trigger_freq - 0.5).abs() < 0.01);
}

#[test]
fn initial_mean_shifts_the_start() {
    let mut cfg = config(Policy::Pst, 0.5, 1.0, 1, 1);
    cfg.record_level = RecordLevel::FullTrace;
    cfg.loops[0].initial_mean = Some(DVector::from_element(1, 100.0));
    let res = run_monte_carlo(&cfg).unwrap();
    let x0 = res.loops[0].traces[0].x[0][0];
    assert!((x0 - 100.0).abs() < 10.0);
    cfg.loops[0].initial_mean = Some(DVector::zeros(2));
    assert!(run_monte_carlo(&cfg).is_err());
}

#[test]
fn invalid_configurations_are_rejected() {
    let mut cfg = config(Policy::Pst, 1.3, 1.0, 1, 10);
    assert!(matches!(run_monte_carlo(&cfg), Err(Error::InvalidProbability { .. })));
    cfg.loops[0].p = 0.5;
    cfg.horizon = 0;
    assert!(run_monte_carlo(&cfg).is_err());
    let mut cfg = config(Policy::Cett, 1.0, 1.0, 1, 10);
    assert!(run_monte_carlo(&cfg).is_err());
    cfg.loops[0].p = 0.5;
    cfg.runs = 0;
    assert!(run_monte_carlo(&cfg).is_err());
}
