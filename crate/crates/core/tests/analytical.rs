use coopmc::analytical::{
    average_error, average_error_with_gains, history_distribution, q_fc_symbol, AverageConfig, Averaging, Model, Path,
    Thresholds, WindowConfig,
};
use coopmc::channel::{build_gains, DiffusionParams, ProtocolTiming};
use coopmc::topology::{build_line_layout, build_symmetric_ring};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn error_probabilities_are_probabilities(
        k in 1usize..=4,
        xi_rx in 1u32..40,
        xi_fc in 1u32..60,
        p1 in 0.05f64..0.95,
        len in 1usize..6,
    ) {
        let topo = build_symmetric_ring(k, 0.225, 0.225).unwrap();
        let r = average_error(
            &topo,
            &DiffusionParams::reference(k),
            &ProtocolTiming::default(),
            &Thresholds::uniform(k, xi_rx, xi_fc),
            len,
            p1,
            &AverageConfig::default(),
        )
        .unwrap();
        prop_assert_eq!(r.q_fc.len(), len);
        for j in 0..len {
            prop_assert!((0.0..=1.0).contains(&r.q_md[j]));
            prop_assert!((0.0..=1.0).contains(&r.q_fa[j]));
            prop_assert!((r.q_fc[j] - (p1 * r.q_md[j] + (1.0 - p1) * r.q_fa[j])).abs() < 1e-12);
        }
        let mean = r.q_fc.iter().sum::<f64>() / len as f64;
        prop_assert!((r.q_bar - mean).abs() < 1e-12);
    }

    #[test]
    fn fc_threshold_trades_misses_for_false_alarms(
        xi_rx in 1u32..40,
        xi_fc in 1u32..60,
        bits in proptest::collection::vec(any::<bool>(), 0..6),
    ) {
        let topo = build_symmetric_ring(3, 0.225, 0.225).unwrap();
        let params = DiffusionParams::reference(3);
        let gains = build_gains(&topo, &params, &ProtocolTiming::default(), 8).unwrap();
        let lo = Thresholds::uniform(3, xi_rx, xi_fc);
        let hi = Thresholds::uniform(3, xi_rx, xi_fc + 1);
        let a = q_fc_symbol(&Model::new(&gains, &params, &lo).unwrap(), &bits, 0.5, &WindowConfig::default()).unwrap();
        let b = q_fc_symbol(&Model::new(&gains, &params, &hi).unwrap(), &bits, 0.5, &WindowConfig::default()).unwrap();
        prop_assert!(b.q_md >= a.q_md - 1e-15);
        prop_assert!(b.q_fa <= a.q_fa + 1e-15);
    }

    #[test]
    fn decision_history_weights_sum_to_one(
        xi_rx in 1u32..40,
        bits in proptest::collection::vec(any::<bool>(), 0..7),
        window in 0usize..4,
        symmetric in any::<bool>(),
    ) {
        let topo = build_symmetric_ring(3, 0.225, 0.225).unwrap();
        let params = DiffusionParams::reference(3);
        let gains = build_gains(&topo, &params, &ProtocolTiming::default(), 8).unwrap();
        let th = Thresholds::uniform(3, xi_rx, 5);
        let model = Model::new(&gains, &params, &th).unwrap();
        let h = history_distribution(&model, &bits, window, symmetric, u128::MAX).unwrap();
        prop_assert!((h.total_prob() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn receiver_order_does_not_matter(
        pos in 1usize..=5,
        xi_rx in 1u32..30,
        xi_fc in 1u32..30,
    ) {
        let topo = build_line_layout(pos, 0.225, 0.225).unwrap();
        let params = DiffusionParams::reference(3);
        let timing = ProtocolTiming::default();
        let th = Thresholds::uniform(3, xi_rx, xi_fc);
        let a = average_error(&topo, &params, &timing, &th, 4, 0.5, &AverageConfig::default()).unwrap();
        let b = average_error(&topo.permuted(&[2, 0, 1]).unwrap(), &params, &timing, &th, 4, 0.5, &AverageConfig::default())
            .unwrap();
        prop_assert!((a.q_bar - b.q_bar).abs() < 1e-13);
    }
}

#[test]
fn forcing_the_asymmetric_path_on_a_ring_changes_nothing() {
    let topo = build_symmetric_ring(4, 0.2, 0.225).unwrap();
    let params = DiffusionParams::reference(4);
    let gains = build_gains(&topo, &params, &ProtocolTiming::default(), 10).unwrap();
    let th = Thresholds::uniform(4, 7, 9);
    let sym = AverageConfig::default();
    let mut asym = AverageConfig::default();
    asym.window.path = Path::Asymmetric;
    let a = average_error_with_gains(&gains, &params, &th, 10, 0.5, &sym).unwrap().0;
    let b = average_error_with_gains(&gains, &params, &th, 10, 0.5, &asym).unwrap().0;
    assert!((a.q_bar - b.q_bar).abs() < 1e-12, "{} vs {}", a.q_bar, b.q_bar);
}

#[test]
fn monte_carlo_averaging_approaches_exact() {
    let topo = build_symmetric_ring(3, 0.225, 0.225).unwrap();
    let params = DiffusionParams::reference(3);
    let timing = ProtocolTiming::default();
    let th = Thresholds::uniform(3, 9, 6);
    let exact = average_error(&topo, &params, &timing, &th, 8, 0.5, &AverageConfig::default()).unwrap();
    let mc_cfg = AverageConfig { averaging: Averaging::MonteCarlo { sequences: 4000, seed: 9 }, ..AverageConfig::default() };
    let mc = average_error(&topo, &params, &timing, &th, 8, 0.5, &mc_cfg).unwrap();
    assert!((mc.q_bar / exact.q_bar - 1.0).abs() < 0.05, "{} vs {}", mc.q_bar, exact.q_bar);
}

#[test]
fn wider_window_changes_little_on_the_reference_ring() {
    let topo = build_symmetric_ring(3, 0.225, 0.225).unwrap();
    let params = DiffusionParams::reference(3);
    let gains = build_gains(&topo, &params, &ProtocolTiming::default(), 10).unwrap();
    let th = Thresholds::uniform(3, 9, 6);
    let narrow = average_error_with_gains(&gains, &params, &th, 10, 0.5, &AverageConfig::default()).unwrap().0;
    let mut wide_cfg = AverageConfig::default();
    wide_cfg.window.isi_window = 4;
    let wide = average_error_with_gains(&gains, &params, &th, 10, 0.5, &wide_cfg).unwrap().0;
    assert!((narrow.q_bar / wide.q_bar - 1.0).abs() < 0.05, "{} vs {}", narrow.q_bar, wide.q_bar);
}
