use coopmc::analytical::Thresholds;
use coopmc::channel::{DiffusionParams, ProtocolTiming};
use coopmc::simulator::{
    count_inside, step_brownian, Culling, MoleculeCloud, SimConfig, Simulation, Species, SpeciesDiffusion, SpeciesFilter,
};
use coopmc::topology::{build_symmetric_ring, SphericalObserver, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ring3() -> coopmc::topology::Topology {
    build_symmetric_ring(3, 0.225, 0.225).unwrap()
}

#[test]
fn mean_square_displacement_is_6dt() {
    let n = 100_000;
    let (d, dt) = (5e-9, 1e-3);
    let mut cloud = MoleculeCloud::new();
    cloud.emit(n, Vec3::ORIGIN, Species::A, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    step_brownian(&mut cloud, SpeciesDiffusion { a: d, b: d }, dt, &mut rng).unwrap();
    // Positions are in um.
    let sq: Vec<f64> = cloud.positions.iter().map(|p| p.norm_sq() * 1e-12).collect();
    let mean = sq.iter().sum::<f64>() / n as f64;
    let var = sq.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let expected = 6.0 * d * dt;
    let se = (var / n as f64).sqrt();
    assert!((mean - expected).abs() < 3.0 * se, "msd {mean:e} vs {expected:e} (se {se:e})");
}

#[test]
fn split_steps_match_one_step_in_distribution() {
    let n = 50_000;
    let d = SpeciesDiffusion { a: 5e-9, b: 1e-9 };
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut cloud = MoleculeCloud::new();
    cloud.emit(n, Vec3::ORIGIN, Species::B(0), 0.0);
    for _ in 0..4 {
        step_brownian(&mut cloud, d, 2.5e-4, &mut rng).unwrap();
    }
    let mean = cloud.positions.iter().map(|p| p.norm_sq() * 1e-12).sum::<f64>() / n as f64;
    // Species B uses its own coefficient.
    let expected = 6.0 * 1e-9 * 1e-3;
    assert!((mean / expected - 1.0).abs() < 0.03, "msd ratio {}", mean / expected);
}

#[test]
fn counts_in_uniform_cloud_follow_volume_fraction() {
    let n = 200_000;
    let half = 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut cloud = MoleculeCloud::new();
    for _ in 0..n {
        let p = Vec3::new(rng.random_range(-half..half), rng.random_range(-half..half), rng.random_range(-half..half));
        cloud.emit(1, p, Species::A, 0.0);
    }
    let obs = SphericalObserver::new(Vec3::new(0.1, -0.2, 0.3), 0.5).unwrap();
    let frac = obs.volume() / (2.0 * half).powi(3);
    let c = count_inside(&cloud, &obs, SpeciesFilter::A) as f64;
    let sd = (n as f64 * frac * (1.0 - frac)).sqrt();
    assert!((c - n as f64 * frac).abs() < 3.0 * sd, "count {c} vs {}", n as f64 * frac);
    assert_eq!(count_inside(&cloud, &obs, SpeciesFilter::AnyB), 0);
}

#[test]
fn trials_are_reproducible_and_independent_of_order() {
    let topo = ring3();
    let sim = Simulation::new(
        &topo,
        &DiffusionParams::reference(3),
        &ProtocolTiming::default(),
        &Thresholds::uniform(3, 20, 6),
        SimConfig { trials: 4, seed: 5, ..SimConfig::default() },
    )
    .unwrap();
    let later = sim.trial(3, 4).unwrap();
    let first = sim.trial(0, 4).unwrap();
    assert_eq!(sim.trial(3, 4).unwrap(), later);
    assert_eq!(sim.trial(0, 4).unwrap(), first);
    assert_ne!(first.symbols, later.symbols);
}

#[test]
fn estimate_does_not_depend_on_thread_count() {
    let topo = ring3();
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            Simulation::new(
                &topo,
                &DiffusionParams::reference(3),
                &ProtocolTiming::default(),
                &Thresholds::uniform(3, 20, 6),
                SimConfig { trials: 24, seed: 77, culling: Culling::Aggressive, ..SimConfig::default() },
            )
            .unwrap()
            .estimate_error(5, None)
            .unwrap()
        })
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn saturated_receivers_follow_the_tx_bits() {
    let topo = ring3();
    let params = DiffusionParams { s_a: 200_000, s_b: 4000, ..DiffusionParams::reference(3) };
    let sim = Simulation::new(
        &topo,
        &params,
        &ProtocolTiming::default(),
        &Thresholds::uniform(3, 1, 1),
        SimConfig { trials: 3, seed: 2, culling: Culling::Aggressive, p1: 1.0, ..SimConfig::default() },
    )
    .unwrap();
    for i in 0..3 {
        let t = sim.trial(i, 4).unwrap();
        for s in &t.symbols {
            assert!(s.bit);
            assert!(s.rx_decisions.iter().all(|&d| d));
            assert!(s.decision);
        }
    }
}

#[test]
fn neighbouring_seeds_agree_statistically() {
    let topo = ring3();
    let est = |seed| {
        Simulation::new(
            &topo,
            &DiffusionParams::reference(3),
            &ProtocolTiming::default(),
            &Thresholds::uniform(3, 9, 6),
            SimConfig { trials: 300, seed, culling: Culling::Aggressive, ..SimConfig::default() },
        )
        .unwrap()
        .estimate_error(4, None)
        .unwrap()
    };
    let (a, b) = (est(1000), est(1001));
    let se = (a.stderr_pooled.powi(2) + b.stderr_pooled.powi(2)).sqrt().max(1e-3);
    assert!((a.q_bar - b.q_bar).abs() < 3.0 * se, "{} vs {}", a.q_bar, b.q_bar);
}

#[test]
fn trial_log_has_one_line_per_trial() {
    let topo = ring3();
    let sim = Simulation::new(
        &topo,
        &DiffusionParams::reference(3),
        &ProtocolTiming::default(),
        &Thresholds::uniform(3, 20, 6),
        SimConfig { trials: 5, seed: 3, culling: Culling::Aggressive, ..SimConfig::default() },
    )
    .unwrap();
    let mut buf = Vec::new();
    sim.estimate_error(3, Some(&mut buf)).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.lines().all(|l| l.starts_with('{') && l.contains("\"symbols\"")));
}
