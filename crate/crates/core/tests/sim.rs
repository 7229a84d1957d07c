use wotnet_core::model::{Algorithm, CryptoMode, TrustLevel};
use wotnet_core::sim::{run, Calibration, SimConfig, SimError, Simulation};
use wotnet_testkit::{assessment_map, bfs_oracle};

fn small(seed: u64, maxdegree: u32) -> SimConfig {
    let mut c = SimConfig {
        width_m: 300.0,
        height_m: 300.0,
        num_nodes: 16,
        duration_s: 1800,
        seed,
        ..SimConfig::default()
    };
    c.trust.maxdegree = maxdegree;
    c
}

fn cal() -> Calibration {
    Calibration::measure().unwrap()
}

#[test]
fn same_seed_same_csv() {
    let cal = cal();
    let a = run(&small(7, 3), Some(&cal)).unwrap().to_csv();
    let b = run(&small(7, 3), Some(&cal)).unwrap().to_csv();
    let c = run(&small(8, 3), Some(&cal)).unwrap().to_csv();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn one_sample_per_minute_including_time_zero() {
    let log = run(&small(1, 2), Some(&cal())).unwrap();
    assert_eq!(log.samples.len(), 1800 / 60 + 1);
    for (i, s) in log.samples.iter().enumerate() {
        assert_eq!(s.time_s, i as u64 * 60);
    }
    let csv = log.to_csv();
    assert_eq!(csv.lines().count(), log.samples.len() + 1);
}

#[test]
fn size_model_needs_calibration() {
    assert!(matches!(run(&small(1, 2), None), Err(SimError::MissingCalibration)));
    let bad = SimConfig {
        num_nodes: 0,
        ..small(1, 2)
    };
    assert!(matches!(run(&bad, Some(&cal())), Err(SimError::InvalidConfig(_))));
}

#[test]
fn lone_node_does_nothing() {
    let cfg = SimConfig {
        num_nodes: 1,
        ..small(3, 3)
    };
    let log = run(&cfg, Some(&cal())).unwrap();
    let last = log.last().unwrap();
    assert_eq!(last.total_relations(), 0);
    assert_eq!(last.total_bytes(), 0);
    assert_eq!(last.handshakes, 0);
    // only the sub-key registrations
    assert_eq!(last.sign_ops, u64::from(cfg.trust.maxsubkeys));
}

#[test]
fn degree_one_has_no_transitive_relations() {
    let log = run(&small(4, 1), Some(&cal())).unwrap();
    assert!(log.last().unwrap().direct_relations > 0);
    assert!(log.samples.iter().all(|s| s.known_total() == 0));
}

#[test]
fn higher_degree_adds_transitive_relations() {
    let cal = cal();
    for seed in 1..=3 {
        let totals: Vec<u64> = (1..=3)
            .map(|d| run(&small(seed, d), Some(&cal)).unwrap().last().unwrap().total_relations())
            .collect();
        assert!(totals[0] < totals[1] && totals[1] < totals[2], "seed {seed}: {totals:?}");
    }
}

#[test]
fn counters_are_cumulative_and_consistent() {
    let log = run(&small(5, 3), Some(&cal())).unwrap();
    for w in log.samples.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        assert!(b.handshake_bytes >= a.handshake_bytes);
        assert!(b.sync_query_bytes >= a.sync_query_bytes);
        assert!(b.sync_response_bytes >= a.sync_response_bytes);
        assert!(b.sign_ops >= a.sign_ops && b.verify_ops >= a.verify_ops);
        assert!(b.direct_relations >= a.direct_relations);
    }
    for s in &log.samples {
        assert!(s.verify_ops >= s.sign_ops, "t={}", s.time_s);
        assert_eq!(s.direct_relations, 2 * s.handshakes);
        assert!(s.repo_bytes_mean <= s.repo_bytes_max as f64);
    }
}

#[test]
fn every_byte_sent_is_received() {
    let mut sim = Simulation::new(small(6, 3), Some(&cal())).unwrap();
    while !sim.finished() {
        sim.step().unwrap();
    }
    let (sent, received) = sim.traffic();
    let total: u64 = sent.iter().sum();
    assert_eq!(total, received.iter().sum::<u64>());
    assert_eq!(total, sim.log().last().unwrap().total_bytes());
    assert!(total > 0);
}

#[test]
fn simulated_depths_match_shortest_paths() {
    let mut sim = Simulation::new(small(9, 3), Some(&cal())).unwrap();
    while !sim.finished() {
        sim.step().unwrap();
    }
    let mut known = 0;
    for node in sim.nodes() {
        let got = assessment_map(&node.repo.evaluate());
        assert_eq!(got, bfs_oracle(&node.repo));
        known += got.values().filter(|(l, _)| *l == TrustLevel::Known).count();
    }
    assert!(known > 0);
}

#[test]
fn storage_cap_is_enforced() {
    let cfg = SimConfig {
        buffer_bytes: 6_000,
        ..small(2, 3)
    };
    let mut sim = Simulation::new(cfg, Some(&cal())).unwrap();
    while !sim.finished() {
        sim.step().unwrap();
    }
    assert!(sim.log().last().unwrap().buffer_rejections > 0);
    for node in sim.nodes() {
        assert!(node.repo.repo_size_bytes() <= 6_000);
    }
}

#[test]
fn broken_contacts_abort_without_merging() {
    let cfg = SimConfig {
        tx_rate_bps: 1,
        ..small(3, 3)
    };
    let log = run(&cfg, Some(&cal())).unwrap();
    let last = log.last().unwrap();
    assert!(last.syncs_aborted > 0);
    assert_eq!(last.syncs_completed, 0);
    assert_eq!(last.known_total(), 0);
    assert!(last.sync_bytes() > 0);
}

#[test]
fn real_crypto_matches_size_model() {
    let base = SimConfig {
        width_m: 120.0,
        height_m: 120.0,
        num_nodes: 8,
        duration_s: 900,
        ..small(11, 3)
    };
    assert_eq!(base.trust.signaturealgorithm, Algorithm::EcdsaP256);
    let modeled = run(&base, Some(&cal())).unwrap();
    let real = run(
        &SimConfig {
            crypto_mode: CryptoMode::Real,
            ..base
        },
        None,
    )
    .unwrap();
    assert_eq!(modeled.samples.len(), real.samples.len());
    for (m, r) in modeled.samples.iter().zip(&real.samples) {
        assert_eq!((m.direct_relations, &m.known_by_depth), (r.direct_relations, &r.known_by_depth));
        let (mb, rb) = (m.total_bytes() as f64, r.total_bytes() as f64);
        assert!((mb - rb).abs() <= 0.01 * rb.max(1.0), "t={}: {mb} vs {rb}", m.time_s);
    }
    assert!(real.last().unwrap().known_total() > 0);
}

#[test]
fn rsa_repositories_are_larger() {
    let cal = cal();
    let ecdsa = run(&small(12, 3), Some(&cal)).unwrap();
    let mut cfg = small(12, 3);
    cfg.trust.signaturealgorithm = Algorithm::Rsa2048;
    let rsa = run(&cfg, Some(&cal)).unwrap();
    assert_eq!(ecdsa.last().unwrap().handshakes, rsa.last().unwrap().handshakes);
    assert!(rsa.last().unwrap().repo_bytes_mean > ecdsa.last().unwrap().repo_bytes_mean);
}
