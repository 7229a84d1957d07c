use std::fs;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wotnet_core::keystore::{register_subkey, verify_certificate};
use wotnet_core::model::{Algorithm, TrustConfig, TrustLevel};
use wotnet_core::trust::{
    disk_usage, evaluate_graph, load, persist, verify_dir, MergeItem, RejectReason, TrustRepository,
};
use wotnet_testkit::{assessment_map, oracle_for_repo, random_topology, KeyPool, Topology};

fn cfg(maxdegree: u32, numknown: u32) -> TrustConfig {
    TrustConfig {
        maxdegree,
        numknown,
        ..TrustConfig::default()
    }
}

fn all_certs_verify(repo: &TrustRepository) -> bool {
    repo.records().all(|r| {
        r.certificates().all(|c| {
            let issuer = repo.record(&c.issuer_fp).expect("issuer held").subject_key();
            verify_certificate(repo.mode(), c, issuer, r.subject_key())
        })
    })
}

#[test]
fn evaluate_matches_oracle_on_random_graphs() {
    let pool = KeyPool::synthetic(10, Algorithm::EcdsaP256, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1500 {
        let topo = random_topology(&mut rng, 10, 25);
        let expected = topo.oracle(&pool);
        let fps: Vec<_> = (0..topo.devices).map(|i| pool.fp(i)).collect();
        let edges: Vec<_> = topo.edges.iter().map(|(a, b)| (fps[*a], fps[*b])).collect();
        let direct = evaluate_graph(fps[0], &topo.config, &fps, edges.iter().map(|(a, b)| (a, b)));
        assert_eq!(assessment_map(&direct), expected, "{topo:?}");

        // the merged repository keeps exactly the material that matters
        let (repo, _) = topo.build(&pool);
        let got = repo.evaluate();
        for (fp, (level, depth)) in &expected {
            assert_eq!((got.level(fp), got.depth(fp)), (*level, *depth), "{topo:?}");
        }
        assert_eq!(assessment_map(&got), oracle_for_repo(&repo));
        assert!(all_certs_verify(&repo));
    }
}

#[test]
fn adding_a_certificate_never_lowers_trust() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pool = KeyPool::synthetic(10, Algorithm::EcdsaP256, 7);
    for _ in 0..500 {
        let topo = random_topology(&mut rng, 10, 25);
        if topo.devices < 2 {
            continue;
        }
        let before = topo.oracle(&pool);
        let mut grown = topo.clone();
        loop {
            let e = (rng.gen_range(0..topo.devices), rng.gen_range(0..topo.devices));
            if e.0 != e.1 {
                grown.edges.push(e);
                break;
            }
        }
        let fps: Vec<_> = (0..grown.devices).map(|i| pool.fp(i)).collect();
        let edges: Vec<_> = grown.edges.iter().map(|(a, b)| (fps[*a], fps[*b])).collect();
        let after = evaluate_graph(fps[0], &grown.config, &fps, edges.iter().map(|(a, b)| (a, b)));
        for (fp, (level, depth)) in before {
            assert!(after.level(&fp) >= level);
            if let (Some(d0), Some(d1)) = (depth, after.depth(&fp)) {
                assert!(d1 <= d0);
            }
        }
    }
}

#[test]
fn maxdegree_one_only_yields_direct_trust() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pool = KeyPool::synthetic(10, Algorithm::EcdsaP256, 7);
    for _ in 0..200 {
        let mut topo = random_topology(&mut rng, 10, 25);
        topo.config.maxdegree = 1;
        let (repo, _) = topo.build(&pool);
        assert_eq!(repo.evaluate().count(TrustLevel::Known), 0);
    }
}

#[test]
fn merge_is_order_independent_and_idempotent() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pool = KeyPool::synthetic(10, Algorithm::EcdsaP256, 7);
    for _ in 0..300 {
        let topo = random_topology(&mut rng, 10, 25);
        let items = topo.items(&pool, 1_000);
        let (reference, _) = topo.build(&pool);
        let mut shuffled = items.clone();
        shuffled.shuffle(&mut rng);
        let mut repo = pool.empty_repo(0, topo.config);
        let first = repo.merge(shuffled.clone());
        assert!(repo.same_contents(&{
            let mut r = pool.empty_repo(0, topo.config);
            r.merge(items.clone());
            r
        }));
        assert_eq!(repo.evaluate(), reference.evaluate());

        let again = repo.merge(shuffled);
        assert_eq!(again.accepted, 0);
        assert!(repo.same_contents(&reference));
        assert!(first.accepted >= again.accepted);
    }
}

#[test]
fn forged_certificates_are_rejected_and_change_nothing() {
    let pool = KeyPool::real(5, Algorithm::EcdsaP256, 11);
    let topo = Topology {
        devices: 5,
        edges: vec![(0, 1), (1, 2), (2, 3)],
        config: cfg(3, 1),
    };
    let (mut repo, _) = topo.build(&pool);
    let before = repo.evaluate();

    // key 4 claims to be certified by the owner
    let mut forged = pool.cert(3, 4, 10);
    forged.issuer_fp = pool.fp(0);
    let mut flipped = pool.cert(1, 3, 10);
    flipped.sig[5] ^= 0x01;
    let report = repo.merge([
        MergeItem::Key(pool.keys[4].public().clone()),
        MergeItem::Certificate(forged),
        MergeItem::Certificate(flipped),
    ]);
    assert_eq!(report.rejected_for(RejectReason::BadSignature), 2);
    assert_eq!(report.accepted, 0);
    assert_eq!(repo.evaluate(), before);
    assert!(!repo.contains(&pool.fp(4)));
    assert!(all_certs_verify(&repo));
}

#[test]
fn chain_beyond_maxdegree_is_rejected() {
    let pool = KeyPool::synthetic(6, Algorithm::EcdsaP256, 3);
    let topo = Topology {
        devices: 6,
        edges: vec![(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)],
        config: cfg(3, 1),
    };
    let (repo, report) = topo.build(&pool);
    assert!(repo.contains(&pool.fp(3)));
    assert!(!repo.contains(&pool.fp(4)));
    assert!(!repo.contains(&pool.fp(5)));
    assert!(report.rejected_for(RejectReason::Unreachable) >= 2);
    assert_eq!(repo.evaluate().depth(&pool.fp(3)), Some(3));
}

#[test]
fn stranger_certificate_over_owner_is_stored_but_inert() {
    let pool = KeyPool::synthetic(3, Algorithm::EcdsaP256, 5);
    let mut repo = pool.empty_repo(0, cfg(3, 1));
    let report = repo.merge([
        MergeItem::Key(pool.keys[2].public().clone()),
        MergeItem::Certificate(pool.cert(2, 0, 1)),
    ]);
    assert_eq!(report.accepted, 2);
    assert_eq!(repo.evaluate().level(&pool.fp(2)), TrustLevel::Unknown);
}

#[test]
fn newer_certificate_replaces_older() {
    let pool = KeyPool::synthetic(2, Algorithm::EcdsaP256, 5);
    let mut repo = pool.empty_repo(0, cfg(3, 1));
    let old = pool.cert(0, 1, 10);
    let new = pool.cert(0, 1, 20);
    repo.merge([MergeItem::Key(pool.keys[1].public().clone()), MergeItem::Certificate(old.clone())]);
    let r = repo.merge([MergeItem::Certificate(new.clone())]);
    assert_eq!(r.accepted, 1);
    let r = repo.merge([MergeItem::Certificate(old)]);
    assert_eq!(r.rejected_for(RejectReason::Superseded), 1);
    assert_eq!(repo.record(&pool.fp(1)).unwrap().certificate_from(&pool.fp(0)), Some(&new));
}

#[test]
fn subkeys_are_capped_per_device() {
    let pool = KeyPool::synthetic(6, Algorithm::EcdsaP256, 9);
    let mut repo = pool.empty_repo(0, cfg(3, 1));
    repo.merge([MergeItem::Key(pool.keys[1].public().clone()), MergeItem::Certificate(pool.cert(0, 1, 1))]);
    let mut issued = 0;
    let subs: Vec<_> = (2..6)
        .map(|i| register_subkey(&pool.keys[1], &mut issued, 10, pool.keys[i].public(), "app", 5).unwrap())
        .map(MergeItem::SubkeyCertificate)
        .collect();
    let report = repo.merge(subs);
    assert_eq!(report.accepted, 3);
    assert_eq!(report.rejected_for(RejectReason::SubkeyLimit), 1);
    assert_eq!(repo.record(&pool.fp(1)).unwrap().subkeys().count(), 3);
}

#[test]
fn size_grows_with_each_certificate() {
    let pool = KeyPool::synthetic(3, Algorithm::EcdsaP256, 1);
    let mut repo = pool.empty_repo(0, cfg(3, 1));
    let base = repo.repo_size_bytes();
    assert_eq!(base, 92u64.div_ceil(3) * 4);
    repo.merge([MergeItem::Key(pool.keys[1].public().clone()), MergeItem::Certificate(pool.cert(0, 1, 1))]);
    let one = repo.repo_size_bytes();
    assert!(one > base);
    repo.merge([MergeItem::Certificate(pool.cert(1, 0, 1))]);
    assert!(repo.repo_size_bytes() > one);
}

#[test]
fn persist_load_round_trip_and_disk_usage() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pool = KeyPool::synthetic(10, Algorithm::Rsa2048, 2);
    for _ in 0..40 {
        let topo = random_topology(&mut rng, 10, 25);
        let (mut repo, _) = topo.build(&pool);
        let mut issued = 0;
        if let Ok(sk) = register_subkey(&pool.keys[0], &mut issued, 3, pool.keys[9].public(), "mail", 3) {
            repo.merge([MergeItem::SubkeyCertificate(sk)]);
        }
        let dir = tempfile::tempdir().unwrap();
        persist(&repo, dir.path()).unwrap();
        assert_eq!(disk_usage(dir.path()).unwrap(), repo.repo_size_bytes());
        let (loaded, failures) = load(dir.path(), topo.config).unwrap();
        assert!(failures.is_empty());
        assert!(loaded.same_contents(&repo));
        assert_eq!(loaded.evaluate(), repo.evaluate());
        assert!(verify_dir(dir.path()).unwrap().iter().all(|v| v.ok()));
    }
}

#[test]
fn tampered_certificate_file_is_isolated() {
    let pool = KeyPool::real(4, Algorithm::EcdsaP256, 21);
    let topo = Topology {
        devices: 4,
        edges: vec![(0, 1), (1, 2), (0, 3), (3, 2)],
        config: cfg(3, 1),
    };
    let (repo, _) = topo.build(&pool);
    let dir = tempfile::tempdir().unwrap();
    persist(&repo, dir.path()).unwrap();

    let target = dir
        .path()
        .join(pool.fp(2).to_hex())
        .join(format!("cert_{}.b64", pool.fp(1).to_hex()));
    let mut text = fs::read(&target).unwrap();
    // change one Base64 digit inside the signature region
    let i = text.len() - 10;
    text[i] = if text[i] == b'A' { b'B' } else { b'A' };
    fs::write(&target, &text).unwrap();

    let verdicts = verify_dir(dir.path()).unwrap();
    let failing: Vec<_> = verdicts.iter().filter(|v| !v.ok()).collect();
    assert_eq!(failing.len(), 1);
    assert_eq!(failing[0].path, target);

    let (loaded, failures) = load(dir.path(), topo.config).unwrap();
    assert_eq!(failures.len(), 1);
    assert_eq!(loaded.certificate_count(), repo.certificate_count() - 1);
    assert_eq!(loaded.evaluate().level(&pool.fp(2)), TrustLevel::Known);
}

#[test]
fn rsa_footprint_exceeds_ecdsa_for_same_topology() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let rsa = KeyPool::synthetic(10, Algorithm::Rsa2048, 1);
    let ec = KeyPool::synthetic(10, Algorithm::EcdsaP256, 1);
    for _ in 0..50 {
        let topo = random_topology(&mut rng, 10, 25);
        let (a, _) = topo.build(&rsa);
        let (b, _) = topo.build(&ec);
        assert_eq!(a.len(), b.len());
        assert!(a.repo_size_bytes() > b.repo_size_bytes());
    }
}

#[test]
fn real_rsa_footprint_exceeds_real_ecdsa() {
    let topo = Topology {
        devices: 3,
        edges: vec![(0, 1), (1, 2)],
        config: cfg(3, 1),
    };
    let (a, _) = topo.build(&KeyPool::real(3, Algorithm::Rsa2048, 1));
    let (b, _) = topo.build(&KeyPool::real(3, Algorithm::EcdsaP256, 1));
    assert!(a.repo_size_bytes() > b.repo_size_bytes());
}
