use std::path::PathBuf;
use std::time::Duration;

use peftopt::objectives::{
    evaluate, load_tabular, Backend, SyntheticLandscape, SyntheticLandscapeSpec, TabularBenchmark, WorkerClient,
    WorkerRequest,
};
use peftopt::rng::seeded;
use peftopt::space::{ConfigText, Configuration, SearchSpaceSpec};
use peftopt::Error;
use rand::Rng;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn noiseless(seed: u64) -> SyntheticLandscapeSpec {
    SyntheticLandscapeSpec {
        noise_sd: 0.0,
        ..SyntheticLandscapeSpec::with_seed(seed)
    }
}

fn sparse_config(space: &SearchSpaceSpec) -> Configuration {
    space
        .resolve(&ConfigText {
            layers: vec![3, 4, 8, 9, 10],
            d_sa: 12,
            d_pa: 96,
            l_pt: 1,
        })
        .unwrap()
}

#[test]
fn synthetic_basics() {
    let space = SearchSpaceSpec::bert_base();
    let land = noiseless(7).build(&space).unwrap();
    assert_eq!(
        land.synthetic_score(&space, &space.empty_config(), 0.05, 1).unwrap(),
        0.0
    );
    let full = land.synthetic_score(&space, &space.full_config(), 0.05, 1).unwrap();
    assert!(full > 0.0);
    let c = sparse_config(&space);
    assert_eq!(
        land.synthetic_score(&space, &c, 0.05, 1).unwrap(),
        land.synthetic_score(&space, &c, 1.0, 99).unwrap()
    );

    // half the layers carry near-zero weight
    let w = land.layer_weights();
    assert_eq!(w.iter().filter(|&&v| v < 0.02).count(), 6);
    assert!(w.iter().all(|&v| (0.005..1.5).contains(&v)));

    // one active layer of weight 1 with a full serial adapter gives s = 1
    let spec = SyntheticLandscapeSpec {
        noise_sd: 0.0,
        c_pa: 0.0,
        c_pt: 0.0,
        ..Default::default()
    };
    let mut weights = vec![0.0; 12];
    weights[0] = 1.0;
    let one = SyntheticLandscape::from_weights(spec.clone(), weights, 768);
    let cfg = Configuration {
        d_sa: 768,
        ..space.empty_config()
    };
    let mut cfg = cfg;
    cfg.layer_mask[0] = true;
    assert_eq!(one.synthetic_score(&space, &cfg, 1.0, 0).unwrap(), 50.0);
    let zero = SyntheticLandscape::from_weights(spec, vec![0.0; 12], 768);
    assert_eq!(zero.synthetic_score(&space, &space.full_config(), 1.0, 0).unwrap(), 0.0);
}

#[test]
fn synthetic_monotone_in_every_size_step() {
    let space = SearchSpaceSpec::bert_base();
    let land = noiseless(3).build(&space).unwrap();
    let mut rng = seeded(12);
    for _ in 0..1000 {
        let c = space.sample(&mut rng);
        let slot = rng.random_range(0..3);
        let idx = space.grid_index(c.size(slot)).unwrap();
        if idx + 1 == space.levels() {
            continue;
        }
        let mut up = c.clone();
        let v = space.size_grid[idx + 1];
        match slot {
            0 => up.d_sa = v,
            1 => up.d_pa = v,
            _ => up.l_pt = v,
        }
        assert!(land.mean_score(&up) >= land.mean_score(&c));
    }
}

#[test]
fn synthetic_noise_is_seeded_and_scales_with_fidelity() {
    let space = SearchSpaceSpec::bert_base();
    let land = SyntheticLandscapeSpec::with_seed(7).build(&space).unwrap();
    let c = sparse_config(&space);
    let mean = land.mean_score(&c);
    let a = land.synthetic_score(&space, &c, 0.05, 4).unwrap();
    assert_eq!(a, land.synthetic_score(&space, &c, 0.05, 4).unwrap());
    assert_ne!(a, land.synthetic_score(&space, &c, 0.05, 5).unwrap());
    for (fidelity, want) in [(1.0, 0.2), (0.0625, 0.4)] {
        let n = 4000;
        let var = (0..n)
            .map(|s| (land.synthetic_score(&space, &c, fidelity, s).unwrap() - mean).powi(2))
            .sum::<f64>()
            / n as f64;
        let sd = var.sqrt();
        assert!((sd - want).abs() < 0.05 * want, "fidelity {fidelity}: sd {sd}");
    }
    assert!(land.synthetic_score(&space, &c, 0.0, 1).is_err());
    assert!(land.synthetic_score(&space, &c, 1.5, 1).is_err());
}

#[test]
fn evaluate_uses_exact_cost() {
    let space = SearchSpaceSpec::bert_base();
    let land = noiseless(7).build(&space).unwrap();
    let c = sparse_config(&space);
    let o = evaluate(&land, &space, &c, 0.05, 3).unwrap();
    assert_eq!(o.cost, 837_120.0 / 109_482_240.0);
    assert_eq!(o.seed, 3);
    assert_eq!(o.fidelity, 0.05);
}

#[test]
fn tabular_lookup() {
    let space = SearchSpaceSpec::bert_base();
    let bench = load_tabular(fixture("scores.jsonl")).unwrap();
    assert_eq!(bench.len(), 2);
    let s = bench.score(&space, &sparse_config(&space), 0.05, 0).unwrap();
    assert_eq!(s.score, 72.20);
    assert_eq!(s.cost, None);
    assert_eq!(
        bench.score(&space, &space.empty_config(), 1.0, 0).unwrap().cost,
        Some(0.0)
    );
    assert!(matches!(
        bench.score(&space, &space.full_config(), 1.0, 0),
        Err(Error::NotFound(_))
    ));

    let empty = TabularBenchmark::from_reader(&b""[..]).unwrap();
    assert!(empty.is_empty());

    let dup = "{\"config\":{\"layers\":[1],\"d_sa\":1,\"d_pa\":0,\"l_pt\":0},\"score\":1.0}\n\n{\"config\":{\"layers\":[1,1],\"d_sa\":1,\"d_pa\":0,\"l_pt\":0},\"score\":2.0}\n";
    assert!(matches!(
        TabularBenchmark::from_reader(dup.as_bytes()),
        Err(Error::DuplicateKey { line: 3, .. })
    ));
    assert!(matches!(
        TabularBenchmark::from_reader("{\"config\":1}\n".as_bytes()),
        Err(Error::Parse { line: 1, .. })
    ));

    let mut buf = Vec::new();
    bench.write(&mut buf).unwrap();
    assert_eq!(TabularBenchmark::from_reader(&buf[..]).unwrap(), bench);
}

fn mock_worker(timeout: Duration) -> WorkerClient {
    WorkerClient::new(format!("python3 {}", fixture("mock_worker.py").display()), timeout)
}

#[test]
fn worker_roundtrip() {
    let space = SearchSpaceSpec::bert_base();
    let client = mock_worker(Duration::from_secs(20));
    let c = sparse_config(&space);
    let a = client.score(&space, &c, 0.5, 10).unwrap();
    assert_eq!(a.score, 50.0 + 1.2 + 3.0 * 0.5);
    assert_eq!(a.cost, None);
    // pooled connection answers the next request too, deterministically
    assert_eq!(client.score(&space, &c, 0.5, 10).unwrap(), a);
    let o = evaluate(&client, &space, &space.empty_config(), 1.0, 0).unwrap();
    assert_eq!((o.score, o.cost), (0.0, 0.0));

    // a worker-reported error leaves the connection usable
    let bad = Configuration { d_pa: 3, ..c.clone() };
    let err = client.score(&space, &bad, 0.5, 1).unwrap_err();
    assert!(err.to_string().contains("diverged"));
    assert!(client.score(&space, &c, 0.5, 10).is_ok());

    let direct = client
        .request(&WorkerRequest {
            id: "x9".into(),
            config: c.to_text(),
            fidelity: 1.0,
            seed: 0,
        })
        .unwrap();
    assert_eq!(direct.score, 51.2);
}

#[test]
fn worker_crash_and_timeout() {
    let space = SearchSpaceSpec::bert_base();
    let client = mock_worker(Duration::from_millis(1500));
    let crash = Configuration {
        l_pt: 384,
        ..space.empty_config()
    };
    assert!(matches!(
        client.score(&space, &crash, 1.0, 0),
        Err(Error::Evaluation(_))
    ));
    let hang = Configuration {
        d_sa: 768,
        ..space.empty_config()
    };
    let start = std::time::Instant::now();
    assert!(client.score(&space, &hang, 1.0, 0).is_err());
    assert!(start.elapsed() < Duration::from_secs(10));
    // a fresh process replaces the failed ones
    assert!(client.score(&space, &space.empty_config(), 1.0, 0).is_ok());

    let missing = WorkerClient::new("/nonexistent/worker-binary", Duration::from_secs(2));
    assert!(missing.score(&space, &space.empty_config(), 1.0, 0).is_err());
}
