use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn peftopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_peftopt"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn tiny_space(dir: &Path) -> String {
    let path = dir.join("tiny.json");
    fs::write(
        &path,
        r#"{"num_layers":3,"hidden_dim":8,"size_grid":[0,2,4,8],"base_param_count":5000}"#,
    )
    .unwrap();
    path.display().to_string()
}

fn quick_flags<'a>(space: &'a str, out: &'a str) -> Vec<&'a str> {
    vec![
        "--space-file",
        space,
        "--seed",
        "0",
        "--n-init",
        "5",
        "--n-total",
        "9",
        "--restarts",
        "2",
        "--fit-steps",
        "30",
        "--mc-samples",
        "16",
        "--out",
        out,
    ]
}

/// Observation records with the timing field removed.
fn records_without_timing(path: &Path) -> Vec<serde_json::Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("wall_time_s");
            v
        })
        .collect()
}

#[test]
fn space_reports() {
    let o = peftopt(&["space"]);
    assert!(o.status.success());
    assert!(stdout(&o).lines().any(|l| l == "cardinality: 5451776"));
    let o = peftopt(&["space", "--preset", "bert-large"]);
    assert!(stdout(&o).lines().any(|l| l == "cardinality: 22330474496"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"num_layers\": 12,").unwrap();
    let o = peftopt(&["space", "--space-file", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(o.stdout.is_empty());
    fs::write(
        &bad,
        r#"{"num_layers":2,"hidden_dim":8,"size_grid":[1,8],"base_param_count":10}"#,
    )
    .unwrap();
    assert_eq!(
        peftopt(&["space", "--space-file", bad.to_str().unwrap()]).status.code(),
        Some(2)
    );
}

#[test]
fn search_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let space = tiny_space(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = peftopt(&[&["search"][..], &quick_flags(&space, out.to_str().unwrap())].concat());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).starts_with("config"));
    }
    for f in ["front.jsonl", "hv.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let obs = records_without_timing(&a.join("observations.jsonl"));
    assert_eq!(obs.len(), 9);
    assert_eq!(obs, records_without_timing(&b.join("observations.jsonl")));

    let hv = fs::read_to_string(a.join("hv.csv")).unwrap();
    let mut lines = hv.lines();
    assert_eq!(lines.next(), Some("evals,hv"));
    let rows: Vec<(usize, f64)> = lines
        .map(|l| {
            let (n, v) = l.split_once(',').unwrap();
            (n.parse().unwrap(), v.parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 9);
    assert!(rows.windows(2).all(|w| w[1].1 >= w[0].1));

    // random search shares the initial design
    let r = dir.path().join("r");
    let o = peftopt(&[&["random"][..], &quick_flags(&space, r.to_str().unwrap())].concat());
    assert!(o.status.success());
    let robs = records_without_timing(&r.join("observations.jsonl"));
    assert_eq!(&robs[..5], &obs[..5]);

    // state inspection subcommands
    let state = a.join("state.jsonl");
    let o = peftopt(&["pareto", "--state", state.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), fs::read_to_string(a.join("front.jsonl")).unwrap());
    let o = peftopt(&["hv", "--state", state.to_str().unwrap()]);
    assert_eq!(stdout(&o), hv);
    let o = peftopt(&["pareto", "--state", state.to_str().unwrap(), "--format", "csv"]);
    assert!(stdout(&o).starts_with("layers,d_sa,d_pa,l_pt,score,cost\n"));
    let e = dir.path().join("export");
    let o = peftopt(&[
        "export",
        "--state",
        state.to_str().unwrap(),
        "--out",
        e.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(e.join("hv.csv")).unwrap(), hv);
    assert!(fs::read_to_string(e.join("front.csv")).unwrap().starts_with("layers,"));
}

#[test]
fn default_budget() {
    let help = stdout(&peftopt(&["search", "--help"]));
    let lines: Vec<&str> = help.lines().collect();
    // the default sits on the flag line or the one below it
    let line = |flag: &str| {
        let i = lines.iter().position(|l| l.contains(flag)).unwrap();
        format!("{} {}", lines[i], lines.get(i + 1).unwrap_or(&""))
    };
    assert!(line("--n-init").contains("[default: 100]"));
    assert!(line("--n-total").contains("[default: 200]"));
    assert!(line("--fidelity").contains("[default: 0.05]"));
}

#[test]
fn scaling_family() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    let o = peftopt(&["scaling", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let obs = records_without_timing(&out.join("observations.jsonl"));
    assert_eq!(obs.len(), 11);
    assert_eq!(obs[0]["cost"].as_f64(), Some(0.0));
    assert_eq!(obs[10]["config"]["d_sa"].as_u64(), Some(768));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let o = out.to_str().unwrap();
    assert_eq!(peftopt(&["search"]).status.code(), Some(2));
    assert_eq!(
        peftopt(&["search", "--out", o, "--n-init", "10", "--n-total", "5"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        peftopt(&["search", "--out", o, "--backend", "tabular"]).status.code(),
        Some(2)
    );
    assert_eq!(
        peftopt(&["search", "--out", o, "--backend", "worker"]).status.code(),
        Some(2)
    );
    assert_eq!(peftopt(&["search", "--out", o, "--resume"]).status.code(), Some(2));
    assert_eq!(peftopt(&["frobnicate"]).status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn worker_failure_exits_3_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let space = tiny_space(dir.path());
    let script = dir.path().join("worker.py");
    fs::write(
        &script,
        "import json, sys\nlimit = int(sys.argv[1])\nfor n, line in enumerate(sys.stdin):\n    if n >= limit:\n        sys.exit(1)\n    req = json.loads(line)\n    c = req['config']\n    print(json.dumps({'id': req['id'], 'score': len(c['layers']) + c['d_sa'] / 8.0}), flush=True)\n",
    )
    .unwrap();
    let out = dir.path().join("w");
    let flaky = format!("python3 {} 6", script.display());
    let steady = format!("python3 {} 1000", script.display());
    let mut args = vec!["search", "--backend", "worker", "--worker-cmd", &flaky];
    args.extend(quick_flags(&space, out.to_str().unwrap()));
    let o = peftopt(&args);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--resume"));
    let state = fs::read_to_string(out.join("state.jsonl")).unwrap();
    assert_eq!(state.lines().count(), 1 + 6);

    let mut args = vec!["search", "--backend", "worker", "--worker-cmd", &steady, "--resume"];
    args.extend(quick_flags(&space, out.to_str().unwrap()));
    let o = peftopt(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(records_without_timing(&out.join("observations.jsonl")).len(), 9);
}
