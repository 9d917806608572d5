use std::path::Path;
use std::process::{Command, Output};

use ivftq::data::{make_sift_like, write_fvecs, SiftLikeParams};

fn ivftq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ivftq")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {}", String::from_utf8_lossy(&out.stdout)))
}

fn write_dataset(dir: &Path) -> (String, String) {
    let ds = make_sift_like(2000, 20, SiftLikeParams::default(), 3).unwrap();
    let base = dir.join("base.fvecs");
    let queries = dir.join("query.fvecs");
    write_fvecs(&base, &ds.base, ds.dim).unwrap();
    write_fvecs(&queries, &ds.queries, ds.dim).unwrap();
    (base.to_string_lossy().into(), queries.to_string_lossy().into())
}

#[test]
fn no_arguments_prints_usage_and_exits_1() {
    let out = ivftq(&[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_subcommand_and_flag_exit_1() {
    assert_eq!(ivftq(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(ivftq(&["design-quantizer", "--bits", "4", "--dim", "128", "--bogus"]).status.code(), Some(1));
}

#[test]
fn conflicting_flags_rejected() {
    let out = ivftq(&["build", "--data", "x.fvecs", "--out", "y", "--flat", "--nlists", "8"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn runtime_error_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.fvecs");
    let out = ivftq(&["build", "--data", missing.to_str().unwrap(), "--out", dir.path().join("i").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn design_quantizer_matches_oracle() {
    let out = ivftq(&["design-quantizer", "--bits", "4", "--dim", "128"]);
    assert!(out.status.success());
    let v = json(&out);
    let d = v["quantizer"]["distortion"].as_f64().unwrap();
    let oracle = v["oracle_distortion"].as_f64().unwrap();
    assert!((0.0085..=0.0115).contains(&d));
    assert!((d - oracle).abs() / oracle < 1e-3);
    assert_eq!(v["quantizer"]["centroids"].as_array().unwrap().len(), 16);
}

#[test]
fn verify_subcommands_pass() {
    let t = json(&ivftq(&["verify", "theorem1", "--bits", "4", "--dim", "128", "--trials", "1000"]));
    assert_eq!(t["pass"], true);
    let m = json(&ivftq(&["verify", "marginal", "--dim", "128", "--trials", "5000"]));
    assert_eq!(m["pass"], true);
    let a = json(&ivftq(&["verify", "amplification", "--n", "4000", "--queries", "20"]));
    assert_eq!(a["pass"], true);
}

#[test]
fn index_lifecycle() {
    let dir = tempfile::tempdir().unwrap();
    let (base, queries) = write_dataset(dir.path());
    let idx = dir.path().join("a.ivtq");
    let idx = idx.to_str().unwrap();
    let built = ivftq(&["build", "--data", &base, "--out", idx, "--nlists", "16", "--keep-raw", "--max-rows", "1500"]);
    assert!(built.status.success(), "{}", String::from_utf8_lossy(&built.stderr));
    assert_eq!(json(&built)["n"], 1500);

    let acct = json(&ivftq(&["accounting", "--index", idx]));
    assert_eq!(acct["bits_per_vec"], 4 * 128 + 128 + 4 + 16);

    let grown = dir.path().join("b.ivtq");
    let grown = grown.to_str().unwrap();
    let add = ivftq(&["add", "--index", idx, "--data", &queries, "--out", grown]);
    assert!(add.status.success());
    assert_eq!(json(&add)["n"], 1520);

    let res = json(&ivftq(&["search", "--index", idx, "--queries", &queries, "--k", "5", "--nprobe", "16", "--rerank", "20"]));
    let results = res["results"].as_array().unwrap();
    assert_eq!(results.len(), 20);
    assert_eq!(results[0]["ids"].as_array().unwrap().len(), 5);

    let refreshed = dir.path().join("c.ivtq");
    let r = ivftq(&["refresh", "--index", idx, "--out", refreshed.to_str().unwrap(), "--use-raw"]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(json(&r)["n_reassigned"].as_u64().is_some());

    // The grown index has 20 vectors added since build.
    let gated = dir.path().join("d.ivtq");
    let gated = gated.to_str().unwrap();
    let skip = json(&ivftq(&["refresh", "--index", grown, "--out", gated, "--every", "21"]));
    assert_eq!(skip["skipped"], true);
    assert_eq!(skip["added_since_refresh"], 20);
    assert_eq!(std::fs::read(gated).unwrap(), std::fs::read(grown).unwrap());
    let due = json(&ivftq(&["refresh", "--index", grown, "--out", gated, "--every", "20"]));
    assert_eq!(due["n_reassigned"], 1520);
    let again = json(&ivftq(&["refresh", "--index", gated, "--out", gated, "--every", "1"]));
    assert_eq!(again["added_since_refresh"], 0);

    let ab = json(&ivftq(&[
        "ablate-bits", "--index", idx, "--data", &base, "--queries", &queries, "--position", "msb", "--fraction", "0.5",
        "--nprobe", "16",
    ]));
    assert!(ab["recall_after"].as_f64().unwrap() <= ab["recall_before"].as_f64().unwrap());
}

#[test]
fn search_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (base, queries) = write_dataset(dir.path());
    let mut outputs = Vec::new();
    for name in ["x.ivtq", "y.ivtq"] {
        let p = dir.path().join(name);
        assert!(ivftq(&["build", "--data", &base, "--out", p.to_str().unwrap(), "--nlists", "16", "--seed", "9"]).status.success());
        outputs.push(std::fs::read(&p).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let p = dir.path().join("x.ivtq");
    let a = ivftq(&["search", "--index", p.to_str().unwrap(), "--queries", &queries]);
    let b = ivftq(&["search", "--index", p.to_str().unwrap(), "--queries", &queries]);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn pq_build_and_retrain() {
    let dir = tempfile::tempdir().unwrap();
    let (base, _) = write_dataset(dir.path());
    let p = dir.path().join("p.ivpq");
    let p = p.to_str().unwrap();
    let built = ivftq(&["pq-build", "--data", &base, "--out", p, "--m", "32", "--nlists", "16"]);
    assert!(built.status.success(), "{}", String::from_utf8_lossy(&built.stderr));
    assert_eq!(json(&built)["bits_per_vec"], 256);
    let q = dir.path().join("q.ivpq");
    let re = ivftq(&["pq-retrain", "--index", p, "--out", q.to_str().unwrap(), "--max-train", "1000"]);
    assert!(re.status.success());
    assert_eq!(json(&re)["trained_on"], 1000);
}

#[test]
fn bench_writes_reports_under_out() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("reports");
    let out = ivftq(&["bench", "static", "--preset", "smoke", "--seeds", "7", "--out", out_dir.to_str().unwrap(), "--format", "json,csv,text"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(out_dir.join("static-smoke.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["seed"], 7);
    assert!(out_dir.join("static-smoke.csv").exists());
    assert!(out_dir.join("static-smoke.txt").exists());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn bench_unknown_preset_is_runtime_error() {
    let out = ivftq(&["bench", "stream", "--preset", "nope"]);
    assert_eq!(out.status.code(), Some(2));
}
