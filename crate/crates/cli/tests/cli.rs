use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_flowsamp"));
    c.env("SOURCE_DATE_EPOCH", "1700000000");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let o = run(dir, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn schema() -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schema/results.schema.json");
    let s: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&s).unwrap()
}

fn results(path: &Path) -> Value {
    let v: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    let errs: Vec<String> = schema().iter_errors(&v).map(|e| format!("{} at {}", e, e.instance_path)).collect();
    assert!(errs.is_empty(), "{}: {errs:?}", path.display());
    v
}

fn nums(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

fn setup() -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("d.csv");
    fs::write(&d, "size,theta\n1,0.5\n2,0.3\n3,0.2\n").unwrap();
    (dir, d)
}

#[test]
fn fisher_writes_crlb() {
    let (dir, _) = setup();
    ok(dir.path(), &["fisher", "--dist", "d.csv", "--method", "fs", "--pf", "0.5", "--out", "r.json", "--csv", "r.csv"]);
    let v = results(&dir.path().join("r.json"));
    let c = nums(&v["payload"]["crlb_diag"]);
    // FS: θ(1−θ)/p_f
    for (got, t) in c.iter().zip([0.5, 0.3, 0.2]) {
        assert!((got - t * (1.0 - t) / 0.5).abs() < 1e-12);
    }
    assert_eq!(v["manifest"]["command"], "fisher");
    assert_eq!(v["manifest"]["timestamp"], "2023-11-14T22:13:20Z");
    assert!(v["manifest"]["input_digests"]["d.csv"].is_string());
    let csv = fs::read_to_string(dir.path().join("r.csv")).unwrap();
    assert!(csv.starts_with("k,sqrt_crlb\n1,"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn optimize_profiles() {
    let dir = tempfile::tempdir().unwrap();
    for (c, t, pf, pp) in [("10", "100000", 0.1, 0.08), ("40", "10000", 0.01, 0.02)] {
        let o = ok(
            dir.path(),
            &["optimize", "--capacity-gbps", c, "--tau-ns", "200", "--tmax", t, "--active-flows", "1000000", "--out", "o.json"],
        );
        assert!(o.stdout.is_empty());
        let v = results(&dir.path().join("o.json"));
        assert_eq!(v["payload"]["pf_hat"].as_f64(), Some(pf));
        assert_eq!(v["payload"]["pp_hat"].as_f64(), Some(pp));
        assert!(v["payload"]["esr"].is_null());
    }
    ok(
        dir.path(),
        &[
            "optimize", "--capacity-gbps", "40", "--tau-ns", "200", "--tmax", "10000", "--active-flows", "1000000",
            "--dist", "texp", "--w", "30", "--mean", "4", "--scaling", "--out", "s.json",
        ],
    );
    let v = results(&dir.path().join("s.json"));
    assert_eq!(nums(&v["payload"]["crlb_diag_at_corner"]).len(), 30);
    assert!(v["payload"]["scaling"]["t_max_ok"].as_bool().unwrap());
}

#[test]
fn usage_errors_exit_2() {
    let (dir, _) = setup();
    for args in [
        vec!["fisher", "--dist", "d.csv", "--method", "fs", "--pf", "0.5", "--bogus"],
        vec!["frobnicate"],
        vec!["simulate", "--dist", "d.csv", "--method", "fs", "--pf", "0.5", "--n", "10"],
        vec!["compare", "--dist", "dirichlet", "--w", "5", "--norm", "esr", "--p", "0.1"],
        vec!["compare", "--dist", "d.csv", "--norm", "esr", "--p", "0.1", "--methods", "ps,ds"],
        vec!["compare", "--dist", "d.csv", "--norm", "xyz", "--p", "0.1"],
        vec!["fisher", "--method", "fs", "--pf", "0.5"],
    ] {
        let o = run(dir.path(), &args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn domain_errors_exit_1_with_name() {
    let (dir, _) = setup();
    fs::write(dir.path().join("z.csv"), "size,count\n1,10\n2,0\n3,4\n").unwrap();
    fs::write(dir.path().join("c.csv"), "j,count\n1,5\n2,3\n").unwrap();
    for (args, name) in [
        (vec!["fisher", "--dist", "z.csv", "--method", "fs", "--pf", "0.5"], "ZeroMass"),
        (vec!["normalize", "--dist", "d.csv", "--method", "ds", "--p", "0.9", "--norm", "esr", "--ds-pp", "0.01"], "Infeasible"),
        (vec!["fisher", "--dist", "texp", "--w", "400", "--rate", "0.01", "--method", "ps", "--pp", "0.001"], "Underflow"),
        (vec!["estimate", "--counts", "c.csv", "--method", "fs", "--pf", "0.5"], "ParseError"),
        (vec!["fisher", "--dist", "d.csv", "--method", "fs", "--pf", "1.5"], "InvalidParam"),
    ] {
        let o = run(dir.path(), &args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains(name), "{args:?}: {err}");
    }
    // smoothing rescues the zero bin
    ok(dir.path(), &["fisher", "--dist", "z.csv", "--smooth", "0.5", "--method", "fs", "--pf", "0.5"]);
}

#[test]
fn identical_runs_are_byte_identical() {
    let (dir, _) = setup();
    let args = |tag: &str| {
        vec![
            "simulate".to_string(), "--dist".into(), "d.csv".into(), "--method".into(), "ds".into(), "--pf".into(),
            "0.3".into(), "--pp".into(), "0.5".into(), "--n".into(), "5000".into(), "--replicates".into(), "4".into(),
            "--seed".into(), "11".into(), "--out".into(), format!("s{tag}.csv"), "--report".into(), "r.json".into(),
        ]
    };
    let a: Vec<String> = args("a");
    ok(dir.path(), &a.iter().map(String::as_str).collect::<Vec<_>>());
    let ra = fs::read(dir.path().join("r.json")).unwrap();
    let b: Vec<String> = args("b");
    ok(dir.path(), &b.iter().map(String::as_str).collect::<Vec<_>>());
    let rb = fs::read(dir.path().join("r.json")).unwrap();
    assert_eq!(fs::read(dir.path().join("sa.csv")).unwrap(), fs::read(dir.path().join("sb.csv")).unwrap());
    // the manifests differ only in the csv path
    let (va, vb): (Value, Value) = (serde_json::from_slice(&ra).unwrap(), serde_json::from_slice(&rb).unwrap());
    assert_eq!(va["payload"], vb["payload"]);
    results(&dir.path().join("r.json"));

    let fisher = ["fisher", "--dist", "dirichlet", "--w", "8", "--seed", "3", "--method", "sh", "--pp", "0.2"];
    assert_eq!(ok(dir.path(), &fisher).stdout, ok(dir.path(), &fisher).stdout);
}

#[test]
fn simulate_then_estimate() {
    let (dir, _) = setup();
    ok(
        dir.path(),
        &["simulate", "--dist", "d.csv", "--method", "fs", "--pf", "0.5", "--n", "200000", "--seed", "5", "--out", "s.csv"],
    );
    let s = fs::read_to_string(dir.path().join("s.csv")).unwrap();
    let mut lines = s.lines();
    assert_eq!(lines.next(), Some("replicate,j,count"));
    let counts: Vec<String> = lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            format!("{},{}", f[1], f[2])
        })
        .collect();
    assert_eq!(counts.len(), 4);
    fs::write(dir.path().join("c.csv"), format!("j,count\n{}\n", counts.join("\n"))).unwrap();
    for est in ["unbiased", "mle"] {
        ok(
            dir.path(),
            &["estimate", "--counts", "c.csv", "--method", "fs", "--pf", "0.5", "--estimator", est, "--project-simplex", "--out", "e.json", "--csv", "e.csv"],
        );
        let v = results(&dir.path().join("e.json"));
        let th = nums(&v["payload"]["theta_hat"]);
        for (got, t) in th.iter().zip([0.5, 0.3, 0.2]) {
            assert!((got - t).abs() < 0.01, "{est}: {th:?}");
        }
        if est == "mle" {
            assert!((v["payload"]["sum"].as_f64().unwrap() - 1.0).abs() < 1e-12);
        }
        let pr = nums(&v["payload"]["theta_projected_biased"]);
        assert!(pr.iter().all(|&x| x >= 0.0) && (pr.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(fs::read_to_string(dir.path().join("e.csv")).unwrap().starts_with("k,theta_hat,theta_projected\n"));
    }
    let o = run(dir.path(), &["estimate", "--counts", "c.csv", "--method", "fs", "--pf", "0.5", "--n", "7"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn simulate_from_flow_records() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("f.txt"), "1\n1\n2\n3\n3\n3\n9\n").unwrap();
    let o = ok(dir.path(), &["simulate", "--flows", "f.txt", "--w", "3", "--method", "fs", "--pf", "1", "--seed", "1"]);
    assert_eq!(String::from_utf8(o.stdout).unwrap(), "replicate,j,count\n0,0,0\n0,1,2\n0,2,1\n0,3,3\n");
}

#[test]
fn compare_csv_and_json() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &[
            "compare", "--dist", "texp", "--w", "12", "--mean", "3", "--norm", "esr", "--p", "0.05", "--methods",
            "ps,ps+syn,fs,sh", "--ds-pp", "0.2", "--ds-pp", "0.6", "--out", "c.json", "--csv", "c.csv",
        ],
    );
    let v = results(&dir.path().join("c.json"));
    let entries = v["payload"]["entries"].as_array().unwrap();
    assert_eq!(entries.len() + v["payload"]["dropped"].as_array().unwrap().len(), 6);
    for e in entries {
        assert!((e["rate"].as_f64().unwrap() - 0.05).abs() < 1e-8);
    }
    let csv = fs::read_to_string(dir.path().join("c.csv")).unwrap();
    assert!(csv.starts_with("k,method,sqrt_crlb\n"));
    assert_eq!(csv.lines().count(), 1 + 12 * entries.len());
}

#[test]
fn matrix_dump() {
    let dir = tempfile::tempdir().unwrap();
    let o = ok(dir.path(), &["matrix", "--method", "ds", "--pf", "0.4", "--pp", "0.3", "--w", "6"]);
    let rows: Vec<Vec<f64>> = String::from_utf8(o.stdout)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 7);
    for k in 0..6 {
        let s: f64 = rows.iter().map(|r| r[k]).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
    // B₀ row first: the flow is missed when its SYN is
    assert!((rows[0][0] - 0.6).abs() < 1e-15);
}

#[test]
fn normalize_evaluate_seqgain_validate() {
    let (dir, _) = setup();
    ok(dir.path(), &["normalize", "--dist", "d.csv", "--method", "ds", "--p", "0.1", "--norm", "esr", "--ds-pp", "0.5", "--out", "n.json"]);
    let v = results(&dir.path().join("n.json"));
    assert!((v["payload"]["rate"].as_f64().unwrap() - 0.1).abs() < 1e-12);
    ok(
        dir.path(),
        &["evaluate", "--dist", "d.csv", "--method", "fs", "--pf", "0.5", "--n", "2000", "--replicates", "40", "--seed", "2", "--out", "v.json", "--csv", "v.csv"],
    );
    results(&dir.path().join("v.json"));
    ok(dir.path(), &["seqgain", "--method", "ps+syn+seq", "--pp", "0.1", "--k", "1,2,100", "--alpha", "0.9", "--out", "g.json"]);
    let v = results(&dir.path().join("g.json"));
    let rows = v["payload"]["rows"].as_array().unwrap();
    assert_eq!(rows[0]["r"].as_f64(), Some(1.0));
    assert!((rows[2]["var_inferred"].as_f64().unwrap() - 754.289).abs() < 1e-2);
}

#[test]
fn atomic_output_leaves_no_temp_files() {
    let (dir, _) = setup();
    let out = dir.path().join("sub");
    fs::create_dir(&out).unwrap();
    ok(dir.path(), &["fisher", "--dist", "d.csv", "--method", "sh", "--pp", "0.2", "--out", "sub/r.json"]);
    let names: Vec<_> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names, vec![std::ffi::OsString::from("r.json")]);
}
