use std::fs;
use std::path::Path;

use condflow::cli::{main_with_args, EXIT_FAIL, EXIT_PASS, EXIT_USAGE};

fn run(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("condflow").chain(args.iter().copied()))
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("run.toml");
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

const SMALL_ITO: &str = "experiment = \"verify-ito\"\nseed = 4\nn = 32\nparticles = 32\npaths = 4\nfunctional = \"cos-mean\"\n";

#[test]
fn verify_ito_writes_report_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL_ITO);
    let out = tmp.path().join("out");
    assert_eq!(run(&["verify-ito", "--config", &cfg, "--out", out.to_str().unwrap()]), EXIT_PASS);
    let names: Vec<String> = files(&out).into_iter().map(|f| f.0).collect();
    assert_eq!(names, ["manifest.json", "report.json", "terms.csv"]);
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["experiment"], "verify-ito");
    assert_eq!(manifest["config"]["seed"], 4);
    assert_eq!(manifest["pass"], true);
    let csv = fs::read_to_string(out.join("terms.csv")).unwrap();
    assert!(csv.lines().count() == 5 && csv.ends_with('\n'));
}

#[test]
fn reruns_are_byte_identical_and_thread_independent() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL_ITO);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(run(&["verify-ito", "--config", &cfg, "--out", a.to_str().unwrap()]), EXIT_PASS);
    assert_eq!(run(&["verify-ito", "--config", &cfg, "--out", b.to_str().unwrap(), "--threads", "1"]), EXIT_PASS);
    assert_eq!(files(&a), files(&b));
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL_ITO);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run(&["verify-ito", "--config", &cfg, "--out", a.to_str().unwrap()]);
    run(&["verify-ito", "--config", &cfg, "--out", b.to_str().unwrap(), "--seed", "5"]);
    assert_ne!(fs::read(a.join("terms.csv")).unwrap(), fs::read(b.join("terms.csv")).unwrap());
}

#[test]
fn config_errors_exit_2_and_write_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = out.to_str().unwrap();
    let bad_key = write_config(tmp.path(), "seed = 1\nparticle = 3\n");
    assert_eq!(run(&["verify-ito", "--config", &bad_key, "--out", o]), EXIT_USAGE);
    let no_seed = write_config(tmp.path(), "n = 8\n");
    assert_eq!(run(&["verify-ito", "--config", &no_seed, "--out", o]), EXIT_USAGE);
    let zero = write_config(tmp.path(), "seed = 1\npaths = 0\n");
    assert_eq!(run(&["verify-ito", "--config", &zero, "--out", o]), EXIT_USAGE);
    assert_eq!(run(&["no-such-command"]), EXIT_USAGE);
    assert_eq!(run(&["verify-ito", "--seed", "1", "--threads", "0", "--out", o]), EXIT_USAGE);
    assert!(!out.exists());
}

#[test]
fn tolerance_failure_exits_1_and_keeps_files() {
    let tmp = tempfile::tempdir().unwrap();
    // a perturbed value function violates the HJB equation
    let cfg = write_config(tmp.path(), "seed = 1\n[hjb]\nperturbation = 0.1\nmc_nodes = []\nrefine = 4\n");
    let out = tmp.path().join("out");
    assert_eq!(run(&["hjb-lq", "--config", &cfg, "--out", out.to_str().unwrap()]), EXIT_FAIL);
    let manifest = fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"pass\": false"));
    assert!(out.join("residuals.csv").exists() && out.join("report.json").exists());
}

#[test]
fn deriv_check_and_lemma_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("fd");
    assert_eq!(run(&["deriv-check", "--out", out.to_str().unwrap()]), EXIT_PASS);
    let csv = fs::read_to_string(out.join("fd.csv")).unwrap();
    assert!(csv.starts_with("functional,derivative,eps,error,observed_order\n"));
    let cfg = write_config(tmp.path(), "seed = 3\n[lemma]\nn_list = [64, 256]\nseeds = 50\nweight = \"time\"\n");
    let out = tmp.path().join("qv");
    run(&["lemma-qv", "--config", &cfg, "--out", out.to_str().unwrap()]);
    let csv = fs::read_to_string(out.join("convergence.csv")).unwrap();
    assert!(csv.starts_with("n,mean_abs_error,stderr,ratio_flag\n"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn designed_instances_run_from_the_command_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "seed = 2\nn = 32\nparticles = 8\npaths = 20\n[coefficients]\nsigma = 1.0\nsigma0 = 1.0\n");
    for cmd in ["verify-wentzell", "verify-brownian", "verify-factor"] {
        let out = tmp.path().join(cmd);
        let code = run(&[cmd, "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(code == EXIT_PASS || code == EXIT_FAIL, "{cmd}");
        let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
        assert!(report["ablation"].is_object(), "{cmd}");
    }
}

#[test]
fn sweep_and_dpp_configs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "seed = 6\n[sweep]\ngrid = [[8, 16, 4], [32, 16, 4]]\n");
    let out = tmp.path().join("sweep");
    run(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(fs::read_to_string(out.join("sweep.csv")).unwrap().lines().count(), 3);
    let cfg = write_config(tmp.path(), "seed = 6\n[dpp]\ncontrol = \"constant\"\nparticles = 100\npaths = 16\n");
    let out = tmp.path().join("dpp");
    assert_eq!(run(&["dpp-check", "--config", &cfg, "--out", out.to_str().unwrap()]), EXIT_PASS);
}
