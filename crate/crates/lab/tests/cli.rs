//! Exit codes, file contracts and the manifest, through the binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_signadam"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("signadam-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn exec(args: &[&str], config: Option<&Path>, out: &Path) -> Output {
    let mut c = bin();
    c.args(args).arg("--out-dir").arg(out);
    if let Some(p) = config {
        c.arg("--config").arg(p);
    }
    c.output().unwrap()
}

const SMALL_RUN: &str = r#"
name = "small"
seed = 11
horizon = 300
dump_every = 50

[problem]
kind = "quadratic"
d = 32
sigma0 = 0.5

[optimizer]
lr = 0.01
beta1 = 0.9
beta2 = 0.99
"#;

#[test]
fn run_writes_one_row_per_step() {
    let dir = scratch("run");
    let cfg = write(&dir, "c.toml", SMALL_RUN);
    let out = dir.join("out");
    let o = exec(&["run"], Some(&cfg), &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "step,loss,grad_l1,grad_l2,update_l2,u_min,u_mean,u_max");
    assert_eq!(lines.count(), 300);
    let dumps = fs::read_to_string(out.join("u_dump.csv")).unwrap();
    assert_eq!(dumps.lines().count(), 1 + 6 * 32);

    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("run-manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "run");
    assert_eq!(manifest["seed"], 11);
    assert!(manifest["config_hash"].as_str().unwrap().starts_with("sha256:"));
    assert_eq!(manifest["outputs"], serde_json::json!(["report.json", "trajectory.csv", "u_dump.csv"]));
}

#[test]
fn seed_flag_overrides_config() {
    let dir = scratch("seed");
    let cfg = write(&dir, "c.toml", SMALL_RUN);
    let a = dir.join("a");
    let b = dir.join("b");
    exec(&["run", "--seed", "12"], Some(&cfg), &a);
    exec(&["run"], Some(&cfg), &b);
    let ta = fs::read(a.join("trajectory.csv")).unwrap();
    let tb = fs::read(b.join("trajectory.csv")).unwrap();
    assert_ne!(ta, tb);
    let m: serde_json::Value = serde_json::from_slice(&fs::read(a.join("run-manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 12);
}

#[test]
fn check_conditions_reads_written_files() {
    let dir = scratch("conditions");
    let cfg = write(&dir, "c.toml", SMALL_RUN);
    let run_out = dir.join("run");
    assert_eq!(exec(&["run"], Some(&cfg), &run_out).status.code(), Some(0));
    let t = run_out.join("trajectory.csv");
    let u = run_out.join("u_dump.csv");
    let o = exec(
        &["check-conditions", "--trajectory", t.to_str().unwrap(), "--u-dump", u.to_str().unwrap()],
        Some(&cfg),
        &dir.join("check"),
    );
    assert!(matches!(o.status.code(), Some(0 | 1)), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("check/report.json")).unwrap()).unwrap();
    assert_eq!(report["steps"], 300);
    assert_eq!(report["condition2"]["steps_tested"], 6);
    assert_eq!(report["condition2"]["group_size"], 16);
}

#[test]
fn short_rate_grid_is_a_config_error() {
    let dir = scratch("rate");
    let cfg = write(
        &dir,
        "c.toml",
        "t_grid = [1024, 4096]\n[problem]\nkind = \"quadratic\"\nd = 4\n[schedule]\nmode = \"general_case1\"\nc2 = 1.0\nc3 = 1.0\n",
    );
    let o = exec(&["rate"], Some(&cfg), &dir.join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("grid"));
}

#[test]
fn bad_inputs_exit_with_two() {
    let dir = scratch("bad");
    let out = dir.join("out");
    assert_eq!(exec(&["frobnicate"], None, &out).status.code(), Some(2));
    assert_eq!(exec(&["run"], None, &out).status.code(), Some(2));
    assert_eq!(exec(&["run"], Some(&dir.join("missing.toml")), &out).status.code(), Some(2));
    let typo = write(&dir, "typo.toml", "horizn = 10\n[problem]\nkind = \"quadratic\"\nd = 2\n");
    assert_eq!(exec(&["run"], Some(&typo), &out).status.code(), Some(2));
    let beta = write(&dir, "beta.toml", "[problem]\nkind = \"quadratic\"\nd = 2\n[optimizer]\nbeta1 = 1.5\n");
    let o = exec(&["run"], Some(&beta), &out);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let audit = write(&dir, "audit.toml", "seeds = [0, 1]\n");
    assert_eq!(exec(&["audit-bound"], Some(&audit), &out).status.code(), Some(2));
}

#[test]
fn failed_check_exits_with_one() {
    let dir = scratch("fail");
    // The slope band excludes anything a converging run can produce.
    let cfg = write(
        &dir,
        "c.toml",
        r#"
seeds = [0, 1, 2, 3, 4, 5, 6, 7]
t_grid = [64, 128, 256, 512, 1024, 4096]
[problem]
kind = "quadratic"
d = 4
[schedule]
mode = "general_case1"
c2 = 1.0
c3 = 1.0
[rate]
expected_slope = [0.5, 1.0]
"#,
    );
    let o = exec(&["rate"], Some(&cfg), &dir.join("out"));
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL slope"));
    let m: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("out/run-manifest.json")).unwrap()).unwrap();
    assert_eq!(m["passed"], false);
}

#[test]
fn verify_lemmas_repeats_across_thread_counts() {
    let dir = scratch("lemmas");
    let small = write(
        &dir,
        "c.toml",
        r#"
[lemmas]
form_problems = 5
form_steps = 100
lemma2_draws = 20000
lemma3_samples = 10000
lemma4_cases = 500
ks_group_size = 500
ks_trials = 200
noise_samples = 20000
smoothness_pairs = 500
"#,
    );
    let a = exec(&["verify-lemmas", "--threads", "1"], Some(&small), &dir.join("a"));
    let b = exec(&["verify-lemmas", "--threads", "3"], Some(&small), &dir.join("b"));
    assert_eq!(a.status.code(), b.status.code());
    assert_eq!(a.stdout, b.stdout);
    for f in ["report.json", "run-manifest.json"] {
        assert_eq!(fs::read(dir.join("a").join(f)).unwrap(), fs::read(dir.join("b").join(f)).unwrap(), "{f}");
    }
    let text = String::from_utf8_lossy(&a.stdout);
    assert_eq!(text.lines().count(), 9, "{text}");
}
