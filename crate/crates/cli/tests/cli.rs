use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_minestop"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn edited_table1(dir: &Path, from: &str, to: &str) -> PathBuf {
    let text = fs::read_to_string(fixture("table1.toml")).unwrap();
    assert!(text.contains(from));
    let path = dir.join("edited.toml");
    fs::write(&path, text.replacen(from, to, 1)).unwrap();
    path
}

#[test]
fn validate_accepts_table1() {
    let out = run(&["validate", fixture("table1.toml").to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn validate_rejects_negative_entry() {
    let dir = tempfile::tempdir().unwrap();
    let path = edited_table1(dir.path(), "transition = [0.5, 0.5, 0.0", "transition = [1.5, -0.5, 0.0");
    let out = run(&["validate", path.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
}

#[test]
fn validate_lists_failing_minors() {
    let dir = tempfile::tempdir().unwrap();
    // swap the first row of the observation matrix with a row that breaks the ordering
    let text = fs::read_to_string(fixture("table1.toml")).unwrap();
    let obs_line = text.lines().find(|l| l.starts_with("observation =")).unwrap();
    let bad = "observation = [0.05, 0.05, 0.1, 0.2, 0.6, 0.15062985794693112, 0.23050120611096223, 0.29107477887965694, 0.2680246582685607, 0.05976949879388904, 0.6, 0.2, 0.1, 0.05, 0.05]";
    let path = dir.path().join("bad.toml");
    fs::write(&path, text.replace(obs_line, bad)).unwrap();
    let out = run(&["validate", path.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("FAIL  observation_tp2"), "{stdout}");
    assert!(stdout.contains("rows ("), "{stdout}");
}

#[test]
fn validate_unreadable_file_is_an_io_error() {
    let out = run(&["validate", "/definitely/not/here.toml"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(code(&run(&["frobnicate"])), 2);
}

fn compare_into(dir: &Path, policies: &str) -> String {
    let out = run(&[
        "compare",
        fixture("table1.toml").to_str().unwrap(),
        "--policies",
        policies,
        "--rollouts",
        "3000",
        "--seed",
        "9",
        "--iterations",
        "3",
        "--eval-rollouts",
        "50",
        "--grid",
        "10",
        "-o",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    fs::read_to_string(dir.join("compare.tsv")).unwrap()
}

#[test]
fn compare_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = compare_into(&dir.path().join("a"), "vi,linear,rl,random,first-l");
    let b = compare_into(&dir.path().join("b"), "vi,linear,rl,random,first-l");
    assert_eq!(a, b);
    assert_eq!(a.lines().count(), 6);
}

#[test]
fn compare_single_policy_gives_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let tsv = compare_into(dir.path(), "first-l");
    let rows: Vec<&str> = tsv.lines().skip(1).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("first-l\t"));
}

#[test]
fn solve_exports_one_row_per_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "solve",
        fixture("table1.toml").to_str().unwrap(),
        "--grid",
        "12",
        "-o",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let tsv = fs::read_to_string(dir.path().join("value_table.tsv")).unwrap();
    // (12+1)(12+2)/2 lattice points on the 2-simplex, plus the header
    assert_eq!(tsv.lines().count(), 91 + 1);
    assert!(fs::read_to_string(dir.path().join("structure.txt")).unwrap().contains("monotone"));
}

#[test]
fn existing_outputs_need_force() {
    let dir = tempfile::tempdir().unwrap();
    let args = |force: bool| {
        let mut a = vec![
            "optimize-stops".to_string(),
            fixture("table1.toml").display().to_string(),
            "--grid".into(),
            "6".into(),
            "--lmax".into(),
            "3".into(),
            "-o".into(),
            dir.path().display().to_string(),
        ];
        if force {
            a.push("--force".into());
        }
        bin().args(a).output().unwrap()
    };
    assert_eq!(code(&args(false)), 0);
    let first = fs::read_to_string(dir.path().join("stops.tsv")).unwrap();
    assert_eq!(code(&args(false)), 2);
    assert_eq!(code(&args(true)), 0);
    assert_eq!(fs::read_to_string(dir.path().join("stops.tsv")).unwrap(), first);
    let meta = fs::read_to_string(dir.path().join("metadata.toml")).unwrap();
    assert!(meta.contains("command = \"optimize-stops\""));
}

#[test]
fn estimate_then_validate_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "estimate",
        fixture("hashrate_2022_apr_aug.csv").to_str().unwrap(),
        "-o",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let model = dir.path().join("model.toml");
    let out = run(&["validate", model.to_str().unwrap()]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("PASS  observation_tp2"), "{stdout}");
    assert!(stdout.contains("PASS  transition_stochastic"), "{stdout}");
}

#[test]
fn train_then_simulate_linear() {
    let dir = tempfile::tempdir().unwrap();
    let train_dir = dir.path().join("train");
    let out = run(&[
        "train",
        fixture("table1.toml").to_str().unwrap(),
        "--iterations",
        "4",
        "--eval-rollouts",
        "40",
        "--seed",
        "5",
        "-o",
        train_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let trace = fs::read_to_string(train_dir.join("trace.tsv")).unwrap();
    assert_eq!(trace.lines().count(), 5);
    let sim_dir = dir.path().join("sim");
    let out = run(&[
        "simulate",
        fixture("table1.toml").to_str().unwrap(),
        "--policy",
        "linear",
        "--policy-file",
        train_dir.join("policy.toml").to_str().unwrap(),
        "--rollouts",
        "3",
        "-o",
        sim_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rollouts = fs::read_to_string(sim_dir.join("rollouts.tsv")).unwrap();
    assert_eq!(rollouts.lines().count(), 4);
}
