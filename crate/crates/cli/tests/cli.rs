use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &str = r#"
batch_size = 8
pretrain_epochs = 2
pretrain_lr = 0.01
adversarial_steps = 12
synthetic_pairs = 160
beam_width = 3
mmi_grid = [0.0, 0.5, 1.0]

[model]
embed_dim = 6
hidden_dim = 6
disc_dim = 6
conv_channels = 4
conv_layers = 1
filter_width = 3
stride = 1
max_len = 4
max_steps = 5
init_scale = 0.3
"#;

fn aimlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aimlab"))
        .args(args)
        .env_remove("AIMLAB_RUN_DIR")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

fn tiny_config(dir: &Path) -> PathBuf {
    let p = dir.join("tiny.toml");
    fs::write(&p, TINY).unwrap();
    p
}

#[test]
fn metrics_on_three_line_fixture_reports_everything() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("h.txt"), "the cat sat\na dog ran far\nhello there\n").unwrap();
    fs::write(d.join("r.txt"), "the cat sat down\na dog ran\nhello friend\n").unwrap();
    let words = ["the", "cat", "sat", "down", "a", "dog", "ran", "far", "hello", "there", "friend"];
    let emb: String = words
        .iter()
        .enumerate()
        .map(|(i, w)| format!("{w} {} {} {}\n", (i as f64 * 0.7).sin(), (i as f64 * 1.3).cos(), 0.1 * i as f64 - 0.4))
        .collect();
    fs::write(d.join("e.vec"), emb).unwrap();
    let out_dir = d.join("m");
    let out = aimlab(&[
        "--run-dir",
        s(&out_dir),
        "metrics",
        "--hyp",
        s(&d.join("h.txt")),
        "--ref",
        s(&d.join("r.txt")),
        "--emb",
        s(&d.join("e.vec")),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(out_dir.join("report.json"));
    for key in ["bleu", "rouge_l", "greedy", "average", "extreme", "dist_1", "dist_2", "ent_4"] {
        let v = report[key].as_f64().unwrap_or_else(|| panic!("{key} missing"));
        assert!(v.is_finite(), "{key} = {v}");
    }
    assert_eq!(report["hypotheses"], 3);
    let csv = fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    let manifest = json(out_dir.join("manifest.json"));
    assert_eq!(manifest["status"], "ok");
    assert!(manifest["artifacts"].as_array().unwrap().iter().all(|a| !Path::new(a.as_str().unwrap()).is_absolute()));
}

#[test]
fn missing_flag_is_named_with_exit_1() {
    let out = aimlab(&["metrics", "--hyp", "h.txt"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--ref"));
}

#[test]
fn unknown_subcommand_prints_usage_with_exit_1() {
    let out = aimlab(&["tune"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn bad_config_is_a_user_error_naming_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[objective]\nlambda = -1.0\n").unwrap();
    let out = aimlab(&["--config", s(&cfg), "--run-dir", s(&tmp.path().join("r")), "synth"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("objective.lambda"));
}

#[test]
fn missing_inputs_are_user_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let rd = tmp.path().join("r");
    let out = aimlab(&["--run-dir", s(&rd), "eval", "--checkpoint", "/nonexistent/ck.bin"]);
    assert_eq!(out.status.code(), Some(1));
    let garbage = tmp.path().join("garbage.bin");
    fs::write(&garbage, b"not a checkpoint").unwrap();
    let out = aimlab(&["--run-dir", s(&rd), "eval", "--checkpoint", s(&garbage)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint"));
}

#[test]
fn run_dir_env_sets_the_output_root() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_aimlab"))
        .args(["--seed", "5", "synth", "--pairs", "20"])
        .env("AIMLAB_RUN_DIR", tmp.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let dir = tmp.path().join("synth-seed5");
    assert_eq!(fs::read_to_string(dir.join("corpus.tsv")).unwrap().lines().count(), 20);
    assert_eq!(json(dir.join("manifest.json"))["seed"], 5);
}

fn run_ok(args: &[&str]) {
    let out = aimlab(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn files_except_manifest(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "manifest.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn pipeline_runs_end_to_end_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = tiny_config(d);
    let cfg = s(&cfg);
    let pre = d.join("pre");
    run_ok(&["--config", cfg, "--seed", "3", "--run-dir", s(&pre), "pretrain"]);
    let steps = fs::read_to_string(pre.join("steps.csv")).unwrap().lines().count() - 1;
    let svg = fs::read_to_string(pre.join("curves.svg")).unwrap();
    assert!(svg.contains(&format!("data-points=\"{steps}\"")), "curve should have {steps} points");

    let train = d.join("train");
    let ck = pre.join("checkpoint.bin");
    run_ok(&["--config", cfg, "--seed", "3", "--run-dir", s(&train), "train", "--init", s(&ck), "--mode", "daim"]);
    let trained = train.join("checkpoint.bin");
    let eval = d.join("eval");
    run_ok(&["--run-dir", s(&eval), "eval", "--checkpoint", s(&trained)]);
    let report = json(eval.join("report.json"));
    assert!(report["source_specificity"].as_f64().is_some());
    assert!(eval.join("lengths.svg").exists());

    let rr = d.join("rr");
    run_ok(&["--run-dir", s(&rr), "rerank", "--checkpoint", s(&ck)]);
    assert_eq!(fs::read_to_string(rr.join("mmi_grid.csv")).unwrap().lines().count(), 4);
    let w = json(rr.join("report.json"))["mmi_weight"].as_f64().unwrap();
    assert!([0.0, 0.5, 1.0].contains(&w));

    let input = d.join("in.txt");
    fs::write(&input, "about s1\nabout s2\nsomething unseen entirely\n").unwrap();
    let gen = d.join("gen");
    run_ok(&["--run-dir", s(&gen), "generate", "--checkpoint", s(&trained), "--input", s(&input)]);
    assert_eq!(fs::read_to_string(gen.join("generations.tsv")).unwrap().lines().count(), 3);

    for dir in [&pre, &train, &eval, &rr, &gen] {
        let m = json(dir.join("manifest.json"));
        for a in m["artifacts"].as_array().unwrap() {
            let rel = a.as_str().unwrap();
            assert!(!Path::new(rel).is_absolute());
            assert!(dir.join(rel).exists(), "{rel} listed but missing in {}", dir.display());
        }
    }

    let again = d.join("pre2");
    run_ok(&["--config", cfg, "--seed", "3", "--run-dir", s(&again), "pretrain"]);
    assert_eq!(files_except_manifest(&pre), files_except_manifest(&again));
    let other = d.join("pre3");
    run_ok(&["--config", cfg, "--seed", "4", "--run-dir", s(&other), "pretrain"]);
    assert_ne!(fs::read(ck).unwrap(), fs::read(other.join("checkpoint.bin")).unwrap());
}

#[test]
fn resumed_pretraining_matches_an_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = tiny_config(d);
    let cfg = s(&cfg);
    let full = d.join("full");
    run_ok(&["--config", cfg, "--run-dir", s(&full), "pretrain"]);
    let half = d.join("half");
    run_ok(&["--config", cfg, "--run-dir", s(&half), "pretrain", "--stop-after", "7"]);
    let rest = d.join("rest");
    run_ok(&["--config", cfg, "--run-dir", s(&rest), "pretrain", "--resume", s(&half.join("checkpoint.bin"))]);
    assert_eq!(fs::read(full.join("checkpoint.bin")).unwrap(), fs::read(rest.join("checkpoint.bin")).unwrap());
}

#[test]
fn quick_selftest_checks_pass() {
    let tmp = tempfile::tempdir().unwrap();
    let rd = tmp.path().join("st");
    let out = aimlab(&["--run-dir", s(&rd), "selftest", "--only", "2,3,6,7"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.matches("PASS").count(), 4, "{stdout}");
    let reports = json(rd.join("selftest.json"));
    assert_eq!(reports.as_array().unwrap().len(), 4);
    let out = aimlab(&["--run-dir", s(&rd), "selftest", "--only", "12"]);
    assert_eq!(out.status.code(), Some(1));
}
