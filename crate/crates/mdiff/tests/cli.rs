//! Black-box tests of the command-line binary: flag handling, exit codes,
//! file formats, and rerun determinism.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mdiff"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn mdiff")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_dir_sorted(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    v.sort();
    v
}

fn assert_dirs_identical(a: &Path, b: &Path) {
    let fa = read_dir_sorted(a);
    let fb = read_dir_sorted(b);
    assert_eq!(fa.len(), fb.len(), "{a:?} vs {b:?} file counts");
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.file_name(), y.file_name());
        assert_eq!(
            fs::read(x).unwrap(),
            fs::read(y).unwrap(),
            "{x:?} differs from {y:?}"
        );
    }
}

#[test]
fn help_prints_usage_and_exits_zero() {
    let o = run(&["help"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("usage: mdiff"));
}

#[test]
fn unknown_command_is_a_usage_error() {
    let o = run(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("usage error"));
}

#[test]
fn missing_required_flag_is_a_usage_error() {
    let o = run(&["synth-data"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--out"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = run(&["synth-data", "--out", "/tmp/x", "--bogus", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--bogus"));
}

#[test]
fn synth_data_writes_manifest_consistent_files_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let d1 = tmp.path().join("a");
    let d2 = tmp.path().join("b");
    for d in [&d1, &d2] {
        let o = run(&[
            "synth-data",
            "--out",
            d.to_str().unwrap(),
            "--sequences",
            "3",
            "--frames",
            "12",
            "--joints",
            "4",
            "--seed",
            "5",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains("wrote 3 sequences"));
    }
    assert_dirs_identical(&d1, &d2);

    let manifest = fs::read_to_string(d1.join("manifest.csv")).unwrap();
    let mut lines = manifest.lines();
    assert_eq!(lines.next(), Some("file,joints,frames,fps"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 3);
    for row in rows {
        let cols: Vec<&str> = row.split(',').collect();
        let seq = mdiff::motion::MotionSequence::load(&d1.join(cols[0])).unwrap();
        assert_eq!(seq.num_joints().to_string(), cols[1]);
        assert_eq!(seq.num_frames().to_string(), cols[2]);
        assert_eq!(seq.fps.to_string(), cols[3]);
    }
}

fn write_tiny_config(path: &Path, data_dir: &Path) {
    let text = format!(
        r#"
[data]
dir = "{}"
t_obs = 4
f_fut = 6
stride = 8

[schedule]
k_max = 5
beta_1 = 1e-4
beta_k = 0.05

[network]
num_joints = 3
obs_frames = 4
fut_frames = 6
joint_dim = 4
d_model = 8
n_heads = 2
n_spatial_layers = 0
n_temporal_layers = 0
d_cond = 8
use_spatial_transformer = false

[train]
lr = 0.01
epochs = 2
batch_size = 4
decay_start = 2
seed = 3

[refine]
n_layers = 2
hidden = 8
n_samples = 2
epochs = 1
lr = 0.01

[eval]
n_samples = 2
"#,
        data_dir.display()
    );
    fs::write(path, text).unwrap();
}

/// One temp workspace shared by the pipeline tests below; building it once
/// keeps the suite fast.
fn trained_pipeline() -> &'static (tempfile::TempDir, PathBuf, PathBuf, PathBuf) {
    use std::sync::OnceLock;
    static PIPE: OnceLock<(tempfile::TempDir, PathBuf, PathBuf, PathBuf)> = OnceLock::new();
    PIPE.get_or_init(|| {
        let tmp = tempfile::tempdir().unwrap();
        let data = tmp.path().join("data");
        let o = run(&[
            "synth-data",
            "--out",
            data.to_str().unwrap(),
            "--sequences",
            "3",
            "--frames",
            "30",
            "--joints",
            "3",
            "--seed",
            "1",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));

        let cfg = tmp.path().join("cfg.toml");
        write_tiny_config(&cfg, &data);
        let dout = tmp.path().join("diffusion");
        let o = run(&[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--stage",
            "diffusion",
            "--out",
            dout.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let text = stdout(&o);
        assert!(text.contains("diffusion_best.ckpt"));
        assert!(text.contains("best epoch"));

        let rout = tmp.path().join("refine");
        let ckpt = dout.join("diffusion_best.ckpt");
        let o = run(&[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--stage",
            "refine",
            "--out",
            rout.to_str().unwrap(),
            "--checkpoint",
            ckpt.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let refiner = rout.join("refiner_best.ckpt");
        assert!(refiner.exists());

        (tmp, data, ckpt, refiner)
    })
}

#[test]
fn train_refine_without_checkpoint_is_a_usage_error() {
    let (tmp, data, _, _) = trained_pipeline();
    let cfg = tmp.path().join("cfg.toml");
    write_tiny_config(&cfg, data);
    let o = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--stage",
        "refine",
        "--out",
        tmp.path().join("nope").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--checkpoint"));
}

#[test]
fn train_rejects_unknown_stage() {
    let (tmp, data, _, _) = trained_pipeline();
    let cfg = tmp.path().join("cfg.toml");
    write_tiny_config(&cfg, data);
    let o = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--stage",
        "everything",
        "--out",
        tmp.path().join("nope2").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_missing_config_file_is_a_usage_error() {
    let o = run(&[
        "train",
        "--config",
        "/nonexistent/cfg.toml",
        "--stage",
        "diffusion",
        "--out",
        "/tmp/never",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("cannot read config"));
}

#[test]
fn sample_writes_n_files_per_observation_and_reruns_identically() {
    let (tmp, data, ckpt, refiner) = trained_pipeline();
    let s1 = tmp.path().join("s1");
    let s2 = tmp.path().join("s2");
    for s in [&s1, &s2] {
        let o = run(&[
            "sample",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--out",
            s.to_str().unwrap(),
            "--n",
            "2",
            "--seed",
            "9",
            "--refiner",
            refiner.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_dirs_identical(&s1, &s2);

    // 3 sequences of 30 frames, window 10, default stride 10 -> 3 windows each
    let index = fs::read_to_string(s1.join("index.csv")).unwrap();
    let mut lines = index.lines();
    assert_eq!(lines.next(), Some("obs_id,source,start,t_obs,f_fut,n_samples"));
    let n_obs = lines.count();
    assert_eq!(n_obs, 9);
    let files = read_dir_sorted(&s1);
    let raw = files
        .iter()
        .filter(|p| p.file_name().unwrap().to_str().unwrap().starts_with("sample_"))
        .count();
    let refined = files
        .iter()
        .filter(|p| p.file_name().unwrap().to_str().unwrap().starts_with("refined_"))
        .count();
    assert_eq!(raw, n_obs * 2);
    assert_eq!(refined, n_obs * 2);

    // every prediction parses back with the advertised shape
    let seq = mdiff::motion::MotionSequence::load(&s1.join("sample_0_0.txt")).unwrap();
    assert_eq!(seq.num_frames(), 6);
    assert_eq!(seq.num_joints(), 3);
}

#[test]
fn evaluate_scores_sampled_predictions_and_reruns_identically() {
    let (tmp, data, ckpt, refiner) = trained_pipeline();
    let s = tmp.path().join("eval_samples");
    let o = run(&[
        "sample",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        s.to_str().unwrap(),
        "--n",
        "3",
        "--seed",
        "4",
        "--refiner",
        refiner.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));

    let csv1 = tmp.path().join("eval1.csv");
    let csv2 = tmp.path().join("eval2.csv");
    for c in [&csv1, &csv2] {
        let o = run(&[
            "evaluate",
            "--pred",
            s.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--out",
            c.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(fs::read(&csv1).unwrap(), fs::read(&csv2).unwrap());

    let text = fs::read_to_string(&csv1).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("obs_id,APD,ADE,FDE,MMADE,MMFDE"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 10); // 9 observations + mean row
    assert!(rows.last().unwrap().starts_with("mean,"));
    for row in &rows {
        assert_eq!(row.split(',').count(), 6);
    }

    // the refined variant scores the refined_* files
    let csv3 = tmp.path().join("eval3.csv");
    let o = run(&[
        "evaluate",
        "--pred",
        s.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        csv3.to_str().unwrap(),
        "--refined",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn evaluate_gives_zero_error_for_predictions_equal_to_ground_truth() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    fs::create_dir_all(&data).unwrap();
    // root pinned at zero so centering leaves values unchanged
    let mut text = String::from("J=2 F=10 FPS=25\n");
    for t in 0..10 {
        text.push_str(&format!("0 0 0 {} {} {}\n", t, 2 * t, 3 * t));
    }
    fs::write(data.join("seq.txt"), &text).unwrap();

    let pred = tmp.path().join("pred");
    fs::create_dir_all(&pred).unwrap();
    // one window: observed frames 0..4, future frames 4..10
    let mut sample = String::from("J=2 F=6 FPS=25\n");
    for t in 4..10 {
        sample.push_str(&format!("0 0 0 {} {} {}\n", t, 2 * t, 3 * t));
    }
    fs::write(pred.join("sample_0_0.txt"), &sample).unwrap();
    fs::write(
        pred.join("index.csv"),
        "obs_id,source,start,t_obs,f_fut,n_samples\n0,seq.txt,0,4,6,1\n",
    )
    .unwrap();

    let out = tmp.path().join("eval.csv");
    let o = run(&[
        "evaluate",
        "--pred",
        pred.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    let row = text.lines().nth(1).unwrap();
    assert_eq!(row, "0,0.000000,0.000000,0.000000,0.000000,0.000000");
}

#[test]
fn evaluate_rejects_malformed_index() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let pred = tmp.path().join("pred");
    fs::create_dir_all(&data).unwrap();
    fs::create_dir_all(&pred).unwrap();
    fs::write(data.join("seq.txt"), "J=1 F=2 FPS=25\n0 0 0\n0 0 0\n").unwrap();
    fs::write(pred.join("index.csv"), "wrong,header\n").unwrap();
    let o = run(&[
        "evaluate",
        "--pred",
        pred.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        tmp.path().join("e.csv").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("index"));
}

#[test]
fn diagnose_writes_one_row_per_grid_step() {
    let (tmp, data, ckpt, _) = trained_pipeline();
    let out1 = tmp.path().join("diag1.csv");
    let out2 = tmp.path().join("diag2.csv");
    for out in [&out1, &out2] {
        let o = run(&[
            "diagnose",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--k-grid",
            "5,3,1,0",
            "--out",
            out.to_str().unwrap(),
            "--n",
            "3",
            "--seed",
            "2",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(fs::read(&out1).unwrap(), fs::read(&out2).unwrap());

    let text = fs::read_to_string(&out1).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "k,APD,ADE");
    assert_eq!(lines.len(), 5);
    for (line, k) in lines[1..].iter().zip(["5", "3", "1", "0"]) {
        assert!(line.starts_with(&format!("{k},")), "{line}");
    }
}

#[test]
fn diagnose_rejects_grid_steps_beyond_k_max() {
    let (tmp, data, ckpt, _) = trained_pipeline();
    let o = run(&[
        "diagnose",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--k-grid",
        "7",
        "--out",
        tmp.path().join("d.csv").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--k-grid"));
}

#[test]
fn sample_rejects_missing_checkpoint_with_data_error() {
    let o = run(&[
        "sample",
        "--checkpoint",
        "/nonexistent.ckpt",
        "--data",
        "/tmp",
        "--out",
        "/tmp/never2",
    ]);
    assert_eq!(o.status.code(), Some(3));
}
