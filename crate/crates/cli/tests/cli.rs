use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
preset = "desk"
seed = 3

[dataset]
naca5_design = [2]
naca5_position = [3]
naca5_thickness = [12]
grid_bins = 2
split = [0.6, 0.2, 0.2]

[dataset.naca4_m]
min = 0.0
max = 0.04
count = 3

[dataset.naca4_p]
min = 0.3
max = 0.5
count = 2

[dataset.naca4_t]
min = 0.1
max = 0.16
count = 3

[rvq]
epochs = 1
rows_per_epoch = 500

[rvq.model]
codes = 16
d_code = 4
hidden = 8
blocks = 1
batch = 64

[ae]
d_model = 8
enc_hidden = 8
enc_layers = 1
d_z = 4
bins = 16
meta_hidden = 8
coef_hidden = 8
context = 2
batch = 8
epochs = 1

[diffusion.denoiser]
d_z = 4
classes = 4
hidden = 8
blocks = 1
time_dim = 4
steps = 20

[diffusion.train]
iterations = 20
batch = 8

[eval]
per_class = 2

[optimize]
targets = 2
budget = 10
"#;

fn foilgen(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_foilgen"))
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .output()
        .expect("spawn foilgen")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = foilgen(out, args);
    assert!(
        o.status.success(),
        "foilgen {args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn code(out: &Path, args: &[&str]) -> i32 {
    foilgen(out, args).status.code().expect("exit code")
}

fn tiny_dataset(dir: &Path) {
    let cfg = dir.join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    ok(dir, &["--config", cfg.to_str().unwrap(), "build-dataset"]);
}

#[test]
fn every_subcommand_runs_on_a_tiny_config() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    tiny_dataset(d);
    assert!(d.join("dataset/manifest.json").exists());
    assert!(ok(d, &["validate"]).contains("records ok"));

    let aug = d.join("aug");
    ok(d, &["augment", "--factor", "2", "--output", aug.to_str().unwrap()]);
    assert!(aug.join("manifest.json").exists());
    ok(d, &["validate", "--dataset", aug.to_str().unwrap()]);

    ok(d, &["train-rvq"]);
    ok(d, &["train-ae"]);
    ok(d, &["train-diffusion"]);
    for f in [
        "rvq.ckpt",
        "rvq.json",
        "ae.ckpt",
        "ae.json",
        "diffusion.ckpt",
        "diffusion.json",
    ] {
        assert!(d.join(f).exists(), "{f}");
    }
    for f in ["rvq_loss.csv", "ae_loss.csv", "diffusion_loss.csv"] {
        assert!(fs::read_to_string(d.join(f)).unwrap().lines().count() >= 2, "{f}");
    }

    let out = ok(
        d,
        &["generate", "--classes", "0,null", "--count", "2", "--omega", "1.5"],
    );
    assert!(
        out.contains("class 0: 2 samples") && out.contains("class null: 2 samples"),
        "{out}"
    );
    let samples = fs::read_to_string(d.join("samples/samples.jsonl")).unwrap();
    assert_eq!(samples.lines().count(), 4);
    assert!(d.join("samples/profiles.svg").exists());

    let out = ok(d, &["evaluate"]);
    assert!(
        out.contains("reconstruction:") && out.contains("conditional omega 3"),
        "{out}"
    );
    for f in [
        "accuracy.csv",
        "conditional.json",
        "reconstruction.json",
        "scatter_omega3.csv",
        "scatter_omega3.svg",
    ] {
        assert!(d.join("eval").join(f).exists(), "{f}");
    }

    let out = ok(d, &["optimize"]);
    assert!(out.contains("init generated") && out.contains("init random"), "{out}");
    assert_eq!(
        fs::read_to_string(d.join("optimize/results.jsonl"))
            .unwrap()
            .lines()
            .count(),
        4
    );

    let scatter = d.join("eval/scatter_omega3.csv");
    ok(d, &["plot", "--kind", "scatter", "--input", scatter.to_str().unwrap()]);
    assert!(d.join("eval/scatter_omega3.svg").exists());
    let curves = d.join("ae_loss.csv");
    let svg = d.join("ae_loss.svg");
    ok(
        d,
        &[
            "plot",
            "--kind",
            "curves",
            "--input",
            curves.to_str().unwrap(),
            "--output",
            svg.to_str().unwrap(),
        ],
    );
    assert!(fs::read_to_string(&svg).unwrap().contains("<polyline"));
}

#[test]
fn profile_plot_has_one_vertex_per_point() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("naca0012.csv");
    let prof = foilgen::geometry::naca4_profile(0.0, 0.0, 0.12, 200).unwrap();
    foilgen::geometry::io::write_profile_csv(&csv, &prof).unwrap();
    ok(
        tmp.path(),
        &["plot", "--kind", "profile", "--input", csv.to_str().unwrap()],
    );
    let svg = fs::read_to_string(tmp.path().join("naca0012.svg")).unwrap();
    let pts = svg.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
    assert_eq!(pts.split(' ').count(), 200);
}

#[test]
fn validation_failures_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    tiny_dataset(d);
    let path = d.join("dataset/records.jsonl");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut rec: serde_json::Value = serde_json::from_str(&lines[0]).unwrap();
    let cl = rec["label"]["cl"].as_f64().unwrap();
    rec["label"]["cl"] = serde_json::json!(cl + 0.1);
    lines[0] = rec.to_string();
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    assert_eq!(code(d, &["validate"]), 2);
}

#[test]
fn io_errors_exit_with_3() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(
        code(d, &["validate", "--dataset", d.join("missing").to_str().unwrap()]),
        3
    );
    tiny_dataset(d);
    // Checkpoints have not been trained yet.
    assert_eq!(code(d, &["generate"]), 3);
    assert_eq!(
        code(
            d,
            &[
                "plot",
                "--kind",
                "profile",
                "--input",
                d.join("none.csv").to_str().unwrap()
            ]
        ),
        3
    );
}

#[test]
fn config_errors_exit_with_4() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let bad = d.join("bad.toml");
    fs::write(&bad, "[ae]\nno_such_key = 1\n").unwrap();
    assert_eq!(code(d, &["--config", bad.to_str().unwrap(), "build-dataset"]), 4);
    fs::write(&bad, "[diffusion.denoiser]\nclasses = 7\n").unwrap();
    assert_eq!(code(d, &["--config", bad.to_str().unwrap(), "build-dataset"]), 4);
    assert_eq!(code(d, &["build-dataset", "--no-such-flag"]), 4);
    assert_eq!(code(d, &["frobnicate"]), 4);
    assert!(!d.join("dataset").exists());
}

#[test]
fn unknown_class_and_init_are_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    tiny_dataset(d);
    ok(d, &["train-rvq"]);
    ok(d, &["train-ae"]);
    ok(d, &["train-diffusion"]);
    assert_eq!(code(d, &["generate", "--classes", "17"]), 4);
    assert_eq!(code(d, &["optimize", "--init", "annealing"]), 4);
}

#[test]
fn empty_plot_input_creates_no_file() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let csv = d.join("empty.csv");
    fs::write(&csv, "target,cl,cd,hit\n").unwrap();
    assert_eq!(
        code(d, &["plot", "--kind", "scatter", "--input", csv.to_str().unwrap()]),
        2
    );
    assert!(!d.join("empty.svg").exists());
}

#[test]
fn same_seed_gives_identical_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let d = tmp.path().join(name);
        fs::create_dir_all(&d).unwrap();
        tiny_dataset(&d);
        ok(&d, &["train-rvq"]);
        ok(&d, &["train-ae"]);
        ok(&d, &["train-diffusion"]);
        ok(&d, &["generate", "--count", "3"]);
        runs.push(d);
    }
    for f in [
        "dataset/records.jsonl",
        "dataset/manifest.json",
        "rvq.ckpt",
        "ae.ckpt",
        "ae.json",
        "diffusion.ckpt",
        "samples/samples.jsonl",
    ] {
        assert_eq!(
            fs::read(runs[0].join(f)).unwrap(),
            fs::read(runs[1].join(f)).unwrap(),
            "{f}"
        );
    }
    let other = tmp.path().join("c");
    fs::create_dir_all(&other).unwrap();
    tiny_dataset(&other);
    ok(&other, &["--seed", "4", "train-rvq"]);
    assert_ne!(
        fs::read(runs[0].join("rvq.ckpt")).unwrap(),
        fs::read(other.join("rvq.ckpt")).unwrap()
    );
}
