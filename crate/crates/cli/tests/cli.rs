use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use moc_core::model::Variant;
use moc_core::train::{load_checkpoint, FORMAT_VERSION};
use moc_core::Parameterized;
use tempfile::TempDir;

fn moccnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_moccnn"))
        .args(args)
        .output()
        .expect("spawn moccnn")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY_ARCH: &str = "\
# small enough for a test run
input.size=24
expert.conv1.filters=2
expert.conv1.kernel=3
expert.conv2.filters=3
expert.conv2.kernel=3
expert.pool1=2
expert.pool2=2
gate.conv1.filters=3
gate.conv1.kernel=3
gate.conv2.filters=4
gate.conv2.kernel=3
gate.pool1=2
gate.pool2=2
gate.hidden=6
";

/// Sparse enough to fit into the small test scenes.
const TINY_MODES: &str = "small 1.5 2.0 3 6\nlarge 2.5 3.0 1 3\n";

fn write_modes(dir: &Path) -> PathBuf {
    let path = dir.join("modes.txt");
    fs::write(&path, TINY_MODES).unwrap();
    path
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new(scenes: usize) -> Self {
        let dir = TempDir::new().unwrap();
        fs::write(dir.path().join("arch.conf"), TINY_ARCH).unwrap();
        let data = dir.path().join("data");
        let modes = write_modes(dir.path());
        let out = moccnn(&[
            "generate",
            "--modes",
            p(&modes),
            "--scenes",
            &scenes.to_string(),
            "--size",
            "64x64",
            "--seed",
            "4",
            "--out",
            p(&data),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        Fixture { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train(&self, command: &[&str], out: &str, extra: &[&str]) -> Output {
        let (data, arch, out) = (self.path("data"), self.path("arch.conf"), self.path(out));
        let mut args: Vec<&str> = command.to_vec();
        args.extend(["--data", p(&data), "--arch", p(&arch), "--out", p(&out)]);
        args.extend(["--epochs", "2", "--crops", "4", "--batch", "8"]);
        args.extend(extra);
        moccnn(&args)
    }
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn version_names_the_checkpoint_format() {
    let out = moccnn(&["--version"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains(&format!("checkpoint format {FORMAT_VERSION}")), "{text}");
}

#[test]
fn generate_is_deterministic_and_validates_flags() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("a2"));
    let modes = write_modes(dir.path());
    for d in [&a, &b] {
        let out = moccnn(&[
            "generate",
            "--modes",
            p(&modes),
            "--scenes",
            "6",
            "--size",
            "64x80",
            "--seed",
            "7",
            "--out",
            p(d),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let (fa, fb) = (read_dir_sorted(&a), read_dir_sorted(&b));
    // 6 images, 6 annotation files, manifest and run.conf
    assert_eq!(fa.len(), 14);
    let strip_out = |files: Vec<(String, Vec<u8>)>| -> Vec<(String, Vec<u8>)> {
        files.into_iter().filter(|(n, _)| n != "run.conf").collect()
    };
    assert_eq!(strip_out(fa), strip_out(fb));

    let c = dir.path().join("c");
    let out = moccnn(&["generate", "--scenes", "2", "--size", "144x144", "--out", p(&c)]);
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read_to_string(c.join("manifest.txt")).unwrap().lines().count(), 2);
    assert_eq!(code(&moccnn(&["generate", "--scenes", "0", "--out", p(&c)])), 2);
    assert_eq!(
        code(&moccnn(&[
            "generate",
            "--scenes",
            "2",
            "--modes",
            "modes9",
            "--out",
            p(&c)
        ])),
        2
    );
    assert_eq!(
        code(&moccnn(&[
            "generate",
            "--scenes",
            "2",
            "--size",
            "64by64",
            "--out",
            p(&c)
        ])),
        2
    );
    assert_eq!(code(&moccnn(&["generate", "--out", p(&c)])), 2);
}

#[test]
fn train_writes_checkpoint_log_and_frozen_config() {
    let fx = Fixture::new(4);
    let out = fx.train(&["train"], "run", &["--k", "3", "--lambda", "0.5", "--seed", "9"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let log = fs::read_to_string(fx.path("run/log.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(
        lines[0],
        "epoch,expert_loss,gate_mse,gate_penalty,gate_entropy,mean_g_1,mean_g_2,mean_g_3"
    );
    assert_eq!(lines.len(), 3);
    let frozen = fs::read_to_string(fx.path("run/run.conf")).unwrap();
    for line in [
        "run.command=train",
        "k=3",
        "lambda=0.5",
        "seed=9",
        "input.size=24",
        "epochs=2",
    ] {
        assert!(frozen.lines().any(|l| l == line), "{line} missing from\n{frozen}");
    }

    // The frozen config alone reproduces the run.
    let data = fx.path("data");
    let (frozen_path, again) = (fx.path("run/run.conf"), fx.path("again"));
    let out = moccnn(&[
        "train",
        "--data",
        p(&data),
        "--arch",
        p(&frozen_path),
        "--out",
        p(&again),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        fs::read(fx.path("run/model.ckpt")).unwrap(),
        fs::read(again.join("model.ckpt")).unwrap()
    );
    assert_eq!(log, fs::read_to_string(again.join("log.csv")).unwrap());
}

#[test]
fn baselines_have_the_expected_shapes_and_log_schema() {
    let fx = Fixture::new(3);
    let out = fx.train(&["train-baseline", "--variant", "ordinary"], "ord", &["--k", "1"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let ord = load_checkpoint::<f32>(&fx.path("ord/model.ckpt")).unwrap();
    assert_eq!(ord.model.variant(), Variant::Ordinary);
    assert_eq!(ord.model.param_count(), ord.model.experts()[0].param_count());
    let header = fs::read_to_string(fx.path("ord/log.csv")).unwrap();
    assert!(header.starts_with("epoch,expert_loss,gate_mse,gate_penalty,gate_entropy,mean_g_1\n"));

    let out = fx.train(&["train-baseline", "--variant", "fc-gating"], "fc", &["--k", "3"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let fc = load_checkpoint::<f32>(&fx.path("fc/model.ckpt")).unwrap();
    let experts: usize = fc.model.experts().iter().map(|e| e.param_count()).sum();
    assert_eq!(fc.model.param_count(), experts + 3 + 1);

    assert_eq!(
        code(&fx.train(&["train-baseline", "--variant", "ordinary"], "bad", &["--k", "3"])),
        2
    );
    assert_eq!(code(&fx.train(&["train-baseline", "--variant", "moc"], "bad", &[])), 2);
}

#[test]
fn eval_and_gating_inspection() {
    let fx = Fixture::new(10);
    assert_eq!(code(&fx.train(&["train"], "run", &["--k", "3"])), 0);
    let (ckpt, data) = (fx.path("run/model.ckpt"), fx.path("data"));

    let (e1, e2) = (fx.path("eval1"), fx.path("eval2"));
    for e in [&e1, &e2] {
        let out = moccnn(&["eval", "--model", p(&ckpt), "--data", p(&data), "--out", p(e)]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let metrics = fs::read_to_string(e1.join("metrics.csv")).unwrap();
    assert_eq!(metrics, fs::read_to_string(e2.join("metrics.csv")).unwrap());
    assert!(metrics.starts_with("scene_id,truth,prediction,abs_err\n"));
    assert_eq!(metrics.lines().count(), 1 + 10 + 2);

    let cv = fx.path("cv");
    let out = moccnn(&[
        "eval",
        "--model",
        p(&ckpt),
        "--data",
        p(&data),
        "--folds",
        "5",
        "--out",
        p(&cv),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for i in 1..=5 {
        assert!(cv.join(format!("fold_{i}.csv")).is_file());
    }
    assert_eq!(
        fs::read_to_string(cv.join("metrics.csv")).unwrap().lines().count(),
        1 + 10 + 2
    );

    let g = fx.path("gating");
    let out = moccnn(&[
        "inspect-gating",
        "--model",
        p(&ckpt),
        "--data",
        p(&data),
        "--out",
        p(&g),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(g.join("gating.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "scene_id,mode,dominant_expert,entropy,g_1,g_2,g_3"
    );
    let (mut scenes, mut modes) = (0, 0);
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 7);
        let sum: f64 = fields[4..].iter().map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-6, "{line}");
        if fields[0].starts_with("MODE:") {
            modes += 1;
        } else {
            scenes += 1;
        }
    }
    assert_eq!(scenes, 10);
    assert!(modes >= 1);
}

#[test]
fn usage_errors_and_divergence_have_distinct_exit_codes() {
    let fx = Fixture::new(2);
    let missing = fx.path("nope/manifest.txt");
    let out = fx.path("x");
    let arch = fx.path("arch.conf");
    assert_eq!(code(&moccnn(&["train", "--data", p(&missing), "--out", p(&out)])), 2);

    let bad_manifest = fx.path("bad.txt");
    fs::write(&bad_manifest, "only-one-field\n").unwrap();
    assert_eq!(
        code(&moccnn(&[
            "train",
            "--data",
            p(&bad_manifest),
            "--arch",
            p(&arch),
            "--out",
            p(&out)
        ])),
        2
    );

    let bad_arch = fx.path("bad.conf");
    fs::write(&bad_arch, "expert.conv9.filters=3\n").unwrap();
    let data = fx.path("data");
    assert_eq!(
        code(&moccnn(&[
            "train",
            "--data",
            p(&data),
            "--arch",
            p(&bad_arch),
            "--out",
            p(&out)
        ])),
        2
    );

    let not_ckpt = fx.path("data/manifest.txt");
    assert_eq!(
        code(&moccnn(&[
            "eval",
            "--model",
            p(&not_ckpt),
            "--data",
            p(&data),
            "--out",
            p(&out)
        ])),
        2
    );

    assert_eq!(
        code(&fx.train(&["train-baseline", "--variant", "fc-gating"], "fc", &["--k", "3"])),
        0
    );
    let fc = fx.path("fc/model.ckpt");
    assert_eq!(
        code(&moccnn(&[
            "inspect-gating",
            "--model",
            p(&fc),
            "--data",
            p(&data),
            "--out",
            p(&out)
        ])),
        2
    );

    let hot = fx.path("hot.conf");
    fs::write(&hot, format!("{TINY_ARCH}adam.expert.lr=1e30\nadam.gate.lr=1e30\n")).unwrap();
    let div = fx.path("div");
    let out = moccnn(&[
        "train",
        "--data",
        p(&data),
        "--arch",
        p(&hot),
        "--out",
        p(&div),
        "--crops",
        "4",
        "--batch",
        "4",
    ]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));
    assert!(div.join("run.conf").is_file());
}

#[test]
fn gradcheck_passes_on_a_few_seeds() {
    let out = moccnn(&["gradcheck", "--seeds", "2", "--full"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("negative control failed as intended"));
    assert!(text.contains("gating chain through softmax"));
    assert_eq!(code(&moccnn(&["gradcheck", "--seeds", "0"])), 2);
}
