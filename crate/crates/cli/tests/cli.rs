use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const TINY: &str = "\
d_model = 16
blocks = 1
heads = 2
mlp_ratio = 2
latent_channels = 4
fourier_m = 4
sigma_b = 2
head_channels = 8,8,8,4
encoder_channels = 4,8,8
input_size = 16
max_res = 128
stage1_min = 16
stage1_max = 32
stage1_steps = 4
stage1_batch = 2
stage2_min = 16
stage2_max = 48
stage2_steps = 2
stage2_batch = 1
adv_warmup = 2
vae_steps = 3
vae_batch = 2
synthetic_images = 4
synthetic_size = 48
patch_size = 16
";

struct Workdir {
    dir: TempDir,
}

impl Workdir {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("tiny.cfg"), TINY).unwrap();
        Self { dir }
    }

    fn path(&self, p: &str) -> PathBuf {
        self.dir.path().join(p)
    }

    fn run(&self, out: &str, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_infgen"))
            .current_dir(self.dir.path())
            .env_remove("INFGEN_OUT_DIR")
            .args(["--config", "tiny.cfg", "--out-dir", out])
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, out: &str, args: &[&str]) -> String {
        let o = self.run(out, args);
        assert!(
            o.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        String::from_utf8(o.stdout).unwrap()
    }
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

fn pipeline(w: &Workdir, out: &str) {
    w.ok(out, &["pretrain-vae"]);
    let vae = format!("{out}/vae.ckpt");
    w.ok(out, &["train", "--vae", &vae]);
    let ckpt = format!("{out}/model.ckpt");
    w.ok(
        out,
        &["decode", "--checkpoint", &ckpt, "--latent-seed", "5", "--height", "40", "--width", "24"],
    );
    w.ok(
        out,
        &[
            "extrapolate",
            "--checkpoint",
            &ckpt,
            "--latent-seed",
            "5",
            "--target",
            "72x40",
            "--save-intermediates",
        ],
    );
}

#[test]
fn reruns_are_byte_identical() {
    let w = Workdir::new();
    pipeline(&w, "a");
    pipeline(&w, "b");
    let a = files(&w.path("a"));
    let b = files(&w.path("b"));
    assert_eq!(a.len(), 9, "{:?}", a.iter().map(|f| &f.0).collect::<Vec<_>>());
    assert_eq!(a, b);
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let w = Workdir::new();
    w.ok("v", &["pretrain-vae"]);
    w.ok("full", &["train", "--vae", "v/vae.ckpt"]);
    w.ok("split", &["train", "--vae", "v/vae.ckpt", "--max-steps", "3"]);
    let out = w.ok("split", &["train", "--resume", "split/model.ckpt"]);
    assert!(out.contains("now at step 6 of 6"), "{out}");
    assert_eq!(files(&w.path("full")), files(&w.path("split")));
    let log = fs::read_to_string(w.path("full/train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 6);
    for key in ["\"step\"", "\"lr\"", "\"l1\"", "\"perceptual\"", "\"adversarial_g\"", "\"discriminator\"", "\"total\""] {
        assert!(log.lines().all(|l| l.contains(key)), "missing {key}");
    }
}

#[test]
fn bad_config_gives_one_line_diagnostic() {
    let w = Workdir::new();
    fs::write(w.path("bad.cfg"), "d_model = 16\nheads = 3\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_infgen"))
        .current_dir(w.dir.path())
        .args(["--config", "bad.cfg", "bench"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8(o.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error[bad-config]:"), "{err}");
}

#[test]
fn foreign_checkpoint_needs_force() {
    let w = Workdir::new();
    w.ok("o", &["pretrain-vae"]);
    w.ok("o", &["train", "--vae", "o/vae.ckpt", "--max-steps", "1"]);
    let o = w.run(
        "o",
        &["--set", "blocks=2", "decode", "--checkpoint", "o/model.ckpt", "--latent-seed", "1", "--height", "16", "--width", "16"],
    );
    assert_eq!(o.status.code(), Some(7));
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.starts_with("error[checkpoint]:") && err.contains("--force"), "{err}");

    // A non-architecture change keeps the digest.
    w.ok(
        "o",
        &["--set", "lr=0.001", "decode", "--checkpoint", "o/model.ckpt", "--latent-seed", "1", "--height", "16", "--width", "16"],
    );
}

#[test]
fn env_var_overrides_out_dir() {
    let w = Workdir::new();
    let o = Command::new(env!("CARGO_BIN_EXE_infgen"))
        .current_dir(w.dir.path())
        .env("INFGEN_OUT_DIR", w.path("from_env"))
        .args(["--config", "tiny.cfg", "--out-dir", "from_flag", "pretrain-vae", "--steps", "1"])
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(w.path("from_env/vae.ckpt").exists());
    assert!(!w.path("from_flag").exists());
}

#[test]
fn eval_writes_a_key_value_report() {
    let w = Workdir::new();
    w.ok("o", &["pretrain-vae", "--steps", "1"]);
    w.ok("o", &["train", "--vae", "o/vae.ckpt", "--max-steps", "1"]);
    for (dir, seed) in [("ref", "1"), ("gen", "2")] {
        for name in ["a.png", "b.png"] {
            let out = format!("{dir}/{name}");
            w.ok(
                "o",
                &["decode", "--checkpoint", "o/model.ckpt", "--latent-seed", seed, "--height", "32", "--width", "40", "--output", &out],
            );
        }
    }
    w.ok("o", &["eval", "--reference", "o/ref", "--generated", "o/gen", "--run-id", "t"]);
    let report = fs::read_to_string(w.path("o/metrics.txt")).unwrap();
    for key in ["run_id=t", "config_digest=", "psnr=", "ssim=", "rfd_patch=", "rsfd_patch="] {
        assert!(report.contains(key), "{report}");
    }
}

#[test]
fn extrapolate_reports_its_plan() {
    let w = Workdir::new();
    w.ok("o", &["pretrain-vae", "--steps", "1"]);
    w.ok("o", &["train", "--vae", "o/vae.ckpt", "--max-steps", "1"]);
    let out = w.ok(
        "o",
        &["extrapolate", "--checkpoint", "o/model.ckpt", "--latent-seed", "3", "--base", "16x16", "--target", "64x32", "--cap", "2"],
    );
    assert!(out.contains("plan: [(2, 2), (2, 1)]"), "{out}");
    assert!(out.contains("16x16 -> 32x32 -> 64x32"), "{out}");
}

#[test]
fn desk_extrapolation_doubles_twice() {
    let w = Workdir::new();
    let desk = |out: &str, args: &[&str]| {
        let o = Command::new(env!("CARGO_BIN_EXE_infgen"))
            .current_dir(w.dir.path())
            .env_remove("INFGEN_OUT_DIR")
            .args(["--out-dir", out])
            .args(args)
            .output()
            .unwrap();
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    };
    desk("o", &["pretrain-vae", "--steps", "0"]);
    desk("o", &["train", "--vae", "o/vae.ckpt", "--max-steps", "0"]);
    let out = desk(
        "o",
        &["extrapolate", "--checkpoint", "o/model.ckpt", "--latent-seed", "1", "--target", "256x256", "--cap", "2"],
    );
    assert!(out.contains("plan: [(2, 2), (2, 2)]"), "{out}");
    let image = infgen_core::image::Image::load_png(w.path("o/extrapolated.png")).unwrap();
    assert_eq!(image.dims(), (256, 256));
}

#[test]
fn resumed_model_keeps_the_pretrained_encoder() {
    use infgen_core::checkpoint::Checkpoint;
    let w = Workdir::new();
    w.ok("o", &["pretrain-vae"]);
    w.ok("o", &["train", "--vae", "o/vae.ckpt", "--max-steps", "2"]);
    w.ok("o", &["train", "--resume", "o/model.ckpt"]);
    let vae = Checkpoint::load(w.path("o/vae.ckpt")).unwrap();
    let model = Checkpoint::load(w.path("o/model.ckpt")).unwrap();
    let enc = |c: &Checkpoint| c.tensors_with_prefix("encoder.");
    assert!(!enc(&vae).is_empty());
    assert_eq!(enc(&vae), enc(&model));
    assert_eq!(model.step, 6);
}
