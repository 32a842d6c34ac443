//! Exit-code and report contracts of the binary.

use std::path::Path;
use std::process::{Command, Output};

use ipassr_core::imaging::save_png;
use ipassr_core::synthetic::{render_scene, SceneSpec};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ipassr"))
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Renders the built-in demo scene into `<dir>/<stem>_L.png` / `_R.png`,
/// wide enough for the cropped-left protocol.
fn write_demo_pair(dir: &Path, stem: &str, seed: u64) {
    let mut spec = SceneSpec::default_demo();
    spec.background_seed = seed;
    let scene = render_scene(&spec).unwrap();
    save_png(&scene.pair.left, &dir.join(format!("{stem}_L.png"))).unwrap();
    save_png(&scene.pair.right, &dir.join(format!("{stem}_R.png"))).unwrap();
}

#[test]
fn sr_with_missing_weights_exits_2_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    write_demo_pair(dir.path(), "in", 1);
    let out = bin()
        .arg("sr")
        .arg(dir.path().join("in_L.png"))
        .arg(dir.path().join("in_R.png"))
        .args(["--scale", "2", "--weights"])
        .arg(dir.path().join("nope.ipsr"))
        .arg("--out-dir")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("nope.ipsr"));
}

#[test]
fn sr_rejects_unsupported_scale() {
    let dir = tempfile::tempdir().unwrap();
    write_demo_pair(dir.path(), "in", 2);
    let out = bin()
        .arg("sr")
        .arg(dir.path().join("in_L.png"))
        .arg(dir.path().join("in_R.png"))
        .args(["--scale", "3"])
        .arg("--out-dir")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("scale"));
}

#[test]
fn masks_writes_only_masks_and_profile() {
    let dir = tempfile::tempdir().unwrap();
    // Small pair keeps the forward pass quick.
    let spec = SceneSpec::new(16, 12);
    let scene = render_scene(&spec).unwrap();
    save_png(&scene.pair.left, &dir.path().join("l.png")).unwrap();
    save_png(&scene.pair.right, &dir.path().join("r.png")).unwrap();
    let out_dir = dir.path().join("out");
    let out = bin()
        .arg("masks")
        .arg(dir.path().join("l.png"))
        .arg(dir.path().join("r.png"))
        .args(["--scale", "2"])
        .arg("--out-dir")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(out_dir.join("valid_mask_left.png").is_file());
    assert!(out_dir.join("valid_mask_right.png").is_file());
    assert!(out_dir.join("attention_profile.png").is_file());
    assert!(!out_dir.join("sr_left.png").exists());
    assert!(!out_dir.join("sr_right.png").exists());
}

#[test]
fn toy_default_scene_passes_and_residuals_vanish() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .arg("toy")
        .arg("--out-dir")
        .arg(dir.path())
        .output()
        .unwrap();
    let text = stdout(&out);
    assert!(out.status.success(), "{text}");
    assert!(!text.contains("status=fail"), "{text}");
    for key in ["photo_res=0\n", "cycle_res=0\n", "cons_res=0\n"] {
        assert!(text.contains(key), "missing `{key}` in:\n{text}");
    }
    assert!(dir.path().join("report.txt").is_file());
    assert!(dir.path().join("attention_profile.png").is_file());
}

#[test]
fn toy_zero_disparity_scene_has_zero_residuals() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("scene.txt");
    std::fs::write(&spec, "width=24\nheight=12\nbackground=noise,9\nbackground_disparity=0\n")
        .unwrap();
    let out = bin()
        .arg("toy")
        .arg("--spec")
        .arg(&spec)
        .arg("--out-dir")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    let text = stdout(&out);
    assert!(out.status.success(), "{text}");
    for key in ["photo_res=0\n", "cycle_res=0\n", "cons_res=0\n"] {
        assert!(text.contains(key), "missing `{key}` in:\n{text}");
    }
}

#[test]
fn toy_out_of_bounds_layer_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("scene.txt");
    std::fs::write(
        &spec,
        "width=24\nheight=12\nlayer=20,2,16,4,3,flat,1\n",
    )
    .unwrap();
    let out = bin()
        .arg("toy")
        .arg("--spec")
        .arg(&spec)
        .arg("--out-dir")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn eval_identical_dirs_hit_the_sentinel() {
    let dir = tempfile::tempdir().unwrap();
    let (sr, gt) = (dir.path().join("sr"), dir.path().join("gt"));
    std::fs::create_dir_all(&sr).unwrap();
    std::fs::create_dir_all(&gt).unwrap();
    for (stem, seed) in [("a", 3), ("b", 4)] {
        write_demo_pair(&gt, stem, seed);
        write_demo_pair(&sr, stem, seed);
    }
    for protocol in ["cropped-left", "stereo-average"] {
        let out = bin()
            .arg("eval")
            .arg(&sr)
            .arg(&gt)
            .args(["--protocol", protocol])
            .output()
            .unwrap();
        let text = stdout(&out);
        assert!(out.status.success(), "{text}{}", stderr(&out));
        assert!(text.contains(&format!("protocol={protocol} pairs=2")), "{text}");
        assert_eq!(text.matches("psnr_db=99.000").count(), 3, "{text}");
        assert_eq!(text.matches("ssim=1.000000").count(), 3, "{text}");
        assert!(text.contains("pair=mean"), "{text}");
    }
}

#[test]
fn eval_is_deterministic_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let (sr, gt) = (dir.path().join("sr"), dir.path().join("gt"));
    std::fs::create_dir_all(&sr).unwrap();
    std::fs::create_dir_all(&gt).unwrap();
    for (stem, seed) in [("a", 3), ("b", 4), ("c", 5)] {
        write_demo_pair(&gt, stem, seed);
        write_demo_pair(&sr, stem, seed + 10);
    }
    let run = |threads: &str| {
        let out = bin()
            .arg("eval")
            .arg(&sr)
            .arg(&gt)
            .env("IPASSR_THREADS", threads)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", stderr(&out));
        // Drop the header; it names the thread count.
        stdout(&out).lines().skip(1).collect::<Vec<_>>().join("\n")
    };
    assert_eq!(run("1"), run("3"));
}

#[test]
fn eval_rejects_bad_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let (sr, gt) = (dir.path().join("sr"), dir.path().join("gt"));
    std::fs::create_dir_all(&sr).unwrap();
    std::fs::create_dir_all(&gt).unwrap();
    write_demo_pair(&gt, "a", 3);
    write_demo_pair(&sr, "a", 3);
    for bad in ["0", "-1", "many"] {
        let out = bin()
            .arg("eval")
            .arg(&sr)
            .arg(&gt)
            .env("IPASSR_THREADS", bad)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(2), "IPASSR_THREADS={bad}");
        assert!(stderr(&out).contains("IPASSR_THREADS"));
    }
}

#[test]
fn eval_missing_counterpart_exits_2_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let (sr, gt) = (dir.path().join("sr"), dir.path().join("gt"));
    std::fs::create_dir_all(&sr).unwrap();
    std::fs::create_dir_all(&gt).unwrap();
    write_demo_pair(&gt, "a", 3);
    write_demo_pair(&sr, "a", 3);
    std::fs::remove_file(sr.join("a_R.png")).unwrap();
    let out = bin().arg("eval").arg(&sr).arg(&gt).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("a_R.png"), "{}", stderr(&out));
}

#[test]
fn selftest_fault_injection_exits_1() {
    let out = bin()
        .arg("selftest")
        .env("IPASSR_SELFTEST_FAULT", "0.02")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "{}", stdout(&out));
    assert!(stdout(&out).contains("status=fail"), "{}", stdout(&out));
    assert!(stdout(&out).contains("fault_injection=softmax"));
}
