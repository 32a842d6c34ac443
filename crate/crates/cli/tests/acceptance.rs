//! Release criterion: end-to-end smoke of the installed binary. Prints one
//! pass/fail line and enforces the wall-clock budget.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ipassr_core::imaging::{load_png, save_png, Upscale};
use ipassr_core::network::WeightArchive;
use ipassr_core::synthetic::{Layer, Pattern, Rect, SceneSpec};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ipassr"))
}

fn assert_gray_png(path: &Path, height: u32, width: u32) {
    let img = image::open(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(
        (img.width(), img.height()),
        (width, height),
        "{}",
        path.display()
    );
    assert!(
        matches!(img, image::DynamicImage::ImageLuma8(_)),
        "{}: expected 8-bit grayscale",
        path.display()
    );
}

#[test]
fn criterion_11_end_to_end_smoke() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();

    // A 32x48 textured pair with real parallax.
    let mut spec = SceneSpec::new(48, 32);
    spec.layers.push(Layer {
        rect: Rect { x: 16, y: 6, w: 16, h: 20 },
        disparity: 4,
        pattern: Pattern::Checker,
        seed: 5,
    });
    let scene = ipassr_core::synthetic::render_scene(&spec).unwrap();
    let left = dir.path().join("left.png");
    let right = dir.path().join("right.png");
    save_png(&scene.pair.left, &left).unwrap();
    save_png(&scene.pair.right, &right).unwrap();

    let weights = dir.path().join("w2.ipsr");
    WeightArchive::random(Upscale::X2, 7).save(&weights).unwrap();
    let out_dir = dir.path().join("out");

    let output = bin()
        .arg("sr")
        .arg(&left)
        .arg(&right)
        .args(["--scale", "2", "--weights"])
        .arg(&weights)
        .arg("--out-dir")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "sr failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );

    // SR views double both extents; every decoded value is in [0, 1].
    for name in ["sr_left.png", "sr_right.png"] {
        let img = load_png(&out_dir.join(name)).unwrap();
        assert_eq!((img.height(), img.width()), (64, 96), "{name}");
        assert!(img.planes().data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
    assert_gray_png(&out_dir.join("valid_mask_left.png"), 32, 48);
    assert_gray_png(&out_dir.join("valid_mask_right.png"), 32, 48);
    assert_gray_png(&out_dir.join("attention_profile.png"), 48, 48);

    let selftest = bin().arg("selftest").output().unwrap();
    assert!(
        selftest.status.success(),
        "selftest failed: {}",
        String::from_utf8_lossy(&selftest.stdout)
    );

    let elapsed = start.elapsed();
    println!(
        "acceptance end-to-end-smoke: sr on 32x48 pair wrote sized in-range PNGs, selftest \
         clean ... pass ({elapsed:.2?}, budget 60s)"
    );
    assert!(elapsed < Duration::from_secs(60));
}
