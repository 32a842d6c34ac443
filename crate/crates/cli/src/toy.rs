//! `toy`: render a synthetic scene, build analytic attention from its ground
//! truth, and run the occlusion + conversion + loss pipeline over it, writing
//! images and a pass/fail report of every pipeline invariant.

use std::fmt::Write as _;

use ipassr_core::bipam::convert_features;
use ipassr_core::imaging::{save_gray_png, save_png};
use ipassr_core::losses::{
    consistency_residual_loss, cycle_residual_loss, photometric_residual_loss, smoothness_loss,
    total_loss, RESIDUAL_WEIGHT,
};
use ipassr_core::occlusion::{cycle_probability, detect_occlusions, ValidMask};
use ipassr_core::synthetic::{
    analytic_attention, disparity_warp, render_scene, BoolMask, SceneSpec,
};
use ipassr_core::tensor::Tensor;

use crate::render::{note_wrote, save_attention_profile};
use crate::{invalid, AppError, AppResult, ToyArgs};

enum Bound {
    /// Pass when value <= limit.
    AtMost(f64),
    /// Pass when value < limit.
    Below(f64),
    /// Pass when value > limit.
    Above(f64),
}

struct Check {
    name: &'static str,
    value: f64,
    bound: Bound,
}

impl Check {
    fn ok(&self) -> bool {
        match self.bound {
            Bound::AtMost(l) => self.value <= l,
            Bound::Below(l) => self.value < l,
            Bound::Above(l) => self.value > l,
        }
    }

    fn record(&self) -> String {
        let (kind, limit) = match self.bound {
            Bound::AtMost(l) => ("max", l),
            Bound::Below(l) => ("max", l),
            Bound::Above(l) => ("min", l),
        };
        format!(
            "check={} kind={kind} value={:e} limit={limit} status={}",
            self.name,
            self.value,
            if self.ok() { "pass" } else { "fail" }
        )
    }
}

fn gt_valid_mask(occ: &BoolMask) -> ValidMask {
    let t = Tensor::from_fn(vec![occ.height(), occ.width()], |i| {
        if occ.at(i[0], i[1]) {
            0.0
        } else {
            1.0
        }
    });
    ValidMask::new(t).expect("binary mask is in range")
}

pub fn run(args: &ToyArgs) -> AppResult<()> {
    let spec = match &args.spec {
        Some(path) => {
            if !path.is_file() {
                return Err(invalid(format!("scene file not found: {}", path.display())));
            }
            SceneSpec::from_file(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?
        }
        None => SceneSpec::default_demo(),
    };
    spec.validate().map_err(|e| invalid(e.to_string()))?;
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| invalid(format!("cannot create {}: {e}", args.out_dir.display())))?;
    let (h, w) = (spec.height, spec.width);

    let scene = render_scene(&spec)?;
    let maps = analytic_attention(&scene.disparity_left, &scene.occ_left)?;

    // Attention rows are probability distributions.
    let mut row_sum_err = 0.0f64;
    for m in [maps.m_rl(), maps.m_lr()] {
        for row in m.data().chunks(w) {
            let sum: f64 = row.iter().map(|&v| v as f64).sum();
            row_sum_err = row_sum_err.max((sum - 1.0).abs());
        }
    }

    // Converting the right view through the maps equals the disparity warp
    // wherever the left view sees the same surface.
    let warped = disparity_warp(&scene.pair.right, &scene.disparity_left, &scene.occ_left, [0.0; 3])?;
    let converted = convert_features(maps.m_rl(), scene.pair.right.planes())?;
    let mut warp_err = 0.0f64;
    let mut cycle_visible_min = 1.0f64;
    let p = cycle_probability(&maps);
    for y in 0..h {
        for x in 0..w {
            if scene.occ_left.at(y, x) {
                continue;
            }
            for c in 0..3 {
                let d = converted.at(&[y, x, c]) - warped.planes().at(&[y, x, c]);
                warp_err = warp_err.max(d.abs() as f64);
            }
            cycle_visible_min = cycle_visible_min.min(p.at(&[y, x]) as f64);
        }
    }

    // Detected masks separate ground-truth occlusions from visible pixels.
    let (det_left, det_right) = detect_occlusions(&maps);
    let mut mask_occluded_max = 0.0f64;
    let mut mask_visible_min = 1.0f64;
    for (det, occ) in [(&det_left, &scene.occ_left), (&det_right, &scene.occ_right)] {
        for y in 0..h {
            for x in 0..w {
                let v = det.tensor().at(&[y, x]) as f64;
                if occ.at(y, x) {
                    mask_occluded_max = mask_occluded_max.max(v);
                } else {
                    mask_visible_min = mask_visible_min.min(v);
                }
            }
        }
    }

    // Residual losses vanish on a scene that satisfies its own geometry.
    let v_l = gt_valid_mask(&scene.occ_left);
    let v_r = gt_valid_mask(&scene.occ_right);
    let (x_l, x_r) = (scene.pair.left.planes(), scene.pair.right.planes());
    let photo = photometric_residual_loss(x_l, x_r, &maps, &v_l, &v_r)?;
    let cycle = cycle_residual_loss(x_l, x_r, &maps, &v_l, &v_r)?;
    let cons = consistency_residual_loss(x_l, x_r, &maps, &v_l, &v_r)?;
    let smooth = smoothness_loss(&maps);

    let checks = [
        Check { name: "attention_row_sum_err", value: row_sum_err, bound: Bound::AtMost(1e-6) },
        Check { name: "warp_match_err", value: warp_err, bound: Bound::AtMost(1e-6) },
        Check { name: "cycle_visible_min", value: cycle_visible_min, bound: Bound::Above(1.0 - 1e-6) },
        Check { name: "mask_occluded_max", value: mask_occluded_max, bound: Bound::Below(0.2) },
        Check { name: "mask_visible_min", value: mask_visible_min, bound: Bound::Above(0.95) },
        Check { name: "photo_res_err", value: photo, bound: Bound::AtMost(1e-6) },
        Check { name: "cycle_res_err", value: cycle, bound: Bound::AtMost(1e-6) },
        Check { name: "cons_res_err", value: cons, bound: Bound::AtMost(1e-6) },
    ];

    let mut report = String::new();
    let _ = writeln!(report, "scene={}x{} layers={}", w, h, spec.layers.len());
    for check in &checks {
        let _ = writeln!(report, "{}", check.record());
    }
    report.push_str(&total_loss(0.0, photo, cycle, smooth, cons, RESIDUAL_WEIGHT).to_text());
    print!("{report}");

    let report_path = args.out_dir.join("report.txt");
    std::fs::write(&report_path, &report)
        .map_err(|e| AppError::Runtime(format!("{}: {e}", report_path.display())))?;
    note_wrote(&report_path);

    for (img, name) in [(&scene.pair.left, "left.png"), (&scene.pair.right, "right.png"), (&warped, "warp_left.png")] {
        let path = args.out_dir.join(name);
        save_png(img, &path)?;
        note_wrote(&path);
    }
    for (t, name) in [
        (scene.occ_left.to_tensor(), "occ_left.png"),
        (scene.occ_right.to_tensor(), "occ_right.png"),
        (det_left.tensor().clone(), "valid_left.png"),
        (det_right.tensor().clone(), "valid_right.png"),
    ] {
        let path = args.out_dir.join(name);
        save_gray_png(&t, &path)?;
        note_wrote(&path);
    }
    let profile = args.out_dir.join("attention_profile.png");
    save_attention_profile(&maps, &profile)?;
    note_wrote(&profile);

    let failures = checks.iter().filter(|c| !c.ok()).count();
    if failures > 0 {
        return Err(AppError::Runtime(format!("{failures} scene checks failed")));
    }
    Ok(())
}
