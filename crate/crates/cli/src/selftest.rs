//! `selftest`: compact oracle and invariant suite covering every module,
//! printed as one record per check. `IPASSR_SELFTEST_FAULT=<eps>` perturbs
//! the softmax kernel before the run to prove the checks can fail.

use std::time::Instant;

use ipassr_core::bipam::{convert_features, whiten, AttentionMaps};
use ipassr_core::imaging::{
    evaluate_pair, psnr, ssim, Protocol, RgbImage, StereoPair, Upscale, PSNR_SENTINEL_DB,
};
use ipassr_core::losses::{
    consistency_residual_loss, cycle_residual_loss, photometric_residual_loss, smoothness_loss,
    sr_loss, total_loss,
};
use ipassr_core::network::{ipassr_forward, WeightArchive};
use ipassr_core::occlusion::{
    cycle_probability, detect_occlusions, relaxed_cycle_probability, ValidMask,
};
use ipassr_core::synthetic::{
    analytic_attention, disparity_warp, render_scene, Layer, Pattern, Rect, SceneSpec,
};
use ipassr_core::tensor::{
    batch_matmul, conv2d, flip_axis, inject_softmax_fault, softmax_lastdim, transpose_last2,
    Tensor,
};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::{invalid, AppError, AppResult};

macro_rules! ensure {
    ($cond:expr, $($arg:tt)*) => {
        if !($cond) {
            return Err(format!($($arg)*));
        }
    };
}

fn random_tensor(dims: &[usize], rng: &mut StdRng) -> Tensor {
    let n: usize = dims.iter().product();
    Tensor::new(dims.to_vec(), (0..n).map(|_| rng.gen()).collect()).expect("extents match")
}

fn random_image(h: usize, w: usize, rng: &mut StdRng) -> RgbImage {
    RgbImage::from_planes(random_tensor(&[h, w, 3], rng)).expect("values in range")
}

fn random_maps(h: usize, w: usize, rng: &mut StdRng) -> AttentionMaps {
    let mut stochastic = || {
        let mut data = Vec::with_capacity(h * w * w);
        for _ in 0..h * w {
            let row: Vec<f32> = (0..w).map(|_| rng.gen::<f32>() + 0.05).collect();
            let s: f32 = row.iter().sum();
            data.extend(row.iter().map(|v| v / s));
        }
        Tensor::new(vec![h, w, w], data).expect("extents match")
    };
    AttentionMaps::new(stochastic(), stochastic()).expect("rows are stochastic")
}

fn parameter_counts() -> Result<String, String> {
    let two = WeightArchive::zeroed(Upscale::X2).param_count();
    let four = WeightArchive::zeroed(Upscale::X4).param_count();
    ensure!(
        (two as f64 - 1.37e6).abs() <= 0.10 * 1.37e6,
        "params_2x={two} outside 1.37M band"
    );
    ensure!(
        (four as f64 - 1.42e6).abs() <= 0.10 * 1.42e6,
        "params_4x={four} outside 1.42M band"
    );
    Ok(format!("params_2x={two} params_4x={four}"))
}

fn attention_algebra() -> Result<String, String> {
    let mut rng = StdRng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for i in 0..20 {
        let (h, w) = (rng.gen_range(1..=3), rng.gen_range(2..=16));
        let scores = Tensor::from_fn(vec![h, w, w], |_| rng.gen_range(-4.0..4.0));
        let m = softmax_lastdim(&scores);
        for row in m.data().chunks(w) {
            let sum: f64 = row.iter().map(|&v| v as f64).sum();
            worst = worst.max((sum - 1.0).abs());
        }
        ensure!(worst <= 1e-6, "row_sum_err={worst:e} (instance {i})");

        let offset: f32 = rng.gen_range(-3.0..3.0);
        let shifted = Tensor::from_fn(vec![h, w, w], |idx| scores.at(idx) + offset);
        let m2 = softmax_lastdim(&shifted);
        for (a, b) in m.data().iter().zip(m2.data()) {
            ensure!((a - b).abs() <= 1e-6, "shift_err={:e}", (a - b).abs());
        }

        let f = Tensor::from_fn(vec![h, w, 4], |_| rng.gen_range(-2.0..2.0));
        let white = whiten(&f).map_err(|e| e.to_string())?;
        for y in 0..h {
            for ch in 0..4 {
                let mean: f64 =
                    (0..w).map(|x| white.at(&[y, x, ch]) as f64).sum::<f64>() / w as f64;
                ensure!(mean.abs() <= 1e-6, "whiten_mean={mean:e}");
            }
        }

        let back = transpose_last2(&transpose_last2(&m).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        ensure!(back.data() == m.data(), "transpose involution broke");
    }
    Ok(format!("row_sum_err={worst:e}"))
}

fn warp_oracle() -> Result<String, String> {
    let mut rng = StdRng::seed_from_u64(12);
    let patterns = [Pattern::Noise, Pattern::Stripes, Pattern::Checker, Pattern::Flat];
    let mut worst = 0.0f64;
    for i in 0..5 {
        let (w, h) = (rng.gen_range(16..=40usize), rng.gen_range(6..=12usize));
        let mut spec = SceneSpec::new(w, h);
        spec.background_seed = rng.gen();
        let lw = rng.gen_range(3..=w / 2);
        let lh = rng.gen_range(2..=h - 1);
        spec.layers.push(Layer {
            rect: Rect {
                x: rng.gen_range(0..=w - lw),
                y: rng.gen_range(0..=h - lh),
                w: lw,
                h: lh,
            },
            disparity: rng.gen_range(0..=8),
            pattern: patterns[rng.gen_range(0..patterns.len())],
            seed: rng.gen(),
        });
        let scene = render_scene(&spec).map_err(|e| format!("scene {i}: {e}"))?;
        let maps = analytic_attention(&scene.disparity_left, &scene.occ_left)
            .map_err(|e| format!("scene {i}: {e}"))?;
        let converted = convert_features(maps.m_rl(), scene.pair.right.planes())
            .map_err(|e| e.to_string())?;
        let warped =
            disparity_warp(&scene.pair.right, &scene.disparity_left, &scene.occ_left, [0.0; 3])
                .map_err(|e| e.to_string())?;
        for y in 0..h {
            for x in 0..w {
                if scene.occ_left.at(y, x) {
                    continue;
                }
                for c in 0..3 {
                    let d = converted.at(&[y, x, c]) - warped.planes().at(&[y, x, c]);
                    worst = worst.max(d.abs() as f64);
                }
            }
        }
        ensure!(worst <= 1e-6, "warp_err={worst:e} (scene {i})");
    }
    Ok(format!("warp_err={worst:e} scenes=5"))
}

fn occlusion_demo() -> Result<String, String> {
    let scene = render_scene(&SceneSpec::default_demo()).map_err(|e| e.to_string())?;
    let maps = analytic_attention(&scene.disparity_left, &scene.occ_left)
        .map_err(|e| e.to_string())?;
    let (v_l, v_r) = detect_occlusions(&maps);
    let (mut occ_max, mut vis_min) = (0.0f32, 1.0f32);
    for (mask, occ) in [(&v_l, &scene.occ_left), (&v_r, &scene.occ_right)] {
        for y in 0..32 {
            for x in 0..96 {
                let v = mask.tensor().at(&[y, x]);
                if occ.at(y, x) {
                    occ_max = occ_max.max(v);
                } else {
                    vis_min = vis_min.min(v);
                }
            }
        }
    }
    ensure!(occ_max < 0.2, "mask_occluded_max={occ_max}");
    ensure!(vis_min > 0.95, "mask_visible_min={vis_min}");
    let bands: Vec<usize> = (0..96).filter(|&x| scene.occ_left.at(16, x)).collect();
    let want: Vec<usize> = (19..24).chain(54..64).collect();
    ensure!(bands == want, "band_columns={bands:?}");
    Ok(format!(
        "mask_occluded_max={occ_max} mask_visible_min={vis_min} band_widths=5,10"
    ))
}

fn cycle_bounds() -> Result<String, String> {
    let mut rng = StdRng::seed_from_u64(13);
    for i in 0..20 {
        let (h, w) = (rng.gen_range(1..=3), rng.gen_range(2..=12));
        let maps = random_maps(h, w, &mut rng);
        let p = cycle_probability(&maps);
        ensure!(
            p.data().iter().all(|&v| (0.0..=1.0).contains(&v)),
            "instance {i}: probability outside [0,1]"
        );
        let relaxed = relaxed_cycle_probability(&maps, 2);
        for (a, b) in relaxed.data().iter().zip(p.data()) {
            ensure!(a >= b, "instance {i}: relaxation shrank a probability");
        }
        let zero = relaxed_cycle_probability(&maps, 0);
        ensure!(
            zero.data()
                .iter()
                .map(|v| v.to_bits())
                .eq(p.data().iter().map(|v| v.to_bits())),
            "instance {i}: delta 0 not bit-identical"
        );
    }
    Ok("instances=20".into())
}

fn loss_fixed_points() -> Result<String, String> {
    let mut rng = StdRng::seed_from_u64(14);
    let (h, w) = (3, 5);
    let x = random_tensor(&[h, w, 3], &mut rng);
    let eye = Tensor::from_fn(vec![h, w, w], |i| if i[1] == i[2] { 1.0 } else { 0.0 });
    let identity = AttentionMaps::new(eye.clone(), eye).expect("identity is stochastic");
    let ones = ValidMask::new(Tensor::from_fn(vec![h, w], |_| 1.0)).expect("ones in range");
    let pair = StereoPair::new(random_image(h, w, &mut rng), random_image(h, w, &mut rng))
        .expect("same extents");

    let checks = [
        ("sr", sr_loss(&pair, &pair).map_err(|e| e.to_string())?),
        (
            "photo",
            photometric_residual_loss(&x, &x, &identity, &ones, &ones)
                .map_err(|e| e.to_string())?,
        ),
        (
            "cycle",
            cycle_residual_loss(&x, &x, &identity, &ones, &ones).map_err(|e| e.to_string())?,
        ),
        (
            "cons",
            consistency_residual_loss(&x, &x, &identity, &ones, &ones)
                .map_err(|e| e.to_string())?,
        ),
    ];
    for (name, v) in checks {
        ensure!(v.abs() <= 1e-7, "{name}_fixed_point={v:e}");
    }
    let shift = Tensor::from_fn(vec![h, w, w], |i| {
        if i[2] == (i[1] + w - 2) % w {
            1.0
        } else {
            0.0
        }
    });
    let rev = Tensor::from_fn(vec![h, w, w], |i| if i[2] == (i[1] + 2) % w { 1.0 } else { 0.0 });
    let s = smoothness_loss(&AttentionMaps::new(shift, rev).expect("one-hot rows"));
    ensure!(s == 0.0, "smoothness_fixed_point={s:e}");
    let report = total_loss(1.0, 1.0, 1.0, 1.0, 1.0, 0.1);
    ensure!((report.total - 1.4).abs() <= 1e-6, "total={}", report.total);
    Ok("fixed_point_err<=1e-7".into())
}

fn loss_oracles() -> Result<String, String> {
    let mut rng = StdRng::seed_from_u64(15);
    let mut worst = 0.0f64;
    for _ in 0..3 {
        let (h, w, c) = (rng.gen_range(1..=4), rng.gen_range(2..=5), 2);
        let x_l = random_tensor(&[h, w, c], &mut rng);
        let x_r = random_tensor(&[h, w, c], &mut rng);
        let maps = random_maps(h, w, &mut rng);
        let v_l = ValidMask::new(random_tensor(&[h, w], &mut rng)).expect("in range");
        let v_r = ValidMask::new(random_tensor(&[h, w], &mut rng)).expect("in range");

        let mut want = 0.0f64;
        for (x, other, m, v) in [
            (&x_l, &x_r, maps.m_rl(), &v_l),
            (&x_r, &x_l, maps.m_lr(), &v_r),
        ] {
            let mut sum = 0.0f64;
            for y in 0..h {
                for j in 0..w {
                    for ch in 0..c {
                        let mut acc = 0.0f64;
                        for k in 0..w {
                            acc += m.at(&[y, j, k]) as f64 * other.at(&[y, k, ch]) as f64;
                        }
                        let re = acc as f32;
                        sum += (v.tensor().at(&[y, j]) as f64
                            * (x.at(&[y, j, ch]) as f64 - re as f64))
                            .abs();
                    }
                }
            }
            want += sum / (h * w * c) as f64;
        }
        let got = photometric_residual_loss(&x_l, &x_r, &maps, &v_l, &v_r)
            .map_err(|e| e.to_string())?;
        let err = (got - want).abs() / want.max(1e-3);
        worst = worst.max(err);
        ensure!(err <= 1e-6, "photo_oracle_err={err:e}");

        let mut smooth_want = 0.0f64;
        for m in [maps.m_rl(), maps.m_lr()] {
            let mut vert = 0.0f64;
            for y in 0..h.saturating_sub(1) {
                for j in 0..w {
                    for k in 0..w {
                        vert += (m.at(&[y, j, k]) as f64 - m.at(&[y + 1, j, k]) as f64).abs();
                    }
                }
            }
            if h > 1 {
                smooth_want += vert / ((h - 1) * w * w) as f64;
            }
            let mut diag = 0.0f64;
            for y in 0..h {
                for j in 0..w - 1 {
                    for k in 0..w - 1 {
                        diag += (m.at(&[y, j, k]) as f64 - m.at(&[y, j + 1, k + 1]) as f64).abs();
                    }
                }
            }
            smooth_want += diag / (h * (w - 1) * (w - 1)) as f64;
        }
        let got = smoothness_loss(&maps);
        let err = (got - smooth_want).abs() / smooth_want.max(1e-3);
        worst = worst.max(err);
        ensure!(err <= 1e-6, "smooth_oracle_err={err:e}");
    }
    Ok(format!("oracle_err={worst:e}"))
}

fn kernel_oracles() -> Result<String, String> {
    let mut rng = StdRng::seed_from_u64(16);
    let mut worst = 0.0f64;
    for i in 0..6 {
        let (h, w) = (rng.gen_range(1..=5), rng.gen_range(1..=5));
        let (ci, co) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
        let k = if i % 2 == 0 { 1usize } else { 3 };
        let x = Tensor::from_fn(vec![h, w, ci], |_| rng.gen_range(-1.0..1.0));
        let kernel = Tensor::from_fn(vec![k, k, ci, co], |_| rng.gen_range(-1.0..1.0));
        let bias = Tensor::from_fn(vec![co], |_| rng.gen_range(-1.0..1.0));
        let got = conv2d(&x, &kernel, &bias, (k - 1) / 2).map_err(|e| e.to_string())?;
        for y in 0..h {
            for xx in 0..w {
                for o in 0..co {
                    let mut acc = bias.at(&[o]) as f64;
                    for dy in 0..k {
                        for dx in 0..k {
                            let sy = y as isize + dy as isize - (k as isize - 1) / 2;
                            let sx = xx as isize + dx as isize - (k as isize - 1) / 2;
                            if sy < 0 || sy >= h as isize || sx < 0 || sx >= w as isize {
                                continue;
                            }
                            for ch in 0..ci {
                                acc += x.at(&[sy as usize, sx as usize, ch]) as f64
                                    * kernel.at(&[dy, dx, ch, o]) as f64;
                            }
                        }
                    }
                    worst = worst.max((got.at(&[y, xx, o]) as f64 - acc).abs());
                }
            }
        }
        ensure!(worst <= 1e-6, "conv_err={worst:e}");

        let (b, p, q, r) = (2, rng.gen_range(1..=4), rng.gen_range(1..=4), rng.gen_range(1..=4));
        let ma = Tensor::from_fn(vec![b, p, q], |_| rng.gen_range(-1.0..1.0));
        let mb = Tensor::from_fn(vec![b, q, r], |_| rng.gen_range(-1.0..1.0));
        let got = batch_matmul(&ma, &mb).map_err(|e| e.to_string())?;
        for bi in 0..b {
            for pi in 0..p {
                for ri in 0..r {
                    let mut acc = 0.0f64;
                    for qi in 0..q {
                        acc += ma.at(&[bi, pi, qi]) as f64 * mb.at(&[bi, qi, ri]) as f64;
                    }
                    worst = worst.max((got.at(&[bi, pi, ri]) as f64 - acc).abs());
                }
            }
        }
        ensure!(worst <= 1e-6, "matmul_err={worst:e}");
    }
    Ok(format!("kernel_err={worst:e}"))
}

fn imaging_metrics() -> Result<String, String> {
    let mut rng = StdRng::seed_from_u64(17);
    let a = random_image(16, 16, &mut rng);
    let p = psnr(&a, &a).map_err(|e| e.to_string())?;
    ensure!(p == PSNR_SENTINEL_DB, "identical_psnr={p}");
    let s = ssim(&a, &a).map_err(|e| e.to_string())?;
    ensure!((s - 1.0).abs() <= 1e-9, "identical_ssim={s}");

    let sr = StereoPair::new(random_image(16, 16, &mut rng), random_image(16, 16, &mut rng))
        .expect("same extents");
    let gt = StereoPair::new(random_image(16, 16, &mut rng), random_image(16, 16, &mut rng))
        .expect("same extents");
    let avg = evaluate_pair(&sr, &gt, Protocol::StereoAverage).map_err(|e| e.to_string())?;
    let want_p = (psnr(&sr.left, &gt.left).unwrap() + psnr(&sr.right, &gt.right).unwrap()) / 2.0;
    let want_s = (ssim(&sr.left, &gt.left).unwrap() + ssim(&sr.right, &gt.right).unwrap()) / 2.0;
    ensure!(
        (avg.psnr_db - want_p).abs() <= 1e-12 && (avg.ssim - want_s).abs() <= 1e-12,
        "stereo_average deviates from per-view mean"
    );
    Ok("sentinel_and_average_ok=1".into())
}

fn archive_round_trip() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("weights.ipsr");
    let a = WeightArchive::random(Upscale::X2, 18);
    a.save(&path).map_err(|e| e.to_string())?;
    let b = WeightArchive::load(&path).map_err(|e| e.to_string())?;
    for name in a.names() {
        let (ta, tb) = (a.get(name).unwrap(), b.get(name).unwrap());
        ensure!(
            ta.dims() == tb.dims()
                && ta.data().iter().map(|v| v.to_bits()).eq(tb.data().iter().map(|v| v.to_bits())),
            "slot {name} changed across round trip"
        );
    }
    let mut bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
    bytes[0] = b'Z';
    std::fs::write(&path, &bytes).map_err(|e| e.to_string())?;
    let err = WeightArchive::load(&path).map(|_| ()).unwrap_err().to_string();
    ensure!(err.contains("bad magic"), "corrupt load said `{err}`");
    Ok("round_trip=bit_exact".into())
}

fn network_symmetry() -> Result<String, String> {
    let archive = WeightArchive::random(Upscale::X2, 19);
    let mut rng = StdRng::seed_from_u64(20);
    let pair = StereoPair::new(random_image(8, 12, &mut rng), random_image(8, 12, &mut rng))
        .expect("same extents");
    let out = ipassr_forward(&pair, &archive).map_err(|e| e.to_string())?;

    let swapped = StereoPair::new(pair.right.clone(), pair.left.clone()).expect("same extents");
    let out_sw = ipassr_forward(&swapped, &archive).map_err(|e| e.to_string())?;
    let mut swap_err = 0.0f32;
    for (a, b) in [
        (&out.sr.left, &out_sw.sr.right),
        (&out.sr.right, &out_sw.sr.left),
    ] {
        for (&x, &y) in a.planes().data().iter().zip(b.planes().data()) {
            swap_err = swap_err.max((x - y).abs());
        }
    }
    ensure!(swap_err <= 1e-5, "swap_err={swap_err:e}");

    let mirrored_pair = StereoPair::new(
        RgbImage::from_planes(flip_axis(pair.right.planes(), 1).unwrap()).unwrap(),
        RgbImage::from_planes(flip_axis(pair.left.planes(), 1).unwrap()).unwrap(),
    )
    .expect("same extents");
    let out_m = ipassr_forward(&mirrored_pair, &archive.mirrored()).map_err(|e| e.to_string())?;
    let mut mirror_err = 0.0f32;
    for (got, want_src) in [
        (&out_m.sr.left, &out.sr.right),
        (&out_m.sr.right, &out.sr.left),
    ] {
        let want = flip_axis(want_src.planes(), 1).unwrap();
        for (&x, &y) in got.planes().data().iter().zip(want.data()) {
            mirror_err = mirror_err.max((x - y).abs());
        }
    }
    ensure!(mirror_err <= 1e-5, "mirror_err={mirror_err:e}");

    let again = ipassr_forward(&pair, &archive).map_err(|e| e.to_string())?;
    ensure!(
        out.sr.left.planes().data() == again.sr.left.planes().data()
            && out.sr.right.planes().data() == again.sr.right.planes().data(),
        "forward pass not deterministic"
    );
    Ok(format!("swap_err={swap_err:e} mirror_err={mirror_err:e}"))
}

fn bias_plumbing() -> Result<String, String> {
    let mut archive = WeightArchive::zeroed(Upscale::X2);
    let beta = Tensor::from_fn(vec![12], |i| 0.05 + 0.07 * i[0] as f32);
    archive.set("conv3f.bias", beta.clone()).map_err(|e| e.to_string())?;
    let mut rng = StdRng::seed_from_u64(21);
    let pair = StereoPair::new(random_image(8, 10, &mut rng), random_image(8, 10, &mut rng))
        .expect("same extents");
    let out = ipassr_forward(&pair, &archive).map_err(|e| e.to_string())?;
    for (y, x, color) in
        (0..16).flat_map(|y| (0..20).flat_map(move |x| (0..3).map(move |c| (y, x, c))))
    {
        let want = beta.at(&[color * 4 + (y % 2) * 2 + (x % 2)]).clamp(0.0, 1.0);
        let got = out.sr.left.planes().at(&[y, x, color]);
        ensure!(
            got == want,
            "bias-only output ({y},{x},{color}) = {got}, want {want}"
        );
    }
    Ok("bias_phase_map=exact".into())
}

pub fn run() -> AppResult<()> {
    if let Ok(v) = std::env::var("IPASSR_SELFTEST_FAULT") {
        let eps: f32 = v
            .trim()
            .parse()
            .map_err(|_| invalid(format!("IPASSR_SELFTEST_FAULT must be a float, got `{v}`")))?;
        inject_softmax_fault(eps);
        println!("fault_injection=softmax eps={eps}");
    }
    let start = Instant::now();
    let checks: [(&str, fn() -> Result<String, String>); 11] = [
        ("parameter_counts", parameter_counts),
        ("attention_algebra", attention_algebra),
        ("warp_oracle", warp_oracle),
        ("occlusion_demo", occlusion_demo),
        ("cycle_bounds", cycle_bounds),
        ("loss_fixed_points", loss_fixed_points),
        ("loss_oracles", loss_oracles),
        ("kernel_oracles", kernel_oracles),
        ("imaging_metrics", imaging_metrics),
        ("archive_round_trip", archive_round_trip),
        ("network_symmetry", network_symmetry),
    ];
    let mut failures = 0usize;
    for (name, body) in checks {
        match body() {
            Ok(detail) => println!("check={name} status=pass {detail}"),
            Err(detail) => {
                failures += 1;
                println!("check={name} status=fail {detail}");
            }
        }
    }
    match bias_plumbing() {
        Ok(detail) => println!("check=bias_plumbing status=pass {detail}"),
        Err(detail) => {
            failures += 1;
            println!("check=bias_plumbing status=fail {detail}");
        }
    }
    println!(
        "checks=12 failures={failures} elapsed_ms={}",
        start.elapsed().as_millis()
    );
    if failures > 0 {
        return Err(AppError::Runtime(format!("{failures} self-test checks failed")));
    }
    Ok(())
}
