//! `sr` and `masks`: run the network over a stereo pair and write results.

use ipassr_core::imaging::{load_png, save_gray_png, save_png, StereoPair, Upscale};
use ipassr_core::network::{ipassr_forward, WeightArchive};

use crate::render::{note_wrote, save_attention_profile};
use crate::{invalid, AppResult, SrArgs};

fn load_archive(args: &SrArgs, scale: Upscale) -> AppResult<WeightArchive> {
    let Some(path) = &args.weights else {
        return Ok(WeightArchive::random(scale, args.seed));
    };
    if !path.is_file() {
        return Err(invalid(format!("weights file not found: {}", path.display())));
    }
    let archive =
        WeightArchive::load(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    if archive.scale() != scale {
        return Err(invalid(format!(
            "archive {} holds {}x weights, requested {}x",
            path.display(),
            archive.scale().factor(),
            scale.factor()
        )));
    }
    Ok(archive)
}

pub fn run(args: &SrArgs, with_reconstruction: bool) -> AppResult<()> {
    let scale = Upscale::from_factor(args.scale).map_err(|e| invalid(e.to_string()))?;
    for path in [&args.left, &args.right] {
        if !path.is_file() {
            return Err(invalid(format!("input image not found: {}", path.display())));
        }
    }
    let archive = load_archive(args, scale)?;
    let left =
        load_png(&args.left).map_err(|e| invalid(format!("{}: {e}", args.left.display())))?;
    let right =
        load_png(&args.right).map_err(|e| invalid(format!("{}: {e}", args.right.display())))?;
    let pair = StereoPair::new(left, right).map_err(|e| invalid(e.to_string()))?;
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| invalid(format!("cannot create {}: {e}", args.out_dir.display())))?;

    let out = ipassr_forward(&pair, &archive)?;

    if with_reconstruction {
        for (img, name) in [(&out.sr.left, "sr_left.png"), (&out.sr.right, "sr_right.png")] {
            let path = args.out_dir.join(name);
            save_png(img, &path)?;
            note_wrote(&path);
        }
    }
    for (mask, name) in [
        (&out.valid_left, "valid_mask_left.png"),
        (&out.valid_right, "valid_mask_right.png"),
    ] {
        let path = args.out_dir.join(name);
        save_gray_png(mask.tensor(), &path)?;
        note_wrote(&path);
    }
    let profile = args.out_dir.join("attention_profile.png");
    save_attention_profile(&out.maps, &profile)?;
    note_wrote(&profile);
    Ok(())
}
