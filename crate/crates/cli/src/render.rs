//! Rendering helpers shared by the commands.

use std::path::Path;

use ipassr_core::bipam::AttentionMaps;
use ipassr_core::imaging::save_gray_png;
use ipassr_core::tensor::Tensor;

use crate::AppResult;

/// Renders the right-to-left attention map at the middle image row as a
/// w x w grayscale image, normalized by its own maximum so sparse maps
/// (and the empty intervals occlusions leave behind) stay visible.
pub fn save_attention_profile(maps: &AttentionMaps, path: &Path) -> AppResult<()> {
    let m = maps.m_rl();
    let (h, w) = (m.dims()[0], m.dims()[1]);
    let y = h / 2;
    let mut slice = Vec::with_capacity(w * w);
    for j in 0..w {
        for k in 0..w {
            slice.push(m.at(&[y, j, k]));
        }
    }
    let max = slice.iter().copied().fold(0.0f32, f32::max);
    if max > 0.0 {
        for v in &mut slice {
            *v /= max;
        }
    }
    let profile = Tensor::new(vec![w, w], slice).expect("profile extents match payload");
    save_gray_png(&profile, path)?;
    Ok(())
}

pub fn note_wrote(path: &Path) {
    println!("wrote={}", path.display());
}
