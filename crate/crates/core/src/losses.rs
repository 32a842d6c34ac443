//! Loss terms as evaluable functionals.
//!
//! Training is out of scope; these exist so the correspondence machinery can
//! be scored and verified. All reductions are means over elements (summed
//! over the two views or directions), so magnitudes are resolution
//! independent. Valid masks enter as plain per-pixel weights.

use crate::bipam::{convert_features, AttentionMaps};
use crate::error::{Error, Result};
use crate::imaging::StereoPair;
use crate::occlusion::ValidMask;
use crate::tensor::Tensor;

/// Weight of the regularization terms in the total loss.
pub const RESIDUAL_WEIGHT: f64 = 0.1;

/// Every loss term plus their weighted total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub sr: f64,
    pub photo_res: f64,
    pub cycle_res: f64,
    pub smooth: f64,
    pub cons_res: f64,
    pub lambda: f64,
    pub total: f64,
}

impl LossReport {
    /// Flat `key=value` block, one line per term.
    pub fn to_text(&self) -> String {
        format!(
            "sr={}\nphoto_res={}\ncycle_res={}\nsmooth={}\ncons_res={}\nlambda={}\ntotal={}\n",
            self.sr, self.photo_res, self.cycle_res, self.smooth, self.cons_res, self.lambda,
            self.total
        )
    }
}

/// Weighted sum of all terms: sr + lambda * (photo + cycle + smooth + cons).
/// Callers supply nonnegative finite parts.
pub fn total_loss(
    sr: f64,
    photo_res: f64,
    cycle_res: f64,
    smooth: f64,
    cons_res: f64,
    lambda: f64,
) -> LossReport {
    LossReport {
        sr,
        photo_res,
        cycle_res,
        smooth,
        cons_res,
        lambda,
        total: sr + lambda * (photo_res + cycle_res + smooth + cons_res),
    }
}

fn mean_abs_diff(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch(format!(
            "L1 operands {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    if a.len() == 0 {
        return Ok(0.0);
    }
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).abs())
        .sum();
    Ok(sum / a.len() as f64)
}

/// Mean of |v(h, w) * (x(h, w, c) - reprojected(h, w, c))| over all elements.
fn masked_residual_term(x: &Tensor, reprojected: &Tensor, v: &ValidMask) -> Result<f64> {
    if x.dims() != reprojected.dims() {
        return Err(Error::ShapeMismatch(format!(
            "residual operands {:?} vs {:?}",
            x.dims(),
            reprojected.dims()
        )));
    }
    let (h, w, c) = match *x.dims() {
        [h, w, c] => (h, w, c),
        _ => {
            return Err(Error::ShapeMismatch(format!(
                "residual input must be h x w x c, got {:?}",
                x.dims()
            )))
        }
    };
    if *v.tensor().dims() != [h, w] {
        return Err(Error::ShapeMismatch(format!(
            "valid mask {:?} vs image {}x{}",
            v.tensor().dims(),
            h,
            w
        )));
    }
    let mut sum = 0.0f64;
    for y in 0..h {
        for x1 in 0..w {
            let weight = v.tensor().at(&[y, x1]) as f64;
            for ch in 0..c {
                let d = x.at(&[y, x1, ch]) as f64 - reprojected.at(&[y, x1, ch]) as f64;
                sum += (weight * d).abs();
            }
        }
    }
    Ok(sum / (h * w * c) as f64)
}

/// L1 distance between super-resolved and reference images, mean per view,
/// summed over the two views.
pub fn sr_loss(sr_pair: &StereoPair, hr_pair: &StereoPair) -> Result<f64> {
    Ok(mean_abs_diff(sr_pair.left.planes(), hr_pair.left.planes())?
        + mean_abs_diff(sr_pair.right.planes(), hr_pair.right.planes())?)
}

/// Masked photometric mismatch between each view and the other view warped
/// into its frame by the attention maps.
pub fn photometric_residual_loss(
    x_l: &Tensor,
    x_r: &Tensor,
    maps: &AttentionMaps,
    v_l: &ValidMask,
    v_r: &ValidMask,
) -> Result<f64> {
    let to_left = convert_features(maps.m_rl(), x_r)?;
    let to_right = convert_features(maps.m_lr(), x_l)?;
    Ok(masked_residual_term(x_l, &to_left, v_l)? + masked_residual_term(x_r, &to_right, v_r)?)
}

/// Masked round-trip mismatch: each view against itself after projecting to
/// the other frame and back.
pub fn cycle_residual_loss(
    x_l: &Tensor,
    x_r: &Tensor,
    maps: &AttentionMaps,
    v_l: &ValidMask,
    v_r: &ValidMask,
) -> Result<f64> {
    let left_cycled = convert_features(maps.m_rl(), &convert_features(maps.m_lr(), x_l)?)?;
    let right_cycled = convert_features(maps.m_lr(), &convert_features(maps.m_rl(), x_r)?)?;
    Ok(masked_residual_term(x_l, &left_cycled, v_l)?
        + masked_residual_term(x_r, &right_cycled, v_r)?)
}

/// Smoothness of one attention map: mean absolute difference between
/// vertically adjacent rows plus mean absolute difference along the
/// diagonal (j, k) -> (j+1, k+1), which is constant for a constant shift.
fn smoothness_one(m: &Tensor) -> f64 {
    let (h, w) = (m.dims()[0], m.dims()[1]);
    let data = m.data();
    let plane = w * w;
    let mut vertical = 0.0f64;
    if h > 1 {
        for i in 0..h - 1 {
            let (a, b) = (i * plane, (i + 1) * plane);
            for o in 0..plane {
                vertical += (data[a + o] as f64 - data[b + o] as f64).abs();
            }
        }
        vertical /= ((h - 1) * plane) as f64;
    }
    let mut diagonal = 0.0f64;
    if w > 1 {
        for i in 0..h {
            for j in 0..w - 1 {
                let row = i * plane + j * w;
                for k in 0..w - 1 {
                    diagonal += (data[row + k] as f64 - data[row + w + k + 1] as f64).abs();
                }
            }
        }
        diagonal /= (h * (w - 1) * (w - 1)) as f64;
    }
    vertical + diagonal
}

/// Smoothness over both attention maps.
pub fn smoothness_loss(maps: &AttentionMaps) -> f64 {
    smoothness_one(maps.m_rl()) + smoothness_one(maps.m_lr())
}

/// Masked consistency between per-view quantities (low-resolution absolute
/// reconstruction errors) under the same cross-view warping as the
/// photometric term.
pub fn consistency_residual_loss(
    y_l: &Tensor,
    y_r: &Tensor,
    maps: &AttentionMaps,
    v_l: &ValidMask,
    v_r: &ValidMask,
) -> Result<f64> {
    photometric_residual_loss(y_l, y_r, maps, v_l, v_r)
}
