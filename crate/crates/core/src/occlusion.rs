//! Occlusion detection from attention cycle consistency.
//!
//! A pixel that survives the round trip left -> right -> left under the two
//! attention maps is visible in both views; occluded pixels leak probability
//! mass and cycle back weakly. The relaxed variant also accepts round trips
//! that land within `delta_max` columns, which tolerates the slight attention
//! blur around disparity edges. The valid mask squashes the relaxed
//! probability through tanh(tau * p).
//!
//! `relaxed_cycle_probability` accumulates one f64 partial sum per offset and
//! adds the partials in offset order. Consequences, relied on by callers:
//! the delta_max = 0 path is bit-identical to `cycle_probability`, relaxation
//! can only grow the result, and the unrelaxed value never rounds above 1.

use crate::bipam::AttentionMaps;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Offset tolerance of the relaxed cycle.
pub const RELAX_DELTA_MAX: usize = 2;

/// Steepness of the probability-to-mask squash.
pub const VALID_MASK_TAU: f64 = 5.0;

/// Per-pixel visibility weights in [0, 1]; 0 marks confidently occluded.
/// (Mathematically tanh keeps the mask below 1; rounding may saturate.)
#[derive(Debug, Clone, PartialEq)]
pub struct ValidMask {
    v: Tensor,
}

impl ValidMask {
    pub fn new(v: Tensor) -> Result<Self> {
        if v.rank() != 2 {
            return Err(Error::ShapeMismatch(format!(
                "valid mask must be h x w, got {:?}",
                v.dims()
            )));
        }
        if let Some(&bad) = v.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "valid-mask value {} outside [0, 1]",
                bad
            )));
        }
        Ok(Self { v })
    }

    pub fn tensor(&self) -> &Tensor {
        &self.v
    }

    pub fn into_tensor(self) -> Tensor {
        self.v
    }
}

/// Core loop shared by both probability functions: `m_ab` attends from view
/// A into view B, `m_ba` the reverse, and the result is A's cycle probability.
fn cycle_with_offsets(m_ab: &Tensor, m_ba: &Tensor, delta_max: usize) -> Tensor {
    let (h, w) = (m_ab.dims()[0], m_ab.dims()[1]);
    let a = m_ab.data();
    let b = m_ba.data();
    let mut out = vec![0.0f32; h * w];
    let d = delta_max as isize;
    for y in 0..h {
        let plane = y * w * w;
        for w1 in 0..w {
            let mut total = 0.0f64;
            for delta in -d..=d {
                let shifted = w1 as isize + delta;
                if shifted < 0 || shifted >= w as isize {
                    continue;
                }
                let row_ab = plane + shifted as usize * w;
                let mut partial = 0.0f64;
                for w2 in 0..w {
                    partial += a[row_ab + w2] as f64 * b[plane + w2 * w + w1] as f64;
                }
                total += partial;
            }
            out[y * w + w1] = total as f32;
        }
    }
    Tensor::new(vec![h, w], out).expect("h x w output")
}

/// Exact cycle probability for the left view:
/// p(h, w1) = sum_w2 m_rl(h, w1, w2) * m_lr(h, w2, w1). Lies in [0, 1] for
/// row-stochastic maps. The right view's probability comes from
/// [`AttentionMaps::swapped`].
pub fn cycle_probability(maps: &AttentionMaps) -> Tensor {
    cycle_with_offsets(maps.m_rl(), maps.m_lr(), 0)
}

/// Relaxed cycle probability: round trips may return up to `delta_max`
/// columns away from where they started. Out-of-range offsets are skipped,
/// so the result can exceed 1 but never drops below the exact probability.
pub fn relaxed_cycle_probability(maps: &AttentionMaps, delta_max: usize) -> Tensor {
    cycle_with_offsets(maps.m_rl(), maps.m_lr(), delta_max)
}

/// Squashes a nonnegative relaxed probability into a visibility weight.
pub fn valid_mask(p_relaxed: &Tensor, tau: f64) -> Result<ValidMask> {
    if p_relaxed.rank() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "relaxed probability must be h x w, got {:?}",
            p_relaxed.dims()
        )));
    }
    if let Some(&bad) = p_relaxed.data().iter().find(|&&v| v < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "cycle probability {} is negative",
            bad
        )));
    }
    let data = p_relaxed
        .data()
        .iter()
        .map(|&p| (tau * p as f64).tanh() as f32)
        .collect();
    ValidMask::new(Tensor::new(p_relaxed.dims().to_vec(), data)?)
}

/// Valid masks for both views from the relaxed cycle with the default
/// tolerance and squash steepness.
pub fn detect_occlusions(maps: &AttentionMaps) -> (ValidMask, ValidMask) {
    let p_left = cycle_with_offsets(maps.m_rl(), maps.m_lr(), RELAX_DELTA_MAX);
    let p_right = cycle_with_offsets(maps.m_lr(), maps.m_rl(), RELAX_DELTA_MAX);
    let v_left = valid_mask(&p_left, VALID_MASK_TAU).expect("cycle probabilities are nonnegative");
    let v_right =
        valid_mask(&p_right, VALID_MASK_TAU).expect("cycle probabilities are nonnegative");
    (v_left, v_right)
}
