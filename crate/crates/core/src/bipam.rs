//! Bi-directional parallax attention: whitened 1x1 projections of the
//! concatenated stereo features produce a per-row score map over width
//! positions; row softmax in both directions yields the two attention maps;
//! converted features from the opposite view are blended with the target
//! view's own features under the occlusion valid mask.
//!
//! The score is symmetrized, S = (U_l V_r^T + V_l U_r^T) / 2, so swapping
//! the two views transposes the score exactly and the whole module commutes
//! with a left/right swap even for distinct query/key weights.

use crate::error::{Error, Result};
use crate::occlusion::{self, ValidMask};
use crate::tensor::{
    self, batch_matmul, concat_channels, conv2d, elementwise_add, leaky_rectify, slice_lastdim,
    softmax_lastdim, transpose_last2, Tensor,
};

/// Inference batch-norm epsilon.
pub const BN_EPS: f64 = 1e-5;

/// Channel groups in the residual block's convolutions, one per concatenated
/// feature stage.
pub const ATTENTION_GROUPS: usize = 4;

/// Pair of row-stochastic attention maps, each h x w x w. `m_rl` carries
/// right-to-left attention (row w1 of the left view weights right positions),
/// `m_lr` the reverse direction.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMaps {
    m_rl: Tensor,
    m_lr: Tensor,
}

impl AttentionMaps {
    /// Validates matching square maps with nonnegative rows summing to 1.
    pub fn new(m_rl: Tensor, m_lr: Tensor) -> Result<Self> {
        if m_rl.dims() != m_lr.dims() {
            return Err(Error::ShapeMismatch(format!(
                "attention maps differ: {:?} vs {:?}",
                m_rl.dims(),
                m_lr.dims()
            )));
        }
        let (h, w) = match *m_rl.dims() {
            [h, w1, w2] if w1 == w2 => (h, w1),
            _ => {
                return Err(Error::ShapeMismatch(format!(
                    "attention maps must be h x w x w, got {:?}",
                    m_rl.dims()
                )))
            }
        };
        let _ = h;
        for m in [&m_rl, &m_lr] {
            for row in m.data().chunks(w) {
                let mut sum = 0.0f64;
                for &v in row {
                    if v < 0.0 {
                        return Err(Error::InvalidArgument(format!(
                            "attention weight {} is negative",
                            v
                        )));
                    }
                    sum += v as f64;
                }
                if (sum - 1.0).abs() > 1e-4 {
                    return Err(Error::InvalidArgument(format!(
                        "attention row sums to {}, not 1",
                        sum
                    )));
                }
            }
        }
        Ok(Self { m_rl, m_lr })
    }

    pub fn m_rl(&self) -> &Tensor {
        &self.m_rl
    }

    pub fn m_lr(&self) -> &Tensor {
        &self.m_lr
    }

    pub fn height(&self) -> usize {
        self.m_rl.dims()[0]
    }

    pub fn width(&self) -> usize {
        self.m_rl.dims()[1]
    }

    /// The same maps with the two directions exchanged.
    pub fn swapped(&self) -> AttentionMaps {
        AttentionMaps {
            m_rl: self.m_lr.clone(),
            m_lr: self.m_rl.clone(),
        }
    }
}

/// Attention-branch weights. The residual block convs are grouped
/// ([`ATTENTION_GROUPS`] blocks, kernel k x k x (c/groups) x c); the query
/// and key projections are dense 1x1 convs down to the embedding width.
#[derive(Debug, Clone, Copy)]
pub struct BipamWeights<'a> {
    pub bn_scale: &'a Tensor,
    pub bn_shift: &'a Tensor,
    pub bn_mean: &'a Tensor,
    pub bn_var: &'a Tensor,
    pub resb_kernel1: &'a Tensor,
    pub resb_bias1: &'a Tensor,
    pub resb_kernel2: &'a Tensor,
    pub resb_bias2: &'a Tensor,
    pub query_kernel: &'a Tensor,
    pub query_bias: &'a Tensor,
    pub key_kernel: &'a Tensor,
    pub key_bias: &'a Tensor,
}

/// Everything `bipam_forward` produces for one stereo pair.
#[derive(Debug, Clone)]
pub struct BipamOutput {
    pub fused_left: Tensor,
    pub fused_right: Tensor,
    pub maps: AttentionMaps,
    pub valid_left: ValidMask,
    pub valid_right: ValidMask,
}

/// Subtracts the per-(row, channel) mean along the width axis.
pub fn whiten(f: &Tensor) -> Result<Tensor> {
    let (h, w, c) = match *f.dims() {
        [h, w, c] => (h, w, c),
        _ => {
            return Err(Error::ShapeMismatch(format!(
                "whiten input must be h x w x c, got {:?}",
                f.dims()
            )))
        }
    };
    let mut out = vec![0.0f32; f.len()];
    let data = f.data();
    for y in 0..h {
        for ch in 0..c {
            let mut sum = 0.0f64;
            for x in 0..w {
                sum += data[(y * w + x) * c + ch] as f64;
            }
            let mean = sum / w as f64;
            for x in 0..w {
                let i = (y * w + x) * c + ch;
                out[i] = (data[i] as f64 - mean) as f32;
            }
        }
    }
    Tensor::new(f.dims().to_vec(), out)
}

/// Raw parallax score map: S(h, i, j) = <fu(h, i, .), fv(h, j, .)>.
pub fn score_map(fu: &Tensor, fv: &Tensor) -> Result<Tensor> {
    if fu.dims() != fv.dims() {
        return Err(Error::ShapeMismatch(format!(
            "score_map operands differ: {:?} vs {:?}",
            fu.dims(),
            fv.dims()
        )));
    }
    batch_matmul(fu, &transpose_last2(fv)?)
}

/// Row softmax of the score in both directions.
pub fn attention_from_scores(s: &Tensor) -> Result<AttentionMaps> {
    match *s.dims() {
        [_, w1, w2] if w1 == w2 => {}
        _ => {
            return Err(Error::ShapeMismatch(format!(
                "score map must be h x w x w, got {:?}",
                s.dims()
            )))
        }
    }
    let m_rl = softmax_lastdim(s);
    let m_lr = softmax_lastdim(&transpose_last2(s)?);
    Ok(AttentionMaps { m_rl, m_lr })
}

/// Applies one attention direction to features from the opposite view:
/// out(h, w, c) = sum_j m(h, w, j) f(h, j, c).
pub fn convert_features(m: &Tensor, f: &Tensor) -> Result<Tensor> {
    match (m.dims(), f.dims()) {
        ([hm, w1, w2], [hf, wf, _]) if hm == hf && w1 == w2 && w2 == wf => {}
        _ => {
            return Err(Error::ShapeMismatch(format!(
                "convert_features: map {:?} does not act on features {:?}",
                m.dims(),
                f.dims()
            )))
        }
    }
    batch_matmul(m, f)
}

/// Occlusion-aware blend: v * converted + (1 - v) * target, with the h x w
/// mask broadcast over channels. Mask values must lie in [0, 1] (within a
/// 1e-6 slack for rounding).
pub fn fuse_with_mask(converted: &Tensor, target: &Tensor, v: &ValidMask) -> Result<Tensor> {
    if converted.dims() != target.dims() {
        return Err(Error::ShapeMismatch(format!(
            "fuse_with_mask: converted {:?} vs target {:?}",
            converted.dims(),
            target.dims()
        )));
    }
    let (h, w, c) = match *converted.dims() {
        [h, w, c] => (h, w, c),
        _ => {
            return Err(Error::ShapeMismatch(format!(
                "fuse_with_mask features must be h x w x c, got {:?}",
                converted.dims()
            )))
        }
    };
    let mask = v.tensor();
    if mask.dims() != [h, w] {
        return Err(Error::ShapeMismatch(format!(
            "fuse_with_mask: mask {:?} vs features {:?}",
            mask.dims(),
            converted.dims()
        )));
    }
    for &m in mask.data() {
        if !(-1e-6..=1.0 + 1e-6).contains(&m) {
            return Err(Error::InvalidArgument(format!(
                "valid-mask value {} outside [0, 1]",
                m
            )));
        }
    }
    let mut out = vec![0.0f32; converted.len()];
    for (px, &m) in mask.data().iter().enumerate() {
        let base = px * c;
        for ch in 0..c {
            out[base + ch] =
                m * converted.data()[base + ch] + (1.0 - m) * target.data()[base + ch];
        }
    }
    Tensor::new(vec![h, w, c], out)
}

/// Inference batch norm from stored statistics.
fn batch_norm(x: &Tensor, w: &BipamWeights) -> Result<Tensor> {
    let c = match *x.dims() {
        [_, _, c] => c,
        _ => {
            return Err(Error::ShapeMismatch(format!(
                "batch norm input must be h x w x c, got {:?}",
                x.dims()
            )))
        }
    };
    for (name, t) in [
        ("scale", w.bn_scale),
        ("shift", w.bn_shift),
        ("mean", w.bn_mean),
        ("var", w.bn_var),
    ] {
        if t.dims() != [c] {
            return Err(Error::ShapeMismatch(format!(
                "batch norm {} has dims {:?}, input has {} channels",
                name,
                t.dims(),
                c
            )));
        }
    }
    if w.bn_var.data().iter().any(|&v| v <= 0.0) {
        return Err(Error::InvalidArgument(
            "batch norm variance must be strictly positive".into(),
        ));
    }
    let mut out = vec![0.0f32; x.len()];
    for (px, chunk) in x.data().chunks(c).enumerate() {
        for (ch, &v) in chunk.iter().enumerate() {
            let norm = (v as f64 - w.bn_mean.data()[ch] as f64)
                / ((w.bn_var.data()[ch] as f64 + BN_EPS).sqrt());
            out[px * c + ch] =
                (norm * w.bn_scale.data()[ch] as f64 + w.bn_shift.data()[ch] as f64) as f32;
        }
    }
    Tensor::new(x.dims().to_vec(), out)
}

/// Grouped same-padding convolution: kernel is k x k x (c_in/groups) x c_out,
/// output block g reads input block g.
fn grouped_conv(x: &Tensor, kernel: &Tensor, bias: &Tensor, groups: usize) -> Result<Tensor> {
    let c_in = match *x.dims() {
        [_, _, c] => c,
        _ => {
            return Err(Error::ShapeMismatch(format!(
                "grouped conv input must be h x w x c, got {:?}",
                x.dims()
            )))
        }
    };
    let kd = kernel.dims();
    if kd.len() != 4 {
        return Err(Error::ShapeMismatch(format!(
            "grouped conv kernel must be rank 4, got {:?}",
            kd
        )));
    }
    let c_out = kd[3];
    if c_in % groups != 0 || c_out % groups != 0 || kd[2] * groups != c_in {
        return Err(Error::ShapeMismatch(format!(
            "grouped conv: kernel {:?} with {} groups does not match {} input channels",
            kd, groups, c_in
        )));
    }
    let (in_g, out_g) = (c_in / groups, c_out / groups);
    let padding = (kd[0] - 1) / 2;
    let mut parts = Vec::with_capacity(groups);
    for g in 0..groups {
        let xg = slice_lastdim(x, g * in_g, in_g)?;
        let kg = slice_lastdim(kernel, g * out_g, out_g)?;
        let bg = slice_lastdim(bias, g * out_g, out_g)?;
        parts.push(conv2d(&xg, &kg, &bg, padding)?);
    }
    let refs: Vec<&Tensor> = parts.iter().collect();
    concat_channels(&refs)
}

/// Residual block: grouped conv, leaky rectify, grouped conv, skip add.
fn residual_block(x: &Tensor, w: &BipamWeights) -> Result<Tensor> {
    let y = grouped_conv(x, w.resb_kernel1, w.resb_bias1, ATTENTION_GROUPS)?;
    let y = leaky_rectify(&y, tensor::LEAKY_SLOPE);
    let y = grouped_conv(&y, w.resb_kernel2, w.resb_bias2, ATTENTION_GROUPS)?;
    elementwise_add(&y, x)
}

/// Full attention pass over one stereo pair.
///
/// `cat_left`/`cat_right` are the concatenated extraction features
/// (h x w x 4c), `f_left`/`f_right` the per-view features to convert
/// (h x w x c). Returns fused features, the attention maps, and the valid
/// masks. Swapping the left and right arguments swaps the fused outputs and
/// masks and exchanges the two map directions.
pub fn bipam_forward(
    cat_left: &Tensor,
    cat_right: &Tensor,
    f_left: &Tensor,
    f_right: &Tensor,
    w: &BipamWeights,
) -> Result<BipamOutput> {
    if cat_left.dims() != cat_right.dims() || f_left.dims() != f_right.dims() {
        return Err(Error::ShapeMismatch(format!(
            "stereo inputs differ: {:?}/{:?} and {:?}/{:?}",
            cat_left.dims(),
            cat_right.dims(),
            f_left.dims(),
            f_right.dims()
        )));
    }

    let t_l = residual_block(&batch_norm(cat_left, w)?, w)?;
    let t_r = residual_block(&batch_norm(cat_right, w)?, w)?;

    let project = |t: &Tensor, kernel: &Tensor, bias: &Tensor| -> Result<Tensor> {
        whiten(&conv2d(t, kernel, bias, 0)?)
    };
    let u_l = project(&t_l, w.query_kernel, w.query_bias)?;
    let v_l = project(&t_l, w.key_kernel, w.key_bias)?;
    let u_r = project(&t_r, w.query_kernel, w.query_bias)?;
    let v_r = project(&t_r, w.key_kernel, w.key_bias)?;

    let s_uv = score_map(&u_l, &v_r)?;
    let s_vu = score_map(&v_l, &u_r)?;
    let score = Tensor::new(
        s_uv.dims().to_vec(),
        s_uv.data()
            .iter()
            .zip(s_vu.data())
            .map(|(&a, &b)| 0.5 * (a + b))
            .collect(),
    )?;

    let maps = attention_from_scores(&score)?;
    let (valid_left, valid_right) = occlusion::detect_occlusions(&maps);

    let converted_rl = convert_features(maps.m_rl(), f_right)?;
    let converted_lr = convert_features(maps.m_lr(), f_left)?;
    let fused_left = fuse_with_mask(&converted_rl, f_left, &valid_left)?;
    let fused_right = fuse_with_mask(&converted_lr, f_right, &valid_right)?;

    Ok(BipamOutput {
        fused_left,
        fused_right,
        maps,
        valid_left,
        valid_right,
    })
}
