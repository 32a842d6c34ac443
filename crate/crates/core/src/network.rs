//! Full super-resolution forward pass and the weight archive.
//!
//! The network is Siamese: one set of weights processes both views. Features
//! flow through a small conv stem, four cascaded dense blocks, the
//! cross-view attention stage, and a reconstruction trunk ending in a
//! sub-pixel shuffle. Weights are imported through [`WeightArchive`], an
//! ordered name -> tensor map with a fixed slot table per upscaling factor;
//! nothing here is trained.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bipam::{bipam_forward, AttentionMaps, BipamWeights, ATTENTION_GROUPS};
use crate::error::{Error, Result};
use crate::imaging::{RgbImage, StereoPair, Upscale};
use crate::occlusion::ValidMask;
use crate::tensor::{
    self, concat_channels, conv2d, elementwise_add, flip_axis, global_mean_hw, leaky_rectify,
    pixel_shuffle, sigmoid, Tensor,
};

/// Channel width of the feature trunk.
pub const BASE_CHANNELS: usize = 64;
/// Growth rate of the dense blocks.
pub const GROWTH: usize = 24;
/// Channel-attention squeeze ratio.
pub const SQUEEZE_RATIO: usize = 16;

fn conv_slots(name: &str, k: usize, c_in: usize, c_out: usize) -> Vec<(String, Vec<usize>)> {
    vec![
        (format!("{name}.kernel"), vec![k, k, c_in, c_out]),
        (format!("{name}.bias"), vec![c_out]),
    ]
}

fn rdb_slots(prefix: &str, base: usize) -> Vec<(String, Vec<usize>)> {
    let mut slots = Vec::new();
    for i in 0..4 {
        slots.extend(conv_slots(
            &format!("{prefix}.conv{}", i + 1),
            3,
            base + i * GROWTH,
            GROWTH,
        ));
    }
    slots.extend(conv_slots(
        &format!("{prefix}.fuse"),
        1,
        base + 4 * GROWTH,
        base,
    ));
    slots
}

/// Canonical slot list (names and dims) for one upscaling factor.
fn slot_table(scale: Upscale) -> Vec<(String, Vec<usize>)> {
    let cat = 4 * BASE_CHANNELS;
    let mut slots = conv_slots("conv0", 3, 3, BASE_CHANNELS);
    for i in 1..=4 {
        slots.extend(rdb_slots(&format!("extract.rdb{i}"), BASE_CHANNELS));
    }
    slots.extend(conv_slots("conv1f", 3, BASE_CHANNELS, BASE_CHANNELS));
    for stat in ["scale", "shift", "mean", "var"] {
        slots.push((format!("bipam.bn.{stat}"), vec![cat]));
    }
    // Grouped residual-block convs: per-group input slice, full output width.
    slots.extend(conv_slots("bipam.resb.conv1", 3, cat / ATTENTION_GROUPS, cat));
    slots.extend(conv_slots("bipam.resb.conv2", 3, cat / ATTENTION_GROUPS, cat));
    slots.extend(conv_slots("bipam.query", 1, cat, BASE_CHANNELS));
    slots.extend(conv_slots("bipam.key", 1, cat, BASE_CHANNELS));
    slots.extend(rdb_slots("recon.rdbf", 2 * BASE_CHANNELS));
    let squeezed = 2 * BASE_CHANNELS / SQUEEZE_RATIO;
    slots.extend(conv_slots(
        "recon.calayer.squeeze",
        1,
        2 * BASE_CHANNELS,
        squeezed,
    ));
    slots.extend(conv_slots(
        "recon.calayer.excite",
        1,
        squeezed,
        2 * BASE_CHANNELS,
    ));
    slots.extend(conv_slots("conv2f", 1, 2 * BASE_CHANNELS, BASE_CHANNELS));
    for i in 1..=4 {
        slots.extend(rdb_slots(&format!("recon.rdb{i}"), BASE_CHANNELS));
    }
    let s = scale.factor();
    slots.extend(conv_slots("conv3f", 3, BASE_CHANNELS, 3 * s * s));
    slots
}

/// Ordered, validated name -> tensor store for one network instance.
#[derive(Debug, Clone)]
pub struct WeightArchive {
    scale: Upscale,
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl WeightArchive {
    /// Builds an archive from a name -> tensor map, checking that exactly
    /// the slots of the given scale are present with the declared dims.
    pub fn new(scale: Upscale, mut tensors: HashMap<String, Tensor>) -> Result<Self> {
        let mut entries = Vec::new();
        for (name, dims) in slot_table(scale) {
            let t = tensors
                .remove(&name)
                .ok_or_else(|| Error::MissingSlot(name.clone()))?;
            if t.dims() != dims.as_slice() {
                return Err(Error::SlotShape {
                    slot: name,
                    expected: dims,
                    got: t.dims().to_vec(),
                });
            }
            entries.push((name, t));
        }
        if let Some(name) = tensors.into_keys().next() {
            return Err(Error::UnknownSlot(name));
        }
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, (n, _))| (n.clone(), i))
            .collect();
        Ok(Self {
            scale,
            entries,
            index,
        })
    }

    /// All kernels and biases zero; batch-norm statistics neutral (zero
    /// mean and shift, unit variance and scale).
    pub fn zeroed(scale: Upscale) -> Self {
        let map = slot_table(scale)
            .into_iter()
            .map(|(name, dims)| {
                let neutral = name == "bipam.bn.var" || name == "bipam.bn.scale";
                let t = if neutral {
                    Tensor::from_fn(dims, |_| 1.0)
                } else {
                    Tensor::zeros(dims)
                };
                (name, t)
            })
            .collect();
        Self::new(scale, map).expect("generated slots match the table")
    }

    /// Seeded random weights: kernels uniform in +-1/sqrt(fan-in), small
    /// biases, near-neutral batch-norm statistics. Deterministic across
    /// platforms for a given seed.
    pub fn random(scale: Upscale, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let map = slot_table(scale)
            .into_iter()
            .map(|(name, dims)| {
                let t = if name.ends_with(".kernel") {
                    let fan_in = (dims[0] * dims[1] * dims[2]) as f32;
                    let bound = 1.0 / fan_in.sqrt();
                    Tensor::from_fn(dims, |_| rng.gen_range(-bound..bound))
                } else if name == "bipam.bn.var" {
                    Tensor::from_fn(dims, |_| rng.gen_range(0.5..1.5))
                } else if name == "bipam.bn.scale" {
                    Tensor::from_fn(dims, |_| rng.gen_range(0.8..1.2))
                } else if name.starts_with("bipam.bn.") {
                    Tensor::from_fn(dims, |_| rng.gen_range(-0.2..0.2))
                } else {
                    Tensor::from_fn(dims, |_| rng.gen_range(-0.05..0.05))
                };
                (name, t)
            })
            .collect();
        Self::new(scale, map).expect("generated slots match the table")
    }

    pub fn scale(&self) -> Upscale {
        self.scale
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i].1)
            .ok_or_else(|| Error::MissingSlot(name.to_string()))
    }

    /// Replaces one slot; the new tensor must keep the slot's dims.
    pub fn set(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        let i = *self
            .index
            .get(name)
            .ok_or_else(|| Error::UnknownSlot(name.to_string()))?;
        if self.entries[i].1.dims() != tensor.dims() {
            return Err(Error::SlotShape {
                slot: name.to_string(),
                expected: self.entries[i].1.dims().to_vec(),
                got: tensor.dims().to_vec(),
            });
        }
        self.entries[i].1 = tensor;
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    /// Total scalar count across all tensors.
    pub fn param_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// The weight set whose forward pass is the horizontal mirror of this
    /// one: every kernel flips along its horizontal tap axis, and the final
    /// conv's output channels swap their sub-pixel phase dx -> s-1-dx
    /// (the shuffle writes phase dx at output column s*x+dx, so a width
    /// flip exchanges phase columns within each s-block).
    pub fn mirrored(&self) -> Self {
        let s = self.scale.factor();
        let mut entries = self.entries.clone();
        for (name, t) in entries.iter_mut() {
            if name.ends_with(".kernel") {
                *t = flip_axis(t, 1).expect("kernels are rank 4");
            }
        }
        let phase_swap = |c: usize| {
            let (color, rem) = (c / (s * s), c % (s * s));
            color * s * s + (rem / s) * s + (s - 1 - rem % s)
        };
        let i = self.index["conv3f.kernel"];
        let k = &entries[i].1;
        entries[i].1 = Tensor::from_fn(k.dims().to_vec(), |idx| {
            k.at(&[idx[0], idx[1], idx[2], phase_swap(idx[3])])
        });
        let i = self.index["conv3f.bias"];
        let b = &entries[i].1;
        entries[i].1 = Tensor::from_fn(b.dims().to_vec(), |idx| b.at(&[phase_swap(idx[0])]));
        Self {
            scale: self.scale,
            entries,
            index: self.index.clone(),
        }
    }

    /// Borrowed dense-block weight view for the given slot prefix.
    pub fn rdb(&self, prefix: &str) -> Result<RdbWeights<'_>> {
        let pair = |stage: &str| -> Result<(&Tensor, &Tensor)> {
            Ok((
                self.get(&format!("{prefix}.{stage}.kernel"))?,
                self.get(&format!("{prefix}.{stage}.bias"))?,
            ))
        };
        Ok(RdbWeights {
            convs: [pair("conv1")?, pair("conv2")?, pair("conv3")?, pair("conv4")?],
            fuse: pair("fuse")?,
        })
    }

    /// Borrowed attention-stage weight view.
    pub fn bipam(&self) -> Result<BipamWeights<'_>> {
        Ok(BipamWeights {
            bn_scale: self.get("bipam.bn.scale")?,
            bn_shift: self.get("bipam.bn.shift")?,
            bn_mean: self.get("bipam.bn.mean")?,
            bn_var: self.get("bipam.bn.var")?,
            resb_kernel1: self.get("bipam.resb.conv1.kernel")?,
            resb_bias1: self.get("bipam.resb.conv1.bias")?,
            resb_kernel2: self.get("bipam.resb.conv2.kernel")?,
            resb_bias2: self.get("bipam.resb.conv2.bias")?,
            query_kernel: self.get("bipam.query.kernel")?,
            query_bias: self.get("bipam.query.bias")?,
            key_kernel: self.get("bipam.key.kernel")?,
            key_bias: self.get("bipam.key.bias")?,
        })
    }

    /// Writes the archive in the binary container format (see README).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(b"IPSR")?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&(self.scale.factor() as u32).to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, t) in &self.entries {
            w.write_all(&(name.len() as u16).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&[t.rank() as u8])?;
            for &d in t.dims() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for &v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads an archive, validating the container and the slot table.
    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != b"IPSR" {
            return Err(Error::BadMagic);
        }
        let version = read_u32(&mut r)?;
        if version != 1 {
            return Err(Error::UnsupportedVersion(version));
        }
        let scale = Upscale::from_factor(read_u32(&mut r)?)?;
        let count = read_u32(&mut r)?;
        let mut map = HashMap::new();
        for _ in 0..count {
            let name_len = read_u16(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            read_exact(&mut r, &mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::UnsupportedFormat("slot name is not UTF-8".into()))?;
            let mut rank = [0u8; 1];
            read_exact(&mut r, &mut rank)?;
            let mut dims = Vec::with_capacity(rank[0] as usize);
            let mut len = 1usize;
            for _ in 0..rank[0] {
                let d = read_u32(&mut r)? as usize;
                len = len.checked_mul(d).filter(|&n| n <= 1 << 28).ok_or_else(|| {
                    Error::UnsupportedFormat(format!("slot `{name}` is implausibly large"))
                })?;
                dims.push(d);
            }
            let mut bytes = vec![0u8; len * 4];
            read_exact(&mut r, &mut bytes)?;
            let data = bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            if map.insert(name.clone(), Tensor::new(dims, data)?).is_some() {
                return Err(Error::UnsupportedFormat(format!(
                    "duplicate slot `{name}`"
                )));
            }
        }
        Self::new(scale, map)
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            Error::Truncated
        } else {
            Error::Io(e)
        }
    })
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u16(r: &mut impl Read) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b)?;
    Ok(u16::from_le_bytes(b))
}

/// One dense block: four 3x3 convs plus the 1x1 fusion, with biases.
pub struct RdbWeights<'a> {
    pub convs: [(&'a Tensor, &'a Tensor); 4],
    pub fuse: (&'a Tensor, &'a Tensor),
}

/// Dense block forward: each conv reads the concatenation of the block
/// input and all earlier conv outputs; the 1x1 fusion maps the full
/// concatenation back to the input width, then the input is added back.
pub fn rdb_forward(x: &Tensor, w: &RdbWeights) -> Result<Tensor> {
    let mut cat = x.clone();
    for (kernel, bias) in &w.convs {
        if kernel.dims().last() != Some(&GROWTH) {
            return Err(Error::ShapeMismatch(format!(
                "dense-block conv must produce {} channels, kernel is {:?}",
                GROWTH,
                kernel.dims()
            )));
        }
        let y = leaky_rectify(&conv2d(&cat, kernel, bias, 1)?, tensor::LEAKY_SLOPE);
        cat = concat_channels(&[&cat, &y])?;
    }
    let fused = conv2d(&cat, w.fuse.0, w.fuse.1, 0)?;
    elementwise_add(&fused, x)
}

/// Channel attention: global average pool, squeeze conv, leaky rectify,
/// excite conv, sigmoid gate, channelwise rescale of the input.
pub fn calayer_forward(
    x: &Tensor,
    squeeze: (&Tensor, &Tensor),
    excite: (&Tensor, &Tensor),
) -> Result<Tensor> {
    let pooled = global_mean_hw(x)?;
    let hidden = leaky_rectify(&conv2d(&pooled, squeeze.0, squeeze.1, 0)?, tensor::LEAKY_SLOPE);
    let gate = sigmoid(&conv2d(&hidden, excite.0, excite.1, 0)?);
    let (h, w, c) = match *x.dims() {
        [h, w, c] => (h, w, c),
        _ => {
            return Err(Error::ShapeMismatch(format!(
                "channel attention input must be h x w x c, got {:?}",
                x.dims()
            )))
        }
    };
    if gate.dims() != [1, 1, c] {
        return Err(Error::ShapeMismatch(format!(
            "channel gate is {:?}, input has {} channels",
            gate.dims(),
            c
        )));
    }
    let mut out = Vec::with_capacity(x.len());
    for px in 0..h * w {
        for ch in 0..c {
            out.push(x.data()[px * c + ch] * gate.data()[ch]);
        }
    }
    Tensor::new(vec![h, w, c], out)
}

/// Everything the Siamese extraction trunk produces for one view.
pub struct ExtractedFeatures {
    /// Stem output.
    pub f0: Tensor,
    /// The four dense-block outputs in order.
    pub rdb: [Tensor; 4],
    /// Channel concatenation of the four block outputs (attention input).
    pub concat: Tensor,
    /// Features handed to cross-view conversion and fusion.
    pub conv1f: Tensor,
}

/// Runs the extraction trunk on one view.
pub fn extract_features(img: &RgbImage, w: &WeightArchive) -> Result<ExtractedFeatures> {
    let f0 = conv2d(img.planes(), w.get("conv0.kernel")?, w.get("conv0.bias")?, 1)?;
    let mut outs = Vec::with_capacity(4);
    let mut cur = f0.clone();
    for i in 1..=4 {
        cur = rdb_forward(&cur, &w.rdb(&format!("extract.rdb{i}"))?)?;
        outs.push(cur.clone());
    }
    let concat = concat_channels(&[&outs[0], &outs[1], &outs[2], &outs[3]])?;
    let conv1f = conv2d(&outs[3], w.get("conv1f.kernel")?, w.get("conv1f.bias")?, 1)?;
    let rdb: [Tensor; 4] = outs.try_into().expect("four blocks");
    Ok(ExtractedFeatures {
        f0,
        rdb,
        concat,
        conv1f,
    })
}

/// Reconstruction trunk for one view: fuse the cross-view features with the
/// view's own, refine, and shuffle up to the output resolution.
pub fn reconstruct(
    fused: &Tensor,
    f_target: &Tensor,
    w: &WeightArchive,
    scale: Upscale,
) -> Result<RgbImage> {
    if scale != w.scale() {
        return Err(Error::InvalidArgument(format!(
            "requested {}x output from a {}x archive",
            scale.factor(),
            w.scale().factor()
        )));
    }
    let cat = concat_channels(&[fused, f_target])?;
    let x = rdb_forward(&cat, &w.rdb("recon.rdbf")?)?;
    let x = calayer_forward(
        &x,
        (
            w.get("recon.calayer.squeeze.kernel")?,
            w.get("recon.calayer.squeeze.bias")?,
        ),
        (
            w.get("recon.calayer.excite.kernel")?,
            w.get("recon.calayer.excite.bias")?,
        ),
    )?;
    let mut cur = conv2d(&x, w.get("conv2f.kernel")?, w.get("conv2f.bias")?, 0)?;
    for i in 1..=4 {
        cur = rdb_forward(&cur, &w.rdb(&format!("recon.rdb{i}"))?)?;
    }
    let pre = conv2d(&cur, w.get("conv3f.kernel")?, w.get("conv3f.bias")?, 1)?;
    let shuffled = pixel_shuffle(&pre, scale.factor())?;
    RgbImage::from_planes(shuffled)
}

/// Super-resolved pair plus the attention state it was built from.
#[derive(Debug, Clone)]
pub struct SrOutput {
    pub sr: StereoPair,
    pub maps: AttentionMaps,
    pub valid_left: ValidMask,
    pub valid_right: ValidMask,
}

/// Full forward pass: extraction on both views with shared weights,
/// cross-view attention, occlusion masking, and per-view reconstruction.
/// Both views are super-resolved in the one call; swapping the input views
/// swaps the outputs exactly.
pub fn ipassr_forward(pair: &StereoPair, w: &WeightArchive) -> Result<SrOutput> {
    if pair.left.height() < 8 || pair.left.width() < 8 {
        return Err(Error::InvalidArgument(format!(
            "input views are {}x{}, need at least 8x8",
            pair.left.height(),
            pair.left.width()
        )));
    }
    let left = extract_features(&pair.left, w)?;
    let right = extract_features(&pair.right, w)?;
    let attention = bipam_forward(
        &left.concat,
        &right.concat,
        &left.conv1f,
        &right.conv1f,
        &w.bipam()?,
    )?;
    let sr_left = reconstruct(&attention.fused_left, &left.conv1f, w, w.scale())?;
    let sr_right = reconstruct(&attention.fused_right, &right.conv1f, w, w.scale())?;
    Ok(SrOutput {
        sr: StereoPair::new(sr_left, sr_right)?,
        maps: attention.maps,
        valid_left: attention.valid_left,
        valid_right: attention.valid_right,
    })
}
