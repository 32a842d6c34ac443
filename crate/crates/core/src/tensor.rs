//! Dense rank-1..4 f32 tensors in row-major layout, plus the numeric
//! kernels the network is built from.
//!
//! Reductions (convolution taps, matmul dot products, softmax row sums,
//! means) accumulate in f64 and round once on write-back, so row-stochastic
//! outputs stay within 1e-6 of exact even for wide rows.

use crate::error::{Error, Result};

/// Negative-side slope shared by every activation in the network.
pub const LEAKY_SLOPE: f32 = 0.1;

pub const MAX_RANK: usize = 4;

/// Dense row-major f32 tensor with 1 to 4 extents.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Builds a tensor from explicit extents and row-major data.
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        check_dims(&dims)?;
        let len: usize = dims.iter().product();
        if data.len() != len {
            return Err(Error::ShapeMismatch(format!(
                "dims {:?} require {} values, got {}",
                dims,
                len,
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    /// All-zero tensor. Panics on malformed extents (programmer error).
    pub fn zeros(dims: Vec<usize>) -> Self {
        check_dims(&dims).expect("valid tensor extents");
        let len = dims.iter().product();
        Self {
            dims,
            data: vec![0.0; len],
        }
    }

    /// Fills a tensor by evaluating `f` at every multi-index.
    pub fn from_fn(dims: Vec<usize>, mut f: impl FnMut(&[usize]) -> f32) -> Self {
        check_dims(&dims).expect("valid tensor extents");
        let len: usize = dims.iter().product();
        let mut data = Vec::with_capacity(len);
        let mut idx = vec![0usize; dims.len()];
        for _ in 0..len {
            data.push(f(&idx));
            for axis in (0..dims.len()).rev() {
                idx[axis] += 1;
                if idx[axis] < dims[axis] {
                    break;
                }
                idx[axis] = 0;
            }
        }
        Self { dims, data }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Value at a full multi-index.
    pub fn at(&self, idx: &[usize]) -> f32 {
        self.data[self.offset(idx)]
    }

    fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        let mut off = 0;
        for (axis, &i) in idx.iter().enumerate() {
            debug_assert!(i < self.dims[axis]);
            off = off * self.dims[axis] + i;
        }
        off
    }
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.is_empty() || dims.len() > MAX_RANK {
        return Err(Error::ShapeMismatch(format!(
            "rank {} outside 1..={}",
            dims.len(),
            MAX_RANK
        )));
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::ShapeMismatch(format!("zero extent in {:?}", dims)));
    }
    Ok(())
}

fn dims3<'a>(t: &'a Tensor, what: &str) -> Result<(usize, usize, usize)> {
    match *t.dims() {
        [h, w, c] => Ok((h, w, c)),
        _ => Err(Error::ShapeMismatch(format!(
            "{} must be rank 3 (h, w, c), got {:?}",
            what,
            t.dims()
        ))),
    }
}

/// 2-D cross-correlation with stride 1 and zero padding that preserves the
/// spatial extents. `input` is h x w x c_in, `kernel` is k x k x c_in x c_out
/// with odd k, `bias` has length c_out, and `padding` must equal (k - 1) / 2.
pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: &Tensor, padding: usize) -> Result<Tensor> {
    let (h, w, ci) = dims3(input, "conv2d input")?;
    let kd = kernel.dims();
    if kd.len() != 4 || kd[0] != kd[1] {
        return Err(Error::ShapeMismatch(format!(
            "conv2d kernel must be k x k x c_in x c_out, got {:?}",
            kd
        )));
    }
    let k = kd[0];
    if k % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "conv2d kernel extent {} must be odd",
            k
        )));
    }
    if kd[2] != ci {
        return Err(Error::ShapeMismatch(format!(
            "conv2d kernel expects {} input channels, input has {}",
            kd[2], ci
        )));
    }
    let co = kd[3];
    if bias.dims() != [co] {
        return Err(Error::ShapeMismatch(format!(
            "conv2d bias must have dims [{}], got {:?}",
            co,
            bias.dims()
        )));
    }
    if padding != (k - 1) / 2 {
        return Err(Error::InvalidArgument(format!(
            "conv2d padding {} does not preserve extents for kernel {} (need {})",
            padding,
            k,
            (k - 1) / 2
        )));
    }

    let p = padding as isize;
    let row_stride = w * ci;
    let k_dy = k * ci * co;
    let k_dx = ci * co;
    let mut out = vec![0.0f32; h * w * co];
    let mut acc = vec![0.0f64; co];
    for y in 0..h {
        for x in 0..w {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for dy in 0..k {
                let yy = y as isize + dy as isize - p;
                if yy < 0 || yy >= h as isize {
                    continue;
                }
                for dx in 0..k {
                    let xx = x as isize + dx as isize - p;
                    if xx < 0 || xx >= w as isize {
                        continue;
                    }
                    let ibase = yy as usize * row_stride + xx as usize * ci;
                    let kbase = dy * k_dy + dx * k_dx;
                    for c in 0..ci {
                        let v = input.data[ibase + c] as f64;
                        let krow = kbase + c * co;
                        for o in 0..co {
                            acc[o] += v * kernel.data[krow + o] as f64;
                        }
                    }
                }
            }
            let obase = (y * w + x) * co;
            for o in 0..co {
                out[obase + o] = (acc[o] + bias.data[o] as f64) as f32;
            }
        }
    }
    Tensor::new(vec![h, w, co], out)
}

/// Batched matrix product: (b x p x q) times (b x q x r) gives b x p x r.
pub fn batch_matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ba, p, q) = dims3(a, "batch_matmul lhs")?;
    let (bb, qb, r) = dims3(b, "batch_matmul rhs")?;
    if ba != bb || q != qb {
        return Err(Error::ShapeMismatch(format!(
            "batch_matmul {:?} x {:?}: batch and inner extents must agree",
            a.dims(),
            b.dims()
        )));
    }
    let mut out = vec![0.0f32; ba * p * r];
    for bi in 0..ba {
        let abase = bi * p * q;
        let bbase = bi * q * r;
        let obase = bi * p * r;
        for i in 0..p {
            for j in 0..r {
                let mut acc = 0.0f64;
                for t in 0..q {
                    acc += a.data[abase + i * q + t] as f64 * b.data[bbase + t * r + j] as f64;
                }
                out[obase + i * r + j] = acc as f32;
            }
        }
    }
    Tensor::new(vec![ba, p, r], out)
}

/// Diagnostics hook: perturbation added to the first entry of every softmax
/// row. Zero (the default) leaves results untouched; the self-test injects a
/// nonzero value to prove its invariant checks can detect a broken kernel.
static SOFTMAX_FAULT: std::sync::atomic::AtomicU32 = std::sync::atomic::AtomicU32::new(0);

pub fn inject_softmax_fault(eps: f32) {
    SOFTMAX_FAULT.store(eps.to_bits(), std::sync::atomic::Ordering::Relaxed);
}

/// Softmax along the last extent, with max subtraction for stability.
pub fn softmax_lastdim(t: &Tensor) -> Tensor {
    let fault = f32::from_bits(SOFTMAX_FAULT.load(std::sync::atomic::Ordering::Relaxed));
    let row = *t.dims.last().expect("tensor has at least one extent");
    let mut out = vec![0.0f32; t.data.len()];
    for (src, dst) in t.data.chunks(row).zip(out.chunks_mut(row)) {
        let max = src.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f64;
        let mut exps = vec![0.0f64; row];
        for (e, &v) in exps.iter_mut().zip(src) {
            *e = ((v - max) as f64).exp();
            sum += *e;
        }
        for (d, e) in dst.iter_mut().zip(exps) {
            *d = (e / sum) as f32;
        }
        if fault != 0.0 {
            dst[0] += fault;
        }
    }
    Tensor {
        dims: t.dims.clone(),
        data: out,
    }
}

/// Swaps the last two extents.
pub fn transpose_last2(t: &Tensor) -> Result<Tensor> {
    if t.rank() < 2 {
        return Err(Error::ShapeMismatch(format!(
            "transpose_last2 needs rank >= 2, got {:?}",
            t.dims()
        )));
    }
    let n = t.rank();
    let rows = t.dims[n - 2];
    let cols = t.dims[n - 1];
    let batches = t.data.len() / (rows * cols);
    let mut dims = t.dims.clone();
    dims.swap(n - 2, n - 1);
    let mut out = vec![0.0f32; t.data.len()];
    for b in 0..batches {
        let base = b * rows * cols;
        for i in 0..rows {
            for j in 0..cols {
                out[base + j * rows + i] = t.data[base + i * cols + j];
            }
        }
    }
    Ok(Tensor { dims, data: out })
}

/// Rearranges an h x w x (r*r*c) tensor into (r*h) x (r*w) x c by moving
/// each channel block of r*r values onto an r x r spatial phase grid:
/// out(r*y + dy, r*x + dx, c) = in(y, x, c*r*r + dy*r + dx).
pub fn pixel_shuffle(t: &Tensor, r: usize) -> Result<Tensor> {
    let (h, w, c) = dims3(t, "pixel_shuffle input")?;
    if r == 0 {
        return Err(Error::InvalidArgument("pixel_shuffle factor 0".into()));
    }
    if c % (r * r) != 0 {
        return Err(Error::ShapeMismatch(format!(
            "pixel_shuffle: {} channels not divisible by {}",
            c,
            r * r
        )));
    }
    let co = c / (r * r);
    let (oh, ow) = (h * r, w * r);
    let mut out = vec![0.0f32; oh * ow * co];
    for y in 0..h {
        for x in 0..w {
            let ibase = (y * w + x) * c;
            for oc in 0..co {
                for dy in 0..r {
                    for dx in 0..r {
                        let v = t.data[ibase + oc * r * r + dy * r + dx];
                        out[((y * r + dy) * ow + (x * r + dx)) * co + oc] = v;
                    }
                }
            }
        }
    }
    Tensor::new(vec![oh, ow, co], out)
}

/// Leaky rectification: x for x >= 0, slope * x otherwise.
pub fn leaky_rectify(t: &Tensor, slope: f32) -> Tensor {
    let data = t
        .data
        .iter()
        .map(|&v| if v >= 0.0 { v } else { slope * v })
        .collect();
    Tensor {
        dims: t.dims.clone(),
        data,
    }
}

/// Logistic sigmoid, elementwise.
pub fn sigmoid(t: &Tensor) -> Tensor {
    let data = t
        .data
        .iter()
        .map(|&v| (1.0 / (1.0 + (-v as f64).exp())) as f32)
        .collect();
    Tensor {
        dims: t.dims.clone(),
        data,
    }
}

/// Concatenates rank-3 tensors along the channel extent.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(Error::InvalidArgument("concat_channels of nothing".into()));
    }
    let (h, w, _) = dims3(parts[0], "concat_channels input")?;
    let mut co = 0;
    for part in parts {
        let (ph, pw, pc) = dims3(part, "concat_channels input")?;
        if (ph, pw) != (h, w) {
            return Err(Error::ShapeMismatch(format!(
                "concat_channels: spatial extents {:?} vs {:?}",
                (h, w),
                (ph, pw)
            )));
        }
        co += pc;
    }
    let mut out = vec![0.0f32; h * w * co];
    for y in 0..h {
        for x in 0..w {
            let mut dst = (y * w + x) * co;
            for part in parts {
                let pc = part.dims[2];
                let src = (y * w + x) * pc;
                out[dst..dst + pc].copy_from_slice(&part.data[src..src + pc]);
                dst += pc;
            }
        }
    }
    Tensor::new(vec![h, w, co], out)
}

pub fn elementwise_add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dims != b.dims {
        return Err(Error::ShapeMismatch(format!(
            "elementwise_add {:?} vs {:?}",
            a.dims, b.dims
        )));
    }
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
    Ok(Tensor {
        dims: a.dims.clone(),
        data,
    })
}

pub fn elementwise_mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dims != b.dims {
        return Err(Error::ShapeMismatch(format!(
            "elementwise_mul {:?} vs {:?}",
            a.dims, b.dims
        )));
    }
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect();
    Ok(Tensor {
        dims: a.dims.clone(),
        data,
    })
}

/// Mean over the spatial extents of an h x w x c tensor, kept as 1 x 1 x c.
pub fn global_mean_hw(t: &Tensor) -> Result<Tensor> {
    let (h, w, c) = dims3(t, "global_mean_hw input")?;
    let mut acc = vec![0.0f64; c];
    for px in t.data.chunks(c) {
        for (a, &v) in acc.iter_mut().zip(px) {
            *a += v as f64;
        }
    }
    let n = (h * w) as f64;
    let data = acc.iter().map(|&a| (a / n) as f32).collect();
    Tensor::new(vec![1, 1, c], data)
}

/// Reverses a tensor along one axis.
pub fn flip_axis(t: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= t.rank() {
        return Err(Error::InvalidArgument(format!(
            "flip_axis {} on rank {}",
            axis,
            t.rank()
        )));
    }
    let n = t.dims[axis];
    let inner: usize = t.dims[axis + 1..].iter().product();
    let outer: usize = t.dims[..axis].iter().product();
    let mut out = vec![0.0f32; t.data.len()];
    for o in 0..outer {
        for i in 0..n {
            let src = (o * n + i) * inner;
            let dst = (o * n + (n - 1 - i)) * inner;
            out[dst..dst + inner].copy_from_slice(&t.data[src..src + inner]);
        }
    }
    Ok(Tensor {
        dims: t.dims.clone(),
        data: out,
    })
}

/// Copies a contiguous range of the last extent.
pub fn slice_lastdim(t: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let last = *t.dims.last().expect("tensor has at least one extent");
    if len == 0 || start + len > last {
        return Err(Error::InvalidArgument(format!(
            "slice_lastdim {}..{} outside extent {}",
            start,
            start + len,
            last
        )));
    }
    let rows = t.data.len() / last;
    let mut out = Vec::with_capacity(rows * len);
    for row in t.data.chunks(last) {
        out.extend_from_slice(&row[start..start + len]);
    }
    let mut dims = t.dims.clone();
    *dims.last_mut().unwrap() = len;
    Tensor::new(dims, out)
}
