//! Image I/O, bicubic rescaling, residual images, and quality metrics.
//!
//! Pixel values live in [0, 1] as f32 planes. PNG I/O is restricted to 8-bit
//! RGB; loading divides by 255, saving rounds v * 255 and clamps. Rescaling
//! uses the separable cubic convolution kernel with a = -0.5; when
//! downscaling with antialias enabled the kernel support is widened by the
//! inverse scale, and weights are renormalized so constants are preserved.
//! Samples past the border clamp to the nearest edge coordinate.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Metric protocols: `CroppedLeft` scores the left view with the leftmost
/// [`EVAL_CROP_COLUMNS`] columns dropped; `StereoAverage` scores both full
/// views and averages them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    CroppedLeft,
    StereoAverage,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::CroppedLeft => "cropped-left",
            Protocol::StereoAverage => "stereo-average",
        }
    }
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cropped-left" => Ok(Protocol::CroppedLeft),
            "stereo-average" => Ok(Protocol::StereoAverage),
            other => Err(Error::InvalidArgument(format!(
                "unknown protocol `{}` (expected cropped-left or stereo-average)",
                other
            ))),
        }
    }
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Columns dropped from the left view under the cropped-left protocol.
pub const EVAL_CROP_COLUMNS: usize = 64;

/// Reported in place of an infinite ratio for identical images.
pub const PSNR_SENTINEL_DB: f64 = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub protocol: Protocol,
}

/// RGB raster with an h x w x 3 plane tensor, every value in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    planes: Tensor,
}

impl RgbImage {
    /// Wraps an h x w x 3 tensor, clamping every value into [0, 1].
    pub fn from_planes(planes: Tensor) -> Result<Self> {
        match *planes.dims() {
            [_, _, 3] => {}
            _ => {
                return Err(Error::ShapeMismatch(format!(
                    "image planes must be h x w x 3, got {:?}",
                    planes.dims()
                )))
            }
        }
        let mut planes = planes;
        for v in planes.data_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Self { planes })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        Self::from_planes(Tensor::from_fn(vec![height, width, 3], |i| rgb[i[2]]))
            .expect("constructed planes are valid")
    }

    pub fn height(&self) -> usize {
        self.planes.dims()[0]
    }

    pub fn width(&self) -> usize {
        self.planes.dims()[1]
    }

    pub fn planes(&self) -> &Tensor {
        &self.planes
    }

    pub fn into_planes(self) -> Tensor {
        self.planes
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        [
            self.planes.at(&[y, x, 0]),
            self.planes.at(&[y, x, 1]),
            self.planes.at(&[y, x, 2]),
        ]
    }
}

/// Decodes an 8-bit RGB PNG; any other layout is rejected.
pub fn load_png(path: &Path) -> Result<RgbImage> {
    let decoded = image::open(path)?;
    let rgb = match decoded {
        image::DynamicImage::ImageRgb8(img) => img,
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: need 8-bit RGB PNG, got {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let raw = rgb.into_raw();
    let data = raw.iter().map(|&b| b as f32 / 255.0).collect();
    RgbImage::from_planes(Tensor::new(vec![h, w, 3], data)?)
}

/// Encodes as 8-bit RGB PNG, quantizing with round(v * 255).
pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = img
        .planes
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, bytes)
        .expect("plane byte count matches extents");
    buf.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Saves a rank-2 tensor of [0, 1] values as an 8-bit grayscale PNG.
pub fn save_gray_png(t: &Tensor, path: &Path) -> Result<()> {
    let (h, w) = match *t.dims() {
        [h, w] => (h, w),
        _ => {
            return Err(Error::ShapeMismatch(format!(
                "grayscale save needs a rank-2 tensor, got {:?}",
                t.dims()
            )))
        }
    };
    let bytes: Vec<u8> = t
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf = image::GrayImage::from_raw(w as u32, h as u32, bytes)
        .expect("byte count matches extents");
    buf.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Supported rescale ratios.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResizeScale {
    Down4,
    Down2,
    Up2,
    Up4,
}

impl ResizeScale {
    /// Ratio as (numerator, denominator) of output extent over input extent.
    pub fn ratio(self) -> (usize, usize) {
        match self {
            ResizeScale::Down4 => (1, 4),
            ResizeScale::Down2 => (1, 2),
            ResizeScale::Up2 => (2, 1),
            ResizeScale::Up4 => (4, 1),
        }
    }

    pub fn is_downscale(self) -> bool {
        matches!(self, ResizeScale::Down4 | ResizeScale::Down2)
    }
}

/// Super-resolution factors the network supports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Upscale {
    X2,
    X4,
}

impl Upscale {
    pub fn factor(self) -> usize {
        match self {
            Upscale::X2 => 2,
            Upscale::X4 => 4,
        }
    }

    pub fn from_factor(s: u32) -> Result<Self> {
        match s {
            2 => Ok(Upscale::X2),
            4 => Ok(Upscale::X4),
            other => Err(Error::UnsupportedScale(other)),
        }
    }

    pub fn up(self) -> ResizeScale {
        match self {
            Upscale::X2 => ResizeScale::Up2,
            Upscale::X4 => ResizeScale::Up4,
        }
    }

    pub fn down(self) -> ResizeScale {
        match self {
            Upscale::X2 => ResizeScale::Down2,
            Upscale::X4 => ResizeScale::Down4,
        }
    }
}

/// Cubic convolution kernel with a = -0.5.
fn cubic(x: f64) -> f64 {
    let x = x.abs();
    if x < 1.0 {
        (1.5 * x - 2.5) * x * x + 1.0
    } else if x < 2.0 {
        ((-0.5 * x + 2.5) * x - 4.0) * x + 2.0
    } else {
        0.0
    }
}

struct ResampleTap {
    /// Source indices, already clamped to the valid range.
    indices: Vec<usize>,
    /// Normalized kernel weights, one per index.
    weights: Vec<f64>,
}

/// Tap table for resampling one axis from `n_in` samples by `num/den`.
fn axis_taps(n_in: usize, num: usize, den: usize, antialias: bool) -> Vec<ResampleTap> {
    let n_out = n_in * num / den;
    let scale = num as f64 / den as f64;
    // Widening the kernel by 1/scale low-passes before decimation.
    let kernel_scale = if scale < 1.0 && antialias { scale } else { 1.0 };
    let support = 2.0 / kernel_scale;
    let mut taps = Vec::with_capacity(n_out);
    for i in 0..n_out {
        let u = (i as f64 + 0.5) / scale - 0.5;
        let lo = (u - support).ceil() as i64;
        let hi = (u + support).floor() as i64;
        let mut indices = Vec::new();
        let mut weights = Vec::new();
        let mut sum = 0.0;
        for j in lo..=hi {
            let w = cubic((u - j as f64) * kernel_scale);
            if w == 0.0 {
                continue;
            }
            indices.push(j.clamp(0, n_in as i64 - 1) as usize);
            weights.push(w);
            sum += w;
        }
        for w in &mut weights {
            *w /= sum;
        }
        taps.push(ResampleTap { indices, weights });
    }
    taps
}

fn resample_axes(planes: &Tensor, scale: ResizeScale, antialias: bool) -> Result<Tensor> {
    let (h, w, c) = (planes.dims()[0], planes.dims()[1], planes.dims()[2]);
    let (num, den) = scale.ratio();
    if h % den != 0 || w % den != 0 {
        return Err(Error::InvalidArgument(format!(
            "extents {}x{} not divisible by {} for downscale",
            h, w, den
        )));
    }
    let (oh, ow) = (h * num / den, w * num / den);

    // Width pass.
    let wtaps = axis_taps(w, num, den, antialias);
    let mut mid = vec![0.0f64; h * ow * c];
    let src = planes.data();
    for y in 0..h {
        for (x, tap) in wtaps.iter().enumerate() {
            let dst = (y * ow + x) * c;
            for (&j, &wgt) in tap.indices.iter().zip(&tap.weights) {
                let s = (y * w + j) * c;
                for ch in 0..c {
                    mid[dst + ch] += wgt * src[s + ch] as f64;
                }
            }
        }
    }

    // Height pass.
    let htaps = axis_taps(h, num, den, antialias);
    let mut out = vec![0.0f32; oh * ow * c];
    for (y, tap) in htaps.iter().enumerate() {
        for x in 0..ow {
            let dst = (y * ow + x) * c;
            for ch in 0..c {
                let mut acc = 0.0f64;
                for (&j, &wgt) in tap.indices.iter().zip(&tap.weights) {
                    acc += wgt * mid[(j * ow + x) * c + ch];
                }
                out[dst + ch] = acc as f32;
            }
        }
    }
    Tensor::new(vec![oh, ow, c], out)
}

/// Rescales an image by one of the supported ratios. `antialias` only
/// affects downscaling; upscales always use the plain kernel.
pub fn bicubic_resize(img: &RgbImage, scale: ResizeScale, antialias: bool) -> Result<RgbImage> {
    RgbImage::from_planes(resample_axes(img.planes(), scale, antialias)?)
}

/// Residual image |hr - upscale(lr)| downscaled back to LR extents.
/// Downscaling applies antialias, matching how LR inputs are produced.
pub fn residual_image(hr: &RgbImage, lr: &RgbImage, scale: Upscale) -> Result<Tensor> {
    let s = scale.factor();
    if hr.height() != lr.height() * s || hr.width() != lr.width() * s {
        return Err(Error::ShapeMismatch(format!(
            "residual_image: hr {}x{} is not {}x lr {}x{}",
            hr.height(),
            hr.width(),
            s,
            lr.height(),
            lr.width()
        )));
    }
    let up = bicubic_resize(lr, scale.up(), true)?;
    let diff = Tensor::new(
        hr.planes().dims().to_vec(),
        hr.planes()
            .data()
            .iter()
            .zip(up.planes().data())
            .map(|(&a, &b)| (a - b).abs())
            .collect(),
    )?;
    // The absolute difference of two [0, 1] images is itself a valid image,
    // so the clamped image resize applies directly.
    let down = bicubic_resize(&RgbImage::from_planes(diff)?, scale.down(), true)?;
    Ok(down.into_planes())
}

/// Peak signal-to-noise ratio over all RGB samples, in decibels.
/// Identical inputs report [`PSNR_SENTINEL_DB`].
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    if a.planes().dims() != b.planes().dims() {
        return Err(Error::ShapeMismatch(format!(
            "psnr: {:?} vs {:?}",
            a.planes().dims(),
            b.planes().dims()
        )));
    }
    let mut acc = 0.0f64;
    for (&x, &y) in a.planes().data().iter().zip(b.planes().data()) {
        let d = x as f64 - y as f64;
        acc += d * d;
    }
    let mse = acc / a.planes().len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_SENTINEL_DB);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for y in 0..SSIM_WINDOW {
        for x in 0..SSIM_WINDOW {
            let dy = y as f64 - half;
            let dx = x as f64 - half;
            w.push((-(dy * dy + dx * dx) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
        }
    }
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Mean structural similarity: 11x11 Gaussian windows (sigma 1.5) over every
/// valid position, computed per channel and averaged. Needs extents >= 11.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    if a.planes().dims() != b.planes().dims() {
        return Err(Error::ShapeMismatch(format!(
            "ssim: {:?} vs {:?}",
            a.planes().dims(),
            b.planes().dims()
        )));
    }
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs extents >= {}, got {}x{}",
            SSIM_WINDOW, h, w
        )));
    }
    let window = gaussian_window();
    let c1 = (SSIM_K1) * (SSIM_K1);
    let c2 = (SSIM_K2) * (SSIM_K2);
    let pa = a.planes().data();
    let pb = b.planes().data();
    let mut total = 0.0f64;
    let mut count = 0usize;
    for ch in 0..3 {
        for y0 in 0..=(h - SSIM_WINDOW) {
            for x0 in 0..=(w - SSIM_WINDOW) {
                let (mut mx, mut my, mut mxx, mut myy, mut mxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for wy in 0..SSIM_WINDOW {
                    for wx in 0..SSIM_WINDOW {
                        let g = window[wy * SSIM_WINDOW + wx];
                        let i = ((y0 + wy) * w + (x0 + wx)) * 3 + ch;
                        let x = pa[i] as f64;
                        let y = pb[i] as f64;
                        mx += g * x;
                        my += g * y;
                        mxx += g * x * x;
                        myy += g * y * y;
                        mxy += g * x * y;
                    }
                }
                let vx = mxx - mx * mx;
                let vy = myy - my * my;
                let cov = mxy - mx * my;
                let score = ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
                total += score;
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// Drops the leftmost `cols` columns.
pub fn crop_left(img: &RgbImage, cols: usize) -> Result<RgbImage> {
    if img.width() <= cols {
        return Err(Error::InvalidArgument(format!(
            "cannot drop {} columns from width {}",
            cols,
            img.width()
        )));
    }
    let (h, w) = (img.height(), img.width());
    let planes = Tensor::from_fn(vec![h, w - cols, 3], |i| {
        img.planes().at(&[i[0], i[1] + cols, i[2]])
    });
    RgbImage::from_planes(planes)
}

/// Stereo pair with matching extents.
#[derive(Debug, Clone, PartialEq)]
pub struct StereoPair {
    pub left: RgbImage,
    pub right: RgbImage,
}

impl StereoPair {
    pub fn new(left: RgbImage, right: RgbImage) -> Result<Self> {
        if left.planes().dims() != right.planes().dims() {
            return Err(Error::ShapeMismatch(format!(
                "stereo views differ: {:?} vs {:?}",
                left.planes().dims(),
                right.planes().dims()
            )));
        }
        Ok(Self { left, right })
    }
}

/// Scores a super-resolved pair against ground truth under a protocol.
pub fn evaluate_pair(sr: &StereoPair, gt: &StereoPair, protocol: Protocol) -> Result<MetricReport> {
    match protocol {
        Protocol::CroppedLeft => {
            let sl = crop_left(&sr.left, EVAL_CROP_COLUMNS)?;
            let gl = crop_left(&gt.left, EVAL_CROP_COLUMNS)?;
            Ok(MetricReport {
                psnr_db: psnr(&sl, &gl)?,
                ssim: ssim(&sl, &gl)?,
                protocol,
            })
        }
        Protocol::StereoAverage => {
            let p = (psnr(&sr.left, &gt.left)? + psnr(&sr.right, &gt.right)?) / 2.0;
            let s = (ssim(&sr.left, &gt.left)? + ssim(&sr.right, &gt.right)?) / 2.0;
            Ok(MetricReport {
                psnr_db: p,
                ssim: s,
                protocol,
            })
        }
    }
}
