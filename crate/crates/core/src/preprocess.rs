//! Image enhancement and network-input preparation.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::landmarks::Point;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!("image dims {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(Error::dim("gray image", "pixels", width * height, pixels.len()));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    fn is_constant(&self) -> bool {
        self.pixels.iter().all(|&p| p == self.pixels[0])
    }
}

/// Contrast enhancement applied before cropping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Enhancement {
    None,
    Clahe { tiles: usize, clip_limit: f64 },
    HistEqualize,
    ContrastStretch { lo_pct: f64, hi_pct: f64 },
}

impl Enhancement {
    pub const CLAHE_DEFAULT: Enhancement = Enhancement::Clahe {
        tiles: 8,
        clip_limit: 2.0,
    };

    pub fn apply(&self, img: &GrayImage) -> GrayImage {
        match *self {
            Enhancement::None => img.clone(),
            Enhancement::Clahe { tiles, clip_limit } => clahe(img, tiles, tiles, clip_limit),
            Enhancement::HistEqualize => hist_equalize(img),
            Enhancement::ContrastStretch { lo_pct, hi_pct } => contrast_stretch(img, lo_pct, hi_pct),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Enhancement::None => "none",
            Enhancement::Clahe { .. } => "clahe",
            Enhancement::HistEqualize => "he",
            Enhancement::ContrastStretch { .. } => "cs",
        }
    }
}

impl FromStr for Enhancement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "none" => Ok(Enhancement::None),
            "clahe" => Ok(Enhancement::CLAHE_DEFAULT),
            "he" => Ok(Enhancement::HistEqualize),
            "cs" => Ok(Enhancement::ContrastStretch {
                lo_pct: 2.0,
                hi_pct: 98.0,
            }),
            other => Err(Error::InvalidArgument(format!("unknown enhancement `{other}`"))),
        }
    }
}

/// `[H, W, 3]` with the gray value in every channel.
pub fn replicate_channels<T: Scalar>(img: &GrayImage) -> Tensor<T> {
    let data = img
        .pixels
        .iter()
        .flat_map(|&p| {
            let v = T::from_u8(p).unwrap();
            [v, v, v]
        })
        .collect();
    Tensor::new(&[img.height, img.width, 3], data).expect("non-empty image")
}

/// Source coordinate of output sample `i` under half-pixel-center
/// alignment, clamped to the valid range.
fn source_coord(i: usize, src: usize, dst: usize) -> (usize, usize, f64) {
    let s = ((i as f64 + 0.5) * src as f64 / dst as f64 - 0.5).clamp(0.0, (src - 1) as f64);
    let lo = s.floor() as usize;
    let hi = (lo + 1).min(src - 1);
    (lo, hi, s - lo as f64)
}

/// Bilinear resize with half-pixel centers; rounds to nearest.
pub fn bilinear_resize(img: &GrayImage, out_w: usize, out_h: usize) -> Result<GrayImage> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::InvalidArgument(format!("resize target {out_w}x{out_h}")));
    }
    let xs: Vec<_> = (0..out_w).map(|x| source_coord(x, img.width, out_w)).collect();
    let mut pixels = Vec::with_capacity(out_w * out_h);
    for y in 0..out_h {
        let (y0, y1, fy) = source_coord(y, img.height, out_h);
        for &(x0, x1, fx) in &xs {
            let top = img.get(x0, y0) as f64 * (1.0 - fx) + img.get(x1, y0) as f64 * fx;
            let bottom = img.get(x0, y1) as f64 * (1.0 - fx) + img.get(x1, y1) as f64 * fx;
            let v = top * (1.0 - fy) + bottom * fy;
            pixels.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    GrayImage::new(out_w, out_h, pixels)
}

fn histogram(values: impl Iterator<Item = u8>) -> [u32; 256] {
    let mut h = [0u32; 256];
    for v in values {
        h[v as usize] += 1;
    }
    h
}

/// Tile `i` of `n` along an axis of length `len` covers `[i*len/n, (i+1)*len/n)`.
fn tile_bounds(i: usize, n: usize, len: usize) -> (usize, usize) {
    (i * len / n, (i + 1) * len / n)
}

/// Clips a histogram at `limit` and spreads the excess: an equal share to
/// every bin, then the remainder one count at a time at a fixed stride.
pub(crate) fn clip_histogram(hist: &mut [u32; 256], limit: u32) {
    let mut excess = 0;
    for h in hist.iter_mut() {
        if *h > limit {
            excess += *h - limit;
            *h = limit;
        }
    }
    let share = excess / 256;
    let mut residual = excess % 256;
    hist.iter_mut().for_each(|h| *h += share);
    if residual > 0 {
        let step = (256 / residual as usize).max(1);
        let mut i = 0;
        while i < 256 && residual > 0 {
            hist[i] += 1;
            residual -= 1;
            i += step;
        }
    }
}

/// Absolute clip count for a tile of `area` pixels.
pub(crate) fn clip_count(clip_limit: f64, area: usize) -> u32 {
    ((clip_limit * area as f64 / 256.0).floor() as u32).max(1)
}

/// `round(cdf * 255 / area)` in integers.
fn cdf_lut(hist: &[u32; 256], area: u64) -> [u8; 256] {
    let mut lut = [0u8; 256];
    let mut cdf = 0u64;
    for (v, &h) in hist.iter().enumerate() {
        cdf += h as u64;
        lut[v] = ((cdf * 255 + area / 2) / area).min(255) as u8;
    }
    lut
}

/// Interpolation position along one axis in exact integer form: the
/// neighbouring tile pair and the numerator of the weight of the second
/// tile over `2 * len`.
fn axis_weight(i: usize, tiles: usize, len: usize) -> (usize, usize, u64) {
    let denom = 2 * len as i64;
    let num = (2 * i as i64 + 1) * tiles as i64 - len as i64;
    if num <= 0 {
        return (0, 0, 0);
    }
    let t0 = (num / denom) as usize;
    if t0 >= tiles - 1 {
        return (tiles - 1, tiles - 1, 0);
    }
    (t0, t0 + 1, (num % denom) as u64)
}

/// Contrast-limited adaptive histogram equalization.
///
/// Each of the `tiles_x × tiles_y` tiles gets a clipped-histogram CDF
/// mapping; every pixel blends the mappings of the four nearest tile
/// centers bilinearly. Interpolation runs in exact integer arithmetic.
/// A single-valued image is returned unchanged.
pub fn clahe(img: &GrayImage, tiles_x: usize, tiles_y: usize, clip_limit: f64) -> GrayImage {
    if img.is_constant() {
        return img.clone();
    }
    let tiles_x = tiles_x.clamp(1, img.width);
    let tiles_y = tiles_y.clamp(1, img.height);
    let mut luts = vec![[0u8; 256]; tiles_x * tiles_y];
    for ty in 0..tiles_y {
        let (y0, y1) = tile_bounds(ty, tiles_y, img.height);
        for tx in 0..tiles_x {
            let (x0, x1) = tile_bounds(tx, tiles_x, img.width);
            let area = (x1 - x0) * (y1 - y0);
            let mut hist = histogram((y0..y1).flat_map(|y| (x0..x1).map(move |x| img.get(x, y))));
            clip_histogram(&mut hist, clip_count(clip_limit, area));
            luts[ty * tiles_x + tx] = cdf_lut(&hist, area as u64);
        }
    }

    let dx = 2 * img.width as u64;
    let dy = 2 * img.height as u64;
    let denom = dx * dy;
    let cols: Vec<_> = (0..img.width).map(|x| axis_weight(x, tiles_x, img.width)).collect();
    let mut pixels = Vec::with_capacity(img.pixels.len());
    for y in 0..img.height {
        let (ta, tb, wy) = axis_weight(y, tiles_y, img.height);
        for (x, &(la, lb, wx)) in cols.iter().enumerate() {
            let v = img.get(x, y) as usize;
            let m = |ty: usize, tx: usize| luts[ty * tiles_x + tx][v] as u64;
            let top = (dx - wx) * m(ta, la) + wx * m(ta, lb);
            let bottom = (dx - wx) * m(tb, la) + wx * m(tb, lb);
            let num = (dy - wy) * top + wy * bottom;
            pixels.push(((num + denom / 2) / denom) as u8);
        }
    }
    GrayImage {
        width: img.width,
        height: img.height,
        pixels,
    }
}

/// Global histogram equalization; single-valued images are unchanged.
pub fn hist_equalize(img: &GrayImage) -> GrayImage {
    if img.is_constant() {
        return img.clone();
    }
    let hist = histogram(img.pixels.iter().copied());
    let total = img.pixels.len() as u64;
    let cdf_min = hist.iter().find(|&&h| h > 0).copied().unwrap_or(0) as u64;
    let mut lut = [0u8; 256];
    let mut cdf = 0u64;
    for (v, &h) in hist.iter().enumerate() {
        cdf += h as u64;
        let num = cdf.saturating_sub(cdf_min) * 255;
        let den = total - cdf_min;
        lut[v] = ((num + den / 2) / den) as u8;
    }
    GrayImage {
        width: img.width,
        height: img.height,
        pixels: img.pixels.iter().map(|&p| lut[p as usize]).collect(),
    }
}

/// Linear-interpolated percentile of sorted values.
fn percentile(sorted: &[u8], pct: f64) -> f64 {
    let pos = (pct / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let f = pos - lo as f64;
    sorted[lo] as f64 * (1.0 - f) + sorted[hi] as f64 * f
}

/// Linear map of the `[lo_pct, hi_pct]` percentile range onto `[0, 255]`.
pub fn contrast_stretch(img: &GrayImage, lo_pct: f64, hi_pct: f64) -> GrayImage {
    let mut sorted = img.pixels.clone();
    sorted.sort_unstable();
    let lo = percentile(&sorted, lo_pct);
    let hi = percentile(&sorted, hi_pct);
    if hi <= lo {
        return img.clone();
    }
    let pixels = img
        .pixels
        .iter()
        .map(|&p| ((p as f64 - lo) / (hi - lo) * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    GrayImage {
        width: img.width,
        height: img.height,
        pixels,
    }
}

/// `x / 127.5 - 1`, mapping `[0, 255]` to `[-1, 1]`.
pub fn normalize_input<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let s = T::from_f64_lossy(127.5);
    t.map(|v| v / s - T::one())
}

pub fn denormalize_input<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let s = T::from_f64_lossy(127.5);
    t.map(|v| (v + T::one()) * s)
}

/// Points farther than this outside the crop are rejected; nearer ones
/// are clamped onto the border.
pub const LANDMARK_TOLERANCE_PX: f32 = 2.0;

/// Divides coordinates by the crop size, giving values in `[0, 1]`.
pub fn normalize_landmarks(points: &[Point], crop_w: usize, crop_h: usize) -> Result<Vec<Point>> {
    let (w, h) = (crop_w as f32, crop_h as f32);
    points
        .iter()
        .enumerate()
        .map(|(index, &[x, y])| {
            let outside = (-x).max(x - w).max(-y).max(y - h);
            if !(outside <= LANDMARK_TOLERANCE_PX) {
                return Err(Error::LandmarkOutOfBounds {
                    index,
                    x: x as f64,
                    y: y as f64,
                    width: crop_w,
                    height: crop_h,
                });
            }
            Ok([x.clamp(0.0, w) / w, y.clamp(0.0, h) / h])
        })
        .collect()
}

/// `[H, W, 1]` tensor of raw gray values.
pub fn gray_to_tensor<T: Scalar>(img: &GrayImage) -> Tensor<T> {
    let data = img.pixels.iter().map(|&p| T::from_u8(p).unwrap()).collect();
    Tensor::new(&[img.height, img.width, 1], data).expect("non-empty image")
}

/// Per-output-sample `(source index, weight)` taps along one axis:
/// exact area overlap when shrinking, half-pixel bilinear otherwise.
fn axis_taps(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    if dst >= src {
        return (0..dst)
            .map(|i| {
                let (lo, hi, f) = source_coord(i, src, dst);
                if lo == hi {
                    vec![(lo, 1.0)]
                } else {
                    vec![(lo, 1.0 - f), (hi, f)]
                }
            })
            .collect();
    }
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let (a, b) = (o as f64 * scale, (o + 1) as f64 * scale);
            let first = a.floor() as usize;
            let last = (b.ceil() as usize).min(src);
            (first..last)
                .map(|s| {
                    let overlap = (b.min(s as f64 + 1.0) - a.max(s as f64)).max(0.0);
                    (s, overlap / scale)
                })
                .filter(|&(_, w)| w > 0.0)
                .collect()
        })
        .collect()
}

/// Resizes an `[H, W, C]` tensor; area-averages when shrinking so thin
/// strokes are not skipped.
pub fn resize_tensor<T: Scalar>(t: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    t.expect_rank("resize_tensor", 3)?;
    if out_w == 0 || out_h == 0 {
        return Err(Error::InvalidArgument(format!("resize target {out_w}x{out_h}")));
    }
    let (h, w, c) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    if (h, w) == (out_h, out_w) {
        return Ok(t.clone());
    }
    let src = t.data();
    let xt = axis_taps(w, out_w);
    let yt = axis_taps(h, out_h);
    let mut rows = vec![0.0f64; h * out_w * c];
    for y in 0..h {
        for (ox, taps) in xt.iter().enumerate() {
            for ch in 0..c {
                rows[(y * out_w + ox) * c + ch] = taps
                    .iter()
                    .map(|&(sx, wt)| src[(y * w + sx) * c + ch].as_f64() * wt)
                    .sum();
            }
        }
    }
    let mut out = Vec::with_capacity(out_h * out_w * c);
    for taps in &yt {
        for ox in 0..out_w {
            for ch in 0..c {
                let v: f64 = taps.iter().map(|&(sy, wt)| rows[(sy * out_w + ox) * c + ch] * wt).sum();
                out.push(T::from_f64_lossy(v));
            }
        }
    }
    Tensor::new(&[out_h, out_w, c], out)
}

/// Turns a `[H, W, 1]` tensor of gray values into a normalized
/// `[size, size, 3]` network input.
pub fn gray_tensor_to_input<T: Scalar>(t: &Tensor<T>, size: usize) -> Result<Tensor<T>> {
    let r = resize_tensor(t, size, size)?;
    let s = T::from_f64_lossy(127.5);
    let data = r.data().iter().flat_map(|&v| {
        let n = v / s - T::one();
        [n, n, n]
    });
    Tensor::new(&[size, size, 3], data.collect())
}

/// Resizes a face crop to `size × size`, replicates it to three channels
/// and normalizes to `[-1, 1]`; returns `[size, size, 3]`.
pub fn prepare_input<T: Scalar>(crop: &GrayImage, size: usize) -> Result<Tensor<T>> {
    gray_tensor_to_input(&gray_to_tensor(crop), size)
}
