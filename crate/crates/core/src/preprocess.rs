//! Frame preprocessing and seeded augmentation.
//!
//! Images are `f32` HWC rasters in `[0, 1]` until [`normalize`]. The eval
//! path is `center_crop -> resize -> normalize`; the training path replaces
//! the resize with [`augment`].

use image::RgbImage;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// Three-channel HWC raster.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl ImageTensor {
    pub const CHANNELS: usize = 3;

    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {height}x{width}x3 image",
                data.len()
            )));
        }
        Ok(ImageTensor { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        ImageTensor { height, width, data }
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        ImageTensor {
            height: img.height() as usize,
            width: img.width() as usize,
            data: img.as_raw().iter().map(|&v| v as f32 / 255.0).collect(),
        }
    }

    /// Quantizes `[0, 1]` values back to 8 bits.
    pub fn to_rgb8(&self) -> RgbImage {
        let raw = self
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        RgbImage::from_raw(self.width as u32, self.height as u32, raw).expect("consistent shape")
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * 3 + c]
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn is_square(&self) -> bool {
        self.height == self.width
    }

    /// Channel-planar (CHW) copy, the layout the network consumes.
    pub fn to_chw(&self) -> Vec<f32> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; plane * 3];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            out[i] = px[0];
            out[plane + i] = px[1];
            out[2 * plane + i] = px[2];
        }
        out
    }
}

/// Crop rectangle in source pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

fn center_window(height: usize, width: usize, size: usize) -> Result<Window> {
    if height < size || width < size {
        return Err(Error::TooSmall { height, width, size });
    }
    Ok(Window {
        top: (height - size) / 2,
        left: (width - size) / 2,
        height: size,
        width: size,
    })
}

pub fn crop(img: &ImageTensor, w: Window) -> ImageTensor {
    let mut data = Vec::with_capacity(w.height * w.width * 3);
    for y in w.top..w.top + w.height {
        let row = (y * img.width + w.left) * 3;
        data.extend_from_slice(&img.data[row..row + w.width * 3]);
    }
    ImageTensor {
        height: w.height,
        width: w.width,
        data,
    }
}

/// Centered `size x size` crop with offsets `floor((dim - size) / 2)`.
pub fn center_crop(img: &ImageTensor, size: usize) -> Result<ImageTensor> {
    Ok(crop(img, center_window(img.height, img.width, size)?))
}

pub fn center_crop_rgb8(img: &RgbImage, size: usize) -> Result<RgbImage> {
    let w = center_window(img.height() as usize, img.width() as usize, size)?;
    Ok(image::imageops::crop_imm(img, w.left as u32, w.top as u32, size as u32, size as u32).to_image())
}

/// Source coordinate taps for one output axis (half-pixel centers).
fn axis_taps(src_len: usize, out_len: usize) -> Vec<(usize, usize, f32)> {
    let scale = src_len as f32 / out_len as f32;
    (0..out_len)
        .map(|o| {
            let s = ((o as f32 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f32);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src_len - 1);
            (i0, i1, s - i0 as f32)
        })
        .collect()
}

#[inline]
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + (b - a) * t
}

fn bilinear(window: Window, out_h: usize, out_w: usize, sample: impl Fn(usize, usize, usize) -> f32) -> ImageTensor {
    let rows = axis_taps(window.height, out_h);
    let cols = axis_taps(window.width, out_w);
    let mut data = Vec::with_capacity(out_h * out_w * 3);
    for &(y0, y1, ty) in &rows {
        let (y0, y1) = (window.top + y0, window.top + y1);
        for &(x0, x1, tx) in &cols {
            let (x0, x1) = (window.left + x0, window.left + x1);
            for c in 0..3 {
                let top = lerp(sample(y0, x0, c), sample(y0, x1, c), tx);
                let bottom = lerp(sample(y1, x0, c), sample(y1, x1, c), tx);
                data.push(lerp(top, bottom, ty));
            }
        }
    }
    ImageTensor {
        height: out_h,
        width: out_w,
        data,
    }
}

/// Bilinear resize to `size x size`.
pub fn resize(img: &ImageTensor, size: usize) -> ImageTensor {
    resize_to(img, size, size)
}

pub fn resize_to(img: &ImageTensor, height: usize, width: usize) -> ImageTensor {
    let whole = Window {
        top: 0,
        left: 0,
        height: img.height,
        width: img.width,
    };
    bilinear(whole, height, width, |y, x, c| img.at(y, x, c))
}

/// Crop of an 8-bit raster resized straight to `size x size`; equal to
/// `resize(crop(ImageTensor::from_rgb8(img), window), size)`.
pub fn crop_resize_rgb8(img: &RgbImage, window: Window, size: usize) -> ImageTensor {
    let raw = img.as_raw();
    let width = img.width() as usize;
    bilinear(window, size, size, |y, x, c| {
        raw[(y * width + x) * 3 + c] as f32 / 255.0
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization {
            mean: IMAGENET_MEAN,
            std: IMAGENET_STD,
        }
    }
}

pub fn normalize(img: &ImageTensor, mean: [f32; 3], std: [f32; 3]) -> Result<ImageTensor> {
    if std.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::ZeroStd(std));
    }
    let mut out = img.clone();
    for px in out.data.chunks_exact_mut(3) {
        for c in 0..3 {
            px[c] = (px[c] - mean[c]) / std[c];
        }
    }
    Ok(out)
}

pub fn denormalize(img: &ImageTensor, mean: [f32; 3], std: [f32; 3]) -> ImageTensor {
    let mut out = img.clone();
    for px in out.data.chunks_exact_mut(3) {
        for c in 0..3 {
            px[c] = px[c] * std[c] + mean[c];
        }
    }
    out
}

/// Deterministic validation/test path: center crop, resize, normalize.
pub fn eval_path(raster: &RgbImage, crop_size: usize, input_size: usize, norm: &Normalization) -> Result<ImageTensor> {
    let w = center_window(raster.height() as usize, raster.width() as usize, crop_size)?;
    let resized = crop_resize_rgb8(raster, w, input_size);
    normalize(&resized, norm.mean, norm.std)
}

/// Eval path without the final normalization (values in `[0, 1]`).
pub fn eval_path_unnormalized(raster: &RgbImage, crop_size: usize, input_size: usize) -> Result<ImageTensor> {
    let w = center_window(raster.height() as usize, raster.width() as usize, crop_size)?;
    Ok(crop_resize_rgb8(raster, w, input_size))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub crop_scale: [f64; 2],
    pub crop_ratio: [f64; 2],
    pub flip_p: f64,
    pub jitter_p: f64,
    pub brightness: [f64; 2],
    pub contrast: [f64; 2],
    pub saturation: [f64; 2],
    pub hue: [f64; 2],
    pub blur_kernel: usize,
    /// `[0, 0]` disables blurring.
    pub blur_sigma: [f64; 2],
    pub output_size: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            crop_scale: [0.08, 1.0],
            crop_ratio: [3.0 / 4.0, 4.0 / 3.0],
            flip_p: 0.5,
            jitter_p: 0.9,
            brightness: [0.8, 1.2],
            contrast: [0.8, 1.2],
            saturation: [0.8, 1.2],
            hue: [-0.1, 0.1],
            blur_kernel: 3,
            blur_sigma: [0.1, 2.0],
            output_size: 224,
        }
    }
}

impl AugmentConfig {
    /// Every source of randomness switched off.
    pub fn disabled() -> Self {
        AugmentConfig {
            crop_scale: [1.0, 1.0],
            crop_ratio: [1.0, 1.0],
            flip_p: 0.0,
            jitter_p: 0.0,
            blur_sigma: [0.0, 0.0],
            ..AugmentConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("crop_scale", self.crop_scale),
            ("crop_ratio", self.crop_ratio),
            ("brightness", self.brightness),
            ("contrast", self.contrast),
            ("saturation", self.saturation),
            ("hue", self.hue),
            ("blur_sigma", self.blur_sigma),
        ];
        for (name, [lo, hi]) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Config(format!("augment.{name} must be an ordered range")));
            }
        }
        if self.crop_scale[0] <= 0.0 || self.crop_scale[1] > 1.0 || self.crop_ratio[0] <= 0.0 {
            return Err(Error::Config("augment crop range out of bounds".into()));
        }
        for (name, p) in [("flip_p", self.flip_p), ("jitter_p", self.jitter_p)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("augment.{name} must be a probability")));
            }
        }
        if self.blur_kernel % 2 == 0 || self.output_size == 0 || self.blur_sigma[0] < 0.0 {
            return Err(Error::Config(
                "augment blur kernel must be odd and sizes positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterFactors {
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
    pub hue: f32,
}

/// Every random decision behind one augmented image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub window: Window,
    pub flip: bool,
    pub jitter: Option<JitterFactors>,
    pub sigma: Option<f32>,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// One (area scale, aspect ratio) candidate for the random resized crop.
pub fn draw_crop_candidate<R: Rng + ?Sized>(cfg: &AugmentConfig, rng: &mut R) -> (f64, f64) {
    let scale = uniform(rng, cfg.crop_scale);
    let ratio = uniform(rng, cfg.crop_ratio);
    (scale, ratio)
}

/// Random resized crop window: up to 10 candidates, then the centered largest square.
pub fn draw_crop_window<R: Rng + ?Sized>(cfg: &AugmentConfig, height: usize, width: usize, rng: &mut R) -> Window {
    let area = (height * width) as f64;
    for _ in 0..10 {
        let (scale, ratio) = draw_crop_candidate(cfg, rng);
        let target = area * scale;
        let w = (target * ratio).sqrt().round() as usize;
        let h = (target / ratio).sqrt().round() as usize;
        if w > 0 && h > 0 && w <= width && h <= height {
            let top = rng.random_range(0..=height - h);
            let left = rng.random_range(0..=width - w);
            return Window {
                top,
                left,
                height: h,
                width: w,
            };
        }
    }
    let side = height.min(width);
    Window {
        top: (height - side) / 2,
        left: (width - side) / 2,
        height: side,
        width: side,
    }
}

/// Draws all augmentation decisions in a fixed order:
/// crop window, flip, jitter (decision then four factors), blur sigma.
pub fn draw_params<R: Rng + ?Sized>(cfg: &AugmentConfig, height: usize, width: usize, rng: &mut R) -> AugmentParams {
    let window = draw_crop_window(cfg, height, width, rng);
    let flip = rng.random::<f64>() < cfg.flip_p;
    let jitter = (rng.random::<f64>() < cfg.jitter_p).then(|| JitterFactors {
        brightness: uniform(rng, cfg.brightness) as f32,
        contrast: uniform(rng, cfg.contrast) as f32,
        saturation: uniform(rng, cfg.saturation) as f32,
        hue: uniform(rng, cfg.hue) as f32,
    });
    let sigma = uniform(rng, cfg.blur_sigma) as f32;
    AugmentParams {
        window,
        flip,
        jitter,
        sigma: (sigma > 0.0).then_some(sigma),
    }
}

pub fn apply_params(resized: ImageTensor, params: &AugmentParams, blur_kernel: usize) -> ImageTensor {
    let mut img = resized;
    if params.flip {
        img = flip_horizontal(&img);
    }
    if let Some(j) = params.jitter {
        adjust_brightness(&mut img, j.brightness);
        adjust_contrast(&mut img, j.contrast);
        adjust_saturation(&mut img, j.saturation);
        adjust_hue(&mut img, j.hue);
    }
    if let Some(sigma) = params.sigma {
        img = gaussian_blur(&img, blur_kernel, sigma);
    }
    img
}

/// Random resized crop, horizontal flip, color jitter, Gaussian blur; output
/// is always `output_size x output_size`, in `[0, 1]`.
pub fn augment<R: Rng + ?Sized>(img: &ImageTensor, cfg: &AugmentConfig, rng: &mut R) -> ImageTensor {
    let params = draw_params(cfg, img.height, img.width, rng);
    let resized = bilinear(params.window, cfg.output_size, cfg.output_size, |y, x, c| {
        img.at(y, x, c)
    });
    apply_params(resized, &params, cfg.blur_kernel)
}

/// [`augment`] reading straight from an 8-bit raster (same stream, same output).
pub fn augment_rgb8<R: Rng + ?Sized>(img: &RgbImage, cfg: &AugmentConfig, rng: &mut R) -> ImageTensor {
    let params = draw_params(cfg, img.height() as usize, img.width() as usize, rng);
    let resized = crop_resize_rgb8(img, params.window, cfg.output_size);
    apply_params(resized, &params, cfg.blur_kernel)
}

pub fn flip_horizontal(img: &ImageTensor) -> ImageTensor {
    let mut data = Vec::with_capacity(img.data.len());
    for y in 0..img.height {
        for x in (0..img.width).rev() {
            data.extend_from_slice(&img.pixel(y, x));
        }
    }
    ImageTensor { data, ..*img }
}

#[inline]
fn gray([r, g, b]: [f32; 3]) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

pub fn adjust_brightness(img: &mut ImageTensor, factor: f32) {
    for v in &mut img.data {
        *v = (*v * factor).clamp(0.0, 1.0);
    }
}

/// Blends with the mean grayscale level of the image.
pub fn adjust_contrast(img: &mut ImageTensor, factor: f32) {
    let n = (img.height * img.width).max(1) as f64;
    let mean = (img
        .data
        .chunks_exact(3)
        .map(|p| gray([p[0], p[1], p[2]]) as f64)
        .sum::<f64>()
        / n) as f32;
    for v in &mut img.data {
        *v = (factor * *v + (1.0 - factor) * mean).clamp(0.0, 1.0);
    }
}

/// Blends each pixel with its own grayscale value.
pub fn adjust_saturation(img: &mut ImageTensor, factor: f32) {
    for p in img.data.chunks_exact_mut(3) {
        let g = gray([p[0], p[1], p[2]]);
        for v in p.iter_mut() {
            *v = (factor * *v + (1.0 - factor) * g).clamp(0.0, 1.0);
        }
    }
}

/// Rotates hue by `shift` turns (`shift` in `[-0.5, 0.5]`).
pub fn adjust_hue(img: &mut ImageTensor, shift: f32) {
    if shift == 0.0 {
        return;
    }
    for p in img.data.chunks_exact_mut(3) {
        let [h, s, v] = rgb_to_hsv([p[0], p[1], p[2]]);
        let rgb = hsv_to_rgb([(h + shift).rem_euclid(1.0), s, v]);
        p.copy_from_slice(&rgb);
    }
}

/// HSV with all components in `[0, 1]`.
pub fn rgb_to_hsv([r, g, b]: [f32; 3]) -> [f32; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    [h.rem_euclid(1.0), s, max]
}

pub fn hsv_to_rgb([h, s, v]: [f32; 3]) -> [f32; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let sector = (h6.floor() as i32).rem_euclid(6);
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Separable Gaussian blur with reflected borders.
pub fn gaussian_blur(img: &ImageTensor, kernel: usize, sigma: f32) -> ImageTensor {
    let radius = (kernel / 2) as isize;
    let mut weights: Vec<f32> = (-radius..=radius)
        .map(|d| (-(d * d) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f32 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);

    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        if n == 1 {
            return 0;
        }
        let mut i = i;
        if i < 0 {
            i = -i;
        }
        if i >= n {
            i = 2 * (n - 1) - i;
        }
        i.clamp(0, n - 1) as usize
    };

    let (h, w) = (img.height, img.width);
    let mut tmp = vec![0.0f32; img.data.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (k, wt) in weights.iter().enumerate() {
                    let xx = reflect(x as isize + k as isize - radius, w);
                    acc += wt * img.data[(y * w + xx) * 3 + c];
                }
                tmp[(y * w + x) * 3 + c] = acc;
            }
        }
    }
    let mut out = vec![0.0f32; img.data.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (k, wt) in weights.iter().enumerate() {
                    let yy = reflect(y as isize + k as isize - radius, h);
                    acc += wt * tmp[(yy * w + x) * 3 + c];
                }
                out[(y * w + x) * 3 + c] = acc;
            }
        }
    }
    ImageTensor {
        height: h,
        width: w,
        data: out,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_from_seed;
    use proptest::prelude::*;

    fn ramp(height: usize, width: usize) -> ImageTensor {
        let data = (0..height * width * 3)
            .map(|i| ((i * 7919) % 1000) as f32 / 999.0)
            .collect();
        ImageTensor { height, width, data }
    }

    #[test]
    fn center_crop_offsets() {
        let img = ramp(720, 1280);
        let out = center_crop(&img, 640).unwrap();
        assert_eq!((out.height, out.width), (640, 640));
        // offsets: top = floor((720-640)/2) = 40, left = floor((1280-640)/2) = 320
        assert_eq!(out.pixel(0, 0), img.pixel(40, 320));
        assert_eq!(out.pixel(639, 639), img.pixel(679, 959));
    }

    #[test]
    fn center_crop_identity_and_too_small() {
        let img = ramp(640, 640);
        assert_eq!(center_crop(&img, 640).unwrap(), img);
        let small = ramp(300, 300);
        assert!(matches!(center_crop(&small, 640), Err(Error::TooSmall { .. })));
    }

    #[test]
    fn resize_shapes_identity_and_constants() {
        let img = ramp(64, 64);
        assert_eq!(resize(&img, 64), img);
        let big = ImageTensor::filled(640, 640, [0.2, 0.5, 0.9]);
        let small = resize(&big, 224);
        assert_eq!((small.height, small.width), (224, 224));
        assert!(small.data.chunks(3).all(|p| p == [0.2, 0.5, 0.9]));
        let up = resize(&ImageTensor::filled(3, 5, [0.3, 0.3, 0.1]), 17);
        assert!(up.data.chunks(3).all(|p| p == [0.3, 0.3, 0.1]));
    }

    #[test]
    fn rgb8_paths_agree() {
        let raster = RgbImage::from_fn(50, 40, |x, y| {
            image::Rgb([(x * 5) as u8, (y * 6) as u8, ((x + y) * 3) as u8])
        });
        let t = ImageTensor::from_rgb8(&raster);
        let w = Window {
            top: 3,
            left: 7,
            height: 30,
            width: 25,
        };
        assert_eq!(crop_resize_rgb8(&raster, w, 16), resize(&crop(&t, w), 16));
    }

    #[test]
    fn normalize_examples() {
        let img = ImageTensor::filled(1, 1, [0.485, 0.456, 0.406]);
        let out = normalize(&img, IMAGENET_MEAN, IMAGENET_STD).unwrap();
        assert!(out.data.iter().all(|v| v.abs() < 1e-7));

        let img = ImageTensor::filled(1, 1, [0.714, 0.680, 0.631]);
        let out = normalize(&img, IMAGENET_MEAN, IMAGENET_STD).unwrap();
        for v in out.data {
            assert!((v - 1.0).abs() < 1e-5, "{v}");
        }

        let img = ramp(4, 4);
        assert_eq!(normalize(&img, [0.0; 3], [1.0; 3]).unwrap(), img);
        assert!(matches!(
            normalize(&img, [0.0; 3], [1.0, 0.0, 1.0]),
            Err(Error::ZeroStd(_))
        ));
    }

    #[test]
    fn augment_is_deterministic_per_seed() {
        let img = ramp(96, 96);
        let cfg = AugmentConfig {
            output_size: 32,
            ..AugmentConfig::default()
        };
        let a = augment(&img, &cfg, &mut stream_from_seed(5));
        let b = augment(&img, &cfg, &mut stream_from_seed(5));
        assert_eq!(a, b);
        assert_eq!((a.height, a.width), (32, 32));
    }

    #[test]
    fn disabled_augment_is_a_plain_resize() {
        let img = ramp(640, 640);
        let out = augment(&img, &AugmentConfig::disabled(), &mut stream_from_seed(1));
        assert_eq!(out, resize(&img, 224));
    }

    #[test]
    fn flip_and_jitter_rates() {
        let cfg = AugmentConfig::default();
        let mut rng = stream_from_seed(2024);
        let n = 10_000;
        let (mut flips, mut jitters) = (0, 0);
        for _ in 0..n {
            let p = draw_params(&cfg, 640, 640, &mut rng);
            flips += p.flip as usize;
            jitters += p.jitter.is_some() as usize;
        }
        let flip_rate = flips as f64 / n as f64;
        let jitter_rate = jitters as f64 / n as f64;
        assert!((0.48..=0.52).contains(&flip_rate), "{flip_rate}");
        assert!((0.88..=0.92).contains(&jitter_rate), "{jitter_rate}");
    }

    #[test]
    fn hsv_round_trip() {
        for rgb in [
            [0.2, 0.4, 0.9],
            [1.0, 0.0, 0.0],
            [0.5, 0.5, 0.5],
            [0.1, 0.8, 0.3],
            [0.9, 0.2, 0.6],
        ] {
            let back = hsv_to_rgb(rgb_to_hsv(rgb));
            for c in 0..3 {
                assert!((back[c] - rgb[c]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn full_hue_turn_is_identity() {
        let mut img = ramp(4, 4);
        let orig = img.clone();
        adjust_hue(&mut img, 0.5);
        adjust_hue(&mut img, 0.5);
        for (a, b) in img.data.iter().zip(&orig.data) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn blur_preserves_constants() {
        let img = ImageTensor::filled(9, 7, [0.25, 0.5, 0.75]);
        let out = gaussian_blur(&img, 3, 1.3);
        for (a, b) in out.data.iter().zip(&img.data) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn fallback_window_is_centered_square() {
        let cfg = AugmentConfig {
            crop_scale: [1.0, 1.0],
            crop_ratio: [2.0, 2.0],
            ..AugmentConfig::default()
        };
        let w = draw_crop_window(&cfg, 60, 100, &mut stream_from_seed(0));
        assert_eq!(
            w,
            Window {
                top: 0,
                left: 20,
                height: 60,
                width: 60
            }
        );
    }

    proptest! {
        #[test]
        fn denormalize_inverts_normalize(vals in proptest::collection::vec(0.0f32..=1.0, 12)) {
            let img = ImageTensor::new(2, 2, vals).unwrap();
            let back = denormalize(&normalize(&img, IMAGENET_MEAN, IMAGENET_STD).unwrap(), IMAGENET_MEAN, IMAGENET_STD);
            for (a, b) in back.data.iter().zip(&img.data) {
                prop_assert!((a - b).abs() <= 1e-6);
            }
        }

        #[test]
        fn augment_output_shape_is_fixed(seed in any::<u64>(), h in 24usize..80, w in 24usize..80) {
            let cfg = AugmentConfig { output_size: 20, ..AugmentConfig::default() };
            let out = augment(&ramp(h, w), &cfg, &mut stream_from_seed(seed));
            prop_assert_eq!((out.height, out.width, out.data.len()), (20, 20, 1200));
            prop_assert!(out.data.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
