//! Planar RGB images and the geometric preprocessing that feeds the encoders.
//!
//! Samples are `f64`, channel-major (`R` plane, then `G`, then `B`), nominally
//! in `[0, 1]`. Nothing here clamps except [`RgbImage::quantized`] and
//! [`encode_display`]: intermediate results may leave the unit range.

use std::io::Cursor;
use std::path::Path;

use image::{ColorType, ImageEncoder};
use thiserror::Error;

use crate::par;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("failed to decode image: {0}")]
    Decode(String),
    #[error("unsupported pixel format {0:?}: only 8-bit gray/RGB(A) is accepted")]
    UnsupportedFormat(ColorType),
    #[error("failed to encode image: {0}")]
    Encode(String),
    #[error("cannot crop {size}x{size} from a {width}x{height} image")]
    Crop {
        width: usize,
        height: usize,
        size: usize,
    },
    #[error("invalid image: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A planar three-channel float image.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl RgbImage {
    /// Wraps channel-major samples, checking the length and finiteness invariants.
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::Invalid(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != 3 * width * height {
            return Err(ImageError::Invalid(format!(
                "expected {} samples for {width}x{height}, got {}",
                3 * width * height,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(ImageError::Invalid(format!("sample {i} is not finite")));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Internal constructor for results of operations that preserve the invariants.
    pub(crate) fn from_parts(width: usize, height: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), 3 * width * height);
        Self {
            width,
            height,
            data,
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let n = width * height;
        let mut data = Vec::with_capacity(3 * n);
        for c in rgb {
            data.extend(std::iter::repeat(c).take(n));
        }
        Self::from_parts(width, height, data)
    }

    /// Builds an image from a per-pixel closure `(x, y) -> [r, g, b]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let n = width * height;
        let mut data = vec![0.0; 3 * n];
        for y in 0..height {
            for x in 0..width {
                let p = y * width + x;
                let rgb = f(x, y);
                data[p] = rgb[0];
                data[n + p] = rgb[1];
                data[2 * n + p] = rgb[2];
            }
        }
        Self::from_parts(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn samples(&self) -> &[f64] {
        &self.data
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, channel: usize) -> &[f64] {
        let n = self.pixel_count();
        &self.data[channel * n..(channel + 1) * n]
    }

    pub fn planes(&self) -> [&[f64]; 3] {
        let n = self.pixel_count();
        let (r, rest) = self.data.split_at(n);
        let (g, b) = rest.split_at(n);
        [r, g, b]
    }

    pub(crate) fn planes_mut(&mut self) -> [&mut [f64]; 3] {
        let n = self.pixel_count();
        let (r, rest) = self.data.split_at_mut(n);
        let (g, b) = rest.split_at_mut(n);
        [r, g, b]
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let n = self.pixel_count();
        let p = y * self.width + x;
        [self.data[p], self.data[n + p], self.data[2 * n + p]]
    }

    pub fn same_shape(&self, other: &RgbImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn clamped(&self) -> RgbImage {
        let data = self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Self::from_parts(self.width, self.height, data)
    }

    /// Clamps and rounds to the 8-bit grid, i.e. exactly what a decode of
    /// [`encode_display`] returns.
    pub fn quantized(&self) -> RgbImage {
        let data = self
            .data
            .iter()
            .map(|&v| f64::from(to_u8(v)) / 255.0)
            .collect();
        Self::from_parts(self.width, self.height, data)
    }

    /// Interleaved 8-bit RGB after clamping and rounding.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let n = self.pixel_count();
        let [r, g, b] = self.planes();
        let mut out = Vec::with_capacity(3 * n);
        for p in 0..n {
            out.push(to_u8(r[p]));
            out.push(to_u8(g[p]));
            out.push(to_u8(b[p]));
        }
        out
    }

    /// Largest absolute per-sample difference. Panics on shape mismatch.
    pub fn max_abs_diff(&self, other: &RgbImage) -> f64 {
        assert!(self.same_shape(other), "shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Fraction of samples outside `[0, 1]`.
    pub fn out_of_range_fraction(&self) -> f64 {
        let n = self.data.iter().filter(|v| !(0.0..=1.0).contains(*v)).count();
        n as f64 / self.data.len() as f64
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Decodes an 8-bit PNG or JPEG. Alpha is dropped and gray is replicated.
pub fn decode_image(bytes: &[u8]) -> Result<RgbImage, ImageError> {
    let dynamic = image::load_from_memory(bytes).map_err(|e| ImageError::Decode(e.to_string()))?;
    match dynamic.color() {
        ColorType::L8 | ColorType::La8 | ColorType::Rgb8 | ColorType::Rgba8 => {}
        other => return Err(ImageError::UnsupportedFormat(other)),
    }
    let rgb = dynamic.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let n = w * h;
    let mut data = vec![0.0; 3 * n];
    for (p, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            data[c * n + p] = f64::from(px[c]) / 255.0;
        }
    }
    RgbImage::new(w, h, data)
}

pub fn read_image(path: impl AsRef<Path>) -> Result<RgbImage, ImageError> {
    decode_image(&std::fs::read(path)?)
}

/// Clamps to `[0, 1]`, quantizes as `round(v * 255)` and encodes as PNG.
pub fn encode_display(img: &RgbImage) -> Result<Vec<u8>, ImageError> {
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(Cursor::new(&mut out))
        .write_image(
            &img.to_rgb8(),
            img.width as u32,
            img.height as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| ImageError::Encode(e.to_string()))?;
    Ok(out)
}

pub fn write_png(path: impl AsRef<Path>, img: &RgbImage) -> Result<(), ImageError> {
    std::fs::write(path, encode_display(img)?)?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResizeFilter {
    Bilinear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CropMode {
    Center,
}

/// Geometry expected by an image encoder: shorter side resized to
/// `target_size`, then a centered square crop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PreprocessSpec {
    pub target_size: usize,
    pub resize_filter: ResizeFilter,
    pub crop: CropMode,
}

impl PreprocessSpec {
    pub fn square(target_size: usize) -> Self {
        assert!(target_size >= 1, "target size must be positive");
        Self {
            target_size,
            resize_filter: ResizeFilter::Bilinear,
            crop: CropMode::Center,
        }
    }
}

/// Interpolation taps for one output coordinate.
#[derive(Clone, Debug)]
struct Taps {
    start: usize,
    weights: Vec<f64>,
}

/// Triangle-filter taps mapping `in_len` samples onto `out_len`.
///
/// Sample centers sit at `i + 0.5`. When shrinking, the triangle is widened
/// by the scale factor so every input sample contributes; when enlarging (or
/// at unit scale) it is plain bilinear interpolation. Weights are normalized
/// per output sample, so every output is a convex combination of inputs.
fn axis_taps(in_len: usize, out_len: usize) -> Vec<Taps> {
    let scale = in_len as f64 / out_len as f64;
    let support = scale.max(1.0);
    (0..out_len)
        .map(|o| {
            let center = (o as f64 + 0.5) * scale;
            let lo = ((center - support).floor().max(0.0)) as usize;
            let hi = ((center + support).ceil() as usize).min(in_len);
            let mut weights: Vec<f64> = (lo..hi)
                .map(|i| (1.0 - ((i as f64 + 0.5 - center) / support).abs()).max(0.0))
                .collect();
            let total: f64 = weights.iter().sum();
            for w in &mut weights {
                *w /= total;
            }
            // Trim zero taps at both ends.
            let first = weights.iter().position(|&w| w > 0.0).unwrap_or(0);
            let last = weights.iter().rposition(|&w| w > 0.0).unwrap_or(0);
            Taps {
                start: lo + first,
                weights: weights[first..=last].to_vec(),
            }
        })
        .collect()
}

/// Resamples to exactly `new_w` x `new_h`.
pub fn resize(img: &RgbImage, new_w: usize, new_h: usize) -> RgbImage {
    assert!(new_w >= 1 && new_h >= 1, "target dimensions must be positive");
    if new_w == img.width && new_h == img.height {
        return img.clone();
    }
    let (w, h) = (img.width, img.height);
    let xtaps = axis_taps(w, new_w);
    let ytaps = axis_taps(h, new_h);

    let mut out = vec![0.0; 3 * new_w * new_h];
    // One row per task: out row (c, y) needs horizontal passes of the rows it touches.
    par::for_each_chunk_mut(&mut out, new_w, |offset, row| {
        let c = offset / (new_w * new_h);
        let y = (offset / new_w) % new_h;
        let plane = img.plane(c);
        let ty = &ytaps[y];
        row.fill(0.0);
        for (k, wy) in ty.weights.iter().enumerate() {
            let src = &plane[(ty.start + k) * w..(ty.start + k + 1) * w];
            for (x, tx) in xtaps.iter().enumerate() {
                let mut acc = 0.0;
                for (j, wx) in tx.weights.iter().enumerate() {
                    acc += wx * src[tx.start + j];
                }
                row[x] += wy * acc;
            }
        }
    });
    RgbImage::from_parts(new_w, new_h, out)
}

/// Transpose of [`resize`] viewed as a linear map from `src_w x src_h` images
/// to `grad`-shaped images.
pub fn resize_adjoint(grad: &RgbImage, src_w: usize, src_h: usize) -> RgbImage {
    let (new_w, new_h) = (grad.width, grad.height);
    if new_w == src_w && new_h == src_h {
        return grad.clone();
    }
    let xtaps = axis_taps(src_w, new_w);
    let ytaps = axis_taps(src_h, new_h);
    let mut out = vec![0.0; 3 * src_w * src_h];
    par::for_each_chunk_mut(&mut out, src_w * src_h, |offset, plane_out| {
        let c = offset / (src_w * src_h);
        let g = grad.plane(c);
        // Adjoint of the horizontal pass first, per output row.
        let mut spread = vec![0.0; new_h * src_w];
        for y in 0..new_h {
            let grow = &g[y * new_w..(y + 1) * new_w];
            let srow = &mut spread[y * src_w..(y + 1) * src_w];
            for (x, tx) in xtaps.iter().enumerate() {
                for (j, wx) in tx.weights.iter().enumerate() {
                    srow[tx.start + j] += wx * grow[x];
                }
            }
        }
        for (y, ty) in ytaps.iter().enumerate() {
            let srow = &spread[y * src_w..(y + 1) * src_w];
            for (k, wy) in ty.weights.iter().enumerate() {
                let dst = &mut plane_out[(ty.start + k) * src_w..(ty.start + k + 1) * src_w];
                for (d, s) in dst.iter_mut().zip(srow) {
                    *d += wy * s;
                }
            }
        }
    });
    RgbImage::from_parts(src_w, src_h, out)
}

/// Output size of [`resize_shorter_side`].
pub fn shorter_side_dims(width: usize, height: usize, target: usize) -> (usize, usize) {
    assert!(target >= 1, "target must be positive");
    let scale_long = |long: usize, short: usize| {
        ((long as f64 * target as f64 / short as f64).round() as usize).max(1)
    };
    if width <= height {
        (target, scale_long(height, width))
    } else {
        (scale_long(width, height), target)
    }
}

/// Resizes so the shorter side equals `target`, keeping the aspect ratio.
pub fn resize_shorter_side(img: &RgbImage, target: usize) -> RgbImage {
    let (w, h) = shorter_side_dims(img.width, img.height, target);
    resize(img, w, h)
}

/// Resizes down so the longer side is at most `max_side`. Smaller images are
/// returned unchanged.
pub fn fit_within(img: &RgbImage, max_side: usize) -> RgbImage {
    let long = img.width.max(img.height);
    if long <= max_side {
        return img.clone();
    }
    let s = max_side as f64 / long as f64;
    let w = ((img.width as f64 * s).round() as usize).clamp(1, max_side);
    let h = ((img.height as f64 * s).round() as usize).clamp(1, max_side);
    resize(img, w, h)
}

fn crop_origin(width: usize, height: usize, size: usize) -> Result<(usize, usize), ImageError> {
    if width < size || height < size {
        return Err(ImageError::Crop {
            width,
            height,
            size,
        });
    }
    Ok(((width - size) / 2, (height - size) / 2))
}

/// Copies the centered `size x size` window. Odd remainders round the origin down.
pub fn center_crop(img: &RgbImage, size: usize) -> Result<RgbImage, ImageError> {
    let (x0, y0) = crop_origin(img.width, img.height, size)?;
    let mut data = Vec::with_capacity(3 * size * size);
    for c in 0..3 {
        let plane = img.plane(c);
        for y in y0..y0 + size {
            let row = y * img.width;
            data.extend_from_slice(&plane[row + x0..row + x0 + size]);
        }
    }
    Ok(RgbImage::from_parts(size, size, data))
}

fn center_crop_adjoint(grad: &RgbImage, width: usize, height: usize) -> Result<RgbImage, ImageError> {
    let size = grad.width;
    let (x0, y0) = crop_origin(width, height, size)?;
    let mut data = vec![0.0; 3 * width * height];
    for c in 0..3 {
        let g = grad.plane(c);
        for y in 0..size {
            let dst = (c * height + y0 + y) * width + x0;
            data[dst..dst + size].copy_from_slice(&g[y * size..(y + 1) * size]);
        }
    }
    Ok(RgbImage::from_parts(width, height, data))
}

/// Shorter-side resize followed by a center crop. No photometric
/// normalization and no clamping happen here.
pub fn preprocess_geometry(img: &RgbImage, spec: &PreprocessSpec) -> Result<RgbImage, ImageError> {
    let resized = resize_shorter_side(img, spec.target_size);
    center_crop(&resized, spec.target_size)
}

/// Transpose of [`preprocess_geometry`] for a `width x height` source image.
pub fn preprocess_adjoint(
    grad: &RgbImage,
    width: usize,
    height: usize,
    spec: &PreprocessSpec,
) -> Result<RgbImage, ImageError> {
    if grad.width != spec.target_size || grad.height != spec.target_size {
        return Err(ImageError::Invalid(format!(
            "gradient is {}x{}, expected {}x{}",
            grad.width, grad.height, spec.target_size, spec.target_size
        )));
    }
    let (rw, rh) = shorter_side_dims(width, height, spec.target_size);
    let padded = center_crop_adjoint(grad, rw, rh)?;
    Ok(resize_adjoint(&padded, width, height))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn png_rgb(w: u32, h: u32, px: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        image::codecs::png::PngEncoder::new(Cursor::new(&mut out))
            .write_image(px, w, h, image::ExtendedColorType::Rgb8)
            .unwrap();
        out
    }

    fn ramp(w: usize, h: usize) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| {
            [
                x as f64 / w as f64,
                y as f64 / h as f64,
                ((x * 7 + y * 3) % 11) as f64 / 10.0,
            ]
        })
    }

    #[test]
    fn rejects_bad_buffers() {
        assert!(RgbImage::new(2, 2, vec![0.0; 11]).is_err());
        assert!(RgbImage::new(0, 2, vec![]).is_err());
        let mut d = vec![0.0; 12];
        d[5] = f64::NAN;
        assert!(RgbImage::new(2, 2, d).is_err());
    }

    #[test]
    fn decode_maps_bytes_exactly() {
        let img = decode_image(&png_rgb(1, 1, &[255, 0, 0])).unwrap();
        assert_eq!(img.samples(), &[1.0, 0.0, 0.0]);

        let img = decode_image(&png_rgb(2, 1, &[0, 0, 0, 128, 128, 128])).unwrap();
        let v = 128.0 / 255.0;
        assert_eq!(img.plane(0), &[0.0, v]);
        assert_eq!(img.plane(1), &[0.0, v]);
        assert_eq!(img.plane(2), &[0.0, v]);
    }

    #[test]
    fn decode_replicates_gray_and_drops_alpha() {
        let mut gray = Vec::new();
        image::codecs::png::PngEncoder::new(Cursor::new(&mut gray))
            .write_image(&[51, 204], 2, 1, image::ExtendedColorType::L8)
            .unwrap();
        let img = decode_image(&gray).unwrap();
        assert_eq!(img.pixel(0, 0), [0.2, 0.2, 0.2]);
        assert_eq!(img.pixel(1, 0), [0.8, 0.8, 0.8]);

        let mut rgba = Vec::new();
        image::codecs::png::PngEncoder::new(Cursor::new(&mut rgba))
            .write_image(&[10, 20, 30, 7], 1, 1, image::ExtendedColorType::Rgba8)
            .unwrap();
        let img = decode_image(&rgba).unwrap();
        assert_eq!(img.to_rgb8(), vec![10, 20, 30]);
    }

    #[test]
    fn decode_rejects_garbage_and_16_bit() {
        assert!(matches!(decode_image(b"not an image"), Err(ImageError::Decode(_))));
        let mut deep = Vec::new();
        image::codecs::png::PngEncoder::new(Cursor::new(&mut deep))
            .write_image(&[0u8; 6], 1, 1, image::ExtendedColorType::Rgb16)
            .unwrap();
        assert!(matches!(
            decode_image(&deep),
            Err(ImageError::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn encode_clamps_and_rounds() {
        let img = RgbImage::new(1, 1, vec![1.2, -0.1, 0.5]).unwrap();
        let back = image::load_from_memory(&encode_display(&img).unwrap())
            .unwrap()
            .to_rgb8();
        assert_eq!(back.as_raw(), &vec![255, 0, 128]);
        assert_eq!(RgbImage::filled(1, 1, [0.0; 3]).to_rgb8(), vec![0, 0, 0]);
        assert_eq!(RgbImage::filled(1, 1, [1.0; 3]).to_rgb8(), vec![255, 255, 255]);
    }

    #[test]
    fn resize_dimensions() {
        assert_eq!(shorter_side_dims(768, 512, 224), (336, 224));
        assert_eq!(shorter_side_dims(512, 768, 224), (224, 336));
        assert_eq!(shorter_side_dims(224, 224, 224), (224, 224));
    }

    #[test]
    fn resize_identity_is_exact() {
        let img = ramp(13, 9);
        assert_eq!(resize(&img, 13, 9), img);
        // Unit scale on one axis only still reproduces that axis exactly.
        let half = resize(&img, 13, 5);
        assert_eq!(half.width(), 13);
    }

    #[test]
    fn resize_constant_stays_constant() {
        let img = RgbImage::filled(37, 23, [0.3, 0.6, 0.9]);
        for (w, h) in [(10, 7), (80, 51), (5, 40)] {
            let out = resize(&img, w, h);
            for (c, v) in [0.3, 0.6, 0.9].into_iter().enumerate() {
                assert!(out.plane(c).iter().all(|s| (s - v).abs() < 1e-12));
            }
        }
    }

    #[test]
    fn crop_origin_uses_floor() {
        let img = ramp(336, 224);
        let out = center_crop(&img, 224).unwrap();
        assert_eq!(out.pixel(0, 0), img.pixel(56, 0));
        assert_eq!(out.pixel(223, 223), img.pixel(279, 223));

        let img = ramp(225, 225);
        let out = center_crop(&img, 224).unwrap();
        assert_eq!(out.pixel(0, 0), img.pixel(0, 0));

        let img = ramp(224, 224);
        assert_eq!(center_crop(&img, 224).unwrap(), img);
        assert!(matches!(
            center_crop(&ramp(100, 300), 224),
            Err(ImageError::Crop { .. })
        ));
    }

    #[test]
    fn preprocess_kodak_shape() {
        let img = ramp(768, 512);
        let out = preprocess_geometry(&img, &PreprocessSpec::square(224)).unwrap();
        assert_eq!((out.width(), out.height()), (224, 224));
        let gray = RgbImage::filled(97, 300, [0.5; 3]);
        let out = preprocess_geometry(&gray, &PreprocessSpec::square(224)).unwrap();
        assert!(out.samples().iter().all(|v| (v - 0.5).abs() < 1e-12));
        let square = ramp(224, 224);
        assert_eq!(preprocess_geometry(&square, &PreprocessSpec::square(224)).unwrap(), square);
    }

    #[test]
    fn fit_within_caps_longest_side() {
        let out = fit_within(&ramp(1000, 500), 768);
        assert_eq!((out.width(), out.height()), (768, 384));
        let small = ramp(30, 20);
        assert_eq!(fit_within(&small, 768), small);
    }

    fn dot(a: &RgbImage, b: &RgbImage) -> f64 {
        a.samples().iter().zip(b.samples()).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn preprocess_adjoint_is_transpose() {
        let spec = PreprocessSpec::square(16);
        for (w, h) in [(40, 24), (16, 16), (10, 13), (17, 50)] {
            let x = RgbImage::from_fn(w, h, |i, j| {
                [((i * 31 + j * 17) % 13) as f64 / 13.0, (i + j) as f64 * 0.01, ((i * j) % 7) as f64]
            });
            let y = RgbImage::from_fn(16, 16, |i, j| {
                [((i * 5 + j) % 9) as f64 - 4.0, (i as f64).cos(), (j as f64).sin()]
            });
            let lhs = dot(&preprocess_geometry(&x, &spec).unwrap(), &y);
            let rhs = dot(&x, &preprocess_adjoint(&y, w, h, &spec).unwrap());
            assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0), "{w}x{h}: {lhs} vs {rhs}");
        }
    }

    fn small_image() -> impl Strategy<Value = RgbImage> {
        (1usize..12, 1usize..12).prop_flat_map(|(w, h)| {
            proptest::collection::vec(-0.5f64..1.5, 3 * w * h)
                .prop_map(move |d| RgbImage::new(w, h, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn display_round_trip_within_one_step(img in small_image()) {
            let back = decode_image(&encode_display(&img).unwrap()).unwrap();
            prop_assert!(back.max_abs_diff(&img.clamped()) <= 1.0 / 255.0 * 0.5 + 1e-12);
            prop_assert_eq!(back, img.quantized());
        }

        #[test]
        fn resize_is_linear(
            seed in 0u64..1000,
            a in -2.0f64..2.0,
            b in -2.0f64..2.0,
            (w, h, nw, nh) in (1usize..20, 1usize..20, 1usize..30, 1usize..30),
        ) {
            let mk = |s: u64| RgbImage::from_fn(w, h, |x, y| {
                let t = (x as u64 * 7919 + y as u64 * 104729 + s * 31) as f64;
                [(t * 0.37).sin().abs(), (t * 0.11).cos().abs(), (t * 0.05).sin().abs()]
            });
            let (ia, ib) = (mk(seed), mk(seed + 1));
            let combo = RgbImage::new(w, h, ia.samples().iter().zip(ib.samples()).map(|(x, y)| a * x + b * y).collect()).unwrap();
            let lhs = resize(&combo, nw, nh);
            let (ra, rb) = (resize(&ia, nw, nh), resize(&ib, nw, nh));
            for ((l, x), y) in lhs.samples().iter().zip(ra.samples()).zip(rb.samples()) {
                prop_assert!((l - (a * x + b * y)).abs() < 1e-6);
            }
        }

        #[test]
        fn resize_stays_in_input_range(img in small_image(), nw in 1usize..25, nh in 1usize..25) {
            let out = resize(&img, nw, nh);
            for c in 0..3 {
                let lo = img.plane(c).iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = img.plane(c).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(out.plane(c).iter().all(|v| *v >= lo - 1e-12 && *v <= hi + 1e-12));
            }
        }

        #[test]
        fn preprocess_output_is_square_unit_range(
            (w, h) in (1usize..60, 1usize..60),
            target in 1usize..24,
        ) {
            let img = RgbImage::from_fn(w, h, |x, y| [((x * y) % 5) as f64 / 4.0, x as f64 / w as f64, y as f64 / h as f64]);
            let out = preprocess_geometry(&img, &PreprocessSpec::square(target)).unwrap();
            prop_assert_eq!((out.width(), out.height()), (target, target));
            prop_assert!(out.samples().iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
        }
    }
}
