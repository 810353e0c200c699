//! Closed-form backend for tests and offline runs.
//!
//! Image features, before L2 normalization:
//!
//! ```text
//! [mu_R - 0.5, mu_G - 0.5, mu_B - 0.5, C / 100, mu_R - mu_B, sigma_luma, 0.1, 0]
//! ```
//!
//! where `C` is the colorfulness statistic on the 0-255 scale and
//! `luma = (R + G + B) / 3`. Text prompts map to fixed anchors on these
//! axes; the first anchor keyword found in the prompt wins. Anything else
//! hashes to a fixed pseudo-random unit vector.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{check_input_shape, BackendDescriptor, EmbedError, Embedding, EmbeddingBackend};
use crate::image::RgbImage;
use crate::metrics::{color_stats, ColorStats};
use crate::par;

pub const DEFAULT_INPUT_SIZE: usize = 224;
pub const EMBED_DIM: usize = 8;
const BIAS: f64 = 0.1;

/// Anchor keywords in priority order.
pub const ANCHOR_KEYWORDS: [&str; 6] = ["warm", "cool", "vibrant", "dull", "bright", "dark"];

#[derive(Clone, Debug)]
pub struct SyntheticBackend {
    name: String,
    input_size: usize,
}

impl Default for SyntheticBackend {
    fn default() -> Self {
        Self::with_input_size(DEFAULT_INPUT_SIZE)
    }
}

impl SyntheticBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_input_size(input_size: usize) -> Self {
        assert!(input_size >= 1, "input size must be positive");
        Self {
            name: "synthetic".into(),
            input_size,
        }
    }

    pub fn named(mut self, name: &str) -> Self {
        self.name = name.to_string();
        self
    }
}

fn colorfulness_from(s: &ColorStats) -> f64 {
    (s.var_rg + s.var_yb).sqrt() + 0.3 * (s.mean_rg * s.mean_rg + s.mean_yb * s.mean_yb).sqrt()
}

/// Un-normalized feature vector of an image.
pub fn raw_features(img: &RgbImage) -> [f64; EMBED_DIM] {
    let s = color_stats(img);
    [
        s.mean[0] - 0.5,
        s.mean[1] - 0.5,
        s.mean[2] - 0.5,
        colorfulness_from(&s) / 100.0,
        s.mean[0] - s.mean[2],
        s.var_luma.sqrt(),
        BIAS,
        0.0,
    ]
}

/// Anchor direction for a prompt, if it mentions one of [`ANCHOR_KEYWORDS`].
pub fn text_anchor(prompt: &str) -> Option<(&'static str, [f64; EMBED_DIM])> {
    let lower = prompt.to_lowercase();
    let (_, keyword) = ANCHOR_KEYWORDS
        .iter()
        .filter_map(|k| lower.find(k).map(|pos| (pos, *k)))
        .min_by_key(|(pos, _)| *pos)?;
    let third = 1.0 / 3f64.sqrt();
    let mut v = [0.0; EMBED_DIM];
    match keyword {
        "warm" => v[4] = 1.0,
        "cool" => v[4] = -1.0,
        "vibrant" => v[3] = 1.0,
        "dull" => v[3] = -1.0,
        "bright" => v[..3].fill(third),
        "dark" => v[..3].fill(-third),
        _ => unreachable!(),
    }
    v[6] = BIAS;
    Some((keyword, v))
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(0x0100_0000_01b3)
    })
}

fn hashed_direction(prompt: &str) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(prompt.as_bytes()));
    loop {
        let v: Vec<f64> = (0..EMBED_DIM).map(|_| StandardNormal.sample(&mut rng)).collect();
        if v.iter().any(|x| *x != 0.0) {
            return v;
        }
    }
}

impl EmbeddingBackend for SyntheticBackend {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            name: self.name.clone(),
            architecture_id: "synthetic-color-stats".into(),
            weights_id: "none".into(),
            embed_dim: EMBED_DIM,
            input_size: self.input_size,
            supports_pullback: true,
        }
    }

    fn embed_image(&self, img: &RgbImage) -> Result<Embedding, EmbedError> {
        check_input_shape(img, self.input_size)?;
        Embedding::normalized(raw_features(img).to_vec())
    }

    fn embed_text(&self, prompt: &str) -> Result<Embedding, EmbedError> {
        if prompt.trim().is_empty() {
            return Err(EmbedError::Tokenize("empty prompt".into()));
        }
        match text_anchor(prompt) {
            Some((_, v)) => Embedding::normalized(v.to_vec()),
            None => Embedding::normalized(hashed_direction(prompt)),
        }
    }

    fn image_pullback(&self, img: &RgbImage, cotangent: &[f64]) -> Result<RgbImage, EmbedError> {
        check_input_shape(img, self.input_size)?;
        if cotangent.len() != EMBED_DIM {
            return Err(EmbedError::Shape(format!(
                "cotangent has {} components, expected {EMBED_DIM}",
                cotangent.len()
            )));
        }
        let raw = raw_features(img);
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        // Back through the L2 normalization: (c - (c.u) u) / |e|.
        let cu: f64 = cotangent.iter().zip(&raw).map(|(c, e)| c * e / norm).sum();
        let cr: Vec<f64> = cotangent
            .iter()
            .zip(&raw)
            .map(|(c, e)| (c - cu * e / norm) / norm)
            .collect();
        Ok(raw_feature_pullback(img, &cr))
    }
}

/// Gradient of `<cr, raw_features(img)>` with respect to the image.
fn raw_feature_pullback(img: &RgbImage, cr: &[f64]) -> RgbImage {
    let s = color_stats(img);
    let n = img.pixel_count() as f64;
    let spread = (s.var_rg + s.var_yb).sqrt();
    let offset = (s.mean_rg * s.mean_rg + s.mean_yb * s.mean_yb).sqrt();
    let sigma_luma = s.var_luma.sqrt();

    // Per-pixel derivative of C wrt rg_p is a_rg * rg_p + b_rg (same for yb).
    let w_c = cr[3] / 100.0;
    let (spread_k, offset_k) = (
        if spread > 0.0 { w_c / (n * spread) } else { 0.0 },
        if offset > 0.0 { 0.3 * w_c / (n * offset) } else { 0.0 },
    );
    let d_rg_const = -spread_k * s.mean_rg + offset_k * s.mean_rg;
    let d_yb_const = -spread_k * s.mean_yb + offset_k * s.mean_yb;
    let luma_k = if sigma_luma > 0.0 { cr[5] / (n * sigma_luma) } else { 0.0 };

    let base = [(cr[0] + cr[4]) / n, cr[1] / n, (cr[2] - cr[4]) / n];
    let [r, g, b] = img.planes();
    let mut out = RgbImage::from_parts(img.width(), img.height(), vec![0.0; img.samples().len()]);
    par::for_each_chunk_mut3(out.planes_mut(), par::CHUNK, |off, gr, gg, gb| {
        for i in 0..gr.len() {
            let p = off + i;
            let rg = 255.0 * (r[p] - g[p]);
            let yb = 255.0 * (0.5 * (r[p] + g[p]) - b[p]);
            let d_rg = spread_k * rg + d_rg_const;
            let d_yb = spread_k * yb + d_yb_const;
            let luma = (r[p] + g[p] + b[p]) / 3.0;
            let d_luma = luma_k * (luma - s.mean_luma) / 3.0;
            gr[i] = base[0] + 255.0 * d_rg + 127.5 * d_yb + d_luma;
            gg[i] = base[1] - 255.0 * d_rg + 127.5 * d_yb + d_luma;
            gb[i] = base[2] - 255.0 * d_yb + d_luma;
        }
    });
    out
}
