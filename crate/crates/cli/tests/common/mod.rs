#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use ccmtune_core::image::{write_png, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const BIN: &str = env!("CARGO_BIN_EXE_ccmtune");

/// Smooth, cool-cast test scene: a bluish base with a sinusoidal ripple per
/// channel and a vertical luminance ramp.
pub fn cool_scene(seed: u64, w: usize, h: usize) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = [rng.gen_range(0.2..0.35), rng.gen_range(0.35..0.5), rng.gen_range(0.55..0.7)];
    let freq: [f64; 3] = [rng.gen_range(2.0..6.0), rng.gen_range(2.0..6.0), rng.gen_range(2.0..6.0)];
    RgbImage::from_fn(w, h, |x, y| {
        let u = x as f64 / w as f64;
        let v = y as f64 / h as f64;
        let mut px = [0.0; 3];
        for c in 0..3 {
            let ripple = 0.15 * (freq[c] * (u + 0.7 * v) * std::f64::consts::TAU / 2.0 + 2.1 * c as f64).sin();
            px[c] = (base[c] + ripple + 0.1 * (v - 0.5)).clamp(0.0, 1.0);
        }
        px
    })
}

pub fn save(path: &Path, img: &RgbImage) {
    write_png(path, img).unwrap();
}

pub fn ccmtune(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("CCMTUNE_CONFIG")
        .env_remove("CCMTUNE_DATA_DIR")
        .env_remove("CCMTUNE_WORKERS")
        .output()
        .expect("spawn ccmtune")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}
