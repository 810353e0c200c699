//! Colorfulness, CLIP-IQA deltas and the vibrant/dull experiment.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{EmbedError, Embedding, EmbeddingBackend};
use crate::image::{preprocess_geometry, RgbImage};
use crate::objective::{clip_iqa_score, ObjectiveSpec, PromptSpec, Template};
use crate::optimizer::{render_output, tune, TuneConfig, TuneError};
use crate::par;

/// Positive prompt of the CLIP-IQA colorfulness pair.
pub const IQA_POSITIVE: &str = "Colorful photo.";
/// Negative prompt of the CLIP-IQA colorfulness pair.
pub const IQA_NEGATIVE: &str = "Dull photo.";

/// First and second moments of an image's channels.
///
/// `mean` and the luma statistics are on the `[0, 1]` scale; the opponent
/// channels `rg = R - G` and `yb = (R + G)/2 - B` are on the 0-255 scale.
/// Variances are population variances.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColorStats {
    pub mean: [f64; 3],
    pub mean_rg: f64,
    pub mean_yb: f64,
    pub var_rg: f64,
    pub var_yb: f64,
    pub mean_luma: f64,
    pub var_luma: f64,
}

#[inline]
fn opponent(r: f64, g: f64, b: f64) -> (f64, f64) {
    (255.0 * (r - g), 255.0 * (0.5 * (r + g) - b))
}

pub fn color_stats(img: &RgbImage) -> ColorStats {
    let n = img.pixel_count();
    if n == 0 {
        return ColorStats {
            mean: [0.0; 3],
            mean_rg: 0.0,
            mean_yb: 0.0,
            var_rg: 0.0,
            var_yb: 0.0,
            mean_luma: 0.0,
            var_luma: 0.0,
        };
    }
    let [r, g, b] = img.planes();
    let nf = n as f64;
    let s = par::sum_ranges::<6, _>(n, |range| {
        let mut acc = [0.0; 6];
        for p in range {
            let (rg, yb) = opponent(r[p], g[p], b[p]);
            acc[0] += r[p];
            acc[1] += g[p];
            acc[2] += b[p];
            acc[3] += rg;
            acc[4] += yb;
            acc[5] += (r[p] + g[p] + b[p]) / 3.0;
        }
        acc
    });
    let mean = [s[0] / nf, s[1] / nf, s[2] / nf];
    let (mean_rg, mean_yb, mean_luma) = (s[3] / nf, s[4] / nf, s[5] / nf);
    let d = par::sum_ranges::<3, _>(n, |range| {
        let mut acc = [0.0; 3];
        for p in range {
            let (rg, yb) = opponent(r[p], g[p], b[p]);
            let luma = (r[p] + g[p] + b[p]) / 3.0;
            acc[0] += (rg - mean_rg) * (rg - mean_rg);
            acc[1] += (yb - mean_yb) * (yb - mean_yb);
            acc[2] += (luma - mean_luma) * (luma - mean_luma);
        }
        acc
    });
    ColorStats {
        mean,
        mean_rg,
        mean_yb,
        var_rg: d[0] / nf,
        var_yb: d[1] / nf,
        mean_luma,
        var_luma: d[2] / nf,
    }
}

/// Hasler-Süsstrunk colorfulness on the 0-255 scale:
/// `sqrt(var_rg + var_yb) + 0.3 * sqrt(mean_rg^2 + mean_yb^2)`.
pub fn colorfulness(img: &RgbImage) -> f64 {
    let s = color_stats(img);
    (s.var_rg + s.var_yb).sqrt() + 0.3 * (s.mean_rg * s.mean_rg + s.mean_yb * s.mean_yb).sqrt()
}

/// Colorfulness-pair CLIP-IQA score of an image as the backend sees it.
pub fn clip_iqa(
    img: &RgbImage,
    backend: &dyn EmbeddingBackend,
    pos: &Embedding,
    neg: &Embedding,
) -> Result<f64, TuneError> {
    let spec = backend.descriptor().preprocess_spec();
    let emb = backend.embed_image(&preprocess_geometry(img, &spec)?)?;
    Ok(clip_iqa_score(&emb, pos, neg)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub image_id: String,
    #[serde(rename = "C_vibrant")]
    pub c_vibrant: f64,
    #[serde(rename = "C_dull")]
    pub c_dull: f64,
    pub iqa_vibrant: f64,
    pub iqa_dull: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentFailure {
    pub image_id: String,
    pub error: String,
}

/// The two configurations an experiment tunes with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigPair {
    pub vibrant: TuneConfig,
    pub dull: TuneConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub per_image: Vec<ExperimentRow>,
    #[serde(rename = "delta_C")]
    pub delta_c: f64,
    pub delta_clip_iqa: f64,
    pub failures: Vec<ExperimentFailure>,
    pub config_echo: ConfigPair,
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("the experiment needs at least one image")]
    NoImages,
    #[error("every image failed; first error: {}", .0.first().map(|f| f.error.as_str()).unwrap_or(""))]
    AllFailed(Vec<ExperimentFailure>),
    #[error(transparent)]
    Tune(#[from] TuneError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl From<EmbedError> for ExperimentError {
    fn from(e: EmbedError) -> Self {
        ExperimentError::Tune(e.into())
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

impl ExperimentReport {
    /// Builds a report whose deltas are the unweighted means over `rows`.
    pub fn from_rows(per_image: Vec<ExperimentRow>, failures: Vec<ExperimentFailure>, config_echo: ConfigPair) -> Self {
        let delta_c = mean(per_image.iter().map(|r| r.c_vibrant - r.c_dull));
        let delta_clip_iqa = mean(per_image.iter().map(|r| r.iqa_vibrant - r.iqa_dull));
        Self {
            per_image,
            delta_c,
            delta_clip_iqa,
            failures,
            config_echo,
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.per_image {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes `report.csv` and `summary.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), ExperimentError> {
        std::fs::create_dir_all(dir)?;
        self.write_csv(std::fs::File::create(dir.join("report.csv"))?)?;
        std::fs::write(dir.join("summary.json"), self.to_json())?;
        Ok(())
    }
}

/// Reads back the rows of [`ExperimentReport::write_csv`].
pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<ExperimentRow>, csv::Error> {
    csv::Reader::from_reader(input).deserialize().collect()
}

/// The vibrant and dull configurations derived from `base`: same settings,
/// same template, keyword replaced.
pub fn experiment_configs(base: &TuneConfig) -> ConfigPair {
    let (template, content): (Template, Option<String>) = match &base.objective {
        ObjectiveSpec::Single { prompt } => (prompt.template, prompt.content.clone()),
        ObjectiveSpec::TwoPrompt(t) => (t.prompt_a.template, t.prompt_a.content.clone()),
    };
    let with_keyword = |kw: &str| {
        let mut cfg = base.clone();
        let mut prompt = PromptSpec::new(template, kw);
        prompt.content = content.clone();
        cfg.objective = ObjectiveSpec::single(prompt);
        cfg
    };
    ConfigPair {
        vibrant: with_keyword("vibrant"),
        dull: with_keyword("dull"),
    }
}

/// An image in an experiment corpus.
#[derive(Clone, Debug)]
pub struct CorpusImage {
    pub id: String,
    pub image: RgbImage,
}

/// Tunes every image toward "vibrant" and toward "dull", renders both
/// outputs for display and scores them. Up to `jobs` images run at once.
pub fn vibrant_dull_experiment(
    images: &[CorpusImage],
    base: &TuneConfig,
    backend: &dyn EmbeddingBackend,
    jobs: usize,
) -> Result<ExperimentReport, ExperimentError> {
    if images.is_empty() {
        return Err(ExperimentError::NoImages);
    }
    base.validate().map_err(TuneError::from)?;
    let configs = experiment_configs(base);
    let pos = backend.embed_text(IQA_POSITIVE)?;
    let neg = backend.embed_text(IQA_NEGATIVE)?;

    let run_one = |item: &CorpusImage| -> Result<ExperimentRow, TuneError> {
        let score = |cfg: &TuneConfig| -> Result<(f64, f64), TuneError> {
            let result = tune(&item.image, cfg, backend).map_err(|f| f.error)?;
            let rendered = render_output(&item.image, &result.final_matrix);
            Ok((colorfulness(&rendered), clip_iqa(&rendered, backend, &pos, &neg)?))
        };
        let (c_vibrant, iqa_vibrant) = score(&configs.vibrant)?;
        let (c_dull, iqa_dull) = score(&configs.dull)?;
        Ok(ExperimentRow {
            image_id: item.id.clone(),
            c_vibrant,
            c_dull,
            iqa_vibrant,
            iqa_dull,
        })
    };
    let outcomes = run_pool(jobs, || par::map_items(images, run_one));

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (item, outcome) in images.iter().zip(outcomes) {
        match outcome {
            Ok(row) => rows.push(row),
            Err(e) => failures.push(ExperimentFailure {
                image_id: item.id.clone(),
                error: e.to_string(),
            }),
        }
    }
    if rows.is_empty() {
        return Err(ExperimentError::AllFailed(failures));
    }
    Ok(ExperimentReport::from_rows(rows, failures, configs))
}

#[cfg(feature = "parallel")]
fn run_pool<A: Send>(jobs: usize, f: impl FnOnce() -> A + Send) -> A {
    match rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

#[cfg(not(feature = "parallel"))]
fn run_pool<A: Send>(_jobs: usize, f: impl FnOnce() -> A + Send) -> A {
    f()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::SyntheticBackend;
    use proptest::prelude::*;

    #[test]
    fn colorfulness_oracles() {
        assert_eq!(colorfulness(&RgbImage::filled(5, 3, [0.4; 3])), 0.0);
        let gray = RgbImage::from_fn(7, 5, |x, y| [((x * y) % 11) as f64 / 10.0; 3]);
        assert_eq!(colorfulness(&gray), 0.0);

        let red = colorfulness(&RgbImage::filled(4, 4, [1.0, 0.0, 0.0]));
        let expected = 0.3 * (255.0f64.powi(2) + 127.5f64.powi(2)).sqrt();
        assert!((red - expected).abs() < 1e-9);
        assert!((red - 85.53).abs() < 0.01, "red {red}");

        let half = RgbImage::from_fn(6, 4, |x, _| if x < 3 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] });
        assert!((colorfulness(&half) - 293.25).abs() < 1e-9);
    }

    #[test]
    fn stats_match_brute_force() {
        let img = RgbImage::from_fn(9, 7, |x, y| [x as f64 / 9.0, y as f64 / 7.0, ((x + y) % 3) as f64 / 3.0]);
        let s = color_stats(&img);
        let n = img.pixel_count() as f64;
        let rg: Vec<f64> = (0..img.pixel_count())
            .map(|p| 255.0 * (img.plane(0)[p] - img.plane(1)[p]))
            .collect();
        let m = rg.iter().sum::<f64>() / n;
        let v = rg.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
        assert!((s.mean_rg - m).abs() < 1e-9);
        assert!((s.var_rg - v).abs() < 1e-7);
    }

    fn report_rows() -> Vec<ExperimentRow> {
        vec![
            ExperimentRow {
                image_id: "a".into(),
                c_vibrant: 40.0,
                c_dull: 10.0,
                iqa_vibrant: 0.6,
                iqa_dull: 0.4,
            },
            ExperimentRow {
                image_id: "b".into(),
                c_vibrant: 30.0,
                c_dull: 20.0,
                iqa_vibrant: 0.5,
                iqa_dull: 0.5,
            },
        ]
    }

    #[test]
    fn report_means_and_export() {
        let pair = experiment_configs(&TuneConfig::for_keyword("x"));
        let report = ExperimentReport::from_rows(report_rows(), vec![], pair);
        assert_eq!(report.delta_c, 20.0);
        assert!((report.delta_clip_iqa - 0.1).abs() < 1e-15);

        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("image_id,C_vibrant,C_dull,iqa_vibrant,iqa_dull\n"));
        assert_eq!(read_csv(buf.as_slice()).unwrap(), report.per_image);

        let v: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(v["delta_C"], 20.0);
        assert!(v["config_echo"]["vibrant"]["objective"].is_object());
        let back: ExperimentReport = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn configs_keep_template_and_settings() {
        let mut base = TuneConfig::new(ObjectiveSpec::single(PromptSpec::new(Template::D, "warm")));
        base.tau = 0.5;
        let pair = experiment_configs(&base);
        assert_eq!(pair.vibrant.tau, 0.5);
        match &pair.dull.objective {
            ObjectiveSpec::Single { prompt } => {
                assert_eq!(prompt.template, Template::D);
                assert_eq!(prompt.keyword, "dull");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn synthetic_experiment_separates_vibrant_from_dull() {
        let backend = SyntheticBackend::with_input_size(16);
        let images: Vec<CorpusImage> = (0..3)
            .map(|k| CorpusImage {
                id: format!("img{k}"),
                image: RgbImage::from_fn(24, 20, |x, y| {
                    let t = (x + 2 * y + 5 * k) as f64 / 70.0;
                    [0.3 + 0.4 * t, 0.5 - 0.1 * t, 0.45 + 0.1 * (k as f64) * t]
                }),
            })
            .collect();
        let mut base = TuneConfig::for_keyword("vibrant");
        base.iterations = 150;
        let serial = vibrant_dull_experiment(&images, &base, &backend, 1).unwrap();
        assert!(serial.delta_c > 0.0, "delta C {}", serial.delta_c);
        assert!(serial.failures.is_empty());
        assert_eq!(serial.per_image.len(), 3);
        let fanned = vibrant_dull_experiment(&images, &base, &backend, 3).unwrap();
        assert_eq!(serial, fanned);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let backend = SyntheticBackend::with_input_size(8);
        let r = vibrant_dull_experiment(&[], &TuneConfig::for_keyword("x"), &backend, 1);
        assert!(matches!(r, Err(ExperimentError::NoImages)));
    }

    /// Refuses images whose mean red is high.
    struct PickyBackend(SyntheticBackend);

    impl EmbeddingBackend for PickyBackend {
        fn descriptor(&self) -> crate::embedding::BackendDescriptor {
            self.0.descriptor()
        }
        fn embed_image(&self, img: &RgbImage) -> Result<Embedding, EmbedError> {
            if color_stats(img).mean[0] > 0.8 {
                return Err(EmbedError::BackendUnavailable("too red".into()));
            }
            self.0.embed_image(img)
        }
        fn embed_text(&self, text: &str) -> Result<Embedding, EmbedError> {
            self.0.embed_text(text)
        }
        fn image_pullback(&self, img: &RgbImage, cot: &[f64]) -> Result<RgbImage, EmbedError> {
            self.0.image_pullback(img, cot)
        }
    }

    #[test]
    fn failed_images_are_excluded_and_reported() {
        let backend = PickyBackend(SyntheticBackend::with_input_size(8));
        let images = vec![
            CorpusImage {
                id: "ok".into(),
                image: RgbImage::from_fn(8, 8, |x, _| [0.3 + 0.05 * x as f64, 0.5, 0.4]),
            },
            CorpusImage {
                id: "red".into(),
                image: RgbImage::filled(8, 8, [0.95, 0.1, 0.1]),
            },
        ];
        let mut base = TuneConfig::for_keyword("vibrant");
        base.iterations = 5;
        let report = vibrant_dull_experiment(&images, &base, &backend, 1).unwrap();
        assert_eq!(report.per_image.len(), 1);
        assert_eq!(report.failures.len(), 1);
        assert_eq!(report.failures[0].image_id, "red");
        assert!(report.failures[0].error.contains("too red"));

        let err = vibrant_dull_experiment(&images[1..], &base, &backend, 1).unwrap_err();
        assert!(matches!(err, ExperimentError::AllFailed(ref f) if f.len() == 1));
    }

    proptest! {
        #[test]
        fn permutation_invariant_and_non_negative(
            px in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), 12),
            rot in 0usize..12,
        ) {
            let build = |order: &[(f64, f64, f64)]| {
                RgbImage::from_fn(4, 3, |x, y| {
                    let (r, g, b) = order[y * 4 + x];
                    [r, g, b]
                })
            };
            let mut shuffled = px.clone();
            shuffled.rotate_left(rot);
            shuffled.reverse();
            let a = colorfulness(&build(&px));
            let b = colorfulness(&build(&shuffled));
            prop_assert!(a >= 0.0);
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        }
    }
}
