//! Prompt construction, cosine similarity and the losses built on it.
//!
//! Losses are minimized. The single-prompt loss is the negated similarity;
//! the two-prompt loss is the squared gap between the softmax share of
//! prompt A and the target ratio `alpha`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::Embedding;

#[derive(Debug, Error, PartialEq)]
pub enum ObjectiveError {
    #[error("embedding has zero norm")]
    ZeroNorm,
    #[error("embedding lengths differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("invalid prompt: {0}")]
    InvalidPrompt(String),
    #[error("invalid objective parameter `{field}`: {message}")]
    InvalidParameter { field: &'static str, message: String },
}

/// Prompt construction templates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Template {
    /// `{keyword}`
    A,
    /// `A {keyword} photo`
    B,
    /// `A photo that appears {keyword}`
    C,
    /// `A {keyword} photo of {content}`
    D,
}

impl std::str::FromStr for Template {
    type Err = ObjectiveError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "A" | "a" => Ok(Template::A),
            "B" | "b" => Ok(Template::B),
            "C" | "c" => Ok(Template::C),
            "D" | "d" => Ok(Template::D),
            other => Err(ObjectiveError::InvalidPrompt(format!(
                "unknown template `{other}` (expected A, B, C or D)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub template: Template,
    pub keyword: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content: Option<String>,
}

impl PromptSpec {
    pub fn new(template: Template, keyword: impl Into<String>) -> Self {
        Self {
            template,
            keyword: keyword.into(),
            content: None,
        }
    }

    pub fn with_content(keyword: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            template: Template::D,
            keyword: keyword.into(),
            content: Some(content.into()),
        }
    }

    pub fn validate(&self) -> Result<(), ObjectiveError> {
        if self.keyword.trim().is_empty() {
            return Err(ObjectiveError::InvalidPrompt("keyword is empty".into()));
        }
        match (self.template, &self.content) {
            (Template::D, None) => Err(ObjectiveError::InvalidPrompt(
                "template D needs a content description".into(),
            )),
            (Template::D, Some(c)) if c.trim().is_empty() => Err(ObjectiveError::InvalidPrompt(
                "template D needs a content description".into(),
            )),
            (t, Some(_)) if t != Template::D => Err(ObjectiveError::InvalidPrompt(
                "a content description is only allowed with template D".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn render(&self) -> String {
        render_prompt(self)
    }
}

pub fn render_prompt(spec: &PromptSpec) -> String {
    let k = &spec.keyword;
    match spec.template {
        Template::A => k.clone(),
        Template::B => format!("A {k} photo"),
        Template::C => format!("A photo that appears {k}"),
        Template::D => format!(
            "A {k} photo of {}",
            spec.content.as_deref().unwrap_or_default()
        ),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoPromptSpec {
    pub prompt_a: PromptSpec,
    pub prompt_b: PromptSpec,
    pub alpha: f64,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
}

fn default_temperature() -> f64 {
    1.0
}

impl TwoPromptSpec {
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        self.prompt_a.validate()?;
        self.prompt_b.validate()?;
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(ObjectiveError::InvalidParameter {
                field: "alpha",
                message: format!("must be in [0, 1], got {}", self.alpha),
            });
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(ObjectiveError::InvalidParameter {
                field: "temperature",
                message: format!("must be positive, got {}", self.temperature),
            });
        }
        Ok(())
    }
}

/// What a tuning run optimizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectiveSpec {
    Single { prompt: PromptSpec },
    TwoPrompt(TwoPromptSpec),
}

impl ObjectiveSpec {
    pub fn single(prompt: PromptSpec) -> Self {
        ObjectiveSpec::Single { prompt }
    }

    pub fn validate(&self) -> Result<(), ObjectiveError> {
        match self {
            ObjectiveSpec::Single { prompt } => prompt.validate(),
            ObjectiveSpec::TwoPrompt(two) => two.validate(),
        }
    }

    /// Rendered prompt strings, A first.
    pub fn prompts(&self) -> Vec<String> {
        match self {
            ObjectiveSpec::Single { prompt } => vec![prompt.render()],
            ObjectiveSpec::TwoPrompt(t) => vec![t.prompt_a.render(), t.prompt_b.render()],
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64, ObjectiveError> {
    cosine_raw(a.as_slice(), b.as_slice())
}

fn cosine_raw(a: &[f64], b: &[f64]) -> Result<f64, ObjectiveError> {
    if a.len() != b.len() {
        return Err(ObjectiveError::DimensionMismatch(a.len(), b.len()));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(ObjectiveError::ZeroNorm);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Gradient of `cos(a, b)` with respect to `a`: `(b/|b| - s a/|a|) / |a|`.
fn cosine_grad(a: &[f64], b: &[f64], s: f64) -> Vec<f64> {
    let (na, nb) = (norm(a), norm(b));
    a.iter()
        .zip(b)
        .map(|(x, y)| (y / nb - s * x / na) / na)
        .collect()
}

pub fn single_prompt_loss(img: &Embedding, txt: &Embedding) -> Result<f64, ObjectiveError> {
    Ok(-cosine_similarity(img, txt)?)
}

fn logistic(x: f64) -> f64 {
    // Both branches exponentiate a non-positive number.
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Two-way softmax `(p_a, p_b)` of similarities at `temperature`.
///
/// Computed as a max-shifted softmax; `p_a` and `p_b` are evaluated
/// symmetrically so swapping the inputs swaps the outputs bit for bit.
pub fn softmax_pair(s_a: f64, s_b: f64, temperature: f64) -> (f64, f64) {
    let x = (s_a - s_b) / temperature;
    (logistic(x), logistic(-x))
}

/// Residual `p_a - alpha`, in a form that is exactly antisymmetric under
/// `(s_a, s_b, alpha) -> (s_b, s_a, 1 - alpha)` whenever `1 - (1 - alpha) == alpha`.
fn two_prompt_residual(s_a: f64, s_b: f64, alpha: f64, temperature: f64) -> (f64, f64, f64) {
    let (p_a, p_b) = softmax_pair(s_a, s_b, temperature);
    let r = if s_a >= s_b {
        p_a - alpha
    } else {
        -(p_b - (1.0 - alpha))
    };
    (r, p_a, p_b)
}

/// `(softmax(s_a, s_b)_A - alpha)^2` with `s_X = cos(img, emb_X)`.
pub fn two_prompt_loss(
    img: &Embedding,
    emb_a: &Embedding,
    emb_b: &Embedding,
    alpha: f64,
    temperature: f64,
) -> Result<f64, ObjectiveError> {
    if !(temperature > 0.0) {
        return Err(ObjectiveError::InvalidParameter {
            field: "temperature",
            message: format!("must be positive, got {temperature}"),
        });
    }
    let s_a = cosine_similarity(img, emb_a)?;
    let s_b = cosine_similarity(img, emb_b)?;
    let (r, _, _) = two_prompt_residual(s_a, s_b, alpha, temperature);
    Ok(r * r)
}

/// Softmax share of the positive prompt at temperature 1.
pub fn clip_iqa_score(img: &Embedding, pos: &Embedding, neg: &Embedding) -> Result<f64, ObjectiveError> {
    let s_pos = cosine_similarity(img, pos)?;
    let s_neg = cosine_similarity(img, neg)?;
    Ok(softmax_pair(s_pos, s_neg, 1.0).0)
}

/// Text side of an objective, embedded once per run.
#[derive(Clone, Debug)]
pub enum Targets {
    Single(Embedding),
    TwoPrompt {
        a: Embedding,
        b: Embedding,
        alpha: f64,
        temperature: f64,
    },
}

/// Loss, the similarities behind it, and its gradient with respect to the
/// image embedding.
#[derive(Clone, Debug)]
pub struct LossEval {
    pub loss: f64,
    pub sim_a: f64,
    pub sim_b: Option<f64>,
    pub p_a: Option<f64>,
    pub grad: Vec<f64>,
}

impl Targets {
    pub fn evaluate(&self, img: &Embedding) -> Result<LossEval, ObjectiveError> {
        let x = img.as_slice();
        match self {
            Targets::Single(t) => {
                let s = cosine_raw(x, t.as_slice())?;
                let grad = cosine_grad(x, t.as_slice(), s).into_iter().map(|g| -g).collect();
                Ok(LossEval {
                    loss: -s,
                    sim_a: s,
                    sim_b: None,
                    p_a: None,
                    grad,
                })
            }
            Targets::TwoPrompt {
                a,
                b,
                alpha,
                temperature,
            } => {
                let s_a = cosine_raw(x, a.as_slice())?;
                let s_b = cosine_raw(x, b.as_slice())?;
                let (r, p_a, p_b) = two_prompt_residual(s_a, s_b, *alpha, *temperature);
                // dL/ds_a = 2 r p_a p_b / T, dL/ds_b = -dL/ds_a
                let k = 2.0 * r * (p_a * p_b) / temperature;
                let ga = cosine_grad(x, a.as_slice(), s_a);
                let gb = cosine_grad(x, b.as_slice(), s_b);
                let grad = ga.iter().zip(&gb).map(|(u, v)| k * (u - v)).collect();
                Ok(LossEval {
                    loss: r * r,
                    sim_a: s_a,
                    sim_b: Some(s_b),
                    p_a: Some(p_a),
                    grad,
                })
            }
        }
    }
}
