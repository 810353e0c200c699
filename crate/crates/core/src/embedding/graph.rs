//! Backend running exported ONNX encoder graphs on the CPU.
//!
//! Expects an image encoder taking `[1, 3, S, S]` normalized `f32` and a
//! text encoder taking `[1, context_length]` token ids, each producing a
//! `[1, F]` embedding. Forward only, so no pullback.

use std::path::Path;

use tokenizers::Tokenizer;
use tract_onnx::prelude::*;
use tract_onnx::tract_hir::infer::Factoid;

use super::{check_input_shape, BackendDescriptor, EmbedError, Embedding, EmbeddingBackend, GraphPaths};
use crate::image::RgbImage;

type Plan = TypedRunnableModel<TypedModel>;

pub struct GraphBackend {
    descriptor: BackendDescriptor,
    image_plan: Plan,
    text_plan: Plan,
    text_dtype: DatumType,
    tokenizer: Tokenizer,
    context_length: usize,
    mean: [f32; 3],
    std: [f32; 3],
}

impl std::fmt::Debug for GraphBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GraphBackend")
            .field("descriptor", &self.descriptor)
            .finish_non_exhaustive()
    }
}

fn config_err(what: &str, path: &Path, e: impl std::fmt::Display) -> EmbedError {
    EmbedError::Config(format!("{what} {}: {e}", path.display()))
}

fn runtime_err(e: impl std::fmt::Display) -> EmbedError {
    EmbedError::BackendUnavailable(format!("graph execution failed: {e}"))
}

impl GraphBackend {
    pub fn load(name: &str, paths: &GraphPaths) -> Result<Self, EmbedError> {
        let size = paths.input_size;
        let image_plan = tract_onnx::onnx()
            .model_for_path(&paths.image_encoder)
            .and_then(|m| m.with_input_fact(0, f32::fact([1, 3, size, size]).into()))
            .and_then(|m| m.into_optimized())
            .and_then(|m| m.into_runnable())
            .map_err(|e| config_err("cannot load image encoder", &paths.image_encoder, e))?;

        let text_model = tract_onnx::onnx()
            .model_for_path(&paths.text_encoder)
            .map_err(|e| config_err("cannot load text encoder", &paths.text_encoder, e))?;
        let text_dtype = text_model
            .input_fact(0)
            .ok()
            .and_then(|f| f.datum_type.concretize())
            .unwrap_or(DatumType::I64);
        let text_plan = text_model
            .with_input_fact(0, InferenceFact::dt_shape(text_dtype, [1, paths.context_length]))
            .and_then(|m| m.into_optimized())
            .and_then(|m| m.into_runnable())
            .map_err(|e| config_err("cannot prepare text encoder", &paths.text_encoder, e))?;

        let tokenizer = Tokenizer::from_file(&paths.tokenizer)
            .map_err(|e| config_err("cannot load tokenizer", &paths.tokenizer, e))?;

        let mut backend = Self {
            descriptor: BackendDescriptor {
                name: name.to_string(),
                architecture_id: paths.architecture_id.clone(),
                weights_id: paths.weights_id.clone(),
                embed_dim: 0,
                input_size: size,
                supports_pullback: false,
            },
            image_plan,
            text_plan,
            text_dtype,
            tokenizer,
            context_length: paths.context_length,
            mean: paths.mean,
            std: paths.std,
        };
        // The graph is the authority on the embedding width.
        let probe = backend.run_image(&RgbImage::filled(size, size, [0.5; 3]))?;
        backend.descriptor.embed_dim = probe.len();
        Ok(backend)
    }

    fn run_image(&self, img: &RgbImage) -> Result<Vec<f64>, EmbedError> {
        let s = self.descriptor.input_size;
        let n = s * s;
        let mut data = Vec::with_capacity(3 * n);
        for c in 0..3 {
            data.extend(
                img.plane(c)
                    .iter()
                    .map(|v| (*v as f32 - self.mean[c]) / self.std[c]),
            );
        }
        let input = Tensor::from_shape(&[1, 3, s, s], &data).map_err(runtime_err)?;
        let out = self.image_plan.run(tvec!(input.into())).map_err(runtime_err)?;
        flatten(&out[0])
    }

    fn tokenize(&self, prompt: &str) -> Result<Vec<i64>, EmbedError> {
        let enc = self
            .tokenizer
            .encode(prompt, true)
            .map_err(|e| EmbedError::Tokenize(e.to_string()))?;
        let ids = enc.get_ids();
        if ids.len() > self.context_length {
            return Err(EmbedError::Tokenize(format!(
                "prompt is {} tokens, limit is {}",
                ids.len(),
                self.context_length
            )));
        }
        let mut out: Vec<i64> = ids.iter().map(|&i| i64::from(i)).collect();
        out.resize(self.context_length, 0);
        Ok(out)
    }
}

fn flatten(t: &TValue) -> Result<Vec<f64>, EmbedError> {
    let t = t
        .cast_to::<f32>()
        .map_err(|e| EmbedError::InvalidOutput(e.to_string()))?;
    let view = t
        .to_array_view::<f32>()
        .map_err(|e| EmbedError::InvalidOutput(e.to_string()))?;
    Ok(view.iter().map(|v| f64::from(*v)).collect())
}

impl EmbeddingBackend for GraphBackend {
    fn descriptor(&self) -> BackendDescriptor {
        self.descriptor.clone()
    }

    fn embed_image(&self, img: &RgbImage) -> Result<Embedding, EmbedError> {
        check_input_shape(img, self.descriptor.input_size)?;
        Embedding::new(self.run_image(img)?)
    }

    fn embed_text(&self, prompt: &str) -> Result<Embedding, EmbedError> {
        if prompt.trim().is_empty() {
            return Err(EmbedError::Tokenize("empty prompt".into()));
        }
        let ids = self.tokenize(prompt)?;
        let input = Tensor::from_shape(&[1, self.context_length], &ids)
            .and_then(|t| t.cast_to_dt(self.text_dtype).map(|c| c.into_owned()))
            .map_err(runtime_err)?;
        let out = self.text_plan.run(tvec!(input.into())).map_err(runtime_err)?;
        let v = flatten(&out[0])?;
        if v.len() != self.descriptor.embed_dim {
            return Err(EmbedError::InvalidOutput(format!(
                "text embedding has {} components, image embedding has {}",
                v.len(),
                self.descriptor.embed_dim
            )));
        }
        Embedding::new(v)
    }
}
