//! Resolves the `--backend` selector.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use ccmtune_core::embedding::{build_backend, BackendKind, BackendSpec, EmbeddingBackend, GraphPaths};
use ccmtune_service::ServiceConfig;

use crate::CliError;

/// Optional file in a graph directory overriding the default layout.
pub const GRAPH_MANIFEST: &str = "graph.json";

/// Turns a selector into a backend spec.
///
/// `synthetic` and `synthetic:SIZE` build the synthetic backend,
/// `remote:URL` a sidecar client and `graph:DIR` an exported graph pair.
/// Anything else names an entry of the service configuration.
pub fn parse_selector(selector: &str) -> Result<BackendSpec, CliError> {
    let spec = |kind| BackendSpec {
        name: selector.to_string(),
        kind,
        graph_paths: None,
        url: None,
        input_size: None,
    };
    if selector == "synthetic" {
        return Ok(BackendSpec {
            name: "synthetic".into(),
            ..spec(BackendKind::Synthetic)
        });
    }
    if let Some(size) = selector.strip_prefix("synthetic:") {
        let size: usize = size
            .parse()
            .map_err(|_| CliError::Usage(format!("bad synthetic input size in `{selector}`")))?;
        return Ok(BackendSpec {
            name: "synthetic".into(),
            input_size: Some(size),
            ..spec(BackendKind::Synthetic)
        });
    }
    if let Some(url) = selector.strip_prefix("remote:") {
        return Ok(BackendSpec {
            name: "remote".into(),
            url: Some(url.to_string()),
            ..spec(BackendKind::Remote)
        });
    }
    if let Some(dir) = selector.strip_prefix("graph:") {
        return Ok(BackendSpec {
            name: "graph".into(),
            graph_paths: Some(graph_paths(Path::new(dir))?),
            ..spec(BackendKind::Graph)
        });
    }
    let cfg = ServiceConfig::resolve(None, |k| std::env::var(k).ok()).map_err(CliError::usage)?;
    cfg.backends
        .into_iter()
        .find(|b| b.name == selector)
        .ok_or_else(|| CliError::Usage(format!("unknown backend `{selector}`")))
}

/// Graph files in `dir`: `graph.json` if present (relative paths resolve
/// against `dir`), else `image_encoder.onnx`, `text_encoder.onnx` and
/// `tokenizer.json` with default constants.
pub fn graph_paths(dir: &Path) -> Result<GraphPaths, CliError> {
    let manifest = dir.join(GRAPH_MANIFEST);
    let mut paths: GraphPaths = if manifest.exists() {
        let text = std::fs::read_to_string(&manifest)
            .map_err(|e| CliError::Usage(format!("{}: {e}", manifest.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", manifest.display())))?
    } else {
        serde_json::from_value(serde_json::json!({
            "image_encoder": "image_encoder.onnx",
            "text_encoder": "text_encoder.onnx",
            "tokenizer": "tokenizer.json",
        }))
        .expect("default graph layout")
    };
    let rebase = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = dir.join(&*p);
        }
    };
    rebase(&mut paths.image_encoder);
    rebase(&mut paths.text_encoder);
    rebase(&mut paths.tokenizer);
    Ok(paths)
}

pub fn load(selector: &str) -> Result<Arc<dyn EmbeddingBackend>, CliError> {
    Ok(build_backend(&parse_selector(selector)?)?)
}
