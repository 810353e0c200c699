use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use ccmtune_core::embedding::{build_backend, BackendSpec, EmbedError, EmbeddingBackend};
use serde::Serialize;

/// Named backends, instantiated on first use and then shared by all jobs.
pub struct BackendRegistry {
    specs: Vec<BackendSpec>,
    live: Mutex<HashMap<String, Arc<dyn EmbeddingBackend>>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct BackendEntry {
    pub name: String,
    pub kind: ccmtune_core::embedding::BackendKind,
    pub default: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub descriptor: Option<ccmtune_core::BackendDescriptor>,
}

impl BackendRegistry {
    pub fn new(specs: Vec<BackendSpec>) -> Self {
        Self {
            specs,
            live: Mutex::new(HashMap::new()),
        }
    }

    /// Registers an already-built backend under `name`, ahead of configured ones.
    pub fn with_instance(mut self, spec: BackendSpec, backend: Arc<dyn EmbeddingBackend>) -> Self {
        self.live.get_mut().unwrap().insert(spec.name.clone(), backend);
        self.specs.retain(|s| s.name != spec.name);
        self.specs.insert(0, spec);
        self
    }

    pub fn default_name(&self) -> Option<&str> {
        self.specs.first().map(|s| s.name.as_str())
    }

    /// Resolves an optional job-level name to a registered one.
    pub fn resolve_name<'a>(&'a self, name: Option<&'a str>) -> Option<&'a str> {
        match name {
            Some(n) => self.specs.iter().find(|s| s.name == n).map(|s| s.name.as_str()),
            None => self.default_name(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn EmbeddingBackend>, EmbedError> {
        if let Some(b) = self.live.lock().unwrap().get(name) {
            return Ok(b.clone());
        }
        let spec = self
            .specs
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| EmbedError::Config(format!("unknown backend `{name}`")))?;
        // Built outside the lock: remote backends make a network round trip.
        let backend = build_backend(spec)?;
        Ok(self
            .live
            .lock()
            .unwrap()
            .entry(name.to_string())
            .or_insert(backend)
            .clone())
    }

    pub fn entries(&self) -> Vec<BackendEntry> {
        let live = self.live.lock().unwrap();
        self.specs
            .iter()
            .enumerate()
            .map(|(i, s)| BackendEntry {
                name: s.name.clone(),
                kind: s.kind.clone(),
                default: i == 0,
                descriptor: live.get(&s.name).map(|b| b.descriptor()),
            })
            .collect()
    }
}
