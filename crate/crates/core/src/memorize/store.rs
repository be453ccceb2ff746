use std::sync::{Arc, Mutex, RwLock};

use super::{ingest_into, ClipInput, IngestConfig, IngestReport, MemoryGenerator};
use crate::embedding::Embedder;
use crate::error::Result;
use crate::graph::MemoryGraph;

/// Shared graph with one writer and any number of readers.
///
/// Readers take an `Arc` of the last committed graph and never see a clip
/// half-written. Writers serialize on an internal mutex, build the next
/// graph off to the side, then publish it with a pointer swap.
#[derive(Debug, Default)]
pub struct MemoryStore {
    current: RwLock<Arc<MemoryGraph>>,
    writer: Mutex<()>,
}

impl MemoryStore {
    pub fn new(graph: MemoryGraph) -> Self {
        MemoryStore { current: RwLock::new(Arc::new(graph)), writer: Mutex::new(()) }
    }

    /// The committed graph as of now.
    pub fn snapshot(&self) -> Arc<MemoryGraph> {
        self.current.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn ingest(
        &self,
        input: &ClipInput,
        generator: &dyn MemoryGenerator,
        embedder: &dyn Embedder,
        config: &IngestConfig,
    ) -> Result<IngestReport> {
        self.write(|g| ingest_into(g, input, generator, embedder, config))
    }

    pub fn ingest_stream(
        &self,
        inputs: &[ClipInput],
        generator: &dyn MemoryGenerator,
        embedder: &dyn Embedder,
        config: &IngestConfig,
    ) -> Vec<IngestReport> {
        inputs
            .iter()
            .map(|input| {
                self.ingest(input, generator, embedder, config)
                    .unwrap_or_else(|e| IngestReport::failed(input.clip_index, e.to_string()))
            })
            .collect()
    }

    /// Runs `f` on a private copy and publishes it only if `f` succeeds.
    pub fn write<T>(&self, f: impl FnOnce(&mut MemoryGraph) -> Result<T>) -> Result<T> {
        let _guard = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let mut staged = (*self.snapshot()).clone();
        let out = f(&mut staged)?;
        *self.current.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(staged);
        Ok(out)
    }

    pub fn replace(&self, graph: MemoryGraph) {
        let _guard = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        *self.current.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(graph);
    }
}
