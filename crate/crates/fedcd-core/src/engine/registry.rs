//! Central-server catalog of global models.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::ModelWeights;

/// Identifier of a global model. Ids start at 1 and are never reused.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ModelId(pub u64);

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Debug)]
pub struct ModelEntry {
    pub weights: ModelWeights,
    pub parent: Option<ModelId>,
    pub created_round: usize,
    pub alive: bool,
}

/// All models ever created, alive or dead. Dead entries keep their id
/// and lineage; they receive no updates and are never cloned.
#[derive(Clone, Debug, Default)]
pub struct ModelRegistry {
    entries: BTreeMap<ModelId, ModelEntry>,
    next_id: u64,
}

impl ModelRegistry {
    pub fn new() -> Self {
        Self { entries: BTreeMap::new(), next_id: 1 }
    }

    /// Add a model and return its id (sequential, starting at 1).
    pub fn register(
        &mut self,
        weights: ModelWeights,
        parent: Option<ModelId>,
        created_round: usize,
    ) -> ModelId {
        let id = ModelId(self.next_id);
        self.next_id += 1;
        self.entries.insert(id, ModelEntry { weights, parent, created_round, alive: true });
        id
    }

    /// Number of models ever created.
    pub fn total_created(&self) -> u64 {
        self.next_id - 1
    }

    pub fn alive_count(&self) -> usize {
        self.entries.values().filter(|e| e.alive).count()
    }

    /// Alive model ids in ascending order.
    pub fn alive_ids(&self) -> Vec<ModelId> {
        self.entries.iter().filter(|(_, e)| e.alive).map(|(id, _)| *id).collect()
    }

    pub fn is_alive(&self, id: ModelId) -> bool {
        self.entries.get(&id).map(|e| e.alive).unwrap_or(false)
    }

    pub fn entry(&self, id: ModelId) -> Option<&ModelEntry> {
        self.entries.get(&id)
    }

    pub fn weights(&self, id: ModelId) -> &ModelWeights {
        &self.entries.get(&id).expect("unknown model id").weights
    }

    pub fn set_weights(&mut self, id: ModelId, weights: ModelWeights) {
        self.entries.get_mut(&id).expect("unknown model id").weights = weights;
    }

    pub fn mark_dead(&mut self, id: ModelId) {
        self.entries.get_mut(&id).expect("unknown model id").alive = false;
    }

    pub fn iter(&self) -> impl Iterator<Item = (ModelId, &ModelEntry)> {
        self.entries.iter().map(|(id, e)| (*id, e))
    }
}
