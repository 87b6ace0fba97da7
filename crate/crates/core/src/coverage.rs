//! Edge-level coverage: sets of edge identifiers observed during one
//! execution and accumulated baselines ("virgin maps") they are compared
//! against. The gain of an input is the number of edges it exercises that
//! a baseline has not seen.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

/// Opaque edge label supplied by a target. Equality and hashing are by
/// value; no ordering semantics are attached (the internal ordering exists
/// only so iteration is deterministic).
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct EdgeId(pub u32);

/// The set of edges exercised by one execution.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EdgeSet {
    edges: BTreeSet<EdgeId>,
}

impl EdgeSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, edge: EdgeId) -> bool {
        self.edges.insert(edge)
    }

    pub fn contains(&self, edge: EdgeId) -> bool {
        self.edges.contains(&edge)
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = EdgeId> + '_ {
        self.edges.iter().copied()
    }

    pub fn union(&self, other: &EdgeSet) -> EdgeSet {
        EdgeSet {
            edges: self.edges.union(&other.edges).copied().collect(),
        }
    }

    pub fn intersection(&self, other: &EdgeSet) -> EdgeSet {
        EdgeSet {
            edges: self.edges.intersection(&other.edges).copied().collect(),
        }
    }

    pub fn difference(&self, other: &EdgeSet) -> EdgeSet {
        EdgeSet {
            edges: self.edges.difference(&other.edges).copied().collect(),
        }
    }

    pub fn is_superset(&self, other: &EdgeSet) -> bool {
        self.edges.is_superset(&other.edges)
    }
}

impl FromIterator<EdgeId> for EdgeSet {
    fn from_iter<T: IntoIterator<Item = EdgeId>>(iter: T) -> Self {
        EdgeSet {
            edges: iter.into_iter().collect(),
        }
    }
}

impl FromIterator<u32> for EdgeSet {
    fn from_iter<T: IntoIterator<Item = u32>>(iter: T) -> Self {
        iter.into_iter().map(EdgeId).collect()
    }
}

/// Accumulated coverage baseline. `seen` only grows; `generation` bumps
/// exactly when `seen` changes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageMap {
    seen: BTreeSet<EdgeId>,
    generation: u64,
}

impl CoverageMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_edges(edges: &EdgeSet) -> Self {
        let mut map = Self::new();
        map.absorb(edges);
        map
    }

    pub fn contains(&self, edge: EdgeId) -> bool {
        self.seen.contains(&edge)
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn iter(&self) -> impl Iterator<Item = EdgeId> + '_ {
        self.seen.iter().copied()
    }

    /// Edges in `observed` that this baseline has not seen.
    pub fn diff_new(&self, observed: &EdgeSet) -> EdgeSet {
        observed
            .iter()
            .filter(|e| !self.seen.contains(e))
            .collect()
    }

    /// Number of unseen edges in `observed`, without mutating the map.
    pub fn gain(&self, observed: &EdgeSet) -> usize {
        observed.iter().filter(|e| !self.seen.contains(e)).count()
    }

    /// Fold `edges` into the baseline; returns how many were new.
    pub fn absorb(&mut self, edges: &EdgeSet) -> usize {
        let mut added = 0;
        for edge in edges.iter() {
            if self.seen.insert(edge) {
                added += 1;
            }
        }
        if added > 0 {
            self.generation += 1;
        }
        added
    }
}
