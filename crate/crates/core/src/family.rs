//! Families group seeds that descend from one original seed through
//! length-preserving mutations. Members share one Shapley vector and a
//! family-local coverage baseline. Length-changing mutators are recorded
//! on a stack so they can be withdrawn, and trimming is tracked with a
//! map-vector from local byte positions back to original-seed positions.

use std::collections::BTreeSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::coverage::{CoverageMap, EdgeSet};
use crate::error::{Error, Result};
use crate::shapley::ShapleyVector;
use crate::targets::Target;

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SeedId(pub u64);

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct FamilyId(pub u64);

/// A retained input. `map_vector[i]` is the position in the family's
/// original seed that local byte `i` corresponds to; it is strictly
/// increasing and exactly as long as `bytes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seed {
    pub id: SeedId,
    pub family_id: FamilyId,
    pub bytes: Vec<u8>,
    pub map_vector: Vec<usize>,
    pub edge_set: EdgeSet,
    pub exec_count: u64,
    pub retained_at: u64,
}

impl Seed {
    /// Local index of a family position, if this seed still carries it.
    pub fn local_of_family_position(&self, family_pos: usize) -> Option<usize> {
        self.map_vector.binary_search(&family_pos).ok()
    }

    /// Map local positions into original-seed space.
    pub fn to_family_positions(&self, locals: &BTreeSet<usize>) -> Result<BTreeSet<usize>> {
        let mut out = BTreeSet::new();
        for &p in locals {
            let mapped = *self.map_vector.get(p).ok_or(Error::IndexOutOfRange {
                index: p,
                limit: self.bytes.len(),
            })?;
            out.insert(mapped);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Family {
    pub id: FamilyId,
    pub original_length: usize,
    pub shapley: ShapleyVector,
    pub local_map: CoverageMap,
    pub members: Vec<SeedId>,
}

impl Family {
    /// Found a family from an initial seed and the edges it exercised.
    pub fn found(
        family_id: FamilyId,
        seed_id: SeedId,
        bytes: Vec<u8>,
        edge_set: EdgeSet,
        retained_at: u64,
    ) -> Result<(Family, Seed)> {
        if bytes.is_empty() {
            return Err(Error::EmptyInput);
        }
        let n = bytes.len();
        let seed = Seed {
            id: seed_id,
            family_id,
            map_vector: (0..n).collect(),
            edge_set: edge_set.clone(),
            bytes,
            exec_count: 0,
            retained_at,
        };
        let family = Family {
            id: family_id,
            original_length: n,
            shapley: ShapleyVector::zeros(n),
            local_map: CoverageMap::from_edges(&edge_set),
            members: vec![seed_id],
        };
        Ok((family, seed))
    }

    /// Execute a withdrawn candidate and admit it if it still reproduces
    /// the triggering self-new edges.
    pub fn try_admit(
        &mut self,
        seed_id: SeedId,
        candidate: Vec<u8>,
        parent: &Seed,
        triggering_edges: &EdgeSet,
        target: &dyn Target,
        retained_at: u64,
    ) -> Result<AdmitOutcome> {
        debug_assert_eq!(self.id, parent.family_id);
        let result = target.run(&candidate)?;
        if !result.edges.is_superset(triggering_edges) {
            return Ok(AdmitOutcome::NewFamilyNeeded);
        }
        let seed = Seed {
            id: seed_id,
            family_id: self.id,
            map_vector: parent.map_vector.clone(),
            edge_set: result.edges.clone(),
            bytes: candidate,
            exec_count: 0,
            retained_at,
        };
        self.local_map.absorb(&result.edges);
        self.members.push(seed_id);
        Ok(AdmitOutcome::Admitted(seed))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AdmitOutcome {
    Admitted(Seed),
    NewFamilyNeeded,
}

/// One recorded mutation. Positions are in the coordinates of the buffer
/// at the time the mutator was applied.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Mutator {
    Insert { pos: usize, data: Vec<u8> },
    Delete { pos: usize, removed: Vec<u8> },
    Overwrite { pos: usize, old: Vec<u8>, new: Vec<u8> },
}

impl Mutator {
    pub fn changes_length(&self) -> bool {
        matches!(self, Mutator::Insert { .. } | Mutator::Delete { .. })
    }
}

/// Ordered record of the mutators applied during one mutation, replayable
/// forward and invertible (length mutators only) in LIFO order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MutatorStack {
    entries: Vec<Mutator>,
}

impl MutatorStack {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, mutator: Mutator) {
        self.entries.push(mutator);
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Mutator] {
        &self.entries
    }

    pub fn has_length_mutators(&self) -> bool {
        self.entries.iter().any(Mutator::changes_length)
    }

    /// Apply all entries in order to `source`, reproducing the mutated
    /// buffer.
    pub fn replay(&self, source: &[u8]) -> Result<Vec<u8>> {
        let mut buf = source.to_vec();
        for m in &self.entries {
            match m {
                Mutator::Insert { pos, data } => {
                    if *pos > buf.len() {
                        return Err(Error::InvalidStack(format!(
                            "insert at {pos} beyond length {}",
                            buf.len()
                        )));
                    }
                    buf.splice(pos..pos, data.iter().copied());
                }
                Mutator::Delete { pos, removed } => {
                    let end = pos + removed.len();
                    if end > buf.len() {
                        return Err(Error::InvalidStack(format!(
                            "delete {pos}..{end} beyond length {}",
                            buf.len()
                        )));
                    }
                    buf.drain(*pos..end);
                }
                Mutator::Overwrite { pos, new, .. } => {
                    let end = pos + new.len();
                    if end > buf.len() {
                        return Err(Error::InvalidStack(format!(
                            "overwrite {pos}..{end} beyond length {}",
                            buf.len()
                        )));
                    }
                    buf[*pos..end].copy_from_slice(new);
                }
            }
        }
        Ok(buf)
    }

    /// Pop entries LIFO and invert only the length-changing ones, so the
    /// result has the source seed's length. Overwrites are kept.
    pub fn withdraw(&self, mutated: &[u8]) -> Result<Vec<u8>> {
        let mut buf = mutated.to_vec();
        for m in self.entries.iter().rev() {
            match m {
                Mutator::Insert { pos, data } => {
                    let end = pos + data.len();
                    if end > buf.len() {
                        return Err(Error::InvalidStack(format!(
                            "cannot withdraw insert {pos}..{end} from length {}",
                            buf.len()
                        )));
                    }
                    buf.drain(*pos..end);
                }
                Mutator::Delete { pos, removed } => {
                    if *pos > buf.len() {
                        return Err(Error::InvalidStack(format!(
                            "cannot withdraw delete at {pos} from length {}",
                            buf.len()
                        )));
                    }
                    buf.splice(pos..pos, removed.iter().copied());
                }
                Mutator::Overwrite { .. } => {}
            }
        }
        Ok(buf)
    }
}

/// Produce a trimmed seed covering only `kept_ranges` of the parent, with
/// the map-vector reduced to the matching subsequence.
pub fn trim_track(parent: &Seed, new_id: SeedId, kept_ranges: &[Range<usize>]) -> Result<Seed> {
    let mut last_end = 0usize;
    for r in kept_ranges {
        if r.start < last_end || r.start > r.end {
            return Err(Error::InvalidRanges(format!(
                "ranges must be sorted and disjoint, got {kept_ranges:?}"
            )));
        }
        if r.end > parent.bytes.len() {
            return Err(Error::InvalidRanges(format!(
                "range {r:?} beyond seed length {}",
                parent.bytes.len()
            )));
        }
        last_end = r.end;
    }

    let mut bytes = Vec::new();
    let mut map_vector = Vec::new();
    for r in kept_ranges {
        bytes.extend_from_slice(&parent.bytes[r.clone()]);
        map_vector.extend_from_slice(&parent.map_vector[r.clone()]);
    }
    Ok(Seed {
        id: new_id,
        family_id: parent.family_id,
        bytes,
        map_vector,
        edge_set: parent.edge_set.clone(),
        exec_count: 0,
        retained_at: parent.retained_at,
    })
}

/// AFL-style deterministic trim: try removing power-of-two sized chunks,
/// largest first, keeping a removal whenever the target still produces the
/// parent's exact edge set.
pub fn trim_with_target(seed: &Seed, new_id: SeedId, target: &dyn Target) -> Result<Seed> {
    let mut current = seed.clone();
    let mut chunk = (current.bytes.len() / 2).next_power_of_two();
    while chunk >= 1 && current.bytes.len() > 1 {
        if chunk >= current.bytes.len() {
            chunk /= 2;
            continue;
        }
        let mut offset = 0;
        while offset < current.bytes.len() && current.bytes.len() > chunk {
            let end = (offset + chunk).min(current.bytes.len());
            let kept: Vec<Range<usize>> = [0..offset, end..current.bytes.len()]
                .into_iter()
                .filter(|r| !r.is_empty())
                .collect();
            let candidate = trim_track(&current, new_id, &kept)?;
            if candidate.bytes.is_empty() {
                offset += chunk;
                continue;
            }
            if target.run(&candidate.bytes)?.edges == seed.edge_set {
                current = candidate;
            } else {
                offset += chunk;
            }
        }
        chunk /= 2;
    }
    current.id = new_id;
    Ok(current)
}
