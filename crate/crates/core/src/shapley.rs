//! Per-position Shapley values: the exact brute-force computation used as
//! an oracle, the incremental per-input accumulator that runs live during
//! fuzzing, and the redundant/necessary-byte recovery analysis that feeds
//! it.
//!
//! The live accumulator drops the coalition weight (it is set to 1), so it
//! agrees with the exact value on sign and on zero-vs-nonzero but not on
//! magnitude.

use serde::{Deserialize, Serialize};

use crate::coverage::CoverageMap;
use crate::error::{Error, Result};
use crate::targets::Target;

/// Hard cap on exact computation; 2^n subsets beyond this are not worth
/// evaluating.
pub const MAX_EXACT_PLAYERS: usize = 20;

/// Per-position accumulated contribution for a family's original seed
/// length. Entries only change through [`incremental_update`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyVector {
    phi: Vec<f64>,
}

impl ShapleyVector {
    pub fn zeros(len: usize) -> Self {
        Self { phi: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    pub fn get(&self, pos: usize) -> Option<f64> {
        self.phi.get(pos).copied()
    }

    pub fn values(&self) -> &[f64] {
        &self.phi
    }

    /// Positions with strictly positive accumulated contribution.
    pub fn positive_positions(&self) -> Vec<usize> {
        self.phi
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.0)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Classification of one gainful mutation's differing positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecoveryVerdict {
    /// All positions where the mutated buffer differed, ascending.
    pub mutated_positions: Vec<usize>,
    /// Positions whose restoration left the self-new edge set unchanged.
    pub redundant: Vec<usize>,
    /// Non-redundant positions; each receives the full gain.
    pub necessary: Vec<usize>,
    /// Number of self-new edges the mutation discovered.
    pub gain: usize,
    /// True when the gain could not be attributed to any differing byte.
    pub degenerate: bool,
}

impl RecoveryVerdict {
    pub fn no_gain() -> Self {
        Self {
            mutated_positions: Vec::new(),
            redundant: Vec::new(),
            necessary: Vec::new(),
            gain: 0,
            degenerate: false,
        }
    }
}

/// Exact Shapley values for an n-player game, by full subset enumeration.
///
/// The characteristic function receives a coalition as a bitmask over
/// player indices and must be deterministic with `f(0) = 0` convention
/// left to the caller (efficiency holds either way).
pub fn exact_shapley<F>(characteristic: F, n_players: usize) -> Result<Vec<f64>>
where
    F: Fn(u32) -> f64,
{
    if n_players == 0 || n_players > MAX_EXACT_PLAYERS {
        return Err(Error::TooManyPlayers {
            n: n_players,
            max: MAX_EXACT_PLAYERS,
        });
    }

    let subsets = 1usize << n_players;
    let mut values = vec![0.0f64; subsets];
    for (mask, v) in values.iter_mut().enumerate() {
        *v = characteristic(mask as u32);
    }

    // w(m) = m! (n - m - 1)! / n!
    let factorial = |k: usize| -> u128 { (1..=k as u128).product::<u128>().max(1) };
    let n_fact = factorial(n_players) as f64;
    let weights: Vec<f64> = (0..n_players)
        .map(|m| (factorial(m) * factorial(n_players - m - 1)) as f64 / n_fact)
        .collect();

    let mut phi = vec![0.0f64; n_players];
    for (j, phi_j) in phi.iter_mut().enumerate() {
        let bit = 1usize << j;
        for mask in 0..subsets {
            if mask & bit != 0 {
                continue;
            }
            let m = mask.count_ones() as usize;
            *phi_j += weights[m] * (values[mask | bit] - values[mask]);
        }
    }
    Ok(phi)
}

/// Apply one recovery verdict to the accumulator: every necessary position
/// gains the full verdict gain, redundant positions are untouched.
pub fn incremental_update(vec: &mut ShapleyVector, verdict: &RecoveryVerdict) -> Result<()> {
    for &p in verdict.necessary.iter().chain(&verdict.redundant) {
        if p >= vec.phi.len() {
            return Err(Error::IndexOutOfRange {
                index: p,
                limit: vec.phi.len(),
            });
        }
    }
    if verdict.gain == 0 || verdict.degenerate {
        return Ok(());
    }
    for &p in &verdict.necessary {
        vec.phi[p] += verdict.gain as f64;
    }
    Ok(())
}

/// Classify each differing byte of a gainful mutation as redundant or
/// necessary by restoring it and re-executing.
///
/// Restorations are attempted in ascending position order and kept when
/// the identical self-new edge set is still produced, so the minimization
/// is greedy and sequential. Re-executions never absorb into the baseline.
pub fn recovery_analysis(
    original: &[u8],
    mutated: &[u8],
    target: &dyn Target,
    family_baseline: &CoverageMap,
) -> Result<RecoveryVerdict> {
    if original.len() != mutated.len() {
        return Err(Error::LengthMismatch {
            expected: original.len(),
            actual: mutated.len(),
        });
    }

    let self_new = family_baseline.diff_new(&target.run(mutated)?.edges);
    let gain = self_new.len();
    if gain == 0 {
        return Ok(RecoveryVerdict::no_gain());
    }

    let mutated_positions: Vec<usize> = original
        .iter()
        .zip(mutated)
        .enumerate()
        .filter(|(_, (a, b))| a != b)
        .map(|(i, _)| i)
        .collect();

    let mut work = mutated.to_vec();
    let mut redundant = Vec::new();
    for &p in &mutated_positions {
        work[p] = original[p];
        let restored_new = family_baseline.diff_new(&target.run(&work)?.edges);
        if restored_new == self_new {
            redundant.push(p);
        } else {
            work[p] = mutated[p];
        }
    }

    let necessary: Vec<usize> = mutated_positions
        .iter()
        .copied()
        .filter(|p| !redundant.contains(p))
        .collect();

    let degenerate = necessary.is_empty();
    if degenerate {
        log::warn!(
            "recovery: gain {gain} attributable to none of {} differing bytes",
            mutated_positions.len()
        );
    }

    Ok(RecoveryVerdict {
        mutated_positions,
        redundant,
        necessary,
        gain,
        degenerate,
    })
}

/// One row of an attribution report.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionRow {
    pub position: usize,
    pub phi: f64,
    /// Cumulative fraction of the total gain, in [0, 1].
    pub cumulative_share: f64,
}

/// Exact attribution sorted by descending contribution, with the running
/// share of the total.
pub fn attribution_report<F>(characteristic: F, n_players: usize) -> Result<Vec<AttributionRow>>
where
    F: Fn(u32) -> f64,
{
    let phi = exact_shapley(characteristic, n_players)?;
    let total: f64 = phi.iter().sum();
    let mut order: Vec<usize> = (0..n_players).collect();
    order.sort_by(|&a, &b| phi[b].partial_cmp(&phi[a]).unwrap().then(a.cmp(&b)));

    let mut rows = Vec::with_capacity(n_players);
    let mut running = 0.0;
    for pos in order {
        running += phi[pos];
        rows.push(AttributionRow {
            position: pos,
            phi: phi[pos],
            cumulative_share: if total.abs() > 0.0 { running / total } else { 0.0 },
        });
    }
    Ok(rows)
}

/// Serialize a report in the `position,phi,cumulative_share` CSV layout.
pub fn report_to_csv(rows: &[AttributionRow]) -> String {
    let mut out = String::from("position,phi,cumulative_share\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{}\n",
            row.position, row.phi, row.cumulative_share
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coverage::EdgeSet;
    use crate::targets::{ExecutionResult, TargetSpec, Verdict};

    #[test]
    fn dictator_game() {
        let phi = exact_shapley(|s| if s & 1 != 0 { 1.0 } else { 0.0 }, 2).unwrap();
        assert_eq!(phi, vec![1.0, 0.0]);
    }

    #[test]
    fn unanimity_game_splits_evenly() {
        let phi = exact_shapley(|s| if s == 0b11 { 1.0 } else { 0.0 }, 2).unwrap();
        assert!((phi[0] - 0.5).abs() < 1e-12);
        assert!((phi[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn additive_game_equals_weights() {
        // Frozen from brute-force enumeration of all 8 subsets of |S|.
        let phi = exact_shapley(|s| s.count_ones() as f64, 3).unwrap();
        for v in phi {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_too_many_players() {
        assert!(exact_shapley(|_| 0.0, 21).is_err());
        assert!(exact_shapley(|_| 0.0, 0).is_err());
    }

    #[test]
    fn incremental_update_rules() {
        let mut vec = ShapleyVector::zeros(6);
        let verdict = RecoveryVerdict {
            mutated_positions: vec![1, 3, 4],
            redundant: vec![4],
            necessary: vec![1, 3],
            gain: 2,
            degenerate: false,
        };
        incremental_update(&mut vec, &verdict).unwrap();
        assert_eq!(vec.values(), &[0.0, 2.0, 0.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_gain_is_noop() {
        let mut vec = ShapleyVector::zeros(3);
        incremental_update(&mut vec, &RecoveryVerdict::no_gain()).unwrap();
        assert_eq!(vec.values(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn updates_accumulate() {
        let mut vec = ShapleyVector::zeros(2);
        let verdict = RecoveryVerdict {
            mutated_positions: vec![0],
            redundant: vec![],
            necessary: vec![0],
            gain: 5,
            degenerate: false,
        };
        incremental_update(&mut vec, &verdict).unwrap();
        incremental_update(&mut vec, &verdict).unwrap();
        assert_eq!(vec.get(0), Some(10.0));
    }

    #[test]
    fn out_of_range_position_rejected() {
        let mut vec = ShapleyVector::zeros(2);
        let verdict = RecoveryVerdict {
            mutated_positions: vec![5],
            redundant: vec![],
            necessary: vec![5],
            gain: 1,
            degenerate: false,
        };
        assert!(incremental_update(&mut vec, &verdict).is_err());
    }

    /// Scripted target: edge 100 requires bytes 1 and 3 jointly; byte 4 is
    /// ignored. Edge 0 is the entry.
    struct JointTarget;
    impl Target for JointTarget {
        fn spec(&self) -> TargetSpec {
            TargetSpec {
                name: "joint",
                min_input_len: 6,
                edge_universe_size: 128,
            }
        }
        fn run(&self, input: &[u8]) -> crate::error::Result<ExecutionResult> {
            let mut edges = EdgeSet::new();
            edges.insert(crate::coverage::EdgeId(0));
            if input[1] == 0xA1 && input[3] == 0xB2 {
                edges.insert(crate::coverage::EdgeId(100));
                edges.insert(crate::coverage::EdgeId(101));
            }
            Ok(ExecutionResult {
                edges,
                verdict: Verdict::Ok,
            })
        }
    }

    #[test]
    fn recovery_classifies_joint_bytes() {
        let original = [0u8; 6];
        let mut mutated = original;
        mutated[1] = 0xA1;
        mutated[3] = 0xB2;
        mutated[4] = 0x99;

        let baseline = CoverageMap::from_edges(&JointTarget.run(&original).unwrap().edges);
        let verdict = recovery_analysis(&original, &mutated, &JointTarget, &baseline).unwrap();
        assert_eq!(verdict.necessary, vec![1, 3]);
        assert_eq!(verdict.redundant, vec![4]);
        assert_eq!(verdict.gain, 2);
        assert!(!verdict.degenerate);
    }

    #[test]
    fn recovery_single_byte_is_necessary() {
        let original = [0u8; 6];
        let mut mutated = original;
        mutated[1] = 0xA1;
        // Only edge 0 for original; mutated alone gains nothing without
        // byte 3, so craft a baseline where byte 1's change matters.
        struct Single;
        impl Target for Single {
            fn spec(&self) -> TargetSpec {
                TargetSpec {
                    name: "single",
                    min_input_len: 2,
                    edge_universe_size: 8,
                }
            }
            fn run(&self, input: &[u8]) -> crate::error::Result<ExecutionResult> {
                let mut edges = EdgeSet::new();
                edges.insert(crate::coverage::EdgeId(0));
                if input[1] == 0xA1 {
                    edges.insert(crate::coverage::EdgeId(1));
                }
                Ok(ExecutionResult {
                    edges,
                    verdict: Verdict::Ok,
                })
            }
        }
        let baseline = CoverageMap::from_edges(&Single.run(&original).unwrap().edges);
        let verdict = recovery_analysis(&original, &mutated, &Single, &baseline).unwrap();
        assert_eq!(verdict.necessary, vec![1]);
        assert!(verdict.redundant.is_empty());
    }

    /// Target whose gainful edge depends on neither differing byte: the
    /// baseline simply has not seen an unconditional edge yet.
    struct Unconditional;
    impl Target for Unconditional {
        fn spec(&self) -> TargetSpec {
            TargetSpec {
                name: "unconditional",
                min_input_len: 2,
                edge_universe_size: 8,
            }
        }
        fn run(&self, _input: &[u8]) -> crate::error::Result<ExecutionResult> {
            let mut edges = EdgeSet::new();
            edges.insert(crate::coverage::EdgeId(3));
            Ok(ExecutionResult {
                edges,
                verdict: Verdict::Ok,
            })
        }
    }

    #[test]
    fn recovery_degenerate_when_no_byte_matters() {
        let original = [0u8, 0];
        let mutated = [7u8, 9];
        let baseline = CoverageMap::new();
        let verdict =
            recovery_analysis(&original, &mutated, &Unconditional, &baseline).unwrap();
        assert!(verdict.degenerate);
        assert!(verdict.necessary.is_empty());
        assert_eq!(verdict.redundant, vec![0, 1]);
        assert_eq!(verdict.gain, 1);
    }

    #[test]
    fn recovery_rejects_length_mismatch() {
        let baseline = CoverageMap::new();
        assert!(recovery_analysis(&[0u8; 4], &[0u8; 5], &JointTarget, &baseline).is_err());
    }

    #[test]
    fn attribution_dictator_concentrates() {
        let rows = attribution_report(|s| if s & 1 != 0 { 1.0 } else { 0.0 }, 4).unwrap();
        assert_eq!(rows[0].position, 0);
        assert!((rows[0].cumulative_share - 1.0).abs() < 1e-12);
    }

    #[test]
    fn attribution_pair_game() {
        let rows = attribution_report(|s| if s & 0b11 == 0b11 { 1.0 } else { 0.0 }, 4).unwrap();
        assert!((rows[0].phi - 0.5).abs() < 1e-12);
        assert!((rows[1].phi - 0.5).abs() < 1e-12);
        assert!((rows[1].cumulative_share - 1.0).abs() < 1e-12);
    }

    #[test]
    fn attribution_additive_weights() {
        let w = [4.0, 2.0, 1.0, 1.0];
        let f = |s: u32| -> f64 {
            (0..4).filter(|i| s & (1 << i) != 0).map(|i| w[i]).sum()
        };
        let rows = attribution_report(f, 4).unwrap();
        let shares: Vec<f64> = rows.iter().map(|r| r.cumulative_share).collect();
        let expected = [0.5, 0.75, 0.875, 1.0];
        for (got, want) in shares.iter().zip(expected) {
            assert!((got - want).abs() < 1e-12, "{shares:?}");
        }
    }
}
