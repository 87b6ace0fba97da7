//! Input mutation: AFL-style stacked havoc with every operation recorded
//! on a mutator stack, byte selection either uniform or driven by a
//! probability distribution over family positions, and the two-mode
//! cost scheduler.

use rand::Rng;

use crate::error::{Error, Result};
use crate::family::{Mutator, MutatorStack};

pub const ARITH_MAX: u8 = 35;
pub const MAX_LENGTH_DELTA: usize = 32;
pub const MAX_INPUT_LEN: usize = 1 << 16;
pub const STARVATION_LIMIT: u64 = 4096;

pub const INTERESTING_8: [u8; 9] = [0x80, 0xFF, 0x00, 0x01, 0x10, 0x20, 0x40, 0x64, 0x7F];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    ShapleyGuided,
    Random,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::ShapleyGuided => "shapley_guided",
            Mode::Random => "random",
        }
    }
}

/// How one mutation call behaves.
#[derive(Debug, Clone)]
pub struct MutationPlan {
    pub mode: Mode,
    pub n_sub: u32,
    pub allow_length_mutators: bool,
}

impl MutationPlan {
    pub fn new(mode: Mode, n_sub: u32) -> Self {
        debug_assert!((1..=64).contains(&n_sub));
        Self {
            mode,
            n_sub,
            allow_length_mutators: mode == Mode::Random,
        }
    }
}

/// Number of stacked sub-mutations: 2^u with u uniform in 0..=6.
pub fn draw_n_sub<R: Rng>(rng: &mut R) -> u32 {
    1 << rng.gen_range(0..=6u32)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ModeCounters {
    pub execs: u64,
    pub new_paths: u64,
}

impl ModeCounters {
    /// Laplace-smoothed executions per new path.
    pub fn cost(&self) -> f64 {
        (self.execs + 1) as f64 / (self.new_paths + 1) as f64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ModeStats {
    pub guided: ModeCounters,
    pub random: ModeCounters,
}

impl ModeStats {
    pub fn counters(&self, mode: Mode) -> &ModeCounters {
        match mode {
            Mode::ShapleyGuided => &self.guided,
            Mode::Random => &self.random,
        }
    }

    pub fn counters_mut(&mut self, mode: Mode) -> &mut ModeCounters {
        match mode {
            Mode::ShapleyGuided => &mut self.guided,
            Mode::Random => &mut self.random,
        }
    }
}

/// Pick the cheaper mode (executions per new path). Ties go to the guided
/// mode; a mode that has not run for [`STARVATION_LIMIT`] executions is
/// forced once.
pub fn pick_mode(stats: &ModeStats, execs_since_guided: u64, execs_since_random: u64) -> Mode {
    if execs_since_guided >= STARVATION_LIMIT {
        return Mode::ShapleyGuided;
    }
    if execs_since_random >= STARVATION_LIMIT {
        return Mode::Random;
    }
    if stats.random.cost() < stats.guided.cost() {
        Mode::Random
    } else {
        Mode::ShapleyGuided
    }
}

/// Distribution over family positions, paired with the seed's map-vector
/// so draws can be translated into local coordinates.
#[derive(Debug, Clone)]
pub struct GuidedSelection<'a> {
    pub family_positions: &'a [usize],
    pub probabilities: &'a [f64],
    pub map_vector: &'a [usize],
}

impl GuidedSelection<'_> {
    fn any_position_present(&self) -> bool {
        self.family_positions
            .iter()
            .zip(self.probabilities)
            .any(|(fp, &p)| p > 0.0 && self.map_vector.binary_search(fp).is_ok())
    }

    fn draw_local<R: Rng>(&self, rng: &mut R) -> Option<usize> {
        // Family positions trimmed out of this seed are skipped and the
        // draw repeated.
        for _ in 0..64 {
            let mut u: f64 = rng.gen();
            let mut chosen = self.family_positions.len() - 1;
            for (i, &p) in self.probabilities.iter().enumerate() {
                if u < p {
                    chosen = i;
                    break;
                }
                u -= p;
            }
            if let Ok(local) = self
                .map_vector
                .binary_search(&self.family_positions[chosen])
            {
                return Some(local);
            }
        }
        None
    }
}

/// Apply one stacked mutation: `n_sub` sub-mutations, each picking a byte
/// position (guided or uniform) and one mutator, recording every operation
/// on `stack`. Length mutators appear only in random mode, with
/// probability 1/4 per sub-mutation.
pub fn havoc_once<R: Rng>(
    bytes: &[u8],
    plan: &MutationPlan,
    guided: Option<&GuidedSelection>,
    stack: &mut MutatorStack,
    rng: &mut R,
) -> Result<Vec<u8>> {
    if bytes.is_empty() {
        return Err(Error::EmptyInput);
    }
    let guided = match (plan.mode, guided) {
        (Mode::ShapleyGuided, None) => {
            return Err(Error::Config(
                "shapley_guided mutation requires a position distribution".into(),
            ))
        }
        (Mode::ShapleyGuided, Some(g)) => {
            if g.any_position_present() {
                Some(g)
            } else {
                log::warn!("guided distribution has no positions present in seed; falling back to uniform");
                None
            }
        }
        (Mode::Random, _) => None,
    };

    let mut buf = bytes.to_vec();
    for _ in 0..plan.n_sub {
        let use_length = plan.allow_length_mutators
            && plan.mode == Mode::Random
            && rng.gen_ratio(1, 4);
        if use_length {
            apply_length_mutator(&mut buf, stack, rng);
            continue;
        }

        let pos = match guided {
            Some(g) => match g.draw_local(rng) {
                Some(local) if local < buf.len() => local,
                _ => rng.gen_range(0..buf.len()),
            },
            None => rng.gen_range(0..buf.len()),
        };
        apply_value_mutator(&mut buf, pos, stack, rng);
    }
    Ok(buf)
}

fn apply_value_mutator<R: Rng>(buf: &mut [u8], pos: usize, stack: &mut MutatorStack, rng: &mut R) {
    let old = buf[pos];
    let new = match rng.gen_range(0..4u32) {
        0 => old ^ (1 << rng.gen_range(0..8u32)),
        1 => old ^ rng.gen_range(1..=255u8),
        2 => {
            let delta = rng.gen_range(1..=ARITH_MAX);
            if rng.gen_bool(0.5) {
                old.wrapping_add(delta)
            } else {
                old.wrapping_sub(delta)
            }
        }
        _ => INTERESTING_8[rng.gen_range(0..INTERESTING_8.len())],
    };
    buf[pos] = new;
    stack.push(Mutator::Overwrite {
        pos,
        old: vec![old],
        new: vec![new],
    });
}

fn apply_length_mutator<R: Rng>(buf: &mut Vec<u8>, stack: &mut MutatorStack, rng: &mut R) {
    let insert = buf.len() < 2 || (buf.len() < MAX_INPUT_LEN && rng.gen_bool(0.5));
    if insert {
        let len = rng.gen_range(1..=MAX_LENGTH_DELTA);
        let pos = rng.gen_range(0..=buf.len());
        let data: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
        buf.splice(pos..pos, data.iter().copied());
        stack.push(Mutator::Insert { pos, data });
    } else {
        let len = rng.gen_range(1..=MAX_LENGTH_DELTA.min(buf.len() - 1));
        let pos = rng.gen_range(0..=buf.len() - len);
        let removed: Vec<u8> = buf.drain(pos..pos + len).collect();
        stack.push(Mutator::Delete { pos, removed });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn n_sub_is_power_of_two_up_to_64() {
        let mut r = rng(1);
        for _ in 0..1000 {
            let n = draw_n_sub(&mut r);
            assert!(n.is_power_of_two() && n <= 64);
        }
    }

    #[test]
    fn n_sub_reproducible() {
        let a: Vec<u32> = {
            let mut r = rng(42);
            (0..32).map(|_| draw_n_sub(&mut r)).collect()
        };
        let b: Vec<u32> = {
            let mut r = rng(42);
            (0..32).map(|_| draw_n_sub(&mut r)).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn n_sub_roughly_uniform() {
        let mut r = rng(7);
        let mut counts = [0usize; 7];
        let draws = 100_000;
        for _ in 0..draws {
            let n = draw_n_sub(&mut r);
            counts[n.trailing_zeros() as usize] += 1;
        }
        // Chi-squared against uniform over 7 bins; 22.46 is the 0.1%
        // critical value at 6 degrees of freedom.
        let expected = draws as f64 / 7.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        assert!(chi2 < 22.46, "chi2 = {chi2}, counts = {counts:?}");
    }

    #[test]
    fn fresh_stats_tie_picks_guided() {
        assert_eq!(pick_mode(&ModeStats::default(), 0, 0), Mode::ShapleyGuided);
    }

    #[test]
    fn cheaper_mode_wins() {
        let mut stats = ModeStats::default();
        stats.random = ModeCounters {
            execs: 100,
            new_paths: 10,
        };
        stats.guided = ModeCounters {
            execs: 100,
            new_paths: 1,
        };
        // costs: random (100+1)/(10+1) ~ 9.18 vs guided (100+1)/(1+1) = 50.5
        assert_eq!(pick_mode(&stats, 0, 0), Mode::Random);
    }

    #[test]
    fn starved_mode_is_forced() {
        let mut stats = ModeStats::default();
        stats.random = ModeCounters {
            execs: 10,
            new_paths: 100,
        };
        assert_eq!(pick_mode(&stats, 5000, 0), Mode::ShapleyGuided);
        assert_eq!(pick_mode(&stats, 0, 5000), Mode::Random);
    }

    #[test]
    fn point_mass_hits_only_that_byte() {
        let bytes = vec![9u8; 16];
        let map_vector: Vec<usize> = (0..16).collect();
        let guided = GuidedSelection {
            family_positions: &[5],
            probabilities: &[1.0],
            map_vector: &map_vector,
        };
        let mut r = rng(3);
        for _ in 0..200 {
            let mut stack = MutatorStack::new();
            let plan = MutationPlan::new(Mode::ShapleyGuided, 1);
            let out = havoc_once(&bytes, &plan, Some(&guided), &mut stack, &mut r).unwrap();
            assert_eq!(out.len(), bytes.len());
            for (i, (a, b)) in bytes.iter().zip(&out).enumerate() {
                if i != 5 {
                    assert_eq!(a, b, "byte {i} changed");
                }
            }
        }
    }

    #[test]
    fn random_without_length_mutators_preserves_length() {
        let bytes = vec![7u8; 24];
        let mut r = rng(11);
        for _ in 0..100 {
            let mut stack = MutatorStack::new();
            let mut plan = MutationPlan::new(Mode::Random, 8);
            plan.allow_length_mutators = false;
            let out = havoc_once(&bytes, &plan, None, &mut stack, &mut r).unwrap();
            assert_eq!(out.len(), bytes.len());
        }
    }

    #[test]
    fn guided_mode_never_changes_length() {
        let bytes = vec![1u8; 32];
        let map_vector: Vec<usize> = (0..32).collect();
        let positions: Vec<usize> = (0..32).collect();
        let probs = vec![1.0 / 32.0; 32];
        let guided = GuidedSelection {
            family_positions: &positions,
            probabilities: &probs,
            map_vector: &map_vector,
        };
        let mut r = rng(13);
        for _ in 0..200 {
            let mut stack = MutatorStack::new();
            let plan = MutationPlan::new(Mode::ShapleyGuided, 64);
            let out = havoc_once(&bytes, &plan, Some(&guided), &mut stack, &mut r).unwrap();
            assert_eq!(out.len(), bytes.len());
            assert!(!stack.has_length_mutators());
        }
    }

    #[test]
    fn stack_replay_reproduces_output() {
        let mut r = rng(17);
        for trial in 0..1000 {
            let len = r.gen_range(1..128usize);
            let bytes: Vec<u8> = (0..len).map(|_| r.gen()).collect();
            let plan = MutationPlan::new(Mode::Random, draw_n_sub(&mut r));
            let mut stack = MutatorStack::new();
            let out = havoc_once(&bytes, &plan, None, &mut stack, &mut r).unwrap();
            assert_eq!(
                stack.replay(&bytes).unwrap(),
                out,
                "replay mismatch on trial {trial}"
            );
            let withdrawn = stack.withdraw(&out).unwrap();
            assert_eq!(withdrawn.len(), bytes.len(), "withdraw length on {trial}");
        }
    }

    #[test]
    fn degenerate_distribution_falls_back_to_uniform() {
        let bytes = vec![0u8; 4];
        // Family positions 10..14 were trimmed out of this seed entirely.
        let guided = GuidedSelection {
            family_positions: &[10, 11, 12, 13],
            probabilities: &[0.25; 4],
            map_vector: &[0, 1, 2, 3],
        };
        let mut r = rng(19);
        let mut stack = MutatorStack::new();
        let plan = MutationPlan::new(Mode::ShapleyGuided, 4);
        let out = havoc_once(&bytes, &plan, Some(&guided), &mut stack, &mut r).unwrap();
        assert_eq!(out.len(), 4);
        assert_eq!(stack.len(), 4);
    }
}
