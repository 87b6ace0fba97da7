//! The campaign loop: round-robin seed scheduling with fixed energy,
//! mode selection, mutation, execution, recovery-based Shapley updates,
//! bandit updates, family maintenance, and statistics.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bandit::{
    featurize, select_centers, selection_distribution, ArmState, CenterSet, DEFAULT_CENTERS,
    DEFAULT_UCB_ALPHA,
};
use crate::coverage::{CoverageMap, EdgeSet};
use crate::error::{Error, Result};
use crate::family::{AdmitOutcome, Family, FamilyId, MutatorStack, Mutator, Seed, SeedId};
use crate::mutation::{
    draw_n_sub, havoc_once, pick_mode, GuidedSelection, Mode, ModeStats, MutationPlan,
};
use crate::shapley::{incremental_update, recovery_analysis, RecoveryVerdict};
use crate::targets::{Target, Verdict};

pub const DEFAULT_ENERGY: u64 = 256;
pub const CENTER_REFRESH_INTERVAL: usize = 256;
pub const STATS_FLUSH_INTERVAL: u64 = 1024;

/// Which mutation modes the campaign may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModePolicy {
    /// Cost scheduler decides between guided and random per execution.
    Auto,
    /// Always Shapley-guided.
    Shapley,
    /// Always random havoc.
    Random,
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub max_execs: u64,
    /// 0 means no wall-clock limit.
    pub max_seconds: u64,
    pub rng_seed: u64,
    pub mode: ModePolicy,
    pub energy: u64,
    pub centers: usize,
    pub alpha_ucb: f64,
    /// Use real wall time in stats instead of the deterministic
    /// execution-derived clock.
    pub real_clock: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            max_execs: 50_000,
            max_seconds: 0,
            rng_seed: 0,
            mode: ModePolicy::Auto,
            energy: DEFAULT_ENERGY,
            centers: DEFAULT_CENTERS,
            alpha_ucb: DEFAULT_UCB_ALPHA,
            real_clock: false,
        }
    }
}

/// One line of the stats CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsRow {
    pub execs: u64,
    pub unique_edges: usize,
    pub n_seeds: usize,
    pub n_families: usize,
    pub guided_cost: f64,
    pub random_cost: f64,
    pub wall_ms: u64,
}

impl StatsRow {
    pub const CSV_HEADER: &'static str =
        "execs,unique_edges,n_seeds,n_families,guided_cost,random_cost,wall_ms";

    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.execs,
            self.unique_edges,
            self.n_seeds,
            self.n_families,
            self.guided_cost,
            self.random_cost,
            self.wall_ms
        )
    }
}

/// Campaign clock. The virtual variant derives wall time from the
/// execution counter so identical runs report identical timings.
#[derive(Debug)]
enum Clock {
    Virtual { execs: u64 },
    System { start: Instant },
}

// Virtual clock rate: 100 executions per reported millisecond.
const VIRTUAL_EXECS_PER_MS: u64 = 100;

impl Clock {
    fn advance(&mut self) {
        if let Clock::Virtual { execs } = self {
            *execs += 1;
        }
    }

    fn elapsed_ms(&self) -> u64 {
        match self {
            Clock::Virtual { execs } => execs / VIRTUAL_EXECS_PER_MS,
            Clock::System { start } => start.elapsed().as_millis() as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepOutcome {
    /// Execution produced no family-local gain.
    NoGain,
    /// A seed was admitted to an existing family.
    Retained(SeedId),
    /// The input founded a new family.
    NewFamily(FamilyId),
    /// The target failed; the error was counted.
    TargetError,
}

pub struct Campaign {
    pub config: EngineConfig,
    pub seeds: BTreeMap<SeedId, Seed>,
    pub families: BTreeMap<FamilyId, Family>,
    pub global_map: CoverageMap,
    pub mode_stats: ModeStats,
    pub execs: u64,
    pub target_errors: u64,
    pub crashes: Vec<(u64, Vec<u8>)>,
    pub stats_rows: Vec<StatsRow>,
    arms: BTreeMap<(FamilyId, usize), ArmState>,
    centers: CenterSet,
    seeds_at_center_refresh: usize,
    schedule: Vec<SeedId>,
    cursor: usize,
    energy_left: u64,
    execs_since_guided: u64,
    execs_since_random: u64,
    next_seed_id: u64,
    next_family_id: u64,
    rng: ChaCha8Rng,
    clock: Clock,
}

impl Campaign {
    /// Dry-run every initial seed and found one family per seed.
    pub fn new(
        config: EngineConfig,
        target: &dyn Target,
        initial_seeds: Vec<Vec<u8>>,
    ) -> Result<Self> {
        if initial_seeds.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let clock = if config.real_clock {
            Clock::System {
                start: Instant::now(),
            }
        } else {
            Clock::Virtual { execs: 0 }
        };
        let mut campaign = Self {
            rng: ChaCha8Rng::seed_from_u64(config.rng_seed),
            config,
            seeds: BTreeMap::new(),
            families: BTreeMap::new(),
            global_map: CoverageMap::new(),
            mode_stats: ModeStats::default(),
            execs: 0,
            target_errors: 0,
            crashes: Vec::new(),
            stats_rows: Vec::new(),
            arms: BTreeMap::new(),
            centers: CenterSet::default(),
            seeds_at_center_refresh: 0,
            schedule: Vec::new(),
            cursor: 0,
            energy_left: 0,
            execs_since_guided: 0,
            execs_since_random: 0,
            next_seed_id: 0,
            next_family_id: 0,
            clock,
        };
        for bytes in initial_seeds {
            let result = target.run(&bytes)?;
            campaign.global_map.absorb(&result.edges);
            campaign.found_new_family(bytes, result.edges)?;
        }
        campaign.refresh_centers()?;
        Ok(campaign)
    }

    pub fn n_seeds(&self) -> usize {
        self.seeds.len()
    }

    pub fn arm(&self, family: FamilyId, position: usize) -> Option<&ArmState> {
        self.arms.get(&(family, position))
    }

    fn alloc_seed_id(&mut self) -> SeedId {
        let id = SeedId(self.next_seed_id);
        self.next_seed_id += 1;
        id
    }

    fn found_new_family(&mut self, bytes: Vec<u8>, edges: EdgeSet) -> Result<FamilyId> {
        let family_id = FamilyId(self.next_family_id);
        self.next_family_id += 1;
        let seed_id = self.alloc_seed_id();
        let (family, seed) = Family::found(family_id, seed_id, bytes, edges, self.execs)?;
        self.families.insert(family_id, family);
        self.seeds.insert(seed_id, seed);
        self.schedule.push(seed_id);
        Ok(family_id)
    }

    fn refresh_centers(&mut self) -> Result<()> {
        let corpus: Vec<(SeedId, EdgeSet)> = self
            .seeds
            .values()
            .map(|s| (s.id, s.edge_set.clone()))
            .collect();
        self.centers = select_centers(&corpus, self.config.centers)?;
        self.seeds_at_center_refresh = self.seeds.len();
        Ok(())
    }

    fn maybe_refresh_centers(&mut self) -> Result<()> {
        if self.seeds.len() >= self.seeds_at_center_refresh + CENTER_REFRESH_INTERVAL {
            self.refresh_centers()?;
        }
        Ok(())
    }

    fn choose_mode(&self) -> Mode {
        match self.config.mode {
            ModePolicy::Shapley => Mode::ShapleyGuided,
            ModePolicy::Random => Mode::Random,
            ModePolicy::Auto => pick_mode(
                &self.mode_stats,
                self.execs_since_guided,
                self.execs_since_random,
            ),
        }
    }

    /// Guided plan for a seed: positive-phi family positions scored
    /// through their arms against the seed's path context. Falls back to
    /// a uniform distribution over the seed's own positions while the
    /// family has no attributed bytes yet.
    fn guided_distribution(&mut self, seed_id: SeedId) -> Result<(Vec<usize>, Vec<f64>)> {
        let seed = &self.seeds[&seed_id];
        let family = &self.families[&seed.family_id];
        let positive = family.shapley.positive_positions();
        if positive.is_empty() {
            let positions = seed.map_vector.clone();
            let probs = vec![1.0 / positions.len() as f64; positions.len()];
            return Ok((positions, probs));
        }
        let features = featurize(&seed.edge_set, &self.centers);
        let family_id = seed.family_id;
        let dim = self.centers.dimension();
        let mut scores = Vec::with_capacity(positive.len());
        for &p in &positive {
            let arm = self
                .arms
                .entry((family_id, p))
                .or_insert_with(|| ArmState::new(dim));
            scores.push(arm.score(&features, self.config.alpha_ucb)?);
        }
        let probs = selection_distribution(&scores)?;
        Ok((positive, probs))
    }

    /// Family positions touched by value mutators in this mutation, in
    /// original-seed coordinates.
    fn selected_family_positions(stack: &MutatorStack, map_vector: &[usize]) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        for entry in stack.entries() {
            if let Mutator::Overwrite { pos, .. } = entry {
                if let Some(&fp) = map_vector.get(*pos) {
                    out.insert(fp);
                }
            }
        }
        out
    }

    /// Shapley and bandit updates for one analyzed mutation. `verdict` is
    /// in the local coordinates of `parent`.
    fn apply_attribution(
        &mut self,
        parent_id: SeedId,
        verdict: &RecoveryVerdict,
        selected: &BTreeSet<usize>,
    ) -> Result<()> {
        let parent = &self.seeds[&parent_id];
        let family_id = parent.family_id;
        let map_vector = parent.map_vector.clone();
        let to_family = |locals: &[usize]| -> Vec<usize> {
            locals.iter().map(|&p| map_vector[p]).collect()
        };
        let family_verdict = RecoveryVerdict {
            mutated_positions: to_family(&verdict.mutated_positions),
            redundant: to_family(&verdict.redundant),
            necessary: to_family(&verdict.necessary),
            gain: verdict.gain,
            degenerate: verdict.degenerate,
        };

        let features = featurize(&self.seeds[&parent_id].edge_set, &self.centers);
        let dim = self.centers.dimension();
        let family = self.families.get_mut(&family_id).expect("family exists");
        incremental_update(&mut family.shapley, &family_verdict)?;

        let necessary: BTreeSet<usize> = family_verdict.necessary.iter().copied().collect();
        for &fp in selected.iter().chain(&necessary) {
            let reward = if necessary.contains(&fp) && !family_verdict.degenerate {
                family_verdict.gain as f64
            } else {
                0.0
            };
            // Arms exist only for positions with positive phi; necessary
            // positions just crossed that line.
            let has_phi = self
                .families
                .get(&family_id)
                .and_then(|f| f.shapley.get(fp))
                .is_some_and(|v| v > 0.0);
            match self.arms.get_mut(&(family_id, fp)) {
                Some(arm) => arm.update(&features, reward)?,
                None if has_phi => {
                    let mut arm = ArmState::new(dim);
                    arm.update(&features, reward)?;
                    self.arms.insert((family_id, fp), arm);
                }
                None => {}
            }
        }
        Ok(())
    }

    /// Zero-reward bandit updates for a selection that produced no gain.
    fn apply_zero_reward(&mut self, parent_id: SeedId, selected: &BTreeSet<usize>) -> Result<()> {
        let parent = &self.seeds[&parent_id];
        let family_id = parent.family_id;
        let features = featurize(&parent.edge_set, &self.centers);
        for &fp in selected {
            if let Some(arm) = self.arms.get_mut(&(family_id, fp)) {
                arm.update(&features, 0.0)?;
            }
        }
        Ok(())
    }

    /// One mutation-execution cycle.
    pub fn step(&mut self, target: &dyn Target) -> Result<StepOutcome> {
        if self.schedule.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if self.energy_left == 0 {
            self.cursor = (self.cursor + 1) % self.schedule.len();
            self.energy_left = self.config.energy.max(1);
        }
        self.energy_left -= 1;
        let seed_id = self.schedule[self.cursor];

        let mode = self.choose_mode();
        let n_sub = draw_n_sub(&mut self.rng);
        let plan = MutationPlan::new(mode, n_sub);

        let guided_data = if mode == Mode::ShapleyGuided {
            Some(self.guided_distribution(seed_id)?)
        } else {
            None
        };

        let parent_bytes = self.seeds[&seed_id].bytes.clone();
        let map_vector = self.seeds[&seed_id].map_vector.clone();
        let mut stack = MutatorStack::new();
        let mutated = {
            let guided = guided_data.as_ref().map(|(positions, probs)| GuidedSelection {
                family_positions: positions,
                probabilities: probs,
                map_vector: &map_vector,
            });
            havoc_once(&parent_bytes, &plan, guided.as_ref(), &mut stack, &mut self.rng)?
        };

        // Execution is charged to the chosen mode whether or not it works.
        self.execs += 1;
        self.clock.advance();
        self.mode_stats.counters_mut(mode).execs += 1;
        match mode {
            Mode::ShapleyGuided => {
                self.execs_since_guided = 0;
                self.execs_since_random += 1;
            }
            Mode::Random => {
                self.execs_since_random = 0;
                self.execs_since_guided += 1;
            }
        }
        if let Some(seed) = self.seeds.get_mut(&seed_id) {
            seed.exec_count += 1;
        }

        let result = match target.run(&mutated) {
            Ok(r) => r,
            Err(err) => {
                self.target_errors += 1;
                log::warn!("target error at exec {}: {err}", self.execs);
                return Ok(StepOutcome::TargetError);
            }
        };

        if self.global_map.gain(&result.edges) > 0 {
            self.mode_stats.counters_mut(mode).new_paths += 1;
        }
        if result.verdict == Verdict::CrashMarker {
            self.crashes.push((self.execs, mutated.clone()));
        }

        let family_id = self.seeds[&seed_id].family_id;
        let self_new = self.families[&family_id].local_map.diff_new(&result.edges);
        let selected = Self::selected_family_positions(&stack, &map_vector);

        let outcome = if self_new.is_empty() {
            if mode == Mode::ShapleyGuided {
                self.apply_zero_reward(seed_id, &selected)?;
            }
            StepOutcome::NoGain
        } else if mutated.len() == parent_bytes.len() {
            let verdict = {
                let baseline = &self.families[&family_id].local_map;
                recovery_analysis(&parent_bytes, &mutated, target, baseline)?
            };
            self.apply_attribution(seed_id, &verdict, &selected)?;

            let new_id = self.alloc_seed_id();
            let parent = self.seeds[&seed_id].clone();
            let execs = self.execs;
            let family = self.families.get_mut(&family_id).expect("family exists");
            match family.try_admit(new_id, mutated, &parent, &self_new, target, execs)? {
                AdmitOutcome::Admitted(seed) => {
                    self.global_map.absorb(&seed.edge_set);
                    self.seeds.insert(new_id, seed);
                    self.schedule.push(new_id);
                    StepOutcome::Retained(new_id)
                }
                AdmitOutcome::NewFamilyNeeded => {
                    // A length-preserving input reproduces its own edges;
                    // unreachable for deterministic targets.
                    let id = self.found_new_family(
                        stack.replay(&parent_bytes)?,
                        result.edges.clone(),
                    )?;
                    StepOutcome::NewFamily(id)
                }
            }
        } else {
            // Length changed: withdraw the length mutators and try to keep
            // the input inside the parent's family.
            let withdrawn = stack.withdraw(&mutated)?;
            let new_id = self.alloc_seed_id();
            let parent = self.seeds[&seed_id].clone();
            let execs = self.execs;
            let family = self.families.get_mut(&family_id).expect("family exists");
            match family.try_admit(
                new_id,
                withdrawn.clone(),
                &parent,
                &self_new,
                target,
                execs,
            )? {
                AdmitOutcome::Admitted(seed) => {
                    let verdict = {
                        let baseline = &self.families[&family_id].local_map;
                        recovery_analysis(&parent_bytes, &withdrawn, target, baseline)?
                    };
                    let selected = {
                        let mut s = BTreeSet::new();
                        for &p in &verdict.mutated_positions {
                            if let Some(&fp) = map_vector.get(p) {
                                s.insert(fp);
                            }
                        }
                        s
                    };
                    self.apply_attribution(seed_id, &verdict, &selected)?;
                    self.global_map.absorb(&seed.edge_set);
                    self.seeds.insert(new_id, seed);
                    self.schedule.push(new_id);
                    StepOutcome::Retained(new_id)
                }
                AdmitOutcome::NewFamilyNeeded => {
                    let id = self.found_new_family(mutated, result.edges.clone())?;
                    StepOutcome::NewFamily(id)
                }
            }
        };

        self.families
            .get_mut(&family_id)
            .expect("family exists")
            .local_map
            .absorb(&result.edges);
        self.global_map.absorb(&result.edges);
        self.maybe_refresh_centers()?;
        Ok(outcome)
    }

    /// Energy per seed selection; constant, from config.
    pub fn assign_energy(&self, _seed: SeedId) -> u64 {
        self.config.energy.max(1)
    }

    pub fn stats_row(&self) -> StatsRow {
        StatsRow {
            execs: self.execs,
            unique_edges: self.global_map.len(),
            n_seeds: self.seeds.len(),
            n_families: self.families.len(),
            guided_cost: self.mode_stats.guided.cost(),
            random_cost: self.mode_stats.random.cost(),
            wall_ms: self.clock.elapsed_ms(),
        }
    }

    /// Loop until the execution or time budget is exhausted, flushing a
    /// stats row every [`STATS_FLUSH_INTERVAL`] executions and a final one
    /// at the end.
    pub fn run(&mut self, target: &dyn Target) -> Result<StatsRow> {
        while self.execs < self.config.max_execs {
            if self.config.max_seconds > 0
                && self.clock.elapsed_ms() >= self.config.max_seconds * 1000
            {
                break;
            }
            self.step(target)?;
            if self.execs % STATS_FLUSH_INTERVAL == 0 {
                let row = self.stats_row();
                self.stats_rows.push(row);
            }
        }
        let row = self.stats_row();
        self.stats_rows.push(row.clone());
        Ok(row)
    }

    /// Run and persist stats, corpus, and crashes under `out_dir`.
    pub fn run_to_dir(&mut self, target: &dyn Target, out_dir: &Path) -> Result<StatsRow> {
        let row = self.run(target)?;
        self.persist(out_dir)?;
        Ok(row)
    }

    pub fn persist(&self, out_dir: &Path) -> Result<()> {
        std::fs::create_dir_all(out_dir)
            .map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;

        let mut csv = String::from(StatsRow::CSV_HEADER);
        csv.push('\n');
        for row in &self.stats_rows {
            csv.push_str(&row.to_csv_line());
            csv.push('\n');
        }
        std::fs::write(out_dir.join("stats.csv"), csv)
            .map_err(|e| Error::io("writing stats.csv", e))?;

        crate::corpus::save(out_dir.join("corpus"), &self.families, &self.seeds)?;

        let crash_dir = out_dir.join("crashes");
        std::fs::create_dir_all(&crash_dir)
            .map_err(|e| Error::io("creating crashes dir", e))?;
        for (exec, bytes) in &self.crashes {
            std::fs::write(crash_dir.join(format!("crash_{exec}.bin")), bytes)
                .map_err(|e| Error::io("writing crash input", e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::{CoupledChecker, MagicChain};

    fn config(max_execs: u64, mode: ModePolicy, seed: u64) -> EngineConfig {
        EngineConfig {
            max_execs,
            rng_seed: seed,
            mode,
            ..EngineConfig::default()
        }
    }

    #[test]
    fn dry_run_only_campaign() {
        let mut campaign = Campaign::new(
            config(0, ModePolicy::Auto, 1),
            &CoupledChecker,
            vec![vec![0u8; 16]],
        )
        .unwrap();
        let row = campaign.run(&CoupledChecker).unwrap();
        assert_eq!(row.execs, 0);
        assert_eq!(row.n_seeds, 1);
        assert_eq!(row.n_families, 1);
        assert_eq!(row.unique_edges, 2);
    }

    #[test]
    fn random_policy_never_uses_guided() {
        let mut campaign = Campaign::new(
            config(2000, ModePolicy::Random, 3),
            &CoupledChecker,
            vec![vec![0u8; 16]],
        )
        .unwrap();
        campaign.run(&CoupledChecker).unwrap();
        assert_eq!(campaign.mode_stats.guided.execs, 0);
        assert_eq!(campaign.mode_stats.random.execs, 2000);
    }

    #[test]
    fn campaign_reaches_requested_execs() {
        let mut campaign = Campaign::new(
            config(5000, ModePolicy::Auto, 5),
            &CoupledChecker,
            vec![vec![0u8; 16]],
        )
        .unwrap();
        let row = campaign.run(&CoupledChecker).unwrap();
        assert_eq!(row.execs, 5000);
        assert!(row.unique_edges >= 2);
    }

    #[test]
    fn family_members_keep_original_length() {
        let mut campaign = Campaign::new(
            config(20_000, ModePolicy::Auto, 7),
            &CoupledChecker,
            vec![vec![0u8; 16]],
        )
        .unwrap();
        campaign.run(&CoupledChecker).unwrap();
        for family in campaign.families.values() {
            for member in &family.members {
                let seed = &campaign.seeds[member];
                assert_eq!(seed.bytes.len(), family.original_length);
                assert_eq!(seed.bytes.len(), seed.map_vector.len());
            }
        }
    }

    #[test]
    fn retained_seed_edges_match_reexecution() {
        let mut campaign = Campaign::new(
            config(10_000, ModePolicy::Auto, 11),
            &CoupledChecker,
            vec![vec![0u8; 16]],
        )
        .unwrap();
        campaign.run(&CoupledChecker).unwrap();
        for seed in campaign.seeds.values() {
            let fresh = CoupledChecker.run(&seed.bytes).unwrap().edges;
            assert_eq!(seed.edge_set, fresh);
        }
    }

    #[test]
    fn deterministic_stats() {
        let run_once = || {
            let mut campaign = Campaign::new(
                config(8000, ModePolicy::Auto, 42),
                &CoupledChecker,
                vec![vec![0u8; 16]],
            )
            .unwrap();
            campaign.run(&CoupledChecker).unwrap();
            let rows: Vec<String> = campaign
                .stats_rows
                .iter()
                .map(StatsRow::to_csv_line)
                .collect();
            let ids: Vec<u64> = campaign.seeds.keys().map(|s| s.0).collect();
            (rows, ids)
        };
        assert_eq!(run_once(), run_once());
    }

    #[test]
    fn magic_chain_progress() {
        let mut campaign = Campaign::new(
            config(30_000, ModePolicy::Auto, 2),
            &MagicChain,
            vec![vec![0u8; 8]],
        )
        .unwrap();
        let row = campaign.run(&MagicChain).unwrap();
        assert!(row.unique_edges >= 2, "found {} edges", row.unique_edges);
    }
}
