//! Corpus directory layout: one `id_{seed}_fam_{family}.bin` file per
//! seed, a sidecar `.map` file with the comma-separated map-vector, and a
//! `meta.json` carrying family state (Shapley vectors, local maps, member
//! lists) so a directory reloads into the exact same corpus.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coverage::EdgeSet;
use crate::error::{Error, Result};
use crate::family::{Family, FamilyId, Seed, SeedId};

#[derive(Debug, Serialize, Deserialize)]
struct SeedMeta {
    id: SeedId,
    family_id: FamilyId,
    edge_set: EdgeSet,
    exec_count: u64,
    retained_at: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusMeta {
    families: Vec<Family>,
    seeds: Vec<SeedMeta>,
}

fn seed_stem(seed: &Seed) -> String {
    format!("id_{}_fam_{}", seed.id.0, seed.family_id.0)
}

pub fn save(
    dir: impl AsRef<Path>,
    families: &BTreeMap<FamilyId, Family>,
    seeds: &BTreeMap<SeedId, Seed>,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;

    for seed in seeds.values() {
        let stem = seed_stem(seed);
        std::fs::write(dir.join(format!("{stem}.bin")), &seed.bytes)
            .map_err(|e| Error::io(format!("writing {stem}.bin"), e))?;
        let map_line = seed
            .map_vector
            .iter()
            .map(|p| p.to_string())
            .collect::<Vec<_>>()
            .join(",");
        std::fs::write(dir.join(format!("{stem}.map")), map_line)
            .map_err(|e| Error::io(format!("writing {stem}.map"), e))?;
    }

    let meta = CorpusMeta {
        families: families.values().cloned().collect(),
        seeds: seeds
            .values()
            .map(|s| SeedMeta {
                id: s.id,
                family_id: s.family_id,
                edge_set: s.edge_set.clone(),
                exec_count: s.exec_count,
                retained_at: s.retained_at,
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&meta)
        .map_err(|e| Error::CorpusFormat(e.to_string()))?;
    std::fs::write(dir.join("meta.json"), json)
        .map_err(|e| Error::io("writing meta.json", e))?;
    Ok(())
}

pub fn load(
    dir: impl AsRef<Path>,
) -> Result<(BTreeMap<FamilyId, Family>, BTreeMap<SeedId, Seed>)> {
    let dir = dir.as_ref();
    let json = std::fs::read_to_string(dir.join("meta.json"))
        .map_err(|e| Error::io(format!("reading {}/meta.json", dir.display()), e))?;
    let meta: CorpusMeta =
        serde_json::from_str(&json).map_err(|e| Error::CorpusFormat(e.to_string()))?;

    let mut families = BTreeMap::new();
    for family in meta.families {
        families.insert(family.id, family);
    }

    let mut seeds = BTreeMap::new();
    for sm in meta.seeds {
        let stem = format!("id_{}_fam_{}", sm.id.0, sm.family_id.0);
        let bytes = std::fs::read(dir.join(format!("{stem}.bin")))
            .map_err(|e| Error::io(format!("reading {stem}.bin"), e))?;
        let map_text = std::fs::read_to_string(dir.join(format!("{stem}.map")))
            .map_err(|e| Error::io(format!("reading {stem}.map"), e))?;
        let map_vector: Vec<usize> = if map_text.trim().is_empty() {
            Vec::new()
        } else {
            map_text
                .trim()
                .split(',')
                .map(|s| {
                    s.parse()
                        .map_err(|_| Error::CorpusFormat(format!("bad map entry {s:?} in {stem}.map")))
                })
                .collect::<Result<_>>()?
        };
        if map_vector.len() != bytes.len() {
            return Err(Error::CorpusFormat(format!(
                "{stem}: map length {} does not match {} bytes",
                map_vector.len(),
                bytes.len()
            )));
        }
        seeds.insert(
            sm.id,
            Seed {
                id: sm.id,
                family_id: sm.family_id,
                bytes,
                map_vector,
                edge_set: sm.edge_set,
                exec_count: sm.exec_count,
                retained_at: sm.retained_at,
            },
        );
    }
    Ok((families, seeds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{Campaign, EngineConfig, ModePolicy};
    use crate::targets::CoupledChecker;

    #[test]
    fn corpus_round_trip() {
        let mut campaign = Campaign::new(
            EngineConfig {
                max_execs: 10_000,
                rng_seed: 9,
                mode: ModePolicy::Auto,
                ..EngineConfig::default()
            },
            &CoupledChecker,
            vec![vec![0u8; 16]],
        )
        .unwrap();
        campaign.run(&CoupledChecker).unwrap();
        assert!(campaign.seeds.len() > 1, "campaign retained nothing");

        let dir = tempfile::tempdir().unwrap();
        save(dir.path(), &campaign.families, &campaign.seeds).unwrap();
        let (families, seeds) = load(dir.path()).unwrap();
        assert_eq!(families, campaign.families);
        assert_eq!(seeds, campaign.seeds);
    }

    #[test]
    fn load_missing_dir_fails() {
        assert!(load("/nonexistent/corpus/dir").is_err());
    }
}
