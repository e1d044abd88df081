//! Seeded synthetic knowledge bases for desk-scale experiments.
//!
//! Entities are split into tiers of equal size. Three relations:
//!
//! * `similar_to` (0) is symmetric: unordered pairs within small clusters,
//!   stored in both directions.
//! * `member_of` (1) is many-to-one: every entity points to the first entity
//!   (the hub) of its tier.
//! * `precedes` (2) is antisymmetric: pairs from tier t to tier t + 1.
//!
//! All triples are shuffled and cut into train / valid / test.

use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{KgError, Result};
use crate::kb::{KnowledgeBase, Triple};

pub const SIMILAR_TO: usize = 0;
pub const MEMBER_OF: usize = 1;
pub const PRECEDES: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub entities: usize,
    pub tiers: usize,
    pub cluster_size: usize,
    /// unordered pairs for `similar_to`, each giving two triples
    pub symmetric_pairs: usize,
    pub chain_triples: usize,
    pub valid: usize,
    pub test: usize,
}

impl Default for SyntheticConfig {
    /// 200 entities, 3600 triples: 1080 symmetric, 190 many-to-one, 2330
    /// antisymmetric; split 3000 / 300 / 300.
    fn default() -> Self {
        SyntheticConfig {
            entities: 200,
            tiers: 10,
            cluster_size: 10,
            symmetric_pairs: 540,
            chain_triples: 2330,
            valid: 300,
            test: 300,
        }
    }
}

pub fn generate(cfg: &SyntheticConfig, seed: u64) -> Result<KnowledgeBase> {
    let n = cfg.entities;
    if cfg.tiers < 2 || !n.is_multiple_of(cfg.tiers) {
        return Err(KgError::InvalidArgument(format!(
            "{n} entities cannot be split into {} tiers",
            cfg.tiers
        )));
    }
    if cfg.cluster_size < 2 || !n.is_multiple_of(cfg.cluster_size) {
        return Err(KgError::InvalidArgument(format!(
            "{n} entities cannot be split into clusters of {}",
            cfg.cluster_size
        )));
    }
    let tier = n / cfg.tiers;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut pairs = Vec::new();
    for c in 0..n / cfg.cluster_size {
        let base = c * cfg.cluster_size;
        for a in 0..cfg.cluster_size {
            for b in a + 1..cfg.cluster_size {
                pairs.push((base + a, base + b));
            }
        }
    }
    let mut chain = Vec::new();
    for t in 0..cfg.tiers - 1 {
        for a in 0..tier {
            for b in 0..tier {
                chain.push((t * tier + a, (t + 1) * tier + b));
            }
        }
    }
    if cfg.symmetric_pairs > pairs.len() || cfg.chain_triples > chain.len() {
        return Err(KgError::InvalidArgument("requested more triples than the layout allows".into()));
    }

    let mut all = Vec::new();
    for &(a, b) in pairs.choose_multiple(&mut rng, cfg.symmetric_pairs) {
        all.push(Triple::new(a, SIMILAR_TO, b));
        all.push(Triple::new(b, SIMILAR_TO, a));
    }
    for i in 0..n {
        let hub = i / tier * tier;
        if i != hub {
            all.push(Triple::new(i, MEMBER_OF, hub));
        }
    }
    for &(a, b) in chain.choose_multiple(&mut rng, cfg.chain_triples) {
        all.push(Triple::new(a, PRECEDES, b));
    }
    debug_assert_eq!(all.iter().collect::<HashSet<_>>().len(), all.len());

    if cfg.valid + cfg.test >= all.len() {
        return Err(KgError::InvalidArgument("valid + test leave no training triples".into()));
    }
    all.shuffle(&mut rng);
    let test = all.split_off(all.len() - cfg.test);
    let valid = all.split_off(all.len() - cfg.valid);
    let entity_names = (0..n).map(|i| format!("e{i:03}")).collect();
    let relation_names = ["similar_to", "member_of", "precedes"].map(String::from).to_vec();
    KnowledgeBase::from_parts(entity_names, relation_names, all, valid, test)
}
