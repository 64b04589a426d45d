//! Splits a document's clicks into intention groups by token-set Jaccard
//! similarity against a seed click.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::ClickRecord;
use crate::error::{Error, Result};
use crate::text::{self, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupingConfig {
    pub jaccard_threshold: f64,
    pub max_groups: usize,
}

impl Default for GroupingConfig {
    fn default() -> Self {
        Self {
            jaccard_threshold: 0.5,
            max_groups: 5,
        }
    }
}

impl GroupingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.jaccard_threshold) {
            return Err(Error::InvalidConfig(format!(
                "jaccard_threshold must lie in [0,1], got {}",
                self.jaccard_threshold
            )));
        }
        if self.max_groups == 0 {
            return Err(Error::InvalidConfig("max_groups must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntentionGroup {
    pub group_id: u32,
    pub main_click: String,
    /// Normalized click keys, seed first.
    pub members: Vec<String>,
    pub token_union: BTreeSet<u32>,
    /// Members attached after the group budget ran out; they did not pass the
    /// threshold test against this group's seed.
    pub overflow: Vec<String>,
}

pub fn jaccard(a: &BTreeSet<u32>, b: &BTreeSet<u32>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Groups an importance-sorted click list. Each round takes the highest-ranked
/// ungrouped click as seed and absorbs every ungrouped click within the
/// threshold; clicks still ungrouped once `max_groups` is reached join the
/// group whose seed they overlap most (lowest group id on ties).
pub fn group_clicks(
    clicks: &[ClickRecord],
    vocab: &Vocabulary,
    cfg: &GroupingConfig,
) -> Vec<IntentionGroup> {
    let token_sets: Vec<BTreeSet<u32>> = clicks
        .iter()
        .map(|c| text::tokenize(&c.query_text, vocab).ids.into_iter().collect())
        .collect();
    group_token_sets(clicks, &token_sets, cfg)
}

pub(crate) fn group_token_sets(
    clicks: &[ClickRecord],
    token_sets: &[BTreeSet<u32>],
    cfg: &GroupingConfig,
) -> Vec<IntentionGroup> {
    let mut assigned = vec![false; clicks.len()];
    let mut groups: Vec<IntentionGroup> = Vec::new();
    let mut seeds: Vec<usize> = Vec::new();

    while groups.len() < cfg.max_groups {
        let Some(seed) = assigned.iter().position(|a| !a) else {
            break;
        };
        assigned[seed] = true;
        let mut members = vec![clicks[seed].query_text.clone()];
        let mut token_union = token_sets[seed].clone();
        for j in seed + 1..clicks.len() {
            if !assigned[j] && jaccard(&token_sets[seed], &token_sets[j]) >= cfg.jaccard_threshold {
                assigned[j] = true;
                members.push(clicks[j].query_text.clone());
                token_union.extend(&token_sets[j]);
            }
        }
        groups.push(IntentionGroup {
            group_id: groups.len() as u32,
            main_click: clicks[seed].query_text.clone(),
            members,
            token_union,
            overflow: Vec::new(),
        });
        seeds.push(seed);
    }

    for j in (0..clicks.len()).filter(|&j| !assigned[j]) {
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (g, &seed) in seeds.iter().enumerate() {
            let score = jaccard(&token_sets[seed], &token_sets[j]);
            if score > best_score {
                best = g;
                best_score = score;
            }
        }
        let group = &mut groups[best];
        group.members.push(clicks[j].query_text.clone());
        group.overflow.push(clicks[j].query_text.clone());
        group.token_union.extend(&token_sets[j]);
    }
    groups
}
