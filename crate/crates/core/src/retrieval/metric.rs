use std::collections::{BTreeMap, HashSet};

use crate::corpus::Judgments;
use crate::error::{Error, Result};

fn gain(rel: u8) -> f64 {
    (1u32 << rel) as f64 - 1.0
}

/// Retrieved share of judged gain for one query: Σ gain of judged docs in the
/// top k over Σ gain of all judged docs, gain = 2^rel − 1.
pub fn ncg_query(ranked: &[String], judged: &BTreeMap<String, u8>, k: usize) -> f64 {
    let total: f64 = judged.values().map(|&r| gain(r)).sum();
    if total == 0.0 {
        return 0.0;
    }
    let mut seen = HashSet::new();
    let hit: f64 = ranked
        .iter()
        .take(k)
        .filter(|d| seen.insert(d.as_str()))
        .filter_map(|d| judged.get(d.as_str()))
        .fold(0.0, |acc, &r| acc + gain(r));
    hit / total
}

/// Mean NCG@k over the queries in `results`, each in [0, 1].
pub fn ncg_at_k(results: &BTreeMap<String, Vec<String>>, judgments: &Judgments, k: usize) -> Result<f64> {
    if results.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (query, ranked) in results {
        let judged = judgments
            .get(query)
            .filter(|j| !j.is_empty())
            .ok_or_else(|| Error::NoJudgments(query.clone()))?;
        sum += ncg_query(ranked, judged, k);
    }
    Ok(sum / results.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn judged(pairs: &[(&str, u8)]) -> BTreeMap<String, u8> {
        pairs.iter().map(|(d, r)| (d.to_string(), *r)).collect()
    }

    fn ranked(ids: &[&str]) -> Vec<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn hand_values() {
        let j = judged(&[("a", 4), ("b", 1)]);
        assert_eq!(ncg_query(&ranked(&["a", "b", "x"]), &j, 3), 1.0);
        assert_eq!(ncg_query(&ranked(&["x", "y"]), &j, 2), 0.0);
        assert_eq!(ncg_query(&ranked(&["a", "x"]), &j, 2), 15.0 / 16.0);
        assert_eq!(ncg_query(&ranked(&["x", "a"]), &j, 1), 0.0);
    }

    #[test]
    fn missing_judgments() {
        let results = BTreeMap::from([("q".to_string(), ranked(&["a"]))]);
        let err = ncg_at_k(&results, &Judgments::new(), 5).unwrap_err();
        assert_eq!(err.to_string(), "no-judgments(q)");
    }

    #[test]
    fn mean_over_queries() {
        let results = BTreeMap::from([
            ("q1".to_string(), ranked(&["a"])),
            ("q2".to_string(), ranked(&["z"])),
        ]);
        let j = Judgments::from([
            ("q1".to_string(), judged(&[("a", 2)])),
            ("q2".to_string(), judged(&[("b", 3)])),
        ]);
        assert_eq!(ncg_at_k(&results, &j, 10).unwrap(), 0.5);
    }
}
