use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{self, ClickLog, DocumentRecord, Judgment};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub topics: usize,
    pub vocab_per_topic: usize,
    pub docs_per_topic: usize,
    pub two_topic_fraction: f64,
    /// Held-out evaluation queries per topic.
    pub queries_per_topic: usize,
    pub click_noise: f64,
    /// Latent intent families per topic; each owns a small word set.
    pub families_per_topic: usize,
    pub family_size: usize,
    /// Words per click key, drawn from the key's family.
    pub click_words: usize,
    /// Upper bound on click keys per (document, topic).
    pub max_clicks: usize,
    pub generic_words: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            topics: 8,
            vocab_per_topic: 32,
            docs_per_topic: 50,
            two_topic_fraction: 0.3,
            queries_per_topic: 16,
            click_noise: 0.1,
            families_per_topic: 8,
            family_size: 4,
            click_words: 3,
            max_clicks: 2,
            generic_words: 30,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.topics == 0
            || self.docs_per_topic == 0
            || self.queries_per_topic == 0
            || self.families_per_topic == 0
            || self.max_clicks == 0
            || self.generic_words == 0
        {
            return bad("synthetic counts must be positive");
        }
        if self.family_size < 2 || self.family_size > self.vocab_per_topic {
            return bad("family_size must lie in [2, vocab_per_topic]");
        }
        if self.click_words == 0 || self.click_words > self.family_size {
            return bad("click_words must lie in [1, family_size]");
        }
        if !(0.0..1.0).contains(&self.click_noise) {
            return bad("click_noise must lie in [0,1)");
        }
        if !(0.0..=1.0).contains(&self.two_topic_fraction) {
            return bad("two_topic_fraction must lie in [0,1]");
        }
        if self.two_topic_fraction > 0.0 && self.topics < 2 {
            return bad("two-topic documents need at least two topics");
        }
        Ok(())
    }

    pub fn doc_count(&self) -> usize {
        self.topics * self.docs_per_topic
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub docs: Vec<DocumentRecord>,
    /// (topic, family) per document, primary topic first.
    pub doc_topics: Vec<Vec<(usize, usize)>>,
    /// Raw click rows (doc_id, query, frequency) in generation order.
    pub click_rows: Vec<(String, String, u64)>,
    /// (query, topic).
    pub queries: Vec<(String, usize)>,
    pub judgments: Vec<Judgment>,
    pub topic_words: Vec<Vec<String>>,
    /// Word sets indexed by [topic][family].
    pub families: Vec<Vec<Vec<String>>>,
}

const ONSETS: [&str; 14] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

fn pseudo_words(n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = rng.gen_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS[rng.gen_range(0..ONSETS.len())]);
            w.push_str(VOWELS[rng.gen_range(0..VOWELS.len())]);
        }
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn pick<'a>(pool: &'a [String], n: usize, rng: &mut ChaCha8Rng) -> Vec<&'a str> {
    index::sample(rng, pool.len(), n.min(pool.len()))
        .into_iter()
        .map(|i| pool[i].as_str())
        .collect()
}

/// A click key: `n` words of a family, in family order.
fn family_click(family: &[String], n: usize, rng: &mut ChaCha8Rng) -> String {
    let mut picked = index::sample(rng, family.len(), n).into_vec();
    picked.sort_unstable();
    picked.iter().map(|&i| family[i].as_str()).collect::<Vec<_>>().join(" ")
}

/// Generates a corpus in which every document belongs to one latent intent
/// family per topic. Titles reveal one family word, click keys reveal most of
/// the family, and judgments grade same-topic documents by how many query
/// words fall in their family.
pub fn gen_synthetic(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let words = pseudo_words(cfg.topics * cfg.vocab_per_topic + cfg.generic_words + 8, &mut rng);
    let topic_words: Vec<Vec<String>> = words
        .chunks(cfg.vocab_per_topic)
        .take(cfg.topics)
        .map(|c| c.to_vec())
        .collect();
    let rest = &words[cfg.topics * cfg.vocab_per_topic..];
    let generic = &rest[..cfg.generic_words];
    let sites = &rest[cfg.generic_words..];

    let families: Vec<Vec<Vec<String>>> = topic_words
        .iter()
        .map(|tw| {
            (0..cfg.families_per_topic)
                .map(|_| pick(tw, cfg.family_size, &mut rng).into_iter().map(str::to_string).collect())
                .collect()
        })
        .collect();

    let n_docs = cfg.doc_count();
    let n_two = (cfg.two_topic_fraction * n_docs as f64).round() as usize;
    let two_topic: BTreeSet<usize> = index::sample(&mut rng, n_docs, n_two).into_iter().collect();

    let mut docs = Vec::with_capacity(n_docs);
    let mut doc_topics = Vec::with_capacity(n_docs);
    let mut click_rows = Vec::new();
    for i in 0..n_docs {
        let primary = i / cfg.docs_per_topic;
        let mut topics = vec![primary];
        if two_topic.contains(&i) {
            topics.push((primary + rng.gen_range(1..cfg.topics)) % cfg.topics);
        }
        let intents: Vec<(usize, usize)> = topics
            .iter()
            .map(|&t| (t, rng.gen_range(0..cfg.families_per_topic)))
            .collect();
        let doc_id = format!("d{i:05}");
        let mut title: Vec<&str> = intents
            .iter()
            .map(|&(t, f)| families[t][f][rng.gen_range(0..cfg.family_size)].as_str())
            .collect();
        title.extend(pick(generic, 2, &mut rng));
        title.shuffle(&mut rng);
        let site = &sites[rng.gen_range(0..sites.len())];
        let url = format!("https://{site}.com/{}", generic[rng.gen_range(0..generic.len())]);
        let anchor = if rng.gen_bool(0.5) {
            let (t, f) = intents[rng.gen_range(0..intents.len())];
            families[t][f][rng.gen_range(0..cfg.family_size)].clone()
        } else {
            String::new()
        };
        for &(t, f) in &intents {
            for _ in 0..rng.gen_range(1..=cfg.max_clicks) {
                let query = if cfg.topics > 1 && rng.gen_bool(cfg.click_noise) {
                    let other = (t + rng.gen_range(1..cfg.topics)) % cfg.topics;
                    let fam = &families[other][rng.gen_range(0..cfg.families_per_topic)];
                    family_click(fam, cfg.click_words, &mut rng)
                } else {
                    family_click(&families[t][f], cfg.click_words, &mut rng)
                };
                click_rows.push((doc_id.clone(), query, rng.gen_range(1..=30)));
            }
        }
        docs.push(DocumentRecord::new(&doc_id, &title.join(" "), &url, &anchor));
        doc_topics.push(intents);
    }

    let mut queries = Vec::new();
    for (t, fams) in families.iter().enumerate() {
        let mut used = HashSet::new();
        let mut attempts = 0;
        while used.len() < cfg.queries_per_topic && attempts < 100 * cfg.queries_per_topic {
            attempts += 1;
            let fam = &fams[rng.gen_range(0..fams.len())];
            let n = rng.gen_range(2..=3);
            let q = pick(fam, n, &mut rng).join(" ");
            if used.insert(q.clone()) {
                queries.push((q, t));
            }
        }
    }

    let mut judgments = Vec::new();
    for (q, t) in &queries {
        for (doc, intents) in docs.iter().zip(&doc_topics) {
            if let Some(&(_, f)) = intents.iter().find(|(topic, _)| topic == t) {
                let fam = &families[*t][f];
                let overlap = q.split(' ').filter(|w| fam.iter().any(|x| x == w)).count();
                judgments.push(Judgment {
                    query_text: q.clone(),
                    doc_id: doc.doc_id.clone(),
                    rel: 1 + overlap.min(3) as u8,
                });
            }
        }
    }

    Ok(SynthData {
        docs,
        doc_topics,
        click_rows,
        queries,
        judgments,
        topic_words,
        families,
    })
}

impl SynthData {
    pub fn clicks_tsv(&self) -> String {
        let mut out = String::new();
        for (d, q, f) in &self.click_rows {
            writeln!(out, "{d}\t{q}\t{f}").expect("write");
        }
        out
    }

    pub fn click_log(&self) -> ClickLog {
        corpus::parse_clicks(&self.clicks_tsv()).expect("generated clicks are well formed")
    }

    /// Writes corpus.jsonl, clicks.tsv, queries.tsv and judgments.tsv.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        corpus::write_corpus(&self.docs, dir.join("corpus.jsonl"))?;
        let clicks = dir.join("clicks.tsv");
        fs::write(&clicks, self.clicks_tsv()).map_err(|e| Error::io(&clicks, e))?;
        let mut q = String::new();
        for (query, topic) in &self.queries {
            writeln!(q, "{query}\t{topic}").expect("write");
        }
        let queries = dir.join("queries.tsv");
        fs::write(&queries, q).map_err(|e| Error::io(&queries, e))?;
        corpus::write_judgments(&self.judgments, dir.join("judgments.tsv"))
    }
}
