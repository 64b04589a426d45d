//! Trains each ablation on synthetic data and prints NCG@10 per seed.
//! Usage: ablation <seeds> [config.toml]

use std::time::Instant;

use mira::config::RunConfig;
use mira::corpus::judgments_by_query;
use mira::encoder::ModelParams;
use mira::intent::GroupingConfig;
use mira::pipeline::{encode_corpus, evaluate, index_of, prepare, train_model, vocab_texts};
use mira::retrieval::{gen_synthetic, SynthConfig};
use mira::text::train_vocab;
use mira::train::{Ablation, TrainConfig};

fn main() -> mira::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seeds: u64 = args.get(1).map_or(1, |s| s.parse().unwrap());
    let cfg = match args.get(2) {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let variants = [
        ("mira", Ablation::Full, false),
        ("gat", Ablation::Gat, false),
        ("no-attention", Ablation::NoAttention, false),
        ("micg-base", Ablation::Base, false),
        ("traditional", Ablation::Full, true),
        ("base", Ablation::Base, true),
    ];
    let mut sums = vec![0.0; variants.len()];
    for seed in 0..seeds {
        let data = gen_synthetic(&SynthConfig { seed, ..cfg.synth.clone() })?;
        let clicks = data.click_log();
        let judgments = judgments_by_query(&data.judgments);
        let queries: Vec<String> = data.queries.iter().map(|q| q.0.clone()).collect();
        let vocab = train_vocab(vocab_texts(&data.docs, &clicks), cfg.model.vocab_size)?;
        let ideal: f64 = queries
            .iter()
            .map(|q| {
                let mut g: Vec<f64> = judgments[q].values().map(|&r| (1u32 << r) as f64 - 1.0).collect();
                g.sort_by(|a, b| b.total_cmp(a));
                g[..10.min(g.len())].iter().sum::<f64>() / g.iter().sum::<f64>()
            })
            .sum::<f64>()
            / queries.len() as f64;
        println!("seed {seed} ideal ncg@10 {ideal:.4}");
        for (v, (name, ablation, traditional)) in variants.iter().enumerate() {
            let t0 = Instant::now();
            let grouping = GroupingConfig {
                max_groups: if *traditional { 1 } else { cfg.grouping.max_groups },
                ..cfg.grouping
            };
            let prep = prepare(&data.docs, &clicks, vocab.clone(), &grouping, &cfg.graph)?;
            let mut mc = cfg.model;
            mc.vocab_size = prep.vocab.len();
            let init = ModelParams::init(mc, cfg.init_std, seed)?;
            let tc = TrainConfig { seed, ..cfg.train.clone() };
            let fit = train_model(&prep, cfg.graph, init, *ablation, &tc, None)?;
            let enc = encode_corpus(&prep, &data.docs, &fit.params, &cfg.graph, seed)?;
            let index = index_of(&enc)?;
            let ncg = evaluate(&index, &queries, &judgments, &prep.vocab, &fit.params, 10)?;
            sums[v] += ncg;
            let tr = &fit.loss_trace;
            let tail = &tr[tr.len().saturating_sub(10)..];
            println!(
                "seed {seed} {name:12} ncg@10 {ncg:.4} nodes {} edges {} steps {} loss {:.3}->{:.3} {:.1}s",
                prep.graph.node_count(),
                prep.graph.edge_count(),
                tr.len(),
                tr[0],
                tail.iter().sum::<f64>() / tail.len() as f64,
                t0.elapsed().as_secs_f64()
            );
        }
    }
    for (v, (name, _, _)) in variants.iter().enumerate() {
        println!("mean {name:12} {:.4}", sums[v] / seeds as f64);
    }
    Ok(())
}
