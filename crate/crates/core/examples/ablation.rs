//! Toy component ablation: source-only vs. single-style AdaIN fine-tuning vs.
//! the full configuration, per target domain, averaged over seeds.
//!
//! `cargo run --release -p sida-core --example ablation -- [iters] [seeds...]`

use std::time::Instant;

use sida_core::augment::MixParams;
use sida_core::metrics::miou;
use sida_core::model::init_extractor;
use sida_core::style_bank::{build_entry, StyleBank};
use sida_core::synth::{gen_benchmark, BenchmarkCounts, NUM_CLASSES};
use sida_core::trainer::{adapt, evaluate, prepare, pretrain_source, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let iters: usize = args.first().map_or(Ok(2000), |s| s.parse())?;
    let seeds: Vec<u64> = if args.len() > 1 {
        args[1..].iter().map(|s| s.parse()).collect::<Result<_, _>>()?
    } else {
        vec![0, 1, 2]
    };
    let extractor = init_extractor(0x51DA);
    let mut totals = [0f64; 3];
    for &seed in &seeds {
        let t0 = Instant::now();
        let bench = gen_benchmark(seed, BenchmarkCounts::default())?;
        let source = prepare(&extractor, &bench.source_train)?;
        let val = prepare(&extractor, &bench.source_val)?;
        let mut entries = Vec::new();
        for (kind, samples) in &bench.bank {
            for (k, s) in samples.iter().enumerate() {
                entries.push(build_entry(kind.domain_id(), &extractor.extract(&s.image)?, k + 1));
            }
        }
        let bank = StyleBank::new(entries)?;
        let cfg = TrainConfig { iters, seed, ..TrainConfig::default() };
        let pre = pretrain_source(&cfg, &source, NUM_CLASSES)?;
        let val_miou = miou(&evaluate(&pre.params, &val)?)?.1;
        println!("seed {seed}: source val mIoU {val_miou:.4}");
        let degenerate_cfg = TrainConfig {
            mix: MixParams::single_style(),
            tau_ent: f64::INFINITY,
            ..cfg.clone()
        };
        let mut sums = [0f64; 3];
        for (kind, tests) in &bench.targets {
            let test = prepare(&extractor, tests)?;
            let d = kind.domain_id();
            let full = adapt(&cfg, &source, &bank, &d, &pre.params)?;
            let single = adapt(&degenerate_cfg, &source, &bank, &d, &pre.params)?;
            let scores = [
                miou(&evaluate(&pre.params, &test)?)?.1,
                miou(&evaluate(&single.params, &test)?)?.1,
                miou(&evaluate(&full.params, &test)?)?.1,
            ];
            println!(
                "  {kind:<6} source-only {:.4}  single-style {:.4}  full {:.4}",
                scores[0], scores[1], scores[2]
            );
            for (s, v) in sums.iter_mut().zip(scores) {
                *s += v / bench.targets.len() as f64;
            }
        }
        println!(
            "  mean   source-only {:.4}  single-style {:.4}  full {:.4}  ({:.1}s)",
            sums[0], sums[1], sums[2], t0.elapsed().as_secs_f64()
        );
        for (t, s) in totals.iter_mut().zip(sums) {
            *t += s / seeds.len() as f64;
        }
    }
    println!(
        "overall source-only {:.4}  single-style {:.4}  full {:.4}",
        totals[0], totals[1], totals[2]
    );
    Ok(())
}
