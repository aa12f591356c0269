use sida_core::model::init_extractor;
use sida_core::style_bank::build_entry;
use sida_core::synth::{gen_benchmark, BenchmarkCounts, DomainKind, NUM_CLASSES};
use sida_core::trainer::{adapt, evaluate, loss_weight, prepare, pretrain_source};
use sida_core::{EntropySource, StyleBank, TrainConfig, WeightScope};

fn small_counts() -> BenchmarkCounts {
    BenchmarkCounts {
        source_train: 16,
        source_val: 4,
        target_per_domain: 4,
        bank_per_domain: 3,
    }
}

#[test]
fn extractor_stays_frozen_through_training() {
    let extractor = init_extractor(17);
    let before = extractor.weights();
    let bench = gen_benchmark(3, small_counts()).unwrap();
    let source = prepare(&extractor, &bench.source_train).unwrap();
    let mut entries = Vec::new();
    for (kind, samples) in &bench.bank {
        for (k, s) in samples.iter().enumerate() {
            entries.push(build_entry(kind.domain_id(), &extractor.extract(&s.image).unwrap(), k + 1));
        }
    }
    let bank = StyleBank::new(entries).unwrap();
    let bank_bytes = bank.to_bytes();
    let cfg = TrainConfig {
        iters: 30,
        ..TrainConfig::default()
    };
    let pre = pretrain_source(&cfg, &source, NUM_CLASSES).unwrap();
    adapt(&cfg, &source, &bank, &DomainKind::Rain.domain_id(), &pre.params).unwrap();

    let after = extractor.weights();
    assert_eq!(before.len(), after.len());
    assert!(before.iter().zip(&after).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert_eq!(init_extractor(17).weights(), before);
    assert_eq!(bank.to_bytes(), bank_bytes);
    // re-extracting gives the same features used for training
    assert_eq!(prepare(&extractor, &bench.source_train).unwrap(), source);
}

#[test]
fn logged_weights_follow_the_threshold_rule() {
    let extractor = init_extractor(5);
    let bench = gen_benchmark(8, small_counts()).unwrap();
    let source = prepare(&extractor, &bench.source_train).unwrap();
    let mut entries = Vec::new();
    for (kind, samples) in &bench.bank {
        for (k, s) in samples.iter().enumerate() {
            entries.push(build_entry(kind.domain_id(), &extractor.extract(&s.image).unwrap(), k + 1));
        }
    }
    let bank = StyleBank::new(entries).unwrap();
    let base = TrainConfig {
        iters: 40,
        ..TrainConfig::default()
    };
    let pre = pretrain_source(&base, &source, NUM_CLASSES).unwrap();
    assert!(pre.log.iter().all(|r| r.w == 1.0));
    let first: f64 = pre.log[..5].iter().map(|r| r.loss).sum();
    let last: f64 = pre.log[35..].iter().map(|r| r.loss).sum();
    assert!(last < first, "pretraining loss {first} -> {last}");

    let target = DomainKind::Fog.domain_id();
    for tau in [0.0, 0.3, 1.0] {
        let cfg = TrainConfig { tau_ent: tau, ..base.clone() };
        let out = adapt(&cfg, &source, &bank, &target, &pre.params).unwrap();
        for r in &out.log {
            assert_eq!(r.w, loss_weight(r.w_ent, tau), "iter {}", r.iter);
            assert!(r.w_ent >= 0.0 && r.w_ent <= (NUM_CLASSES as f64).ln() + 1e-9);
        }
    }

    // per-item weights average to at least 1 and never exceed 1 + ln K
    let cfg = TrainConfig {
        tau_ent: 0.2,
        weight_scope: WeightScope::Item,
        entropy_from: EntropySource::Frozen,
        ..base.clone()
    };
    let out = adapt(&cfg, &source, &bank, &target, &pre.params).unwrap();
    assert!(out
        .log
        .iter()
        .all(|r| r.w >= 1.0 && r.w <= 1.0 + (NUM_CLASSES as f64).ln()));

    let cm = evaluate(&out.params, &prepare(&extractor, &bench.targets[0].1).unwrap()).unwrap();
    assert_eq!(cm.total(), 4 * 32 * 32);
}
