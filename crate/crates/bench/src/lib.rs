//! Shared fixtures for the criterion benches.

use sida_core::model::init_extractor;
use sida_core::style_bank::{build_entry, StyleBank};
use sida_core::synth::{gen_benchmark, BenchmarkCounts, Benchmark};
use sida_core::trainer::{prepare, TrainItem};
use sida_core::FrozenExtractor;

pub const EXTRACTOR_SEED: u64 = 0x51DA;

pub struct Fixture {
    pub benchmark: Benchmark,
    pub extractor: FrozenExtractor,
    pub source: Vec<TrainItem>,
    pub bank: StyleBank,
}

pub fn fixture(source_train: usize) -> Fixture {
    let benchmark = gen_benchmark(
        7,
        BenchmarkCounts {
            source_train,
            source_val: 1,
            target_per_domain: 1,
            bank_per_domain: 3,
        },
    )
    .expect("valid counts");
    let extractor = init_extractor(EXTRACTOR_SEED);
    let source = prepare(&extractor, &benchmark.source_train).expect("64x64 images");
    let mut entries = Vec::new();
    for (kind, samples) in &benchmark.bank {
        for (k, s) in samples.iter().enumerate() {
            let f = extractor.extract(&s.image).expect("64x64 images");
            entries.push(build_entry(kind.domain_id(), &f, k + 1));
        }
    }
    let bank = StyleBank::new(entries).expect("well-formed bank");
    Fixture {
        benchmark,
        extractor,
        source,
        bank,
    }
}
