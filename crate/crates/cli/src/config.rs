//! Run configuration: built-in defaults, then an optional `key=value` file,
//! then command-line flags.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context};
use sida_core::synth::BenchmarkCounts;
use sida_core::{EntropySource, LambdaPolicy, TrainConfig, WeightScope};

/// Seed of the frozen feature extractor shared by every command.
pub const DEFAULT_EXTRACTOR_SEED: u64 = 0x51DA;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub extractor_seed: u64,
    pub counts: BenchmarkCounts,
    pub train: TrainConfig,
    /// Sample count for `augment-dump`.
    pub dump_samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            extractor_seed: DEFAULT_EXTRACTOR_SEED,
            counts: BenchmarkCounts::default(),
            train: TrainConfig::default(),
            dump_samples: 8,
        }
    }
}

/// Every settable key, in the order used by [`RunConfig::to_text`].
pub const KEYS: &[&str] = &[
    "seed",
    "extractor-seed",
    "n-source",
    "n-val",
    "n-target-per-domain",
    "n-bank",
    "batch-size",
    "iters",
    "lr",
    "momentum",
    "weight-decay",
    "poly-power",
    "tau-ent",
    "noise-std",
    "patches",
    "lambda",
    "entropy-from",
    "weight-scope",
    "n",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> anyhow::Result<T> {
    value
        .parse()
        .map_err(|_| anyhow::anyhow!("invalid value {value:?} for {key}"))
}

fn parse_count(key: &str, value: &str) -> anyhow::Result<usize> {
    let n: usize = parse(key, value)?;
    if n == 0 {
        bail!("{key} must be >= 1");
    }
    Ok(n)
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> anyhow::Result<()> {
        let value = value.trim();
        let t = &mut self.train;
        match key.replace('_', "-").as_str() {
            "seed" => t.seed = parse(key, value)?,
            "extractor-seed" => self.extractor_seed = parse(key, value)?,
            "n-source" => self.counts.source_train = parse_count(key, value)?,
            "n-val" => self.counts.source_val = parse_count(key, value)?,
            "n-target-per-domain" => self.counts.target_per_domain = parse_count(key, value)?,
            "n-bank" => self.counts.bank_per_domain = parse_count(key, value)?,
            "batch-size" => t.batch_size = parse_count(key, value)?,
            "iters" => t.iters = parse_count(key, value)?,
            "lr" => t.base_lr = parse(key, value)?,
            "momentum" => t.momentum = parse(key, value)?,
            "weight-decay" => t.weight_decay = parse(key, value)?,
            "poly-power" => t.poly_power = parse(key, value)?,
            "tau-ent" => t.tau_ent = parse(key, value)?,
            "noise-std" => t.mix.noise_std = parse(key, value)?,
            "patches" => t.mix.patches = parse_count(key, value)?,
            "lambda" => {
                t.mix.lambda = match value {
                    "uniform" => LambdaPolicy::Uniform,
                    "main-only" => LambdaPolicy::MainOnly,
                    _ => bail!("lambda must be uniform|main-only, got {value:?}"),
                }
            }
            "entropy-from" => t.entropy_from = value.parse::<EntropySource>()?,
            "weight-scope" => t.weight_scope = value.parse::<WeightScope>()?,
            "n" => self.dump_samples = parse_count(key, value)?,
            other => bail!("unknown config key {other:?}"),
        }
        Ok(())
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> anyhow::Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .with_context(|| format!("line {}: expected key=value, got {line:?}", n + 1))?;
            self.set(k.trim(), v).with_context(|| format!("line {}", n + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> anyhow::Result<()> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        self.apply_text(&text)
            .with_context(|| format!("in config {}", path.display()))
    }

    pub fn get(&self, key: &str) -> String {
        let t = &self.train;
        match key {
            "seed" => t.seed.to_string(),
            "extractor-seed" => self.extractor_seed.to_string(),
            "n-source" => self.counts.source_train.to_string(),
            "n-val" => self.counts.source_val.to_string(),
            "n-target-per-domain" => self.counts.target_per_domain.to_string(),
            "n-bank" => self.counts.bank_per_domain.to_string(),
            "batch-size" => t.batch_size.to_string(),
            "iters" => t.iters.to_string(),
            "lr" => t.base_lr.to_string(),
            "momentum" => t.momentum.to_string(),
            "weight-decay" => t.weight_decay.to_string(),
            "poly-power" => t.poly_power.to_string(),
            "tau-ent" => t.tau_ent.to_string(),
            "noise-std" => t.mix.noise_std.to_string(),
            "patches" => t.mix.patches.to_string(),
            "lambda" => match t.mix.lambda {
                LambdaPolicy::Uniform => "uniform".into(),
                LambdaPolicy::MainOnly => "main-only".into(),
            },
            "entropy-from" => t.entropy_from.to_string(),
            "weight-scope" => t.weight_scope.to_string(),
            "n" => self.dump_samples.to_string(),
            _ => unreachable!("unknown key {key}"),
        }
    }

    /// Snapshot written as `config.txt`; parses back with [`apply_text`](Self::apply_text).
    pub fn to_text(&self, command: &str, extra: &[(&str, String)]) -> String {
        let mut s = format!("# sida {command}\n");
        for (k, v) in extra {
            writeln!(s, "# {k}={v}").expect("write to string");
        }
        for key in KEYS {
            writeln!(s, "{key}={}", self.get(key)).expect("write to string");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("# comment\niters = 50  # inline\n\nlambda=main-only\nweight_scope=item\ntau-ent=inf\n")
            .unwrap();
        assert_eq!(cfg.train.iters, 50);
        assert_eq!(cfg.train.mix.lambda, LambdaPolicy::MainOnly);
        assert_eq!(cfg.train.weight_scope, WeightScope::Item);
        assert!(cfg.train.tau_ent.is_infinite());
        let mut back = RunConfig::default();
        back.apply_text(&cfg.to_text("adapt", &[("target", "fog".into())])).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_bad_input() {
        let mut cfg = RunConfig::default();
        assert!(cfg.set("n-source", "0").is_err());
        assert!(cfg.set("iters", "x").is_err());
        assert!(cfg.set("bogus", "1").is_err());
        assert!(cfg.apply_text("iters\n").is_err());
        assert!(cfg.set("entropy-from", "past").is_err());
    }
}
