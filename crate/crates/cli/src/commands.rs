use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use sida_core::augment::patch_style_transfer;
use sida_core::dataset::{self, list_domains, read_split, write_benchmark};
use sida_core::metrics::{miou, report_csv};
use sida_core::model::{init_extractor, Checkpoint, FrozenExtractor};
use sida_core::style_bank::{auxiliary_table, build_entry};
use sida_core::synth::{gen_benchmark, NUM_CLASSES};
use sida_core::tensor::channel_stats;
use sida_core::trainer::{adapt, evaluate, log_csv, prepare, pretrain_source, TrainItem};
use sida_core::{DomainId, RandomSource, SidaError, StyleBank, StyleStats};

use crate::{Cli, Command, RunConfig};

pub const BANK_FILE: &str = "bank.sidb";
pub const CHECKPOINT_FILE: &str = "classifier.sidc";
pub const CONFIG_FILE: &str = "config.txt";
pub const LOSS_FILE: &str = "loss.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const AUGMENT_FILE: &str = "augment.csv";

/// Top-level entries written by `gen-data`, removed again under `--force`.
const BENCHMARK_ENTRIES: &[&str] = &["source", "target", "bank", CONFIG_FILE];

const DUMP_STREAM_BASE: u64 = 2 << 40;

pub fn execute(cli: &Cli) -> anyhow::Result<()> {
    let cfg = cli.overrides.resolve()?;
    match &cli.command {
        Command::GenData { out, force } => gen_data(&cfg, out, *force),
        Command::Pretrain { data, out } => pretrain(&cfg, data, out),
        Command::BuildBank { data, out } => build_bank(&cfg, data, out),
        Command::Adapt {
            data,
            bank,
            pretrained,
            target,
            out,
        } => adapt_cmd(&cfg, data, bank, pretrained, target, out),
        Command::Eval {
            data,
            checkpoint,
            domain,
            report,
        } => eval(&cfg, data, checkpoint, domain, report),
        Command::AugmentDump {
            data,
            bank,
            target,
            out,
        } => augment_dump(&cfg, data, bank, target, out),
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn prepare_out(out: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

/// `path` itself, or `path/name` when `path` is a directory.
fn input_file(path: &Path, name: &str) -> PathBuf {
    if path.is_dir() {
        path.join(name)
    } else {
        path.to_path_buf()
    }
}

fn load_bank(path: &Path) -> anyhow::Result<StyleBank> {
    let file = input_file(path, BANK_FILE);
    StyleBank::load(&file).with_context(|| format!("loading bank {}", file.display()))
}

fn load_checkpoint(path: &Path) -> anyhow::Result<Checkpoint> {
    let file = input_file(path, CHECKPOINT_FILE);
    Checkpoint::load(&file).with_context(|| format!("loading checkpoint {}", file.display()))
}

fn load_items(extractor: &FrozenExtractor, dir: &Path) -> anyhow::Result<Vec<TrainItem>> {
    let samples = read_split(dir).with_context(|| format!("reading split {}", dir.display()))?;
    if samples.is_empty() {
        return Err(SidaError::EmptyDataset(dir.display().to_string()).into());
    }
    Ok(prepare(extractor, &samples)?)
}

fn gen_data(cfg: &RunConfig, out: &Path, force: bool) -> anyhow::Result<()> {
    if out.exists() {
        let non_empty = fs::read_dir(out)
            .with_context(|| format!("{} is not a directory", out.display()))?
            .next()
            .is_some();
        if non_empty && !force {
            bail!("{} exists and is not empty (pass --force to replace it)", out.display());
        }
        for name in BENCHMARK_ENTRIES {
            let p = out.join(name);
            if p.is_dir() {
                fs::remove_dir_all(&p)?;
            } else if p.exists() {
                fs::remove_file(&p)?;
            }
        }
    }
    let bench = gen_benchmark(cfg.train.seed, cfg.counts)?;
    write_benchmark(out, &bench)?;
    write(&out.join(CONFIG_FILE), cfg.to_text("gen-data", &[]))?;
    eprintln!(
        "wrote {} source, {} val, {} domains x {} target / {} bank images to {}",
        bench.source_train.len(),
        bench.source_val.len(),
        bench.targets.len(),
        cfg.counts.target_per_domain,
        cfg.counts.bank_per_domain,
        out.display()
    );
    Ok(())
}

fn pretrain(cfg: &RunConfig, data: &Path, out: &Path) -> anyhow::Result<()> {
    let extractor = init_extractor(cfg.extractor_seed);
    let source = load_items(&extractor, &dataset::source_dir(data, "train"))?;
    let start = Instant::now();
    let outcome = pretrain_source(&cfg.train, &source, NUM_CLASSES)?;
    let elapsed = start.elapsed();
    prepare_out(out)?;
    let ckpt = Checkpoint {
        params: outcome.params,
        iteration: cfg.train.iters as u64,
    };
    ckpt.save(out.join(CHECKPOINT_FILE))?;
    write(&out.join(LOSS_FILE), log_csv(&outcome.log))?;
    write(&out.join(CONFIG_FILE), cfg.to_text("pretrain", &[]))?;
    eprintln!("pretrain: {} iterations in {:.2}s", cfg.train.iters, elapsed.as_secs_f64());
    Ok(())
}

fn build_bank(cfg: &RunConfig, data: &Path, out: &Path) -> anyhow::Result<()> {
    let extractor = init_extractor(cfg.extractor_seed);
    let domains = list_domains(data, "bank")
        .with_context(|| format!("listing bank domains under {}", data.display()))?;
    let mut entries = Vec::new();
    for name in &domains {
        let dir = dataset::bank_dir(data, name);
        let samples = read_split(&dir).with_context(|| format!("reading split {}", dir.display()))?;
        let id = DomainId::new(name.as_str())?;
        for (k, s) in samples.iter().enumerate() {
            entries.push(build_entry(id.clone(), &extractor.extract(&s.image)?, k + 1));
        }
    }
    let bank = StyleBank::new(entries)?;
    prepare_out(out)?;
    bank.save(out.join(BANK_FILE))?;
    write(&out.join(CONFIG_FILE), cfg.to_text("build-bank", &[]))?;
    eprintln!(
        "bank: {} domains x {} entries, {} channels",
        bank.domains().len(),
        bank.entries_per_domain(),
        bank.channels()
    );
    Ok(())
}

fn adapt_cmd(
    cfg: &RunConfig,
    data: &Path,
    bank: &Path,
    pretrained: &Path,
    target: &str,
    out: &Path,
) -> anyhow::Result<()> {
    let bank = load_bank(bank)?;
    let target = DomainId::new(target)?;
    if !bank.contains(&target) {
        return Err(SidaError::MissingDomain(target.to_string()).into());
    }
    let pre = load_checkpoint(pretrained)?;
    let extractor = init_extractor(cfg.extractor_seed);
    let source = load_items(&extractor, &dataset::source_dir(data, "train"))?;
    let start = Instant::now();
    let outcome = adapt(&cfg.train, &source, &bank, &target, &pre.params)?;
    let elapsed = start.elapsed();
    prepare_out(out)?;
    let ckpt = Checkpoint {
        params: outcome.params,
        iteration: pre.iteration + cfg.train.iters as u64,
    };
    ckpt.save(out.join(CHECKPOINT_FILE))?;
    write(&out.join(METRICS_FILE), log_csv(&outcome.log))?;
    write(
        &out.join(CONFIG_FILE),
        cfg.to_text("adapt", &[("target", target.to_string())]),
    )?;
    eprintln!(
        "adapt {target}: {} iterations in {:.2}s",
        cfg.train.iters,
        elapsed.as_secs_f64()
    );
    Ok(())
}

fn eval(
    cfg: &RunConfig,
    data: &Path,
    checkpoint: &Path,
    domains: &[String],
    report: &Path,
) -> anyhow::Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let mut names = Vec::new();
    for d in domains {
        if d == "all" {
            names.push("source".to_string());
            names.extend(list_domains(data, "target")?);
        } else if !names.contains(d) {
            names.push(d.clone());
        }
    }
    let extractor = init_extractor(cfg.extractor_seed);
    let mut rows = Vec::new();
    for name in &names {
        let dir = if name == "source" {
            dataset::source_dir(data, "val")
        } else {
            let dir = dataset::target_dir(data, name);
            if !dir.is_dir() {
                bail!("no target split for domain {name:?} under {}", data.display());
            }
            dir
        };
        let items = load_items(&extractor, &dir)?;
        let (per_class, mean) = miou(&evaluate(&ckpt.params, &items)?)?;
        rows.push((name.clone(), per_class, mean));
    }
    let csv = report_csv(&rows);
    prepare_out(report)?;
    write(&report.join(REPORT_FILE), &csv)?;
    write(
        &report.join(CONFIG_FILE),
        cfg.to_text("eval", &[("domain", names.join(","))]),
    )?;
    print!("{csv}");
    Ok(())
}

fn stats_row(out: &mut String, tag: &str, s: &StyleStats) {
    out.push_str(tag);
    for v in s.mu.iter().chain(&s.sigma) {
        write!(out, ",{v:.6}").expect("write to string");
    }
    out.push('\n');
}

fn augment_dump(
    cfg: &RunConfig,
    data: &Path,
    bank: &Path,
    target: &str,
    out: &Path,
) -> anyhow::Result<()> {
    let bank = load_bank(bank)?;
    let target = DomainId::new(target)?;
    let pairs = auxiliary_table(&bank, &target)?;
    let extractor = init_extractor(cfg.extractor_seed);
    let source = load_items(&extractor, &dataset::source_dir(data, "train"))?;
    let n = cfg.dump_samples;
    let c = bank.channels();

    let mut csv = String::from("tag");
    for prefix in ["mu", "sigma"] {
        for k in 0..c {
            write!(csv, ",{prefix}_{k}").expect("write to string");
        }
    }
    csv.push('\n');
    for item in source.iter().cycle().take(n) {
        stats_row(&mut csv, "source", &channel_stats(&item.feature));
    }
    for e in bank.entries() {
        stats_row(&mut csv, &format!("bank:{}", e.domain), &e.stats);
    }
    let mut rng = RandomSource::stream(cfg.train.seed, 1);
    for i in 0..n {
        let item = &source[rng.index(source.len())];
        let (main, aux) = pairs[rng.index(pairs.len())];
        let mut aug = RandomSource::stream(cfg.train.seed, DUMP_STREAM_BASE + i as u64);
        let styled = patch_style_transfer(&item.feature, main, aux, &cfg.train.mix, &mut aug)?;
        stats_row(&mut csv, "stylized", &channel_stats(&styled.feature));
    }
    prepare_out(out)?;
    write(&out.join(AUGMENT_FILE), csv)?;
    write(
        &out.join(CONFIG_FILE),
        cfg.to_text("augment-dump", &[("target", target.to_string())]),
    )?;
    Ok(())
}
