//! Entropy-weighted cross entropy, SGD with momentum and a polynomial schedule,
//! source pretraining, and the adaptation loop on stylized features.
//!
//! Only the linear head is trained. Source features are extracted once up
//! front ([`prepare`]); the extractor is frozen so this is the same as
//! extracting inside the loop.
//!
//! Randomness: batch indices and main-entry picks come from stream 1 of the
//! run seed; the stylization of item `b` at iteration `t` uses its own stream
//! derived from `(t, b)`.

use std::fmt;
use std::str::FromStr;

use crate::augment::{patch_style_transfer, MixParams};
use crate::error::{Result, SidaError};
use crate::metrics::ConfusionMatrix;
use crate::model::{classify, ClassGrid, ClassifierParams, FrozenExtractor, LogitsMap, ProbMap};
use crate::style_bank::{auxiliary_table, DomainId, StyleBank};
use crate::synth::{downsample_labels, ToySample};
use crate::tensor::{FeatureMap, RandomSource};
use crate::IGNORE_LABEL;

const LOOP_STREAM: u64 = 1;
const AUGMENT_STREAM_BASE: u64 = 1 << 40;

/// Which classifier produces the probabilities behind the entropy weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntropySource {
    /// The classifier being fine-tuned.
    Current,
    /// A frozen copy of the pretrained classifier.
    Frozen,
}

/// Whether one weight is shared by the batch or computed per item.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightScope {
    Batch,
    Item,
}

impl fmt::Display for EntropySource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntropySource::Current => "current",
            EntropySource::Frozen => "frozen",
        })
    }
}

impl FromStr for EntropySource {
    type Err = SidaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "current" => Ok(EntropySource::Current),
            "frozen" => Ok(EntropySource::Frozen),
            _ => Err(SidaError::Config(format!("entropy source must be current|frozen, got {s:?}"))),
        }
    }
}

impl fmt::Display for WeightScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightScope::Batch => "batch",
            WeightScope::Item => "item",
        })
    }
}

impl FromStr for WeightScope {
    type Err = SidaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "batch" => Ok(WeightScope::Batch),
            "item" => Ok(WeightScope::Item),
            _ => Err(SidaError::Config(format!("weight scope must be batch|item, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iters: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub poly_power: f64,
    /// Entropy threshold; `f64::INFINITY` disables weighting.
    pub tau_ent: f64,
    pub mix: MixParams,
    pub seed: u64,
    pub entropy_from: EntropySource,
    pub weight_scope: WeightScope,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            iters: 2000,
            base_lr: 0.01,
            momentum: 0.9,
            weight_decay: 1e-3,
            poly_power: 0.9,
            tau_ent: 1.0,
            mix: MixParams::default(),
            seed: 0,
            entropy_from: EntropySource::Current,
            weight_scope: WeightScope::Batch,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(SidaError::Config(what.to_string()));
        if self.batch_size == 0 {
            return bad("batch size must be >= 1");
        }
        if self.iters == 0 {
            return bad("iteration count must be >= 1");
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad("base learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0) || !(self.poly_power >= 0.0) {
            return bad("weight decay and poly power must be >= 0");
        }
        if !(self.tau_ent >= 0.0) {
            return bad("entropy threshold must be >= 0");
        }
        self.mix.validate()
    }
}

/// Momentum buffers shaped like [`ClassifierParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl OptimizerState {
    pub fn zeros_like(p: &ClassifierParams) -> Self {
        Self {
            weight: vec![0.0; p.weight.len()],
            bias: vec![0.0; p.bias.len()],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

/// Spatial mean of per-pixel entropy (natural log, `0 ln 0 = 0`).
pub fn mean_entropy(p: &ProbMap) -> f64 {
    let total: f64 = p
        .data
        .chunks_exact(p.classes)
        .map(|row| {
            row.iter()
                .filter(|&&v| v > 0.0)
                .map(|&v| -(v as f64) * (v as f64).ln())
                .sum::<f64>()
        })
        .sum();
    total / p.pixels() as f64
}

/// Same value as `mean_entropy(&softmax_probs(l))`, computed from the logits
/// as `ln Z - sum_c p_c (l_c - max)` with one logarithm per pixel.
pub fn logit_entropy(l: &LogitsMap) -> f64 {
    let mut e = vec![0f64; l.classes];
    let mut total = 0.0;
    for row in l.data.chunks_exact(l.classes) {
        let max = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
        let mut z = 0.0;
        for (ev, &v) in e.iter_mut().zip(row) {
            *ev = (v as f64 - max).exp();
            z += *ev;
        }
        let dot: f64 = e.iter().zip(row).map(|(&ev, &v)| ev * (v as f64 - max)).sum();
        total += z.ln() - dot / z;
    }
    total / l.pixels() as f64
}

/// `1 + w_ent` once `w_ent` reaches `tau` (inclusive), else 1.
pub fn loss_weight(w_ent: f64, tau: f64) -> f64 {
    if w_ent >= tau {
        1.0 + w_ent
    } else {
        1.0
    }
}

/// Adds `scale * CE` for every labeled pixel of one map into `loss` and writes
/// `scale * (softmax - onehot)` into `grad`. Returns the number of labeled pixels.
fn accumulate_ce(logits: &LogitsMap, labels: &[u8], scale: f64, loss: &mut f64, grad: &mut [f32]) -> Result<usize> {
    let k = logits.classes;
    let mut count = 0;
    let mut e = vec![0f64; k];
    for (p, (row, g)) in logits.data.chunks_exact(k).zip(grad.chunks_exact_mut(k)).enumerate() {
        let label = labels[p];
        if label == IGNORE_LABEL {
            g.iter_mut().for_each(|v| *v = 0.0);
            continue;
        }
        let label = label as usize;
        if label >= k {
            return Err(SidaError::Config(format!("label {label} out of range for {k} classes")));
        }
        let max = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
        for (ev, &v) in e.iter_mut().zip(row) {
            *ev = (v as f64 - max).exp();
        }
        let z: f64 = e.iter().sum();
        *loss += scale * (max + z.ln() - row[label] as f64);
        for (c, (gv, &ev)) in g.iter_mut().zip(e.iter()).enumerate() {
            let onehot = if c == label { 1.0 } else { 0.0 };
            *gv = (scale * (ev / z - onehot)) as f32;
        }
        count += 1;
    }
    Ok(count)
}

/// `W` times the mean cross entropy over labeled pixels, and its gradient with
/// respect to the logits. `W` is a constant.
pub fn weighted_ce(logits: &LogitsMap, labels: &[u8], w: f64) -> Result<(f64, LogitsMap)> {
    let (loss, mut grads) = weighted_ce_batch(&[(logits, labels, w)])?;
    Ok((loss, grads.pop().expect("one item")))
}

/// Batch form: `sum_i W_i * sum_p CE_ip / N` with `N` the labeled pixel count
/// of the whole batch.
pub fn weighted_ce_batch(items: &[(&LogitsMap, &[u8], f64)]) -> Result<(f64, Vec<LogitsMap>)> {
    let mut total = 0usize;
    for (logits, labels, _) in items {
        if labels.len() != logits.pixels() {
            return Err(SidaError::dim("label grid", logits.pixels(), labels.len()));
        }
        total += labels.iter().filter(|&&l| l != IGNORE_LABEL).count();
    }
    if total == 0 {
        return Err(SidaError::DegenerateBatch);
    }
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(items.len());
    for (logits, labels, w) in items {
        let mut g = ClassGrid::zeros(logits.h, logits.w, logits.classes);
        accumulate_ce(logits, labels, w / total as f64, &mut loss, &mut g.data)?;
        grads.push(g);
    }
    Ok((loss, grads))
}

/// Backward pass of [`classify`].
pub fn classifier_gradients(f: &FeatureMap, dlogits: &LogitsMap) -> Result<Gradients> {
    let (c, k) = (f.channels(), dlogits.classes);
    let mut g = Gradients {
        weight: vec![0.0; k * c],
        bias: vec![0.0; k],
    };
    accumulate_classifier_gradients(f, dlogits, &mut g)?;
    Ok(g)
}

fn accumulate_classifier_gradients(f: &FeatureMap, dlogits: &LogitsMap, g: &mut Gradients) -> Result<()> {
    if f.pixels() != dlogits.pixels() {
        return Err(SidaError::dim("logit gradient pixels", f.pixels(), dlogits.pixels()));
    }
    let (c, k) = (f.channels(), dlogits.classes);
    if g.weight.len() != k * c {
        return Err(SidaError::dim("weight gradient", k * c, g.weight.len()));
    }
    let mut dw = vec![0f64; k * c];
    let mut db = vec![0f64; k];
    for (px, d) in f.data().chunks_exact(c).zip(dlogits.data.chunks_exact(k)) {
        for (cls, &dv) in d.iter().enumerate() {
            if dv == 0.0 {
                continue;
            }
            let dv = dv as f64;
            db[cls] += dv;
            for (acc, &x) in dw[cls * c..(cls + 1) * c].iter_mut().zip(px) {
                *acc += dv * x as f64;
            }
        }
    }
    for (a, b) in g.weight.iter_mut().zip(&dw) {
        *a += *b as f32;
    }
    for (a, b) in g.bias.iter_mut().zip(&db) {
        *a += *b as f32;
    }
    Ok(())
}

/// `g' = g + wd p; v = momentum v + g'; p -= lr v`.
pub fn sgd_step(
    p: &mut ClassifierParams,
    g: &Gradients,
    st: &mut OptimizerState,
    lr: f64,
    momentum: f64,
    wd: f64,
) -> Result<()> {
    if g.weight.len() != p.weight.len() || g.bias.len() != p.bias.len() {
        return Err(SidaError::dim("gradient size", p.weight.len() + p.bias.len(), g.weight.len() + g.bias.len()));
    }
    let update = |params: &mut [f32], grads: &[f32], vel: &mut [f32]| {
        for ((w, &gv), v) in params.iter_mut().zip(grads).zip(vel.iter_mut()) {
            let gd = gv as f64 + wd * *w as f64;
            let nv = momentum * *v as f64 + gd;
            *v = nv as f32;
            *w = (*w as f64 - lr * nv) as f32;
        }
    };
    update(&mut p.weight, &g.weight, &mut st.weight);
    update(&mut p.bias, &g.bias, &mut st.bias);
    Ok(())
}

/// `base * (1 - it / total)^power`.
pub fn poly_lr(it: usize, total: usize, base: f64, power: f64) -> f64 {
    let frac = 1.0 - (it.min(total) as f64 / total as f64);
    base * frac.powf(power)
}

/// A source feature with labels pooled to feature resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub feature: FeatureMap,
    pub labels: Vec<u8>,
}

pub fn prepare(extractor: &FrozenExtractor, samples: &[ToySample]) -> Result<Vec<TrainItem>> {
    samples
        .iter()
        .map(|s| {
            let feature = extractor.extract(&s.image)?;
            let factor = s.labels.h / feature.height();
            let labels = downsample_labels(&s.labels, factor)?;
            Ok(TrainItem { feature, labels: labels.data })
        })
        .collect()
}

/// One row of the per-iteration training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterLog {
    pub iter: usize,
    pub lr: f64,
    pub w_ent: f64,
    pub w: f64,
    pub loss: f64,
}

pub fn log_csv(log: &[IterLog]) -> String {
    use std::fmt::Write as _;
    let mut s = String::from("iter,lr,W_ent,W,loss\n");
    for r in log {
        writeln!(s, "{},{:.8},{:.6},{:.6},{:.6}", r.iter, r.lr, r.w_ent, r.w, r.loss).expect("write to string");
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ClassifierParams,
    pub log: Vec<IterLog>,
}

struct Step<'a> {
    feature: &'a FeatureMap,
    labels: &'a [u8],
    weight: f64,
}

/// Forward, weighted loss, backward and one SGD update over a batch.
fn apply_step(
    params: &mut ClassifierParams,
    state: &mut OptimizerState,
    batch: &[Step<'_>],
    logits: &[LogitsMap],
    lr: f64,
    cfg: &TrainConfig,
) -> Result<f64> {
    let items: Vec<(&LogitsMap, &[u8], f64)> = batch
        .iter()
        .zip(logits)
        .map(|(s, l)| (l, s.labels, s.weight))
        .collect();
    let (loss, dlogits) = weighted_ce_batch(&items)?;
    let mut g = Gradients {
        weight: vec![0.0; params.weight.len()],
        bias: vec![0.0; params.bias.len()],
    };
    for (s, d) in batch.iter().zip(&dlogits) {
        accumulate_classifier_gradients(s.feature, d, &mut g)?;
    }
    sgd_step(params, &g, state, lr, cfg.momentum, cfg.weight_decay)?;
    if !loss.is_finite() || !params.is_finite() {
        return Err(SidaError::NonFinite("training step"));
    }
    Ok(loss)
}

/// Plain cross-entropy training of a zero-initialized head on clean source features.
pub fn pretrain_source(cfg: &TrainConfig, data: &[TrainItem], classes: usize) -> Result<TrainOutcome> {
    cfg.validate()?;
    let first = data
        .first()
        .ok_or_else(|| SidaError::EmptyDataset("source training set".into()))?;
    let mut params = ClassifierParams::zeros(classes, first.feature.channels());
    let mut state = OptimizerState::zeros_like(&params);
    let mut rng = RandomSource::stream(cfg.seed, LOOP_STREAM);
    let mut log = Vec::with_capacity(cfg.iters);
    for it in 0..cfg.iters {
        let lr = poly_lr(it, cfg.iters, cfg.base_lr, cfg.poly_power);
        let batch: Vec<Step<'_>> = (0..cfg.batch_size)
            .map(|_| {
                let item = &data[rng.index(data.len())];
                Step {
                    feature: &item.feature,
                    labels: &item.labels,
                    weight: 1.0,
                }
            })
            .collect();
        let logits = batch
            .iter()
            .map(|s| classify(s.feature, &params))
            .collect::<Result<Vec<_>>>()?;
        let w_ent = batch_entropy(&logits);
        let loss = apply_step(&mut params, &mut state, &batch, &logits, lr, cfg)?;
        log.push(IterLog { iter: it, lr, w_ent, w: 1.0, loss });
    }
    Ok(TrainOutcome { params, log })
}

fn batch_entropy(logits: &[LogitsMap]) -> f64 {
    logits.iter().map(logit_entropy).sum::<f64>() / logits.len() as f64
}

/// Fine-tunes `pretrained` on source features stylized toward `target`.
pub fn adapt(
    cfg: &TrainConfig,
    source: &[TrainItem],
    bank: &StyleBank,
    target: &DomainId,
    pretrained: &ClassifierParams,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if source.is_empty() {
        return Err(SidaError::EmptyDataset("source training set".into()));
    }
    if !bank.contains(target) {
        return Err(SidaError::MissingDomain(target.to_string()));
    }
    if bank.channels() != pretrained.channels {
        return Err(SidaError::dim("bank channels", pretrained.channels, bank.channels()));
    }
    // auxiliary picks are fixed per main entry for the whole run
    let pairs = auxiliary_table(bank, target)?;

    let mut params = pretrained.clone();
    let mut state = OptimizerState::zeros_like(&params);
    let mut rng = RandomSource::stream(cfg.seed, LOOP_STREAM);
    let b = cfg.batch_size;
    let mut log = Vec::with_capacity(cfg.iters);
    for it in 0..cfg.iters {
        let lr = poly_lr(it, cfg.iters, cfg.base_lr, cfg.poly_power);
        let mut styled = Vec::with_capacity(b);
        let mut labels = Vec::with_capacity(b);
        for slot in 0..b {
            let item = &source[rng.index(source.len())];
            let (main, aux) = pairs[rng.index(pairs.len())];
            let mut aug = RandomSource::stream(cfg.seed, AUGMENT_STREAM_BASE + (it * b + slot) as u64);
            styled.push(patch_style_transfer(&item.feature, main, aux, &cfg.mix, &mut aug)?.feature);
            labels.push(item.labels.as_slice());
        }
        let logits = styled
            .iter()
            .map(|f| classify(f, &params))
            .collect::<Result<Vec<_>>>()?;
        let entropies: Vec<f64> = match cfg.entropy_from {
            EntropySource::Current => logits.iter().map(logit_entropy).collect(),
            EntropySource::Frozen => styled
                .iter()
                .map(|f| Ok(logit_entropy(&classify(f, pretrained)?)))
                .collect::<Result<_>>()?,
        };
        let w_ent = entropies.iter().sum::<f64>() / b as f64;
        let weights: Vec<f64> = match cfg.weight_scope {
            WeightScope::Batch => vec![loss_weight(w_ent, cfg.tau_ent); b],
            WeightScope::Item => entropies.iter().map(|&e| loss_weight(e, cfg.tau_ent)).collect(),
        };
        let batch: Vec<Step<'_>> = styled
            .iter()
            .zip(&labels)
            .zip(&weights)
            .map(|((f, l), &w)| Step { feature: f, labels: l, weight: w })
            .collect();
        let loss = apply_step(&mut params, &mut state, &batch, &logits, lr, cfg)?;
        let w = match cfg.weight_scope {
            WeightScope::Batch => weights[0],
            WeightScope::Item => weights.iter().sum::<f64>() / b as f64,
        };
        log.push(IterLog { iter: it, lr, w_ent, w, loss });
    }
    Ok(TrainOutcome { params, log })
}

/// Confusion matrix of the head's arg-max predictions over `items`.
pub fn evaluate(params: &ClassifierParams, items: &[TrainItem]) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(params.classes);
    for item in items {
        let pred = classify(&item.feature, params)?.argmax();
        cm.accumulate(&pred, &item.labels)?;
    }
    Ok(cm)
}
