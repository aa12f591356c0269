//! Dense feature maps, per-channel style statistics, AdaIN and seeded sampling.
//!
//! Feature data is stored as `f32` in row-major `(i, j, k)` order; every
//! reduction accumulates in `f64`.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SidaError};

/// Lower bound applied to every channel standard deviation.
pub const SIGMA_FLOOR: f32 = 1e-6;

/// An `h x w x c` activation grid, index `(i * w + j) * c + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    h: usize,
    w: usize,
    c: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(h: usize, w: usize, c: usize, data: Vec<f32>) -> Result<Self> {
        if h == 0 || w == 0 || c == 0 {
            return Err(SidaError::Config(format!(
                "feature map dims must be positive, got {h}x{w}x{c}"
            )));
        }
        if data.len() != h * w * c {
            return Err(SidaError::dim("feature map data", h * w * c, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(SidaError::NonFinite("feature map construction"));
        }
        Ok(Self { h, w, c, data })
    }

    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        assert!(h > 0 && w > 0 && c > 0, "feature map dims must be positive");
        Self {
            h,
            w,
            c,
            data: vec![0.0; h * w * c],
        }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn pixels(&self) -> usize {
        self.h * self.w
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.data[(i * self.w + j) * self.c + k]
    }

    #[inline]
    pub fn pixel(&self, i: usize, j: usize) -> &[f32] {
        let base = (i * self.w + j) * self.c;
        &self.data[base..base + self.c]
    }

    /// Copies out the rectangular region `rows x cols`.
    pub fn crop(&self, rows: Range<usize>, cols: Range<usize>) -> FeatureMap {
        assert!(rows.end <= self.h && cols.end <= self.w && !rows.is_empty() && !cols.is_empty());
        let (ph, pw) = (rows.len(), cols.len());
        let mut data = Vec::with_capacity(ph * pw * self.c);
        for i in rows {
            let start = (i * self.w + cols.start) * self.c;
            let end = (i * self.w + cols.end) * self.c;
            data.extend_from_slice(&self.data[start..end]);
        }
        FeatureMap {
            h: ph,
            w: pw,
            c: self.c,
            data,
        }
    }

    /// Writes `patch` into this map with its top-left corner at `(row, col)`.
    pub fn paste(&mut self, patch: &FeatureMap, row: usize, col: usize) {
        assert_eq!(patch.c, self.c);
        assert!(row + patch.h <= self.h && col + patch.w <= self.w);
        for pi in 0..patch.h {
            let dst = ((row + pi) * self.w + col) * self.c;
            let src = pi * patch.w * patch.c;
            let len = patch.w * patch.c;
            self.data[dst..dst + len].copy_from_slice(&patch.data[src..src + len]);
        }
    }

    /// Multiplies every value of channel `k` by `factors[k]`.
    pub fn scale_channels(&self, factors: &[f32]) -> Result<FeatureMap> {
        if factors.len() != self.c {
            return Err(SidaError::dim("channel factors", self.c, factors.len()));
        }
        let mut out = self.clone();
        for px in out.data.chunks_exact_mut(self.c) {
            for (v, s) in px.iter_mut().zip(factors) {
                *v *= s;
            }
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Per-channel mean and standard deviation of a feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleStats {
    pub mu: Vec<f32>,
    pub sigma: Vec<f32>,
}

impl StyleStats {
    /// Builds stats, clamping every sigma to at least [`SIGMA_FLOOR`].
    pub fn new(mu: Vec<f32>, sigma: Vec<f32>) -> Result<Self> {
        if mu.len() != sigma.len() {
            return Err(SidaError::dim("style sigma", mu.len(), sigma.len()));
        }
        if mu.is_empty() {
            return Err(SidaError::Config("style stats need at least one channel".into()));
        }
        let mut s = Self { mu, sigma };
        s.clamp_sigma();
        Ok(s)
    }

    pub fn channels(&self) -> usize {
        self.mu.len()
    }

    pub fn clamp_sigma(&mut self) {
        for s in &mut self.sigma {
            if !(*s >= SIGMA_FLOOR) {
                *s = SIGMA_FLOOR;
            }
        }
    }
}

/// Channel means and population standard deviations, sigma clamped to the floor.
pub fn channel_stats(f: &FeatureMap) -> StyleStats {
    let c = f.c;
    let n = f.pixels() as f64;
    let mut sum = vec![0f64; c];
    for px in f.data.chunks_exact(c) {
        for (s, &v) in sum.iter_mut().zip(px) {
            *s += v as f64;
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let mut sq = vec![0f64; c];
    for px in f.data.chunks_exact(c) {
        for k in 0..c {
            let d = px[k] as f64 - mean[k];
            sq[k] += d * d;
        }
    }
    let mu = mean.iter().map(|&m| m as f32).collect();
    let sigma = sq
        .iter()
        .map(|&s| ((s / n).sqrt() as f32).max(SIGMA_FLOOR))
        .collect();
    StyleStats { mu, sigma }
}

/// Renormalizes `f` so that each channel carries the target mean and deviation.
pub fn adain(f: &FeatureMap, target: &StyleStats) -> Result<FeatureMap> {
    if target.channels() != f.c {
        return Err(SidaError::dim("adain target channels", f.c, target.channels()));
    }
    let src = channel_stats(f);
    let mut out = f.clone();
    for px in out.data.chunks_exact_mut(f.c) {
        for k in 0..f.c {
            let normed = (px[k] as f64 - src.mu[k] as f64) / src.sigma[k] as f64;
            px[k] = (target.sigma[k] as f64 * normed + target.mu[k] as f64) as f32;
        }
    }
    if !out.is_finite() {
        return Err(SidaError::NonFinite("adain"));
    }
    Ok(out)
}

/// Cosine similarity; a zero-norm input yields 0.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(SidaError::dim("cosine operand", a.len(), b.len()));
    }
    let (mut dot, mut na, mut nb) = (0f64, 0f64, 0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

pub fn global_average_pool(f: &FeatureMap) -> Vec<f32> {
    channel_stats(f).mu
}

/// Deterministic random stream (ChaCha8) addressed by `(seed, stream)`.
///
/// Owned by a single caller; concurrent work derives its own stream id.
#[derive(Debug, Clone)]
pub struct RandomSource {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        Self::stream(seed, 0)
    }

    pub fn stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform `f32` in `[0, 1)`.
    pub fn uniform(&mut self) -> f32 {
        self.rng.random::<f32>()
    }

    pub fn uniform_f64(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform_f64()
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0);
        self.rng.random_range(0..n)
    }

    pub fn standard_normal(&mut self) -> f32 {
        self.rng.sample(StandardNormal)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.random()
    }
}

/// `c` independent draws from `U[0, 1]`.
pub fn sample_uniform(rng: &mut RandomSource, c: usize) -> Vec<f32> {
    (0..c).map(|_| rng.uniform()).collect()
}

/// `c` independent draws from `N(0, s^2)`; `s = 0` gives exact zeros.
pub fn sample_gaussian(rng: &mut RandomSource, c: usize, s: f32) -> Vec<f32> {
    (0..c)
        .map(|_| {
            let z = rng.standard_normal();
            if s == 0.0 {
                0.0
            } else {
                z * s
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map(h: usize, w: usize, c: usize, data: Vec<f32>) -> FeatureMap {
        FeatureMap::new(h, w, c, data).unwrap()
    }

    #[test]
    fn stats_two_elements() {
        let s = channel_stats(&map(1, 2, 1, vec![1.0, 3.0]));
        assert_eq!(s.mu, vec![2.0]);
        assert_eq!(s.sigma, vec![1.0]);
    }

    #[test]
    fn stats_constant_map_hits_floor() {
        let s = channel_stats(&map(3, 2, 2, vec![0.7; 12]));
        assert_eq!(s.mu, vec![0.7, 0.7]);
        assert_eq!(s.sigma, vec![SIGMA_FLOOR, SIGMA_FLOOR]);
    }

    #[test]
    fn stats_per_channel_hand_case() {
        // channel 0 all zero, channel 1 = [-1, -1, 1, 1]
        let f = map(2, 2, 2, vec![0.0, -1.0, 0.0, -1.0, 0.0, 1.0, 0.0, 1.0]);
        let s = channel_stats(&f);
        assert_eq!(s.mu, vec![0.0, 0.0]);
        assert_eq!(s.sigma, vec![SIGMA_FLOOR, 1.0]);
    }

    #[test]
    fn adain_hand_case() {
        let f = map(1, 2, 1, vec![-1.0, 1.0]);
        let t = StyleStats::new(vec![5.0], vec![2.0]).unwrap();
        assert_eq!(adain(&f, &t).unwrap().data(), &[3.0, 7.0]);
    }

    #[test]
    fn adain_constant_input_lands_on_target_mean() {
        let f = map(2, 2, 1, vec![1.5; 4]);
        let t = StyleStats::new(vec![4.0], vec![3.0]).unwrap();
        assert_eq!(adain(&f, &t).unwrap().data(), &[4.0; 4]);
    }

    #[test]
    fn adain_rejects_channel_mismatch() {
        let f = map(1, 2, 1, vec![-1.0, 1.0]);
        let t = StyleStats::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        assert!(matches!(adain(&f, &t), Err(SidaError::Dimension { .. })));
    }

    #[test]
    fn cosine_cases() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine_similarity(&[3.0, 4.0], &[3.0, 4.0]).unwrap() - 1.0).abs() < 1e-12);
        let r = cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((r - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert!(cosine_similarity(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn pooling_matches_stats_mean() {
        let f = map(1, 2, 1, vec![1.0, 3.0]);
        assert_eq!(global_average_pool(&f), vec![2.0]);
        assert_eq!(global_average_pool(&map(2, 2, 3, vec![0.25; 12])), vec![0.25; 3]);
    }

    #[test]
    fn uniform_sampling() {
        let a = sample_uniform(&mut RandomSource::new(7), 16);
        let b = sample_uniform(&mut RandomSource::new(7), 16);
        assert_eq!(a, b);
        let big = sample_uniform(&mut RandomSource::new(11), 100_000);
        assert!(big.iter().all(|v| (0.0..=1.0).contains(v)));
        let mean = big.iter().map(|&v| v as f64).sum::<f64>() / big.len() as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn gaussian_sampling() {
        assert!(sample_gaussian(&mut RandomSource::new(1), 8, 0.0)
            .iter()
            .all(|&v| v == 0.0));
        let a = sample_gaussian(&mut RandomSource::new(3), 8, 0.075);
        assert_eq!(a, sample_gaussian(&mut RandomSource::new(3), 8, 0.075));
        let big = sample_gaussian(&mut RandomSource::new(5), 100_000, 0.075);
        let n = big.len() as f64;
        let mean = big.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = big.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        assert!((var.sqrt() - 0.075).abs() < 0.002, "std {}", var.sqrt());
    }

    #[test]
    fn streams_are_independent() {
        let a = sample_uniform(&mut RandomSource::stream(9, 1), 4);
        let b = sample_uniform(&mut RandomSource::stream(9, 2), 4);
        assert_ne!(a, b);
    }

    #[test]
    fn crop_and_paste_round_trip() {
        let data: Vec<f32> = (0..5 * 4 * 2).map(|v| v as f32).collect();
        let f = map(5, 4, 2, data);
        let p = f.crop(1..4, 2..4);
        assert_eq!(p.height(), 3);
        assert_eq!(p.get(0, 0, 1), f.get(1, 2, 1));
        let mut g = FeatureMap::zeros(5, 4, 2);
        g.paste(&p, 1, 2);
        assert_eq!(g.get(3, 3, 0), f.get(3, 3, 0));
        assert_eq!(g.get(0, 0, 0), 0.0);
    }

    fn arb_map() -> impl Strategy<Value = FeatureMap> {
        (1usize..6, 1usize..6, 1usize..5).prop_flat_map(|(h, w, c)| {
            prop::collection::vec(-5.0f32..5.0, h * w * c)
                .prop_map(move |d| FeatureMap::new(h, w, c, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn adain_with_own_stats_is_identity(f in arb_map()) {
            let s = channel_stats(&f);
            prop_assume!(s.sigma.iter().all(|&v| v > 1e-3));
            let out = adain(&f, &s).unwrap();
            for (a, b) in out.data().iter().zip(f.data()) {
                prop_assert!((a - b).abs() <= 1e-6 * (1.0 + b.abs()));
            }
        }

        #[test]
        fn stats_translation_equivariant(f in arb_map(), shift in -3.0f32..3.0) {
            let s = channel_stats(&f);
            let mut g = f.clone();
            for v in g.data_mut() { *v += shift; }
            let t = channel_stats(&g);
            for k in 0..f.channels() {
                prop_assert!((t.mu[k] - s.mu[k] - shift).abs() < 2e-6);
                if s.sigma[k] > 1e-3 {
                    prop_assert!((t.sigma[k] - s.sigma[k]).abs() <= 1e-6);
                }
            }
        }

        #[test]
        fn cosine_scale_invariant(a in prop::collection::vec(-4.0f32..4.0, 1..12), s in 0.01f32..50.0) {
            prop_assume!(a.iter().any(|&v| v.abs() > 1e-3));
            let b: Vec<f32> = a.iter().map(|v| v * s).collect();
            prop_assert!((cosine_similarity(&a, &b).unwrap() - 1.0).abs() < 1e-6);
        }
    }
}
