//! Domain Mix and Patch Style Transfer.
//!
//! A source feature is first perturbed channel-wise (`1 + eps'`), then split
//! into an `m x m` grid. Every patch receives its own target style: a convex
//! per-channel blend of the main and auxiliary domain statistics plus Gaussian
//! noise. Each patch is renormalized with its own statistics and the patches
//! are stitched back to the original resolution.
//!
//! Draw order per call is fixed: `eps'` first, then patches in row-major
//! `(i, j)` order, `lambda` before `eps` within a patch.

use std::ops::Range;

use crate::error::{Result, SidaError};
use crate::style_bank::{DomainId, StyleEntry};
use crate::tensor::{
    adain, sample_gaussian, sample_uniform, FeatureMap, RandomSource, StyleStats, SIGMA_FLOOR,
};

/// How per-channel mixing ratios are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaPolicy {
    /// `lambda ~ U[0, 1]^c`, redrawn per patch.
    Uniform,
    /// `lambda = 1`: the auxiliary domain is ignored. Used for the
    /// single-style baseline.
    MainOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixParams {
    /// Standard deviation of both `eps` and `eps'`.
    pub noise_std: f32,
    /// Patch grid size `m`.
    pub patches: usize,
    pub lambda: LambdaPolicy,
}

impl Default for MixParams {
    fn default() -> Self {
        Self {
            noise_std: 0.075,
            patches: 3,
            lambda: LambdaPolicy::Uniform,
        }
    }
}

impl MixParams {
    /// Plain AdaIN to the main style: no noise, one patch, `lambda = 1`.
    pub fn single_style() -> Self {
        Self {
            noise_std: 0.0,
            patches: 1,
            lambda: LambdaPolicy::MainOnly,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(SidaError::Config(format!(
                "noise std must be finite and >= 0, got {}",
                self.noise_std
            )));
        }
        if self.patches == 0 {
            return Err(SidaError::Config("patch grid size must be >= 1".into()));
        }
        Ok(())
    }
}

/// One cell of the patch grid; pixel ranges are half-open.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchRect {
    pub i: usize,
    pub j: usize,
    pub rows: Range<usize>,
    pub cols: Range<usize>,
}

/// Random draws and the resulting target style of one patch.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchDraw {
    pub rect: PatchRect,
    pub lambda: Vec<f32>,
    pub eps: Vec<f32>,
    pub target: StyleStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StylizedFeature {
    pub feature: FeatureMap,
    pub main: DomainId,
    pub aux: DomainId,
    /// The image-level `eps'` applied before patching.
    pub source_noise: Vec<f32>,
    pub patches: Vec<PatchDraw>,
}

/// Per-channel convex blend `lambda * main + (1 - lambda) * aux` of both mean
/// and deviation.
pub fn domain_mix(main: &StyleStats, aux: &StyleStats, lambda: &[f32]) -> Result<StyleStats> {
    let c = main.channels();
    if aux.channels() != c {
        return Err(SidaError::dim("auxiliary style channels", c, aux.channels()));
    }
    if lambda.len() != c {
        return Err(SidaError::dim("mixing ratios", c, lambda.len()));
    }
    if let Some(l) = lambda.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(SidaError::Config(format!("mixing ratio {l} outside [0, 1]")));
    }
    let blend = |a: &[f32], b: &[f32]| -> Vec<f32> {
        a.iter()
            .zip(b)
            .zip(lambda)
            .map(|((&a, &b), &l)| {
                let l = l as f64;
                (l * a as f64 + (1.0 - l) * b as f64) as f32
            })
            .collect()
    };
    Ok(StyleStats {
        mu: blend(&main.mu, &aux.mu),
        sigma: blend(&main.sigma, &aux.sigma),
    })
}

/// Adds the same `eps` to mean and deviation, then clamps the deviation.
pub fn add_style_noise(stats: &StyleStats, eps: &[f32]) -> Result<StyleStats> {
    if eps.len() != stats.channels() {
        return Err(SidaError::dim("style noise", stats.channels(), eps.len()));
    }
    let mut out = StyleStats {
        mu: stats.mu.iter().zip(eps).map(|(m, e)| m + e).collect(),
        sigma: stats.sigma.iter().zip(eps).map(|(s, e)| s + e).collect(),
    };
    out.clamp_sigma();
    Ok(out)
}

/// Renormalizes `f_s` to `((1 + eps') mu_s, (1 + eps') sigma_s)`.
///
/// That is the same map as scaling channel `k` by `1 + eps'[k]`, which is how
/// it is computed here; `eps' = 0` returns the input bit-for-bit.
pub fn perturb_source(f_s: &FeatureMap, eps_prime: &[f32]) -> Result<FeatureMap> {
    if eps_prime.len() != f_s.channels() {
        return Err(SidaError::dim("source noise", f_s.channels(), eps_prime.len()));
    }
    let factors: Vec<f32> = eps_prime.iter().map(|e| 1.0 + e).collect();
    f_s.scale_channels(&factors)
}

/// Splits `h x w` into an `m x m` grid. Boundaries sit at `k * floor(len / m)`
/// and the last row/column of patches absorbs the remainder (32 -> 10, 10, 12).
pub fn patch_grid(h: usize, w: usize, m: usize) -> Result<Vec<PatchRect>> {
    if m == 0 || m > h.min(w) {
        return Err(SidaError::Config(format!(
            "patch grid {m}x{m} does not fit a {h}x{w} feature"
        )));
    }
    let bounds = |len: usize| -> Vec<usize> {
        (0..=m).map(|k| if k == m { len } else { k * (len / m) }).collect()
    };
    let (rb, cb) = (bounds(h), bounds(w));
    let mut rects = Vec::with_capacity(m * m);
    for i in 0..m {
        for j in 0..m {
            rects.push(PatchRect {
                i,
                j,
                rows: rb[i]..rb[i + 1],
                cols: cb[j]..cb[j + 1],
            });
        }
    }
    Ok(rects)
}

/// AdaIN applied patch by patch. `target_for` is called in row-major order with
/// each patch and returns the style it should carry; every patch is
/// normalized by its own statistics.
pub fn transfer_patches<F>(f: &FeatureMap, m: usize, mut target_for: F) -> Result<FeatureMap>
where
    F: FnMut(&PatchRect, &FeatureMap) -> Result<StyleStats>,
{
    let mut out = FeatureMap::zeros(f.height(), f.width(), f.channels());
    for rect in patch_grid(f.height(), f.width(), m)? {
        let patch = f.crop(rect.rows.clone(), rect.cols.clone());
        let target = target_for(&rect, &patch)?;
        out.paste(&adain(&patch, &target)?, rect.rows.start, rect.cols.start);
    }
    Ok(out)
}

/// Full Patch Style Transfer of one source feature toward the main domain,
/// blended with its auxiliary domain.
pub fn patch_style_transfer(
    f_s: &FeatureMap,
    main: &StyleEntry,
    aux: &StyleEntry,
    params: &MixParams,
    rng: &mut RandomSource,
) -> Result<StylizedFeature> {
    params.validate()?;
    let c = f_s.channels();
    if main.stats.channels() != c {
        return Err(SidaError::dim("main style channels", c, main.stats.channels()));
    }
    if aux.stats.channels() != c {
        return Err(SidaError::dim("auxiliary style channels", c, aux.stats.channels()));
    }

    let source_noise = sample_gaussian(rng, c, params.noise_std);
    let perturbed = perturb_source(f_s, &source_noise)?;

    let mut draws = Vec::with_capacity(params.patches * params.patches);
    let feature = transfer_patches(&perturbed, params.patches, |rect, _| {
        let lambda = match params.lambda {
            LambdaPolicy::Uniform => sample_uniform(rng, c),
            LambdaPolicy::MainOnly => vec![1.0; c],
        };
        let eps = sample_gaussian(rng, c, params.noise_std);
        let target = add_style_noise(&domain_mix(&main.stats, &aux.stats, &lambda)?, &eps)?;
        debug_assert!(target.sigma.iter().all(|&s| s >= SIGMA_FLOOR));
        draws.push(PatchDraw {
            rect: rect.clone(),
            lambda,
            eps,
            target: target.clone(),
        });
        Ok(target)
    })?;

    Ok(StylizedFeature {
        feature,
        main: main.domain.clone(),
        aux: aux.domain.clone(),
        source_noise,
        patches: draws,
    })
}
