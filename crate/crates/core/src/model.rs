//! Frozen convolutional feature extractor and the trainable per-pixel linear head.
//!
//! The extractor maps a 64x64 RGB image to a 32x32x32 feature map through two
//! 3x3 convolutions (3->16 stride 1, 16->32 stride 2, same padding, ReLU,
//! zero bias) with He-normal weights drawn once from a seed.
//!
//! Checkpoints use the `SIDC` layout: magic, `u32` version=1, `u32` K,
//! `u32` c, `K*c` f32 weights row-major, `K` f32 bias, `u64` iteration.

use std::path::Path;

use crate::error::{FormatError, Result, SidaError};
use crate::format::{self, ByteReader};
use crate::tensor::{FeatureMap, RandomSource};

pub const IMAGE_SIZE: usize = 64;
pub const FEATURE_SIZE: usize = 32;
pub const FEATURE_CHANNELS: usize = 32;
const HIDDEN_CHANNELS: usize = 16;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SIDC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Interleaved RGB image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(SidaError::dim("image data", height * width * 3, data.len()));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(SidaError::Config(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn rgb(&self, i: usize, j: usize) -> [f32; 3] {
        let b = (i * self.width + j) * 3;
        [self.data[b], self.data[b + 1], self.data[b + 2]]
    }

    #[inline]
    pub fn set_rgb(&mut self, i: usize, j: usize, rgb: [f32; 3]) {
        let b = (i * self.width + j) * 3;
        for (d, v) in self.data[b..b + 3].iter_mut().zip(rgb) {
            *d = v.clamp(0.0, 1.0);
        }
    }

    pub fn as_feature(&self) -> FeatureMap {
        FeatureMap::new(self.height, self.width, 3, self.data.clone())
            .expect("image dims are positive")
    }
}

/// 3x3 convolution kernel bank, weights laid out `[ky][kx][cin][cout]`.
#[derive(Debug, Clone, PartialEq)]
struct Conv3x3 {
    cin: usize,
    cout: usize,
    stride: usize,
    weights: Vec<f32>,
}

impl Conv3x3 {
    fn he_normal(rng: &mut RandomSource, cin: usize, cout: usize, stride: usize) -> Self {
        let std = (2.0 / (9 * cin) as f64).sqrt() as f32;
        let weights = (0..9 * cin * cout)
            .map(|_| rng.standard_normal() * std)
            .collect();
        Self {
            cin,
            cout,
            stride,
            weights,
        }
    }

    /// Same-padded convolution followed by ReLU.
    fn forward_relu(&self, x: &FeatureMap) -> FeatureMap {
        debug_assert_eq!(x.channels(), self.cin);
        let (h, w) = (x.height(), x.width());
        let oh = (h + 2 - 3) / self.stride + 1;
        let ow = (w + 2 - 3) / self.stride + 1;
        let mut out = vec![0f32; oh * ow * self.cout];
        let mut acc = vec![0f32; self.cout];
        for oi in 0..oh {
            for oj in 0..ow {
                acc.iter_mut().for_each(|a| *a = 0.0);
                for ky in 0..3 {
                    let ii = (oi * self.stride + ky) as isize - 1;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let jj = (oj * self.stride + kx) as isize - 1;
                        if jj < 0 || jj >= w as isize {
                            continue;
                        }
                        let px = x.pixel(ii as usize, jj as usize);
                        let base = (ky * 3 + kx) * self.cin * self.cout;
                        for (ci, &v) in px.iter().enumerate() {
                            if v == 0.0 {
                                continue;
                            }
                            let row = &self.weights[base + ci * self.cout..base + (ci + 1) * self.cout];
                            for (a, &wt) in acc.iter_mut().zip(row) {
                                *a += v * wt;
                            }
                        }
                    }
                }
                let dst = (oi * ow + oj) * self.cout;
                for (o, &a) in out[dst..dst + self.cout].iter_mut().zip(&acc) {
                    *o = a.max(0.0);
                }
            }
        }
        FeatureMap::new(oh, ow, self.cout, out).expect("conv output is well formed")
    }
}

/// Seeded, immutable low-level feature extractor.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenExtractor {
    seed: u64,
    stage1: Conv3x3,
    stage2: Conv3x3,
}

pub fn init_extractor(seed: u64) -> FrozenExtractor {
    let mut rng = RandomSource::new(seed);
    let stage1 = Conv3x3::he_normal(&mut rng, 3, HIDDEN_CHANNELS, 1);
    let stage2 = Conv3x3::he_normal(&mut rng, HIDDEN_CHANNELS, FEATURE_CHANNELS, 2);
    FrozenExtractor {
        seed,
        stage1,
        stage2,
    }
}

impl FrozenExtractor {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Concatenated stage weights, for frozenness checks.
    pub fn weights(&self) -> Vec<f32> {
        let mut w = self.stage1.weights.clone();
        w.extend_from_slice(&self.stage2.weights);
        w
    }

    pub fn extract(&self, img: &Image) -> Result<FeatureMap> {
        if img.height() != IMAGE_SIZE || img.width() != IMAGE_SIZE {
            return Err(SidaError::Config(format!(
                "extractor expects {IMAGE_SIZE}x{IMAGE_SIZE} images, got {}x{}",
                img.height(),
                img.width()
            )));
        }
        let hidden = self.stage1.forward_relu(&img.as_feature());
        Ok(self.stage2.forward_relu(&hidden))
    }
}

/// Per-pixel class scores or probabilities, `h x w x classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassGrid {
    pub h: usize,
    pub w: usize,
    pub classes: usize,
    pub data: Vec<f32>,
}

pub type LogitsMap = ClassGrid;
pub type ProbMap = ClassGrid;

impl ClassGrid {
    pub fn zeros(h: usize, w: usize, classes: usize) -> Self {
        Self {
            h,
            w,
            classes,
            data: vec![0.0; h * w * classes],
        }
    }

    pub fn pixels(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub fn row(&self, p: usize) -> &[f32] {
        &self.data[p * self.classes..(p + 1) * self.classes]
    }

    /// Arg-max class per pixel; ties go to the smaller class id.
    pub fn argmax(&self) -> Vec<u8> {
        self.data
            .chunks_exact(self.classes)
            .map(|row| {
                let mut best = 0;
                for (k, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = k;
                    }
                }
                best as u8
            })
            .collect()
    }
}

/// Weights `K x c` (row-major) and bias `K` of the per-pixel linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    pub classes: usize,
    pub channels: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl ClassifierParams {
    pub fn zeros(classes: usize, channels: usize) -> Self {
        Self {
            classes,
            channels,
            weight: vec![0.0; classes * channels],
            bias: vec![0.0; classes],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

pub fn classify(f: &FeatureMap, p: &ClassifierParams) -> Result<LogitsMap> {
    if f.channels() != p.channels {
        return Err(SidaError::dim("classifier input channels", p.channels, f.channels()));
    }
    let (k, c) = (p.classes, p.channels);
    let mut out = ClassGrid::zeros(f.height(), f.width(), k);
    for (px, row) in f.data().chunks_exact(c).zip(out.data.chunks_exact_mut(k)) {
        for (cls, o) in row.iter_mut().enumerate() {
            let wrow = &p.weight[cls * c..(cls + 1) * c];
            let mut acc = p.bias[cls] as f64;
            for (&x, &wt) in px.iter().zip(wrow) {
                acc += x as f64 * wt as f64;
            }
            *o = acc as f32;
        }
    }
    Ok(out)
}

/// Max-subtracted softmax over classes at every pixel.
pub fn softmax_probs(l: &LogitsMap) -> ProbMap {
    let mut out = l.clone();
    for row in out.data.chunks_exact_mut(l.classes) {
        let max = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
        let mut z = 0f64;
        for v in row.iter_mut() {
            let e = (*v as f64 - max).exp();
            *v = e as f32;
            z += e;
        }
        for v in row.iter_mut() {
            *v = (*v as f64 / z) as f32;
        }
    }
    out
}

/// Classifier parameters together with the number of optimizer steps taken.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ClassifierParams,
    pub iteration: u64,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let p = &self.params;
        let mut buf = Vec::with_capacity(24 + 4 * (p.weight.len() + p.bias.len()));
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        format::put_u32(&mut buf, CHECKPOINT_VERSION);
        format::put_u32(&mut buf, p.classes as u32);
        format::put_u32(&mut buf, p.channels as u32);
        format::put_f32s(&mut buf, &p.weight);
        format::put_f32s(&mut buf, &p.bias);
        format::put_u64(&mut buf, self.iteration);
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(CHECKPOINT_MAGIC)?;
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(FormatError::Version {
                expected: CHECKPOINT_VERSION,
                found: version,
            }
            .into());
        }
        let classes = r.u32()? as usize;
        let channels = r.u32()? as usize;
        if classes == 0 || channels == 0 {
            return Err(FormatError::Channels(format!(
                "checkpoint declares K={classes}, c={channels}"
            ))
            .into());
        }
        let n = classes
            .checked_mul(channels)
            .filter(|n| n * 4 <= r.remaining())
            .ok_or(FormatError::Truncated {
                offset: r.position(),
                needed: (classes * channels * 4).saturating_sub(r.remaining()),
            })?;
        let weight = r.f32s(n)?;
        let bias = r.f32s(classes)?;
        let iteration = r.u64()?;
        r.finish()?;
        Ok(Self {
            params: ClassifierParams {
                classes,
                channels,
                weight,
                bias,
            },
            iteration,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
