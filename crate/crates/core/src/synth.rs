//! Procedural desk-scale segmentation benchmark.
//!
//! Source scenes are a jittered background (class 0) with two to four flat
//! shapes: circle (1), square (2), triangle (3) and horizontal bar (4), each
//! with a class-specific base color. Target domains are photometric maps of
//! fresh scenes whose strength is `global_intensity * local_field(i, j)`:
//!
//! - test images draw a random global intensity in `[0.3, 1.0]` and a linear
//!   ramp field in `[0.5, 1.0]` with random orientation;
//! - bank images (the stand-ins for generated target-style images) all use the
//!   canonical intensity 0.8 with a flat field.
//!
//! All pixel values are quantized to multiples of 1/255 so images survive a
//! PPM round trip unchanged.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use crate::error::{Result, SidaError};
use crate::model::{Image, IMAGE_SIZE};
use crate::style_bank::DomainId;
use crate::tensor::RandomSource;

pub const NUM_CLASSES: usize = 5;
pub const CANONICAL_INTENSITY: f32 = 0.8;
pub const INTENSITY_RANGE: (f64, f64) = (0.3, 1.0);

const BACKGROUND_RGB: [f32; 3] = [0.55, 0.55, 0.50];
const CLASS_RGB: [[f32; 3]; 4] = [
    [0.80, 0.25, 0.20],
    [0.25, 0.70, 0.30],
    [0.20, 0.30, 0.80],
    [0.85, 0.80, 0.20],
];

/// Row-major grid of class ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelGrid {
    pub h: usize,
    pub w: usize,
    pub data: Vec<u8>,
}

impl LabelGrid {
    pub fn new(h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != h * w {
            return Err(SidaError::dim("label grid", h * w, data.len()));
        }
        Ok(Self { h, w, data })
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.data[i * self.w + j]
    }
}

/// Majority class of every `factor x factor` block; ties go to the smaller id.
pub fn downsample_labels(labels: &LabelGrid, factor: usize) -> Result<LabelGrid> {
    if factor == 0 || !labels.h.is_multiple_of(factor) || !labels.w.is_multiple_of(factor) {
        return Err(SidaError::Config(format!(
            "label grid {}x{} is not divisible by {factor}",
            labels.h, labels.w
        )));
    }
    let (oh, ow) = (labels.h / factor, labels.w / factor);
    let mut out = Vec::with_capacity(oh * ow);
    let mut counts = [0u32; 256];
    for oi in 0..oh {
        for oj in 0..ow {
            counts.iter_mut().for_each(|c| *c = 0);
            for di in 0..factor {
                for dj in 0..factor {
                    counts[labels.get(oi * factor + di, oj * factor + dj) as usize] += 1;
                }
            }
            // max_by_key keeps the last maximum, so scan in reverse id order
            let best = (0..256usize).rev().max_by_key(|&k| counts[k]).unwrap_or(0);
            out.push(best as u8);
        }
    }
    LabelGrid::new(oh, ow, out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Circle { cy: f64, cx: f64, r: f64 },
    Square { cy: f64, cx: f64, half: f64 },
    Triangle { cy: f64, cx: f64, half: f64 },
    Bar { top: f64, bottom: f64, left: f64, right: f64 },
}

impl Shape {
    pub fn class_id(&self) -> u8 {
        match self {
            Shape::Circle { .. } => 1,
            Shape::Square { .. } => 2,
            Shape::Triangle { .. } => 3,
            Shape::Bar { .. } => 4,
        }
    }

    /// Whether the point `(y, x)` (pixel centers at `+0.5`) lies inside.
    pub fn contains(&self, y: f64, x: f64) -> bool {
        match *self {
            Shape::Circle { cy, cx, r } => (y - cy).powi(2) + (x - cx).powi(2) <= r * r,
            Shape::Square { cy, cx, half } => (y - cy).abs() <= half && (x - cx).abs() <= half,
            Shape::Triangle { cy, cx, half } => {
                let top = cy - half;
                let bottom = cy + half;
                y >= top && y <= bottom && (x - cx).abs() <= (y - top) / (bottom - top) * half
            }
            Shape::Bar {
                top,
                bottom,
                left,
                right,
            } => y >= top && y < bottom && x >= left && x < right,
        }
    }

    fn random(class: u8, rng: &mut RandomSource) -> Shape {
        let cy = rng.uniform_range(12.0, 52.0);
        let cx = rng.uniform_range(12.0, 52.0);
        match class {
            1 => Shape::Circle {
                cy,
                cx,
                r: rng.uniform_range(6.0, 13.0),
            },
            2 => Shape::Square {
                cy,
                cx,
                half: rng.uniform_range(5.0, 11.0),
            },
            3 => Shape::Triangle {
                cy,
                cx,
                half: rng.uniform_range(7.0, 13.0),
            },
            _ => {
                let thick = rng.uniform_range(4.0, 8.0);
                let len = rng.uniform_range(24.0, 52.0);
                let left = rng.uniform_range(0.0, IMAGE_SIZE as f64 - len);
                Shape::Bar {
                    top: cy - thick / 2.0,
                    bottom: cy + thick / 2.0,
                    left,
                    right: left + len,
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DomainKind {
    Fog,
    Night,
    Rain,
    Snow,
}

impl DomainKind {
    pub const ALL: [DomainKind; 4] = [
        DomainKind::Fog,
        DomainKind::Night,
        DomainKind::Rain,
        DomainKind::Snow,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            DomainKind::Fog => "fog",
            DomainKind::Night => "night",
            DomainKind::Rain => "rain",
            DomainKind::Snow => "snow",
        }
    }

    pub fn domain_id(&self) -> DomainId {
        DomainId::new(self.name()).expect("static name")
    }
}

impl fmt::Display for DomainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DomainKind {
    type Err = SidaError;

    fn from_str(s: &str) -> Result<Self> {
        DomainKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| SidaError::Config(format!("unknown domain kind {s:?}")))
    }
}

/// A photometric domain shift with spatially varying strength.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainTransform {
    pub kind: DomainKind,
    pub global_intensity: f32,
    /// Orientation of the linear intensity ramp in radians; `None` is a flat
    /// field of 1.
    pub field_angle: Option<f32>,
    /// Seed for the rain streak and snow speckle layouts.
    pub pattern_seed: u64,
}

impl DomainTransform {
    pub fn new(
        kind: DomainKind,
        global_intensity: f32,
        field_angle: Option<f32>,
        pattern_seed: u64,
    ) -> Result<Self> {
        let (lo, hi) = INTENSITY_RANGE;
        if !(lo as f32..=hi as f32).contains(&global_intensity) {
            return Err(SidaError::Config(format!(
                "global intensity {global_intensity} outside [{lo}, {hi}]"
            )));
        }
        Ok(Self {
            kind,
            global_intensity,
            field_angle,
            pattern_seed,
        })
    }

    /// Zero-strength transform; leaves every image unchanged.
    pub fn identity(kind: DomainKind) -> Self {
        Self {
            kind,
            global_intensity: 0.0,
            field_angle: None,
            pattern_seed: 0,
        }
    }

    pub fn canonical(kind: DomainKind, pattern_seed: u64) -> Self {
        Self {
            kind,
            global_intensity: CANONICAL_INTENSITY,
            field_angle: None,
            pattern_seed,
        }
    }

    fn random(kind: DomainKind, rng: &mut RandomSource) -> Self {
        let (lo, hi) = INTENSITY_RANGE;
        Self {
            kind,
            global_intensity: rng.uniform_range(lo, hi) as f32,
            field_angle: Some(rng.uniform_range(0.0, 2.0 * PI) as f32),
            pattern_seed: rng.next_u64(),
        }
    }

    /// Local strength multiplier in `[0.5, 1.0]` at pixel `(i, j)`.
    pub fn local_field(&self, i: usize, j: usize) -> f32 {
        let Some(angle) = self.field_angle else {
            return 1.0;
        };
        let half = IMAGE_SIZE as f64 / 2.0;
        let (y, x) = (i as f64 + 0.5 - half, j as f64 + 0.5 - half);
        let angle = angle as f64;
        let proj = (x * angle.cos() + y * angle.sin()) / (half * SQRT_2);
        (0.75 + 0.25 * proj.clamp(-1.0, 1.0)) as f32
    }

    pub fn strength(&self, i: usize, j: usize) -> f32 {
        self.global_intensity * self.local_field(i, j)
    }
}

pub fn apply_domain_transform(img: &Image, t: &DomainTransform) -> Image {
    let (h, w) = (img.height(), img.width());
    let mut out = img.clone();
    let mut pattern = RandomSource::new(t.pattern_seed);
    let streaks = match t.kind {
        DomainKind::Rain => rain_streaks(&mut pattern, h, w),
        _ => Vec::new(),
    };
    for i in 0..h {
        for j in 0..w {
            let s = t.strength(i, j);
            let [r, g, b] = img.rgb(i, j);
            let px = match t.kind {
                DomainKind::Night => {
                    let dim = 1.0 - 0.7 * s;
                    [r * dim, g * dim, b * dim + 0.08 * s]
                }
                DomainKind::Fog => {
                    let squash = |v: f32| 0.5 + (v - 0.5) * (1.0 - 0.3 * s);
                    let veil = |v: f32| (1.0 - 0.6 * s) * squash(v) + 0.6 * s;
                    [veil(r), veil(g), veil(b)]
                }
                DomainKind::Rain => {
                    let dim = 1.0 - 0.2 * s;
                    let streak = if streaks[i * w + j] { 0.35 * s } else { 0.0 };
                    [r * dim + streak, g * dim + streak, b * dim + 1.2 * streak]
                }
                DomainKind::Snow => {
                    // one draw per pixel regardless of strength keeps the layout fixed
                    let u = pattern.uniform();
                    let lift = |v: f32| v + 0.15 * s * (1.0 - v);
                    if u < 0.12 * s {
                        [0.95; 3]
                    } else {
                        [lift(r), lift(g), lift(b)]
                    }
                }
            };
            out.set_rgb(i, j, px);
        }
    }
    quantize(&mut out);
    out
}

fn rain_streaks(rng: &mut RandomSource, h: usize, w: usize) -> Vec<bool> {
    let mut mask = vec![false; h * w];
    for _ in 0..48 {
        let (i0, j0) = (rng.index(h), rng.index(w));
        let len = 6 + rng.index(10);
        for step in 0..len {
            let (i, j) = (i0 + step, j0 + step / 2);
            if i < h && j < w {
                mask[i * w + j] = true;
            }
        }
    }
    mask
}

fn quantize(img: &mut Image) {
    let (h, w) = (img.height(), img.width());
    for i in 0..h {
        for j in 0..w {
            let px = img.rgb(i, j).map(|v| (v * 255.0).round() / 255.0);
            img.set_rgb(i, j, px);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Source,
    TargetTest,
    SyntheticBank,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Source => "source",
            Role::TargetTest => "target-test",
            Role::SyntheticBank => "synthetic-bank",
        }
    }
}

impl FromStr for Role {
    type Err = SidaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(Role::Source),
            "target-test" => Ok(Role::TargetTest),
            "synthetic-bank" => Ok(Role::SyntheticBank),
            _ => Err(SidaError::Config(format!("unknown role {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToySample {
    pub image: Image,
    pub labels: LabelGrid,
    pub domain: DomainId,
    pub role: Role,
    pub transform: Option<DomainTransform>,
}

/// A clean source scene and the shapes painted into it, in paint order.
pub fn gen_scene_with_shapes(rng: &mut RandomSource) -> (ToySample, Vec<Shape>) {
    let n = IMAGE_SIZE;
    let count = 2 + rng.index(3);
    let shapes: Vec<Shape> = (0..count)
        .map(|_| {
            let class = 1 + rng.index(4) as u8;
            Shape::random(class, rng)
        })
        .collect();
    let tint: Vec<f32> = (0..3).map(|_| rng.uniform() * 0.1 - 0.05).collect();
    let shape_tints: Vec<[f32; 3]> = shapes
        .iter()
        .map(|_| [0, 1, 2].map(|_| rng.uniform() * 0.1 - 0.05))
        .collect();

    let mut image = Image::filled(n, n, [0.0; 3]);
    let mut labels = vec![0u8; n * n];
    for i in 0..n {
        for j in 0..n {
            let (y, x) = (i as f64 + 0.5, j as f64 + 0.5);
            let mut class = 0u8;
            let mut rgb = [0f32; 3];
            for c in 0..3 {
                rgb[c] = BACKGROUND_RGB[c] + tint[c];
            }
            for (s, st) in shapes.iter().zip(&shape_tints) {
                if s.contains(y, x) {
                    class = s.class_id();
                    let base = CLASS_RGB[class as usize - 1];
                    for c in 0..3 {
                        rgb[c] = base[c] + st[c];
                    }
                }
            }
            for v in &mut rgb {
                *v += rng.uniform() * 0.08 - 0.04;
            }
            labels[i * n + j] = class;
            image.set_rgb(i, j, rgb);
        }
    }
    quantize(&mut image);
    let sample = ToySample {
        image,
        labels: LabelGrid::new(n, n, labels).expect("square grid"),
        domain: DomainId::new("source").expect("static name"),
        role: Role::Source,
        transform: None,
    };
    (sample, shapes)
}

pub fn gen_scene(rng: &mut RandomSource) -> ToySample {
    gen_scene_with_shapes(rng).0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchmarkCounts {
    pub source_train: usize,
    pub source_val: usize,
    pub target_per_domain: usize,
    pub bank_per_domain: usize,
}

impl Default for BenchmarkCounts {
    fn default() -> Self {
        Self {
            source_train: 200,
            source_val: 50,
            target_per_domain: 50,
            bank_per_domain: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub source_train: Vec<ToySample>,
    pub source_val: Vec<ToySample>,
    /// Per-domain target test sets, in [`DomainKind::ALL`] order.
    pub targets: Vec<(DomainKind, Vec<ToySample>)>,
    /// Per-domain synthetic bank images.
    pub bank: Vec<(DomainKind, Vec<ToySample>)>,
}

// Every image gets its own stream so counts can change without reshuffling
// the others.
fn sample_rng(seed: u64, group: u64, index: usize) -> RandomSource {
    RandomSource::stream(seed, (group << 32) | index as u64)
}

pub fn gen_benchmark(seed: u64, counts: BenchmarkCounts) -> Result<Benchmark> {
    let BenchmarkCounts {
        source_train,
        source_val,
        target_per_domain,
        bank_per_domain,
    } = counts;
    if source_train == 0 || source_val == 0 || target_per_domain == 0 || bank_per_domain == 0 {
        return Err(SidaError::Config(format!(
            "benchmark counts must be >= 1, got {counts:?}"
        )));
    }
    let source = |group: u64, n: usize| -> Vec<ToySample> {
        (0..n)
            .map(|i| gen_scene(&mut sample_rng(seed, group, i)))
            .collect()
    };
    let mut targets = Vec::new();
    let mut bank = Vec::new();
    for (d, kind) in DomainKind::ALL.into_iter().enumerate() {
        let d = d as u64;
        let tests = (0..target_per_domain)
            .map(|i| {
                let mut rng = sample_rng(seed, 10 + d, i);
                let scene = gen_scene(&mut rng);
                let t = DomainTransform::random(kind, &mut rng);
                transformed(scene, kind, Role::TargetTest, t)
            })
            .collect();
        let synthetic = (0..bank_per_domain)
            .map(|i| {
                let mut rng = sample_rng(seed, 20 + d, i);
                let scene = gen_scene(&mut rng);
                let t = DomainTransform::canonical(kind, rng.next_u64());
                transformed(scene, kind, Role::SyntheticBank, t)
            })
            .collect();
        targets.push((kind, tests));
        bank.push((kind, synthetic));
    }
    Ok(Benchmark {
        source_train: source(1, source_train),
        source_val: source(2, source_val),
        targets,
        bank,
    })
}

fn transformed(scene: ToySample, kind: DomainKind, role: Role, t: DomainTransform) -> ToySample {
    ToySample {
        image: apply_domain_transform(&scene.image, &t),
        labels: scene.labels,
        domain: kind.domain_id(),
        role,
        transform: Some(t),
    }
}
