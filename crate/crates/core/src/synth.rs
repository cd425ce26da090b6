//! Synthetic aerial scenes: ground truth, corrupted detector output, and
//! CenterNet-style training maps.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assoc::{normalized, Detection};
use crate::geometry::BBox;
use crate::losses::{Classifier, IdTarget, LossError, RegTarget};
use crate::metrics::AnnotatedBox;
use crate::tensor::FeatureMap;
use crate::FrameMap;

/// Period of the ego drift in frames.
const EGO_PERIOD: f64 = 100.0;
/// Minimum overlap used to size heatmap splats.
const SPLAT_MIN_OVERLAP: f64 = 0.7;
/// Sinusoid components in the synthetic feature field.
const FIELD_WAVES: usize = 3;
/// Share of the heatmap imprinted into the feature field.
const FIELD_IMPRINT: f32 = 0.3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid {what}: {detail}")]
    Config { what: &'static str, detail: String },
    #[error("no prototype for ground-truth id {0}")]
    MissingPrototype(i64),
    #[error("{0}")]
    Argument(String),
    #[error(transparent)]
    Loss(#[from] LossError),
}

fn bad(what: &'static str, detail: impl Into<String>) -> SynthError {
    SynthError::Config {
        what,
        detail: detail.into(),
    }
}

fn check_probability(what: &'static str, name: &str, p: f64) -> Result<(), SynthError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(bad(what, format!("{name} = {p} is not a probability")))
    }
}

fn check_range(what: &'static str, name: &str, r: [f64; 2], allow_zero: bool) -> Result<(), SynthError> {
    let lower_ok = if allow_zero { r[0] >= 0.0 } else { r[0] > 0.0 };
    if lower_ok && r[1] >= r[0] && r[1].is_finite() {
        Ok(())
    } else {
        Err(bad(what, format!("{name} = {r:?} is not an ordered range")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub num_targets: usize,
    pub num_frames: u32,
    pub image_w: f64,
    pub image_h: f64,
    /// Pixels per frame.
    pub speed_range: [f64; 2],
    /// Peak global drift in pixels per frame.
    pub ego_amplitude: f64,
    pub birth_rate: f64,
    pub death_rate: f64,
    /// Side lengths in pixels.
    pub box_size_range: [f64; 2],
    /// Class ids are drawn from `1..=num_classes`.
    pub num_classes: u32,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            num_targets: 20,
            num_frames: 200,
            image_w: 960.0,
            image_h: 540.0,
            speed_range: [0.5, 3.0],
            ego_amplitude: 1.0,
            birth_rate: 0.0,
            death_rate: 0.0,
            box_size_range: [20.0, 60.0],
            num_classes: 1,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        const W: &str = "scene config";
        check_range(W, "speed_range", self.speed_range, true)?;
        check_range(W, "box_size_range", self.box_size_range, false)?;
        check_probability(W, "birth_rate", self.birth_rate)?;
        check_probability(W, "death_rate", self.death_rate)?;
        if !(self.ego_amplitude >= 0.0 && self.ego_amplitude.is_finite()) {
            return Err(bad(W, "ego_amplitude must be finite and non-negative"));
        }
        if !(self.image_w > self.box_size_range[1] && self.image_h > self.box_size_range[1]) {
            return Err(bad(W, "image must be larger than the largest box"));
        }
        if self.num_classes == 0 {
            return Err(bad(W, "num_classes must be positive"));
        }
        Ok(())
    }

    /// Shared camera drift applied on frame `f`.
    pub fn ego_drift(&self, f: u32) -> (f64, f64) {
        let phase = TAU * f64::from(f) / EGO_PERIOD;
        (self.ego_amplitude * phase.sin(), 0.5 * self.ego_amplitude * phase.cos())
    }
}

#[derive(Debug, Clone)]
struct Mover {
    id: i64,
    class_id: i32,
    bbox: BBox,
    vx: f64,
    vy: f64,
}

fn spawn(id: i64, cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Mover {
    let [lo, hi] = cfg.box_size_range;
    let w = rng.random_range(lo..=hi);
    let h = rng.random_range(lo..=hi);
    let left = rng.random_range(0.0..=cfg.image_w - w);
    let top = rng.random_range(0.0..=cfg.image_h - h);
    let speed = rng.random_range(cfg.speed_range[0]..=cfg.speed_range[1]);
    let angle = rng.random_range(0.0..TAU);
    let class_id = rng.random_range(1..=cfg.num_classes) as i32;
    Mover {
        id,
        class_id,
        bbox: BBox::new(left, top, w, h),
        vx: speed * angle.cos(),
        vy: speed * angle.sin(),
    }
}

/// Reflects `pos` into `[0, span]`, flipping `vel` on each bounce.
fn reflect(pos: &mut f64, vel: &mut f64, span: f64) {
    if span <= 0.0 {
        *pos = 0.0;
        return;
    }
    for _ in 0..4 {
        if *pos < 0.0 {
            *pos = -*pos;
            *vel = -*vel;
        } else if *pos > span {
            *pos = 2.0 * span - *pos;
            *vel = -*vel;
        } else {
            return;
        }
    }
    *pos = pos.clamp(0.0, span);
}

impl Mover {
    fn advance(&mut self, drift: (f64, f64), cfg: &SceneConfig) {
        let mut left = self.bbox.left + self.vx + drift.0;
        let mut top = self.bbox.top + self.vy + drift.1;
        reflect(&mut left, &mut self.vx, cfg.image_w - self.bbox.width);
        reflect(&mut top, &mut self.vy, cfg.image_h - self.bbox.height);
        self.bbox.left = left;
        self.bbox.top = top;
    }
}

/// Ground truth for frames `1..=num_frames`; every frame has an entry.
pub fn generate_scene(cfg: &SceneConfig) -> Result<FrameMap<AnnotatedBox>, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut next_id = 1i64;
    let mut alive: Vec<Mover> = (0..cfg.num_targets)
        .map(|_| {
            next_id += 1;
            spawn(next_id - 1, cfg, &mut rng)
        })
        .collect();
    let mut out = FrameMap::new();
    for f in 1..=cfg.num_frames {
        if f > 1 {
            if cfg.death_rate > 0.0 {
                alive.retain(|_| !rng.random_bool(cfg.death_rate));
            }
            if cfg.birth_rate > 0.0 && rng.random_bool(cfg.birth_rate) {
                alive.push(spawn(next_id, cfg, &mut rng));
                next_id += 1;
            }
            let drift = cfg.ego_drift(f);
            for m in &mut alive {
                m.advance(drift, cfg);
            }
        }
        let boxes = alive
            .iter()
            .map(|m| AnnotatedBox::new(f, m.id, m.bbox, m.class_id))
            .collect();
        out.insert(f, boxes);
    }
    Ok(out)
}

/// Distinct ground-truth ids in ascending order.
pub fn gt_ids(gt: &FrameMap<AnnotatedBox>) -> Vec<i64> {
    let set: std::collections::BTreeSet<i64> = gt.values().flatten().map(|b| b.id).collect();
    set.into_iter().collect()
}

fn random_unit<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..dim).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
        if v.iter().any(|&x| x != 0.0) {
            return normalized(v);
        }
    }
}

/// Independent random unit vectors, one per id.
pub fn random_prototypes<R: Rng + ?Sized>(ids: &[i64], dim: usize, rng: &mut R) -> BTreeMap<i64, Vec<f32>> {
    ids.iter().map(|&id| (id, random_unit(dim, rng))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionConfig {
    pub miss_rate: f64,
    /// Probability that each ground-truth box spawns one false positive.
    pub fp_rate: f64,
    pub center_noise_sigma: f64,
    /// Per-component standard deviation added to the prototype.
    pub embed_noise_sigma: f64,
    pub score_true_mean: f64,
    pub score_fp_mean: f64,
    pub score_sigma: f64,
    pub seed: u64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            miss_rate: 0.05,
            fp_rate: 0.05,
            center_noise_sigma: 1.0,
            embed_noise_sigma: 0.1,
            score_true_mean: 0.8,
            score_fp_mean: 0.3,
            score_sigma: 0.1,
            seed: 1,
        }
    }
}

impl CorruptionConfig {
    /// No misses, no false positives, no noise.
    pub fn clean(seed: u64) -> Self {
        Self {
            miss_rate: 0.0,
            fp_rate: 0.0,
            center_noise_sigma: 0.0,
            embed_noise_sigma: 0.0,
            score_sigma: 0.0,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        const W: &str = "corruption config";
        check_probability(W, "miss_rate", self.miss_rate)?;
        check_probability(W, "fp_rate", self.fp_rate)?;
        check_probability(W, "score_true_mean", self.score_true_mean)?;
        check_probability(W, "score_fp_mean", self.score_fp_mean)?;
        for (name, s) in [
            ("center_noise_sigma", self.center_noise_sigma),
            ("embed_noise_sigma", self.embed_noise_sigma),
            ("score_sigma", self.score_sigma),
        ] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(bad(W, format!("{name} = {s} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

fn gaussian(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).expect("sigma validated as finite and non-negative")
}

/// Detector output simulated from ground truth. Within a frame, surviving
/// true detections come first in ground-truth order, followed by false
/// positives.
pub fn corrupt(
    gt: &FrameMap<AnnotatedBox>,
    cfg: &CorruptionConfig,
    prototypes: &BTreeMap<i64, Vec<f32>>,
) -> Result<FrameMap<Detection>, SynthError> {
    cfg.validate()?;
    let dim = prototypes.values().next().map_or(0, Vec::len);
    if prototypes.values().any(|p| p.len() != dim) {
        return Err(SynthError::Argument("prototypes differ in dimension".into()));
    }
    if let Some(b) = gt.values().flatten().find(|b| !prototypes.contains_key(&b.id)) {
        return Err(SynthError::MissingPrototype(b.id));
    }
    let (extent_x, extent_y) = gt.values().flatten().fold((0.0f64, 0.0f64), |(x, y), b| {
        (x.max(b.bbox.right()), y.max(b.bbox.bottom()))
    });

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let center = gaussian(cfg.center_noise_sigma);
    let embed = gaussian(cfg.embed_noise_sigma);
    let score = gaussian(cfg.score_sigma);
    let mut out = FrameMap::new();
    for (&f, boxes) in gt {
        let mut dets = Vec::new();
        let mut fps = Vec::new();
        for b in boxes {
            if cfg.miss_rate > 0.0 && rng.random_bool(cfg.miss_rate) {
            } else {
                let bbox = b.bbox.translated(center.sample(&mut rng), center.sample(&mut rng));
                let e = prototypes[&b.id]
                    .iter()
                    .map(|&p| (f64::from(p) + embed.sample(&mut rng)) as f32)
                    .collect();
                let s = (cfg.score_true_mean + score.sample(&mut rng)).clamp(0.0, 1.0);
                dets.push(Detection::new(bbox, s, b.class_id, e));
            }
            if cfg.fp_rate > 0.0 && rng.random_bool(cfg.fp_rate) {
                let left = rng.random_range(0.0..=(extent_x - b.bbox.width).max(0.0));
                let top = rng.random_range(0.0..=(extent_y - b.bbox.height).max(0.0));
                let bbox = BBox::new(left, top, b.bbox.width, b.bbox.height);
                let s = (cfg.score_fp_mean + score.sample(&mut rng)).clamp(0.0, 1.0);
                fps.push(Detection::new(bbox, s, b.class_id, random_unit(dim, &mut rng)));
            }
        }
        dets.extend(fps);
        out.insert(f, dets);
    }
    Ok(out)
}

/// Shape of the rendered training maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MapLayout {
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    pub stride: usize,
    pub embed_dim: usize,
    pub feature_channels: usize,
}

impl Default for MapLayout {
    fn default() -> Self {
        Self {
            classes: 2,
            height: 16,
            width: 24,
            stride: 4,
            embed_dim: 16,
            feature_channels: 64,
        }
    }
}

impl MapLayout {
    /// Input image size `(width, height)` in pixels.
    pub fn image_size(&self) -> (f64, f64) {
        ((self.width * self.stride) as f64, (self.height * self.stride) as f64)
    }

    fn validate(&self) -> Result<(), SynthError> {
        let dims = [
            self.classes,
            self.height,
            self.width,
            self.stride,
            self.embed_dim,
            self.feature_channels,
        ];
        if dims.contains(&0) {
            return Err(bad("map layout", format!("{self:?} has a zero dimension")));
        }
        Ok(())
    }
}

/// Maps rendered for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneMaps {
    pub fm: FeatureMap,
    pub hm: FeatureMap,
    pub idmap: FeatureMap,
    pub reg: RegTarget,
    /// `(y, x)` centre cell per object, in input order.
    pub id_centers: Vec<(usize, usize)>,
    /// Rank of each object's id among the prototype ids.
    pub id_labels: Vec<usize>,
}

impl SceneMaps {
    pub fn id_target(&self, classifier: Classifier) -> Result<IdTarget, SynthError> {
        Ok(IdTarget::new(
            self.id_centers.clone(),
            self.id_labels.clone(),
            classifier,
        )?)
    }
}

/// Splat radius such that a box displaced by it keeps `min_overlap` IOU.
pub fn gaussian_radius(height: f64, width: f64, min_overlap: f64) -> f64 {
    let (a1, b1) = (1.0, height + width);
    let c1 = width * height * (1.0 - min_overlap) / (1.0 + min_overlap);
    let r1 = (b1 + (b1 * b1 - 4.0 * a1 * c1).sqrt()) / 2.0;

    let (a2, b2) = (4.0, 2.0 * (height + width));
    let c2 = (1.0 - min_overlap) * width * height;
    let r2 = (b2 + (b2 * b2 - 4.0 * a2 * c2).sqrt()) / 2.0;

    let a3 = 4.0 * min_overlap;
    let b3 = -2.0 * min_overlap * (height + width);
    let c3 = (min_overlap - 1.0) * width * height;
    let r3 = (b3 + (b3 * b3 - 4.0 * a3 * c3).sqrt()) / 2.0;
    r1.min(r2).min(r3)
}

fn draw_splat(hm: &mut FeatureMap, c: usize, (cy, cx): (usize, usize), radius: usize) {
    let sigma = (2 * radius + 1) as f64 / 6.0;
    let (h, w) = (hm.height() as isize, hm.width() as isize);
    let r = radius as isize;
    for dy in -r..=r {
        for dx in -r..=r {
            let (y, x) = (cy as isize + dy, cx as isize + dx);
            if y < 0 || x < 0 || y >= h || x >= w {
                continue;
            }
            let g = if dx == 0 && dy == 0 {
                1.0
            } else {
                (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp() as f32
            };
            let (y, x) = (y as usize, x as usize);
            let cur = hm.get(c, y, x);
            if g > cur {
                hm.set(c, y, x, g).expect("splat value is finite");
            }
        }
    }
}

/// FNV-1a over the bytes of the frame content.
fn content_hash(boxes: &[AnnotatedBox]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    for b in boxes {
        eat(&b.frame.to_le_bytes());
        eat(&b.id.to_le_bytes());
        eat(&b.class_id.to_le_bytes());
        for v in [b.bbox.left, b.bbox.top, b.bbox.width, b.bbox.height] {
            eat(&v.to_bits().to_le_bytes());
        }
    }
    h
}

/// Smooth field in `[0, 1)` from a few random plane waves per channel,
/// mixed with the heatmap's per-cell maximum.
fn feature_field(layout: &MapLayout, seed: u64, hm: &FeatureMap) -> FeatureMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut waves = Vec::with_capacity(layout.feature_channels);
    for _ in 0..layout.feature_channels {
        let ch: Vec<[f64; 4]> = (0..FIELD_WAVES)
            .map(|_| {
                [
                    rng.random_range(-0.6..0.6),
                    rng.random_range(-0.6..0.6),
                    rng.random_range(0.0..TAU),
                    rng.random_range(0.2..1.0),
                ]
            })
            .collect();
        waves.push(ch);
    }
    let below_one = 1.0 - f32::EPSILON;
    FeatureMap::from_fn(layout.feature_channels, layout.height, layout.width, |c, y, x| {
        let (mut acc, mut amp) = (0.0, 0.0);
        for &[ky, kx, phase, a] in &waves[c] {
            acc += a * (ky * y as f64 + kx * x as f64 + phase).sin();
            amp += a;
        }
        let base = (0.5 + 0.5 * acc / amp) as f32;
        let peak = (0..hm.channels()).map(|k| hm.get(k, y, x)).fold(0.0f32, f32::max);
        ((1.0 - FIELD_IMPRINT) * base + FIELD_IMPRINT * peak).clamp(0.0, below_one)
    })
    .expect("layout validated and field values finite")
}

/// Heatmap, identity map, regression targets, and a feature field for one
/// frame. Centres falling outside the grid are clipped onto its border.
pub fn render_maps(
    frame: &[AnnotatedBox],
    prototypes: &BTreeMap<i64, Vec<f32>>,
    layout: &MapLayout,
) -> Result<SceneMaps, SynthError> {
    layout.validate()?;
    let stride = layout.stride as f64;
    let mut hm = FeatureMap::zeros(layout.classes, layout.height, layout.width);
    let mut idmap = FeatureMap::zeros(layout.embed_dim, layout.height, layout.width);
    let mut reg = RegTarget::default();
    let mut id_centers = Vec::with_capacity(frame.len());
    let mut id_labels = Vec::with_capacity(frame.len());
    let rank: BTreeMap<i64, usize> = prototypes.keys().enumerate().map(|(i, &id)| (id, i)).collect();

    for b in frame {
        let class = usize::try_from(b.class_id - 1)
            .ok()
            .filter(|&c| c < layout.classes)
            .ok_or_else(|| SynthError::Argument(format!("class {} outside 1..={}", b.class_id, layout.classes)))?;
        let proto = prototypes.get(&b.id).ok_or(SynthError::MissingPrototype(b.id))?;
        if proto.len() != layout.embed_dim {
            return Err(SynthError::Argument(format!(
                "prototype for id {} has {} dims, layout wants {}",
                b.id,
                proto.len(),
                layout.embed_dim
            )));
        }
        let (px, py) = b.bbox.center();
        let cx = (px / stride).clamp(0.0, layout.width as f64 - 1e-6);
        let cy = (py / stride).clamp(0.0, layout.height as f64 - 1e-6);
        let (ix, iy) = (cx.floor() as usize, cy.floor() as usize);
        let (ws, hs) = (b.bbox.width / stride, b.bbox.height / stride);
        let radius = gaussian_radius(hs.ceil(), ws.ceil(), SPLAT_MIN_OVERLAP)
            .floor()
            .max(0.0) as usize;
        draw_splat(&mut hm, class, (iy, ix), radius);
        for (d, &v) in proto.iter().enumerate() {
            idmap.set(d, iy, ix, v).expect("prototype values are finite");
        }
        reg.centers.push((iy, ix));
        reg.offsets.push([(cx - ix as f64) as f32, (cy - iy as f64) as f32]);
        reg.sizes.push([ws as f32, hs as f32]);
        id_centers.push((iy, ix));
        id_labels.push(rank[&b.id]);
    }
    let fm = feature_field(layout, content_hash(frame), &hm);
    Ok(SceneMaps {
        fm,
        hm,
        idmap,
        reg,
        id_centers,
        id_labels,
    })
}

/// Two frame numbers `(t - δ, t)` with `δ` uniform in `1..=max_interval`,
/// taken over the stored frame order.
pub fn sample_training_pair<T, R: Rng + ?Sized>(
    gt: &FrameMap<T>,
    max_interval: usize,
    rng: &mut R,
) -> Result<(u32, u32), SynthError> {
    if max_interval == 0 {
        return Err(SynthError::Argument("max_interval must be at least 1".into()));
    }
    if gt.len() <= max_interval {
        return Err(SynthError::Argument(format!(
            "sequence of {} frames is too short for interval {max_interval}",
            gt.len()
        )));
    }
    let frames: Vec<u32> = gt.keys().copied().collect();
    let delta = rng.random_range(1..=max_interval);
    let t = rng.random_range(delta..frames.len());
    Ok((frames[t - delta], frames[t]))
}
