//! Limited-lifetime random-dot kinematograms and the shape identification
//! trials built on them.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::shape::StarShape;
use crate::volume::{Mask, VideoVolume};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dot {
    pub x: f64,
    pub y: f64,
    pub age: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DotField {
    pub dots: Vec<Dot>,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DotConfig {
    pub n_dots: usize,
    /// Frames a dot survives before respawning; `None` never expires.
    pub lifetime: Option<u32>,
    pub dot_radius: f64,
}

impl Default for DotConfig {
    fn default() -> Self {
        DotConfig {
            n_dots: 500,
            lifetime: Some(8),
            dot_radius: 1.5,
        }
    }
}

fn random_position<R: Rng + ?Sized>(rng: &mut R, height: usize, width: usize) -> (f64, f64) {
    (
        rng.random_range(0.0..width as f64),
        rng.random_range(0.0..height as f64),
    )
}

pub fn init_dots<R: Rng + ?Sized>(
    n: usize,
    height: usize,
    width: usize,
    lifetime: Option<u32>,
    rng: &mut R,
) -> Result<DotField> {
    if n == 0 || height == 0 || width == 0 {
        return Err(Error::Config("dot field needs n >= 1 and a non-empty extent".into()));
    }
    if lifetime == Some(0) {
        return Err(Error::Config("dot lifetime must be >= 1".into()));
    }
    let dots = (0..n)
        .map(|_| {
            let (x, y) = random_position(rng, height, width);
            let age = lifetime.map_or(0, |l| rng.random_range(0..l));
            Dot { x, y, age }
        })
        .collect();
    Ok(DotField {
        dots,
        height,
        width,
    })
}

/// Move every dot by the flow at its position; expired or escaped dots
/// respawn uniformly with age 0.
pub fn advance_dots<R: Rng + ?Sized>(
    field: &DotField,
    flow: &FlowField,
    lifetime: Option<u32>,
    rng: &mut R,
) -> Result<DotField> {
    let (h, w) = (field.height, field.width);
    if flow.dim() != (h, w) {
        return Err(Error::Shape(format!(
            "flow is {:?}, dot field is {:?}",
            flow.dim(),
            (h, w)
        )));
    }
    let dots = field
        .dots
        .iter()
        .map(|d| {
            let (u, v) = flow.sample(d.x, d.y);
            let (x, y) = (d.x + u, d.y + v);
            let age = d.age + 1;
            let expired = lifetime.is_some_and(|l| age >= l);
            let escaped = !(x >= 0.0 && x < w as f64 && y >= 0.0 && y < h as f64);
            if expired || escaped {
                let (x, y) = random_position(rng, h, w);
                Dot { x, y, age: 0 }
            } else {
                Dot { x, y, age }
            }
        })
        .collect();
    Ok(DotField {
        dots,
        height: h,
        width: w,
    })
}

const SUPERSAMPLE: usize = 8;

/// Anti-aliased white discs on black; overlapping dots saturate at 1.
pub fn render_dots(field: &DotField, radius: f64) -> Result<Array2<f64>> {
    if !(radius >= 0.5) {
        return Err(Error::Config(format!("dot radius {radius} is below 0.5 px")));
    }
    let (h, w) = (field.height, field.width);
    let mut img = Array2::<f64>::zeros((h, w));
    let r2 = radius * radius;
    let step = 1.0 / SUPERSAMPLE as f64;
    let norm = 1.0 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
    for d in &field.dots {
        let x0 = (d.x - radius - 0.5).floor().max(0.0) as usize;
        let y0 = (d.y - radius - 0.5).floor().max(0.0) as usize;
        let x1 = ((d.x + radius + 0.5).ceil() as usize).min(w.saturating_sub(1));
        let y1 = ((d.y + radius + 0.5).ceil() as usize).min(h.saturating_sub(1));
        for py in y0..=y1 {
            for px in x0..=x1 {
                let mut hits = 0usize;
                for sy in 0..SUPERSAMPLE {
                    let dy = py as f64 - 0.5 + (sy as f64 + 0.5) * step - d.y;
                    for sx in 0..SUPERSAMPLE {
                        let dx = px as f64 - 0.5 + (sx as f64 + 0.5) * step - d.x;
                        if dx * dx + dy * dy <= r2 {
                            hits += 1;
                        }
                    }
                }
                let c = hits as f64 * norm;
                let cell = &mut img[[py, px]];
                if c > *cell {
                    *cell = c;
                }
            }
        }
    }
    Ok(img)
}

/// Dot fields for `flows.len() + 1` frames advected by the given motion.
pub fn kinematogram_fields<R: Rng + ?Sized>(
    flows: &[FlowField],
    config: &DotConfig,
    rng: &mut R,
) -> Result<Vec<DotField>> {
    let first = flows
        .first()
        .ok_or_else(|| Error::MissingData("kinematogram needs at least one flow field".into()))?;
    let (h, w) = first.dim();
    let mut fields = Vec::with_capacity(flows.len() + 1);
    fields.push(init_dots(config.n_dots, h, w, config.lifetime, rng)?);
    for flow in flows {
        let next = advance_dots(fields.last().expect("nonempty"), flow, config.lifetime, rng)?;
        fields.push(next);
    }
    Ok(fields)
}

fn render_fields(fields: &[DotField], radius: f64) -> Result<VideoVolume> {
    let frames = fields
        .iter()
        .map(|f| render_dots(f, radius))
        .collect::<Result<Vec<_>>>()?;
    VideoVolume::from_frames(&frames, 30.0)
}

/// Dot stimulus with `flows.len() + 1` frames that carries the given motion.
pub fn make_kinematogram<R: Rng + ?Sized>(
    flows: &[FlowField],
    config: &DotConfig,
    rng: &mut R,
) -> Result<VideoVolume> {
    render_fields(&kinematogram_fields(flows, config, rng)?, config.dot_radius)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShapeTrialConfig {
    pub height: usize,
    pub width: usize,
    pub duration_frames: usize,
    pub frame_rate: f64,
    pub speed_range: (f64, f64),
    /// Overrides the sampled speed (psychometric sweeps).
    pub fixed_speed: Option<f64>,
    pub background_velocity: [f64; 2],
    pub shape_radius: (f64, f64),
    pub shape_vertices: (usize, usize),
    pub dots: DotConfig,
}

impl Default for ShapeTrialConfig {
    fn default() -> Self {
        ShapeTrialConfig {
            height: 64,
            width: 64,
            duration_frames: 30,
            frame_rate: 30.0,
            speed_range: (0.5, 1.5),
            fixed_speed: None,
            background_velocity: [0.0, 0.0],
            shape_radius: (0.2, 0.3),
            shape_vertices: (8, 16),
            dots: DotConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Choice {
    Target,
    Distractor,
}

#[derive(Debug, Clone)]
pub struct ShapeTrial {
    pub seed: u64,
    pub target: StarShape,
    pub distractor: StarShape,
    pub motion_direction: f64,
    pub speed: f64,
    pub start: [f64; 2],
    pub stimulus: VideoVolume,
    /// Dot positions per frame.
    pub dots: Vec<DotField>,
    /// Ground-truth target mask per frame.
    pub masks: Vec<Mask>,
    pub correct_choice: Choice,
}

impl ShapeTrial {
    pub fn center(&self, t: usize) -> [f64; 2] {
        [
            self.start[0] + t as f64 * self.speed * self.motion_direction.cos(),
            self.start[1] + t as f64 * self.speed * self.motion_direction.sin(),
        ]
    }

    pub fn height(&self) -> usize {
        self.stimulus.height()
    }

    pub fn width(&self) -> usize {
        self.stimulus.width()
    }

    /// Target and distractor outlines placed at the frame-`t` position.
    pub fn candidate_masks(&self, t: usize) -> (Mask, Mask) {
        let c = self.center(t);
        let (h, w) = (self.height(), self.width());
        (
            self.target.rasterize(h, w, c),
            self.distractor.rasterize(h, w, c),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMetadata {
    pub seed: u64,
    pub motion_direction: f64,
    pub speed: f64,
    pub target_shape: StarShape,
    pub distractor_shape: StarShape,
    pub correct_choice: Choice,
}

impl From<&ShapeTrial> for TrialMetadata {
    fn from(t: &ShapeTrial) -> Self {
        TrialMetadata {
            seed: t.seed,
            motion_direction: t.motion_direction,
            speed: t.speed,
            target_shape: t.target.clone(),
            distractor_shape: t.distractor.clone(),
            correct_choice: t.correct_choice,
        }
    }
}

fn sample_outline<R: Rng + ?Sized>(rng: &mut R, config: &ShapeTrialConfig) -> StarShape {
    let min_dim = config.height.min(config.width) as f64;
    let radius = min_dim * rng.random_range(config.shape_radius.0..=config.shape_radius.1);
    let n = rng.random_range(config.shape_vertices.0..=config.shape_vertices.1);
    StarShape::sample(rng, radius, n)
}

pub fn make_shape_trial(seed: u64, config: &ShapeTrialConfig) -> Result<ShapeTrial> {
    let (lo, hi) = config.speed_range;
    if !(lo > 0.0 && lo <= hi) {
        return Err(Error::Config(format!("speed range {:?} must be positive", config.speed_range)));
    }
    if let Some(s) = config.fixed_speed {
        if !(s >= lo && s <= hi) {
            return Err(Error::Config(format!(
                "fixed speed {s} lies outside the allowed range {:?}",
                config.speed_range
            )));
        }
    }
    if config.duration_frames < 2 {
        return Err(Error::Config("a trial needs at least 2 frames".into()));
    }
    let (r_lo, r_hi) = config.shape_radius;
    if !(r_lo > 0.0 && r_lo <= r_hi && r_hi <= 0.5) {
        return Err(Error::Config(format!("shape radius range {:?}", config.shape_radius)));
    }
    let (v_lo, v_hi) = config.shape_vertices;
    if v_lo < 3 || v_lo > v_hi {
        return Err(Error::Config("vertex range must satisfy 3 <= lo <= hi".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = sample_outline(&mut rng, config);
    let mut distractor = sample_outline(&mut rng, config);
    while distractor == target {
        distractor = sample_outline(&mut rng, config);
    }
    let motion_direction = rng.random_range(0.0..std::f64::consts::TAU);
    let speed = match config.fixed_speed {
        Some(s) => s,
        None => rng.random_range(lo..=hi),
    };
    let (h, w) = (config.height, config.width);
    let mid_t = (config.duration_frames - 1) as f64 / 2.0;
    let frame_center = [(w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0];
    let start = [
        frame_center[0] - mid_t * speed * motion_direction.cos(),
        frame_center[1] - mid_t * speed * motion_direction.sin(),
    ];
    let vel = [speed * motion_direction.cos(), speed * motion_direction.sin()];
    let center = |t: usize| [start[0] + t as f64 * vel[0], start[1] + t as f64 * vel[1]];
    let masks: Vec<Mask> = (0..config.duration_frames)
        .map(|t| target.rasterize(h, w, center(t)))
        .collect();
    let [bu, bv] = config.background_velocity.map(|x| x as f32);
    let [su, sv] = vel.map(|x| x as f32);
    let flows: Vec<FlowField> = masks[..config.duration_frames - 1]
        .iter()
        .map(|m| FlowField {
            u: m.mapv(|i| if i { su } else { bu }),
            v: m.mapv(|i| if i { sv } else { bv }),
        })
        .collect();
    let dots = kinematogram_fields(&flows, &config.dots, &mut rng)?;
    let stimulus = render_fields(&dots, config.dots.dot_radius)?;
    let stimulus = VideoVolume::new(stimulus.into_frames(), config.frame_rate)?;
    Ok(ShapeTrial {
        seed,
        target,
        distractor,
        motion_direction,
        speed,
        start,
        stimulus,
        dots,
        masks,
        correct_choice: Choice::Target,
    })
}
