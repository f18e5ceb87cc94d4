//! Procedural training videos: one textured star-shaped object translating
//! over a translating textured background, with analytic flow and masks.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dots::{make_kinematogram, DotConfig};
use crate::error::{Error, Result};
use crate::flow::{read_flo, write_flo, FlowField};
use crate::image_io::{read_gray_png, read_mask_png, write_gray_png, write_mask_png};
use crate::shape::StarShape;
use crate::texture::{Texture, COARSE_CELL};
use crate::volume::{Mask, VideoVolume};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub duration_frames: usize,
    pub frame_rate: f64,
    /// Bound on both layer speeds, pixels/frame. Long clips lower it further
    /// so the shape stays in view.
    pub max_speed: f64,
    /// Minimum |shape velocity - background velocity|.
    pub min_relative_speed: f64,
    /// Shape radius range as a fraction of `min(height, width)`.
    pub shape_radius: (f64, f64),
    pub shape_vertices: (usize, usize),
    pub texture_period: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            height: 64,
            width: 64,
            duration_frames: 90,
            frame_rate: 30.0,
            max_speed: 4.0,
            min_relative_speed: 0.5,
            shape_radius: (0.18, 0.3),
            shape_vertices: (8, 16),
            texture_period: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub seed: u64,
    pub outline: StarShape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub background_texture_seed: u64,
    pub foreground_texture_seed: u64,
    pub texture_period: usize,
    pub background_velocity: [f64; 2],
    pub shape: ShapeSpec,
    /// Shape center at frame 0, `(x, y)`.
    pub shape_start: [f64; 2],
    pub shape_velocity: [f64; 2],
    pub duration_frames: usize,
    pub height: usize,
    pub width: usize,
    pub frame_rate: f64,
}

impl SceneSpec {
    pub fn shape_center(&self, t: usize) -> [f64; 2] {
        [
            self.shape_start[0] + t as f64 * self.shape_velocity[0],
            self.shape_start[1] + t as f64 * self.shape_velocity[1],
        ]
    }

    pub fn mask(&self, t: usize) -> Mask {
        self.shape
            .outline
            .rasterize(self.height, self.width, self.shape_center(t))
    }
}

/// Flow `t -> t+1` for every frame but the last, and a mask for every frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub flows: Vec<FlowField>,
    pub masks: Vec<Mask>,
}

pub fn sample_scene(seed: u64, config: &SceneConfig) -> Result<SceneSpec> {
    let (h, w) = (config.height, config.width);
    let min_dim = h.min(w) as f64;
    let (r_lo, r_hi) = config.shape_radius;
    if !(r_lo > 0.0 && r_lo <= r_hi) || r_hi * 2.0 > 1.0 {
        return Err(Error::Config(format!(
            "shape radius range {:?} does not fit inside the frame",
            config.shape_radius
        )));
    }
    if config.duration_frames < 2 || h < 4 || w < 4 {
        return Err(Error::Config("scene needs >= 2 frames of at least 4x4".into()));
    }
    if config.max_speed < 0.0 || config.min_relative_speed > 2.0 * config.max_speed {
        return Err(Error::Config("speed bounds are infeasible".into()));
    }
    let (v_lo, v_hi) = config.shape_vertices;
    if v_lo < 3 || v_lo > v_hi {
        return Err(Error::Config("vertex range must satisfy 3 <= lo <= hi".into()));
    }

    if config.texture_period == 0 || config.texture_period % COARSE_CELL != 0 {
        return Err(Error::Config(format!(
            "texture period {} must be a positive multiple of {COARSE_CELL}",
            config.texture_period
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let background_texture_seed = rng.next_u64();
    let foreground_texture_seed = rng.next_u64();
    let shape_seed = rng.next_u64();
    let radius = min_dim * rng.random_range(r_lo..=r_hi);
    let n_vertices = rng.random_range(v_lo..=v_hi);
    let outline = StarShape::sample(&mut ChaCha8Rng::seed_from_u64(shape_seed), radius, n_vertices);
    // the polygon's inscribed disc is well above half its smallest vertex
    // radius, so a center this far outside still leaves pixels covered
    let slack = 0.5 * outline.min_radius();
    let span = (config.duration_frames - 1) as f64;
    let (lo_x, hi_x) = (-slack, w as f64 - 1.0 + slack);
    let (lo_y, hi_y) = (-slack, h as f64 - 1.0 + slack);

    for _ in 0..1000 {
        let mid = [
            rng.random_range(0.25 * w as f64..0.75 * w as f64),
            rng.random_range(0.25 * h as f64..0.75 * h as f64),
        ];
        // long clips cap the shape speed so the whole trajectory stays in view
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let dir = [theta.cos(), theta.sin()];
        let reach = |p: f64, d: f64, lo: f64, hi: f64| {
            if d.abs() < 1e-12 {
                f64::INFINITY
            } else {
                ((hi - p) / d).abs().min(((p - lo) / d).abs())
            }
        };
        let s_fit = reach(mid[0], dir[0], lo_x, hi_x).min(reach(mid[1], dir[1], lo_y, hi_y)) / (span / 2.0);
        let s_max = config.max_speed.min(s_fit);
        let speed = rng.random_range(0.0..=s_max);
        let shape_velocity = [speed * dir[0], speed * dir[1]];
        // same speed law for both layers, so speed alone never marks the figure
        let bg_speed = rng.random_range(0.0..=s_max);
        let bg_theta = rng.random_range(0.0..std::f64::consts::TAU);
        let background_velocity = [bg_speed * bg_theta.cos(), bg_speed * bg_theta.sin()];
        let rel = ((shape_velocity[0] - background_velocity[0]).powi(2)
            + (shape_velocity[1] - background_velocity[1]).powi(2))
        .sqrt();
        if rel < config.min_relative_speed {
            continue;
        }
        let start = [
            mid[0] - shape_velocity[0] * span / 2.0,
            mid[1] - shape_velocity[1] * span / 2.0,
        ];
        return Ok(SceneSpec {
            seed,
            background_texture_seed,
            foreground_texture_seed,
            texture_period: config.texture_period,
            background_velocity,
            shape: ShapeSpec {
                seed: shape_seed,
                outline,
            },
            shape_start: start,
            shape_velocity,
            duration_frames: config.duration_frames,
            height: h,
            width: w,
            frame_rate: config.frame_rate,
        });
    }
    Err(Error::Config(
        "could not place a trajectory that keeps the shape in frame".into(),
    ))
}

pub fn render_scene(spec: &SceneSpec) -> Result<(VideoVolume, GroundTruth)> {
    let (t_len, h, w) = (spec.duration_frames, spec.height, spec.width);
    let bg = Texture::value_noise(spec.background_texture_seed, spec.texture_period)?;
    let fg = Texture::value_noise(spec.foreground_texture_seed, spec.texture_period)?;
    let masks: Vec<Mask> = (0..t_len).map(|t| spec.mask(t)).collect();
    let mut frames = Array3::zeros((t_len, h, w));
    for t in 0..t_len {
        let c = spec.shape_center(t);
        let tb = [
            t as f64 * spec.background_velocity[0],
            t as f64 * spec.background_velocity[1],
        ];
        for y in 0..h {
            for x in 0..w {
                let (xf, yf) = (x as f64, y as f64);
                frames[[t, y, x]] = if masks[t][[y, x]] {
                    fg.sample(xf - c[0], yf - c[1])
                } else {
                    bg.sample(xf - tb[0], yf - tb[1])
                };
            }
        }
    }
    let [su, sv] = spec.shape_velocity.map(|v| v as f32);
    let [bu, bv] = spec.background_velocity.map(|v| v as f32);
    let flows = masks[..t_len - 1]
        .iter()
        .map(|m| FlowField {
            u: m.mapv(|inside| if inside { su } else { bu }),
            v: m.mapv(|inside| if inside { sv } else { bv }),
        })
        .collect();
    Ok((VideoVolume::new(frames, spec.frame_rate)?, GroundTruth { flows, masks }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub split: Split,
    pub video_dir: String,
}

/// Line-oriented `<split>\t<video_dir>` listing, `video_dir` relative to
/// the manifest's directory.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.txt";

impl Manifest {
    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{}\t{}\n", e.split.as_str(), e.video_dir))
            .collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (split, dir) = line
                .split_once('\t')
                .ok_or_else(|| Error::Format(format!("manifest line {}: missing tab", i + 1)))?;
            let split = match split {
                "train" => Split::Train,
                "test" => Split::Test,
                other => {
                    return Err(Error::Format(format!(
                        "manifest line {}: unknown split `{other}`",
                        i + 1
                    )))
                }
            };
            entries.push(ManifestEntry {
                split,
                video_dir: dir.to_string(),
            });
        }
        Ok(Manifest { entries })
    }

    pub fn read(root: impl AsRef<Path>) -> Result<Self> {
        let path = root.as_ref().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::parse(&text)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }
}

/// `(train, test)` counts: the last `floor(n * test_fraction)` videos are
/// held out.
pub fn split_counts(n: usize, test_fraction: f64) -> (usize, usize) {
    let test = ((n as f64 * test_fraction) + 1e-9).floor() as usize;
    let test = test.min(n);
    (n - test, test)
}

/// Train/test assignment for `n` generated videos, test videos last.
pub fn plan_manifest(n: usize, test_fraction: f64) -> Manifest {
    let (train, _) = split_counts(n, test_fraction);
    Manifest {
        entries: (0..n)
            .map(|i| ManifestEntry {
                split: if i < train { Split::Train } else { Split::Test },
                video_dir: video_dir_name(i),
            })
            .collect(),
    }
}

pub fn video_dir_name(i: usize) -> String {
    format!("video_{i:05}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WriteOptions {
    pub test_fraction: f64,
    /// Also render a random-dot counterpart (`dots/`) for these splits.
    pub dots_for_train: bool,
    pub dots_for_test: bool,
    pub dots: DotConfig,
    pub dot_seed: u64,
}

impl Default for WriteOptions {
    fn default() -> Self {
        WriteOptions {
            test_fraction: 0.1,
            dots_for_train: false,
            dots_for_test: true,
            dots: DotConfig::default(),
            dot_seed: 0,
        }
    }
}

/// Ground-truth flow; `flow/` and `dots_flow/` are reserved for flow
/// predictions supplied by external models.
pub const GT_FLOW_DIR: &str = "gt_flow";
pub const PRED_FLOW_DIR: &str = "flow";
pub const PRED_DOTS_FLOW_DIR: &str = "dots_flow";

/// Which rendering of a test video is shown to a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Original,
    RandomDots,
}

impl Condition {
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Original => "original",
            Condition::RandomDots => "random_dots",
        }
    }
}

impl std::str::FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "original" => Ok(Condition::Original),
            "random_dots" | "dots" => Ok(Condition::RandomDots),
            other => Err(Error::Config(format!("unknown condition `{other}`"))),
        }
    }
}

pub fn frame_name(t: usize) -> String {
    format!("{t:05}.png")
}

pub fn flow_name(t: usize) -> String {
    format!("{t:05}.flo")
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_dots(dir: &Path, index: usize, flows: &[FlowField], opts: &WriteOptions) -> Result<()> {
    mkdir(&dir.join("dots"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.dot_seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let dots = make_kinematogram(flows, &opts.dots, &mut rng)?;
    for t in 0..dots.len() {
        write_gray_png(&dots.frame(t).to_owned(), dir.join("dots").join(frame_name(t)))?;
    }
    Ok(())
}

/// (Re)write the random-dot counterparts of every video in `splits` from
/// its stored ground-truth flow. Returns the number of videos written.
pub fn write_random_dots(root: impl AsRef<Path>, splits: &[Split], opts: &WriteOptions) -> Result<usize> {
    let root = root.as_ref();
    let manifest = Manifest::read(root)?;
    let todo: Vec<(usize, &ManifestEntry)> = manifest
        .entries
        .iter()
        .enumerate()
        .filter(|(_, e)| splits.contains(&e.split))
        .collect();
    todo.par_iter()
        .map(|&(i, e)| {
            let dir = root.join(&e.video_dir);
            let flows = read_flows(&dir.join(GT_FLOW_DIR))?;
            if flows.is_empty() {
                return Err(Error::MissingData(format!("no ground-truth flow in {}", dir.display())));
            }
            write_dots(&dir, i, &flows, opts)
        })
        .collect::<Result<Vec<()>>>()?;
    Ok(todo.len())
}

fn write_one(root: &Path, entry: &ManifestEntry, index: usize, spec: &SceneSpec, opts: &WriteOptions) -> Result<()> {
    let dir = root.join(&entry.video_dir);
    for sub in ["frames", "masks", GT_FLOW_DIR] {
        mkdir(&dir.join(sub))?;
    }
    let (video, gt) = render_scene(spec)?;
    for t in 0..video.len() {
        write_gray_png(&video.frame(t).to_owned(), dir.join("frames").join(frame_name(t)))?;
        write_mask_png(&gt.masks[t], dir.join("masks").join(frame_name(t)))?;
    }
    for (t, f) in gt.flows.iter().enumerate() {
        write_flo(f, dir.join(GT_FLOW_DIR).join(flow_name(t)))?;
    }
    let want_dots = match entry.split {
        Split::Train => opts.dots_for_train,
        Split::Test => opts.dots_for_test,
    };
    if want_dots {
        write_dots(&dir, index, &gt.flows, opts)?;
    }
    let json = serde_json::to_string_pretty(spec)?;
    fs::write(dir.join("scene.json"), json).map_err(|e| Error::io(dir.join("scene.json"), e))
}

/// Render `scenes` under `root` and write the manifest.
pub fn write_dataset(scenes: &[SceneSpec], root: impl AsRef<Path>, opts: &WriteOptions) -> Result<Manifest> {
    let root = root.as_ref();
    mkdir(root)?;
    let manifest = plan_manifest(scenes.len(), opts.test_fraction);
    manifest
        .entries
        .par_iter()
        .zip(scenes.par_iter())
        .enumerate()
        .map(|(i, (entry, spec))| write_one(root, entry, i, spec, opts))
        .collect::<Result<Vec<()>>>()?;
    let path = root.join(MANIFEST_FILE);
    fs::write(&path, manifest.to_text()).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Generate and write `n` scenes with seeds derived from `seed`.
pub fn generate_dataset(
    n: usize,
    seed: u64,
    config: &SceneConfig,
    root: impl AsRef<Path>,
    opts: &WriteOptions,
) -> Result<Manifest> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = (0..n).map(|_| rng.next_u64()).collect();
    let scenes = seeds
        .iter()
        .map(|&s| sample_scene(s, config))
        .collect::<Result<Vec<_>>>()?;
    write_dataset(&scenes, root, opts)
}

/// A video of a written dataset, loaded back from disk.
#[derive(Debug, Clone)]
pub struct StoredVideo {
    pub dir: PathBuf,
    pub video: VideoVolume,
    pub masks: Vec<Mask>,
    pub gt_flows: Vec<FlowField>,
    pub dots: Option<VideoVolume>,
}

fn count_files(dir: &Path, ext: &str) -> usize {
    fs::read_dir(dir)
        .map(|rd| {
            rd.filter_map(|e| e.ok())
                .filter(|e| e.path().extension().is_some_and(|x| x == ext))
                .count()
        })
        .unwrap_or(0)
}

/// Read `00000.png, 00001.png, ...` from `dir` as a video.
pub fn read_sequence(dir: &Path, frame_rate: f64) -> Result<VideoVolume> {
    let n = count_files(dir, "png");
    if n == 0 {
        return Err(Error::MissingData(format!("no frames in {}", dir.display())));
    }
    let frames = (0..n)
        .map(|t| read_gray_png(dir.join(frame_name(t))))
        .collect::<Result<Vec<Array2<f64>>>>()?;
    VideoVolume::from_frames(&frames, frame_rate)
}

fn read_flows(dir: &Path) -> Result<Vec<FlowField>> {
    (0..count_files(dir, "flo"))
        .map(|t| read_flo(dir.join(flow_name(t))))
        .collect()
}

impl StoredVideo {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let spec: SceneSpec = {
            let p = dir.join("scene.json");
            let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            serde_json::from_str(&text)?
        };
        let video = read_sequence(&dir.join("frames"), spec.frame_rate)?;
        let masks = (0..video.len())
            .map(|t| read_mask_png(dir.join("masks").join(frame_name(t))))
            .collect::<Result<Vec<_>>>()?;
        let gt_flows = read_flows(&dir.join(GT_FLOW_DIR))?;
        let dots = if dir.join("dots").is_dir() {
            Some(read_sequence(&dir.join("dots"), spec.frame_rate)?)
        } else {
            None
        };
        Ok(StoredVideo {
            dir,
            video,
            masks,
            gt_flows,
            dots,
        })
    }

    /// Frames shown under `condition`.
    pub fn frames(&self, condition: Condition) -> Result<&VideoVolume> {
        match condition {
            Condition::Original => Ok(&self.video),
            Condition::RandomDots => self.dots.as_ref().ok_or_else(|| {
                Error::MissingData(format!("{} has no random-dot counterpart", self.dir.display()))
            }),
        }
    }

    /// Externally predicted flows (`t -> t+1`) for `condition`, if present.
    pub fn predicted_flows(&self, condition: Condition) -> Result<Option<Vec<FlowField>>> {
        let sub = match condition {
            Condition::Original => PRED_FLOW_DIR,
            Condition::RandomDots => PRED_DOTS_FLOW_DIR,
        };
        let dir = self.dir.join(sub);
        if !dir.is_dir() {
            return Ok(None);
        }
        read_flows(&dir).map(Some)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::bilinear;
    use crate::volume::mask_area;

    fn small_config() -> SceneConfig {
        SceneConfig {
            height: 40,
            width: 48,
            duration_frames: 12,
            max_speed: 2.0,
            ..Default::default()
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let c = small_config();
        assert_eq!(sample_scene(9, &c).unwrap(), sample_scene(9, &c).unwrap());
        assert_ne!(sample_scene(9, &c).unwrap(), sample_scene(10, &c).unwrap());
    }

    #[test]
    fn default_duration_is_kept() {
        let c = SceneConfig {
            duration_frames: 90,
            max_speed: 0.5,
            ..Default::default()
        };
        let s = sample_scene(1, &c).unwrap();
        assert_eq!(s.duration_frames, 90);
        assert_eq!(s.frame_rate, 30.0);
    }

    #[test]
    fn relative_speed_respected() {
        let c = small_config();
        for seed in 0..50 {
            let s = sample_scene(seed, &c).unwrap();
            let rel = ((s.shape_velocity[0] - s.background_velocity[0]).powi(2)
                + (s.shape_velocity[1] - s.background_velocity[1]).powi(2))
            .sqrt();
            assert!(rel >= 0.5);
            let speed = |v: [f64; 2]| (v[0] * v[0] + v[1] * v[1]).sqrt();
            assert!(speed(s.shape_velocity) <= 2.0 && speed(s.background_velocity) <= 2.0);
            for t in 0..s.duration_frames {
                assert!(mask_area(&s.mask(t)) > 0, "seed {seed} frame {t}");
            }
        }
    }

    #[test]
    fn speed_does_not_mark_the_figure() {
        let c = SceneConfig::default();
        let speed = |v: [f64; 2]| v[0].hypot(v[1]);
        let n = 400;
        let slower = (0..n)
            .filter(|&seed| {
                let s = sample_scene(seed, &c).unwrap();
                speed(s.shape_velocity) < speed(s.background_velocity)
            })
            .count();
        let frac = slower as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.1, "shape slower in {frac:.2} of scenes");
    }

    #[test]
    fn degenerate_speeds_only_when_configured() {
        let c = SceneConfig {
            max_speed: 0.0,
            min_relative_speed: 0.0,
            ..small_config()
        };
        let s = sample_scene(3, &c).unwrap();
        assert_eq!(s.shape_velocity, s.background_velocity);
    }

    #[test]
    fn oversized_shape_is_rejected() {
        let c = SceneConfig {
            shape_radius: (0.4, 0.6),
            ..small_config()
        };
        assert!(matches!(sample_scene(0, &c), Err(Error::Config(_))));
    }

    #[test]
    fn static_scene_renders_identical_frames() {
        let mut s = sample_scene(4, &small_config()).unwrap();
        s.shape_velocity = [0.0, 0.0];
        s.background_velocity = [0.0, 0.0];
        let (video, gt) = render_scene(&s).unwrap();
        for t in 1..video.len() {
            assert_eq!(video.frame(t), video.frame(0));
        }
        assert!(gt.flows.iter().all(|f| f.u.iter().chain(f.v.iter()).all(|&x| x == 0.0)));
    }

    #[test]
    fn layered_flow_is_analytic() {
        let mut s = sample_scene(5, &small_config()).unwrap();
        s.shape_velocity = [2.0, 0.0];
        s.background_velocity = [-1.0, 0.0];
        s.shape_start = [10.0, 20.0];
        s.duration_frames = 6;
        let (_, gt) = render_scene(&s).unwrap();
        assert_eq!(gt.flows.len(), 5);
        for (t, f) in gt.flows.iter().enumerate() {
            for ((y, x), &inside) in gt.masks[t].indexed_iter() {
                let expect = if inside { (2.0, 0.0) } else { (-1.0, 0.0) };
                assert_eq!((f.u[[y, x]], f.v[[y, x]]), expect);
            }
        }
    }

    #[test]
    fn mask_area_constant_while_inside() {
        let mut s = sample_scene(6, &small_config()).unwrap();
        s.shape_velocity = [1.0, 0.0];
        s.shape_start = [16.0, 20.0];
        s.duration_frames = 8;
        let (_, gt) = render_scene(&s).unwrap();
        let a0 = mask_area(&gt.masks[0]);
        assert!(gt.masks.iter().all(|m| mask_area(m) == a0));
    }

    #[test]
    fn warping_reproduces_next_frame() {
        for seed in 0..4 {
            let s = sample_scene(seed, &small_config()).unwrap();
            let (video, gt) = render_scene(&s).unwrap();
            let (h, w) = (s.height, s.width);
            for t in 0..video.len() - 1 {
                let next = video.frame(t + 1);
                let (mut err, mut n) = (0.0, 0usize);
                for y in 1..h - 1 {
                    for x in 1..w - 1 {
                        let (u, v) = (gt.flows[t].u[[y, x]] as f64, gt.flows[t].v[[y, x]] as f64);
                        let (sx, sy) = (x as f64 + u, y as f64 + v);
                        if sx < 0.0 || sy < 0.0 || sx > (w - 1) as f64 || sy > (h - 1) as f64 {
                            continue;
                        }
                        let outline = &s.shape.outline;
                        let here = outline.contains(s.shape_center(t), x as f64, y as f64);
                        let there = outline.contains(s.shape_center(t + 1), sx, sy);
                        if here != there {
                            continue;
                        }
                        // bilinear footprint must not straddle the layer boundary
                        let corners = [(sx.floor(), sy.floor()), (sx.ceil(), sy.floor()), (sx.floor(), sy.ceil()), (sx.ceil(), sy.ceil())];
                        if corners.iter().any(|&(cx, cy)| outline.contains(s.shape_center(t + 1), cx, cy) != there) {
                            continue;
                        }
                        err += (bilinear(next, sx, sy) - video.frame(t)[[y, x]]).abs();
                        n += 1;
                    }
                }
                assert!(n > 0);
                assert!(err / (n as f64) < 2.0 / 255.0, "seed {seed} t {t}: {}", err / n as f64);
            }
        }
    }

    #[test]
    fn split_arithmetic() {
        assert_eq!(split_counts(10, 0.1), (9, 1));
        assert_eq!(split_counts(1001, 0.1), (901, 100));
        assert_eq!(split_counts(25, 0.2), (20, 5));
        let m = plan_manifest(1001, 0.1);
        assert_eq!((m.count(Split::Train), m.count(Split::Test)), (901, 100));
        assert_eq!(Manifest::parse(&m.to_text()).unwrap(), m);
        assert!(Manifest::parse("valid\tx\n").is_err());
    }

    #[test]
    fn write_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let c = SceneConfig {
            height: 24,
            width: 24,
            duration_frames: 4,
            max_speed: 1.0,
            ..Default::default()
        };
        let opts = WriteOptions {
            dots: DotConfig {
                n_dots: 50,
                ..Default::default()
            },
            ..Default::default()
        };
        let manifest = generate_dataset(10, 77, &c, dir.path(), &opts).unwrap();
        assert_eq!(manifest.count(Split::Train), 9);
        assert_eq!(manifest.count(Split::Test), 1);
        assert_eq!(Manifest::read(dir.path()).unwrap(), manifest);
        let test = manifest.split(Split::Test).next().unwrap();
        let stored = StoredVideo::load(dir.path().join(&test.video_dir)).unwrap();
        assert_eq!(stored.video.len(), 4);
        assert_eq!(stored.gt_flows.len(), 3);
        assert!(stored.predicted_flows(Condition::Original).unwrap().is_none());
        assert_eq!(stored.dots.as_ref().map(|d| d.len()), Some(4));
        let spec: SceneSpec = serde_json::from_str(
            &fs::read_to_string(dir.path().join(&test.video_dir).join("scene.json")).unwrap(),
        )
        .unwrap();
        let (_, gt) = render_scene(&spec).unwrap();
        assert_eq!(stored.gt_flows, gt.flows);
        assert_eq!(stored.masks, gt.masks);

        let again = tempfile::tempdir().unwrap();
        generate_dataset(10, 77, &c, again.path(), &opts).unwrap();
        for entry in &manifest.entries {
            for sub in ["frames/00002.png", "gt_flow/00001.flo", "masks/00003.png"] {
                let a = fs::read(dir.path().join(&entry.video_dir).join(sub)).unwrap();
                let b = fs::read(again.path().join(&entry.video_dir).join(sub)).unwrap();
                assert_eq!(a, b);
            }
        }

        let dots_png = dir.path().join(&test.video_dir).join("dots/00002.png");
        let before = fs::read(&dots_png).unwrap();
        fs::remove_dir_all(dir.path().join(&test.video_dir).join("dots")).unwrap();
        assert_eq!(write_random_dots(dir.path(), &[Split::Test], &opts).unwrap(), 1);
        assert_eq!(fs::read(&dots_png).unwrap(), before);
    }
}
