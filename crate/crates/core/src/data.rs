//! Synthetic multimodal datasets and the JSONL trajectory format.
//!
//! JSONL schema, one object per line:
//! `{"obs": [[dx, dy], ...], "fut": [[dx, dy], ...], "meta": {...}, "scene": [[...], ...]}`
//! where `meta` and `scene` (a single-channel image as rows of pixels) are
//! optional. Trajectories are relative displacements per step.

use crate::error::{Error, Result};
use crate::models::SequenceBatch;
use crate::tensor::{logsumexp_slice, RngStream, Tensor};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// Stream ids used by the generators (data draws never share a stream with
/// model initialization or training).
const STREAM_FORK: u64 = 0x10;
const STREAM_BLOBS: u64 = 0x11;
const STREAM_SPLIT: u64 = 0x12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForkSpec {
    pub t_obs: usize,
    pub t_fut: usize,
    pub speed: f64,
    /// Half-width of the fan of future directions, in radians.
    pub branch_angle: f64,
    pub noise_std: f64,
    pub n_modes: usize,
    pub mode_probs: Vec<f64>,
}

impl Default for ForkSpec {
    fn default() -> Self {
        ForkSpec {
            t_obs: 8,
            t_fut: 12,
            speed: 1.0,
            branch_angle: PI / 4.0,
            noise_std: 0.05,
            n_modes: 2,
            mode_probs: vec![0.5, 0.5],
        }
    }
}

impl ForkSpec {
    /// Star task with `m` equally likely directions.
    pub fn star(m: usize) -> Self {
        ForkSpec {
            n_modes: m,
            mode_probs: vec![1.0 / m as f64; m],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.t_obs == 0 || self.t_fut == 0 {
            return bad("t_obs and t_fut must be positive".into());
        }
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return bad(format!(
                "noise_std must be positive, got {}",
                self.noise_std
            ));
        }
        if !self.speed.is_finite() || !self.branch_angle.is_finite() {
            return bad("speed and branch_angle must be finite".into());
        }
        if self.n_modes == 0 || self.mode_probs.len() != self.n_modes {
            return bad(format!(
                "mode_probs has {} entries for {} modes",
                self.mode_probs.len(),
                self.n_modes
            ));
        }
        let sum: f64 = self.mode_probs.iter().sum();
        if self.mode_probs.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return bad(format!(
                "mode_probs {:?} is not a probability vector",
                self.mode_probs
            ));
        }
        Ok(())
    }

    /// Heading of mode `m`: equally spaced over `[-angle, +angle]`, starting
    /// at `+angle` (mode 0 turns left).
    pub fn direction(&self, m: usize) -> f64 {
        if self.n_modes == 1 {
            self.branch_angle
        } else {
            self.branch_angle - 2.0 * self.branch_angle * m as f64 / (self.n_modes - 1) as f64
        }
    }

    /// Noise-free future displacements of mode `m`, flattened `[t_fut * 2]`.
    pub fn mode_mean(&self, m: usize) -> Vec<f64> {
        let th = self.direction(m);
        let step = [self.speed * th.cos(), self.speed * th.sin()];
        (0..self.t_fut).flat_map(|_| step).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<usize>,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajExample {
    pub obs: Vec<[f64; 2]>,
    pub fut: Vec<[f64; 2]>,
    pub meta: Meta,
    /// Single-channel scene image `[1, H, W]`.
    pub scene: Option<Tensor>,
}

impl TrajExample {
    pub fn fut_flat(&self) -> Vec<f64> {
        self.fut.iter().flatten().copied().collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrajectoryDataset {
    pub examples: Vec<TrajExample>,
}

impl TrajectoryDataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn has_scenes(&self) -> bool {
        self.examples.first().is_some_and(|e| e.scene.is_some())
    }

    /// Batch of the given examples. All examples must share their lengths.
    pub fn batch(&self, idx: &[usize]) -> Result<SequenceBatch> {
        let first = idx
            .first()
            .map(|&i| &self.examples[i])
            .ok_or(Error::EmptyInput { op: "batch" })?;
        let (to, tf) = (first.obs.len(), first.fut.len());
        let mut x = Vec::with_capacity(idx.len() * to * 2);
        let mut y = Vec::with_capacity(idx.len() * tf * 2);
        let mut scenes = Vec::new();
        for &i in idx {
            let e = &self.examples[i];
            if e.obs.len() != to || e.fut.len() != tf {
                return Err(Error::shape("batch", "examples have different lengths"));
            }
            x.extend(e.obs.iter().flatten());
            y.extend(e.fut.iter().flatten());
            if let Some(s) = &e.scene {
                scenes.push(s.clone());
            }
        }
        let scene = if scenes.len() == idx.len() && !scenes.is_empty() {
            Some(Tensor::stack(&scenes)?)
        } else {
            None
        };
        SequenceBatch::new(
            Tensor::new(vec![idx.len(), to, 2], x)?,
            Some(Tensor::new(vec![idx.len(), tf, 2], y)?),
            scene,
        )
    }

    pub fn all(&self) -> Result<SequenceBatch> {
        let idx: Vec<usize> = (0..self.len()).collect();
        self.batch(&idx)
    }

    pub fn subset(&self, idx: &[usize]) -> TrajectoryDataset {
        TrajectoryDataset {
            examples: idx.iter().map(|&i| self.examples[i].clone()).collect(),
        }
    }
}

fn gen_modes(spec: &ForkSpec, n: usize, seed: u64, scenes: bool) -> Result<TrajectoryDataset> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::InvalidSpec("n must be at least 1".into()));
    }
    let mut rng = RngStream::new(seed, STREAM_FORK);
    let corridors = scenes.then(|| [corridor_image(spec, 0), corridor_image(spec, 1)]);
    let examples = (0..n)
        .map(|_| {
            let mode = rng.categorical(&spec.mode_probs);
            let s = spec.noise_std;
            let obs = (0..spec.t_obs)
                .map(|_| [spec.speed + s * rng.normal(), s * rng.normal()])
                .collect();
            let mean = spec.mode_mean(mode);
            let fut = mean
                .chunks(2)
                .map(|m| [m[0] + s * rng.normal(), m[1] + s * rng.normal()])
                .collect();
            TrajExample {
                obs,
                fut,
                meta: Meta {
                    mode: Some(mode),
                    ..Meta::default()
                },
                scene: corridors.as_ref().map(|c| c[mode].clone()),
            }
        })
        .collect();
    Ok(TrajectoryDataset { examples })
}

/// Straight motion along +x, then one of two branches at `+-branch_angle`.
pub fn gen_fork(spec: &ForkSpec, n: usize, seed: u64) -> Result<TrajectoryDataset> {
    if spec.n_modes != 2 {
        return Err(Error::InvalidSpec(format!(
            "fork task has 2 modes, got {}",
            spec.n_modes
        )));
    }
    gen_modes(spec, n, seed, false)
}

/// Futures along `n_modes` equally spaced headings.
pub fn gen_star(spec: &ForkSpec, n: usize, seed: u64) -> Result<TrajectoryDataset> {
    gen_modes(spec, n, seed, false)
}

/// Fork task where each example carries a 64x64 corridor map whose open
/// branch is the one the future takes.
pub fn gen_fork_with_map(spec: &ForkSpec, n: usize, seed: u64) -> Result<TrajectoryDataset> {
    if spec.n_modes != 2 {
        return Err(Error::InvalidSpec(format!(
            "fork task has 2 modes, got {}",
            spec.n_modes
        )));
    }
    gen_modes(spec, n, seed, true)
}

pub const MAP_SIZE: usize = 64;

/// Binary map `[1, 64, 64]`: free space is 1. The corridor enters from the
/// left edge and continues only along the branch of `mode`. Image rows grow
/// downwards, so the left-turning branch (positive y) goes up.
pub fn corridor_image(spec: &ForkSpec, mode: usize) -> Tensor {
    let n = MAP_SIZE;
    let mut img = vec![0.0; n * n];
    let (cx, cy) = (n as f64 / 2.0, n as f64 / 2.0);
    let half = 4.0;
    let th = spec.direction(mode);
    let (dx, dy) = (th.cos(), -th.sin());
    for r in 0..n {
        for c in 0..n {
            let (px, py) = (c as f64 + 0.5, r as f64 + 0.5);
            let entry = px <= cx && (py - cy).abs() <= half;
            let (rx, ry) = (px - cx, py - cy);
            let along = rx * dx + ry * dy;
            let across = (rx * dy - ry * dx).abs();
            let branch = along >= -half && across <= half;
            if entry || branch {
                img[r * n + c] = 1.0;
            }
        }
    }
    Tensor::new(vec![1, n, n], img).expect("length matches shape")
}

fn gauss_logpdf(y: &[f64], mean: &[f64], sigma: f64) -> f64 {
    let d = y.len() as f64;
    let sq: f64 = y.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
    -sq / (2.0 * sigma * sigma) - 0.5 * d * (2.0 * PI * sigma * sigma).ln()
}

/// Exact `-log sum_m pi_m N(y; mu_m, noise^2 I)` of an example's future.
pub fn fork_analytic_ncll(spec: &ForkSpec, ex: &TrajExample) -> f64 {
    let y = ex.fut_flat();
    let terms: Vec<f64> = (0..spec.n_modes)
        .filter(|&m| spec.mode_probs[m] > 0.0)
        .map(|m| spec.mode_probs[m].ln() + gauss_logpdf(&y, &spec.mode_mean(m), spec.noise_std))
        .collect();
    -logsumexp_slice(&terms).unwrap_or(f64::NEG_INFINITY)
}

/// `-log N(y; mu_mode, noise^2 I)`: the floor for a model that knows the mode.
pub fn fork_conditional_ncll(spec: &ForkSpec, ex: &TrajExample, mode: usize) -> f64 {
    -gauss_logpdf(&ex.fut_flat(), &spec.mode_mean(mode), spec.noise_std)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlobSpec {
    pub grid: usize,
    pub t_obs: usize,
    pub t_fut: usize,
    pub blob_sigma: f64,
    pub n_directions: usize,
    /// Pixels per frame.
    pub speed: f64,
    /// Largest offset of the start position from the grid center, in pixels.
    pub jitter: f64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        BlobSpec {
            grid: 16,
            t_obs: 5,
            t_fut: 15,
            blob_sigma: 1.75,
            n_directions: 4,
            speed: 0.08,
            jitter: 1.0,
        }
    }
}

impl BlobSpec {
    pub fn validate(&self) -> Result<()> {
        if self.grid == 0 || !self.grid.is_multiple_of(4) {
            return Err(Error::InvalidSpec(format!(
                "grid {} not divisible by 4",
                self.grid
            )));
        }
        if self.t_obs == 0 || self.t_fut == 0 || self.n_directions == 0 {
            return Err(Error::InvalidSpec(
                "lengths and direction count must be positive".into(),
            ));
        }
        if !(self.blob_sigma > 0.0) || !(self.speed >= 0.0) || !(self.jitter >= 0.0) {
            return Err(Error::InvalidSpec(
                "blob_sigma must be positive, speed and jitter non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn direction(&self, d: usize) -> [f64; 2] {
        let th = 2.0 * PI * d as f64 / self.n_directions as f64;
        [th.cos(), th.sin()]
    }
}

/// Frames `[N, t_obs + t_fut, 1, grid, grid]` with blob centers per frame as
/// `(column, row)` pixel coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSequenceDataset {
    pub spec: BlobSpec,
    pub frames: Tensor,
    pub centers: Vec<Vec<[f64; 2]>>,
    pub obs_direction: Vec<usize>,
    pub fut_direction: Vec<usize>,
}

impl ImageSequenceDataset {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn batch(&self, idx: &[usize]) -> Result<SequenceBatch> {
        let sel = self.frames.select_rows(idx);
        let t = self.spec.t_obs + self.spec.t_fut;
        let frame = self.frames.len() / (self.len() * t).max(1);
        let g = self.spec.grid;
        let mut x = Vec::with_capacity(idx.len() * self.spec.t_obs * frame);
        let mut y = Vec::with_capacity(idx.len() * self.spec.t_fut * frame);
        for b in 0..idx.len() {
            let row = sel.row(b);
            x.extend_from_slice(&row[..self.spec.t_obs * frame]);
            y.extend_from_slice(&row[self.spec.t_obs * frame..]);
        }
        SequenceBatch::new(
            Tensor::new(vec![idx.len(), self.spec.t_obs, 1, g, g], x)?,
            Some(Tensor::new(vec![idx.len(), self.spec.t_fut, 1, g, g], y)?),
            None,
        )
    }

    pub fn all(&self) -> Result<SequenceBatch> {
        let idx: Vec<usize> = (0..self.len()).collect();
        self.batch(&idx)
    }

    pub fn subset(&self, idx: &[usize]) -> ImageSequenceDataset {
        ImageSequenceDataset {
            spec: self.spec.clone(),
            frames: self.frames.select_rows(idx),
            centers: idx.iter().map(|&i| self.centers[i].clone()).collect(),
            obs_direction: idx.iter().map(|&i| self.obs_direction[i]).collect(),
            fut_direction: idx.iter().map(|&i| self.fut_direction[i]).collect(),
        }
    }
}

/// Renders a unit-peak Gaussian blob centered at `(cx, cy)`.
pub fn render_blob(grid: usize, cx: f64, cy: f64, sigma: f64) -> Vec<f64> {
    let mut img = Vec::with_capacity(grid * grid);
    for r in 0..grid {
        for c in 0..grid {
            let d2 = (c as f64 - cx).powi(2) + (r as f64 - cy).powi(2);
            img.push((-d2 / (2.0 * sigma * sigma)).exp());
        }
    }
    img
}

/// Blob moving at constant velocity along a random heading while observed,
/// then along a uniformly chosen heading for the future.
pub fn gen_blobs(spec: &BlobSpec, n: usize, seed: u64) -> Result<ImageSequenceDataset> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::InvalidSpec("n must be at least 1".into()));
    }
    let mut rng = RngStream::new(seed, STREAM_BLOBS);
    let t = spec.t_obs + spec.t_fut;
    let g = spec.grid;
    let mut data = Vec::with_capacity(n * t * g * g);
    let mut centers = Vec::with_capacity(n);
    let mut obs_direction = Vec::with_capacity(n);
    let mut fut_direction = Vec::with_capacity(n);
    let mid = (g as f64 - 1.0) / 2.0;
    for _ in 0..n {
        let d_obs = rng.below(spec.n_directions);
        let d_fut = rng.below(spec.n_directions);
        let mut c = [
            mid + rng.uniform_range(-spec.jitter, spec.jitter),
            mid + rng.uniform_range(-spec.jitter, spec.jitter),
        ];
        // Start so that the last observed frame sits at c.
        let v = spec.direction(d_obs);
        c[0] -= v[0] * spec.speed * (spec.t_obs - 1) as f64;
        c[1] -= v[1] * spec.speed * (spec.t_obs - 1) as f64;
        let mut path = Vec::with_capacity(t);
        for k in 0..t {
            let v = if k < spec.t_obs {
                v
            } else {
                spec.direction(d_fut)
            };
            if k > 0 {
                c[0] += v[0] * spec.speed;
                c[1] += v[1] * spec.speed;
            }
            path.push(c);
            data.extend(render_blob(g, c[0], c[1], spec.blob_sigma));
        }
        centers.push(path);
        obs_direction.push(d_obs);
        fut_direction.push(d_fut);
    }
    Ok(ImageSequenceDataset {
        spec: spec.clone(),
        frames: Tensor::new(vec![n, t, 1, g, g], data)?,
        centers,
        obs_direction,
        fut_direction,
    })
}

#[derive(Serialize, Deserialize)]
struct JsonRecord {
    obs: Vec<[f64; 2]>,
    fut: Vec<[f64; 2]>,
    #[serde(default)]
    meta: Meta,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scene: Option<Vec<Vec<f64>>>,
}

/// Writes one JSON object per example.
pub fn write_jsonl(ds: &TrajectoryDataset, out: impl Write) -> Result<()> {
    let mut out = std::io::BufWriter::new(out);
    for e in &ds.examples {
        let scene = e.scene.as_ref().map(|s| {
            let w = s.shape()[s.rank() - 1];
            s.data().chunks(w).map(|r| r.to_vec()).collect()
        });
        let rec = JsonRecord {
            obs: e.obs.clone(),
            fut: e.fut.clone(),
            meta: e.meta.clone(),
            scene,
        };
        serde_json::to_writer(&mut out, &rec).map_err(|e| Error::Io(e.into()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_jsonl(ds: &TrajectoryDataset, path: impl AsRef<Path>) -> Result<()> {
    write_jsonl(ds, std::fs::File::create(path)?)
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<TrajectoryDataset> {
    read_jsonl(std::fs::File::open(path)?)
}

/// Parses JSONL records; blank lines are skipped. Line numbers are 1-based.
pub fn read_jsonl(input: impl std::io::Read) -> Result<TrajectoryDataset> {
    let mut examples = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        let no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: no,
            message: e.to_string(),
        })?;
        let obj = value.as_object().ok_or_else(|| Error::Parse {
            line: no,
            message: "expected a JSON object".into(),
        })?;
        let missing: Vec<String> = ["obs", "fut"]
            .iter()
            .filter(|k| !obj.contains_key(**k))
            .map(|k| k.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::Schema { line: no, missing });
        }
        let rec: JsonRecord = serde_json::from_value(value).map_err(|e| Error::Parse {
            line: no,
            message: e.to_string(),
        })?;
        let bad = |m: &str| Error::Parse {
            line: no,
            message: m.into(),
        };
        if rec.obs.is_empty() || rec.fut.is_empty() {
            return Err(bad("obs and fut must be non-empty"));
        }
        if rec
            .obs
            .iter()
            .chain(&rec.fut)
            .flatten()
            .any(|v| !v.is_finite())
        {
            return Err(bad("non-finite coordinate"));
        }
        let scene = match rec.scene {
            Some(rows) => {
                let h = rows.len();
                let w = rows.first().map_or(0, |r| r.len());
                if h == 0 || rows.iter().any(|r| r.len() != w) {
                    return Err(bad("scene rows must be non-empty and equally long"));
                }
                let data: Vec<f64> = rows.into_iter().flatten().collect();
                Some(Tensor::new(vec![1, h, w], data)?)
            }
            None => None,
        };
        examples.push(TrajExample {
            obs: rec.obs,
            fut: rec.fut,
            meta: rec.meta,
            scene,
        });
    }
    Ok(TrajectoryDataset { examples })
}

/// Shuffled split of `0..n` into `(train, test)` index sets with
/// `round(frac * n)` training indices.
pub fn split_indices(n: usize, frac: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(frac > 0.0 && frac < 1.0) {
        return Err(Error::InvalidFraction(frac));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    RngStream::new(seed, STREAM_SPLIT).shuffle(&mut idx);
    let k = (frac * n as f64).round() as usize;
    let test = idx.split_off(k);
    Ok((idx, test))
}

pub fn split(
    ds: &TrajectoryDataset,
    frac: f64,
    seed: u64,
) -> Result<(TrajectoryDataset, TrajectoryDataset)> {
    let (a, b) = split_indices(ds.len(), frac, seed)?;
    Ok((ds.subset(&a), ds.subset(&b)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_limit() {
        let spec = ForkSpec {
            noise_std: 1e-12,
            mode_probs: vec![1.0, 0.0],
            ..ForkSpec::default()
        };
        let ds = gen_fork(&spec, 5, 1).unwrap();
        let s = (PI / 4.0).sin();
        for e in &ds.examples {
            for f in &e.fut {
                assert!((f[0] - s).abs() < 1e-9 && (f[1] - s).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn invalid_specs() {
        let bad = ForkSpec {
            mode_probs: vec![0.7, 0.7],
            ..ForkSpec::default()
        };
        assert!(matches!(gen_fork(&bad, 3, 0), Err(Error::InvalidSpec(_))));
        let bad = ForkSpec {
            noise_std: 0.0,
            ..ForkSpec::default()
        };
        assert!(gen_fork(&bad, 3, 0).is_err());
        let bad = BlobSpec {
            grid: 18,
            ..BlobSpec::default()
        };
        assert!(gen_blobs(&bad, 3, 0).is_err());
    }

    #[test]
    fn analytic_floor_examples() {
        let spec = ForkSpec {
            mode_probs: vec![1.0, 0.0],
            ..ForkSpec::default()
        };
        let mut ex = gen_fork(&spec, 1, 0).unwrap().examples.remove(0);
        let mean = spec.mode_mean(0);
        ex.fut = mean.chunks(2).map(|c| [c[0], c[1]]).collect();
        let d = mean.len() as f64;
        let single = 0.5 * d * (2.0 * PI * spec.noise_std.powi(2)).ln();
        assert!((fork_analytic_ncll(&spec, &ex) - single).abs() < 1e-9);
        let two = ForkSpec::default();
        assert!((fork_analytic_ncll(&two, &ex) - single - 2f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn split_examples() {
        let (a, b) = split_indices(100, 0.8, 3).unwrap();
        assert_eq!((a.len(), b.len()), (80, 20));
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(split_indices(100, 0.8, 3).unwrap(), (a, b));
        assert!(matches!(
            split_indices(10, 1.0, 0),
            Err(Error::InvalidFraction(_))
        ));
    }

    #[test]
    fn corridor_maps_differ() {
        let spec = ForkSpec::default();
        let a = corridor_image(&spec, 0);
        let b = corridor_image(&spec, 1);
        assert_ne!(a, b);
        // upper right quadrant is open only for the left-turning branch
        let px = |t: &Tensor, r: usize, c: usize| t.data()[r * MAP_SIZE + c];
        assert_eq!(px(&a, 12, 52), 1.0);
        assert_eq!(px(&b, 12, 52), 0.0);
        assert_eq!(px(&b, 52, 52), 1.0);
        assert_eq!(px(&a, 32, 5), 1.0);
    }
}
