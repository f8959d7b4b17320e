//! Evaluation: negative conditional log-likelihood, oracle top-k error,
//! KL curves, k-means over samples and thresholded forecast scores.

use crate::error::{Error, Result};
use crate::models::{LatentSource, Model, SequenceBatch};
use crate::objectives::{decoder_loglik_values, LikelihoodConfig};
use crate::tensor::{logsumexp_slice, RngStream};
use crate::train::StepRecord;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub t_samples_cll: usize,
    pub topk_frac: f64,
    /// 1-based step counts at which oracle errors are reported.
    pub horizons: Vec<usize>,
    pub csi_threshold: f64,
    /// Gaussian bandwidth of the likelihood estimate.
    pub sigma_eval: f64,
    /// Samples drawn per example for oracle errors.
    pub t_samples_oracle: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            t_samples_cll: 100,
            topk_frac: 0.10,
            horizons: vec![3, 6, 9, 12],
            csi_threshold: 0.5,
            sigma_eval: 1.0,
            t_samples_oracle: 100,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self, t_fut: usize) -> Result<()> {
        if !(self.topk_frac > 0.0 && self.topk_frac <= 1.0) {
            return Err(Error::InvalidSpec(format!(
                "topk_frac {} outside (0, 1]",
                self.topk_frac
            )));
        }
        if self.horizons.iter().any(|&h| h == 0 || h > t_fut) {
            return Err(Error::InvalidSpec(format!(
                "horizons {:?} outside 1..={t_fut}",
                self.horizons
            )));
        }
        if !(self.csi_threshold > 0.0 && self.csi_threshold < 1.0) {
            return Err(Error::InvalidSpec(
                "csi_threshold must lie in (0, 1)".into(),
            ));
        }
        if self.t_samples_cll == 0 || self.t_samples_oracle == 0 {
            return Err(Error::InvalidSpec("sample counts must be positive".into()));
        }
        Ok(())
    }
}

/// Stream id for evaluation draws.
pub const STREAM_EVAL: u64 = 0x30;

/// `-(logsumexp_i l_i - log T)` from per-sample log-likelihoods.
pub fn ncll_from_logliks(l: &[f64]) -> Result<f64> {
    let lse = logsumexp_slice(l).ok_or(Error::EmptyInput { op: "ncll" })?;
    Ok(-(lse - (l.len() as f64).ln()))
}

/// Per-example NCLL from `t` prior samples, with the normalized Gaussian
/// likelihood of bandwidth `sigma`.
pub fn ncll(
    model: &Model,
    batch: &SequenceBatch,
    t: usize,
    sigma: f64,
    rng: &RngStream,
) -> Result<Vec<f64>> {
    let y = batch.y()?;
    let t_fut = y.shape()[1];
    let lik = LikelihoodConfig::eval(sigma);
    let samples = model.sample_futures(&batch.without_y(), t_fut, t, rng, LatentSource::Prior)?;
    let per = y.len() / batch.len();
    (0..batch.len())
        .map(|b| {
            let target = y.row(b);
            let draws = samples.row(b);
            let l = draws
                .chunks(per)
                .map(|s| decoder_loglik_values(s, target, &lik))
                .collect::<Result<Vec<f64>>>()?;
            ncll_from_logliks(&l)
        })
        .collect()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Absolute positions (cumulative sums) of flattened 2-D displacements.
pub fn positions(disp: &[f64]) -> Vec<[f64; 2]> {
    let mut p = [0.0, 0.0];
    disp.chunks(2)
        .map(|d| {
            p[0] += d[0];
            p[1] += d[1];
            p
        })
        .collect()
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Number of samples kept by the oracle for `t` samples.
pub fn oracle_count(frac: f64, t: usize) -> usize {
    ((frac * t as f64) - 1e-9).ceil().max(1.0) as usize
}

/// Oracle top-k error. `samples` and `y` are flattened displacement
/// sequences. Samples are ranked by euclidean distance between the absolute
/// position sequences; the per-horizon errors of the best
/// `ceil(frac * T)` are averaged.
pub fn oracle_topk_error(
    samples: &[Vec<f64>],
    y: &[f64],
    frac: f64,
    horizons: &[usize],
) -> Result<Vec<f64>> {
    let needed = (1.0 / frac - 1e-9).ceil() as usize;
    if samples.len() < needed {
        return Err(Error::TooFewSamples {
            needed,
            got: samples.len(),
        });
    }
    let truth = positions(y);
    if horizons.iter().any(|&h| h == 0 || h > truth.len()) {
        return Err(Error::InvalidSpec(format!(
            "horizons {:?} outside 1..={}",
            horizons,
            truth.len()
        )));
    }
    let paths: Vec<Vec<[f64; 2]>> = samples.iter().map(|s| positions(s)).collect();
    if paths.iter().any(|p| p.len() != truth.len()) {
        return Err(Error::shape(
            "oracle_topk_error",
            "sample length differs from ground truth",
        ));
    }
    let score = |p: &Vec<[f64; 2]>| -> f64 {
        p.iter()
            .zip(&truth)
            .map(|(a, b)| dist(*a, *b).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let mut order: Vec<usize> = (0..paths.len()).collect();
    let scores: Vec<f64> = paths.iter().map(score).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let k = oracle_count(frac, paths.len());
    Ok(horizons
        .iter()
        .map(|&h| {
            order[..k]
                .iter()
                .map(|&i| dist(paths[i][h - 1], truth[h - 1]))
                .sum::<f64>()
                / k as f64
        })
        .collect())
}

/// `(step, KL)` pairs of the logged steps that carry a KL term.
pub fn kl_curve(log: &[StepRecord]) -> Vec<(usize, f64)> {
    log.iter()
        .filter_map(|r| r.kl.map(|k| (r.step, k)))
        .collect()
}

/// Trailing moving average with the given window.
pub fn moving_average(v: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(v.len());
    let mut acc = 0.0;
    for i in 0..v.len() {
        acc += v[i];
        if i >= w {
            acc -= v[i - w];
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Inertia after every assignment step.
    pub inertia: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm, initialized with `k` distinct data points chosen by
/// `seed`. Stops after `iters` rounds or once no centroid moves by more
/// than 1e-9. Empty clusters keep their centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, iters: usize, seed: u64) -> Result<KMeans> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::InvalidK { k, n });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    RngStream::new(seed, 0x40).shuffle(&mut idx);
    let mut centroids: Vec<Vec<f64>> = idx[..k].iter().map(|&i| points[i].clone()).collect();
    let d = points[0].len();
    let mut labels = vec![0; n];
    let mut inertia = Vec::new();
    for _ in 0..iters.max(1) {
        let mut total = 0.0;
        for (p, l) in points.iter().zip(labels.iter_mut()) {
            let (best, dist) = centroids
                .iter()
                .enumerate()
                .map(|(j, c)| (j, sq_dist(p, c)))
                .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
            *l = best;
            total += dist;
        }
        inertia.push(total);
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            sums[l].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        let mut shift: f64 = 0.0;
        for j in 0..k {
            if counts[j] == 0 {
                continue;
            }
            let c: Vec<f64> = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            shift = shift.max(sq_dist(&c, &centroids[j]).sqrt());
            centroids[j] = c;
        }
        if shift <= 1e-9 {
            break;
        }
    }
    Ok(KMeans {
        labels,
        centroids,
        inertia,
    })
}

/// Thresholded forecast scores. Ratios with a zero denominator are `None`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastMetrics {
    pub hits: usize,
    pub misses: usize,
    pub false_alarms: usize,
    pub csi: Option<f64>,
    pub far: Option<f64>,
    pub pod: Option<f64>,
    pub correlation: Option<f64>,
}

fn ratio(a: usize, b: usize) -> Option<f64> {
    (b > 0).then(|| a as f64 / b as f64)
}

/// Pixelwise counts from binarized frames (`value >= threshold`).
pub fn forecast_counts(
    pred: &[f64],
    truth: &[f64],
    threshold: f64,
) -> Result<(usize, usize, usize)> {
    if pred.len() != truth.len() {
        return Err(Error::shape(
            "forecast_metrics",
            format!("{} vs {}", pred.len(), truth.len()),
        ));
    }
    let (mut h, mut m, mut f) = (0, 0, 0);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p >= threshold, t >= threshold) {
            (true, true) => h += 1,
            (false, true) => m += 1,
            (true, false) => f += 1,
            (false, false) => {}
        }
    }
    Ok((h, m, f))
}

pub fn scores_from_counts(hits: usize, misses: usize, false_alarms: usize) -> ForecastMetrics {
    ForecastMetrics {
        hits,
        misses,
        false_alarms,
        csi: ratio(hits, hits + misses + false_alarms),
        far: ratio(false_alarms, hits + false_alarms),
        pod: ratio(hits, hits + misses),
        correlation: None,
    }
}

pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

pub fn forecast_metrics(pred: &[f64], truth: &[f64], threshold: f64) -> Result<ForecastMetrics> {
    let (h, m, f) = forecast_counts(pred, truth, threshold)?;
    Ok(ForecastMetrics {
        correlation: pearson(pred, truth),
        ..scores_from_counts(h, m, f)
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleStatistics {
    pub best_index: usize,
    pub best: Vec<f64>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Per-pixel mean and (population) variance across samples, and the sample
/// closest to `truth` in euclidean distance.
pub fn sample_statistics(samples: &[Vec<f64>], truth: &[f64]) -> Result<SampleStatistics> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    let d = truth.len();
    if samples.iter().any(|s| s.len() != d) {
        return Err(Error::shape(
            "sample_statistics",
            "sample length differs from ground truth",
        ));
    }
    let n = samples.len() as f64;
    let mut mean = vec![0.0; d];
    for s in samples {
        mean.iter_mut().zip(s).for_each(|(m, v)| *m += v / n);
    }
    let mut variance = vec![0.0; d];
    for s in samples {
        variance
            .iter_mut()
            .zip(s.iter().zip(&mean))
            .for_each(|(acc, (v, m))| *acc += (v - m) * (v - m) / n);
    }
    let best_index = samples
        .iter()
        .enumerate()
        .map(|(i, s)| (i, sq_dist(s, truth)))
        .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a })
        .0;
    Ok(SampleStatistics {
        best_index,
        best: samples[best_index].clone(),
        mean,
        variance,
    })
}
