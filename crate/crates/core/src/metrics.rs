//! Saliency evaluation against binary ground truth.
//!
//! `cc`, `nss` and `kldiv` work on whatever real values they are given;
//! `auc_borji`, `pr_curve` and `f_measures` work on 8-bit levels
//! (`round(255 s)`). [`evaluate`] quantizes the map once up front so every
//! score in a report comes from the same 8-bit map.

use rand::Rng;

use crate::error::{Error, Result};
use crate::hsio::{quantize, BinaryMask, SaliencyMap};
use crate::nncore::seeded_rng;

/// Epsilon added to the saliency distribution inside the KL logarithm.
pub const KL_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalParams {
    pub beta_sq: f64,
    pub auc_splits: usize,
    pub auc_seed: u64,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            beta_sq: 0.3,
            auc_splits: 100,
            auc_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricReport {
    pub auc_borji: f64,
    pub cc: f64,
    pub f_beta: f64,
    pub max_f_beta: f64,
    pub ave_f_beta: f64,
    pub precision: f64,
    pub recall: f64,
    pub nss: f64,
    pub kldiv: f64,
}

impl MetricReport {
    pub const CSV_COLUMNS: [&'static str; 9] = [
        "auc_borji",
        "cc",
        "f_beta",
        "max_f",
        "ave_f",
        "precision",
        "recall",
        "nss",
        "kldiv",
    ];

    /// Values in [`Self::CSV_COLUMNS`] order.
    pub fn values(&self) -> [f64; 9] {
        [
            self.auc_borji,
            self.cc,
            self.f_beta,
            self.max_f_beta,
            self.ave_f_beta,
            self.precision,
            self.recall,
            self.nss,
            self.kldiv,
        ]
    }

    pub fn from_values(v: [f64; 9]) -> Self {
        Self {
            auc_borji: v[0],
            cc: v[1],
            f_beta: v[2],
            max_f_beta: v[3],
            ave_f_beta: v[4],
            precision: v[5],
            recall: v[6],
            nss: v[7],
            kldiv: v[8],
        }
    }

    /// Whether a smaller value is better for the metric in column `i`.
    pub fn lower_is_better(column: usize) -> bool {
        Self::CSV_COLUMNS[column] == "kldiv"
    }
}

fn check_pair(s: &SaliencyMap, gt: &BinaryMask) -> Result<()> {
    if s.height != gt.height || s.width != gt.width {
        return Err(Error::shape(format!(
            "saliency {}x{} vs mask {}x{}",
            s.height, s.width, gt.height, gt.width
        )));
    }
    if s.values.is_empty() {
        return Err(Error::shape("empty saliency map"));
    }
    Ok(())
}

fn is_constant(values: &[f64]) -> bool {
    values.iter().all(|&v| v == values[0])
}

fn require_both_classes(gt: &BinaryMask) -> Result<usize> {
    let pos = gt.count_true();
    if pos == 0 || pos == gt.values.len() {
        return Err(Error::Degenerate(
            "mask needs both salient and background pixels".into(),
        ));
    }
    Ok(pos)
}

/// Pearson correlation between the map and the mask as a 0/1 map; 0 when
/// either side is constant.
pub fn cc(saliency: &SaliencyMap, gt: &BinaryMask) -> Result<f64> {
    check_pair(saliency, gt)?;
    if is_constant(&saliency.values) {
        return Ok(0.0);
    }
    let n = saliency.values.len() as f64;
    let ms = saliency.values.iter().sum::<f64>() / n;
    let mg = gt.count_true() as f64 / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&s, &g) in saliency.values.iter().zip(&gt.values) {
        let (a, b) = (s - ms, if g { 1.0 } else { 0.0 } - mg);
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    // sqrt of the product (not product of sqrts) keeps cc(x, x) exactly 1
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Mean z-scored saliency (population std) over salient pixels; 0 for a
/// constant map.
pub fn nss(saliency: &SaliencyMap, gt: &BinaryMask) -> Result<f64> {
    check_pair(saliency, gt)?;
    let pos = gt.count_true();
    if pos == 0 {
        return Err(Error::Degenerate("mask has no salient pixels".into()));
    }
    if is_constant(&saliency.values) {
        return Ok(0.0);
    }
    let n = saliency.values.len() as f64;
    let mean = saliency.values.iter().sum::<f64>() / n;
    let var = saliency.values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var == 0.0 {
        return Ok(0.0);
    }
    let sd = var.sqrt();
    let total: f64 = saliency
        .values
        .iter()
        .zip(&gt.values)
        .filter(|(_, &g)| g)
        .map(|(&s, _)| (s - mean) / sd)
        .sum();
    Ok(total / pos as f64)
}

/// `KL(G || S)` with `G` uniform over salient pixels and `S` the map scaled
/// to sum to one.
pub fn kldiv(saliency: &SaliencyMap, gt: &BinaryMask) -> Result<f64> {
    check_pair(saliency, gt)?;
    let pos = gt.count_true();
    if pos == 0 {
        return Err(Error::Degenerate("mask has no salient pixels".into()));
    }
    let total: f64 = saliency.values.iter().sum();
    let g = 1.0 / pos as f64;
    let kl: f64 = saliency
        .values
        .iter()
        .zip(&gt.values)
        .filter(|(_, &m)| m)
        .map(|(&s, _)| {
            let p = if total > 0.0 { s / total } else { 0.0 };
            g * (g / (p + KL_EPSILON)).ln()
        })
        .sum();
    Ok(kl.max(0.0))
}

fn level_histograms(levels: &[u8], gt: &BinaryMask) -> ([u64; 256], [u64; 256]) {
    let mut pos = [0u64; 256];
    let mut neg = [0u64; 256];
    for (&l, &g) in levels.iter().zip(&gt.values) {
        if g {
            pos[l as usize] += 1;
        } else {
            neg[l as usize] += 1;
        }
    }
    (pos, neg)
}

/// Area under the ROC curve traced by sweeping thresholds over the 256
/// levels, trapezoidal between operating points (ties count one half).
pub fn roc_auc_from_histograms(pos: &[u64; 256], neg: &[u64; 256]) -> f64 {
    let (np, nn) = (pos.iter().sum::<u64>() as f64, neg.iter().sum::<u64>() as f64);
    let (mut tp, mut fp) = (0u64, 0u64);
    let (mut prev_tpr, mut prev_fpr) = (0.0, 0.0);
    let mut area = 0.0;
    for t in (0..256).rev() {
        tp += pos[t];
        fp += neg[t];
        let (tpr, fpr) = (tp as f64 / np, fp as f64 / nn);
        area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        prev_tpr = tpr;
        prev_fpr = fpr;
    }
    area
}

/// AUC with uniformly resampled negatives: every split draws as many
/// background pixels (with replacement) as there are salient pixels, using
/// `ChaCha8Rng::seed_from_u64(seed)` and one `gen_range(0..background)` per
/// draw, in order. Returns the mean AUC over splits.
pub fn auc_borji(saliency: &SaliencyMap, gt: &BinaryMask, n_splits: usize, seed: u64) -> Result<f64> {
    check_pair(saliency, gt)?;
    let npos = require_both_classes(gt)?;
    if n_splits == 0 {
        return Err(Error::InvalidArgument("n_splits must be >= 1".into()));
    }
    let levels = saliency.quantized();
    let mut pos = [0u64; 256];
    let mut background = Vec::with_capacity(levels.len() - npos);
    for (&l, &g) in levels.iter().zip(&gt.values) {
        if g {
            pos[l as usize] += 1;
        } else {
            background.push(l);
        }
    }
    let mut rng = seeded_rng(seed);
    let mut total = 0.0;
    for _ in 0..n_splits {
        let mut neg = [0u64; 256];
        for _ in 0..npos {
            let idx = rng.gen_range(0..background.len());
            neg[background[idx] as usize] += 1;
        }
        total += roc_auc_from_histograms(&pos, &neg);
    }
    Ok(total / n_splits as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub threshold: u8,
    pub precision: f64,
    pub recall: f64,
}

/// Precision/recall at each of the 256 thresholds, ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

/// A pixel is predicted salient at threshold `t` when its level is `>= t`
/// (equivalently `s >= t / 255`). Precision is 1 when nothing is predicted.
pub fn pr_curve(saliency: &SaliencyMap, gt: &BinaryMask) -> Result<PrCurve> {
    check_pair(saliency, gt)?;
    let npos = gt.count_true();
    if npos == 0 {
        return Err(Error::Degenerate("mask has no salient pixels".into()));
    }
    let (pos, neg) = level_histograms(&saliency.quantized(), gt);
    let mut points = Vec::with_capacity(256);
    let (mut tp, mut fp) = (0u64, 0u64);
    for t in (0..256usize).rev() {
        tp += pos[t];
        fp += neg[t];
        let precision = if tp + fp == 0 {
            1.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        points.push(PrPoint {
            threshold: t as u8,
            precision,
            recall: tp as f64 / npos as f64,
        });
    }
    points.reverse();
    Ok(PrCurve { points })
}

/// `(1 + b2) p r / (b2 p + r)`, 0 when the denominator is 0.
pub fn f_score(precision: f64, recall: f64, beta_sq: f64) -> f64 {
    let den = beta_sq * precision + recall;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + beta_sq) * precision * recall / den
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FMeasures {
    pub f_beta: f64,
    pub max_f: f64,
    pub ave_f: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Curve maximum and mean of F, plus F/precision/recall at the adaptive
/// threshold `min(2 * mean(s), 1)`.
pub fn f_measures(curve: &PrCurve, saliency: &SaliencyMap, gt: &BinaryMask, beta_sq: f64) -> Result<FMeasures> {
    check_pair(saliency, gt)?;
    if curve.points.len() != 256 {
        return Err(Error::shape(format!(
            "PR curve has {} points, expected 256",
            curve.points.len()
        )));
    }
    let npos = gt.count_true();
    if npos == 0 {
        return Err(Error::Degenerate("mask has no salient pixels".into()));
    }
    let fs: Vec<f64> = curve
        .points
        .iter()
        .map(|p| f_score(p.precision, p.recall, beta_sq))
        .collect();
    let max_f = fs.iter().cloned().fold(0.0, f64::max);
    let ave_f = fs.iter().sum::<f64>() / fs.len() as f64;

    let levels = saliency.quantized();
    let mean = levels.iter().map(|&l| l as f64 / 255.0).sum::<f64>() / levels.len() as f64;
    let t = (2.0 * mean).clamp(0.0, 1.0);
    let (mut tp, mut fp) = (0u64, 0u64);
    for (&l, &g) in levels.iter().zip(&gt.values) {
        if l as f64 / 255.0 >= t {
            if g {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    let precision = if tp + fp == 0 {
        1.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = tp as f64 / npos as f64;
    Ok(FMeasures {
        f_beta: f_score(precision, recall, beta_sq),
        max_f,
        ave_f,
        precision,
        recall,
    })
}

/// Full report on the 8-bit quantized map.
pub fn evaluate(saliency: &SaliencyMap, gt: &BinaryMask, params: &EvalParams) -> Result<MetricReport> {
    check_pair(saliency, gt)?;
    require_both_classes(gt)?;
    let q = SaliencyMap {
        height: saliency.height,
        width: saliency.width,
        values: saliency
            .values
            .iter()
            .map(|&v| quantize(v) as f64 / 255.0)
            .collect(),
    };
    let curve = pr_curve(&q, gt)?;
    let f = f_measures(&curve, &q, gt, params.beta_sq)?;
    Ok(MetricReport {
        auc_borji: auc_borji(&q, gt, params.auc_splits, params.auc_seed)?,
        cc: cc(&q, gt)?,
        f_beta: f.f_beta,
        max_f_beta: f.max_f,
        ave_f_beta: f.ave_f,
        precision: f.precision,
        recall: f.recall,
        nss: nss(&q, gt)?,
        kldiv: kldiv(&q, gt)?,
    })
}

/// Per-metric arithmetic mean over images.
pub fn aggregate(reports: &[MetricReport]) -> Result<MetricReport> {
    if reports.is_empty() {
        return Err(Error::InvalidArgument("no reports to aggregate".into()));
    }
    let mut sums = [0.0; 9];
    for r in reports {
        for (s, v) in sums.iter_mut().zip(r.values()) {
            *s += v;
        }
    }
    Ok(MetricReport::from_values(
        sums.map(|s| s / reports.len() as f64),
    ))
}
