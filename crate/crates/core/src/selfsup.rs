//! The self-supervision loop.
//!
//! Each iteration: forward pass, argmax pseudo-labels, superpixel majority
//! refinement, softmax cross-entropy against the refined labels, backprop,
//! one momentum-SGD step, then manifold-ranking saliency on the features of
//! that forward pass. Training stops from iteration 2 on once the loss
//! change or the mean saliency change drops to its tolerance, or at `kappa`.

use std::fmt;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::hsio::SaliencyMap;
use crate::mrank::{saliency_from_features, MrParams};
use crate::nncore::{glorot_init, softmax_cross_entropy, Network, SgdMomentum, Tensor4};
use crate::slic::{compute_superpixels, majority_label, SlicParams, SuperpixelMap};
use crate::volume::FeatureView;

/// Where the refinement superpixels come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// From the network's current feature maps.
    HfSlic,
    /// From the input cube, computed once.
    HsSlic,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::HfSlic => "hf-slic",
            Variant::HsSlic => "hs-slic",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hf-slic" => Ok(Variant::HfSlic),
            "hs-slic" => Ok(Variant::HsSlic),
            other => Err(Error::InvalidArgument(format!("unknown variant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfSupConfig {
    pub variant: Variant,
    /// Loss tolerance.
    pub epsilon1: f64,
    /// Mean absolute saliency-change tolerance.
    pub epsilon2: f64,
    pub kappa: usize,
    pub slic: SlicParams,
    pub mr: MrParams,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
    /// HF-Slic only: recompute feature superpixels every this many iterations.
    pub recompute_superpixels_every: usize,
    /// Compute saliency every this many iterations (and always on the last).
    pub saliency_every: usize,
}

impl Default for SelfSupConfig {
    fn default() -> Self {
        Self {
            variant: Variant::HfSlic,
            epsilon1: 1e-3,
            epsilon2: 1e-3,
            kappa: 200,
            slic: SlicParams::default(),
            mr: MrParams::default(),
            lr: 0.1,
            momentum: 0.9,
            seed: 0,
            recompute_superpixels_every: 1,
            saliency_every: 1,
        }
    }
}

impl SelfSupConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon1 > 0.0) || !(self.epsilon2 > 0.0) {
            return Err(Error::InvalidArgument(
                "epsilon1 and epsilon2 must be > 0".into(),
            ));
        }
        if self.kappa < 1 {
            return Err(Error::InvalidArgument("kappa must be >= 1".into()));
        }
        if self.recompute_superpixels_every < 1 || self.saliency_every < 1 {
            return Err(Error::InvalidArgument(
                "recompute and saliency periods must be >= 1".into(),
            ));
        }
        self.slic.validate()?;
        self.mr.validate()?;
        SgdMomentum::new(self.lr, self.momentum)?;
        Ok(())
    }
}

/// Per-pixel class ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterLabels {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub labels: Vec<usize>,
}

impl ClusterLabels {
    /// Number of distinct ids present.
    pub fn cluster_count(&self) -> usize {
        count_distinct(&self.labels, self.classes)
    }
}

fn count_distinct(labels: &[usize], classes: usize) -> usize {
    let mut seen = vec![false; classes];
    for &l in labels {
        seen[l] = true;
    }
    seen.iter().filter(|&&s| s).count()
}

/// Index of the largest channel per pixel, smallest index on ties. NaN never
/// wins a comparison.
pub fn argmax_labels(features: &Tensor4) -> ClusterLabels {
    let (c, h, w) = features.shape();
    let n = h * w;
    let mut best = features.channel(0).to_vec();
    let mut labels = vec![0usize; n];
    for ch in 1..c {
        let plane = features.channel(ch);
        for px in 0..n {
            if plane[px] > best[px] || (best[px].is_nan() && !plane[px].is_nan()) {
                best[px] = plane[px];
                labels[px] = ch;
            }
        }
    }
    ClusterLabels {
        height: h,
        width: w,
        classes: c,
        labels,
    }
}

/// Mean absolute per-pixel difference.
pub fn saliency_delta(a: &SaliencyMap, b: &SaliencyMap) -> Result<f64> {
    if a.height != b.height || a.width != b.width {
        return Err(Error::shape(format!(
            "saliency {}x{} vs {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    let sum: f64 = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).sum();
    Ok(sum / a.values.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationCause {
    LossConverged,
    SaliencyConverged,
    MaxIterations,
}

impl TerminationCause {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminationCause::LossConverged => "loss-converged",
            TerminationCause::SaliencyConverged => "saliency-converged",
            TerminationCause::MaxIterations => "max-iterations",
        }
    }
}

impl fmt::Display for TerminationCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub loss: f64,
    /// `|L_i - L_{i-1}|`, absent on the first iteration.
    pub loss_delta: Option<f64>,
    /// Mean absolute change from the previous computed saliency map.
    pub sal_delta: Option<f64>,
    /// Distinct argmax labels before refinement.
    pub clusters: usize,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConvergenceLog {
    pub records: Vec<IterationRecord>,
    pub cause: Option<TerminationCause>,
}

impl ConvergenceLog {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    /// CSV with columns `iter,loss,loss_delta,sal_delta,clusters,ms` and a
    /// trailing `# termination: <cause>` line. Leading `comments` become
    /// `# ` lines. With `timings` off the ms column is written as 0.
    pub fn to_csv(&self, timings: bool, comments: &[String]) -> String {
        let mut out = String::new();
        for c in comments {
            out.push_str("# ");
            out.push_str(c);
            out.push('\n');
        }
        out.push_str("iter,loss,loss_delta,sal_delta,clusters,ms\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            let ms = if timings { r.elapsed_ms } else { 0.0 };
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.iteration,
                r.loss,
                opt(r.loss_delta),
                opt(r.sal_delta),
                r.clusters,
                ms
            ));
        }
        if let Some(cause) = self.cause {
            out.push_str(&format!("# termination: {cause}\n"));
        }
        out
    }
}

/// Everything one iteration produced.
#[derive(Debug, Clone)]
pub struct IterationOutput {
    pub loss: f64,
    /// Features of this iteration's forward pass (before the update).
    pub features: Tensor4,
    pub labels: ClusterLabels,
    pub refined_labels: Vec<usize>,
    pub superpixels: SuperpixelMap,
    pub saliency: Option<SaliencyMap>,
}

/// Mutable training state for one cube.
pub struct SelfSup<'a> {
    input: FeatureView<'a>,
    config: SelfSupConfig,
    network: Network,
    optimizer: SgdMomentum,
    fixed_superpixels: Option<SuperpixelMap>,
    feature_superpixels: Option<SuperpixelMap>,
    iteration: usize,
}

impl<'a> SelfSup<'a> {
    /// Glorot-initialized network; for HS-Slic the cube superpixels are
    /// computed here once.
    pub fn new(input: FeatureView<'a>, config: SelfSupConfig) -> Result<Self> {
        config.validate()?;
        let fixed = match config.variant {
            Variant::HsSlic => Some(compute_superpixels(input, &config.slic)?),
            Variant::HfSlic => None,
        };
        Self::build(input, config, fixed)
    }

    /// Uses `superpixels` for refinement and saliency at every iteration,
    /// whatever the variant.
    pub fn with_superpixels(
        input: FeatureView<'a>,
        config: SelfSupConfig,
        superpixels: SuperpixelMap,
    ) -> Result<Self> {
        config.validate()?;
        if superpixels.height != input.height || superpixels.width != input.width {
            return Err(Error::shape("injected superpixels do not match the input"));
        }
        Self::build(input, config, Some(superpixels))
    }

    fn build(
        input: FeatureView<'a>,
        config: SelfSupConfig,
        fixed_superpixels: Option<SuperpixelMap>,
    ) -> Result<Self> {
        let network = glorot_init(Network::feature_extractor(input.channels), config.seed);
        let optimizer = SgdMomentum::new(config.lr, config.momentum)?;
        Ok(Self {
            input,
            config,
            network,
            optimizer,
            fixed_superpixels,
            feature_superpixels: None,
            iteration: 0,
        })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn config(&self) -> &SelfSupConfig {
        &self.config
    }

    /// Iterations completed so far.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// One full iteration including saliency.
    pub fn run_iteration(&mut self) -> Result<IterationOutput> {
        self.step(true)
    }

    /// One iteration; saliency only when `with_saliency`.
    pub fn step(&mut self, with_saliency: bool) -> Result<IterationOutput> {
        let (features, cache) = self.network.forward(self.input)?;
        let labels = argmax_labels(&features);
        let superpixels = self.superpixels_for(&features)?;
        let refined = majority_label(&superpixels, &labels.labels)?;
        let (loss, grad) = softmax_cross_entropy(&features, &refined)?;
        let grads = self.network.backward(&cache, &grad)?;
        self.network.apply(&mut self.optimizer, &grads)?;
        self.iteration += 1;
        let saliency = if with_saliency {
            Some(saliency_from_features(features.view(), &superpixels, &self.config.mr)?)
        } else {
            None
        };
        Ok(IterationOutput {
            loss,
            features,
            labels,
            refined_labels: refined,
            superpixels,
            saliency,
        })
    }

    fn superpixels_for(&mut self, features: &Tensor4) -> Result<SuperpixelMap> {
        if let Some(map) = &self.fixed_superpixels {
            return Ok(map.clone());
        }
        let due = self
            .iteration
            .is_multiple_of(self.config.recompute_superpixels_every);
        if due || self.feature_superpixels.is_none() {
            self.feature_superpixels = Some(compute_superpixels(features.view(), &self.config.slic)?);
        }
        Ok(self.feature_superpixels.clone().expect("set above"))
    }

    /// Iterates until a termination rule fires. Returns the saliency map of
    /// the final iteration and the log.
    pub fn run(&mut self) -> Result<(SaliencyMap, ConvergenceLog)> {
        let cfg = self.config.clone();
        let mut log = ConvergenceLog::default();
        let mut prev_loss: Option<f64> = None;
        let mut prev_sal: Option<SaliencyMap> = None;
        loop {
            let i = self.iteration + 1;
            let started = Instant::now();
            let want_sal = i == 1 || i.is_multiple_of(cfg.saliency_every) || i >= cfg.kappa;
            let mut out = self.step(want_sal)?;
            let loss_delta = prev_loss.map(|p| (out.loss - p).abs());
            let mut sal_delta = match (&out.saliency, &prev_sal) {
                (Some(s), Some(p)) => Some(saliency_delta(s, p)?),
                _ => None,
            };
            // The deltas are only defined from iteration 2 on.
            let cause = if sal_delta.is_some_and(|d| d <= cfg.epsilon2) {
                Some(TerminationCause::SaliencyConverged)
            } else if loss_delta.is_some_and(|d| d <= cfg.epsilon1) {
                Some(TerminationCause::LossConverged)
            } else if i >= cfg.kappa {
                Some(TerminationCause::MaxIterations)
            } else {
                None
            };
            if cause.is_some() && out.saliency.is_none() {
                let s = saliency_from_features(out.features.view(), &out.superpixels, &cfg.mr)?;
                if let Some(p) = &prev_sal {
                    sal_delta = Some(saliency_delta(&s, p)?);
                }
                out.saliency = Some(s);
            }
            log.records.push(IterationRecord {
                iteration: i,
                loss: out.loss,
                loss_delta,
                sal_delta,
                clusters: out.labels.cluster_count(),
                elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
            });
            prev_loss = Some(out.loss);
            if let Some(s) = out.saliency {
                if let Some(c) = cause {
                    log.cause = Some(c);
                    return Ok((s, log));
                }
                prev_sal = Some(s);
            }
        }
    }
}

/// Trains on `input` (a normalized cube view) and returns the final
/// saliency map with the convergence log.
pub fn run_selfsup(input: FeatureView<'_>, config: &SelfSupConfig) -> Result<(SaliencyMap, ConvergenceLog)> {
    SelfSup::new(input, config.clone())?.run()
}
