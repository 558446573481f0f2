//! Run configuration: built-in defaults, then a `key = value` file, then
//! command-line flags.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use sudf::metrics::EvalParams;
use sudf::mrank::MrParams;
use sudf::selfsup::{SelfSupConfig, Variant};
use sudf::slic::SlicParams;

/// Invalid configuration; maps to exit status 2.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunVariant {
    HfSlic,
    HsSlic,
    /// Manifold ranking directly on the normalized spectra.
    MrBaseline,
}

impl RunVariant {
    pub const ALL: [RunVariant; 3] = [RunVariant::HfSlic, RunVariant::HsSlic, RunVariant::MrBaseline];

    pub fn as_str(self) -> &'static str {
        match self {
            RunVariant::HfSlic => "hf-slic",
            RunVariant::HsSlic => "hs-slic",
            RunVariant::MrBaseline => "mr-baseline",
        }
    }

    pub fn selfsup(self) -> Option<Variant> {
        match self {
            RunVariant::HfSlic => Some(Variant::HfSlic),
            RunVariant::HsSlic => Some(Variant::HsSlic),
            RunVariant::MrBaseline => None,
        }
    }
}

impl fmt::Display for RunVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RunVariant {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s.trim() {
            "hf-slic" => Ok(RunVariant::HfSlic),
            "hs-slic" => Ok(RunVariant::HsSlic),
            "mr-baseline" => Ok(RunVariant::MrBaseline),
            other => Err(ConfigError(format!(
                "unknown variant '{other}' (expected hf-slic, hs-slic or mr-baseline)"
            ))),
        }
    }
}

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub variant: RunVariant,
    pub seed: u64,
    /// Image-level worker threads; 0 lets the pool decide.
    pub workers: usize,
    pub kappa: usize,
    pub eps1: f64,
    pub eps2: f64,
    pub segments: usize,
    pub compactness: f64,
    pub slic_iterations: usize,
    pub min_segment_size: f64,
    pub alpha: f64,
    pub sigma_sq: f64,
    pub lr: f64,
    pub momentum: f64,
    pub recompute_superpixels_every: usize,
    pub saliency_every: usize,
    /// Record per-iteration wall time. Off makes every artifact a pure
    /// function of inputs, config and seed.
    pub timings: bool,
    pub beta_sq: f64,
    pub auc_splits: usize,
    pub auc_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let ss = SelfSupConfig::default();
        let ev = EvalParams::default();
        Self {
            variant: RunVariant::HfSlic,
            seed: ss.seed,
            workers: 0,
            kappa: ss.kappa,
            eps1: ss.epsilon1,
            eps2: ss.epsilon2,
            segments: ss.slic.target_segments,
            compactness: ss.slic.compactness,
            slic_iterations: ss.slic.max_iterations,
            min_segment_size: ss.slic.connectivity_min_size,
            alpha: ss.mr.alpha,
            sigma_sq: ss.mr.sigma_sq,
            lr: ss.lr,
            momentum: ss.momentum,
            recompute_superpixels_every: ss.recompute_superpixels_every,
            saliency_every: ss.saliency_every,
            timings: true,
            beta_sq: ev.beta_sq,
            auc_splits: ev.auc_splits,
            auc_seed: ev.auc_seed,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value
        .trim()
        .parse()
        .map_err(|_| ConfigError(format!("bad value '{value}' for '{key}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value.trim() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(ConfigError(format!("bad boolean '{value}' for '{key}'"))),
    }
}

impl RunConfig {
    /// Sets one key. Dashes and underscores are interchangeable.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let k = key.trim().to_ascii_lowercase().replace('-', "_");
        match k.as_str() {
            "variant" => self.variant = value.parse()?,
            "seed" => self.seed = parse(&k, value)?,
            "workers" => self.workers = parse(&k, value)?,
            "kappa" => self.kappa = parse(&k, value)?,
            "eps1" => self.eps1 = parse(&k, value)?,
            "eps2" => self.eps2 = parse(&k, value)?,
            "segments" => self.segments = parse(&k, value)?,
            "compactness" => self.compactness = parse(&k, value)?,
            "slic_iterations" => self.slic_iterations = parse(&k, value)?,
            "min_segment_size" => self.min_segment_size = parse(&k, value)?,
            "alpha" => self.alpha = parse(&k, value)?,
            "sigma_sq" => self.sigma_sq = parse(&k, value)?,
            "lr" => self.lr = parse(&k, value)?,
            "momentum" => self.momentum = parse(&k, value)?,
            "recompute_superpixels_every" => self.recompute_superpixels_every = parse(&k, value)?,
            "saliency_every" => self.saliency_every = parse(&k, value)?,
            "timings" => self.timings = parse_bool(&k, value)?,
            "beta_sq" => self.beta_sq = parse(&k, value)?,
            "auc_splits" => self.auc_splits = parse(&k, value)?,
            "auc_seed" => self.auc_seed = parse(&k, value)?,
            _ => return Err(ConfigError(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Applies a `key = value` file; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), ConfigError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("{origin}:{}: expected 'key = value'", n + 1)))?;
            self.set(k, v)
                .map_err(|e| ConfigError(format!("{origin}:{}: {}", n + 1, e.0)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn slic(&self) -> SlicParams {
        SlicParams {
            target_segments: self.segments,
            compactness: self.compactness,
            max_iterations: self.slic_iterations,
            connectivity_min_size: self.min_segment_size,
        }
    }

    pub fn mr(&self) -> MrParams {
        MrParams {
            alpha: self.alpha,
            sigma_sq: self.sigma_sq,
            ..MrParams::default()
        }
    }

    pub fn eval(&self) -> EvalParams {
        EvalParams {
            beta_sq: self.beta_sq,
            auc_splits: self.auc_splits,
            auc_seed: self.auc_seed,
        }
    }

    /// Self-supervision settings for a SUDF variant.
    pub fn selfsup(&self, variant: Variant) -> SelfSupConfig {
        SelfSupConfig {
            variant,
            epsilon1: self.eps1,
            epsilon2: self.eps2,
            kappa: self.kappa,
            slic: self.slic(),
            mr: self.mr(),
            lr: self.lr,
            momentum: self.momentum,
            seed: self.seed,
            recompute_superpixels_every: self.recompute_superpixels_every,
            saliency_every: self.saliency_every,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |e: sudf::Error| ConfigError(e.to_string());
        self.selfsup(Variant::HfSlic).validate().map_err(bad)?;
        if !(self.beta_sq > 0.0) {
            return Err(ConfigError("beta_sq must be > 0".into()));
        }
        if self.auc_splits == 0 {
            return Err(ConfigError("auc_splits must be >= 1".into()));
        }
        Ok(())
    }

    /// `key = value` lines for provenance. The worker count is left out:
    /// it never changes results.
    pub fn provenance(&self) -> Vec<String> {
        vec![
            format!("sudf {}", env!("CARGO_PKG_VERSION")),
            format!("variant = {}", self.variant),
            format!("seed = {}", self.seed),
            format!("kappa = {}", self.kappa),
            format!("eps1 = {}", self.eps1),
            format!("eps2 = {}", self.eps2),
            format!("segments = {}", self.segments),
            format!("compactness = {}", self.compactness),
            format!("slic_iterations = {}", self.slic_iterations),
            format!("min_segment_size = {}", self.min_segment_size),
            format!("alpha = {}", self.alpha),
            format!("sigma_sq = {}", self.sigma_sq),
            format!("lr = {}", self.lr),
            format!("momentum = {}", self.momentum),
            format!("recompute_superpixels_every = {}", self.recompute_superpixels_every),
            format!("saliency_every = {}", self.saliency_every),
            format!("timings = {}", self.timings),
            format!("beta_sq = {}", self.beta_sq),
            format!("auc_splits = {}", self.auc_splits),
            format!("auc_seed = {}", self.auc_seed),
        ]
    }
}
