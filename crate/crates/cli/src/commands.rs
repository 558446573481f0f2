//! The `run`, `eval`, `bench` and `synth` subcommands.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};

use sudf::hsio::{
    load_cube, load_mask, load_saliency_png, normalize_cube, raw_path_for, save_cube, save_mask,
    save_saliency_annotated,
};
use sudf::metrics::{aggregate, evaluate, MetricReport};
use sudf::mrank::saliency_from_features;
use sudf::selfsup::{run_selfsup, ConvergenceLog, TerminationCause};
use sudf::slic::compute_superpixels;
use sudf::synth::{synthetic_cube, SynthParams};

use crate::config::{RunConfig, RunVariant};
use crate::report::{
    bench_csv, metrics_csv, ranking_table, summary_csv, BenchRow, EvalRow, VariantSummary,
};

/// Outcome of a command that did not hit a configuration error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    /// Some images failed; the others were still written.
    Partial,
}

impl Status {
    pub fn from_failures(failures: usize) -> Self {
        if failures == 0 {
            Status::Success
        } else {
            Status::Partial
        }
    }

    pub fn merge(self, other: Status) -> Status {
        if self == Status::Success && other == Status::Success {
            Status::Success
        } else {
            Status::Partial
        }
    }
}

/// Runs `f` over `items` on a pool of `workers` threads (0 = default),
/// keeping input order in the output.
pub fn map_images<I: Sync, T: Send>(items: &[I], workers: usize, f: impl Fn(&I) -> T + Sync + Send) -> Result<Vec<T>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .context("building worker pool")?;
        Ok(pool.install(|| items.par_iter().map(&f).collect()))
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = workers;
        Ok(items.iter().map(f).collect())
    }
}

fn stem_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn files_with_extension(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext)))
        .collect();
    out.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(out)
}

/// Header files to process: a single `.hdr`, or every `.hdr` in a directory
/// (its `cubes/` subdirectory if present), sorted by file name.
pub fn list_cubes(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    if !input.is_dir() {
        bail!("input {} does not exist", input.display());
    }
    let dir = if input.join("cubes").is_dir() {
        input.join("cubes")
    } else {
        input.to_path_buf()
    };
    let cubes = files_with_extension(&dir, "hdr")?;
    if cubes.is_empty() {
        bail!("no .hdr files in {}", dir.display());
    }
    Ok(cubes)
}

/// Per-image result of [`cmd_run`].
#[derive(Debug, Clone)]
pub struct ImageOutcome {
    pub stem: String,
    pub result: std::result::Result<RunSummary, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub iterations: usize,
    pub cause: Option<TerminationCause>,
    pub wall_ms: f64,
}

/// Processes one cube and writes `<stem>.png`, `<stem>.raw` and
/// `<stem>_convergence.csv` into `out_dir`.
pub fn run_one(header: &Path, out_dir: &Path, cfg: &RunConfig) -> Result<RunSummary> {
    let started = Instant::now();
    let stem = stem_of(header);
    let cube = load_cube(header, &raw_path_for(header))?;
    let cube = normalize_cube(&cube);
    let (saliency, log) = match cfg.variant.selfsup() {
        Some(v) => run_selfsup(cube.view(), &cfg.selfsup(v))?,
        None => {
            let sp = compute_superpixels(cube.view(), &cfg.slic())?;
            (
                saliency_from_features(cube.view(), &sp, &cfg.mr())?,
                ConvergenceLog::default(),
            )
        }
    };
    let mut comments = cfg.provenance();
    comments.push(format!("input = {}", stem));
    save_saliency_annotated(
        &saliency,
        &out_dir.join(format!("{stem}.png")),
        Some(&out_dir.join(format!("{stem}.raw"))),
        Some(&comments.join("; ")),
    )?;
    let mut csv = log.to_csv(cfg.timings, &comments);
    if log.cause.is_none() {
        csv.push_str("# termination: none (no training)\n");
    }
    let csv_path = out_dir.join(format!("{stem}_convergence.csv"));
    fs::write(&csv_path, csv).with_context(|| format!("writing {}", csv_path.display()))?;
    Ok(RunSummary {
        iterations: log.iterations(),
        cause: log.cause,
        wall_ms: if cfg.timings {
            started.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        },
    })
}

/// Runs the configured variant on every cube under `input`. Failures are
/// reported per image and do not stop the others.
pub fn cmd_run(input: &Path, out_dir: &Path, cfg: &RunConfig) -> Result<(Status, Vec<ImageOutcome>)> {
    let cubes = list_cubes(input)?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let outcomes = map_images(&cubes, cfg.workers, |hdr| ImageOutcome {
        stem: stem_of(hdr),
        result: run_one(hdr, out_dir, cfg).map_err(|e| format!("{}: {e:#}", hdr.display())),
    })?;
    let failures = outcomes.iter().filter(|o| o.result.is_err()).count();
    for o in &outcomes {
        if let Err(e) = &o.result {
            eprintln!("error: {e}");
        }
    }
    if failures > 0 {
        eprintln!("{failures} of {} images failed", outcomes.len());
    }
    Ok((Status::from_failures(failures), outcomes))
}

/// Directory holding ground-truth PNGs: `gt/masks` if present, else `gt`.
fn mask_dir(gt: &Path) -> PathBuf {
    if gt.join("masks").is_dir() {
        gt.join("masks")
    } else {
        gt.to_path_buf()
    }
}

/// Evaluation over matching stems.
#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub rows: Vec<EvalRow>,
    pub unmatched: Vec<String>,
    pub failures: Vec<String>,
}

/// Scores every `<stem>.png` in `pred_dir` that has a `<stem>.png` mask.
pub fn evaluate_dirs(pred_dir: &Path, gt_dir: &Path, cfg: &RunConfig) -> Result<EvalOutcome> {
    let gt_dir = mask_dir(gt_dir);
    let preds = files_with_extension(pred_dir, "png")?;
    let masks = files_with_extension(&gt_dir, "png")?;
    let mask_stems: Vec<String> = masks.iter().map(|p| stem_of(p)).collect();
    let pred_stems: Vec<String> = preds.iter().map(|p| stem_of(p)).collect();
    let mut unmatched: Vec<String> = pred_stems
        .iter()
        .filter(|s| !mask_stems.contains(s))
        .map(|s| format!("prediction without mask: {s}"))
        .collect();
    unmatched.extend(
        mask_stems
            .iter()
            .filter(|s| !pred_stems.contains(s))
            .map(|s| format!("mask without prediction: {s}")),
    );
    let pairs: Vec<(String, PathBuf, PathBuf)> = preds
        .iter()
        .zip(&pred_stems)
        .filter(|(_, s)| mask_stems.contains(s))
        .map(|(p, s)| (s.clone(), p.clone(), gt_dir.join(format!("{s}.png"))))
        .collect();
    if pairs.is_empty() {
        bail!(
            "no prediction in {} matches a mask in {}",
            pred_dir.display(),
            gt_dir.display()
        );
    }
    let params = cfg.eval();
    let scored = map_images(&pairs, cfg.workers, |(stem, pred, mask)| {
        let r = (|| -> Result<MetricReport> {
            let s = load_saliency_png(pred)?;
            let g = load_mask(mask)?;
            Ok(evaluate(&s, &g, &params)?)
        })();
        (stem.clone(), r.map_err(|e| format!("{stem}: {e:#}")))
    })?;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (stem, r) in scored {
        match r {
            Ok(report) => rows.push(EvalRow { image: stem, report }),
            Err(e) => failures.push(e),
        }
    }
    Ok(EvalOutcome {
        rows,
        unmatched,
        failures,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Writes the per-image metrics CSV with a `MEAN` row.
pub fn cmd_eval(pred_dir: &Path, gt_dir: &Path, out_csv: &Path, cfg: &RunConfig) -> Result<Status> {
    let outcome = evaluate_dirs(pred_dir, gt_dir, cfg)?;
    for u in &outcome.unmatched {
        eprintln!("warning: {u}");
    }
    for f in &outcome.failures {
        eprintln!("error: {f}");
    }
    if outcome.rows.is_empty() {
        bail!("no image could be evaluated");
    }
    let reports: Vec<MetricReport> = outcome.rows.iter().map(|r| r.report).collect();
    let mean = aggregate(&reports)?;
    if let Some(parent) = out_csv.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_text(out_csv, &metrics_csv(&outcome.rows, &mean, &eval_comments(cfg)))?;
    Ok(Status::from_failures(outcome.failures.len()))
}

fn eval_comments(cfg: &RunConfig) -> Vec<String> {
    vec![
        format!("sudf {}", env!("CARGO_PKG_VERSION")),
        format!("beta_sq = {}", cfg.beta_sq),
        format!("auc_splits = {}", cfg.auc_splits),
        format!("auc_seed = {}", cfg.auc_seed),
    ]
}

/// Runs each variant over `dataset/cubes`, evaluates against
/// `dataset/masks`, and writes `bench_report.csv`, `bench_summary.csv` and
/// `ranking.txt` into `out_dir` (per-variant outputs go to
/// `out_dir/<variant>/`).
pub fn cmd_bench(dataset: &Path, variants: &[RunVariant], out_dir: &Path, cfg: &RunConfig) -> Result<Status> {
    if variants.is_empty() {
        bail!("no variants selected");
    }
    if !dataset.join("cubes").is_dir() || !dataset.join("masks").is_dir() {
        bail!("{} must contain cubes/ and masks/", dataset.display());
    }
    fs::create_dir_all(out_dir)?;
    let mut status = Status::Success;
    let mut rows = Vec::new();
    let mut means = Vec::new();
    let mut summaries = Vec::new();
    for &variant in variants {
        let vcfg = RunConfig {
            variant,
            ..cfg.clone()
        };
        let vdir = out_dir.join(variant.as_str());
        let (st, outcomes) = cmd_run(&dataset.join("cubes"), &vdir, &vcfg)?;
        status = status.merge(st);
        let eval = match evaluate_dirs(&vdir, &dataset.join("masks"), &vcfg) {
            Ok(e) => e,
            Err(e) => {
                eprintln!("error: {variant}: {e:#}");
                status = Status::Partial;
                continue;
            }
        };
        for f in &eval.failures {
            eprintln!("error: {variant}: {f}");
        }
        if !eval.failures.is_empty() || !eval.unmatched.is_empty() {
            status = Status::Partial;
        }
        let reports: Vec<MetricReport> = eval.rows.iter().map(|r| r.report).collect();
        let Ok(mean) = aggregate(&reports) else {
            status = Status::Partial;
            continue;
        };
        write_text(
            &vdir.join("metrics.csv"),
            &metrics_csv(&eval.rows, &mean, &vcfg.provenance()),
        )?;
        let ok: Vec<&RunSummary> = outcomes.iter().filter_map(|o| o.result.as_ref().ok()).collect();
        let count = |c: TerminationCause| ok.iter().filter(|s| s.cause == Some(c)).count();
        summaries.push(VariantSummary {
            variant,
            images: outcomes.len(),
            failed: outcomes.len() - ok.len(),
            mean_iterations: if ok.is_empty() {
                0.0
            } else {
                ok.iter().map(|s| s.iterations as f64).sum::<f64>() / ok.len() as f64
            },
            loss_converged: count(TerminationCause::LossConverged),
            saliency_converged: count(TerminationCause::SaliencyConverged),
            max_iterations: count(TerminationCause::MaxIterations),
            wall_ms: ok.iter().map(|s| s.wall_ms).sum(),
        });
        for r in eval.rows {
            let summary = outcomes
                .iter()
                .find(|o| o.stem == r.image)
                .and_then(|o| o.result.as_ref().ok());
            rows.push(BenchRow {
                variant,
                image: r.image,
                report: r.report,
                iterations: summary.map_or(0, |s| s.iterations),
                termination: summary
                    .and_then(|s| s.cause)
                    .map_or("none".into(), |c| c.as_str().into()),
            });
        }
        means.push((variant, mean));
    }
    if means.is_empty() {
        bail!("every variant failed");
    }
    let mut comments = cfg.provenance();
    comments.retain(|c| !c.starts_with("variant ="));
    write_text(&out_dir.join("bench_report.csv"), &bench_csv(&rows, &means, &comments))?;
    write_text(&out_dir.join("bench_summary.csv"), &summary_csv(&summaries, &comments))?;
    write_text(&out_dir.join("ranking.txt"), &ranking_table(&means, &summaries))?;
    Ok(status)
}

/// Writes `count` synthetic cubes (`cubes/synth_NNN.hdr/.raw`) and their
/// masks (`masks/synth_NNN.png`); cube `i` uses seed `seed + i`.
pub fn cmd_synth(out_dir: &Path, count: usize, seed: u64, params: &SynthParams) -> Result<Status> {
    if count == 0 {
        bail!("count must be >= 1");
    }
    let (cubes, masks) = (out_dir.join("cubes"), out_dir.join("masks"));
    fs::create_dir_all(&cubes)?;
    fs::create_dir_all(&masks)?;
    for i in 0..count {
        let stem = format!("synth_{i:03}");
        let s = seed
            .checked_add(i as u64)
            .ok_or_else(|| anyhow!("seed overflow"))?;
        let (cube, mask) = synthetic_cube(params, s)?;
        save_cube(
            &cube,
            &cubes.join(format!("{stem}.hdr")),
            &cubes.join(format!("{stem}.raw")),
        )?;
        save_mask(&mask, &masks.join(format!("{stem}.png")))?;
    }
    Ok(Status::Success)
}
