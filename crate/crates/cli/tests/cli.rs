//! End-to-end checks of the `sudf` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sudf::hsio::{load_mask, load_saliency_png, load_saliency_raw, save_mask, save_saliency, SaliencyMap};
use sudf::metrics::{aggregate, evaluate, EvalParams};
use sudf_cli::report::parse_metrics_csv;

fn sudf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sudf"))
        .args(args)
        .output()
        .expect("spawning sudf")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, count: usize, size: usize) {
    let out = sudf(&["synth", "--out", path(dir), "--count", &count.to_string(), "--size", &size.to_string()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

const FAST: [&str; 5] = ["--segments", "20", "--kappa", "4", "--no-timings"];

#[test]
fn run_writes_three_files_per_cube() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 1, 16);
    let out = dir.path().join("out");
    let hdr = data.join("cubes/synth_000.hdr");
    let mut args = vec!["run", "--variant", "hf-slic", "--input", path(&hdr), "--out", path(&out)];
    args.extend(FAST);
    let res = sudf(&args);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let mut names: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["synth_000.png", "synth_000.raw", "synth_000_convergence.csv"]);
    let csv = fs::read_to_string(out.join("synth_000_convergence.csv")).unwrap();
    assert!(csv.contains("# seed = 0"));
    assert!(csv.contains("# termination: "));
    let png = load_saliency_png(&out.join("synth_000.png")).unwrap();
    let raw = load_saliency_raw(&out.join("synth_000.raw"), 16, 16).unwrap();
    assert_eq!(png.quantized(), raw.quantized());
}

#[test]
fn missing_raw_names_the_path_and_spares_other_cubes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 2, 16);
    let missing = data.join("cubes/synth_000.raw");
    fs::remove_file(&missing).unwrap();
    let out = dir.path().join("out");
    let mut args = vec!["run", "--variant", "mr-baseline", "--input", path(&data), "--out", path(&out)];
    args.extend(FAST);
    let res = sudf(&args);
    assert_eq!(res.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&res.stderr);
    assert!(stderr.contains("synth_000.raw"), "{stderr}");
    assert!(out.join("synth_001.png").exists());
    assert!(out.join("synth_001_convergence.csv").exists());
    assert!(!out.join("synth_000.png").exists());
}

#[test]
fn eval_of_masks_against_themselves_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 2, 16);
    let csv = dir.path().join("m.csv");
    let masks = data.join("masks");
    let res = sudf(&["eval", "--input", path(&masks), "--gt", path(&data), "--out", path(&csv)]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let rows = parse_metrics_csv(&fs::read_to_string(&csv).unwrap()).unwrap();
    let (name, mean) = rows.last().unwrap();
    assert_eq!(name, "MEAN");
    assert_eq!(mean.auc_borji, 1.0);
    assert_eq!(mean.cc, 1.0);
    assert!(mean.kldiv <= 1e-6);
}

#[test]
fn eval_with_no_matching_stems_fails() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 1, 16);
    let preds = dir.path().join("preds");
    fs::create_dir_all(&preds).unwrap();
    save_saliency(&SaliencyMap::new(16, 16, vec![0.5; 256]).unwrap(), &preds.join("other.png"), None).unwrap();
    let csv = dir.path().join("m.csv");
    let res = sudf(&["eval", "--input", path(&preds), "--gt", path(&data), "--out", path(&csv)]);
    assert_ne!(res.status.code(), Some(0));
    let stderr = String::from_utf8_lossy(&res.stderr);
    assert!(stderr.contains("no prediction"), "{stderr}");
    assert!(!csv.exists());
}

#[test]
fn eval_csv_equals_direct_library_calls() {
    use rand::{Rng, SeedableRng};
    let dir = tempfile::tempdir().unwrap();
    let (preds, gts) = (dir.path().join("p"), dir.path().join("g"));
    fs::create_dir_all(&preds).unwrap();
    fs::create_dir_all(&gts).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let params = EvalParams::default();
    let mut expected = Vec::new();
    for i in 0..3 {
        let (h, w) = (rng.gen_range(8..33), rng.gen_range(8..33));
        let s = SaliencyMap::new(h, w, (0..h * w).map(|_| rng.gen::<f64>()).collect()).unwrap();
        let mut m: Vec<bool> = (0..h * w).map(|_| rng.gen_bool(0.3)).collect();
        m[0] = true;
        m[1] = false;
        let g = sudf::BinaryMask::new(h, w, m).unwrap();
        let stem = format!("img{i}");
        save_saliency(&s, &preds.join(format!("{stem}.png")), None).unwrap();
        save_mask(&g, &gts.join(format!("{stem}.png"))).unwrap();
        // The oracle reads the same files the CLI reads.
        let s = load_saliency_png(&preds.join(format!("{stem}.png"))).unwrap();
        let g = load_mask(&gts.join(format!("{stem}.png"))).unwrap();
        expected.push((stem, evaluate(&s, &g, &params).unwrap()));
    }
    let csv = dir.path().join("m.csv");
    let res = sudf(&["eval", "--input", path(&preds), "--gt", path(&gts), "--out", path(&csv)]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let rows = parse_metrics_csv(&fs::read_to_string(&csv).unwrap()).unwrap();
    assert_eq!(rows.len(), 4);
    for ((name, got), (stem, want)) in rows.iter().zip(&expected) {
        assert_eq!(name, stem);
        assert_eq!(got, want);
    }
    let reports: Vec<_> = expected.iter().map(|(_, r)| *r).collect();
    assert_eq!(rows[3].1, aggregate(&reports).unwrap());
}

fn bench(data: &Path, out: &Path, variants: &str, workers: &str) -> Output {
    let mut args = vec![
        "bench", "--input", path(data), "--out", path(out), "--variant", variants, "--workers", workers,
    ];
    args.extend(FAST);
    sudf(&args)
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn bench_two_variants_one_image_is_ranked_and_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 1, 16);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let res = bench(&data, &a, "hs-slic,mr-baseline", "1");
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let report = fs::read_to_string(a.join("bench_report.csv")).unwrap();
    let rows: Vec<&str> = report
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("variant,") && !l.contains(",MEAN,"))
        .collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("hs-slic,synth_000,"));
    assert!(rows[1].starts_with("mr-baseline,synth_000,"));
    let ranking = fs::read_to_string(a.join("ranking.txt")).unwrap();
    let table = ranking.split("\n\n").next().unwrap();
    assert_eq!(table.lines().count(), 10);
    assert!(table.contains("(1)") && table.contains("(2)"));
    assert!(!table.contains("(3)"));

    let res = bench(&data, &b, "hs-slic,mr-baseline", "2");
    assert_eq!(res.status.code(), Some(0));
    assert_eq!(read_tree(&a), read_tree(&b));
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 1, 16);
    let out = dir.path().join("out");
    let cube = data.join("cubes");
    for extra in [
        vec!["--variant", "nope"],
        vec!["--alpha", "1.5"],
        vec!["--kappa", "0"],
        vec!["--config", "/nonexistent/cfg.txt"],
        vec!["--frobnicate"],
    ] {
        let mut args = vec!["run", "--input", path(&cube), "--out", path(&out)];
        args.extend(extra.iter().copied());
        assert_eq!(sudf(&args).status.code(), Some(2), "{extra:?}");
    }
    let cfg = dir.path().join("cfg.txt");
    fs::write(&cfg, "seed = 3\nbogus_key = 1\n").unwrap();
    let res = sudf(&["run", "--input", path(&cube), "--out", path(&out), "--config", path(&cfg)]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains(":2:"));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 1, 16);
    let cfg = dir.path().join("cfg.txt");
    fs::write(&cfg, "seed = 3\nsegments = 12\nvariant = mr-baseline\n").unwrap();
    let out = dir.path().join("out");
    let res = sudf(&[
        "run", "--input", path(&data), "--out", path(&out), "--config", path(&cfg), "--seed", "9",
    ]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let csv = fs::read_to_string(out.join("synth_000_convergence.csv")).unwrap();
    assert!(csv.contains("# seed = 9\n"));
    assert!(csv.contains("# segments = 12\n"));
    assert!(csv.contains("# variant = mr-baseline\n"));
}
