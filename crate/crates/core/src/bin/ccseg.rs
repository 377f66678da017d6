//! `ccseg`: command-line surface of the segmentation toolkit.
//!
//! Subcommands: synth, infer, eval, rank, bench, gradcheck, selftest.
//! Values resolve as flag > `CCSEG_OUT_DIR` (output directory only) >
//! config file > built-in default, and every run echoes its resolved
//! configuration so results are reproducible from the printed block plus
//! the seed. Exit codes: 0 success, 1 contract/usage violation, 2 I/O or
//! format error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ccseg::attention::{check, AttentionConfig};
use ccseg::bench::{measure_throughput, op_count_report};
use ccseg::datakit::{self, synth_generate, Stage};
use ccseg::error::{Error, Result};
use ccseg::labelmap::{read_labelmap, write_labelmap};
use ccseg::metrics::{frame_scores, FrameEval, DEFAULT_TAU};
use ccseg::pipeline::weights::{read_weights, write_weights, PipelineWeights};
use ccseg::pipeline::{infer_frame, seeded_weights, Insertion, VariantSpec};
use ccseg::ranking::{
    aggregate_algorithm, boxplot_data, build_report, emit_report, AlgorithmEntry, ReportFormat,
    DEFAULT_PERCENTILE,
};
use ccseg::tensor::Tensor;

const OUT_DIR_ENV: &str = "CCSEG_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "ccseg",
    version,
    about = "Criss-cross attention instance segmentation toolkit"
)]
struct Cli {
    /// TOML config file; command-line flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (flag > CCSEG_OUT_DIR > config > "ccseg-out")
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Seed for anything stochastic
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress the resolved-config echo
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic corpus for one challenge stage
    Synth {
        /// train | 1 | 2 | 3
        #[arg(long, default_value = "train")]
        stage: String,
        #[arg(long, default_value_t = 16)]
        count: usize,
    },
    /// Run the pipeline on an image or directory of images
    Infer {
        /// Weights file (CCSEG1); alternative to --seed-weights
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Generate deterministic weights from this seed instead
        #[arg(long)]
        seed_weights: Option<u64>,
        /// Also save the weights in use to this path
        #[arg(long)]
        emit_weights: Option<PathBuf>,
        /// none | backbone | fpn | both
        #[arg(long, default_value = "none")]
        variant: String,
        /// PNG file or directory of PNGs
        #[arg(long)]
        input: PathBuf,
        /// Display confidence threshold
        #[arg(long)]
        confidence: Option<f64>,
    },
    /// Score predicted label maps against ground truth
    Eval {
        /// Directory of ground-truth label maps
        #[arg(long)]
        gt: PathBuf,
        /// Directory of predicted label maps (same file names)
        #[arg(long)]
        pred: PathBuf,
        /// NSD boundary tolerance in pixels
        #[arg(long)]
        tau: Option<f64>,
        /// Output JSON-lines file (default <out-dir>/frame_evals.jsonl)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate per-algorithm frame evaluations into a ranked report
    Rank {
        /// Directory of <algorithm>.jsonl files produced by `eval`
        #[arg(long)]
        input: PathBuf,
        /// Robustness percentile
        #[arg(long)]
        percentile: Option<f64>,
        /// csv | json | boxplot-data
        #[arg(long)]
        format: Option<String>,
        /// Attach fps to an algorithm: NAME=FPS (repeatable)
        #[arg(long)]
        fps: Vec<String>,
    },
    /// Measure throughput of one variant on synthetic frames
    Bench {
        /// none | backbone | fpn | both
        #[arg(long, default_value = "none")]
        variant: String,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        seed_weights: Option<u64>,
        /// Number of synthetic frames in the sequence
        #[arg(long, default_value_t = 64)]
        frames: usize,
        /// Square frame side length (must be divisible by 32)
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long)]
        repetitions: Option<usize>,
        #[arg(long)]
        warmup: Option<usize>,
    },
    /// Finite-difference check of the attention backward pass
    Gradcheck {
        /// Number of random module/input draws
        #[arg(long, default_value_t = 10)]
        draws: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Run the built-in invariant suite
    Selftest,
}

/// Optional overrides loadable from a TOML file. Unknown keys are rejected.
#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FileConfig {
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    tau: Option<f64>,
    percentile: Option<f64>,
    confidence: Option<f64>,
    repetitions: Option<usize>,
    warmup: Option<usize>,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }
}

/// Fully resolved settings for one run, echoed for reproducibility.
struct Resolved {
    subcommand: &'static str,
    seed: u64,
    out_dir: PathBuf,
    extra: BTreeMap<&'static str, String>,
}

impl Resolved {
    fn echo(&self, quiet: bool) {
        if quiet {
            return;
        }
        println!("# resolved-config");
        println!("subcommand = \"{}\"", self.subcommand);
        println!("seed = {}", self.seed);
        println!("out_dir = \"{}\"", self.out_dir.display());
        for (k, v) in &self.extra {
            println!("{k} = {v}");
        }
        println!();
    }
}

fn resolve_out_dir(flag: Option<&Path>, cfg: &FileConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("ccseg-out"))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn load_or_seed_weights(
    weights: Option<&Path>,
    seed_weights: Option<u64>,
    variant: &VariantSpec,
    fallback_seed: u64,
) -> Result<(PipelineWeights, String)> {
    match (weights, seed_weights) {
        (Some(path), None) => Ok((read_weights(path)?, format!("\"{}\"", path.display()))),
        (None, seed) => {
            let s = seed.unwrap_or(fallback_seed);
            Ok((seeded_weights(variant, s), format!("\"seeded:{s}\"")))
        }
        (Some(_), Some(_)) => Err(Error::config(
            "--weights and --seed-weights are mutually exclusive",
        )),
    }
}

fn png_files(dir_or_file: &Path) -> Result<Vec<PathBuf>> {
    if dir_or_file.is_file() {
        return Ok(vec![dir_or_file.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir_or_file)
        .map_err(|e| Error::io(dir_or_file, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "png"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::contract(format!(
            "no PNG files under {}",
            dir_or_file.display()
        )));
    }
    Ok(files)
}

fn synthetic_frames(count: usize, size: usize, seed: u64) -> Result<Vec<Tensor>> {
    let dir = tempfile::tempdir().map_err(|e| Error::io(Path::new("tmp"), e))?;
    let manifest = synth_generate(Stage::Train, count, seed, dir.path())?;
    manifest
        .records
        .iter()
        .map(|r| {
            let img = datakit::read_image(&r.image)?;
            if img.shape()[1] == size {
                Ok(img)
            } else {
                ccseg::tensor::bilinear_resize(&img, size, size)
            }
        })
        .collect()
}

fn cmd_synth(stage: &str, count: usize, seed: u64, out_dir: &Path) -> Result<()> {
    let stage: Stage = stage.parse()?;
    let manifest = synth_generate(stage, count, seed, out_dir)?;
    println!(
        "wrote {} frames for stage {stage} under {}",
        manifest.records.len(),
        out_dir.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_infer(
    weights: Option<&Path>,
    seed_weights: Option<u64>,
    emit_weights: Option<&Path>,
    variant_name: &str,
    input: &Path,
    confidence: f64,
    seed: u64,
    out_dir: &Path,
) -> Result<String> {
    let mut variant = VariantSpec::new(variant_name.parse::<Insertion>()?);
    variant.display_confidence = confidence;
    let (w, source) = load_or_seed_weights(weights, seed_weights, &variant, seed)?;
    if let Some(path) = emit_weights {
        write_weights(&w, path)?;
    }
    ensure_dir(out_dir)?;
    let files = png_files(input)?;
    let mut total_instances = 0u32;
    for file in &files {
        let image = datakit::read_image(file)?;
        let (map, detections) = infer_frame(&image, &w, &variant)?;
        let stem = file
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("frame");
        write_labelmap(&map, &out_dir.join(format!("{stem}.png")))?;
        let det_json = serde_json::to_string_pretty(&detections).expect("detections serialize");
        let det_path = out_dir.join(format!("{stem}.json"));
        std::fs::write(&det_path, det_json).map_err(|e| Error::io(&det_path, e))?;
        total_instances += map.instance_count();
    }
    println!(
        "{} frame(s) → {} ({} instances total, variant {})",
        files.len(),
        out_dir.display(),
        total_instances,
        variant.name()
    );
    Ok(source)
}

fn cmd_eval(gt: &Path, pred: &Path, tau: f64, out: &Path) -> Result<()> {
    let gt_files = png_files(gt)?;
    let mut lines = Vec::with_capacity(gt_files.len());
    let mut sum_dsc = 0.0;
    let mut sum_nsd = 0.0;
    for gt_file in &gt_files {
        let name = gt_file.file_name().unwrap().to_string_lossy().to_string();
        let pred_file = pred.join(&name);
        if !pred_file.exists() {
            return Err(Error::contract(format!(
                "prediction missing for frame {name}"
            )));
        }
        let g = read_labelmap(gt_file)?.map;
        let p = read_labelmap(&pred_file)?.map;
        let eval = frame_scores(&g, &p, tau)?;
        sum_dsc += eval.mi_dsc;
        sum_nsd += eval.mi_nsd;
        let record = serde_json::json!({ "frame": name, "eval": eval });
        lines.push(record.to_string());
    }
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            ensure_dir(parent)?;
        }
    }
    std::fs::write(out, lines.join("\n") + "\n").map_err(|e| Error::io(out, e))?;
    let n = gt_files.len() as f64;
    println!(
        "{} frames: mean MI_DSC {:.4}, mean MI_NSD {:.4} → {}",
        gt_files.len(),
        sum_dsc / n,
        sum_nsd / n,
        out.display()
    );
    Ok(())
}

fn read_frame_evals(path: &Path) -> Result<Vec<FrameEval>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let v: serde_json::Value = serde_json::from_str(line)
                .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
            serde_json::from_value(v["eval"].clone())
                .map_err(|e| Error::format(format!("{}: bad eval record: {e}", path.display())))
        })
        .collect()
}

fn cmd_rank(
    input: &Path,
    p: f64,
    format: ReportFormat,
    fps_flags: &[String],
    out_dir: &Path,
) -> Result<()> {
    let mut fps_map: BTreeMap<String, f64> = BTreeMap::new();
    for flag in fps_flags {
        let (name, value) = flag
            .split_once('=')
            .ok_or_else(|| Error::config(format!("--fps '{flag}' is not NAME=FPS")))?;
        let value: f64 = value
            .parse()
            .map_err(|_| Error::config(format!("--fps '{flag}': bad number")))?;
        fps_map.insert(name.to_string(), value);
    }
    let mut algos: Vec<(String, Vec<FrameEval>)> = std::fs::read_dir(input)
        .map_err(|e| Error::io(input, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|path| path.extension().is_some_and(|x| x == "jsonl"))
        .map(|path| {
            let name = path.file_stem().unwrap().to_string_lossy().to_string();
            Ok((name, read_frame_evals(&path)?))
        })
        .collect::<Result<_>>()?;
    algos.sort_by(|a, b| a.0.cmp(&b.0));
    if algos.is_empty() {
        return Err(Error::contract(format!(
            "no .jsonl algorithm files under {}",
            input.display()
        )));
    }
    ensure_dir(out_dir)?;
    let (text, out_name) = match format {
        ReportFormat::BoxplotData => {
            let mut series = Vec::new();
            for (name, evals) in &algos {
                let dsc: Vec<f64> = evals.iter().map(|e| e.mi_dsc).collect();
                let nsd: Vec<f64> = evals.iter().map(|e| e.mi_nsd).collect();
                series.push(boxplot_data(name, "mi_dsc", &dsc, p)?);
                series.push(boxplot_data(name, "mi_nsd", &nsd, p)?);
            }
            let text = serde_json::to_string_pretty(&series).expect("series serialize");
            (text, "report-boxplot.json")
        }
        _ => {
            let entries: Vec<AlgorithmEntry> = algos
                .iter()
                .map(|(name, evals)| {
                    let (mi_dsc, mi_nsd) = aggregate_algorithm(evals, p)?;
                    Ok(AlgorithmEntry {
                        name: name.clone(),
                        mi_dsc,
                        mi_nsd,
                        frame_count: evals.len(),
                        mean_fps: fps_map.get(name).copied(),
                    })
                })
                .collect::<Result<_>>()?;
            let report = build_report(entries)?;
            let text = emit_report(&report, format)?;
            let name = match format {
                ReportFormat::Csv => "report.csv",
                _ => "report.json",
            };
            (text, name)
        }
    };
    let out_path = out_dir.join(out_name);
    std::fs::write(&out_path, &text).map_err(|e| Error::io(&out_path, e))?;
    print!("{text}");
    println!("→ {}", out_path.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_bench(
    variant_name: &str,
    weights: Option<&Path>,
    seed_weights: Option<u64>,
    frames: usize,
    size: usize,
    repetitions: usize,
    warmup: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<String> {
    let variant = VariantSpec::new(variant_name.parse::<Insertion>()?);
    let (w, source) = load_or_seed_weights(weights, seed_weights, &variant, seed)?;
    let sequence = synthetic_frames(frames, size, seed)?;
    let result = measure_throughput(&variant, &w, &sequence, repetitions, warmup)?;
    let ops = op_count_report(&variant, size, size)?;
    ensure_dir(out_dir)?;
    let out_path = out_dir.join(format!("bench-{}.json", variant_name));
    let payload = serde_json::json!({ "throughput": result, "op_counts": ops });
    std::fs::write(&out_path, serde_json::to_string_pretty(&payload).unwrap())
        .map_err(|e| Error::io(&out_path, e))?;
    println!(
        "{}: mean {:.2} fps over {} runs ({} frames of {}x{}) → {}",
        result.variant,
        result.mean_fps,
        result.runs.len(),
        frames,
        size,
        size,
        out_path.display()
    );
    Ok(source)
}

fn cmd_gradcheck(draws: usize, tolerance: f64, seed: u64) -> Result<()> {
    let mut worst: f64 = 0.0;
    for i in 0..draws {
        let cfg = AttentionConfig {
            channels: 2 + (i % 3),
            reduction: 2,
            recurrence: 1 + (i % 2),
            share_weights: true,
        };
        let module = check::module_for_test(seed.wrapping_add(i as u64), cfg.clone());
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(
            seed.wrapping_add(1000 + i as u64),
        );
        let x = check::rand_tensor(&mut rng, vec![cfg.channels, 3 + (i % 2), 4 - (i % 2)]);
        let err = check::gradcheck_max_rel_error(&module, &x);
        println!("draw {i}: max relative error {err:.3e}");
        worst = worst.max(err);
    }
    if worst > tolerance {
        return Err(Error::contract(format!(
            "gradient check failed: worst relative error {worst:.3e} > {tolerance:.1e}"
        )));
    }
    println!("gradcheck passed ({draws} draws, worst {worst:.3e} ≤ {tolerance:.1e})");
    Ok(())
}

fn cmd_selftest(seed: u64) -> Result<()> {
    let mut failures = 0;
    let mut run = |name: &str, ok: bool| {
        println!("{} {name}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            failures += 1;
        }
    };

    // attention matches the dense masked oracle
    let cfg = AttentionConfig {
        channels: 3,
        reduction: 2,
        recurrence: 2,
        share_weights: true,
    };
    let module = check::module_for_test(seed, cfg.clone());
    let mut rng =
        <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed.wrapping_add(1));
    let x = check::rand_tensor(&mut rng, vec![3, 5, 4]);
    let fast = module.forward(&x)?;
    let oracle = check::dense_masked_forward(&module, &x);
    let max_diff = fast
        .data()
        .iter()
        .zip(oracle.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    run("attention-dense-oracle", max_diff < 1e-10);

    // gradients agree with finite differences
    run(
        "attention-gradcheck",
        check::gradcheck_max_rel_error(&module, &x) < 1e-4,
    );

    // metric identities on a random frame pair
    let dir = tempfile::tempdir().map_err(|e| Error::io(Path::new("tmp"), e))?;
    let manifest = synth_generate(Stage::Train, 3, seed, dir.path())?;
    let mut ok_self = true;
    for r in &manifest.records {
        let m = read_labelmap(&r.annotation)?.map;
        let eval = frame_scores(&m, &m, DEFAULT_TAU)?;
        ok_self &= eval.mi_dsc == 1.0 && eval.mi_nsd == 1.0;
    }
    run("metrics-self-comparison", ok_self);

    // percentile conventions
    let scores: Vec<f64> = (1..=100).map(f64::from).collect();
    run(
        "percentile-interpolation",
        (ccseg::ranking::percentile(&scores, 0.05)? - 5.95).abs() < 1e-12,
    );

    // pipeline determinism
    let variant = VariantSpec::new(Insertion::Both);
    let w = seeded_weights(&variant, seed);
    let frame = synthetic_frames(1, 64, seed)?.remove(0);
    run(
        "pipeline-determinism",
        infer_frame(&frame, &w, &variant)? == infer_frame(&frame, &w, &variant)?,
    );

    if failures > 0 {
        return Err(Error::contract(format!("selftest: {failures} check(s) failed")));
    }
    println!("selftest passed");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = FileConfig::load(cli.config.as_deref())?;
    let seed = cli.seed.or(cfg.seed).unwrap_or(42);
    let out_dir = resolve_out_dir(cli.out_dir.as_deref(), &cfg);
    let mut resolved = Resolved {
        subcommand: "",
        seed,
        out_dir: out_dir.clone(),
        extra: BTreeMap::new(),
    };

    match &cli.cmd {
        Cmd::Synth { stage, count } => {
            resolved.subcommand = "synth";
            resolved.extra.insert("stage", format!("\"{stage}\""));
            resolved.extra.insert("count", count.to_string());
            resolved.echo(cli.quiet);
            cmd_synth(stage, *count, seed, &out_dir)
        }
        Cmd::Infer {
            weights,
            seed_weights,
            emit_weights,
            variant,
            input,
            confidence,
        } => {
            let confidence = confidence.or(cfg.confidence).unwrap_or(0.3);
            resolved.subcommand = "infer";
            resolved.extra.insert("variant", format!("\"{variant}\""));
            resolved.extra.insert("confidence", confidence.to_string());
            resolved
                .extra
                .insert("input", format!("\"{}\"", input.display()));
            let source = cmd_infer(
                weights.as_deref(),
                *seed_weights,
                emit_weights.as_deref(),
                variant,
                input,
                confidence,
                seed,
                &out_dir,
            )?;
            resolved.extra.insert("weights", source);
            resolved.echo(cli.quiet);
            Ok(())
        }
        Cmd::Eval { gt, pred, tau, out } => {
            let tau = tau.or(cfg.tau).unwrap_or(DEFAULT_TAU);
            let out = out.clone().unwrap_or_else(|| out_dir.join("frame_evals.jsonl"));
            resolved.subcommand = "eval";
            resolved.extra.insert("tau", tau.to_string());
            resolved.extra.insert("gt", format!("\"{}\"", gt.display()));
            resolved
                .extra
                .insert("pred", format!("\"{}\"", pred.display()));
            resolved.echo(cli.quiet);
            cmd_eval(gt, pred, tau, &out)
        }
        Cmd::Rank {
            input,
            percentile,
            format,
            fps,
        } => {
            let p = percentile.or(cfg.percentile).unwrap_or(DEFAULT_PERCENTILE);
            let format: ReportFormat = format.as_deref().unwrap_or("csv").parse()?;
            resolved.subcommand = "rank";
            resolved.extra.insert("percentile", p.to_string());
            resolved.echo(cli.quiet);
            cmd_rank(input, p, format, fps, &out_dir)
        }
        Cmd::Bench {
            variant,
            weights,
            seed_weights,
            frames,
            size,
            repetitions,
            warmup,
        } => {
            let repetitions = repetitions.or(cfg.repetitions).unwrap_or(10);
            let warmup = warmup.or(cfg.warmup).unwrap_or(2);
            resolved.subcommand = "bench";
            resolved.extra.insert("variant", format!("\"{variant}\""));
            resolved.extra.insert("frames", frames.to_string());
            resolved.extra.insert("size", size.to_string());
            resolved.extra.insert("repetitions", repetitions.to_string());
            resolved.extra.insert("warmup", warmup.to_string());
            let source = cmd_bench(
                variant,
                weights.as_deref(),
                *seed_weights,
                *frames,
                *size,
                repetitions,
                warmup,
                seed,
                &out_dir,
            )?;
            resolved.extra.insert("weights", source);
            resolved.echo(cli.quiet);
            Ok(())
        }
        Cmd::Gradcheck { draws, tolerance } => {
            resolved.subcommand = "gradcheck";
            resolved.extra.insert("draws", draws.to_string());
            resolved.extra.insert("tolerance", tolerance.to_string());
            resolved.echo(cli.quiet);
            cmd_gradcheck(*draws, *tolerance, seed)
        }
        Cmd::Selftest => {
            resolved.subcommand = "selftest";
            resolved.echo(cli.quiet);
            cmd_selftest(seed)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
