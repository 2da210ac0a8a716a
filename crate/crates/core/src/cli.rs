//! The `metaseg` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or I/O error.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand};
use rayon::prelude::*;

use crate::analysis::{
    evaluate_components, evaluate_pixels, incremental_evaluation, lars_order,
    leave_one_out_dataset, pr_curve, report_rows, roc_curve, split_by_ood_fraction, step_points,
    write_rows_csv, EvalReport, Plot, Series,
};
use crate::error::{Error, Result};
use crate::features::{build_metrics_dataset_with_min_size, MetricRegistry, MetricsDataset};
use crate::metaclf::{load_model, save_model, train, ModelKind, TrainConfig};
use crate::raster::{
    list_ids, load_mask, load_probability_map, load_score_map, save_score_map, write_atomic,
    LabelConfig, LabelMask, SampleSet, ScoreMap, DEFAULT_IGNORE_LABEL, DEFAULT_OOD_LABEL,
};
use crate::scoring::anomaly_score_map;
use crate::segments::{component_iou, extract_components, ThresholdConfig};
use crate::synth::{generate, SceneSpec};

#[derive(Debug, Parser)]
#[command(
    name = "metaseg",
    version,
    about = "Anomaly segmentation with meta classification of OoD components"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
struct Labels {
    /// Mask value marking OoD pixels
    #[arg(long, default_value_t = DEFAULT_OOD_LABEL)]
    ood_label: u8,
    /// Mask value marking pixels excluded from evaluation
    #[arg(long, default_value_t = DEFAULT_IGNORE_LABEL)]
    ignore_label: u8,
}

#[derive(Debug, Args, Clone)]
struct MaskLabels {
    #[command(flatten)]
    labels: Labels,
    /// Number of in-distribution classes allowed in masks
    #[arg(long, default_value_t = 19)]
    num_classes: usize,
}

impl MaskLabels {
    fn config(&self) -> LabelConfig {
        LabelConfig {
            num_classes: self.num_classes,
            ood_label: self.labels.ood_label,
            ignore_label: self.labels.ignore_label,
        }
    }
}

fn parse_t(s: &str) -> std::result::Result<f64, String> {
    let t: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&t) {
        Ok(t)
    } else {
        Err(format!("{t} is not in [0, 1]"))
    }
}

#[derive(Debug, Args, Clone)]
struct Threshold {
    /// Anomaly score threshold; pixels with score >= t are predicted OoD
    #[arg(long, default_value_t = ThresholdConfig::DEFAULT_T, value_parser = parse_t)]
    t: f64,
    /// Drop components smaller than this many pixels
    #[arg(long, default_value_t = 1)]
    min_size: usize,
}

#[derive(Debug, Args, Clone)]
struct Training {
    /// Meta classifier: logistic or mlp
    #[arg(long, default_value = "mlp")]
    kind: ModelKind,
    /// Adam learning rate
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Decoupled weight decay on weights
    #[arg(long, default_value_t = 5e-3)]
    weight_decay: f64,
    /// Passes over the training data
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    /// Mini-batch size
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    /// Seed for initialization and shuffling
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl Training {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            ..Default::default()
        }
    }
}

#[derive(Debug, Args, Clone)]
struct Plots {
    /// Write the ROC curve as SVG
    #[arg(long)]
    plot_roc: Option<PathBuf>,
    /// Write the precision-recall curve as SVG
    #[arg(long)]
    plot_pr: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Probability maps (<id>.rast) to normalized-entropy score maps
    Score {
        /// Input directory
        #[arg(long = "in")]
        input: PathBuf,
        /// Output directory for <id>.rast score maps
        #[arg(long)]
        out: PathBuf,
    },
    /// Score maps plus masks to a per-component CSV
    Segments {
        /// Directory of <id>.rast score maps
        #[arg(long)]
        scores: PathBuf,
        /// Directory of <id>.pgm masks
        #[arg(long)]
        masks: PathBuf,
        #[command(flatten)]
        threshold: Threshold,
        #[command(flatten)]
        labels: MaskLabels,
        /// Output path
        #[arg(long)]
        out: PathBuf,
    },
    /// Samples (<id>.rast + <id>.pgm) to the component metrics CSV
    Metrics {
        /// Input directory
        #[arg(long = "in")]
        input: PathBuf,
        #[command(flatten)]
        threshold: Threshold,
        #[command(flatten)]
        labels: Labels,
        /// Metric registry profile
        #[arg(long, default_value = "standard")]
        profile: String,
        /// Output path
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a meta classifier on a metrics CSV
    TrainMeta {
        /// Metrics CSV written by `metrics`
        #[arg(long)]
        mu: PathBuf,
        #[command(flatten)]
        training: Training,
        /// Model file to write
        #[arg(long)]
        out: PathBuf,
        /// Optional CSV of per-epoch training loss
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Evaluate a trained model on a metrics CSV
    EvalMeta {
        /// Model file written by `train-meta`
        #[arg(long)]
        model: PathBuf,
        /// Metrics CSV written by `metrics`
        #[arg(long)]
        mu: PathBuf,
        /// Report CSV (metric,value); printed to stdout when omitted
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        plots: Plots,
    },
    /// Leave-one-image-out evaluation on a metrics CSV
    Loo {
        /// Metrics CSV written by `metrics`
        #[arg(long)]
        mu: PathBuf,
        #[command(flatten)]
        training: Training,
        /// Report CSV (metric,value); printed to stdout when omitted
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-component held-out scores as CSV
        #[arg(long)]
        scores: Option<PathBuf>,
        #[command(flatten)]
        plots: Plots,
    },
    /// LARS entry order of the metrics
    Lars {
        /// Metrics CSV written by `metrics`
        #[arg(long)]
        mu: PathBuf,
        /// CSV of rank,index,metric,correlation
        #[arg(long)]
        out: PathBuf,
    },
    /// Incremental evaluation over growing LARS prefixes
    Incremental {
        /// Metrics CSV written by `metrics`
        #[arg(long)]
        mu: PathBuf,
        #[command(flatten)]
        training: Training,
        /// CSV of num_metrics,added_metric,auroc,auprc
        #[arg(long)]
        out: PathBuf,
        /// SVG of AUROC and AUPRC against the number of metrics
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Split masks by the fraction of OoD pixels
    FilterProxy {
        /// Directory of <id>.pgm masks
        #[arg(long)]
        masks: PathBuf,
        /// Masks with OoD fraction <= low form the low set
        #[arg(long, default_value_t = 0.2, value_parser = parse_t)]
        low: f64,
        /// Masks with OoD fraction >= high form the high set
        #[arg(long, default_value_t = 0.8, value_parser = parse_t)]
        high: f64,
        #[command(flatten)]
        labels: MaskLabels,
        /// CSV of id,ood_fraction,set
        #[arg(long)]
        out: PathBuf,
    },
    /// Pixel-level evaluation of score maps against masks
    EvalPixel {
        /// Directory of <id>.rast score maps
        #[arg(long)]
        scores: PathBuf,
        /// Directory of <id>.pgm masks
        #[arg(long)]
        masks: PathBuf,
        #[command(flatten)]
        labels: MaskLabels,
        /// Report CSV (metric,value); printed to stdout when omitted
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        plots: Plots,
    },
    /// Generate synthetic scenes with planted anomalies
    Synth {
        /// Number of scenes
        #[arg(long)]
        count: usize,
        /// Base seed; scene i uses seed + i
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output path
        #[arg(long)]
        out: PathBuf,
        /// Scene height in pixels
        #[arg(long, default_value_t = 48)]
        height: usize,
        /// Scene width in pixels
        #[arg(long, default_value_t = 48)]
        width: usize,
        /// Number of in-distribution classes
        #[arg(long, default_value_t = 19)]
        num_classes: usize,
        /// Fewest true anomaly blobs per scene
        #[arg(long, default_value_t = 1)]
        min_blobs: usize,
        /// Most true anomaly blobs per scene
        #[arg(long, default_value_t = 2)]
        max_blobs: usize,
        /// Smallest blob area in pixels
        #[arg(long, default_value_t = 24)]
        min_blob_size: usize,
        /// Largest blob area in pixels
        #[arg(long, default_value_t = 120)]
        max_blob_size: usize,
        /// Normalized entropy inside true anomalies
        #[arg(long, default_value_t = 0.95)]
        anomaly_entropy: f64,
        /// Largest normalized entropy of background pixels
        #[arg(long, default_value_t = 0.2)]
        background_entropy: f64,
        /// Expected number of false high-entropy blobs per scene
        #[arg(long, default_value_t = 1.5)]
        false_blob_rate: f64,
        /// Make false blobs linearly separable instead of XOR-coupled
        #[arg(long)]
        no_coupling: bool,
        #[command(flatten)]
        labels: Labels,
    },
}

/// Runs the command line `args` (program name first) and returns the exit code.
pub fn run<S: AsRef<str>>(args: &[S]) -> i32 {
    let cli = match Cli::try_parse_from(args.iter().map(|a| a.as_ref())) {
        Ok(c) => c,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return 0;
            }
            let text = e.render().to_string();
            eprint!("{text}");
            if !text.contains("Usage:") {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            return 1;
        }
    };
    let pool = match std::env::var("METASEG_THREADS") {
        Ok(v) => match v.parse::<usize>() {
            Ok(n) if n > 0 => rayon::ThreadPoolBuilder::new().num_threads(n).build(),
            _ => {
                eprintln!("error: METASEG_THREADS must be a positive integer, got {v:?}");
                return 1;
            }
        },
        Err(_) => rayon::ThreadPoolBuilder::new().build(),
    };
    let pool = match pool {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    match pool.install(|| execute(cli.command)) {
        Ok(()) => 0,
        Err(Error::InvalidArgument(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn require_dir(path: &Path) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "{} is not a directory",
            path.display()
        )))
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{} is not a file", path.display())))
    }
}

fn emit_report(report: &EvalReport, out: Option<&Path>) -> Result<()> {
    let rows = report_rows(report);
    match out {
        Some(p) => write_rows_csv(&rows, p),
        None => {
            for (k, v) in rows {
                println!("{k}\t{v}");
            }
            Ok(())
        }
    }
}

fn emit_plots(plots: &Plots, title: &str, scores: &[f64], labels: &[bool]) -> Result<()> {
    if let Some(p) = &plots.plot_roc {
        let pts = roc_curve(scores, labels)?;
        Plot {
            title: &format!("ROC {title}"),
            x_label: "false positive rate",
            y_label: "true positive rate",
            x_range: Some((0.0, 1.0)),
            y_range: Some((0.0, 1.0)),
            series: vec![Series {
                name: title,
                points: &pts,
            }],
        }
        .save(p)?;
    }
    if let Some(p) = &plots.plot_pr {
        let pts = step_points(&pr_curve(scores, labels)?);
        Plot {
            title: &format!("precision-recall {title}"),
            x_label: "recall",
            y_label: "precision",
            x_range: Some((0.0, 1.0)),
            y_range: Some((0.0, 1.0)),
            series: vec![Series {
                name: title,
                points: &pts,
            }],
        }
        .save(p)?;
    }
    Ok(())
}

fn load_masks_for(
    ids: &[String],
    dir: &Path,
    cfg: &LabelConfig,
    dims: &[(usize, usize)],
) -> Result<Vec<LabelMask>> {
    ids.par_iter()
        .zip(dims.par_iter())
        .map(|(id, &d)| load_mask(&dir.join(format!("{id}.pgm")), cfg, Some(d)))
        .collect()
}

fn load_score_dir(dir: &Path) -> Result<(Vec<String>, Vec<ScoreMap>)> {
    require_dir(dir)?;
    let ids = list_ids(dir, "rast")?;
    let maps = ids
        .par_iter()
        .map(|id| load_score_map(&dir.join(format!("{id}.rast"))))
        .collect::<Result<Vec<_>>>()?;
    Ok((ids, maps))
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Score { input, out } => {
            require_dir(&input)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let ids = list_ids(&input, "rast")?;
            ids.par_iter().try_for_each(|id| {
                let pmap = load_probability_map(&input.join(format!("{id}.rast")))?;
                save_score_map(&anomaly_score_map(&pmap), &out.join(format!("{id}.rast")))
            })?;
            log::info!("scored {} maps", ids.len());
            Ok(())
        }
        Command::Segments {
            scores,
            masks,
            threshold,
            labels,
            out,
        } => {
            require_dir(&masks)?;
            let cfg = ThresholdConfig::new(threshold.t)?;
            let (ids, maps) = load_score_dir(&scores)?;
            let dims: Vec<_> = maps.iter().map(|m| m.dims()).collect();
            let masks = load_masks_for(&ids, &masks, &labels.config(), &dims)?;
            let mut csv = String::from("sample_id,component_id,size,boundary_size,interior_size,row_min,row_max,col_min,col_max,iou,label\n");
            for ((id, map), mask) in ids.iter().zip(&maps).zip(&masks) {
                for comp in extract_components(map, cfg, threshold.min_size, id) {
                    let iou = component_iou(&comp, mask)?;
                    let b = &comp.bbox;
                    writeln!(
                        csv,
                        "{id},{},{},{},{},{},{},{},{},{iou},{}",
                        comp.id,
                        comp.size(),
                        comp.boundary.len(),
                        comp.interior.len(),
                        b.row_min,
                        b.row_max,
                        b.col_min,
                        b.col_max,
                        (iou == 0.0) as u8
                    )
                    .unwrap();
                }
            }
            write_atomic(&out, csv.as_bytes())
        }
        Command::Metrics {
            input,
            threshold,
            labels,
            profile,
            out,
        } => {
            require_dir(&input)?;
            let cfg = ThresholdConfig::new(threshold.t)?;
            let samples = SampleSet::load_dir(&input, labels.ood_label, labels.ignore_label)?;
            let first = samples
                .entries()
                .first()
                .ok_or_else(|| Error::invalid(format!("no samples in {}", input.display())))?;
            let registry = MetricRegistry::profile(&profile, first.probs.num_classes())?;
            let dataset =
                build_metrics_dataset_with_min_size(&samples, cfg, &registry, threshold.min_size)?;
            log::info!(
                "{} components from {} samples",
                dataset.len(),
                samples.len()
            );
            dataset.save_csv(&out)
        }
        Command::TrainMeta {
            mu,
            training,
            out,
            trace,
        } => {
            require_file(&mu)?;
            let dataset = MetricsDataset::load_csv(&mu)?;
            let (model, tr) = train(training.kind, &dataset, &training.config())?;
            save_model(&model, &out)?;
            if let Some(p) = trace {
                let mut csv = String::from("epoch,loss\n");
                for (i, l) in tr.epoch_loss.iter().enumerate() {
                    writeln!(csv, "{},{l}", i + 1).unwrap();
                }
                write_atomic(&p, csv.as_bytes())?;
            }
            Ok(())
        }
        Command::EvalMeta {
            model,
            mu,
            out,
            plots,
        } => {
            require_file(&model)?;
            require_file(&mu)?;
            let model = load_model(&model)?;
            let dataset = MetricsDataset::load_csv(&mu)?;
            if dataset.columns != model.columns {
                return Err(Error::dims(
                    "metrics CSV columns differ from the model's".to_string(),
                ));
            }
            let report = evaluate_components(&model, &dataset)?;
            let scores = model.predict_rows(&dataset.rows)?;
            emit_plots(&plots, model.kind().name(), &scores, &dataset.labels)?;
            emit_report(&report, out.as_deref())
        }
        Command::Loo {
            mu,
            training,
            out,
            scores,
            plots,
        } => {
            require_file(&mu)?;
            let dataset = MetricsDataset::load_csv(&mu)?;
            let result = leave_one_out_dataset(training.kind, &dataset, &training.config())?;
            if let Some(p) = scores {
                let mut csv = String::from("group_id,row,score,label\n");
                for (i, s) in result.scores.iter().enumerate() {
                    writeln!(
                        csv,
                        "{},{i},{s},{}",
                        dataset.group_ids[i], dataset.labels[i] as u8
                    )
                    .unwrap();
                }
                write_atomic(&p, csv.as_bytes())?;
            }
            emit_plots(&plots, training.kind.name(), &result.scores, &result.labels)?;
            emit_report(&result.report, out.as_deref())
        }
        Command::Lars { mu, out } => {
            require_file(&mu)?;
            let dataset = MetricsDataset::load_csv(&mu)?;
            let o = lars_order(&dataset)?;
            let mut csv = String::from("rank,index,metric,correlation\n");
            for (rank, (&j, c)) in o
                .ordered_metric_indices
                .iter()
                .zip(&o.entry_correlations)
                .enumerate()
            {
                writeln!(csv, "{},{j},{},{c}", rank + 1, dataset.columns[j]).unwrap();
            }
            write_atomic(&out, csv.as_bytes())
        }
        Command::Incremental {
            mu,
            training,
            out,
            plot,
        } => {
            require_file(&mu)?;
            let dataset = MetricsDataset::load_csv(&mu)?;
            let r = incremental_evaluation(training.kind, &dataset, &training.config())?;
            let mut csv = String::from("num_metrics,added_metric,auroc,auprc\n");
            for i in 0..r.auroc.len() {
                let added = &dataset.columns[r.ordering.ordered_metric_indices[i]];
                writeln!(csv, "{},{added},{},{}", i + 1, r.auroc[i], r.auprc[i]).unwrap();
            }
            write_atomic(&out, csv.as_bytes())?;
            if let Some(p) = plot {
                let xs = |v: &[f64]| {
                    v.iter()
                        .enumerate()
                        .map(|(i, &y)| ((i + 1) as f64, y))
                        .collect::<Vec<_>>()
                };
                let (a, b) = (xs(&r.auroc), xs(&r.auprc));
                Plot {
                    title: &format!("incremental evaluation ({})", training.kind),
                    x_label: "number of metrics (LARS order)",
                    y_label: "score",
                    x_range: None,
                    y_range: Some((0.0, 1.0)),
                    series: vec![
                        Series {
                            name: "AUROC",
                            points: &a,
                        },
                        Series {
                            name: "AUPRC",
                            points: &b,
                        },
                    ],
                }
                .save(&p)?;
            }
            Ok(())
        }
        Command::FilterProxy {
            masks,
            low,
            high,
            labels,
            out,
        } => {
            require_dir(&masks)?;
            let cfg = labels.config();
            let ids = list_ids(&masks, "pgm")?;
            let loaded = ids
                .par_iter()
                .map(|id| {
                    Ok((
                        id.clone(),
                        load_mask(&masks.join(format!("{id}.pgm")), &cfg, None)?,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            let split = split_by_ood_fraction(&loaded, low, high)?;
            let mut csv = String::from("id,ood_fraction,set\n");
            for (id, f) in &split.fractions {
                let set = if split.low.contains(id) {
                    "low"
                } else if split.high.contains(id) {
                    "high"
                } else {
                    "rest"
                };
                writeln!(csv, "{id},{f},{set}").unwrap();
            }
            write_atomic(&out, csv.as_bytes())
        }
        Command::EvalPixel {
            scores,
            masks,
            labels,
            out,
            plots,
        } => {
            require_dir(&masks)?;
            let (ids, maps) = load_score_dir(&scores)?;
            let dims: Vec<_> = maps.iter().map(|m| m.dims()).collect();
            let masks = load_masks_for(&ids, &masks, &labels.config(), &dims)?;
            let report = evaluate_pixels(&maps, &masks)?;
            if plots.plot_roc.is_some() || plots.plot_pr.is_some() {
                let mut s = Vec::new();
                let mut y = Vec::new();
                for (m, k) in maps.iter().zip(&masks) {
                    for (&a, &l) in m.scores().iter().zip(k.labels()) {
                        if l != crate::raster::Label::Ignore {
                            s.push(a as f64);
                            y.push(l == crate::raster::Label::Ood);
                        }
                    }
                }
                emit_plots(&plots, "pixels", &s, &y)?;
            }
            emit_report(&report, out.as_deref())
        }
        Command::Synth {
            count,
            seed,
            out,
            height,
            width,
            num_classes,
            min_blobs,
            max_blobs,
            min_blob_size,
            max_blob_size,
            anomaly_entropy,
            background_entropy,
            false_blob_rate,
            no_coupling,
            labels,
        } => {
            let spec = SceneSpec {
                dims: (height, width),
                num_classes,
                blob_count: (min_blobs, max_blobs),
                blob_size: (min_blob_size, max_blob_size),
                anomaly_entropy,
                background_entropy,
                false_blob_rate,
                nonlinear_coupling: !no_coupling,
                seed,
            };
            spec.validate()?;
            generate(&spec, count)?.save_dir(&out, labels.ood_label, labels.ignore_label)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(&["metaseg", "bogus"]), 1);
        assert_eq!(run(&["metaseg", "score", "--nope"]), 1);
        assert_eq!(
            run(&["metaseg", "metrics", "--in", "x", "--out", "y", "--t", "1.5"]),
            1
        );
    }

    #[test]
    fn help_exits_zero() {
        for sub in [
            "score",
            "segments",
            "metrics",
            "train-meta",
            "eval-meta",
            "loo",
            "lars",
            "incremental",
            "filter-proxy",
            "eval-pixel",
            "synth",
        ] {
            assert_eq!(run(&["metaseg", sub, "--help"]), 0, "{sub}");
        }
    }

    #[test]
    fn data_errors_exit_two() {
        let dir = tempfile::tempdir().unwrap();
        let mu = dir.path().join("mu.csv");
        std::fs::write(&mu, "garbage").unwrap();
        let out = dir.path().join("o.csv");
        assert_eq!(
            run(&[
                "metaseg",
                "lars",
                "--mu",
                mu.to_str().unwrap(),
                "--out",
                out.to_str().unwrap()
            ]),
            2
        );
    }
}
