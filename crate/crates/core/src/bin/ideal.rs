//! Command-line front end: dataset generation, experiment runs, single-shot
//! feature extraction, ranking comparison, and sweeps.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime abort. Outputs
//! are staged in memory and written only on success, so an aborted run
//! leaves no partial files.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use ideal::alloop::{batch_size_sweep, run_active_learning, LearningCurve};
use ideal::config::{parse_run_config, parse_sweep_config, RunConfig};
use ideal::error::Error;
use ideal::features::{first_order_features, glcm_features, shape_features, FeatureFamily};
use ideal::manifest::{DecisionLog, RunManifest};
use ideal::metrics::{ndcg, overlap_fraction};
use ideal::saliency::SaliencyMethod;
use ideal::segharness::run_segmentation_al;
use ideal::strategies::StrategyId;
use ideal::synthdata::{export_dataset, generate_dataset, read_pgm, DatasetSpec, Task};

#[derive(Parser)]
#[command(name = "ideal", version, about = "Saliency-driven active-learning lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (PGMs + manifest.json).
    Gen {
        /// Dataset spec JSON file.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Omit hidden labels/masks from the exported manifest.
        #[arg(long)]
        redact: bool,
    },
    /// Run an active-learning experiment (curves + manifest).
    Run {
        /// Run config JSON (or a previous run's manifest.json).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract a feature family from a directory of PGM maps.
    Features {
        #[arg(long)]
        maps: PathBuf,
        #[arg(long, value_enum)]
        family: FamilyArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare two score CSVs by nDCG and top-p overlap.
    Rank {
        /// Two score CSVs (reference first).
        #[arg(long, num_args = 2)]
        scores: Vec<PathBuf>,
        #[arg(long, default_value_t = 10)]
        ndcg_p: usize,
        /// Report file (JSON); stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Batch-size / noise / switch / saliency sweeps.
    Sweep {
        #[arg(long, value_enum)]
        kind: SweepKind,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    FirstOrder,
    Glcm,
    Shape,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepKind {
    Batch,
    Noise,
    Switch,
    Saliency,
}

/// Errors keep track of which phase they happened in so the exit code is
/// honest: 2 = bad configuration, 3 = runtime abort.
enum CliError {
    Config(Error),
    Runtime(Error),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
    fn message(&self) -> String {
        match self {
            CliError::Config(e) => format!("configuration error: {e}"),
            CliError::Runtime(e) => format!("runtime abort: {e}"),
        }
    }
}

/// Staged outputs: nothing is written until the command has fully succeeded.
#[derive(Default)]
struct Outputs {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Outputs {
    fn add(&mut self, path: PathBuf, bytes: Vec<u8>) {
        self.files.push((path, bytes));
    }

    fn write_all(self, out_dir: &Path) -> Result<(), Error> {
        std::fs::create_dir_all(out_dir)?;
        for (rel, bytes) in self.files {
            let path = out_dir.join(rel);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(path, bytes)?;
        }
        Ok(())
    }
}

fn main() {
    if let Ok(threads) = std::env::var("IDEAL_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global();
        }
    }
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("{}", e.message());
            std::process::exit(e.exit_code());
        }
    }
}

fn read_config_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Config(e.into()))
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen { spec, out, redact } => cmd_gen(&spec, &out, redact),
        Command::Run { config, out } => cmd_run(&config, &out),
        Command::Features { maps, family, out } => cmd_features(&maps, family, &out),
        Command::Rank { scores, ndcg_p, out } => cmd_rank(&scores, ndcg_p, out.as_deref()),
        Command::Sweep { kind, config, out } => cmd_sweep(kind, &config, &out),
    }
}

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

fn cmd_gen(spec_path: &Path, out: &Path, redact: bool) -> Result<(), CliError> {
    let json = read_config_file(spec_path)?;
    let spec: DatasetSpec =
        serde_json::from_str(&json).map_err(|e| CliError::Config(e.into()))?;
    spec.validate().map_err(CliError::Config)?;
    let dataset = generate_dataset(&spec).map_err(CliError::Runtime)?;
    // Export into a staging directory, then move into place: an aborted run
    // leaves nothing behind.
    let staging = out.with_extension("staging");
    let finish = (|| -> Result<(), Error> {
        if staging.exists() {
            std::fs::remove_dir_all(&staging)?;
        }
        export_dataset(&dataset, &staging, redact)?;
        std::fs::create_dir_all(out)?;
        for entry in std::fs::read_dir(&staging)? {
            let entry = entry?;
            std::fs::rename(entry.path(), out.join(entry.file_name()))?;
        }
        std::fs::remove_dir_all(&staging)?;
        Ok(())
    })();
    match finish {
        Ok(()) => {
            println!("wrote {} images to {}", dataset.len(), out.display());
            Ok(())
        }
        Err(e) => {
            let _ = std::fs::remove_dir_all(&staging);
            Err(CliError::Runtime(e))
        }
    }
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}

fn curves_csv(curves: &[(StrategyId, LearningCurve)], manifest_hash: &str) -> Vec<u8> {
    let mut s = String::new();
    s.push_str(&format!("# manifest {manifest_hash}\n"));
    s.push_str("strategy,seed,fraction,auc_val,auc_test\n");
    for (strategy, curve) in curves {
        for run in &curve.runs {
            for p in &run.points {
                s.push_str(&format!(
                    "{},{},{:.2},{},{}\n",
                    strategy.label(),
                    run.seed,
                    p.fraction,
                    fmt6(p.auc_val),
                    fmt6(p.auc_test)
                ));
            }
        }
    }
    s.into_bytes()
}

fn summary_json(
    curves: &[(StrategyId, LearningCurve)],
    manifest_hash: &str,
) -> Result<Vec<u8>, Error> {
    let mut strategies = Vec::new();
    for (strategy, curve) in curves {
        let aborted: Vec<u64> = curve
            .runs
            .iter()
            .filter(|r| r.aborted)
            .map(|r| r.seed)
            .collect();
        strategies.push(serde_json::json!({
            "strategy": strategy.label(),
            "crossing_fractions": curve.crossing_fractions(),
            "mean_crossing_fraction": curve.mean_crossing_fraction(),
            "mean_iterations_to_cross": curve.mean_iterations_to_cross(),
            "fsl_val": curve.completed_runs().map(|r| r.fsl_val).collect::<Vec<_>>(),
            "fsl_test": curve.completed_runs().map(|r| r.fsl_test).collect::<Vec<_>>(),
            "final_auc_mean": curve.mean_final_auc(),
            "mean_aulc": curve.mean_aulc(),
            "oracle_queries": curve.completed_runs().map(|r| r.oracle_queries).collect::<Vec<_>>(),
            "context_queries": curve.completed_runs().map(|r| r.context_queries).collect::<Vec<_>>(),
            "aborted_seeds": aborted,
        }));
    }
    // Pairwise paired t-tests on per-seed crossing fractions.
    let mut p_values = Vec::new();
    for i in 0..curves.len() {
        for j in i + 1..curves.len() {
            let a = curves[i].1.crossing_fractions();
            let b = curves[j].1.crossing_fractions();
            if a.len() == b.len() && a.len() >= 2 {
                let p = ideal::metrics::paired_t_test(&a, &b).ok();
                p_values.push(serde_json::json!({
                    "a": curves[i].0.label(),
                    "b": curves[j].0.label(),
                    "metric": "crossing_fraction",
                    "p": p,
                }));
            }
        }
    }
    let doc = serde_json::json!({
        "manifest": manifest_hash,
        "strategies": strategies,
        "paired_t_tests": p_values,
    });
    Ok(serde_json::to_vec_pretty(&doc)?)
}

fn cmd_run(config_path: &Path, out: &Path) -> Result<(), CliError> {
    let json = read_config_file(config_path)?;
    let cfg = parse_run_config(&json).map_err(CliError::Config)?;
    let config_value = serde_json::to_value(&cfg).map_err(|e| CliError::Config(e.into()))?;

    let mut decisions = DecisionLog {
        saliency_method: cfg.saliency.to_string(),
        batch_size: cfg.batch_size,
        k_clusters: cfg.k_clusters,
        switch_fraction: cfg.switch.as_ref().map(|s| s.fraction),
        ..DecisionLog::default()
    };

    let is_seg = cfg.dataset.task == Task::GlandSeg;
    let mut outputs = Outputs::default();
    let mut manifest = RunManifest::new(config_value, cfg.seeds.clone(), DecisionLog::default());
    let manifest_hash = manifest.config_hash.clone();

    if is_seg {
        let mut curves = Vec::new();
        for strategy in &cfg.strategies {
            let al = cfg.to_al_config(*strategy);
            let curve = run_segmentation_al(&al).map_err(CliError::Runtime)?;
            curves.push((*strategy, curve));
        }
        let mut s = String::new();
        s.push_str(&format!("# manifest {manifest_hash}\n"));
        s.push_str("strategy,seed,fraction,dice_val,dice_test\n");
        for (strategy, curve) in &curves {
            for run in &curve.runs {
                for p in &run.points {
                    s.push_str(&format!(
                        "{},{},{:.2},{},{}\n",
                        strategy.label(),
                        run.seed,
                        p.fraction,
                        fmt6(p.auc_val),
                        fmt6(p.auc_test)
                    ));
                }
            }
        }
        outputs.add(PathBuf::from("dice_curve.csv"), s.into_bytes());
        let doc = serde_json::json!({
            "manifest": manifest_hash,
            "strategies": curves.iter().map(|(id, c)| serde_json::json!({
                "strategy": id.label(),
                "fsl_dice_val": c.runs.iter().filter(|r| !r.aborted).map(|r| r.fsl_dice_val).collect::<Vec<_>>(),
                "mean_dice_50": c.mean_dice_at(0.5),
                "aborted_seeds": c.runs.iter().filter(|r| r.aborted).map(|r| r.seed).collect::<Vec<_>>(),
            })).collect::<Vec<_>>(),
        });
        outputs.add(
            PathBuf::from("summary.json"),
            serde_json::to_vec_pretty(&doc).map_err(|e| CliError::Runtime(e.into()))?,
        );
    } else {
        let mut curves = Vec::new();
        for strategy in &cfg.strategies {
            let al = cfg.to_al_config(*strategy);
            let curve = run_active_learning(&al).map_err(CliError::Runtime)?;
            for run in &curve.runs {
                if run.context_queries > 0 {
                    decisions.context_queries.push((
                        strategy.label(),
                        run.seed,
                        run.context_queries,
                    ));
                }
                if let Some(journal) = &run.deep_journal {
                    let mut body = String::new();
                    for rec in journal {
                        body.push_str(
                            &serde_json::to_string(rec)
                                .map_err(|e| CliError::Runtime(e.into()))?,
                        );
                        body.push('\n');
                    }
                    outputs.add(
                        PathBuf::from(format!(
                            "journal_{}_seed{}.jsonl",
                            strategy.label(),
                            run.seed
                        )),
                        body.into_bytes(),
                    );
                }
            }
            curves.push((*strategy, curve));
        }
        outputs.add(PathBuf::from("curve.csv"), curves_csv(&curves, &manifest_hash));
        outputs.add(
            PathBuf::from("summary.json"),
            summary_json(&curves, &manifest_hash).map_err(CliError::Runtime)?,
        );
    }

    manifest.decisions = decisions;
    manifest.finish();
    outputs.add(
        PathBuf::from("manifest.json"),
        serde_json::to_vec_pretty(&manifest).map_err(|e| CliError::Runtime(e.into()))?,
    );
    outputs.write_all(out).map_err(CliError::Runtime)?;
    println!("run complete: {}", out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// features
// ---------------------------------------------------------------------------

fn cmd_features(maps_dir: &Path, family: FamilyArg, out: &Path) -> Result<(), CliError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(maps_dir)
        .map_err(|e| CliError::Config(e.into()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|x| x == "pgm").unwrap_or(false))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Config(Error::Config(format!(
            "no .pgm files in {}",
            maps_dir.display()
        ))));
    }
    let fam = match family {
        FamilyArg::FirstOrder => FeatureFamily::FirstOrder,
        FamilyArg::Glcm => FeatureFamily::Glcm,
        FamilyArg::Shape => FeatureFamily::Shape2d,
    };
    let mut body = String::new();
    body.push_str("id");
    for name in fam.feature_names() {
        body.push(',');
        body.push_str(name);
    }
    body.push_str(",degenerate\n");
    for path in &paths {
        // Dequantize through the sidecar when one exists.
        let grid = if path.with_extension("json").exists() {
            ideal::saliency::import_saliency(&path.with_extension(""))
                .map(|m| m.values)
                .or_else(|_| read_pgm(path))
                .map_err(CliError::Runtime)?
        } else {
            read_pgm(path).map_err(CliError::Runtime)?
        };
        let fv = match fam {
            FeatureFamily::FirstOrder => first_order_features(&grid),
            FeatureFamily::Glcm => glcm_features(&grid).map_err(CliError::Runtime)?,
            FeatureFamily::Shape2d => shape_features(&grid),
        };
        let stem = path.file_stem().unwrap_or_default().to_string_lossy();
        body.push_str(&stem);
        for v in &fv.values {
            body.push(',');
            body.push_str(&fmt6(*v));
        }
        body.push_str(if fv.degenerate { ",1\n" } else { ",0\n" });
    }
    let mut outputs = Outputs::default();
    let file_name = out
        .file_name()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("features.csv"));
    outputs.add(file_name, body.into_bytes());
    let dir = out.parent().unwrap_or(Path::new("."));
    outputs.write_all(dir).map_err(CliError::Runtime)?;
    println!("wrote {} rows to {}", paths.len(), out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// rank
// ---------------------------------------------------------------------------

fn read_score_csv(path: &Path) -> Result<Vec<String>, Error> {
    let body = std::fs::read_to_string(path)?;
    let mut rows: Vec<(usize, String)> = Vec::new();
    for (i, line) in body.lines().enumerate() {
        if i == 0 || line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 3 {
            return Err(Error::Malformed {
                path: path.display().to_string(),
                message: format!("line {} needs id,score,rank", i + 1),
            });
        }
        let rank: usize = fields[2].trim().parse().map_err(|_| Error::Malformed {
            path: path.display().to_string(),
            message: format!("bad rank on line {}", i + 1),
        })?;
        rows.push((rank, fields[0].trim().to_string()));
    }
    rows.sort();
    Ok(rows.into_iter().map(|(_, id)| id).collect())
}

fn cmd_rank(scores: &[PathBuf], p: usize, out: Option<&Path>) -> Result<(), CliError> {
    if scores.len() != 2 {
        return Err(CliError::Config(Error::Config(
            "rank needs exactly two score files (reference first)".into(),
        )));
    }
    let reference = read_score_csv(&scores[0]).map_err(CliError::Config)?;
    let candidate = read_score_csv(&scores[1]).map_err(CliError::Config)?;
    let ndcg_value = ndcg(&candidate, &reference, p).map_err(CliError::Runtime)?;
    let top = |ids: &[String]| -> HashSet<String> { ids.iter().take(p).cloned().collect() };
    let overlap =
        overlap_fraction(&[top(&reference), top(&candidate)]).map_err(CliError::Runtime)?;
    let report = serde_json::json!({
        "reference": scores[0].display().to_string(),
        "candidate": scores[1].display().to_string(),
        "p": p,
        "ndcg": ndcg_value,
        "top_p_overlap": overlap,
    });
    let body = serde_json::to_string_pretty(&report).map_err(|e| CliError::Runtime(e.into()))?;
    match out {
        Some(path) => std::fs::write(path, body).map_err(|e| CliError::Runtime(e.into()))?,
        None => println!("{body}"),
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

fn cmd_sweep(kind: SweepKind, config_path: &Path, out: &Path) -> Result<(), CliError> {
    let json = read_config_file(config_path)?;
    let sweep = parse_sweep_config(&json).map_err(CliError::Config)?;
    let cfg = &sweep.run;
    let config_value = serde_json::to_value(&sweep).map_err(|e| CliError::Config(e.into()))?;
    let mut manifest = RunManifest::new(
        config_value,
        cfg.seeds.clone(),
        DecisionLog {
            saliency_method: cfg.saliency.to_string(),
            batch_size: cfg.batch_size,
            k_clusters: cfg.k_clusters,
            ..DecisionLog::default()
        },
    );
    let hash = manifest.config_hash.clone();
    let mut outputs = Outputs::default();

    match kind {
        SweepKind::Batch => {
            let sizes = sweep
                .sizes
                .clone()
                .ok_or_else(|| CliError::Config(Error::Config("batch sweep needs `sizes`".into())))?;
            let mut body = format!("# manifest {hash}\n");
            body.push_str("strategy,batch_size,crossing_fraction,iterations_to_cross\n");
            for strategy in &cfg.strategies {
                let al = cfg.to_al_config(*strategy);
                let rows = batch_size_sweep(&al, &sizes).map_err(CliError::Runtime)?;
                // Soft check: crossing fraction non-decreasing in batch size.
                for w in rows.windows(2) {
                    if w[1].crossing_fraction + 1e-9 < w[0].crossing_fraction {
                        eprintln!(
                            "warning: {} crossing fraction decreased from batch {} to {}",
                            strategy.label(),
                            w[0].batch_size,
                            w[1].batch_size
                        );
                    }
                }
                for row in rows {
                    body.push_str(&format!(
                        "{},{},{},{}\n",
                        strategy.label(),
                        row.batch_size,
                        fmt6(row.crossing_fraction),
                        fmt6(row.iterations_to_cross)
                    ));
                }
            }
            outputs.add(PathBuf::from("batch_sweep.csv"), body.into_bytes());
        }
        SweepKind::Noise => {
            let sigmas = sweep
                .sigmas
                .clone()
                .ok_or_else(|| CliError::Config(Error::Config("noise sweep needs `sigmas`".into())))?;
            let mut body = format!("# manifest {hash}\n");
            body.push_str("strategy,sigma,seed,fraction,auc_val,auc_test\n");
            for strategy in &cfg.strategies {
                let al = cfg.to_al_config(*strategy);
                let curves = ideal::alloop::noise_sweep(&al, &sigmas).map_err(CliError::Runtime)?;
                for (sigma, curve) in curves {
                    for run in &curve.runs {
                        for p in &run.points {
                            body.push_str(&format!(
                                "{},{},{},{:.2},{},{}\n",
                                strategy.label(),
                                sigma,
                                run.seed,
                                p.fraction,
                                fmt6(p.auc_val),
                                fmt6(p.auc_test)
                            ));
                        }
                    }
                }
            }
            outputs.add(PathBuf::from("noise_curves.csv"), body.into_bytes());
        }
        SweepKind::Switch => {
            let switch = cfg.switch.clone().ok_or_else(|| {
                CliError::Config(Error::Config("switch sweep needs `run.switch`".into()))
            })?;
            let mut body = format!("# manifest {hash}\n");
            body.push_str("variant,strategy,seed,fraction,auc_val,auc_test\n");
            for strategy in &cfg.strategies {
                let mut baseline_cfg = cfg.clone();
                baseline_cfg.switch = None;
                let baseline = run_active_learning(&baseline_cfg.to_al_config(*strategy))
                    .map_err(CliError::Runtime)?;
                let switched = ideal::alloop::dataset_switch_run(
                    &baseline_cfg.to_al_config(*strategy),
                    &switch.dataset,
                    switch.fraction,
                )
                .map_err(CliError::Runtime)?;
                for (variant, curve) in [("baseline", &baseline), ("switched", &switched)] {
                    for run in &curve.runs {
                        for p in &run.points {
                            body.push_str(&format!(
                                "{},{},{},{:.2},{},{}\n",
                                variant,
                                strategy.label(),
                                run.seed,
                                p.fraction,
                                fmt6(p.auc_val),
                                fmt6(p.auc_test)
                            ));
                        }
                    }
                }
            }
            outputs.add(PathBuf::from("switch_curves.csv"), body.into_bytes());
        }
        SweepKind::Saliency => {
            let methods = sweep.methods.clone().unwrap_or_else(|| {
                vec![SaliencyMethod::DeepTaylor, SaliencyMethod::GradCam]
            });
            let mut body = format!("# manifest {hash}\n");
            body.push_str("method,strategy,seed,fraction,auc_val,auc_test\n");
            for method in &methods {
                for strategy in &cfg.strategies {
                    let mut al = cfg.to_al_config(*strategy);
                    al.saliency = *method;
                    let curve = run_active_learning(&al).map_err(CliError::Runtime)?;
                    for run in &curve.runs {
                        for p in &run.points {
                            body.push_str(&format!(
                                "{},{},{},{:.2},{},{}\n",
                                method,
                                strategy.label(),
                                run.seed,
                                p.fraction,
                                fmt6(p.auc_val),
                                fmt6(p.auc_test)
                            ));
                        }
                    }
                }
            }
            outputs.add(PathBuf::from("saliency_curves.csv"), body.into_bytes());
        }
    }

    manifest.finish();
    outputs.add(
        PathBuf::from("manifest.json"),
        serde_json::to_vec_pretty(&manifest).map_err(|e| CliError::Runtime(e.into()))?,
    );
    outputs.write_all(out).map_err(CliError::Runtime)?;
    println!("sweep complete: {}", out.display());
    Ok(())
}

// RunConfig is used in signatures above; silence the unused-import lint when
// feature sets change.
#[allow(unused)]
fn _assert_config_type(c: RunConfig) -> RunConfig {
    c
}
