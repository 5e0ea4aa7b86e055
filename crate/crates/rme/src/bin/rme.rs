//! Command-line entry point: seeded, file-driven runs of dataset generation,
//! grid quantization, estimator training, evaluation, and report merging.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rme::error::{Result, RmeError};
use rme::estimators::{
    EstimatorConfig, FradeParams, KernelKind, KnnParams, KrigingParams, KrrParams, NetworkWeights,
};
use rme::evaluation::{run_sweep, MetricKind};
use rme::geo::{
    quantize, sample_patch, CombiningMode, EstimationInstance, GridSpec, Location, MeasurementSet,
    Patch,
};
use rme::io::{
    read_measurement_set, read_weights, render_report, write_measurement_set, write_weights,
    ConfigMap,
};
use rme::rng::{stream, Domain};
use rme::synth::{generate_map, lawnmower_locations, sample_measurements, PropagationConfig};
use rme::training::{
    make_training_examples, prepare_network_examples, train_network, train_traditional,
    AdamConfig, SearchGrid, TrainedTraditional,
};

#[derive(Parser)]
#[command(name = "rme", about = "Radio map estimation toolkit and benchmark harness")]
struct Cli {
    /// Run configuration file (flat key = value with [section] headers).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config's `seed` key.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads (fallback: RME_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic measurement sets (CSV + sidecar per set).
    Generate,
    /// Quantize a measurement set onto its grid and write values/mask rows.
    Quantize,
    /// Train an estimator and write its parameters file.
    Train,
    /// Run a Monte-Carlo evaluation sweep and write a report CSV.
    Evaluate {
        /// Re-run the sweep and fail unless the report bytes match.
        #[arg(long)]
        check_seed: bool,
    },
    /// Merge report CSVs and print a per-metric summary.
    Report {
        /// Report CSV files to merge.
        files: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.threads.or_else(|| {
        std::env::var("RME_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("rme: failed to configure {n} threads: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rme: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    std::fs::create_dir_all(&cli.out).map_err(|e| RmeError::io(&cli.out, e))?;
    let config = match &cli.config {
        Some(p) => ConfigMap::read(p)?,
        None => ConfigMap::default(),
    };
    let seed = match cli.seed {
        Some(s) => s,
        None => config.get("", "seed").map_or(Ok(0), |_| config.u64("", "seed"))?,
    };
    match &cli.command {
        Command::Generate => cmd_generate(&config, seed, &cli.out),
        Command::Quantize => cmd_quantize(&config, &cli.out),
        Command::Train => cmd_train(&config, seed, &cli.out),
        Command::Evaluate { check_seed } => cmd_evaluate(&config, seed, &cli.out, *check_seed),
        Command::Report { files } => cmd_report(files, &cli.out),
    }
}

fn propagation_from(config: &ConfigMap, seed: u64) -> Result<PropagationConfig> {
    let s = "propagation";
    let cfg = PropagationConfig {
        tx_power_plus_gain: config.f64_or(s, "tx_power_plus_gain_db", 10.0)?,
        tx_location: Location::new(
            config.f64_or(s, "tx_x_m", -50.0)?,
            config.f64_or(s, "tx_y_m", 0.0)?,
        ),
        path_loss_exponent: config.f64_or(s, "path_loss_exponent", 2.5)?,
        shadow_variance: config.f64_or(s, "shadow_variance_db2", 0.26)?,
        shadow_half_distance: config.f64_or(s, "shadow_half_distance_m", 50.0)?,
        fading_enabled: config.str_or(s, "fading", "on") == "on",
        noise_std: config.f64_or(s, "noise_std_db", 0.5)?,
        wavelength: config.f64_or(s, "wavelength_m", 0.3266)?,
        seed,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_generate(config: &ConfigMap, seed: u64, out: &Path) -> Result<()> {
    let g = "generate";
    let n_sets = config.usize_or(g, "n_sets", 1)?;
    let region = (
        config.f64_or(g, "region_x_m", 64.8)?,
        config.f64_or(g, "region_y_m", 64.8)?,
    );
    let spacing = config.f64_or(g, "grid_spacing_m", 1.2)?;
    let line = config.f64_or(g, "line_spacing_m", 2.4)?;
    let along = config.f64_or(g, "along_spacing_m", 1.2)?;
    for k in 0..n_sets {
        let cfg = propagation_from(config, seed.wrapping_add(k as u64))?;
        let map = generate_map(region, spacing, &cfg)?;
        let locs = lawnmower_locations(region, line, along);
        let set = sample_measurements(&map, &locs, &cfg);
        let path = out.join(format!("set_{k:03}.csv"));
        write_measurement_set(&set, &path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn combining_mode(name: &str) -> Result<CombiningMode> {
    match name {
        "natural_mean" => Ok(CombiningMode::NaturalMean),
        "db_mean" => Ok(CombiningMode::DbMean),
        "natural_median" => Ok(CombiningMode::NaturalMedian),
        "db_median" => Ok(CombiningMode::DbMedian),
        other => Err(RmeError::Config(format!("unknown combining mode '{other}'"))),
    }
}

fn full_region_instance(set: &MeasurementSet) -> (EstimationInstance, GridSpec) {
    let side = set.region.0.max(set.region.1);
    let patch = Patch {
        corner: Location::new(0.0, 0.0),
        side,
    };
    let spec = GridSpec::new(
        (set.region.1 / set.grid_spacing).round() as usize,
        (set.region.0 / set.grid_spacing).round() as usize,
        set.grid_spacing,
        Location::new(0.0, 0.0),
    );
    (
        EstimationInstance {
            measurements: set.measurements.clone(),
            patch,
        },
        spec,
    )
}

fn cmd_quantize(config: &ConfigMap, out: &Path) -> Result<()> {
    let q = "quantize";
    let input = PathBuf::from(config.require(q, "input")?);
    let mode = combining_mode(config.str_or(q, "mode", "db_mean"))?;
    let set = read_measurement_set(&input)?;
    let (instance, spec) = full_region_instance(&set);
    let grid = quantize(&instance, &spec, mode);
    let mut text = String::from("row,col,value_db,mask\n");
    for ((r, c), v) in grid.values.indexed_iter() {
        text.push_str(&format!(
            "{r},{c},{},{}\n",
            rme::io::format_sig(*v),
            grid.mask[[r, c]] as u8
        ));
    }
    let path = out.join("quantized.csv");
    std::fs::write(&path, text).map_err(|e| RmeError::io(&path, e))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn load_sets(config: &ConfigMap, section: &str) -> Result<Vec<MeasurementSet>> {
    let raw = config.require(section, "inputs")?;
    let mut paths: Vec<PathBuf> = Vec::new();
    for item in raw.split(',') {
        let p = PathBuf::from(item.trim());
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(&p)
                .map_err(|e| RmeError::io(&p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                .collect();
            found.sort();
            paths.extend(found);
        } else {
            paths.push(p);
        }
    }
    if paths.is_empty() {
        return Err(RmeError::Config(format!(
            "no input CSVs found in '{raw}'"
        )));
    }
    paths.iter().map(|p| read_measurement_set(p)).collect()
}

fn draw_instances(
    sets: &[MeasurementSet],
    patch_side: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<EstimationInstance>> {
    let mut rng = stream(seed, Domain::PatchSampling, 0);
    (0..count)
        .map(|_| {
            let k = rand::Rng::gen_range(&mut rng, 0..sets.len());
            sample_patch(&sets[k], patch_side, &mut rng)
        })
        .collect()
}

fn search_grid_from(config: &ConfigMap) -> Result<SearchGrid> {
    let mut grid = SearchGrid::default();
    let s = "search";
    if config.get(s, "knn_k").is_some() {
        grid.knn_k = config.usize_list(s, "knn_k")?;
    }
    if config.get(s, "kriging_var").is_some() {
        grid.kriging_var = config.f64_list(s, "kriging_var")?;
    }
    if config.get(s, "kriging_halfdist").is_some() {
        grid.kriging_halfdist = config.f64_list(s, "kriging_halfdist")?;
    }
    if config.get(s, "kriging_noise_var").is_some() {
        grid.kriging_noise_var = config.f64_list(s, "kriging_noise_var")?;
    }
    if config.get(s, "krr_reg").is_some() {
        grid.krr_reg = config.f64_list(s, "krr_reg")?;
    }
    if config.get(s, "krr_widths").is_some() {
        grid.krr_widths = config.f64_list(s, "krr_widths")?;
    }
    Ok(grid)
}

fn write_traditional_params(trained: &TrainedTraditional, path: &Path, kind: &str) -> Result<()> {
    let mut cfg = ConfigMap::default();
    cfg.set("estimator", "kind", kind);
    cfg.set("knn", "k", trained.knn.k);
    cfg.set("kriging", "shadow_variance", trained.kriging.shadow_variance);
    cfg.set(
        "kriging",
        "shadow_half_distance",
        trained.kriging.shadow_half_distance,
    );
    cfg.set("kriging", "noise_variance", trained.kriging.noise_variance);
    cfg.set("krr", "reg", trained.krr.reg);
    cfg.set("krr", "kernel", trained.krr.kernel.name());
    cfg.set("krr", "width", trained.krr.width);
    cfg.write(path)
}

fn cmd_train(config: &ConfigMap, seed: u64, out: &Path) -> Result<()> {
    let t = "train";
    let estimator = config.require(t, "estimator")?.to_string();
    let sets = load_sets(config, t)?;
    let patch_side = config.f64_or(t, "patch_side_m", 19.2)?;
    let n_patches = config.usize_or(t, "n_patches", 16)?;
    let n_obs_lo = config.usize_or(t, "n_obs_lo", 10)?;
    let n_obs_hi = config.usize_or(t, "n_obs_hi", 100)?;
    let instances = draw_instances(&sets, patch_side, n_patches, seed)?;

    match estimator.as_str() {
        "knn" | "kriging" | "krr" => {
            let budget = config.usize_or(t, "split_budget", 200)?;
            let search = search_grid_from(config)?;
            let trained =
                train_traditional(&instances, &search, (n_obs_lo, n_obs_hi), budget, seed)?;
            let path = out.join("params.txt");
            write_traditional_params(&trained, &path, &estimator)?;
            println!("wrote {}", path.display());
        }
        "cnn" | "frade" => {
            let frade_params = if estimator == "frade" {
                let tp = config.require("frade", "params").map_err(|_| {
                    RmeError::Config(
                        "frade training requires [frade] params = <traditional params file>"
                            .into(),
                    )
                })?;
                let tp = ConfigMap::read(&PathBuf::from(tp))?;
                Some(FradeParams {
                    knn: KnnParams {
                        k: tp.usize("knn", "k")?,
                    },
                    kriging: KrigingParams {
                        shadow_variance: tp.f64("kriging", "shadow_variance")?,
                        shadow_half_distance: tp.f64("kriging", "shadow_half_distance")?,
                        noise_variance: tp.f64("kriging", "noise_variance")?,
                    },
                    krr: KrrParams {
                        reg: tp.f64("krr", "reg")?,
                        kernel: KernelKind::parse(tp.str_or("krr", "kernel", "gaussian"))?,
                        width: tp.f64("krr", "width")?,
                    },
                    weights: NetworkWeights::zeros(5),
                })
            } else {
                None
            };
            let copies = config.usize_or(t, "copies", 5)?;
            let spacing = sets[0].grid_spacing;
            let mut examples = Vec::new();
            let mut specs: Option<GridSpec> = None;
            for (k, inst) in instances.iter().enumerate() {
                let spec = GridSpec::for_patch(&inst.patch, spacing);
                let grid = quantize(inst, &spec, CombiningMode::DbMean);
                examples.extend(make_training_examples(
                    &grid,
                    (n_obs_lo, n_obs_hi),
                    copies,
                    seed,
                    k as u64,
                )?);
                specs.get_or_insert(spec);
            }
            let spec = specs.expect("at least one instance");
            let net_examples =
                prepare_network_examples(&examples, &spec, frade_params.as_ref())?;
            let channels = if estimator == "frade" { 5 } else { 2 };
            let init = NetworkWeights::init(channels, seed);
            let cfg = AdamConfig {
                learning_rate: config.f64_or(t, "learning_rate", 1e-4)?,
                batch_size: config.usize_or(t, "batch_size", 200)?,
                epochs: config.usize_or(t, "epochs", 50)?,
                seed,
                ..AdamConfig::default()
            };
            let (weights, log) = train_network(&net_examples, &init, &cfg)?;
            let wpath = out.join("weights.bin");
            write_weights(&weights, &wpath)?;
            let mut logtext = String::from("epoch,loss\n");
            for (e, l) in log.epoch_loss.iter().enumerate() {
                logtext.push_str(&format!("{e},{}\n", rme::io::format_sig(*l)));
            }
            let lpath = out.join("training_log.csv");
            std::fs::write(&lpath, logtext).map_err(|e| RmeError::io(&lpath, e))?;
            println!("wrote {} and {}", wpath.display(), lpath.display());
        }
        other => {
            return Err(RmeError::Config(format!("unknown estimator '{other}'")));
        }
    }
    Ok(())
}

fn estimator_from_params(path: &Path) -> Result<EstimatorConfig> {
    let cfg = ConfigMap::read(path)?;
    let kind = cfg.require("estimator", "kind")?;
    let rel = |p: &str| -> PathBuf {
        let pb = PathBuf::from(p);
        if pb.is_relative() {
            path.parent().unwrap_or(Path::new(".")).join(pb)
        } else {
            pb
        }
    };
    match kind {
        "knn" => Ok(EstimatorConfig::Knn(KnnParams {
            k: cfg.usize("knn", "k")?,
        })),
        "kriging" => Ok(EstimatorConfig::Kriging(KrigingParams {
            shadow_variance: cfg.f64("kriging", "shadow_variance")?,
            shadow_half_distance: cfg.f64("kriging", "shadow_half_distance")?,
            noise_variance: cfg.f64("kriging", "noise_variance")?,
        })),
        "krr" => Ok(EstimatorConfig::Krr(KrrParams {
            reg: cfg.f64("krr", "reg")?,
            kernel: KernelKind::parse(cfg.str_or("krr", "kernel", "gaussian"))?,
            width: cfg.f64("krr", "width")?,
        })),
        "cnn" => Ok(EstimatorConfig::Cnn(read_weights(&rel(
            cfg.require("cnn", "weights")?,
        ))?)),
        "frade" => Ok(EstimatorConfig::Frade(FradeParams {
            knn: KnnParams {
                k: cfg.usize("knn", "k")?,
            },
            kriging: KrigingParams {
                shadow_variance: cfg.f64("kriging", "shadow_variance")?,
                shadow_half_distance: cfg.f64("kriging", "shadow_half_distance")?,
                noise_variance: cfg.f64("kriging", "noise_variance")?,
            },
            krr: KrrParams {
                reg: cfg.f64("krr", "reg")?,
                kernel: KernelKind::parse(cfg.str_or("krr", "kernel", "gaussian"))?,
                width: cfg.f64("krr", "width")?,
            },
            weights: read_weights(&rel(cfg.require("frade", "weights")?))?,
        })),
        other => Err(RmeError::Config(format!("unknown estimator kind '{other}'"))),
    }
}

fn cmd_evaluate(config: &ConfigMap, seed: u64, out: &Path, check_seed: bool) -> Result<()> {
    let e = "evaluate";
    let sets = load_sets(config, e)?;
    let estimator = estimator_from_params(&PathBuf::from(config.require(e, "params")?))?;
    let metrics: Vec<MetricKind> = config
        .require(e, "metrics")?
        .split(',')
        .map(|m| MetricKind::parse(m.trim()))
        .collect::<Result<_>>()?;
    let n_obs = config.usize_list(e, "n_obs")?;
    let patch_side = config.f64_or(e, "patch_side_m", 19.2)?;
    let iterations = config.usize_or(e, "iterations", 200)?;
    let render = || -> Result<String> {
        let reports = run_sweep(
            &sets, &estimator, &metrics, &n_obs, patch_side, iterations, seed,
        )?;
        Ok(render_report(&reports, None))
    };
    let text = render()?;
    if check_seed {
        let again = render()?;
        if again != text {
            return Err(RmeError::Numerical(
                "evaluate rerun produced different report bytes".into(),
            ));
        }
    }
    let path = out.join("report.csv");
    std::fs::write(&path, &text).map_err(|e| RmeError::io(&path, e))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_report(files: &[PathBuf], out: &Path) -> Result<()> {
    if files.is_empty() {
        return Err(RmeError::InvalidArgument("no report files given".into()));
    }
    let mut merged: Vec<String> = Vec::new();
    let mut header: Option<String> = None;
    for f in files {
        let text = std::fs::read_to_string(f).map_err(|e| RmeError::io(f, e))?;
        let mut lines = text.lines();
        let h = lines
            .next()
            .ok_or_else(|| RmeError::Config(format!("{}: empty report", f.display())))?;
        match &header {
            None => header = Some(h.to_string()),
            Some(prev) if prev != h => {
                return Err(RmeError::Config(format!(
                    "{}: header mismatch with earlier reports",
                    f.display()
                )))
            }
            _ => {}
        }
        merged.extend(lines.filter(|l| !l.trim().is_empty()).map(String::from));
    }
    let header = header.expect("at least one file");
    let mut text = header.clone();
    text.push('\n');
    for row in &merged {
        text.push_str(row);
        text.push('\n');
    }
    let path = out.join("merged.csv");
    std::fs::write(&path, &text).map_err(|e| RmeError::io(&path, e))?;

    // Text summary: best (minimum mean error) row per estimator x metric.
    let cols: Vec<&str> = header.split(',').collect();
    let est_i = cols.iter().position(|c| *c == "estimator");
    let met_i = cols.iter().position(|c| *c == "metric");
    let err_i = cols.iter().position(|c| *c == "mean_error_db");
    let mut best: std::collections::BTreeMap<(String, String), (f64, String)> =
        std::collections::BTreeMap::new();
    if let (Some(ei), Some(mi), Some(xi)) = (est_i, met_i, err_i) {
        for row in &merged {
            let f: Vec<&str> = row.split(',').collect();
            if f.len() != cols.len() {
                continue;
            }
            let Ok(v) = f[xi].parse::<f64>() else { continue };
            let key = (f[ei].to_string(), f[mi].to_string());
            if best.get(&key).is_none_or(|(b, _)| v < *b) {
                best.insert(key, (v, row.clone()));
            }
        }
    }
    let mut summary = String::from("estimator  metric  best_mean_error_db\n");
    for ((est, met), (v, _)) in &best {
        summary.push_str(&format!("{est}  {met}  {}\n", rme::io::format_sig(*v)));
    }
    let spath = out.join("summary.txt");
    std::fs::write(&spath, &summary).map_err(|e| RmeError::io(&spath, e))?;
    print!("{summary}");
    println!("wrote {} and {}", path.display(), spath.display());
    Ok(())
}
