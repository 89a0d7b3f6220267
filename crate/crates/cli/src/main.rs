mod backend;
mod config;
mod stages;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use log::{error, info};
use resseg::components::PostprocessParams;
use resseg::metrics::DEFAULT_CLASS_NAMES;
use resseg::roiar::{RoiMethod, RoiSpec};

use backend::BackendSpec;
use config::PipelineConfig;
use stages::ReportFormat;

#[derive(Parser)]
#[command(
    name = "resseg",
    version,
    about = "Reservoir and man-made object segmentation workflow"
)]
struct Cli {
    /// Worker threads for patch-level work (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cut a mosaic into fixed-size patches plus a manifest.
    Tile {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        patch_height: usize,
        #[arg(long)]
        patch_width: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Probability map for every patch of a tiled mosaic.
    Predict {
        /// external:DIR, tiny-fcn:CHECKPOINT, constant:P, intensity or intensity-inverted
        #[arg(long)]
        backend: BackendSpec,
        #[arg(long)]
        tiles: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Threshold, open, close, fill holes and prune a reservoir map.
    Postprocess(PostprocessArgs),
    /// Region of interest around a reservoir mask.
    Roiar(RoiarArgs),
    /// Precision, recall, F1 and support per class.
    Evaluate(EvaluateArgs),
    /// Train the small fully-convolutional model.
    Train {
        /// TOML file with a [train] table and optionally a [model] table.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        train_dir: PathBuf,
        #[arg(long)]
        val_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        history: PathBuf,
        /// Override a config value, e.g. `train.max_epochs=5`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Compare loss gradients with finite differences.
    LossesCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        batches: usize,
    },
    /// Run the whole two-phase workflow from a config file.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

#[derive(Args)]
struct PostprocessArgs {
    #[arg(long)]
    probs: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, default_value_t = 100.0)]
    kernel_m: f64,
    #[arg(long, default_value_t = 0.2)]
    size_ratio: f64,
    #[arg(long, default_value_t = 300.0)]
    max_dist_m: f64,
    /// Skip hole filling and component pruning.
    #[arg(long)]
    no_rules: bool,
    /// Keep only pixels inside this mask.
    #[arg(long)]
    within: Option<PathBuf>,
    /// Write every intermediate mask here.
    #[arg(long)]
    debug: Option<PathBuf>,
}

#[derive(Args)]
struct RoiarArgs {
    #[arg(long)]
    reservoir: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// `morph` or `boxes`.
    #[arg(long, default_value = "morph")]
    method: RoiMethod,
    #[arg(long, default_value_t = 200.0)]
    margin_m: f64,
    #[arg(long, default_value_t = 10.0)]
    epsilon_px: f64,
    /// Mosaic to mask with the region of interest.
    #[arg(long, requires = "masked_out")]
    mosaic: Option<PathBuf>,
    #[arg(long, requires = "mosaic")]
    masked_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    fill: u8,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    scope: Option<PathBuf>,
    /// Single-channel label image; adds one row per label.
    #[arg(long)]
    regions: Option<PathBuf>,
    /// Positive and negative class names, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_CLASS_NAMES.map(String::from))]
    names: Vec<String>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Tsv)]
    format: ReportFormat,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Tile {
            input,
            patch_height,
            patch_width,
            out,
        } => {
            stages::tile(&input, patch_height, patch_width, &out)?;
        }
        Command::Predict {
            backend,
            tiles,
            out,
        } => {
            stages::predict(backend.build()?.as_ref(), &tiles, &out)?;
        }
        Command::Postprocess(a) => {
            let params = PostprocessParams {
                threshold: a.threshold,
                kernel_m: a.kernel_m,
                size_ratio: a.size_ratio,
                max_dist_m: a.max_dist_m,
                object_rules: !a.no_rules,
            };
            params.validate()?;
            stages::postprocess(
                &a.probs,
                &params,
                a.within.as_deref(),
                &a.out,
                a.debug.as_deref(),
            )?;
        }
        Command::Roiar(a) => {
            let spec = RoiSpec {
                method: a.method,
                margin_m: a.margin_m,
                simplify_epsilon_px: a.epsilon_px,
            };
            spec.validate()?;
            let masked = a
                .mosaic
                .as_deref()
                .zip(a.masked_out.as_deref())
                .map(|(m, o)| (m, o, a.fill));
            stages::roiar(&a.reservoir, &spec, &a.out, masked)?;
        }
        Command::Evaluate(a) => {
            let [pos, neg] = a.names.as_slice() else {
                return Err(resseg::Error::Validation {
                    what: "names",
                    msg: format!("expected two class names, got {}", a.names.len()),
                }
                .into());
            };
            let names = [pos.as_str(), neg.as_str()];
            let report = stages::evaluate(
                &a.pred,
                &a.gt,
                a.scope.as_deref(),
                a.regions.as_deref(),
                names,
                a.format,
            )?;
            match a.out {
                Some(path) => resseg::io::write_atomic(&path, report.as_bytes())?,
                None => print!("{report}"),
            }
        }
        Command::Train {
            config,
            train_dir,
            val_dir,
            out,
            history,
            overrides,
        } => {
            let (cfg, model) = config::load_train(&config, &overrides)?;
            stages::train(&cfg, &model, &train_dir, &val_dir, &out, &history)?;
        }
        Command::LossesCheck { seed, batches } => {
            let rows = resseg::losses::self_check(seed, batches)?;
            println!("check\tvalue\ttolerance\tresult");
            for r in &rows {
                let verdict = if r.passed { "ok" } else { "FAIL" };
                println!("{}\t{:e}\t{:e}\t{verdict}", r.name, r.value, r.tolerance);
            }
            if rows.iter().any(|r| !r.passed) {
                error!("loss self-check failed");
                return Ok(4);
            }
        }
        Command::Pipeline {
            config,
            out,
            overrides,
        } => {
            let cfg = PipelineConfig::load(&config, &overrides)?;
            pipeline(&cfg, &out)?;
        }
    }
    Ok(0)
}

/// Every artifact lands in `out` under the same names a stage-by-stage run
/// would use.
fn pipeline(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    let p = |name: &str| out.join(name);
    let phase1 = cfg.phase1.backend.build()?;
    let phase2 = cfg.phase2.backend.build()?;

    info!("phase 1: reservoir segmentation");
    stages::tile(
        &cfg.mosaic,
        cfg.phase1.patch_height,
        cfg.phase1.patch_width,
        &p("tiles1"),
    )?;
    stages::predict(phase1.as_ref(), &p("tiles1"), &p("probs1"))?;
    stages::postprocess(
        &p("probs1").join(stages::MOSAIC_MAP),
        &cfg.postprocess,
        None,
        &p("reservoir.pgm"),
        Some(&p("debug")),
    )?;
    stages::roiar(
        &p("reservoir.pgm"),
        &cfg.roi,
        &p("roi.pgm"),
        Some((&cfg.mosaic, &p("masked.pnm"), cfg.fill)),
    )?;

    info!("phase 2: man-made objects inside the region of interest");
    stages::tile(
        &p("masked.pnm"),
        cfg.phase2.patch_height,
        cfg.phase2.patch_width,
        &p("tiles2"),
    )?;
    stages::predict(phase2.as_ref(), &p("tiles2"), &p("probs2"))?;
    stages::postprocess(
        &p("probs2").join(stages::MOSAIC_MAP),
        &manmade_params(cfg.phase2_threshold),
        Some(&p("roi.pgm")),
        &p("manmade.pgm"),
        None,
    )?;

    let ev = &cfg.evaluate;
    if let Some(gt) = &ev.reservoir_gt {
        let report = stages::evaluate(
            &p("reservoir.pgm"),
            gt,
            None,
            ev.regions.as_deref(),
            ["reservoir", "non-reservoir"],
            ReportFormat::Tsv,
        )?;
        resseg::io::write_atomic(&p("reservoir_report.tsv"), report.as_bytes())?;
        print!("{report}");
    }
    if let Some(gt) = &ev.manmade_gt {
        let report = stages::evaluate(
            &p("manmade.pgm"),
            gt,
            Some(&p("roi.pgm")),
            ev.regions.as_deref(),
            ["man-made", "background"],
            ReportFormat::Tsv,
        )?;
        resseg::io::write_atomic(&p("manmade_report.tsv"), report.as_bytes())?;
        print!("{report}");
    }
    Ok(())
}

/// The man-made map is a plain threshold: no morphology, no object rules.
fn manmade_params(threshold: f64) -> PostprocessParams {
    PostprocessParams {
        threshold,
        kernel_m: 0.0,
        object_rules: false,
        ..PostprocessParams::default()
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<resseg::Error>() {
            return e.exit_code() as u8;
        }
        if cause.is::<std::io::Error>() {
            return 3;
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            error!("{e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
