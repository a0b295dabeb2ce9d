//! Argument parsing and dispatch.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands;
use crate::config::{PipelineConfig, CONFIG_ENV};
use crate::error::CliError;
use crate::output::Written;

#[derive(Debug, Parser)]
#[command(name = "spinekin", version, about = "Spine-aware keypoint pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,
    /// Overrides the synthetic scenario seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Length unit of written marker files: m or mm.
    #[arg(long, global = true)]
    pub units: Option<String>,
    /// Keypoint subset for 2D scalar metrics: S_C, S_T, S_L, S, B or All.
    #[arg(long, global = true)]
    pub subset: Option<String>,
    /// Output directory; default inputs are also looked up here.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Skeleton definition (TOML).
    #[arg(long, global = true)]
    pub skeleton: Option<PathBuf>,
    #[arg(long, global = true)]
    pub log_level: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scenario bundle.
    Synth,
    /// Triangulate 2D annotations into a marker file.
    Triangulate {
        #[arg(long)]
        calibration: Option<PathBuf>,
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        min_views: Option<usize>,
    },
    /// Fit joint angles to a marker file.
    Ik {
        #[arg(long)]
        markers: Option<PathBuf>,
        /// Temporal smoothness weight.
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Virtual markers and vertebral rotations from a motion file.
    Fk {
        #[arg(long)]
        motion: Option<PathBuf>,
    },
    /// Curvature, range-of-motion and neck reports with figures.
    Analyze {
        #[arg(long)]
        motion: Option<PathBuf>,
        /// Also check curvature against the reference cohort.
        #[arg(long)]
        audit: bool,
    },
    /// Score a predicted marker file against ground truth.
    Evaluate {
        #[arg(long)]
        prediction: Option<PathBuf>,
        #[arg(long)]
        ground_truth: Option<PathBuf>,
        #[arg(long)]
        calibration: Option<PathBuf>,
    },
}

impl Cli {
    /// Configuration file plus flag overrides.
    pub fn resolve_config(&self) -> Result<PipelineConfig, CliError> {
        let mut c = match &self.global.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        let g = &self.global;
        if let Some(s) = g.seed {
            c.synth.seed = s;
        }
        if let Some(u) = &g.units {
            c.units = u.clone();
        }
        if let Some(s) = &g.subset {
            c.metrics.subset = s.clone();
        }
        if let Some(o) = &g.output {
            c.paths.output = o.clone();
        }
        if let Some(s) = &g.skeleton {
            c.paths.skeleton = Some(s.clone());
        }
        if let Some(l) = &g.log_level {
            c.log_level = l.clone();
        }
        match &self.command {
            Command::Synth => {}
            Command::Triangulate {
                calibration,
                annotations,
                min_views,
            } => {
                set(&mut c.paths.calibration, calibration);
                set(&mut c.paths.annotations, annotations);
                if let Some(m) = min_views {
                    c.triangulation.min_views = *m;
                }
            }
            Command::Ik { markers, lambda } => {
                set(&mut c.paths.markers, markers);
                if let Some(l) = lambda {
                    c.ik.lambda_smooth = *l;
                }
            }
            Command::Fk { motion } => set(&mut c.paths.motion, motion),
            Command::Analyze { motion, audit } => {
                set(&mut c.paths.motion, motion);
                c.analysis.audit |= *audit;
            }
            Command::Evaluate {
                prediction,
                ground_truth,
                calibration,
            } => {
                set(&mut c.paths.prediction, prediction);
                set(&mut c.paths.ground_truth, ground_truth);
                set(&mut c.paths.calibration, calibration);
            }
        }
        Ok(c)
    }
}

fn set(slot: &mut Option<PathBuf>, value: &Option<PathBuf>) {
    if value.is_some() {
        slot.clone_from(value);
    }
}

/// Runs the selected command inside a pool of `--workers` threads.
pub fn run(cli: &Cli, config: &PipelineConfig) -> Result<Written, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.global.workers)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {} workers: {e}", cli.global.workers)))?;
    pool.install(|| match cli.command {
        Command::Synth => commands::cmd_synth(config),
        Command::Triangulate { .. } => commands::cmd_triangulate(config),
        Command::Ik { .. } => commands::cmd_ik(config),
        Command::Fk { .. } => commands::cmd_fk(config),
        Command::Analyze { .. } => commands::cmd_analyze(config),
        Command::Evaluate { .. } => commands::cmd_evaluate(config),
    })
}
