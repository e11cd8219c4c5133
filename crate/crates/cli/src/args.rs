use std::fs;
use std::path::PathBuf;

use actsom::RunConfig;
use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "actsom",
    version,
    about = "Locate concept representations in network layers with self-organizing maps"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one base SOM per manifest layer.
    Train(StageArgs),
    /// Populate base SOMs with the dataset and with each concept.
    Populate(StageArgs),
    /// Score concept maps, render heatmaps and write the report.
    Report(StageArgs),
}

impl Command {
    pub fn args(&self) -> &StageArgs {
        match self {
            Command::Train(a) | Command::Populate(a) | Command::Report(a) => a,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct StageArgs {
    /// Layer manifest (JSON).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Output directory shared by all stages.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON file with run settings; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training steps per layer (default: 10 x number of examples).
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Initial neighborhood radius in grid units.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Initial learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    /// Keep the neighborhood radius fixed during training.
    #[arg(long)]
    pub freeze_sigma: bool,
    /// Skip concepts with fewer members than this.
    #[arg(long)]
    pub min_members: Option<usize>,
    /// Smoothing constant for relative entropy.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Number of clusters for continuous targets.
    #[arg(long)]
    pub target_clusters: Option<usize>,
    /// Standardize continuous targets before clustering.
    #[arg(long)]
    pub normalize_targets: bool,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    pub jobs: Option<usize>,
}

impl StageArgs {
    /// Config file values, overridden by any flag given on the command line.
    pub fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("cannot read config file {}", path.display()))?;
                serde_json::from_str::<RunConfig>(&text)
                    .with_context(|| format!("invalid config file {}", path.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(v) = &self.manifest {
            config.manifest = v.clone();
        }
        if let Some(v) = &self.out {
            config.out_dir = v.clone();
        }
        if let Some(v) = self.seed {
            config.seed = v;
        }
        if let Some(v) = self.iterations {
            config.iterations = Some(v);
        }
        if let Some(v) = self.sigma {
            config.sigma = v;
        }
        if let Some(v) = self.lr {
            config.learning_rate = v;
        }
        if let Some(v) = self.width {
            config.width = v;
        }
        if let Some(v) = self.height {
            config.height = v;
        }
        if self.freeze_sigma {
            config.freeze_sigma = true;
        }
        if let Some(v) = self.min_members {
            config.min_members = v;
        }
        if let Some(v) = self.epsilon {
            config.epsilon = v;
        }
        if let Some(v) = self.target_clusters {
            config.target_clusters = v;
        }
        if self.normalize_targets {
            config.normalize_targets = true;
        }
        if let Some(v) = self.jobs {
            config.jobs = Some(v);
        }
        if config.manifest.as_os_str().is_empty() {
            bail!("--manifest is required (flag or config file)");
        }
        if config.out_dir.as_os_str().is_empty() {
            bail!("--out is required (flag or config file)");
        }
        config.validate()?;
        Ok(config)
    }
}
