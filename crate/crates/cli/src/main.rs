use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use seg_core::backends::BackendSpec;
use seg_core::geometry::load_prompts;
use seg_core::metrics::{dice, stats};
use seg_core::pipeline::{experiment_transforms, run_pipeline, write_experiment_csv, RunConfig};
use seg_core::recompose::{export_mesh, MeshFormat, PostprocessFlags};
use seg_core::volume::{load_mask, load_volume_auto, save_mask, VolumeFormat};
use seg_cli::server::{serve_listener, AppState};

#[derive(Parser)]
#[command(name = "seg", version, about = "Multi-axis promptable 3D segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Input volume (.nii, .nii.gz, or rawjson .json/.raw)
    #[arg(long)]
    volume: PathBuf,
    /// Prompt file: {"polylines":[{"label":"positive","points_mm":[[x,y,z],...]}]}
    #[arg(long)]
    prompts: PathBuf,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// flood:<tau>, threshold:<tau>, fault:<p>:<seed>:<inner> or remote:<url>
    #[arg(long, default_value = "flood:128")]
    backend: BackendSpec,
    /// Supporting axes required per voxel [default: ceil(k/2)]
    #[arg(long)]
    min_axes: Option<usize>,
    #[arg(long)]
    min_hits: Option<u32>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    largest_component: bool,
    #[arg(long, default_value_t = 0)]
    closing: usize,
    /// Worker threads [default: logical cores]
    #[arg(long)]
    workers: Option<usize>,
    /// Write the mask on the input grid instead of the isotropic working grid
    #[arg(long)]
    original_grid: bool,
}

impl RunArgs {
    fn config(&self) -> RunConfig {
        RunConfig {
            k: self.k,
            stride: self.stride,
            backend: self.backend.clone(),
            min_axes: self.min_axes,
            min_hits: self.min_hits,
            postprocess: PostprocessFlags { largest_component: self.largest_component, closing_radius: self.closing },
            seed: self.seed,
            workers: self.workers,
            original_grid: self.original_grid,
            ..Default::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Segment a volume and write the mask (and optionally a mesh)
    Run {
        #[command(flatten)]
        args: RunArgs,
        /// Output mask (.nii, .nii.gz or .json)
        #[arg(long)]
        out: PathBuf,
        /// Output mesh (.stl or .obj)
        #[arg(long)]
        mesh: Option<PathBuf>,
    },
    /// Compare a predicted mask against ground truth
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    /// Run once per axis count (and seed) and score against ground truth
    Experiment {
        #[command(flatten)]
        args: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "3,4,6,10")]
        ks: Vec<usize>,
        /// Run seeds; each seed repeats the whole k sweep
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        gt: PathBuf,
        /// CSV output [default: stdout]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the HTTP API
    Serve {
        #[arg(long, default_value_t = 8000)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value = "seg-data")]
        data_dir: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::Run { args, out, mesh } => {
            let v = load_volume_auto(&args.volume)?;
            let prompts = load_prompts(&args.prompts)?;
            let res = run_pipeline(&v, &prompts, &args.config())?;
            save_mask(&res.mask, &out, VolumeFormat::from_path(&out))?;
            if let Some(path) = mesh {
                export_mesh(&res.mesh, MeshFormat::from_path(&path), &path)?;
            }
            println!("{}", serde_json::to_string_pretty(&res.stats)?);
        }
        Command::Eval { pred, gt } => {
            let (pred, gt) = (load_mask(&pred)?, load_mask(&gt)?);
            let pred = if pred.grid.matches(&gt.grid) {
                pred
            } else {
                log::warn!("prediction grid differs from ground truth; resampling nearest-neighbour");
                pred.resample_nearest(&gt.grid)
            };
            let report = serde_json::json!({
                "dice": dice(&pred, &gt)?,
                "pred_stats": stats(&pred),
                "gt_stats": stats(&gt),
            });
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Experiment { args, ks, seeds, gt, out } => {
            let v = load_volume_auto(&args.volume)?;
            let prompts = load_prompts(&args.prompts)?;
            let truth = load_mask(&gt)?;
            let base = args.config();
            let mut rows = Vec::new();
            for seed in seeds.unwrap_or_else(|| vec![base.seed]) {
                rows.extend(experiment_transforms(&v, &prompts, &RunConfig { seed, ..base.clone() }, &ks, &truth)?);
            }
            match out {
                Some(path) => write_experiment_csv(&rows, std::fs::File::create(path)?)?,
                None => write_experiment_csv(&rows, std::io::stdout().lock())?,
            }
        }
        Command::Serve { port, host, data_dir } => {
            let state = Arc::new(AppState::open(data_dir)?);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind((host.as_str(), port)).await?;
                tokio::select! {
                    r = serve_listener(listener, state) => r,
                    _ = tokio::signal::ctrl_c() => Ok(()),
                }
            })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
