use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use voxworld_core::lidar::LidarOptions;
use voxworld_core::outpaint::{serve_denoiser, LinearGaussianDenoiser};
use voxworld_core::Execution;
use voxworld_cli::bundle::Bundle;
use voxworld_cli::config::{parse_chunks, Config, DATA_ROOT_ENV};
use voxworld_cli::pipeline::{self, ComposeOptions, PredictorSpec};
use voxworld_cli::serve::{self, ServeState};
use voxworld_cli::{CliError, Result};

#[derive(Parser)]
#[command(name = "voxworld", version, about = "Generate, render and drive unbounded voxel worlds")]
struct Cli {
    /// Root that relative input paths are resolved against.
    #[arg(long, env = DATA_ROOT_ENV, global = true)]
    data_root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ExecArgs {
    /// Run on one thread.
    #[arg(long)]
    sequential: bool,
}

impl ExecArgs {
    fn execution(&self) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sample a world from a TOML config into a bundle directory.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<usize>,
        /// Chunks as `x,y;x,y;…`.
        #[arg(long)]
        chunks: Option<String>,
        #[command(flatten)]
        exec: ExecArgs,
    },
    /// Extend a bundle with more chunks, written as a new bundle.
    Outpaint {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        chunks: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render guidance buffers along a trajectory.
    RenderBuffers {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        trajectory: PathBuf,
        /// Frames per coordinate-normalization window.
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        exec: ExecArgs,
    },
    /// Lift rendered frames into a Gaussian scene directory.
    Compose {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        buffers: PathBuf,
        /// Directory of `frame_NNNNN.png` images; semantic colours otherwise.
        #[arg(long)]
        images: Option<PathBuf>,
        /// `heuristic` or `external:DIR`.
        #[arg(long, default_value = "heuristic")]
        predictor: PredictorSpec,
        #[arg(long)]
        sky_params: Option<PathBuf>,
        /// Probability of zeroing each depth patch.
        #[arg(long)]
        depth_mask: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cast one LiDAR sweep against a Gaussian scene.
    LidarSim {
        #[arg(long)]
        scene: PathBuf,
        /// Sensor pose `x,y,z,yaw`.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        pose: Vec<f64>,
        #[arg(long, default_value_t = 0.0)]
        t: f64,
        #[arg(long)]
        pattern: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Test every ellipsoid per beam instead of walking the BVH.
        #[arg(long)]
        no_bvh: bool,
        #[command(flatten)]
        exec: ExecArgs,
    },
    /// Serve interactive drive sessions over a websocket.
    Serve {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8787")]
        bind: String,
    },
    /// Write a Gaussian scene, posed at time `t`, as one PLY file.
    ExportPly {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        t: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Toy denoiser speaking the external denoiser protocol on stdio.
    #[command(hide = true)]
    ToyDenoiser {
        #[arg(long, default_value_t = 8)]
        channels: usize,
    },
}

fn under(root: &Option<PathBuf>, p: PathBuf) -> PathBuf {
    match root {
        Some(r) if p.is_relative() => r.join(p),
        _ => p,
    }
}

fn run(cli: Cli) -> Result<()> {
    let root = cli.data_root;
    let at = |p: PathBuf| under(&root, p);
    match cli.command {
        Command::Generate { config, out, seed, steps, chunks, exec } => {
            let path = at(config);
            let mut cfg = Config::load(&path)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(s) = steps {
                cfg.sampler.steps = s;
            }
            if let Some(c) = chunks {
                cfg.world.chunks = parse_chunks(&c)?;
            }
            if exec.sequential {
                cfg.sampler.parallel = false;
            }
            cfg.validate()?;
            let base = path.parent().map(PathBuf::from).unwrap_or_default();
            let m = pipeline::generate(&cfg, &base, &out)?;
            println!("{}: {} chunks, seed {}", out.display(), m.layout.order.len(), m.seed);
        }
        Command::Outpaint { bundle, chunks, out } => {
            let (_, placed) = pipeline::outpaint(&at(bundle), &parse_chunks(&chunks)?, &out)?;
            println!("{}: {} new chunks", out.display(), placed.len());
        }
        Command::RenderBuffers { scene, trajectory, frames, out, exec } => {
            let sets = pipeline::render_buffers_cmd(&at(scene), &at(trajectory), frames, &out, exec.execution())?;
            println!("{}: {} frames", out.display(), sets.len());
        }
        Command::Compose { scene, buffers, images, predictor, sky_params, depth_mask, out } => {
            let predictor = match predictor {
                PredictorSpec::External(p) => PredictorSpec::External(at(p)),
                p => p,
            };
            let opts = ComposeOptions {
                images: images.map(at),
                predictor,
                sky_params: sky_params.map(at),
                depth_mask,
                ..Default::default()
            };
            let m = pipeline::compose(&at(scene), &at(buffers), &opts, &out)?;
            println!("{}: {} objects", out.display(), m.objects.len());
        }
        Command::LidarSim { scene, pose, t, pattern, out, no_bvh, exec } => {
            let pose: [f64; 4] = pose
                .try_into()
                .map_err(|_| CliError::Config("--pose takes x,y,z,yaw".into()))?;
            let opts = LidarOptions {
                use_bvh: !no_bvh,
                execution: exec.execution(),
            };
            let n = pipeline::lidar_sim(&at(scene), pose, t, pattern.map(at).as_deref(), &opts, &out)?;
            println!("{}: {n} returns", out.display());
        }
        Command::Serve { bundle, bind } => {
            let b = Bundle::open(&at(bundle))?;
            let state = Arc::new(ServeState::from_bundle(&b)?);
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Service(e.to_string()))?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(&bind)
                    .await
                    .map_err(|e| CliError::Service(format!("{bind}: {e}")))?;
                eprintln!("listening on {}", listener.local_addr().map_err(|e| CliError::Service(e.to_string()))?);
                serve::run(listener, state, async {
                    let _ = tokio::signal::ctrl_c().await;
                })
                .await
            })?;
        }
        Command::ExportPly { scene, t, out } => {
            let n = pipeline::export_ply(&at(scene), t, &out)?;
            println!("{}: {n} Gaussians", out.display());
        }
        Command::ToyDenoiser { channels } => {
            let d = LinearGaussianDenoiser::world_prior(channels);
            serve_denoiser(&d, std::io::stdin().lock(), std::io::stdout().lock())
                .map_err(|e| CliError::Denoiser(e.to_string()))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
