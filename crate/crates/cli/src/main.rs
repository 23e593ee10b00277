//! `reenact`: run and inspect reenactment sessions from the shell.
//!
//! Every verb reads a session config. Stages are cached in the session
//! directory, so `pose-match` after `project` only runs the new work.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use reenact_core::blend::BaselineMode;
use reenact_core::container::save_trajectory;
use reenact_core::latent::{BlendCoefficients, LatentTrajectory, MotionSource};
use reenact_core::metrics::{KeypointNormalization, MetricReport};
use reenact_core::mining::BackgroundDirection;
use reenact_core::pipeline::{
    prepare_session, run_session, write_demo, write_frames_dir, write_y4m, DemoSpec, PreparedSession, SessionConfig,
    CACHE_ENV,
};
use reenact_studio::{AppState, ServiceConfig};

#[derive(Parser)]
#[command(name = "reenact", version, about = "Latent-space face reenactment toolkit")]
struct Cli {
    /// Session config (JSON).
    #[arg(long, global = true, env = "REENACT_CONFIG")]
    config: Option<PathBuf>,
    /// Override the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detect landmarks, warp to the canonical crop, write the driving rigid track.
    Align {
        #[arg(long)]
        kernel: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Project the inputs into W+ and write the driving trajectory.
    Project {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Match the reference code's pose to one driving frame.
    PoseMatch {
        #[arg(long)]
        anchor_frame: Option<usize>,
        #[arg(long)]
        pose_weight: Option<f64>,
        #[arg(long)]
        id_weight: Option<f64>,
        #[arg(long)]
        max_steps: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Find S-space channels tied to facial parts.
    MineChannels {
        #[arg(long)]
        probes: Option<usize>,
        #[arg(long)]
        tfg: Option<f64>,
        #[arg(long)]
        tbg: Option<f64>,
        /// `at_most` (default) or `at_least`.
        #[arg(long, value_parser = parse_enum::<BackgroundDirection>)]
        iou_bg_direction: Option<BackgroundDirection>,
        /// Use this catalog instead of mining.
        #[arg(long)]
        channels: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render the edited clip under the given blend settings.
    Render(RenderArgs),
    /// Score the method and the plain W+ transfer forwards and backwards.
    Eval {
        /// kpd, id, fid or protocol (all three).
        #[arg(long, default_value = "protocol")]
        metric: String,
        #[arg(long, value_parser = parse_enum::<KeypointNormalization>)]
        normalization: Option<KeypointNormalization>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run every stage and write frames, video and report.
    Run,
    /// Serve the studio HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8700")]
        addr: SocketAddr,
        /// Directory that relative session paths resolve against.
        #[arg(long, default_value = ".")]
        base_dir: PathBuf,
    },
    /// Write a self-contained toy session (checkpoint, clips, config).
    Demo {
        dir: PathBuf,
        #[arg(long, default_value_t = 40)]
        frames: usize,
    },
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    beta: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    gamma: Option<f64>,
    #[arg(long)]
    zeta: Option<f64>,
    #[arg(long, value_parser = parse_enum::<MotionSource>)]
    rigid_source: Option<MotionSource>,
    #[arg(long, value_parser = parse_enum::<MotionSource>)]
    pose_source: Option<MotionSource>,
    #[arg(long, value_parser = parse_enum::<MotionSource>)]
    local_source: Option<MotionSource>,
    /// `cumulative` or `literal`.
    #[arg(long, value_parser = parse_enum::<BaselineMode>)]
    baseline: Option<BaselineMode>,
    #[arg(long)]
    kernel: Option<usize>,
    /// YUV4MPEG2 output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Lossless per-frame PNGs.
    #[arg(long)]
    frames_dir: Option<PathBuf>,
}

/// Parse a value by its JSON spelling, e.g. `codriving` or `at_least`.
fn parse_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn load_config(cli: &Cli) -> Result<SessionConfig> {
    let Some(path) = &cli.config else {
        bail!("--config is required for this command");
    };
    let mut cfg = SessionConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn prepare(cfg: &SessionConfig) -> Result<PreparedSession> {
    // The directory lock is released once preparation is done.
    let (_dir, prepared) = prepare_session(cfg)?;
    Ok(prepared)
}

fn wrote(path: &Path) {
    println!("wrote {}", path.display());
}

fn apply_render_args(c: &mut BlendCoefficients, a: &RenderArgs) {
    c.alpha = a.alpha.unwrap_or(c.alpha);
    c.beta = a.beta.unwrap_or(c.beta);
    c.gamma = a.gamma.unwrap_or(c.gamma);
    c.zeta = a.zeta.unwrap_or(c.zeta);
    c.rigid_source = a.rigid_source.unwrap_or(c.rigid_source);
    c.pose_source = a.pose_source.unwrap_or(c.pose_source);
    c.local_source = a.local_source.unwrap_or(c.local_source);
}

fn print_metrics(label: &str, m: &MetricReport, metric: &str) {
    let parts = match metric {
        "kpd" => format!("ΔK_x {:.6} ΔK_y {:.6}", m.dk_x, m.dk_y),
        "id" => format!("ID {:.6}", m.id),
        "fid" => format!("FID {:.6}", m.fid),
        _ => format!("ΔK_x {:.6} ΔK_y {:.6} ID {:.6} FID {:.6}", m.dk_x, m.dk_y, m.id, m.fid),
    };
    println!("{label:<18} {parts}");
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log_level).init();
    if let Some(cache) = std::env::var_os(CACHE_ENV) {
        log::debug!("checkpoint cache {}", PathBuf::from(cache).display());
    }

    match &cli.command {
        Command::Align { kernel, out } => {
            let mut cfg = load_config(&cli)?;
            cfg.rigid_kernel = kernel.unwrap_or(cfg.rigid_kernel);
            let p = prepare(&cfg)?;
            println!("aligned {} driving frames into {}", p.frame_count(), p.dir.join("align").display());
            if let Some(out) = out {
                std::fs::write(out, p.driving_rigid.to_json()?)?;
                wrote(out);
            }
        }
        Command::Project { out } => {
            let p = prepare(&load_config(&cli)?)?;
            println!("{} driving codes, {} layers", p.frame_count(), p.reference_code.layer_count());
            if let Some(out) = out {
                save_trajectory(&p.driving, out)?;
                wrote(out);
            }
        }
        Command::PoseMatch {
            anchor_frame,
            pose_weight,
            id_weight,
            max_steps,
            out,
        } => {
            let mut cfg = load_config(&cli)?;
            cfg.anchor_frame = anchor_frame.unwrap_or(cfg.anchor_frame);
            if let Some(w) = pose_weight {
                cfg.pose.pose_weight = [*w; 3];
            }
            cfg.pose.identity_weight = id_weight.unwrap_or(cfg.pose.identity_weight);
            cfg.pose.max_steps = max_steps.unwrap_or(cfg.pose.max_steps);
            let p = prepare(&cfg)?;
            let record = std::fs::read_to_string(p.dir.join("pose").join("pose.json"))?;
            print!("{record}");
            if let Some(out) = out {
                save_trajectory(&LatentTrajectory::single(p.w_ref_pose.clone(), "reference_pose"), out)?;
                wrote(out);
            }
        }
        Command::MineChannels {
            probes,
            tfg,
            tbg,
            iou_bg_direction,
            channels,
            out,
        } => {
            let mut cfg = load_config(&cli)?;
            let m = &mut cfg.mining;
            m.probe_count = probes.unwrap_or(m.probe_count);
            m.thresholds.t_fg = tfg.unwrap_or(m.thresholds.t_fg);
            m.thresholds.t_bg = tbg.unwrap_or(m.thresholds.t_bg);
            m.iou_bg_direction = iou_bg_direction.unwrap_or(m.iou_bg_direction);
            if channels.is_some() {
                cfg.catalog = channels.clone();
            }
            let p = prepare(&cfg)?;
            for e in &p.catalog.entries {
                println!("layer {:>2} channel {:>3} {:?} fg {:.3} bg {:.3}", e.layer, e.channel, e.part, e.iou_fg, e.iou_bg);
            }
            if let Some(out) = out {
                p.catalog.save(out)?;
                wrote(out);
            }
        }
        Command::Render(args) => {
            let mut cfg = load_config(&cli)?;
            cfg.rigid_kernel = args.kernel.unwrap_or(cfg.rigid_kernel);
            cfg.baseline = args.baseline.unwrap_or(cfg.baseline);
            apply_render_args(&mut cfg.coefficients, args);
            cfg.coefficients.validate()?;
            let p = prepare(&cfg)?;
            let frames = p.render_clip(&cfg.coefficients, false)?;
            let video = args.out.clone().unwrap_or_else(|| p.dir.join("render.y4m"));
            write_y4m(&frames, p.fps(), &video)?;
            wrote(&video);
            if let Some(dir) = &args.frames_dir {
                write_frames_dir(&frames, p.fps(), dir)?;
                wrote(dir);
            }
        }
        Command::Eval {
            metric,
            normalization,
            report,
        } => {
            if !["kpd", "id", "fid", "protocol"].contains(&metric.as_str()) {
                bail!("--metric must be kpd, id, fid or protocol");
            }
            let mut cfg = load_config(&cli)?;
            cfg.normalization = normalization.unwrap_or(cfg.normalization);
            let r = prepare(&cfg)?.evaluate()?;
            println!("{} frames, {:?} normalization", r.frame_count, r.normalization);
            print_metrics("method forward", &r.method.forward, metric);
            print_metrics("method reverse", &r.method.reverse, metric);
            print_metrics("baseline forward", &r.baseline.forward, metric);
            print_metrics("baseline reverse", &r.baseline.reverse, metric);
            if let Some(path) = report {
                std::fs::write(path, serde_json::to_string_pretty(&r)? + "\n")?;
                wrote(path);
            }
        }
        Command::Run => {
            let out = run_session(&load_config(&cli)?)?;
            println!("{} frames in {}", out.frames.len(), out.dir.display());
            wrote(&out.video);
            if let Some(r) = &out.report {
                print_metrics("method forward", &r.method.forward, "protocol");
                print_metrics("baseline forward", &r.baseline.forward, "protocol");
            }
        }
        Command::Serve { addr, base_dir } => {
            let app = AppState::new(ServiceConfig {
                base_dir: base_dir.clone(),
                ..ServiceConfig::default()
            });
            tokio::runtime::Runtime::new()?.block_on(reenact_studio::serve(*addr, app))?;
        }
        Command::Demo { dir, frames } => {
            // The written config holds absolute paths.
            std::fs::create_dir_all(dir)?;
            let dir = dir.canonicalize()?;
            let spec = DemoSpec {
                frames: *frames,
                seed: cli.seed.unwrap_or(DemoSpec::default().seed),
                ..DemoSpec::default()
            };
            write_demo(&dir, &spec)?;
            wrote(&dir.join("session.json"));
        }
    }
    Ok(())
}
