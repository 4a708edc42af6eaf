//! The `genb` command line.

pub mod commands;
pub mod generate;
pub mod logging;

use std::path::PathBuf;
use std::sync::Arc;

use anyhow::bail;
use clap::{Args, Parser, Subcommand};
use genb_core::backend::{serve, DenoiserBackend, MockBackend, RemoteBackend, RemoteOptions, ServerOptions};
use genb_core::evaluation::{ImageSet, DEFAULT_CROP_SIZE};
use genb_core::synthesis::Preset;

use commands::{cmd_contact_sheet, cmd_fid, cmd_validate, FidOptions};
use generate::{cmd_generate, load_config, GenerateOptions};

/// Exit status for runs where some frame or part failed.
pub const EXIT_PARTIAL: i32 = 1;
/// Exit status for usage, configuration and setup errors.
pub const EXIT_ERROR: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "genb", version, about = "Per-part diffusion upgrade of synthetic human datasets")]
pub struct Cli {
    /// Log at debug level.
    #[arg(long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct BackendArgs {
    /// Base URL of a worker speaking wire protocol v1.
    #[arg(long, env = "GENB_BACKEND_URL", conflicts_with = "mock")]
    pub backend: Option<String>,
    /// Use the deterministic in-process mock backend.
    #[arg(long)]
    pub mock: bool,
}

impl BackendArgs {
    pub fn connect(&self) -> anyhow::Result<Arc<dyn DenoiserBackend>> {
        match (&self.backend, self.mock) {
            (_, true) => Ok(Arc::new(MockBackend::default())),
            (Some(url), false) => {
                let remote = RemoteBackend::new(url, RemoteOptions::default());
                remote.health()?;
                Ok(Arc::new(remote))
            }
            (None, false) => bail!("pass --mock or --backend URL (or set GENB_BACKEND_URL)"),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check every frame of a dataset against the archive invariants.
    Validate { root: PathBuf },
    /// Upgrade every frame of ROOT into OUT.
    Generate {
        root: PathBuf,
        out: PathBuf,
        /// Generation config (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Ablation preset overriding the config's, e.g. `cumulative-2` or `noise-0.7`.
        #[arg(long)]
        preset: Option<Preset>,
        #[command(flatten)]
        backend: BackendArgs,
        /// Frames processed concurrently.
        #[arg(long, default_value_t = default_workers())]
        workers: usize,
        /// Keep frames whose complete output matches the current config.
        #[arg(long)]
        resume: bool,
        /// Write conditioning images under `<out>/<frame>/cond/`.
        #[arg(long)]
        dump_conditions: bool,
        /// Only frames whose id matches this glob.
        #[arg(long)]
        frames: Option<String>,
    },
    /// FID between the person crops of two image sets (dataset roots or box manifests).
    Fid {
        set_a: PathBuf,
        set_b: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(long, default_value_t = DEFAULT_CROP_SIZE)]
        crop_size: u32,
        /// Directory for cached feature vectors.
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        /// For a dataset SET_A, crop `rgb.png` even where `gen_rgb.png` exists.
        #[arg(long)]
        a_source_only: bool,
        #[arg(long)]
        b_source_only: bool,
        /// Also write the JSON result here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Side-by-side sheet of input and generated frames.
    ContactSheet {
        before: PathBuf,
        after: PathBuf,
        out: PathBuf,
        #[arg(long, default_value_t = 320)]
        thumb_width: u32,
    },
    /// Write the synthetic test dataset.
    Fixture {
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        frames: usize,
    },
    /// Serve the mock backend over wire protocol v1 until killed.
    ServeMock {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        #[arg(long, default_value_t = ServerOptions::default().max_in_flight)]
        max_in_flight: usize,
    },
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn image_set(path: PathBuf, source_only: bool) -> ImageSet {
    match ImageSet::from_path(&path) {
        ImageSet::Synthetic { root, .. } => ImageSet::Synthetic { root, source_only },
        m => m,
    }
}

/// A closed stdout (e.g. piped into `head`) is not an error.
fn print_json(v: &impl serde::Serialize) -> anyhow::Result<()> {
    use std::io::Write;
    let text = serde_json::to_string_pretty(v)?;
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}").and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

/// Runs one command; returns the process exit status.
pub fn run(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Command::Validate { root } => {
            let report = cmd_validate(&root)?;
            print_json(&report)?;
            Ok(if report.issues.is_empty() { 0 } else { EXIT_PARTIAL })
        }
        Command::Generate {
            root,
            out,
            config,
            preset,
            backend,
            workers,
            resume,
            dump_conditions,
            frames,
        } => {
            let opts = GenerateOptions {
                config: load_config(config.as_deref())?,
                root,
                out,
                preset,
                workers,
                resume,
                dump_conditions,
                frames,
            };
            let backend = backend.connect()?;
            let manifest = cmd_generate(&opts, backend.as_ref())?;
            Ok(if manifest.succeeded() { 0 } else { EXIT_PARTIAL })
        }
        Command::Fid {
            set_a,
            set_b,
            backend,
            crop_size,
            cache_dir,
            a_source_only,
            b_source_only,
            out,
        } => {
            let opts = FidOptions {
                a: image_set(set_a, a_source_only),
                b: image_set(set_b, b_source_only),
                crop_size,
                cache_dir,
            };
            let report = cmd_fid(&opts, backend.connect()?.as_ref())?;
            if let Some(path) = out {
                genb_core::dataio::write_atomic(&path, &serde_json::to_vec_pretty(&report)?)?;
            }
            print_json(&report)?;
            Ok(0)
        }
        Command::ContactSheet {
            before,
            after,
            out,
            thumb_width,
        } => {
            let rows = cmd_contact_sheet(&before, &after, &out, thumb_width)?;
            print_json(&serde_json::json!({"rows": rows, "out": out}))?;
            Ok(0)
        }
        Command::Fixture { out, frames } => {
            let ids = genb_core::fixture::write_dataset(&out, frames)?;
            print_json(&serde_json::json!({"root": out, "frames": ids}))?;
            Ok(0)
        }
        Command::ServeMock { addr, max_in_flight } => {
            let handle = serve(Arc::new(MockBackend::default()), &addr, ServerOptions { max_in_flight })?;
            print_json(&serde_json::json!({"url": handle.url()}))?;
            handle.join();
            Ok(0)
        }
    }
}
