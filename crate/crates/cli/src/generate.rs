//! `genb generate`: upgrade every frame of a dataset.

use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use genb_core::backend::{BackendInfo, DenoiserBackend};
use genb_core::dataio::{
    list_frames, read_frame, read_provenance, write_atomic, write_frame, PartStatus,
};
use genb_core::synthesis::{process_frame, GenerationConfig, Preset, RunContext};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::logging;

pub const MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameStatus {
    Pending,
    Done,
    Failed,
    /// A complete output with the same config hash already existed.
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub frame_id: String,
    pub status: FrameStatus,
    pub seconds: f64,
    pub parts_done: usize,
    pub parts_failed: usize,
    pub parts_skipped: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl FrameEntry {
    fn new(frame_id: &str, status: FrameStatus) -> Self {
        Self {
            frame_id: frame_id.to_string(),
            status,
            seconds: 0.0,
            parts_done: 0,
            parts_failed: 0,
            parts_skipped: 0,
            error: None,
        }
    }
}

/// Written to `<out>/run_manifest.json` when the run starts (all frames
/// pending) and again when it ends. Every selected frame appears once.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: GenerationConfig,
    pub config_hash: String,
    pub backend: BackendInfo,
    pub schedule: String,
    pub workers: usize,
    pub started_unix: f64,
    pub elapsed_seconds: f64,
    pub frames: Vec<FrameEntry>,
}

impl RunManifest {
    pub fn count(&self, status: FrameStatus) -> usize {
        self.frames.iter().filter(|f| f.status == status).count()
    }

    pub fn parts_failed(&self) -> usize {
        self.frames.iter().map(|f| f.parts_failed).sum()
    }

    /// No frame and no part failed.
    pub fn succeeded(&self) -> bool {
        self.count(FrameStatus::Failed) == 0 && self.parts_failed() == 0
    }

    pub fn read(out: &Path) -> anyhow::Result<Self> {
        let path = out.join(MANIFEST_FILE);
        let bytes = std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
    }

    fn write(&self, out: &Path) -> anyhow::Result<()> {
        let bytes = serde_json::to_vec_pretty(self)?;
        write_atomic(&out.join(MANIFEST_FILE), &bytes)?;
        Ok(())
    }
}

pub struct GenerateOptions {
    pub root: PathBuf,
    pub out: PathBuf,
    pub config: GenerationConfig,
    pub preset: Option<Preset>,
    pub workers: usize,
    pub resume: bool,
    pub dump_conditions: bool,
    pub frames: Option<String>,
}

pub fn load_config(path: Option<&Path>) -> anyhow::Result<GenerationConfig> {
    let Some(path) = path else {
        return Ok(GenerationConfig::default());
    };
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn select_frames(root: &Path, pattern: Option<&str>) -> anyhow::Result<Vec<String>> {
    let all = list_frames(root)?;
    let Some(p) = pattern else { return Ok(all) };
    let pat = glob::Pattern::new(p).with_context(|| format!("bad --frames pattern {p:?}"))?;
    Ok(all.into_iter().filter(|f| pat.matches(f)).collect())
}

/// Output present, written last, and produced by the same effective config.
fn is_complete(out: &Path, frame_id: &str, config_hash: &str) -> bool {
    let dir = out.join(frame_id);
    dir.join("gen_rgb.png").is_file()
        && read_provenance(&dir).is_ok_and(|p| p.config_hash == config_hash)
}

/// Temp files orphaned by a killed run.
fn remove_stale_temps(out: &Path) -> anyhow::Result<()> {
    let pattern = out.join("**").join(".*.tmp");
    for path in glob::glob(&pattern.to_string_lossy())?.flatten() {
        std::fs::remove_file(&path).with_context(|| format!("removing {}", path.display()))?;
    }
    Ok(())
}

fn run_frame(
    opts: &GenerateOptions,
    run: &RunContext,
    backend: &dyn DenoiserBackend,
    frame_id: &str,
) -> FrameEntry {
    let t0 = Instant::now();
    let mut entry = FrameEntry::new(frame_id, FrameStatus::Done);
    let dump = opts.dump_conditions.then_some(opts.out.as_path());
    let result = read_frame(&opts.root, frame_id)
        .map_err(anyhow::Error::from)
        .and_then(|frame| {
            let output = process_frame(&frame, run, backend, dump)?;
            write_frame(&opts.out, &frame, &output.rgb, &output.provenance)?;
            Ok(output.provenance)
        });
    match result {
        Ok(prov) => {
            for p in &prov.parts {
                match p.status {
                    PartStatus::Done => entry.parts_done += 1,
                    PartStatus::Failed => entry.parts_failed += 1,
                    PartStatus::Skipped => entry.parts_skipped += 1,
                }
            }
        }
        Err(e) => {
            entry.status = FrameStatus::Failed;
            entry.error = Some(format!("{e:#}"));
        }
    }
    entry.seconds = t0.elapsed().as_secs_f64();
    entry
}

pub fn cmd_generate(opts: &GenerateOptions, backend: &dyn DenoiserBackend) -> anyhow::Result<RunManifest> {
    if opts.workers == 0 {
        bail!("--workers must be at least 1");
    }
    let same_dir = match (opts.root.canonicalize(), opts.out.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    };
    if same_dir {
        bail!("output directory must differ from the input root");
    }
    let mut config = opts.config.clone();
    if let Some(p) = opts.preset {
        config.preset = p;
    }
    let run = RunContext::negotiate(&config, backend)?;
    let frame_ids = select_frames(&opts.root, opts.frames.as_deref())?;
    if frame_ids.is_empty() {
        bail!("no frames selected under {}", opts.root.display());
    }
    std::fs::create_dir_all(&opts.out).with_context(|| format!("creating {}", opts.out.display()))?;
    if opts.resume {
        remove_stale_temps(&opts.out)?;
    }

    let started = Instant::now();
    let mut manifest = RunManifest {
        config: run.config.clone(),
        config_hash: run.config_hash.clone(),
        backend: backend.info()?,
        schedule: run.schedule_description.clone(),
        workers: opts.workers,
        started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64()),
        elapsed_seconds: 0.0,
        frames: frame_ids.iter().map(|f| FrameEntry::new(f, FrameStatus::Pending)).collect(),
    };
    manifest.write(&opts.out)?;

    let (todo, done): (Vec<usize>, Vec<usize>) = (0..frame_ids.len())
        .partition(|&i| !(opts.resume && is_complete(&opts.out, &frame_ids[i], &run.config_hash)));
    for i in done {
        manifest.frames[i].status = FrameStatus::Skipped;
        logging::event(json!({"event": "frame", "frame": frame_ids[i], "status": FrameStatus::Skipped}));
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .thread_name(|i| format!("genb-worker-{i}"))
        .build()?;
    let (tx, rx) = mpsc::channel::<(usize, FrameEntry)>();
    std::thread::scope(|s| {
        s.spawn(|| {
            pool.install(|| {
                todo.par_iter().for_each_with(tx, |tx, &i| {
                    let entry = run_frame(opts, &run, backend, &frame_ids[i]);
                    let _ = tx.send((i, entry));
                });
            });
        });
        // The manifest has exactly one writer: this thread.
        for (i, entry) in rx {
            logging::event(json!({
                "event": "frame",
                "frame": entry.frame_id,
                "status": entry.status,
                "seconds": entry.seconds,
                "parts_done": entry.parts_done,
                "parts_failed": entry.parts_failed,
                "parts_skipped": entry.parts_skipped,
                "error": entry.error,
            }));
            manifest.frames[i] = entry;
        }
    });

    manifest.elapsed_seconds = started.elapsed().as_secs_f64();
    manifest.write(&opts.out)?;
    logging::event(json!({
        "event": "run",
        "frames": manifest.frames.len(),
        "done": manifest.count(FrameStatus::Done),
        "failed": manifest.count(FrameStatus::Failed),
        "skipped": manifest.count(FrameStatus::Skipped),
        "parts_failed": manifest.parts_failed(),
        "seconds": manifest.elapsed_seconds,
    }));
    Ok(manifest)
}
