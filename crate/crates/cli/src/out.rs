//! Artifact layout, writers and the run manifest.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use surge_core::numfmt::{g9, round9};

use crate::config::RunConfig;

pub const MANIFEST: &str = "manifest.json";

/// Paths of every artifact under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: PathBuf) -> Self {
        Self { root }
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn dataset(&self) -> PathBuf {
        self.file("dataset")
    }

    pub fn surges(&self) -> PathBuf {
        self.file("surges.csv")
    }

    pub fn model(&self) -> PathBuf {
        self.file("model.bin")
    }

    pub fn factors(&self) -> PathBuf {
        self.file("mitigation_factors.csv")
    }
}

/// Fail with a message naming the missing upstream artifact.
pub fn require(path: &Path, stage: &str) -> Result<()> {
    if !path.exists() {
        bail!(
            "missing upstream artifact {} (produced by `surge {stage}`)",
            path.display()
        );
    }
    Ok(())
}

fn round_floats(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(x) = n.as_f64() {
                if let Some(r) = serde_json::Number::from_f64(round9(x)) {
                    *n = r;
                }
            }
        }
        Value::Array(a) => a.iter_mut().for_each(round_floats),
        Value::Object(o) => o.values_mut().for_each(round_floats),
        _ => {}
    }
}

/// Pretty JSON with floats rounded to 9 significant digits.
pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut v = serde_json::to_value(value)?;
    round_floats(&mut v);
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    std::fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

pub fn f(x: f64) -> String {
    g9(x)
}

pub fn opt(x: Option<f64>) -> String {
    x.map(g9).unwrap_or_default()
}

pub fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    surge_core::synth::io::write_rows(path, header, rows)?;
    Ok(())
}

#[derive(Serialize)]
struct Artifact {
    path: String,
    bytes: u64,
    sha256: String,
}

#[derive(Serialize)]
struct Seeds {
    synth: u64,
    bootstrap: u64,
    forest: u64,
    model: u64,
    train: u64,
    grid: u64,
    scenario: u64,
    ev_restart: u64,
}

#[derive(Serialize)]
struct Manifest {
    tool: &'static str,
    version: &'static str,
    command: String,
    config_hash: String,
    seeds: Seeds,
    /// Seconds since the Unix epoch; the only non-reproducible field.
    created_unix: u64,
    artifacts: Vec<Artifact>,
}

fn collect(dir: &Path, root: &Path, out: &mut Vec<Artifact>) -> Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            collect(&p, root, out)?;
            continue;
        }
        let rel = p.strip_prefix(root).expect("under root").to_string_lossy().replace('\\', "/");
        if rel == MANIFEST {
            continue;
        }
        let bytes = std::fs::read(&p).with_context(|| format!("reading {}", p.display()))?;
        out.push(Artifact {
            path: rel,
            bytes: bytes.len() as u64,
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
    }
    Ok(())
}

/// Record the resolved config and hash every artifact under the root.
pub fn write_manifest(layout: &Layout, cfg: &RunConfig, command: &str) -> Result<()> {
    let mut canonical = cfg.clone();
    canonical.output_dir = PathBuf::new();
    canonical.threads = None;
    write_json(&layout.file("config.json"), &canonical)?;
    let mut artifacts = Vec::new();
    collect(&layout.root, &layout.root, &mut artifacts)?;
    let created_unix = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let m = Manifest {
        tool: "surge",
        version: env!("CARGO_PKG_VERSION"),
        command: command.to_string(),
        config_hash: cfg.hash(),
        seeds: Seeds {
            synth: cfg.seed,
            bootstrap: cfg.empirics.bootstrap.seed,
            forest: cfg.causal.forest.seed,
            model: cfg.estimator.model.seed,
            train: cfg.estimator.train.seed,
            grid: cfg.projection.grid.seed,
            scenario: cfg.projection.scenario.seed,
            ev_restart: cfg.mitigation.ev.seed,
        },
        created_unix,
        artifacts,
    };
    write_json(&layout.file(MANIFEST), &m)
}
