//! Output directories, run manifests, seeds, input expansion and configuration assembly.

use std::fs;
use std::path::{Path, PathBuf};

use ept_core::graph::read_shard;
use ept_core::molio::{parse_pdb_subset, parse_sdf_subset, parse_xyz_frames};
use ept_core::{MolGraph, RawStructure, RunConfig};
use serde::Serialize;

use crate::args::{ConfigArgs, OutArgs};
use crate::failure::{data, usage, Classify, Result};

pub const MANIFEST: &str = "manifest.toml";
pub const SEED_ENV: &str = "EPT_SEED";

/// Seed precedence: flag, then `EPT_SEED`, then the configured value.
pub fn resolve_seed(flag: Option<u64>, configured: u64) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(std::env::VarError::NotPresent) => Ok(configured),
        Err(e) => Err(usage(format!("{SEED_ENV}: {e}"))),
    }
}

/// Prepares `out` for a run that owns the entries matched by `owns`.
///
/// Existing owned entries (or a manifest) are an error unless `overwrite` is set, in which case
/// they are removed so the run starts from a clean slate. Foreign files are never touched.
pub fn prepare(out: &OutArgs, owns: impl Fn(&str) -> bool, keep_existing: bool) -> Result<()> {
    fs::create_dir_all(&out.out).data_err(format!("creating {}", out.out.display()))?;
    if keep_existing {
        return Ok(());
    }
    let mut existing = Vec::new();
    for entry in fs::read_dir(&out.out).data_err(format!("reading {}", out.out.display()))? {
        let entry = entry.data_err("listing output directory")?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name == MANIFEST || owns(&name) {
            existing.push(entry.path());
        }
    }
    if existing.is_empty() {
        return Ok(());
    }
    if !out.overwrite {
        existing.sort();
        return Err(usage(format!(
            "{} already holds outputs ({}); pass --overwrite to replace them",
            out.out.display(),
            existing.iter().map(|p| p.file_name().unwrap_or_default().to_string_lossy()).collect::<Vec<_>>().join(", ")
        )));
    }
    for p in existing {
        fs::remove_file(&p).data_err(format!("removing {}", p.display()))?;
    }
    Ok(())
}

/// What a run was asked to do, written next to its outputs.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub args: Vec<String>,
    pub inputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<RunConfig>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, inputs: &[PathBuf]) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            args: std::env::args().skip(1).collect(),
            inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
            config_hash: None,
            config: None,
        }
    }

    pub fn with_config(mut self, cfg: &RunConfig) -> Self {
        self.config_hash = Some(cfg.hash().iter().map(|b| format!("{b:02x}")).collect());
        self.config = Some(cfg.clone());
        self
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = toml::to_string(self).data_err("serializing manifest")?;
        let path = dir.join(MANIFEST);
        fs::write(&path, text).data_err(format!("writing {}", path.display()))
    }
}

/// Expands each pattern; literal paths that exist are taken as they are. Sorted, deduplicated.
pub fn expand(patterns: &[String]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in patterns {
        let matches = glob::glob(p).usage_err(format!("bad glob pattern {p:?}"))?;
        let before = out.len();
        for m in matches {
            out.push(m.data_err(format!("expanding {p:?}"))?);
        }
        if out.len() == before && Path::new(p).exists() {
            out.push(PathBuf::from(p));
        }
    }
    out.sort();
    out.dedup();
    Ok(out)
}

/// Structures in one file; XYZ files may hold several frames.
pub fn read_structures(path: &Path) -> std::result::Result<Vec<RawStructure>, String> {
    let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let parsed = match ext.as_str() {
        "xyz" => parse_xyz_frames(&text).map(|f| f.into_iter().map(RawStructure::Molecule).collect()),
        "sdf" | "mol" => parse_sdf_subset(&text).map(|m| vec![RawStructure::Molecule(m)]),
        "pdb" => parse_pdb_subset(&text).map(|p| vec![RawStructure::Protein(p)]),
        _ => return Err(format!("unsupported extension {ext:?}; expected xyz, sdf, mol or pdb")),
    };
    parsed.map_err(|e| e.to_string())
}

/// Every graph of every shard matched by `patterns`, in path order.
pub fn load_shards(patterns: &[String]) -> Result<(Vec<PathBuf>, Vec<MolGraph>)> {
    let paths = expand(patterns)?;
    if paths.is_empty() {
        return Err(data("no inputs: no shard file matches the given patterns"));
    }
    let mut graphs = Vec::new();
    for p in &paths {
        let f = fs::File::open(p).data_err(format!("opening {}", p.display()))?;
        graphs.extend(read_shard(std::io::BufReader::new(f)).data_err(format!("reading shard {}", p.display()))?);
    }
    if graphs.is_empty() {
        return Err(data("the shards hold no graphs"));
    }
    Ok((paths, graphs))
}

/// Config file (or profile defaults), then flag overrides, then the seed rules; validated.
pub fn build_config(a: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).usage_err(format!("reading config {}", path.display()))?;
            RunConfig::from_toml(&text).usage_err(format!("config {}", path.display()))?
        }
        None => RunConfig { model: a.profile.model(), ..RunConfig::default() },
    };
    let t = &mut cfg.train;
    macro_rules! set {
        ($($field:ident),*) => {$( if let Some(v) = a.$field { t.$field = v; } )*};
    }
    set!(lr, min_lr, epochs, max_vertices, sigma_t, sigma_r, mode, lambda);
    if a.max_steps.is_some() {
        t.max_steps = a.max_steps;
    }
    t.seed = resolve_seed(a.seed, t.seed)?;
    cfg.validate().usage_err("invalid configuration")?;
    Ok(cfg)
}
