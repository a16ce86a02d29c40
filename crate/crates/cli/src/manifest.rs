//! Study manifests and command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Deserialize;
use varplan_core::ph::PhConfig;
use varplan_core::study::CandidateMode;

use crate::CliError;

/// `full`, `reduced`, a path to a bus list, or an inline list of buses.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum CandidateSpec {
    Named(String),
    Buses(Vec<usize>),
}

impl Default for CandidateSpec {
    fn default() -> Self {
        CandidateSpec::Named("full".into())
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Manifest {
    pub case: Option<PathBuf>,
    pub candidates: CandidateSpec,
    pub out: Option<PathBuf>,
    /// Write wall-clock seconds into the CSV trace.
    pub timing: Option<bool>,
    pub ph: PhConfig,
}

/// Flags shared by `run` and `sweep`; each overrides the manifest.
#[derive(Debug, Clone, Default, Args)]
pub struct StudyArgs {
    /// TOML manifest; relative paths inside it resolve against its folder.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Case file (JSON).
    #[arg(long)]
    pub case: Option<PathBuf>,
    /// Penalty multiplier K in rho = K * I.
    #[arg(long)]
    pub k: Option<f64>,
    #[arg(long)]
    pub step_r: Option<f64>,
    #[arg(long)]
    pub step_c: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub gap_tol: Option<f64>,
    /// full, reduced, or a file listing candidate bus ids.
    #[arg(long)]
    pub candidates: Option<String>,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Leave the seconds column at zero so identical runs give identical traces.
    #[arg(long)]
    pub no_timing: bool,
}

/// Everything a single run needs, with paths resolved.
#[derive(Debug, Clone)]
pub struct Study {
    pub case: PathBuf,
    pub candidates: CandidateMode,
    pub out: PathBuf,
    pub timing: bool,
    pub config: PhConfig,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

pub fn load_manifest(path: &Path) -> Result<Manifest, CliError> {
    let text = fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    let mut m: Manifest = toml::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    m.case = m.case.map(|p| dir.join(p));
    m.out = m.out.map(|p| dir.join(p));
    if let CandidateSpec::Named(name) = &m.candidates {
        if name != "full" && name != "reduced" {
            m.candidates = CandidateSpec::Named(dir.join(name).to_string_lossy().into_owned());
        }
    }
    Ok(m)
}

fn read_bus_list(path: &Path) -> Result<Vec<usize>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    let buses = text
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<usize>().map_err(|_| config_err(format!("{}: bad bus id {t:?}", path.display()))))
        .collect::<Result<Vec<_>, _>>()?;
    if buses.is_empty() {
        return Err(config_err(format!("{}: no bus ids", path.display())));
    }
    Ok(buses)
}

fn candidate_mode(spec: &CandidateSpec) -> Result<CandidateMode, CliError> {
    match spec {
        CandidateSpec::Named(n) if n == "full" => Ok(CandidateMode::Full),
        CandidateSpec::Named(n) if n == "reduced" => Ok(CandidateMode::Reduced),
        CandidateSpec::Named(path) => Ok(CandidateMode::Buses(read_bus_list(Path::new(path))?)),
        CandidateSpec::Buses(b) => Ok(CandidateMode::Buses(b.clone())),
    }
}

impl StudyArgs {
    pub fn resolve(&self) -> Result<Study, CliError> {
        let mut m = match &self.manifest {
            Some(p) => load_manifest(p)?,
            None => Manifest::default(),
        };
        if let Some(c) = &self.case {
            m.case = Some(c.clone());
        }
        if let Some(c) = &self.candidates {
            m.candidates = CandidateSpec::Named(c.clone());
        }
        if let Some(o) = &self.out {
            m.out = Some(o.clone());
        }
        let ph = &mut m.ph;
        if let Some(v) = self.k {
            ph.penalty_k = v;
        }
        if let Some(v) = self.step_r {
            ph.step_r = v;
        }
        if let Some(v) = self.step_c {
            ph.step_c = v;
        }
        if let Some(v) = self.max_iter {
            ph.max_iterations = v;
        }
        if let Some(v) = self.gap_tol {
            ph.gap_tolerance = v;
        }
        if let Some(v) = self.jobs {
            ph.jobs = v;
        }
        ph.validate().map_err(|e| config_err(e.to_string()))?;
        Ok(Study {
            case: m.case.ok_or_else(|| config_err("no case given (--case or manifest `case`)"))?,
            candidates: candidate_mode(&m.candidates)?,
            out: m.out.unwrap_or_else(|| PathBuf::from("varplan-out")),
            timing: !self.no_timing && m.timing.unwrap_or(true),
            config: m.ph,
        })
    }
}
