//! Study settings from command-line flags and an optional TOML file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use slatefem::precon::InnerSolve;
use slatefem::solvers::PcKind;
use slatefem::{Error, Result};

use crate::study::{SolverConfig, StudySpec, Tau};

/// `tau` may be written as a number or as the string `"h"`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum TauValue {
    Number(f64),
    Text(String),
}

/// Settings accepted in a config file. Every key is optional; command-line
/// flags take precedence.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub method: Option<String>,
    pub degree: Option<usize>,
    pub tau: Option<TauValue>,
    pub sizes: Option<Vec<usize>>,
    pub rtol: Option<f64>,
    pub restart: Option<usize>,
    pub maxiter: Option<usize>,
    pub inner_pc: Option<String>,
    pub problem: Option<String>,
    pub neumann_left: Option<bool>,
    pub multiplier_degree: Option<usize>,
    pub csv: Option<PathBuf>,
    pub vtk: Option<PathBuf>,
    pub serial: Option<bool>,
    /// Flat inner-solver namespace (`ksp_type`, `ksp_rtol`, `ksp_atol`, `ksp_max_it`, `pc_type`).
    #[serde(default)]
    pub solver_options: BTreeMap<String, toml::Value>,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

/// Values given on the command line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub method: Option<String>,
    pub degree: Option<usize>,
    pub tau: Option<String>,
    pub sizes: Option<Vec<usize>>,
    pub rtol: Option<f64>,
    pub inner_pc: Option<String>,
    pub problem: Option<String>,
    pub neumann_left: bool,
    pub multiplier_degree: Option<usize>,
    pub csv: Option<PathBuf>,
    pub vtk: Option<PathBuf>,
    pub serial: bool,
    /// `KEY=VALUE` pairs for the inner-solver namespace.
    pub solver_options: Vec<String>,
}

/// A resolved study plus output locations.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub spec: StudySpec,
    pub csv: Option<PathBuf>,
    pub vtk: Option<PathBuf>,
    pub serial: bool,
}

fn option_text(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Merges defaults, the config file and command-line flags, in increasing
/// precedence.
pub fn resolve(file: &FileConfig, cli: &Overrides) -> Result<Settings> {
    let mut spec = StudySpec::default();
    if let Some(m) = cli.method.as_ref().or(file.method.as_ref()) {
        spec.method = m.parse()?;
    }
    if let Some(k) = cli.degree.or(file.degree) {
        spec.degree = k;
    }
    spec.tau = match (&cli.tau, &file.tau) {
        (Some(t), _) => t.parse()?,
        (None, Some(TauValue::Number(t))) => Tau::Const(*t),
        (None, Some(TauValue::Text(t))) => t.parse()?,
        (None, None) => Tau::default(),
    };
    if let Some(s) = cli.sizes.as_ref().or(file.sizes.as_ref()) {
        spec.sizes = s.clone();
    }
    if let Some(p) = cli.problem.as_ref().or(file.problem.as_ref()) {
        spec.problem = p.parse()?;
    }
    spec.neumann_left = cli.neumann_left || file.neumann_left.unwrap_or(false);
    if let Some(l) = cli.multiplier_degree.or(file.multiplier_degree) {
        spec.multiplier_degree = l;
    }

    let mut opts: BTreeMap<String, String> = file.solver_options.iter().map(|(k, v)| (k.clone(), option_text(v))).collect();
    for kv in &cli.solver_options {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::InvalidConfig(format!("solver option {kv:?} is not KEY=VALUE")))?;
        opts.insert(k.trim().to_string(), v.trim().to_string());
    }
    let mut inner = InnerSolve::from_options(&opts)?;
    if let Some(pc) = cli.inner_pc.as_ref().or(file.inner_pc.as_ref()) {
        inner.pc = pc.parse::<PcKind>()?;
    }
    let defaults = SolverConfig::default();
    spec.solver = SolverConfig {
        rtol: cli.rtol.or(file.rtol).unwrap_or(defaults.rtol),
        restart: file.restart.unwrap_or(defaults.restart),
        maxiter: file.maxiter.unwrap_or(defaults.maxiter),
        inner,
    };
    Ok(Settings {
        spec,
        csv: cli.csv.clone().or_else(|| file.csv.clone()),
        vtk: cli.vtk.clone().or_else(|| file.vtk.clone()),
        serial: cli.serial || file.serial.unwrap_or(false),
    })
}

/// Stage-timing CSV written next to `csv`: `out.csv` gives `out.timings.csv`.
pub fn timings_path(csv: &Path) -> PathBuf {
    let stem = csv.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    csv.with_file_name(format!("{stem}.timings.csv"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use slatefem::forms::Method;

    #[test]
    fn flags_override_file() {
        let file = FileConfig::parse(
            r#"
            method = "ldgh"
            degree = 2
            tau = "h"
            sizes = [2, 4]
            rtol = 1e-6
            [solver_options]
            ksp_rtol = 1e-9
            pc_type = "exact"
            "#,
        )
        .unwrap();
        let s = resolve(&file, &Overrides::default()).unwrap();
        assert_eq!(s.spec.method, Method::Ldgh);
        assert_eq!(s.spec.tau, Tau::MeshSize);
        assert_eq!(s.spec.solver.inner.pc, PcKind::Exact);
        assert_eq!(s.spec.solver.inner.krylov.rtol, 1e-9);
        assert_eq!(s.spec.solver.rtol, 1e-6);

        let cli = Overrides { degree: Some(1), tau: Some("1".into()), inner_pc: Some("jacobi".into()), ..Default::default() };
        let s = resolve(&file, &cli).unwrap();
        assert_eq!(s.spec.degree, 1);
        assert_eq!(s.spec.tau, Tau::Const(1.0));
        assert_eq!(s.spec.solver.inner.pc, PcKind::Jacobi);
    }

    #[test]
    fn numeric_tau_and_unknown_keys() {
        let file = FileConfig::parse("tau = 0.5").unwrap();
        assert_eq!(resolve(&file, &Overrides::default()).unwrap().spec.tau, Tau::Const(0.5));
        assert!(FileConfig::parse("mesh = 3").is_err());
        let bad = FileConfig::parse("[solver_options]\nksp_tol = 1").unwrap();
        assert!(resolve(&bad, &Overrides::default()).is_err());
    }

    #[test]
    fn timings_sidecar_name() {
        assert_eq!(timings_path(Path::new("out/run.csv")), PathBuf::from("out/run.timings.csv"));
    }
}
