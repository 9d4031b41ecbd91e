use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use slatefem_cli::config::{resolve, timings_path, FileConfig, Overrides, Settings};
use slatefem_cli::study::{export_solution, run_convergence_with, run_solver_compare, write_solution_vtk};

#[derive(Parser)]
#[command(name = "slatefem", version, about = "Hybridized mixed and LDG-H convergence studies on the unit square")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Errors and convergence rates over a sequence of meshes.
    Converge(Flags),
    /// Direct, hybridization and static-condensation solves side by side.
    Compare(Flags),
    /// Solve on one mesh (the last of --sizes) and write a VTK file.
    Export(Flags),
}

#[derive(Args)]
struct Flags {
    /// TOML file with default settings; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// mixed-hybrid, ldgh or cg-primal.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    degree: Option<usize>,
    /// LDG-H stabilization: a number or "h".
    #[arg(long)]
    tau: Option<String>,
    /// Comma-separated cells per side, e.g. 8,16,32.
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    /// Outer Krylov relative tolerance.
    #[arg(long)]
    rtol: Option<f64>,
    #[arg(long, value_parser = ["none", "jacobi", "exact"])]
    inner_pc: Option<String>,
    /// sin-sin or exp-sin.
    #[arg(long)]
    problem: Option<String>,
    /// Impose the flux on the x = 0 side instead of the pressure.
    #[arg(long)]
    neumann_left: bool,
    /// Degree of the multiplier in scalar post-processing.
    #[arg(long)]
    multiplier_degree: Option<usize>,
    /// Inner-solver option KEY=VALUE (repeatable).
    #[arg(long = "solver-option")]
    solver_options: Vec<String>,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    vtk: Option<PathBuf>,
    /// Run on a single thread for bit-reproducible output.
    #[arg(long)]
    serial: bool,
}

impl Flags {
    fn settings(&self) -> anyhow::Result<Settings> {
        let file = match &self.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let cli = Overrides {
            method: self.method.clone(),
            degree: self.degree,
            tau: self.tau.clone(),
            sizes: self.sizes.clone(),
            rtol: self.rtol,
            inner_pc: self.inner_pc.clone(),
            problem: self.problem.clone(),
            neumann_left: self.neumann_left,
            multiplier_degree: self.multiplier_degree,
            csv: self.csv.clone(),
            vtk: self.vtk.clone(),
            serial: self.serial,
            solver_options: self.solver_options.clone(),
        };
        Ok(resolve(&file, &cli)?)
    }
}

fn emit(csv: Option<&PathBuf>, text: &str) -> anyhow::Result<()> {
    match csv {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn converge(s: &Settings) -> anyhow::Result<bool> {
    let last = *s.spec.sizes.last().context("no mesh sizes")?;
    let report = run_convergence_with(&s.spec, |sol| match &s.vtk {
        Some(path) if sol.n == last => write_solution_vtk(sol, path),
        _ => Ok(()),
    })?;
    emit(s.csv.as_ref(), &report.to_csv())?;
    if let Some(p) = &s.csv {
        let tp = timings_path(p);
        std::fs::write(&tp, report.timings_csv()).with_context(|| format!("writing {}", tp.display()))?;
    }
    Ok(report.rows.iter().all(|r| r.converged))
}

fn compare(s: &Settings) -> anyhow::Result<bool> {
    let report = run_solver_compare(&s.spec)?;
    emit(s.csv.as_ref(), &report.to_csv())?;
    Ok(report.rows.iter().all(|r| r.converged))
}

fn export(s: &Settings) -> anyhow::Result<bool> {
    let Some(path) = &s.vtk else { bail!("export needs --vtk PATH") };
    let n = *s.spec.sizes.last().context("no mesh sizes")?;
    export_solution(&s.spec, n, path)?;
    Ok(true)
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let (flags, job): (&Flags, fn(&Settings) -> anyhow::Result<bool>) = match &cli.command {
        Command::Converge(f) => (f, converge),
        Command::Compare(f) => (f, compare),
        Command::Export(f) => (f, export),
    };
    let settings = flags.settings()?;
    if settings.serial {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build()?;
        pool.install(|| job(&settings))
    } else {
        job(&settings)
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("warning: some solves did not converge (see the converged column)");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
