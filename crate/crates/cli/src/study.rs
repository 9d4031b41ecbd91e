//! Convergence studies and solver comparisons over a sequence of meshes.

use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use slatefem::fem::{eval_on_cell, l2_error_div, l2_error_scalar, l2_error_vector, project_trace, quadrature, Function, QuadratureKind};
use slatefem::forms::{conforming_mixed_forms, model_problem_forms, neumann_flux_dofs, primal_forms, Field, Method, ProblemData};
use slatefem::mesh::{build_unit_square, BoundaryLabel, Mesh};
use slatefem::postprocess::{flux_pp, scalar_pp, ScalarPpConfig};
use slatefem::precon::{BrokenTransfer, FieldSplit, HybridizationPc, InnerSolve, InnerStats, Scpc};
use slatefem::slate::{assemble_system, assemble_vector, DirichletBC, SlateExpr};
use slatefem::solvers::{krylov_solve, solve_assembled, sparse_direct_solve, CsrMatrix, KrylovConfig, SolveReport};
use slatefem::vtk::sci;
use slatefem::{Error, Result};

use crate::problem::{ManufacturedProblem, ProblemKind};

/// LDG-H stabilization: a constant or the mesh size `h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tau {
    Const(f64),
    MeshSize,
}

impl Tau {
    pub fn value(&self, h: f64) -> f64 {
        match self {
            Tau::Const(t) => *t,
            Tau::MeshSize => h,
        }
    }
}

impl Default for Tau {
    fn default() -> Self {
        Tau::Const(1.0)
    }
}

impl FromStr for Tau {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "h" {
            return Ok(Tau::MeshSize);
        }
        s.parse::<f64>().map(Tau::Const).map_err(|_| Error::InvalidConfig(format!("tau must be a number or \"h\", got {s:?}")))
    }
}

impl fmt::Display for Tau {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tau::Const(t) => write!(f, "{t}"),
            Tau::MeshSize => f.write_str("h"),
        }
    }
}

/// Outer Krylov tolerance and the inner (trace) solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub rtol: f64,
    pub restart: usize,
    pub maxiter: usize,
    pub inner: InnerSolve,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { rtol: 1e-8, restart: 30, maxiter: 500, inner: InnerSolve::default() }
    }
}

impl SolverConfig {
    fn outer(&self) -> KrylovConfig {
        KrylovConfig { maxiter: self.maxiter, ..KrylovConfig::fgmres(self.rtol, self.restart) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudySpec {
    pub method: Method,
    pub degree: usize,
    pub tau: Tau,
    pub sizes: Vec<usize>,
    pub problem: ProblemKind,
    /// Label the `x = 0` side Neumann instead of Dirichlet.
    pub neumann_left: bool,
    pub multiplier_degree: usize,
    pub solver: SolverConfig,
}

impl Default for StudySpec {
    fn default() -> Self {
        StudySpec {
            method: Method::MixedHybrid,
            degree: 1,
            tau: Tau::default(),
            sizes: vec![4, 8, 16],
            problem: ProblemKind::default(),
            neumann_left: false,
            multiplier_degree: 0,
            solver: SolverConfig::default(),
        }
    }
}

impl StudySpec {
    /// Full check for a study: at least two strictly increasing sizes.
    pub fn validate(&self) -> Result<()> {
        if self.sizes.len() < 2 {
            return Err(Error::InvalidConfig(format!("need at least 2 mesh sizes for rates, got {:?}", self.sizes)));
        }
        if self.sizes[0] == 0 || self.sizes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig(format!("mesh sizes must be positive and strictly increasing, got {:?}", self.sizes)));
        }
        self.validate_discretization()
    }

    /// Checks everything except the list of mesh sizes.
    pub fn validate_discretization(&self) -> Result<()> {
        let k = self.degree;
        let ok = match self.method {
            Method::MixedHybrid => (1..=2).contains(&k),
            Method::Ldgh => k <= 2,
            Method::CgPrimal => (1..=3).contains(&k),
        };
        if !ok {
            return Err(Error::UnsupportedElement(format!("{} does not support degree {k}", self.method)));
        }
        if let Some(s) = self.scalar_degree() {
            if self.multiplier_degree > s {
                return Err(Error::InvalidConfig(format!("multiplier degree {} exceeds the scalar degree {s}", self.multiplier_degree)));
            }
        }
        if let Tau::Const(t) = self.tau {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::InvalidConfig(format!("tau must be positive, got {t}")));
            }
        }
        self.solver.outer().validate()?;
        self.solver.inner.krylov.validate()
    }

    /// Degree of the discrete scalar, for methods with post-processing.
    fn scalar_degree(&self) -> Option<usize> {
        match self.method {
            Method::MixedHybrid => Some(self.degree - 1),
            Method::Ldgh => Some(self.degree),
            Method::CgPrimal => None,
        }
    }

    pub fn mesh(&self, n: usize) -> Result<Arc<Mesh>> {
        let left = self.neumann_left;
        let m = build_unit_square(n)?
            .mark_boundary(|x| Some(if left && x[0] < 1e-12 { BoundaryLabel::Neumann } else { BoundaryLabel::Dirichlet }))?;
        Ok(Arc::new(m))
    }

    pub fn manufactured(&self) -> ManufacturedProblem {
        ManufacturedProblem::new(self.problem)
    }
}

/// Wall-clock seconds per solver stage.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub assembly: f64,
    /// Local eliminations and assembly of the condensed trace operator.
    pub condensation: f64,
    pub forward_elimination: f64,
    pub trace_solve: f64,
    pub back_substitution: f64,
    pub post_processing: f64,
    pub total: f64,
}

impl StageTimings {
    pub fn stage_sum(&self) -> f64 {
        self.assembly + self.condensation + self.forward_elimination + self.trace_solve + self.back_substitution + self.post_processing
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Errors {
    pub p: f64,
    pub u: f64,
    pub p_star: Option<f64>,
    pub u_star: Option<f64>,
    pub div_u_star: Option<f64>,
}

/// Discrete fields and diagnostics of one solve.
#[derive(Debug, Clone)]
pub struct MeshSolution {
    pub n: usize,
    pub h: f64,
    pub tau: Option<f64>,
    pub ndofs: usize,
    pub trace_dofs: usize,
    pub p: Function,
    pub u: Option<Function>,
    pub lambda: Option<Function>,
    pub p_star: Option<Function>,
    pub u_star: Option<Function>,
    pub errors: Errors,
    pub outer: SolveReport,
    pub inner: Option<InnerStats>,
    pub timings: StageTimings,
}

impl MeshSolution {
    pub fn converged(&self) -> bool {
        self.outer.converged && self.inner.as_ref().is_none_or(|s| s.all_converged)
    }
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

fn dirichlet_trace_dofs(mesh: &Mesh, trace: &slatefem::fem::FunctionSpace) -> Vec<usize> {
    mesh.facets_with_label(BoundaryLabel::Dirichlet).flat_map(|f| trace.facet_dofs(f).to_vec()).collect()
}

/// The assembled 3-field hybridized system with Dirichlet trace rows
/// replaced by identity rows, and its condensation preconditioner.
struct HybridSystem {
    space: slatefem::fem::MixedSpace,
    spaces: Vec<slatefem::fem::FunctionSpace>,
    operator: CsrMatrix,
    rhs: Vec<f64>,
    scpc: Scpc,
    assembly: f64,
}

fn hybrid_system(mesh: &Arc<Mesh>, data: &ProblemData, method: Method, k: usize, inner: InnerSolve) -> Result<HybridSystem> {
    let t = Instant::now();
    let forms = model_problem_forms(mesh, data, method, k)?;
    let space = forms.mixed_space();
    let a = SlateExpr::tensor(&forms.system_operator()?);
    let mut rhs = match forms.system_rhs()? {
        Some(l) => assemble_vector(&SlateExpr::tensor(&l), &[])?,
        None => vec![0.0; space.ndof()],
    };
    let mut assembly = secs(t);
    let trace = &forms.spaces[2];
    let dir = dirichlet_trace_dofs(mesh, trace);
    let scpc = Scpc::new(&a, FieldSplit::new(vec![0, 1], vec![2], 3)?, &dir, inner)?;
    let t = Instant::now();
    let full = scpc.full_bc_dofs();
    let operator = Scpc::constrained_full_operator(&a, &full)?;
    let p0 = data.p0.clone();
    let dir_facets: Vec<usize> = mesh.facets_with_label(BoundaryLabel::Dirichlet).collect();
    let lam0 = project_trace(trace, |x| p0.eval(x)[0], Some(&dir_facets))?;
    for (&d, &tdof) in full.iter().zip(&dir) {
        rhs[d] = lam0.coeffs()[tdof];
    }
    assembly += secs(t);
    Ok(HybridSystem { space, spaces: forms.spaces, operator, rhs, scpc, assembly })
}

/// `|| -kappa grad p_h - u ||` for a continuous scalar.
fn primal_flux_error(p: &Function, pb: &ManufacturedProblem) -> Result<f64> {
    let mesh = p.space().mesh();
    let rule = quadrature(QuadratureKind::Cell, 12)?;
    let mut acc = 0.0;
    for c in 0..mesh.n_cells() {
        let g = mesh.cell_geometry(c)?;
        let (_, grads, _) = eval_on_cell(p, c, &rule.points);
        for (q, (x, w)) in rule.points.iter().zip(&rule.weights).enumerate() {
            let u = pb.u(g.map(*x));
            let d0 = -pb.kappa * grads[2 * q] - u[0];
            let d1 = -pb.kappa * grads[2 * q + 1] - u[1];
            acc += w * g.det_j * (d0 * d0 + d1 * d1);
        }
    }
    Ok(acc.sqrt())
}

/// Solves the manufactured problem on the `n x n` mesh with the method of
/// `spec`, then post-processes and measures errors.
pub fn solve_on_mesh(spec: &StudySpec, n: usize) -> Result<MeshSolution> {
    let start = Instant::now();
    let mesh = spec.mesh(n)?;
    let h = mesh.h();
    let pb = spec.manufactured();
    let tau = spec.tau.value(h);
    let data = pb.data(Field::constant(tau));
    let k = spec.degree;
    let mut timings = StageTimings::default();

    if spec.method == Method::CgPrimal {
        let t = Instant::now();
        let (s, a, l) = primal_forms(&mesh, &data, k)?;
        let bc = cg_dirichlet(&s, &pb)?;
        let (m, b) = assemble_system(&SlateExpr::tensor(&a), &SlateExpr::tensor(&l), &[bc])?;
        timings.assembly = secs(t);
        let cfg = KrylovConfig { maxiter: spec.solver.maxiter.max(10 * s.ndof()), ..KrylovConfig::cg(spec.solver.rtol) };
        let t = Instant::now();
        let (x, outer) = solve_assembled(&m, &b, &cfg, spec.solver.inner.pc)?;
        timings.trace_solve = secs(t);
        let p = Function::from_coeffs(&s, x)?;
        let errors = Errors { p: l2_error_scalar(&p, |x| pb.p(x))?, u: primal_flux_error(&p, &pb)?, ..Default::default() };
        timings.total = secs(start);
        return Ok(MeshSolution {
            n,
            h,
            tau: None,
            ndofs: s.ndof(),
            trace_dofs: 0,
            p,
            u: None,
            lambda: None,
            p_star: None,
            u_star: None,
            errors,
            outer,
            inner: None,
            timings,
        });
    }

    let sys = hybrid_system(&mesh, &data, spec.method, k, spec.solver.inner)?;
    timings.assembly = sys.assembly;
    timings.condensation = sys.scpc.setup_seconds();
    let (x, outer) = krylov_solve(&sys.operator, &sys.rhs, &spec.solver.outer(), Some(&sys.scpc))?;
    let inner = sys.scpc.stats();
    timings.forward_elimination = inner.forward_seconds;
    timings.trace_solve = inner.trace_seconds;
    timings.back_substitution = inner.backsub_seconds;

    let parts = sys.space.split(&x);
    let u = Function::from_coeffs(&sys.spaces[0], parts[0].to_vec())?;
    let p = Function::from_coeffs(&sys.spaces[1], parts[1].to_vec())?;
    let lambda = Function::from_coeffs(&sys.spaces[2], parts[2].to_vec())?;

    let t = Instant::now();
    let p_star = scalar_pp(&u, &p, &data.kappa, ScalarPpConfig { multiplier_degree: spec.multiplier_degree })?;
    let u_star = if spec.method == Method::Ldgh { Some(flux_pp(&u, &p, &lambda, &data.tau)?) } else { None };
    timings.post_processing = secs(t);

    let mut errors = Errors {
        p: l2_error_scalar(&p, |x| pb.p(x))?,
        u: l2_error_vector(&u, |x| pb.u(x))?,
        p_star: Some(l2_error_scalar(&p_star, |x| pb.p(x))?),
        ..Default::default()
    };
    if let Some(us) = &u_star {
        errors.u_star = Some(l2_error_vector(us, |x| pb.u(x))?);
        errors.div_u_star = Some(l2_error_div(us, |x| pb.div_u(x))?);
    }
    timings.total = secs(start);
    Ok(MeshSolution {
        n,
        h,
        tau: (spec.method == Method::Ldgh).then_some(tau),
        ndofs: sys.space.ndof(),
        trace_dofs: sys.spaces[2].ndof(),
        p,
        u: Some(u),
        lambda: Some(lambda),
        p_star: Some(p_star),
        u_star,
        errors,
        outer,
        inner: Some(inner),
        timings,
    })
}

/// Dirichlet data for a CG space: nodal values of `p` at dofs lying on
/// Dirichlet facets.
fn cg_dirichlet(s: &slatefem::fem::FunctionSpace, pb: &ManufacturedProblem) -> Result<DirichletBC> {
    let mesh = s.mesh();
    let coords = slatefem::fem::dof_coordinates(s)?;
    let mut on = vec![false; s.ndof()];
    for f in mesh.facets_with_label(BoundaryLabel::Dirichlet) {
        let [a, b] = mesh.facet_vertices(f);
        let (pa, pb_) = (mesh.vertex_coords()[a], mesh.vertex_coords()[b]);
        let c = mesh.facet_cells(f)[0];
        for &d in s.cell_dofs(c) {
            let x = coords[d];
            let cross = (pb_[0] - pa[0]) * (x[1] - pa[1]) - (pb_[1] - pa[1]) * (x[0] - pa[0]);
            if cross.abs() < 1e-12 {
                on[d] = true;
            }
        }
    }
    let dofs: Vec<usize> = (0..s.ndof()).filter(|&d| on[d]).collect();
    let values = dofs.iter().map(|&d| pb.p(coords[d])).collect();
    DirichletBC::new(dofs, values)
}

/// One CSV row of a convergence study.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub n: usize,
    pub h: f64,
    pub tau: Option<f64>,
    pub ndofs: usize,
    pub trace_dofs: usize,
    pub errors: Errors,
    pub rates: [Option<f64>; 5],
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub converged: bool,
    pub residual: f64,
    pub timings: StageTimings,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub method: Method,
    pub degree: usize,
    pub rows: Vec<ConvergenceRow>,
}

/// Column order of the convergence CSV.
pub const CONVERGENCE_HEADER: &str = "method,degree,tau,n,h,ndofs,trace_dofs,err_p,rate_p,err_u,rate_u,err_pstar,rate_pstar,err_ustar,rate_ustar,err_div_ustar,rate_div_ustar,outer_iterations,inner_iterations,converged,residual";

/// Column order of the stage-timing CSV.
pub const TIMINGS_HEADER: &str =
    "method,degree,n,assembly,condensation,forward_elimination,trace_solve,back_substitution,post_processing,total";

fn opt(v: Option<f64>) -> String {
    v.map(sci).unwrap_or_default()
}

fn rate(prev: Option<f64>, cur: Option<f64>, h_prev: f64, h: f64) -> Option<f64> {
    match (prev, cur) {
        (Some(a), Some(b)) if a > 0.0 && b > 0.0 => Some((a / b).ln() / (h_prev / h).ln()),
        _ => None,
    }
}

impl ConvergenceReport {
    /// Rate of error column `i` (p, u, p*, u*, div u*) on the finest pair.
    pub fn finest_rate(&self, i: usize) -> Option<f64> {
        self.rows.last().and_then(|r| r.rates[i])
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CONVERGENCE_HEADER);
        s.push('\n');
        for r in &self.rows {
            let e = &r.errors;
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                self.method,
                self.degree,
                opt(r.tau),
                r.n,
                sci(r.h),
                r.ndofs,
                r.trace_dofs,
                sci(e.p),
                opt(r.rates[0]),
                sci(e.u),
                opt(r.rates[1]),
                opt(e.p_star),
                opt(r.rates[2]),
                opt(e.u_star),
                opt(r.rates[3]),
                opt(e.div_u_star),
                opt(r.rates[4]),
                r.outer_iterations,
                r.inner_iterations,
                r.converged,
                sci(r.residual)
            )
            .expect("write to string");
        }
        s
    }

    pub fn timings_csv(&self) -> String {
        let mut s = String::from(TIMINGS_HEADER);
        s.push('\n');
        for r in &self.rows {
            let t = &r.timings;
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                self.method,
                self.degree,
                r.n,
                sci(t.assembly),
                sci(t.condensation),
                sci(t.forward_elimination),
                sci(t.trace_solve),
                sci(t.back_substitution),
                sci(t.post_processing),
                sci(t.total)
            )
            .expect("write to string");
        }
        s
    }
}

/// Solves on every mesh size and reports errors, rates and solver statistics.
/// A solve that fails to converge is recorded in its row; the study goes on.
pub fn run_convergence(spec: &StudySpec) -> Result<ConvergenceReport> {
    run_convergence_with(spec, |_| Ok(()))
}

/// [`run_convergence`], handing each solution to `observe` before it is dropped.
pub fn run_convergence_with(spec: &StudySpec, mut observe: impl FnMut(&MeshSolution) -> Result<()>) -> Result<ConvergenceReport> {
    spec.validate()?;
    let mut rows: Vec<ConvergenceRow> = Vec::new();
    for &n in &spec.sizes {
        let sol = solve_on_mesh(spec, n)?;
        observe(&sol)?;
        let e = sol.errors;
        let cols = [Some(e.p), Some(e.u), e.p_star, e.u_star, e.div_u_star];
        let rates = match rows.last() {
            Some(prev) => {
                let pe = prev.errors;
                let pcols = [Some(pe.p), Some(pe.u), pe.p_star, pe.u_star, pe.div_u_star];
                std::array::from_fn(|i| rate(pcols[i], cols[i], prev.h, sol.h))
            }
            None => [None; 5],
        };
        rows.push(ConvergenceRow {
            n,
            h: sol.h,
            tau: sol.tau,
            ndofs: sol.ndofs,
            trace_dofs: sol.trace_dofs,
            errors: e,
            rates,
            outer_iterations: sol.outer.iterations,
            inner_iterations: sol.inner.as_ref().map_or(0, |s| s.iterations),
            converged: sol.converged(),
            residual: sol.outer.relative_residual,
            timings: sol.timings,
        });
    }
    Ok(ConvergenceReport { method: spec.method, degree: spec.degree, rows })
}

/// How a comparison row was solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolvePath {
    /// Sparse direct solve of the conforming (or monolithic) system.
    Direct,
    /// Outer Krylov on the conforming mixed system with hybridization.
    Hybridization,
    /// Outer Krylov on the 3-field system with static condensation.
    Scpc,
    /// Preconditioned CG on the primal system.
    Iterative,
}

impl fmt::Display for SolvePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolvePath::Direct => "direct",
            SolvePath::Hybridization => "hybridization",
            SolvePath::Scpc => "scpc",
            SolvePath::Iterative => "iterative",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub n: usize,
    pub path: SolvePath,
    pub ndofs: usize,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub converged: bool,
    pub residual: f64,
    /// Max-norm coefficient difference to the direct solution.
    pub max_diff: f64,
    pub err_p: f64,
    pub err_u: f64,
    pub setup_seconds: f64,
    pub solve_seconds: f64,
    pub forward_elimination: f64,
    pub trace_solve: f64,
    pub back_substitution: f64,
    pub total_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub method: Method,
    pub degree: usize,
    pub rows: Vec<CompareRow>,
}

/// Column order of the comparison CSV.
pub const COMPARE_HEADER: &str = "method,degree,n,path,ndofs,outer_iterations,inner_iterations,converged,residual,max_diff,err_p,err_u,setup_seconds,solve_seconds,forward_elimination,trace_solve,back_substitution,total_seconds";

impl CompareReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(COMPARE_HEADER);
        s.push('\n');
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                self.method,
                self.degree,
                r.n,
                r.path,
                r.ndofs,
                r.outer_iterations,
                r.inner_iterations,
                r.converged,
                sci(r.residual),
                sci(r.max_diff),
                sci(r.err_p),
                sci(r.err_u),
                sci(r.setup_seconds),
                sci(r.solve_seconds),
                sci(r.forward_elimination),
                sci(r.trace_solve),
                sci(r.back_substitution),
                sci(r.total_seconds)
            )
            .expect("write to string");
        }
        s
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn relative_residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> f64 {
    let bn = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    a.residual_norm(x, b) / if bn > 0.0 { bn } else { 1.0 }
}

struct PathResult {
    x: Vec<f64>,
    outer: usize,
    inner: Option<InnerStats>,
    converged: bool,
    residual: f64,
    setup: f64,
    solve: f64,
}

impl PathResult {
    fn direct(a: &CsrMatrix, b: &[f64]) -> Result<Self> {
        let t = Instant::now();
        let x = sparse_direct_solve(a, b)?;
        let solve = secs(t);
        let residual = relative_residual(a, &x, b);
        Ok(PathResult { x, outer: 0, inner: None, converged: true, residual, setup: 0.0, solve })
    }

    fn krylov(rep: SolveReport, x: Vec<f64>, inner: Option<InnerStats>, setup: f64) -> Self {
        let converged = rep.converged && inner.as_ref().is_none_or(|s| s.all_converged);
        PathResult { x, outer: rep.iterations, inner, converged, residual: rep.relative_residual, setup, solve: rep.solve_seconds }
    }

    fn row(self, n: usize, path: SolvePath, reference: &[f64], err: (f64, f64), total: f64) -> CompareRow {
        let inner = self.inner.unwrap_or_default();
        CompareRow {
            n,
            path,
            ndofs: self.x.len(),
            outer_iterations: self.outer,
            inner_iterations: inner.iterations,
            converged: self.converged,
            residual: self.residual,
            max_diff: max_diff(&self.x, reference),
            err_p: err.0,
            err_u: err.1,
            setup_seconds: self.setup,
            solve_seconds: self.solve,
            forward_elimination: inner.forward_seconds,
            trace_solve: inner.trace_seconds,
            back_substitution: inner.backsub_seconds,
            total_seconds: total,
        }
    }
}

fn compare_mixed(spec: &StudySpec, n: usize, rows: &mut Vec<CompareRow>) -> Result<()> {
    let mesh = spec.mesh(n)?;
    let pb = spec.manufactured();
    let data = pb.data(Field::constant(1.0));
    let k = spec.degree;
    let errs = |x: &[f64], space: &slatefem::fem::MixedSpace| -> Result<(f64, f64)> {
        let parts = space.split(x);
        let u = Function::from_coeffs(space.field(0), parts[0].to_vec())?;
        let p = Function::from_coeffs(space.field(1), parts[1].to_vec())?;
        Ok((l2_error_scalar(&p, |x| pb.p(x))?, l2_error_vector(&u, |x| pb.u(x))?))
    };

    // (a) conforming system with essential Neumann flux dofs
    let t = Instant::now();
    let cm = conforming_mixed_forms(&mesh, &data, k)?;
    let mut assembly = secs(t);
    let pc = HybridizationPc::new(&cm.operator, spec.solver.inner)?;
    let t = Instant::now();
    let a = pc.constrained_operator(&cm.operator)?;
    let mut b = assemble_vector(&SlateExpr::tensor(&cm.rhs), &[])?;
    let (nd, nv) = neumann_flux_dofs(cm.space.field(0), &data.g)?;
    for (&d, &v) in nd.iter().zip(&nv) {
        b[d] = v;
    }
    assembly += secs(t);
    let mut direct = PathResult::direct(&a, &b)?;
    direct.setup = assembly;
    let total = assembly + direct.solve;
    let reference = direct.x.clone();
    let e = errs(&reference, &cm.space)?;
    rows.push(direct.row(n, SolvePath::Direct, &reference, e, total));

    // (b) hybridization preconditioner on the conforming system
    let (x, rep) = krylov_solve(&a, &b, &spec.solver.outer(), Some(&pc))?;
    let hybrid = PathResult::krylov(rep, x, Some(pc.stats()), pc.setup_seconds());
    let total = assembly + hybrid.setup + hybrid.solve;
    let e = errs(&hybrid.x, &cm.space)?;
    rows.push(hybrid.row(n, SolvePath::Hybridization, &reference, e, total));

    // (c) condensation of the 3-field system, velocity averaged back to RT(k)
    let t = Instant::now();
    let sys = hybrid_system(&mesh, &data, Method::MixedHybrid, k, spec.solver.inner)?;
    let (x, rep) = krylov_solve(&sys.operator, &sys.rhs, &spec.solver.outer(), Some(&sys.scpc))?;
    let transfer = BrokenTransfer::new(cm.space.field(0), &sys.spaces[0])?;
    let parts = sys.space.split(&x);
    let mut projected = transfer.project_div(parts[0]);
    projected.extend_from_slice(parts[1]);
    let scpc = PathResult::krylov(rep, projected, Some(sys.scpc.stats()), sys.assembly + sys.scpc.setup_seconds());
    let e = errs(&scpc.x, &cm.space)?;
    rows.push(scpc.row(n, SolvePath::Scpc, &reference, e, secs(t)));
    Ok(())
}

fn compare_ldgh(spec: &StudySpec, n: usize, rows: &mut Vec<CompareRow>) -> Result<()> {
    let mesh = spec.mesh(n)?;
    let pb = spec.manufactured();
    let data = pb.data(Field::constant(spec.tau.value(mesh.h())));
    let t = Instant::now();
    let sys = hybrid_system(&mesh, &data, Method::Ldgh, spec.degree, spec.solver.inner)?;
    let shared = secs(t);
    let errs = |x: &[f64]| -> Result<(f64, f64)> {
        let parts = sys.space.split(x);
        let u = Function::from_coeffs(&sys.spaces[0], parts[0].to_vec())?;
        let p = Function::from_coeffs(&sys.spaces[1], parts[1].to_vec())?;
        Ok((l2_error_scalar(&p, |x| pb.p(x))?, l2_error_vector(&u, |x| pb.u(x))?))
    };

    let mut direct = PathResult::direct(&sys.operator, &sys.rhs)?;
    direct.setup = sys.assembly;
    let total = sys.assembly + direct.solve;
    let reference = direct.x.clone();
    let e = errs(&reference)?;
    rows.push(direct.row(n, SolvePath::Direct, &reference, e, total));

    let t = Instant::now();
    let (x, rep) = krylov_solve(&sys.operator, &sys.rhs, &spec.solver.outer(), Some(&sys.scpc))?;
    let scpc = PathResult::krylov(rep, x, Some(sys.scpc.stats()), shared);
    let e = errs(&scpc.x)?;
    rows.push(scpc.row(n, SolvePath::Scpc, &reference, e, secs(t) + shared));
    Ok(())
}

fn compare_primal(spec: &StudySpec, n: usize, rows: &mut Vec<CompareRow>) -> Result<()> {
    let mesh = spec.mesh(n)?;
    let pb = spec.manufactured();
    let data = pb.data(Field::constant(1.0));
    let t = Instant::now();
    let (s, a, l) = primal_forms(&mesh, &data, spec.degree)?;
    let bc = cg_dirichlet(&s, &pb)?;
    let (m, b) = assemble_system(&SlateExpr::tensor(&a), &SlateExpr::tensor(&l), &[bc])?;
    let setup = secs(t);
    let errs = |x: &[f64]| -> Result<(f64, f64)> {
        let p = Function::from_coeffs(&s, x.to_vec())?;
        Ok((l2_error_scalar(&p, |x| pb.p(x))?, primal_flux_error(&p, &pb)?))
    };
    let t = Instant::now();
    let mut direct = PathResult::direct(&m, &b)?;
    direct.setup = setup;
    let reference = direct.x.clone();
    let e = errs(&reference)?;
    rows.push(direct.row(n, SolvePath::Direct, &reference, e, secs(t) + setup));

    let t = Instant::now();
    let cfg = KrylovConfig { maxiter: spec.solver.maxiter.max(10 * s.ndof()), ..KrylovConfig::cg(spec.solver.rtol) };
    let (x, rep) = solve_assembled(&m, &b, &cfg, spec.solver.inner.pc)?;
    let it = PathResult::krylov(rep, x, None, setup);
    let e = errs(&it.x)?;
    rows.push(it.row(n, SolvePath::Iterative, &reference, e, secs(t) + setup));
    Ok(())
}

/// Solves each mesh size along every applicable path and cross-checks the
/// solutions against the direct solve.
pub fn run_solver_compare(spec: &StudySpec) -> Result<CompareReport> {
    spec.validate()?;
    let mut rows = Vec::new();
    for &n in &spec.sizes {
        match spec.method {
            Method::MixedHybrid => compare_mixed(spec, n, &mut rows)?,
            Method::Ldgh => compare_ldgh(spec, n, &mut rows)?,
            Method::CgPrimal => compare_primal(spec, n, &mut rows)?,
        }
    }
    Ok(CompareReport { method: spec.method, degree: spec.degree, rows })
}

/// Writes the fields of a solution to a legacy VTK file.
pub fn write_solution_vtk(sol: &MeshSolution, path: &std::path::Path) -> Result<()> {
    let mut fields: Vec<(&str, &Function)> = vec![("p", &sol.p)];
    if let Some(u) = &sol.u {
        fields.push(("u", u));
    }
    if let Some(ps) = &sol.p_star {
        fields.push(("p_star", ps));
    }
    if let Some(us) = &sol.u_star {
        fields.push(("u_star", us));
    }
    slatefem::vtk::export_fields(&fields, path)
}

/// Solves on the `n x n` mesh and writes the fields to a legacy VTK file.
pub fn export_solution(spec: &StudySpec, n: usize, path: &std::path::Path) -> Result<()> {
    spec.validate_discretization()?;
    write_solution_vtk(&solve_on_mesh(spec, n)?, path)
}
