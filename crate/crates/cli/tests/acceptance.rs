//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::Instant;

use rand::{rngs::StdRng, Rng, SeedableRng};
use slatefem::dense::CholeskyFactor;
use slatefem::fem::{break_space, create_space, ElementFamily, Function};
use slatefem::forms::{conforming_mixed_forms, model_problem_forms, Field, Method};
use slatefem::mesh::{build_unit_square, BoundaryLabel, Mesh};
use slatefem::postprocess::{flux_pp_expr, max_normal_jump, scalar_pp_expr, ScalarPpConfig};
use slatefem::precon::{BrokenTransfer, FieldSplit, HybridizationPc, InnerSolve, Scpc};
use slatefem::slate::{compile, oracle, SlateExpr};
use slatefem::solvers::PcKind;
use slatefem::Result;
use slatefem_cli::problem::{ManufacturedProblem, ProblemKind};
use slatefem_cli::study::{run_convergence_with, run_solver_compare, SolvePath, StudySpec, Tau};

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(id: usize, name: &str, f: impl FnOnce() -> Result<Outcome>) -> bool {
    let (pass, detail) = match f() {
        Ok(o) => (o.pass, o.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    println!("criterion {id} [{name}]: {} {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn serial<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("thread pool").install(f)
}

fn mesh(n: usize, neumann_left: bool) -> Arc<Mesh> {
    let m = build_unit_square(n).expect("mesh");
    Arc::new(
        m.mark_boundary(|x| Some(if neumann_left && x[0] < 1e-12 { BoundaryLabel::Neumann } else { BoundaryLabel::Dirichlet }))
            .expect("labels"),
    )
}

fn within(rate: Option<f64>, want: f64, tol: f64) -> bool {
    rate.is_some_and(|r| (r - want).abs() <= tol)
}

fn fmt_rate(r: Option<f64>) -> String {
    r.map_or("-".into(), |v| format!("{v:.3}"))
}

fn exact_spec(method: Method, k: usize, sizes: Vec<usize>) -> StudySpec {
    let mut spec = StudySpec { method, degree: k, sizes, tau: Tau::Const(1.0), ..Default::default() };
    spec.solver.inner = InnerSolve::exact();
    spec
}

/// Mixed-hybrid rates on the sin-sin problem.
fn criterion_1() -> Result<Outcome> {
    let mut pass = true;
    let mut detail = Vec::new();
    let t = Instant::now();
    for k in [1, 2] {
        let spec = exact_spec(Method::MixedHybrid, k, vec![8, 16, 32]);
        let rep = serial(|| run_convergence_with(&spec, |_| Ok(())))?;
        let kf = k as f64;
        let (rp, ru, rs) = (rep.finest_rate(0), rep.finest_rate(1), rep.finest_rate(2));
        pass &= within(rp, kf, 0.2) && within(ru, kf, 0.2) && within(rs, kf + 1.0, 0.2);
        pass &= rep.rows.iter().all(|r| r.converged);
        detail.push(format!("k={k}: p {} u {} p* {}", fmt_rate(rp), fmt_rate(ru), fmt_rate(rs)));
    }
    let secs = t.elapsed().as_secs_f64();
    pass &= secs < 60.0;
    Ok(Outcome { pass, detail: format!("{}; serial {secs:.1} s", detail.join("; ")) })
}

/// LDG-H rates (criterion 2) and flux post-processing (criterion 7) from the same runs.
fn ldgh_runs() -> Result<(Outcome, Outcome)> {
    let (mut p2, mut p7) = (true, true);
    let (mut d2, mut d7) = (Vec::new(), Vec::new());
    let t = Instant::now();
    for k in [1, 2] {
        let spec = exact_spec(Method::Ldgh, k, vec![8, 16, 32]);
        let mut jump: f64 = 0.0;
        let rep = serial(|| {
            run_convergence_with(&spec, |sol| {
                jump = jump.max(max_normal_jump(sol.u_star.as_ref().expect("LDG-H flux"))?);
                Ok(())
            })
        })?;
        let kf = k as f64;
        let (rp, ru, rs, rd) = (rep.finest_rate(0), rep.finest_rate(1), rep.finest_rate(2), rep.finest_rate(4));
        p2 &= within(rp, kf + 1.0, 0.2) && within(ru, kf + 1.0, 0.2) && within(rs, kf + 2.0, 0.25);
        p2 &= rep.rows.iter().all(|r| r.converged);
        d2.push(format!("k={k}: p {} u {} p* {}", fmt_rate(rp), fmt_rate(ru), fmt_rate(rs)));
        p7 &= jump < 1e-10 && within(rd, kf + 1.0, 0.25);
        d7.push(format!("k={k}: max jump {jump:.2e}, div rate {}", fmt_rate(rd)));
    }
    let secs = t.elapsed().as_secs_f64();
    p2 &= secs < 60.0;
    Ok((Outcome { pass: p2, detail: format!("{}; serial {secs:.1} s", d2.join("; ")) }, Outcome { pass: p7, detail: d7.join("; ") }))
}

/// Equivalence to the conforming direct solve (criterion 3) and one-iteration
/// convergence (criterion 4), from the solver comparison.
fn compare_runs() -> Result<(Outcome, Outcome)> {
    let (mut worst_diff, mut p4) = (0.0f64, true);
    let mut its = Vec::new();
    let mut rows = 0;
    for (method, k) in [(Method::MixedHybrid, 1), (Method::MixedHybrid, 2), (Method::Ldgh, 1), (Method::Ldgh, 2)] {
        for neumann_left in [false, true] {
            let mut spec = exact_spec(method, k, vec![2, 4, 8]);
            spec.neumann_left = neumann_left;
            spec.solver.rtol = 1e-8;
            assert_eq!(spec.solver.inner.pc, PcKind::Exact);
            let rep = run_solver_compare(&spec)?;
            for r in &rep.rows {
                if r.path == SolvePath::Direct {
                    continue;
                }
                if method == Method::MixedHybrid {
                    worst_diff = worst_diff.max(r.max_diff);
                    rows += 1;
                }
                p4 &= r.outer_iterations == 1 && r.converged && r.residual <= 1e-8;
                its.push(r.outer_iterations);
            }
        }
    }
    let c3 = Outcome {
        pass: worst_diff < 1e-8,
        detail: format!(
            "max coefficient difference {worst_diff:.2e} over {rows} hybridized solves (k=1,2; n=2,4,8; Dirichlet and mixed labels)"
        ),
    };
    let c4 = Outcome {
        pass: p4,
        detail: format!("outer FGMRES iterations {:?}", its.iter().copied().collect::<std::collections::BTreeSet<_>>()),
    };
    Ok((c3, c4))
}

/// Symmetry and positive definiteness of the mixed-hybrid trace operator.
fn criterion_5() -> Result<Outcome> {
    let pb = ManufacturedProblem::new(ProblemKind::SinSin);
    let data = pb.data(Field::constant(1.0));
    let (mut worst, mut chol) = (0.0f64, true);
    for k in [1, 2] {
        for n in [2, 4, 8] {
            for neumann_left in [false, true] {
                let m = mesh(n, neumann_left);
                let forms = model_problem_forms(&m, &data, Method::MixedHybrid, k)?;
                let a = SlateExpr::tensor(&forms.system_operator()?);
                let dir: Vec<usize> =
                    m.facets_with_label(BoundaryLabel::Dirichlet).flat_map(|f| forms.spaces[2].facet_dofs(f).to_vec()).collect();
                let scpc = Scpc::new(&a, FieldSplit::new(vec![0, 1], vec![2], 3)?, &dir, InnerSolve::exact())?;
                let s = scpc.constrained_operator();
                worst = worst.max(s.asymmetry() / s.norm_inf());
                chol &= CholeskyFactor::new(&s.to_dense()).is_ok();
            }
        }
    }
    Ok(Outcome {
        pass: worst <= 1e-10 && chol,
        detail: format!("max relative asymmetry {worst:.2e}, Cholesky {}", if chol { "ok" } else { "failed" }),
    })
}

/// Broken residual paired with a broken-copied conforming function equals the original pairing.
fn criterion_6() -> Result<Outcome> {
    let mut rng = StdRng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(1..=4);
        let k = rng.gen_range(1..=2);
        let m = mesh(n, rng.gen_bool(0.5));
        let rt = create_space(&m, ElementFamily::RT(k))?;
        let transfer = BrokenTransfer::new(&rt, &break_space(&rt)?)?;
        let r: Vec<f64> = (0..rt.ndof()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..rt.ndof()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let exact: f64 = r.iter().zip(&w).map(|(a, b)| a * b).sum();
        let broken: f64 = transfer.transfer_residual(&r).iter().zip(transfer.inject(&w)).map(|(a, b)| a * b).sum();
        worst = worst.max((broken - exact).abs());
    }
    Ok(Outcome { pass: worst < 1e-12, detail: format!("max |R^(w) - R(w)| = {worst:.2e} over 100 pairs") })
}

/// Compiled plans agree with the tree-walking evaluator on every expression
/// used by the condensation, hybridization and post-processing solvers.
fn criterion_8() -> Result<Outcome> {
    let mut rng = StdRng::seed_from_u64(8);
    let pb = ManufacturedProblem::new(ProblemKind::SinSin);
    let data = pb.data(Field::constant(1.0));
    let m = mesh(6, true);
    let mut exprs: Vec<(String, SlateExpr)> = Vec::new();
    let random = |rng: &mut StdRng, n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() };

    for (method, k) in [(Method::MixedHybrid, 1), (Method::MixedHybrid, 2), (Method::Ldgh, 0), (Method::Ldgh, 1), (Method::Ldgh, 2)] {
        let forms = model_problem_forms(&m, &data, method, k)?;
        let a = SlateExpr::tensor(&forms.system_operator()?);
        let scpc = Scpc::new(&a, FieldSplit::new(vec![0, 1], vec![2], 3)?, &[], InnerSolve::exact())?;
        let r = random(&mut rng, scpc.space().ndof());
        let x_c = random(&mut rng, forms.spaces[2].ndof());
        for (name, e) in scpc.expressions(&r, &x_c)? {
            exprs.push((format!("scpc {method} k={k} {name}"), e));
        }
        // post-processing from random discrete fields
        let f = |rng: &mut StdRng, i: usize| Function::from_coeffs(&forms.spaces[i], random(rng, forms.spaces[i].ndof()));
        let (u, p, l) = (f(&mut rng, 0)?, f(&mut rng, 1)?, f(&mut rng, 2)?);
        let cfg = ScalarPpConfig { multiplier_degree: if method == Method::Ldgh { k } else { k - 1 } };
        exprs.push((format!("scalar_pp {method} k={k}"), scalar_pp_expr(&u, &p, &data.kappa, cfg)?.1));
        if method == Method::Ldgh {
            exprs.push((format!("flux_pp k={k}"), flux_pp_expr(&u, &p, &l, &data.tau)?.1));
        }
    }
    for k in [1, 2] {
        let cm = conforming_mixed_forms(&m, &data, k)?;
        let pc = HybridizationPc::new(&cm.operator, InnerSolve::exact())?;
        let r = random(&mut rng, pc.space().ndof());
        let x_c = random(&mut rng, pc.hybrid_space().field(2).ndof());
        for (name, e) in pc.expressions(&r, &x_c)? {
            exprs.push((format!("hybridization k={k} {name}"), e));
        }
    }

    let mut worst = 0.0f64;
    let mut worst_name = String::new();
    let cells: Vec<usize> = rand::seq::index::sample(&mut rng, m.n_cells(), 24).into_vec();
    for (name, e) in &exprs {
        let plan = compile(e)?;
        for &c in &cells {
            let got = plan.evaluate(c)?;
            let want = oracle::evaluate(e, c)?;
            let rel = got.max_abs_diff(&want) / want.max_abs().max(f64::MIN_POSITIVE);
            if rel > worst {
                worst = rel;
                worst_name.clone_from(name);
            }
        }
    }
    Ok(Outcome {
        pass: worst <= 1e-12,
        detail: format!("{} expressions x {} random cells, worst relative difference {worst:.2e} ({worst_name})", exprs.len(), cells.len()),
    })
}

/// Two serial `converge` runs write byte-identical CSV files.
fn criterion_9() -> Result<Outcome> {
    let dir = std::env::temp_dir().join(format!("slatefem-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| slatefem::Error::Io(e.to_string()))?;
    let mut same = true;
    let mut runs = Vec::new();
    for (method, k) in [("mixed-hybrid", "2"), ("ldgh", "1")] {
        let mut outputs = Vec::new();
        for i in 0..2 {
            let csv = dir.join(format!("{method}-{i}.csv"));
            let status = Command::new(env!("CARGO_BIN_EXE_slatefem"))
                .args(["converge", "--method", method, "--degree", k, "--sizes", "4,8,16", "--serial", "--csv"])
                .arg(&csv)
                .status()
                .map_err(|e| slatefem::Error::Io(e.to_string()))?;
            same &= status.success();
            outputs.push(std::fs::read(&csv).map_err(|e| slatefem::Error::Io(e.to_string()))?);
        }
        same &= !outputs[0].is_empty() && outputs[0] == outputs[1];
        runs.push(format!("{method} k={k}: {} bytes", outputs[0].len()));
    }
    let _ = std::fs::remove_dir_all(&dir);
    Ok(Outcome { pass: same, detail: format!("{} identical across runs: {}", runs.join(", "), same) })
}

fn main() -> ExitCode {
    let mut ok = true;
    ok &= check(1, "mixed-hybrid convergence rates", criterion_1);
    let (c2, c7) = match ldgh_runs() {
        Ok(v) => (Ok(v.0), Ok(v.1)),
        Err(e) => (Err(e.clone()), Err(e)),
    };
    ok &= check(2, "LDG-H convergence rates", || c2);
    let (c3, c4) = match compare_runs() {
        Ok(v) => (Ok(v.0), Ok(v.1)),
        Err(e) => (Err(e.clone()), Err(e)),
    };
    ok &= check(3, "hybridized equals conforming mixed solve", || c3);
    ok &= check(4, "one-iteration exactness", || c4);
    ok &= check(5, "trace operator symmetric positive definite", criterion_5);
    ok &= check(6, "residual transfer identity", criterion_6);
    ok &= check(7, "flux post-processing conformity", || c7);
    ok &= check(8, "compiled plans match oracle", criterion_8);
    ok &= check(9, "serial determinism", criterion_9);
    println!("acceptance: {}", if ok { "all criteria PASS" } else { "some criteria FAIL" });
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
