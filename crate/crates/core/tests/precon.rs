use std::collections::BTreeMap;
use std::sync::Arc;

use proptest::prelude::*;
use slatefem::fem::{break_space, create_space, project_trace, ElementFamily};
use slatefem::forms::{conforming_mixed_forms, model_problem_forms, Field, Method, ProblemData};
use slatefem::mesh::{build_unit_square, BoundaryLabel, Mesh};
use slatefem::precon::{BrokenTransfer, FieldSplit, HybridizationPc, InnerSolve, Scpc};
use slatefem::slate::{assemble_vector, SlateExpr};
use slatefem::solvers::{krylov_solve, sparse_direct_solve, KrylovConfig, PcKind, Preconditioner};
use slatefem::Error;

fn mesh(n: usize, neumann_left: bool) -> Arc<Mesh> {
    let m = build_unit_square(n).unwrap();
    Arc::new(
        m.mark_boundary(|x| Some(if neumann_left && x[0] < 1e-12 { BoundaryLabel::Neumann } else { BoundaryLabel::Dirichlet })).unwrap(),
    )
}

fn data() -> ProblemData {
    ProblemData {
        kappa: Field::scalar("kappa", 1, |x| 1.0 + 0.5 * x[0]),
        c: Field::constant(1.0),
        f: Field::scalar("f", 2, |x| x[0] * x[1] + 1.0),
        p0: Field::scalar("p0", 1, |x| x[0] - 0.5 * x[1]),
        g: Field::scalar("g", 1, |x| 0.25 + x[1]),
        tau: Field::constant(1.0),
    }
}

fn pseudo_random(n: usize, seed: u64) -> Vec<f64> {
    (0..n).map(|i| ((((i as u64 + 3) * 2654435761 + seed * 97) % 1009) as f64) / 1009.0 - 0.5).collect()
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

#[test]
fn field_split_validation() {
    assert!(FieldSplit::new(vec![0, 1], vec![2], 3).is_ok());
    assert!(matches!(FieldSplit::new(vec![0, 1], vec![1, 2], 3), Err(Error::InvalidSplit(_))));
    assert!(matches!(FieldSplit::new(vec![0], vec![2], 3), Err(Error::InvalidSplit(_))));
    assert!(matches!(FieldSplit::new(vec![], vec![0, 1, 2], 3), Err(Error::InvalidSplit(_))));
    assert!(matches!(FieldSplit::new(vec![1, 0], vec![2], 3), Err(Error::InvalidSplit(_))));
}

#[test]
fn trace_field_cannot_be_eliminated() {
    let m = mesh(2, false);
    let forms = model_problem_forms(&m, &data(), Method::Ldgh, 1).unwrap();
    let a = SlateExpr::tensor(&forms.system_operator().unwrap());
    let err = Scpc::new(&a, FieldSplit { eliminate: vec![0, 2], condensed: vec![1] }, &[], InnerSolve::default()).unwrap_err();
    assert!(matches!(err, Error::InvalidSplit(_)));
}

#[test]
fn static_condensation_matches_monolithic_direct_solve() {
    for (method, k) in [(Method::Ldgh, 0), (Method::Ldgh, 1), (Method::Ldgh, 2), (Method::MixedHybrid, 1), (Method::MixedHybrid, 2)] {
        let m = mesh(4, true);
        let forms = model_problem_forms(&m, &data(), method, k).unwrap();
        let w = forms.mixed_space();
        let a = SlateExpr::tensor(&forms.system_operator().unwrap());
        let trace = &forms.spaces[2];
        let dir: Vec<usize> = m.facets_with_label(BoundaryLabel::Dirichlet).flat_map(|f| trace.facet_dofs(f).to_vec()).collect();
        let scpc = Scpc::new(&a, FieldSplit { eliminate: vec![0, 1], condensed: vec![2] }, &dir, InnerSolve::exact()).unwrap();

        let mut b = assemble_vector(&SlateExpr::tensor(&forms.system_rhs().unwrap().unwrap()), &[]).unwrap();
        let p0 = data().p0;
        let lam0 = project_trace(trace, |x| p0.eval(x)[0], None).unwrap();
        let full_dir = scpc.full_bc_dofs();
        for (&d, &t) in full_dir.iter().zip(&dir) {
            b[d] = lam0.coeffs()[t];
        }
        let op = Scpc::constrained_full_operator(&a, &full_dir).unwrap();
        let want = sparse_direct_solve(&op, &b).unwrap();
        let got = scpc.solve(&b).unwrap();
        assert_eq!(got.len(), w.ndof());
        assert!(rel_diff(&got, &want) < 1e-10, "{method} k={k}: {}", rel_diff(&got, &want));
        assert!(op.residual_norm(&got, &b) < 1e-9 * b.iter().map(|x| x * x).sum::<f64>().sqrt());
        // the condensed trace operator is symmetric
        assert!(scpc.constrained_operator().asymmetry() < 1e-10 * scpc.constrained_operator().norm_inf());
    }
}

#[test]
fn scpc_with_iterative_inner_solve() {
    let m = mesh(4, true);
    let forms = model_problem_forms(&m, &data(), Method::Ldgh, 1).unwrap();
    let a = SlateExpr::tensor(&forms.system_operator().unwrap());
    let dir: Vec<usize> = m.facets_with_label(BoundaryLabel::Dirichlet).flat_map(|f| forms.spaces[2].facet_dofs(f).to_vec()).collect();
    let inner = InnerSolve { krylov: KrylovConfig::cg(1e-12), pc: PcKind::Jacobi };
    let scpc = Scpc::new(&a, FieldSplit { eliminate: vec![0, 1], condensed: vec![2] }, &dir, inner).unwrap();
    let op = Scpc::constrained_full_operator(&a, &scpc.full_bc_dofs()).unwrap();
    let r = pseudo_random(op.nrows(), 3);
    let mut z = vec![0.0; r.len()];
    scpc.apply(&r, &mut z).unwrap();
    let want = sparse_direct_solve(&op, &r).unwrap();
    assert!(rel_diff(&z, &want) < 1e-8);
    let st = scpc.stats();
    assert_eq!(st.applications, 1);
    assert!(st.iterations > 1 && st.all_converged);
}

#[test]
fn hybridization_inverts_conforming_operator() {
    for k in [1, 2] {
        for neumann in [false, true] {
            let m = mesh(3, neumann);
            let cm = conforming_mixed_forms(&m, &data(), k).unwrap();
            let pc = HybridizationPc::new(&cm.operator, InnerSolve::exact()).unwrap();
            assert_eq!(pc.neumann_dofs().is_empty(), !neumann);
            let a = pc.constrained_operator(&cm.operator).unwrap();
            let r = pseudo_random(a.nrows(), k as u64);
            let mut z = vec![0.0; r.len()];
            pc.apply(&r, &mut z).unwrap();
            let rn = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(a.residual_norm(&z, &r) < 1e-10 * rn, "k={k} neumann={neumann}: {}", a.residual_norm(&z, &r) / rn);

            // outer GMRES converges in one iteration
            let (_, rep) = krylov_solve(&a, &r, &KrylovConfig::gmres(1e-10, 30), Some(&pc)).unwrap();
            assert!(rep.converged && rep.iterations == 1, "{rep:?}");
        }
    }
}

#[test]
fn hybridization_rejects_wrong_spaces() {
    let m = mesh(2, false);
    let forms = model_problem_forms(&m, &data(), Method::Ldgh, 1).unwrap();
    let a00 = forms.blocks[0][0].clone().unwrap();
    assert!(matches!(HybridizationPc::new(&a00, InnerSolve::exact()), Err(Error::InvalidSplit(_))));
}

#[test]
fn inner_options_roundtrip() {
    let s = InnerSolve { krylov: KrylovConfig::gmres(1e-9, 20), pc: PcKind::Exact };
    let back = InnerSolve::from_options(&s.to_options()).unwrap();
    assert_eq!(back, s);
    let bad = BTreeMap::from([("ksp_tol".to_string(), "1e-3".to_string())]);
    assert!(matches!(InnerSolve::from_options(&bad), Err(Error::InvalidConfig(_))));
    let bad_pc = BTreeMap::from([("pc_type".to_string(), "ilu".to_string())]);
    assert!(InnerSolve::from_options(&bad_pc).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn broken_transfer_invariants(n in 1usize..5, k in 1usize..3, seed in 0u64..500) {
        let m = mesh(n, false);
        let rt = create_space(&m, ElementFamily::RT(k)).unwrap();
        let br = break_space(&rt).unwrap();
        let t = BrokenTransfer::new(&rt, &br).unwrap();
        let x = pseudo_random(rt.ndof(), seed);
        // copies of a conforming field average back to it
        let back = t.project_div(&t.inject(&x));
        prop_assert!(rel_diff(&back, &x) < 1e-15);
        // split residual sums back to the original
        let rs = t.transfer_residual(&x);
        let mut sum = vec![0.0; rt.ndof()];
        for (b, &g) in t.owner().iter().enumerate() {
            sum[g] += rs[b];
        }
        prop_assert!(rel_diff(&sum, &x) < 1e-14);
        // interior facet dofs have two copies, boundary ones a single copy
        for f in 0..m.n_facets() {
            for j in 0..k {
                prop_assert_eq!(t.multiplicity()[f * k + j], m.facet_cells(f).len());
            }
        }
    }
}
