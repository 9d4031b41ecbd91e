use std::path::Path;
use std::process::Command;

use proptest::prelude::*;
use slatefem::forms::Method;
use slatefem::solvers::PcKind;
use slatefem_cli::study::{
    run_convergence, run_solver_compare, SolvePath, StudySpec, Tau, COMPARE_HEADER, CONVERGENCE_HEADER, TIMINGS_HEADER,
};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_slatefem"))
}

fn run_ok(args: &[&str]) -> String {
    let out = bin().args(args).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn parse_csv(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    (header, lines.map(|l| l.split(',').map(str::to_string).collect()).collect())
}

#[test]
fn converge_csv_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("out.csv");
    run_ok(&["converge", "--method", "ldgh", "--degree", "1", "--sizes", "2,4", "--serial", "--csv", csv.to_str().unwrap()]);
    let got = std::fs::read_to_string(&csv).unwrap();
    let want = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/converge_ldgh1.csv")).unwrap();
    let (gh, grows) = parse_csv(&got);
    let (wh, wrows) = parse_csv(&want);
    assert_eq!(gh, wh);
    assert_eq!(grows.len(), wrows.len());
    let residual = gh.iter().position(|c| c == "residual").unwrap();
    for (g, w) in grows.iter().zip(&wrows) {
        for (i, (a, b)) in g.iter().zip(w).enumerate() {
            match (a.parse::<f64>(), b.parse::<f64>()) {
                // the final residual sits at round-off level
                _ if i == residual => assert!(a.parse::<f64>().unwrap() < 1e-8),
                (Ok(x), Ok(y)) => assert!((x - y).abs() <= 1e-9 * y.abs(), "column {}: {a} vs {b}", gh[i]),
                _ => assert_eq!(a, b, "column {}", gh[i]),
            }
        }
    }
    // timings land in a sidecar file
    let timings = std::fs::read_to_string(dir.path().join("out.timings.csv")).unwrap();
    assert_eq!(timings.lines().next().unwrap(), TIMINGS_HEADER);
    assert_eq!(timings.lines().count(), 3);
}

#[test]
fn converge_csv_schema() {
    let out = run_ok(&["converge", "--method", "mixed-hybrid", "--degree", "2", "--sizes", "2,4,8"]);
    let (header, rows) = parse_csv(&out);
    assert_eq!(header.join(","), CONVERGENCE_HEADER);
    assert_eq!(rows.len(), 3);
    for r in &rows {
        assert_eq!(r.len(), header.len());
        assert_eq!(r[0], "mixed-hybrid");
        // formatted like printf("%.12e")
        let h = &r[4];
        assert!(h.contains('e') && h.split('e').next().unwrap().split('.').nth(1).unwrap().len() == 12, "{h}");
        assert!(h.ends_with("e-01") || h.ends_with("e-02") || h.ends_with("e-03"), "{h}");
    }
    // no rates on the coarsest row, and no LDG-H-only columns
    assert!(rows[0][8].is_empty());
    assert!(rows[1][13].is_empty() && rows[1][15].is_empty());
}

#[test]
fn serial_runs_are_bit_identical() {
    let args = ["converge", "--method", "ldgh", "--degree", "2", "--sizes", "2,4", "--tau", "h", "--serial"];
    assert_eq!(run_ok(&args), run_ok(&args));
}

#[test]
fn export_writes_parseable_vtk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fields.vtk");
    run_ok(&["export", "--method", "ldgh", "--degree", "1", "--sizes", "3", "--vtk", path.to_str().unwrap()]);
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("# vtk DataFile Version"));
    let cell_data = text.split("CELL_DATA 18\n").nth(1).unwrap();
    for name in ["SCALARS p double 1", "VECTORS u double", "SCALARS p_star double 1", "VECTORS u_star double"] {
        assert!(cell_data.contains(name), "{name}");
    }
    let p: Vec<f64> = cell_data.lines().skip(2).take(18).map(|l| l.parse().unwrap()).collect();
    assert!(p.iter().all(|v| (0.0..=1.1).contains(v)));
    // byte-identical on a second run
    let again = dir.path().join("again.vtk");
    run_ok(&["export", "--method", "ldgh", "--degree", "1", "--sizes", "3", "--vtk", again.to_str().unwrap()]);
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn bad_arguments_fail() {
    for args in [
        vec!["converge", "--sizes", "8"],
        vec!["converge", "--sizes", "8,4"],
        vec!["converge", "--method", "bdm"],
        vec!["converge", "--inner-pc", "ilu"],
        vec!["converge", "--method", "mixed-hybrid", "--degree", "3"],
        vec!["export", "--sizes", "2"],
    ] {
        let out = bin().args(&args).output().unwrap();
        assert!(!out.status.success(), "{args:?}");
    }
}

#[test]
fn config_file_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("study.toml");
    std::fs::write(&cfg, "method = \"ldgh\"\ndegree = 0\nsizes = [2, 4]\n[solver_options]\nksp_rtol = 1e-13\n").unwrap();
    let out = run_ok(&["converge", "--config", cfg.to_str().unwrap(), "--inner-pc", "exact"]);
    let (_, rows) = parse_csv(&out);
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][0], "ldgh");
    assert_eq!(rows[0][1], "0");
    // a flag beats the file
    let out = run_ok(&["converge", "--config", cfg.to_str().unwrap(), "--degree", "1"]);
    assert_eq!(parse_csv(&out).1[0][1], "1");
}

#[test]
fn compare_paths_agree() {
    for (method, k) in [(Method::MixedHybrid, 1), (Method::MixedHybrid, 2), (Method::Ldgh, 1), (Method::CgPrimal, 1)] {
        let mut spec = StudySpec { method, degree: k, sizes: vec![2, 4], neumann_left: true, ..Default::default() };
        spec.solver.inner.pc = PcKind::Exact;
        let report = run_solver_compare(&spec).unwrap();
        let csv = report.to_csv();
        assert_eq!(csv.lines().next().unwrap(), COMPARE_HEADER);
        let paths: Vec<SolvePath> = report.rows.iter().filter(|r| r.n == 2).map(|r| r.path).collect();
        match method {
            Method::MixedHybrid => assert_eq!(paths, [SolvePath::Direct, SolvePath::Hybridization, SolvePath::Scpc]),
            Method::Ldgh => assert_eq!(paths, [SolvePath::Direct, SolvePath::Scpc]),
            Method::CgPrimal => assert_eq!(paths, [SolvePath::Direct, SolvePath::Iterative]),
        }
        for r in &report.rows {
            assert!(r.converged && r.max_diff < 1e-7, "{method} {r:?}");
            if matches!(r.path, SolvePath::Hybridization | SolvePath::Scpc) {
                assert_eq!(r.outer_iterations, 1);
            }
            assert!(r.setup_seconds + r.solve_seconds <= r.total_seconds + 1e-9, "{r:?}");
            assert!(r.forward_elimination + r.trace_solve + r.back_substitution <= r.solve_seconds + 1e-9, "{r:?}");
        }
    }
}

#[test]
fn stage_timings_fit_in_total() {
    let spec = StudySpec { method: Method::Ldgh, degree: 1, sizes: vec![2, 4], ..Default::default() };
    let report = run_convergence(&spec).unwrap();
    for r in &report.rows {
        assert!(r.timings.stage_sum() <= r.timings.total, "{:?}", r.timings);
        assert!(r.converged);
    }
}

#[test]
fn tau_h_is_recorded_per_row() {
    let spec = StudySpec { method: Method::Ldgh, degree: 1, sizes: vec![2, 4], tau: Tau::MeshSize, ..Default::default() };
    let report = run_convergence(&spec).unwrap();
    assert_eq!(report.rows[0].tau, Some(0.5));
    assert_eq!(report.rows[1].tau, Some(0.25));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn size_lists_validated(sizes in proptest::collection::vec(0usize..40, 0..5)) {
        let spec = StudySpec { sizes: sizes.clone(), ..Default::default() };
        let ok = sizes.len() >= 2 && sizes[0] > 0 && sizes.windows(2).all(|w| w[0] < w[1]);
        prop_assert_eq!(spec.validate().is_ok(), ok);
    }

    #[test]
    fn tau_text_roundtrip(t in 1e-3f64..1e3) {
        let tau: Tau = t.to_string().parse().unwrap();
        prop_assert_eq!(tau, Tau::Const(t));
        prop_assert_eq!(tau.to_string().parse::<Tau>().unwrap(), tau);
    }
}
