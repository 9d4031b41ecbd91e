use std::time::Instant;

use super::{LinearOperator, Preconditioner};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KrylovMethod {
    Cg,
    /// Right-preconditioned restarted GMRES.
    Gmres {
        restart: usize,
    },
    /// Flexible GMRES; tolerates preconditioners that change between applications.
    Fgmres {
        restart: usize,
    },
}

impl std::fmt::Display for KrylovMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KrylovMethod::Cg => write!(f, "cg"),
            KrylovMethod::Gmres { restart } => write!(f, "gmres({restart})"),
            KrylovMethod::Fgmres { restart } => write!(f, "fgmres({restart})"),
        }
    }
}

impl std::str::FromStr for KrylovMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (name, restart) = match s.split_once('(') {
            Some((n, r)) => {
                let r = r.trim_end_matches(')').parse().map_err(|_| Error::InvalidConfig(format!("bad restart in {s:?}")))?;
                (n, r)
            }
            None => (s, 30),
        };
        match name {
            "cg" => Ok(KrylovMethod::Cg),
            "gmres" => Ok(KrylovMethod::Gmres { restart }),
            "fgmres" => Ok(KrylovMethod::Fgmres { restart }),
            other => Err(Error::InvalidConfig(format!("unknown Krylov method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrylovConfig {
    pub method: KrylovMethod,
    /// Relative tolerance on the true (unpreconditioned) residual.
    pub rtol: f64,
    pub atol: f64,
    pub maxiter: usize,
}

impl Default for KrylovConfig {
    fn default() -> Self {
        KrylovConfig { method: KrylovMethod::Cg, rtol: 1e-8, atol: 0.0, maxiter: 10_000 }
    }
}

impl KrylovConfig {
    pub fn cg(rtol: f64) -> Self {
        KrylovConfig { method: KrylovMethod::Cg, rtol, ..Default::default() }
    }

    pub fn gmres(rtol: f64, restart: usize) -> Self {
        KrylovConfig { method: KrylovMethod::Gmres { restart }, rtol, ..Default::default() }
    }

    pub fn fgmres(rtol: f64, restart: usize) -> Self {
        KrylovConfig { method: KrylovMethod::Fgmres { restart }, rtol, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.rtol < 1.0) {
            return Err(Error::InvalidConfig(format!("rtol must lie in (0, 1), got {}", self.rtol)));
        }
        if self.maxiter == 0 {
            return Err(Error::InvalidConfig("maxiter must be at least 1".into()));
        }
        if let KrylovMethod::Gmres { restart } | KrylovMethod::Fgmres { restart } = self.method {
            if restart == 0 {
                return Err(Error::InvalidConfig("restart must be at least 1".into()));
            }
        }
        if self.atol < 0.0 {
            return Err(Error::InvalidConfig("atol must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub method: KrylovMethod,
    pub iterations: usize,
    /// `||b - A x|| / ||b||` recomputed from the returned solution.
    pub relative_residual: f64,
    pub converged: bool,
    pub setup_seconds: f64,
    pub solve_seconds: f64,
    /// Relative residual estimate after each iteration.
    pub history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn residual(a: &dyn LinearOperator, b: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    let mut r = vec![0.0; b.len()];
    a.apply(x, &mut r)?;
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    Ok(r)
}

fn precondition(pc: Option<&dyn Preconditioner>, r: &[f64]) -> Result<Vec<f64>> {
    match pc {
        Some(p) => {
            let mut z = vec![0.0; r.len()];
            p.apply(r, &mut z)?;
            Ok(z)
        }
        None => Ok(r.to_vec()),
    }
}

/// Solves `A x = b` from a zero initial guess. Non-convergence is reported,
/// not raised.
pub fn krylov_solve(
    a: &dyn LinearOperator,
    b: &[f64],
    cfg: &KrylovConfig,
    pc: Option<&dyn Preconditioner>,
) -> Result<(Vec<f64>, SolveReport)> {
    drive(a, b, cfg, pc, &mut |_| {})
}

/// Preconditioned CG calling `monitor` with every iterate.
pub fn conjugate_gradient(
    a: &dyn LinearOperator,
    b: &[f64],
    cfg: &KrylovConfig,
    pc: Option<&dyn Preconditioner>,
    monitor: &mut dyn FnMut(&[f64]),
) -> Result<(Vec<f64>, SolveReport)> {
    let cfg = KrylovConfig { method: KrylovMethod::Cg, ..*cfg };
    drive(a, b, &cfg, pc, monitor)
}

fn drive(
    a: &dyn LinearOperator,
    b: &[f64],
    cfg: &KrylovConfig,
    pc: Option<&dyn Preconditioner>,
    monitor: &mut dyn FnMut(&[f64]),
) -> Result<(Vec<f64>, SolveReport)> {
    cfg.validate()?;
    let n = a.dim();
    if b.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: b.len() });
    }
    let start = Instant::now();
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    let mut report = SolveReport {
        method: cfg.method,
        iterations: 0,
        relative_residual: 0.0,
        converged: true,
        setup_seconds: 0.0,
        solve_seconds: 0.0,
        history: Vec::new(),
    };
    if bnorm == 0.0 {
        return Ok((x, report));
    }
    let target = (cfg.rtol * bnorm).max(cfg.atol);
    loop {
        let budget = cfg.maxiter - report.iterations;
        let done = match cfg.method {
            KrylovMethod::Cg => cg(a, b, &mut x, target, budget, pc, bnorm, &mut report.history, monitor)?,
            KrylovMethod::Gmres { restart } => gmres(a, b, &mut x, target, budget, restart, false, pc, bnorm, &mut report.history)?,
            KrylovMethod::Fgmres { restart } => gmres(a, b, &mut x, target, budget, restart, true, pc, bnorm, &mut report.history)?,
        };
        report.iterations += done;
        let rn = norm(&residual(a, b, &x)?);
        report.relative_residual = rn / bnorm;
        report.converged = rn <= target;
        // the recursive residual can drift from the true one; keep going if so
        if report.converged || report.iterations >= cfg.maxiter || done == 0 {
            break;
        }
    }
    report.solve_seconds = start.elapsed().as_secs_f64();
    Ok((x, report))
}

#[allow(clippy::too_many_arguments)]
fn cg(
    a: &dyn LinearOperator,
    b: &[f64],
    x: &mut [f64],
    target: f64,
    maxit: usize,
    pc: Option<&dyn Preconditioner>,
    bnorm: f64,
    history: &mut Vec<f64>,
    monitor: &mut dyn FnMut(&[f64]),
) -> Result<usize> {
    let n = b.len();
    let mut r = residual(a, b, x)?;
    if norm(&r) <= target {
        return Ok(0);
    }
    let mut z = precondition(pc, &r)?;
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut q = vec![0.0; n];
    for it in 1..=maxit {
        a.apply(&p, &mut q)?;
        let pq = dot(&p, &q);
        if pq <= 0.0 || !pq.is_finite() {
            return Ok(it - 1);
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        let rn = norm(&r);
        history.push(rn / bnorm);
        monitor(x);
        if rn <= target {
            return Ok(it);
        }
        z = precondition(pc, &r)?;
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Ok(maxit)
}

#[allow(clippy::too_many_arguments)]
fn gmres(
    a: &dyn LinearOperator,
    b: &[f64],
    x: &mut [f64],
    target: f64,
    maxit: usize,
    restart: usize,
    flexible: bool,
    pc: Option<&dyn Preconditioner>,
    bnorm: f64,
    history: &mut Vec<f64>,
) -> Result<usize> {
    let n = b.len();
    let mut total = 0;
    while total < maxit {
        let r = residual(a, b, x)?;
        let beta = norm(&r);
        if beta <= target {
            break;
        }
        let m = restart.min(maxit - total);
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|ri| ri / beta).collect()];
        let mut zs: Vec<Vec<f64>> = Vec::new();
        let mut h = vec![vec![0.0; m]; m + 1];
        let (mut cs, mut sn) = (vec![0.0; m], vec![0.0; m]);
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k = 0;
        let mut w = vec![0.0; n];
        while k < m {
            let z = precondition(pc, &v[k])?;
            a.apply(&z, &mut w)?;
            if flexible {
                zs.push(z);
            }
            for (i, vi) in v.iter().enumerate() {
                let hik = dot(&w, vi);
                h[i][k] = hik;
                for (wj, vj) in w.iter_mut().zip(vi) {
                    *wj -= hik * vj;
                }
            }
            let hn = norm(&w);
            h[k + 1][k] = hn;
            for i in 0..k {
                let t = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
                h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                h[i][k] = t;
            }
            let d = h[k][k].hypot(h[k + 1][k]);
            if d == 0.0 {
                break;
            }
            cs[k] = h[k][k] / d;
            sn[k] = h[k + 1][k] / d;
            h[k][k] = d;
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k += 1;
            total += 1;
            let est = g[k].abs();
            history.push(est / bnorm);
            if est <= target || hn <= 1e-14 * beta {
                break;
            }
            v.push(w.iter().map(|wi| wi / hn).collect());
        }
        if k == 0 {
            break;
        }
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for j in i + 1..k {
                s -= h[i][j] * y[j];
            }
            y[i] = s / h[i][i];
        }
        if flexible {
            for (yi, zi) in y.iter().zip(&zs) {
                for (xj, zj) in x.iter_mut().zip(zi) {
                    *xj += yi * zj;
                }
            }
        } else {
            let mut u = vec![0.0; n];
            for (yi, vi) in y.iter().zip(&v) {
                for (uj, vj) in u.iter_mut().zip(vi) {
                    *uj += yi * vj;
                }
            }
            let du = precondition(pc, &u)?;
            for (xj, dj) in x.iter_mut().zip(&du) {
                *xj += dj;
            }
        }
        if g[k].abs() <= target {
            break;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::{CsrMatrix, Jacobi, SparseLu};
    use rand::{rngs::StdRng, Rng, SeedableRng};

    fn laplace_1d(n: usize) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0 + 0.01 * i as f64));
            if i > 0 {
                t.push((i, i - 1, -1.0));
                t.push((i - 1, i, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, n, &t).unwrap()
    }

    fn methods() -> [KrylovMethod; 3] {
        [KrylovMethod::Cg, KrylovMethod::Gmres { restart: 20 }, KrylovMethod::Fgmres { restart: 20 }]
    }

    #[test]
    fn identity_one_iteration() {
        let a = CsrMatrix::identity(7);
        let b: Vec<f64> = (0..7).map(|i| i as f64 - 3.0).collect();
        for m in methods() {
            let (x, rep) = krylov_solve(&a, &b, &KrylovConfig { method: m, ..Default::default() }, None).unwrap();
            assert_eq!(rep.iterations, 1, "{m}");
            assert!(rep.converged);
            assert!(x.iter().zip(&b).all(|(p, q)| (p - q).abs() < 1e-14));
        }
    }

    #[test]
    fn exact_preconditioner_one_iteration() {
        let a = laplace_1d(40);
        let lu = SparseLu::new(&a).unwrap();
        let b = vec![1.0; 40];
        for m in methods() {
            let (_, rep) = krylov_solve(&a, &b, &KrylovConfig { method: m, ..Default::default() }, Some(&lu)).unwrap();
            assert_eq!(rep.iterations, 1, "{m}");
            assert!(rep.relative_residual < 1e-8);
        }
    }

    #[test]
    fn all_methods_agree_with_direct() {
        let a = laplace_1d(60);
        let mut rng = StdRng::seed_from_u64(1);
        let b: Vec<f64> = (0..60).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let xd = SparseLu::new(&a).unwrap().solve(&b).unwrap();
        let jac = Jacobi::new(&a);
        for m in methods() {
            for pc in [None, Some(&jac as &dyn Preconditioner)] {
                let cfg = KrylovConfig { method: m, rtol: 1e-12, ..Default::default() };
                let (x, rep) = krylov_solve(&a, &b, &cfg, pc).unwrap();
                assert!(rep.converged && rep.relative_residual <= 1e-12);
                assert!(x.iter().zip(&xd).all(|(p, q)| (p - q).abs() < 1e-9), "{m}");
            }
        }
    }

    #[test]
    fn cg_energy_error_non_increasing() {
        let a = laplace_1d(30);
        let xs: Vec<f64> = (0..30).map(|i| (i as f64 * 0.3).sin()).collect();
        let b = a.matvec(&xs);
        let mut errs = Vec::new();
        let mut mon = |x: &[f64]| {
            let e: Vec<f64> = x.iter().zip(&xs).map(|(p, q)| p - q).collect();
            errs.push(e.iter().zip(a.matvec(&e)).map(|(p, q)| p * q).sum::<f64>().sqrt());
        };
        conjugate_gradient(&a, &b, &KrylovConfig::cg(1e-12), None, &mut mon).unwrap();
        assert!(errs.len() > 2);
        for w in errs.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn gmres_residual_monotone_within_cycle() {
        let mut t = Vec::new();
        let n = 50;
        let mut rng = StdRng::seed_from_u64(9);
        for i in 0..n {
            t.push((i, i, 4.0));
            t.push((i, (i + 1) % n, rng.gen_range(-1.5..1.5)));
            t.push((i, (i + 7) % n, rng.gen_range(-1.5..1.5)));
        }
        let a = CsrMatrix::from_triplets(n, n, &t).unwrap();
        let b = vec![1.0; n];
        let (_, rep) = krylov_solve(&a, &b, &KrylovConfig::gmres(1e-10, 100), None).unwrap();
        assert!(rep.converged);
        for w in rep.history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn non_convergence_is_data() {
        let a = laplace_1d(100);
        let b = vec![1.0; 100];
        let cfg = KrylovConfig { maxiter: 3, ..KrylovConfig::cg(1e-12) };
        let (_, rep) = krylov_solve(&a, &b, &cfg, None).unwrap();
        assert!(!rep.converged);
        assert_eq!(rep.iterations, 3);
        assert!(krylov_solve(&a, &b[..10], &cfg, None).is_err());
        assert!(krylov_solve(&a, &b, &KrylovConfig { rtol: 2.0, ..cfg }, None).is_err());
    }

    #[test]
    fn zero_rhs() {
        let a = laplace_1d(5);
        let (x, rep) = krylov_solve(&a, &[0.0; 5], &KrylovConfig::default(), None).unwrap();
        assert_eq!(rep.iterations, 0);
        assert!(x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn parse_methods() {
        assert_eq!("gmres(12)".parse::<KrylovMethod>().unwrap(), KrylovMethod::Gmres { restart: 12 });
        assert_eq!("fgmres".parse::<KrylovMethod>().unwrap(), KrylovMethod::Fgmres { restart: 30 });
        assert!("bicg".parse::<KrylovMethod>().is_err());
    }
}
