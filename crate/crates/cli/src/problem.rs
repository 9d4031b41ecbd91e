//! Manufactured solutions of `-div(kappa grad p) + c p = f` on the unit square.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use slatefem::forms::{Field, ProblemData};
use slatefem::Error;

/// Quadrature degree declared for the closed-form data fields.
const DATA_DEGREE: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProblemKind {
    /// `p = sin(pi x) sin(pi y)`.
    #[default]
    SinSin,
    /// `p = exp(sin(pi x) sin(pi y))`.
    ExpSin,
}

impl FromStr for ProblemKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "sin-sin" => Ok(ProblemKind::SinSin),
            "exp-sin" => Ok(ProblemKind::ExpSin),
            other => Err(Error::InvalidConfig(format!("unknown problem {other:?} (sin-sin, exp-sin)"))),
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProblemKind::SinSin => "sin-sin",
            ProblemKind::ExpSin => "exp-sin",
        })
    }
}

/// Closed-form `p` with constant `kappa` and `c`; `u = -kappa grad p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManufacturedProblem {
    pub kind: ProblemKind,
    pub kappa: f64,
    pub c: f64,
}

impl ManufacturedProblem {
    pub fn new(kind: ProblemKind) -> Self {
        ManufacturedProblem { kind, kappa: 1.0, c: 1.0 }
    }

    fn s(x: [f64; 2]) -> (f64, [f64; 2]) {
        let (sx, cx) = (PI * x[0]).sin_cos();
        let (sy, cy) = (PI * x[1]).sin_cos();
        (sx * sy, [PI * cx * sy, PI * sx * cy])
    }

    pub fn p(&self, x: [f64; 2]) -> f64 {
        let (s, _) = Self::s(x);
        match self.kind {
            ProblemKind::SinSin => s,
            ProblemKind::ExpSin => s.exp(),
        }
    }

    pub fn grad_p(&self, x: [f64; 2]) -> [f64; 2] {
        let (s, ds) = Self::s(x);
        match self.kind {
            ProblemKind::SinSin => ds,
            ProblemKind::ExpSin => [s.exp() * ds[0], s.exp() * ds[1]],
        }
    }

    pub fn laplacian_p(&self, x: [f64; 2]) -> f64 {
        let (s, ds) = Self::s(x);
        // lap s = -2 pi^2 s
        let lap_s = -2.0 * PI * PI * s;
        match self.kind {
            ProblemKind::SinSin => lap_s,
            ProblemKind::ExpSin => s.exp() * (ds[0] * ds[0] + ds[1] * ds[1] + lap_s),
        }
    }

    pub fn u(&self, x: [f64; 2]) -> [f64; 2] {
        let g = self.grad_p(x);
        [-self.kappa * g[0], -self.kappa * g[1]]
    }

    pub fn div_u(&self, x: [f64; 2]) -> f64 {
        -self.kappa * self.laplacian_p(x)
    }

    pub fn f(&self, x: [f64; 2]) -> f64 {
        self.div_u(x) + self.c * self.p(x)
    }

    /// Outward normal flux `u . n` at a boundary point (the side is taken
    /// from the nearest edge of the square).
    pub fn g(&self, x: [f64; 2]) -> f64 {
        let u = self.u(x);
        let d = [x[0], 1.0 - x[0], x[1], 1.0 - x[1]];
        let side = (0..4).min_by(|&a, &b| d[a].total_cmp(&d[b])).expect("four sides");
        match side {
            0 => -u[0],
            1 => u[0],
            2 => -u[1],
            _ => u[1],
        }
    }

    /// Problem data for the discretizations with LDG-H stabilization `tau`.
    pub fn data(&self, tau: Field) -> ProblemData {
        let me = *self;
        ProblemData {
            kappa: Field::constant(self.kappa),
            c: Field::constant(self.c),
            f: Field::scalar("f", DATA_DEGREE, move |x| me.f(x)),
            p0: Field::scalar("p0", DATA_DEGREE, move |x| me.p(x)),
            g: Field::scalar("g", DATA_DEGREE, move |x| me.g(x)),
            tau,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{rngs::StdRng, Rng, SeedableRng};

    /// Fourth-order central differences.
    fn fd_laplacian(p: impl Fn([f64; 2]) -> f64, x: [f64; 2]) -> f64 {
        let h = 1e-3;
        let mut acc = 0.0;
        for d in 0..2 {
            let at = |s: f64| {
                let mut y = x;
                y[d] += s * h;
                p(y)
            };
            acc += (-at(2.0) + 16.0 * at(1.0) - 30.0 * at(0.0) + 16.0 * at(-1.0) - at(-2.0)) / (12.0 * h * h);
        }
        acc
    }

    #[test]
    fn source_consistent_with_finite_differences() {
        let mut rng = StdRng::seed_from_u64(11);
        for kind in [ProblemKind::SinSin, ProblemKind::ExpSin] {
            let pb = ManufacturedProblem::new(kind);
            for _ in 0..50 {
                let x = [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)];
                let f_fd = -pb.kappa * fd_laplacian(|y| pb.p(y), x) + pb.c * pb.p(x);
                let scale = pb.f(x).abs().max(1.0);
                assert!((f_fd - pb.f(x)).abs() < 1e-6 * scale, "{kind}: {f_fd} vs {}", pb.f(x));
                let h = 1e-6;
                let gx = (pb.p([x[0] + h, x[1]]) - pb.p([x[0] - h, x[1]])) / (2.0 * h);
                let gy = (pb.p([x[0], x[1] + h]) - pb.p([x[0], x[1] - h])) / (2.0 * h);
                let g = pb.grad_p(x);
                assert!((gx - g[0]).abs() < 1e-6 && (gy - g[1]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn sin_sin_source_closed_form() {
        let pb = ManufacturedProblem::new(ProblemKind::SinSin);
        let x = [0.3, 0.7];
        assert!((pb.f(x) - (2.0 * PI * PI + 1.0) * pb.p(x)).abs() < 1e-12);
        assert!(pb.p([0.0, 0.4]).abs() < 1e-15);
    }

    #[test]
    fn boundary_flux_uses_outward_normal() {
        let pb = ManufacturedProblem::new(ProblemKind::SinSin);
        // u = -grad p; on x = 0, dp/dx = pi sin(pi y) so u.n = +pi sin(pi y)
        let y: f64 = 0.25;
        assert!((pb.g([0.0, y]) - PI * (PI * y).sin()).abs() < 1e-12);
        assert!((pb.g([1.0, y]) - PI * (PI * y).sin()).abs() < 1e-12);
        assert!((pb.g([y, 1.0]) - PI * (PI * y).sin()).abs() < 1e-12);
    }

    #[test]
    fn names_roundtrip() {
        for k in [ProblemKind::SinSin, ProblemKind::ExpSin] {
            assert_eq!(k.to_string().parse::<ProblemKind>().unwrap(), k);
        }
        assert!("cos".parse::<ProblemKind>().is_err());
    }
}
