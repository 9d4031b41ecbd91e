use crate::error::{Error, Result};

pub const MAX_EXACTNESS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QuadratureKind {
    /// Reference triangle `(0,0), (1,0), (0,1)`.
    Cell,
    /// Unit interval `[0, 1]`.
    Edge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    /// Reference coordinates; edge rules use the first coordinate only.
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub exactness_degree: usize,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; m];
    let mut w = vec![0.0; m];
    for i in 0..m {
        // Chebyshev-like initial guess, refined by Newton on P_m
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (1.0, 0.0);
            for j in 1..=m {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j - 1) as f64 * z * p2 - (j - 1) as f64 * p3) / j as f64;
            }
            dp = m as f64 * (z * p1 - p2) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[m - 1 - i] = 0.5 * (z + 1.0);
        w[m - 1 - i] = 1.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

/// Returns a rule exact for polynomials up to `exactness` total degree.
pub fn quadrature(kind: QuadratureKind, exactness: usize) -> Result<QuadratureRule> {
    if exactness > MAX_EXACTNESS {
        return Err(Error::UnsupportedQuadrature(exactness));
    }
    match kind {
        QuadratureKind::Edge => {
            let m = exactness / 2 + 1;
            let (x, w) = gauss_legendre(m);
            Ok(QuadratureRule { points: x.into_iter().map(|t| [t, 0.0]).collect(), weights: w, exactness_degree: exactness })
        }
        QuadratureKind::Cell => {
            // Collapsed (Duffy) tensor rule: x = u, y = v (1 - u), dA = (1 - u) du dv.
            let m = (exactness + 3) / 2;
            let (x, w) = gauss_legendre(m);
            let mut points = Vec::with_capacity(m * m);
            let mut weights = Vec::with_capacity(m * m);
            for (&u, &wu) in x.iter().zip(&w) {
                for (&v, &wv) in x.iter().zip(&w) {
                    points.push([u, v * (1.0 - u)]);
                    weights.push(wu * wv * (1.0 - u));
                }
            }
            Ok(QuadratureRule { points, weights, exactness_degree: exactness })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: usize) -> f64 {
        (1..=n).map(|k| k as f64).product()
    }

    #[test]
    fn weights_sum_to_measure() {
        for d in 0..=MAX_EXACTNESS {
            let c = quadrature(QuadratureKind::Cell, d).unwrap();
            assert!((c.weights.iter().sum::<f64>() - 0.5).abs() < 1e-14);
            assert!(c.weights.iter().all(|&w| w > 0.0));
            let e = quadrature(QuadratureKind::Edge, d).unwrap();
            assert!((e.weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        }
        assert!(quadrature(QuadratureKind::Cell, 13).is_err());
    }

    #[test]
    fn named_values() {
        let c = quadrature(QuadratureKind::Cell, 1).unwrap();
        assert!((c.weights.iter().sum::<f64>() - 0.5).abs() < 1e-15);
        let c = quadrature(QuadratureKind::Cell, 4).unwrap();
        let v: f64 = c.points.iter().zip(&c.weights).map(|(p, w)| w * p[0].powi(2) * p[1].powi(2)).sum();
        assert!((v - 1.0 / 180.0).abs() < 1e-15);
        let e = quadrature(QuadratureKind::Edge, 3).unwrap();
        let v: f64 = e.points.iter().zip(&e.weights).map(|(p, w)| w * p[0].powi(3)).sum();
        assert!((v - 0.25).abs() < 1e-15);
    }

    #[test]
    fn monomial_exactness() {
        // int_T x^a y^b = a! b! / (a + b + 2)!
        for d in 0..=MAX_EXACTNESS {
            let c = quadrature(QuadratureKind::Cell, d).unwrap();
            let e = quadrature(QuadratureKind::Edge, d).unwrap();
            for a in 0..=d {
                let ve: f64 = e.points.iter().zip(&e.weights).map(|(p, w)| w * p[0].powi(a as i32)).sum();
                assert!((ve - 1.0 / (a as f64 + 1.0)).abs() < 1e-14);
                for b in 0..=d - a {
                    let exact = factorial(a) * factorial(b) / factorial(a + b + 2);
                    let v: f64 = c.points.iter().zip(&c.weights).map(|(p, w)| w * p[0].powi(a as i32) * p[1].powi(b as i32)).sum();
                    assert!((v - exact).abs() < 1e-14, "d={d} a={a} b={b}");
                }
            }
        }
    }
}
