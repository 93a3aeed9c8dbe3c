//! Composite Gauss–Legendre panels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Settings for the panel-doubling integration of the two-atom kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    /// Gauss–Legendre points per panel.
    pub order: usize,
    /// Minimum starting panel count; the builder may start higher.
    pub panels: usize,
    /// Max-norm change between successive doublings that counts as converged.
    pub tol: f64,
    /// Give up once the panel count would exceed this.
    pub max_panels: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            order: 16,
            panels: 8,
            tol: 1e-10,
            max_panels: 1 << 14,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.order == 0 || self.panels == 0 {
            return Err(Error::InvalidParameter(
                "quadrature order and panels must be >= 1".into(),
            ));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter("quadrature tol must be > 0".into()));
        }
        if self.max_panels < self.panels {
            return Err(Error::InvalidParameter(
                "max_panels must be >= panels".into(),
            ));
        }
        Ok(())
    }
}

/// Nodes and weights of the n-point Gauss–Legendre rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..(n + 1) / 2 {
            // Tricomi initial guess, then Newton on P_n
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        GaussLegendre { nodes, weights }
    }

    /// Visit every (node, weight) of the composite rule on [a, b] with `panels`
    /// equal panels.
    pub fn for_each_point<F: FnMut(f64, f64)>(&self, a: f64, b: f64, panels: usize, mut f: F) {
        let h = (b - a) / panels as f64;
        for p in 0..panels {
            let lo = a + h * p as f64;
            let mid = lo + 0.5 * h;
            for (x, w) in self.nodes.iter().zip(&self.weights) {
                f(mid + 0.5 * h * x, 0.5 * h * w);
            }
        }
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, a: f64, b: f64, panels: usize, f: F) -> f64 {
        let mut acc = 0.0;
        self.for_each_point(a, b, panels, |x, w| acc += w * f(x));
        acc
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{overlap_density, overlap_weight};

    #[test]
    fn weights_sum_to_two_and_nodes_symmetric() {
        for n in 1..=24 {
            let gl = GaussLegendre::new(n);
            let s: f64 = gl.weights.iter().sum();
            assert!((s - 2.0).abs() < 1e-13, "n={n} s={s}");
            for i in 0..n {
                assert!((gl.nodes[i] + gl.nodes[n - 1 - i]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn exact_for_polynomials_up_to_degree_2n_minus_1() {
        let n = 8;
        let gl = GaussLegendre::new(n);
        for deg in 0..(2 * n) {
            let got = gl.integrate(0.0, 1.0, 1, |x| x.powi(deg as i32));
            let want = 1.0 / (deg as f64 + 1.0);
            assert!((got - want).abs() < 1e-14, "deg {deg}");
        }
    }

    #[test]
    fn oscillatory_integral_converges_with_panels() {
        let gl = GaussLegendre::new(16);
        let k = 150.0;
        let exact = (1.0 - (k * 1.0f64).cos()) / k;
        let coarse = gl.integrate(0.0, 1.0, 8, |x| (k * x).sin());
        let fine = gl.integrate(0.0, 1.0, 64, |x| (k * x).sin());
        assert!((fine - exact).abs() < 1e-14);
        assert!((coarse - exact).abs() > (fine - exact).abs());
    }

    #[test]
    fn overlap_density_normalized() {
        let gl = GaussLegendre::new(16);
        let (rate, tau) = (500.0, 4e-3);
        let int = gl.integrate(0.0, tau, 8, |s| overlap_density(s, rate, tau).unwrap());
        // closed-form antiderivative gives exactly one
        assert!((int - 1.0).abs() < 1e-12, "{int}");
        for &eps in &[0.0, 1e-3, 0.4, 2.0] {
            let int = gl.integrate(0.0, 1.0, 8, |u| overlap_weight(u, eps));
            assert!((int - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn spec_validation() {
        assert!(QuadratureSpec::default().validate().is_ok());
        let bad = QuadratureSpec {
            tol: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
