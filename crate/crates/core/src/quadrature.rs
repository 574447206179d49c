//! Gauss-Hermite quadrature for the weight `exp(-x^2)`.

use std::f64::consts::PI;

/// Nodes and weights of an `n`-point rule, nodes ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Newton iteration on the orthonormal Hermite recurrence, seeded with the
    /// usual asymptotic root estimates.
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "quadrature order must be positive");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let pim4 = PI.powf(-0.25);
        let half = n.div_ceil(2);
        let nf = n as f64;
        let mut z = 0.0_f64;
        for i in 0..half {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * nodes[0],
                3 => 1.91 * z - 0.91 * nodes[1],
                _ => 2.0 * z - nodes[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let (p1, deriv) = orthonormal_hermite(n, z, pim4);
                pp = deriv;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            let (_, deriv) = orthonormal_hermite(n, z, pim4);
            pp = if deriv != 0.0 { deriv } else { pp };
            nodes[i] = z;
            nodes[n - 1 - i] = -z;
            let w = 2.0 / (pp * pp);
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        nodes.reverse();
        weights.reverse();
        GaussHermite { nodes, weights }
    }

    /// `sum_i w_i f(x_i)`, approximating `int f(x) exp(-x^2) dx`.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Value of the degree-`n` orthonormal Hermite function and its derivative.
fn orthonormal_hermite(n: usize, z: f64, pim4: f64) -> (f64, f64) {
    let mut p1 = pim4;
    let mut p2 = 0.0;
    for j in 1..=n {
        let p3 = p2;
        p2 = p1;
        let jf = j as f64;
        p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
    }
    let deriv = (2.0 * n as f64).sqrt() * p2;
    (p1, deriv)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn double_factorial_odd(k: usize) -> f64 {
        (1..=k).step_by(2).map(|v| v as f64).product()
    }

    /// `int x^{2k} exp(-x^2) dx = (2k-1)!! sqrt(pi) / 2^k`.
    fn even_moment(k: usize) -> f64 {
        let df = if k == 0 {
            1.0
        } else {
            double_factorial_odd(2 * k - 1)
        };
        df * PI.sqrt() / 2f64.powi(k as i32)
    }

    #[test]
    fn exact_on_polynomials_up_to_degree_2n_minus_1() {
        for n in [1, 2, 5, 10, 20, 40] {
            let gh = GaussHermite::new(n);
            for k in 0..n {
                let got = gh.integrate(|x| x.powi(2 * k as i32));
                let want = even_moment(k);
                assert!(
                    (got - want).abs() <= 1e-10 * want.max(1.0),
                    "n={n} k={k}: {got} vs {want}"
                );
                let odd = gh.integrate(|x| x.powi(2 * k as i32 + 1));
                assert!(odd.abs() < 1e-9 * want.max(1.0));
            }
        }
    }

    #[test]
    fn weights_sum_to_sqrt_pi_for_high_orders() {
        for n in [80, 160] {
            let gh = GaussHermite::new(n);
            let s: f64 = gh.weights.iter().sum();
            assert!((s - PI.sqrt()).abs() < 1e-12, "n={n}: {s}");
            assert!(gh.nodes.windows(2).all(|w| w[0] < w[1]));
            assert!(gh.weights.iter().all(|w| *w > 0.0));
        }
    }

    #[test]
    fn gaussian_expectation_of_cosine() {
        // E[cos(X)] with X ~ N(0, 1/2) equals exp(-1/4)
        let gh = GaussHermite::new(30);
        let got = gh.integrate(f64::cos) / PI.sqrt();
        assert!((got - (-0.25f64).exp()).abs() < 1e-13);
    }
}
