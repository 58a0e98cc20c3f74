//! Gauss-Legendre quadrature on [0, 1].

use std::sync::LazyLock;

/// Nodes and weights of an `n`-point Gauss-Legendre rule on [0, 1].
///
/// The weights are normalised to sum to exactly 1 in floating point, so
/// integrating the constant 1 returns 1.0 without rounding residue.
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Shared 64-point rule used for density normalisation constants.
pub static GL64: LazyLock<GaussLegendre> = LazyLock::new(|| GaussLegendre::new(64));

/// Shared 8-point rule used per subinterval when accumulating CDF grids.
pub static GL8: LazyLock<GaussLegendre> = LazyLock::new(|| GaussLegendre::new(8));

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 2, "rule needs at least two nodes");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n {
            // Tricomi-style initial guess, then Newton on P_n.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (p, d) = legendre_value_deriv(n, x);
                let step = p / d;
                x -= step;
                if step.abs() < 1e-15 {
                    break;
                }
            }
            let (_, dp) = legendre_value_deriv(n, x);
            // Map [-1,1] -> [0,1]: node (x+1)/2, weight w/2.
            nodes[n - 1 - i] = 0.5 * (x + 1.0);
            weights[n - 1 - i] = 1.0 / ((1.0 - x * x) * dp * dp);
        }
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        // Absorb the rounding residue into the last weight: with the partial
        // sum near 1, `1 - partial` is exact (Sterbenz), so a left-to-right
        // sum of the weights returns 1.0 bit-exactly.
        let partial: f64 = weights[..n - 1].iter().sum();
        weights[n - 1] = 1.0 - partial;
        GaussLegendre { nodes, weights }
    }

    /// Integrate `f` over [0, 1].
    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// Integrate `f` over [a, b].
    pub fn integrate_over(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let width = b - a;
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(a + width * x))
            .sum::<f64>()
            * width
    }
}

/// Value and derivative of the Legendre polynomial `P_n` at `x` on [-1, 1].
fn legendre_value_deriv(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}
