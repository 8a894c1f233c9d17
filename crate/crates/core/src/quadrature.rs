//! Gauss–Legendre rules and the composite integrators built on them.
//!
//! Integrals over a spectral support `[a, b]` are taken in the angle variable
//! `ω = c + r·sin θ`, which turns the square-root band edges of semicircular
//! densities into smooth integrands and is harmless for smooth ones.

use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::OnceLock;

/// Nodes per Gauss–Legendre panel.
pub const PANEL_NODES: usize = 64;

/// Nodes and weights of an `n`-point Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Tricomi initial guess, then Newton on P_n.
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    let (_, d) = legendre_with_derivative(n, x);
                    dp = d;
                    break;
                }
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
        Self { nodes, weights }
    }

    /// The shared 64-node rule.
    pub fn panel() -> &'static GaussLegendre {
        static RULE: OnceLock<GaussLegendre> = OnceLock::new();
        RULE.get_or_init(|| GaussLegendre::new(PANEL_NODES))
    }

    /// Nodes and weights mapped onto `[lo, hi]`.
    pub fn mapped(&self, lo: f64, hi: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, half * w))
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Composite Gauss–Legendre over `[lo, hi]` with `panels` equal panels.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, panels: usize) -> f64 {
    let rule = GaussLegendre::panel();
    let panels = panels.max(1);
    let h = (hi - lo) / panels as f64;
    let mut total = 0.0;
    for k in 0..panels {
        let a = lo + h * k as f64;
        for (x, w) in rule.mapped(a, a + h) {
            total += w * f(x);
        }
    }
    total
}

/// Quadrature nodes `(ω, weight)` for `∫_lo^hi f(ω) dω` taken in the angle
/// variable, with the θ-range optionally split at extra break points (given
/// as frequencies strictly inside the interval).
pub fn angle_nodes(lo: f64, hi: f64, panels: usize, breaks: &[f64]) -> Vec<(f64, f64)> {
    let rule = GaussLegendre::panel();
    let mid = 0.5 * (hi + lo);
    let rad = 0.5 * (hi - lo);
    let mut cuts: Vec<f64> = vec![-FRAC_PI_2, FRAC_PI_2];
    for &b in breaks {
        if b > lo && b < hi {
            cuts.push(((b - mid) / rad).clamp(-1.0, 1.0).asin());
        }
    }
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-15);

    let panels = panels.max(1);
    let span = PI / panels as f64;
    let mut out = Vec::with_capacity(panels * PANEL_NODES + breaks.len() * PANEL_NODES);
    for seg in cuts.windows(2) {
        let (t0, t1) = (seg[0], seg[1]);
        let n = (((t1 - t0) / span).ceil() as usize).max(1);
        let h = (t1 - t0) / n as f64;
        for k in 0..n {
            let a = t0 + h * k as f64;
            for (theta, w) in rule.mapped(a, a + h) {
                out.push((mid + rad * theta.sin(), w * rad * theta.cos()));
            }
        }
    }
    out
}

/// `∫_lo^hi f(ω) dω` in the angle variable.
pub fn integrate_angle<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, panels: usize) -> f64 {
    angle_nodes(lo, hi, panels, &[])
        .into_iter()
        .map(|(x, w)| w * f(x))
        .sum()
}

/// Panel count for an oscillatory integrand `e^{iωt}` over a band of width
/// `width`.
pub fn oscillatory_panels(t: f64, width: f64) -> usize {
    let cycles = (t.abs() * width / (2.0 * PI)).ceil() as usize;
    (cycles * 4).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_two() {
        for n in [1, 2, 5, 16, 64] {
            let r = GaussLegendre::new(n);
            let s: f64 = r.weights.iter().sum();
            assert!((s - 2.0).abs() < 1e-13, "n={n} sum={s}");
        }
    }

    #[test]
    fn exact_for_high_degree_polynomials() {
        let r = GaussLegendre::new(10);
        // degree 19 is the limit for 10 nodes
        let v: f64 = r.nodes.iter().zip(&r.weights).map(|(x, w)| w * x.powi(18)).sum();
        assert!((v - 2.0 / 19.0).abs() < 1e-14);
    }

    #[test]
    fn angle_rule_handles_sqrt_edges() {
        // ∫_{-1}^{1} sqrt(1-x²) dx = π/2
        let v = integrate_angle(|x| (1.0 - x * x).max(0.0).sqrt(), -1.0, 1.0, 1);
        assert!((v - FRAC_PI_2).abs() < 1e-14);
    }

    #[test]
    fn angle_breaks_do_not_change_smooth_integrals() {
        let a: f64 = angle_nodes(0.0, 3.0, 2, &[]).iter().map(|(x, w)| w * x.exp()).sum();
        let b: f64 = angle_nodes(0.0, 3.0, 2, &[1.1, 2.5]).iter().map(|(x, w)| w * x.exp()).sum();
        let exact = 3.0f64.exp() - 1.0;
        assert!((a - exact).abs() < 1e-12 && (b - exact).abs() < 1e-12);
    }
}
