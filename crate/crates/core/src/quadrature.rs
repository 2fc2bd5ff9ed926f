//! Small quadrature and summation helpers shared by the diagnostics.

use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;

/// Gauss–Legendre nodes and weights mapped onto `[a, b]`, ordered by node.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let n = NonZeroUsize::new(n).expect("Gauss-Legendre rule needs at least one node");
    let half = 0.5 * (b - a);
    let mid = 0.5 * (b + a);
    let mut pairs: Vec<(f64, f64)> = GaussLegendre::new(n)
        .into_node_weight_pairs()
        .iter()
        .map(|&(x, w)| (mid + half * x, half * w))
        .collect();
    pairs.sort_by(|l, r| l.0.total_cmp(&r.0));
    pairs
}

/// Neumaier-compensated accumulator. Summation order is the caller's order,
/// so results are reproducible bit-for-bit.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if !t.is_finite() {
            // compensation is meaningless once the sum overflows
            self.sum = t;
            self.comp = 0.0;
            return;
        }
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        if !self.sum.is_finite() {
            return self.sum;
        }
        self.sum + self.comp
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

/// Compensated sum of an iterator.
pub fn csum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<CompensatedSum>().value()
}

/// Composite trapezoid weights for a (possibly non-uniform) increasing grid.
pub fn trapezoid_weights(grid: &[f64]) -> Vec<f64> {
    let n = grid.len();
    let mut w = vec![0.0; n];
    for k in 1..n {
        let h = grid[k] - grid[k - 1];
        w[k - 1] += 0.5 * h;
        w[k] += 0.5 * h;
    }
    w
}

/// Composite Simpson weights on a uniform grid with an even number of intervals.
/// Falls back to trapezoid weights when the interval count is odd.
pub fn simpson_weights(n_intervals: usize, spacing: f64) -> Vec<f64> {
    if n_intervals == 0 {
        return vec![0.0];
    }
    if n_intervals % 2 == 1 {
        let grid: Vec<f64> = (0..=n_intervals).map(|k| k as f64 * spacing).collect();
        return trapezoid_weights(&grid);
    }
    (0..=n_intervals)
        .map(|k| {
            let c = if k == 0 || k == n_intervals {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            c * spacing / 3.0
        })
        .collect()
}

/// Least-squares line `y ≈ intercept + slope·x` with its coefficient of determination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let nf = n as f64;
    let mx = csum(xs.iter().copied()) / nf;
    let my = csum(ys.iter().copied()) / nf;
    let sxx = csum(xs.iter().map(|x| (x - mx) * (x - mx)));
    let sxy = csum(xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)));
    let syy = csum(ys.iter().map(|y| (y - my) * (y - my)));
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Some(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Observed convergence order from `(h, error)` pairs, fitted in log-log space.
pub fn observed_order(history: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = history
        .iter()
        .filter(|(h, e)| *h > 0.0 && *e > 0.0)
        .map(|(h, e)| (h.ln(), e.ln()))
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    linear_fit(&xs, &ys).map(|f| f.slope)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let rule = gauss_legendre(16, -1.0, 3.0);
        let v: f64 = rule.iter().map(|(x, w)| w * x.powi(7)).sum();
        // ∫_{-1}^{3} x^7 = (3^8 - 1)/8
        assert!((v - (6561.0 - 1.0) / 8.0).abs() < 1e-9);
        assert!(rule.windows(2).all(|p| p[0].0 < p[1].0));
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut acc = CompensatedSum::new();
        acc.add(1e16);
        for _ in 0..10 {
            acc.add(1.0);
        }
        acc.add(-1e16);
        assert_eq!(acc.value(), 10.0);
    }

    #[test]
    fn infinite_terms_stay_infinite() {
        assert_eq!(csum([f64::INFINITY, 1.0, f64::INFINITY]), f64::INFINITY);
        assert!(csum([f64::INFINITY, f64::NEG_INFINITY]).is_nan());
    }

    #[test]
    fn simpson_is_exact_for_cubics() {
        let n = 8;
        let h = 0.25;
        let w = simpson_weights(n, h);
        let v: f64 = w
            .iter()
            .enumerate()
            .map(|(k, w)| w * (k as f64 * h).powi(3))
            .sum();
        assert!((v - 4.0).abs() < 1e-13);
    }

    #[test]
    fn order_of_pure_power_law() {
        let hist: Vec<(f64, f64)> = [0.1, 0.05, 0.025].iter().map(|&h| (h, 3.0 * h * h)).collect();
        assert!((observed_order(&hist).unwrap() - 2.0).abs() < 1e-12);
    }
}
