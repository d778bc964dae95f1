use serde::{Deserialize, Serialize};

/// Least-squares line `log|diff| = slope · log ν + intercept`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

/// Fits the convergence order from `(ν, |diff|)` pairs; zero or non-finite
/// differences are skipped. `None` with fewer than two usable points.
pub fn fit_order(points: &[(f64, f64)]) -> Option<OrderFit> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(nu, d)| *nu > 0.0 && *d > 0.0 && d.is_finite())
        .map(|(nu, d)| (nu.ln(), d.ln()))
        .collect();
    let n = pts.len();
    if n < 2 {
        return None;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(OrderFit { slope, intercept: my - slope * mx, r_squared, n_points: n })
}

/// `a_i / a_{i+1}` for a sequence of errors.
pub fn successive_ratios(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| w[0] / w[1]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law() {
        let pts: Vec<(f64, f64)> = [0.2, 0.1, 0.05].iter().map(|&nu| (nu, 3.0 * nu * nu)).collect();
        let f = fit_order(&pts).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(fit_order(&[(0.1, 1.0)]).is_none());
        assert!(fit_order(&[(0.1, 1.0), (0.1, 2.0)]).is_none());
        assert_eq!(fit_order(&[(0.1, 0.0), (0.2, 1.0), (0.4, 2.0)]).unwrap().n_points, 2);
        assert_eq!(successive_ratios(&[4.0, 2.0, 1.0]), vec![2.0, 2.0]);
    }
}
