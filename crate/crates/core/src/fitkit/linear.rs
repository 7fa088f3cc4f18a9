use crate::error::{Error, Result};

/// Straight-line fit `y = a + b·x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFitResult {
    pub intercept: f64,
    pub slope: f64,
    pub intercept_sigma: f64,
    pub slope_sigma: f64,
    pub covariance: f64,
    /// Weighted residual sum of squares over the degrees of freedom. NaN for two points.
    pub residual_variance: f64,
    pub points: usize,
}

impl LinearFitResult {
    pub fn predict(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }

    /// Standard deviation of the line value at `x`.
    pub fn predict_sigma(&self, x: f64) -> f64 {
        (self.intercept_sigma.powi(2) + x * x * self.slope_sigma.powi(2) + 2.0 * x * self.covariance)
            .max(0.0)
            .sqrt()
    }
}

/// Weighted least-squares line through `points`.
///
/// Without weights every point counts equally. Uncertainties use the
/// residual variance (scaled covariance), so they are NaN with only two points.
pub fn linear_fit(points: &[(f64, f64)], weights: Option<&[f64]>) -> Result<LinearFitResult> {
    if points.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "linear fit needs at least 2 points, got {}",
            points.len()
        )));
    }
    if let Some(w) = weights {
        if w.len() != points.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                found: w.len(),
            });
        }
        if w.iter().any(|&w| !(w.is_finite() && w > 0.0)) {
            return Err(Error::invalid("weights must be positive and finite"));
        }
    }
    if points.iter().any(|(x, y)| !(x.is_finite() && y.is_finite())) {
        return Err(Error::invalid("linear fit points must be finite"));
    }
    let weight = |i: usize| weights.map_or(1.0, |w| w[i]);

    let sw: f64 = (0..points.len()).map(weight).sum();
    let x_mean = points.iter().enumerate().map(|(i, p)| weight(i) * p.0).sum::<f64>() / sw;
    let y_mean = points.iter().enumerate().map(|(i, p)| weight(i) * p.1).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (i, &(x, y)) in points.iter().enumerate() {
        let dx = x - x_mean;
        sxx += weight(i) * dx * dx;
        sxy += weight(i) * dx * (y - y_mean);
    }
    let x_scale = points.iter().fold(0.0f64, |m, p| m.max(p.0.abs()));
    if !(sxx > (f64::EPSILON * x_scale).powi(2) * sw) {
        return Err(Error::Singular("all x values are identical".into()));
    }
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;

    let dof = points.len() - 2;
    let residual_variance = if dof == 0 {
        f64::NAN
    } else {
        let rss: f64 = points
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| weight(i) * (y - intercept - slope * x).powi(2))
            .sum();
        rss / dof as f64
    };
    let slope_var = residual_variance / sxx;
    let intercept_var = residual_variance * (1.0 / sw + x_mean * x_mean / sxx);
    Ok(LinearFitResult {
        intercept,
        slope,
        intercept_sigma: intercept_var.sqrt(),
        slope_sigma: slope_var.sqrt(),
        covariance: -x_mean * slope_var,
        residual_variance,
        points: points.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix2, Vector2};
    use proptest::prelude::*;

    // Independent route: solve the 2x2 normal equations directly.
    fn normal_equations(points: &[(f64, f64)], weights: &[f64]) -> (f64, f64) {
        let mut m = Matrix2::zeros();
        let mut v = Vector2::zeros();
        for (&(x, y), &w) in points.iter().zip(weights) {
            m += w * Matrix2::new(1.0, x, x, x * x);
            v += w * Vector2::new(y, x * y);
        }
        let sol = m.lu().solve(&v).unwrap();
        (sol[0], sol[1])
    }

    #[test]
    fn two_points_exact() {
        let fit = linear_fit(&[(0.0, 1.0), (1.0, 3.0)], None).unwrap();
        assert_eq!(fit.intercept, 1.0);
        assert_eq!(fit.slope, 2.0);
        assert!(fit.residual_variance.is_nan());
    }

    #[test]
    fn exact_line() {
        let pts: Vec<_> = (0..10).map(|i| (i as f64, 5.0 - 2.0 * i as f64)).collect();
        let fit = linear_fit(&pts, None).unwrap();
        assert_eq!(fit.slope, -2.0);
        assert_eq!(fit.intercept, 5.0);
        assert_eq!(fit.residual_variance, 0.0);
        assert_eq!(fit.slope_sigma, 0.0);
    }

    #[test]
    fn identical_x_is_singular() {
        let err = linear_fit(&[(1.0, 1.0), (1.0, 2.0), (1.0, 3.0)], None).unwrap_err();
        assert!(matches!(err, Error::Singular(_)));
        assert!(linear_fit(&[(1.0, 1.0)], None).is_err());
    }

    #[test]
    fn weights_are_validated() {
        let pts = [(0.0, 1.0), (1.0, 2.0), (2.0, 2.5)];
        assert!(linear_fit(&pts, Some(&[1.0, 0.0, 1.0])).is_err());
        assert!(linear_fit(&pts, Some(&[1.0, 1.0])).is_err());
    }

    #[test]
    fn uncertainty_matches_textbook_formula() {
        let pts = [(0.0, 0.1), (1.0, 0.9), (2.0, 2.2), (3.0, 2.9), (4.0, 4.1)];
        let fit = linear_fit(&pts, None).unwrap();
        let n = pts.len() as f64;
        let xm = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let sxx: f64 = pts.iter().map(|p| (p.0 - xm).powi(2)).sum();
        let rss: f64 = pts.iter().map(|p| (p.1 - fit.predict(p.0)).powi(2)).sum();
        let s2 = rss / (n - 2.0);
        assert!((fit.slope_sigma - (s2 / sxx).sqrt()).abs() < 1e-15);
        assert!((fit.intercept_sigma - (s2 * (1.0 / n + xm * xm / sxx)).sqrt()).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn agrees_with_normal_equations(
            pts in prop::collection::vec((-50.0f64..50.0, -100.0f64..100.0), 3..30),
            ws in prop::collection::vec(0.1f64..10.0, 30),
        ) {
            let xs_spread = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max)
                - pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
            prop_assume!(xs_spread > 1.0);
            let w = &ws[..pts.len()];
            let fit = linear_fit(&pts, Some(w)).unwrap();
            let (a, b) = normal_equations(&pts, w);
            prop_assert!((fit.intercept - a).abs() <= 1e-10 * (1.0 + a.abs()));
            prop_assert!((fit.slope - b).abs() <= 1e-10 * (1.0 + b.abs()));
        }

        #[test]
        fn slope_invariant_under_y_offset(
            pts in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..20),
            c in -100.0f64..100.0,
        ) {
            let spread = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max)
                - pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
            prop_assume!(spread > 0.5);
            let shifted: Vec<_> = pts.iter().map(|&(x, y)| (x, y + c)).collect();
            let f0 = linear_fit(&pts, None).unwrap();
            let f1 = linear_fit(&shifted, None).unwrap();
            prop_assert!((f0.slope - f1.slope).abs() <= 1e-9 * (1.0 + f0.slope.abs()));
            prop_assert!((f1.intercept - f0.intercept - c).abs() <= 1e-9 * (1.0 + c.abs() + f0.intercept.abs()));
        }
    }
}
