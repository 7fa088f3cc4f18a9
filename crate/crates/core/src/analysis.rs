//! Width-versus-excitation regression per density and the density-normalized
//! slope statistic built on it.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::fitkit::{linear_fit, LinearFitResult};

pub const MIN_SERIES_POINTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExcitationPoint {
    pub excitation: f64,
    /// GHz
    pub width: f64,
    /// GHz; zero or NaN when unknown.
    pub width_sigma: f64,
}

impl ExcitationPoint {
    pub fn new(excitation: f64, width: f64, width_sigma: f64) -> Self {
        Self {
            excitation,
            width,
            width_sigma,
        }
    }

    fn total_cmp(&self, other: &Self) -> Ordering {
        self.excitation
            .total_cmp(&other.excitation)
            .then(self.width.total_cmp(&other.width))
            .then(self.width_sigma.total_cmp(&other.width_sigma))
    }
}

/// Fitted widths at one density over a range of pump powers.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcitationSeries {
    /// cm⁻³
    pub density: f64,
    points: Vec<ExcitationPoint>,
}

impl ExcitationSeries {
    pub fn new(density: f64, mut points: Vec<ExcitationPoint>) -> Result<Self> {
        if !(density.is_finite() && density > 0.0) {
            return Err(Error::invalid(format!("density must be positive, got {density}")));
        }
        if points.len() < MIN_SERIES_POINTS {
            return Err(Error::InsufficientData(format!(
                "density {density:e} cm^-3 has {} excitation points, need at least {MIN_SERIES_POINTS}",
                points.len()
            )));
        }
        if let Some(p) = points.iter().find(|p| !(0.0..=1.0).contains(&p.excitation)) {
            return Err(Error::invalid(format!(
                "excitation factor {} outside [0, 1]",
                p.excitation
            )));
        }
        if points.iter().any(|p| !p.width.is_finite()) {
            return Err(Error::invalid("widths must be finite"));
        }
        points.sort_by(ExcitationPoint::total_cmp);
        Ok(Self { density, points })
    }

    pub fn points(&self) -> &[ExcitationPoint] {
        &self.points
    }
}

/// How the zero-pump width Γ(η=1) is obtained for the normalized slope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WidthNormalization {
    /// Γ₁ = a + b from the fitted line.
    #[default]
    FittedLine,
    /// Γ₁ from the measured point at η = 1.
    ZeroPumpPoint,
}

impl WidthNormalization {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fitted-line" => Ok(Self::FittedLine),
            "zero-pump-point" => Ok(Self::ZeroPumpPoint),
            other => Err(Error::Config(format!("unknown width normalization `{other}`"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::FittedLine => "fitted-line",
            Self::ZeroPumpPoint => "zero-pump-point",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeAnalysis {
    /// cm⁻³
    pub density: f64,
    /// Γ = a + b·η, GHz.
    pub line: LinearFitResult,
    /// Γ(η=1), GHz.
    pub zero_pump_width: f64,
    pub zero_pump_width_sigma: f64,
    /// b / Γ(η=1)
    pub normalized_slope: f64,
    pub normalized_slope_sigma: f64,
}

impl SlopeAnalysis {
    pub fn slope(&self) -> f64 {
        self.line.slope
    }

    pub fn slope_sigma(&self) -> f64 {
        self.line.slope_sigma
    }
}

fn inverse_variance_weights(sigmas: impl Iterator<Item = f64>) -> Option<Vec<f64>> {
    let w: Vec<f64> = sigmas.map(|s| 1.0 / (s * s)).collect();
    w.iter().all(|w| w.is_finite() && *w > 0.0).then_some(w)
}

/// Linear fit of Γ on η at one density and the normalized slope `b / Γ(η=1)`.
pub fn excitation_dependence(
    series: &ExcitationSeries,
    normalization: WidthNormalization,
) -> Result<SlopeAnalysis> {
    let pts: Vec<(f64, f64)> = series.points.iter().map(|p| (p.excitation, p.width)).collect();
    let weights = inverse_variance_weights(series.points.iter().map(|p| p.width_sigma));
    let line = linear_fit(&pts, weights.as_deref())?;
    let (a, b) = (line.intercept, line.slope);

    let (gamma1, gamma1_sigma, s, s_sigma) = match normalization {
        WidthNormalization::FittedLine => {
            let g1 = a + b;
            let var_g1 = line.intercept_sigma.powi(2) + line.slope_sigma.powi(2) + 2.0 * line.covariance;
            let ds_da = -b / (g1 * g1);
            let ds_db = a / (g1 * g1);
            let var_s = ds_da * ds_da * line.intercept_sigma.powi(2)
                + ds_db * ds_db * line.slope_sigma.powi(2)
                + 2.0 * ds_da * ds_db * line.covariance;
            (g1, var_g1.max(0.0).sqrt(), b / g1, var_s.max(0.0).sqrt())
        }
        WidthNormalization::ZeroPumpPoint => {
            let p = series
                .points
                .iter()
                .rev()
                .find(|p| (p.excitation - 1.0).abs() <= 1e-9)
                .ok_or_else(|| {
                    Error::InsufficientData(format!(
                        "density {:e} cm^-3 has no zero-pump (eta = 1) point",
                        series.density
                    ))
                })?;
            let g1 = p.width;
            let sg = if p.width_sigma.is_finite() { p.width_sigma } else { 0.0 };
            let var_s = (line.slope_sigma / g1).powi(2) + (b * sg / (g1 * g1)).powi(2);
            (g1, sg, b / g1, var_s.sqrt())
        }
    };
    if !(gamma1 > 0.0) {
        return Err(Error::invalid(format!(
            "zero-pump width {gamma1} GHz at density {:e} cm^-3 is not positive",
            series.density
        )));
    }
    Ok(SlopeAnalysis {
        density: series.density,
        line,
        zero_pump_width: gamma1,
        zero_pump_width_sigma: gamma1_sigma,
        normalized_slope: s,
        normalized_slope_sigma: s_sigma,
    })
}

fn sorted_rows(rows: &[SlopeAnalysis]) -> Vec<SlopeAnalysis> {
    let mut rows = rows.to_vec();
    rows.sort_by(|a, b| {
        a.density
            .total_cmp(&b.density)
            .then(a.normalized_slope.total_cmp(&b.normalized_slope))
    });
    rows
}

/// Linear fit of the per-density slope `b` against density.
pub fn slope_vs_density(rows: &[SlopeAnalysis]) -> Result<LinearFitResult> {
    let rows = sorted_rows(rows);
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.density, r.line.slope)).collect();
    let weights = inverse_variance_weights(rows.iter().map(|r| r.line.slope_sigma));
    linear_fit(&pts, weights.as_deref())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DensityVerdict {
    ConsistentWithZeroSlope,
    DensityDependent,
    /// Two densities leave no degrees of freedom for the trend uncertainty.
    Undetermined,
}

impl DensityVerdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::ConsistentWithZeroSlope => "consistent with zero slope",
            Self::DensityDependent => "density dependent",
            Self::Undetermined => "undetermined",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedSlopeSummary {
    /// Constant-model (zero-slope) fit value.
    pub mean: f64,
    pub standard_error: f64,
    /// χ² per degree of freedom of the constant model; NaN without weights.
    pub constant_reduced_chi2: f64,
    /// Unconstrained normalized slope versus density.
    pub trend: LinearFitResult,
    pub verdict: DensityVerdict,
    pub densities: usize,
}

/// Weighted mean of the normalized slopes, plus the trend test for density
/// independence (`|trend slope| ≤ 2σ`).
pub fn normalized_slope_aggregate(rows: &[SlopeAnalysis]) -> Result<NormalizedSlopeSummary> {
    if rows.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "normalized slope aggregate needs at least 2 densities, got {}",
            rows.len()
        )));
    }
    let rows = sorted_rows(rows);
    let s: Vec<f64> = rows.iter().map(|r| r.normalized_slope).collect();
    let n = s.len() as f64;
    let weights = inverse_variance_weights(rows.iter().map(|r| r.normalized_slope_sigma));

    let (mean, standard_error, chi2) = match &weights {
        Some(w) => {
            let sw: f64 = w.iter().sum();
            let mean = w.iter().zip(&s).map(|(w, s)| w * s).sum::<f64>() / sw;
            let chi2 = w.iter().zip(&s).map(|(w, s)| w * (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
            // Inflate by the Birge ratio when the scatter exceeds the quoted errors.
            (mean, (1.0 / sw).sqrt() * chi2.sqrt().max(1.0), chi2)
        }
        None => {
            let mean = s.iter().sum::<f64>() / n;
            let var = s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (mean, (var / n).sqrt(), f64::NAN)
        }
    };

    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.density, r.normalized_slope)).collect();
    let mut trend = linear_fit(&pts, weights.as_deref())?;
    if weights.is_some() && trend.residual_variance > 0.0 && trend.residual_variance < 1.0 {
        // Quoted errors are a floor: scatter below them must not shrink σ.
        let f = trend.residual_variance.sqrt().recip();
        trend.slope_sigma *= f;
        trend.intercept_sigma *= f;
        trend.covariance *= f * f;
    }
    let span = rows[rows.len() - 1].density - rows[0].density;
    let verdict = if trend.slope_sigma.is_nan() {
        DensityVerdict::Undetermined
    } else if trend.slope.abs() <= 2.0 * trend.slope_sigma
        || (trend.slope * span).abs() <= 1e-12 * mean.abs().max(1.0)
    {
        DensityVerdict::ConsistentWithZeroSlope
    } else {
        DensityVerdict::DensityDependent
    };
    Ok(NormalizedSlopeSummary {
        mean,
        standard_error,
        constant_reduced_chi2: chi2,
        trend,
        verdict,
        densities: rows.len(),
    })
}

/// Per-density lines, the slope-versus-density fit and the aggregate, as far
/// as the number of densities allows.
#[derive(Debug, Clone, PartialEq)]
pub struct CampaignAnalysis {
    pub series: Vec<ExcitationSeries>,
    pub rows: Vec<SlopeAnalysis>,
    /// Needs at least two densities.
    pub density_fit: Option<LinearFitResult>,
    pub aggregate: Option<NormalizedSlopeSummary>,
    pub normalization: WidthNormalization,
}

pub fn analyze_campaign(
    mut series: Vec<ExcitationSeries>,
    normalization: WidthNormalization,
) -> Result<CampaignAnalysis> {
    if series.is_empty() {
        return Err(Error::InsufficientData("no excitation series to analyze".into()));
    }
    series.sort_by(|a, b| a.density.total_cmp(&b.density));
    if let Some(w) = series.windows(2).find(|w| w[0].density == w[1].density) {
        return Err(Error::invalid(format!("duplicate density {:e} cm^-3", w[0].density)));
    }
    let rows = series
        .iter()
        .map(|s| excitation_dependence(s, normalization))
        .collect::<Result<Vec<_>>>()?;
    let (density_fit, aggregate) = if rows.len() >= 2 {
        (Some(slope_vs_density(&rows)?), Some(normalized_slope_aggregate(&rows)?))
    } else {
        (None, None)
    };
    Ok(CampaignAnalysis {
        series,
        rows,
        density_fit,
        aggregate,
        normalization,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exact_series(density: f64, a: f64, b: f64, etas: &[f64]) -> ExcitationSeries {
        ExcitationSeries::new(
            density,
            etas.iter().map(|&e| ExcitationPoint::new(e, a + b * e, 0.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn constructed_line_gives_point_nine() {
        let series = exact_series(1.3e17, 1.3, 11.7, &[0.36, 0.5, 0.75, 1.0]);
        let row = excitation_dependence(&series, WidthNormalization::FittedLine).unwrap();
        assert!((row.line.slope - 11.7).abs() < 1e-12);
        assert!((row.zero_pump_width - 13.0).abs() < 1e-12);
        assert!((row.normalized_slope - 0.9).abs() < 1e-12);
    }

    #[test]
    fn single_density_headline_ratio() {
        // b = 12.7 GHz at Γ₁ = 13.0 GHz
        let series = exact_series(1.3e17, 0.3, 12.7, &[0.36, 0.6, 1.0]);
        let row = excitation_dependence(&series, WidthNormalization::FittedLine).unwrap();
        assert!((row.normalized_slope - 12.7 / 13.0).abs() < 1e-12);
        assert!((row.normalized_slope - 0.977).abs() < 1e-3);
    }

    #[test]
    fn constant_width_has_zero_slope() {
        let series = exact_series(5e16, 4.0, 0.0, &[0.3, 0.6, 1.0]);
        let row = excitation_dependence(&series, WidthNormalization::FittedLine).unwrap();
        assert_eq!(row.line.slope, 0.0);
        assert_eq!(row.normalized_slope, 0.0);
    }

    #[test]
    fn zero_pump_point_normalization() {
        let mut pts: Vec<_> = [0.4, 0.7].iter().map(|&e| ExcitationPoint::new(e, 1.0 + 9.0 * e, 0.1)).collect();
        pts.push(ExcitationPoint::new(1.0, 10.5, 0.1));
        let series = ExcitationSeries::new(1e17, pts).unwrap();
        let row = excitation_dependence(&series, WidthNormalization::ZeroPumpPoint).unwrap();
        assert_eq!(row.zero_pump_width, 10.5);
        assert!((row.normalized_slope - row.line.slope / 10.5).abs() < 1e-15);

        let no_ref = exact_series(1e17, 1.0, 9.0, &[0.2, 0.4, 0.6]);
        assert!(excitation_dependence(&no_ref, WidthNormalization::ZeroPumpPoint).is_err());
    }

    #[test]
    fn series_validation() {
        assert!(ExcitationSeries::new(1e17, vec![ExcitationPoint::new(1.0, 1.0, 0.0); 2]).is_err());
        assert!(ExcitationSeries::new(
            1e17,
            vec![
                ExcitationPoint::new(1.2, 1.0, 0.0),
                ExcitationPoint::new(0.5, 1.0, 0.0),
                ExcitationPoint::new(0.3, 1.0, 0.0)
            ]
        )
        .is_err());
        assert!(ExcitationSeries::new(0.0, vec![ExcitationPoint::new(1.0, 1.0, 0.0); 3]).is_err());
    }

    #[test]
    fn same_excitation_everywhere_is_singular() {
        let series = ExcitationSeries::new(1e17, vec![ExcitationPoint::new(1.0, 3.0, 0.0); 3]).unwrap();
        assert!(matches!(
            excitation_dependence(&series, WidthNormalization::FittedLine),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn proportional_slopes_pass_through_origin() {
        let rows: Vec<_> = [2.2e16, 5e16, 1.3e17]
            .iter()
            .map(|&n| {
                let g1 = 13.0 * n / 1.3e17;
                excitation_dependence(&exact_series(n, 0.1 * g1, 0.9 * g1, &[0.4, 0.7, 1.0]), WidthNormalization::FittedLine)
                    .unwrap()
            })
            .collect();
        let fit = slope_vs_density(&rows).unwrap();
        assert!(fit.intercept.abs() < 1e-10);
        assert!(fit.slope > 0.0);
        assert!((fit.slope - 0.9 * 13.0 / 1.3e17).abs() < 1e-12 * fit.slope.abs().max(1e-30) + 1e-28);
    }

    #[test]
    fn two_rows_interpolate() {
        let rows: Vec<_> = [(1e17, 3.0), (2e17, 5.0)]
            .iter()
            .map(|&(n, b)| excitation_dependence(&exact_series(n, 1.0, b, &[0.2, 0.6, 1.0]), WidthNormalization::FittedLine).unwrap())
            .collect();
        let fit = slope_vs_density(&rows).unwrap();
        assert!((fit.predict(1e17) - 3.0).abs() < 1e-12);
        assert!((fit.predict(2e17) - 5.0).abs() < 1e-12);
        let agg = normalized_slope_aggregate(&rows).unwrap();
        assert_eq!(agg.verdict, DensityVerdict::Undetermined);
    }

    #[test]
    fn identical_normalized_slopes() {
        let rows: Vec<_> = [2.2e16, 5e16, 8e16, 1.3e17]
            .iter()
            .map(|&n| {
                let g1 = 13.0 * n / 1.3e17;
                excitation_dependence(&exact_series(n, 0.1 * g1, 0.9 * g1, &[0.36, 0.5, 1.0]), WidthNormalization::FittedLine)
                    .unwrap()
            })
            .collect();
        let agg = normalized_slope_aggregate(&rows).unwrap();
        assert!((agg.mean - 0.9).abs() < 1e-12);
        assert!(agg.trend.slope.abs() * 1.3e17 < 1e-10);
        assert_eq!(agg.verdict, DensityVerdict::ConsistentWithZeroSlope);
    }

    #[test]
    fn aggregate_needs_two_rows() {
        let row = excitation_dependence(&exact_series(1e17, 1.0, 9.0, &[0.2, 0.6, 1.0]), WidthNormalization::FittedLine).unwrap();
        assert!(matches!(normalized_slope_aggregate(&[row]), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn campaign_single_density_has_no_aggregate() {
        let a = analyze_campaign(vec![exact_series(1e17, 1.0, 9.0, &[0.2, 0.6, 1.0])], WidthNormalization::FittedLine).unwrap();
        assert_eq!(a.rows.len(), 1);
        assert!(a.aggregate.is_none() && a.density_fit.is_none());
    }

    #[test]
    fn campaign_is_order_invariant() {
        let mk = |order: &[usize]| {
            let all = [2.2e16, 7e16, 1.3e17];
            let series = order
                .iter()
                .map(|&i| {
                    let n = all[i];
                    let pts = [0.4, 1.0, 0.7, 0.55]
                        .iter()
                        .map(|&e| ExcitationPoint::new(e, n / 1e16 * (0.1 + 0.9 * e) + 0.01 * e * e, 0.05))
                        .collect::<Vec<_>>();
                    ExcitationSeries::new(n, if i == 1 { pts.into_iter().rev().collect() } else { pts }).unwrap()
                })
                .collect();
            analyze_campaign(series, WidthNormalization::FittedLine).unwrap()
        };
        assert_eq!(mk(&[0, 1, 2]), mk(&[2, 0, 1]));
    }

    #[test]
    fn strong_trend_is_flagged() {
        let rows: Vec<_> = [(2e16, 0.5), (5e16, 0.6), (8e16, 0.72), (1.1e17, 0.79), (1.3e17, 0.9)]
            .iter()
            .map(|&(n, s)| {
                let mut row = excitation_dependence(&exact_series(n, 1.0 - s, s, &[0.2, 0.6, 1.0]), WidthNormalization::FittedLine)
                    .unwrap();
                row.normalized_slope_sigma = 0.01;
                row
            })
            .collect();
        let agg = normalized_slope_aggregate(&rows).unwrap();
        assert_eq!(agg.verdict, DensityVerdict::DensityDependent);
    }
}
