//! Human-readable `key = value unit` reports and per-density CSV tables.
//!
//! Field order is fixed and numbers use the lossless 17-digit format, so a
//! report is a pure function of its inputs.

use std::fmt::Write as _;

use crate::analysis::CampaignAnalysis;
use crate::lineshape::format_f64;

use super::files::{FitRow, FitStatus};

const PARAM_UNITS: [(&str, &str); 5] = [
    ("width", "GHz"),
    ("excitation", "1"),
    ("shift", "GHz"),
    ("scale", "1"),
    ("offset", "signal"),
];

fn kv(out: &mut String, key: &str, value: f64, unit: &str) {
    let _ = writeln!(out, "{key} = {} {unit}", format_f64(value));
}

fn kv_text(out: &mut String, key: &str, value: &str) {
    let _ = writeln!(out, "{key} = {value}");
}

pub fn format_fit_report(rows: &[FitRow]) -> String {
    let mut out = String::from("# selref fit report\n");
    let converged = rows.iter().filter(|r| r.status == FitStatus::Converged).count();
    let _ = writeln!(out, "spectra = {}", rows.len());
    let _ = writeln!(out, "converged = {converged}");
    for (i, r) in rows.iter().enumerate() {
        let _ = writeln!(out, "\n[spectrum {}]", i + 1);
        kv_text(&mut out, "path", &r.spectrum_path.display().to_string());
        kv(&mut out, "density", r.density, "cm^-3");
        kv_text(&mut out, "pump_label", &r.pump_label);
        kv_text(
            &mut out,
            "status",
            match &r.status {
                FitStatus::Converged => "converged",
                FitStatus::NotConverged => "not-converged",
                FitStatus::Failed(_) => "failed",
            },
        );
        if let FitStatus::Failed(code) = &r.status {
            kv_text(&mut out, "error", code);
        }
        if let (Some(est), Some(unc)) = (r.estimates, r.uncertainties) {
            let (e, u) = (est.to_array(), unc.to_array());
            for (k, (name, unit)) in PARAM_UNITS.iter().enumerate() {
                kv(&mut out, name, e[k], unit);
                kv(&mut out, &format!("{name}_sigma"), u[k], unit);
            }
        }
        if let Some(rss) = r.rss {
            kv(&mut out, "residual_sum_squares", rss, "signal^2");
        }
        if let Some(it) = r.iterations {
            let _ = writeln!(out, "iterations = {it}");
        }
        if let Some(eta) = r.eta_truth {
            kv(&mut out, "excitation_truth", eta, "1");
        }
    }
    out
}

/// Outcome of comparing the aggregate against a target band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetBand {
    pub expected: f64,
    pub tolerance: f64,
}

pub fn format_analysis_report(analysis: &CampaignAnalysis, target: TargetBand) -> String {
    let mut out = String::from("# selref analysis report\n");
    kv_text(&mut out, "normalization", analysis.normalization.as_str());
    let _ = writeln!(out, "densities = {}", analysis.rows.len());
    for (i, (row, series)) in analysis.rows.iter().zip(&analysis.series).enumerate() {
        let _ = writeln!(out, "\n[density {}]", i + 1);
        kv(&mut out, "density", row.density, "cm^-3");
        let _ = writeln!(out, "points = {}", series.points().len());
        kv(&mut out, "intercept", row.line.intercept, "GHz");
        kv(&mut out, "intercept_sigma", row.line.intercept_sigma, "GHz");
        kv(&mut out, "slope", row.line.slope, "GHz");
        kv(&mut out, "slope_sigma", row.line.slope_sigma, "GHz");
        kv(&mut out, "zero_pump_width", row.zero_pump_width, "GHz");
        kv(&mut out, "zero_pump_width_sigma", row.zero_pump_width_sigma, "GHz");
        kv(&mut out, "normalized_slope", row.normalized_slope, "1");
        kv(&mut out, "normalized_slope_sigma", row.normalized_slope_sigma, "1");
    }

    out.push_str("\n[slope_vs_density]\n");
    match &analysis.density_fit {
        Some(fit) => {
            kv_text(&mut out, "available", "true");
            kv(&mut out, "intercept", fit.intercept, "GHz");
            kv(&mut out, "intercept_sigma", fit.intercept_sigma, "GHz");
            kv(&mut out, "slope", fit.slope, "GHz*cm^3");
            kv(&mut out, "slope_sigma", fit.slope_sigma, "GHz*cm^3");
        }
        None => kv_text(&mut out, "available", "false"),
    }

    out.push_str("\n[aggregate]\n");
    match &analysis.aggregate {
        Some(agg) => {
            kv_text(&mut out, "available", "true");
            kv(&mut out, "normalized_slope", agg.mean, "1");
            kv(&mut out, "normalized_slope_sigma", agg.standard_error, "1");
            kv(&mut out, "constant_fit_reduced_chi2", agg.constant_reduced_chi2, "1");
            kv(&mut out, "trend_intercept", agg.trend.intercept, "1");
            kv(&mut out, "trend_slope", agg.trend.slope, "cm^3");
            kv(&mut out, "trend_slope_sigma", agg.trend.slope_sigma, "cm^3");
            kv_text(&mut out, "density_dependence", agg.verdict.as_str());
            kv(&mut out, "target", target.expected, "1");
            kv(&mut out, "target_tolerance", target.tolerance, "1");
            let within = (agg.mean - target.expected).abs() <= target.tolerance;
            kv_text(&mut out, "within_target", if within { "true" } else { "false" });
        }
        None => kv_text(&mut out, "available", "false"),
    }
    out
}

pub fn format_analysis_table(analysis: &CampaignAnalysis) -> String {
    let mut out = String::from(
        "density_cm3,points,intercept_GHz,intercept_sigma_GHz,slope_GHz,slope_sigma_GHz,zero_pump_width_GHz,normalized_slope,normalized_slope_sigma\n",
    );
    for (row, series) in analysis.rows.iter().zip(&analysis.series) {
        let cells = [
            format_f64(row.density),
            series.points().len().to_string(),
            format_f64(row.line.intercept),
            format_f64(row.line.intercept_sigma),
            format_f64(row.line.slope),
            format_f64(row.line.slope_sigma),
            format_f64(row.zero_pump_width),
            format_f64(row.normalized_slope),
            format_f64(row.normalized_slope_sigma),
        ];
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Reads `key = value [unit]` pairs of one `[section]` of a report.
pub fn report_section(report: &str, section: &str) -> Vec<(String, String)> {
    let header = format!("[{section}]");
    let mut inside = false;
    let mut out = Vec::new();
    for line in report.lines() {
        let t = line.trim();
        if t.starts_with('[') {
            inside = t == header;
            continue;
        }
        if inside {
            if let Some((k, v)) = t.split_once(" = ") {
                out.push((k.to_string(), v.to_string()));
            }
        }
    }
    out
}

/// Numeric value of `key` in `section`, ignoring the unit.
pub fn report_value(report: &str, section: &str, key: &str) -> Option<f64> {
    report_section(report, section)
        .into_iter()
        .find(|(k, _)| k == key)
        .and_then(|(_, v)| v.split_whitespace().next()?.parse().ok())
}
