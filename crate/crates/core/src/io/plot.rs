//! Plot emission: columnar data files by default, optional static SVG.

use std::fmt::Write as _;
use std::path::Path;

use plotters::prelude::*;

use crate::analysis::CampaignAnalysis;
use crate::error::{Error, Result};
use crate::lineshape::{format_f64, Spectrum};

use super::write_atomic;

pub fn fit_overlay_csv(data: &Spectrum, model: &[f64]) -> String {
    let mut out = String::from("frequency_GHz,data,model,residual\n");
    for ((x, d), m) in data.grid.as_slice().iter().zip(&data.values).zip(model) {
        let _ = writeln!(out, "{},{},{},{}", format_f64(*x), format_f64(*d), format_f64(*m), format_f64(m - d));
    }
    out
}

pub fn width_vs_excitation_csv(analysis: &CampaignAnalysis) -> String {
    let mut out = String::from("density_cm3,excitation,width_GHz,width_sigma_GHz,line_GHz\n");
    for (series, row) in analysis.series.iter().zip(&analysis.rows) {
        for p in series.points() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                format_f64(series.density),
                format_f64(p.excitation),
                format_f64(p.width),
                format_f64(p.width_sigma),
                format_f64(row.line.predict(p.excitation))
            );
        }
    }
    out
}

pub fn slope_vs_density_csv(analysis: &CampaignAnalysis) -> String {
    let mut out = String::from("density_cm3,slope_GHz,slope_sigma_GHz,fit_GHz\n");
    for row in &analysis.rows {
        let fit = analysis.density_fit.map(|f| format_f64(f.predict(row.density))).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{}",
            format_f64(row.density),
            format_f64(row.line.slope),
            format_f64(row.line.slope_sigma),
            fit
        );
    }
    out
}

pub fn normalized_slope_csv(analysis: &CampaignAnalysis) -> String {
    let mut out = String::from("density_cm3,normalized_slope,normalized_slope_sigma,constant_fit,trend_fit\n");
    for row in &analysis.rows {
        let (constant, trend) = match &analysis.aggregate {
            Some(a) => (format_f64(a.mean), format_f64(a.trend.predict(row.density))),
            None => (String::new(), String::new()),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            format_f64(row.density),
            format_f64(row.normalized_slope),
            format_f64(row.normalized_slope_sigma),
            constant,
            trend
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    Line,
    Points,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub style: Style,
}

fn bounds(series: &[Series]) -> Option<((f64, f64), (f64, f64))> {
    let pts = series.iter().flat_map(|s| s.points.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
    let mut b: Option<((f64, f64), (f64, f64))> = None;
    for &(x, y) in pts {
        b = Some(match b {
            None => ((x, x), (y, y)),
            Some(((x0, x1), (y0, y1))) => ((x0.min(x), x1.max(x)), (y0.min(y), y1.max(y))),
        });
    }
    b.map(|((x0, x1), (y0, y1))| {
        let px = if x1 > x0 { 0.05 * (x1 - x0) } else { x0.abs().max(1.0) * 0.1 };
        let py = if y1 > y0 { 0.08 * (y1 - y0) } else { y0.abs().max(1.0) * 0.1 };
        ((x0 - px, x1 + px), (y0 - py, y1 + py))
    })
}

/// Renders an x–y chart as SVG text.
pub fn render_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<String> {
    let ((x0, x1), (y0, y1)) = bounds(series).ok_or_else(|| Error::invalid("nothing to plot"))?;
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (800, 560)).into_drawing_area();
        let draw = |e: &dyn std::fmt::Display| Error::invalid(format!("plot rendering failed: {e}"));
        root.fill(&WHITE).map_err(|e| draw(&e))?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 22))
            .margin(16)
            .x_label_area_size(44)
            .y_label_area_size(72)
            .build_cartesian_2d(x0..x1, y0..y1)
            .map_err(|e| draw(&e))?;
        chart
            .configure_mesh()
            .x_desc(x_label)
            .y_desc(y_label)
            .draw()
            .map_err(|e| draw(&e))?;
        for (i, s) in series.iter().enumerate() {
            let color = Palette99::pick(i).to_rgba();
            match s.style {
                Style::Line => {
                    chart
                        .draw_series(LineSeries::new(s.points.iter().copied(), color.stroke_width(2)))
                        .map_err(|e| draw(&e))?
                        .label(s.name.clone())
                        .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
                }
                Style::Points => {
                    chart
                        .draw_series(s.points.iter().map(|&p| Circle::new(p, 4, color.filled())))
                        .map_err(|e| draw(&e))?
                        .label(s.name.clone())
                        .legend(move |(x, y)| Circle::new((x + 8, y), 4, color.filled()));
                }
            }
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(|e| draw(&e))?;
        root.present().map_err(|e| draw(&e))?;
    }
    Ok(svg)
}

pub fn write_svg(path: &Path, title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<()> {
    write_atomic(path, render_svg(title, x_label, y_label, series)?.as_bytes())
}

/// The three density-analysis figures as chart series.
pub fn analysis_figures(analysis: &CampaignAnalysis) -> Vec<(&'static str, &'static str, &'static str, &'static str, Vec<Series>)> {
    let mut width_series = Vec::new();
    for (series, row) in analysis.series.iter().zip(&analysis.rows) {
        let name = format!("N = {:.2e} cm^-3", series.density);
        width_series.push(Series {
            name: name.clone(),
            points: series.points().iter().map(|p| (p.excitation, p.width)).collect(),
            style: Style::Points,
        });
        width_series.push(Series {
            name: format!("{name} fit"),
            points: [0.0, 1.0].iter().map(|&e| (e, row.line.predict(e))).collect(),
            style: Style::Line,
        });
    }
    let mut slope_series = vec![Series {
        name: "slope".into(),
        points: analysis.rows.iter().map(|r| (r.density, r.line.slope)).collect(),
        style: Style::Points,
    }];
    let mut norm_series = vec![Series {
        name: "normalized slope".into(),
        points: analysis.rows.iter().map(|r| (r.density, r.normalized_slope)).collect(),
        style: Style::Points,
    }];
    if let (Some(first), Some(last)) = (analysis.rows.first(), analysis.rows.last()) {
        if let Some(fit) = &analysis.density_fit {
            slope_series.push(Series {
                name: "linear fit".into(),
                points: vec![(first.density, fit.predict(first.density)), (last.density, fit.predict(last.density))],
                style: Style::Line,
            });
        }
        if let Some(agg) = &analysis.aggregate {
            norm_series.push(Series {
                name: "zero-slope fit".into(),
                points: vec![(first.density, agg.mean), (last.density, agg.mean)],
                style: Style::Line,
            });
        }
    }
    vec![
        ("width_vs_excitation", "Width versus excitation", "excitation factor", "width (GHz)", width_series),
        ("slope_vs_density", "Slope versus density", "density (cm^-3)", "slope (GHz)", slope_series),
        ("normalized_slope_vs_density", "Normalized slope versus density", "density (cm^-3)", "normalized slope", norm_series),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_renders_points_and_lines() {
        let series = vec![
            Series {
                name: "a".into(),
                points: vec![(0.0, 1.0), (1.0, 2.0)],
                style: Style::Points,
            },
            Series {
                name: "b".into(),
                points: vec![(0.0, 1.0), (1.0, 2.5)],
                style: Style::Line,
            },
        ];
        let svg = render_svg("t", "x", "y", &series).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("<circle"));
        assert!(render_svg("t", "x", "y", &[]).is_err());
    }
}
