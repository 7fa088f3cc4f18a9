//! Spectrum, manifest and fit-table files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::fitkit::{FitParams, FitResult};
use crate::lineshape::{format_f64, FrequencyGrid, Metadata, Spectrum};

use super::write_atomic;

pub const SPECTRUM_COLUMNS: &str = "frequency_GHz,signal";
pub const MANIFEST_COLUMNS: &str = "spectrum_path,density_cm3,pump_label,eta_truth_optional,seed";
pub const FIT_COLUMNS: &str = "spectrum_path,density_cm3,pump_label,status,width_GHz,width_sigma_GHz,excitation,excitation_sigma,shift_GHz,shift_sigma_GHz,scale,scale_sigma,offset,offset_sigma,rss,iterations,eta_truth";

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn format_spectrum(spectrum: &Spectrum) -> String {
    let mut out = String::new();
    for (k, v) in spectrum.metadata.iter() {
        let _ = writeln!(out, "# {k}: {v}");
    }
    out.push_str(SPECTRUM_COLUMNS);
    out.push('\n');
    for (x, y) in spectrum.grid.as_slice().iter().zip(&spectrum.values) {
        let _ = writeln!(out, "{},{}", format_f64(*x), format_f64(*y));
    }
    out
}

pub fn write_spectrum(path: &Path, spectrum: &Spectrum) -> Result<()> {
    write_atomic(path, format_spectrum(spectrum).as_bytes())
}

pub fn parse_spectrum(text: &str, path: &Path) -> Result<Spectrum> {
    let mut metadata = Metadata::new();
    let mut seen_header = false;
    let mut freqs = Vec::new();
    let mut values = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if let Some(rest) = line.strip_prefix('#') {
            if seen_header {
                continue;
            }
            if let Some((k, v)) = rest.split_once(':') {
                metadata.set(k.trim(), v.trim());
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        if !seen_header {
            if line.trim() != SPECTRUM_COLUMNS {
                return Err(parse_error(path, line_no, format!("expected column header `{SPECTRUM_COLUMNS}`")));
            }
            seen_header = true;
            continue;
        }
        let mut fields = line.split(',');
        let (Some(a), Some(b), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(parse_error(path, line_no, "expected two comma-separated values"));
        };
        let x: f64 = a
            .trim()
            .parse()
            .map_err(|_| parse_error(path, line_no, format!("bad frequency `{}`", a.trim())))?;
        let y: f64 = b
            .trim()
            .parse()
            .map_err(|_| parse_error(path, line_no, format!("bad signal `{}`", b.trim())))?;
        if !x.is_finite() || !y.is_finite() {
            return Err(parse_error(path, line_no, "non-finite value"));
        }
        if let Some(&prev) = freqs.last() {
            if x <= prev {
                return Err(parse_error(path, line_no, "frequencies must be strictly increasing"));
            }
        }
        freqs.push(x);
        values.push(y);
    }
    if freqs.is_empty() {
        return Err(parse_error(path, text.lines().count().max(1), "no data rows"));
    }
    let grid = FrequencyGrid::new(freqs)?;
    Ok(Spectrum::new(grid, values)?.with_metadata(metadata))
}

pub fn read_spectrum(path: &Path) -> Result<Spectrum> {
    parse_spectrum(&read_text(path)?, path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    /// As written in the manifest, relative to its directory.
    pub spectrum_path: PathBuf,
    pub density: f64,
    pub pump_label: String,
    pub eta_truth: Option<f64>,
    pub seed: Option<u64>,
}

pub fn format_manifest(rows: &[ManifestRow]) -> String {
    let mut out = format!("{MANIFEST_COLUMNS}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.spectrum_path.display(),
            format_f64(r.density),
            r.pump_label,
            r.eta_truth.map(format_f64).unwrap_or_default(),
            r.seed.map(|s| s.to_string()).unwrap_or_default()
        );
    }
    out
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    write_atomic(path, format_manifest(rows).as_bytes())
}

pub fn is_manifest(text: &str) -> bool {
    text.lines().next().map(|l| l.trim() == MANIFEST_COLUMNS).unwrap_or(false)
}

pub fn is_fit_table(text: &str) -> bool {
    text.lines().next().map(|l| l.trim() == FIT_COLUMNS).unwrap_or(false)
}

/// Parses a manifest; `check_paths` verifies every spectrum exists next to it.
pub fn parse_manifest(text: &str, path: &Path, check_paths: bool) -> Result<Vec<ManifestRow>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == MANIFEST_COLUMNS => {}
        _ => return Err(parse_error(path, 1, format!("expected manifest header `{MANIFEST_COLUMNS}`"))),
    }
    let mut rows = Vec::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(parse_error(path, line_no, format!("expected 5 fields, found {}", fields.len())));
        }
        let density: f64 = fields[1]
            .parse()
            .map_err(|_| parse_error(path, line_no, format!("bad density `{}`", fields[1])))?;
        if !(density.is_finite() && density > 0.0) {
            return Err(parse_error(path, line_no, "density must be positive"));
        }
        let eta_truth = match fields[3] {
            "" => None,
            s => Some(s.parse().map_err(|_| parse_error(path, line_no, format!("bad eta `{s}`")))?),
        };
        let seed = match fields[4] {
            "" => None,
            s => Some(s.parse().map_err(|_| parse_error(path, line_no, format!("bad seed `{s}`")))?),
        };
        let spectrum_path = PathBuf::from(fields[0]);
        if check_paths && !base.join(&spectrum_path).is_file() {
            return Err(parse_error(
                path,
                line_no,
                format!("spectrum `{}` does not exist", spectrum_path.display()),
            ));
        }
        rows.push(ManifestRow {
            spectrum_path,
            density,
            pump_label: fields[2].to_string(),
            eta_truth,
            seed,
        });
    }
    Ok(rows)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    parse_manifest(&read_text(path)?, path, true)
}

#[derive(Debug, Clone, PartialEq)]
pub enum FitStatus {
    Converged,
    NotConverged,
    Failed(String),
}

impl FitStatus {
    fn render(&self) -> String {
        match self {
            FitStatus::Converged => "converged".into(),
            FitStatus::NotConverged => "not-converged".into(),
            FitStatus::Failed(code) => format!("failed:{code}"),
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "converged" => Some(FitStatus::Converged),
            "not-converged" => Some(FitStatus::NotConverged),
            other => other.strip_prefix("failed:").map(|c| FitStatus::Failed(c.to_string())),
        }
    }
}

/// One line of the machine-readable fit table.
#[derive(Debug, Clone, PartialEq)]
pub struct FitRow {
    pub spectrum_path: PathBuf,
    pub density: f64,
    pub pump_label: String,
    pub status: FitStatus,
    pub estimates: Option<FitParams>,
    pub uncertainties: Option<FitParams>,
    pub rss: Option<f64>,
    pub iterations: Option<usize>,
    pub eta_truth: Option<f64>,
}

impl FitRow {
    pub fn from_result(
        spectrum_path: PathBuf,
        density: f64,
        pump_label: String,
        eta_truth: Option<f64>,
        result: &Result<FitResult>,
    ) -> Self {
        match result {
            Ok(fit) => Self {
                spectrum_path,
                density,
                pump_label,
                status: if fit.converged {
                    FitStatus::Converged
                } else {
                    FitStatus::NotConverged
                },
                estimates: Some(fit.estimates),
                uncertainties: Some(fit.uncertainties),
                rss: Some(fit.residual_sum_squares),
                iterations: Some(fit.iterations),
                eta_truth,
            },
            Err(e) => Self {
                spectrum_path,
                density,
                pump_label,
                status: FitStatus::Failed(e.code().to_string()),
                estimates: None,
                uncertainties: None,
                rss: None,
                iterations: None,
                eta_truth,
            },
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(format_f64).unwrap_or_default()
}

pub fn format_fit_table(rows: &[FitRow]) -> String {
    let mut out = format!("{FIT_COLUMNS}\n");
    for r in rows {
        let est = r.estimates.map(FitParams::to_array);
        let unc = r.uncertainties.map(FitParams::to_array);
        let mut cells = vec![
            r.spectrum_path.display().to_string(),
            format_f64(r.density),
            r.pump_label.clone(),
            r.status.render(),
        ];
        for k in 0..5 {
            cells.push(opt(est.map(|e| e[k])));
            cells.push(opt(unc.map(|u| u[k])));
        }
        cells.push(opt(r.rss));
        cells.push(r.iterations.map(|i| i.to_string()).unwrap_or_default());
        cells.push(opt(r.eta_truth));
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn write_fit_table(path: &Path, rows: &[FitRow]) -> Result<()> {
    write_atomic(path, format_fit_table(rows).as_bytes())
}

pub fn parse_fit_table(text: &str, path: &Path) -> Result<Vec<FitRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == FIT_COLUMNS => {}
        _ => return Err(parse_error(path, 1, "expected fit table header")),
    }
    let mut rows = Vec::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 17 {
            return Err(parse_error(path, line_no, format!("expected 17 fields, found {}", f.len())));
        }
        let num = |i: usize| -> Result<Option<f64>> {
            if f[i].is_empty() {
                Ok(None)
            } else {
                f[i].parse()
                    .map(Some)
                    .map_err(|_| parse_error(path, line_no, format!("bad number `{}`", f[i])))
            }
        };
        let density = num(1)?.ok_or_else(|| parse_error(path, line_no, "missing density"))?;
        let status = FitStatus::parse(f[3]).ok_or_else(|| parse_error(path, line_no, format!("bad status `{}`", f[3])))?;
        let mut est = [None; 5];
        let mut unc = [None; 5];
        for k in 0..5 {
            est[k] = num(4 + 2 * k)?;
            unc[k] = num(5 + 2 * k)?;
        }
        let collect = |a: [Option<f64>; 5]| -> Option<FitParams> {
            Some(FitParams::new(a[0]?, a[1]?, a[2]?, a[3]?, a[4]?))
        };
        let iterations = if f[15].is_empty() {
            None
        } else {
            Some(f[15].parse().map_err(|_| parse_error(path, line_no, "bad iteration count"))?)
        };
        let row = FitRow {
            spectrum_path: PathBuf::from(f[0]),
            density,
            pump_label: f[2].to_string(),
            status,
            estimates: collect(est),
            uncertainties: collect(unc),
            rss: num(14)?,
            iterations,
            eta_truth: num(16)?,
        };
        if row.status != FitStatus::Converged || row.estimates.is_some() {
            rows.push(row);
        } else {
            return Err(parse_error(path, line_no, "converged row without estimates"));
        }
    }
    Ok(rows)
}

pub fn read_fit_table(path: &Path) -> Result<Vec<FitRow>> {
    parse_fit_table(&read_text(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_spectrum() -> Spectrum {
        let grid = FrequencyGrid::linspace(-1.0, 1.0, 5).unwrap();
        let mut meta = Metadata::new();
        meta.set("density_cm3", "1.3e17");
        meta.set("note", "a: b");
        Spectrum::new(grid, vec![0.1, -0.2, 1.0 / 3.0, 1e-300, 5.0]).unwrap().with_metadata(meta)
    }

    #[test]
    fn spectrum_round_trip() {
        let s = sample_spectrum();
        let back = parse_spectrum(&format_spectrum(&s), Path::new("s.csv")).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn corrupt_row_names_line() {
        let mut text = format_spectrum(&sample_spectrum());
        text = text.replacen("-2.0000000000000001e-1", "oops", 1);
        match parse_spectrum(&text, Path::new("s.csv")).unwrap_err() {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 5);
                assert!(message.contains("oops"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn non_increasing_and_missing_header() {
        let text = "frequency_GHz,signal\n1,0\n1,0\n";
        assert!(matches!(parse_spectrum(text, Path::new("s")), Err(Error::Parse { line: 3, .. })));
        assert!(matches!(parse_spectrum("1,2\n", Path::new("s")), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_spectrum("frequency_GHz,signal\n", Path::new("s")), Err(Error::Parse { .. })));
    }

    #[test]
    fn manifest_round_trip_and_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.csv"), "").unwrap();
        let rows = vec![
            ManifestRow {
                spectrum_path: "a.csv".into(),
                density: 2.2e16,
                pump_label: "off".into(),
                eta_truth: Some(1.0),
                seed: Some(u64::MAX),
            },
            ManifestRow {
                spectrum_path: "a.csv".into(),
                density: 2.2e16,
                pump_label: "p1".into(),
                eta_truth: None,
                seed: None,
            },
        ];
        let path = dir.path().join("manifest.csv");
        write_manifest(&path, &rows).unwrap();
        assert_eq!(read_manifest(&path).unwrap(), rows);

        let mut missing = rows.clone();
        missing[1].spectrum_path = "nope.csv".into();
        write_manifest(&path, &missing).unwrap();
        assert!(matches!(read_manifest(&path), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn manifest_rejects_bad_density() {
        let text = format!("{MANIFEST_COLUMNS}\na.csv,-1,off,,\n");
        assert!(parse_manifest(&text, Path::new("m.csv"), false).is_err());
    }

    #[test]
    fn fit_table_round_trip() {
        let rows = vec![
            FitRow {
                spectrum_path: "s/a.csv".into(),
                density: 1.3e17,
                pump_label: "off".into(),
                status: FitStatus::Converged,
                estimates: Some(FitParams::new(13.0, 1.0, -0.1, 1.0, 1e-6)),
                uncertainties: Some(FitParams::new(0.1, 0.0, 0.01, 0.001, 1e-7)),
                rss: Some(1e-9),
                iterations: Some(7),
                eta_truth: Some(1.0),
            },
            FitRow {
                spectrum_path: "s/b.csv".into(),
                density: 1.3e17,
                pump_label: "pump1".into(),
                status: FitStatus::Failed("fit".into()),
                estimates: None,
                uncertainties: None,
                rss: None,
                iterations: None,
                eta_truth: None,
            },
        ];
        let text = format_fit_table(&rows);
        assert!(is_fit_table(&text));
        assert_eq!(parse_fit_table(&text, Path::new("f.csv")).unwrap(), rows);
    }

    proptest! {
        #[test]
        fn spectrum_values_round_trip(
            values in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::ZERO | prop::num::f64::SUBNORMAL, 1..40),
            start in -1e3f64..1e3,
            key in "[a-z_]{1,12}",
            value in "[A-Za-z0-9.+-]{0,20}",
        ) {
            let grid = FrequencyGrid::new((0..values.len()).map(|i| start + 0.37 * i as f64).collect()).unwrap();
            let mut meta = Metadata::new();
            meta.set(key, value);
            let s = Spectrum::new(grid, values).unwrap().with_metadata(meta);
            let back = parse_spectrum(&format_spectrum(&s), Path::new("p")).unwrap();
            prop_assert_eq!(back, s);
        }
    }
}
