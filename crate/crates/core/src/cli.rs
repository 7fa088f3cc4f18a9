//! `selref simulate | fit | analyze`.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 at least one fit failed to converge. Errors print a single
//! `error[<code>]: <message>` line to standard error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::analysis::{analyze_campaign, ExcitationPoint, ExcitationSeries};
use crate::error::Error;
use crate::fitkit::{fit_pump_series, fit_with_guess, FitResult};
use crate::io::config::Config;
use crate::io::files::{self, FitRow, FitStatus, ManifestRow};
use crate::io::plot::{self, Series, Style};
use crate::io::report::{self, TargetBand};
use crate::io::write_atomic;
use crate::lineshape::{format_f64, Spectrum};
use crate::synth::generate_campaign;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_FIT: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "selref", version, about = "Selective-reflection FM spectra: simulate, fit, analyze")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic multi-density campaign.
    Simulate(SimulateArgs),
    /// Fit a spectrum file or every spectrum of a manifest.
    Fit(FitArgs),
    /// Width-versus-excitation analysis from a fit table (or a manifest).
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PlotMode {
    /// Columnar data files.
    Data,
    /// Data files plus static SVG charts.
    Svg,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads for independent spectra.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Emit plot data (`--plot`) or data and SVG (`--plot svg`).
    #[arg(long, num_args = 0..=1, default_missing_value = "data", value_enum)]
    plot: Option<PlotMode>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Output directory for the dataset.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the noise seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Print the cell table without writing anything.
    #[arg(long)]
    dry_run: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Spectrum file or manifest.
    input: PathBuf,
    /// Output directory (defaults to the input's directory).
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// Fit table written by `fit`, or a manifest to fit first.
    input: PathBuf,
    /// Output directory (defaults to the input's directory).
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug)]
struct Failure {
    exit: i32,
    code: &'static str,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let exit = match e {
            Error::Config(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        Failure {
            exit,
            code: e.code(),
            message: e.to_string(),
        }
    }
}

type CmdResult = std::result::Result<i32, Failure>;

/// Runs the CLI with `args` (including the program name).
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return EXIT_OK;
            }
            let rendered = e.render().to_string();
            let first = rendered.lines().next().unwrap_or("invalid arguments");
            let _ = writeln!(err, "error[usage]: {}", first.trim_start_matches("error: "));
            return EXIT_USAGE;
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a, out),
        Command::Fit(a) => fit(a, out),
        Command::Analyze(a) => analyze(a, out),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            let message = f.message.replace('\n', " ");
            let _ = writeln!(err, "error[{}]: {message}", f.code);
            f.exit
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        exit: EXIT_USAGE,
        code: "usage",
        message: message.into(),
    }
}

fn thread_pool(jobs: usize) -> std::result::Result<rayon::ThreadPool, Failure> {
    if jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| usage(format!("cannot start worker pool: {e}")))
}

fn default_out(input: &Path) -> PathBuf {
    input
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn simulate(args: SimulateArgs, out: &mut dyn Write) -> CmdResult {
    let config = Config::load_or_default(args.common.config.as_deref())?;
    let mut spec = config.campaign()?;
    if let Some(seed) = args.seed {
        spec.noise.seed = seed;
    }
    let plan = spec.plan()?;

    if args.dry_run {
        let _ = writeln!(out, "cell,density_cm3,excitation,width_GHz,shift_GHz,pump_label,seed");
        for (k, c) in plan.iter().enumerate() {
            let _ = writeln!(
                out,
                "{k},{},{},{},{},{},{}",
                format_f64(c.state.density),
                format_f64(c.state.excitation),
                format_f64(c.state.width),
                format_f64(c.state.shift),
                c.pump_label,
                c.seed
            );
        }
        return Ok(EXIT_OK);
    }

    let out_dir = args.out.ok_or_else(|| usage("simulate needs --out (or --dry-run)"))?;
    let ctx = config.model_context(spec.densities[0])?;
    let pool = thread_pool(args.common.jobs)?;
    let cells = pool.install(|| generate_campaign(&spec, &ctx))?;

    let mut manifest = Vec::with_capacity(cells.len());
    let mut truth = String::from("spectrum_path,density_cm3,pump_label,excitation,width_GHz,shift_GHz,normalized_slope,seed\n");
    for cell in &cells {
        let p = &cell.plan;
        let rel = PathBuf::from(format!("spectra/n{}_e{}.csv", p.density_index, p.excitation_index));
        files::write_spectrum(&out_dir.join(&rel), &cell.spectrum)?;
        if args.common.plot == Some(PlotMode::Svg) {
            let svg_path = out_dir.join(format!("plots/n{}_e{}.svg", p.density_index, p.excitation_index));
            let series = [Series {
                name: "FM signal".into(),
                points: cell.spectrum.grid.as_slice().iter().copied().zip(cell.spectrum.values.iter().copied()).collect(),
                style: Style::Line,
            }];
            plot::write_svg(&svg_path, &rel.display().to_string(), "detuning (GHz)", "signal", &series)?;
        }
        truth.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            rel.display(),
            format_f64(p.state.density),
            p.pump_label,
            format_f64(p.state.excitation),
            format_f64(p.state.width),
            format_f64(p.state.shift),
            format_f64(spec.width_law.normalized_slope(p.state.density)),
            p.seed
        ));
        manifest.push(ManifestRow {
            spectrum_path: rel,
            density: p.state.density,
            pump_label: p.pump_label.clone(),
            eta_truth: Some(p.state.excitation),
            seed: Some(p.seed),
        });
    }
    files::write_manifest(&out_dir.join("manifest.csv"), &manifest)?;
    write_atomic(&out_dir.join("truth.csv"), truth.as_bytes())?;
    let _ = writeln!(
        out,
        "wrote {} spectra ({} densities x {} excitations) to {}",
        cells.len(),
        spec.densities.len(),
        spec.excitations.len(),
        out_dir.display()
    );
    Ok(EXIT_OK)
}

struct FitOutcome {
    rows: Vec<FitRow>,
    any_failed: bool,
}

fn fit_inputs(input: &Path, config: &Config, jobs: usize, out_dir: &Path, plot_mode: Option<PlotMode>, out: &mut dyn Write) -> std::result::Result<FitOutcome, Failure> {
    let text = std::fs::read_to_string(input).map_err(|e| Error::io(input, e))?;
    let template = config.fit_template()?;
    let pool = thread_pool(jobs)?;

    // (manifest row, spectrum) in input order
    let entries: Vec<(ManifestRow, Spectrum)> = if files::is_manifest(&text) {
        let base = default_out(input);
        let rows = files::parse_manifest(&text, input, true)?;
        let mut entries = Vec::with_capacity(rows.len());
        for row in rows {
            let spectrum = files::read_spectrum(&base.join(&row.spectrum_path))?;
            entries.push((row, spectrum));
        }
        entries
    } else {
        let spectrum = files::parse_spectrum(&text, input)?;
        let density = spectrum.metadata.get_f64("density_cm3").ok_or_else(|| Error::Parse {
            path: input.to_path_buf(),
            line: 1,
            message: "spectrum header has no `density_cm3` entry".into(),
        })?;
        let row = ManifestRow {
            spectrum_path: input.file_name().map(PathBuf::from).unwrap_or_else(|| input.to_path_buf()),
            density,
            pump_label: spectrum.metadata.get("pump_label").unwrap_or("").to_string(),
            eta_truth: None,
            seed: None,
        };
        vec![(row, spectrum)]
    };
    if entries.is_empty() {
        return Err(Error::InsufficientData("manifest lists no spectra".into()).into());
    }

    // Group by density in order of first appearance.
    let mut groups: Vec<(u64, Vec<usize>)> = Vec::new();
    for (i, (row, _)) in entries.iter().enumerate() {
        let key = row.density.to_bits();
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, idx)) => idx.push(i),
            None => groups.push((key, vec![i])),
        }
    }
    let mut contexts = Vec::with_capacity(groups.len());
    for (key, _) in &groups {
        contexts.push(config.model_context(f64::from_bits(*key))?);
    }

    let batch = entries.len() > 1;
    let results: Vec<Vec<(usize, crate::Result<FitResult>)>> = pool.install(|| {
        use rayon::prelude::*;
        groups
            .par_iter()
            .zip(contexts.par_iter())
            .map(|((_, idx), ctx)| {
                let spectra: Vec<&Spectrum> = idx.iter().map(|&i| &entries[i].1).collect();
                let reference = if batch && config.fit.shared_scale {
                    idx.iter().position(|&i| entries[i].0.pump_label == config.fit.reference_label)
                } else {
                    None
                };
                let fits = if spectra.len() == 1 && reference.is_none() {
                    vec![fit_with_guess(spectra[0], &template, ctx, &[])]
                } else {
                    fit_pump_series(&spectra, reference, &template, ctx)
                };
                idx.iter().copied().zip(fits).collect()
            })
            .collect()
    });

    let mut by_index: BTreeMap<usize, crate::Result<FitResult>> = BTreeMap::new();
    for group in results {
        for (i, r) in group {
            by_index.insert(i, r);
        }
    }

    let mut rows = Vec::with_capacity(entries.len());
    let mut any_failed = false;
    for (i, result) in by_index {
        let (m, spectrum) = &entries[i];
        let row = FitRow::from_result(m.spectrum_path.clone(), m.density, m.pump_label.clone(), m.eta_truth, &result);
        if row.status != FitStatus::Converged {
            any_failed = true;
        }
        match &result {
            Ok(fit) => {
                let _ = writeln!(
                    out,
                    "{}: width {:.4} GHz, eta {:.4}, shift {:.4} GHz [{}]",
                    m.spectrum_path.display(),
                    fit.estimates.width,
                    fit.estimates.excitation,
                    fit.estimates.shift,
                    if fit.converged { "converged" } else { "not converged" }
                );
                if let Some(mode) = plot_mode {
                    let ctx = config.model_context(m.density)?;
                    let p = fit.estimates;
                    let model: Vec<f64> = ctx
                        .signal(&spectrum.grid, p.width, p.excitation, p.shift)
                        .iter()
                        .map(|v| p.scale * v + p.offset)
                        .collect();
                    let stem = format!("fit_{:03}", i + 1);
                    write_atomic(&out_dir.join(format!("plots/{stem}.csv")), plot::fit_overlay_csv(spectrum, &model).as_bytes())?;
                    if mode == PlotMode::Svg {
                        let x = spectrum.grid.as_slice();
                        let series = [
                            Series {
                                name: "data".into(),
                                points: x.iter().copied().zip(spectrum.values.iter().copied()).collect(),
                                style: Style::Points,
                            },
                            Series {
                                name: "model".into(),
                                points: x.iter().copied().zip(model.iter().copied()).collect(),
                                style: Style::Line,
                            },
                        ];
                        plot::write_svg(
                            &out_dir.join(format!("plots/{stem}.svg")),
                            &m.spectrum_path.display().to_string(),
                            "detuning (GHz)",
                            "signal",
                            &series,
                        )?;
                    }
                }
            }
            Err(e) => {
                let _ = writeln!(out, "{}: fit failed: {e}", m.spectrum_path.display());
            }
        }
        rows.push(row);
    }
    Ok(FitOutcome { rows, any_failed })
}

fn fit(args: FitArgs, out: &mut dyn Write) -> CmdResult {
    let config = Config::load_or_default(args.common.config.as_deref())?;
    let out_dir = args.out.clone().unwrap_or_else(|| default_out(&args.input));
    let outcome = fit_inputs(&args.input, &config, args.common.jobs, &out_dir, args.common.plot, out)?;
    files::write_fit_table(&out_dir.join("fits.csv"), &outcome.rows)?;
    write_atomic(&out_dir.join("fit_report.txt"), report::format_fit_report(&outcome.rows).as_bytes())?;
    Ok(if outcome.any_failed { EXIT_FIT } else { EXIT_OK })
}

fn analyze(args: AnalyzeArgs, out: &mut dyn Write) -> CmdResult {
    let config = Config::load_or_default(args.common.config.as_deref())?;
    let out_dir = args.out.clone().unwrap_or_else(|| default_out(&args.input));
    let text = std::fs::read_to_string(&args.input).map_err(|e| Error::io(&args.input, e))?;

    let (rows, fits_failed) = if files::is_fit_table(&text) {
        (files::parse_fit_table(&text, &args.input)?, false)
    } else if files::is_manifest(&text) {
        let outcome = fit_inputs(&args.input, &config, args.common.jobs, &out_dir, None, out)?;
        files::write_fit_table(&out_dir.join("fits.csv"), &outcome.rows)?;
        write_atomic(&out_dir.join("fit_report.txt"), report::format_fit_report(&outcome.rows).as_bytes())?;
        (outcome.rows, outcome.any_failed)
    } else {
        return Err(Error::Parse {
            path: args.input.clone(),
            line: 1,
            message: "expected a fit table or a manifest".into(),
        }
        .into());
    };

    let mut grouped: BTreeMap<u64, Vec<ExcitationPoint>> = BTreeMap::new();
    let mut skipped = 0;
    for r in &rows {
        match (&r.status, r.estimates, r.uncertainties) {
            (FitStatus::Converged, Some(e), Some(u)) => grouped
                .entry(r.density.to_bits())
                .or_default()
                .push(ExcitationPoint::new(e.excitation, e.width, u.width)),
            _ => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} spectra without a converged fit were left out");
    }
    let series = grouped
        .into_iter()
        .map(|(bits, pts)| ExcitationSeries::new(f64::from_bits(bits), pts))
        .collect::<crate::Result<Vec<_>>>()?;
    let analysis = analyze_campaign(series, config.normalization()?)?;
    let target = TargetBand {
        expected: config.analysis.expected_normalized_slope,
        tolerance: config.analysis.tolerance,
    };
    write_atomic(
        &out_dir.join("analysis_report.txt"),
        report::format_analysis_report(&analysis, target).as_bytes(),
    )?;
    write_atomic(&out_dir.join("analysis.csv"), report::format_analysis_table(&analysis).as_bytes())?;

    if let Some(mode) = args.common.plot {
        let plots = out_dir.join("plots");
        write_atomic(&plots.join("width_vs_excitation.csv"), plot::width_vs_excitation_csv(&analysis).as_bytes())?;
        write_atomic(&plots.join("slope_vs_density.csv"), plot::slope_vs_density_csv(&analysis).as_bytes())?;
        write_atomic(&plots.join("normalized_slope_vs_density.csv"), plot::normalized_slope_csv(&analysis).as_bytes())?;
        if mode == PlotMode::Svg {
            for (name, title, xl, yl, series) in plot::analysis_figures(&analysis) {
                plot::write_svg(&plots.join(format!("{name}.svg")), title, xl, yl, &series)?;
            }
        }
    }

    for row in &analysis.rows {
        let _ = writeln!(
            out,
            "N = {:.3e} cm^-3: slope {:.4} GHz, zero-pump width {:.4} GHz, normalized slope {:.4} +/- {:.4}",
            row.density, row.line.slope, row.zero_pump_width, row.normalized_slope, row.normalized_slope_sigma
        );
    }
    match &analysis.aggregate {
        Some(agg) => {
            let _ = writeln!(
                out,
                "aggregate normalized slope {:.4} +/- {:.4} ({})",
                agg.mean,
                agg.standard_error,
                agg.verdict.as_str()
            );
        }
        None => {
            let _ = writeln!(out, "aggregate unavailable: single density");
        }
    }
    Ok(if fits_failed { EXIT_FIT } else { EXIT_OK })
}
