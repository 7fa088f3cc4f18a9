//! Python bindings: the line model, the FM fitter and the width analysis.

use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use selref::analysis::{analyze_campaign, ExcitationPoint, ExcitationSeries, WidthNormalization};
use selref::fitkit::{self, FitConfig, FitParams, PARAM_NAMES};
use selref::lineshape::{dielectric_coefficient, ComponentSet, FrequencyGrid, Spectrum, TransitionConstants, VaporState};
use selref::reflectance::{FmMode, ModelContext, ModulationSettings, OpticalInterface};
use selref::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Singular(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn grid(frequencies: Vec<f64>) -> PyResult<FrequencyGrid> {
    FrequencyGrid::new(frequencies).map_err(py_err)
}

/// Vapor-window model at one atomic density (cm⁻³).
///
/// `mode` is "analytic-derivative" (exact dR/dν) or "lockin-first-harmonic"
/// (demodulation with peak-to-peak depth `depth_ghz`).
#[pyclass(name = "Model", module = "selref")]
#[derive(Clone)]
struct PyModel {
    inner: ModelContext,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (density, window_index = 1.82, mode = "analytic-derivative", depth_ghz = 0.037, lockin_samples = 256, components = None))]
    fn new(
        density: f64,
        window_index: f64,
        mode: &str,
        depth_ghz: f64,
        lockin_samples: usize,
        components: Option<Vec<(String, f64, f64)>>,
    ) -> PyResult<Self> {
        let modulation = match FmMode::parse(mode).map_err(py_err)? {
            FmMode::AnalyticDerivative => ModulationSettings::derivative(),
            FmMode::LockInFirstHarmonic => ModulationSettings::lockin(depth_ghz, lockin_samples).map_err(py_err)?,
        };
        let mut ctx = ModelContext::new(density)
            .with_interface(OpticalInterface::new(window_index).map_err(py_err)?)
            .with_modulation(modulation);
        if let Some(c) = components {
            let list = c
                .into_iter()
                .map(|(label, offset, strength)| selref::lineshape::SpectralLineComponent::new(label, offset, strength))
                .collect();
            ctx = ctx.with_components(ComponentSet::normalized(list).map_err(py_err)?);
        }
        ctx.validate().map_err(py_err)?;
        Ok(Self { inner: ctx })
    }

    #[getter]
    fn density(&self) -> f64 {
        self.inner.density
    }

    /// Complex dielectric coefficient at each detuning (GHz).
    #[pyo3(signature = (frequencies, width, excitation = 1.0, shift = 0.0))]
    fn dielectric(&self, frequencies: Vec<f64>, width: f64, excitation: f64, shift: f64) -> PyResult<Vec<Complex64>> {
        let state = VaporState::new(self.inner.density, width, shift, excitation).map_err(py_err)?;
        dielectric_coefficient(&grid(frequencies)?, &state, self.inner.components.as_slice(), &self.inner.constants)
            .map_err(py_err)
    }

    #[pyo3(signature = (frequencies, width, excitation = 1.0, shift = 0.0))]
    fn reflectivity(&self, frequencies: Vec<f64>, width: f64, excitation: f64, shift: f64) -> PyResult<Vec<f64>> {
        Ok(self.inner.reflectivity(&grid(frequencies)?, width, excitation, shift))
    }

    /// FM signal in the configured mode.
    #[pyo3(signature = (frequencies, width, excitation = 1.0, shift = 0.0))]
    fn signal(&self, frequencies: Vec<f64>, width: f64, excitation: f64, shift: f64) -> PyResult<Vec<f64>> {
        Ok(self.inner.signal(&grid(frequencies)?, width, excitation, shift))
    }

    /// Fits `values` on `frequencies`.
    ///
    /// Without `initial` the starting point is estimated from the trace.
    /// `fixed` maps parameter names to held values.
    #[pyo3(signature = (frequencies, values, initial = None, fixed = None, max_iterations = 200))]
    fn fit(
        &self,
        frequencies: Vec<f64>,
        values: Vec<f64>,
        initial: Option<(f64, f64, f64, f64, f64)>,
        fixed: Option<Vec<(String, f64)>>,
        max_iterations: usize,
    ) -> PyResult<PyFitResult> {
        let data = Spectrum::new(grid(frequencies)?, values).map_err(py_err)?;
        let mut hold = Vec::new();
        for (name, value) in fixed.unwrap_or_default() {
            let k = PARAM_NAMES
                .iter()
                .position(|p| *p == name)
                .ok_or_else(|| PyValueError::new_err(format!("unknown parameter `{name}`; expected one of {PARAM_NAMES:?}")))?;
            hold.push((k, value));
        }
        let mut template = FitConfig::new(FitParams::new(1.0, 1.0, 0.0, 1.0, 0.0));
        template.max_iterations = max_iterations;
        let result = match initial {
            None => fitkit::fit_with_guess(&data, &template, &self.inner, &hold),
            Some((w, e, s, a, o)) => {
                let mut p = FitParams::new(w, e, s, a, o).to_array();
                let mut cfg = template;
                for &(k, v) in &hold {
                    p[k] = v;
                    cfg.fixed[k] = true;
                }
                cfg.initial = FitParams::from_array(p);
                fitkit::fit_fm_spectrum(&data, &cfg, &self.inner)
            }
        }
        .map_err(py_err)?;
        Ok(PyFitResult { inner: result })
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(density={:e}, window_index={}, mode='{}')",
            self.inner.density,
            self.inner.interface.window_index(),
            self.inner.modulation.mode.as_str()
        )
    }
}

#[pyclass(name = "FitResult", module = "selref", frozen)]
struct PyFitResult {
    inner: fitkit::FitResult,
}

#[pymethods]
impl PyFitResult {
    #[getter]
    fn width(&self) -> f64 {
        self.inner.estimates.width
    }
    #[getter]
    fn excitation(&self) -> f64 {
        self.inner.estimates.excitation
    }
    #[getter]
    fn shift(&self) -> f64 {
        self.inner.estimates.shift
    }
    #[getter]
    fn scale(&self) -> f64 {
        self.inner.estimates.scale
    }
    #[getter]
    fn offset(&self) -> f64 {
        self.inner.estimates.offset
    }
    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }
    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations
    }
    #[getter]
    fn residual_sum_squares(&self) -> f64 {
        self.inner.residual_sum_squares
    }

    /// Estimates keyed by parameter name.
    fn estimates<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        named(py, self.inner.estimates)
    }

    /// One-sigma uncertainties keyed by parameter name (0 for held ones).
    fn uncertainties<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        named(py, self.inner.uncertainties)
    }

    fn __repr__(&self) -> String {
        let p = self.inner.estimates;
        format!(
            "FitResult(width={:.6}, excitation={:.6}, shift={:.6}, converged={})",
            p.width,
            p.excitation,
            p.shift,
            if self.inner.converged { "True" } else { "False" }
        )
    }
}

fn named(py: Python<'_>, p: FitParams) -> PyResult<Bound<'_, PyDict>> {
    let d = PyDict::new_bound(py);
    for (name, v) in PARAM_NAMES.iter().zip(p.to_array()) {
        d.set_item(name, v)?;
    }
    Ok(d)
}

/// Weighted straight-line fit; returns intercept, slope and their sigmas.
#[pyfunction]
#[pyo3(signature = (x, y, sigma = None))]
fn linear_fit<'py>(py: Python<'py>, x: Vec<f64>, y: Vec<f64>, sigma: Option<Vec<f64>>) -> PyResult<Bound<'py, PyDict>> {
    if x.len() != y.len() {
        return Err(PyValueError::new_err("x and y differ in length"));
    }
    let pts: Vec<(f64, f64)> = x.into_iter().zip(y).collect();
    let weights = sigma.map(|s| s.iter().map(|s| 1.0 / (s * s)).collect::<Vec<_>>());
    let fit = fitkit::linear::linear_fit(&pts, weights.as_deref()).map_err(py_err)?;
    let d = PyDict::new_bound(py);
    d.set_item("intercept", fit.intercept)?;
    d.set_item("slope", fit.slope)?;
    d.set_item("intercept_sigma", fit.intercept_sigma)?;
    d.set_item("slope_sigma", fit.slope_sigma)?;
    d.set_item("covariance", fit.covariance)?;
    Ok(d)
}

/// Width-versus-excitation analysis over one or more densities.
///
/// `series` is a list of `(density, [(excitation, width, width_sigma), ...])`.
#[pyfunction]
#[pyo3(signature = (series, normalization = "fitted-line"))]
fn analyze<'py>(py: Python<'py>, series: Vec<(f64, Vec<(f64, f64, f64)>)>, normalization: &str) -> PyResult<Bound<'py, PyDict>> {
    let series = series
        .into_iter()
        .map(|(n, pts)| ExcitationSeries::new(n, pts.into_iter().map(|(e, w, s)| ExcitationPoint::new(e, w, s)).collect()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(py_err)?;
    let analysis = analyze_campaign(series, WidthNormalization::parse(normalization).map_err(py_err)?).map_err(py_err)?;
    let rows = analysis
        .rows
        .iter()
        .map(|r| {
            let d = PyDict::new_bound(py);
            d.set_item("density", r.density)?;
            d.set_item("intercept", r.line.intercept)?;
            d.set_item("slope", r.line.slope)?;
            d.set_item("slope_sigma", r.line.slope_sigma)?;
            d.set_item("zero_pump_width", r.zero_pump_width)?;
            d.set_item("normalized_slope", r.normalized_slope)?;
            d.set_item("normalized_slope_sigma", r.normalized_slope_sigma)?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    let out = PyDict::new_bound(py);
    out.set_item("rows", rows)?;
    match &analysis.aggregate {
        Some(a) => {
            out.set_item("normalized_slope", a.mean)?;
            out.set_item("normalized_slope_sigma", a.standard_error)?;
            out.set_item("verdict", a.verdict.as_str())?;
        }
        None => {
            out.set_item("normalized_slope", py.None())?;
            out.set_item("normalized_slope_sigma", py.None())?;
            out.set_item("verdict", py.None())?;
        }
    }
    Ok(out)
}

/// Coupling amplitude `A` in GHz at a density in cm⁻³ for the Rb D2 line.
#[pyfunction]
fn amplitude_ghz(density: f64) -> f64 {
    TransitionConstants::rb_d2().amplitude_ghz(density)
}

/// Runs the command-line tool in-process and returns its exit code.
#[pyfunction]
fn main(args: Vec<String>) -> i32 {
    let argv = std::iter::once("selref".to_string()).chain(args);
    selref::cli::run(argv, &mut std::io::stdout(), &mut std::io::stderr())
}

#[pymodule]
#[pyo3(name = "selref")]
fn selref_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyFitResult>()?;
    m.add_function(wrap_pyfunction!(linear_fit, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(amplitude_ghz, m)?)?;
    m.add_function(wrap_pyfunction!(main, m)?)?;
    Ok(())
}
