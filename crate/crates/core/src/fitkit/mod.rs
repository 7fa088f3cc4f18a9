//! Least-squares estimation of line parameters from FM spectra, plus the
//! straight-line regression used by the density analysis.
//!
//! The spectrum fit is a damped Gauss–Newton (Levenberg–Marquardt) iteration
//! over five parameters: width Γ, excitation η, shift ΔΩ, and an affine
//! `scale`/`offset` mapping the model onto uncalibrated detector units.
//! Γ and `scale` are optimized in log space; η is kept in `[0, 1]` by projection.

pub mod linear;

pub use linear::{linear_fit, LinearFitResult};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lineshape::{peak_to_peak, Spectrum, MIN_FIT_POINTS};
use crate::reflectance::ModelContext;

pub const PARAM_COUNT: usize = 5;
pub const PARAM_NAMES: [&str; PARAM_COUNT] = ["width", "excitation", "shift", "scale", "offset"];

pub const WIDTH: usize = 0;
pub const EXCITATION: usize = 1;
pub const SHIFT: usize = 2;
pub const SCALE: usize = 3;
pub const OFFSET: usize = 4;

/// Ratio between the FM extremum separation and Γ, used for the first guess.
const EXTREMUM_SEPARATION_PER_WIDTH: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitParams {
    /// GHz
    pub width: f64,
    pub excitation: f64,
    /// GHz
    pub shift: f64,
    pub scale: f64,
    pub offset: f64,
}

impl FitParams {
    pub fn new(width: f64, excitation: f64, shift: f64, scale: f64, offset: f64) -> Self {
        Self {
            width,
            excitation,
            shift,
            scale,
            offset,
        }
    }

    pub fn to_array(self) -> [f64; PARAM_COUNT] {
        [self.width, self.excitation, self.shift, self.scale, self.offset]
    }

    pub fn from_array(a: [f64; PARAM_COUNT]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4])
    }

    fn to_internal(self) -> [f64; PARAM_COUNT] {
        [self.width.ln(), self.excitation, self.shift, self.scale.ln(), self.offset]
    }

    fn from_internal(u: &[f64; PARAM_COUNT]) -> Self {
        Self::new(u[0].exp(), u[1], u[2], u[3].exp(), u[4])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacobianMode {
    Analytic,
    /// Central differences with step `1e-6·(|p| + typical_p)`.
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Damping {
    pub initial: f64,
    /// Multiplier applied after a rejected step.
    pub increase: f64,
    /// Multiplier applied after an accepted step.
    pub decrease: f64,
    /// Damping beyond which no further progress is possible.
    pub max: f64,
}

impl Default for Damping {
    fn default() -> Self {
        Self {
            initial: 1e-3,
            increase: 10.0,
            decrease: 0.1,
            max: 1e16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub initial: FitParams,
    pub fixed: [bool; PARAM_COUNT],
    pub max_iterations: usize,
    /// Relative parameter step.
    pub step_tolerance: f64,
    /// Relative decrease of the residual sum of squares.
    pub residual_tolerance: f64,
    pub damping: Damping,
    pub jacobian: JacobianMode,
}

impl FitConfig {
    pub fn new(initial: FitParams) -> Self {
        Self {
            initial,
            fixed: [false; PARAM_COUNT],
            max_iterations: 200,
            step_tolerance: 1e-8,
            residual_tolerance: 1e-10,
            damping: Damping::default(),
            jacobian: JacobianMode::Analytic,
        }
    }

    pub fn fix(mut self, index: usize) -> Self {
        self.fixed[index] = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_tolerance > 0.0 && self.residual_tolerance > 0.0) {
            return Err(Error::Config("fit tolerances must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        let d = &self.damping;
        if !(d.initial > 0.0 && d.increase > 1.0 && d.decrease > 0.0 && d.decrease < 1.0 && d.max > d.initial) {
            return Err(Error::Config("inconsistent damping schedule".into()));
        }
        let p = &self.initial;
        if !(p.width.is_finite() && p.width > 0.0) {
            return Err(Error::Config(format!("initial width must be positive, got {}", p.width)));
        }
        if !(0.0..=1.0).contains(&p.excitation) {
            return Err(Error::Config(format!(
                "initial excitation must lie in [0, 1], got {}",
                p.excitation
            )));
        }
        if !(p.scale.is_finite() && p.scale > 0.0) {
            return Err(Error::Config(format!("initial scale must be positive, got {}", p.scale)));
        }
        if !(p.shift.is_finite() && p.offset.is_finite()) {
            return Err(Error::Config("initial shift and offset must be finite".into()));
        }
        if self.fixed.iter().all(|&f| f) {
            return Err(Error::Config("all parameters are fixed".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub estimates: FitParams,
    /// One-sigma, zero for fixed parameters.
    pub uncertainties: FitParams,
    pub residual_sum_squares: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Norm of the last step relative to the parameter norm, internal coordinates.
    pub final_relative_step: f64,
    pub fixed: [bool; PARAM_COUNT],
    /// Residual sum of squares after each accepted step, starting with the initial point.
    pub history: Vec<f64>,
}

/// `scale·model + offset − data` at each sample.
pub fn residuals(params: &FitParams, data: &Spectrum, ctx: &ModelContext) -> Result<Vec<f64>> {
    if data.values.len() != data.grid.len() {
        return Err(Error::DimensionMismatch {
            expected: data.grid.len(),
            found: data.values.len(),
        });
    }
    let model = ctx.signal(&data.grid, params.width, params.excitation, params.shift);
    Ok(model
        .iter()
        .zip(&data.values)
        .map(|(m, d)| params.scale * m + params.offset - d)
        .collect())
}

fn sum_squares(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

struct Problem<'a> {
    data: &'a Spectrum,
    ctx: &'a ModelContext,
    mode: JacobianMode,
    typical: [f64; PARAM_COUNT],
}

impl Problem<'_> {
    fn residuals(&self, p: &FitParams) -> Vec<f64> {
        let model = self.ctx.signal(&self.data.grid, p.width, p.excitation, p.shift);
        model
            .iter()
            .zip(&self.data.values)
            .map(|(m, d)| p.scale * m + p.offset - d)
            .collect()
    }

    /// Jacobian of the residuals in natural parameters, row-major `n × 5`.
    fn jacobian(&self, p: &FitParams) -> Vec<[f64; PARAM_COUNT]> {
        match self.mode {
            JacobianMode::Analytic => {
                let (model, grad) =
                    self.ctx
                        .signal_with_gradient(&self.data.grid, p.width, p.excitation, p.shift);
                model
                    .iter()
                    .zip(&grad)
                    .map(|(&m, g)| [p.scale * g[0], p.scale * g[1], p.scale * g[2], m, 1.0])
                    .collect()
            }
            JacobianMode::FiniteDifference => {
                let n = self.data.len();
                let mut jac = vec![[0.0; PARAM_COUNT]; n];
                let base = p.to_array();
                for k in 0..PARAM_COUNT {
                    let h = 1e-6 * (base[k].abs() + self.typical[k]);
                    let mut up = base;
                    let mut dn = base;
                    up[k] += h;
                    dn[k] -= h;
                    let ru = self.residuals(&FitParams::from_array(up));
                    let rd = self.residuals(&FitParams::from_array(dn));
                    for i in 0..n {
                        jac[i][k] = (ru[i] - rd[i]) / (2.0 * h);
                    }
                }
                jac
            }
        }
    }
}

/// Chain factor `∂p/∂u` from internal to natural coordinates.
fn internal_factor(p: &FitParams) -> [f64; PARAM_COUNT] {
    [p.width, 1.0, 1.0, p.scale, 1.0]
}

fn normal_equations(
    jac: &[[f64; PARAM_COUNT]],
    r: &[f64],
    cols: &[usize],
    factor: &[f64; PARAM_COUNT],
) -> (DMatrix<f64>, DVector<f64>) {
    let m = cols.len();
    let mut jtj = DMatrix::zeros(m, m);
    let mut g = DVector::zeros(m);
    for (row, &ri) in jac.iter().zip(r) {
        for (a, &ca) in cols.iter().enumerate() {
            let ja = row[ca] * factor[ca];
            g[a] += ja * ri;
            for (b, &cb) in cols.iter().enumerate().skip(a) {
                jtj[(a, b)] += ja * row[cb] * factor[cb];
            }
        }
    }
    for a in 0..m {
        for b in 0..a {
            jtj[(a, b)] = jtj[(b, a)];
        }
    }
    (jtj, g)
}

fn singular_error(name: &str) -> Error {
    Error::Singular(format!(
        "parameter `{name}` is not constrained by the data; fix it or provide a better initial guess"
    ))
}

/// Inverse of a symmetric positive matrix via its correlation form.
fn covariance(jtj: &DMatrix<f64>, cols: &[usize]) -> Result<DMatrix<f64>> {
    let m = jtj.nrows();
    let d: Vec<f64> = (0..m).map(|i| jtj[(i, i)].sqrt()).collect();
    if let Some(i) = d.iter().position(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(singular_error(PARAM_NAMES[cols[i]]));
    }
    let corr = DMatrix::from_fn(m, m, |i, j| jtj[(i, j)] / (d[i] * d[j]));
    let chol = corr
        .cholesky()
        .ok_or_else(|| Error::Singular("normal matrix is not positive definite; fix a parameter".into()))?;
    let diag_min = (0..m).map(|i| chol.l()[(i, i)]).fold(f64::INFINITY, f64::min);
    if diag_min < 1e-7 {
        return Err(Error::Singular(
            "parameters are degenerate at the optimum; fix one of the correlated parameters".into(),
        ));
    }
    let inv = chol.inverse();
    Ok(DMatrix::from_fn(m, m, |i, j| inv[(i, j)] / (d[i] * d[j])))
}

/// Fits the FM model to `data` from the starting point in `config`.
///
/// Non-convergence within `max_iterations` is reported through
/// [`FitResult::converged`]; degenerate normal equations are an error.
pub fn fit_fm_spectrum(data: &Spectrum, config: &FitConfig, ctx: &ModelContext) -> Result<FitResult> {
    config.validate()?;
    ctx.validate()?;
    if data.values.len() != data.grid.len() {
        return Err(Error::DimensionMismatch {
            expected: data.grid.len(),
            found: data.values.len(),
        });
    }
    let cols: Vec<usize> = (0..PARAM_COUNT).filter(|&k| !config.fixed[k]).collect();
    if data.len() < MIN_FIT_POINTS.max(5 * cols.len()) {
        return Err(Error::InsufficientData(format!(
            "{} samples for {} free parameters",
            data.len(),
            cols.len()
        )));
    }
    if data.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("spectrum contains non-finite values"));
    }

    let amplitude = peak_to_peak(&data.values).max(f64::MIN_POSITIVE);
    let problem = Problem {
        data,
        ctx,
        mode: config.jacobian,
        typical: [1.0, 1.0, 1.0, config.initial.scale.abs(), amplitude],
    };

    let mut params = config.initial;
    let mut u = params.to_internal();
    let mut r = problem.residuals(&params);
    let mut ssr = sum_squares(&r);
    let mut history = vec![ssr];
    let mut lambda = config.damping.initial;
    let mut converged = false;
    let mut iterations = 0;
    let mut last_step = f64::INFINITY;

    'outer: while iterations < config.max_iterations {
        iterations += 1;
        if ssr == 0.0 {
            converged = true;
            last_step = 0.0;
            break;
        }
        let jac = problem.jacobian(&params);
        let factor = internal_factor(&params);
        let (jtj_all, g_all) = normal_equations(&jac, &r, &cols, &factor);
        if let Some(a) = (0..cols.len()).find(|&a| !(jtj_all[(a, a)] > 0.0)) {
            return Err(singular_error(PARAM_NAMES[cols[a]]));
        }

        // A parameter sitting on its bound with the gradient pointing outward
        // is held for this iteration.
        let active: Vec<usize> = (0..cols.len())
            .filter(|&a| {
                if cols[a] != EXCITATION {
                    return true;
                }
                let eta = u[EXCITATION];
                !((eta <= 0.0 && g_all[a] > 0.0) || (eta >= 1.0 && g_all[a] < 0.0))
            })
            .collect();
        let m = active.len();
        let jtj = DMatrix::from_fn(m, m, |i, j| jtj_all[(active[i], active[j])]);
        let g = DVector::from_fn(m, |i, _| g_all[active[i]]);

        loop {
            let mut damped = jtj.clone();
            for i in 0..m {
                damped[(i, i)] += lambda * jtj[(i, i)];
            }
            let step = match damped.cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                None => {
                    lambda *= config.damping.increase;
                    if lambda > config.damping.max {
                        break 'outer;
                    }
                    continue;
                }
            };
            let mut trial = u;
            for (i, &a) in active.iter().enumerate() {
                trial[cols[a]] += step[i];
            }
            trial[EXCITATION] = trial[EXCITATION].clamp(0.0, 1.0);
            let step_norm = trial
                .iter()
                .zip(&u)
                .map(|(t, x)| (t - x) * (t - x))
                .sum::<f64>()
                .sqrt();
            let u_norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            let rel_step = step_norm / (u_norm + config.step_tolerance);
            let trial_params = FitParams::from_internal(&trial);
            let trial_r = problem.residuals(&trial_params);
            let trial_ssr = sum_squares(&trial_r);

            if trial_ssr.is_finite() && trial_ssr < ssr {
                let reduction = (ssr - trial_ssr) / ssr;
                u = trial;
                params = trial_params;
                r = trial_r;
                ssr = trial_ssr;
                history.push(ssr);
                lambda = (lambda * config.damping.decrease).max(f64::MIN_POSITIVE);
                last_step = rel_step;
                if rel_step < config.step_tolerance || reduction < config.residual_tolerance {
                    converged = true;
                    break 'outer;
                }
                continue 'outer;
            }

            lambda *= config.damping.increase;
            if rel_step < config.step_tolerance || lambda > config.damping.max {
                // No decrease is available even for a vanishing step: the
                // current point is a minimum to working precision.
                last_step = rel_step;
                converged = rel_step < config.step_tolerance;
                break 'outer;
            }
        }
    }

    let uncertainties = parameter_uncertainties(&problem, &params, &r, &cols, ssr)?;
    Ok(FitResult {
        estimates: params,
        uncertainties,
        residual_sum_squares: ssr,
        iterations,
        converged,
        final_relative_step: last_step,
        fixed: config.fixed,
        history,
    })
}

fn parameter_uncertainties(
    problem: &Problem<'_>,
    params: &FitParams,
    r: &[f64],
    cols: &[usize],
    ssr: f64,
) -> Result<FitParams> {
    let jac = problem.jacobian(params);
    let (jtj, _) = normal_equations(&jac, r, cols, &[1.0; PARAM_COUNT]);
    let cov = covariance(&jtj, cols)?;
    let dof = (r.len() - cols.len()) as f64;
    let variance = ssr / dof;
    let mut sigma = [0.0; PARAM_COUNT];
    for (a, &c) in cols.iter().enumerate() {
        sigma[c] = (variance * cov[(a, a)]).max(0.0).sqrt();
    }
    Ok(FitParams::from_array(sigma))
}

/// `∂p/∂p_held` for the free parameters of a converged fit, from the
/// stationarity of the least-squares optimum in the free parameters.
fn held_sensitivity(data: &Spectrum, fit: &FitResult, ctx: &ModelContext, held: usize) -> Result<[f64; PARAM_COUNT]> {
    let problem = Problem {
        data,
        ctx,
        mode: JacobianMode::Analytic,
        typical: [1.0; PARAM_COUNT],
    };
    let cols: Vec<usize> = (0..PARAM_COUNT).filter(|&k| !fit.fixed[k]).collect();
    let jac = problem.jacobian(&fit.estimates);
    let cross: Vec<f64> = jac.iter().map(|row| row[held]).collect();
    let (jtj, _) = normal_equations(&jac, &cross, &cols, &[1.0; PARAM_COUNT]);
    let cov = covariance(&jtj, &cols)?;
    let mut g = DVector::zeros(cols.len());
    for (row, c) in jac.iter().zip(&cross) {
        for (a, &k) in cols.iter().enumerate() {
            g[a] += row[k] * c;
        }
    }
    let d = -(cov * g);
    let mut out = [0.0; PARAM_COUNT];
    for (a, &k) in cols.iter().enumerate() {
        out[k] = d[a];
    }
    Ok(out)
}

/// Starting point read off the FM trace: Γ from the separation of its
/// extrema, scale from the peak-to-peak ratio against the unit-scale model.
pub fn initial_guess(data: &Spectrum, ctx: &ModelContext) -> Result<FitParams> {
    let values = &data.values;
    if values.len() != data.grid.len() || values.len() < 2 {
        return Err(Error::InsufficientData("spectrum too short for a guess".into()));
    }
    let max_abs = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let p2p = peak_to_peak(values);
    if !(p2p > f64::EPSILON * max_abs) || !p2p.is_finite() {
        return Err(Error::NoSpectralFeature);
    }
    let argmax = (0..values.len()).max_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    let argmin = (0..values.len()).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    let nu = data.grid.as_slice();
    let separation = (nu[argmax] - nu[argmin]).abs();
    let width = separation / EXTREMUM_SEPARATION_PER_WIDTH;

    let model = ctx.signal(&data.grid, width, 1.0, 0.0);
    let model_p2p = peak_to_peak(&model);
    if !(model_p2p > 0.0) {
        return Err(Error::NoSpectralFeature);
    }
    let scale = p2p / model_p2p;
    let n = values.len() as f64;
    let offset = values.iter().sum::<f64>() / n - scale * model.iter().sum::<f64>() / n;
    Ok(FitParams::new(width, 1.0, 0.0, scale, offset))
}

/// Improves a guess by scanning Γ (and η when `scale` is held) on a coarse grid,
/// solving the linear `scale`/`offset` in closed form at each candidate.
pub fn refine_guess(
    data: &Spectrum,
    ctx: &ModelContext,
    guess: FitParams,
    fixed: &[bool; PARAM_COUNT],
) -> FitParams {
    if fixed[WIDTH] {
        return guess;
    }
    const STEPS: usize = 25;
    let widths: Vec<f64> = (0..STEPS)
        .map(|i| guess.width * 9f64.powf(i as f64 / (STEPS - 1) as f64) / 3.0)
        .collect();
    let etas: Vec<f64> = if fixed[EXCITATION] || !fixed[SCALE] {
        vec![guess.excitation]
    } else {
        (1..=10).map(|i| i as f64 / 10.0).collect()
    };
    let n = data.len() as f64;
    let mut best = (f64::INFINITY, guess);
    for &width in &widths {
        for &eta in &etas {
            let model = ctx.signal(&data.grid, width, eta, guess.shift);
            let (scale, offset) = if fixed[SCALE] {
                let offset = if fixed[OFFSET] {
                    guess.offset
                } else {
                    data.values
                        .iter()
                        .zip(&model)
                        .map(|(d, m)| d - guess.scale * m)
                        .sum::<f64>()
                        / n
                };
                (guess.scale, offset)
            } else {
                let pts: Vec<(f64, f64)> = model.iter().copied().zip(data.values.iter().copied()).collect();
                match linear_fit(&pts, None) {
                    Ok(line) if line.slope > 0.0 => (line.slope, line.intercept),
                    _ => continue,
                }
            };
            let ssr: f64 = model
                .iter()
                .zip(&data.values)
                .map(|(m, d)| (scale * m + offset - d).powi(2))
                .sum();
            if ssr < best.0 {
                best = (ssr, FitParams::new(width, eta, guess.shift, scale, offset));
            }
        }
    }
    best.1
}

/// Guess, refine, and fit one spectrum with the given parameters held.
pub fn fit_with_guess(
    data: &Spectrum,
    template: &FitConfig,
    ctx: &ModelContext,
    hold: &[(usize, f64)],
) -> Result<FitResult> {
    let mut guess = initial_guess(data, ctx)?;
    let mut fixed = template.fixed;
    let mut arr = guess.to_array();
    for &(k, v) in hold {
        arr[k] = v;
        fixed[k] = true;
    }
    guess = refine_guess(data, ctx, FitParams::from_array(arr), &fixed);
    let config = FitConfig {
        initial: guess,
        fixed,
        ..*template
    };
    fit_fm_spectrum(data, &config, ctx)
}

/// Fits a pump-power series recorded at one density.
///
/// The reference (no pump) spectrum is fitted with η held at 1; its scale is
/// then shared by every other spectrum of the series, which fixes the
/// absolute η normalization. Without a reference every spectrum is fitted
/// independently with a free scale. Results keep the input order.
pub fn fit_pump_series(
    spectra: &[&Spectrum],
    reference: Option<usize>,
    template: &FitConfig,
    ctx: &ModelContext,
) -> Vec<Result<FitResult>> {
    let reference_fit = reference.map(|i| fit_with_guess(spectra[i], template, ctx, &[(EXCITATION, 1.0)]));
    let shared_scale = match &reference_fit {
        Some(Ok(fit)) if fit.converged => Some((fit.estimates.scale, fit.uncertainties.scale)),
        Some(_) => {
            log::warn!("reference fit failed; fitting the series with free scale");
            None
        }
        None => None,
    };
    let mut out: Vec<Option<Result<FitResult>>> = spectra
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            if Some(i) == reference {
                None
            } else {
                let Some((scale, scale_sigma)) = shared_scale else {
                    return Some(fit_with_guess(s, template, ctx, &[]));
                };
                // The held scale carries the reference's uncertainty.
                let fit = fit_with_guess(s, template, ctx, &[(SCALE, scale)]).and_then(|mut fit| {
                    let sens = held_sensitivity(s, &fit, ctx, SCALE)?;
                    let mut sigma = fit.uncertainties.to_array();
                    for k in 0..PARAM_COUNT {
                        sigma[k] = sigma[k].hypot(sens[k] * scale_sigma);
                    }
                    sigma[SCALE] = scale_sigma;
                    fit.uncertainties = FitParams::from_array(sigma);
                    Ok(fit)
                });
                Some(fit)
            }
        })
        .collect();
    if let (Some(i), Some(fit)) = (reference, reference_fit) {
        out[i] = Some(fit);
    }
    out.into_iter().map(|r| r.expect("every slot filled")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lineshape::FrequencyGrid;

    fn synthetic(ctx: &ModelContext, p: FitParams) -> Spectrum {
        let grid = FrequencyGrid::linspace(-15.0, 15.0, 301).unwrap();
        let values: Vec<f64> = ctx
            .signal(&grid, p.width, p.excitation, p.shift)
            .iter()
            .map(|m| p.scale * m + p.offset)
            .collect();
        Spectrum::new(grid, values).unwrap()
    }

    #[test]
    fn residuals_vanish_at_truth() {
        let ctx = ModelContext::new(1.3e17);
        let p = FitParams::new(13.0, 1.0, -0.2, 1.0, 0.0);
        let data = synthetic(&ctx, p);
        assert!(residuals(&p, &data, &ctx).unwrap().iter().all(|&r| r == 0.0));
    }

    #[test]
    fn offset_is_absorbed() {
        let ctx = ModelContext::new(1.3e17);
        let p = FitParams::new(13.0, 1.0, -0.2, 1.0, 0.0);
        let mut data = synthetic(&ctx, p);
        let c = 0.25;
        for v in &mut data.values {
            *v += c;
        }
        let shifted = FitParams { offset: c, ..p };
        let r = residuals(&shifted, &data, &ctx).unwrap();
        assert!(r.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn residual_dimension_mismatch() {
        let ctx = ModelContext::new(1.3e17);
        let mut data = synthetic(&ctx, FitParams::new(13.0, 1.0, 0.0, 1.0, 0.0));
        data.values.pop();
        assert!(matches!(
            residuals(&FitParams::new(13.0, 1.0, 0.0, 1.0, 0.0), &data, &ctx),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn recovers_from_perturbed_start() {
        let ctx = ModelContext::new(1.3e17);
        let truth = FitParams::new(4.98, 0.36, -0.2, 1.0, 0.0);
        let data = synthetic(&ctx, truth);
        let start = FitParams::new(4.98 * 1.3, 0.36 * 0.7, 0.1, 1.3, 0.0);
        let fit = fit_fm_spectrum(&data, &FitConfig::new(start), &ctx).unwrap();
        assert!(fit.converged);
        assert!((fit.estimates.width / 4.98 - 1.0).abs() < 1e-6);
        assert!((fit.estimates.excitation / 0.36 - 1.0).abs() < 1e-6);
        assert!((fit.estimates.shift + 0.2).abs() < 1e-6);
    }

    #[test]
    fn finite_difference_jacobian_agrees() {
        let ctx = ModelContext::new(8e16);
        let p = FitParams::new(6.0, 0.7, 0.3, 1.7, 0.01);
        let data = synthetic(&ctx, FitParams::new(6.5, 0.6, 0.0, 1.5, 0.0));
        let mk = |mode| Problem {
            data: &data,
            ctx: &ctx,
            mode,
            typical: [1.0, 1.0, 1.0, 1.7, peak_to_peak(&data.values)],
        };
        let a = mk(JacobianMode::Analytic).jacobian(&p);
        let f = mk(JacobianMode::FiniteDifference).jacobian(&p);
        for k in 0..PARAM_COUNT {
            let scale = a.iter().fold(0.0f64, |m, row| m.max(row[k].abs()));
            for (ra, rf) in a.iter().zip(&f) {
                assert!((ra[k] - rf[k]).abs() <= 1e-5 * scale, "param {k}");
            }
        }
    }

    #[test]
    fn flat_spectrum_has_no_feature() {
        let ctx = ModelContext::new(1.3e17);
        let grid = FrequencyGrid::linspace(-15.0, 15.0, 101).unwrap();
        let data = Spectrum::new(grid.clone(), ctx.signal(&grid, 13.0, 0.0, 0.0)).unwrap();
        assert!(matches!(initial_guess(&data, &ctx), Err(Error::NoSpectralFeature)));
        let constant = Spectrum::new(grid, vec![0.3; 101]).unwrap();
        assert!(matches!(initial_guess(&constant, &ctx), Err(Error::NoSpectralFeature)));
    }

    #[test]
    fn guess_scales_with_amplitude() {
        let ctx = ModelContext::new(1.3e17);
        let data = synthetic(&ctx, FitParams::new(13.0, 1.0, 0.0, 1.0, 0.0));
        let mut doubled = data.clone();
        for v in &mut doubled.values {
            *v *= 2.0;
        }
        let g1 = initial_guess(&data, &ctx).unwrap();
        let g2 = initial_guess(&doubled, &ctx).unwrap();
        assert_eq!(g1.width, g2.width);
        assert!((g2.scale / g1.scale - 2.0).abs() < 1e-12);
    }

    #[test]
    fn guess_width_within_factor_three() {
        let ctx = ModelContext::new(1.3e17);
        for width in [3.0, 6.0, 13.0, 20.0] {
            let data = synthetic(&ctx, FitParams::new(width, 1.0, 0.0, 1.0, 0.0));
            let g = initial_guess(&data, &ctx).unwrap();
            let ratio = g.width / width;
            assert!((1.0 / 3.0..=3.0).contains(&ratio), "width {width}: guess {}", g.width);
        }
    }

    #[test]
    fn degenerate_parameter_is_reported() {
        // η = 0 makes the line parameters invisible to the data.
        let ctx = ModelContext::new(1.3e17);
        let grid = FrequencyGrid::linspace(-15.0, 15.0, 101).unwrap();
        let data = Spectrum::new(grid, vec![0.0; 101]).unwrap();
        let mut config = FitConfig::new(FitParams::new(5.0, 0.0, 0.0, 1.0, 0.0));
        config.fixed[EXCITATION] = true;
        let err = fit_fm_spectrum(&data, &config, &ctx).unwrap_err();
        assert!(matches!(err, Error::Singular(_)), "{err:?}");
    }

    #[test]
    fn config_validation() {
        let base = FitConfig::new(FitParams::new(5.0, 0.5, 0.0, 1.0, 0.0));
        let mut c = base;
        c.step_tolerance = 0.0;
        assert!(c.validate().is_err());
        let mut c = base;
        c.initial.excitation = 1.2;
        assert!(c.validate().is_err());
        let mut c = base;
        c.fixed = [true; PARAM_COUNT];
        assert!(c.validate().is_err());
        assert!(base.validate().is_ok());
    }

    #[test]
    fn too_few_points() {
        let ctx = ModelContext::new(1.3e17);
        let grid = FrequencyGrid::linspace(-15.0, 15.0, 12).unwrap();
        let data = Spectrum::new(grid.clone(), ctx.signal(&grid, 5.0, 1.0, 0.0)).unwrap();
        let config = FitConfig::new(FitParams::new(5.0, 1.0, 0.0, 1.0, 0.0));
        assert!(matches!(fit_fm_spectrum(&data, &config, &ctx), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn iteration_cap_is_reported() {
        let ctx = ModelContext::new(1.3e17);
        let data = synthetic(&ctx, FitParams::new(13.0, 1.0, 0.0, 1.0, 0.0));
        let mut config = FitConfig::new(FitParams::new(6.0, 0.6, 1.0, 1.0, 0.0));
        config.max_iterations = 1;
        let fit = fit_fm_spectrum(&data, &config, &ctx).unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.iterations, 1);
    }
}
