//! Normal-incidence Fresnel reflectivity of the window–vapor interface and the
//! FM signal derived from it.
//!
//! The FM signal comes in two flavours: the exact frequency derivative `dR/dν`
//! obtained by the complex chain rule through `ε → n → r → R`, and a lock-in
//! first-harmonic model that integrates `R` over one modulation cycle.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::lineshape::{
    complex_refractive_index, format_f64, resonance_sums, ComponentSet, FrequencyGrid, Metadata,
    SpectralLineComponent, Spectrum, TransitionConstants, VaporState, RB_D2_REFERENCE_THZ,
};

/// Yttrium-aluminum garnet near 780 nm.
pub const DEFAULT_WINDOW_INDEX: f64 = 1.82;
/// Modulation depth used in the original measurement, GHz.
pub const DEFAULT_MODULATION_DEPTH: f64 = 0.037;
pub const DEFAULT_LOCKIN_SAMPLES: usize = 256;
pub const MIN_LOCKIN_SAMPLES: usize = 16;

// Tolerance for round-off in Im ε on the passive side.
const PASSIVITY_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpticalInterface {
    window_index: f64,
}

impl OpticalInterface {
    pub fn new(window_index: f64) -> Result<Self> {
        if !(window_index.is_finite() && window_index > 1.0) {
            return Err(Error::invalid(format!(
                "window index must exceed 1, got {window_index}"
            )));
        }
        Ok(Self { window_index })
    }

    pub fn window_index(&self) -> f64 {
        self.window_index
    }
}

impl Default for OpticalInterface {
    fn default() -> Self {
        Self {
            window_index: DEFAULT_WINDOW_INDEX,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FmMode {
    AnalyticDerivative,
    LockInFirstHarmonic,
}

impl FmMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            FmMode::AnalyticDerivative => "analytic-derivative",
            FmMode::LockInFirstHarmonic => "lockin-first-harmonic",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "analytic-derivative" => Ok(FmMode::AnalyticDerivative),
            "lockin-first-harmonic" => Ok(FmMode::LockInFirstHarmonic),
            other => Err(Error::invalid(format!("unknown FM mode `{other}`"))),
        }
    }
}

/// Frequency-modulation settings.
///
/// `depth` is the peak-to-peak frequency excursion in GHz: the laser sweeps
/// `ν ± depth/2`, so the lock-in signal tends to `(depth/2)·dR/dν` for small depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModulationSettings {
    pub depth: f64,
    pub mode: FmMode,
    pub lockin_samples: usize,
}

impl ModulationSettings {
    pub fn derivative() -> Self {
        Self {
            depth: DEFAULT_MODULATION_DEPTH,
            mode: FmMode::AnalyticDerivative,
            lockin_samples: DEFAULT_LOCKIN_SAMPLES,
        }
    }

    pub fn lockin(depth: f64, lockin_samples: usize) -> Result<Self> {
        let m = Self {
            depth,
            mode: FmMode::LockInFirstHarmonic,
            lockin_samples,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == FmMode::LockInFirstHarmonic && !(self.depth.is_finite() && self.depth > 0.0)
        {
            return Err(Error::invalid(format!(
                "lock-in modulation depth must be positive, got {}",
                self.depth
            )));
        }
        if self.lockin_samples < MIN_LOCKIN_SAMPLES {
            return Err(Error::invalid(format!(
                "lock-in needs at least {MIN_LOCKIN_SAMPLES} samples per cycle, got {}",
                self.lockin_samples
            )));
        }
        Ok(())
    }
}

impl Default for ModulationSettings {
    fn default() -> Self {
        Self::derivative()
    }
}

/// Fresnel amplitude `r` and its first two derivatives with respect to ε.
#[derive(Debug, Clone, Copy)]
struct FresnelChain {
    r: Complex64,
    dr: Complex64,
    d2r: Complex64,
}

fn fresnel_chain(eps: Complex64, window_index: f64) -> FresnelChain {
    let n = complex_refractive_index(eps);
    let sum = window_index + n;
    let r = (window_index - n) / sum;
    // dr/dn = -2 n_w / s², dn/dε = 1/(2n)
    let dr = -window_index / (n * sum * sum);
    let dg_dn = window_index * (1.0 / (n * n * sum * sum) + 2.0 / (n * sum * sum * sum));
    FresnelChain {
        r,
        dr,
        d2r: dg_dn / (2.0 * n),
    }
}

/// Reflectivity `R = |r|²` for each dielectric value.
pub fn reflectivity(eps: &[Complex64], interface: &OpticalInterface) -> Result<Vec<f64>> {
    let nw = interface.window_index();
    if !(nw > 0.0) {
        return Err(Error::invalid("window index must be positive"));
    }
    eps.iter()
        .map(|&e| {
            if !(e.re.is_finite() && e.im.is_finite()) {
                return Err(Error::invalid("dielectric coefficient is not finite"));
            }
            if e.im < -PASSIVITY_SLACK {
                return Err(Error::invalid(format!(
                    "dielectric coefficient has negative imaginary part {}",
                    e.im
                )));
            }
            let n = complex_refractive_index(e);
            Ok(((nw - n) / (nw + n)).norm_sqr())
        })
        .collect()
}

/// Index of a line parameter in Jacobian rows.
pub const WIDTH: usize = 0;
pub const EXCITATION: usize = 1;
pub const SHIFT: usize = 2;

/// Everything needed to turn line parameters into an FM spectrum at one density.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelContext {
    pub components: ComponentSet,
    pub constants: TransitionConstants,
    pub interface: OpticalInterface,
    pub modulation: ModulationSettings,
    /// cm⁻³
    pub density: f64,
}

#[derive(Debug, Clone, Copy)]
struct PointEval {
    reflectivity: f64,
    derivative: f64,
    reflectivity_grad: [f64; 3],
    derivative_grad: [f64; 3],
}

impl ModelContext {
    pub fn new(density: f64) -> Self {
        Self {
            components: ComponentSet::rb_d2(),
            constants: TransitionConstants::rb_d2(),
            interface: OpticalInterface::default(),
            modulation: ModulationSettings::default(),
            density,
        }
    }

    pub fn with_components(mut self, components: ComponentSet) -> Self {
        self.components = components;
        self
    }

    pub fn with_interface(mut self, interface: OpticalInterface) -> Self {
        self.interface = interface;
        self
    }

    pub fn with_modulation(mut self, modulation: ModulationSettings) -> Self {
        self.modulation = modulation;
        self
    }

    pub fn with_constants(mut self, constants: TransitionConstants) -> Self {
        self.constants = constants;
        self
    }

    pub fn with_density(mut self, density: f64) -> Self {
        self.density = density;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.density.is_finite() && self.density > 0.0) {
            return Err(Error::invalid(format!(
                "density must be positive, got {}",
                self.density
            )));
        }
        self.modulation.validate()
    }

    fn point(&self, nu: f64, width: f64, excitation: f64, shift: f64, with_grad: bool) -> PointEval {
        let amp = self.constants.amplitude_ghz(self.density);
        let comps: &[SpectralLineComponent] = self.components.as_slice();
        let [s0, s1, s2] = resonance_sums(nu, width, shift, comps);
        let i = Complex64::i();
        let eta_amp = excitation * amp;
        let eps = 1.0 + eta_amp * s0;
        let eps_nu = -eta_amp * s1;
        let chain = fresnel_chain(eps, self.interface.window_index());
        let r_conj = chain.r.conj();
        let r_nu = chain.dr * eps_nu;
        let mut out = PointEval {
            reflectivity: chain.r.norm_sqr(),
            derivative: 2.0 * (r_conj * r_nu).re,
            reflectivity_grad: [0.0; 3],
            derivative_grad: [0.0; 3],
        };
        if with_grad {
            let eps_p = [i * eta_amp * s1, amp * s0, -eta_amp * s1];
            let eps_nu_p = [-2.0 * i * eta_amp * s2, -amp * s1, 2.0 * eta_amp * s2];
            for k in 0..3 {
                let r_p = chain.dr * eps_p[k];
                let r_nu_p = chain.d2r * eps_p[k] * eps_nu + chain.dr * eps_nu_p[k];
                out.reflectivity_grad[k] = 2.0 * (r_conj * r_p).re;
                out.derivative_grad[k] = 2.0 * (r_p.conj() * r_nu + r_conj * r_nu_p).re;
            }
        }
        out
    }

    /// Reflectivity on the grid.
    pub fn reflectivity(&self, grid: &FrequencyGrid, width: f64, excitation: f64, shift: f64) -> Vec<f64> {
        grid.as_slice()
            .iter()
            .map(|&nu| self.point(nu, width, excitation, shift, false).reflectivity)
            .collect()
    }

    /// Exact `dR/dν` on the grid, per GHz.
    pub fn reflectivity_derivative(
        &self,
        grid: &FrequencyGrid,
        width: f64,
        excitation: f64,
        shift: f64,
    ) -> Vec<f64> {
        grid.as_slice()
            .iter()
            .map(|&nu| self.point(nu, width, excitation, shift, false).derivative)
            .collect()
    }

    fn lockin_weights(&self) -> Vec<(f64, f64)> {
        let m = self.modulation.lockin_samples;
        let half_depth = 0.5 * self.modulation.depth;
        (0..m)
            .map(|k| {
                let theta = 2.0 * PI * k as f64 / m as f64;
                (half_depth * theta.cos(), 2.0 * theta.cos() / m as f64)
            })
            .collect()
    }

    /// FM signal on the grid in the configured mode.
    pub fn signal(&self, grid: &FrequencyGrid, width: f64, excitation: f64, shift: f64) -> Vec<f64> {
        match self.modulation.mode {
            FmMode::AnalyticDerivative => self.reflectivity_derivative(grid, width, excitation, shift),
            FmMode::LockInFirstHarmonic => {
                let weights = self.lockin_weights();
                grid.as_slice()
                    .iter()
                    .map(|&nu| {
                        let base = self.point(nu, width, excitation, shift, false).reflectivity;
                        weights
                            .iter()
                            .map(|&(dnu, w)| {
                                w * (self.point(nu + dnu, width, excitation, shift, false).reflectivity
                                    - base)
                            })
                            .sum()
                    })
                    .collect()
            }
        }
    }

    /// FM signal together with its gradient with respect to (Γ, η, ΔΩ).
    pub fn signal_with_gradient(
        &self,
        grid: &FrequencyGrid,
        width: f64,
        excitation: f64,
        shift: f64,
    ) -> (Vec<f64>, Vec<[f64; 3]>) {
        let mut values = Vec::with_capacity(grid.len());
        let mut grads = Vec::with_capacity(grid.len());
        match self.modulation.mode {
            FmMode::AnalyticDerivative => {
                for &nu in grid.as_slice() {
                    let p = self.point(nu, width, excitation, shift, true);
                    values.push(p.derivative);
                    grads.push(p.derivative_grad);
                }
            }
            FmMode::LockInFirstHarmonic => {
                let weights = self.lockin_weights();
                for &nu in grid.as_slice() {
                    let base = self.point(nu, width, excitation, shift, true);
                    let mut v = 0.0;
                    let mut g = [0.0; 3];
                    for &(dnu, w) in &weights {
                        let p = self.point(nu + dnu, width, excitation, shift, true);
                        v += w * (p.reflectivity - base.reflectivity);
                        for k in 0..3 {
                            g[k] += w * (p.reflectivity_grad[k] - base.reflectivity_grad[k]);
                        }
                    }
                    values.push(v);
                    grads.push(g);
                }
            }
        }
        (values, grads)
    }

    /// Records the model configuration in spectrum metadata.
    pub fn describe(&self, metadata: &mut Metadata) {
        metadata.set("reference_frequency_THz", format_f64(RB_D2_REFERENCE_THZ));
        metadata.set_f64("density_cm3", self.density);
        metadata.set("grid_units", "GHz");
        metadata.set("signal_kind", self.modulation.mode.as_str());
        metadata.set_f64("modulation_depth_GHz", self.modulation.depth);
        metadata.set("lockin_samples", self.modulation.lockin_samples.to_string());
        metadata.set_f64("window_index", self.interface.window_index());
        metadata.set_f64("oscillator_strength", self.constants.oscillator_strength());
        metadata.set_f64("wavelength_m", self.constants.wavelength());
        metadata.set("components", self.components.len().to_string());
    }
}

/// FM spectrum of a vapor state.
pub fn fm_signal(
    grid: &FrequencyGrid,
    state: &VaporState,
    components: &[SpectralLineComponent],
    constants: &TransitionConstants,
    interface: &OpticalInterface,
    modulation: &ModulationSettings,
) -> Result<Spectrum> {
    state.validate()?;
    let ctx = ModelContext {
        components: ComponentSet::new(components.to_vec())?,
        constants: *constants,
        interface: *interface,
        modulation: *modulation,
        density: state.density,
    };
    ctx.validate()?;
    if grid.len() > 1 && grid.max_spacing() >= state.width / 10.0 {
        log::warn!(
            "grid spacing {} GHz is coarse for width {} GHz",
            grid.max_spacing(),
            state.width
        );
    }
    let values = ctx.signal(grid, state.width, state.excitation, state.shift);
    let mut metadata = Metadata::new();
    ctx.describe(&mut metadata);
    metadata.set_f64("width_GHz", state.width);
    metadata.set_f64("excitation", state.excitation);
    metadata.set_f64("shift_GHz", state.shift);
    Ok(Spectrum::new(grid.clone(), values)?.with_metadata(metadata))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lineshape::{dielectric_coefficient, default_rb_d2_components};

    fn single_line(density: f64) -> ModelContext {
        ModelContext::new(density).with_components(ComponentSet::single(0.0))
    }

    #[test]
    fn vacuum_reflectivity() {
        let r = reflectivity(&[Complex64::new(1.0, 0.0)], &OpticalInterface::default()).unwrap()[0];
        let expected = (0.82f64 / 2.82).powi(2);
        assert!((r - expected).abs() < 1e-15);
        assert!((r - 0.08455).abs() < 1e-5);
    }

    #[test]
    fn index_matched_is_dark() {
        let nw = 1.82;
        let r = reflectivity(&[Complex64::new(nw * nw, 0.0)], &OpticalInterface::new(nw).unwrap()).unwrap()[0];
        assert!(r < 1e-30);
    }

    #[test]
    fn large_absorption_approaches_unity_monotonically() {
        let iface = OpticalInterface::default();
        let eps: Vec<Complex64> = (0..200)
            .map(|k| Complex64::new(1.0, 10f64.powf(k as f64 * 0.05)))
            .collect();
        let r = reflectivity(&eps, &iface).unwrap();
        // Past the index-matching region |n_v| grows past n_w and R rises monotonically to 1.
        let start = r
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        for w in r[start..].windows(2) {
            assert!(w[1] >= w[0]);
        }
        assert!(r.iter().all(|&x| (0.0..1.0).contains(&x)));
        assert!(*r.last().unwrap() > 0.99);
    }

    #[test]
    fn rejects_active_medium() {
        assert!(reflectivity(&[Complex64::new(1.0, -0.1)], &OpticalInterface::default()).is_err());
        assert!(OpticalInterface::new(0.0).is_err());
        assert!(OpticalInterface::new(0.9).is_err());
    }

    #[test]
    fn zero_excitation_gives_flat_signal() {
        let grid = FrequencyGrid::linspace(-15.0, 15.0, 301).unwrap();
        for m in [ModulationSettings::derivative(), ModulationSettings::lockin(0.037, 64).unwrap()] {
            let ctx = ModelContext::new(1.3e17).with_modulation(m);
            assert!(ctx.signal(&grid, 13.0, 0.0, 0.2).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn context_matches_free_functions() {
        let grid = FrequencyGrid::linspace(-15.0, 15.0, 121).unwrap();
        let state = VaporState::new(7e16, 6.0, -0.3, 0.7).unwrap();
        let ctx = ModelContext::new(7e16);
        let eps = dielectric_coefficient(&grid, &state, &default_rb_d2_components(), &ctx.constants).unwrap();
        let direct = reflectivity(&eps, &ctx.interface).unwrap();
        let via_ctx = ctx.reflectivity(&grid, 6.0, 0.7, -0.3);
        for (a, b) in direct.iter().zip(&via_ctx) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn derivative_matches_central_difference() {
        let ctx = single_line(1.3e17);
        let grid = FrequencyGrid::linspace(-40.0, 40.0, 161).unwrap();
        let h = 1e-4;
        let d = ctx.reflectivity_derivative(&grid, 13.0, 1.0, 0.0);
        let max = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (&nu, &an) in grid.as_slice().iter().zip(&d) {
            let pts = FrequencyGrid::new(vec![nu - h, nu + h]).unwrap();
            let r = ctx.reflectivity(&pts, 13.0, 1.0, 0.0);
            let fd = (r[1] - r[0]) / (2.0 * h);
            assert!((an - fd).abs() <= 1e-6 * max, "{nu}: {an} vs {fd}");
        }
    }

    #[test]
    fn parameter_gradient_matches_finite_difference() {
        let grid = FrequencyGrid::linspace(-15.0, 15.0, 61).unwrap();
        for mode in [ModulationSettings::derivative(), ModulationSettings::lockin(0.5, 32).unwrap()] {
            let ctx = ModelContext::new(9e16).with_modulation(mode);
            let p = [7.0, 0.6, 0.4];
            let (_, grad) = ctx.signal_with_gradient(&grid, p[0], p[1], p[2]);
            for k in 0..3 {
                let h = 1e-5 * (p[k].abs() + 1.0);
                let mut up = p;
                let mut dn = p;
                up[k] += h;
                dn[k] -= h;
                let a = ctx.signal(&grid, up[0], up[1], up[2]);
                let b = ctx.signal(&grid, dn[0], dn[1], dn[2]);
                let scale = grad.iter().fold(0.0f64, |m, g| m.max(g[k].abs()));
                for i in 0..grid.len() {
                    let fd = (a[i] - b[i]) / (2.0 * h);
                    assert!((grad[i][k] - fd).abs() <= 1e-6 * scale, "{mode:?} param {k} at {i}");
                }
            }
        }
    }

    #[test]
    fn small_depth_lockin_is_half_depth_derivative() {
        let grid = FrequencyGrid::linspace(-30.0, 30.0, 121).unwrap();
        let m = 0.001;
        let ctx = single_line(1.3e17).with_modulation(ModulationSettings::lockin(m, 256).unwrap());
        let s = ctx.signal(&grid, 13.0, 1.0, 0.0);
        let d = ctx.reflectivity_derivative(&grid, 13.0, 1.0, 0.0);
        let max = d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for (a, b) in s.iter().zip(&d) {
            if b.abs() > 0.01 * max {
                assert!((a / (0.5 * m * b) - 1.0).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn fm_signal_records_metadata() {
        let grid = FrequencyGrid::linspace(-15.0, 15.0, 11).unwrap();
        let state = VaporState::new(1.3e17, 13.0, 0.0, 1.0).unwrap();
        let s = fm_signal(
            &grid,
            &state,
            &default_rb_d2_components(),
            &TransitionConstants::rb_d2(),
            &OpticalInterface::default(),
            &ModulationSettings::default(),
        )
        .unwrap();
        assert_eq!(s.metadata.get_f64("width_GHz"), Some(13.0));
        assert_eq!(s.metadata.get("signal_kind"), Some("analytic-derivative"));
        assert_eq!(s.len(), 11);
    }

    #[test]
    fn modulation_validation() {
        assert!(ModulationSettings::lockin(0.0, 256).is_err());
        assert!(ModulationSettings::lockin(0.01, 8).is_err());
        assert_eq!(FmMode::parse("lockin-first-harmonic").unwrap(), FmMode::LockInFirstHarmonic);
        assert!(FmMode::parse("other").is_err());
    }
}
