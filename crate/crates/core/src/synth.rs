//! Synthetic spectra and multi-density campaigns with known ground truth.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lineshape::{FrequencyGrid, Spectrum, VaporState};
use crate::reflectance::{fm_signal, ModelContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    None,
    AdditiveGaussian,
}

impl NoiseKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            NoiseKind::None => "none",
            NoiseKind::AdditiveGaussian => "additive-gaussian",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(NoiseKind::None),
            "additive-gaussian" => Ok(NoiseKind::AdditiveGaussian),
            other => Err(Error::Config(format!("unknown noise kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    /// Standard deviation as a fraction of the noise-free peak-to-peak signal.
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn none() -> Self {
        Self {
            kind: NoiseKind::None,
            sigma: 0.0,
            seed: 0,
        }
    }

    pub fn gaussian(sigma: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::AdditiveGaussian,
            sigma,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::invalid(format!("noise sigma must be non-negative, got {}", self.sigma)));
        }
        Ok(())
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

/// FM spectrum of `state` plus a noise realization. The density of `ctx` is
/// replaced by the state's density.
pub fn generate_spectrum(
    state: &VaporState,
    grid: &FrequencyGrid,
    ctx: &ModelContext,
    noise: &NoiseModel,
) -> Result<Spectrum> {
    noise.validate()?;
    let mut spectrum = fm_signal(
        grid,
        state,
        ctx.components.as_slice(),
        &ctx.constants,
        &ctx.interface,
        &ctx.modulation,
    )?;
    if noise.kind == NoiseKind::AdditiveGaussian && noise.sigma > 0.0 {
        let std = noise.sigma * spectrum.peak_to_peak();
        let normal = Normal::new(0.0, std).map_err(|e| Error::invalid(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
        for v in &mut spectrum.values {
            *v += normal.sample(&mut rng);
        }
    }
    spectrum.metadata.set("noise_kind", noise.kind.as_str());
    spectrum.metadata.set_f64("noise_sigma", noise.sigma);
    spectrum.metadata.set("noise_seed", noise.seed.to_string());
    Ok(spectrum)
}

/// Γ(N, η) = Γ_static(N)·η + Γ_residual(N), both parts affine in N.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WidthLaw {
    /// GHz
    pub static_intercept: f64,
    /// GHz·cm³
    pub static_per_density: f64,
    pub residual_intercept: f64,
    pub residual_per_density: f64,
}

impl WidthLaw {
    /// A law with a density-independent normalized slope `s`, zero-pump width
    /// `Γ(N, 1) = reference_width·N/reference_density`.
    pub fn proportional(normalized_slope: f64, reference_width: f64, reference_density: f64) -> Self {
        let per_density = reference_width / reference_density;
        Self {
            static_intercept: 0.0,
            static_per_density: normalized_slope * per_density,
            residual_intercept: 0.0,
            residual_per_density: (1.0 - normalized_slope) * per_density,
        }
    }

    pub fn static_width(&self, density: f64) -> f64 {
        self.static_intercept + self.static_per_density * density
    }

    pub fn residual_width(&self, density: f64) -> f64 {
        self.residual_intercept + self.residual_per_density * density
    }

    pub fn width(&self, density: f64, excitation: f64) -> f64 {
        self.static_width(density) * excitation + self.residual_width(density)
    }

    pub fn normalized_slope(&self, density: f64) -> f64 {
        self.static_width(density) / self.width(density, 1.0)
    }
}

/// ΔΩ(N) = intercept + per_density·N, GHz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftLaw {
    pub intercept: f64,
    pub per_density: f64,
}

impl ShiftLaw {
    pub fn shift(&self, density: f64) -> f64 {
        self.intercept + self.per_density * density
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl GridSpec {
    pub fn build(&self) -> Result<FrequencyGrid> {
        FrequencyGrid::linspace(self.start, self.stop, self.points)
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            start: -15.0,
            stop: 15.0,
            points: 601,
        }
    }
}

pub const DEFAULT_DENSITY_RANGE: (f64, f64) = (2.2e16, 1.3e17);
pub const DEFAULT_REFERENCE_WIDTH: f64 = 13.0;
pub const DEFAULT_REFERENCE_DENSITY: f64 = 1.3e17;
pub const DEFAULT_NORMALIZED_SLOPE: f64 = 0.90;
pub const DEFAULT_EXCITATIONS: [f64; 5] = [0.36, 0.5, 0.65, 0.8, 1.0];

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignSpec {
    /// cm⁻³
    pub densities: Vec<f64>,
    pub excitations: Vec<f64>,
    pub width_law: WidthLaw,
    pub shift_law: ShiftLaw,
    pub grid: GridSpec,
    pub noise: NoiseModel,
    /// Allowed density interval, cm⁻³.
    pub density_range: (f64, f64),
}

impl Default for CampaignSpec {
    fn default() -> Self {
        let (lo, hi) = DEFAULT_DENSITY_RANGE;
        Self {
            densities: (0..5).map(|i| lo + (hi - lo) * i as f64 / 4.0).collect(),
            excitations: DEFAULT_EXCITATIONS.to_vec(),
            width_law: WidthLaw::proportional(
                DEFAULT_NORMALIZED_SLOPE,
                DEFAULT_REFERENCE_WIDTH,
                DEFAULT_REFERENCE_DENSITY,
            ),
            shift_law: ShiftLaw {
                intercept: 0.0,
                per_density: -2.5e-18,
            },
            grid: GridSpec::default(),
            noise: NoiseModel::gaussian(0.01, 1),
            density_range: DEFAULT_DENSITY_RANGE,
        }
    }
}

/// One planned cell of a campaign, without its spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct CellPlan {
    pub density_index: usize,
    pub excitation_index: usize,
    pub state: VaporState,
    pub pump_label: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignCell {
    pub plan: CellPlan,
    pub spectrum: Spectrum,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-cell seed: `splitmix64(campaign_seed ^ splitmix64((i << 32) | j))`.
pub fn cell_seed(campaign_seed: u64, density_index: usize, excitation_index: usize) -> u64 {
    let cell = ((density_index as u64) << 32) | (excitation_index as u64 & 0xFFFF_FFFF);
    splitmix64(campaign_seed ^ splitmix64(cell))
}

/// Label of a pump setting; η = 1 means the pump is off.
pub fn pump_label(excitation: f64, excitation_index: usize) -> String {
    if excitation == 1.0 {
        "off".to_string()
    } else {
        format!("pump{excitation_index}")
    }
}

impl CampaignSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.density_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::Config(format!("invalid density range [{lo:e}, {hi:e}]")));
        }
        if self.densities.is_empty() || self.excitations.is_empty() {
            return Err(Error::Config("campaign needs at least one density and one excitation".into()));
        }
        for &n in &self.densities {
            if !(n >= lo && n <= hi) {
                return Err(Error::Config(format!(
                    "density {n:e} cm^-3 outside the declared range [{lo:e}, {hi:e}]"
                )));
            }
        }
        for &e in &self.excitations {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::Config(format!("excitation {e} outside [0, 1]")));
            }
        }
        self.noise.validate()?;
        self.grid.build()?;
        Ok(())
    }

    /// Cells in (density, excitation) order with their truth parameters.
    pub fn plan(&self) -> Result<Vec<CellPlan>> {
        self.validate()?;
        let mut cells = Vec::with_capacity(self.densities.len() * self.excitations.len());
        for (i, &density) in self.densities.iter().enumerate() {
            for (j, &eta) in self.excitations.iter().enumerate() {
                let width = self.width_law.width(density, eta);
                if !(width > 0.0) {
                    return Err(Error::Config(format!(
                        "width law gives non-positive width {width} GHz at N={density:e}, eta={eta}"
                    )));
                }
                let state = VaporState::new(density, width, self.shift_law.shift(density), eta)?;
                cells.push(CellPlan {
                    density_index: i,
                    excitation_index: j,
                    state,
                    pump_label: pump_label(eta, j),
                    seed: cell_seed(self.noise.seed, i, j),
                });
            }
        }
        Ok(cells)
    }
}

/// Generates every cell of the campaign. Cells are independent; the output
/// order follows [`CampaignSpec::plan`].
pub fn generate_campaign(spec: &CampaignSpec, ctx: &ModelContext) -> Result<Vec<CampaignCell>> {
    let plan = spec.plan()?;
    let grid = spec.grid.build()?;
    plan.into_par_iter()
        .map(|cell| {
            let noise = spec.noise.with_seed(cell.seed);
            let mut spectrum = generate_spectrum(&cell.state, &grid, ctx, &noise)?;
            spectrum.metadata.set("pump_label", cell.pump_label.clone());
            Ok(CampaignCell { plan: cell, spectrum })
        })
        .collect()
}
