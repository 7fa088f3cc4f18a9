//! Flat TOML configuration shared by all subcommands.
//!
//! Every key has a default, so an empty file (or no file) is valid. Unknown
//! sections or keys are rejected.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::analysis::WidthNormalization;
use crate::error::{Error, Result};
use crate::fitkit::{Damping, FitConfig, FitParams, JacobianMode};
use crate::lineshape::{ComponentSet, TransitionConstants, RB_D2_OSCILLATOR_STRENGTH, RB_D2_WAVELENGTH};
use crate::reflectance::{
    FmMode, ModelContext, ModulationSettings, OpticalInterface, DEFAULT_LOCKIN_SAMPLES,
    DEFAULT_MODULATION_DEPTH, DEFAULT_WINDOW_INDEX,
};
use crate::synth::{
    CampaignSpec, GridSpec, NoiseKind, NoiseModel, ShiftLaw, WidthLaw, DEFAULT_DENSITY_RANGE,
    DEFAULT_EXCITATIONS, DEFAULT_NORMALIZED_SLOPE, DEFAULT_REFERENCE_DENSITY,
    DEFAULT_REFERENCE_WIDTH,
};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub model: ModelSection,
    pub grid: GridSection,
    pub campaign: CampaignSection,
    pub noise: NoiseSection,
    pub fit: FitSection,
    pub analysis: AnalysisSection,
    #[serde(skip)]
    base_dir: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Component table, relative to the config file. Rb D2 when absent.
    pub components_file: Option<PathBuf>,
    pub window_index: f64,
    pub oscillator_strength: f64,
    pub wavelength_m: f64,
    pub fm_mode: String,
    pub modulation_depth_ghz: f64,
    pub lockin_samples: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            components_file: None,
            window_index: DEFAULT_WINDOW_INDEX,
            oscillator_strength: RB_D2_OSCILLATOR_STRENGTH,
            wavelength_m: RB_D2_WAVELENGTH,
            fm_mode: FmMode::AnalyticDerivative.as_str().into(),
            modulation_depth_ghz: DEFAULT_MODULATION_DEPTH,
            lockin_samples: DEFAULT_LOCKIN_SAMPLES,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub start_ghz: f64,
    pub stop_ghz: f64,
    pub points: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        let g = GridSpec::default();
        Self {
            start_ghz: g.start,
            stop_ghz: g.stop,
            points: g.points,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CampaignSection {
    /// Explicit densities; when empty, `density_count` values evenly spanning the range.
    pub densities_cm3: Vec<f64>,
    pub density_count: usize,
    pub density_min_cm3: f64,
    pub density_max_cm3: f64,
    pub excitations: Vec<f64>,
    /// Truth b/Γ(η=1) for the proportional width law.
    pub normalized_slope: f64,
    pub reference_width_ghz: f64,
    pub reference_density_cm3: f64,
    /// Added to Γ_static and Γ_residual respectively (GHz).
    pub static_intercept_ghz: f64,
    pub residual_intercept_ghz: f64,
    pub shift_intercept_ghz: f64,
    pub shift_per_density_ghz_cm3: f64,
}

impl Default for CampaignSection {
    fn default() -> Self {
        let spec = CampaignSpec::default();
        Self {
            densities_cm3: Vec::new(),
            density_count: 5,
            density_min_cm3: DEFAULT_DENSITY_RANGE.0,
            density_max_cm3: DEFAULT_DENSITY_RANGE.1,
            excitations: DEFAULT_EXCITATIONS.to_vec(),
            normalized_slope: DEFAULT_NORMALIZED_SLOPE,
            reference_width_ghz: DEFAULT_REFERENCE_WIDTH,
            reference_density_cm3: DEFAULT_REFERENCE_DENSITY,
            static_intercept_ghz: 0.0,
            residual_intercept_ghz: 0.0,
            shift_intercept_ghz: spec.shift_law.intercept,
            shift_per_density_ghz_cm3: spec.shift_law.per_density,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    pub kind: String,
    /// Fraction of the peak-to-peak signal.
    pub sigma: f64,
    pub seed: u64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        let n = CampaignSpec::default().noise;
        Self {
            kind: n.kind.as_str().into(),
            sigma: n.sigma,
            seed: n.seed,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    pub max_iterations: usize,
    pub step_tolerance: f64,
    pub residual_tolerance: f64,
    pub damping_initial: f64,
    pub damping_increase: f64,
    pub damping_decrease: f64,
    pub jacobian: String,
    /// Pump label of the no-pump spectrum in a manifest.
    pub reference_label: String,
    /// Share the reference spectrum's scale across its density.
    pub shared_scale: bool,
}

impl Default for FitSection {
    fn default() -> Self {
        let d = Damping::default();
        Self {
            max_iterations: 200,
            step_tolerance: 1e-8,
            residual_tolerance: 1e-10,
            damping_initial: d.initial,
            damping_increase: d.increase,
            damping_decrease: d.decrease,
            jacobian: "analytic".into(),
            reference_label: "off".into(),
            shared_scale: true,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub normalization: String,
    /// Half-width of the band around `expected_normalized_slope` reported as pass/fail.
    pub tolerance: f64,
    pub expected_normalized_slope: f64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            normalization: WidthNormalization::FittedLine.as_str().into(),
            tolerance: 0.05,
            expected_normalized_slope: DEFAULT_NORMALIZED_SLOPE,
        }
    }
}

impl Config {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut config: Config = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        config.base_dir = base_dir.to_path_buf();
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => {
                let c = Self::default();
                c.validate()?;
                Ok(c)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        self.model_context(1.0)?;
        self.campaign()?;
        self.fit_template()?;
        self.normalization()?;
        Ok(())
    }

    pub fn components(&self) -> Result<ComponentSet> {
        match &self.model.components_file {
            None => Ok(ComponentSet::rb_d2()),
            Some(p) => ComponentSet::load(&self.base_dir.join(p)),
        }
    }

    pub fn model_context(&self, density: f64) -> Result<ModelContext> {
        let m = &self.model;
        let mode = FmMode::parse(&m.fm_mode).map_err(|e| Error::Config(e.to_string()))?;
        let modulation = ModulationSettings {
            depth: m.modulation_depth_ghz,
            mode,
            lockin_samples: m.lockin_samples,
        };
        modulation.validate().map_err(|e| Error::Config(e.to_string()))?;
        let interface = OpticalInterface::new(m.window_index).map_err(|e| Error::Config(e.to_string()))?;
        let constants = TransitionConstants::new(m.oscillator_strength, m.wavelength_m)
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(ModelContext::new(density)
            .with_components(self.components()?)
            .with_constants(constants)
            .with_interface(interface)
            .with_modulation(modulation))
    }

    pub fn noise(&self) -> Result<NoiseModel> {
        let kind = NoiseKind::parse(&self.noise.kind)?;
        let n = NoiseModel {
            kind,
            sigma: self.noise.sigma,
            seed: self.noise.seed,
        };
        n.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(n)
    }

    pub fn campaign(&self) -> Result<CampaignSpec> {
        let c = &self.campaign;
        let densities = if c.densities_cm3.is_empty() {
            match c.density_count {
                0 => return Err(Error::Config("density_count must be positive".into())),
                1 => vec![c.density_max_cm3],
                k => (0..k)
                    .map(|i| c.density_min_cm3 + (c.density_max_cm3 - c.density_min_cm3) * i as f64 / (k - 1) as f64)
                    .collect(),
            }
        } else {
            c.densities_cm3.clone()
        };
        if !(c.reference_density_cm3 > 0.0 && c.reference_width_ghz > 0.0) {
            return Err(Error::Config("reference width and density must be positive".into()));
        }
        let mut width_law = WidthLaw::proportional(c.normalized_slope, c.reference_width_ghz, c.reference_density_cm3);
        width_law.static_intercept = c.static_intercept_ghz;
        width_law.residual_intercept = c.residual_intercept_ghz;
        let spec = CampaignSpec {
            densities,
            excitations: c.excitations.clone(),
            width_law,
            shift_law: ShiftLaw {
                intercept: c.shift_intercept_ghz,
                per_density: c.shift_per_density_ghz_cm3,
            },
            grid: GridSpec {
                start: self.grid.start_ghz,
                stop: self.grid.stop_ghz,
                points: self.grid.points,
            },
            noise: self.noise()?,
            density_range: (c.density_min_cm3, c.density_max_cm3),
        };
        spec.validate().map_err(|e| match e {
            Error::Config(m) => Error::Config(m),
            other => Error::Config(other.to_string()),
        })?;
        Ok(spec)
    }

    /// Fit settings; the initial point is replaced per spectrum.
    pub fn fit_template(&self) -> Result<FitConfig> {
        let f = &self.fit;
        let jacobian = match f.jacobian.as_str() {
            "analytic" => JacobianMode::Analytic,
            "finite-difference" => JacobianMode::FiniteDifference,
            other => return Err(Error::Config(format!("unknown jacobian mode `{other}`"))),
        };
        let config = FitConfig {
            max_iterations: f.max_iterations,
            step_tolerance: f.step_tolerance,
            residual_tolerance: f.residual_tolerance,
            damping: Damping {
                initial: f.damping_initial,
                increase: f.damping_increase,
                decrease: f.damping_decrease,
                ..Damping::default()
            },
            jacobian,
            ..FitConfig::new(FitParams::new(1.0, 1.0, 0.0, 1.0, 0.0))
        };
        config.validate()?;
        Ok(config)
    }

    pub fn normalization(&self) -> Result<WidthNormalization> {
        WidthNormalization::parse(&self.analysis.normalization)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default_campaign() {
        let c = Config::parse("", Path::new(".")).unwrap();
        assert_eq!(c.campaign().unwrap(), CampaignSpec::default());
        assert_eq!(c.model_context(1e17).unwrap(), ModelContext::new(1e17));
    }

    #[test]
    fn unknown_keys_are_errors() {
        assert!(matches!(Config::parse("[fit]\nbogus = 1\n", Path::new(".")), Err(Error::Config(_))));
        assert!(matches!(Config::parse("[nosuch]\n", Path::new(".")), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for text in [
            "[model]\nfm_mode = \"x\"\n",
            "[model]\nwindow_index = 0.5\n",
            "[noise]\nkind = \"pink\"\n",
            "[fit]\njacobian = \"magic\"\n",
            "[campaign]\ndensities_cm3 = [1e18]\n",
            "[analysis]\nnormalization = \"mean\"\n",
        ] {
            assert!(matches!(Config::parse(text, Path::new(".")), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn sections_override_defaults() {
        let text = "[campaign]\ndensities_cm3 = [5e16, 1e17]\nexcitations = [0.5, 1.0]\n[noise]\nseed = 9\n[model]\nfm_mode = \"lockin-first-harmonic\"\n";
        let c = Config::parse(text, Path::new(".")).unwrap();
        let spec = c.campaign().unwrap();
        assert_eq!(spec.densities, vec![5e16, 1e17]);
        assert_eq!(spec.noise.seed, 9);
        assert_eq!(c.model_context(1e17).unwrap().modulation.mode, FmMode::LockInFirstHarmonic);
    }

    #[test]
    fn components_file_is_relative_to_config() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("lines.txt"), "a 0.0 1\nb 3.0 1\n").unwrap();
        let cfg = dir.path().join("c.toml");
        std::fs::write(&cfg, "[model]\ncomponents_file = \"lines.txt\"\n").unwrap();
        let c = Config::load(&cfg).unwrap();
        assert_eq!(c.components().unwrap().len(), 2);
    }
}
