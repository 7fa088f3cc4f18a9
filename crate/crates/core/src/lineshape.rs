//! Domain types and the complex dielectric coefficient of a dense two-level vapor.
//!
//! The vapor response is a sum of Lorentzian resonances sharing one width,
//! one shift and one excitation factor:
//!
//! ```text
//! ε(Δω) = 1 + Σ_j k·η·N·A_j / (2π·((Δω − ν_j) + ΔΩ − iΓ))
//! ```
//!
//! with `k = f·c·r_e·λ`. Frequencies are ordinary-frequency GHz at the API
//! boundary; the denominator is converted to rad/s so the summand is
//! dimensionless.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const CLASSICAL_ELECTRON_RADIUS: f64 = 2.817_940_326_2e-15;

/// Rb D2 (5S1/2 → 5P3/2) oscillator strength.
pub const RB_D2_OSCILLATOR_STRENGTH: f64 = 0.6956;
/// Rb D2 vacuum wavelength in meters.
pub const RB_D2_WAVELENGTH: f64 = 780.241_209_686e-9;
/// 87Rb D2 centroid, the zero of the default component table.
pub const RB_D2_REFERENCE_THZ: f64 = 384.230_484_468_5;

const GHZ: f64 = 1e9;
const PER_CM3_TO_PER_M3: f64 = 1e6;

/// Tolerance on the sum of relative strengths of a component set.
pub const STRENGTH_SUM_TOLERANCE: f64 = 1e-12;
/// Minimum grid size for fitting.
pub const MIN_FIT_POINTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionConstants {
    oscillator_strength: f64,
    wavelength: f64,
    classical_electron_radius: f64,
    light_speed: f64,
    coupling: f64,
}

impl TransitionConstants {
    pub fn new(oscillator_strength: f64, wavelength: f64) -> Result<Self> {
        Self::with_physical(
            oscillator_strength,
            wavelength,
            CLASSICAL_ELECTRON_RADIUS,
            SPEED_OF_LIGHT,
        )
    }

    pub fn with_physical(
        oscillator_strength: f64,
        wavelength: f64,
        classical_electron_radius: f64,
        light_speed: f64,
    ) -> Result<Self> {
        if !(oscillator_strength.is_finite() && oscillator_strength > 0.0) {
            return Err(Error::invalid(format!(
                "oscillator strength must be positive, got {oscillator_strength}"
            )));
        }
        if !(wavelength.is_finite() && wavelength > 0.0) {
            return Err(Error::invalid(format!(
                "wavelength must be positive, got {wavelength}"
            )));
        }
        if !(classical_electron_radius.is_finite() && classical_electron_radius > 0.0)
            || !(light_speed.is_finite() && light_speed > 0.0)
        {
            return Err(Error::invalid("physical constants must be positive"));
        }
        Ok(Self {
            oscillator_strength,
            wavelength,
            classical_electron_radius,
            light_speed,
            coupling: oscillator_strength * light_speed * classical_electron_radius * wavelength,
        })
    }

    pub fn rb_d2() -> Self {
        Self::new(RB_D2_OSCILLATOR_STRENGTH, RB_D2_WAVELENGTH).expect("valid Rb D2 constants")
    }

    pub fn oscillator_strength(&self) -> f64 {
        self.oscillator_strength
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    pub fn classical_electron_radius(&self) -> f64 {
        self.classical_electron_radius
    }

    pub fn light_speed(&self) -> f64 {
        self.light_speed
    }

    /// `k = f·c·r_e·λ` in m³/s.
    pub fn coupling(&self) -> f64 {
        self.coupling
    }

    /// Susceptibility amplitude `k·N / 2π` expressed in GHz, for a density in cm⁻³.
    ///
    /// Dividing this by a complex detuning in GHz gives the dimensionless
    /// contribution of a unit-strength, unit-η component.
    pub fn amplitude_ghz(&self, density_cm3: f64) -> f64 {
        self.coupling * density_cm3 * PER_CM3_TO_PER_M3 / (2.0 * PI * GHZ)
    }
}

impl Default for TransitionConstants {
    fn default() -> Self {
        Self::rb_d2()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralLineComponent {
    pub label: String,
    /// GHz, relative to the table's reference frequency.
    pub center_offset: f64,
    pub relative_strength: f64,
}

impl SpectralLineComponent {
    pub fn new(label: impl Into<String>, center_offset: f64, relative_strength: f64) -> Self {
        Self {
            label: label.into(),
            center_offset,
            relative_strength,
        }
    }
}

fn check_components(components: &[SpectralLineComponent]) -> Result<()> {
    if components.is_empty() {
        return Err(Error::EmptyComponents);
    }
    for c in components {
        if !c.center_offset.is_finite() {
            return Err(Error::invalid(format!(
                "component {} has a non-finite offset",
                c.label
            )));
        }
        if !(c.relative_strength.is_finite() && c.relative_strength >= 0.0) {
            return Err(Error::invalid(format!(
                "component {} has an invalid strength {}",
                c.label, c.relative_strength
            )));
        }
    }
    let sum: f64 = components.iter().map(|c| c.relative_strength).sum();
    if (sum - 1.0).abs() > STRENGTH_SUM_TOLERANCE {
        return Err(Error::NonNormalizedStrengths { sum });
    }
    Ok(())
}

/// A validated, normalized list of line components.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentSet {
    components: Vec<SpectralLineComponent>,
}

impl ComponentSet {
    pub fn new(components: Vec<SpectralLineComponent>) -> Result<Self> {
        check_components(&components)?;
        Ok(Self { components })
    }

    /// Rescales strengths to sum to one.
    pub fn normalized(mut components: Vec<SpectralLineComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::EmptyComponents);
        }
        let sum: f64 = components.iter().map(|c| c.relative_strength).sum();
        if !(sum.is_finite() && sum > 0.0) {
            return Err(Error::invalid(format!(
                "component strengths must have a positive sum, got {sum}"
            )));
        }
        for c in &mut components {
            c.relative_strength /= sum;
        }
        // Re-sum so the stored values satisfy the tolerance exactly.
        Self::new(components)
    }

    pub fn single(center_offset: f64) -> Self {
        Self {
            components: vec![SpectralLineComponent::new("line", center_offset, 1.0)],
        }
    }

    pub fn rb_d2() -> Self {
        Self {
            components: default_rb_d2_components(),
        }
    }

    pub fn as_slice(&self) -> &[SpectralLineComponent] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Parses the plain-text component table: `label offset_GHz relative_strength`
    /// per line, `#` starts a comment. Strengths are renormalized; a warning is
    /// logged when the raw sum deviates from 1 by more than 1e-6.
    pub fn parse_table(text: &str, origin: &Path) -> Result<Self> {
        let mut components = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: origin.to_path_buf(),
                line: idx + 1,
                message,
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(parse_err(format!(
                    "expected `label offset_GHz relative_strength`, found {} fields",
                    fields.len()
                )));
            }
            let offset: f64 = fields[1]
                .parse()
                .map_err(|_| parse_err(format!("bad offset `{}`", fields[1])))?;
            let strength: f64 = fields[2]
                .parse()
                .map_err(|_| parse_err(format!("bad strength `{}`", fields[2])))?;
            if !offset.is_finite() || !strength.is_finite() || strength < 0.0 {
                return Err(parse_err("offset must be finite, strength non-negative".into()));
            }
            components.push(SpectralLineComponent::new(fields[0], offset, strength));
        }
        if components.is_empty() {
            return Err(Error::EmptyComponents);
        }
        let sum: f64 = components.iter().map(|c| c.relative_strength).sum();
        if (sum - 1.0).abs() > 1e-6 {
            log::warn!(
                "{}: component strengths sum to {sum}, renormalizing",
                origin.display()
            );
        }
        Self::normalized(components)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_table(&text, path)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::from("# label offset_GHz relative_strength\n");
        for c in &self.components {
            out.push_str(&format!(
                "{} {:.16e} {:.16e}\n",
                c.label, c.center_offset, c.relative_strength
            ));
        }
        out
    }
}

impl Default for ComponentSet {
    fn default() -> Self {
        Self::rb_d2()
    }
}

// Ground-state hyperfine shifts from the 5S1/2 centroid (GHz) and the 85Rb–87Rb
// D2 isotope shift. A lower ground level means a higher transition frequency.
const RB87_GROUND_F1_SHIFT: f64 = -4.271_676_631;
const RB87_GROUND_F2_SHIFT: f64 = 2.563_005_979;
const RB85_GROUND_F2_SHIFT: f64 = -1.770_843_922;
const RB85_GROUND_F3_SHIFT: f64 = 1.264_888_516;
const RB85_CENTROID_OFFSET: f64 = -0.078_095;

pub const RB85_ABUNDANCE: f64 = 0.7217;
pub const RB87_ABUNDANCE: f64 = 0.2783;

/// The four resolved ground-state components of the natural-abundance Rb D2 line,
/// ordered by decreasing transition frequency. Offsets are in GHz from the
/// 87Rb D2 centroid; strengths are abundance × (2F+1) weight within each isotope.
pub fn default_rb_d2_components() -> Vec<SpectralLineComponent> {
    let raw = [
        ("87Rb F=1", -RB87_GROUND_F1_SHIFT, RB87_ABUNDANCE * 3.0 / 8.0),
        (
            "85Rb F=2",
            RB85_CENTROID_OFFSET - RB85_GROUND_F2_SHIFT,
            RB85_ABUNDANCE * 5.0 / 12.0,
        ),
        (
            "85Rb F=3",
            RB85_CENTROID_OFFSET - RB85_GROUND_F3_SHIFT,
            RB85_ABUNDANCE * 7.0 / 12.0,
        ),
        ("87Rb F=2", -RB87_GROUND_F2_SHIFT, RB87_ABUNDANCE * 5.0 / 8.0),
    ];
    let total: f64 = raw.iter().map(|r| r.2).sum();
    raw.iter()
        .map(|&(label, offset, w)| SpectralLineComponent::new(label, offset, w / total))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VaporState {
    /// cm⁻³
    pub density: f64,
    /// Lorentzian half-width, GHz.
    pub width: f64,
    /// GHz
    pub shift: f64,
    pub excitation: f64,
}

impl VaporState {
    pub fn new(density: f64, width: f64, shift: f64, excitation: f64) -> Result<Self> {
        let state = Self {
            density,
            width,
            shift,
            excitation,
        };
        state.validate()?;
        Ok(state)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.density.is_finite() && self.density > 0.0) {
            return Err(Error::invalid(format!(
                "density must be positive, got {}",
                self.density
            )));
        }
        if !(self.width.is_finite() && self.width > 0.0) {
            return Err(Error::invalid(format!(
                "width must be positive, got {}",
                self.width
            )));
        }
        if !self.shift.is_finite() {
            return Err(Error::invalid("shift must be finite"));
        }
        if !(0.0..=1.0).contains(&self.excitation) {
            return Err(Error::invalid(format!(
                "excitation factor must lie in [0, 1], got {}",
                self.excitation
            )));
        }
        Ok(())
    }
}

/// Strictly increasing detuning samples in GHz.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyGrid {
    points: Vec<f64>,
}

impl FrequencyGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("frequency grid is empty"));
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("frequency grid contains non-finite values"));
        }
        if let Some(i) = points.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::invalid(format!(
                "frequency grid is not strictly increasing at index {}",
                i + 1
            )));
        }
        Ok(Self { points })
    }

    pub fn linspace(start: f64, stop: f64, count: usize) -> Result<Self> {
        if count < 2 || !(stop > start) {
            return Err(Error::invalid(format!(
                "need start < stop and at least two points, got [{start}, {stop}] x {count}"
            )));
        }
        let step = (stop - start) / (count - 1) as f64;
        let mut points: Vec<f64> = (0..count).map(|i| start + step * i as f64).collect();
        points[count - 1] = stop;
        Self::new(points)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first(&self) -> f64 {
        self.points[0]
    }

    pub fn last(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    pub fn max_spacing(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }
}

/// Ordered `key: value` metadata attached to a spectrum.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metadata {
    entries: Vec<(String, String)>,
}

impl Metadata {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces, keeping the first insertion position.
    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) {
        let key = key.into();
        let value = value.into();
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((key, value)),
        }
    }

    pub fn set_f64(&mut self, key: impl Into<String>, value: f64) {
        self.set(key, format_f64(value));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key).and_then(|v| v.trim().parse().ok())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Lossless 17-significant-digit rendering used in every file format.
pub fn format_f64(value: f64) -> String {
    format!("{value:.16e}")
}

/// Real signal sampled on a frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub grid: FrequencyGrid,
    pub values: Vec<f64>,
    pub metadata: Metadata,
}

impl Spectrum {
    pub fn new(grid: FrequencyGrid, values: Vec<f64>) -> Result<Self> {
        if grid.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                found: values.len(),
            });
        }
        Ok(Self {
            grid,
            values,
            metadata: Metadata::new(),
        })
    }

    pub fn with_metadata(mut self, metadata: Metadata) -> Self {
        self.metadata = metadata;
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn peak_to_peak(&self) -> f64 {
        peak_to_peak(&self.values)
    }
}

pub(crate) fn peak_to_peak(values: &[f64]) -> f64 {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if values.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

/// Sums `A_j / D_j^power` over components with `D_j = Δω − ν_j + ΔΩ − iΓ` (GHz).
#[inline]
pub(crate) fn resonance_sums(
    detuning: f64,
    width: f64,
    shift: f64,
    components: &[SpectralLineComponent],
) -> [Complex64; 3] {
    let mut sums = [Complex64::new(0.0, 0.0); 3];
    for c in components {
        let inv = Complex64::new(detuning - c.center_offset + shift, -width).inv();
        let inv2 = inv * inv;
        sums[0] += c.relative_strength * inv;
        sums[1] += c.relative_strength * inv2;
        sums[2] += c.relative_strength * inv2 * inv;
    }
    sums
}

/// Complex dielectric coefficient of the vapor at each grid sample.
pub fn dielectric_coefficient(
    grid: &FrequencyGrid,
    state: &VaporState,
    components: &[SpectralLineComponent],
    constants: &TransitionConstants,
) -> Result<Vec<Complex64>> {
    state.validate()?;
    check_components(components)?;
    let amplitude = state.excitation * constants.amplitude_ghz(state.density);
    Ok(grid
        .as_slice()
        .iter()
        .map(|&nu| {
            let [s0, _, _] = resonance_sums(nu, state.width, state.shift, components);
            Complex64::new(1.0, 0.0) + amplitude * s0
        })
        .collect())
}

/// Complex refractive index `√ε` on the branch with `Im n ≥ 0`.
pub fn complex_refractive_index(eps: Complex64) -> Complex64 {
    let n = eps.sqrt();
    if n.im < 0.0 {
        -n
    } else {
        n
    }
}
