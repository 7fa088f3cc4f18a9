use proptest::prelude::*;
use selref::analysis::{excitation_dependence, ExcitationPoint, ExcitationSeries, WidthNormalization};
use selref::fitkit::{residuals, FitParams};
use selref::lineshape::{complex_refractive_index, dielectric_coefficient, ComponentSet, FrequencyGrid, Spectrum, TransitionConstants, VaporState};
use selref::reflectance::ModelContext;
use selref::synth::cell_seed;

fn grid() -> FrequencyGrid {
    FrequencyGrid::linspace(-20.0, 20.0, 161).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reflectivity_is_a_fraction(n in 1e15..3e17f64, w in 0.05..20.0f64, eta in 0.0..1.0f64, shift in -2.0..2.0f64) {
        let r = ModelContext::new(n).reflectivity(&grid(), w, eta, shift);
        prop_assert!(r.iter().all(|&r| (0.0..1.0).contains(&r)));
    }

    #[test]
    fn absorption_is_positive(n in 1e15..3e17f64, w in 0.05..20.0f64, eta in 1e-3..1.0f64) {
        let state = VaporState::new(n, w, 0.0, eta).unwrap();
        let eps = dielectric_coefficient(&grid(), &state, ComponentSet::rb_d2().as_slice(), &TransitionConstants::rb_d2()).unwrap();
        prop_assert!(eps.iter().all(|e| e.im > 0.0));
    }

    #[test]
    fn index_branch_has_nonnegative_imaginary_part(re in -100.0..100.0f64, im in 0.0..100.0f64) {
        let n = complex_refractive_index(num_complex::Complex64::new(re, im));
        prop_assert!(n.im >= 0.0);
        let back = n * n;
        prop_assert!((back.re - re).abs() <= 1e-12 * (1.0 + re.abs() + im.abs()));
    }

    #[test]
    fn shift_translates_the_signal(w in 1.0..10.0f64, k in -20i32..20) {
        // Resonance sits at Δω = ν_j − ΔΩ: a shift of k grid steps moves the trace by −k samples.
        let g = FrequencyGrid::linspace(-40.0, 40.0, 801).unwrap();
        let ctx = ModelContext::new(1e17).with_components(ComponentSet::single(0.0));
        let d = 0.1 * k as f64;
        let a = ctx.signal(&g, w, 0.7, 0.0);
        let b = ctx.signal(&g, w, 0.7, d);
        let max = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 100..700 {
            let j = (i as i64 - k as i64) as usize;
            prop_assert!((b[j] - a[i]).abs() <= 1e-9 * max);
        }
    }

    #[test]
    fn residuals_vanish_at_the_generating_parameters(w in 1.0..15.0f64, eta in 0.1..1.0f64, scale in 0.2..5.0f64, offset in -1e-3..1e-3f64) {
        let ctx = ModelContext::new(1.3e17);
        let g = grid();
        let values = ctx.signal(&g, w, eta, 0.1).iter().map(|m| scale * m + offset).collect();
        let data = Spectrum::new(g, values).unwrap();
        let r = residuals(&FitParams::new(w, eta, 0.1, scale, offset), &data, &ctx).unwrap();
        prop_assert!(r.iter().all(|&x| x.abs() <= 1e-15));
    }

    #[test]
    fn normalized_slope_ignores_common_width_scale(a in 0.1..5.0f64, b in 0.5..15.0f64, k in 0.01..100.0f64) {
        let make = |f: f64| {
            let pts = [0.36, 0.5, 0.65, 0.8, 1.0].iter().enumerate()
                .map(|(i, &e)| ExcitationPoint::new(e, f * (a + b * e + 0.01 * (i as f64 - 2.0).powi(2)), f * 0.02))
                .collect();
            excitation_dependence(&ExcitationSeries::new(1e17, pts).unwrap(), WidthNormalization::FittedLine).unwrap()
        };
        let (s1, s2) = (make(1.0), make(k));
        prop_assert!((s1.normalized_slope - s2.normalized_slope).abs() <= 1e-12);
        prop_assert!((s1.normalized_slope_sigma - s2.normalized_slope_sigma).abs() <= 1e-10 * s1.normalized_slope_sigma.max(1e-12));
    }

    #[test]
    fn cell_seeds_are_distinct(seed in any::<u64>()) {
        let mut seen = std::collections::HashSet::new();
        for i in 0..8 {
            for j in 0..8 {
                prop_assert!(seen.insert(cell_seed(seed, i, j)));
            }
        }
    }
}
