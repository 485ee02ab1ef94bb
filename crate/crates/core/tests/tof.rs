use proptest::prelude::*;
use statrs::function::erf::erfc;
use tofbeam_core::tof::{fit_fixed_order, FitOptions};
use tofbeam_core::{
    bin_to_columns, build_histogram, fit_modes, lock_comb, sample_events, tail_power_fit, tail_power_profile,
    DetectorGeometry, EventRecord, ModeSpec, TimeTagPair,
};

fn pairs(events: &[EventRecord]) -> Vec<TimeTagPair> {
    events.iter().map(|e| e.tags).collect()
}

/// Upper tail of the standard normal.
fn q(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

#[test]
fn noiseless_round_trip_is_exact() {
    let geom = DetectorGeometry {
        jitter_sigma: 0.0,
        ..Default::default()
    };
    for spec in [
        ModeSpec::gaussian(10.4, 1.55),
        ModeSpec::gaussian(4.7, 1.55).with_center(-3.0, 2.0),
        ModeSpec::mixture(30.0, 1.55, &[(0, 0.93), (1, 0.07)]),
    ] {
        let run = sample_events(&spec, &geom, 50_000, 5).unwrap();
        let p = pairs(&run.events);
        let comb = lock_comb(&build_histogram(&p, 1.0).unwrap(), geom.pitch_dt()).unwrap();
        let b = bin_to_columns(&p, &comb, &geom, 0.0).unwrap();
        assert_eq!(b.rejected, 0);
        for (a, e) in b.assignments.iter().zip(&run.events) {
            assert_eq!(*a, Some(e.true_column));
        }
        let h = geom.half_columns();
        let mut truth = vec![0u64; geom.n_columns as usize];
        for e in &run.events {
            truth[(e.true_column + h) as usize] += 1;
        }
        assert_eq!(b.profile.counts, truth);
    }
}

#[test]
fn heavy_jitter_misassignment_matches_normal_tail() {
    let geom = DetectorGeometry {
        jitter_sigma: 50.0,
        ..Default::default()
    };
    let n = 200_000;
    let run = sample_events(&ModeSpec::gaussian(10.4, 1.55), &geom, n, 17).unwrap();
    let p = pairs(&run.events);
    let comb = lock_comb(&build_histogram(&p, 1.0).unwrap(), geom.pitch_dt()).unwrap();
    assert!((comb.pitch - geom.pitch_dt()).abs() < 1.0, "{comb:?}");
    let b = bin_to_columns(&p, &comb, &geom, 0.0).unwrap();
    let wrong = b
        .assignments
        .iter()
        .zip(&run.events)
        .filter(|(a, e)| **a != Some(e.true_column))
        .count() as f64;
    let rate = 2.0 * q(geom.pitch_dt() / (2.0 * geom.jitter_sigma * std::f64::consts::SQRT_2));
    let expect = rate * n as f64;
    assert!((wrong - expect).abs() < 4.0 * expect.sqrt(), "{wrong} vs {expect:.0}");
}

#[test]
fn reported_uncertainty_matches_seed_scatter() {
    let geom = DetectorGeometry::default();
    let spec = ModeSpec::gaussian(10.4, 1.55);
    let mut mfds = Vec::new();
    let mut sigmas = Vec::new();
    for seed in 0..20 {
        let run = sample_events(&spec, &geom, 100_000, 1000 + seed).unwrap();
        let p = pairs(&run.events);
        let comb = lock_comb(&build_histogram(&p, 1.0).unwrap(), geom.pitch_dt()).unwrap();
        let b = bin_to_columns(&p, &comb, &geom, 0.0).unwrap();
        let fit = fit_modes(&b.profile, &geom, 1).unwrap();
        mfds.push(fit.mfd);
        sigmas.push(fit.mfd_uncertainty);
    }
    let n = mfds.len() as f64;
    let mean = mfds.iter().sum::<f64>() / n;
    let sd = (mfds.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let reported = sigmas.iter().sum::<f64>() / n;
    let ratio = sd / reported;
    assert!(
        (1.0 / 1.5..=1.5).contains(&ratio),
        "scatter {sd} vs reported {reported}"
    );
    assert!((mean - 10.4).abs() < 3.0 * sd / n.sqrt() + 0.02, "mean {mean}");
}

#[test]
fn shifting_the_profile_shifts_the_center() {
    // a disk far wider than the beam, so clipping does not break translation symmetry
    let geom = DetectorGeometry {
        n_columns: 101,
        active_diameter: 200.0,
        ..Default::default()
    };
    let run = sample_events(&ModeSpec::gaussian(10.4, 1.55), &geom, 100_000, 3).unwrap();
    let p = pairs(&run.events);
    let comb = lock_comb(&build_histogram(&p, 1.0).unwrap(), geom.pitch_dt()).unwrap();
    let profile = bin_to_columns(&p, &comb, &geom, 0.0).unwrap().profile;
    let base = fit_fixed_order(&profile, &geom, 0, FitOptions::default()).unwrap();
    let moved = fit_fixed_order(&profile.shifted(geom.column_pitch), &geom, 0, FitOptions::default()).unwrap();
    assert!(
        (moved.center_x - base.center_x - geom.column_pitch).abs() < 1e-6,
        "{base:?} {moved:?}"
    );
    assert!((moved.mfd - base.mfd).abs() < base.mfd_uncertainty);
    assert!((moved.mfd - base.mfd).abs() < 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn weights_stay_on_the_simplex(mfd in 8.0..30.0f64, a1 in 0.0..0.3f64, a2 in 0.0..0.2f64, seed in 0u64..1000) {
        let geom = DetectorGeometry::default();
        let spec = ModeSpec::mixture(mfd, 1.55, &[(0, 1.0 - a1 - a2), (1, a1), (2, a2)]);
        let run = sample_events(&spec, &geom, 50_000, seed).unwrap();
        let p = pairs(&run.events);
        let comb = lock_comb(&build_histogram(&p, 1.0).unwrap(), geom.pitch_dt()).unwrap();
        let b = bin_to_columns(&p, &comb, &geom, 0.0).unwrap();
        let fit = fit_fixed_order(&b.profile, &geom, 2, FitOptions::default()).unwrap();
        let total: f64 = fit.weights.iter().map(|m| m.weight).sum();
        prop_assert!((total - 1.0).abs() < 1e-6);
        prop_assert!(fit.weights.iter().all(|m| m.weight >= 0.0 && m.sigma >= 0.0));

        let mut prev = (1.0f64, 1.0f64);
        for j in 0..=40 {
            let x = j as f64 * 0.5;
            let t_fit = tail_power_fit(&fit, x).unwrap();
            let t_prof = tail_power_profile(&b.profile, fit.center_x, x).unwrap();
            prop_assert!(t_fit <= prev.0, "fit tail rose at {x}");
            prop_assert!(t_prof <= prev.1, "profile tail rose at {x}");
            prev = (t_fit, t_prof);
        }
    }
}
