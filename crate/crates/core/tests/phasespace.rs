mod common;

use std::f64::consts::PI;

use squeezefit::phasespace::*;
use squeezefit::pulse::make_squeeze_pulse;
use squeezefit::*;

fn squeeze() -> (OscillatorParams, PulseSchedule) {
    let p = OscillatorParams::reference_trap()
        .with_xi_um2(-0.1)
        .unwrap();
    let pulse = make_squeeze_pulse(&p, 0.784, 0.0).unwrap();
    (p, pulse)
}

/// Orientation (mod pi) of the points in a radial annulus, from the mean of
/// the doubled polar angle.
fn arm_angle(c: &PhaseCloud, r_lo: f64, r_hi: f64) -> (f64, usize) {
    let n = c.normalize();
    let (mut s, mut k) = ((0.0, 0.0), 0);
    for p in &n.points {
        let r = p[0].hypot(p[1]);
        if r >= r_lo && r < r_hi {
            let phi = 2.0 * p[1].atan2(p[0]);
            s.0 += phi.cos();
            s.1 += phi.sin();
            k += 1;
        }
    }
    (0.5 * s.1.atan2(s.0), k)
}

fn rms_radius(c: &PhaseCloud) -> f64 {
    let n = c.normalize();
    (n.points
        .iter()
        .map(|p| p[0] * p[0] + p[1] * p[1])
        .sum::<f64>()
        / n.len() as f64)
        .sqrt()
}

#[test]
fn mass_changes_size_but_not_spiral_shape() {
    let (p, pulse) = squeeze();
    let cfg = SimConfig::new(pulse.t_end() + 150.1e-6, 21, 3000);
    let t = [150e-6];
    let light = synth_experiment(&p, &pulse, &cfg, None, &t)
        .unwrap()
        .remove(0)
        .cloud;
    let heavy_p = p.with_mass(2.0 * p.mass()).unwrap();
    let heavy = synth_experiment(&heavy_p, &pulse, &cfg, None, &t)
        .unwrap()
        .remove(0)
        .cloud;

    let ratio = rms_radius(&light) / rms_radius(&heavy);
    assert!((ratio - 2f64.sqrt()).abs() < 0.1, "radius ratio {ratio}");

    for (lo, hi) in [(0.2e-6, 0.35e-6), (0.35e-6, 0.5e-6), (0.5e-6, 0.7e-6)] {
        let (a, na) = arm_angle(&light, lo, hi);
        let (b, nb) = arm_angle(&heavy, lo, hi);
        assert!(na > 100 && nb > 100, "annulus counts {na} {nb}");
        let mut d = (a - b).abs() % PI;
        d = d.min(PI - d);
        assert!(d < 0.05 * PI, "annulus [{lo}, {hi}]: {a} vs {b}");
    }
}

#[test]
fn chain_is_transparent_away_from_the_edge() {
    let (p, pulse) = squeeze();
    let chain = MeasurementChain {
        band_halfwidth: 50e3,
        ..MeasurementChain::for_params(&p)
    };
    let t = [60e-6];
    let passed = (0..10u64)
        .filter(|&seed| {
            let cfg = SimConfig::new(pulse.t_end() + 60.1e-6, seed, 300);
            let plain = synth_experiment(&p, &pulse, &cfg, None, &t)
                .unwrap()
                .remove(0)
                .cloud;
            let measured = synth_experiment(&p, &pulse, &cfg, Some(&chain), &t)
                .unwrap()
                .remove(0)
                .cloud;
            compare_clouds(&plain, &measured, PValueMethod::default(), seed)
                .unwrap()
                .p_value
                > 0.05
        })
        .count();
    assert!(passed >= 9, "{passed}/10");
}

#[test]
fn chain_distorts_early_snapshots() {
    let (p, pulse) = squeeze();
    let chain = MeasurementChain::for_params(&p);
    let cfg = SimConfig::new(pulse.t_end() + 100.1e-6, 8, 300);
    let times = [0.0, 100e-6];
    let plain = synth_experiment(&p, &pulse, &cfg, None, &times).unwrap();
    let measured = synth_experiment(&p, &pulse, &cfg, Some(&chain), &times).unwrap();
    let p_at = |k: usize| {
        compare_clouds(
            &plain[k].cloud,
            &measured[k].cloud,
            PValueMethod::Asymptotic,
            0,
        )
        .unwrap()
        .p_value
    };
    assert!(
        p_at(0) < 0.01 && p_at(0) < p_at(1),
        "{} {}",
        p_at(0),
        p_at(1)
    );
}

#[test]
fn synthetic_experiment_shape() {
    let (p, pulse) = squeeze();
    let cfg = SimConfig::new(pulse.t_end() + 80e-6, 1, 500);
    let clouds = synth_experiment(&p, &pulse, &cfg, None, &[77.5e-6]).unwrap();
    assert_eq!(clouds.len(), 1);
    let c = &clouds[0].cloud;
    assert!(c.len() <= 500 && c.len() + clouds[0].escaped == 500);
    assert_eq!(c.source, CloudSource::SyntheticExperiment);
    assert_eq!(c.t_snap, 77.5e-6);
}

#[test]
fn cloud_file_round_trip() {
    let (p, pulse) = squeeze();
    let cfg = SimConfig::new(pulse.t_end() + 20e-6, 2, 50);
    let c = synth_experiment(&p, &pulse, &cfg, None, &[12.5e-6])
        .unwrap()
        .remove(0)
        .cloud;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cloud.csv");
    write_cloud(&c, &path).unwrap();
    let back = read_cloud(&path).unwrap();
    assert_eq!(back.len(), c.len());
    for (a, b) in back.points.iter().zip(&c.points) {
        for k in 0..2 {
            assert!((a[k] - b[k]).abs() <= 1e-12 * b[k].abs());
        }
    }
    assert!((back.t_snap - c.t_snap).abs() <= 1e-12 * c.t_snap);
    assert_eq!(back.source, c.source);
    assert!(read_cloud(dir.path().join("missing.csv")).is_err());
}

#[test]
fn normalization_round_trip_is_exact_for_powers_of_two() {
    let c = PhaseCloud::new(
        0.0,
        vec![[1e-7, 3.0], [-2e-7, -0.5]],
        CloudSource::Imported,
        4.0,
    )
    .unwrap();
    assert_eq!(c.normalize().denormalize(), c);
    assert_eq!(c.normalize().points[0], [1e-7, 0.75]);
}
