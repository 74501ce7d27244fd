use std::f64::consts::{FRAC_PI_2, PI};

use qoct_core::engine::{g0, EngineMode, HomEngine};
use qoct_core::oracle::{c_tau_oracle_batch, g0_quadrature, QuadratureGrid, QuadratureScheme};
use qoct_core::{
    BiphotonSpectrum, Execution, Layer, LayerStack, ModulationSettings, SidebandNetwork,
};

fn tau_grid(start: f64, stop: f64, count: usize) -> Vec<f64> {
    (0..count)
        .map(|i| start + (stop - start) * i as f64 / (count - 1) as f64)
        .collect()
}

fn max_gamma_gap(
    spectrum: &BiphotonSpectrum,
    arm1: ModulationSettings,
    arm2: ModulationSettings,
    stack: &LayerStack,
    taus: &[f64],
) -> f64 {
    let net = SidebandNetwork::build(arm1, arm2, 1e-10).unwrap();
    let engine = HomEngine::new(spectrum, &net, stack, EngineMode::FullSum).unwrap();
    let grid = QuadratureGrid::new(6.0, 513, QuadratureScheme::Simpson).unwrap();
    let oracle = c_tau_oracle_batch(
        spectrum,
        &arm1,
        &arm2,
        stack,
        taus,
        &grid,
        Execution::Parallel,
    )
    .unwrap();
    assert!((engine.g0() - oracle[0].g0).abs() < 1e-6 * engine.g0());
    taus.iter()
        .zip(&oracle)
        .map(|(&t, o)| (engine.gamma(t) - o.gamma()).abs())
        .fold(0.0, f64::max)
}

#[test]
fn two_layer_desk_scale_matches_quadrature() {
    let taus = tau_grid(-2.0, 8.0, 101);
    let stack = LayerStack::two_layer(0.6, 0.97, 6.0).unwrap();
    for (phi, theta2) in [(PI, 0.0), (0.0, FRAC_PI_2), (PI, PI)] {
        let spectrum = BiphotonSpectrum::with_bandwidths(2.0, 0.5, phi).unwrap();
        let gap = max_gamma_gap(
            &spectrum,
            ModulationSettings::new(1.2, 0.5, 0.0).unwrap(),
            ModulationSettings::new(1.2, 0.5, theta2).unwrap(),
            &stack,
            &taus,
        );
        assert!(gap < 1e-6, "phi {phi}, theta2 {theta2}: {gap}");
    }
}

#[test]
fn asymmetric_drive_and_three_layers_match_quadrature() {
    let spectrum = BiphotonSpectrum::with_bandwidths(2.0, 0.5, 2.2).unwrap();
    let stack = LayerStack::new(vec![
        Layer { r: 0.6, delay: 0.0 },
        Layer { r: 0.3, delay: 2.0 },
        Layer {
            r: 0.97,
            delay: 6.0,
        },
    ])
    .unwrap();
    let gap = max_gamma_gap(
        &spectrum,
        ModulationSettings::new(1.5, 0.5, 0.4).unwrap(),
        ModulationSettings::new(0.8, 0.3, 2.0).unwrap(),
        &stack,
        &tau_grid(-2.0, 8.0, 61),
    );
    assert!(gap < 1e-6, "{gap}");
}

#[test]
fn closed_form_g0_matches_quadrature() {
    let spectrum = BiphotonSpectrum::with_bandwidths(2.0, 0.5, 0.7).unwrap();
    let arm1 = ModulationSettings::new(1.2, 0.5, 0.0).unwrap();
    let arm2 = ModulationSettings::new(0.9, 0.5, 1.0).unwrap();
    let stack = LayerStack::two_layer(0.6, 0.97, 1.0).unwrap();
    let grid = QuadratureGrid::new(6.0, 520, QuadratureScheme::Trapezoid).unwrap();
    let quad = g0_quadrature(&spectrum, &arm1, &arm2, &stack, &grid).unwrap();
    let net = SidebandNetwork::build(arm1, arm2, 1e-10).unwrap();
    let closed = g0(&spectrum, &net, &stack).unwrap();
    assert!((quad - closed).abs() < 1e-9 * closed, "{quad} vs {closed}");
}
