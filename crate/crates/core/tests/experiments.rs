use npcure::bootstrap::{log_grid, mise_star, BootstrapConfig};
use npcure::experiment::{true_mise, true_mise_surface, true_mise_two_bw, MiseConfig};
use npcure::kernel::Kernel;
use npcure::models;
use npcure::rng;

fn max_over_min(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    max / min
}

#[test]
fn bootstrap_criterion_is_flat_around_its_minimizer() {
    let grid = log_grid(5.0, 100.0, 35).unwrap();
    for seed in 0..5u64 {
        let sample = models::model1().generate(100, &mut rng::stream(seed, 0)).unwrap();
        let config = BootstrapConfig::new(200, grid.clone(), seed);
        let curve = mise_star(&sample, 5.0, &config, Kernel::Epanechnikov).unwrap();
        assert!(curve.values.iter().all(|&v| v >= 0.0));
        let k = curve.argmin_index;
        let window = &curve.values[k.saturating_sub(5)..(k + 6).min(grid.len())];
        assert!(max_over_min(window) < 1.25, "seed {seed}: {:?}", curve.values);
        assert!(max_over_min(&curve.values[12..23]) < 2.0, "seed {seed}");
    }
}

#[test]
fn mise_surfaces_are_nonnegative_and_consistent() {
    let spec = models::model2();
    let grid = log_grid(5.0, 80.0, 5).unwrap();
    let config = MiseConfig::new(3);
    let xs = [0.0, 5.0, 10.0];
    let surface = true_mise_surface(&spec, 50, 20, &xs, &grid, &config).unwrap();
    assert_eq!(surface.values.len(), xs.len() * grid.len());
    assert!(surface.values.iter().all(|&v| v >= 0.0 && v.is_finite()));
    for (ix, &x) in xs.iter().enumerate() {
        let single = true_mise(&spec, 50, 20, x, &grid, &config).unwrap();
        assert_eq!(surface.curve(ix).unwrap().values, single.values);
    }

    let two = true_mise_two_bw(&spec, 50, 20, 5.0, &grid, &grid, &config).unwrap();
    let one = true_mise(&spec, 50, 20, 5.0, &grid, &config).unwrap();
    for k in 0..grid.len() {
        assert_eq!(two.value(0, k, k), one.values[k]);
    }
    assert!(two.values.iter().all(|&v| v >= 0.0));
}
