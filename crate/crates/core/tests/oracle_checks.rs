use npcure::kernel::Kernel;
use npcure::models::{self, Covariate, ModelSpec};
use npcure::oracle::{self, PopulationFunctions};
use npcure::quadrature::adaptive_simpson;
use npcure::rng;

fn at_fixed_x(spec: &ModelSpec, x: f64) -> ModelSpec {
    ModelSpec {
        covariate: Covariate::Fixed { x },
        ..spec.clone()
    }
}

/// `H(t|x)` built from densities: events `p f0 Ḡ` plus censorings `g S`.
fn h_from_densities(spec: &ModelSpec, t: f64, x: f64) -> f64 {
    let p = spec.uncured(x);
    let g = |s: f64| spec.censoring.density(s).expect("censoring density");
    let integrand = |s: f64| p * spec.latency.density(s, x) * spec.censoring.survival(s) + g(s) * spec.survival(s, x);
    let end = spec.latency.support_end(x);
    let mut total = adaptive_simpson(integrand, 0.0, t.min(end), 1e-13).value;
    if t > end {
        total += adaptive_simpson(integrand, end, t, 1e-13).value;
    }
    total
}

#[test]
fn at_risk_function_matches_density_integrals() {
    for spec in [models::model1(), models::model2()] {
        let pop = PopulationFunctions::from_model(&spec);
        for x in [-10.0, 0.0, 5.0, 15.0] {
            for t in [0.25, 0.5, 1.0, 2.0, 4.0, 6.0] {
                let direct = h_from_densities(&spec, t, x);
                let product = pop.h(t, x);
                assert!(
                    (direct - product).abs() < 1e-10,
                    "{} at (t={t}, x={x}): {direct} vs {product}",
                    spec.id
                );
                assert_eq!(pop.at_risk(t, x), pop.survival(t, x) * pop.censoring_survival(t));
            }
        }
    }
}

#[test]
fn h1_agrees_with_simulation() {
    let spec = at_fixed_x(&models::model1(), 0.0);
    let pop = PopulationFunctions::from_model(&spec);
    let n = 1_000_000;
    let sample = spec.generate(n, &mut rng::stream(2024, 0)).unwrap();
    for t in [0.5, 1.0, 3.0] {
        let hits = sample.records().iter().filter(|r| r.delta && r.t <= t).count();
        let freq = hits as f64 / n as f64;
        let exact = pop.h1(t, 0.0);
        let se = (exact * (1.0 - exact) / n as f64).sqrt();
        assert!((freq - exact).abs() < 4.0 * se, "t={t}: {freq} vs {exact}");
    }
}

/// Both integrals of `Φ(y,t,x)` as expectations over simulated `(T, δ)`.
#[test]
fn phi_agrees_with_simulation() {
    let base = models::model1();
    let pop = PopulationFunctions::from_model(&base);
    let (y, x, t) = (3.0, 5.0, 1.0);
    let n = 400_000;
    let at_y = at_fixed_x(&base, y).generate(n, &mut rng::stream(77, 0)).unwrap();
    let at_x = at_fixed_x(&base, x).generate(n, &mut rng::stream(77, 1)).unwrap();

    let mean_sd = |vals: Vec<f64>| {
        let m = vals.iter().sum::<f64>() / n as f64;
        let v = vals.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        (m, (v / n as f64).sqrt())
    };
    let (first, se1) = mean_sd(
        at_y.records()
            .iter()
            .map(|r| {
                if r.delta && r.t <= t {
                    1.0 / pop.at_risk(r.t, x)
                } else {
                    0.0
                }
            })
            .collect(),
    );
    let (second, se2) = mean_sd(
        at_x.records()
            .iter()
            .map(|r| {
                if r.delta && r.t <= t {
                    pop.at_risk(r.t, y) / pop.at_risk(r.t, x).powi(2)
                } else {
                    0.0
                }
            })
            .collect(),
    );
    let simulated = first - second;
    let se = (se1 * se1 + se2 * se2).sqrt();
    let exact = oracle::phi(&pop, y, t, x).unwrap();
    assert!((simulated - exact).abs() < 4.0 * se, "{simulated} ± {se} vs {exact}");
    assert!(exact.abs() > 4.0 * se, "check has no power: {exact} vs se {se}");
}

#[test]
fn h_amise_times_fifth_root_of_n_is_constant() {
    for spec in [models::model1(), models::model2()] {
        let pop = PopulationFunctions::from_model(&spec);
        let ints = oracle::amise_integrals(&pop, 5.0, None).unwrap();
        let reference = ints.bandwidth(100, Kernel::Epanechnikov).unwrap() * 100f64.powf(0.2);
        for n in [50, 200, 1000, 5000] {
            let h = oracle::h_amise(&pop, 5.0, n, None, Kernel::Epanechnikov).unwrap();
            let scaled = h * (n as f64).powf(0.2);
            assert!((scaled - reference).abs() <= 1e-10 * reference, "{} n={n}", spec.id);
        }
    }
}

#[test]
fn model1_h_amise_lies_in_the_experiment_grid() {
    let pop = PopulationFunctions::from_model(&models::model1());
    let h = oracle::h_amise(&pop, 5.0, 100, Some((0.1, 4.0)), Kernel::Epanechnikov).unwrap();
    assert!((5.0..=100.0).contains(&h), "h_amise = {h}");
}

#[test]
fn amse_report_recomposes() {
    let pop = PopulationFunctions::from_model(&models::model1());
    let r = oracle::amse(&pop, 1.0, 5.0, 10.0, 100, Kernel::Epanechnikov).unwrap();
    assert_eq!(r.amse, r.bias_term + r.variance_term);
    let (bias, variance, total) = r.recompose();
    assert!((bias - r.bias_term).abs() <= 1e-12 * r.bias_term.abs().max(1e-300));
    assert!((variance - r.variance_term).abs() <= 1e-12 * r.variance_term);
    assert!((total - r.amse).abs() <= 1e-12 * r.amse);
}
