use longbasis_core::book::{book_rates, BookPath};
use longbasis_core::model::{FittedModel, LcCohortsModel, ModelChoice, ModelOptions};
use longbasis_core::scenario::{ScenarioConfig, ScenarioEngine};
use longbasis_core::synthetic::{generate, SyntheticWorld};
use longbasis_core::RateSurface;

fn config(n: usize, resample: bool) -> ScenarioConfig {
    ScenarioConfig {
        n_scenarios: n,
        model_choice: ModelChoice::LcCohorts,
        resample,
        master_seed: 99,
        ..ScenarioConfig::default()
    }
}

/// With resampling off and every innovation variance at zero, the single
/// scenario is the central projection of the base fit.
#[test]
fn no_resample_zero_variance_is_the_central_projection() {
    let panels = generate(&SyntheticWorld::ew_style(), 4, true).unwrap();
    let opts = ModelOptions::default();
    let mut model = LcCohortsModel::fit(&panels.reference, &panels.book, &opts).unwrap();
    model.walk.sd = 0.0;
    model.book_dynamics.k.innovation_sd = 0.0;
    let engine = ScenarioEngine::with_base(
        FittedModel::LcCohorts(model.clone()),
        &panels.reference,
        &panels.book,
        config(1, false),
        &opts,
    )
    .unwrap();
    let set = engine.run().unwrap();
    let s = &set.scenarios[0];

    let lc = &model.fit.reference.lc;
    let k_last = *lc.k.last().unwrap();
    for (i, x) in lc.ages.iter().enumerate() {
        for (j, t) in set.years.iter().enumerate() {
            let k = k_last + model.walk.drift * (j + 1) as f64;
            let expected = (lc.a[i] + lc.b[i] * k + model.fit.reference.gamma_at(x, t)).exp();
            let got = s.reference_m[(i, j)];
            assert!((got - expected).abs() <= 1e-13 * expected, "reference ({x}, {t}): {got} vs {expected}");
        }
    }

    // AR(1) mean path from the last fitted book year, run through the gap to
    // the reference origin.
    let ar = model.book_dynamics.k;
    let mut k = *model.fit.book.fitted_path().k.last().unwrap();
    let lag = (set.years.first - 1 - model.fit.book.years.last) as usize;
    let mut path = Vec::new();
    for step in 0..lag + set.years.len() {
        k = ar.psi0 + ar.psi1 * k;
        if step >= lag {
            path.push(k);
        }
    }
    let reference =
        RateSurface::new(set.reference_ages, set.years, longbasis_core::RateKind::Central, s.reference_m.clone()).unwrap();
    let book = book_rates(&model.fit.book, &reference, &BookPath { k: path, k2: Vec::new() }).unwrap();
    assert!(book.values.max_abs_diff(&s.book_m) <= 1e-15);
}

#[test]
fn scenario_order_does_not_matter() {
    let panels = generate(&SyntheticWorld::ew_style(), 8, true).unwrap();
    let engine = ScenarioEngine::new(&panels.reference, &panels.book, config(12, true), &ModelOptions::default()).unwrap();
    let forward = engine.run().unwrap();
    let mut backward: Vec<_> = (0..12).rev().map(|s| (s, engine.run_one(s))).collect();
    backward.sort_by_key(|(s, _)| *s);
    let shuffled = engine.collect(backward.into_iter().map(|(_, r)| r).collect()).unwrap();
    assert_eq!(forward, shuffled);
    for sc in &forward.scenarios {
        assert!(sc.lives.windows(2).all(|w| w[1] <= w[0]));
        for (m, q) in sc.book_m.as_slice().iter().zip(sc.book_q.as_slice()) {
            assert!((q - -(-m).exp_m1()).abs() <= 1e-12);
        }
    }
}
