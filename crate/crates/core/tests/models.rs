//! Every two-population model honours the same contract on the synthetic world.

use longbasis_core::model::{fit_model, ModelChoice, ModelOptions, TwoPopulationModel};
use longbasis_core::rng::{domain, substream};
use longbasis_core::scenario::{ScenarioConfig, ScenarioEngine};
use longbasis_core::synthetic::{generate, SyntheticWorld};
use longbasis_core::{Grid, Span};

fn positive(g: &Grid) -> bool {
    g.as_slice().iter().all(|v| *v > 0.0 && v.is_finite())
}

#[test]
fn model_contract() {
    let world = SyntheticWorld::ew_style();
    let panels = generate(&world, 11, true).unwrap();
    let opts = ModelOptions::default();
    for choice in ModelChoice::ALL {
        let model = fit_model(choice, &panels.reference, &panels.book, &opts).unwrap();
        assert_eq!(model.choice(), choice);
        assert_eq!(model.origin(), 2016, "{choice:?}");

        let fitted_ref = model.fitted_reference().unwrap();
        assert_eq!((fitted_ref.ages, fitted_ref.years), (world.ages, world.reference_years), "{choice:?}");
        assert!(positive(&fitted_ref.values));
        let fitted_book = model.fitted_book().unwrap();
        assert_eq!((fitted_book.ages, fitted_book.years), (world.ages, world.book_years), "{choice:?}");
        assert!(positive(&fitted_book.values));

        let p = model.project(10, &opts, &mut substream(3, domain::SCENARIO, 0)).unwrap();
        let future = Span { first: 2017, last: 2026 };
        assert_eq!((p.reference.ages, p.reference.years), (world.ages, future), "{choice:?}");
        assert_eq!((p.book.ages, p.book.years), (world.ages, future), "{choice:?}");
        assert!(positive(&p.reference.values) && positive(&p.book.values), "{choice:?}");
        let again = model.project(10, &opts, &mut substream(3, domain::SCENARIO, 0)).unwrap();
        assert_eq!(p, again, "{choice:?}: same stream, same projection");

        let config = ScenarioConfig { n_scenarios: 1, model_choice: choice, ..ScenarioConfig::default() };
        let engine = ScenarioEngine::with_base(model.clone(), &panels.reference, &panels.book, config, &opts).unwrap();
        let (r, b) = engine.resample(&mut substream(5, domain::SCENARIO, 0)).unwrap();
        let refit = model.refit(&r, &b, &opts).unwrap();
        assert_eq!(refit.choice(), choice);
        assert_eq!(refit.fitted_book().unwrap().values.shape(), fitted_book.values.shape());
        let scale = fitted_ref.values.max_abs_diff(&refit.fitted_reference().unwrap().values);
        assert!(scale > 0.0 && scale < 0.05, "{choice:?}: refit moved rates by {scale}");
    }
}
