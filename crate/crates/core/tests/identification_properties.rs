use fotrack::closed_loop::{generate_forcing, simulate, ForcingSpec, LoopConfig};
use fotrack::fractional::Memory;
use fotrack::identification::{
    closed_loop_cost, fit, rmse_cost, scan_alpha_l_kp, sweep_delay, FitMode, FitOptions, IdentError, DIVERGED,
};
use fotrack::models::{FractionalModel, GainLeadDelayModel, ModelKind, OperatorModel, PlantModel};
use fotrack::session::Session;
use fotrack::signal::SampledSignal;
use proptest::prelude::*;

const H: f64 = 0.01;

fn yp3_session(seconds: f64) -> Session {
    let model = FractionalModel { kp: 4.403, alpha: -0.4101, delay: 0.117 };
    let input = generate_forcing(&ForcingSpec::default_with_seed(7), H, seconds).unwrap();
    simulate(&LoopConfig::new(model, PlantModel::paper_eq6(), H, seconds), &input).unwrap()
}

#[test]
fn open_loop_fit_recovers_the_operator() {
    let s = yp3_session(20.0);
    let r = fit(&s, ModelKind::Yp3, &PlantModel::paper_eq6(), &FitOptions::default().with_mode(FitMode::OpenLoop)).unwrap();
    assert!(r.converged);
    assert!((r.params["alpha"] + 0.4101).abs() < 1e-3, "{}", r.summary_line());
    assert!((r.params["kp"] - 4.403).abs() < 4.403 * 1e-3);
    assert_eq!(r.params["L"], 0.12);
}

#[test]
fn fits_stay_inside_the_domain() {
    let s = yp3_session(20.0);
    let plant = PlantModel::paper_eq6();
    // starting on the wrong side of every constraint
    let opts = FitOptions::default()
        .with_initial("kp", -1.0)
        .with_initial("L", -0.2)
        .with_initial("alpha", -2.6);
    let r = fit(&s, ModelKind::Yp3, &plant, &opts).unwrap();
    assert!(r.rmse.is_finite(), "{}", r.summary_line());
    assert!(r.params["kp"] > 0.0 && r.params["L"] >= 0.0 && r.params["alpha"].abs() <= 2.0);
}

#[test]
fn unstable_start_is_recovered() {
    // kp = 1 with this plant, zero and delay is far outside the stable range
    let plant = PlantModel::paper_eq13();
    let model = GainLeadDelayModel { kp: 0.6099, zero: 3.0, delay: 0.3 };
    let input = generate_forcing(&ForcingSpec::default_with_seed(7), H, 20.0).unwrap();
    let s = simulate(&LoopConfig::new(model, plant, H, 20.0), &input).unwrap();
    let unstable = GainLeadDelayModel { kp: 1.0, ..model };
    assert_eq!(closed_loop_cost(&s, &unstable.into(), &plant, Memory::Full).unwrap(), DIVERGED);
    let r = fit(&s, ModelKind::Yp2, &plant, &FitOptions::default().with_fixed("L", 0.3).with_fixed("zero", 3.0)).unwrap();
    assert!(r.converged);
    assert!((r.params["kp"] - 0.6099).abs() < 1e-3, "{}", r.summary_line());
}

#[test]
fn fit_never_loses_to_a_bracketing_scan() {
    let s = yp3_session(20.0);
    let plant = PlantModel::paper_eq6();
    let alpha: Vec<f64> = (0..7).map(|k| -0.55 + 0.05 * k as f64).collect();
    let l = [0.08, 0.1, 0.12, 0.14, 0.16];
    let kp = [3.5, 4.0, 4.5, 5.0];
    let grid = scan_alpha_l_kp(&s, &plant, &alpha, &l, &kp, Memory::Full, None).unwrap();
    let (_, best) = grid.argmin().unwrap();
    let r = fit(&s, ModelKind::Yp3, &plant, &FitOptions::default()).unwrap();
    assert!(r.rmse <= best + 1e-6, "fit {} vs grid {best}", r.rmse);
}

#[test]
fn scan_is_independent_of_thread_count() {
    let s = yp3_session(10.0);
    let plant = PlantModel::paper_eq6();
    let run = |jobs| scan_alpha_l_kp(&s, &plant, &[-0.6, -0.4, -0.2], &[0.0, 0.1, 0.2], &[1.0, 4.0, 40.0], Memory::Full, jobs).unwrap();
    let serial = run(Some(1));
    assert_eq!(serial, run(Some(3)));
    assert_eq!(serial, run(None));
    assert_eq!(serial.rmse.len(), 27);
    // kp = 40 with a 0.2 s delay cannot be stabilized
    assert_eq!(serial.get(&[0, 2, 2]), DIVERGED);
    for (flat, &v) in serial.rmse.iter().enumerate() {
        let p = serial.point(flat);
        let model = FractionalModel { alpha: p[0].1, delay: p[1].1, kp: p[2].1 };
        assert_eq!(closed_loop_cost(&s, &model.into(), &plant, Memory::Full).unwrap(), v);
    }
}

#[test]
fn sweep_follows_the_axis() {
    let s = yp3_session(10.0);
    let plant = PlantModel::paper_eq6();
    let axis = [0.05, 0.1, 0.15];
    let results = sweep_delay(&s, &plant, ModelKind::Yp3, &axis, &FitOptions::default(), Some(2)).unwrap();
    assert_eq!(results.len(), 3);
    for (r, &l) in results.iter().zip(&axis) {
        assert_eq!(r.params["L"], l);
    }
    assert!(matches!(
        sweep_delay(&s, &plant, ModelKind::Yp3, &[], &FitOptions::default(), None),
        Err(IdentError::BadAxis("L"))
    ));
}

#[test]
fn option_errors() {
    let s = yp3_session(2.0);
    let plant = PlantModel::paper_eq6();
    let bad = FitOptions::default().with_fixed("tn", 0.1);
    assert!(matches!(fit(&s, ModelKind::Yp3, &plant, &bad), Err(IdentError::UnknownParameter { .. })));
    let mut partial = s.clone();
    partial.c = None;
    let open = FitOptions::default().with_mode(FitMode::OpenLoop);
    assert!(matches!(fit(&partial, ModelKind::Yp3, &plant, &open), Err(IdentError::MissingSignal("c"))));
}

#[test]
fn fully_fixed_fit_is_a_single_evaluation() {
    let s = yp3_session(5.0);
    let plant = PlantModel::paper_eq6();
    let opts = FitOptions::default().with_fixed("alpha", -0.4101).with_fixed("kp", 4.403).with_fixed("L", 0.117);
    let r = fit(&s, ModelKind::Yp3, &plant, &opts).unwrap();
    assert_eq!(r.evaluations, 1);
    assert_eq!(r.rmse, 0.0);
    let direct: OperatorModel = FractionalModel { kp: 4.403, alpha: -0.4101, delay: 0.117 }.into();
    assert_eq!(closed_loop_cost(&s, &direct, &plant, Memory::Full).unwrap(), 0.0);
}

proptest! {
    #[test]
    fn rmse_is_nonnegative_and_zero_only_on_equal(
        pairs in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..200),
    ) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let equal = a == b;
        let sa = SampledSignal::new(0.01, a).unwrap();
        let sb = SampledSignal::new(0.01, b).unwrap();
        let j = rmse_cost(&sa, &sb).unwrap();
        prop_assert!(j >= 0.0);
        prop_assert_eq!(j == 0.0, equal);
        prop_assert_eq!(rmse_cost(&sa, &sa).unwrap(), 0.0);
        prop_assert_eq!(j, rmse_cost(&sb, &sa).unwrap());
    }

    #[test]
    fn constant_offset_costs_its_magnitude(
        values in prop::collection::vec(-10.0f64..10.0, 1..200),
        d in -5.0f64..5.0,
    ) {
        let a = SampledSignal::new(0.01, values).unwrap();
        let b = a.map(|v| v + d).unwrap();
        prop_assert!((rmse_cost(&a, &b).unwrap() - d.abs()).abs() <= 1e-12 * (1.0 + d.abs()) * 10.0);
    }
}
