//! End-to-end runs through the public API on small synthetic data.

use rul_dann::baselines::{
    train_coral_nn, train_single_domain, BaselineSpec, CoralDepth, CoralNnConfig,
};
use rul_dann::checkpoint::SavedModel;
use rul_dann::dann::{fit, DannHyperParams, REPORT_HEADER};
use rul_dann::data::{
    gen_synthetic, parse_cmapss, write_cmapss, DomainDataset, NormKind, ShiftConfig, SyntheticConfig,
};
use rul_dann::eval::{evaluate, predict_rul, PredictAt, RulModel};
use rul_dann::losses::RegressionNorm;
use rul_dann::optim::OptimizerKind;

fn domains(seed: u64) -> (DomainDataset, DomainDataset) {
    let config = SyntheticConfig {
        n_units: 10,
        t_range: (40, 60),
        q: 10,
        shift: ShiftConfig::sensor_inversion(10),
        ..SyntheticConfig::default()
    };
    let (mut s, mut t) = gen_synthetic(&config, seed).unwrap();
    s.normalize(NormKind::MinMax);
    t.normalize(NormKind::MinMax);
    (s, t)
}

fn tiny_hp() -> DannHyperParams {
    DannHyperParams {
        lstm_layers: vec![6],
        f_units: 6,
        reg_layers: vec![6],
        dom_layers: vec![6],
        batch_size: 32,
        t_w: 8,
        optimizer: OptimizerKind::Rmsprop,
        lr_reg: 0.003,
        lr_dom: 0.003,
        max_epochs: 4,
        ..DannHyperParams::default()
    }
}

fn assert_round_trip(model: SavedModel, ds: &DomainDataset) {
    let before = predict_rul(&model, ds, PredictAt::AllWindows).unwrap();
    let json = model.to_json().unwrap();
    let loaded = SavedModel::from_json(&json).unwrap();
    assert_eq!(loaded.window_len(), model.window_len());
    let after = predict_rul(&loaded, ds, PredictAt::AllWindows).unwrap();
    assert_eq!(before, after);
    assert_eq!(loaded.to_json().unwrap(), json);
}

#[test]
fn text_format_round_trip_preserves_training() {
    let config = SyntheticConfig {
        n_units: 6,
        t_range: (30, 40),
        q: 24,
        ..SyntheticConfig::default()
    };
    let (s, _) = gen_synthetic(&config, 4).unwrap();
    let text = write_cmapss(&s.runs).unwrap();
    let parsed = parse_cmapss(&text).unwrap();
    assert_eq!(parsed.len(), s.runs.len());
    for (a, b) in parsed.iter().zip(&s.runs) {
        assert_eq!(a.unit_id, b.unit_id);
        assert_eq!(a.features, b.features);
    }
}

#[test]
fn dann_trains_and_survives_a_checkpoint() {
    let (s, t) = domains(1);
    let (model, report) = fit(&s, &t, &tiny_hp(), 3).unwrap();
    assert!(report.to_csv().starts_with(REPORT_HEADER));
    assert_eq!(report.rows.len(), 4);
    let m = evaluate(&model, &t, PredictAt::AllWindows).unwrap();
    assert!(m.rmse.is_finite() && m.score.is_finite());
    let last = evaluate(&model, &t, PredictAt::LastWindow).unwrap();
    assert!(last.rmse.is_finite());
    assert_round_trip(model.into(), &t);
}

#[test]
fn baselines_train_and_survive_a_checkpoint() {
    let (s, t) = domains(2);
    let spec = BaselineSpec {
        lstm_layers: vec![6],
        f_units: 6,
        dense_layers: vec![6],
        epochs: 2,
        batch_size: 64,
        t_w: 8,
        p: RegressionNorm::Squared,
        ..BaselineSpec::default()
    };
    let (model, report) = train_single_domain(&s, &spec, 0).unwrap();
    assert_eq!(report.rows.len(), 2);
    assert!(report.rows.iter().all(|r| r.dom_loss.is_none() && r.val_rmse.is_none()));
    assert_round_trip(model.into(), &t);

    let config = CoralNnConfig {
        depth: CoralDepth::Deep,
        epochs: 2,
        ..CoralNnConfig::default()
    };
    let (model, _, diag) = train_coral_nn(&s, &t, &config, 0).unwrap();
    assert!(diag.gap_after < diag.gap_before);
    assert_eq!(model.window_len(), 1);
    assert_round_trip(model.into(), &t);
}

#[test]
fn predictions_cover_every_window_in_cycles() {
    let (s, t) = domains(3);
    let (model, _) = fit(&s, &t, &tiny_hp(), 0).unwrap();
    let pred = predict_rul(&model, &t, PredictAt::AllWindows).unwrap();
    assert_eq!(pred.len(), t.window_count(model.window_len()));
    assert!(pred.iter().all(|p| p.is_finite() && *p >= 0.0), "{pred:?}");
}
