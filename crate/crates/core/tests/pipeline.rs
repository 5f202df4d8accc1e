use ssvep_xfer::eval::{build_cv_plan, run_eval, selection_records, EvalConfig, EvalReport};
use ssvep_xfer::selection::SelectionConfig;
use ssvep_xfer::signal::{FilterBank, FilterBankSpec};
use ssvep_xfer::synth::{gen_dataset, SynthSpec};
use ssvep_xfer::tensor::EpochTensor;
use ssvep_xfer::transfer::{classify, fit_itrca, fit_trca, Algorithm};

const FS: f64 = 250.0;

fn dataset(n_stimuli: usize, clusters: &[usize], snr_db: f64, length_s: f64, seed: u64) -> Vec<EpochTensor> {
    let mut spec = SynthSpec::jfpm(n_stimuli, clusters, Some(snr_db), seed);
    spec.trial_length_s = length_s;
    gen_dataset(&spec).unwrap().into_iter().map(|(t, _)| t).collect()
}

fn config(length_s: f64, selection: SelectionConfig) -> EvalConfig {
    let mut cfg = EvalConfig::new(FilterBankSpec::m3(3, FS, None).unwrap(), FS, length_s);
    cfg.selection = selection;
    cfg
}

fn predictions(report: &EvalReport) -> Vec<usize> {
    assert_eq!(report.n_failed_folds, 0);
    report
        .folds
        .iter()
        .flat_map(|f| f.predictions.iter().copied())
        .collect()
}

#[test]
fn selection_bounds_reduce_to_plain_frameworks() {
    let data = dataset(4, &[2, 2], 0.0, 0.5, 5);
    let plan = build_cv_plan(4, 4, 2).unwrap();
    let at = |c_lb: f64| {
        let sel = SelectionConfig {
            c_lb,
            ..SelectionConfig::default()
        };
        predictions(&run_eval(&data, &plan, Algorithm::SsItrca, &config(0.5, sel)).unwrap())
    };
    let itrca = predictions(
        &run_eval(
            &data,
            &plan,
            Algorithm::Itrca,
            &config(0.5, SelectionConfig::disabled()),
        )
        .unwrap(),
    );
    let trca =
        predictions(&run_eval(&data, &plan, Algorithm::Trca, &config(0.5, SelectionConfig::disabled())).unwrap());
    assert_eq!(at(0.0), itrca);
    assert_eq!(at(1.0), trca);
}

#[test]
fn clean_data_is_classified_perfectly() {
    let data = dataset(4, &[3], 20.0, 1.0, 8);
    let plan = build_cv_plan(3, 4, 3).unwrap();
    for algo in Algorithm::ALL {
        let report = run_eval(&data, &plan, algo, &config(1.0, SelectionConfig::default())).unwrap();
        assert_eq!(report.accuracy, 1.0, "{algo}");
        assert_eq!(report.confusion.iter().flatten().sum::<u64>(), 3 * 4 * 4);
    }
}

#[test]
fn evaluation_is_deterministic() {
    let data = dataset(3, &[3], 0.0, 0.5, 1);
    let plan = build_cv_plan(3, 4, 2).unwrap();
    let cfg = config(0.5, SelectionConfig::default());
    let a = serde_json::to_string(&run_eval(&data, &plan, Algorithm::SsItrca, &cfg).unwrap()).unwrap();
    let b = serde_json::to_string(&run_eval(&data, &plan, Algorithm::SsItrca, &cfg).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn relabelling_subjects_permutes_results() {
    let data = dataset(3, &[2, 2], 0.0, 0.5, 4);
    let plan = build_cv_plan(4, 4, 2).unwrap();
    let cfg = config(0.5, SelectionConfig::disabled());
    let base = run_eval(&data, &plan, Algorithm::Itrca, &cfg).unwrap();
    let order = [2usize, 0, 3, 1];
    let permuted: Vec<EpochTensor> = order.iter().map(|&k| data[k].clone()).collect();
    let moved = run_eval(&permuted, &plan, Algorithm::Itrca, &cfg).unwrap();
    for (new_id, &old_id) in order.iter().enumerate() {
        assert_eq!(moved.per_subject[new_id].accuracy, base.per_subject[old_id].accuracy);
    }
    assert_eq!(moved.accuracy, base.accuracy);
}

#[test]
fn predictions_ignore_trial_scaling() {
    let data = dataset(4, &[3], 0.0, 0.5, 2);
    let bank = FilterBank::design(&FilterBankSpec::m3(3, FS, None).unwrap(), FS).unwrap();
    let target = data[0].select_blocks(&[0, 1, 2]).unwrap();
    let models = [
        fit_trca(&target, &bank).unwrap(),
        fit_itrca(&target, &data[1..], &bank, &SelectionConfig::default()).unwrap(),
    ];
    for model in &models {
        for i in 0..4 {
            let trial = data[0].trial(i, 3);
            let (p, fv) = classify(model, &trial).unwrap();
            let (q, gv) = classify(model, &(&trial * 37.5)).unwrap();
            assert_eq!(p, q);
            for (a, b) in fv.r.iter().zip(&gv.r) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn exported_features_cover_every_test_trial() {
    let data = dataset(3, &[3], 0.0, 0.5, 6);
    let plan = build_cv_plan(3, 4, 2).unwrap();
    let mut cfg = config(0.5, SelectionConfig::disabled());
    cfg.export_features = true;
    let report = run_eval(&data, &plan, Algorithm::Itrca, &cfg).unwrap();
    let t = report.feature_tensor().unwrap();
    assert_eq!(t.dims(), [3, 1, 3, 12]);
    for fold in &report.folds {
        assert_eq!(fold.features.as_ref().unwrap().len(), 3);
    }
}

#[test]
fn selection_records_name_source_subjects() {
    let data = dataset(3, &[2, 2], 10.0, 0.5, 3);
    let records = selection_records(&data, 2, &config(0.5, SelectionConfig::default())).unwrap();
    assert_eq!(records.len(), 4 * 3 * 3);
    for r in &records {
        assert!(!r.source_subjects.contains(&r.target_subject));
        assert_eq!(r.raw.len(), 3);
        assert!(r.selected.iter().all(|s| r.source_subjects.contains(s)));
        assert!(!r.selected.is_empty());
    }
}

#[test]
fn mismatched_subjects_are_rejected() {
    let mut data = dataset(3, &[2], 0.0, 0.5, 0);
    data.push(dataset(4, &[1], 0.0, 0.5, 0).remove(0));
    let plan = build_cv_plan(3, 4, 2).unwrap();
    assert!(run_eval(&data, &plan, Algorithm::Trca, &config(0.5, SelectionConfig::default())).is_err());
}
