use irtsim_core::design::{replication_keys, Condition, GeneratorKind, ReplicationKey, SimulationDesign};
use irtsim_core::estimation::{compare_nested, fit_mml, FitSettings, IrtModel, QuadratureGrid};
use irtsim_core::generators::{simulate_dataset, ResponseMatrix};
use irtsim_core::harness::{
    reaggregate, run_replication, run_study, summary_csv, validate_dataset, write_reports, Settings,
};
use irtsim_core::recovery::{bias, rmse};

fn quick() -> Settings {
    Settings {
        pa_iterations: 20,
        ..Settings::default()
    }
}

#[test]
fn a2_recovers_parameters_at_large_n() {
    let d = SimulationDesign::default();
    let (p, data) = simulate_dataset(&Condition::new(GeneratorKind::A2, 10, 5000), &d, 2024).unwrap();
    let e = fit_mml(&data, IrtModel::TwoPL, &QuadratureGrid::default(), &FitSettings::default()).unwrap();
    assert!(e.converged);
    assert!(rmse(&e.a_hat, &p.a).unwrap() < 0.12);
    assert!(rmse(&e.b_hat, &p.b).unwrap() < 0.12);
    assert!(bias(&e.a_hat, &p.a).unwrap().abs() < 0.08);
}

#[test]
fn lr_test_holds_size_under_a_true_2pl() {
    // 2PL vs 3PL at alpha = .05 on 2PL data; c sits on its boundary, so the
    // rejection rate is at most nominal
    let d = SimulationDesign::default();
    let grid = QuadratureGrid::default();
    let mut rejections = 0;
    let reps = 20;
    for seed in 0..reps {
        let (_, data) = simulate_dataset(&Condition::new(GeneratorKind::A2, 8, 400), &d, 300 + seed).unwrap();
        let fits: Vec<_> = [IrtModel::OnePL, IrtModel::TwoPL, IrtModel::ThreePL]
            .into_iter()
            .map(|m| fit_mml(&data, m, &grid, &FitSettings::default()).unwrap())
            .collect();
        let c = compare_nested(&fits, 0.05).unwrap();
        if c.pairs[1].p_value < 0.05 {
            rejections += 1;
        }
    }
    assert!(rejections <= 4, "{rejections} of {reps} rejections");
}

#[test]
fn typical_a3_replication() {
    let design = SimulationDesign::default();
    let cond = Condition::new(GeneratorKind::A3, 20, 500);
    let key = ReplicationKey::new(design.master_seed, &cond.condition_id, 0);
    let art = run_replication(&key, &cond, &design, &Settings::default());
    assert!(art.failure.is_none());
    assert_eq!(art.dimensionality.as_ref().unwrap().pa.retained, 1);
    assert_eq!(art.comparison.as_ref().unwrap().preferred, IrtModel::TwoPL);
    assert_eq!(art.m2.unwrap().df, 170);
}

#[test]
fn constant_column_is_reported_not_fatal() {
    let d = SimulationDesign::default();
    let (_, data) = simulate_dataset(&Condition::new(GeneratorKind::A3, 6, 300), &d, 8).unwrap();
    let rows: Vec<Vec<u8>> = data
        .rows()
        .map(|r| {
            let mut v = r.to_vec();
            v[2] = 1;
            v
        })
        .collect();
    let data = ResponseMatrix::from_rows(&rows).unwrap();
    let report = validate_dataset(&data, &quick(), 1).unwrap();
    assert!(report.warnings.iter().any(|w| w.contains("constant responses")));
    assert!(report.fits.iter().all(|f| f.degenerate_items == vec![2]));
    assert!(report.m2.is_some());
}

#[test]
fn persisted_study_reaggregates_identically() {
    let design = SimulationDesign {
        item_counts: vec![5],
        sample_sizes: vec![100, 150],
        replications: 2,
        ..SimulationDesign::default()
    };
    let run = run_study(&design, &quick(), 2).unwrap();
    assert_eq!(run.report.rows.len(), 6);
    assert_eq!(replication_keys(&design).unwrap().len(), run.artifacts.len());
    let dir = tempfile::tempdir().unwrap();
    let first = write_reports(&run.report, &run.artifacts, dir.path()).unwrap();
    let bytes: Vec<Vec<u8>> = first.iter().map(|p| std::fs::read(p).unwrap()).collect();
    let second = write_reports(&run.report, &run.artifacts, dir.path()).unwrap();
    assert_eq!(first, second);
    for (p, b) in second.iter().zip(&bytes) {
        assert_eq!(&std::fs::read(p).unwrap(), b);
    }
    let again = reaggregate(dir.path()).unwrap();
    assert_eq!(summary_csv(&again).unwrap(), summary_csv(&run.report).unwrap());
    assert_eq!(again, run.report);
}
