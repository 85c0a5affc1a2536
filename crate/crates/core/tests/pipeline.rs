use std::path::Path;

use stftsynth::benchmark::{
    build_features, load_features, report, run_ablation, run_matrix, synth_data, CellStatus, ExperimentConfig,
    ExperimentMatrix, Profile, ResultRow, Workspace, CELL_RESULT,
};
use stftsynth::models::Variant;
use stftsynth::synthetic::EventClass;

fn tiny_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::for_profile(Profile::Desk);
    cfg.corpus.class_counts = [(EventClass::Hammer, 24), (EventClass::Breakage, 24)].into_iter().collect();
    cfg.model.g_width = 2;
    cfg.model.d_width = 4;
    cfg.train.max_epochs = 3;
    cfg.train.checkpoint_every = 1;
    cfg.train.batch_size = 8;
    cfg.eval.n_generated = 12;
    cfg.eval.figure_samples = 2;
    cfg.matrix = ExperimentMatrix {
        variants: vec![Variant::Dcgan, Variant::Stftsynth],
        classes: vec![EventClass::Hammer],
        window_sizes: vec![128],
        seeds: vec![],
    };
    cfg.ablation.window_size = 128;
    cfg
}

fn prepared(root: &Path, cfg: &ExperimentConfig) -> Workspace {
    let ws = Workspace::new(root);
    synth_data(&ws, cfg).unwrap();
    build_features(&ws, cfg).unwrap();
    ws
}

fn read_rows(path: &Path) -> Vec<ResultRow> {
    csv::Reader::from_path(path).unwrap().deserialize().map(|r| r.unwrap()).collect()
}

#[test]
fn matrix_runs_end_to_end_and_reruns_are_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config();
    let ws = prepared(dir.path(), &cfg);
    let first = run_matrix(&ws, &cfg, |_, _, _| {}).unwrap();
    assert_eq!((first.trained, first.cached), (2, 0));
    let rows = read_rows(&ws.results_path());
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.value.is_finite() && r.extractor_id == cfg.eval.extractor));
    let header = std::fs::read_to_string(ws.results_path()).unwrap();
    assert!(header.starts_with("variant,class,window_size,metric,value,extractor_id,pairing_policy,seed\n"));

    let mut statuses = Vec::new();
    let second = run_matrix(&ws, &cfg, |_, s, _| statuses.push(s)).unwrap();
    assert_eq!((second.trained, second.cached), (0, 2));
    assert!(statuses.iter().all(|s| *s == CellStatus::Cached));
    assert_eq!(read_rows(&ws.results_path()), rows);
}

#[test]
fn interrupted_cells_resume_to_the_same_result() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config();
    let ws = prepared(dir.path(), &cfg);
    let before = run_matrix(&ws, &cfg, |_, _, _| {}).unwrap();
    // Simulate a crash after the first epoch of every cell.
    for cell in cfg.matrix.cells(cfg.seed) {
        let cell_dir = ws.cell_dir(&cell);
        std::fs::remove_file(cell_dir.join(CELL_RESULT)).unwrap();
        for epoch in 2..=3 {
            std::fs::remove_dir_all(cell_dir.join("checkpoints").join(format!("epoch_{epoch:05}"))).unwrap();
        }
    }
    let after = run_matrix(&ws, &cfg, |_, _, _| {}).unwrap();
    assert_eq!(after.trained, 2);
    for (a, b) in before.results.iter().zip(&after.results) {
        assert_eq!(a.cell, b.cell);
        assert_eq!(a.epochs, b.epochs);
        assert!((a.report.fid - b.report.fid).abs() < 1e-6);
        assert!((a.report.ssim - b.report.ssim).abs() < 1e-6);
        assert!((a.report.psnr - b.report.psnr).abs() < 1e-6);
    }
}

#[test]
fn a_changed_config_refuses_to_reuse_old_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config();
    cfg.matrix.variants = vec![Variant::Lsgan];
    let ws = prepared(dir.path(), &cfg);
    run_matrix(&ws, &cfg, |_, _, _| {}).unwrap();
    let cell = cfg.matrix.cells(cfg.seed)[0];
    std::fs::remove_file(ws.cell_dir(&cell).join(CELL_RESULT)).unwrap();
    cfg.train.batch_size = 4;
    assert_eq!(run_matrix(&ws, &cfg, |_, _, _| {}).unwrap_err().exit_code(), 2);
}

#[test]
fn report_lists_tables_figures_and_missing_sections() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config();
    let ws = prepared(dir.path(), &cfg);
    assert_eq!(report(&ws, &cfg).unwrap_err().exit_code(), 2);
    run_matrix(&ws, &cfg, |_, _, _| {}).unwrap();
    let summary = report(&ws, &cfg).unwrap();
    let md = std::fs::read_to_string(&summary.path).unwrap();
    for heading in ["## SSIM", "## PSNR", "## FID", "## Ablation"] {
        assert!(md.contains(heading), "{heading}");
    }
    assert!(md.contains("| hammer |"));
    assert_eq!(summary.notices.len(), 1);
    assert!(summary.notices[0].contains("ablate"));
    assert_eq!(summary.figures.len(), 2);
    let img = png::Decoder::new(std::io::BufReader::new(std::fs::File::open(&summary.figures[0]).unwrap()));
    let info = img.read_info().unwrap().info().clone();
    assert!(info.width > info.height);
}

#[test]
fn missing_features_name_the_command_to_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config();
    let ws = Workspace::new(dir.path());
    let err = load_features(&ws).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("features"), "{err}");
    let err = run_matrix(&ws, &cfg, |_, _, _| {}).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    let err = build_features(&ws, &cfg).unwrap_err();
    assert!(err.to_string().contains("synth-data"), "{err}");
}

#[test]
fn ablation_covers_four_generators_and_matches_the_baseline_size() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config();
    cfg.train.max_epochs = 1;
    cfg.ablation.class = EventClass::Breakage;
    let ws = prepared(dir.path(), &cfg);
    let rows = run_ablation(&ws, &cfg).unwrap();
    let labels: Vec<&str> = rows.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, ["Full Model", "No DRB", "No BiGRU", "No DRB & BiGRU"]);
    assert_eq!(rows[0].variant, Variant::Stftsynth);
    assert_eq!(rows[3].variant, Variant::WganGp);
    assert!(rows[0].generator_parameters > rows[1].generator_parameters);
    assert!(rows[0].generator_parameters > rows[2].generator_parameters);
    assert!(rows[1].generator_parameters > rows[3].generator_parameters);
    assert!(rows[2].generator_parameters > rows[3].generator_parameters);
    assert!(ws.ablation_path().is_file());
    let md = std::fs::read_to_string(report_after_matrix(&ws, &cfg)).unwrap();
    assert!(md.contains("No DRB & BiGRU"));
}

fn report_after_matrix(ws: &Workspace, cfg: &ExperimentConfig) -> std::path::PathBuf {
    let mut cfg = cfg.clone();
    cfg.matrix.variants = vec![Variant::Dcgan];
    run_matrix(ws, &cfg, |_, _, _| {}).unwrap();
    report(ws, &cfg).unwrap().path
}
