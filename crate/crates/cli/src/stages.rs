//! One function per command. Each reads its inputs from the output
//! directory (or the configured input paths) and writes its artifacts there.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use comprehend_core::bench::{append_bench_csv, bench, BenchError, BenchOptions};
use comprehend_core::dataset::{
    assemble, derive_confusion_labels, format_dataset, format_eeg_features, format_nlp_features, known_unknown_matrix,
    parse_dataset, parse_eeg_features, parse_nlp_features, parse_responses, Dataset,
};
use comprehend_core::ensemble::{
    evaluate_task, fit_final, format_fold_csv, format_summary_csv, format_table, parse_fold_csv, EnsembleError,
};
use comprehend_core::nlp::{parse_conllu, parse_tree_file, DepOptions};
use comprehend_core::pipeline::{nlp_records, preprocess, segment_features};
use comprehend_core::signal::{format_recording, parse_manifest, parse_recording, ManifestEntry, MUSE_CHANNELS};
use comprehend_core::synth::{generate, write_tree};

use crate::config::PipelineConfig;
use crate::error::CliError;

pub const PROCESSED_DIR: &str = "processed";
pub const EOG_REPORT: &str = "processed/eog.csv";
pub const EEG_FEATURES: &str = "features/eeg.csv";
pub const NLP_FEATURES: &str = "features/nlp.csv";
pub const DATASET: &str = "dataset.csv";
pub const MODELS_DIR: &str = "models";
pub const REPORTS_DIR: &str = "reports";
pub const TABLE: &str = "reports/table.txt";
pub const SUMMARY: &str = "reports/summary.csv";
pub const KNOWN_UNKNOWN: &str = "reports/known_unknown.csv";
pub const BENCH_CSV: &str = "bench.csv";

fn read(path: &Path, stage: &str) -> Result<String, CliError> {
    if !path.exists() {
        return Err(CliError::missing(path, stage));
    }
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Content that fails to parse is reported as an I/O failure on that file.
fn bad_input(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::io(path, format!("malformed content: {e}"))
}

fn ensemble_err(e: EnsembleError) -> CliError {
    match e {
        EnsembleError::TooFewGroups { .. } | EnsembleError::InvalidFeatureSet { .. } | EnsembleError::InvalidConfig(_) => {
            CliError::config(e.to_string())
        }
        other => CliError::invariant(other),
    }
}

/// `eeg+nlp` -> `eeg_nlp`, for file names.
pub fn slug(cfg: &PipelineConfig) -> String {
    format!(
        "{}_{}_{}",
        cfg.task,
        cfg.feature_set.tag().to_ascii_lowercase().replace('+', "_"),
        cfg.method
    )
}

pub fn folds_path(cfg: &PipelineConfig) -> PathBuf {
    cfg.paths.out_dir.join(REPORTS_DIR).join(format!("{}_folds.csv", slug(cfg)))
}

pub fn summary_path(cfg: &PipelineConfig) -> PathBuf {
    cfg.paths.out_dir.join(REPORTS_DIR).join(format!("{}_summary.csv", slug(cfg)))
}

pub fn model_path(cfg: &PipelineConfig) -> PathBuf {
    cfg.paths.out_dir.join(MODELS_DIR).join(format!("{}.model", slug(cfg)))
}

pub fn synth(cfg: &PipelineConfig) -> Result<(), CliError> {
    let out = generate(&cfg.synth).map_err(|e| CliError::config(e.to_string()))?;
    write_tree(&out, &cfg.paths.out_dir).map_err(|e| CliError::IoFailure(e.to_string()))?;
    log::info!("synth: {} recordings, {} segments", out.recordings.len(), out.manifest.len());
    Ok(())
}

fn manifest(cfg: &PipelineConfig, stage: &str) -> Result<Vec<ManifestEntry>, CliError> {
    let p = &cfg.paths.manifest;
    parse_manifest(&read(p, stage)?).map_err(|e| bad_input(p, e))
}

fn participants(entries: &[ManifestEntry]) -> Vec<String> {
    entries.iter().map(|m| m.participant_id.clone()).collect::<BTreeSet<_>>().into_iter().collect()
}

pub fn preprocess_stage(cfg: &PipelineConfig) -> Result<(), CliError> {
    let entries = manifest(cfg, "preprocess")?;
    let mut eog = String::from("participant_id,suppressed_samples\n");
    for pid in participants(&entries) {
        let src = cfg.paths.raw_dir.join(format!("{pid}.csv"));
        let rec = parse_recording::<f64>(&read(&src, "preprocess")?, &pid, &MUSE_CHANNELS).map_err(|e| bad_input(&src, e))?;
        let (clean, flagged) = preprocess(&rec, &cfg.preprocess).map_err(CliError::invariant)?;
        eog.push_str(&format!("{pid},{flagged}\n"));
        write(&cfg.paths.out_dir.join(PROCESSED_DIR).join(format!("{pid}.csv")), &format_recording(&clean))?;
    }
    write(&cfg.paths.out_dir.join(EOG_REPORT), &eog)
}

pub fn features_stage(cfg: &PipelineConfig) -> Result<(), CliError> {
    let entries = manifest(cfg, "features")?;
    let mut names = None;
    let mut records = Vec::new();
    for pid in participants(&entries) {
        let src = cfg.paths.out_dir.join(PROCESSED_DIR).join(format!("{pid}.csv"));
        let rec = parse_recording::<f64>(&read(&src, "features")?, &pid, &MUSE_CHANNELS).map_err(|e| bad_input(&src, e))?;
        names.get_or_insert_with(|| cfg.features.names(&rec.channel_names));
        records.extend(segment_features(&rec, &entries, &cfg.features).map_err(CliError::invariant)?);
    }
    let names = names.unwrap_or_else(|| cfg.features.names(&[]));
    write(&cfg.paths.out_dir.join(EEG_FEATURES), &format_eeg_features(&names, &records))?;

    let trees = parse_tree_file(&read(&cfg.paths.trees, "features")?).map_err(|e| bad_input(&cfg.paths.trees, e))?;
    let deps = parse_conllu(&read(&cfg.paths.conllu, "features")?).map_err(|e| bad_input(&cfg.paths.conllu, e))?;
    let nlp = nlp_records(&trees, &deps, DepOptions { exclude_punct: cfg.exclude_punct });
    write(&cfg.paths.out_dir.join(NLP_FEATURES), &format_nlp_features(&nlp))
}

pub fn assemble_stage(cfg: &PipelineConfig) -> Result<(), CliError> {
    let out = &cfg.paths.out_dir;
    let eeg_p = out.join(EEG_FEATURES);
    let nlp_p = out.join(NLP_FEATURES);
    let (names, eeg) = parse_eeg_features(&read(&eeg_p, "assemble")?).map_err(|e| bad_input(&eeg_p, e))?;
    let nlp = parse_nlp_features(&read(&nlp_p, "assemble")?).map_err(|e| bad_input(&nlp_p, e))?;
    let resp_p = &cfg.paths.responses;
    let responses = parse_responses(&read(resp_p, "assemble")?).map_err(|e| bad_input(resp_p, e))?;
    let (mut ds, report) = assemble(&names, &eeg, &nlp, &responses).map_err(CliError::invariant)?;
    if ds.rows.iter().any(|r| r.confusion_rating.is_some()) {
        ds = derive_confusion_labels(&ds, cfg.per_participant_median).map_err(CliError::invariant)?;
    }
    log::info!(
        "assemble: {} rows, {} without NLP features, {} responses without EEG",
        report.rows,
        report.dropped_missing_nlp,
        report.responses_without_eeg
    );
    write(&out.join(DATASET), &format_dataset(&ds))
}

fn dataset(cfg: &PipelineConfig, stage: &str) -> Result<Dataset, CliError> {
    let p = cfg.paths.out_dir.join(DATASET);
    parse_dataset(&read(&p, stage)?).map_err(|e| bad_input(&p, e))
}

pub fn train_stage(cfg: &PipelineConfig) -> Result<(), CliError> {
    let ds = dataset(cfg, "train")?;
    let m = fit_final(&ds, cfg.task, cfg.feature_set, cfg.method, &cfg.eval).map_err(ensemble_err)?;
    write(&model_path(cfg), &m.to_string())
}

pub fn evaluate_stage(cfg: &PipelineConfig) -> Result<(), CliError> {
    let ds = dataset(cfg, "evaluate")?;
    let r = evaluate_task(&ds, cfg.task, cfg.feature_set, cfg.method, &cfg.eval).map_err(ensemble_err)?;
    log::info!("evaluate {}: F1 {:.3} +- {:.3}, ACC {:.3} +- {:.3}", slug(cfg), r.mean_f1, r.std_f1, r.mean_acc, r.std_acc);
    let reports = [r];
    write(&folds_path(cfg), &format_fold_csv(&reports))?;
    write(&summary_path(cfg), &format_summary_csv(&reports))
}

/// Collects every `*_folds.csv` under the reports directory into the table
/// and the combined summary, plus the known-unknown matrix when the dataset
/// carries both labels.
pub fn report_stage(cfg: &PipelineConfig) -> Result<(), CliError> {
    let dir = cfg.paths.out_dir.join(REPORTS_DIR);
    let mut files: Vec<PathBuf> = match fs::read_dir(&dir) {
        Ok(rd) => rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with("_folds.csv")))
            .collect(),
        Err(_) => Vec::new(),
    };
    if files.is_empty() {
        return Err(CliError::missing(&dir.join("*_folds.csv"), "report"));
    }
    files.sort();
    let mut reports = Vec::new();
    for f in &files {
        reports.extend(parse_fold_csv(&read(f, "report")?).map_err(|e| bad_input(f, e))?);
    }
    write(&cfg.paths.out_dir.join(TABLE), &format_table(&reports))?;
    write(&cfg.paths.out_dir.join(SUMMARY), &format_summary_csv(&reports))?;
    if let Ok(ds) = dataset(cfg, "report") {
        match known_unknown_matrix(&ds) {
            Ok(m) => write(&cfg.paths.out_dir.join(KNOWN_UNKNOWN), &m.to_csv())?,
            Err(e) => log::info!("known-unknown matrix skipped: {e}"),
        }
    }
    Ok(())
}

pub fn bench_stage(cfg: &PipelineConfig) -> Result<(), CliError> {
    let opts = BenchOptions { iterations: cfg.bench.iterations, parallel: cfg.bench.parallel };
    let path = cfg.paths.out_dir.join(BENCH_CSV);
    fs::create_dir_all(&cfg.paths.out_dir).map_err(|e| CliError::io(&cfg.paths.out_dir, e))?;
    for k in &cfg.bench.kernels {
        let results = bench(k, &cfg.bench.sizes, &opts).map_err(|e| match e {
            BenchError::UnknownKernel(_) | BenchError::TooFewIterations(_) => CliError::config(e.to_string()),
            other => CliError::invariant(other),
        })?;
        for r in &results {
            log::info!("bench {} n={} median {:?} over {}", r.kernel, r.size, r.median, r.iterations);
        }
        append_bench_csv(&path, &results).map_err(|e| CliError::io(&path, e))?;
    }
    Ok(())
}
