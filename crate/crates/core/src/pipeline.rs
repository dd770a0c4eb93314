//! Recording-to-dataset glue shared by the command line and the tests.

use std::collections::HashMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::{assemble, AssembleReport, Dataset, DatasetError, EegFeatureRecord, NlpRecord, Response, RowKey};
use crate::nlp::{sentence_features, DepOptions, DependencySentence, TreeRecord};
use crate::scalar::Real;
use crate::signal::{
    butterworth_bandpass, cut_segments, suppress_eog_per_channel, zscore_normalize_with_stats, EegRecording,
    FilterSpec, ManifestEntry, SegmentSpec, SignalError, FRONTAL_CHANNELS,
};
use crate::spectral::{default_bands, extract_features, feature_names, BandDef, SpectralError, WelchParams};
use crate::synth::SynthOutput;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("participant {0} has no recording")]
    MissingRecording(String),
    #[error("segment {key}: {source}")]
    Segment { key: RowKey, source: SpectralError },
}

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessConfig {
    pub normalize: bool,
    pub filter: FilterSpec,
    /// Blink threshold in microvolts of the raw recording.
    pub eog_threshold_uv: f64,
    pub eog_window_s: f64,
    pub eog: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { normalize: true, filter: FilterSpec::default(), eog_threshold_uv: 100.0, eog_window_s: 0.5, eog: true }
    }
}

/// Normalize, bandpass, then suppress blink windows on the frontal pair.
/// Returns the cleaned recording and the number of suppressed samples.
pub fn preprocess<T: Real>(rec: &EegRecording<T>, cfg: &PreprocessConfig) -> Result<(EegRecording<T>, usize)> {
    let (normed, scale) = if cfg.normalize {
        let (r, stats) = zscore_normalize_with_stats(rec)?;
        (r, Some(stats.std))
    } else {
        (rec.clone(), None)
    };
    let filtered = butterworth_bandpass(&normed, &cfg.filter)?;
    if !cfg.eog {
        return Ok((filtered, 0));
    }
    let thresholds: Vec<Option<T>> = filtered
        .channel_names
        .iter()
        .enumerate()
        .map(|(c, name)| {
            FRONTAL_CHANNELS.iter().any(|f| f.eq_ignore_ascii_case(name)).then(|| {
                let th = T::lit(cfg.eog_threshold_uv);
                match &scale {
                    Some(sd) => th / sd[c],
                    None => th,
                }
            })
        })
        .collect();
    let (clean, mask) = suppress_eog_per_channel(&filtered, &thresholds, cfg.eog_window_s);
    Ok((clean, mask.iter().filter(|&&m| m).count()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureConfig {
    pub bands: Vec<BandDef>,
    pub welch: WelchParams,
    pub log_power: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { bands: default_bands(), welch: WelchParams::default(), log_power: true }
    }
}

impl FeatureConfig {
    pub fn names(&self, channels: &[String]) -> Vec<String> {
        let bands: Vec<String> = self.bands.iter().map(|b| b.name.clone()).collect();
        feature_names(channels, &bands)
    }
}

/// Band-power features for every manifest entry of this recording's participant.
pub fn segment_features<T: Real>(
    rec: &EegRecording<T>,
    manifest: &[ManifestEntry],
    cfg: &FeatureConfig,
) -> Result<Vec<EegFeatureRecord>> {
    let specs: Vec<SegmentSpec> = manifest
        .iter()
        .filter(|m| m.participant_id == rec.participant_id)
        .map(|m| m.segment.clone())
        .collect();
    let segments = cut_segments(rec, &specs)?;
    segments
        .iter()
        .map(|seg| {
            let key = RowKey::new(rec.participant_id.clone(), seg.spec.passage_id.clone(), seg.spec.sentence_id);
            let f = extract_features(seg, &cfg.bands, &cfg.welch)
                .map_err(|source| PipelineError::Segment { key: key.clone(), source })?;
            let vals = if cfg.log_power { f.log10() } else { f.values };
            Ok(EegFeatureRecord { key, values: vals.into_iter().map(|v| v.as_f64()).collect() })
        })
        .collect()
}

/// Joins parse trees with dependency sentences on (passage, sentence).
/// Sentences missing either annotation are skipped.
pub fn nlp_records(trees: &[TreeRecord], deps: &[DependencySentence], opts: DepOptions) -> Vec<NlpRecord> {
    let by_key: HashMap<(&str, u32), &DependencySentence> = deps
        .iter()
        .filter_map(|d| Some(((d.passage_id.as_deref()?, d.sentence_id?), d)))
        .collect();
    let mut out = Vec::with_capacity(trees.len());
    for t in trees {
        let Some(d) = by_key.get(&(t.passage_id.as_str(), t.sentence_id)) else {
            log::warn!("no dependency parse for {}/{}", t.passage_id, t.sentence_id);
            continue;
        };
        let sf = sentence_features(&t.tree, d, opts);
        if let Some(w) = sf.warning {
            log::warn!(
                "{}/{}: {} tree leaves vs {} dependency tokens",
                t.passage_id,
                t.sentence_id,
                w.tree_leaves,
                w.dep_tokens
            );
        }
        out.push(NlpRecord { passage_id: t.passage_id.clone(), sentence_id: t.sentence_id, features: sf.features.to_array() });
    }
    out
}

/// Preprocesses every recording and extracts its segment features, in
/// recording order.
pub fn eeg_records<T: Real>(
    recordings: &[EegRecording<T>],
    manifest: &[ManifestEntry],
    pre: &PreprocessConfig,
    feat: &FeatureConfig,
) -> Result<Vec<EegFeatureRecord>> {
    for m in manifest {
        if !recordings.iter().any(|r| r.participant_id == m.participant_id) {
            return Err(PipelineError::MissingRecording(m.participant_id.clone()));
        }
    }
    let per: Vec<Vec<EegFeatureRecord>> = recordings
        .par_iter()
        .map(|rec| {
            let (clean, flagged) = preprocess(rec, pre)?;
            if flagged > 0 {
                log::debug!("{}: {flagged} samples suppressed as EOG", rec.participant_id);
            }
            segment_features(&clean, manifest, feat)
        })
        .collect::<Result<_>>()?;
    Ok(per.into_iter().flatten().collect())
}

/// The whole ingest chain applied to generated data held in memory.
pub fn dataset_from_synth(
    out: &SynthOutput,
    pre: &PreprocessConfig,
    feat: &FeatureConfig,
) -> Result<(Dataset, AssembleReport)> {
    let eeg = eeg_records(&out.recordings, &out.manifest, pre, feat)?;
    let channels = &out.recordings[0].channel_names;
    let nlp = nlp_records(&out.trees, &out.dependencies, DepOptions::default());
    let responses: &[Response] = &out.responses;
    Ok(assemble(&feat.names(channels), &eeg, &nlp, responses)?)
}
