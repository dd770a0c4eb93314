//! Raw EEG recordings: loading, normalization, bandpass filtering, ocular
//! artifact suppression and sentence-aligned segmentation.
//!
//! Filters are designed in `f64` (analog Butterworth prototype, bandpass
//! transform, bilinear map) and stored as second-order sections; the sample
//! path runs in the recording's scalar type.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use thiserror::Error;

use crate::matrix::Matrix;
use crate::scalar::{mean, population_variance, Real};

/// Frontal electrodes checked for ocular artifacts.
pub const FRONTAL_CHANNELS: [&str; 2] = ["AF7", "AF8"];

/// Channel order used by the raw recording file header.
pub const MUSE_CHANNELS: [&str; 4] = ["TP9", "AF7", "AF8", "TP10"];

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("missing channel `{0}`")]
    MissingChannel(String),
    #[error("timestamps not strictly increasing at data row {row}")]
    NonMonotonicTime { row: usize },
    #[error("recording has no usable samples")]
    EmptyRecording,
    #[error("channel `{0}` has zero variance")]
    ZeroVarianceChannel(String),
    #[error("invalid band [{lo_hz}, {hi_hz}] Hz for Nyquist {nyquist_hz} Hz")]
    InvalidBand { lo_hz: f64, hi_hz: f64, nyquist_hz: f64 },
    #[error("segment {passage_id}/{sentence_id} [{start}, {end}) outside recording of {n_samples} samples")]
    SegmentOutOfRange { passage_id: String, sentence_id: u32, start: usize, end: usize, n_samples: usize },
    #[error("invalid recording: {0}")]
    InvalidRecording(String),
    #[error("invalid segment: {0}")]
    InvalidSegment(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = SignalError> = std::result::Result<T, E>;

/// Multichannel recording, `n_samples x n_channels`, microvolts.
#[derive(Clone, Debug, PartialEq)]
pub struct EegRecording<T> {
    pub participant_id: String,
    pub sample_rate_hz: T,
    pub channel_names: Vec<String>,
    pub samples: Matrix<T>,
}

impl<T: Real> EegRecording<T> {
    pub fn new(
        participant_id: impl Into<String>,
        sample_rate_hz: T,
        channel_names: Vec<String>,
        samples: Matrix<T>,
    ) -> Result<Self> {
        if !(sample_rate_hz > T::zero()) || !sample_rate_hz.is_finite() {
            return Err(SignalError::InvalidRecording(format!("sample rate {sample_rate_hz} must be positive")));
        }
        if samples.ncols() != channel_names.len() {
            return Err(SignalError::InvalidRecording(format!(
                "{} channel names for {} columns",
                channel_names.len(),
                samples.ncols()
            )));
        }
        let mut seen = HashSet::new();
        for name in &channel_names {
            if !seen.insert(name.as_str()) {
                return Err(SignalError::InvalidRecording(format!("duplicate channel `{name}`")));
            }
        }
        if !samples.is_finite() {
            return Err(SignalError::InvalidRecording("non-finite sample".into()));
        }
        Ok(Self { participant_id: participant_id.into(), sample_rate_hz, channel_names, samples })
    }

    pub fn n_samples(&self) -> usize {
        self.samples.nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.samples.ncols()
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channel_names.iter().position(|c| c == name)
    }

    pub fn channel(&self, c: usize) -> Vec<T> {
        self.samples.column(c)
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples() as f64 / self.sample_rate_hz.as_f64()
    }

    fn with_samples(&self, samples: Matrix<T>) -> Self {
        Self {
            participant_id: self.participant_id.clone(),
            sample_rate_hz: self.sample_rate_hz,
            channel_names: self.channel_names.clone(),
            samples,
        }
    }

    fn map_channels(&self, mut f: impl FnMut(usize, &[T]) -> Vec<T>) -> Self {
        let mut out = Matrix::zeros(self.n_samples(), self.n_channels());
        for c in 0..self.n_channels() {
            let y = f(c, &self.channel(c));
            out.set_column(c, &y);
        }
        self.with_samples(out)
    }
}

/// Parses the raw recording format: header `timestamp_s,<channels...>`.
///
/// Rows with a non-numeric field are skipped. The sample rate is the
/// reciprocal of the median inter-sample interval, rounded to whole Hz.
pub fn parse_recording<T: Real>(
    text: &str,
    participant_id: &str,
    expected_channels: &[&str],
) -> Result<EegRecording<T>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(SignalError::EmptyRecording)?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    let time_col = columns
        .iter()
        .position(|c| c.eq_ignore_ascii_case("timestamp_s"))
        .ok_or_else(|| SignalError::MissingChannel("timestamp_s".into()))?;
    let mut channel_cols = Vec::with_capacity(expected_channels.len());
    for ch in expected_channels {
        let pos = columns.iter().position(|c| c == ch).ok_or_else(|| SignalError::MissingChannel(ch.to_string()))?;
        channel_cols.push(pos);
    }

    let mut times = Vec::new();
    let mut data = Vec::new();
    let mut rejected = 0usize;
    let mut row_buf = Vec::with_capacity(channel_cols.len());
    for (_, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let t = fields.get(time_col).and_then(|f| f.parse::<f64>().ok()).filter(|t| t.is_finite());
        row_buf.clear();
        let mut ok = t.is_some();
        for &c in &channel_cols {
            match fields.get(c).and_then(|f| f.parse::<f64>().ok()).filter(|v| v.is_finite()) {
                Some(v) => row_buf.push(T::lit(v)),
                None => ok = false,
            }
        }
        if !ok {
            rejected += 1;
            continue;
        }
        let t = t.unwrap();
        if let Some(&prev) = times.last() {
            if t <= prev {
                return Err(SignalError::NonMonotonicTime { row: times.len() + rejected + 1 });
            }
        }
        times.push(t);
        data.extend_from_slice(&row_buf);
    }
    if rejected > 0 {
        log::warn!("{participant_id}: rejected {rejected} rows with non-numeric values");
    }
    if times.len() < 2 {
        return Err(SignalError::EmptyRecording);
    }
    let rate = infer_sample_rate(&times);
    if rate <= 0.0 {
        return Err(SignalError::InvalidRecording("sample rate rounds to 0 Hz".into()));
    }
    let names = expected_channels.iter().map(|s| s.to_string()).collect();
    EegRecording::new(participant_id, T::lit(rate), names, Matrix::from_vec(times.len(), channel_cols.len(), data))
}

/// `round(1 / median(diff(t)))`.
pub fn infer_sample_rate(times: &[f64]) -> f64 {
    let mut dt: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    dt.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = dt.len();
    let median = if m % 2 == 1 { dt[m / 2] } else { 0.5 * (dt[m / 2 - 1] + dt[m / 2]) };
    (1.0 / median).round()
}

/// Loads a recording; the participant id is the file stem.
pub fn load_recording<T: Real>(path: &Path, expected_channels: &[&str]) -> Result<EegRecording<T>> {
    let text = fs::read_to_string(path)?;
    let pid = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    parse_recording(&text, pid, expected_channels)
}

/// Serializes in the raw recording format with uniform timestamps `i / fs`.
pub fn format_recording<T: Real>(rec: &EegRecording<T>) -> String {
    let mut out = String::with_capacity(rec.n_samples() * 16 * (rec.n_channels() + 1));
    out.push_str("timestamp_s");
    for name in &rec.channel_names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    let fs = rec.sample_rate_hz.as_f64();
    for (i, row) in rec.samples.rows().enumerate() {
        let _ = write!(out, "{}", i as f64 / fs);
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Per-channel mean and population standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

/// Per-channel z-score over the whole recording.
pub fn zscore_normalize<T: Real>(rec: &EegRecording<T>) -> Result<EegRecording<T>> {
    zscore_normalize_with_stats(rec).map(|(r, _)| r)
}

/// As [`zscore_normalize`], also returning the moments that were removed.
pub fn zscore_normalize_with_stats<T: Real>(rec: &EegRecording<T>) -> Result<(EegRecording<T>, ChannelStats<T>)> {
    if rec.n_samples() < 2 {
        return Err(SignalError::EmptyRecording);
    }
    let mut stats = ChannelStats { mean: Vec::new(), std: Vec::new() };
    for c in 0..rec.n_channels() {
        let x = rec.channel(c);
        let m = mean(&x);
        let sd = population_variance(&x).sqrt();
        if !(sd > T::zero()) {
            return Err(SignalError::ZeroVarianceChannel(rec.channel_names[c].clone()));
        }
        stats.mean.push(m);
        stats.std.push(sd);
    }
    let out = rec.map_channels(|c, x| x.iter().map(|&v| (v - stats.mean[c]) / stats.std[c]).collect());
    Ok((out, stats))
}

/// Only bandpass designs are supported.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FilterKind {
    Bandpass,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub lo_hz: f64,
    pub hi_hz: f64,
    pub order: usize,
    pub zero_phase: bool,
}

impl Default for FilterSpec {
    /// 4-80 Hz, order 4, forward-backward.
    fn default() -> Self {
        Self { kind: FilterKind::Bandpass, lo_hz: 4.0, hi_hz: 80.0, order: 4, zero_phase: true }
    }
}

impl FilterSpec {
    pub fn validate(&self, sample_rate_hz: f64) -> Result<()> {
        let nyquist = sample_rate_hz / 2.0;
        if self.order == 0 || !(self.lo_hz > 0.0 && self.lo_hz < self.hi_hz && self.hi_hz < nyquist) {
            return Err(SignalError::InvalidBand { lo_hz: self.lo_hz, hi_hz: self.hi_hz, nyquist_hz: nyquist });
        }
        Ok(())
    }
}

/// Second-order section, `a0 == 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let num = self.b[0] + self.b[1] * z_inv + self.b[2] * z_inv * z_inv;
        let den = self.a[0] + self.a[1] * z_inv + self.a[2] * z_inv * z_inv;
        num / den
    }
}

/// Cascade of second-order sections.
#[derive(Clone, Debug, PartialEq)]
pub struct SosFilter {
    pub sections: Vec<Biquad>,
    /// Number of prototype poles; sets the edge padding length.
    pub order: usize,
}

impl SosFilter {
    /// Digital Butterworth bandpass with `2 * order` poles.
    pub fn butterworth_bandpass(lo_hz: f64, hi_hz: f64, order: usize, fs: f64) -> Result<Self> {
        FilterSpec { kind: FilterKind::Bandpass, lo_hz, hi_hz, order, zero_phase: false }.validate(fs)?;
        let fs2 = 2.0 * fs;
        let wl = fs2 * (PI * lo_hz / fs).tan();
        let wh = fs2 * (PI * hi_hz / fs).tan();
        let bw = wh - wl;
        let w0_sq = wl * wh;

        let mut poles = Vec::with_capacity(2 * order);
        for k in 0..order {
            let theta = PI * (2 * k + 1 + order) as f64 / (2 * order) as f64;
            let p = Complex64::from_polar(1.0, theta);
            let half = p * (bw / 2.0);
            let disc = (half * half - w0_sq).sqrt();
            for s in [half + disc, half - disc] {
                poles.push((fs2 + s) / (fs2 - s));
            }
        }

        let mut sections = Vec::with_capacity(order);
        let mut reals = Vec::new();
        for p in &poles {
            if p.im > 1e-12 {
                sections.push(Biquad { b: [1.0, 0.0, -1.0], a: [1.0, -2.0 * p.re, p.norm_sqr()] });
            } else if p.im.abs() <= 1e-12 {
                reals.push(p.re);
            }
        }
        for pair in reals.chunks(2) {
            let (p1, p2) = (pair[0], *pair.get(1).unwrap_or(&0.0));
            sections.push(Biquad { b: [1.0, 0.0, -1.0], a: [1.0, -(p1 + p2), p1 * p2] });
        }
        debug_assert_eq!(sections.len(), order);

        // Unit gain at the digital image of the analog centre frequency.
        let center = 2.0 * (w0_sq.sqrt() / fs2).atan();
        let z_inv = Complex64::from_polar(1.0, -center);
        let g: f64 = sections.iter().map(|s| s.response(z_inv)).product::<Complex64>().norm();
        let per_section = (1.0 / g).powf(1.0 / sections.len() as f64);
        for s in &mut sections {
            for b in &mut s.b {
                *b *= per_section;
            }
        }
        Ok(Self { sections, order })
    }

    /// Second-order notch (RBJ design) at `f0_hz` with quality factor `q`.
    pub fn notch(f0_hz: f64, q: f64, fs: f64) -> Result<Self> {
        if !(f0_hz > 0.0 && f0_hz < fs / 2.0 && q > 0.0) {
            return Err(SignalError::InvalidBand { lo_hz: f0_hz, hi_hz: f0_hz, nyquist_hz: fs / 2.0 });
        }
        let w0 = 2.0 * PI * f0_hz / fs;
        let alpha = w0.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        let c = -2.0 * w0.cos();
        let section = Biquad { b: [1.0 / a0, c / a0, 1.0 / a0], a: [1.0, c / a0, (1.0 - alpha) / a0] };
        Ok(Self { sections: vec![section], order: 1 })
    }

    /// `|H(e^{j 2 pi f / fs})|` for a single pass.
    pub fn magnitude(&self, freq_hz: f64, fs: f64) -> f64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * freq_hz / fs);
        self.sections.iter().map(|s| s.response(z_inv)).product::<Complex64>().norm()
    }

    /// Section states reproducing the steady-state response to a unit step.
    fn step_initial_state(&self) -> Vec<[f64; 2]> {
        let mut u = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let g = s.b.iter().sum::<f64>() / s.a.iter().sum::<f64>();
                let z1 = (g - s.b[0]) * u;
                let z2 = (s.b[2] - s.a[2] * g) * u;
                u *= g;
                [z1, z2]
            })
            .collect()
    }

    /// Causal pass (transposed direct form II) with initial state `zi * x[0]`.
    fn run<T: Real>(&self, x: &mut [T], zi: &[[f64; 2]]) {
        let x0 = x.first().copied().unwrap_or_else(T::zero);
        for (s, z) in self.sections.iter().zip(zi) {
            let [b0, b1, b2] = s.b.map(T::lit);
            let (a1, a2) = (T::lit(s.a[1]), T::lit(s.a[2]));
            let mut z1 = T::lit(z[0]) * x0;
            let mut z2 = T::lit(z[1]) * x0;
            for v in x.iter_mut() {
                let input = *v;
                let y = b0 * input + z1;
                z1 = b1 * input - a1 * y + z2;
                z2 = b2 * input - a2 * y;
                *v = y;
            }
        }
    }

    fn pad_len(&self, n: usize) -> usize {
        (3 * self.order).min(n.saturating_sub(1))
    }

    /// Single causal pass over an odd-reflected extension, trimmed to `x.len()`.
    pub fn filter<T: Real>(&self, x: &[T]) -> Vec<T> {
        let pad = self.pad_len(x.len());
        let mut ext = odd_extend(x, pad);
        self.run(&mut ext, &self.step_initial_state());
        ext[pad..pad + x.len()].to_vec()
    }

    /// Forward-backward filtering: zero phase, squared magnitude.
    ///
    /// The result is the mean of the forward-then-backward and the
    /// backward-then-forward passes, which makes it commute exactly with
    /// time reversal; on a long signal the two passes differ only in the
    /// edge transients.
    pub fn filtfilt<T: Real>(&self, x: &[T]) -> Vec<T> {
        if x.is_empty() {
            return Vec::new();
        }
        let fwd = self.forward_backward(x);
        let mut rev: Vec<T> = x.iter().rev().copied().collect();
        rev = self.forward_backward(&rev);
        rev.reverse();
        let half = T::lit(0.5);
        fwd.iter().zip(&rev).map(|(&a, &b)| half * (a + b)).collect()
    }

    fn forward_backward<T: Real>(&self, x: &[T]) -> Vec<T> {
        let pad = self.pad_len(x.len());
        let zi = self.step_initial_state();
        let mut ext = odd_extend(x, pad);
        self.run(&mut ext, &zi);
        ext.reverse();
        self.run(&mut ext, &zi);
        ext.reverse();
        ext[pad..pad + x.len()].to_vec()
    }
}

/// `2 x[0] - x[pad..1]` on the left and the mirror image on the right.
fn odd_extend<T: Real>(x: &[T], pad: usize) -> Vec<T> {
    let n = x.len();
    let two = T::lit(2.0);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| two * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| two * x[n - 1] - x[n - 1 - i]));
    ext
}

/// Filters every channel independently.
pub fn butterworth_bandpass<T: Real>(rec: &EegRecording<T>, spec: &FilterSpec) -> Result<EegRecording<T>> {
    let fs = rec.sample_rate_hz.as_f64();
    spec.validate(fs)?;
    let filter = SosFilter::butterworth_bandpass(spec.lo_hz, spec.hi_hz, spec.order, fs)?;
    Ok(apply_filter(rec, &filter, spec.zero_phase))
}

pub fn apply_filter<T: Real>(rec: &EegRecording<T>, filter: &SosFilter, zero_phase: bool) -> EegRecording<T> {
    rec.map_channels(|_, x| if zero_phase { filter.filtfilt(x) } else { filter.filter(x) })
}

/// Optional powerline notch, zero phase.
pub fn notch_filter<T: Real>(rec: &EegRecording<T>, f0_hz: f64, q: f64) -> Result<EegRecording<T>> {
    let filter = SosFilter::notch(f0_hz, q, rec.sample_rate_hz.as_f64())?;
    Ok(apply_filter(rec, &filter, true))
}

/// Amplitude-threshold ocular artifact suppression on the frontal channels.
///
/// The recording is split into consecutive windows of `window_s`; a window
/// is flagged when any frontal sample exceeds `threshold_uv` in absolute
/// value. Flagged runs are replaced, on every channel, by the straight line
/// joining the samples just outside the run.
pub fn suppress_eog<T: Real>(rec: &EegRecording<T>, threshold_uv: T, window_s: f64) -> (EegRecording<T>, Vec<bool>) {
    let thresholds: Vec<Option<T>> = rec
        .channel_names
        .iter()
        .map(|name| FRONTAL_CHANNELS.iter().any(|f| f.eq_ignore_ascii_case(name)).then_some(threshold_uv))
        .collect();
    suppress_eog_per_channel(rec, &thresholds, window_s)
}

/// As [`suppress_eog`] with an optional detection threshold per channel
/// (`None` disables detection on that channel).
pub fn suppress_eog_per_channel<T: Real>(
    rec: &EegRecording<T>,
    thresholds: &[Option<T>],
    window_s: f64,
) -> (EegRecording<T>, Vec<bool>) {
    let n = rec.n_samples();
    let win = ((window_s * rec.sample_rate_hz.as_f64()).round() as usize).max(1);
    let mut mask = vec![false; n];
    for start in (0..n).step_by(win) {
        let end = (start + win).min(n);
        let hit = (start..end).any(|i| {
            thresholds
                .iter()
                .enumerate()
                .any(|(c, th)| th.is_some_and(|th| rec.samples.get(i, c).abs() > th))
        });
        if hit {
            mask[start..end].iter_mut().for_each(|m| *m = true);
        }
    }
    if !mask.iter().any(|&m| m) {
        return (rec.clone(), mask);
    }

    let mut samples = rec.samples.clone();
    let mut i = 0;
    while i < n {
        if !mask[i] {
            i += 1;
            continue;
        }
        let s = i;
        while i < n && mask[i] {
            i += 1;
        }
        let e = i;
        for c in 0..rec.n_channels() {
            let left = (s > 0).then(|| rec.samples.get(s - 1, c));
            let right = (e < n).then(|| rec.samples.get(e, c));
            for j in s..e {
                let v = match (left, right) {
                    (Some(l), Some(r)) => {
                        let frac = T::from_usize_lossy(j + 1 - s) / T::from_usize_lossy(e + 1 - s);
                        l + (r - l) * frac
                    }
                    (Some(l), None) => l,
                    (None, Some(r)) => r,
                    (None, None) => T::zero(),
                };
                samples.set(j, c, v);
            }
        }
    }
    (rec.with_samples(samples), mask)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentSpec {
    pub passage_id: String,
    pub sentence_id: u32,
    pub t_start_s: f64,
    pub t_end_s: f64,
}

impl SegmentSpec {
    pub fn new(passage_id: impl Into<String>, sentence_id: u32, t_start_s: f64, t_end_s: f64) -> Result<Self> {
        if !(t_start_s >= 0.0 && t_start_s < t_end_s && t_end_s.is_finite()) {
            return Err(SignalError::InvalidSegment(format!("[{t_start_s}, {t_end_s}) is not a valid interval")));
        }
        Ok(Self { passage_id: passage_id.into(), sentence_id, t_start_s, t_end_s })
    }

    /// `[round(t_start * fs), round(t_end * fs))`.
    pub fn sample_range(&self, fs: f64) -> (usize, usize) {
        ((self.t_start_s * fs).round() as usize, (self.t_end_s * fs).round() as usize)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EegSegment<T> {
    pub spec: SegmentSpec,
    pub channel_names: Vec<String>,
    pub samples: Matrix<T>,
    pub sample_rate_hz: T,
}

impl<T: Real> EegSegment<T> {
    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.nrows() == 0
    }
}

pub fn cut_segments<T: Real>(rec: &EegRecording<T>, manifest: &[SegmentSpec]) -> Result<Vec<EegSegment<T>>> {
    let fs = rec.sample_rate_hz.as_f64();
    let n = rec.n_samples();
    manifest
        .iter()
        .map(|spec| {
            let (start, end) = spec.sample_range(fs);
            if end > n || start >= end {
                return Err(SignalError::SegmentOutOfRange {
                    passage_id: spec.passage_id.clone(),
                    sentence_id: spec.sentence_id,
                    start,
                    end,
                    n_samples: n,
                });
            }
            let idx: Vec<usize> = (start..end).collect();
            Ok(EegSegment {
                spec: spec.clone(),
                channel_names: rec.channel_names.clone(),
                samples: rec.samples.select_rows(&idx),
                sample_rate_hz: rec.sample_rate_hz,
            })
        })
        .collect()
}

/// One manifest line binding a participant's sentence to a time interval.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub participant_id: String,
    pub segment: SegmentSpec,
}

pub const MANIFEST_HEADER: &str = "participant_id,passage_id,sentence_id,t_start_s,t_end_s";

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == MANIFEST_HEADER => {}
        Some((i, _)) => return Err(SignalError::Parse { line: i + 1, msg: format!("expected header `{MANIFEST_HEADER}`") }),
        None => return Ok(Vec::new()),
    }
    lines
        .map(|(i, line)| {
            let err = |msg: &str| SignalError::Parse { line: i + 1, msg: msg.to_string() };
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 5 {
                return Err(err("expected 5 fields"));
            }
            let sentence_id = f[2].parse().map_err(|_| err("bad sentence_id"))?;
            let t0 = f[3].parse().map_err(|_| err("bad t_start_s"))?;
            let t1 = f[4].parse().map_err(|_| err("bad t_end_s"))?;
            let segment = SegmentSpec::new(f[1], sentence_id, t0, t1).map_err(|e| err(&e.to_string()))?;
            Ok(ManifestEntry { participant_id: f[0].to_string(), segment })
        })
        .collect()
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    parse_manifest(&fs::read_to_string(path)?)
}

pub fn format_manifest(entries: &[ManifestEntry]) -> String {
    let mut out = String::from(MANIFEST_HEADER);
    out.push('\n');
    for e in entries {
        let s = &e.segment;
        let _ = writeln!(out, "{},{},{},{},{}", e.participant_id, s.passage_id, s.sentence_id, s.t_start_s, s.t_end_s);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    fn single_channel(x: Vec<f64>, fs: f64, name: &str) -> EegRecording<f64> {
        let n = x.len();
        EegRecording::new("p", fs, names(&[name]), Matrix::from_vec(n, 1, x)).unwrap()
    }

    fn csv_fixture(rows: usize, fs: f64, drop: Option<&str>) -> String {
        let chans: Vec<&str> = MUSE_CHANNELS.iter().copied().filter(|c| Some(*c) != drop).collect();
        let mut s = format!("timestamp_s,{}\n", chans.join(","));
        for i in 0..rows {
            let vals: Vec<String> = (0..chans.len()).map(|c| format!("{}", (i * (c + 1)) as f64 * 0.1)).collect();
            s.push_str(&format!("{},{}\n", i as f64 / fs, vals.join(",")));
        }
        s
    }

    #[test]
    fn loads_four_channel_file() {
        let rec: EegRecording<f64> = parse_recording(&csv_fixture(2560, 256.0, None), "p01", &MUSE_CHANNELS).unwrap();
        assert_eq!(rec.n_samples(), 2560);
        assert_eq!(rec.n_channels(), 4);
        assert_eq!(rec.sample_rate_hz, 256.0);
        assert_eq!(rec.samples.get(10, 1), 2.0);
    }

    #[test]
    fn missing_channel_is_reported() {
        let err = parse_recording::<f64>(&csv_fixture(10, 256.0, Some("TP9")), "p", &MUSE_CHANNELS).unwrap_err();
        assert!(matches!(err, SignalError::MissingChannel(c) if c == "TP9"));
    }

    #[test]
    fn channels_are_reordered_to_request() {
        let rec: EegRecording<f64> = parse_recording(&csv_fixture(4, 256.0, None), "p", &["AF8", "TP9"]).unwrap();
        assert_eq!(rec.channel_names, names(&["AF8", "TP9"]));
        assert_eq!(rec.samples.row(2), &[0.6000000000000001, 0.2]);
    }

    #[test]
    fn jittered_timestamps_use_median_interval() {
        // Deterministic jitter of up to +-20% of the nominal interval.
        let mut s = String::from("timestamp_s,TP9,AF7,AF8,TP10\n");
        let mut t = 0.0;
        let mut times = Vec::new();
        for i in 0..1000u64 {
            times.push(t);
            s.push_str(&format!("{t},1,2,3,{}\n", i % 7));
            let jitter = ((i * 7919) % 41) as f64 / 100.0 - 0.2;
            t += (1.0 + jitter) / 256.0;
        }
        // Oracle: median of sorted intervals, computed independently.
        let mut dts: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
        dts.sort_by(f64::total_cmp);
        let median = (dts[498] + dts[499]) / 2.0;
        let rec: EegRecording<f64> = parse_recording(&s, "p", &MUSE_CHANNELS).unwrap();
        assert_eq!(rec.sample_rate_hz, (1.0 / median).round());
        assert_eq!(rec.sample_rate_hz, 256.0);
    }

    #[test]
    fn rejects_non_numeric_rows_and_bad_time() {
        let text = "timestamp_s,TP9\n0,1\n0.5,abc\n1,2\n";
        let rec: EegRecording<f64> = parse_recording(text, "p", &["TP9"]).unwrap();
        assert_eq!(rec.n_samples(), 2);
        let err = parse_recording::<f64>("timestamp_s,TP9\n0,1\n1,2\n0.5,3\n", "p", &["TP9"]).unwrap_err();
        assert!(matches!(err, SignalError::NonMonotonicTime { .. }));
        let err = parse_recording::<f64>("timestamp_s,TP9\n", "p", &["TP9"]).unwrap_err();
        assert!(matches!(err, SignalError::EmptyRecording));
    }

    #[test]
    fn zscore_two_points_and_constant() {
        let rec = single_channel(vec![1.0, 3.0], 256.0, "TP9");
        assert_eq!(zscore_normalize(&rec).unwrap().channel(0), vec![-1.0, 1.0]);
        let flat = single_channel(vec![2.0; 8], 256.0, "TP9");
        assert!(matches!(zscore_normalize(&flat), Err(SignalError::ZeroVarianceChannel(_))));
    }

    #[test]
    fn zscore_random_moments_and_idempotence() {
        let x: Vec<f64> = (0..500).map(|i| ((i * 37 % 101) as f64).sin() * 12.0 + 3.0).collect();
        let z = zscore_normalize(&single_channel(x, 256.0, "AF7")).unwrap();
        let c = z.channel(0);
        let m = c.iter().sum::<f64>() / c.len() as f64;
        let v = c.iter().map(|x| (x - m).powi(2)).sum::<f64>() / c.len() as f64;
        assert!(m.abs() < 1e-9 && (v - 1.0).abs() < 1e-9);
        let zz = zscore_normalize(&z).unwrap();
        for (a, b) in zz.channel(0).iter().zip(&c) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn invalid_band_is_rejected() {
        let rec = single_channel(vec![0.0, 1.0, 0.0], 256.0, "TP9");
        let spec = FilterSpec { hi_hz: 130.0, ..FilterSpec::default() };
        assert!(matches!(butterworth_bandpass(&rec, &spec), Err(SignalError::InvalidBand { .. })));
        let spec = FilterSpec { lo_hz: 0.0, ..FilterSpec::default() };
        assert!(matches!(butterworth_bandpass(&rec, &spec), Err(SignalError::InvalidBand { .. })));
    }

    #[test]
    fn design_matches_analog_prototype() {
        // Oracle: prewarped analog Butterworth bandpass magnitude.
        let fs = 256.0;
        let f = SosFilter::butterworth_bandpass(4.0, 80.0, 4, fs).unwrap();
        let warp = |hz: f64| (PI * hz / fs).tan();
        let (wl, wh) = (warp(4.0), warp(80.0));
        for hz in [1.0, 4.0, 10.0, 20.0, 50.0, 80.0, 100.0, 120.0] {
            let w = warp(hz);
            let r = (w * w - wl * wh) / (w * (wh - wl));
            let analytic = 1.0 / (1.0 + r.powi(8)).sqrt();
            assert!((f.magnitude(hz, fs) - analytic).abs() < 1e-9, "{hz} Hz");
        }
    }

    #[test]
    fn zero_signal_and_length_preserved() {
        let rec = single_channel(vec![0.0; 300], 256.0, "TP9");
        let out = butterworth_bandpass(&rec, &FilterSpec::default()).unwrap();
        assert_eq!(out.n_samples(), 300);
        assert!(out.channel(0).iter().all(|&v| v == 0.0));
        let causal = butterworth_bandpass(&rec, &FilterSpec { zero_phase: false, ..FilterSpec::default() }).unwrap();
        assert_eq!(causal.n_samples(), 300);
    }

    #[test]
    fn filtfilt_commutes_with_reversal() {
        let x: Vec<f64> = (0..700).map(|i| ((i * i * 31 % 97) as f64 - 48.0) / 10.0).collect();
        let f = SosFilter::butterworth_bandpass(4.0, 80.0, 4, 256.0).unwrap();
        let y = f.filtfilt(&x);
        let xr: Vec<f64> = x.iter().rev().copied().collect();
        let mut yr = f.filtfilt(&xr);
        yr.reverse();
        for (a, b) in y.iter().zip(&yr) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn notch_removes_powerline() {
        let fs = 256.0;
        let f = SosFilter::notch(50.0, 30.0, fs).unwrap();
        assert!(f.magnitude(50.0, fs) < 1e-9);
        assert!((f.magnitude(20.0, fs) - 1.0).abs() < 0.01);
    }

    fn four_channel(n: usize) -> EegRecording<f64> {
        let data: Vec<f64> = (0..n * 4).map(|i| ((i as f64) * 0.37).sin() * 5.0).collect();
        EegRecording::new("p", 256.0, names(&MUSE_CHANNELS), Matrix::from_vec(n, 4, data)).unwrap()
    }

    #[test]
    fn clean_signal_is_untouched_by_eog() {
        let rec = four_channel(512);
        let (out, mask) = suppress_eog(&rec, 100.0, 0.5);
        assert_eq!(out, rec);
        assert_eq!(mask.len(), 512);
        assert!(mask.iter().all(|&m| !m));
    }

    #[test]
    fn frontal_pulse_is_interpolated() {
        let mut rec = four_channel(512);
        let af7 = rec.channel_index("AF7").unwrap();
        for i in 140..150 {
            rec.samples.set(i, af7, 400.0);
        }
        let (out, mask) = suppress_eog(&rec, 100.0, 0.5);
        // 0.5 s at 256 Hz -> windows of 128; the pulse lies in window [128, 256).
        for (i, &m) in mask.iter().enumerate() {
            assert_eq!(m, (128..256).contains(&i), "sample {i}");
        }
        for c in 0..4 {
            let l = rec.samples.get(127, c);
            let r = rec.samples.get(256, c);
            for j in 128..256 {
                let expect = l + (r - l) * (j - 127) as f64 / 129.0;
                assert!((out.samples.get(j, c) - expect).abs() < 1e-12);
            }
            assert_eq!(out.samples.get(127, c), l);
            assert_eq!(out.samples.get(256, c), r);
        }
    }

    #[test]
    fn temporal_pulse_is_ignored() {
        let mut rec = four_channel(512);
        let tp9 = rec.channel_index("TP9").unwrap();
        rec.samples.set(200, tp9, 400.0);
        let (out, mask) = suppress_eog(&rec, 100.0, 0.5);
        assert_eq!(out, rec);
        assert!(mask.iter().all(|&m| !m));
    }

    #[test]
    fn segments_cover_expected_samples() {
        let rec = four_channel(1024);
        let specs = vec![SegmentSpec::new("a", 0, 0.0, 1.0).unwrap(), SegmentSpec::new("a", 1, 1.0, 2.0).unwrap()];
        let segs = cut_segments(&rec, &specs).unwrap();
        assert_eq!(segs[0].len(), 256);
        assert_eq!(segs[1].len(), 256);
        // Index-set oracle: the two ranges are disjoint and cover 0..512.
        let mut covered = vec![0u8; 512];
        for s in &specs {
            let (a, b) = s.sample_range(256.0);
            covered[a..b].iter_mut().for_each(|c| *c += 1);
        }
        assert!(covered.iter().all(|&c| c == 1));
        let mut joined = segs[0].samples.clone();
        for r in segs[1].samples.rows() {
            joined.push_row(r);
        }
        assert_eq!(joined, rec.samples.select_rows(&(0..512).collect::<Vec<_>>()));
        let beyond = [SegmentSpec::new("a", 2, 3.5, 4.5).unwrap()];
        assert!(matches!(cut_segments(&rec, &beyond), Err(SignalError::SegmentOutOfRange { .. })));
        assert!(SegmentSpec::new("a", 0, 1.0, 1.0).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let entries = vec![ManifestEntry { participant_id: "p01".into(), segment: SegmentSpec::new("P1", 3, 0.25, 2.5).unwrap() }];
        let parsed = parse_manifest(&format_manifest(&entries)).unwrap();
        assert_eq!(parsed, entries);
        assert!(parse_manifest("bad,header\n").is_err());
    }
}
