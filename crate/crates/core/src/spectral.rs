//! Welch power spectral density and band-power features.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::scalar::Real;
use crate::signal::EegSegment;

#[derive(Debug, Error, PartialEq)]
pub enum SpectralError {
    #[error("segment of {len} samples is shorter than the {min}-sample minimum window")]
    SegmentTooShort { len: usize, min: usize },
    #[error("window length {0} must be even and non-zero")]
    InvalidWindow(usize),
    #[error("overlap fraction {0} outside [0, 1)")]
    InvalidOverlap(f64),
    #[error("band [{lo_hz}, {hi_hz}) outside [0, {nyquist_hz}] Hz")]
    BandOutOfRange { lo_hz: f64, hi_hz: f64, nyquist_hz: f64 },
}

pub type Result<T, E = SpectralError> = std::result::Result<T, E>;

/// One-sided spectral density on `0, fs/N, ..., fs/2`, units^2 / Hz.
#[derive(Clone, Debug, PartialEq)]
pub struct PsdEstimate<T> {
    pub freqs_hz: Vec<T>,
    pub power: Vec<T>,
    pub n_averages: usize,
}

impl<T: Real> PsdEstimate<T> {
    pub fn nyquist_hz(&self) -> T {
        *self.freqs_hz.last().expect("non-empty PSD")
    }

    /// Integrated power over the full one-sided range.
    pub fn total_power(&self) -> T {
        integrate_linear(&self.freqs_hz, &self.power, T::zero(), self.nyquist_hz())
    }
}

/// Hann-windowed averaged periodogram with a cached FFT plan.
pub struct Welch<T: Real> {
    window: Vec<T>,
    window_power: T,
    step: usize,
    fft: Arc<dyn Fft<T>>,
}

impl<T: Real> Welch<T> {
    pub fn new(window_len: usize, overlap_frac: f64) -> Result<Self> {
        if window_len == 0 || window_len % 2 == 1 {
            return Err(SpectralError::InvalidWindow(window_len));
        }
        if !(0.0..1.0).contains(&overlap_frac) {
            return Err(SpectralError::InvalidOverlap(overlap_frac));
        }
        let n = window_len;
        // Periodic Hann.
        let window: Vec<T> = (0..n)
            .map(|i| T::lit(0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()))
            .collect();
        let window_power = window.iter().map(|&w| w * w).sum();
        let overlap = (overlap_frac * n as f64).floor() as usize;
        let step = (n - overlap).max(1);
        let fft = FftPlanner::new().plan_fft_forward(n);
        Ok(Self { window, window_power, step, fft })
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    pub fn estimate(&self, x: &[T], fs: T) -> Result<PsdEstimate<T>> {
        let n = self.window.len();
        if x.len() < n {
            return Err(SpectralError::SegmentTooShort { len: x.len(), min: n });
        }
        let half = n / 2;
        let mut acc = vec![T::zero(); half + 1];
        let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
        let mut count = 0usize;
        let mut start = 0;
        while start + n <= x.len() {
            for (slot, (&v, &w)) in buf.iter_mut().zip(x[start..start + n].iter().zip(&self.window)) {
                *slot = Complex::new(v * w, T::zero());
            }
            self.fft.process(&mut buf);
            for (a, c) in acc.iter_mut().zip(&buf) {
                *a += c.norm_sqr();
            }
            count += 1;
            start += self.step;
        }
        let scale = T::one() / (fs * self.window_power * T::from_usize_lossy(count));
        let two = T::lit(2.0);
        let power = acc
            .iter()
            .enumerate()
            .map(|(k, &a)| if k == 0 || k == half { a * scale } else { two * a * scale })
            .collect();
        let df = fs / T::from_usize_lossy(n);
        let freqs_hz = (0..=half).map(|k| T::from_usize_lossy(k) * df).collect();
        Ok(PsdEstimate { freqs_hz, power, n_averages: count })
    }
}

/// Welch PSD of one channel; the density integrates to the mean power of
/// the windowed signal.
pub fn welch_psd<T: Real>(x: &[T], fs: T, window_len: usize, overlap_frac: f64) -> Result<PsdEstimate<T>> {
    Welch::new(window_len, overlap_frac)?.estimate(x, fs)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BandDef {
    pub name: String,
    pub lo_hz: f64,
    pub hi_hz: f64,
}

impl BandDef {
    pub fn new(name: impl Into<String>, lo_hz: f64, hi_hz: f64) -> Self {
        assert!(lo_hz < hi_hz, "band edges out of order");
        Self { name: name.into(), lo_hz, hi_hz }
    }
}

/// Theta [4,8), Alpha [8,12), Beta [13,30), Gamma [30,80). The [12,13) gap is intentional.
pub fn default_bands() -> Vec<BandDef> {
    vec![
        BandDef::new("theta", 4.0, 8.0),
        BandDef::new("alpha", 8.0, 12.0),
        BandDef::new("beta", 13.0, 30.0),
        BandDef::new("gamma", 30.0, 80.0),
    ]
}

/// Integral of the piecewise-linear interpolant of `(f, p)` over `[lo, hi]`.
///
/// Exactly additive over adjacent intervals, so band powers over a
/// partition sum to the total.
fn integrate_linear<T: Real>(f: &[T], p: &[T], lo: T, hi: T) -> T {
    let half = T::lit(0.5);
    let mut total = T::zero();
    for k in 0..f.len().saturating_sub(1) {
        let (f0, f1) = (f[k], f[k + 1]);
        let a = if lo > f0 { lo } else { f0 };
        let b = if hi < f1 { hi } else { f1 };
        if a >= b {
            continue;
        }
        let slope = (p[k + 1] - p[k]) / (f1 - f0);
        let pa = p[k] + slope * (a - f0);
        let pb = p[k] + slope * (b - f0);
        total += (b - a) * (pa + pb) * half;
    }
    total
}

/// Trapezoidal band integral over `[lo, hi)`.
pub fn band_power<T: Real>(psd: &PsdEstimate<T>, band: &BandDef) -> Result<T> {
    let nyquist = psd.nyquist_hz().as_f64();
    if band.lo_hz < 0.0 || band.hi_hz > nyquist * (1.0 + 1e-12) || band.lo_hz >= band.hi_hz {
        return Err(SpectralError::BandOutOfRange { lo_hz: band.lo_hz, hi_hz: band.hi_hz, nyquist_hz: nyquist });
    }
    let v = integrate_linear(&psd.freqs_hz, &psd.power, T::lit(band.lo_hz), T::lit(band.hi_hz));
    Ok(if v < T::zero() { T::zero() } else { v })
}

#[derive(Clone, Debug, PartialEq)]
pub struct WelchParams {
    pub window_len: usize,
    pub overlap_frac: f64,
    /// Hard floor when shrinking the window for short segments.
    pub min_window: usize,
}

impl Default for WelchParams {
    fn default() -> Self {
        Self { window_len: 512, overlap_frac: 0.5, min_window: 128 }
    }
}

impl WelchParams {
    /// Window actually used for a segment of `len` samples: the preferred
    /// length, or the largest power of two that fits, never below `min_window`.
    pub fn effective_window(&self, len: usize) -> Result<usize> {
        if len >= self.window_len {
            return Ok(self.window_len);
        }
        if len < self.min_window || len < 2 {
            return Err(SpectralError::SegmentTooShort { len, min: self.min_window });
        }
        let pow2 = 1usize << (usize::BITS - 1 - len.leading_zeros());
        if pow2 < self.min_window {
            return Err(SpectralError::SegmentTooShort { len, min: self.min_window });
        }
        Ok(pow2)
    }
}

/// Band powers for every (channel, band), channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct BandPowerFeatures<T> {
    pub channel_names: Vec<String>,
    pub band_names: Vec<String>,
    pub values: Vec<T>,
}

/// Floor applied before the log transform so silent channels stay finite.
pub const LOG_POWER_FLOOR: f64 = 1e-12;

impl<T: Real> BandPowerFeatures<T> {
    pub fn get(&self, channel: &str, band: &str) -> Option<T> {
        let c = self.channel_names.iter().position(|n| n == channel)?;
        let b = self.band_names.iter().position(|n| n == band)?;
        Some(self.values[c * self.band_names.len() + b])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `log10(max(power, LOG_POWER_FLOOR))` per entry.
    pub fn log10(&self) -> Vec<T> {
        let floor = T::lit(LOG_POWER_FLOOR);
        self.values.iter().map(|&v| if v > floor { v } else { floor }.log10()).collect()
    }

    /// `<channel>_<band>` in value order.
    pub fn feature_names(&self) -> Vec<String> {
        feature_names(&self.channel_names, &self.band_names)
    }
}

pub fn feature_names(channels: &[String], bands: &[String]) -> Vec<String> {
    channels.iter().flat_map(|c| bands.iter().map(move |b| format!("{c}_{b}"))).collect()
}

/// Per-channel Welch PSD followed by band integration.
pub fn extract_features<T: Real>(
    segment: &EegSegment<T>,
    bands: &[BandDef],
    params: &WelchParams,
) -> Result<BandPowerFeatures<T>> {
    let window = params.effective_window(segment.len())?;
    let welch = Welch::new(window, params.overlap_frac)?;
    let mut values = Vec::with_capacity(segment.samples.ncols() * bands.len());
    for c in 0..segment.samples.ncols() {
        let psd = welch.estimate(&segment.samples.column(c), segment.sample_rate_hz)?;
        for band in bands {
            values.push(band_power(&psd, band)?);
        }
    }
    Ok(BandPowerFeatures {
        channel_names: segment.channel_names.clone(),
        band_names: bands.iter().map(|b| b.name.clone()).collect(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::signal::SegmentSpec;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn sine(freq: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / fs).sin()).collect()
    }

    #[test]
    fn white_noise_total_matches_variance() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..16384).map(|_| StandardNormal.sample(&mut rng)).collect();
        let var = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        let psd = welch_psd(&x, 256.0, 512, 0.5).unwrap();
        assert_eq!(psd.n_averages, 63);
        assert!((psd.total_power() - 1.0).abs() < 0.05);
        assert!((psd.total_power() - var).abs() < 0.05);
    }

    #[test]
    fn sine_power_lands_in_alpha() {
        let x = sine(10.0, 256.0, 2048);
        let psd = welch_psd(&x, 256.0, 512, 0.5).unwrap();
        let total = psd.total_power();
        assert!((total - 0.5).abs() < 0.025);
        let bands = default_bands();
        let alpha = band_power(&psd, &bands[1]).unwrap();
        assert!((alpha - 0.5).abs() < 0.025);
        for b in [&bands[0], &bands[2], &bands[3]] {
            assert!(band_power(&psd, b).unwrap() < 0.01 * total, "{}", b.name);
        }
    }

    #[test]
    fn zero_signal_has_zero_psd() {
        let psd = welch_psd(&[0.0f64; 1024], 256.0, 512, 0.5).unwrap();
        assert!(psd.power.iter().all(|&p| p == 0.0));
        assert_eq!(band_power(&psd, &default_bands()[0]).unwrap(), 0.0);
    }

    #[test]
    fn full_band_equals_total() {
        let x = sine(33.0, 256.0, 1024);
        let psd = welch_psd(&x, 256.0, 256, 0.25).unwrap();
        let all = band_power(&psd, &BandDef::new("all", 0.0, 128.0)).unwrap();
        assert_eq!(all, psd.total_power());
        let bad = BandDef::new("over", 100.0, 200.0);
        assert!(matches!(band_power(&psd, &bad), Err(SpectralError::BandOutOfRange { .. })));
    }

    #[test]
    fn argument_validation() {
        assert_eq!(welch_psd(&[0.0f64; 100], 256.0, 128, 0.5).unwrap_err(), SpectralError::SegmentTooShort { len: 100, min: 128 });
        assert!(matches!(welch_psd(&[0.0f64; 100], 256.0, 33, 0.5), Err(SpectralError::InvalidWindow(33))));
        assert!(matches!(welch_psd(&[0.0f64; 100], 256.0, 32, 1.0), Err(SpectralError::InvalidOverlap(_))));
    }

    #[test]
    fn window_shrinks_to_power_of_two() {
        let p = WelchParams::default();
        assert_eq!(p.effective_window(2000).unwrap(), 512);
        assert_eq!(p.effective_window(400).unwrap(), 256);
        assert_eq!(p.effective_window(128).unwrap(), 128);
        assert!(p.effective_window(127).is_err());
    }

    fn segment(channels: Vec<Vec<f64>>) -> EegSegment<f64> {
        let n = channels[0].len();
        let names = ["TP9", "AF7", "AF8", "TP10"].iter().map(|s| s.to_string()).collect();
        let mut m = Matrix::zeros(n, channels.len());
        for (c, x) in channels.iter().enumerate() {
            m.set_column(c, x);
        }
        EegSegment { spec: SegmentSpec::new("p", 0, 0.0, 4.0).unwrap(), channel_names: names, samples: m, sample_rate_hz: 256.0 }
    }

    #[test]
    fn features_isolate_sine_channel() {
        let n = 1024;
        let seg = segment(vec![vec![0.0; n], sine(10.0, 256.0, n), vec![0.0; n], vec![0.0; n]]);
        let f = extract_features(&seg, &default_bands(), &WelchParams::default()).unwrap();
        assert_eq!(f.len(), 16);
        for (name, &v) in f.feature_names().iter().zip(&f.values) {
            if name == "AF7_alpha" {
                assert!((v - 0.5).abs() < 0.025);
            } else {
                assert!(v < 0.005, "{name} = {v}");
            }
        }
        assert_eq!(f.get("AF7", "alpha"), Some(f.values[5]));
        let again = extract_features(&seg, &default_bands(), &WelchParams::default()).unwrap();
        assert_eq!(f, again);
        assert!(f.log10().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn f32_path_agrees_with_f64() {
        let x = sine(20.0, 256.0, 1024);
        let xf: Vec<f32> = x.iter().map(|&v| v as f32).collect();
        let a = welch_psd(&x, 256.0, 256, 0.5).unwrap().total_power();
        let b = welch_psd(&xf, 256.0f32, 256, 0.5).unwrap().total_power();
        assert!((a - b as f64).abs() < 1e-5);
    }
}
