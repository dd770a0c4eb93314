//! Median-of-N timings for the numeric kernels.

use std::fmt::Write as _;
use std::fs::OpenOptions;
use std::io::{self, Write as _};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::balance::{label_spread, LabelSpreadConfig};
use crate::dataset::FeatureSet;
use crate::ensemble::{evaluate_task, EvalConfig, Method, Task};
use crate::learners::{train_decision_tree, MaxFeatures};
use crate::matrix::Matrix;
use crate::pipeline::{dataset_from_synth, FeatureConfig, PreprocessConfig};
use crate::signal::SosFilter;
use crate::spectral::welch_psd;
use crate::synth::{generate, SynthConfig};

pub const KERNELS: [&str; 5] = ["filter", "welch_psd", "tree_split", "label_spread", "cv"];

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("unknown kernel `{0}` (known: filter, welch_psd, tree_split, label_spread, cv)")]
    UnknownKernel(String),
    #[error("at least 5 iterations are required, got {0}")]
    TooFewIterations(usize),
    #[error("kernel {kernel} failed at size {size}: {msg}")]
    Kernel { kernel: String, size: usize, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchResult {
    pub kernel: String,
    pub size: usize,
    pub median: Duration,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchOptions {
    pub iterations: usize,
    /// Let rayon use every core; otherwise timings run on one thread.
    pub parallel: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self { iterations: 5, parallel: false }
    }
}

pub fn default_sizes(kernel: &str) -> Vec<usize> {
    match kernel {
        "filter" | "welch_psd" => vec![1 << 12, 1 << 14],
        "tree_split" => vec![500, 2000],
        "label_spread" => vec![200, 800],
        "cv" => vec![6],
        _ => Vec::new(),
    }
}

type Job = Box<dyn FnMut() -> Result<(), String>>;

fn signal(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn features(n: usize, d: usize, rng: &mut ChaCha8Rng) -> (Matrix<f64>, Vec<bool>) {
    let y: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
    let data = (0..n * d)
        .map(|k| rng.random_range(-1.0..1.0) + if y[k / d] { 0.5 } else { -0.5 })
        .collect();
    (Matrix::from_vec(n, d, data), y)
}

/// Builds the job for one (kernel, size); inputs depend only on the size.
fn job(kernel: &str, size: usize) -> Result<Job, BenchError> {
    let mut rng = ChaCha8Rng::seed_from_u64(size as u64);
    let fail = |e: &dyn std::fmt::Display| e.to_string();
    Ok(match kernel {
        "filter" => {
            let x = signal(size, &mut rng);
            let f = SosFilter::butterworth_bandpass(4.0, 80.0, 4, 256.0).map_err(|e| BenchError::Kernel {
                kernel: kernel.into(),
                size,
                msg: e.to_string(),
            })?;
            Box::new(move || {
                std::hint::black_box(f.filtfilt(&x));
                Ok(())
            })
        }
        "welch_psd" => {
            let x = signal(size, &mut rng);
            Box::new(move || welch_psd(&x, 256.0, 512.min(size), 0.5).map(|p| drop(std::hint::black_box(p))).map_err(|e| fail(&e)))
        }
        "tree_split" => {
            let (x, y) = features(size, 16, &mut rng);
            Box::new(move || {
                train_decision_tree(&x, &y, Some(8), 2, MaxFeatures::All, 0)
                    .map(|t| drop(std::hint::black_box(t)))
                    .map_err(|e| fail(&e))
            })
        }
        "label_spread" => {
            let (x, y) = features(size, 8, &mut rng);
            let partial: Vec<Option<usize>> =
                y.iter().enumerate().map(|(i, &b)| (i % 10 == 0).then_some(b as usize)).collect();
            let cfg = LabelSpreadConfig::default();
            Box::new(move || {
                label_spread(&x, &partial, 2, &cfg).map(|r| drop(std::hint::black_box(r))).map_err(|e| fail(&e))
            })
        }
        "cv" => {
            let synth = SynthConfig { n_participants: size.max(2), passages_per_participant: 2, ..Default::default() };
            let out = generate(&synth).map_err(|e| BenchError::Kernel { kernel: kernel.into(), size, msg: e.to_string() })?;
            let (ds, _) = dataset_from_synth(&out, &PreprocessConfig::default(), &FeatureConfig::default())
                .map_err(|e| BenchError::Kernel { kernel: kernel.into(), size, msg: e.to_string() })?;
            let cfg = EvalConfig { k_folds: size.clamp(2, 10), ..Default::default() };
            Box::new(move || {
                evaluate_task(&ds, Task::Confusion, FeatureSet::EegNlp, Method::Lr, &cfg)
                    .map(|r| drop(std::hint::black_box(r)))
                    .map_err(|e| fail(&e))
            })
        }
        other => return Err(BenchError::UnknownKernel(other.to_string())),
    })
}

fn time_kernel(kernel: &str, sizes: &[usize], iterations: usize) -> Result<Vec<BenchResult>, BenchError> {
    let mut out = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let mut run = job(kernel, size)?;
        let mut times = Vec::with_capacity(iterations);
        for _ in 0..iterations {
            let t = Instant::now();
            run().map_err(|msg| BenchError::Kernel { kernel: kernel.into(), size, msg })?;
            times.push(t.elapsed());
        }
        times.sort();
        let median = if iterations % 2 == 1 {
            times[iterations / 2]
        } else {
            (times[iterations / 2 - 1] + times[iterations / 2]) / 2
        };
        out.push(BenchResult { kernel: kernel.into(), size, median, iterations });
    }
    Ok(out)
}

/// Times `kernel` at each size. Empty `sizes` means [`default_sizes`].
pub fn bench(kernel: &str, sizes: &[usize], opts: &BenchOptions) -> Result<Vec<BenchResult>, BenchError> {
    if !KERNELS.contains(&kernel) {
        return Err(BenchError::UnknownKernel(kernel.to_string()));
    }
    if opts.iterations < 5 {
        return Err(BenchError::TooFewIterations(opts.iterations));
    }
    let sizes = if sizes.is_empty() { default_sizes(kernel) } else { sizes.to_vec() };
    let results = if opts.parallel {
        time_kernel(kernel, &sizes, opts.iterations)?
    } else {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(|e| BenchError::Kernel {
            kernel: kernel.into(),
            size: 0,
            msg: e.to_string(),
        })?;
        pool.install(|| time_kernel(kernel, &sizes, opts.iterations))?
    };
    // Flagged, never asserted: timings are machine noise at small sizes.
    for w in results.windows(2) {
        if w[1].size > w[0].size && w[1].median < w[0].median {
            log::warn!("{kernel}: median at n={} below n={} ({:?} < {:?})", w[1].size, w[0].size, w[1].median, w[0].median);
        }
    }
    Ok(results)
}

pub const BENCH_CSV_HEADER: &str = "kernel,size,median_s,iterations";

pub fn format_bench_rows(results: &[BenchResult]) -> String {
    let mut s = String::new();
    for r in results {
        let _ = writeln!(s, "{},{},{:.9},{}", r.kernel, r.size, r.median.as_secs_f64(), r.iterations);
    }
    s
}

/// Appends to `path`, writing the header first if the file is new or empty.
pub fn append_bench_csv(path: &Path, results: &[BenchResult]) -> io::Result<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(f, "{BENCH_CSV_HEADER}")?;
    }
    f.write_all(format_bench_rows(results).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_kernel_and_iteration_floor() {
        assert!(matches!(bench("fft", &[], &BenchOptions::default()), Err(BenchError::UnknownKernel(k)) if k == "fft"));
        let few = BenchOptions { iterations: 3, parallel: false };
        assert!(matches!(bench("filter", &[64], &few), Err(BenchError::TooFewIterations(3))));
    }

    #[test]
    fn welch_two_sizes_appended() {
        let r = bench("welch_psd", &[1 << 12, 1 << 14], &BenchOptions::default()).unwrap();
        assert_eq!(r.len(), 2);
        assert!(r.iter().all(|b| b.iterations == 5));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bench.csv");
        append_bench_csv(&p, &r).unwrap();
        append_bench_csv(&p, &r).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert_eq!(text.lines().next().unwrap(), BENCH_CSV_HEADER);
    }
}
