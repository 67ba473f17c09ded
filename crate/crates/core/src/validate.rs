//! Validation analytics: trajectory errors, histograms, Welch PSDs and
//! eigenvalue matching, plus delimited-text report writers.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Complex, DMatrix};
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::mat::fmt_f64;
use crate::trajdata::Trajectory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelError {
    pub name: String,
    pub rmse: f64,
    pub max_abs: f64,
    /// `predicted − truth` on the truth grid.
    pub errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub states: Vec<ChannelError>,
    pub outputs: Vec<ChannelError>,
    pub truth_seconds: Option<f64>,
    pub predicted_seconds: Option<f64>,
}

impl ComparisonReport {
    pub fn with_timings(mut self, truth_seconds: f64, predicted_seconds: f64) -> Self {
        self.truth_seconds = Some(truth_seconds);
        self.predicted_seconds = Some(predicted_seconds);
        self
    }

    pub fn state_rmse(&self) -> Vec<f64> {
        self.states.iter().map(|c| c.rmse).collect()
    }

    pub fn output_rmse(&self) -> Vec<f64> {
        self.outputs.iter().map(|c| c.rmse).collect()
    }
}

fn channel_errors(names: &[String], truth: &DMatrix<f64>, pred: &DMatrix<f64>) -> Vec<ChannelError> {
    (0..truth.nrows())
        .into_par_iter()
        .map(|r| {
            let errors: Vec<f64> = truth
                .row(r)
                .iter()
                .zip(pred.row(r).iter())
                .map(|(t, p)| p - t)
                .collect();
            let n = errors.len().max(1) as f64;
            ChannelError {
                name: names.get(r).cloned().unwrap_or_else(|| format!("ch{r}")),
                rmse: (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt(),
                max_abs: errors.iter().fold(0.0, |m, e| m.max(e.abs())),
                errors,
            }
        })
        .collect()
}

/// Pointwise `predicted − truth` errors for every state and output channel.
/// Outputs are compared only when both trajectories carry them.
pub fn compare_trajectories(truth: &Trajectory, predicted: &Trajectory) -> Result<ComparisonReport> {
    check_len("time grid length", truth.len(), predicted.len())?;
    check_len("state channels", truth.n_states(), predicted.n_states())?;
    for (k, (a, b)) in truth.times().iter().zip(predicted.times()).enumerate() {
        if (a - b).abs() > 1e-9 * a.abs().max(1.0) {
            return Err(Error::invalid(format!("time grids differ at sample {k}: {a} vs {b}")));
        }
    }
    let names = truth.names();
    let states = channel_errors(&names.states, truth.states(), predicted.states());
    let outputs = if truth.n_outputs() > 0 && predicted.n_outputs() > 0 {
        check_len("output channels", truth.n_outputs(), predicted.n_outputs())?;
        channel_errors(&names.outputs, truth.outputs(), predicted.outputs())
    } else {
        Vec::new()
    };
    Ok(ComparisonReport {
        states,
        outputs,
        truth_seconds: None,
        predicted_seconds: None,
    })
}

/// Pools several reports into per-channel RMSE over all samples.
pub fn pooled_rmse(reports: &[ComparisonReport]) -> (Vec<f64>, Vec<f64>) {
    let pool = |pick: fn(&ComparisonReport) -> &Vec<ChannelError>| {
        let n_ch = reports.first().map_or(0, |r| pick(r).len());
        (0..n_ch)
            .map(|c| {
                let (sum, n) = reports.iter().fold((0.0, 0usize), |(s, n), r| {
                    let e = &pick(r)[c].errors;
                    (s + e.iter().map(|v| v * v).sum::<f64>(), n + e.len())
                });
                (sum / n.max(1) as f64).sqrt()
            })
            .collect()
    };
    (pool(|r| &r.states), pool(|r| &r.outputs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `counts.len() + 1` ascending edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Uniform bins over `[min, max]`; the last bin is closed. A degenerate span
/// yields a single bin.
pub fn error_histogram(errors: &[f64], n_bins: usize) -> Result<Histogram> {
    if errors.is_empty() {
        return Err(Error::invalid("histogram of an empty sample"));
    }
    if n_bins == 0 {
        return Err(Error::invalid("histogram needs at least one bin"));
    }
    if errors.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("histogram sample contains non-finite values"));
    }
    let lo = errors.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = errors.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Ok(Histogram {
            edges: vec![lo, hi],
            counts: vec![errors.len()],
        });
    }
    let width = (hi - lo) / n_bins as f64;
    let edges = (0..=n_bins)
        .map(|i| if i == n_bins { hi } else { lo + width * i as f64 })
        .collect();
    let mut counts = vec![0; n_bins];
    for &e in errors {
        let b = (((e - lo) / width) as usize).min(n_bins - 1);
        counts[b] += 1;
    }
    Ok(Histogram { edges, counts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdEstimate {
    pub frequencies: Vec<f64>,
    /// One-sided power per Hz.
    pub density: Vec<f64>,
    pub segment_length: usize,
    pub overlap: f64,
    pub n_segments: usize,
    pub window: String,
}

impl PsdEstimate {
    pub fn peak_frequency(&self) -> f64 {
        let k = self
            .density
            .iter()
            .enumerate()
            .skip(1)
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map_or(0, |(k, _)| k);
        self.frequencies[k]
    }

    pub fn resolution(&self) -> f64 {
        self.frequencies.get(1).copied().unwrap_or(0.0)
    }
}

pub const DEFAULT_SEGMENT: usize = 1024;
pub const DEFAULT_OVERLAP: f64 = 0.5;

/// Welch averaged periodogram with a periodic Hann window and per-segment
/// mean removal. A unit-amplitude sinusoid integrates to about 0.5.
pub fn psd_welch(signal: &[f64], dt: f64, segment_length: usize, overlap: f64) -> Result<PsdEstimate> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::invalid("sample interval must be positive"));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::invalid(format!("overlap {overlap} is outside [0, 1)")));
    }
    if segment_length < 2 || segment_length > signal.len() {
        return Err(Error::invalid(format!(
            "signal of {} samples is too short for segments of {segment_length}",
            signal.len()
        )));
    }
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("signal contains non-finite values"));
    }
    let n = segment_length;
    let step = (n - (overlap * n as f64).round() as usize).max(1);
    let window: Vec<f64> = (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect();
    let w_power: f64 = window.iter().map(|w| w * w).sum();
    let fs = 1.0 / dt;
    let fft = FftPlanner::new().plan_fft_forward(n);
    let n_freq = n / 2 + 1;
    let mut acc = vec![0.0; n_freq];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let mut n_segments = 0;
    let mut start = 0;
    while start + n <= signal.len() {
        let seg = &signal[start..start + n];
        let mean = seg.iter().sum::<f64>() / n as f64;
        for i in 0..n {
            buf[i] = Complex::new((seg[i] - mean) * window[i], 0.0);
        }
        fft.process(&mut buf);
        for (a, c) in acc.iter_mut().zip(&buf) {
            *a += c.norm_sqr();
        }
        n_segments += 1;
        start += step;
    }
    let scale = 1.0 / (fs * w_power * n_segments as f64);
    let density = acc
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let one_sided = if k == 0 || (n.is_multiple_of(2) && k == n / 2) {
                1.0
            } else {
                2.0
            };
            a * scale * one_sided
        })
        .collect();
    Ok(PsdEstimate {
        frequencies: (0..n_freq).map(|k| k as f64 * fs / n as f64).collect(),
        density,
        segment_length: n,
        overlap,
        n_segments,
        window: "hann".into(),
    })
}

/// Welch PSD with the default segment `min(N, 1024)` and 50% overlap.
pub fn psd_welch_default(signal: &[f64], dt: f64) -> Result<PsdEstimate> {
    psd_welch(signal, dt, signal.len().min(DEFAULT_SEGMENT), DEFAULT_OVERLAP)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub reference: Complex<f64>,
    pub candidate: Complex<f64>,
    /// `|candidate − reference| / |reference|` (absolute for a zero reference).
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenComparison {
    /// Ordered as the reference set.
    pub pairs: Vec<EigenPair>,
    pub max_relative_error: f64,
}

/// Greedy nearest-pair matching; the globally closest unmatched pair is
/// taken first, lowest indices on ties.
pub fn compare_eigenvalues(reference: &[Complex<f64>], candidate: &[Complex<f64>]) -> Result<EigenComparison> {
    check_len("eigenvalue set", reference.len(), candidate.len())?;
    let n = reference.len();
    let mut dists: Vec<(f64, usize, usize)> = Vec::with_capacity(n * n);
    for (i, a) in reference.iter().enumerate() {
        for (j, b) in candidate.iter().enumerate() {
            dists.push(((a - b).norm(), i, j));
        }
    }
    dists.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut partner = vec![usize::MAX; n];
    let mut used = vec![false; n];
    for (_, i, j) in dists {
        if partner[i] == usize::MAX && !used[j] {
            partner[i] = j;
            used[j] = true;
        }
    }
    let pairs: Vec<EigenPair> = (0..n)
        .map(|i| {
            let (a, b) = (reference[i], candidate[partner[i]]);
            let d = (a - b).norm();
            EigenPair {
                reference: a,
                candidate: b,
                relative_error: if a.norm() > 0.0 { d / a.norm() } else { d },
            }
        })
        .collect();
    let max_relative_error = pairs.iter().fold(0.0_f64, |m, p| m.max(p.relative_error));
    Ok(EigenComparison {
        pairs,
        max_relative_error,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn format_histogram(h: &Histogram) -> String {
    let mut s = String::from("lower,upper,count\n");
    for (k, c) in h.counts.iter().enumerate() {
        let _ = writeln!(s, "{},{},{c}", fmt_f64(h.edges[k]), fmt_f64(h.edges[k + 1]));
    }
    s
}

/// One frequency column followed by one density column per named estimate.
/// All estimates must share a frequency axis.
pub fn format_psd(estimates: &[(&str, &PsdEstimate)]) -> Result<String> {
    let first = estimates
        .first()
        .ok_or_else(|| Error::invalid("no PSD estimates to format"))?
        .1;
    for (name, e) in estimates {
        if e.frequencies != first.frequencies {
            return Err(Error::invalid(format!("PSD `{name}` has a different frequency axis")));
        }
    }
    let mut s = String::from("frequency");
    for (name, _) in estimates {
        let _ = write!(s, ",{name}");
    }
    s.push('\n');
    for k in 0..first.frequencies.len() {
        s.push_str(&fmt_f64(first.frequencies[k]));
        for (_, e) in estimates {
            let _ = write!(s, ",{}", fmt_f64(e.density[k]));
        }
        s.push('\n');
    }
    Ok(s)
}

/// `trajectory,kind,channel,rmse,max_abs` rows, one per channel per report.
pub fn format_rmse_summary(reports: &[ComparisonReport]) -> String {
    let mut s = String::from("trajectory,kind,channel,rmse,max_abs\n");
    for (t, r) in reports.iter().enumerate() {
        for (kind, chans) in [("state", &r.states), ("output", &r.outputs)] {
            for c in chans {
                let _ = writeln!(s, "{t},{kind},{},{},{}", c.name, fmt_f64(c.rmse), fmt_f64(c.max_abs));
            }
        }
    }
    s
}

pub fn write_histogram(h: &Histogram, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &format_histogram(h))
}

pub fn write_psd(estimates: &[(&str, &PsdEstimate)], path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &format_psd(estimates)?)
}

pub fn write_rmse_summary(reports: &[ComparisonReport], path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &format_rmse_summary(reports))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn traj(offset: f64) -> Trajectory {
        let times: Vec<f64> = (0..20).map(|k| k as f64 * 0.1).collect();
        let states = DMatrix::from_fn(2, 20, |r, c| (r as f64 + 1.0) * times[c].sin() + offset);
        Trajectory::new(times, DMatrix::zeros(1, 20), states, DMatrix::zeros(0, 20), None).unwrap()
    }

    #[test]
    fn identical_trajectories_have_zero_error() {
        let r = compare_trajectories(&traj(0.0), &traj(0.0)).unwrap();
        assert!(r.states.iter().all(|c| c.rmse == 0.0 && c.max_abs == 0.0));
        assert_eq!(r.states[0].errors.len(), 20);
    }

    #[test]
    fn constant_offset_gives_rmse_of_offset() {
        let r = compare_trajectories(&traj(0.0), &traj(0.25)).unwrap();
        for c in &r.states {
            assert!((c.rmse - 0.25).abs() < 1e-12);
        }
        let swapped = compare_trajectories(&traj(0.25), &traj(0.0)).unwrap();
        assert_eq!(swapped.state_rmse(), r.state_rmse());
        assert!((swapped.states[0].errors[3] + r.states[0].errors[3]).abs() < 1e-15);
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let a = traj(0.0);
        let times: Vec<f64> = (0..20).map(|k| k as f64 * 0.2).collect();
        let b = Trajectory::new(
            times,
            DMatrix::zeros(1, 20),
            a.states().clone(),
            DMatrix::zeros(0, 20),
            None,
        )
        .unwrap();
        assert!(compare_trajectories(&a, &b).is_err());
    }

    #[test]
    fn histogram_examples() {
        let h = error_histogram(&[0.0; 4], 3).unwrap();
        assert_eq!(h.counts, vec![4]);
        let h = error_histogram(&[-1.0, 1.0], 2).unwrap();
        assert_eq!(h.counts, vec![1, 1]);
        assert_eq!(h.edges, vec![-1.0, 0.0, 1.0]);
        assert!(error_histogram(&[], 2).is_err());
        assert!(error_histogram(&[1.0], 0).is_err());
    }

    #[test]
    fn tone_peak_is_found() {
        let dt = 0.1;
        let x: Vec<f64> = (0..4096).map(|k| (2.0 * PI * 0.4 * k as f64 * dt).sin()).collect();
        let p = psd_welch_default(&x, dt).unwrap();
        assert!((p.peak_frequency() - 0.4).abs() <= p.resolution());
        let power: f64 = p.density.iter().sum::<f64>() * p.resolution();
        assert!((power - 0.5).abs() < 0.01, "{power}");
        assert_eq!(*p.frequencies.last().unwrap(), 5.0);
    }

    #[test]
    fn white_noise_integrates_to_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..20000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / x.len() as f64;
        let p = psd_welch(&x, 0.01, 512, 0.5).unwrap();
        let integral: f64 = p.density.iter().sum::<f64>() * p.resolution();
        assert!((integral - var).abs() < 0.1 * var, "{integral} vs {var}");
    }

    #[test]
    fn constant_signal_has_no_power() {
        let p = psd_welch_default(&[3.0; 2000], 0.05).unwrap();
        assert!(p.density.iter().skip(1).all(|d| *d <= 1e-20));
    }

    #[test]
    fn psd_rejects_bad_arguments() {
        assert!(psd_welch(&[1.0; 10], 0.1, 20, 0.5).is_err());
        assert!(psd_welch(&[1.0; 10], 0.1, 8, 1.0).is_err());
        assert!(psd_welch(&[1.0; 10], 0.0, 8, 0.5).is_err());
    }

    #[test]
    fn eigen_examples() {
        let a = [Complex::new(1.0, 0.0)];
        let b = [Complex::new(2.0, 0.0)];
        assert_eq!(compare_eigenvalues(&a, &b).unwrap().max_relative_error, 1.0);
        let s = [
            Complex::new(-1.0, 2.0),
            Complex::new(-1.0, -2.0),
            Complex::new(3.0, 0.0),
        ];
        let mut t = s;
        t.reverse();
        assert_eq!(compare_eigenvalues(&s, &t).unwrap().max_relative_error, 0.0);
        assert!(compare_eigenvalues(&s, &a).is_err());
    }

    #[test]
    fn report_formats() {
        let h = error_histogram(&[-1.0, 1.0], 2).unwrap();
        assert_eq!(format_histogram(&h), "lower,upper,count\n-1,0,1\n0,1,1\n");
        let r = compare_trajectories(&traj(0.0), &traj(0.5)).unwrap();
        let s = format_rmse_summary(&[r]);
        assert!(s.lines().nth(1).unwrap().starts_with("0,state,x0,0.5,0.5"));
    }

    proptest! {
        #[test]
        fn histogram_conserves_counts(xs in prop::collection::vec(-1e3f64..1e3, 1..200), bins in 1usize..40) {
            let h = error_histogram(&xs, bins).unwrap();
            prop_assert_eq!(h.counts.iter().sum::<usize>(), xs.len());
            prop_assert_eq!(h.edges.len(), h.counts.len() + 1);
        }

        #[test]
        fn tone_recovered_for_any_grid(dt in 0.01f64..0.5, seg_pow in 6u32..11, frac in 0.05f64..0.45) {
            let seg = 1usize << seg_pow;
            let f0 = frac / dt;
            let x: Vec<f64> = (0..seg * 4).map(|k| (2.0 * PI * f0 * k as f64 * dt).cos()).collect();
            let p = psd_welch(&x, dt, seg, 0.5).unwrap();
            prop_assert!((p.peak_frequency() - f0).abs() <= p.resolution());
        }
    }
}
