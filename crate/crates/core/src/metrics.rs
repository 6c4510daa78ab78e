//! Distortion and linearity figures of merit.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{invalid, Error, Result};
use crate::ident::InverseTable;
use crate::rbf::QuadSegmentTable;
use crate::signal::{NonlinearityModel, SignalFrame};

pub const DEFAULT_HARMONICS: usize = 9;

/// Minimum number of stimulus periods in an analysed frame.
pub const MIN_PERIODS: f64 = 16.0;

// HFT144D flat-top, cosine-series form.
const HFT144D: [f64; 7] = [
    1.0,
    -1.967_600_33,
    1.579_836_07,
    -0.811_236_44,
    0.225_835_58,
    -0.027_738_48,
    0.000_903_60,
];

// Main-lobe half width of the window, in bins.
const MAIN_LOBE_BINS: usize = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct ThdReport {
    pub f0: f64,
    pub bin_hz: f64,
    pub fundamental_amplitude: f64,
    /// Harmonics 2..=H.
    pub harmonic_amplitudes: Vec<f64>,
    pub thd_db: f64,
    /// Median level of the bins away from DC and the harmonics, in dBc.
    pub noise_floor_db: f64,
}

impl ThdReport {
    pub fn n_harmonics(&self) -> usize {
        self.harmonic_amplitudes.len() + 1
    }
}

fn flat_top(n: usize) -> Vec<f64> {
    let step = 2.0 * std::f64::consts::PI / n as f64;
    (0..n)
        .map(|i| {
            let z = step * i as f64;
            HFT144D
                .iter()
                .enumerate()
                .map(|(k, &c)| c * (k as f64 * z).cos())
                .sum()
        })
        .collect()
}

fn hann(n: usize) -> Vec<f64> {
    let step = 2.0 * std::f64::consts::PI / n as f64;
    (0..n)
        .map(|i| 0.5 - 0.5 * (step * i as f64).cos())
        .collect()
}

// One-sided magnitude spectrum scaled so a sine of amplitude A reads A.
fn amplitude_spectrum(x: &[f64], window: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> = x
        .iter()
        .zip(window)
        .map(|(&v, &w)| Complex::new((v - mean) * w, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let gain = 2.0 / window.iter().sum::<f64>();
    buf[..n / 2 + 1].iter().map(|c| c.norm() * gain).collect()
}

// Vertex of the parabola through (k-1, k, k+1): (offset, height).
fn parabolic(ym: f64, y0: f64, yp: f64) -> (f64, f64) {
    let denom = ym - 2.0 * y0 + yp;
    if denom.abs() < f64::MIN_POSITIVE || !denom.is_finite() {
        return (0.0, y0);
    }
    let p = (0.5 * (ym - yp) / denom).clamp(-0.5, 0.5);
    (p, y0 - 0.25 * (ym - yp) * p)
}

fn read_peak(spec: &[f64], bin: f64) -> f64 {
    let last = spec.len() - 1;
    let k0 = (bin.round() as usize).clamp(1, last - 1);
    let lo = k0.saturating_sub(1).max(1);
    let hi = (k0 + 1).min(last - 1);
    let k = (lo..=hi)
        .max_by(|&a, &b| spec[a].total_cmp(&spec[b]))
        .unwrap_or(k0);
    spec[k]
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// THD of `frame` at known fundamental `f0` over harmonics `2..=n_harmonics`.
pub fn thd(frame: &SignalFrame, f0: f64, n_harmonics: usize) -> Result<ThdReport> {
    thd_averaged(frame, f0, n_harmonics, frame.len())
}

/// THD from the power spectrum averaged over consecutive non-overlapping
/// segments of `segment_len` samples. Averaging leaves the expected noise
/// level in each bin unchanged but shrinks its fluctuation.
pub fn thd_averaged(
    frame: &SignalFrame,
    f0: f64,
    n_harmonics: usize,
    segment_len: usize,
) -> Result<ThdReport> {
    let fs = frame.sample_rate();
    if !(f0.is_finite() && f0 > 0.0) {
        return Err(invalid("f0", "must be positive and finite"));
    }
    if n_harmonics < 2 {
        return Err(invalid("n_harmonics", "must be at least 2"));
    }
    if n_harmonics as f64 * f0 >= fs / 2.0 {
        return Err(invalid(
            "n_harmonics",
            format!("harmonic {n_harmonics} of {f0} Hz is beyond Nyquist"),
        ));
    }
    if segment_len == 0 || segment_len > frame.len() {
        return Err(invalid("segment_len", "must lie in 1..=frame length"));
    }
    let n = segment_len;
    let bin_hz = fs / n as f64;
    let f0_bins = f0 / bin_hz;
    if f0_bins < 3.0 {
        return Err(invalid("f0", "fewer than 3 bins from DC"));
    }
    if f0_bins < MIN_PERIODS {
        return Err(invalid(
            "frame",
            format!("holds {f0_bins:.2} periods of f0, need {MIN_PERIODS}"),
        ));
    }

    let window = flat_top(n);
    let mut power = vec![0.0; n / 2 + 1];
    let segments = frame.samples().chunks_exact(n);
    let count = segments.len() as f64;
    for seg in segments {
        for (p, a) in power.iter_mut().zip(amplitude_spectrum(seg, &window)) {
            *p += a * a;
        }
    }
    let spec: Vec<f64> = power.iter().map(|p| (p / count).sqrt()).collect();

    let fundamental = read_peak(&spec, f0_bins);
    if !(fundamental > 0.0) {
        return Err(Error::Numeric("fundamental amplitude is zero".into()));
    }
    let harmonics: Vec<f64> = (2..=n_harmonics)
        .map(|h| read_peak(&spec, h as f64 * f0_bins))
        .collect();
    let harmonic_power: f64 = harmonics.iter().map(|a| a * a).sum();
    let thd_db = 10.0 * (harmonic_power / (fundamental * fundamental)).log10();

    let mut excluded = vec![false; spec.len()];
    for e in excluded.iter_mut().take(MAIN_LOBE_BINS + 1) {
        *e = true;
    }
    let mut h = 1.0;
    while h * f0_bins < spec.len() as f64 + MAIN_LOBE_BINS as f64 {
        let c = (h * f0_bins).round() as isize;
        let lo = (c - MAIN_LOBE_BINS as isize - 1).max(0) as usize;
        let hi = ((c + MAIN_LOBE_BINS as isize + 1) as usize).min(spec.len() - 1);
        if lo <= hi {
            for e in &mut excluded[lo..=hi] {
                *e = true;
            }
        }
        h += 1.0;
    }
    let rest: Vec<f64> = spec
        .iter()
        .zip(&excluded)
        .filter(|(_, &x)| !x)
        .map(|(&a, _)| a)
        .collect();
    let noise_floor_db = 20.0 * (median(rest) / fundamental).log10();

    Ok(ThdReport {
        f0,
        bin_hz,
        fundamental_amplitude: fundamental,
        harmonic_amplitudes: harmonics,
        thd_db,
        noise_floor_db,
    })
}

/// `before.thd_db - after.thd_db`; positive means less distortion after.
pub fn thd_improvement(before: &ThdReport, after: &ThdReport) -> Result<f64> {
    let tol = before.bin_hz.max(after.bin_hz);
    if (before.f0 - after.f0).abs() > tol {
        return Err(invalid(
            "f0",
            format!("reports disagree: {} Hz vs {} Hz", before.f0, after.f0),
        ));
    }
    Ok(before.thd_db - after.thd_db)
}

/// Rough fundamental estimate from the strongest spectral peak.
pub fn estimate_fundamental(frame: &SignalFrame) -> Result<f64> {
    let n = frame.len();
    if n < 64 {
        return Err(invalid("frame", "at least 64 samples are needed"));
    }
    let spec = amplitude_spectrum(frame.samples(), &hann(n));
    let k = (3..spec.len() - 1)
        .max_by(|&a, &b| spec[a].total_cmp(&spec[b]))
        .ok_or(Error::Empty("spectrum"))?;
    if !(spec[k] > 0.0) {
        return Err(Error::Numeric("no spectral peak".into()));
    }
    let ln = |v: f64| v.max(f64::MIN_POSITIVE).ln();
    let (p, _) = parabolic(ln(spec[k - 1]), ln(spec[k]), ln(spec[k + 1]));
    Ok((k as f64 + p) * frame.sample_rate() / n as f64)
}

/// Anything that maps a distorted value back towards the input scale.
pub trait Compensator {
    fn compensate(&self, y: f64) -> f64;
}

impl Compensator for InverseTable {
    fn compensate(&self, y: f64) -> f64 {
        self.eval(y)
    }
}

impl Compensator for QuadSegmentTable {
    fn compensate(&self, y: f64) -> f64 {
        QuadSegmentTable::compensate(self, y)
    }
}

impl<F: Fn(f64) -> f64> Compensator for F {
    fn compensate(&self, y: f64) -> f64 {
        self(y)
    }
}

pub const LINEARITY_GRID: usize = 4001;

/// RMS deviation of `g(f(x))` from `x` over `[lo, hi]` after the best affine
/// fit, as a fraction of `hi - lo`.
pub fn rms_linearity_error(
    g: &impl Compensator,
    f: &NonlinearityModel,
    range: (f64, f64),
) -> Result<f64> {
    let (lo, hi) = range;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(invalid("range", "need finite lo < hi"));
    }
    let m = LINEARITY_GRID;
    let xs: Vec<f64> = (0..m)
        .map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64)
        .collect();
    let zs: Vec<f64> = xs.iter().map(|&x| g.compensate(f.eval(x))).collect();
    if zs.iter().any(|z| !z.is_finite()) {
        return Err(Error::Numeric(
            "compensator produced a non-finite value".into(),
        ));
    }
    let mx = xs.iter().sum::<f64>() / m as f64;
    let mz = zs.iter().sum::<f64>() / m as f64;
    let szz: f64 = zs.iter().map(|z| (z - mz) * (z - mz)).sum();
    let sxz: f64 = xs.iter().zip(&zs).map(|(x, z)| (x - mx) * (z - mz)).sum();
    let slope = if szz > 0.0 { sxz / szz } else { 0.0 };
    let ss: f64 = xs
        .iter()
        .zip(&zs)
        .map(|(x, z)| {
            let r = mx + slope * (z - mz) - x;
            r * r
        })
        .sum();
    Ok((ss / m as f64).sqrt() / (hi - lo))
}
