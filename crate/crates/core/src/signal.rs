//! Test-signal generation, ground-truth static nonlinearities and noise
//! injection.
//!
//! A simulated measurement is `y[k] = f(x[k] + n[k])` with `x` a clean
//! stimulus, `n` white Gaussian input noise and `f` a memoryless map. All
//! amplitudes are normalized to full scale `[-1, +1]`.
//!
//! Gaussian samples come from the ziggurat sampler of `rand_distr`
//! (`StandardNormal`) driven by a `ChaCha8Rng` seeded with
//! `seed_from_u64`. Both are value-stable within their major versions, which
//! are pinned by the workspace lockfile.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};

/// Noise excursion (in standard deviations) that must stay inside the
/// admissible domain of a model.
pub const DOMAIN_GUARD_SIGMAS: f64 = 5.0;

/// A finite run of real samples taken at a fixed rate.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalFrame {
    samples: Vec<f64>,
    sample_rate: f64,
}

impl SignalFrame {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self> {
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(invalid(
                "sample_rate",
                format!("must be positive, got {sample_rate}"),
            ));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Numeric(format!("sample {i} is not finite")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    /// Returns the trailing `n` samples (or the whole frame if shorter).
    pub fn tail(&self, n: usize) -> SignalFrame {
        let start = self.samples.len().saturating_sub(n);
        SignalFrame {
            samples: self.samples[start..].to_vec(),
            sample_rate: self.sample_rate,
        }
    }

    pub(crate) fn from_parts_unchecked(samples: Vec<f64>, sample_rate: f64) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }
}

/// Parameterization of a ground-truth static nonlinearity.
#[derive(Debug, Clone, PartialEq)]
pub enum NonlinearityKind {
    Identity,
    /// `tanh(drive * x) / tanh(drive)`, normalized so that `f(±1) = ±1`.
    ScaledTanh {
        drive: f64,
    },
    /// `sum_k c[k] * x^(2k+1)`.
    OddPolynomial {
        coefficients: Vec<f64>,
    },
    /// `clamp(x, -threshold, threshold)`. Not strictly monotone.
    HardClip {
        threshold: f64,
    },
    /// Piecewise-linear interpolation through `(x, y)` breakpoints.
    MonotoneTable {
        breakpoints: Vec<(f64, f64)>,
    },
}

/// A validated static nonlinearity with an analytic derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearityModel {
    kind: NonlinearityKind,
    // tanh(drive), cached for the scaled-tanh kind.
    tanh_norm: f64,
}

impl NonlinearityModel {
    pub fn new(kind: NonlinearityKind) -> Result<Self> {
        let mut tanh_norm = 1.0;
        match &kind {
            NonlinearityKind::Identity => {}
            NonlinearityKind::ScaledTanh { drive } => {
                if !(*drive > 0.0 && drive.is_finite()) {
                    return Err(invalid("drive", format!("must be positive, got {drive}")));
                }
                tanh_norm = drive.tanh();
            }
            NonlinearityKind::OddPolynomial { coefficients } => {
                if coefficients.is_empty() || coefficients.iter().any(|c| !c.is_finite()) {
                    return Err(invalid(
                        "coefficients",
                        "need at least one finite coefficient",
                    ));
                }
                // Strict monotonicity on [-1, 1], checked on a dense grid.
                let probe = Self {
                    kind: kind.clone(),
                    tanh_norm,
                };
                let n = 4096;
                for i in 0..=n {
                    let x = -1.0 + 2.0 * i as f64 / n as f64;
                    if probe.derivative(x) <= 0.0 {
                        return Err(invalid(
                            "coefficients",
                            format!("polynomial is not increasing at x = {x}"),
                        ));
                    }
                }
            }
            NonlinearityKind::HardClip { threshold } => {
                if !(*threshold > 0.0 && threshold.is_finite()) {
                    return Err(invalid(
                        "threshold",
                        format!("must be positive, got {threshold}"),
                    ));
                }
            }
            NonlinearityKind::MonotoneTable { breakpoints } => {
                if breakpoints.len() < 2 {
                    return Err(invalid("breakpoints", "need at least two breakpoints"));
                }
                for w in breakpoints.windows(2) {
                    if !(w[1].0 > w[0].0 && w[1].1 > w[0].1) {
                        return Err(invalid(
                            "breakpoints",
                            "x and y must both be strictly increasing",
                        ));
                    }
                }
                let (lo, hi) = (breakpoints[0].0, breakpoints[breakpoints.len() - 1].0);
                if lo <= 0.0 && hi >= 0.0 {
                    let probe = Self {
                        kind: kind.clone(),
                        tanh_norm,
                    };
                    if probe.eval(0.0).abs() > 1e-12 {
                        return Err(invalid("breakpoints", "table must pass through the origin"));
                    }
                }
            }
        }
        Ok(Self { kind, tanh_norm })
    }

    pub fn identity() -> Self {
        Self {
            kind: NonlinearityKind::Identity,
            tanh_norm: 1.0,
        }
    }

    pub fn scaled_tanh(drive: f64) -> Result<Self> {
        Self::new(NonlinearityKind::ScaledTanh { drive })
    }

    pub fn kind(&self) -> &NonlinearityKind {
        &self.kind
    }

    /// False only for the hard clip, whose flat regions carry no noise.
    pub fn is_strictly_monotone(&self) -> bool {
        !matches!(self.kind, NonlinearityKind::HardClip { .. })
    }

    /// Admissible input interval.
    pub fn domain(&self) -> (f64, f64) {
        match &self.kind {
            NonlinearityKind::MonotoneTable { breakpoints } => {
                (breakpoints[0].0, breakpoints[breakpoints.len() - 1].0)
            }
            _ => (-1.0, 1.0),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match &self.kind {
            NonlinearityKind::Identity => x,
            NonlinearityKind::ScaledTanh { drive } => (drive * x).tanh() / self.tanh_norm,
            NonlinearityKind::OddPolynomial { coefficients } => {
                let x2 = x * x;
                // Horner in x^2, then one factor of x.
                coefficients.iter().rev().fold(0.0, |acc, c| acc * x2 + c) * x
            }
            NonlinearityKind::HardClip { threshold } => x.clamp(-threshold, *threshold),
            NonlinearityKind::MonotoneTable { breakpoints } => {
                let i = table_segment(breakpoints, x);
                let (x0, y0) = breakpoints[i];
                let (x1, y1) = breakpoints[i + 1];
                y0 + (x - x0) * (y1 - y0) / (x1 - x0)
            }
        }
    }

    /// Analytic derivative. Tables and the hard clip return the slope of the
    /// segment to the right of a breakpoint.
    pub fn derivative(&self, x: f64) -> f64 {
        match &self.kind {
            NonlinearityKind::Identity => 1.0,
            NonlinearityKind::ScaledTanh { drive } => {
                let t = (drive * x).tanh();
                drive * (1.0 - t * t) / self.tanh_norm
            }
            NonlinearityKind::OddPolynomial { coefficients } => {
                let x2 = x * x;
                coefficients
                    .iter()
                    .enumerate()
                    .rev()
                    .fold(0.0, |acc, (k, c)| acc * x2 + (2 * k + 1) as f64 * c)
            }
            NonlinearityKind::HardClip { threshold } => {
                if x >= -threshold && x < *threshold {
                    1.0
                } else {
                    0.0
                }
            }
            NonlinearityKind::MonotoneTable { breakpoints } => {
                let i = table_segment(breakpoints, x);
                let (x0, y0) = breakpoints[i];
                let (x1, y1) = breakpoints[i + 1];
                (y1 - y0) / (x1 - x0)
            }
        }
    }

    /// Inverse map, for strictly monotone kinds. Bisection for the polynomial.
    pub fn inverse(&self, y: f64) -> Option<f64> {
        match &self.kind {
            NonlinearityKind::Identity => Some(y),
            NonlinearityKind::ScaledTanh { drive } => {
                let t = y * self.tanh_norm;
                (t.abs() < 1.0).then(|| t.atanh() / drive)
            }
            NonlinearityKind::HardClip { .. } => None,
            NonlinearityKind::MonotoneTable { breakpoints } => {
                let i = breakpoints
                    .windows(2)
                    .position(|w| y <= w[1].1)
                    .unwrap_or(breakpoints.len() - 2);
                let (x0, y0) = breakpoints[i];
                let (x1, y1) = breakpoints[i + 1];
                Some(x0 + (y - y0) * (x1 - x0) / (y1 - y0))
            }
            NonlinearityKind::OddPolynomial { .. } => {
                let (mut lo, mut hi) = self.domain();
                if y < self.eval(lo) || y > self.eval(hi) {
                    return None;
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if self.eval(mid) < y {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                Some(0.5 * (lo + hi))
            }
        }
    }
}

// Index of the segment [b[i], b[i+1]) containing x; end segments extend.
fn table_segment(breakpoints: &[(f64, f64)], x: f64) -> usize {
    let last = breakpoints.len() - 2;
    breakpoints[1..=last]
        .iter()
        .position(|(bx, _)| x < *bx)
        .unwrap_or(last)
}

/// White Gaussian input noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub sigma_i: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(sigma_i: f64, seed: u64) -> Result<Self> {
        if !(sigma_i >= 0.0 && sigma_i.is_finite()) {
            return Err(invalid(
                "sigma_i",
                format!("must be non-negative, got {sigma_i}"),
            ));
        }
        Ok(Self { sigma_i, seed })
    }
}

fn check_tone(freq: f64, amplitude: f64, n: usize, fs: f64) -> Result<()> {
    if !(fs > 0.0 && fs.is_finite()) {
        return Err(invalid("fs", format!("must be positive, got {fs}")));
    }
    if !(freq > 0.0 && freq < fs / 2.0) {
        return Err(invalid(
            "freq",
            format!("must lie in (0, fs/2) = (0, {}), got {freq}", fs / 2.0),
        ));
    }
    if !(amplitude >= 0.0 && amplitude.is_finite()) {
        return Err(invalid(
            "amplitude",
            format!("must be non-negative, got {amplitude}"),
        ));
    }
    if n == 0 {
        return Err(Error::Empty("sample count is zero"));
    }
    Ok(())
}

fn cycles(freq: f64, fs: f64, k: usize) -> f64 {
    (freq * k as f64 / fs).fract()
}

/// `amplitude * sin(2π freq k / fs)` for `k` in `0..n`.
pub fn gen_sine(freq: f64, amplitude: f64, n: usize, fs: f64) -> Result<SignalFrame> {
    check_tone(freq, amplitude, n, fs)?;
    let samples = (0..n)
        .map(|k| amplitude * (std::f64::consts::TAU * cycles(freq, fs, k)).sin())
        .collect();
    Ok(SignalFrame::from_parts_unchecked(samples, fs))
}

/// Symmetric triangle wave starting at zero and rising, peaks at `±amplitude`.
pub fn gen_triangle(freq: f64, amplitude: f64, n: usize, fs: f64) -> Result<SignalFrame> {
    check_tone(freq, amplitude, n, fs)?;
    let samples = (0..n)
        .map(|k| {
            let u = cycles(freq, fs, k);
            let v = if u < 0.25 {
                4.0 * u
            } else if u < 0.75 {
                2.0 - 4.0 * u
            } else {
                4.0 * u - 4.0
            };
            amplitude * v
        })
        .collect();
    Ok(SignalFrame::from_parts_unchecked(samples, fs))
}

/// Draws `n` i.i.d. `N(0, sigma_i^2)` samples from the seeded generator.
pub fn gaussian_noise(noise: &NoiseSpec, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            noise.sigma_i * z
        })
        .collect()
}

/// `f(clean[k] + n[k])` with seeded Gaussian input noise.
///
/// Every clean sample must keep a `5 sigma_i` margin inside the model's
/// admissible domain; excursions are reported, never clamped.
pub fn distort(
    model: &NonlinearityModel,
    clean: &SignalFrame,
    noise: &NoiseSpec,
) -> Result<SignalFrame> {
    if clean.is_empty() {
        return Err(Error::Empty("clean frame"));
    }
    let (lo, hi) = model.domain();
    let margin = DOMAIN_GUARD_SIGMAS * noise.sigma_i;
    if let Some((index, &value)) = clean
        .samples()
        .iter()
        .enumerate()
        .find(|(_, &x)| x - margin < lo || x + margin > hi)
    {
        return Err(Error::OutOfDomain {
            index,
            value,
            lo,
            hi,
        });
    }
    let n = gaussian_noise(noise, clean.len());
    let samples = clean
        .samples()
        .iter()
        .zip(&n)
        .map(|(x, n)| model.eval(x + n))
        .collect();
    Ok(SignalFrame::from_parts_unchecked(
        samples,
        clean.sample_rate(),
    ))
}

/// Mid-rise quantizer mapping `[-1, 1)` onto codes `0..2^bits`, saturating
/// at both ends.
pub fn quantize(frame: &SignalFrame, bits: u32) -> Vec<u32> {
    let levels = (1u64 << bits) as f64;
    let max = (1u64 << bits) - 1;
    frame
        .samples()
        .iter()
        .map(|&y| {
            let c = ((y + 1.0) * 0.5 * levels).floor();
            c.clamp(0.0, max as f64) as u32
        })
        .collect()
}

/// Maps codes back to the centres of their full-scale intervals.
pub fn dequantize(codes: &[u32], bits: u32, sample_rate: f64) -> Result<SignalFrame> {
    let levels = (1u64 << bits) as f64;
    let samples = codes
        .iter()
        .map(|&c| (c as f64 + 0.5) / levels * 2.0 - 1.0)
        .collect();
    SignalFrame::new(samples, sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sine_quarter_rate_phases() {
        let f = gen_sine(1.0, 1.0, 4, 4.0).unwrap();
        let expected = [0.0, 1.0, 0.0, -1.0];
        for (a, b) in f.samples().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_amplitude_is_silent() {
        assert!(gen_sine(123.0, 0.0, 100, 1000.0)
            .unwrap()
            .samples()
            .iter()
            .all(|&s| s == 0.0));
        assert!(gen_triangle(123.0, 0.0, 100, 1000.0)
            .unwrap()
            .samples()
            .iter()
            .all(|&s| s == 0.0));
    }

    #[test]
    fn tone_preconditions() {
        assert!(gen_sine(0.0, 1.0, 10, 100.0).is_err());
        assert!(gen_sine(50.0, 1.0, 10, 100.0).is_err());
        assert!(gen_sine(10.0, 1.0, 0, 100.0).is_err());
        assert!(gen_triangle(60.0, 1.0, 10, 100.0).is_err());
        assert!(gen_triangle(10.0, -1.0, 10, 100.0).is_err());
    }

    #[test]
    fn sine_at_digitizer_rate() {
        let fs = 1.55e6;
        let f = gen_sine(1e3, 0.5, 1550, fs).unwrap();
        let peak = f.samples().iter().cloned().fold(f64::MIN, f64::max);
        // 1550 is even but not a multiple of 4: the crest falls half a sample off.
        let crest = 0.5 * (std::f64::consts::PI / 1550.0).cos();
        assert!((peak - crest).abs() < 1e-12, "{peak}");
        // One full period: the next sample would restart at phase zero.
        let next = 0.5 * (std::f64::consts::TAU * cycles(1e3, fs, 1550)).sin();
        assert!(next.abs() < 1e-9);
    }

    #[test]
    fn triangle_one_period() {
        let f = gen_triangle(1.0, 1.0, 1000, 1000.0).unwrap();
        let s = f.samples();
        let min = s.iter().cloned().fold(f64::MAX, f64::min);
        let max = s.iter().cloned().fold(f64::MIN, f64::max);
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        assert!((min + 1.0).abs() < 1e-12 && (max - 1.0).abs() < 1e-12);
        assert!(mean.abs() < 1e-12);
    }

    #[test]
    fn triangle_histogram_is_uniform() {
        // Incommensurate frequency so the phases fill the period evenly.
        let n = 1_000_000;
        let f = gen_triangle(std::f64::consts::E * 10.0, 1.0, n, 1.0e5).unwrap();
        let bins = 64;
        let mut counts = vec![0u64; bins];
        for &s in f.samples() {
            let b = (((s + 1.0) / 2.0) * bins as f64).floor() as usize;
            counts[b.min(bins - 1)] += 1;
        }
        // Multinomial count oracle: mean n p, std sqrt(n p (1 - p)).
        let p = 1.0 / bins as f64;
        let mean = n as f64 * p;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for (i, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - mean).abs() <= 5.0 * sd,
                "bin {i}: {c} vs {mean}"
            );
        }
    }

    #[test]
    fn model_values() {
        assert_eq!(NonlinearityModel::identity().eval(0.3), 0.3);
        assert_eq!(NonlinearityModel::scaled_tanh(1.0).unwrap().eval(0.0), 0.0);
        // tanh(1.0) = 0.7615941559557649, normalized by tanh(2).
        let m = NonlinearityModel::scaled_tanh(2.0).unwrap();
        let expected = 0.761_594_155_955_764_9 / 0.964_027_580_075_816_9;
        assert!((m.eval(0.5) - expected).abs() < 1e-12);
        assert!((m.eval(1.0) - 1.0).abs() < 1e-15);
        assert!((m.derivative(0.0) - 2.0 / 0.964_027_580_075_816_9).abs() < 1e-12);
        assert_eq!(NonlinearityModel::identity().derivative(0.7), 1.0);
    }

    #[test]
    fn invalid_models_rejected() {
        assert!(NonlinearityModel::scaled_tanh(0.0).is_err());
        assert!(NonlinearityModel::new(NonlinearityKind::OddPolynomial {
            coefficients: vec![1.0, -1.0]
        })
        .is_err());
        assert!(NonlinearityModel::new(NonlinearityKind::MonotoneTable {
            breakpoints: vec![(-1.0, -1.0), (0.0, 0.0), (0.0, 0.5), (1.0, 1.0)]
        })
        .is_err());
        assert!(NonlinearityModel::new(NonlinearityKind::MonotoneTable {
            breakpoints: vec![(-1.0, -0.5), (1.0, 1.0)]
        })
        .is_err());
        assert!(NonlinearityModel::new(NonlinearityKind::HardClip { threshold: -1.0 }).is_err());
    }

    fn builtin_models() -> Vec<NonlinearityModel> {
        vec![
            NonlinearityModel::identity(),
            NonlinearityModel::scaled_tanh(0.5).unwrap(),
            NonlinearityModel::scaled_tanh(3.0).unwrap(),
            NonlinearityModel::new(NonlinearityKind::OddPolynomial {
                coefficients: vec![1.0, -0.2, 0.05],
            })
            .unwrap(),
            NonlinearityModel::new(NonlinearityKind::MonotoneTable {
                breakpoints: vec![
                    (-1.0, -0.8),
                    (-0.3, -0.4),
                    (0.0, 0.0),
                    (0.5, 0.6),
                    (1.0, 0.9),
                ],
            })
            .unwrap(),
        ]
    }

    #[test]
    fn derivative_matches_central_differences() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = 1e-6;
        for m in builtin_models() {
            let breaks: Vec<f64> = match m.kind() {
                NonlinearityKind::MonotoneTable { breakpoints } => {
                    breakpoints.iter().map(|b| b.0).collect()
                }
                _ => vec![],
            };
            let mut checked = 0;
            while checked < 1000 {
                let x: f64 = rng.random_range(-1.0 + 2.0 * h..1.0 - 2.0 * h);
                if breaks.iter().any(|b| (x - b).abs() <= 2.0 * h) {
                    continue;
                }
                let fd = (m.eval(x + h) - m.eval(x - h)) / (2.0 * h);
                assert!(
                    (fd - m.derivative(x)).abs() <= 1e-6,
                    "{:?} at {x}",
                    m.kind()
                );
                checked += 1;
            }
        }
    }

    #[test]
    fn table_derivative_at_breakpoint_is_right_slope() {
        let m = NonlinearityModel::new(NonlinearityKind::MonotoneTable {
            breakpoints: vec![(-1.0, -2.0), (0.0, 0.0), (1.0, 0.5)],
        })
        .unwrap();
        assert_eq!(m.derivative(0.0), 0.5);
        assert_eq!(m.derivative(-0.5), 2.0);
        assert_eq!(m.derivative(1.0), 0.5);
    }

    #[test]
    fn monotone_on_random_pairs() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for m in builtin_models() {
            for _ in 0..10_000 {
                let a: f64 = rng.random_range(-1.0..1.0);
                let b: f64 = rng.random_range(-1.0..1.0);
                let (x1, x2) = if a < b { (a, b) } else { (b, a) };
                if x1 == x2 {
                    continue;
                }
                assert!(m.eval(x1) < m.eval(x2), "{:?}", m.kind());
            }
        }
        assert!(
            !NonlinearityModel::new(NonlinearityKind::HardClip { threshold: 0.5 })
                .unwrap()
                .is_strictly_monotone()
        );
    }

    #[test]
    fn inverse_round_trips() {
        for m in builtin_models() {
            for i in 0..=40 {
                let x = -0.95 + 0.0475 * i as f64;
                let back = m.inverse(m.eval(x)).unwrap();
                assert!((back - x).abs() < 1e-9, "{:?} at {x}", m.kind());
            }
        }
    }

    #[test]
    fn noiseless_identity_is_bit_exact() {
        let clean = gen_sine(10.0, 0.7, 1000, 1000.0 * 3.3).unwrap();
        let out = distort(
            &NonlinearityModel::identity(),
            &clean,
            &NoiseSpec::new(0.0, 1).unwrap(),
        )
        .unwrap();
        assert_eq!(out, clean);
    }

    #[test]
    fn noise_statistics() {
        let n = 1_000_000;
        let sigma = 0.01;
        let clean = SignalFrame::new(vec![0.25; n], 1.0).unwrap();
        let out = distort(
            &NonlinearityModel::identity(),
            &clean,
            &NoiseSpec::new(sigma, 42).unwrap(),
        )
        .unwrap();
        let diff: Vec<f64> = out.samples().iter().map(|y| y - 0.25).collect();
        let mean = diff.iter().sum::<f64>() / n as f64;
        let var = diff.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() <= 5.0 * sigma / (n as f64).sqrt());
        // Var of the sample variance of a Gaussian: 2 sigma^4 / (n - 1).
        let var_sd = (2.0 / (n - 1) as f64).sqrt() * sigma * sigma;
        assert!((var - sigma * sigma).abs() <= 5.0 * var_sd);
        assert!((var.sqrt() / sigma - 1.0).abs() < 0.01);
    }

    #[test]
    fn domain_guard() {
        let clean = gen_sine(10.0, 0.98, 1000, 1000.0).unwrap();
        let err = distort(
            &NonlinearityModel::scaled_tanh(2.0).unwrap(),
            &clean,
            &NoiseSpec::new(0.01, 1).unwrap(),
        );
        assert!(matches!(err, Err(Error::OutOfDomain { .. })));
    }

    #[test]
    fn heavy_tanh_flattens_peaks() {
        let clean = gen_sine(10.0, 0.9, 10_000, 1.0e4).unwrap();
        let out = distort(
            &NonlinearityModel::scaled_tanh(3.0).unwrap(),
            &clean,
            &NoiseSpec::new(0.0, 1).unwrap(),
        )
        .unwrap();
        // Fraction of the period spent above 90 % of the peak grows under
        // compression: for a pure sine it is about 28.7 %.
        let peak = out.samples().iter().cloned().fold(f64::MIN, f64::max);
        let near = |s: &[f64], p: f64| s.iter().filter(|&&v| v.abs() > 0.9 * p).count();
        let frac_out = near(out.samples(), peak) as f64 / out.len() as f64;
        let frac_in = near(clean.samples(), 0.9) as f64 / clean.len() as f64;
        assert!(frac_in < 0.3);
        assert!(frac_out > 0.5, "{frac_out}");
    }

    #[test]
    fn quantizer_round_trip() {
        let f = SignalFrame::new(vec![-1.0, -0.999, 0.0, 0.5, 0.9999, 1.0], 1.0).unwrap();
        let codes = quantize(&f, 10);
        assert_eq!(codes, vec![0, 0, 512, 768, 1023, 1023]);
        let back = dequantize(&codes, 10, 1.0).unwrap();
        assert!((back.samples()[2] - 1.0 / 1024.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn distort_is_deterministic(seed in any::<u64>(), sigma in 0.0f64..0.05) {
            let clean = gen_sine(37.0, 0.5, 256, 1000.0).unwrap();
            let m = NonlinearityModel::scaled_tanh(2.0).unwrap();
            let spec = NoiseSpec::new(sigma, seed).unwrap();
            let a = distort(&m, &clean, &spec).unwrap();
            let b = distort(&m, &clean, &spec).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
