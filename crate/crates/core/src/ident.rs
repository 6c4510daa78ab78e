//! Batch identification from recorded output.
//!
//! Under a small-noise linearization the output noise of a static system at
//! level `y` is `σ_o(y) = f'(f⁻¹(y)) σ_i`, so the inverse map follows by
//! integrating `σ_i / σ_o` over the output levels the signal visited. This
//! module builds that noise profile from block statistics and integrates it,
//! and also provides the classical histogram-test metrology (DNL/INL) for
//! comparison.
//!
//! `f` is assumed increasing. A decreasing plant is handled by negating the
//! signal before identification.

use crate::dsp::BlockStats;
use crate::error::{invalid, Error, Result};

/// Minimum number of blocks for a profile bin to be trusted.
pub const DEFAULT_MIN_COUNT: usize = 8;

/// Output-noise spread as a function of output level.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaProfile {
    pub y_min: f64,
    pub y_max: f64,
    pub y_centers: Vec<f64>,
    /// RMS of the block `sigma_hat` values assigned to each bin.
    pub sigma_o: Vec<f64>,
    pub counts: Vec<usize>,
    pub min_count: usize,
    /// Blocks whose level fell outside `[y_min, y_max]`.
    pub dropped: usize,
}

impl SigmaProfile {
    pub fn n_bins(&self) -> usize {
        self.y_centers.len()
    }

    pub fn is_valid(&self, bin: usize) -> bool {
        self.counts[bin] >= self.min_count
    }

    pub fn bin_width(&self) -> f64 {
        (self.y_max - self.y_min) / self.n_bins() as f64
    }
}

/// Bins block statistics by signal level.
///
/// Variances average linearly, so each bin reports the root-mean-square of
/// its blocks' `sigma_hat`.
pub fn estimate_sigma_profile(
    blocks: &[BlockStats],
    y_min: f64,
    y_max: f64,
    n_bins: usize,
    min_count: usize,
) -> Result<SigmaProfile> {
    if blocks.is_empty() {
        return Err(Error::Empty("block sequence"));
    }
    if n_bins < 2 {
        return Err(invalid(
            "n_bins",
            format!("must be at least 2, got {n_bins}"),
        ));
    }
    if !(y_max > y_min) {
        return Err(invalid("y_max", "must exceed y_min"));
    }
    let width = (y_max - y_min) / n_bins as f64;
    let mut sum_sq = vec![0.0; n_bins];
    let mut counts = vec![0usize; n_bins];
    let mut dropped = 0;
    for b in blocks {
        if !(b.y_level >= y_min && b.y_level <= y_max) {
            dropped += 1;
            continue;
        }
        let bin = (((b.y_level - y_min) / width) as usize).min(n_bins - 1);
        sum_sq[bin] += b.sigma_hat * b.sigma_hat;
        counts[bin] += 1;
    }
    let sigma_o = sum_sq
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { (s / c as f64).sqrt() } else { 0.0 })
        .collect();
    let y_centers = (0..n_bins)
        .map(|i| y_min + (i as f64 + 0.5) * width)
        .collect();
    Ok(SigmaProfile {
        y_min,
        y_max,
        y_centers,
        sigma_o,
        counts,
        min_count,
        dropped,
    })
}

/// Which member of the affine class an inverse table was pinned to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Normalization {
    /// Absolute scale from a known input noise level; `g` is zero at the
    /// first grid point.
    KnownSigma { sigma_i: f64 },
    /// `g(y_first) = y_first`, `g(y_last) = y_last`.
    Endpoints,
}

/// Sampled compensating function over the excited output range.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseTable {
    pub y_grid: Vec<f64>,
    pub g_values: Vec<f64>,
    pub normalization: Normalization,
    /// Index of the first profile bin used.
    pub first_bin: usize,
}

impl InverseTable {
    /// Piecewise-linear interpolation, clamped to the end values.
    pub fn eval(&self, y: f64) -> f64 {
        let g = &self.y_grid;
        let n = g.len();
        if y <= g[0] {
            return self.g_values[0];
        }
        if y >= g[n - 1] {
            return self.g_values[n - 1];
        }
        let i = g.partition_point(|&v| v <= y) - 1;
        let t = (y - g[i]) / (g[i + 1] - g[i]);
        self.g_values[i] + t * (self.g_values[i + 1] - self.g_values[i])
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.y_grid[0], self.y_grid[self.y_grid.len() - 1])
    }
}

/// Numerical inversion by cumulative trapezoidal integration of
/// `σ_i / σ_o(y)` over the contiguous run of valid bins.
///
/// With `sigma_i = None` the table is pinned to the endpoint convention.
pub fn integrate_inverse(profile: &SigmaProfile, sigma_i: Option<f64>) -> Result<InverseTable> {
    let valid: Vec<usize> = (0..profile.n_bins())
        .filter(|&i| profile.is_valid(i))
        .collect();
    let (&first, &last) = match (valid.first(), valid.last()) {
        (Some(f), Some(l)) if l > f => (f, l),
        _ => return Err(Error::Empty("fewer than two valid profile bins")),
    };
    if let Some(gap) = (first..=last).find(|&i| !profile.is_valid(i)) {
        return Err(Error::NonContiguous { bin: gap });
    }
    if let Some(bin) = (first..=last).find(|&i| !(profile.sigma_o[i] > 0.0)) {
        return Err(Error::UnexcitedBin { bin });
    }
    if let Some(s) = sigma_i {
        if !(s > 0.0 && s.is_finite()) {
            return Err(invalid("sigma_i", format!("must be positive, got {s}")));
        }
    }
    let scale = sigma_i.unwrap_or(1.0);
    let h = profile.bin_width();
    let y_grid: Vec<f64> = profile.y_centers[first..=last].to_vec();
    let mut g_values = Vec::with_capacity(y_grid.len());
    let mut acc = 0.0;
    g_values.push(0.0);
    for i in first..last {
        let a = scale / profile.sigma_o[i];
        let b = scale / profile.sigma_o[i + 1];
        acc += 0.5 * h * (a + b);
        g_values.push(acc);
    }
    let normalization = match sigma_i {
        Some(sigma_i) => Normalization::KnownSigma { sigma_i },
        None => {
            let (y0, y1) = (y_grid[0], y_grid[y_grid.len() - 1]);
            let k = (y1 - y0) / acc;
            for v in g_values.iter_mut() {
                *v = y0 + k * *v;
            }
            // Pin the far end exactly.
            *g_values.last_mut().unwrap() = y1;
            Normalization::Endpoints
        }
    };
    Ok(InverseTable {
        y_grid,
        g_values,
        normalization,
        first_bin: first,
    })
}

/// Amplitude distribution of the histogram-test stimulus, in code units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stimulus {
    Uniform,
    /// Sine of the given amplitude and offset. Only the arcsine shape enters
    /// the mean-referenced widths, so both parameters are informational.
    Sine {
        amplitude: f64,
        offset: f64,
    },
}

/// Histogram-test result over the codes between the saturated end codes.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearityReport {
    /// Code that `dnl[0]` and `inl[0]` refer to.
    pub first_code: usize,
    pub dnl: Vec<f64>,
    pub inl: Vec<f64>,
    pub code_histogram: Vec<u64>,
}

impl LinearityReport {
    pub fn from_histogram(code_histogram: Vec<u64>, stimulus: Stimulus) -> Result<Self> {
        let (first_code, dnl) = compute_dnl(&code_histogram, stimulus)?;
        let inl = compute_inl(&dnl);
        Ok(Self {
            first_code,
            dnl,
            inl,
            code_histogram,
        })
    }

    pub fn last_code(&self) -> usize {
        self.first_code + self.dnl.len() - 1
    }
}

pub fn code_histogram(codes: &[u32], n_codes: usize) -> Vec<u64> {
    let mut h = vec![0u64; n_codes];
    for &c in codes {
        if let Some(slot) = h.get_mut(c as usize) {
            *slot += 1;
        }
    }
    h
}

/// Differential nonlinearity in LSB, referenced to the mean code width.
///
/// The first and last occupied codes absorb everything beyond the converter
/// range, so they are excluded. Returns the first included code and one DNL
/// value per included code.
pub fn compute_dnl(histogram: &[u64], stimulus: Stimulus) -> Result<(usize, Vec<f64>)> {
    let lo = histogram.iter().position(|&c| c > 0);
    let hi = histogram.iter().rposition(|&c| c > 0);
    let (lo, hi) = match (lo, hi) {
        (Some(lo), Some(hi)) if hi >= lo + 3 => (lo, hi),
        _ => {
            return Err(Error::Empty(
                "histogram needs at least two codes between its end codes",
            ))
        }
    };
    let first = lo + 1;
    let last = hi - 1;
    let widths: Vec<f64> = match stimulus {
        Stimulus::Uniform => histogram[first..=last].iter().map(|&c| c as f64).collect(),
        Stimulus::Sine { .. } => {
            // Transition levels from the cumulative histogram under the
            // arcsine law: T_k = -cos(π CH_{k-1} / N).
            let total: u64 = histogram.iter().sum();
            let n = total as f64;
            let mut cum: u64 = histogram[..first].iter().sum();
            let mut lower = -(std::f64::consts::PI * cum as f64 / n).cos();
            histogram[first..=last]
                .iter()
                .map(|&c| {
                    cum += c;
                    let upper = -(std::f64::consts::PI * cum as f64 / n).cos();
                    let w = upper - lower;
                    lower = upper;
                    w
                })
                .collect()
        }
    };
    let mean = widths.iter().sum::<f64>() / widths.len() as f64;
    if !(mean > 0.0) {
        return Err(Error::Numeric("mean code width is zero".into()));
    }
    let mut dnl: Vec<f64> = widths.iter().map(|w| w / mean - 1.0).collect();
    // Remove the rounding residue so the sum is zero to machine precision.
    let residue = dnl.iter().sum::<f64>() / dnl.len() as f64;
    dnl.iter_mut().for_each(|d| *d -= residue);
    Ok((first, dnl))
}

/// Integral nonlinearity: lower-transition deviation of each code, in LSB,
/// relative to the straight line through the first and last codes.
pub fn compute_inl(dnl: &[f64]) -> Vec<f64> {
    let n = dnl.len();
    if n == 0 {
        return Vec::new();
    }
    let mut raw = Vec::with_capacity(n);
    let mut acc = 0.0;
    for d in dnl {
        raw.push(acc);
        acc += d;
    }
    if n == 1 {
        return raw;
    }
    let end = raw[n - 1];
    let span = (n - 1) as f64;
    raw.iter()
        .enumerate()
        .map(|(k, v)| v - end * (k as f64 / span))
        .collect()
}
