//! Streaming filter and statistics primitives shared by the compensators.

use crate::error::{invalid, Error, Result};
use crate::signal::SignalFrame;

/// Second-order section, `a0` normalized to one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiquadCoeffs {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl BiquadCoeffs {
    /// Gain at DC, `(b0 + b1 + b2) / (1 + a1 + a2)`.
    pub fn dc_gain(&self) -> f64 {
        (self.b0 + self.b1 + self.b2) / (1.0 + self.a1 + self.a2)
    }

    /// `|H(e^{jω})|` at normalized angular frequency `omega`.
    pub fn magnitude(&self, omega: f64) -> f64 {
        let (c1, s1) = (omega.cos(), -omega.sin());
        let (c2, s2) = ((2.0 * omega).cos(), -(2.0 * omega).sin());
        let num = (
            self.b0 + self.b1 * c1 + self.b2 * c2,
            self.b1 * s1 + self.b2 * s2,
        );
        let den = (
            1.0 + self.a1 * c1 + self.a2 * c2,
            self.a1 * s1 + self.a2 * s2,
        );
        (num.0.hypot(num.1)) / (den.0.hypot(den.1))
    }

    /// Largest pole modulus of `z^2 + a1 z + a2`.
    pub fn pole_radius(&self) -> f64 {
        let disc = self.a1 * self.a1 - 4.0 * self.a2;
        if disc >= 0.0 {
            let r = disc.sqrt();
            ((-self.a1 + r) / 2.0)
                .abs()
                .max(((-self.a1 - r) / 2.0).abs())
        } else {
            // Complex pair: |z|^2 = a2.
            self.a2.sqrt()
        }
    }
}

/// Delay registers of a transposed direct-form-II section.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BiquadState {
    s1: f64,
    s2: f64,
}

impl BiquadState {
    pub fn is_finite(&self) -> bool {
        self.s1.is_finite() && self.s2.is_finite()
    }

    #[inline]
    pub fn step(&mut self, c: &BiquadCoeffs, x: f64) -> f64 {
        let y = c.b0 * x + self.s1;
        self.s1 = c.b1 * x - c.a1 * y + self.s2;
        self.s2 = c.b2 * x - c.a2 * y;
        y
    }
}

/// Bilinear-transform second-order Butterworth low-pass with the cutoff
/// prewarped, so that the analog -3 dB point lands exactly on `fc`.
pub fn butterworth2_lowpass(fc: f64, fs: f64) -> Result<BiquadCoeffs> {
    if !(fs > 0.0 && fs.is_finite()) {
        return Err(invalid("fs", format!("must be positive, got {fs}")));
    }
    if !(fc > 0.0 && fc < fs / 2.0) {
        return Err(invalid(
            "cutoff",
            format!("must lie in (0, fs/2), got {fc}"),
        ));
    }
    let k = (std::f64::consts::PI * fc / fs).tan();
    let k2 = k * k;
    let sqrt2 = std::f64::consts::SQRT_2;
    let norm = 1.0 / (1.0 + sqrt2 * k + k2);
    let b0 = k2 * norm;
    Ok(BiquadCoeffs {
        b0,
        b1: 2.0 * b0,
        b2: b0,
        a1: 2.0 * (k2 - 1.0) * norm,
        a2: (1.0 - sqrt2 * k + k2) * norm,
    })
}

pub fn biquad_process(
    coeffs: &BiquadCoeffs,
    mut state: BiquadState,
    frame: &SignalFrame,
) -> (SignalFrame, BiquadState) {
    let out = frame
        .samples()
        .iter()
        .map(|&x| state.step(coeffs, x))
        .collect();
    (
        SignalFrame::from_parts_unchecked(out, frame.sample_rate()),
        state,
    )
}

/// Low-pass signal path and its exact complement.
///
/// `noise[k] = frame[k] - signal[k]`; no delay alignment is applied.
pub fn split_signal_noise(
    frame: &SignalFrame,
    coeffs: &BiquadCoeffs,
    state: BiquadState,
) -> (SignalFrame, SignalFrame, BiquadState) {
    let (signal, state) = biquad_process(coeffs, state, frame);
    let noise = frame
        .samples()
        .iter()
        .zip(signal.samples())
        .map(|(x, s)| x - s)
        .collect();
    (
        signal,
        SignalFrame::from_parts_unchecked(noise, frame.sample_rate()),
        state,
    )
}

/// Local signal level and noise spread over one block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockStats {
    pub block_index: u64,
    /// Index of the block's first sample in the stream.
    pub start: u64,
    pub y_level: f64,
    pub sigma_hat: f64,
    pub n_samples: usize,
}

/// Cuts a stream into blocks of `block_size` samples every `block_interval`
/// samples. Carries its position, so frame boundaries are invisible.
#[derive(Debug, Clone)]
pub struct BlockAccumulator {
    block_size: usize,
    block_interval: usize,
    position: u64,
    next_index: u64,
    signal_sum: f64,
    noise: Vec<f64>,
}

impl BlockAccumulator {
    pub fn new(block_size: usize, block_interval: usize) -> Result<Self> {
        if block_size < 2 {
            return Err(invalid(
                "block_size",
                format!("must be at least 2, got {block_size}"),
            ));
        }
        if block_interval < block_size {
            return Err(invalid(
                "block_interval",
                format!("must be at least block_size ({block_size}), got {block_interval}"),
            ));
        }
        Ok(Self {
            block_size,
            block_interval,
            position: 0,
            next_index: 0,
            signal_sum: 0.0,
            noise: Vec::with_capacity(block_size),
        })
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    /// Feeds one `(signal, noise)` sample pair; returns the statistics of a
    /// block when its last sample arrives.
    #[inline]
    pub fn push(&mut self, signal: f64, noise: f64) -> Option<BlockStats> {
        let phase = (self.position % self.block_interval as u64) as usize;
        self.position += 1;
        if phase >= self.block_size {
            return None;
        }
        self.signal_sum += signal;
        self.noise.push(noise);
        if self.noise.len() < self.block_size {
            return None;
        }
        let n = self.block_size as f64;
        let mean = self.noise.iter().sum::<f64>() / n;
        let ss: f64 = self.noise.iter().map(|v| (v - mean) * (v - mean)).sum();
        let stats = BlockStats {
            block_index: self.next_index,
            start: self.position - self.block_size as u64,
            y_level: self.signal_sum / n,
            sigma_hat: (ss / (n - 1.0)).sqrt(),
            n_samples: self.block_size,
        };
        self.next_index += 1;
        self.signal_sum = 0.0;
        self.noise.clear();
        Some(stats)
    }
}

/// Batch block statistics; trailing partial blocks are dropped.
pub fn block_stats(
    signal: &SignalFrame,
    noise: &SignalFrame,
    block_size: usize,
    block_interval: usize,
) -> Result<Vec<BlockStats>> {
    if signal.len() != noise.len() {
        return Err(Error::LengthMismatch {
            left: signal.len(),
            right: noise.len(),
        });
    }
    let mut acc = BlockAccumulator::new(block_size, block_interval)?;
    Ok(signal
        .samples()
        .iter()
        .zip(noise.samples())
        .filter_map(|(&s, &n)| acc.push(s, n))
        .collect())
}

/// First-order IIR average: `(1 - alpha) previous + alpha observation`.
#[inline]
pub fn iir_smooth(previous: f64, observation: f64, alpha: f64) -> f64 {
    debug_assert!(alpha > 0.0 && alpha <= 1.0);
    (1.0 - alpha) * previous + alpha * observation
}
