//! Floating-point real-time compensator built on an integrated
//! piecewise-linear model.
//!
//! The derivative of the compensating function is a sum of triangular basis
//! functions ("hats") of half-width `Δ` centred on the knots
//! `y_min + kΔ`, `k = 0..=n_pieces`:
//!
//! ```text
//! g'(y) = Σ_k c[k] r(y - y_min - kΔ),   r(u) = max(0, 1 - |u| / Δ)
//! ```
//!
//! Adjacent hats form a partition of unity, so equal weights represent a
//! linear map exactly, and the integral of `g'` is a C¹ piecewise quadratic.
//! On segment `n` (with `t = y - y_min - nΔ`):
//!
//! ```text
//! g(y) = Δ Σ_{k<n} c[k] + ½Δ c[n] + t c[n] + t² (c[n+1] - c[n]) / (2Δ)
//! ```
//!
//! Polynomial and Fourier bases cost more per sample and cannot be updated
//! locally; a plain piecewise-linear map puts corners into the signal. The
//! integrated form avoids both.
//!
//! Weights track `1/σ̂_o` through a first-order IIR average, so they follow
//! the inverse derivative of the plant up to a constant. Each block's
//! observation is weighted by the hat activations at its signal level. The
//! segment table is rebuilt every `reintegrate_period` blocks and published
//! as an immutable snapshot.

use std::sync::{Arc, RwLock};

use crate::dsp::{
    butterworth2_lowpass, iir_smooth, BiquadCoeffs, BiquadState, BlockAccumulator, BlockStats,
};
use crate::error::{invalid, Result};
use crate::signal::SignalFrame;

#[derive(Debug, Clone, PartialEq)]
pub struct RbfConfig {
    pub y_min: f64,
    pub y_max: f64,
    /// Number of segments; the model carries `n_pieces + 1` knot weights.
    pub n_pieces: usize,
    /// IIR weight per unit activation.
    pub alpha: f64,
    /// Blocks between re-integrations.
    pub reintegrate_period: usize,
    pub epsilon_floor: f64,
    pub sigma_floor: f64,
    /// Smoothing weight of the running `sigma_hat` reference.
    pub sigma_ref_alpha: f64,
}

impl Default for RbfConfig {
    fn default() -> Self {
        Self {
            y_min: -1.0,
            y_max: 1.0,
            n_pieces: 256,
            alpha: 0.01,
            reintegrate_period: 1024,
            epsilon_floor: 1e-4,
            sigma_floor: 1e-6,
            sigma_ref_alpha: 1e-3,
        }
    }
}

impl RbfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.y_max > self.y_min) || !self.y_min.is_finite() || !self.y_max.is_finite() {
            return Err(invalid(
                "y_max",
                "output range must be finite with y_max > y_min",
            ));
        }
        if self.n_pieces < 2 {
            return Err(invalid(
                "n_pieces",
                format!("must be at least 2, got {}", self.n_pieces),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(invalid(
                "alpha",
                format!("must lie in (0, 1], got {}", self.alpha),
            ));
        }
        if self.reintegrate_period == 0 {
            return Err(invalid("reintegrate_period", "must be positive"));
        }
        if !(self.epsilon_floor > 0.0) {
            return Err(invalid("epsilon_floor", "must be positive"));
        }
        if !(self.sigma_floor > 0.0) {
            return Err(invalid("sigma_floor", "must be positive"));
        }
        if !(self.sigma_ref_alpha > 0.0 && self.sigma_ref_alpha <= 1.0) {
            return Err(invalid("sigma_ref_alpha", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Segment index and the two hat activations at a level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Activation {
    pub segment: usize,
    /// Activations of knots `segment` and `segment + 1`.
    pub weights: (f64, f64),
    /// Whether the level was clamped into `[y_min, y_max]`.
    pub clamped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateOutcome {
    Applied,
    /// Block level outside the model range.
    Discarded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RbfModel {
    config: RbfConfig,
    delta: f64,
    weights: Vec<f64>,
    clamped: u64,
    discarded: u64,
}

impl RbfModel {
    /// Flat weights: the identity compensator.
    pub fn new(config: RbfConfig) -> Result<Self> {
        config.validate()?;
        let delta = (config.y_max - config.y_min) / config.n_pieces as f64;
        let weights = vec![1.0; config.n_pieces + 1];
        Ok(Self {
            config,
            delta,
            weights,
            clamped: 0,
            discarded: 0,
        })
    }

    pub fn with_weights(config: RbfConfig, weights: Vec<f64>) -> Result<Self> {
        let mut m = Self::new(config)?;
        if weights.len() != m.weights.len() {
            return Err(invalid(
                "weights",
                format!(
                    "expected {} knot weights, got {}",
                    m.weights.len(),
                    weights.len()
                ),
            ));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(invalid("weights", "must be finite"));
        }
        let floor = m.config.epsilon_floor;
        m.weights = weights.into_iter().map(|w| w.max(floor)).collect();
        Ok(m)
    }

    pub fn config(&self) -> &RbfConfig {
        &self.config
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn knot(&self, k: usize) -> f64 {
        self.config.y_min + k as f64 * self.delta
    }

    /// Weight updates that hit the positivity floor.
    pub fn clamp_count(&self) -> u64 {
        self.clamped
    }

    pub fn discard_count(&self) -> u64 {
        self.discarded
    }

    pub fn basis(&self, y: f64) -> Activation {
        let RbfConfig {
            y_min,
            y_max,
            n_pieces,
            ..
        } = self.config;
        let clamped = !(y >= y_min && y <= y_max);
        let y = if y.is_nan() {
            y_min
        } else {
            y.clamp(y_min, y_max)
        };
        let segment = (((y - y_min) / self.delta) as usize).min(n_pieces - 1);
        let t = y - y_min - segment as f64 * self.delta;
        let upper = (t / self.delta).clamp(0.0, 1.0);
        Activation {
            segment,
            weights: (1.0 - upper, upper),
            clamped,
        }
    }

    /// Folds one block's noise observation into the two knots active at its
    /// level. End knots see half the excitation and learn at twice the rate.
    pub fn update_weights(&mut self, block: &BlockStats, sigma_ref: f64) -> UpdateOutcome {
        let act = self.basis(block.y_level);
        if act.clamped {
            self.discarded += 1;
            return UpdateOutcome::Discarded;
        }
        let observation = sigma_ref / block.sigma_hat.max(self.config.sigma_floor);
        let last = self.config.n_pieces;
        for (k, a) in [
            (act.segment, act.weights.0),
            (act.segment + 1, act.weights.1),
        ] {
            if a <= 0.0 {
                continue;
            }
            let boost = if k == 0 || k == last { 2.0 } else { 1.0 };
            let rate = (self.config.alpha * a * boost).min(1.0);
            let w = iir_smooth(self.weights[k], observation, rate);
            if w < self.config.epsilon_floor {
                self.clamped += 1;
                self.weights[k] = self.config.epsilon_floor;
            } else {
                self.weights[k] = w;
            }
        }
        UpdateOutcome::Applied
    }

    /// Closed-form integral of the hat expansion, one quadratic per segment,
    /// affinely rescaled so that `[y_min, y_max]` maps onto itself.
    pub fn reintegrate(&self) -> QuadSegmentTable {
        let n = self.config.n_pieces;
        let d = self.delta;
        let c = &self.weights;
        let mut raw = Vec::with_capacity(n);
        let mut passed = 0.0; // Δ Σ_{k<n} c[k]
        for seg in 0..n {
            raw.push(QuadSegment {
                a: passed + 0.5 * d * c[seg],
                b: c[seg],
                c: (c[seg + 1] - c[seg]) / (2.0 * d),
            });
            passed += d * c[seg];
        }
        QuadSegmentTable::from_raw(self.config.y_min, self.config.y_max, d, raw)
    }
}

/// `a + b t + c t²` on one segment, `t` measured from its left knot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadSegment {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl QuadSegment {
    #[inline]
    fn eval(&self, t: f64) -> f64 {
        self.a + t * (self.b + t * self.c)
    }
}

/// Precomputed piecewise-quadratic compensating function.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadSegmentTable {
    y_min: f64,
    y_max: f64,
    delta: f64,
    /// Integral from `-∞` of the hat expansion, unnormalized.
    raw: Vec<QuadSegment>,
    segments: Vec<QuadSegment>,
    scale: f64,
    raw_origin: f64,
}

impl QuadSegmentTable {
    fn from_raw(y_min: f64, y_max: f64, delta: f64, raw: Vec<QuadSegment>) -> Self {
        let raw_origin = raw[0].a;
        let raw_end = raw[raw.len() - 1].eval(delta);
        let scale = (y_max - y_min) / (raw_end - raw_origin);
        let segments = raw
            .iter()
            .map(|s| QuadSegment {
                a: y_min + scale * (s.a - raw_origin),
                b: scale * s.b,
                c: scale * s.c,
            })
            .collect();
        Self {
            y_min,
            y_max,
            delta,
            raw,
            segments,
            scale,
            raw_origin,
        }
    }

    pub fn n_segments(&self) -> usize {
        self.segments.len()
    }

    pub fn range(&self) -> (f64, f64) {
        (self.y_min, self.y_max)
    }

    pub fn segments(&self) -> &[QuadSegment] {
        &self.segments
    }

    /// Gain of the endpoint normalization.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    #[inline]
    fn locate(&self, y: f64) -> (usize, f64) {
        let y = y.clamp(self.y_min, self.y_max);
        let seg = (((y - self.y_min) / self.delta) as usize).min(self.segments.len() - 1);
        (seg, y - self.y_min - seg as f64 * self.delta)
    }

    /// Normalized compensating function; levels outside the range clamp.
    #[inline]
    pub fn compensate(&self, y: f64) -> f64 {
        if y.is_nan() {
            return self.y_min;
        }
        let (seg, t) = self.locate(y);
        self.segments[seg].eval(t)
    }

    /// Unnormalized integral of the hat expansion from `-∞` to `y`.
    pub fn raw_eval(&self, y: f64) -> f64 {
        let (seg, t) = self.locate(y);
        self.raw[seg].eval(t)
    }

    /// Derivative of the normalized function.
    pub fn slope(&self, y: f64) -> f64 {
        let (seg, t) = self.locate(y);
        let s = &self.segments[seg];
        s.b + 2.0 * s.c * t
    }

    /// Value at knot `k` (`0..=n_segments`).
    pub fn knot_value(&self, k: usize) -> f64 {
        if k == self.segments.len() {
            self.segments[k - 1].eval(self.delta)
        } else {
            self.segments[k].a
        }
    }

    pub fn raw_origin(&self) -> f64 {
        self.raw_origin
    }
}

/// Holder for the latest published table. Readers get a whole snapshot;
/// replacement swaps the pointer under a short write lock.
#[derive(Debug)]
pub struct SnapshotCell<T> {
    inner: RwLock<Arc<T>>,
}

impl<T> SnapshotCell<T> {
    pub fn new(value: Arc<T>) -> Self {
        Self {
            inner: RwLock::new(value),
        }
    }

    pub fn load(&self) -> Arc<T> {
        Arc::clone(&self.inner.read().unwrap_or_else(|e| e.into_inner()))
    }

    pub fn store(&self, value: Arc<T>) {
        *self.inner.write().unwrap_or_else(|e| e.into_inner()) = value;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RbfPipelineConfig {
    /// Low-pass cutoff; `None` selects `fs / 64`.
    pub cutoff_hz: Option<f64>,
    pub block_size: usize,
    pub block_interval: usize,
    pub model: RbfConfig,
}

impl Default for RbfPipelineConfig {
    fn default() -> Self {
        Self {
            cutoff_hz: None,
            block_size: 4,
            block_interval: 128,
            model: RbfConfig::default(),
        }
    }
}

pub const DEFAULT_CUTOFF_DIVISOR: f64 = 64.0;

/// One record per re-integration.
#[derive(Debug, Clone, PartialEq)]
pub struct RbfTelemetry {
    pub reintegration: u64,
    pub block_index: u64,
    pub sigma_ref: f64,
    pub weights: Vec<f64>,
    pub clamped: u64,
    pub discarded: u64,
}

/// Streaming compensator: filter, block statistics, weight updates,
/// periodic re-integration and per-sample evaluation.
#[derive(Debug)]
pub struct RbfPipeline {
    coeffs: BiquadCoeffs,
    filter: BiquadState,
    blocks: BlockAccumulator,
    model: RbfModel,
    sigma_ref: Option<f64>,
    since_reintegration: usize,
    reintegrations: u64,
    table: Arc<QuadSegmentTable>,
    published: Arc<SnapshotCell<QuadSegmentTable>>,
    settle_samples: u64,
    sample_rate: f64,
    telemetry: Vec<RbfTelemetry>,
}

impl RbfPipeline {
    pub fn new(config: &RbfPipelineConfig, sample_rate: f64) -> Result<Self> {
        let cutoff = config
            .cutoff_hz
            .unwrap_or(sample_rate / DEFAULT_CUTOFF_DIVISOR);
        let coeffs = butterworth2_lowpass(cutoff, sample_rate)?;
        let blocks = BlockAccumulator::new(config.block_size, config.block_interval)?;
        let model = RbfModel::new(config.model.clone())?;
        let table = Arc::new(model.reintegrate());
        // Blocks inside the filter's start-up transient are ignored.
        let settle_samples = (10.0 * sample_rate / cutoff).ceil() as u64;
        Ok(Self {
            coeffs,
            filter: BiquadState::default(),
            blocks,
            model,
            sigma_ref: None,
            since_reintegration: 0,
            reintegrations: 0,
            published: Arc::new(SnapshotCell::new(Arc::clone(&table))),
            table,
            settle_samples,
            sample_rate,
            telemetry: Vec::new(),
        })
    }

    pub fn model(&self) -> &RbfModel {
        &self.model
    }

    pub fn table(&self) -> &Arc<QuadSegmentTable> {
        &self.table
    }

    /// Shared handle through which other threads can read the latest table.
    pub fn table_handle(&self) -> Arc<SnapshotCell<QuadSegmentTable>> {
        Arc::clone(&self.published)
    }

    pub fn sigma_ref(&self) -> Option<f64> {
        self.sigma_ref
    }

    pub fn telemetry(&self) -> &[RbfTelemetry] {
        &self.telemetry
    }

    pub fn take_telemetry(&mut self) -> Vec<RbfTelemetry> {
        std::mem::take(&mut self.telemetry)
    }

    pub fn process(&mut self, frame: &SignalFrame) -> SignalFrame {
        let out = frame
            .samples()
            .iter()
            .map(|&y| self.process_sample(y))
            .collect();
        SignalFrame::from_parts_unchecked(out, frame.sample_rate())
    }

    #[inline]
    pub fn process_sample(&mut self, y: f64) -> f64 {
        let signal = self.filter.step(&self.coeffs, y);
        let out = self.table.compensate(y);
        if let Some(block) = self.blocks.push(signal, y - signal) {
            self.on_block(&block);
        }
        out
    }

    fn on_block(&mut self, block: &BlockStats) {
        if block.start < self.settle_samples {
            return;
        }
        if block.sigma_hat.is_finite() && block.y_level.is_finite() {
            self.learn(block);
        }
        self.since_reintegration += 1;
        if self.since_reintegration >= self.model.config.reintegrate_period {
            self.since_reintegration = 0;
            self.reintegrate(block.block_index);
        }
    }

    fn learn(&mut self, block: &BlockStats) {
        let cfg = &self.model.config;
        let in_range = block.y_level >= cfg.y_min && block.y_level <= cfg.y_max;
        let sigma_ref = match self.sigma_ref {
            Some(s) => s,
            None if in_range && block.sigma_hat > cfg.sigma_floor => block.sigma_hat,
            None => return,
        };
        let alpha = cfg.sigma_ref_alpha;
        if self.model.update_weights(block, sigma_ref) == UpdateOutcome::Applied {
            self.sigma_ref = Some(iir_smooth(sigma_ref, block.sigma_hat, alpha));
        }
    }

    fn reintegrate(&mut self, block_index: u64) {
        self.reintegrations += 1;
        self.table = Arc::new(self.model.reintegrate());
        self.published.store(Arc::clone(&self.table));
        self.telemetry.push(RbfTelemetry {
            reintegration: self.reintegrations,
            block_index,
            sigma_ref: self.sigma_ref.unwrap_or(0.0),
            weights: self.model.weights.clone(),
            clamped: self.model.clamped,
            discarded: self.model.discarded,
        });
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }
}

/// Runs the pipeline over one frame from a fresh state.
pub fn run_pipeline(
    input: &SignalFrame,
    config: &RbfPipelineConfig,
) -> Result<(SignalFrame, Vec<RbfTelemetry>, RbfModel)> {
    let mut p = RbfPipeline::new(config, input.sample_rate())?;
    let out = p.process(input);
    let telemetry = p.take_telemetry();
    Ok((out, telemetry, p.model))
}
