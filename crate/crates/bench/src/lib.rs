//! Inputs shared by the benchmarks.

use noisegain::signal::{distort, gen_sine, quantize};
use noisegain::{NoiseSpec, NonlinearityModel, SignalFrame};

pub const FS: f64 = 1.55e6;

/// Scaled-tanh plant output for a 1 kHz, 0.9 amplitude sine.
pub fn plant_output(drive: f64, n: usize, seed: u64) -> SignalFrame {
    let clean = gen_sine(1000.0, 0.9, n, FS).expect("valid stimulus");
    let f = NonlinearityModel::scaled_tanh(drive).expect("valid drive");
    distort(
        &f,
        &clean,
        &NoiseSpec::new(0.01, seed).expect("valid noise"),
    )
    .expect("in domain")
}

pub fn plant_codes(drive: f64, n: usize, bits: u32, seed: u64) -> Vec<u32> {
    quantize(&plant_output(drive, n, seed), bits)
}
