use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use noisegain::dsp::{block_stats, split_signal_noise};
use noisegain::ident::code_histogram;
use noisegain::signal::{distort, gen_sine, gen_triangle, quantize};
use noisegain::{
    butterworth2_lowpass, estimate_sigma_profile, integrate_inverse, run_pipeline,
    run_pipeline_fixed, thd, BiquadState, InverseTable, LinearityReport, NoiseSpec, PwlTelemetry,
    RbfTelemetry, SigmaProfile, SignalFrame, Stimulus,
};
use rand::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;

use crate::config::{ExperimentConfig, NonlinearityName, PipelineKind, StimulusKind};
use crate::error::{CliError, Result};
use crate::io::{fmt_f64, read_stream, write_codes, write_signal, CsvWriter, Stream};

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(CliError::io(dir))
}

/// Clean stimulus and plant output for one run.
pub fn synthesize(cfg: &ExperimentConfig) -> Result<(SignalFrame, SignalFrame)> {
    let s = &cfg.stimulus;
    let fs = cfg.sample_rate_hz;
    let clean = match s.kind {
        StimulusKind::Sine => gen_sine(s.freq_hz, s.amplitude, cfg.duration, fs)?,
        StimulusKind::Triangle => gen_triangle(s.freq_hz, s.amplitude, cfg.duration, fs)?,
    };
    let plant = cfg.nonlinearity.model()?;
    let noise = NoiseSpec::new(cfg.noise.sigma_i, cfg.noise.seed)?;
    let y = distort(&plant, &clean, &noise)?;
    Ok((clean, y))
}

/// The stream a pipeline expects as input: codes for pwl, samples otherwise.
pub fn plant_stream(cfg: &ExperimentConfig, y: SignalFrame) -> Stream {
    match cfg.pipeline.kind {
        PipelineKind::Pwl => Stream::Codes {
            bits: cfg.pwl.input_bits,
            sample_rate: y.sample_rate(),
            codes: quantize(&y, cfg.pwl.input_bits),
        },
        _ => Stream::Float(y),
    }
}

pub fn simulate(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    ensure_dir(out_dir)?;
    let (clean, y) = synthesize(cfg)?;
    let mut written = vec![
        write_signal(&out_dir.join("clean.csv"), "x", &clean)?,
        write_signal(&out_dir.join("distorted.csv"), "y", &y)?,
    ];
    if cfg.pipeline.kind == PipelineKind::Pwl {
        if let Stream::Codes {
            bits,
            sample_rate,
            codes,
        } = plant_stream(cfg, y)
        {
            written.push(write_codes(
                &out_dir.join("distorted_codes.csv"),
                bits,
                sample_rate,
                &codes,
            )?);
        }
    }
    Ok(written)
}

/// Batch noise-gain identification of a recorded stream.
pub fn identify_table(
    cfg: &ExperimentConfig,
    frame: &SignalFrame,
) -> Result<(SigmaProfile, InverseTable)> {
    let o = &cfg.offline;
    let fs = frame.sample_rate();
    let coeffs = butterworth2_lowpass(o.cutoff(fs), fs)?;
    let (signal, noise, _) = split_signal_noise(frame, &coeffs, BiquadState::default());
    let blocks: Vec<_> = block_stats(&signal, &noise, o.block_size, o.block_interval)?
        .into_iter()
        .filter(|b| b.start >= o.settle as u64)
        .collect();
    let profile = estimate_sigma_profile(&blocks, o.y_min, o.y_max, o.n_bins, o.min_count)?;
    let sigma = o.known_sigma.then_some(cfg.noise.sigma_i);
    let table = integrate_inverse(&profile, sigma)?;
    Ok((profile, table))
}

pub fn identify(cfg: &ExperimentConfig, input: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let stream = read_stream(input)?;
    let frame = stream.to_frame()?;
    let (profile, table) = identify_table(cfg, &frame)?;

    let (codes, n_codes) = match &stream {
        Stream::Codes { bits, codes, .. } => (codes.clone(), 1usize << bits),
        Stream::Float(f) => (
            quantize(f, cfg.offline.dnl_bits),
            1usize << cfg.offline.dnl_bits,
        ),
    };
    let stimulus = match cfg.stimulus.kind {
        StimulusKind::Sine => Stimulus::Sine {
            amplitude: cfg.stimulus.amplitude,
            offset: 0.0,
        },
        StimulusKind::Triangle => Stimulus::Uniform,
    };
    let report = LinearityReport::from_histogram(code_histogram(&codes, n_codes), stimulus)?;

    ensure_dir(out_dir)?;
    let mut w = CsvWriter::create(&out_dir.join("sigma_profile.csv"))?;
    w.row(["bin", "y_center", "sigma_o", "count", "valid"])?;
    for i in 0..profile.n_bins() {
        w.row([
            i.to_string(),
            fmt_f64(profile.y_centers[i]),
            fmt_f64(profile.sigma_o[i]),
            profile.counts[i].to_string(),
            u8::from(profile.is_valid(i)).to_string(),
        ])?;
    }
    let p1 = w.finish()?;

    let mut w = CsvWriter::create(&out_dir.join("inverse_table.csv"))?;
    w.row(["bin", "y", "g"])?;
    for (i, (y, g)) in table.y_grid.iter().zip(&table.g_values).enumerate() {
        w.row([(table.first_bin + i).to_string(), fmt_f64(*y), fmt_f64(*g)])?;
    }
    let p2 = w.finish()?;

    let mut w = CsvWriter::create(&out_dir.join("linearity.csv"))?;
    w.row(["code", "count", "dnl", "inl"])?;
    for (i, (d, l)) in report.dnl.iter().zip(&report.inl).enumerate() {
        let code = report.first_code + i;
        w.row([
            code.to_string(),
            report.code_histogram[code].to_string(),
            fmt_f64(*d),
            fmt_f64(*l),
        ])?;
    }
    let p3 = w.finish()?;
    Ok(vec![p1, p2, p3])
}

/// Output of one compensator run.
pub enum Compensated {
    Rbf {
        output: SignalFrame,
        telemetry: Vec<RbfTelemetry>,
    },
    Pwl {
        bits: u32,
        sample_rate: f64,
        codes: Vec<u32>,
        telemetry: Vec<PwlTelemetry>,
    },
    Offline {
        output: SignalFrame,
    },
}

impl Compensated {
    pub fn to_frame(&self) -> noisegain::Result<SignalFrame> {
        match self {
            Compensated::Rbf { output, .. } | Compensated::Offline { output } => Ok(output.clone()),
            Compensated::Pwl {
                bits,
                sample_rate,
                codes,
                ..
            } => noisegain::signal::dequantize(codes, *bits, *sample_rate),
        }
    }
}

pub fn compensate_stream(cfg: &ExperimentConfig, stream: &Stream) -> Result<Compensated> {
    match cfg.pipeline.kind {
        PipelineKind::Rbf => {
            let (output, telemetry, _) =
                run_pipeline(&stream.to_frame()?, &cfg.rbf.pipeline_config())?;
            Ok(Compensated::Rbf { output, telemetry })
        }
        PipelineKind::Offline => {
            let frame = stream.to_frame()?;
            let (_, table) = identify_table(cfg, &frame)?;
            let z = frame.samples().iter().map(|&y| table.eval(y)).collect();
            Ok(Compensated::Offline {
                output: SignalFrame::new(z, frame.sample_rate())?,
            })
        }
        PipelineKind::Pwl => {
            let Stream::Codes {
                bits,
                sample_rate,
                codes,
            } = stream
            else {
                return Err(CliError::invalid(
                    "the pwl pipeline accepts integer-code streams only (a `# bits=` file)",
                ));
            };
            let pc = cfg.pwl.config();
            if *bits != pc.input_bits {
                return Err(CliError::invalid(format!(
                    "input has {bits}-bit codes but pwl.input_bits is {}",
                    pc.input_bits
                )));
            }
            let (codes, telemetry, _) = run_pipeline_fixed(codes, &pc)?;
            Ok(Compensated::Pwl {
                bits: pc.output_bits,
                sample_rate: *sample_rate,
                codes,
                telemetry,
            })
        }
    }
}

pub fn compensate(cfg: &ExperimentConfig, input: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let stream = read_stream(input)?;
    let result = compensate_stream(cfg, &stream)?;
    ensure_dir(out_dir)?;
    let mut written = Vec::new();
    match &result {
        Compensated::Rbf { output, telemetry } => {
            written.push(write_signal(&out_dir.join("compensated.csv"), "z", output)?);
            let mut w = CsvWriter::create(&out_dir.join("telemetry.csv"))?;
            let n = cfg.rbf.n_pieces + 1;
            let mut head: Vec<String> = [
                "reintegration",
                "block_index",
                "sigma_ref",
                "clamped",
                "discarded",
            ]
            .map(String::from)
            .to_vec();
            head.extend((0..n).map(|k| format!("w{k}")));
            w.row(&head)?;
            for t in telemetry {
                let mut row = vec![
                    t.reintegration.to_string(),
                    t.block_index.to_string(),
                    fmt_f64(t.sigma_ref),
                    t.clamped.to_string(),
                    t.discarded.to_string(),
                ];
                row.extend(t.weights.iter().map(|&v| fmt_f64(v)));
                w.row(&row)?;
            }
            written.push(w.finish()?);
        }
        Compensated::Pwl {
            bits,
            sample_rate,
            codes,
            telemetry,
        } => {
            written.push(write_codes(
                &out_dir.join("compensated_codes.csv"),
                *bits,
                *sample_rate,
                codes,
            )?);
            let mut w = CsvWriter::create(&out_dir.join("telemetry.csv"))?;
            let mut head: Vec<String> = [
                "block_index",
                "ref_var",
                "unchanged",
                "narrowed",
                "widened",
                "saturated",
                "clamped_codes",
            ]
            .map(String::from)
            .to_vec();
            head.extend((0..cfg.pwl.n_ranges).map(|k| format!("s{k}")));
            w.row(&head)?;
            for t in telemetry {
                let c = t.counters;
                let mut row: Vec<String> = [
                    t.block_index,
                    t.ref_var,
                    c.unchanged,
                    c.narrowed,
                    c.widened,
                    c.saturated,
                    t.clamped_codes,
                ]
                .iter()
                .map(u64::to_string)
                .collect();
                row.extend(t.spans.iter().map(u32::to_string));
                w.row(&row)?;
            }
            written.push(w.finish()?);
        }
        Compensated::Offline { output } => {
            written.push(write_signal(&out_dir.join("compensated.csv"), "z", output)?);
        }
    }
    Ok(written)
}

/// One grid point of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    /// `None` for plants without a drive parameter.
    pub drive: Option<f64>,
    pub freq_hz: f64,
    pub block_size: usize,
    pub seed: u64,
    pub outcome: std::result::Result<(f64, f64), String>,
}

impl SweepRow {
    fn fields(&self) -> Vec<String> {
        let mut f = vec![
            self.drive.map(fmt_f64).unwrap_or_default(),
            fmt_f64(self.freq_hz),
            self.block_size.to_string(),
            self.seed.to_string(),
        ];
        match &self.outcome {
            // Improvement is positive when distortion drops.
            Ok((a, b)) => {
                f.extend([fmt_f64(*a), fmt_f64(*b), fmt_f64(a - b), String::new()]);
            }
            Err(e) => {
                f.extend([String::new(), String::new(), String::new()]);
                f.push(e.replace([',', '\n'], ";"));
            }
        }
        f
    }
}

fn block_size_of(cfg: &ExperimentConfig) -> usize {
    match cfg.pipeline.kind {
        PipelineKind::Rbf => cfg.rbf.block_size,
        PipelineKind::Pwl => cfg.pwl.config().block_size(),
        PipelineKind::Offline => cfg.offline.block_size,
    }
}

fn set_block_size(cfg: &mut ExperimentConfig, b: usize) {
    match cfg.pipeline.kind {
        PipelineKind::Rbf => cfg.rbf.block_size = b,
        PipelineKind::Pwl => cfg.pwl.block_log2 = b.trailing_zeros(),
        PipelineKind::Offline => cfg.offline.block_size = b,
    }
}

/// Input and output THD of one full run, in dB.
pub fn thd_point(cfg: &ExperimentConfig) -> Result<(f64, f64)> {
    let (_, y) = synthesize(cfg)?;
    let stream = plant_stream(cfg, y);
    let out = compensate_stream(cfg, &stream)?;
    let m = cfg.sweep.analysis_samples;
    let (f0, h) = (cfg.stimulus.freq_hz, cfg.sweep.harmonics);
    let before = thd(&stream.to_frame()?.tail(m), f0, h)?;
    let after = thd(&out.to_frame()?.tail(m), f0, h)?;
    Ok((before.thd_db, after.thd_db))
}

/// Grid points in row order, one config per point.
pub fn sweep_points(cfg: &ExperimentConfig) -> Vec<ExperimentConfig> {
    let drives = cfg
        .sweep
        .drives
        .clone()
        .unwrap_or_else(|| vec![cfg.nonlinearity.drive]);
    let freqs = cfg
        .sweep
        .freqs_hz
        .clone()
        .unwrap_or_else(|| vec![cfg.stimulus.freq_hz]);
    let blocks = cfg
        .sweep
        .block_sizes
        .clone()
        .unwrap_or_else(|| vec![block_size_of(cfg)]);
    let mut seeds = SplitMix64::seed_from_u64(cfg.noise.seed);
    let mut points = Vec::new();
    for &g in &drives {
        for &f in &freqs {
            for &b in &blocks {
                let mut p = cfg.clone();
                p.nonlinearity.drive = g;
                p.stimulus.freq_hz = f;
                set_block_size(&mut p, b);
                p.noise.seed = seeds.next_u64();
                points.push(p);
            }
        }
    }
    points
}

fn row_for(p: &ExperimentConfig) -> SweepRow {
    let outcome = p
        .validate()
        .and_then(|_| thd_point(p))
        .map_err(|e| e.to_string());
    SweepRow {
        drive: (p.nonlinearity.kind == NonlinearityName::Tanh).then_some(p.nonlinearity.drive),
        freq_hz: p.stimulus.freq_hz,
        block_size: block_size_of(p),
        seed: p.noise.seed,
        outcome,
    }
}

/// Runs every grid point; rows come back in grid order whatever `parallel` is.
pub fn run_sweep(cfg: &ExperimentConfig, parallel: usize) -> Vec<SweepRow> {
    let points = sweep_points(cfg);
    let workers = parallel.clamp(1, points.len().max(1));
    if workers == 1 {
        return points.iter().map(row_for).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<SweepRow>>> = points.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(p) = points.get(i) else { break };
                let row = row_for(p);
                *slots[i].lock().unwrap() = Some(row);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every point runs"))
        .collect()
}

pub fn thd_sweep(cfg: &ExperimentConfig, out_dir: &Path, parallel: usize) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    if cfg.sweep.analysis_samples > cfg.duration {
        return Err(CliError::invalid(format!(
            "sweep.analysis_samples ({}) exceeds duration ({})",
            cfg.sweep.analysis_samples, cfg.duration
        )));
    }
    let rows = run_sweep(cfg, parallel);
    ensure_dir(out_dir)?;
    let mut w = CsvWriter::create(&out_dir.join("sweep.csv"))?;
    w.row([
        "drive",
        "freq_hz",
        "block_size",
        "seed",
        "thd_in_db",
        "thd_out_db",
        "improvement_db",
        "error",
    ])?;
    for r in &rows {
        w.row(r.fields())?;
    }
    Ok(vec![w.finish()?])
}
