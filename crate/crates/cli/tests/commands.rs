use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use noisegain::metrics::thd;
use noisegain_cli::commands::{self, compensate_stream, plant_stream, run_sweep, synthesize};
use noisegain_cli::config::PipelineKind;
use noisegain_cli::io::{read_stream, Stream};
use noisegain_cli::ExperimentConfig;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_noisegain"))
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("experiment.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Rows of a CSV written by the tool, header first, comments dropped.
fn rows(p: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(p)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

fn column(p: &Path, name: &str) -> Vec<f64> {
    let r = rows(p);
    let k = r[0].iter().position(|h| h == name).unwrap();
    r[1..].iter().map(|row| row[k].parse().unwrap()).collect()
}

/// RMS residual of `b` after the best affine fit onto `a`.
fn affine_residual(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let sab: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let sbb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    let k = sab / sbb;
    (a.iter()
        .zip(b)
        .map(|(x, y)| (x - ma - k * (y - mb)).powi(2))
        .sum::<f64>()
        / n)
        .sqrt()
}

#[test]
fn simulate_writes_two_equal_files_with_headers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "duration = 5000\n");
    let out = dir.path().join("out");
    let o = run(&["simulate", "--config", s(&cfg), "--output", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let clean = std::fs::read_to_string(out.join("clean.csv")).unwrap();
    let dist = std::fs::read_to_string(out.join("distorted.csv")).unwrap();
    assert!(clean.starts_with("# sample_rate_hz=1550000\nx\n"));
    assert!(dist.starts_with("# sample_rate_hz=1550000\ny\n"));
    assert_eq!(clean.lines().count(), 5002);
    assert_eq!(dist.lines().count(), 5002);
    assert!(!out.join("distorted_codes.csv").exists());
}

#[test]
fn simulate_is_reproducible_and_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "duration = 20000\n[pipeline]\nkind = \"pwl\"\n");
    let read = |sub: &str, seed: &str| {
        let out = dir.path().join(sub);
        let o = run(&[
            "simulate",
            "--config",
            s(&cfg),
            "--output",
            s(&out),
            "--seed",
            seed,
        ]);
        assert!(o.status.success());
        ["clean.csv", "distorted.csv", "distorted_codes.csv"]
            .map(|f| std::fs::read(out.join(f)).unwrap())
    };
    let a = read("a", "7");
    let b = read("b", "7");
    let c = read("c", "8");
    assert_eq!(a, b);
    assert_eq!(a[0], c[0]);
    assert_ne!(a[1], c[1]);
    assert!(String::from_utf8_lossy(&a[2]).starts_with("# bits=10\n"));
}

#[test]
fn zero_duration_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "duration = 0\n[noise]\nsigma_i = -0.5\n");
    let o = run(&["simulate", "--config", s(&cfg), "--output", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("duration"), "{err}");
    assert!(err.contains("sigma_i"), "{err}");
    assert!(!dir.path().join("clean.csv").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[rbf]\nalpah = 0.1\n");
    assert_eq!(
        run(&["simulate", "--config", s(&cfg)]).status.code(),
        Some(1)
    );
    assert_eq!(run(&["simulate", "--frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));

    let missing = dir.path().join("nope.csv");
    let o = run(&[
        "identify",
        "--input",
        s(&missing),
        "--output",
        s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.csv"));

    // A constant input excites a single level: identification cannot proceed.
    let flat = dir.path().join("flat.csv");
    let mut text = String::from("# sample_rate_hz=1550000\ny\n");
    text.push_str(&"2.50000000e-1\n".repeat(50_000));
    std::fs::write(&flat, text).unwrap();
    let o = run(&["identify", "--input", s(&flat), "--output", s(dir.path())]);
    assert_eq!(
        o.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn truncated_file_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "duration = 1000\n");
    assert!(
        run(&["simulate", "--config", s(&cfg), "--output", s(dir.path())])
            .status
            .success()
    );
    let p = dir.path().join("distorted.csv");
    let text = std::fs::read_to_string(&p).unwrap();
    // Cut the 501st sample (line 503) just after its exponent marker.
    let line = text.lines().nth(502).unwrap();
    let keep: usize =
        text.lines().take(502).map(|l| l.len() + 1).sum::<usize>() + line.find('e').unwrap() + 1;
    std::fs::write(&p, &text[..keep]).unwrap();
    let o = run(&[
        "identify",
        "--config",
        s(&cfg),
        "--input",
        s(&p),
        "--output",
        s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("distorted.csv:503:"), "{err}");
}

fn identify_run(plant: &str) -> (tempfile::TempDir, ExperimentConfig) {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        "duration = 1000000\n[stimulus]\nkind = \"triangle\"\nfreq_hz = 100.0\n[nonlinearity]\n{plant}\n"
    );
    let cfg = ExperimentConfig::from_toml(&text).unwrap();
    commands::simulate(&cfg, dir.path()).unwrap();
    let input = dir.path().join("distorted.csv");
    commands::identify(&cfg, &input, dir.path()).unwrap();
    (dir, cfg)
}

#[test]
fn identify_identity_plant_is_affine() {
    let (dir, _) = identify_run("kind = \"identity\"");
    let y = column(&dir.path().join("inverse_table.csv"), "y");
    let g = column(&dir.path().join("inverse_table.csv"), "g");
    let span = y[y.len() - 1] - y[0];
    let r = affine_residual(&y, &g) / span;
    assert!(r < 0.005, "{r}");
    // Input noise rounds off the histogram edges, so judge the inner 90 %.
    let dnl = column(&dir.path().join("linearity.csv"), "dnl");
    let cut = dnl.len() / 20;
    let worst = dnl[cut..dnl.len() - cut]
        .iter()
        .fold(0.0f64, |m, d| m.max(d.abs()));
    assert!(worst < 0.1, "max |DNL| {worst}");
    let prof = rows(&dir.path().join("sigma_profile.csv"));
    assert_eq!(prof[0], ["bin", "y_center", "sigma_o", "count", "valid"]);
    assert_eq!(prof.len(), 257);
}

#[test]
fn identify_tanh_matches_the_inverse() {
    let (dir, cfg) = identify_run("kind = \"tanh\"\ndrive = 2.0");
    let f = cfg.nonlinearity.model().unwrap();
    let y = column(&dir.path().join("inverse_table.csv"), "y");
    let g = column(&dir.path().join("inverse_table.csv"), "g");
    // Central 90 % of the identified range, compared after an affine fit.
    let (lo, hi) = (y[0], y[y.len() - 1]);
    let (c, w) = (0.5 * (lo + hi), hi - lo);
    let (mut xs, mut gs) = (Vec::new(), Vec::new());
    for (yy, gg) in y.iter().zip(&g) {
        if (yy - c).abs() <= 0.45 * w {
            xs.push(f.inverse(*yy).unwrap());
            gs.push(*gg);
        }
    }
    let xr = xs[xs.len() - 1] - xs[0];
    let r = affine_residual(&xs, &gs) / xr;
    assert!(r < 0.02, "{r}");
    // A saturating plant stretches the outer codes.
    let dnl = column(&dir.path().join("linearity.csv"), "dnl");
    assert!(dnl.iter().any(|d| d.abs() > 0.2));
}

#[test]
fn compensate_identity_plant_is_near_transparent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg =
        ExperimentConfig::from_toml("duration = 1000000\n[nonlinearity]\nkind = \"identity\"\n")
            .unwrap();
    commands::simulate(&cfg, dir.path()).unwrap();
    let input = dir.path().join("distorted.csv");
    commands::compensate(&cfg, &input, dir.path()).unwrap();
    let y = column(&input, "y");
    let z = column(&dir.path().join("compensated.csv"), "z");
    assert_eq!(y.len(), z.len());
    let tail = 500_000;
    let rms = (y[tail..]
        .iter()
        .zip(&z[tail..])
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / (y.len() - tail) as f64)
        .sqrt();
    assert!(rms < 0.01, "rms deviation {rms}");
    let tel = rows(&dir.path().join("telemetry.csv"));
    assert!(tel.len() > 1);
    assert_eq!(tel[0].len(), 5 + 257);
}

#[test]
fn compensated_triangle_tracks_the_clean_input() {
    let cfg = ExperimentConfig::from_toml(
        "duration = 3000000\n[stimulus]\nkind = \"triangle\"\nfreq_hz = 100.0\n\
         [nonlinearity]\ndrive = 2.0\n[rbf]\nblock_size = 16\nblock_interval = 16\nalpha = 0.05\n",
    )
    .unwrap();
    let (x, y) = synthesize(&cfg).unwrap();
    let stream = plant_stream(&cfg, y.clone());
    let z = compensate_stream(&cfg, &stream)
        .unwrap()
        .to_frame()
        .unwrap();
    let m = 1_000_000;
    let n = x.len() - m;
    let before = affine_residual(&x.samples()[n..], &y.samples()[n..]);
    let after = affine_residual(&x.samples()[n..], &z.samples()[n..]);
    assert!(before >= 3.0 * after, "{before} vs {after}");
}

#[test]
fn pwl_rejects_float_streams() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "duration = 10000\n[pipeline]\nkind = \"pwl\"\n");
    assert!(
        run(&["simulate", "--config", s(&cfg), "--output", s(dir.path())])
            .status
            .success()
    );
    let input = dir.path().join("distorted.csv");
    let o = run(&[
        "compensate",
        "--config",
        s(&cfg),
        "--input",
        s(&input),
        "--output",
        s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("integer-code"));

    let codes = dir.path().join("distorted_codes.csv");
    let o = run(&[
        "compensate",
        "--config",
        s(&cfg),
        "--input",
        s(&codes),
        "--output",
        s(dir.path()),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    match read_stream(&dir.path().join("compensated_codes.csv")).unwrap() {
        Stream::Codes { bits, codes, .. } => {
            assert_eq!(bits, 12);
            assert_eq!(codes.len(), 10_000);
        }
        s => panic!("{s:?}"),
    }
    let tel = rows(&dir.path().join("telemetry.csv"));
    assert_eq!(tel[0].len(), 7 + 32);
}

#[test]
fn single_point_sweep_equals_compensate_then_thd() {
    let text = "duration = 400000\n[sweep]\nanalysis_samples = 262144\n";
    let cfg = ExperimentConfig::from_toml(text).unwrap();
    let dir = tempfile::tempdir().unwrap();
    commands::thd_sweep(&cfg, dir.path(), 1).unwrap();
    let r = rows(&dir.path().join("sweep.csv"));
    assert_eq!(r.len(), 2);
    assert_eq!(
        r[0],
        [
            "drive",
            "freq_hz",
            "block_size",
            "seed",
            "thd_in_db",
            "thd_out_db",
            "improvement_db",
            "error"
        ]
    );
    let seed = &r[1][3];

    let cfgp = write_config(dir.path(), text);
    let sim = dir.path().join("sim");
    assert!(run(&[
        "simulate",
        "--config",
        s(&cfgp),
        "--output",
        s(&sim),
        "--seed",
        seed
    ])
    .status
    .success());
    let o = run(&[
        "compensate",
        "--config",
        s(&cfgp),
        "--input",
        s(&sim.join("distorted.csv")),
        "--output",
        s(&sim),
    ]);
    assert!(o.status.success());
    // The files hold nine significant digits, so allow for rounding.
    let m = 262_144;
    let y = read_stream(&sim.join("distorted.csv"))
        .unwrap()
        .to_frame()
        .unwrap();
    let z = read_stream(&sim.join("compensated.csv"))
        .unwrap()
        .to_frame()
        .unwrap();
    let a = thd(&y.tail(m), 1000.0, 9).unwrap().thd_db;
    let b = thd(&z.tail(m), 1000.0, 9).unwrap().thd_db;
    let thd_in: f64 = r[1][4].parse().unwrap();
    let thd_out: f64 = r[1][5].parse().unwrap();
    assert!((a - thd_in).abs() < 1e-3, "{a} vs {thd_in}");
    assert!((b - thd_out).abs() < 1e-3, "{b} vs {thd_out}");
}

#[test]
fn drive_sweep_improves_at_high_drive() {
    let cfg = ExperimentConfig::from_toml(
        "duration = 10000000\n[sweep]\ndrives = [1.0, 2.0, 3.0, 4.0]\nanalysis_samples = 1048576\n",
    )
    .unwrap();
    let rows = run_sweep(&cfg, 1);
    assert_eq!(rows.len(), 4);
    for r in &rows {
        let (a, b) = r.outcome.clone().unwrap();
        if r.drive.unwrap() >= 2.0 {
            assert!(a - b >= 10.0, "g = {:?}: {a} -> {b}", r.drive);
        }
    }
}

#[test]
fn block_size_sweep_floor_drops() {
    let cfg = ExperimentConfig::from_toml(
        "duration = 10000000\n[stimulus]\nfreq_hz = 100.0\n[nonlinearity]\ndrive = 0.5\n\
         [pipeline]\nkind = \"pwl\"\n[sweep]\nblock_sizes = [4, 16, 64]\nanalysis_samples = 1048576\n",
    )
    .unwrap();
    let floors: Vec<f64> = run_sweep(&cfg, 1)
        .into_iter()
        .map(|r| r.outcome.unwrap().1)
        .collect();
    assert!(floors[0] > floors[1] && floors[1] > floors[2], "{floors:?}");
}

#[test]
fn parallel_sweep_matches_sequential() {
    let mut cfg = ExperimentConfig::from_toml(
        "duration = 300000\n[sweep]\ndrives = [1.0, 2.0]\nfreqs_hz = [1000.0, 2000.0]\nanalysis_samples = 131072\n",
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    commands::thd_sweep(&cfg, &a, 1).unwrap();
    commands::thd_sweep(&cfg, &b, 3).unwrap();
    let sa = std::fs::read(a.join("sweep.csv")).unwrap();
    assert_eq!(sa, std::fs::read(b.join("sweep.csv")).unwrap());
    let r = rows(&a.join("sweep.csv"));
    assert_eq!(r.len(), 5);
    // Points draw distinct seeds.
    let seeds: std::collections::HashSet<_> = r[1..].iter().map(|row| row[3].clone()).collect();
    assert_eq!(seeds.len(), 4);

    // A failing point is recorded and the rest still run.
    cfg.sweep.freqs_hz = Some(vec![1000.0, 200_000.0]);
    let rows = run_sweep(&cfg, 1);
    assert!(rows[0].outcome.is_ok());
    assert!(
        rows[1].outcome.as_ref().unwrap_err().contains("Nyquist"),
        "{:?}",
        rows[1].outcome
    );
}

#[test]
fn offline_pipeline_compensates_in_two_passes() {
    let mut cfg = ExperimentConfig::from_toml(
        "duration = 1000000\n[pipeline]\nkind = \"offline\"\n[stimulus]\nkind = \"triangle\"\nfreq_hz = 100.0\n",
    )
    .unwrap();
    assert_eq!(cfg.pipeline.kind, PipelineKind::Offline);
    cfg.offline.known_sigma = false;
    let (x, y) = synthesize(&cfg).unwrap();
    let z = compensate_stream(&cfg, &Stream::Float(y.clone()))
        .unwrap()
        .to_frame()
        .unwrap();
    let before = affine_residual(x.samples(), y.samples());
    let after = affine_residual(x.samples(), z.samples());
    assert!(before >= 3.0 * after, "{before} vs {after}");
}
