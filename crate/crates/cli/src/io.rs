//! Signal and table files.
//!
//! Float streams are CSV: a `# sample_rate_hz=` comment, a header row, then
//! one row per sample. Code streams carry a `# bits=` comment first and a
//! single `code` column.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use noisegain::SignalFrame;

use crate::error::{CliError, Result};

/// Nine significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.8e}")
}

/// Buffered CSV writer that keeps the path for error reports.
pub struct CsvWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl CsvWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(CliError::io(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn line(&mut self, text: &str) -> Result<()> {
        writeln!(self.out, "{text}").map_err(CliError::io(&self.path))
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut first = true;
        for f in fields {
            if !first {
                self.out.write_all(b",").map_err(CliError::io(&self.path))?;
            }
            first = false;
            self.out
                .write_all(f.as_ref().as_bytes())
                .map_err(CliError::io(&self.path))?;
        }
        self.out.write_all(b"\n").map_err(CliError::io(&self.path))
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        self.out.flush().map_err(CliError::io(&self.path))?;
        Ok(self.path)
    }
}

pub fn write_signal(path: &Path, column: &str, frame: &SignalFrame) -> Result<PathBuf> {
    let mut w = CsvWriter::create(path)?;
    w.line(&format!("# sample_rate_hz={}", frame.sample_rate()))?;
    w.line(column)?;
    for &v in frame.samples() {
        w.line(&fmt_f64(v))?;
    }
    w.finish()
}

pub fn write_codes(path: &Path, bits: u32, sample_rate: f64, codes: &[u32]) -> Result<PathBuf> {
    let mut w = CsvWriter::create(path)?;
    w.line(&format!("# bits={bits}"))?;
    w.line(&format!("# sample_rate_hz={sample_rate}"))?;
    w.line("code")?;
    for c in codes {
        w.line(&c.to_string())?;
    }
    w.finish()
}

/// Contents of an input stream file.
#[derive(Debug, Clone, PartialEq)]
pub enum Stream {
    Float(SignalFrame),
    Codes {
        bits: u32,
        sample_rate: f64,
        codes: Vec<u32>,
    },
}

impl Stream {
    pub fn sample_rate(&self) -> f64 {
        match self {
            Stream::Float(f) => f.sample_rate(),
            Stream::Codes { sample_rate, .. } => *sample_rate,
        }
    }

    /// Codes are mapped to the centres of their intervals in `[-1, 1)`.
    pub fn to_frame(&self) -> noisegain::Result<SignalFrame> {
        match self {
            Stream::Float(f) => Ok(f.clone()),
            Stream::Codes {
                bits,
                sample_rate,
                codes,
            } => noisegain::signal::dequantize(codes, *bits, *sample_rate),
        }
    }
}

fn parse_err(path: &Path, line: usize, reason: impl Into<String>) -> CliError {
    CliError::Parse {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

/// Reads a float CSV or a code stream.
///
/// A float file with several columns must name one of them `y`.
pub fn read_stream(path: &Path) -> Result<Stream> {
    let file = File::open(path).map_err(CliError::io(path))?;
    let mut bits = None;
    let mut sample_rate = None;
    let mut header: Option<(Vec<String>, usize)> = None;
    let mut values = Vec::new();
    let mut codes = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let no = k + 1;
        let line = line.map_err(CliError::io(path))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            if header.is_some() {
                continue;
            }
            let Some((key, value)) = meta.trim().split_once('=') else {
                continue;
            };
            match key.trim() {
                "bits" => {
                    let b: u32 = value
                        .trim()
                        .parse()
                        .map_err(|_| parse_err(path, no, format!("bad bit width `{value}`")))?;
                    if !(1..=31).contains(&b) {
                        return Err(parse_err(path, no, format!("bit width {b} outside 1..=31")));
                    }
                    bits = Some(b);
                }
                "sample_rate_hz" => {
                    let fs: f64 = value
                        .trim()
                        .parse()
                        .map_err(|_| parse_err(path, no, format!("bad sample rate `{value}`")))?;
                    sample_rate = Some(fs);
                }
                _ => {}
            }
            continue;
        }
        match &header {
            None => {
                let names: Vec<String> = line.split(',').map(|s| s.trim().to_string()).collect();
                let col = if bits.is_some() {
                    names.iter().position(|n| n == "code")
                } else if names.len() == 1 {
                    Some(0)
                } else {
                    names.iter().position(|n| n == "y")
                };
                let col = col.ok_or_else(|| {
                    let want = if bits.is_some() { "code" } else { "y" };
                    parse_err(path, no, format!("header has no `{want}` column"))
                })?;
                header = Some((names, col));
            }
            Some((names, col)) => {
                let fields: Vec<&str> = line.split(',').collect();
                if fields.len() != names.len() {
                    return Err(parse_err(
                        path,
                        no,
                        format!("expected {} fields, found {}", names.len(), fields.len()),
                    ));
                }
                let field = fields[*col].trim();
                match bits {
                    Some(b) => {
                        let c: u32 = field
                            .parse()
                            .map_err(|_| parse_err(path, no, format!("bad code `{field}`")))?;
                        if u64::from(c) >= 1u64 << b {
                            return Err(parse_err(path, no, format!("code {c} exceeds {b} bits")));
                        }
                        codes.push(c);
                    }
                    None => {
                        let v: f64 = field
                            .parse()
                            .map_err(|_| parse_err(path, no, format!("bad sample `{field}`")))?;
                        if !v.is_finite() {
                            return Err(parse_err(
                                path,
                                no,
                                format!("sample `{field}` is not finite"),
                            ));
                        }
                        values.push(v);
                    }
                }
            }
        }
    }
    let fs =
        sample_rate.ok_or_else(|| parse_err(path, 1, "missing `# sample_rate_hz=` comment"))?;
    if !(fs > 0.0 && fs.is_finite()) {
        return Err(parse_err(
            path,
            1,
            format!("sample rate {fs} must be positive"),
        ));
    }
    if header.is_none() {
        return Err(parse_err(path, 1, "missing header row"));
    }
    match bits {
        Some(bits) => {
            if codes.is_empty() {
                return Err(parse_err(path, 1, "no samples"));
            }
            Ok(Stream::Codes {
                bits,
                sample_rate: fs,
                codes,
            })
        }
        None => {
            if values.is_empty() {
                return Err(parse_err(path, 1, "no samples"));
            }
            Ok(Stream::Float(SignalFrame::new(values, fs)?))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt_f64(0.123456789123), "1.23456789e-1");
        assert_eq!(fmt_f64(-2.0), "-2.00000000e0");
        let v = -0.734_512_341_9;
        let back: f64 = fmt_f64(v).parse().unwrap();
        assert!((back - v).abs() <= 5e-9 * v.abs());
    }

    #[test]
    fn round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let f = SignalFrame::new(vec![0.25, -0.5, 0.125], 48_000.0).unwrap();
        let p = dir.path().join("s.csv");
        write_signal(&p, "y", &f).unwrap();
        assert_eq!(read_stream(&p).unwrap(), Stream::Float(f));

        let p = dir.path().join("c.csv");
        write_codes(&p, 10, 1.55e6, &[0, 512, 1023]).unwrap();
        match read_stream(&p).unwrap() {
            Stream::Codes {
                bits,
                sample_rate,
                codes,
            } => {
                assert_eq!((bits, sample_rate), (10, 1.55e6));
                assert_eq!(codes, vec![0, 512, 1023]);
            }
            s => panic!("{s:?}"),
        }
    }

    #[test]
    fn errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "# sample_rate_hz=1000\ny\n0.5\n0.2e\n").unwrap();
        match read_stream(&p).unwrap_err() {
            CliError::Parse { line, .. } => assert_eq!(line, 4),
            e => panic!("{e}"),
        }
        std::fs::write(&p, "# bits=4\n# sample_rate_hz=1000\ncode\n3\n16\n").unwrap();
        match read_stream(&p).unwrap_err() {
            CliError::Parse { line, reason, .. } => {
                assert_eq!(line, 5);
                assert!(reason.contains("exceeds"));
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn picks_the_y_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("two.csv");
        std::fs::write(&p, "# sample_rate_hz=10\nx,y\n1,2\n3,4\n").unwrap();
        let s = read_stream(&p).unwrap();
        assert_eq!(s.to_frame().unwrap().samples(), &[2.0, 4.0]);
    }
}
