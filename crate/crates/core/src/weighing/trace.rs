//! `t_ms,grams` trace files, one sample per line.

use std::io::{BufRead, Write};

use thiserror::Error;

use super::WeightSample;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Parse one record. Blank lines and `#` comments yield `None`.
pub fn parse_line(text: &str, line: usize) -> Result<Option<WeightSample>, TraceError> {
    let text = text.trim();
    if text.is_empty() || text.starts_with('#') {
        return Ok(None);
    }
    let err = |message: String| TraceError::Parse { line, message };
    let (t, g) = text
        .split_once(',')
        .ok_or_else(|| err(format!("expected `t_ms,grams`, got {text:?}")))?;
    let t: i64 = t.trim().parse().map_err(|e| err(format!("bad timestamp {t:?}: {e}")))?;
    let grams: f64 = g.trim().parse().map_err(|e| err(format!("bad weight {g:?}: {e}")))?;
    if !grams.is_finite() {
        return Err(err(format!("weight {g:?} is not finite")));
    }
    Ok(Some(WeightSample::new(t, grams)))
}

pub fn read_trace<R: BufRead>(reader: R) -> Result<Vec<WeightSample>, TraceError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        if let Some(s) = parse_line(&line?, i + 1)? {
            out.push(s);
        }
    }
    Ok(out)
}

pub fn write_trace<W: Write>(mut w: W, samples: &[WeightSample]) -> std::io::Result<()> {
    for s in samples {
        writeln!(w, "{},{}", s.t, s.grams)?;
    }
    Ok(())
}
