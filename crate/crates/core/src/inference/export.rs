use std::io::{BufRead, Write};

use crate::error::{Error, Result};

use super::{DetectionEvent, PosteriorSample, PosteriorTrace};

/// Writes `frame_index,raw_<class>...,smoothed_<class>...` rows.
pub fn write_trace_csv<W: Write>(
    mut w: W,
    trace: &PosteriorTrace,
    class_names: &[String],
) -> std::io::Result<()> {
    let mut header = vec!["frame_index".to_string()];
    header.extend(class_names.iter().map(|c| format!("raw_{c}")));
    header.extend(class_names.iter().map(|c| format!("smoothed_{c}")));
    writeln!(w, "{}", header.join(","))?;
    for s in &trace.samples {
        write!(w, "{}", s.frame_index)?;
        for v in s.raw.iter().chain(&s.smoothed) {
            // `{:e}` on f64 prints the shortest representation that round-trips.
            write!(w, ",{v:e}")?;
        }
        writeln!(w)?;
    }
    w.flush()
}

/// Parses a CSV produced by [`write_trace_csv`], returning class names and
/// the trace.
pub fn read_trace_csv<R: BufRead>(r: R) -> Result<(Vec<String>, PosteriorTrace)> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Empty("trace csv has no header".into()))?
        .map_err(|e| Error::io("<trace csv>", e))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first() != Some(&"frame_index") || cols.len() % 2 != 1 {
        return Err(Error::Input(format!("bad trace csv header: {header}")));
    }
    let k = (cols.len() - 1) / 2;
    let mut names = Vec::with_capacity(k);
    for (raw, smooth) in cols[1..=k].iter().zip(&cols[k + 1..]) {
        match (raw.strip_prefix("raw_"), smooth.strip_prefix("smoothed_")) {
            (Some(a), Some(b)) if a == b => names.push(a.to_string()),
            _ => return Err(Error::Input(format!("bad trace csv header: {header}"))),
        }
    }

    let mut samples = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io("<trace csv>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Input(format!("trace csv line {}: {line}", lineno + 2));
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 * k + 1 {
            return Err(bad());
        }
        let frame_index = fields[0].trim().parse().map_err(|_| bad())?;
        let values: Vec<f64> = fields[1..]
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad())?;
        samples.push(PosteriorSample {
            frame_index,
            raw: values[..k].to_vec(),
            smoothed: values[k..].to_vec(),
        });
    }
    Ok((names, PosteriorTrace { samples }))
}

/// One JSON object per line: `{keyword, frame, time_s, score}`.
pub fn write_events_jsonl<W: Write>(
    mut w: W,
    events: &[DetectionEvent],
    hop_seconds: f64,
) -> std::io::Result<()> {
    for e in events {
        writeln!(w, "{}", e.to_json(hop_seconds))?;
    }
    w.flush()
}
