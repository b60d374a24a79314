//! CSV and JSON artifacts. Floats are written with 17 significant digits,
//! which is enough to read every value back exactly.

use std::fs;
use std::path::Path;

use serde::Serialize;

use super::monte_carlo::{Distribution, McSummary, Sweep};
use crate::error::{Error, Result};
use crate::seeker::{SeekerState, Trace};

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Scenario(format!("csv: {other:?}")),
    }
}

fn finish(writer: csv::Writer<Vec<u8>>) -> String {
    let bytes = writer.into_inner().expect("writing to memory cannot fail");
    String::from_utf8(bytes).expect("csv output is utf-8")
}

fn row<I: IntoIterator<Item = String>>(w: &mut csv::Writer<Vec<u8>>, fields: I) {
    w.write_record(fields)
        .expect("writing to memory cannot fail");
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Columns `k, x_1..x_N, y_1..y_N, p_1..p_N`. Needs a recorded trace.
pub fn trace_csv(trace: &Trace) -> Result<String> {
    if trace.states.len() != trace.transmitted.len() {
        return Err(Error::InvalidParameter(
            "trace was run without recording".into(),
        ));
    }
    let n = trace.states.first().map_or(0, |s| s.x.len());
    let mut w = csv::Writer::from_writer(Vec::new());
    let header = std::iter::once("k".to_string()).chain(
        ["x", "y", "p"]
            .iter()
            .flat_map(|prefix| (1..=n).map(move |i| format!("{prefix}_{i}"))),
    );
    row(&mut w, header);
    for (s, p) in trace.states.iter().zip(&trace.transmitted) {
        let values = s.x.iter().chain(&s.y).chain(p).map(|v| num(*v));
        row(&mut w, std::iter::once(s.k.to_string()).chain(values));
    }
    Ok(finish(w))
}

pub fn write_trace_csv(trace: &Trace, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, trace_csv(trace)?)?;
    Ok(())
}

/// Parses [`trace_csv`] output. Noise draws are not stored, so the returned
/// trace has none; `box_exit` is likewise unknown.
pub fn parse_trace_csv(text: &str) -> Result<Trace> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let cols = reader.headers().map_err(csv_error)?.len();
    if cols < 4 || (cols - 1) % 3 != 0 {
        return Err(Error::Scenario(format!("trace header has {cols} columns")));
    }
    let n = (cols - 1) / 3;
    let mut states = Vec::new();
    let mut transmitted = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |field: &str| Error::Scenario(format!("line {line}: malformed value `{field}`"));
        let k = record[0].parse().map_err(|_| bad(&record[0]))?;
        let values = record
            .iter()
            .skip(1)
            .map(|f| f.parse::<f64>().map_err(|_| bad(f)))
            .collect::<Result<Vec<f64>>>()?;
        states.push(SeekerState {
            k,
            x: values[..n].to_vec(),
            y: values[n..2 * n].to_vec(),
        });
        transmitted.push(values[2 * n..].to_vec());
    }
    Ok(Trace {
        states,
        transmitted,
        noises: Vec::new(),
        box_exit: None,
    })
}

pub fn read_trace_csv(path: impl AsRef<Path>) -> Result<Trace> {
    parse_trace_csv(&fs::read_to_string(path)?)
}

/// Long format `k, player, statistic, value, stderr`; `player` is `all`
/// for network-wide statistics.
pub fn summary_csv(summary: &McSummary) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    row(
        &mut w,
        ["k", "player", "statistic", "value", "stderr"].map(String::from),
    );
    for (j, &k) in summary.probes.iter().enumerate() {
        let grids = [
            ("mse", &summary.per_player_mse[j]),
            ("estimate_error", &summary.estimate_error[j]),
            ("estimate_bias", &summary.mean_estimate_bias[j]),
        ];
        for (name, values) in grids {
            for (i, e) in values.iter().enumerate() {
                row(
                    &mut w,
                    [
                        k.to_string(),
                        (i + 1).to_string(),
                        name.into(),
                        num(e.mean),
                        num(e.stderr),
                    ],
                );
            }
        }
        for (name, e) in [
            ("mse", summary.aggregate_mse[j]),
            ("consensus_drift", summary.consensus_drift[j]),
        ] {
            row(
                &mut w,
                [
                    k.to_string(),
                    "all".into(),
                    name.into(),
                    num(e.mean),
                    num(e.stderr),
                ],
            );
        }
    }
    finish(w)
}

pub fn write_summary_csv(summary: &McSummary, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, summary_csv(summary))?;
    Ok(())
}

pub fn sweep_csv(sweep: &Sweep) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    row(&mut w, ["d", "mse", "stderr"].map(String::from));
    for r in &sweep.rows {
        row(&mut w, [num(r.d), num(r.mse), num(r.stderr)]);
    }
    finish(w)
}

pub fn write_sweep_csv(sweep: &Sweep, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, sweep_csv(sweep))?;
    Ok(())
}

/// One row per bin: `player, variable, bin_lower, bin_upper, count`. The
/// leading comment line records each histogram's bin width.
pub fn distribution_csv(dist: &Distribution) -> String {
    let mut out = String::from("# bin_width");
    for p in &dist.players {
        out.push_str(&format!(
            " x_{0}={1} y_{0}={2}",
            p.player,
            num(p.x.bin_width),
            num(p.y.bin_width)
        ));
    }
    out.push('\n');
    let mut w = csv::Writer::from_writer(Vec::new());
    row(
        &mut w,
        ["player", "variable", "bin_lower", "bin_upper", "count"].map(String::from),
    );
    for p in &dist.players {
        for (name, h) in [("x", &p.x), ("y", &p.y)] {
            for (j, c) in h.counts.iter().enumerate() {
                let lo = h.lower + j as f64 * h.bin_width;
                row(
                    &mut w,
                    [
                        p.player.to_string(),
                        name.into(),
                        num(lo),
                        num(lo + h.bin_width),
                        c.to_string(),
                    ],
                );
            }
        }
    }
    out + &finish(w)
}

pub fn write_distribution_csv(dist: &Distribution, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, distribution_csv(dist))?;
    Ok(())
}
