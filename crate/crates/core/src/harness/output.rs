use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::config::Algorithm;
use super::runner::ResultRow;
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 11] = [
    "trial",
    "algo",
    "snr_db",
    "pilot_len",
    "rank_bound",
    "mse",
    "iters",
    "seconds",
    "path_counts",
    "converged",
    "seed",
];

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

fn record(row: &ResultRow) -> [String; 11] {
    // `{}` on f64 prints the shortest string that parses back to the same value.
    [
        row.trial.to_string(),
        row.algo.to_string(),
        row.snr_db.to_string(),
        row.pilot_len.to_string(),
        row.rank_bound.to_string(),
        row.mse.to_string(),
        row.iters.to_string(),
        row.seconds.to_string(),
        row.path_counts
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(";"),
        row.converged.to_string(),
        row.seed.to_string(),
    ]
}

/// Writes the header and one line per row.
pub fn write_results<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for row in rows {
        w.write_record(record(row)).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Format(format!("csv: {e}")))
}

/// Writes the rows as CSV to `path`.
pub fn emit_results(rows: &[ResultRow], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut buf = BufWriter::new(file);
    write_results(rows, &mut buf).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    buf.flush().map_err(|e| Error::io(path, e))
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, line: u64) -> Result<T> {
    let raw = rec.get(i).unwrap_or("");
    raw.parse()
        .map_err(|_| Error::Format(format!("line {line}: bad {} value '{raw}'", CSV_HEADER[i])))
}

/// Parses a file written by [`write_results`]. The `error` field is not
/// stored in CSV and comes back as `None`.
pub fn read_results<R: Read>(input: R) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(csv_err)?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Format(format!(
            "unexpected header {:?}",
            header.iter().collect::<Vec<_>>()
        )));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        let counts = rec.get(8).unwrap_or("");
        let path_counts = if counts.is_empty() {
            Vec::new()
        } else {
            counts
                .split(';')
                .map(|c| {
                    c.parse()
                        .map_err(|_| Error::Format(format!("line {line}: bad path count '{c}'")))
                })
                .collect::<Result<_>>()?
        };
        let algo: String = field(&rec, 1, line)?;
        rows.push(ResultRow {
            trial: field(&rec, 0, line)?,
            algo: algo
                .parse::<Algorithm>()
                .map_err(|e| Error::Format(format!("line {line}: {e}")))?,
            snr_db: field(&rec, 2, line)?,
            pilot_len: field(&rec, 3, line)?,
            rank_bound: field(&rec, 4, line)?,
            mse: field(&rec, 5, line)?,
            iters: field(&rec, 6, line)?,
            seconds: field(&rec, 7, line)?,
            path_counts,
            converged: field(&rec, 9, line)?,
            seed: field(&rec, 10, line)?,
            error: None,
        });
    }
    Ok(rows)
}

/// Median solve time of one algorithm at one rank bound.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingSummary {
    pub algo: Algorithm,
    pub rank_bound: usize,
    pub median_seconds: f64,
    pub runs: usize,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median wall-clock per (algorithm, rank bound), in first-seen order.
pub fn timing_summary(rows: &[ResultRow]) -> Vec<TimingSummary> {
    let mut keys: Vec<(Algorithm, usize)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.algo, r.rank_bound)) {
            keys.push((r.algo, r.rank_bound));
        }
    }
    keys.into_iter()
        .map(|(algo, rank_bound)| {
            let mut secs: Vec<f64> = rows
                .iter()
                .filter(|r| r.algo == algo && r.rank_bound == rank_bound)
                .map(|r| r.seconds)
                .collect();
            TimingSummary {
                algo,
                rank_bound,
                runs: secs.len(),
                median_seconds: median(&mut secs),
            }
        })
        .collect()
}

pub fn format_timing_table(summary: &[TimingSummary]) -> String {
    let mut out = format!(
        "{:<10} {:>10} {:>6} {:>14}\n",
        "algo", "rank_bound", "runs", "median_s"
    );
    for s in summary {
        out.push_str(&format!(
            "{:<10} {:>10} {:>6} {:>14.6}\n",
            s.algo.name(),
            s.rank_bound,
            s.runs,
            s.median_seconds
        ));
    }
    out
}
