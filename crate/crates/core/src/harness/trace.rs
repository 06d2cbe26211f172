//! CSV traces and sweep tables.
//!
//! Trace columns, in order:
//!
//! | column       | meaning                                                      |
//! |--------------|--------------------------------------------------------------|
//! | `k`          | iteration, from 1                                            |
//! | `epoch`      | zero-based sampler epoch                                     |
//! | `alpha`      | `α_k` from the schedule                                      |
//! | `tau`        | step size taken                                              |
//! | `zeta`       | uncapped adaptive term; `inf` for baselines and `d_k = 0`    |
//! | `lb`         | lower bound used at step `k`; `-inf` for baselines           |
//! | `batch_loss` | `f(x^k, s_k)`                                                |
//! | `full_loss`  | full-data loss at `x^{k+1}`; empty when not evaluated        |
//! | `dist`       | `‖x^{k+1} − x*‖` when `x*` is known; empty otherwise         |
//!
//! Floats are written in the shortest form that parses back to the same
//! `f64`; infinities are `inf` and `-inf`.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use super::HarnessError;

pub const TRACE_HEADER: &str = "k,epoch,alpha,tau,zeta,lb,batch_loss,full_loss,dist";
pub const SUMMARY_HEADER: &str = "alpha,runs,diverged,mean_final_loss,std_final_loss,mean_min_loss";
pub const RUNS_HEADER: &str = "alpha,seed,final_full_loss,min_full_loss,final_lb,diverged_at";

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub k: u64,
    pub epoch: u64,
    pub alpha: f64,
    pub tau: f64,
    pub zeta: f64,
    pub lb: f64,
    pub batch_loss: f64,
    pub full_loss: Option<f64>,
    pub dist: Option<f64>,
}

/// Shortest round-trip decimal; `inf`, `-inf`, `NaN` for non-finite values.
pub fn format_f64(v: f64) -> String {
    if v.is_finite() {
        ryu::Buffer::new().format_finite(v).to_string()
    } else if v.is_nan() {
        "NaN".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn format_opt(v: Option<f64>) -> String {
    v.map(format_f64).unwrap_or_default()
}

fn parse_f64(field: &str, line: usize) -> Result<f64, HarnessError> {
    field
        .parse::<f64>()
        .map_err(|_| HarnessError::Parse(format!("line {line}: bad number `{field}`")))
}

fn parse_opt(field: &str, line: usize) -> Result<Option<f64>, HarnessError> {
    if field.is_empty() {
        Ok(None)
    } else {
        parse_f64(field, line).map(Some)
    }
}

fn parse_u64(field: &str, line: usize) -> Result<u64, HarnessError> {
    field
        .parse::<u64>()
        .map_err(|_| HarnessError::Parse(format!("line {line}: bad integer `{field}`")))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_table<W: Write>(out: W, header: &str, rows: impl Iterator<Item = Vec<String>>) -> Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(header.split(','))?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

fn trace_fields(r: &TraceRow) -> Vec<String> {
    vec![
        r.k.to_string(),
        r.epoch.to_string(),
        format_f64(r.alpha),
        format_f64(r.tau),
        format_f64(r.zeta),
        format_f64(r.lb),
        format_f64(r.batch_loss),
        format_opt(r.full_loss),
        format_opt(r.dist),
    ]
}

/// Writes a trace as CSV text.
pub fn write_trace<W: Write>(out: W, rows: &[TraceRow]) -> Result<(), HarnessError> {
    write_table(out, TRACE_HEADER, rows.iter().map(trace_fields)).map_err(|e| HarnessError::Parse(e.to_string()))
}

pub fn trace_to_string(rows: &[TraceRow]) -> String {
    let mut buf = Vec::new();
    write_trace(&mut buf, rows).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("CSV output is ASCII")
}

pub fn emit_csv(rows: &[TraceRow], path: &Path) -> Result<(), HarnessError> {
    let file = File::create(path).map_err(io_err(path))?;
    write_table(file, TRACE_HEADER, rows.iter().map(trace_fields)).map_err(|e| csv_io(e, path))
}

fn csv_io(e: csv::Error, path: &Path) -> HarnessError {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => HarnessError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => HarnessError::Parse(format!("{}: {other:?}", path.display())),
    }
}

/// Parses CSV text written by [`write_trace`].
pub fn parse_trace(text: &str) -> Result<Vec<TraceRow>, HarnessError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| HarnessError::Parse(e.to_string()))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != TRACE_HEADER {
        return Err(HarnessError::Parse(format!("unexpected header `{header}`")));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| HarnessError::Parse(e.to_string()))?;
        if rec.len() != 9 {
            return Err(HarnessError::Parse(format!("line {line}: expected 9 fields, got {}", rec.len())));
        }
        rows.push(TraceRow {
            k: parse_u64(&rec[0], line)?,
            epoch: parse_u64(&rec[1], line)?,
            alpha: parse_f64(&rec[2], line)?,
            tau: parse_f64(&rec[3], line)?,
            zeta: parse_f64(&rec[4], line)?,
            lb: parse_f64(&rec[5], line)?,
            batch_loss: parse_f64(&rec[6], line)?,
            full_loss: parse_opt(&rec[7], line)?,
            dist: parse_opt(&rec[8], line)?,
        });
    }
    Ok(rows)
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_trace(&text)
}

/// Aggregate over seeds for one learning rate.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub alpha: f64,
    pub runs: usize,
    pub diverged: usize,
    /// Mean over non-diverged runs; NaN when every run diverged.
    pub mean_final_loss: f64,
    pub std_final_loss: f64,
    pub mean_min_loss: f64,
}

impl SummaryRow {
    /// Every run finished and the mean final loss is below `threshold`.
    pub fn succeeds(&self, threshold: f64) -> bool {
        self.diverged == 0 && self.mean_final_loss < threshold
    }
}

/// One run of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub alpha: f64,
    pub seed: u64,
    pub final_full_loss: f64,
    pub min_full_loss: f64,
    pub final_lb: f64,
    pub diverged_at: Option<u64>,
}

pub fn emit_summary(rows: &[SummaryRow], path: &Path) -> Result<(), HarnessError> {
    let file = File::create(path).map_err(io_err(path))?;
    write_summary(file, rows).map_err(|e| csv_io(e, path))
}

pub fn write_summary<W: Write>(out: W, rows: &[SummaryRow]) -> Result<(), csv::Error> {
    write_table(
        out,
        SUMMARY_HEADER,
        rows.iter().map(|r| {
            vec![
                format_f64(r.alpha),
                r.runs.to_string(),
                r.diverged.to_string(),
                format_f64(r.mean_final_loss),
                format_f64(r.std_final_loss),
                format_f64(r.mean_min_loss),
            ]
        }),
    )
}

pub fn emit_runs(rows: &[RunRow], path: &Path) -> Result<(), HarnessError> {
    let file = File::create(path).map_err(io_err(path))?;
    write_table(
        file,
        RUNS_HEADER,
        rows.iter().map(|r| {
            vec![
                format_f64(r.alpha),
                r.seed.to_string(),
                format_f64(r.final_full_loss),
                format_f64(r.min_full_loss),
                format_f64(r.final_lb),
                r.diverged_at.map(|k| k.to_string()).unwrap_or_default(),
            ]
        }),
    )
    .map_err(|e| csv_io(e, path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_trace_is_header_only() {
        assert_eq!(trace_to_string(&[]), format!("{TRACE_HEADER}\n"));
    }

    #[test]
    fn sentinels_and_empty_fields() {
        let row = TraceRow {
            k: 1,
            epoch: 0,
            alpha: 1.0,
            tau: 0.0,
            zeta: f64::INFINITY,
            lb: f64::NEG_INFINITY,
            batch_loss: 0.1,
            full_loss: None,
            dist: None,
        };
        let text = trace_to_string(std::slice::from_ref(&row));
        assert_eq!(text.lines().nth(1).unwrap(), "1,0,1.0,0.0,inf,-inf,0.1,,");
        assert_eq!(parse_trace(&text).unwrap(), vec![row]);
    }

    #[test]
    fn rejects_wrong_header() {
        assert!(parse_trace("k,alpha\n1,2\n").is_err());
    }

    fn finite_or_special() -> impl Strategy<Value = f64> {
        prop_oneof![
            any::<f64>().prop_filter("not NaN", |v| !v.is_nan()),
            Just(f64::INFINITY),
            Just(f64::NEG_INFINITY),
            Just(0.0),
            Just(1e-300),
        ]
    }

    proptest! {
        #[test]
        fn round_trip(
            k in 1u64..1_000_000,
            epoch in 0u64..1000,
            vals in proptest::collection::vec(finite_or_special(), 5),
            full in proptest::option::of(finite_or_special()),
            dist in proptest::option::of(0.0f64..1e6),
        ) {
            let row = TraceRow {
                k, epoch,
                alpha: vals[0], tau: vals[1], zeta: vals[2], lb: vals[3], batch_loss: vals[4],
                full_loss: full, dist,
            };
            let rows = vec![row.clone(), TraceRow { k: k + 1, ..row }];
            prop_assert_eq!(parse_trace(&trace_to_string(&rows)).unwrap(), rows);
        }
    }
}
