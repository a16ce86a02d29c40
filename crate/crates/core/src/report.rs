//! Per-iteration CSV trace.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::diagnostics::IterationRecord;

pub const CSV_COLUMNS: [&str; 9] = [
    "iter", "napsd_r", "napsd_c", "lb", "ub", "gap", "total_mvar", "best_cost", "seconds",
];

/// One CSV row; undefined values are empty cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub iter: usize,
    pub napsd_r: Option<f64>,
    pub napsd_c: Option<f64>,
    pub lb: Option<f64>,
    pub ub: f64,
    pub gap: Option<f64>,
    pub total_mvar: f64,
    pub best_cost: f64,
    pub seconds: f64,
}

impl From<&IterationRecord> for CsvRow {
    fn from(r: &IterationRecord) -> Self {
        CsvRow {
            iter: r.iteration,
            napsd_r: r.napsd_r,
            napsd_c: r.napsd_c,
            lb: r.lb,
            ub: r.ub,
            gap: r.gap,
            total_mvar: r.total_mvar,
            best_cost: r.best_cost,
            seconds: r.seconds,
        }
    }
}

/// Appends rows and flushes after each one, so an interrupted run leaves a
/// readable prefix.
pub struct CsvSink<W: Write> {
    writer: csv::Writer<W>,
    with_time: bool,
}

impl<W: Write> CsvSink<W> {
    pub fn new(out: W) -> csv::Result<Self> {
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        writer.write_record(CSV_COLUMNS)?;
        writer.flush()?;
        Ok(CsvSink { writer, with_time: true })
    }

    /// Writes zero in the `seconds` column so that traces of identical runs
    /// compare equal.
    pub fn without_time(mut self) -> Self {
        self.with_time = false;
        self
    }

    pub fn write(&mut self, record: &IterationRecord) -> csv::Result<()> {
        let mut row = CsvRow::from(record);
        if !self.with_time {
            row.seconds = 0.0;
        }
        self.writer.serialize(row)?;
        self.writer.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.writer.into_inner().unwrap_or_else(|e| panic!("flushed writer: {e}"))
    }
}

pub fn read_csv(text: &str) -> csv::Result<Vec<CsvRow>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    reader.deserialize().collect()
}
