use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};
use serde_json::Value;

/// Floats are written with 17 significant digits so they survive a round trip.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Pretty JSON whose floats carry 17 significant digits.
struct ExactFloats<'a>(PrettyFormatter<'a>);

impl Formatter for ExactFloats<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(fmt_f64(value).as_bytes())
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn to_json_bytes<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, ExactFloats(PrettyFormatter::new()));
    value.serialize(&mut ser).expect("in-memory JSON serialization cannot fail");
    buf.push(b'\n');
    buf
}

/// One row of `steps.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRow {
    pub t: usize,
    pub phase: &'static str,
    pub state_norm: f64,
    pub control_norm: f64,
    pub cost: f64,
}

pub const CSV_HEADER: [&str; 6] = ["t", "phase", "state_norm", "control_norm", "cost", "cumulative_cost"];

/// Writes the rows with a running cost total; returns that total.
pub fn write_steps<W: Write>(w: W, rows: &[StepRow]) -> csv::Result<f64> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_HEADER)?;
    let mut total = 0.0;
    for r in rows {
        total += r.cost;
        out.write_record([
            r.t.to_string(),
            r.phase.to_string(),
            fmt_f64(r.state_norm),
            fmt_f64(r.control_norm),
            fmt_f64(r.cost),
            fmt_f64(total),
        ])?;
    }
    out.flush()?;
    Ok(total)
}

/// Sum of the costs in row order, as `write_steps` accumulates it.
pub fn cumulative(rows: &[StepRow]) -> f64 {
    rows.iter().fold(0.0, |acc, r| acc + r.cost)
}

pub fn matrix_json(m: &DMatrix<f64>) -> Value {
    Value::from((0..m.nrows()).map(|i| m.row(i).iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>())
}

pub fn vector_json(v: &DVector<f64>) -> Value {
    Value::from(v.iter().copied().collect::<Vec<_>>())
}
