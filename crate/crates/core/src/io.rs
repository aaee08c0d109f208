//! CSV and JSON persistence. Floats are written with 17 significant digits,
//! which round-trips every `f64` exactly.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Result, SysIdError};
use crate::model::{HiddenStates, SystemMatrices, Trajectory};

/// `%.17g`: fixed notation for decimal exponents in `[-5, 17)`, scientific otherwise,
/// trailing zeros removed.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{:.16e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..17).contains(&exp) {
        let decimals = (16 - exp).max(0) as usize;
        trim_zeros(format!("{:.*}", decimals, x))
    } else {
        let m = trim_zeros(mantissa.to_string());
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// JSON formatter writing floats through [`fmt_f64`]; non-finite values become `null`.
#[derive(Debug, Default, Clone, Copy)]
pub struct PreciseFormatter;

impl serde_json::ser::Formatter for PreciseFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        if !value.is_finite() {
            return writer.write_all(b"null");
        }
        let mut s = fmt_f64(value);
        if !s.contains(['.', 'e']) {
            s.push_str(".0");
        }
        writer.write_all(s.as_bytes())
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

/// Compact JSON with 17-digit floats.
pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, PreciseFormatter);
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(out).expect("serde_json emits UTF-8"))
}

/// Pretty-printed JSON with 17-digit floats, re-indented by serde_json.
pub fn to_json_pretty<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let compact = to_json_string(value)?;
    let tree: serde_json::Value = serde_json::from_str(&compact)?;
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, PrettyPrecise::default());
    tree.serialize(&mut ser)?;
    out.push(b'\n');
    Ok(String::from_utf8(out).expect("serde_json emits UTF-8"))
}

#[derive(Default)]
struct PrettyPrecise<'a> {
    inner: serde_json::ser::PrettyFormatter<'a>,
}

macro_rules! delegate {
    ($($name:ident($($arg:ident: $ty:ty),*);)*) => {
        $(fn $name<W: ?Sized + Write>(&mut self, w: &mut W $(, $arg: $ty)*) -> io::Result<()> {
            self.inner.$name(w $(, $arg)*)
        })*
    };
}

impl serde_json::ser::Formatter for PrettyPrecise<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        PreciseFormatter.write_f64(writer, value)
    }

    delegate! {
        begin_array();
        end_array();
        begin_array_value(first: bool);
        end_array_value();
        begin_object();
        end_object();
        begin_object_key(first: bool);
        end_object_key();
        begin_object_value();
        end_object_value();
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, to_json_pretty(value)?)?;
    Ok(())
}

pub fn read_system(path: &Path) -> Result<SystemMatrices> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| SysIdError::Parse(format!("{}: {e}", path.display())))
}

pub fn write_system(path: &Path, sys: &SystemMatrices) -> Result<()> {
    write_json(path, sys)
}

fn header(prefixes: &[(&str, usize)]) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for (name, count) in prefixes {
        h.extend((1..=*count).map(|i| format!("{name}_{i}")));
    }
    h
}

fn write_columns<W: Write>(out: W, head: &[String], blocks: &[&DMatrix<f64>], rows: usize) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(head)?;
    let mut record = Vec::with_capacity(head.len());
    for t in 0..rows {
        record.clear();
        record.push(t.to_string());
        for b in blocks {
            record.extend(b.column(t).iter().map(|&x| fmt_f64(x)));
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// `t,u_1..u_p,y_1..y_m`, one row per time step.
pub fn write_trajectory<W: Write>(out: W, traj: &Trajectory) -> Result<()> {
    let head = header(&[("u", traj.p()), ("y", traj.m())]);
    write_columns(out, &head, &[&traj.inputs, &traj.observations], traj.horizon() + 1)
}

/// `t,x_1..x_n,w_1..w_n,z_1..z_m` for `t = 0..=T`.
pub fn write_hidden<W: Write>(out: W, hidden: &HiddenStates) -> Result<()> {
    let n = hidden.states.nrows();
    let m = hidden.observation_noise.nrows();
    let rows = hidden.process_noise.ncols();
    let head = header(&[("x", n), ("w", n), ("z", m)]);
    let states = hidden.states.columns(0, rows).into_owned();
    write_columns(out, &head, &[&states, &hidden.process_noise, &hidden.observation_noise], rows)
}

pub fn save_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    write_trajectory(BufWriter::new(File::create(path)?), traj)
}

pub fn save_hidden(path: &Path, hidden: &HiddenStates) -> Result<()> {
    write_hidden(BufWriter::new(File::create(path)?), hidden)
}

fn count_prefix(head: &[String], prefix: &str, from: usize) -> usize {
    head[from..]
        .iter()
        .enumerate()
        .take_while(|(i, h)| **h == format!("{prefix}_{}", i + 1))
        .count()
}

/// Reads the format written by [`write_trajectory`]; rows must be `t = 0, 1, ...` in order.
pub fn read_trajectory<R: io::Read>(input: R) -> Result<Trajectory> {
    let mut r = csv::Reader::from_reader(input);
    let head: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if head.first().map(String::as_str) != Some("t") {
        return Err(SysIdError::Parse("header must start with `t`".into()));
    }
    let p = count_prefix(&head, "u", 1);
    let m = count_prefix(&head, "y", 1 + p);
    if p == 0 || m == 0 || head.len() != 1 + p + m {
        return Err(SysIdError::Parse(format!("unexpected header `{}`", head.join(","))));
    }
    let mut u = Vec::new();
    let mut y = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(row as u64 + 2, |p| p.line());
        if rec.len() != head.len() {
            return Err(SysIdError::Parse(format!("line {line}: expected {} fields", head.len())));
        }
        let t: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| SysIdError::Parse(format!("line {line}: bad time index `{}`", &rec[0])))?;
        if t != row {
            return Err(SysIdError::Parse(format!("line {line}: expected t = {row}, found {t}")));
        }
        for (i, field) in rec.iter().enumerate().skip(1) {
            let x: f64 = field
                .trim()
                .parse()
                .map_err(|_| SysIdError::Parse(format!("line {line}: bad number `{field}` in column {}", head[i])))?;
            if i <= p {
                u.push(x);
            } else {
                y.push(x);
            }
        }
    }
    let cols = u.len() / p;
    if cols == 0 {
        return Err(SysIdError::Parse("trajectory has no rows".into()));
    }
    Trajectory::new(DMatrix::from_vec(p, cols, u), DMatrix::from_vec(m, cols, y))
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory> {
    read_trajectory(io::BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 1e16, 123456.789, -0.0, 5e-324] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
        }
        assert_eq!(fmt_f64(1.0), "1");
        assert_eq!(fmt_f64(0.1), "0.10000000000000001");
        assert_eq!(fmt_f64(1e20), "1e+20");
        assert_eq!(fmt_f64(2.5e-7), "2.4999999999999999e-07");
    }

    #[test]
    fn json_floats() {
        let s = to_json_string(&vec![1.0, 0.1, f64::NAN]).unwrap();
        assert_eq!(s, "[1.0,0.10000000000000001,null]");
        let pretty = to_json_pretty(&serde_json::json!({"a": [0.5]})).unwrap();
        assert!(pretty.contains("\"a\": [\n"));
    }

    #[test]
    fn trajectory_round_trip() {
        let traj = Trajectory::new(
            DMatrix::from_row_slice(2, 3, &[0.1, 0.2, 0.3, -1.0, 1e-20, 7.0]),
            DMatrix::from_row_slice(1, 3, &[1.0 / 3.0, 2.0, -4.5]),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &traj).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,u_1,u_2,y_1\n0,"));
        assert_eq!(text.lines().count(), 4);
        let back = read_trajectory(buf.as_slice()).unwrap();
        assert_eq!(back, traj);
    }

    #[test]
    fn malformed_rows_report_line() {
        let bad = "t,u_1,y_1\n0,1,2\n1,x,3\n";
        let err = read_trajectory(bad.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
        assert!(read_trajectory("t,u_1\n0,1\n".as_bytes()).is_err());
        assert!(read_trajectory("t,u_1,y_1\n1,1,2\n".as_bytes()).is_err());
    }
}
