//! Deterministic text output: fixed float formatting, sorted-key JSON, CSV
//! field files and atomic writes.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::extract::{BoundaryLattice, TraceField};
use crate::halfspace::{Field, GridSpec, HalfSpaceGrid};
use crate::scalar::Real;

/// Shortest-independent rendering with 17 significant digits: fixed notation
/// for exponents in `[-5, 17)`, scientific otherwise. Non-finite values
/// become `null`.
pub fn format_float(x: f64) -> String {
    if !x.is_finite() {
        return "null".into();
    }
    if x == 0.0 {
        return if x.is_sign_negative() {
            "-0.0".into()
        } else {
            "0.0".into()
        };
    }
    let sci = format!("{x:.16e}");
    let exp: i32 = sci
        .rsplit('e')
        .next()
        .and_then(|e| e.parse().ok())
        .unwrap_or(0);
    if (-5..17).contains(&exp) {
        let s = format!("{:.*}", (16 - exp).max(0) as usize, x);
        if s.contains('.') {
            s
        } else {
            s + ".0"
        }
    } else {
        sci
    }
}

fn write_value(out: &mut String, v: &Value) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if n.is_f64() {
                out.push_str(&format_float(n.as_f64().unwrap_or(f64::NAN)));
            } else {
                let _ = write!(out, "{n}");
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).unwrap_or_default()),
        Value::Array(a) => {
            out.push('[');
            for (i, x) in a.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(out, x);
            }
            out.push(']');
        }
        Value::Object(m) => {
            let mut keys: Vec<&String> = m.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(k).unwrap_or_default());
                out.push(':');
                write_value(out, &m[k]);
            }
            out.push('}');
        }
    }
}

/// Compact JSON with sorted keys and [`format_float`] numbers.
pub fn canonical_json<S: Serialize + ?Sized>(value: &S) -> Result<String> {
    let v = serde_json::to_value(value)?;
    let mut out = String::new();
    write_value(&mut out, &v);
    Ok(out)
}

/// Writes through a sibling temporary file and renames it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

const FIELD_TAG: &str = "# field ";
const TRACE_TAG: &str = "# trace ";

/// CSV of a volume field: a `# field {grid spec}` line, a header, then one
/// row `layer,node,y,x_1..x_n,value` per node in storage order.
pub fn field_to_csv<T: Real>(u: &Field<T>) -> Result<String> {
    let grid = u.grid();
    let mut out = format!("{FIELD_TAG}{}\nlayer,node,y", canonical_json(grid.spec())?);
    for a in 0..grid.n() {
        let _ = write!(out, ",x{a}");
    }
    out.push_str(",value\n");
    let ys = grid.y();
    let nb = grid.boundary_len();
    for k in 0..=grid.layers() {
        for i in 0..nb {
            let _ = write!(out, "{k},{i},{}", format_float(ys[k].as_f64()));
            for c in grid.point(i) {
                let _ = write!(out, ",{}", format_float(c.as_f64()));
            }
            let _ = writeln!(out, ",{}", format_float(u.values()[k * nb + i].as_f64()));
        }
    }
    Ok(out)
}

/// CSV of a boundary function on a lattice: `# trace {lattice}` header line,
/// then rows `node,x_1..x_n,value`.
pub fn trace_to_csv<T: Real>(u: &TraceField<T>) -> Result<String> {
    let mut out = format!("{TRACE_TAG}{}\nnode", canonical_json(&u.lattice)?);
    for a in 0..u.lattice.n {
        let _ = write!(out, ",x{a}");
    }
    out.push_str(",value\n");
    for (i, v) in u.values.iter().enumerate() {
        let _ = write!(out, "{i}");
        for c in u.lattice.point(i) {
            let _ = write!(out, ",{}", format_float(c.as_f64()));
        }
        let _ = writeln!(out, ",{}", format_float(v.as_f64()));
    }
    Ok(out)
}

/// Contents of a CSV written by [`field_to_csv`] or [`trace_to_csv`].
pub enum CsvData<T: Real> {
    Field(Field<T>),
    Trace(TraceField<T>),
}

fn parse_values<T: Real>(body: &str, expected: usize) -> Result<Vec<T>> {
    let mut vals = Vec::with_capacity(expected);
    for (ln, line) in body
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let last = line.rsplit(',').next().unwrap_or("").trim();
        let v: f64 = last
            .parse()
            .map_err(|_| Error::Parse(format!("row {}: bad value {last:?}", ln + 1)))?;
        vals.push(
            T::from_f64(v)
                .ok_or_else(|| Error::Parse(format!("row {}: value out of range", ln + 1)))?,
        );
    }
    if vals.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            got: vals.len(),
        });
    }
    Ok(vals)
}

/// Parses either CSV flavour, keyed on its first line.
pub fn csv_from_str<T: Real>(text: &str) -> Result<CsvData<T>> {
    let mut parts = text.splitn(3, '\n');
    let first = parts.next().unwrap_or("");
    let _header = parts
        .next()
        .ok_or_else(|| Error::Parse("missing CSV header".into()))?;
    let body = parts.next().unwrap_or("");
    if let Some(spec) = first.strip_prefix(FIELD_TAG) {
        let spec: GridSpec<T> =
            serde_json::from_str(spec).map_err(|e| Error::Parse(format!("grid header: {e}")))?;
        let grid = Arc::new(HalfSpaceGrid::new(spec)?);
        let vals = parse_values(body, grid.len())?;
        Ok(CsvData::Field(Field::new(grid, vals)?))
    } else if let Some(lat) = first.strip_prefix(TRACE_TAG) {
        let lat: BoundaryLattice<T> =
            serde_json::from_str(lat).map_err(|e| Error::Parse(format!("lattice header: {e}")))?;
        lat.check()?;
        let vals = parse_values(body, lat.len())?;
        Ok(CsvData::Trace(TraceField::new(lat, vals)?))
    } else {
        Err(Error::Parse(
            "first line must be a '# field' or '# trace' header".into(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_is_fixed_width_and_round_trips() {
        assert_eq!(format_float(1.0 / 3.0), "0.33333333333333331");
        assert_eq!(format_float(2.0), "2.0000000000000000");
        assert_eq!(format_float(0.0), "0.0");
        assert_eq!(format_float(f64::NAN), "null");
        assert_eq!(format_float(1e-7), "9.9999999999999995e-8");
        for x in [1.0 / 3.0, 1e-7, 123456.789, -2.5e20, 7e-300, f64::MAX] {
            assert_eq!(format_float(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn canonical_json_sorts_keys() {
        let v = serde_json::json!({"b": 1, "a": [0.5, true, null], "c": {"z": "x", "y": 2.0}});
        assert_eq!(
            canonical_json(&v).unwrap(),
            r#"{"a":[0.50000000000000000,true,null],"b":1,"c":{"y":2.0000000000000000,"z":"x"}}"#
        );
    }

    #[test]
    fn trace_csv_round_trip() {
        let lat = BoundaryLattice::new(2, 1.5f64, 6).unwrap();
        let u = TraceField::from_fn(lat, |x| x[0] * x[1] + 1.0 / 3.0).unwrap();
        match csv_from_str::<f64>(&trace_to_csv(&u).unwrap()).unwrap() {
            CsvData::Trace(v) => assert_eq!(v, u),
            CsvData::Field(_) => panic!("wrong flavour"),
        }
    }

    #[test]
    fn field_csv_round_trip() {
        let g = Arc::new(HalfSpaceGrid::new(GridSpec::cartesian(1, 0.25, 1.0, 4, 1.0, 3)).unwrap());
        let u = Field::from_fn(g, |x, y| x[0] - y / 7.0).unwrap();
        match csv_from_str::<f64>(&field_to_csv(&u).unwrap()).unwrap() {
            CsvData::Field(v) => assert_eq!(v.values(), u.values()),
            CsvData::Trace(_) => panic!("wrong flavour"),
        }
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = std::env::temp_dir().join(format!("fb-io-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let p = dir.join("out.txt");
        atomic_write(&p, b"one").unwrap();
        atomic_write(&p, b"two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn rejects_unknown_header() {
        assert!(matches!(
            csv_from_str::<f64>("x\ny\n"),
            Err(Error::Parse(_))
        ));
    }
}
