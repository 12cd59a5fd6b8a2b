//! Legacy-VTK structured-points and flat CSV serialization of grid fields.

use std::io::{BufRead, Write};

use thiserror::Error;

use crate::grid::{GridError, GridField, GridSpec};

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Writes an ASCII legacy-VTK structured-points file. VTK orders points with
/// `x1` fastest, the reverse of the in-memory layout.
pub fn write_vtk<W: Write>(field: &GridField, name: &str, mut w: W) -> Result<(), IoError> {
    let s = field.spec();
    let h = s.h();
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "{name}")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET STRUCTURED_POINTS")?;
    writeln!(w, "DIMENSIONS {} {} {}", s.n[0], s.n[1], s.n[2])?;
    writeln!(w, "ORIGIN {} {} {}", s.lo[0], s.lo[1], s.lo[2])?;
    writeln!(w, "SPACING {} {} {}", h[0], h[1], h[2])?;
    writeln!(w, "POINT_DATA {}", s.len())?;
    writeln!(w, "SCALARS {name} double 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for k in 0..s.n[2] {
        for j in 0..s.n[1] {
            for i in 0..s.n[0] {
                writeln!(w, "{}", field.at(i, j, k))?;
            }
        }
    }
    Ok(())
}

/// Reads a file produced by [`write_vtk`].
pub fn read_vtk<R: BufRead>(r: R) -> Result<GridField, IoError> {
    let mut dims: Option<[usize; 3]> = None;
    let mut origin: Option<[f64; 3]> = None;
    let mut spacing: Option<[f64; 3]> = None;
    let mut values = Vec::new();
    let mut in_data = false;
    for (no, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = no + 1;
        let t = line.trim();
        if t.is_empty() || no < 2 {
            continue;
        }
        if in_data {
            for tok in t.split_whitespace() {
                values.push(tok.parse::<f64>().map_err(|e| IoError::Parse { line: lineno, msg: e.to_string() })?);
            }
            continue;
        }
        let mut it = t.split_whitespace();
        let key = it.next().unwrap_or("");
        let rest: Vec<&str> = it.collect();
        let triple_f = |rest: &[&str]| -> Result<[f64; 3], IoError> {
            if rest.len() != 3 {
                return Err(IoError::Parse { line: lineno, msg: format!("expected three values after {key}") });
            }
            let mut out = [0.0; 3];
            for (o, s) in out.iter_mut().zip(rest) {
                *o = s.parse().map_err(|_| IoError::Parse { line: lineno, msg: format!("bad number `{s}`") })?;
            }
            Ok(out)
        };
        match key {
            "ASCII" | "DATASET" | "POINT_DATA" | "SCALARS" => {}
            "DIMENSIONS" => {
                let f = triple_f(&rest)?;
                dims = Some(f.map(|v| v as usize));
            }
            "ORIGIN" => origin = Some(triple_f(&rest)?),
            "SPACING" => spacing = Some(triple_f(&rest)?),
            "LOOKUP_TABLE" => in_data = true,
            other => return Err(IoError::Parse { line: lineno, msg: format!("unexpected keyword `{other}`") }),
        }
    }
    let missing = |what: &str| IoError::Parse { line: 0, msg: format!("missing {what}") };
    let n = dims.ok_or_else(|| missing("DIMENSIONS"))?;
    let lo = origin.ok_or_else(|| missing("ORIGIN"))?;
    let h = spacing.ok_or_else(|| missing("SPACING"))?;
    let hi = std::array::from_fn(|a| lo[a] + h[a] * (n[a].max(1) - 1) as f64);
    let spec = GridSpec::new(lo, hi, n)?;
    if values.len() != spec.len() {
        return Err(GridError::LengthMismatch { expected: spec.len(), got: values.len() }.into());
    }
    let mut data = vec![0.0; spec.len()];
    let mut src = values.into_iter();
    for k in 0..n[2] {
        for j in 0..n[1] {
            for i in 0..n[0] {
                data[spec.index(i, j, k)] = src.next().unwrap_or(0.0);
            }
        }
    }
    Ok(GridField::new(spec, data)?)
}

/// Flat CSV with header `index,x1,x2,x3,value`, one row per node.
pub fn write_csv<W: Write>(field: &GridField, mut w: W) -> Result<(), IoError> {
    let s = field.spec();
    writeln!(w, "index,x1,x2,x3,value")?;
    for (i, v) in field.data().iter().enumerate() {
        let x = s.point(i);
        writeln!(w, "{i},{},{},{},{v}", x.x1, x.x2, x.x3)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field() -> GridField {
        let spec = GridSpec::new([-1.0, -0.5, 0.0], [1.0, 0.5, 0.25], [8, 9, 10]).unwrap();
        GridField::from_fn(spec, |x| x.x1 * 3.0 + x.x2 * x.x3 - 0.1).unwrap()
    }

    #[test]
    fn vtk_roundtrip() {
        let f = field();
        let mut buf = Vec::new();
        write_vtk(&f, "u", &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# vtk DataFile Version 3.0\nu\nASCII\n"));
        assert!(text.contains("DIMENSIONS 8 9 10\n"));
        let g = read_vtk(buf.as_slice()).unwrap();
        assert_eq!(g.data(), f.data());
        for a in 0..3 {
            assert!((g.spec().hi[a] - f.spec().hi[a]).abs() < 1e-12);
        }
    }

    #[test]
    fn vtk_rejects_garbage() {
        let bad = "# vtk\nx\nASCII\nDATASET STRUCTURED_POINTS\nDIMENSIONS 8 8\n";
        assert!(matches!(read_vtk(bad.as_bytes()), Err(IoError::Parse { line: 5, .. })));
        let short = "# vtk\nx\nASCII\nDIMENSIONS 8 8 8\nORIGIN 0 0 0\nSPACING 1 1 1\nLOOKUP_TABLE default\n1\n";
        assert!(matches!(read_vtk(short.as_bytes()), Err(IoError::Grid(GridError::LengthMismatch { .. }))));
    }

    #[test]
    fn csv_layout() {
        let f = field();
        let mut buf = Vec::new();
        write_csv(&f, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "index,x1,x2,x3,value");
        assert_eq!(lines.len(), f.spec().len() + 1);
        assert!(lines[2].starts_with("1,-1,-0.5,0.027777777777777776,"));
        assert!(!text.contains('\r'));
    }
}
