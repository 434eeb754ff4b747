//! CSV formats.
//!
//! * footprints / matrices: `cell_id,tile_index,value`
//! * per-tile maps: `tile_index,value`
//! * per-cell counts: `cell_id,count`
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! write/read cycle is lossless and output is byte-stable.

use std::collections::HashMap;
use std::io::{Read, Write};

use super::{AssignmentMatrix, FootprintKind, FootprintSet, Grid, SparseMatrix};
use crate::error::{Error, Result};

fn csv_err(e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Parse(format!("{other:?}")),
        }
    } else {
        Error::Parse(e.to_string())
    }
}

fn parse<T: std::str::FromStr>(field: Option<&str>, what: &str, line: usize) -> Result<T> {
    let raw = field.ok_or_else(|| Error::Parse(format!("line {line}: missing {what}")))?;
    raw.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("line {line}: bad {what} {raw:?}")))
}

pub fn write_footprints<W: Write>(fs: &FootprintSet, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["cell_id", "tile_index", "value"]).map_err(csv_err)?;
    for cell in fs.cells() {
        for &(j, s) in cell.entries() {
            w.write_record([cell.id.as_str(), &j.to_string(), &s.to_string()]).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads footprints; cell order follows first appearance in the file.
pub fn read_footprints<R: Read>(grid: Grid, kind: FootprintKind, input: R) -> Result<FootprintSet> {
    let mut r = csv::Reader::from_reader(input);
    let mut order: Vec<String> = Vec::new();
    let mut cells: HashMap<String, Vec<(usize, f64)>> = HashMap::new();
    for (n, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let id: String = parse(rec.get(0), "cell_id", n + 2)?;
        let j = parse(rec.get(1), "tile_index", n + 2)?;
        let v = parse(rec.get(2), "value", n + 2)?;
        cells
            .entry(id.clone())
            .or_insert_with(|| {
                order.push(id);
                Vec::new()
            })
            .push((j, v));
    }
    let ordered = order.into_iter().map(|id| {
        let entries = cells.remove(&id).unwrap_or_default();
        (id, entries)
    });
    FootprintSet::new(grid, kind, ordered)
}

/// Writes the matrix with row indices as cell ids.
pub fn write_matrix<W: Write>(p: &AssignmentMatrix, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["cell_id", "tile_index", "value"]).map_err(csv_err)?;
    for (i, j, v) in p.matrix().triplets() {
        w.write_record([i.to_string(), j.to_string(), v.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix<R: Read>(rows: usize, cols: usize, input: R) -> Result<AssignmentMatrix> {
    let mut r = csv::Reader::from_reader(input);
    let mut triplets = Vec::new();
    for (n, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        triplets.push((
            parse(rec.get(0), "cell_id", n + 2)?,
            parse(rec.get(1), "tile_index", n + 2)?,
            parse(rec.get(2), "value", n + 2)?,
        ));
    }
    AssignmentMatrix::new(SparseMatrix::from_triplets(rows, cols, triplets)?)
}

pub fn write_tile_values<W: Write>(values: &[f64], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["tile_index", "value"]).map_err(csv_err)?;
    for (j, v) in values.iter().enumerate() {
        w.write_record([j.to_string(), v.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dense per-tile map; missing tiles are zero.
pub fn read_tile_values<R: Read>(tiles: usize, input: R) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = vec![0.0; tiles];
    for (n, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let j: usize = parse(rec.get(0), "tile_index", n + 2)?;
        if j >= tiles {
            return Err(Error::DimensionMismatch { expected: tiles, found: j + 1 });
        }
        out[j] = parse(rec.get(1), "value", n + 2)?;
    }
    Ok(out)
}

pub fn write_cell_counts<W: Write>(ids: &[String], counts: &[f64], out: W) -> Result<()> {
    if ids.len() != counts.len() {
        return Err(Error::DimensionMismatch { expected: ids.len(), found: counts.len() });
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["cell_id", "count"]).map_err(csv_err)?;
    for (id, c) in ids.iter().zip(counts) {
        w.write_record([id.as_str(), &c.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_cell_counts<R: Read>(input: R) -> Result<Vec<(String, f64)>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (n, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        out.push((parse(rec.get(0), "cell_id", n + 2)?, parse(rec.get(1), "count", n + 2)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn matrix_round_trip() {
        let p = AssignmentMatrix::from_dense(&[vec![1.0, 0.25, 0.0], vec![0.0, 0.75, 1.0]]).unwrap();
        let mut buf = Vec::new();
        write_matrix(&p, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("cell_id,tile_index,value\n0,0,1\n"));
        assert_eq!(read_matrix(2, 3, buf.as_slice()).unwrap(), p);
    }

    #[test]
    fn malformed_rows_report_line() {
        let err = read_tile_values(3, "tile_index,value\n0,1\n1,abc\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    proptest! {
        #[test]
        fn footprints_round_trip(weights in proptest::collection::vec(proptest::collection::vec(0.0f64..10.0, 6), 1..5)) {
            let grid = Grid::square(3, 2).unwrap();
            let cells = weights.into_iter().enumerate().map(|(i, w)| (format!("T{i}S0"), w.into_iter().enumerate().collect::<Vec<_>>()));
            let fs = FootprintSet::new(grid, FootprintKind::Continuous, cells).unwrap();
            let mut buf = Vec::new();
            write_footprints(&fs, &mut buf).unwrap();
            let back = read_footprints(grid, FootprintKind::Continuous, buf.as_slice()).unwrap();
            // Cells with empty support are not representable in the triplet format.
            let nonempty: Vec<_> = fs.cells().iter().filter(|c| !c.is_empty()).cloned().collect();
            prop_assert_eq!(back.cells(), nonempty.as_slice());
        }

        #[test]
        fn tile_values_round_trip(values in proptest::collection::vec(0.0f64..1e6, 1..40)) {
            let mut buf = Vec::new();
            write_tile_values(&values, &mut buf).unwrap();
            prop_assert_eq!(read_tile_values(values.len(), buf.as_slice()).unwrap(), values);
        }
    }
}
