//! CSV form of a linearized grid (per unit): `K.csv`, `b.csv`,
//! `Lambda.csv`, `lambda.csv` and `sigma.csv`.

use std::fs::File;
use std::path::Path;

use anyhow::{Context, Result};
use mpcard_core::{Error, LinearizedGrid};
use nalgebra::{DMatrix, DVector};

fn terminal_columns(m: usize) -> Vec<String> {
    let mut cols: Vec<String> = (1..=m).map(|i| format!("P_c_{i}")).collect();
    cols.extend((1..=m).map(|i| format!("Q_c_{i}")));
    cols
}

fn create(dir: &Path, name: &str) -> Result<csv::Writer<File>> {
    let path = dir.join(name);
    csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))
}

pub fn write_dir(grid: &LinearizedGrid, terminals: &[String], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let m = terminals.len();
    let cols = terminal_columns(m);

    let mut w = create(dir, "K.csv")?;
    w.write_record(std::iter::once("bus".to_string()).chain(cols.iter().cloned()))?;
    for (r, bus) in grid.bus_ids.iter().enumerate() {
        w.write_record(std::iter::once(bus.clone()).chain(grid.k.row(r).iter().map(f64::to_string)))?;
    }
    w.flush()?;

    let mut w = create(dir, "b.csv")?;
    w.write_record(["bus", "b"])?;
    for (bus, v) in grid.bus_ids.iter().zip(grid.b.iter()) {
        w.write_record([bus.clone(), v.to_string()])?;
    }
    w.flush()?;

    let mut w = create(dir, "Lambda.csv")?;
    w.write_record(std::iter::once("var".to_string()).chain(cols.iter().cloned()))?;
    for (r, name) in cols.iter().enumerate() {
        w.write_record(std::iter::once(name.clone()).chain(grid.loss.quad.row(r).iter().map(f64::to_string)))?;
    }
    w.flush()?;

    let mut w = create(dir, "lambda.csv")?;
    w.write_record(["var", "lambda"])?;
    for (name, v) in cols.iter().zip(grid.loss.lin.iter()) {
        w.write_record([name.clone(), v.to_string()])?;
    }
    w.flush()?;

    let mut w = create(dir, "sigma.csv")?;
    w.write_record(["sigma"])?;
    w.write_record([grid.loss.sigma.to_string()])?;
    w.flush()?;
    Ok(())
}

/// Rows of a labelled numeric table, checked against the expected shape.
fn read_table(dir: &Path, name: &str, rows: usize, cols: usize) -> Result<Vec<Vec<f64>>> {
    let path = dir.join(name);
    let file = File::open(&path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let mut rdr = csv::Reader::from_reader(file);
    let header_len = rdr.headers()?.len();
    let label = usize::from(header_len == cols + 1);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .skip(label)
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse { locus: format!("{name} row {}", i + 1), message: e.to_string() })?;
        if row.len() != cols {
            return Err(Error::Parse { locus: format!("{name} row {}", i + 1), message: format!("expected {cols} values") }.into());
        }
        out.push(row);
    }
    if out.len() != rows {
        return Err(Error::Parse { locus: name.into(), message: format!("expected {rows} rows, found {}", out.len()) }.into());
    }
    Ok(out)
}

/// Replaces the terminal models of `grid` with the contents of `dir`.
pub fn read_dir(grid: &mut LinearizedGrid, dir: &Path) -> Result<()> {
    let n = grid.bus_ids.len();
    let m2 = 2 * grid.n_terminals();
    let k = read_table(dir, "K.csv", n, m2)?;
    let b = read_table(dir, "b.csv", n, 1)?;
    let quad = read_table(dir, "Lambda.csv", m2, m2)?;
    let lin = read_table(dir, "lambda.csv", m2, 1)?;
    let sigma = read_table(dir, "sigma.csv", 1, 1)?;
    grid.k = DMatrix::from_fn(n, m2, |r, c| k[r][c]);
    grid.b = DVector::from_fn(n, |r, _| b[r][0]);
    grid.loss.quad = DMatrix::from_fn(m2, m2, |r, c| quad[r][c]);
    grid.loss.lin = DVector::from_fn(m2, |r, _| lin[r][0]);
    grid.loss.sigma = sigma[0][0];
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use mpcard_core::fixtures;

    #[test]
    fn round_trip_is_exact() {
        let net = fixtures::two_feeder_5bus();
        let pcc: Vec<String> = fixtures::FIVE_BUS_PCC.iter().map(|s| s.to_string()).collect();
        let grid = LinearizedGrid::build(&net, &pcc).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dir(&grid, &pcc, dir.path()).unwrap();
        let mut back = grid.clone();
        back.k.fill(0.0);
        back.loss.quad.fill(0.0);
        read_dir(&mut back, dir.path()).unwrap();
        assert_eq!(back.k, grid.k);
        assert_eq!(back.b, grid.b);
        assert_eq!(back.loss.quad, grid.loss.quad);
        assert_eq!(back.loss.lin, grid.loss.lin);
        assert_eq!(back.loss.sigma, grid.loss.sigma);
    }

    #[test]
    fn wrong_shape_is_a_parse_error() {
        let net = fixtures::two_feeder_5bus();
        let pcc: Vec<String> = fixtures::FIVE_BUS_PCC.iter().map(|s| s.to_string()).collect();
        let grid = LinearizedGrid::build(&net, &pcc).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dir(&grid, &pcc, dir.path()).unwrap();
        std::fs::write(dir.path().join("sigma.csv"), "sigma\n1\n2\n").unwrap();
        let mut g = grid.clone();
        let err = read_dir(&mut g, dir.path()).unwrap_err();
        assert!(matches!(err.downcast_ref::<Error>(), Some(Error::Parse { .. })));
    }
}
