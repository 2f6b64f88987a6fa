//! CSV formats: input profiles and mission-profile output.

use std::io::{Read, Write};

use super::{MissionProfile, TimestepStatus};
use crate::error::{Error, Result};

/// Normalized input series: one column per bus or DER id.
#[derive(Clone, Debug, PartialEq)]
pub struct ProfileTable {
    pub columns: Vec<String>,
    /// `[t][column]`.
    pub rows: Vec<Vec<f64>>,
}

impl ProfileTable {
    pub fn tau(&self) -> usize {
        self.rows.len()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }
}

/// Reads `timestep,<id>,...` with one row per timestep, in order from 0.
pub fn read_profiles_csv<R: Read>(input: R) -> Result<ProfileTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = rdr.headers()?.clone();
    if header.get(0) != Some("timestep") {
        return Err(Error::parse("header", "first column must be 'timestep'"));
    }
    let columns: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    if columns.is_empty() {
        return Err(Error::parse("header", "no profile columns"));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let t: usize = rec
            .get(0)
            .unwrap_or("")
            .parse()
            .map_err(|_| Error::parse(format!("line {line}"), "timestep is not an integer"))?;
        if t != i {
            return Err(Error::parse(format!("line {line}"), format!("expected timestep {i}, found {t}")));
        }
        if rec.len() != columns.len() + 1 {
            return Err(Error::parse(format!("line {line}"), "wrong number of fields"));
        }
        let row = rec
            .iter()
            .skip(1)
            .zip(&columns)
            .map(|(v, c)| {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::parse(format!("line {line}, column '{c}'"), format!("'{v}' is not a number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::parse("body", "no timesteps"));
    }
    Ok(ProfileTable { columns, rows })
}

pub fn write_profiles_csv<W: Write>(out: W, table: &ProfileTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["timestep".to_string()];
    header.extend(table.columns.iter().cloned());
    w.write_record(&header)?;
    for (t, row) in table.rows.iter().enumerate() {
        let mut rec = vec![t.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// `t,P_c_1..m,Q_c_1..m,S_c_1..m,EC,status,obj,ntwk_loss,conv_loss`.
pub fn write_mission_csv<W: Write>(out: W, p: &MissionProfile) -> Result<()> {
    let m = p.m();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    for prefix in ["P_c", "Q_c", "S_c"] {
        header.extend((1..=m).map(|i| format!("{prefix}_{i}")));
    }
    header.extend(["EC", "status", "obj", "ntwk_loss", "conv_loss"].map(String::from));
    w.write_record(&header)?;
    for t in 0..p.tau() {
        let mut rec = vec![t.to_string()];
        for series in [&p.p_mp, &p.q_mp, &p.s_mp] {
            rec.extend(series[t].iter().map(|v| v.to_string()));
        }
        rec.push(p.ec_series[t].to_string());
        rec.push(p.status[t].to_string());
        rec.push(p.objective[t].to_string());
        rec.push(p.ntwk_loss[t].to_string());
        rec.push(p.conv_loss[t].to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Contents of a mission-profile CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct MissionCsv {
    pub m: usize,
    pub s_mp: Vec<Vec<f64>>,
    pub ec: Vec<usize>,
    pub status: Vec<TimestepStatus>,
    pub objective: Vec<f64>,
}

pub fn read_mission_csv<R: Read>(input: R) -> Result<MissionCsv> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    let m = header.iter().filter(|h| h.starts_with("S_c_")).count();
    let expected = 1 + 3 * m + 5;
    if m == 0 || header.len() != expected || header.get(0) != Some("t") {
        return Err(Error::parse("header", "not a mission-profile CSV"));
    }
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::parse("header", format!("missing column '{name}'")))
    };
    let s_cols: Vec<usize> = (1..=m).map(|i| col(&format!("S_c_{i}"))).collect::<Result<_>>()?;
    let (ec_col, status_col, obj_col) = (col("EC")?, col("status")?, col("obj")?);
    let mut out = MissionCsv {
        m,
        s_mp: Vec::new(),
        ec: Vec::new(),
        status: Vec::new(),
        objective: Vec::new(),
    };
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let num = |j: usize| -> Result<f64> {
            rec.get(j)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::parse(format!("line {line}, column '{}'", &header[j]), "not a number"))
        };
        out.s_mp.push(s_cols.iter().map(|&j| num(j)).collect::<Result<_>>()?);
        out.ec.push(
            rec.get(ec_col)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::parse(format!("line {line}, column 'EC'"), "not an integer"))?,
        );
        out.status.push(TimestepStatus::parse(rec.get(status_col).unwrap_or(""))?);
        out.objective.push(num(obj_col)?);
    }
    Ok(out)
}
