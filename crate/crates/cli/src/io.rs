//! CSV input and file output helpers.
//!
//! Input files hold one row per exporter-importer-period cell with columns
//! `exporter`, `importer`, `period`, the outcome and the regressors named in
//! the formula. Other columns are ignored.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use gravity_ppml_core::{build_panel, PanelData, Record};

use crate::config::Formula;
use crate::error::{CliError, CliResult};

const EXPORTER: &[&str] = &["exporter", "origin", "exp"];
const IMPORTER: &[&str] = &["importer", "destination", "imp"];
const PERIOD: &[&str] = &["period", "year", "time"];

fn find(headers: &csv::StringRecord, names: &[&str]) -> Option<usize> {
    names
        .iter()
        .find_map(|n| headers.iter().position(|h| h.trim().eq_ignore_ascii_case(n)))
}

fn column(headers: &csv::StringRecord, name: &str) -> CliResult<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| CliError::Config(format!("unknown column {name:?}")))
}

fn number(field: &str, col: &str, row: usize) -> CliResult<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| CliError::Data(format!("row {row}: column {col:?} holds {field:?}, not a number")))
}

/// Parses CSV text into records ordered as in the file.
pub fn parse_records<R: Read>(reader: R, formula: &Formula) -> CliResult<Vec<Record>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let role = |names: &[&str]| {
        find(&headers, names).ok_or_else(|| {
            CliError::Data(format!("missing identifier column, expected one of {}", names.join(", ")))
        })
    };
    let (ie, ii, ip) = (role(EXPORTER)?, role(IMPORTER)?, role(PERIOD)?);
    let iy = column(&headers, &formula.response)?;
    let ix: Vec<usize> = formula.regressors.iter().map(|r| column(&headers, r)).collect::<CliResult<_>>()?;
    let mut out = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = n + 2;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let mut x = Vec::with_capacity(ix.len());
        for (c, name) in ix.iter().zip(&formula.regressors) {
            x.push(number(field(*c), name, row)?);
        }
        out.push(Record {
            exporter: field(ie).to_string(),
            importer: field(ii).to_string(),
            period: field(ip).to_string(),
            y: number(field(iy), &formula.response, row)?,
            x,
        });
    }
    Ok(out)
}

pub fn read_panel(path: &Path, formula: &Formula) -> CliResult<PanelData> {
    let file = fs::File::open(path).map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?;
    let records = parse_records(file, formula)?;
    Ok(build_panel(&records, &formula.regressors)?)
}

/// Serializes records in the input layout, at full precision.
pub fn records_to_csv(records: &[Record], formula: &Formula) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut head = vec!["exporter".to_string(), "importer".into(), "period".into(), formula.response.clone()];
    head.extend(formula.regressors.iter().cloned());
    w.write_record(&head)?;
    for r in records {
        let mut row = vec![r.exporter.clone(), r.importer.clone(), r.period.clone(), r.y.to_string()];
        row.extend(r.x.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Data(e.to_string()))
}

/// Present cells of a panel as records.
pub fn panel_records(panel: &PanelData) -> Vec<Record> {
    let t = panel.n_periods();
    let k = panel.k();
    let mut out = Vec::new();
    for p in &panel.pairs {
        for s in 0..t {
            if p.present[s] {
                out.push(Record {
                    exporter: panel.exporters[p.i].clone(),
                    importer: panel.importers[p.j].clone(),
                    period: panel.periods[s].clone(),
                    y: p.y[s],
                    x: (0..k).map(|r| p.x_at(s, r, k)).collect(),
                });
            }
        }
    }
    out
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))
}

/// Writes `contents` to `dir/name` and returns the path.
pub fn write_file(dir: &Path, name: &str, contents: &str) -> CliResult<PathBuf> {
    ensure_dir(dir)?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

pub fn read_to_string(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn formula() -> Formula {
        Formula::parse("trade ~ fta").unwrap()
    }

    #[test]
    fn reads_aliases_and_ignores_extra_columns() {
        let text = "origin,destination,year,trade,fta,note\nA,B,2000,1.5,0,x\nB,A,2000,2,1,y\n";
        let recs = parse_records(text.as_bytes(), &formula()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].exporter, "B");
        assert_eq!(recs[1].y, 2.0);
        assert_eq!(recs[1].x, vec![1.0]);
    }

    #[test]
    fn unknown_column_is_a_config_error() {
        let text = "exporter,importer,period,trade\nA,B,1,1\n";
        let err = parse_records(text.as_bytes(), &formula()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("unknown column"));
    }

    #[test]
    fn non_numeric_cell_reports_row() {
        let text = "exporter,importer,period,trade,fta\nA,B,1,abc,0\n";
        let err = parse_records(text.as_bytes(), &formula()).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("row 2"));
    }
}
