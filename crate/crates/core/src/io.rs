//! Delimited-text and JSON file formats.
//!
//! Catalogue CSV: `id,full_price,stock_units,sold_units,group,unit_cost`
//! followed by any covariate columns. Prices are integer minor units.
//!
//! History CSV: `product_id,group,week,depth,sales` followed by feature
//! columns in schema order.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::demand::{History, TrainingRecord};
use crate::domain::{Assignment, Catalogue, Money, Product};
use crate::error::{Error, Result};
use crate::experiment::PolicyArm;
use crate::optimizer::{Arm, OptimizedEvent};

pub const CATALOGUE_COLUMNS: [&str; 6] = ["id", "full_price", "stock_units", "sold_units", "group", "unit_cost"];
pub const HISTORY_COLUMNS: [&str; 5] = ["product_id", "group", "week", "depth", "sales"];

fn parse<T: std::str::FromStr>(field: &str, column: &str, line: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    field.trim().parse().map_err(|e| Error::Parse { line, message: format!("column `{column}`: {e} (got `{field}`)") })
}

fn check_header(headers: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    for (i, want) in expected.iter().enumerate() {
        match headers.get(i) {
            Some(h) if h.trim() == *want => {}
            got => {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("column {} must be `{want}`, found `{}`", i + 1, got.unwrap_or("")),
                })
            }
        }
    }
    Ok(())
}

/// Reads a catalogue CSV. Errors carry the 1-based file line.
pub fn read_catalogue_csv<R: Read>(reader: R, period: i64) -> Result<Catalogue> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    check_header(&headers, &CATALOGUE_COLUMNS)?;
    let covariates: Vec<String> = headers.iter().skip(CATALOGUE_COLUMNS.len()).map(str::to_string).collect();
    let mut products = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Parse { line, message: e.to_string() })?;
        if row.len() != headers.len() {
            return Err(Error::Parse { line, message: format!("expected {} fields, found {}", headers.len(), row.len()) });
        }
        let mut p = Product::new(
            &row[0],
            Money(parse(&row[1], "full_price", line)?),
            parse(&row[2], "stock_units", line)?,
            parse(&row[3], "sold_units", line)?,
            &row[4],
            Money(parse(&row[5], "unit_cost", line)?),
        );
        for (j, name) in covariates.iter().enumerate() {
            let field = &row[CATALOGUE_COLUMNS.len() + j];
            if !field.is_empty() {
                p.covariates.insert(name.clone(), parse(field, name, line)?);
            }
        }
        p.validate().map_err(|e| Error::Parse { line, message: e.to_string() })?;
        products.push(p);
    }
    Catalogue::new(period, products)
}

pub fn write_catalogue_csv<W: Write>(catalogue: &Catalogue, writer: W) -> Result<()> {
    let names: BTreeSet<&str> =
        catalogue.products().iter().flat_map(|p| p.covariates.keys().map(String::as_str)).collect();
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CATALOGUE_COLUMNS.iter().copied().chain(names.iter().copied()))?;
    for p in catalogue.products() {
        let mut row = vec![
            p.id.clone(),
            p.full_price.minor().to_string(),
            p.stock_units.to_string(),
            p.sold_units.to_string(),
            p.group.clone(),
            p.unit_cost.minor().to_string(),
        ];
        row.extend(names.iter().map(|n| p.covariates.get(*n).map(|v| v.to_string()).unwrap_or_default()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a catalogue from `.csv` or `.json` by extension.
pub fn read_catalogue(path: &Path) -> Result<Catalogue> {
    let file = File::open(path)?;
    match extension(path).as_str() {
        "csv" => read_catalogue_csv(file, 0),
        "json" => Ok(serde_json::from_reader(file)?),
        other => Err(Error::invalid(format!("unsupported catalogue format `{other}` (use .csv or .json)"))),
    }
}

pub fn write_catalogue(catalogue: &Catalogue, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    match extension(path).as_str() {
        "csv" => write_catalogue_csv(catalogue, file),
        "json" => Ok(serde_json::to_writer_pretty(file, catalogue)?),
        other => Err(Error::invalid(format!("unsupported catalogue format `{other}` (use .csv or .json)"))),
    }
}

pub(crate) fn extension(path: &Path) -> String {
    path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase()
}

pub fn read_history_csv<R: Read>(reader: R) -> Result<History> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    check_header(&headers, &HISTORY_COLUMNS)?;
    let features: Vec<String> = headers.iter().skip(HISTORY_COLUMNS.len()).map(str::to_string).collect();
    let mut interned: BTreeMap<String, Arc<str>> = BTreeMap::new();
    let mut intern = |s: &str| interned.entry(s.to_string()).or_insert_with(|| Arc::from(s)).clone();
    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Parse { line, message: e.to_string() })?;
        if row.len() != headers.len() {
            return Err(Error::Parse { line, message: format!("expected {} fields, found {}", headers.len(), row.len()) });
        }
        let record = TrainingRecord {
            product_id: intern(&row[0]),
            group: intern(&row[1]),
            week: parse(&row[2], "week", line)?,
            depth: parse(&row[3], "depth", line)?,
            sales: parse(&row[4], "sales", line)?,
            features: features
                .iter()
                .enumerate()
                .map(|(j, name)| parse(&row[HISTORY_COLUMNS.len() + j], name, line))
                .collect::<Result<_>>()?,
        };
        record.validate().map_err(|e| Error::Parse { line, message: e.to_string() })?;
        records.push(record);
    }
    History::new(features, records)
}

pub fn write_history_csv<W: Write>(history: &History, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(HISTORY_COLUMNS.iter().copied().chain(history.features.iter().map(String::as_str)))?;
    for r in &history.records {
        let mut row = vec![r.product_id.to_string(), r.group.to_string(), r.week.to_string(), r.depth.to_string(), r.sales.to_string()];
        row.extend(r.features.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_history(path: &Path) -> Result<History> {
    read_history_csv(File::open(path)?)
}

/// `product_id,depth,discounted_price`, price in minor units.
pub fn write_solution_csv<W: Write>(catalogue: &Catalogue, assignment: &Assignment, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["product_id", "depth", "discounted_price"])?;
    for (id, depth) in assignment.iter() {
        let p = catalogue.get(id).ok_or_else(|| Error::UnknownProduct(id.to_string()))?;
        let price = Money::from_major(p.discounted_price(depth)).minor();
        w.write_record([id.to_string(), depth.to_string(), price.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `product_id,depth[,...]` rows back into an assignment.
pub fn read_solution_csv<R: Read>(reader: R) -> Result<Assignment> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    check_header(rdr.headers()?, &["product_id", "depth"])?;
    let mut out = Assignment::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Parse { line, message: e.to_string() })?;
        let depth: f64 = parse(row.get(1).unwrap_or(""), "depth", line)?;
        out.insert(&row[0], depth).map_err(|e| Error::Parse { line, message: e.to_string() })?;
    }
    Ok(out)
}

/// `product_id,arm,ithax_depth,final_depth,expected_sales,expected_profit`.
pub fn write_event_csv<W: Write>(event: &OptimizedEvent, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["product_id", "arm", "ithax_depth", "final_depth", "expected_sales", "expected_profit"])?;
    for l in &event.lines {
        let arm = match l.arm {
            Arm::Control => "control",
            Arm::Treatment => "treatment",
        };
        w.write_record([
            l.product_id.clone(),
            arm.to_string(),
            l.ithax_depth.to_string(),
            l.final_depth.to_string(),
            l.expected_sales.to_string(),
            l.expected_profit.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-product realized profit: `arm,product_id,depth,profit`.
pub fn write_profits_csv<W: Write>(arms: &[PolicyArm], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["arm", "product_id", "depth", "profit"])?;
    for arm in arms {
        for ((id, depth), profit) in arm.assignment.iter().zip(&arm.profits) {
            w.write_record([arm.name.clone(), id.to_string(), depth.to_string(), profit.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
