//! CSV reading and writing of datasets and predictions.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::gp::{prediction_interval, Dataset, PredictiveDistribution};
use crate::kernels::SpaceTimePoint;

const COLUMNS: [&str; 4] = ["x", "y", "t", "value"];

/// Reads `x,y,t,value` rows (any column order, extra columns ignored).
///
/// Repeated `(x, y, t)` rows are an error unless `allow_duplicates`.
pub fn read_dataset<R: Read>(reader: R, allow_duplicates: bool) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut idx = [0usize; 4];
    let mut missing = Vec::new();
    for (k, name) in COLUMNS.iter().enumerate() {
        match headers.iter().position(|h| h == *name) {
            Some(i) => idx[k] = i,
            None => missing.push(*name),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Data(format!("missing CSV columns: {}", missing.join(", "))));
    }
    let mut points = Vec::new();
    let mut values = Vec::new();
    let mut bad = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        // line 1 is the header
        let line = row + 2;
        let rec = rec?;
        let mut v = [0.0; 4];
        let mut ok = true;
        for k in 0..4 {
            let field = rec.get(idx[k]).unwrap_or("");
            match field.parse::<f64>() {
                Ok(x) if x.is_finite() => v[k] = x,
                _ => {
                    bad.push(format!("line {line}: {} = '{field}' is not a finite number", COLUMNS[k]));
                    ok = false;
                }
            }
        }
        if ok {
            points.push(SpaceTimePoint::new(v[0], v[1], v[2]));
            values.push(v[3]);
        }
    }
    if !bad.is_empty() {
        return Err(Error::Data(bad.join("; ")));
    }
    if points.is_empty() {
        return Err(Error::Data("dataset has no rows".into()));
    }
    let data = Dataset::new(points, values)?;
    if !allow_duplicates {
        let dups = data.duplicates();
        if !dups.is_empty() {
            let list: Vec<String> = dups
                .iter()
                .take(20)
                .map(|(a, b)| format!("lines {} and {}", a + 2, b + 2))
                .collect();
            return Err(Error::Data(format!(
                "{} duplicate (x, y, t) rows ({}); configure a nugget to allow them",
                dups.len(),
                list.join(", ")
            )));
        }
    }
    Ok(data)
}

/// Reads the `x,y,t` columns of a CSV; other columns are ignored.
pub fn read_points<R: Read>(reader: R) -> Result<Vec<SpaceTimePoint>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut idx = [0usize; 3];
    let mut missing = Vec::new();
    for (k, name) in COLUMNS[..3].iter().enumerate() {
        match headers.iter().position(|h| h == *name) {
            Some(i) => idx[k] = i,
            None => missing.push(*name),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Data(format!("missing CSV columns: {}", missing.join(", "))));
    }
    let mut points = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let mut v = [0.0; 3];
        for k in 0..3 {
            let field = rec.get(idx[k]).unwrap_or("");
            v[k] = field.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| {
                Error::Data(format!("line {}: {} = '{field}' is not a finite number", row + 2, COLUMNS[k]))
            })?;
        }
        points.push(SpaceTimePoint::new(v[0], v[1], v[2]));
    }
    if points.is_empty() {
        return Err(Error::Data("no target points".into()));
    }
    Ok(points)
}

pub fn read_dataset_path(path: &Path, allow_duplicates: bool) -> Result<Dataset> {
    let f = File::open(path).map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    read_dataset(f, allow_duplicates)
}

pub fn write_dataset<W: Write>(data: &Dataset, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(COLUMNS)?;
    for (p, v) in data.points.iter().zip(&data.values) {
        out.write_record([p.s[0].to_string(), p.s[1].to_string(), p.t.to_string(), v.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_dataset_path(data: &Dataset, path: &Path) -> Result<()> {
    write_dataset(data, File::create(path)?)
}

/// `x,y,t,mean,variance` followed by `lo_p,hi_p` for each requested `p`.
pub fn write_predictions<W: Write>(pd: &PredictiveDistribution, ps: &[f64], w: W) -> Result<()> {
    let intervals = ps
        .iter()
        .map(|&p| prediction_interval(pd, p))
        .collect::<Result<Vec<_>>>()?;
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = ["x", "y", "t", "mean", "variance"].iter().map(|s| s.to_string()).collect();
    for p in ps {
        header.push(format!("lo_{p}"));
        header.push(format!("hi_{p}"));
    }
    out.write_record(&header)?;
    for (i, tp) in pd.targets.iter().enumerate() {
        let mut rec = vec![
            tp.s[0].to_string(),
            tp.s[1].to_string(),
            tp.t.to_string(),
            pd.mean[i].to_string(),
            pd.variance[i].to_string(),
        ];
        for iv in &intervals {
            rec.push(iv[i].0.to_string());
            rec.push(iv[i].1.to_string());
        }
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads the `x,y,t,mean,variance` columns of a prediction file.
pub fn read_predictions<R: Read>(reader: R) -> Result<PredictiveDistribution> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let cols = ["x", "y", "t", "mean", "variance"];
    let mut idx = [0usize; 5];
    for (k, name) in cols.iter().enumerate() {
        idx[k] = headers
            .iter()
            .position(|h| h == *name)
            .ok_or_else(|| Error::Data(format!("prediction file lacks column '{name}'")))?;
    }
    let mut pd = PredictiveDistribution {
        targets: Vec::new(),
        mean: Vec::new(),
        variance: Vec::new(),
    };
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let mut v = [0.0; 5];
        for k in 0..5 {
            let field = rec.get(idx[k]).unwrap_or("");
            v[k] = field.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| {
                Error::Data(format!("line {}: {} = '{field}' is not a finite number", row + 2, cols[k]))
            })?;
        }
        if v[4] < 0.0 {
            return Err(Error::Data(format!("line {}: negative variance", row + 2)));
        }
        pd.targets.push(SpaceTimePoint::new(v[0], v[1], v[2]));
        pd.mean.push(v[3]);
        pd.variance.push(v[4]);
    }
    if pd.targets.is_empty() {
        return Err(Error::Data("prediction file has no rows".into()));
    }
    Ok(pd)
}
