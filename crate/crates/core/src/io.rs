//! CSV ingestion and emission of labelled matrices.
//!
//! Every file has a header row and a leading id column. The response file
//! is `N x M` with subject ids down the side and response ids across the
//! top; the row covariate file has one row per subject and the column
//! covariate file one row per response. Covariate rows are matched to the
//! response file by id.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model_fit::DatasetBundle;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMatrix {
    pub id_header: String,
    pub row_ids: Vec<String>,
    pub col_names: Vec<String>,
    pub data: Matrix,
}

impl LabeledMatrix {
    pub fn new(id_header: &str, row_ids: Vec<String>, col_names: Vec<String>, data: Matrix) -> Result<Self> {
        if row_ids.len() != data.nrows() || col_names.len() != data.ncols() {
            return Err(Error::DimMismatch(format!(
                "{} ids and {} names for a {}x{} matrix",
                row_ids.len(),
                col_names.len(),
                data.nrows(),
                data.ncols()
            )));
        }
        Ok(Self {
            id_header: id_header.to_string(),
            row_ids,
            col_names,
            data,
        })
    }

    /// Adds a leading column of ones named `intercept`.
    pub fn with_intercept(&self) -> Self {
        let (rows, cols) = self.data.shape();
        let data = Matrix::from_fn(rows, cols + 1, |i, j| if j == 0 { 1.0 } else { self.data[(i, j - 1)] });
        let mut col_names = vec!["intercept".to_string()];
        col_names.extend(self.col_names.iter().cloned());
        Self {
            id_header: self.id_header.clone(),
            row_ids: self.row_ids.clone(),
            col_names,
            data,
        }
    }

    /// Rows reordered to follow `ids`; every id must be present exactly once.
    pub fn aligned_to(&self, ids: &[String], what: &str) -> Result<Self> {
        if ids.len() != self.row_ids.len() {
            return Err(Error::DimMismatch(format!(
                "{what} has {} rows but {} ids are expected",
                self.row_ids.len(),
                ids.len()
            )));
        }
        let index: HashMap<&str, usize> = self.row_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let mut data = Matrix::zeros(ids.len(), self.data.ncols());
        for (dst, id) in ids.iter().enumerate() {
            let src = *index
                .get(id.as_str())
                .ok_or_else(|| Error::IdMismatch(format!("id '{id}' missing from {what}")))?;
            data.set_row(dst, &self.data.row(src));
        }
        Ok(Self {
            id_header: self.id_header.clone(),
            row_ids: ids.to_vec(),
            col_names: self.col_names.clone(),
            data,
        })
    }
}

fn check_unique(ids: &[String], what: &str) -> Result<()> {
    let mut seen = HashMap::with_capacity(ids.len());
    for id in ids {
        if seen.insert(id.as_str(), ()).is_some() {
            return Err(Error::DuplicateId(format!("'{id}' appears more than once in {what}")));
        }
    }
    Ok(())
}

pub fn read_labeled<R: Read>(reader: R, what: &str) -> Result<LabeledMatrix> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::Parse(format!("{what}: empty header")));
    }
    let id_header = headers[0].to_string();
    let col_names: Vec<String> = headers.iter().skip(1).map(|s| s.trim().to_string()).collect();
    check_unique(&col_names, &format!("{what} header"))?;
    let mut row_ids = Vec::new();
    let mut values = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != col_names.len() + 1 {
            return Err(Error::DimMismatch(format!(
                "{what}: data row {} has {} fields, header has {}",
                line + 1,
                record.len(),
                col_names.len() + 1
            )));
        }
        row_ids.push(record[0].trim().to_string());
        for (c, field) in record.iter().skip(1).enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Parse(format!(
                    "{what}: '{field}' at data row {}, column '{}' is not a number",
                    line + 1,
                    col_names[c]
                ))
            })?;
            values.push(v);
        }
    }
    check_unique(&row_ids, what)?;
    let data = Matrix::from_row_slice(row_ids.len(), col_names.len(), &values);
    LabeledMatrix::new(&id_header, row_ids, col_names, data)
}

pub fn read_labeled_path(path: &Path) -> Result<LabeledMatrix> {
    let file = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_labeled(std::io::BufReader::new(file), &path.display().to_string())
}

/// Values are written in shortest round-trip form.
pub fn write_labeled<W: Write>(writer: W, m: &LabeledMatrix) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![m.id_header.clone()];
    header.extend(m.col_names.iter().cloned());
    w.write_record(&header)?;
    for (i, id) in m.row_ids.iter().enumerate() {
        let mut row = vec![id.clone()];
        row.extend(m.data.row(i).iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_labeled_path(path: &Path, m: &LabeledMatrix) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    write_labeled(std::io::BufWriter::new(file), m)
}

/// A validated dataset together with its labels.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub bundle: DatasetBundle,
    pub subject_ids: Vec<String>,
    pub response_ids: Vec<String>,
    pub x_names: Vec<String>,
    pub z_names: Vec<String>,
}

impl Ingested {
    /// Resolves a row-covariate column by name or zero-based position.
    pub fn coef_index(&self, key: &str) -> Result<usize> {
        if let Some(i) = self.x_names.iter().position(|n| n == key) {
            return Ok(i);
        }
        match key.parse::<usize>() {
            Ok(i) if i < self.x_names.len() => Ok(i),
            Ok(i) => Err(Error::IndexOutOfRange {
                index: i,
                len: self.x_names.len(),
            }),
            Err(_) if self.x_names.is_empty() => Err(Error::InvalidArgument(format!(
                "no row covariate named '{key}' (no row covariates given)"
            ))),
            Err(_) => Err(Error::InvalidArgument(format!(
                "no row covariate named '{key}' (have: {})",
                self.x_names.join(", ")
            ))),
        }
    }
}

pub fn assemble(
    y: LabeledMatrix,
    x: Option<LabeledMatrix>,
    z: Option<LabeledMatrix>,
    add_intercepts: bool,
) -> Result<Ingested> {
    let x = x.map(|x| x.aligned_to(&y.row_ids, "row covariates")).transpose()?;
    let z = z.map(|z| z.aligned_to(&y.col_names, "column covariates")).transpose()?;
    let (x, z) = if add_intercepts {
        (
            Some(x.map_or_else(|| intercept_only(&y.row_ids), |x| x.with_intercept())),
            Some(z.map_or_else(|| intercept_only(&y.col_names), |z| z.with_intercept())),
        )
    } else {
        (x, z)
    };
    let x_names = x.as_ref().map_or_else(Vec::new, |x| x.col_names.clone());
    let z_names = z.as_ref().map_or_else(Vec::new, |z| z.col_names.clone());
    let bundle = DatasetBundle::new(y.data, x.map(|x| x.data), z.map(|z| z.data))?;
    Ok(Ingested {
        bundle,
        subject_ids: y.row_ids,
        response_ids: y.col_names,
        x_names,
        z_names,
    })
}

fn intercept_only(ids: &[String]) -> LabeledMatrix {
    LabeledMatrix {
        id_header: "id".into(),
        row_ids: ids.to_vec(),
        col_names: vec!["intercept".into()],
        data: Matrix::from_element(ids.len(), 1, 1.0),
    }
}

pub fn ingest(y: &Path, x: Option<&Path>, z: Option<&Path>, add_intercepts: bool) -> Result<Ingested> {
    let y = read_labeled_path(y)?;
    let x = x.map(read_labeled_path).transpose()?;
    let z = z.map(read_labeled_path).transpose()?;
    assemble(y, x, z, add_intercepts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<LabeledMatrix> {
        read_labeled(s.as_bytes(), "test")
    }

    #[test]
    fn round_trip_full_precision() {
        let text = "id,a,b,c,d\nr1,0.1,-2.5e-300,3,1e22\nr2,0.30000000000000004,5,6,7\nr3,1,2,3,-0\n";
        let m = parse(text).unwrap();
        assert_eq!(m.data.shape(), (3, 4));
        let mut out = Vec::new();
        write_labeled(&mut out, &m).unwrap();
        let back = parse(std::str::from_utf8(&out).unwrap()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.data[(1, 0)], 0.30000000000000004);
    }

    #[test]
    fn parse_errors() {
        assert_eq!(parse("id,a\nr1,x\n").unwrap_err().code(), "PARSE_ERROR");
        assert_eq!(parse("id,a\nr1,1\nr1,2\n").unwrap_err().code(), "DUPLICATE_ID");
        assert_eq!(parse("id,a,a\nr1,1,2\n").unwrap_err().code(), "DUPLICATE_ID");
        assert!(parse("id,a,b\nr1,1\n").is_err());
    }

    #[test]
    fn covariates_align_by_id() {
        let y = parse("id,g1,g2,g3\ns1,1,2,3\ns2,4,5,7\ns3,1,0,2\ns4,3,3,1\n").unwrap();
        let x = parse("id,age\ns3,30\ns1,10\ns4,40\ns2,20\n").unwrap();
        let got = assemble(y.clone(), Some(x), None, true).unwrap();
        let xm = got.bundle.x().unwrap();
        assert_eq!(
            xm.column(1).iter().copied().collect::<Vec<_>>(),
            vec![10.0, 20.0, 30.0, 40.0]
        );
        assert_eq!(got.x_names, vec!["intercept", "age"]);
        assert_eq!(got.z_names, vec!["intercept"]);
        assert_eq!(got.coef_index("age").unwrap(), 1);
        assert_eq!(got.coef_index("1").unwrap(), 1);
        assert!(got.coef_index("sex").is_err());

        let short = parse("id,age\ns1,1\ns2,2\ns3,3\n").unwrap();
        assert_eq!(
            assemble(y.clone(), Some(short), None, false).unwrap_err().code(),
            "DIM_MISMATCH"
        );
        let wrong = parse("id,age\ns1,1\ns2,2\ns3,3\ns9,4\n").unwrap();
        assert_eq!(assemble(y, Some(wrong), None, false).unwrap_err().code(), "ID_MISMATCH");
    }

    #[test]
    fn non_finite_rejected() {
        let y = parse("id,g1,g2\ns1,1,NaN\ns2,1,2\n").unwrap();
        assert_eq!(assemble(y, None, None, false).unwrap_err().code(), "NON_FINITE");
    }
}
