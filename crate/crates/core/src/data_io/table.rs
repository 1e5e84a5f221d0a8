use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Result, SpargeError};
use crate::matrix_recovery::ObservedMatrix;

pub const DEFAULT_MISSING: [&str; 4] = ["", "NA", "NaN", "null"];

/// Raw CSV contents: header plus string cells, one record per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct StringTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl StringTable {
    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(false)
            .from_reader(reader);
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| csv_error(&e, 0))?
            .iter()
            .map(str::to_owned)
            .collect();
        if header.is_empty() {
            return Err(SpargeError::EmptyInput("csv header"));
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| csv_error(&e, i + 1))?;
            rows.push(rec.iter().map(str::to_owned).collect());
        }
        Ok(StringTable { header, rows })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| SpargeError::io(path, e))?;
        Self::from_reader(std::io::BufReader::new(file))
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn write_to(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.header).map_err(|e| csv_error(&e, 0))?;
        for (i, row) in self.rows.iter().enumerate() {
            w.write_record(row).map_err(|e| csv_error(&e, i + 1))?;
        }
        w.flush().map_err(|e| SpargeError::Csv {
            row: 0,
            column: 0,
            message: e.to_string(),
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| SpargeError::io(path, e))?;
        self.write_to(std::io::BufWriter::new(file))
    }
}

fn csv_error(e: &csv::Error, row: usize) -> SpargeError {
    let (row, column) = match e.kind() {
        csv::ErrorKind::UnequalLengths { pos, len, .. } => {
            (pos.as_ref().map_or(row, |p| p.record() as usize), *len as usize)
        }
        _ => (e.position().map_or(row, |p| p.record() as usize), 0),
    };
    SpargeError::Csv {
        row,
        column,
        message: e.to_string(),
    }
}

/// How to read a numeric table.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadOptions {
    pub missing_tokens: Vec<String>,
    pub label_column: Option<String>,
    pub id_column: Option<String>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            missing_tokens: DEFAULT_MISSING.iter().map(|s| s.to_string()).collect(),
            label_column: None,
            id_column: None,
        }
    }
}

/// A numeric data set: features as matrix rows, samples as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: ObservedMatrix,
    pub feature_names: Vec<String>,
    pub labels: Option<Vec<String>>,
    pub ids: Option<Vec<String>>,
}

impl Dataset {
    pub fn select(&self, idx: &[usize]) -> Dataset {
        let pick = |v: &Vec<String>| idx.iter().map(|&i| v[i].clone()).collect();
        Dataset {
            x: self.x.select_columns(idx),
            feature_names: self.feature_names.clone(),
            labels: self.labels.as_ref().map(pick),
            ids: self.ids.as_ref().map(pick),
        }
    }
}

/// Parse a string table into a masked matrix. Missing tokens become
/// unobserved zeros.
pub fn parse_table(table: &StringTable, opts: &LoadOptions) -> Result<Dataset> {
    let find = |name: &Option<String>| -> Result<Option<usize>> {
        match name {
            None => Ok(None),
            Some(n) => table
                .column_index(n)
                .map(Some)
                .ok_or_else(|| SpargeError::Config(format!("column {n:?} not found in header"))),
        }
    };
    let label_col = find(&opts.label_column)?;
    let id_col = find(&opts.id_column)?;
    let features: Vec<usize> = (0..table.header.len())
        .filter(|&c| Some(c) != label_col && Some(c) != id_col)
        .collect();
    if features.is_empty() {
        return Err(SpargeError::EmptyInput("no feature columns"));
    }
    let n = table.rows.len();
    if n == 0 {
        return Err(SpargeError::EmptyInput("no data rows"));
    }
    let missing: BTreeSet<&str> = opts.missing_tokens.iter().map(String::as_str).collect();
    let m = features.len();
    let mut values = DMatrix::zeros(m, n);
    let mut mask = DMatrix::from_element(m, n, false);
    for (j, row) in table.rows.iter().enumerate() {
        for (i, &c) in features.iter().enumerate() {
            let cell = row[c].trim();
            if missing.contains(cell) {
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| SpargeError::Csv {
                row: j + 1,
                column: c + 1,
                message: format!("cannot parse {cell:?} as a number"),
            })?;
            if !v.is_finite() {
                return Err(SpargeError::Csv {
                    row: j + 1,
                    column: c + 1,
                    message: format!("non-finite value {cell:?}"),
                });
            }
            values[(i, j)] = v;
            mask[(i, j)] = true;
        }
    }
    let take = |col: Option<usize>| col.map(|c| table.rows.iter().map(|r| r[c].clone()).collect());
    Ok(Dataset {
        x: ObservedMatrix::new(values, mask)?,
        feature_names: features.iter().map(|&c| table.header[c].clone()).collect(),
        labels: take(label_col),
        ids: take(id_col),
    })
}

pub fn load_csv(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<Dataset> {
    parse_table(&StringTable::read(path)?, opts)
}

/// Inverse of [`parse_table`]: unobserved cells are written as `NA`.
pub fn to_table(data: &Dataset, label_column: &str, id_column: &str) -> StringTable {
    let mut header = Vec::new();
    if data.ids.is_some() {
        header.push(id_column.to_string());
    }
    header.extend(data.feature_names.iter().cloned());
    if data.labels.is_some() {
        header.push(label_column.to_string());
    }
    let x = &data.x;
    let rows = (0..x.ncols())
        .map(|j| {
            let mut row = Vec::with_capacity(header.len());
            if let Some(ids) = &data.ids {
                row.push(ids[j].clone());
            }
            for i in 0..x.nrows() {
                row.push(if x.is_observed(i, j) {
                    format!("{:?}", x.values()[(i, j)])
                } else {
                    "NA".to_string()
                });
            }
            if let Some(l) = &data.labels {
                row.push(l[j].clone());
            }
            row
        })
        .collect();
    StringTable { header, rows }
}

pub fn write_csv(path: impl AsRef<Path>, data: &Dataset, label_column: &str, id_column: &str) -> Result<()> {
    to_table(data, label_column, id_column).write(path)
}

/// Dense class ids for string labels (sorted, so the mapping does not depend
/// on row order).
#[derive(Debug, Clone, PartialEq)]
pub struct LabelIndex {
    names: Vec<String>,
}

impl LabelIndex {
    pub fn fit(labels: &[String]) -> Self {
        let set: BTreeSet<&String> = labels.iter().collect();
        LabelIndex {
            names: set.into_iter().cloned().collect(),
        }
    }

    pub fn from_names(names: Vec<String>) -> Self {
        LabelIndex { names }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn encode(&self, labels: &[String]) -> Result<Vec<usize>> {
        labels
            .iter()
            .map(|l| {
                self.id(l).ok_or_else(|| SpargeError::UnknownToken {
                    column: "label".into(),
                    token: l.clone(),
                })
            })
            .collect()
    }
}

/// Categorical token codes per column.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EncodingMap {
    columns: BTreeMap<String, Vec<(String, i64)>>,
    missing: BTreeSet<String>,
}

impl EncodingMap {
    pub fn new(missing_tokens: &[&str]) -> Self {
        EncodingMap {
            columns: BTreeMap::new(),
            missing: missing_tokens.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Add a column; tokens must be distinct, codes distinct, and no token
    /// may be a missing marker.
    pub fn insert(&mut self, column: &str, codes: &[(&str, i64)]) -> Result<()> {
        let mut tokens = BTreeSet::new();
        let mut values = BTreeSet::new();
        for (t, v) in codes {
            if self.missing.contains(*t) {
                return Err(SpargeError::Config(format!("token {t:?} of column {column:?} is a missing marker")));
            }
            if !tokens.insert(*t) || !values.insert(*v) {
                return Err(SpargeError::Config(format!("encoding of column {column:?} is not injective")));
            }
        }
        self.columns.insert(
            column.to_string(),
            codes.iter().map(|(t, v)| (t.to_string(), *v)).collect(),
        );
        Ok(())
    }

    pub fn code(&self, column: &str, token: &str) -> Option<i64> {
        self.columns
            .get(column)?
            .iter()
            .find(|(t, _)| t == token)
            .map(|(_, v)| *v)
    }

    pub fn columns(&self) -> impl Iterator<Item = &str> {
        self.columns.keys().map(String::as_str)
    }

    /// Take every column of `other`, replacing columns already present.
    pub fn extend(&mut self, other: EncodingMap) -> Result<()> {
        for (col, codes) in other.columns {
            if codes.iter().any(|(t, _)| self.missing.contains(t)) {
                return Err(SpargeError::Config(format!("column {col:?} codes a missing marker")));
            }
            self.columns.insert(col, codes);
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn is_missing(&self, token: &str) -> bool {
        self.missing.contains(token)
    }

    /// Codings of the questionnaire biomarkers listed in the source data
    /// description.
    pub fn questionnaire() -> Self {
        let mut map = EncodingMap::new(&DEFAULT_MISSING);
        let yes_no_unknown = [("Unknown", 0), ("Yes", 1), ("No", 2)];
        let groups: Vec<(Vec<&str>, Vec<(&str, i64)>)> = vec![
            (vec!["Country of birth"], vec![("Singaporean", 1), ("Others", 2)]),
            (vec!["Marital Status"], vec![("Single", 1), ("Married", 2), ("Widowed", 3)]),
            (
                vec!["Religion"],
                vec![
                    ("Christian/Catholic", 1),
                    ("Free thinker", 2),
                    ("Buddhist", 3),
                    ("Islam", 4),
                    ("Hindu", 5),
                    ("Taoist", 6),
                    ("Others", 7),
                ],
            ),
            (
                vec!["Diabetes", "Hypertension", "Heart Attack Block", "Heart Disease", "Hyperlipidemia"],
                yes_no_unknown.to_vec(),
            ),
            (vec!["Smoking", "Cigarettes"], vec![("Yes", 1), ("No", 2), ("Previously", 3)]),
            (
                vec!["Home/Work Smoke"],
                vec![("Never", 1), ("Sometimes", 2), ("Most of the times", 3)],
            ),
            (vec!["Alcohol", "Beer", "Red/White Wine"], vec![("Yes", 1), ("No", 2)]),
            (
                vec!["Coffee/Tea Weekly"],
                vec![
                    ("Never/rarely", 1),
                    ("< 1 cup a week", 2),
                    (">= 1 cup a week but <= 1 cup a day", 3),
                    ("Others", 4),
                ],
            ),
        ];
        for (cols, codes) in groups {
            for c in cols {
                map.insert(c, &codes).expect("preset is injective");
            }
        }
        map
    }

    /// Read `encode.<column>.<token> = <code>` entries from key=value pairs.
    /// Other keys are ignored.
    pub fn from_pairs(pairs: &[(String, String)], missing_tokens: &[&str]) -> Result<Self> {
        let mut grouped: BTreeMap<String, Vec<(String, i64)>> = BTreeMap::new();
        for (k, v) in pairs {
            let Some(rest) = k.strip_prefix("encode.") else { continue };
            let (col, tok) = rest
                .split_once('.')
                .ok_or_else(|| SpargeError::Config(format!("bad encoding key {k:?}")))?;
            let code: i64 = v
                .parse()
                .map_err(|_| SpargeError::Config(format!("encoding code {v:?} for {k:?} is not an integer")))?;
            grouped.entry(col.to_string()).or_default().push((tok.to_string(), code));
        }
        let mut map = EncodingMap::new(missing_tokens);
        for (col, codes) in grouped {
            let refs: Vec<(&str, i64)> = codes.iter().map(|(t, v)| (t.as_str(), *v)).collect();
            map.insert(&col, &refs)?;
        }
        Ok(map)
    }
}

/// Replace coded tokens by their integers in every mapped column. Missing
/// markers pass through unchanged.
pub fn encode_integer(table: &StringTable, map: &EncodingMap) -> Result<StringTable> {
    let mut out = table.clone();
    for col in map.columns() {
        let Some(c) = table.column_index(col) else { continue };
        for row in out.rows.iter_mut() {
            let token = row[c].trim();
            if map.is_missing(token) {
                continue;
            }
            let code = map.code(col, token).ok_or_else(|| SpargeError::UnknownToken {
                column: col.to_string(),
                token: token.to_string(),
            })?;
            row[c] = code.to_string();
        }
    }
    Ok(out)
}
