//! Tabular data, label vectors, embeddings and run metadata.
//!
//! TSV is the interchange format: tab separated, one header row, `.` decimal
//! point, LF line endings. CSV is accepted on input only.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Tsv,
    Csv,
}

impl Format {
    fn delimiter(self) -> u8 {
        match self {
            Format::Tsv => b'\t',
            Format::Csv => b',',
        }
    }

    /// `.csv` selects CSV, anything else is read as TSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Tsv,
        }
    }
}

/// Column selector: by header name or 0-based position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnRef {
    Name(String),
    Index(usize),
}

impl ColumnRef {
    /// Parses a bare integer as an index, anything else as a name.
    pub fn parse(s: &str) -> Self {
        match s.parse::<usize>() {
            Ok(i) => ColumnRef::Index(i),
            Err(_) => ColumnRef::Name(s.to_string()),
        }
    }

    fn resolve(&self, headers: &[String], path: &Path) -> Result<usize> {
        match self {
            ColumnRef::Index(i) if *i < headers.len() => Ok(*i),
            ColumnRef::Index(i) => Err(Error::invalid(format!(
                "{}: column index {i} out of range ({} columns)",
                path.display(),
                headers.len()
            ))),
            ColumnRef::Name(name) => headers.iter().position(|h| h == name).ok_or_else(|| {
                Error::invalid(format!("{}: no column named {name:?}", path.display()))
            }),
        }
    }
}

/// An `n x d` matrix of finite reals with named attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    points: Array2<f64>,
    attribute_names: Vec<String>,
    row_ids: Vec<String>,
}

impl Dataset {
    pub fn new(points: Array2<f64>, attribute_names: Vec<String>) -> Result<Self> {
        let row_ids = (0..points.nrows()).map(|i| i.to_string()).collect();
        Self::with_row_ids(points, attribute_names, row_ids)
    }

    pub fn with_row_ids(
        points: Array2<f64>,
        attribute_names: Vec<String>,
        row_ids: Vec<String>,
    ) -> Result<Self> {
        let (n, d) = points.dim();
        if n < 2 {
            return Err(Error::invalid(format!("dataset needs at least 2 rows, got {n}")));
        }
        if d == 0 {
            return Err(Error::invalid("dataset needs at least 1 attribute"));
        }
        if attribute_names.len() != d {
            return Err(Error::Shape(format!(
                "{} attribute names for {d} columns",
                attribute_names.len()
            )));
        }
        if row_ids.len() != n {
            return Err(Error::Shape(format!("{} row ids for {n} rows", row_ids.len())));
        }
        let mut seen = HashMap::with_capacity(d);
        for (j, name) in attribute_names.iter().enumerate() {
            if let Some(prev) = seen.insert(name.as_str(), j) {
                return Err(Error::invalid(format!(
                    "duplicate attribute name {name:?} (columns {prev} and {j})"
                )));
            }
        }
        if let Some(((i, j), v)) = points.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite value {v} at row {i}, column {j}")));
        }
        let points = points.as_standard_layout().into_owned();
        Ok(Self {
            points,
            attribute_names,
            row_ids,
        })
    }

    /// Dataset with generated attribute names `x1..xd`.
    pub fn from_matrix(points: Array2<f64>) -> Result<Self> {
        let names = (1..=points.ncols()).map(|j| format!("x{j}")).collect();
        Self::new(points, names)
    }

    pub fn n(&self) -> usize {
        self.points.nrows()
    }

    pub fn d(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> ArrayView2<'_, f64> {
        self.points.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.points.row(i)
    }

    /// Row-major contiguous storage.
    pub fn as_slice(&self) -> &[f64] {
        self.points.as_slice().expect("standard layout")
    }

    pub fn attribute_names(&self) -> &[String] {
        &self.attribute_names
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn into_points(self) -> Array2<f64> {
        self.points
    }

    /// Writes canonical TSV. Values use the shortest representation that
    /// parses back to the identical `f64`.
    pub fn save_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_tsv(&mut out).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_tsv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "{}", self.attribute_names.join("\t"))?;
        for row in self.points.rows() {
            let mut first = true;
            for v in row {
                if !first {
                    out.write_all(b"\t")?;
                }
                first = false;
                write!(out, "{v:?}")?;
            }
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Options for [`load_dataset_with`].
#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Only these columns become attributes (in the given order); the rest
    /// of the file may hold non-numeric fields such as categorical labels.
    pub columns: Option<Vec<ColumnRef>>,
    /// Column holding row identifiers instead of values.
    pub id_column: Option<ColumnRef>,
}

pub fn load_dataset(path: impl AsRef<Path>, format: Format) -> Result<Dataset> {
    load_dataset_with(path, format, &LoadOptions::default())
}

pub fn load_dataset_with(
    path: impl AsRef<Path>,
    format: Format,
    opts: &LoadOptions,
) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(file, format, opts, path)
}

/// Parses a dataset from any reader; `origin` only labels error messages.
pub fn read_dataset<R: std::io::Read>(
    reader: R,
    format: Format,
    opts: &LoadOptions,
    origin: &Path,
) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(format.delimiter())
        .has_headers(true)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_error(origin, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::invalid(format!("{}: missing header row", origin.display())));
    }
    let id_col = opts
        .id_column
        .as_ref()
        .map(|c| c.resolve(&headers, origin))
        .transpose()?;
    let value_cols: Vec<usize> = match &opts.columns {
        Some(cols) => cols
            .iter()
            .map(|c| c.resolve(&headers, origin))
            .collect::<Result<_>>()?,
        None => (0..headers.len()).filter(|&j| Some(j) != id_col).collect(),
    };
    let names: Vec<String> = value_cols.iter().map(|&j| headers[j].clone()).collect();

    let mut values = Vec::new();
    let mut row_ids = Vec::new();
    let mut rows = 0usize;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(origin, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != headers.len() {
            return Err(Error::Parse {
                path: origin.to_path_buf(),
                line,
                column: "-".into(),
                message: format!("expected {} fields, found {}", headers.len(), rec.len()),
            });
        }
        for &j in &value_cols {
            let cell = rec[j].trim();
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                path: origin.to_path_buf(),
                line,
                column: headers[j].clone(),
                message: format!("cannot parse {cell:?} as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: origin.to_path_buf(),
                    line,
                    column: headers[j].clone(),
                    message: format!("non-finite value {cell:?}"),
                });
            }
            values.push(v);
        }
        row_ids.push(match id_col {
            Some(c) => rec[c].to_string(),
            None => rows.to_string(),
        });
        rows += 1;
    }
    if rows < 2 {
        return Err(Error::invalid(format!(
            "{}: dataset needs at least 2 rows, got {rows}",
            origin.display()
        )));
    }
    let points = Array2::from_shape_vec((rows, names.len()), values)
        .map_err(|e| Error::Shape(e.to_string()))?;
    Dataset::with_row_ids(points, names, row_ids)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Parse {
        path: path.to_path_buf(),
        line,
        column: "-".into(),
        message: e.to_string(),
    }
}

/// Per-point integer labels densely coded to `0..L` in first-appearance order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVector {
    labels: Vec<usize>,
    class_sizes: Vec<usize>,
    /// Original value for each code.
    names: Vec<String>,
}

impl LabelVector {
    /// Re-codes arbitrary hashable values in order of first appearance.
    pub fn from_values<I, S>(values: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut names = Vec::new();
        let mut labels = Vec::new();
        let mut class_sizes = Vec::new();
        for v in values {
            let v = v.as_ref();
            let code = match index.get(v) {
                Some(&c) => c,
                None => {
                    let c = names.len();
                    index.insert(v.to_string(), c);
                    names.push(v.to_string());
                    class_sizes.push(0);
                    c
                }
            };
            class_sizes[code] += 1;
            labels.push(code);
        }
        if labels.is_empty() {
            return Err(Error::invalid("empty label vector"));
        }
        Ok(Self {
            labels,
            class_sizes,
            names,
        })
    }

    /// Re-codes integer codes in first-appearance order.
    pub fn from_codes(codes: &[usize]) -> Result<Self> {
        Self::from_values(codes.iter().map(|c| c.to_string()))
    }

    /// A single class covering `n` points.
    pub fn constant(n: usize) -> Self {
        Self {
            labels: vec![0; n],
            class_sizes: vec![n],
            names: vec!["0".into()],
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_sizes.len()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn get(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn class_sizes(&self) -> &[usize] {
        &self.class_sizes
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// `sum_l n_l (n_l - 1) / (n (n - 1))`: the fraction of ordered pairs
    /// `i != j` that share a label.
    pub fn same_pair_fraction(&self) -> f64 {
        let n = self.len() as f64;
        if self.len() < 2 {
            return 1.0;
        }
        let same: f64 = self
            .class_sizes
            .iter()
            .map(|&c| (c as f64) * (c as f64 - 1.0))
            .sum();
        same / (n * (n - 1.0))
    }

    /// One label value per line, with a header row.
    pub fn save_tsv(&self, path: impl AsRef<Path>, header: &str) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let res: std::io::Result<()> = (|| {
            writeln!(out, "{header}")?;
            for &l in &self.labels {
                writeln!(out, "{}", self.names[l])?;
            }
            out.flush()
        })();
        res.map_err(|e| Error::io(path, e))
    }
}

/// Where a label vector comes from on disk.
#[derive(Debug, Clone)]
pub struct LabelSource {
    pub path: PathBuf,
    /// Column of a multi-column file; `None` takes the first column.
    pub column: Option<ColumnRef>,
    /// Whether the first line is a header.
    pub has_header: bool,
}

impl LabelSource {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self {
            path: path.into(),
            column: None,
            has_header: true,
        }
    }
}

/// Loads labels and re-codes them; `expected_len` is the dataset row count.
pub fn load_labels(source: &LabelSource, expected_len: Option<usize>) -> Result<LabelVector> {
    let path = source.path.as_path();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(Format::from_path(path).delimiter())
        .has_headers(source.has_header)
        .flexible(true)
        .from_reader(file);
    let col = if source.has_header {
        let headers: Vec<String> = rdr
            .headers()
            .map_err(|e| csv_error(path, e))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        match &source.column {
            Some(c) => c.resolve(&headers, path)?,
            None => 0,
        }
    } else {
        match &source.column {
            Some(ColumnRef::Index(i)) => *i,
            Some(ColumnRef::Name(name)) => {
                return Err(Error::invalid(format!(
                    "column {name:?} requested but {} has no header",
                    path.display()
                )))
            }
            None => 0,
        }
    };
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let cell = rec.get(col).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: rec.position().map_or(0, |p| p.line()),
            column: col.to_string(),
            message: "missing label column".into(),
        })?;
        values.push(cell.trim().to_string());
    }
    if values.is_empty() {
        return Err(Error::invalid(format!("{}: empty label file", path.display())));
    }
    if let Some(n) = expected_len {
        if values.len() != n {
            return Err(Error::Shape(format!(
                "{}: {} labels for {n} data rows",
                path.display(),
                values.len()
            )));
        }
    }
    LabelVector::from_values(values)
}

/// Joint labelling: one label per distinct `(a_i, b_i)` pair.
pub fn combine_labels(a: &LabelVector, b: &LabelVector) -> Result<LabelVector> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "cannot combine label vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let mut index: HashMap<(usize, usize), usize> = HashMap::new();
    let mut out = LabelVector {
        labels: Vec::with_capacity(a.len()),
        class_sizes: Vec::new(),
        names: Vec::new(),
    };
    for (&x, &y) in a.labels.iter().zip(&b.labels) {
        let code = *index.entry((x, y)).or_insert_with(|| {
            out.names.push(format!("{}|{}", a.names[x], b.names[y]));
            out.class_sizes.push(0);
            out.names.len() - 1
        });
        out.class_sizes[code] += 1;
        out.labels.push(code);
    }
    Ok(out)
}

/// Low-dimensional coordinates, one row per data point.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    coords: Array2<f64>,
}

impl EmbeddingMatrix {
    pub fn new(coords: Array2<f64>) -> Result<Self> {
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("embedding contains non-finite coordinates"));
        }
        Ok(Self {
            coords: coords.as_standard_layout().into_owned(),
        })
    }

    pub(crate) fn from_raw(coords: Array2<f64>) -> Self {
        debug_assert!(coords.is_standard_layout());
        Self { coords }
    }

    pub fn n(&self) -> usize {
        self.coords.nrows()
    }

    pub fn dim(&self) -> usize {
        self.coords.ncols()
    }

    pub fn coords(&self) -> ArrayView2<'_, f64> {
        self.coords.view()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.coords.as_slice().expect("standard layout")
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.coords
    }

    /// Headerless TSV with 17 significant digits per value.
    pub fn write_tsv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        for row in self.coords.rows() {
            let mut first = true;
            for v in row {
                if !first {
                    out.write_all(b"\t")?;
                }
                first = false;
                write!(out, "{v:.16e}")?;
            }
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_tsv(&mut out)
            .and_then(|_| out.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load_tsv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut values = Vec::new();
        let mut width = None;
        let mut rows = 0;
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let before = values.len();
            for (j, cell) in line.split('\t').enumerate() {
                let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno as u64 + 1,
                    column: j.to_string(),
                    message: format!("cannot parse {cell:?} as a number"),
                })?;
                values.push(v);
            }
            let w = values.len() - before;
            if *width.get_or_insert(w) != w {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno as u64 + 1,
                    column: "-".into(),
                    message: format!("ragged row: {w} values"),
                });
            }
            rows += 1;
        }
        let width = width.ok_or_else(|| Error::invalid(format!("{}: empty embedding", path.display())))?;
        let coords = Array2::from_shape_vec((rows, width), values)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(coords)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub objective: f64,
}

/// Parameters and outcome of one embedding run; written next to the
/// embedding as `<output>.meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RunMetadata {
    pub n: usize,
    pub embedding_dim: usize,
    pub perplexity: Option<f64>,
    pub global_sigma: Option<f64>,
    pub beta_prime: f64,
    pub alpha_prime: f64,
    pub num_classes: usize,
    pub same_pair_fraction: f64,
    pub engine: String,
    pub theta: Option<f64>,
    pub criterion: Option<String>,
    pub iterations: usize,
    pub iterations_run: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub restarts: usize,
    pub best_restart: usize,
    /// Final objective of each restart; `None` for restarts that diverged.
    pub restart_objectives: Vec<Option<f64>>,
    pub final_objective: f64,
    /// Objective every 50 iterations of the best restart, plus the final value.
    pub objective_trace: Vec<TracePoint>,
}

impl RunMetadata {
    pub fn sidecar_path(output: &Path) -> PathBuf {
        let mut s = output.as_os_str().to_owned();
        s.push(".meta.json");
        PathBuf::from(s)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::invalid(format!("serializing metadata: {e}")))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
    }
}
