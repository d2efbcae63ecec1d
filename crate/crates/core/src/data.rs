//! Datasets, variable groups, weight matrices, sample splits and their file
//! formats.
//!
//! Group indices are 1-based everywhere in the public surface. Row indices of
//! a [`SampleSplit`] are 0-based positions into the dataset.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{self, Role};

/// Design matrix `x` (n × p) and response `y` (n).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Array2<f64>,
    y: Array1<f64>,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Array1<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Dimension(format!(
                "design has {} rows but response has length {}",
                x.nrows(),
                y.len()
            )));
        }
        if x.nrows() < 2 {
            return Err(Error::Invalid(format!(
                "need at least 2 observations, got {}",
                x.nrows()
            )));
        }
        if x.ncols() < 1 {
            return Err(Error::Invalid("design has no covariates".into()));
        }
        if let Some(((i, j), _)) = x.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Invalid(format!(
                "non-finite design entry at row {}, column {}",
                i + 1,
                j + 1
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("non-finite response at row {}", i + 1)));
        }
        Ok(Dataset { x, y })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn y(&self) -> ArrayView1<'_, f64> {
        self.y.view()
    }

    pub fn into_parts(self) -> (Array2<f64>, Array1<f64>) {
        (self.x, self.y)
    }

    /// Sub-dataset made of the given 0-based rows.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Dataset> {
        Dataset::new(self.x.select(Axis(0), rows), self.y.select(Axis(0), rows))
    }
}

/// Strictly increasing, nonempty set of 1-based covariate indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct GroupSpec {
    indices: Vec<usize>,
}

impl GroupSpec {
    /// Builds a group, sorting the indices. Rejects empty input, index 0 and
    /// repeated indices.
    pub fn new(mut indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidGroup("empty group".into()));
        }
        indices.sort_unstable();
        if indices[0] < 1 {
            return Err(Error::InvalidGroup("index below 1".into()));
        }
        if let Some(w) = indices.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidGroup(format!("duplicate index {}", w[0])));
        }
        Ok(GroupSpec { indices })
    }

    /// `{first, ..., last}` (inclusive, 1-based).
    pub fn range(first: usize, last: usize) -> Result<Self> {
        if first > last {
            return Err(Error::InvalidGroup(format!("empty range {first}..={last}")));
        }
        GroupSpec::new((first..=last).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn zero_based(&self) -> Vec<usize> {
        self.indices.iter().map(|i| i - 1).collect()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn max_index(&self) -> usize {
        *self.indices.last().expect("group is nonempty")
    }

    pub fn contains(&self, index: usize) -> bool {
        self.indices.binary_search(&index).is_ok()
    }

    pub fn is_subset_of(&self, other: &GroupSpec) -> bool {
        self.indices.iter().all(|i| other.contains(*i))
    }

    /// Members joined with `sep`, e.g. `1;2;5`.
    pub fn join(&self, sep: &str) -> String {
        self.indices.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(sep)
    }
}

impl fmt::Display for GroupSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.join(","))
    }
}

impl TryFrom<Vec<usize>> for GroupSpec {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        GroupSpec::new(v)
    }
}

impl From<GroupSpec> for Vec<usize> {
    fn from(g: GroupSpec) -> Self {
        g.indices
    }
}

/// Checks `g` against a design with `p` covariates.
pub fn validate_group(g: &GroupSpec, p: usize) -> Result<()> {
    if g.max_index() > p {
        return Err(Error::InvalidGroup(format!(
            "index {} exceeds the number of covariates p = {p}",
            g.max_index()
        )));
    }
    Ok(())
}

/// Symmetric positive-definite weight matrix `A` for the functional `β_Gᵀ A β_G`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    a: Array2<f64>,
}

impl WeightMatrix {
    pub fn new(a: Array2<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() || a.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "weight matrix must be square and nonempty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let scale = linalg::norm_inf(a.view().into_shape_with_order(a.len()).unwrap());
        let k = a.nrows();
        for i in 0..k {
            for j in 0..i {
                if (a[[i, j]] - a[[j, i]]).abs() > 1e-10 * scale {
                    return Err(Error::Invalid(format!(
                        "weight matrix not symmetric at ({}, {})",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        if linalg::cholesky(a.view()).is_none() {
            return Err(Error::Invalid("weight matrix is not positive definite".into()));
        }
        Ok(WeightMatrix { a })
    }

    pub fn identity(k: usize) -> Self {
        WeightMatrix { a: Array2::eye(k) }
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.a.view()
    }
}

/// Random halving of the observations. Row indices are 0-based and sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSplit {
    pub first_half: Vec<usize>,
    pub second_half: Vec<usize>,
}

/// Uniformly random split into parts of size ⌊n/2⌋ and n − ⌊n/2⌋,
/// deterministic in `seed`.
pub fn make_split(n: usize, seed: u64) -> Result<SampleSplit> {
    if n < 4 {
        return Err(Error::Invalid(format!("sample splitting needs n >= 4, got {n}")));
    }
    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(&mut rng::stream(seed, 0, Role::Split));
    let n1 = n / 2;
    let mut first_half = rows[..n1].to_vec();
    let mut second_half = rows[n1..].to_vec();
    first_half.sort_unstable();
    second_half.sort_unstable();
    Ok(SampleSplit {
        first_half,
        second_half,
    })
}

/// Which column of a table holds the response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResponseColumn {
    /// Header name (requires a header row).
    Name(String),
    /// 1-based column position.
    Index(usize),
}

impl Default for ResponseColumn {
    fn default() -> Self {
        ResponseColumn::Name("y".into())
    }
}

#[derive(Debug, Clone, Default)]
pub struct CsvOptions {
    pub header: bool,
    pub response: ResponseColumn,
    /// Drop rows containing an empty or `NA` cell instead of failing.
    pub drop_incomplete: bool,
}

impl CsvOptions {
    pub fn with_header() -> Self {
        CsvOptions {
            header: true,
            ..Default::default()
        }
    }
}

/// A numeric table as read from disk, before the response is singled out.
#[derive(Debug, Clone)]
pub struct Table {
    pub names: Option<Vec<String>>,
    pub values: Array2<f64>,
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c.eq_ignore_ascii_case("na")
}

/// Reads a rectangular numeric CSV table.
pub fn read_table(path: &Path, header: bool, drop_incomplete: bool) -> Result<Table> {
    let shown = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let names = if header {
        Some(reader.headers()?.iter().map(str::to_string).collect::<Vec<_>>())
    } else {
        None
    };
    let mut width = names.as_ref().map(Vec::len);
    let mut data = Vec::new();
    let mut rows = 0usize;
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 1;
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(Error::Parse {
                path: shown,
                row,
                column: record.len().min(w) + 1,
                message: format!("expected {w} fields, found {}", record.len()),
            });
        }
        let mut parsed = Vec::with_capacity(w);
        let mut incomplete = false;
        for (c, cell) in record.iter().enumerate() {
            if is_missing(cell) {
                if drop_incomplete {
                    incomplete = true;
                    break;
                }
                return Err(Error::Parse {
                    path: shown,
                    row,
                    column: c + 1,
                    message: "missing value".into(),
                });
            }
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => parsed.push(v),
                _ => {
                    return Err(Error::Parse {
                        path: shown,
                        row,
                        column: c + 1,
                        message: format!("not a finite number: {cell:?}"),
                    })
                }
            }
        }
        if !incomplete {
            data.extend(parsed);
            rows += 1;
        }
    }
    let w = width.unwrap_or(0);
    if rows == 0 || w == 0 {
        return Err(Error::Invalid(format!("{shown}: no data rows")));
    }
    let values = Array2::from_shape_vec((rows, w), data).expect("row widths checked");
    Ok(Table { names, values })
}

impl Table {
    /// 0-based position of a column given by name or 1-based index.
    pub fn column_position(&self, col: &ResponseColumn) -> Result<usize> {
        match col {
            ResponseColumn::Index(i) => {
                if *i < 1 || *i > self.values.ncols() {
                    Err(Error::Invalid(format!(
                        "column {i} out of range 1..={}",
                        self.values.ncols()
                    )))
                } else {
                    Ok(i - 1)
                }
            }
            ResponseColumn::Name(name) => {
                let names = self
                    .names
                    .as_ref()
                    .ok_or_else(|| Error::Invalid(format!("column {name:?} named but the table has no header")))?;
                names
                    .iter()
                    .position(|n| n == name)
                    .ok_or_else(|| Error::Invalid(format!("missing column {name:?}")))
            }
        }
    }

    /// Removes a column and returns it.
    pub fn take_column(&mut self, col: &ResponseColumn) -> Result<Array1<f64>> {
        let pos = self.column_position(col)?;
        let taken = self.values.column(pos).to_owned();
        let keep: Vec<usize> = (0..self.values.ncols()).filter(|&j| j != pos).collect();
        self.values = self.values.select(Axis(1), &keep);
        if let Some(names) = self.names.as_mut() {
            names.remove(pos);
        }
        Ok(taken)
    }

    /// Splits off the response; remaining columns become covariates in file order.
    pub fn into_dataset(mut self, response: &ResponseColumn) -> Result<Dataset> {
        let y = self.take_column(response)?;
        Dataset::new(self.values, y)
    }
}

pub fn load_dataset(path: &Path, opts: &CsvOptions) -> Result<Dataset> {
    read_table(path, opts.header, opts.drop_incomplete)?.into_dataset(&opts.response)
}

/// Writes `x1,...,xp,y` with a header. Values use the shortest representation
/// that parses back to the same `f64`.
pub fn save_dataset(path: &Path, d: &Dataset) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let mut header: Vec<String> = (1..=d.p()).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for (row, yi) in d.x().rows().into_iter().zip(d.y().iter()) {
        let mut line = row.iter().map(|v| v.to_string()).collect::<Vec<_>>();
        line.push(yi.to_string());
        writeln!(w, "{}", line.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim();
        if !t.is_empty() && !t.starts_with('#') {
            out.push((i + 1, t.to_string()));
        }
    }
    Ok(out)
}

fn parse_index(path: &Path, line: usize, token: &str) -> Result<usize> {
    token.trim().parse::<usize>().map_err(|_| Error::GroupFile {
        path: path.display().to_string(),
        line,
        message: format!("not a positive integer index: {:?}", token.trim()),
    })
}

/// Group file: one 1-based index per line.
pub fn load_group_file(path: &Path) -> Result<GroupSpec> {
    let lines = read_lines(path)?;
    let mut idx = Vec::with_capacity(lines.len());
    for (line, text) in &lines {
        let i = parse_index(path, *line, text)?;
        if i == 0 {
            return Err(Error::GroupFile {
                path: path.display().to_string(),
                line: *line,
                message: "index below 1".into(),
            });
        }
        idx.push(i);
    }
    GroupSpec::new(idx).map_err(|e| Error::GroupFile {
        path: path.display().to_string(),
        line: lines.last().map_or(1, |l| l.0),
        message: e.to_string(),
    })
}

/// Group-list file: one group per line, comma-separated 1-based indices.
pub fn load_group_list(path: &Path) -> Result<Vec<GroupSpec>> {
    let mut groups = Vec::new();
    for (line, text) in read_lines(path)? {
        let idx = text
            .split(',')
            .map(|t| parse_index(path, line, t))
            .collect::<Result<Vec<_>>>()?;
        groups.push(GroupSpec::new(idx).map_err(|e| Error::GroupFile {
            path: path.display().to_string(),
            line,
            message: e.to_string(),
        })?);
    }
    if groups.is_empty() {
        return Err(Error::GroupFile {
            path: path.display().to_string(),
            line: 1,
            message: "no groups".into(),
        });
    }
    Ok(groups)
}

/// Square matrix from a header-less CSV file (used for weight matrices).
pub fn load_matrix(path: &Path) -> Result<Array2<f64>> {
    Ok(read_table(path, false, false)?.values)
}
