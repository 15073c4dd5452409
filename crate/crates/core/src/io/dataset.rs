use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::IoError;
use crate::data::{ObservedDataset, SpatialRef};
use crate::spatial::{has_intercept_column, LatticeGraph};

fn default_id() -> String {
    "id".into()
}

fn default_response() -> String {
    "z".into()
}

fn yes() -> bool {
    true
}

/// Where a dataset lives and how its columns map onto the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    /// CSV with a header row.
    pub data: PathBuf,
    /// Edge list of 0-based row indices, one pair per line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<PathBuf>,
    /// CSV with columns `id,x,y`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coordinates: Option<PathBuf>,
    #[serde(default = "default_id")]
    pub id_column: String,
    #[serde(default = "default_response")]
    pub response: String,
    /// Covariate columns in design order; every unclaimed column when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariates: Option<Vec<String>>,
    /// Sampling-variance column; a column named `sigma2` is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<String>,
    /// Linear-predictor offset column; a column named `offset` is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<String>,
    /// Population column `N`; sets the offset to `log(N·Σz/ΣN)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub births: Option<String>,
    /// Prepend a column of ones unless the design already has one.
    #[serde(default = "yes")]
    pub intercept: bool,
}

impl DatasetSpec {
    pub fn new(data: impl Into<PathBuf>) -> Self {
        Self {
            data: data.into(),
            edges: None,
            coordinates: None,
            id_column: default_id(),
            response: default_response(),
            covariates: None,
            sigma2: None,
            offset: None,
            births: None,
            intercept: true,
        }
    }

    /// Joins relative paths onto `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.data);
        if let Some(p) = self.edges.as_mut() {
            join(p);
        }
        if let Some(p) = self.coordinates.as_mut() {
            join(p);
        }
    }
}

fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.display().to_string(),
        source,
    })
}

struct Table {
    path: String,
    header: Vec<String>,
    rows: Vec<(usize, Vec<String>)>,
}

impl Table {
    fn read(path: &Path) -> Result<Self, IoError> {
        let text = read_text(path)?;
        let name = path.display().to_string();
        let parse_err = |line: usize, e: csv::Error| IoError::Parse {
            path: name.clone(),
            line,
            message: e.to_string(),
        };
        let mut r = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header: Vec<String> = r
            .headers()
            .map_err(|e| parse_err(1, e))?
            .iter()
            .map(String::from)
            .collect();
        let mut seen = HashSet::new();
        if let Some(dup) = header.iter().find(|h| !seen.insert(h.as_str())) {
            return Err(IoError::Parse {
                path: name,
                line: 1,
                message: format!("duplicate column {dup:?}"),
            });
        }
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line() as usize);
                parse_err(line, e)
            })?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            rows.push((line, rec.iter().map(String::from).collect()));
        }
        Ok(Self {
            path: name,
            header,
            rows,
        })
    }

    fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    fn require(&self, name: &str) -> Result<usize, IoError> {
        self.column(name).ok_or_else(|| IoError::Parse {
            path: self.path.clone(),
            line: 1,
            message: format!("missing column {name:?}"),
        })
    }

    fn numbers(&self, col: usize) -> Result<Vec<f64>, IoError> {
        self.rows
            .iter()
            .map(|(line, rec)| {
                let field = &rec[col];
                field
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| IoError::Parse {
                        path: self.path.clone(),
                        line: *line,
                        message: format!(
                            "column {:?}: expected a finite number, found {field:?}",
                            self.header[col]
                        ),
                    })
            })
            .collect()
    }
}

/// Reads an edge list: two 0-based node ids per line, separated by commas or
/// whitespace. Blank lines and lines starting with `#` are skipped.
pub fn read_edge_list(path: &Path) -> Result<Vec<(usize, usize)>, IoError> {
    let text = read_text(path)?;
    let mut edges = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let ids: Vec<Option<usize>> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| t.parse().ok())
            .collect();
        match ids.as_slice() {
            [Some(a), Some(b)] => edges.push((*a, *b)),
            _ => {
                return Err(IoError::Parse {
                    path: path.display().to_string(),
                    line: k + 1,
                    message: format!("expected two node ids, found {line:?}"),
                })
            }
        }
    }
    Ok(edges)
}

/// Reads `id,x,y` and orders the coordinates to match `ids`.
pub fn read_coordinates(path: &Path, ids: &[String]) -> Result<Vec<[f64; 2]>, IoError> {
    let table = Table::read(path)?;
    let id = table.require("id")?;
    let x = table.numbers(table.require("x")?)?;
    let y = table.numbers(table.require("y")?)?;
    let mut by_id = BTreeMap::new();
    for (k, (line, rec)) in table.rows.iter().enumerate() {
        if by_id.insert(rec[id].clone(), [x[k], y[k]]).is_some() {
            return Err(IoError::Validation(format!(
                "{}:{line}: duplicate id {:?}",
                table.path, rec[id]
            )));
        }
    }
    if by_id.len() != ids.len() {
        return Err(IoError::Validation(format!(
            "{}: {} coordinates for {} locations",
            table.path,
            by_id.len(),
            ids.len()
        )));
    }
    ids.iter()
        .map(|i| {
            by_id.get(i).copied().ok_or_else(|| {
                IoError::Validation(format!("{}: no coordinates for id {i:?}", table.path))
            })
        })
        .collect()
}

/// Loads and validates a dataset: unique ids, finite values, positive
/// sampling variances, and an intercept column unless disabled.
pub fn load_dataset(spec: &DatasetSpec) -> Result<ObservedDataset<f64>, IoError> {
    let table = Table::read(&spec.data)?;
    let n = table.rows.len();
    if n == 0 {
        return Err(IoError::Validation(format!("{}: no data rows", table.path)));
    }
    let id_col = table.require(&spec.id_column)?;
    let z_col = table.require(&spec.response)?;
    let optional = |named: &Option<String>, fallback: &str| -> Result<Option<usize>, IoError> {
        match named {
            Some(name) => table.require(name).map(Some),
            None => Ok(table.column(fallback)),
        }
    };
    let s_col = optional(&spec.sigma2, "sigma2")?;
    let o_col = optional(&spec.offset, "offset")?;
    let b_col = spec
        .births
        .as_deref()
        .map(|b| table.require(b))
        .transpose()?;

    let mut seen = HashSet::new();
    let ids: Vec<String> = table
        .rows
        .iter()
        .map(|(_, rec)| rec[id_col].clone())
        .collect();
    for ((line, _), id) in table.rows.iter().zip(&ids) {
        if !seen.insert(id.as_str()) {
            return Err(IoError::Validation(format!(
                "{}:{line}: duplicate id {id:?}",
                table.path
            )));
        }
    }
    let z = table.numbers(z_col)?;

    let sigma2 = s_col.map(|c| table.numbers(c)).transpose()?;
    if let Some(s) = &sigma2 {
        if let Some(k) = s.iter().position(|v| *v <= 0.0) {
            return Err(IoError::Validation(format!(
                "{}:{}: sigma2 must be positive for id {:?}",
                table.path, table.rows[k].0, ids[k]
            )));
        }
    }

    let mut offset = o_col.map(|c| table.numbers(c)).transpose()?;
    if let Some(c) = b_col {
        if offset.is_some() {
            return Err(IoError::Validation(
                "births and offset columns are mutually exclusive".into(),
            ));
        }
        let births = table.numbers(c)?;
        if let Some(k) = births.iter().position(|v| *v <= 0.0) {
            return Err(IoError::Validation(format!(
                "{}:{}: births must be positive for id {:?}",
                table.path, table.rows[k].0, ids[k]
            )));
        }
        offset = Some(
            expected_counts(&z, &births)?
                .iter()
                .map(|e| e.ln())
                .collect(),
        );
    }

    let claimed: Vec<usize> = [Some(id_col), Some(z_col), s_col, o_col, b_col]
        .into_iter()
        .flatten()
        .collect();
    let cov_cols: Vec<usize> = match &spec.covariates {
        Some(names) => names
            .iter()
            .map(|c| table.require(c))
            .collect::<Result<_, _>>()?,
        None => (0..table.header.len())
            .filter(|c| !claimed.contains(c))
            .collect(),
    };
    let mut names: Vec<String> = cov_cols.iter().map(|c| table.header[*c].clone()).collect();
    let mut columns = cov_cols
        .iter()
        .map(|c| table.numbers(*c))
        .collect::<Result<Vec<_>, _>>()?;
    let mut x = DMatrix::from_fn(n, columns.len(), |i, k| columns[k][i]);
    if spec.intercept && !has_intercept_column(&x) {
        names.insert(0, "intercept".into());
        columns.insert(0, vec![1.0; n]);
        x = DMatrix::from_fn(n, columns.len(), |i, k| columns[k][i]);
    }

    let spatial = match (&spec.edges, &spec.coordinates) {
        (Some(_), Some(_)) => {
            return Err(IoError::Validation(
                "give either an edge list or coordinates, not both".into(),
            ))
        }
        (Some(path), None) => {
            let graph = LatticeGraph::new(n, read_edge_list(path)?)
                .map_err(|e| IoError::Validation(format!("{}: {e}", path.display())))?;
            SpatialRef::Lattice(graph)
        }
        (None, Some(path)) => SpatialRef::Points(read_coordinates(path, &ids)?),
        (None, None) => SpatialRef::None,
    };

    Ok(ObservedDataset {
        ids,
        z,
        x,
        covariate_names: names,
        sigma2,
        offset,
        spatial,
    })
}

/// `Eᵢ = Nᵢ·Σz/ΣN`: expected counts under a common rate.
pub fn expected_counts(z: &[f64], births: &[f64]) -> Result<Vec<f64>, IoError> {
    let total_n: f64 = births.iter().sum();
    let rate = z.iter().sum::<f64>() / total_n;
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(IoError::Validation(
            "expected counts need a positive total count".into(),
        ));
    }
    Ok(births.iter().map(|b| b * rate).collect())
}

/// Writes `data.csv` plus `edges.txt` or `coordinates.csv` into `dir` and
/// returns a spec that reloads the same dataset.
pub fn write_dataset(data: &ObservedDataset<f64>, dir: &Path) -> Result<DatasetSpec, IoError> {
    let werr = |path: &Path, e: std::io::Error| IoError::Read {
        path: path.display().to_string(),
        source: e,
    };
    fs::create_dir_all(dir).map_err(|e| werr(dir, e))?;
    let path = dir.join("data.csv");
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["id".to_string(), "z".to_string()];
    header.extend(data.covariate_names.iter().cloned());
    if data.sigma2.is_some() {
        header.push("sigma2".into());
    }
    if data.offset.is_some() {
        header.push("offset".into());
    }
    let csv_err = |e: csv::Error| IoError::Validation(e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..data.n() {
        let mut row = vec![data.ids[i].clone(), data.z[i].to_string()];
        row.extend(data.x.row(i).iter().map(|v| v.to_string()));
        if let Some(s) = &data.sigma2 {
            row.push(s[i].to_string());
        }
        if let Some(o) = &data.offset {
            row.push(o[i].to_string());
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| IoError::Validation(e.to_string()))?;
    fs::write(&path, bytes).map_err(|e| werr(&path, e))?;

    let mut spec = DatasetSpec::new(path);
    spec.covariates = Some(data.covariate_names.clone());
    match &data.spatial {
        SpatialRef::Lattice(g) => {
            let p = dir.join("edges.txt");
            let text: String = g
                .edges()
                .iter()
                .map(|(a, b)| format!("{a},{b}\n"))
                .collect();
            fs::write(&p, text).map_err(|e| werr(&p, e))?;
            spec.edges = Some(p);
        }
        SpatialRef::Points(coords) => {
            let p = dir.join("coordinates.csv");
            let mut text = String::from("id,x,y\n");
            for (id, c) in data.ids.iter().zip(coords) {
                text.push_str(&format!("{id},{},{}\n", c[0], c[1]));
            }
            fs::write(&p, text).map_err(|e| werr(&p, e))?;
            spec.coordinates = Some(p);
        }
        SpatialRef::None => {}
    }
    Ok(spec)
}
