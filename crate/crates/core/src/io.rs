//! File formats: dataset CSV, ground-truth JSON, estimate JSON and the
//! search-log CSV.
//!
//! Dataset rows are one per (observation, supplier):
//! `obs_id,Q,xi,supplier,alpha,R,P,marginal`. `alpha` may be left empty when
//! `R` and `P` are present; it is then recovered as `R - beta P`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::{recover_bids, GroundTruth};
use crate::equilibrium::CostParams;
use crate::error::{Error, Result};
use crate::inverse::Observation;
use crate::learning::{LogEntry, SearchResult};
use crate::market::MarketConfig;

const INPUT: &str = "<input>";

fn parse_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetRow {
    obs_id: usize,
    #[serde(rename = "Q")]
    q: f64,
    xi: f64,
    supplier: usize,
    alpha: Option<f64>,
    #[serde(rename = "R")]
    r: Option<f64>,
    #[serde(rename = "P")]
    p: Option<f64>,
    marginal: u8,
}

pub fn write_dataset<W: Write>(writer: W, observations: &[Observation]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let path = Path::new(INPUT);
    for (j, obs) in observations.iter().enumerate() {
        for (i, &alpha) in obs.bids.iter().enumerate() {
            w.serialize(DatasetRow {
                obs_id: j,
                q: obs.demand,
                xi: obs.fuel_price,
                supplier: i,
                alpha: Some(alpha),
                r: obs.price,
                p: obs.dispatch.as_ref().map(|d| d[i]),
                marginal: obs.is_marginal(i) as u8,
            })
            .map_err(|e| parse_err(path, e.to_string()))?;
        }
    }
    w.flush().map_err(io_err(path))
}

/// Parses a dataset. `beta` is needed only for rows without `alpha`.
pub fn read_dataset<R: Read>(reader: R, beta: Option<&[f64]>) -> Result<Vec<Observation>> {
    read_dataset_at(reader, beta, Path::new(INPUT))
}

fn read_dataset_at<R: Read>(reader: R, beta: Option<&[f64]>, path: &Path) -> Result<Vec<Observation>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut groups: BTreeMap<usize, Vec<DatasetRow>> = BTreeMap::new();
    for (line, row) in rdr.deserialize::<DatasetRow>().enumerate() {
        let row = row.map_err(|e| parse_err(path, format!("row {}: {e}", line + 1)))?;
        groups.entry(row.obs_id).or_default().push(row);
    }
    if groups.is_empty() {
        return Err(parse_err(path, "dataset has no rows"));
    }
    let mut n = None;
    let mut out = Vec::with_capacity(groups.len());
    for (id, mut rows) in groups {
        rows.sort_by_key(|r| r.supplier);
        let size = rows.len();
        if *n.get_or_insert(size) != size {
            return Err(parse_err(path, format!("observation {id} has {size} suppliers, expected {}", n.unwrap())));
        }
        if rows.iter().enumerate().any(|(k, r)| r.supplier != k) {
            return Err(parse_err(path, format!("observation {id} must list suppliers 0..{size} once each")));
        }
        let (q, xi) = (rows[0].q, rows[0].xi);
        if rows.iter().any(|r| r.q != q || r.xi != xi) {
            return Err(parse_err(path, format!("observation {id} has inconsistent Q or xi")));
        }
        if rows.iter().any(|r| r.r.is_some_and(|v| !v.is_finite()) || r.p.is_some_and(|v| !v.is_finite())) {
            return Err(parse_err(path, format!("observation {id}: non-finite R or P")));
        }
        let mut bids = Vec::with_capacity(size);
        for r in &rows {
            let alpha = match (r.alpha, r.r, r.p) {
                (Some(a), ..) => a,
                (None, Some(price), Some(p)) => {
                    let b = beta
                        .and_then(|b| b.get(r.supplier))
                        .ok_or_else(|| parse_err(path, format!("observation {id}: bid recovery needs beta")))?;
                    recover_bids(price, p, *b)
                }
                _ => return Err(parse_err(path, format!("observation {id}: supplier {} has no alpha and no R, P", r.supplier))),
            };
            if !alpha.is_finite() {
                return Err(parse_err(path, format!("observation {id}: non-finite bid")));
            }
            bids.push(alpha);
        }
        let marginal: Vec<usize> = rows.iter().filter(|r| r.marginal != 0).map(|r| r.supplier).collect();
        let mut obs = Observation::new(q, xi, bids, marginal).map_err(|e| parse_err(path, format!("observation {id}: {e}")))?;
        let first_price = rows[0].r;
        if let (Some(price), true) = (first_price, rows.iter().all(|r| r.p.is_some() && r.r == first_price)) {
            obs = obs.with_outcome(price, rows.iter().map(|r| r.p.unwrap_or(0.0)).collect());
        }
        out.push(obs);
    }
    Ok(out)
}

pub fn load_dataset(path: &Path, beta: Option<&[f64]>) -> Result<Vec<Observation>> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    read_dataset_at(file, beta, path)
}

pub fn save_dataset(path: &Path, observations: &[Observation]) -> Result<()> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    write_dataset(file, observations).map_err(|e| relabel(e, path))
}

fn relabel(e: Error, path: &Path) -> Error {
    match e {
        Error::Parse { message, .. } => parse_err(path, message),
        Error::Io { source, .. } => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    }
}

/// Market description with optional true costs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthFile {
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta1: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta2: Option<Vec<f64>>,
    pub beta: Vec<f64>,
    pub alpha_bar: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_min: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_max: Option<Vec<f64>>,
}

impl TruthFile {
    pub fn from_truth(truth: &GroundTruth) -> Self {
        let c = &truth.config;
        Self {
            n: c.n_suppliers(),
            theta1: Some(truth.thetas.iter().map(|t| t.theta1).collect()),
            theta2: Some(truth.thetas.iter().map(|t| t.theta2).collect()),
            beta: c.beta().to_vec(),
            alpha_bar: c.alpha_bar(),
            p_min: Some(c.p_min().to_vec()),
            p_max: Some(c.p_max().to_vec()),
        }
    }

    pub fn config(&self) -> Result<MarketConfig> {
        if self.beta.len() != self.n {
            return Err(Error::LengthMismatch {
                expected: self.n,
                got: self.beta.len(),
            });
        }
        let p_min = self.p_min.clone().unwrap_or_else(|| vec![0.0; self.n]);
        let p_max = self.p_max.clone().unwrap_or_else(|| vec![f64::INFINITY; self.n]);
        MarketConfig::new(self.beta.clone(), p_min, p_max, self.alpha_bar)
    }

    pub fn thetas(&self) -> Result<Option<Vec<CostParams>>> {
        match (&self.theta1, &self.theta2) {
            (Some(a), Some(b)) => {
                if a.len() != self.n || b.len() != self.n {
                    return Err(Error::LengthMismatch {
                        expected: self.n,
                        got: a.len().min(b.len()),
                    });
                }
                Ok(Some(a.iter().zip(b).map(|(&x, &y)| CostParams::new(x, y)).collect()))
            }
            (None, None) => Ok(None),
            _ => Err(Error::domain("theta1 and theta2 must be given together")),
        }
    }

    pub fn ground_truth(&self) -> Result<GroundTruth> {
        let thetas = self.thetas()?.ok_or_else(|| Error::domain("truth file has no cost parameters"))?;
        Ok(GroundTruth {
            thetas,
            config: self.config()?,
        })
    }
}

pub fn parse_truth(text: &str) -> Result<TruthFile> {
    parse_truth_at(text, Path::new(INPUT))
}

fn parse_truth_at(text: &str, path: &Path) -> Result<TruthFile> {
    let t: TruthFile = serde_json::from_str(text).map_err(|e| parse_err(path, e.to_string()))?;
    t.config().map_err(|e| parse_err(path, e.to_string()))?;
    t.thetas().map_err(|e| parse_err(path, e.to_string()))?;
    Ok(t)
}

pub fn load_truth(path: &Path) -> Result<TruthFile> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_truth_at(&text, path)
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| parse_err(path, e.to_string()))?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

/// Estimated costs as written by the estimation step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateFile {
    pub theta1: Vec<f64>,
    pub theta2: Vec<f64>,
    #[serde(default)]
    pub z: Option<f64>,
    #[serde(default)]
    pub best_discrepancy: Option<f64>,
    #[serde(default)]
    pub best_iter: Option<usize>,
    #[serde(default)]
    pub iterations_run: Option<usize>,
    #[serde(default)]
    pub mape: Option<f64>,
}

impl EstimateFile {
    pub fn from_search(result: &SearchResult) -> Self {
        let best = result.log.iter().find(|e| e.iter == result.best_iter);
        Self {
            theta1: result.best_thetas.iter().map(|t| t.theta1).collect(),
            theta2: result.best_thetas.iter().map(|t| t.theta2).collect(),
            z: best.and_then(|e| e.z),
            best_discrepancy: Some(result.best_discrepancy),
            best_iter: Some(result.best_iter),
            iterations_run: Some(result.iterations_run),
            mape: best.and_then(|e| e.mape),
        }
    }

    pub fn thetas(&self) -> Result<Vec<CostParams>> {
        if self.theta1.len() != self.theta2.len() {
            return Err(Error::LengthMismatch {
                expected: self.theta1.len(),
                got: self.theta2.len(),
            });
        }
        Ok(self.theta1.iter().zip(&self.theta2).map(|(&a, &b)| CostParams::new(a, b)).collect())
    }
}

pub fn parse_estimate(text: &str) -> Result<EstimateFile> {
    parse_estimate_at(text, Path::new(INPUT))
}

fn parse_estimate_at(text: &str, path: &Path) -> Result<EstimateFile> {
    let e: EstimateFile = serde_json::from_str(text).map_err(|e| parse_err(path, e.to_string()))?;
    e.thetas().map_err(|err| parse_err(path, err.to_string()))?;
    if e.theta1.iter().chain(&e.theta2).any(|v| !v.is_finite()) {
        return Err(parse_err(path, "non-finite cost parameter"));
    }
    Ok(e)
}

pub fn load_estimate(path: &Path) -> Result<EstimateFile> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_estimate_at(&text, path)
}

#[derive(Serialize)]
struct LogRow<'a> {
    iter: usize,
    z: Option<f64>,
    discrepancy: Option<f64>,
    mape: Option<f64>,
    validation_profit: Option<f64>,
    seconds: Option<f64>,
    status: &'a str,
    train: String,
}

/// Search log, one row per iteration. Absent values are empty cells.
pub fn write_search_log<W: Write>(writer: W, log: &[LogEntry]) -> Result<()> {
    let path = Path::new(INPUT);
    let mut w = csv::Writer::from_writer(writer);
    for e in log {
        w.serialize(LogRow {
            iter: e.iter,
            z: e.z,
            discrepancy: e.discrepancy,
            mape: e.mape,
            validation_profit: e.validation_profit,
            seconds: e.seconds,
            status: e.error.as_deref().unwrap_or("ok"),
            train: e.train.iter().map(|j| j.to_string()).collect::<Vec<_>>().join(" "),
        })
        .map_err(|err| parse_err(path, err.to_string()))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn save_search_log(path: &Path, log: &[LogEntry]) -> Result<()> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    write_search_log(file, log).map_err(|e| relabel(e, path))
}

/// Writes rows of string cells with a header; used for report tables.
pub fn save_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    let wrap = |e: csv::Error| parse_err(path, e.to_string());
    w.write_record(header).map_err(wrap)?;
    for row in rows {
        w.write_record(row).map_err(|e| parse_err(path, e.to_string()))?;
    }
    w.flush().map_err(io_err(path))
}
