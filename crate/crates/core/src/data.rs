//! Hash-rate / difficulty time series: ingestion, uniform binning and
//! model estimation.

use std::fmt;
use std::io::Read;
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{is_tp2, Belief, PomdpModel, TOL};
use crate::rng::{sample_index, tagged, Purpose};

const REQUIRED_COLUMNS: [&str; 3] = ["timestamp", "hash_rate", "difficulty"];

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub timestamp: NaiveDateTime,
    /// Hashes per second.
    pub hash_rate: f64,
    pub difficulty: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TimeSeriesDataset {
    pub records: Vec<Record>,
}

/// A row that could not be used, with its 1-based line number.
#[derive(Clone, Debug, PartialEq)]
pub struct Rejection {
    pub line: u64,
    pub reason: String,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.reason)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ingested {
    pub dataset: TimeSeriesDataset,
    pub rejections: Vec<Rejection>,
}

/// Accepts `YYYY-MM-DD`, `YYYY-MM-DDTHH:MM:SS` and RFC 3339 timestamps.
pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return d.and_hms_opt(0, 0, 0);
    }
    if let Ok(t) = NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S%.f") {
        return Some(t);
    }
    DateTime::parse_from_rfc3339(s).ok().map(|t| t.naive_utc())
}

pub fn ingest(path: impl AsRef<Path>) -> Result<Ingested> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(file)
}

pub fn ingest_reader(reader: impl Read) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Dataset(format!("cannot read header: {e}")))?
        .clone();
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Err(Error::Dataset("empty file".into()));
    }
    let mut cols = [0usize; 3];
    for (k, name) in REQUIRED_COLUMNS.iter().enumerate() {
        cols[k] = headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Dataset(format!("missing column `{name}`")))?;
    }

    let mut records = Vec::new();
    let mut rejections = Vec::new();
    for row in rdr.records() {
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                rejections.push(Rejection {
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        match parse_row(&row, &cols) {
            Ok(r) => records.push(r),
            Err(reason) => rejections.push(Rejection { line, reason }),
        }
    }
    if records.is_empty() {
        return Err(Error::Dataset("no usable records".into()));
    }
    records.sort_by_key(|r| r.timestamp);
    if let Some(w) = records.windows(2).find(|w| w[0].timestamp == w[1].timestamp) {
        return Err(Error::Dataset(format!(
            "duplicate timestamp {}",
            w[0].timestamp
        )));
    }
    Ok(Ingested {
        dataset: TimeSeriesDataset { records },
        rejections,
    })
}

fn parse_row(row: &csv::StringRecord, cols: &[usize; 3]) -> std::result::Result<Record, String> {
    let field = |k: usize| {
        row.get(cols[k])
            .filter(|s| !s.is_empty())
            .ok_or_else(|| format!("missing `{}`", REQUIRED_COLUMNS[k]))
    };
    let timestamp =
        parse_timestamp(field(0)?).ok_or_else(|| format!("bad timestamp `{}`", field(0).unwrap_or("")))?;
    let number = |k: usize| -> std::result::Result<f64, String> {
        let raw = field(k)?;
        let v: f64 = raw
            .parse()
            .map_err(|_| format!("bad `{}` value `{raw}`", REQUIRED_COLUMNS[k]))?;
        if !v.is_finite() || v < 0.0 {
            return Err(format!("`{}` must be finite and non-negative, got {v}", REQUIRED_COLUMNS[k]));
        }
        Ok(v)
    };
    Ok(Record {
        timestamp,
        hash_rate: number(1)?,
        difficulty: number(2)?,
    })
}

pub fn write_csv(dataset: &TimeSeriesDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let to_err = |e: csv::Error| Error::Dataset(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(to_err)?;
    w.write_record(REQUIRED_COLUMNS).map_err(to_err)?;
    for r in &dataset.records {
        w.write_record([
            r.timestamp.format("%Y-%m-%d").to_string(),
            format!("{:.6e}", r.hash_rate),
            format!("{:.6e}", r.difficulty),
        ])
        .map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `k + 1` edges of `k` equal-width bins spanning `[min, max]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinEdges(pub Vec<f64>);

impl BinEdges {
    pub fn uniform(values: &[f64], bins: usize, column: &str) -> Result<Self> {
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if values.is_empty() || !(max > min) {
            return Err(Error::DegenerateRange(column.into()));
        }
        let w = (max - min) / bins as f64;
        let mut edges: Vec<f64> = (0..=bins).map(|i| min + i as f64 * w).collect();
        edges[bins] = max;
        Ok(Self(edges))
    }

    pub fn num_bins(&self) -> usize {
        self.0.len() - 1
    }

    /// 1-based bin of `v`; bins are half-open except the last.
    pub fn assign(&self, v: f64) -> usize {
        let k = self.num_bins();
        let (lo, hi) = (self.0[0], self.0[k]);
        let mut id = (((v - lo) / (hi - lo)) * k as f64).floor().clamp(0.0, (k - 1) as f64) as usize + 1;
        // repair float disagreement with the stored edges
        while id > 1 && v < self.0[id - 1] {
            id -= 1;
        }
        while id < k && v >= self.0[id] {
            id += 1;
        }
        id
    }

    /// `[lower, upper]` of 1-based bin `id`.
    pub fn interval(&self, id: usize) -> (f64, f64) {
        (self.0[id - 1], self.0[id])
    }

    pub fn centers(&self) -> Vec<f64> {
        self.0.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BinnedSeries {
    /// 1-based hash-rate bins.
    pub state_ids: Vec<usize>,
    /// 1-based difficulty bins.
    pub obs_ids: Vec<usize>,
    pub state_edges: BinEdges,
    pub obs_edges: BinEdges,
}

impl BinnedSeries {
    pub fn num_states(&self) -> usize {
        self.state_edges.num_bins()
    }

    pub fn num_obs(&self) -> usize {
        self.obs_edges.num_bins()
    }
}

/// Hash rate becomes the state, difficulty the observation.
pub fn bin_series(dataset: &TimeSeriesDataset, num_states: usize, num_obs: usize) -> Result<BinnedSeries> {
    if num_states < 2 || num_obs < 2 {
        return Err(Error::InvalidInput("need at least two state and two observation bins".into()));
    }
    let hr: Vec<f64> = dataset.records.iter().map(|r| r.hash_rate).collect();
    let df: Vec<f64> = dataset.records.iter().map(|r| r.difficulty).collect();
    let state_edges = BinEdges::uniform(&hr, num_states, "hash_rate")?;
    let obs_edges = BinEdges::uniform(&df, num_obs, "difficulty")?;
    Ok(BinnedSeries {
        state_ids: hr.iter().map(|&v| state_edges.assign(v)).collect(),
        obs_ids: df.iter().map(|&v| obs_edges.assign(v)).collect(),
        state_edges,
        obs_edges,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransitionEstimate {
    pub matrix: Matrix,
    pub counts: Vec<Vec<u64>>,
    /// 1-based states never left, whose rows were set uniform.
    pub uniform_rows: Vec<usize>,
}

/// Count-based MLE from a 1-based state sequence.
pub fn transition_mle(states: &[usize], num_states: usize) -> Result<TransitionEstimate> {
    if states.len() < 2 {
        return Err(Error::InvalidInput("need at least two states".into()));
    }
    if let Some(&s) = states.iter().find(|&&s| s == 0 || s > num_states) {
        return Err(Error::InvalidInput(format!("state id {s} outside 1..={num_states}")));
    }
    let mut counts = vec![vec![0u64; num_states]; num_states];
    for w in states.windows(2) {
        counts[w[0] - 1][w[1] - 1] += 1;
    }
    let (matrix, uniform_rows) = normalize_counts(&counts);
    Ok(TransitionEstimate {
        matrix,
        counts,
        uniform_rows,
    })
}

pub fn estimate_transition_mle(binned: &BinnedSeries) -> Result<TransitionEstimate> {
    transition_mle(&binned.state_ids, binned.num_states())
}

fn normalize_counts(counts: &[Vec<u64>]) -> (Matrix, Vec<usize>) {
    let cols = counts[0].len();
    let mut m = Matrix::zeros(counts.len(), cols);
    let mut uniform = Vec::new();
    for (i, row) in counts.iter().enumerate() {
        let total: u64 = row.iter().sum();
        for j in 0..cols {
            m[(i, j)] = if total == 0 {
                1.0 / cols as f64
            } else {
                row[j] as f64 / total as f64
            };
        }
        if total == 0 {
            uniform.push(i + 1);
        }
    }
    (m, uniform)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObservationEstimate {
    pub matrix: Matrix,
    pub empirical: Matrix,
    pub counts: Vec<Vec<u64>>,
    /// Frobenius distance between `matrix` and `empirical`.
    pub distance: f64,
    /// True when `matrix` satisfies the TP2 check.
    pub is_tp2: bool,
    pub uniform_rows: Vec<usize>,
}

/// Empirical `B̂(i, y)` from paired 1-based ids, fitted into the TP2 class.
pub fn estimate_observation_tp2(binned: &BinnedSeries) -> Result<ObservationEstimate> {
    let (n, m) = (binned.num_states(), binned.num_obs());
    if binned.state_ids.len() != binned.obs_ids.len() || binned.state_ids.is_empty() {
        return Err(Error::DimensionMismatch("state and observation sequences differ in length".into()));
    }
    let mut counts = vec![vec![0u64; m]; n];
    for (&x, &y) in binned.state_ids.iter().zip(&binned.obs_ids) {
        counts[x - 1][y - 1] += 1;
    }
    let (empirical, uniform_rows) = normalize_counts(&counts);
    let fit = project_tp2(&empirical)?;
    Ok(ObservationEstimate {
        distance: fit.matrix.frobenius_distance(&empirical),
        is_tp2: fit.is_tp2,
        matrix: fit.matrix,
        empirical,
        counts,
        uniform_rows,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tp2Fit {
    pub matrix: Matrix,
    pub is_tp2: bool,
    pub iterations: usize,
}

const FIT_MAX_ITERS: usize = 20_000;
const FIT_TOL: f64 = 1e-13;

/// Closest row-stochastic TP2 matrix to `target` in Frobenius norm.
///
/// A TP2 row-stochastic matrix is written as rows `b_i = softmax(s_i)` with
/// `s_{i+1} = s_i + Δ_i`, `Δ_i(1) = 0`, `Δ_i(j+1) = Δ_i(j) + g_i(j)²`. Any
/// such matrix has non-decreasing log ratios between consecutive rows and
/// hence non-negative 2×2 minors, so descent on `(s_1, g)` never leaves the
/// class. Inputs that are already TP2 and row-stochastic are returned as is.
pub fn project_tp2(target: &Matrix) -> Result<Tp2Fit> {
    if target.rows() == 0 || target.cols() == 0 {
        return Err(Error::InvalidInput("empty matrix".into()));
    }
    if target.is_row_stochastic(TOL) && is_tp2(target)? {
        return Ok(Tp2Fit {
            matrix: target.clone(),
            is_tp2: true,
            iterations: 0,
        });
    }
    let (n, m) = (target.rows(), target.cols());
    if m == 1 {
        let matrix = Matrix::from_row_major(n, 1, vec![1.0; n])?;
        return Ok(Tp2Fit {
            matrix,
            is_tp2: true,
            iterations: 0,
        });
    }
    let floor = 1e-4;
    let log = |v: f64| (v.max(0.0) + floor).ln();
    // s_1 from the first row, g from the positive part of the target's
    // second log differences
    let mut x = Vec::with_capacity(m + (n - 1) * (m - 1));
    x.extend((0..m).map(|j| log(target[(0, j)])));
    for i in 0..n - 1 {
        for j in 0..m - 1 {
            let d = (log(target[(i + 1, j + 1)]) - log(target[(i, j + 1)]))
                - (log(target[(i + 1, j)]) - log(target[(i, j)]));
            x.push(d.max(0.0).sqrt().max(0.05));
        }
    }

    let mut f = fit_objective(&x, target, n, m).0;
    let mut step = 1.0;
    let mut iterations = 0;
    for it in 0..FIT_MAX_ITERS {
        iterations = it + 1;
        let (_, grad) = fit_objective(&x, target, n, m);
        let g2: f64 = grad.iter().map(|g| g * g).sum();
        if g2 < 1e-24 {
            break;
        }
        let mut accepted = false;
        step *= 2.0;
        while step > 1e-16 {
            let trial: Vec<f64> = x.iter().zip(&grad).map(|(a, g)| a - step * g).collect();
            let ft = fit_objective(&trial, target, n, m).0;
            if ft <= f - 0.5 * step * g2 {
                let gain = f - ft;
                x = trial;
                f = ft;
                accepted = true;
                if gain < FIT_TOL * f.max(1e-12) {
                    step = 0.0;
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted || step == 0.0 {
            break;
        }
    }

    let matrix = fit_matrix(&x, n, m);
    let finite = matrix.as_slice().iter().all(|v| v.is_finite());
    if !finite {
        return Ok(Tp2Fit {
            matrix: target.clone(),
            is_tp2: false,
            iterations,
        });
    }
    let ok = is_tp2(&matrix)? && matrix.is_row_stochastic(1e-9);
    Ok(Tp2Fit {
        matrix,
        is_tp2: ok,
        iterations,
    })
}

fn fit_logits(x: &[f64], n: usize, m: usize) -> Vec<Vec<f64>> {
    let mut s = vec![x[..m].to_vec()];
    for i in 0..n - 1 {
        let g = &x[m + i * (m - 1)..m + (i + 1) * (m - 1)];
        let mut next = s[i].clone();
        let mut delta = 0.0;
        for j in 1..m {
            delta += g[j - 1] * g[j - 1];
            next[j] += delta;
        }
        s.push(next);
    }
    s
}

fn softmax(s: &[f64]) -> Vec<f64> {
    let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = s.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

fn fit_matrix(x: &[f64], n: usize, m: usize) -> Matrix {
    let rows: Vec<Vec<f64>> = fit_logits(x, n, m).iter().map(|s| softmax(s)).collect();
    Matrix::from_rows(&rows).expect("consistent shape")
}

/// Squared Frobenius distance and its gradient in `x`.
fn fit_objective(x: &[f64], target: &Matrix, n: usize, m: usize) -> (f64, Vec<f64>) {
    let logits = fit_logits(x, n, m);
    let mut f = 0.0;
    // dF/ds_i
    let mut ds = Vec::with_capacity(n);
    for (i, s) in logits.iter().enumerate() {
        let b = softmax(s);
        let gb: Vec<f64> = (0..m).map(|j| 2.0 * (b[j] - target[(i, j)])).collect();
        f += (0..m).map(|j| (b[j] - target[(i, j)]).powi(2)).sum::<f64>();
        let inner: f64 = gb.iter().zip(&b).map(|(g, p)| g * p).sum();
        ds.push((0..m).map(|j| b[j] * (gb[j] - inner)).collect::<Vec<f64>>());
    }
    let mut grad = vec![0.0; x.len()];
    for row in &ds {
        for j in 0..m {
            grad[j] += row[j];
        }
    }
    // Δ_k feeds every later row
    let mut suffix = vec![0.0; m];
    for k in (0..n - 1).rev() {
        for j in 0..m {
            suffix[j] += ds[k + 1][j];
        }
        let base = m + k * (m - 1);
        let mut tail = 0.0;
        for j in (1..m).rev() {
            tail += suffix[j];
            grad[base + j - 1] = 2.0 * x[base + j - 1] * tail;
        }
    }
    (f, grad)
}

/// `r(i) = c_1 / c_i` from the hash-rate bin centers `c_i`.
pub fn reward_from_bins(edges: &BinEdges) -> Result<Vec<f64>> {
    let c = edges.centers();
    if c.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Dataset("bin centers must be positive to invert".into()));
    }
    Ok(c.iter().map(|v| c[0] / v).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimationReport {
    pub num_records: usize,
    pub rejections: Vec<Rejection>,
    pub state_edges: BinEdges,
    pub obs_edges: BinEdges,
    pub transition_counts: Vec<Vec<u64>>,
    pub uniform_transition_rows: Vec<usize>,
    pub observation_counts: Vec<Vec<u64>>,
    pub uniform_observation_rows: Vec<usize>,
    pub empirical_observation: Matrix,
    pub projection_distance: f64,
    pub observation_is_tp2: bool,
}

impl fmt::Display for EstimationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "records: {}", self.num_records)?;
        writeln!(f, "rejected rows: {}", self.rejections.len())?;
        for r in &self.rejections {
            writeln!(f, "  {r}")?;
        }
        writeln!(f, "hash_rate bin edges: {:?}", self.state_edges.0)?;
        writeln!(f, "difficulty bin edges: {:?}", self.obs_edges.0)?;
        writeln!(f, "transition counts: {:?}", self.transition_counts)?;
        writeln!(f, "uniform transition rows: {:?}", self.uniform_transition_rows)?;
        writeln!(f, "observation counts: {:?}", self.observation_counts)?;
        writeln!(f, "uniform observation rows: {:?}", self.uniform_observation_rows)?;
        writeln!(f, "empirical observation matrix:")?;
        for i in 0..self.empirical_observation.rows() {
            writeln!(f, "  {:?}", self.empirical_observation.row(i))?;
        }
        writeln!(f, "tp2 projection distance: {:.6e}", self.projection_distance)?;
        writeln!(f, "observation matrix tp2: {}", self.observation_is_tp2)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationConfig {
    pub num_states: usize,
    pub num_obs: usize,
    pub discount: f64,
    pub num_stops: usize,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            num_states: 3,
            num_obs: 5,
            discount: 0.9,
            num_stops: 3,
        }
    }
}

/// Full pipeline from records to a model. The initial belief is the
/// vertex of the last observed state.
pub fn estimate_model(ingested: &Ingested, config: &EstimationConfig) -> Result<(PomdpModel, EstimationReport)> {
    let binned = bin_series(&ingested.dataset, config.num_states, config.num_obs)?;
    let trans = estimate_transition_mle(&binned)?;
    let obs = estimate_observation_tp2(&binned)?;
    let reward = reward_from_bins(&binned.state_edges)?;
    let last = *binned.state_ids.last().expect("non-empty");
    let model = PomdpModel::new(
        trans.matrix,
        obs.matrix.clone(),
        reward,
        config.discount,
        config.num_stops,
        Belief::vertex(config.num_states, last),
    )?;
    let report = EstimationReport {
        num_records: ingested.dataset.records.len(),
        rejections: ingested.rejections.clone(),
        state_edges: binned.state_edges,
        obs_edges: binned.obs_edges,
        transition_counts: trans.counts,
        uniform_transition_rows: trans.uniform_rows,
        observation_counts: obs.counts,
        uniform_observation_rows: obs.uniform_rows,
        empirical_observation: obs.empirical,
        projection_distance: obs.distance,
        observation_is_tp2: obs.is_tp2,
    };
    Ok((model, report))
}

/// Daily synthetic series drawn from `model`: each day's state and
/// observation are mapped to the center of the matching value bin with
/// uniform jitter of ±20% of the bin width.
pub fn synthesize_dataset(
    model: &PomdpModel,
    start: NaiveDate,
    days: usize,
    hash_rate_range: (f64, f64),
    difficulty_range: (f64, f64),
    seed: u64,
) -> TimeSeriesDataset {
    let mut rng = tagged(seed, 0, Purpose::Environment);
    let mut noise = tagged(seed, 1, Purpose::Environment);
    let value = |id: usize, k: usize, (lo, hi): (f64, f64), u: f64| {
        let w = (hi - lo) / k as f64;
        lo + (id as f64 + 0.5) * w + (u - 0.5) * 0.4 * w
    };
    let mut x = sample_index(model.initial_belief().probs(), &mut rng);
    let mut records = Vec::with_capacity(days);
    for d in 0..days {
        if d > 0 {
            x = sample_index(model.transition().row(x), &mut rng);
        }
        let y = sample_index(model.observation().row(x), &mut rng);
        let date = start + chrono::Days::new(d as u64);
        records.push(Record {
            timestamp: date.and_hms_opt(0, 0, 0).expect("midnight"),
            hash_rate: value(x, model.num_states(), hash_rate_range, noise.gen()),
            difficulty: value(y, model.num_observations(), difficulty_range, noise.gen()),
        });
    }
    TimeSeriesDataset { records }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn ds(values: &[f64]) -> TimeSeriesDataset {
        let start = NaiveDate::from_ymd_opt(2022, 4, 1).unwrap();
        TimeSeriesDataset {
            records: values
                .iter()
                .enumerate()
                .map(|(i, &v)| Record {
                    timestamp: (start + chrono::Days::new(i as u64)).and_hms_opt(0, 0, 0).unwrap(),
                    hash_rate: v,
                    difficulty: 10.0 - v,
                })
                .collect(),
        }
    }

    #[test]
    fn uniform_binning() {
        let b = bin_series(&ds(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), 3, 2).unwrap();
        assert_eq!(b.state_ids, vec![1, 1, 2, 2, 3, 3]);
        assert!(matches!(
            bin_series(&ds(&[2.0, 2.0, 2.0]), 3, 2),
            Err(Error::DegenerateRange(_))
        ));
    }

    #[test]
    fn mle_hand_counts() {
        let t = transition_mle(&[1, 1, 2, 2, 3, 3], 3).unwrap();
        let want = Matrix::from_rows(&[
            vec![0.5, 0.5, 0.0],
            vec![0.0, 0.5, 0.5],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        assert!(t.matrix.max_abs_diff(&want) < 1e-15);
        let c = transition_mle(&[2, 2, 2], 3).unwrap();
        assert_eq!(c.uniform_rows, vec![1, 3]);
        assert_eq!(c.matrix.row(1), &[0.0, 1.0, 0.0]);
        assert!((c.matrix[(0, 0)] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn tp2_input_is_fixed_point() {
        let b = fixtures::table4().observation().clone();
        let fit = project_tp2(&b).unwrap();
        assert_eq!(fit.matrix, b);
        assert_eq!(fit.iterations, 0);
    }

    #[test]
    fn anti_tp2_two_by_two() {
        let t = Matrix::from_rows(&[vec![0.4, 0.6], vec![0.6, 0.4]]).unwrap();
        let fit = project_tp2(&t).unwrap();
        assert!(fit.is_tp2);
        assert!(fit.matrix.is_row_stochastic(1e-9));
        let det = fit.matrix[(0, 0)] * fit.matrix[(1, 1)] - fit.matrix[(0, 1)] * fit.matrix[(1, 0)];
        assert!(det >= -1e-12);
        // the best TP2 fit has identical rows at [0.5, 0.5]
        assert!(fit.matrix.max_abs_diff(&Matrix::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap()) < 1e-3);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let t = Matrix::from_rows(&[
            vec![0.1, 0.6, 0.3],
            vec![0.5, 0.2, 0.3],
            vec![0.2, 0.2, 0.6],
        ])
        .unwrap();
        let x = vec![0.3, -0.2, 0.1, 0.4, 0.7, -0.5, 0.2];
        let (_, g) = fit_objective(&x, &t, 3, 3);
        for k in 0..x.len() {
            let h = 1e-6;
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            let fd = (fit_objective(&xp, &t, 3, 3).0 - fit_objective(&xm, &t, 3, 3).0) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-7, "k={k} fd={fd} g={}", g[k]);
        }
    }

    #[test]
    fn ingest_rejects_bad_rows() {
        let text = "timestamp,hash_rate,difficulty\n2022-04-01,1.0,2.0\n2022-04-02,abc,2.0\n2022-04-03,3.0,4.0\n";
        let ing = ingest_reader(text.as_bytes()).unwrap();
        assert_eq!(ing.dataset.records.len(), 2);
        assert_eq!(ing.rejections.len(), 1);
        assert_eq!(ing.rejections[0].line, 3);
        assert!(ingest_reader("timestamp,hash_rate\n2022-04-01,1\n".as_bytes()).is_err());
        assert!(ingest_reader("".as_bytes()).is_err());
        let dup = "timestamp,hash_rate,difficulty\n2022-04-01,1,2\n2022-04-01,3,4\n";
        assert!(ingest_reader(dup.as_bytes()).is_err());
    }

    #[test]
    fn timestamps() {
        assert!(parse_timestamp("2022-04-01").is_some());
        assert!(parse_timestamp("2022-04-01T12:00:00").is_some());
        assert!(parse_timestamp("2022-04-01T12:00:00Z").is_some());
        assert!(parse_timestamp("01/04/2022").is_none());
    }

    #[test]
    fn reward_is_inverse_center() {
        let e = BinEdges(vec![1.0, 3.0, 5.0, 7.0]);
        let r = reward_from_bins(&e).unwrap();
        assert_eq!(r, vec![1.0, 0.5, 2.0 / 6.0]);
    }
}
