//! The mining POMDP: hidden Markov chain over total network computing
//! power, noisy difficulty observations, and a mine/don't-mine reward.
//!
//! Observation indices are 1-based at the public surface (`y ∈ 1..=|Y|`)
//! and 0-based everywhere inside the crate.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Tolerance for stochasticity, TP2 and MLR comparisons.
pub const TOL: f64 = 1e-12;

/// Decision at one time step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    /// `u = 1`
    Continue,
    /// `u = 2`
    Mine,
}

impl Action {
    pub fn code(self) -> u8 {
        match self {
            Action::Continue => 1,
            Action::Mine => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Action::Continue),
            2 => Some(Action::Mine),
            _ => None,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

/// A point on the probability simplex over hidden states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Belief(Vec<f64>);

impl Belief {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidInput("empty belief".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidInput(format!(
                "belief entries must be finite and non-negative: {probs:?}"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > TOL {
            return Err(Error::InvalidInput(format!(
                "belief sums to {sum}, expected 1"
            )));
        }
        Ok(Self(probs))
    }

    /// Normalizes non-negative weights into a belief.
    pub fn normalized(weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) || weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "cannot normalize weights {weights:?}"
            )));
        }
        Ok(Self(weights.into_iter().map(|w| w / sum).collect()))
    }

    /// Unit vector `e_i` with 1-based `i`.
    pub fn vertex(n: usize, i: usize) -> Self {
        assert!(i >= 1 && i <= n, "vertex index {i} out of 1..={n}");
        let mut v = vec![0.0; n];
        v[i - 1] = 1.0;
        Self(v)
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub(crate) fn from_raw(probs: Vec<f64>) -> Self {
        Self(probs)
    }
}

impl TryFrom<Vec<f64>> for Belief {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Belief::new(v)
    }
}

impl From<Belief> for Vec<f64> {
    fn from(b: Belief) -> Self {
        b.0
    }
}

impl std::ops::Index<usize> for Belief {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Multiple-stopping POMDP parameters.
///
/// Construction only checks that dimensions agree; [`PomdpModel::ensure_valid`]
/// enforces the numerical invariants and [`validate_model`] reports on the
/// structural assumptions.
#[derive(Clone, Debug, PartialEq)]
pub struct PomdpModel {
    transition: Matrix,
    observation: Matrix,
    reward_mine: Vec<f64>,
    discount: f64,
    num_stops: usize,
    initial_belief: Belief,
}

impl PomdpModel {
    pub fn new(
        transition: Matrix,
        observation: Matrix,
        reward_mine: Vec<f64>,
        discount: f64,
        num_stops: usize,
        initial_belief: Belief,
    ) -> Result<Self> {
        let n = transition.rows();
        if n == 0 || !transition.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "transition matrix must be square and non-empty, got {}x{}",
                transition.rows(),
                transition.cols()
            )));
        }
        if observation.rows() != n || observation.cols() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "observation matrix must be {n}x|Y|, got {}x{}",
                observation.rows(),
                observation.cols()
            )));
        }
        if reward_mine.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "reward vector has {} entries, expected {n}",
                reward_mine.len()
            )));
        }
        if initial_belief.dim() != n {
            return Err(Error::DimensionMismatch(format!(
                "initial belief has {} entries, expected {n}",
                initial_belief.dim()
            )));
        }
        Ok(Self {
            transition,
            observation,
            reward_mine,
            discount,
            num_stops,
            initial_belief,
        })
    }

    pub fn num_states(&self) -> usize {
        self.transition.rows()
    }

    pub fn num_observations(&self) -> usize {
        self.observation.cols()
    }

    pub fn transition(&self) -> &Matrix {
        &self.transition
    }

    pub fn observation(&self) -> &Matrix {
        &self.observation
    }

    pub fn reward_mine(&self) -> &[f64] {
        &self.reward_mine
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn num_stops(&self) -> usize {
        self.num_stops
    }

    pub fn initial_belief(&self) -> &Belief {
        &self.initial_belief
    }

    pub fn with_num_stops(&self, num_stops: usize) -> Self {
        Self {
            num_stops,
            ..self.clone()
        }
    }

    pub fn with_initial_belief(&self, belief: Belief) -> Result<Self> {
        Self::new(
            self.transition.clone(),
            self.observation.clone(),
            self.reward_mine.clone(),
            self.discount,
            self.num_stops,
            belief,
        )
    }

    pub fn with_reward(&self, reward_mine: Vec<f64>) -> Result<Self> {
        Self::new(
            self.transition.clone(),
            self.observation.clone(),
            reward_mine,
            self.discount,
            self.num_stops,
            self.initial_belief.clone(),
        )
    }

    /// Checks the invariants every solver relies on.
    pub fn ensure_valid(&self) -> Result<()> {
        if !self.transition.is_row_stochastic(TOL) {
            return Err(Error::InvalidModel("transition matrix is not row-stochastic".into()));
        }
        if !self.observation.is_row_stochastic(TOL) {
            return Err(Error::InvalidModel("observation matrix is not row-stochastic".into()));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(Error::InvalidModel(format!(
                "discount {} outside (0, 1)",
                self.discount
            )));
        }
        if self.num_stops == 0 {
            return Err(Error::InvalidModel("num_stops must be at least 1".into()));
        }
        if self.reward_mine.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::InvalidModel("rewards must be finite and non-negative".into()));
        }
        if !reward_non_increasing(&self.reward_mine) {
            return Err(Error::InvalidModel(
                "mining reward must be non-increasing in the state index".into(),
            ));
        }
        Ok(())
    }

    /// Bayesian filter step with a 1-based observation index.
    ///
    /// Returns `T(π, y) = B_y Pᵀ π / σ` and `σ(π, y) = 1ᵀ B_y Pᵀ π`.
    pub fn belief_update(&self, belief: &Belief, y: usize) -> Result<(Belief, f64)> {
        if y == 0 || y > self.num_observations() {
            return Err(Error::InvalidInput(format!(
                "observation {y} outside 1..={}",
                self.num_observations()
            )));
        }
        if belief.dim() != self.num_states() {
            return Err(Error::DimensionMismatch(format!(
                "belief has {} entries, model has {} states",
                belief.dim(),
                self.num_states()
            )));
        }
        let mut out = vec![0.0; self.num_states()];
        let sigma = self.filter_into(belief.probs(), y - 1, &mut out);
        if sigma <= 0.0 {
            return Err(Error::ImpossibleObservation { y });
        }
        Ok((Belief::from_raw(out), sigma))
    }

    /// Unchecked filter step (0-based `y`). Writes the normalized posterior
    /// into `out` and returns σ; `out` is left unnormalized when σ = 0.
    pub(crate) fn filter_into(&self, prior: &[f64], y: usize, out: &mut [f64]) -> f64 {
        let n = self.num_states();
        self.predict_into(prior, out);
        let mut sigma = 0.0;
        for j in 0..n {
            out[j] *= self.observation[(j, y)];
            sigma += out[j];
        }
        if sigma > 0.0 {
            for v in out.iter_mut() {
                *v /= sigma;
            }
        }
        sigma
    }

    /// `Pᵀ π`
    pub(crate) fn predict_into(&self, prior: &[f64], out: &mut [f64]) {
        let n = self.num_states();
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            let p = prior[i];
            if p == 0.0 {
                continue;
            }
            let row = self.transition.row(i);
            for j in 0..n {
                out[j] += p * row[j];
            }
        }
    }

    /// Expected immediate reward `r(π, u)`.
    pub fn reward_of_belief(&self, belief: &Belief, action: Action) -> f64 {
        self.expected_reward(belief.probs(), action)
    }

    pub(crate) fn expected_reward(&self, probs: &[f64], action: Action) -> f64 {
        match action {
            Action::Continue => 0.0,
            Action::Mine => dot(&self.reward_mine, probs),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let file: ModelFile = toml::from_str(s).map_err(|e| Error::Parse {
            path: "<model>".into(),
            message: e.to_string(),
        })?;
        file.into_model()
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&ModelFile::from(self)).expect("model serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::Parse {
                path: path.into(),
                message,
            },
            other => other,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn reward_non_increasing(r: &[f64]) -> bool {
    r.windows(2).all(|w| w[1] <= w[0] + TOL)
}

/// On-disk model description. Matrices are flattened row-major.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub num_states: usize,
    pub num_observations: usize,
    pub transition: Vec<f64>,
    pub observation: Vec<f64>,
    pub reward_mine: Vec<f64>,
    pub discount: f64,
    pub num_stops: usize,
    pub initial_belief: Vec<f64>,
}

impl ModelFile {
    pub fn into_model(self) -> Result<PomdpModel> {
        let n = self.num_states;
        let transition = Matrix::from_row_major(n, n, self.transition)?;
        let observation = Matrix::from_row_major(n, self.num_observations, self.observation)?;
        // The belief is checked for dimension only here so that malformed
        // beliefs surface through validation rather than as parse errors.
        if self.initial_belief.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "initial belief has {} entries, expected {n}",
                self.initial_belief.len()
            )));
        }
        let belief = Belief::new(self.initial_belief)?;
        PomdpModel::new(
            transition,
            observation,
            self.reward_mine,
            self.discount,
            self.num_stops,
            belief,
        )
    }
}

impl From<&PomdpModel> for ModelFile {
    fn from(m: &PomdpModel) -> Self {
        Self {
            num_states: m.num_states(),
            num_observations: m.num_observations(),
            transition: m.transition.as_slice().to_vec(),
            observation: m.observation.as_slice().to_vec(),
            reward_mine: m.reward_mine.clone(),
            discount: m.discount,
            num_stops: m.num_stops,
            initial_belief: m.initial_belief.probs().to_vec(),
        }
    }
}

// ---------------------------------------------------------------------------
// Stochastic orders
// ---------------------------------------------------------------------------

/// A 2×2 minor with negative determinant (indices 0-based).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MinorViolation {
    pub rows: (usize, usize),
    pub cols: (usize, usize),
    pub det: f64,
}

impl fmt::Display for MinorViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "rows ({},{}) cols ({},{}) det {:.3e}",
            self.rows.0 + 1,
            self.rows.1 + 1,
            self.cols.0 + 1,
            self.cols.1 + 1,
            self.det
        )
    }
}

/// Every 2×2 minor `(i₁<i₂, j₁<j₂)` whose determinant is below `−TOL`.
pub fn tp2_violations(m: &Matrix) -> Result<Vec<MinorViolation>> {
    if m.rows() == 0 || m.cols() == 0 {
        return Err(Error::InvalidInput("TP2 check on an empty matrix".into()));
    }
    let mut out = Vec::new();
    for i1 in 0..m.rows() {
        for i2 in i1 + 1..m.rows() {
            for j1 in 0..m.cols() {
                for j2 in j1 + 1..m.cols() {
                    let det = m[(i1, j1)] * m[(i2, j2)] - m[(i1, j2)] * m[(i2, j1)];
                    if det < -TOL {
                        out.push(MinorViolation {
                            rows: (i1, i2),
                            cols: (j1, j2),
                            det,
                        });
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Totally positive of order 2: all second-order minors non-negative.
pub fn is_tp2(m: &Matrix) -> Result<bool> {
    Ok(tp2_violations(m)?.is_empty())
}

/// Outcome of comparing two beliefs in the monotone likelihood ratio order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MlrOrdering {
    /// `a ≥_r b` strictly in at least one pair.
    Greater,
    /// `b ≥_r a` strictly in at least one pair.
    Less,
    Equal,
    Incomparable,
}

/// `a ≥_r b` iff `a(j) b(i) ≥ b(j) a(i)` for all `i < j`.
pub fn mlr_compare(a: &Belief, b: &Belief) -> Result<MlrOrdering> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!(
            "beliefs of dimension {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(mlr_compare_slices(a.probs(), b.probs()))
}

pub(crate) fn mlr_compare_slices(a: &[f64], b: &[f64]) -> MlrOrdering {
    let mut a_ge = true;
    let mut b_ge = true;
    let n = a.len();
    for i in 0..n {
        for j in i + 1..n {
            let d = a[j] * b[i] - b[j] * a[i];
            if d < -TOL {
                a_ge = false;
            }
            if d > TOL {
                b_ge = false;
            }
        }
    }
    match (a_ge, b_ge) {
        (true, true) => MlrOrdering::Equal,
        (true, false) => MlrOrdering::Greater,
        (false, true) => MlrOrdering::Less,
        (false, false) => MlrOrdering::Incomparable,
    }
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    /// Violating minors of `P`, for diagnostics.
    pub transition_minors: Vec<MinorViolation>,
    /// Violating minors of `B`.
    pub observation_minors: Vec<MinorViolation>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let mark = if c.passed { "PASS" } else { "FAIL" };
            write!(f, "{mark}  {}", c.name)?;
            if !c.detail.is_empty() {
                write!(f, "  ({})", c.detail)?;
            }
            writeln!(f)?;
        }
        for v in &self.transition_minors {
            writeln!(f, "      transition minor {v}")?;
        }
        for v in &self.observation_minors {
            writeln!(f, "      observation minor {v}")?;
        }
        Ok(())
    }
}

/// Tri-diagonal with each diagonal entry at least as large as every other
/// entry in its row.
pub fn is_tridiagonal_dominant(p: &Matrix) -> bool {
    (0..p.rows()).all(|i| {
        (0..p.cols()).all(|j| {
            let off_band = i.abs_diff(j) > 1 && p[(i, j)].abs() > TOL;
            !off_band && p[(i, j)] <= p[(i, i)] + TOL
        })
    })
}

pub fn validate_model(model: &PomdpModel) -> ValidationReport {
    let p = model.transition();
    let b = model.observation();
    let mut checks = Vec::new();

    let p_stoch = p.is_row_stochastic(TOL);
    checks.push(Check {
        name: "transition_stochastic",
        passed: p_stoch,
        detail: row_detail(p),
    });
    let b_stoch = b.is_row_stochastic(TOL);
    checks.push(Check {
        name: "observation_stochastic",
        passed: b_stoch,
        detail: row_detail(b),
    });

    let transition_minors = tp2_violations(p).unwrap_or_default();
    let observation_minors = tp2_violations(b).unwrap_or_default();
    checks.push(Check {
        name: "transition_tp2",
        passed: transition_minors.is_empty(),
        detail: minor_detail(&transition_minors),
    });
    checks.push(Check {
        name: "observation_tp2",
        passed: observation_minors.is_empty(),
        detail: minor_detail(&observation_minors),
    });
    checks.push(Check {
        name: "transition_tridiagonal_dominant",
        passed: is_tridiagonal_dominant(p),
        detail: String::new(),
    });
    let r = model.reward_mine();
    checks.push(Check {
        name: "reward_non_increasing",
        passed: reward_non_increasing(r) && r.iter().all(|v| v.is_finite() && *v >= 0.0),
        detail: format!("{r:?}"),
    });
    let rho = model.discount();
    checks.push(Check {
        name: "discount_in_unit_interval",
        passed: rho > 0.0 && rho < 1.0,
        detail: format!("{rho}"),
    });
    checks.push(Check {
        name: "num_stops_positive",
        passed: model.num_stops() >= 1,
        detail: format!("{}", model.num_stops()),
    });

    ValidationReport {
        checks,
        transition_minors,
        observation_minors,
    }
}

fn row_detail(m: &Matrix) -> String {
    let mut bad = Vec::new();
    for i in 0..m.rows() {
        let row = m.row(i);
        if row.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            bad.push(format!("row {} has a negative entry", i + 1));
        } else {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > TOL {
                bad.push(format!("row {} sums to {s}", i + 1));
            }
        }
    }
    bad.join("; ")
}

fn minor_detail(v: &[MinorViolation]) -> String {
    if v.is_empty() {
        String::new()
    } else {
        format!("{} negative minors", v.len())
    }
}

// ---------------------------------------------------------------------------
// Absorbing-state augmentation
// ---------------------------------------------------------------------------

/// Augmented chain over `(l, x)` pairs plus one absorbing state, ordered
/// `(1,1)..(1,|X|), (2,1)..(L,|X|), absorbing`.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedModel {
    pub num_states: usize,
    pub num_stops: usize,
    pub transition_continue: Matrix,
    pub transition_mine: Matrix,
}

impl AugmentedModel {
    pub fn size(&self) -> usize {
        self.num_stops * self.num_states + 1
    }

    /// Index of the pair `(l, x)`, both 1-based.
    pub fn index_of(&self, level: usize, state: usize) -> usize {
        (level - 1) * self.num_states + (state - 1)
    }

    pub fn absorbing_index(&self) -> usize {
        self.size() - 1
    }
}

pub fn build_augmented_model(model: &PomdpModel) -> AugmentedModel {
    let n = model.num_states();
    let l_max = model.num_stops();
    let size = l_max * n + 1;
    let p = model.transition();
    let mut cont = Matrix::zeros(size, size);
    let mut mine = Matrix::zeros(size, size);
    for l in 0..l_max {
        for i in 0..n {
            for j in 0..n {
                cont[(l * n + i, l * n + j)] = p[(i, j)];
                if l + 1 < l_max {
                    mine[(l * n + i, (l + 1) * n + j)] = p[(i, j)];
                }
            }
            if l + 1 == l_max {
                mine[(l * n + i, size - 1)] = 1.0;
            }
        }
    }
    cont[(size - 1, size - 1)] = 1.0;
    mine[(size - 1, size - 1)] = 1.0;
    AugmentedModel {
        num_states: n,
        num_stops: l_max,
        transition_continue: cont,
        transition_mine: mine,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use approx::assert_abs_diff_eq;

    #[test]
    fn tp2_table_matrices() {
        let t1 = fixtures::table1();
        assert!(is_tp2(t1.transition()).unwrap());
        assert!(is_tp2(t1.observation()).unwrap());
        let t4 = fixtures::table4();
        assert!(is_tp2(t4.transition()).unwrap());
        // As printed (5x3) and as used (3x5).
        assert!(is_tp2(&t4.observation().transpose()).unwrap());
        assert!(is_tp2(t4.observation()).unwrap());
    }

    #[test]
    fn tp2_identity_and_antidiagonal() {
        assert!(is_tp2(&Matrix::identity(4)).unwrap());
        let anti = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let v = tp2_violations(&anti).unwrap();
        assert_eq!(v.len(), 1);
        assert_abs_diff_eq!(v[0].det, -1.0);
    }

    #[test]
    fn tp2_rejects_empty() {
        assert!(matches!(
            is_tp2(&Matrix::zeros(0, 0)),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn mlr_examples() {
        let e1 = Belief::vertex(3, 1);
        let e3 = Belief::vertex(3, 3);
        assert_eq!(mlr_compare(&e3, &e1).unwrap(), MlrOrdering::Greater);
        assert_eq!(mlr_compare(&e1, &e3).unwrap(), MlrOrdering::Less);

        let a = Belief::new(vec![0.2, 0.3, 0.5]).unwrap();
        let b = Belief::new(vec![0.5, 0.3, 0.2]).unwrap();
        assert_eq!(mlr_compare(&a, &b).unwrap(), MlrOrdering::Greater);

        let c = Belief::new(vec![0.5, 0.0, 0.5]).unwrap();
        let d = Belief::new(vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(mlr_compare(&c, &d).unwrap(), MlrOrdering::Incomparable);

        assert_eq!(mlr_compare(&a, &a).unwrap(), MlrOrdering::Equal);
        assert!(matches!(
            mlr_compare(&a, &Belief::uniform(2)),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn filter_table1_uniform_prior() {
        // Exact rational evaluation: Pᵀπ = [1/4, 1/2, 1/4];
        // B(:,1) = [0.2384, 0.1686, 0.0221] → [0.0596, 0.0843, 0.005525] / 0.149425.
        // Uses the published weights before row rescaling.
        let f = fixtures::table1();
        let raw = Matrix::from_rows(
            &fixtures::SHARED_OBSERVATION_RAW
                .iter()
                .map(|r| r.to_vec())
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let m = PomdpModel::new(
            f.transition().clone(),
            raw,
            f.reward_mine().to_vec(),
            0.9,
            3,
            Belief::vertex(3, 3),
        )
        .unwrap();
        let (post, sigma) = m.belief_update(&Belief::uniform(3), 1).unwrap();
        assert_abs_diff_eq!(sigma, 0.149425, epsilon = 1e-12);
        let expect = [0.0596 / 0.149425, 0.0843 / 0.149425, 0.005525 / 0.149425];
        for (a, b) in post.probs().iter().zip(expect) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(post[0], 0.3988, epsilon = 1e-4);
        assert_abs_diff_eq!(post[1], 0.5642, epsilon = 1e-4);
        assert_abs_diff_eq!(post[2], 0.0370, epsilon = 1e-4);
    }

    #[test]
    fn filter_table1_fixture_uniform_prior() {
        let m = fixtures::table1();
        let b: Vec<f64> = fixtures::SHARED_OBSERVATION_RAW
            .iter()
            .map(|r| r[0] / r.iter().sum::<f64>())
            .collect();
        let joint = [0.25 * b[0], 0.5 * b[1], 0.25 * b[2]];
        let sigma_ref: f64 = joint.iter().sum();
        let (post, sigma) = m.belief_update(&Belief::uniform(3), 1).unwrap();
        assert_abs_diff_eq!(sigma, sigma_ref, epsilon = 1e-12);
        for (a, j) in post.probs().iter().zip(joint) {
            assert_abs_diff_eq!(*a, j / sigma_ref, epsilon = 1e-12);
        }
    }

    #[test]
    fn filter_identity_dynamics_keeps_vertex() {
        let m = fixtures::table1();
        let m = PomdpModel::new(
            Matrix::identity(3),
            m.observation().clone(),
            m.reward_mine().to_vec(),
            0.9,
            3,
            Belief::vertex(3, 2),
        )
        .unwrap();
        for y in 1..=5 {
            let (post, _) = m.belief_update(&Belief::vertex(3, 2), y).unwrap();
            assert_eq!(post, Belief::vertex(3, 2));
        }
    }

    #[test]
    fn filter_impossible_observation() {
        let b = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let m = PomdpModel::new(
            Matrix::identity(2),
            b,
            vec![1.0, 0.5],
            0.9,
            1,
            Belief::uniform(2),
        )
        .unwrap();
        assert!(matches!(
            m.belief_update(&Belief::uniform(2), 2),
            Err(Error::ImpossibleObservation { y: 2 })
        ));
        assert!(matches!(
            m.belief_update(&Belief::uniform(2), 3),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn rewards() {
        let t1 = fixtures::table1();
        assert_abs_diff_eq!(
            t1.reward_of_belief(&Belief::vertex(3, 1), Action::Mine),
            0.1
        );
        assert_eq!(t1.reward_of_belief(&Belief::uniform(3), Action::Continue), 0.0);
        let t4 = fixtures::table4();
        let pi = Belief::new(vec![0.5, 0.5, 0.0]).unwrap();
        assert_abs_diff_eq!(t4.reward_of_belief(&pi, Action::Mine), 0.5625, epsilon = 1e-15);
    }

    #[test]
    fn augmented_single_stop() {
        let m = PomdpModel::new(
            Matrix::from_rows(&[vec![0.7, 0.3], vec![0.2, 0.8]]).unwrap(),
            Matrix::identity(2),
            vec![1.0, 0.1],
            0.9,
            1,
            Belief::uniform(2),
        )
        .unwrap();
        let aug = build_augmented_model(&m);
        assert_eq!(aug.transition_mine.rows(), 3);
        assert_eq!(aug.transition_mine.row(0), &[0.0, 0.0, 1.0]);
        assert_eq!(aug.transition_mine.row(1), &[0.0, 0.0, 1.0]);
        assert_eq!(aug.transition_continue.row(2), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn augmented_table1_layout() {
        let m = fixtures::table1();
        let aug = build_augmented_model(&m);
        assert_eq!(aug.size(), 10);
        assert!(aug.transition_continue.is_row_stochastic(TOL));
        assert!(aug.transition_mine.is_row_stochastic(TOL));
        // Mining from (1, x) lands in level 2 with P's row.
        let from = aug.index_of(1, 2);
        for j in 1..=3 {
            assert_eq!(
                aug.transition_mine[(from, aug.index_of(2, j))],
                m.transition()[(1, j - 1)]
            );
        }
        assert_eq!(aug.transition_mine[(aug.index_of(3, 1), aug.absorbing_index())], 1.0);
    }

    #[test]
    fn validation_reports_failures() {
        let good = validate_model(&fixtures::table1());
        assert!(good.all_passed(), "{good}");
        let t4 = validate_model(&fixtures::table4());
        assert!(t4.all_passed(), "{t4}");

        let m = fixtures::table1();
        let bad_b = Matrix::from_rows(&[
            vec![0.1, 0.2, 0.3, 0.2, 0.2],
            vec![0.3, 0.3, 0.2, 0.1, 0.1],
            vec![0.0, 0.1, 0.2, 0.3, 0.4],
        ])
        .unwrap();
        let m2 = PomdpModel::new(
            m.transition().clone(),
            bad_b,
            m.reward_mine().to_vec(),
            0.9,
            3,
            m.initial_belief().clone(),
        )
        .unwrap();
        let rep = validate_model(&m2);
        assert!(!rep.check("observation_tp2").unwrap().passed);
        assert!(rep.check("transition_tp2").unwrap().passed);
        assert!(!rep.observation_minors.is_empty());
    }

    #[test]
    fn model_file_round_trip() {
        let m = fixtures::table4();
        let back = PomdpModel::from_toml_str(&m.to_toml_string()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn model_file_dimension_mismatch() {
        let mut f = ModelFile::from(&fixtures::table1());
        f.transition.pop();
        assert!(matches!(f.into_model(), Err(Error::DimensionMismatch(_))));
    }
}
