//! Policy interface and the linear threshold mining policy.
//!
//! The linear policy mines at stop level `l` when
//! `[θ_l, 1, 0] · [−1; π] ≥ 0`, i.e.
//! `θ_l(2) π(1) + … + θ_l(|X|−1) π(|X|−2) + π(|X|−1) ≥ θ_l(1)`.
//! Parameters that satisfy the feasibility conditions give policies whose
//! mine sets are MLR-monotone and nested across levels. The spherical
//! parametrization maps any real vector onto that feasible set.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{SimplexGrid, MAX_GRID_POINTS};
use crate::model::{Action, Belief};
use crate::rng::StreamRng;

/// Slack used by the feasibility conditions.
pub const FEASIBILITY_TOL: f64 = 1e-12;

/// What a policy sees at one decision epoch.
#[derive(Clone, Copy, Debug)]
pub struct DecisionContext<'a> {
    pub belief: &'a [f64],
    /// 1-based index of the stop being decided.
    pub level: usize,
    pub time: usize,
    /// 1-based observations received so far, most recent first.
    pub recent_obs: &'a [usize],
}

/// Anything that can choose mine / don't mine during a rollout.
pub trait Policy: Sync {
    fn name(&self) -> String;

    fn act(&self, ctx: &DecisionContext<'_>, rng: &mut StreamRng) -> Action;

    /// Number of stop levels the policy is defined for, if bounded.
    fn num_levels(&self) -> Option<usize> {
        None
    }

    /// Belief dimension the policy expects, if any.
    fn num_states(&self) -> Option<usize> {
        None
    }

    /// How many recent observations `act` looks at.
    fn observation_window(&self) -> usize {
        0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearThresholdPolicy {
    num_states: usize,
    /// `num_stops` rows of `num_states − 1` entries.
    theta: Vec<Vec<f64>>,
}

impl LinearThresholdPolicy {
    pub fn new(num_states: usize, theta: Vec<Vec<f64>>) -> Result<Self> {
        if num_states < 2 {
            return Err(Error::InvalidInput(
                "linear policy needs at least two states".into(),
            ));
        }
        if theta.is_empty() {
            return Err(Error::InvalidInput("linear policy needs at least one level".into()));
        }
        if let Some(bad) = theta.iter().find(|row| row.len() != num_states - 1) {
            return Err(Error::DimensionMismatch(format!(
                "theta rows must have {} entries, found {}",
                num_states - 1,
                bad.len()
            )));
        }
        if theta.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("theta entries must be finite".into()));
        }
        Ok(Self { num_states, theta })
    }

    pub fn num_stops(&self) -> usize {
        self.theta.len()
    }

    pub fn dim(&self) -> usize {
        self.num_states
    }

    pub fn theta(&self) -> &[Vec<f64>] {
        &self.theta
    }

    /// `[θ_l, 1, 0]`, the hyperplane normal dotted with `[−1; π]`.
    pub fn decision_vector(&self, level: usize) -> Vec<f64> {
        let mut v = self.theta[level - 1].clone();
        v.push(1.0);
        v.push(0.0);
        v
    }

    /// `[θ_l, 1, 0] · [−1; π]`
    pub fn decision_value(&self, belief: &[f64], level: usize) -> f64 {
        let th = &self.theta[level - 1];
        let n = self.num_states;
        let mut v = -th[0];
        for k in 1..n - 1 {
            v += th[k] * belief[k - 1];
        }
        v + belief[n - 2]
    }

    pub fn decide(&self, belief: &Belief, level: usize) -> Result<Action> {
        if level == 0 || level > self.num_stops() {
            return Err(Error::LevelOutOfRange {
                level,
                max: self.num_stops(),
            });
        }
        if belief.dim() != self.num_states {
            return Err(Error::DimensionMismatch(format!(
                "belief has {} entries, policy expects {}",
                belief.dim(),
                self.num_states
            )));
        }
        Ok(self.decide_unchecked(belief.probs(), level))
    }

    fn decide_unchecked(&self, belief: &[f64], level: usize) -> Action {
        if self.decision_value(belief, level) >= 0.0 {
            Action::Mine
        } else {
            Action::Continue
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&PolicyFile::from(self)).expect("policy serializes")
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let f: PolicyFile = toml::from_str(s).map_err(|e| Error::Parse {
            path: "<policy>".into(),
            message: e.to_string(),
        })?;
        if f.theta.len() != f.num_stops {
            return Err(Error::DimensionMismatch(format!(
                "num_stops = {} but {} theta rows",
                f.num_stops,
                f.theta.len()
            )));
        }
        Self::new(f.num_states, f.theta)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }
}

impl Policy for LinearThresholdPolicy {
    fn name(&self) -> String {
        "linear".into()
    }

    fn act(&self, ctx: &DecisionContext<'_>, _rng: &mut StreamRng) -> Action {
        self.decide_unchecked(ctx.belief, ctx.level)
    }

    fn num_levels(&self) -> Option<usize> {
        Some(self.num_stops())
    }

    fn num_states(&self) -> Option<usize> {
        Some(self.num_states)
    }
}

/// Policy file: `num_stops`, `num_states` and one θ row per stop level.
/// Floats are written in shortest round-trip form, so save/load is exact.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct PolicyFile {
    num_stops: usize,
    num_states: usize,
    theta: Vec<Vec<f64>>,
}

impl From<&LinearThresholdPolicy> for PolicyFile {
    fn from(p: &LinearThresholdPolicy) -> Self {
        Self {
            num_stops: p.num_stops(),
            num_states: p.num_states,
            theta: p.theta.clone(),
        }
    }
}

// ---------------------------------------------------------------------------
// Feasibility
// ---------------------------------------------------------------------------

/// One failed feasibility condition. Indices are 1-based.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeasibilityViolation {
    pub condition: u8,
    pub level: usize,
    pub index: usize,
}

impl fmt::Display for FeasibilityViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "condition {} at (l={}, i={})",
            self.condition, self.level, self.index
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeasibilityReport {
    pub violations: Vec<FeasibilityViolation>,
}

impl FeasibilityReport {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn condition_holds(&self, condition: u8) -> bool {
        !self.violations.iter().any(|v| v.condition == condition)
    }
}

/// Checks the three parameter conditions:
/// 1. `θ_l(i) ≥ 0`;
/// 2. `θ_l(2) ≥ 1` and `θ_l(i) ≤ θ_l(2)` for `i > 2`;
/// 3. `θ_l(1) ≤ θ_{l+1}(1)` and `θ_l(i) ≥ θ_{l+1}(i)` for `i > 1`.
pub fn check_feasible(theta: &[Vec<f64>]) -> FeasibilityReport {
    let tol = FEASIBILITY_TOL;
    let mut violations = Vec::new();
    let mut push = |condition, level, index| {
        violations.push(FeasibilityViolation {
            condition,
            level,
            index,
        })
    };
    for (l, row) in theta.iter().enumerate() {
        for (i, &v) in row.iter().enumerate() {
            if !(v >= -tol) {
                push(1, l + 1, i + 1);
            }
        }
        if row.len() >= 2 {
            if !(row[1] >= 1.0 - tol) {
                push(2, l + 1, 2);
            }
            for (i, &v) in row.iter().enumerate().skip(2) {
                if !(v <= row[1] + tol) {
                    push(2, l + 1, i + 1);
                }
            }
        }
    }
    for l in 0..theta.len().saturating_sub(1) {
        let (cur, next) = (&theta[l], &theta[l + 1]);
        if !(cur[0] <= next[0] + tol) {
            push(3, l + 1, 1);
        }
        for i in 1..cur.len().min(next.len()) {
            if !(cur[i] >= next[i] - tol) {
                push(3, l + 1, i + 1);
            }
        }
    }
    FeasibilityReport { violations }
}

// ---------------------------------------------------------------------------
// Spherical parametrization
// ---------------------------------------------------------------------------

/// Unconstrained parameters `φ_j(i)`, `j ∈ 1..=L`, `i ∈ 1..=|X|−1`.
///
/// `φ_1(1)` and `φ_1(2)` act as magnitudes; every other entry is an angle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SphericalParams {
    num_stops: usize,
    num_states: usize,
    /// Row-major `[j][i]`.
    phi: Vec<f64>,
}

impl SphericalParams {
    pub fn new(num_stops: usize, num_states: usize, phi: Vec<f64>) -> Result<Self> {
        if num_states < 2 || num_stops == 0 {
            return Err(Error::InvalidInput(
                "spherical parameters need L ≥ 1 and |X| ≥ 2".into(),
            ));
        }
        if phi.len() != num_stops * (num_states - 1) {
            return Err(Error::DimensionMismatch(format!(
                "phi needs {} entries, got {}",
                num_stops * (num_states - 1),
                phi.len()
            )));
        }
        Ok(Self {
            num_stops,
            num_states,
            phi,
        })
    }

    pub fn zeros(num_stops: usize, num_states: usize) -> Self {
        Self::new(num_stops, num_states, vec![0.0; num_stops * (num_states - 1)])
            .expect("valid shape")
    }

    /// Angles uniform on `[0, π/2]`, magnitudes uniform on `[0, 1]`.
    pub fn random<R: rand::Rng + ?Sized>(num_stops: usize, num_states: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(num_stops, num_states);
        let width = num_states - 1;
        for j in 0..num_stops {
            for i in 0..width {
                let magnitude = j == 0 && i < 2;
                p.phi[j * width + i] = if magnitude {
                    rng.gen::<f64>()
                } else {
                    rng.gen::<f64>() * std::f64::consts::FRAC_PI_2
                };
            }
        }
        p
    }

    pub fn num_stops(&self) -> usize {
        self.num_stops
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.phi
    }

    /// `φ_j(i)` with 1-based `j` and `i`.
    pub fn get(&self, j: usize, i: usize) -> f64 {
        self.phi[(j - 1) * (self.num_states - 1) + (i - 1)]
    }

    pub fn with_values(&self, phi: Vec<f64>) -> Result<Self> {
        Self::new(self.num_stops, self.num_states, phi)
    }
}

/// Maps spherical parameters onto θ:
///
/// ```text
/// θ_l(1)   = φ_1(1)² · Π_{j=l}^{L−1} sin² φ_j(1)
/// θ_l(2)   = 1 + φ_1(2)² · Π_{j=2}^{l} sin² φ_j(2)
/// θ_l(i>2) = θ_l(2) · Π_{j=1}^{L} sin² φ_j(i)
/// ```
///
/// The `i > 2` factor does not depend on `l`; condition 3 still holds for
/// those entries because `θ_l(2)` is non-increasing in `l`.
pub fn from_spherical(phi: &SphericalParams) -> LinearThresholdPolicy {
    let big_l = phi.num_stops;
    let width = phi.num_states - 1;
    let s2 = |j: usize, i: usize| phi.get(j, i).sin().powi(2);
    let mut theta = vec![vec![0.0; width]; big_l];
    for l in 1..=big_l {
        let row = &mut theta[l - 1];
        row[0] = phi.get(1, 1).powi(2) * (l..big_l).map(|j| s2(j, 1)).product::<f64>();
        if width >= 2 {
            row[1] = 1.0 + phi.get(1, 2).powi(2) * (2..=l).map(|j| s2(j, 2)).product::<f64>();
            for i in 3..=width {
                row[i - 1] = row[1] * (1..=big_l).map(|j| s2(j, i)).product::<f64>();
            }
        }
    }
    LinearThresholdPolicy::new(phi.num_states, theta).expect("shape follows phi")
}

/// Sweep resolution used by [`nestedness_of_policy`].
pub const NESTEDNESS_RESOLUTION: usize = 50;

/// True iff mining at level `l` implies mining at level `l − 1` at every
/// point of a dense simplex grid (resolution 50, reduced for high
/// dimensions so the grid stays below one million points).
pub fn nestedness_of_policy(policy: &LinearThresholdPolicy) -> bool {
    if policy.num_stops() <= 1 {
        return true;
    }
    let n = policy.dim();
    let mut d = NESTEDNESS_RESOLUTION;
    while d > 1 && SimplexGrid::expected_len(n, d) > (MAX_GRID_POINTS / 5) as u128 {
        d -= 1;
    }
    let grid = SimplexGrid::new(n, d).expect("bounded grid");
    (0..grid.len()).all(|k| {
        let pi = grid.coords(k);
        (2..=policy.num_stops()).all(|l| {
            policy.decide_unchecked(&pi, l) != Action::Mine
                || policy.decide_unchecked(&pi, l - 1) == Action::Mine
        })
    })
}
