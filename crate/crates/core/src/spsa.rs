//! Simultaneous-perturbation stochastic approximation over an
//! unconstrained parameter vector, and its use for the linear threshold
//! policy in spherical coordinates.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::PomdpModel;
use crate::policy::{from_spherical, LinearThresholdPolicy, SphericalParams};
use crate::rng::{derive_seed, tagged, Purpose};
use crate::sim::{estimate_j, EvalConfig, DEFAULT_HORIZON};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpsaConfig {
    pub epsilon: f64,
    pub varsigma: f64,
    pub kappa: f64,
    pub nu: f64,
    pub psi: f64,
    pub num_iterations: usize,
    pub rollouts_per_eval: usize,
    pub horizon: usize,
    pub seed: u64,
    /// Evaluate both sides of a perturbation with the same rollout seeds.
    pub common_random_numbers: bool,
    pub execution: Execution,
}

impl Default for SpsaConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.7,
            varsigma: 0.1,
            kappa: 0.6,
            nu: 0.6,
            psi: 0.1,
            num_iterations: 300,
            rollouts_per_eval: 500,
            horizon: DEFAULT_HORIZON,
            seed: 0,
            common_random_numbers: true,
            execution: Execution::default(),
        }
    }
}

impl SpsaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if !(self.kappa > 0.5 && self.kappa <= 1.0) {
            return bad(format!("kappa = {} must lie in (0.5, 1]", self.kappa));
        }
        if !(self.nu > 0.5 && self.nu <= 1.0) {
            return bad(format!("nu = {} must lie in (0.5, 1]", self.nu));
        }
        for (name, v) in [
            ("epsilon", self.epsilon),
            ("varsigma", self.varsigma),
            ("psi", self.psi),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v} must be positive"));
            }
        }
        if self.rollouts_per_eval == 0 || self.horizon == 0 {
            return bad("rollouts_per_eval and horizon must be positive".into());
        }
        Ok(())
    }

    fn eval_config(&self, seed: u64) -> EvalConfig {
        EvalConfig {
            rollouts: self.rollouts_per_eval,
            horizon: self.horizon,
            seed,
            execution: self.execution,
        }
    }
}

/// `(a_n, c_n) = (ε (n+1+ς)^−κ, ψ (n+1)^−ν)`.
pub fn gain_schedule(config: &SpsaConfig, n: usize) -> (f64, f64) {
    let n = n as f64;
    (
        config.epsilon * (n + 1.0 + config.varsigma).powf(-config.kappa),
        config.psi * (n + 1.0).powf(-config.nu),
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    pub a_n: f64,
    pub c_n: f64,
    /// Mean of the two perturbed evaluations.
    pub j: f64,
    /// Parameters at which the iteration was evaluated.
    pub phi: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingTrace {
    pub records: Vec<TraceRecord>,
}

impl TrainingTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn objective(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.j).collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("iteration\ta_n\tc_n\tj\n");
        for r in &self.records {
            let _ = writeln!(s, "{}\t{:.12e}\t{:.12e}\t{:.12e}", r.iteration, r.a_n, r.c_n, r.j);
        }
        s
    }

    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

/// Trailing moving average with the given window (shorter at the start).
pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..xs.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            xs[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

/// One SPSA gradient estimate. Returns the gradient and the two
/// objective values.
pub fn spsa_step<F>(
    phi: &[f64],
    c: f64,
    config: &SpsaConfig,
    n: usize,
    objective: &mut F,
) -> Result<(Vec<f64>, f64, f64)>
where
    F: FnMut(&[f64], u64) -> Result<f64>,
{
    if !(c > 0.0) {
        return Err(Error::InvalidInput("perturbation size must be positive".into()));
    }
    let mut rng = tagged(config.seed, n as u64, Purpose::Perturbation);
    let omega: Vec<f64> = (0..phi.len())
        .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
        .collect();
    let seed_plus = derive_seed(config.seed, 2 * n as u64);
    let seed_minus = if config.common_random_numbers {
        seed_plus
    } else {
        derive_seed(config.seed, 2 * n as u64 + 1)
    };
    let plus: Vec<f64> = phi.iter().zip(&omega).map(|(p, w)| p + c * w).collect();
    let minus: Vec<f64> = phi.iter().zip(&omega).map(|(p, w)| p - c * w).collect();
    let j_plus = objective(&plus, seed_plus)?;
    let j_minus = objective(&minus, seed_minus)?;
    let scale = (j_plus - j_minus) / (2.0 * c);
    Ok((omega.iter().map(|w| scale * w).collect(), j_plus, j_minus))
}

/// Runs `config.num_iterations` ascent steps `φ ← φ + a_n ĝ_n` on a noisy
/// objective `J(φ, seed)`.
pub fn train_params<F>(
    init: Vec<f64>,
    config: &SpsaConfig,
    mut objective: F,
) -> Result<(Vec<f64>, TrainingTrace)>
where
    F: FnMut(&[f64], u64) -> Result<f64>,
{
    config.validate()?;
    let mut phi = init;
    let mut trace = TrainingTrace::default();
    for n in 0..config.num_iterations {
        let (a, c) = gain_schedule(config, n);
        let (grad, jp, jm) = spsa_step(&phi, c, config, n, &mut objective)?;
        trace.records.push(TraceRecord {
            iteration: n,
            a_n: a,
            c_n: c,
            j: 0.5 * (jp + jm),
            phi: phi.clone(),
        });
        if !(jp.is_finite() && jm.is_finite()) {
            return Err(Error::NonFinite {
                iteration: n,
                what: format!("objective J+ = {jp}, J- = {jm}"),
                trace: Box::new(trace),
            });
        }
        for (p, g) in phi.iter_mut().zip(&grad) {
            *p += a * g;
        }
        if let Some(i) = phi.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite {
                iteration: n,
                what: format!("parameter {i} became {}", phi[i]),
                trace: Box::new(trace),
            });
        }
    }
    Ok((phi, trace))
}

fn linear_objective<'a>(
    model: &'a PomdpModel,
    template: &'a SphericalParams,
    config: &'a SpsaConfig,
) -> impl FnMut(&[f64], u64) -> Result<f64> + 'a {
    move |phi, seed| {
        let params = template.with_values(phi.to_vec())?;
        let policy = from_spherical(&params);
        estimate_j(model, &policy, &config.eval_config(seed)).map(|e| e.mean)
    }
}

/// SPSA gradient of the Monte Carlo objective of the linear policy with
/// respect to its spherical parameters, using the perturbation and rollout
/// seeds of iteration `n`.
pub fn estimate_gradient(
    model: &PomdpModel,
    phi: &SphericalParams,
    c_n: f64,
    config: &SpsaConfig,
    n: usize,
) -> Result<Vec<f64>> {
    let mut objective = linear_objective(model, phi, config);
    spsa_step(phi.as_slice(), c_n, config, n, &mut objective).map(|(g, _, _)| g)
}

/// Default starting point: magnitudes uniform on [0, 1], angles uniform on
/// [0, π/2].
pub fn default_phi_init(model: &PomdpModel, seed: u64) -> SphericalParams {
    let mut rng = tagged(seed, 0, Purpose::Init);
    SphericalParams::random(model.num_stops(), model.num_states(), &mut rng)
}

pub fn train(
    model: &PomdpModel,
    config: &SpsaConfig,
    phi_init: &SphericalParams,
) -> Result<(LinearThresholdPolicy, TrainingTrace, SphericalParams)> {
    model.ensure_valid()?;
    if phi_init.num_stops() != model.num_stops() || phi_init.num_states() != model.num_states() {
        return Err(Error::DimensionMismatch(format!(
            "parameters for L = {}, |X| = {} do not fit L = {}, |X| = {}",
            phi_init.num_stops(),
            phi_init.num_states(),
            model.num_stops(),
            model.num_states()
        )));
    }
    let objective = linear_objective(model, phi_init, config);
    let (phi, trace) = train_params(phi_init.as_slice().to_vec(), config, objective)?;
    let params = phi_init.with_values(phi)?;
    Ok((from_spherical(&params), trace, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::policy::check_feasible;

    #[test]
    fn gains_closed_form() {
        let cfg = fixtures::synthetic_gains();
        let (a, c) = gain_schedule(&cfg, 0);
        assert!((a - 0.7 * 1.1f64.powf(-0.6)).abs() < 1e-15);
        assert!((c - 0.1).abs() < 1e-15);
        let (a, c) = gain_schedule(&cfg, 99);
        assert!((a - 0.7 / 100.1f64.powf(0.6)).abs() < 1e-12);
        assert!((c - 0.1 / 100f64.powf(0.6)).abs() < 1e-12);
        let unit = SpsaConfig {
            epsilon: 1.0,
            kappa: 1.0,
            varsigma: 1e-300,
            ..cfg
        };
        assert!((gain_schedule(&unit, 0).0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let ok = SpsaConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            SpsaConfig { kappa: 0.5, ..ok },
            SpsaConfig { nu: 1.2, ..ok },
            SpsaConfig { psi: 0.0, ..ok },
            SpsaConfig { epsilon: -1.0, ..ok },
            SpsaConfig {
                rollouts_per_eval: 0,
                ..ok
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn zero_iterations_is_identity() {
        let m = fixtures::table1();
        let phi = default_phi_init(&m, 3);
        let cfg = SpsaConfig {
            num_iterations: 0,
            ..fixtures::synthetic_gains()
        };
        let (policy, trace, out) = train(&m, &cfg, &phi).unwrap();
        assert!(trace.is_empty());
        assert_eq!(out, phi);
        assert_eq!(policy, from_spherical(&phi));
    }

    #[test]
    fn flat_objective_has_zero_gradient() {
        let m = fixtures::table1().with_reward(vec![0.0; 3]).unwrap();
        let phi = default_phi_init(&m, 1);
        let cfg = SpsaConfig {
            rollouts_per_eval: 20,
            ..SpsaConfig::default()
        };
        let g = estimate_gradient(&m, &phi, 0.1, &cfg, 0).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn training_is_reproducible_and_feasible() {
        let m = fixtures::table1();
        let phi = default_phi_init(&m, 4);
        let cfg = SpsaConfig {
            num_iterations: 8,
            rollouts_per_eval: 50,
            seed: 17,
            ..fixtures::synthetic_gains()
        };
        let (p1, t1, _) = train(&m, &cfg, &phi).unwrap();
        let (p2, t2, _) = train(
            &m,
            &SpsaConfig {
                execution: Execution::Sequential,
                ..cfg
            },
            &phi,
        )
        .unwrap();
        assert_eq!(p1, p2);
        assert_eq!(t1, t2);
        assert_eq!(t1.len(), 8);
        for r in &t1.records {
            let (a, c) = gain_schedule(&cfg, r.iteration);
            assert_eq!((a, c), (r.a_n, r.c_n));
            let theta = from_spherical(&phi.with_values(r.phi.clone()).unwrap());
            assert!(check_feasible(theta.theta()).is_feasible());
        }
    }

    #[test]
    fn non_finite_objective_aborts_with_trace() {
        let cfg = SpsaConfig {
            num_iterations: 10,
            ..SpsaConfig::default()
        };
        let err = train_params(vec![0.0; 2], &cfg, |phi, _| {
            Ok(if phi[0] > 0.5 { f64::NAN } else { 1.0 + phi[0] })
        })
        .unwrap_err();
        match err {
            Error::NonFinite { trace, iteration, .. } => {
                assert_eq!(trace.len(), iteration + 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ascends_a_concave_quadratic() {
        let cfg = SpsaConfig {
            num_iterations: 400,
            epsilon: 0.5,
            ..SpsaConfig::default()
        };
        let (phi, _) =
            train_params(vec![0.0, 0.0], &cfg, |p, _| Ok(-(p[0] - 1.0).powi(2) - (p[1] + 0.5).powi(2)))
                .unwrap();
        assert!((phi[0] - 1.0).abs() < 0.05 && (phi[1] + 0.5).abs() < 0.05, "{phi:?}");
    }

    #[test]
    fn moving_average_window() {
        assert_eq!(moving_average(&[1.0, 3.0, 5.0, 7.0], 2), vec![1.0, 2.0, 4.0, 6.0]);
    }
}
