//! Reference models: the low-dimensional synthetic model, the
//! ten-state synthetic model with Poisson-like observations, and the model
//! estimated from Bitcoin hash-rate data. The same models ship as TOML
//! files under `fixtures/`.

use crate::matrix::Matrix;
use crate::model::{Belief, PomdpModel};
use crate::spsa::SpsaConfig;

/// Observation matrix shared by the synthetic and Bitcoin 3-state models,
/// stored as `B` (3×5); the published layout is its transpose. The
/// published rows sum to 1.0137, 1.1193 and 0.867, so each row is
/// rescaled to a distribution.
fn shared_observation() -> Matrix {
    let rows: Vec<Vec<f64>> = SHARED_OBSERVATION_RAW
        .iter()
        .map(|r| {
            let s: f64 = r.iter().sum();
            r.iter().map(|v| v / s).collect()
        })
        .collect();
    Matrix::from_rows(&rows).expect("static shape")
}

/// Observation weights exactly as published, one row per state.
pub const SHARED_OBSERVATION_RAW: [[f64; 5]; 3] = [
    [0.2384, 0.3129, 0.3951, 0.0629, 0.0044],
    [0.1686, 0.2580, 0.3258, 0.3000, 0.0669],
    [0.0221, 0.0955, 0.1207, 0.4546, 0.1741],
];

/// Synthetic 3-state, 5-observation model.
pub fn table1() -> PomdpModel {
    PomdpModel::new(
        Matrix::from_rows(&[
            vec![0.5, 0.5, 0.0],
            vec![0.25, 0.5, 0.25],
            vec![0.0, 0.5, 0.5],
        ])
        .expect("static shape"),
        shared_observation(),
        vec![0.1, 0.01, 0.001],
        0.9,
        3,
        Belief::vertex(3, 3),
    )
    .expect("static model")
}

/// Synthetic 10-state, 12-observation model.
///
/// `B(i, y) ∝ (10 i)^y e^{-10 i} / y!` normalized over `y ∈ 1..=12`,
/// `r(x) = 1/x³`.
pub fn table3() -> PomdpModel {
    let n = 10;
    let ny = 12;
    let mut p = Matrix::zeros(n, n);
    for i in 0..n {
        p[(i, i)] = 0.5;
        if i == 0 {
            p[(0, 1)] = 0.5;
        } else if i == n - 1 {
            p[(n - 1, n - 2)] = 0.5;
        } else {
            p[(i, i - 1)] = 0.25;
            p[(i, i + 1)] = 0.25;
        }
    }
    let mut b = Matrix::zeros(n, ny);
    for i in 0..n {
        let rate = 10.0 * (i + 1) as f64;
        // log-space to stay finite at rate 100
        let logs: Vec<f64> = (1..=ny)
            .map(|y| y as f64 * rate.ln() - rate - ln_factorial(y))
            .collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let s: f64 = w.iter().sum();
        for (y, wy) in w.iter().enumerate() {
            b[(i, y)] = wy / s;
        }
    }
    let r = (1..=n).map(|x| 1.0 / (x as f64).powi(3)).collect();
    PomdpModel::new(p, b, r, 0.9, 3, Belief::vertex(n, n)).expect("static model")
}

/// Model estimated from daily Bitcoin hash rate and difficulty.
pub fn table4() -> PomdpModel {
    PomdpModel::new(
        Matrix::from_rows(&[
            vec![0.8, 0.2, 0.0],
            vec![0.038, 0.8861, 0.0759],
            vec![0.0, 0.1111, 0.8889],
        ])
        .expect("static shape"),
        shared_observation(),
        vec![1.0, 0.125, 0.037],
        0.9,
        3,
        Belief::vertex(3, 3),
    )
    .expect("static model")
}

/// Gain constants used with the synthetic models.
pub fn synthetic_gains() -> SpsaConfig {
    SpsaConfig {
        epsilon: 0.7,
        varsigma: 0.1,
        kappa: 0.6,
        nu: 0.6,
        psi: 0.1,
        ..SpsaConfig::default()
    }
}

/// Gain constants used with the Bitcoin model.
pub fn bitcoin_gains() -> SpsaConfig {
    SpsaConfig {
        epsilon: 0.5,
        ..synthetic_gains()
    }
}

fn ln_factorial(k: usize) -> f64 {
    (2..=k).map(|i| (i as f64).ln()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{is_tp2, TOL};

    #[test]
    fn fixtures_are_valid() {
        for m in [table1(), table3(), table4()] {
            m.ensure_valid().unwrap();
        }
    }

    #[test]
    fn table3_shape_and_tp2() {
        let m = table3();
        assert_eq!(m.num_states(), 10);
        assert_eq!(m.num_observations(), 12);
        assert!(m.observation().is_row_stochastic(TOL));
        assert!(is_tp2(m.observation()).unwrap());
        assert!(is_tp2(m.transition()).unwrap());
        // Mass piles up at the truncation edge for large rates.
        assert!(m.observation()[(9, 11)] > 0.5);
    }

    #[test]
    fn shipped_files_match_constructors() {
        let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
        for (name, model) in [
            ("table1.toml", table1()),
            ("table3.toml", table3()),
            ("table4.toml", table4()),
        ] {
            let loaded = PomdpModel::load(dir.join(name)).unwrap();
            assert_eq!(loaded, model, "{name}");
        }
    }
}
