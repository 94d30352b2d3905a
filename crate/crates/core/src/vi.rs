//! Grid value iteration for the multiple-stopping problem.
//!
//! Levels are indexed `l = 1..=L` where `l` is the stop about to be
//! decided (stops already used + 1), with the boundary `V(·, L+1) = 0`:
//!
//! ```text
//! Q(π, l, mine)     = rᵀπ + ρ Σ_y V(T(π,y), l+1) σ(π,y)
//! Q(π, l, continue) =       ρ Σ_y V(T(π,y), l)   σ(π,y)
//! ```
//!
//! `V(T(π,y), ·)` is read at the nearest grid point. Since the filter
//! does not depend on `V`, successors and likelihoods are computed once
//! and the iteration is a plain sparse backup.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::grid::SimplexGrid;
use crate::model::{dot, Action, Belief, PomdpModel};
use crate::policy::{DecisionContext, Policy};
use crate::rng::StreamRng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViConfig {
    pub max_iters: usize,
    /// Sup-norm change below which iteration stops.
    pub tol: f64,
    pub execution: Execution,
}

impl Default for ViConfig {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            tol: 1e-8,
            execution: Execution::default(),
        }
    }
}

/// Values and greedy actions on the grid, indexed by (point, level).
#[derive(Clone, Debug)]
pub struct ValueTable {
    grid: SimplexGrid,
    num_stops: usize,
    values: Vec<f64>,
    actions: Vec<Action>,
    pub converged: bool,
    pub iterations: usize,
    /// Sup-norm change of the last sweep.
    pub residual: f64,
    /// Sup-norm change of every sweep, in order.
    pub residual_history: Vec<f64>,
}

struct Successor {
    sigma: f64,
    next: usize,
}

impl ValueTable {
    pub fn grid(&self) -> &SimplexGrid {
        &self.grid
    }

    pub fn num_stops(&self) -> usize {
        self.num_stops
    }

    /// `V(point, l)`, `l` 1-based.
    pub fn value(&self, point: usize, level: usize) -> f64 {
        self.values[point * self.num_stops + level - 1]
    }

    pub fn action(&self, point: usize, level: usize) -> Action {
        self.actions[point * self.num_stops + level - 1]
    }

    /// Value at the grid point nearest to `belief`.
    pub fn value_at(&self, belief: &Belief, level: usize) -> f64 {
        self.value(self.grid.nearest(belief.probs()), level)
    }

    /// Action at the grid point nearest to `belief`.
    pub fn policy_action(&self, belief: &Belief, level: usize) -> Action {
        self.action(self.grid.nearest(belief.probs()), level)
    }

    /// Tabular text export: one row per grid point carrying the
    /// coordinates followed by `value_l, action_l` for every level.
    pub fn to_tsv(&self) -> String {
        let n = self.grid.dim();
        let mut out = String::new();
        let mut header: Vec<String> = (1..=n).map(|i| format!("pi{i}")).collect();
        for l in 1..=self.num_stops {
            header.push(format!("value_l{l}"));
            header.push(format!("action_l{l}"));
        }
        out.push_str(&header.join("\t"));
        out.push('\n');
        for p in 0..self.grid.len() {
            let mut cols: Vec<String> = self.grid.coords(p).iter().map(|c| format!("{c}")).collect();
            for l in 1..=self.num_stops {
                cols.push(format!("{:.12e}", self.value(p, l)));
                cols.push(self.action(p, l).to_string());
            }
            out.push_str(&cols.join("\t"));
            out.push('\n');
        }
        out
    }

    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    #[cfg(test)]
    pub(crate) fn from_actions(grid: SimplexGrid, num_stops: usize, actions: Vec<Action>) -> Self {
        let values = vec![0.0; actions.len()];
        Self {
            grid,
            num_stops,
            values,
            actions,
            converged: true,
            iterations: 0,
            residual: 0.0,
            residual_history: Vec::new(),
        }
    }
}

impl Policy for ValueTable {
    fn name(&self) -> String {
        "value-iteration".into()
    }

    fn act(&self, ctx: &DecisionContext<'_>, _rng: &mut StreamRng) -> Action {
        self.action(self.grid.nearest(ctx.belief), ctx.level)
    }

    fn num_levels(&self) -> Option<usize> {
        Some(self.num_stops)
    }

    fn num_states(&self) -> Option<usize> {
        Some(self.grid.dim())
    }
}

pub fn solve_value_iteration(
    model: &PomdpModel,
    grid: &SimplexGrid,
    config: &ViConfig,
) -> Result<ValueTable> {
    model.ensure_valid()?;
    if grid.dim() != model.num_states() {
        return Err(Error::DimensionMismatch(format!(
            "grid dimension {} vs {} states",
            grid.dim(),
            model.num_states()
        )));
    }
    if !(config.tol > 0.0) {
        return Err(Error::InvalidInput("tolerance must be positive".into()));
    }
    let big_l = model.num_stops();
    let rho = model.discount();
    let ny = model.num_observations();
    let exec = config.execution;

    let successors: Vec<Vec<Successor>> = exec.map_indexed(grid.len(), |p| {
        let prior = grid.coords(p);
        let mut post = vec![0.0; grid.dim()];
        (0..ny)
            .filter_map(|y| {
                let sigma = model.filter_into(&prior, y, &mut post);
                (sigma > 0.0).then(|| Successor {
                    sigma,
                    next: grid.nearest(&post),
                })
            })
            .collect()
    });
    let immediate: Vec<f64> = (0..grid.len())
        .map(|p| dot(model.reward_mine(), &grid.coords(p)))
        .collect();

    let mut values = vec![0.0; grid.len() * big_l];
    let mut actions = vec![Action::Continue; grid.len() * big_l];
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iters {
        let prev = &values;
        let rows: Vec<Vec<(f64, Action)>> = exec.map_indexed(grid.len(), |p| {
            let at = |s: &Successor, l: usize| {
                if l > big_l {
                    0.0
                } else {
                    prev[s.next * big_l + l - 1]
                }
            };
            (1..=big_l)
                .map(|l| {
                    let mut cont = 0.0;
                    let mut mine = 0.0;
                    for s in &successors[p] {
                        cont += s.sigma * at(s, l);
                        mine += s.sigma * at(s, l + 1);
                    }
                    let q_mine = immediate[p] + rho * mine;
                    let q_cont = rho * cont;
                    // exact ties keep the stop budget
                    if q_mine > q_cont {
                        (q_mine, Action::Mine)
                    } else {
                        (q_cont, Action::Continue)
                    }
                })
                .collect()
        });
        let mut next = Vec::with_capacity(values.len());
        let mut residual: f64 = 0.0;
        for (p, row) in rows.into_iter().enumerate() {
            for (l, (v, a)) in row.into_iter().enumerate() {
                residual = residual.max((v - values[p * big_l + l]).abs());
                actions[p * big_l + l] = a;
                next.push(v);
            }
        }
        values = next;
        iterations += 1;
        history.push(residual);
        if residual < config.tol {
            converged = true;
            break;
        }
    }

    Ok(ValueTable {
        grid: grid.clone(),
        num_stops: big_l,
        values,
        actions,
        converged,
        iterations,
        residual: history.last().copied().unwrap_or(f64::INFINITY),
        residual_history: history,
    })
}

/// Grid points in the mine set `M^l` and the don't-mine set `D^l`.
pub fn extract_sets(table: &ValueTable, level: usize) -> (Vec<usize>, Vec<usize>) {
    (0..table.grid.len()).partition(|&p| table.action(p, level) == Action::Mine)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelStructure {
    pub level: usize,
    /// Actions are MLR-decreasing along every grid line through `e_1`
    /// and through `e_|X|`.
    pub monotone: bool,
    /// `M^l` and `D^l` each form a single connected component.
    pub connected: bool,
    /// `M^l ⊆ M^{l−1}` (vacuous for `l = 1`).
    pub nested: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StructureReport {
    pub levels: Vec<LevelStructure>,
}

impl StructureReport {
    pub fn all_hold(&self) -> bool {
        self.levels
            .iter()
            .all(|s| s.monotone && s.connected && s.nested)
    }
}

impl std::fmt::Display for StructureReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "level\tmonotone\tconnected\tnested")?;
        for s in &self.levels {
            writeln!(f, "{}\t{}\t{}\t{}", s.level, s.monotone, s.connected, s.nested)?;
        }
        Ok(())
    }
}

pub fn verify_structure(table: &ValueTable) -> StructureReport {
    let grid = &table.grid;
    let n = grid.dim();
    // Lines through e_1 run toward an MLR-smaller vertex, so actions must
    // not decrease along them; lines through e_|X| run toward an MLR-larger
    // vertex, so actions must not increase.
    let toward_first = grid.lines_through_vertex(0);
    let toward_last = grid.lines_through_vertex(n - 1);
    let levels = (1..=table.num_stops)
        .map(|l| {
            let code = |p: usize| table.action(p, l).code();
            let monotone = toward_first
                .iter()
                .all(|line| line.windows(2).all(|w| code(w[0]) <= code(w[1])))
                && toward_last
                    .iter()
                    .all(|line| line.windows(2).all(|w| code(w[0]) >= code(w[1])));
            let (mine, dont) = extract_sets(table, l);
            let connected = is_connected(grid, &mine) && is_connected(grid, &dont);
            let nested = l == 1
                || mine
                    .iter()
                    .all(|&p| table.action(p, l - 1) == Action::Mine);
            LevelStructure {
                level: l,
                monotone,
                connected,
                nested,
            }
        })
        .collect();
    StructureReport { levels }
}

/// Connectivity under lattice adjacency. The empty set counts as connected.
fn is_connected(grid: &SimplexGrid, members: &[usize]) -> bool {
    if members.is_empty() {
        return true;
    }
    let mut inside = vec![false; grid.len()];
    for &p in members {
        inside[p] = true;
    }
    let mut seen = vec![false; grid.len()];
    let mut queue = VecDeque::from([members[0]]);
    seen[members[0]] = true;
    let mut count = 1;
    while let Some(p) = queue.pop_front() {
        for q in grid.neighbors(p) {
            if inside[q] && !seen[q] {
                seen[q] = true;
                count += 1;
                queue.push_back(q);
            }
        }
    }
    count == members.len()
}

/// Human-readable summary of the mine sets, one line per level.
pub fn describe_sets(table: &ValueTable) -> String {
    let mut s = String::new();
    for l in 1..=table.num_stops {
        let (mine, dont) = extract_sets(table, l);
        let _ = writeln!(s, "level {l}: |M| = {}, |D| = {}", mine.len(), dont.len());
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::matrix::Matrix;

    fn solve(model: &PomdpModel, d: usize) -> ValueTable {
        let grid = SimplexGrid::new(model.num_states(), d).unwrap();
        solve_value_iteration(model, &grid, &ViConfig::default()).unwrap()
    }

    #[test]
    fn constant_reward_single_stop_mines_everywhere() {
        let m = fixtures::table1()
            .with_reward(vec![0.05; 3])
            .unwrap()
            .with_num_stops(1);
        let t = solve(&m, 10);
        assert!(t.converged);
        let (mine, dont) = extract_sets(&t, 1);
        assert!(dont.is_empty());
        assert_eq!(mine.len(), t.grid().len());
    }

    #[test]
    fn zero_reward_prefers_continue() {
        let m = fixtures::table1().with_reward(vec![0.0; 3]).unwrap();
        let t = solve(&m, 8);
        for l in 1..=3 {
            let (mine, dont) = extract_sets(&t, l);
            assert!(mine.is_empty());
            assert_eq!(dont.len(), t.grid().len());
        }
    }

    #[test]
    fn residuals_contract_and_levels_are_ordered() {
        let m = fixtures::table1();
        let t = solve(&m, 12);
        assert!(t.converged);
        for w in t.residual_history.windows(2).skip(1) {
            assert!(w[1] <= w[0] + 1e-9);
        }
        let r = m.reward_mine();
        for p in 0..t.grid().len() {
            let pi = t.grid().coords(p);
            for l in 1..=3 {
                assert!(t.value(p, l) >= dot(r, &pi) - 1e-12);
                assert!(t.value(p, l) >= 0.0 && t.value(p, l).is_finite());
                if l < 3 {
                    assert!(t.value(p, l) >= t.value(p, l + 1) - 1e-12);
                }
            }
        }
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let m = fixtures::table4();
        let grid = SimplexGrid::new(3, 15).unwrap();
        let seq = solve_value_iteration(
            &m,
            &grid,
            &ViConfig {
                execution: Execution::Sequential,
                ..ViConfig::default()
            },
        )
        .unwrap();
        let par = solve_value_iteration(
            &m,
            &grid,
            &ViConfig {
                execution: Execution::Parallel,
                ..ViConfig::default()
            },
        )
        .unwrap();
        assert_eq!(seq.values, par.values);
        assert_eq!(seq.actions, par.actions);
    }

    #[test]
    fn non_convergence_is_flagged() {
        let m = fixtures::table1();
        let grid = SimplexGrid::new(3, 6).unwrap();
        let t = solve_value_iteration(
            &m,
            &grid,
            &ViConfig {
                max_iters: 3,
                ..ViConfig::default()
            },
        )
        .unwrap();
        assert!(!t.converged);
        assert_eq!(t.iterations, 3);
        assert!(t.residual > 1e-8);
    }

    #[test]
    fn hole_breaks_connectivity() {
        let grid = SimplexGrid::new(3, 6).unwrap();
        let hole = grid.index_of(&[2, 2, 2]).unwrap();
        let actions: Vec<Action> = (0..grid.len())
            .map(|p| {
                if grid.lattice_point(p)[0] >= 1 && p != hole {
                    Action::Mine
                } else {
                    Action::Continue
                }
            })
            .collect();
        let t = ValueTable::from_actions(grid, 1, actions);
        let rep = verify_structure(&t);
        assert!(!rep.levels[0].connected);
    }

    #[test]
    fn policy_action_on_and_between_points() {
        let m = fixtures::table1();
        let t = solve(&m, 10);
        let g = t.grid();
        for p in 0..g.len() {
            assert_eq!(t.policy_action(&g.belief(p), 2), t.action(p, 2));
        }
        // two adjacent points with equal actions → midpoint shares it
        for p in 0..g.len() {
            for q in g.neighbors(p) {
                if t.action(p, 1) == t.action(q, 1) {
                    let mid: Vec<f64> = g
                        .coords(p)
                        .iter()
                        .zip(g.coords(q))
                        .map(|(a, b)| 0.5 * (a + b))
                        .collect();
                    assert_eq!(t.policy_action(&Belief::new(mid).unwrap(), 1), t.action(p, 1));
                }
            }
        }
    }

    #[test]
    fn export_has_one_row_per_point() {
        let m = fixtures::table1();
        let t = solve(&m, 5);
        let tsv = t.to_tsv();
        assert_eq!(tsv.lines().count(), t.grid().len() + 1);
        assert_eq!(tsv.lines().next().unwrap().split('\t').count(), 3 + 2 * 3);
    }

    #[test]
    fn dimension_mismatch() {
        let m = fixtures::table1();
        let grid = SimplexGrid::new(2, 5).unwrap();
        assert!(solve_value_iteration(&m, &grid, &ViConfig::default()).is_err());
        let bad = PomdpModel::new(
            Matrix::identity(3),
            m.observation().clone(),
            vec![0.0, 0.1, 0.2],
            0.9,
            2,
            Belief::uniform(3),
        )
        .unwrap();
        let grid = SimplexGrid::new(3, 5).unwrap();
        assert!(solve_value_iteration(&bad, &grid, &ViConfig::default()).is_err());
    }
}
