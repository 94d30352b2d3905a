//! Regular lattice on the probability simplex: all beliefs whose
//! coordinates are multiples of `1/d`.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::model::Belief;

/// Refuse to enumerate grids larger than this.
pub const MAX_GRID_POINTS: usize = 5_000_000;

#[derive(Clone, Debug)]
pub struct SimplexGrid {
    dim: usize,
    resolution: usize,
    /// Integer coordinates summing to `resolution`, lexicographic order.
    lattice: Vec<Vec<u32>>,
    index: HashMap<Vec<u32>, usize>,
}

/// `C(n, k)` with saturation.
pub fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n - k.min(n));
    (0..k).fold(1u128, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

impl SimplexGrid {
    pub fn new(dim: usize, resolution: usize) -> Result<Self> {
        if dim == 0 || resolution == 0 {
            return Err(Error::InvalidInput(
                "grid needs at least one state and one subdivision".into(),
            ));
        }
        let count = Self::expected_len(dim, resolution);
        if count > MAX_GRID_POINTS as u128 {
            return Err(Error::GridTooLarge {
                points: count,
                limit: MAX_GRID_POINTS,
            });
        }
        let mut lattice = Vec::with_capacity(count as usize);
        let mut current = vec![0u32; dim];
        compositions(resolution as u32, 0, &mut current, &mut lattice);
        let index = lattice
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), i))
            .collect();
        Ok(Self {
            dim,
            resolution,
            lattice,
            index,
        })
    }

    /// `C(d + |X| − 1, |X| − 1)`
    pub fn expected_len(dim: usize, resolution: usize) -> u128 {
        binomial((resolution + dim - 1) as u128, (dim - 1) as u128)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.lattice.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lattice.is_empty()
    }

    pub fn lattice_point(&self, i: usize) -> &[u32] {
        &self.lattice[i]
    }

    pub fn coords(&self, i: usize) -> Vec<f64> {
        let d = self.resolution as f64;
        self.lattice[i].iter().map(|&k| k as f64 / d).collect()
    }

    pub fn belief(&self, i: usize) -> Belief {
        Belief::from_raw(self.coords(i))
    }

    pub fn index_of(&self, lattice: &[u32]) -> Option<usize> {
        self.index.get(lattice).copied()
    }

    /// Index of the Euclidean-nearest lattice point.
    ///
    /// Rounds every scaled coordinate, then repairs the total by moving
    /// the coordinates with the largest rounding residuals. This is the
    /// standard closest-point rule for the `A_n` lattice restricted to the
    /// simplex; decrements only ever hit coordinates that were rounded up,
    /// so the result stays non-negative.
    pub fn nearest(&self, probs: &[f64]) -> usize {
        debug_assert_eq!(probs.len(), self.dim);
        let d = self.resolution as f64;
        let scaled: Vec<f64> = probs.iter().map(|p| p.max(0.0) * d).collect();
        let mut pt: Vec<i64> = scaled.iter().map(|s| s.round() as i64).collect();
        let deficit = self.resolution as i64 - pt.iter().sum::<i64>();
        if deficit != 0 {
            let mut order: Vec<usize> = (0..self.dim).collect();
            // residual = scaled − rounded
            let resid = |i: usize| scaled[i] - pt[i] as f64;
            if deficit > 0 {
                order.sort_by(|&a, &b| resid(b).total_cmp(&resid(a)).then(a.cmp(&b)));
                for &i in order.iter().take(deficit as usize) {
                    pt[i] += 1;
                }
            } else {
                order.retain(|&i| pt[i] > 0);
                order.sort_by(|&a, &b| resid(a).total_cmp(&resid(b)).then(a.cmp(&b)));
                for &i in order.iter().take((-deficit) as usize) {
                    pt[i] -= 1;
                }
            }
        }
        let key: Vec<u32> = pt.iter().map(|&v| v as u32).collect();
        self.index[&key]
    }

    /// Lattice neighbours: move one `1/d` unit of mass between two
    /// coordinates.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        let p = &self.lattice[i];
        let mut out = Vec::new();
        let mut q = p.clone();
        for from in 0..self.dim {
            if p[from] == 0 {
                continue;
            }
            for to in 0..self.dim {
                if to == from {
                    continue;
                }
                q[from] -= 1;
                q[to] += 1;
                out.push(self.index[&q]);
                q[from] += 1;
                q[to] -= 1;
            }
        }
        out
    }

    /// Grid points on the segments `L(e_axis, π̄)`, one group per segment.
    /// Each group is ordered by increasing weight on `axis` (moving toward
    /// the vertex) and always ends at the vertex itself.
    pub fn lines_through_vertex(&self, axis: usize) -> Vec<Vec<usize>> {
        let mut groups: HashMap<Vec<u32>, Vec<usize>> = HashMap::new();
        let vertex = self
            .lattice
            .iter()
            .position(|p| p[axis] as usize == self.resolution)
            .expect("vertex is on the grid");
        for (i, p) in self.lattice.iter().enumerate() {
            if i == vertex {
                continue;
            }
            let mut rest: Vec<u32> = p
                .iter()
                .enumerate()
                .map(|(k, &v)| if k == axis { 0 } else { v })
                .collect();
            let g = rest.iter().fold(0, |acc, &v| gcd(acc, v));
            rest.iter_mut().for_each(|v| *v /= g);
            groups.entry(rest).or_default().push(i);
        }
        let mut lines: Vec<(Vec<u32>, Vec<usize>)> = groups.into_iter().collect();
        lines.sort();
        lines
            .into_iter()
            .map(|(_, mut pts)| {
                pts.sort_by_key(|&i| self.lattice[i][axis]);
                pts.push(vertex);
                pts
            })
            .collect()
    }
}

fn compositions(remaining: u32, pos: usize, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    let dim = current.len();
    if pos == dim - 1 {
        current[pos] = remaining;
        out.push(current.clone());
        return;
    }
    for k in (0..=remaining).rev() {
        current[pos] = k;
        compositions(remaining - k, pos + 1, current, out);
    }
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}
