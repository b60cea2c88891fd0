//! Rectangular linear assignment (shortest augmenting path) and Murty's
//! ranked enumeration of the k best assignments.
//!
//! Costs may be `+inf` to forbid a pairing. Every row must be assigned to a
//! distinct column, so the matrix needs at least as many columns as rows.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::DMatrix;

use crate::error::{Result, SlamError};

const NONE: usize = usize::MAX;

/// A full row-to-column assignment and its total cost.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    /// `columns[row]` is the column assigned to `row`.
    pub columns: Vec<usize>,
    pub cost: f64,
}

fn check_costs(cost: &DMatrix<f64>) -> Result<()> {
    if cost.nrows() > cost.ncols() {
        return Err(SlamError::InvalidArgument(format!(
            "assignment needs rows <= columns, got {}x{}",
            cost.nrows(),
            cost.ncols()
        )));
    }
    if cost.iter().any(|c| c.is_nan() || *c == f64::NEG_INFINITY) {
        return Err(SlamError::InvalidArgument("cost matrix contains NaN or -inf".into()));
    }
    Ok(())
}

/// Optimal assignment of every row to a distinct column.
///
/// Among equally short augmenting paths the lowest column index is taken, so
/// the result is deterministic.
pub fn solve(cost: &DMatrix<f64>) -> Result<Assignment> {
    check_costs(cost)?;
    solve_unchecked(cost).ok_or_else(|| {
        SlamError::Infeasible("no assignment with finite cost exists".into())
    })
}

fn solve_unchecked(cost: &DMatrix<f64>) -> Option<Assignment> {
    let (nr, nc) = cost.shape();
    let mut u = vec![0.0; nr];
    let mut v = vec![0.0; nc];
    let mut col4row = vec![NONE; nr];
    let mut row4col = vec![NONE; nc];
    let mut shortest = vec![f64::INFINITY; nc];
    let mut path = vec![NONE; nc];
    let mut in_rows = vec![false; nr];
    let mut in_cols = vec![false; nc];

    for cur_row in 0..nr {
        shortest.fill(f64::INFINITY);
        path.fill(NONE);
        in_rows.fill(false);
        in_cols.fill(false);

        let mut min_val = 0.0;
        let mut i = cur_row;
        let sink = loop {
            in_rows[i] = true;
            let mut lowest = f64::INFINITY;
            let mut best = NONE;
            for j in 0..nc {
                if in_cols[j] {
                    continue;
                }
                let reduced = min_val + cost[(i, j)] - u[i] - v[j];
                if reduced < shortest[j] {
                    path[j] = i;
                    shortest[j] = reduced;
                }
                if shortest[j] < lowest {
                    lowest = shortest[j];
                    best = j;
                }
            }
            if best == NONE || !lowest.is_finite() {
                return None;
            }
            min_val = lowest;
            in_cols[best] = true;
            if row4col[best] == NONE {
                break best;
            }
            i = row4col[best];
        };

        u[cur_row] += min_val;
        for r in 0..nr {
            if in_rows[r] && r != cur_row {
                u[r] += min_val - shortest[col4row[r]];
            }
        }
        for c in 0..nc {
            if in_cols[c] {
                v[c] -= min_val - shortest[c];
            }
        }

        let mut j = sink;
        loop {
            let r = path[j];
            row4col[j] = r;
            std::mem::swap(&mut col4row[r], &mut j);
            if r == cur_row {
                break;
            }
        }
    }

    let total = (0..nr).map(|r| cost[(r, col4row[r])]).sum();
    Some(Assignment {
        columns: col4row,
        cost: total,
    })
}

struct Node {
    cost: f64,
    seq: u64,
    matrix: DMatrix<f64>,
    solution: Assignment,
    /// Rows before this index are fixed in this subproblem; later partitions start here.
    first_free_row: usize,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // BinaryHeap is a max-heap: reverse so the cheapest (then earliest) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// The `k` lowest-cost assignments in nondecreasing cost order (fewer if
/// fewer feasible assignments exist).
pub fn murty(cost: &DMatrix<f64>, k: usize) -> Result<Vec<Assignment>> {
    if k == 0 {
        return Err(SlamError::InvalidArgument("k must be at least 1".into()));
    }
    let best = solve(cost)?;
    let mut seq = 0u64;
    let mut heap = BinaryHeap::new();
    heap.push(Node {
        cost: best.cost,
        seq,
        matrix: cost.clone(),
        solution: best,
        first_free_row: 0,
    });

    let nr = cost.nrows();
    let mut out = Vec::with_capacity(k);
    while let Some(node) = heap.pop() {
        out.push(node.solution.clone());
        if out.len() == k {
            break;
        }
        // Partition: child i forbids this solution's pick in row i and fixes rows before it.
        let mut fixed = node.matrix.clone();
        for row in node.first_free_row..nr {
            let col = node.solution.columns[row];
            let mut child = fixed.clone();
            child[(row, col)] = f64::INFINITY;
            if let Some(sol) = solve_unchecked(&child) {
                if sol.cost.is_finite() {
                    seq += 1;
                    heap.push(Node {
                        cost: sol.cost,
                        seq,
                        matrix: child,
                        solution: sol,
                        first_free_row: row,
                    });
                }
            }
            force(&mut fixed, row, col);
        }
    }
    Ok(out)
}

fn force(matrix: &mut DMatrix<f64>, row: usize, col: usize) {
    let keep = matrix[(row, col)];
    matrix.row_mut(row).fill(f64::INFINITY);
    matrix.column_mut(col).fill(f64::INFINITY);
    matrix[(row, col)] = keep;
}
