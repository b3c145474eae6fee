//! Independent reference solvers used to validate the Newton path.
//!
//! None of these routines share code with the iterative solver: the single
//! pipe cases are closed-form (ideal) or a bracketed scalar root-find
//! (CNGA), and tree networks are solved by leaf-to-root flow accumulation
//! followed by potential propagation from the slack.

use thiserror::Error;

use crate::eos::PotentialCoeffs;
use crate::scaling::{EdgeRelation, ScaledNetwork};
use crate::solver::{recover_injections, Solution, SolutionUnits};

/// One pipe with prescribed pressure at the tail and flow through it,
/// everything dimensionless.
#[derive(Debug, Clone, Copy)]
pub struct SinglePipeCase {
    /// Pressure at the prescribed end.
    pub p1: f64,
    /// Mass flow, positive from the prescribed end to the free end.
    pub f: f64,
    /// Effective resistance.
    pub beta: f64,
    pub coeffs: PotentialCoeffs,
}

/// Outcome of a single-pipe calculation: the free-end pressure exists or
/// the prescribed pressure cannot sustain the flow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SinglePipeOutcome {
    Pressure(f64),
    Infeasible,
}

impl SinglePipeOutcome {
    pub fn pressure(self) -> Option<f64> {
        match self {
            SinglePipeOutcome::Pressure(p) => Some(p),
            SinglePipeOutcome::Infeasible => None,
        }
    }
}

/// Closed-form free-end pressure for an ideal gas:
/// `p2 = sqrt(p1^2 - (2*beta/b1) * f*|f|)` when the radicand is positive.
pub fn single_pipe_ideal(case: &SinglePipeCase) -> SinglePipeOutcome {
    debug_assert_eq!(case.coeffs.b2_bar, 0.0);
    let radicand = case.p1 * case.p1 - 2.0 * case.beta / case.coeffs.b1_bar * case.f * case.f.abs();
    if radicand > 0.0 {
        SinglePipeOutcome::Pressure(radicand.sqrt())
    } else {
        SinglePipeOutcome::Infeasible
    }
}

/// Free-end pressure for a CNGA gas via potential inversion of
/// `pi(p1) - beta * f*|f|`, which must be strictly positive.
pub fn single_pipe_cnga(case: &SinglePipeCase) -> SinglePipeOutcome {
    let target = case.coeffs.potential(case.p1) - case.beta * case.f * case.f.abs();
    if target > 0.0 {
        match case.coeffs.potential_inverse(target) {
            Ok(p2) => SinglePipeOutcome::Pressure(p2),
            Err(_) => SinglePipeOutcome::Infeasible,
        }
    } else {
        SinglePipeOutcome::Infeasible
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("active edges do not form a spanning tree")]
    NotATree,
    #[error("tree solving needs exactly one slack junction, found {0}")]
    MultipleSlacks(usize),
}

/// Result of propagating flows and potentials through a tree.
#[derive(Debug, Clone)]
pub enum TreeOutcome {
    Solved(Solution),
    /// Propagation reached a junction whose potential is not positive.
    Infeasible { junction: String },
}

impl TreeOutcome {
    pub fn solution(self) -> Option<Solution> {
        match self {
            TreeOutcome::Solved(s) => Some(s),
            TreeOutcome::Infeasible { .. } => None,
        }
    }
}

/// Direct solution on a spanning tree with a single slack junction.
///
/// Flows follow uniquely from the injections by accumulating subtrees;
/// pressures follow from the slack by walking the tree once, inverting the
/// potential across pipes and applying ratios across boost edges.
pub fn tree_solve(snet: &ScaledNetwork) -> Result<TreeOutcome, TreeError> {
    let n = snet.n_nodes();
    let slack_count = snet.slack_count();
    if slack_count != 1 {
        return Err(TreeError::MultipleSlacks(slack_count));
    }
    if snet.n_edges() + 1 != n {
        return Err(TreeError::NotATree);
    }
    let root = (0..n).find(|&i| snet.is_slack(i)).unwrap();

    let mut adjacency = vec![Vec::new(); n];
    for (e, edge) in snet.edges.iter().enumerate() {
        adjacency[edge.from].push((e, edge.to));
        adjacency[edge.to].push((e, edge.from));
    }

    // Depth-first order from the slack; a revisited node means a cycle.
    let mut parent_edge = vec![usize::MAX; n];
    let mut order = Vec::with_capacity(n);
    let mut visited = vec![false; n];
    let mut stack = vec![root];
    visited[root] = true;
    while let Some(u) = stack.pop() {
        order.push(u);
        for &(e, v) in &adjacency[u] {
            if e == parent_edge[u] {
                continue;
            }
            if visited[v] {
                return Err(TreeError::NotATree);
            }
            visited[v] = true;
            parent_edge[v] = e;
            stack.push(v);
        }
    }
    if order.len() != n {
        return Err(TreeError::NotATree); // disconnected
    }

    // Leaf-to-root accumulation: each edge carries the net consumption of
    // the subtree hanging off it.
    let mut subtree_q = snet.q_bar.clone();
    let mut flows = vec![0.0; snet.n_edges()];
    for &v in order.iter().rev() {
        if v == root {
            continue;
        }
        let e = parent_edge[v];
        let edge = &snet.edges[e];
        flows[e] = if edge.from == v {
            subtree_q[v]
        } else {
            -subtree_q[v]
        };
        let other = if edge.from == v { edge.to } else { edge.from };
        subtree_q[other] += subtree_q[v];
    }

    // Root-to-leaf pressure propagation.
    let coeffs = &snet.coeffs;
    let mut pressures = vec![0.0; n];
    pressures[root] = snet.slack_p_bar[root].unwrap();
    for &v in &order {
        if v == root {
            continue;
        }
        let e = parent_edge[v];
        let edge = &snet.edges[e];
        let known = if edge.from == v { edge.to } else { edge.from };
        pressures[v] = match edge.relation {
            EdgeRelation::Pipe { beta } => {
                let drop = beta * flows[e] * flows[e].abs();
                let pot = if edge.to == v {
                    coeffs.potential(pressures[known]) - drop
                } else {
                    coeffs.potential(pressures[known]) + drop
                };
                if pot <= 0.0 {
                    return Ok(TreeOutcome::Infeasible {
                        junction: snet.node_ids[v].clone(),
                    });
                }
                coeffs
                    .potential_inverse(pot)
                    .expect("positive potential inverts")
            }
            EdgeRelation::Boost { alpha, .. } => {
                if edge.to == v {
                    alpha * pressures[known]
                } else {
                    pressures[known] / alpha
                }
            }
        };
    }

    Ok(TreeOutcome::Solved(Solution {
        p: pressures,
        q_full: recover_injections(snet, &flows),
        f: flows,
        units: SolutionUnits::Dimensionless,
    }))
}

/// Relative defect of the global injection balance,
/// `|sum q_full| / max(1, max |q_full|)`.
pub fn balance_check(sol: &Solution) -> f64 {
    let total: f64 = sol.q_full.iter().sum();
    let scale = sol.q_full.iter().fold(1.0f64, |m, q| m.max(q.abs()));
    total.abs() / scale
}
