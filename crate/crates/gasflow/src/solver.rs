//! Newton-Raphson solution of the scaled network flow system.
//!
//! Unknowns are the junction pressures and edge flows; equations are the
//! pipe potential-drop relations, the boost-ratio relations, mass balance
//! at non-slack junctions, and trivial pinning rows at slack junctions.
//! The iteration takes full, undamped steps and the linear solves use a
//! sparse LU factorization with partial pivoting.
//!
//! A converged iterate is classified by where its pressures landed:
//! inside the monotone generalized domain the solution is unique, so it
//! either is the physical solution or certifies that none exists (negative
//! potential at a junction, negative flow through a compressor). Outside
//! the domain, or without convergence, nothing can be concluded.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::Serialize;
use thiserror::Error;

use crate::linalg::{LinalgError, SparseLu, Triplets};
use crate::scaling::{EdgeRelation, ScaledNetwork};

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    /// The Newton matrix has no usable pivot; `rank` columns were
    /// eliminated out of `dimension`. Typical for pipe-free cycles.
    #[error("singular Jacobian: rank {rank} of {dimension}")]
    SingularJacobian { rank: usize, dimension: usize },
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Convergence bound on the max-norm of the scaled residual.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Seed for the random initial iterate.
    pub seed: u64,
    pub initial: InitialPolicy,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 2000,
            seed: 0,
            initial: InitialPolicy::RandomPositive,
        }
    }
}

impl SolverConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub enum InitialPolicy {
    /// Pressures and flows drawn uniformly from [0.5, 1.5]; every flow is
    /// positive, every pressure has positive density, so the Jacobian is
    /// invertible at the start.
    RandomPositive,
    /// Resume from a previous state (slack pressures are re-pinned).
    WarmStart(SolverState),
}

/// Iterate of the Newton scheme.
#[derive(Debug, Clone)]
pub struct SolverState {
    /// Pressure per junction; slack entries stay bit-identical to the data.
    pub p_bar: Vec<f64>,
    /// Flow per active edge, pipes first.
    pub f_bar: Vec<f64>,
    pub iteration: usize,
}

/// Residual blocks in equation order.
#[derive(Debug, Clone)]
pub struct Residuals {
    pub pipe: Vec<f64>,
    pub comp: Vec<f64>,
    pub node: Vec<f64>,
    pub norm_inf: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Classification {
    /// Converged with every pressure in the generalized monotone domain;
    /// the solution is unique there.
    ConvergedInDomain,
    /// Converged, but some pressure left the generalized domain.
    ConvergedOutOfDomain,
    /// No convergence: iteration cap, divergence, or singular Jacobian.
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CertificateReason {
    NegativeCompressorFlow,
    NegativePotential,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateEntry {
    pub element_id: String,
    pub reason: CertificateReason,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Feasibility {
    /// All pressures physical and all compressor flows non-negative.
    Feasible,
    /// Unique in-domain solution violates a physical sign constraint; the
    /// certificate lists every offending element.
    Infeasible(Vec<CertificateEntry>),
    /// Out-of-domain or failed runs admit no verdict.
    Indeterminate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SolutionUnits {
    Dimensionless,
    Physical,
}

#[derive(Debug, Clone, Serialize)]
pub struct Solution {
    /// Pressure per junction.
    pub p: Vec<f64>,
    /// Flow per active edge.
    pub f: Vec<f64>,
    /// Injection per junction, with slack injections recovered from the
    /// full incidence relation.
    pub q_full: Vec<f64>,
    pub units: SolutionUnits,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum FailureReason {
    MaxIterations,
    /// Residuals left the representable range.
    Diverged,
    SingularJacobian { rank: usize, dimension: usize },
}

#[derive(Debug, Clone, Serialize)]
pub struct Outcome {
    pub classification: Classification,
    pub solution: Option<Solution>,
    pub feasibility: Feasibility,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    pub failure: Option<FailureReason>,
}

impl Outcome {
    pub fn certificate(&self) -> &[CertificateEntry] {
        match &self.feasibility {
            Feasibility::Infeasible(entries) => entries,
            _ => &[],
        }
    }

    pub fn converged(&self) -> bool {
        self.classification != Classification::Failed
    }
}

/// Random in-domain starting point: nonzero flows and positive densities
/// guarantee an invertible Jacobian at iteration zero.
pub fn initial_guess(snet: &ScaledNetwork, cfg: &SolverConfig) -> SolverState {
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let p_bar = (0..snet.n_nodes())
        .map(|i| match snet.slack_p_bar[i] {
            Some(p) => p,
            None => rng.random_range(0.5..=1.5),
        })
        .collect();
    let f_bar = (0..snet.n_edges())
        .map(|_| rng.random_range(0.5..=1.5))
        .collect();
    SolverState {
        p_bar,
        f_bar,
        iteration: 0,
    }
}

/// Evaluate the residual blocks at a state.
pub fn residuals(snet: &ScaledNetwork, state: &SolverState) -> Residuals {
    assert_eq!(state.p_bar.len(), snet.n_nodes());
    assert_eq!(state.f_bar.len(), snet.n_edges());
    let coeffs = &snet.coeffs;

    let mut pipe = Vec::with_capacity(snet.n_pipes);
    let mut comp = Vec::with_capacity(snet.n_edges() - snet.n_pipes);
    for (e, edge) in snet.edges.iter().enumerate() {
        let (pi, pj) = (state.p_bar[edge.from], state.p_bar[edge.to]);
        match edge.relation {
            EdgeRelation::Pipe { beta } => {
                let f = state.f_bar[e];
                pipe.push(coeffs.potential(pi) - coeffs.potential(pj) - beta * f * f.abs());
            }
            EdgeRelation::Boost { alpha, .. } => {
                comp.push(pj - alpha * pi);
            }
        }
    }

    // Mass balance at non-slack junctions: the net edge inflow covers the
    // local consumption, so (A f)_i + q_i = 0 with injections positive.
    let mut inflow = vec![0.0; snet.n_nodes()];
    for (e, edge) in snet.edges.iter().enumerate() {
        inflow[edge.from] -= state.f_bar[e];
        inflow[edge.to] += state.f_bar[e];
    }
    let node: Vec<f64> = (0..snet.n_nodes())
        .filter(|&i| !snet.is_slack(i))
        .map(|i| inflow[i] + snet.q_bar[i])
        .collect();

    let norm_inf = pipe
        .iter()
        .chain(&comp)
        .chain(&node)
        .fold(0.0f64, |m, r| m.max(r.abs()));
    Residuals {
        pipe,
        comp,
        node,
        norm_inf,
    }
}

/// Row indices of the square Newton system:
/// pipes, boosts, non-slack balances, slack pinnings.
fn node_rows(snet: &ScaledNetwork) -> Vec<usize> {
    let n_edges = snet.n_edges();
    let mut next_balance = n_edges;
    let mut next_slack = n_edges + snet.n_nodes() - snet.slack_count();
    (0..snet.n_nodes())
        .map(|i| {
            if snet.is_slack(i) {
                let r = next_slack;
                next_slack += 1;
                r
            } else {
                let r = next_balance;
                next_balance += 1;
                r
            }
        })
        .collect()
}

/// Assemble the Newton matrix in triplet form. Variables are ordered
/// pressures then flows; the matrix is square of size nodes + edges.
pub fn jacobian(snet: &ScaledNetwork, state: &SolverState) -> Triplets {
    let n_nodes = snet.n_nodes();
    let n_edges = snet.n_edges();
    let coeffs = &snet.coeffs;
    let col_f = |e: usize| n_nodes + e;
    let rows_of_nodes = node_rows(snet);

    let mut t = Triplets::new(n_nodes + n_edges);
    let mut pipe_row = 0;
    let mut boost_row = snet.n_pipes;
    for (e, edge) in snet.edges.iter().enumerate() {
        match edge.relation {
            EdgeRelation::Pipe { beta } => {
                let row = pipe_row;
                pipe_row += 1;
                t.push(row, edge.from, coeffs.potential_derivative(state.p_bar[edge.from]));
                t.push(row, edge.to, -coeffs.potential_derivative(state.p_bar[edge.to]));
                t.push(row, col_f(e), -2.0 * beta * state.f_bar[e].abs());
            }
            EdgeRelation::Boost { alpha, .. } => {
                let row = boost_row;
                boost_row += 1;
                t.push(row, edge.to, 1.0);
                t.push(row, edge.from, -alpha);
            }
        }
        // Balance rows collect the incidence entries of non-slack endpoints.
        if !snet.is_slack(edge.from) {
            t.push(rows_of_nodes[edge.from], col_f(e), -1.0);
        }
        if !snet.is_slack(edge.to) {
            t.push(rows_of_nodes[edge.to], col_f(e), 1.0);
        }
    }
    for i in 0..n_nodes {
        if snet.is_slack(i) {
            t.push(rows_of_nodes[i], i, 1.0);
        }
    }
    t
}

fn step_inner(
    snet: &ScaledNetwork,
    state: &SolverState,
    res: &Residuals,
) -> Result<(SolverState, Residuals), SolverError> {
    let n_nodes = snet.n_nodes();
    let n_edges = snet.n_edges();
    let dim = n_nodes + n_edges;

    let mut rhs = vec![0.0; dim];
    for (k, r) in res.pipe.iter().enumerate() {
        rhs[k] = -r;
    }
    for (k, r) in res.comp.iter().enumerate() {
        rhs[snet.n_pipes + k] = -r;
    }
    for (k, r) in res.node.iter().enumerate() {
        rhs[n_edges + k] = -r;
    }
    // Slack rows demand a zero pressure increment; rhs already zero there.

    let lu = SparseLu::factorize(&jacobian(snet, state)).map_err(|e| match e {
        LinalgError::Singular { rank, n } => SolverError::SingularJacobian {
            rank,
            dimension: n,
        },
        LinalgError::IndexOutOfBounds { .. } => unreachable!("assembly stays in bounds"),
    })?;
    let delta = lu.solve(&rhs);

    let mut next = state.clone();
    for i in 0..n_nodes {
        // Slack pressures are pinned, not updated, so they remain
        // bit-identical to the prescribed data at every iterate.
        if !snet.is_slack(i) {
            next.p_bar[i] += delta[i];
        }
    }
    for e in 0..n_edges {
        next.f_bar[e] += delta[n_nodes + e];
    }
    next.iteration += 1;
    let next_res = residuals(snet, &next);
    Ok((next, next_res))
}

/// One full Newton update. Returns the new state and the residual norm at
/// that state.
pub fn newton_step(
    snet: &ScaledNetwork,
    state: &SolverState,
) -> Result<(SolverState, f64), SolverError> {
    let res = residuals(snet, state);
    let (next, next_res) = step_inner(snet, state, &res)?;
    Ok((next, next_res.norm_inf))
}

/// Injections at every junction implied by the edge flows, `-A_full * f`.
/// At non-slack junctions this reproduces the data up to the residual; at
/// slack junctions it recovers the unknown injections.
pub fn recover_injections(snet: &ScaledNetwork, flows: &[f64]) -> Vec<f64> {
    let mut q = vec![0.0; snet.n_nodes()];
    for (e, edge) in snet.edges.iter().enumerate() {
        q[edge.from] += flows[e];
        q[edge.to] -= flows[e];
    }
    q
}

fn pin_slacks(snet: &ScaledNetwork, state: &mut SolverState) {
    for (i, slack) in snet.slack_p_bar.iter().enumerate() {
        if let Some(p) = slack {
            state.p_bar[i] = *p;
        }
    }
}

fn failed_outcome(
    reason: FailureReason,
    iterations: usize,
    residual_history: Vec<f64>,
) -> Outcome {
    Outcome {
        classification: Classification::Failed,
        solution: None,
        feasibility: Feasibility::Indeterminate,
        iterations,
        residual_history,
        failure: Some(reason),
    }
}

/// Run the Newton iteration to a classified outcome.
pub fn solve(snet: &ScaledNetwork, cfg: &SolverConfig) -> Outcome {
    let mut state = match &cfg.initial {
        InitialPolicy::RandomPositive => initial_guess(snet, cfg),
        InitialPolicy::WarmStart(s) => {
            let mut s = s.clone();
            s.iteration = 0;
            pin_slacks(snet, &mut s);
            s
        }
    };

    let mut res = residuals(snet, &state);
    let mut history = vec![res.norm_inf];
    loop {
        if res.norm_inf <= cfg.tolerance {
            return classify(snet, cfg, state, history);
        }
        if !res.norm_inf.is_finite() {
            return failed_outcome(FailureReason::Diverged, state.iteration, history);
        }
        if state.iteration >= cfg.max_iterations {
            return failed_outcome(FailureReason::MaxIterations, state.iteration, history);
        }
        match step_inner(snet, &state, &res) {
            Ok((next, next_res)) => {
                state = next;
                res = next_res;
                history.push(res.norm_inf);
            }
            Err(SolverError::SingularJacobian { rank, dimension }) => {
                return failed_outcome(
                    FailureReason::SingularJacobian { rank, dimension },
                    state.iteration,
                    history,
                );
            }
        }
    }
}

fn classify(
    snet: &ScaledNetwork,
    cfg: &SolverConfig,
    state: SolverState,
    history: Vec<f64>,
) -> Outcome {
    let coeffs = &snet.coeffs;
    let in_domain = state
        .p_bar
        .iter()
        .all(|&p| coeffs.in_generalized_domain(p));

    // Boost compatibility: where both end potentials are positive, their
    // unique positive pressures must still satisfy the ratio relation.
    let mut compatible = true;
    for edge in &snet.edges {
        if let EdgeRelation::Boost { alpha, .. } = edge.relation {
            let pot_i = coeffs.potential(state.p_bar[edge.from]);
            let pot_j = coeffs.potential(state.p_bar[edge.to]);
            if pot_i > 0.0 && pot_j > 0.0 {
                let (pi, pj) = match (
                    coeffs.potential_inverse(pot_i),
                    coeffs.potential_inverse(pot_j),
                ) {
                    (Ok(pi), Ok(pj)) => (pi, pj),
                    _ => {
                        compatible = false;
                        break;
                    }
                };
                if (pj - alpha * pi).abs() > 10.0 * cfg.tolerance * pj.abs().max(1.0) {
                    compatible = false;
                    break;
                }
            }
        }
    }

    let solution = Solution {
        p: state.p_bar.clone(),
        f: state.f_bar.clone(),
        q_full: recover_injections(snet, &state.f_bar),
        units: SolutionUnits::Dimensionless,
    };

    if !(in_domain && compatible) {
        return Outcome {
            classification: Classification::ConvergedOutOfDomain,
            solution: Some(solution),
            feasibility: Feasibility::Indeterminate,
            iterations: state.iteration,
            residual_history: history,
            failure: None,
        };
    }

    let mut certificate = Vec::new();
    for (i, &p) in state.p_bar.iter().enumerate() {
        if p <= 0.0 {
            certificate.push(CertificateEntry {
                element_id: snet.node_ids[i].clone(),
                reason: CertificateReason::NegativePotential,
            });
        }
    }
    for (e, edge) in snet.edges.iter().enumerate() {
        if let EdgeRelation::Boost {
            is_compressor: true,
            ..
        } = edge.relation
        {
            if state.f_bar[e] < -cfg.tolerance {
                certificate.push(CertificateEntry {
                    element_id: edge.id.clone(),
                    reason: CertificateReason::NegativeCompressorFlow,
                });
            }
        }
    }

    let feasibility = if certificate.is_empty() {
        Feasibility::Feasible
    } else {
        Feasibility::Infeasible(certificate)
    };
    Outcome {
        classification: Classification::ConvergedInDomain,
        solution: Some(solution),
        feasibility,
        iterations: state.iteration,
        residual_history: history,
        failure: None,
    }
}

/// Re-solve from a warm start in which every negative converged pressure is
/// flipped to its magnitude, keeping all other components. Adopted only if
/// the rerun converges with all-positive pressures; pipe and balance
/// residuals not touching a flipped junction start at zero.
pub fn pressure_correction_rerun(
    snet: &ScaledNetwork,
    cfg: &SolverConfig,
    outcome: Outcome,
) -> Outcome {
    let Some(sol) = &outcome.solution else {
        return outcome;
    };
    if !outcome.converged() || sol.p.iter().all(|&p| p >= 0.0) {
        return outcome;
    }

    let warm = SolverState {
        p_bar: sol.p.iter().map(|&p| p.abs()).collect(),
        f_bar: sol.f.clone(),
        iteration: 0,
    };
    let rerun_cfg = SolverConfig {
        initial: InitialPolicy::WarmStart(warm),
        ..cfg.clone()
    };
    let rerun = solve(snet, &rerun_cfg);
    let all_positive = rerun
        .solution
        .as_ref()
        .is_some_and(|s| s.p.iter().all(|&p| p > 0.0));
    if rerun.converged() && all_positive {
        rerun
    } else {
        outcome
    }
}
