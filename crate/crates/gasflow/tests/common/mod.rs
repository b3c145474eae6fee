//! Shared fixtures and helpers for the integration suites.

// Each integration test compiles its own copy; not every suite uses
// every fixture.
#![allow(dead_code)]

use gasflow::eos::{EosParams, PotentialCoeffs};
use gasflow::network::{Compressor, Junction, Network, PassThrough, PassThroughKind, Pipe};
use gasflow::scaling::{
    choose_nominals, nondimensionalize, DimensionlessGroups, EdgeRelation, NominalValues,
    ScaledEdge, ScaledNetwork,
};
use gasflow::solver::{residuals, SolverState};
use rand::Rng;

pub fn pipe(id: &str, from: &str, to: &str, length: f64, diameter: f64) -> Pipe {
    Pipe {
        id: id.into(),
        from: from.into(),
        to: to.into(),
        length,
        diameter,
        friction_factor: 0.01,
    }
}

pub fn comp(id: &str, from: &str, to: &str, ratio: f64) -> Compressor {
    Compressor {
        id: id.into(),
        from: from.into(),
        to: to.into(),
        ratio,
    }
}

/// 36-inch fixture pipe: slack at 4.3 MPa feeding one withdrawal.
pub fn fixture_pipe(eos: EosParams, withdrawal: f64, length: f64) -> Network {
    Network::new(
        vec![
            Junction::slack("n1", 4.3e6),
            Junction::consumer("n2", -withdrawal),
        ],
        vec![pipe("p1", "n1", "n2", length, 0.9144)],
        vec![],
        vec![],
        eos,
    )
    .unwrap()
}

/// Slack, pipe, compressor, pipe: the smallest mixed network.
pub fn path_with_compressor(eos: EosParams) -> Network {
    Network::new(
        vec![
            Junction::slack("s1", 5e6),
            Junction::consumer("a", -40.0),
            Junction::consumer("b", 0.0),
            Junction::consumer("c", -80.0),
        ],
        vec![
            pipe("p1", "s1", "a", 30_000.0, 0.75),
            pipe("p2", "b", "c", 20_000.0, 0.6),
        ],
        vec![comp("c1", "a", "b", 1.25)],
        vec![],
        eos,
    )
    .unwrap()
}

/// Thirteen-junction meshed transmission system: a looped core, two
/// compressor-fed spurs, and a regulator in series. Comfortably feasible
/// at the base loading so randomized perturbations stay solvable.
pub fn desk_network(eos: EosParams) -> Network {
    let junctions = vec![
        Junction::slack("s1", 5e6),
        Junction::consumer("j2", -25.0),
        Junction::consumer("j3", -30.0),
        Junction::consumer("j4", -35.0),
        Junction::consumer("j5", -40.0),
        Junction::consumer("j6", -20.0),
        Junction::consumer("j7", -25.0),
        Junction::consumer("j8", 0.0),
        Junction::consumer("j9", -30.0),
        Junction::consumer("j10", -20.0),
        Junction::consumer("j11", 0.0),
        Junction::consumer("j12", -35.0),
        Junction::consumer("j13", 0.0),
    ];
    let pipes = vec![
        pipe("p1", "s1", "j2", 20_000.0, 0.9),
        pipe("p2", "j2", "j3", 15_000.0, 0.75),
        pipe("p3", "j3", "j4", 18_000.0, 0.75),
        pipe("p4", "j4", "j5", 10_000.0, 0.6),
        pipe("p5", "j2", "j6", 25_000.0, 0.75),
        pipe("p6", "j6", "j7", 12_000.0, 0.6),
        pipe("p7", "j7", "j4", 15_000.0, 0.6),
        pipe("p8", "j8", "j9", 8_000.0, 0.6),
        pipe("p9", "j9", "j10", 8_000.0, 0.5),
        pipe("p10", "j13", "j12", 10_000.0, 0.5),
    ];
    let compressors = vec![comp("c1", "j6", "j8", 1.25), comp("c2", "j3", "j11", 1.2)];
    let pass_throughs = vec![PassThrough {
        id: "r1".into(),
        from: "j11".into(),
        to: "j13".into(),
        kind: PassThroughKind::Regulator,
        ratio: 1.0,
        open: true,
    }];
    Network::new(junctions, pipes, compressors, pass_throughs, eos).unwrap()
}

/// Three slack junctions separated by pipes, with one compressor spur.
pub fn three_slack_network(eos: EosParams) -> Network {
    Network::new(
        vec![
            Junction::slack("s1", 5e6),
            Junction::consumer("m1", -30.0),
            Junction::consumer("m2", -60.0),
            Junction::slack("s2", 7.41e6),
            Junction::consumer("m3", -40.0),
            Junction::slack("s3", 2.8e6),
        ],
        vec![
            pipe("p1", "s1", "m1", 25_000.0, 0.9),
            pipe("p2", "m1", "m2", 20_000.0, 0.75),
            pipe("p3", "m2", "s2", 20_000.0, 0.75),
            pipe("p4", "m3", "s3", 15_000.0, 0.6),
        ],
        vec![comp("c1", "m1", "m3", 1.15)],
        vec![],
        eos,
    )
    .unwrap()
}

/// Eight-junction tree mixing pipes and compressors, some edges reversed.
pub fn mixed_tree_network(eos: EosParams) -> Network {
    Network::new(
        vec![
            Junction::slack("s1", 5e6),
            Junction::consumer("t2", -30.0),
            Junction::consumer("t3", 0.0),
            Junction::consumer("t4", -45.0),
            Junction::consumer("t5", -25.0),
            Junction::consumer("t6", 0.0),
            Junction::consumer("t7", -20.0),
            Junction::consumer("t8", -15.0),
        ],
        vec![
            pipe("p1", "s1", "t2", 22_000.0, 0.9),
            pipe("p2", "t3", "t4", 15_000.0, 0.6),
            pipe("p3", "t2", "t5", 18_000.0, 0.6),
            pipe("p4", "t6", "t3", 9_000.0, 0.5),
            pipe("p5", "t7", "t8", 12_000.0, 0.5),
        ],
        vec![comp("c1", "t2", "t3", 1.3), comp("c2", "t6", "t7", 1.15)],
        vec![],
        eos,
    )
    .unwrap()
}

/// A pipe from the slack into a triangle of compressors: the non-pipe
/// cycle makes the Newton matrix structurally singular.
pub fn compressor_cycle_network(eos: EosParams) -> Network {
    Network::new(
        vec![
            Junction::slack("s1", 5e6),
            Junction::consumer("a", -10.0),
            Junction::consumer("b", -10.0),
            Junction::consumer("c", -10.0),
        ],
        vec![pipe("p1", "s1", "a", 10_000.0, 0.75)],
        vec![
            comp("c1", "a", "b", 1.1),
            comp("c2", "b", "c", 1.1),
            comp("c3", "c", "a", 1.1),
        ],
        vec![],
        eos,
    )
    .unwrap()
}

/// A supply node behind a forward-pointing compressor: the converged flow
/// through the compressor is negative, so the instance is infeasible.
pub fn negative_compressor_network(eos: EosParams) -> Network {
    Network::new(
        vec![
            Junction::slack("s1", 5e6),
            Junction::consumer("a", 0.0),
            Junction::consumer("b", 60.0),
        ],
        vec![pipe("p1", "s1", "a", 20_000.0, 0.75)],
        vec![comp("c1", "a", "b", 1.2)],
        vec![],
        eos,
    )
    .unwrap()
}

/// Scale a network with its own derived nominal values.
pub fn scaled(net: &Network) -> ScaledNetwork {
    let nv = choose_nominals(net).unwrap();
    nondimensionalize(net, &nv).unwrap()
}

pub fn unit_groups() -> DimensionlessGroups {
    DimensionlessGroups {
        mach: 1.0,
        euler: 1.0,
    }
}

/// Assemble a dimensionless network directly from edge relations; pipes
/// must precede boost edges.
pub fn scaled_direct(
    slack: Vec<Option<f64>>,
    q: Vec<f64>,
    edges: Vec<ScaledEdge>,
    coeffs: PotentialCoeffs,
) -> ScaledNetwork {
    let n_pipes = edges
        .iter()
        .take_while(|e| matches!(e.relation, EdgeRelation::Pipe { .. }))
        .count();
    assert!(edges
        .iter()
        .skip(n_pipes)
        .all(|e| matches!(e.relation, EdgeRelation::Boost { .. })));
    ScaledNetwork {
        node_ids: (0..slack.len()).map(|i| format!("n{i}")).collect(),
        slack_p_bar: slack,
        q_bar: q,
        edges,
        n_pipes,
        coeffs,
        nominals: NominalValues::unit(),
        groups: unit_groups(),
    }
}

pub fn pipe_edge(id: String, from: usize, to: usize, beta: f64) -> ScaledEdge {
    ScaledEdge {
        id,
        from,
        to,
        relation: EdgeRelation::Pipe { beta },
    }
}

pub fn boost_edge(id: String, from: usize, to: usize, alpha: f64) -> ScaledEdge {
    ScaledEdge {
        id,
        from,
        to,
        relation: EdgeRelation::Boost {
            alpha,
            is_compressor: true,
        },
    }
}

/// Random dimensionless tree with one slack, mixed pipes and compressors,
/// and randomized edge orientations. Withdrawals shrink with size so the
/// instance stays well inside the feasible region.
pub fn random_tree_scaled(rng: &mut impl Rng, max_nodes: usize, coeffs: PotentialCoeffs) -> ScaledNetwork {
    let n = rng.random_range(3..=max_nodes);
    let mut pipes = Vec::new();
    let mut boosts = Vec::new();
    let mut slack = vec![Some(rng.random_range(0.95..1.2))];
    let mut q = vec![0.0];
    for v in 1..n {
        let parent = rng.random_range(0..v);
        let (from, to) = if rng.random_bool(0.5) {
            (parent, v)
        } else {
            (v, parent)
        };
        if rng.random_bool(0.25) {
            boosts.push(boost_edge(
                format!("c{v}"),
                from,
                to,
                rng.random_range(1.05..1.3),
            ));
        } else {
            pipes.push(pipe_edge(
                format!("p{v}"),
                from,
                to,
                rng.random_range(0.02..0.12),
            ));
        }
        slack.push(None);
        q.push(-rng.random_range(0.3..1.2) / n as f64);
    }
    let mut edges = pipes;
    edges.extend(boosts);
    scaled_direct(slack, q, edges, coeffs)
}

/// Random dimensionless cyclic network: a pipe spanning tree with a few
/// compressors substituted on tree edges, plus pipe chords closing cycles.
pub fn random_cyclic_scaled(
    rng: &mut impl Rng,
    max_nodes: usize,
    coeffs: PotentialCoeffs,
) -> ScaledNetwork {
    let n = rng.random_range(6..=max_nodes);
    let mut pipes = Vec::new();
    let mut boosts = Vec::new();
    let mut slack = vec![Some(rng.random_range(0.95..1.2))];
    let mut q = vec![0.0];
    for v in 1..n {
        let parent = rng.random_range(0..v);
        let (from, to) = if rng.random_bool(0.5) {
            (parent, v)
        } else {
            (v, parent)
        };
        if rng.random_bool(0.2) {
            boosts.push(boost_edge(
                format!("c{v}"),
                from,
                to,
                rng.random_range(1.05..1.25),
            ));
        } else {
            pipes.push(pipe_edge(
                format!("p{v}"),
                from,
                to,
                rng.random_range(0.02..0.12),
            ));
        }
        slack.push(None);
        q.push(-rng.random_range(0.3..1.2) / n as f64);
    }
    // Pipe chords keep every cycle legal.
    let chords = rng.random_range(2..=4);
    for k in 0..chords {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b {
            pipes.push(pipe_edge(
                format!("x{k}"),
                a,
                b,
                rng.random_range(0.03..0.15),
            ));
        }
    }
    let mut edges = pipes;
    edges.extend(boosts);
    scaled_direct(slack, q, edges, coeffs)
}

/// Central finite differences of the stacked residual vector, including
/// the slack pinning rows, as a dense matrix.
pub fn fd_jacobian(snet: &ScaledNetwork, state: &SolverState, h: f64) -> Vec<Vec<f64>> {
    let n_nodes = snet.n_nodes();
    let dim = n_nodes + snet.n_edges();
    let stack = |s: &SolverState| -> Vec<f64> {
        let r = residuals(snet, s);
        let mut out = Vec::with_capacity(dim);
        out.extend(&r.pipe);
        out.extend(&r.comp);
        out.extend(&r.node);
        for i in 0..n_nodes {
            if let Some(p) = snet.slack_p_bar[i] {
                out.push(s.p_bar[i] - p);
            }
        }
        out
    };
    let mut jac = vec![vec![0.0; dim]; dim];
    for col in 0..dim {
        let mut plus = state.clone();
        let mut minus = state.clone();
        if col < n_nodes {
            plus.p_bar[col] += h;
            minus.p_bar[col] -= h;
        } else {
            plus.f_bar[col - n_nodes] += h;
            minus.f_bar[col - n_nodes] -= h;
        }
        let (rp, rm) = (stack(&plus), stack(&minus));
        for row in 0..dim {
            jac[row][col] = (rp[row] - rm[row]) / (2.0 * h);
        }
    }
    jac
}

/// Largest mixed absolute/relative discrepancy between two vectors.
pub fn max_mismatch(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
        .fold(0.0, f64::max)
}
