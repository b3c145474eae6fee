//! Nominal-value selection and non-dimensionalization.
//!
//! Solving the flow equations in SI units mixes magnitudes of 1e6 (pressures)
//! with 1e2 (flows), which wrecks the conditioning of the Newton system.
//! Scaling every variable by a nominal value drawn from the instance data
//! brings all unknowns to order one. The nominal density, mass flux, and
//! mass flow follow from the chosen length, pressure, and velocity:
//! `rho0 = p0/a^2`, `phi0 = rho0*v0`, `f0 = phi0*A0` with `A0 = 1`, which
//! makes the Euler group `p0/(rho0*a^2)` exactly one.

use serde::Serialize;
use thiserror::Error;

use crate::eos::{self, EosError, PotentialCoeffs};
use crate::network::{EdgeElement, JunctionKind, Network};
use crate::solver::Solution;

#[derive(Debug, Error, PartialEq)]
pub enum ScalingError {
    #[error("cannot choose a nominal length: the network has no pipes")]
    NoPipes,
}

/// Scale factors for each physical quantity. `a0` is fixed at 1 so mass
/// flux and mass flow share a nominal value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NominalValues {
    pub l0: f64,
    pub p0: f64,
    pub v0: f64,
    pub rho0: f64,
    pub phi0: f64,
    pub f0: f64,
    pub a0: f64,
}

impl NominalValues {
    /// Derive the dependent nominals from length, pressure, and velocity.
    pub fn derive(l0: f64, p0: f64, v0: f64, sound_speed: f64) -> Self {
        let rho0 = p0 / (sound_speed * sound_speed);
        let phi0 = rho0 * v0;
        Self {
            l0,
            p0,
            v0,
            rho0,
            phi0,
            f0: phi0,
            a0: 1.0,
        }
    }

    /// Pass-through scaling: every nominal is 1, so the scaled system is the
    /// dimensional one. Kept for convergence comparisons.
    pub fn unit() -> Self {
        Self {
            l0: 1.0,
            p0: 1.0,
            v0: 1.0,
            rho0: 1.0,
            phi0: 1.0,
            f0: 1.0,
            a0: 1.0,
        }
    }
}

/// Optional manual choices; anything left `None` is computed from the data.
#[derive(Debug, Clone, Copy, Default)]
pub struct NominalOverrides {
    pub l0: Option<f64>,
    pub p0: Option<f64>,
    pub v0: Option<f64>,
}

/// Dimensionless groups of the scaled momentum equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DimensionlessGroups {
    /// Mach number of the nominal velocity, `v0/a`.
    pub mach: f64,
    /// Euler-like group `p0/(rho0*a^2)`; exactly 1 for derived nominals.
    pub euler: f64,
}

pub fn dimensionless_groups(nv: &NominalValues, sound_speed: f64) -> DimensionlessGroups {
    let a_sq = sound_speed * sound_speed;
    let euler = if nv.rho0.to_bits() == (nv.p0 / a_sq).to_bits() {
        1.0
    } else {
        nv.p0 / (nv.rho0 * a_sq)
    };
    DimensionlessGroups {
        mach: nv.v0 / sound_speed,
        euler,
    }
}

fn median(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

/// Select nominal values from the instance data.
///
/// The nominal length is the geometric mean of the pipe lengths clamped to
/// [1000 m, 10000 m]; the nominal pressure is the first slack pressure in
/// junction order; the nominal velocity is the smallest power-of-two
/// multiple of `a/1024` whose induced mass flow `rho0*v0` reaches the same
/// order of magnitude as the median injection magnitude.
pub fn choose_nominals(net: &Network) -> Result<NominalValues, ScalingError> {
    choose_nominals_with(net, &NominalOverrides::default())
}

pub fn choose_nominals_with(
    net: &Network,
    overrides: &NominalOverrides,
) -> Result<NominalValues, ScalingError> {
    let a = net.eos().sound_speed_squared().sqrt();

    let l0 = match overrides.l0 {
        Some(l0) => l0,
        None => {
            if net.pipes().is_empty() {
                return Err(ScalingError::NoPipes);
            }
            let mean_log = net.pipes().iter().map(|p| p.length.ln()).sum::<f64>()
                / net.pipes().len() as f64;
            mean_log.exp().clamp(1000.0, 10_000.0)
        }
    };

    let p0 = match overrides.p0 {
        Some(p0) => p0,
        None => net
            .junctions()
            .iter()
            .find_map(|j| j.slack_pressure())
            .unwrap_or(1e6),
    };

    let v0 = match overrides.v0 {
        Some(v0) => v0,
        None => {
            let rho0 = p0 / (a * a);
            let med = median(
                net.junctions()
                    .iter()
                    .filter_map(|j| j.injection())
                    .map(f64::abs)
                    .collect(),
            );
            // Doubling keeps the Mach number an exact power of two.
            let mut v0 = a / 1024.0;
            let target = med / 10f64.sqrt();
            let mut steps = 0;
            while rho0 * v0 < target && steps < 200 {
                v0 *= 2.0;
                steps += 1;
            }
            v0
        }
    };

    Ok(NominalValues::derive(l0, p0, v0, a))
}

/// Per-edge scaled constraint.
#[derive(Debug, Clone, PartialEq)]
pub enum EdgeRelation {
    /// Potential drop proportional to the signed square of the flow.
    Pipe { beta: f64 },
    /// Fixed pressure ratio between the end points.
    Boost { alpha: f64, is_compressor: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaledEdge {
    pub id: String,
    pub from: usize,
    pub to: usize,
    pub relation: EdgeRelation,
}

/// Dimensionless view of a network: resistances, ratios, boundary data, and
/// the potential coefficients, sharing the junction/edge order of the
/// source [`Network`]. Immutable; safe to share across concurrent solves.
#[derive(Debug, Clone)]
pub struct ScaledNetwork {
    pub node_ids: Vec<String>,
    /// Scaled prescribed pressure at slack junctions, `None` elsewhere.
    pub slack_p_bar: Vec<Option<f64>>,
    /// Scaled injection per junction; zero at slack junctions.
    pub q_bar: Vec<f64>,
    /// Active edges, pipes first.
    pub edges: Vec<ScaledEdge>,
    pub n_pipes: usize,
    pub coeffs: PotentialCoeffs,
    pub nominals: NominalValues,
    pub groups: DimensionlessGroups,
}

impl ScaledNetwork {
    pub fn n_nodes(&self) -> usize {
        self.node_ids.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn is_slack(&self, node: usize) -> bool {
        self.slack_p_bar[node].is_some()
    }

    pub fn slack_count(&self) -> usize {
        self.slack_p_bar.iter().flatten().count()
    }
}

/// Scale a network by the given nominal values.
pub fn nondimensionalize(
    net: &Network,
    nv: &NominalValues,
) -> Result<ScaledNetwork, EosError> {
    let a = net.eos().sound_speed_squared().sqrt();
    let groups = dimensionless_groups(nv, a);
    let coeffs = eos::dimensionless_coeffs(net.eos(), groups.euler, nv.p0)?;
    let prefactor = groups.mach * groups.mach / groups.euler;

    let edges = net
        .active_edges()
        .iter()
        .map(|e| {
            let relation = match e.element {
                EdgeElement::Pipe {
                    length,
                    diameter,
                    friction_factor,
                } => {
                    let l_bar = length / nv.l0;
                    let d_bar = diameter / nv.l0;
                    let area_bar =
                        std::f64::consts::PI * diameter * diameter / 4.0 / nv.a0;
                    EdgeRelation::Pipe {
                        beta: prefactor * friction_factor * l_bar
                            / (2.0 * d_bar * area_bar * area_bar),
                    }
                }
                EdgeElement::Boost {
                    ratio,
                    is_compressor,
                } => EdgeRelation::Boost {
                    alpha: ratio,
                    is_compressor,
                },
            };
            ScaledEdge {
                id: e.id.clone(),
                from: e.from,
                to: e.to,
                relation,
            }
        })
        .collect();

    let mut slack_p_bar = Vec::with_capacity(net.junctions().len());
    let mut q_bar = Vec::with_capacity(net.junctions().len());
    for j in net.junctions() {
        match j.kind() {
            JunctionKind::Slack => {
                slack_p_bar.push(Some(j.slack_pressure().unwrap() / nv.p0));
                q_bar.push(0.0);
            }
            JunctionKind::NonSlack => {
                slack_p_bar.push(None);
                q_bar.push(j.injection().unwrap() / nv.f0);
            }
        }
    }

    Ok(ScaledNetwork {
        node_ids: net.junctions().iter().map(|j| j.id.clone()).collect(),
        slack_p_bar,
        q_bar,
        edges,
        n_pipes: net.pipes().len(),
        coeffs,
        nominals: *nv,
        groups,
    })
}

/// Map a dimensionless solution back to physical units.
pub fn redimensionalize(sol: &Solution, nv: &NominalValues) -> Solution {
    use crate::solver::SolutionUnits;
    assert_eq!(sol.units, SolutionUnits::Dimensionless);
    Solution {
        p: sol.p.iter().map(|p| p * nv.p0).collect(),
        f: sol.f.iter().map(|f| f * nv.f0).collect(),
        q_full: sol.q_full.iter().map(|q| q * nv.f0).collect(),
        units: SolutionUnits::Physical,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eos::{EosKind, EosParams};
    use crate::network::{Compressor, Junction, Pipe};
    use crate::solver::{Solution, SolutionUnits};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn pipe(id: &str, from: &str, to: &str, length: f64) -> Pipe {
        Pipe {
            id: id.into(),
            from: from.into(),
            to: to.into(),
            length,
            diameter: 0.6,
            friction_factor: 0.01,
        }
    }

    fn simple_net(lengths: &[f64], slack_pressure: f64) -> Network {
        let mut junctions = vec![Junction::slack("n0", slack_pressure)];
        let mut pipes = Vec::new();
        for (i, &len) in lengths.iter().enumerate() {
            junctions.push(Junction::consumer(format!("n{}", i + 1), -150.0));
            pipes.push(pipe(
                &format!("p{i}"),
                &format!("n{i}"),
                &format!("n{}", i + 1),
                len,
            ));
        }
        Network::new(junctions, pipes, vec![], vec![], EosParams::ideal()).unwrap()
    }

    #[test]
    fn uniform_lengths_pick_that_length() {
        let nv = choose_nominals(&simple_net(&[5000.0, 5000.0], 5e6)).unwrap();
        assert_relative_eq!(nv.l0, 5000.0, max_relative = 1e-12);
        assert_eq!(nv.p0, 5e6);
    }

    #[test]
    fn geometric_mean_hits_clamp_boundary() {
        let nv = choose_nominals(&simple_net(&[1000.0, 100_000.0], 5e6)).unwrap();
        assert_relative_eq!(nv.l0, 10_000.0, max_relative = 1e-12);
    }

    #[test]
    fn slack_pressure_becomes_nominal_pressure() {
        let nv = choose_nominals(&simple_net(&[70_000.0], 4.3e6)).unwrap();
        assert_eq!(nv.p0, 4.3e6);
    }

    #[test]
    fn no_pipes_is_an_error() {
        let net = Network::new(
            vec![Junction::slack("a", 1e6), Junction::consumer("b", -1.0)],
            vec![],
            vec![Compressor {
                id: "c".into(),
                from: "a".into(),
                to: "b".into(),
                ratio: 1.2,
            }],
            vec![],
            EosParams::ideal(),
        )
        .unwrap();
        assert_eq!(choose_nominals(&net), Err(ScalingError::NoPipes));
    }

    #[test]
    fn nominal_velocity_is_a_power_of_two_mach_number() {
        let net = simple_net(&[70_000.0], 4.3e6);
        let nv = choose_nominals(&net).unwrap();
        let a = net.eos().sound_speed_squared().sqrt();
        let mach = nv.v0 / a;
        assert_eq!(mach, 0.0078125); // 2^-7, frozen for 150 kg/s at 4.3 MPa
        // induced nominal flow within one order of magnitude of the median
        let ratio = nv.f0 / 150.0;
        assert!(ratio > 10f64.powf(-0.5) && ratio < 10.0);
        assert_relative_eq!(nv.f0, 86.8457072009645, max_relative = 1e-13);
    }

    #[test]
    fn derived_nominals_make_euler_exactly_one() {
        let net = simple_net(&[70_000.0], 4.3e6);
        let nv = choose_nominals(&net).unwrap();
        let a = net.eos().sound_speed_squared().sqrt();
        let groups = dimensionless_groups(&nv, a);
        assert_eq!(groups.euler, 1.0);
        assert_eq!(groups.mach, 0.0078125);
    }

    #[test]
    fn beta_matches_hand_evaluation() {
        // 36-inch, 70 km, friction 0.01 pipe scaled with the derived
        // nominals: beta = M^2 * lam*L / (2*D*A^2), frozen independently.
        let mut net = simple_net(&[70_000.0], 4.3e6);
        net = Network::new(
            net.junctions().to_vec(),
            vec![Pipe {
                id: "p0".into(),
                from: "n0".into(),
                to: "n1".into(),
                length: 70_000.0,
                diameter: 0.9144,
                friction_factor: 0.01,
            }],
            vec![],
            vec![],
            *net.eos(),
        )
        .unwrap();
        let nv = choose_nominals(&net).unwrap();
        let snet = nondimensionalize(&net, &nv).unwrap();
        let EdgeRelation::Pipe { beta } = snet.edges[0].relation else {
            panic!("expected a pipe");
        };
        assert_relative_eq!(beta, 0.0541735449469002, max_relative = 1e-13);
        assert_relative_eq!(snet.q_bar[1], -1.727201088395698, max_relative = 1e-13);
        assert_eq!(snet.slack_p_bar[0], Some(1.0));
    }

    #[test]
    fn beta_is_invariant_under_nominal_length() {
        let net = simple_net(&[70_000.0], 4.3e6);
        let a = net.eos().sound_speed_squared().sqrt();
        let nv1 = NominalValues::derive(5000.0, 4.3e6, a / 128.0, a);
        let nv2 = NominalValues::derive(10_000.0, 4.3e6, a / 128.0, a);
        let b1 = match nondimensionalize(&net, &nv1).unwrap().edges[0].relation {
            EdgeRelation::Pipe { beta } => beta,
            _ => unreachable!(),
        };
        let b2 = match nondimensionalize(&net, &nv2).unwrap().edges[0].relation {
            EdgeRelation::Pipe { beta } => beta,
            _ => unreachable!(),
        };
        assert_relative_eq!(b1, b2, max_relative = 1e-15);
    }

    #[test]
    fn unit_nominals_reduce_beta_to_the_dimensional_resistance() {
        let net = simple_net(&[70_000.0], 4.3e6);
        let snet = nondimensionalize(&net, &NominalValues::unit()).unwrap();
        let EdgeRelation::Pipe { beta } = snet.edges[0].relation else {
            panic!()
        };
        // M^2/C = (1/a^2)/(1/a^2) = 1, so beta = lam*L/(2*D*A^2)
        let area = std::f64::consts::PI * 0.36 / 4.0;
        let expected = 0.01 * 70_000.0 / (2.0 * 0.6 * area * area);
        assert_relative_eq!(beta, expected, max_relative = 1e-12);
        assert_eq!(snet.q_bar[1], -150.0);
        assert_eq!(snet.slack_p_bar[0], Some(4.3e6));
    }

    #[test]
    fn redimensionalize_scales_back() {
        let nv = NominalValues::derive(1000.0, 5e6, 3.0, 390.0);
        let sol = Solution {
            p: vec![1.0, 0.8],
            f: vec![2.0],
            q_full: vec![2.0, -2.0],
            units: SolutionUnits::Dimensionless,
        };
        let phys = redimensionalize(&sol, &nv);
        assert_eq!(phys.units, SolutionUnits::Physical);
        assert_eq!(phys.p[0], 5e6);
        assert_relative_eq!(phys.f[0], 2.0 * nv.f0, max_relative = 1e-15);
    }

    #[test]
    fn boundary_data_round_trips_through_scaling() {
        let net = simple_net(&[70_000.0, 30_000.0], 4.3e6);
        let nv = choose_nominals(&net).unwrap();
        let snet = nondimensionalize(&net, &nv).unwrap();
        for (j, junction) in net.junctions().iter().enumerate() {
            if let Some(q) = junction.injection() {
                assert_relative_eq!(snet.q_bar[j] * nv.f0, q, max_relative = 1e-14);
            }
            if let Some(p) = junction.slack_pressure() {
                assert_relative_eq!(
                    snet.slack_p_bar[j].unwrap() * nv.p0,
                    p,
                    max_relative = 1e-14
                );
            }
        }
    }

    #[test]
    fn cnga_coefficients_enter_the_scaled_network() {
        let net = Network::new(
            vec![Junction::slack("a", 5e6), Junction::consumer("b", -100.0)],
            vec![pipe("p", "a", "b", 10_000.0)],
            vec![],
            vec![],
            EosParams::new(EosKind::Cnga),
        )
        .unwrap();
        let nv = choose_nominals(&net).unwrap();
        let snet = nondimensionalize(&net, &nv).unwrap();
        assert_relative_eq!(snet.coeffs.b1_bar, 1.0024417832439047, max_relative = 1e-13);
        assert_relative_eq!(snet.coeffs.b2_bar, 0.12046291287147254, max_relative = 1e-13);
    }

    #[test]
    fn physical_solution_is_invariant_under_nominal_choice() {
        use crate::solver::{solve, Classification, SolverConfig};
        let net = Network::new(
            vec![
                Junction::slack("s", 4.8e6),
                Junction::consumer("a", -120.0),
                Junction::consumer("b", -60.0),
            ],
            vec![
                pipe("p1", "s", "a", 30_000.0),
                pipe("p2", "a", "b", 25_000.0),
                pipe("p3", "s", "b", 45_000.0),
            ],
            vec![],
            vec![],
            EosParams::new(EosKind::Cnga),
        )
        .unwrap();
        let a = net.eos().sound_speed_squared().sqrt();
        let physical = |nv: NominalValues| {
            let snet = nondimensionalize(&net, &nv).unwrap();
            let out = solve(&snet, &SolverConfig::with_seed(3));
            assert_eq!(out.classification, Classification::ConvergedInDomain);
            redimensionalize(&out.solution.unwrap(), &nv)
        };
        let sol1 = physical(choose_nominals(&net).unwrap());
        let sol2 = physical(NominalValues::derive(2000.0, 3.1e6, a / 64.0, a));
        for (x, y) in sol1.p.iter().zip(&sol2.p) {
            assert_relative_eq!(x, y, max_relative = 1e-6);
        }
        for (x, y) in sol1.f.iter().zip(&sol2.f) {
            assert_relative_eq!(x, y, max_relative = 1e-6, epsilon = 1e-9);
        }
    }

    proptest! {
        #[test]
        fn beta_is_positive_for_physical_pipes(length in 100.0f64..2e5,
                                               diameter in 0.1f64..1.5,
                                               friction in 1e-3f64..0.1,
                                               p0 in 1e6f64..1e7,
                                               mach_exp in -12i32..-2) {
            let net = Network::new(
                vec![Junction::slack("a", p0), Junction::consumer("b", -50.0)],
                vec![Pipe { id: "p".into(), from: "a".into(), to: "b".into(),
                            length, diameter, friction_factor: friction }],
                vec![], vec![], EosParams::ideal(),
            ).unwrap();
            let a = net.eos().sound_speed_squared().sqrt();
            let nv = NominalValues::derive(5000.0, p0, a * 2f64.powi(mach_exp), a);
            let snet = nondimensionalize(&net, &nv).unwrap();
            let EdgeRelation::Pipe { beta } = snet.edges[0].relation else { unreachable!() };
            prop_assert!(beta > 0.0 && beta.is_finite());
        }
    }
}
