//! Forward Hamilton–Jacobi / continuity system and its explicit Euler unrolling.
//!
//! With vᵢⱼ = √wᵢⱼ (Sⱼ − Sᵢ) the system reads
//!
//! ```text
//! dρᵢ/dt = Σ_{j∈N(i)} wᵢⱼ (Sⱼ − Sᵢ) θᵢⱼ(ρ)
//! dSᵢ/dt = ½ Σ_{j∈N(i)} wᵢⱼ (Sᵢ − Sⱼ)² ∂θᵢⱼ/∂ρᵢ − fᵢ(ρ)
//! ```
//!
//! Mass moves from high-S nodes to low-S nodes. The running-cost variation
//! fᵢ sits outside the neighbor sum.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::calculus::{Average, Weighting};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::measures::{DensityState, ValueState};
use crate::potentials::{running_cost, terminal_energy, PotentialParts, PotentialSpec};
#[cfg(test)]
use crate::potentials::TerminalKind;

/// Time quadrature of the running terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quadrature {
    /// Left endpoints m = 0..M−1; total measure exactly T.
    #[default]
    Left,
    /// Endpoints m = 0..M, as in the printed training loop.
    Alg1,
}

impl Quadrature {
    /// Range of step indices that enter the time sum for an `m_steps` run.
    pub fn steps(self, m_steps: usize) -> std::ops::Range<usize> {
        match self {
            Quadrature::Left => 0..m_steps,
            Quadrature::Alg1 => 0..m_steps + 1,
        }
    }
}

impl std::str::FromStr for Quadrature {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(Quadrature::Left),
            "alg1" => Ok(Quadrature::Alg1),
            other => Err(Error::config("quadrature", format!("unknown rule `{other}` (expected left|alg1)"))),
        }
    }
}

/// dρ/dt of the continuity equation.
pub fn ce_rhs(rho: &[f64], s: &[f64], graph: &Graph) -> Vec<f64> {
    let mut out = vec![0.0; graph.n()];
    for e in graph.edges() {
        let flux = e.w * (s[e.j] - s[e.i]) * Average.theta(rho[e.i], rho[e.j]);
        out[e.i] += flux;
        out[e.j] -= flux;
    }
    out
}

/// dS/dt of the Hamilton–Jacobi equation given fᵢ(ρ).
pub fn hj_rhs(rho: &[f64], s: &[f64], f: &[f64], graph: &Graph) -> Vec<f64> {
    let mut out: Vec<f64> = f.iter().map(|x| -x).collect();
    for e in graph.edges() {
        let d2 = e.w * (s[e.i] - s[e.j]).powi(2);
        out[e.i] += 0.5 * d2 * Average.dtheta_di(rho[e.i], rho[e.j]);
        out[e.j] += 0.5 * d2 * Average.dtheta_di(rho[e.j], rho[e.i]);
    }
    out
}

/// ⟨v, v⟩_ρ with vᵢⱼ = √wᵢⱼ (Sⱼ − Sᵢ); the kinetic energy is half of this.
pub fn velocity_norm_sq(rho: &[f64], s: &[f64], graph: &Graph) -> f64 {
    graph
        .edges()
        .iter()
        .map(|e| e.w * (s[e.j] - s[e.i]).powi(2) * Average.theta(rho[e.i], rho[e.j]))
        .sum()
}

/// One simultaneous explicit Euler step; both updates read the step-m state.
pub fn euler_step(rho: &[f64], s: &[f64], spec: &PotentialSpec, graph: &Graph, dt: f64) -> (Vec<f64>, Vec<f64>) {
    let f = running_cost(rho, spec, graph).f;
    let ds = hj_rhs(rho, s, &f, graph);
    let dr = ce_rhs(rho, s, graph);
    let s_next = s.iter().zip(&ds).map(|(a, b)| a + b * dt).collect();
    let rho_next = rho.iter().zip(&dr).map(|(a, b)| a + b * dt).collect();
    (rho_next, s_next)
}

/// Full unrolled path with per-step energies (all M+1 states).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub rho: Vec<Vec<f64>>,
    pub s: Vec<Vec<f64>>,
    /// 𝒦⁽ᵐ⁾ = ½⟨v⁽ᵐ⁾, v⁽ᵐ⁾⟩ for m = 0..=M.
    pub kinetic: Vec<f64>,
    /// Unweighted running-cost terms for m = 0..=M.
    pub running: Vec<PotentialParts>,
    pub dt: f64,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.rho.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.steps() as f64 * self.dt
    }

    pub fn final_rho(&self) -> &[f64] {
        self.rho.last().expect("trajectory has states")
    }

    pub fn final_s(&self) -> &[f64] {
        self.s.last().expect("trajectory has states")
    }

    /// max over steps of |Σρ⁽ᵐ⁾ − 1|.
    pub fn mass_drift(&self) -> f64 {
        self.rho.iter().map(|r| (r.iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn min_rho(&self) -> f64 {
        self.rho.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }

    /// CSV `m,t,node_id,rho,S` over the given step indices.
    pub fn to_csv(&self, steps: impl IntoIterator<Item = usize>) -> String {
        let mut out = String::from("m,t,node_id,rho,S\n");
        for m in steps {
            let t = m as f64 * self.dt;
            for (i, (r, s)) in self.rho[m].iter().zip(&self.s[m]).enumerate() {
                let _ = writeln!(out, "{m},{t},{i},{r},{s}");
            }
        }
        out
    }
}

/// Records one state's energies.
fn energies(rho: &[f64], s: &[f64], spec: &PotentialSpec, graph: &Graph) -> (f64, PotentialParts) {
    (0.5 * velocity_norm_sq(rho, s, graph), running_cost(rho, spec, graph).parts)
}

/// Unrolls `m_steps` Euler steps from `(μ₀, S₀)`.
pub fn integrate(
    s0: &ValueState,
    mu0: &DensityState,
    spec: &PotentialSpec,
    graph: &Graph,
    dt: f64,
    m_steps: usize,
) -> Result<Trajectory> {
    if m_steps < 1 {
        return Err(Error::config("dynamics.M", "need at least one step"));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::config("dynamics.dt", "must be positive"));
    }
    let mut rho = vec![mu0.as_slice().to_vec()];
    let mut s = vec![s0.as_slice().to_vec()];
    let mut kinetic = Vec::with_capacity(m_steps + 1);
    let mut running = Vec::with_capacity(m_steps + 1);
    for m in 0..m_steps {
        let (k, parts) = energies(&rho[m], &s[m], spec, graph);
        kinetic.push(k);
        running.push(parts);
        let (r_next, s_next) = euler_step(&rho[m], &s[m], spec, graph, dt);
        if r_next.iter().chain(&s_next).any(|v| !v.is_finite()) {
            return Err(Error::Blowup { step: m + 1 });
        }
        rho.push(r_next);
        s.push(s_next);
    }
    let (k, parts) = energies(&rho[m_steps], &s[m_steps], spec, graph);
    kinetic.push(k);
    running.push(parts);
    Ok(Trajectory { rho, s, kinetic, running, dt })
}

/// Time integrals and terminal energy of a trajectory.
///
/// Unweighted integrals are what tables report; `*_term` fields are the
/// weighted loss contributions and sum to `total`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    /// ∫𝒦 dt.
    pub kinetic: f64,
    /// Unweighted ∫ of each running term.
    pub potentials: PotentialParts,
    /// Unweighted 𝒢(ρ(T)).
    pub terminal: f64,
    pub kinetic_term: f64,
    pub linear_term: f64,
    pub interaction_term: f64,
    pub entropy_term: f64,
    pub fisher_term: f64,
    pub terminal_term: f64,
    pub total: f64,
}

impl CostBreakdown {
    /// Assembles weighted terms from unweighted integrals.
    pub fn assemble(kinetic: f64, potentials: PotentialParts, terminal: f64, spec: &PotentialSpec) -> Self {
        let kinetic_term = 2.0 * spec.lambda_k * kinetic;
        let linear_term = spec.lambda_v * potentials.linear;
        let interaction_term = spec.lambda_w * potentials.interaction;
        let entropy_term = spec.lambda_b * potentials.entropy;
        let fisher_term = spec.lambda_i * potentials.fisher;
        let terminal_term = spec.lambda_g * terminal;
        let total = kinetic_term + linear_term + interaction_term + entropy_term + fisher_term + terminal_term;
        CostBreakdown {
            kinetic,
            potentials,
            terminal,
            kinetic_term,
            linear_term,
            interaction_term,
            entropy_term,
            fisher_term,
            terminal_term,
            total,
        }
    }

    /// Weighted components in a fixed order.
    pub fn components(&self) -> [f64; 6] {
        [
            self.kinetic_term,
            self.linear_term,
            self.interaction_term,
            self.entropy_term,
            self.fisher_term,
            self.terminal_term,
        ]
    }
}

/// Discretized cost: Σₘ [λ_K⟨v⁽ᵐ⁾,v⁽ᵐ⁾⟩ + ℱ(ρ⁽ᵐ⁾)] Δt + λ_G 𝒢(ρ(T)).
pub fn pathwise_cost(traj: &Trajectory, spec: &PotentialSpec, quadrature: Quadrature) -> CostBreakdown {
    let dt = traj.dt;
    let mut kinetic = 0.0;
    let mut parts = PotentialParts::default();
    for m in quadrature.steps(traj.steps()) {
        kinetic += traj.kinetic[m] * dt;
        let p = &traj.running[m];
        parts.linear += p.linear * dt;
        parts.interaction += p.interaction * dt;
        parts.entropy += p.entropy * dt;
        parts.fisher += p.fisher * dt;
    }
    let (terminal, _) = terminal_energy(traj.final_rho(), spec.target.as_slice(), spec.terminal);
    CostBreakdown::assemble(kinetic, parts, terminal, spec)
}

/// ‖S(T) − λ_G g(ρ(T))‖∞ / ‖S(T)‖∞, the terminal-condition residual.
pub fn terminal_residual(traj: &Trajectory, spec: &PotentialSpec) -> f64 {
    let (_, g) = terminal_energy(traj.final_rho(), spec.target.as_slice(), spec.terminal);
    let s_t = traj.final_s();
    let num = s_t.iter().zip(&g).map(|(s, gi)| (s - spec.lambda_g * gi).abs()).fold(0.0, f64::max);
    let den = s_t.iter().map(|s| s.abs()).fold(0.0, f64::max);
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

/// Same as [`terminal_residual`] after removing the best constant shift.
/// S is determined only up to an additive constant, and the shift is
/// invisible to the dynamics.
pub fn terminal_residual_shifted(traj: &Trajectory, spec: &PotentialSpec) -> f64 {
    let (_, g) = terminal_energy(traj.final_rho(), spec.target.as_slice(), spec.terminal);
    let s_t = traj.final_s();
    let diff: Vec<f64> = s_t.iter().zip(&g).map(|(s, gi)| s - spec.lambda_g * gi).collect();
    let (lo, hi) = diff.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &d| (a.min(d), b.max(d)));
    let shift = 0.5 * (lo + hi);
    let num = diff.iter().map(|d| (d - shift).abs()).fold(0.0, f64::max);
    let (slo, shi) = s_t.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &d| (a.min(d), b.max(d)));
    let den = 0.5 * (shi - slo);
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_lattice, DomainShape};

    fn pair() -> Graph {
        Graph::new(vec![[0.0, 0.0], [1.0, 0.0]], [(0, 1, 1.0)]).unwrap()
    }

    fn free_spec(n: usize) -> PotentialSpec {
        let mut spec = PotentialSpec::transport(DensityState::uniform(n), TerminalKind::L1);
        spec.lambda_g = 0.0;
        spec
    }

    #[test]
    fn ce_two_nodes() {
        assert_eq!(ce_rhs(&[1.0, 0.0], &[1.0, 0.0], &pair()), vec![-0.5, 0.5]);
        assert_eq!(ce_rhs(&[1.0, 0.0], &[3.0, 3.0], &pair()), vec![0.0, 0.0]);
    }

    #[test]
    fn hj_two_nodes() {
        assert_eq!(hj_rhs(&[1.0, 0.0], &[1.0, 0.0], &[0.0, 0.0], &pair()), vec![0.25, 0.25]);
        assert_eq!(hj_rhs(&[0.5, 0.5], &[2.0, 2.0], &[0.0, 0.0], &pair()), vec![0.0, 0.0]);
        assert_eq!(hj_rhs(&[0.5, 0.5], &[2.0, 2.0], &[1.0, -1.0], &pair()), vec![-1.0, 1.0]);
    }

    #[test]
    fn euler_two_nodes() {
        let spec = free_spec(2);
        let (r, s) = euler_step(&[1.0, 0.0], &[1.0, 0.0], &spec, &pair(), 0.1);
        assert!((r[0] - 0.95).abs() < 1e-15 && (r[1] - 0.05).abs() < 1e-15);
        assert!((s[0] - 1.025).abs() < 1e-15 && (s[1] - 0.025).abs() < 1e-15);
    }

    #[test]
    fn uniform_constant_is_fixed_point() {
        let g = build_lattice(4, 4, &DomainShape::square(0.0, 1.0)).unwrap();
        let rho = vec![1.0 / 16.0; 16];
        let (r, s) = euler_step(&rho, &[0.7; 16], &free_spec(16), &g, 0.5);
        assert_eq!(r, rho);
        assert_eq!(s, vec![0.7; 16]);
    }

    #[test]
    fn stationary_trajectory_has_zero_cost() {
        let g = build_lattice(5, 5, &DomainShape::square(0.0, 1.0)).unwrap();
        let mu: Vec<f64> = (1..=25).map(|i| i as f64).collect();
        let mu0 = DensityState::from_weights(mu).unwrap();
        let mut spec = PotentialSpec::transport(mu0.clone(), TerminalKind::L1);
        spec.lambda_g = 10.0;
        let traj = integrate(&ValueState::new(vec![1.5; 25]).unwrap(), &mu0, &spec, &g, 0.5, 8).unwrap();
        assert!(traj.rho.iter().all(|r| r == mu0.as_slice()));
        assert!(traj.kinetic.iter().all(|&k| k == 0.0));
        assert_eq!(pathwise_cost(&traj, &spec, Quadrature::Left).total, 0.0);
        assert_eq!(traj.steps(), 8);
        assert_eq!(traj.horizon(), 4.0);
    }

    #[test]
    fn quadrature_ranges() {
        assert_eq!(Quadrature::Left.steps(4), 0..4);
        assert_eq!(Quadrature::Alg1.steps(4), 0..5);
        assert_eq!("alg1".parse::<Quadrature>().unwrap(), Quadrature::Alg1);
        assert!("mid".parse::<Quadrature>().is_err());
    }

    #[test]
    fn blowup_reports_step() {
        let g = pair();
        let mu0 = DensityState::new(vec![0.5, 0.5]).unwrap();
        let spec = free_spec(2);
        let s0 = ValueState::new(vec![1e154, -1e154]).unwrap();
        match integrate(&s0, &mu0, &spec, &g, 1.0, 5) {
            Err(Error::Blowup { step }) => assert!(step >= 1),
            other => panic!("expected blowup, got {other:?}"),
        }
    }

    #[test]
    fn breakdown_sums_to_total() {
        let mut spec = free_spec(2);
        spec.lambda_b = 0.3;
        spec.lambda_g = 7.0;
        let parts = PotentialParts { linear: 1.0, interaction: 2.0, entropy: -3.0, fisher: 0.5 };
        let c = CostBreakdown::assemble(1.5, parts, 0.25, &spec);
        assert!((c.components().iter().sum::<f64>() - c.total).abs() < 1e-12);
        assert_eq!(c.kinetic_term, 1.5);
    }
}
