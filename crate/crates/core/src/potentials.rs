//! Running costs ℱ(ρ) and terminal energies 𝒢(ρ(T)), each returned together
//! with its first variation δ/δρ.
//!
//! Every logarithm sees `max(ρᵢ, DENSITY_FLOOR)`; the raw density is used
//! everywhere else. The explicit Euler scheme can push entries slightly below
//! zero, and the floor keeps the logs finite without touching mass.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::calculus::{Average, Weighting};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::measures::DensityState;

pub const DENSITY_FLOOR: f64 = 1e-12;

#[inline]
pub(crate) fn floored(x: f64) -> f64 {
    x.max(DENSITY_FLOOR)
}

/// Number of entries that hit the log floor.
pub fn floored_count(rho: &[f64]) -> usize {
    rho.iter().filter(|&&r| r < DENSITY_FLOOR).count()
}

/// Pairwise interaction kernel 𝕎.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Kernel {
    /// 𝕎ᵢⱼ = exp(−½‖Xᵢ − Xⱼ‖²).
    Gaussian,
    /// 𝕎ᵢⱼ = 1 / (‖Xᵢ − Xⱼ‖² + c).
    Coulomb { c: f64 },
    /// Row-major symmetric `n × n` matrix.
    Explicit(Vec<f64>),
}

/// Dense symmetric kernel matrix materialized on a node set.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    n: usize,
    data: Arc<Vec<f64>>,
}

impl KernelMatrix {
    pub fn build(kernel: &Kernel, graph: &Graph) -> Result<Self> {
        let n = graph.n();
        let xs = graph.coords();
        let d2 = |i: usize, j: usize| (xs[i][0] - xs[j][0]).powi(2) + (xs[i][1] - xs[j][1]).powi(2);
        let data = match kernel {
            Kernel::Gaussian => (0..n * n).map(|k| (-0.5 * d2(k / n, k % n)).exp()).collect(),
            Kernel::Coulomb { c } => {
                if *c <= 0.0 {
                    return Err(Error::config("potentials.coulomb_c", "must be positive"));
                }
                (0..n * n).map(|k| 1.0 / (d2(k / n, k % n) + c)).collect()
            }
            Kernel::Explicit(m) => {
                if m.len() != n * n {
                    return Err(Error::config("potentials.kernel", format!("explicit matrix must have {} entries", n * n)));
                }
                for i in 0..n {
                    for j in 0..i {
                        if (m[i * n + j] - m[j * n + i]).abs() > 1e-12 * (1.0 + m[i * n + j].abs()) {
                            return Err(Error::config("potentials.kernel", format!("explicit matrix not symmetric at ({i},{j})")));
                        }
                    }
                }
                m.clone()
            }
        };
        Ok(KernelMatrix { n, data: Arc::new(data) })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn data(&self) -> &Arc<Vec<f64>> {
        &self.data
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        self.data.chunks_exact(self.n).map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TerminalKind {
    L1,
    Kl,
}

/// Weighted running cost and terminal energy of one scenario.
#[derive(Debug, Clone)]
pub struct PotentialSpec {
    pub lambda_k: f64,
    pub lambda_v: f64,
    /// Per-node linear potential 𝕍 (empty means zero).
    pub v_vec: Vec<f64>,
    pub lambda_w: f64,
    pub interaction: Option<KernelMatrix>,
    pub lambda_b: f64,
    pub lambda_i: f64,
    pub terminal: TerminalKind,
    pub lambda_g: f64,
    pub target: DensityState,
}

impl PotentialSpec {
    /// Kinetic + terminal only, with the default λ_K : λ_G = 0.5 : 5000.
    pub fn transport(target: DensityState, terminal: TerminalKind) -> Self {
        PotentialSpec {
            lambda_k: 0.5,
            lambda_v: 0.0,
            v_vec: Vec::new(),
            lambda_w: 0.0,
            interaction: None,
            lambda_b: 0.0,
            lambda_i: 0.0,
            terminal,
            lambda_g: 5000.0,
            target,
        }
    }

    pub fn validate(&self, graph: &Graph) -> Result<()> {
        let weights = [
            ("lambda_k", self.lambda_k),
            ("lambda_v", self.lambda_v),
            ("lambda_w", self.lambda_w),
            ("lambda_b", self.lambda_b),
            ("lambda_i", self.lambda_i),
            ("lambda_g", self.lambda_g),
        ];
        for (key, w) in weights {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::config(format!("potentials.{key}"), "weights must be finite and >= 0"));
            }
        }
        if !self.v_vec.is_empty() && self.v_vec.len() != graph.n() {
            return Err(Error::config("potentials.linear", "linear potential length differs from node count"));
        }
        if self.lambda_w > 0.0 && self.interaction.is_none() {
            return Err(Error::config("potentials.kernel", "lambda_w > 0 requires a kernel"));
        }
        if let Some(k) = &self.interaction {
            if k.n() != graph.n() {
                return Err(Error::config("potentials.kernel", "kernel size differs from node count"));
            }
        }
        if self.target.len() != graph.n() {
            return Err(Error::config("mu_t", "target density length differs from node count"));
        }
        Ok(())
    }

    pub(crate) fn has_linear(&self) -> bool {
        self.lambda_v != 0.0 && !self.v_vec.is_empty()
    }

    pub(crate) fn has_interaction(&self) -> bool {
        self.lambda_w != 0.0 && self.interaction.is_some()
    }
}

/// 𝒱(ρ) = Σ 𝕍ᵢρᵢ with variation 𝕍.
pub fn linear_potential(rho: &[f64], v_vec: &[f64]) -> (f64, Vec<f64>) {
    let value = rho.iter().zip(v_vec).map(|(r, v)| r * v).sum();
    (value, v_vec.to_vec())
}

/// Smoothed disk bump `height · ½[1 + tanh(η(R − ‖x − c‖))]` sampled at the nodes.
pub fn landscape_bump(graph: &Graph, height: f64, radius: f64, center: [f64; 2], sharpness: f64) -> Vec<f64> {
    graph
        .coords()
        .iter()
        .map(|p| {
            let d = ((p[0] - center[0]).powi(2) + (p[1] - center[1]).powi(2)).sqrt();
            height * 0.5 * (1.0 + (sharpness * (radius - d)).tanh())
        })
        .collect()
}

/// 𝒲(ρ) = ½ ρᵀ𝕎ρ with variation 𝕎ρ.
pub fn interaction_potential(rho: &[f64], kernel: &KernelMatrix) -> (f64, Vec<f64>) {
    let w_rho = kernel.matvec(rho);
    let value = 0.5 * rho.iter().zip(&w_rho).map(|(a, b)| a * b).sum::<f64>();
    (value, w_rho)
}

/// ℬ(ρ) = Σ ρᵢ log ρᵢ with variation log ρᵢ + 1.
pub fn entropy(rho: &[f64]) -> (f64, Vec<f64>) {
    let value = rho.iter().map(|&r| r * floored(r).ln()).sum();
    let var = rho.iter().map(|&r| floored(r).ln() + 1.0).collect();
    (value, var)
}

/// ℐ(ρ) = ½ Σ_{i<j} wᵢⱼ (log ρᵢ − log ρⱼ)² θᵢⱼ(ρ) and its variation
/// Iᵢ = Σⱼ wᵢⱼ [(log ρᵢ − log ρⱼ) θᵢⱼ/ρᵢ + ½(log ρᵢ − log ρⱼ)² ∂θᵢⱼ/∂ρᵢ].
pub fn fisher_information(rho: &[f64], graph: &Graph) -> (f64, Vec<f64>) {
    let logs: Vec<f64> = rho.iter().map(|&r| floored(r).ln()).collect();
    let mut value = 0.0;
    let mut var = vec![0.0; graph.n()];
    for e in graph.edges() {
        let (i, j) = (e.i, e.j);
        let d = logs[i] - logs[j];
        let th = Average.theta(rho[i], rho[j]);
        value += 0.5 * e.w * d * d * th;
        var[i] += e.w * (d * th / floored(rho[i]) + 0.5 * d * d * Average.dtheta_di(rho[i], rho[j]));
        var[j] += e.w * (-d * th / floored(rho[j]) + 0.5 * d * d * Average.dtheta_di(rho[j], rho[i]));
    }
    (value, var)
}

/// Unweighted terminal energy 𝒢 and its (sub)gradient.
pub fn terminal_energy(rho_t: &[f64], target: &[f64], kind: TerminalKind) -> (f64, Vec<f64>) {
    match kind {
        TerminalKind::L1 => {
            let value = rho_t.iter().zip(target).map(|(r, m)| (r - m).abs()).sum();
            let var = rho_t
                .iter()
                .zip(target)
                .map(|(r, m)| {
                    let d = r - m;
                    if d > 0.0 {
                        1.0
                    } else if d < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                })
                .collect();
            (value, var)
        }
        TerminalKind::Kl => {
            let value = rho_t.iter().zip(target).map(|(&r, &m)| r * (floored(r) / floored(m)).ln()).sum();
            let var = rho_t.iter().zip(target).map(|(&r, &m)| (floored(r) / floored(m)).ln() + 1.0).collect();
            (value, var)
        }
    }
}

/// Unweighted values of each running-cost term.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PotentialParts {
    pub linear: f64,
    pub interaction: f64,
    pub entropy: f64,
    pub fisher: f64,
}

impl PotentialParts {
    pub fn weighted_total(&self, spec: &PotentialSpec) -> f64 {
        spec.lambda_v * self.linear + spec.lambda_w * self.interaction + spec.lambda_b * self.entropy + spec.lambda_i * self.fisher
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunningCost {
    /// λ_V𝒱 + λ_W𝒲 + λ_Bℬ + λ_Iℐ.
    pub value: f64,
    /// Matching weighted sum of first variations.
    pub f: Vec<f64>,
    pub parts: PotentialParts,
}

/// Weighted assembly of the active running-cost terms. Inactive terms
/// (zero weight) are reported but contribute nothing.
pub fn running_cost(rho: &[f64], spec: &PotentialSpec, graph: &Graph) -> RunningCost {
    let n = rho.len();
    let mut f = vec![0.0; n];
    let mut parts = PotentialParts::default();
    let mut add = |lambda: f64, var: &[f64]| {
        if lambda != 0.0 {
            f.iter_mut().zip(var).for_each(|(a, b)| *a += lambda * b);
        }
    };
    if !spec.v_vec.is_empty() {
        let (v, var) = linear_potential(rho, &spec.v_vec);
        parts.linear = v;
        add(spec.lambda_v, &var);
    }
    if let Some(k) = &spec.interaction {
        let (v, var) = interaction_potential(rho, k);
        parts.interaction = v;
        add(spec.lambda_w, &var);
    }
    if spec.lambda_b != 0.0 {
        let (v, var) = entropy(rho);
        parts.entropy = v;
        add(spec.lambda_b, &var);
    }
    if spec.lambda_i != 0.0 {
        let (v, var) = fisher_information(rho, graph);
        parts.fisher = v;
        add(spec.lambda_i, &var);
    }
    RunningCost { value: parts.weighted_total(spec), f, parts }
}
