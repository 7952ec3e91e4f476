//! Discrete calculus on a weighted graph: edge interpolation of densities,
//! gradient, divergence and the density-weighted inner product of edge fields.
//!
//! Edge fields are stored on canonical edges `(i, j)`, `i < j`; the value on
//! the reverse orientation is implicitly the negation.

use crate::graph::Graph;

/// Edgewise interpolation θᵢⱼ(ρ) of node densities.
pub trait Weighting {
    fn theta(&self, rho_i: f64, rho_j: f64) -> f64;
    /// ∂θᵢⱼ/∂ρᵢ.
    fn dtheta_di(&self, rho_i: f64, rho_j: f64) -> f64;
}

/// θᵢⱼ = (ρᵢ + ρⱼ)/2.
#[derive(Debug, Clone, Copy, Default)]
pub struct Average;

impl Weighting for Average {
    #[inline]
    fn theta(&self, rho_i: f64, rho_j: f64) -> f64 {
        0.5 * (rho_i + rho_j)
    }

    #[inline]
    fn dtheta_di(&self, _rho_i: f64, _rho_j: f64) -> f64 {
        0.5
    }
}

/// Antisymmetric field on the canonical edge list.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeField {
    pub values: Vec<f64>,
}

impl EdgeField {
    pub fn zeros(m: usize) -> Self {
        EdgeField { values: vec![0.0; m] }
    }

    /// Value in orientation `i → j` for edge `{i, j}`.
    pub fn oriented(&self, graph: &Graph, i: usize, j: usize) -> f64 {
        let k = graph.edge_index(i, j).unwrap_or_else(|| panic!("({i},{j}) is not an edge"));
        if i < j {
            self.values[k]
        } else {
            -self.values[k]
        }
    }
}

/// θᵢⱼ(ρ) with the average weighting. Panics if `{i, j}` is not an edge.
pub fn theta(rho: &[f64], graph: &Graph, i: usize, j: usize) -> f64 {
    assert!(graph.edge_index(i, j).is_some(), "theta requested on non-edge ({i},{j})");
    Average.theta(rho[i], rho[j])
}

/// θᵢⱼ on every canonical edge.
pub fn edge_theta(rho: &[f64], graph: &Graph) -> Vec<f64> {
    graph.edge_src().iter().zip(graph.edge_dst()).map(|(&i, &j)| Average.theta(rho[i], rho[j])).collect()
}

/// (∇S)ᵢⱼ = √wᵢⱼ (Sᵢ − Sⱼ).
pub fn graph_gradient(s: &[f64], graph: &Graph) -> EdgeField {
    let values = graph
        .edges()
        .iter()
        .map(|e| e.w.sqrt() * (s[e.i] - s[e.j]))
        .collect();
    EdgeField { values }
}

/// div(ρv)ᵢ = −Σ_{j∈N(i)} √wᵢⱼ vᵢⱼ θᵢⱼ(ρ).
pub fn graph_divergence(rho: &[f64], v: &EdgeField, graph: &Graph) -> Vec<f64> {
    let mut div = vec![0.0; graph.n()];
    for (k, e) in graph.edges().iter().enumerate() {
        let flux = e.w.sqrt() * v.values[k] * Average.theta(rho[e.i], rho[e.j]);
        div[e.i] -= flux;
        div[e.j] += flux;
    }
    div
}

/// ⟨v, u⟩_ρ = Σ_{i<j} vᵢⱼ uᵢⱼ θᵢⱼ(ρ) (both orientations, halved).
pub fn inner_product(v: &EdgeField, u: &EdgeField, rho: &[f64], graph: &Graph) -> f64 {
    graph
        .edges()
        .iter()
        .enumerate()
        .map(|(k, e)| v.values[k] * u.values[k] * Average.theta(rho[e.i], rho[e.j]))
        .sum()
}

/// 𝒦(ρ, v) = ½⟨v, v⟩_ρ.
pub fn kinetic_energy(v: &EdgeField, rho: &[f64], graph: &Graph) -> f64 {
    0.5 * inner_product(v, v, rho, graph)
}

/// Both sides of `−Σᵢ div(ρv)ᵢ ξᵢ = ⟨∇ξ, v⟩_ρ`.
pub fn integration_by_parts_check(rho: &[f64], v: &EdgeField, xi: &[f64], graph: &Graph) -> (f64, f64) {
    let div = graph_divergence(rho, v, graph);
    let lhs = -div.iter().zip(xi).map(|(d, x)| d * x).sum::<f64>();
    let rhs = inner_product(&graph_gradient(xi, graph), v, rho, graph);
    (lhs, rhs)
}
