//! Node densities on the probability simplex and per-node value vectors.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Point};

/// Tolerance on `Σ ρᵢ = 1` at construction.
pub const MASS_TOL: f64 = 1e-12;

/// Probability vector over graph nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityState {
    rho: Vec<f64>,
}

impl DensityState {
    /// Wraps an already-normalized, nonnegative vector.
    pub fn new(rho: Vec<f64>) -> Result<Self> {
        if rho.is_empty() {
            return Err(Error::InvalidDensity("empty density".into()));
        }
        if let Some((i, v)) = rho.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidDensity(format!("entry {i} = {v} is negative or non-finite")));
        }
        let mass: f64 = rho.iter().sum();
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidDensity(format!("total mass {mass} differs from 1")));
        }
        Ok(DensityState { rho })
    }

    /// Normalizes nonnegative weights to unit mass.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let mass: f64 = weights.iter().sum();
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::InvalidDensity(format!("cannot normalize weights with total {mass}")));
        }
        let mut rho: Vec<f64> = weights.into_iter().map(|w| w / mass).collect();
        // A second pass absorbs the rounding left by the first division.
        let again: f64 = rho.iter().sum();
        rho.iter_mut().for_each(|v| *v /= again);
        DensityState::new(rho)
    }

    pub fn uniform(n: usize) -> Self {
        DensityState { rho: vec![1.0 / n as f64; n] }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.rho
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.rho
    }

    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    /// Density-weighted mean of node coordinates.
    pub fn center(&self, graph: &Graph) -> Point {
        graph.coords().iter().zip(&self.rho).fold([0.0, 0.0], |acc, (p, r)| [acc[0] + r * p[0], acc[1] + r * p[1]])
    }

    /// CSV rows `node_id,x,y,value` with a header line.
    pub fn to_csv(&self, graph: &Graph) -> String {
        node_csv(graph, &self.rho)
    }
}

/// Per-node value function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueState {
    s: Vec<f64>,
}

impl ValueState {
    pub fn new(s: Vec<f64>) -> Result<Self> {
        if let Some(i) = s.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidDensity(format!("value entry {i} is not finite")));
        }
        Ok(ValueState { s })
    }

    pub fn zeros(n: usize) -> Self {
        ValueState { s: vec![0.0; n] }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.s
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.s
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn to_csv(&self, graph: &Graph) -> String {
        node_csv(graph, &self.s)
    }
}

fn node_csv(graph: &Graph, values: &[f64]) -> String {
    let mut out = String::from("node_id,x,y,value\n");
    for (i, (p, v)) in graph.coords().iter().zip(values).enumerate() {
        let _ = writeln!(out, "{i},{},{},{}", p[0], p[1], v);
    }
    out
}

fn gaussian_weight(p: Point, mean: Point, cov_scale: f64) -> f64 {
    let d2 = (p[0] - mean[0]).powi(2) + (p[1] - mean[1]).powi(2);
    (-d2 / (2.0 * cov_scale)).exp()
}

fn check_cov(cov_scale: f64) -> Result<()> {
    if cov_scale > 0.0 && cov_scale.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidDensity(format!("covariance scale must be positive (got {cov_scale})")))
    }
}

/// Isotropic Gaussian with covariance `cov_scale · I₂`, evaluated at the nodes.
pub fn gaussian_density(graph: &Graph, mean: Point, cov_scale: f64) -> Result<DensityState> {
    check_cov(cov_scale)?;
    DensityState::from_weights(graph.coords().iter().map(|&p| gaussian_weight(p, mean, cov_scale)).collect())
}

/// Equal-weight mixture of isotropic Gaussians sharing one covariance scale.
pub fn gaussian_mixture_density(graph: &Graph, means: &[Point], cov_scale: f64) -> Result<DensityState> {
    check_cov(cov_scale)?;
    if means.is_empty() {
        return Err(Error::InvalidDensity("mixture needs at least one component".into()));
    }
    let k = means.len() as f64;
    let weights = graph
        .coords()
        .iter()
        .map(|&p| means.iter().map(|&m| gaussian_weight(p, m, cov_scale)).sum::<f64>() / k)
        .collect();
    DensityState::from_weights(weights)
}

/// Means placed on a circle: `center + r·(sin φₖ, cos φₖ)` with `φₖ = 2πk/count`, `k = 1..=count`.
pub fn circle_means(center: Point, radius: f64, count: usize) -> Vec<Point> {
    (1..=count)
        .map(|k| {
            let phi = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
            [center[0] + radius * phi.sin(), center[1] + radius * phi.cos()]
        })
        .collect()
}

/// Product Laplace profile `exp(−a₀|x₀−b₀| − a₁|x₁−b₁|)`.
pub fn laplacian_density(graph: &Graph, a: Point, b: Point) -> Result<DensityState> {
    if !(a[0] > 0.0 && a[1] > 0.0) {
        return Err(Error::InvalidDensity(format!("Laplace rates must be positive (got {a:?})")));
    }
    let weights = graph
        .coords()
        .iter()
        .map(|p| (-a[0] * (p[0] - b[0]).abs() - a[1] * (p[1] - b[1]).abs()).exp())
        .collect();
    DensityState::from_weights(weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_lattice, DomainShape};

    fn nearest_node(g: &Graph, p: Point) -> usize {
        (0..g.n())
            .min_by(|&a, &b| {
                let da = (g.coords()[a][0] - p[0]).powi(2) + (g.coords()[a][1] - p[1]).powi(2);
                let db = (g.coords()[b][0] - p[0]).powi(2) + (g.coords()[b][1] - p[1]).powi(2);
                da.total_cmp(&db)
            })
            .unwrap()
    }

    fn argmax(v: &[f64]) -> usize {
        (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap()
    }

    fn two_nodes() -> Graph {
        Graph::new(vec![[-1.0, 0.0], [1.0, 0.0]], [(0, 1, 1.0)]).unwrap()
    }

    #[test]
    fn single_node_is_one() {
        let g = Graph::new(vec![[0.3, 0.1]], []).unwrap();
        assert_eq!(gaussian_density(&g, [5.0, 5.0], 0.2).unwrap().as_slice(), &[1.0]);
        assert_eq!(laplacian_density(&g, [2.0, 2.0], [0.0, 0.0]).unwrap().as_slice(), &[1.0]);
    }

    #[test]
    fn symmetric_two_nodes() {
        let rho = gaussian_density(&two_nodes(), [0.0, 3.0], 0.5).unwrap();
        assert_eq!(rho.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn gaussian_peak_at_nearest_node() {
        let g = build_lattice(31, 31, &DomainShape::square(-3.0, 3.0)).unwrap();
        let rho = gaussian_density(&g, [-1.2, -1.2], 0.2).unwrap();
        assert_eq!(argmax(rho.as_slice()), nearest_node(&g, [-1.2, -1.2]));
        assert!((rho.as_slice().iter().sum::<f64>() - 1.0).abs() < MASS_TOL);
    }

    #[test]
    fn one_component_mixture_matches_gaussian() {
        let g = build_lattice(11, 11, &DomainShape::square(-3.0, 3.0)).unwrap();
        let a = gaussian_density(&g, [0.4, -0.2], 0.3).unwrap();
        let b = gaussian_mixture_density(&g, &[[0.4, -0.2]], 0.3).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn laplacian_symmetric_about_node() {
        let g = build_lattice(9, 9, &DomainShape::square(-2.0, 2.0)).unwrap();
        let rho = laplacian_density(&g, [2.0, 2.0], [0.0, 0.0]).unwrap();
        let r = rho.as_slice();
        // mirror x -> -x maps (row, c) to (row, 8 - c)
        for row in 0..9 {
            for c in 0..9 {
                assert!((r[row * 9 + c] - r[row * 9 + 8 - c]).abs() < 1e-15);
            }
        }
        assert_eq!(argmax(r), 40);
    }

    #[test]
    fn rejects_bad_parameters() {
        let g = two_nodes();
        assert!(gaussian_density(&g, [0.0, 0.0], 0.0).is_err());
        assert!(gaussian_mixture_density(&g, &[], 1.0).is_err());
        assert!(laplacian_density(&g, [0.0, 1.0], [0.0, 0.0]).is_err());
        assert!(DensityState::new(vec![0.7, 0.7]).is_err());
        assert!(DensityState::new(vec![1.5, -0.5]).is_err());
    }

    #[test]
    fn csv_export() {
        let g = two_nodes();
        let csv = DensityState::uniform(2).to_csv(&g);
        assert_eq!(csv, "node_id,x,y,value\n0,-1,0,0.5\n1,1,0,0.5\n");
    }
}
