//! Outer training loop, warm start and the per-node baseline.

use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::dynamics::CostBreakdown;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::models::{Model, ModelKind};
use crate::unroll::Problem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Adam,
    Gd,
}

impl FromStr for Optimizer {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(Optimizer::Adam),
            "gd" | "plain-gd" => Ok(Optimizer::Gd),
            other => Err(Error::config("training.optimizer", format!("unknown optimizer `{other}`"))),
        }
    }
}

/// Edgewise mismatch used during warm start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WarmStartLoss {
    /// Mean squared error over edges.
    #[default]
    Mse,
    /// (1/n)·‖·‖₂ as printed in the original algorithm.
    Alg2,
}

impl FromStr for WarmStartLoss {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(WarmStartLoss::Mse),
            "alg2" => Ok(WarmStartLoss::Alg2),
            other => Err(Error::config("training.warmstart_loss", format!("unknown warm-start loss `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WarmStartConfig {
    pub enabled: bool,
    pub alpha: f64,
    pub epochs: usize,
    pub lr: f64,
    pub loss: WarmStartLoss,
}

impl Default for WarmStartConfig {
    fn default() -> Self {
        WarmStartConfig { enabled: false, alpha: 0.6, epochs: 3000, lr: 1e-3, loss: WarmStartLoss::Mse }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Trailing epochs averaged in the report.
    pub report_window: usize,
    pub warm_start: WarmStartConfig,
    /// Steps per replayed segment; 0 keeps the whole unroll on one tape.
    pub checkpoint_every: usize,
    /// Multiplier on the initial output-layer weights.
    pub init_output_gain: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3000,
            lr: 1e-3,
            optimizer: Optimizer::Adam,
            seed: 0,
            report_window: 100,
            warm_start: WarmStartConfig::default(),
            checkpoint_every: 0,
            init_output_gain: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("training.epochs", "must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("training.lr", "must be positive"));
        }
        if self.report_window == 0 || self.report_window > self.epochs {
            return Err(Error::config("training.report_window", "must be in 1..=epochs"));
        }
        if !(self.init_output_gain.is_finite() && self.init_output_gain >= 0.0) {
            return Err(Error::config("training.init_output_gain", "must be finite and >= 0"));
        }
        let ws = &self.warm_start;
        if !(0.0..=1.0).contains(&ws.alpha) {
            return Err(Error::config("training.warmstart_alpha", "must lie in [0, 1]"));
        }
        if ws.enabled && !(ws.lr > 0.0 && ws.lr.is_finite()) {
            return Err(Error::config("training.warmstart_lr", "must be positive"));
        }
        Ok(())
    }
}

/// Adam(β₁=0.9, β₂=0.999, ε=1e−8) or plain gradient descent.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: Optimizer,
    lr: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl OptimizerState {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(kind: Optimizer, lr: f64, len: usize) -> Self {
        OptimizerState { kind, lr, t: 0, m: vec![0.0; len], v: vec![0.0; len] }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        match self.kind {
            Optimizer::Gd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
            Optimizer::Adam => {
                self.t += 1;
                let c1 = 1.0 - Self::BETA1.powi(self.t);
                let c2 = 1.0 - Self::BETA2.powi(self.t);
                for k in 0..params.len() {
                    let g = grad[k];
                    self.m[k] = Self::BETA1 * self.m[k] + (1.0 - Self::BETA1) * g;
                    self.v[k] = Self::BETA2 * self.v[k] + (1.0 - Self::BETA2) * g * g;
                    let mh = self.m[k] / c1;
                    let vh = self.v[k] / c2;
                    params[k] -= self.lr * mh / (vh.sqrt() + Self::EPS);
                }
            }
        }
    }
}

/// Trailing-window means.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TrailingAverages {
    pub window: usize,
    pub kinetic: f64,
    pub terminal: f64,
    pub total: f64,
    /// Node averages: the two above divided by n.
    pub kinetic_per_node: f64,
    pub terminal_per_node: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub model: ModelKind,
    pub num_params: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Warm-start mismatch per pre-training epoch (empty when disabled).
    pub warm_start_losses: Vec<f64>,
    /// Breakdown of the loss evaluated at the start of each epoch.
    pub epochs: Vec<CostBreakdown>,
    pub best_epoch: usize,
    pub best_loss: f64,
    pub trailing: TrailingAverages,
    pub min_rho: f64,
    pub mass_drift: f64,
    pub wall_clock_secs: f64,
    #[serde(skip)]
    pub best_params: Vec<f64>,
    #[serde(skip)]
    pub final_params: Vec<f64>,
}

impl TrainReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn last(&self) -> &CostBreakdown {
        self.epochs.last().expect("at least one epoch")
    }

    pub fn total_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|b| b.total).collect()
    }
}

/// Trains `model` from seeded initial parameters, running the warm start
/// first when enabled.
pub fn train(graph: &Graph, problem: &Problem, model: &Model, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    let mut params = model.init_params_with_gain(config.seed, config.init_output_gain);
    let mut warm_losses = Vec::new();
    if config.warm_start.enabled {
        let outcome = warm_start(graph, problem.mu0(), problem.spec().target.as_slice(), model, params, &config.warm_start)?;
        params = outcome.params;
        warm_losses = outcome.losses;
    }
    let mut report = train_from(problem, model, config, params)?;
    report.warm_start_losses = warm_losses;
    Ok(report)
}

/// Baseline that optimizes the n raw values of S₀, starting from zero.
pub fn train_direct(graph: &Graph, problem: &Problem, config: &TrainConfig) -> Result<TrainReport> {
    let model = Model::new(ModelKind::Direct, graph);
    let config = TrainConfig { warm_start: WarmStartConfig { enabled: false, ..config.warm_start }, ..*config };
    train(graph, problem, &model, &config)
}

/// Main loop from explicit starting parameters.
pub fn train_from(problem: &Problem, model: &Model, config: &TrainConfig, mut params: Vec<f64>) -> Result<TrainReport> {
    config.validate()?;
    assert_eq!(params.len(), model.num_params(), "parameter vector length mismatch");
    let started = Instant::now();
    let every = if config.checkpoint_every == 0 { problem.m_steps } else { config.checkpoint_every };
    let mut opt = OptimizerState::new(config.optimizer, config.lr, params.len());
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best = (0usize, f64::INFINITY, params.clone());
    let mut min_rho = f64::INFINITY;
    let mut mass_drift: f64 = 0.0;

    for epoch in 0..config.epochs {
        let s0 = model.eval(&params);
        let eval = problem.evaluate(&s0, every).map_err(|e| abort(epoch, &epochs, e.to_string()))?;
        let grad = model.pullback(&params, &eval.grad_s0);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(abort(epoch, &epochs, "non-finite gradient".into()));
        }
        let total = eval.breakdown.total;
        if total < best.1 {
            best = (epoch, total, params.clone());
        }
        min_rho = min_rho.min(eval.min_rho);
        mass_drift = mass_drift.max(eval.mass_drift);
        epochs.push(eval.breakdown);
        opt.step(&mut params, &grad);
    }

    let window = config.report_window;
    let tail = &epochs[epochs.len() - window..];
    let mean = |f: fn(&CostBreakdown) -> f64| tail.iter().map(f).sum::<f64>() / window as f64;
    let n = problem.n() as f64;
    let kinetic = mean(|b| b.kinetic);
    let terminal = mean(|b| b.terminal);
    let trailing = TrailingAverages {
        window,
        kinetic,
        terminal,
        total: mean(|b| b.total),
        kinetic_per_node: kinetic / n,
        terminal_per_node: terminal / n,
    };
    Ok(TrainReport {
        model: model.kind(),
        num_params: params.len(),
        seed: config.seed,
        optimizer: config.optimizer,
        warm_start_losses: Vec::new(),
        epochs,
        best_epoch: best.0,
        best_loss: best.1,
        trailing,
        min_rho,
        mass_drift,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        best_params: best.2,
        final_params: params,
    })
}

fn abort(epoch: usize, history: &[CostBreakdown], reason: String) -> Error {
    let reason = match history.last() {
        Some(b) => format!("{reason}; last finite loss {:.6e} (kinetic {:.6e}, terminal {:.6e})", b.total, b.kinetic, b.terminal),
        None => reason,
    };
    Error::TrainingAborted { epoch, reason }
}

/// Density-weighted mean coordinate.
pub fn center(graph: &Graph, density: &[f64]) -> [f64; 2] {
    let mass: f64 = density.iter().sum();
    let mut c = [0.0; 2];
    for (x, &d) in graph.coords().iter().zip(density) {
        c[0] += d * x[0];
        c[1] += d * x[1];
    }
    [c[0] / mass, c[1] / mass]
}

/// Target edge field α∇P₁ + (1−α)∇P₂ for the warm start.
///
/// P₁ is linear and decreases toward the target center, P₂ = μ₀ − μ_T.
/// Mass flows from high S to low S, so both pieces push mass from μ₀
/// toward μ_T.
pub fn warm_start_target(graph: &Graph, mu0: &[f64], mu_t: &[f64], alpha: f64) -> Vec<f64> {
    let c0 = center(graph, mu0);
    let ct = center(graph, mu_t);
    let d = [ct[0] - c0[0], ct[1] - c0[1]];
    let p: Vec<f64> = graph
        .coords()
        .iter()
        .zip(mu0.iter().zip(mu_t))
        .map(|(x, (a, b))| -alpha * (d[0] * x[0] + d[1] * x[1]) + (1.0 - alpha) * (a - b))
        .collect();
    crate::calculus::graph_gradient(&p, graph).values
}

#[derive(Debug, Clone)]
pub struct WarmStartOutcome {
    pub params: Vec<f64>,
    pub losses: Vec<f64>,
}

/// Pre-trains the model so that ∇_G S₀ matches [`warm_start_target`].
pub fn warm_start(
    graph: &Graph,
    mu0: &[f64],
    mu_t: &[f64],
    model: &Model,
    mut params: Vec<f64>,
    config: &WarmStartConfig,
) -> Result<WarmStartOutcome> {
    if !(0.0..=1.0).contains(&config.alpha) {
        return Err(Error::config("training.warmstart_alpha", "must lie in [0, 1]"));
    }
    let target = warm_start_target(graph, mu0, mu_t, config.alpha);
    let src: Arc<[usize]> = Arc::from(graph.edge_src());
    let dst: Arc<[usize]> = Arc::from(graph.edge_dst());
    let sqrt_w: Arc<[f64]> = graph.weights().iter().map(|w| w.sqrt()).collect();
    let n = graph.n() as f64;
    let m = graph.m() as f64;
    let mut opt = OptimizerState::new(Optimizer::Adam, config.lr, params.len());
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let tape = Tape::new();
        let p = tape.var(params.clone());
        let s = model.forward(&tape, p);
        let grad_s: Var = (s.gather(&src) - s.gather(&dst)).mul_const(Arc::clone(&sqrt_w));
        let diff = grad_s - tape.constant(target.clone());
        let loss = match config.loss {
            WarmStartLoss::Mse => diff.square().sum().scale(1.0 / m),
            WarmStartLoss::Alg2 => diff.square().sum().sqrt().scale(1.0 / n),
        };
        let value = loss.item();
        if !value.is_finite() {
            return Err(Error::TrainingAborted { epoch, reason: "non-finite warm-start loss".into() });
        }
        losses.push(value);
        let g = tape.backward(loss).expect("same tape").get_or_zero(p).expect("same tape");
        opt.step(&mut params, &g);
    }
    Ok(WarmStartOutcome { params, losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{ce_rhs, Quadrature};
    use crate::graph::{build_lattice, DomainShape};
    use crate::measures::{gaussian_density, DensityState};
    use crate::potentials::{PotentialSpec, TerminalKind};

    fn small() -> (Graph, DensityState, PotentialSpec) {
        let g = build_lattice(5, 5, &DomainShape::square(-3.0, 3.0)).unwrap();
        let mu0 = gaussian_density(&g, [-1.2, -1.2], 0.2).unwrap();
        let mu_t = gaussian_density(&g, [1.2, 1.2], 0.2).unwrap();
        (g, mu0, PotentialSpec::transport(mu_t, TerminalKind::L1))
    }

    #[test]
    fn gd_step_is_minus_lr_times_gradient() {
        let (g, mu0, spec) = small();
        let problem = Problem::new(&g, &mu0, &spec, 0.5, 4, Quadrature::Left).unwrap();
        let model = Model::new(ModelKind::Mlp, &g);
        let p0 = model.init_params(2);
        let eval = problem.evaluate(&model.eval(&p0), 4).unwrap();
        let grad = model.pullback(&p0, &eval.grad_s0);
        let config = TrainConfig { epochs: 1, report_window: 1, optimizer: Optimizer::Gd, lr: 1e-3, ..Default::default() };
        let report = train_from(&problem, &model, &config, p0.clone()).unwrap();
        for k in 0..p0.len() {
            assert_eq!(report.final_params[k], p0[k] - 1e-3 * grad[k]);
        }
        assert_eq!(report.epochs[0].total, eval.breakdown.total);
    }

    #[test]
    fn zero_loss_stays_put() {
        let (g, mu0, _) = small();
        let mut spec = PotentialSpec::transport(mu0.clone(), TerminalKind::L1);
        spec.lambda_k = 0.0;
        let problem = Problem::new(&g, &mu0, &spec, 0.5, 4, Quadrature::Left).unwrap();
        let config = TrainConfig { epochs: 5, report_window: 5, optimizer: Optimizer::Gd, ..Default::default() };
        let report = train_direct(&g, &problem, &config).unwrap();
        assert!(report.epochs.iter().all(|b| b.total == 0.0));
        assert!(report.final_params.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let (g, mu0, spec) = small();
        let problem = Problem::new(&g, &mu0, &spec, 0.5, 10, Quadrature::Left).unwrap();
        let model = Model::new(ModelKind::Mlp, &g);
        let config = TrainConfig { epochs: 60, report_window: 10, lr: 1e-2, seed: 7, ..Default::default() };
        let a = train(&g, &problem, &model, &config).unwrap();
        let b = train(&g, &problem, &model, &config).unwrap();
        assert_eq!(a.total_losses(), b.total_losses());
        assert_eq!(a.final_params, b.final_params);
        assert!(a.best_loss < a.epochs[0].total);
        assert_eq!(a.epochs[a.best_epoch].total, a.best_loss);
        for e in &a.epochs {
            let sum: f64 = e.components().iter().sum();
            assert!((sum - e.total).abs() <= 1e-9 * (1.0 + e.total.abs()));
        }
    }

    #[test]
    fn checkpointed_training_matches_single_tape() {
        let (g, mu0, spec) = small();
        let problem = Problem::new(&g, &mu0, &spec, 0.5, 12, Quadrature::Left).unwrap();
        let model = Model::new(ModelKind::Mlp, &g);
        let base = TrainConfig { epochs: 5, report_window: 5, seed: 1, ..Default::default() };
        let a = train(&g, &problem, &model, &base).unwrap();
        let b = train(&g, &problem, &model, &TrainConfig { checkpoint_every: 4, ..base }).unwrap();
        for (x, y) in a.final_params.iter().zip(&b.final_params) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn blowup_reports_epoch() {
        let (g, mu0, spec) = small();
        let problem = Problem::new(&g, &mu0, &spec, 50.0, 40, Quadrature::Left).unwrap();
        let model = Model::new(ModelKind::Direct, &g);
        let mut p = vec![0.0; g.n()];
        for (i, v) in p.iter_mut().enumerate() {
            *v = 40.0 * (i as f64).sin();
        }
        let config = TrainConfig { epochs: 3, report_window: 1, ..Default::default() };
        match train_from(&problem, &model, &config, p) {
            Err(Error::TrainingAborted { epoch: 0, .. }) => {}
            other => panic!("expected abort at epoch 0, got {other:?}"),
        }
    }

    #[test]
    fn warm_start_two_node_sign() {
        let g = Graph::new(vec![[0.0, 0.0], [1.0, 0.0]], vec![(0, 1, 1.0)]).unwrap();
        let mu0 = [1.0, 0.0];
        let mu_t = [0.0, 1.0];
        let model = Model::new(ModelKind::Direct, &g);
        let ws = WarmStartConfig { enabled: true, alpha: 1.0, epochs: 500, lr: 1e-2, loss: WarmStartLoss::Mse };
        let out = warm_start(&g, &mu0, &mu_t, &model, vec![0.0; 2], &ws).unwrap();
        let s = model.eval(&out.params);
        assert!(s[0] > s[1], "{s:?}");
        // One step of the continuity equation moves mass from node 0 to node 1.
        let rho = [0.9, 0.1];
        let d = ce_rhs(&rho, &s, &g);
        assert!(d[0] < 0.0 && d[1] > 0.0);
    }

    #[test]
    fn warm_start_identical_measures_is_flat() {
        let (g, mu0, _) = small();
        let target = warm_start_target(&g, mu0.as_slice(), mu0.as_slice(), 0.6);
        assert!(target.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { lr: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { report_window: 4000, ..Default::default() }.validate().is_err());
        let ws = WarmStartConfig { alpha: 1.5, ..Default::default() };
        assert!(TrainConfig { warm_start: ws, ..Default::default() }.validate().is_err());
        assert_eq!("gd".parse::<Optimizer>().unwrap(), Optimizer::Gd);
        assert!("sgd".parse::<Optimizer>().is_err());
    }
}
