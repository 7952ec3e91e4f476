use graphmfg::dynamics::{ce_rhs, hj_rhs, integrate, pathwise_cost, Quadrature};
use graphmfg::graph::{build_lattice, build_random_inhomogeneous, DomainShape, Graph};
use graphmfg::measures::{gaussian_density, ValueState};
use graphmfg::models::{Model, ModelKind};
use graphmfg::potentials::{running_cost, Kernel, KernelMatrix, PotentialSpec, TerminalKind};
use graphmfg::training::{train, TrainConfig};
use graphmfg::unroll::Problem;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn naive_ce(rho: &[f64], s: &[f64], g: &Graph) -> Vec<f64> {
    let n = g.n();
    let mut out = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            if let Some(k) = g.edge_index(i, j) {
                let w = g.weights()[k];
                out[i] += w * (s[j] - s[i]) * 0.5 * (rho[i] + rho[j]);
            }
        }
    }
    out
}

fn naive_hj(s: &[f64], f: &[f64], g: &Graph) -> Vec<f64> {
    let n = g.n();
    let mut out = vec![0.0; n];
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..n {
            if let Some(k) = g.edge_index(i, j) {
                acc += 0.5 * g.weights()[k] * (s[i] - s[j]).powi(2) * 0.5;
            }
        }
        out[i] = acc - f[i];
    }
    out
}

fn weighted_random_graph() -> Graph {
    let base = build_random_inhomogeneous(60, 2, 6, &DomainShape::disk(1.0), 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let edges: Vec<(usize, usize, f64)> = base.edges().iter().map(|e| (e.i, e.j, rng.gen_range(0.2..2.0))).collect();
    Graph::new(base.coords().to_vec(), edges).unwrap()
}

#[test]
fn rhs_match_naive_double_loop() {
    let g = weighted_random_graph();
    let n = g.n();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut spec = PotentialSpec::transport(gaussian_density(&g, [0.0, 0.0], 0.3).unwrap(), TerminalKind::L1);
    spec.lambda_w = 0.5;
    spec.interaction = Some(KernelMatrix::build(&Kernel::Gaussian, &g).unwrap());
    spec.lambda_b = 0.01;
    for _ in 0..20 {
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
        let total: f64 = w.iter().sum();
        let rho: Vec<f64> = w.iter().map(|x| x / total).collect();
        let s: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let f = running_cost(&rho, &spec, &g).f;
        for (a, b) in ce_rhs(&rho, &s, &g).iter().zip(naive_ce(&rho, &s, &g)) {
            assert!((a - b).abs() < 1e-12, "ce {a} vs {b}");
        }
        for (a, b) in hj_rhs(&rho, &s, &f, &g).iter().zip(naive_hj(&s, &f, &g)) {
            assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()), "hj {a} vs {b}");
        }
    }
}

fn scenario11() -> (Graph, graphmfg::measures::DensityState, PotentialSpec) {
    let g = build_lattice(11, 11, &DomainShape::square(-3.0, 3.0)).unwrap();
    let mu0 = gaussian_density(&g, [-1.2, -1.2], 0.2).unwrap();
    let mu_t = gaussian_density(&g, [1.2, 1.2], 0.2).unwrap();
    (g, mu0, PotentialSpec::transport(mu_t, TerminalKind::L1))
}

#[test]
fn mass_conserved_untrained_up_to_400_steps() {
    let (g, mu0, spec) = scenario11();
    let model = Model::new(ModelKind::Mlp, &g);
    for seed in 0..5 {
        let s0 = model.eval(&model.init_params_with_gain(seed, 0.1));
        let traj = integrate(&ValueState::new(s0).unwrap(), &mu0, &spec, &g, 0.05, 400).unwrap();
        for (m, rho) in traj.rho.iter().enumerate() {
            let drift = (rho.iter().sum::<f64>() - 1.0).abs();
            assert!(drift < 1e-9, "seed {seed} step {m}: drift {drift:e}");
        }
    }
}

#[test]
fn mass_conserved_after_training_up_to_400_steps() {
    let (g, mu0, spec) = scenario11();
    let problem = Problem::new(&g, &mu0, &spec, 0.05, 400, Quadrature::Left).unwrap();
    let model = Model::new(ModelKind::Mlp, &g);
    let config = TrainConfig { epochs: 20, seed: 1, report_window: 5, init_output_gain: 0.1, ..TrainConfig::default() };
    let report = train(&g, &problem, &model, &config).unwrap();
    assert!(report.mass_drift < 1e-9, "drift over training {:e}", report.mass_drift);
    let s0 = model.eval(&report.final_params);
    let traj = integrate(&ValueState::new(s0).unwrap(), &mu0, &spec, &g, 0.05, 400).unwrap();
    assert!(traj.mass_drift() < 1e-9);
}

#[test]
fn shift_invariance() {
    let (g, mu0, spec) = scenario11();
    let s0: Vec<f64> = g.coords().iter().map(|p| 0.05 * (p[0] - p[1])).collect();
    let shifted: Vec<f64> = s0.iter().map(|s| s + 3.25).collect();
    let a = integrate(&ValueState::new(s0).unwrap(), &mu0, &spec, &g, 0.1, 50).unwrap();
    let b = integrate(&ValueState::new(shifted).unwrap(), &mu0, &spec, &g, 0.1, 50).unwrap();
    for m in 0..=50 {
        for i in 0..g.n() {
            assert!((a.rho[m][i] - b.rho[m][i]).abs() < 1e-12);
            assert!((a.s[m][i] + 3.25 - b.s[m][i]).abs() < 1e-9);
        }
    }
}

#[test]
fn euler_cost_converges_at_first_order() {
    let (g, mu0, spec) = scenario11();
    let s0: Vec<f64> = g.coords().iter().map(|p| -0.02 * (p[0] + p[1])).collect();
    let cost = |m: usize| {
        let dt = 4.0 / m as f64;
        let traj = integrate(&ValueState::new(s0.clone()).unwrap(), &mu0, &spec, &g, dt, m).unwrap();
        pathwise_cost(&traj, &spec, Quadrature::Left).kinetic
    };
    let (c1, c2, c4) = (cost(100), cost(200), cost(400));
    let ratio = (c1 - c2) / (c2 - c4);
    assert!((ratio - 2.0).abs() < 0.3, "ratio {ratio}");
}

#[test]
fn stationary_trajectory_at_target_costs_nothing() {
    let (g, _, spec) = scenario11();
    let mu_t = spec.target.clone();
    let traj = integrate(&ValueState::zeros(g.n()), &mu_t, &spec, &g, 0.5, 20).unwrap();
    let c = pathwise_cost(&traj, &spec, Quadrature::Left);
    assert_eq!(c.total, 0.0);
}
