use graphmfg::calculus::{graph_divergence, graph_gradient, integration_by_parts_check, kinetic_energy, EdgeField};
use graphmfg::graph::{build_lattice, DomainShape, Graph};
use proptest::prelude::*;

fn lattice11() -> Graph {
    build_lattice(11, 11, &DomainShape::square(-3.0, 3.0)).unwrap()
}

fn normalized(w: Vec<f64>) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn integration_by_parts_holds(
        rho in prop::collection::vec(0.01f64..1.0, 121),
        v in prop::collection::vec(-1.0f64..1.0, 220),
        xi in prop::collection::vec(-1.0f64..1.0, 121),
    ) {
        let g = lattice11();
        prop_assert_eq!(g.m(), 220);
        let rho = normalized(rho);
        let (lhs, rhs) = integration_by_parts_check(&rho, &EdgeField { values: v }, &xi, &g);
        prop_assert!((lhs - rhs).abs() < 1e-10, "lhs {} rhs {}", lhs, rhs);
    }

    #[test]
    fn divergence_sums_to_zero(
        rho in prop::collection::vec(0.0f64..1.0, 121),
        v in prop::collection::vec(-10.0f64..10.0, 220),
    ) {
        let g = lattice11();
        let div = graph_divergence(&normalized(rho), &EdgeField { values: v }, &g);
        prop_assert!(div.iter().sum::<f64>().abs() < 1e-12 * g.n() as f64);
    }

    #[test]
    fn gradient_of_constant_vanishes(c in -100.0f64..100.0) {
        let g = lattice11();
        let grad = graph_gradient(&vec![c; g.n()], &g);
        prop_assert!(grad.values.iter().all(|&x| x == 0.0));
    }
}

#[test]
fn kinetic_energy_is_half_the_directed_pair_sum() {
    let g = lattice11();
    let n = g.n();
    let rho: Vec<f64> = normalized((0..n).map(|i| 1.0 + (i as f64 * 0.37).sin().abs()).collect());
    let s: Vec<f64> = (0..n).map(|i| (i as f64 * 0.11).cos()).collect();
    let k = kinetic_energy(&graph_gradient(&s, &g), &rho, &g);
    let mut pairs = 0.0;
    for i in 0..n {
        for j in 0..n {
            if let Some(e) = g.edge_index(i, j) {
                let w = g.weights()[e];
                pairs += 0.25 * w * (s[i] - s[j]).powi(2) * 0.5 * (rho[i] + rho[j]);
            }
        }
    }
    assert!((k - pairs).abs() < 1e-14, "{k} vs {pairs}");
}
