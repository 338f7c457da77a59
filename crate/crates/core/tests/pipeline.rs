use ndarray::Array2;
use proptest::prelude::*;

use graphpriv::attack::{attack_node, AttackerConfig, SplitSpec};
use graphpriv::graph::{normalize, propagate, structural_bias, NormalizationKind};
use graphpriv::io::{load_graph, read_matrix, write_graph, write_matrix};
use graphpriv::leakage::{analyze, empirical_leakage};
use graphpriv::synth::{expected_bias, generate, GeneratorParams};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn graph_survives_csv_round_trip(n in 4usize..40, p in 0.05f64..0.9, q in 0.0f64..0.5, seed in any::<u64>()) {
        let g = generate(&GeneratorParams::new(n, p, q, 2, 0.7, seed).with_utility(2, 0.4)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("g");
        write_graph(&g, &prefix).unwrap();
        let h = load_graph(&prefix).unwrap();
        prop_assert_eq!(g.edges(), h.edges());
        prop_assert_eq!(g.sensitive_labels(), h.sensitive_labels());
        prop_assert_eq!(g.utility_labels(), h.utility_labels());
        prop_assert_eq!(g.features(), h.features());
    }

    #[test]
    fn matrix_round_trip_is_exact(rows in 1usize..8, cols in 1usize..5, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let m = Array2::from_shape_fn((rows, cols), |_| rng.random::<f64>() * 1e3 - 5e2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_matrix(&path, m.view(), "c").unwrap();
        prop_assert_eq!(read_matrix(&path).unwrap(), m);
    }

    #[test]
    fn closed_form_amplification_matches_threshold(
        n in 100usize..3000,
        s in 0.01f64..0.3,
        frac in 0.5f64..1.0,
        mu in 0.05f64..2.0,
    ) {
        let (p, q) = (s * frac, s * (1.0 - frac));
        let r = analyze(&GeneratorParams::new(n, p, q, 3, mu, 0)).unwrap();
        prop_assert_eq!(r.amplified, r.bias > r.threshold);
    }
}

#[test]
fn sampled_bias_tracks_expectation() {
    for &(p, q) in &[(0.08, 0.02), (0.06, 0.04), (0.05, 0.05)] {
        let params = GeneratorParams::new(2000, p, q, 2, 0.5, 11);
        let g = generate(&params).unwrap();
        let b = structural_bias(&g, g.sensitive_labels(), None).unwrap();
        let e = expected_bias(&params).unwrap();
        // |same − diff| / d has a floor of about √(2/π)/√d even when p = q
        let d = g.edge_count() as f64 * 2.0 / 2000.0;
        assert!(b >= e - 0.02 && b - e < 1.2 / d.sqrt(), "p={p} q={q}: {b} vs {e}");
    }
}

#[test]
fn propagation_amplifies_leakage_on_biased_graphs_only() {
    let measure = |p: f64, q: f64| {
        let g = generate(&GeneratorParams::new(1000, p, q, 4, 0.5, 3)).unwrap();
        let op = normalize(&g, NormalizationKind::SymmetricSelfLoop);
        let z = propagate(&op, g.features().view()).unwrap();
        let pre = empirical_leakage(g.features().view(), g.sensitive_labels()).unwrap();
        let post = empirical_leakage(z.view(), g.sensitive_labels()).unwrap();
        (pre, post)
    };
    let (pre, post) = measure(0.08, 0.02);
    assert!(post > pre, "{post} <= {pre}");
    let (pre, post) = measure(0.05, 0.05);
    assert!(post < pre, "{post} >= {pre}");
}

#[test]
fn node_attack_reads_propagated_features() {
    let g = generate(&GeneratorParams::new(600, 0.08, 0.02, 4, 0.5, 9)).unwrap();
    let z = propagate(
        &normalize(&g, NormalizationKind::SymmetricSelfLoop),
        g.features().view(),
    )
    .unwrap();
    let split = SplitSpec::with_seed(9);
    let raw = attack_node(
        g.features().view(),
        g.sensitive_labels(),
        &split,
        &AttackerConfig::default(),
    )
    .unwrap();
    let prop = attack_node(z.view(), g.sensitive_labels(), &split, &AttackerConfig::default()).unwrap();
    assert!(prop.accuracy > 0.9, "{}", prop.accuracy);
    assert!(prop.accuracy >= raw.accuracy);
}
