use approx::{assert_abs_diff_eq, assert_relative_eq};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use super::*;
use crate::graph::{Graph, NodeSet};
use crate::mixing::{GossipMatrix, StochasticKind};

fn swap_matrix() -> GossipMatrix {
    let g = Graph::from_edges(2, [(0, 1)]).unwrap();
    GossipMatrix::max_degree(&g)
}

fn triangle_matrix() -> GossipMatrix {
    let g = Graph::from_edges(3, [(0, 1), (0, 2), (1, 2)]).unwrap();
    GossipMatrix::max_degree(&g)
}

fn identity_matrix(n: usize) -> GossipMatrix {
    GossipMatrix::new(DMatrix::identity(n, n), StochasticKind::DoublyStochastic).unwrap()
}

fn random_gossip(n: usize, p: f64, seed: u64, row_stochastic: bool) -> GossipMatrix {
    let g = Graph::erdos_renyi(n, p, seed).unwrap();
    if row_stochastic {
        GossipMatrix::neighborhood_average(&g)
    } else {
        GossipMatrix::max_degree(&g)
    }
}

#[test]
fn system_spec_triples_match_threat_models() {
    let w = triangle_matrix();
    // model 1: (W, W, e_i), mask {i}
    let spec = system_spec(
        &ThreatModel::non_adaptive_secure_sum(0, 1, true),
        &w,
        4,
    )
    .unwrap();
    assert_eq!(spec.observed(), &[0]);
    assert!(spec.input_is_mixing());
    assert_eq!(spec.noise_mask(), &[0]);

    // model 2: (W, W, S(C)), mask C
    let set = NodeSet::new(vec![2, 0], 3).unwrap();
    let spec = system_spec(&ThreatModel::colluding(set, 1, true), &w, 4).unwrap();
    assert_eq!(spec.observed(), &[0, 2]);
    assert_eq!(spec.noise_mask(), &[0, 2]);
    assert!(spec.input_is_mixing());

    // model 3: (W, I, e_j), no stated observer by default
    let spec = system_spec(&ThreatModel::no_secure_sum(2, true), &w, 4).unwrap();
    assert_eq!(spec.observed(), &[2]);
    assert!(!spec.input_is_mixing());
    assert!(spec.noise_mask().is_empty());

    // model 4: (W, W, S(closed neighborhood)) — complete graph: all nodes
    let spec = system_spec(&ThreatModel::adaptive_secure_sum(0, false), &w, 4).unwrap();
    assert_eq!(spec.observed(), &[0, 1, 2]);
    assert!(spec.input_is_mixing());
}

#[test]
fn system_spec_rejects_invalid_models() {
    let w = triangle_matrix();
    assert!(system_spec(
        &ThreatModel::non_adaptive_secure_sum(1, 1, true),
        &w,
        2
    )
    .is_err());
    let set = NodeSet::new(vec![1], 3).unwrap();
    assert!(system_spec(&ThreatModel::colluding(set, 1, true), &w, 2).is_err());
    let empty = NodeSet::new(vec![], 3).unwrap();
    assert!(system_spec(&ThreatModel::colluding(empty, 1, true), &w, 2).is_err());
    assert!(system_spec(&ThreatModel::no_secure_sum(0, true), &w, 0).is_err());
    assert!(system_spec(&ThreatModel::no_secure_sum(7, true), &w, 2).is_err());
}

#[test]
fn direction_examples() {
    // model 3, any W, T=1: x = [1]
    let w = triangle_matrix();
    let spec = system_spec(&ThreatModel::no_secure_sum(1, false), &w, 1).unwrap();
    let x = build_direction(&spec);
    assert_eq!(x.len(), 1);
    assert_abs_diff_eq!(x[0], 1.0);

    // model 1 on the swap matrix, T=2: [W_01, (W^2+W)_01] = [1, 1]
    let w = swap_matrix();
    let spec = system_spec(
        &ThreatModel::non_adaptive_secure_sum(0, 1, false),
        &w,
        2,
    )
    .unwrap();
    let x = build_direction(&spec);
    assert_abs_diff_eq!(x[0], 1.0);
    assert_abs_diff_eq!(x[1], 1.0);

    // W = I, observer != target: no path, all zeros
    let w = identity_matrix(3);
    let spec = system_spec(
        &ThreatModel::non_adaptive_secure_sum(0, 2, false),
        &w,
        5,
    )
    .unwrap();
    assert_eq!(build_direction(&spec).norm(), 0.0);
}

#[test]
fn row_block_examples() {
    // model 3, T=1, stated observer mask {i}: the unit at j survives
    let w = triangle_matrix();
    let spec = system_spec(&ThreatModel::no_secure_sum(1, true), &w, 1)
        .unwrap()
        .with_stated_observer(0)
        .unwrap();
    let rows = build_rows(&spec);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].shape(), (1, 2));
    // masked columns: node 0 dropped, so columns are (1, 2)
    assert_abs_diff_eq!(rows[0][(0, 0)], 1.0);
    assert_abs_diff_eq!(rows[0][(0, 1)], 0.0);

    // model 1 swap matrix, mask {0}: R_0 = [1] after dropping column 0
    let w = swap_matrix();
    let spec = system_spec(
        &ThreatModel::non_adaptive_secure_sum(0, 1, true),
        &w,
        1,
    )
    .unwrap();
    let rows = build_rows(&spec);
    assert_eq!(rows[0].shape(), (1, 1));
    assert_abs_diff_eq!(rows[0][(0, 0)], 1.0);

    // model 4 on the complete 3-graph, j=0: R_0 = S(N̄_0)·W = W itself
    let w = triangle_matrix();
    let spec = system_spec(&ThreatModel::adaptive_secure_sum(0, false), &w, 1).unwrap();
    let rows = build_rows(&spec);
    assert_eq!(rows[0].shape(), (3, 3));
    assert_relative_eq!(rows[0].clone(), w.matrix().clone(), epsilon = 1e-15);
}

#[test]
fn h_layout_is_block_lower_triangular_toeplitz() {
    let w = triangle_matrix();
    let spec = system_spec(
        &ThreatModel::non_adaptive_secure_sum(0, 1, true),
        &w,
        3,
    )
    .unwrap();
    let rows = build_rows(&spec);
    let h = materialize_h(&spec);
    let (m, nm) = (spec.observed_dim(), spec.masked_dim());
    assert_eq!(h.shape(), (3 * m, 3 * nm));
    for s in 0..3 {
        for t in 0..3 {
            let block = h.view((s * m, t * nm), (m, nm));
            if s >= t {
                assert_relative_eq!(
                    DMatrix::from(block),
                    rows[s - t].clone(),
                    epsilon = 1e-15
                );
            } else {
                assert_eq!(block.iter().map(|v| v.abs()).sum::<f64>(), 0.0);
            }
        }
    }
}

#[test]
fn direction_is_h_applied_to_stacked_target_columns() {
    // x̃ = H · (1_T ⊗ e_j) for the masked operator: exercised across models.
    let w = random_gossip(7, 0.6, 5, false);
    for model in [
        ThreatModel::non_adaptive_secure_sum(2, 4, true),
        ThreatModel::colluding(NodeSet::new(vec![0, 3], 7).unwrap(), 4, true),
        ThreatModel::no_secure_sum(4, false),
        ThreatModel::adaptive_secure_sum(4, false),
    ] {
        let spec = system_spec(&model, &w, 4).unwrap();
        let h = materialize_h(&spec);
        let x = build_direction(&spec);
        let nm = spec.masked_dim();
        let jm = spec.masked_target();
        let mut b = DVector::<f64>::zeros(nm * 4);
        for t in 0..4 {
            b[t * nm + jm] = 1.0;
        }
        assert_relative_eq!(&h * b, x, epsilon = 1e-12);
    }
}

#[test]
fn sensitivity_trivial_values() {
    // model 3, T=1, correction on: Δ = 1 regardless of the observer mask
    let w = triangle_matrix();
    let r = sensitivity(
        &ThreatModel::no_secure_sum(1, true),
        &w,
        1,
        &EngineConfig::default(),
    )
    .unwrap();
    assert_abs_diff_eq!(r.delta, 1.0, epsilon = 1e-12);
    assert!(r.corrected_observer.is_some());

    // model 1 on the swap matrix, T=1, correction on: H = [1], x = [1]
    let w = swap_matrix();
    let r = sensitivity(
        &ThreatModel::non_adaptive_secure_sum(0, 1, true),
        &w,
        1,
        &EngineConfig::default(),
    )
    .unwrap();
    assert_abs_diff_eq!(r.delta, 1.0, epsilon = 1e-12);
    assert_eq!(r.rank, 1);

    // hand-derived swap at T=2 (correction on): H = I_2, x = [1,1], Δ² = 2
    let r = sensitivity(
        &ThreatModel::non_adaptive_secure_sum(0, 1, true),
        &w,
        2,
        &EngineConfig::default(),
    )
    .unwrap();
    assert_abs_diff_eq!(r.delta_sq, 2.0, epsilon = 1e-12);
}

#[test]
fn zero_direction_gives_zero_delta() {
    let w = identity_matrix(4);
    let r = sensitivity(
        &ThreatModel::non_adaptive_secure_sum(0, 3, false),
        &w,
        6,
        &EngineConfig::default(),
    )
    .unwrap();
    assert_eq!(r.delta, 0.0);
    assert_eq!(r.residual, 0.0);
}

#[test]
fn delta_and_delta_sq_agree() {
    let w = random_gossip(9, 0.4, 11, false);
    let r = sensitivity(
        &ThreatModel::adaptive_secure_sum(3, true),
        &w,
        7,
        &EngineConfig::default(),
    )
    .unwrap();
    assert_relative_eq!(r.delta * r.delta, r.delta_sq, epsilon = 1e-12);
}

#[test]
fn monotone_in_rounds() {
    let w = random_gossip(10, 0.4, 21, false);
    for model in [
        ThreatModel::non_adaptive_secure_sum(0, 5, true),
        ThreatModel::no_secure_sum(5, true),
        ThreatModel::adaptive_secure_sum(5, true),
    ] {
        let mut prev = 0.0;
        for t in 1..=12 {
            let r = sensitivity(&model, &w, t, &EngineConfig::default()).unwrap();
            assert!(
                r.delta >= prev - 1e-9,
                "delta decreased in T for {model:?}: {prev} -> {}",
                r.delta
            );
            prev = r.delta;
        }
    }
}

#[test]
fn no_secure_sum_delta_sq_bounded_by_rounds() {
    for seed in 0..5u64 {
        let w = random_gossip(8, 0.5, seed, seed % 2 == 0);
        for t in [1usize, 3, 8, 17] {
            let r = sensitivity(
                &ThreatModel::no_secure_sum(2, true),
                &w,
                t,
                &EngineConfig::default(),
            )
            .unwrap();
            assert!(
                r.delta_sq <= t as f64 + 1e-9,
                "Δ²={} exceeds T={t}",
                r.delta_sq
            );
        }
    }
}

#[test]
fn scale_covariance_of_quadratic() {
    let w = random_gossip(6, 0.7, 2, false);
    let spec = system_spec(
        &ThreatModel::non_adaptive_secure_sum(1, 4, true),
        &w,
        5,
    )
    .unwrap();
    let blocks = engine::row_blocks_transposed(
        spec.w,
        spec.observed(),
        spec.input_is_mixing(),
        spec.noise_mask(),
        5,
    );
    let g = engine::gram_from_blocks(&blocks, 5);
    let x = build_direction(&spec);
    let base = engine::gram_quadratic(&g, &x, &EngineConfig::default()).unwrap();
    let scaled = engine::gram_quadratic(&g, &(3.5 * &x), &EngineConfig::default()).unwrap();
    assert_relative_eq!(scaled.delta_sq, 3.5 * 3.5 * base.delta_sq, epsilon = 1e-10);
}

#[test]
fn knowledge_correction_never_decreases_delta() {
    for seed in 0..6u64 {
        let w = random_gossip(7, 0.5, seed, false);
        let t = 4 + (seed as usize % 3);
        let pairs = [
            (
                ThreatModel::non_adaptive_secure_sum(0, 3, false),
                ThreatModel::non_adaptive_secure_sum(0, 3, true),
            ),
            (
                ThreatModel::no_secure_sum(3, false),
                ThreatModel::no_secure_sum(3, true),
            ),
            (
                ThreatModel::adaptive_secure_sum(3, false),
                ThreatModel::adaptive_secure_sum(3, true),
            ),
        ];
        for (off, on) in pairs {
            let d_off = sensitivity(&off, &w, t, &EngineConfig::default())
                .unwrap()
                .delta;
            let d_on = sensitivity(&on, &w, t, &EngineConfig::default())
                .unwrap()
                .delta;
            assert!(
                d_on >= d_off - 1e-12,
                "correction shrank delta: {d_on} < {d_off} (seed {seed})"
            );
        }
    }
}

fn random_model(rng: &mut ChaCha12Rng, n: usize) -> ThreatModel {
    let target = rng.random_range(0..n);
    let correction = rng.random_bool(0.5);
    match rng.random_range(0..4) {
        0 => {
            let observer = loop {
                let o = rng.random_range(0..n);
                if o != target {
                    break o;
                }
            };
            ThreatModel::non_adaptive_secure_sum(observer, target, correction)
        }
        1 => {
            let mut set = Vec::new();
            for i in 0..n {
                if i != target && rng.random_bool(0.4) {
                    set.push(i);
                }
            }
            if set.is_empty() {
                set.push((target + 1) % n);
            }
            ThreatModel::colluding(NodeSet::new(set, n).unwrap(), target, correction)
        }
        2 => ThreatModel::no_secure_sum(target, correction),
        _ => ThreatModel::adaptive_secure_sum(target, correction),
    }
}

#[test]
fn gram_and_dense_routes_agree_on_random_instances() {
    let cfg = EngineConfig::default();
    let mut rng = ChaCha12Rng::seed_from_u64(404);
    for _ in 0..25 {
        let n = rng.random_range(3..10);
        let p = rng.random_range(0.3..0.95);
        let w = random_gossip(n, p, rng.random(), rng.random_bool(0.5));
        let model = random_model(&mut rng, n);
        let t = rng.random_range(1..=12);
        let a = sensitivity(&model, &w, t, &cfg).unwrap();
        let b = sensitivity_dense(&model, &w, t, &cfg).unwrap();
        assert!(
            (a.delta - b.delta).abs() <= 1e-8 * a.delta.max(1.0),
            "route mismatch: gram={} dense={} ({model:?}, n={n}, T={t})",
            a.delta,
            b.delta
        );
    }
}

#[test]
fn dense_route_respects_size_limit() {
    let w = random_gossip(10, 0.5, 1, false);
    let cfg = EngineConfig {
        dense_limit: 10,
        ..EngineConfig::default()
    };
    let err = sensitivity_dense(
        &ThreatModel::no_secure_sum(0, false),
        &w,
        4,
        &cfg,
    )
    .unwrap_err();
    assert!(matches!(err, NetDpError::Resource(_)));
}

#[test]
fn time_varying_constant_sequence_reduces_to_time_invariant() {
    let cfg = EngineConfig::default();
    let w = random_gossip(8, 0.5, 9, false);
    for model in [
        ThreatModel::non_adaptive_secure_sum(1, 5, true),
        ThreatModel::no_secure_sum(5, true),
        ThreatModel::adaptive_secure_sum(5, true),
    ] {
        for t in [1usize, 2, 6] {
            let seq: Vec<GossipMatrix> = (0..t).map(|_| w.clone()).collect();
            let tv = sensitivity_time_varying(&model, &seq, &cfg).unwrap();
            let ti = sensitivity(&model, &w, t, &cfg).unwrap();
            assert_relative_eq!(tv.delta, ti.delta, epsilon = 1e-12, max_relative = 1e-12);
        }
    }
}

#[test]
fn time_varying_alternating_matches_dense_oracle() {
    // alternating two distinct doubly stochastic matrices on a 4-cycle
    let cycle = Graph::from_edges(4, [(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap();
    let w1 = GossipMatrix::max_degree(&cycle);
    let w2 = GossipMatrix::neighborhood_average(&cycle);
    let seq = vec![w1.clone(), w2.clone(), w1.clone(), w2.clone()];
    let model = ThreatModel::non_adaptive_secure_sum(0, 2, true);
    let cfg = EngineConfig::default();
    let tv = sensitivity_time_varying(&model, &seq, &cfg).unwrap();
    let (h, x) = materialize_h_time_varying(&model, &seq).unwrap();
    let dense = engine::dense_svd_norm(&h, &x, &cfg).unwrap();
    assert_relative_eq!(tv.delta_sq, dense.delta_sq, epsilon = 1e-10, max_relative = 1e-8);
    // the order of the sequence matters: reversed order gives a different H
    let seq_rev = vec![w2.clone(), w1.clone(), w2, w1];
    let tv_rev = sensitivity_time_varying(&model, &seq_rev, &cfg).unwrap();
    let (h_rev, x_rev) = materialize_h_time_varying(&model, &seq_rev).unwrap();
    let dense_rev = engine::dense_svd_norm(&h_rev, &x_rev, &cfg).unwrap();
    assert_relative_eq!(
        tv_rev.delta_sq,
        dense_rev.delta_sq,
        epsilon = 1e-10,
        max_relative = 1e-8
    );
}

#[test]
fn time_varying_rejects_bad_input() {
    let w = random_gossip(4, 0.6, 1, false);
    let model = ThreatModel::no_secure_sum(0, false);
    assert!(sensitivity_time_varying(&model, &[], &EngineConfig::default()).is_err());
    let other = random_gossip(5, 0.6, 1, false);
    assert!(
        sensitivity_time_varying(&model, &[w, other], &EngineConfig::default()).is_err()
    );
}

#[test]
fn pairwise_complete_graph_is_symmetric_constant() {
    let g = Graph::erdos_renyi(5, 1.0, 0).unwrap();
    let w = GossipMatrix::max_degree(&g);
    let cfg = EngineConfig::default();
    let table = pairwise_sensitivities(ModelFamily::NonAdaptiveSecureSum, &w, 4, true, &cfg)
        .unwrap();
    let reference = table.delta[(0, 1)];
    for i in 0..5 {
        for j in 0..5 {
            if i == j {
                assert!(table.delta[(i, j)].is_nan());
            } else {
                assert_relative_eq!(table.delta[(i, j)], reference, epsilon = 1e-9);
            }
        }
    }
}

#[test]
fn pairwise_swap_matrix_t1() {
    let w = swap_matrix();
    let cfg = EngineConfig::default();
    let table = pairwise_sensitivities(ModelFamily::NonAdaptiveSecureSum, &w, 1, true, &cfg)
        .unwrap();
    assert_abs_diff_eq!(table.delta[(0, 1)], 1.0, epsilon = 1e-12);
    assert_abs_diff_eq!(table.delta[(1, 0)], 1.0, epsilon = 1e-12);
    assert!(table.delta[(0, 0)].is_nan() && table.delta[(1, 1)].is_nan());
}

#[test]
fn pairwise_observer_independent_families_are_constant_per_target() {
    let w = random_gossip(6, 0.6, 33, true);
    let cfg = EngineConfig::default();
    for family in [ModelFamily::NoSecureSum, ModelFamily::AdaptiveSecureSum] {
        let table = pairwise_sensitivities(family, &w, 3, true, &cfg).unwrap();
        for j in 0..6 {
            let vals: Vec<f64> = (0..6)
                .filter(|&i| i != j)
                .map(|i| table.delta[(i, j)])
                .collect();
            for v in &vals {
                assert_relative_eq!(*v, vals[0], epsilon = 1e-12);
            }
        }
    }
}

#[test]
fn pairwise_matches_single_pair_computation() {
    let w = random_gossip(7, 0.5, 8, false);
    let cfg = EngineConfig::default();
    let table = pairwise_sensitivities(ModelFamily::NonAdaptiveSecureSum, &w, 5, true, &cfg)
        .unwrap();
    for (i, j) in [(0usize, 3usize), (4, 1), (6, 2)] {
        let single = sensitivity(
            &ThreatModel::non_adaptive_secure_sum(i, j, true),
            &w,
            5,
            &cfg,
        )
        .unwrap();
        assert_relative_eq!(table.delta[(i, j)], single.delta, epsilon = 1e-10);
    }
    let table3 = pairwise_sensitivities(ModelFamily::NoSecureSum, &w, 5, true, &cfg).unwrap();
    let single3 = sensitivity(&ThreatModel::no_secure_sum(2, true), &w, 5, &cfg).unwrap();
    assert_relative_eq!(table3.delta[(0, 2)], single3.delta, epsilon = 1e-12);
}

#[test]
fn scaled_sensitivity_approaches_centralized_limit() {
    // Reduced-scale scaled-sensitivity sweep, n=40. The neighbor pair
    // starts above 1/n and decreases toward it; the non-adjacent pair rises
    // toward 1/n from below (its first rounds reveal nothing about a
    // non-neighbor under secure summation). Both settle near 1/n = 0.025.
    let g = Graph::erdos_renyi(40, 0.3, 17).unwrap();
    assert!(g.is_connected());
    let w = GossipMatrix::max_degree(&g);
    let cfg = EngineConfig::default();
    let pairs = (0..40).flat_map(|a| ((a + 1)..40).map(move |b| (a, b)));
    let neighbor = pairs.clone().find(|&(a, b)| g.has_edge(a, b)).unwrap();
    let far = pairs.clone().find(|&(a, b)| !g.has_edge(a, b)).unwrap();
    let limit = 1.0 / 40.0;

    let curve = |pair: (usize, usize)| -> Vec<f64> {
        let model = ThreatModel::non_adaptive_secure_sum(pair.0, pair.1, true);
        [20usize, 60, 120, 200]
            .iter()
            .map(|&t| sensitivity(&model, &w, t, &cfg).unwrap().delta_sq / t as f64)
            .collect()
    };

    let down = curve(neighbor);
    for w2 in down.windows(2) {
        assert!(w2[1] <= w2[0] + 1e-9, "neighbor curve must decrease: {down:?}");
    }
    assert!(down[3] >= limit - 1e-9 && down[3] <= 2.0 * limit, "{down:?}");

    let up = curve(far);
    for w2 in up.windows(2) {
        assert!(w2[1] >= w2[0] - 1e-9, "non-adjacent curve must rise: {up:?}");
    }
    assert!(up[3] <= limit + 1e-9 && up[3] >= 0.9 * limit, "{up:?}");
}
