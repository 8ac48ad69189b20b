use hagmn_core::hypergraph::{build_assoc, build_individual, AssocConfig, AssocGraph};
use hagmn_core::net::{neighborhood_attention, GraphState, ModelConfig, ModelParams};
use hagmn_core::synth::{extract_features, generate_tree, ArteryClass, GeneratorConfig, LabeledTree, SegmentNode};
use hagmn_core::tensor::{DenseMatrix, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ArteryClass::*;

fn tree(parents: &[Option<usize>], classes: &[ArteryClass], d: usize, rng: &mut ChaCha8Rng) -> LabeledTree {
    LabeledTree {
        name: "t".into(),
        view: "CRA".into(),
        site: "s".into(),
        nodes: parents
            .iter()
            .zip(classes)
            .enumerate()
            .map(|(id, (&parent, &class))| SegmentNode {
                id,
                class,
                parent,
                polyline: vec![[id as f64, 0.0], [id as f64, 5.0]],
                features: (0..d).map(|_| rng.gen_range(0.0..1.0)).collect(),
            })
            .collect(),
    }
}

fn three_by_four(d: usize, seed: u64) -> AssocGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t1 = tree(&[None, Some(0), Some(0)], &[Lma, Lad, Lcx], d, &mut rng);
    let t2 = tree(&[None, Some(0), Some(0), Some(1)], &[Lma, Lad, Lcx, D], d, &mut rng);
    build_assoc(&build_individual(&t1).unwrap(), &build_individual(&t2).unwrap(), AssocConfig::default()).unwrap()
}

fn generated_pair(s1: u64, s2: u64, d: usize) -> (LabeledTree, LabeledTree) {
    let mut t1 = generate_tree(s1, &GeneratorConfig::default()).unwrap();
    let mut t2 = generate_tree(s2, &GeneratorConfig::default()).unwrap();
    extract_features(&mut t1, d).unwrap();
    extract_features(&mut t2, d).unwrap();
    if t1.len() > t2.len() {
        (t2, t1)
    } else {
        (t1, t2)
    }
}

fn assoc(t1: &LabeledTree, t2: &LabeledTree) -> AssocGraph {
    build_assoc(&build_individual(t1).unwrap(), &build_individual(t2).unwrap(), AssocConfig::default()).unwrap()
}

/// Moves every weight and bias off its initial value so no ReLU sits exactly on its kink.
fn jitter(params: &mut ModelParams, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = params.store().ids().collect();
    for id in ids {
        for v in params.store_mut().get_mut(id).data_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
    }
}

fn loss_and_grads(params: &ModelParams, h: &AssocGraph, target: &DenseMatrix) -> (f64, Vec<DenseMatrix>) {
    let mut tape = Tape::new();
    let out = params.forward(&mut tape, h).unwrap();
    let both = tape.concat_cols(out.match_prob, out.confidence).unwrap();
    let loss = tape.squared_error_sum(both, target).unwrap();
    let value = tape.value(loss).unwrap().scalar_value().unwrap();
    let grads = tape.backward(loss, params.store()).unwrap();
    let per_param = params.store().ids().map(|id| grads.param(id).clone()).collect();
    (value, per_param)
}

#[test]
fn full_pass_gradient_matches_finite_differences() {
    let h = three_by_four(8, 1);
    let cfg = ModelConfig {
        feature_dim: 8,
        hidden: 8,
        rounds: 1,
        ..ModelConfig::default()
    };
    let mut params = ModelParams::new(cfg).unwrap();
    jitter(&mut params, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let target = DenseMatrix::from_vec(12, 2, (0..24).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
    let (_, analytic) = loss_and_grads(&params, &h, &target);
    let eps = 1e-5;
    let ids: Vec<_> = params.store().ids().collect();
    let mut checked = 0;
    for (k, &id) in ids.iter().enumerate() {
        for e in 0..params.store().get(id).len() {
            let orig = params.store().get(id).data()[e];
            params.store_mut().get_mut(id).data_mut()[e] = orig + eps;
            let plus = loss_and_grads(&params, &h, &target).0;
            params.store_mut().get_mut(id).data_mut()[e] = orig - eps;
            let minus = loss_and_grads(&params, &h, &target).0;
            params.store_mut().get_mut(id).data_mut()[e] = orig;
            let fd = (plus - minus) / (2.0 * eps);
            let a = analytic[k].data()[e];
            let err = (a - fd).abs() / a.abs().max(1.0);
            assert!(err < 1e-4, "{}[{e}]: analytic {a} vs fd {fd}", params.store().name(id));
            checked += 1;
        }
    }
    assert_eq!(checked, params.store().scalar_count());
}

#[test]
fn equal_keys_give_uniform_weights() {
    let mut tape = Tape::new();
    let q = tape.constant(DenseMatrix::from_rows(&[[0.4, -1.0]]).unwrap()).unwrap();
    let k = tape.constant(DenseMatrix::from_rows(&[[0.5, 0.5], [0.5, 0.5], [0.5, 0.5]]).unwrap()).unwrap();
    let v = tape.constant(DenseMatrix::from_rows(&[[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]]).unwrap()).unwrap();
    let att = neighborhood_attention(&mut tape, q, k, v, &[0, 1, 2], &[0, 3], 1, false).unwrap();
    for w in tape.value(att.weights).unwrap().data() {
        assert!((w - 1.0 / 3.0).abs() < 1e-15);
    }
    let out = tape.value(att.output).unwrap().data();
    assert!((out[0] - 1.0).abs() < 1e-15 && (out[1] - 2.0).abs() < 1e-15);
}

#[test]
fn attention_matches_hand_computation() {
    // One query, three neighbours, 2-dim features.
    let (q, keys, vals) = ([1.0, 2.0], [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]], [[3.0, 0.0], [0.0, 3.0], [1.0, 1.0]]);
    let mut tape = Tape::new();
    let qv = tape.constant(DenseMatrix::from_rows(&[q]).unwrap()).unwrap();
    let kv = tape.constant(DenseMatrix::from_rows(&keys).unwrap()).unwrap();
    let vv = tape.constant(DenseMatrix::from_rows(&vals).unwrap()).unwrap();
    let att = neighborhood_attention(&mut tape, qv, kv, vv, &[0, 1, 2], &[0, 3], 1, false).unwrap();
    let scores: Vec<f64> = keys.iter().map(|k| (q[0] * k[0] + q[1] * k[1]) / 2f64.sqrt()).collect();
    let z: f64 = scores.iter().map(|s| s.exp()).sum();
    let w: Vec<f64> = scores.iter().map(|s| s.exp() / z).collect();
    let expected = [
        w[0] * 3.0 + w[2] * 1.0,
        w[1] * 3.0 + w[2] * 1.0,
    ];
    let got = tape.value(att.output).unwrap().data();
    assert!((got[0] - expected[0]).abs() < 1e-12 && (got[1] - expected[1]).abs() < 1e-12);
    let weights = tape.value(att.weights).unwrap().data();
    assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);

    // Two-neighbour segment next to a one-neighbour segment and an empty one.
    let mut tape = Tape::new();
    let qv = tape.constant(DenseMatrix::from_rows(&[[1.0, 0.3], [0.5, 0.5], [2.0, 2.0]]).unwrap()).unwrap();
    let kv = tape.constant(DenseMatrix::from_rows(&keys).unwrap()).unwrap();
    let vv = tape.constant(DenseMatrix::from_rows(&vals).unwrap()).unwrap();
    let att = neighborhood_attention(&mut tape, qv, kv, vv, &[0, 2, 1], &[0, 2, 3, 3], 1, false).unwrap();
    let w = tape.value(att.weights).unwrap().data().to_vec();
    // Query [1, 0.3] scores 1/√2 against key 0 and 1.3/√2 against key 2.
    let (s0, s2) = (1.0 / 2f64.sqrt(), 1.3 / 2f64.sqrt());
    let w0 = s0.exp() / (s0.exp() + s2.exp());
    assert!((w[0] - w0).abs() < 1e-12 && (w[1] - (1.0 - w0)).abs() < 1e-12);
    assert_eq!(w[2], 1.0);
    let out = tape.value(att.output).unwrap();
    assert_eq!(out.row(2), &[0.0, 0.0]);
    assert_eq!(out.row(1), &[0.0, 3.0]);
}

#[test]
fn literal_attention_gates_the_mean_value() {
    let mut tape = Tape::new();
    let q = tape.constant(DenseMatrix::from_rows(&[[1.0, 1.0]]).unwrap()).unwrap();
    let k = tape.constant(DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap()).unwrap();
    let v = tape.constant(DenseMatrix::from_rows(&[[2.0, 0.0], [0.0, 4.0]]).unwrap()).unwrap();
    let att = neighborhood_attention(&mut tape, q, k, v, &[0, 1], &[0, 2], 1, true).unwrap();
    let gate = 1.0 / (1.0 + (-(1.0 / 2f64.sqrt())).exp());
    let out = tape.value(att.output).unwrap().data();
    assert!((out[0] - gate * 1.0).abs() < 1e-12 && (out[1] - gate * 2.0).abs() < 1e-12);
}

/// Sets an MLP of depth 2 named `name` to `x ↦ relu(x·W0)·I` where W0 selects
/// the trailing `hidden` columns of a `2·hidden` wide input.
fn select_second_half(params: &mut ModelParams, name: &str, hidden: usize) {
    let mut w0 = DenseMatrix::zeros(2 * hidden, hidden);
    for k in 0..hidden {
        w0.set(hidden + k, k, 1.0);
    }
    let store = params.store_mut();
    store.assign(&format!("{name}.0.w"), w0).unwrap();
    store.assign(&format!("{name}.0.b"), DenseMatrix::zeros(1, hidden)).unwrap();
    store.assign(&format!("{name}.1.w"), DenseMatrix::identity(hidden)).unwrap();
    store.assign(&format!("{name}.1.b"), DenseMatrix::zeros(1, hidden)).unwrap();
}

#[test]
fn row_and_column_updates_use_vertex_means() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let t = tree(&[None, Some(0)], &[Lma, Lad], 2, &mut rng);
    let g = build_individual(&t).unwrap();
    let h = build_assoc(&g, &g, AssocConfig::default()).unwrap();
    let mut params = ModelParams::new(ModelConfig {
        feature_dim: 2,
        hidden: 2,
        rounds: 1,
        ..ModelConfig::default()
    })
    .unwrap();
    select_second_half(&mut params, "row_update", 2);
    select_second_half(&mut params, "col_update", 2);
    let mut tape = Tape::new();
    let state = params.embed(&mut tape, &h).unwrap();
    let vertices = tape
        .constant(DenseMatrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0], [7.0, 9.0]]).unwrap())
        .unwrap();
    let (rows, cols) = params.rowcol_step(&mut tape, &h, vertices, &state, 0).unwrap();
    assert_eq!(tape.value(rows).unwrap().data(), &[2.0, 3.0, 6.0, 7.5]);
    assert_eq!(tape.value(cols).unwrap().data(), &[3.0, 4.0, 5.0, 6.5]);

    let same = tape.constant(DenseMatrix::filled(4, 2, 0.25)).unwrap();
    let (rows, cols) = params.rowcol_step(&mut tape, &h, same, &state, 0).unwrap();
    assert!(tape.value(rows).unwrap().data().iter().all(|v| *v == 0.25));
    assert!(tape.value(cols).unwrap().data().iter().all(|v| *v == 0.25));
}

#[test]
fn single_row_column_mean_is_the_vertex() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let t1 = tree(&[None], &[Lma], 2, &mut rng);
    let t2 = tree(&[None, Some(0), Some(0)], &[Lma, Lad, Lcx], 2, &mut rng);
    let h = build_assoc(&build_individual(&t1).unwrap(), &build_individual(&t2).unwrap(), AssocConfig::default()).unwrap();
    let mut params = ModelParams::new(ModelConfig {
        feature_dim: 2,
        hidden: 2,
        rounds: 1,
        ..ModelConfig::default()
    })
    .unwrap();
    select_second_half(&mut params, "col_update", 2);
    let mut tape = Tape::new();
    let state = params.embed(&mut tape, &h).unwrap();
    let v = DenseMatrix::from_rows(&[[0.5, 1.0], [2.0, 0.25], [3.0, 3.5]]).unwrap();
    let vertices = tape.constant(v.clone()).unwrap();
    let (_, cols) = params.rowcol_step(&mut tape, &h, vertices, &state, 0).unwrap();
    assert_eq!(tape.value(cols).unwrap(), &v);
}

#[test]
fn zero_weights_embed_to_zero_and_constraints_embed_identically() {
    let h = three_by_four(4, 5);
    let mut params = ModelParams::new(ModelConfig {
        feature_dim: 4,
        hidden: 6,
        ..ModelConfig::default()
    })
    .unwrap();
    jitter(&mut params, 8);
    let mut tape = Tape::new();
    let s = params.embed(&mut tape, &h).unwrap();
    let rows = tape.value(s.rows).unwrap();
    assert!((1..rows.rows()).all(|r| rows.row(r) == rows.row(0)));
    let cols = tape.value(s.cols).unwrap();
    assert!((1..cols.rows()).all(|r| cols.row(r) == cols.row(0)));

    let ids: Vec<_> = params.store().ids().collect();
    for id in ids {
        if params.store().name(id).contains("_embed.") {
            let shape = params.store().get(id).shape();
            *params.store_mut().get_mut(id) = DenseMatrix::zeros(shape.0, shape.1);
        }
    }
    let mut tape = Tape::new();
    let s = params.embed(&mut tape, &h).unwrap();
    for v in [s.vertices, s.hyperedges, s.rows, s.cols] {
        assert!(tape.value(v).unwrap().data().iter().all(|x| *x == 0.0));
    }
}

#[test]
fn egt_with_identical_vertices_averages_uniformly() {
    let h = three_by_four(4, 9);
    let params = ModelParams::new(ModelConfig {
        feature_dim: 4,
        hidden: 4,
        ..ModelConfig::default()
    })
    .unwrap();
    let mut tape = Tape::new();
    let s = params.embed(&mut tape, &h).unwrap();
    let same = tape.constant(DenseMatrix::filled(12, 4, 0.7)).unwrap();
    let a = params.egt_step(&mut tape, &h, &GraphState { vertices: same, ..s }, 0).unwrap();
    assert_eq!(tape.value(a).unwrap().rows(), h.hyperedge_count());

    let mut empty_rng = ChaCha8Rng::seed_from_u64(1);
    let t = tree(&[None, Some(0)], &[Lma, Lad], 4, &mut empty_rng);
    let g = build_individual(&t).unwrap();
    let h2 = build_assoc(&g, &g, AssocConfig::default()).unwrap();
    let mut tape = Tape::new();
    let s = params.embed(&mut tape, &h2).unwrap();
    let e = params.egt_step(&mut tape, &h2, &s, 0).unwrap();
    assert_eq!(tape.value(e).unwrap().shape(), (0, 4));
}

#[test]
fn isolated_vertices_get_zero_attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let t = tree(&[None, Some(0)], &[Lma, Lad], 4, &mut rng);
    let g = build_individual(&t).unwrap();
    let h = build_assoc(&g, &g, AssocConfig::default()).unwrap();
    let params = ModelParams::new(ModelConfig {
        feature_dim: 4,
        hidden: 4,
        use_constraints: false,
        ..ModelConfig::default()
    })
    .unwrap();
    let mut tape = Tape::new();
    let s = params.embed(&mut tape, &h).unwrap();
    let v = params.vgt_step(&mut tape, &h, &s, 0).unwrap();
    let zeros = tape.constant(DenseMatrix::zeros(4, 4)).unwrap();
    let joined = tape.concat_cols(s.vertices, zeros).unwrap();
    let mut names = params.store().iter().map(|(n, _)| n.to_string()).collect::<Vec<_>>();
    names.retain(|n| n.starts_with("vertex_update"));
    assert_eq!(names.len(), 4);
    // Recompute g_v([v, 0]) by hand with the stored weights.
    let store = params.store();
    let get = |n: &str| store.get(store.find(n).unwrap()).clone();
    let x = tape.value(joined).unwrap().clone();
    let mut hidden = x.matmul(&get("vertex_update.0.w")).unwrap();
    let b0 = get("vertex_update.0.b");
    for r in 0..hidden.rows() {
        for c in 0..hidden.cols() {
            hidden.set(r, c, (hidden.get(r, c) + b0.get(0, c)).max(0.0));
        }
    }
    let mut out = hidden.matmul(&get("vertex_update.1.w")).unwrap();
    let b1 = get("vertex_update.1.b");
    for r in 0..out.rows() {
        for c in 0..out.cols() {
            out.set(r, c, out.get(r, c) + b1.get(0, c));
        }
    }
    let got = tape.value(v).unwrap();
    for (a, b) in got.data().iter().zip(out.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn zero_rounds_decodes_the_embedding() {
    let h = three_by_four(4, 3);
    let params = ModelParams::new(ModelConfig {
        feature_dim: 4,
        hidden: 4,
        rounds: 0,
        ..ModelConfig::default()
    })
    .unwrap();
    let mut tape = Tape::new();
    let out = params.forward(&mut tape, &h).unwrap();
    let mut tape2 = Tape::new();
    let s = params.embed(&mut tape2, &h).unwrap();
    let direct = params.decode(&mut tape2, s.vertices, 3, 4).unwrap();
    assert_eq!(tape.value(out.logits).unwrap(), tape2.value(direct.logits).unwrap());
}

#[test]
fn outputs_are_distributions_and_deterministic() {
    let (t1, t2) = generated_pair(10, 11, 24);
    let h = assoc(&t1, &t2);
    let cfg = ModelConfig {
        feature_dim: 24,
        hidden: 16,
        seed: 4,
        ..ModelConfig::default()
    };
    let params = ModelParams::new(cfg.clone()).unwrap();
    let mut tape = Tape::new();
    let out = params.forward(&mut tape, &h).unwrap();
    let probs = tape.value(out.probs).unwrap();
    for r in 0..probs.rows() {
        assert!((probs.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    let again = ModelParams::new(cfg).unwrap().predict(&h).unwrap();
    assert_eq!(out.match_matrix(&tape).unwrap(), again.0);
    assert_eq!(out.confidence_matrix(&tape).unwrap(), again.1);
}

#[test]
fn relabeling_the_second_graph_permutes_columns() {
    for (s1, s2, perm_seed) in [(1, 2, 3), (20, 21, 22), (7, 8, 9)] {
        let (t1, t2) = generated_pair(s1, s2, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(perm_seed);
        let mut perm: Vec<usize> = (0..t2.len()).collect();
        for i in (1..perm.len()).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let relabeled = t2.relabeled(&perm).unwrap();
        let mut params = ModelParams::new(ModelConfig {
            feature_dim: 16,
            hidden: 8,
            ..ModelConfig::default()
        })
        .unwrap();
        jitter(&mut params, perm_seed);
        let (y, c, _) = params.predict(&assoc(&t1, &t2)).unwrap();
        let (yp, cp, _) = params.predict(&assoc(&t1, &relabeled)).unwrap();
        for i in 0..y.rows() {
            for a in 0..y.cols() {
                assert!((y.get(i, a) - yp.get(i, perm[a])).abs() < 1e-12);
                assert!((c.get(i, a) - cp.get(i, perm[a])).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn relabeling_the_first_graph_permutes_rows() {
    for (s1, s2, perm_seed) in [(1, 2, 3), (20, 21, 22), (7, 8, 9)] {
        let (t1, t2) = generated_pair(s1, s2, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(perm_seed);
        let mut perm: Vec<usize> = (0..t1.len()).collect();
        for i in (1..perm.len()).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let relabeled = t1.relabeled(&perm).unwrap();
        let mut params = ModelParams::new(ModelConfig {
            feature_dim: 16,
            hidden: 8,
            ..ModelConfig::default()
        })
        .unwrap();
        jitter(&mut params, perm_seed);
        let (y, c, _) = params.predict(&assoc(&t1, &t2)).unwrap();
        let (yp, cp, _) = params.predict(&assoc(&relabeled, &t2)).unwrap();
        for i in 0..y.rows() {
            for a in 0..y.cols() {
                assert!((y.get(i, a) - yp.get(perm[i], a)).abs() < 1e-12);
                assert!((c.get(i, a) - cp.get(perm[i], a)).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn constraint_updates_influence_predictions() {
    let (t1, t2) = generated_pair(30, 31, 16);
    let h = assoc(&t1, &t2);
    let mut params = ModelParams::new(ModelConfig {
        feature_dim: 16,
        hidden: 8,
        ..ModelConfig::default()
    })
    .unwrap();
    jitter(&mut params, 1);
    let (before, _, _) = params.predict(&h).unwrap();
    let ids: Vec<_> = params.store().ids().collect();
    for id in ids {
        let name = params.store().name(id);
        if name.starts_with("row_update") || name.starts_with("col_update") {
            let (r, c) = params.store().get(id).shape();
            *params.store_mut().get_mut(id) = DenseMatrix::zeros(r, c);
        }
    }
    let (after, _, _) = params.predict(&h).unwrap();
    let diff = before.data().iter().zip(after.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(diff > 1e-9, "max change {diff}");
}

#[test]
fn disabled_modules_pass_embeddings_through() {
    let h = three_by_four(4, 12);
    let params = ModelParams::new(ModelConfig {
        feature_dim: 4,
        hidden: 4,
        use_egt: false,
        use_vgt: false,
        ..ModelConfig::default()
    })
    .unwrap();
    let mut tape = Tape::new();
    let s = params.embed(&mut tape, &h).unwrap();
    assert_eq!(params.egt_step(&mut tape, &h, &s, 0).unwrap(), s.hyperedges);
    assert_eq!(params.vgt_step(&mut tape, &h, &s, 0).unwrap(), s.vertices);
    let out = params.forward(&mut tape, &h).unwrap();
    let mut tape2 = Tape::new();
    let s2 = params.embed(&mut tape2, &h).unwrap();
    let direct = params.decode(&mut tape2, s2.vertices, 3, 4).unwrap();
    assert_eq!(tape.value(out.logits).unwrap(), tape2.value(direct.logits).unwrap());
}
