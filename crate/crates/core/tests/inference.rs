use hagmn_core::hypergraph::{build_individual, IndividualHypergraph};
use hagmn_core::infer::{
    assignment_cost, evaluate, hungarian, infer_with_uq, match_pair, InferConfig, MetricsReport,
};
use hagmn_core::net::{ModelConfig, ModelParams};
use hagmn_core::synth::{extract_features, generate_tree, ArteryClass, GeneratorConfig};
use hagmn_core::tensor::DenseMatrix;
use hagmn_core::Error;
use proptest::prelude::*;

/// Minimum over all injections of the smaller side into the larger one.
fn brute_force_min(cost: &DenseMatrix) -> f64 {
    let t = if cost.rows() <= cost.cols() { cost.clone() } else { cost.transpose() };
    fn go(t: &DenseMatrix, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if row == t.rows() {
            *best = best.min(acc);
            return;
        }
        for col in 0..t.cols() {
            if !used[col] {
                used[col] = true;
                go(t, row + 1, used, acc + t.get(row, col), best);
                used[col] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(&t, 0, &mut vec![false; t.cols()], 0.0, &mut best);
    best
}

fn cost_matrix() -> impl Strategy<Value = DenseMatrix> {
    (1usize..=6, 1usize..=6, any::<bool>()).prop_flat_map(|(r, c, ints)| {
        let cell = if ints {
            (0u8..4).prop_map(f64::from).boxed()
        } else {
            (-5.0f64..5.0).boxed()
        };
        proptest::collection::vec(cell, r * c).prop_map(move |v| DenseMatrix::from_vec(r, c, v).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1500))]

    #[test]
    fn hungarian_matches_brute_force(cost in cost_matrix()) {
        let m = hungarian(&cost).unwrap();
        prop_assert!(m.is_valid());
        prop_assert_eq!(m.matched_count(), cost.rows().min(cost.cols()));
        let got = assignment_cost(&cost, &m);
        prop_assert!((got - brute_force_min(&cost)).abs() < 1e-9);
    }
}

fn reference_metrics(pred: &[Option<ArteryClass>], truth: &[ArteryClass]) -> (f64, f64, f64, f64) {
    let correct = pred.iter().zip(truth).filter(|(p, t)| **p == Some(**t)).count();
    let mut ps = Vec::new();
    let mut rs = Vec::new();
    let mut fs = Vec::new();
    for class in ArteryClass::ALL {
        let in_truth = truth.iter().filter(|&&t| t == class).count();
        let in_pred = pred.iter().filter(|&&p| p == Some(class)).count();
        if in_truth == 0 && in_pred == 0 {
            continue;
        }
        let hits = pred.iter().zip(truth).filter(|(p, t)| **p == Some(class) && **t == class).count();
        let p = if in_pred > 0 { hits as f64 / in_pred as f64 } else { 0.0 };
        let r = if in_truth > 0 { hits as f64 / in_truth as f64 } else { 0.0 };
        ps.push(p);
        rs.push(r);
        fs.push(if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 });
    }
    let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    (correct as f64 / truth.len() as f64, avg(&ps), avg(&rs), avg(&fs))
}

fn class_strategy() -> impl Strategy<Value = ArteryClass> {
    (0usize..5).prop_map(|k| ArteryClass::ALL[k])
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-12
}

proptest! {
    #[test]
    fn metrics_match_reference_formulas(
        labels in proptest::collection::vec((class_strategy(), proptest::option::weighted(0.9, class_strategy())), 1..80)
    ) {
        let truth: Vec<_> = labels.iter().map(|l| l.0).collect();
        let pred: Vec<_> = labels.iter().map(|l| l.1).collect();
        let r = evaluate(&pred, &truth).unwrap();
        let (acc, p, rec, f1) = reference_metrics(&pred, &truth);
        prop_assert!(close(r.accuracy, acc));
        prop_assert!(close(r.macro_precision, p));
        prop_assert!(close(r.macro_recall, rec));
        prop_assert!(close(r.macro_f1, f1));
    }

    #[test]
    fn macro_scores_ignore_class_relabeling(
        labels in proptest::collection::vec((class_strategy(), proptest::option::of(class_strategy())), 1..60),
        perm in Just([0usize, 1, 2, 3, 4]).prop_shuffle(),
    ) {
        let relabel = |c: ArteryClass| ArteryClass::ALL[perm[c.index()]];
        let truth: Vec<_> = labels.iter().map(|l| l.0).collect();
        let pred: Vec<_> = labels.iter().map(|l| l.1).collect();
        let truth2: Vec<_> = truth.iter().map(|&c| relabel(c)).collect();
        let pred2: Vec<_> = pred.iter().map(|p| p.map(relabel)).collect();
        let (a, b): (MetricsReport, MetricsReport) = (evaluate(&pred, &truth).unwrap(), evaluate(&pred2, &truth2).unwrap());
        prop_assert!(close(a.accuracy, b.accuracy));
        prop_assert!(close(a.macro_precision, b.macro_precision));
        prop_assert!(close(a.macro_recall, b.macro_recall));
        prop_assert!(close(a.macro_f1, b.macro_f1));
    }
}

fn graph(seed: u64, view: &str, cfg: &GeneratorConfig) -> IndividualHypergraph {
    let cfg = GeneratorConfig {
        view: view.into(),
        ..cfg.clone()
    };
    let mut t = generate_tree(seed, &cfg).unwrap();
    extract_features(&mut t, 16).unwrap();
    build_individual(&t).unwrap()
}

fn untrained() -> ModelParams {
    ModelParams::new(ModelConfig {
        feature_dim: 16,
        hidden: 8,
        seed: 3,
        ..ModelConfig::default()
    })
    .unwrap()
}

#[test]
fn match_pair_outputs_valid_assignments() {
    let params = untrained();
    let cfg = InferConfig::default();
    for s in 0..12 {
        let (a, b) = (graph(s, "CRA", &GeneratorConfig::default()), graph(100 + s, "CRA", &GeneratorConfig::default()));
        let m = match_pair(&a, &b, &params, &cfg).unwrap();
        assert!(m.assignment.is_valid());
        assert_eq!((m.assignment.rows(), m.assignment.cols()), (a.node_count(), b.node_count()));
        assert_eq!(m.assignment.matched_count(), a.node_count().min(b.node_count()));
        let unresolved = m.labels.iter().filter(|l| l.is_none()).count();
        assert_eq!(unresolved, a.node_count().saturating_sub(b.node_count()));
        for (i, label) in m.labels.iter().enumerate() {
            assert_eq!(*label, m.assignment.col_of(i).map(|c| b.labels()[c]));
            assert!((0.0..1.0).contains(&m.confidence[i]));
        }
    }
}

fn library() -> (IndividualHypergraph, Vec<IndividualHypergraph>) {
    let test = graph(1, "CRA", &GeneratorConfig::default());
    let templates = (0..8)
        .map(|s| graph(50 + s, if s % 3 == 0 { "CAU" } else { "CRA" }, &GeneratorConfig::default()))
        .collect();
    (test, templates)
}

#[test]
fn without_gate_every_same_view_template_is_compared() {
    let (test, templates) = library();
    let cfg = InferConfig {
        use_uq: false,
        ..InferConfig::default()
    };
    let out = infer_with_uq(&test, &templates, &untrained(), &cfg).unwrap();
    let same = templates.iter().filter(|t| t.view == "CRA").count();
    assert_eq!(out.templates_compared, same);
    assert_eq!(out.same_view_templates, same);
    assert!(out.verdicts.iter().all(|v| !v.accepted));
    for v in &out.verdicts {
        if let Some(t) = v.template {
            assert_eq!(templates[t].view, "CRA");
        }
    }
}

#[test]
fn accepted_verdicts_satisfy_the_gate() {
    let (test, templates) = library();
    let params = untrained();
    for threshold in [1e-300, 0.05, 0.4, 1.0] {
        let cfg = InferConfig {
            threshold,
            ..InferConfig::default()
        };
        let out = infer_with_uq(&test, &templates, &params, &cfg).unwrap();
        assert!(out.templates_compared >= 1 && out.templates_compared <= out.same_view_templates);
        for v in &out.verdicts {
            assert!((0.0..=1.0).contains(&v.structural_weight));
            if v.accepted {
                assert!(v.structural_weight == 1.0 || v.score() >= threshold);
                if threshold == 1.0 {
                    assert_eq!(v.structural_weight, 1.0);
                }
            }
        }
        assert_eq!(out.labels, out.verdicts.iter().map(|v| v.class).collect::<Vec<_>>());
    }
}

#[test]
fn vanishing_threshold_accepts_on_the_first_template() {
    let params = untrained();
    let cfg = InferConfig {
        threshold: 1e-300,
        ..InferConfig::default()
    };
    // Template and test are the same tree, so every node is matched and has
    // a positive confidence; only a zero structural weight can block it.
    for s in 0..10 {
        let test = graph(s, "CRA", &GeneratorConfig::default());
        let templates = vec![test.clone(), graph(s + 1, "CRA", &GeneratorConfig::default())];
        let first = match_pair(&test, &templates[0], &params, &cfg).unwrap();
        let weights = hagmn_core::infer::structural_weight(test.adjacency(), &first.labels, &cfg.anatomy);
        let out = infer_with_uq(&test, &templates, &params, &cfg).unwrap();
        if weights.iter().all(|&w| w > 0.0) {
            assert_eq!(out.templates_compared, 1);
            assert!(out.verdicts.iter().all(|v| v.accepted && v.template == Some(0)));
        }
        for (i, v) in out.verdicts.iter().enumerate() {
            if weights[i] > 0.0 {
                assert!(v.accepted && v.template == Some(0));
            }
        }
    }
}

#[test]
fn template_errors() {
    let (test, templates) = library();
    let params = untrained();
    let cfg = InferConfig::default();
    assert_eq!(infer_with_uq(&test, &[], &params, &cfg), Err(Error::EmptyTemplates));
    let cau: Vec<_> = templates.into_iter().filter(|t| t.view == "CAU").collect();
    assert_eq!(
        infer_with_uq(&test, &cau, &params, &cfg),
        Err(Error::NoSameViewTemplate("CRA".into()))
    );
}

#[test]
fn smaller_template_leaves_nodes_unresolved() {
    let big = GeneratorConfig {
        d_branches: (3, 3),
        om_branches: (3, 3),
        ..GeneratorConfig::default()
    };
    let test = graph(4, "CRA", &big);
    let template = graph(5, "CRA", &GeneratorConfig::minimal());
    let m = match_pair(&test, &template, &untrained(), &InferConfig::default()).unwrap();
    assert_eq!(m.labels.iter().filter(|l| l.is_some()).count(), template.node_count());
}
