mod common;

use std::sync::Arc;

use common::fd::{FLOOR, STEP};
use common::{
    attention_deviation, cam_grad_cam_deviation, random_graph, random_matrix, random_model, rel_err, rng, small_config,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use spgat::autodiff::{BackwardMode, Tape};
use spgat::explain::{cgsm, explain_class, guided_backprop, saliency_to_pixels, Method, Saliency};
use spgat::gat::{forward, forward_features, logits, GatConfig, GatModel, GradTargets};
use spgat::superpixel::{image_to_graph, SegmentMap, SlicParams, SpGraph};
use spgat::Matrix;

fn logit(model: &GatModel, g: &SpGraph, features: &Matrix, c: usize) -> f64 {
    forward_features(model, g, features, GradTargets::NONE)
        .unwrap()
        .logits()[c]
}

#[test]
fn attention_sums_to_one_on_100_graphs() {
    let mut r = rng(21);
    let model = random_model(GatConfig::default(), 4);
    for i in 0..100 {
        let g = random_graph(&mut r, 2 + i % 30, 3, i % 12);
        let dev = attention_deviation(&model, &g);
        assert!(dev < 1e-9, "graph {i}: {dev}");
    }
}

#[test]
fn isolated_node_attends_only_to_itself() {
    let feats = Matrix::from_vec(3, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.9, 0.1, 0.5]).unwrap();
    let g = SpGraph::new(feats, vec![(0, 1)], Some(0)).unwrap();
    let fwd = forward(&random_model(GatConfig::default(), 2), &g, GradTargets::NONE).unwrap();
    let pos = fwd.targets.iter().position(|&t| t == 2).unwrap();
    assert_eq!(fwd.sources[pos], 2);
    for l in 0..fwd.attention.len() {
        for h in 0..fwd.attention[l].len() {
            assert_eq!(fwd.attention_values(l, h)[pos], 1.0);
        }
    }
}

fn permute(g: &SpGraph, perm: &[usize]) -> SpGraph {
    // perm[old] = new
    let mut feats = Matrix::zeros(g.n_nodes(), g.n_features());
    for (old, &new) in perm.iter().enumerate() {
        feats.row_mut(new).copy_from_slice(g.features.row(old));
    }
    let edges = g
        .edges
        .iter()
        .map(|&(a, b)| (perm[a].min(perm[b]), perm[a].max(perm[b])))
        .collect();
    SpGraph::new(feats, edges, g.label).unwrap()
}

#[test]
fn permutation_equivariance() {
    let mut r = rng(8);
    let model = random_model(small_config(), 9);
    for i in 0..20 {
        let g = random_graph(&mut r, 3 + i, 3, 4);
        let mut perm: Vec<usize> = (0..g.n_nodes()).collect();
        perm.shuffle(&mut r);
        let p = permute(&g, &perm);
        let (a, b) = (
            forward(&model, &g, GradTargets::NONE).unwrap(),
            forward(&model, &p, GradTargets::NONE).unwrap(),
        );
        for (old, &new) in perm.iter().enumerate() {
            for (x, y) in a
                .last_features_value()
                .row(old)
                .iter()
                .zip(b.last_features_value().row(new))
            {
                assert!((x - y).abs() < 1e-12);
            }
        }
        for (x, y) in a.logits().iter().zip(b.logits()) {
            assert!((x - y).abs() < 1e-12);
        }
        for m in Method::HEADLINE {
            let (sa, sb) = (
                explain_class(&model, &g, m, 3).unwrap(),
                explain_class(&model, &p, m, 3).unwrap(),
            );
            for (old, &new) in perm.iter().enumerate() {
                assert!((sa.node_scores[old] - sb.node_scores[new]).abs() < 1e-9, "{m}");
            }
        }
    }
}

#[test]
fn cam_equals_n_times_grad_cam() {
    let mut r = rng(13);
    for i in 0..30u64 {
        let model = random_model(GatConfig::default(), i);
        let g = random_graph(&mut r, 2 + i as usize, 3, 5);
        let (raw, normalized) = cam_grad_cam_deviation(&model, &g);
        assert!(raw < 1e-9 && normalized < 1e-9, "model {i}: {raw:e} {normalized:e}");
    }
}

#[test]
fn cgsm_matches_clamped_finite_differences() {
    let mut r = rng(17);
    for i in 0..20u64 {
        let model = random_model(small_config(), 50 + i);
        let g = random_graph(&mut r, 3 + i as usize % 6, 3, 3);
        let c = (i % 10) as usize;
        let s = cgsm(&model, &g, c).unwrap();
        for n in 0..g.n_nodes() {
            let mut sq = 0.0;
            for f in 0..g.n_features() {
                let at = |d: f64| {
                    let mut x = g.features.clone();
                    x.set(n, f, x.get(n, f) + d);
                    logit(&model, &g, &x, c)
                };
                let d = (at(STEP) - at(-STEP)) / (2.0 * STEP);
                sq += d.max(0.0).powi(2);
            }
            let err = rel_err(s.raw_scores[n], sq.sqrt(), FLOOR);
            assert!(
                err < 1e-4,
                "instance {i} node {n}: {} vs {}",
                s.raw_scores[n],
                sq.sqrt()
            );
        }
    }
}

#[test]
fn guided_equals_standard_without_nonlinearities() {
    for seed in 0..10 {
        let grads = |mode: BackwardMode| {
            let mut r = rng(seed);
            let mut t = Tape::new();
            let x = t.leaf(random_matrix(&mut r, 4, 3), true);
            let w = t.leaf(random_matrix(&mut r, 5, 3), false);
            let alpha = t.leaf(random_matrix(&mut r, 6, 1), false);
            let cw = t.leaf(random_matrix(&mut r, 2, 5), false);
            let targets: Arc<[usize]> = vec![0, 0, 1, 2, 3, 3].into();
            let sources: Arc<[usize]> = vec![0, 1, 1, 2, 3, 0].into();
            let z = t.linear(x, w, None).unwrap();
            let zs = t.gather_rows(z, sources).unwrap();
            let agg = t.segment_weighted_sum(zs, alpha, targets, 4).unwrap();
            let pooled = t.mean_rows(agg).unwrap();
            let out = t.linear(pooled, cw, None).unwrap();
            let y = t.pick(out, 1).unwrap();
            t.backward(y, mode).unwrap();
            t.grad(x)
        };
        assert_eq!(grads(BackwardMode::Standard), grads(BackwardMode::Guided));
    }
}

#[test]
fn input_blind_model_gives_zero_maps() {
    let mut model = random_model(GatConfig::default(), 1);
    for layer in &mut model.layers {
        for h in &mut layer.heads {
            h.weight = Matrix::zeros(h.weight.rows(), h.weight.cols());
        }
    }
    let g = random_graph(&mut rng(1), 6, 3, 3);
    for m in [Method::Cgsm, Method::GuidedBackprop, Method::Cam, Method::GradCam] {
        let s = explain_class(&model, &g, m, 0).unwrap();
        assert!(s.node_scores.iter().all(|&v| v == 0.0), "{m}");
    }
}

fn check_saliency(s: &Saliency, n: usize) -> Result<(), TestCaseError> {
    prop_assert_eq!(s.len(), n);
    prop_assert!(s.node_scores.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
    if s.raw_scores.iter().any(|&v| v > 0.0) {
        prop_assert!(s.node_scores.contains(&1.0));
    } else {
        prop_assert!(s.node_scores.iter().all(|&v| v == 0.0));
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(30))]

    #[test]
    fn saliency_contract(seed in any::<u64>(), n in 1usize..20, c in 0usize..10) {
        let mut r = rng(seed);
        let g = random_graph(&mut r, n, 3, n);
        let model = random_model(small_config(), seed);
        for m in Method::HEADLINE.into_iter().chain([Method::GuidedGradCam]) {
            let a = explain_class(&model, &g, m, c).unwrap();
            check_saliency(&a, n)?;
            prop_assert_eq!(&a, &explain_class(&model, &g, m, c).unwrap());
        }
    }

    #[test]
    fn logits_are_deterministic(seed in any::<u64>(), n in 1usize..12) {
        let g = random_graph(&mut rng(seed), n, 3, 2);
        let model = GatModel::init(small_config(), seed).unwrap();
        prop_assert_eq!(logits(&model, &g).unwrap(), logits(&model, &g).unwrap());
    }

    #[test]
    fn pixel_heat_accounts_for_segment_sizes(seed in any::<u64>(), k in 2usize..20) {
        let mut r = rng(seed);
        let px: Vec<f64> = (0..16 * 16).map(|_| rand::Rng::gen_range(&mut r, 0.0..1.0)).collect();
        let img = spgat::dataset::Image::new(16, 16, 1, px).unwrap();
        let g = image_to_graph(&img, &SlicParams::with_k(k), Some(0)).unwrap();
        let model = random_model(small_config(), seed);
        let s = guided_backprop(&model, &g, 2).unwrap();
        let heat = saliency_to_pixels(&s, &g).unwrap();
        let sizes = g.segments.as_ref().unwrap().segment_sizes();
        let expect: f64 = s.node_scores.iter().zip(&sizes).map(|(v, &n)| v * n as f64).sum();
        prop_assert!((heat.iter().sum::<f64>() - expect).abs() < 1e-9);
    }
}

#[test]
fn single_segment_map_is_constant() {
    let mut g = SpGraph::new(Matrix::from_vec(1, 3, vec![0.5, 0.5, 0.5]).unwrap(), vec![], Some(0)).unwrap();
    g.segments = Some(SegmentMap::from_labels(2, 2, vec![0; 4]).unwrap());
    let s = Saliency {
        method: Method::Cgsm,
        target_class: 0,
        node_scores: vec![0.25],
        raw_scores: vec![0.25],
    };
    assert_eq!(saliency_to_pixels(&s, &g).unwrap(), vec![0.25; 4]);
}
