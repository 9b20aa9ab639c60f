#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spgat::explain::{cam, grad_cam};
use spgat::gat::{forward, GatConfig, GatModel, GradTargets};
use spgat::superpixel::{SegmentMap, SpGraph};
use spgat::train::{metrics_to_csv, EpochMetrics};
use spgat::Matrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero so relu/elu kinks stay out of reach of a
/// finite-difference step.
pub fn kink_free_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| {
            let v: f64 = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Connected random graph on `n` nodes: a random spanning tree plus extra edges.
pub fn random_graph(rng: &mut impl Rng, n: usize, f: usize, extra_edges: usize) -> SpGraph {
    let mut edges = BTreeSet::new();
    for i in 1..n {
        let j = rng.gen_range(0..i);
        edges.insert((j, i));
    }
    for _ in 0..extra_edges {
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if a != b {
            edges.insert((a.min(b), a.max(b)));
        }
    }
    let feats = Matrix::from_vec(n, f, (0..n * f).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
    SpGraph::new(feats, edges.into_iter().collect(), Some(rng.gen_range(0..10))).unwrap()
}

pub fn small_config() -> GatConfig {
    GatConfig {
        in_features: 3,
        hidden: 4,
        heads: 3,
        layers: 2,
        classes: 10,
    }
}

/// Small model whose parameters are scaled up so activations leave the
/// near-linear regime.
pub fn random_model(config: GatConfig, seed: u64) -> GatModel {
    let mut m = GatModel::init(config, seed).unwrap();
    let mut r = rng(seed ^ 0xabc);
    for p in m.params_mut() {
        for v in p.data_mut() {
            *v = *v * 2.0 + r.gen_range(-0.1..0.1);
        }
    }
    m
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Metric CSV without the wall-clock column.
pub fn timeless_csv(history: &[EpochMetrics]) -> String {
    metrics_to_csv(history)
        .lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string())
        .collect::<Vec<_>>()
        .join("\n")
}

/// Every pair of 4-adjacent pixels in different segments, found by scanning
/// all pixel pairs.
pub fn brute_force_rag(seg: &SegmentMap) -> BTreeSet<(usize, usize)> {
    let (h, w) = (seg.height() as i64, seg.width() as i64);
    let pixels: Vec<(i64, i64)> = (0..h).flat_map(|y| (0..w).map(move |x| (y, x))).collect();
    let mut out = BTreeSet::new();
    for &(y1, x1) in &pixels {
        for &(y2, x2) in &pixels {
            if (y1 - y2).abs() + (x1 - x2).abs() == 1 {
                let a = seg.label(y1 as usize, x1 as usize);
                let b = seg.label(y2 as usize, x2 as usize);
                if a != b {
                    out.insert((a.min(b), a.max(b)));
                }
            }
        }
    }
    out
}

/// Renumbers arbitrary labels densely in order of first appearance.
pub fn compact(labels: Vec<usize>) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .into_iter()
        .map(|l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect()
}

/// Up to 8×8 pixels with up to 6 labels scattered at random, so segments
/// are usually disconnected.
pub fn random_segmentation(rng: &mut impl Rng) -> SegmentMap {
    let (h, w, k) = (rng.gen_range(1..9), rng.gen_range(1..9), rng.gen_range(1..7));
    let labels = (0..h * w).map(|_| rng.gen_range(0..k)).collect();
    SegmentMap::from_labels(h, w, compact(labels)).unwrap()
}

/// Largest `|Σ_j α_ij − 1|` over nodes, heads and layers; infinite if any
/// coefficient leaves `[0, 1]`.
pub fn attention_deviation(model: &GatModel, g: &SpGraph) -> f64 {
    let fwd = forward(model, g, GradTargets::NONE).unwrap();
    let mut worst: f64 = 0.0;
    for (l, heads) in fwd.attention.iter().enumerate() {
        for h in 0..heads.len() {
            let mut sums = vec![0.0; g.n_nodes()];
            for (&t, &a) in fwd.targets.iter().zip(fwd.attention_values(l, h)) {
                if !(0.0..=1.0).contains(&a) {
                    return f64::INFINITY;
                }
                sums[t] += a;
            }
            worst = sums.iter().fold(worst, |m, s| m.max((s - 1.0).abs()));
        }
    }
    worst
}

/// Largest relative deviation between raw CAM and `N ·` raw Grad-CAM over all
/// classes and nodes, together with the largest gap between the normalized
/// maps.
pub fn cam_grad_cam_deviation(model: &GatModel, g: &SpGraph) -> (f64, f64) {
    assert!(forward(model, g, GradTargets::NONE).unwrap().is_cam_compliant());
    let n = g.n_nodes() as f64;
    let (mut raw, mut normalized): (f64, f64) = (0.0, 0.0);
    for c in 0..model.config.classes {
        let (a, b) = (cam(model, g, c).unwrap(), grad_cam(model, g, c).unwrap());
        for (x, y) in a.raw_scores.iter().zip(&b.raw_scores) {
            if !(*x == 0.0 && *y == 0.0) {
                raw = raw.max(rel_err(*x, n * y, 1e-300));
            }
        }
        for (x, y) in a.node_scores.iter().zip(&b.node_scores) {
            normalized = normalized.max((x - y).abs());
        }
    }
    (raw, normalized)
}

pub mod fd {
    use std::sync::Arc;

    use rand::Rng;
    use spgat::autodiff::{BackwardMode, Tape, Var};
    use spgat::gat::{forward_features, GatModel, GradTargets};
    use spgat::superpixel::SpGraph;
    use spgat::Matrix;

    use super::{kink_free_matrix, random_matrix, rel_err};

    pub const STEP: f64 = 1e-5;
    /// Gradients smaller than this are compared absolutely.
    pub const FLOOR: f64 = 1e-4;

    type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Var>;

    /// One op under test: its inputs and how to apply it.
    pub struct Case {
        pub inputs: Vec<Matrix>,
        pub build: Build,
    }

    pub const OPS: [&str; 15] = [
        "matmul",
        "linear",
        "linear_nobias",
        "relu",
        "elu",
        "gather_rows",
        "concat_cols",
        "segment_softmax",
        "segment_weighted_sum",
        "pair_scores",
        "gather_weighted_sum",
        "mean_rows",
        "sum",
        "pick",
        "cross_entropy",
    ];

    fn random_targets(rng: &mut impl Rng, n: usize, e: usize) -> Arc<[usize]> {
        let mut t: Vec<usize> = (0..n).collect();
        t.extend((n..e).map(|_| rng.gen_range(0..n)));
        t.sort_unstable();
        t.into()
    }

    pub fn case(op: &str, rng: &mut impl Rng) -> Case {
        let r = rng.gen_range(1..5);
        let c = rng.gen_range(1..5);
        let k = rng.gen_range(1..5);
        match op {
            "matmul" => Case {
                inputs: vec![random_matrix(rng, r, k), random_matrix(rng, k, c)],
                build: Box::new(|t, v| t.matmul(v[0], v[1]).unwrap()),
            },
            "linear" => Case {
                inputs: vec![
                    random_matrix(rng, r, k),
                    random_matrix(rng, c, k),
                    random_matrix(rng, 1, c),
                ],
                build: Box::new(|t, v| t.linear(v[0], v[1], Some(v[2])).unwrap()),
            },
            "linear_nobias" => Case {
                inputs: vec![random_matrix(rng, r, k), random_matrix(rng, c, k)],
                build: Box::new(|t, v| t.linear(v[0], v[1], None).unwrap()),
            },
            "relu" => Case {
                inputs: vec![kink_free_matrix(rng, r, c)],
                build: Box::new(|t, v| t.relu(v[0])),
            },
            "elu" => Case {
                inputs: vec![kink_free_matrix(rng, r, c)],
                build: Box::new(|t, v| t.elu(v[0])),
            },
            "gather_rows" => {
                let idx: Arc<[usize]> = (0..rng.gen_range(1..8)).map(|_| rng.gen_range(0..r)).collect();
                Case {
                    inputs: vec![random_matrix(rng, r, c)],
                    build: Box::new(move |t, v| t.gather_rows(v[0], idx.clone()).unwrap()),
                }
            }
            "concat_cols" => Case {
                inputs: vec![
                    random_matrix(rng, r, c),
                    random_matrix(rng, r, k),
                    random_matrix(rng, r, 1),
                ],
                build: Box::new(|t, v| t.concat_cols(v).unwrap()),
            },
            "segment_softmax" => {
                let e = r + rng.gen_range(0..6);
                let targets = random_targets(rng, r, e);
                Case {
                    inputs: vec![random_matrix(rng, e, 1)],
                    build: Box::new(move |t, v| t.segment_softmax(v[0], targets.clone(), r).unwrap()),
                }
            }
            "segment_weighted_sum" => {
                let e = r + rng.gen_range(0..6);
                let targets = random_targets(rng, r, e);
                Case {
                    inputs: vec![random_matrix(rng, e, c), random_matrix(rng, e, 1)],
                    build: Box::new(move |t, v| t.segment_weighted_sum(v[0], v[1], targets.clone(), r).unwrap()),
                }
            }
            "pair_scores" => {
                let e = r + rng.gen_range(0..6);
                let targets = random_targets(rng, r, e);
                let sources: Arc<[usize]> = (0..e).map(|_| rng.gen_range(0..r)).collect();
                Case {
                    inputs: vec![random_matrix(rng, r, c), random_matrix(rng, 2 * c, 1)],
                    build: Box::new(move |t, v| t.pair_scores(v[0], v[1], targets.clone(), sources.clone()).unwrap()),
                }
            }
            "gather_weighted_sum" => {
                let e = r + rng.gen_range(0..6);
                let targets = random_targets(rng, r, e);
                let sources: Arc<[usize]> = (0..e).map(|_| rng.gen_range(0..r)).collect();
                Case {
                    inputs: vec![random_matrix(rng, r, c), random_matrix(rng, e, 1)],
                    build: Box::new(move |t, v| {
                        t.gather_weighted_sum(v[0], v[1], targets.clone(), sources.clone(), r)
                            .unwrap()
                    }),
                }
            }
            "mean_rows" => Case {
                inputs: vec![random_matrix(rng, r, c)],
                build: Box::new(|t, v| t.mean_rows(v[0]).unwrap()),
            },
            "sum" => Case {
                inputs: vec![random_matrix(rng, r, c)],
                build: Box::new(|t, v| t.sum(v[0])),
            },
            "pick" => {
                let i = rng.gen_range(0..r * c);
                Case {
                    inputs: vec![random_matrix(rng, r, c)],
                    build: Box::new(move |t, v| t.pick(v[0], i).unwrap()),
                }
            }
            "cross_entropy" => {
                let target = rng.gen_range(0..c);
                Case {
                    inputs: vec![random_matrix(rng, 1, c).scaled(3.0)],
                    build: Box::new(move |t, v| t.cross_entropy(v[0], target).unwrap()),
                }
            }
            other => panic!("unknown op {other}"),
        }
    }

    trait Scaled {
        fn scaled(self, s: f64) -> Self;
    }

    impl Scaled for Matrix {
        fn scaled(mut self, s: f64) -> Self {
            self.data_mut().iter_mut().for_each(|v| *v *= s);
            self
        }
    }

    /// Reduces the op output to a scalar with fixed random projections
    /// `u · out · w`, so every output entry contributes with its own weight.
    fn scalar(case: &Case, inputs: &[Matrix], u: &Matrix, w: &Matrix, grad: bool) -> (Tape, Vec<Var>, Var) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone(), grad)).collect();
        let out = (case.build)(&mut tape, &vars);
        let (ul, wl) = (tape.leaf(u.clone(), false), tape.leaf(w.clone(), false));
        let left = tape.matmul(ul, out).unwrap();
        let root = tape.matmul(left, wl).unwrap();
        (tape, vars, root)
    }

    /// Largest relative error between the tape's gradient and central
    /// differences over every input entry of one random instance.
    pub fn op_error(op: &str, rng: &mut impl Rng) -> f64 {
        let case = case(op, rng);
        let mut probe = Tape::new();
        let vars: Vec<Var> = case.inputs.iter().map(|m| probe.leaf(m.clone(), false)).collect();
        let out = (case.build)(&mut probe, &vars);
        let (r, c) = probe.shape(out);
        let u = random_matrix(rng, 1, r);
        let w = random_matrix(rng, c, 1);

        let (mut tape, vars, root) = scalar(&case, &case.inputs, &u, &w, true);
        tape.backward(root, BackwardMode::Standard).unwrap();
        let mut worst: f64 = 0.0;
        for (i, input) in case.inputs.iter().enumerate() {
            let analytic = tape.grad(vars[i]);
            for j in 0..input.data().len() {
                let eval = |delta: f64| {
                    let mut inputs = case.inputs.clone();
                    inputs[i].data_mut()[j] += delta;
                    let (t, _, root) = scalar(&case, &inputs, &u, &w, false);
                    t.value(root).data()[0]
                };
                let numeric = (eval(STEP) - eval(-STEP)) / (2.0 * STEP);
                worst = worst.max(rel_err(analytic.data()[j], numeric, FLOOR));
            }
        }
        worst
    }

    fn loss(model: &GatModel, g: &SpGraph, features: &Matrix) -> f64 {
        let mut fwd = forward_features(model, g, features, GradTargets::NONE).unwrap();
        let l = fwd.tape.cross_entropy(fwd.logits, g.label.unwrap()).unwrap();
        fwd.tape.value(l).data()[0]
    }

    /// Largest relative error of end-to-end cross-entropy gradients with
    /// respect to every parameter and every input feature.
    pub fn gat_error(model: &GatModel, g: &SpGraph) -> f64 {
        let mut fwd = forward_features(model, g, &g.features, GradTargets::ALL).unwrap();
        let l = fwd.tape.cross_entropy(fwd.logits, g.label.unwrap()).unwrap();
        fwd.tape.backward(l, BackwardMode::Standard).unwrap();
        let mut worst: f64 = 0.0;

        let input_grad = fwd.tape.grad(fwd.input);
        for j in 0..g.features.data().len() {
            let at = |delta: f64| {
                let mut f = g.features.clone();
                f.data_mut()[j] += delta;
                loss(model, g, &f)
            };
            let numeric = (at(STEP) - at(-STEP)) / (2.0 * STEP);
            worst = worst.max(rel_err(input_grad.data()[j], numeric, FLOOR));
        }

        let n_params = model.params().len();
        for p in 0..n_params {
            let analytic = fwd.tape.grad(fwd.params[p]);
            for j in 0..analytic.data().len() {
                let at = |delta: f64| {
                    let mut m = model.clone();
                    m.params_mut()[p].data_mut()[j] += delta;
                    loss(&m, g, &g.features)
                };
                let numeric = (at(STEP) - at(-STEP)) / (2.0 * STEP);
                worst = worst.max(rel_err(analytic.data()[j], numeric, FLOOR));
            }
        }
        worst
    }
}
