//! Occlusion fidelity: how much accuracy drops when the nodes an explanation
//! marks as important have their features zeroed.

use crate::error::{Error, Result};
use crate::explain::{explain, Method, Saliency};
use crate::gat::{predict, GatModel};
use crate::par::par_map;
use crate::superpixel::SpGraph;

/// Thresholds swept by default.
pub const DEFAULT_THRESHOLDS: [f64; 8] = [0.01, 0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9];

/// Copy of `g` with the feature row of every node scoring above `t` zeroed.
/// Topology and node count are unchanged.
pub fn occlude(g: &SpGraph, s: &Saliency, t: f64) -> Result<SpGraph> {
    if s.len() != g.n_nodes() {
        return Err(Error::Shape(format!(
            "saliency has {} scores for a {}-node graph",
            s.len(),
            g.n_nodes()
        )));
    }
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::Param(format!("threshold {t} outside (0, 1)")));
    }
    let mut out = g.clone();
    for (n, &score) in s.node_scores.iter().enumerate() {
        if score > t {
            out.features.row_mut(n).fill(0.0);
        }
    }
    Ok(out)
}

pub fn occluded_count(s: &Saliency, t: f64) -> usize {
    s.node_scores.iter().filter(|&&v| v > t).count()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FidelityReport {
    pub method: Method,
    pub thresholds: Vec<f64>,
    /// `accuracy(original) − accuracy(occluded)` per threshold.
    pub fidelity_at: Vec<f64>,
    /// Mean fraction of nodes occluded per threshold.
    pub occluded_fraction_at: Vec<f64>,
    pub base_accuracy: f64,
    pub n_samples: usize,
}

impl FidelityReport {
    pub fn fidelity(&self, t: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .position(|&x| x == t)
            .map(|i| self.fidelity_at[i])
    }
}

fn validate_thresholds(thresholds: &[f64]) -> Result<()> {
    if thresholds.is_empty() {
        return Err(Error::Param("no thresholds given".into()));
    }
    if thresholds.iter().any(|&t| !(t > 0.0 && t < 1.0)) || thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Param(
            "thresholds must be strictly ascending within (0, 1)".into(),
        ));
    }
    Ok(())
}

fn labels(dataset: &[SpGraph]) -> Result<Vec<usize>> {
    if dataset.is_empty() {
        return Err(Error::Empty("fidelity needs at least one graph".into()));
    }
    dataset
        .iter()
        .enumerate()
        .map(|(i, g)| {
            g.label
                .ok_or_else(|| Error::Contract(format!("graph {i} has no label")))
        })
        .collect()
}

struct GraphOutcome {
    correct: bool,
    // per method, per threshold: (correct after occlusion, occluded fraction)
    occluded: Vec<Vec<(bool, f64)>>,
}

/// Fidelity for every method over every threshold. Each graph's saliency
/// targets its predicted class and is computed once per method.
pub fn threshold_sweep(
    model: &GatModel,
    dataset: &[SpGraph],
    methods: &[Method],
    thresholds: &[f64],
) -> Result<Vec<FidelityReport>> {
    if methods.is_empty() {
        return Err(Error::Param("no saliency methods given".into()));
    }
    validate_thresholds(thresholds)?;
    let labels = labels(dataset)?;
    let outcomes = par_map(dataset, |g| -> Result<GraphOutcome> {
        let label = g.label.unwrap_or_default();
        let pred = predict(model, g)?;
        let occluded = methods
            .iter()
            .map(|&m| {
                let s = explain(model, g, m, Some(pred))?;
                thresholds
                    .iter()
                    .map(|&t| {
                        let count = occluded_count(&s, t);
                        let correct = if count == 0 {
                            pred == label
                        } else {
                            predict(model, &occlude(g, &s, t)?)? == label
                        };
                        Ok((correct, count as f64 / g.n_nodes() as f64))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GraphOutcome {
            correct: pred == label,
            occluded,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let n = labels.len() as f64;
    let base = outcomes.iter().filter(|o| o.correct).count() as f64 / n;
    Ok(methods
        .iter()
        .enumerate()
        .map(|(mi, &method)| {
            let mut fidelity_at = Vec::with_capacity(thresholds.len());
            let mut occluded_fraction_at = Vec::with_capacity(thresholds.len());
            for ti in 0..thresholds.len() {
                let acc = outcomes.iter().filter(|o| o.occluded[mi][ti].0).count() as f64 / n;
                let frac = outcomes.iter().map(|o| o.occluded[mi][ti].1).sum::<f64>() / n;
                fidelity_at.push(base - acc);
                occluded_fraction_at.push(frac);
            }
            FidelityReport {
                method,
                thresholds: thresholds.to_vec(),
                fidelity_at,
                occluded_fraction_at,
                base_accuracy: base,
                n_samples: labels.len(),
            }
        })
        .collect())
}

pub fn fidelity_score(model: &GatModel, dataset: &[SpGraph], method: Method, t: f64) -> Result<f64> {
    let reports = threshold_sweep(model, dataset, &[method], &[t])?;
    Ok(reports[0].fidelity_at[0])
}

/// `method,threshold,fidelity,occluded_fraction` rows with a header.
pub fn reports_to_csv(reports: &[FidelityReport]) -> String {
    let mut out = String::from("method,threshold,fidelity,occluded_fraction\n");
    for r in reports {
        for ((t, f), o) in r.thresholds.iter().zip(&r.fidelity_at).zip(&r.occluded_fraction_at) {
            out.push_str(&format!("{},{t},{f},{o}\n", r.method));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gat::GatConfig;
    use crate::matrix::Matrix;

    fn sal(scores: Vec<f64>) -> Saliency {
        Saliency {
            method: Method::Cam,
            target_class: 0,
            raw_scores: scores.clone(),
            node_scores: scores,
        }
    }

    fn graph(label: usize) -> SpGraph {
        let feats = Matrix::from_vec(3, 3, (1..=9).map(|v| v as f64 / 10.0).collect()).unwrap();
        SpGraph::new(feats, vec![(0, 1), (1, 2)], Some(label)).unwrap()
    }

    #[test]
    fn zero_saliency_occludes_nothing() {
        let g = graph(0);
        assert_eq!(occlude(&g, &sal(vec![0.0; 3]), 0.01).unwrap(), g);
    }

    #[test]
    fn full_saliency_occludes_everything() {
        let g = graph(0);
        let o = occlude(&g, &sal(vec![1.0; 3]), 0.5).unwrap();
        assert!(o.features.data().iter().all(|&v| v == 0.0));
        assert_eq!(o.edges, g.edges);
        assert_eq!(o.n_nodes(), 3);
    }

    #[test]
    fn occlusion_errors() {
        let g = graph(0);
        assert!(occlude(&g, &sal(vec![1.0; 2]), 0.5).is_err());
        assert!(occlude(&g, &sal(vec![1.0; 3]), 1.0).is_err());
        assert!(occlude(&g, &sal(vec![1.0; 3]), 0.0).is_err());
    }

    #[test]
    fn strict_threshold() {
        assert_eq!(occluded_count(&sal(vec![0.5, 0.51, 0.2, 1.0]), 0.5), 2);
    }

    #[test]
    fn input_blind_model_has_zero_fidelity() {
        let mut m = GatModel::init(GatConfig::default(), 3).unwrap();
        for layer in &mut m.layers {
            for h in &mut layer.heads {
                h.weight = Matrix::zeros(h.weight.rows(), h.weight.cols());
            }
        }
        let data: Vec<SpGraph> = (0..4).map(graph).collect();
        let reports = threshold_sweep(&m, &data, &Method::HEADLINE, &DEFAULT_THRESHOLDS).unwrap();
        for r in reports {
            assert!(r.fidelity_at.iter().all(|&f| f == 0.0));
        }
    }

    #[test]
    fn sweep_validation() {
        let m = GatModel::init(GatConfig::default(), 3).unwrap();
        let data = vec![graph(1)];
        assert!(threshold_sweep(&m, &[], &[Method::Cam], &[0.1]).is_err());
        assert!(threshold_sweep(&m, &data, &[], &[0.1]).is_err());
        assert!(threshold_sweep(&m, &data, &[Method::Cam], &[0.5, 0.1]).is_err());
        assert!(threshold_sweep(&m, &data, &[Method::Cam], &[]).is_err());
        let mut unlabeled = graph(0);
        unlabeled.label = None;
        assert!(threshold_sweep(&m, &[unlabeled], &[Method::Cam], &[0.1]).is_err());
    }

    #[test]
    fn csv_shape() {
        let m = GatModel::init(GatConfig::default(), 3).unwrap();
        let data: Vec<SpGraph> = (0..3).map(graph).collect();
        let reports = threshold_sweep(&m, &data, &Method::HEADLINE, &DEFAULT_THRESHOLDS).unwrap();
        let csv = reports_to_csv(&reports);
        assert_eq!(csv.lines().count(), 1 + 4 * 8);
        assert!(csv.starts_with("method,threshold,fidelity,occluded_fraction\ncgsm,0.01,"));
    }
}
