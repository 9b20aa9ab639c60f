//! Per-node saliency for one graph and one target class.
//!
//! * [`cgsm`]: `‖relu(∂y^c/∂x_n)‖₂` over the input features of node `n`.
//! * [`cam`]: `relu(Σ_k w^c_k F_{n,k})` from the last-layer features.
//! * [`grad_cam`]: `relu(Σ_k α^c_k F_{n,k})` with `α^c_k = mean_n ∂y^c/∂F_{n,k}`.
//! * [`guided_backprop`]: as `cgsm`, but backpropagated in guided mode.
//! * [`guided_grad_cam`]: product of the normalized guided and Grad-CAM maps.
//!
//! Scores are divided by their maximum so they lie in `[0, 1]`; an all-zero
//! map stays all-zero. The pre-normalization scores are kept in
//! [`Saliency::raw_scores`].

use std::fmt;
use std::str::FromStr;

use crate::autodiff::BackwardMode;
use crate::error::{Error, Result};
use crate::gat::{forward, ForwardArtifacts, GatModel, GradTargets};
use crate::superpixel::SpGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Cgsm,
    Cam,
    GradCam,
    GuidedBackprop,
    GuidedGradCam,
}

impl Method {
    /// The four primary methods, in reporting order.
    pub const HEADLINE: [Method; 4] = [Method::Cgsm, Method::Cam, Method::GradCam, Method::GuidedBackprop];

    pub fn name(self) -> &'static str {
        match self {
            Method::Cgsm => "cgsm",
            Method::Cam => "cam",
            Method::GradCam => "gradcam",
            Method::GuidedBackprop => "gbp",
            Method::GuidedGradCam => "guided-gradcam",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cgsm" | "vanilla" | "gradient" => Ok(Method::Cgsm),
            "cam" => Ok(Method::Cam),
            "gradcam" | "grad-cam" => Ok(Method::GradCam),
            "gbp" | "guided" | "guided-backprop" => Ok(Method::GuidedBackprop),
            "guided-gradcam" | "guidedgradcam" => Ok(Method::GuidedGradCam),
            other => Err(Error::Param(format!("unknown saliency method '{other}'"))),
        }
    }
}

/// Parses a comma-separated method list; `all` expands to the four headline methods.
pub fn parse_methods(spec: &str) -> Result<Vec<Method>> {
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if part.eq_ignore_ascii_case("all") {
            out.extend(Method::HEADLINE);
        } else {
            out.push(part.parse()?);
        }
    }
    out.dedup();
    if out.is_empty() {
        return Err(Error::Param("no saliency methods given".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Saliency {
    pub method: Method,
    pub target_class: usize,
    /// Max-normalized scores in `[0, 1]`, one per node.
    pub node_scores: Vec<f64>,
    pub raw_scores: Vec<f64>,
}

impl Saliency {
    fn from_raw(method: Method, target_class: usize, raw: Vec<f64>) -> Result<Self> {
        if let Some(v) = raw.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Contract(format!("{method} produced invalid score {v}")));
        }
        Ok(Self {
            method,
            target_class,
            node_scores: normalize_max(&raw),
            raw_scores: raw,
        })
    }

    pub fn len(&self) -> usize {
        self.node_scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_scores.is_empty()
    }

    /// `node_index,score` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("node_index,score\n");
        for (i, s) in self.node_scores.iter().enumerate() {
            out.push_str(&format!("{i},{s}\n"));
        }
        out
    }
}

pub fn normalize_max(raw: &[f64]) -> Vec<f64> {
    let max = raw.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        raw.iter().map(|v| v / max).collect()
    } else {
        vec![0.0; raw.len()]
    }
}

fn check_class(model: &GatModel, c: usize) -> Result<()> {
    if c >= model.config.classes {
        return Err(Error::Index(format!(
            "class {c} for a {}-class model",
            model.config.classes
        )));
    }
    Ok(())
}

fn input_gradient_scores(model: &GatModel, g: &SpGraph, c: usize, mode: BackwardMode) -> Result<Vec<f64>> {
    check_class(model, c)?;
    let mut fwd = forward(model, g, GradTargets::INPUT)?;
    let y = fwd.tape.pick(fwd.logits, c)?;
    fwd.tape.backward(y, mode)?;
    let grad = fwd.tape.grad(fwd.input);
    Ok((0..grad.rows())
        .map(|n| grad.row(n).iter().map(|v| v.max(0.0).powi(2)).sum::<f64>().sqrt())
        .collect())
}

pub fn cgsm(model: &GatModel, g: &SpGraph, c: usize) -> Result<Saliency> {
    Saliency::from_raw(
        Method::Cgsm,
        c,
        input_gradient_scores(model, g, c, BackwardMode::Standard)?,
    )
}

pub fn guided_backprop(model: &GatModel, g: &SpGraph, c: usize) -> Result<Saliency> {
    Saliency::from_raw(
        Method::GuidedBackprop,
        c,
        input_gradient_scores(model, g, c, BackwardMode::Guided)?,
    )
}

fn weighted_feature_scores(fwd: &ForwardArtifacts, weights: &[f64]) -> Vec<f64> {
    let feats = fwd.last_features_value();
    (0..feats.rows())
        .map(|n| {
            feats
                .row(n)
                .iter()
                .zip(weights)
                .map(|(f, w)| f * w)
                .sum::<f64>()
                .max(0.0)
        })
        .collect()
}

/// Class activation map from an existing forward pass.
pub fn cam_from_forward(model: &GatModel, fwd: &ForwardArtifacts, c: usize) -> Result<Saliency> {
    check_class(model, c)?;
    if !fwd.is_cam_compliant() {
        return Err(Error::Contract(
            "CAM needs logits to be one affine map of mean-pooled last-layer features".into(),
        ));
    }
    let weights = model.classifier_w.row(c);
    Saliency::from_raw(Method::Cam, c, weighted_feature_scores(fwd, weights))
}

pub fn cam(model: &GatModel, g: &SpGraph, c: usize) -> Result<Saliency> {
    let fwd = forward(model, g, GradTargets::NONE)?;
    cam_from_forward(model, &fwd, c)
}

pub fn grad_cam(model: &GatModel, g: &SpGraph, c: usize) -> Result<Saliency> {
    check_class(model, c)?;
    // Input gradients force the tape to route gradients through the layers.
    let mut fwd = forward(model, g, GradTargets::INPUT)?;
    let y = fwd.tape.pick(fwd.logits, c)?;
    fwd.tape.backward(y, BackwardMode::Standard)?;
    let grad = fwd.tape.grad(fwd.last_features);
    let n = grad.rows() as f64;
    let pooled: Vec<f64> = (0..grad.cols())
        .map(|k| (0..grad.rows()).map(|r| grad.get(r, k)).sum::<f64>() / n)
        .collect();
    Saliency::from_raw(Method::GradCam, c, weighted_feature_scores(&fwd, &pooled))
}

pub fn guided_grad_cam(model: &GatModel, g: &SpGraph, c: usize) -> Result<Saliency> {
    let gbp = guided_backprop(model, g, c)?;
    let gc = grad_cam(model, g, c)?;
    let raw = gbp
        .node_scores
        .iter()
        .zip(&gc.node_scores)
        .map(|(a, b)| a * b)
        .collect();
    Saliency::from_raw(Method::GuidedGradCam, c, raw)
}

pub fn explain_class(model: &GatModel, g: &SpGraph, method: Method, c: usize) -> Result<Saliency> {
    match method {
        Method::Cgsm => cgsm(model, g, c),
        Method::Cam => cam(model, g, c),
        Method::GradCam => grad_cam(model, g, c),
        Method::GuidedBackprop => guided_backprop(model, g, c),
        Method::GuidedGradCam => guided_grad_cam(model, g, c),
    }
}

/// Explains `target`, or the model's predicted class when `target` is `None`.
pub fn explain(model: &GatModel, g: &SpGraph, method: Method, target: Option<usize>) -> Result<Saliency> {
    let c = match target {
        Some(c) => c,
        None => crate::gat::predict(model, g)?,
    };
    explain_class(model, g, method, c)
}

/// Spreads node scores over pixels through the graph's segment map.
pub fn saliency_to_pixels(s: &Saliency, g: &SpGraph) -> Result<Vec<f64>> {
    let seg = g
        .segments
        .as_ref()
        .ok_or_else(|| Error::Contract("graph carries no segment map".into()))?;
    if seg.n_segments() != s.len() {
        return Err(Error::Shape(format!(
            "saliency has {} scores, segment map has {} segments",
            s.len(),
            seg.n_segments()
        )));
    }
    Ok(seg.labels().iter().map(|&l| s.node_scores[l]).collect())
}
