//! Browser demo: segment a digit, explain the model's prediction, and watch
//! the prediction change as salient superpixels are occluded.
//!
//! [`Demo`] holds the logic and is tested natively; [`DemoApp`] is the thin
//! wasm-bindgen wrapper the page talks to.

use spgat::checkpoint::Checkpoint;
use spgat::dataset::{parse_idx_images, parse_idx_labels, Image};
use spgat::explain::{explain, Method};
use spgat::fidelity::{occlude, occluded_count};
use spgat::gat::{logits, predict};
use spgat::render::{render_graph, render_saliency, RgbImage};
use spgat::superpixel::{image_to_graph, SlicParams, SpGraph};
use spgat::{Error, Result};
use wasm_bindgen::prelude::*;

const MODEL: &[u8] = include_bytes!("../assets/model.ckpt");
const SAMPLE_IMAGES: &[u8] = include_bytes!("../assets/samples-images-idx3-ubyte");
const SAMPLE_LABELS: &[u8] = include_bytes!("../assets/samples-labels-idx1-ubyte");

/// Rendered RGBA frame plus a one-line caption.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub rgba: Vec<u8>,
    pub caption: String,
}

impl Frame {
    fn new(img: &RgbImage, caption: String) -> Self {
        Self {
            width: img.width,
            height: img.height,
            rgba: img.to_rgba(),
            caption,
        }
    }
}

pub struct Demo {
    checkpoint: Checkpoint,
    samples: Vec<Image>,
    labels: Vec<usize>,
    scale: usize,
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl Demo {
    pub fn from_parts(checkpoint: &[u8], images: &[u8], labels: &[u8], scale: usize) -> Result<Self> {
        let samples = parse_idx_images(images)?;
        let labels = parse_idx_labels(labels)?;
        if samples.len() != labels.len() || samples.is_empty() {
            return Err(Error::Corrupt("sample images and labels disagree".into()));
        }
        Ok(Self {
            checkpoint: Checkpoint::from_bytes(checkpoint)?,
            samples,
            labels,
            scale: scale.max(1),
        })
    }

    pub fn embedded() -> Result<Self> {
        Self::from_parts(MODEL, SAMPLE_IMAGES, SAMPLE_LABELS, 10)
    }

    pub fn sample_count(&self) -> usize {
        self.samples.len()
    }

    pub fn label(&self, sample: usize) -> Result<usize> {
        self.labels
            .get(sample)
            .copied()
            .ok_or_else(|| Error::Index(format!("sample {sample} of {}", self.samples.len())))
    }

    /// Segment count the model was trained with.
    pub fn model_k(&self) -> usize {
        self.checkpoint.slic.unwrap_or_default().k_segments
    }

    fn graph(&self, sample: usize, k: usize) -> Result<(&Image, SpGraph)> {
        let label = self.label(sample)?;
        let img = &self.samples[sample];
        let params = SlicParams {
            k_segments: k,
            ..self.checkpoint.slic.unwrap_or_default()
        };
        Ok((img, image_to_graph(img, &params, Some(label))?))
    }

    fn verdict(&self, g: &SpGraph) -> Result<(usize, f64)> {
        let p = softmax(&logits(&self.checkpoint.model, g)?);
        let c = spgat::gat::argmax(&p);
        Ok((c, p[c]))
    }

    /// Class the model assigns to a sample.
    pub fn predict(&self, sample: usize) -> Result<usize> {
        let (_, g) = self.graph(sample, self.model_k())?;
        predict(&self.checkpoint.model, &g)
    }

    /// Superpixels and region adjacency graph for `k` requested segments.
    pub fn segment(&self, sample: usize, k: usize) -> Result<Frame> {
        let (img, g) = self.graph(sample, k)?;
        Ok(Frame::new(
            &render_graph(img, &g, self.scale)?,
            format!("{} superpixels, {} edges", g.n_nodes(), g.edges.len()),
        ))
    }

    /// Saliency overlay for the predicted class.
    pub fn explain(&self, sample: usize, method: Method) -> Result<Frame> {
        let (img, g) = self.graph(sample, self.model_k())?;
        let (pred, p) = self.verdict(&g)?;
        let s = explain(&self.checkpoint.model, &g, method, Some(pred))?;
        Ok(Frame::new(
            &render_saliency(img, &s, &g, self.scale)?,
            format!(
                "label {}, predicted {pred} ({:.0}%), {method} saliency",
                self.labels[sample],
                100.0 * p
            ),
        ))
    }

    /// Input with every superpixel scoring above `threshold` blacked out,
    /// and the model's prediction on the occluded graph.
    pub fn occlude(&self, sample: usize, method: Method, threshold: f64) -> Result<Frame> {
        let (img, g) = self.graph(sample, self.model_k())?;
        let pred = predict(&self.checkpoint.model, &g)?;
        let s = explain(&self.checkpoint.model, &g, method, Some(pred))?;
        let occluded = occlude(&g, &s, threshold)?;
        let (after, p) = self.verdict(&occluded)?;
        let seg = g.segments.as_ref().expect("image graphs carry their segmentation");
        let px: Vec<f64> = (0..img.height())
            .flat_map(|r| (0..img.width()).map(move |c| (r, c)))
            .map(|(r, c)| {
                if s.node_scores[seg.label(r, c)] > threshold {
                    0.0
                } else {
                    img.gray(r, c)
                }
            })
            .collect();
        let shown = Image::new(img.height(), img.width(), 1, px)?;
        Ok(Frame::new(
            &spgat::render::image_to_rgb(&shown, self.scale),
            format!(
                "{} of {} superpixels occluded, prediction {pred} -> {after} ({:.0}%)",
                occluded_count(&s, threshold),
                g.n_nodes(),
                100.0 * p
            ),
        ))
    }
}

fn js_err(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct DemoApp {
    demo: Demo,
    frame: Frame,
}

#[wasm_bindgen]
impl DemoApp {
    #[wasm_bindgen(constructor)]
    pub fn new() -> std::result::Result<DemoApp, JsError> {
        let demo = Demo::embedded().map_err(js_err)?;
        let frame = demo.segment(0, demo.model_k()).map_err(js_err)?;
        Ok(Self { demo, frame })
    }

    #[wasm_bindgen(js_name = sampleCount)]
    pub fn sample_count(&self) -> usize {
        self.demo.sample_count()
    }

    #[wasm_bindgen(js_name = sampleLabel)]
    pub fn sample_label(&self, sample: usize) -> std::result::Result<usize, JsError> {
        self.demo.label(sample).map_err(js_err)
    }

    #[wasm_bindgen(js_name = modelK)]
    pub fn model_k(&self) -> usize {
        self.demo.model_k()
    }

    pub fn segment(&mut self, sample: usize, k: usize) -> std::result::Result<(), JsError> {
        self.frame = self.demo.segment(sample, k).map_err(js_err)?;
        Ok(())
    }

    pub fn explain(&mut self, sample: usize, method: &str) -> std::result::Result<(), JsError> {
        let m: Method = method.parse().map_err(js_err)?;
        self.frame = self.demo.explain(sample, m).map_err(js_err)?;
        Ok(())
    }

    pub fn occlude(&mut self, sample: usize, method: &str, threshold: f64) -> std::result::Result<(), JsError> {
        let m: Method = method.parse().map_err(js_err)?;
        self.frame = self.demo.occlude(sample, m, threshold).map_err(js_err)?;
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.frame.width
    }

    pub fn height(&self) -> usize {
        self.frame.height
    }

    pub fn rgba(&self) -> Vec<u8> {
        self.frame.rgba.clone()
    }

    pub fn caption(&self) -> String {
        self.frame.caption.clone()
    }
}
