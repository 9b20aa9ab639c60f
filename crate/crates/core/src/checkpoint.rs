//! Checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! spgat-checkpoint 1\n
//! config in_features=3 hidden=16 heads=3 layers=3 classes=10\n
//! dims 3 48 48 48 10\n
//! seed 7\n
//! epoch 30\n
//! created-by spgat 0.1.0\n
//! slic k=75 compactness=10.0 max_iters=10\n   <- optional
//! arrays 24\n
//! \n                                   <- blank line ends the manifest
//! repeated `arrays` times:
//!   u32 name length, name bytes (UTF-8), u64 value count, f64 values
//! end\n
//! ```
//!
//! Arrays appear in declaration order: the model parameters (see
//! [`GatModel::param_names`]), then optionally `adam.step`, `adam.m.<name>`
//! and `adam.v.<name>`, then optionally `metrics` (five values per epoch:
//! epoch, loss, train accuracy, validation accuracy, seconds).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::gat::{GatConfig, GatModel};
use crate::matrix::Matrix;
use crate::superpixel::SlicParams;
use crate::train::{AdamState, EpochMetrics, TrainState};

pub const MAGIC: &str = "spgat-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: GatModel,
    pub adam: Option<AdamState>,
    pub metrics: Vec<EpochMetrics>,
    pub seed: u64,
    pub epoch: usize,
    /// Segmentation the model was trained on, when known.
    pub slic: Option<SlicParams>,
}

impl Checkpoint {
    pub fn from_state(state: &TrainState, seed: u64) -> Self {
        Self {
            model: state.model.clone(),
            adam: Some(state.adam.clone()),
            metrics: state.history.clone(),
            seed,
            epoch: state.epochs_done(),
            slic: None,
        }
    }

    pub fn into_state(self) -> TrainState {
        let adam = self.adam.unwrap_or_else(|| AdamState::for_model(&self.model));
        TrainState {
            model: self.model,
            adam,
            history: self.metrics,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.model.config;
        let dims: Vec<String> = c.dimension_chain().iter().map(ToString::to_string).collect();
        let names = self.model.param_names();
        let mut arrays: Vec<(String, Vec<f64>)> = names
            .iter()
            .cloned()
            .zip(self.model.params().iter().map(|p| p.data().to_vec()))
            .collect();
        if let Some(adam) = &self.adam {
            arrays.push(("adam.step".into(), vec![adam.step as f64]));
            for (n, m) in names.iter().zip(&adam.m) {
                arrays.push((format!("adam.m.{n}"), m.data().to_vec()));
            }
            for (n, v) in names.iter().zip(&adam.v) {
                arrays.push((format!("adam.v.{n}"), v.data().to_vec()));
            }
        }
        if !self.metrics.is_empty() {
            let flat = self
                .metrics
                .iter()
                .flat_map(|m| [m.epoch as f64, m.loss, m.train_acc, m.val_acc, m.seconds])
                .collect();
            arrays.push(("metrics".into(), flat));
        }

        let slic = self
            .slic
            .map(|p| {
                format!(
                    "slic k={} compactness={:?} max_iters={}\n",
                    p.k_segments, p.compactness, p.max_iters
                )
            })
            .unwrap_or_default();
        let mut out = format!(
            "{MAGIC} {VERSION}\nconfig in_features={} hidden={} heads={} layers={} classes={}\ndims {}\nseed {}\nepoch {}\ncreated-by spgat {}\n{slic}arrays {}\n\n",
            c.in_features,
            c.hidden,
            c.heads,
            c.layers,
            c.classes,
            dims.join(" "),
            self.seed,
            self.epoch,
            env!("CARGO_PKG_VERSION"),
            arrays.len()
        )
        .into_bytes();
        for (name, values) in arrays {
            out.extend((name.len() as u32).to_le_bytes());
            out.extend(name.as_bytes());
            out.extend((values.len() as u64).to_le_bytes());
            for v in values {
                out.extend(v.to_le_bytes());
            }
        }
        out.extend(b"end\n");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |msg: &str| Error::Corrupt(format!("checkpoint: {msg}"));
        let split = bytes
            .windows(2)
            .position(|w| w == b"\n\n")
            .ok_or_else(|| corrupt("manifest not terminated"))?;
        let manifest = std::str::from_utf8(&bytes[..split]).map_err(|_| corrupt("manifest not UTF-8"))?;
        let mut lines = manifest.lines();
        let header = lines.next().unwrap_or_default();
        let version = header
            .strip_prefix(MAGIC)
            .map(str::trim)
            .ok_or_else(|| corrupt("bad magic"))?
            .parse::<u32>()
            .map_err(|_| corrupt("bad version"))?;
        if version != VERSION {
            return Err(Error::Version {
                found: version,
                expected: VERSION,
            });
        }
        let mut config = GatConfig::default();
        let (mut seed, mut epoch, mut n_arrays) = (0u64, 0usize, 0usize);
        let mut dims_line = None;
        let mut slic = None;
        for line in lines {
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            match key {
                "config" => {
                    for kv in rest.split_whitespace() {
                        let (k, v) = kv.split_once('=').ok_or_else(|| corrupt("bad config entry"))?;
                        let v: usize = v.parse().map_err(|_| corrupt("bad config value"))?;
                        match k {
                            "in_features" => config.in_features = v,
                            "hidden" => config.hidden = v,
                            "heads" => config.heads = v,
                            "layers" => config.layers = v,
                            "classes" => config.classes = v,
                            _ => return Err(corrupt("unknown config key")),
                        }
                    }
                }
                "dims" => dims_line = Some(rest.to_string()),
                "slic" => {
                    let mut p = SlicParams::default();
                    for kv in rest.split_whitespace() {
                        let (k, v) = kv.split_once('=').ok_or_else(|| corrupt("bad slic entry"))?;
                        match k {
                            "k" => p.k_segments = v.parse().map_err(|_| corrupt("bad slic k"))?,
                            "compactness" => p.compactness = v.parse().map_err(|_| corrupt("bad compactness"))?,
                            "max_iters" => p.max_iters = v.parse().map_err(|_| corrupt("bad max_iters"))?,
                            _ => return Err(corrupt("unknown slic key")),
                        }
                    }
                    slic = Some(p);
                }
                "seed" => seed = rest.trim().parse().map_err(|_| corrupt("bad seed"))?,
                "epoch" => epoch = rest.trim().parse().map_err(|_| corrupt("bad epoch"))?,
                "arrays" => n_arrays = rest.trim().parse().map_err(|_| corrupt("bad array count"))?,
                _ => {}
            }
        }
        let expected_dims: Vec<String> = config.dimension_chain().iter().map(ToString::to_string).collect();
        if dims_line.as_deref().map(str::trim) != Some(expected_dims.join(" ").as_str()) {
            return Err(corrupt("dimension chain does not match config"));
        }

        let mut pos = split + 2;
        let mut take = |n: usize| -> Result<&[u8]> {
            let end = pos
                .checked_add(n)
                .filter(|&e| e <= bytes.len())
                .ok_or_else(|| corrupt("truncated"))?;
            let slice = &bytes[pos..end];
            pos = end;
            Ok(slice)
        };
        let mut arrays = Vec::with_capacity(n_arrays);
        for _ in 0..n_arrays {
            let len = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
            let name = String::from_utf8(take(len)?.to_vec()).map_err(|_| corrupt("array name not UTF-8"))?;
            let count = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
            let raw = take(count.checked_mul(8).ok_or_else(|| corrupt("array too large"))?)?;
            let values: Vec<f64> = raw
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect();
            arrays.push((name, values));
        }
        if take(4)? != b"end\n" {
            return Err(corrupt("missing end marker"));
        }

        let template = GatModel::init(config, 0)?;
        let names = template.param_names();
        let shapes: Vec<(usize, usize)> = template.params().iter().map(|p| p.shape()).collect();
        let mut iter = arrays.into_iter().peekable();
        let mut read_matrix = |expected: &str, shape: (usize, usize)| -> Result<Matrix> {
            let (name, values) = iter.next().ok_or_else(|| corrupt("missing arrays"))?;
            if name != expected {
                return Err(corrupt(&format!("expected array '{expected}', found '{name}'")));
            }
            Matrix::from_vec(shape.0, shape.1, values).map_err(|_| corrupt(&format!("array '{name}' has wrong length")))
        };
        let params = names
            .iter()
            .zip(&shapes)
            .map(|(n, &s)| read_matrix(n, s))
            .collect::<Result<Vec<_>>>()?;
        let model = GatModel::from_params(config, params)?;

        let mut adam = None;
        let mut metrics = Vec::new();
        while let Some((name, values)) = iter.next() {
            match name.as_str() {
                "adam.step" => {
                    let step = *values.first().ok_or_else(|| corrupt("empty adam.step"))? as u64;
                    let mut moments = Vec::with_capacity(2 * names.len());
                    for prefix in ["adam.m", "adam.v"] {
                        for (n, &s) in names.iter().zip(&shapes) {
                            let (got, vals) = iter.next().ok_or_else(|| corrupt("truncated optimizer state"))?;
                            if got != format!("{prefix}.{n}") {
                                return Err(corrupt(&format!("unexpected array '{got}'")));
                            }
                            moments.push(Matrix::from_vec(s.0, s.1, vals).map_err(|_| corrupt("moment length"))?);
                        }
                    }
                    let v = moments.split_off(names.len());
                    adam = Some(AdamState { m: moments, v, step });
                }
                "metrics" => {
                    if values.len() % 5 != 0 {
                        return Err(corrupt("metrics length not a multiple of 5"));
                    }
                    metrics = values
                        .chunks_exact(5)
                        .map(|c| EpochMetrics {
                            epoch: c[0] as usize,
                            loss: c[1],
                            train_acc: c[2],
                            val_acc: c[3],
                            seconds: c[4],
                        })
                        .collect();
                }
                other => return Err(corrupt(&format!("unknown array '{other}'"))),
            }
        }
        Ok(Self {
            model,
            adam,
            metrics,
            seed,
            epoch,
            slic,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &GatModel,
    adam: Option<&AdamState>,
    metrics: &[EpochMetrics],
    seed: u64,
) -> Result<()> {
    Checkpoint {
        model: model.clone(),
        adam: adam.cloned(),
        metrics: metrics.to_vec(),
        seed,
        epoch: metrics.len(),
        slic: None,
    }
    .save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::load(path)
}
