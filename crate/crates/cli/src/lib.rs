//! Subcommand implementations behind the `spgat` binary.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use spgat::checkpoint::Checkpoint;
use spgat::dataset::{load_splits, DatasetKind, Image, LabeledDataset};
use spgat::explain::{explain, parse_methods, Method};
use spgat::fidelity::{reports_to_csv, threshold_sweep, DEFAULT_THRESHOLDS};
use spgat::gat::{predict, GatConfig, GatModel};
use spgat::par::par_map;
use spgat::render::{render_graph, render_saliency, RgbImage};
use spgat::superpixel::{graphs_from_text, graphs_to_text, image_to_graph, SlicParams, SpGraph};
use spgat::train::{evaluate, metrics_to_csv, train_from, AdamConfig, LrSchedule, TrainConfig, TrainState};
use spgat::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "spgat",
    version,
    about = "Superpixel graph attention networks with saliency and fidelity"
)]
pub struct Cli {
    /// Directory every artifact is written to.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Raster format for rendered images.
    #[arg(long, global = true, value_enum, default_value_t = Format::Ppm)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Ppm,
    Png,
}

impl Format {
    fn ext(self) -> &'static str {
        match self {
            Format::Ppm => "ppm",
            Format::Png => "png",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Segment one image and export its region adjacency graph.
    Segment(SegmentArgs),
    /// Train a model and write a checkpoint plus per-epoch metrics.
    Train(TrainArgs),
    /// Render saliency overlays for one image.
    Explain(ExplainArgs),
    /// Occlusion fidelity over a threshold sweep.
    Fidelity(FidelityArgs),
    /// Train one model per superpixel count and report test accuracy.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    #[arg(long, default_value = "mnist", value_parser = parse_dataset)]
    pub dataset: DatasetKind,
    #[arg(long, env = "SPGAT_DATA_DIR", default_value = "data")]
    pub data_dir: PathBuf,
}

/// Either a dataset item or an image file.
#[derive(Debug, Clone, Args)]
pub struct SourceArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
    #[arg(long, default_value_t = 0, conflicts_with = "image")]
    pub index: usize,
    /// PNG or PNM file used instead of a dataset item.
    #[arg(long)]
    pub image: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SegmentArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long, default_value_t = 75)]
    pub k: usize,
    /// Upscaling factor of the rendered image.
    #[arg(long, default_value_t = 10)]
    pub scale: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 3)]
    pub heads: usize,
    #[arg(long, default_value_t = 3)]
    pub layers: usize,
    /// Width of each attention head.
    #[arg(long, default_value_t = 16)]
    pub hidden: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Schedule {
    Constant,
    /// Cosine decay of the learning rate to zero over all epochs.
    Cosine,
}

#[derive(Debug, Clone, Args)]
pub struct BudgetArgs {
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, value_enum, default_value_t = Schedule::Constant)]
    pub lr_schedule: Schedule,
    /// Epochs of linear learning-rate warmup.
    #[arg(long, default_value_t = 0)]
    pub warmup: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Training graphs taken from the front of the training split.
    #[arg(long, default_value_t = 5000)]
    pub subset: usize,
    #[arg(long, default_value_t = 1000)]
    pub val_subset: usize,
    #[arg(long, default_value_t = 1000)]
    pub test_subset: usize,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 75)]
    pub k: usize,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub budget: BudgetArgs,
    /// Also write `checkpoint-epochN.ckpt` every this many epochs.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Continue from this checkpoint instead of a fresh model.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Leave the optimizer state out of `model.ckpt`. The file shrinks to a
    /// third; resuming from it restarts Adam.
    #[arg(long)]
    pub weights_only: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Comma-separated methods, or `all` for the four headline methods.
    #[arg(long, default_value = "all", value_parser = parse_method_list)]
    pub methods: MethodList,
    /// Explain this class instead of the predicted one.
    #[arg(long)]
    pub class: Option<usize>,
    /// Overrides the segment count stored in the checkpoint.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub scale: usize,
}

#[derive(Debug, Clone, Args)]
pub struct FidelityArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "all", value_parser = parse_method_list)]
    pub methods: MethodList,
    /// Comma-separated occlusion thresholds in (0, 1).
    #[arg(long, value_parser = parse_thresholds)]
    pub thresholds: Option<Thresholds>,
    /// Test graphs evaluated.
    #[arg(long, default_value_t = 1000)]
    pub subset: usize,
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Comma-separated superpixel counts.
    #[arg(long, default_value = "25,75,150", value_parser = parse_k_list)]
    pub ks: KList,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub budget: BudgetArgs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodList(pub Vec<Method>);

#[derive(Debug, Clone, PartialEq)]
pub struct Thresholds(pub Vec<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct KList(pub Vec<usize>);

fn parse_dataset(s: &str) -> std::result::Result<DatasetKind, String> {
    DatasetKind::from_str(s).map_err(|e| e.to_string())
}

fn parse_method_list(s: &str) -> std::result::Result<MethodList, String> {
    parse_methods(s).map(MethodList).map_err(|e| e.to_string())
}

fn parse_thresholds(s: &str) -> std::result::Result<Thresholds, String> {
    let ts = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("bad threshold '{t}'")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if ts.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
        return Err("thresholds must lie in (0, 1)".into());
    }
    Ok(Thresholds(ts))
}

fn parse_k_list(s: &str) -> std::result::Result<KList, String> {
    let ks = s
        .split(',')
        .map(|k| match k.trim().parse::<usize>() {
            Ok(0) | Err(_) => Err(format!("bad superpixel count '{k}'")),
            Ok(k) => Ok(k),
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(KList(ks))
}

/// Sorted, duplicate-free copy of `ks`, plus the values that were dropped.
pub fn dedup_ks(ks: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut seen = BTreeSet::new();
    let dropped = ks.iter().copied().filter(|k| !seen.insert(*k)).collect();
    (seen.into_iter().collect(), dropped)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_raster(img: &RgbImage, path: &Path, format: Format) -> Result<()> {
    match format {
        Format::Ppm => img.write_ppm(path),
        Format::Png => {
            let buf = image::RgbImage::from_raw(img.width as u32, img.height as u32, img.data.clone())
                .ok_or_else(|| Error::Shape("raster buffer does not match its size".into()))?;
            buf.save(path)
                .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
        }
    }
}

/// Reads a PNG or PNM file; grayscale files stay single-channel.
pub fn read_image(path: &Path) -> Result<Image> {
    let dynamic = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    })?;
    let (w, h) = (dynamic.width() as usize, dynamic.height() as usize);
    if dynamic.color().has_color() {
        Image::from_bytes(h, w, 3, dynamic.to_rgb8().as_raw())
    } else {
        Image::from_bytes(h, w, 1, dynamic.to_luma8().as_raw())
    }
}

fn split_of(splits: spgat::dataset::Splits, split: Split) -> LabeledDataset {
    match split {
        Split::Train => splits.train,
        Split::Val => splits.val,
        Split::Test => splits.test,
    }
}

pub fn load_split(data: &DataArgs, split: Split) -> Result<LabeledDataset> {
    Ok(split_of(load_splits(data.dataset, &data.data_dir)?, split))
}

/// Image, its label when known, and a file-name stem for outputs.
pub fn load_source(src: &SourceArgs) -> Result<(Image, Option<usize>, String)> {
    if let Some(path) = &src.image {
        let stem = path
            .file_stem()
            .map_or("image".into(), |s| s.to_string_lossy().into_owned());
        return Ok((read_image(path)?, None, stem));
    }
    let set = load_split(&src.data, src.split)?;
    let img = set.images.get(src.index).cloned().ok_or_else(|| {
        Error::Index(format!(
            "{} {} split has {} items, index {} requested",
            src.data.dataset.name(),
            src.split.name(),
            set.len(),
            src.index
        ))
    })?;
    let stem = format!("{}-{}-{}", src.data.dataset.name(), src.split.name(), src.index);
    Ok((img, Some(set.labels[src.index]), stem))
}

/// Graphs for the first `count` items of `set`, read from or written to the
/// cache under `out/cache`, keyed by dataset, split, count and SLIC settings.
pub fn cached_graphs(
    out: &Path,
    dataset: DatasetKind,
    split: Split,
    set: &LabeledDataset,
    count: usize,
    params: &SlicParams,
) -> Result<Vec<SpGraph>> {
    params.validate()?;
    let count = count.min(set.len());
    let dir = out.join("cache");
    let path = dir.join(format!(
        "{}-{}-n{count}-k{}-m{:?}-it{}.graphs",
        dataset.name(),
        split.name(),
        params.k_segments,
        params.compactness,
        params.max_iters
    ));
    if let Ok(text) = fs::read_to_string(&path) {
        if let Ok(graphs) = graphs_from_text(&text) {
            if graphs.len() == count {
                return Ok(graphs);
            }
        }
        eprintln!("warning: ignoring unreadable graph cache {}", path.display());
    }
    let items: Vec<(&Image, usize)> = set.iter().take(count).collect();
    let graphs = par_map(&items, |&(img, label)| image_to_graph(img, params, Some(label)))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    ensure_dir(&dir)?;
    write_text(&path, &graphs_to_text(&graphs))?;
    Ok(graphs)
}

pub fn cmd_segment(out: &Path, format: Format, args: &SegmentArgs) -> Result<Vec<PathBuf>> {
    let (img, label, stem) = load_source(&args.source)?;
    let g = image_to_graph(&img, &SlicParams::with_k(args.k), label)?;
    ensure_dir(out)?;
    let raster = out.join(format!("{stem}-k{}-segments.{}", args.k, format.ext()));
    let graph = out.join(format!("{stem}-k{}.graph", args.k));
    write_raster(&render_graph(&img, &g, args.scale)?, &raster, format)?;
    write_text(&graph, &g.to_text())?;
    println!("{} nodes, {} edges", g.n_nodes(), g.edges.len());
    Ok(vec![raster, graph])
}

fn gat_config(model: &ModelArgs, in_features: usize) -> GatConfig {
    GatConfig {
        in_features,
        hidden: model.hidden,
        heads: model.heads,
        layers: model.layers,
        classes: 10,
    }
}

fn train_config(b: &BudgetArgs, checkpoint_every: Option<usize>) -> TrainConfig {
    TrainConfig {
        epochs: b.epochs,
        batch_size: b.batch,
        seed: b.seed,
        adam: AdamConfig {
            learning_rate: b.lr,
            ..AdamConfig::default()
        },
        schedule: match b.lr_schedule {
            Schedule::Constant => LrSchedule::Constant,
            Schedule::Cosine => LrSchedule::Cosine,
        },
        warmup_epochs: b.warmup,
        checkpoint_every,
    }
}

/// Graphs for the training, validation and test subsets of one dataset.
pub struct GraphSplits {
    pub train: Vec<SpGraph>,
    pub val: Vec<SpGraph>,
    pub test: Vec<SpGraph>,
    pub channels: usize,
}

pub fn graph_splits(out: &Path, data: &DataArgs, budget: &BudgetArgs, params: &SlicParams) -> Result<GraphSplits> {
    let splits = load_splits(data.dataset, &data.data_dir)?;
    let channels = splits.train.images.first().map_or(1, Image::channels);
    // CIFAR-10 with a single training batch has no held-out validation batch.
    let (val_set, val_split) = if splits.val.is_empty() {
        (&splits.test, Split::Test)
    } else {
        (&splits.val, Split::Val)
    };
    let graphs = |set: &LabeledDataset, split: Split, n: usize| cached_graphs(out, data.dataset, split, set, n, params);
    Ok(GraphSplits {
        train: graphs(&splits.train, Split::Train, budget.subset)?,
        val: graphs(val_set, val_split, budget.val_subset)?,
        test: graphs(&splits.test, Split::Test, budget.test_subset)?,
        channels,
    })
}

pub fn cmd_train(out: &Path, args: &TrainArgs) -> Result<Vec<PathBuf>> {
    let params = SlicParams::with_k(args.k);
    let cfg = train_config(&args.budget, args.checkpoint_every);
    cfg.validate()?;
    let gs = graph_splits(out, &args.data, &args.budget, &params)?;
    let state = match &args.resume {
        Some(path) => Checkpoint::load(path)?.into_state(),
        None => TrainState::new(GatModel::init(
            gat_config(&args.model, gs.channels + 2),
            args.budget.seed,
        )?),
    };
    ensure_dir(out)?;
    let metrics_path = out.join("metrics.csv");
    let ckpt_path = out.join("model.ckpt");
    let snapshot = |state: &TrainState| Checkpoint {
        slic: Some(params),
        ..Checkpoint::from_state(state, args.budget.seed)
    };
    let state = if cfg.epochs == 0 {
        state
    } else {
        train_from(state, &gs.train, &gs.val, &cfg, |state, due| {
            let m = state.history.last().expect("epoch recorded");
            eprintln!(
                "epoch {:>3}  loss {:.4}  train {:.4}  val {:.4}  ({:.1}s)",
                m.epoch, m.loss, m.train_acc, m.val_acc, m.seconds
            );
            write_text(&metrics_path, &metrics_to_csv(&state.history))?;
            if due {
                snapshot(state).save(out.join(format!("checkpoint-epoch{}.ckpt", m.epoch)))?;
            }
            Ok(())
        })?
    };
    write_text(&metrics_path, &metrics_to_csv(&state.history))?;
    let mut last = snapshot(&state);
    if args.weights_only {
        last.adam = None;
    }
    last.save(&ckpt_path)?;
    if !gs.test.is_empty() {
        println!(
            "test accuracy {:.4} on {} graphs",
            evaluate(&state.model, &gs.test)?,
            gs.test.len()
        );
    }
    Ok(vec![ckpt_path, metrics_path])
}

fn checkpoint_slic(ck: &Checkpoint, k: Option<usize>) -> SlicParams {
    match (k, ck.slic) {
        (Some(k), Some(p)) => SlicParams { k_segments: k, ..p },
        (Some(k), None) => SlicParams::with_k(k),
        (None, Some(p)) => p,
        (None, None) => SlicParams::default(),
    }
}

pub fn cmd_explain(out: &Path, format: Format, args: &ExplainArgs) -> Result<Vec<PathBuf>> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let (img, label, stem) = load_source(&args.source)?;
    let g = image_to_graph(&img, &checkpoint_slic(&ck, args.k), label)?;
    if g.n_features() != ck.model.config.in_features {
        return Err(Error::Contract(format!(
            "checkpoint expects {} node features, image gives {}",
            ck.model.config.in_features,
            g.n_features()
        )));
    }
    if let Some(c) = args.class {
        if c >= ck.model.config.classes {
            return Err(Error::Index(format!(
                "class {c} for a {}-class model",
                ck.model.config.classes
            )));
        }
    }
    let pred = predict(&ck.model, &g)?;
    println!(
        "predicted {pred}{}",
        label.map(|l| format!(", label {l}")).unwrap_or_default()
    );
    ensure_dir(out)?;
    let mut written = Vec::new();
    for &m in &args.methods.0 {
        let s = explain(&ck.model, &g, m, args.class)?;
        let raster = out.join(format!("{stem}-{m}.{}", format.ext()));
        let csv = out.join(format!("{stem}-{m}.csv"));
        write_raster(&render_saliency(&img, &s, &g, args.scale)?, &raster, format)?;
        write_text(&csv, &s.to_csv())?;
        written.extend([raster, csv]);
    }
    Ok(written)
}

pub fn cmd_fidelity(out: &Path, args: &FidelityArgs) -> Result<Vec<PathBuf>> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let params = checkpoint_slic(&ck, args.k);
    let mut thresholds = args
        .thresholds
        .as_ref()
        .map_or_else(|| DEFAULT_THRESHOLDS.to_vec(), |t| t.0.clone());
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let test = load_split(&args.data, Split::Test)?;
    let graphs = cached_graphs(out, args.data.dataset, Split::Test, &test, args.subset, &params)?;
    let reports = threshold_sweep(&ck.model, &graphs, &args.methods.0, &thresholds)?;
    ensure_dir(out)?;
    let path = out.join("fidelity.csv");
    write_text(&path, &reports_to_csv(&reports))?;
    for r in &reports {
        println!(
            "{:<8} base {:.4}  fidelity@{} {:.4}",
            r.method.name(),
            r.base_accuracy,
            r.thresholds[0],
            r.fidelity_at[0]
        );
    }
    Ok(vec![path])
}

pub fn cmd_sweep(out: &Path, args: &SweepArgs) -> Result<Vec<PathBuf>> {
    let (ks, dropped) = dedup_ks(&args.ks.0);
    for k in dropped {
        eprintln!("warning: duplicate superpixel count {k} ignored");
    }
    let cfg = train_config(&args.budget, None);
    cfg.validate()?;
    let mut csv = String::from("k,mean_nodes,test_accuracy\n");
    for &k in &ks {
        let gs = graph_splits(out, &args.data, &args.budget, &SlicParams::with_k(k))?;
        let model = GatModel::init(gat_config(&args.model, gs.channels + 2), args.budget.seed)?;
        let state = train_from(TrainState::new(model), &gs.train, &gs.val, &cfg, |_, _| Ok(()))?;
        let acc = evaluate(&state.model, &gs.test)?;
        let mean_nodes = gs.test.iter().map(SpGraph::n_nodes).sum::<usize>() as f64 / gs.test.len() as f64;
        println!("k {k:>4}  mean nodes {mean_nodes:.1}  test accuracy {acc:.4}");
        csv.push_str(&format!("{k},{mean_nodes},{acc}\n"));
    }
    ensure_dir(out)?;
    let path = out.join("sweep.csv");
    write_text(&path, &csv)?;
    Ok(vec![path])
}

pub fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    match &cli.command {
        Command::Segment(a) => cmd_segment(&cli.out, cli.format, a),
        Command::Train(a) => cmd_train(&cli.out, a),
        Command::Explain(a) => cmd_explain(&cli.out, cli.format, a),
        Command::Fidelity(a) => cmd_fidelity(&cli.out, a),
        Command::Sweep(a) => cmd_sweep(&cli.out, a),
    }
}
