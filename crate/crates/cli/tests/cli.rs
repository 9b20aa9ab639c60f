use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spgat::dataset::{encode_idx_images, encode_idx_labels, Image};
use spgat::superpixel::SpGraph;

/// Digit-like images: a bright bar whose position and orientation depend on
/// the label.
fn synthetic_mnist(root: &Path, n: usize) {
    let dir = root.join("mnist");
    fs::create_dir_all(&dir).unwrap();
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let label = i % 10;
        let mut px = vec![0u8; 28 * 28];
        let offset = 4 + 2 * label;
        for t in 4..24 {
            let (r, c) = if label % 2 == 0 { (t, offset) } else { (offset, t) };
            px[r * 28 + c] = 255;
            px[r * 28 + c + 1] = 200;
        }
        images.push(Image::from_bytes(28, 28, 1, &px).unwrap());
        labels.push(label);
    }
    for prefix in ["train", "t10k"] {
        fs::write(
            dir.join(format!("{prefix}-images-idx3-ubyte")),
            encode_idx_images(&images).unwrap(),
        )
        .unwrap();
        fs::write(
            dir.join(format!("{prefix}-labels-idx1-ubyte")),
            encode_idx_labels(&labels).unwrap(),
        )
        .unwrap();
    }
}

struct Env {
    _tmp: tempfile::TempDir,
    data: PathBuf,
    out: PathBuf,
}

fn env() -> Env {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synthetic_mnist(&data, 40);
    let out = tmp.path().join("out");
    Env { _tmp: tmp, data, out }
}

fn spgat(env: &Env, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spgat"))
        .args(args)
        .arg("--out")
        .arg(&env.out)
        .env("SPGAT_DATA_DIR", &env.data)
        .output()
        .unwrap()
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const SMALL: &[&str] = &[
    "--subset",
    "30",
    "--val-subset",
    "10",
    "--test-subset",
    "20",
    "--hidden",
    "4",
    "--layers",
    "2",
    "--batch",
    "8",
    "--seed",
    "3",
];

fn train(env: &Env, epochs: &str) {
    let mut args = vec!["train", "--epochs", epochs, "--k", "25"];
    args.extend(SMALL);
    ok(spgat(env, &args));
}

fn ppm_size(path: &Path) -> (usize, usize) {
    let bytes = fs::read(path).unwrap();
    let header = String::from_utf8_lossy(&bytes[..20]).to_string();
    let mut parts = header.split_whitespace();
    assert_eq!(parts.next(), Some("P6"));
    let w = parts.next().unwrap().parse().unwrap();
    let h = parts.next().unwrap().parse().unwrap();
    (w, h)
}

#[test]
fn segment_dataset_item() {
    let e = env();
    ok(spgat(&e, &["segment", "--index", "0", "--k", "75", "--scale", "4"]));
    let g = SpGraph::from_text(&fs::read_to_string(e.out.join("mnist-test-0-k75.graph")).unwrap()).unwrap();
    assert!((40..=90).contains(&g.n_nodes()), "{} nodes", g.n_nodes());
    assert_eq!(ppm_size(&e.out.join("mnist-test-0-k75-segments.ppm")), (112, 112));
}

#[test]
fn segment_single_superpixel() {
    let e = env();
    ok(spgat(&e, &["segment", "--index", "3", "--k", "1"]));
    let g = SpGraph::from_text(&fs::read_to_string(e.out.join("mnist-test-3-k1.graph")).unwrap()).unwrap();
    assert_eq!(g.n_nodes(), 1);
    assert!(g.edges.is_empty());
}

#[test]
fn segment_png_file() {
    let e = env();
    fs::create_dir_all(&e.out).unwrap();
    let png = e.out.join("input.png");
    let mut img = image::GrayImage::new(20, 16);
    for x in 5..15 {
        img.put_pixel(x, 8, image::Luma([255]));
    }
    img.save(&png).unwrap();
    ok(spgat(
        &e,
        &[
            "--format",
            "png",
            "segment",
            "--image",
            png.to_str().unwrap(),
            "--k",
            "20",
            "--scale",
            "2",
        ],
    ));
    let out = image::open(e.out.join("input-k20-segments.png")).unwrap();
    assert_eq!((out.width(), out.height()), (40, 32));
}

#[test]
fn missing_input_fails_with_diagnostic() {
    let e = env();
    let out = spgat(&e, &["segment", "--image", "/nonexistent/x.png"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    let out = spgat(&e, &["segment", "--index", "999"]);
    assert!(!out.status.success());
}

#[test]
fn unknown_flag_is_rejected() {
    let e = env();
    let out = spgat(&e, &["train", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn zero_epochs_writes_initial_checkpoint() {
    let e = env();
    train(&e, "0");
    assert_eq!(
        fs::read_to_string(e.out.join("metrics.csv")).unwrap(),
        "epoch,loss,train_acc,val_acc,seconds\n"
    );
    let ck = spgat::checkpoint::Checkpoint::load(e.out.join("model.ckpt")).unwrap();
    assert_eq!(ck.epoch, 0);
    assert_eq!(ck.slic.unwrap().k_segments, 25);
}

#[test]
fn weights_only_checkpoint_drops_optimizer_state() {
    let (full, slim) = (env(), env());
    train(&full, "1");
    let mut args = vec!["train", "--epochs", "1", "--k", "25", "--weights-only"];
    args.extend(SMALL);
    ok(spgat(&slim, &args));
    let load = |e: &Env| spgat::checkpoint::Checkpoint::load(e.out.join("model.ckpt")).unwrap();
    let (a, b) = (load(&full), load(&slim));
    assert!(a.adam.is_some() && b.adam.is_none());
    assert_eq!(a.model, b.model);
    let losses = |c: &spgat::checkpoint::Checkpoint| c.metrics.iter().map(|m| m.loss).collect::<Vec<_>>();
    assert_eq!(losses(&a), losses(&b));
    let size = |e: &Env| fs::metadata(e.out.join("model.ckpt")).unwrap().len();
    assert!(size(&slim) * 2 < size(&full));
}

fn without_seconds(csv: &str) -> String {
    csv.lines()
        .map(|l| l.rsplit_once(',').unwrap().0)
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn training_is_deterministic() {
    let (a, b) = (env(), env());
    train(&a, "2");
    train(&b, "2");
    let read = |e: &Env| fs::read_to_string(e.out.join("metrics.csv")).unwrap();
    assert_eq!(read(&a).lines().count(), 3);
    assert_eq!(without_seconds(&read(&a)), without_seconds(&read(&b)));
    let ck = |e: &Env| {
        spgat::checkpoint::Checkpoint::load(e.out.join("model.ckpt"))
            .unwrap()
            .model
    };
    assert_eq!(ck(&a), ck(&b));
    assert!(a.out.join("cache").read_dir().unwrap().count() >= 2);
}

#[test]
fn explain_all_methods_and_class_override() {
    let e = env();
    train(&e, "1");
    let ck = e.out.join("model.ckpt");
    let stdout = ok(spgat(
        &e,
        &[
            "explain",
            "--checkpoint",
            ck.to_str().unwrap(),
            "--index",
            "6",
            "--scale",
            "3",
        ],
    ));
    assert!(stdout.contains("predicted"));
    for m in ["cgsm", "cam", "gradcam", "gbp"] {
        assert_eq!(ppm_size(&e.out.join(format!("mnist-test-6-{m}.ppm"))), (84, 84));
        let csv = fs::read_to_string(e.out.join(format!("mnist-test-6-{m}.csv"))).unwrap();
        assert!(csv.starts_with("node_index,score\n"));
    }
    ok(spgat(
        &e,
        &[
            "explain",
            "--checkpoint",
            ck.to_str().unwrap(),
            "--methods",
            "gradcam",
            "--class",
            "3",
        ],
    ));
    let out = spgat(&e, &["explain", "--checkpoint", ck.to_str().unwrap(), "--class", "12"]);
    assert!(!out.status.success());
}

#[test]
fn cam_on_single_segment_is_constant_tint() {
    let e = env();
    train(&e, "0");
    let ck = e.out.join("model.ckpt");
    ok(spgat(
        &e,
        &[
            "explain",
            "--checkpoint",
            ck.to_str().unwrap(),
            "--methods",
            "cam",
            "--k",
            "1",
            "--index",
            "2",
            "--scale",
            "1",
        ],
    ));
    let bytes = fs::read(e.out.join("mnist-test-2-cam.ppm")).unwrap();
    let pixels = &bytes[bytes.len() - 28 * 28 * 3..];
    // One node means one score for every pixel: either 0 (grayscale) or 1 (pure red).
    let reds: Vec<u8> = pixels.chunks(3).map(|p| p[0]).collect();
    let others: Vec<u8> = pixels.chunks(3).map(|p| p[1]).collect();
    let constant_red = reds.iter().all(|&r| r == 255) && others.iter().all(|&g| g == 0);
    let untinted = pixels.chunks(3).all(|p| p[0] == p[1] && p[1] == p[2]);
    assert!(constant_red || untinted);
}

#[test]
fn fidelity_csv_shapes() {
    let e = env();
    train(&e, "1");
    let ck = e.out.join("model.ckpt");
    let ck = ck.to_str().unwrap();
    ok(spgat(&e, &["fidelity", "--checkpoint", ck, "--subset", "20"]));
    let csv = fs::read_to_string(e.out.join("fidelity.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4 * 8);
    ok(spgat(
        &e,
        &["fidelity", "--checkpoint", ck, "--subset", "20", "--thresholds", "0.01"],
    ));
    let csv = fs::read_to_string(e.out.join("fidelity.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4);
    let out = spgat(&e, &["fidelity", "--checkpoint", ck, "--methods", ""]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_deduplicates_k() {
    let e = env();
    let mut args = vec!["sweep", "--ks", "25,25", "--epochs", "1"];
    args.extend(SMALL);
    let out = spgat(&e, &args);
    assert!(String::from_utf8_lossy(&out.stderr).contains("duplicate"));
    ok(out);
    let csv = fs::read_to_string(e.out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().starts_with("25,"));
}
