//! Superpixel segmentation and region adjacency graphs.

mod slic;

use std::collections::BTreeSet;
use std::fmt::Write as _;

pub use slic::{rgb_to_lab, slic_segment, SegmentMap, SlicParams};

use crate::dataset::Image;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Undirected edges `(a, b)` with `a < b` between 4-adjacent segments,
/// sorted ascending.
pub fn build_rag(seg: &SegmentMap) -> Vec<(usize, usize)> {
    let (h, w) = (seg.height(), seg.width());
    let mut edges = BTreeSet::new();
    for y in 0..h {
        for x in 0..w {
            let a = seg.label(y, x);
            if x + 1 < w {
                let b = seg.label(y, x + 1);
                if a != b {
                    edges.insert((a.min(b), a.max(b)));
                }
            }
            if y + 1 < h {
                let b = seg.label(y + 1, x);
                if a != b {
                    edges.insert((a.min(b), a.max(b)));
                }
            }
        }
    }
    edges.into_iter().collect()
}

/// One row per segment: mean value of every channel, then the centroid
/// column and row normalized by width and height.
pub fn extract_node_features(img: &Image, seg: &SegmentMap) -> Result<Matrix> {
    if img.height() != seg.height() || img.width() != seg.width() {
        return Err(Error::Shape(format!(
            "image is {}x{}, segment map is {}x{}",
            img.height(),
            img.width(),
            seg.height(),
            seg.width()
        )));
    }
    let ch = img.channels();
    let f = ch + 2;
    let mut feats = Matrix::zeros(seg.n_segments(), f);
    let mut counts = vec![0usize; seg.n_segments()];
    for y in 0..img.height() {
        for x in 0..img.width() {
            let s = seg.label(y, x);
            counts[s] += 1;
            let row = feats.row_mut(s);
            for (acc, v) in row.iter_mut().zip(img.pixel(y, x)) {
                *acc += v;
            }
            row[ch] += x as f64;
            row[ch + 1] += y as f64;
        }
    }
    let (w, h) = (img.width() as f64, img.height() as f64);
    for (s, &n) in counts.iter().enumerate() {
        let row = feats.row_mut(s);
        let n = n as f64;
        for v in &mut row[..ch] {
            *v /= n;
        }
        row[ch] /= n * w;
        row[ch + 1] /= n * h;
    }
    Ok(feats)
}

/// Graph of one image: node features, undirected adjacency, and optionally
/// the segmentation it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SpGraph {
    pub features: Matrix,
    pub edges: Vec<(usize, usize)>,
    pub segments: Option<SegmentMap>,
    pub label: Option<usize>,
}

impl SpGraph {
    pub fn new(features: Matrix, edges: Vec<(usize, usize)>, label: Option<usize>) -> Result<Self> {
        let n = features.rows();
        if let Some(&(a, b)) = edges.iter().find(|(a, b)| *a >= n || *b >= n || a == b) {
            return Err(Error::Index(format!("edge ({a}, {b}) invalid for {n} nodes")));
        }
        Ok(Self {
            features,
            edges,
            segments: None,
            label,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    /// Message-passing edges as parallel `(targets, sources)` lists: both
    /// directions of every undirected edge plus one self-loop per node,
    /// grouped by target.
    pub fn message_edges(&self) -> (Vec<usize>, Vec<usize>) {
        let n = self.n_nodes();
        let mut neighbors: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for &(a, b) in &self.edges {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        let mut targets = Vec::with_capacity(n + 2 * self.edges.len());
        let mut sources = Vec::with_capacity(targets.capacity());
        for (t, ns) in neighbors.iter_mut().enumerate() {
            ns.sort_unstable();
            ns.dedup();
            for &s in ns.iter() {
                targets.push(t);
                sources.push(s);
            }
        }
        (targets, sources)
    }

    /// Writes the line-oriented text form: `N F E` header, `N` feature rows,
    /// `E` edge pairs, then optional `label` and `segments` sections.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {} {}", self.n_nodes(), self.n_features(), self.edges.len());
        for r in 0..self.n_nodes() {
            let row: Vec<String> = self.features.row(r).iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        for (a, b) in &self.edges {
            let _ = writeln!(out, "{a} {b}");
        }
        if let Some(l) = self.label {
            let _ = writeln!(out, "label {l}");
        }
        if let Some(seg) = &self.segments {
            let _ = writeln!(out, "segments {} {}", seg.height(), seg.width());
            for y in 0..seg.height() {
                let row: Vec<String> = (0..seg.width()).map(|x| seg.label(y, x).to_string()).collect();
                let _ = writeln!(out, "{}", row.join(" "));
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().peekable();
        let g = parse_graph(&mut lines)?;
        if let Some(extra) = lines.find(|l| !l.trim().is_empty()) {
            return Err(Error::Format(format!("trailing content: '{extra}'")));
        }
        Ok(g)
    }
}

fn parse_nums<T: std::str::FromStr>(line: &str) -> Result<Vec<T>> {
    line.split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::Format(format!("bad number '{t}'"))))
        .collect()
}

fn parse_graph<'a>(lines: &mut std::iter::Peekable<impl Iterator<Item = &'a str>>) -> Result<SpGraph> {
    let mut next = || {
        lines
            .next()
            .ok_or_else(|| Error::Format("unexpected end of graph".into()))
    };
    let header: Vec<usize> = parse_nums(next()?)?;
    let [n, f, e] = header[..] else {
        return Err(Error::Format("graph header must be 'N F E'".into()));
    };
    let mut data = Vec::with_capacity(n * f);
    for _ in 0..n {
        let row: Vec<f64> = parse_nums(next()?)?;
        if row.len() != f {
            return Err(Error::Format(format!(
                "feature row has {} values, expected {f}",
                row.len()
            )));
        }
        data.extend(row);
    }
    let mut edges = Vec::with_capacity(e);
    for _ in 0..e {
        let pair: Vec<usize> = parse_nums(next()?)?;
        let [a, b] = pair[..] else {
            return Err(Error::Format("edge line must hold two indices".into()));
        };
        edges.push((a, b));
    }
    let mut graph = SpGraph::new(Matrix::from_vec(n, f, data)?, edges, None)?;
    if let Some(rest) = lines.peek().and_then(|l| l.strip_prefix("label ")) {
        graph.label = Some(rest.trim().parse().map_err(|_| Error::Format("bad label".into()))?);
        lines.next();
    }
    if let Some(rest) = lines.peek().and_then(|l| l.strip_prefix("segments ")) {
        let dims: Vec<usize> = parse_nums(rest)?;
        let [h, w] = dims[..] else {
            return Err(Error::Format("segments header must be 'segments H W'".into()));
        };
        lines.next();
        let mut labels = Vec::with_capacity(h * w);
        for _ in 0..h {
            let row: Vec<usize> = parse_nums(
                lines
                    .next()
                    .ok_or_else(|| Error::Format("truncated segment map".into()))?,
            )?;
            if row.len() != w {
                return Err(Error::Format("segment row width mismatch".into()));
            }
            labels.extend(row);
        }
        let seg = SegmentMap::from_labels(h, w, labels)?;
        if seg.n_segments() != n {
            return Err(Error::Format("segment count differs from node count".into()));
        }
        graph.segments = Some(seg);
    }
    Ok(graph)
}

/// Serializes many graphs: a `graphs COUNT` line followed by each graph.
pub fn graphs_to_text(graphs: &[SpGraph]) -> String {
    let mut out = format!("graphs {}\n", graphs.len());
    for g in graphs {
        out.push_str(&g.to_text());
    }
    out
}

pub fn graphs_from_text(text: &str) -> Result<Vec<SpGraph>> {
    let mut lines = text.lines().peekable();
    let count: usize = lines
        .next()
        .and_then(|l| l.strip_prefix("graphs "))
        .and_then(|c| c.trim().parse().ok())
        .ok_or_else(|| Error::Format("missing 'graphs COUNT' header".into()))?;
    let mut graphs = Vec::with_capacity(count);
    for _ in 0..count {
        graphs.push(parse_graph(&mut lines)?);
    }
    Ok(graphs)
}

/// Segments `img`, builds its adjacency graph and node features.
pub fn image_to_graph(img: &Image, params: &SlicParams, label: Option<usize>) -> Result<SpGraph> {
    let seg = slic_segment(img, params)?;
    let edges = build_rag(&seg);
    let features = extract_node_features(img, &seg)?;
    let mut g = SpGraph::new(features, edges, label)?;
    g.segments = Some(seg);
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rag_two_by_two() {
        let seg = SegmentMap::from_labels(2, 2, vec![0, 1, 2, 3]).unwrap();
        assert_eq!(build_rag(&seg), vec![(0, 1), (0, 2), (1, 3), (2, 3)]);
    }

    #[test]
    fn rag_chain() {
        let seg = SegmentMap::from_labels(1, 3, vec![0, 1, 2]).unwrap();
        assert_eq!(build_rag(&seg), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn features_uniform_single_segment() {
        let img = Image::filled(4, 6, 1, 1.0).unwrap();
        let seg = SegmentMap::from_labels(4, 6, vec![0; 24]).unwrap();
        let f = extract_node_features(&img, &seg).unwrap();
        assert_eq!(f.shape(), (1, 3));
        assert_eq!(f.get(0, 0), 1.0);
        assert!((f.get(0, 1) - 2.5 / 6.0).abs() < 1e-15);
        assert!((f.get(0, 2) - 1.5 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn features_single_pixel_segment() {
        let img = Image::new(2, 2, 1, vec![0.4, 0.0, 0.0, 0.0]).unwrap();
        let seg = SegmentMap::from_labels(2, 2, vec![0, 1, 1, 1]).unwrap();
        let f = extract_node_features(&img, &seg).unwrap();
        assert_eq!(f.row(0), &[0.4, 0.0, 0.0]);
    }

    #[test]
    fn k1_graph() {
        let img = Image::filled(8, 8, 3, 0.5).unwrap();
        let g = image_to_graph(&img, &SlicParams::with_k(1), Some(2)).unwrap();
        assert_eq!(g.n_nodes(), 1);
        assert!(g.edges.is_empty());
        assert_eq!(g.n_features(), 5);
        let (t, s) = g.message_edges();
        assert_eq!((t, s), (vec![0], vec![0]));
    }

    #[test]
    fn message_edges_include_self_loops() {
        let g = SpGraph::new(Matrix::zeros(3, 1), vec![(0, 1), (1, 2)], None).unwrap();
        let (t, s) = g.message_edges();
        assert_eq!(t, vec![0, 0, 1, 1, 1, 2, 2]);
        assert_eq!(s, vec![0, 1, 0, 1, 2, 1, 2]);
    }

    #[test]
    fn invalid_edges_rejected() {
        assert!(SpGraph::new(Matrix::zeros(2, 1), vec![(0, 2)], None).is_err());
        assert!(SpGraph::new(Matrix::zeros(2, 1), vec![(1, 1)], None).is_err());
    }

    #[test]
    fn text_round_trip() {
        let img = Image::new(3, 3, 1, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]).unwrap();
        let g = image_to_graph(&img, &SlicParams::with_k(3), Some(4)).unwrap();
        let back = SpGraph::from_text(&g.to_text()).unwrap();
        assert_eq!(back, g);
        let many = graphs_from_text(&graphs_to_text(&[g.clone(), g.clone()])).unwrap();
        assert_eq!(many, vec![g.clone(), g]);
    }

    #[test]
    fn text_rejects_garbage() {
        assert!(SpGraph::from_text("2 1\n").is_err());
        assert!(SpGraph::from_text("1 1 0\nx\n").is_err());
        assert!(SpGraph::from_text("1 1 0\n0.5\nbogus\n").is_err());
    }
}
