//! Small raster helpers for looking at segmentations, graphs and saliency
//! maps. Output is plain RGB8, written as binary PPM.

use std::fs;
use std::path::Path;

use crate::dataset::Image;
use crate::error::{Error, Result};
use crate::explain::{saliency_to_pixels, Saliency};
use crate::superpixel::{SegmentMap, SpGraph};

pub const NODE_COLOR: [u8; 3] = [220, 30, 30];
pub const EDGE_COLOR: [u8; 3] = [40, 90, 230];
pub const BOUNDARY_COLOR: [u8; 3] = [250, 210, 40];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn put(&mut self, x: i64, y: i64, rgb: [u8; 3]) {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            return;
        }
        let i = (y as usize * self.width + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Binary PPM (P6).
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_ppm()).map_err(|e| Error::io(path, e))
    }

    /// RGBA8 with opaque alpha, the layout canvas `ImageData` expects.
    pub fn to_rgba(&self) -> Vec<u8> {
        self.data
            .chunks_exact(3)
            .flat_map(|p| [p[0], p[1], p[2], 255])
            .collect()
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Nearest-neighbour upscale of `img` by an integer factor.
pub fn image_to_rgb(img: &Image, scale: usize) -> RgbImage {
    let scale = scale.max(1);
    let mut out = RgbImage::new(img.width() * scale, img.height() * scale);
    for y in 0..out.height {
        for x in 0..out.width {
            let p = img.pixel(y / scale, x / scale);
            let rgb = if p.len() == 1 {
                [to_u8(p[0]); 3]
            } else {
                [to_u8(p[0]), to_u8(p[1]), to_u8(p[2])]
            };
            out.put(x as i64, y as i64, rgb);
        }
    }
    out
}

/// Marks every output pixel whose right or lower neighbour lies in another
/// segment.
pub fn draw_boundaries(canvas: &mut RgbImage, seg: &SegmentMap, color: [u8; 3]) {
    let sx = canvas.width / seg.width().max(1);
    let sy = canvas.height / seg.height().max(1);
    let label_at = |x: usize, y: usize| seg.label((y / sy).min(seg.height() - 1), (x / sx).min(seg.width() - 1));
    for y in 0..canvas.height {
        for x in 0..canvas.width {
            let l = label_at(x, y);
            let right = x + 1 < canvas.width && label_at(x + 1, y) != l;
            let down = y + 1 < canvas.height && label_at(x, y + 1) != l;
            if right || down {
                canvas.put(x as i64, y as i64, color);
            }
        }
    }
}

/// Segment centroids in pixel coordinates `(x, y)`.
pub fn segment_centroids(seg: &SegmentMap) -> Vec<(f64, f64)> {
    let mut acc = vec![(0.0, 0.0, 0usize); seg.n_segments()];
    for r in 0..seg.height() {
        for c in 0..seg.width() {
            let a = &mut acc[seg.label(r, c)];
            a.0 += c as f64;
            a.1 += r as f64;
            a.2 += 1;
        }
    }
    acc.into_iter().map(|(x, y, n)| (x / n as f64, y / n as f64)).collect()
}

fn draw_line(canvas: &mut RgbImage, (x0, y0): (f64, f64), (x1, y1): (f64, f64), color: [u8; 3]) {
    let steps = (x1 - x0).abs().max((y1 - y0).abs()).ceil().max(1.0) as usize;
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        canvas.put(
            (x0 + t * (x1 - x0)).round() as i64,
            (y0 + t * (y1 - y0)).round() as i64,
            color,
        );
    }
}

fn draw_dot(canvas: &mut RgbImage, (x, y): (f64, f64), radius: i64, color: [u8; 3]) {
    let (cx, cy) = (x.round() as i64, y.round() as i64);
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            if dx * dx + dy * dy <= radius * radius {
                canvas.put(cx + dx, cy + dy, color);
            }
        }
    }
}

/// Draws the region adjacency graph over `canvas`: edges between segment
/// centroids, then a dot per node.
pub fn draw_graph(canvas: &mut RgbImage, g: &SpGraph) -> Result<()> {
    let seg = g
        .segments
        .as_ref()
        .ok_or_else(|| Error::Contract("graph carries no segment map".into()))?;
    let sx = canvas.width as f64 / seg.width() as f64;
    let sy = canvas.height as f64 / seg.height() as f64;
    let centers: Vec<(f64, f64)> = segment_centroids(seg)
        .into_iter()
        .map(|(x, y)| ((x + 0.5) * sx - 0.5, (y + 0.5) * sy - 0.5))
        .collect();
    for &(a, b) in &g.edges {
        draw_line(canvas, centers[a], centers[b], EDGE_COLOR);
    }
    let radius = (sx.min(sy) / 2.0).round().max(1.0) as i64;
    for &c in &centers {
        draw_dot(canvas, c, radius, NODE_COLOR);
    }
    Ok(())
}

/// Image with segment boundaries and the region adjacency graph on top.
pub fn render_graph(img: &Image, g: &SpGraph, scale: usize) -> Result<RgbImage> {
    let mut canvas = image_to_rgb(img, scale);
    if let Some(seg) = &g.segments {
        draw_boundaries(&mut canvas, seg, BOUNDARY_COLOR);
    }
    draw_graph(&mut canvas, g)?;
    Ok(canvas)
}

/// Blends each pixel towards red by its node's saliency:
/// `(1 − s)·gray + s·red`.
pub fn render_saliency(img: &Image, s: &Saliency, g: &SpGraph, scale: usize) -> Result<RgbImage> {
    let per_pixel = saliency_to_pixels(s, g)?;
    if per_pixel.len() != img.num_pixels() {
        return Err(Error::Shape(format!(
            "segment map covers {} pixels, image has {}",
            per_pixel.len(),
            img.num_pixels()
        )));
    }
    let scale = scale.max(1);
    let mut out = RgbImage::new(img.width() * scale, img.height() * scale);
    for y in 0..out.height {
        for x in 0..out.width {
            let (r, c) = (y / scale, x / scale);
            let gray = img.gray(r, c);
            let w = per_pixel[r * img.width() + c];
            let red = (1.0 - w) * gray + w;
            let other = (1.0 - w) * gray;
            out.put(x as i64, y as i64, [to_u8(red), to_u8(other), to_u8(other)]);
        }
    }
    Ok(out)
}
