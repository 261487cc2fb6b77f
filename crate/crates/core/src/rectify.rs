//! Paper rectification: locate the sheet, fit its four corners, warp to a
//! canonical bird's-eye raster and equalise contrast with CLAHE.
//!
//! Detection is classical. A colour model marks paper pixels (bright, or in
//! the red grid-line hue band); the largest connected region gives the
//! coarse box, and within it the hole-filled region's convex hull is reduced
//! to the maximum-area inscribed quadrilateral, whose sides are then refit
//! to the region boundary.

use std::time::Instant;

use image::{GrayImage, Luma, Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distort::{warp, BACKGROUND};
use crate::geometry::{convex_hull, orient, solve_homography, Homography, HomographyError, Point, Quad};
use crate::render::PaperImage;

#[derive(Debug, Error, PartialEq)]
pub enum RectifyError {
    #[error("no paper region found")]
    NoPaperFound,
    #[error("degenerate quadrilateral: {0}")]
    DegenerateQuad(String),
    #[error("homography: {0}")]
    Homography(#[from] HomographyError),
    #[error("image {width}x{height} is smaller than the {rows}x{cols} tile grid")]
    TinyImage {
        width: u32,
        height: u32,
        rows: u32,
        cols: u32,
    },
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error("warp failed: {0}")]
    Warp(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RectifyConfig {
    pub canonical_width: u32,
    pub canonical_height: u32,
    /// (rows, cols)
    pub clahe_tiles: (u32, u32),
    pub clahe_clip: f64,
    /// Pixels at or above this luma count as paper.
    pub min_luma: u8,
    /// Centre and half-width (degrees) of the grid-line hue band.
    pub grid_hue: (f64, f64),
    pub grid_min_saturation: f64,
    pub grid_min_value: f64,
    /// Smallest accepted paper region as a fraction of the image.
    pub min_area_frac: f64,
    /// Largest mean absolute luma step between horizontal neighbours
    /// accepted inside a paper region.
    pub max_roughness: f64,
}

impl Default for RectifyConfig {
    fn default() -> Self {
        RectifyConfig {
            canonical_width: 2000,
            canonical_height: 800,
            clahe_tiles: (8, 8),
            clahe_clip: 2.0,
            min_luma: 90,
            grid_hue: (0.0, 30.0),
            grid_min_saturation: 0.12,
            grid_min_value: 0.25,
            min_area_frac: 0.05,
            max_roughness: 30.0,
        }
    }
}

impl RectifyConfig {
    pub fn validate(&self) -> Result<(), RectifyError> {
        if self.canonical_width == 0 || self.canonical_height == 0 {
            return Err(RectifyError::BadConfig("canonical dimensions must be positive".into()));
        }
        if self.clahe_tiles.0 == 0 || self.clahe_tiles.1 == 0 {
            return Err(RectifyError::BadConfig("CLAHE tiles must be >= (1,1)".into()));
        }
        if !(self.clahe_clip >= 1.0) {
            return Err(RectifyError::BadConfig(format!(
                "CLAHE clip must be >= 1.0, got {}",
                self.clahe_clip
            )));
        }
        if !(0.0..=1.0).contains(&self.min_area_frac) {
            return Err(RectifyError::BadConfig("min_area_frac must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Inclusive pixel box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BBox {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0 + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RectifyMode {
    CropOnly,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectifyReport {
    pub mode: RectifyMode,
    pub bbox: Option<BBox>,
    pub corners: Option<Quad>,
    pub homography: Option<Homography>,
    pub timings: Vec<StageTiming>,
    pub warnings: Vec<String>,
}

// ---------------------------------------------------------------------------
// Colour model and masks

pub fn luma(p: &Rgb<u8>) -> f64 {
    0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
}

fn in_hue_band(p: &Rgb<u8>, cfg: &RectifyConfig) -> bool {
    let [r, g, b] = p.0.map(|c| c as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    if max < cfg.grid_min_value || max == 0.0 || delta / max < cfg.grid_min_saturation {
        return false;
    }
    let hue = if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let d = (hue - cfg.grid_hue.0).rem_euclid(360.0);
    d.min(360.0 - d) <= cfg.grid_hue.1
}

pub fn is_paper(p: &Rgb<u8>, cfg: &RectifyConfig) -> bool {
    luma(p) >= cfg.min_luma as f64 || in_hue_band(p, cfg)
}

struct Mask {
    w: usize,
    h: usize,
    bits: Vec<bool>,
}

impl Mask {
    fn from_region(img: &RgbImage, b: BBox, cfg: &RectifyConfig) -> Self {
        let (w, h) = (b.width() as usize, b.height() as usize);
        let mut bits = Vec::with_capacity(w * h);
        for y in b.y0..=b.y1 {
            for x in b.x0..=b.x1 {
                bits.push(is_paper(img.get_pixel(x, y), cfg));
            }
        }
        Mask { w, h, bits }
    }

    /// Marks non-paper pixels reachable from the border; everything else
    /// (paper plus enclosed holes such as ink) becomes paper.
    fn fill_holes(&mut self) {
        let (w, h) = (self.w, self.h);
        let mut outside = vec![false; w * h];
        let mut stack = Vec::new();
        let seed = |i: usize, outside: &mut Vec<bool>, stack: &mut Vec<usize>| {
            if !self.bits[i] && !outside[i] {
                outside[i] = true;
                stack.push(i);
            }
        };
        for x in 0..w {
            seed(x, &mut outside, &mut stack);
            seed((h - 1) * w + x, &mut outside, &mut stack);
        }
        for y in 0..h {
            seed(y * w, &mut outside, &mut stack);
            seed(y * w + w - 1, &mut outside, &mut stack);
        }
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if !self.bits[j] && !outside[j] {
                    outside[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        for (b, o) in self.bits.iter_mut().zip(outside) {
            *b = !o;
        }
    }

    /// Largest 4-connected component, as (mask, pixel count, bbox).
    fn largest_component(&self) -> Option<(Vec<bool>, usize, BBox)> {
        let (w, h) = (self.w, self.h);
        let mut seen = vec![false; w * h];
        let mut best: Option<(usize, usize, BBox)> = None;
        let mut stack = Vec::new();
        for start in 0..w * h {
            if !self.bits[start] || seen[start] {
                continue;
            }
            seen[start] = true;
            stack.push(start);
            let mut count = 0;
            let mut bb = BBox {
                x0: u32::MAX,
                y0: u32::MAX,
                x1: 0,
                y1: 0,
            };
            while let Some(i) = stack.pop() {
                count += 1;
                let (x, y) = (i % w, i / w);
                bb.x0 = bb.x0.min(x as u32);
                bb.x1 = bb.x1.max(x as u32);
                bb.y0 = bb.y0.min(y as u32);
                bb.y1 = bb.y1.max(y as u32);
                let mut visit = |j: usize| {
                    if self.bits[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                };
                if x > 0 {
                    visit(i - 1);
                }
                if x + 1 < w {
                    visit(i + 1);
                }
                if y > 0 {
                    visit(i - w);
                }
                if y + 1 < h {
                    visit(i + w);
                }
            }
            if best.is_none_or(|(_, c, _)| count > c) {
                best = Some((start, count, bb));
            }
        }
        let (start, count, bb) = best?;
        let mut comp = vec![false; w * h];
        comp[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if self.bits[j] && !comp[j] {
                    comp[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        Some((comp, count, bb))
    }
}

// ---------------------------------------------------------------------------
// Detection

/// Bounding box of the largest connected paper-coloured region.
pub fn coarse_locate(img: &RgbImage, cfg: &RectifyConfig) -> Result<BBox, RectifyError> {
    let (w, h) = img.dimensions();
    if w == 0 || h == 0 {
        return Err(RectifyError::NoPaperFound);
    }
    let full = BBox {
        x0: 0,
        y0: 0,
        x1: w - 1,
        y1: h - 1,
    };
    let mask = Mask::from_region(img, full, cfg);
    let (_, count, bb) = mask.largest_component().ok_or(RectifyError::NoPaperFound)?;
    let min_pixels = cfg.min_area_frac * (w as f64 * h as f64);
    if (count as f64) < min_pixels.max(1.0) {
        return Err(RectifyError::NoPaperFound);
    }
    Ok(bb)
}

/// Maximum-area quadrilateral with vertices among `hull` (clockwise).
fn max_area_quad(hull: &[Point]) -> [usize; 4] {
    let n = hull.len();
    let tri = |a: usize, b: usize, c: usize| orient(hull[a], hull[b], hull[c]);
    let mut best = (f64::NEG_INFINITY, [0, 1, 2, 3]);
    for i in 0..n {
        for k in i + 2..n {
            let mut bj = (f64::NEG_INFINITY, i + 1);
            for j in i + 1..k {
                let a = tri(i, j, k);
                if a > bj.0 {
                    bj = (a, j);
                }
            }
            let mut bl = (f64::NEG_INFINITY, k + 1);
            for l in k + 1..n {
                let a = tri(i, k, l);
                if a > bl.0 {
                    bl = (a, l);
                }
            }
            if bl.1 >= n {
                continue;
            }
            let area = bj.0 + bl.0;
            if area > best.0 {
                best = (area, [i, bj.1, k, bl.1]);
            }
        }
    }
    best.1
}

/// Drops the hull vertices contributing least area until at most `cap` remain.
fn thin_hull(mut hull: Vec<Point>, cap: usize) -> Vec<Point> {
    while hull.len() > cap {
        let n = hull.len();
        let (idx, _) = (0..n)
            .map(|i| (i, orient(hull[(i + n - 1) % n], hull[i], hull[(i + 1) % n]).abs()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("non-empty hull");
        hull.remove(idx);
    }
    hull
}

/// Total-least-squares line through points: (centroid, unit direction).
fn fit_line(pts: &[Point]) -> Option<(Point, Point)> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let c = pts.iter().fold(Point::default(), |a, &p| a + p) * (1.0 / n);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in pts {
        let d = *p - c;
        sxx += d.x * d.x;
        sxy += d.x * d.y;
        syy += d.y * d.y;
    }
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    Some((c, Point::new(theta.cos(), theta.sin())))
}

fn intersect(a: (Point, Point), b: (Point, Point)) -> Option<Point> {
    let denom = a.1.cross(b.1);
    if denom.abs() < 1e-9 {
        return None;
    }
    let t = (b.0 - a.0).cross(b.1) / denom;
    Some(a.0 + a.1 * t)
}

/// Fits the paper's four corners inside `bbox`.
pub fn find_corners(img: &RgbImage, bbox: BBox, cfg: &RectifyConfig) -> Result<Quad, RectifyError> {
    let (w, h) = img.dimensions();
    if bbox.x1 >= w || bbox.y1 >= h || bbox.x0 > bbox.x1 || bbox.y0 > bbox.y1 {
        return Err(RectifyError::NoPaperFound);
    }
    let region = BBox {
        x0: bbox.x0.saturating_sub(2),
        y0: bbox.y0.saturating_sub(2),
        x1: (bbox.x1 + 2).min(w - 1),
        y1: (bbox.y1 + 2).min(h - 1),
    };
    let mut mask = Mask::from_region(img, region, cfg);
    mask.fill_holes();
    let (comp, count, _) = mask.largest_component().ok_or(RectifyError::NoPaperFound)?;
    let min_pixels = cfg.min_area_frac * (region.width() as f64 * region.height() as f64);
    if (count as f64) < min_pixels.max(16.0) {
        return Err(RectifyError::NoPaperFound);
    }

    // Extreme pixels per row and per column outline the region.
    let (mw, mh) = (mask.w, mask.h);
    let mut boundary = Vec::new();
    for y in 0..mh {
        let row = &comp[y * mw..(y + 1) * mw];
        if let (Some(l), Some(r)) = (row.iter().position(|&b| b), row.iter().rposition(|&b| b)) {
            boundary.push(Point::new(l as f64, y as f64));
            boundary.push(Point::new(r as f64, y as f64));
        }
    }
    for x in 0..mw {
        let top = (0..mh).find(|&y| comp[y * mw + x]);
        let bottom = (0..mh).rev().find(|&y| comp[y * mw + x]);
        if let (Some(t), Some(b)) = (top, bottom) {
            boundary.push(Point::new(x as f64, t as f64));
            boundary.push(Point::new(x as f64, b as f64));
        }
    }

    let hull = thin_hull(convex_hull(&boundary), 256);
    if hull.len() < 4 {
        return Err(RectifyError::DegenerateQuad(format!("hull has {} vertices", hull.len())));
    }
    let idx = max_area_quad(&hull);
    let raw = Quad::from_unordered(idx.map(|i| hull[i]));
    let hull_area = crate::geometry::signed_area(&hull);
    if !raw.is_convex_clockwise() || raw.area() < 0.5 * hull_area || raw.area() < 16.0 {
        return Err(RectifyError::DegenerateQuad(format!(
            "quad area {:.1} vs hull area {:.1}",
            raw.area(),
            hull_area
        )));
    }
    // A paper sheet fills its quad; scattered blobs do not.
    if (count as f64) < 0.8 * raw.area() {
        return Err(RectifyError::DegenerateQuad(format!(
            "region fills {:.0}% of its quad",
            100.0 * count as f64 / raw.area()
        )));
    }

    let roughness = region_roughness(img, region, &comp);
    if roughness > cfg.max_roughness {
        return Err(RectifyError::DegenerateQuad(format!(
            "region texture {roughness:.1} is too rough for paper"
        )));
    }

    let refined = refine_sides(&raw, &boundary).unwrap_or(raw);
    let offset = |q: Quad| q.translate(region.x0 as f64, region.y0 as f64);
    if refined.is_convex_clockwise() && refined.rmse(&raw) < 4.0 {
        Ok(offset(refined))
    } else {
        Ok(offset(raw))
    }
}

/// Mean absolute luma difference between horizontal neighbours that both
/// lie in `comp`.
fn region_roughness(img: &RgbImage, region: BBox, comp: &[bool]) -> f64 {
    let w = region.width() as usize;
    let (mut sum, mut n) = (0.0, 0usize);
    for (r, y) in (region.y0..=region.y1).enumerate() {
        let mut prev: Option<f64> = None;
        for (c, x) in (region.x0..=region.x1).enumerate() {
            if !comp[r * w + c] {
                prev = None;
                continue;
            }
            let v = luma(img.get_pixel(x, y));
            if let Some(p) = prev {
                sum += (v - p).abs();
                n += 1;
            }
            prev = Some(v);
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Refits each side to the boundary points along its middle 90% and
/// intersects neighbouring sides.
fn refine_sides(raw: &Quad, boundary: &[Point]) -> Option<Quad> {
    let mut lines = Vec::with_capacity(4);
    for i in 0..4 {
        let (a, b) = (raw.0[i], raw.0[(i + 1) % 4]);
        let ab = b - a;
        let len = ab.norm();
        if len < 8.0 {
            return None;
        }
        let dir = ab * (1.0 / len);
        let normal = Point::new(-dir.y, dir.x);
        let pts: Vec<Point> = boundary
            .iter()
            .copied()
            .filter(|&p| {
                let t = (p - a).dot(dir) / len;
                (0.05..=0.95).contains(&t) && (p - a).dot(normal).abs() <= 2.0
            })
            .collect();
        if pts.len() < 8 {
            return None;
        }
        lines.push(fit_line(&pts)?);
    }
    let mut corners = [Point::default(); 4];
    for (i, c) in corners.iter_mut().enumerate() {
        *c = intersect(lines[(i + 3) % 4], lines[i])?;
    }
    Some(Quad(corners))
}

// ---------------------------------------------------------------------------
// CLAHE

/// Clips `hist` at `limit` and spreads the excess uniformly: `excess / 256`
/// to every bin, then one more to `excess % 256` evenly spaced bins.
/// Returns the clipped excess.
pub fn clip_histogram(hist: &mut [u32; 256], limit: u32) -> u32 {
    let mut excess = 0;
    for h in hist.iter_mut() {
        if *h > limit {
            excess += *h - limit;
            *h = limit;
        }
    }
    let per_bin = excess / 256;
    let residual = excess % 256;
    for h in hist.iter_mut() {
        *h += per_bin;
    }
    if residual > 0 {
        let step = (256 / residual).max(1) as usize;
        let mut left = residual;
        let mut i = 0;
        while left > 0 && i < 256 {
            hist[i] += 1;
            left -= 1;
            i += step;
        }
    }
    excess
}

/// Clip level for a tile of `tile_pixels` pixels.
pub fn clip_limit(clip: f64, tile_pixels: u32) -> u32 {
    ((clip * tile_pixels as f64 / 256.0).ceil() as u32).max(1)
}

/// Equalisation table: each level maps to 255 × its mid-rank fraction,
/// `(cdf(v−1) + ½·h[v]) / N`, rounded half up.
pub fn equalisation_lut(hist: &[u32; 256]) -> [u8; 256] {
    let n: u64 = hist.iter().map(|&h| h as u64).sum();
    let mut lut = [0u8; 256];
    if n == 0 {
        for (v, l) in lut.iter_mut().enumerate() {
            *l = v as u8;
        }
        return lut;
    }
    let mut below: u64 = 0;
    for v in 0..256 {
        let twice_mid = 2 * below + hist[v] as u64;
        lut[v] = ((255 * twice_mid + n) / (2 * n)) as u8;
        below += hist[v] as u64;
    }
    lut
}

fn tile_edges(extent: u32, tiles: u32) -> Vec<u32> {
    (0..=tiles).map(|i| (i as u64 * extent as u64 / tiles as u64) as u32).collect()
}

/// Per-tile lookup tables, row-major over the tile grid.
pub fn clahe_luts(gray: &GrayImage, tiles: (u32, u32), clip: f64) -> Result<Vec<[u8; 256]>, RectifyError> {
    let (w, h) = gray.dimensions();
    let (rows, cols) = tiles;
    if rows == 0 || cols == 0 {
        return Err(RectifyError::BadConfig("CLAHE tiles must be >= (1,1)".into()));
    }
    if !(clip >= 1.0) {
        return Err(RectifyError::BadConfig(format!("CLAHE clip must be >= 1.0, got {clip}")));
    }
    if w < cols || h < rows {
        return Err(RectifyError::TinyImage {
            width: w,
            height: h,
            rows,
            cols,
        });
    }
    let xe = tile_edges(w, cols);
    let ye = tile_edges(h, rows);
    let mut luts = Vec::with_capacity((rows * cols) as usize);
    for ty in 0..rows as usize {
        for tx in 0..cols as usize {
            let mut hist = [0u32; 256];
            for y in ye[ty]..ye[ty + 1] {
                for x in xe[tx]..xe[tx + 1] {
                    hist[gray.get_pixel(x, y)[0] as usize] += 1;
                }
            }
            let n = (xe[tx + 1] - xe[tx]) * (ye[ty + 1] - ye[ty]);
            clip_histogram(&mut hist, clip_limit(clip, n));
            luts.push(equalisation_lut(&hist));
        }
    }
    Ok(luts)
}

/// Lower tile index and weight of the upper one for coordinate `p`.
fn interp_index(p: u32, centres: &[f64]) -> (usize, usize, f64) {
    let p = p as f64;
    let last = centres.len() - 1;
    if p <= centres[0] {
        return (0, 0, 0.0);
    }
    if p >= centres[last] {
        return (last, last, 0.0);
    }
    let i = centres.partition_point(|&c| c <= p) - 1;
    let t = (p - centres[i]) / (centres[i + 1] - centres[i]);
    (i, i + 1, t)
}

/// CLAHE on a single channel.
pub fn clahe_gray(gray: &GrayImage, tiles: (u32, u32), clip: f64) -> Result<GrayImage, RectifyError> {
    let luts = clahe_luts(gray, tiles, clip)?;
    let (w, h) = gray.dimensions();
    let (rows, cols) = tiles;
    if rows == 1 && cols == 1 {
        let lut = &luts[0];
        return Ok(GrayImage::from_fn(w, h, |x, y| Luma([lut[gray.get_pixel(x, y)[0] as usize]])));
    }
    let centre = |edges: &[u32]| -> Vec<f64> {
        edges.windows(2).map(|e| (e[0] + e[1]) as f64 / 2.0 - 0.5).collect()
    };
    let xc = centre(&tile_edges(w, cols));
    let yc = centre(&tile_edges(h, rows));
    let xi: Vec<_> = (0..w).map(|x| interp_index(x, &xc)).collect();
    let mut out = GrayImage::new(w, h);
    for y in 0..h {
        let (y0, y1, ty) = interp_index(y, &yc);
        for x in 0..w {
            let (x0, x1, tx) = xi[x as usize];
            let v = gray.get_pixel(x, y)[0] as usize;
            let at = |r: usize, c: usize| luts[r * cols as usize + c][v] as f64;
            let top = at(y0, x0) * (1.0 - tx) + at(y0, x1) * tx;
            let bottom = at(y1, x0) * (1.0 - tx) + at(y1, x1) * tx;
            let val = top * (1.0 - ty) + bottom * ty;
            out.put_pixel(x, y, Luma([(val + 0.5).floor().clamp(0.0, 255.0) as u8]));
        }
    }
    Ok(out)
}

/// CLAHE on the luma channel (ITU-R 601 weights); each pixel's channels are
/// shifted by the same luma change, which leaves the colour-difference
/// components untouched.
pub fn clahe(img: &RgbImage, tiles: (u32, u32), clip: f64) -> Result<RgbImage, RectifyError> {
    let y_real: Vec<f64> = img.pixels().map(luma).collect();
    let gray = GrayImage::from_fn(img.width(), img.height(), |x, y| {
        let v = y_real[(y * img.width() + x) as usize];
        Luma([v.round().clamp(0.0, 255.0) as u8])
    });
    let eq = clahe_gray(&gray, tiles, clip)?;
    let mut out = img.clone();
    for (i, (p, q)) in out.pixels_mut().zip(eq.pixels()).enumerate() {
        let d = q[0] as f64 - y_real[i];
        for c in p.0.iter_mut() {
            *c = (*c as f64 + d).round().clamp(0.0, 255.0) as u8;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Pipeline

fn timed<T>(timings: &mut Vec<StageTiming>, stage: &str, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    timings.push(StageTiming {
        stage: stage.to_string(),
        ms: start.elapsed().as_secs_f64() * 1e3,
    });
    out
}

/// Output raster plus report. On failure the partial report is returned
/// alongside the error.
pub fn rectify_pipeline(
    img: &RgbImage,
    cfg: &RectifyConfig,
    mode: RectifyMode,
) -> Result<(PaperImage, RectifyReport), (RectifyError, RectifyReport)> {
    let mut report = RectifyReport {
        mode,
        bbox: None,
        corners: None,
        homography: None,
        timings: Vec::new(),
        warnings: Vec::new(),
    };
    macro_rules! bail {
        ($e:expr) => {
            match $e {
                Ok(v) => v,
                Err(e) => return Err((e.into(), report)),
            }
        };
    }
    bail!(cfg.validate());
    let (w, h) = img.dimensions();
    let bbox = bail!(timed(&mut report.timings, "locate", || coarse_locate(img, cfg)));
    report.bbox = Some(bbox);
    let touches = bbox.x0 == 0 || bbox.y0 == 0 || bbox.x1 + 1 == w || bbox.y1 + 1 == h;

    let (out, px_per_mm) = match mode {
        RectifyMode::CropOnly => {
            let crop = image::imageops::crop_imm(img, bbox.x0, bbox.y0, bbox.width(), bbox.height()).to_image();
            let enhanced = bail!(timed(&mut report.timings, "clahe", || clahe(&crop, cfg.clahe_tiles, cfg.clahe_clip)));
            (enhanced, 0.0)
        }
        RectifyMode::Full => {
            if touches && (bbox.width() < w || bbox.height() < h) {
                report
                    .warnings
                    .push("paper region touches the image border; corners may be clipped".into());
            }
            let corners = bail!(timed(&mut report.timings, "corners", || find_corners(img, bbox, cfg)));
            report.corners = Some(corners);
            let target = Quad::from_dims(cfg.canonical_width, cfg.canonical_height);
            let hom = bail!(timed(&mut report.timings, "homography", || solve_homography(&corners, &target)));
            report.homography = Some(hom);

            let src = PaperImage::full_frame(img.clone(), 0.0);
            let warped = bail!(timed(&mut report.timings, "warp", || {
                warp(&src, &hom, (cfg.canonical_width, cfg.canonical_height), BACKGROUND)
                    .map_err(|e| RectifyError::Warp(e.to_string()))
            }));
            let enhanced = bail!(timed(&mut report.timings, "clahe", || {
                clahe(&warped.pixels, cfg.clahe_tiles, cfg.clahe_clip)
            }));
            (enhanced, 0.0)
        }
    };
    Ok((PaperImage::full_frame(out, px_per_mm), report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::{render_grid, GridConfig};

    fn paper(w_mm: f64, h_mm: f64) -> RgbImage {
        render_grid(&GridConfig::default(), w_mm, h_mm).unwrap().pixels
    }

    #[test]
    fn full_frame_paper_box() {
        let img = paper(60.0, 30.0);
        let b = coarse_locate(&img, &RectifyConfig::default()).unwrap();
        assert_eq!(b, BBox { x0: 0, y0: 0, x1: img.width() - 1, y1: img.height() - 1 });
    }

    #[test]
    fn pasted_paper_box() {
        let sheet = paper(50.0, 30.0);
        let mut canvas = RgbImage::from_pixel(700, 400, Rgb([0, 0, 0]));
        image::imageops::replace(&mut canvas, &sheet, 100, 50);
        let b = coarse_locate(&canvas, &RectifyConfig::default()).unwrap();
        assert!(b.x0.abs_diff(100) <= 5 && b.y0.abs_diff(50) <= 5);
        assert!(b.x1.abs_diff(100 + sheet.width() - 1) <= 5);
        assert!(b.y1.abs_diff(50 + sheet.height() - 1) <= 5);
    }

    #[test]
    fn black_image_has_no_paper() {
        let img = RgbImage::from_pixel(64, 64, Rgb([0, 0, 0]));
        assert_eq!(coarse_locate(&img, &RectifyConfig::default()), Err(RectifyError::NoPaperFound));
    }

    #[test]
    fn corners_of_undistorted_paper() {
        let img = paper(60.0, 30.0);
        let cfg = RectifyConfig::default();
        let b = coarse_locate(&img, &cfg).unwrap();
        let q = find_corners(&img, b, &cfg).unwrap();
        assert!(q.rmse(&Quad::from_dims(img.width(), img.height())) < 1e-9, "{q:?}");
    }

    #[test]
    fn noise_is_not_paper() {
        let mut state = 0x2545f4914f6cdd1du64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        let binary = RgbImage::from_fn(200, 150, |_, _| {
            let v = (next() % 2) as u8 * 255;
            Rgb([v, v, v])
        });
        let colour = RgbImage::from_fn(200, 150, |_, _| {
            let v = next();
            Rgb([v as u8, (v >> 8) as u8, (v >> 16) as u8])
        });
        let cfg = RectifyConfig::default();
        let full = BBox { x0: 0, y0: 0, x1: 199, y1: 149 };
        for img in [binary, colour] {
            let r = find_corners(&img, full, &cfg);
            assert!(
                matches!(r, Err(RectifyError::NoPaperFound) | Err(RectifyError::DegenerateQuad(_))),
                "{r:?}"
            );
        }
    }

    #[test]
    fn max_area_quad_picks_square_corners() {
        let mut pts: Vec<Point> = Vec::new();
        for i in 0..=10 {
            let t = i as f64;
            pts.extend([Point::new(t, 0.0), Point::new(10.0, t), Point::new(t, 10.0), Point::new(0.0, t)]);
        }
        pts.push(Point::new(-0.2, 5.0));
        let hull = convex_hull(&pts);
        let idx = max_area_quad(&hull);
        let q = Quad::from_unordered(idx.map(|i| hull[i]));
        assert_eq!(q, Quad::from_dims(11, 11));
    }

    #[test]
    fn clip_histogram_redistributes() {
        let mut h = [0u32; 256];
        h[10] = 1000;
        h[20] = 24;
        let excess = clip_histogram(&mut h, 100);
        assert_eq!(excess, 900);
        assert_eq!(h.iter().sum::<u32>(), 1024);
        assert!(h.iter().all(|&b| b <= 100 + 900 / 256 + 1));
    }

    #[test]
    fn constant_image_stays_constant() {
        // 1024-pixel tiles; smaller tiles quantise the redistributed
        // histogram too coarsely for a one-level tolerance.
        for v in 0..=255u8 {
            let img = RgbImage::from_pixel(256, 256, Rgb([v, v, v]));
            let out = clahe(&img, (8, 8), 2.0).unwrap();
            for p in out.pixels() {
                assert!((p[0] as i32 - v as i32).abs() <= 1, "level {v} -> {}", p[0]);
            }
        }
    }

    #[test]
    fn tiny_image_rejected() {
        let img = RgbImage::new(4, 4);
        assert!(matches!(clahe(&img, (8, 8), 2.0), Err(RectifyError::TinyImage { .. })));
        assert!(matches!(clahe(&img, (1, 1), 0.5), Err(RectifyError::BadConfig(_))));
    }

    #[test]
    fn clahe_preserves_colour_difference() {
        let img = RgbImage::from_fn(32, 32, |x, y| Rgb([(x * 8) as u8, 100, (y * 8) as u8]));
        let out = clahe(&img, (2, 2), 2.0).unwrap();
        for (p, q) in img.pixels().zip(out.pixels()) {
            let d0 = q[0] as i32 - p[0] as i32;
            let d1 = q[1] as i32 - p[1] as i32;
            if (1..254).contains(&q[0]) && (1..254).contains(&q[1]) {
                assert!((d0 - d1).abs() <= 1);
            }
        }
    }

    #[test]
    fn pipeline_on_canonical_input_is_identity() {
        let img = paper(60.0, 25.0);
        let cfg = RectifyConfig {
            canonical_width: img.width(),
            canonical_height: img.height(),
            ..RectifyConfig::default()
        };
        let (out, report) = rectify_pipeline(&img, &cfg, RectifyMode::Full).unwrap();
        let m = report.homography.unwrap();
        let rows = m.rows();
        for r in 0..3 {
            for c in 0..3 {
                let e = if r == c { 1.0 } else { 0.0 };
                assert!((rows[r][c] - e).abs() < 1e-2);
            }
        }
        assert_eq!(out.width(), img.width());
        let again = rectify_pipeline(&img, &cfg, RectifyMode::Full).unwrap().0;
        assert_eq!(again, out);
    }

    #[test]
    fn crop_only_mode_crops_to_box() {
        let sheet = paper(40.0, 20.0);
        let mut canvas = RgbImage::from_pixel(500, 300, Rgb(BACKGROUND));
        image::imageops::replace(&mut canvas, &sheet, 30, 40);
        let (out, report) = rectify_pipeline(&canvas, &RectifyConfig::default(), RectifyMode::CropOnly).unwrap();
        assert_eq!((out.width(), out.height()), sheet.dimensions());
        assert!(report.corners.is_none());
        let err = rectify_pipeline(&RgbImage::new(50, 50), &RectifyConfig::default(), RectifyMode::Full);
        assert!(matches!(err, Err((RectifyError::NoPaperFound, _))));
    }
}
