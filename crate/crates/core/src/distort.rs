//! Seeded, replayable image distortions: spline-bounded shadows, perspective,
//! rotation, elastic deformation, creases and brightness/contrast.
//!
//! A [`DistortionRecipe`] is a template; [`apply_recipe`] fills in every
//! sampled parameter and returns the realised recipe, which replays to the
//! same bytes. Geometric steps carry their homography so the ground-truth
//! corners can be moved in exact arithmetic. Elastic noise is not
//! propagated to the corners.

use image::{Rgb, RgbImage};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{signed_area, solve_homography, Homography, Point, Quad};
use crate::render::PaperImage;
use crate::seeds;

/// Canvas colour exposed by geometric steps.
pub const BACKGROUND: [u8; 3] = [24, 24, 28];

#[derive(Debug, Error, PartialEq)]
pub enum DistortError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("degenerate polygon (area {0:.3} px^2)")]
    DegeneratePolygon(f64),
    #[error("singular homography")]
    SingularHomography,
    #[error("replay mismatch: {0}")]
    ReplayMismatch(String),
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), DistortError> {
    if cond {
        Ok(())
    } else {
        Err(DistortError::InvalidParameter(msg()))
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

// ---------------------------------------------------------------------------
// Catmull-Rom shadows

/// Uniform Catmull-Rom (tension ½) between `p1` (t = 0) and `p2` (t = 1).
pub fn catmull_rom(p0: Point, p1: Point, p2: Point, p3: Point, t: f64) -> Point {
    let t2 = t * t;
    let t3 = t2 * t;
    let w0 = -0.5 * t3 + t2 - 0.5 * t;
    let w1 = 1.5 * t3 - 2.5 * t2 + 1.0;
    let w2 = -1.5 * t3 + 2.0 * t2 + 0.5 * t;
    let w3 = 0.5 * t3 - 0.5 * t2;
    Point::new(
        w0 * p0.x + w1 * p1.x + w2 * p2.x + w3 * p3.x,
        w0 * p0.y + w1 * p1.y + w2 * p2.y + w3 * p3.y,
    )
}

pub const SAMPLES_PER_SEGMENT: usize = 16;

/// Closed spline through `controls` (wrapped), `per_segment` samples per span.
pub fn closed_spline(controls: &[Point], per_segment: usize) -> Vec<Point> {
    let n = controls.len();
    let mut out = Vec::with_capacity(n * per_segment);
    for i in 0..n {
        let p0 = controls[(i + n - 1) % n];
        let p1 = controls[i];
        let p2 = controls[(i + 1) % n];
        let p3 = controls[(i + 2) % n];
        for k in 0..per_segment {
            out.push(catmull_rom(p0, p1, p2, p3, k as f64 / per_segment as f64));
        }
    }
    out
}

/// Random star-shaped control loop inside `[0,w-1]×[0,h-1]`.
pub fn shadow_controls(
    rng: &mut ChaCha8Rng,
    n_control: usize,
    width: u32,
    height: u32,
) -> Result<Vec<Point>, DistortError> {
    check(n_control >= 4, || format!("n_control must be >= 4, got {n_control}"))?;
    check(width > 1 && height > 1, || "image too small for a shadow".into())?;
    let (w, h) = ((width - 1) as f64, (height - 1) as f64);
    let span = w.min(h);
    let centre = Point::new(uniform(rng, 0.1 * w, 0.9 * w), uniform(rng, 0.1 * h, 0.9 * h));
    let radius = uniform(rng, 0.2, 0.6) * span;
    let phase = uniform(rng, 0.0, std::f64::consts::TAU);
    let step = std::f64::consts::TAU / n_control as f64;
    let pts = (0..n_control)
        .map(|i| {
            let theta = phase + step * (i as f64 + uniform(rng, -0.3, 0.3));
            let r = radius * uniform(rng, 0.5, 1.0);
            // x stretched so shadows follow the landscape aspect
            let p = centre + Point::new(theta.cos() * r * (w / span).sqrt(), theta.sin() * r);
            Point::new(p.x.clamp(0.0, w), p.y.clamp(0.0, h))
        })
        .collect();
    Ok(pts)
}

/// Closed shadow outline: Catmull-Rom through `n_control` seeded control
/// points, sampled 16 times per segment.
pub fn shadow_polygon(
    seed: u64,
    n_control: usize,
    width: u32,
    height: u32,
) -> Result<Vec<Point>, DistortError> {
    let controls = shadow_controls(&mut seeds::rng(seed), n_control, width, height)?;
    Ok(closed_spline(&controls, SAMPLES_PER_SEGMENT))
}

/// Darkens pixels strictly inside `polygon` by `1 - intensity`. Within
/// `feather` px of the outline the factor ramps linearly to 1 at the edge.
/// Pixels outside the polygon are untouched.
pub fn apply_shadow(
    img: &PaperImage,
    polygon: &[Point],
    intensity: f64,
    feather: f64,
) -> Result<PaperImage, DistortError> {
    check(intensity > 0.0 && intensity <= 1.0, || {
        format!("shadow intensity must be in (0, 1], got {intensity}")
    })?;
    check(feather >= 0.0 && feather.is_finite(), || {
        format!("feather must be >= 0, got {feather}")
    })?;
    let area = if polygon.len() < 3 { 0.0 } else { signed_area(polygon).abs() };
    if !(area >= 1.0) {
        return Err(DistortError::DegeneratePolygon(area));
    }

    let mut out = img.clone();
    let (w, h) = (img.width() as i64, img.height() as i64);
    let min_x = polygon.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
    let max_x = polygon.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
    let min_y = polygon.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let max_y = polygon.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
    let x0 = (min_x.floor() as i64).max(0);
    let x1 = (max_x.ceil() as i64).min(w - 1);
    let y0 = (min_y.floor() as i64).max(0);
    let y1 = (max_y.ceil() as i64).min(h - 1);
    if x0 > x1 || y0 > y1 {
        return Ok(out);
    }
    let bw = (x1 - x0 + 1) as usize;
    let bh = (y1 - y0 + 1) as usize;

    // Distance to the outline, only where it is below `feather`.
    let mut dist = vec![f64::INFINITY; if feather > 0.0 { bw * bh } else { 0 }];
    if feather > 0.0 {
        let n = polygon.len();
        for i in 0..n {
            let (a, b) = (polygon[i], polygon[(i + 1) % n]);
            let ex0 = ((a.x.min(b.x) - feather).floor() as i64).max(x0);
            let ex1 = ((a.x.max(b.x) + feather).ceil() as i64).min(x1);
            let ey0 = ((a.y.min(b.y) - feather).floor() as i64).max(y0);
            let ey1 = ((a.y.max(b.y) + feather).ceil() as i64).min(y1);
            for y in ey0..=ey1 {
                for x in ex0..=ex1 {
                    let d = crate::geometry::point_segment_distance(
                        Point::new(x as f64, y as f64),
                        a,
                        b,
                    );
                    let slot = &mut dist[(y - y0) as usize * bw + (x - x0) as usize];
                    if d < *slot {
                        *slot = d;
                    }
                }
            }
        }
    }

    let n = polygon.len();
    let mut crossings = Vec::new();
    for y in y0..=y1 {
        let yc = y as f64;
        crossings.clear();
        for i in 0..n {
            let (a, b) = (polygon[i], polygon[(i + 1) % n]);
            if (a.y > yc) != (b.y > yc) {
                crossings.push(a.x + (yc - a.y) * (b.x - a.x) / (b.y - a.y));
            }
        }
        crossings.sort_by(f64::total_cmp);
        for pair in crossings.chunks_exact(2) {
            // strictly inside: pixel centre between the two crossings
            let xa = ((pair[0].floor() as i64) + 1).max(x0);
            let xb = ((pair[1].ceil() as i64) - 1).min(x1);
            for x in xa..=xb {
                let xf = x as f64;
                if !(xf > pair[0] && xf < pair[1]) {
                    continue;
                }
                let factor = if feather > 0.0 {
                    let d = dist[(y - y0) as usize * bw + (x - x0) as usize];
                    1.0 - intensity * (d / feather).min(1.0)
                } else {
                    1.0 - intensity
                };
                let p = out.pixels.get_pixel_mut(x as u32, y as u32);
                for c in p.0.iter_mut() {
                    *c = (*c as f64 * factor).round().clamp(0.0, 255.0) as u8;
                }
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Geometric warps

/// Homography moving each image corner by at most `jitter · min(w, h)`,
/// displacements drawn uniformly from the disc of that radius.
pub fn random_homography(
    seed: u64,
    jitter: f64,
    width: u32,
    height: u32,
) -> Result<Homography, DistortError> {
    random_homography_with(&mut seeds::rng(seed), jitter, width, height)
}

fn random_homography_with(
    rng: &mut ChaCha8Rng,
    jitter: f64,
    width: u32,
    height: u32,
) -> Result<Homography, DistortError> {
    check((0.0..=0.25).contains(&jitter), || {
        format!("perspective jitter must be in [0, 0.25], got {jitter}")
    })?;
    check(width > 1 && height > 1, || "image too small to warp".into())?;
    if jitter == 0.0 {
        return Ok(Homography::identity());
    }
    let src = Quad::from_dims(width, height);
    let bound = jitter * width.min(height) as f64;
    for _ in 0..64 {
        let dst = Quad(src.0.map(|p| {
            let r = bound * rng.random::<f64>().sqrt();
            let theta = std::f64::consts::TAU * rng.random::<f64>();
            Point::new(p.x + r * theta.cos(), p.y + r * theta.sin())
        }));
        if !dst.is_convex_clockwise() {
            continue;
        }
        if let Ok(h) = solve_homography(&src, &dst) {
            return Ok(h);
        }
    }
    Err(DistortError::SingularHomography)
}

/// Bilinear sample at a real coordinate; `None` beyond half a pixel outside.
#[inline]
pub(crate) fn sample_bilinear(img: &RgbImage, x: f64, y: f64) -> Option<[f64; 3]> {
    let (w, h) = (img.width(), img.height());
    if !(x >= -0.5 && y >= -0.5 && x <= w as f64 - 0.5 && y <= h as f64 - 0.5) {
        return None;
    }
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let xi = x.floor() as u32;
    let yi = y.floor() as u32;
    let fx = x - xi as f64;
    let fy = y - yi as f64;
    let xj = (xi + 1).min(w - 1);
    let yj = (yi + 1).min(h - 1);
    let p00 = img.get_pixel(xi, yi).0;
    let p10 = img.get_pixel(xj, yi).0;
    let p01 = img.get_pixel(xi, yj).0;
    let p11 = img.get_pixel(xj, yj).0;
    let mut out = [0.0; 3];
    for c in 0..3 {
        let top = p00[c] as f64 * (1.0 - fx) + p10[c] as f64 * fx;
        let bottom = p01[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
        out[c] = top * (1.0 - fy) + bottom * fy;
    }
    Some(out)
}

fn to_pixel(v: [f64; 3]) -> Rgb<u8> {
    Rgb(v.map(|c| c.round().clamp(0.0, 255.0) as u8))
}

/// Forward-warps `img` by `h` onto a `canvas` raster via inverse-mapped
/// bilinear sampling; uncovered pixels get `fill`. The returned corners are
/// `h` applied to the input corners.
pub fn warp(
    img: &PaperImage,
    h: &Homography,
    canvas: (u32, u32),
    fill: [u8; 3],
) -> Result<PaperImage, DistortError> {
    check(canvas.0 > 0 && canvas.1 > 0, || "empty canvas".into())?;
    let inv = h.inverse().map_err(|_| DistortError::SingularHomography)?;
    let m = *inv.matrix();
    let mut out = RgbImage::from_pixel(canvas.0, canvas.1, Rgb(fill));
    for (x, y, px) in out.enumerate_pixels_mut() {
        let (xf, yf) = (x as f64, y as f64);
        let z = m[(2, 0)] * xf + m[(2, 1)] * yf + m[(2, 2)];
        if z <= 0.0 {
            continue;
        }
        let sx = (m[(0, 0)] * xf + m[(0, 1)] * yf + m[(0, 2)]) / z;
        let sy = (m[(1, 0)] * xf + m[(1, 1)] * yf + m[(1, 2)]) / z;
        if let Some(v) = sample_bilinear(&img.pixels, sx, sy) {
            *px = to_pixel(v);
        }
    }
    Ok(PaperImage {
        pixels: out,
        px_per_mm: img.px_per_mm,
        corners: h.apply_quad(&img.corners),
    })
}

/// Canvas size and translation so that `h` applied to a `w`×`h` image fits
/// entirely, keeping the origin when nothing goes negative.
fn fit_canvas(h: &Homography, width: u32, height: u32) -> Result<(Homography, (u32, u32)), DistortError> {
    let q = h.apply_quad(&Quad::from_dims(width, height));
    let min_x = q.0.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
    let min_y = q.0.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let max_x = q.0.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
    let max_y = q.0.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
    let dx = (-min_x).max(0.0).ceil();
    let dy = (-min_y).max(0.0).ceil();
    let shifted = if dx == 0.0 && dy == 0.0 {
        *h
    } else {
        Homography::translation(dx, dy)
            .after(h)
            .map_err(|_| DistortError::SingularHomography)?
    };
    let cw = ((max_x + dx - 1e-9).ceil() as u32 + 1).max(width);
    let ch = ((max_y + dy - 1e-9).ceil() as u32 + 1).max(height);
    Ok((shifted, (cw, ch)))
}

// ---------------------------------------------------------------------------
// Non-projective and photometric steps

/// Smoothed noise displacement scaled so its largest magnitude is `alpha`.
pub struct DisplacementField {
    pub width: u32,
    pub height: u32,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
}

impl DisplacementField {
    pub fn max_magnitude(&self) -> f64 {
        self.dx
            .iter()
            .zip(&self.dy)
            .map(|(a, b)| a.hypot(*b))
            .fold(0.0, f64::max)
    }

    /// Short hex digest of the field, recorded in realised recipes.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.width.to_le_bytes());
        h.update(self.height.to_le_bytes());
        for v in self.dx.iter().chain(&self.dy) {
            h.update(v.to_le_bytes());
        }
        h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur with edge replication.
fn blur(data: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                let xx = (x as i64 + j as i64 - r).clamp(0, w as i64 - 1) as usize;
                acc += kv * data[y * w + xx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                let yy = (y as i64 + j as i64 - r).clamp(0, h as i64 - 1) as usize;
                acc += kv * tmp[yy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Noise is drawn on a lattice of spacing `max(1, ⌊σ/4⌋)` px, smoothed with
/// the matching Gaussian and bilinearly upsampled, so cost does not grow
/// with σ².
pub fn displacement_field(
    seed: u64,
    width: u32,
    height: u32,
    alpha: f64,
    sigma: f64,
) -> Result<DisplacementField, DistortError> {
    check(alpha >= 0.0 && alpha.is_finite(), || format!("alpha must be >= 0, got {alpha}"))?;
    check(sigma > 0.0 && sigma.is_finite(), || format!("sigma must be > 0, got {sigma}"))?;
    let (w, h) = (width as usize, height as usize);
    let n = w * h;
    if alpha == 0.0 {
        return Ok(DisplacementField {
            width,
            height,
            dx: vec![0.0; n],
            dy: vec![0.0; n],
        });
    }
    let spacing = (sigma / 4.0).floor().max(1.0) as usize;
    let gw = (w.saturating_sub(1)) / spacing + 2;
    let gh = (h.saturating_sub(1)) / spacing + 2;
    let mut rng = seeds::rng(seed);
    let mut noise = || -> Vec<f64> { (0..gw * gh).map(|_| uniform(&mut rng, -1.0, 1.0)).collect() };
    let nx = noise();
    let ny = noise();
    let gsigma = sigma / spacing as f64;
    let sx = blur(&nx, gw, gh, gsigma);
    let sy = blur(&ny, gw, gh, gsigma);

    let upsample = |g: &[f64]| -> Vec<f64> {
        let mut out = Vec::with_capacity(n);
        for y in 0..h {
            let gy = y as f64 / spacing as f64;
            let y0 = gy.floor() as usize;
            let fy = gy - y0 as f64;
            for x in 0..w {
                let gx = x as f64 / spacing as f64;
                let x0 = gx.floor() as usize;
                let fx = gx - x0 as f64;
                let at = |xx: usize, yy: usize| g[yy.min(gh - 1) * gw + xx.min(gw - 1)];
                let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1, y0) * fx;
                let bot = at(x0, y0 + 1) * (1.0 - fx) + at(x0 + 1, y0 + 1) * fx;
                out.push(top * (1.0 - fy) + bot * fy);
            }
        }
        out
    };
    let mut dx = upsample(&sx);
    let mut dy = upsample(&sy);
    let peak = dx
        .iter()
        .zip(&dy)
        .map(|(a, b)| a.hypot(*b))
        .fold(0.0, f64::max);
    if peak > 0.0 {
        let s = alpha / peak;
        dx.iter_mut().for_each(|v| *v *= s);
        dy.iter_mut().for_each(|v| *v *= s);
    }
    Ok(DisplacementField { width, height, dx, dy })
}

pub fn apply_displacement(img: &PaperImage, field: &DisplacementField) -> PaperImage {
    let mut out = img.clone();
    let w = img.width() as usize;
    for (x, y, px) in out.pixels.enumerate_pixels_mut() {
        let i = y as usize * w + x as usize;
        let (dx, dy) = (field.dx[i], field.dy[i]);
        if dx == 0.0 && dy == 0.0 {
            continue;
        }
        let sx = (x as f64 + dx).clamp(0.0, (img.width() - 1) as f64);
        let sy = (y as f64 + dy).clamp(0.0, (img.height() - 1) as f64);
        if let Some(v) = sample_bilinear(&img.pixels, sx, sy) {
            *px = to_pixel(v);
        }
    }
    out
}

/// Elastic deformation; returns the image and the field digest.
pub fn elastic_deform(
    img: &PaperImage,
    alpha: f64,
    sigma: f64,
    seed: u64,
) -> Result<(PaperImage, String), DistortError> {
    let field = displacement_field(seed, img.width(), img.height(), alpha, sigma)?;
    let digest = field.digest();
    if alpha == 0.0 {
        return Ok((img.clone(), digest));
    }
    Ok((apply_displacement(img, &field), digest))
}

/// `v' = clamp(gain·(v − 128) + 128 + 255·delta)` on every channel.
pub fn photometric(img: &PaperImage, delta: f64, gain: f64) -> Result<PaperImage, DistortError> {
    check((-0.5..=0.5).contains(&delta), || format!("brightness delta must be in [-0.5, 0.5], got {delta}"))?;
    check((0.5..=2.0).contains(&gain), || format!("contrast gain must be in [0.5, 2], got {gain}"))?;
    let mut out = img.clone();
    if delta == 0.0 && gain == 1.0 {
        return Ok(out);
    }
    let lut: Vec<u8> = (0..256)
        .map(|v| (gain * (v as f64 - 128.0) + 128.0 + 255.0 * delta).round().clamp(0.0, 255.0) as u8)
        .collect();
    for p in out.pixels.pixels_mut() {
        for c in p.0.iter_mut() {
            *c = lut[*c as usize];
        }
    }
    Ok(out)
}

/// Brightness ramp anchored on a line: pixels on the side the normal
/// (at `angle_deg`) points to are darkened, reaching `strength` at
/// `falloff` px from the line.
pub fn crease(
    img: &PaperImage,
    anchor: Point,
    angle_deg: f64,
    strength: f64,
    falloff: f64,
) -> Result<PaperImage, DistortError> {
    check((0.0..=1.0).contains(&strength), || format!("crease strength must be in [0, 1], got {strength}"))?;
    check(falloff > 0.0, || format!("crease falloff must be > 0, got {falloff}"))?;
    let mut out = img.clone();
    if strength == 0.0 {
        return Ok(out);
    }
    let (s, c) = angle_deg.to_radians().sin_cos();
    for (x, y, p) in out.pixels.enumerate_pixels_mut() {
        let d = (x as f64 - anchor.x) * c + (y as f64 - anchor.y) * s;
        if d <= 0.0 {
            continue;
        }
        let factor = 1.0 - strength * (d / falloff).min(1.0);
        for v in p.0.iter_mut() {
            *v = (*v as f64 * factor).round() as u8;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Recipes

fn default_n_control() -> usize {
    6
}
fn default_crease_strength() -> f64 {
    0.15
}
fn default_falloff() -> f64 {
    10.0
}
fn default_fill() -> [u8; 3] {
    BACKGROUND
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowStep {
    #[serde(default = "default_n_control")]
    pub n_control: usize,
    /// 0 disables the step.
    pub intensity: f64,
    #[serde(default)]
    pub feather: f64,
    /// Realised control points.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controls: Option<Vec<Point>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerspectiveStep {
    /// Maximum corner displacement as a fraction of `min(w, h)`.
    pub jitter: f64,
    /// Border added on every side, as a fraction of `min(w, h)`; defaults to
    /// 1.5 × jitter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pad: Option<f64>,
    #[serde(default = "default_fill")]
    pub fill: [u8; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub homography: Option<Homography>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub canvas: Option<[u32; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotateStep {
    /// Angle drawn uniformly from `[-max_deg, max_deg]`.
    pub max_deg: f64,
    #[serde(default = "default_fill")]
    pub fill: [u8; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angle_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub homography: Option<Homography>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub canvas: Option<[u32; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElasticStep {
    pub alpha: f64,
    pub sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreaseStep {
    #[serde(default = "default_crease_strength")]
    pub strength: f64,
    #[serde(default = "default_falloff")]
    pub falloff: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<Point>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angle_deg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhotometricStep {
    /// Maximum |delta|.
    #[serde(default)]
    pub brightness: f64,
    /// Maximum |gain − 1|.
    #[serde(default)]
    pub contrast: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistortionStep {
    Shadow(ShadowStep),
    Perspective(PerspectiveStep),
    Rotate(RotateStep),
    Elastic(ElasticStep),
    Crease(CreaseStep),
    Photometric(PhotometricStep),
}

impl DistortionStep {
    pub fn kind(&self) -> &'static str {
        match self {
            DistortionStep::Shadow(_) => "shadow",
            DistortionStep::Perspective(_) => "perspective",
            DistortionStep::Rotate(_) => "rotate",
            DistortionStep::Elastic(_) => "elastic",
            DistortionStep::Crease(_) => "crease",
            DistortionStep::Photometric(_) => "photometric",
        }
    }

    /// Realised homography of a geometric step.
    pub fn homography(&self) -> Option<&Homography> {
        match self {
            DistortionStep::Perspective(s) => s.homography.as_ref(),
            DistortionStep::Rotate(s) => s.homography.as_ref(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionRecipe {
    pub seed: u64,
    #[serde(default)]
    pub steps: Vec<DistortionStep>,
}

impl DistortionRecipe {
    pub fn new(seed: u64, steps: Vec<DistortionStep>) -> Self {
        DistortionRecipe { seed, steps }
    }

    /// Product of the realised geometric steps, in application order.
    pub fn composed_homography(&self) -> Option<Homography> {
        let mut acc = Homography::identity();
        for step in &self.steps {
            match step {
                DistortionStep::Perspective(_) | DistortionStep::Rotate(_) => {
                    acc = step.homography()?.after(&acc).ok()?;
                }
                _ => {}
            }
        }
        Some(acc)
    }
}

#[derive(Debug, Clone)]
pub struct Distorted {
    /// Output raster; its `corners` are the transformed ground truth.
    pub image: PaperImage,
    pub realised: DistortionRecipe,
}

/// Applies the steps in order. Each step draws from its own stream seeded by
/// (recipe seed, step index); parameters already present are reused as is.
pub fn apply_recipe(img: &PaperImage, recipe: &DistortionRecipe) -> Result<Distorted, DistortError> {
    let mut cur = img.clone();
    let mut realised = Vec::with_capacity(recipe.steps.len());
    for (i, step) in recipe.steps.iter().enumerate() {
        let step_seed = seeds::for_step(recipe.seed, i);
        let mut rng = seeds::rng(step_seed);
        let (next, done) = apply_step(&cur, step, step_seed, &mut rng)?;
        cur = next;
        realised.push(done);
    }
    Ok(Distorted {
        image: cur,
        realised: DistortionRecipe::new(recipe.seed, realised),
    })
}

fn apply_step(
    img: &PaperImage,
    step: &DistortionStep,
    step_seed: u64,
    rng: &mut ChaCha8Rng,
) -> Result<(PaperImage, DistortionStep), DistortError> {
    let (w, h) = (img.width(), img.height());
    match step {
        DistortionStep::Shadow(s) => {
            check((0.0..=1.0).contains(&s.intensity), || {
                format!("shadow intensity must be in [0, 1], got {}", s.intensity)
            })?;
            let controls = match &s.controls {
                Some(c) => {
                    check(c.len() >= 4, || "shadow needs >= 4 control points".into())?;
                    c.clone()
                }
                None => shadow_controls(rng, s.n_control, w, h)?,
            };
            let out = if s.intensity == 0.0 {
                img.clone()
            } else {
                apply_shadow(img, &closed_spline(&controls, SAMPLES_PER_SEGMENT), s.intensity, s.feather)?
            };
            let mut done = s.clone();
            done.n_control = controls.len();
            done.controls = Some(controls);
            Ok((out, DistortionStep::Shadow(done)))
        }
        DistortionStep::Perspective(s) => {
            let (hom, canvas) = match (&s.homography, s.canvas) {
                (Some(hom), Some(c)) => (*hom, (c[0], c[1])),
                _ => {
                    let base = random_homography_with(rng, s.jitter, w, h)?;
                    let pad_frac = s.pad.unwrap_or(1.5 * s.jitter);
                    check((0.0..=1.0).contains(&pad_frac), || format!("pad must be in [0, 1], got {pad_frac}"))?;
                    let pad = (pad_frac * w.min(h) as f64).ceil();
                    let hom = if pad == 0.0 {
                        base
                    } else {
                        Homography::translation(pad, pad)
                            .after(&base)
                            .map_err(|_| DistortError::SingularHomography)?
                    };
                    (hom, (w + 2 * pad as u32, h + 2 * pad as u32))
                }
            };
            let out = if hom == Homography::identity() && canvas == (w, h) {
                img.clone()
            } else {
                warp(img, &hom, canvas, s.fill)?
            };
            let mut done = s.clone();
            done.homography = Some(hom);
            done.canvas = Some([canvas.0, canvas.1]);
            Ok((out, DistortionStep::Perspective(done)))
        }
        DistortionStep::Rotate(s) => {
            let angle = match s.angle_deg {
                Some(a) => a,
                None => {
                    check(s.max_deg >= 0.0 && s.max_deg <= 180.0, || {
                        format!("max_deg must be in [0, 180], got {}", s.max_deg)
                    })?;
                    uniform(rng, -s.max_deg, s.max_deg)
                }
            };
            let (hom, canvas) = match (&s.homography, s.canvas) {
                (Some(hom), Some(c)) => (*hom, (c[0], c[1])),
                _ if angle == 0.0 => (Homography::identity(), (w, h)),
                _ => {
                    let centre = Point::new((w - 1) as f64 / 2.0, (h - 1) as f64 / 2.0);
                    fit_canvas(&Homography::rotation_about(angle.to_radians(), centre), w, h)?
                }
            };
            let out = if hom == Homography::identity() && canvas == (w, h) {
                img.clone()
            } else {
                warp(img, &hom, canvas, s.fill)?
            };
            let mut done = s.clone();
            done.angle_deg = Some(angle);
            done.homography = Some(hom);
            done.canvas = Some([canvas.0, canvas.1]);
            Ok((out, DistortionStep::Rotate(done)))
        }
        DistortionStep::Elastic(s) => {
            let (mut out, digest) = elastic_deform(img, s.alpha, s.sigma, step_seed)?;
            if let Some(expected) = &s.field_hash {
                if *expected != digest {
                    return Err(DistortError::ReplayMismatch(format!(
                        "elastic field hash {digest} != recorded {expected}"
                    )));
                }
            }
            // corners deliberately left untouched
            out.corners = img.corners;
            let mut done = s.clone();
            done.field_hash = Some(digest);
            Ok((out, DistortionStep::Elastic(done)))
        }
        DistortionStep::Crease(s) => {
            let anchor = match s.anchor {
                Some(a) => a,
                None => Point::new(uniform(rng, 0.0, (w - 1) as f64), uniform(rng, 0.0, (h - 1) as f64)),
            };
            let angle = match s.angle_deg {
                Some(a) => a,
                None => uniform(rng, 0.0, 360.0),
            };
            let out = crease(img, anchor, angle, s.strength, s.falloff)?;
            let mut done = s.clone();
            done.anchor = Some(anchor);
            done.angle_deg = Some(angle);
            Ok((out, DistortionStep::Crease(done)))
        }
        DistortionStep::Photometric(s) => {
            let delta = match s.delta {
                Some(d) => d,
                None => uniform(rng, -s.brightness, s.brightness),
            };
            let gain = match s.gain {
                Some(g) => g,
                None => uniform(rng, 1.0 - s.contrast, 1.0 + s.contrast).clamp(0.5, 2.0),
            };
            let out = photometric(img, delta, gain)?;
            let mut done = s.clone();
            done.delta = Some(delta);
            done.gain = Some(gain);
            Ok((out, DistortionStep::Photometric(done)))
        }
    }
}
