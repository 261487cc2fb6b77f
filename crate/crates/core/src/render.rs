//! Paper-style rendering of 12-lead records in the 3×4 layout.

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Quad;
use crate::waveform::{EcgRecord, Lead};

#[derive(Debug, Error, PartialEq)]
pub enum RenderError {
    #[error("record too short for a 3x4 layout: {duration_s:.3} s gives {window_s:.3} s windows (need >= 1 s)")]
    TooShort { duration_s: f64, window_s: f64 },
    #[error("bad dimensions: {0}")]
    BadDimensions(String),
    #[error("bad grid config: {0}")]
    BadConfig(String),
}

/// Physical paper and drawing constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub px_per_mm: f64,
    pub mm_per_s: f64,
    pub mm_per_mv: f64,
    pub minor_mm: u32,
    pub major_mm: u32,
    pub paper: [u8; 3],
    pub minor_line: [u8; 3],
    pub major_line: [u8; 3],
    pub ink: [u8; 3],
    /// Height of one lead row.
    pub row_mm: f64,
    pub gutter_mm: f64,
    pub margin_mm: f64,
    /// Width of the zone holding each row's calibration pulse.
    pub calibration_mm: f64,
    /// Optional full-length strip of one lead below the 3×4 block.
    pub rhythm_strip: Option<Lead>,
    pub labels: bool,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            px_per_mm: 8.0,
            mm_per_s: 25.0,
            mm_per_mv: 10.0,
            minor_mm: 1,
            major_mm: 5,
            paper: [255, 250, 245],
            minor_line: [244, 196, 196],
            major_line: [228, 128, 128],
            ink: [16, 16, 24],
            row_mm: 25.0,
            gutter_mm: 5.0,
            margin_mm: 5.0,
            calibration_mm: 10.0,
            rhythm_strip: None,
            labels: true,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<(), RenderError> {
        if !(self.px_per_mm >= 4.0) || !self.px_per_mm.is_finite() {
            return Err(RenderError::BadConfig(format!(
                "px_per_mm must be >= 4, got {}",
                self.px_per_mm
            )));
        }
        if self.minor_mm == 0 || self.major_mm % self.minor_mm != 0 || self.major_mm == 0 {
            return Err(RenderError::BadConfig(format!(
                "major_mm ({}) must be a positive multiple of minor_mm ({})",
                self.major_mm, self.minor_mm
            )));
        }
        let positive = [
            ("mm_per_s", self.mm_per_s),
            ("mm_per_mv", self.mm_per_mv),
            ("row_mm", self.row_mm),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(RenderError::BadConfig(format!("{name} must be positive")));
            }
        }
        let non_negative = [
            ("gutter_mm", self.gutter_mm),
            ("margin_mm", self.margin_mm),
            ("calibration_mm", self.calibration_mm),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(RenderError::BadConfig(format!("{name} must be >= 0")));
            }
        }
        Ok(())
    }

    fn px(&self, mm: f64) -> f64 {
        mm * self.px_per_mm
    }
}

/// An 8-bit RGB raster with its physical scale and ground-truth paper corners.
#[derive(Debug, Clone, PartialEq)]
pub struct PaperImage {
    pub pixels: RgbImage,
    pub px_per_mm: f64,
    pub corners: Quad,
}

impl PaperImage {
    /// Wraps a raster whose paper fills the frame.
    pub fn full_frame(pixels: RgbImage, px_per_mm: f64) -> Self {
        let corners = Quad::from_dims(pixels.width(), pixels.height());
        PaperImage {
            pixels,
            px_per_mm,
            corners,
        }
    }

    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl PixelRect {
    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x && x < self.x + self.width && y >= self.y && y < self.y + self.height
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    pub lead: Lead,
    pub row: u32,
    pub column: u32,
    pub t0: f64,
    pub t1: f64,
    pub first_sample: usize,
    pub end_sample: usize,
    pub rect: PixelRect,
    pub baseline_y: f64,
    pub label_rect: Option<PixelRect>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelPlan {
    pub width_mm: f64,
    pub height_mm: f64,
    pub window_s: f64,
    pub panels: Vec<Panel>,
    /// Calibration pulse zone for each row.
    pub calibration: Vec<PixelRect>,
}

/// Lead of each (row, column) in the 3×4 block.
pub const LAYOUT: [[Lead; 4]; 3] = [
    [Lead::I, Lead::AVR, Lead::V1, Lead::V4],
    [Lead::II, Lead::AVL, Lead::V2, Lead::V5],
    [Lead::III, Lead::AVF, Lead::V3, Lead::V6],
];

const GLYPH_W: u32 = 5;
const GLYPH_H: u32 = 7;

fn glyph_scale(cfg: &GridConfig) -> u32 {
    ((cfg.px_per_mm / 4.0).round() as u32).max(1)
}

fn label_size(cfg: &GridConfig, text: &str) -> (u32, u32) {
    let s = glyph_scale(cfg);
    let n = text.chars().count() as u32;
    (n * (GLYPH_W + 1) * s, GLYPH_H * s)
}

/// Splits the record into four consecutive windows and assigns leads to the
/// 3×4 grid. Trailing samples beyond a multiple of four are not drawn.
pub fn plan_layout(rec: &EcgRecord, cfg: &GridConfig) -> Result<PanelPlan, RenderError> {
    cfg.validate()?;
    let n = rec.len();
    let fs = rec.fs as f64;
    let window_samples = n / 4;
    let window_s = window_samples as f64 / fs;
    if rec.fs == 0 || window_s < 1.0 {
        return Err(RenderError::TooShort {
            duration_s: if rec.fs == 0 { 0.0 } else { n as f64 / fs },
            window_s,
        });
    }
    let col_mm = window_s * cfg.mm_per_s;
    let rows = if cfg.rhythm_strip.is_some() { 4 } else { 3 };
    let width_mm = 2.0 * cfg.margin_mm + cfg.calibration_mm + 4.0 * col_mm + 3.0 * cfg.gutter_mm;
    let height_mm = 2.0 * cfg.margin_mm + rows as f64 * cfg.row_mm + (rows - 1) as f64 * cfg.gutter_mm;

    let px = |mm: f64| cfg.px(mm).round() as u32;
    let row_top = |r: u32| cfg.margin_mm + r as f64 * (cfg.row_mm + cfg.gutter_mm);
    let col_left = |c: u32| cfg.margin_mm + cfg.calibration_mm + c as f64 * (col_mm + cfg.gutter_mm);

    let label = |lead: Lead, x_mm: f64, y_mm: f64| {
        cfg.labels.then(|| {
            let (w, h) = label_size(cfg, lead.name());
            PixelRect {
                x: px(x_mm + 1.0),
                y: px(y_mm + 1.0),
                width: w,
                height: h,
            }
        })
    };

    let mut panels = Vec::with_capacity(13);
    for (r, row) in LAYOUT.iter().enumerate() {
        for (c, &lead) in row.iter().enumerate() {
            let (r, c) = (r as u32, c as u32);
            let first = c as usize * window_samples;
            let top = row_top(r);
            panels.push(Panel {
                lead,
                row: r,
                column: c,
                t0: first as f64 / fs,
                t1: (first + window_samples) as f64 / fs,
                first_sample: first,
                end_sample: first + window_samples,
                rect: PixelRect {
                    x: px(col_left(c)),
                    y: px(top),
                    width: px(col_mm),
                    height: px(cfg.row_mm),
                },
                baseline_y: cfg.px(top + cfg.row_mm / 2.0).round(),
                label_rect: label(lead, col_left(c), top),
            });
        }
    }
    if let Some(lead) = cfg.rhythm_strip {
        let top = row_top(3);
        let strip_mm = 4.0 * col_mm + 3.0 * cfg.gutter_mm;
        panels.push(Panel {
            lead,
            row: 3,
            column: 0,
            t0: 0.0,
            t1: (4 * window_samples) as f64 / fs,
            first_sample: 0,
            end_sample: 4 * window_samples,
            rect: PixelRect {
                x: px(col_left(0)),
                y: px(top),
                width: px(strip_mm),
                height: px(cfg.row_mm),
            },
            baseline_y: cfg.px(top + cfg.row_mm / 2.0).round(),
            label_rect: label(lead, col_left(0), top),
        });
    }
    let calibration = (0..rows)
        .map(|r| PixelRect {
            x: px(cfg.margin_mm),
            y: px(row_top(r)),
            width: px(cfg.calibration_mm),
            height: px(cfg.row_mm),
        })
        .collect();

    Ok(PanelPlan {
        width_mm,
        height_mm,
        window_s,
        panels,
        calibration,
    })
}

/// Blank paper with a millimetre grid: minor lines every `minor_mm`, major
/// lines every `major_mm`, both one pixel wide.
pub fn render_grid(cfg: &GridConfig, width_mm: f64, height_mm: f64) -> Result<PaperImage, RenderError> {
    cfg.validate()?;
    if !(width_mm > 0.0 && height_mm > 0.0) || !width_mm.is_finite() || !height_mm.is_finite() {
        return Err(RenderError::BadDimensions(format!("{width_mm} x {height_mm} mm")));
    }
    let w = cfg.px(width_mm).round() as u32;
    let h = cfg.px(height_mm).round() as u32;
    if w == 0 || h == 0 {
        return Err(RenderError::BadDimensions(format!("{w} x {h} px")));
    }
    let mut img = RgbImage::from_pixel(w, h, Rgb(cfg.paper));
    let ratio = cfg.major_mm / cfg.minor_mm;
    let step = cfg.px(cfg.minor_mm as f64);

    let line_positions = |extent: u32| {
        (0u32..)
            .map(move |k| (k, (k as f64 * step).round() as u32))
            .take_while(move |&(_, p)| p < extent)
    };
    // Minor lines first so major lines win at crossings.
    for major_pass in [false, true] {
        let colour = Rgb(if major_pass { cfg.major_line } else { cfg.minor_line });
        for (k, x) in line_positions(w) {
            if (k % ratio == 0) == major_pass {
                for y in 0..h {
                    img.put_pixel(x, y, colour);
                }
            }
        }
        for (k, y) in line_positions(h) {
            if (k % ratio == 0) == major_pass {
                for x in 0..w {
                    img.put_pixel(x, y, colour);
                }
            }
        }
    }
    Ok(PaperImage::full_frame(img, cfg.px_per_mm))
}

/// Draws the record onto fresh paper: one polyline per panel, a 1 mV × 200 ms
/// calibration pulse at the start of every row, and lead labels.
pub fn render_record(rec: &EcgRecord, cfg: &GridConfig) -> Result<PaperImage, RenderError> {
    let plan = plan_layout(rec, cfg)?;
    render_with_plan(rec, cfg, &plan)
}

pub fn render_with_plan(
    rec: &EcgRecord,
    cfg: &GridConfig,
    plan: &PanelPlan,
) -> Result<PaperImage, RenderError> {
    let mut paper = render_grid(cfg, plan.width_mm, plan.height_mm)?;
    let img = &mut paper.pixels;
    let ink = cfg.ink;
    let px_per_s = cfg.mm_per_s * cfg.px_per_mm;
    let px_per_mv = cfg.mm_per_mv * cfg.px_per_mm;
    let fs = rec.fs as f64;

    for panel in &plan.panels {
        let series = &rec.lead(panel.lead)[panel.first_sample..panel.end_sample];
        let x0 = panel.rect.x as f64;
        let point = |i: usize| {
            (
                x0 + i as f64 / fs * px_per_s,
                panel.baseline_y - series[i] * px_per_mv,
            )
        };
        if series.len() == 1 {
            let (x, y) = point(0);
            draw_line(img, x, y, x, y, ink);
        }
        for i in 1..series.len() {
            let (xa, ya) = point(i - 1);
            let (xb, yb) = point(i);
            draw_line(img, xa, ya, xb, yb, ink);
        }
        if let Some(r) = panel.label_rect {
            draw_text(img, r.x, r.y, glyph_scale(cfg), panel.lead.name(), ink);
        }
    }

    for (r, zone) in plan.calibration.iter().enumerate() {
        let baseline = plan
            .panels
            .iter()
            .find(|p| p.row == r as u32)
            .map(|p| p.baseline_y)
            .unwrap_or(zone.y as f64 + zone.height as f64 / 2.0);
        let pulse_w = 0.2 * px_per_s;
        let pulse_h = px_per_mv;
        let left = zone.x as f64;
        let rise = (left + (zone.width as f64 - pulse_w) / 2.0).round();
        let fall = rise + pulse_w;
        let right = left + zone.width as f64 - 1.0;
        let top = baseline - pulse_h;
        draw_line(img, left, baseline, rise, baseline, ink);
        draw_line(img, rise, baseline, rise, top, ink);
        draw_line(img, rise, top, fall, top, ink);
        draw_line(img, fall, top, fall, baseline, ink);
        draw_line(img, fall, baseline, right, baseline, ink);
    }
    Ok(paper)
}

fn blend(img: &mut RgbImage, x: i64, y: i64, colour: [u8; 3], coverage: f64) {
    if x < 0 || y < 0 || x >= img.width() as i64 || y >= img.height() as i64 || coverage <= 0.0 {
        return;
    }
    let c = coverage.min(1.0);
    let p = img.get_pixel_mut(x as u32, y as u32);
    for k in 0..3 {
        let v = p[k] as f64 * (1.0 - c) + colour[k] as f64 * c;
        p[k] = v.round().clamp(0.0, 255.0) as u8;
    }
}

/// One-pixel anti-aliased segment (Wu's algorithm).
pub fn draw_line(img: &mut RgbImage, x0: f64, y0: f64, x1: f64, y1: f64, colour: [u8; 3]) {
    let steep = (y1 - y0).abs() > (x1 - x0).abs();
    let (mut x0, mut y0, mut x1, mut y1) = if steep { (y0, x0, y1, x1) } else { (x0, y0, x1, y1) };
    if x0 > x1 {
        std::mem::swap(&mut x0, &mut x1);
        std::mem::swap(&mut y0, &mut y1);
    }
    let dx = x1 - x0;
    let gradient = if dx == 0.0 { 0.0 } else { (y1 - y0) / dx };
    let mut plot = |a: i64, b: i64, c: f64| {
        if steep {
            blend(img, b, a, colour, c)
        } else {
            blend(img, a, b, colour, c)
        }
    };

    let xs = x0.round() as i64;
    let xe = x1.round() as i64;
    for x in xs..=xe {
        let y = y0 + gradient * (x as f64 - x0);
        let yf = y.floor();
        let frac = y - yf;
        plot(x, yf as i64, 1.0 - frac);
        plot(x, yf as i64 + 1, frac);
    }
}

fn glyph(c: char) -> Option<[u8; 7]> {
    Some(match c {
        'I' => [0b01110, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110],
        'V' => [0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01010, 0b00100],
        'a' => [0b00000, 0b00000, 0b01110, 0b00001, 0b01111, 0b10001, 0b01111],
        'R' => [0b11110, 0b10001, 0b10001, 0b11110, 0b10100, 0b10010, 0b10001],
        'L' => [0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b11111],
        'F' => [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b10000],
        '1' => [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110],
        '2' => [0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111],
        '3' => [0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110],
        '4' => [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010],
        '5' => [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110],
        '6' => [0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110],
        _ => return None,
    })
}

fn draw_text(img: &mut RgbImage, x: u32, y: u32, scale: u32, text: &str, colour: [u8; 3]) {
    for (i, ch) in text.chars().enumerate() {
        let Some(rows) = glyph(ch) else { continue };
        let gx = x + i as u32 * (GLYPH_W + 1) * scale;
        for (ry, bits) in rows.iter().enumerate() {
            for rx in 0..GLYPH_W {
                if bits & (1 << (GLYPH_W - 1 - rx)) == 0 {
                    continue;
                }
                for dy in 0..scale {
                    for dx in 0..scale {
                        let px = gx + rx * scale + dx;
                        let py = y + ry as u32 * scale + dy;
                        if px < img.width() && py < img.height() {
                            img.put_pixel(px, py, Rgb(colour));
                        }
                    }
                }
            }
        }
    }
}
