//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use image::{GrayImage, Luma};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use paperecg::cli::main_with_args;
use paperecg::distort::{
    apply_recipe, DistortionRecipe, DistortionStep, PerspectiveStep, ShadowStep, BACKGROUND,
};
use paperecg::geometry::{solve_homography, Homography, Point, Quad};
use paperecg::metrics::{auroc, cosine_lambda, macro_auroc, positive_weights, ScoredPredictions};
use paperecg::rectify::{
    clahe, clahe_gray, clahe_luts, clip_histogram, clip_limit, equalisation_lut, rectify_pipeline, RectifyConfig,
    RectifyMode,
};
use paperecg::render::{render_record, GridConfig};
use paperecg::synth::synthetic_record;
use paperecg::waveform::DiagnosisVector;

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn main() {
    let checks: Vec<(&'static str, fn() -> (bool, String))> = vec![
        ("homography oracle", homography_oracle),
        ("rectification round-trip (perspective)", rectify_perspective),
        ("rectification round-trip (shadow + perspective)", rectify_shadow),
        ("CLAHE global-equalisation oracle", clahe_oracle),
        ("CLAHE clip invariant", clahe_clip_invariant),
        ("AUROC brute-force oracle", auroc_oracle),
        ("AUROC null check", auroc_null),
        ("class prevalence weights", prevalence_weights),
        ("cosine schedule", cosine_schedule),
        ("determinism", determinism),
    ];
    let mut outcomes = Vec::new();
    for (name, f) in checks {
        let start = Instant::now();
        let (pass, detail) = f();
        let o = Outcome { name, pass, detail };
        println!(
            "{} {}: {} [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.name,
            o.detail,
            start.elapsed().as_secs_f64()
        );
        outcomes.push(o);
    }
    let failed = outcomes.iter().filter(|o| !o.pass).count();
    println!("acceptance: {} passed, {} failed", outcomes.len() - failed, failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------

fn random_projective(r: &mut ChaCha8Rng) -> Homography {
    let rows = [
        [r.random_range(0.8..1.2), r.random_range(-0.2..0.2), r.random_range(-100.0..100.0)],
        [r.random_range(-0.2..0.2), r.random_range(0.8..1.2), r.random_range(-100.0..100.0)],
        [r.random_range(-1e-4..1e-4), r.random_range(-1e-4..1e-4), 1.0],
    ];
    Homography::from_rows(rows).unwrap()
}

fn random_quad(r: &mut ChaCha8Rng) -> Quad {
    let w = r.random_range(500.0..2500.0);
    let h = r.random_range(300.0..1500.0);
    let j = 0.1 * f64::min(w, h);
    let base = [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)];
    Quad(base.map(|(x, y)| Point::new(x + r.random_range(-j..j), y + r.random_range(-j..j))))
}

fn homography_oracle() -> (bool, String) {
    let mut r = rng(1);
    let cases: Vec<(Quad, Homography)> = (0..1000)
        .map(|_| loop {
            let q = random_quad(&mut r);
            let h = random_projective(&mut r);
            if h.apply_quad(&q).is_convex_clockwise() {
                break (q, h);
            }
        })
        .collect();
    let start = Instant::now();
    let mut worst_scaled: f64 = 0.0;
    let mut worst_entry: f64 = 0.0;
    let mut failures = 0;
    for (q, h0) in &cases {
        let Ok(h) = solve_homography(q, &h0.apply_quad(q)) else {
            failures += 1;
            continue;
        };
        let (a, b) = (h.rows(), h0.rows());
        let scale = b.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..3 {
            for j in 0..3 {
                let d = (a[i][j] - b[i][j]).abs();
                worst_scaled = worst_scaled.max(d / scale);
                worst_entry = worst_entry.max(d / b[i][j].abs());
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = failures == 0 && worst_scaled < 1e-6 && worst_entry < 1e-6 && secs < 5.0;
    (
        pass,
        format!(
            "1000 quads, max relative error {worst_scaled:.2e} (vs largest entry), {worst_entry:.2e} (per entry), {failures} solver failures, {secs:.3}s (< 5s)"
        ),
    )
}

// ---------------------------------------------------------------------------

fn rectify_rmse(index: u64, shadow: bool) -> Option<f64> {
    let cfg = RectifyConfig::default();
    let rec = synthetic_record(&format!("acc{index:03}"), 100, 10.0, 2024, None);
    let paper = render_record(&rec, &GridConfig::default()).ok()?;
    let mut steps = Vec::new();
    if shadow {
        steps.push(DistortionStep::Shadow(ShadowStep {
            n_control: 6,
            intensity: 0.5,
            feather: 20.0,
            controls: None,
        }));
    }
    steps.push(DistortionStep::Perspective(PerspectiveStep {
        jitter: 0.10,
        pad: None,
        fill: BACKGROUND,
        homography: None,
        canvas: None,
    }));
    let seed = index + if shadow { 10_000 } else { 0 };
    let distorted = apply_recipe(&paper, &DistortionRecipe::new(seed, steps)).ok()?;
    let (_, report) = rectify_pipeline(&distorted.image.pixels, &cfg, RectifyMode::Full).ok()?;
    let canonical = Quad::from_dims(cfg.canonical_width, cfg.canonical_height);
    Some(report.homography?.apply_quad(&distorted.image.corners).rmse(&canonical))
}

fn rectify_batch(shadow: bool, bound: f64, needed: usize) -> (bool, String) {
    let errors: Vec<Option<f64>> = (0..100u64).into_par_iter().map(|i| rectify_rmse(i, shadow)).collect();
    let ok = errors.iter().filter(|e| e.is_some_and(|v| v < bound)).count();
    let failed = errors.iter().filter(|e| e.is_none()).count();
    let vals: Vec<f64> = errors.iter().flatten().copied().collect();
    let mean = vals.iter().sum::<f64>() / vals.len().max(1) as f64;
    let max = vals.iter().copied().fold(0.0, f64::max);
    (
        ok >= needed,
        format!(
            "{ok}/100 with RMSE < {bound} px (need {needed}); mean {mean:.3} px, max {max:.3} px, {failed} detection failures, canonical width 2000"
        ),
    )
}

fn rectify_perspective() -> (bool, String) {
    rectify_batch(false, 2.0, 95)
}

fn rectify_shadow() -> (bool, String) {
    rectify_batch(true, 5.0, 90)
}

// ---------------------------------------------------------------------------

/// Histogram equalisation by sorting: each level maps to 255 × the mean
/// rank fraction of its pixels, i.e. `(#below + #equal / 2) / N`, rounded
/// half up.
fn global_equalisation(img: &GrayImage) -> GrayImage {
    let mut values: Vec<u8> = img.pixels().map(|p| p[0]).collect();
    values.sort_unstable();
    let n = values.len() as u64;
    let mut map = BTreeMap::new();
    let mut i = 0;
    while i < values.len() {
        let mut j = i;
        while j < values.len() && values[j] == values[i] {
            j += 1;
        }
        let (below, equal) = (i as u64, (j - i) as u64);
        map.insert(values[i], ((255 * (2 * below + equal) + n) / (2 * n)) as u8);
        i = j;
    }
    GrayImage::from_fn(img.width(), img.height(), |x, y| Luma([map[&img.get_pixel(x, y)[0]]]))
}

fn random_gray(r: &mut ChaCha8Rng) -> GrayImage {
    let w = r.random_range(8..200);
    let h = r.random_range(8..200);
    let lo = r.random_range(0..200u32);
    let hi = r.random_range(lo + 1..=255);
    let levels = r.random_range(2..40u32);
    let style = r.random_range(0..3);
    GrayImage::from_fn(w, h, |x, y| {
        let v = match style {
            0 => r.random_range(lo..=hi),
            1 => lo + (r.random_range(0..levels) * (hi - lo)) / levels,
            _ => (lo + (x * 3 + y * 5) % (hi - lo + 1)).min(255),
        };
        Luma([v as u8])
    })
}

fn clahe_oracle() -> (bool, String) {
    let mut r = rng(3);
    let mut mismatches = 0;
    for _ in 0..100 {
        let img = random_gray(&mut r);
        let expected = global_equalisation(&img);
        if clahe_gray(&img, (1, 1), 256.0).unwrap() != expected {
            mismatches += 1;
            continue;
        }
        let rgb = image::DynamicImage::ImageLuma8(img).to_rgb8();
        let out = clahe(&rgb, (1, 1), 256.0).unwrap();
        if out.pixels().zip(expected.pixels()).any(|(a, b)| a.0 != [b[0]; 3]) {
            mismatches += 1;
        }
    }
    (mismatches == 0, format!("100 random images, tiles (1,1), clip 256: {mismatches} mismatches"))
}

fn clahe_clip_invariant() -> (bool, String) {
    let mut r = rng(4);
    let mut violations = 0;
    let mut tiles_checked = 0;
    for _ in 0..100 {
        let img = random_gray(&mut r);
        let rows = r.random_range(1..=8u32).min(img.height());
        let cols = r.random_range(1..=8u32).min(img.width());
        let clip = r.random_range(1.0..6.0);
        let luts = clahe_luts(&img, (rows, cols), clip).unwrap();
        let (w, h) = img.dimensions();
        for ty in 0..rows {
            for tx in 0..cols {
                let (x0, x1) = (tx * w / cols, (tx + 1) * w / cols);
                let (y0, y1) = (ty * h / rows, (ty + 1) * h / rows);
                let mut hist = [0u32; 256];
                for y in y0..y1 {
                    for x in x0..x1 {
                        hist[img.get_pixel(x, y)[0] as usize] += 1;
                    }
                }
                let n = (x1 - x0) * (y1 - y0);
                let limit = (clip * n as f64 / 256.0).ceil() as u32;
                let excess = clip_histogram(&mut hist, clip_limit(clip, n));
                let bound = limit.max(1) + excess.div_ceil(256);
                let lut = equalisation_lut(&hist);
                let monotone = lut.windows(2).all(|p| p[0] <= p[1]);
                let used = &luts[(ty * cols + tx) as usize];
                if hist.iter().any(|&b| b > bound) || hist.iter().sum::<u32>() != n || !monotone || *used != lut {
                    violations += 1;
                }
                tiles_checked += 1;
            }
        }
    }
    (
        violations == 0,
        format!("100 random images, {tiles_checked} tiles: {violations} violations (bin > ceil(clip*N/256) + redistributed share, mass change, non-monotone LUT)"),
    )
}

// ---------------------------------------------------------------------------

fn brute_force_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut twice_wins, mut pairs) = (0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1;
            twice_wins += match scores[i].partial_cmp(&scores[j]).unwrap() {
                std::cmp::Ordering::Greater => 2,
                std::cmp::Ordering::Equal => 1,
                std::cmp::Ordering::Less => 0,
            };
        }
    }
    twice_wins as f64 / (2 * pairs) as f64
}

fn auroc_oracle() -> (bool, String) {
    let mut r = rng(5);
    let mut mismatches = 0;
    let mut with_ties = 0;
    let mut done = 0;
    while done < 1000 {
        let n = r.random_range(2..=200);
        let levels = r.random_range(2..50u32);
        let discrete = r.random_bool(0.5);
        let scores: Vec<f64> = (0..n)
            .map(|_| if discrete { r.random_range(0..levels) as f64 / levels as f64 } else { r.random::<f64>() })
            .collect();
        let p = r.random_range(0.05..0.95);
        let labels: Vec<bool> = (0..n).map(|_| r.random_bool(p)).collect();
        if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
            continue;
        }
        done += 1;
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            with_ties += 1;
        }
        if auroc(&scores, &labels).unwrap() != brute_force_auroc(&scores, &labels) {
            mismatches += 1;
        }
    }
    (
        mismatches == 0,
        format!("1000 instances (n <= 200, {with_ties} with ties): {mismatches} inexact results"),
    )
}

fn auroc_null() -> (bool, String) {
    let mut r = rng(6);
    let n = 10_000;
    let mut preds = ScoredPredictions::default();
    for i in 0..n {
        let mut flags = [0u8; 5];
        for f in flags.iter_mut() {
            *f = r.random_bool(0.5) as u8;
        }
        // exactly balanced on the first label
        flags[0] = (i % 2) as u8;
        preds.truth.push(DiagnosisVector::from_flags(flags));
        preds.scores.push(std::array::from_fn(|_| r.random::<f64>()));
    }
    let summary = macro_auroc(&preds).unwrap();
    let worst = summary.per_label.iter().fold(0.0f64, |m, a| m.max((a - 0.5).abs()));
    let pass = worst <= 0.02 && (summary.macro_auroc - 0.5).abs() <= 0.02;
    (
        pass,
        format!(
            "n = 10000: macro AUROC {:.4}, per-label {:?}, max |AUROC - 0.5| = {worst:.4} (<= 0.02)",
            summary.macro_auroc,
            summary.per_label.map(|a| (a * 1e4).round() / 1e4)
        ),
    )
}

// ---------------------------------------------------------------------------

fn prevalence_weights() -> (bool, String) {
    let counts = [3819u64, 1033, 1850, 3137, 3640];
    let total = 15009u64;
    let published = [25.44, 6.88, 12.33, 20.90, 24.25];
    let w = positive_weights(counts, total).unwrap();
    let mut worst_rate: f64 = 0.0;
    let mut exact = true;
    for k in 0..5 {
        let rate = 100.0 * counts[k] as f64 / total as f64;
        worst_rate = worst_rate.max((rate - published[k]).abs());
        exact &= w.0[k] == total as f64 / counts[k] as f64;
        exact &= (w.0[k] * (counts[k] as f64 / total as f64) - 1.0).abs() < 1e-15;
    }
    (
        worst_rate <= 0.01 && exact,
        format!(
            "max rate deviation {worst_rate:.4} pp (<= 0.01), weights {:?} equal total/count exactly: {exact}",
            w.0.map(|v| (v * 1e4).round() / 1e4)
        ),
    )
}

fn cosine_schedule() -> (bool, String) {
    let starts = [0.25, 0.5, 1.0, 3.0].iter().all(|&c| cosine_lambda(0.0, c) == 1.0);
    let end = cosine_lambda(1.0, 0.5);
    let mid = cosine_lambda(0.25, 0.5);
    let hand = (2.0 + 2f64.sqrt()) / 4.0;
    let pass = starts && end.abs() < 1e-12 && (mid - hand).abs() < 1e-6 && (mid - 0.85355).abs() < 5e-6;
    (
        pass,
        format!(
            "lambda(0, c) = 1: {starts}; lambda(1, 0.5) = {end:.2e}; lambda(0.25, 0.5) = {mid:.8} vs 0.5(1 + cos(pi/4)) = {hand:.8} (diff {:.1e}), 0.85355 to 5 decimals",
            (mid - hand).abs()
        ),
    )
}

// ---------------------------------------------------------------------------

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn run(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("paperecg").chain(args.iter().copied()))
}

fn determinism() -> (bool, String) {
    let tmp = tempfile::tempdir().unwrap();
    let p = |s: &str| tmp.path().join(s).to_string_lossy().into_owned();
    let recipe = p("recipe.json");
    fs::write(
        &recipe,
        r#"{"steps": [
            {"kind": "shadow", "intensity": 0.4, "feather": 15.0},
            {"kind": "crease", "strength": 0.15},
            {"kind": "photometric", "brightness": 0.05, "contrast": 0.1},
            {"kind": "elastic", "alpha": 3.0, "sigma": 12.0},
            {"kind": "rotate", "max_deg": 4.0},
            {"kind": "perspective", "jitter": 0.08}
        ]}"#,
    )
    .unwrap();
    let mut codes = vec![run(&["synth", "--out", &p("wave"), "--seed", "11", "--count", "5"])];
    for (tag, workers) in [("a", "1"), ("b", "1"), ("c", "8")] {
        codes.push(run(&[
            "generate", "--input", &p("wave"), "--out", &p(&format!("gen_{tag}")), "--seed", "42", "--workers", workers,
        ]));
        codes.push(run(&[
            "distort",
            "--manifest",
            &p("gen_a/manifest.json"),
            "--recipe",
            &recipe,
            "--out",
            &p(&format!("dist_{tag}")),
            "--seed",
            "7",
            "--workers",
            workers,
        ]));
    }
    let gen = ["a", "b", "c"].map(|t| tree(&tmp.path().join(format!("gen_{t}"))));
    let dist = ["a", "b", "c"].map(|t| tree(&tmp.path().join(format!("dist_{t}"))));
    let files = gen[0].len() + dist[0].len();
    let codes_ok = codes.iter().all(|&c| c == 0);
    let reruns = gen[0] == gen[1] && dist[0] == dist[1];
    let parallel = gen[0] == gen[2] && dist[0] == dist[2];
    let pngs = dist[0].keys().filter(|k| k.ends_with(".png")).count();
    (
        codes_ok && reruns && parallel && pngs == 5,
        format!(
            "exit codes {codes:?}; {files} files per run set; reruns byte-identical: {reruns}; workers 8 == serial: {parallel}"
        ),
    )
}
