//! Synthetic 12-lead records for demos and tests.
//!
//! Each beat is a sum of Gaussian bumps (P, Q, R, S, T) projected onto the
//! leads through fixed per-lead gains. Diagnosis flags change the morphology
//! in simple, visible ways so labelled toy datasets are learnable.

use rand::Rng;

use crate::seeds;
use crate::waveform::{Diagnosis, DiagnosisVector, EcgRecord, Lead};

/// (P, QRS, T) gains per lead, in [`Lead::ALL`] order.
const GAINS: [(f64, f64, f64); 12] = [
    (0.10, 0.8, 0.25),
    (0.15, 1.2, 0.35),
    (0.05, 0.5, 0.10),
    (-0.12, -1.0, -0.30),
    (0.03, 0.2, 0.08),
    (0.10, 0.8, 0.22),
    (0.06, -0.6, 0.10),
    (0.08, -0.3, 0.40),
    (0.08, 0.4, 0.45),
    (0.08, 1.1, 0.45),
    (0.08, 1.3, 0.35),
    (0.07, 1.0, 0.28),
];

fn bump(t: f64, centre: f64, width: f64, amp: f64) -> f64 {
    let z = (t - centre) / width;
    amp * (-0.5 * z * z).exp()
}

/// Deterministic record for `(seed, id)`. When `labels` is `None` each
/// diagnosis is drawn with probability 0.3.
pub fn synthetic_record(
    id: &str,
    fs: u32,
    duration_s: f64,
    seed: u64,
    labels: Option<DiagnosisVector>,
) -> EcgRecord {
    let mut rng = seeds::rng(seeds::for_entry(seed, id));
    let labels = labels.unwrap_or_else(|| {
        let mut v = DiagnosisVector::default();
        for d in Diagnosis::ALL {
            v.set(d, rng.random_bool(0.3));
        }
        v
    });
    let af = labels.get(Diagnosis::Af);
    let mi = labels.get(Diagnosis::Mi);
    let hyp = labels.get(Diagnosis::Hyp);
    let cd = labels.get(Diagnosis::Cd);
    let sttc = labels.get(Diagnosis::Sttc);

    let n = (duration_s * fs as f64).round() as usize;
    let rr_mean = 60.0 / rng.random_range(55.0..95.0);
    let mut beats = Vec::new();
    let mut t = rng.random_range(0.1..0.6);
    while t < duration_s + 1.0 {
        beats.push(t);
        let jitter = if af { rng.random_range(-0.3..0.3) } else { rng.random_range(-0.03..0.03) };
        t += rr_mean * (1.0 + jitter);
    }
    let qrs_w = if cd { 0.030 } else { 0.012 };
    let qrs_gain = if hyp { 1.8 } else { 1.0 };
    let t_gain = if sttc { -0.8 } else { 1.0 };
    let st = if mi { 0.15 } else { 0.0 };
    let q_amp = if mi { -0.35 } else { -0.08 };
    let wander_f = rng.random_range(0.1..0.4);
    let wander_phase = rng.random_range(0.0..std::f64::consts::TAU);

    let mut leads: [Vec<f64>; 12] = Default::default();
    for (li, lead) in Lead::ALL.iter().enumerate() {
        let (gp, gq, gt) = GAINS[li];
        let st_lead = if matches!(lead, Lead::V1 | Lead::V2 | Lead::V3 | Lead::V4) { st } else { 0.0 };
        let mut series = Vec::with_capacity(n);
        for i in 0..n {
            let t = i as f64 / fs as f64;
            let mut v = 0.05 * (std::f64::consts::TAU * wander_f * t + wander_phase).sin();
            for &b in &beats {
                if (t - b).abs() > 0.8 {
                    continue;
                }
                if !af {
                    v += bump(t, b - 0.16, 0.025, gp);
                }
                v += gq * qrs_gain * (bump(t, b - 0.025, qrs_w * 0.8, q_amp) + bump(t, b, qrs_w, 1.0) + bump(t, b + 0.03, qrs_w, -0.25));
                v += bump(t, b + 0.12, 0.06, st_lead);
                v += bump(t, b + 0.30, 0.05, gt * t_gain);
            }
            series.push((v * 1e4).round() / 1e4);
        }
        leads[li] = series;
    }
    EcgRecord {
        id: id.to_string(),
        fs,
        leads,
        labels,
    }
}
