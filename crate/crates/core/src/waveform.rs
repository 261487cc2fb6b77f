//! ECG waveform records, diagnosis labels and dataset manifests.
//!
//! Waveforms are exchanged as a CSV with one column per lead (header row of
//! lead names, one sample per row, millivolts) plus a JSON sidecar carrying
//! the record id, sampling rate, units and labels.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::distort::DistortionRecipe;
use crate::geometry::Quad;

/// The twelve standard leads, in conventional order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Lead {
    I,
    II,
    III,
    AVR,
    AVL,
    AVF,
    V1,
    V2,
    V3,
    V4,
    V5,
    V6,
}

impl Lead {
    pub const ALL: [Lead; 12] = [
        Lead::I,
        Lead::II,
        Lead::III,
        Lead::AVR,
        Lead::AVL,
        Lead::AVF,
        Lead::V1,
        Lead::V2,
        Lead::V3,
        Lead::V4,
        Lead::V5,
        Lead::V6,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Lead::I => "I",
            Lead::II => "II",
            Lead::III => "III",
            Lead::AVR => "aVR",
            Lead::AVL => "aVL",
            Lead::AVF => "aVF",
            Lead::V1 => "V1",
            Lead::V2 => "V2",
            Lead::V3 => "V3",
            Lead::V4 => "V4",
            Lead::V5 => "V5",
            Lead::V6 => "V6",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Lead {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Lead {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Lead::ALL
            .iter()
            .copied()
            .find(|l| l.name() == s)
            .ok_or_else(|| format!("unknown lead {s:?}"))
    }
}

impl Serialize for Lead {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Lead {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Diagnostic superclasses, in the fixed label order used everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Diagnosis {
    Mi,
    Af,
    Hyp,
    Cd,
    Sttc,
}

impl Diagnosis {
    pub const ALL: [Diagnosis; 5] = [
        Diagnosis::Mi,
        Diagnosis::Af,
        Diagnosis::Hyp,
        Diagnosis::Cd,
        Diagnosis::Sttc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Diagnosis::Mi => "MI",
            Diagnosis::Af => "AF",
            Diagnosis::Hyp => "HYP",
            Diagnosis::Cd => "CD",
            Diagnosis::Sttc => "STTC",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Diagnosis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Diagnosis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Diagnosis::ALL
            .iter()
            .copied()
            .find(|d| d.name() == s)
            .ok_or_else(|| format!("unknown diagnosis {s:?}"))
    }
}

/// Five binary flags in the order MI, AF, HYP, CD, STTC. All-zero is legal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct DiagnosisVector(pub [bool; 5]);

impl DiagnosisVector {
    pub fn from_flags(flags: [u8; 5]) -> Self {
        DiagnosisVector(flags.map(|f| f != 0))
    }

    pub fn get(&self, d: Diagnosis) -> bool {
        self.0[d.index()]
    }

    pub fn set(&mut self, d: Diagnosis, on: bool) {
        self.0[d.index()] = on;
    }

    pub fn as_flags(&self) -> [u8; 5] {
        self.0.map(u8::from)
    }

    pub fn is_empty(&self) -> bool {
        !self.0.iter().any(|&b| b)
    }
}

impl fmt::Display for DiagnosisVector {
    /// Semicolon-joined category names; empty string when no flag is set.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for d in Diagnosis::ALL {
            if self.get(d) {
                if !first {
                    f.write_str(";")?;
                }
                f.write_str(d.name())?;
                first = false;
            }
        }
        Ok(())
    }
}

impl FromStr for DiagnosisVector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut v = DiagnosisVector::default();
        for part in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let d: Diagnosis = part.parse()?;
            if v.get(d) {
                return Err(format!("diagnosis {part} listed twice"));
            }
            v.set(d, true);
        }
        Ok(v)
    }
}

impl Serialize for DiagnosisVector {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DiagnosisVector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Error)]
pub enum WaveformError {
    #[error("missing lead {0}")]
    MissingLead(Lead),
    #[error("non-finite sample in lead {lead} at index {index}")]
    NonFiniteSample { lead: Lead, index: usize },
    #[error("lead {lead} has {found} samples, expected {expected}")]
    LengthMismatch {
        lead: Lead,
        expected: usize,
        found: usize,
    },
    #[error("bad header: {0}")]
    BadHeader(String),
    #[error("bad sidecar: {0}")]
    BadSidecar(String),
    #[error("record too short: {samples} samples at {fs} Hz, need at least {needed}")]
    TooShort {
        samples: usize,
        fs: u32,
        needed: usize,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// A 12-lead record: equal-length millivolt series sampled at `fs` Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct EcgRecord {
    pub id: String,
    pub fs: u32,
    /// Indexed by [`Lead::index`].
    pub leads: [Vec<f64>; 12],
    pub labels: DiagnosisVector,
}

impl EcgRecord {
    pub fn lead(&self, lead: Lead) -> &[f64] {
        &self.leads[lead.index()]
    }

    pub fn len(&self) -> usize {
        self.leads[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.fs as f64
    }

    /// Minimum samples for one 2.5 s panel window.
    pub fn min_samples(fs: u32) -> usize {
        (fs as f64 * 2.5).ceil() as usize
    }
}

/// One broken invariant of an [`EcgRecord`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    BadSampleRate,
    NonFiniteSample { lead: Lead, index: usize },
    LengthMismatch { lead: Lead, expected: usize, found: usize },
    TooShort { lead: Lead, samples: usize, needed: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::BadSampleRate => write!(f, "sampling rate must be positive"),
            Violation::NonFiniteSample { lead, index } => {
                write!(f, "NonFiniteSample({lead}, {index})")
            }
            Violation::LengthMismatch {
                lead,
                expected,
                found,
            } => write!(f, "LengthMismatch({lead}: {found} != {expected})"),
            Violation::TooShort {
                lead,
                samples,
                needed,
            } => write!(f, "TooShort({lead}: {samples} < {needed})"),
        }
    }
}

/// Lists every invariant violation; empty iff the record is well formed.
pub fn validate_record(rec: &EcgRecord) -> Vec<Violation> {
    let mut out = Vec::new();
    if rec.fs == 0 {
        out.push(Violation::BadSampleRate);
    }
    let expected = rec.leads[0].len();
    for lead in Lead::ALL {
        let series = rec.lead(lead);
        if series.len() != expected {
            out.push(Violation::LengthMismatch {
                lead,
                expected,
                found: series.len(),
            });
        }
        if rec.fs > 0 {
            let needed = EcgRecord::min_samples(rec.fs);
            if series.len() < needed {
                out.push(Violation::TooShort {
                    lead,
                    samples: series.len(),
                    needed,
                });
            }
        }
        if let Some(index) = series.iter().position(|v| !v.is_finite()) {
            out.push(Violation::NonFiniteSample { lead, index });
        }
    }
    out
}

/// Sidecar metadata accompanying a waveform CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub id: String,
    pub fs: u32,
    pub units: String,
    #[serde(default)]
    pub labels: DiagnosisVector,
}

/// Parses a waveform CSV. The sampling rate comes from the sidecar when
/// present, otherwise from `fs_hint`.
pub fn parse_record(
    csv_bytes: &[u8],
    sidecar: Option<&Sidecar>,
    fs_hint: Option<u32>,
) -> Result<EcgRecord, WaveformError> {
    if let Some(sc) = sidecar {
        if sc.units != "mV" {
            return Err(WaveformError::BadSidecar(format!(
                "units must be \"mV\", got {:?}",
                sc.units
            )));
        }
    }
    let fs = sidecar
        .map(|s| s.fs)
        .or(fs_hint)
        .ok_or_else(|| WaveformError::BadHeader("no sampling rate given".into()))?;
    if fs == 0 {
        return Err(WaveformError::BadHeader("sampling rate must be positive".into()));
    }

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(csv_bytes);
    let header = reader.headers()?.clone();

    let mut column_of: [Option<usize>; 12] = [None; 12];
    for (col, name) in header.iter().enumerate() {
        let lead: Lead = name.parse().map_err(WaveformError::BadHeader)?;
        if column_of[lead.index()].replace(col).is_some() {
            return Err(WaveformError::BadHeader(format!("duplicate column {lead}")));
        }
    }
    for lead in Lead::ALL {
        if column_of[lead.index()].is_none() {
            return Err(WaveformError::MissingLead(lead));
        }
    }

    // An empty cell ends that lead's series; anything after it is a length error.
    let mut leads: [Vec<f64>; 12] = Default::default();
    let mut ended = [false; 12];
    for row in reader.records() {
        let row = row?;
        for lead in Lead::ALL {
            let col = column_of[lead.index()].expect("checked above");
            let cell = row.get(col).unwrap_or("");
            let series = &mut leads[lead.index()];
            if cell.is_empty() {
                ended[lead.index()] = true;
                continue;
            }
            if ended[lead.index()] {
                return Err(WaveformError::BadHeader(format!(
                    "gap in lead {lead} at row {}",
                    series.len()
                )));
            }
            let v: f64 = cell.parse().map_err(|_| {
                WaveformError::BadHeader(format!("unparseable sample {cell:?} in lead {lead}"))
            })?;
            if !v.is_finite() {
                return Err(WaveformError::NonFiniteSample {
                    lead,
                    index: series.len(),
                });
            }
            series.push(v);
        }
    }

    let expected = leads.iter().map(Vec::len).max().unwrap_or(0);
    for lead in Lead::ALL {
        let found = leads[lead.index()].len();
        if found != expected {
            return Err(WaveformError::LengthMismatch {
                lead,
                expected,
                found,
            });
        }
    }
    let needed = EcgRecord::min_samples(fs);
    if expected < needed {
        return Err(WaveformError::TooShort {
            samples: expected,
            fs,
            needed,
        });
    }

    Ok(EcgRecord {
        id: sidecar.map(|s| s.id.clone()).unwrap_or_default(),
        fs,
        leads,
        labels: sidecar.map(|s| s.labels).unwrap_or_default(),
    })
}

/// Reads `<stem>.csv` together with its `<stem>.json` sidecar.
pub fn load_record(csv_path: &Path) -> Result<EcgRecord, WaveformError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| WaveformError::Io { path, source }
    };
    let bytes = fs::read(csv_path).map_err(io(csv_path))?;
    let sidecar_path = csv_path.with_extension("json");
    let sidecar_text = fs::read_to_string(&sidecar_path).map_err(io(&sidecar_path))?;
    let sidecar: Sidecar = serde_json::from_str(&sidecar_text)
        .map_err(|e| WaveformError::BadSidecar(format!("{}: {e}", sidecar_path.display())))?;
    parse_record(&bytes, Some(&sidecar), None)
}

/// Writes a record as CSV + sidecar. Samples use Rust's shortest round-trip
/// float formatting, so parsing the output reproduces the exact values.
pub fn write_record(rec: &EcgRecord, csv_path: &Path) -> Result<(), WaveformError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(Lead::ALL.iter().map(|l| l.name()))?;
    for i in 0..rec.len() {
        w.write_record(Lead::ALL.iter().map(|l| rec.lead(*l)[i].to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| WaveformError::Io {
        path: csv_path.to_path_buf(),
        source: e.into_error(),
    })?;
    fs::write(csv_path, bytes).map_err(|source| WaveformError::Io {
        path: csv_path.to_path_buf(),
        source,
    })?;
    let sidecar = Sidecar {
        id: rec.id.clone(),
        fs: rec.fs,
        units: "mV".into(),
        labels: rec.labels,
    };
    let sidecar_path = csv_path.with_extension("json");
    let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serialises");
    fs::write(&sidecar_path, text).map_err(|source| WaveformError::Io {
        path: sidecar_path,
        source,
    })
}

/// One dataset entry. Image paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub image_path: String,
    pub labels: DiagnosisVector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corners: Option<Quad>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recipe: Option<DistortionRecipe>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Self {
        DatasetManifest { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of folds implied by the assignments, if any entry carries one.
    pub fn fold_count(&self) -> Option<u32> {
        self.entries.iter().filter_map(|e| e.fold).max().map(|m| m + 1)
    }

    /// Checks id uniqueness and that fold indices cover `0..k` with no gaps.
    pub fn validate(&self) -> Result<(), ManifestError> {
        let mut seen = HashSet::new();
        for (i, e) in self.entries.iter().enumerate() {
            if e.id.is_empty() {
                return Err(ManifestError::Schema {
                    pointer: format!("/{i}/id"),
                    message: "empty id".into(),
                });
            }
            if !seen.insert(e.id.as_str()) {
                return Err(ManifestError::Schema {
                    pointer: format!("/{i}/id"),
                    message: format!("duplicate id {:?}", e.id),
                });
            }
        }
        if let Some(k) = self.fold_count() {
            let mut used = vec![false; k as usize];
            for e in &self.entries {
                if let Some(f) = e.fold {
                    used[f as usize] = true;
                }
            }
            if let Some(missing) = used.iter().position(|u| !u) {
                let i = self
                    .entries
                    .iter()
                    .position(|e| e.fold == Some(k - 1))
                    .unwrap_or(0);
                return Err(ManifestError::Schema {
                    pointer: format!("/{i}/fold"),
                    message: format!("fold {} out of range: fold {missing} is empty", k - 1),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("schema violation at {pointer}: {message}")]
    Schema { pointer: String, message: String },
}

pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<(), ManifestError> {
    manifest.validate()?;
    let mut text = serde_json::to_string_pretty(&manifest.entries).expect("manifest serialises");
    text.push('\n');
    fs::write(path, text).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest, ManifestError> {
    let text = fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_manifest(&text)
}

pub fn parse_manifest(text: &str) -> Result<DatasetManifest, ManifestError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| ManifestError::Schema {
        pointer: String::new(),
        message: e.to_string(),
    })?;
    let items = value.as_array().ok_or_else(|| ManifestError::Schema {
        pointer: String::new(),
        message: "manifest must be a JSON array".into(),
    })?;
    let mut entries = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let entry = ManifestEntry::deserialize(item).map_err(|e| ManifestError::Schema {
            pointer: format!("/{i}"),
            message: e.to_string(),
        })?;
        entries.push(entry);
    }
    let m = DatasetManifest { entries };
    m.validate()?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_text(rows: usize, skip: Option<&str>) -> String {
        let names: Vec<&str> = Lead::ALL
            .iter()
            .map(|l| l.name())
            .filter(|n| Some(*n) != skip)
            .collect();
        let mut s = names.join(",");
        s.push('\n');
        for r in 0..rows {
            let row: Vec<String> = (0..names.len())
                .map(|c| format!("{}", (r * 7 + c) as f64 * 0.001 - 0.25))
                .collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }

    fn sidecar(labels: &str) -> Sidecar {
        Sidecar {
            id: "rec".into(),
            fs: 100,
            units: "mV".into(),
            labels: labels.parse().unwrap(),
        }
    }

    #[test]
    fn thousand_rows_at_100hz_is_ten_seconds() {
        let rec = parse_record(csv_text(1000, None).as_bytes(), Some(&sidecar("")), None).unwrap();
        assert_eq!(rec.len(), 1000);
        assert_eq!(rec.duration_s(), 10.0);
        assert!(validate_record(&rec).is_empty());
    }

    #[test]
    fn fs_hint_used_without_sidecar() {
        let rec = parse_record(csv_text(500, None).as_bytes(), None, Some(50)).unwrap();
        assert_eq!(rec.fs, 50);
        assert!(matches!(
            parse_record(csv_text(500, None).as_bytes(), None, None),
            Err(WaveformError::BadHeader(_))
        ));
    }

    #[test]
    fn missing_v6_column() {
        let err = parse_record(csv_text(1000, Some("V6")).as_bytes(), Some(&sidecar("")), None)
            .unwrap_err();
        assert!(matches!(err, WaveformError::MissingLead(Lead::V6)));
    }

    #[test]
    fn unknown_or_duplicate_column_is_bad_header() {
        let text = csv_text(300, None).replacen("V6", "V7", 1);
        assert!(matches!(
            parse_record(text.as_bytes(), Some(&sidecar("")), None),
            Err(WaveformError::BadHeader(_))
        ));
        let text = csv_text(300, None).replacen("V6", "V5", 1);
        assert!(matches!(
            parse_record(text.as_bytes(), Some(&sidecar("")), None),
            Err(WaveformError::BadHeader(_))
        ));
    }

    #[test]
    fn nan_sample_rejected() {
        let mut text = csv_text(300, None);
        let idx = text.find('\n').unwrap() + 1;
        // first data row, first column is lead I
        let end = idx + text[idx..].find(',').unwrap();
        text.replace_range(idx..end, "NaN");
        let err = parse_record(text.as_bytes(), Some(&sidecar("")), None).unwrap_err();
        assert!(matches!(
            err,
            WaveformError::NonFiniteSample {
                lead: Lead::I,
                index: 0
            }
        ));
    }

    #[test]
    fn short_column_is_length_mismatch() {
        let mut text = csv_text(300, None);
        // blank out the last cell of the final row (lead V6)
        let trimmed = text.trim_end().to_string();
        let cut = trimmed.rfind(',').unwrap();
        text = format!("{},\n", &trimmed[..cut]);
        let err = parse_record(text.as_bytes(), Some(&sidecar("")), None).unwrap_err();
        assert!(matches!(
            err,
            WaveformError::LengthMismatch {
                lead: Lead::V6,
                expected: 300,
                found: 299
            }
        ));
    }

    #[test]
    fn non_mv_units_rejected() {
        let mut sc = sidecar("");
        sc.units = "uV".into();
        assert!(matches!(
            parse_record(csv_text(300, None).as_bytes(), Some(&sc), None),
            Err(WaveformError::BadSidecar(_))
        ));
    }

    #[test]
    fn too_short_record() {
        let err = parse_record(csv_text(200, None).as_bytes(), Some(&sidecar("")), None).unwrap_err();
        assert!(matches!(err, WaveformError::TooShort { .. }));
    }

    #[test]
    fn label_string_encoding() {
        let v: DiagnosisVector = "MI;STTC".parse().unwrap();
        assert_eq!(v.as_flags(), [1, 0, 0, 0, 1]);
        assert_eq!(v.to_string(), "MI;STTC");
        let empty: DiagnosisVector = "".parse().unwrap();
        assert!(empty.is_empty());
        assert_eq!(empty.to_string(), "");
        assert!("MI;XX".parse::<DiagnosisVector>().is_err());
        assert_eq!(Diagnosis::ALL[0], Diagnosis::Mi);
        assert_eq!(Diagnosis::ALL[4], Diagnosis::Sttc);
    }

    #[test]
    fn validate_reports_nan_and_length() {
        let mut rec =
            parse_record(csv_text(1000, None).as_bytes(), Some(&sidecar("")), None).unwrap();
        rec.leads[Lead::II.index()][17] = f64::NAN;
        assert_eq!(
            validate_record(&rec),
            vec![Violation::NonFiniteSample {
                lead: Lead::II,
                index: 17
            }]
        );
        rec.leads[Lead::II.index()][17] = 0.0;
        rec.leads[Lead::V3.index()].pop();
        assert_eq!(
            validate_record(&rec),
            vec![Violation::LengthMismatch {
                lead: Lead::V3,
                expected: 1000,
                found: 999
            }]
        );
    }

    #[test]
    fn duplicate_id_is_schema_violation() {
        let text = r#"[
            {"id": "a", "image_path": "a.png", "labels": "MI"},
            {"id": "a", "image_path": "b.png", "labels": ""}
        ]"#;
        match parse_manifest(text) {
            Err(ManifestError::Schema { pointer, .. }) => assert_eq!(pointer, "/1/id"),
            other => panic!("expected schema violation, got {other:?}"),
        }
    }

    #[test]
    fn bad_label_reports_entry_pointer() {
        let text = r#"[{"id": "a", "image_path": "a.png", "labels": "MI;BOGUS"}]"#;
        match parse_manifest(text) {
            Err(ManifestError::Schema { pointer, .. }) => assert_eq!(pointer, "/0"),
            other => panic!("expected schema violation, got {other:?}"),
        }
    }

    #[test]
    fn fold_gap_rejected() {
        let text = r#"[
            {"id": "a", "image_path": "a.png", "labels": "", "fold": 0},
            {"id": "b", "image_path": "b.png", "labels": "", "fold": 2}
        ]"#;
        assert!(matches!(parse_manifest(text), Err(ManifestError::Schema { .. })));
    }
}
