//! CTG records, the CSV exchange format, dataset loading and synthetic
//! record generation.

mod format;
mod synth;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use format::{
    parse_metadata, parse_record, parse_signal, write_metadata_csv, write_signal_csv,
    MetadataRow, SignalColumns, METADATA_HEADER, SIGNAL_HEADER,
};
pub use synth::{substream_seed, synth_cohort, synth_record, CohortConfig, RegimeSwitch, SynthConfig};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("structure: {0}")]
    Structural(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeliveryType {
    Vaginal,
    Operative,
}

/// Clinical variables available before or during labour. Every field is
/// optional; an empty metadata cell stays `None`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClinicalVars {
    pub maternal_age: Option<f64>,
    pub parity: Option<u32>,
    pub gravidity: Option<u32>,
    pub gestation_weeks: Option<f64>,
    pub hypertension: Option<bool>,
    pub delivery_type: Option<DeliveryType>,
    pub stage1_min: Option<f64>,
    pub stage2_min: Option<f64>,
}

/// Birth outcomes used for labelling.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Outcomes {
    pub ph: Option<f64>,
    pub apgar5: Option<u8>,
}

/// One patient: paired FHR/UC traces at 4 Hz plus metadata. `None` marks a
/// missing sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtgRecord {
    patient_id: String,
    fhr: Vec<Option<f64>>,
    uc: Vec<Option<f64>>,
    pub clinical: ClinicalVars,
    pub outcomes: Outcomes,
}

impl CtgRecord {
    pub fn new(
        patient_id: impl Into<String>,
        fhr: Vec<Option<f64>>,
        uc: Vec<Option<f64>>,
        clinical: ClinicalVars,
        outcomes: Outcomes,
    ) -> Result<Self, IngestError> {
        let patient_id = patient_id.into();
        if fhr.len() != uc.len() {
            return Err(IngestError::Structural(format!(
                "patient {patient_id}: fhr has {} samples but uc has {}",
                fhr.len(),
                uc.len()
            )));
        }
        if fhr.is_empty() {
            return Err(IngestError::Structural(format!("patient {patient_id}: empty trace")));
        }
        if let Some(k) = fhr.iter().chain(uc.iter()).flatten().position(|v| !v.is_finite()) {
            return Err(IngestError::Structural(format!(
                "patient {patient_id}: non-finite sample value (present sample #{k})"
            )));
        }
        validate_clinical(&patient_id, &clinical)?;
        validate_outcomes(&patient_id, &outcomes)?;
        Ok(Self { patient_id, fhr, uc, clinical, outcomes })
    }

    pub fn patient_id(&self) -> &str {
        &self.patient_id
    }

    pub fn fhr(&self) -> &[Option<f64>] {
        &self.fhr
    }

    pub fn uc(&self) -> &[Option<f64>] {
        &self.uc
    }

    pub fn len(&self) -> usize {
        self.fhr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fhr.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.fhr.len() as f64 / crate::SAMPLE_RATE_HZ
    }
}

fn validate_clinical(id: &str, c: &ClinicalVars) -> Result<(), IngestError> {
    let checks = [
        ("maternal_age", c.maternal_age),
        ("gestation_weeks", c.gestation_weeks),
        ("stage1_min", c.stage1_min),
        ("stage2_min", c.stage2_min),
    ];
    for (name, value) in checks {
        if let Some(v) = value {
            if !v.is_finite() || v < 0.0 {
                return Err(IngestError::Structural(format!(
                    "patient {id}: {name} must be a non-negative number, got {v}"
                )));
            }
        }
    }
    Ok(())
}

fn validate_outcomes(id: &str, o: &Outcomes) -> Result<(), IngestError> {
    if let Some(ph) = o.ph {
        if !(6.5..=7.6).contains(&ph) {
            return Err(IngestError::Structural(format!(
                "patient {id}: pH {ph} outside [6.5, 7.6]"
            )));
        }
    }
    if let Some(a) = o.apgar5 {
        if a > 10 {
            return Err(IngestError::Structural(format!("patient {id}: apgar5 {a} > 10")));
        }
    }
    Ok(())
}

/// Something that went wrong for one patient while loading a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub patient_id: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct LoadedDataset {
    pub records: Vec<CtgRecord>,
    pub diagnostics: Vec<Diagnostic>,
}

pub const METADATA_FILE: &str = "clinical.csv";

/// Loads every patient listed in `clinical.csv` that has a matching
/// `<patient_id>.csv`. Records come back sorted by patient id.
pub fn load_dataset(dir: &Path) -> Result<LoadedDataset, IngestError> {
    let io_err = |source| IngestError::Io { path: dir.to_path_buf(), source };
    let entries = fs::read_dir(dir).map_err(io_err)?;
    let mut signal_files: HashMap<String, PathBuf> = HashMap::new();
    for entry in entries {
        let path = entry.map_err(io_err)?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("csv") {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            if path.file_name().and_then(|n| n.to_str()) != Some(METADATA_FILE) {
                signal_files.insert(stem.to_string(), path.clone());
            }
        }
    }

    let mut out = LoadedDataset::default();
    let meta_path = dir.join(METADATA_FILE);
    if !meta_path.exists() {
        out.diagnostics.push(Diagnostic {
            patient_id: None,
            message: format!("no {METADATA_FILE} in {}", dir.display()),
        });
        return Ok(out);
    }
    let meta_text = fs::read_to_string(&meta_path)
        .map_err(|source| IngestError::Io { path: meta_path.clone(), source })?;
    let rows = parse_metadata(&meta_text)?;

    // BTreeMap gives the id ordering independent of directory enumeration.
    let mut by_id: BTreeMap<String, MetadataRow> = BTreeMap::new();
    for row in rows {
        if by_id.contains_key(&row.patient_id) {
            out.diagnostics.push(Diagnostic {
                patient_id: Some(row.patient_id.clone()),
                message: "duplicate metadata row ignored".into(),
            });
            continue;
        }
        by_id.insert(row.patient_id.clone(), row);
    }

    for (id, row) in by_id {
        let Some(path) = signal_files.get(&id) else {
            out.diagnostics.push(Diagnostic {
                patient_id: Some(id),
                message: "metadata row has no signal file; patient skipped".into(),
            });
            continue;
        };
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                out.diagnostics.push(Diagnostic {
                    patient_id: Some(id),
                    message: format!("{}: {e}", path.display()),
                });
                continue;
            }
        };
        let parsed = parse_signal(&text).and_then(|sig| CtgRecord::new(id.clone(), sig.fhr, sig.uc, row.clinical, row.outcomes));
        match parsed {
            Ok(rec) => out.records.push(rec),
            Err(e) => out.diagnostics.push(Diagnostic {
                patient_id: Some(id),
                message: format!("{}: {e}", path.display()),
            }),
        }
    }
    Ok(out)
}

/// Writes records in the exchange format: one `<id>.csv` per patient plus
/// `clinical.csv`.
pub fn write_dataset(dir: &Path, records: &[CtgRecord]) -> Result<(), IngestError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| IngestError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for rec in records {
        let path = dir.join(format!("{}.csv", rec.patient_id()));
        fs::write(&path, write_signal_csv(rec)).map_err(io_err(&path))?;
    }
    let meta = dir.join(METADATA_FILE);
    fs::write(&meta, write_metadata_csv(records)).map_err(io_err(&meta))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mismatched_lengths_are_structural() {
        let err = CtgRecord::new(
            "p1",
            vec![Some(140.0); 3],
            vec![Some(10.0); 2],
            ClinicalVars::default(),
            Outcomes::default(),
        )
        .unwrap_err();
        assert!(matches!(err, IngestError::Structural(_)));
    }

    #[test]
    fn apgar_above_ten_rejected() {
        let err = CtgRecord::new(
            "p1",
            vec![Some(140.0)],
            vec![Some(10.0)],
            ClinicalVars::default(),
            Outcomes { ph: Some(7.2), apgar5: Some(11) },
        )
        .unwrap_err();
        assert!(err.to_string().contains("apgar5"));
    }

    #[test]
    fn empty_directory_gives_empty_list_and_diagnostic() {
        let dir = tempfile::tempdir().unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        assert!(ds.records.is_empty());
        assert_eq!(ds.diagnostics.len(), 1);
    }
}
