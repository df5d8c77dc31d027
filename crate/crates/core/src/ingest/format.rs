use std::collections::HashMap;

use super::{ClinicalVars, CtgRecord, DeliveryType, IngestError, Outcomes};

pub const SIGNAL_HEADER: &str = "t_s,fhr_bpm,uc";
pub const METADATA_HEADER: &str = "patient_id,ph,apgar5,maternal_age,parity,gravidity,gestation_weeks,hypertension,delivery_type,stage1_min,stage2_min";

const SAMPLE_PERIOD_S: f64 = 0.25;
const TIME_TOLERANCE_S: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SignalColumns {
    pub fhr: Vec<Option<f64>>,
    pub uc: Vec<Option<f64>>,
}

/// One parsed row of `clinical.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetadataRow {
    pub patient_id: String,
    pub clinical: ClinicalVars,
    pub outcomes: Outcomes,
}

fn parse_err(line: u64, msg: impl Into<String>) -> IngestError {
    IngestError::Parse { line, msg: msg.into() }
}

fn csv_err(e: csv::Error) -> IngestError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.kind() {
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => parse_err(
            line,
            format!("row has {len} fields, header has {expected_len}"),
        ),
        _ => parse_err(line, e.to_string()),
    }
}

fn parse_decimal(cell: &str, line: u64, column: &str) -> Result<Option<f64>, IngestError> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(None);
    }
    let v: f64 = cell
        .parse()
        .map_err(|_| parse_err(line, format!("{column}: '{cell}' is not a decimal number")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("{column}: '{cell}' is not finite")));
    }
    Ok(Some(v))
}

fn parse_count(cell: &str, line: u64, column: &str) -> Result<Option<u32>, IngestError> {
    match parse_decimal(cell, line, column)? {
        None => Ok(None),
        Some(v) if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 => Ok(Some(v as u32)),
        Some(v) => Err(parse_err(line, format!("{column}: {v} is not a non-negative integer"))),
    }
}

/// Parses a `t_s,fhr_bpm,uc` signal file. Extra trailing columns (such as
/// the `valid` column of cleaned exports) are ignored.
pub fn parse_signal(text: &str) -> Result<SignalColumns, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(csv_err)?.clone();
    let expected = ["t_s", "fhr_bpm", "uc"];
    if headers.len() < expected.len() {
        return Err(IngestError::Structural(format!(
            "signal header has {} columns, expected at least {}",
            headers.len(),
            expected.len()
        )));
    }
    for (i, name) in expected.iter().enumerate() {
        if &headers[i] != *name {
            return Err(IngestError::Structural(format!(
                "signal column {} is '{}', expected '{name}'",
                i + 1,
                &headers[i]
            )));
        }
    }

    let mut fhr = Vec::new();
    let mut uc = Vec::new();
    let mut prev_t: Option<f64> = None;
    for result in reader.records() {
        let rec = result.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let t = parse_decimal(&rec[0], line, "t_s")?
            .ok_or_else(|| parse_err(line, "t_s is empty"))?;
        if let Some(p) = prev_t {
            if (t - p - SAMPLE_PERIOD_S).abs() > TIME_TOLERANCE_S {
                return Err(parse_err(
                    line,
                    format!("t_s {t} does not follow {p} by {SAMPLE_PERIOD_S} s"),
                ));
            }
        }
        prev_t = Some(t);
        fhr.push(parse_decimal(&rec[1], line, "fhr_bpm")?);
        uc.push(parse_decimal(&rec[2], line, "uc")?);
    }
    if fhr.is_empty() {
        return Err(IngestError::Structural("signal file has no samples".into()));
    }
    Ok(SignalColumns { fhr, uc })
}

/// Parses a metadata table with a header row. Columns are matched by name;
/// unknown columns are ignored and missing optional columns read as absent.
pub fn parse_metadata(text: &str) -> Result<Vec<MetadataRow>, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(csv_err)?.clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let id_col = *index
        .get("patient_id")
        .ok_or_else(|| IngestError::Structural("metadata has no patient_id column".into()))?;

    let mut rows = Vec::new();
    for result in reader.records() {
        let rec = result.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let cell = |name: &str| index.get(name).map(|&i| &rec[i]).unwrap_or("");
        let patient_id = rec[id_col].to_string();
        if patient_id.is_empty() {
            return Err(parse_err(line, "patient_id is empty"));
        }

        let hypertension = match cell("hypertension") {
            "" => None,
            "0" => Some(false),
            "1" => Some(true),
            other => return Err(parse_err(line, format!("hypertension: '{other}' not in {{0,1}}"))),
        };
        let delivery_type = match cell("delivery_type") {
            "" => None,
            "V" => Some(DeliveryType::Vaginal),
            "O" => Some(DeliveryType::Operative),
            other => return Err(parse_err(line, format!("delivery_type: '{other}' not in {{V,O}}"))),
        };
        let apgar5 = match parse_count(cell("apgar5"), line, "apgar5")? {
            None => None,
            Some(a) if a <= 10 => Some(a as u8),
            Some(a) => return Err(parse_err(line, format!("apgar5: {a} outside 0..=10"))),
        };
        let ph = parse_decimal(cell("ph"), line, "ph")?;
        if let Some(v) = ph {
            if !(6.5..=7.6).contains(&v) {
                return Err(parse_err(line, format!("ph: {v} outside [6.5, 7.6]")));
            }
        }
        let non_negative = |name: &str| -> Result<Option<f64>, IngestError> {
            match parse_decimal(cell(name), line, name)? {
                Some(v) if v < 0.0 => Err(parse_err(line, format!("{name}: {v} is negative"))),
                other => Ok(other),
            }
        };

        rows.push(MetadataRow {
            patient_id,
            clinical: ClinicalVars {
                maternal_age: non_negative("maternal_age")?,
                parity: parse_count(cell("parity"), line, "parity")?,
                gravidity: parse_count(cell("gravidity"), line, "gravidity")?,
                gestation_weeks: non_negative("gestation_weeks")?,
                hypertension,
                delivery_type,
                stage1_min: non_negative("stage1_min")?,
                stage2_min: non_negative("stage2_min")?,
            },
            outcomes: Outcomes { ph, apgar5 },
        });
    }
    Ok(rows)
}

/// Builds a record from a signal file and a metadata snippet (header plus
/// exactly one data row).
pub fn parse_record(signal_text: &str, metadata_text: &str) -> Result<CtgRecord, IngestError> {
    let signal = parse_signal(signal_text)?;
    let mut rows = parse_metadata(metadata_text)?;
    if rows.len() != 1 {
        return Err(IngestError::Structural(format!(
            "expected exactly one metadata row, found {}",
            rows.len()
        )));
    }
    let row = rows.remove(0);
    CtgRecord::new(row.patient_id, signal.fhr, signal.uc, row.clinical, row.outcomes)
}

fn cell<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_signal_csv(record: &CtgRecord) -> String {
    let mut out = String::with_capacity(record.len() * 16);
    out.push_str(SIGNAL_HEADER);
    out.push('\n');
    for (k, (f, u)) in record.fhr().iter().zip(record.uc()).enumerate() {
        out.push_str(&format!("{},{},{}\n", k as f64 * SAMPLE_PERIOD_S, cell(*f), cell(*u)));
    }
    out
}

pub fn write_metadata_csv(records: &[CtgRecord]) -> String {
    let mut out = String::from(METADATA_HEADER);
    out.push('\n');
    for r in records {
        let c = &r.clinical;
        let hypertension = c.hypertension.map(|h| if h { "1" } else { "0" });
        let delivery = c.delivery_type.map(|d| match d {
            DeliveryType::Vaginal => "V",
            DeliveryType::Operative => "O",
        });
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.patient_id(),
            cell(r.outcomes.ph),
            cell(r.outcomes.apgar5),
            cell(c.maternal_age),
            cell(c.parity),
            cell(c.gravidity),
            cell(c.gestation_weeks),
            cell(hypertension),
            cell(delivery),
            cell(c.stage1_min),
            cell(c.stage2_min),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const META: &str = "patient_id,ph,apgar5,maternal_age,parity,gravidity,gestation_weeks,hypertension,delivery_type,stage1_min,stage2_min,extra\n\
                        1001,7.21,9,31,1,2,40,0,V,180,12,zzz\n";

    #[test]
    fn three_samples_complete_metadata() {
        let sig = "t_s,fhr_bpm,uc\n0,140,10\n0.25,141.5,11\n0.5,139,12\n";
        let rec = parse_record(sig, META).unwrap();
        assert_eq!(rec.patient_id(), "1001");
        assert_eq!(rec.fhr(), &[Some(140.0), Some(141.5), Some(139.0)]);
        assert_eq!(rec.uc(), &[Some(10.0), Some(11.0), Some(12.0)]);
        assert_eq!(rec.outcomes, Outcomes { ph: Some(7.21), apgar5: Some(9) });
        let c = &rec.clinical;
        assert_eq!(c.maternal_age, Some(31.0));
        assert_eq!(c.parity, Some(1));
        assert_eq!(c.gravidity, Some(2));
        assert_eq!(c.gestation_weeks, Some(40.0));
        assert_eq!(c.hypertension, Some(false));
        assert_eq!(c.delivery_type, Some(DeliveryType::Vaginal));
        assert_eq!(c.stage1_min, Some(180.0));
        assert_eq!(c.stage2_min, Some(12.0));
    }

    #[test]
    fn empty_ph_cell_is_absent() {
        let meta = "patient_id,ph,apgar5\n7,,8\n";
        let rec = parse_record("t_s,fhr_bpm,uc\n0,140,10\n", meta).unwrap();
        assert_eq!(rec.outcomes.ph, None);
        assert_eq!(rec.outcomes.apgar5, Some(8));
        assert_eq!(rec.clinical, ClinicalVars::default());
    }

    #[test]
    fn two_column_signal_is_structural() {
        let err = parse_signal("t_s,fhr_bpm\n0,140\n").unwrap_err();
        assert!(matches!(err, IngestError::Structural(_)), "{err}");
    }

    #[test]
    fn short_row_reports_line() {
        let err = parse_signal("t_s,fhr_bpm,uc\n0,140,10\n0.25,141\n").unwrap_err();
        match err {
            IngestError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn bad_time_step_reports_line() {
        let err = parse_signal("t_s,fhr_bpm,uc\n0,140,10\n0.5,141,10\n").unwrap_err();
        assert!(matches!(err, IngestError::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn missing_samples_become_none() {
        let sig = parse_signal("t_s,fhr_bpm,uc\n10,,10\n10.25,141,\n").unwrap();
        assert_eq!(sig.fhr, vec![None, Some(141.0)]);
        assert_eq!(sig.uc, vec![Some(10.0), None]);
    }

    #[test]
    fn bad_category_rejected() {
        let err = parse_metadata("patient_id,delivery_type\n1,X\n").unwrap_err();
        assert!(matches!(err, IngestError::Parse { line: 2, .. }));
    }

    fn arb_opt<T: std::fmt::Debug + Clone + 'static>(
        s: impl Strategy<Value = T> + 'static,
    ) -> impl Strategy<Value = Option<T>> {
        prop_oneof![1 => Just(None), 3 => s.prop_map(Some)]
    }

    prop_compose! {
        fn arb_record()(
            id in "[a-z0-9]{1,8}",
            samples in proptest::collection::vec(
                (arb_opt(30.0f64..250.0), arb_opt(0.0f64..100.0)), 1..60),
            age in arb_opt(15.0f64..50.0),
            parity in arb_opt(0u32..8),
            gravidity in arb_opt(0u32..10),
            gest in arb_opt(30.0f64..43.0),
            hyp in arb_opt(any::<bool>()),
            deliv in arb_opt(prop_oneof![Just(DeliveryType::Vaginal), Just(DeliveryType::Operative)]),
            s1 in arb_opt(0.0f64..900.0),
            s2 in arb_opt(0.0f64..120.0),
            ph in arb_opt(6.5f64..7.6),
            apgar in arb_opt(0u8..=10),
        ) -> CtgRecord {
            let (fhr, uc): (Vec<_>, Vec<_>) = samples.into_iter().unzip();
            let clinical = ClinicalVars {
                maternal_age: age, parity, gravidity, gestation_weeks: gest,
                hypertension: hyp, delivery_type: deliv, stage1_min: s1, stage2_min: s2,
            };
            CtgRecord::new(id, fhr, uc, clinical, Outcomes { ph, apgar5: apgar }).unwrap()
        }
    }

    proptest! {
        #[test]
        fn serialize_then_parse_is_identity(rec in arb_record()) {
            let back = parse_record(&write_signal_csv(&rec), &write_metadata_csv(std::slice::from_ref(&rec))).unwrap();
            prop_assert_eq!(back, rec);
        }
    }
}
