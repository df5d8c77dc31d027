//! Composite outcome labels from cord pH and 5-minute Apgar.

use serde::{Deserialize, Serialize};

use crate::ingest::Outcomes;

pub const NORMAL_PH_MIN: f64 = 7.15;
pub const NORMAL_APGAR_MIN: u8 = 9;
pub const AT_RISK_PH_MAX: f64 = 7.0;
pub const AT_RISK_APGAR_MAX: u8 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Normal,
    AtRisk,
    Excluded,
}

impl Label {
    pub fn name(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::AtRisk => "at_risk",
            Label::Excluded => "excluded",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "normal" => Some(Label::Normal),
            "at_risk" => Some(Label::AtRisk),
            "excluded" => Some(Label::Excluded),
            _ => None,
        }
    }

    /// 1 for at-risk, 0 for normal; excluded patients have no target.
    pub fn target(self) -> Option<u8> {
        match self {
            Label::Normal => Some(0),
            Label::AtRisk => Some(1),
            Label::Excluded => None,
        }
    }
}

/// At-risk if either marker is bad, normal only if both are good, excluded
/// otherwise (including when a missing value leaves the case undecided).
pub fn assign_label(outcomes: &Outcomes) -> Label {
    let ph_bad = outcomes.ph.is_some_and(|p| p <= AT_RISK_PH_MAX);
    let apgar_bad = outcomes.apgar5.is_some_and(|a| a <= AT_RISK_APGAR_MAX);
    if ph_bad || apgar_bad {
        return Label::AtRisk;
    }
    match (outcomes.ph, outcomes.apgar5) {
        (Some(p), Some(a)) if p >= NORMAL_PH_MIN && a >= NORMAL_APGAR_MIN => Label::Normal,
        _ => Label::Excluded,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub normal: usize,
    pub at_risk: usize,
    /// Excluded by the outcome rules.
    pub excluded: usize,
    /// Excluded for poor signal quality, counted separately.
    pub quality_excluded: usize,
}

pub fn cohort_summary(labels: &[Label]) -> CohortSummary {
    let mut s = CohortSummary::default();
    for l in labels {
        match l {
            Label::Normal => s.normal += 1,
            Label::AtRisk => s.at_risk += 1,
            Label::Excluded => s.excluded += 1,
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn o(ph: Option<f64>, apgar5: Option<u8>) -> Outcomes {
        Outcomes { ph, apgar5 }
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(assign_label(&o(Some(7.20), Some(9))), Label::Normal);
        assert_eq!(assign_label(&o(Some(6.95), Some(9))), Label::AtRisk);
        assert_eq!(assign_label(&o(Some(7.10), Some(8))), Label::Excluded);
        assert_eq!(assign_label(&o(Some(6.9), Some(10))), Label::AtRisk);
    }

    #[test]
    fn boundaries_are_inclusive() {
        assert_eq!(assign_label(&o(Some(7.15), Some(9))), Label::Normal);
        assert_eq!(assign_label(&o(Some(7.149), Some(9))), Label::Excluded);
        assert_eq!(assign_label(&o(Some(7.0), Some(10))), Label::AtRisk);
        assert_eq!(assign_label(&o(Some(7.001), Some(8))), Label::Excluded);
        assert_eq!(assign_label(&o(Some(7.3), Some(6))), Label::AtRisk);
        assert_eq!(assign_label(&o(Some(7.3), Some(7))), Label::Excluded);
    }

    #[test]
    fn missing_values() {
        assert_eq!(assign_label(&o(None, Some(3))), Label::AtRisk);
        assert_eq!(assign_label(&o(Some(6.8), None)), Label::AtRisk);
        assert_eq!(assign_label(&o(None, Some(10))), Label::Excluded);
        assert_eq!(assign_label(&o(Some(7.3), None)), Label::Excluded);
        assert_eq!(assign_label(&o(None, None)), Label::Excluded);
    }

    #[test]
    fn summaries() {
        assert_eq!(cohort_summary(&[]), CohortSummary::default());
        let s = cohort_summary(&[Label::Normal]);
        assert_eq!((s.normal, s.at_risk, s.excluded), (1, 0, 0));
    }

    #[test]
    fn names_round_trip() {
        for l in [Label::Normal, Label::AtRisk, Label::Excluded] {
            assert_eq!(Label::parse(l.name()), Some(l));
        }
    }
}
