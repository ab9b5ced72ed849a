use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Ablation grid: which of the SDN, AFN and FTN modules a model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AblationVariant {
    /// Multi-scale encoder straight into the inversion network.
    #[serde(rename = "baseline")]
    Baseline,
    #[serde(rename = "safn-s")]
    SafnS,
    #[serde(rename = "safn-a")]
    SafnA,
    #[serde(rename = "safn-s-a")]
    SafnSA,
    #[serde(rename = "safn")]
    Safn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VariantFlags {
    pub use_sdn: bool,
    pub use_afn: bool,
    pub use_ftn: bool,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 5] = [
        AblationVariant::Baseline,
        AblationVariant::SafnS,
        AblationVariant::SafnA,
        AblationVariant::SafnSA,
        AblationVariant::Safn,
    ];

    pub fn flags(self) -> VariantFlags {
        let (use_sdn, use_afn, use_ftn) = match self {
            AblationVariant::Baseline => (false, false, false),
            AblationVariant::SafnS => (true, false, false),
            AblationVariant::SafnA => (false, true, false),
            AblationVariant::SafnSA => (true, true, false),
            AblationVariant::Safn => (true, true, true),
        };
        VariantFlags {
            use_sdn,
            use_afn,
            use_ftn,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AblationVariant::Baseline => "baseline",
            AblationVariant::SafnS => "safn-s",
            AblationVariant::SafnA => "safn-a",
            AblationVariant::SafnSA => "safn-s-a",
            AblationVariant::Safn => "safn",
        }
    }
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let lower = s.to_ascii_lowercase();
        let alias = match lower.as_str() {
            "sota" | "sota-like" => "baseline",
            "safn-sa" => "safn-s-a",
            other => other,
        };
        AblationVariant::ALL
            .into_iter()
            .find(|v| v.name() == alias)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant `{s}` (expected baseline, safn-s, safn-a, safn-s-a or safn)"
                ))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_table() {
        let rows: Vec<(bool, bool, bool)> = AblationVariant::ALL
            .iter()
            .map(|v| {
                let f = v.flags();
                (f.use_sdn, f.use_afn, f.use_ftn)
            })
            .collect();
        assert_eq!(
            rows,
            vec![
                (false, false, false),
                (true, false, false),
                (false, true, false),
                (true, true, false),
                (true, true, true),
            ]
        );
    }

    #[test]
    fn parse_round_trip() {
        for v in AblationVariant::ALL {
            assert_eq!(v.name().parse::<AblationVariant>().unwrap(), v);
        }
        assert_eq!("SAFN-S-A".parse::<AblationVariant>().unwrap(), AblationVariant::SafnSA);
        assert!("safn-x".parse::<AblationVariant>().is_err());
    }
}
