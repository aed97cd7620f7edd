//! Fixed clinical feature order shared by every downstream vector.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const N_FEATURES: usize = 8;

/// Column order of `VisitRecord::features`. Model coefficients, importance
/// tables and serialized artifacts all refer to features by these names.
pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "current_age",
    "days_since_last_visit",
    "dose_reduced",
    "ecog",
    "sae_count",
    "systolic_bp",
    "bmi",
    "pulse",
];

pub const CURRENT_AGE: usize = 0;
pub const DAYS_SINCE_LAST_VISIT: usize = 1;
pub const DOSE_REDUCED: usize = 2;
pub const ECOG: usize = 3;
pub const SAE_COUNT: usize = 4;
pub const SYSTOLIC_BP: usize = 5;
pub const BMI: usize = 6;
pub const PULSE: usize = 7;

pub fn default_feature_names() -> Vec<String> {
    FEATURE_NAMES.iter().map(|s| s.to_string()).collect()
}

/// Digest of an ordered feature list. Two artifacts agree on feature layout
/// iff their fingerprints are equal.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureFingerprint(pub String);

impl FeatureFingerprint {
    pub fn of(names: &[String]) -> Self {
        let mut hasher = Sha256::new();
        for name in names {
            hasher.update(name.as_bytes());
            hasher.update([0u8]);
        }
        FeatureFingerprint(hex16(&hasher.finalize()))
    }

    pub fn check(&self, other: &FeatureFingerprint) -> crate::Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(crate::Error::Fingerprint {
                expected: self.0.clone(),
                found: other.0.clone(),
            })
        }
    }
}

impl std::fmt::Display for FeatureFingerprint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

pub(crate) fn hex16(bytes: &[u8]) -> String {
    bytes[..16].iter().map(|b| format!("{b:02x}")).collect()
}
