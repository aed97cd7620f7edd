use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::features::hex16;
use crate::{Error, Result};

fn patient_hash(id: &str) -> u64 {
    let digest = Sha256::digest(id.as_bytes());
    u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Record of the patients a preprocessor was fitted on. Evaluation data is
/// checked against it so no test-fold or external patient can have
/// contributed to fitted statistics.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldFingerprint {
    pub digest: String,
    patients: BTreeSet<u64>,
}

impl FoldFingerprint {
    pub fn from_ids<'a>(ids: impl IntoIterator<Item = &'a str>) -> Self {
        let patients: BTreeSet<u64> = ids.into_iter().map(patient_hash).collect();
        let mut hasher = Sha256::new();
        for p in &patients {
            hasher.update(p.to_be_bytes());
        }
        FoldFingerprint {
            digest: hex16(&hasher.finalize()),
            patients,
        }
    }

    pub fn n_patients(&self) -> usize {
        self.patients.len()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.patients.contains(&patient_hash(id))
    }

    /// Errors if any of `ids` was part of the fit.
    pub fn check_disjoint<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<()> {
        let overlap: Vec<&str> = ids.into_iter().filter(|id| self.contains(id)).collect();
        if overlap.is_empty() {
            Ok(())
        } else {
            let shown: Vec<&str> = overlap.iter().take(5).copied().collect();
            Err(Error::Leakage(format!(
                "{} evaluation patient(s) were used to fit preprocessor {} (e.g. {})",
                overlap.len(),
                self.digest,
                shown.join(", ")
            )))
        }
    }
}
