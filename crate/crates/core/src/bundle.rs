//! Versioned binary container for trained models and bands.
//!
//! ```text
//! "DVHB" | version u32 LE | section count u32 LE
//! repeated: kind u8 | payload length u64 LE | CBOR payload
//! SHA-256 of every preceding byte (32 bytes)
//! ```
//!
//! Section kinds: 0 metadata (exactly one, first), 1 model, 2 band. A JSON
//! copy of the metadata is written next to the bundle for inspection; it is
//! never read back.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dvh::{CumulativeDvh, DoseGrid, FeatureVector, Organ};
use crate::eval::ensemble_predict;
use crate::regress::{predict_dvh, AlgorithmId, Hyperparams, TrainedDvhModel};
use crate::weibull::ConfidenceBand;

pub const MAGIC: &[u8; 4] = b"DVHB";
pub const FORMAT_VERSION: u32 = 1;

const KIND_META: u8 = 0;
const KIND_MODEL: u8 = 1;
const KIND_BAND: u8 = 2;

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a model bundle")]
    BadMagic,
    #[error("bundle format version {found} is not supported (expected {FORMAT_VERSION})")]
    VersionMismatch { found: u32 },
    #[error("bundle is truncated")]
    Truncated,
    #[error("bundle digest does not match its contents")]
    DigestMismatch,
    #[error("bundle fingerprint does not match its models")]
    FingerprintMismatch,
    #[error("malformed bundle: {0}")]
    Malformed(String),
    #[error("no {algorithm} model for {organ}")]
    UnknownModel { algorithm: AlgorithmId, organ: Organ },
}

/// Members of the two averaged ensembles of one organ, best first.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EnsembleMembers {
    pub best3: Vec<AlgorithmId>,
    pub best6: Vec<AlgorithmId>,
}

impl EnsembleMembers {
    pub fn members(&self, algorithm: AlgorithmId) -> Option<&[AlgorithmId]> {
        match algorithm {
            AlgorithmId::Ensemble3 => Some(&self.best3),
            AlgorithmId::Ensemble6 => Some(&self.best6),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub algorithm: AlgorithmId,
    pub organ: Organ,
    pub training_fingerprint: String,
    pub hyperparams: Hyperparams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub format_version: u32,
    /// Seconds since the Unix epoch.
    pub created_unix: u64,
    pub seed: u64,
    pub grid: DoseGrid,
    pub train_cases: Vec<String>,
    pub test_cases: Vec<String>,
    pub ensembles: BTreeMap<Organ, EnsembleMembers>,
    pub models: Vec<ModelSummary>,
    /// Hex SHA-256 over the model fingerprints and ensemble membership.
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub meta: BundleMeta,
    pub models: Vec<TrainedDvhModel>,
    pub bands: BTreeMap<Organ, ConfidenceBand>,
}

/// Combined fingerprint of a set of models and ensembles. Independent of
/// creation time.
pub fn bundle_fingerprint(models: &[TrainedDvhModel], ensembles: &BTreeMap<Organ, EnsembleMembers>) -> String {
    let mut h = Sha256::new();
    for m in models {
        h.update(m.algorithm.as_str().as_bytes());
        h.update(m.organ.as_str().as_bytes());
        h.update(m.training_fingerprint.as_bytes());
    }
    for (organ, e) in ensembles {
        h.update(organ.as_str().as_bytes());
        for a in e.best3.iter().chain([&AlgorithmId::Ensemble3]).chain(&e.best6) {
            h.update(a.as_str().as_bytes());
        }
    }
    hex::encode(h.finalize())
}

impl ModelBundle {
    pub fn new(
        seed: u64,
        grid: DoseGrid,
        split: (Vec<String>, Vec<String>),
        models: Vec<TrainedDvhModel>,
        ensembles: BTreeMap<Organ, EnsembleMembers>,
        bands: BTreeMap<Organ, ConfidenceBand>,
        created_unix: u64,
    ) -> Self {
        let summaries = models
            .iter()
            .map(|m| ModelSummary {
                algorithm: m.algorithm,
                organ: m.organ,
                training_fingerprint: m.training_fingerprint.clone(),
                hyperparams: m.hyperparams.clone(),
            })
            .collect();
        let fingerprint = bundle_fingerprint(&models, &ensembles);
        let meta = BundleMeta {
            format_version: FORMAT_VERSION,
            created_unix,
            seed,
            grid,
            train_cases: split.0,
            test_cases: split.1,
            ensembles,
            models: summaries,
            fingerprint,
        };
        Self { meta, models, bands }
    }

    pub fn model(&self, algorithm: AlgorithmId, organ: Organ) -> Option<&TrainedDvhModel> {
        self.models.iter().find(|m| m.algorithm == algorithm && m.organ == organ)
    }

    /// Algorithms servable for `organ`: trained models, then ensembles whose
    /// members are all present.
    pub fn roster(&self, organ: Organ) -> Vec<AlgorithmId> {
        let mut out: Vec<AlgorithmId> = self.models.iter().filter(|m| m.organ == organ).map(|m| m.algorithm).collect();
        if let Some(e) = self.meta.ensembles.get(&organ) {
            for alg in [AlgorithmId::Ensemble3, AlgorithmId::Ensemble6] {
                let members = e.members(alg).unwrap_or_default();
                if !members.is_empty() && members.iter().all(|a| self.model(*a, organ).is_some()) {
                    out.push(alg);
                }
            }
        }
        out
    }

    /// Predicted curve of one trained model or ensemble.
    pub fn predict(
        &self,
        algorithm: AlgorithmId,
        organ: Organ,
        features: &FeatureVector,
    ) -> Result<CumulativeDvh, BundleError> {
        let unknown = || BundleError::UnknownModel { algorithm, organ };
        if algorithm.is_ensemble() {
            let names = self.meta.ensembles.get(&organ).and_then(|e| e.members(algorithm)).ok_or_else(unknown)?;
            if names.is_empty() {
                return Err(unknown());
            }
            let members =
                names.iter().map(|a| self.model(*a, organ).ok_or_else(unknown)).collect::<Result<Vec<_>, _>>()?;
            return ensemble_predict(&members, features).map_err(|e| BundleError::Malformed(e.to_string()));
        }
        Ok(predict_dvh(self.model(algorithm, organ).ok_or_else(unknown)?, features))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, BundleError> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let count = 1 + self.models.len() + self.bands.len();
        out.extend_from_slice(&(count as u32).to_le_bytes());
        write_section(&mut out, KIND_META, &self.meta)?;
        for m in &self.models {
            write_section(&mut out, KIND_MODEL, m)?;
        }
        for (organ, band) in &self.bands {
            write_section(&mut out, KIND_BAND, &(organ, band))?;
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, BundleError> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(BundleError::BadMagic);
        }
        if bytes.len() < 12 + 32 {
            return Err(BundleError::Truncated);
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(BundleError::VersionMismatch { found: version });
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(BundleError::DigestMismatch);
        }
        let count = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes")) as usize;
        let mut pos = 12;
        let mut meta: Option<BundleMeta> = None;
        let mut models = Vec::new();
        let mut bands = BTreeMap::new();
        for i in 0..count {
            if pos + 9 > body.len() {
                return Err(BundleError::Truncated);
            }
            let kind = body[pos];
            let len = u64::from_le_bytes(body[pos + 1..pos + 9].try_into().expect("8 bytes")) as usize;
            pos += 9;
            let payload =
                body.get(pos..pos.checked_add(len).ok_or(BundleError::Truncated)?).ok_or(BundleError::Truncated)?;
            pos += len;
            match (kind, i) {
                (KIND_META, 0) => meta = Some(decode(payload)?),
                (KIND_MODEL, i) if i > 0 => models.push(decode::<TrainedDvhModel>(payload)?),
                (KIND_BAND, i) if i > 0 => {
                    let (organ, band): (Organ, ConfidenceBand) = decode(payload)?;
                    bands.insert(organ, band);
                }
                (k, i) => return Err(BundleError::Malformed(format!("unexpected section kind {k} at position {i}"))),
            }
        }
        if pos != body.len() {
            return Err(BundleError::Malformed("trailing bytes after the last section".into()));
        }
        let meta = meta.ok_or_else(|| BundleError::Malformed("missing metadata section".into()))?;
        if bundle_fingerprint(&models, &meta.ensembles) != meta.fingerprint {
            return Err(BundleError::FingerprintMismatch);
        }
        Ok(Self { meta, models, bands })
    }

    /// Writes the bundle and its JSON metadata sidecar.
    pub fn save(&self, path: &Path) -> Result<(), BundleError> {
        std::fs::write(path, self.to_bytes()?)?;
        let sidecar = serde_json::to_string_pretty(&self.meta).map_err(|e| BundleError::Malformed(e.to_string()))?;
        std::fs::write(sidecar_path(path), sidecar)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, BundleError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// `model.dvhb` → `model.dvhb.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn write_section<T: Serialize>(out: &mut Vec<u8>, kind: u8, value: &T) -> Result<(), BundleError> {
    let mut payload = Vec::new();
    ciborium::into_writer(value, &mut payload).map_err(|e| BundleError::Malformed(e.to_string()))?;
    out.push(kind);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    Ok(())
}

fn decode<T: serde::de::DeserializeOwned>(payload: &[u8]) -> Result<T, BundleError> {
    ciborium::from_reader(payload).map_err(|e| BundleError::Malformed(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regress::testutil::toy_cohort;
    use crate::regress::train_dvh_model;

    fn small_bundle() -> ModelBundle {
        let cohort = toy_cohort(20, 8, 5);
        let models: Vec<TrainedDvhModel> = [AlgorithmId::LR, AlgorithmId::DT, AlgorithmId::FRBP]
            .into_iter()
            .map(|a| train_dvh_model(a, Organ::Bladder, &cohort, &Hyperparams::default_for(a).unwrap(), 3).unwrap())
            .collect();
        let mut ensembles = BTreeMap::new();
        ensembles.insert(
            Organ::Bladder,
            EnsembleMembers { best3: vec![AlgorithmId::DT, AlgorithmId::LR, AlgorithmId::FRBP], best6: vec![] },
        );
        let grid = models[0].grid;
        ModelBundle::new(3, grid, (vec!["a".into()], vec!["b".into()]), models, ensembles, BTreeMap::new(), 0)
    }

    #[test]
    fn round_trip_predicts_identically() {
        let b = small_bundle();
        let back = ModelBundle::from_bytes(&b.to_bytes().unwrap()).unwrap();
        assert_eq!(back, b);
        let f = toy_cohort(1, 8, 9)[0].features;
        for alg in b.roster(Organ::Bladder) {
            let x = b.predict(alg, Organ::Bladder, &f).unwrap();
            let y = back.predict(alg, Organ::Bladder, &f).unwrap();
            assert!(x.values().iter().zip(y.values()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
        assert_eq!(b.roster(Organ::Bladder).last(), Some(&AlgorithmId::Ensemble3));
    }

    #[test]
    fn corruption_detected() {
        let bytes = small_bundle().to_bytes().unwrap();
        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        assert!(matches!(ModelBundle::from_bytes(&flipped), Err(BundleError::DigestMismatch)));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(ModelBundle::from_bytes(&v2), Err(BundleError::VersionMismatch { found: 2 })));
        assert!(matches!(ModelBundle::from_bytes(b"nope"), Err(BundleError::BadMagic)));
        assert!(matches!(ModelBundle::from_bytes(&bytes[..30]), Err(BundleError::Truncated)));
    }

    #[test]
    fn unknown_models_rejected() {
        let b = small_bundle();
        let f = toy_cohort(1, 8, 9)[0].features;
        assert!(matches!(b.predict(AlgorithmId::RF, Organ::Bladder, &f), Err(BundleError::UnknownModel { .. })));
        assert!(b.predict(AlgorithmId::LR, Organ::Rectum, &f).is_err());
        assert!(b.predict(AlgorithmId::Ensemble6, Organ::Bladder, &f).is_err());
    }

    #[test]
    fn fingerprint_ignores_creation_time() {
        let a = small_bundle();
        let mut b = small_bundle();
        b.meta.created_unix = 99;
        assert_eq!(a.meta.fingerprint, b.meta.fingerprint);
    }

    #[test]
    fn save_writes_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.dvhb");
        small_bundle().save(&path).unwrap();
        let meta: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(sidecar_path(&path)).unwrap()).unwrap();
        assert_eq!(meta["format_version"], 1);
        assert_eq!(ModelBundle::load(&path).unwrap(), small_bundle());
    }
}
