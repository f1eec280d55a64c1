//! Self-describing snapshots of populations and block parameters.
//!
//! JSON (text) and CBOR (binary) both round-trip every `f64` bit for bit;
//! the population is stored by its parameters and rebuilt on load.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::ensemble::{BlockQ, Coupling, EnsembleModel, PopulationSettings};
use crate::lti::FirMatrix;
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SnapshotFormat {
    Json,
    Cbor,
}

impl SnapshotFormat {
    /// Picks the format from a file extension (`.json` or `.cbor`).
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Ok(SnapshotFormat::Json),
            Some("cbor") => Ok(SnapshotFormat::Cbor),
            other => Err(Error::Snapshot(format!("unknown snapshot extension {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirRecord {
    pub rows: usize,
    pub cols: usize,
    /// Column-major entries of each tap.
    pub taps: Vec<Vec<f64>>,
}

impl FirRecord {
    pub fn from_fir(fir: &FirMatrix) -> Self {
        let (rows, cols) = fir.shape();
        FirRecord {
            rows,
            cols,
            taps: fir.taps().iter().map(|t| t.as_slice().to_vec()).collect(),
        }
    }

    pub fn to_fir(&self) -> Result<FirMatrix> {
        let taps = self
            .taps
            .iter()
            .map(|t| {
                if t.len() != self.rows * self.cols {
                    return Err(Error::Snapshot(format!(
                        "tap holds {} entries, expected {}x{}",
                        t.len(),
                        self.rows,
                        self.cols
                    )));
                }
                Ok(DMatrix::from_column_slice(self.rows, self.cols, t))
            })
            .collect::<Result<Vec<_>>>()?;
        FirMatrix::new(taps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationRecord {
    pub seed: u64,
    pub settings: PopulationSettings,
    pub resampled: usize,
    pub parameters: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockQRecord {
    pub diagonal: Vec<FirRecord>,
    pub diag_norms: Vec<f64>,
    pub coupling: Option<Coupling>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub format_version: u32,
    pub library_version: String,
    pub population: Option<PopulationRecord>,
    pub q: Option<BlockQRecord>,
}

impl Snapshot {
    pub fn new(model: Option<&EnsembleModel>, q: Option<&BlockQ>) -> Self {
        Snapshot {
            format_version: FORMAT_VERSION,
            library_version: env!("CARGO_PKG_VERSION").to_string(),
            population: model.map(|m| PopulationRecord {
                seed: m.seed(),
                settings: *m.settings(),
                resampled: m.resampled(),
                parameters: m.parameters(),
            }),
            q: q.map(|q| BlockQRecord {
                diagonal: q.diagonal_entries().iter().map(FirRecord::from_fir).collect(),
                diag_norms: q.diagonal_norms().to_vec(),
                coupling: q.coupling().cloned(),
            }),
        }
    }

    pub fn model(&self) -> Result<Option<EnsembleModel>> {
        self.population
            .as_ref()
            .map(|p| {
                let mut m = EnsembleModel::from_parameters(&p.parameters, p.seed, p.settings)?;
                m.set_resampled(p.resampled);
                Ok(m)
            })
            .transpose()
    }

    pub fn block_q(&self) -> Result<Option<BlockQ>> {
        self.q
            .as_ref()
            .map(|r| {
                let diagonal = r.diagonal.iter().map(FirRecord::to_fir).collect::<Result<Vec<_>>>()?;
                BlockQ::from_parts(diagonal, r.diag_norms.clone(), r.coupling.clone())
            })
            .transpose()
    }

    pub fn to_bytes(&self, format: SnapshotFormat) -> Result<Vec<u8>> {
        match format {
            SnapshotFormat::Json => serde_json::to_vec_pretty(self).map_err(|e| Error::Snapshot(e.to_string())),
            SnapshotFormat::Cbor => {
                let mut out = Vec::new();
                ciborium::into_writer(self, &mut out).map_err(|e| Error::Snapshot(e.to_string()))?;
                Ok(out)
            }
        }
    }

    pub fn from_bytes(bytes: &[u8], format: SnapshotFormat) -> Result<Self> {
        let snap: Snapshot = match format {
            SnapshotFormat::Json => serde_json::from_slice(bytes).map_err(|e| Error::Snapshot(e.to_string()))?,
            SnapshotFormat::Cbor => ciborium::from_reader(bytes).map_err(|e| Error::Snapshot(e.to_string()))?,
        };
        if snap.format_version != FORMAT_VERSION {
            return Err(Error::Snapshot(format!(
                "unsupported format version {}",
                snap.format_version
            )));
        }
        Ok(snap)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes(SnapshotFormat::from_path(path)?)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?, SnapshotFormat::from_path(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{make_alpha_dominant, Allocation, DominanceProfile};
    use crate::norms::FrequencyGrid;

    fn bits(v: &[f64]) -> Vec<u64> {
        v.iter().map(|x| x.to_bits()).collect()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let settings = PopulationSettings {
            grid_points: 64,
            ..Default::default()
        };
        let model = EnsembleModel::sample(4, 3, settings).unwrap();
        let grid = FrequencyGrid::uniform(64).unwrap();
        let entries = (0..4)
            .map(|i| FirMatrix::scalar(&[0.1 * i as f64 + 1.0 / 3.0, -1e-17, std::f64::consts::PI]).unwrap())
            .collect();
        let q = BlockQ::diagonal(entries, &grid).unwrap();
        let q = make_alpha_dominant(
            &q,
            DominanceProfile::new(0.7, 0.3).unwrap(),
            Some(2),
            Allocation::Signed,
            9,
        )
        .unwrap();
        let snap = Snapshot::new(Some(&model), Some(&q));
        for format in [SnapshotFormat::Json, SnapshotFormat::Cbor] {
            let back = Snapshot::from_bytes(&snap.to_bytes(format).unwrap(), format).unwrap();
            assert_eq!(back, snap);
            let q2 = back.block_q().unwrap().unwrap();
            assert_eq!(q2, q);
            let c1 = q.coupling().unwrap();
            let c2 = q2.coupling().unwrap();
            assert_eq!(bits(&c1.coef), bits(&c2.coef));
            let m2 = back.model().unwrap().unwrap();
            assert_eq!(m2.parameters(), model.parameters());
            assert_eq!(m2.constants(), model.constants());
        }
    }

    #[test]
    fn rejects_bad_extension_and_version() {
        assert!(SnapshotFormat::from_path(Path::new("x.bin")).is_err());
        let mut snap = Snapshot::new(None, None);
        snap.format_version = 99;
        let bytes = snap.to_bytes(SnapshotFormat::Json).unwrap();
        assert!(Snapshot::from_bytes(&bytes, SnapshotFormat::Json).is_err());
    }
}
