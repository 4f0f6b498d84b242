//! `OTES` embedding store.
//!
//! Layout (little-endian): magic `OTES`, version u8, modality tag u8, row
//! count u64, width u32, 16-byte checkpoint fingerprint, row ids as u64,
//! then the row-major f32 matrix.

use std::collections::HashMap;
use std::path::Path;

use crate::data::TrajectoryRecord;
use crate::encoders::{Encoders, Modality, ModalityEmbedding};
use crate::error::{Error, Result};
use crate::nn::Fingerprint;
use crate::par::Exec;

const MAGIC: &[u8; 4] = b"OTES";
const VERSION: u8 = 1;
const HEADER: usize = 4 + 1 + 1 + 8 + 4 + 16;
/// Rows must be unit length to within f32 rounding.
pub const NORM_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    modality: Modality,
    width: usize,
    fingerprint: Fingerprint,
    ids: Vec<u64>,
    data: Vec<f32>,
    index: HashMap<u64, usize>,
}

impl EmbeddingStore {
    /// Builds a store from f32 rows, checking ids and norms.
    pub fn new(
        modality: Modality,
        width: usize,
        fingerprint: Fingerprint,
        ids: Vec<u64>,
        data: Vec<f32>,
    ) -> Result<Self> {
        if width == 0 {
            return Err(Error::Parameter("store width must be positive".into()));
        }
        if data.len() != ids.len() * width {
            return Err(Error::Shape(format!(
                "{} values for {} rows of width {width}",
                data.len(),
                ids.len()
            )));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, &id) in ids.iter().enumerate() {
            if index.insert(id, i).is_some() {
                return Err(Error::Data(format!("duplicate id {id} in store")));
            }
        }
        for (i, row) in data.chunks_exact(width).enumerate() {
            let n = row.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
            if (n - 1.0).abs() > NORM_TOL {
                return Err(Error::Data(format!("row {} has norm {n}", ids[i])));
            }
        }
        Ok(EmbeddingStore {
            modality,
            width,
            fingerprint,
            ids,
            data,
            index,
        })
    }

    pub fn from_embeddings(
        modality: Modality,
        fingerprint: Fingerprint,
        embeddings: &[ModalityEmbedding],
    ) -> Result<Self> {
        let width = embeddings.first().map_or(0, |e| e.vector.len());
        let mut data = Vec::with_capacity(embeddings.len() * width);
        for e in embeddings {
            if e.vector.len() != width {
                return Err(Error::Shape("embeddings of different widths".into()));
            }
            data.extend(e.vector.iter().map(|&v| v as f32));
        }
        let ids = embeddings.iter().map(|e| e.trajectory_id).collect();
        Self::new(modality, width, fingerprint, ids, data)
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn fingerprint(&self) -> &Fingerprint {
        &self.fingerprint
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn position(&self, id: u64) -> Option<usize> {
        self.index.get(&id).copied()
    }

    /// True when both stores hold exactly the same ids.
    pub fn same_ids(&self, other: &EmbeddingStore) -> bool {
        self.len() == other.len() && self.ids.iter().all(|id| other.index.contains_key(id))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER + self.ids.len() * 8 + self.data.len() * 4);
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.modality.tag());
        out.extend_from_slice(&(self.ids.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&self.fingerprint);
        for id in &self.ids {
            out.extend_from_slice(&id.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER || &bytes[..4] != MAGIC {
            return Err(Error::Format("not an OTES store".into()));
        }
        if bytes[4] != VERSION {
            return Err(Error::Format(format!("unsupported store version {}", bytes[4])));
        }
        let modality = Modality::from_tag(bytes[5])?;
        let rows = u64::from_le_bytes(bytes[6..14].try_into().expect("8 bytes")) as usize;
        let width = u32::from_le_bytes(bytes[14..18].try_into().expect("4 bytes")) as usize;
        let mut fingerprint = [0u8; 16];
        fingerprint.copy_from_slice(&bytes[18..34]);
        let need = rows
            .checked_mul(8 + 4 * width)
            .and_then(|n| n.checked_add(HEADER))
            .ok_or_else(|| Error::Format("store size overflows".into()))?;
        if bytes.len() != need {
            return Err(Error::Format(format!("store has {} bytes, header implies {need}", bytes.len())));
        }
        let ids_end = HEADER + rows * 8;
        let ids = bytes[HEADER..ids_end]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let data = bytes[ids_end..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Self::new(modality, width, fingerprint, ids, data)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        // write then rename so readers never see a partial file
        let tmp = path.with_extension("otes.tmp");
        std::fs::write(&tmp, self.to_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Encodes one view of every record into a store.
pub fn build_store(
    encoders: &Encoders,
    records: &[TrajectoryRecord],
    modality: Modality,
    exec: Exec,
) -> Result<EmbeddingStore> {
    let embeddings = encoders.embed_records(records, modality, exec).map_err(|e| match e {
        Error::Vocabulary { id, size } => Error::Config(format!(
            "dataset {modality} id {id} outside the checkpoint vocabulary of size {size}"
        )),
        other => other,
    })?;
    EmbeddingStore::from_embeddings(modality, encoders.fingerprint, &embeddings)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EmbeddingStore {
        EmbeddingStore::new(
            Modality::Road,
            2,
            [7; 16],
            vec![10, 3, 99],
            vec![1.0, 0.0, 0.6, 0.8, 0.0, -1.0],
        )
        .unwrap()
    }

    #[test]
    fn bytes_round_trip() {
        let s = sample();
        let bytes = s.to_bytes();
        assert_eq!(&bytes[..4], b"OTES");
        assert_eq!(bytes[4], 1);
        assert_eq!(bytes[5], Modality::Road.tag());
        assert_eq!(bytes.len(), 34 + 3 * 8 + 6 * 4);
        assert_eq!(EmbeddingStore::from_bytes(&bytes).unwrap(), s);
    }

    #[test]
    fn invalid_stores_rejected() {
        assert!(EmbeddingStore::new(Modality::Traj, 2, [0; 16], vec![1, 1], vec![1.0, 0.0, 1.0, 0.0]).is_err());
        assert!(EmbeddingStore::new(Modality::Traj, 2, [0; 16], vec![1], vec![0.5, 0.0]).is_err());
        assert!(EmbeddingStore::new(Modality::Traj, 2, [0; 16], vec![1], vec![1.0]).is_err());
        let bytes = sample().to_bytes();
        assert!(matches!(EmbeddingStore::from_bytes(&bytes[..40]), Err(Error::Format(_))));
        assert!(matches!(EmbeddingStore::from_bytes(b"OTWT...."), Err(Error::Format(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("road.otes");
        sample().write(&path).unwrap();
        assert_eq!(EmbeddingStore::read(&path).unwrap(), sample());
        assert_eq!(sample().position(99), Some(2));
        assert!(sample().same_ids(&sample()));
    }
}
