//! Binary model container.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 8 | magic `KOOPMDL\0` |
//! | 4 | format version (`u32`, currently 1) |
//! | 4 | reserved, zero |
//! | 8 | header length `h` (`u64`) |
//! | h | UTF-8 JSON header |
//! | ... | matrix blocks, `f64` column-major, in header order |
//!
//! The header is an object with `kind`, `metadata` and `blocks`, where each
//! block entry is `{"name", "rows", "cols"}`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dictionary::{Dictionary, DictionaryDescriptor};
use crate::dynamics::DomainBox;
use crate::edmd::TransformedModel;
use crate::error::{Error, Result};
use crate::manifold::StiefelPoint;
use crate::optimizer::OptimizerStatus;

pub const MAGIC: &[u8; 8] = b"KOOPMDL\0";
pub const FORMAT_VERSION: u32 = 1;

pub const KIND_MODEL: &str = "transformed-model";
pub const KIND_SUBSPACE: &str = "subspace";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: String,
    metadata: serde_json::Value,
    blocks: Vec<BlockInfo>,
}

/// Untyped contents of a container file.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub metadata: serde_json::Value,
    pub blocks: Vec<(String, DMatrix<f64>)>,
}

impl Container {
    pub fn block(&self, name: &str) -> Result<&DMatrix<f64>> {
        self.blocks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::Format(format!("missing block `{name}`")))
    }

    fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Format(format!("expected a {kind} file, found {}", self.kind)));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            kind: self.kind.clone(),
            metadata: self.metadata.clone(),
            blocks: self
                .blocks
                .iter()
                .map(|(name, m)| BlockInfo {
                    name: name.clone(),
                    rows: m.nrows(),
                    cols: m.ncols(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let payload: usize = self.blocks.iter().map(|(_, m)| m.len() * 8).sum();
        let mut out = Vec::with_capacity(24 + json.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, m) in &self.blocks {
            for v in m.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let mut fixed = [0u8; 24];
        bytes
            .read_exact(&mut fixed)
            .map_err(|_| Error::Format("file is shorter than the fixed preamble".into()))?;
        if &fixed[..8] != MAGIC {
            return Err(Error::Format("bad magic bytes".into()));
        }
        let version = u32::from_le_bytes(fixed[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {version}")));
        }
        let header_len = u64::from_le_bytes(fixed[16..24].try_into().expect("8 bytes")) as usize;
        if bytes.len() < header_len {
            return Err(Error::Format("truncated header".into()));
        }
        let (json, mut rest) = bytes.split_at(header_len);
        let header: Header = serde_json::from_slice(json)?;
        let mut blocks = Vec::with_capacity(header.blocks.len());
        for info in header.blocks {
            let count = info.rows.checked_mul(info.cols).ok_or_else(|| Error::Format("block too large".into()))?;
            if rest.len() < count * 8 {
                return Err(Error::Format(format!("truncated block `{}`", info.name)));
            }
            let (data, tail) = rest.split_at(count * 8);
            let values: Vec<f64> = data
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            blocks.push((info.name, DMatrix::from_vec(info.rows, info.cols, values)));
            rest = tail;
        }
        if !rest.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes", rest.len())));
        }
        Ok(Self {
            kind: header.kind,
            metadata: header.metadata,
            blocks,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub system: String,
    pub dt: Option<f64>,
    pub samples: usize,
    pub domain: DomainBox,
    pub seed: u64,
    pub gram_residual: f64,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelMetadata {
    dictionary: DictionaryDescriptor,
    protected: usize,
    state_dim: usize,
    provenance: Provenance,
}

/// A trained EDMD model: the transformed data plus the full compression in
/// the dictionary basis.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub dictionary: DictionaryDescriptor,
    pub model: TransformedModel,
    pub k_dictionary: DMatrix<f64>,
    pub provenance: Provenance,
}

impl SavedModel {
    pub fn dictionary(&self) -> Result<Dictionary> {
        Dictionary::from_descriptor(&self.dictionary)
    }

    pub fn to_container(&self) -> Result<Container> {
        let metadata = ModelMetadata {
            dictionary: self.dictionary.clone(),
            protected: self.model.s,
            state_dim: self.model.n,
            provenance: self.provenance.clone(),
        };
        Ok(Container {
            kind: KIND_MODEL.into(),
            metadata: serde_json::to_value(metadata)?,
            blocks: vec![
                ("p_inv".into(), self.model.p_inv.clone()),
                ("g_e".into(), self.model.g_e.clone()),
                ("s_e".into(), self.model.s_e.clone()),
                ("q11".into(), self.model.q11.clone()),
                ("k_b".into(), self.k_dictionary.clone()),
            ],
        })
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind(KIND_MODEL)?;
        let meta: ModelMetadata = serde_json::from_value(c.metadata.clone())?;
        let model = TransformedModel::from_parts(
            c.block("g_e")?.clone(),
            c.block("s_e")?.clone(),
            c.block("p_inv")?.clone(),
            meta.protected,
            meta.state_dim,
        )?;
        if c.block("q11")? != &model.q11 {
            return Err(Error::Format("stored Q11 disagrees with P^{-1}".into()));
        }
        let k_dictionary = c.block("k_b")?.clone();
        if k_dictionary.shape() != model.a_e.shape() || meta.dictionary.exponents.len() != model.dictionary_size() {
            return Err(Error::Format("dictionary size disagrees with the stored blocks".into()));
        }
        Ok(Self {
            dictionary: meta.dictionary,
            model,
            k_dictionary,
            provenance: meta.provenance,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SubspaceMetadata {
    protected: usize,
    rank: usize,
    seed: u64,
    objective_initial: f64,
    objective_final: f64,
    status: OptimizerStatus,
}

/// Result of subspace optimisation.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedSubspace {
    pub optimum: StiefelPoint,
    pub initial: StiefelPoint,
    /// Reduced compression `Ubar^T K_E Ubar` at the optimum.
    pub k_reduced: DMatrix<f64>,
    pub protected: usize,
    pub seed: u64,
    pub objective_initial: f64,
    pub objective_final: f64,
    pub status: OptimizerStatus,
}

impl SavedSubspace {
    pub fn rank(&self) -> usize {
        self.optimum.rank()
    }

    pub fn to_container(&self) -> Result<Container> {
        let metadata = SubspaceMetadata {
            protected: self.protected,
            rank: self.rank(),
            seed: self.seed,
            objective_initial: self.objective_initial,
            objective_final: self.objective_final,
            status: self.status,
        };
        Ok(Container {
            kind: KIND_SUBSPACE.into(),
            metadata: serde_json::to_value(metadata)?,
            blocks: vec![
                ("u_opt".into(), self.optimum.matrix().clone()),
                ("u_init".into(), self.initial.matrix().clone()),
                ("k_reduced".into(), self.k_reduced.clone()),
            ],
        })
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind(KIND_SUBSPACE)?;
        let meta: SubspaceMetadata = serde_json::from_value(c.metadata.clone())?;
        let optimum = StiefelPoint::new(c.block("u_opt")?.clone())?;
        let initial = StiefelPoint::new(c.block("u_init")?.clone())?;
        let k_reduced = c.block("k_reduced")?.clone();
        let l = meta.protected + meta.rank;
        if optimum.rank() != meta.rank || initial.matrix().shape() != optimum.matrix().shape() || k_reduced.shape() != (l, l) {
            return Err(Error::Format("subspace blocks have inconsistent shapes".into()));
        }
        Ok(Self {
            optimum,
            initial,
            k_reduced,
            protected: meta.protected,
            seed: meta.seed,
            objective_initial: meta.objective_initial,
            objective_final: meta.objective_final,
            status: meta.status,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }
}
