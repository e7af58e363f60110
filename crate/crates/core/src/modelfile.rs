//! Binary model and class files.
//!
//! A file is a magic string, a little-endian `u32` format version and a
//! bincode-encoded list of named sections. Every section carries the SHA-256 of
//! its payload. Floating-point values are stored in their exact binary form,
//! so a loaded model predicts bit-identically to the one that was saved.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::Vocabularies;
use crate::derivation::DerivationContext;
use crate::models::{ClassTrees, ModelConfig, ModelSet, TrainingStats, SCHEMA_VERSION};

pub const MAGIC: &[u8; 8] = b"DTPARSE\x01";

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("file format version {found}, this build reads version {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("expected a {expected} file, found a {found} file")]
    WrongKind { expected: String, found: String },
    #[error("checksum mismatch in section `{0}`")]
    ChecksumMismatch(String),
    #[error("missing section `{0}`")]
    MissingSection(String),
    #[error("malformed section `{section}`: {reason}")]
    Decode { section: String, reason: String },
}

#[derive(Serialize, Deserialize)]
struct Section {
    name: String,
    sha256: [u8; 32],
    payload: Vec<u8>,
}

#[derive(Serialize, Deserialize)]
struct Container {
    kind: String,
    sections: Vec<Section>,
}

struct Writer {
    kind: &'static str,
    sections: Vec<Section>,
}

impl Writer {
    fn new(kind: &'static str) -> Self {
        Writer { kind, sections: Vec::new() }
    }

    fn add<T: Serialize>(mut self, name: &str, value: &T) -> Self {
        let payload = bincode::serialize(value).expect("in-memory serialization");
        let sha256 = Sha256::digest(&payload).into();
        self.sections.push(Section { name: name.into(), sha256, payload });
        self
    }

    fn finish(self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&SCHEMA_VERSION.to_le_bytes());
        let c = Container { kind: self.kind.into(), sections: self.sections };
        out.extend(bincode::serialize(&c).expect("in-memory serialization"));
        out
    }
}

struct Reader {
    sections: Vec<Section>,
}

impl Reader {
    fn open(bytes: &[u8], kind: &str) -> Result<Self, ModelFileError> {
        let header = MAGIC.len() + 4;
        if bytes.len() < header || &bytes[..MAGIC.len()] != MAGIC {
            return Err(ModelFileError::BadMagic);
        }
        let found = u32::from_le_bytes(bytes[MAGIC.len()..header].try_into().unwrap());
        if found != SCHEMA_VERSION {
            return Err(ModelFileError::VersionMismatch { found, expected: SCHEMA_VERSION });
        }
        let c: Container = bincode::deserialize(&bytes[header..])
            .map_err(|e| ModelFileError::Decode { section: "header".into(), reason: e.to_string() })?;
        if c.kind != kind {
            return Err(ModelFileError::WrongKind { expected: kind.into(), found: c.kind });
        }
        for s in &c.sections {
            let sum: [u8; 32] = Sha256::digest(&s.payload).into();
            if sum != s.sha256 {
                return Err(ModelFileError::ChecksumMismatch(s.name.clone()));
            }
        }
        Ok(Reader { sections: c.sections })
    }

    fn get<T: DeserializeOwned>(&self, name: &str) -> Result<T, ModelFileError> {
        let s =
            self.sections.iter().find(|s| s.name == name).ok_or_else(|| ModelFileError::MissingSection(name.into()))?;
        bincode::deserialize(&s.payload)
            .map_err(|e| ModelFileError::Decode { section: name.into(), reason: e.to_string() })
    }
}

pub fn model_to_bytes(m: &ModelSet) -> Vec<u8> {
    Writer::new("model")
        .add("context", &m.ctx)
        .add("classes", &m.classes)
        .add("tag", &m.tag)
        .add("extension", &m.extension)
        .add("label", &m.label)
        .add("config", &m.config)
        .add("stats", &m.stats)
        .finish()
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<ModelSet, ModelFileError> {
    let r = Reader::open(bytes, "model")?;
    let ctx: DerivationContext = r.get("context")?;
    let classes: ClassTrees = r.get("classes")?;
    let config: ModelConfig = r.get("config")?;
    let stats: TrainingStats = r.get("stats")?;
    Ok(ModelSet {
        ctx,
        classes,
        tag: r.get("tag")?,
        extension: r.get("extension")?,
        label: r.get("label")?,
        config,
        stats,
    })
}

pub fn save_model(m: &ModelSet, path: &Path) -> Result<(), ModelFileError> {
    Ok(std::fs::write(path, model_to_bytes(m))?)
}

pub fn load_model(path: &Path) -> Result<ModelSet, ModelFileError> {
    model_from_bytes(&std::fs::read(path)?)
}

/// Vocabularies with the class trees built over them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassFile {
    pub vocab: Vocabularies,
    pub classes: ClassTrees,
}

pub fn classes_to_bytes(c: &ClassFile) -> Vec<u8> {
    Writer::new("classes").add("vocabularies", &c.vocab).add("classes", &c.classes).finish()
}

pub fn classes_from_bytes(bytes: &[u8]) -> Result<ClassFile, ModelFileError> {
    let r = Reader::open(bytes, "classes")?;
    Ok(ClassFile { vocab: r.get("vocabularies")?, classes: r.get("classes")? })
}
