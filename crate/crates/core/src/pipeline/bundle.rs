//! Single-file model bundle.
//!
//! ```text
//! "LFSB" | u32 version | u32 table_len | table | u32 crc32(table) | payloads
//! table  = u32 count, then per section: str name, u64 offset, u64 len, u32 crc32
//! ```
//!
//! Offsets are absolute. All integers little-endian; strings are u32-length-prefixed UTF-8.

use std::io::Write;
use std::path::Path;

use crate::codec::{Reader, Writer};
use crate::features::{FeatureLayout, LayoutTable};
use crate::forest::Forest;
use crate::fusion::FusionWeights;
use crate::pipeline::TaskId;
use crate::roi::RoiConfig;
use crate::tinycnn::CnnModel;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"LFSB";
pub const FORMAT_VERSION: u32 = 1;

pub const SECTIONS: [&str; 7] = [
    "layout",
    "forest_task1",
    "forest_task2",
    "cnn_task1",
    "cnn_task2",
    "weights",
    "metadata",
];

/// Name used in checksum errors for the section table itself.
pub const HEADER_SECTION: &str = "header";

#[derive(Debug, Clone, PartialEq)]
pub struct Metadata {
    pub seed: u64,
    /// crc32 over every training label row and image file, task by task.
    pub dataset_hash: u32,
    pub timestamp: u64,
    pub roi: RoiConfig,
    pub n_images: [u64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskModels {
    pub forest: Forest,
    pub cnn: CnnModel,
    pub weights: FusionWeights,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub layout: LayoutTable,
    pub tasks: [TaskModels; 2],
    pub metadata: Metadata,
}

impl ModelBundle {
    pub fn task(&self, t: TaskId) -> &TaskModels {
        &self.tasks[t.index()]
    }

    fn metadata_bytes(&self) -> Vec<u8> {
        let m = &self.metadata;
        let mut w = Writer::new();
        w.u64(m.seed)
            .u32(m.dataset_hash)
            .u64(m.timestamp)
            .f64(m.roi.margin_frac)
            .u8(m.roi.invert_foreground as u8)
            .u8(m.roi.median_filter as u8)
            .u64(m.n_images[0])
            .u64(m.n_images[1]);
        w.into_bytes()
    }

    fn section_payloads(&self) -> Vec<Vec<u8>> {
        let mut weights = Writer::new();
        weights.f64(self.tasks[0].weights.w()).f64(self.tasks[1].weights.w());
        vec![
            self.layout.to_bytes(),
            self.tasks[0].forest.to_bytes(),
            self.tasks[1].forest.to_bytes(),
            self.tasks[0].cnn.to_bytes(),
            self.tasks[1].cnn.to_bytes(),
            weights.into_bytes(),
            self.metadata_bytes(),
        ]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payloads = self.section_payloads();
        let table_len = 4 + SECTIONS
            .iter()
            .map(|name| 4 + name.len() + 8 + 8 + 4)
            .sum::<usize>();
        let mut offset = (4 + 4 + 4 + table_len + 4) as u64;
        let mut table = Writer::new();
        table.u32(SECTIONS.len() as u32);
        for (name, p) in SECTIONS.iter().zip(&payloads) {
            table
                .str(name)
                .u64(offset)
                .u64(p.len() as u64)
                .u32(crc32fast::hash(p));
            offset += p.len() as u64;
        }
        let table = table.into_bytes();
        debug_assert_eq!(table.len(), table_len);
        let mut out = Writer::new();
        out.bytes(MAGIC)
            .u32(FORMAT_VERSION)
            .u32(table.len() as u32)
            .bytes(&table)
            .u32(crc32fast::hash(&table));
        for p in &payloads {
            out.bytes(p);
        }
        out.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, HEADER_SECTION);
        if r.take(4)? != MAGIC {
            return Err(Error::BadMagic);
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        let table_len = r.u32()? as usize;
        let table = r.take(table_len)?;
        if r.u32()? != crc32fast::hash(table) {
            return Err(Error::Checksum {
                section: HEADER_SECTION.into(),
            });
        }
        let mut t = Reader::new(table, HEADER_SECTION);
        let count = t.u32()? as usize;
        if count != SECTIONS.len() {
            return Err(Error::Model(format!("expected {} sections, found {count}", SECTIONS.len())));
        }
        let mut payloads = Vec::with_capacity(count);
        for expected in SECTIONS {
            let name = t.str()?;
            if name != expected {
                return Err(Error::Model(format!("expected section `{expected}`, found `{name}`")));
            }
            let (offset, len, crc) = (t.u64()?, t.u64()?, t.u32()?);
            let end = offset.checked_add(len).filter(|&e| e <= bytes.len() as u64);
            let Some(end) = end else {
                return Err(Error::Truncated(format!("section `{name}` extends past end of file")));
            };
            let payload = &bytes[offset as usize..end as usize];
            if crc32fast::hash(payload) != crc {
                return Err(Error::Checksum { section: name });
            }
            payloads.push(payload);
        }
        t.finish()?;

        let layout = LayoutTable::decode(payloads[0])?;
        if !layout.matches(&FeatureLayout::canonical()) {
            return Err(Error::LayoutMismatch {
                expected: FeatureLayout::canonical().hash(),
                found: crc32fast::hash(payloads[0]),
            });
        }
        let forest = |i: usize| Forest::from_bytes(payloads[i], SECTIONS[i]);
        let cnn = |i: usize| CnnModel::from_bytes(payloads[i], SECTIONS[i]);
        let mut w = Reader::new(payloads[5], SECTIONS[5]);
        let weight = |v: f64| {
            FusionWeights::new(v).map_err(|e| Error::Model(format!("section `weights`: {e}")))
        };
        let (w1, w2) = (weight(w.f64()?)?, weight(w.f64()?)?);
        w.finish()?;
        let tasks = [
            TaskModels {
                forest: forest(1)?,
                cnn: cnn(3)?,
                weights: w1,
            },
            TaskModels {
                forest: forest(2)?,
                cnn: cnn(4)?,
                weights: w2,
            },
        ];
        let metadata = decode_metadata(payloads[6])?;
        Ok(ModelBundle {
            layout,
            tasks,
            metadata,
        })
    }
}

fn decode_metadata(bytes: &[u8]) -> Result<Metadata> {
    let mut r = Reader::new(bytes, SECTIONS[6]);
    let flag = |v: u8| match v {
        0 => Ok(false),
        1 => Ok(true),
        _ => Err(Error::Model(format!("section `metadata`: flag byte {v}"))),
    };
    let m = Metadata {
        seed: r.u64()?,
        dataset_hash: r.u32()?,
        timestamp: r.u64()?,
        roi: RoiConfig {
            margin_frac: r.f64()?,
            invert_foreground: flag(r.u8()?)?,
            median_filter: flag(r.u8()?)?,
        },
        n_images: [r.u64()?, r.u64()?],
    };
    r.finish()?;
    Ok(m)
}

/// Writes via a sibling temp file and rename, so readers never see a partial bundle.
pub fn save_bundle(bundle: &ModelBundle, path: &Path) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(&bundle.to_bytes())
        .and_then(|_| tmp.as_file().sync_all())
        .map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn load_bundle(path: &Path) -> Result<ModelBundle> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    ModelBundle::from_bytes(&bytes)
}

/// `(name, offset, len)` of every section, read from an intact header.
pub fn section_spans(bytes: &[u8]) -> Result<Vec<(String, usize, usize)>> {
    let mut r = Reader::new(bytes, HEADER_SECTION);
    r.take(8)?;
    let table_len = r.u32()? as usize;
    let mut t = Reader::new(r.take(table_len)?, HEADER_SECTION);
    let n = t.u32()?;
    (0..n)
        .map(|_| {
            let name = t.str()?;
            let (off, len, _) = (t.u64()?, t.u64()?, t.u32()?);
            Ok((name, off as usize, len as usize))
        })
        .collect()
}
