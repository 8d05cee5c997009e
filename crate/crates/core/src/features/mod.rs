//! The five hand-crafted feature families and their fixed 512-wide layout.
//!
//! | family            | offset | length |
//! |-------------------|-------:|-------:|
//! | `color_histogram` |      0 |     48 |
//! | `color_moments`   |     48 |      9 |
//! | `glcm`            |     57 |     20 |
//! | `lbp`             |     77 |    256 |
//! | `hog`             |    333 |    144 |
//! | `pad`             |    477 |     35 |
//!
//! Every image is resized to a 128×128 canvas before extraction so the vector
//! length never depends on the lesion crop size.

mod color;
mod glcm;
mod hog;
mod lbp;

pub use color::{color_histogram, color_moments};
pub use glcm::{glcm_compute, glcm_features, haralick, Glcm, GLCM_LEVELS, GLCM_OFFSETS};
pub use hog::{hog_descriptor, HOG_CANVAS, HOG_LEN};
pub use lbp::{lbp_code, lbp_histogram};

use crate::imaging::{resize_bilinear, to_grayscale, Image};
use crate::{Error, Result};

/// Side of the canvas every extractor sees.
pub const CANVAS_SIDE: usize = 128;
/// Total feature dimension, including the zero pad.
pub const FEATURE_DIM: usize = 512;

/// One contiguous block of the feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FamilySpan {
    pub name: &'static str,
    pub offset: usize,
    pub len: usize,
}

/// Ordered, contiguous list of feature families.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureLayout {
    spans: Vec<FamilySpan>,
}

const CANONICAL: [(&str, usize); 6] = [
    ("color_histogram", 48),
    ("color_moments", 9),
    ("glcm", 20),
    ("lbp", 256),
    ("hog", 144),
    ("pad", 35),
];

impl FeatureLayout {
    /// The published layout produced by [`final_feature_vector`].
    pub fn canonical() -> Self {
        Self::from_lengths(&CANONICAL).expect("canonical layout is valid")
    }

    /// A single unnamed family of `dim` values, for data that did not come
    /// from the image extractors.
    pub fn raw(dim: usize) -> Self {
        FeatureLayout {
            spans: vec![FamilySpan {
                name: "raw",
                offset: 0,
                len: dim,
            }],
        }
    }

    pub fn from_lengths(families: &[(&'static str, usize)]) -> Result<Self> {
        let mut offset = 0;
        let mut spans = Vec::with_capacity(families.len());
        for &(name, len) in families {
            if len == 0 {
                return Err(Error::InvalidInput(format!("family `{name}` has zero length")));
            }
            spans.push(FamilySpan { name, offset, len });
            offset += len;
        }
        Ok(FeatureLayout { spans })
    }

    pub fn spans(&self) -> &[FamilySpan] {
        &self.spans
    }

    pub fn dim(&self) -> usize {
        self.spans.last().map_or(0, |s| s.offset + s.len)
    }

    pub fn span(&self, name: &str) -> Option<FamilySpan> {
        self.spans.iter().copied().find(|s| s.name == name)
    }

    /// Binary table: count, then (name, offset, length) per family.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = crate::codec::Writer::new();
        w.u32(self.spans.len() as u32);
        for s in &self.spans {
            w.str(s.name).u32(s.offset as u32).u32(s.len as u32);
        }
        w.into_bytes()
    }

    /// Integrity token stored alongside models trained on this layout.
    pub fn hash(&self) -> u32 {
        crc32fast::hash(&self.to_bytes())
    }
}

/// Parsed layout table, as read back from a model file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayoutTable(pub Vec<(String, u32, u32)>);

impl LayoutTable {
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = crate::codec::Reader::new(bytes, "layout");
        let n = r.u32()? as usize;
        if n > 64 {
            return Err(Error::Model(format!("layout table claims {n} families")));
        }
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            rows.push((r.str()?, r.u32()?, r.u32()?));
        }
        r.finish()?;
        Ok(LayoutTable(rows))
    }

    pub fn from_layout(layout: &FeatureLayout) -> Self {
        LayoutTable(
            layout
                .spans
                .iter()
                .map(|s| (s.name.to_owned(), s.offset as u32, s.len as u32))
                .collect(),
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = crate::codec::Writer::new();
        w.u32(self.0.len() as u32);
        for (name, offset, len) in &self.0 {
            w.str(name).u32(*offset).u32(*len);
        }
        w.into_bytes()
    }

    pub fn matches(&self, layout: &FeatureLayout) -> bool {
        self.0.len() == layout.spans.len()
            && self
                .0
                .iter()
                .zip(&layout.spans)
                .all(|((n, o, l), s)| n == s.name && *o as usize == s.offset && *l as usize == s.len)
    }
}

/// Real-valued feature vector tagged with the hash of the layout that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    values: Vec<f64>,
    layout_hash: u32,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>, layout: &FeatureLayout) -> Result<Self> {
        if values.len() != layout.dim() {
            return Err(Error::InvalidInput(format!(
                "{} values for a {}-wide layout",
                values.len(),
                layout.dim()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("feature {i} is not finite")));
        }
        Ok(FeatureVector {
            values,
            layout_hash: layout.hash(),
        })
    }

    /// Vector with a [`FeatureLayout::raw`] layout.
    pub fn raw(values: Vec<f64>) -> Result<Self> {
        let layout = FeatureLayout::raw(values.len());
        Self::new(values, &layout)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn layout_hash(&self) -> u32 {
        self.layout_hash
    }

    pub fn family<'a>(&'a self, layout: &FeatureLayout, name: &str) -> Option<&'a [f64]> {
        let s = layout.span(name)?;
        self.values.get(s.offset..s.offset + s.len)
    }
}

/// Full 512-dimensional descriptor of an ROI image.
pub fn final_feature_vector(img: &Image) -> FeatureVector {
    let canvas = resize_bilinear(img, CANVAS_SIDE, CANVAS_SIDE).expect("canvas side is positive");
    let gray = to_grayscale(&canvas);
    let mut values = Vec::with_capacity(FEATURE_DIM);
    values.extend(color_histogram(&canvas));
    values.extend(color_moments(&canvas));
    values.extend(glcm_features(&gray));
    values.extend(lbp_histogram(&gray));
    values.extend(hog_descriptor(&gray));
    values.resize(FEATURE_DIM, 0.0);
    FeatureVector::new(values, &FeatureLayout::canonical()).expect("extractors produce finite values")
}
