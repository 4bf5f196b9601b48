use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One paired observation. `label` is 1 for informative, 0 otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub label: u8,
    pub text_embedding: Vec<f64>,
    pub image_embedding: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub d_text: usize,
    pub d_image: usize,
    pub records: Vec<SampleRecord>,
}

impl Dataset {
    /// Validates dimensional consistency, labels and id uniqueness.
    pub fn new(name: impl Into<String>, records: Vec<SampleRecord>) -> Result<Self> {
        let first = records
            .first()
            .ok_or_else(|| Error::invalid("dataset has no records"))?;
        let (d_text, d_image) = (first.text_embedding.len(), first.image_embedding.len());
        if d_text == 0 || d_image == 0 {
            return Err(Error::Record {
                id: first.id.clone(),
                message: "empty embedding".into(),
            });
        }
        let mut seen = std::collections::HashSet::new();
        for r in &records {
            let bad = |message: String| Error::Record {
                id: r.id.clone(),
                message,
            };
            if r.text_embedding.len() != d_text {
                return Err(bad(format!(
                    "text embedding has {} dims, dataset has {d_text}",
                    r.text_embedding.len()
                )));
            }
            if r.image_embedding.len() != d_image {
                return Err(bad(format!(
                    "image embedding has {} dims, dataset has {d_image}",
                    r.image_embedding.len()
                )));
            }
            if r.label > 1 {
                return Err(bad(format!("label {} is not 0 or 1", r.label)));
            }
            if r.text_embedding.iter().chain(&r.image_embedding).any(|x| !x.is_finite()) {
                return Err(bad("non-finite embedding value".into()));
            }
            if !seen.insert(r.id.as_str()) {
                return Err(bad("duplicate id".into()));
            }
        }
        Ok(Self {
            name: name.into(),
            d_text,
            d_image,
            records,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Counts of label 0 and label 1.
    pub fn class_counts(&self) -> [usize; 2] {
        let mut c = [0, 0];
        for r in &self.records {
            c[r.label as usize] += 1;
        }
        c
    }

    /// Dataset built from a subset of records, keeping this dataset's dims.
    pub(crate) fn subset(&self, name: String, indices: &[usize]) -> Self {
        Self {
            name,
            d_text: self.d_text,
            d_image: self.d_image,
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }
}
