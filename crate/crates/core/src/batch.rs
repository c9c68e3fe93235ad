use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Which simulator produced a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Gan,
    Llm,
    Bootstrap,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Gan => "gan",
            Provenance::Llm => "llm",
            Provenance::Bootstrap => "bootstrap",
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gan" => Ok(Provenance::Gan),
            "llm" => Ok(Provenance::Llm),
            "bootstrap" => Ok(Provenance::Bootstrap),
            other => Err(Error::InvalidArgument(format!("unknown engine {other:?}"))),
        }
    }
}

/// Simulated learner-attempt vectors, all of the same length, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationBatch {
    pub vectors: Vec<Vec<f64>>,
    pub provenance: Provenance,
    #[serde(default)]
    pub source_meta: BTreeMap<String, String>,
}

impl SimulationBatch {
    pub fn new(vectors: Vec<Vec<f64>>, provenance: Provenance) -> Result<Self> {
        if let Some(first) = vectors.first() {
            let width = first.len();
            for (i, v) in vectors.iter().enumerate() {
                if v.len() != width {
                    return Err(Error::Shape(format!(
                        "vector {i} has length {}, expected {width}",
                        v.len()
                    )));
                }
                if let Some(x) = v.iter().find(|x| !(0.0..=1.0).contains(*x)) {
                    return Err(Error::InvalidArgument(format!(
                        "vector {i} holds {x} outside [0, 1]"
                    )));
                }
            }
        }
        Ok(Self {
            vectors,
            provenance,
            source_meta: BTreeMap::new(),
        })
    }

    pub fn empty(provenance: Provenance) -> Self {
        Self {
            vectors: Vec::new(),
            provenance,
            source_meta: BTreeMap::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.source_meta.insert(key.to_string(), value.to_string());
        self
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn width(&self) -> Option<usize> {
        self.vectors.first().map(Vec::len)
    }

    pub fn to_matrix(&self) -> Result<Matrix> {
        Matrix::from_rows(&self.vectors)
    }
}
