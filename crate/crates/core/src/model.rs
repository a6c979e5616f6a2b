//! JSON model files: a plant `(A, B, C)` and a bias-free controller.
//!
//! ```json
//! {
//!   "version": "1",
//!   "plant": { "A": [[-5, 1], [3, -5]], "B": [[0.5], [1]], "C": [[1, 0], [0, 1]] },
//!   "controller": {
//!     "activation": { "name": "tanh", "sector": [0, 1] },
//!     "layers": [ [[0.5, 0.3], [0.2, 0.6]], [[1.0, -0.8]] ],
//!     "biases": [ [0, 0], [0] ]
//!   }
//! }
//! ```
//!
//! Matrices are nested row-major arrays. `biases` may be omitted; if present
//! it must hold one all-zero vector per layer. Unknown fields are rejected.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::linalg::{DenseMatrix, LinalgError};
use crate::lure::{LtiSystem, LureSystem, VerifyError};
use crate::nn::{ActivationKind, FeedforwardNet, NnError, ScalarActivation};

pub const FORMAT_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported format version {found:?}, expected {FORMAT_VERSION:?}")]
    Version { found: String },
    #[error("non-finite entry in {field} at ({row}, {col})")]
    NonFinite {
        field: String,
        row: usize,
        col: usize,
    },
    #[error("invalid matrix {field}: {source}")]
    Matrix {
        field: String,
        #[source]
        source: LinalgError,
    },
    #[error("shape chain broken: {0}")]
    ShapeChain(String),
    #[error("nonzero bias in layer {layer} at index {index}: {value}")]
    NonzeroBias {
        layer: usize,
        index: usize,
        value: f64,
    },
    #[error("bias shape mismatch: {0}")]
    BiasShape(String),
    #[error("invalid activation: {0}")]
    Activation(String),
}

impl ModelError {
    /// Stable machine-readable error class.
    pub fn code(&self) -> &'static str {
        match self {
            ModelError::Io { .. } => "io",
            ModelError::Parse { .. } => "parse",
            ModelError::Version { .. } => "version",
            ModelError::NonFinite { .. } => "non_finite",
            ModelError::Matrix { .. } => "invalid_matrix",
            ModelError::ShapeChain(_) => "shape_chain",
            ModelError::NonzeroBias { .. } => "nonzero_bias",
            ModelError::BiasShape(_) => "bias_shape",
            ModelError::Activation(_) => "activation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub version: String,
    pub plant: PlantSpec,
    pub controller: ControllerSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSpec {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    pub activation: ActivationSpec,
    pub layers: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub biases: Option<Vec<Vec<f64>>>,
}

/// `name` is one of `tanh`, `relu`, `identity`, `leaky_relu` (needs
/// `slope`) or `scaled_tanh` (needs `gain`). A declared `sector` replaces
/// the default one after a grid check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivationSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sector: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain: Option<f64>,
}

impl ActivationSpec {
    pub fn build(&self) -> Result<ScalarActivation, ModelError> {
        let err = |e: NnError| ModelError::Activation(e.to_string());
        let need = |p: Option<f64>, what: &str| {
            p.ok_or_else(|| ModelError::Activation(format!("`{}` needs `{what}`", self.name)))
        };
        let forbid = |p: Option<f64>, what: &str| match p {
            Some(_) => Err(ModelError::Activation(format!(
                "`{}` takes no `{what}` parameter",
                self.name
            ))),
            None => Ok(()),
        };
        let act = match self.name.as_str() {
            "tanh" | "relu" | "identity" => {
                forbid(self.slope, "slope")?;
                forbid(self.gain, "gain")?;
                match self.name.as_str() {
                    "tanh" => ScalarActivation::tanh(),
                    "relu" => ScalarActivation::relu(),
                    _ => ScalarActivation::identity(),
                }
            }
            "leaky_relu" => {
                forbid(self.gain, "gain")?;
                ScalarActivation::leaky_relu(need(self.slope, "slope")?).map_err(err)?
            }
            "scaled_tanh" => {
                forbid(self.slope, "slope")?;
                ScalarActivation::scaled_tanh(need(self.gain, "gain")?).map_err(err)?
            }
            other => return Err(ModelError::Activation(format!("unknown activation `{other}`"))),
        };
        match self.sector {
            Some([lo, hi]) if (lo, hi) != act.sector() => act.with_sector(lo, hi).map_err(err),
            _ => Ok(act),
        }
    }

    /// Spec for a built-in activation; `None` for custom closures.
    pub fn from_activation(act: &ScalarActivation) -> Option<Self> {
        let (lo, hi) = act.sector();
        let mut spec = Self {
            name: act.name().to_owned(),
            sector: Some([lo, hi]),
            slope: None,
            gain: None,
        };
        match (act.kind(), act.name()) {
            (ActivationKind::Custom, "leaky_relu") => spec.slope = Some(lo),
            (ActivationKind::Custom, "scaled_tanh") => spec.gain = Some(hi),
            (ActivationKind::Custom, _) => return None,
            _ => {}
        }
        Some(spec)
    }
}

/// A validated plant and controller.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub plant: LtiSystem,
    pub controller: FeedforwardNet,
}

impl Model {
    /// The closed loop with its sector bound.
    pub fn lure_system(&self) -> Result<LureSystem, VerifyError> {
        LureSystem::new(self.plant.clone(), self.controller.clone())
    }
}

fn matrix(field: &str, rows: &[Vec<f64>]) -> Result<DenseMatrix, ModelError> {
    DenseMatrix::from_rows(rows).map_err(|e| match e {
        LinalgError::NonFinite { row, col, .. } => ModelError::NonFinite {
            field: field.to_owned(),
            row,
            col,
        },
        source => ModelError::Matrix {
            field: field.to_owned(),
            source,
        },
    })
}

impl ModelFile {
    pub fn validate(&self) -> Result<Model, ModelError> {
        if self.version != FORMAT_VERSION {
            return Err(ModelError::Version {
                found: self.version.clone(),
            });
        }
        let a = matrix("plant.A", &self.plant.a)?;
        let b = matrix("plant.B", &self.plant.b)?;
        let c = matrix("plant.C", &self.plant.c)?;
        let plant = LtiSystem::new(a, b, c).map_err(|e| ModelError::ShapeChain(e.to_string()))?;

        let layers = self
            .controller
            .layers
            .iter()
            .enumerate()
            .map(|(i, w)| matrix(&format!("controller.layers[{i}]"), w))
            .collect::<Result<Vec<_>, _>>()?;
        let activation = self.controller.activation.build()?;
        let controller = FeedforwardNet::new(layers, activation).map_err(|e| match e {
            NnError::NoLayers | NnError::ShapeChain { .. } => ModelError::ShapeChain(e.to_string()),
            other => ModelError::Activation(other.to_string()),
        })?;
        if let Some(biases) = &self.controller.biases {
            if biases.len() != controller.layers().len() {
                return Err(ModelError::BiasShape(format!(
                    "{} bias vectors for {} layers",
                    biases.len(),
                    controller.layers().len()
                )));
            }
            for (i, (bias, w)) in biases.iter().zip(controller.layers()).enumerate() {
                if bias.len() != w.rows() {
                    return Err(ModelError::BiasShape(format!(
                        "layer {} has {} outputs but {} biases",
                        i + 1,
                        w.rows(),
                        bias.len()
                    )));
                }
                if let Some((index, &value)) = bias.iter().enumerate().find(|(_, v)| **v != 0.0) {
                    return Err(ModelError::NonzeroBias {
                        layer: i + 1,
                        index,
                        value,
                    });
                }
            }
        }
        if controller.input_dim() != plant.output_dim() || controller.output_dim() != plant.input_dim()
        {
            return Err(ModelError::ShapeChain(format!(
                "controller maps {} -> {}, plant needs {} -> {}",
                controller.input_dim(),
                controller.output_dim(),
                plant.output_dim(),
                plant.input_dim()
            )));
        }
        Ok(Model { plant, controller })
    }

    /// File contents for a plant and a controller with a built-in activation.
    pub fn from_model(plant: &LtiSystem, controller: &FeedforwardNet) -> Option<Self> {
        let activation = controller.activations().first().map_or_else(
            || ActivationSpec::from_activation(&ScalarActivation::tanh()),
            ActivationSpec::from_activation,
        )?;
        if controller
            .activations()
            .iter()
            .any(|a| ActivationSpec::from_activation(a).as_ref() != Some(&activation))
        {
            return None;
        }
        Some(Self {
            version: FORMAT_VERSION.to_owned(),
            plant: PlantSpec {
                a: plant.a().to_rows(),
                b: plant.b().to_rows(),
                c: plant.c().to_rows(),
            },
            controller: ControllerSpec {
                activation,
                layers: controller.layers().iter().map(DenseMatrix::to_rows).collect(),
                biases: None,
            },
        })
    }
}

pub fn parse_model_file(text: &str) -> Result<ModelFile, ModelError> {
    serde_json::from_str(text).map_err(|e| ModelError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

pub fn parse_model(text: &str) -> Result<Model, ModelError> {
    parse_model_file(text)?.validate()
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model, ModelError> {
    Ok(load_model_with_hash(path)?.0)
}

/// Loads a model and returns the SHA-256 of the raw file alongside it.
pub fn load_model_with_hash(path: impl AsRef<Path>) -> Result<(Model, String), ModelError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| ModelError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let text = String::from_utf8(bytes.clone()).map_err(|e| ModelError::Parse {
        line: 0,
        column: 0,
        message: e.to_string(),
    })?;
    Ok((parse_model(&text)?, sha256_hex(&bytes)))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
