//! Bias-free fully connected feedforward controllers and their sector bounds.
//!
//! A net with `q` hidden layers maps `z ∈ ℝᵖ` to `u ∈ ℝᵐ` through
//!
//! ```text
//! ω⁽⁰⁾ = z,   ω⁽ⁱ⁾ = φᵢ(W⁽ⁱ⁾ ω⁽ⁱ⁻¹⁾)  (i = 1..q),   u = W⁽q+1⁾ ω⁽q⁾
//! ```
//!
//! If every `φᵢ` lies in a scalar sector `[a₁, a₂]` with gain
//! `cᵢ = max(|a₁|, |a₂|)`, then for all `z ≥ 0`
//!
//! ```text
//! -Γ z ≤ u ≤ Γ z,   Γ = (c₁⋯c_q) |W⁽q+1⁾| ⋯ |W⁽¹⁾|
//! ```
//!
//! The same product truncated after layer `i` bounds the hidden output `ω⁽ⁱ⁾`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{DenseMatrix, LinalgError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NnError {
    #[error("network needs at least one weight matrix")]
    NoLayers,
    #[error("layer {layer} expects input width {expected}, previous layer produces {got}")]
    ShapeChain {
        layer: usize,
        expected: usize,
        got: usize,
    },
    #[error("expected {expected} activations for {expected} hidden layers, got {got}")]
    ActivationCount { expected: usize, got: usize },
    #[error("input has length {got}, network expects {expected}")]
    InputLength { expected: usize, got: usize },
    #[error("layer index {index} out of range 1..={hidden}")]
    LayerIndex { index: usize, hidden: usize },
    #[error("activation `{name}` on layer {layer} has degenerate sector [{lo}, {hi}]; sector bounds need a₁ < a₂")]
    DegenerateSector {
        name: String,
        layer: usize,
        lo: f64,
        hi: f64,
    },
    #[error("invalid sector [{lo}, {hi}]")]
    InvalidSector { lo: f64, hi: f64 },
    #[error("activation `{name}` maps 0 to {value}, expected 0")]
    NonzeroAtOrigin { name: String, value: f64 },
    #[error("activation `{name}` leaves sector [{lo}, {hi}] at σ = {sigma} (ratio {ratio})")]
    SectorViolation {
        name: String,
        lo: f64,
        hi: f64,
        sigma: f64,
        ratio: f64,
    },
    #[error("invalid activation parameter: {0}")]
    InvalidParameter(String),
    #[error("unsupported activation: {0}")]
    UnsupportedActivation(String),
    #[error("sector inputs must be nonnegative, entry {index} is {value}")]
    NegativeInput { index: usize, value: f64 },
    #[error("sector bound lower > upper at ({row}, {col})")]
    UnorderedBound { row: usize, col: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Tanh,
    Relu,
    Identity,
    Custom,
}

/// Number of grid points used to falsify a declared sector.
pub const SECTOR_GRID_POINTS: usize = 100_000;
/// Half-width of the interval the grid covers.
pub const SECTOR_GRID_RADIUS: f64 = 50.0;
const SECTOR_SLACK: f64 = 1e-12;

/// A scalar activation together with the sector `[a₁, a₂]` it is known to lie in.
#[derive(Clone)]
pub struct ScalarActivation {
    kind: ActivationKind,
    name: String,
    sector_lo: f64,
    sector_hi: f64,
    eval: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl fmt::Debug for ScalarActivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarActivation")
            .field("kind", &self.kind)
            .field("name", &self.name)
            .field("sector", &(self.sector_lo, self.sector_hi))
            .finish()
    }
}

impl PartialEq for ScalarActivation {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
            && self.name == other.name
            && self.sector_lo == other.sector_lo
            && self.sector_hi == other.sector_hi
    }
}

impl ScalarActivation {
    pub fn tanh() -> Self {
        Self::builtin(ActivationKind::Tanh, "tanh", 0.0, 1.0, f64::tanh)
    }

    pub fn relu() -> Self {
        Self::builtin(ActivationKind::Relu, "relu", 0.0, 1.0, |x| x.max(0.0))
    }

    /// Identity has the degenerate sector `[1, 1]`: usable in the forward
    /// pass, rejected by the sector-bound computation.
    pub fn identity() -> Self {
        Self::builtin(ActivationKind::Identity, "identity", 1.0, 1.0, |x| x)
    }

    fn builtin(kind: ActivationKind, name: &str, lo: f64, hi: f64, f: fn(f64) -> f64) -> Self {
        Self {
            kind,
            name: name.to_owned(),
            sector_lo: lo,
            sector_hi: hi,
            eval: Arc::new(f),
        }
    }

    /// `max(slope·x, x)` with `0 <= slope < 1`, sector `[slope, 1]`.
    pub fn leaky_relu(slope: f64) -> Result<Self, NnError> {
        if !(0.0..1.0).contains(&slope) {
            return Err(NnError::InvalidParameter(format!(
                "leaky_relu slope must lie in [0, 1), got {slope}"
            )));
        }
        Self::custom("leaky_relu", slope, 1.0, move |x| if x >= 0.0 { x } else { slope * x })
    }

    /// `gain·tanh(x)` with `gain > 0`, sector `[0, gain]`.
    pub fn scaled_tanh(gain: f64) -> Result<Self, NnError> {
        if !(gain > 0.0 && gain.is_finite()) {
            return Err(NnError::InvalidParameter(format!(
                "scaled_tanh gain must be positive, got {gain}"
            )));
        }
        Self::custom("scaled_tanh", 0.0, gain, move |x| gain * x.tanh())
    }

    /// Registers an arbitrary scalar function with a declared sector.
    ///
    /// The declaration is falsified on a uniform grid of
    /// [`SECTOR_GRID_POINTS`] points over `[-50, 50]`; any grid point with
    /// `f(σ)/σ` outside `[lo, hi]`, or `f(0) != 0`, rejects the activation.
    pub fn custom<F>(name: &str, lo: f64, hi: f64, f: F) -> Result<Self, NnError>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let act = Self {
            kind: ActivationKind::Custom,
            name: name.to_owned(),
            sector_lo: lo,
            sector_hi: hi,
            eval: Arc::new(f),
        };
        act.check_sector()?;
        Ok(act)
    }

    /// Re-declares the sector of this activation. The new sector is grid checked.
    pub fn with_sector(mut self, lo: f64, hi: f64) -> Result<Self, NnError> {
        self.sector_lo = lo;
        self.sector_hi = hi;
        self.check_sector()?;
        Ok(self)
    }

    fn check_sector(&self) -> Result<(), NnError> {
        let (lo, hi) = (self.sector_lo, self.sector_hi);
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(NnError::InvalidSector { lo, hi });
        }
        let at_zero = self.apply(0.0);
        if at_zero != 0.0 {
            return Err(NnError::NonzeroAtOrigin {
                name: self.name.clone(),
                value: at_zero,
            });
        }
        let step = 2.0 * SECTOR_GRID_RADIUS / (SECTOR_GRID_POINTS - 1) as f64;
        for k in 0..SECTOR_GRID_POINTS {
            let sigma = -SECTOR_GRID_RADIUS + k as f64 * step;
            if sigma == 0.0 {
                continue;
            }
            let ratio = self.apply(sigma) / sigma;
            if !(ratio >= lo - SECTOR_SLACK && ratio <= hi + SECTOR_SLACK) {
                return Err(NnError::SectorViolation {
                    name: self.name.clone(),
                    lo,
                    hi,
                    sigma,
                    ratio,
                });
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> ActivationKind {
        self.kind
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn sector(&self) -> (f64, f64) {
        (self.sector_lo, self.sector_hi)
    }

    /// `c = max(|a₁|, |a₂|)`.
    pub fn gain(&self) -> f64 {
        self.sector_lo.abs().max(self.sector_hi.abs())
    }

    pub fn is_degenerate(&self) -> bool {
        self.sector_lo >= self.sector_hi
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        (self.eval)(x)
    }
}

/// A fully connected feedforward net without biases.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedforwardNet {
    layers: Vec<DenseMatrix>,
    activations: Vec<ScalarActivation>,
}

impl FeedforwardNet {
    /// Net with the same activation on every hidden layer.
    pub fn new(layers: Vec<DenseMatrix>, activation: ScalarActivation) -> Result<Self, NnError> {
        let hidden = layers.len().saturating_sub(1);
        Self::with_activations(layers, vec![activation; hidden])
    }

    /// Net with one activation per hidden layer.
    pub fn with_activations(
        layers: Vec<DenseMatrix>,
        activations: Vec<ScalarActivation>,
    ) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::NoLayers);
        }
        if activations.len() != layers.len() - 1 {
            return Err(NnError::ActivationCount {
                expected: layers.len() - 1,
                got: activations.len(),
            });
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[1].cols() != pair[0].rows() {
                return Err(NnError::ShapeChain {
                    layer: i + 2,
                    expected: pair[1].cols(),
                    got: pair[0].rows(),
                });
            }
        }
        Ok(Self {
            layers,
            activations,
        })
    }

    /// Number of hidden layers `q`.
    pub fn hidden_layers(&self) -> usize {
        self.layers.len() - 1
    }

    /// Weight matrices `W⁽¹⁾ … W⁽q+1⁾`.
    pub fn layers(&self) -> &[DenseMatrix] {
        &self.layers
    }

    pub fn activations(&self) -> &[ScalarActivation] {
        &self.activations
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].rows()
    }

    /// Output widths of every layer, hidden layers first, e.g. `[10, 15, 15, 1]`.
    pub fn architecture(&self) -> Vec<usize> {
        self.layers.iter().map(DenseMatrix::rows).collect()
    }

    /// `c₁⋯c_upto`.
    fn gain_product(&self, upto: usize) -> f64 {
        self.activations[..upto].iter().map(ScalarActivation::gain).product()
    }

    /// Evaluates the net. Any finite input is accepted; the sector bounds
    /// only speak about nonnegative inputs.
    pub fn forward(&self, z: &[f64]) -> Result<Vec<f64>, NnError> {
        if z.len() != self.input_dim() {
            return Err(NnError::InputLength {
                expected: self.input_dim(),
                got: z.len(),
            });
        }
        let mut omega = z.to_vec();
        for (w, act) in self.layers.iter().zip(&self.activations) {
            omega = w.mul_vec(&omega)?;
            omega.iter_mut().for_each(|x| *x = act.apply(*x));
        }
        Ok(self.layers[self.layers.len() - 1].mul_vec(&omega)?)
    }

    fn require_strict(&self, upto: usize) -> Result<(), NnError> {
        for (i, act) in self.activations[..upto].iter().enumerate() {
            if act.is_degenerate() {
                let (lo, hi) = act.sector();
                return Err(NnError::DegenerateSector {
                    name: act.name.clone(),
                    layer: i + 1,
                    lo,
                    hi,
                });
            }
        }
        Ok(())
    }

    /// `(c₁⋯cᵢ)·|W⁽ⁱ⁾|⋯|W⁽¹⁾|` accumulated in ascending layer order.
    fn hidden_product(&self, i: usize) -> Result<DenseMatrix, NnError> {
        let mut acc = self.layers[0].abs();
        for w in &self.layers[1..i] {
            acc = w.abs().matmul(&acc)?;
        }
        Ok(acc.scale(self.gain_product(i)))
    }

    /// Sector bound on the output `ω⁽ⁱ⁾` of hidden layer `i` (1-based).
    pub fn layer_sector_bound(&self, i: usize) -> Result<SectorBound, NnError> {
        let q = self.hidden_layers();
        if i == 0 || i > q {
            return Err(NnError::LayerIndex {
                index: i,
                hidden: q,
            });
        }
        self.require_strict(i)?;
        Ok(SectorBound::symmetric(self.hidden_product(i)?))
    }

    /// Bounds for every hidden layer, `i = 1..=q`.
    pub fn layer_sector_bounds(&self) -> Result<Vec<SectorBound>, NnError> {
        (1..=self.hidden_layers())
            .map(|i| self.layer_sector_bound(i))
            .collect()
    }

    /// `(Γ₁, Γ₂)` for the whole net: `Γ₂ = (c₁⋯c_q)|W⁽q+1⁾|⋯|W⁽¹⁾|`, `Γ₁ = -Γ₂`.
    pub fn network_sector_bound(&self) -> Result<SectorBound, NnError> {
        let q = self.hidden_layers();
        self.require_strict(q)?;
        let upper = if q == 0 {
            self.layers[0].abs()
        } else {
            self.layers[q].abs().matmul(&self.hidden_product(q)?)?
        };
        Ok(SectorBound::symmetric(upper))
    }
}

/// A pair `(Σ₁, Σ₂)` with `Σ₁ ≤ Σ₂` such that `Σ₁z ≤ Φ(z) ≤ Σ₂z` for `z ≥ 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorBound {
    pub lower: DenseMatrix,
    pub upper: DenseMatrix,
}

impl SectorBound {
    pub fn new(lower: DenseMatrix, upper: DenseMatrix) -> Result<Self, NnError> {
        if lower.shape() != upper.shape() {
            return Err(LinalgError::Dimension {
                op: "SectorBound::new",
                left: lower.shape(),
                right: upper.shape(),
            }
            .into());
        }
        for i in 0..lower.rows() {
            for j in 0..lower.cols() {
                if lower[(i, j)] > upper[(i, j)] {
                    return Err(NnError::UnorderedBound { row: i, col: j });
                }
            }
        }
        Ok(Self { lower, upper })
    }

    /// `(-Γ, Γ)` for a nonnegative `Γ`.
    pub fn symmetric(upper: DenseMatrix) -> Self {
        Self {
            lower: -&upper,
            upper,
        }
    }

    pub fn scale(&self, k: f64) -> Result<Self, NnError> {
        Self::new(self.lower.scale(k), self.upper.scale(k))
    }

    /// Smallest signed slack of `Σ₁z ≤ u ≤ Σ₂z` over all components.
    /// Negative means violated.
    pub fn margin(&self, z: &[f64], u: &[f64]) -> Result<f64, NnError> {
        if let Some((index, &value)) = z.iter().enumerate().find(|(_, v)| **v < 0.0) {
            return Err(NnError::NegativeInput { index, value });
        }
        if u.len() != self.upper.rows() {
            return Err(LinalgError::Dimension {
                op: "sector margin",
                left: self.upper.shape(),
                right: (u.len(), 1),
            }
            .into());
        }
        let lo = self.lower.mul_vec(z)?;
        let hi = self.upper.mul_vec(z)?;
        Ok(u.iter()
            .zip(lo.iter().zip(&hi))
            .map(|(ui, (l, h))| (ui - l).min(h - ui))
            .fold(f64::INFINITY, f64::min))
    }
}

/// `Σ₁z - tol ≤ u ≤ Σ₂z + tol` entry by entry, for `z ≥ 0`.
pub fn check_sector_membership(
    bound: &SectorBound,
    z: &[f64],
    u: &[f64],
    tol: f64,
) -> Result<bool, NnError> {
    Ok(bound.margin(z, u)? >= -tol)
}
