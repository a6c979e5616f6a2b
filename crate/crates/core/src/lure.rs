//! Plant + controller interconnection and the positive Aizerman test.
//!
//! The closed loop `ẋ = Ax + Bπ(Cx)` is treated as a Lur'e system whose
//! nonlinearity `π` lies in the sector `[Γ₁, Γ₂]` computed by
//! [`FeedforwardNet::network_sector_bound`]. With `B, C ≥ 0`:
//!
//! * `A + BΓ₁C` Metzler keeps the nonnegative orthant invariant, and
//! * `A + BΓ₂C` Hurwitz (and Metzler) then gives a `v > 0`, `ε > 0` with
//!   `vᵀ(A + BΓ₂C) ≤ -εvᵀ`, so `‖x(t)‖₁ ≤ (v_max/v_min)‖x(0)‖₁ e^{-εt}`
//!   for every `x(0) ≥ 0`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{
    eigenvalues_with, elementwise_leq, is_metzler, metzler_hurwitz_certificate_with, DenseMatrix,
    EigenSpectrum, LinalgConfig, LinalgError, PositivityCertificate,
};
use crate::nn::{FeedforwardNet, NnError, SectorBound};

/// Domain and norm the certificate speaks about.
pub const GUARANTEE_DOMAIN: &str = "x(0) >= 0 (nonnegative orthant); 1-norm envelope \
||x(t)||_1 <= (v_max/v_min) * ||x(0)||_1 * exp(-epsilon * t)";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerifyError {
    #[error("plant shapes inconsistent: A is {a:?}, B is {b:?}, C is {c:?}")]
    PlantShape {
        a: (usize, usize),
        b: (usize, usize),
        c: (usize, usize),
    },
    #[error("controller is {got_in}->{got_out} but the plant needs {want_in}->{want_out}")]
    ControllerShape {
        want_in: usize,
        want_out: usize,
        got_in: usize,
        got_out: usize,
    },
    #[error("positivity hypothesis violated: {0} has a negative entry")]
    Hypothesis(&'static str),
    #[error("sector bound does not match the controller weights")]
    StaleBound,
    #[error("internal invariant violated: {0}")]
    Invariant(&'static str),
    #[error("certificate is not certified_GES")]
    NotCertified,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// `ẋ = Ax + Bu`, `y = Cx`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    a: DenseMatrix,
    b: DenseMatrix,
    c: DenseMatrix,
    b_nonneg: bool,
    c_nonneg: bool,
    a_metzler: bool,
}

impl LtiSystem {
    pub fn new(a: DenseMatrix, b: DenseMatrix, c: DenseMatrix) -> Result<Self, VerifyError> {
        let n = a.rows();
        if !a.is_square() || b.rows() != n || c.cols() != n {
            return Err(VerifyError::PlantShape {
                a: a.shape(),
                b: b.shape(),
                c: c.shape(),
            });
        }
        Ok(Self {
            b_nonneg: b.is_nonnegative(),
            c_nonneg: c.is_nonnegative(),
            a_metzler: is_metzler(&a, 0.0)?,
            a,
            b,
            c,
        })
    }

    pub fn a(&self) -> &DenseMatrix {
        &self.a
    }

    pub fn b(&self) -> &DenseMatrix {
        &self.b
    }

    pub fn c(&self) -> &DenseMatrix {
        &self.c
    }

    pub fn state_dim(&self) -> usize {
        self.a.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.rows()
    }

    pub fn b_nonneg(&self) -> bool {
        self.b_nonneg
    }

    pub fn c_nonneg(&self) -> bool {
        self.c_nonneg
    }

    pub fn a_metzler(&self) -> bool {
        self.a_metzler
    }

    /// `A + BΣC`.
    pub fn closed_with(&self, sigma: &DenseMatrix) -> Result<DenseMatrix, VerifyError> {
        let bsc = self.b.matmul(sigma)?.matmul(&self.c)?;
        Ok(self.a.add(&bsc)?)
    }
}

/// A positive LTI system: `A` Metzler and `B, C ≥ 0`.
pub fn check_lti_positivity(sys: &LtiSystem) -> bool {
    sys.a_metzler && sys.b_nonneg && sys.c_nonneg
}

/// Plant in feedback with a net, plus the net's sector bound.
#[derive(Debug, Clone, PartialEq)]
pub struct LureSystem {
    plant: LtiSystem,
    controller: FeedforwardNet,
    bound: SectorBound,
}

impl LureSystem {
    pub fn new(plant: LtiSystem, controller: FeedforwardNet) -> Result<Self, VerifyError> {
        let bound = controller.network_sector_bound()?;
        Self::with_bound(plant, controller, bound)
    }

    /// Accepts a precomputed bound only if it equals the recomputed one.
    pub fn with_bound(
        plant: LtiSystem,
        controller: FeedforwardNet,
        bound: SectorBound,
    ) -> Result<Self, VerifyError> {
        if controller.input_dim() != plant.output_dim()
            || controller.output_dim() != plant.input_dim()
        {
            return Err(VerifyError::ControllerShape {
                want_in: plant.output_dim(),
                want_out: plant.input_dim(),
                got_in: controller.input_dim(),
                got_out: controller.output_dim(),
            });
        }
        if controller.network_sector_bound()? != bound {
            return Err(VerifyError::StaleBound);
        }
        Ok(Self {
            plant,
            controller,
            bound,
        })
    }

    pub fn plant(&self) -> &LtiSystem {
        &self.plant
    }

    pub fn controller(&self) -> &FeedforwardNet {
        &self.controller
    }

    pub fn bound(&self) -> &SectorBound {
        &self.bound
    }

    /// Closed-loop vector field `Ax + Bπ(Cx)`.
    pub fn vector_field(&self, x: &[f64]) -> Result<Vec<f64>, VerifyError> {
        let y = self.plant.c.mul_vec(x)?;
        let u = self.controller.forward(&y)?;
        let ax = self.plant.a.mul_vec(x)?;
        let bu = self.plant.b.mul_vec(&u)?;
        Ok(ax.iter().zip(&bu).map(|(p, q)| p + q).collect())
    }
}

fn require_hypothesis(plant: &LtiSystem) -> Result<(), VerifyError> {
    if !plant.b_nonneg {
        return Err(VerifyError::Hypothesis("B"));
    }
    if !plant.c_nonneg {
        return Err(VerifyError::Hypothesis("C"));
    }
    Ok(())
}

/// `A + BΓ₁C` is Metzler, i.e. the loop is positive for every nonlinearity
/// in the sector. Requires `B, C ≥ 0`.
pub fn check_interconnection_positivity(
    sys: &LureSystem,
    tol_metzler: f64,
) -> Result<bool, VerifyError> {
    require_hypothesis(&sys.plant)?;
    let lower = sys.plant.closed_with(&sys.bound.lower)?;
    Ok(is_metzler(&lower, tol_metzler)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "certified_GES")]
    CertifiedGes,
    #[serde(rename = "not_positive_interconnection")]
    NotPositiveInterconnection,
    #[serde(rename = "not_hurwitz")]
    NotHurwitz,
    #[serde(rename = "inconclusive")]
    Inconclusive,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::CertifiedGes => "certified_GES",
            Verdict::NotPositiveInterconnection => "not_positive_interconnection",
            Verdict::NotHurwitz => "not_hurwitz",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Outcome of the positive Aizerman test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityCertificate {
    pub verdict: Verdict,
    /// `A + BΓ₁C`
    pub m_lower: DenseMatrix,
    /// `A + BΓ₂C`
    pub m_upper: DenseMatrix,
    pub metzler_ok: bool,
    pub hurwitz_ok: bool,
    pub upper_spectrum: EigenSpectrum,
    pub decay: Option<PositivityCertificate>,
}

impl StabilityCertificate {
    pub fn is_certified(&self) -> bool {
        self.verdict == Verdict::CertifiedGes
    }
}

/// Runs the positive Aizerman test for the loop's own bound `[Γ₁, Γ₂]`.
pub fn verify_stability(
    sys: &LureSystem,
    cfg: &LinalgConfig,
) -> Result<StabilityCertificate, VerifyError> {
    if sys.controller.network_sector_bound()? != sys.bound {
        return Err(VerifyError::StaleBound);
    }
    positive_aizerman_test(&sys.plant, &sys.bound, cfg)
}

/// Positive Aizerman test for an arbitrary sector `[Σ₁, Σ₂]`.
///
/// Verdicts are reported in order: a non-Metzler `A + BΣ₁C` wins over a
/// non-Hurwitz `A + BΣ₂C`. A spectral abscissa in `[-tol_hurwitz, 0]` is
/// inconclusive rather than stable or unstable.
pub fn positive_aizerman_test(
    plant: &LtiSystem,
    bound: &SectorBound,
    cfg: &LinalgConfig,
) -> Result<StabilityCertificate, VerifyError> {
    require_hypothesis(plant)?;
    let m_lower = plant.closed_with(&bound.lower)?;
    let m_upper = plant.closed_with(&bound.upper)?;
    if !elementwise_leq(&m_lower, &m_upper)? {
        return Err(VerifyError::Invariant("A+BΣ₁C <= A+BΣ₂C"));
    }
    let metzler_ok = is_metzler(&m_lower, cfg.tol_metzler)?;
    let upper_spectrum = eigenvalues_with(&m_upper, cfg)?;
    let abscissa = upper_spectrum.abscissa();
    let hurwitz_ok = abscissa < -cfg.tol_hurwitz;

    let mut decay = None;
    let verdict = if !metzler_ok {
        Verdict::NotPositiveInterconnection
    } else if abscissa > 0.0 {
        Verdict::NotHurwitz
    } else if !hurwitz_ok {
        Verdict::Inconclusive
    } else {
        if !is_metzler(&m_upper, cfg.tol_metzler)? {
            return Err(VerifyError::Invariant("A+BΣ₂C inherits the Metzler property"));
        }
        match metzler_hurwitz_certificate_with(&m_upper, cfg) {
            Ok(cert) => {
                if !cert.verify(&m_upper) {
                    return Err(VerifyError::Invariant("decay certificate rechecks"));
                }
                decay = Some(cert);
                Verdict::CertifiedGes
            }
            Err(_) => Verdict::Inconclusive,
        }
    };
    Ok(StabilityCertificate {
        verdict,
        m_lower,
        m_upper,
        metzler_ok,
        hurwitz_ok,
        upper_spectrum,
        decay,
    })
}

/// Certified bound on `‖x(t)‖₁` for `x(0) ≥ 0` with `‖x(0)‖₁ = x0_norm`:
/// `(v_max/v_min)·x0_norm·e^{-εt}`.
pub fn decay_envelope(
    cert: &StabilityCertificate,
    x0_norm: f64,
    t: f64,
) -> Result<f64, VerifyError> {
    let decay = match (&cert.verdict, &cert.decay) {
        (Verdict::CertifiedGes, Some(d)) => d,
        _ => return Err(VerifyError::NotCertified),
    };
    if !(x0_norm >= 0.0) || !(t >= 0.0) {
        return Err(VerifyError::InvalidArgument(format!(
            "envelope needs x0_norm >= 0 and t >= 0, got {x0_norm} and {t}"
        )));
    }
    Ok(decay.condition() * x0_norm * (-decay.epsilon * t).exp())
}
