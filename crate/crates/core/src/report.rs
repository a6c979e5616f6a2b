//! Serializable reports: verification verdicts, bounds and simulation summaries.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::linalg::{DenseMatrix, EigenSpectrum, LinalgConfig};
use crate::lure::{StabilityCertificate, Verdict, GUARANTEE_DOMAIN};
use crate::nn::SectorBound;
use crate::sim::{SectorReport, SimConfig};

pub const TOOL_VERSION: &str = concat!("lure-verify ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateReport {
    pub v: Vec<f64>,
    pub epsilon: f64,
    pub v_min: f64,
    pub v_max: f64,
    /// `v_max / v_min`, the constant in front of the 1-norm envelope.
    pub envelope_constant: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerdictReport {
    pub verdict: Verdict,
    pub gamma_lower: DenseMatrix,
    pub gamma_upper: DenseMatrix,
    pub m_lower: DenseMatrix,
    pub m_upper: DenseMatrix,
    pub metzler_ok: bool,
    pub hurwitz_ok: bool,
    /// Eigenvalues of `m_upper` as `[re, im]` pairs.
    pub spectrum: EigenSpectrum,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<CertificateReport>,
    pub guarantee_domain: String,
    pub tolerances: LinalgConfig,
    pub tool_version: String,
    pub input_sha256: String,
}

impl VerdictReport {
    pub fn new(
        cert: &StabilityCertificate,
        bound: &SectorBound,
        tolerances: LinalgConfig,
        input_sha256: impl Into<String>,
    ) -> Self {
        Self {
            verdict: cert.verdict,
            gamma_lower: bound.lower.clone(),
            gamma_upper: bound.upper.clone(),
            m_lower: cert.m_lower.clone(),
            m_upper: cert.m_upper.clone(),
            metzler_ok: cert.metzler_ok,
            hurwitz_ok: cert.hurwitz_ok,
            spectrum: cert.upper_spectrum.clone(),
            certificate: cert.decay.as_ref().map(|d| CertificateReport {
                v: d.v.clone(),
                epsilon: d.epsilon,
                v_min: d.v_min,
                v_max: d.v_max,
                envelope_constant: d.condition(),
            }),
            guarantee_domain: GUARANTEE_DOMAIN.to_owned(),
            tolerances,
            tool_version: TOOL_VERSION.to_owned(),
            input_sha256: input_sha256.into(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "verdict:          {}", self.verdict);
        let _ = writeln!(out, "metzler(M_lower): {}", self.metzler_ok);
        let _ = writeln!(out, "hurwitz(M_upper): {}", self.hurwitz_ok);
        write_matrix(&mut out, "Gamma_2", &self.gamma_upper);
        write_matrix(&mut out, "M_lower", &self.m_lower);
        write_matrix(&mut out, "M_upper", &self.m_upper);
        let _ = writeln!(out, "spectrum(M_upper):");
        for z in &self.spectrum.values {
            let _ = writeln!(out, "  {:?} {:+?}i", z.re, z.im);
        }
        match &self.certificate {
            Some(c) => {
                let _ = writeln!(out, "certificate:");
                let _ = writeln!(out, "  v        = {:?}", c.v);
                let _ = writeln!(out, "  epsilon  = {:?}", c.epsilon);
                let _ = writeln!(out, "  v_min    = {:?}", c.v_min);
                let _ = writeln!(out, "  v_max    = {:?}", c.v_max);
                let _ = writeln!(out, "  envelope = {:?} * ||x(0)||_1 * exp(-{:?} t)", c.envelope_constant, c.epsilon);
            }
            None => {
                let _ = writeln!(out, "certificate:      none");
            }
        }
        let _ = writeln!(out, "guarantee:        {}", self.guarantee_domain);
        let _ = writeln!(out, "input sha256:     {}", self.input_sha256);
        let _ = writeln!(out, "tool:             {}", self.tool_version);
        out
    }
}

/// Rows printed with shortest round-trip precision.
pub fn write_matrix(out: &mut String, name: &str, m: &DenseMatrix) {
    let _ = writeln!(out, "{name} ({}x{}):", m.rows(), m.cols());
    for i in 0..m.rows() {
        let _ = writeln!(out, "  {:?}", m.row(i));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundReport {
    pub architecture: Vec<usize>,
    pub gamma_lower: DenseMatrix,
    pub gamma_upper: DenseMatrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_layer: Option<Vec<SectorBound>>,
    pub tool_version: String,
    pub input_sha256: String,
}

impl BoundReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let arch: Vec<String> = self.architecture.iter().map(usize::to_string).collect();
        let _ = writeln!(out, "architecture: {}", arch.join("/"));
        write_matrix(&mut out, "Gamma_1", &self.gamma_lower);
        write_matrix(&mut out, "Gamma_2", &self.gamma_upper);
        if let Some(layers) = &self.per_layer {
            for (i, b) in layers.iter().enumerate() {
                write_matrix(&mut out, &format!("Gamma_2 after hidden layer {}", i + 1), &b.upper);
            }
        }
        out
    }
}

/// One trajectory in a simulation summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSummary {
    pub index: usize,
    pub csv: String,
    pub x0: Vec<f64>,
    pub samples: usize,
    pub diverged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diverged_at: Option<f64>,
    /// `‖x(horizon)‖₁ < 1e-3`.
    pub converged: bool,
    pub final_norm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay_rate: Option<f64>,
    pub min_state: f64,
    pub positivity_violations: usize,
    pub sector: SectorReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub envelope_violations: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSummary {
    pub config: SimConfig,
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    pub converged: usize,
    pub diverged: usize,
    pub sector_violations: usize,
    pub positivity_violations: usize,
    pub runs: Vec<RunSummary>,
    pub tool_version: String,
    pub input_sha256: String,
}

pub const CONVERGENCE_THRESHOLD: f64 = 1e-3;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{Complex, DenseMatrix};
    use crate::lure::{positive_aizerman_test, LtiSystem};

    fn paper_plant() -> LtiSystem {
        LtiSystem::new(
            DenseMatrix::from_rows(&[[-5.0, 1.0], [3.0, -5.0]]).unwrap(),
            DenseMatrix::from_rows(&[[0.5], [1.0]]).unwrap(),
            DenseMatrix::identity(2),
        )
        .unwrap()
    }

    #[test]
    fn round_trip_certified() {
        let bound = SectorBound::symmetric(DenseMatrix::from_rows(&[[0.83, 1.19]]).unwrap());
        let cfg = LinalgConfig::default();
        let cert = positive_aizerman_test(&paper_plant(), &bound, &cfg).unwrap();
        let r = VerdictReport::new(&cert, &bound, cfg, "00");
        assert!(r.certificate.is_some());
        assert_eq!(VerdictReport::from_json(&r.to_json()).unwrap(), r);
        let text = r.to_text();
        assert!(text.contains("certified_GES") && text.contains("x(0) >= 0"));
    }

    #[test]
    fn round_trip_without_certificate() {
        let bound = SectorBound::symmetric(DenseMatrix::from_rows(&[[0.0, 9.0]]).unwrap());
        let cfg = LinalgConfig::default();
        let cert = positive_aizerman_test(&paper_plant(), &bound, &cfg).unwrap();
        let r = VerdictReport::new(&cert, &bound, cfg, "ab");
        assert_eq!(r.verdict, Verdict::NotPositiveInterconnection);
        let json = r.to_json();
        assert!(!json.contains("\"certificate\""));
        assert_eq!(VerdictReport::from_json(&json).unwrap(), r);
    }

    #[test]
    fn spectrum_serializes_as_pairs() {
        let s = EigenSpectrum {
            values: vec![Complex::new(-1.0, 2.0), Complex::new(-1.0, -2.0)],
        };
        assert_eq!(serde_json::to_string(&s).unwrap(), "[[-1.0,2.0],[-1.0,-2.0]]");
    }
}
