//! Bound comparison against the product-of-spectral-norms Lipschitz bound,
//! timing of the sector-bound computation, and Monte-Carlo bound quality.

use std::fmt::Write as _;
use std::hint::black_box;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{spectral_norm, LinalgError};
use crate::nn::{FeedforwardNet, NnError, SectorBound};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BenchError {
    #[error("product-of-norms bound needs 1-Lipschitz activations, layer {layer} has gain {gain}")]
    NotOneLipschitz { layer: usize, gain: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// `∏ ‖W⁽ⁱ⁾‖₂`, a global Lipschitz constant when every activation is 1-Lipschitz.
pub fn lipschitz_product_bound(net: &FeedforwardNet) -> Result<f64, BenchError> {
    for (i, act) in net.activations().iter().enumerate() {
        if act.gain() > 1.0 {
            return Err(BenchError::NotOneLipschitz {
                layer: i + 1,
                gain: act.gain(),
            });
        }
    }
    net.layers()
        .iter()
        .try_fold(1.0, |acc, w| Ok(acc * spectral_norm(w)?))
}

pub const WARMUP_CALLS: usize = 3;
pub const MIN_REPEATS: usize = 11;

/// Median wall-clock seconds of [`FeedforwardNet::network_sector_bound`]
/// over `repeats` calls, after three warm-up calls.
pub fn time_bound_computation(net: &FeedforwardNet, repeats: usize) -> Result<f64, BenchError> {
    if repeats < MIN_REPEATS {
        return Err(BenchError::InvalidArgument(format!(
            "repeats must be >= {MIN_REPEATS}, got {repeats}"
        )));
    }
    for _ in 0..WARMUP_CALLS {
        black_box(net.network_sector_bound()?);
    }
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        black_box(black_box(net).network_sector_bound()?);
        times.push(start.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    Ok(times[repeats / 2])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundQuality {
    pub samples_checked: usize,
    pub violations: usize,
    /// Largest `|u_j| / (Γ₂z)_j` over samples and components with `(Γ₂z)_j > 0`.
    pub tightness: f64,
}

/// Default sampling box `[0, 10]ᵖ`.
pub const SAMPLE_RANGE: f64 = 10.0;

pub fn sample_bound_quality(
    net: &FeedforwardNet,
    bound: &SectorBound,
    count: usize,
    seed: u64,
) -> Result<BoundQuality, BenchError> {
    sample_bound_quality_in(net, bound, count, seed, SAMPLE_RANGE)
}

/// Like [`sample_bound_quality`] with inputs uniform on `[0, range]ᵖ`.
pub fn sample_bound_quality_in(
    net: &FeedforwardNet,
    bound: &SectorBound,
    count: usize,
    seed: u64,
    range: f64,
) -> Result<BoundQuality, BenchError> {
    if count == 0 {
        return Err(BenchError::InvalidArgument("count must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = net.input_dim();
    let mut out = BoundQuality {
        samples_checked: 0,
        violations: 0,
        tightness: 0.0,
    };
    let mut z = vec![0.0; p];
    for _ in 0..count {
        z.iter_mut().for_each(|v| *v = rng.gen::<f64>() * range);
        let u = net.forward(&z)?;
        if bound.margin(&z, &u)? < -1e-9 {
            out.violations += 1;
        }
        let hi = bound.upper.mul_vec(&z)?;
        for (uj, hj) in u.iter().zip(&hi) {
            if *hj > 0.0 {
                out.tightness = out.tightness.max(uj.abs() / hj);
            }
        }
        out.samples_checked += 1;
    }
    Ok(out)
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub architecture: Vec<usize>,
    pub bound_time_s: f64,
    pub our_bound: SectorBound,
    /// `‖Γ₂‖₂`, the scalar column comparable with the Lipschitz bound.
    pub our_bound_norm: f64,
    /// `None` when an activation is not 1-Lipschitz.
    pub lipschitz_product: Option<f64>,
    pub samples_checked: usize,
    pub violations: usize,
    pub tightness: f64,
}

pub fn bench_report(
    net: &FeedforwardNet,
    samples: usize,
    repeats: usize,
    seed: u64,
) -> Result<BenchReport, BenchError> {
    let our_bound = net.network_sector_bound()?;
    let bound_time_s = time_bound_computation(net, repeats)?;
    let lipschitz_product = match lipschitz_product_bound(net) {
        Ok(v) => Some(v),
        Err(BenchError::NotOneLipschitz { .. }) => None,
        Err(e) => return Err(e),
    };
    let quality = sample_bound_quality(net, &our_bound, samples, seed)?;
    Ok(BenchReport {
        architecture: net.architecture(),
        bound_time_s,
        our_bound_norm: spectral_norm(&our_bound.upper)?,
        our_bound,
        lipschitz_product,
        samples_checked: quality.samples_checked,
        violations: quality.violations,
        tightness: quality.tightness,
    })
}

fn fmt_row(values: &[f64]) -> String {
    let inner: Vec<String> = values.iter().map(|v| format!("{v:.4}")).collect();
    format!("[{}]", inner.join(", "))
}

/// Aligned plain-text table, one row per report.
pub fn render_table(reports: &[BenchReport]) -> String {
    let header = [
        "Method",
        "Architecture",
        "Time (s)",
        "Bound",
        "Scalar",
        "Samples",
        "Violations",
        "Tightness",
    ];
    let mut rows: Vec<[String; 8]> = Vec::new();
    for r in reports {
        let arch = r
            .architecture
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join("/");
        let bound = if r.our_bound.upper.rows() == 1 {
            format!("±{}", fmt_row(r.our_bound.upper.row(0)))
        } else {
            format!("±{:?}", r.our_bound.upper.to_rows())
        };
        rows.push([
            "Sector bound".into(),
            arch.clone(),
            format!("{:.2e}", r.bound_time_s),
            bound,
            format!("{:.4}", r.our_bound_norm),
            r.samples_checked.to_string(),
            r.violations.to_string(),
            format!("{:.4}", r.tightness),
        ]);
        rows.push([
            "Product of norms".into(),
            arch,
            "-".into(),
            r.lipschitz_product
                .map_or_else(|| "unsupported".into(), |v| format!("{v:.4}")),
            r.lipschitz_product
                .map_or_else(|| "unsupported".into(), |v| format!("{v:.4}")),
            "-".into(),
            "-".into(),
            "-".into(),
        ]);
    }
    let mut widths = header.map(str::len);
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[&str]| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        let _ = writeln!(out, "| {} |", padded.join(" | "));
    };
    line(&mut out, &header);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    let _ = writeln!(out, "|-{}-|", rule.join("-|-"));
    for row in &rows {
        let cells: Vec<&str> = row.iter().map(String::as_str).collect();
        line(&mut out, &cells);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseMatrix;
    use crate::nn::ScalarActivation;

    fn m(rows: &[&[f64]]) -> DenseMatrix {
        DenseMatrix::from_rows(rows).unwrap()
    }

    fn unit_net() -> FeedforwardNet {
        FeedforwardNet::new(vec![m(&[&[1.0]]), m(&[&[1.0]])], ScalarActivation::tanh()).unwrap()
    }

    #[test]
    fn lipschitz_examples() {
        assert!((lipschitz_product_bound(&unit_net()).unwrap() - 1.0).abs() < 1e-12);
        let n = FeedforwardNet::new(
            vec![m(&[&[3.0, 0.0], &[0.0, 1.0]]), m(&[&[0.0, 2.0]])],
            ScalarActivation::relu(),
        )
        .unwrap();
        assert!((lipschitz_product_bound(&n).unwrap() - 6.0).abs() < 1e-12);

        let n = FeedforwardNet::new(
            vec![m(&[&[1.0]]), m(&[&[1.0]])],
            ScalarActivation::scaled_tanh(2.0).unwrap(),
        )
        .unwrap();
        assert!(matches!(
            lipschitz_product_bound(&n),
            Err(BenchError::NotOneLipschitz { layer: 1, .. })
        ));
    }

    #[test]
    fn timing_trivial_net() {
        let t = time_bound_computation(&unit_net(), 21).unwrap();
        assert!(t < 1e-4, "{t}");
        assert!(time_bound_computation(&unit_net(), 10).is_err());
    }

    #[test]
    fn tightness_of_tanh_near_origin() {
        let net = unit_net();
        let bound = net.network_sector_bound().unwrap();
        let q = sample_bound_quality_in(&net, &bound, 1000, 1, 1e-3).unwrap();
        assert_eq!(q.violations, 0);
        assert!(q.tightness > 0.999_999 && q.tightness <= 1.0, "{}", q.tightness);
    }

    #[test]
    fn widened_bound_is_loose() {
        let net = unit_net();
        let bound = net.network_sector_bound().unwrap().scale(10.0).unwrap();
        let q = sample_bound_quality(&net, &bound, 10_000, 3).unwrap();
        assert_eq!(q.violations, 0);
        assert!(q.tightness <= 0.1);
    }

    #[test]
    fn report_and_table() {
        let r = bench_report(&unit_net(), 100, 11, 0).unwrap();
        assert_eq!(r.architecture, vec![1, 1]);
        assert_eq!(r.violations, 0);
        assert_eq!(r.lipschitz_product, Some(1.0));
        let table = render_table(&[r]);
        assert!(table.contains("Sector bound") && table.contains("Product of norms"));
        let widths: Vec<usize> = table.lines().map(|l| l.chars().count()).collect();
        assert!(widths.windows(2).all(|w| w[0] == w[1]), "{table}");
    }
}
