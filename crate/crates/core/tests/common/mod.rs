//! Independent oracles and generators shared by the integration tests.
//! Nothing here calls the library's numerical routines.

#![allow(dead_code)]

use std::path::PathBuf;

use lure_verify::linalg::DenseMatrix;
use lure_verify::lure::{LtiSystem, LureSystem};
use lure_verify::nn::{FeedforwardNet, ScalarActivation};
use rand::Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

pub fn mat(rows: &[&[f64]]) -> DenseMatrix {
    DenseMatrix::from_rows(rows).unwrap()
}

pub fn paper_plant() -> LtiSystem {
    LtiSystem::new(
        mat(&[&[-5.0, 1.0], &[3.0, -5.0]]),
        mat(&[&[0.5], &[1.0]]),
        DenseMatrix::identity(2),
    )
    .unwrap()
}

/// Laplace expansion along the first row.
pub fn cofactor_det(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    match n {
        0 => 1.0,
        1 => m[0][0],
        2 => m[0][0] * m[1][1] - m[0][1] * m[1][0],
        _ => (0..n)
            .map(|j| {
                let minor: Vec<Vec<f64>> = m[1..]
                    .iter()
                    .map(|row| {
                        row.iter()
                            .enumerate()
                            .filter(|(k, _)| *k != j)
                            .map(|(_, v)| *v)
                            .collect()
                    })
                    .collect();
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                sign * m[0][j] * cofactor_det(&minor)
            })
            .sum(),
    }
}

pub fn trace(m: &[Vec<f64>]) -> f64 {
    (0..m.len()).map(|i| m[i][i]).sum()
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (n, k, p) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; p]; n];
    for i in 0..n {
        for j in 0..p {
            for l in 0..k {
                out[i][j] += a[i][l] * b[l][j];
            }
        }
    }
    out
}

/// Monic characteristic polynomial `λⁿ + c₁λⁿ⁻¹ + … + cₙ` by Faddeev–LeVerrier;
/// returns `[1, c₁, …, cₙ]`.
pub fn char_poly(m: &[Vec<f64>]) -> Vec<f64> {
    let n = m.len();
    let mut coeffs = vec![1.0];
    let mut mk = vec![vec![0.0; n]; n];
    let mut c_prev = 1.0;
    for k in 1..=n {
        for i in 0..n {
            mk[i][i] += c_prev;
        }
        mk = matmul(m, &mk);
        let c = -trace(&mk) / k as f64;
        coeffs.push(c);
        c_prev = c;
    }
    coeffs
}

type C = (f64, f64);

fn cmul(a: C, b: C) -> C {
    (a.0 * b.0 - a.1 * b.1, a.0 * b.1 + a.1 * b.0)
}

fn cdiv(a: C, b: C) -> C {
    let d = b.0 * b.0 + b.1 * b.1;
    ((a.0 * b.0 + a.1 * b.1) / d, (a.1 * b.0 - a.0 * b.1) / d)
}

/// Roots of a monic polynomial `[1, c₁, …, cₙ]` by Durand–Kerner iteration.
pub fn poly_roots(coeffs: &[f64]) -> Vec<C> {
    let n = coeffs.len() - 1;
    let scale = 1.0 + coeffs.iter().skip(1).fold(0.0_f64, |a, c| a.max(c.abs()));
    let mut z: Vec<C> = (0..n)
        .map(|k| {
            let th = 2.0 * std::f64::consts::PI * k as f64 / n as f64 + 0.4;
            (scale * th.cos(), scale * th.sin())
        })
        .collect();
    let eval = |x: C| coeffs.iter().fold((0.0, 0.0), |acc, &c| {
        let p = cmul(acc, x);
        (p.0 + c, p.1)
    });
    for _ in 0..2000 {
        let mut delta = 0.0_f64;
        for i in 0..n {
            let mut den = (1.0, 0.0);
            for j in 0..n {
                if i != j {
                    den = cmul(den, (z[i].0 - z[j].0, z[i].1 - z[j].1));
                }
            }
            let step = cdiv(eval(z[i]), den);
            z[i] = (z[i].0 - step.0, z[i].1 - step.1);
            delta = delta.max(step.0.abs() + step.1.abs());
        }
        if delta < 1e-15 * scale {
            break;
        }
    }
    z
}

/// Routh–Hurwitz: every leading principal minor of the Hurwitz matrix of the
/// monic polynomial `[1, c₁, …, cₙ]` is positive.
pub fn routh_hurwitz_stable(coeffs: &[f64]) -> bool {
    let n = coeffs.len() - 1;
    let a = |k: isize| -> f64 {
        if k < 0 || k as usize > n {
            0.0
        } else {
            coeffs[k as usize]
        }
    };
    let h: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| a(2 * j as isize - i as isize + 1))
                .collect()
        })
        .collect();
    (1..=n).all(|k| {
        let minor: Vec<Vec<f64>> = h[..k].iter().map(|r| r[..k].to_vec()).collect();
        cofactor_det(&minor) > 0.0
    })
}

/// Eigenvalues of a 2×2 matrix from its trace and determinant, as `(re, im)`.
pub fn eig2(m: &[Vec<f64>]) -> [C; 2] {
    let t = m[0][0] + m[1][1];
    let d = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let disc = t * t / 4.0 - d;
    if disc >= 0.0 {
        let s = disc.sqrt();
        [(t / 2.0 - s, 0.0), (t / 2.0 + s, 0.0)]
    } else {
        let s = (-disc).sqrt();
        [(t / 2.0, -s), (t / 2.0, s)]
    }
}

/// `Γ₂` by plain triple loops: `(∏cᵢ)·|W⁽q+1⁾|⋯|W⁽¹⁾|`.
pub fn naive_gamma(layers: &[Vec<Vec<f64>>], gains: &[f64]) -> Vec<Vec<f64>> {
    let abs = |w: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        w.iter().map(|r| r.iter().map(|v| v.abs()).collect()).collect()
    };
    let mut acc = abs(&layers[0]);
    for w in &layers[1..] {
        acc = matmul(&abs(w), &acc);
    }
    let c: f64 = gains.iter().product();
    acc.iter()
        .map(|r| r.iter().map(|v| v * c).collect())
        .collect()
}

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, lo: f64, hi: f64) -> DenseMatrix {
    let data = (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect();
    DenseMatrix::new(rows, cols, data).unwrap()
}

/// Bias-free net with `q` hidden layers of random width in `1..=max_width`.
pub fn random_net<R: Rng>(
    rng: &mut R,
    input: usize,
    output: usize,
    q: usize,
    max_width: usize,
    weight: f64,
    act: ScalarActivation,
) -> FeedforwardNet {
    let mut layers = Vec::with_capacity(q + 1);
    let mut cols = input;
    for _ in 0..q {
        let w = rng.gen_range(1..=max_width);
        layers.push(random_matrix(rng, w, cols, -weight, weight));
        cols = w;
    }
    layers.push(random_matrix(rng, output, cols, -weight, weight));
    FeedforwardNet::new(layers, act).unwrap()
}

/// Random positive Lur'e loop: Metzler `A` with a dominant negative diagonal,
/// nonnegative `B` and `C`, small tanh or relu controller.
pub fn random_positive_loop<R: Rng>(rng: &mut R, max_n: usize) -> LureSystem {
    let n = rng.gen_range(1..=max_n);
    let m = rng.gen_range(1..=3);
    let p = rng.gen_range(1..=3);
    let mut a = random_matrix(rng, n, n, 0.0, 1.0);
    for i in 0..n {
        a[(i, i)] = -rng.gen_range(1.0..3.0) - n as f64;
    }
    let b = random_matrix(rng, n, m, 0.0, 1.0);
    let c = random_matrix(rng, p, n, 0.0, 1.0);
    let act = if rng.gen_bool(0.5) {
        ScalarActivation::tanh()
    } else {
        ScalarActivation::relu()
    };
    let q = rng.gen_range(1..=2);
    let net = random_net(rng, p, m, q, 4, 0.6, act);
    LureSystem::new(LtiSystem::new(a, b, c).unwrap(), net).unwrap()
}

/// `vᵀM + εvᵀ ≤ 0` column by column, `v > 0`, `ε > 0`, by direct loops.
pub fn certificate_holds(v: &[f64], epsilon: f64, m: &DenseMatrix) -> bool {
    let n = m.rows();
    v.len() == n
        && epsilon > 0.0
        && v.iter().all(|x| *x > 0.0)
        && (0..n).all(|j| {
            let mut s = epsilon * v[j];
            for (i, vi) in v.iter().enumerate() {
                s += vi * m[(i, j)];
            }
            s <= 0.0
        })
}
