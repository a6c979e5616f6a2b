//! Regenerates the model files under `fixtures/`.
//!
//! ```text
//! cargo run --example make_fixtures -- crates/core/fixtures
//! ```
//!
//! Hidden-layer weights are seeded random values rounded to four decimals.
//! The columns of `W⁽¹⁾` are then rescaled so the network bound `Γ₂` hits a
//! chosen row exactly; `Γ₂` is linear in each column of `|W⁽¹⁾|`.
//!
//! The last hidden unit feeds nothing (its output-layer column is zero), so
//! scaling its incoming row moves `∏‖W⁽ⁱ⁾‖₂` without touching `Γ₂`. That
//! scale is bisected to put the product-of-norms bound at a chosen value.

use std::fs;
use std::path::{Path, PathBuf};

use lure_verify::bench::lipschitz_product_bound;
use lure_verify::linalg::DenseMatrix;
use lure_verify::lure::LtiSystem;
use lure_verify::model::ModelFile;
use lure_verify::nn::{FeedforwardNet, ScalarActivation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn m(rows: &[&[f64]]) -> DenseMatrix {
    DenseMatrix::from_rows(rows).unwrap()
}

fn paper_plant() -> LtiSystem {
    LtiSystem::new(
        m(&[&[-5.0, 1.0], &[3.0, -5.0]]),
        m(&[&[0.5], &[1.0]]),
        DenseMatrix::identity(2),
    )
    .unwrap()
}

fn scalar_plant(a: f64) -> LtiSystem {
    LtiSystem::new(m(&[&[a]]), m(&[&[1.0]]), m(&[&[1.0]])).unwrap()
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    let data = (0..rows * cols)
        .map(|_| (rng.gen_range(-1.0..1.0_f64) * 1e4).round() / 1e4)
        .collect();
    DenseMatrix::new(rows, cols, data).unwrap()
}

/// Net with output widths `widths` on 2 inputs whose `Γ₂` equals `target`
/// and whose product of spectral norms equals `lipschitz`.
fn targeted_net(seed: u64, widths: &[usize], target: [f64; 2], lipschitz: f64) -> FeedforwardNet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    let mut cols = 2;
    for &w in widths {
        layers.push(random_matrix(&mut rng, w, cols));
        cols = w;
    }
    let q = layers.len() - 1;
    let dead = layers[q - 1].rows() - 1;
    let mut out = layers[q].to_rows();
    out.iter_mut().for_each(|row| row[dead] = 0.0);
    layers[q] = DenseMatrix::from_rows(&out).unwrap();

    let g = FeedforwardNet::new(layers.clone(), ScalarActivation::tanh())
        .unwrap()
        .network_sector_bound()
        .unwrap()
        .upper;
    let mut w1 = layers[0].to_rows();
    for row in &mut w1 {
        for (j, v) in row.iter_mut().enumerate() {
            *v *= target[j] / g[(0, j)];
        }
    }
    layers[0] = DenseMatrix::from_rows(&w1).unwrap();

    let base = layers[q - 1].to_rows();
    let build = |scale: f64| {
        let mut rows = base.clone();
        rows[dead].iter_mut().for_each(|v| *v *= scale);
        let mut l = layers.clone();
        l[q - 1] = DenseMatrix::from_rows(&rows).unwrap();
        FeedforwardNet::new(l, ScalarActivation::tanh()).unwrap()
    };
    let lip = |scale: f64| lipschitz_product_bound(&build(scale)).unwrap();
    let (mut lo, mut hi) = (0.0, 1.0);
    assert!(lip(lo) < lipschitz, "seed {seed}: base product {} too large", lip(lo));
    while lip(hi) < lipschitz {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if lip(mid) < lipschitz {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    build(hi)
}

const FIELD_ORDER: [&str; 13] = [
    "version", "plant", "controller", "A", "B", "C", "activation", "layers", "biases", "name",
    "sector", "slope", "gain",
];

/// Pretty JSON with arrays of scalars kept on one line.
fn render(v: &Value, depth: usize) -> String {
    let pad = "  ".repeat(depth + 1);
    let close = "  ".repeat(depth);
    match v {
        Value::Array(items) if items.iter().all(|i| !i.is_array() && !i.is_object()) => {
            serde_json::to_string(v).unwrap().replace(',', ", ")
        }
        Value::Array(items) => {
            let inner: Vec<String> = items.iter().map(|i| format!("{pad}{}", render(i, depth + 1))).collect();
            format!("[\n{}\n{close}]", inner.join(",\n"))
        }
        Value::Object(map) => {
            let rank = |k: &str| FIELD_ORDER.iter().position(|f| *f == k).unwrap_or(usize::MAX);
            let mut fields: Vec<_> = map.iter().collect();
            fields.sort_by_key(|(k, _)| rank(k));
            let inner: Vec<String> = fields
                .into_iter()
                .map(|(k, i)| format!("{pad}{}: {}", Value::from(k.as_str()), render(i, depth + 1)))
                .collect();
            format!("{{\n{}\n{close}}}", inner.join(",\n"))
        }
        _ => v.to_string(),
    }
}

fn write(dir: &Path, name: &str, plant: &LtiSystem, net: &FeedforwardNet) {
    let mut file = ModelFile::from_model(plant, net).expect("built-in activation");
    file.controller.biases = Some(net.architecture().iter().map(|w| vec![0.0; *w]).collect());
    let text = render(&serde_json::to_value(&file).unwrap(), 0) + "\n";
    fs::write(dir.join(name), text).unwrap();
    let bound = net.network_sector_bound().map(|b| b.upper.to_rows());
    let lip = lipschitz_product_bound(net).ok();
    println!("{name}: {:?}, gamma_2 {bound:?}, product of norms {lip:?}", net.architecture());
}

fn main() {
    let dir: PathBuf = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "crates/core/fixtures".into())
        .into();
    fs::create_dir_all(&dir).unwrap();

    let deep = [10, 15, 15, 1];
    let shallow = [10, 10, 1];
    let plant = paper_plant();
    write(&dir, "paper-example.json", &plant, &targeted_net(1, &deep, [0.83, 1.19], 6.45));
    write(&dir, "net-10-15-15-1.json", &plant, &targeted_net(2, &deep, [2.75, 1.47], 6.45));
    write(&dir, "net-10-10-1.json", &plant, &targeted_net(3, &shallow, [2.65, 1.61], 5.83));

    let tanh = ScalarActivation::tanh;
    let unit = || vec![m(&[&[1.0]]), m(&[&[1.0]])];
    let net = FeedforwardNet::new(vec![m(&[&[0.5]]), m(&[&[1.0]])], tanh()).unwrap();
    write(&dir, "unstable-scalar.json", &scalar_plant(1.0), &net);

    let net = FeedforwardNet::new(unit(), ScalarActivation::relu()).unwrap();
    write(&dir, "divergent.json", &scalar_plant(2.0), &net);

    let net = FeedforwardNet::new(unit(), tanh()).unwrap();
    write(&dir, "unit-tanh.json", &scalar_plant(-1.0), &net);

    let net = FeedforwardNet::new(
        vec![m(&[&[0.4, 0.1], &[0.2, 0.3]]), m(&[&[0.5, -0.25]])],
        ScalarActivation::scaled_tanh(2.0).unwrap(),
    )
    .unwrap();
    write(&dir, "scaled-tanh.json", &paper_plant(), &net);
}
