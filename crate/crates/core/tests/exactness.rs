//! Encoded-domain kernels against kernels computed directly on plaintext.

use okra_core::kernel::{assemble_global, cross_products, KernelError, KernelSpec};
use okra_core::keys::{build_key, derive_plan, Seed};
use okra_core::{encode, DataMatrix, EncodedMatrix, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_data(rng: &mut ChaCha8Rng, n: usize, f: usize) -> DataMatrix {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..f).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    DataMatrix::from_rows(&rows).unwrap()
}

/// Kernel matrix straight from the textbook definitions.
fn oracle(parts: &[DataMatrix], spec: &KernelSpec) -> Matrix {
    let rows: Vec<&[f64]> = parts
        .iter()
        .flat_map(|p| (0..p.n_rows()).map(move |i| p.row(i)))
        .collect();
    let n = rows.len();
    Matrix::from_fn(n, n, |i, j| {
        let (x, y) = (rows[i], rows[j]);
        let mut dot = 0.0;
        let mut dist = 0.0;
        for k in 0..x.len() {
            dot += x[k] * y[k];
            dist += (x[k] - y[k]).powi(2);
        }
        match *spec {
            KernelSpec::Linear => dot,
            KernelSpec::Rbf {
                gamma,
                length_scale: l,
            } => gamma * gamma * (-dist / (2.0 * l * l)).exp(),
            KernelSpec::Polynomial { degree } => (1.0 + dot).powf(degree as f64),
            KernelSpec::RationalQuadratic {
                gamma,
                length_scale: l,
                alpha,
            } => gamma * gamma * (1.0 + dist / (2.0 * alpha * l * l)).powf(-alpha),
        }
    })
}

fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
    a.max_abs_diff(b) / b.max_abs().max(f64::MIN_POSITIVE)
}

fn specs() -> Vec<KernelSpec> {
    vec![
        KernelSpec::Linear,
        KernelSpec::Rbf {
            gamma: 1.3,
            length_scale: 4.0,
        },
        KernelSpec::Polynomial { degree: 3 },
        KernelSpec::RationalQuadratic {
            gamma: 0.8,
            length_scale: 3.0,
            alpha: 1.5,
        },
    ]
}

#[test]
fn three_parties_match_plaintext_for_every_family() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let f = 120;
    let key = build_key(&Seed::new([3; 32]), &derive_plan(f, 16, 1).unwrap()).unwrap();
    let parts: Vec<DataMatrix> = (0..3).map(|_| random_data(&mut rng, 20, f)).collect();
    let subs: Vec<EncodedMatrix> = parts
        .iter()
        .enumerate()
        .map(|(p, d)| encode(d, &key, format!("p{p}")).unwrap())
        .collect();
    for spec in specs() {
        let g = assemble_global(&subs, &spec).unwrap();
        let want = oracle(&parts, &spec);
        let err = rel_err(g.values(), &want);
        assert!(err <= 1e-8, "{}: relative error {err:e}", spec.name());
        assert!(g.values().asymmetry() <= 1e-9);
    }
}

#[test]
fn linear_diagonal_is_squared_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let key = build_key(&Seed::new([5; 32]), &derive_plan(33, 8, 2).unwrap()).unwrap();
    let d = random_data(&mut rng, 6, 33);
    let g = assemble_global(&[encode(&d, &key, "a").unwrap()], &KernelSpec::Linear).unwrap();
    for i in 0..6 {
        let norm: f64 = d.row(i).iter().map(|v| v * v).sum();
        assert!((g.values()[(i, i)] - norm).abs() <= 1e-10 * norm);
    }
}

#[test]
fn gram_is_positive_semidefinite_for_linear_and_rbf() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let key = build_key(&Seed::new([8; 32]), &derive_plan(40, 8, 1).unwrap()).unwrap();
    let parts: Vec<DataMatrix> = (0..2).map(|_| random_data(&mut rng, 15, 40)).collect();
    let subs: Vec<EncodedMatrix> = parts
        .iter()
        .enumerate()
        .map(|(p, d)| encode(d, &key, format!("p{p}")).unwrap())
        .collect();
    for spec in [
        KernelSpec::Linear,
        KernelSpec::Rbf {
            gamma: 1.0,
            length_scale: 2.0,
        },
    ] {
        let g = assemble_global(&subs, &spec).unwrap();
        let n = g.len();
        let eig = nalgebra::SymmetricEigen::new(nalgebra::DMatrix::from_row_slice(
            n,
            n,
            g.values().as_slice(),
        ));
        let max = eig.eigenvalues.max();
        assert!(eig.eigenvalues.min() >= -1e-6 * max);
    }
}

#[test]
fn different_seeds_fail_the_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let f = 50;
    let plan = derive_plan(f, 8, 1).unwrap();
    let a = random_data(&mut rng, 4, f);
    let b = random_data(&mut rng, 4, f);
    for trial in 0..10u8 {
        let ka = build_key(&Seed::new([trial; 32]), &plan).unwrap();
        let kb = build_key(&Seed::new([trial + 100; 32]), &plan).unwrap();
        let ea = encode(&a, &ka, "a").unwrap();
        let eb = encode(&b, &kb, "b").unwrap();
        match cross_products(&ea, &eb) {
            Err(KernelError::ImaginaryLeak { .. }) => {}
            Ok(base) => {
                let want = oracle(&[a.clone(), b.clone()], &KernelSpec::Linear);
                let got = Matrix::from_fn(4, 4, |i, j| base.cross[(i, j)]);
                let want_block = Matrix::from_fn(4, 4, |i, j| want[(i, 4 + j)]);
                assert!(got.max_abs_diff(&want_block) > 1e-3);
            }
            Err(e) => panic!("unexpected {e}"),
        }
    }
}
