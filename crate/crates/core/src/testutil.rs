//! Shared fixtures for unit tests.

use nalgebra::DVector;

use crate::model::{Loss, ProblemInstance, RidgeForm, SparsityBudget};
use crate::rng::SeededRng;
use crate::spectra::{compact_svd, gen_lowrank, SvdFactors};

/// Exact rank-`r` design with a sparse planted signal, plus its rank-`r` factors.
pub fn instance(
    n: usize,
    m: usize,
    r: usize,
    seed: u64,
    loss: Loss,
    ridge: RidgeForm,
    budget: SparsityBudget,
) -> (ProblemInstance, SvdFactors) {
    let x = gen_lowrank(n, m, r, seed).unwrap();
    let mut rng = SeededRng::with_stream(seed, 99);
    let beta: Vec<f64> = (0..m)
        .map(|i| {
            if i % 3 == 0 {
                2.0 * rng.standard_normal()
            } else {
                0.0
            }
        })
        .collect();
    let xb = &x * DVector::from_vec(beta);
    let y: Vec<f64> = match loss {
        Loss::Quadratic => xb.iter().map(|v| v + rng.standard_normal()).collect(),
        Loss::Logistic => xb
            .iter()
            .map(|v| {
                if v + rng.standard_normal() >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect(),
    };
    let inst = ProblemInstance::new(x, DVector::from_vec(y), loss, ridge, budget).unwrap();
    let svd = compact_svd(&inst.x_matrix, Some(r), None).unwrap();
    (inst, svd)
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}
