#![allow(dead_code)]

use std::sync::Arc;

use gsde::engine::GSdeSystem;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Dense-grid maximization of `½ Σ γᵢ aᵢᵢ` over the box `∏ [loᵢ, hiᵢ]`,
/// `points` grid values per component (endpoints included).
pub fn grid_g(a: &DMatrix<f64>, lo: &[f64], hi: &[f64], points: usize) -> f64 {
    let m = lo.len();
    let levels: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            (0..points)
                .map(|j| lo[i] + (hi[i] - lo[i]) * j as f64 / (points - 1) as f64)
                .collect()
        })
        .collect();
    let mut best = f64::NEG_INFINITY;
    let mut idx = vec![0usize; m];
    loop {
        let v: f64 = (0..m).map(|i| levels[i][idx[i]] * a[(i, i)]).sum();
        best = best.max(0.5 * v);
        let mut k = 0;
        while k < m {
            idx[k] += 1;
            if idx[k] < points {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == m {
            return best;
        }
    }
}

/// Every corner of the box `∏ [loᵢ, hiᵢ]`.
pub fn box_corners(lo: &[f64], hi: &[f64]) -> Vec<Vec<f64>> {
    let m = lo.len();
    (0..1usize << m)
        .map(|mask| {
            (0..m)
                .map(|i| if mask >> i & 1 == 1 { hi[i] } else { lo[i] })
                .collect()
        })
        .collect()
}

pub fn random_symmetric(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-scale..scale));
    (&a + a.transpose()) * 0.5
}

pub fn random_matrix(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |_, _| rng.random_range(-scale..scale))
}

/// `dx = Ax dt + Σᵢ Dᵢx dBᵢ + Σᵢⱼ Cᵢⱼx d⟨Bᵢ,Bⱼ⟩` with `Cᵢⱼ = Cⱼᵢ`.
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub diff: Vec<DMatrix<f64>>,
    /// Indexed `[i * m + j]`.
    pub qv: Vec<DMatrix<f64>>,
}

impl LinearSystem {
    pub fn random(rng: &mut ChaCha8Rng, d: usize, m: usize) -> Self {
        let a = random_matrix(rng, d, 2.0);
        let diff = (0..m).map(|_| random_matrix(rng, d, 1.0)).collect();
        let mut qv = vec![DMatrix::zeros(d, d); m * m];
        for i in 0..m {
            for j in i..m {
                let c = random_matrix(rng, d, 1.0);
                qv[i * m + j] = c.clone();
                qv[j * m + i] = c;
            }
        }
        Self { a, diff, qv }
    }

    pub fn d(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.diff.len()
    }

    pub fn system(&self) -> GSdeSystem {
        let (d, m) = (self.d(), self.m());
        let a = self.a.clone();
        let diff = self.diff.clone();
        let qv = self.qv.clone();
        GSdeSystem::new(
            "random-linear",
            d,
            m,
            Arc::new(move |x: &[f64], _, out: &mut [f64]| {
                out.copy_from_slice((&a * DVector::from_column_slice(x)).as_slice());
            }),
            Arc::new(move |x: &[f64], _, out: &mut [f64]| {
                let xv = DVector::from_column_slice(x);
                for (i, di) in diff.iter().enumerate() {
                    let col = di * &xv;
                    for k in 0..d {
                        out[k * m + i] = col[k];
                    }
                }
            }),
            Some(Arc::new(move |x: &[f64], _, out: &mut [f64]| {
                let xv = DVector::from_column_slice(x);
                for i in 0..m {
                    for j in 0..m {
                        let col = &qv[i * m + j] * &xv;
                        for k in 0..d {
                            out[(k * m + i) * m + j] = col[k];
                        }
                    }
                }
            })),
        )
        .expect("valid linear system")
    }

    /// Classical generator of `V` under covariance rate `γ`:
    /// `⟨∇V, Ax + Σᵢⱼ γᵢⱼ Cᵢⱼx⟩ + ½ Σᵢⱼ γᵢⱼ (Dᵢx)ᵀ ∇²V (Dⱼx)`.
    pub fn classical_generator(
        &self,
        grad: &DVector<f64>,
        hess: &DMatrix<f64>,
        gamma: &DMatrix<f64>,
        x: &[f64],
    ) -> f64 {
        let m = self.m();
        let xv = DVector::from_column_slice(x);
        let mut lv = grad.dot(&(&self.a * &xv));
        for i in 0..m {
            for j in 0..m {
                let g = gamma[(i, j)];
                if g == 0.0 {
                    continue;
                }
                lv += g * grad.dot(&(&self.qv[i * m + j] * &xv));
                lv += 0.5 * g * (&self.diff[i] * &xv).dot(&(hess * (&self.diff[j] * &xv)));
            }
        }
        lv
    }
}

/// `V = |x|^4`: gradient `4|x|²x`, Hessian `4|x|²I + 8xxᵀ`.
pub fn quartic_derivatives(x: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let xv = DVector::from_column_slice(x);
    let r2 = xv.norm_squared();
    let grad = &xv * (4.0 * r2);
    let hess = DMatrix::identity(x.len(), x.len()) * (4.0 * r2) + &xv * xv.transpose() * 8.0;
    (grad, hess)
}

/// `V = |x|²`.
pub fn quadratic_derivatives(x: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let xv = DVector::from_column_slice(x);
    (&xv * 2.0, DMatrix::identity(x.len(), x.len()) * 2.0)
}

/// Scalar `dx = ax dt + kx dB`.
pub fn scalar_linear(a: f64, k: f64) -> GSdeSystem {
    GSdeSystem::new(
        "scalar-linear",
        1,
        1,
        Arc::new(move |x: &[f64], _, out: &mut [f64]| out[0] = a * x[0]),
        Arc::new(move |x: &[f64], _, out: &mut [f64]| out[0] = k * x[0]),
        None,
    )
    .expect("valid scalar system")
}

/// Upcrossings by scanning every strictly increasing index sequence
/// `s₁ < t₁ < s₂ < t₂ < …` with `x(sᵢ) ≤ α` and `x(tᵢ) ≥ β`.
pub fn brute_force_upcrossings(series: &[f64], alpha: f64, beta: f64) -> usize {
    let n = series.len();
    let mut best = 0;
    // Each subset encodes chosen indices; alternate low/high along it.
    for mask in 0u32..(1u32 << n) {
        let idx: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 1).collect();
        if idx.len() % 2 == 1 {
            continue;
        }
        let ok = idx.iter().enumerate().all(|(pos, &i)| {
            if pos % 2 == 0 {
                series[i] <= alpha
            } else {
                series[i] >= beta
            }
        });
        if ok {
            best = best.max(idx.len() / 2);
        }
    }
    best
}
