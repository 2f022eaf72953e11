//! Independent reference implementations used only by tests.

#![allow(dead_code)]

use fedtn_core::qsim::{Angle, Gate, GateSequence, StateVector};
use num_complex::Complex64;
use rand::Rng;

pub type Matrix = Vec<Vec<Complex64>>;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

fn identity2() -> Matrix {
    vec![vec![c(1.0), c(0.0)], vec![c(0.0), c(1.0)]]
}

pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let (ra, ca, rb, cb) = (a.len(), a[0].len(), b.len(), b[0].len());
    let mut out = vec![vec![c(0.0); ca * cb]; ra * rb];
    for i in 0..ra {
        for j in 0..ca {
            for k in 0..rb {
                for l in 0..cb {
                    out[i * rb + k][j * cb + l] = a[i][j] * b[k][l];
                }
            }
        }
    }
    out
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let n = a.len();
    let m = b[0].len();
    let inner = b.len();
    let mut out = vec![vec![c(0.0); m]; n];
    for i in 0..n {
        for k in 0..inner {
            if a[i][k] == c(0.0) {
                continue;
            }
            for j in 0..m {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

fn add(a: &Matrix, b: &Matrix) -> Matrix {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
        .collect()
}

/// `⊗_{q = n−1 … 0} factors[q]`, so qubit 0 is the least significant index.
fn embed(n: usize, factors: &[(usize, Matrix)]) -> Matrix {
    let mut out = vec![vec![c(1.0)]];
    for q in (0..n).rev() {
        let f = factors
            .iter()
            .find(|(w, _)| *w == q)
            .map(|(_, m)| m.clone())
            .unwrap_or_else(identity2);
        out = kron(&out, &f);
    }
    out
}

pub fn ry_matrix(theta: f64) -> Matrix {
    let (s, co) = (theta / 2.0).sin_cos();
    vec![vec![c(co), c(-s)], vec![c(s), c(co)]]
}

/// Full-register unitary of one gate.
pub fn gate_unitary(n: usize, gate: &Gate, params: &[f64]) -> Matrix {
    match *gate {
        Gate::Ry { qubit, angle } => {
            let theta = match angle {
                Angle::Slot(s) => params[s],
                Angle::Fixed(a) => a,
            };
            embed(n, &[(qubit, ry_matrix(theta))])
        }
        Gate::Cnot { control, target } => {
            let p0 = vec![vec![c(1.0), c(0.0)], vec![c(0.0), c(0.0)]];
            let p1 = vec![vec![c(0.0), c(0.0)], vec![c(0.0), c(1.0)]];
            let x = vec![vec![c(0.0), c(1.0)], vec![c(1.0), c(0.0)]];
            add(
                &embed(n, &[(control, p0)]),
                &embed(n, &[(control, p1), (target, x)]),
            )
        }
    }
}

/// Product of all gate unitaries, last gate leftmost.
pub fn circuit_unitary(seq: &GateSequence, params: &[f64]) -> Matrix {
    let n = seq.n_qubits();
    let mut u = embed(n, &[]);
    for g in seq.gates() {
        u = matmul(&gate_unitary(n, g, params), &u);
    }
    u
}

pub fn apply_matrix(u: &Matrix, v: &[Complex64]) -> Vec<Complex64> {
    u.iter()
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

/// `⟨Z_q⟩` of a raw amplitude vector.
pub fn z_expectation(v: &[Complex64], q: usize) -> f64 {
    v.iter()
        .enumerate()
        .map(|(i, a)| {
            if (i >> q) & 1 == 0 {
                a.norm_sqr()
            } else {
                -a.norm_sqr()
            }
        })
        .sum()
}

pub fn random_state<R: Rng>(rng: &mut R, n: usize) -> StateVector {
    let mut v: Vec<Complex64> = (0..1 << n)
        .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    let norm = v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    v.iter_mut().for_each(|a| *a /= norm);
    StateVector::from_amplitudes(v).unwrap()
}

/// Random mix of slotted `Ry`, fixed `Ry` and CNOTs.
pub fn random_sequence<R: Rng>(rng: &mut R, n: usize, len: usize, n_params: usize) -> GateSequence {
    let gates = (0..len)
        .map(|_| {
            let kind = if n < 2 { 0 } else { rng.gen_range(0..3) };
            match kind {
                0 if n_params > 0 => Gate::ry(rng.gen_range(0..n), rng.gen_range(0..n_params)),
                0 | 1 => Gate::Ry {
                    qubit: rng.gen_range(0..n),
                    angle: Angle::Fixed(rng.gen_range(-4.0..4.0)),
                },
                _ => {
                    let control = rng.gen_range(0..n);
                    let mut target = rng.gen_range(0..n - 1);
                    if target >= control {
                        target += 1;
                    }
                    Gate::cnot(control, target)
                }
            }
        })
        .collect();
    GateSequence::new(n, n_params, gates).unwrap()
}

/// Central difference of `f` along every coordinate of `x`.
pub fn central_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|j| {
            probe[j] = x[j] + h;
            let up = f(&probe);
            probe[j] = x[j] - h;
            let down = f(&probe);
            probe[j] = x[j];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// AUC by comparing every positive with every negative.
pub fn brute_force_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut num = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                num += 1.0;
            } else if si == sj {
                num += 0.5;
            }
        }
    }
    num / pairs
}

pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

/// Straight-line Adam on `f(x) = x²` from `x0`, returning every iterate.
pub fn reference_adam_square(x0: f64, lr: f64, steps: usize) -> Vec<f64> {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut m, mut v, mut x) = (0.0, 0.0, x0);
    let mut out = Vec::new();
    for t in 1..=steps {
        let g = 2.0 * x;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t as i32));
        let vh = v / (1.0 - b2.powi(t as i32));
        x -= lr * mh / (vh.sqrt() + eps);
        out.push(x);
    }
    out
}

/// Area-average resize by integrating the overlap of every output cell with
/// every source cell in the unit square.
pub fn overlap_downscale(src: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let overlap = |a0: f64, a1: f64, b0: f64, b1: f64| (a1.min(b1) - a0.max(b0)).max(0.0);
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            let (y0, y1) = (i as f64 / oh as f64, (i + 1) as f64 / oh as f64);
            let (x0, x1) = (j as f64 / ow as f64, (j + 1) as f64 / ow as f64);
            let mut acc = 0.0;
            for r in 0..h {
                for col in 0..w {
                    let a = overlap(y0, y1, r as f64 / h as f64, (r + 1) as f64 / h as f64)
                        * overlap(x0, x1, col as f64 / w as f64, (col + 1) as f64 / w as f64);
                    acc += a * src[r * w + col];
                }
            }
            out[i * ow + j] = acc / ((y1 - y0) * (x1 - x0));
        }
    }
    out
}

/// Block pairs of the level-wise MERA rule, enumerated recursively over the
/// surviving wire labels.
pub fn mera_pairs_oracle(wires: &[usize]) -> Vec<(usize, usize)> {
    if wires.len() == 1 {
        return Vec::new();
    }
    // disentanglers (a_k, a_{k+1}) for odd k, never touching either end wire
    let m = wires.len();
    let mut pairs = Vec::new();
    let mut k = 1;
    while k + 2 < m {
        pairs.push((wires[k], wires[k + 1]));
        k += 2;
    }
    let mut survivors = Vec::new();
    for pair in wires.chunks(2) {
        pairs.push((pair[0], pair[1]));
        survivors.push(pair[1]);
    }
    pairs.extend(mera_pairs_oracle(&survivors));
    pairs
}
