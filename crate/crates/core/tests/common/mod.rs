//! Loop-level reference implementations shared by the integration tests.
//! Written independently of the tape so they can serve as oracles.
#![allow(dead_code)]

use ctxfusion::numerics::{ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_vec(r: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| r.gen_range(-scale..scale)).collect()
}

pub fn tensor(r: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), rand_vec(r, shape.iter().product(), scale)).unwrap()
}

pub fn store(entries: Vec<(&str, Tensor<f64>)>) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    for (n, t) in entries {
        s.insert(n, t).unwrap();
    }
    s
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

pub fn assert_all_close(got: &[f64], want: &[f64], tol: f64, what: &str) {
    assert_eq!(got.len(), want.len(), "{what}: length");
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        assert!(rel_close(*g, *w, tol), "{what}[{i}]: {g} vs {w}");
    }
}

/// `x·W + b` with `W` stored `m × k`.
pub fn affine(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let k = b.len();
    let m = x.len();
    let mut out = vec![0.0; k];
    for j in 0..k {
        let mut s = b[j];
        for i in 0..m {
            s += x[i] * w[i * k + j];
        }
        out[j] = s;
    }
    out
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn squash(s: &[f64]) -> Vec<f64> {
    let n2: f64 = s.iter().map(|v| v * v).sum();
    if n2 == 0.0 {
        return vec![0.0; s.len()];
    }
    let f = n2.sqrt() / (1.0 + n2);
    s.iter().map(|v| v * f).collect()
}

/// One attention direction with residual. `from`, `to` are row-major `n × d`;
/// returns the attended rows and the attention map.
pub fn attention(
    from: &[f64],
    to: &[f64],
    d: usize,
    wq: &[f64],
    wk: &[f64],
    wv: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let nf = from.len() / d;
    let nt = to.len() / d;
    let proj = |x: &[f64], w: &[f64], row: usize| -> Vec<f64> {
        (0..d)
            .map(|c| (0..d).map(|a| x[row * d + a] * w[a * d + c]).sum())
            .collect()
    };
    let mut out = vec![0.0; nf * d];
    let mut alpha = vec![0.0; nf * nt];
    for i in 0..nf {
        let q = proj(from, wq, i);
        let mut scores = vec![0.0; nt];
        for j in 0..nt {
            let k = proj(to, wk, j);
            let mut s = 0.0;
            for c in 0..d {
                s += q[c] * k[c];
            }
            scores[j] = s / (d as f64).sqrt();
        }
        let a = softmax(&scores);
        for j in 0..nt {
            alpha[i * nt + j] = a[j];
            let v = proj(to, wv, j);
            for c in 0..d {
                out[i * d + c] += a[j] * v[c];
            }
        }
        for c in 0..d {
            out[i * d + c] += from[i * d + c];
        }
    }
    (out, alpha)
}

/// Routing by agreement. `u` is `ni × d`, `w` is `[ni, k, d, e]`.
/// Returns output capsules (`k × e`) and the coefficients of every iteration.
pub fn routing(u: &[f64], w: &[f64], ni: usize, d: usize, k: usize, e: usize, iters: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut uhat = vec![vec![vec![0.0; e]; k]; ni];
    for i in 0..ni {
        for j in 0..k {
            for c in 0..e {
                let mut s = 0.0;
                for a in 0..d {
                    s += u[i * d + a] * w[((i * k + j) * d + a) * e + c];
                }
                uhat[i][j][c] = s;
            }
        }
    }
    let mut b = vec![vec![0.0; k]; ni];
    let mut v = vec![vec![0.0; e]; k];
    let mut coeffs = Vec::new();
    for it in 0..iters {
        let c: Vec<Vec<f64>> = b.iter().map(|row| softmax(row)).collect();
        coeffs.push(c.iter().flatten().cloned().collect());
        for j in 0..k {
            let mut s = vec![0.0; e];
            for i in 0..ni {
                for x in 0..e {
                    s[x] += c[i][j] * uhat[i][j][x];
                }
            }
            v[j] = squash(&s);
        }
        if it + 1 < iters {
            for i in 0..ni {
                for j in 0..k {
                    b[i][j] += (0..e).map(|x| uhat[i][j][x] * v[j][x]).sum::<f64>();
                }
            }
        }
    }
    (v.into_iter().flatten().collect(), coeffs)
}

/// Elman recurrence from a zero state; `caps` is `steps × d`.
pub fn rnn(caps: &[f64], d: usize, wx: &[f64], wh: &[f64], b: &[f64]) -> Vec<f64> {
    let h_dim = b.len();
    let mut h = vec![0.0; h_dim];
    for t in 0..caps.len() / d {
        let x = &caps[t * d..(t + 1) * d];
        let mut next = vec![0.0; h_dim];
        for o in 0..h_dim {
            let mut s = b[o];
            for a in 0..d {
                s += x[a] * wx[a * h_dim + o];
            }
            for a in 0..h_dim {
                s += h[a] * wh[a * h_dim + o];
            }
            next[o] = s.tanh();
        }
        h = next;
    }
    h
}

/// Brute-force confusion counts `[tp, fp, fn, tn]`, positive class 1.
pub fn confusion(pred: &[u8], actual: &[u8]) -> [u64; 4] {
    let mut tp = 0;
    let mut fp = 0;
    let mut fn_ = 0;
    let mut tn = 0;
    for i in 0..pred.len() {
        if pred[i] == 1 && actual[i] == 1 {
            tp += 1;
        } else if pred[i] == 1 {
            fp += 1;
        } else if actual[i] == 1 {
            fn_ += 1;
        } else {
            tn += 1;
        }
    }
    [tp, fp, fn_, tn]
}
