//! Reference implementations used only by tests. Deliberately naive and
//! independent of the library code paths they check.

#![allow(dead_code)]

use num::{BigInt, BigRational};

/// AP by direct enumeration: mean over relevant ranks of the precision at
/// that rank, each precision recounted from scratch.
pub fn ap_direct(rel: &[bool]) -> Option<f64> {
    let r_total = rel.iter().filter(|&&b| b).count();
    if r_total == 0 {
        return None;
    }
    let mut sum = 0.0;
    for r in 1..=rel.len() {
        if rel[r - 1] {
            let hits = rel[..r].iter().filter(|&&b| b).count();
            sum += hits as f64 / r as f64;
        }
    }
    Some(sum / r_total as f64)
}

/// Exhaustive Otsu: tries all 256 thresholds (class 0 = values ≤ t), scores
/// the between-class variance w0·w1·(μ0 − μ1)² in exact rationals, keeps
/// the first maximum. `None` when no split leaves both classes non-empty.
pub fn otsu_brute(pixels: &[u8]) -> Option<u8> {
    let n = pixels.len() as i64;
    let mut best: Option<(BigRational, u8)> = None;
    for t in 0..=255u8 {
        let (mut n0, mut s0, mut s1) = (0i64, 0i64, 0i64);
        for &p in pixels {
            if p <= t {
                n0 += 1;
                s0 += p as i64;
            } else {
                s1 += p as i64;
            }
        }
        let n1 = n - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let r = |a: i64, b: i64| BigRational::new(BigInt::from(a), BigInt::from(b));
        let w0 = r(n0, n);
        let w1 = r(n1, n);
        let diff = r(s0, n0) - r(s1, n1);
        let score = w0 * w1 * diff.clone() * diff;
        match &best {
            Some((b, _)) if score <= *b => {}
            _ => best = Some((score, t)),
        }
    }
    best.map(|(_, t)| t)
}

pub fn naive_distance(a: &[f64], b: &[f64], metric: &str) -> f64 {
    match metric {
        "manhattan" => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        "euclidean" => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
        "chi_square" => a
            .iter()
            .zip(b)
            .filter(|(x, y)| *x + *y > 0.0)
            .map(|(x, y)| (x - y) * (x - y) / (x + y))
            .sum(),
        other => panic!("unknown metric {other}"),
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix (row-major).
/// Returns eigenvalues descending with unit eigenvectors as rows.
pub fn jacobi_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]));
    let vals = idx.iter().map(|&i| m[i * n + i]).collect();
    let vecs = idx.iter().map(|&i| (0..n).map(|k| v[k * n + i]).collect()).collect();
    (vals, vecs)
}

/// Sample covariance (denominator n − 1) of row-major samples.
pub fn covariance(samples: &[Vec<f64>]) -> Vec<f64> {
    let n = samples.len();
    let d = samples[0].len();
    let mut mean = vec![0.0; d];
    for s in samples {
        for (m, x) in mean.iter_mut().zip(s) {
            *m += x / n as f64;
        }
    }
    let mut c = vec![0.0; d * d];
    for s in samples {
        for i in 0..d {
            for j in 0..d {
                c[i * d + j] += (s[i] - mean[i]) * (s[j] - mean[j]);
            }
        }
    }
    c.iter_mut().for_each(|x| *x /= (n - 1) as f64);
    c
}

/// Sine of the angle between two lines spanned by `u` and `v`.
pub fn line_angle_sine(u: &[f64], v: &[f64]) -> f64 {
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / (nu * nv);
    u.iter()
        .zip(v)
        .map(|(a, b)| b / nv - dot * a / nu)
        .map(|r| r * r)
        .sum::<f64>()
        .sqrt()
}

