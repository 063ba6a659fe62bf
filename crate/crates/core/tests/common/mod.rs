//! Independent reference implementations shared by the integration tests
//! and the acceptance harness.
#![allow(dead_code)]

use gravnorm::gravconv::{GravLayerParams, Variant};
use gravnorm::mlp::{Activation, MlpParams};
use gravnorm::Tensor;

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn brute_radius(rows: &[Vec<f64>], r: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..rows.len() {
        for j in 0..rows.len() {
            if i != j && dist(&rows[i], &rows[j]) <= r {
                out.push((i, j));
            }
        }
    }
    out
}

pub fn brute_knn(rows: &[Vec<f64>], k: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..rows.len() {
        let mut c: Vec<(f64, usize)> = (0..rows.len()).filter(|&j| j != i).map(|j| (dist(&rows[i], &rows[j]), j)).collect();
        c.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        out.extend(c.iter().take(k).map(|&(_, j)| (i, j)));
    }
    out.sort();
    out
}

/// Row-major dense layer stack evaluated with plain loops.
pub fn dense_mlp(m: &MlpParams, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut h = x.to_vec();
    for l in &m.layers {
        let (fi, fo) = (l.weight.shape()[0], l.weight.shape()[1]);
        h = h
            .iter()
            .map(|row| {
                (0..fo)
                    .map(|o| {
                        let mut z = l.bias.as_ref().map_or(0.0, |b| b.data()[o]);
                        for i in 0..fi {
                            z += row[i] * l.weight.data()[i * fo + o];
                        }
                        match l.activation {
                            Activation::Relu => z.max(0.0),
                            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
                            Activation::Linear => z,
                        }
                    })
                    .collect()
            })
            .collect();
    }
    h
}

/// All-pairs aggregation with weights zeroed outside `neighbors`.
pub fn dense_conv(p: &GravLayerParams, x: &[Vec<f64>], variant: Variant, k: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let s = dense_mlp(&p.s_mlp, x);
    let h = dense_mlp(&p.h_mlp, x);
    let n = x.len();
    let d = |i: usize, j: usize| s[i].iter().zip(&s[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let mut agg = vec![vec![0.0; h[0].len()]; n];
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| d(i, a).partial_cmp(&d(i, b)).unwrap().then(a.cmp(&b)));
        for j in 0..n {
            if j == i {
                continue;
            }
            let mass: f64 = h[j].iter().map(|v| v.abs()).sum();
            let w = match variant {
                Variant::Norm if d(i, j) <= p.r => (-p.g * d(i, j).powi(2) / (p.r * p.r)).exp(),
                Variant::Original if order[..k.min(n - 1)].contains(&j) => mass * (-p.g * d(i, j).powi(2)).exp(),
                _ => 0.0,
            };
            for f in 0..h[j].len() {
                agg[i][f] += w * h[j][f] / (mass + 1e-12);
            }
        }
    }
    let joined: Vec<Vec<f64>> = x.iter().zip(&agg).map(|(a, b)| a.iter().chain(b).copied().collect()).collect();
    (agg, dense_mlp(&p.out_mlp, &joined))
}

pub fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

pub fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                den += 1.0;
                num += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

/// Tries every observed score as a cut and keeps the tightest one meeting `eff`.
pub fn sweep(scores: &[f64], labels: &[u8], eff: f64) -> (f64, f64) {
    let n_sig = labels.iter().filter(|&&l| l == 1).count() as f64;
    let n_bkg = labels.len() as f64 - n_sig;
    let mut best: Option<(f64, f64)> = None;
    for &t in scores {
        let sig = scores.iter().zip(labels).filter(|&(&s, &l)| l == 1 && s >= t).count() as f64;
        if sig / n_sig >= eff && best.is_none_or(|(bt, _)| t > bt) {
            let bkg = scores.iter().zip(labels).filter(|&(&s, &l)| l == 0 && s >= t).count() as f64;
            best = Some((t, if bkg == 0.0 { f64::INFINITY } else { n_bkg / bkg }));
        }
    }
    best.unwrap()
}
