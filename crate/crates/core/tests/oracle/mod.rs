//! Brute-force reference implementations, written from the metric
//! definitions without sharing code with the library.
#![allow(dead_code)]

/// Entropy (nats) of the rater vote frequencies at every pixel.
/// `raters[r][i]` is rater r's label at pixel i.
pub fn vote_entropy(raters: &[Vec<u8>], num_classes: usize) -> Vec<f64> {
    let n = raters[0].len();
    (0..n)
        .map(|i| {
            let mut h = 0.0;
            for c in 0..num_classes {
                let votes = raters.iter().filter(|r| r[i] as usize == c).count();
                if votes > 0 {
                    let p = votes as f64 / raters.len() as f64;
                    h -= p * p.ln();
                }
            }
            h
        })
        .collect()
}

/// Entropy of explicit distributions, `probs[c][i]`.
pub fn prob_entropy(probs: &[Vec<f64>]) -> Vec<f64> {
    (0..probs[0].len())
        .map(|i| {
            probs
                .iter()
                .map(|ch| ch[i])
                .filter(|&p| p > 0.0)
                .map(|p| -p * p.ln())
                .sum()
        })
        .collect()
}

/// Per-class Brier over images; `soft[img][c][i]`, `pred[img][c][i]`.
pub fn brier(soft: &[Vec<Vec<f64>>], pred: &[Vec<Vec<f64>>]) -> Vec<f64> {
    let classes = soft[0].len();
    let mut out = vec![0.0; classes];
    for c in 0..classes {
        let mut acc = 0.0;
        for img in 0..soft.len() {
            let n = soft[img][c].len();
            let mut s = 0.0;
            for i in 0..n {
                s += (soft[img][c][i] - pred[img][c][i]).powi(2);
            }
            acc += s / n as f64;
        }
        out[c] = acc / soft.len() as f64;
    }
    out
}

pub fn dice(pred: &[u8], gt: &[u8], class: u8) -> f64 {
    let a = pred.iter().filter(|&&p| p == class).count();
    let b = gt.iter().filter(|&&g| g == class).count();
    if a + b == 0 {
        return 1.0;
    }
    let both = pred.iter().zip(gt).filter(|(&p, &g)| p == class && g == class).count();
    2.0 * both as f64 / (a + b) as f64
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy): (f64, f64) = (x.iter().sum(), y.iter().sum());
    let (mx, my) = (sx / n, sy / n);
    let mut num = 0.0;
    let mut dx2 = 0.0;
    let mut dy2 = 0.0;
    for i in 0..x.len() {
        num += (x[i] - mx) * (y[i] - my);
        dx2 += (x[i] - mx).powi(2);
        dy2 += (y[i] - my).powi(2);
    }
    num / (dx2 * dy2).sqrt()
}

/// OLS R^2 with intercept via normal equations and Gauss-Jordan
/// elimination with partial pivoting.
pub fn r_squared(y: &[f64], xs: &[&[f64]]) -> f64 {
    let n = y.len();
    let p = xs.len() + 1;
    let row = |i: usize| -> Vec<f64> {
        let mut r = vec![1.0];
        r.extend(xs.iter().map(|x| x[i]));
        r
    };
    let mut a = vec![vec![0.0; p + 1]; p];
    for i in 0..n {
        let r = row(i);
        for j in 0..p {
            for k in 0..p {
                a[j][k] += r[j] * r[k];
            }
            a[j][p] += r[j] * y[i];
        }
    }
    for col in 0..p {
        let piv = (col..p).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        for r in 0..p {
            if r != col {
                let f = a[r][col] / a[col][col];
                for k in col..=p {
                    a[r][k] -= f * a[col][k];
                }
            }
        }
    }
    let beta: Vec<f64> = (0..p).map(|j| a[j][p] / a[j][j]).collect();
    let my = y.iter().sum::<f64>() / n as f64;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for i in 0..n {
        let fit: f64 = row(i).iter().zip(&beta).map(|(r, b)| r * b).sum();
        ss_res += (y[i] - fit).powi(2);
        ss_tot += (y[i] - my).powi(2);
    }
    1.0 - ss_res / ss_tot
}

/// AUC-PR over every distinct uncertainty value: each threshold is scored
/// by a full scan, the curve starts at (recall 0, precision 1) and is
/// integrated with trapezoids in threshold-descending order.
pub fn aucpr_exact(u: &[f64], wrong: &[bool]) -> f64 {
    let mut ts: Vec<f64> = u.to_vec();
    ts.sort_by(|a, b| b.total_cmp(a));
    ts.dedup();
    aucpr_at(u, wrong, &ts)
}

/// AUC-PR with `k` thresholds evenly spaced on `[0, max u]`.
pub fn aucpr_even(u: &[f64], wrong: &[bool], k: usize) -> f64 {
    let max = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ts: Vec<f64> = if k == 1 {
        vec![0.0]
    } else {
        (0..k).rev().map(|j| if j == k - 1 { max } else { max * j as f64 / (k - 1) as f64 }).collect()
    };
    aucpr_at(u, wrong, &ts)
}

fn aucpr_at(u: &[f64], wrong: &[bool], ts: &[f64]) -> f64 {
    let pos = wrong.iter().filter(|&&w| w).count() as f64;
    let mut pts = vec![(0.0, 1.0)];
    for &t in ts {
        let mut tp = 0.0;
        let mut fp = 0.0;
        for (v, w) in u.iter().zip(wrong) {
            if *v >= t {
                if *w {
                    tp += 1.0;
                } else {
                    fp += 1.0;
                }
            }
        }
        let prec = if tp + fp == 0.0 { 1.0 } else { tp / (tp + fp) };
        pts.push((tp / pos, prec));
    }
    pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0).sum()
}
