//! Smooth random fields and Euclidean signed distance transforms.

use rand_distr::{Distribution, StandardNormal};

use crate::array::LabelMap;
use crate::rng::Rng;

/// Stand-in for an unbounded distance when a class is absent.
pub const FAR: f64 = 1e6;

/// Unit-variance smooth Gaussian random field: white noise blurred with a
/// Gaussian kernel of standard deviation `sigma` pixels.
///
/// Noise is drawn on a grid padded by the kernel radius so the blurred
/// field is stationary up to the borders, then scaled by the analytic
/// standard deviation of the blurred noise.
pub fn smooth_field(height: usize, width: usize, sigma: f64, rng: &mut Rng) -> Vec<f64> {
    if sigma <= 0.0 {
        return (0..height * width).map(|_| StandardNormal.sample(rng)).collect();
    }
    let radius = (3.0 * sigma).ceil() as usize;
    let kernel: Vec<f64> = {
        let raw: Vec<f64> = (0..=2 * radius)
            .map(|i| {
                let d = i as f64 - radius as f64;
                (-0.5 * d * d / (sigma * sigma)).exp()
            })
            .collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    };
    let k2: f64 = kernel.iter().map(|w| w * w).sum();
    // the separable blur scales the variance by k2 per axis
    let norm = 1.0 / k2;

    let (ph, pw) = (height + 2 * radius, width + 2 * radius);
    let noise: Vec<f64> = (0..ph * pw).map(|_| StandardNormal.sample(rng)).collect();

    // horizontal pass: rows of the padded grid, columns cropped to width
    let mut tmp = vec![0f64; ph * width];
    for y in 0..ph {
        let row = &noise[y * pw..(y + 1) * pw];
        for x in 0..width {
            tmp[y * width + x] = kernel.iter().zip(&row[x..x + 2 * radius + 1]).map(|(k, v)| k * v).sum();
        }
    }
    // vertical pass
    let mut out = vec![0f64; height * width];
    for y in 0..height {
        for (ky, k) in kernel.iter().enumerate() {
            let src = &tmp[(y + ky) * width..(y + ky + 1) * width];
            let dst = &mut out[y * width..(y + 1) * width];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += k * s;
            }
        }
    }
    out.iter_mut().for_each(|v| *v *= norm);
    out
}

/// 1D squared distance transform (lower envelope of parabolas).
fn dt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        if f[q] >= FAR * FAR {
            continue;
        }
        loop {
            let p = v[k];
            if f[p] >= FAR * FAR {
                // the seed parabola is a placeholder; replace it outright
                v[k] = q;
                z[k] = f64::NEG_INFINITY;
                z[k + 1] = f64::INFINITY;
                break;
            }
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] && k > 0 {
                k -= 1;
                continue;
            }
            if s <= z[k] {
                v[k] = q;
                z[k] = f64::NEG_INFINITY;
                z[k + 1] = f64::INFINITY;
                break;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    if f[v[0]] >= FAR * FAR {
        out.iter_mut().for_each(|o| *o = FAR * FAR);
        return;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Euclidean distance from every pixel to the nearest `true` pixel of
/// `mask` (0 on the mask, [`FAR`] when the mask is empty).
pub fn distance_to(mask: &[bool], height: usize, width: usize) -> Vec<f64> {
    let inf = FAR * FAR;
    let mut grid: Vec<f64> = mask.iter().map(|&m| if m { 0.0 } else { inf }).collect();
    let n = height.max(width);
    let (mut v, mut z) = (vec![0usize; n], vec![0f64; n + 1]);
    let (mut f, mut out) = (vec![0f64; n], vec![0f64; n]);
    for x in 0..width {
        for y in 0..height {
            f[y] = grid[y * width + x];
        }
        dt_1d(&f[..height], &mut out[..height], &mut v, &mut z);
        for y in 0..height {
            grid[y * width + x] = out[y];
        }
    }
    for y in 0..height {
        f[..width].copy_from_slice(&grid[y * width..(y + 1) * width]);
        dt_1d(&f[..width], &mut out[..width], &mut v, &mut z);
        grid[y * width..(y + 1) * width].copy_from_slice(&out[..width]);
    }
    grid.into_iter()
        .map(|d2| if d2 >= inf { FAR } else { d2.sqrt() })
        .collect()
}

/// Signed distance to the boundary of `mask`, negative inside.
///
/// The boundary sits half a pixel from the pixel centers on either side,
/// so inside pixels are `<= -0.5` and outside pixels `>= 0.5`.
pub fn signed_distance(mask: &[bool], height: usize, width: usize) -> Vec<f64> {
    let any_in = mask.iter().any(|&m| m);
    let any_out = mask.iter().any(|&m| !m);
    if !any_in {
        return vec![FAR; mask.len()];
    }
    if !any_out {
        return vec![-FAR; mask.len()];
    }
    let to_in = distance_to(mask, height, width);
    let outside: Vec<bool> = mask.iter().map(|&m| !m).collect();
    let to_out = distance_to(&outside, height, width);
    mask.iter()
        .zip(to_in.iter().zip(&to_out))
        .map(|(&m, (&di, &do_))| if m { -(do_ - 0.5) } else { di - 0.5 })
        .collect()
}

/// Signed distance field of every class of `labels`, indexed by class.
pub fn class_distances(labels: &LabelMap) -> Vec<Vec<f64>> {
    let (h, w) = labels.shape();
    (0..labels.num_classes())
        .map(|c| signed_distance(&labels.mask(c as u8), h, w))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn brute_distance(mask: &[bool], h: usize, w: usize) -> Vec<f64> {
        (0..h * w)
            .map(|i| {
                let (y, x) = ((i / w) as f64, (i % w) as f64);
                mask.iter()
                    .enumerate()
                    .filter(|(_, &m)| m)
                    .map(|(j, _)| {
                        let (yy, xx) = ((j / w) as f64, (j % w) as f64);
                        ((y - yy).powi(2) + (x - xx).powi(2)).sqrt()
                    })
                    .fold(FAR, f64::min)
            })
            .collect()
    }

    #[test]
    fn distance_matches_brute_force() {
        let mut g = rng::seeded(4);
        for trial in 0..30 {
            let (h, w) = (3 + trial % 7, 2 + trial % 9);
            let mask: Vec<bool> = (0..h * w).map(|_| rand::Rng::random_bool(&mut g, 0.15)).collect();
            let fast = distance_to(&mask, h, w);
            let slow = brute_distance(&mask, h, w);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-9, "trial {trial}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn signed_distance_convention() {
        let mask = [false, true, true, true, false];
        let sd = signed_distance(&mask, 1, 5);
        assert_eq!(sd, vec![0.5, -0.5, -1.5, -0.5, 0.5]);
        assert_eq!(signed_distance(&[false; 3], 1, 3), vec![FAR; 3]);
    }

    #[test]
    fn smooth_field_has_unit_variance_and_is_smooth() {
        let mut g = rng::seeded(1);
        let (mut s2, mut n, mut lag) = (0.0, 0.0, 0.0);
        for _ in 0..20 {
            let f = smooth_field(64, 64, 4.0, &mut g);
            for y in 0..64 {
                for x in 0..63 {
                    let v = f[y * 64 + x];
                    s2 += v * v;
                    lag += v * f[y * 64 + x + 1];
                    n += 1.0;
                }
            }
        }
        let var = s2 / n;
        assert!((var - 1.0).abs() < 0.15, "variance {var}");
        // lag-1 autocorrelation of a sigma=4 blur is exp(-1/(4*16)) ~ 0.98
        assert!(lag / s2 > 0.9);
    }

    #[test]
    fn smooth_field_is_seeded() {
        let a = smooth_field(16, 16, 3.0, &mut rng::seeded(9));
        let b = smooth_field(16, 16, 3.0, &mut rng::seeded(9));
        assert_eq!(a, b);
    }
}
