//! Bilinear resampling about the image centre.

use crate::error::{Error, Result};
use crate::lie::GroupElement;

/// Resamples a square `n × n` image as `out(p) = in(g⁻¹p)`, where pixel
/// `(row, col)` sits at `p = (col − c, row − c)`, `c = (n − 1)/2`, and `g`
/// rotates by `theta` and scales by `s`. Samples outside the image read 0.
pub fn resample(img: &[f64], n: usize, theta: f64, s: f64) -> Result<Vec<f64>> {
    if img.len() != n * n {
        return Err(Error::shape(format!("expected {n}×{n} pixels, got {}", img.len())));
    }
    if theta == 0.0 && s == 1.0 {
        return Ok(img.to_vec());
    }
    let inv = GroupElement::sim2([0.0, 0.0], theta, s)?.inverse();
    let c = (n as f64 - 1.0) / 2.0;
    let pixel = |r: isize, col: isize| -> f64 {
        if r < 0 || col < 0 || r >= n as isize || col >= n as isize {
            0.0
        } else {
            img[r as usize * n + col as usize]
        }
    };
    let mut out = vec![0.0; n * n];
    for row in 0..n {
        for col in 0..n {
            let q = inv.act_on_point([col as f64 - c, row as f64 - c]);
            let (fx, fy) = (q[0] + c, q[1] + c);
            let (x0, y0) = (fx.floor(), fy.floor());
            let (ax, ay) = (fx - x0, fy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            out[row * n + col] = (1.0 - ay) * ((1.0 - ax) * pixel(y0, x0) + ax * pixel(y0, x0 + 1))
                + ay * ((1.0 - ax) * pixel(y0 + 1, x0) + ax * pixel(y0 + 1, x0 + 1));
        }
    }
    Ok(out)
}

pub fn rotate(img: &[f64], n: usize, theta: f64) -> Result<Vec<f64>> {
    resample(img, n, theta, 1.0)
}

/// Shrinks (`s < 1`) or enlarges the content about the centre; the frame
/// stays `n × n` and uncovered pixels are 0.
pub fn scale(img: &[f64], n: usize, s: f64) -> Result<Vec<f64>> {
    if !(s > 0.0) {
        return Err(Error::arg(format!("scale factor must be positive, got {s}")));
    }
    resample(img, n, 0.0, s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn blob(n: usize) -> Vec<f64> {
        let c = (n as f64 - 1.0) / 2.0;
        (0..n * n)
            .map(|i| {
                let (r, col) = ((i / n) as f64 - c, (i % n) as f64 - c);
                (-(r * r + (col - 2.0).powi(2)) / 18.0).exp()
            })
            .collect()
    }

    #[test]
    fn identity_transforms_are_bit_exact() {
        let img = blob(28);
        assert_eq!(rotate(&img, 28, 0.0).unwrap(), img);
        assert_eq!(scale(&img, 28, 1.0).unwrap(), img);
    }

    #[test]
    fn quarter_turn_is_an_index_permutation() {
        let n = 7;
        let img: Vec<f64> = (0..n * n).map(|i| i as f64).collect();
        let r = rotate(&img, n, FRAC_PI_2).unwrap();
        for row in 0..n {
            for col in 0..n {
                assert!((r[row * n + col] - img[(n - 1 - col) * n + row]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn two_half_turns_stay_close() {
        let img = blob(28);
        let once = rotate(&img, 28, PI).unwrap();
        let twice = rotate(&once, 28, PI).unwrap();
        let dev = img.iter().zip(&twice).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(dev < 0.1, "{dev}");
    }

    #[test]
    fn shrinking_keeps_pixel_range_and_pads_with_zero() {
        let img = vec![1.0; 28 * 28];
        let s = scale(&img, 28, 0.3).unwrap();
        assert!(s.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(s[0], 0.0);
        assert_eq!(s[14 * 28 + 14], 1.0);
    }
}
