use super::{DatasetError, Result};

/// Rotates a square row-major image counter-clockwise by `angle` degrees.
///
/// Only multiples of 90 are accepted, so the result is an exact permutation
/// of pixels: for a 90 degree turn `out[r][c] = in[c][n - 1 - r]`.
pub fn rotate_image(x: &[f64], shape: &[usize], angle: u32) -> Result<Vec<f64>> {
    if angle % 90 != 0 || angle >= 360 {
        return Err(DatasetError::BadAngle(angle));
    }
    let n = match *shape {
        [h, w] if h == w && h * w == x.len() => h,
        [1, h, w] if h == w && h * w == x.len() => h,
        _ => return Err(DatasetError::NotSquare(shape.to_vec())),
    };
    let mut out = x.to_vec();
    for _ in 0..angle / 90 {
        let src = out.clone();
        for r in 0..n {
            for c in 0..n {
                out[r * n + c] = src[c * n + (n - 1 - r)];
            }
        }
    }
    Ok(out)
}
