//! Sub-pixel rearrangement between channels and space.
//!
//! Input channel `(dy * s + dx) * c + k` of pixel `(i, j)` becomes channel `k`
//! of output pixel `(s * i + dy, s * j + dx)`.

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// `[n, h, w, s²·c] -> [n, s·h, s·w, c]`.
pub fn pixel_shuffle<T: Real>(x: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    let [n, h, w, cin] = x.shape();
    if s == 0 || cin % (s * s) != 0 {
        return Err(Error::invalid(format!(
            "{cin} channels are not divisible by the squared scale {}",
            s * s
        )));
    }
    let c = cin / (s * s);
    let (oh, ow) = (h * s, w * s);
    let mut out = Tensor::zeros([n, oh, ow, c]);
    let src = x.data();
    let dst = out.data_mut();
    for b in 0..n {
        for i in 0..h {
            for j in 0..w {
                let base = ((b * h + i) * w + j) * cin;
                for dy in 0..s {
                    // s·c contiguous input values fill s adjacent output pixels of one row
                    let from = &src[base + dy * s * c..][..s * c];
                    let to = ((b * oh + s * i + dy) * ow + s * j) * c;
                    dst[to..to + s * c].copy_from_slice(from);
                }
            }
        }
    }
    Ok(out)
}

/// `[n, s·h, s·w, c] -> [n, h, w, s²·c]`, the exact inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle<T: Real>(x: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    let [n, oh, ow, c] = x.shape();
    if s == 0 || oh % s != 0 || ow % s != 0 {
        return Err(Error::invalid(format!(
            "{oh}x{ow} spatial dims are not divisible by scale {s}"
        )));
    }
    let (h, w) = (oh / s, ow / s);
    let cin = c * s * s;
    let mut out = Tensor::zeros([n, h, w, cin]);
    let src = x.data();
    let dst = out.data_mut();
    for b in 0..n {
        for i in 0..h {
            for j in 0..w {
                let base = ((b * h + i) * w + j) * cin;
                for dy in 0..s {
                    let from = ((b * oh + s * i + dy) * ow + s * j) * c;
                    dst[base + dy * s * c..][..s * c].copy_from_slice(&src[from..from + s * c]);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn four_channels_to_two_by_two() {
        let x = Tensor::from_vec([1, 1, 1, 4], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let y = pixel_shuffle(&x, 2).unwrap();
        assert_eq!(y.shape(), [1, 2, 2, 1]);
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn unit_scale_is_identity() {
        let x = Tensor::from_vec([1, 2, 3, 2], (0..12).map(|v| v as f32).collect()).unwrap();
        assert_eq!(pixel_shuffle(&x, 1).unwrap(), x);
    }

    #[test]
    fn indivisible_channels_rejected() {
        let x = Tensor::<f32>::zeros([1, 2, 2, 6]);
        assert!(pixel_shuffle(&x, 2).is_err());
        assert!(pixel_unshuffle(&Tensor::<f32>::zeros([1, 3, 4, 1]), 2).is_err());
    }

    #[test]
    fn layout_matches_index_formula() {
        let (s, c, h, w) = (3, 2, 2, 3);
        let x = Tensor::from_vec([1, h, w, s * s * c], (0..h * w * s * s * c).map(|v| v as f64).collect()).unwrap();
        let y = pixel_shuffle(&x, s).unwrap();
        for i in 0..h {
            for j in 0..w {
                for dy in 0..s {
                    for dx in 0..s {
                        for k in 0..c {
                            assert_eq!(y.at(0, s * i + dy, s * j + dx, k), x.at(0, i, j, (dy * s + dx) * c + k));
                        }
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn round_trip(n in 1usize..3, h in 1usize..6, w in 1usize..6, c in 1usize..4, s in 1usize..4, seed in any::<u32>()) {
            let len = n * h * w * c * s * s;
            let x = Tensor::from_vec([n, h, w, c * s * s], (0..len).map(|i| (i as u32 ^ seed) as f32).collect()).unwrap();
            let y = pixel_shuffle(&x, s).unwrap();
            prop_assert_eq!(y.shape(), [n, h * s, w * s, c]);
            prop_assert_eq!(pixel_unshuffle(&y, s).unwrap(), x);
        }
    }
}
