//! Depth-to-space by the index formula, one element at a time.

/// `[n, h, w, s*s*c]` row-major to `[n, s*h, s*w, c]`.
pub fn depth_to_space(x: &[f32], n: usize, h: usize, w: usize, cin: usize, s: usize) -> Vec<f32> {
    let c = cin / (s * s);
    let (oh, ow) = (h * s, w * s);
    let mut out = vec![0.0; x.len()];
    for b in 0..n {
        for y in 0..oh {
            for xx in 0..ow {
                for k in 0..c {
                    let (i, dy) = (y / s, y % s);
                    let (j, dx) = (xx / s, xx % s);
                    let src = ((b * h + i) * w + j) * cin + (dy * s + dx) * c + k;
                    out[((b * oh + y) * ow + xx) * c + k] = x[src];
                }
            }
        }
    }
    out
}
