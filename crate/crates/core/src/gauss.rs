//! Normalized Gaussian filtering with symmetric border reflection.
//!
//! Kernels are truncated at `ceil(3 sigma)` and may be far wider than the
//! signal (retinex surrounds of 250 px on 64 px crops). Reflection is
//! periodic with period `2n`, so each output sample is a weighted sum over
//! the in-range inputs; those weights are folded once per axis and reused
//! for every row or column.

/// Kernel half-size for a standard deviation: `ceil(3 sigma)`.
pub fn half_size(sigma: f64) -> usize {
    (3.0 * sigma).ceil().max(0.0) as usize
}

/// Maps any integer index onto `[0, n)` by half-sample symmetric reflection
/// (`... c b a | a b c ... | c b a ...`).
#[inline]
pub fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    let m = i.rem_euclid(2 * n);
    (if m < n { m } else { 2 * n - 1 - m }) as usize
}

/// Normalized 1-D kernel of length `2h + 1`; `sigma == 0` gives a unit impulse.
pub fn kernel(sigma: f64, h: usize) -> Vec<f64> {
    if sigma <= 0.0 {
        let mut k = vec![0.0; 2 * h + 1];
        k[h] = 1.0;
        return k;
    }
    let denom = 2.0 * sigma * sigma;
    let mut k: Vec<f64> = (0..=2 * h)
        .map(|i| {
            let d = i as f64 - h as f64;
            (-d * d / denom).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= sum);
    k
}

/// Per-output folded weights for one axis of length `n`.
#[derive(Clone, Debug)]
pub struct FoldedKernel {
    n: usize,
    /// For output `i`: first contributing input and weights from there on.
    rows: Vec<(usize, Vec<f64>)>,
}

impl FoldedKernel {
    pub fn new(sigma: f64, h: usize, n: usize) -> Self {
        let k = kernel(sigma, h);
        let rows = (0..n)
            .map(|i| {
                let mut dense = vec![0.0; n];
                for (t, &w) in k.iter().enumerate() {
                    let src = reflect(i as i64 + t as i64 - h as i64, n);
                    dense[src] += w;
                }
                let first = dense.iter().position(|&w| w != 0.0).unwrap_or(0);
                let last = dense.iter().rposition(|&w| w != 0.0).unwrap_or(0);
                (first, dense[first..=last].to_vec())
            })
            .collect();
        FoldedKernel { n, rows }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Running totals of the folded weights: entry `i * (n + 1) + j` is the
    /// weight output `i` gives to inputs `0..j`.
    pub fn cumulative(&self) -> Vec<f64> {
        let n = self.n;
        let mut table = vec![0.0; n * (n + 1)];
        for (i, (first, weights)) in self.rows.iter().enumerate() {
            let row = &mut table[i * (n + 1)..(i + 1) * (n + 1)];
            let mut acc = 0.0;
            for j in 0..n {
                if j >= *first && j < first + weights.len() {
                    acc += weights[j - first];
                }
                row[j + 1] = acc;
            }
        }
        table
    }

    #[inline]
    fn apply_row(&self, src: &[f64], dst: &mut [f64]) {
        for ((first, weights), d) in self.rows.iter().zip(dst) {
            *d = dot(weights, &src[*first..*first + weights.len()]);
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Separable Gaussian blur of a `width x height` plane.
pub fn blur_plane(plane: &[f64], width: usize, height: usize, sigma: f64, h: usize) -> Vec<f64> {
    assert_eq!(plane.len(), width * height);
    if plane.is_empty() {
        return Vec::new();
    }
    let horizontal = FoldedKernel::new(sigma, h, width);
    let vertical = FoldedKernel::new(sigma, h, height);
    blur_plane_with(plane, width, height, &horizontal, &vertical)
}

pub fn blur_plane_with(
    plane: &[f64],
    width: usize,
    height: usize,
    horizontal: &FoldedKernel,
    vertical: &FoldedKernel,
) -> Vec<f64> {
    debug_assert_eq!(horizontal.len(), width);
    debug_assert_eq!(vertical.len(), height);
    let mut tmp = vec![0.0; plane.len()];
    for (src, dst) in plane.chunks_exact(width).zip(tmp.chunks_exact_mut(width)) {
        horizontal.apply_row(src, dst);
    }
    // Vertical pass as weighted sums of whole rows.
    let mut out = vec![0.0; plane.len()];
    for ((first, weights), dst) in vertical.rows.iter().zip(out.chunks_exact_mut(width)) {
        for (t, &w) in weights.iter().enumerate() {
            let src = &tmp[(first + t) * width..(first + t + 1) * width];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += w * s;
            }
        }
    }
    out
}

/// Blur of a binary plane. Columns are filtered exactly through run sums of
/// `vertical_cumulative` (from [`FoldedKernel::cumulative`]), rows densely.
pub fn blur_binary_with(
    bits: &[bool],
    width: usize,
    height: usize,
    horizontal: &FoldedKernel,
    vertical_cumulative: &[f64],
) -> Vec<f64> {
    debug_assert_eq!(bits.len(), width * height);
    debug_assert_eq!(vertical_cumulative.len(), height * (height + 1));
    let mut tmp = vec![0.0; bits.len()];
    for x in 0..width {
        let mut y = 0;
        while y < height {
            if !bits[y * width + x] {
                y += 1;
                continue;
            }
            let start = y;
            while y < height && bits[y * width + x] {
                y += 1;
            }
            for (i, row) in vertical_cumulative.chunks_exact(height + 1).enumerate() {
                tmp[i * width + x] += row[y] - row[start];
            }
        }
    }
    let mut out = vec![0.0; bits.len()];
    for (src, dst) in tmp.chunks_exact(width).zip(out.chunks_exact_mut(width)) {
        horizontal.apply_row(src, dst);
    }
    out
}
