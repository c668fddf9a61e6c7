//! Multi-dimensional complex FFT on row-major arrays, built from rustfft
//! one-dimensional plans applied axis by axis.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// In-place FFT of `data` laid out row-major with the given `shape`.
///
/// The inverse transform is scaled by `1 / data.len()` so that
/// `inverse(forward(x)) == x` up to round-off.
pub fn fft_nd(data: &mut [Complex64], shape: &[usize], dir: Direction) {
    let total: usize = shape.iter().product();
    assert_eq!(total, data.len(), "shape does not match buffer");
    let mut planner = FftPlanner::<f64>::new();
    for (axis, &len) in shape.iter().enumerate() {
        if len <= 1 {
            continue;
        }
        let plan = match dir {
            Direction::Forward => planner.plan_fft_forward(len),
            Direction::Inverse => planner.plan_fft_inverse(len),
        };
        let inner: usize = shape[axis + 1..].iter().product();
        if inner == 1 {
            par::for_each_chunk_mut(data, len, |_, line| plan.process(line));
            continue;
        }
        // strided axis: gather each line, transform, scatter back
        let outer: usize = shape[..axis].iter().product();
        let lines = outer * inner;
        let src: &[Complex64] = data;
        let transformed = par::map_indexed(lines, |l| {
            let (o, i) = (l / inner, l % inner);
            let base = o * len * inner + i;
            let mut line: Vec<Complex64> = (0..len).map(|j| src[base + j * inner]).collect();
            plan.process(&mut line);
            line
        });
        for (l, line) in transformed.into_iter().enumerate() {
            let (o, i) = (l / inner, l % inner);
            let base = o * len * inner + i;
            for (j, v) in line.into_iter().enumerate() {
                data[base + j * inner] = v;
            }
        }
    }
    if dir == Direction::Inverse {
        let scale = 1.0 / total as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }
}

/// Signed frequency index of FFT bin `j` for a length-`p` axis:
/// `0, 1, ..., ceil(p/2)-1, -floor(p/2), ..., -1`.
///
/// For even `p` the Nyquist bin `p/2` maps to `-p/2`; only its magnitude is
/// ever used by the even multipliers in this crate.
#[inline]
pub fn signed_frequency(j: usize, p: usize) -> i64 {
    if j < p.div_ceil(2) {
        j as i64
    } else {
        j as i64 - p as i64
    }
}
