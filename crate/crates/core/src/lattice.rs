//! Lattice-point enumeration and box indexing on `Z^n`.

/// Squared Euclidean norm of an integer vector.
#[inline]
pub fn norm2(k: &[i64]) -> i64 {
    k.iter().map(|c| c * c).sum()
}

/// All nonzero `k ∈ Z^n` with `|k| ≤ radius`, flattened with stride `n`.
///
/// Ordered by ascending `|k|`, ties broken lexicographically, so every
/// consumer that sums over this list does so in the same order.
pub fn ball_points(n: usize, radius: u64) -> Vec<i64> {
    let r = radius as i64;
    let r2 = r * r;
    let mut pts: Vec<Vec<i64>> = Vec::new();
    let mut k = vec![-r; n];
    loop {
        let q = norm2(&k);
        if q > 0 && q <= r2 {
            pts.push(k.clone());
        }
        // odometer increment
        let mut axis = n;
        loop {
            if axis == 0 {
                return flatten_sorted(pts, n);
            }
            axis -= 1;
            if k[axis] < r {
                k[axis] += 1;
                break;
            }
            k[axis] = -r;
        }
    }
}

fn flatten_sorted(mut pts: Vec<Vec<i64>>, n: usize) -> Vec<i64> {
    pts.sort_by(|a, b| norm2(a).cmp(&norm2(b)).then_with(|| a.cmp(b)));
    let mut flat = Vec::with_capacity(pts.len() * n);
    for p in pts {
        flat.extend_from_slice(&p);
    }
    flat
}

/// Visits `|k|²` values of nonzero lattice points with `|k| ≤ radius`
/// in ascending `|k|` order, grouped by shell, as `(norm², multiplicity)`.
///
/// Summing a radial function shell by shell matches the ordering of
/// [`ball_points`] up to the order of terms inside one shell, which are all
/// equal. Memory stays O(radius) in one dimension.
pub fn radial_shells(n: usize, radius: u64, mut visit: impl FnMut(i64, u64)) {
    match n {
        1 => {
            for r in 1..=radius as i64 {
                visit(r * r, 2);
            }
        }
        _ => {
            let r = radius as i64;
            let r2 = r * r;
            let mut counts = vec![0u64; (r2 + 1) as usize];
            count_norms(n, r, r2, &mut counts);
            for (q, &c) in counts.iter().enumerate().skip(1) {
                if c > 0 {
                    visit(q as i64, c);
                }
            }
        }
    }
}

fn count_norms(n: usize, r: i64, r2: i64, counts: &mut [u64]) {
    // counts[q] = #{k ∈ Z^n : |k|² = q} for q ≤ r², by pruned enumeration
    fn rec(axes_left: usize, partial: i64, r: i64, r2: i64, counts: &mut [u64]) {
        if axes_left == 0 {
            counts[partial as usize] += 1;
            return;
        }
        let room = r2 - partial;
        let lim = isqrt(room).min(r);
        for x in -lim..=lim {
            rec(axes_left - 1, partial + x * x, r, r2, counts);
        }
    }
    rec(n, 0, r, r2, counts);
}

fn isqrt(v: i64) -> i64 {
    let mut s = (v as f64).sqrt() as i64;
    while s * s > v {
        s -= 1;
    }
    while (s + 1) * (s + 1) <= v {
        s += 1;
    }
    s
}

/// Row-major cube `[-M, M]^n` of lattice sites (last axis fastest).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoxShape {
    pub n: usize,
    pub half_width: usize,
}

impl BoxShape {
    pub fn new(n: usize, half_width: usize) -> Self {
        Self { n, half_width }
    }

    #[inline]
    pub fn side(&self) -> usize {
        2 * self.half_width + 1
    }

    pub fn len(&self) -> usize {
        self.side().pow(self.n as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Flat index of `k`, or `None` outside the box.
    #[inline]
    pub fn index(&self, k: &[i64]) -> Option<usize> {
        let m = self.half_width as i64;
        let side = self.side();
        let mut idx = 0usize;
        for &c in k {
            if c < -m || c > m {
                return None;
            }
            idx = idx * side + (c + m) as usize;
        }
        Some(idx)
    }

    /// Writes the coordinates of flat index `idx` into `out`.
    #[inline]
    pub fn coords_into(&self, mut idx: usize, out: &mut [i64]) {
        let side = self.side();
        let m = self.half_width as i64;
        for axis in (0..self.n).rev() {
            out[axis] = (idx % side) as i64 - m;
            idx /= side;
        }
    }

    pub fn coords(&self, idx: usize) -> Vec<i64> {
        let mut out = vec![0; self.n];
        self.coords_into(idx, &mut out);
        out
    }
}
