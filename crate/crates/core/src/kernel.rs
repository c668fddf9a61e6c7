//! Heavy-tailed jump kernel `K(k) = |k|^{-(n+α)}` on `Z^n`.
//!
//! Values returned by [`kernel_value`] are unnormalized; jump probabilities
//! are `K(k) / Z` where `Z` sums the retained jumps `0 < |k| ≤ R`. The
//! discarded tail beyond `R` is never silently renormalized away: every
//! [`KernelSpec`] carries a rigorous upper bound on it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{ball_points, norm2, radial_shells};
use crate::numerics::{sphere_area, CompensatedSum};

/// Parameters of a truncated homogeneous jump kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub n: usize,
    pub alpha: f64,
    pub trunc_radius: u64,
    /// `Z = Σ_{0<|k|≤R} |k|^{-(n+α)}`.
    pub normalization: f64,
    /// Upper bound on `Σ_{|k|>R} |k|^{-(n+α)}`.
    pub truncated_mass_bound: f64,
}

/// Whether the β-moment `Σ |k|^β K(k)` of the untruncated kernel is finite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MomentClass {
    Convergent,
    Divergent,
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha.is_finite() && alpha > 0.0 && alpha < 2.0 {
        Ok(())
    } else {
        Err(Error::InvalidAlpha(alpha))
    }
}

pub(crate) fn check_dimension(n: usize) -> Result<()> {
    if (1..=3).contains(&n) {
        Ok(())
    } else {
        Err(Error::UnsupportedDimension(n))
    }
}

/// Unnormalized `|k|^{-(n+α)}`, with `K(0) = 0`.
pub fn kernel_value(k: &[i64], spec: &KernelSpec) -> f64 {
    radial_value(norm2(k), spec.n, spec.alpha)
}

#[inline]
fn radial_value(norm_sq: i64, n: usize, alpha: f64) -> f64 {
    if norm_sq == 0 {
        0.0
    } else {
        (norm_sq as f64).powf(-0.5 * (n as f64 + alpha))
    }
}

/// Builds a truncated kernel spec and its tail bound.
pub fn build_spec(n: usize, alpha: f64, trunc_radius: u64) -> Result<KernelSpec> {
    check_dimension(n)?;
    check_alpha(alpha)?;
    if trunc_radius == 0 {
        return Err(Error::param("trunc_radius", "must be at least 1"));
    }
    let mut z = CompensatedSum::new();
    radial_shells(n, trunc_radius, |q, count| {
        z.add(count as f64 * radial_value(q, n, alpha));
    });
    Ok(KernelSpec {
        n,
        alpha,
        trunc_radius,
        normalization: z.value(),
        truncated_mass_bound: tail_bound(n, alpha, trunc_radius as f64),
    })
}

/// Integral-comparison bound on `Σ_{|k|>R} |k|^{-(n+α)}`.
///
/// Each lattice point `k` owns the unit cube `Q_k` centred on it; the cubes
/// are disjoint and every `y ∈ Q_k` satisfies `| |y| - |k| | ≤ √n/2`. With
/// `s = n + α` and `|k| > R`:
///
/// ```text
/// |k|^{-s} ≤ (1 + √n/(2R))^s ∫_{Q_k} |y|^{-s} dy
/// ```
///
/// and the union of those cubes lies in `|y| > R - √n/2`. Summing,
///
/// ```text
/// tail ≤ (1 + √n/(2R))^s |S^{n-1}| (R - √n/2)^{-α} / α  =  c_n(R) R^{-α} / α,
/// c_n(R) = |S^{n-1}| (1 + √n/(2R))^{n+α} (1 - √n/(2R))^{-α}.
/// ```
///
/// This constant is our own; it needs `R > √n/2`, which `R ≥ 1, n ≤ 3`
/// guarantees.
pub fn tail_bound(n: usize, alpha: f64, r: f64) -> f64 {
    let half_diag = (n as f64).sqrt() / 2.0;
    let s = n as f64 + alpha;
    let c_n = sphere_area(n) * (1.0 + half_diag / r).powf(s) * (1.0 - half_diag / r).powf(-alpha);
    c_n * r.powf(-alpha) / alpha
}

/// Partial β-moment `Σ_{0<|k|≤radius} |k|^β K(k) / Z`.
pub fn beta_moment_partial(spec: &KernelSpec, beta: f64, radius: u64) -> f64 {
    let exponent = 0.5 * (beta - spec.n as f64 - spec.alpha);
    let mut acc = CompensatedSum::new();
    radial_shells(spec.n, radius, |q, count| {
        acc.add(count as f64 * (q as f64).powf(exponent));
    });
    acc.value() / spec.normalization
}

/// Analytic moment criterion: finite iff `β < α`.
pub fn classify_moment(spec: &KernelSpec, beta: f64) -> MomentClass {
    if beta < spec.alpha {
        MomentClass::Convergent
    } else {
        MomentClass::Divergent
    }
}

/// Inverse-transform table over all retained jumps.
#[derive(Debug, Clone)]
pub struct JumpSamplerTable {
    spec: KernelSpec,
    jumps: Vec<i64>,
    probabilities: Vec<f64>,
    cumulative: Vec<f64>,
}

impl JumpSamplerTable {
    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    pub fn jump(&self, i: usize) -> &[i64] {
        let n = self.spec.n;
        &self.jumps[i * n..(i + 1) * n]
    }

    pub fn probability(&self, i: usize) -> f64 {
        self.probabilities[i]
    }

    pub fn cumulative(&self, i: usize) -> f64 {
        self.cumulative[i]
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn cumulatives(&self) -> &[f64] {
        &self.cumulative
    }

    /// Flattened jump vectors, stride `n`.
    pub fn jumps_flat(&self) -> &[i64] {
        &self.jumps
    }

    /// Index of the entry selected by a uniform draw `u ∈ [0, 1)`.
    #[inline]
    pub fn locate(&self, u: f64) -> usize {
        let i = self.cumulative.partition_point(|&c| c <= u);
        i.min(self.cumulative.len() - 1)
    }
}

/// Builds the sampling table in ascending `|k|` order, lexicographic ties.
pub fn build_sampler(spec: &KernelSpec) -> JumpSamplerTable {
    let jumps = ball_points(spec.n, spec.trunc_radius);
    let n = spec.n;
    let probabilities: Vec<f64> = jumps
        .chunks(n)
        .map(|k| kernel_value(k, spec) / spec.normalization)
        .collect();
    let mut cumulative = Vec::with_capacity(probabilities.len());
    let mut running = 0.0;
    for p in &probabilities {
        running += p;
        cumulative.push(running);
    }
    JumpSamplerTable {
        spec: spec.clone(),
        jumps,
        probabilities,
        cumulative,
    }
}
