//! The fractional Laplacian `(-Δ)^{α/2}` on the periodic torus `[0, L)^n`.
//!
//! Three discretizations are provided:
//!
//! * [`fraclap_spectral`]: the Fourier multiplier `|ξ|^α`.
//! * [`fraclap_quadrature`]: the second-difference singular integral
//!   `½ ∫ (2u(x) - u(x+y) - u(x-y)) |y|^{-(n+α)} dy` on grid-shift nodes.
//! * [`fraclap_pv_gradient_form`]: the principal value
//!   `-∫ (u(x+y) - u(x) - 1_{|y|<r} ∇u(x)·y) |y|^{-(n+α)} dy`.
//!
//! The two integral forms are **unnormalized**: they approximate
//! `A(n, α) · (-Δ)^{α/2} u` with `A(n, α) = ∫ (1 - cos ζ₁) |ζ|^{-(n+α)} dζ`
//! from [`crate::symbol::a_constant`]. Divide by that constant before
//! comparing with the spectral operator.
//!
//! Frequency mapping: along an axis with `P` points, FFT bin `j` carries the
//! signed index `m` of [`crate::fft::signed_frequency`] and the physical
//! frequency `ξ = 2π m / L`. At even `P` the Nyquist bin has `|ξ| = πP/L`.

use std::io::Write;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{fft_nd, signed_frequency, Direction};
use crate::kernel::{check_alpha, check_dimension};
use crate::numerics::{ball_volume, power_tail_integral, stable_sum, CompensatedSum};
use crate::par;

/// Samples of a periodic field on the uniform grid `x_j = j L / P`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    n: usize,
    period: f64,
    points_per_axis: usize,
    values: Vec<f64>,
}

/// Header describing a binary grid dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub schema_version: u32,
    pub n: usize,
    pub period: f64,
    pub points_per_axis: usize,
    pub dtype: String,
}

impl GridFunction {
    pub fn new(n: usize, period: f64, points_per_axis: usize, values: Vec<f64>) -> Result<Self> {
        check_dimension(n)?;
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::param(
                "period",
                format!("must be positive, got {period}"),
            ));
        }
        if points_per_axis < 2 {
            return Err(Error::param("points_per_axis", "must be at least 2"));
        }
        let expected = points_per_axis.pow(n as u32);
        if values.len() != expected {
            return Err(Error::param(
                "values",
                format!("expected {expected} samples, got {}", values.len()),
            ));
        }
        check_finite(&values)?;
        Ok(Self {
            n,
            period,
            points_per_axis,
            values,
        })
    }

    /// Samples `f` at every grid point.
    pub fn from_fn(
        n: usize,
        period: f64,
        points_per_axis: usize,
        f: impl Fn(&[f64]) -> f64,
    ) -> Result<Self> {
        check_dimension(n)?;
        let len = points_per_axis.pow(n as u32);
        let spacing = period / points_per_axis as f64;
        let mut x = vec![0.0; n];
        let mut values = Vec::with_capacity(len);
        for idx in 0..len {
            let mut rem = idx;
            for axis in (0..n).rev() {
                x[axis] = (rem % points_per_axis) as f64 * spacing;
                rem /= points_per_axis;
            }
            values.push(f(&x));
        }
        Self::new(n, period, points_per_axis, values)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn points_per_axis(&self) -> usize {
        self.points_per_axis
    }

    pub fn spacing(&self) -> f64 {
        self.period / self.points_per_axis as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn shape(&self) -> Vec<usize> {
        vec![self.points_per_axis; self.n]
    }

    /// Multi-index of flat index `idx`.
    pub fn multi_index(&self, idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.n];
        let mut rem = idx;
        for axis in (0..self.n).rev() {
            out[axis] = rem % self.points_per_axis;
            rem /= self.points_per_axis;
        }
        out
    }

    /// Physical coordinates of flat index `idx`.
    pub fn point(&self, idx: usize) -> Vec<f64> {
        let h = self.spacing();
        self.multi_index(idx)
            .into_iter()
            .map(|j| j as f64 * h)
            .collect()
    }

    /// Flat index of the grid point at physical position `x` (any period image).
    pub fn locate(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                actual: x.len(),
            });
        }
        let h = self.spacing();
        let p = self.points_per_axis as i64;
        let mut idx = 0usize;
        for &c in x {
            let s = c / h;
            let r = s.round();
            if !c.is_finite() || (s - r).abs() > 1e-9 * s.abs().max(1.0) {
                return Err(Error::OffGrid(format!("{x:?}")));
            }
            idx = idx * self.points_per_axis + (r as i64).rem_euclid(p) as usize;
        }
        Ok(idx)
    }

    pub fn mean(&self) -> f64 {
        stable_sum(&self.values) / self.values.len() as f64
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `Σ u² · Δ^n`.
    pub fn l2_norm_sq(&self) -> f64 {
        let cell = self.spacing().powi(self.n as i32);
        self.values
            .iter()
            .map(|v| v * v)
            .collect::<CompensatedSum>()
            .value()
            * cell
    }

    /// `a·self + b·other` on the same grid.
    pub fn axpby(&self, a: f64, other: &GridFunction, b: f64) -> Result<GridFunction> {
        self.same_grid(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        GridFunction::new(self.n, self.period, self.points_per_axis, values)
    }

    fn same_grid(&self, other: &GridFunction) -> Result<()> {
        if self.n != other.n
            || self.points_per_axis != other.points_per_axis
            || self.period != other.period
        {
            return Err(Error::param(
                "grid",
                "grid functions live on different grids",
            ));
        }
        Ok(())
    }

    /// CSV rows `x1,...,xn,value`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header: Vec<String> = (1..=self.n).map(|i| format!("x{i}")).collect();
        writeln!(w, "{},value", header.join(","))?;
        for (idx, v) in self.values.iter().enumerate() {
            for c in self.point(idx) {
                write!(w, "{c},")?;
            }
            writeln!(w, "{v}")?;
        }
        Ok(())
    }

    pub fn header(&self) -> GridHeader {
        GridHeader {
            schema_version: crate::harness::SCHEMA_VERSION,
            n: self.n,
            period: self.period,
            points_per_axis: self.points_per_axis,
            dtype: "f64le".to_string(),
        }
    }

    /// Samples as little-endian float64, row-major.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn from_le_bytes(header: &GridHeader, bytes: &[u8]) -> Result<Self> {
        if header.dtype != "f64le" {
            return Err(Error::Malformed(format!(
                "unsupported dtype {}",
                header.dtype
            )));
        }
        if !bytes.len().is_multiple_of(8) {
            return Err(Error::Malformed(
                "byte length is not a multiple of 8".into(),
            ));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of eight")))
            .collect();
        Self::new(header.n, header.period, header.points_per_axis, values)
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite(i)),
        None => Ok(()),
    }
}

/// The symbol `|ξ|^α` tabulated on the FFT frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralMultiplier {
    n: usize,
    period: f64,
    points_per_axis: usize,
    multiplier: Vec<f64>,
}

impl SpectralMultiplier {
    pub fn new(n: usize, period: f64, points_per_axis: usize, alpha: f64) -> Self {
        let multiplier = frequency_table(n, period, points_per_axis, |xi| {
            let r = norm(xi);
            if r == 0.0 {
                0.0
            } else {
                r.powf(alpha)
            }
        });
        Self {
            n,
            period,
            points_per_axis,
            multiplier,
        }
    }

    /// Physical frequency `ξ = 2π m / L` of FFT bin `idx`.
    pub fn frequency(&self, idx: usize) -> Vec<f64> {
        frequency_of(self.n, self.period, self.points_per_axis, idx)
    }

    /// Integer multi-index `m` of FFT bin `idx`.
    pub fn mode(&self, idx: usize) -> Vec<i64> {
        let mut rem = idx;
        let mut m = vec![0; self.n];
        for axis in (0..self.n).rev() {
            m[axis] = signed_frequency(rem % self.points_per_axis, self.points_per_axis);
            rem /= self.points_per_axis;
        }
        m
    }

    pub fn values(&self) -> &[f64] {
        &self.multiplier
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn frequency_of(n: usize, period: f64, p: usize, idx: usize) -> Vec<f64> {
    let base = 2.0 * std::f64::consts::PI / period;
    let mut rem = idx;
    let mut xi = vec![0.0; n];
    for axis in (0..n).rev() {
        xi[axis] = base * signed_frequency(rem % p, p) as f64;
        rem /= p;
    }
    xi
}

fn frequency_table(n: usize, period: f64, p: usize, f: impl Fn(&[f64]) -> f64 + Sync) -> Vec<f64> {
    par::map_indexed(p.pow(n as u32), |idx| f(&frequency_of(n, period, p, idx)))
}

/// `F^{-1}(m(ξ) F u)` for a real even multiplier table.
fn apply_multiplier(u: &GridFunction, multiplier: &[f64]) -> GridFunction {
    let mut buf: Vec<Complex64> = u.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let shape = u.shape();
    fft_nd(&mut buf, &shape, Direction::Forward);
    for (b, m) in buf.iter_mut().zip(multiplier) {
        *b *= *m;
    }
    fft_nd(&mut buf, &shape, Direction::Inverse);
    let scale = buf
        .iter()
        .fold(0.0f64, |m, c| m.max(c.re.abs()))
        .max(f64::MIN_POSITIVE);
    let residue = buf.iter().fold(0.0f64, |m, c| m.max(c.im.abs()));
    debug_assert!(
        residue <= 1e-10 * scale.max(1.0),
        "imaginary residue {residue:e}"
    );
    GridFunction {
        n: u.n,
        period: u.period,
        points_per_axis: u.points_per_axis,
        values: buf.into_iter().map(|c| c.re).collect(),
    }
}

/// Spectral fractional Laplacian `F^{-1}(|ξ|^α F u)`.
pub fn fraclap_spectral(u: &GridFunction, alpha: f64) -> Result<GridFunction> {
    check_alpha(alpha)?;
    check_finite(&u.values)?;
    let mult = SpectralMultiplier::new(u.n, u.period, u.points_per_axis, alpha);
    Ok(apply_multiplier(u, &mult.multiplier))
}

/// Exact fractional heat semigroup: Fourier coefficients times `exp(-|ξ|^α t)`.
pub fn heat_evolve_spectral(u0: &GridFunction, alpha: f64, t: f64) -> Result<GridFunction> {
    check_alpha(alpha)?;
    if t < 0.0 || t.is_nan() {
        return Err(Error::NegativeTime(t));
    }
    check_finite(&u0.values)?;
    if t == 0.0 {
        return Ok(u0.clone());
    }
    let mult = frequency_table(u0.n, u0.period, u0.points_per_axis, |xi| {
        (-norm(xi).powf(alpha) * t).exp()
    });
    Ok(apply_multiplier(u0, &mult))
}

/// Spectral gradient `F^{-1}(iξ F u)`, one field per axis; Nyquist bins are
/// zeroed so the result stays real.
pub fn spectral_gradient(u: &GridFunction) -> Vec<GridFunction> {
    let shape = u.shape();
    let p = u.points_per_axis;
    let mut spectrum: Vec<Complex64> = u.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_nd(&mut spectrum, &shape, Direction::Forward);
    (0..u.n)
        .map(|axis| {
            let stride = p.pow((u.n - 1 - axis) as u32);
            let mut buf: Vec<Complex64> = spectrum
                .iter()
                .enumerate()
                .map(|(idx, c)| {
                    let j = (idx / stride) % p;
                    if p.is_multiple_of(2) && j == p / 2 {
                        return Complex64::new(0.0, 0.0);
                    }
                    let xi = 2.0 * std::f64::consts::PI * signed_frequency(j, p) as f64 / u.period;
                    c * Complex64::new(0.0, xi)
                })
                .collect();
            fft_nd(&mut buf, &shape, Direction::Inverse);
            GridFunction {
                n: u.n,
                period: u.period,
                points_per_axis: p,
                values: buf.into_iter().map(|c| c.re).collect(),
            }
        })
        .collect()
}

/// Node set and options shared by the two singular-integral forms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct QuadratureConfig {
    /// Nodes are grid shifts `y` with `0 < |y| ≤ outer_radius`; default `L/2`.
    /// Larger radii reuse the periodic extension of `u`.
    pub outer_radius: Option<f64>,
    /// Adds `(u(x) - ū) ∫_{|y|>R} |y|^{-(n+α)} dy`, the far field with
    /// `u(x±y)` replaced by its mean.
    pub tail_correction: bool,
    /// Radius of the ball carrying the gradient correction; default `min(1, L/4)`.
    pub split_radius: Option<f64>,
}

impl QuadratureConfig {
    pub fn with_outer_radius(mut self, r: f64) -> Self {
        self.outer_radius = Some(r);
        self
    }

    pub fn with_tail(mut self, on: bool) -> Self {
        self.tail_correction = on;
        self
    }

    pub fn outer_radius_for(&self, period: f64) -> f64 {
        self.outer_radius.unwrap_or(0.5 * period)
    }

    pub fn split_radius_for(&self, period: f64) -> f64 {
        self.split_radius
            .unwrap_or_else(|| (0.25 * period).min(1.0))
    }
}

/// Quadrature weights `Δ^n |y|^{-(n+α)}` folded onto grid offsets.
///
/// Because `u` is periodic, every node `y` only needs `u(x ± y mod L)`, so
/// nodes sharing a residue class are merged into one weight per offset. The
/// pointwise cost is then `P^n` regardless of how many periods the node ball
/// spans.
#[derive(Debug, Clone)]
pub struct QuadratureStencil {
    n: usize,
    period: f64,
    points_per_axis: usize,
    weights: Vec<f64>,
    tail: f64,
    node_count: usize,
    effective_radius: f64,
}

impl QuadratureStencil {
    pub fn new(
        n: usize,
        period: f64,
        points_per_axis: usize,
        alpha: f64,
        config: &QuadratureConfig,
    ) -> Result<Self> {
        check_alpha(alpha)?;
        check_dimension(n)?;
        let p = points_per_axis;
        let spacing = period / p as f64;
        let r_out = config.outer_radius_for(period);
        if !(r_out >= spacing) {
            return Err(Error::param(
                "outer_radius",
                format!("{r_out} is below the grid spacing"),
            ));
        }
        let cell = spacing.powi(n as i32);
        let mut weights = vec![0.0; p.pow(n as u32)];
        let mut node_count = 0usize;
        for_each_node(n, spacing, r_out, |j, r| {
            let flat = j
                .iter()
                .fold(0usize, |acc, &c| acc * p + c.rem_euclid(p as i64) as usize);
            weights[flat] += cell * r.powf(-(n as f64 + alpha));
            node_count += 1;
        });
        // radius of the ball whose volume equals the covered cells, origin included
        let covered = (node_count + 1) as f64 * cell;
        let effective_radius = (covered / ball_volume(n)).powf(1.0 / n as f64);
        let tail = if config.tail_correction {
            power_tail_integral(n, alpha, effective_radius)
        } else {
            0.0
        };
        Ok(Self {
            n,
            period,
            points_per_axis: p,
            weights,
            tail,
            node_count,
            effective_radius,
        })
    }

    pub fn for_grid(u: &GridFunction, alpha: f64, config: &QuadratureConfig) -> Result<Self> {
        Self::new(u.n, u.period, u.points_per_axis, alpha, config)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn effective_radius(&self) -> f64 {
        self.effective_radius
    }

    fn check(&self, u: &GridFunction) -> Result<()> {
        if u.n != self.n || u.points_per_axis != self.points_per_axis || u.period != self.period {
            return Err(Error::param(
                "grid",
                "stencil was built for a different grid",
            ));
        }
        check_finite(&u.values)
    }

    fn at_unchecked(&self, u: &GridFunction, idx: usize) -> f64 {
        let p = self.points_per_axis;
        let x = u.multi_index(idx);
        let ux = u.values[idx];
        let mut acc = 0.0;
        let mut far = 0.0;
        let mut off = vec![0usize; self.n];
        for (j, &w) in self.weights.iter().enumerate() {
            // offset multi-index of j
            let mut rem = j;
            for axis in (0..self.n).rev() {
                off[axis] = rem % p;
                rem /= p;
            }
            let target = x
                .iter()
                .zip(&off)
                .fold(0usize, |acc, (&xi, &oi)| acc * p + (xi + oi) % p);
            let diff = ux - u.values[target];
            if w != 0.0 {
                acc += w * diff;
            }
            far += diff;
        }
        if self.tail != 0.0 {
            // (u(x) - ū) written as the mean of differences, exact for constants
            acc += self.tail * far / self.weights.len() as f64;
        }
        acc
    }

    /// Quadrature value at grid index `idx`.
    pub fn apply_at(&self, u: &GridFunction, idx: usize) -> Result<f64> {
        self.check(u)?;
        Ok(self.at_unchecked(u, idx))
    }

    /// Quadrature at every grid point.
    pub fn apply(&self, u: &GridFunction) -> Result<GridFunction> {
        self.check(u)?;
        let values = par::map_indexed(u.len(), |idx| self.at_unchecked(u, idx));
        GridFunction::new(u.n, u.period, u.points_per_axis, values)
    }
}

/// Visits integer offsets `j ≠ 0` with `|j Δ| ≤ r_out`, passing `|jΔ|`.
fn for_each_node(n: usize, spacing: f64, r_out: f64, mut visit: impl FnMut(&[i64], f64)) {
    let lim = (r_out / spacing).floor() as i64;
    let lim2 = (r_out / spacing).powi(2);
    let mut j = vec![0i64; n];
    fn rec(
        axis: usize,
        partial: f64,
        lim: i64,
        lim2: f64,
        spacing: f64,
        j: &mut [i64],
        visit: &mut dyn FnMut(&[i64], f64),
    ) {
        if axis == j.len() {
            if partial > 0.0 {
                visit(j, partial.sqrt() * spacing);
            }
            return;
        }
        for c in -lim..=lim {
            let q = partial + (c * c) as f64;
            if q > lim2 * (1.0 + 1e-12) {
                continue;
            }
            j[axis] = c;
            rec(axis + 1, q, lim, lim2, spacing, j, visit);
        }
    }
    rec(0, 0.0, lim, lim2, spacing, &mut j, &mut visit);
}

/// Second-difference quadrature of the unnormalized operator at grid point `x`.
///
/// Returns `½ Σ_y Δ^n [2u(x) - u(x+y) - u(x-y)] / |y|^{n+α}` over grid-shift
/// nodes (plus the optional far-field term), which approximates
/// `A(n, α) (-Δ)^{α/2} u(x)`.
pub fn fraclap_quadrature(
    u: &GridFunction,
    x: &[f64],
    alpha: f64,
    config: &QuadratureConfig,
) -> Result<f64> {
    let idx = u.locate(x)?;
    QuadratureStencil::for_grid(u, alpha, config)?.apply_at(u, idx)
}

/// Gradient-corrected principal value at grid point `x`, same nodes and
/// weights as [`fraclap_quadrature`].
pub fn fraclap_pv_gradient_form(
    u: &GridFunction,
    x: &[f64],
    alpha: f64,
    config: &QuadratureConfig,
) -> Result<f64> {
    check_alpha(alpha)?;
    check_finite(&u.values)?;
    let idx = u.locate(x)?;
    let grad: Vec<f64> = spectral_gradient(u).iter().map(|g| g.values[idx]).collect();
    let parts = pv_parts(u, idx, alpha, config, &grad)?;
    Ok(-parts.integral + parts.tail)
}

/// `Σ_{|y|<r} Δ^n ∇u(x)·y / |y|^{n+α}` over the node set; vanishes because
/// the nodes are symmetric under `y ↦ -y`.
pub fn gradient_correction_sum(
    u: &GridFunction,
    x: &[f64],
    alpha: f64,
    config: &QuadratureConfig,
) -> Result<f64> {
    check_alpha(alpha)?;
    let idx = u.locate(x)?;
    let grad: Vec<f64> = spectral_gradient(u).iter().map(|g| g.values[idx]).collect();
    Ok(pv_parts(u, idx, alpha, config, &grad)?.correction)
}

struct PvParts {
    integral: f64,
    correction: f64,
    tail: f64,
}

fn pv_parts(
    u: &GridFunction,
    idx: usize,
    alpha: f64,
    config: &QuadratureConfig,
    grad: &[f64],
) -> Result<PvParts> {
    let n = u.n;
    let p = u.points_per_axis as i64;
    let spacing = u.spacing();
    let r_out = config.outer_radius_for(u.period);
    if !(r_out >= spacing) {
        return Err(Error::param(
            "outer_radius",
            format!("{r_out} is below the grid spacing"),
        ));
    }
    let split = config.split_radius_for(u.period);
    let cell = spacing.powi(n as i32);
    let x: Vec<i64> = u.multi_index(idx).into_iter().map(|c| c as i64).collect();
    let ux = u.values[idx];
    let mut integral = 0.0;
    let mut correction = 0.0;
    let mut nodes = 0usize;
    for_each_node(n, spacing, r_out, |j, r| {
        let target = x.iter().zip(j).fold(0usize, |acc, (&xi, &ji)| {
            acc * p as usize + (xi + ji).rem_euclid(p) as usize
        });
        let w = cell * r.powf(-(n as f64 + alpha));
        let mut term = u.values[target] - ux;
        if r < split {
            let g: f64 = grad
                .iter()
                .zip(j)
                .map(|(g, &ji)| g * ji as f64 * spacing)
                .sum();
            term -= g;
            correction += w * g;
        }
        integral += w * term;
        nodes += 1;
    });
    let tail = if config.tail_correction {
        let covered = (nodes + 1) as f64 * cell;
        let r_eff = (covered / ball_volume(n)).powf(1.0 / n as f64);
        let far: f64 = u.values.iter().map(|v| ux - v).sum::<f64>() / u.values.len() as f64;
        power_tail_integral(n, alpha, r_eff) * far
    } else {
        0.0
    };
    Ok(PvParts {
        integral,
        correction,
        tail,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn cos_mode(p: usize, period: f64) -> GridFunction {
        GridFunction::from_fn(1, period, p, |x| (2.0 * PI * x[0] / period).cos()).unwrap()
    }

    #[test]
    fn constant_is_annihilated() {
        let u = GridFunction::from_fn(2, 3.0, 16, |_| 0.7).unwrap();
        let s = fraclap_spectral(&u, 1.3).unwrap();
        assert!(s.sup_norm() < 1e-14);
        let cfg = QuadratureConfig::default().with_tail(true);
        for idx in [0, 17, 200] {
            let x = u.point(idx);
            assert_eq!(fraclap_quadrature(&u, &x, 1.3, &cfg).unwrap(), 0.0);
            assert!(fraclap_pv_gradient_form(&u, &x, 1.3, &cfg).unwrap().abs() < 1e-13);
        }
    }

    #[test]
    fn cosine_is_an_eigenfunction() {
        for &period in &[1.0, 2.0 * PI, 5.0] {
            let u = cos_mode(64, period);
            for &alpha in &[0.4, 1.0, 1.6] {
                let s = fraclap_spectral(&u, alpha).unwrap();
                let lambda = (2.0 * PI / period).powf(alpha);
                for (a, b) in s.values().iter().zip(u.values()) {
                    assert!((a - lambda * b).abs() < 1e-12 * lambda.max(1.0));
                }
            }
        }
    }

    #[test]
    fn every_mode_scales_by_its_multiplier() {
        let p = 8;
        let period = 2.0;
        let mult = SpectralMultiplier::new(2, period, p, 0.9);
        for idx in 0..p * p {
            let xi = mult.frequency(idx);
            let u = GridFunction::from_fn(2, period, p, |x| (xi[0] * x[0] + xi[1] * x[1]).cos())
                .unwrap();
            let s = fraclap_spectral(&u, 0.9).unwrap();
            let lam = mult.values()[idx];
            for (a, b) in s.values().iter().zip(u.values()) {
                assert!(
                    (a - lam * b).abs() < 1e-11 * lam.max(1.0),
                    "mode {:?}",
                    mult.mode(idx)
                );
            }
        }
        assert_eq!(mult.values()[0], 0.0);
    }

    #[test]
    fn near_two_matches_second_derivative() {
        let u = cos_mode(128, 1.0);
        let s = fraclap_spectral(&u, 1.999).unwrap();
        let minus_second = (2.0 * PI).powi(2);
        for (a, b) in s.values().iter().zip(u.values()) {
            assert!((a - minus_second * b).abs() <= 0.01 * minus_second);
        }
    }

    #[test]
    fn spectral_rejects_non_finite() {
        let mut u = cos_mode(8, 1.0);
        u.values[3] = f64::NAN;
        assert!(matches!(
            fraclap_spectral(&u, 1.0),
            Err(Error::NonFinite(3))
        ));
        assert!(GridFunction::new(1, 1.0, 4, vec![0.0, f64::INFINITY, 0.0, 0.0]).is_err());
    }

    #[test]
    fn heat_edge_cases() {
        let u = cos_mode(32, 2.0 * PI);
        assert_eq!(heat_evolve_spectral(&u, 1.0, 0.0).unwrap(), u);
        assert!(matches!(
            heat_evolve_spectral(&u, 1.0, -0.1),
            Err(Error::NegativeTime(_))
        ));
        let out = heat_evolve_spectral(&u, 1.0, 1.0).unwrap();
        for (a, b) in out.values().iter().zip(u.values()) {
            assert!((a - (-1.0f64).exp() * b).abs() < 1e-14);
        }
        let v = cos_mode(32, 3.0);
        let out = heat_evolve_spectral(&v, 1.0, 1.0).unwrap();
        let decay = (-2.0 * PI / 3.0).exp();
        for (a, b) in out.values().iter().zip(v.values()) {
            assert!((a - decay * b).abs() < 1e-14);
        }
    }

    #[test]
    fn heat_preserves_mean_and_decays_energy() {
        let u = GridFunction::from_fn(2, 1.0, 32, |x| {
            1.0 + 0.5 * (2.0 * PI * x[0]).sin() * (4.0 * PI * x[1]).cos()
                + 0.2 * (6.0 * PI * x[1]).cos()
        })
        .unwrap();
        let mean0 = u.mean();
        let zero_mean =
            GridFunction::new(2, 1.0, 32, u.values().iter().map(|v| v - mean0).collect()).unwrap();
        let mut prev = zero_mean.l2_norm_sq();
        for k in 1..6 {
            let t = 0.05 * k as f64;
            let w = heat_evolve_spectral(&u, 1.4, t).unwrap();
            assert!((w.mean() - mean0).abs() < 1e-14);
            let e = heat_evolve_spectral(&zero_mean, 1.4, t)
                .unwrap()
                .l2_norm_sq();
            assert!(e < prev);
            prev = e;
        }
    }

    #[test]
    fn locate_rejects_off_grid_points() {
        let u = cos_mode(16, 1.0);
        assert_eq!(u.locate(&[0.25]).unwrap(), 4);
        assert_eq!(u.locate(&[1.25]).unwrap(), 4);
        assert!(matches!(u.locate(&[0.26]), Err(Error::OffGrid(_))));
        assert!(fraclap_quadrature(&u, &[0.01], 1.0, &QuadratureConfig::default()).is_err());
    }

    #[test]
    fn odd_correction_vanishes() {
        let u = GridFunction::from_fn(2, 2.0 * PI, 32, |x| {
            (x[0]).sin() + (2.0 * x[1]).cos() * x[0].cos()
        })
        .unwrap();
        let cfg = QuadratureConfig::default();
        for idx in [0, 5, 77, 500] {
            let x = u.point(idx);
            let c = gradient_correction_sum(&u, &x, 1.2, &cfg).unwrap();
            assert!(c.abs() < 1e-12, "{c}");
        }
        let v = cos_mode(256, 1.0);
        for idx in [3, 40, 100] {
            let c = gradient_correction_sum(&v, &v.point(idx), 0.5, &cfg).unwrap();
            assert!(c.abs() < 1e-12, "{c}");
        }
    }

    #[test]
    fn gradient_form_matches_second_difference_form() {
        let u = cos_mode(512, 2.0 * PI);
        let cfg = QuadratureConfig::default()
            .with_outer_radius(4.5 * 2.0 * PI)
            .with_tail(true);
        for &alpha in &[0.5, 1.0, 1.5] {
            let stencil = QuadratureStencil::for_grid(&u, alpha, &cfg).unwrap();
            for idx in [0, 37, 128, 300] {
                let q = stencil.apply_at(&u, idx).unwrap();
                let g = fraclap_pv_gradient_form(&u, &u.point(idx), alpha, &cfg).unwrap();
                let scale = q.abs().max(1e-3);
                assert!(
                    (q - g).abs() <= 1e-10 * scale.max(1.0),
                    "α={alpha} idx={idx}: {q} vs {g}"
                );
                assert!((q - g).abs() <= 5e-3 * scale);
            }
        }
    }

    #[test]
    fn gradient_form_does_not_depend_on_split_radius() {
        let u = GridFunction::from_fn(1, 2.0 * PI, 256, |x| x[0].sin().exp()).unwrap();
        let x = u.point(41);
        let base = QuadratureConfig::default()
            .with_outer_radius(2.5 * 2.0 * PI)
            .with_tail(true);
        let reference = fraclap_pv_gradient_form(&u, &x, 1.2, &base).unwrap();
        for split in [0.1, 0.5, 1.5] {
            let cfg = QuadratureConfig {
                split_radius: Some(split),
                ..base
            };
            let g = fraclap_pv_gradient_form(&u, &x, 1.2, &cfg).unwrap();
            assert!(
                (g - reference).abs() <= 1e-10 * reference.abs().max(1.0),
                "split {split}: {g} vs {reference}"
            );
        }
    }

    #[test]
    fn stencil_apply_matches_pointwise_entry() {
        let u = GridFunction::from_fn(1, 1.0, 64, |x| (2.0 * PI * x[0]).sin().exp()).unwrap();
        let cfg = QuadratureConfig::default()
            .with_outer_radius(2.5)
            .with_tail(true);
        let all = QuadratureStencil::for_grid(&u, 0.8, &cfg)
            .unwrap()
            .apply(&u)
            .unwrap();
        for idx in [0, 9, 33] {
            let one = fraclap_quadrature(&u, &u.point(idx), 0.8, &cfg).unwrap();
            assert_eq!(one, all.values()[idx]);
        }
    }

    #[test]
    fn binary_roundtrip() {
        let u = GridFunction::from_fn(2, 1.5, 8, |x| x[0] - 2.0 * x[1]).unwrap();
        let back = GridFunction::from_le_bytes(&u.header(), &u.to_le_bytes()).unwrap();
        assert_eq!(u, back);
        let mut buf = Vec::new();
        u.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("x1,x2,value"));
        assert_eq!(text.lines().count(), 65);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn quadrature_is_linear(
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
            c1 in prop::collection::vec(-1.0f64..1.0, 4),
            c2 in prop::collection::vec(-1.0f64..1.0, 4),
            alpha in 0.2f64..1.8,
        ) {
            let smooth = |c: &[f64]| {
                let c = c.to_vec();
                move |x: &[f64]| {
                    let t = 2.0 * PI * x[0];
                    c[0] * t.cos() + c[1] * (2.0 * t).sin() + c[2] * (3.0 * t).cos() + c[3]
                }
            };
            let u = GridFunction::from_fn(1, 1.0, 64, smooth(&c1)).unwrap();
            let v = GridFunction::from_fn(1, 1.0, 64, smooth(&c2)).unwrap();
            let w = u.axpby(a, &v, b).unwrap();
            let cfg = QuadratureConfig::default().with_tail(true);
            let st = QuadratureStencil::for_grid(&u, alpha, &cfg).unwrap();
            let (qu, qv, qw) = (st.apply(&u).unwrap(), st.apply(&v).unwrap(), st.apply(&w).unwrap());
            for i in 0..64 {
                let lin = a * qu.values()[i] + b * qv.values()[i];
                prop_assert!((qw.values()[i] - lin).abs() < 1e-10 * (1.0 + lin.abs()));
            }
        }

        #[test]
        fn heat_semigroup_composes(seed in any::<u64>(), t1 in 0.0f64..0.5, t2 in 0.0f64..0.5, alpha in 0.1f64..1.9) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let vals: Vec<f64> = (0..256).map(|_| rng.random::<f64>() - 0.5).collect();
            let u = GridFunction::new(2, 2.0 * PI, 16, vals).unwrap();
            let two = heat_evolve_spectral(&heat_evolve_spectral(&u, alpha, t1).unwrap(), alpha, t2).unwrap();
            let one = heat_evolve_spectral(&u, alpha, t1 + t2).unwrap();
            for (x, y) in two.values().iter().zip(one.values()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
