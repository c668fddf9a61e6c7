//! Fourier symbol of the homogeneous kernel `|y|^{-(n+α)}`.
//!
//! [`symbol_from_kernel`] evaluates
//!
//! ```text
//! J(ξ) = ∫_{R^n} (1 - cos(ξ·y)) |y|^{-(n+α)} dy  ≥ 0
//! ```
//!
//! by numerical quadrature in `y`. The multiplier of the unnormalized
//! operator in the Fourier picture is `S(ξ) = -J(ξ)`; no factor 2 is carried.
//! [`a_constant`] is `J(e₁)`.
//!
//! The integral is split in polar form `y = rθ`. For a direction `θ` with
//! `c = ξ·θ` the radial integral `g(c) = ∫_0^∞ (1 - cos(rc)) r^{-1-α} dr` is
//! computed as
//!
//! * `[0, ε]`: the Taylor term `c² ε^{2-α} / (2(2-α))`, remainder at most
//!   `c⁴ ε^{4-α} / (24(4-α))`;
//! * `[ε, R]`: composite 15-point Gauss-Kronrod, geometric panels until one
//!   period `2π/|c|` and then one panel per period;
//! * `[R, ∞)`: `R^{-α}/α + R^{-1-α} sin(Rc)/c`, with the integration-by-parts
//!   remainder `2(1+α) R^{-2-α} / c²` as its error.
//!
//! Directions are integrated adaptively with the same Gauss-Kronrod pair. The
//! angular nodes live in `y` space and never align with `ξ`, so rotating `ξ`
//! is a genuine test.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{check_alpha, check_dimension};
use crate::par;

/// Quadrature parameters for the symbol integral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SymbolConfig {
    /// Radius `ε` of the ball replaced by its Taylor term.
    pub inner_cutoff: f64,
    /// Radius `R` beyond which the asymptotic tail is used.
    pub outer_cutoff: f64,
    /// Relative tolerance for the adaptive angular integration.
    pub angular_tolerance: f64,
    /// Panel budget per adaptive angular integral.
    pub max_angular_panels: usize,
}

impl Default for SymbolConfig {
    fn default() -> Self {
        Self {
            inner_cutoff: 1e-3,
            outer_cutoff: 1e3,
            angular_tolerance: 1e-9,
            max_angular_panels: 2000,
        }
    }
}

impl SymbolConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.inner_cutoff > 0.0 && self.inner_cutoff.is_finite()) {
            return Err(Error::param("inner_cutoff", "must be positive and finite"));
        }
        if !(self.outer_cutoff.is_finite() && self.inner_cutoff < self.outer_cutoff) {
            return Err(Error::CutoffOrder {
                inner: self.inner_cutoff,
                outer: self.outer_cutoff,
            });
        }
        if !(self.angular_tolerance > 0.0) {
            return Err(Error::param("angular_tolerance", "must be positive"));
        }
        if self.max_angular_panels < 8 {
            return Err(Error::param("max_angular_panels", "must be at least 8"));
        }
        Ok(())
    }

    fn key(&self) -> [u64; 4] {
        [
            self.inner_cutoff.to_bits(),
            self.outer_cutoff.to_bits(),
            self.angular_tolerance.to_bits(),
            self.max_angular_panels as u64,
        ]
    }
}

/// `J(ξ)` with an error estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolEvaluation {
    pub xi: Vec<f64>,
    pub value: f64,
    pub error_estimate: f64,
}

impl SymbolEvaluation {
    /// The multiplier `S(ξ) = -J(ξ)`.
    pub fn multiplier(&self) -> f64 {
        -self.value
    }
}

// 15-point Kronrod abscissae on [-1, 1] (non-negative half) and weights;
// odd entries are the embedded 7-point Gauss nodes.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// The 15 nodes of `[a, b]`, ordered left to right.
fn kronrod_nodes(a: f64, b: f64) -> [f64; 15] {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut x = [0.0; 15];
    for i in 0..7 {
        x[i] = mid - half * XGK[i];
        x[14 - i] = mid + half * XGK[i];
    }
    x[7] = mid;
    x
}

/// `(Kronrod, Gauss)` estimates from values at [`kronrod_nodes`].
fn kronrod_sums(f: &[f64; 15], half: f64) -> (f64, f64) {
    let mut k = WGK[7] * f[7];
    let mut g = WG[3] * f[7];
    for i in 0..7 {
        let pair = f[i] + f[14 - i];
        k += WGK[i] * pair;
        if i % 2 == 1 {
            g += WG[i / 2] * pair;
        }
    }
    (k * half, g * half)
}

/// Applies the weights to a side quantity (such as a pointwise error bound).
fn kronrod_weighted(f: &[f64; 15], half: f64) -> f64 {
    kronrod_sums(f, half).0
}

/// Value with an error estimate.
#[derive(Debug, Clone, Copy, Default)]
struct Estimate {
    value: f64,
    error: f64,
}

/// `g(c) = ∫_0^∞ (1 - cos(rc)) r^{-1-α} dr` for one direction.
fn radial(c: f64, alpha: f64, cfg: &SymbolConfig) -> Estimate {
    let c = c.abs();
    if c == 0.0 {
        return Estimate::default();
    }
    let eps = cfg.inner_cutoff;
    let r_out = cfg.outer_cutoff;
    let inner = c * c * eps.powf(2.0 - alpha) / (2.0 * (2.0 - alpha));
    let inner_err = c.powi(4) * eps.powf(4.0 - alpha) / (24.0 * (4.0 - alpha));

    let f = |r: f64| {
        let s = (0.5 * r * c).sin();
        2.0 * s * s * r.powf(-1.0 - alpha)
    };
    let mut value = 0.0;
    let mut err = 0.0;
    let mut panel = |a: f64, b: f64| {
        let x = kronrod_nodes(a, b);
        let fx = x.map(f);
        let (k, g) = kronrod_sums(&fx, 0.5 * (b - a));
        value += k;
        err += (k - g).abs();
    };
    let period = 2.0 * PI / c;
    let switch = period.min(r_out);
    let mut a = eps;
    while a < switch {
        let b = (2.0 * a).min(switch);
        panel(a, b);
        a = b;
    }
    if switch < r_out {
        let count = ((r_out - switch) / period).ceil() as usize;
        for i in 0..count {
            let a = switch + i as f64 * period;
            let b = (switch + (i + 1) as f64 * period).min(r_out);
            if b > a {
                panel(a, b);
            }
        }
    }

    let (tail, tail_err) = if c * r_out >= 1.0 {
        let t = r_out.powf(-alpha) / alpha + r_out.powf(-1.0 - alpha) * (r_out * c).sin() / c;
        (t, 2.0 * (1.0 + alpha) * r_out.powf(-2.0 - alpha) / (c * c))
    } else {
        // 1 - cos(rc) ≤ min((rc)²/2, 2)
        let upper = c * c * (c.powf(alpha - 2.0) - r_out.powf(2.0 - alpha)) / (2.0 * (2.0 - alpha))
            + 2.0 * c.powf(alpha) / alpha;
        (0.5 * upper, 0.5 * upper)
    };
    Estimate {
        value: inner + value + tail,
        error: inner_err + err + tail_err,
    }
}

/// Globally adaptive Gauss-Kronrod integration of an integrand that carries
/// its own pointwise error.
fn adaptive(
    f: &(dyn Fn(f64) -> Estimate + Sync),
    a: f64,
    b: f64,
    initial: usize,
    rel_tol: f64,
    max_panels: usize,
) -> Estimate {
    struct Panel {
        a: f64,
        b: f64,
        value: f64,
        quad_err: f64,
        side_err: f64,
    }
    let eval = |a: f64, b: f64| {
        let x = kronrod_nodes(a, b);
        let fx = par::map_indexed(15, |i| f(x[i]));
        let vals: [f64; 15] = std::array::from_fn(|i| fx[i].value);
        let errs: [f64; 15] = std::array::from_fn(|i| fx[i].error);
        let half = 0.5 * (b - a);
        let (k, g) = kronrod_sums(&vals, half);
        Panel {
            a,
            b,
            value: k,
            quad_err: (k - g).abs(),
            side_err: kronrod_weighted(&errs, half),
        }
    };
    let width = (b - a) / initial as f64;
    let mut panels: Vec<Panel> = (0..initial)
        .map(|i| {
            let lo = a + i as f64 * width;
            let hi = if i + 1 == initial {
                b
            } else {
                a + (i + 1) as f64 * width
            };
            eval(lo, hi)
        })
        .collect();
    loop {
        let total: f64 = panels.iter().map(|p| p.value).sum();
        let quad: f64 = panels.iter().map(|p| p.quad_err).sum();
        if quad <= rel_tol * total.abs() || panels.len() >= max_panels {
            break;
        }
        let worst = panels.iter().enumerate().fold(0, |best, (i, p)| {
            if p.quad_err > panels[best].quad_err {
                i
            } else {
                best
            }
        });
        let p = panels.swap_remove(worst);
        let mid = 0.5 * (p.a + p.b);
        panels.push(eval(p.a, mid));
        panels.push(eval(mid, p.b));
    }
    // sum in position order so the result does not depend on refinement history
    panels.sort_by(|x, y| x.a.total_cmp(&y.a));
    Estimate {
        value: panels.iter().map(|p| p.value).sum(),
        error: panels.iter().map(|p| p.quad_err + p.side_err).sum(),
    }
}

/// `J(ξ)` for `ξ ∈ R^n`, `n = ξ.len()`.
pub fn symbol_from_kernel(
    xi: &[f64],
    alpha: f64,
    config: &SymbolConfig,
) -> Result<SymbolEvaluation> {
    let n = xi.len();
    check_dimension(n)?;
    check_alpha(alpha)?;
    config.validate()?;
    if let Some(i) = xi.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let tol = config.angular_tolerance;
    let budget = config.max_angular_panels;
    let est = match n {
        1 => {
            let g = radial(xi[0], alpha, config);
            Estimate {
                value: 2.0 * g.value,
                error: 2.0 * g.error,
            }
        }
        2 => {
            // θ and -θ give the same radial integral, so half the circle suffices
            let f = |phi: f64| radial(xi[0] * phi.cos() + xi[1] * phi.sin(), alpha, config);
            let half = adaptive(&f, 0.0, PI, 8, tol, budget);
            Estimate {
                value: 2.0 * half.value,
                error: 2.0 * half.error,
            }
        }
        _ => {
            // y/|y| = (s cos φ, s sin φ, u), s = √(1-u²); the upper hemisphere suffices
            let inner_budget = budget;
            let f = |u: f64| {
                let s = (1.0 - u * u).max(0.0).sqrt();
                let g = |phi: f64| {
                    radial(
                        s * (xi[0] * phi.cos() + xi[1] * phi.sin()) + u * xi[2],
                        alpha,
                        config,
                    )
                };
                adaptive(&g, 0.0, 2.0 * PI, 8, tol, inner_budget)
            };
            let half = adaptive(&f, 0.0, 1.0, 4, tol, budget);
            Estimate {
                value: 2.0 * half.value,
                error: 2.0 * half.error,
            }
        }
    };
    let value = est.value.max(0.0);
    Ok(SymbolEvaluation {
        xi: xi.to_vec(),
        value,
        error_estimate: est.error + 64.0 * f64::EPSILON * value,
    })
}

type CacheKey = (usize, u64, [u64; 4]);

fn cache() -> &'static Mutex<HashMap<CacheKey, (f64, f64)>> {
    static CACHE: OnceLock<Mutex<HashMap<CacheKey, (f64, f64)>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// `A(n, α) = J(e₁) = ∫ (1 - cos ζ₁) |ζ|^{-(n+α)} dζ`, returned as
/// `(value, error_estimate)` and memoized per `(n, α, config)`.
pub fn a_constant(n: usize, alpha: f64, config: &SymbolConfig) -> Result<(f64, f64)> {
    check_dimension(n)?;
    check_alpha(alpha)?;
    config.validate()?;
    let key = (n, alpha.to_bits(), config.key());
    if let Some(hit) = cache().lock().expect("symbol cache poisoned").get(&key) {
        return Ok(*hit);
    }
    let mut e1 = vec![0.0; n];
    e1[0] = 1.0;
    let eval = symbol_from_kernel(&e1, alpha, config)?;
    let out = (eval.value, eval.error_estimate);
    cache()
        .lock()
        .expect("symbol cache poisoned")
        .insert(key, out);
    Ok(out)
}

/// One row of a homogeneity check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogeneityRow {
    pub xi: Vec<f64>,
    pub value: f64,
    pub error_estimate: f64,
    /// `J(ξ) / (A |ξ|^α)`.
    pub ratio: f64,
    pub deviation: f64,
    /// Relative error budget `err_J / J + err_A / A`.
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogeneityReport {
    pub n: usize,
    pub alpha: f64,
    pub config: SymbolConfig,
    pub a_value: f64,
    pub a_error: f64,
    pub rows: Vec<HomogeneityRow>,
    pub max_deviation: f64,
    pub pass: bool,
}

/// Checks `J(ξ) = A |ξ|^α` on every `ξ` of `xi_set`.
pub fn verify_homogeneity(
    n: usize,
    alpha: f64,
    xi_set: &[Vec<f64>],
    config: &SymbolConfig,
) -> Result<HomogeneityReport> {
    let (a_value, a_error) = a_constant(n, alpha, config)?;
    let mut rows = Vec::with_capacity(xi_set.len());
    for xi in xi_set {
        if xi.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: xi.len(),
            });
        }
        let norm = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::param("xi_set", "frequencies must be nonzero"));
        }
        let ev = symbol_from_kernel(xi, alpha, config)?;
        let ratio = ev.value / (a_value * norm.powf(alpha));
        rows.push(HomogeneityRow {
            xi: xi.clone(),
            value: ev.value,
            error_estimate: ev.error_estimate,
            ratio,
            deviation: (ratio - 1.0).abs(),
            tolerance: ev.error_estimate / ev.value + a_error / a_value,
        });
    }
    let max_deviation = rows.iter().fold(0.0f64, |m, r| m.max(r.deviation));
    let pass = rows.iter().all(|r| r.deviation <= r.tolerance + 1e-12);
    Ok(HomogeneityReport {
        n,
        alpha,
        config: *config,
        a_value,
        a_error,
        rows,
        max_deviation,
        pass,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationReport {
    pub alpha: f64,
    pub xi: Vec<f64>,
    pub rotated_xi: Vec<f64>,
    pub value: f64,
    pub rotated_value: f64,
    pub difference: f64,
    pub combined_error: f64,
    pub pass: bool,
}

/// Largest entry of `RᵀR - I` for a row-major `n × n` matrix.
pub fn orthogonality_defect(rotation: &[f64], n: usize) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let dot: f64 = (0..n)
                .map(|k| rotation[k * n + i] * rotation[k * n + j])
                .sum();
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((dot - target).abs());
        }
    }
    worst
}

/// Compares `J(Rξ)` with `J(ξ)`; `rotation` is row-major `n × n`.
pub fn verify_rotation(
    alpha: f64,
    xi: &[f64],
    rotation: &[f64],
    config: &SymbolConfig,
) -> Result<RotationReport> {
    let n = xi.len();
    if n < 2 {
        return Err(Error::param("xi", "rotation checks need n ≥ 2"));
    }
    check_dimension(n)?;
    if rotation.len() != n * n {
        return Err(Error::DimensionMismatch {
            expected: n * n,
            actual: rotation.len(),
        });
    }
    let defect = orthogonality_defect(rotation, n);
    if !(defect <= 1e-12) {
        return Err(Error::NotOrthogonal(defect));
    }
    let rotated: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|k| rotation[i * n + k] * xi[k]).sum())
        .collect();
    let a = symbol_from_kernel(xi, alpha, config)?;
    let b = symbol_from_kernel(&rotated, alpha, config)?;
    let difference = (a.value - b.value).abs();
    let combined_error = a.error_estimate + b.error_estimate;
    Ok(RotationReport {
        alpha,
        xi: xi.to_vec(),
        rotated_xi: rotated,
        value: a.value,
        rotated_value: b.value,
        difference,
        combined_error,
        pass: difference <= 2.0 * combined_error,
    })
}

/// Row-major planar rotation by `angle`.
pub fn rotation_2d(angle: f64) -> [f64; 4] {
    let (s, c) = angle.sin_cos();
    [c, -s, s, c]
}
