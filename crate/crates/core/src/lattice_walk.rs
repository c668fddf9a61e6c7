//! Master-equation evolution and Monte Carlo simulation of the long-jump
//! lattice walk on `hZ^n`, with time step `τ = h^α`.
//!
//! The walk lives on all of `Z^n` but the distribution is stored on the
//! finite box `[-M, M]^n`. Probability that jumps out of the box is absorbed
//! into [`LatticeDistribution::leaked`] rather than wrapped or reflected, so
//! the stored masses are exactly the whole-space masses restricted to the box
//! minus whatever has ever left it.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::fft::{fft_nd, Direction};
use crate::kernel::{kernel_value, JumpSamplerTable, KernelSpec};
use crate::lattice::{ball_points, BoxShape};
use crate::numerics::{stable_sum, CompensatedSum};
use crate::par;

/// Site probabilities `u(hk, t)` on the box `[-M, M]^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeDistribution {
    shape: BoxShape,
    h: f64,
    mass: Vec<f64>,
    steps: u64,
    time: f64,
    leaked: f64,
}

impl LatticeDistribution {
    /// Unit mass at the origin.
    pub fn delta(n: usize, h: f64, half_width: usize) -> Result<Self> {
        let shape = validated_shape(n, h, half_width)?;
        let mut mass = vec![0.0; shape.len()];
        let origin = shape.index(&vec![0; n]).expect("origin is inside the box");
        mass[origin] = 1.0;
        Ok(Self::from_parts(shape, h, mass, 0.0))
    }

    /// Wraps explicit masses; whatever is missing from a total of one is
    /// booked as already leaked.
    pub fn from_masses(n: usize, h: f64, half_width: usize, mass: Vec<f64>) -> Result<Self> {
        let shape = validated_shape(n, h, half_width)?;
        if mass.len() != shape.len() {
            return Err(Error::param(
                "mass",
                format!("expected {} sites, got {}", shape.len(), mass.len()),
            ));
        }
        if let Some(i) = mass.iter().position(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::param(
                "mass",
                format!("site {i} is negative or non-finite"),
            ));
        }
        let total = stable_sum(&mass);
        if total > 1.0 + 1e-10 {
            return Err(Error::param("mass", format!("total {total} exceeds one")));
        }
        Ok(Self::from_parts(shape, h, mass, (1.0 - total).max(0.0)))
    }

    /// Samples a density `f(x)` at `x = hk` as `f(hk) h^n` and rescales so
    /// the box carries unit mass.
    pub fn from_density(
        n: usize,
        h: f64,
        half_width: usize,
        density: impl Fn(&[f64]) -> f64,
    ) -> Result<Self> {
        let shape = validated_shape(n, h, half_width)?;
        let cell = h.powi(n as i32);
        let mut k = vec![0i64; n];
        let mut x = vec![0.0; n];
        let mut mass = Vec::with_capacity(shape.len());
        for idx in 0..shape.len() {
            shape.coords_into(idx, &mut k);
            for (xi, ki) in x.iter_mut().zip(&k) {
                *xi = h * *ki as f64;
            }
            mass.push((density(&x) * cell).max(0.0));
        }
        let total = stable_sum(&mass);
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::param("density", "has no positive mass on the box"));
        }
        for m in mass.iter_mut() {
            *m /= total;
        }
        Ok(Self::from_parts(shape, h, mass, 0.0))
    }

    fn from_parts(shape: BoxShape, h: f64, mass: Vec<f64>, leaked: f64) -> Self {
        Self {
            shape,
            h,
            mass,
            steps: 0,
            time: 0.0,
            leaked,
        }
    }

    pub fn n(&self) -> usize {
        self.shape.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn half_width(&self) -> usize {
        self.shape.half_width
    }

    pub fn shape(&self) -> BoxShape {
        self.shape
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// Mass at lattice site `k`; zero outside the box.
    pub fn mass_at(&self, k: &[i64]) -> f64 {
        self.shape.index(k).map_or(0.0, |i| self.mass[i])
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn leaked(&self) -> f64 {
        self.leaked
    }

    pub fn total_mass(&self) -> f64 {
        stable_sum(&self.mass)
    }

    /// `Σ_k mass(k) e^{i h k·ξ}` as `(re, im)`.
    pub fn fourier(&self, xi: &[f64]) -> (f64, f64) {
        let mut re = CompensatedSum::new();
        let mut im = CompensatedSum::new();
        let mut k = vec![0i64; self.n()];
        for (idx, &m) in self.mass.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            self.shape.coords_into(idx, &mut k);
            let phase: f64 = k
                .iter()
                .zip(xi)
                .map(|(&ki, &x)| self.h * ki as f64 * x)
                .sum();
            re.add(m * phase.cos());
            im.add(m * phase.sin());
        }
        (re.value(), im.value())
    }

    /// `Σ_k mass(k) |hk|^β` over the box.
    pub fn absolute_moment(&self, beta: f64) -> f64 {
        let mut acc = CompensatedSum::new();
        let mut k = vec![0i64; self.n()];
        for (idx, &m) in self.mass.iter().enumerate() {
            self.shape.coords_into(idx, &mut k);
            let r = self.h * (k.iter().map(|c| (c * c) as f64).sum::<f64>()).sqrt();
            if r > 0.0 {
                acc.add(m * r.powf(beta));
            }
        }
        acc.value()
    }

    /// True when `mass(k) == mass(-k)` bit for bit.
    pub fn is_even(&self) -> bool {
        let len = self.mass.len();
        (0..len).all(|i| self.mass[i] == self.mass[len - 1 - i])
    }

    /// CSV rows `k1,...,kn,mass`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header: Vec<String> = (1..=self.n()).map(|i| format!("k{i}")).collect();
        writeln!(w, "{},mass", header.join(","))?;
        let mut k = vec![0i64; self.n()];
        for (idx, &m) in self.mass.iter().enumerate() {
            self.shape.coords_into(idx, &mut k);
            for c in &k {
                write!(w, "{c},")?;
            }
            writeln!(w, "{m}")?;
        }
        Ok(())
    }

    pub fn summary(&self, moment_orders: &[f64]) -> DistributionSummary {
        DistributionSummary {
            schema_version: crate::harness::SCHEMA_VERSION,
            n: self.n(),
            h: self.h,
            half_width: self.half_width(),
            steps: self.steps,
            time: self.time,
            leaked: self.leaked,
            total_mass: self.total_mass(),
            moments: moment_orders
                .iter()
                .map(|&order| MomentProbe {
                    order,
                    value: self.absolute_moment(order),
                })
                .collect(),
        }
    }
}

fn validated_shape(n: usize, h: f64, half_width: usize) -> Result<BoxShape> {
    crate::kernel::check_dimension(n)?;
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::param("h", format!("must be positive, got {h}")));
    }
    if half_width == 0 {
        return Err(Error::param("half_width", "must be at least 1"));
    }
    Ok(BoxShape::new(n, half_width))
}

/// JSON summary of a distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub schema_version: u32,
    pub n: usize,
    pub h: f64,
    pub half_width: usize,
    pub steps: u64,
    pub time: f64,
    pub leaked: f64,
    pub total_mass: f64,
    pub moments: Vec<MomentProbe>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentProbe {
    pub order: f64,
    pub value: f64,
}

/// How [`MasterPropagator`] applies one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum StepMethod {
    /// Gather over all retained jumps, `O(sites × jumps)`.
    Direct,
    /// Zero-padded FFT convolution, `O(N log N)` per step.
    Fft,
    /// FFT when it is estimated to be cheaper.
    #[default]
    Auto,
}

/// Reusable one-step operator for a fixed kernel and box.
pub struct MasterPropagator {
    spec: KernelSpec,
    shape: BoxShape,
    tau: f64,
    // one representative per ±k pair, with its probability
    half_jumps: Vec<i64>,
    half_probs: Vec<f64>,
    fft: Option<FftPath>,
}

struct FftPath {
    padded: Vec<usize>,
    spectrum: Vec<f64>,
}

impl MasterPropagator {
    pub fn new(spec: &KernelSpec, h: f64, half_width: usize, method: StepMethod) -> Result<Self> {
        let shape = validated_shape(spec.n, h, half_width)?;
        let all = ball_points(spec.n, spec.trunc_radius);
        let n = spec.n;
        let mut half_jumps = Vec::with_capacity(all.len() / 2);
        let mut half_probs = Vec::with_capacity(all.len() / 2 / n);
        for k in all.chunks(n) {
            // representative: first nonzero coordinate positive
            if k.iter().find(|&&c| c != 0).is_some_and(|&c| c > 0) {
                half_jumps.extend_from_slice(k);
                half_probs.push(kernel_value(k, spec) / spec.normalization);
            }
        }
        let use_fft = match method {
            StepMethod::Direct => false,
            StepMethod::Fft => true,
            StepMethod::Auto => {
                let direct = shape.len() as f64 * half_probs.len() as f64 * 2.0;
                let side = fft_size(shape.side() + spec.trunc_radius as usize);
                let total = (side as f64).powi(n as i32);
                direct > 40.0 * total * total.log2().max(1.0)
            }
        };
        let fft = use_fft.then(|| FftPath::build(spec, &shape, &half_jumps, &half_probs));
        Ok(Self {
            spec: spec.clone(),
            shape,
            tau: h.powf(spec.alpha),
            half_jumps,
            half_probs,
            fft,
        })
    }

    pub fn uses_fft(&self) -> bool {
        self.fft.is_some()
    }

    /// Time step `τ = h^α`.
    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn step(&self, dist: &LatticeDistribution) -> Result<LatticeDistribution> {
        if dist.n() != self.spec.n {
            return Err(Error::DimensionMismatch {
                expected: self.spec.n,
                actual: dist.n(),
            });
        }
        if dist.shape != self.shape {
            return Err(Error::param(
                "distribution",
                "box differs from the propagator",
            ));
        }
        let (mass, leaked_now) = match &self.fft {
            Some(path) => path.apply(&self.shape, &dist.mass),
            None => self.direct(&dist.mass),
        };
        let steps = dist.steps + 1;
        Ok(LatticeDistribution {
            shape: dist.shape,
            h: dist.h,
            mass,
            steps,
            time: steps as f64 * dist.h.powf(self.spec.alpha),
            leaked: dist.leaked + leaked_now,
        })
    }

    pub fn evolve(&self, dist: &LatticeDistribution, steps: u64) -> Result<LatticeDistribution> {
        let mut cur = self.step(dist)?;
        for _ in 1..steps {
            cur = self.step(&cur)?;
        }
        Ok(cur)
    }

    fn direct(&self, old: &[f64]) -> (Vec<f64>, f64) {
        let n = self.spec.n;
        let shape = self.shape;
        let m = shape.half_width as i64;
        let side = shape.side() as i64;
        let strides: Vec<i64> = (0..n).map(|a| side.pow((n - 1 - a) as u32)).collect();
        let offsets: Vec<i64> = self
            .half_jumps
            .chunks(n)
            .map(|k| k.iter().zip(&strides).map(|(c, s)| c * s).sum())
            .collect();
        let inside = |x: &[i64], k: &[i64], sign: i64| {
            x.iter()
                .zip(k)
                .all(|(&xi, &ki)| (xi + sign * ki).abs() <= m)
        };
        // gather: new(x) = Σ_k p_k old(x + k), ± pairs summed together so that
        // the update commutes bitwise with k ↦ -k
        let new = par::map_indexed(shape.len(), |idx| {
            let x = shape.coords(idx);
            let mut acc = 0.0;
            for (j, (k, &p)) in self.half_jumps.chunks(n).zip(&self.half_probs).enumerate() {
                let plus = if inside(&x, k, 1) {
                    old[(idx as i64 + offsets[j]) as usize]
                } else {
                    0.0
                };
                let minus = if inside(&x, k, -1) {
                    old[(idx as i64 - offsets[j]) as usize]
                } else {
                    0.0
                };
                acc += p * (plus + minus);
            }
            acc
        });
        // per-source outflow past the box edge
        let outflow = par::map_indexed(shape.len(), |idx| {
            let u = old[idx];
            if u == 0.0 {
                return 0.0;
            }
            let x = shape.coords(idx);
            let mut out = 0.0;
            for (k, &p) in self.half_jumps.chunks(n).zip(&self.half_probs) {
                let lost = (!inside(&x, k, 1)) as u8 + (!inside(&x, k, -1)) as u8;
                out += p * lost as f64;
            }
            u * out
        });
        (new, stable_sum(&outflow))
    }
}

impl FftPath {
    fn build(spec: &KernelSpec, shape: &BoxShape, half_jumps: &[i64], half_probs: &[f64]) -> Self {
        let n = spec.n;
        let side = fft_size(shape.side() + spec.trunc_radius as usize);
        let padded = vec![side; n];
        let total = side.pow(n as u32);
        let mut kernel = vec![Complex64::new(0.0, 0.0); total];
        let wrap = |k: &[i64], sign: i64| {
            k.iter().fold(0usize, |acc, &c| {
                acc * side + (sign * c).rem_euclid(side as i64) as usize
            })
        };
        for (k, &p) in half_jumps.chunks(n).zip(half_probs) {
            kernel[wrap(k, 1)].re += p;
            kernel[wrap(k, -1)].re += p;
        }
        fft_nd(&mut kernel, &padded, Direction::Forward);
        // even real kernel: spectrum is real
        let spectrum = kernel.into_iter().map(|c| c.re).collect();
        Self { padded, spectrum }
    }

    fn apply(&self, shape: &BoxShape, old: &[f64]) -> (Vec<f64>, f64) {
        let n = shape.n;
        let side = self.padded[0];
        let bside = shape.side();
        let embed = |idx: usize| {
            let mut rem = idx;
            let mut flat = 0usize;
            let mut mul = 1usize;
            for _ in 0..n {
                flat += (rem % bside) * mul;
                rem /= bside;
                mul *= side;
            }
            flat
        };
        let mut buf = vec![Complex64::new(0.0, 0.0); self.spectrum.len()];
        for (idx, &u) in old.iter().enumerate() {
            buf[embed(idx)] = Complex64::new(u, 0.0);
        }
        fft_nd(&mut buf, &self.padded, Direction::Forward);
        for (b, s) in buf.iter_mut().zip(&self.spectrum) {
            *b *= *s;
        }
        fft_nd(&mut buf, &self.padded, Direction::Inverse);
        let new: Vec<f64> = (0..old.len())
            .map(|idx| buf[embed(idx)].re.max(0.0))
            .collect();
        let leaked = (stable_sum(old) - stable_sum(&new)).max(0.0);
        (new, leaked)
    }
}

/// Smallest `2^a 3^b 5^c ≥ min`.
fn fft_size(min: usize) -> usize {
    let mut best = min.next_power_of_two();
    let mut p5 = 1usize;
    while p5 < best {
        let mut p35 = p5;
        while p35 < best {
            let mut v = p35;
            while v < min {
                v *= 2;
            }
            best = best.min(v);
            p35 *= 3;
        }
        p5 *= 5;
    }
    best
}

/// One master-equation step: `u(x, t+τ) = Σ_k K(k)/Z · u(x + hk, t)`.
pub fn master_step(dist: &LatticeDistribution, spec: &KernelSpec) -> Result<LatticeDistribution> {
    if dist.n() != spec.n {
        return Err(Error::DimensionMismatch {
            expected: spec.n,
            actual: dist.n(),
        });
    }
    MasterPropagator::new(spec, dist.h, dist.half_width(), StepMethod::Direct)?.step(dist)
}

/// Applies [`master_step`] `steps` times.
pub fn evolve(
    dist: &LatticeDistribution,
    spec: &KernelSpec,
    steps: u64,
) -> Result<LatticeDistribution> {
    evolve_with(dist, spec, steps, StepMethod::Direct)
}

pub fn evolve_with(
    dist: &LatticeDistribution,
    spec: &KernelSpec,
    steps: u64,
    method: StepMethod,
) -> Result<LatticeDistribution> {
    if steps == 0 {
        return Err(Error::param("steps", "must be at least 1"));
    }
    if dist.n() != spec.n {
        return Err(Error::DimensionMismatch {
            expected: spec.n,
            actual: dist.n(),
        });
    }
    MasterPropagator::new(spec, dist.h, dist.half_width(), method)?.evolve(dist, steps)
}

/// Draws one jump `k` with probability `K(k)/Z` by inverse transform.
pub fn sample_jump<'a, R: Rng + ?Sized>(table: &'a JumpSamplerTable, rng: &mut R) -> &'a [i64] {
    let u: f64 = rng.random();
    table.jump(table.locate(u))
}

/// Positions of independent walkers started at the origin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WalkEnsemble {
    n: usize,
    positions: Vec<i64>,
    steps_taken: u64,
    rng_seed: u64,
    alpha_bits: u64,
}

impl WalkEnsemble {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.positions.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn position(&self, i: usize) -> &[i64] {
        &self.positions[i * self.n..(i + 1) * self.n]
    }

    pub fn positions(&self) -> impl Iterator<Item = &[i64]> {
        self.positions.chunks(self.n)
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps_taken
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    /// Same walkers in a different order (test support for order invariance).
    pub fn permuted(&self, order: &[usize]) -> Self {
        let mut positions = Vec::with_capacity(self.positions.len());
        for &i in order {
            positions.extend_from_slice(self.position(i));
        }
        Self {
            positions,
            ..self.clone()
        }
    }
}

/// Random stream for walker `index`.
///
/// ChaCha8 keyed by `seed` through `seed_from_u64`, with the walker index as
/// the 64-bit stream id. This mapping is part of the output contract: the
/// same `(seed, index)` always yields the same jump sequence.
pub fn walker_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Simulates `walkers` independent walks of `steps` jumps each.
pub fn simulate_ensemble(
    table: &JumpSamplerTable,
    walkers: usize,
    steps: u64,
    seed: u64,
) -> Result<WalkEnsemble> {
    if walkers == 0 {
        return Err(Error::param("walkers", "must be at least 1"));
    }
    let n = table.spec().n;
    let mut positions = vec![0i64; walkers * n];
    par::for_each_chunk_mut(&mut positions, n, |i, pos| {
        let mut rng = walker_rng(seed, i as u64);
        for _ in 0..steps {
            for (p, k) in pos.iter_mut().zip(sample_jump(table, &mut rng)) {
                *p += k;
            }
        }
    });
    Ok(WalkEnsemble {
        n,
        positions,
        steps_taken: steps,
        rng_seed: seed,
        alpha_bits: table.spec().alpha.to_bits(),
    })
}

/// Histogram of walker sites, scaled by `1/N`; walkers outside the box leak.
pub fn empirical_distribution(
    ens: &WalkEnsemble,
    h: f64,
    half_width: usize,
) -> Result<LatticeDistribution> {
    let shape = validated_shape(ens.n, h, half_width)?;
    let (counts, outside) = site_counts(ens, &shape);
    let total = ens.len() as f64;
    let mass = counts.iter().map(|&c| c as f64 / total).collect();
    let alpha = f64::from_bits(ens.alpha_bits);
    Ok(LatticeDistribution {
        shape,
        h,
        mass,
        steps: ens.steps_taken,
        time: ens.steps_taken as f64 * h.powf(alpha),
        leaked: outside as f64 / total,
    })
}

/// Integer site counts on the box and the number of walkers outside it.
pub fn site_counts(ens: &WalkEnsemble, shape: &BoxShape) -> (Vec<u64>, u64) {
    let mut counts = vec![0u64; shape.len()];
    let mut outside = 0u64;
    for k in ens.positions() {
        match shape.index(k) {
            Some(i) => counts[i] += 1,
            None => outside += 1,
        }
    }
    (counts, outside)
}

/// One-step characteristic function `Σ_k K(k)/Z cos(h k·ξ)`.
pub fn one_step_characteristic(spec: &KernelSpec, h: f64, xi: &[f64]) -> f64 {
    let n = spec.n;
    let pts = ball_points(n, spec.trunc_radius);
    let mut acc = CompensatedSum::new();
    for k in pts.chunks(n) {
        let phase: f64 = k.iter().zip(xi).map(|(&c, &x)| h * c as f64 * x).sum();
        acc.add(kernel_value(k, spec) * phase.cos());
    }
    acc.value() / spec.normalization
}

/// Exact characteristic function of the `m`-step displacement,
/// `φ_m(ξ) = [Σ_k K(k)/Z cos(h k·ξ)]^m`. Real because `K` is even.
pub fn walk_characteristic_function(spec: &KernelSpec, h: f64, xi: &[f64], steps: u64) -> f64 {
    if steps == 0 {
        return 1.0;
    }
    let one = one_step_characteristic(spec, h, xi);
    match i32::try_from(steps) {
        Ok(m) => one.powi(m),
        Err(_) => one.signum().powf(steps as f64 % 2.0) * one.abs().powf(steps as f64),
    }
}

/// Total-variation distance, leaked mass treated as one extra site.
pub fn total_variation(a: &LatticeDistribution, b: &LatticeDistribution) -> Result<f64> {
    if a.shape != b.shape {
        return Err(Error::param("distribution", "boxes differ"));
    }
    let mut acc = CompensatedSum::new();
    for (x, y) in a.mass.iter().zip(&b.mass) {
        acc.add((x - y).abs());
    }
    acc.add((a.leaked - b.leaked).abs());
    Ok(0.5 * acc.value())
}

/// Pearson goodness-of-fit result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson χ² of observed counts against expected probabilities.
///
/// Bins are visited in the given order and merged greedily until each pooled
/// bin expects at least five counts; a short final pool is folded into the
/// previous one.
pub fn chi_square_test(observed: &[u64], expected: &[f64]) -> Result<ChiSquare> {
    if observed.len() != expected.len() || observed.is_empty() {
        return Err(Error::param(
            "observed",
            "length must match expected and be nonzero",
        ));
    }
    let total: u64 = observed.iter().sum();
    let total_f = total as f64;
    let mut pools: Vec<(f64, f64)> = Vec::new();
    let (mut o, mut e) = (0.0, 0.0);
    for (&ob, &ex) in observed.iter().zip(expected) {
        o += ob as f64;
        e += ex * total_f;
        if e >= 5.0 {
            pools.push((o, e));
            o = 0.0;
            e = 0.0;
        }
    }
    if e > 0.0 || o > 0.0 {
        match pools.last_mut() {
            Some(last) => {
                last.0 += o;
                last.1 += e;
            }
            None => pools.push((o, e)),
        }
    }
    if pools.len() < 2 {
        return Ok(ChiSquare {
            statistic: 0.0,
            dof: 0,
            p_value: 1.0,
        });
    }
    let statistic: f64 = pools.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    let dof = pools.len() - 1;
    let dist = ChiSquared::new(dof as f64).map_err(|e| Error::Malformed(e.to_string()))?;
    Ok(ChiSquare {
        statistic,
        dof,
        p_value: dist.sf(statistic),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{build_sampler, build_spec};
    use proptest::prelude::*;
    use rand::Rng;

    fn spec(n: usize, alpha: f64, r: u64) -> KernelSpec {
        build_spec(n, alpha, r).unwrap()
    }

    #[test]
    fn delta_one_step_is_the_jump_law() {
        let s = spec(2, 0.9, 4);
        let d = LatticeDistribution::delta(2, 0.5, 6).unwrap();
        let next = master_step(&d, &s).unwrap();
        assert_eq!(next.mass_at(&[0, 0]), 0.0);
        for k in ball_points(2, 4).chunks(2) {
            let want = kernel_value(k, &s) / s.normalization;
            assert!((next.mass_at(k) - want).abs() < 1e-16);
        }
        assert_eq!(next.leaked(), 0.0);
        assert_eq!(next.steps(), 1);
        assert_eq!(next.time(), 0.5f64.powf(0.9));
        // input untouched
        assert_eq!(d.mass_at(&[0, 0]), 1.0);
    }

    #[test]
    fn uniform_interior_is_fixed() {
        let s = spec(1, 1.2, 5);
        let m = 40;
        let mass = vec![1.0 / 81.0; 2 * m + 1];
        let d = LatticeDistribution::from_masses(1, 0.1, m, mass).unwrap();
        let next = master_step(&d, &s).unwrap();
        for k in -(m as i64 - 5)..=(m as i64 - 5) {
            assert!((next.mass_at(&[k]) - 1.0 / 81.0).abs() < 1e-16);
        }
    }

    #[test]
    fn evolve_composes_bitwise() {
        let s = spec(1, 1.0, 8);
        let d = LatticeDistribution::delta(1, 0.1, 30).unwrap();
        let one = evolve(&d, &s, 1).unwrap();
        assert_eq!(one, master_step(&d, &s).unwrap());
        let a = evolve(&evolve(&d, &s, 3).unwrap(), &s, 4).unwrap();
        let b = evolve(&d, &s, 7).unwrap();
        assert_eq!(a.mass(), b.mass());
        assert_eq!(a.leaked(), b.leaked());
        assert_eq!(a.steps(), 7);
    }

    #[test]
    fn delta_stays_even() {
        let s = spec(1, 1.0, 12);
        let d = LatticeDistribution::delta(1, 0.1, 50).unwrap();
        let out = evolve(&d, &s, 10).unwrap();
        assert!(out.is_even());
        let s2 = spec(2, 0.6, 3);
        let d2 = LatticeDistribution::delta(2, 0.1, 8).unwrap();
        assert!(evolve(&d2, &s2, 5).unwrap().is_even());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let s = spec(2, 1.0, 2);
        let d = LatticeDistribution::delta(1, 0.1, 5).unwrap();
        assert!(matches!(
            master_step(&d, &s),
            Err(Error::DimensionMismatch {
                expected: 2,
                actual: 1
            })
        ));
    }

    #[test]
    fn fft_path_agrees_with_direct() {
        for (n, r, m) in [(1usize, 30u64, 60usize), (2, 6, 10), (3, 2, 4)] {
            let s = spec(n, 0.8, r);
            let d = LatticeDistribution::delta(n, 0.2, m).unwrap();
            let direct = evolve_with(&d, &s, 6, StepMethod::Direct).unwrap();
            let fast = evolve_with(&d, &s, 6, StepMethod::Fft).unwrap();
            for (a, b) in direct.mass().iter().zip(fast.mass()) {
                assert!((a - b).abs() < 1e-10);
            }
            assert!((direct.leaked() - fast.leaked()).abs() < 1e-10);
        }
    }

    #[test]
    fn sampler_two_point_frequency() {
        let t = build_sampler(&spec(1, 1.0, 1));
        let mut rng = walker_rng(7, 0);
        let draws = 1_000_000;
        let plus = (0..draws)
            .filter(|_| sample_jump(&t, &mut rng)[0] == 1)
            .count();
        let freq = plus as f64 / draws as f64;
        assert!((freq - 0.5).abs() < 0.0016, "freq {freq}");
    }

    #[test]
    fn sampler_ratio_and_chi_square() {
        let t = build_sampler(&spec(1, 1.0, 2));
        let mut rng = walker_rng(11, 3);
        let draws = 1_000_000u64;
        let mut counts = vec![0u64; t.len()];
        for _ in 0..draws {
            let u: f64 = rng.random();
            counts[t.locate(u)] += 1;
        }
        let far = (counts[2] + counts[3]) as f64;
        let near = (counts[0] + counts[1]) as f64;
        let ratio = far / near;
        // delta-method σ of the ratio for p_far = 0.2, p_near = 0.8
        let (pf, pn) = (0.2, 0.8);
        let sigma = (pf / pn) * ((1.0 / pf + 1.0 / pn) / draws as f64).sqrt();
        assert!((ratio - 0.25).abs() < 3.0 * sigma, "ratio {ratio}");
        let chi = chi_square_test(&counts, t.probabilities()).unwrap();
        assert!(chi.p_value > 0.001, "{chi:?}");
    }

    #[test]
    fn sampler_chi_square_two_dimensions() {
        let t = build_sampler(&spec(2, 0.7, 6));
        let mut rng = walker_rng(5, 1);
        let mut counts = vec![0u64; t.len()];
        for _ in 0..1_000_000 {
            let u: f64 = rng.random();
            counts[t.locate(u)] += 1;
        }
        let chi = chi_square_test(&counts, t.probabilities()).unwrap();
        assert!(chi.p_value > 0.001, "{chi:?}");
    }

    #[test]
    fn chi_square_rejects_wrong_model() {
        let observed = vec![600u64, 400];
        let chi = chi_square_test(&observed, &[0.5, 0.5]).unwrap();
        assert!(chi.p_value < 1e-6);
    }

    #[test]
    fn ensemble_basics() {
        let t = build_sampler(&spec(2, 1.0, 3));
        let e = simulate_ensemble(&t, 10, 0, 1).unwrap();
        assert!(e.positions().all(|p| p == [0, 0]));
        assert!(simulate_ensemble(&t, 0, 3, 1).is_err());
        let a = simulate_ensemble(&t, 100, 5, 9).unwrap();
        let b = simulate_ensemble(&t, 100, 5, 9).unwrap();
        assert_eq!(a, b);
        let c = simulate_ensemble(&t, 100, 5, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn ensemble_prefix_is_stable_across_sizes() {
        let t = build_sampler(&spec(1, 1.3, 20));
        let small = simulate_ensemble(&t, 50, 8, 3).unwrap();
        let large = simulate_ensemble(&t, 500, 8, 3).unwrap();
        for i in 0..50 {
            assert_eq!(small.position(i), large.position(i));
        }
    }

    #[test]
    fn ensemble_mean_is_centered() {
        let t = build_sampler(&spec(1, 1.5, 10));
        let e = simulate_ensemble(&t, 100_000, 10, 42).unwrap();
        let xs: Vec<f64> = e.positions().map(|p| p[0] as f64).collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 3.0 * (var / n).sqrt(), "mean {mean}");
    }

    #[test]
    fn empirical_distribution_counts() {
        let t = build_sampler(&spec(1, 1.0, 4));
        let origin = simulate_ensemble(&t, 1, 0, 0).unwrap();
        let d = empirical_distribution(&origin, 0.1, 3).unwrap();
        assert_eq!(d.mass_at(&[0]), 1.0);
        assert_eq!(d.leaked(), 0.0);

        let e = simulate_ensemble(&t, 1000, 6, 2).unwrap();
        let d = empirical_distribution(&e, 0.1, 5).unwrap();
        let (counts, out) = site_counts(&e, &d.shape());
        assert_eq!(counts.iter().sum::<u64>() + out, 1000);
        assert!((d.total_mass() + d.leaked() - 1.0).abs() < 1e-12);

        let order: Vec<usize> = (0..1000).rev().collect();
        let d2 = empirical_distribution(&e.permuted(&order), 0.1, 5).unwrap();
        assert_eq!(d, d2);
    }

    #[test]
    fn characteristic_function_edges() {
        let s = spec(2, 0.8, 5);
        assert!((walk_characteristic_function(&s, 0.1, &[0.0, 0.0], 7) - 1.0).abs() < 1e-14);
        assert_eq!(walk_characteristic_function(&s, 0.1, &[1.0, 2.0], 0), 1.0);
    }

    #[test]
    fn characteristic_function_range_and_monotonicity() {
        let s = spec(1, 1.0, 200);
        for j in 0..200 {
            let xi = j as f64 * 0.37;
            let one = one_step_characteristic(&s, 0.1, &[xi]);
            assert!((-1.0..=1.0).contains(&one));
            for m in 0..10 {
                let a = walk_characteristic_function(&s, 0.1, &[xi], m);
                let b = walk_characteristic_function(&s, 0.1, &[xi], m + 1);
                assert!((-1.0..=1.0).contains(&a));
                if (0.0..=1.0).contains(&one) {
                    assert!(b.abs() <= a.abs());
                }
            }
        }
    }

    #[test]
    fn dft_of_master_distribution_matches_characteristic_function() {
        let s = spec(1, 1.0, 40);
        let h = 0.1;
        let d = evolve(&LatticeDistribution::delta(1, h, 400).unwrap(), &s, 8).unwrap();
        for &xi in &[0.0, 0.5, 1.3, 4.0] {
            let (re, im) = d.fourier(&[xi]);
            let exact = walk_characteristic_function(&s, h, &[xi], 8);
            assert!((re - exact).abs() <= d.leaked() + 1e-12);
            assert!(im.abs() < 1e-12);
        }
    }

    #[test]
    fn csv_layout() {
        let d = LatticeDistribution::delta(2, 0.5, 1).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "k1,k2,mass");
        assert_eq!(lines.len(), 10);
        assert_eq!(lines[5], "0,0,1");
    }

    #[test]
    fn fft_sizes_are_smooth() {
        assert_eq!(fft_size(1000), 1000);
        assert_eq!(fft_size(1001), 1024);
        assert_eq!(fft_size(7), 8);
        assert_eq!(fft_size(11), 12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn conservation_and_maximum_principle(
            seed in any::<u64>(),
            alpha in 0.2f64..1.9,
            r in 1u64..8,
            n in 1usize..=2,
        ) {
            let s = build_spec(n, alpha, r).unwrap();
            let m = 6usize;
            let side = 2 * m + 1;
            let len = side.pow(n as u32);
            let mut rng = walker_rng(seed, 0);
            let raw: Vec<f64> = (0..len).map(|_| rng.random::<f64>()).collect();
            let total: f64 = raw.iter().sum();
            let mass: Vec<f64> = raw.iter().map(|x| 0.9 * x / total).collect();
            let d = LatticeDistribution::from_masses(n, 0.3, m, mass).unwrap();
            let next = master_step(&d, &s).unwrap();
            let before = d.total_mass() + d.leaked();
            let after = next.total_mass() + next.leaked();
            prop_assert!((before - after).abs() < 1e-12);
            let max_before = d.mass().iter().cloned().fold(0.0, f64::max);
            let max_after = next.mass().iter().cloned().fold(0.0, f64::max);
            prop_assert!(max_after <= max_before + 1e-16);
            prop_assert!(next.mass().iter().all(|&x| x >= 0.0));
        }
    }
}
