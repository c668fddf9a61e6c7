//! Experiment runner behind the `fraclap` binary.
//!
//! Every experiment is a pure function of an [`ExperimentConfig`] that
//! returns a typed report; [`execute`] serializes that report together with
//! its CSV tables into an output directory. Files are written to a temporary
//! name and renamed into place. Wall-clock timestamps go only to `run.log`,
//! so all other outputs are byte-identical across reruns of the same config.
//!
//! Time convention: the master equation with step `τ = h^α` and jump law
//! `K(k)/Z` converges to `∂_t u = -(A/Z) (-Δ)^{α/2} u`, where `A = A(n, α)`
//! from [`crate::symbol::a_constant`] and `Z` is the kernel normalization.
//! A walk run to time `T` is therefore compared with the fractional heat
//! semigroup at `t = A T / Z`.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fraclap_ops::{
    fraclap_spectral, heat_evolve_spectral, GridFunction, QuadratureConfig, QuadratureStencil,
};
use crate::kernel::{beta_moment_partial, build_sampler, build_spec, classify_moment, MomentClass};
use crate::lattice_walk::{
    chi_square_test, empirical_distribution, simulate_ensemble, site_counts, total_variation,
    walk_characteristic_function, LatticeDistribution, MasterPropagator, StepMethod,
};
use crate::numerics::least_squares_slope;
use crate::symbol::{
    a_constant, rotation_2d, verify_homogeneity, verify_rotation, HomogeneityReport,
    RotationReport, SymbolConfig,
};

/// Version stamped into every JSON output.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Walk,
    Evolve,
    Symbol,
    Operators,
    #[default]
    Converge,
    Moments,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Walk => "walk",
            ExperimentKind::Evolve => "evolve",
            ExperimentKind::Symbol => "symbol",
            ExperimentKind::Operators => "operators",
            ExperimentKind::Converge => "converge",
            ExperimentKind::Moments => "moments",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InitialCondition {
    Delta,
    /// `cos⁴(π|x| / 2w)` on `|x| < w`, zero outside; `C³` with compact support.
    #[default]
    Bump,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceMode {
    /// Exact walk characteristic function against `exp(-t|ξ|^α)`; no box.
    #[default]
    Characteristic,
    /// Master equation on a box against the spectral heat flow on a torus.
    Spectral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ErrorNorm {
    #[default]
    Sup,
    L1,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Largest accepted sup relative error of quadrature against spectral.
    pub operator_rel: f64,
    /// Largest accepted `|J/(A|ξ|^α) - 1|`.
    pub homogeneity: f64,
    /// Largest accepted leaked mass in box simulations.
    pub leak_cap: f64,
    /// Smallest accepted fitted convergence order.
    pub min_order: f64,
    /// Smallest accepted chi-square p-value.
    pub chi_square_p: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            operator_rel: 1e-2,
            homogeneity: 1e-2,
            leak_cap: 2e-2,
            min_order: 0.0,
            chi_square_p: 1e-3,
        }
    }
}

/// Full description of one run. JSON field names match the struct fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub n: usize,
    pub alpha: f64,
    /// Lattice truncation radius `R` for walk, evolve and moments.
    pub trunc_radius: u64,
    /// Box half width `M` in lattice units.
    pub half_width: usize,
    pub h: f64,
    /// Lattice spacings for `converge`, strictly decreasing.
    pub h_list: Vec<f64>,
    /// Time horizon `T`.
    pub time: f64,
    pub walkers: usize,
    pub steps: u64,
    pub seed: u64,
    pub step_method: StepMethod,
    pub initial: InitialCondition,
    pub bump_width: f64,
    /// Torus period `L` for `operators`.
    pub period: f64,
    /// Grid sizes `P` for `operators`, strictly increasing.
    pub points: Vec<usize>,
    pub quadrature: QuadratureConfig,
    /// Multiplies `A(n, α)` in `operators`; anything but 1 is a deliberate fault.
    pub constant_scale: f64,
    pub symbol: SymbolConfig,
    /// `|ξ|` values probed by `symbol`.
    pub xi_magnitudes: Vec<f64>,
    pub betas: Vec<f64>,
    pub moment_base_radius: u64,
    pub moment_factor: u64,
    pub moment_levels: usize,
    pub reference: ReferenceMode,
    /// Physical jump cutoff for `converge`; the lattice radius is `round(ρ/h)`.
    pub jump_radius: f64,
    /// Physical box half width for `converge` in spectral mode.
    pub extent: f64,
    /// Largest `|ξ|` compared in characteristic mode.
    pub xi_max: f64,
    pub xi_count: usize,
    pub norm: ErrorNorm,
    pub tolerances: Tolerances,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::default(),
            n: 1,
            alpha: 1.0,
            trunc_radius: 100,
            half_width: 2000,
            h: 0.1,
            h_list: vec![0.2, 0.1, 0.05],
            time: 1.0,
            walkers: 100_000,
            steps: 50,
            seed: 0,
            step_method: StepMethod::Auto,
            initial: InitialCondition::Bump,
            bump_width: 0.5,
            period: 1.0,
            points: vec![256, 512, 1024],
            quadrature: QuadratureConfig::default()
                .with_outer_radius(16.5)
                .with_tail(true),
            constant_scale: 1.0,
            symbol: SymbolConfig::default(),
            xi_magnitudes: vec![0.5, 1.0, 2.0, 4.0],
            betas: vec![0.5, 1.0],
            moment_base_radius: 100,
            moment_factor: 4,
            moment_levels: 6,
            reference: ReferenceMode::Characteristic,
            jump_radius: 1000.0,
            extent: 100.0,
            xi_max: 4.0,
            xi_count: 16,
            norm: ErrorNorm::Sup,
            tolerances: Tolerances::default(),
        }
    }
}

fn positive(v: f64) -> bool {
    v > 0.0 && v.is_finite()
}

impl ExperimentConfig {
    /// Checks every field relevant to `kind` and reports all problems at once.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let mut bad = |cond: bool, msg: String| {
            if cond {
                errs.push(msg);
            }
        };
        bad(
            !(1..=3).contains(&self.n),
            format!("n: must be 1, 2 or 3, got {}", self.n),
        );
        bad(
            !(self.alpha > 0.0 && self.alpha < 2.0),
            format!("alpha: must lie strictly inside (0, 2), got {}", self.alpha),
        );
        let t = &self.tolerances;
        bad(
            !positive(t.operator_rel),
            "tolerances.operator_rel: must be positive".into(),
        );
        bad(
            !positive(t.homogeneity),
            "tolerances.homogeneity: must be positive".into(),
        );
        bad(
            !(t.leak_cap > 0.0 && t.leak_cap <= 1.0),
            "tolerances.leak_cap: must lie in (0, 1]".into(),
        );
        bad(
            !t.min_order.is_finite(),
            "tolerances.min_order: must be finite".into(),
        );
        bad(
            !(0.0..1.0).contains(&t.chi_square_p),
            "tolerances.chi_square_p: must lie in [0, 1)".into(),
        );
        if let Err(e) = self.symbol.validate() {
            bad(true, format!("symbol: {e}"));
        }
        let box_sites = (2 * self.half_width + 1) as f64;
        match self.kind {
            ExperimentKind::Walk | ExperimentKind::Evolve => {
                bad(
                    self.trunc_radius == 0,
                    "trunc_radius: must be at least 1".into(),
                );
                bad(
                    self.half_width == 0,
                    "half_width: must be at least 1".into(),
                );
                bad(
                    !positive(self.h),
                    format!("h: must be positive, got {}", self.h),
                );
                bad(
                    box_sites.powi(self.n as i32) > 5e7,
                    "half_width: box too large for this dimension".into(),
                );
                if self.kind == ExperimentKind::Walk {
                    bad(self.walkers == 0, "walkers: must be at least 1".into());
                    bad(self.steps == 0, "steps: must be at least 1".into());
                } else {
                    bad(
                        !positive(self.time),
                        format!("time: must be positive, got {}", self.time),
                    );
                    bad(
                        !positive(self.bump_width),
                        "bump_width: must be positive".into(),
                    );
                }
            }
            ExperimentKind::Symbol => {
                bad(
                    self.xi_magnitudes.is_empty(),
                    "xi_magnitudes: must not be empty".into(),
                );
                bad(
                    self.xi_magnitudes.iter().any(|&m| !positive(m)),
                    "xi_magnitudes: entries must be positive".into(),
                );
            }
            ExperimentKind::Operators => {
                bad(!positive(self.period), "period: must be positive".into());
                bad(self.points.is_empty(), "points: must not be empty".into());
                bad(
                    self.points.iter().any(|&p| p < 4),
                    "points: entries must be at least 4".into(),
                );
                bad(
                    self.points.windows(2).any(|w| w[1] <= w[0]),
                    "points: must be strictly increasing".into(),
                );
                bad(
                    self.points
                        .iter()
                        .any(|&p| (p as f64).powi(2 * self.n as i32) > 2e10),
                    "points: quadrature cost P^(2n) exceeds 2e10".into(),
                );
                if let Some(r) = self.quadrature.outer_radius {
                    bad(
                        !positive(r),
                        "quadrature.outer_radius: must be positive".into(),
                    );
                }
                bad(
                    !positive(self.constant_scale),
                    "constant_scale: must be positive".into(),
                );
            }
            ExperimentKind::Converge => {
                bad(
                    !positive(self.time),
                    format!("time: must be positive, got {}", self.time),
                );
                bad(
                    self.h_list.len() < 2,
                    "h_list: needs at least two spacings".into(),
                );
                bad(
                    self.h_list.iter().any(|&h| !positive(h)),
                    "h_list: entries must be positive".into(),
                );
                bad(
                    self.h_list.windows(2).any(|w| w[1] >= w[0]),
                    "h_list: must be strictly decreasing".into(),
                );
                bad(
                    !positive(self.jump_radius),
                    "jump_radius: must be positive".into(),
                );
                let finest = self.h_list.iter().cloned().fold(f64::INFINITY, f64::min);
                if positive(finest) && positive(self.jump_radius) {
                    let r = (self.jump_radius / finest).round();
                    bad(
                        r.powi(self.n as i32) > 5e7,
                        "jump_radius: too many lattice jumps at the finest h".into(),
                    );
                }
                match self.reference {
                    ReferenceMode::Characteristic => {
                        bad(!positive(self.xi_max), "xi_max: must be positive".into());
                        bad(self.xi_count == 0, "xi_count: must be at least 1".into());
                    }
                    ReferenceMode::Spectral => {
                        bad(!positive(self.extent), "extent: must be positive".into());
                        bad(
                            !positive(self.bump_width),
                            "bump_width: must be positive".into(),
                        );
                        if positive(finest) && positive(self.extent) {
                            let m = 2.0 * (self.extent / finest).round() + 1.0;
                            bad(
                                m.powi(self.n as i32) > 5e7,
                                "extent: box too large at the finest h".into(),
                            );
                        }
                    }
                }
            }
            ExperimentKind::Moments => {
                bad(self.betas.is_empty(), "betas: must not be empty".into());
                bad(
                    self.betas.iter().any(|&b| !(b >= 0.0 && b.is_finite())),
                    "betas: entries must be nonnegative".into(),
                );
                bad(
                    self.trunc_radius == 0,
                    "trunc_radius: must be at least 1".into(),
                );
                bad(
                    self.moment_base_radius == 0,
                    "moment_base_radius: must be at least 1".into(),
                );
                bad(
                    self.moment_factor < 2,
                    "moment_factor: must be at least 2".into(),
                );
                bad(
                    self.moment_levels < 3,
                    "moment_levels: must be at least 3".into(),
                );
                let top = (self.moment_base_radius as f64)
                    * (self.moment_factor as f64).powi(self.moment_levels.saturating_sub(1) as i32);
                let cap = [0.0, 1e7, 5e3, 300.0][self.n.min(3)];
                bad(
                    top > cap,
                    format!(
                        "moment_levels: largest radius {top} exceeds {cap} for n = {}",
                        self.n
                    ),
                );
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Merges `overlay` into `base`, recording keys that `base` does not know.
fn merge(base: &mut Value, overlay: &Value, path: &str, unknown: &mut Vec<String>) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                let here = if path.is_empty() {
                    k.clone()
                } else {
                    format!("{path}.{k}")
                };
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => {
                        merge(slot, v, &here, unknown)
                    }
                    Some(slot) => *slot = v.clone(),
                    None => unknown.push(format!("{here}: unknown field")),
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

/// Builds a config from defaults, an optional JSON file, then `key=value`
/// overrides (dotted keys reach nested tables; values parse as JSON and fall
/// back to strings). Later sources win. The subcommand fixes `kind`.
pub fn load_config(
    file: Option<&Path>,
    overrides: &[String],
    kind: ExperimentKind,
) -> Result<ExperimentConfig> {
    let mut value = serde_json::to_value(ExperimentConfig::default())?;
    let mut problems = Vec::new();
    if let Some(path) = file {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parsed: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(vec![format!("{}: {e}", path.display())]))?;
        if !parsed.is_object() {
            return Err(Error::Config(vec![format!(
                "{}: top level must be an object",
                path.display()
            )]));
        }
        merge(&mut value, &parsed, "", &mut problems);
    }
    for item in overrides {
        let Some((key, raw)) = item.split_once('=') else {
            problems.push(format!("--set {item}: expected key=value"));
            continue;
        };
        let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut nested = parsed;
        for part in key.rsplit('.') {
            let mut obj = serde_json::Map::new();
            obj.insert(part.to_string(), nested);
            nested = Value::Object(obj);
        }
        merge(&mut value, &nested, "", &mut problems);
    }
    value["kind"] = serde_json::to_value(kind)?;
    let config: std::result::Result<ExperimentConfig, _> = serde_json::from_value(value);
    let config = match config {
        Ok(c) => c,
        Err(e) => {
            problems.push(e.to_string());
            return Err(Error::Config(problems));
        }
    };
    if let Err(Error::Config(more)) = config.validate() {
        problems.extend(more);
    }
    if problems.is_empty() {
        Ok(config)
    } else {
        Err(Error::Config(problems))
    }
}

fn bump(width: f64) -> impl Fn(&[f64]) -> f64 {
    move |x: &[f64]| {
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r >= width {
            0.0
        } else {
            (0.5 * std::f64::consts::PI * r / width).cos().powi(4)
        }
    }
}

fn initial_distribution(
    cfg: &ExperimentConfig,
    h: f64,
    half_width: usize,
) -> Result<LatticeDistribution> {
    match cfg.initial {
        InitialCondition::Delta => LatticeDistribution::delta(cfg.n, h, half_width),
        InitialCondition::Bump => {
            LatticeDistribution::from_density(cfg.n, h, half_width, bump(cfg.bump_width))
        }
    }
}

fn steps_for(time: f64, h: f64, alpha: f64) -> u64 {
    ((time / h.powf(alpha)).round() as u64).max(1)
}

fn leak_hint(cfg: &ExperimentConfig, half_width: usize) -> String {
    format!(
        "enlarge the box (half width {half_width} sites, {:.3} in space) or shorten the time horizon",
        half_width as f64 * cfg.h
    )
}

// ---------------------------------------------------------------- walk

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkRow {
    pub site: Vec<i64>,
    pub count: u64,
    pub empirical: f64,
    pub master: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkReport {
    pub schema_version: u32,
    pub config_hash: String,
    pub walkers: usize,
    pub steps: u64,
    pub seed: u64,
    pub occupied_sites: usize,
    pub total_variation: f64,
    /// CLT envelope `4 √(S/N)` with `S` occupied sites.
    pub tv_envelope: f64,
    pub chi_square: f64,
    pub chi_square_dof: usize,
    pub chi_square_p: f64,
    pub empirical_leaked: f64,
    pub master_leaked: f64,
    pub pass: bool,
    #[serde(skip)]
    pub rows: Vec<WalkRow>,
}

/// Monte Carlo ensemble against the master equation from a delta.
pub fn run_walk(cfg: &ExperimentConfig) -> Result<WalkReport> {
    let spec = build_spec(cfg.n, cfg.alpha, cfg.trunc_radius)?;
    let table = build_sampler(&spec);
    let ens = simulate_ensemble(&table, cfg.walkers, cfg.steps, cfg.seed)?;
    let emp = empirical_distribution(&ens, cfg.h, cfg.half_width)?;
    let start = LatticeDistribution::delta(cfg.n, cfg.h, cfg.half_width)?;
    let master = MasterPropagator::new(&spec, cfg.h, cfg.half_width, cfg.step_method)?
        .evolve(&start, cfg.steps)?;
    let shape = master.shape();
    let (counts, outside) = site_counts(&ens, &shape);
    let occupied = counts.iter().filter(|&&c| c > 0).count() + usize::from(outside > 0);
    let tv = total_variation(&emp, &master)?;
    let envelope = 4.0 * (occupied as f64 / cfg.walkers as f64).sqrt();

    let mut observed = counts.clone();
    observed.push(outside);
    let mut expected = master.mass().to_vec();
    expected.push(master.leaked());
    let chi = chi_square_test(&observed, &expected)?;

    let rows = (0..shape.len())
        .filter(|&i| counts[i] > 0 || master.mass()[i] > 0.0)
        .map(|i| WalkRow {
            site: shape.coords(i),
            count: counts[i],
            empirical: emp.mass()[i],
            master: master.mass()[i],
        })
        .collect();
    Ok(WalkReport {
        schema_version: SCHEMA_VERSION,
        config_hash: cfg.hash(),
        walkers: cfg.walkers,
        steps: cfg.steps,
        seed: cfg.seed,
        occupied_sites: occupied,
        total_variation: tv,
        tv_envelope: envelope,
        chi_square: chi.statistic,
        chi_square_dof: chi.dof,
        chi_square_p: chi.p_value,
        empirical_leaked: emp.leaked(),
        master_leaked: master.leaked(),
        pass: tv < envelope && chi.p_value > cfg.tolerances.chi_square_p,
        rows,
    })
}

impl WalkReport {
    pub fn csv(&self, n: usize) -> String {
        let mut out = String::new();
        let cols: Vec<String> = (1..=n).map(|i| format!("k{i}")).collect();
        out.push_str(&format!("{},count,empirical,master\n", cols.join(",")));
        for r in &self.rows {
            let site: Vec<String> = r.site.iter().map(|c| c.to_string()).collect();
            out.push_str(&format!(
                "{},{},{},{}\n",
                site.join(","),
                r.count,
                r.empirical,
                r.master
            ));
        }
        out
    }
}

// ---------------------------------------------------------------- evolve

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolveReport {
    pub schema_version: u32,
    pub config_hash: String,
    pub requested_time: f64,
    pub steps: u64,
    pub time: f64,
    pub leaked: f64,
    pub leak_cap: f64,
    pub total_mass: f64,
    pub moments: Vec<crate::lattice_walk::MomentProbe>,
    pub pass: bool,
}

/// Master-equation evolution to the nearest reachable time.
pub fn run_evolve(cfg: &ExperimentConfig) -> Result<(EvolveReport, LatticeDistribution)> {
    let spec = build_spec(cfg.n, cfg.alpha, cfg.trunc_radius)?;
    let start = initial_distribution(cfg, cfg.h, cfg.half_width)?;
    let steps = steps_for(cfg.time, cfg.h, cfg.alpha);
    let dist = MasterPropagator::new(&spec, cfg.h, cfg.half_width, cfg.step_method)?
        .evolve(&start, steps)?;
    if dist.leaked() > cfg.tolerances.leak_cap {
        return Err(Error::LeakCap {
            leaked: dist.leaked(),
            cap: cfg.tolerances.leak_cap,
            hint: leak_hint(cfg, cfg.half_width),
        });
    }
    let summary = dist.summary(&cfg.betas);
    let report = EvolveReport {
        schema_version: SCHEMA_VERSION,
        config_hash: cfg.hash(),
        requested_time: cfg.time,
        steps,
        time: dist.time(),
        leaked: dist.leaked(),
        leak_cap: cfg.tolerances.leak_cap,
        total_mass: summary.total_mass,
        moments: summary.moments,
        pass: true,
    };
    Ok((report, dist))
}

// ---------------------------------------------------------------- symbol

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolReport {
    pub schema_version: u32,
    pub config_hash: String,
    pub n: usize,
    pub alpha: f64,
    pub a_value: f64,
    pub a_error: f64,
    pub homogeneity: Vec<HomogeneityReport>,
    pub rotations: Vec<RotationReport>,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// `A(n, α)`, homogeneity along two directions and, for `n ≥ 2`, rotations.
pub fn run_symbol(cfg: &ExperimentConfig) -> Result<SymbolReport> {
    let n = cfg.n;
    let (a_value, a_error) = a_constant(n, cfg.alpha, &cfg.symbol)?;
    let mut directions = vec![unit(n, 0)];
    if n >= 2 {
        let mut d = vec![0.0; n];
        d[0] = 0.6;
        d[1] = 0.8;
        directions.push(d);
    }
    let mut homogeneity = Vec::new();
    for d in &directions {
        let set: Vec<Vec<f64>> = cfg
            .xi_magnitudes
            .iter()
            .map(|&m| d.iter().map(|c| c * m).collect())
            .collect();
        homogeneity.push(verify_homogeneity(n, cfg.alpha, &set, &cfg.symbol)?);
    }
    let mut rotations = Vec::new();
    if n >= 2 {
        for &angle in &[std::f64::consts::FRAC_PI_2, 1.0, 2.5, -0.7] {
            let rot = embed_rotation(n, angle);
            rotations.push(verify_rotation(
                cfg.alpha,
                &directions[1],
                &rot,
                &cfg.symbol,
            )?);
        }
    }
    let max_deviation = homogeneity
        .iter()
        .fold(0.0f64, |m, r| m.max(r.max_deviation));
    let pass = max_deviation < cfg.tolerances.homogeneity && rotations.iter().all(|r| r.pass);
    Ok(SymbolReport {
        schema_version: SCHEMA_VERSION,
        config_hash: cfg.hash(),
        n,
        alpha: cfg.alpha,
        a_value,
        a_error,
        homogeneity,
        rotations,
        max_deviation,
        tolerance: cfg.tolerances.homogeneity,
        pass,
    })
}

fn unit(n: usize, axis: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[axis] = 1.0;
    v
}

/// Rotation by `angle` in the first coordinate plane, identity elsewhere.
pub fn embed_rotation(n: usize, angle: f64) -> Vec<f64> {
    let r = rotation_2d(angle);
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m[0] = r[0];
    m[1] = r[1];
    m[n] = r[2];
    m[n + 1] = r[3];
    m
}

impl SymbolReport {
    pub fn csv(&self) -> String {
        let cols: Vec<String> = (1..=self.n).map(|i| format!("xi{i}")).collect();
        let mut out = format!("{},value,error_estimate,ratio\n", cols.join(","));
        let mut e1 = vec![0.0; self.n];
        e1[0] = 1.0;
        let a_row: Vec<String> = e1.iter().map(|v| v.to_string()).collect();
        out.push_str(&format!(
            "{},{},{},1\n",
            a_row.join(","),
            self.a_value,
            self.a_error
        ));
        for rep in &self.homogeneity {
            for r in &rep.rows {
                let xi: Vec<String> = r.xi.iter().map(|v| v.to_string()).collect();
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    xi.join(","),
                    r.value,
                    r.error_estimate,
                    r.ratio
                ));
            }
        }
        out
    }
}

// ---------------------------------------------------------------- operators

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorRow {
    pub function: String,
    pub points: usize,
    pub sup_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorReport {
    pub schema_version: u32,
    pub config_hash: String,
    pub n: usize,
    pub alpha: f64,
    pub a_value: f64,
    pub a_error: f64,
    pub constant_scale: f64,
    pub quadrature: QuadratureConfig,
    pub rows: Vec<OperatorRow>,
    pub worst_error: f64,
    pub decreasing: bool,
    pub tolerance: f64,
    pub pass: bool,
}

/// Test functions: a constant and a two-mode trigonometric polynomial.
type TestFunction = Box<dyn Fn(&[f64]) -> f64>;

fn operator_tests(period: f64) -> Vec<(&'static str, TestFunction)> {
    let w = 2.0 * std::f64::consts::PI / period;
    let trig = move |x: &[f64]| {
        let s: f64 = x.iter().sum();
        (w * x[0]).cos() + 0.3 * (2.0 * w * s).sin()
    };
    vec![
        ("constant", Box::new(|_: &[f64]| 1.0)),
        ("trig", Box::new(trig)),
    ]
}

/// Sup relative error of `quadrature / (scale·A)` against the spectral
/// operator; absolute when the spectral side vanishes.
pub fn operator_error(
    u: &GridFunction,
    alpha: f64,
    a: f64,
    quad: &QuadratureConfig,
) -> Result<(f64, GridFunction, GridFunction)> {
    let spectral = fraclap_spectral(u, alpha)?;
    let q = QuadratureStencil::for_grid(u, alpha, quad)?.apply(u)?;
    let scale = spectral.sup_norm();
    let diff = q
        .values()
        .iter()
        .zip(spectral.values())
        .fold(0.0f64, |m, (q, s)| m.max((q / a - s).abs()));
    let err = if scale > 1e-12 { diff / scale } else { diff };
    Ok((err, spectral, q))
}

/// `(x, quadrature, spectral)` samples along the first axis.
pub type OperatorProfile = Vec<(f64, f64, f64)>;

/// Quadrature against spectral on every configured grid size.
pub fn run_operators(cfg: &ExperimentConfig) -> Result<(OperatorReport, OperatorProfile)> {
    let (a_value, a_error) = a_constant(cfg.n, cfg.alpha, &cfg.symbol)?;
    let a = a_value * cfg.constant_scale;
    let mut rows = Vec::new();
    let mut profile = Vec::new();
    for (name, f) in operator_tests(cfg.period) {
        let mut last_u = None;
        for &p in &cfg.points {
            let u = GridFunction::from_fn(cfg.n, cfg.period, p, &f)?;
            let (err, spectral, q) = operator_error(&u, cfg.alpha, a, &cfg.quadrature)?;
            rows.push(OperatorRow {
                function: name.to_string(),
                points: p,
                sup_rel_error: err,
            });
            last_u = Some((u, spectral, q));
        }
        if name == "trig" {
            if let Some((u, s, q)) = last_u {
                // profile along the first axis through the origin
                let p = u.points_per_axis();
                let stride = p.pow(cfg.n as u32 - 1);
                profile = (0..p)
                    .map(|j| {
                        (
                            u.point(j * stride)[0],
                            s.values()[j * stride],
                            q.values()[j * stride] / a,
                        )
                    })
                    .collect();
            }
        }
    }
    let trig: Vec<f64> = rows
        .iter()
        .filter(|r| r.function == "trig")
        .map(|r| r.sup_rel_error)
        .collect();
    let decreasing = trig.windows(2).all(|w| w[1] < w[0]);
    let worst_error = rows
        .iter()
        .filter(|r| r.points == *cfg.points.last().expect("validated"))
        .fold(0.0f64, |m, r| m.max(r.sup_rel_error));
    let pass = worst_error < cfg.tolerances.operator_rel && decreasing;
    Ok((
        OperatorReport {
            schema_version: SCHEMA_VERSION,
            config_hash: cfg.hash(),
            n: cfg.n,
            alpha: cfg.alpha,
            a_value,
            a_error,
            constant_scale: cfg.constant_scale,
            quadrature: cfg.quadrature,
            rows,
            worst_error,
            decreasing,
            tolerance: cfg.tolerances.operator_rel,
            pass,
        },
        profile,
    ))
}

// ---------------------------------------------------------------- converge

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub h: f64,
    pub trunc_radius: u64,
    pub steps: u64,
    pub time: f64,
    pub continuum_time: f64,
    pub normalization: f64,
    /// Kernel mass beyond the jump cutoff, relative to `Z`.
    pub truncated_mass_bound: f64,
    pub error: f64,
    pub leaked: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub schema_version: u32,
    pub config_hash: String,
    pub reference: String,
    pub norm: ErrorNorm,
    pub requested_time: f64,
    pub a_value: f64,
    pub a_error: f64,
    pub rows: Vec<ConvergenceRow>,
    pub fitted_order: f64,
    pub strictly_decreasing: bool,
    pub min_order: f64,
    pub pass: bool,
}

/// Walk-to-continuum convergence over `h_list`.
pub fn run_converge(cfg: &ExperimentConfig) -> Result<ConvergenceReport> {
    let (a_value, a_error) = a_constant(cfg.n, cfg.alpha, &cfg.symbol)?;
    let mut rows = Vec::with_capacity(cfg.h_list.len());
    for &h in &cfg.h_list {
        let r = ((cfg.jump_radius / h).round() as u64).max(1);
        let spec = build_spec(cfg.n, cfg.alpha, r)?;
        let steps = steps_for(cfg.time, h, cfg.alpha);
        let time = steps as f64 * h.powf(cfg.alpha);
        let t_cont = a_value * time / spec.normalization;
        let (error, leaked) = match cfg.reference {
            ReferenceMode::Characteristic => {
                (characteristic_error(cfg, &spec, h, steps, t_cont), 0.0)
            }
            ReferenceMode::Spectral => spectral_error(cfg, &spec, h, steps, t_cont)?,
        };
        rows.push(ConvergenceRow {
            h,
            trunc_radius: r,
            steps,
            time,
            continuum_time: t_cont,
            normalization: spec.normalization,
            truncated_mass_bound: spec.truncated_mass_bound / spec.normalization,
            error,
            leaked,
        });
    }
    let strictly_decreasing = rows.windows(2).all(|w| w[1].error < w[0].error);
    let usable = rows.iter().all(|r| r.error > 0.0 && r.error.is_finite());
    let fitted_order = if usable {
        let xs: Vec<f64> = rows.iter().map(|r| r.h.ln()).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.error.ln()).collect();
        least_squares_slope(&xs, &ys)
    } else {
        f64::NAN
    };
    let pass = usable && strictly_decreasing && fitted_order > cfg.tolerances.min_order;
    Ok(ConvergenceReport {
        schema_version: SCHEMA_VERSION,
        config_hash: cfg.hash(),
        reference: match cfg.reference {
            ReferenceMode::Characteristic => "characteristic-function".into(),
            ReferenceMode::Spectral => "spectral-heat".into(),
        },
        norm: cfg.norm,
        requested_time: cfg.time,
        a_value,
        a_error,
        rows,
        fitted_order,
        strictly_decreasing,
        min_order: cfg.tolerances.min_order,
        pass,
    })
}

/// Frequencies `j ξ_max / count` along the first axis, `j = 0..=count`.
fn probe_frequencies(cfg: &ExperimentConfig) -> Vec<Vec<f64>> {
    (0..=cfg.xi_count)
        .map(|j| {
            let mut xi = vec![0.0; cfg.n];
            xi[0] = cfg.xi_max * j as f64 / cfg.xi_count as f64;
            xi
        })
        .collect()
}

fn characteristic_error(
    cfg: &ExperimentConfig,
    spec: &crate::kernel::KernelSpec,
    h: f64,
    steps: u64,
    t_cont: f64,
) -> f64 {
    let diffs: Vec<f64> = probe_frequencies(cfg)
        .iter()
        .map(|xi| {
            let norm = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
            let walk = walk_characteristic_function(spec, h, xi, steps);
            (walk - (-t_cont * norm.powf(cfg.alpha)).exp()).abs()
        })
        .collect();
    match cfg.norm {
        ErrorNorm::Sup => diffs.iter().fold(0.0, |m, &d| m.max(d)),
        ErrorNorm::L1 => diffs.iter().sum::<f64>() / diffs.len() as f64,
    }
}

fn spectral_error(
    cfg: &ExperimentConfig,
    spec: &crate::kernel::KernelSpec,
    h: f64,
    steps: u64,
    t_cont: f64,
) -> Result<(f64, f64)> {
    let m = ((cfg.extent / h).round() as usize).max(1);
    let n = cfg.n;
    let start = initial_distribution(cfg, h, m)?;
    let dist = MasterPropagator::new(spec, h, m, cfg.step_method)?.evolve(&start, steps)?;
    if dist.leaked() > cfg.tolerances.leak_cap {
        return Err(Error::LeakCap {
            leaked: dist.leaked(),
            cap: cfg.tolerances.leak_cap,
            hint: leak_hint(cfg, m),
        });
    }
    // torus of period (2M+1)h whose grid points coincide with the lattice sites
    let p = 2 * m + 1;
    let period = p as f64 * h;
    let cell = h.powi(n as i32);
    let shape = dist.shape();
    let mut grid = vec![0.0; p.pow(n as u32)];
    for (i, &mass) in start.mass().iter().enumerate() {
        grid[torus_index(&shape.coords(i), p)] = mass / cell;
    }
    let u0 = GridFunction::new(n, period, p, grid)?;
    let reference = heat_evolve_spectral(&u0, cfg.alpha, t_cont)?;
    let scale = reference.sup_norm();
    let diffs: Vec<f64> = dist
        .mass()
        .iter()
        .enumerate()
        .map(|(i, &mass)| {
            (mass / cell - reference.values()[torus_index(&shape.coords(i), p)]).abs()
        })
        .collect();
    let err = match cfg.norm {
        ErrorNorm::Sup => diffs.iter().fold(0.0f64, |a, &d| a.max(d)) / scale,
        ErrorNorm::L1 => diffs.iter().sum::<f64>() * cell,
    };
    Ok((err + dist.leaked(), dist.leaked()))
}

fn torus_index(k: &[i64], p: usize) -> usize {
    k.iter()
        .fold(0usize, |acc, &c| acc * p + c.rem_euclid(p as i64) as usize)
}

impl ConvergenceReport {
    pub fn csv(&self) -> String {
        let mut out =
            String::from("h,trunc_radius,steps,time,continuum_time,normalization,error,leaked\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.h,
                r.trunc_radius,
                r.steps,
                r.time,
                r.continuum_time,
                r.normalization,
                r.error,
                r.leaked
            ));
        }
        out
    }
}

// ---------------------------------------------------------------- moments

/// Partial β-moments at geometrically growing radii and their growth rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentGrowth {
    pub beta: f64,
    pub radii: Vec<u64>,
    pub partial_sums: Vec<f64>,
    /// Least-squares slope of `ln(increment)` against `ln(radius)`; about
    /// `β - α` for this kernel.
    pub growth_exponent: f64,
    pub empirical: MomentClass,
    pub analytic: MomentClass,
}

/// Fits the increment exponent. Increments over `[r, λr]` scale like
/// `r^{β-α}`, so a clearly negative exponent means a convergent series.
pub fn moment_growth(
    spec: &crate::kernel::KernelSpec,
    beta: f64,
    base: u64,
    factor: u64,
    levels: usize,
) -> MomentGrowth {
    let radii: Vec<u64> = (0..levels).map(|j| base * factor.pow(j as u32)).collect();
    let partial_sums: Vec<f64> = radii
        .iter()
        .map(|&r| beta_moment_partial(spec, beta, r))
        .collect();
    let incs: Vec<f64> = partial_sums.windows(2).map(|w| w[1] - w[0]).collect();
    let xs: Vec<f64> = radii[..incs.len()]
        .iter()
        .map(|&r| (r as f64).ln())
        .collect();
    let ys: Vec<f64> = incs.iter().map(|d| d.max(f64::MIN_POSITIVE).ln()).collect();
    let growth_exponent = least_squares_slope(&xs, &ys);
    let empirical = if growth_exponent < -0.05 {
        MomentClass::Convergent
    } else {
        MomentClass::Divergent
    };
    MomentGrowth {
        beta,
        radii,
        partial_sums,
        growth_exponent,
        empirical,
        analytic: classify_moment(spec, beta),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub schema_version: u32,
    pub config_hash: String,
    pub n: usize,
    pub alpha: f64,
    pub growth: Vec<MomentGrowth>,
    pub pass: bool,
}

pub fn run_moments(cfg: &ExperimentConfig) -> Result<MomentReport> {
    let spec = build_spec(cfg.n, cfg.alpha, cfg.trunc_radius)?;
    let growth: Vec<MomentGrowth> = cfg
        .betas
        .iter()
        .map(|&b| {
            moment_growth(
                &spec,
                b,
                cfg.moment_base_radius,
                cfg.moment_factor,
                cfg.moment_levels,
            )
        })
        .collect();
    let pass = growth.iter().all(|g| g.empirical == g.analytic);
    Ok(MomentReport {
        schema_version: SCHEMA_VERSION,
        config_hash: cfg.hash(),
        n: cfg.n,
        alpha: cfg.alpha,
        growth,
        pass,
    })
}

impl MomentReport {
    pub fn csv(&self) -> String {
        let mut out = String::from("beta,radius,partial_sum\n");
        for g in &self.growth {
            for (r, s) in g.radii.iter().zip(&g.partial_sums) {
                out.push_str(&format!("{},{},{}\n", g.beta, r, s));
            }
        }
        out
    }
}

// ---------------------------------------------------------------- output

/// What a finished run wrote and whether it passed.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub kind: ExperimentKind,
    pub pass: bool,
    pub files: Vec<PathBuf>,
    pub summary: String,
}

/// Writes `bytes` to `dir/name` through a temporary file and a rename.
pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf> {
    let target = dir.join(name);
    let tmp = dir.join(format!(".{name}.tmp"));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, &target).map_err(|e| Error::io(&target, e))?;
    Ok(target)
}

fn json<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(v)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Runs the experiment selected by `cfg.kind` and writes its outputs to `out`.
pub fn execute(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let kind = cfg.kind;
    let name = kind.name();
    let mut files = vec![write_atomic(out, "config.json", &json(cfg)?)?];
    let (pass, summary) = match kind {
        ExperimentKind::Walk => {
            let rep = run_walk(cfg)?;
            files.push(write_atomic(out, "walk.csv", rep.csv(cfg.n).as_bytes())?);
            files.push(write_atomic(out, "walk_report.json", &json(&rep)?)?);
            let s = format!(
                "total variation {:.4e} (envelope {:.4e}), chi-square p {:.4}",
                rep.total_variation, rep.tv_envelope, rep.chi_square_p
            );
            (rep.pass, s)
        }
        ExperimentKind::Evolve => {
            let (rep, dist) = run_evolve(cfg)?;
            let mut csv = Vec::new();
            dist.write_csv(&mut csv).map_err(|e| Error::io(out, e))?;
            files.push(write_atomic(out, "evolve.csv", &csv)?);
            files.push(write_atomic(out, "evolve_report.json", &json(&rep)?)?);
            let s = format!(
                "{} steps to t = {}, leaked {:.3e}",
                rep.steps, rep.time, rep.leaked
            );
            (rep.pass, s)
        }
        ExperimentKind::Symbol => {
            let rep = run_symbol(cfg)?;
            files.push(write_atomic(out, "symbol.csv", rep.csv().as_bytes())?);
            files.push(write_atomic(out, "symbol_report.json", &json(&rep)?)?);
            let s = format!(
                "A({}, {}) = {} ± {:.2e}, max homogeneity deviation {:.3e}",
                rep.n, rep.alpha, rep.a_value, rep.a_error, rep.max_deviation
            );
            (rep.pass, s)
        }
        ExperimentKind::Operators => {
            let (rep, profile) = run_operators(cfg)?;
            let mut csv = String::from("function,points,sup_rel_error\n");
            for r in &rep.rows {
                csv.push_str(&format!(
                    "{},{},{}\n",
                    r.function, r.points, r.sup_rel_error
                ));
            }
            files.push(write_atomic(out, "operators.csv", csv.as_bytes())?);
            let mut prof = String::from("x,spectral,quadrature_over_a\n");
            for (x, s, q) in &profile {
                prof.push_str(&format!("{x},{s},{q}\n"));
            }
            files.push(write_atomic(out, "operators_profile.csv", prof.as_bytes())?);
            files.push(write_atomic(out, "operators_report.json", &json(&rep)?)?);
            let s = format!(
                "worst sup relative error {:.3e} (tolerance {})",
                rep.worst_error, rep.tolerance
            );
            (rep.pass, s)
        }
        ExperimentKind::Converge => {
            let rep = run_converge(cfg)?;
            files.push(write_atomic(out, "converge.csv", rep.csv().as_bytes())?);
            files.push(write_atomic(out, "converge_report.json", &json(&rep)?)?);
            let errs: Vec<String> = rep
                .rows
                .iter()
                .map(|r| format!("{:.3e}", r.error))
                .collect();
            let s = format!(
                "errors [{}], fitted order {:.3}",
                errs.join(", "),
                rep.fitted_order
            );
            (rep.pass, s)
        }
        ExperimentKind::Moments => {
            let rep = run_moments(cfg)?;
            files.push(write_atomic(out, "moments.csv", rep.csv().as_bytes())?);
            files.push(write_atomic(out, "moments_report.json", &json(&rep)?)?);
            let cls: Vec<String> = rep
                .growth
                .iter()
                .map(|g| format!("β={} {:?}", g.beta, g.empirical))
                .collect();
            (rep.pass, cls.join(", "))
        }
    };
    let stamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let log = format!(
        "unix_time={stamp}\nexperiment={name}\nconfig_hash={}\nresult={}\n{summary}\n",
        cfg.hash(),
        if pass { "PASS" } else { "FAIL" }
    );
    files.push(write_atomic(out, "run.log", log.as_bytes())?);
    Ok(RunOutcome {
        kind,
        pass,
        files,
        summary,
    })
}
