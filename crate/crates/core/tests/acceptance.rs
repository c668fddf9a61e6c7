//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use fraclap::fraclap_ops::{heat_evolve_spectral, GridFunction};
use fraclap::harness::{
    execute, moment_growth, run_converge, run_operators, run_walk, ExperimentConfig, ExperimentKind,
};
use fraclap::kernel::{build_spec, classify_moment};
use fraclap::lattice_walk::{LatticeDistribution, MasterPropagator, StepMethod};
use fraclap::symbol::{a_constant, rotation_2d, symbol_from_kernel, verify_rotation, SymbolConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Adaptive Simpson with a local error target.
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (flm, frm) = (f(0.5 * (a + m)), f(0.5 * (m + b)));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
            + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    rec(
        f,
        a,
        b,
        fa,
        fm,
        fb,
        (b - a) / 6.0 * (fa + 4.0 * fm + fb),
        tol,
        50,
    )
}

/// `∫_R (1 - cos ζ)/ζ² dζ` by refinement: Simpson over half periods up to
/// `X`, then the integration-by-parts tail `1/X - sin X / X²`.
fn pi_oracle(periods: usize) -> f64 {
    let f = |s: f64| {
        if s == 0.0 {
            0.5
        } else {
            let h = (0.5 * s).sin();
            2.0 * h * h / (s * s)
        }
    };
    let x = periods as f64 * 2.0 * PI;
    let mut body = 0.0;
    for i in 0..2 * periods {
        body += simpson(&f, i as f64 * PI, (i + 1) as f64 * PI, 1e-15);
    }
    2.0 * (body + 1.0 / x - x.sin() / (x * x))
}

fn symbol_constant() -> Outcome {
    let start = Instant::now();
    let cfg = SymbolConfig::default();
    let (a, err) = a_constant(1, 1.0, &cfg).unwrap();
    let elapsed = start.elapsed();
    let coarse = pi_oracle(500);
    let fine = pi_oracle(2000);
    let oracle_ok = (fine - coarse).abs() < 1e-6 && (fine - PI).abs() < 1e-6;
    let rel = (a - PI).abs() / PI;
    let rel_oracle = (a - fine).abs() / fine;
    outcome(
        rel < 1e-4 && rel_oracle < 1e-4 && oracle_ok && elapsed < Duration::from_secs(10),
        format!(
            "A(1,1) = {a:.10} ± {err:.1e}, rel err vs π {rel:.2e}, vs refinement oracle {rel_oracle:.2e}, {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn homogeneity() -> Outcome {
    let start = Instant::now();
    let cfg = SymbolConfig::default();
    let mut worst: f64 = 0.0;
    let mut at = String::new();
    for n in 1..=2usize {
        let dir: Vec<f64> = if n == 1 { vec![1.0] } else { vec![0.6, 0.8] };
        for &alpha in &[0.3, 1.0, 1.7] {
            let (a, _) = a_constant(n, alpha, &cfg).unwrap();
            for &m in &[0.5, 1.0, 2.0, 4.0] {
                let xi: Vec<f64> = dir.iter().map(|d| d * m).collect();
                let j = symbol_from_kernel(&xi, alpha, &cfg).unwrap().value;
                let dev = (j / (a * f64::powf(m, alpha)) - 1.0).abs();
                if dev > worst {
                    worst = dev;
                    at = format!("n={n} α={alpha} |ξ|={m}");
                }
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst < 1e-2 && elapsed < Duration::from_secs(60),
        format!(
            "max |J/(A|ξ|^α) - 1| = {worst:.2e} at {at}, {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn rotation() -> Outcome {
    let cfg = SymbolConfig::default();
    let xis = [[1.0, 0.0], [0.3, 0.4], [-1.2, 2.5]];
    let angles = [PI / 2.0, 1.0, 2.5, -0.7];
    let mut worst_ratio: f64 = 0.0;
    let mut all = true;
    for xi in &xis {
        for &angle in &angles {
            let rep = verify_rotation(1.0, xi, &rotation_2d(angle), &cfg).unwrap();
            all &= rep.pass;
            worst_ratio = worst_ratio.max(rep.difference / rep.combined_error);
        }
    }
    outcome(
        all,
        format!("12 rotations, worst |J(Rξ) - J(ξ)| / combined error = {worst_ratio:.3} (limit 2)"),
    )
}

fn operator_equivalence() -> Outcome {
    let cfg = ExperimentConfig {
        kind: ExperimentKind::Operators,
        ..ExperimentConfig::default()
    };
    let (rep, _) = run_operators(&cfg).unwrap();
    let trig: Vec<String> = rep
        .rows
        .iter()
        .filter(|r| r.function == "trig")
        .map(|r| format!("P={}: {:.3e}", r.points, r.sup_rel_error))
        .collect();
    outcome(
        rep.worst_error < 1e-2 && rep.decreasing,
        format!(
            "sup rel err {}; decreasing {}",
            trig.join(", "),
            rep.decreasing
        ),
    )
}

fn conservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20_251_017);
    let mut steps = 0;
    let mut worst_mass: f64 = 0.0;
    let mut max_rise: f64 = 0.0;
    while steps < 1000 {
        let n = rng.random_range(1..=2usize);
        let alpha = rng.random_range(0.1..1.9);
        let r = rng.random_range(1..=if n == 1 { 40 } else { 8 });
        let m: usize = rng.random_range(3..=if n == 1 { 60 } else { 12 });
        let spec = build_spec(n, alpha, r).unwrap();
        let side = 2 * m + 1;
        let raw: Vec<f64> = (0..side.pow(n as u32))
            .map(|_| rng.random::<f64>().powi(3))
            .collect();
        let total: f64 = raw.iter().sum();
        let mass = raw.iter().map(|v| v / total).collect();
        let mut dist = LatticeDistribution::from_masses(n, 0.1, m, mass).unwrap();
        let prop = MasterPropagator::new(&spec, 0.1, m, StepMethod::Direct).unwrap();
        for _ in 0..100 {
            let before = dist.total_mass() + dist.leaked();
            let max_before = dist.mass().iter().cloned().fold(0.0, f64::max);
            dist = prop.step(&dist).unwrap();
            let after = dist.total_mass() + dist.leaked();
            let max_after = dist.mass().iter().cloned().fold(0.0, f64::max);
            worst_mass = worst_mass.max((after - before).abs());
            max_rise = max_rise.max(max_after - max_before);
            steps += 1;
        }
    }
    outcome(
        worst_mass <= 1e-12 && max_rise <= 0.0,
        format!("{steps} steps, worst |Δ(mass + leaked)| = {worst_mass:.2e}, largest max increase = {max_rise:.2e}"),
    )
}

fn monte_carlo() -> Outcome {
    let cfg = ExperimentConfig {
        kind: ExperimentKind::Walk,
        n: 1,
        alpha: 1.0,
        steps: 50,
        walkers: 100_000,
        ..ExperimentConfig::default()
    };
    let rep = run_walk(&cfg).unwrap();
    outcome(
        rep.total_variation < rep.tv_envelope && rep.chi_square_p > 1e-3,
        format!(
            "TV {:.4e} < 4√(S/N) = {:.4e} (S = {}), chi-square {:.1} on {} dof, p = {:.4}",
            rep.total_variation,
            rep.tv_envelope,
            rep.occupied_sites,
            rep.chi_square,
            rep.chi_square_dof,
            rep.chi_square_p
        ),
    )
}

fn moment_dichotomy() -> Outcome {
    let mut matches = 0;
    let mut rows = Vec::new();
    for &alpha in &[0.5, 1.0, 1.5] {
        let spec = build_spec(1, alpha, 100).unwrap();
        for &beta in &[0.25, 1.0, 1.75] {
            let g = moment_growth(&spec, beta, 100, 4, 6);
            let analytic = classify_moment(&spec, beta);
            if g.empirical == analytic {
                matches += 1;
            }
            rows.push(format!("({alpha},{beta}):{:+.2}", g.growth_exponent));
        }
    }
    outcome(
        matches == 9,
        format!(
            "{matches}/9 grid points agree; fitted increment exponents {}",
            rows.join(" ")
        ),
    )
}

fn convergence() -> Outcome {
    let start = Instant::now();
    let cfg = ExperimentConfig {
        kind: ExperimentKind::Converge,
        n: 1,
        alpha: 1.0,
        h_list: vec![0.2, 0.1, 0.05],
        ..ExperimentConfig::default()
    };
    let rep = run_converge(&cfg).unwrap();
    let elapsed = start.elapsed();
    let errs: Vec<String> = rep
        .rows
        .iter()
        .map(|r| format!("{:.3e}", r.error))
        .collect();
    outcome(
        rep.strictly_decreasing && rep.fitted_order > 0.3 && elapsed < Duration::from_secs(300),
        format!(
            "errors [{}], fitted order {:.3}, {:.2}s",
            errs.join(", "),
            rep.fitted_order,
            elapsed.as_secs_f64()
        ),
    )
}

fn semigroup() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for trial in 0..20 {
        let n = 1 + trial % 2;
        let p: usize = if n == 1 { 128 } else { 32 };
        let period = rng.random_range(0.5..10.0);
        let alpha = rng.random_range(0.05..1.95);
        let (t1, t2) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let vals: Vec<f64> = (0..p.pow(n as u32))
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let u = GridFunction::new(n, period, p, vals).unwrap();
        let two =
            heat_evolve_spectral(&heat_evolve_spectral(&u, alpha, t1).unwrap(), alpha, t2).unwrap();
        let one = heat_evolve_spectral(&u, alpha, t1 + t2).unwrap();
        for (a, b) in two.values().iter().zip(one.values()) {
            worst = worst.max((a - b).abs());
        }
    }
    outcome(
        worst <= 1e-12,
        format!("20 random grids, max |composed - direct| = {worst:.2e}"),
    )
}

fn outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "run.log")
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let kinds = [
        ExperimentKind::Walk,
        ExperimentKind::Evolve,
        ExperimentKind::Symbol,
        ExperimentKind::Operators,
        ExperimentKind::Converge,
        ExperimentKind::Moments,
    ];
    let mut checked = 0;
    let mut differing = Vec::new();
    for kind in kinds {
        let cfg = ExperimentConfig {
            kind,
            seed: 12345,
            walkers: 20_000,
            points: vec![128, 256],
            half_width: 300,
            tolerances: fraclap::harness::Tolerances {
                leak_cap: 1.0,
                ..Default::default()
            },
            ..ExperimentConfig::default()
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        execute(&cfg, a.path()).unwrap();
        execute(&cfg, b.path()).unwrap();
        let (fa, fb) = (outputs(a.path()), outputs(b.path()));
        if fa != fb {
            differing.push(kind.name());
        }
        checked += fa.iter().filter(|(name, _)| name.ends_with(".csv")).count();
    }
    outcome(
        differing.is_empty(),
        format!("{checked} CSV files across 6 experiments rerun with the same seed; differing: {differing:?}"),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("symbol constant A(1,1) = π", symbol_constant),
        ("homogeneity of J", homogeneity),
        ("rotational invariance of J", rotation),
        ("quadrature vs spectral operator", operator_equivalence),
        ("conservation and maximum principle", conservation),
        ("Monte Carlo vs master equation", monte_carlo),
        ("β-moment dichotomy", moment_dichotomy),
        ("discrete-to-continuum convergence", convergence),
        ("heat semigroup law", semigroup),
        ("harness determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let out = check();
        if !out.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} [{}] {name}: {}",
            i + 1,
            if out.pass { "PASS" } else { "FAIL" },
            out.detail
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
