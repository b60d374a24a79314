//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion
//! and fails if any criterion fails.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use nalgebra::DMatrix;

use dp_nash::bounds::{
    estimation_error_bound, mse_bound, mse_bound_tv, tradeoff_D_of_epsilon, BoundInputs,
};
use dp_nash::harness::{run_monte_carlo, sweep_noise_scale, terminal_distribution, Scenario};
use dp_nash::privacy::{epsilon_of, scale_for_epsilon, sensitivity_audit, AdjacentPair};
use dp_nash::{
    Execution, NoiseParams, NoiseStream, QuadraticAggregativeGame, Seeker, Topology,
    TopologySchedule,
};

type Outcome = Result<String, String>;
type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn load(name: &str) -> Scenario {
    Scenario::load(scenario_path(name)).expect("shipped scenario loads")
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn nash_oracle() -> Outcome {
    let game = QuadraticAggregativeGame::energy_consumption();
    let published = [41.5, 46.4, 51.3, 56.2, 61.1];
    let x = game.solve_nash().map_err(|e| e.to_string())?;
    for (i, (&got, &want)) in x.iter().zip(&published).enumerate() {
        ensure((got - want).abs() <= 0.05, || {
            format!("player {}: {got} vs {want}", i + 1)
        })?;
    }
    let reps = 200;
    let start = Instant::now();
    for _ in 0..reps {
        std::hint::black_box(game.solve_nash().unwrap());
    }
    let per_call = start.elapsed().as_secs_f64() / reps as f64;
    ensure(per_call < 1e-3, || format!("{per_call:.2e} s per solve"))?;
    Ok(format!("x* = {x:.3?}, {:.1} us per solve", per_call * 1e6))
}

fn conservation() -> Outcome {
    let mut worst = 0.0_f64;
    for name in ["fixed_cycle.json", "switching.json"] {
        let s = load(name)
            .with_noise_scale(0.0)
            .map_err(|e| e.to_string())?;
        let noise = NoiseStream::new(s.noise, s.seed(), 0);
        let trace = Seeker::new(&s.game, &s.mixing, s.params, noise)
            .and_then(|sk| sk.run(s.x0(), true))
            .map_err(|e| e.to_string())?;
        ensure(trace.states.len() == s.params.k_max + 1, || {
            "trace too short".into()
        })?;
        for st in &trace.states {
            let drift = (st.y.iter().sum::<f64>() - st.x.iter().sum::<f64>()).abs();
            worst = worst.max(drift);
            ensure(drift < 1e-9, || {
                format!("{name}: drift {drift:e} at k = {}", st.k)
            })?;
        }
    }
    Ok(format!("max |1'y - 1'x| = {worst:.2e} on both topologies"))
}

fn averaging(n: usize) -> DMatrix<f64> {
    DMatrix::from_element(n, n, 1.0 / n as f64)
}

fn consensus_contraction() -> Outcome {
    let t = Topology::reference_cycle();
    let gamma = t.gamma();
    let a = t.weights().clone();
    let j = averaging(5);
    let mut power = DMatrix::identity(5, 5);
    let mut tightest = f64::INFINITY;
    for k in 1..=50 {
        power = &a * &power;
        let norm = (&power - &j).singular_values().max();
        let bound = gamma.powi(k) + 1e-9;
        ensure(norm <= bound, || format!("k = {k}: {norm:e} > {bound:e}"))?;
        tightest = tightest.min(bound - norm);
    }
    Ok(format!(
        "gamma = {gamma:.12}, smallest slack {tightest:.2e}"
    ))
}

fn switching_products() -> Outcome {
    let schedule = TopologySchedule::reference_switching();
    let (n, delta, z) = (5.0_f64, 0.2_f64, 2.0_f64);
    let base = 1.0 - delta / (4.0 * n * n);
    let theta = base.powf(-2.0);
    let beta = base.powf(1.0 / z);
    ensure(
        (schedule.theta() - theta).abs() < 1e-12 && (schedule.beta() - beta).abs() < 1e-12,
        || {
            format!(
                "schedule constants {} {}",
                schedule.theta(),
                schedule.beta()
            )
        },
    )?;
    let mats = schedule.matrices();
    let mut checked = 0;
    let mut worst_ratio = 0.0_f64;
    for s in 0..=60usize {
        let mut psi = mats[s % 2].clone();
        for k in s..=60 {
            if k > s {
                psi = &mats[k % 2] * psi;
            }
            let bound = theta * beta.powi((k + 1 - s) as i32);
            for v in psi.iter() {
                let dev = (v - 0.2).abs();
                ensure(dev <= bound, || {
                    format!("k = {k}, s = {s}: {dev} > {bound}")
                })?;
                worst_ratio = worst_ratio.max(dev / bound);
            }
            checked += 1;
        }
    }
    Ok(format!(
        "{checked} products, largest deviation/bound {worst_ratio:.3}"
    ))
}

fn estimation_dominance(summaries: &Summaries) -> Outcome {
    let (s, m) = &summaries.fixed;
    let inputs = s.bound_inputs().map_err(|e| e.to_string())?;
    let mut min_margin = f64::INFINITY;
    let mut checks = 0;
    for (j, &k) in m.probes.iter().enumerate() {
        if k == 0 {
            continue;
        }
        let bound = estimation_error_bound(&inputs, k).map_err(|e| e.to_string())?;
        for (i, e) in m.estimate_error[j].iter().enumerate() {
            let margin = bound + 4.0 * e.stderr - e.mean;
            ensure(margin >= 0.0, || {
                format!("k = {k}, player {}: {} > {bound}", i + 1, e.mean)
            })?;
            min_margin = min_margin.min(margin);
            checks += 1;
        }
    }
    ensure(m.replicas == 2000, || format!("{} replicas", m.replicas))?;
    Ok(format!(
        "{checks} checks over {} replicas, min margin {min_margin:.3}",
        m.replicas
    ))
}

fn mse_dominance(summaries: &Summaries) -> Outcome {
    let mut parts = Vec::new();
    for (label, (s, m), switching) in [
        ("fixed", &summaries.fixed, false),
        ("switching", &summaries.switching, true),
    ] {
        let inputs = s.bound_inputs().map_err(|e| e.to_string())?;
        let d = if switching {
            mse_bound_tv(&inputs)
        } else {
            mse_bound(&inputs)
        }
        .map_err(|e| e.to_string())?
        .total;
        let t = m.terminal_mse().ok_or("no probes")?;
        ensure(t.mean <= d + 4.0 * t.stderr, || {
            format!("{label}: {} > {d}", t.mean)
        })?;
        ensure(m.box_exits == 0, || {
            format!("{label}: {} box exits", m.box_exits)
        })?;
        parts.push(format!(
            "{label} {:.4}+/-{:.4} <= {d:.3e}",
            t.mean, t.stderr
        ));
    }
    Ok(parts.join("; "))
}

fn privacy_audit() -> Outcome {
    let s = load("fixed_cycle.json");
    let variant = s
        .game
        .with_target(0, s.game.targets()[0] + 1.0)
        .map_err(|e| e.to_string())?;
    let pair = AdjacentPair::quadratic(s.game.clone(), variant).map_err(|e| e.to_string())?;
    let report = sensitivity_audit(
        &pair,
        &s.mixing,
        &s.params,
        &s.noise,
        s.x0(),
        s.seed(),
        s.constants.gradient_bound,
    )
    .map_err(|e| e.to_string())?;
    ensure(report.observation_gap <= 1e-9, || {
        format!("gap {}", report.observation_gap)
    })?;
    for step in &report.steps {
        let alpha = 0.9_f64.powi(step.k as i32);
        ensure(
            step.delta_y.abs() <= 2.0 * report.gradient_bound * alpha,
            || format!("k = {}: |dy| = {}", step.k, step.delta_y.abs()),
        )?;
    }
    let c = report.gradient_bound;
    ensure(
        ((report.epsilon - 22.0 * c) / (22.0 * c)).abs() < 1e-12,
        || format!("epsilon {} vs 22C = {}", report.epsilon, 22.0 * c),
    )?;
    ensure(report.privacy_loss <= report.epsilon + 1e-9, || {
        format!("loss {} > {}", report.privacy_loss, report.epsilon)
    })?;
    ensure(report.passed, || "audit flagged failure".into())?;
    Ok(format!(
        "C = {c}, loss {:.4} <= eps = 22C = {:.1}",
        report.privacy_loss, report.epsilon
    ))
}

fn tradeoff_trend() -> Outcome {
    let s = load("fixed_cycle.json");
    let grid = [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0];
    let sweep = sweep_noise_scale(&s, &grid, &Execution::default()).map_err(|e| e.to_string())?;
    let (first, last) = (sweep.rows[0], sweep.rows[grid.len() - 1]);
    let pooled = (first.stderr.powi(2) + last.stderr.powi(2)).sqrt();
    let separation = (last.mse - first.mse) / pooled;
    ensure(separation >= 2.0, || {
        format!("separation {separation:.2} pooled stderr")
    })?;
    let slope = sweep.fitted_slope().ok_or("no slope")?;
    ensure(slope > 0.0, || format!("slope {slope}"))?;
    let min_row = sweep
        .rows
        .iter()
        .map(|r| r.mse)
        .fold(f64::INFINITY, f64::min);
    ensure(
        first.mse <= min_row + 2.0 * first.stderr.max(pooled),
        || "d = 0 is not the minimum".into(),
    )?;
    Ok(format!(
        "mse(0) = {:.2e}, mse(3) = {:.3}, {separation:.1} pooled stderr apart, slope {slope:.3}",
        first.mse, last.mse
    ))
}

fn distribution_modes() -> Outcome {
    let s = load("fixed_cycle.json");
    let dist =
        terminal_distribution(&s, 20_000, &Execution::default()).map_err(|e| e.to_string())?;
    let mut worst_x = 0.0_f64;
    let mut worst_y = 0.0_f64;
    for p in &dist.players {
        let dx = (p.x.mode - dist.equilibrium[p.player - 1]).abs();
        let dy = (p.y.mode - dist.equilibrium_mean).abs();
        ensure(dx <= 1.0, || {
            format!("player {} x mode off by {dx}", p.player)
        })?;
        ensure(dy <= 1.0, || {
            format!("player {} y mode off by {dy}", p.player)
        })?;
        worst_x = worst_x.max(dx);
        worst_y = worst_y.max(dy);
    }
    Ok(format!(
        "worst mode offsets: x {worst_x:.3}, y {worst_y:.3}"
    ))
}

fn formula_identities() -> Outcome {
    let c_bound = 135.0;
    let mut worst_round_trip = 0.0_f64;
    for &(c, q, qb) in &[(1.0, 0.9, 0.99), (0.3, 0.5, 0.7), (2.5, 0.01, 0.999)] {
        for &d in &[1e-3, 0.5, 1.0, 3.0, 1e3] {
            let eps = epsilon_of(c, q, d, qb, c_bound).map_err(|e| e.to_string())?;
            let back = scale_for_epsilon(c, q, qb, c_bound, eps).map_err(|e| e.to_string())?;
            worst_round_trip = worst_round_trip.max(((back - d) / d).abs());
        }
    }
    ensure(worst_round_trip <= 1e-12, || {
        format!("round trip {worst_round_trip:e}")
    })?;

    let s = load("fixed_cycle.json");
    let inputs = s.bound_inputs().map_err(|e| e.to_string())?;
    let mut worst = 0.0_f64;
    for i in 0..100 {
        let eps = 10f64.powf(-1.0 + 6.0 * i as f64 / 99.0);
        let d = scale_for_epsilon(inputs.c, inputs.q, inputs.q_bar, inputs.gradient_bound, eps)
            .map_err(|e| e.to_string())?;
        let direct = mse_bound(&BoundInputs {
            d,
            ..inputs.clone()
        })
        .map_err(|e| e.to_string())?
        .total;
        let via_eps = tradeoff_D_of_epsilon(&inputs, eps).map_err(|e| e.to_string())?;
        worst = worst.max(((direct - via_eps) / direct).abs());
    }
    ensure(worst <= 1e-12, || format!("substitution {worst:e}"))?;
    Ok(format!(
        "round trip {worst_round_trip:.1e}, substitution {worst:.1e}"
    ))
}

fn laplace_cdf(x: f64, b: f64) -> f64 {
    if x < 0.0 {
        0.5 * (x / b).exp()
    } else {
        1.0 - 0.5 * (-x / b).exp()
    }
}

/// Asymptotic Kolmogorov distribution tail with Stephens' correction.
fn ks_p_value(stat: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * stat;
    let mut sum = 0.0;
    for j in 1..=100 {
        let term = (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn laplace_sampler() -> Outcome {
    let params = NoiseParams::new(1.0, 0.99).map_err(|e| e.to_string())?;
    let per_stream = 62_500;
    let streams = 16;
    let mut parts = Vec::new();
    for k in [0usize, 5, 20] {
        let b = params.scale(k);
        let mut draws = Vec::with_capacity(per_stream * streams);
        let mut buf = vec![0.0; per_stream];
        for r in 0..streams {
            NoiseStream::new(params, 4242, r as u64).fill(k, &mut buf);
            draws.extend_from_slice(&buf);
        }
        draws.sort_by(f64::total_cmp);
        let n = draws.len();
        let mut stat = 0.0_f64;
        for (i, &x) in draws.iter().enumerate() {
            let f = laplace_cdf(x, b);
            stat = stat
                .max((i + 1) as f64 / n as f64 - f)
                .max(f - i as f64 / n as f64);
        }
        let p = ks_p_value(stat, n);
        ensure(p > 0.001, || format!("k = {k}: D = {stat:e}, p = {p:e}"))?;
        parts.push(format!("k={k}: p={p:.3}"));
    }
    Ok(format!(
        "{} draws each; {}",
        per_stream * streams,
        parts.join(", ")
    ))
}

fn run_cli(out: &Path, jobs: usize) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_dp-nash"))
        .args(["mc", "--scenario"])
        .arg(scenario_path("fixed_cycle.json"))
        .args(["--seed", "99", "--jobs", &jobs.to_string(), "--out"])
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(status.status.success(), || {
        format!(
            "exit {:?}: {}",
            status.status,
            String::from_utf8_lossy(&status.stderr)
        )
    })
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let runs = [(1usize, "a"), (4, "b"), (4, "c")];
    for (jobs, sub) in runs {
        run_cli(&dir.path().join(sub), jobs)?;
    }
    let files = [
        "mc_summary.csv",
        "mc_summary.json",
        "bounds.json",
        "dominance.json",
    ];
    for f in files {
        let reference = std::fs::read(dir.path().join("a").join(f)).map_err(|e| e.to_string())?;
        for (_, sub) in &runs[1..] {
            let other = std::fs::read(dir.path().join(sub).join(f)).map_err(|e| e.to_string())?;
            ensure(reference == other, || format!("{f} differs between runs"))?;
        }
    }
    Ok(format!(
        "{} files identical across --jobs 1 / 4 / 4",
        files.len()
    ))
}

struct Summaries {
    fixed: (Scenario, dp_nash::harness::McSummary),
    switching: (Scenario, dp_nash::harness::McSummary),
}

/// Written to the stderr handle directly so the verdicts show up even when
/// the harness captures test output.
fn report(line: &str) {
    let _ = writeln!(std::io::stderr().lock(), "{line}");
}

#[test]
fn acceptance() {
    let run = |name: &str| {
        let s = load(name);
        let m = run_monte_carlo(&s, &Execution::default()).expect("monte carlo runs");
        (s, m)
    };
    let summaries = Summaries {
        fixed: run("fixed_cycle.json"),
        switching: run("switching.json"),
    };
    let criteria: Vec<(&str, Check)> = vec![
        ("nash oracle", Box::new(nash_oracle)),
        ("noiseless conservation", Box::new(conservation)),
        ("consensus contraction", Box::new(consensus_contraction)),
        ("switching product bound", Box::new(switching_products)),
        (
            "estimation-error dominance",
            Box::new(|| estimation_dominance(&summaries)),
        ),
        (
            "terminal-MSE dominance",
            Box::new(|| mse_dominance(&summaries)),
        ),
        ("privacy audit", Box::new(privacy_audit)),
        ("noise tradeoff trend", Box::new(tradeoff_trend)),
        ("terminal distribution modes", Box::new(distribution_modes)),
        ("formula identities", Box::new(formula_identities)),
        ("laplace sampler", Box::new(laplace_sampler)),
        ("cli determinism", Box::new(determinism)),
    ];
    let mut failed = Vec::new();
    for (idx, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => report(&format!("PASS {:>2} {name}: {detail}", idx + 1)),
            Err(reason) => {
                report(&format!("FAIL {:>2} {name}: {reason}", idx + 1));
                failed.push(idx + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
