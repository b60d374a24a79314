//! Monte Carlo replicas, noise sweeps, terminal distributions and the
//! empirical-versus-bound comparison.

use serde::{Deserialize, Serialize};

use super::scenario::Scenario;
use super::stats::{Estimate, RunningStat};
use crate::bounds::BoundReport;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::privacy::NoiseStream;
use crate::seeker::{Seeker, SeekerState};

/// Replicas per reduction unit. Fixed so the merge tree, and therefore every
/// output bit, does not depend on the worker count.
pub const CHUNK_SIZE: usize = 64;
/// Slack, in standard errors, allowed when comparing to a bound.
pub const DOMINANCE_SLACK: f64 = 4.0;
/// Half-width, in bins, of the triangular kernel used to locate modes.
pub const MODE_SMOOTHING_BINS: usize = 6;
const MAX_BINS: usize = 100_000;

/// Sample statistics over replicas at each probe iteration. Grids are
/// indexed `[probe][player]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub provenance: String,
    pub replicas: usize,
    pub seed: u64,
    pub n_players: usize,
    pub k_max: usize,
    pub probes: Vec<usize>,
    /// `E(x_i(k) − x_i*)²`
    pub per_player_mse: Vec<Vec<Estimate>>,
    /// `E‖x(k) − x*‖²`
    pub aggregate_mse: Vec<Estimate>,
    /// `E|y_i(k) − x̄(k)|`
    pub estimate_error: Vec<Vec<Estimate>>,
    /// `E(y_i(k) − x̄*)`
    pub mean_estimate_bias: Vec<Vec<Estimate>>,
    /// `E|1ᵀy(k) − 1ᵀx(k)|`
    pub consensus_drift: Vec<Estimate>,
    /// `x_i(k_max)` per player, in replica order.
    pub terminal_x: Vec<Vec<f64>>,
    /// `y_i(k_max)` per player, in replica order.
    pub terminal_y: Vec<Vec<f64>>,
    /// Replicas whose iterates left the certified box.
    pub box_exits: usize,
}

impl McSummary {
    pub fn terminal_mse(&self) -> Option<Estimate> {
        self.aggregate_mse.last().copied()
    }
}

struct Layout {
    n: usize,
    probes: usize,
}

impl Layout {
    fn stride(&self) -> usize {
        3 * self.n + 2
    }
    fn sq_err(&self, j: usize, i: usize) -> usize {
        j * self.stride() + i
    }
    fn est_err(&self, j: usize, i: usize) -> usize {
        j * self.stride() + self.n + i
    }
    fn bias(&self, j: usize, i: usize) -> usize {
        j * self.stride() + 2 * self.n + i
    }
    fn aggregate(&self, j: usize) -> usize {
        j * self.stride() + 3 * self.n
    }
    fn drift(&self, j: usize) -> usize {
        j * self.stride() + 3 * self.n + 1
    }
    fn len(&self) -> usize {
        self.probes * self.stride()
    }
}

struct ChunkResult {
    stats: Vec<RunningStat>,
    terminal: Vec<SeekerState>,
    box_exits: usize,
}

impl ChunkResult {
    fn empty(stats_len: usize) -> Self {
        ChunkResult {
            stats: vec![RunningStat::default(); stats_len],
            terminal: Vec::new(),
            box_exits: 0,
        }
    }

    fn absorb(&mut self, other: ChunkResult) {
        for (a, b) in self.stats.iter_mut().zip(&other.stats) {
            a.merge(b);
        }
        self.terminal.extend(other.terminal);
        self.box_exits += other.box_exits;
    }
}

/// Runs replica `r` and feeds its probe statistics into `stats`.
fn run_replica(
    scenario: &Scenario,
    layout: &Layout,
    replica: usize,
    stats: &mut [RunningStat],
) -> Result<(SeekerState, bool)> {
    let noise = NoiseStream::new(scenario.noise, scenario.seed(), replica as u64);
    let seeker = Seeker::new(&scenario.game, &scenario.mixing, scenario.params, noise)?
        .with_bound_box(&scenario.bound_box);
    let nash = &scenario.nash;
    let nash_mean = nash.iter().sum::<f64>() / nash.len() as f64;
    let probes = &scenario.probes;
    let track = !stats.is_empty();
    let mut next_probe = 0;
    let (last, exit) =
        seeker.run_observed(SeekerState::initial(scenario.x0().to_vec()), |s, _, _| {
            if !track || next_probe >= probes.len() || probes[next_probe] != s.k {
                return;
            }
            let j = next_probe;
            next_probe += 1;
            let x_bar = s.mean_action();
            let mut total = 0.0;
            for i in 0..layout.n {
                let e = s.x[i] - nash[i];
                stats[layout.sq_err(j, i)].push(e * e);
                total += e * e;
                stats[layout.est_err(j, i)].push((s.y[i] - x_bar).abs());
                stats[layout.bias(j, i)].push(s.y[i] - nash_mean);
            }
            stats[layout.aggregate(j)].push(total);
            stats[layout.drift(j)].push(s.consensus_drift().abs());
        })?;
    Ok((last, exit.is_some()))
}

fn run_replicas(scenario: &Scenario, exec: &Execution, track: bool) -> Result<ChunkResult> {
    let layout = Layout {
        n: scenario.n_players(),
        probes: scenario.probes.len(),
    };
    let stats_len = if track { layout.len() } else { 0 };
    let replicas = scenario.replicas();
    let chunks = replicas.div_ceil(CHUNK_SIZE);
    let results = exec.map(chunks, |c| -> Result<ChunkResult> {
        let mut out = ChunkResult::empty(stats_len);
        for r in c * CHUNK_SIZE..((c + 1) * CHUNK_SIZE).min(replicas) {
            let (last, exited) =
                run_replica(scenario, &layout, r, &mut out.stats).map_err(|e| Error::Replica {
                    replica: r as u64,
                    source: Box::new(e),
                })?;
            out.terminal.push(last);
            out.box_exits += exited as usize;
        }
        Ok(out)
    })?;
    let mut total = ChunkResult::empty(stats_len);
    for chunk in results {
        total.absorb(chunk?);
    }
    if total.box_exits > 0 {
        log::warn!(
            "{} of {replicas} replicas left the certified box; bound comparisons are not certified",
            total.box_exits
        );
    }
    Ok(total)
}

fn transpose_terminal(states: &[SeekerState], n: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let xs = (0..n)
        .map(|i| states.iter().map(|s| s.x[i]).collect())
        .collect();
    let ys = (0..n)
        .map(|i| states.iter().map(|s| s.y[i]).collect())
        .collect();
    (xs, ys)
}

/// Runs every replica of the scenario and aggregates at the probe grid.
pub fn run_monte_carlo(scenario: &Scenario, exec: &Execution) -> Result<McSummary> {
    let n = scenario.n_players();
    let layout = Layout {
        n,
        probes: scenario.probes.len(),
    };
    let total = run_replicas(scenario, exec, true)?;
    let st = &total.stats;
    let grid = |f: &dyn Fn(usize, usize) -> usize| -> Vec<Vec<Estimate>> {
        (0..layout.probes)
            .map(|j| (0..n).map(|i| st[f(j, i)].estimate()).collect())
            .collect()
    };
    let (terminal_x, terminal_y) = transpose_terminal(&total.terminal, n);
    Ok(McSummary {
        provenance: scenario.fingerprint(),
        replicas: scenario.replicas(),
        seed: scenario.seed(),
        n_players: n,
        k_max: scenario.params.k_max,
        probes: scenario.probes.clone(),
        per_player_mse: grid(&|j, i| layout.sq_err(j, i)),
        aggregate_mse: (0..layout.probes)
            .map(|j| st[layout.aggregate(j)].estimate())
            .collect(),
        estimate_error: grid(&|j, i| layout.est_err(j, i)),
        mean_estimate_bias: grid(&|j, i| layout.bias(j, i)),
        consensus_drift: (0..layout.probes)
            .map(|j| st[layout.drift(j)].estimate())
            .collect(),
        terminal_x,
        terminal_y,
        box_exits: total.box_exits,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub d: f64,
    /// Terminal `E‖x(k_max) − x*‖²`.
    pub mse: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub provenance: String,
    pub replicas: usize,
    pub seed: u64,
    pub rows: Vec<SweepRow>,
}

impl Sweep {
    /// Least-squares slope of `mse` against `d`.
    pub fn fitted_slope(&self) -> Option<f64> {
        let n = self.rows.len() as f64;
        if self.rows.len() < 2 {
            return None;
        }
        let md = self.rows.iter().map(|r| r.d).sum::<f64>() / n;
        let mm = self.rows.iter().map(|r| r.mse).sum::<f64>() / n;
        let sxy: f64 = self.rows.iter().map(|r| (r.d - md) * (r.mse - mm)).sum();
        let sxx: f64 = self.rows.iter().map(|r| (r.d - md).powi(2)).sum();
        (sxx > 0.0).then(|| sxy / sxx)
    }
}

pub const DEFAULT_SWEEP: [f64; 7] = [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0];

/// Reruns the Monte Carlo at each noise scale, with the same seed so every
/// row sees the same underlying uniforms.
pub fn sweep_noise_scale(scenario: &Scenario, d_values: &[f64], exec: &Execution) -> Result<Sweep> {
    if d_values.is_empty() {
        return Err(Error::InvalidParameter(
            "noise sweep needs at least one d".into(),
        ));
    }
    let mut rows = Vec::with_capacity(d_values.len());
    for &d in d_values {
        let s = scenario.with_noise_scale(d)?;
        let summary = run_monte_carlo(&s, exec)?;
        let t = summary
            .terminal_mse()
            .ok_or(Error::EmptyStatistics("probe grid"))?;
        rows.push(SweepRow {
            d,
            mse: t.mean,
            stderr: t.stderr,
        });
    }
    Ok(Sweep {
        provenance: scenario.fingerprint(),
        replicas: scenario.replicas(),
        seed: scenario.seed(),
        rows,
    })
}

/// Fixed-width histogram with Freedman–Diaconis bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lower: f64,
    /// Zero when every sample is identical (one degenerate bin).
    pub bin_width: f64,
    pub counts: Vec<u64>,
    /// Centre of the tallest bin after triangular smoothing.
    pub mode: f64,
    /// Centre of the tallest raw bin.
    pub raw_mode: f64,
    pub samples: usize,
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn first_argmax<T: PartialOrd + Copy>(v: &[T]) -> usize {
    let mut best = 0;
    for (j, &c) in v.iter().enumerate() {
        if c > v[best] {
            best = j;
        }
    }
    best
}

impl Histogram {
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyStatistics("histogram samples"));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("histogram samples"));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
        let n = samples.len();
        if max == min {
            return Ok(Histogram {
                lower: min,
                bin_width: 0.0,
                counts: vec![n as u64],
                mode: min,
                raw_mode: min,
                samples: n,
            });
        }
        let range = max - min;
        let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
        let mut width = 2.0 * iqr / (n as f64).cbrt();
        if width.is_nan() || width <= 0.0 {
            width = range / (n as f64).sqrt().ceil();
        }
        let mut bins = (range / width).ceil().max(1.0) as usize;
        if bins > MAX_BINS {
            bins = MAX_BINS;
            width = range / bins as f64;
        }
        let mut counts = vec![0u64; bins];
        for &v in &sorted {
            let j = (((v - min) / width).floor() as usize).min(bins - 1);
            counts[j] += 1;
        }
        let r = MODE_SMOOTHING_BINS as i64;
        let smoothed: Vec<u64> = (0..bins as i64)
            .map(|j| {
                (-r..=r)
                    .filter_map(|t| {
                        let idx = j + t;
                        (0..bins as i64)
                            .contains(&idx)
                            .then(|| (r + 1 - t.abs()) as u64 * counts[idx as usize])
                    })
                    .sum()
            })
            .collect();
        let centre = |j: usize| min + (j as f64 + 0.5) * width;
        Ok(Histogram {
            lower: min,
            bin_width: width,
            mode: centre(first_argmax(&smoothed)),
            raw_mode: centre(first_argmax(&counts)),
            counts,
            samples: n,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerDistribution {
    /// 1-based player label.
    pub player: usize,
    pub x: Histogram,
    pub y: Histogram,
}

/// Histograms of `x_i(k_max)` and `y_i(k_max)` over replicas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub provenance: String,
    pub replicas: usize,
    pub seed: u64,
    pub equilibrium: Vec<f64>,
    pub equilibrium_mean: f64,
    pub players: Vec<PlayerDistribution>,
}

pub const DEFAULT_DISTRIBUTION_REPLICAS: usize = 20_000;

pub fn terminal_distribution(
    scenario: &Scenario,
    replicas: usize,
    exec: &Execution,
) -> Result<Distribution> {
    let s = scenario.with_replicas(replicas)?;
    let total = run_replicas(&s, exec, false)?;
    let n = s.n_players();
    let (xs, ys) = transpose_terminal(&total.terminal, n);
    let players = (0..n)
        .map(|i| {
            Ok(PlayerDistribution {
                player: i + 1,
                x: Histogram::from_samples(&xs[i])?,
                y: Histogram::from_samples(&ys[i])?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Distribution {
        provenance: s.fingerprint(),
        replicas,
        seed: s.seed(),
        equilibrium_mean: s.nash.iter().sum::<f64>() / n as f64,
        equilibrium: s.nash.clone(),
        players,
    })
}

/// Outcome for one bounded quantity across the probe grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimCheck {
    pub claim: String,
    pub checks: usize,
    /// `min (bound + slack·stderr − empirical)`.
    pub min_margin: f64,
    pub worst_k: usize,
    pub worst_player: Option<usize>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceReport {
    pub provenance: String,
    pub replicas: usize,
    pub slack_stderrs: f64,
    pub passed: bool,
    /// False when some replica left the box the gradient bound holds on.
    pub certified: bool,
    pub claims: Vec<ClaimCheck>,
}

struct ClaimBuilder {
    check: ClaimCheck,
}

impl ClaimBuilder {
    fn new(claim: &str) -> Self {
        ClaimBuilder {
            check: ClaimCheck {
                claim: claim.into(),
                checks: 0,
                min_margin: f64::INFINITY,
                worst_k: 0,
                worst_player: None,
                passed: true,
            },
        }
    }

    fn record(&mut self, k: usize, player: Option<usize>, empirical: Estimate, bound: f64) {
        let margin = bound + DOMINANCE_SLACK * empirical.stderr - empirical.mean;
        self.check.checks += 1;
        if margin < self.check.min_margin || margin.is_nan() {
            self.check.min_margin = margin;
            self.check.worst_k = k;
            self.check.worst_player = player;
        }
        if margin.is_nan() || margin < 0.0 {
            self.check.passed = false;
        }
    }
}

/// Checks every empirical curve against its bound at the shared probe
/// points, allowing [`DOMINANCE_SLACK`] standard errors.
pub fn compare_to_bounds(summary: &McSummary, report: &BoundReport) -> Result<DominanceReport> {
    if summary.provenance != report.provenance {
        return Err(Error::Provenance {
            summary: summary.provenance.clone(),
            report: report.provenance.clone(),
        });
    }
    if summary.replicas == 0 || summary.aggregate_mse.is_empty() {
        return Err(Error::EmptyStatistics("Monte Carlo summary"));
    }
    let probe_index = |k: usize| summary.probes.iter().position(|&p| p == k);

    let mut drift = ClaimBuilder::new("consensus_drift");
    for point in &report.drift_curve {
        if let Some(j) = probe_index(point.k) {
            drift.record(point.k, None, summary.consensus_drift[j], point.value);
        }
    }
    let mut estimation = ClaimBuilder::new("estimation_error");
    for point in &report.estimation_curve {
        if let Some(j) = probe_index(point.k) {
            for (i, &e) in summary.estimate_error[j].iter().enumerate() {
                estimation.record(point.k, Some(i + 1), e, point.value);
            }
        }
    }
    let mut terminal = ClaimBuilder::new("terminal_mse");
    let last = summary.aggregate_mse.len() - 1;
    terminal.record(
        summary.probes[last],
        None,
        summary.aggregate_mse[last],
        report.mse.total,
    );

    let claims: Vec<ClaimCheck> = [drift, estimation, terminal]
        .into_iter()
        .map(|b| b.check)
        .collect();
    Ok(DominanceReport {
        provenance: summary.provenance.clone(),
        replicas: summary.replicas,
        slack_stderrs: DOMINANCE_SLACK,
        passed: claims.iter().all(|c| c.passed && c.checks > 0),
        certified: summary.box_exits == 0,
        claims,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario(d: f64, replicas: usize) -> Scenario {
        Scenario::from_json(&format!(
            r#"{{
            "n_players": 5,
            "targets": [50, 55, 60, 65, 70],
            "agg_price_slope": 0.04,
            "agg_price_offset": 5,
            "bound_box": {{"lower": [0, 0, 0, 0, 0], "upper": [100, 100, 100, 100, 100]}},
            "topology": {{"mode": "fixed", "matrices": [[
                [0.5, 0.2, 0.0, 0.0, 0.3],
                [0.2, 0.5, 0.3, 0.0, 0.0],
                [0.0, 0.3, 0.5, 0.2, 0.0],
                [0.0, 0.0, 0.2, 0.5, 0.3],
                [0.3, 0.0, 0.0, 0.3, 0.4]]]}},
            "algorithm": {{"c": 1, "q": 0.9}},
            "noise": {{"d": {d}, "q_bar": 0.99}},
            "x0": [50, 55, 60, 65, 70],
            "seed": 11,
            "replicas": {replicas}
        }}"#
        ))
        .unwrap()
    }

    #[test]
    fn noiseless_replicas_agree_exactly() {
        let s = scenario(0.0, 2);
        let m = run_monte_carlo(&s, &Execution::Sequential).unwrap();
        assert!(m.aggregate_mse.iter().all(|e| e.stderr == 0.0));
        assert!(m.estimate_error.iter().flatten().all(|e| e.stderr == 0.0));
        assert_eq!(m.terminal_x[0][0], m.terminal_x[0][1]);
        assert!(m.terminal_mse().unwrap().mean < 1e-5);
    }

    #[test]
    fn per_player_sums_to_aggregate() {
        let m = run_monte_carlo(&scenario(1.0, 100), &Execution::Sequential).unwrap();
        for (row, agg) in m.per_player_mse.iter().zip(&m.aggregate_mse) {
            let s: f64 = row.iter().map(|e| e.mean).sum();
            assert!((s - agg.mean).abs() <= 1e-9 * agg.mean.max(1.0));
        }
        assert_eq!(m.terminal_x[0].len(), 100);
    }

    #[test]
    fn replica_results_do_not_depend_on_evaluation_order() {
        let s = scenario(1.0, 20);
        let layout = Layout {
            n: 5,
            probes: s.probes.len(),
        };
        let forward: Vec<_> = (0..20)
            .map(|r| {
                let mut st = vec![RunningStat::default(); layout.len()];
                (run_replica(&s, &layout, r, &mut st).unwrap().0, st)
            })
            .collect();
        for r in (0..20).rev() {
            let mut st = vec![RunningStat::default(); layout.len()];
            let last = run_replica(&s, &layout, r, &mut st).unwrap().0;
            assert_eq!(last, forward[r].0);
            assert_eq!(st, forward[r].1);
        }
    }

    #[test]
    fn replica_failure_names_the_replica() {
        let mut file = scenario(1.0, 3).file().clone();
        file.algorithm.c = 1e6;
        file.algorithm.q = 0.999;
        file.algorithm.k_max = Some(50);
        file.noise.q_bar = 0.9995;
        file.bound_box = None;
        let s = Scenario::from_file(file).unwrap();
        match run_monte_carlo(&s, &Execution::Sequential) {
            Err(Error::Replica { replica: 0, source }) => {
                assert!(matches!(*source, Error::Divergence { .. }))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn histogram_basics() {
        let h = Histogram::from_samples(&[3.0; 10]).unwrap();
        assert_eq!(h.counts, vec![10]);
        assert_eq!(h.mode, 3.0);
        assert_eq!(h.bin_width, 0.0);
        let samples: Vec<f64> = (0..1000)
            .map(|i| (i as f64 / 999.0 - 0.5).powi(3))
            .collect();
        let h = Histogram::from_samples(&samples).unwrap();
        assert_eq!(h.counts.iter().sum::<u64>(), 1000);
        assert!(h.mode.abs() < 0.05);
        assert!(Histogram::from_samples(&[]).is_err());
    }

    #[test]
    fn noiseless_distribution_is_degenerate() {
        let dist = terminal_distribution(&scenario(0.0, 1), 5, &Execution::Sequential).unwrap();
        for p in &dist.players {
            assert_eq!(p.x.counts.len(), 1);
            assert_eq!(p.y.counts.len(), 1);
        }
    }

    #[test]
    fn dominance_and_negative_control() {
        let s = scenario(1.0, 200);
        let m = run_monte_carlo(&s, &Execution::Sequential).unwrap();
        let report = s.bound_report().unwrap();
        let verdict = compare_to_bounds(&m, &report).unwrap();
        assert!(verdict.passed, "{verdict:?}");
        assert!(verdict.certified);
        let crushed = compare_to_bounds(&m, &report.scaled(1e-9)).unwrap();
        assert!(!crushed.passed);

        let other = s.with_noise_scale(2.0).unwrap().bound_report().unwrap();
        assert!(matches!(
            compare_to_bounds(&m, &other),
            Err(Error::Provenance { .. })
        ));

        let mut empty = m.clone();
        empty.replicas = 0;
        assert!(matches!(
            compare_to_bounds(&empty, &report),
            Err(Error::EmptyStatistics(_))
        ));
    }

    #[test]
    fn sweep_rows_and_slope() {
        let s = scenario(1.0, 64);
        let sweep = sweep_noise_scale(&s, &[0.0, 3.0], &Execution::Sequential).unwrap();
        assert_eq!(sweep.rows.len(), 2);
        assert!(sweep.rows[1].mse > sweep.rows[0].mse);
        assert!(sweep.fitted_slope().unwrap() > 0.0);
        let single = sweep_noise_scale(&s, &[0.5], &Execution::Sequential).unwrap();
        assert_eq!(single.rows.len(), 1);
        assert!(sweep_noise_scale(&s, &[], &Execution::Sequential).is_err());
    }
}
