//! The seeking iteration: a gradient step with geometrically decaying
//! stepsize, driven by aggregate estimates maintained through a
//! noise-perturbed dynamic average consensus.
//!
//! One step at iteration `k`, in this order:
//!
//! ```text
//! w(k)   ~ Lap(d·q̄ᵏ) per player
//! p(k)   = y(k) + w(k)
//! x(k+1) = x(k) − α_k·[g_i(x_i(k), y_i(k))]
//! y(k+1) = A(k)·p(k) + x(k+1) − x(k)
//! ```

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{AggregativeGame, BoundBox};
use crate::privacy::NoiseStream;
use crate::topology::{Mixing, Topology, TopologySchedule};

/// Iterates with `|x_i|` above this abort the run.
pub const DIVERGENCE_LIMIT: f64 = 1e12;
/// Default horizon stops once `c·qᵏ` drops below this.
pub const NEGLIGIBLE_STEPSIZE: f64 = 1e-8;

/// Stepsize schedule `α_k = c·qᵏ` and iteration horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmParams {
    pub c: f64,
    pub q: f64,
    pub k_max: usize,
}

impl AlgorithmParams {
    /// `k_max = None` picks the smallest `k` with `c·qᵏ < 1e-8`.
    pub fn new(c: f64, q: f64, k_max: Option<usize>) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "initial stepsize c must be positive, got {c}"
            )));
        }
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "stepsize decay q must lie in (0, 1), got {q}"
            )));
        }
        let k_max = k_max.unwrap_or_else(|| Self::default_horizon(c, q));
        let p = AlgorithmParams { c, q, k_max };
        p.validate()?;
        Ok(p)
    }

    pub fn default_horizon(c: f64, q: f64) -> usize {
        let mut k = 0;
        let mut alpha = c;
        while alpha >= NEGLIGIBLE_STEPSIZE {
            k += 1;
            alpha = c * q.powi(k as i32);
        }
        k
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c.is_finite() && self.c > 0.0 && self.q > 0.0 && self.q < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "need c > 0 and q in (0, 1), got c = {}, q = {}",
                self.c, self.q
            )));
        }
        if self.k_max == 0 {
            return Err(Error::InvalidParameter("k_max must be positive".into()));
        }
        Ok(())
    }

    pub fn stepsize(&self, k: usize) -> f64 {
        self.c * self.q.powi(k as i32)
    }

    /// `Σ_k α_k = c / (1 − q)`.
    pub fn stepsize_sum(&self) -> f64 {
        self.c / (1.0 - self.q)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeekerState {
    pub k: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl SeekerState {
    /// Start state with `y(0) = x(0)`.
    pub fn initial(x0: Vec<f64>) -> Self {
        SeekerState {
            k: 0,
            y: x0.clone(),
            x: x0,
        }
    }

    /// Start state with explicitly chosen aggregate estimates.
    pub fn with_estimates(x0: Vec<f64>, y0: Vec<f64>) -> Result<Self> {
        if x0.len() != y0.len() {
            return Err(Error::InvalidParameter(
                "actions and estimates differ in length".into(),
            ));
        }
        Ok(SeekerState { k: 0, x: x0, y: y0 })
    }

    pub fn mean_action(&self) -> f64 {
        self.x.iter().sum::<f64>() / self.x.len() as f64
    }

    /// `1ᵀy − 1ᵀx`.
    pub fn consensus_drift(&self) -> f64 {
        self.y.iter().sum::<f64>() - self.x.iter().sum::<f64>()
    }
}

/// First iterate found outside the certified box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxExit {
    pub k: usize,
    pub player: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    /// Snapshots for `k = 0..=k_max`, or just the final state when recording
    /// was off.
    pub states: Vec<SeekerState>,
    /// `p(k) = y(k) + w(k)`, aligned with `states`.
    pub transmitted: Vec<Vec<f64>>,
    /// `w(k)`, aligned with `states`; empty when recording was off.
    pub noises: Vec<Vec<f64>>,
    pub box_exit: Option<BoxExit>,
}

impl Trace {
    pub fn final_state(&self) -> &SeekerState {
        self.states.last().expect("trace holds at least one state")
    }
}

/// Applies one update given the noise `w(k)`; returns the next state and
/// the transmitted vector `p(k)`.
pub fn advance<G: AggregativeGame>(
    game: &G,
    weights: &DMatrix<f64>,
    alpha: f64,
    state: &SeekerState,
    noise: &[f64],
) -> Result<(SeekerState, Vec<f64>)> {
    let n = state.x.len();
    let mut x = state.x.clone();
    let mut y = state.y.clone();
    let mut p = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    advance_in_place(
        game,
        weights,
        alpha,
        &mut x,
        &mut y,
        noise,
        &mut p,
        &mut scratch,
    );
    let next = SeekerState {
        k: state.k + 1,
        x,
        y,
    };
    check_finite(&next)?;
    Ok((next, p))
}

#[allow(clippy::too_many_arguments)]
fn advance_in_place<G: AggregativeGame>(
    game: &G,
    weights: &DMatrix<f64>,
    alpha: f64,
    x: &mut [f64],
    y: &mut [f64],
    noise: &[f64],
    p: &mut [f64],
    dx: &mut [f64],
) {
    let n = x.len();
    for i in 0..n {
        p[i] = y[i] + noise[i];
    }
    for i in 0..n {
        let next = x[i] - alpha * game.estimated_gradient(i, x[i], y[i]);
        dx[i] = next - x[i];
        x[i] = next;
    }
    for i in 0..n {
        let mut mixed = 0.0;
        for j in 0..n {
            mixed += weights[(i, j)] * p[j];
        }
        y[i] = mixed + dx[i];
    }
}

fn check_finite(s: &SeekerState) -> Result<()> {
    for (player, &v) in s.x.iter().enumerate() {
        if !v.is_finite() || v.abs() > DIVERGENCE_LIMIT {
            return Err(Error::Divergence {
                k: s.k,
                player,
                value: v,
            });
        }
    }
    for (player, &v) in s.y.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::Divergence {
                k: s.k,
                player,
                value: v,
            });
        }
    }
    Ok(())
}

/// One configured execution: game, communication, schedule and noise.
#[derive(Debug, Clone)]
pub struct Seeker<'a, G, M> {
    game: &'a G,
    mixing: &'a M,
    params: AlgorithmParams,
    noise: NoiseStream,
    bound_box: Option<&'a BoundBox>,
}

impl<'a, G: AggregativeGame, M: Mixing> Seeker<'a, G, M> {
    pub fn new(
        game: &'a G,
        mixing: &'a M,
        params: AlgorithmParams,
        noise: NoiseStream,
    ) -> Result<Self> {
        if mixing.n_nodes() != game.n_players() {
            return Err(Error::InvalidParameter(format!(
                "topology has {} nodes, game has {} players",
                mixing.n_nodes(),
                game.n_players()
            )));
        }
        params.validate()?;
        noise.params().validate()?;
        Ok(Seeker {
            game,
            mixing,
            params,
            noise,
            bound_box: None,
        })
    }

    /// Track whether iterates leave the box the gradient bound was
    /// certified on.
    pub fn with_bound_box(mut self, bound_box: &'a BoundBox) -> Self {
        self.bound_box = Some(bound_box);
        self
    }

    pub fn params(&self) -> &AlgorithmParams {
        &self.params
    }

    /// Draws `w(k)` and advances one iteration. Returns the next state,
    /// `p(k)` and `w(k)`.
    pub fn step(&self, state: &SeekerState) -> Result<(SeekerState, Vec<f64>, Vec<f64>)> {
        if state.k >= self.params.k_max {
            return Err(Error::InvalidParameter(format!(
                "state is already at the horizon k_max = {}",
                self.params.k_max
            )));
        }
        let n = self.game.n_players();
        if state.x.len() != n || state.y.len() != n {
            return Err(Error::InvalidParameter("state dimension mismatch".into()));
        }
        let mut w = vec![0.0; n];
        self.noise.fill(state.k, &mut w);
        let (next, p) = advance(
            self.game,
            self.mixing.weights_at(state.k),
            self.params.stepsize(state.k),
            state,
            &w,
        )?;
        Ok((next, p, w))
    }

    fn check_start(&self, state: &SeekerState) -> Result<()> {
        let n = self.game.n_players();
        if state.x.len() != n || state.y.len() != n {
            return Err(Error::InvalidParameter(format!(
                "initial state must have {n} entries"
            )));
        }
        if state.x.iter().chain(&state.y).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("initial state"));
        }
        Ok(())
    }

    fn note_box(&self, state: &SeekerState, exit: &mut Option<BoxExit>) {
        if exit.is_some() {
            return;
        }
        if let Some(b) = self.bound_box {
            for (j, &v) in state.x.iter().enumerate() {
                if v < b.lower[j] || v > b.upper[j] {
                    *exit = Some(BoxExit {
                        k: state.k,
                        player: j,
                        value: v,
                    });
                    return;
                }
            }
        }
    }

    /// Iterates from `start` to `k_max`, handing every state (including the
    /// start) to `observe` together with the noise drawn at that iteration.
    /// Returns the final state and the first box exit, if any.
    pub fn run_observed<F>(
        &self,
        start: SeekerState,
        mut observe: F,
    ) -> Result<(SeekerState, Option<BoxExit>)>
    where
        F: FnMut(&SeekerState, &[f64], &[f64]),
    {
        self.check_start(&start)?;
        let n = self.game.n_players();
        let SeekerState {
            k: k0,
            mut x,
            mut y,
        } = start;
        let mut w = vec![0.0; n];
        let mut p = vec![0.0; n];
        let mut dx = vec![0.0; n];
        let mut exit = None;
        let mut k = k0;
        loop {
            self.noise.fill(k, &mut w);
            let snapshot = SeekerState { k, x, y };
            self.note_box(&snapshot, &mut exit);
            for i in 0..n {
                p[i] = snapshot.y[i] + w[i];
            }
            observe(&snapshot, &p, &w);
            if k >= self.params.k_max {
                return Ok((snapshot, exit));
            }
            SeekerState { x, y, .. } = snapshot;
            advance_in_place(
                self.game,
                self.mixing.weights_at(k),
                self.params.stepsize(k),
                &mut x,
                &mut y,
                &w,
                &mut p,
                &mut dx,
            );
            k += 1;
            for (player, &v) in x.iter().enumerate() {
                if !v.is_finite() || v.abs() > DIVERGENCE_LIMIT {
                    return Err(Error::Divergence {
                        k,
                        player,
                        value: v,
                    });
                }
            }
            if let Some((player, &v)) = y.iter().enumerate().find(|(_, v)| !v.is_finite()) {
                return Err(Error::Divergence {
                    k,
                    player,
                    value: v,
                });
            }
        }
    }

    pub fn run_from(&self, start: SeekerState, record: bool) -> Result<Trace> {
        let mut states = Vec::new();
        let mut transmitted = Vec::new();
        let mut noises = Vec::new();
        let (last, box_exit) = self.run_observed(start, |s, p, w| {
            if record {
                states.push(s.clone());
                transmitted.push(p.to_vec());
                noises.push(w.to_vec());
            } else {
                transmitted.clear();
                transmitted.push(p.to_vec());
            }
        })?;
        if !record {
            states.push(last);
        }
        if let Some(e) = box_exit {
            log::warn!(
                "player {} left the certified box at k = {} (x = {}); bound report does not apply",
                e.player,
                e.k,
                e.value
            );
        }
        Ok(Trace {
            states,
            transmitted,
            noises,
            box_exit,
        })
    }

    pub fn run(&self, x0: &[f64], record: bool) -> Result<Trace> {
        self.run_from(SeekerState::initial(x0.to_vec()), record)
    }
}

/// Fixed-topology execution from `y(0) = x(0) = x0`.
pub fn run<G: AggregativeGame>(
    game: &G,
    topology: &Topology,
    params: AlgorithmParams,
    noise: NoiseStream,
    x0: &[f64],
    record: bool,
) -> Result<Trace> {
    Seeker::new(game, topology, params, noise)?.run(x0, record)
}

/// Switching-topology execution with `A(k)` taken from the schedule.
pub fn run_time_varying<G: AggregativeGame>(
    game: &G,
    schedule: &TopologySchedule,
    params: AlgorithmParams,
    noise: NoiseStream,
    x0: &[f64],
    record: bool,
) -> Result<Trace> {
    Seeker::new(game, schedule, params, noise)?.run(x0, record)
}
