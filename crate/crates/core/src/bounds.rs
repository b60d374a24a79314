//! Closed-form accuracy and privacy bounds, and the parameter tuning
//! search built on them.
//!
//! Everything here is a pure function of [`BoundInputs`]. Formulas are
//! transcribed term by term; the only departure is that a ratio
//! `(aᵏ − bᵏ)/(a − b)` with `a ≈ b` is replaced by its limit `k·aᵏ⁻¹`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::game::GameConstants;
use crate::privacy::{epsilon_of, scale_for_epsilon};

/// Below this gap the difference quotient is replaced by its limit.
pub const DEGENERATE_GAP: f64 = 1e-9;

/// Mixing constants of the communication structure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MixingConstants {
    /// Fixed topology with contraction factor `γ`.
    Fixed { gamma: f64 },
    /// Switching topology with joint-connectivity constants `θ`, `β`.
    Switching { theta: f64, beta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub n_players: usize,
    /// `m`
    pub strong_monotonicity: f64,
    /// `max_i l_i`
    pub max_lipschitz: f64,
    /// `C`
    pub gradient_bound: f64,
    pub c: f64,
    pub q: f64,
    pub d: f64,
    pub q_bar: f64,
    pub mixing: MixingConstants,
    /// `C₁ = max_n |y_n(0)|`
    pub c1: f64,
    /// `C₂ = ‖x(0) − x*‖`
    pub c2: f64,
}

impl BoundInputs {
    #[allow(clippy::too_many_arguments)]
    pub fn from_constants(
        constants: &GameConstants,
        c: f64,
        q: f64,
        d: f64,
        q_bar: f64,
        mixing: MixingConstants,
        x0: &[f64],
        nash: &[f64],
    ) -> Result<Self> {
        if x0.len() != nash.len() || x0.len() != constants.lipschitz.len() {
            return Err(Error::InvalidParameter(
                "initial state, equilibrium and constants differ in dimension".into(),
            ));
        }
        let c1 = x0.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let c2 = x0
            .iter()
            .zip(nash)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let inputs = BoundInputs {
            n_players: x0.len(),
            strong_monotonicity: constants.strong_monotonicity,
            max_lipschitz: constants.max_lipschitz(),
            gradient_bound: constants.gradient_bound,
            c,
            q,
            d,
            q_bar,
            mixing,
            c1,
            c2,
        };
        inputs.validate()?;
        Ok(inputs)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.n_players < 2 {
            return bad(format!("need at least two players, got {}", self.n_players));
        }
        if !(self.q > 0.0 && self.q < self.q_bar && self.q_bar < 1.0) {
            return bad(format!(
                "need 0 < q < q_bar < 1, got q = {}, q_bar = {}",
                self.q, self.q_bar
            ));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return bad(format!("c must be positive, got {}", self.c));
        }
        if !(self.d >= 0.0 && self.d.is_finite()) {
            return bad(format!("d must be nonnegative, got {}", self.d));
        }
        for (name, v) in [
            ("m", self.strong_monotonicity),
            ("max l_i", self.max_lipschitz),
            ("C", self.gradient_bound),
            ("C1", self.c1),
            ("C2", self.c2),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and nonnegative, got {v}"));
            }
        }
        match self.mixing {
            MixingConstants::Fixed { gamma } if !(0.0..1.0).contains(&gamma) => {
                bad(format!("gamma must lie in [0, 1), got {gamma}"))
            }
            MixingConstants::Switching { theta, beta }
                if !(theta > 0.0 && theta.is_finite() && beta > 0.0 && beta < 1.0) =>
            {
                bad(format!(
                    "need theta > 0 and beta in (0, 1), got {theta}, {beta}"
                ))
            }
            _ => Ok(()),
        }
    }

    fn n(&self) -> f64 {
        self.n_players as f64
    }

    /// `C₂ + cC√N/(1 − q)`, the bound on `‖x(k) − x*‖`.
    fn distance_bound(&self) -> f64 {
        self.c2 + self.c * self.gradient_bound * self.n().sqrt() / (1.0 - self.q)
    }

    fn with_cq(&self, c: f64, q: f64, q_bar: f64) -> Self {
        BoundInputs {
            c,
            q,
            q_bar,
            ..self.clone()
        }
    }
}

/// `(aᵏ − bᵏ)/(a − b)`, or `k·aᵏ⁻¹` when `a` and `b` coincide.
fn power_difference_quotient(a: f64, b: f64, k: usize) -> f64 {
    if (a - b).abs() < DEGENERATE_GAP {
        if k == 0 {
            0.0
        } else {
            k as f64 * a.powi(k as i32 - 1)
        }
    } else {
        (a.powi(k as i32) - b.powi(k as i32)) / (a - b)
    }
}

/// `E|1ᵀy(k) − 1ᵀx(k)| ≤ N·d·(1 − q̄ᵏ)/(1 − q̄)`.
pub fn consensus_drift_bound(n_players: usize, d: f64, q_bar: f64, k: usize) -> Result<f64> {
    if !(q_bar > 0.0 && q_bar < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "q_bar must lie in (0, 1), got {q_bar}"
        )));
    }
    Ok(n_players as f64 * d * (1.0 - q_bar.powi(k as i32)) / (1.0 - q_bar))
}

fn check_positive_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidParameter(
            "estimation bound is stated for k >= 1".into(),
        ));
    }
    Ok(())
}

/// Bound on `E|y_i(k) − x̄(k)|` under a fixed topology.
pub fn estimation_error_bound(inputs: &BoundInputs, k: usize) -> Result<f64> {
    check_positive_k(k)?;
    inputs.validate()?;
    let MixingConstants::Fixed { gamma } = inputs.mixing else {
        return Err(Error::InvalidParameter(
            "fixed-topology bound needs a contraction factor".into(),
        ));
    };
    let n = inputs.n();
    let (d, qb, q) = (inputs.d, inputs.q_bar, inputs.q);
    let pref = 2.0 * (n - 1.0) * n.sqrt() / n;
    let initial = pref * inputs.c1 * gamma.powi(k as i32);
    let noise = pref * d * gamma * power_difference_quotient(gamma, qb, k);
    let drift = pref * inputs.gradient_bound * inputs.c * power_difference_quotient(gamma, q, k);
    let sum_error = d * (1.0 - qb.powi(k as i32)) / (1.0 - qb);
    Ok(initial + noise + drift + sum_error)
}

/// Bound on `E|y_i(k) − x̄(k)|` under a switching topology.
pub fn estimation_error_bound_tv(inputs: &BoundInputs, k: usize) -> Result<f64> {
    check_positive_k(k)?;
    inputs.validate()?;
    let MixingConstants::Switching { theta, beta } = inputs.mixing else {
        return Err(Error::InvalidParameter(
            "switching bound needs theta and beta".into(),
        ));
    };
    let n = inputs.n();
    let (d, qb, q) = (inputs.d, inputs.q_bar, inputs.q);
    let pref = 2.0 * (n - 1.0) * theta;
    let initial = pref * beta.powi(k as i32) * inputs.c1;
    let noise = pref * d * beta * power_difference_quotient(beta, qb, k);
    let drift = pref * inputs.gradient_bound * inputs.c * power_difference_quotient(beta, q, k);
    let sum_error = d * (1.0 - qb.powi(k as i32)) / (1.0 - qb);
    Ok(initial + noise + drift + sum_error)
}

/// Dispatches to the fixed or switching estimation bound.
pub fn estimation_curve_value(inputs: &BoundInputs, k: usize) -> Result<f64> {
    match inputs.mixing {
        MixingConstants::Fixed { .. } => estimation_error_bound(inputs, k),
        MixingConstants::Switching { .. } => estimation_error_bound_tv(inputs, k),
    }
}

/// Terminal mean-square error bound `D` and its four parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MseBound {
    /// `C₂²·e^{−mc/(1−q)}`
    pub initial_term: f64,
    /// `c²NC²/(1 − q²)`
    pub stepsize_term: f64,
    pub phi1: f64,
    pub phi2: f64,
    pub total: f64,
}

impl MseBound {
    fn assemble(inputs: &BoundInputs, phi1: f64, phi2: f64) -> Self {
        let (c, q) = (inputs.c, inputs.q);
        let initial_term =
            inputs.c2 * inputs.c2 * (-inputs.strong_monotonicity * c / (1.0 - q)).exp();
        let stepsize_term =
            c * c * inputs.n() * inputs.gradient_bound * inputs.gradient_bound / (1.0 - q * q);
        MseBound {
            initial_term,
            stepsize_term,
            phi1,
            phi2,
            total: initial_term + stepsize_term + phi1 + phi2,
        }
    }
}

fn fixed_phi1(inputs: &BoundInputs, gamma: f64) -> f64 {
    let (n, c, q, cb) = (inputs.n(), inputs.c, inputs.q, inputs.gradient_bound);
    4.0 * inputs.max_lipschitz
        * (n - 1.0)
        * inputs.distance_bound()
        * (inputs.c1 * c / (1.0 - q * gamma) + cb * c * c * q / ((1.0 - q * gamma) * (1.0 - q * q)))
}

fn fixed_noise_bracket(inputs: &BoundInputs, gamma: f64) -> f64 {
    let (n, q, qb) = (inputs.n(), inputs.q, inputs.q_bar);
    2.0 * (n - 1.0) * gamma / ((1.0 - q * gamma) * (1.0 - qb * q))
        + n.sqrt() / ((1.0 - q) * (1.0 - qb * q))
}

fn switching_phi1(inputs: &BoundInputs, theta: f64, beta: f64) -> f64 {
    let (n, c, q, cb) = (inputs.n(), inputs.c, inputs.q, inputs.gradient_bound);
    4.0 * (n - 1.0)
        * n.sqrt()
        * theta
        * inputs.max_lipschitz
        * inputs.distance_bound()
        * (inputs.c1 * c / (1.0 - q * beta) + cb * c * c * q / ((1.0 - beta * q) * (1.0 - q * q)))
}

fn switching_noise_bracket(inputs: &BoundInputs, theta: f64, beta: f64) -> f64 {
    let (n, q, qb) = (inputs.n(), inputs.q, inputs.q_bar);
    2.0 * (n - 1.0) * theta * beta / ((1.0 - q * beta) * (1.0 - qb * q))
        + 1.0 / ((1.0 - q) * (1.0 - qb * q))
}

/// Fixed-topology bound on `lim E‖x(k) − x*‖²`.
pub fn mse_bound(inputs: &BoundInputs) -> Result<MseBound> {
    inputs.validate()?;
    let MixingConstants::Fixed { gamma } = inputs.mixing else {
        return Err(Error::InvalidParameter(
            "fixed-topology bound needs a contraction factor".into(),
        ));
    };
    let phi1 = fixed_phi1(inputs, gamma);
    let phi2 = 2.0
        * inputs.max_lipschitz
        * inputs.distance_bound()
        * inputs.d
        * inputs.c
        * inputs.q
        * fixed_noise_bracket(inputs, gamma);
    Ok(MseBound::assemble(inputs, phi1, phi2))
}

/// Switching-topology bound on `lim E‖x(k) − x*‖²`.
pub fn mse_bound_tv(inputs: &BoundInputs) -> Result<MseBound> {
    inputs.validate()?;
    let MixingConstants::Switching { theta, beta } = inputs.mixing else {
        return Err(Error::InvalidParameter(
            "switching bound needs theta and beta".into(),
        ));
    };
    let phi1 = switching_phi1(inputs, theta, beta);
    let phi2 = 2.0
        * inputs.max_lipschitz
        * inputs.distance_bound()
        * inputs.n().sqrt()
        * inputs.d
        * inputs.c
        * inputs.q
        * switching_noise_bracket(inputs, theta, beta);
    Ok(MseBound::assemble(inputs, phi1, phi2))
}

pub fn mse_bound_any(inputs: &BoundInputs) -> Result<MseBound> {
    match inputs.mixing {
        MixingConstants::Fixed { .. } => mse_bound(inputs),
        MixingConstants::Switching { .. } => mse_bound_tv(inputs),
    }
}

/// The noise term with `d` eliminated in favour of the privacy budget.
pub fn phi2_of_epsilon(inputs: &BoundInputs, epsilon: f64) -> Result<f64> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let (c, q, qb, cb) = (inputs.c, inputs.q, inputs.q_bar, inputs.gradient_bound);
    let budget_factor = 2.0 * cb * c * c * q * qb / (epsilon * (qb - q));
    let common = 2.0 * inputs.max_lipschitz * inputs.distance_bound() * budget_factor;
    Ok(match inputs.mixing {
        MixingConstants::Fixed { gamma } => common * fixed_noise_bracket(inputs, gamma),
        MixingConstants::Switching { theta, beta } => {
            common * inputs.n().sqrt() * switching_noise_bracket(inputs, theta, beta)
        }
    })
}

/// `D` as a function of the privacy budget; `inputs.d` is ignored.
#[allow(non_snake_case)]
pub fn tradeoff_D_of_epsilon(inputs: &BoundInputs, epsilon: f64) -> Result<f64> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let noiseless = BoundInputs {
        d: 0.0,
        ..inputs.clone()
    };
    let base = mse_bound_any(&noiseless)?;
    Ok(base.initial_term + base.stepsize_term + base.phi1 + phi2_of_epsilon(inputs, epsilon)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub k: usize,
    pub value: f64,
}

/// Every closed-form quantity for one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub provenance: String,
    pub inputs: BoundInputs,
    pub drift_curve: Vec<CurvePoint>,
    /// Estimation-error curve (fixed or switching form per `inputs.mixing`).
    pub estimation_curve: Vec<CurvePoint>,
    pub mse: MseBound,
    /// `None` when `d = 0` (no privacy).
    pub epsilon: Option<f64>,
    /// Noise term restated through `epsilon`; `None` when `d = 0`.
    pub phi2_tilde: Option<f64>,
}

impl BoundReport {
    pub fn build(
        inputs: &BoundInputs,
        probes: &[usize],
        provenance: impl Into<String>,
    ) -> Result<Self> {
        inputs.validate()?;
        let mut drift_curve = Vec::with_capacity(probes.len());
        let mut estimation_curve = Vec::with_capacity(probes.len());
        for &k in probes {
            drift_curve.push(CurvePoint {
                k,
                value: consensus_drift_bound(inputs.n_players, inputs.d, inputs.q_bar, k)?,
            });
            if k >= 1 {
                estimation_curve.push(CurvePoint {
                    k,
                    value: estimation_curve_value(inputs, k)?,
                });
            }
        }
        let mse = mse_bound_any(inputs)?;
        let (epsilon, phi2_tilde) = if inputs.d > 0.0 && inputs.gradient_bound > 0.0 {
            let eps = epsilon_of(
                inputs.c,
                inputs.q,
                inputs.d,
                inputs.q_bar,
                inputs.gradient_bound,
            )?;
            (Some(eps), Some(phi2_of_epsilon(inputs, eps)?))
        } else {
            (None, None)
        };
        Ok(BoundReport {
            provenance: provenance.into(),
            inputs: inputs.clone(),
            drift_curve,
            estimation_curve,
            mse,
            epsilon,
            phi2_tilde,
        })
    }

    /// Copy with every bound multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for p in out
            .drift_curve
            .iter_mut()
            .chain(out.estimation_curve.iter_mut())
        {
            p.value *= factor;
        }
        out.mse.initial_term *= factor;
        out.mse.stepsize_term *= factor;
        out.mse.phi1 *= factor;
        out.mse.phi2 *= factor;
        out.mse.total *= factor;
        out
    }
}

/// Search grid for [`tune_parameters`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningGrid {
    pub c_lo: f64,
    pub c_hi: f64,
    /// Log-spaced points in `[c_lo, c_hi]`.
    pub c_points: usize,
    /// Points `q_j = q̄·j/(q_points + 1)`, `j = 1..=q_points`.
    pub q_points: usize,
    pub q_bar: f64,
}

pub const DEFAULT_TUNING_Q_BAR: f64 = 1.0 - 1e-3;

impl TuningGrid {
    pub fn new(c_lo: f64, c_hi: f64, c_points: usize, q_points: usize) -> Self {
        TuningGrid {
            c_lo,
            c_hi,
            c_points,
            q_points,
            q_bar: DEFAULT_TUNING_Q_BAR,
        }
    }

    /// Grid whose points include all of this one's.
    pub fn refined(&self) -> Self {
        TuningGrid {
            c_points: if self.c_points > 1 {
                2 * self.c_points - 1
            } else {
                1
            },
            q_points: 2 * self.q_points + 1,
            ..*self
        }
    }

    pub fn c_values(&self) -> Vec<f64> {
        if self.c_points == 1 {
            return vec![self.c_lo];
        }
        let ratio = self.c_hi / self.c_lo;
        (0..self.c_points)
            .map(|i| self.c_lo * ratio.powf(i as f64 / (self.c_points - 1) as f64))
            .collect()
    }

    pub fn q_values(&self) -> Vec<f64> {
        (1..=self.q_points)
            .map(|j| self.q_bar * (j as f64 / (self.q_points + 1) as f64))
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if self.c_points == 0 || self.q_points == 0 {
            return Err(Error::InvalidParameter("tuning grid is empty".into()));
        }
        if !(self.c_lo > 0.0 && self.c_hi >= self.c_lo && self.c_hi.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < c_lo <= c_hi, got [{}, {}]",
                self.c_lo, self.c_hi
            )));
        }
        if !(self.q_bar > 0.0 && self.q_bar < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "tuning q_bar must lie in (0, 1), got {}",
                self.q_bar
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningResult {
    pub c: f64,
    pub q: f64,
    pub q_bar: f64,
    /// Noise scale giving the requested budget at `(c, q)`.
    pub d: f64,
    pub d_bound: f64,
}

/// Grid search for the `(c, q)` minimizing `D` at a fixed privacy budget.
/// Ties keep the earliest grid point (c-major order).
pub fn tune_parameters(
    inputs: &BoundInputs,
    epsilon: f64,
    grid: &TuningGrid,
) -> Result<TuningResult> {
    grid.validate()?;
    let points: Vec<(f64, f64)> = grid
        .c_values()
        .into_iter()
        .flat_map(|c| grid.q_values().into_iter().map(move |q| (c, q)))
        .collect();
    let values = exec::map_indexed(points.len(), |idx| {
        let (c, q) = points[idx];
        tradeoff_D_of_epsilon(&inputs.with_cq(c, q, grid.q_bar), epsilon).ok()
    });
    let mut best: Option<(usize, f64)> = None;
    for (idx, v) in values.into_iter().enumerate() {
        if let Some(v) = v.filter(|v| v.is_finite()) {
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((idx, v));
            }
        }
    }
    let (idx, d_bound) =
        best.ok_or_else(|| Error::InvalidParameter("no feasible grid point".into()))?;
    let (c, q) = points[idx];
    Ok(TuningResult {
        c,
        q,
        q_bar: grid.q_bar,
        d: scale_for_epsilon(c, q, grid.q_bar, inputs.gradient_bound, epsilon)?,
        d_bound,
    })
}
