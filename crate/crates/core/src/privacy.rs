//! Laplace noise streams, the differential-privacy budget of a
//! parameterization, and the coupled-execution sensitivity audit.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{AggregativeGame, QuadraticAggregativeGame};
use crate::seeker::{advance, AlgorithmParams, SeekerState};
use crate::topology::Mixing;

/// Largest gap between the two executions' observations that still counts
/// as identical.
pub const OBSERVATION_TOLERANCE: f64 = 1e-9;
const EPSILON_SLACK: f64 = 1e-9;
// 2^16 players per iteration block; each draw consumes two 32-bit words.
const PLAYER_BITS: u32 = 16;

/// Laplace scale schedule `θ_k = d·q̄ᵏ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseParams {
    pub d: f64,
    pub q_bar: f64,
}

impl NoiseParams {
    /// `d = 0` is accepted and turns the mechanism off.
    pub fn new(d: f64, q_bar: f64) -> Result<Self> {
        let p = NoiseParams { d, q_bar };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d.is_finite() && self.d >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "noise scale d must be finite and nonnegative, got {}",
                self.d
            )));
        }
        if !(self.q_bar > 0.0 && self.q_bar < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "noise decay q_bar must lie in (0, 1), got {}",
                self.q_bar
            )));
        }
        Ok(())
    }

    /// Checks the ordering `q < q̄ < 1` required for a finite privacy budget.
    pub fn check_against(&self, params: &AlgorithmParams) -> Result<()> {
        check_decay_order(params.q, self.q_bar)
    }

    pub fn scale(&self, k: usize) -> f64 {
        self.d * self.q_bar.powi(k as i32)
    }
}

fn check_decay_order(q: f64, q_bar: f64) -> Result<()> {
    if !(q < q_bar && q_bar < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "privacy budget needs q_bar in (q, 1): q = {q}, q_bar = {q_bar}"
        )));
    }
    Ok(())
}

/// Converts 64 random bits to a uniform value on the open interval (−½, ½).
fn open_centered_uniform(bits: u64) -> f64 {
    let m = (bits >> 12) as f64;
    (m + 0.5) * (1.0 / (1u64 << 52) as f64) - 0.5
}

/// Inverse-CDF Laplace sample with scale `b` from a uniform `u ∈ (−½, ½)`.
pub fn laplace_from_uniform(u: f64, b: f64) -> f64 {
    -b * u.signum() * (-2.0 * u.abs()).ln_1p()
}

/// A stateless source of Laplace noise keyed on
/// `(seed, replica, player, iteration)`.
///
/// Backed by ChaCha8 used as a counter-based generator: the seed picks the
/// key, the replica picks the stream, and `(k, player)` picks the word
/// position, so any draw can be reproduced in isolation.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    params: NoiseParams,
    seed: u64,
    replica: u64,
    base: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(params: NoiseParams, seed: u64, replica: u64) -> Self {
        let mut base = ChaCha8Rng::seed_from_u64(seed);
        base.set_stream(replica);
        NoiseStream {
            params,
            seed,
            replica,
            base,
        }
    }

    pub fn params(&self) -> &NoiseParams {
        &self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn replica(&self) -> u64 {
        self.replica
    }

    fn position(player: usize, k: usize) -> u128 {
        (((k as u128) << PLAYER_BITS) | player as u128) << 1
    }

    /// Uniform draw on (−½, ½) for one coordinate.
    pub fn uniform(&self, player: usize, k: usize) -> f64 {
        let mut rng = self.base.clone();
        rng.set_word_pos(Self::position(player, k));
        open_centered_uniform(rng.next_u64())
    }

    /// `w_player(k) ~ Lap(d·q̄ᵏ)`.
    pub fn laplace_draw(&self, player: usize, k: usize) -> f64 {
        if self.params.d == 0.0 {
            return 0.0;
        }
        laplace_from_uniform(self.uniform(player, k), self.params.scale(k))
    }

    /// Fills `out[i]` with the draw for player `i` at iteration `k`.
    /// Identical to calling [`NoiseStream::laplace_draw`] per player.
    pub fn fill(&self, k: usize, out: &mut [f64]) {
        if self.params.d == 0.0 {
            out.fill(0.0);
            return;
        }
        assert!(
            out.len() <= 1 << PLAYER_BITS,
            "too many players for one stream"
        );
        let scale = self.params.scale(k);
        let mut rng = self.base.clone();
        rng.set_word_pos(Self::position(0, k));
        for w in out.iter_mut() {
            *w = laplace_from_uniform(open_centered_uniform(rng.next_u64()), scale);
        }
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "{name} must be positive and finite, got {v}"
        )));
    }
    Ok(())
}

/// Privacy budget `ε = 2cCq̄ / (d(q̄ − q))`.
pub fn epsilon_of(c: f64, q: f64, d: f64, q_bar: f64, gradient_bound: f64) -> Result<f64> {
    check_positive("c", c)?;
    check_positive("q", q)?;
    check_positive("d", d)?;
    check_positive("C", gradient_bound)?;
    check_decay_order(q, q_bar)?;
    Ok(2.0 * c * gradient_bound * q_bar / (d * (q_bar - q)))
}

/// Noise scale `d` that yields exactly `target_epsilon`.
pub fn scale_for_epsilon(
    c: f64,
    q: f64,
    q_bar: f64,
    gradient_bound: f64,
    target_epsilon: f64,
) -> Result<f64> {
    check_positive("c", c)?;
    check_positive("q", q)?;
    check_positive("C", gradient_bound)?;
    check_positive("epsilon", target_epsilon)?;
    check_decay_order(q, q_bar)?;
    Ok(2.0 * c * gradient_bound * q_bar / (target_epsilon * (q_bar - q)))
}

/// Two games whose costs agree for every player except one.
#[derive(Debug, Clone)]
pub struct AdjacentPair<G> {
    pub base: G,
    pub variant: G,
    pub differing_player: usize,
}

impl<G: AggregativeGame> AdjacentPair<G> {
    /// Checks adjacency by comparing costs at the supplied probe points:
    /// players other than `differing_player` must agree exactly everywhere,
    /// and `differing_player` must disagree somewhere.
    pub fn new(base: G, variant: G, differing_player: usize, probes: &[Vec<f64>]) -> Result<Self> {
        let n = base.n_players();
        if variant.n_players() != n {
            return Err(Error::NotAdjacent("player counts differ".into()));
        }
        if differing_player >= n {
            return Err(Error::PlayerIndex {
                index: differing_player,
                n_players: n,
            });
        }
        let mut differs = false;
        for x in probes {
            if x.len() != n {
                return Err(Error::NotAdjacent("probe point has wrong dimension".into()));
            }
            for i in 0..n {
                let same = base.cost(i, x) == variant.cost(i, x);
                if i == differing_player {
                    differs |= !same;
                } else if !same {
                    return Err(Error::NotAdjacent(format!(
                        "player {i} cost differs at {x:?}"
                    )));
                }
            }
        }
        if !differs {
            return Err(Error::NotAdjacent(format!(
                "player {differing_player} cost is identical at every probe"
            )));
        }
        Ok(AdjacentPair {
            base,
            variant,
            differing_player,
        })
    }
}

impl AdjacentPair<QuadraticAggregativeGame> {
    /// Quadratic games are adjacent when they share the price coefficients
    /// and differ in exactly one target.
    pub fn quadratic(
        base: QuadraticAggregativeGame,
        variant: QuadraticAggregativeGame,
    ) -> Result<Self> {
        if base.targets().len() != variant.targets().len() {
            return Err(Error::NotAdjacent("player counts differ".into()));
        }
        if base.agg_price_slope() != variant.agg_price_slope()
            || base.agg_price_offset() != variant.agg_price_offset()
        {
            return Err(Error::NotAdjacent(
                "aggregate price coefficients differ, so every cost changes".into(),
            ));
        }
        let differing: Vec<usize> = base
            .targets()
            .iter()
            .zip(variant.targets())
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .map(|(i, _)| i)
            .collect();
        match differing.as_slice() {
            [i] => Ok(AdjacentPair {
                differing_player: *i,
                base,
                variant,
            }),
            [] => Err(Error::NotAdjacent("games are identical".into())),
            _ => Err(Error::NotAdjacent(format!(
                "targets differ for players {differing:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditStep {
    pub k: usize,
    pub delta_y: f64,
    pub sensitivity_bound: f64,
    pub noise_scale: f64,
}

/// Result of the coupled-execution audit.
#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub differing_player: usize,
    pub k_max: usize,
    /// `C` used for the budget: the larger of the certified bound and the
    /// largest estimated-gradient magnitude seen in either execution.
    pub gradient_bound: f64,
    pub certified_gradient_bound: f64,
    pub observed_gradient_max: f64,
    /// Largest `|p¹(k) − p²(k)|`.
    pub observation_gap: f64,
    /// `min_k (2Cα_k − |Δy(k)|)`; nonnegative when every step is within
    /// its sensitivity bound.
    pub sensitivity_margin: f64,
    /// `Σ_k |Δy(k)| / θ_k`.
    pub privacy_loss: f64,
    pub epsilon: f64,
    /// `ε − privacy_loss`.
    pub epsilon_margin: f64,
    pub passed: bool,
    pub steps: Vec<AuditStep>,
}

/// Runs the base game with keyed noise and the variant with the coupled
/// noise `w²_{i₀}(k) = w¹_{i₀}(k) + Δy_{i₀}(k)` (identical noise elsewhere),
/// then checks that observations coincide, that each `|Δy_{i₀}(k)|` stays
/// within `2Cα_k`, and that the accumulated privacy loss stays within ε.
#[allow(clippy::too_many_arguments)]
pub fn sensitivity_audit<G: AggregativeGame, M: Mixing>(
    pair: &AdjacentPair<G>,
    mixing: &M,
    params: &AlgorithmParams,
    noise: &NoiseParams,
    x0: &[f64],
    seed: u64,
    certified_gradient_bound: f64,
) -> Result<AuditReport> {
    let n = pair.base.n_players();
    if mixing.n_nodes() != n || x0.len() != n {
        return Err(Error::InvalidParameter(
            "game, topology and initial state dimensions differ".into(),
        ));
    }
    params.validate()?;
    noise.validate()?;
    noise.check_against(params)?;
    check_positive("d", noise.d)?;
    let i0 = pair.differing_player;
    let stream = NoiseStream::new(*noise, seed, 0);

    let mut s1 = SeekerState::initial(x0.to_vec());
    let mut s2 = SeekerState::initial(x0.to_vec());
    let mut w1 = vec![0.0; n];
    let mut w2 = vec![0.0; n];
    let mut gap = 0.0_f64;
    let mut observed_grad = 0.0_f64;
    let mut deltas = Vec::with_capacity(params.k_max + 1);

    for k in 0..=params.k_max {
        let dy = s1.y[i0] - s2.y[i0];
        deltas.push(dy);
        stream.fill(k, &mut w1);
        w2.copy_from_slice(&w1);
        w2[i0] = w1[i0] + dy;
        for i in 0..n {
            let p1 = s1.y[i] + w1[i];
            let p2 = s2.y[i] + w2[i];
            gap = gap.max((p1 - p2).abs());
            observed_grad = observed_grad
                .max(pair.base.estimated_gradient(i, s1.x[i], s1.y[i]).abs())
                .max(pair.variant.estimated_gradient(i, s2.x[i], s2.y[i]).abs());
        }
        if gap > OBSERVATION_TOLERANCE {
            return Err(Error::ObservationMismatch { k, gap });
        }
        if k == params.k_max {
            break;
        }
        let a = mixing.weights_at(k);
        let alpha = params.stepsize(k);
        s1 = advance(&pair.base, a, alpha, &s1, &w1)?.0;
        s2 = advance(&pair.variant, a, alpha, &s2, &w2)?.0;
    }

    let c_bound = certified_gradient_bound.max(observed_grad);
    let epsilon = epsilon_of(params.c, params.q, noise.d, noise.q_bar, c_bound)?;
    let mut sensitivity_margin = f64::INFINITY;
    let mut privacy_loss = 0.0;
    let mut steps = Vec::with_capacity(deltas.len());
    for (k, &dy) in deltas.iter().enumerate() {
        let bound = 2.0 * c_bound * params.stepsize(k);
        let scale = noise.scale(k);
        sensitivity_margin = sensitivity_margin.min(bound - dy.abs());
        privacy_loss += dy.abs() / scale;
        steps.push(AuditStep {
            k,
            delta_y: dy,
            sensitivity_bound: bound,
            noise_scale: scale,
        });
    }
    let epsilon_margin = epsilon - privacy_loss;
    Ok(AuditReport {
        differing_player: i0,
        k_max: params.k_max,
        gradient_bound: c_bound,
        certified_gradient_bound,
        observed_gradient_max: observed_grad,
        observation_gap: gap,
        sensitivity_margin,
        privacy_loss,
        epsilon,
        epsilon_margin,
        passed: gap <= OBSERVATION_TOLERANCE
            && sensitivity_margin >= 0.0
            && epsilon_margin >= -EPSILON_SLACK,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epsilon_examples() {
        let e = epsilon_of(1.0, 0.9, 1.0, 0.99, 1.0).unwrap();
        assert!((e - 22.0).abs() < 1e-12);
        let c = 135.0;
        assert!((epsilon_of(1.0, 0.9, 1.0, 0.99, c).unwrap() - 22.0 * c).abs() < 1e-9);
        let half = epsilon_of(1.0, 0.9, 2.0, 0.99, c).unwrap();
        assert!((half - 11.0 * c).abs() < 1e-9);
        assert!(epsilon_of(1.0, 0.99, 1.0, 0.99, 1.0).is_err());
        assert!(epsilon_of(1.0, 0.9, 0.0, 0.99, 1.0).is_err());
    }

    #[test]
    fn scale_for_epsilon_examples() {
        let d = scale_for_epsilon(1.0, 0.9, 0.99, 1.0, 22.0).unwrap();
        assert!((d - 1.0).abs() < 1e-12);
        let d2 = scale_for_epsilon(1.0, 0.9, 0.99, 1.0, 44.0).unwrap();
        assert!((d2 - 0.5).abs() < 1e-12);
        assert!(scale_for_epsilon(1.0, 0.9, 0.99, 1.0, 0.0).is_err());
        assert!(scale_for_epsilon(1.0, 0.995, 0.99, 1.0, 1.0).is_err());
    }

    #[test]
    fn uniform_stays_open() {
        assert!(open_centered_uniform(0) > -0.5);
        assert!(open_centered_uniform(u64::MAX) < 0.5);
        assert!(laplace_from_uniform(open_centered_uniform(0), 1.0).is_finite());
        assert!(laplace_from_uniform(open_centered_uniform(u64::MAX), 1.0).is_finite());
    }

    #[test]
    fn draws_are_keyed() {
        let p = NoiseParams::new(1.0, 0.99).unwrap();
        let s = NoiseStream::new(p, 7, 3);
        assert_eq!(s.laplace_draw(2, 10), s.laplace_draw(2, 10));
        assert_eq!(
            s.laplace_draw(2, 10),
            NoiseStream::new(p, 7, 3).laplace_draw(2, 10)
        );
        assert_ne!(s.laplace_draw(2, 10), s.laplace_draw(1, 10));
        assert_ne!(s.laplace_draw(2, 10), s.laplace_draw(2, 11));
        assert_ne!(
            s.laplace_draw(2, 10),
            NoiseStream::new(p, 7, 4).laplace_draw(2, 10)
        );
        let mut buf = vec![0.0; 5];
        s.fill(10, &mut buf);
        for (i, w) in buf.iter().enumerate() {
            assert_eq!(*w, s.laplace_draw(i, 10));
        }
        let silent = NoiseStream::new(NoiseParams::new(0.0, 0.99).unwrap(), 7, 3);
        assert_eq!(silent.laplace_draw(0, 0), 0.0);
    }

    #[test]
    fn mean_absolute_value_matches_scale() {
        let p = NoiseParams::new(1.0, 0.99).unwrap();
        let mut buf = vec![0.0; 50_000];
        for (k, expected) in [(0usize, 1.0), (1, 0.99)] {
            let mut sum = 0.0;
            for rep in 0..20 {
                NoiseStream::new(p, 11, rep).fill(k, &mut buf);
                sum += buf.iter().map(|w| w.abs()).sum::<f64>();
            }
            let mean = sum / 1e6;
            assert!((mean - expected).abs() < 0.01, "k={k}: {mean}");
        }
    }

    #[test]
    fn quadratic_adjacency() {
        let g = QuadraticAggregativeGame::energy_consumption();
        let v = g.with_target(0, 51.0).unwrap();
        let pair = AdjacentPair::quadratic(g.clone(), v.clone()).unwrap();
        assert_eq!(pair.differing_player, 0);
        assert!(AdjacentPair::quadratic(g.clone(), g.clone()).is_err());
        let two = v.with_target(3, 1.0).unwrap();
        assert!(AdjacentPair::quadratic(g.clone(), two).is_err());
        let probes = vec![vec![0.0; 5], vec![1.0, 2.0, 3.0, 4.0, 5.0]];
        assert!(AdjacentPair::new(g.clone(), v.clone(), 0, &probes).is_ok());
        assert!(AdjacentPair::new(g, v, 1, &probes).is_err());
    }
}
