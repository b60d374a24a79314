//! Aggregative games: cost and gradient evaluation, game constants, and the
//! exact Nash equilibrium of the quadratic energy-consumption family.
//!
//! Players are indexed from zero. The aggregate is the mean action
//! `x̄ = (1/N) Σ x_j`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub(crate) const EIGEN_TOLERANCE: f64 = 1e-12;
const EIGEN_MAX_ITER: usize = 10_000;
const NASH_RESIDUAL_TOLERANCE: f64 = 1e-9;

/// A game whose costs depend on a player's own action and the mean action.
///
/// Implementations are evaluated in the inner loop of the seeker, so the
/// methods here do no bounds or finiteness checking.
pub trait AggregativeGame: Sync {
    fn n_players(&self) -> usize;

    /// Cost of player `i` at the joint action `x`.
    fn cost(&self, i: usize, x: &[f64]) -> f64;

    /// Partial derivative of player `i`'s cost with respect to its own action.
    fn gradient(&self, i: usize, x: &[f64]) -> f64;

    /// The same partial derivative with the aggregate replaced by the local
    /// estimate `y_i`.
    fn estimated_gradient(&self, i: usize, x_i: f64, y_i: f64) -> f64;
}

/// Axis-aligned box over which the gradient bound is certified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoundBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let b = BoundBox { lower, upper };
        b.validate()?;
        Ok(b)
    }

    /// Box spanned by two points, each side pushed out by a quarter of its
    /// width so the total width grows by 50%. Sides of zero width get a
    /// half-width of one.
    pub fn spanning(a: &[f64], b: &[f64]) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::InvalidBox("corner dimensions differ".into()));
        }
        let mut lower = Vec::with_capacity(a.len());
        let mut upper = Vec::with_capacity(a.len());
        for (&p, &q) in a.iter().zip(b) {
            let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
            let pad = if hi > lo { 0.25 * (hi - lo) } else { 1.0 };
            lower.push(lo - pad);
            upper.push(hi + pad);
        }
        BoundBox::new(lower, upper)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.len() != self.upper.len() {
            return Err(Error::InvalidBox(format!(
                "lower has {} entries, upper has {}",
                self.lower.len(),
                self.upper.len()
            )));
        }
        if self.lower.is_empty() {
            return Err(Error::InvalidBox("box has no dimensions".into()));
        }
        for (j, (&lo, &hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidBox(format!("coordinate {j} is not finite")));
            }
            if lo >= hi {
                return Err(Error::InvalidBox(format!(
                    "coordinate {j} is degenerate: [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&v, (&lo, &hi))| lo <= v && v <= hi)
    }

    /// Smallest box containing `self` and the point `x`.
    pub fn enlarged_to(&self, x: &[f64]) -> BoundBox {
        let mut out = self.clone();
        for (j, &v) in x.iter().enumerate() {
            out.lower[j] = out.lower[j].min(v);
            out.upper[j] = out.upper[j].max(v);
        }
        out
    }
}

/// Constants appearing in the convergence and privacy bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameConstants {
    /// Strong monotonicity modulus `m`.
    pub strong_monotonicity: f64,
    /// Per-player Lipschitz constants `l_i` of `∇_i f_i`.
    pub lipschitz: Vec<f64>,
    /// Gradient bound `C`, valid on `bound_box` only.
    pub gradient_bound: f64,
    pub bound_box: BoundBox,
}

impl GameConstants {
    pub fn max_lipschitz(&self) -> f64 {
        self.lipschitz
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `f_i(x) = (x_i − x̂_i)² + (slope·Σ_j x_j + offset)·x_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticAggregativeGame {
    n_players: usize,
    targets: Vec<f64>,
    agg_price_slope: f64,
    agg_price_offset: f64,
}

impl QuadraticAggregativeGame {
    pub fn new(targets: Vec<f64>, agg_price_slope: f64, agg_price_offset: f64) -> Result<Self> {
        let n_players = targets.len();
        if n_players < 2 {
            return Err(Error::InvalidGame(format!(
                "need at least two players, got {n_players}"
            )));
        }
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("targets"));
        }
        if !agg_price_slope.is_finite() || !agg_price_offset.is_finite() {
            return Err(Error::NonFinite("aggregate price coefficients"));
        }
        let game = QuadraticAggregativeGame {
            n_players,
            targets,
            agg_price_slope,
            agg_price_offset,
        };
        let m = game.min_eigenvalue();
        if m <= EIGEN_TOLERANCE {
            return Err(Error::NotMonotone(m));
        }
        Ok(game)
    }

    /// The five-player energy consumption game with targets 50, 55, …, 70.
    pub fn energy_consumption() -> Self {
        QuadraticAggregativeGame::new(vec![50.0, 55.0, 60.0, 65.0, 70.0], 0.04, 5.0)
            .expect("reference game is strongly monotone")
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn agg_price_slope(&self) -> f64 {
        self.agg_price_slope
    }

    pub fn agg_price_offset(&self) -> f64 {
        self.agg_price_offset
    }

    /// Same game with one player's target replaced.
    pub fn with_target(&self, i: usize, target: f64) -> Result<Self> {
        self.check_index(i)?;
        let mut targets = self.targets.clone();
        targets[i] = target;
        QuadraticAggregativeGame::new(targets, self.agg_price_slope, self.agg_price_offset)
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.n_players {
            return Err(Error::PlayerIndex {
                index: i,
                n_players: self.n_players,
            });
        }
        Ok(())
    }

    fn check_profile(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_players {
            return Err(Error::InvalidGame(format!(
                "action profile has {} entries, expected {}",
                x.len(),
                self.n_players
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("action profile"));
        }
        Ok(())
    }

    pub fn eval_cost(&self, i: usize, x: &[f64]) -> Result<f64> {
        self.check_index(i)?;
        self.check_profile(x)?;
        Ok(self.cost(i, x))
    }

    pub fn partial_gradient_true(&self, i: usize, x: &[f64]) -> Result<f64> {
        self.check_index(i)?;
        self.check_profile(x)?;
        Ok(self.gradient(i, x))
    }

    pub fn partial_gradient_estimated(&self, i: usize, x_i: f64, y_i: f64) -> Result<f64> {
        self.check_index(i)?;
        if !x_i.is_finite() || !y_i.is_finite() {
            return Err(Error::NonFinite("action or aggregate estimate"));
        }
        Ok(self.estimated_gradient(i, x_i, y_i))
    }

    /// Jacobian `M` of the affine pseudo-gradient `g(x) = Mx + b`.
    pub fn jacobian(&self) -> DMatrix<f64> {
        let n = self.n_players;
        let s = self.agg_price_slope;
        DMatrix::from_fn(n, n, |i, j| if i == j { 2.0 + 2.0 * s } else { s })
    }

    /// Constant term `b` of the pseudo-gradient.
    pub fn gradient_offset(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.n_players,
            self.targets.iter().map(|t| self.agg_price_offset - 2.0 * t),
        )
    }

    pub fn pseudo_gradient(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_players).map(|i| self.gradient(i, x)).collect()
    }

    fn symmetric_jacobian_eigenvalues(&self) -> DVector<f64> {
        let m = self.jacobian();
        let sym = (&m + m.transpose()) * 0.5;
        SymmetricEigen::try_new(sym, EIGEN_TOLERANCE, EIGEN_MAX_ITER)
            .map(|e| e.eigenvalues)
            .unwrap_or_else(|| DVector::from_element(self.n_players, f64::NAN))
    }

    fn min_eigenvalue(&self) -> f64 {
        self.symmetric_jacobian_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Exact Nash equilibrium: the root of the pseudo-gradient.
    pub fn solve_nash(&self) -> Result<Vec<f64>> {
        let m = self.jacobian();
        let rhs = -self.gradient_offset();
        let chol = m
            .cholesky()
            .ok_or_else(|| Error::NotMonotone(self.min_eigenvalue()))?;
        let sol: Vec<f64> = chol.solve(&rhs).iter().copied().collect();
        let residual = self
            .pseudo_gradient(&sol)
            .iter()
            .fold(0.0_f64, |acc, g| acc.max(g.abs()));
        if residual.is_nan() || residual >= NASH_RESIDUAL_TOLERANCE {
            return Err(Error::InvalidGame(format!(
                "Nash solve residual {residual:e} exceeds tolerance"
            )));
        }
        Ok(sol)
    }

    /// Monotonicity modulus, per-player Lipschitz constants, and the gradient
    /// bound over `bound_box`.
    ///
    /// Each `∇_i f_i` is affine, so its extreme values over the box are
    /// reached at corners and can be found coordinate by coordinate.
    pub fn estimate_constants(&self, bound_box: &BoundBox) -> Result<GameConstants> {
        bound_box.validate()?;
        if bound_box.dim() != self.n_players {
            return Err(Error::InvalidBox(format!(
                "box has {} dimensions, game has {} players",
                bound_box.dim(),
                self.n_players
            )));
        }
        let nash = self.solve_nash()?;
        if !bound_box.contains(&nash) {
            return Err(Error::InvalidBox(format!(
                "box does not contain the Nash equilibrium {nash:?}"
            )));
        }
        let m = self.jacobian();
        let b = self.gradient_offset();
        let strong_monotonicity = self.min_eigenvalue();
        let lipschitz: Vec<f64> = m.row_iter().map(|r| r.norm()).collect();
        let mut gradient_bound = 0.0_f64;
        for i in 0..self.n_players {
            let (mut hi, mut lo) = (b[i], b[i]);
            for j in 0..self.n_players {
                let a = m[(i, j)];
                let (p, q) = (a * bound_box.lower[j], a * bound_box.upper[j]);
                hi += p.max(q);
                lo += p.min(q);
            }
            gradient_bound = gradient_bound.max(hi.abs()).max(lo.abs());
        }
        Ok(GameConstants {
            strong_monotonicity,
            lipschitz,
            gradient_bound,
            bound_box: bound_box.clone(),
        })
    }
}

impl AggregativeGame for QuadraticAggregativeGame {
    fn n_players(&self) -> usize {
        self.n_players
    }

    fn cost(&self, i: usize, x: &[f64]) -> f64 {
        let total: f64 = x.iter().sum();
        let dev = x[i] - self.targets[i];
        dev * dev + (self.agg_price_slope * total + self.agg_price_offset) * x[i]
    }

    fn gradient(&self, i: usize, x: &[f64]) -> f64 {
        let total: f64 = x.iter().sum();
        let s = self.agg_price_slope;
        2.0 * (x[i] - self.targets[i]) + s * total + s * x[i] + self.agg_price_offset
    }

    fn estimated_gradient(&self, i: usize, x_i: f64, y_i: f64) -> f64 {
        let s = self.agg_price_slope;
        2.0 * (x_i - self.targets[i])
            + self.n_players as f64 * s * y_i
            + self.agg_price_offset
            + s * x_i
    }
}
