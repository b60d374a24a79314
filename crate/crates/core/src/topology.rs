//! Communication structures: fixed doubly stochastic weight matrices and
//! periodic switching schedules, with their mixing constants.

use std::collections::VecDeque;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result, TopologyViolation};
use crate::game::EIGEN_TOLERANCE;

/// Tolerance on row and column sums.
pub const STOCHASTIC_TOLERANCE: f64 = 1e-12;
const SINKHORN_MAX_ITER: usize = 10_000;

/// Anything that can supply the weight matrix used at iteration `k`.
pub trait Mixing: Sync {
    fn n_nodes(&self) -> usize;
    fn weights_at(&self, k: usize) -> &DMatrix<f64>;
}

/// Builds a dense matrix from row vectors.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 {
        return Err(TopologyViolation::Empty.into());
    }
    for r in rows {
        if r.len() != n {
            return Err(TopologyViolation::NotSquare {
                rows: n,
                cols: r.len(),
            }
            .into());
        }
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn averaging_matrix(n: usize) -> DMatrix<f64> {
    DMatrix::from_element(n, n, 1.0 / n as f64)
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    let symmetric = m.relative_eq(&m.transpose(), 0.0, 0.0);
    if symmetric {
        if let Some(e) = SymmetricEigen::try_new(m.clone(), EIGEN_TOLERANCE, 0) {
            return e.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        }
    }
    m.complex_eigenvalues()
        .iter()
        .fold(0.0_f64, |a, v| a.max(v.norm()))
}

/// Number of connected components of the undirected graph with an edge
/// wherever some matrix in `mats` has a positive off-diagonal entry.
fn components(n: usize, mats: &[&DMatrix<f64>]) -> usize {
    let mut seen = vec![false; n];
    let mut count = 0;
    let mut queue = VecDeque::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        queue.push_back(start);
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                if !seen[v] && mats.iter().any(|m| m[(u, v)] > 0.0 || m[(v, u)] > 0.0) {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
    }
    count
}

/// Checks every per-matrix condition except connectivity.
fn check_weights(m: &DMatrix<f64>) -> Result<()> {
    let (rows, cols) = m.shape();
    if rows != cols {
        return Err(TopologyViolation::NotSquare { rows, cols }.into());
    }
    if rows == 0 {
        return Err(TopologyViolation::Empty.into());
    }
    let n = rows;
    for i in 0..n {
        for j in 0..n {
            let v = m[(i, j)];
            if !v.is_finite() {
                return Err(TopologyViolation::NonFinite { row: i, col: j }.into());
            }
            if v < 0.0 {
                return Err(TopologyViolation::NegativeWeight {
                    row: i,
                    col: j,
                    value: v,
                }
                .into());
            }
        }
    }
    for i in 0..n {
        let sum: f64 = m.row(i).iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOLERANCE {
            return Err(TopologyViolation::RowSum { row: i, sum }.into());
        }
    }
    for j in 0..n {
        let sum: f64 = m.column(j).iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOLERANCE {
            return Err(TopologyViolation::ColumnSum { col: j, sum }.into());
        }
    }
    for i in 0..n {
        if m[(i, i)] <= 0.0 {
            return Err(TopologyViolation::ZeroDiagonal { node: i }.into());
        }
        for j in 0..n {
            if (m[(i, j)] > 0.0) != (m[(j, i)] > 0.0) {
                return Err(TopologyViolation::AsymmetricPattern { row: i, col: j }.into());
            }
        }
    }
    Ok(())
}

/// Alternating row/column scaling (Sinkhorn–Knopp). Only touches the
/// existing sparsity pattern.
pub fn renormalize(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut a = m.clone();
    let n = a.nrows();
    for _ in 0..SINKHORN_MAX_ITER {
        for i in 0..n {
            let s: f64 = a.row(i).iter().sum();
            if s <= 0.0 {
                return Err(TopologyViolation::RenormalizationFailed.into());
            }
            a.row_mut(i).scale_mut(1.0 / s);
        }
        for j in 0..n {
            let s: f64 = a.column(j).iter().sum();
            if s <= 0.0 {
                return Err(TopologyViolation::RenormalizationFailed.into());
            }
            a.column_mut(j).scale_mut(1.0 / s);
        }
        let worst = (0..n)
            .map(|i| (a.row(i).iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max);
        if worst < 0.1 * STOCHASTIC_TOLERANCE {
            return Ok(a);
        }
    }
    Err(TopologyViolation::RenormalizationFailed.into())
}

/// A validated fixed weight matrix.
#[derive(Debug, Clone)]
pub struct Topology {
    weights: DMatrix<f64>,
    gamma: f64,
}

impl Topology {
    pub fn validate_fixed(weights: DMatrix<f64>) -> Result<Self> {
        check_weights(&weights)?;
        let n = weights.nrows();
        let comps = components(n, &[&weights]);
        if comps != 1 {
            return Err(TopologyViolation::Disconnected { components: comps }.into());
        }
        let gamma = spectral_radius(&(&weights - averaging_matrix(n)));
        if gamma.is_nan() || gamma >= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "contraction factor {gamma} is not below one"
            )));
        }
        Ok(Topology { weights, gamma })
    }

    /// Like [`Topology::validate_fixed`], optionally rescaling rows and
    /// columns to sum to one first.
    pub fn validate_fixed_with(weights: DMatrix<f64>, renormalize_weights: bool) -> Result<Self> {
        if renormalize_weights {
            check_shape_and_sign(&weights)?;
            Topology::validate_fixed(renormalize(&weights)?)
        } else {
            Topology::validate_fixed(weights)
        }
    }

    /// The five-node cycle used in the reference experiment.
    pub fn reference_cycle() -> Self {
        let rows = vec![
            vec![0.5, 0.2, 0.0, 0.0, 0.3],
            vec![0.2, 0.5, 0.3, 0.0, 0.0],
            vec![0.0, 0.3, 0.5, 0.2, 0.0],
            vec![0.0, 0.0, 0.2, 0.5, 0.3],
            vec![0.3, 0.0, 0.0, 0.3, 0.4],
        ];
        Topology::validate_fixed(matrix_from_rows(&rows).unwrap()).expect("valid cycle")
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    /// Spectral radius of `A − 11ᵀ/N`.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `‖Aᵏ − 11ᵀ/N‖₂` for `k = 1..=k_max`, by repeated multiplication.
    pub fn contraction_curve(&self, k_max: usize) -> Result<Vec<f64>> {
        if k_max == 0 {
            return Err(Error::InvalidParameter("k_max must be at least 1".into()));
        }
        let n = self.weights.nrows();
        let avg = averaging_matrix(n);
        let mut power = self.weights.clone();
        let mut out = Vec::with_capacity(k_max);
        for _ in 0..k_max {
            out.push(spectral_norm(&(&power - &avg)));
            power = &self.weights * power;
        }
        Ok(out)
    }
}

fn check_shape_and_sign(m: &DMatrix<f64>) -> Result<()> {
    let (rows, cols) = m.shape();
    if rows != cols {
        return Err(TopologyViolation::NotSquare { rows, cols }.into());
    }
    if let Some((idx, _)) = m
        .iter()
        .enumerate()
        .find(|(_, v)| !v.is_finite() || **v < 0.0)
    {
        let (row, col) = (idx % rows, idx / rows);
        return Err(TopologyViolation::NegativeWeight {
            row,
            col,
            value: m[(row, col)],
        }
        .into());
    }
    Ok(())
}

impl Mixing for Topology {
    fn n_nodes(&self) -> usize {
        self.weights.nrows()
    }

    fn weights_at(&self, _k: usize) -> &DMatrix<f64> {
        &self.weights
    }
}

/// A periodic switching schedule `A(k) = matrices[k mod period]`.
#[derive(Debug, Clone)]
pub struct TopologySchedule {
    matrices: Vec<DMatrix<f64>>,
    min_weight: f64,
    window: usize,
    theta: f64,
    beta: f64,
}

impl TopologySchedule {
    pub fn validate_schedule(matrices: Vec<DMatrix<f64>>, period: usize) -> Result<Self> {
        if matrices.is_empty() {
            return Err(TopologyViolation::Empty.into());
        }
        if period != matrices.len() {
            return Err(Error::InvalidParameter(format!(
                "period {period} does not match {} matrices",
                matrices.len()
            )));
        }
        let n = matrices[0].nrows();
        for m in &matrices {
            check_weights(m)?;
            if m.nrows() != n {
                return Err(TopologyViolation::SizeMismatch {
                    expected: n,
                    found: m.nrows(),
                }
                .into());
            }
        }
        let cap = period * n;
        let window = (1..=cap)
            .find(|&z| {
                (0..period).all(|start| {
                    let win: Vec<&DMatrix<f64>> =
                        (0..z).map(|l| &matrices[(start + l) % period]).collect();
                    components(n, &win) == 1
                })
            })
            .ok_or(TopologyViolation::NotJointlyConnected { search_cap: cap })?;
        let min_weight = matrices
            .iter()
            .flat_map(|m| m.iter().copied())
            .filter(|&v| v > 0.0)
            .fold(f64::INFINITY, f64::min);
        let base = 1.0 - min_weight / (4.0 * (n * n) as f64);
        Ok(TopologySchedule {
            matrices,
            min_weight,
            window,
            theta: base.powi(-2),
            beta: base.powf(1.0 / window as f64),
        })
    }

    pub fn from_fixed(topology: &Topology) -> Result<Self> {
        TopologySchedule::validate_schedule(vec![topology.weights().clone()], 1)
    }

    /// The two-matrix switching schedule used in the reference experiment.
    pub fn reference_switching() -> Self {
        let even = vec![
            vec![0.3, 0.3, 0.0, 0.0, 0.4],
            vec![0.3, 0.5, 0.2, 0.0, 0.0],
            vec![0.0, 0.2, 0.5, 0.0, 0.3],
            vec![0.0, 0.0, 0.0, 1.0, 0.0],
            vec![0.4, 0.0, 0.3, 0.0, 0.3],
        ];
        let odd = vec![
            vec![1.0, 0.0, 0.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 0.7, 0.3],
            vec![0.0, 0.0, 0.0, 0.3, 0.7],
        ];
        TopologySchedule::validate_schedule(
            vec![
                matrix_from_rows(&even).unwrap(),
                matrix_from_rows(&odd).unwrap(),
            ],
            2,
        )
        .expect("valid switching schedule")
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }

    pub fn period(&self) -> usize {
        self.matrices.len()
    }

    /// Smallest positive weight `δ`.
    pub fn min_weight(&self) -> f64 {
        self.min_weight
    }

    /// Joint-connectivity window `z`.
    pub fn window(&self) -> usize {
        self.window
    }

    /// `θ = (1 − δ/4N²)^{−2}`.
    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// `β = (1 − δ/4N²)^{1/z}`.
    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `Ψ(k, s) = A(k) A(k−1) ⋯ A(s)`.
    pub fn transition_product(&self, k: usize, s: usize) -> Result<DMatrix<f64>> {
        if k < s {
            return Err(Error::InvalidParameter(format!(
                "transition product needs k >= s, got k={k}, s={s}"
            )));
        }
        let mut psi = self.weights_at(s).clone();
        for t in (s + 1)..=k {
            psi = self.weights_at(t) * psi;
        }
        Ok(psi)
    }
}

impl Mixing for TopologySchedule {
    fn n_nodes(&self) -> usize {
        self.matrices[0].nrows()
    }

    fn weights_at(&self, k: usize) -> &DMatrix<f64> {
        &self.matrices[k % self.matrices.len()]
    }
}
