//! Heterogeneous discrete-time linear plants and their output-regulation gains.
//!
//! Each plant `x(k+1) = A x(k) + B u(k), y(k) = C x(k)` is driven by
//! `u = -K x + (G + K Psi) xi`, where `(Psi, G)` solve the regulator equations
//! `(A - I) Psi + B G = 0, C Psi = I` and `K` makes `A - B K` Schur stable.

use nalgebra::{DMatrix, DVector};

use crate::error::{NesError, Result};

/// Relative singular-value cutoff used for every numeric rank decision.
pub const RANK_RTOL: f64 = 1e-10;
/// Maximum tolerated max-norm residual of the regulator equations.
pub const REGULATOR_TOL: f64 = 1e-9;
pub const RICCATI_TOL: f64 = 1e-12;
pub const RICCATI_MAX_ITERS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
}

impl PlantModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(NesError::DimensionMismatch(format!(
                "A must be square and nonempty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(NesError::DimensionMismatch(format!(
                "B must be {n}xm with m >= 1, got {}x{}",
                b.nrows(),
                b.ncols()
            )));
        }
        if c.ncols() != n || c.nrows() == 0 {
            return Err(NesError::DimensionMismatch(format!(
                "C must be qx{n} with q >= 1, got {}x{}",
                c.nrows(),
                c.ncols()
            )));
        }
        Ok(Self { a, b, c })
    }

    /// Builds a plant from row-major nested literals.
    pub fn from_rows(a: &[Vec<f64>], b: &[Vec<f64>], c: &[Vec<f64>]) -> Result<Self> {
        Self::new(
            matrix_from_rows(a)?,
            matrix_from_rows(b)?,
            matrix_from_rows(c)?,
        )
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }
    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }
    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }

    /// `[[A - I, B], [C, 0]]`, the (n+q)x(n+m) regulator block matrix.
    pub fn regulator_matrix(&self) -> DMatrix<f64> {
        let (n, m, q) = (self.n_states(), self.n_inputs(), self.n_outputs());
        let mut o = DMatrix::zeros(n + q, n + m);
        o.view_mut((0, 0), (n, n))
            .copy_from(&(&self.a - DMatrix::identity(n, n)));
        o.view_mut((0, n), (n, m)).copy_from(&self.b);
        o.view_mut((n, 0), (q, n)).copy_from(&self.c);
        o
    }
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().position(|r| r.len() != ncols) {
        return Err(NesError::DimensionMismatch(format!(
            "row {bad} has {} entries, expected {ncols}",
            rows[bad].len()
        )));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Numeric rank with cutoff `RANK_RTOL * sigma_max`.
pub fn numeric_rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().singular_values();
    let smax = sv.iter().fold(0.0_f64, |a, &s| a.max(s));
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_RTOL * smax).count()
}

/// `[B, AB, ..., A^{n-1} B]`.
pub fn controllability_matrix(plant: &PlantModel) -> DMatrix<f64> {
    let (n, m) = (plant.n_states(), plant.n_inputs());
    let mut out = DMatrix::zeros(n, n * m);
    let mut block = plant.b.clone();
    for k in 0..n {
        out.view_mut((0, k * m), (n, m)).copy_from(&block);
        block = &plant.a * block;
    }
    out
}

pub fn check_controllability(plant: &PlantModel) -> bool {
    numeric_rank(&controllability_matrix(plant)) == plant.n_states()
}

pub fn check_regulator_rank(plant: &PlantModel) -> bool {
    numeric_rank(&plant.regulator_matrix()) == plant.n_states() + plant.n_outputs()
}

/// Kronecker product `lhs ⊗ rhs`.
pub fn kron(lhs: &DMatrix<f64>, rhs: &DMatrix<f64>) -> DMatrix<f64> {
    let (lr, lc) = lhs.shape();
    let (rr, rc) = rhs.shape();
    let mut out = DMatrix::zeros(lr * rr, lc * rc);
    for i in 0..lr {
        for j in 0..lc {
            out.view_mut((i * rr, j * rc), (rr, rc))
                .copy_from(&(rhs * lhs[(i, j)]));
        }
    }
    out
}

/// Column-stacking `vec` operator.
pub fn vec_of(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Max-norm residuals `(‖(A-I)Psi + BG‖, ‖C Psi - I‖)`.
pub fn regulator_residuals(plant: &PlantModel, psi: &DMatrix<f64>, g: &DMatrix<f64>) -> (f64, f64) {
    let n = plant.n_states();
    let q = plant.n_outputs();
    let r1 = (&plant.a - DMatrix::identity(n, n)) * psi + &plant.b * g;
    let r2 = &plant.c * psi - DMatrix::identity(q, q);
    (max_abs(&r1), max_abs(&r2))
}

fn rhs_block(plant: &PlantModel) -> DMatrix<f64> {
    let (n, q) = (plant.n_states(), plant.n_outputs());
    let mut rhs = DMatrix::zeros(n + q, q);
    rhs.view_mut((n, 0), (q, q))
        .copy_from(&DMatrix::identity(q, q));
    rhs
}

fn split_solution(plant: &PlantModel, t: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, m, q) = (plant.n_states(), plant.n_inputs(), plant.n_outputs());
    (
        t.view((0, 0), (n, q)).into_owned(),
        t.view((n, 0), (m, q)).into_owned(),
    )
}

fn ensure_rank(plant: &PlantModel) -> Result<()> {
    let rank = numeric_rank(&plant.regulator_matrix());
    let required = plant.n_states() + plant.n_outputs();
    if rank != required {
        return Err(NesError::RegulatorRankDeficient { rank, required });
    }
    Ok(())
}

/// Solves the regulator equations through the vectorized system
/// `(I_q ⊗ O) vec(T) = vec([0; I])` with `T = [Psi; G]`, returning the
/// minimum-norm `(Psi, G)` when `m > q` leaves it underdetermined.
pub fn solve_regulator_equations(plant: &PlantModel) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    ensure_rank(plant)?;
    let (n, m, q) = (plant.n_states(), plant.n_inputs(), plant.n_outputs());
    let big = kron(&DMatrix::identity(q, q), &plant.regulator_matrix());
    let rhs = vec_of(&rhs_block(plant));
    let svd = big.svd(true, true);
    let smax = svd.singular_values.max();
    let sol = svd
        .solve(&rhs, RANK_RTOL * smax)
        .map_err(|e| NesError::InvalidArgument(e.to_string()))?;
    let t = DMatrix::from_column_slice(n + m, q, sol.as_slice());
    let (psi, g) = split_solution(plant, &t);
    let (r1, r2) = regulator_residuals(plant, &psi, &g);
    if r1.max(r2) > REGULATOR_TOL {
        return Err(NesError::RegulatorResidual(r1.max(r2)));
    }
    Ok((psi, g))
}

/// Second route to the same minimum-norm solution: `T = Oᵀ (O Oᵀ)⁻¹ [0; I]`
/// solved block-wise with a Cholesky factorization, no vectorization and no
/// SVD. Used to cross-check [`solve_regulator_equations`].
pub fn solve_regulator_blocked(plant: &PlantModel) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    ensure_rank(plant)?;
    let o = plant.regulator_matrix();
    let gram = &o * o.transpose();
    let chol = gram.cholesky().ok_or(NesError::RegulatorRankDeficient {
        rank: 0,
        required: o.nrows(),
    })?;
    let t = o.transpose() * chol.solve(&rhs_block(plant));
    Ok(split_solution(plant, &t))
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    assert!(m.is_square(), "spectral radius of a non-square matrix");
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .complex_eigenvalues()
        .iter()
        .fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

/// Discrete-time LQR gain for `Q = state_weight·I`, `R = input_weight·I`,
/// from the Riccati recursion started at `P = Q`.
pub fn synthesize_stabilizing_gain(
    plant: &PlantModel,
    state_weight: f64,
    input_weight: f64,
) -> Result<DMatrix<f64>> {
    if !(state_weight >= 0.0) || !(input_weight > 0.0) {
        return Err(NesError::InvalidArgument(format!(
            "LQR weights must satisfy Q >= 0, R > 0 (got {state_weight}, {input_weight})"
        )));
    }
    let (n, m) = (plant.n_states(), plant.n_inputs());
    let a = &plant.a;
    let b = &plant.b;
    let at = a.transpose();
    let bt = b.transpose();
    let q = DMatrix::identity(n, n) * state_weight;
    let r = DMatrix::identity(m, m) * input_weight;

    let gain = |p: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let s = &r + &bt * p * b;
        let s_inv = s.try_inverse().ok_or(NesError::RiccatiDiverged(0))?;
        Ok(s_inv * &bt * p * a)
    };

    let mut p = q.clone();
    let mut converged = false;
    for _ in 0..RICCATI_MAX_ITERS {
        let k = gain(&p)?;
        let next = &at * &p * a - &at * &p * b * &k + &q;
        if next.iter().any(|v| !v.is_finite()) {
            break;
        }
        let diff = max_abs(&(&next - &p));
        p = next;
        if diff < RICCATI_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(NesError::RiccatiDiverged(RICCATI_MAX_ITERS));
    }
    let k = gain(&p)?;
    let rho = spectral_radius(&(a - b * &k));
    if rho >= 1.0 {
        return Err(NesError::NotStabilizing(rho));
    }
    Ok(k)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegulatorGains {
    pub k: DMatrix<f64>,
    pub psi: DMatrix<f64>,
    pub g: DMatrix<f64>,
}

impl RegulatorGains {
    /// Feedforward `G + K Psi` applied to the reference.
    pub fn feedforward(&self) -> DMatrix<f64> {
        &self.g + &self.k * &self.psi
    }
}

/// Full gain set for one plant: LQR feedback plus minimum-norm regulator
/// solution.
pub fn synthesize_gains(
    plant: &PlantModel,
    state_weight: f64,
    input_weight: f64,
) -> Result<RegulatorGains> {
    let k = synthesize_stabilizing_gain(plant, state_weight, input_weight)?;
    let (psi, g) = solve_regulator_equations(plant)?;
    Ok(RegulatorGains { k, psi, g })
}

/// `(A x + B u, C x)`; the output is read from the pre-step state.
pub fn plant_step(
    plant: &PlantModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if x.len() != plant.n_states() || u.len() != plant.n_inputs() {
        return Err(NesError::DimensionMismatch(format!(
            "plant expects x in R^{} and u in R^{}, got {} and {}",
            plant.n_states(),
            plant.n_inputs(),
            x.len(),
            u.len()
        )));
    }
    Ok((&plant.a * x + &plant.b * u, &plant.c * x))
}

/// `u = -K x + (G + K Psi) xi`.
pub fn control_input(
    gains: &RegulatorGains,
    x: &DVector<f64>,
    xi: &DVector<f64>,
) -> Result<DVector<f64>> {
    if x.len() != gains.k.ncols() || xi.len() != gains.psi.ncols() {
        return Err(NesError::DimensionMismatch(format!(
            "control law expects x in R^{} and xi in R^{}, got {} and {}",
            gains.k.ncols(),
            gains.psi.ncols(),
            x.len(),
            xi.len()
        )));
    }
    Ok(-(&gains.k * x) + gains.feedforward() * xi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector};

    fn scalar(a: f64, b: f64, c: f64) -> PlantModel {
        PlantModel::new(dmatrix![a], dmatrix![b], dmatrix![c]).unwrap()
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert!(PlantModel::new(dmatrix![1.0, 0.0], dmatrix![1.0], dmatrix![1.0]).is_err());
        assert!(PlantModel::new(dmatrix![1.0], dmatrix![1.0; 1.0], dmatrix![1.0]).is_err());
        assert!(PlantModel::new(dmatrix![1.0], dmatrix![1.0], dmatrix![1.0, 2.0]).is_err());
    }

    #[test]
    fn controllability_examples() {
        let double_int = PlantModel::new(
            dmatrix![0.0, 1.0; 0.0, 0.0],
            dmatrix![0.0; 1.0],
            dmatrix![1.0, 0.0],
        )
        .unwrap();
        assert!(check_controllability(&double_int));
        let stuck = PlantModel::new(
            dmatrix![1.0, 0.0; 0.0, 1.0],
            dmatrix![1.0; 0.0],
            dmatrix![1.0, 0.0],
        )
        .unwrap();
        assert!(!check_controllability(&stuck));
    }

    #[test]
    fn regulator_rank_scalar_examples() {
        assert!(check_regulator_rank(&scalar(0.0, 1.0, 1.0)));
        assert!(!check_regulator_rank(&scalar(1.0, 0.0, 1.0)));
    }

    #[test]
    fn regulator_scalar_solutions() {
        let (psi, g) = solve_regulator_equations(&scalar(0.0, 1.0, 1.0)).unwrap();
        assert_relative_eq!(psi[(0, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(g[(0, 0)], 1.0, epsilon = 1e-12);
        let (psi, g) = solve_regulator_equations(&scalar(1.0, 1.0, 1.0)).unwrap();
        assert_relative_eq!(psi[(0, 0)], 1.0, epsilon = 1e-12);
        assert!(g[(0, 0)].abs() < 1e-12);
    }

    #[test]
    fn regulator_rank_deficient_errors() {
        let err = solve_regulator_equations(&scalar(1.0, 0.0, 1.0)).unwrap_err();
        assert!(matches!(
            err,
            NesError::RegulatorRankDeficient {
                rank: 1,
                required: 2
            }
        ));
    }

    #[test]
    fn kron_small_case() {
        let a = dmatrix![1.0, 2.0; 3.0, 4.0];
        let b = dmatrix![0.0, 1.0];
        let k = kron(&a, &b);
        assert_eq!(k, dmatrix![0.0, 1.0, 0.0, 2.0; 0.0, 3.0, 0.0, 4.0]);
    }

    #[test]
    fn golden_ratio_lqr() {
        let k = synthesize_stabilizing_gain(&scalar(1.0, 1.0, 1.0), 1.0, 1.0).unwrap();
        let phi = (1.0 + 5.0_f64.sqrt()) / 2.0;
        assert_relative_eq!(k[(0, 0)], phi - 1.0, epsilon = 1e-10);
        assert_relative_eq!(1.0 - k[(0, 0)], 2.0 - phi, epsilon = 1e-10);
    }

    #[test]
    fn schur_plant_with_zero_state_weight_gets_zero_gain() {
        let k = synthesize_stabilizing_gain(&scalar(0.5, 1.0, 1.0), 0.0, 1.0).unwrap();
        assert_eq!(k[(0, 0)], 0.0);
    }

    #[test]
    fn unstable_uncontrollable_plant_is_rejected() {
        let err = synthesize_stabilizing_gain(&scalar(2.0, 0.0, 1.0), 1.0, 1.0).unwrap_err();
        assert!(matches!(
            err,
            NesError::NotStabilizing(_) | NesError::RiccatiDiverged(_)
        ));
    }

    #[test]
    fn spectral_radius_examples() {
        assert_relative_eq!(spectral_radius(&DMatrix::identity(2, 2)), 1.0);
        assert_eq!(spectral_radius(&dmatrix![0.0, 1.0; 0.0, 0.0]), 0.0);
        assert_relative_eq!(spectral_radius(&dmatrix![0.5, 0.0; 0.0, -0.9]), 0.9);
        // rotation by 90 degrees scaled by 0.7: complex pair
        assert_relative_eq!(
            spectral_radius(&dmatrix![0.0, -0.7; 0.7, 0.0]),
            0.7,
            epsilon = 1e-12
        );
    }

    #[test]
    fn plant_step_examples() {
        let (x, y) = plant_step(&scalar(1.0, 1.0, 1.0), &dvector![2.0], &dvector![0.5]).unwrap();
        assert_eq!(x[0], 2.5);
        assert_eq!(y[0], 2.0);
        let p1 = PlantModel::from_rows(
            &[vec![0.0, 1.0], vec![0.0, 0.0]],
            &[vec![0.0, 1.0], vec![1.0, -2.0]],
            &[vec![1.0, 1.0]],
        )
        .unwrap();
        let (x, y) = plant_step(&p1, &dvector![1.0, 1.0], &dvector![0.0, 0.0]).unwrap();
        assert_eq!(x, dvector![1.0, 0.0]);
        assert_eq!(y, dvector![2.0]);
        let ident = PlantModel::new(
            DMatrix::identity(2, 2),
            dmatrix![1.0; 0.0],
            dmatrix![1.0, 0.0],
        )
        .unwrap();
        let (x, _) = plant_step(&ident, &dvector![3.0, -4.0], &dvector![0.0]).unwrap();
        assert_eq!(x, dvector![3.0, -4.0]);
        assert!(plant_step(&p1, &dvector![1.0], &dvector![0.0, 0.0]).is_err());
    }

    #[test]
    fn control_input_examples() {
        let gains = synthesize_gains(&scalar(1.0, 1.0, 1.0), 1.0, 1.0).unwrap();
        let u = control_input(&gains, &dvector![0.0], &dvector![5.0]).unwrap();
        assert_relative_eq!(u[0], 5.0 * (5.0_f64.sqrt() - 1.0) / 2.0, epsilon = 1e-9);
        let u0 = control_input(&gains, &dvector![2.0], &dvector![0.0]).unwrap();
        assert_relative_eq!(u0[0], -gains.k[(0, 0)] * 2.0);
        assert!(control_input(&gains, &dvector![0.0, 1.0], &dvector![1.0]).is_err());
    }
}
