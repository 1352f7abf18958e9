//! Linear-quadratic control and estimation.
//!
//! The infinite-horizon regulator gain is K = (Psi + B'MB)^-1 B'MA with M
//! solving the discrete algebraic Riccati equation
//!
//! ```text
//! M = Phi + A'MA - (A'MB)(Psi + B'MB)^-1 (B'MA)
//! ```
//!
//! solved here by iterating the finite-horizon recursion to its fixed point,
//! which also handles the degenerate instances (Psi = 0, unit-circle closed
//! loops) by reporting them as marginal instead of failing. The Kalman gain
//! comes from the same equation on transposed data, and the module keeps the
//! two code paths separate so the duality can be checked rather than assumed.

use nalgebra::{Complex, DMatrix, DVector};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::CoreError;
use crate::Result;

/// Band half-width around |eigenvalue| = 1 inside which a closed loop is
/// reported as marginal rather than stable or unstable.
pub const MARGINAL_BAND: f64 = 1e-9;

/// Default fixed-point tolerance for Riccati solves.
pub const DARE_TOL: f64 = 1e-10;
/// Default iteration cap for Riccati solves.
pub const DARE_MAX_ITER: usize = 100_000;
/// Default regularizer added to a singular measurement covariance.
pub const SV_EPSILON: f64 = 1e-12;

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    if nrows == 0 {
        return Err(CoreError::DimensionMismatch(format!("{what} is empty")));
    }
    let ncols = rows[0].len();
    if ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(CoreError::DimensionMismatch(format!(
            "{what} rows have inconsistent lengths"
        )));
    }
    let flat: Vec<f64> = rows.iter().flatten().cloned().collect();
    Ok(DMatrix::from_row_slice(nrows, ncols, &flat))
}

fn check_symmetric_psd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if !m.is_square() {
        return Err(CoreError::DimensionMismatch(format!("{what} must be square")));
    }
    let asym = (m - m.transpose()).abs().max();
    if asym > 1e-9 {
        return Err(CoreError::InvalidArgument(format!(
            "{what} is not symmetric (max asymmetry {asym:.3e})"
        )));
    }
    let sym = (m + m.transpose()).scale(0.5);
    let eigs = sym.symmetric_eigenvalues();
    if let Some(min) = eigs.iter().cloned().reduce(f64::min) {
        if min < -1e-9 {
            return Err(CoreError::InvalidArgument(format!(
                "{what} has negative eigenvalue {min:.3e}"
            )));
        }
    }
    Ok(())
}

/// Discrete-time linear system x' = Ax + Bu + w, y = Cx + v with process
/// and measurement noise covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub sigma_w: DMatrix<f64>,
    pub sigma_v: DMatrix<f64>,
}

impl LinearSystem {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        sigma_w: DMatrix<f64>,
        sigma_v: DMatrix<f64>,
    ) -> Result<Self> {
        let d = a.nrows();
        if !a.is_square() {
            return Err(CoreError::DimensionMismatch("A must be square".into()));
        }
        if b.nrows() != d {
            return Err(CoreError::DimensionMismatch(format!(
                "B has {} rows, expected {d}",
                b.nrows()
            )));
        }
        if c.ncols() != d {
            return Err(CoreError::DimensionMismatch(format!(
                "C has {} columns, expected {d}",
                c.ncols()
            )));
        }
        if sigma_w.shape() != (d, d) {
            return Err(CoreError::DimensionMismatch("Sw must be d x d".into()));
        }
        let k = c.nrows();
        if sigma_v.shape() != (k, k) {
            return Err(CoreError::DimensionMismatch("Sv must be k x k".into()));
        }
        check_symmetric_psd(&sigma_w, "Sw")?;
        check_symmetric_psd(&sigma_v, "Sv")?;
        Ok(Self {
            a,
            b,
            c,
            sigma_w,
            sigma_v,
        })
    }

    /// Fully observed system: C = I, no measurement noise.
    pub fn fully_observed(a: DMatrix<f64>, b: DMatrix<f64>, sigma_w: DMatrix<f64>) -> Result<Self> {
        let d = a.nrows();
        Self::new(
            a,
            b,
            DMatrix::identity(d, d),
            sigma_w,
            DMatrix::zeros(d, d),
        )
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }
}

#[derive(Serialize, Deserialize)]
struct SystemJson {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    c: Vec<Vec<f64>>,
    #[serde(rename = "Sw")]
    sw: Vec<Vec<f64>>,
    #[serde(rename = "Sv")]
    sv: Vec<Vec<f64>>,
}

impl Serialize for LinearSystem {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        SystemJson {
            a: rows_of(&self.a),
            b: rows_of(&self.b),
            c: rows_of(&self.c),
            sw: rows_of(&self.sigma_w),
            sv: rows_of(&self.sigma_v),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for LinearSystem {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = SystemJson::deserialize(deserializer)?;
        LinearSystem::new(
            matrix_from_rows(&raw.a, "A").map_err(D::Error::custom)?,
            matrix_from_rows(&raw.b, "B").map_err(D::Error::custom)?,
            matrix_from_rows(&raw.c, "C").map_err(D::Error::custom)?,
            matrix_from_rows(&raw.sw, "Sw").map_err(D::Error::custom)?,
            matrix_from_rows(&raw.sv, "Sv").map_err(D::Error::custom)?,
        )
        .map_err(D::Error::custom)
    }
}

/// Quadratic stage cost x'(Phi)x + u'(Psi)u. Psi = 0 is allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCost {
    pub phi: DMatrix<f64>,
    pub psi: DMatrix<f64>,
}

impl QuadraticCost {
    pub fn new(phi: DMatrix<f64>, psi: DMatrix<f64>) -> Result<Self> {
        check_symmetric_psd(&phi, "Phi")?;
        check_symmetric_psd(&psi, "Psi")?;
        Ok(Self { phi, psi })
    }
}

#[derive(Serialize, Deserialize)]
struct CostJson {
    #[serde(rename = "Phi")]
    phi: Vec<Vec<f64>>,
    #[serde(rename = "Psi")]
    psi: Vec<Vec<f64>>,
}

impl Serialize for QuadraticCost {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        CostJson {
            phi: rows_of(&self.phi),
            psi: rows_of(&self.psi),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for QuadraticCost {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = CostJson::deserialize(deserializer)?;
        QuadraticCost::new(
            matrix_from_rows(&raw.phi, "Phi").map_err(D::Error::custom)?,
            matrix_from_rows(&raw.psi, "Psi").map_err(D::Error::custom)?,
        )
        .map_err(D::Error::custom)
    }
}

/// State-feedback gain with the convention u = -Kx.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackGain {
    pub k: DMatrix<f64>,
}

/// Filter gain L together with the steady-state error covariance P.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterGain {
    pub l: DMatrix<f64>,
    pub p: DMatrix<f64>,
    /// Regularizer that was added to Sv (0 when none was needed).
    pub epsilon_used: f64,
    pub stability: StabilityClass,
}

/// Closed-loop classification with a `MARGINAL_BAND` tolerance around the
/// unit circle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StabilityClass {
    Stable,
    Marginal,
    Unstable,
}

/// Classifies a spectral radius against the unit circle.
pub fn classify_radius(rho: f64) -> StabilityClass {
    if rho < 1.0 - MARGINAL_BAND {
        StabilityClass::Stable
    } else if rho <= 1.0 + MARGINAL_BAND {
        StabilityClass::Marginal
    } else {
        StabilityClass::Unstable
    }
}

/// Result of a Riccati fixed-point solve. `converged` requires both a small
/// residual and a strictly stable closed loop; marginal instances keep their
/// last iterate with `converged = false`.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub m: DMatrix<f64>,
    pub residual: f64,
    pub converged: bool,
    pub iterations: usize,
    pub stability: StabilityClass,
    pub closed_loop_radius: f64,
}

fn riccati_step(
    sys: &LinearSystem,
    cost: &QuadraticCost,
    m: &DMatrix<f64>,
    step: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let bt_m = sys.b.transpose() * m;
    let inner = &cost.psi + &bt_m * &sys.b;
    let inner_inv = inner.clone().try_inverse().ok_or(CoreError::Singular {
        context: "Psi + B'MB in Riccati recursion",
        step,
    })?;
    let gain = &inner_inv * &bt_m * &sys.a;
    let at_m = sys.a.transpose() * m;
    let next = &cost.phi + &at_m * &sys.a - (&at_m * &sys.b) * &gain;
    // keep the iterates symmetric against round-off drift
    let next = (&next + next.transpose()).scale(0.5);
    Ok((next, gain))
}

/// Gains and cost-to-go matrices for the horizon-`T` problem, computed by
/// the backward recursion from M_T = Phi. `cost_to_go[t]` is M_t and
/// `gains[t]` is the feedback applied at time t (built from M_{t+1}).
pub struct RiccatiRecursion {
    pub cost_to_go: Vec<DMatrix<f64>>,
    pub gains: Vec<DMatrix<f64>>,
}

pub fn riccati_recursion(
    sys: &LinearSystem,
    cost: &QuadraticCost,
    horizon: usize,
) -> Result<RiccatiRecursion> {
    riccati_recursion_from(sys, cost, horizon, &cost.phi.clone())
}

/// Backward recursion with an explicit terminal weight M_T.
pub fn riccati_recursion_from(
    sys: &LinearSystem,
    cost: &QuadraticCost,
    horizon: usize,
    terminal: &DMatrix<f64>,
) -> Result<RiccatiRecursion> {
    if horizon < 1 {
        return Err(CoreError::InvalidArgument("horizon must be >= 1".into()));
    }
    let mut cost_to_go = vec![terminal.clone()];
    let mut gains = Vec::new();
    for t in 0..horizon {
        let (next, gain) = riccati_step(sys, cost, &cost_to_go[0], t)?;
        cost_to_go.insert(0, next);
        gains.insert(0, gain);
    }
    Ok(RiccatiRecursion { cost_to_go, gains })
}

/// Iterates the finite-horizon recursion to a fixed point of the discrete
/// algebraic Riccati equation.
pub fn solve_dare(
    sys: &LinearSystem,
    cost: &QuadraticCost,
    tol: f64,
    max_iter: usize,
) -> Result<RiccatiSolution> {
    if tol <= 0.0 {
        return Err(CoreError::InvalidArgument("tol must be positive".into()));
    }
    // stop on the equation residual of the returned iterate: when
    // |f(M) - M| <= tol we keep M, so the reported residual is literal
    let mut m = cost.phi.clone();
    let mut iterations = max_iter;
    let mut residual = f64::INFINITY;
    for k in 0..max_iter {
        let (next, _) = riccati_step(sys, cost, &m, k)?;
        residual = (&next - &m).abs().max();
        if residual <= tol {
            iterations = k + 1;
            break;
        }
        m = next;
    }
    let (_, gain) = riccati_step(sys, cost, &m, iterations)?;
    let loop_matrix = &sys.a - &sys.b * &gain;
    let rho = spectral_radius(&loop_matrix)?;
    let stability = classify_radius(rho);
    Ok(RiccatiSolution {
        m,
        residual,
        converged: residual <= tol && stability == StabilityClass::Stable,
        iterations,
        stability,
        closed_loop_radius: rho,
    })
}

/// Infinite-horizon LQR gain built from the DARE solution.
pub fn lqr_gain(sys: &LinearSystem, cost: &QuadraticCost) -> Result<FeedbackGain> {
    let solution = solve_dare(sys, cost, DARE_TOL, DARE_MAX_ITER)?;
    gain_from_solution(sys, cost, &solution)
}

/// K = (Psi + B'MB)^-1 B'MA for a given Riccati solution.
pub fn gain_from_solution(
    sys: &LinearSystem,
    cost: &QuadraticCost,
    solution: &RiccatiSolution,
) -> Result<FeedbackGain> {
    let bt_m = sys.b.transpose() * &solution.m;
    let inner = &cost.psi + &bt_m * &sys.b;
    let inner_inv = inner.try_inverse().ok_or(CoreError::Singular {
        context: "Psi + B'MB in gain assembly",
        step: solution.iterations,
    })?;
    Ok(FeedbackGain {
        k: inner_inv * bt_m * &sys.a,
    })
}

/// Closed-loop transition matrix A - B*K. `b_star` substitutes the true
/// input matrix when it differs from the modeled one.
pub fn closed_loop(
    sys: &LinearSystem,
    gain: &FeedbackGain,
    b_star: Option<&DMatrix<f64>>,
) -> DMatrix<f64> {
    let b = b_star.unwrap_or(&sys.b);
    &sys.a - b * &gain.k
}

/// Largest eigenvalue magnitude of a square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    if !m.is_square() {
        return Err(CoreError::DimensionMismatch(
            "spectral radius needs a square matrix".into(),
        ));
    }
    let eigs: DVector<Complex<f64>> = m.clone().complex_eigenvalues();
    Ok(eigs.iter().map(|c| c.norm_sqr().sqrt()).fold(0.0, f64::max))
}

/// Steady-state solution of X = F X F' + S by doubling. Requires the
/// spectral radius of F to be below one.
pub fn discrete_lyapunov(f: &DMatrix<f64>, s: &DMatrix<f64>) -> DMatrix<f64> {
    let mut x = s.clone();
    let mut fk = f.clone();
    for _ in 0..200 {
        let next = &x + &fk * &x * fk.transpose();
        let delta = (&next - &x).abs().max();
        x = next;
        fk = &fk * &fk;
        if delta <= 1e-14 * x.abs().max().max(1.0) {
            break;
        }
    }
    x
}

/// Steady-state cost Tr((Phi + K'PsiK) X) of playing u = -Kx forever, with
/// X the stationary state covariance. Returns infinity when the closed loop
/// is not strictly stable.
pub fn lqr_cost(sys: &LinearSystem, cost: &QuadraticCost, gain: &FeedbackGain) -> Result<f64> {
    let loop_matrix = closed_loop(sys, gain, None);
    let rho = spectral_radius(&loop_matrix)?;
    if rho >= 1.0 - MARGINAL_BAND {
        return Ok(f64::INFINITY);
    }
    let x = discrete_lyapunov(&loop_matrix, &sys.sigma_w);
    let weight = &cost.phi + gain.k.transpose() * &cost.psi * &gain.k;
    Ok((weight * x).trace())
}

/// Steady-state Kalman gain with the default regularizer for singular
/// measurement covariances.
pub fn kalman_gain(sys: &LinearSystem) -> Result<FilterGain> {
    kalman_gain_with(sys, SV_EPSILON, DARE_TOL, DARE_MAX_ITER)
}

/// Iterates the filter Riccati recursion
/// `P <- A P A' + Sw - A P C' (C P C' + Sv)^-1 C P A'` from P = Sw and
/// returns L = A P C' (C P C' + Sv)^-1. A non-positive-definite Sv is
/// replaced by Sv + epsilon I, surfaced in `epsilon_used`.
pub fn kalman_gain_with(
    sys: &LinearSystem,
    epsilon: f64,
    tol: f64,
    max_iter: usize,
) -> Result<FilterGain> {
    let k = sys.output_dim();
    let min_eig = sys
        .sigma_v
        .clone()
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let (sv, epsilon_used) = if min_eig <= 0.0 {
        (&sys.sigma_v + DMatrix::identity(k, k).scale(epsilon), epsilon)
    } else {
        (sys.sigma_v.clone(), 0.0)
    };

    let mut p = sys.sigma_w.clone();
    for step in 0..max_iter {
        let innovation = &sys.c * &p * sys.c.transpose() + &sv;
        let innovation_inv = innovation.try_inverse().ok_or(CoreError::Singular {
            context: "innovation covariance",
            step,
        })?;
        let apct = &sys.a * &p * sys.c.transpose();
        let next = &sys.a * &p * sys.a.transpose() + &sys.sigma_w
            - &apct * &innovation_inv * apct.transpose();
        let next = (&next + next.transpose()).scale(0.5);
        let delta = (&next - &p).abs().max();
        p = next;
        if delta <= tol {
            break;
        }
    }
    let innovation = &sys.c * &p * sys.c.transpose() + &sv;
    let innovation_inv = innovation.try_inverse().ok_or(CoreError::Singular {
        context: "innovation covariance",
        step: max_iter,
    })?;
    let l = &sys.a * &p * sys.c.transpose() * innovation_inv;
    let rho = spectral_radius(&(&sys.a - &l * &sys.c))?;
    Ok(FilterGain {
        l,
        p,
        epsilon_used,
        stability: classify_radius(rho),
    })
}

/// One filter update: est' = A est + B u + L (y - C est).
pub fn kalman_step(
    est: &DVector<f64>,
    u: &DVector<f64>,
    y: &DVector<f64>,
    sys: &LinearSystem,
    l: &DMatrix<f64>,
) -> DVector<f64> {
    let innovation = y - &sys.c * est;
    &sys.a * est + &sys.b * u + l * innovation
}

/// Closed-loop matrix of the certainty-equivalent output-feedback loop in
/// (estimate, error) coordinates:
///
/// ```text
/// [ A - BK     LC    ]
/// [ (B - B*)K  A - LC ]
/// ```
///
/// The bottom-left block vanishes exactly when the modeled input matrix
/// matches the true one.
pub fn lqg_closed_loop(
    sys: &LinearSystem,
    k: &FeedbackGain,
    l: &DMatrix<f64>,
    b_star: Option<&DMatrix<f64>>,
) -> DMatrix<f64> {
    let d = sys.state_dim();
    let b_star = b_star.unwrap_or(&sys.b);
    let tl = &sys.a - &sys.b * &k.k;
    let tr = l * &sys.c;
    let bl = (&sys.b - b_star) * &k.k;
    let br = &sys.a - l * &sys.c;
    let mut out = DMatrix::zeros(2 * d, 2 * d);
    out.view_mut((0, 0), (d, d)).copy_from(&tl);
    out.view_mut((0, d), (d, d)).copy_from(&tr);
    out.view_mut((d, 0), (d, d)).copy_from(&bl);
    out.view_mut((d, d), (d, d)).copy_from(&br);
    out
}

/// The two-state shift register with the "keep the components equal" cost.
pub fn shift_register_instance() -> (LinearSystem, QuadraticCost) {
    let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
    let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
    let sys = LinearSystem::fully_observed(a, b, DMatrix::identity(2, 2)).unwrap();
    let phi = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
    let cost = QuadraticCost::new(phi, DMatrix::zeros(1, 1)).unwrap();
    (sys, cost)
}

/// Newton's-law double integrator with the rank-one cost whose optimal loop
/// is marginally stable.
pub fn newton_instance() -> (LinearSystem, QuadraticCost) {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
    let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
    let sys = LinearSystem::fully_observed(a, b, DMatrix::identity(2, 2)).unwrap();
    let phi = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 0.25]);
    let cost = QuadraticCost::new(phi, DMatrix::zeros(1, 1)).unwrap();
    (sys, cost)
}

/// Partially observed Newton's-law system used to study output-feedback
/// fragility: only the position is measured.
pub fn lqg_fragility_instance(sigma_sq: f64) -> (LinearSystem, QuadraticCost) {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
    let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
    let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
    let sigma_w = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
    let sigma_v = DMatrix::from_element(1, 1, sigma_sq);
    let sys = LinearSystem::new(a, b, c, sigma_w, sigma_v).unwrap();
    let phi = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 0.25]);
    let cost = QuadraticCost::new(phi, DMatrix::zeros(1, 1)).unwrap();
    (sys, cost)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scalar_system(a: f64, b: f64, sigma_w: f64) -> LinearSystem {
        LinearSystem::fully_observed(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
            DMatrix::from_element(1, 1, sigma_w),
        )
        .unwrap()
    }

    fn scalar_cost(phi: f64, psi: f64) -> QuadraticCost {
        QuadraticCost::new(
            DMatrix::from_element(1, 1, phi),
            DMatrix::from_element(1, 1, psi),
        )
        .unwrap()
    }

    #[test]
    fn riccati_with_zero_dynamics() {
        let sys = LinearSystem::fully_observed(
            DMatrix::zeros(2, 2),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let cost = QuadraticCost::new(DMatrix::identity(2, 2), DMatrix::identity(1, 1)).unwrap();
        let rec = riccati_recursion(&sys, &cost, 5).unwrap();
        for m in &rec.cost_to_go {
            assert!((m - &cost.phi).abs().max() < 1e-12);
        }
        for k in &rec.gains {
            assert!(k.abs().max() < 1e-12);
        }
    }

    #[test]
    fn riccati_scalar_golden_ratio_gain() {
        // m solves m^2 - m - 1 = 0, so K = m/(1+m) = (sqrt(5)-1)/2.
        let sys = scalar_system(1.0, 1.0, 1.0);
        let cost = scalar_cost(1.0, 1.0);
        let rec = riccati_recursion(&sys, &cost, 200).unwrap();
        let k0 = rec.gains[0][(0, 0)];
        assert_abs_diff_eq!(k0, (5.0_f64.sqrt() - 1.0) / 2.0, epsilon = 1e-9);
    }

    #[test]
    fn riccati_newton_gain() {
        let (sys, cost) = newton_instance();
        let rec = riccati_recursion(&sys, &cost, 200).unwrap();
        let k = &rec.gains[0];
        assert_abs_diff_eq!(k[(0, 0)], 2.0, epsilon = 1e-3);
        assert_abs_diff_eq!(k[(0, 1)], 3.0, epsilon = 1e-3);
        let gain = FeedbackGain { k: k.clone() };
        let loop_matrix = closed_loop(&sys, &gain, None);
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, -2.0, -2.0]);
        assert!((loop_matrix - expected).abs().max() < 1e-3);
    }

    #[test]
    fn dare_scalar_golden_ratio() {
        let sys = scalar_system(1.0, 1.0, 1.0);
        let cost = scalar_cost(1.0, 1.0);
        let sol = solve_dare(&sys, &cost, 1e-12, 100_000).unwrap();
        assert!(sol.converged);
        assert_abs_diff_eq!(sol.m[(0, 0)], (1.0 + 5.0_f64.sqrt()) / 2.0, epsilon = 1e-8);
        assert!(sol.residual <= 1e-12);
    }

    #[test]
    fn dare_zero_dynamics_returns_phi() {
        let sys = scalar_system(0.0, 1.0, 1.0);
        let cost = scalar_cost(3.0, 1.0);
        let sol = solve_dare(&sys, &cost, 1e-12, 100).unwrap();
        assert_abs_diff_eq!(sol.m[(0, 0)], 3.0, epsilon = 1e-14);
    }

    #[test]
    fn dare_shift_register_is_marginal() {
        let (sys, cost) = shift_register_instance();
        let sol = solve_dare(&sys, &cost, 1e-10, 10_000).unwrap();
        assert!(!sol.converged);
        assert_eq!(sol.stability, StabilityClass::Marginal);
        let gain = gain_from_solution(&sys, &cost, &sol).unwrap();
        assert_abs_diff_eq!(gain.k[(0, 0)], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(gain.k[(0, 1)], -1.0, epsilon = 1e-9);
        let loop_matrix = closed_loop(&sys, &gain, None);
        let expected = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 1.0]);
        assert!((&loop_matrix - expected).abs().max() < 1e-9);
        assert_abs_diff_eq!(spectral_radius(&loop_matrix).unwrap(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn lqr_gain_scalar() {
        let sys = scalar_system(0.5, 1.0, 1.0);
        let cost = scalar_cost(1.0, 0.0);
        let gain = lqr_gain(&sys, &cost).unwrap();
        assert_abs_diff_eq!(gain.k[(0, 0)], 0.5, epsilon = 1e-9);
        let loop_matrix = closed_loop(&sys, &gain, None);
        assert!(loop_matrix.abs().max() < 1e-9);
    }

    #[test]
    fn closed_loop_with_gain_mismatch() {
        let (sys, cost) = shift_register_instance();
        let sol = solve_dare(&sys, &cost, 1e-10, 10_000).unwrap();
        let gain = gain_from_solution(&sys, &cost, &sol).unwrap();
        let b_scaled = &sys.b * 1.01;
        let rho = spectral_radius(&closed_loop(&sys, &gain, Some(&b_scaled))).unwrap();
        assert!(rho > 1.0);
        let zero_gain = FeedbackGain {
            k: DMatrix::zeros(1, 2),
        };
        assert_eq!(closed_loop(&sys, &zero_gain, None), sys.a);
    }

    #[test]
    fn lqr_cost_scalar_unit() {
        let sys = scalar_system(0.5, 1.0, 1.0);
        let cost = scalar_cost(1.0, 0.0);
        let gain = FeedbackGain {
            k: DMatrix::from_element(1, 1, 0.5),
        };
        assert_abs_diff_eq!(lqr_cost(&sys, &cost, &gain).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn lqr_cost_unstable_loop_is_infinite() {
        let sys = scalar_system(2.0, 1.0, 1.0);
        let cost = scalar_cost(1.0, 0.0);
        let gain = FeedbackGain {
            k: DMatrix::zeros(1, 1),
        };
        assert!(lqr_cost(&sys, &cost, &gain).unwrap().is_infinite());
    }

    #[test]
    fn lyapunov_matches_kron_solve() {
        let f = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, -0.2, 0.3]);
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 2.0]);
        let x = discrete_lyapunov(&f, &s);
        // reference route: solve (I - F (x) F) vec(X) = vec(S)
        let kron = f.kronecker(&f);
        let lhs = DMatrix::identity(4, 4) - kron;
        let vec_s = DVector::from_column_slice(s.as_slice());
        let vec_x = lhs.lu().solve(&vec_s).unwrap();
        let x_ref = DMatrix::from_column_slice(2, 2, vec_x.as_slice());
        assert!((x - x_ref).abs().max() < 1e-10);
    }

    #[test]
    fn kalman_perfect_observation_limit() {
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.0, 0.8]);
        let sys = LinearSystem::fully_observed(
            a.clone(),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let filter = kalman_gain(&sys).unwrap();
        assert!(filter.epsilon_used > 0.0);
        assert!((&filter.p - DMatrix::identity(2, 2)).abs().max() < 1e-6);
        assert!((&filter.l - a).abs().max() < 1e-6);
    }

    #[test]
    fn kalman_scalar_gain() {
        let sys = LinearSystem::new(
            DMatrix::from_element(1, 1, 0.9),
            DMatrix::from_element(1, 1, 0.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        let filter = kalman_gain(&sys).unwrap();
        let p = (0.81 + 4.6561_f64.sqrt()) / 2.0;
        assert_abs_diff_eq!(filter.p[(0, 0)], p, epsilon = 1e-8);
        assert_abs_diff_eq!(filter.l[(0, 0)], 0.5377, epsilon = 1e-4);
        assert_eq!(filter.epsilon_used, 0.0);
    }

    #[test]
    fn kalman_fragility_gain() {
        let (sys, _) = lqg_fragility_instance(1e-4);
        let filter = kalman_gain(&sys).unwrap();
        assert_abs_diff_eq!(filter.l[(0, 0)], 3.0, epsilon = 0.05);
        assert_abs_diff_eq!(filter.l[(1, 0)], 2.0, epsilon = 0.05);
    }

    #[test]
    fn kalman_step_conventions() {
        let (sys, _) = lqg_fragility_instance(1e-4);
        let est = DVector::from_column_slice(&[1.0, -2.0]);
        let u = DVector::from_column_slice(&[0.5]);
        let l = DMatrix::from_row_slice(2, 1, &[3.0, 2.0]);

        // zero innovation: pure model prediction
        let y = &sys.c * &est;
        let next = kalman_step(&est, &u, &y, &sys, &l);
        let expect = &sys.a * &est + &sys.b * &u;
        assert!((next - expect).abs().max() < 1e-12);

        // L = 0: open-loop simulation regardless of y
        let y = DVector::from_column_slice(&[42.0]);
        let next = kalman_step(&est, &u, &y, &sys, &DMatrix::zeros(2, 1));
        let expect = &sys.a * &est + &sys.b * &u;
        assert!((next - expect).abs().max() < 1e-12);
    }

    #[test]
    fn kalman_step_full_trust() {
        // C = I and L = A make the estimator adopt the measurement: Ay + Bu.
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.0, 0.8]);
        let sys = LinearSystem::fully_observed(
            a.clone(),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let est = DVector::from_column_slice(&[1.0, 2.0]);
        let u = DVector::from_column_slice(&[0.3]);
        let y = DVector::from_column_slice(&[-1.0, 0.5]);
        let next = kalman_step(&est, &u, &y, &sys, &a);
        let expect = &a * &y + &sys.b * &u;
        assert!((next - expect).abs().max() < 1e-12);
    }

    #[test]
    fn lqg_closed_loop_block_structure() {
        let (sys, cost) = lqg_fragility_instance(1e-4);
        let gain = lqr_gain(&sys, &cost).unwrap();
        let filter = kalman_gain(&sys).unwrap();
        let matched = lqg_closed_loop(&sys, &gain, &filter.l, None);
        assert!(matched.view((2, 0), (2, 2)).abs().max() == 0.0);
        let rho = spectral_radius(&matched).unwrap();
        assert!(rho <= 1.0 + 1e-6);

        let b_star = &sys.b * 1.1;
        let mismatched = lqg_closed_loop(&sys, &gain, &filter.l, Some(&b_star));
        assert!(spectral_radius(&mismatched).unwrap() > 1.0);
    }

    #[test]
    fn spectral_radius_known_values() {
        assert_abs_diff_eq!(
            spectral_radius(&DMatrix::identity(3, 3)).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        let shift_loop = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 1.0]);
        assert_abs_diff_eq!(spectral_radius(&shift_loop).unwrap(), 1.0, epsilon = 1e-9);
        let newton_loop = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, -2.0, -2.0]);
        assert_abs_diff_eq!(spectral_radius(&newton_loop).unwrap(), 1.0, epsilon = 1e-9);
        assert!(spectral_radius(&DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn system_json_round_trip() {
        let (sys, cost) = lqg_fragility_instance(1e-4);
        let json = serde_json::to_value(&sys).unwrap();
        for key in ["A", "B", "C", "Sw", "Sv"] {
            assert!(json.get(key).is_some(), "missing field {key}");
        }
        let back: LinearSystem = serde_json::from_value(json).unwrap();
        assert_eq!(back, sys);

        let json = serde_json::to_value(&cost).unwrap();
        assert!(json.get("Phi").is_some() && json.get("Psi").is_some());
        let back: QuadraticCost = serde_json::from_value(json).unwrap();
        assert_eq!(back, cost);
    }

    #[test]
    fn covariance_validation() {
        let a = DMatrix::identity(2, 2);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let c = DMatrix::identity(2, 2);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.5, 1.0]);
        assert!(LinearSystem::new(
            a.clone(),
            b.clone(),
            c.clone(),
            bad,
            DMatrix::zeros(2, 2)
        )
        .is_err());
        let negative = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]);
        assert!(LinearSystem::new(a, b, c, negative, DMatrix::zeros(2, 2)).is_err());
    }
}
