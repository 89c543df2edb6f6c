//! Amplifier constants, the 5x5 state matrix and its exact modal decomposition.
//!
//! The state is `x = (m1, m2, m3, f, f')`: three compensator integrator
//! states followed by the output-filter voltage and its derivative. The
//! state matrix has the known spectrum `{0, +i w1, -i w1, -mu + i W, -mu - i W}`,
//! so eigenvalues and eigenvectors are written down analytically rather than
//! computed by a general eigensolver. Everything downstream (matrix
//! exponentials, the iterated integrals `P_n`, `Q_n`, exact propagation across
//! switching intervals) is evaluated in that modal basis.

use nalgebra::{SMatrix, SVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type StateVector = SVector<f64, 5>;
pub type Matrix5 = SMatrix<f64, 5, 5>;
pub type CVector5 = SVector<Complex64, 5>;
pub type CMatrix5 = SMatrix<Complex64, 5, 5>;

/// Largest order accepted by [`phi`].
pub const MAX_PHI_ORDER: i32 = 8;

/// Relative size of an imaginary residue tolerated when a modal-basis
/// quantity is mapped back to a real one.
pub const RESIDUE_TOL: f64 = 1e-9;

/// Circuit and compensator constants (SI units throughout).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmplifierParams {
    /// Load resistance (ohm).
    pub r: f64,
    /// Filter inductance (H).
    pub l: f64,
    /// Filter capacitance (F).
    pub c: f64,
    /// Carrier period (s).
    pub period: f64,
    /// Compensator gains (1/s, 1/s^2, 1/s^3).
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    /// Resonator frequency (rad/s).
    pub omega1: f64,
    /// Ripple compensation: 0 feeds `g` to the filter, 1 feeds `g + v`.
    pub k: u8,
}

impl AmplifierParams {
    /// The reference design used throughout the test-suite.
    pub fn reference(k: u8) -> Self {
        Self {
            r: 8.0,
            l: 10e-6,
            c: 0.5169e-6,
            period: 1.0 / 384_000.0,
            c1: 1.3318e5,
            c2: 1.3763e10,
            c3: -1.0747e14,
            omega1: 1.3195e5,
            k,
        }
    }

    pub fn with_k(mut self, k: u8) -> Self {
        self.k = k;
        self
    }

    pub fn with_c1(mut self, c1: f64) -> Self {
        self.c1 = c1;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("r", self.r),
            ("l", self.l),
            ("c", self.c),
            ("period", self.period),
            ("omega1", self.omega1),
        ];
        for (field, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidParameter {
                    field,
                    reason: format!("must be finite and strictly positive, got {value}"),
                });
            }
        }
        for (field, value) in [("c1", self.c1), ("c2", self.c2), ("c3", self.c3)] {
            if !value.is_finite() {
                return Err(Error::InvalidParameter {
                    field,
                    reason: format!("must be finite, got {value}"),
                });
            }
        }
        if self.k > 1 {
            return Err(Error::InvalidParameter {
                field: "k",
                reason: format!("must be 0 or 1, got {}", self.k),
            });
        }
        let rc = self.r * self.c;
        if 1.0 / (self.l * self.c) <= 1.0 / (4.0 * rc * rc) {
            return Err(Error::InvalidParameter {
                field: "r",
                reason: "output filter is not underdamped (1/LC <= 1/(4 R^2 C^2))".into(),
            });
        }
        Ok(())
    }

    pub fn lc(&self) -> f64 {
        self.l * self.c
    }

    pub fn rc(&self) -> f64 {
        self.r * self.c
    }

    /// `k` as a real coefficient.
    pub fn kf(&self) -> f64 {
        f64::from(self.k)
    }

    /// Filter damping rate `1/(2RC)`.
    pub fn mu(&self) -> f64 {
        0.5 / self.rc()
    }

    /// Filter ringing frequency.
    pub fn capital_omega(&self) -> f64 {
        let mu = self.mu();
        (1.0 / self.lc() - mu * mu).sqrt()
    }

    /// Compensator output weights `(c1, c2, c3, 0, 0)`.
    pub fn gamma(&self) -> StateVector {
        StateVector::new(self.c1, self.c2, self.c3, 0.0, 0.0)
    }

    /// `c1 w1^2 + c3`, the gain that fixes the compensator offset under RC.
    pub fn resonator_gain(&self) -> f64 {
        self.c1 * self.omega1 * self.omega1 + self.c3
    }
}

/// Returns the state matrix `N` of `x' = N x + u e1 + (g + k v)/(LC) e5`.
pub fn build_system_matrix(params: &AmplifierParams) -> Result<Matrix5> {
    params.validate()?;
    let mut n = Matrix5::zeros();
    // compensator block
    n[(1, 0)] = 1.0;
    n[(1, 2)] = -params.omega1 * params.omega1;
    n[(2, 1)] = 1.0;
    // error feed from the filter output
    n[(0, 3)] = -1.0;
    // output filter block
    n[(3, 4)] = 1.0;
    n[(4, 3)] = -1.0 / params.lc();
    n[(4, 4)] = -1.0 / params.rc();
    Ok(n)
}

/// Eigen-structure of `N`: `N = R diag(lambda) L` with `L = R^-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalDecomposition {
    pub lambda: [Complex64; 5],
    /// Columns are the right eigenvectors `w_1..w_5`.
    pub right_eigvecs: CMatrix5,
    /// Rows are the left eigenvectors `v_1..v_5`; the inverse of `right_eigvecs`.
    pub left_eigvecs: CMatrix5,
    pub mu: f64,
    pub capital_omega: f64,
}

/// Analytic eigen-decomposition of `N`.
///
/// Right eigenvectors carry the natural scaling of the closed forms; each
/// left eigenvector is then scaled so that `v_j . w_j = 1`. Eigenvectors of
/// distinct eigenvalues are automatically biorthogonal, so the resulting
/// `left_eigvecs` is exactly `right_eigvecs^-1`. With `w_1 = (-LC, 0, -LC/w1^2, 0, 0)`
/// this reproduces `v_1 = (-1/LC, 0, 0, 1/RC, 1)` without further scaling.
pub fn modal_decomposition(params: &AmplifierParams) -> Result<ModalDecomposition> {
    params.validate()?;
    let mu = params.mu();
    let big = params.capital_omega();
    let w1 = params.omega1;
    let lc = params.lc();
    let rc = params.rc();

    let rel = (w1 - big).abs() / w1.max(big);
    if rel < 1e-9 {
        return Err(Error::DegenerateSpectrum(format!(
            "resonator frequency {w1} coincides with filter ring frequency {big}"
        )));
    }
    if big == 0.0 {
        return Err(Error::DegenerateSpectrum("filter ring frequency is zero".into()));
    }

    let i = Complex64::i();
    let lambda = [
        Complex64::new(0.0, 0.0),
        i * w1,
        -i * w1,
        Complex64::new(-mu, big),
        Complex64::new(-mu, -big),
    ];

    let one = Complex64::new(1.0, 0.0);
    let zero = Complex64::new(0.0, 0.0);
    let re = |v: f64| Complex64::new(v, 0.0);

    let mut right = CMatrix5::zeros();
    let mut left = CMatrix5::zeros();

    right.set_column(0, &CVector5::new(re(-lc), zero, re(-lc / (w1 * w1)), zero, zero));
    left.set_row(0, &CVector5::new(re(-1.0 / lc), zero, zero, re(1.0 / rc), one).transpose());

    for j in 1..3 {
        let l = lambda[j];
        right.set_column(j, &CVector5::new(zero, l, one, zero, zero));
        let y5 = -one / (l * l + l / rc + 1.0 / lc);
        left.set_row(j, &CVector5::new(one, l, l * l, y5 * (l + 1.0 / rc), y5).transpose());
    }
    for j in 3..5 {
        let l = lambda[j];
        let s = l * l + w1 * w1;
        right.set_column(j, &CVector5::new(-one / l, -one / s, -one / (l * s), one, l));
        left.set_row(j, &CVector5::new(zero, zero, zero, l + 1.0 / rc, one).transpose());
    }
    for j in 0..5 {
        let pairing = (left.row(j) * right.column(j))[(0, 0)];
        let scaled = left.row(j) / pairing;
        left.set_row(j, &scaled);
    }

    Ok(ModalDecomposition {
        lambda,
        right_eigvecs: right,
        left_eigvecs: left,
        mu,
        capital_omega: big,
    })
}

/// `n`-fold iterated integral from 0 of `exp(lambda s)`, evaluated at `t`:
/// `eta_0 = e^{lambda t}`, `eta_{n+1}(t) = int_0^t eta_n`.
///
/// Uses the power series `t^n sum_k (lambda t)^k/(n+k)!` for `|lambda t| < 2`
/// and the closed form `(e^z - sum_{k<n} z^k/k!)/lambda^n` beyond.
pub fn eta(n: usize, lambda: Complex64, t: f64) -> Complex64 {
    let z = lambda * t;
    if z.norm() < 2.0 {
        let mut term = Complex64::new(1.0 / factorial(n), 0.0);
        let mut sum = term;
        for k in 1..60 {
            term = term * z / (n + k) as f64;
            sum += term;
            if term.norm() <= 1e-18 * sum.norm() {
                break;
            }
        }
        sum * t.powi(n as i32)
    } else {
        let mut partial = Complex64::new(0.0, 0.0);
        let mut zk = Complex64::new(1.0, 0.0);
        for k in 0..n {
            partial += zk / factorial(k);
            zk *= z;
        }
        (z.exp() - partial) / lambda.powu(n as u32)
    }
}

pub(crate) fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

/// `phi_n(t)`: the `(n+1)`-fold iterated integral of `cos(w1 s)` from 0,
/// so that `phi_{-1} = cos(w1 t)` and `phi_0 = sin(w1 t)/w1`.
pub fn phi(n: i32, t: f64, omega1: f64) -> Result<f64> {
    if !(-1..=MAX_PHI_ORDER).contains(&n) {
        return Err(Error::UnsupportedOrder {
            order: n,
            max: MAX_PHI_ORDER,
        });
    }
    Ok(eta((n + 1) as usize, Complex64::new(0.0, omega1), t).re)
}

/// Affine filter drive and Taylor-expanded input over one smooth interval.
///
/// Over `[t0, t0 + s]` the input is `sum_k input_derivs[k] (t - t0)^k / k!`
/// and the filter is driven by `(drive_offset + drive_slope (t - t0)) / LC`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Segment {
    pub input_derivs: [f64; 5],
    pub drive_offset: f64,
    pub drive_slope: f64,
}

/// The amplifier model: parameters, `N`, and precomputed modal projections.
///
/// Immutable once built; share freely across threads.
#[derive(Debug, Clone)]
pub struct Model {
    params: AmplifierParams,
    n: Matrix5,
    modal: ModalDecomposition,
    /// `gamma^T R`
    gamma_right: [Complex64; 5],
    /// `L e1`
    left_e1: [Complex64; 5],
    /// `L e5`
    left_e5: [Complex64; 5],
}

impl Model {
    pub fn new(params: AmplifierParams) -> Result<Self> {
        let n = build_system_matrix(&params)?;
        let modal = modal_decomposition(&params)?;
        let gamma = params.gamma();
        let mut gamma_right = [Complex64::new(0.0, 0.0); 5];
        let mut left_e1 = gamma_right;
        let mut left_e5 = gamma_right;
        for j in 0..5 {
            gamma_right[j] = (0..5)
                .map(|i| modal.right_eigvecs[(i, j)] * gamma[i])
                .sum();
            left_e1[j] = modal.left_eigvecs[(j, 0)];
            left_e5[j] = modal.left_eigvecs[(j, 4)];
        }
        Ok(Self {
            params,
            n,
            modal,
            gamma_right,
            left_e1,
            left_e5,
        })
    }

    pub fn params(&self) -> &AmplifierParams {
        &self.params
    }

    pub fn system_matrix(&self) -> &Matrix5 {
        &self.n
    }

    pub fn modal(&self) -> &ModalDecomposition {
        &self.modal
    }

    pub fn lambda(&self) -> &[Complex64; 5] {
        &self.modal.lambda
    }

    pub fn gamma(&self) -> StateVector {
        self.params.gamma()
    }

    /// Left zero eigenvector `v_1 = (-1/LC, 0, 0, 1/RC, 1)`.
    pub fn v1(&self) -> StateVector {
        StateVector::from_iterator(self.modal.left_eigvecs.row(0).iter().map(|c| c.re))
    }

    /// Right zero eigenvector `w_1 = (-LC, 0, -LC/w1^2, 0, 0)`.
    pub fn w1(&self) -> StateVector {
        StateVector::from_iterator(self.modal.right_eigvecs.column(0).iter().map(|c| c.re))
    }

    /// `P_n(t) = (t^n/n!) e1 + phi_n(t) e2 + phi_{n+1}(t) e3`.
    pub fn p_vec(&self, n: usize, t: f64) -> Result<StateVector> {
        let w1 = self.params.omega1;
        let n = n as i32;
        Ok(StateVector::new(
            t.powi(n) / factorial(n as usize),
            phi(n, t, w1)?,
            phi(n + 1, t, w1)?,
            0.0,
            0.0,
        ))
    }

    /// `Q_n(t)`: `Q_0 = e^{Nt} e5` integrated `n` times from 0.
    pub fn q_vec(&self, n: usize, t: f64) -> StateVector {
        let d: [Complex64; 5] = std::array::from_fn(|j| eta(n, self.modal.lambda[j], t));
        self.from_modal_diag(&d, &self.left_e5)
    }

    /// `R diag(d) L v` for a modal projection `L v`, real part.
    pub(crate) fn from_modal_diag(&self, d: &[Complex64; 5], projected: &[Complex64; 5]) -> StateVector {
        let z = CVector5::from_fn(|j, _| d[j] * projected[j]);
        self.from_modal(&z)
    }

    /// `e^{Nt}` through the modal decomposition.
    pub fn matrix_exp(&self, t: f64) -> Result<Matrix5> {
        let d = CMatrix5::from_diagonal(&CVector5::from_fn(|j, _| (self.modal.lambda[j] * t).exp()));
        let full = self.modal.right_eigvecs * d * self.modal.left_eigvecs;
        real_part_checked(&full)
    }

    /// Modal coordinates `L x`.
    pub fn to_modal(&self, x: &StateVector) -> CVector5 {
        let xc = x.map(|v| Complex64::new(v, 0.0));
        self.modal.left_eigvecs * xc
    }

    /// State `R z` (real part).
    pub fn from_modal(&self, z: &CVector5) -> StateVector {
        (self.modal.right_eigvecs * z).map(|c| c.re)
    }

    /// `gamma^T R z`, the compensator output of a modal state.
    pub fn modal_output(&self, z: &CVector5) -> f64 {
        (0..5).map(|j| self.gamma_right[j] * z[j]).sum::<Complex64>().re
    }

    /// Exact propagation in modal coordinates over an interval of length `s`.
    pub fn propagate_modal(&self, z: &CVector5, s: f64, seg: &Segment) -> CVector5 {
        let inv_lc = 1.0 / self.params.lc();
        CVector5::from_fn(|j, _| {
            let lam = self.modal.lambda[j];
            let mut etas = [Complex64::new(0.0, 0.0); 6];
            for (order, e) in etas.iter_mut().enumerate() {
                *e = eta(order, lam, s);
            }
            let mut forced = Complex64::new(0.0, 0.0);
            for (k, &du) in seg.input_derivs.iter().enumerate() {
                if du != 0.0 {
                    forced += etas[k + 1] * du;
                }
            }
            let drive = (etas[1] * seg.drive_offset + etas[2] * seg.drive_slope) * inv_lc;
            etas[0] * z[j] + forced * self.left_e1[j] + drive * self.left_e5[j]
        })
    }

    /// Exact propagation of a state over an interval of length `s`.
    pub fn propagate(&self, x: &StateVector, s: f64, seg: &Segment) -> StateVector {
        self.from_modal(&self.propagate_modal(&self.to_modal(x), s, seg))
    }

    /// Componentwise magnitude `sum_j |R_ij| |d_j| |p_j|` of a modal
    /// reconstruction; the natural round-off scale for each state component.
    pub fn modal_magnitude(&self, d: &[Complex64; 5], projected: &[Complex64; 5]) -> StateVector {
        StateVector::from_fn(|i, _| {
            (0..5)
                .map(|j| self.modal.right_eigvecs[(i, j)].norm() * d[j].norm() * projected[j].norm())
                .sum()
        })
    }

    pub(crate) fn gamma_right(&self) -> &[Complex64; 5] {
        &self.gamma_right
    }

    pub(crate) fn left_e5(&self) -> &[Complex64; 5] {
        &self.left_e5
    }

    pub(crate) fn left_e1(&self) -> &[Complex64; 5] {
        &self.left_e1
    }
}

/// Real part of a complex matrix, rejecting imaginary residues above
/// [`RESIDUE_TOL`] relative to the largest real entry.
pub(crate) fn real_part_checked(m: &CMatrix5) -> Result<Matrix5> {
    let scale = m.iter().map(|c| c.re.abs()).fold(0.0, f64::max);
    let residue = m.iter().map(|c| c.im.abs()).fold(0.0, f64::max);
    if residue > RESIDUE_TOL * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::ResidueTooLarge { residue, scale });
    }
    Ok(m.map(|c| c.re))
}

/// Scalar counterpart of [`real_part_checked`].
pub(crate) fn real_scalar_checked(c: Complex64, scale: f64) -> Result<f64> {
    let scale = scale.max(c.re.abs());
    if c.im.abs() > RESIDUE_TOL * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::ResidueTooLarge {
            residue: c.im.abs(),
            scale,
        });
    }
    Ok(c.re)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn model(k: u8) -> Model {
        Model::new(AmplifierParams::reference(k)).unwrap()
    }

    /// Composite Gauss-Legendre (5 points) quadrature; test oracle only.
    fn quad<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
        const X: [f64; 5] = [
            0.0,
            -0.538_469_310_105_683_1,
            0.538_469_310_105_683_1,
            -0.906_179_845_938_664,
            0.906_179_845_938_664,
        ];
        const W: [f64; 5] = [
            0.568_888_888_888_888_9,
            0.478_628_670_499_366_5,
            0.478_628_670_499_366_5,
            0.236_926_885_056_189_1,
            0.236_926_885_056_189_1,
        ];
        let h = (b - a) / panels as f64;
        let mut total = 0.0;
        for p in 0..panels {
            let mid = a + (p as f64 + 0.5) * h;
            for (x, w) in X.iter().zip(W) {
                total += w * f(mid + 0.5 * h * x);
            }
        }
        total * 0.5 * h
    }

    #[test]
    fn system_matrix_structure() {
        let p = AmplifierParams::reference(0);
        let n = build_system_matrix(&p).unwrap();
        let mut expected = Matrix5::zeros();
        expected[(0, 3)] = -1.0;
        expected[(1, 0)] = 1.0;
        expected[(1, 2)] = -p.omega1 * p.omega1;
        expected[(2, 1)] = 1.0;
        expected[(3, 4)] = 1.0;
        expected[(4, 3)] = -1.0 / p.lc();
        expected[(4, 4)] = -1.0 / p.rc();
        assert_eq!(n, expected);
        assert_eq!(n.row(0).iter().filter(|v| **v != 0.0).count(), 1);
        assert_relative_eq!(n[(4, 3)], -1.934_610_176e11, max_relative = 1e-9);
        assert_relative_eq!(n[(4, 4)], -2.418_262_72e5, max_relative = 1e-9);
    }

    #[test]
    fn rejects_bad_parameters() {
        let mut p = AmplifierParams::reference(0);
        p.k = 2;
        assert!(matches!(p.validate(), Err(Error::InvalidParameter { field: "k", .. })));
        let mut p = AmplifierParams::reference(0);
        p.c = -1.0;
        assert!(matches!(p.validate(), Err(Error::InvalidParameter { field: "c", .. })));
        // heavily overdamped filter
        let mut p = AmplifierParams::reference(0);
        p.r = 0.5;
        assert!(p.validate().is_err());
    }

    #[test]
    fn degenerate_spectrum_detected() {
        let mut p = AmplifierParams::reference(0);
        p.omega1 = p.capital_omega();
        assert!(matches!(modal_decomposition(&p), Err(Error::DegenerateSpectrum(_))));
    }

    #[test]
    fn modal_constants() {
        let m = model(0);
        assert_relative_eq!(m.modal().mu, 1.209_131_36e5, max_relative = 1e-8);
        assert_relative_eq!(m.modal().capital_omega, 4.2289e5, max_relative = 1e-4);
        assert_eq!(m.lambda()[0], Complex64::new(0.0, 0.0));
        assert_eq!(m.lambda()[1], Complex64::new(0.0, 1.3195e5));
        assert_eq!(m.lambda()[2], Complex64::new(0.0, -1.3195e5));
        let trace: Complex64 = m.lambda().iter().sum();
        assert_relative_eq!(trace.re, -1.0 / m.params().rc(), max_relative = 1e-12);
        assert!(trace.im.abs() < 1e-12 * trace.re.abs());
    }

    /// `|A_ij| <= tol * sum_k |B_ik| |C_kj|`: entry-wise error of a product
    /// measured against the magnitudes that produced it.
    fn product_close(err: &CMatrix5, b: &CMatrix5, c: &CMatrix5, tol: f64) -> bool {
        let scale = b.map(|v| v.norm()) * c.map(|v| v.norm());
        err.iter().zip(scale.iter()).all(|(e, s)| e.norm() <= tol * s)
    }

    #[test]
    fn decomposition_reconstructs_n() {
        for k in 0..2 {
            let m = model(k);
            let md = m.modal();
            let ident = md.right_eigvecs * md.left_eigvecs;
            assert!(product_close(
                &(ident - CMatrix5::identity()),
                &md.right_eigvecs,
                &md.left_eigvecs,
                1e-12
            ));
            let nc = m.system_matrix().map(|v| Complex64::new(v, 0.0));
            let recon = md.right_eigvecs
                * CMatrix5::from_diagonal(&CVector5::from_fn(|j, _| md.lambda[j]))
                * md.left_eigvecs;
            assert!((recon - nc).norm() < 1e-10 * nc.norm());
        }
    }

    #[test]
    fn null_vectors() {
        let m = model(0);
        let n = m.system_matrix();
        let scale = n.amax();
        let v1 = m.v1();
        let p = m.params();
        assert_eq!(v1, StateVector::new(-1.0 / p.lc(), 0.0, 0.0, 1.0 / p.rc(), 1.0));
        let w1 = m.w1();
        assert_eq!(
            w1,
            StateVector::new(-p.lc(), 0.0, -p.lc() / (p.omega1 * p.omega1), 0.0, 0.0)
        );
        assert_relative_eq!(v1.dot(&w1), 1.0, max_relative = 1e-15);
        let left = v1.transpose() * n;
        for v in left.iter() {
            assert!(v.abs() / scale / v1.amax() < 1e-12);
        }
        let right = n * w1;
        for v in right.iter() {
            assert!(v.abs() / scale / w1.amax() < 1e-12);
        }
    }

    #[test]
    fn phi_closed_forms() {
        let w = 1.3195e5;
        let t = 0.37 / 384_000.0;
        assert_relative_eq!(phi(-1, t, w).unwrap(), (w * t).cos(), max_relative = 1e-14);
        assert_relative_eq!(phi(0, t, w).unwrap(), (w * t).sin() / w, max_relative = 1e-13);
        assert_relative_eq!(
            phi(1, t, w).unwrap(),
            (1.0 - (w * t).cos()) / (w * w),
            max_relative = 1e-12
        );
        assert!(matches!(phi(-2, t, w), Err(Error::UnsupportedOrder { .. })));
        assert!(matches!(phi(MAX_PHI_ORDER + 1, t, w), Err(Error::UnsupportedOrder { .. })));
    }

    #[test]
    fn phi_matches_quadrature() {
        let p = AmplifierParams::reference(0);
        let w = p.omega1;
        for (n, t) in [(2, 0.5 * p.period), (3, p.period), (4, 2.0 * p.period), (1, 7.3 * p.period)] {
            let oracle = quad(|s| phi(n - 1, s, w).unwrap(), 0.0, t, 64);
            assert_relative_eq!(phi(n, t, w).unwrap(), oracle, max_relative = 1e-12);
        }
    }

    #[test]
    fn eta_branches_agree() {
        // both branches at the switch-over radius
        for lam in [Complex64::new(-1.0, 1.5), Complex64::new(0.0, 1.0), Complex64::new(-2.0, 0.0)] {
            let r = lam.norm();
            for n in 0..6 {
                let inside = eta(n, lam, 1.999_999 / r);
                let outside = eta(n, lam, 2.000_001 / r);
                assert!((inside - outside).norm() < 1e-5 * inside.norm());
            }
        }
        assert_relative_eq!(eta(3, Complex64::new(0.0, 0.0), 2.0).re, 8.0 / 6.0);
    }

    #[test]
    fn p_vec_values() {
        let m = model(0);
        let t = 0.4 * m.params().period;
        let p0 = m.p_vec(0, t).unwrap();
        let w = m.params().omega1;
        assert_eq!(p0[0], 1.0);
        assert_relative_eq!(p0[1], phi(0, t, w).unwrap());
        assert_relative_eq!(p0[2], phi(1, t, w).unwrap());
        assert_eq!((p0[3], p0[4]), (0.0, 0.0));
        assert_eq!(m.p_vec(1, 0.0).unwrap(), StateVector::zeros());
        // P_0 is e^{Nt} e1
        let e = m.matrix_exp(t).unwrap();
        for i in 0..5 {
            assert!((e[(i, 0)] - p0[i]).abs() <= 1e-12 * p0[i].abs().max(1e-300) + 1e-20);
        }
        let big_t = m.params().period;
        let p2 = m.p_vec(2, big_t).unwrap();
        for i in 0..3 {
            let oracle = quad(|s| m.p_vec(1, s).unwrap()[i], 0.0, big_t, 32);
            assert_relative_eq!(p2[i], oracle, max_relative = 1e-12);
        }
    }

    #[test]
    fn q_vec_values() {
        let m = model(0);
        let q00 = m.q_vec(0, 0.0);
        let scale = m.modal_magnitude(&[Complex64::new(1.0, 0.0); 5], m.left_e5());
        let e5 = StateVector::new(0.0, 0.0, 0.0, 0.0, 1.0);
        for i in 0..5 {
            assert!((q00[i] - e5[i]).abs() <= 1e-14 * scale[i]);
        }
        let t = m.params().period;
        let q1 = m.q_vec(1, t);
        for i in 0..5 {
            let oracle = quad(|s| m.q_vec(0, s)[i], 0.0, t, 64);
            assert!(
                (q1[i] - oracle).abs() <= 1e-12 * q1.amax(),
                "component {i}: {} vs {oracle}",
                q1[i]
            );
        }
        // Q_0 is the last column of e^{Nt}
        let e = m.matrix_exp(0.3 * t).unwrap();
        let q0 = m.q_vec(0, 0.3 * t);
        assert!((e.column(4) - q0).amax() < 1e-12 * q0.amax());
    }

    #[test]
    fn v1_contractions() {
        // v1 . P_n = -t^n/(n! LC) and v1 . Q_n = +t^n/n!
        for k in 0..2 {
            let m = model(k);
            let lc = m.params().lc();
            let v1 = m.v1();
            let big_t = m.params().period;
            for i in 0..20 {
                let t = 2.0 * big_t * i as f64 / 19.0;
                for n in 0..=4usize {
                    let scale = t.powi(n as i32) / factorial(n);
                    let vp = v1.dot(&m.p_vec(n, t).unwrap());
                    let vq = v1.dot(&m.q_vec(n, t));
                    if scale == 0.0 {
                        assert!(vp.abs() < 1e-300 && vq.abs() < 1e-300);
                        continue;
                    }
                    assert_relative_eq!(vp, -scale / lc, max_relative = 1e-10);
                    assert_relative_eq!(vq, scale, max_relative = 1e-10);
                }
            }
        }
    }

    #[test]
    fn matrix_exp_properties() {
        let m = model(1);
        let t = m.params().period;
        let md = m.modal();
        let to_c = |a: &Matrix5| a.map(|v| Complex64::new(v, 0.0));
        let e0 = m.matrix_exp(0.0).unwrap();
        assert!(product_close(
            &to_c(&(e0 - Matrix5::identity())),
            &md.right_eigvecs,
            &md.left_eigvecs,
            1e-14
        ));
        let a = m.matrix_exp(0.3 * t).unwrap();
        let b = m.matrix_exp(0.7 * t).unwrap();
        let ab = m.matrix_exp(t).unwrap();
        let prod = a * b;
        assert!(product_close(&to_c(&(prod - ab)), &to_c(&a), &to_c(&b), 1e-10));
        assert!((prod - ab).norm() < 1e-10 * ab.norm());
        let v1 = m.v1();
        let left = v1.transpose() * ab;
        let scale = v1.abs().transpose() * ab.abs();
        for i in 0..5 {
            assert!((left[i] - v1[i]).abs() <= 1e-10 * scale[i]);
        }
    }

    #[test]
    fn propagation_is_a_semigroup_without_forcing() {
        let m = model(0);
        let x = StateVector::new(1e-6, 2e-12, 3e-18, 0.2, -1e4);
        let t = m.params().period;
        let seg = Segment::default();
        let once = m.propagate(&x, t, &seg);
        let twice = m.propagate(&m.propagate(&x, 0.25 * t, &seg), 0.75 * t, &seg);
        for i in 0..5 {
            assert!((once[i] - twice[i]).abs() <= 1e-11 * once[i].abs().max(1e-30));
        }
    }
}
