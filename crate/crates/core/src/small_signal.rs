//! Small-signal model: response of the switching instants, and hence of the
//! output, to an infinitesimal audio-band disturbance of the input.
//!
//! The per-period update of a state disturbance is
//! `script N = e^{NT} (I + (T kappa / LC) e5 gamma^T)`, and the input enters
//! through `sigma(T; i w) = sum_m P_{m+1}(T) (i w)^m`. The transfer function
//! from input to output spectrum is `kappa gamma^T (e^{i w T} I - script N)^{-1} sigma`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{eta, CMatrix5, CVector5, Matrix5, Model};
use crate::stability::{balance, compute_kappa, eigenvalues_sorted, switching_update};
use crate::steady::solve_steady_state;

/// Relative half-width of the windows around `w = 0` and `w = +-w1` where the
/// closed forms for `sigma` cancel catastrophically.
pub const SIGMA_WINDOW: f64 = 1e-4;

/// Distance of `e^{iwT}` from an eigenvalue of `script N` treated as resonance.
pub const RESONANCE_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransferPoint {
    /// rad/s
    pub omega: f64,
    pub value: Complex64,
}

/// `script N = e^{NT} (I + (T kappa / LC) e5 gamma^T)` for an explicit `kappa`.
pub fn script_n_with_kappa(model: &Model, kappa: f64) -> Result<Matrix5> {
    let p = model.params();
    Ok(model.matrix_exp(p.period)? * switching_update(p, kappa))
}

/// `script N` at the operating point for constant input `u0`.
pub fn script_n(model: &Model, u0: f64) -> Result<Matrix5> {
    let ss = solve_steady_state(model, u0)?;
    script_n_with_kappa(model, compute_kappa(model.params(), &ss)?)
}

/// Closed forms `(sigma_1, sigma_2, sigma_3)` evaluated literally.
///
/// Loses accuracy near `w = 0` and `w = +-w1`; see [`sigma`].
pub fn sigma_closed_form(omega1: f64, period: f64, omega: f64) -> [Complex64; 3] {
    let (w, w1, t) = (omega, omega1, period);
    let (s1, c1) = (w1 * t).sin_cos();
    let (s, c) = (w * t).sin_cos();
    let half = (0.5 * w * t).sin();
    // (e^{iwT} - 1)/(iw), written without the cancellation in cos(wT) - 1
    let sigma1 = Complex64::new(s / w, 2.0 * half * half / w);
    let den = w1 * (w * w - w1 * w1);
    let sigma2 = Complex64::new(w1 * (c1 - c), w * s1 - w1 * s) / den;
    let sigma3 = Complex64::new(
        (w * s1 - w1 * s) / (w * den),
        (w1 * w1 * c - w * w * c1 + w * w - w1 * w1) / (w * w1 * den),
    );
    [sigma1, sigma2, sigma3]
}

/// `sigma` through the modal decomposition,
/// `R diag(e^{iwT} eta_1(lambda_j - iw, T)) L e1`; regular for every `w`.
pub fn sigma_modal(model: &Model, omega: f64) -> CVector5 {
    let t = model.params().period;
    let s = Complex64::new(0.0, omega);
    let shift = (s * t).exp();
    let modal = model.modal();
    let z: [Complex64; 5] = std::array::from_fn(|j| shift * eta(1, modal.lambda[j] - s, t) * modal.left_eigvecs[(j, 0)]);
    CVector5::from_fn(|i, _| (0..5).map(|j| modal.right_eigvecs[(i, j)] * z[j]).sum())
}

/// `(sigma_1, sigma_2, sigma_3)`: the closed forms away from their removable
/// singularities, the modal form inside the windows of [`SIGMA_WINDOW`].
pub fn sigma(model: &Model, omega: f64) -> [Complex64; 3] {
    let p = model.params();
    let w1 = p.omega1;
    let near = |c: f64| (omega - c).abs() < SIGMA_WINDOW * w1;
    if near(0.0) || near(w1) || near(-w1) {
        let v = sigma_modal(model, omega);
        [v[0], v[1], v[2]]
    } else {
        sigma_closed_form(w1, p.period, omega)
    }
}

fn check_band(period: f64, omega: f64) -> Result<()> {
    if !(omega.abs() < PI / period) {
        return Err(Error::OutOfRange {
            value: omega,
            range: "|omega| < pi/T",
        });
    }
    Ok(())
}

/// Small-signal model frozen at one operating point; evaluates the transfer
/// function at many frequencies.
#[derive(Debug, Clone)]
pub struct SmallSignal {
    model: Model,
    pub u0: f64,
    pub kappa: f64,
    pub script_n: Matrix5,
    /// Eigenvalues of `script N`, descending magnitude.
    pub eigenvalues: Vec<Complex64>,
    balanced: Matrix5,
    scaling: [f64; 5],
}

impl SmallSignal {
    pub fn new(model: &Model, u0: f64) -> Result<Self> {
        let ss = solve_steady_state(model, u0)?;
        let kappa = compute_kappa(model.params(), &ss)?;
        let script_n = script_n_with_kappa(model, kappa)?;
        let (balanced, scaling) = balance(&script_n);
        Ok(Self {
            model: model.clone(),
            u0,
            kappa,
            script_n,
            eigenvalues: eigenvalues_sorted(&script_n),
            balanced,
            scaling,
        })
    }

    /// `(z I - script N)^{-1} v`, solved on the balanced matrix.
    fn solve_shifted(&self, z: Complex64, v: &CVector5) -> Result<CVector5> {
        let d = self.scaling;
        let a = CMatrix5::from_fn(|i, j| {
            let diag = if i == j { z } else { Complex64::new(0.0, 0.0) };
            diag - self.balanced[(i, j)]
        });
        let y = a
            .lu()
            .solve(&CVector5::from_fn(|i, _| v[i] / d[i]))
            .ok_or(Error::SingularSystem { condition: f64::INFINITY })?;
        Ok(CVector5::from_fn(|i, _| y[i] * d[i]))
    }

    /// `kappa gamma^T (z I - script N)^{-1} v`.
    fn resolvent_output(&self, z: Complex64, v: &CVector5) -> Result<Complex64> {
        let y = self.solve_shifted(z, v)?;
        let gamma = self.model.gamma();
        Ok((0..5).map(|i| y[i] * gamma[i]).sum::<Complex64>() * self.kappa)
    }

    pub fn transfer(&self, omega: f64) -> Result<Complex64> {
        let p = self.model.params();
        check_band(p.period, omega)?;
        let z = Complex64::new(0.0, omega * p.period).exp();
        let distance = self
            .eigenvalues
            .iter()
            .map(|mu| (z - mu).norm())
            .fold(f64::INFINITY, f64::min);
        if distance < RESONANCE_TOL {
            return Err(Error::Resonance { distance });
        }
        let s = sigma(&self.model, omega);
        let v = CVector5::new(s[0], s[1], s[2], Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
        self.resolvent_output(z, &v)
    }

    pub fn sweep(&self, omegas: &[f64]) -> Result<Vec<TransferPoint>> {
        omegas
            .iter()
            .map(|&omega| Ok(TransferPoint { omega, value: self.transfer(omega)? }))
            .collect()
    }

    /// First-order expansion `TF(w) = gain + delay * (i w) + O(w^2)`, exact
    /// coefficients from `sigma = P1(T) + i w P2(T) + ...`:
    /// `gain = kappa gamma^T (I - N)^-1 P1`,
    /// `delay = kappa gamma^T [(I - N)^-1 P2 - T (I - N)^-2 P1]`.
    pub fn expansion(&self) -> Result<TransferExpansion> {
        let t = self.model.params().period;
        let one = Complex64::new(1.0, 0.0);
        let p1 = self.model.p_vec(1, t)?.map(|v| Complex64::new(v, 0.0));
        let p2 = self.model.p_vec(2, t)?.map(|v| Complex64::new(v, 0.0));
        let gain = self.resolvent_output(one, &p1)?;
        let inv_p1 = self.solve_shifted(one, &p1)?;
        let delay = self.resolvent_output(one, &p2)? - self.resolvent_output(one, &inv_p1)? * t;
        Ok(TransferExpansion {
            gain: gain.re,
            delay: delay.re,
        })
    }
}

/// `TF(w) ~ gain + delay * (i w)`; both coefficients are real.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransferExpansion {
    pub gain: f64,
    /// Seconds.
    pub delay: f64,
}

/// `kappa gamma^T (e^{i w T} I - script N)^{-1} sigma(T; i w)`.
pub fn transfer_function(model: &Model, u0: f64, omega: f64) -> Result<Complex64> {
    SmallSignal::new(model, u0)?.transfer(omega)
}

/// Predicted complex fundamental of the output for the input
/// `u* sin(w t) = u* (e^{iwt} - e^{-iwt}) / 2i`.
pub fn sine_fundamental(tf: Complex64, amplitude: f64) -> Complex64 {
    tf * amplitude / Complex64::new(0.0, 2.0)
}
