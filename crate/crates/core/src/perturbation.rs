//! Two-time-scale analysis of the audio output for a slowly varying input.
//!
//! With slow time `tau = w t` and `eps = w T`, the output averaged over a
//! carrier period is `g_a = -1 + 2 a0(tau) + eps g1(tau) + O(eps^2)`, where
//! `a0 = (1 + U)/2` and
//!
//! ```text
//! g1 = (1 - k) U U'/2 - w1^2 (1 - psi) U' / ((c1 w1^2 + c3) T)
//! psi = p1(T) + ((1 - k) T / LC) q0(a0 T) + (k / LC) q1(T)
//! ```
//!
//! `p_n`, `q_n` contract `P_n`, `Q_n` with `gamma^T R Upsilon0 R^-1`,
//! `Upsilon0 = diag(-1/2, (1 - e^{lambda_j T})^-1, ...)`.

use std::f64::consts::TAU;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::input::InputSignal;
use crate::model::{real_scalar_checked, Model, StateVector};

/// Minimum number of samples per input period for harmonic extraction.
pub const MIN_FOURIER_SAMPLES: usize = 4096;

/// Leading-order duty cycle `(1 + U)/2`.
pub fn a0(u: f64) -> Result<f64> {
    if !(u.abs() < 1.0) {
        return Err(Error::Saturation(u.abs()));
    }
    Ok(0.5 * (1.0 + u))
}

/// Diagonal of `Upsilon0`, in the mode order of the model.
pub fn upsilon0(model: &Model) -> Result<[Complex64; 5]> {
    let t = model.params().period;
    let mut d = [Complex64::new(-0.5, 0.0); 5];
    for j in 1..5 {
        let gap = 1.0 - (model.lambda()[j] * t).exp();
        if gap.norm() < 1e-12 {
            return Err(Error::Resonance { distance: gap.norm() });
        }
        d[j] = 1.0 / gap;
    }
    Ok(d)
}

/// Audio input on the slow time scale: `U(tau) = u(tau / w)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlowInput {
    pub signal: InputSignal,
    /// Reference audio angular frequency `w` (rad/s).
    pub omega_audio: f64,
}

impl SlowInput {
    /// Slow-time view of a single tone; `w` is its angular frequency.
    pub fn from_sine(amplitude: f64, frequency: f64) -> Self {
        Self {
            signal: InputSignal::sine(amplitude, frequency),
            omega_audio: TAU * frequency,
        }
    }

    pub fn u(&self, tau: f64) -> f64 {
        self.signal.value(tau / self.omega_audio)
    }

    /// `dU/dtau`.
    pub fn u_prime(&self, tau: f64) -> f64 {
        self.signal.derivative(1, tau / self.omega_audio) / self.omega_audio
    }

    pub fn epsilon(&self, period: f64) -> f64 {
        self.omega_audio * period
    }
}

/// The two contributions to `g1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct G1Terms {
    /// `(1 - k) U U' / 2`, present without ripple compensation only.
    pub ripple: f64,
    /// `-w1^2 (1 - psi) U' / ((c1 w1^2 + c3) T)`.
    pub loop_delay: f64,
}

impl G1Terms {
    pub fn total(&self) -> f64 {
        self.ripple + self.loop_delay
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AudioPrediction {
    pub times: Vec<f64>,
    pub samples: Vec<f64>,
    /// 0: duty-cycle law only; 1: including `eps g1`.
    pub order: u8,
    /// Complex coefficients at harmonics `1..=n` when requested.
    pub fourier: Option<Vec<Complex64>>,
}

/// Precomputed contraction `gamma^T R Upsilon0 R^-1` and derived constants.
#[derive(Debug, Clone)]
pub struct PerturbationModel {
    model: Model,
    pub upsilon: [Complex64; 5],
    /// `gamma^T R Upsilon0 R^-1` as a real row.
    pub contraction: StateVector,
    p1_t: f64,
    q1_t: f64,
    /// `w1^2 / ((c1 w1^2 + c3) T)`.
    gain: f64,
}

impl PerturbationModel {
    pub fn new(model: &Model) -> Result<Self> {
        let p = model.params();
        let denom = p.resonator_gain() * p.period;
        if denom == 0.0 {
            return Err(Error::DivisionByZero("c1 w1^2 + c3"));
        }
        let upsilon = upsilon0(model)?;
        let modal = model.modal();
        let gr = model.gamma_right();
        let mut row = [0.0; 5];
        for (i, out) in row.iter_mut().enumerate() {
            let c: Complex64 = (0..5).map(|j| gr[j] * upsilon[j] * modal.left_eigvecs[(j, i)]).sum();
            let scale: f64 = (0..5)
                .map(|j| (gr[j] * upsilon[j] * modal.left_eigvecs[(j, i)]).norm())
                .sum();
            *out = real_scalar_checked(c, scale)?;
        }
        let contraction = StateVector::from_row_slice(&row);
        let t = p.period;
        let p1_t = contraction.dot(&model.p_vec(1, t)?);
        let q1_t = contraction.dot(&model.q_vec(1, t));
        Ok(Self {
            model: model.clone(),
            upsilon,
            contraction,
            p1_t,
            q1_t,
            gain: p.omega1 * p.omega1 / denom,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    /// `(p_n(t), q_n(t))`.
    pub fn pq_scalars(&self, n: usize, t: f64) -> Result<(f64, f64)> {
        Ok((
            self.contraction.dot(&self.model.p_vec(n, t)?),
            self.contraction.dot(&self.model.q_vec(n, t)),
        ))
    }

    pub fn psi(&self, u: f64) -> Result<f64> {
        let p = self.model.params();
        let k = p.kf();
        let mut psi = self.p1_t + k / p.lc() * self.q1_t;
        if k != 1.0 {
            let q0 = self.contraction.dot(&self.model.q_vec(0, a0(u)? * p.period));
            psi += (1.0 - k) * p.period / p.lc() * q0;
        }
        Ok(psi)
    }

    pub fn g1_terms(&self, u: f64, u_prime: f64) -> Result<G1Terms> {
        let k = self.model.params().kf();
        let psi = self.psi(u)?;
        Ok(G1Terms {
            ripple: (1.0 - k) * u * u_prime / 2.0,
            loop_delay: -self.gain * (1.0 - psi) * u_prime,
        })
    }

    pub fn g1(&self, u: f64, u_prime: f64) -> Result<f64> {
        Ok(self.g1_terms(u, u_prime)?.total())
    }

    /// First-order duty-cycle correction, from `g1 = 2 a1 - 2 a0 a0'`.
    pub fn a1(&self, u: f64, u_prime: f64) -> Result<f64> {
        Ok(0.5 * self.g1(u, u_prime)? + a0(u)? * 0.5 * u_prime)
    }

    /// `w1^2 (1 - psi) / ((c1 w1^2 + c3) T)` at `U = 0`: with ripple
    /// compensation the output is `u - T K u'` to first order.
    pub fn delay_gain(&self, u: f64) -> Result<f64> {
        Ok(self.gain * (1.0 - self.psi(u)?))
    }

    /// `g_a` at real time `t`, truncated at `order` (0 or 1).
    pub fn audio_sample(&self, input: &SlowInput, order: u8, t: f64) -> Result<f64> {
        let tau = input.omega_audio * t;
        let u = input.u(tau);
        let base = -1.0 + 2.0 * a0(u)?;
        match order {
            0 => Ok(base),
            1 => {
                let eps = input.epsilon(self.model.params().period);
                Ok(base + eps * self.g1(u, input.u_prime(tau))?)
            }
            _ => Err(Error::UnsupportedOrder {
                order: order as i32,
                max: 1,
            }),
        }
    }

    /// Samples `g_a` on `[0, duration)` at `sample_rate`.
    pub fn predict_audio(&self, input: &SlowInput, order: u8, duration: f64, sample_rate: f64) -> Result<AudioPrediction> {
        if !(duration > 0.0 && sample_rate > 0.0) {
            return Err(Error::InvalidParameter {
                field: "duration",
                reason: "duration and sample rate must be positive".into(),
            });
        }
        let n = (duration * sample_rate).round() as usize;
        let times: Vec<f64> = (0..n).map(|i| i as f64 / sample_rate).collect();
        let samples = times
            .iter()
            .map(|&t| self.audio_sample(input, order, t))
            .collect::<Result<Vec<_>>>()?;
        Ok(AudioPrediction {
            times,
            samples,
            order,
            fourier: None,
        })
    }

    /// Complex Fourier coefficients `(1/P) int_0^P g_a e^{-i n w t} dt`,
    /// `n = 1..=harmonics` of the input's common fundamental, by the trapezoid
    /// rule over one period of it.
    pub fn harmonics(&self, input: &SlowInput, order: u8, harmonics: usize, samples: usize) -> Result<Vec<Complex64>> {
        let f = input.signal.fundamental_frequency().ok_or_else(|| {
            Error::WindowMisaligned("harmonic extraction needs a periodic input".into())
        })?;
        let samples = samples.max(MIN_FOURIER_SAMPLES);
        let period = 1.0 / f;
        let dt = period / samples as f64;
        let g = (0..samples)
            .map(|i| self.audio_sample(input, order, i as f64 * dt))
            .collect::<Result<Vec<_>>>()?;
        Ok((1..=harmonics)
            .map(|h| {
                let sum: Complex64 = g
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| v * Complex64::from_polar(1.0, -TAU * (h * i) as f64 / samples as f64))
                    .sum();
                sum / samples as f64
            })
            .collect())
    }
}
