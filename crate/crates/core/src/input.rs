//! Smooth audio inputs with analytic derivatives.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Highest derivative order the simulator requests.
pub const MAX_DERIV: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputSignal {
    Constant {
        value: f64,
    },
    /// `amplitude * sin(2 pi frequency t + phase)`
    Sine {
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
    SumOfSines {
        components: Vec<SineComponent>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SineComponent {
    pub amplitude: f64,
    pub frequency: f64,
    #[serde(default)]
    pub phase: f64,
}

impl InputSignal {
    pub fn sine(amplitude: f64, frequency: f64) -> Self {
        InputSignal::Sine {
            amplitude,
            frequency,
            phase: 0.0,
        }
    }

    fn components(&self) -> Vec<SineComponent> {
        match self {
            InputSignal::Constant { .. } => Vec::new(),
            &InputSignal::Sine {
                amplitude,
                frequency,
                phase,
            } => vec![SineComponent {
                amplitude,
                frequency,
                phase,
            }],
            InputSignal::SumOfSines { components } => components.clone(),
        }
    }

    fn offset(&self) -> f64 {
        match self {
            InputSignal::Constant { value } => *value,
            _ => 0.0,
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        self.derivative(0, t)
    }

    /// `d^n u / dt^n` at `t`.
    pub fn derivative(&self, n: usize, t: f64) -> f64 {
        let mut acc = if n == 0 { self.offset() } else { 0.0 };
        for c in self.components() {
            let w = TAU * c.frequency;
            // d^n/dt^n sin(x) = sin(x + n pi/2)
            let arg = w * t + c.phase + n as f64 * std::f64::consts::FRAC_PI_2;
            acc += c.amplitude * w.powi(n as i32) * arg.sin();
        }
        acc
    }

    /// Taylor coefficients `u^(j)(t)`, `j = 0..MAX_DERIV`.
    pub fn derivatives(&self, t: f64) -> [f64; MAX_DERIV] {
        std::array::from_fn(|j| self.derivative(j, t))
    }

    /// Upper bound on `|u|`.
    pub fn max_abs(&self) -> f64 {
        self.offset().abs() + self.components().iter().map(|c| c.amplitude.abs()).sum::<f64>()
    }

    /// Upper bound on `|u^(n)|`.
    pub fn max_abs_derivative(&self, n: usize) -> f64 {
        if n == 0 {
            return self.max_abs();
        }
        self.components()
            .iter()
            .map(|c| c.amplitude.abs() * (TAU * c.frequency).abs().powi(n as i32))
            .sum()
    }

    /// Fundamental frequency of a single-tone input (Hz); `None` otherwise.
    pub fn frequency(&self) -> Option<f64> {
        match self {
            InputSignal::Sine { frequency, .. } => Some(*frequency),
            _ => None,
        }
    }

    /// Common fundamental (Hz) of a periodic input: the tone itself, or for a
    /// sum of sines the largest `f0` of which every component frequency is an
    /// integer multiple (searched as `min_f / m`, `m <= 64`, relative tolerance
    /// 1e-9). `None` for constant or aperiodic inputs.
    pub fn fundamental_frequency(&self) -> Option<f64> {
        let freqs: Vec<f64> = self.components().iter().map(|c| c.frequency).filter(|&f| f > 0.0).collect();
        let min_f = freqs.iter().cloned().fold(f64::INFINITY, f64::min);
        if !min_f.is_finite() {
            return None;
        }
        (1..=64).map(|m| min_f / m as f64).find(|&f0| {
            freqs.iter().all(|&f| {
                let r = f / f0;
                (r - r.round()).abs() <= 1e-9 * r
            })
        })
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |v: f64| v.is_finite();
        let ok = finite(self.offset())
            && self
                .components()
                .iter()
                .all(|c| finite(c.amplitude) && finite(c.frequency) && finite(c.phase) && c.frequency >= 0.0);
        if !ok {
            return Err(Error::InvalidParameter {
                field: "input",
                reason: "non-finite value or negative frequency".into(),
            });
        }
        if self.max_abs() >= 1.0 {
            return Err(Error::Saturation(self.max_abs()));
        }
        Ok(())
    }
}
