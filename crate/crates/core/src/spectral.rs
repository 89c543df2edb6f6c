//! Fourier coefficients of the two-level output computed exactly from the
//! switching times.
//!
//! Over a window of `W` seconds, `f(w) = (1/W) int g(t) e^{-iwt} dt`; each
//! constant piece of `g` contributes `+-(e^{-iwt2} - e^{-iwt1})/(-iw)`.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::simulator::PulseTrain;

/// Default number of harmonics included in THD.
pub const DEFAULT_N_MAX: usize = 20;

/// Relative tolerance on `periods * T * f` being an integer.
const COMMENSURATE_TOL: f64 = 1e-9;

/// Duty-cycle repeat mismatch above which a window is flagged as leaky.
const PERIODICITY_TOL: f64 = 1e-6;

/// A window of whole carrier periods `[first T, (first + periods) T)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Window {
    pub first_period: i64,
    pub periods: usize,
}

impl Window {
    pub fn new(first_period: i64, periods: usize) -> Self {
        Self { first_period, periods }
    }

    /// The last `audio_periods` periods of a train for a tone at `f` Hz.
    pub fn trailing(train: &PulseTrain, f: f64, audio_periods: usize) -> Result<Self> {
        let per = carriers_per_audio_period(train.period, f)?;
        let periods = per * audio_periods;
        if periods > train.events.len() {
            return Err(Error::WindowMisaligned(format!(
                "{periods} periods requested but the train has {}",
                train.events.len()
            )));
        }
        let last = train.first_period() + train.events.len() as i64;
        Ok(Self::new(last - periods as i64, periods))
    }

    pub fn t_start(&self, period: f64) -> f64 {
        self.first_period as f64 * period
    }

    pub fn t_end(&self, period: f64) -> f64 {
        (self.first_period + self.periods as i64) as f64 * period
    }
}

/// Number of carrier periods in one period of a tone at `f`, which must be
/// an integer.
pub fn carriers_per_audio_period(period: f64, f: f64) -> Result<usize> {
    if !(f > 0.0) {
        return Err(Error::WindowMisaligned(format!("frequency {f} must be positive")));
    }
    let ratio = 1.0 / (f * period);
    let n = ratio.round();
    if n < 1.0 || (ratio - n).abs() > COMMENSURATE_TOL * n {
        return Err(Error::WindowMisaligned(format!(
            "1/(f T) = {ratio} is not an integer number of carrier periods"
        )));
    }
    Ok(n as usize)
}

fn check_window(train: &PulseTrain, window: &Window) -> Result<()> {
    let first = train.first_period();
    let last = first + train.events.len() as i64;
    if window.periods == 0 || window.first_period < first || window.first_period + window.periods as i64 > last {
        return Err(Error::WindowMisaligned(format!(
            "window [{}, {}) outside the train's periods [{first}, {last})",
            window.first_period,
            window.first_period + window.periods as i64
        )));
    }
    Ok(())
}

fn check_commensurate(period: f64, window: &Window, omega: f64) -> Result<()> {
    // cycles of w in the window must be an integer
    let cycles = omega * window.periods as f64 * period / std::f64::consts::TAU;
    if (cycles - cycles.round()).abs() > COMMENSURATE_TOL * cycles.abs().max(1.0) {
        return Err(Error::WindowMisaligned(format!(
            "window holds {cycles} cycles of omega = {omega}"
        )));
    }
    Ok(())
}

/// Exact time average of `g` over the window.
pub fn pulse_mean(train: &PulseTrain, window: &Window) -> Result<f64> {
    check_window(train, window)?;
    let start = (window.first_period - train.first_period()) as usize;
    let sum: f64 = train.events[start..start + window.periods]
        .iter()
        .map(|e| 2.0 * e.duty - 1.0)
        .sum();
    Ok(sum / window.periods as f64)
}

/// `(1/W) int_window g(t) e^{-iwt} dt`, exact. `omega = 0` gives the mean.
pub fn pulse_fourier(train: &PulseTrain, omega: f64, window: &Window) -> Result<Complex64> {
    if omega == 0.0 {
        return pulse_mean(train, window).map(|m| Complex64::new(m, 0.0));
    }
    check_window(train, window)?;
    check_commensurate(train.period, window, omega)?;
    Ok(pulse_fourier_unchecked(train, omega, window))
}

/// Exact pulse-train coefficient without the commensurability check.
pub fn pulse_fourier_unchecked(train: &PulseTrain, omega: f64, window: &Window) -> Complex64 {
    let t = train.period;
    let start = (window.first_period - train.first_period()) as usize;
    let phase = |s: f64| Complex64::from_polar(1.0, -omega * s);
    let mut acc = Complex64::new(0.0, 0.0);
    for e in &train.events[start..start + window.periods] {
        let t0 = e.n as f64 * t;
        let t1 = t0 + t;
        // (+1 on [t0, A]) - (-1 on [A, t1]) => 2 e(A) - e(t0) - e(t1)
        acc += phase(e.edge) * 2.0 - phase(t0) - phase(t1);
    }
    let w = window.periods as f64 * t;
    acc / Complex64::new(0.0, -omega) / w
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralReport {
    /// Hz.
    pub fundamental_freq: f64,
    /// `(n, f_n)` for `n = 1..=n_max`.
    pub coefficients: Vec<(usize, Complex64)>,
    /// Exact time average.
    pub dc: f64,
    pub thd: f64,
    /// `(t_start, t_end)` in seconds.
    pub window: (f64, f64),
    /// Coefficients are contaminated: the duty cycles are not periodic with
    /// the input period, or pulses were skipped inside the window.
    pub leakage: bool,
    pub skipped_in_window: usize,
}

impl SpectralReport {
    pub fn harmonic(&self, n: usize) -> Option<Complex64> {
        self.coefficients.iter().find(|(m, _)| *m == n).map(|(_, c)| *c)
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.coefficients.iter().map(|(_, c)| c.norm()).collect()
    }
}

/// `sqrt(sum_{n >= 2} |f_n|^2) / |f_1|`.
pub fn thd(coefficients: &[(usize, Complex64)]) -> Result<f64> {
    let f1 = coefficients
        .iter()
        .find(|(n, _)| *n == 1)
        .map(|(_, c)| c.norm())
        .unwrap_or(0.0);
    if f1 == 0.0 {
        return Err(Error::ZeroFundamental);
    }
    let rest: f64 = coefficients
        .iter()
        .filter(|(n, _)| *n >= 2)
        .map(|(_, c)| c.norm_sqr())
        .sum();
    Ok(rest.sqrt() / f1)
}

/// Harmonics `n f`, `n = 1..=n_max`, of a train over a commensurate window.
pub fn harmonic_table(train: &PulseTrain, f: f64, n_max: usize, window: &Window) -> Result<SpectralReport> {
    let per = carriers_per_audio_period(train.period, f)?;
    if window.periods % per != 0 {
        return Err(Error::WindowMisaligned(format!(
            "{} carrier periods is not a whole number of input periods ({per} each)",
            window.periods
        )));
    }
    let omega = std::f64::consts::TAU * f;
    let coefficients = (1..=n_max)
        .map(|n| pulse_fourier(train, omega * n as f64, window).map(|c| (n, c)))
        .collect::<Result<Vec<_>>>()?;
    let thd = thd(&coefficients)?;
    let start = (window.first_period - train.first_period()) as usize;
    let events = &train.events[start..start + window.periods];
    let skipped_in_window = events.iter().filter(|e| e.skipped).count();
    // compare with the preceding input period where available, else within the window
    let periodic = if start >= per {
        let before = &train.events[start - per..start];
        before.iter().zip(events).all(|(a, b)| (a.duty - b.duty).abs() <= PERIODICITY_TOL)
    } else {
        events.iter().zip(&events[per.min(events.len())..]).all(|(a, b)| (a.duty - b.duty).abs() <= PERIODICITY_TOL)
    };
    Ok(SpectralReport {
        fundamental_freq: f,
        coefficients,
        dc: pulse_mean(train, window)?,
        thd,
        window: (window.t_start(train.period), window.t_end(train.period)),
        leakage: skipped_in_window > 0 || !periodic,
        skipped_in_window,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::PulseEvent;
    use std::f64::consts::{PI, TAU};

    fn train_from(period: f64, duties: &[f64], first: i64) -> PulseTrain {
        let events = duties
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let n = first + i as i64;
                PulseEvent {
                    n,
                    edge: (n as f64 + a) * period,
                    duty: a,
                    skipped: a == 0.0 || a == 1.0,
                }
            })
            .collect();
        PulseTrain {
            period,
            events,
            t_start: first as f64 * period,
            t_end: (first + duties.len() as i64) as f64 * period,
        }
    }

    #[test]
    fn square_wave_fundamental() {
        let t = 1.0 / 384000.0;
        let train = train_from(t, &[0.5; 8], 0);
        let c = pulse_fourier(&train, TAU / t, &Window::new(0, 8)).unwrap();
        assert!((c.norm() - 2.0 / PI).abs() < 1e-12);
        assert!((pulse_fourier(&train, 0.0, &Window::new(2, 4)).unwrap().re).abs() < 1e-15);
    }

    #[test]
    fn mean_is_duty_law() {
        let train = train_from(1e-3, &[0.8; 5], 3);
        let m = pulse_mean(&train, &Window::new(3, 5)).unwrap();
        assert!((m - 0.6).abs() < 1e-15);
    }

    #[test]
    fn exact_sum_matches_dense_sampling() {
        // ~2^20 samples with every edge and period boundary on the sampling
        // grid, so midpoint sampling only carries the O((w dt)^2) error
        let t = 1.0;
        let grid = 5.0 / 1024.0;
        let duties: Vec<f64> = (0..10)
            .map(|i| ((0.5 + 0.3 * (0.7 * i as f64).sin()) / grid).round() * grid)
            .collect();
        let train = train_from(t, &duties, 0);
        let window = Window::new(0, 10);
        let n = 10 << 17;
        let dt = 10.0 / n as f64;
        for omega in [TAU / 10.0 * 3.0, TAU] {
            let exact = pulse_fourier(&train, omega, &window).unwrap();
            let sampled: Complex64 = (0..n)
                .map(|i| {
                    let s = (i as f64 + 0.5) * dt;
                    train.output(s).unwrap() * Complex64::from_polar(1.0, -omega * s)
                })
                .sum::<Complex64>()
                * dt
                / 10.0;
            assert!((exact - sampled).norm() < 1e-6 * exact.norm(), "{exact} vs {sampled}");
        }
    }

    #[test]
    fn shift_gives_phase_factor() {
        let t = 1.0;
        let duties = [0.2, 0.7, 0.4, 0.9, 0.55, 0.3];
        let base = train_from(t, &duties, 0);
        let dt = 0.3 * t;
        // boundaries all moved by dt, summed the same way as the exact form
        let omega = TAU / 6.0 * 2.0;
        let w = Window::new(0, 6);
        let coef = |train: &PulseTrain, offset: f64| {
            let mut acc = Complex64::new(0.0, 0.0);
            for e in &train.events {
                let t0 = e.n as f64 * t + offset;
                let ph = |s: f64| Complex64::from_polar(1.0, -omega * s);
                acc += ph(e.edge + offset) * 2.0 - ph(t0) - ph(t0 + t);
            }
            acc / Complex64::new(0.0, -omega) / 6.0
        };
        let direct = pulse_fourier(&base, omega, &w).unwrap();
        assert!((coef(&base, dt) - direct * Complex64::from_polar(1.0, -omega * dt)).norm() < 1e-14);
        assert!((coef(&base, 0.0) - direct).norm() < 1e-14);
    }

    #[test]
    fn thd_definition() {
        let c = |v: f64| Complex64::new(v, 0.0);
        assert!((thd(&[(1, c(1.0)), (2, c(0.1))]).unwrap() - 0.1).abs() < 1e-15);
        let two = thd(&[(1, c(1.0)), (2, c(0.1)), (3, c(0.1))]).unwrap();
        assert!((two - 0.1 * 2f64.sqrt()).abs() < 1e-15);
        assert!(thd(&[(1, c(1.0))]).unwrap() == 0.0);
        assert!(matches!(thd(&[(1, c(0.0)), (2, c(0.1))]), Err(Error::ZeroFundamental)));
        // magnitudes of the reference harmonic table and fundamental
        let table = [(1, c(0.3991)), (2, c(5.258e-5)), (3, c(1.52e-6)), (4, c(1.38e-5))];
        assert!((thd(&table).unwrap() - 1.363e-4).abs() < 1e-7);
    }

    #[test]
    fn window_checks() {
        let t = 1.0 / 384000.0;
        let train = train_from(t, &[0.5; 384], 0);
        assert_eq!(carriers_per_audio_period(t, 1000.0).unwrap(), 384);
        assert!(carriers_per_audio_period(t, 1100.0).is_err());
        assert_eq!(carriers_per_audio_period(t, 3000.0).unwrap(), 128);
        assert!(pulse_fourier(&train, TAU * 1000.0, &Window::new(0, 384)).is_ok());
        assert!(pulse_fourier(&train, TAU * 1000.0, &Window::new(0, 100)).is_err());
        assert!(pulse_fourier(&train, TAU * 1000.0, &Window::new(1, 384)).is_err());
        assert!(harmonic_table(&train, 1000.0, 3, &Window::new(0, 192)).is_err());
    }
}
