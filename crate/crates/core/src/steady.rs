//! T-periodic operating point for a constant input.
//!
//! For `u(t) = u0` every duty cycle equals `a = (1 + u0)/2` and the state at
//! the falling edge solves `(I - e^{NT}) x(aT) = Phi(a, T)`. That matrix is
//! singular (the zero mode of `N`), so one row is traded for the switching
//! condition `gamma . x(aT) = -1 + 2a`.

use nalgebra::SMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{AmplifierParams, Matrix5, Model, Segment, StateVector};

/// Condition number (after row/column equilibration) above which the
/// reduced steady-state system is declared singular.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SteadyState {
    pub u0: f64,
    /// Duty cycle `(1 + u0)/2`.
    pub a: f64,
    /// State at the falling edge `t = aT`.
    pub x_at_switch: StateVector,
    /// Compensator slope `gamma . x'(aT)` (1/s).
    pub slope: f64,
    /// Row of the periodicity equation that was replaced by the switching condition.
    pub replaced_row: usize,
}

/// Duty cycle `(1 + u0)/2` of the steady state for input `u0`.
pub fn duty_cycle(u0: f64) -> Result<f64> {
    if !(-1.0..=1.0).contains(&u0) {
        return Err(Error::OutOfRange {
            value: u0,
            range: "[-1, 1]",
        });
    }
    Ok(0.5 * (1.0 + u0))
}

/// Forcing vector `Phi(a, T)` of the periodicity equation for a trial duty cycle `a`.
pub fn forcing_vector(model: &Model, u0: f64, a: f64) -> Result<StateVector> {
    let p = model.params();
    let t = p.period;
    let k = p.kf();
    let q1_at = model.q_vec(1, a * t);
    let q1 = model.q_vec(1, t);
    let q2 = model.q_vec(2, t);
    let drive = q1_at * (2.0 * (1.0 - k)) + q1 * (-1.0 - k + 2.0 * k * a) + q2 * (2.0 * k / t);
    Ok(model.p_vec(1, t)? * u0 + drive / p.lc())
}

/// Relative residual of the solvability condition `v1 . Phi(a, T) = 0`.
pub fn solvability_residual(model: &Model, u0: f64, a: f64) -> Result<f64> {
    let phi = forcing_vector(model, u0, a)?;
    let v1 = model.v1();
    let scale: f64 = v1.iter().zip(phi.iter()).map(|(v, f)| (v * f).abs()).sum();
    Ok(v1.dot(&phi).abs() / scale)
}

/// Solves for the periodic operating point at constant input `u0`, `|u0| < 1`.
pub fn solve_steady_state(model: &Model, u0: f64) -> Result<SteadyState> {
    if !(u0.abs() < 1.0) {
        return Err(Error::OutOfRange {
            value: u0,
            range: "(-1, 1)",
        });
    }
    let p = model.params();
    let a = duty_cycle(u0)?;
    let phi = forcing_vector(model, u0, a)?;
    let periodicity = Matrix5::identity() - model.matrix_exp(p.period)?;
    let gamma = p.gamma();

    let mut worst = 0.0_f64;
    for row in 0..3 {
        let mut reduced = periodicity;
        reduced.set_row(row, &gamma.transpose());
        let mut rhs = phi;
        rhs[row] = -1.0 + 2.0 * a;

        let (scaled, row_scale, col_scale) = equilibrate(&reduced);
        let condition = condition_number_1(&scaled);
        worst = worst.max(condition);
        if !(condition <= MAX_CONDITION) {
            continue;
        }
        let lu = scaled.lu();
        let Some(y) = lu.solve(&rhs.component_mul(&row_scale)) else {
            continue;
        };
        let x = y.component_mul(&col_scale);
        let slope = gamma.dot(&(model.system_matrix() * x)) + p.c1 * u0;
        return Ok(SteadyState {
            u0,
            a,
            x_at_switch: x,
            slope,
            replaced_row: row,
        });
    }
    Err(Error::SingularSystem { condition: worst })
}

/// Row then column scaling by powers of two so every row and column has
/// unit max-norm. Returns `(D_r A D_c, diag(D_r), diag(D_c))`.
fn equilibrate(a: &Matrix5) -> (Matrix5, StateVector, StateVector) {
    let pow2 = |v: f64| if v > 0.0 { 2f64.powi(-(v.log2().round() as i32)) } else { 1.0 };
    let row_scale = StateVector::from_fn(|i, _| pow2(a.row(i).amax()));
    let mut scaled = a.clone();
    for i in 0..5 {
        let r = scaled.row(i) * row_scale[i];
        scaled.set_row(i, &r);
    }
    let col_scale = StateVector::from_fn(|j, _| pow2(scaled.column(j).amax()));
    for j in 0..5 {
        let c = scaled.column(j) * col_scale[j];
        scaled.set_column(j, &c);
    }
    (scaled, row_scale, col_scale)
}

fn condition_number_1(a: &Matrix5) -> f64 {
    let norm1 = |m: &SMatrix<f64, 5, 5>| {
        (0..5)
            .map(|j| m.column(j).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    };
    match a.try_inverse() {
        Some(inv) => norm1(a) * norm1(&inv),
        None => f64::INFINITY,
    }
}

/// Relative residual of every row of the unreduced system
/// `(I - e^{NT}) x(aT) = Phi` and of the switching condition.
pub fn steady_state_residual(model: &Model, ss: &SteadyState) -> Result<(StateVector, f64)> {
    let p = model.params();
    let phi = forcing_vector(model, ss.u0, ss.a)?;
    let m = Matrix5::identity() - model.matrix_exp(p.period)?;
    let lhs = m * ss.x_at_switch;
    let scale = m.abs() * ss.x_at_switch.abs() + phi.abs();
    let rows = StateVector::from_fn(|i, _| (lhs[i] - phi[i]).abs() / scale[i].max(f64::MIN_POSITIVE));
    let gamma = p.gamma();
    let target = -1.0 + 2.0 * ss.a;
    let switching = (gamma.dot(&ss.x_at_switch) - target).abs();
    Ok((rows, switching))
}

/// Constant offset `x_b(t + (b-a)T) - x_a(t)` between RC steady states with duty cycles `a`, `b`.
pub fn rc_shift_delta(params: &AmplifierParams, a: f64, b: f64) -> Result<StateVector> {
    let g = params.resonator_gain();
    if g == 0.0 {
        return Err(Error::DivisionByZero("c1 w1^2 + c3"));
    }
    let w2 = params.omega1 * params.omega1;
    Ok(StateVector::new(w2, 0.0, 1.0, g, 0.0) * (2.0 * (b - a) / g))
}

/// Drive segment from the falling edge `aT` to the end of the period.
pub(crate) fn low_segment(params: &AmplifierParams, u0: f64, a: f64) -> Segment {
    let k = params.kf();
    Segment {
        input_derivs: [u0, 0.0, 0.0, 0.0, 0.0],
        drive_offset: -1.0 - k + 2.0 * k * a,
        drive_slope: 2.0 * k / params.period,
    }
}

/// Drive segment from a period start to the falling edge.
pub(crate) fn high_segment(params: &AmplifierParams, u0: f64) -> Segment {
    let k = params.kf();
    Segment {
        input_derivs: [u0, 0.0, 0.0, 0.0, 0.0],
        drive_offset: 1.0 - k,
        drive_slope: 2.0 * k / params.period,
    }
}

/// State of the periodic orbit at the start of a carrier period.
pub fn state_at_period_start(model: &Model, ss: &SteadyState) -> StateVector {
    let p = model.params();
    model.propagate(
        &ss.x_at_switch,
        (1.0 - ss.a) * p.period,
        &low_segment(p, ss.u0, ss.a),
    )
}

/// One period of the periodic orbit sampled uniformly over `[aT, aT + T]`
/// (both ends included).
#[derive(Debug, Clone, Serialize)]
pub struct PeriodWaveform {
    pub times: Vec<f64>,
    pub states: Vec<StateVector>,
    /// Compensator output `m(t) = gamma . x(t)`.
    pub compensator: Vec<f64>,
}

impl PeriodWaveform {
    /// Largest componentwise relative mismatch between the two ends.
    pub fn periodicity_residual(&self) -> f64 {
        let first = self.states.first().expect("at least two samples");
        let last = self.states.last().expect("at least two samples");
        let scale = self
            .states
            .iter()
            .fold(StateVector::zeros(), |acc, x| acc.sup(&x.abs()));
        (0..5)
            .map(|i| (first[i] - last[i]).abs() / scale[i].max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max)
    }
}

pub fn reconstruct_period(model: &Model, ss: &SteadyState, n_samples: usize) -> Result<PeriodWaveform> {
    if n_samples < 2 {
        return Err(Error::OutOfRange {
            value: n_samples as f64,
            range: "n_samples >= 2",
        });
    }
    let p = model.params();
    let t = p.period;
    let low = low_segment(p, ss.u0, ss.a);
    let high = high_segment(p, ss.u0);
    let low_len = (1.0 - ss.a) * t;
    let x_start = model.propagate(&ss.x_at_switch, low_len, &low);
    let gamma = p.gamma();

    let mut out = PeriodWaveform {
        times: Vec::with_capacity(n_samples),
        states: Vec::with_capacity(n_samples),
        compensator: Vec::with_capacity(n_samples),
    };
    for i in 0..n_samples {
        let s = t * i as f64 / (n_samples - 1) as f64;
        let x = if s <= low_len {
            model.propagate(&ss.x_at_switch, s, &low)
        } else {
            model.propagate(&x_start, s - low_len, &high)
        };
        out.times.push(ss.a * t + s);
        out.compensator.push(gamma.dot(&x));
        out.states.push(x);
    }
    Ok(out)
}
