//! Event-driven simulation of the closed loop.
//!
//! Each carrier period starts with `g = +1`; the falling edge `A_n` is the
//! first root of `h(t) = gamma . x(t) - v(t)` in the period, after which
//! `g = -1` until the next period. Between edges the state is propagated
//! exactly in modal coordinates, with the input represented by its Taylor
//! series (derivatives up to the 4th) about the start of each segment.
//!
//! [`discrete_map_step`] is an independent formulation of the same dynamics
//! as a map from one falling edge to the next.

use log::warn;
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::input::{InputSignal, MAX_DERIV};
use crate::model::{eta, factorial, CVector5, Model, Segment, StateVector};
use crate::steady::{solve_steady_state, state_at_period_start};

/// Number of `eta_n` orders needed: state, four input derivatives, ramp drive.
const ETA_ORDERS: usize = MAX_DERIV + 2;

/// Relative size of the neglected 5th-derivative term above which a
/// truncation warning is logged.
pub const TRUNCATION_WARN: f64 = 1e-10;

const MAX_REFINE_ITERATIONS: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PulseEvent {
    /// Carrier period index.
    pub n: i64,
    /// Falling-edge time `A_n` (s).
    pub edge: f64,
    /// `a_n = (A_n - nT)/T`.
    pub duty: f64,
    /// No switching in this period (`a_n` saturated at 0 or 1).
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PulseTrain {
    pub period: f64,
    pub events: Vec<PulseEvent>,
    pub t_start: f64,
    pub t_end: f64,
}

impl PulseTrain {
    pub fn first_period(&self) -> i64 {
        self.events.first().map_or(0, |e| e.n)
    }

    /// Event of carrier period `n`, if inside the train.
    pub fn event(&self, n: i64) -> Option<&PulseEvent> {
        let i = n - self.first_period();
        if i < 0 {
            return None;
        }
        self.events.get(i as usize)
    }

    pub fn skip_count(&self) -> usize {
        self.events.iter().filter(|e| e.skipped).count()
    }

    /// Output `g(t)` of the train (`+1` before the edge in each period).
    pub fn output(&self, t: f64) -> Option<f64> {
        let n = (t / self.period).floor() as i64;
        self.event(n).map(|e| if t < e.edge { 1.0 } else { -1.0 })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<StateVector>,
    /// `m(t) = gamma . x(t)`.
    pub compensator: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimulationOptions {
    /// Trajectory samples per carrier period; 0 disables recording.
    pub samples_per_period: usize,
    /// Sub-grid used to bracket the first crossing.
    pub scan_points: usize,
    /// Crossing tolerance relative to `T`.
    pub crossing_tol: f64,
    /// Also scan the realised low segment for a second crossing.
    pub check_multiple_crossings: bool,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            samples_per_period: 32,
            scan_points: 64,
            crossing_tol: 1e-12,
            check_multiple_crossings: true,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationResult {
    pub train: PulseTrain,
    pub trajectory: Trajectory,
    /// States at every period start, including the final one (`n_periods + 1` entries).
    pub period_states: Vec<StateVector>,
    /// States at the falling edges (at `(n+1)T` for skipped periods with `a_n = 1`).
    pub edge_states: Vec<StateVector>,
    /// Periods in which more than one crossing was seen.
    pub multiple_crossings: usize,
    /// Largest estimated relative size of the neglected 5th-derivative term.
    pub truncation_estimate: f64,
}

/// First root of `h` in `[lo, hi]`: scans `scan_points` sub-intervals for a
/// sign change and refines it to `tol`.
pub fn find_crossing<F: FnMut(f64) -> f64>(mut h: F, lo: f64, hi: f64, scan_points: usize, tol: f64) -> Result<f64> {
    let n = scan_points.max(1);
    let node = |i: usize| if i == n { hi } else { lo + (hi - lo) * i as f64 / n as f64 };
    let mut prev = h(lo);
    if prev == 0.0 {
        return Ok(lo);
    }
    let mut found = None;
    let mut changes = 0;
    for i in 1..=n {
        let v = h(node(i));
        if (v <= 0.0) != (prev <= 0.0) || v == 0.0 {
            changes += 1;
            if found.is_none() {
                found = Some((node(i - 1), node(i), prev, v));
            }
        }
        prev = v;
    }
    if changes > 1 {
        warn!("{changes} sign changes on [{lo:e}, {hi:e}]; using the first");
    }
    let (a, b, ha, hb) = found.ok_or(Error::NoCrossing { lo, hi })?;
    refine_root(h, a, b, ha, hb, tol)
}

/// Illinois regula falsi with bisection safeguard on a sign-changing bracket.
pub(crate) fn refine_root<F: FnMut(f64) -> f64>(
    mut h: F,
    mut a: f64,
    mut b: f64,
    mut ha: f64,
    mut hb: f64,
    tol: f64,
) -> Result<f64> {
    if hb == 0.0 {
        return Ok(b);
    }
    let mut side = 0i8;
    let mut width = b - a;
    for iter in 0..MAX_REFINE_ITERATIONS {
        if b - a <= tol {
            return Ok(0.5 * (a + b));
        }
        // every third step must have halved the bracket, else bisect
        let bisect = iter % 3 == 2 && (b - a) > 0.5 * width;
        if iter % 3 == 2 {
            width = b - a;
        }
        let mut c = if bisect { 0.5 * (a + b) } else { (a * hb - b * ha) / (hb - ha) };
        if !(c > a && c < b) {
            c = 0.5 * (a + b);
        }
        let hc = h(c);
        if hc == 0.0 {
            return Ok(c);
        }
        if (hc > 0.0) == (ha > 0.0) {
            a = c;
            ha = hc;
            if side == -1 {
                hb *= 0.5;
            }
            side = -1;
        } else {
            b = c;
            hb = hc;
            if side == 1 {
                ha *= 0.5;
            }
            side = 1;
        }
    }
    Err(Error::ToleranceFailure { width: b - a, tol })
}

/// `eta_n(lambda_j, s)` for `n < ETA_ORDERS`.
type EtaTable = [[Complex64; ETA_ORDERS]; 5];

fn eta_table(model: &Model, s: f64) -> EtaTable {
    std::array::from_fn(|j| std::array::from_fn(|n| eta(n, model.lambda()[j], s)))
}

/// Simulator bound to one model and option set.
#[derive(Debug, Clone)]
pub struct Simulator {
    model: Model,
    options: SimulationOptions,
    /// `eta` at the scan nodes `i T / scan_points`.
    scan_table: Vec<EtaTable>,
    /// Norm of `P_6(T)` per component: scale of the first neglected term.
    p6: StateVector,
}

impl Simulator {
    pub fn new(model: &Model, options: SimulationOptions) -> Result<Self> {
        if options.scan_points == 0 || !(options.crossing_tol > 0.0) {
            return Err(Error::InvalidParameter {
                field: "simulation",
                reason: "scan_points must be positive and crossing_tol > 0".into(),
            });
        }
        let t = model.params().period;
        let scan_table = (0..=options.scan_points)
            .map(|i| eta_table(model, t * i as f64 / options.scan_points as f64))
            .collect();
        Ok(Self {
            model: model.clone(),
            options,
            scan_table,
            p6: model.p_vec(MAX_DERIV + 1, t)?.abs(),
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn options(&self) -> &SimulationOptions {
        &self.options
    }

    fn segment(&self, input: &InputSignal, t_start: f64, offset: f64) -> Segment {
        let p = self.model.params();
        Segment {
            input_derivs: input.derivatives(t_start),
            drive_offset: offset,
            drive_slope: 2.0 * p.kf() / p.period,
        }
    }

    fn high_offset(&self) -> f64 {
        1.0 - self.model.params().kf()
    }

    fn low_offset(&self, a: f64) -> f64 {
        let k = self.model.params().kf();
        -1.0 - k + 2.0 * k * a
    }

    /// Modal state after `s` given tabulated `eta` values.
    fn advance(&self, z: &CVector5, etas: &EtaTable, seg: &Segment) -> CVector5 {
        let inv_lc = 1.0 / self.model.params().lc();
        let le1 = self.model.left_e1();
        let le5 = self.model.left_e5();
        CVector5::from_fn(|j, _| {
            let e = &etas[j];
            let mut forced = Complex64::new(0.0, 0.0);
            for (k, &du) in seg.input_derivs.iter().enumerate() {
                forced += e[k + 1] * du;
            }
            let drive = (e[1] * seg.drive_offset + e[2] * seg.drive_slope) * inv_lc;
            e[0] * z[j] + forced * le1[j] + drive * le5[j]
        })
    }

    /// `h = m - v` at local time `s` into a period whose segment started at
    /// local time `s0` with modal state `z`.
    fn h_at(&self, z: &CVector5, seg: &Segment, s0: f64, s: f64) -> f64 {
        let t = self.model.params().period;
        let zz = self.model.propagate_modal(z, s - s0, seg);
        self.model.modal_output(&zz) - (-1.0 + 2.0 * s / t)
    }

    /// Simulates `n_periods` carrier periods from `t0 = n0 T` with state `x0`.
    pub fn simulate(&self, input: &InputSignal, x0: &StateVector, n0: i64, n_periods: usize) -> Result<SimulationResult> {
        if n_periods == 0 {
            return Err(Error::OutOfRange {
                value: 0.0,
                range: "n_periods >= 1",
            });
        }
        let p = self.model.params();
        let t = p.period;
        let tol = self.options.crossing_tol * t;
        let scan = self.options.scan_points;
        let u5 = input.max_abs_derivative(MAX_DERIV);

        let mut z = self.model.to_modal(x0);
        let mut events = Vec::with_capacity(n_periods);
        let mut period_states = Vec::with_capacity(n_periods + 1);
        let mut edge_states = Vec::with_capacity(n_periods);
        let mut trajectory = Trajectory::default();
        let mut multiple = 0usize;
        let mut state_scale = x0.abs();
        period_states.push(*x0);

        for i in 0..n_periods {
            let n = n0 + i as i64;
            let t_n = n as f64 * t;
            let high = self.segment(input, t_n, self.high_offset());

            // scan the high segment on the tabulated grid
            let h_node = |idx: usize| -> f64 {
                let zz = self.advance(&z, &self.scan_table[idx], &high);
                self.model.modal_output(&zz) - (-1.0 + 2.0 * idx as f64 / scan as f64)
            };
            let h0 = h_node(0);
            let (duty, skipped, z_edge) = if h0 <= 0.0 {
                (0.0, true, z)
            } else {
                let mut bracket = None;
                let mut prev = h0;
                for idx in 1..=scan {
                    let v = h_node(idx);
                    if v <= 0.0 {
                        bracket = Some((idx, prev, v));
                        break;
                    }
                    prev = v;
                }
                match bracket {
                    None => (1.0, true, self.advance(&z, &self.scan_table[scan], &high)),
                    Some((idx, h_lo, h_hi)) => {
                        let lo = t * (idx - 1) as f64 / scan as f64;
                        let hi = t * idx as f64 / scan as f64;
                        let s = refine_root(|s| self.h_at(&z, &high, 0.0, s), lo, hi, h_lo, h_hi, tol)?;
                        let a = s / t;
                        (a, false, self.model.propagate_modal(&z, s, &high))
                    }
                }
            };

            let edge_time = t_n + duty * t;
            let low = self.segment(input, edge_time, self.low_offset(duty));
            let low_len = (1.0 - duty) * t;
            let z_end = if duty == 0.0 {
                self.advance(&z, &self.scan_table[scan], &low)
            } else {
                self.model.propagate_modal(&z_edge, low_len, &low)
            };

            if self.options.check_multiple_crossings && !skipped {
                let start = (duty * scan as f64).floor() as usize + 1;
                let rises = (start..=scan).any(|idx| {
                    let s = t * idx as f64 / scan as f64;
                    self.h_at(&z_edge, &low, duty * t, s) > 0.0
                });
                if rises {
                    multiple += 1;
                    warn!("period {n}: compensator re-crosses the carrier after the falling edge");
                }
            }

            if self.options.samples_per_period > 0 {
                let spp = self.options.samples_per_period;
                for k in 0..spp {
                    let s = t * k as f64 / spp as f64;
                    let zz = if s < duty * t {
                        self.model.propagate_modal(&z, s, &high)
                    } else {
                        self.model.propagate_modal(&z_edge, s - duty * t, &low)
                    };
                    let x = self.model.from_modal(&zz);
                    trajectory.times.push(t_n + s);
                    trajectory.compensator.push(self.model.gamma().dot(&x));
                    trajectory.states.push(x);
                }
            }

            let x_edge = self.model.from_modal(&z_edge);
            let x_end = self.model.from_modal(&z_end);
            state_scale = state_scale.sup(&x_edge.abs()).sup(&x_end.abs());
            events.push(PulseEvent {
                n,
                edge: edge_time,
                duty,
                skipped,
            });
            edge_states.push(x_edge);
            period_states.push(x_end);
            z = z_end;
        }

        // |u^(5)| P_6(T) against the largest state seen, componentwise
        let truncation_estimate = (0..5)
            .filter(|&i| state_scale[i] > 0.0)
            .map(|i| u5 * self.p6[i] / state_scale[i])
            .fold(0.0, f64::max);
        if truncation_estimate > TRUNCATION_WARN {
            warn!("input series truncation: neglected term ~{truncation_estimate:.2e} of the state");
        }

        Ok(SimulationResult {
            train: PulseTrain {
                period: t,
                events,
                t_start: n0 as f64 * t,
                t_end: (n0 + n_periods as i64) as f64 * t,
            },
            trajectory,
            period_states,
            edge_states,
            multiple_crossings: multiple,
            truncation_estimate,
        })
    }
}

/// Default initial condition: the periodic orbit for the constant input
/// `u(t0)`, at the start of a carrier period.
pub fn steady_start(model: &Model, input: &InputSignal, t0: f64) -> Result<StateVector> {
    let ss = solve_steady_state(model, input.value(t0))?;
    Ok(state_at_period_start(model, &ss))
}

/// Simulates from the default initial condition at `t0 = n0 T`.
pub fn simulate(
    model: &Model,
    input: &InputSignal,
    n0: i64,
    n_periods: usize,
    options: SimulationOptions,
) -> Result<SimulationResult> {
    let x0 = steady_start(model, input, n0 as f64 * model.params().period)?;
    Simulator::new(model, options)?.simulate(input, &x0, n0, n_periods)
}

/// One step of the edge-to-edge map: from `x(A_n)` and `a_n` to
/// `x(A_{n+1})` and `a_{n+1}`, solving
/// `gamma . [e^{Nd} x(A_n) + I_u + I_gv / LC] = -1 + 2 a_{n+1}`,
/// `d = (1 + a_{n+1} - a_n) T`, with the input expanded about `A_n`.
pub fn discrete_map_step(
    model: &Model,
    input: &InputSignal,
    n: i64,
    x_at_edge: &StateVector,
    a_n: f64,
) -> Result<(StateVector, f64)> {
    let p = model.params();
    let t = p.period;
    let k = p.kf();
    let edge = (n as f64 + a_n) * t;
    let derivs = input.derivatives(edge);
    let gamma = p.gamma();

    let state = |a_next: f64| -> Result<StateVector> {
        let d = (1.0 + a_next - a_n) * t;
        let mut x = model.matrix_exp(d)? * x_at_edge;
        for (j, du) in derivs.iter().enumerate() {
            x += model.p_vec(j + 1, d)? * *du;
        }
        let drive = model.q_vec(1, a_next * t) * (2.0 * (1.0 - k))
            + model.q_vec(1, d) * (-1.0 - k + 2.0 * k * a_n)
            + model.q_vec(2, d) * (2.0 * k / t);
        Ok(x + drive / p.lc())
    };
    let residual = |a_next: f64| state(a_next).map(|x| gamma.dot(&x) - (-1.0 + 2.0 * a_next));

    let scan = 64;
    let mut prev_a = 0.0;
    let mut prev = residual(0.0)?;
    if prev <= 0.0 {
        return Err(Error::NoRoot);
    }
    for i in 1..=scan {
        let a = i as f64 / scan as f64;
        let v = residual(a)?;
        if v <= 0.0 {
            let mut failure = None;
            let root = refine_root(
                |a| match residual(a) {
                    Ok(v) => v,
                    Err(e) => {
                        failure = Some(e);
                        0.0
                    }
                },
                prev_a,
                a,
                prev,
                v,
                1e-13,
            )?;
            if let Some(e) = failure {
                return Err(e);
            }
            if root >= 1.0 {
                return Err(Error::NoRoot);
            }
            return Ok((state(root)?, root));
        }
        prev_a = a;
        prev = v;
    }
    Err(Error::NoRoot)
}

/// Relative size `|u^(5)| T^5 / 5!` of the first neglected input term
/// against the input scale; a cheap a-priori check.
pub fn input_truncation_ratio(input: &InputSignal, period: f64) -> f64 {
    input.max_abs_derivative(MAX_DERIV) * period.powi(MAX_DERIV as i32) / factorial(MAX_DERIV) / input.max_abs().max(1e-300)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AmplifierParams;
    use crate::stability::monodromy;
    use crate::steady::solve_steady_state;

    fn model(k: u8) -> Model {
        Model::new(AmplifierParams::reference(k)).unwrap()
    }

    fn quiet() -> SimulationOptions {
        SimulationOptions {
            samples_per_period: 0,
            ..Default::default()
        }
    }

    #[test]
    fn crossing_of_a_line() {
        let t = 2.6e-6;
        let r = find_crossing(|s| s - 0.5 * t, 0.0, t, 64, 1e-12 * t).unwrap();
        assert!((r - 0.5 * t).abs() <= 1e-12 * t);
        let r = find_crossing(|s| (0.3 * t - s).powi(3), 0.0, t, 64, 1e-12 * t).unwrap();
        assert!((r - 0.3 * t).abs() <= 1e-12 * t);
        assert!(matches!(
            find_crossing(|_| 1.0, 0.0, t, 64, 1e-12),
            Err(Error::NoCrossing { .. })
        ));
    }

    #[test]
    fn crossing_at_steady_switch() {
        let m = model(0);
        let ss = solve_steady_state(&m, 0.6).unwrap();
        let x0 = state_at_period_start(&m, &ss);
        let t = m.params().period;
        let seg = Segment {
            input_derivs: [0.6, 0.0, 0.0, 0.0, 0.0],
            drive_offset: 1.0,
            drive_slope: 0.0,
        };
        let h = |s: f64| m.params().gamma().dot(&m.propagate(&x0, s, &seg)) - (-1.0 + 2.0 * s / t);
        let r = find_crossing(h, 0.0, t, 64, 1e-13 * t).unwrap();
        assert!((r - 0.8 * t).abs() < 1e-10 * t, "{}", r / t);
    }

    #[test]
    fn steady_state_is_a_fixed_point() {
        for k in 0..2 {
            let m = model(k);
            for u0 in [-0.8, 0.0, 0.37, 0.9] {
                let input = InputSignal::Constant { value: u0 };
                let r = simulate(&m, &input, 0, 5, quiet()).unwrap();
                for e in &r.train.events {
                    assert!((e.duty - 0.5 * (1.0 + u0)).abs() < 1e-7, "k={k} u0={u0} a={}", e.duty);
                    assert!(!e.skipped);
                }
            }
        }
    }

    #[test]
    fn refinement_converges() {
        let m = model(0);
        let input = InputSignal::sine(0.8, 1000.0);
        let coarse = simulate(&m, &input, 0, 40, quiet()).unwrap();
        let opts = SimulationOptions {
            crossing_tol: 0.5e-12,
            ..quiet()
        };
        let fine = simulate(&m, &input, 0, 40, opts).unwrap();
        let t = m.params().period;
        for (a, b) in coarse.train.events.iter().zip(&fine.train.events) {
            assert!((a.edge - b.edge).abs() < 1e-12 * t);
        }
    }

    #[test]
    fn discrete_map_fixed_point() {
        let m = model(1);
        let ss = solve_steady_state(&m, 0.2).unwrap();
        let input = InputSignal::Constant { value: 0.2 };
        let (x, a) = discrete_map_step(&m, &input, 3, &ss.x_at_switch, ss.a).unwrap();
        assert!((a - ss.a).abs() < 1e-9);
        for i in 0..5 {
            assert!((x[i] - ss.x_at_switch[i]).abs() < 1e-7 * ss.x_at_switch.abs().max());
        }
    }

    #[test]
    fn discrete_map_tracks_simulation() {
        let m = model(0);
        let input = InputSignal::sine(0.8, 1000.0);
        let r = simulate(&m, &input, 0, 101, quiet()).unwrap();
        let t = m.params().period;
        let mut x = r.edge_states[0];
        let mut a = r.train.events[0].duty;
        for n in 1..101 {
            let (xn, an) = discrete_map_step(&m, &input, n as i64 - 1, &x, a).unwrap();
            let e = &r.train.events[n];
            assert!(((n as f64 + an) * t - e.edge).abs() < 1e-9 * t, "n={n}");
            x = xn;
            a = an;
        }
    }

    #[test]
    fn rc_keeps_the_operating_point() {
        let input = InputSignal::Constant { value: -0.35 };
        let a = simulate(&model(0), &input, 0, 3, quiet()).unwrap();
        let b = simulate(&model(1), &input, 0, 3, quiet()).unwrap();
        for (x, y) in a.train.events.iter().zip(&b.train.events) {
            assert!((x.duty - y.duty).abs() < 1e-9);
        }
    }

    #[test]
    fn transient_decays_at_spectral_radius() {
        let m = model(0);
        let ss = solve_steady_state(&m, 0.1).unwrap();
        let mut x0 = state_at_period_start(&m, &ss);
        x0[1] *= 1.001;
        let input = InputSignal::Constant { value: 0.1 };
        let r = Simulator::new(&m, quiet()).unwrap().simulate(&input, &x0, 0, 60).unwrap();
        let dev: Vec<f64> = r.train.events.iter().map(|e| (e.duty - ss.a).abs()).collect();
        let env = |lo: usize| dev[lo..lo + 10].iter().cloned().fold(0.0, f64::max);
        let ratio = (env(40) / env(10)).powf(1.0 / 30.0);
        let rho = monodromy(&m, 0.1).unwrap().spectral_radius;
        assert!((ratio - rho).abs() < 0.2 * rho, "ratio {ratio} vs {rho}");
    }

    #[test]
    fn trajectory_sampling() {
        let m = model(1);
        let input = InputSignal::Constant { value: 0.0 };
        let r = simulate(&m, &input, 2, 2, SimulationOptions::default()).unwrap();
        assert_eq!(r.trajectory.times.len(), 64);
        assert_eq!(r.period_states.len(), 3);
        assert_eq!(r.train.output(r.train.t_start + 0.1 * m.params().period), Some(1.0));
        assert_eq!(r.train.output(r.train.t_start + 0.9 * m.params().period), Some(-1.0));
        assert!(r.truncation_estimate == 0.0);
    }

    #[test]
    fn unstable_loop_skips_pulses() {
        let m = Model::new(AmplifierParams::reference(0).with_c1(2.5e5)).unwrap();
        let input = InputSignal::sine(0.8, 1000.0);
        let r = simulate(&m, &input, 0, 384 * 4, quiet()).unwrap();
        assert!(r.train.skip_count() > 0);
        for e in r.train.events.iter().filter(|e| e.skipped) {
            assert!(e.duty == 0.0 || e.duty == 1.0);
        }
    }

    #[test]
    fn saturated_map_has_no_root() {
        let m = model(0);
        let ss = solve_steady_state(&m, 0.0).unwrap();
        let mut x = ss.x_at_switch;
        // push the compensator far above the carrier
        x[0] += 50.0 / m.params().c1;
        let input = InputSignal::Constant { value: 0.0 };
        assert!(matches!(discrete_map_step(&m, &input, 0, &x, 0.5), Err(Error::NoRoot)));
    }
}
