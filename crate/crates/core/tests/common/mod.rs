//! Helpers shared by the integration test targets.

use classd::model::{Matrix5, StateVector};
use classd::{InputSignal, Model};

/// Classical RK4 for `x' = N x + u(t) e1 + (g + k v(t))/LC e5` on `[t0, t1]`
/// with `g` fixed.
pub fn rk4(model: &Model, input: &InputSignal, x: StateVector, t0: f64, t1: f64, g: f64, n0: f64, steps: usize) -> StateVector {
    let p = model.params();
    let n: Matrix5 = *model.system_matrix();
    let t = p.period;
    let k = p.kf();
    let lc = p.lc();
    let f = |s: f64, x: &StateVector| {
        let mut dx = n * x;
        dx[0] += input.value(s);
        let v = -1.0 + 2.0 * (s - n0 * t) / t;
        dx[4] += (g + k * v) / lc;
        dx
    };
    let h = (t1 - t0) / steps as f64;
    let mut x = x;
    for i in 0..steps {
        let s = t0 + i as f64 * h;
        let k1 = f(s, &x);
        let k2 = f(s + 0.5 * h, &(x + k1 * (0.5 * h)));
        let k3 = f(s + 0.5 * h, &(x + k2 * (0.5 * h)));
        let k4 = f(s + h, &(x + k3 * h));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    x
}
