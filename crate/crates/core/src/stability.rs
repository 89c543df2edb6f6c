//! Linear stability of the periodic operating point.
//!
//! A disturbance carried over one carrier period is mapped by the monodromy
//! matrix `M = e^{N(1-a)T} (I + (T kappa / LC) e5 gamma^T) e^{N a T}`. Its
//! eigenvalues (Floquet multipliers) decide stability. They are computed from
//! the dense matrix and, independently, checked against the scalar
//! Sylvester-determinant form of the characteristic equation.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{AmplifierParams, Matrix5, Model};
use crate::steady::{solve_steady_state, SteadyState};

/// Default bisection tolerance for a threshold in `c1` (1/s).
pub const DEFAULT_THRESHOLD_TOL: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub u0: f64,
    pub kappa: f64,
    pub monodromy: Matrix5,
    /// Sorted by descending magnitude.
    pub eigenvalues: Vec<Complex64>,
    pub spectral_radius: f64,
    pub stable: bool,
}

/// Transversality factor `kappa = 1 / (1 - T slope / 2)`.
pub fn compute_kappa(params: &AmplifierParams, ss: &SteadyState) -> Result<f64> {
    kappa_from_slope(params.period, ss.slope)
}

pub(crate) fn kappa_from_slope(period: f64, slope: f64) -> Result<f64> {
    let d = 1.0 - 0.5 * period * slope;
    if d.abs() < 1e-10 {
        return Err(Error::TransversalityViolation(d));
    }
    Ok(1.0 / d)
}

/// The rank-one switching update `I + (T kappa / LC) e5 gamma^T`.
pub(crate) fn switching_update(params: &AmplifierParams, kappa: f64) -> Matrix5 {
    let mut m = Matrix5::identity();
    let scale = params.period * kappa / params.lc();
    let gamma = params.gamma();
    for j in 0..5 {
        m[(4, j)] += scale * gamma[j];
    }
    m
}

/// Monodromy matrix for an explicit duty cycle and `kappa`.
pub fn monodromy_matrix(model: &Model, a: f64, kappa: f64) -> Result<Matrix5> {
    let p = model.params();
    let t = p.period;
    Ok(model.matrix_exp((1.0 - a) * t)? * switching_update(p, kappa) * model.matrix_exp(a * t)?)
}

pub fn monodromy(model: &Model, u0: f64) -> Result<StabilityReport> {
    let ss = solve_steady_state(model, u0)?;
    let kappa = compute_kappa(model.params(), &ss)?;
    let m = monodromy_matrix(model, ss.a, kappa)?;
    let eigenvalues = eigenvalues_sorted(&m);
    let spectral_radius = eigenvalues[0].norm();
    Ok(StabilityReport {
        u0,
        kappa,
        monodromy: m,
        eigenvalues,
        spectral_radius,
        stable: spectral_radius < 1.0,
    })
}

/// Eigenvalues of a real 5x5 matrix, sorted by descending magnitude.
///
/// The matrix is diagonally balanced first; entries of `M` range over many
/// orders of magnitude because the state mixes V s^3 and V/s components.
pub fn eigenvalues_sorted(m: &Matrix5) -> Vec<Complex64> {
    let (balanced, _) = balance(m);
    let mut ev: Vec<Complex64> = balanced.complex_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.norm().total_cmp(&a.norm()).then(b.im.total_cmp(&a.im)));
    ev
}

/// Parlett-Reinsch balancing with radix-2 scaling: returns `D^-1 A D` and
/// the diagonal of `D`.
pub(crate) fn balance(a: &Matrix5) -> (Matrix5, [f64; 5]) {
    let mut b = *a;
    let mut d = [1.0; 5];
    loop {
        let mut converged = true;
        for i in 0..5 {
            let c: f64 = (0..5).filter(|&j| j != i).map(|j| b[(j, i)].abs()).sum();
            let r: f64 = (0..5).filter(|&j| j != i).map(|j| b[(i, j)].abs()).sum();
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let mut f = 1.0;
            let s = c + r;
            let (mut c2, mut r2) = (c, r);
            while c2 < r2 / 2.0 {
                c2 *= 4.0;
                r2 /= 4.0;
                f *= 2.0;
            }
            while c2 >= r2 * 2.0 {
                c2 /= 4.0;
                r2 *= 4.0;
                f /= 2.0;
            }
            if (c2 + r2) / f < 0.95 * s {
                converged = false;
                d[i] *= f;
                for j in 0..5 {
                    b[(i, j)] /= f;
                    b[(j, i)] *= f;
                }
            }
        }
        if converged {
            return (b, d);
        }
    }
}

/// Scalar form of `det(M - mu I) = 0`:
/// `1 + (T kappa / LC) gamma^T R diag(e^{l_j T} / (e^{l_j T} - mu)) R^-1 e5`.
pub fn sylvester_residual(model: &Model, u0: f64, mu: Complex64) -> Result<Complex64> {
    let ss = solve_steady_state(model, u0)?;
    let kappa = compute_kappa(model.params(), &ss)?;
    sylvester_residual_with_kappa(model, kappa, mu)
}

pub fn sylvester_residual_with_kappa(model: &Model, kappa: f64, mu: Complex64) -> Result<Complex64> {
    let p = model.params();
    let t = p.period;
    let gr = model.gamma_right();
    let le5 = model.left_e5();
    let mut sum = Complex64::new(0.0, 0.0);
    for (j, lam) in model.lambda().iter().enumerate() {
        let e = (lam * t).exp();
        let gap = e - mu;
        if gap.norm() < 1e-12 {
            return Err(Error::Pole { mode: j });
        }
        sum += gr[j] * e / gap * le5[j];
    }
    Ok(1.0 + sum * (t * kappa / p.lc()))
}

/// Parameters that can be swept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SweepParam {
    C1,
    C2,
    C3,
    Omega1,
    R,
    L,
    C,
    Period,
}

impl SweepParam {
    pub fn apply(self, params: &AmplifierParams, value: f64) -> AmplifierParams {
        let mut p = *params;
        match self {
            SweepParam::C1 => p.c1 = value,
            SweepParam::C2 => p.c2 = value,
            SweepParam::C3 => p.c3 = value,
            SweepParam::Omega1 => p.omega1 = value,
            SweepParam::R => p.r = value,
            SweepParam::L => p.l = value,
            SweepParam::C => p.c = value,
            SweepParam::Period => p.period = value,
        }
        p
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepParam::C1 => "c1",
            SweepParam::C2 => "c2",
            SweepParam::C3 => "c3",
            SweepParam::Omega1 => "omega1",
            SweepParam::R => "r",
            SweepParam::L => "l",
            SweepParam::C => "c",
            SweepParam::Period => "period",
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "c1" => SweepParam::C1,
            "c2" => SweepParam::C2,
            "c3" => SweepParam::C3,
            "omega1" => SweepParam::Omega1,
            "r" => SweepParam::R,
            "l" => SweepParam::L,
            "c" => SweepParam::C,
            "period" | "t" => SweepParam::Period,
            _ => {
                return Err(Error::InvalidParameter {
                    field: "sweep.param",
                    reason: format!("unknown parameter `{s}`"),
                })
            }
        })
    }
}

/// Spectral radius of the monodromy matrix with one parameter replaced.
pub fn spectral_radius_at(params: &AmplifierParams, u0: f64, param: SweepParam, value: f64) -> Result<f64> {
    let model = Model::new(param.apply(params, value))?;
    Ok(monodromy(&model, u0)?.spectral_radius)
}

/// Bisects `spectral_radius - 1` in one parameter. The bracket must be
/// stable at `lo` and unstable at `hi` (either order of magnitudes).
pub fn stability_threshold(
    params: &AmplifierParams,
    u0: f64,
    param: SweepParam,
    lo: f64,
    hi: f64,
    tol: f64,
) -> Result<f64> {
    let margin = |v: f64| spectral_radius_at(params, u0, param, v).map(|r| r - 1.0);
    let (mut stable, mut unstable) = (lo, hi);
    let m_lo = margin(lo)?;
    let m_hi = margin(hi)?;
    if lo == hi || !(m_lo < 0.0 && m_hi >= 0.0) {
        return Err(Error::NoSignChange { lo, hi });
    }
    while (unstable - stable).abs() > tol {
        let mid = 0.5 * (stable + unstable);
        if margin(mid)? < 0.0 {
            stable = mid;
        } else {
            unstable = mid;
        }
    }
    Ok(0.5 * (stable + unstable))
}

/// Eigenvalues along a parameter path, with each step's eigenvalues
/// permuted to best continue the previous step's (minimum total distance).
pub fn eigenvalue_paths(
    params: &AmplifierParams,
    u0: f64,
    param: SweepParam,
    values: &[f64],
) -> Result<Vec<Vec<Complex64>>> {
    let mut paths: Vec<Vec<Complex64>> = Vec::with_capacity(values.len());
    for &v in values {
        let model = Model::new(param.apply(params, v))?;
        let ev = monodromy(&model, u0)?.eigenvalues;
        let next = match paths.last() {
            Some(prev) => match_nearest(prev, &ev),
            None => ev,
        };
        paths.push(next);
    }
    Ok(paths)
}

/// Reorders `next` to minimise the summed distance to `prev`.
pub fn match_nearest(prev: &[Complex64], next: &[Complex64]) -> Vec<Complex64> {
    let n = next.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_cost = f64::INFINITY;
    permute(&mut perm, 0, &mut |p| {
        let cost: f64 = p.iter().enumerate().map(|(i, &j)| (prev[i] - next[j]).norm()).sum();
        if cost < best_cost {
            best_cost = cost;
            best.copy_from_slice(p);
        }
    });
    best.iter().map(|&j| next[j]).collect()
}

fn permute(p: &mut Vec<usize>, k: usize, visit: &mut dyn FnMut(&[usize])) {
    if k == p.len() {
        visit(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, visit);
        p.swap(k, i);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn model(k: u8) -> Model {
        Model::new(AmplifierParams::reference(k)).unwrap()
    }

    #[test]
    fn kappa_basics() {
        let p = AmplifierParams::reference(0);
        assert_eq!(kappa_from_slope(p.period, 0.0).unwrap(), 1.0);
        let grazing = 2.0 / p.period;
        assert!(matches!(
            kappa_from_slope(p.period, grazing),
            Err(Error::TransversalityViolation(_))
        ));
        let m = model(1);
        let k1 = compute_kappa(m.params(), &solve_steady_state(&m, 0.2).unwrap()).unwrap();
        let k2 = compute_kappa(m.params(), &solve_steady_state(&m, -0.5).unwrap()).unwrap();
        assert_relative_eq!(k1, k2, max_relative = 1e-9);
    }

    #[test]
    fn reference_design_is_stable() {
        for k in 0..2 {
            let r = monodromy(&model(k), 0.0).unwrap();
            assert!(r.stable, "k={k}: radius {}", r.spectral_radius);
            assert!(r.eigenvalues.windows(2).all(|w| w[0].norm() >= w[1].norm()));
        }
    }

    #[test]
    fn large_c1_is_unstable() {
        let m = Model::new(AmplifierParams::reference(0).with_c1(4e5)).unwrap();
        assert!(monodromy(&m, 0.0).unwrap().spectral_radius > 1.0);
    }

    #[test]
    fn zero_kappa_gives_free_flow() {
        let m = model(0);
        let t = m.params().period;
        let mm = monodromy_matrix(&m, 0.5, 0.0).unwrap();
        let ev = eigenvalues_sorted(&mm);
        let expected: Vec<Complex64> = m.lambda().iter().map(|l| (l * t).exp()).collect();
        let ev = match_nearest(&expected, &ev);
        for (a, b) in ev.iter().zip(&expected) {
            assert!((a - b).norm() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn sylvester_residual_limits() {
        let m = model(0);
        let r = sylvester_residual_with_kappa(&m, 0.0, Complex64::new(0.3, 0.2)).unwrap();
        assert_eq!(r, Complex64::new(1.0, 0.0));
        let far = sylvester_residual(&m, 0.0, Complex64::new(1e9, 0.0)).unwrap();
        assert!((far - 1.0).norm() < 1e-6);
        assert!(matches!(
            sylvester_residual(&m, 0.0, Complex64::new(1.0, 0.0)),
            Err(Error::Pole { mode: 0 })
        ));
    }

    #[test]
    fn sylvester_vanishes_at_eigenvalues() {
        for k in 0..2 {
            let m = model(k);
            for u0 in [0.0, 0.45] {
                let r = monodromy(&m, u0).unwrap();
                for mu in &r.eigenvalues {
                    let res = sylvester_residual(&m, u0, *mu).unwrap();
                    assert!(res.norm() < 1e-6, "k={k} u0={u0} mu={mu}: {res}");
                }
            }
        }
    }

    #[test]
    fn sweep_param_names() {
        for p in [SweepParam::C1, SweepParam::Omega1, SweepParam::Period] {
            assert_eq!(p.name().parse::<SweepParam>().unwrap(), p);
        }
        assert!("bogus".parse::<SweepParam>().is_err());
    }

    #[test]
    fn degenerate_bracket() {
        let p = AmplifierParams::reference(0);
        assert!(matches!(
            stability_threshold(&p, 0.0, SweepParam::C1, 2e5, 2e5, 10.0),
            Err(Error::NoSignChange { .. })
        ));
        // both ends stable
        assert!(stability_threshold(&p, 0.0, SweepParam::C1, 1e5, 1.5e5, 10.0).is_err());
    }

    #[test]
    fn nearest_matching_restores_order() {
        let prev = vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0), Complex64::new(-1.0, 0.0)];
        let next = vec![Complex64::new(-0.9, 0.0), Complex64::new(1.1, 0.0), Complex64::new(0.0, 0.9)];
        let m = match_nearest(&prev, &next);
        assert_eq!(m, vec![next[1], next[2], next[0]]);
    }
}
