//! Classical flow of H_cl(X, p) = E(p) + V(X) on the phase-space torus.

use crate::error::{Error, Result};
use crate::grid::{wrap_angle, wrap_position, MomentumWindow};
use crate::potential::PotentialSpec;
use crate::weyl::PhaseSpaceSymbol;
use crate::linalg::C64;
use std::sync::Arc;

/// Dispersion p -> (E(p), E'(p)).
pub type Dispersion = Arc<dyn Fn(f64) -> (f64, f64) + Send + Sync>;

pub const DEFAULT_DT: f64 = 1e-3;
/// Step used for finite differences of the flow map.
pub const PULLBACK_H: f64 = 1e-4;

#[derive(Clone)]
pub struct ClassicalHamiltonian {
    pub e: Dispersion,
    pub v: PotentialSpec,
}

impl std::fmt::Debug for ClassicalHamiltonian {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ClassicalHamiltonian").field("v", &self.v).finish()
    }
}

/// E(p) = 1 - cos p.
pub fn cosine_dispersion() -> Dispersion {
    Arc::new(|p: f64| (1.0 - p.cos(), p.sin()))
}

pub fn zero_dispersion() -> Dispersion {
    Arc::new(|_| (0.0, 0.0))
}

impl ClassicalHamiltonian {
    pub fn new(e: Dispersion, v: PotentialSpec) -> Self {
        Self { e, v }
    }

    pub fn l(&self) -> f64 {
        self.v.l()
    }

    pub fn energy(&self, s: ClassicalState) -> f64 {
        (self.e)(s.p).0 + self.v.value(s.x)
    }

    /// Phase-space symbol H_cl.
    pub fn symbol(&self) -> PhaseSpaceSymbol {
        let h = self.clone();
        PhaseSpaceSymbol::new(
            Arc::new(move |x, p| C64::from((h.e)(p).0 + h.v.value(x))),
            None,
            0,
            true,
            "torus",
        )
    }
}

/// Phase-space point, X in [-L/2, L/2), p in [-pi, pi).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassicalState {
    pub x: f64,
    pub p: f64,
}

impl ClassicalState {
    pub fn new(x: f64, p: f64, l: f64) -> Self {
        Self {
            x: wrap_position(x, l),
            p: wrap_angle(p),
        }
    }
}

/// One position-Verlet step on the unwrapped coordinates.
#[inline]
fn verlet(h: &ClassicalHamiltonian, x: &mut f64, p: &mut f64, dt: f64) {
    *x += 0.5 * dt * (h.e)(*p).1;
    *p -= dt * h.v.derivative(*x);
    *x += 0.5 * dt * (h.e)(*p).1;
}

fn steps_for(t: f64, dt: f64) -> (usize, f64) {
    if t == 0.0 {
        return (0, 0.0);
    }
    let n = (t.abs() / dt).ceil().max(1.0) as usize;
    (n, t / n as f64)
}

/// Leapfrog flow by time t (negative t runs backwards) with step at most dt.
pub fn flow(h: &ClassicalHamiltonian, s: ClassicalState, t: f64, dt: f64) -> ClassicalState {
    let (n, step) = steps_for(t, dt);
    let (mut x, mut p) = (s.x, s.p);
    for _ in 0..n {
        verlet(h, &mut x, &mut p, step);
    }
    ClassicalState::new(x, p, h.l())
}

/// Samples (t, X, p, H_cl) every `every` steps, including the endpoints.
pub fn trajectory(
    h: &ClassicalHamiltonian,
    s: ClassicalState,
    t: f64,
    dt: f64,
    every: usize,
) -> Vec<(f64, ClassicalState, f64)> {
    let (n, step) = steps_for(t, dt);
    let (mut x, mut p) = (s.x, s.p);
    let mut out = vec![(0.0, s, h.energy(s))];
    for k in 1..=n {
        verlet(h, &mut x, &mut p, step);
        if k % every.max(1) == 0 || k == n {
            let c = ClassicalState::new(x, p, h.l());
            out.push((k as f64 * step, c, h.energy(c)));
        }
    }
    out
}

/// a o Phi^t; derivatives by centered differences of the composed map.
pub fn pullback(a: &PhaseSpaceSymbol, t: f64, h: &ClassicalHamiltonian, dt: f64) -> PhaseSpaceSymbol {
    let (a1, h1) = (a.clone(), h.clone());
    let ev = Arc::new(move |x: f64, p: f64| {
        let s = flow(&h1, ClassicalState { x, p }, t, dt);
        a1.eval(s.x, s.p)
    });
    let ev2 = ev.clone();
    let d = Arc::new(move |ax: usize, ap: usize, x: f64, p: f64| -> C64 {
        let hh = PULLBACK_H;
        let f = |x: f64, p: f64| ev2(x, p);
        match (ax, ap) {
            (1, 0) => (f(x + hh, p) - f(x - hh, p)) / (2.0 * hh),
            (0, 1) => (f(x, p + hh) - f(x, p - hh)) / (2.0 * hh),
            (2, 0) => (f(x + hh, p) - 2.0 * f(x, p) + f(x - hh, p)) / (hh * hh),
            (0, 2) => (f(x, p + hh) - 2.0 * f(x, p) + f(x, p - hh)) / (hh * hh),
            (1, 1) => {
                (f(x + hh, p + hh) - f(x + hh, p - hh) - f(x - hh, p + hh) + f(x - hh, p - hh))
                    / (4.0 * hh * hh)
            }
            _ => C64::new(f64::NAN, f64::NAN),
        }
    });
    PhaseSpaceSymbol::new(ev, Some(d), 2, a.real, "pullback")
}

/// Sampling parameters for the confinement time.
#[derive(Clone, Copy, Debug)]
pub struct MaxTimeSampling {
    pub n_x: usize,
    pub n_p: usize,
    pub dt: f64,
    pub horizon: f64,
    pub tol: f64,
}

impl Default for MaxTimeSampling {
    fn default() -> Self {
        Self {
            n_x: 64,
            n_p: 64,
            dt: 1e-2,
            horizon: 20.0,
            tol: 1e-3,
        }
    }
}

/// Largest t such that every trajectory from (any X) x li keeps its momentum delta-inside lm.
/// Returns f64::INFINITY when no trajectory exits before the horizon.
pub fn max_time(
    li: &MomentumWindow,
    lm: &MomentumWindow,
    delta: f64,
    h: &ClassicalHamiltonian,
    s: MaxTimeSampling,
) -> Result<f64> {
    if !li.fits_inside(lm, delta) {
        return Err(Error::Window(format!(
            "initial window {li:?} enlarged by delta = {delta} is not inside {lm:?}"
        )));
    }
    if s.n_x == 0 || s.n_p == 0 || !(s.dt > 0.0) {
        return Err(Error::Window("sampling resolutions must be positive".into()));
    }
    let l = h.l();
    let inside = |p: f64| lm.depth(p) >= delta;
    let mut best = f64::INFINITY;
    for a in 0..s.n_x {
        let x0 = -0.5 * l + l * a as f64 / s.n_x as f64;
        for b in 0..s.n_p {
            let frac = if s.n_p == 1 { 0.5 } else { b as f64 / (s.n_p - 1) as f64 };
            let p0 = li.center - li.half_width + 2.0 * li.half_width * frac;
            let (mut x, mut p) = (x0, p0);
            let mut t = 0.0;
            while t < s.horizon.min(best) {
                let (xs, ps) = (x, p);
                verlet(h, &mut x, &mut p, s.dt);
                if !inside(p) {
                    let (mut lo, mut hi) = (0.0, s.dt);
                    while hi - lo > s.tol {
                        let mid = 0.5 * (lo + hi);
                        let (mut xm, mut pm) = (xs, ps);
                        verlet(h, &mut xm, &mut pm, mid);
                        if inside(pm) {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    best = best.min(t + lo);
                    break;
                }
                t += s.dt;
            }
        }
    }
    Ok(if best >= s.horizon { f64::INFINITY } else { best })
}

/// Transports weighted samples by the flow; weights are unchanged.
pub fn push_density(
    samples: &[(ClassicalState, f64)],
    t: f64,
    h: &ClassicalHamiltonian,
    dt: f64,
) -> Vec<(ClassicalState, f64)> {
    samples.iter().map(|&(s, w)| (flow(h, s, t, dt), w)).collect()
}
