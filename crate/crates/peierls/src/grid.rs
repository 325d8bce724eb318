//! Momentum torus, its dual position lattice, state containers and transforms.

use crate::error::{Error, Result};
use crate::linalg::{norm, normalize, C64};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{Fft, FftPlanner};
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

/// Wraps an angle into [-pi, pi).
pub fn wrap_angle(p: f64) -> f64 {
    let t = (p + PI).rem_euclid(2.0 * PI);
    t - PI
}

/// Wraps a macroscopic position into [-L/2, L/2).
pub fn wrap_position(x: f64, l: f64) -> f64 {
    (x + 0.5 * l).rem_euclid(l) - 0.5 * l
}

/// Discretized momentum torus [-pi, pi) with N nodes and dual lattice n in [-N/2, N/2).
#[derive(Clone)]
pub struct GridSpec {
    l: f64,
    eps: f64,
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GridSpec")
            .field("l", &self.l)
            .field("eps", &self.eps)
            .field("n", &self.n)
            .finish()
    }
}

impl GridSpec {
    /// N = round(L/eps); eps is then snapped to L/N so the potential stencil is exact.
    pub fn new(l: f64, eps: f64) -> Result<Self> {
        if !(l > 0.0) || !l.is_finite() {
            return Err(Error::InvalidGrid(format!("L = {l} must be positive")));
        }
        if !(eps > 0.0) || eps > 1.0 {
            return Err(Error::InvalidGrid(format!("eps = {eps} must lie in (0, 1]")));
        }
        let ratio = l / eps;
        let n = ratio.round();
        if (n * eps - l).abs() > 0.5 * eps + 1e-12 || (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::InvalidGrid(format!(
                "L/eps = {ratio} is not an integer grid size"
            )));
        }
        let n = n as usize;
        if n % 2 != 0 {
            return Err(Error::InvalidGrid(format!("N = {n} must be even")));
        }
        if n < 8 {
            return Err(Error::InvalidGrid(format!("N = {n} must be at least 8")));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            l,
            eps: l / n as f64,
            n,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        })
    }

    pub fn l(&self) -> f64 {
        self.l
    }
    pub fn eps(&self) -> f64 {
        self.eps
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn dp(&self) -> f64 {
        2.0 * PI / self.n as f64
    }
    /// Momentum node p_j = -pi + j dp.
    pub fn p(&self, j: usize) -> f64 {
        -PI + j as f64 * self.dp()
    }
    pub fn p_nodes(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.p(j)).collect()
    }
    /// Microscopic lattice coordinate of storage index m.
    pub fn lattice(&self, m: usize) -> i64 {
        m as i64 - (self.n / 2) as i64
    }
    /// Macroscopic position X = eps n of storage index m.
    pub fn x_macro(&self, m: usize) -> f64 {
        self.eps * self.lattice(m) as f64
    }
    pub fn x_nodes(&self) -> Vec<f64> {
        (0..self.n).map(|m| self.x_macro(m)).collect()
    }
    /// Index of the node nearest to p on the torus.
    pub fn nearest_node(&self, p: f64) -> usize {
        let t = (wrap_angle(p) + PI) / self.dp();
        (t.round() as usize) % self.n
    }

    /// Momentum amplitudes to position amplitudes: phi_x(n) = N^-1/2 sum_j e^{i p_j n} phi_j.
    pub fn momentum_to_position(&self, v: &[C64]) -> Vec<C64> {
        let n = self.n;
        let mut buf: Vec<C64> = v
            .iter()
            .enumerate()
            .map(|(j, z)| if j % 2 == 0 { *z } else { -*z })
            .collect();
        self.inv.process(&mut buf);
        let s = 1.0 / (n as f64).sqrt();
        for (m, z) in buf.iter_mut().enumerate() {
            let sign = if self.lattice(m).rem_euclid(2) == 0 { s } else { -s };
            *z *= sign;
        }
        buf
    }

    /// Inverse of [`momentum_to_position`](Self::momentum_to_position).
    pub fn position_to_momentum(&self, v: &[C64]) -> Vec<C64> {
        let n = self.n;
        let mut buf: Vec<C64> = v
            .iter()
            .enumerate()
            .map(|(m, z)| {
                if self.lattice(m).rem_euclid(2) == 0 {
                    *z
                } else {
                    -*z
                }
            })
            .collect();
        self.fwd.process(&mut buf);
        let s = 1.0 / (n as f64).sqrt();
        for (j, z) in buf.iter_mut().enumerate() {
            *z *= if j % 2 == 0 { s } else { -s };
        }
        buf
    }

    /// Band-limited value of a momentum function between nodes:
    /// phi(p) = N^-1/2 sum_n e^{-i p n} phi_x(n).
    pub fn interpolate_momentum(&self, phi_x: &[C64], p: f64) -> C64 {
        let s = 1.0 / (self.n as f64).sqrt();
        phi_x
            .iter()
            .enumerate()
            .map(|(m, z)| z * C64::from_polar(s, -p * self.lattice(m) as f64))
            .sum()
    }
}

/// Storage representation of a state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rep {
    Momentum,
    Position,
}

impl Rep {
    pub fn name(self) -> &'static str {
        match self {
            Rep::Momentum => "momentum",
            Rep::Position => "position",
        }
    }
}

/// Scalar wave function on the torus.
#[derive(Clone, Debug)]
pub struct EffState {
    pub amp: Vec<C64>,
    pub rep: Rep,
}

impl EffState {
    pub fn momentum(amp: Vec<C64>) -> Self {
        Self {
            amp,
            rep: Rep::Momentum,
        }
    }
    pub fn norm(&self) -> f64 {
        norm(&self.amp)
    }
}

/// Wave function with values in C^F; amplitudes stored node-major, amp[j * f + a].
#[derive(Clone, Debug)]
pub struct FiberedState {
    pub amp: Vec<C64>,
    pub f: usize,
    pub rep: Rep,
}

impl FiberedState {
    pub fn momentum(amp: Vec<C64>, f: usize) -> Self {
        Self {
            amp,
            f,
            rep: Rep::Momentum,
        }
    }
    pub fn zeros(n: usize, f: usize) -> Self {
        Self::momentum(vec![C64::new(0.0, 0.0); n * f], f)
    }
    pub fn norm(&self) -> f64 {
        norm(&self.amp)
    }
    pub fn node(&self, j: usize) -> &[C64] {
        &self.amp[j * self.f..(j + 1) * self.f]
    }
    pub fn node_mut(&mut self, j: usize) -> &mut [C64] {
        &mut self.amp[j * self.f..(j + 1) * self.f]
    }
}

fn expect_rep(found: Rep, expected: Rep) -> Result<()> {
    if found == expected {
        Ok(())
    } else {
        Err(Error::WrongRepresentation {
            expected: expected.name(),
            found: found.name(),
        })
    }
}

pub fn to_position(grid: &GridSpec, s: &EffState) -> Result<EffState> {
    expect_rep(s.rep, Rep::Momentum)?;
    Ok(EffState {
        amp: grid.momentum_to_position(&s.amp),
        rep: Rep::Position,
    })
}

pub fn to_momentum(grid: &GridSpec, s: &EffState) -> Result<EffState> {
    expect_rep(s.rep, Rep::Position)?;
    Ok(EffState {
        amp: grid.position_to_momentum(&s.amp),
        rep: Rep::Momentum,
    })
}

fn map_components(
    grid: &GridSpec,
    s: &FiberedState,
    f: impl Fn(&GridSpec, &[C64]) -> Vec<C64>,
) -> Vec<C64> {
    let n = grid.n();
    let mut out = vec![C64::new(0.0, 0.0); n * s.f];
    let mut col = vec![C64::new(0.0, 0.0); n];
    for a in 0..s.f {
        for j in 0..n {
            col[j] = s.amp[j * s.f + a];
        }
        let t = f(grid, &col);
        for j in 0..n {
            out[j * s.f + a] = t[j];
        }
    }
    out
}

pub fn fibered_to_position(grid: &GridSpec, s: &FiberedState) -> Result<FiberedState> {
    expect_rep(s.rep, Rep::Momentum)?;
    Ok(FiberedState {
        amp: map_components(grid, s, |g, c| g.momentum_to_position(c)),
        f: s.f,
        rep: Rep::Position,
    })
}

pub fn fibered_to_momentum(grid: &GridSpec, s: &FiberedState) -> Result<FiberedState> {
    expect_rep(s.rep, Rep::Position)?;
    Ok(FiberedState {
        amp: map_components(grid, s, |g, c| g.position_to_momentum(c)),
        f: s.f,
        rep: Rep::Momentum,
    })
}

/// Arc of the momentum torus, center +- half_width.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentumWindow {
    pub center: f64,
    pub half_width: f64,
}

impl MomentumWindow {
    /// Arcs must stay shorter than half the torus.
    pub fn new(center: f64, half_width: f64) -> Result<Self> {
        if !(half_width >= 0.0) || half_width >= 0.5 * PI {
            return Err(Error::Window(format!(
                "half-width {half_width} must lie in [0, pi/2)"
            )));
        }
        Ok(Self {
            center: wrap_angle(center),
            half_width,
        })
    }

    pub fn contains(&self, p: f64) -> bool {
        wrap_angle(p - self.center).abs() <= self.half_width + 1e-12
    }

    /// Signed distance from p to the arc boundary, positive inside.
    pub fn depth(&self, p: f64) -> f64 {
        self.half_width - wrap_angle(p - self.center).abs()
    }

    pub fn enlarge(&self, delta: f64) -> Result<Self> {
        Self::new(self.center, self.half_width + delta)
    }

    /// Whether this arc, enlarged by margin, fits inside other.
    pub fn fits_inside(&self, other: &MomentumWindow, margin: f64) -> bool {
        wrap_angle(self.center - other.center).abs() + self.half_width + margin
            <= other.half_width + 1e-12
    }

    pub fn nodes(&self, grid: &GridSpec) -> Vec<usize> {
        (0..grid.n()).filter(|&j| self.contains(grid.p(j))).collect()
    }

    pub fn mask(&self, grid: &GridSpec) -> Vec<bool> {
        (0..grid.n()).map(|j| self.contains(grid.p(j))).collect()
    }
}

/// Seeded generator for probe k of a seed family; prefixes of a family are stable.
pub fn probe_rng(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

pub fn complex_gaussian(rng: &mut ChaCha8Rng) -> C64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re, im)
}

/// Unit-norm complex-Gaussian state in momentum representation, optionally cut to a window.
pub fn random_state(
    grid: &GridSpec,
    seed: u64,
    window: Option<&MomentumWindow>,
) -> Result<EffState> {
    random_probe(grid, seed, 0, window)
}

/// Probe k of the seed family.
pub fn random_probe(
    grid: &GridSpec,
    seed: u64,
    k: u64,
    window: Option<&MomentumWindow>,
) -> Result<EffState> {
    let mut rng = probe_rng(seed, k);
    let mut amp: Vec<C64> = (0..grid.n())
        .map(|j| {
            let z = complex_gaussian(&mut rng);
            match window {
                Some(w) if !w.contains(grid.p(j)) => C64::new(0.0, 0.0),
                _ => z,
            }
        })
        .collect();
    if normalize(&mut amp) == 0.0 {
        return Err(Error::EmptyWindow);
    }
    Ok(EffState::momentum(amp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sub;
    use proptest::prelude::*;

    #[test]
    fn grid_sizes() {
        assert_eq!(GridSpec::new(8.0, 1.0 / 16.0).unwrap().n(), 128);
        assert_eq!(GridSpec::new(8.0, 1.0 / 64.0).unwrap().n(), 512);
        assert!(GridSpec::new(8.0, 3.0 / 16.0).is_err());
        assert!(GridSpec::new(8.0, 1.5).is_err());
        assert!(GridSpec::new(4.0, 1.0).is_err());
        assert!(GridSpec::new(7.0, 1.0 / 8.0).is_ok());
        assert!(GridSpec::new(7.0, 1.0).is_err());
    }

    #[test]
    fn shift_by_wavenumber_is_whole_nodes() {
        for &e in &[1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0] {
            let g = GridSpec::new(8.0, e).unwrap();
            for m in 1..5 {
                let shift = g.eps() * 2.0 * PI / g.l() * m as f64;
                let rel = (shift - m as f64 * g.dp()).abs() / shift;
                assert!(rel <= 1e-15, "rel {rel}");
            }
        }
    }

    #[test]
    fn delta_transforms_to_flat_plane_wave() {
        let g = GridSpec::new(8.0, 0.25).unwrap();
        let mut amp = vec![C64::new(0.0, 0.0); g.n()];
        amp[5] = C64::new(1.0, 0.0);
        let x = to_position(&g, &EffState::momentum(amp)).unwrap();
        let c = 1.0 / (g.n() as f64).sqrt();
        for (m, z) in x.amp.iter().enumerate() {
            assert!((z.norm() - c).abs() < 1e-14);
            let expect = C64::from_polar(c, g.p(5) * g.lattice(m) as f64);
            assert!((z - expect).norm() < 1e-13);
        }
    }

    #[test]
    fn constant_transforms_to_origin_delta() {
        let g = GridSpec::new(8.0, 0.25).unwrap();
        let c = 1.0 / (g.n() as f64).sqrt();
        let x = to_position(&g, &EffState::momentum(vec![C64::new(c, 0.0); g.n()])).unwrap();
        for (m, z) in x.amp.iter().enumerate() {
            // e^{i p_j n} summed over j vanishes unless n = 0
            let expect = if g.lattice(m) == 0 { 1.0 } else { 0.0 };
            assert!((z - C64::new(expect, 0.0)).norm() < 1e-13, "m={m} z={z}");
        }
    }

    #[test]
    fn wrong_representation_rejected() {
        let g = GridSpec::new(8.0, 0.25).unwrap();
        let s = random_state(&g, 1, None).unwrap();
        assert!(to_momentum(&g, &s).is_err());
    }

    #[test]
    fn transform_unitarity_on_many_states() {
        let g = GridSpec::new(8.0, 1.0 / 16.0).unwrap();
        for k in 0..100 {
            let s = random_probe(&g, 7, k, None).unwrap();
            let x = to_position(&g, &s).unwrap();
            assert!((x.norm() - s.norm()).abs() <= 1e-12);
            let back = to_momentum(&g, &x).unwrap();
            assert!(norm(&sub(&back.amp, &s.amp)) <= 1e-12);
        }
    }

    #[test]
    fn random_state_respects_window_and_seed() {
        let g = GridSpec::new(8.0, 1.0 / 16.0).unwrap();
        let w = MomentumWindow::new(0.3, 0.4).unwrap();
        let a = random_state(&g, 1, Some(&w)).unwrap();
        let b = random_state(&g, 1, Some(&w)).unwrap();
        assert_eq!(a.amp, b.amp);
        assert!((a.norm() - 1.0).abs() < 1e-14);
        for j in 0..g.n() {
            if a.amp[j].norm() > 0.0 {
                assert!(w.contains(g.p(j)));
            }
        }
        let tiny = MomentumWindow::new(0.01, 0.001).unwrap();
        assert!(matches!(
            random_state(&g, 1, Some(&tiny)),
            Err(Error::EmptyWindow)
        ));
    }

    #[test]
    fn interpolation_reproduces_nodes() {
        let g = GridSpec::new(8.0, 1.0 / 8.0).unwrap();
        let s = random_state(&g, 3, None).unwrap();
        let x = g.momentum_to_position(&s.amp);
        for j in [0, 7, 33, 63] {
            assert!((g.interpolate_momentum(&x, g.p(j)) - s.amp[j]).norm() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn enlargement_is_monotone(c in -3.0f64..3.0, hw in 0.05f64..0.6, d1 in 0.0f64..0.3, d2 in 0.0f64..0.3) {
            let g = GridSpec::new(8.0, 1.0 / 16.0).unwrap();
            let (lo, hi) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
            let w = MomentumWindow::new(c, hw).unwrap();
            let a = w.enlarge(lo).unwrap();
            let b = w.enlarge(hi).unwrap();
            for j in 0..g.n() {
                let p = g.p(j);
                prop_assert!(!w.contains(p) || a.contains(p));
                prop_assert!(!a.contains(p) || b.contains(p));
            }
        }

        #[test]
        fn round_trip_is_identity(seed in 0u64..1000) {
            let g = GridSpec::new(8.0, 1.0 / 8.0).unwrap();
            let s = random_state(&g, seed, None).unwrap();
            let back = to_momentum(&g, &to_position(&g, &s).unwrap()).unwrap();
            prop_assert!(norm(&sub(&back.amp, &s.amp)) <= 1e-12);
        }
    }
}
