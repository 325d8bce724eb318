//! Finite Fourier potentials V(X) = sum_m Vhat_m e^{2 pi i m X / L} and their momentum stencils.

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::linalg::{C64, I};
use ndarray::Array2;
use std::f64::consts::PI;

#[derive(Clone, Debug, PartialEq)]
pub struct PotentialSpec {
    l: f64,
    coeffs: Vec<(i64, C64)>,
}

impl PotentialSpec {
    /// Coefficients for every m that appears; V real requires Vhat_{-m} = conj(Vhat_m).
    pub fn new(l: f64, coeffs: &[(i64, C64)]) -> Result<Self> {
        let mut c: Vec<(i64, C64)> = vec![];
        for &(m, z) in coeffs {
            match c.iter_mut().find(|t| t.0 == m) {
                Some(t) => t.1 += z,
                None => c.push((m, z)),
            }
        }
        c.retain(|t| t.1 != C64::new(0.0, 0.0));
        c.sort_by_key(|t| t.0);
        let get = |m: i64| c.iter().find(|t| t.0 == m).map(|t| t.1).unwrap_or_default();
        for &(m, z) in &c {
            if (z - get(-m).conj()).norm() > 1e-14 {
                return Err(Error::Hypothesis(format!(
                    "potential not real: Vhat_{m} = {z} but Vhat_{} = {}",
                    -m,
                    get(-m)
                )));
            }
        }
        Ok(Self { l, coeffs: c })
    }

    /// V(X) = sum amp cos(2 pi m X / L).
    pub fn cosines(l: f64, terms: &[(i64, f64)]) -> Self {
        let mut c = vec![];
        for &(m, a) in terms {
            if m == 0 {
                c.push((0, C64::from(a)));
            } else {
                c.push((m, C64::from(0.5 * a)));
                c.push((-m, C64::from(0.5 * a)));
            }
        }
        Self::new(l, &c).expect("cosine series is real")
    }

    pub fn zero(l: f64) -> Self {
        Self { l, coeffs: vec![] }
    }

    /// Reference potential 0.1 cos(2 pi X/L) + 0.05 cos(4 pi X/L).
    pub fn reference(l: f64) -> Self {
        Self::cosines(l, &[(1, 0.1), (2, 0.05)])
    }

    pub fn l(&self) -> f64 {
        self.l
    }
    pub fn coeffs(&self) -> &[(i64, C64)] {
        &self.coeffs
    }
    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }
    pub fn m_max(&self) -> usize {
        self.coeffs.iter().map(|t| t.0.unsigned_abs() as usize).max().unwrap_or(0)
    }

    pub fn value(&self, x: f64) -> f64 {
        let k = 2.0 * PI / self.l;
        self.coeffs
            .iter()
            .map(|&(m, c)| (c * C64::from_polar(1.0, k * m as f64 * x)).re)
            .sum()
    }

    /// V'(X).
    pub fn derivative(&self, x: f64) -> f64 {
        let k = 2.0 * PI / self.l;
        self.coeffs
            .iter()
            .map(|&(m, c)| (I * k * m as f64 * c * C64::from_polar(1.0, k * m as f64 * x)).re)
            .sum()
    }

    /// Sampled sup-norm of V.
    pub fn sup_norm(&self) -> f64 {
        (0..4096)
            .map(|i| self.value(self.l * i as f64 / 4096.0).abs())
            .fold(0.0, f64::max)
    }

    fn check(&self, grid: &GridSpec) -> Result<()> {
        let limit = grid.n() / 8;
        if self.m_max() > limit {
            return Err(Error::StencilTooWide {
                m: self.m_max(),
                limit,
            });
        }
        Ok(())
    }

    fn stencil(&self, grid: &GridSpec, phi: &[C64], f: usize, weight: impl Fn(i64, C64) -> C64) -> Result<Vec<C64>> {
        self.check(grid)?;
        let n = grid.n() as i64;
        let mut out = vec![C64::new(0.0, 0.0); phi.len()];
        for &(m, c) in &self.coeffs {
            let w = weight(m, c);
            for j in 0..n {
                let src = (j - m).rem_euclid(n) as usize;
                for a in 0..f {
                    out[j as usize * f + a] += w * phi[src * f + a];
                }
            }
        }
        Ok(out)
    }

    /// (V^eps phi)_j = sum_m Vhat_m phi_{j-m}, applied to each of f fiber components.
    pub fn apply_veps(&self, grid: &GridSpec, phi: &[C64], f: usize) -> Result<Vec<C64>> {
        self.stencil(grid, phi, f, |_, c| c)
    }

    /// (F^eps phi)_j = -i sum_m (2 pi m / L) Vhat_m phi_{j-m}: multiplication by the force -V'(X).
    pub fn apply_feps(&self, grid: &GridSpec, phi: &[C64], f: usize) -> Result<Vec<C64>> {
        let k = 2.0 * PI / self.l;
        self.stencil(grid, phi, f, |m, c| -I * k * m as f64 * c)
    }

    /// Dense N x N stencil matrix.
    pub fn matrix(&self, grid: &GridSpec) -> Result<Array2<C64>> {
        self.check(grid)?;
        let n = grid.n();
        let mut a = Array2::<C64>::zeros((n, n));
        for &(m, c) in &self.coeffs {
            for j in 0..n {
                let k = (j as i64 - m).rem_euclid(n as i64) as usize;
                a[[j, k]] += c;
            }
        }
        Ok(a)
    }
}
