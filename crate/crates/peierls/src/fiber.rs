//! Fibered Hamiltonians p -> H0(p), the isolated band and its adiabatic objects.

use crate::error::{Error, Result};
use crate::flow::Dispersion;
use crate::grid::{probe_rng, complex_gaussian, wrap_angle, FiberedState, GridSpec, MomentumWindow};
use crate::linalg::{adjoint, eigh, inner, normalize, spectral_norm, C64};
use ndarray::Array2;
use std::sync::Arc;

/// Single-particle kinetic term of the Nelson fiber.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NelsonDispersion {
    /// 1 - cos(p - k0 n): periodic on the momentum torus.
    Cosine,
    /// (p - k0 n)^2 / 2.
    Quadratic,
}

#[derive(Clone, Debug, PartialEq)]
pub enum FiberKind {
    Nelson {
        omega: f64,
        k0: f64,
        g: f64,
        n_max: usize,
        dispersion: NelsonDispersion,
    },
    TwoLevel {
        gap0: f64,
        theta_amp: f64,
        e_amp: f64,
    },
}

/// Family of Hermitian F x F fiber matrices with analytic p-derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct FiberModel {
    pub kind: FiberKind,
}

fn zeros(f: usize) -> Array2<C64> {
    Array2::zeros((f, f))
}

impl FiberModel {
    /// Single boson mode, truncated at n_max quanta, with the periodic cosine dispersion.
    pub fn nelson(omega: f64, k0: f64, g: f64, n_max: usize) -> Result<Self> {
        Self::nelson_with(omega, k0, g, n_max, NelsonDispersion::Cosine)
    }

    pub fn nelson_with(
        omega: f64,
        k0: f64,
        g: f64,
        n_max: usize,
        dispersion: NelsonDispersion,
    ) -> Result<Self> {
        if !(omega > 0.0) {
            return Err(Error::Hypothesis(format!("omega = {omega} must be positive")));
        }
        if n_max < 2 {
            return Err(Error::Hypothesis(format!("n_max = {n_max} must be at least 2")));
        }
        Ok(Self {
            kind: FiberKind::Nelson {
                omega,
                k0,
                g,
                n_max,
                dispersion,
            },
        })
    }

    /// R(theta) diag(E-, E- + gap0) R(theta)^T with theta = theta_amp sin p, E- = e_amp (1 - cos p).
    pub fn twolevel(gap0: f64, theta_amp: f64, e_amp: f64) -> Result<Self> {
        if !(gap0 > 0.0) {
            return Err(Error::Hypothesis(format!("gap0 = {gap0} must be positive")));
        }
        Ok(Self {
            kind: FiberKind::TwoLevel {
                gap0,
                theta_amp,
                e_amp,
            },
        })
    }

    /// Reference fiber: omega = 1, k0 = 1, g = 0.2, n_max = 4.
    pub fn reference() -> Self {
        Self::nelson(1.0, 1.0, 0.2, 4).expect("valid parameters")
    }

    pub fn f(&self) -> usize {
        match self.kind {
            FiberKind::Nelson { n_max, .. } => n_max + 1,
            FiberKind::TwoLevel { .. } => 2,
        }
    }

    /// Same model with the coupling switched off.
    pub fn decoupled(&self) -> Self {
        match self.kind.clone() {
            FiberKind::Nelson {
                omega,
                k0,
                n_max,
                dispersion,
                ..
            } => Self {
                kind: FiberKind::Nelson {
                    omega,
                    k0,
                    g: 0.0,
                    n_max,
                    dispersion,
                },
            },
            k @ FiberKind::TwoLevel { .. } => Self { kind: k },
        }
    }

    /// d^order/dp^order H0(p) for order 0, 1, 2.
    fn deriv(&self, p: f64, order: usize) -> Array2<C64> {
        let f = self.f();
        let mut h = zeros(f);
        match self.kind {
            FiberKind::Nelson {
                omega,
                k0,
                g,
                dispersion,
                ..
            } => {
                for n in 0..f {
                    let q = p - k0 * n as f64;
                    let d = match (dispersion, order) {
                        (NelsonDispersion::Cosine, 0) => 1.0 - q.cos() + omega * n as f64,
                        (NelsonDispersion::Cosine, 1) => q.sin(),
                        (NelsonDispersion::Cosine, _) => q.cos(),
                        (NelsonDispersion::Quadratic, 0) => 0.5 * q * q + omega * n as f64,
                        (NelsonDispersion::Quadratic, 1) => q,
                        (NelsonDispersion::Quadratic, _) => 1.0,
                    };
                    h[[n, n]] = C64::from(d);
                    if order == 0 && n > 0 {
                        let c = C64::from(g * (n as f64).sqrt());
                        h[[n - 1, n]] = c;
                        h[[n, n - 1]] = c;
                    }
                }
            }
            FiberKind::TwoLevel {
                gap0,
                theta_amp,
                e_amp,
            } => {
                let th = theta_amp * p.sin();
                let (th1, th2) = (theta_amp * p.cos(), -theta_amp * p.sin());
                let (e, e1, e2) = (e_amp * (1.0 - p.cos()), e_amp * p.sin(), e_amp * p.cos());
                let (s2, c2) = ((2.0 * th).sin(), (2.0 * th).cos());
                // H0 = E- 1 + gap0 [[s^2, -sc], [-sc, c^2]]
                let m0 = [[0.5 * (1.0 - c2), -0.5 * s2], [-0.5 * s2, 0.5 * (1.0 + c2)]];
                let m1 = [[s2, -c2], [-c2, -s2]];
                let m2 = [[2.0 * c2, 2.0 * s2], [2.0 * s2, -2.0 * c2]];
                for a in 0..2 {
                    for b in 0..2 {
                        let id = if a == b { 1.0 } else { 0.0 };
                        let v = match order {
                            0 => e * id + gap0 * m0[a][b],
                            1 => e1 * id + gap0 * th1 * m1[a][b],
                            _ => e2 * id + gap0 * (th2 * m1[a][b] + th1 * th1 * m2[a][b]),
                        };
                        h[[a, b]] = C64::from(v);
                    }
                }
            }
        }
        h
    }

    pub fn h0(&self, p: f64) -> Array2<C64> {
        self.deriv(p, 0)
    }
    pub fn grad(&self, p: f64) -> Array2<C64> {
        self.deriv(p, 1)
    }
    pub fn hess(&self, p: f64) -> Array2<C64> {
        self.deriv(p, 2)
    }

    /// Closed-form ground vector and projector derivative of the two-level family.
    pub fn twolevel_closed_form(&self, p: f64) -> Option<(f64, [f64; 2], [[f64; 2]; 2])> {
        match self.kind {
            FiberKind::TwoLevel {
                theta_amp, e_amp, ..
            } => {
                let th = theta_amp * p.sin();
                let th1 = theta_amp * p.cos();
                let (s2, c2) = ((2.0 * th).sin(), (2.0 * th).cos());
                Some((
                    e_amp * (1.0 - p.cos()),
                    [th.cos(), th.sin()],
                    [[-th1 * s2, th1 * c2], [th1 * c2, th1 * s2]],
                ))
            }
            _ => None,
        }
    }
}

/// Spectral data of one fiber matrix.
#[derive(Clone, Debug)]
pub struct FiberEig {
    pub evals: Vec<f64>,
    pub evecs: Array2<C64>,
}

impl FiberEig {
    pub fn at(model: &FiberModel, p: f64) -> Result<Self> {
        let (evals, evecs) = eigh(&model.h0(p))?;
        Ok(Self { evals, evecs })
    }
    pub fn ground(&self) -> Vec<C64> {
        self.evecs.column(0).to_vec()
    }
    pub fn gap(&self) -> f64 {
        self.evals[1] - self.evals[0]
    }
    pub fn p0(&self) -> Array2<C64> {
        outer(&self.ground(), &self.ground())
    }
    /// Reduced resolvent (R_E Q0)^power = sum_{n>0} |psi_n><psi_n| / (E_n - E_0)^power.
    pub fn reduced_resolvent(&self, power: i32) -> Array2<C64> {
        let f = self.evals.len();
        let mut r = zeros(f);
        for n in 1..f {
            let v = self.evecs.column(n).to_vec();
            let w = 1.0 / (self.evals[n] - self.evals[0]).powi(power);
            r = r + outer(&v, &v).mapv(|z| z * w);
        }
        r
    }
}

pub fn outer(a: &[C64], b: &[C64]) -> Array2<C64> {
    let mut m = zeros(a.len());
    for i in 0..a.len() {
        for j in 0..b.len() {
            m[[i, j]] = a[i] * b[j].conj();
        }
    }
    m
}

pub fn identity(f: usize) -> Array2<C64> {
    let mut m = zeros(f);
    for i in 0..f {
        m[[i, i]] = C64::from(1.0);
    }
    m
}

/// grad P0 = -(R_E Q0) grad H0 P0 - P0 grad H0 (R_E Q0).
pub fn grad_p0_at(model: &FiberModel, p: f64) -> Result<Array2<C64>> {
    let e = FiberEig::at(model, p)?;
    Ok(grad_p0_from(&e, &model.grad(p)))
}

fn grad_p0_from(e: &FiberEig, grad: &Array2<C64>) -> Array2<C64> {
    let rq = e.reduced_resolvent(1);
    let p0 = e.p0();
    let a = rq.dot(grad).dot(&p0);
    let b = p0.dot(grad).dot(&rq);
    -(a + b)
}

/// Smooth C-infinity switch from 1 (u <= 0) to 0 (u >= 1) and its derivative.
pub fn smoothstep(u: f64, kappa: f64) -> (f64, f64) {
    if u <= 0.0 {
        return (1.0, 0.0);
    }
    if u >= 1.0 {
        return (0.0, 0.0);
    }
    let den = u * (1.0 - u);
    let arg = kappa * (u - 0.5) / den;
    let th = arg.tanh();
    let s = 0.5 * (1.0 - th);
    let darg = kappa * (u * u - u + 0.5) / (den * den);
    (s, -0.5 * (1.0 - th * th) * darg)
}

/// Extension of the band outside the window: blends to a constant across a collar.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Extension {
    pub window: MomentumWindow,
    pub collar: f64,
    pub constant: f64,
    pub kappa: f64,
}

impl Extension {
    /// (E_ext, E_ext') from (E, E') at p.
    pub fn blend(&self, p: f64, e: f64, de: f64) -> (f64, f64) {
        let depth = self.window.depth(p);
        if depth >= 0.0 {
            return (e, de);
        }
        let u = -depth / self.collar;
        if u >= 1.0 {
            return (self.constant, 0.0);
        }
        let (s, ds) = smoothstep(u, self.kappa);
        let sign = wrap_angle(p - self.window.center).signum();
        let du = sign / self.collar;
        (s * e + (1.0 - s) * self.constant, s * de + ds * du * (e - self.constant))
    }

    /// Whether E_ext at p needs E(p).
    pub fn needs_band(&self, p: f64) -> bool {
        self.window.depth(p) > -self.collar
    }
}

/// Extension whose far value is the mean band energy at the two window ends.
pub fn extension_for(model: &FiberModel, window: &MomentumWindow, collar: f64) -> Result<Extension> {
    let lo = wrap_angle(window.center - window.half_width);
    let hi = wrap_angle(window.center + window.half_width);
    let constant = 0.5 * (FiberEig::at(model, lo)?.evals[0] + FiberEig::at(model, hi)?.evals[0]);
    Ok(Extension {
        window: *window,
        collar,
        constant,
        kappa: 1.0,
    })
}

/// Default collar width of the band extension (a quarter of the default margin 0.2).
pub const DEFAULT_COLLAR: f64 = 0.05;

/// Band data on a grid.
#[derive(Clone, Debug)]
pub struct BandData {
    pub n: usize,
    pub f: usize,
    pub p: Vec<f64>,
    pub e: Vec<f64>,
    pub e_ext: Vec<f64>,
    /// Phase-fixed ground vectors, node-major.
    pub psi0: Vec<C64>,
    pub gap: Vec<f64>,
    pub window: MomentumWindow,
    pub in_window: Vec<bool>,
    pub gap_min: f64,
    pub extension: Extension,
    eig: Vec<FiberEig>,
}

impl BandData {
    pub fn psi0_at(&self, j: usize) -> &[C64] {
        &self.psi0[j * self.f..(j + 1) * self.f]
    }

    pub fn eig(&self, j: usize) -> &FiberEig {
        &self.eig[j]
    }

    fn require(&self, j: usize) -> Result<()> {
        if j >= self.n || !self.in_window[j] {
            Err(Error::OutsideWindow { node: j })
        } else {
            Ok(())
        }
    }

    pub fn p0(&self, j: usize) -> Array2<C64> {
        outer(self.psi0_at(j), self.psi0_at(j))
    }

    pub fn q0(&self, j: usize) -> Array2<C64> {
        identity(self.f) - self.p0(j)
    }
}

/// Half the decoupled gap at the worst node of the window.
pub fn default_gap_min(model: &FiberModel, grid: &GridSpec, window: &MomentumWindow) -> Result<f64> {
    let dec = model.decoupled();
    let mut worst = f64::INFINITY;
    for j in window.nodes(grid) {
        worst = worst.min(FiberEig::at(&dec, grid.p(j))?.gap());
    }
    if !worst.is_finite() {
        return Err(Error::EmptyWindow);
    }
    Ok(0.5 * worst)
}

pub fn compute_band(
    model: &FiberModel,
    grid: &GridSpec,
    window: &MomentumWindow,
    gap_min: f64,
) -> Result<BandData> {
    compute_band_with(model, grid, window, gap_min, DEFAULT_COLLAR)
}

pub fn compute_band_with(
    model: &FiberModel,
    grid: &GridSpec,
    window: &MomentumWindow,
    gap_min: f64,
    collar: f64,
) -> Result<BandData> {
    let n = grid.n();
    let f = model.f();
    let in_window = window.mask(grid);
    if !in_window.iter().any(|&b| b) {
        return Err(Error::EmptyWindow);
    }
    let mut eig = Vec::with_capacity(n);
    for j in 0..n {
        eig.push(FiberEig::at(model, grid.p(j))?);
    }
    let e: Vec<f64> = eig.iter().map(|x| x.evals[0]).collect();
    let gap: Vec<f64> = eig.iter().map(|x| x.gap()).collect();
    for j in 0..n {
        if in_window[j] {
            let scale = e[j].abs().max(1.0);
            if gap[j] <= 1e-12 * scale {
                return Err(Error::Degenerate { node: j });
            }
            if gap[j] < gap_min {
                return Err(Error::GapViolation {
                    node: j,
                    p: grid.p(j),
                    gap: gap[j],
                    gap_min,
                });
            }
        }
    }
    // parallel transport outward from the node nearest the window center
    let j0 = grid.nearest_node(window.center);
    let mut psi = vec![C64::new(0.0, 0.0); n * f];
    let mut v0 = eig[j0].ground();
    let big = (0..f)
        .max_by(|&a, &b| v0[a].norm().partial_cmp(&v0[b].norm()).unwrap())
        .unwrap();
    let ph = v0[big].conj() / v0[big].norm();
    v0.iter_mut().for_each(|z| *z *= ph);
    psi[j0 * f..(j0 + 1) * f].copy_from_slice(&v0);
    let half = n / 2;
    for (dir, steps) in [(1i64, half), (-1i64, n - 1 - half)] {
        let mut prev = v0.clone();
        for s in 1..=steps {
            let j = (j0 as i64 + dir * s as i64).rem_euclid(n as i64) as usize;
            let mut v = eig[j].ground();
            let ov = inner(&v, &prev);
            if ov.norm() > 0.0 {
                let ph = ov / ov.norm();
                v.iter_mut().for_each(|z| *z *= ph);
            }
            psi[j * f..(j + 1) * f].copy_from_slice(&v);
            prev = v;
        }
    }
    for j in 0..n {
        for a in 0..f {
            eig[j].evecs[[a, 0]] = psi[j * f + a];
        }
    }
    let extension = extension_for(model, window, collar)?;
    let e_ext: Vec<f64> = (0..n).map(|j| extension.blend(grid.p(j), e[j], 0.0).0).collect();
    Ok(BandData {
        n,
        f,
        p: grid.p_nodes(),
        e,
        e_ext,
        psi0: psi,
        gap,
        window: *window,
        in_window,
        gap_min,
        extension,
        eig,
    })
}

/// E_ext and its derivative at an arbitrary momentum (Hellmann-Feynman inside the collar).
pub fn band_energy_at(model: &FiberModel, ext: &Extension, p: f64) -> Result<(f64, f64)> {
    if !ext.needs_band(p) {
        return Ok((ext.constant, 0.0));
    }
    let eg = FiberEig::at(model, p)?;
    let v = eg.ground();
    let de = inner(&v, &crate::linalg::matvec(&model.grad(p), &v)).re;
    Ok(ext.blend(p, eg.evals[0], de))
}

/// Cubic Hermite table of E_ext for fast classical flows.
#[derive(Clone, Debug)]
pub struct BandCurve {
    e: Vec<f64>,
    de: Vec<f64>,
}

impl BandCurve {
    pub fn new(model: &FiberModel, ext: &Extension, nodes: usize) -> Result<Self> {
        let mut e = Vec::with_capacity(nodes + 1);
        let mut de = Vec::with_capacity(nodes + 1);
        for i in 0..=nodes {
            let p = -std::f64::consts::PI + 2.0 * std::f64::consts::PI * i as f64 / nodes as f64;
            let (a, b) = band_energy_at(model, ext, p)?;
            e.push(a);
            de.push(b);
        }
        Ok(Self { e, de })
    }

    pub fn eval(&self, p: f64) -> (f64, f64) {
        let m = self.e.len() - 1;
        let h = 2.0 * std::f64::consts::PI / m as f64;
        let t = (wrap_angle(p) + std::f64::consts::PI) / h;
        let i = (t.floor() as usize).min(m - 1);
        let s = t - i as f64;
        let (y0, y1, d0, d1) = (self.e[i], self.e[i + 1], self.de[i] * h, self.de[i + 1] * h);
        let (s2, s3) = (s * s, s * s * s);
        let val = (2.0 * s3 - 3.0 * s2 + 1.0) * y0
            + (s3 - 2.0 * s2 + s) * d0
            + (-2.0 * s3 + 3.0 * s2) * y1
            + (s3 - s2) * d1;
        let der = (6.0 * s2 - 6.0 * s) * y0
            + (3.0 * s2 - 4.0 * s + 1.0) * d0
            + (-6.0 * s2 + 6.0 * s) * y1
            + (3.0 * s2 - 2.0 * s) * d1;
        (val, der / h)
    }

    pub fn dispersion(self) -> Dispersion {
        let c = Arc::new(self);
        Arc::new(move |p| c.eval(p))
    }
}

/// grad P0 at a band node inside the window.
pub fn grad_p0(band: &BandData, model: &FiberModel, j: usize) -> Result<Array2<C64>> {
    band.require(j)?;
    Ok(grad_p0_from(band.eig(j), &model.grad(band.p[j])))
}

/// B(p) = (R_E Q0)^2 grad H0 P0.
pub fn b_of_p(band: &BandData, model: &FiberModel, j: usize) -> Result<Array2<C64>> {
    band.require(j)?;
    let e = band.eig(j);
    Ok(e.reduced_resolvent(2).dot(&model.grad(band.p[j])).dot(&e.p0()))
}

/// Norm of [B, H0] - Q0 (grad P0) P0.
pub fn check_b_identity(band: &BandData, model: &FiberModel, j: usize) -> Result<f64> {
    let b = b_of_p(band, model, j)?;
    let h = model.h0(band.p[j]);
    let lhs = b.dot(&h) - h.dot(&b);
    let rhs = band.q0(j).dot(&grad_p0(band, model, j)?).dot(&band.p0(j));
    spectral_norm(&(lhs - rhs))
}

/// |<psi0(p_j), psi0(p_j - shift dp)> - 1|.
pub fn overlap_defect(band: &BandData, j: usize, shift: i64) -> Result<f64> {
    band.require(j)?;
    let k = (j as i64 - shift).rem_euclid(band.n as i64) as usize;
    band.require(k)?;
    Ok((inner(band.psi0_at(j), band.psi0_at(k)) - 1.0).norm())
}

/// Random state in Ran P_g: complex-Gaussian scalar part on window nodes times psi0.
pub fn random_band_state(
    grid: &GridSpec,
    seed: u64,
    k: u64,
    window: Option<&MomentumWindow>,
    band: &BandData,
) -> Result<FiberedState> {
    let mut rng = probe_rng(seed, k);
    let mut phi: Vec<C64> = (0..grid.n())
        .map(|j| {
            let z = complex_gaussian(&mut rng);
            let ok = band.in_window[j] && window.map_or(true, |w| w.contains(grid.p(j)));
            if ok {
                z
            } else {
                C64::new(0.0, 0.0)
            }
        })
        .collect();
    if normalize(&mut phi) == 0.0 {
        return Err(Error::EmptyWindow);
    }
    Ok(embed(band, &phi))
}

/// phi -> phi(p) psi0(p) on all nodes (no window cut).
pub fn embed(band: &BandData, phi: &[C64]) -> FiberedState {
    let f = band.f;
    let mut out = FiberedState::zeros(band.n, f);
    for j in 0..band.n {
        if phi[j] != C64::new(0.0, 0.0) {
            for a in 0..f {
                out.amp[j * f + a] = phi[j] * band.psi0[j * f + a];
            }
        }
    }
    out
}

/// Max over window nodes of |H0 psi0 - E psi0|.
pub fn eigen_residual(band: &BandData, model: &FiberModel) -> f64 {
    let mut r = 0.0f64;
    for j in 0..band.n {
        if band.in_window[j] {
            let hv = crate::linalg::matvec(&model.h0(band.p[j]), band.psi0_at(j));
            let d: f64 = hv
                .iter()
                .zip(band.psi0_at(j))
                .map(|(a, b)| (a - band.e[j] * b).norm_sqr())
                .sum::<f64>()
                .sqrt();
            r = r.max(d);
        }
    }
    r
}

/// Projector algebra defects at a node: (|P^2 - P|, |PQ|, |P + Q - 1|).
pub fn projector_defects(band: &BandData, j: usize) -> (f64, f64, f64) {
    let p = band.p0(j);
    let q = band.q0(j);
    let m = crate::linalg::max_abs;
    (
        m(&(p.dot(&p) - &p)),
        m(&p.dot(&q)),
        m(&(&p + &q - identity(band.f))),
    )
}

pub fn hermitian(a: &Array2<C64>) -> bool {
    crate::linalg::max_abs(&(a - &adjoint(a))) < 1e-14
}
