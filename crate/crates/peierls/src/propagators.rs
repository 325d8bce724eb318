//! Effective and full evolution groups, the band isometry and projected generators.

use crate::error::{Error, Result};
use crate::fiber::{b_of_p, grad_p0, BandData, FiberModel};
use crate::grid::{EffState, FiberedState, GridSpec, MomentumWindow, Rep};
use crate::linalg::{adj_matvec, eigh, inner, matvec, norm, sub, C64};
use crate::potential::PotentialSpec;
use ndarray::Array2;

/// Largest N F handled by the dense eigensolve of the full generator.
pub const FIBERED_EXACT_LIMIT: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Method {
    ExactEig,
    /// Strang splitting with microscopic step dt_micro.
    Strang { dt_micro: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PropagatorPlan {
    pub method: Method,
}

impl PropagatorPlan {
    pub fn exact() -> Self {
        Self {
            method: Method::ExactEig,
        }
    }
    pub fn strang(dt_micro: f64) -> Self {
        Self {
            method: Method::Strang { dt_micro },
        }
    }
    /// Default split step eps / 10.
    pub fn strang_default(eps: f64) -> Self {
        Self::strang(eps / 10.0)
    }
}

fn expect_momentum(rep: Rep) -> Result<()> {
    match rep {
        Rep::Momentum => Ok(()),
        r => Err(Error::WrongRepresentation {
            expected: "momentum",
            found: r.name(),
        }),
    }
}

fn split_steps(tau: f64, dt: f64) -> (usize, f64) {
    if tau == 0.0 {
        return (0, 0.0);
    }
    let n = (tau.abs() / dt).ceil().max(1.0) as usize;
    (n, tau / n as f64)
}

fn phases(values: &[f64], h: f64) -> Vec<C64> {
    values.iter().map(|v| C64::from_polar(1.0, -v * h)).collect()
}

#[derive(Clone, Debug)]
enum Spectral {
    Exact { w: Vec<f64>, vecs: Array2<C64> },
    Strang { dt: f64 },
}

fn exact_apply(w: &[f64], vecs: &Array2<C64>, v: &[C64], tau: f64) -> Vec<C64> {
    let mut c = adj_matvec(vecs, v);
    for (ck, wk) in c.iter_mut().zip(w) {
        *ck *= C64::from_polar(1.0, -wk * tau);
    }
    matvec(vecs, &c)
}

/// U1(t) = exp(-i H1 t / eps) with H1 = E(p) + V^eps on the scalar space.
#[derive(Clone, Debug)]
pub struct EffPropagator {
    grid: GridSpec,
    e: Vec<f64>,
    v: PotentialSpec,
    vx: Vec<f64>,
    spectral: Spectral,
}

pub fn build_u1(e: &[f64], v: &PotentialSpec, grid: &GridSpec, plan: PropagatorPlan) -> Result<EffPropagator> {
    let n = grid.n();
    if e.len() != n {
        return Err(Error::InvalidGrid(format!("band has {} values, grid has {n}", e.len())));
    }
    let mut h = v.matrix(grid)?;
    for j in 0..n {
        h[[j, j]] += e[j];
    }
    let spectral = match plan.method {
        Method::ExactEig => {
            let (w, vecs) = eigh(&h)?;
            Spectral::Exact { w, vecs }
        }
        Method::Strang { dt_micro } => Spectral::Strang { dt: dt_micro },
    };
    Ok(EffPropagator {
        grid: grid.clone(),
        e: e.to_vec(),
        v: v.clone(),
        vx: grid.x_nodes().iter().map(|&x| v.value(x)).collect(),
        spectral,
    })
}

impl EffPropagator {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }
    pub fn band(&self) -> &[f64] {
        &self.e
    }

    /// H1 phi in momentum representation.
    pub fn apply_h(&self, phi: &[C64]) -> Result<Vec<C64>> {
        let mut out = self.v.apply_veps(&self.grid, phi, 1)?;
        for (j, z) in out.iter_mut().enumerate() {
            *z += self.e[j] * phi[j];
        }
        Ok(out)
    }

    /// phi(t) for macroscopic time t (microscopic time t / eps); t may be negative.
    pub fn propagate(&self, phi: &EffState, t_macro: f64) -> Result<EffState> {
        expect_momentum(phi.rep)?;
        let tau = t_macro / self.grid.eps();
        let amp = match &self.spectral {
            Spectral::Exact { w, vecs } => exact_apply(w, vecs, &phi.amp, tau),
            Spectral::Strang { dt } => self.strang(&phi.amp, tau, *dt),
        };
        Ok(EffState::momentum(amp))
    }

    /// Evolution to several times sharing one spectral transform.
    pub fn propagate_times(&self, phi: &EffState, times: &[f64]) -> Result<Vec<EffState>> {
        expect_momentum(phi.rep)?;
        match &self.spectral {
            Spectral::Exact { w, vecs } => {
                let c0 = adj_matvec(vecs, &phi.amp);
                Ok(times
                    .iter()
                    .map(|&t| {
                        let tau = t / self.grid.eps();
                        let c: Vec<C64> = c0
                            .iter()
                            .zip(w)
                            .map(|(c, wk)| c * C64::from_polar(1.0, -wk * tau))
                            .collect();
                        EffState::momentum(matvec(vecs, &c))
                    })
                    .collect())
            }
            Spectral::Strang { dt } => {
                let mut cur = phi.amp.clone();
                let mut t0 = 0.0;
                let mut out = Vec::with_capacity(times.len());
                for &t in times {
                    cur = self.strang(&cur, (t - t0) / self.grid.eps(), *dt);
                    t0 = t;
                    out.push(EffState::momentum(cur.clone()));
                }
                Ok(out)
            }
        }
    }

    fn strang(&self, phi: &[C64], tau: f64, dt: f64) -> Vec<C64> {
        let (steps, h) = split_steps(tau, dt);
        if steps == 0 {
            return phi.to_vec();
        }
        let half_v = phases(&self.vx, 0.5 * h);
        let full_e = phases(&self.e, h);
        let g = &self.grid;
        let mut x = g.momentum_to_position(phi);
        for _ in 0..steps {
            x.iter_mut().zip(&half_v).for_each(|(z, p)| *z *= p);
            let mut p = g.position_to_momentum(&x);
            p.iter_mut().zip(&full_e).for_each(|(z, q)| *z *= q);
            x = g.momentum_to_position(&p);
            x.iter_mut().zip(&half_v).for_each(|(z, p)| *z *= p);
        }
        g.position_to_momentum(&x)
    }
}

/// U(t) = exp(-i H t / eps) with H = H0(p) + V^eps on the fibered space.
#[derive(Clone, Debug)]
pub struct FiberedPropagator {
    grid: GridSpec,
    f: usize,
    blocks: Vec<Array2<C64>>,
    v: PotentialSpec,
    vx: Vec<f64>,
    spectral: Spectral,
}

/// Dense (N F) x (N F) matrix blockdiag(H0(p_j)) + stencil(V) x 1.
pub fn full_matrix(model: &FiberModel, v: &PotentialSpec, grid: &GridSpec) -> Result<Array2<C64>> {
    let n = grid.n();
    let f = model.f();
    let vm = v.matrix(grid)?;
    let mut h = Array2::<C64>::zeros((n * f, n * f));
    for j in 0..n {
        let b = model.h0(grid.p(j));
        for a in 0..f {
            for c in 0..f {
                h[[j * f + a, j * f + c]] = b[[a, c]];
            }
        }
        for k in 0..n {
            let z = vm[[j, k]];
            if z != C64::new(0.0, 0.0) {
                for a in 0..f {
                    h[[j * f + a, k * f + a]] += z;
                }
            }
        }
    }
    Ok(h)
}

pub fn build_u(model: &FiberModel, v: &PotentialSpec, grid: &GridSpec, plan: PropagatorPlan) -> Result<FiberedPropagator> {
    let n = grid.n();
    let f = model.f();
    let spectral = match plan.method {
        Method::ExactEig => {
            if n * f > FIBERED_EXACT_LIMIT {
                return Err(Error::SizeLimit {
                    dim: n * f,
                    limit: FIBERED_EXACT_LIMIT,
                });
            }
            let (w, vecs) = eigh(&full_matrix(model, v, grid)?)?;
            Spectral::Exact { w, vecs }
        }
        Method::Strang { dt_micro } => {
            v.matrix(grid)?;
            Spectral::Strang { dt: dt_micro }
        }
    };
    Ok(FiberedPropagator {
        grid: grid.clone(),
        f,
        blocks: (0..n).map(|j| model.h0(grid.p(j))).collect(),
        v: v.clone(),
        vx: grid.x_nodes().iter().map(|&x| v.value(x)).collect(),
        spectral,
    })
}

impl FiberedPropagator {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }
    pub fn f(&self) -> usize {
        self.f
    }

    /// H0 Psi, fiberwise.
    pub fn apply_h0(&self, psi: &[C64]) -> Vec<C64> {
        let f = self.f;
        let mut out = vec![C64::new(0.0, 0.0); psi.len()];
        for (j, b) in self.blocks.iter().enumerate() {
            let y = matvec(b, &psi[j * f..(j + 1) * f]);
            out[j * f..(j + 1) * f].copy_from_slice(&y);
        }
        out
    }

    /// H Psi = H0 Psi + V^eps Psi.
    pub fn apply_h(&self, psi: &[C64]) -> Result<Vec<C64>> {
        let mut out = self.v.apply_veps(&self.grid, psi, self.f)?;
        for (o, h) in out.iter_mut().zip(self.apply_h0(psi)) {
            *o += h;
        }
        Ok(out)
    }

    pub fn propagate(&self, psi: &FiberedState, t_macro: f64) -> Result<FiberedState> {
        expect_momentum(psi.rep)?;
        let tau = t_macro / self.grid.eps();
        let amp = match &self.spectral {
            Spectral::Exact { w, vecs } => exact_apply(w, vecs, &psi.amp, tau),
            Spectral::Strang { dt } => self.strang(&psi.amp, tau, *dt)?,
        };
        Ok(FiberedState::momentum(amp, self.f))
    }

    pub fn propagate_times(&self, psi: &FiberedState, times: &[f64]) -> Result<Vec<FiberedState>> {
        expect_momentum(psi.rep)?;
        match &self.spectral {
            Spectral::Exact { w, vecs } => {
                let c0 = adj_matvec(vecs, &psi.amp);
                Ok(times
                    .iter()
                    .map(|&t| {
                        let tau = t / self.grid.eps();
                        let c: Vec<C64> = c0
                            .iter()
                            .zip(w)
                            .map(|(c, wk)| c * C64::from_polar(1.0, -wk * tau))
                            .collect();
                        FiberedState::momentum(matvec(vecs, &c), self.f)
                    })
                    .collect())
            }
            Spectral::Strang { dt } => {
                let mut cur = psi.amp.clone();
                let mut t0 = 0.0;
                let mut out = Vec::with_capacity(times.len());
                for &t in times {
                    cur = self.strang(&cur, (t - t0) / self.grid.eps(), *dt)?;
                    t0 = t;
                    out.push(FiberedState::momentum(cur.clone(), self.f));
                }
                Ok(out)
            }
        }
    }

    fn strang(&self, psi: &[C64], tau: f64, dt: f64) -> Result<Vec<C64>> {
        let (steps, h) = split_steps(tau, dt);
        if steps == 0 {
            return Ok(psi.to_vec());
        }
        let f = self.f;
        let g = &self.grid;
        let half_v = phases(&self.vx, 0.5 * h);
        let mut kinetic = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            kinetic.push(crate::linalg::expm_hermitian(b, h)?);
        }
        let mut s = crate::grid::fibered_to_position(g, &FiberedState::momentum(psi.to_vec(), f))?;
        for _ in 0..steps {
            for (m, ph) in half_v.iter().enumerate() {
                s.node_mut(m).iter_mut().for_each(|z| *z *= ph);
            }
            let mut p = crate::grid::fibered_to_momentum(g, &s)?;
            for (j, u) in kinetic.iter().enumerate() {
                let y = matvec(u, p.node(j));
                p.node_mut(j).copy_from_slice(&y);
            }
            s = crate::grid::fibered_to_position(g, &p)?;
            for (m, ph) in half_v.iter().enumerate() {
                s.node_mut(m).iter_mut().for_each(|z| *z *= ph);
            }
        }
        Ok(crate::grid::fibered_to_momentum(g, &s)?.amp)
    }
}

/// Band projection restricted to a window: Psi_j -> 1_W(p_j) psi0 <psi0, Psi_j>.
/// With W = band window this is P_g; with smaller windows it realizes P_i as
/// (window cutoff) after (band projection).
pub fn project_band(band: &BandData, window: Option<&MomentumWindow>, psi: &FiberedState) -> FiberedState {
    let f = band.f;
    let mut out = FiberedState::zeros(band.n, f);
    for j in 0..band.n {
        let keep = band.in_window[j] && window.map_or(true, |w| w.contains(band.p[j]));
        if keep {
            let c = inner(band.psi0_at(j), psi.node(j));
            for a in 0..f {
                out.amp[j * f + a] = c * band.psi0[j * f + a];
            }
        }
    }
    out
}

/// The isometry Ran P_g -> L^2: phi(p) = <psi0(p), Psi(p)> on the band window.
pub fn u_map(band: &BandData, psi: &FiberedState) -> Result<EffState> {
    expect_momentum(psi.rep)?;
    let proj = project_band(band, None, psi);
    let dist = norm(&sub(&psi.amp, &proj.amp));
    if dist > 1e-8 * psi.norm().max(1.0) {
        return Err(Error::NotInRange(dist));
    }
    Ok(u_map_unchecked(band, psi))
}

/// U P_g without the range check.
pub fn u_map_unchecked(band: &BandData, psi: &FiberedState) -> EffState {
    let amp = (0..band.n)
        .map(|j| {
            if band.in_window[j] {
                inner(band.psi0_at(j), psi.node(j))
            } else {
                C64::new(0.0, 0.0)
            }
        })
        .collect();
    EffState::momentum(amp)
}

/// U* phi = 1_{band window}(p) phi(p) psi0(p).
pub fn u_map_adjoint(band: &BandData, phi: &EffState) -> Result<FiberedState> {
    expect_momentum(phi.rep)?;
    let f = band.f;
    let mut out = FiberedState::zeros(band.n, f);
    for j in 0..band.n {
        if band.in_window[j] {
            for a in 0..f {
                out.amp[j * f + a] = phi.amp[j] * band.psi0[j * f + a];
            }
        }
    }
    Ok(out)
}

/// H_diag = H0 + P_g V P_g + Q_g V Q_g.
pub fn apply_hdiag(
    psi: &FiberedState,
    model: &FiberModel,
    band: &BandData,
    v: &PotentialSpec,
    grid: &GridSpec,
) -> Result<FiberedState> {
    expect_momentum(psi.rep)?;
    let f = band.f;
    let pg = project_band(band, None, psi);
    let qg = sub(&psi.amp, &pg.amp);
    let vp = FiberedState::momentum(v.apply_veps(grid, &pg.amp, f)?, f);
    let vq = v.apply_veps(grid, &qg, f)?;
    let pvp = project_band(band, None, &vp);
    let vq_state = FiberedState::momentum(vq.clone(), f);
    let qvq = sub(&vq, &project_band(band, None, &vq_state).amp);
    let mut out = vec![C64::new(0.0, 0.0); psi.amp.len()];
    for j in 0..grid.n() {
        let y = matvec(&model.h0(grid.p(j)), psi.node(j));
        for a in 0..f {
            let i = j * f + a;
            out[i] = y[a] + pvp.amp[i] + qvq[i];
        }
    }
    Ok(FiberedState::momentum(out, f))
}

/// Fiberwise multiplication by a matrix field defined on the band window (zero outside).
fn apply_field(
    band: &BandData,
    psi: &[C64],
    field: impl Fn(usize) -> Result<Array2<C64>>,
) -> Result<Vec<C64>> {
    let f = band.f;
    let mut out = vec![C64::new(0.0, 0.0); psi.len()];
    for j in 0..band.n {
        if band.in_window[j] {
            let y = matvec(&field(j)?, &psi[j * f..(j + 1) * f]);
            out[j * f..(j + 1) * f].copy_from_slice(&y);
        }
    }
    Ok(out)
}

/// Probe sup of ||(H_diag - U* H1 U) Psi|| over band states on the window m2.
pub fn hdiag_defect(
    model: &FiberModel,
    band: &BandData,
    v: &PotentialSpec,
    grid: &GridSpec,
    m2: &MomentumWindow,
    probes: usize,
    seed: u64,
) -> Result<f64> {
    let h1 = build_u1(&band.e_ext, v, grid, PropagatorPlan::strang(1.0))?;
    probe_sup(probes, |k| {
        let psi = crate::fiber::random_band_state(grid, seed, k, Some(m2), band)?;
        let hd = apply_hdiag(&psi, model, band, v, grid)?;
        let phi = u_map(band, &psi)?;
        let eff = u_map_adjoint(band, &EffState::momentum(h1.apply_h(&phi.amp)?))?;
        Ok(norm(&sub(&hd.amp, &eff.amp)))
    })
}

/// Probe sup of ||(H - H_diag) Psi + eps Q_g (grad P_g) P_m3 (i F^eps) Psi|| over band states on m2.
pub fn offdiag_leading_defect(
    model: &FiberModel,
    band: &BandData,
    v: &PotentialSpec,
    grid: &GridSpec,
    m2: &MomentumWindow,
    m3: &MomentumWindow,
    probes: usize,
    seed: u64,
) -> Result<f64> {
    let f = band.f;
    let full = build_u(model, v, grid, PropagatorPlan::strang(1.0))?;
    probe_sup(probes, |k| {
        let psi = crate::fiber::random_band_state(grid, seed, k, Some(m2), band)?;
        let h = full.apply_h(&psi.amp)?;
        let hd = apply_hdiag(&psi, model, band, v, grid)?;
        let ifp: Vec<C64> = v
            .apply_feps(grid, &psi.amp, f)?
            .iter()
            .map(|z| crate::linalg::I * z)
            .collect();
        let p3 = project_band(band, Some(m3), &FiberedState::momentum(ifp, f));
        let gp = apply_field(band, &p3.amp, |j| grad_p0(band, model, j))?;
        let gp_state = FiberedState::momentum(gp.clone(), f);
        let qgp = sub(&gp, &project_band(band, None, &gp_state).amp);
        let eps = grid.eps();
        let r: Vec<C64> = (0..h.len()).map(|i| h[i] - hd.amp[i] + eps * qgp[i]).collect();
        Ok(norm(&r))
    })
}

/// Probe sups of ||[B, H] P_m3 Psi - [B, H0] P_m3 Psi|| and ||[F^eps, H] P_m2 Psi||.
pub fn conservation_defects(
    model: &FiberModel,
    band: &BandData,
    v: &PotentialSpec,
    grid: &GridSpec,
    m2: &MomentumWindow,
    m3: &MomentumWindow,
    probes: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let f = band.f;
    let full = build_u(model, v, grid, PropagatorPlan::strang(1.0))?;
    let b = |x: &[C64]| apply_field(band, x, |j| b_of_p(band, model, j));
    let comm_b = probe_sup(probes, |k| {
        let psi = crate::fiber::random_band_state(grid, seed, k, Some(m3), band)?;
        let bh = b(&full.apply_h(&psi.amp)?)?;
        let hb = full.apply_h(&b(&psi.amp)?)?;
        let bh0 = b(&full.apply_h0(&psi.amp))?;
        let h0b = full.apply_h0(&b(&psi.amp)?);
        let r: Vec<C64> = (0..bh.len()).map(|i| (bh[i] - hb[i]) - (bh0[i] - h0b[i])).collect();
        Ok(norm(&r))
    })?;
    let comm_f = probe_sup(probes, |k| {
        let psi = crate::fiber::random_band_state(grid, seed, k, Some(m2), band)?;
        let fh = v.apply_feps(grid, &full.apply_h(&psi.amp)?, f)?;
        let hf = full.apply_h(&v.apply_feps(grid, &psi.amp, f)?)?;
        Ok(norm(&sub(&fh, &hf)))
    })?;
    Ok((comm_b, comm_f))
}

/// Max of a nonnegative quantity over probe indices 0..probes.
pub fn probe_sup(probes: usize, mut f: impl FnMut(u64) -> Result<f64>) -> Result<f64> {
    let mut best = 0.0f64;
    for k in 0..probes as u64 {
        best = best.max(f(k)?);
    }
    Ok(best)
}
