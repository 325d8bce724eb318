//! Error measurements whose scaling in eps is compared with the adiabatic and semiclassical estimates.

use crate::error::{Error, Result};
use crate::fiber::{
    compute_band_with, default_gap_min, embed, extension_for, random_band_state, BandCurve, BandData, FiberModel,
    DEFAULT_COLLAR,
};
use crate::flow::{cosine_dispersion, flow, max_time, pullback, ClassicalHamiltonian, ClassicalState, Dispersion, MaxTimeSampling, DEFAULT_DT};
use crate::grid::{probe_rng, random_probe, wrap_angle, wrap_position, EffState, FiberedState, GridSpec, MomentumWindow};
use crate::linalg::{inner, norm, normalize, sub, C64};
use crate::potential::PotentialSpec;
use crate::propagators::{
    build_u, build_u1, u_map, u_map_adjoint, EffPropagator, FiberedPropagator, PropagatorPlan,
};
use crate::weyl::{bump_1d, weyl_quantize, OperatorMatrix, PhaseSpaceSymbol};
use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use std::f64::consts::PI;
use std::sync::OnceLock;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Estimator {
    /// Max over seeded probes at one time.
    RandomSup,
    /// Max over seeded probes and over the time grid up to the reported time.
    UniformSup,
    PowerIter,
    StateSpecific,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::RandomSup => "random-sup",
            Estimator::UniformSup => "random-sup-uniform",
            Estimator::PowerIter => "power-iter",
            Estimator::StateSpecific => "state-specific",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Estimator::RandomSup,
            Estimator::UniformSup,
            Estimator::PowerIter,
            Estimator::StateSpecific,
        ]
        .into_iter()
        .find(|e| e.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorMeasurement {
    pub experiment: String,
    pub eps: f64,
    pub t_macro: f64,
    pub estimate: f64,
    pub estimator: Estimator,
    pub n_probes: usize,
    pub seed: u64,
}

/// Per-probe errors on a time grid: values[probe][time].
#[derive(Clone, Debug)]
pub struct ErrorCurve {
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl ErrorCurve {
    pub fn probes(&self) -> usize {
        self.values.len()
    }

    pub fn sup_at(&self, i: usize) -> f64 {
        self.values.iter().map(|v| v[i]).fold(0.0, f64::max)
    }

    pub fn mean_at(&self, i: usize) -> f64 {
        self.values.iter().map(|v| v[i]).sum::<f64>() / self.values.len().max(1) as f64
    }

    pub fn uniform_sup_at(&self, i: usize) -> f64 {
        (0..=i).map(|k| self.sup_at(k)).fold(0.0, f64::max)
    }

    /// Restriction to the first `k` probes.
    pub fn prefix(&self, k: usize) -> Self {
        Self {
            times: self.times.clone(),
            values: self.values[..k.min(self.values.len())].to_vec(),
        }
    }

    pub fn measurements(&self, experiment: &str, eps: f64, estimator: Estimator, seed: u64) -> Vec<ErrorMeasurement> {
        (0..self.times.len())
            .map(|i| ErrorMeasurement {
                experiment: experiment.to_string(),
                eps,
                t_macro: self.times[i],
                estimate: match estimator {
                    Estimator::UniformSup => self.uniform_sup_at(i),
                    _ => self.sup_at(i),
                },
                estimator,
                n_probes: self.probes(),
                seed,
            })
            .collect()
    }
}

/// `points` equally spaced times in (0, t_max].
pub fn t_grid(t_max: f64, points: usize) -> Vec<f64> {
    (1..=points).map(|k| t_max * k as f64 / points as f64).collect()
}

/// Momentum windows of an experiment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Geometry {
    pub l: f64,
    pub lg: MomentumWindow,
    pub li: MomentumWindow,
    pub delta: f64,
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            l: 8.0,
            lg: MomentumWindow {
                center: 0.0,
                half_width: 1.2,
            },
            li: MomentumWindow {
                center: 0.3,
                half_width: 0.4,
            },
            delta: 0.2,
        }
    }
}

impl Geometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) {
            return Err(Error::Hypothesis(format!("margin delta = {} must be positive", self.delta)));
        }
        if !self.li.fits_inside(&self.lg, self.delta) {
            return Err(Error::Hypothesis(format!(
                "initial window {:.3} +- {:.3} enlarged by the margin delta = {} is not inside the band window {:.3} +- {:.3}",
                self.li.center, self.li.half_width, self.delta, self.lg.center, self.lg.half_width
            )));
        }
        Ok(())
    }
}

/// eps-independent part of an experiment: fiber, potential, windows and the classical band flow.
pub struct Setup {
    pub model: FiberModel,
    pub v: PotentialSpec,
    pub geometry: Geometry,
    pub gap_min: Option<f64>,
    pub sampling: MaxTimeSampling,
    curve: Dispersion,
    t_max: OnceLock<f64>,
}

/// Nodes of the tabulated band used by classical flows.
const CURVE_NODES: usize = 8192;

impl Setup {
    pub fn new(model: FiberModel, v: PotentialSpec, geometry: Geometry) -> Result<Self> {
        geometry.validate()?;
        let ext = extension_for(&model, &geometry.lg, DEFAULT_COLLAR)?;
        let curve = BandCurve::new(&model, &ext, CURVE_NODES)?.dispersion();
        Ok(Self {
            model,
            v,
            geometry,
            gap_min: None,
            sampling: MaxTimeSampling::default(),
            curve,
            t_max: OnceLock::new(),
        })
    }

    /// Reference fiber, reference potential and default windows.
    pub fn reference() -> Result<Self> {
        let g = Geometry::default();
        Self::new(FiberModel::reference(), PotentialSpec::reference(g.l), g)
    }

    /// Classical Hamiltonian E_ext(p) + V(X).
    pub fn classical(&self) -> ClassicalHamiltonian {
        ClassicalHamiltonian::new(self.curve.clone(), self.v.clone())
    }

    /// T_m^delta for the initial window inside the band window.
    pub fn max_time(&self) -> Result<f64> {
        if let Some(t) = self.t_max.get() {
            return Ok(*t);
        }
        let g = &self.geometry;
        let t = max_time(&g.li, &g.lg, g.delta, &self.classical(), self.sampling)?;
        Ok(*self.t_max.get_or_init(|| t))
    }

    /// Default theorem horizon 0.8 min(1, T_m^delta).
    pub fn horizon(&self) -> Result<f64> {
        Ok(0.8 * self.max_time()?.min(1.0))
    }

    pub fn check_times(&self, times: &[f64]) -> Result<()> {
        let tm = self.max_time()?;
        for &t in times {
            if t < 0.0 || t > tm {
                return Err(Error::Hypothesis(format!(
                    "time t = {t} lies outside [0, T_m^delta = {tm:.4}]"
                )));
            }
        }
        Ok(())
    }

    pub fn workbench(&self, eps: f64) -> Result<Workbench> {
        self.workbench_with(eps, PropagatorPlan::exact())
    }

    pub fn workbench_with(&self, eps: f64, plan: PropagatorPlan) -> Result<Workbench> {
        let grid = GridSpec::new(self.geometry.l, eps)?;
        let gap_min = match self.gap_min {
            Some(g) => g,
            None => default_gap_min(&self.model, &grid, &self.geometry.lg)?,
        };
        let band = compute_band_with(&self.model, &grid, &self.geometry.lg, gap_min, DEFAULT_COLLAR)?;
        Ok(Workbench {
            grid,
            model: self.model.clone(),
            v: self.v.clone(),
            geometry: self.geometry,
            band,
            plan,
            u1: OnceLock::new(),
            u: OnceLock::new(),
        })
    }
}

/// Per-eps data with lazily built propagators.
pub struct Workbench {
    pub grid: GridSpec,
    pub model: FiberModel,
    pub v: PotentialSpec,
    pub geometry: Geometry,
    pub band: BandData,
    pub plan: PropagatorPlan,
    u1: OnceLock<EffPropagator>,
    u: OnceLock<FiberedPropagator>,
}

impl Workbench {
    pub fn eps(&self) -> f64 {
        self.grid.eps()
    }

    /// Effective propagator with the extended band.
    pub fn u1(&self) -> Result<&EffPropagator> {
        if let Some(u) = self.u1.get() {
            return Ok(u);
        }
        let u = build_u1(&self.band.e_ext, &self.v, &self.grid, self.plan)?;
        Ok(self.u1.get_or_init(|| u))
    }

    /// Full fibered propagator.
    pub fn u(&self) -> Result<&FiberedPropagator> {
        if let Some(u) = self.u.get() {
            return Ok(u);
        }
        let u = build_u(&self.model, &self.v, &self.grid, self.plan)?;
        Ok(self.u.get_or_init(|| u))
    }

    /// Same band and potential with another propagation plan.
    pub fn with_plan(&self, plan: PropagatorPlan) -> Workbench {
        Workbench {
            grid: self.grid.clone(),
            model: self.model.clone(),
            v: self.v.clone(),
            geometry: self.geometry,
            band: self.band.clone(),
            plan,
            u1: OnceLock::new(),
            u: OnceLock::new(),
        }
    }
}

fn parallel_probes(probes: usize, f: impl Fn(u64) -> Result<Vec<f64>> + Sync + Send) -> Result<Vec<Vec<f64>>> {
    (0..probes as u64).into_par_iter().map(f).collect()
}

/// ||(1 - P_m) U1(t/eps) phi|| for probes phi in Ran P_i, with the band window as the allowed set.
pub fn lemma1_leakage(setup: &Setup, wb: &Workbench, times: &[f64], probes: usize, seed: u64) -> Result<ErrorCurve> {
    setup.check_times(times)?;
    let u1 = wb.u1()?;
    let g = &wb.grid;
    let inside = wb.geometry.lg.mask(g);
    let values = parallel_probes(probes, |k| {
        let phi = random_probe(g, seed, k, Some(&wb.geometry.li))?;
        Ok(u1
            .propagate_times(&phi, times)?
            .iter()
            .map(|s| {
                s.amp
                    .iter()
                    .zip(&inside)
                    .filter(|(_, &m)| !m)
                    .map(|(z, _)| z.norm_sqr())
                    .sum::<f64>()
                    .sqrt()
            })
            .collect())
    })?;
    Ok(ErrorCurve {
        times: times.to_vec(),
        values,
    })
}

/// ||(U(t/eps) - U* U1(t/eps) U) Psi|| for band-embedded probes Psi in Ran P_i.
pub fn theorem_mt(setup: &Setup, wb: &Workbench, times: &[f64], probes: usize, seed: u64) -> Result<ErrorCurve> {
    setup.check_times(times)?;
    let (u, u1) = (wb.u()?, wb.u1()?);
    let values = parallel_probes(probes, |k| {
        let psi = random_band_state(&wb.grid, seed, k, Some(&wb.geometry.li), &wb.band)?;
        let phi = u_map(&wb.band, &psi)?;
        let full = u.propagate_times(&psi, times)?;
        let eff = u1.propagate_times(&phi, times)?;
        full.iter()
            .zip(&eff)
            .map(|(a, b)| Ok(norm(&sub(&a.amp, &u_map_adjoint(&wb.band, b)?.amp))))
            .collect()
    })?;
    Ok(ErrorCurve {
        times: times.to_vec(),
        values,
    })
}

/// Heisenberg observable compared between the full and the effective dynamics.
#[derive(Clone)]
pub enum Observable {
    /// Lattice position coordinate with its branch cut antipodal to the probe center.
    Position,
    /// Weyl quantized symbol acting on each fiber component.
    Symbol(PhaseSpaceSymbol),
}

/// Distance from the cut within which a position probe must carry no weight.
const CUT_CLEARANCE: f64 = 1.0;
/// Largest admissible probe weight near the cut.
const CUT_TOLERANCE: f64 = 1e-3;

/// Gaussian width of position probes in units of the window half-width.
const PROBE_SPREAD: f64 = 0.4;

/// Smooth momentum bump on the window with its position center at y.
pub fn position_probe(grid: &GridSpec, window: &MomentumWindow, y: f64) -> Result<EffState> {
    let mut amp: Vec<C64> = grid
        .p_nodes()
        .iter()
        .map(|&p| {
            let u = wrap_angle(p - window.center) / window.half_width;
            C64::from_polar(bump_1d(u, 0) * (-0.5 * (u / PROBE_SPREAD).powi(2)).exp(), -p * y / grid.eps())
        })
        .collect();
    if normalize(&mut amp) == 0.0 {
        return Err(Error::EmptyWindow);
    }
    Ok(EffState::momentum(amp))
}

/// Coordinate X = y + eps wrap(n - y/eps) on the lattice, cut at y +- L/2.
pub fn centered_coordinate(grid: &GridSpec, y: f64) -> Vec<f64> {
    let n = grid.n() as f64;
    (0..grid.n())
        .map(|m| {
            let d = grid.lattice(m) as f64 - y / grid.eps();
            let w = (d + 0.5 * n).rem_euclid(n) - 0.5 * n;
            y + grid.eps() * w
        })
        .collect()
}

pub fn cut_weight(grid: &GridSpec, phi_x: &[C64], y: f64) -> f64 {
    let xs = centered_coordinate(grid, y);
    let edge = 0.5 * grid.l() - CUT_CLEARANCE;
    phi_x
        .iter()
        .zip(&xs)
        .filter(|(_, &x)| (x - y).abs() > edge)
        .map(|(z, _)| z.norm_sqr())
        .sum()
}

/// Circular mean of the position density, on the branch nearest to y.
fn circular_center(grid: &GridSpec, phi_x: &[C64], y: f64) -> f64 {
    let k = 2.0 * PI / grid.l();
    let z: C64 = phi_x
        .iter()
        .enumerate()
        .map(|(m, a)| a.norm_sqr() * C64::from_polar(1.0, k * grid.x_macro(m)))
        .sum();
    y + wrap_position(z.arg() / k - y, grid.l())
}

fn multiply_position(grid: &GridSpec, amp: &[C64], f: usize, coord: &[f64]) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); amp.len()];
    let mut col = vec![C64::new(0.0, 0.0); grid.n()];
    for a in 0..f {
        for j in 0..grid.n() {
            col[j] = amp[j * f + a];
        }
        let mut x = grid.momentum_to_position(&col);
        x.iter_mut().zip(coord).for_each(|(z, c)| *z *= c);
        let back = grid.position_to_momentum(&x);
        for j in 0..grid.n() {
            out[j * f + a] = back[j];
        }
    }
    out
}

fn apply_componentwise(op: &OperatorMatrix, amp: &[C64], f: usize) -> Vec<C64> {
    let n = op.dim();
    let mut out = vec![C64::new(0.0, 0.0); amp.len()];
    let mut col = vec![C64::new(0.0, 0.0); n];
    for a in 0..f {
        for j in 0..n {
            col[j] = amp[j * f + a];
        }
        let y = op.apply(&col);
        for j in 0..n {
            out[j * f + a] = y[j];
        }
    }
    out
}

/// ||(a^eps(t) - U* a_1^eps(t) U) Psi|| with a^eps(t) = U(-t) a U(t) and a_1^eps(t) = U1(-t) a U1(t).
pub fn observable_error(
    setup: &Setup,
    wb: &Workbench,
    obs: &Observable,
    times: &[f64],
    probes: usize,
    seed: u64,
) -> Result<ErrorCurve> {
    setup.check_times(times)?;
    let (u, u1) = (wb.u()?, wb.u1()?);
    let g = &wb.grid;
    let f = wb.band.f;
    let op = match obs {
        Observable::Symbol(a) => Some(weyl_quantize(a, g)?),
        Observable::Position => None,
    };
    let values = parallel_probes(probes, |k| {
        let (phi, coord) = match obs {
            Observable::Position => {
                let y: f64 = probe_rng(seed, k).random_range(-1.0..1.0);
                let phi = position_probe(g, &wb.geometry.li, y)?;
                let w = cut_weight(g, &g.momentum_to_position(&phi.amp), y);
                if w > CUT_TOLERANCE {
                    return Err(Error::BranchCut(format!(
                        "probe {k} centered at {y:.3} has weight {w:.3e} within {CUT_CLEARANCE} of the cut"
                    )));
                }
                (phi, Some(y))
            }
            Observable::Symbol(_) => (u_map(&wb.band, &random_band_state(g, seed, k, Some(&wb.geometry.li), &wb.band)?)?, None),
        };
        let psi = embed(&wb.band, &phi.amp);
        let apply = |amp: &[C64], ff: usize, c: &Option<Vec<f64>>| match (c, &op) {
            (Some(c), _) => multiply_position(g, amp, ff, c),
            (None, Some(o)) => apply_componentwise(o, amp, ff),
            _ => unreachable!(),
        };
        let full = u.propagate_times(&psi, times)?;
        let eff = u1.propagate_times(&phi, times)?;
        let mut out = Vec::with_capacity(times.len());
        for (i, &t) in times.iter().enumerate() {
            let c = match coord {
                Some(y) => {
                    let x = g.momentum_to_position(&eff[i].amp);
                    let yc = circular_center(g, &x, y);
                    let w = cut_weight(g, &x, yc);
                    if w > CUT_TOLERANCE {
                        return Err(Error::BranchCut(format!(
                            "probe {k} carries weight {w:.3e} near the cut at t = {t}"
                        )));
                    }
                    Some(centered_coordinate(g, yc))
                }
                None => None,
            };
            let a_full = FiberedState::momentum(apply(&full[i].amp, f, &c), f);
            let back = u.propagate(&a_full, -t)?;
            let a_eff = EffState::momentum(apply(&eff[i].amp, 1, &c));
            let back1 = u1.propagate(&a_eff, -t)?;
            let emb = u_map_adjoint(&wb.band, &back1)?;
            out.push(norm(&sub(&back.amp, &emb.amp)));
        }
        Ok(out)
    })?;
    Ok(ErrorCurve {
        times: times.to_vec(),
        values,
    })
}

/// ||U1(-t) a^W U1(t) phi - (a o Phi^t)^W phi|| maximized over white probes, with U1 built from a dispersion.
pub fn egorov_error(
    grid: &GridSpec,
    e: &Dispersion,
    v: &PotentialSpec,
    a: &PhaseSpaceSymbol,
    t: f64,
    probes: usize,
    seed: u64,
    plan: PropagatorPlan,
) -> Result<f64> {
    let band: Vec<f64> = grid.p_nodes().iter().map(|&p| e(p).0).collect();
    let u1 = build_u1(&band, v, grid, plan)?;
    let h = ClassicalHamiltonian::new(e.clone(), v.clone());
    let am = weyl_quantize(a, grid)?;
    let bm = weyl_quantize(&pullback(a, t, &h, DEFAULT_DT), grid)?;
    let vals = parallel_probes(probes, |k| {
        let phi = random_probe(grid, seed, k, None)?;
        let ut = u1.propagate(&phi, t)?;
        let lhs = u1.propagate(&EffState::momentum(am.apply(&ut.amp)), -t)?;
        Ok(vec![norm(&sub(&lhs.amp, &bm.apply(&phi.amp)))])
    })?;
    Ok(vals.iter().map(|v| v[0]).fold(0.0, f64::max))
}

/// Analytic dispersion 1 - cos p used by the Egorov and distribution experiments.
pub fn analytic_dispersion() -> Dispersion {
    cosine_dispersion()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SemiclassicalState {
    /// eps^{1/4} e^{i n p0} G(sqrt(eps)(n - x0/eps)), G a Gaussian of width sigma.
    Wavepacket { x0: f64, p0: f64, sigma: f64 },
    /// Microscopic Gaussian of `width` sites centered at x0/eps.
    Localized { x0: f64, width: f64 },
    /// sqrt(eps) f(eps n) e^{i S(eps n)/eps} with S = s0 sin(2 pi X / L) and f Gaussian.
    Wkb { s0: f64, center: f64, width: f64 },
}

impl SemiclassicalState {
    pub fn wavepacket() -> Self {
        SemiclassicalState::Wavepacket {
            x0: 0.5,
            p0: 0.3,
            sigma: 1.0,
        }
    }
    pub fn localized() -> Self {
        SemiclassicalState::Localized { x0: 0.5, width: 2.0 }
    }
    pub fn wkb() -> Self {
        SemiclassicalState::Wkb {
            s0: 0.5,
            center: 0.5,
            width: 0.5,
        }
    }
    pub fn kind(&self) -> &'static str {
        match self {
            SemiclassicalState::Wavepacket { .. } => "wavepacket",
            SemiclassicalState::Localized { .. } => "localized",
            SemiclassicalState::Wkb { .. } => "wkb",
        }
    }

    /// Phase S and its gradient for the WKB kind.
    fn phase(l: f64, s0: f64, x: f64) -> (f64, f64) {
        let k = 2.0 * PI / l;
        (s0 * (k * x).sin(), s0 * k * (k * x).cos())
    }
}

fn wrapped_offset(grid: &GridSpec, m: usize, center_sites: f64) -> f64 {
    let n = grid.n() as f64;
    let d = grid.lattice(m) as f64 - center_sites;
    (d + 0.5 * n).rem_euclid(n) - 0.5 * n
}

/// Unit-norm state in momentum representation.
pub fn make_semiclassical_state(spec: &SemiclassicalState, grid: &GridSpec) -> Result<EffState> {
    let eps = grid.eps();
    let mut x: Vec<C64> = match *spec {
        SemiclassicalState::Wavepacket { x0, p0, sigma } => {
            if !(sigma > 0.0) {
                return Err(Error::Unnormalizable(format!("sigma = {sigma}")));
            }
            (0..grid.n())
                .map(|m| {
                    let d = wrapped_offset(grid, m, x0 / eps);
                    let u = eps.sqrt() * d;
                    let n = grid.lattice(m) as f64;
                    C64::from_polar(eps.powf(0.25) * (-u * u / (4.0 * sigma * sigma)).exp(), n * p0)
                })
                .collect()
        }
        SemiclassicalState::Localized { x0, width } => {
            if !(width > 0.0) {
                return Err(Error::Unnormalizable(format!("width = {width}")));
            }
            (0..grid.n())
                .map(|m| {
                    let d = wrapped_offset(grid, m, x0 / eps);
                    C64::from((-d * d / (4.0 * width * width)).exp())
                })
                .collect()
        }
        SemiclassicalState::Wkb { s0, center, width } => {
            if !(width > 0.0) {
                return Err(Error::Unnormalizable(format!("width = {width}")));
            }
            (0..grid.n())
                .map(|m| {
                    let d = eps * wrapped_offset(grid, m, center / eps);
                    let xm = center + d;
                    let (s, _) = SemiclassicalState::phase(grid.l(), s0, xm);
                    C64::from_polar(eps.sqrt() * (-d * d / (4.0 * width * width)).exp(), s / eps)
                })
                .collect()
        }
    };
    let nrm = normalize(&mut x);
    if !(nrm > 0.0) || !nrm.is_finite() {
        return Err(Error::Unnormalizable(format!("{spec:?}")));
    }
    Ok(EffState::momentum(grid.position_to_momentum(&x)))
}

/// Classical expectation of a o Phi^t under the limiting phase-space measure of the state.
pub fn classical_reference(
    spec: &SemiclassicalState,
    grid: &GridSpec,
    a: &PhaseSpaceSymbol,
    t: f64,
    h: &ClassicalHamiltonian,
) -> Result<f64> {
    let l = grid.l();
    let at = |x: f64, p: f64| {
        let s = flow(h, ClassicalState::new(x, p, l), t, DEFAULT_DT);
        a.eval(s.x, s.p).re
    };
    Ok(match *spec {
        SemiclassicalState::Wavepacket { x0, p0, .. } => at(x0, p0),
        SemiclassicalState::Localized { .. } => {
            let phi = make_semiclassical_state(spec, grid)?;
            let x0 = match *spec {
                SemiclassicalState::Localized { x0, .. } => x0,
                _ => unreachable!(),
            };
            (0..grid.n())
                .into_par_iter()
                .map(|j| phi.amp[j].norm_sqr() * at(x0, grid.p(j)))
                .sum()
        }
        SemiclassicalState::Wkb { s0, center, width } => {
            let eps = grid.eps();
            let (num, den) = (0..grid.n())
                .into_par_iter()
                .map(|m| {
                    let d = eps * wrapped_offset(grid, m, center / eps);
                    let x = center + d;
                    let f2 = (-d * d / (2.0 * width * width)).exp();
                    let (_, ds) = SemiclassicalState::phase(l, s0, x);
                    (f2 * at(x, ds), f2)
                })
                .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
            num / den
        }
    })
}

/// |<phi, U1(-t) a^W U1(t) phi> - classical reference| for the analytic dispersion.
pub fn distribution_error(
    spec: &SemiclassicalState,
    a: &PhaseSpaceSymbol,
    t: f64,
    grid: &GridSpec,
    v: &PotentialSpec,
    plan: PropagatorPlan,
) -> Result<f64> {
    let e = analytic_dispersion();
    let band: Vec<f64> = grid.p_nodes().iter().map(|&p| e(p).0).collect();
    let u1 = build_u1(&band, v, grid, plan)?;
    let phi = make_semiclassical_state(spec, grid)?;
    let pt = u1.propagate(&phi, t)?;
    let am = weyl_quantize(a, grid)?;
    let q = inner(&pt.amp, &am.apply(&pt.amp));
    let h = ClassicalHamiltonian::new(e, v.clone());
    Ok((q - classical_reference(spec, grid, a, t, &h)?).norm())
}

/// |sum W^eps(t) a - int rho_cl(t) a| for the evolved state's Wigner table.
pub fn weak_error(
    spec: &SemiclassicalState,
    a: &PhaseSpaceSymbol,
    t: f64,
    grid: &GridSpec,
    v: &PotentialSpec,
    plan: PropagatorPlan,
) -> Result<f64> {
    let e = analytic_dispersion();
    let band: Vec<f64> = grid.p_nodes().iter().map(|&p| e(p).0).collect();
    let u1 = build_u1(&band, v, grid, plan)?;
    let phi = make_semiclassical_state(spec, grid)?;
    let w = wigner(&u1.propagate(&phi, t)?, grid)?;
    let h = ClassicalHamiltonian::new(e, v.clone());
    Ok((w.pair(a) - classical_reference(spec, grid, a, t, &h)?).abs())
}

/// Discrete Wigner function W(X_m, p_j).
#[derive(Clone, Debug)]
pub struct WignerTable {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    /// values[[m, j]]
    pub values: Array2<f64>,
}

impl WignerTable {
    /// Sum over momenta at each position.
    pub fn position_marginal(&self) -> Vec<f64> {
        self.values.rows().into_iter().map(|r| r.sum()).collect()
    }
    /// Sum over positions at each momentum.
    pub fn momentum_marginal(&self) -> Vec<f64> {
        self.values.columns().into_iter().map(|c| c.sum()).collect()
    }
    pub fn total(&self) -> f64 {
        self.values.sum()
    }
    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }
    /// (X, p) of the largest entry.
    pub fn peak(&self) -> (f64, f64) {
        let mut best = (0, 0, f64::NEG_INFINITY);
        for ((m, j), &v) in self.values.indexed_iter() {
            if v > best.2 {
                best = (m, j, v);
            }
        }
        (self.x[best.0], self.p[best.1])
    }
    /// sum_{m, j} W(X_m, p_j) a(X_m, p_j).
    pub fn pair(&self, a: &PhaseSpaceSymbol) -> f64 {
        self.values
            .indexed_iter()
            .map(|((m, j), &w)| w * a.eval(self.x[m], self.p[j]).re)
            .sum()
    }
    pub fn l1_distance(&self, other: &WignerTable) -> f64 {
        self.values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| (a - b).abs())
            .sum()
    }
}

/// Values on the half grid p_{-pi} + k dp/2, k = 0..2N, of each momentum component.
fn half_grid(grid: &GridSpec, comps: &[Vec<C64>]) -> Vec<Vec<C64>> {
    comps
        .iter()
        .map(|c| {
            let x = grid.momentum_to_position(c);
            let mut h = Vec::with_capacity(2 * grid.n());
            for j in 0..grid.n() {
                h.push(c[j]);
                h.push(grid.interpolate_momentum(&x, grid.p(j) + 0.5 * grid.dp()));
            }
            h
        })
        .collect()
}

fn wigner_components(grid: &GridSpec, comps: &[Vec<C64>]) -> WignerTable {
    let n = grid.n();
    let half = half_grid(grid, comps);
    let cols: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            // d_r for r in [-N/2, N/2), stored at r + N/2; the endpoints r = +-N/2 fold together
            let mut d = vec![C64::new(0.0, 0.0); n];
            let corr = |r: i64| -> C64 {
                let kp = (2 * j as i64 + r).rem_euclid(2 * n as i64) as usize;
                let km = (2 * j as i64 - r).rem_euclid(2 * n as i64) as usize;
                half.iter().map(|h| h[kp].conj() * h[km]).sum()
            };
            let hn = (n / 2) as i64;
            for r in -hn + 1..hn {
                d[(r + hn) as usize] = corr(r);
            }
            d[0] = 0.5 * (corr(-hn) + corr(hn));
            let w = grid.position_to_momentum(&d);
            let s = 1.0 / (n as f64).sqrt();
            w.iter().map(|z| z.re * s).collect()
        })
        .collect();
    let mut values = Array2::<f64>::zeros((n, n));
    for (j, col) in cols.iter().enumerate() {
        for m in 0..n {
            values[[m, j]] = col[m];
        }
    }
    WignerTable {
        x: grid.x_nodes(),
        p: grid.p_nodes(),
        values,
    }
}

/// W(m, p_c) = N^-1 sum_{|r| <= N/2} w_r conj(phi(p_c + r dp/2)) phi(p_c - r dp/2) e^{-i r dp n_m}.
pub fn wigner(phi: &EffState, grid: &GridSpec) -> Result<WignerTable> {
    if phi.rep != crate::grid::Rep::Momentum {
        return Err(Error::WrongRepresentation {
            expected: "momentum",
            found: phi.rep.name(),
        });
    }
    Ok(wigner_components(grid, &[phi.amp.clone()]))
}

/// Wigner function with the fiber inner product inside the transform.
pub fn reduced_wigner(psi: &FiberedState, grid: &GridSpec) -> Result<WignerTable> {
    if psi.rep != crate::grid::Rep::Momentum {
        return Err(Error::WrongRepresentation {
            expected: "momentum",
            found: psi.rep.name(),
        });
    }
    let comps: Vec<Vec<C64>> = (0..psi.f)
        .map(|a| (0..grid.n()).map(|j| psi.amp[j * psi.f + a]).collect())
        .collect();
    Ok(wigner_components(grid, &comps))
}

/// Result of a time-integration audit of one estimate.
#[derive(Clone, Copy, Debug)]
pub struct StrangAudit {
    pub exact: f64,
    pub strang: f64,
    pub strang_half: f64,
}

impl StrangAudit {
    /// |strang - exact|.
    pub fn deviation(&self) -> f64 {
        (self.strang - self.exact).abs()
    }
    /// Relative change of the estimate when dt_micro is halved.
    pub fn halving_change(&self) -> f64 {
        (self.strang - self.strang_half).abs() / self.strang_half.abs().max(f64::MIN_POSITIVE)
    }
}

/// Evaluates an estimate with exact propagation and with split steps eps/10 and eps/20.
pub fn strang_audit(eps: f64, f: impl Fn(PropagatorPlan) -> Result<f64>) -> Result<StrangAudit> {
    Ok(StrangAudit {
        exact: f(PropagatorPlan::exact())?,
        strang: f(PropagatorPlan::strang_default(eps))?,
        strang_half: f(PropagatorPlan::strang(eps / 20.0))?,
    })
}
