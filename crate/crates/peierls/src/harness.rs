//! Run configuration, eps sweeps with slope fits, CSV/JSON output and the self test.

use crate::error::{Error, Result};
use crate::experiments::{
    egorov_error, lemma1_leakage, observable_error, reduced_wigner, theorem_mt, weak_error, wigner,
    distribution_error, analytic_dispersion, make_semiclassical_state, t_grid, ErrorCurve, ErrorMeasurement,
    Estimator, Geometry, Observable, SemiclassicalState, Setup,
};
use crate::fiber::{
    check_b_identity, compute_band, embed, projector_defects, FiberKind, FiberModel, NelsonDispersion,
};
use crate::grid::{random_probe, EffState, GridSpec, MomentumWindow};
use crate::linalg::{norm, sub, C64};
use crate::potential::PotentialSpec;
use crate::propagators::{offdiag_leading_defect, u_map, u_map_adjoint, PropagatorPlan};
use crate::weyl::{PhaseSpaceSymbol, TrigSeries};
use serde_json::json;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Estimates at or below this level count as exact zeros.
pub const DEGENERATE_FLOOR: f64 = 1e-12;

pub const CSV_HEADER: &str = "experiment,eps,t_macro,estimate,estimator,probes,seed";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExperimentKind {
    Lemma1,
    TheoremMt,
    EffopPosition,
    EffopSymbol,
    Egorov,
    Wavepacket,
    Localized,
    Wkb,
    WignerWeak,
    ReducedWigner,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 10] = [
        ExperimentKind::Lemma1,
        ExperimentKind::TheoremMt,
        ExperimentKind::EffopPosition,
        ExperimentKind::EffopSymbol,
        ExperimentKind::Egorov,
        ExperimentKind::Wavepacket,
        ExperimentKind::Localized,
        ExperimentKind::Wkb,
        ExperimentKind::WignerWeak,
        ExperimentKind::ReducedWigner,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Lemma1 => "lemma1",
            ExperimentKind::TheoremMt => "theorem-mt",
            ExperimentKind::EffopPosition => "effop-position",
            ExperimentKind::EffopSymbol => "effop-symbol",
            ExperimentKind::Egorov => "egorov",
            ExperimentKind::Wavepacket => "wavepacket",
            ExperimentKind::Localized => "localized",
            ExperimentKind::Wkb => "wkb",
            ExperimentKind::WignerWeak => "wigner-weak",
            ExperimentKind::ReducedWigner => "reduced-wigner",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Experiments bounded by the confinement time rather than a fixed horizon.
    fn confined(self) -> bool {
        matches!(
            self,
            ExperimentKind::Lemma1
                | ExperimentKind::TheoremMt
                | ExperimentKind::EffopPosition
                | ExperimentKind::EffopSymbol
        )
    }

    fn probe_based(self) -> bool {
        self.confined() || self == ExperimentKind::Egorov
    }

    fn state(self) -> Option<SemiclassicalState> {
        match self {
            ExperimentKind::Wavepacket | ExperimentKind::WignerWeak | ExperimentKind::ReducedWigner => {
                Some(SemiclassicalState::wavepacket())
            }
            ExperimentKind::Localized => Some(SemiclassicalState::localized()),
            ExperimentKind::Wkb => Some(SemiclassicalState::wkb()),
            _ => None,
        }
    }
}

/// Observable symbol used by the Egorov, effop-symbol and distribution experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SymbolChoice {
    SinXCosP,
    SinX,
    CosP,
}

impl SymbolChoice {
    pub fn name(self) -> &'static str {
        match self {
            SymbolChoice::SinXCosP => "sin-x-cos-p",
            SymbolChoice::SinX => "sin-x",
            SymbolChoice::CosP => "cos-p",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [SymbolChoice::SinXCosP, SymbolChoice::SinX, SymbolChoice::CosP]
            .into_iter()
            .find(|c| c.name() == s)
    }

    pub fn symbol(self, l: f64) -> PhaseSpaceSymbol {
        match self {
            SymbolChoice::SinXCosP => TrigSeries::sin_x_cos_p(l).symbol(),
            SymbolChoice::SinX => TrigSeries::sin_x(l).symbol(),
            SymbolChoice::CosP => TrigSeries::cos_p(l).symbol(),
        }
    }
}

/// Validated sweep configuration.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub l: f64,
    pub eps_list: Vec<f64>,
    pub model: FiberModel,
    pub lg: MomentumWindow,
    pub gap_min: Option<f64>,
    pub potential: PotentialSpec,
    pub li: MomentumWindow,
    pub delta: f64,
    pub experiment: Option<ExperimentKind>,
    /// None selects the experiment's default horizon.
    pub t_max: Option<f64>,
    pub t_points: usize,
    pub probes: usize,
    pub seed: u64,
    pub estimator: Estimator,
    pub symbol: SymbolChoice,
    pub plan: PlanChoice,
    pub csv: Option<PathBuf>,
    pub json: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PlanChoice {
    Exact,
    /// Split-step with dt_micro = factor * eps.
    Strang(f64),
}

impl PlanChoice {
    pub fn plan(self, eps: f64) -> PropagatorPlan {
        match self {
            PlanChoice::Exact => PropagatorPlan::exact(),
            PlanChoice::Strang(f) => PropagatorPlan::strang(f * eps),
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        let g = Geometry::default();
        Self {
            l: g.l,
            eps_list: vec![1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0],
            model: FiberModel::reference(),
            lg: g.lg,
            gap_min: None,
            potential: PotentialSpec::reference(g.l),
            li: g.li,
            delta: g.delta,
            experiment: None,
            t_max: None,
            t_points: 8,
            probes: 16,
            seed: 1,
            estimator: Estimator::RandomSup,
            symbol: SymbolChoice::SinXCosP,
            plan: PlanChoice::Exact,
            csv: None,
            json: None,
        }
    }
}

const KEYS: &[&str] = &[
    "grid.L",
    "grid.eps_list",
    "model.kind",
    "model.omega",
    "model.k0",
    "model.g",
    "model.n_max",
    "model.dispersion",
    "model.gap0",
    "model.theta_amp",
    "model.e_amp",
    "model.window_center",
    "model.window_half_width",
    "model.gap_min",
    "windows.initial_center",
    "windows.initial_half_width",
    "windows.delta",
    "experiment.name",
    "experiment.t_max",
    "experiment.t_points",
    "experiment.probes",
    "experiment.seed",
    "experiment.estimator",
    "experiment.symbol",
    "experiment.propagator",
    "output.csv",
    "output.json",
];

/// Potential keys are potential.v0 (real) and potential.vM = re,im for M >= 1; Vhat_{-M} is the conjugate.
fn potential_mode(key: &str) -> Option<i64> {
    let m: i64 = key.strip_prefix("potential.v")?.parse().ok()?;
    (m >= 0).then_some(m)
}

struct Entries {
    map: BTreeMap<String, (usize, String)>,
    errors: Vec<String>,
}

impl Entries {
    fn parse(text: &str) -> Self {
        let mut map = BTreeMap::new();
        let mut errors = vec![];
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let ln = i + 1;
            let Some((k, v)) = line.split_once('=') else {
                errors.push(format!("line {ln}: expected `section.key = value`"));
                continue;
            };
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if !KEYS.contains(&k.as_str()) && potential_mode(&k).is_none() {
                errors.push(format!("line {ln}: unknown key `{k}`"));
                continue;
            }
            if let Some((prev, _)) = map.get(&k) {
                errors.push(format!("line {ln}: duplicate key `{k}` (first set on line {prev})"));
                continue;
            }
            map.insert(k, (ln, v));
        }
        Self { map, errors }
    }

    fn raw(&self, key: &str) -> Option<&(usize, String)> {
        self.map.get(key)
    }

    fn get<T>(&mut self, key: &str, what: &str, f: impl Fn(&str) -> Option<T>) -> Option<T> {
        let (ln, v) = self.map.get(key)?.clone();
        match f(&v) {
            Some(x) => Some(x),
            None => {
                self.errors.push(format!("line {ln}: `{key}` expects {what}, got `{v}`"));
                None
            }
        }
    }

    fn float(&mut self, key: &str) -> Option<f64> {
        self.get(key, "a finite number", |s| s.parse::<f64>().ok().filter(|x| x.is_finite()))
    }

    fn uint(&mut self, key: &str) -> Option<u64> {
        self.get(key, "a nonnegative integer", |s| s.parse::<u64>().ok())
    }
}

fn parse_number(s: &str) -> Option<f64> {
    let s = s.trim();
    let v = match s.split_once('/') {
        Some((a, b)) => a.trim().parse::<f64>().ok()? / b.trim().parse::<f64>().ok()?,
        None => s.parse::<f64>().ok()?,
    };
    v.is_finite().then_some(v)
}

fn parse_list(s: &str) -> Option<Vec<f64>> {
    s.split(',').map(parse_number).collect()
}

fn parse_complex(s: &str) -> Option<C64> {
    let parts: Vec<&str> = s.split(',').collect();
    match parts.as_slice() {
        [re] => Some(C64::new(parse_number(re)?, 0.0)),
        [re, im] => Some(C64::new(parse_number(re)?, parse_number(im)?)),
        _ => None,
    }
}

/// Parses and validates a configuration; every violation is reported.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut e = Entries::parse(text);
    let mut c = RunConfig::default();
    if let Some(l) = e.float("grid.L") {
        c.l = l;
    }
    if let Some(list) = e.get("grid.eps_list", "a comma-separated list of numbers", parse_list) {
        c.eps_list = list;
    }

    let kind = e
        .get("model.kind", "`nelson` or `twolevel`", |s| {
            (s == "nelson" || s == "twolevel").then(|| s.to_string())
        })
        .unwrap_or_else(|| "nelson".into());
    let nelson_keys = ["model.omega", "model.k0", "model.g", "model.n_max", "model.dispersion"];
    let twolevel_keys = ["model.gap0", "model.theta_amp", "model.e_amp"];
    let foreign = if kind == "nelson" { &twolevel_keys[..] } else { &nelson_keys[..] };
    for k in foreign {
        if let Some((ln, _)) = e.raw(k) {
            e.errors.push(format!("line {ln}: `{k}` does not apply to model.kind = {kind}"));
        }
    }
    let model = if kind == "nelson" {
        let omega = e.float("model.omega").unwrap_or(1.0);
        let k0 = e.float("model.k0").unwrap_or(1.0);
        let g = e.float("model.g").unwrap_or(0.2);
        let n_max = e.uint("model.n_max").unwrap_or(4) as usize;
        let disp = e
            .get("model.dispersion", "`cosine` or `quadratic`", |s| match s {
                "cosine" => Some(NelsonDispersion::Cosine),
                "quadratic" => Some(NelsonDispersion::Quadratic),
                _ => None,
            })
            .unwrap_or(NelsonDispersion::Cosine);
        FiberModel::nelson_with(omega, k0, g, n_max, disp)
    } else {
        let gap0 = e.float("model.gap0").unwrap_or(1.0);
        let th = e.float("model.theta_amp").unwrap_or(0.3);
        let ea = e.float("model.e_amp").unwrap_or(1.0);
        FiberModel::twolevel(gap0, th, ea)
    };
    match model {
        Ok(m) => c.model = m,
        Err(err) => e.errors.push(format!("model: {err}")),
    }
    let lg_c = e.float("model.window_center").unwrap_or(c.lg.center);
    let lg_w = e.float("model.window_half_width").unwrap_or(c.lg.half_width);
    match MomentumWindow::new(lg_c, lg_w) {
        Ok(w) => c.lg = w,
        Err(err) => e.errors.push(format!("band window: {err}")),
    }
    if let Some(g) = e.float("model.gap_min") {
        if g > 0.0 {
            c.gap_min = Some(g);
        } else {
            e.errors.push(format!("model.gap_min = {g} must be positive"));
        }
    }

    let pkeys: Vec<String> = e.map.keys().filter(|k| potential_mode(k).is_some()).cloned().collect();
    if !pkeys.is_empty() {
        let mut coeffs = vec![];
        for k in pkeys {
            let m = potential_mode(&k).unwrap();
            let Some(z) = e.get(&k, "`re` or `re,im`", parse_complex) else {
                continue;
            };
            if m == 0 {
                if z.im != 0.0 {
                    e.errors.push(format!("`{k}` must be real"));
                }
                coeffs.push((0, C64::from(z.re)));
            } else {
                coeffs.push((m, z));
                coeffs.push((-m, z.conj()));
            }
        }
        c.potential = PotentialSpec::new(c.l, &coeffs).expect("conjugate pairs are real");
    } else {
        c.potential = PotentialSpec::reference(c.l);
    }

    let li_c = e.float("windows.initial_center").unwrap_or(c.li.center);
    let li_w = e.float("windows.initial_half_width").unwrap_or(c.li.half_width);
    match MomentumWindow::new(li_c, li_w) {
        Ok(w) => c.li = w,
        Err(err) => e.errors.push(format!("initial window: {err}")),
    }
    if let Some(d) = e.float("windows.delta") {
        c.delta = d;
    }

    c.experiment = e.get("experiment.name", "a known experiment name", ExperimentKind::parse);
    if let Some((ln, v)) = e.raw("experiment.t_max").cloned() {
        if v != "auto" {
            match parse_number(&v) {
                Some(t) if t > 0.0 => c.t_max = Some(t),
                _ => e.errors.push(format!("line {ln}: `experiment.t_max` expects `auto` or a positive number")),
            }
        }
    }
    if let Some(n) = e.uint("experiment.t_points") {
        if n == 0 {
            e.errors.push("experiment.t_points must be at least 1".into());
        }
        c.t_points = n as usize;
    }
    if let Some(n) = e.uint("experiment.probes") {
        if n == 0 {
            e.errors.push("experiment.probes must be at least 1".into());
        }
        c.probes = n as usize;
    }
    if let Some(s) = e.uint("experiment.seed") {
        c.seed = s;
    }
    if let Some(est) = e.get("experiment.estimator", "`random-sup` or `random-sup-uniform`", |s| {
        Estimator::parse(s).filter(|x| matches!(x, Estimator::RandomSup | Estimator::UniformSup))
    }) {
        c.estimator = est;
    }
    if let Some(s) = e.get("experiment.symbol", "`sin-x-cos-p`, `sin-x` or `cos-p`", SymbolChoice::parse) {
        c.symbol = s;
    }
    if let Some(p) = e.get("experiment.propagator", "`exact` or `strang` or `strang:<dt/eps>`", |s| {
        match s {
            "exact" => Some(PlanChoice::Exact),
            "strang" => Some(PlanChoice::Strang(0.1)),
            _ => s
                .strip_prefix("strang:")
                .and_then(parse_number)
                .filter(|f| *f > 0.0)
                .map(PlanChoice::Strang),
        }
    }) {
        c.plan = p;
    }
    if let Some((_, v)) = e.raw("output.csv") {
        c.csv = Some(PathBuf::from(v));
    }
    if let Some((_, v)) = e.raw("output.json") {
        c.json = Some(PathBuf::from(v));
    }

    let mut errors = e.errors;
    errors.extend(c.hypothesis_errors(c.experiment));
    if errors.is_empty() {
        Ok(c)
    } else {
        Err(Error::Config(errors))
    }
}

impl RunConfig {
    pub fn geometry(&self) -> Geometry {
        Geometry {
            l: self.l,
            lg: self.lg,
            li: self.li,
            delta: self.delta,
        }
    }

    pub fn setup(&self) -> Result<Setup> {
        let mut s = Setup::new(self.model.clone(), self.potential.clone(), self.geometry())?;
        s.gap_min = self.gap_min;
        Ok(s)
    }

    /// Everything that must hold before any propagator is built.
    pub fn hypothesis_errors(&self, exp: Option<ExperimentKind>) -> Vec<String> {
        let mut out = vec![];
        if !(self.l > 0.0) {
            out.push(format!("grid.L = {} must be positive", self.l));
            return out;
        }
        if self.eps_list.len() < 4 {
            out.push(format!(
                "grid.eps_list has {} entries; slope fitting needs >= 4 eps values",
                self.eps_list.len()
            ));
        }
        if self.eps_list.windows(2).any(|w| w[1] >= w[0]) {
            out.push("grid.eps_list must be strictly decreasing".into());
        }
        let mut grids = vec![];
        for &eps in &self.eps_list {
            match GridSpec::new(self.l, eps) {
                Ok(g) => grids.push(g),
                Err(err) => out.push(format!("eps = {eps}: {err}")),
            }
        }
        if !(self.delta > 0.0) {
            out.push(format!("windows.delta = {} must be positive", self.delta));
        } else if !self.li.fits_inside(&self.lg, self.delta) {
            out.push(format!(
                "initial window {:.4} +- {:.4} enlarged by the margin delta = {} leaves the band window {:.4} +- {:.4}",
                self.li.center, self.li.half_width, self.delta, self.lg.center, self.lg.half_width
            ));
        }
        if let Some(g) = grids.first() {
            let limit = g.n() / 8;
            if self.potential.m_max() > limit {
                out.push(format!(
                    "potential mode {} exceeds N/8 = {limit} on the coarsest grid",
                    self.potential.m_max()
                ));
            }
        }
        if !out.is_empty() {
            return out;
        }
        let Some(exp) = exp else {
            return out;
        };
        if exp.confined() || exp == ExperimentKind::ReducedWigner {
            for g in &grids {
                let gm = match self.gap_min {
                    Some(x) => Ok(x),
                    None => crate::fiber::default_gap_min(&self.model, g, &self.lg),
                };
                if let Err(err) = gm.and_then(|gm| compute_band(&self.model, g, &self.lg, gm)) {
                    out.push(format!("eps = {}: {err}", g.eps()));
                }
            }
        }
        if exp.confined() {
            match self.setup().and_then(|s| s.max_time()) {
                Ok(tm) => {
                    if let Some(t) = self.t_max {
                        if t > tm {
                            out.push(format!(
                                "experiment.t_max = {t} exceeds the confinement time T_m^delta = {tm:.4}"
                            ));
                        }
                    }
                }
                Err(err) => out.push(format!("confinement time: {err}")),
            }
        }
        out
    }

    /// Default horizon of an experiment.
    pub fn horizon(&self, exp: ExperimentKind) -> Result<f64> {
        if let Some(t) = self.t_max {
            return Ok(t);
        }
        Ok(match exp {
            ExperimentKind::TheoremMt => self.setup()?.horizon()?,
            ExperimentKind::Lemma1 | ExperimentKind::EffopPosition | ExperimentKind::EffopSymbol => {
                let tm = self.setup()?.max_time()?;
                if tm.is_finite() {
                    0.8 * tm
                } else {
                    1.0
                }
            }
            ExperimentKind::ReducedWigner => 0.0,
            _ => 1.0,
        })
    }

    pub fn times(&self, exp: ExperimentKind) -> Result<Vec<f64>> {
        let t = self.horizon(exp)?;
        Ok(if t == 0.0 { vec![0.0] } else { t_grid(t, self.t_points) })
    }

    /// Canonical `key = value` listing of the effective configuration.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("grid.L", format!("{:?}", self.l));
        put(
            "grid.eps_list",
            self.eps_list.iter().map(|e| format!("{e:?}")).collect::<Vec<_>>().join(","),
        );
        match &self.model.kind {
            FiberKind::Nelson {
                omega,
                k0,
                g,
                n_max,
                dispersion,
            } => {
                put("model.kind", "nelson".into());
                put("model.omega", format!("{omega:?}"));
                put("model.k0", format!("{k0:?}"));
                put("model.g", format!("{g:?}"));
                put("model.n_max", n_max.to_string());
                put(
                    "model.dispersion",
                    match dispersion {
                        NelsonDispersion::Cosine => "cosine",
                        NelsonDispersion::Quadratic => "quadratic",
                    }
                    .into(),
                );
            }
            FiberKind::TwoLevel {
                gap0,
                theta_amp,
                e_amp,
            } => {
                put("model.kind", "twolevel".into());
                put("model.gap0", format!("{gap0:?}"));
                put("model.theta_amp", format!("{theta_amp:?}"));
                put("model.e_amp", format!("{e_amp:?}"));
            }
        }
        put("model.window_center", format!("{:?}", self.lg.center));
        put("model.window_half_width", format!("{:?}", self.lg.half_width));
        put(
            "model.gap_min",
            self.gap_min.map_or("auto".into(), |g| format!("{g:?}")),
        );
        for &(m, z) in self.potential.coeffs() {
            if m >= 0 {
                put(&format!("potential.v{m}"), format!("{:?},{:?}", z.re, z.im));
            }
        }
        put("windows.initial_center", format!("{:?}", self.li.center));
        put("windows.initial_half_width", format!("{:?}", self.li.half_width));
        put("windows.delta", format!("{:?}", self.delta));
        put(
            "experiment.name",
            self.experiment.map_or("none".into(), |e| e.name().into()),
        );
        put(
            "experiment.t_max",
            self.t_max.map_or("auto".into(), |t| format!("{t:?}")),
        );
        put("experiment.t_points", self.t_points.to_string());
        put("experiment.probes", self.probes.to_string());
        put("experiment.seed", self.seed.to_string());
        put("experiment.estimator", self.estimator.name().into());
        put("experiment.symbol", self.symbol.name().into());
        put(
            "experiment.propagator",
            match self.plan {
                PlanChoice::Exact => "exact".into(),
                PlanChoice::Strang(f) => format!("strang:{f:?}"),
            },
        );
        s
    }

    /// SHA-256 of the canonical listing.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}

/// Least-squares fit of log e against log eps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Fits log e = intercept + slope log eps over at least four rows.
pub fn fit_slope(rows: &[(f64, f64)]) -> Result<SlopeFit> {
    if rows.len() < 4 {
        return Err(Error::Fit(format!("{} rows; need at least 4", rows.len())));
    }
    if let Some(r) = rows.iter().find(|r| !(r.0 > 0.0) || !(r.1 > 0.0)) {
        return Err(Error::Fit(format!("eps = {}, estimate = {}", r.0, r.1)));
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.0.ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("all eps values coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(SlopeFit { slope, intercept, r2 })
}

/// Slope entry of one time slice.
#[derive(Clone, Debug, PartialEq)]
pub enum SlopeOutcome {
    Fit(SlopeFit),
    /// Every estimate is at the zero floor.
    Degenerate,
    Failed(String),
}

#[derive(Clone, Debug)]
pub struct SlopeEntry {
    pub t: f64,
    pub outcome: SlopeOutcome,
}

/// Fits per time slice, in increasing t.
pub fn slopes_by_time(rows: &[ErrorMeasurement]) -> Vec<SlopeEntry> {
    let mut times: Vec<f64> = rows.iter().map(|r| r.t_macro).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    times
        .into_iter()
        .map(|t| {
            let pts: Vec<(f64, f64)> = rows.iter().filter(|r| r.t_macro == t).map(|r| (r.eps, r.estimate)).collect();
            let outcome = if pts.iter().all(|p| p.1 <= DEGENERATE_FLOOR) {
                SlopeOutcome::Degenerate
            } else {
                match fit_slope(&pts) {
                    Ok(f) => SlopeOutcome::Fit(f),
                    Err(e) => SlopeOutcome::Failed(e.to_string()),
                }
            };
            SlopeEntry { t, outcome }
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub experiment: String,
    pub rows: Vec<ErrorMeasurement>,
    pub slopes: Vec<SlopeEntry>,
    pub config_hash: String,
    pub seed: u64,
}

impl SweepResult {
    /// Entry at the largest time.
    pub fn final_slope(&self) -> Option<&SlopeEntry> {
        self.slopes.last()
    }

    pub fn json(&self) -> serde_json::Value {
        json!({
            "experiment": self.experiment,
            "slopes": self.slopes.iter().map(slope_json).collect::<Vec<_>>(),
            "config_hash": self.config_hash,
        })
    }
}

fn slope_json(s: &SlopeEntry) -> serde_json::Value {
    match &s.outcome {
        SlopeOutcome::Fit(f) => json!({"t": s.t, "slope": f.slope, "intercept": f.intercept, "r2": f.r2}),
        SlopeOutcome::Degenerate => json!({"t": s.t, "slope": "degenerate: zeros", "intercept": null, "r2": null}),
        SlopeOutcome::Failed(e) => json!({"t": s.t, "slope": format!("failed: {e}"), "intercept": null, "r2": null}),
    }
}

pub fn csv_line(r: &ErrorMeasurement) -> String {
    format!(
        "{},{:?},{:?},{:e},{},{},{}",
        r.experiment,
        r.eps,
        r.t_macro,
        r.estimate,
        r.estimator.name(),
        r.n_probes,
        r.seed
    )
}

pub fn write_csv(path: &Path, rows: &[ErrorMeasurement], failure: Option<&str>) -> Result<()> {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&csv_line(r));
        s.push('\n');
    }
    if let Some(f) = failure {
        let _ = writeln!(s, "# FAILED: {f}");
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// Reads rows written by `write_csv`; comment lines are skipped.
pub fn read_csv(path: &Path) -> Result<Vec<ErrorMeasurement>> {
    let text = std::fs::read_to_string(path)?;
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let bad = |i: usize, what: &str| Error::Config(vec![format!("{}: row {i}: {what}", path.display())]);
    let headers = rdr.headers().map_err(|e| bad(0, &e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>().join(",") != CSV_HEADER {
        return Err(bad(0, "unexpected header"));
    }
    let mut rows = vec![];
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(i + 1, &e.to_string()))?;
        let f = |k: usize| rec[k].parse::<f64>().map_err(|_| bad(i + 1, "bad number"));
        rows.push(ErrorMeasurement {
            experiment: rec[0].to_string(),
            eps: f(1)?,
            t_macro: f(2)?,
            estimate: f(3)?,
            estimator: Estimator::parse(&rec[4]).ok_or_else(|| bad(i + 1, "unknown estimator"))?,
            n_probes: rec[5].parse().map_err(|_| bad(i + 1, "bad probe count"))?,
            seed: rec[6].parse().map_err(|_| bad(i + 1, "bad seed"))?,
        });
    }
    Ok(rows)
}

fn curve_rows(c: &ErrorCurve, exp: ExperimentKind, eps: f64, cfg: &RunConfig) -> Vec<ErrorMeasurement> {
    c.measurements(exp.name(), eps, cfg.estimator, cfg.seed)
}

fn state_rows(exp: ExperimentKind, eps: f64, times: &[f64], vals: &[f64], seed: u64) -> Vec<ErrorMeasurement> {
    times
        .iter()
        .zip(vals)
        .map(|(&t, &v)| ErrorMeasurement {
            experiment: exp.name().into(),
            eps,
            t_macro: t,
            estimate: v,
            estimator: Estimator::StateSpecific,
            n_probes: 1,
            seed,
        })
        .collect()
}

/// Deviation of the reduced Wigner function of a band state from the Wigner function of its image.
pub fn reduced_wigner_deviation(setup: &Setup, eps: f64, state: &SemiclassicalState) -> Result<f64> {
    let wb = setup.workbench(eps)?;
    let g = &wb.grid;
    let phi = make_semiclassical_state(state, g)?;
    let cut: Vec<C64> = (0..g.n())
        .map(|j| if wb.band.in_window[j] { phi.amp[j] } else { C64::new(0.0, 0.0) })
        .collect();
    let psi = embed(&wb.band, &cut);
    Ok(reduced_wigner(&psi, g)?.l1_distance(&wigner(&EffState::momentum(cut), g)?))
}

/// All rows of one experiment at one eps.
pub fn run_cell(cfg: &RunConfig, setup: &Setup, exp: ExperimentKind, eps: f64, times: &[f64]) -> Result<Vec<ErrorMeasurement>> {
    let plan = cfg.plan.plan(eps);
    let a = cfg.symbol.symbol(cfg.l);
    match exp {
        ExperimentKind::Lemma1 | ExperimentKind::TheoremMt | ExperimentKind::EffopPosition | ExperimentKind::EffopSymbol => {
            let wb = setup.workbench_with(eps, plan)?;
            let c = match exp {
                ExperimentKind::Lemma1 => lemma1_leakage(setup, &wb, times, cfg.probes, cfg.seed)?,
                ExperimentKind::TheoremMt => theorem_mt(setup, &wb, times, cfg.probes, cfg.seed)?,
                ExperimentKind::EffopPosition => {
                    observable_error(setup, &wb, &Observable::Position, times, cfg.probes, cfg.seed)?
                }
                _ => observable_error(setup, &wb, &Observable::Symbol(a), times, cfg.probes, cfg.seed)?,
            };
            Ok(curve_rows(&c, exp, eps, cfg))
        }
        ExperimentKind::Egorov => {
            let g = GridSpec::new(cfg.l, eps)?;
            let e = analytic_dispersion();
            let vals = times
                .iter()
                .map(|&t| egorov_error(&g, &e, &cfg.potential, &a, t, cfg.probes, cfg.seed, plan))
                .collect::<Result<Vec<f64>>>()?;
            Ok(times
                .iter()
                .zip(vals)
                .map(|(&t, v)| ErrorMeasurement {
                    experiment: exp.name().into(),
                    eps,
                    t_macro: t,
                    estimate: v,
                    estimator: Estimator::RandomSup,
                    n_probes: cfg.probes,
                    seed: cfg.seed,
                })
                .collect())
        }
        ExperimentKind::Wavepacket | ExperimentKind::Localized | ExperimentKind::Wkb | ExperimentKind::WignerWeak => {
            let g = GridSpec::new(cfg.l, eps)?;
            let st = exp.state().expect("state experiment");
            let vals = times
                .iter()
                .map(|&t| {
                    if exp == ExperimentKind::WignerWeak {
                        weak_error(&st, &a, t, &g, &cfg.potential, plan)
                    } else {
                        distribution_error(&st, &a, t, &g, &cfg.potential, plan)
                    }
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(state_rows(exp, eps, times, &vals, cfg.seed))
        }
        ExperimentKind::ReducedWigner => {
            let st = exp.state().expect("state experiment");
            let v = reduced_wigner_deviation(setup, eps, &st)?;
            Ok(state_rows(exp, eps, &[0.0], &[v], cfg.seed))
        }
    }
}

/// Runs every (eps, t) cell, fits slopes and writes the configured outputs.
pub fn run_sweep(cfg: &RunConfig, exp: ExperimentKind) -> Result<SweepResult> {
    let errs = cfg.hypothesis_errors(Some(exp));
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let setup = cfg.setup()?;
    let times = cfg.times(exp)?;
    if exp.probe_based() && cfg.probes == 0 {
        return Err(Error::Config(vec!["experiment.probes must be at least 1".into()]));
    }
    let mut rows = vec![];
    for &eps in &cfg.eps_list {
        match run_cell(cfg, &setup, exp, eps, &times) {
            Ok(r) => rows.extend(r),
            Err(err) => {
                let msg = format!("experiment={}, eps={eps}: {err}", exp.name());
                if let Some(p) = &cfg.csv {
                    write_csv(p, &rows, Some(&msg))?;
                }
                return Err(Error::Config(vec![format!("cell failed: {msg}")]));
            }
        }
    }
    let result = SweepResult {
        experiment: exp.name().into(),
        slopes: slopes_by_time(&rows),
        rows,
        config_hash: cfg.hash(),
        seed: cfg.seed,
    };
    if let Some(p) = &cfg.csv {
        write_csv(p, &result.rows, None)?;
    }
    if let Some(p) = &cfg.json {
        std::fs::write(p, serde_json::to_string_pretty(&result.json()).expect("json") + "\n")?;
    }
    Ok(result)
}

/// Re-fits slopes from an existing CSV, grouped by experiment.
pub fn report(rows: &[ErrorMeasurement]) -> Vec<(String, Vec<SlopeEntry>)> {
    let mut names: Vec<String> = rows.iter().map(|r| r.experiment.clone()).collect();
    names.sort();
    names.dedup();
    names
        .into_iter()
        .map(|n| {
            let sub: Vec<ErrorMeasurement> = rows.iter().filter(|r| r.experiment == n).cloned().collect();
            (n, slopes_by_time(&sub))
        })
        .collect()
}

pub fn format_slope(s: &SlopeEntry) -> String {
    match &s.outcome {
        SlopeOutcome::Fit(f) => format!("t = {:.4}: slope {:.3}, intercept {:.3}, R^2 {:.4}", s.t, f.slope, f.intercept, f.r2),
        SlopeOutcome::Degenerate => format!("t = {:.4}: degenerate: zeros", s.t),
        SlopeOutcome::Failed(e) => format!("t = {:.4}: failed: {e}", s.t),
    }
}

/// One self-test assertion.
#[derive(Clone, Debug)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tol: f64,
}

impl Check {
    fn new(name: &str, value: f64, tol: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tol,
        }
    }
    pub fn pass(&self) -> bool {
        self.value <= self.tol
    }
}

/// Exact algebraic identities on the reference model.
pub fn exact_identities() -> Result<Vec<Check>> {
    let cfg = RunConfig::default();
    let g = GridSpec::new(cfg.l, 1.0 / 16.0)?;
    let model = cfg.model.clone();
    let gm = crate::fiber::default_gap_min(&model, &g, &cfg.lg)?;
    let band = compute_band(&model, &g, &cfg.lg, gm)?;
    let nodes = cfg.lg.nodes(&g);

    let mut b1 = 0.0f64;
    let mut proj = 0.0f64;
    for &j in &nodes {
        b1 = b1.max(check_b_identity(&band, &model, j)?);
        let (a, b, c) = projector_defects(&band, j);
        proj = proj.max(a).max(b).max(c);
    }

    let v = &cfg.potential;
    let mut stencil = 0.0f64;
    let mut unitary = 0.0f64;
    let mut iso = 0.0f64;
    for k in 0..4 {
        let phi = random_probe(&g, 7, k, None)?;
        let a = g.momentum_to_position(&v.apply_veps(&g, &phi.amp, 1)?);
        let x = g.momentum_to_position(&phi.amp);
        let b: Vec<C64> = (0..g.n()).map(|m| v.value(g.x_macro(m)) * x[m]).collect();
        stencil = stencil.max(norm(&sub(&a, &b)));
        unitary = unitary
            .max((norm(&x) - 1.0).abs())
            .max(norm(&sub(&g.position_to_momentum(&x), &phi.amp)));
        let w = random_probe(&g, 7, k, Some(&cfg.lg))?;
        let back = u_map(&band, &u_map_adjoint(&band, &w)?)?;
        iso = iso
            .max(norm(&sub(&back.amp, &w.amp)))
            .max((u_map_adjoint(&band, &w)?.norm() - 1.0).abs());
    }
    Ok(vec![
        Check::new("[B, H0] = Q0 (grad P0) P0 on band-window nodes", b1, 1e-10),
        Check::new("projector algebra P^2 = P, PQ = 0, P + Q = 1", proj, 1e-13),
        Check::new("potential stencil equals position multiplication", stencil, 1e-12),
        Check::new("momentum/position transform unitarity", unitary, 1e-12),
        Check::new("band map isometry U U* = 1", iso, 1e-12),
    ])
}

/// Exactly solvable cases of the experiments.
pub fn exact_cases() -> Result<Vec<Check>> {
    let cfg = RunConfig::default();
    let l = cfg.l;
    let free = Setup::new(cfg.model.clone(), PotentialSpec::zero(l), cfg.geometry())?;
    let mut leak = 0.0f64;
    let mut mt = 0.0f64;
    for eps in [1.0 / 8.0, 1.0 / 16.0] {
        let wb = free.workbench(eps)?;
        let ts = t_grid(0.8, 4);
        let a = lemma1_leakage(&free, &wb, &ts, 4, cfg.seed)?;
        let b = theorem_mt(&free, &wb, &ts, 4, cfg.seed)?;
        for i in 0..ts.len() {
            leak = leak.max(a.sup_at(i));
            mt = mt.max(b.sup_at(i));
        }
    }
    let g = GridSpec::new(l, 1.0 / 16.0)?;
    let dec = FiberModel::nelson(1.0, 1.0, 0.0, 4)?;
    let band = compute_band(&dec, &g, &cfg.lg, crate::fiber::default_gap_min(&dec, &g, &cfg.lg)?)?;
    let m2 = MomentumWindow::new(0.0, 0.6)?;
    let m3 = MomentumWindow::new(0.0, 0.9)?;
    let od = offdiag_leading_defect(&dec, &band, &cfg.potential, &g, &m2, &m3, 4, cfg.seed)?;
    let gp = TrigSeries::cos_p(l).symbol();
    let eg = egorov_error(&g, &analytic_dispersion(), &PotentialSpec::zero(l), &gp, 1.0, 4, cfg.seed, PropagatorPlan::exact())?;
    let reference = cfg.setup()?;
    let wb = reference.workbench(1.0 / 16.0)?;
    let ob = observable_error(&reference, &wb, &Observable::Symbol(gp), &[0.0], 4, cfg.seed)?.sup_at(0);
    let phi = make_semiclassical_state(&SemiclassicalState::wavepacket(), &g)?;
    let w = wigner(&phi, &g)?;
    let x = g.momentum_to_position(&phi.amp);
    let mut marg = 0.0f64;
    for (m, v) in w.position_marginal().iter().enumerate() {
        marg = marg.max((v - x[m].norm_sqr()).abs());
    }
    for (j, v) in w.momentum_marginal().iter().enumerate() {
        marg = marg.max((v - phi.amp[j].norm_sqr()).abs());
    }
    let synth: Vec<(f64, f64)> = [1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0]
        .iter()
        .map(|&e: &f64| (e, 3.0 * e * e))
        .collect();
    let fit = fit_slope(&synth)?;
    Ok(vec![
        Check::new("V = 0: momentum leakage", leak, 1e-10),
        Check::new("V = 0: full vs effective evolution", mt, 1e-10),
        Check::new("g = 0: off-diagonal block (H - H_diag) on interior band states", od, 1e-13),
        Check::new("V = 0, a = cos p: Egorov defect", eg, 1e-8),
        Check::new("t = 0, a = cos p: observable defect", ob, 1e-10),
        Check::new("Wigner marginals", marg, 1e-10),
        Check::new("slope fit of 3 eps^2", (fit.slope - 2.0).abs().max((fit.r2 - 1.0).abs()), 1e-12),
    ])
}

/// All self-test assertions.
pub fn selftest() -> Result<Vec<Check>> {
    let mut v = exact_identities()?;
    v.extend(exact_cases()?);
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let c = parse_config("experiment.name = lemma1\n").unwrap();
        assert_eq!(c.eps_list.len(), 4);
        assert_eq!(c.probes, 16);
        assert_eq!(c.model, FiberModel::reference());
        assert_eq!(c.potential, PotentialSpec::reference(8.0));
        assert_eq!(c.experiment, Some(ExperimentKind::Lemma1));
    }

    #[test]
    fn comments_lists_and_complex_coefficients() {
        let text = "# header\ngrid.eps_list = 1/8, 1/16, 1/32, 1/64  # four\npotential.v1 = 0.05, 0.0\npotential.v2 = 0.0,0.02\n";
        let c = parse_config(text).unwrap();
        assert_eq!(c.eps_list, vec![0.125, 0.0625, 0.03125, 0.015625]);
        let x = 0.7;
        let k = 2.0 * std::f64::consts::PI / 8.0;
        let expect = 0.1 * (k * x).cos() - 0.04 * (2.0 * k * x).sin();
        assert!((c.potential.value(x) - expect).abs() < 1e-14);
    }

    #[test]
    fn three_eps_values_are_rejected() {
        let err = parse_config("grid.eps_list = 1/8,1/16,1/32\nexperiment.name = theorem-mt\n").unwrap_err();
        assert!(err.to_string().contains("need >= 4 eps values") || err.to_string().contains(">= 4 eps"), "{err}");
    }

    #[test]
    fn touching_window_names_delta() {
        let err = parse_config("windows.initial_center = 0.8\n").unwrap_err().to_string();
        assert!(err.contains("delta"), "{err}");
    }

    #[test]
    fn all_violations_are_collected() {
        let text = "grid.bogus = 1\nmodel.g = abc\nmodel.gap0 = 1\nexperiment.probes = -3\ngrid.L = 8\ngrid.L = 9\n";
        match parse_config(text) {
            Err(Error::Config(v)) => {
                assert!(v.len() >= 5, "{v:?}");
                assert!(v.iter().any(|m| m.contains("unknown key `grid.bogus`")));
                assert!(v.iter().any(|m| m.contains("duplicate")));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn t_max_beyond_confinement_is_refused() {
        let err = parse_config("experiment.name = lemma1\nexperiment.t_max = 5\n").unwrap_err().to_string();
        assert!(err.contains("T_m^delta"), "{err}");
    }

    #[test]
    fn hash_depends_on_content_only() {
        let a = parse_config("experiment.seed = 3\n# c\n").unwrap();
        let b = parse_config("experiment.seed=3").unwrap();
        let c = parse_config("experiment.seed = 4").unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn fit_of_exact_power_law() {
        let es = [1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0];
        let f = fit_slope(&es.iter().map(|&e| (e, 3.0 * e * e)).collect::<Vec<_>>()).unwrap();
        assert!((f.slope - 2.0).abs() <= 1e-12 && (f.r2 - 1.0).abs() <= 1e-12);
        assert!((f.intercept - 3f64.ln()).abs() <= 1e-12);
    }

    #[test]
    fn fit_of_perturbed_linear_law() {
        let es = [1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0];
        let f = fit_slope(&es.iter().map(|&e| (e, e + 0.01 * e * e)).collect::<Vec<_>>()).unwrap();
        // oracle: d log(e + c e^2) / d log e = 1 + c e / (1 + c e) lies in (1, 1.0013)
        assert!(f.slope > 1.0 && f.slope < 1.0013, "{}", f.slope);
    }

    #[test]
    fn fit_rejects_zeros_and_short_input() {
        let rows = [(0.125, 1.0), (0.0625, 0.0), (0.03125, 0.1), (0.015625, 0.01)];
        assert!(matches!(fit_slope(&rows), Err(Error::Fit(_))));
        assert!(matches!(fit_slope(&rows[..2]), Err(Error::Fit(_))));
    }

    fn row(eps: f64, t: f64, v: f64) -> ErrorMeasurement {
        ErrorMeasurement {
            experiment: "x".into(),
            eps,
            t_macro: t,
            estimate: v,
            estimator: Estimator::RandomSup,
            n_probes: 4,
            seed: 1,
        }
    }

    #[test]
    fn zero_estimates_are_marked_degenerate() {
        let es = [1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0];
        let mut rows: Vec<_> = es.iter().map(|&e| row(e, 0.5, 1e-15)).collect();
        rows.extend(es.iter().map(|&e| row(e, 1.0, e)));
        let s = slopes_by_time(&rows);
        assert_eq!(s[0].outcome, SlopeOutcome::Degenerate);
        assert!(matches!(s[1].outcome, SlopeOutcome::Fit(f) if (f.slope - 1.0).abs() < 1e-12));
        let j = slope_json(&s[0]);
        assert_eq!(j["slope"], "degenerate: zeros");
    }

    #[test]
    fn csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let rows = vec![row(0.125, 0.1, 1.25e-3), row(0.0625, 0.1, 3.0e-4)];
        write_csv(&p, &rows, Some("experiment=x, eps=0.03125: boom")).unwrap();
        let back = read_csv(&p).unwrap();
        assert_eq!(back, rows);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with(CSV_HEADER));
        assert!(text.trim_end().ends_with("boom"));
    }

    #[test]
    fn lemma1_without_potential_is_degenerate() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("a.csv");
        let text = format!(
            "grid.eps_list = 1/8,1/16,1/32,1/64\npotential.v0 = 0\nexperiment.probes = 4\nexperiment.t_points = 2\nexperiment.t_max = 0.8\noutput.csv = {}\n",
            csv.display()
        );
        let cfg = parse_config(&text).unwrap();
        let r = run_sweep(&cfg, ExperimentKind::Lemma1).unwrap();
        assert!(r.rows.iter().all(|r| r.estimate <= 1e-12));
        assert!(r.slopes.iter().all(|s| s.outcome == SlopeOutcome::Degenerate));
        let first = std::fs::read(&csv).unwrap();
        run_sweep(&cfg, ExperimentKind::Lemma1).unwrap();
        assert_eq!(first, std::fs::read(&csv).unwrap());
    }

    #[test]
    fn selftest_passes() {
        for c in selftest().unwrap() {
            assert!(c.pass(), "{}: {:e} > {:e}", c.name, c.value, c.tol);
        }
    }
}
