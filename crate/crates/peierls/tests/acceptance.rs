//! Acceptance run on the reference geometry: one PASS/FAIL line per criterion.

use peierls::experiments::{
    analytic_dispersion, distribution_error, egorov_error, lemma1_leakage, make_semiclassical_state,
    observable_error, strang_audit, t_grid, theorem_mt, weak_error, wigner, ErrorCurve, Geometry, Observable,
    SemiclassicalState, Setup, StrangAudit, Workbench,
};
use peierls::fiber::{compute_band, grad_p0, grad_p0_at, overlap_defect, FiberEig, FiberModel};
use peierls::grid::{GridSpec, MomentumWindow};
use peierls::harness::{exact_cases, exact_identities, fit_slope, reduced_wigner_deviation, SlopeFit};
use peierls::linalg::max_abs;
use peierls::potential::PotentialSpec;
use peierls::propagators::PropagatorPlan;
use peierls::weyl::{commutator_poisson_residual, moyal_remainder, product_norm, PhaseSpaceSymbol, TrigSeries};
use peierls::{Result, C64};
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::Instant;

const L: f64 = 8.0;
const EPS: [f64; 4] = [1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0];
const PROBES: usize = 16;
const SEED: u64 = 1;
const T_POINTS: usize = 8;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn setup() -> &'static Setup {
    static S: OnceLock<Setup> = OnceLock::new();
    S.get_or_init(|| Setup::reference().expect("reference setup"))
}

fn workbenches() -> &'static Vec<Workbench> {
    static W: OnceLock<Vec<Workbench>> = OnceLock::new();
    W.get_or_init(|| EPS.iter().map(|&e| setup().workbench(e).expect("workbench")).collect())
}

fn fit(vals: &[f64]) -> Result<SlopeFit> {
    fit_slope(&EPS.iter().copied().zip(vals.iter().copied()).collect::<Vec<_>>())
}

fn show(vals: &[f64]) -> String {
    vals.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>().join(", ")
}

fn describe(name: &str, vals: &[f64], f: &SlopeFit) -> String {
    format!("{name} [{}] slope {:.3} R^2 {:.4}", show(vals), f.slope, f.r2)
}

fn checks(list: Vec<peierls::harness::Check>) -> Result<Outcome> {
    let pass = list.iter().all(|c| c.pass());
    let detail = list
        .iter()
        .map(|c| format!("{}{} {:.1e}/{:.0e}", if c.pass() { "" } else { "!" }, c.name, c.value, c.tol))
        .collect::<Vec<_>>()
        .join("; ");
    outcome(pass, detail)
}

fn criterion1() -> Result<Outcome> {
    checks(exact_identities()?)
}

fn criterion2() -> Result<Outcome> {
    let mut list = exact_cases()?;
    list.retain(|c| c.name.starts_with("V = 0"));
    let g0 = Setup::new(FiberModel::nelson(1.0, 1.0, 0.0, 4)?, PotentialSpec::reference(L), Geometry::default())?;
    let times = t_grid(g0.horizon()?, T_POINTS);
    let mut worst = vec![];
    for &e in &EPS {
        let wb = g0.workbench(e)?;
        let c = theorem_mt(&g0, &wb, &times, PROBES, SEED)?;
        worst.push(c.uniform_sup_at(times.len() - 1));
    }
    let value = worst.iter().copied().fold(0.0, f64::max);
    let mut out = checks(list)?;
    out.pass &= value <= 1e-9;
    out.detail += &format!("; g = 0 theorem error per eps [{}] vs 1e-9", show(&worst));
    Ok(out)
}

fn criterion3() -> Result<Outcome> {
    let g = GridSpec::new(L, 1.0 / 16.0)?;
    let m = FiberModel::twolevel(0.7, 0.6, 0.3)?;
    let w = MomentumWindow::new(0.0, 1.2)?;
    let band = compute_band(&m, &g, &w, 0.35)?;
    let mut closed = 0.0f64;
    for j in w.nodes(&g) {
        let (_, _, dp) = m.twolevel_closed_form(band.p[j]).expect("two-level model");
        let gp = grad_p0(&band, &m, j)?;
        for a in 0..2 {
            for c in 0..2 {
                closed = closed.max((gp[[a, c]] - C64::from(dp[a][c])).norm());
            }
        }
    }
    let mut order = f64::INFINITY;
    for model in [FiberModel::reference(), m] {
        let p = 0.41;
        let exact = grad_p0_at(&model, p)?;
        let err = |h: f64| -> Result<f64> {
            let d = (FiberEig::at(&model, p + h)?.p0() - FiberEig::at(&model, p - h)?.p0()).mapv(|z| z / (2.0 * h));
            Ok(max_abs(&(d - &exact)))
        };
        order = order.min((err(0.02)? / err(0.01)?).log2());
    }
    outcome(
        closed <= 1e-10 && order >= 1.9,
        format!("closed-form match {closed:.2e} (tol 1e-10); difference order {order:.3} (>= 1.9)"),
    )
}

fn criterion4() -> Result<Outcome> {
    let m = FiberModel::reference();
    let w = MomentumWindow::new(0.0, 1.2)?;
    let mut vals = vec![];
    for &e in &EPS {
        let g = GridSpec::new(L, e)?;
        let band = compute_band(&m, &g, &w, 0.1)?;
        vals.push(overlap_defect(&band, g.nearest_node(0.3), 1)?);
    }
    let f = fit(&vals)?;
    outcome(f.slope >= 1.9, describe("overlap defect, one-node shift at p = 0.3", &vals, &f))
}

fn criterion5() -> Result<Outcome> {
    let a = TrigSeries::sin_x_cos_p(L).symbol();
    let b = TrigSeries::cos_x(L).symbol().mul(&TrigSeries::sin_p(L).symbol());
    let left = PhaseSpaceSymbol::bump(L, -1.5, 1.0, 0.0, 1.0);
    let right = PhaseSpaceSymbol::bump(L, 1.5, 1.0, 0.3, 1.0);
    let mut rows = vec![vec![]; 4];
    for &e in &EPS {
        let g = GridSpec::new(L, e)?;
        rows[0].push(commutator_poisson_residual(&a, &b, &g)?);
        rows[1].push(moyal_remainder(&a, &b, 0, &g)?);
        rows[2].push(moyal_remainder(&a, &b, 1, &g)?);
        rows[3].push(product_norm(&left, &right, &g)?);
    }
    let names = ["commutator vs bracket", "product rule n = 0", "product rule n = 1", "disjoint supports"];
    let need = [1.8, 0.9, 1.8, 2.8];
    let mut pass = true;
    let mut detail = vec![];
    for i in 0..4 {
        let f = fit(&rows[i])?;
        pass &= f.slope >= need[i];
        detail.push(format!("{} (>= {})", describe(names[i], &rows[i], &f), need[i]));
    }
    outcome(pass, detail.join("; "))
}

fn criterion6() -> Result<Outcome> {
    let a = TrigSeries::sin_x_cos_p(L).symbol();
    let v = PotentialSpec::cosines(L, &[(1, 0.1)]);
    let e = analytic_dispersion();
    let mut vals = vec![];
    for &eps in &EPS {
        let g = GridSpec::new(L, eps)?;
        vals.push(egorov_error(&g, &e, &v, &a, 1.0, PROBES, SEED, PropagatorPlan::exact())?);
    }
    let f = fit(&vals)?;
    outcome(f.slope >= 1.8 && f.r2 >= 0.98, describe("Egorov defect at t = 1", &vals, &f))
}

fn confined_times() -> Result<Vec<f64>> {
    Ok(t_grid(0.8 * setup().max_time()?, T_POINTS))
}

fn criterion7() -> Result<Outcome> {
    let times = confined_times()?;
    let mut vals = vec![];
    for wb in workbenches() {
        vals.push(lemma1_leakage(setup(), wb, &times, PROBES, SEED)?.sup_at(times.len() - 1));
    }
    let f = fit(&vals)?;
    outcome(
        f.slope >= 1.8,
        describe(&format!("leakage at t = {:.4}", times[times.len() - 1]), &vals, &f),
    )
}

fn criterion8() -> Result<Outcome> {
    let times = t_grid(setup().horizon()?, T_POINTS);
    let last = times.len() - 1;
    let mut uniform = vec![];
    let mut pointwise = vec![];
    for wb in workbenches() {
        let c: ErrorCurve = theorem_mt(setup(), wb, &times, PROBES, SEED)?;
        uniform.push(c.uniform_sup_at(last));
        pointwise.push(c.sup_at(last));
    }
    let fu = fit(&uniform)?;
    let fp = fit(&pointwise)?;
    outcome(
        fu.slope >= 0.9 && fu.r2 >= 0.98,
        format!(
            "{} (>= 0.9, R^2 >= 0.98); {}",
            describe(&format!("sup over t <= {:.3}", times[last]), &uniform, &fu),
            describe("pointwise", &pointwise, &fp)
        ),
    )
}

fn criterion9() -> Result<Outcome> {
    let times = confined_times()?;
    let last = times.len() - 1;
    let sym = Observable::Symbol(TrigSeries::sin_x_cos_p(L).symbol());
    let (mut xs, mut ss, mut x0) = (vec![], vec![], vec![]);
    for wb in workbenches() {
        xs.push(observable_error(setup(), wb, &Observable::Position, &times, PROBES, SEED)?.sup_at(last));
        ss.push(observable_error(setup(), wb, &sym, &times, PROBES, SEED)?.sup_at(last));
        x0.push(observable_error(setup(), wb, &Observable::Position, &[0.0], PROBES, SEED)?.sup_at(0));
    }
    let (fx, fs, f0) = (fit(&xs)?, fit(&ss)?, fit(&x0)?);
    let positive = x0.iter().all(|&v| v > 1e-8);
    outcome(
        fx.slope >= 0.9 && fs.slope >= 0.9 && f0.slope >= 0.9 && positive,
        format!(
            "{}; {}; {}",
            describe("X at 0.8 T", &xs, &fx),
            describe("sin X cos p at 0.8 T", &ss, &fs),
            describe("X at t = 0", &x0, &f0)
        ),
    )
}

fn criterion10() -> Result<Outcome> {
    let a = TrigSeries::sin_x_cos_p(L).symbol();
    let v = PotentialSpec::reference(L);
    let plan = PropagatorPlan::exact();
    let kinds = [
        ("wavepacket", SemiclassicalState::wavepacket(), 0.4),
        ("localized", SemiclassicalState::localized(), 0.9),
        ("wkb", SemiclassicalState::wkb(), 0.4),
    ];
    let mut pass = true;
    let mut detail = vec![];
    for (name, st, need) in &kinds {
        let mut vals = vec![];
        for &e in &EPS {
            vals.push(distribution_error(st, &a, 1.0, &GridSpec::new(L, e)?, &v, plan)?);
        }
        let f = fit(&vals)?;
        pass &= f.slope >= *need;
        detail.push(format!("{} (>= {need})", describe(name, &vals, &f)));
    }
    let wp = SemiclassicalState::wavepacket();
    let (mut weak, mut red) = (vec![], vec![]);
    let mut marg = 0.0f64;
    for &e in &EPS {
        let g = GridSpec::new(L, e)?;
        weak.push(weak_error(&wp, &a, 1.0, &g, &v, plan)?);
        red.push(reduced_wigner_deviation(setup(), e, &wp)?);
        let phi = make_semiclassical_state(&wp, &g)?;
        let w = wigner(&phi, &g)?;
        let x = g.momentum_to_position(&phi.amp);
        for (m, d) in w.position_marginal().iter().enumerate() {
            marg = marg.max((d - x[m].norm_sqr()).abs());
        }
        for (j, d) in w.momentum_marginal().iter().enumerate() {
            marg = marg.max((d - phi.amp[j].norm_sqr()).abs());
        }
    }
    let (fw, fr) = (fit(&weak)?, fit(&red)?);
    pass &= fw.slope >= 0.4 && fr.slope >= 0.9 && marg <= 1e-10;
    detail.push(format!("{} (>= 0.4)", describe("weak", &weak, &fw)));
    detail.push(format!("{} (>= 0.9)", describe("reduced Wigner", &red, &fr)));
    detail.push(format!("marginals {marg:.1e} (tol 1e-10)"));
    outcome(pass, detail.join("; "))
}

fn criterion11() -> Result<Outcome> {
    let eps = 1.0 / 16.0;
    let g = GridSpec::new(L, eps)?;
    let a = TrigSeries::sin_x_cos_p(L).symbol();
    let v = PotentialSpec::reference(L);
    let wb = &workbenches()[1];
    let confined = confined_times()?;
    let tc = [*confined.last().unwrap()];
    let th = [setup().horizon()?];
    let audits: Vec<(&str, StrangAudit)> = vec![
        (
            "egorov",
            strang_audit(eps, |p| {
                egorov_error(&g, &analytic_dispersion(), &PotentialSpec::cosines(L, &[(1, 0.1)]), &a, 1.0, 4, SEED, p)
            })?,
        ),
        (
            "lemma1",
            strang_audit(eps, |p| Ok(lemma1_leakage(setup(), &wb.with_plan(p), &tc, 4, SEED)?.sup_at(0)))?,
        ),
        (
            "theorem",
            strang_audit(eps, |p| Ok(theorem_mt(setup(), &wb.with_plan(p), &th, 4, SEED)?.sup_at(0)))?,
        ),
        (
            "observable X",
            strang_audit(eps, |p| {
                Ok(observable_error(setup(), &wb.with_plan(p), &Observable::Position, &tc, 4, SEED)?.sup_at(0))
            })?,
        ),
        (
            "wavepacket",
            strang_audit(eps, |p| distribution_error(&SemiclassicalState::wavepacket(), &a, 1.0, &g, &v, p))?,
        ),
    ];
    let mut pass = true;
    let mut detail = vec![];
    for (name, au) in &audits {
        pass &= au.deviation() <= 1e-6 && au.halving_change() < 0.05;
        detail.push(format!(
            "{name}: |strang - exact| {:.1e}, halving change {:.1e}",
            au.deviation(),
            au.halving_change()
        ));
    }
    outcome(pass, detail.join("; "))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Result<Outcome>); 11] = [
        ("exact identities", criterion1),
        ("exact degenerate cases", criterion2),
        ("projector gradient", criterion3),
        ("eigenvector overlap defect", criterion4),
        ("Moyal expansion", criterion5),
        ("Egorov", criterion6),
        ("momentum confinement", criterion7),
        ("effective dynamics", criterion8),
        ("effective observables", criterion9),
        ("semiclassical distributions", criterion10),
        ("time-integration hygiene", criterion11),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (pass, detail) = match f() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {}: {} ({:.1} s) {}",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            name,
            start.elapsed().as_secs_f64(),
            detail
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
