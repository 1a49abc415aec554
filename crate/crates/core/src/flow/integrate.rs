//! Classical four-stage Runge–Kutta in time for the grid flow.
//!
//! Monitors are taken from the first-stage evaluation of every step and one
//! final evaluation after the last step. `ω̃ = ω − ∫𝒞 dt` is accumulated
//! with the same Runge–Kutta weights as the state.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lattice::{lattice_rhs, SiteRhs};
use super::rhs::FlowSettings;
use crate::field::GridState;
use crate::structures::{exterior_d_from_partials, DVariant};
use crate::tensor::{is_positive_definite, Tensor, Variance};
use crate::{Error, Result};

/// Default `c` in the step bound `dt ≤ c·h²`.
pub const CFL_DEFAULT: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct FlowOptions {
    pub dt: f64,
    pub steps: usize,
    pub settings: FlowSettings,
    /// `c` in `dt ≤ c·h²`; larger steps run with a warning.
    pub cfl: f64,
    /// Halt once any monitor exceeds this.
    pub blowup: f64,
}

impl FlowOptions {
    pub fn new(dt: f64, steps: usize, settings: FlowSettings) -> Self {
        FlowOptions {
            dt,
            steps,
            settings,
            cfl: CFL_DEFAULT,
            blowup: 1e3,
        }
    }

    /// `dt = c·h²` with the default `c`.
    pub fn default_dt(h: f64) -> f64 {
        CFL_DEFAULT * h * h
    }
}

/// One line of the monitor time series; the CSV header uses the serde names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonitorRow {
    pub step: usize,
    pub t: f64,
    /// Largest `|J² + Id|` component over the grid.
    #[serde(rename = "J2_drift")]
    pub j2_drift: f64,
    /// Largest `|g − g(J·,J·)|` component.
    pub compat_drift: f64,
    #[serde(rename = "dP_norm")]
    pub dp_norm: f64,
    #[serde(rename = "dOmegaTilde_norm")]
    pub domega_tilde_norm: f64,
    pub max_ricci_norm: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlowReport {
    pub dt: f64,
    pub steps: usize,
    pub h: f64,
    /// `dt / h²`.
    pub cfl_ratio: f64,
    pub gauged: bool,
    pub monitors: Vec<MonitorRow>,
}

impl FlowReport {
    /// Largest pointwise constraint drift over the run.
    pub fn max_drift(&self) -> f64 {
        self.monitors
            .iter()
            .map(|m| m.j2_drift.max(m.compat_drift))
            .fold(0.0, f64::max)
    }

    /// Largest change of `‖dω̃‖` from its initial value.
    pub fn domega_tilde_change(&self) -> f64 {
        let first = self.monitors.first().map_or(0.0, |m| m.domega_tilde_norm);
        self.monitors
            .iter()
            .map(|m| (m.domega_tilde_norm - first).abs())
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for m in &self.monitors {
            out.serialize(m)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Largest component of the finite-difference exterior derivative of a
/// 2-form field stored with `n²` components per site.
fn max_exterior_d(state: &GridState, form: &[f64]) -> f64 {
    let n = state.n;
    let k = state.ncomp();
    (0..state.sites())
        .into_par_iter()
        .map(|site| {
            let partials: Vec<Tensor> = (0..n)
                .map(|c| {
                    Tensor::from_vec(n, &[Variance::Down; 2], state.fd_first(form, k, site, c)).expect("n² components")
                })
                .collect();
            exterior_d_from_partials(&partials, DVariant::Standard).max_abs()
        })
        .collect::<Vec<f64>>()
        .into_iter()
        .fold(0.0, max_nan)
}

/// `max` that keeps a NaN.
fn max_nan(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.max(b)
    }
}

fn monitor(step: usize, state: &GridState, k1: &[SiteRhs], c_int: &[f64]) -> MonitorRow {
    let (j2, compat) = state.pointwise_drift();
    let p: Vec<f64> = k1.iter().flat_map(|r| r.p.comps().iter().copied()).collect();
    let kk = state.ncomp();
    let omega_tilde: Vec<f64> = (0..state.sites())
        .flat_map(|s| {
            let w = state.omega_at(s);
            (0..kk).map(move |c| w.comps()[c]).collect::<Vec<_>>()
        })
        .zip(c_int)
        .map(|(w, c)| w - c)
        .collect();
    MonitorRow {
        step,
        t: state.t,
        j2_drift: j2,
        compat_drift: compat,
        dp_norm: max_exterior_d(state, &p),
        domega_tilde_norm: max_exterior_d(state, &omega_tilde),
        max_ricci_norm: k1.iter().map(|r| r.rc.max_abs()).fold(0.0, max_nan),
    }
}

/// `y + a·k` for `g`, `J`, and the `𝒞` integral.
fn stage(state: &GridState, k: &[SiteRhs], a: f64) -> GridState {
    let mut out = state.clone();
    let kk = state.ncomp();
    for (site, r) in k.iter().enumerate() {
        let range = site * kk..(site + 1) * kk;
        for (y, d) in out.g[range.clone()].iter_mut().zip(r.rhs.dg_dt.comps()) {
            *y += a * d;
        }
        for (y, d) in out.j[range].iter_mut().zip(r.rhs.dj_dt.comps()) {
            *y += a * d;
        }
    }
    out
}

fn check_state(state: &GridState) -> std::result::Result<(), String> {
    if state.g.iter().chain(&state.j).any(|x| !x.is_finite()) {
        return Err("non-finite value in the state".into());
    }
    let k = state.ncomp();
    for site in 0..state.sites() {
        if !is_positive_definite(state.n, &state.g[site * k..(site + 1) * k]) {
            return Err(format!("metric lost positivity at site {site}"));
        }
    }
    Ok(())
}

pub fn integrate_flow(state: GridState, opts: &FlowOptions) -> Result<(GridState, FlowReport)> {
    integrate_flow_with(state, opts, |_| {})
}

/// [`integrate_flow`], handing each monitor row to `on_row` as it is taken.
pub fn integrate_flow_with(
    mut state: GridState,
    opts: &FlowOptions,
    mut on_row: impl FnMut(&MonitorRow),
) -> Result<(GridState, FlowReport)> {
    let dt = opts.dt;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Invalid(format!("time step must be positive, got {dt}")));
    }
    let h2 = state.h * state.h;
    if dt > opts.cfl * h2 {
        log::warn!(
            "dt = {dt:e} exceeds the step bound {:.3}·h² = {:e}; expect instability",
            opts.cfl,
            opts.cfl * h2
        );
    }
    let settings = &opts.settings;
    let t0 = state.t;
    let kk = state.ncomp();
    let mut c_int = vec![0.0; state.sites() * kk];
    let mut report = FlowReport {
        dt,
        steps: opts.steps,
        h: state.h,
        cfl_ratio: dt / h2,
        gauged: settings.gauged,
        monitors: Vec::with_capacity(opts.steps + 1),
    };
    let halt = |step: usize, reason: String| Error::Halted { step, reason };
    for step in 0..=opts.steps {
        let eval = |s: &GridState| lattice_rhs(s, settings).map_err(|e| halt(step, e.to_string()));
        let k1 = eval(&state)?;
        let row = monitor(step, &state, &k1, &c_int);
        on_row(&row);
        let worst = [row.j2_drift, row.compat_drift, row.dp_norm, row.domega_tilde_norm, row.max_ricci_norm]
            .into_iter()
            .fold(0.0, max_nan);
        report.monitors.push(row);
        if !(worst <= opts.blowup) {
            return Err(halt(step, format!("monitor {worst:e} past the blow-up threshold {:e}", opts.blowup)));
        }
        if step == opts.steps {
            break;
        }
        let k2 = eval(&stage(&state, &k1, 0.5 * dt))?;
        let k3 = eval(&stage(&state, &k2, 0.5 * dt))?;
        let k4 = eval(&stage(&state, &k3, dt))?;
        let w = dt / 6.0;
        let comb = |t: [&Tensor; 4], c: usize| {
            w * (t[0].comps()[c] + 2.0 * t[1].comps()[c] + 2.0 * t[2].comps()[c] + t[3].comps()[c])
        };
        for site in 0..state.sites() {
            let ks = [&k1[site].rhs, &k2[site].rhs, &k3[site].rhs, &k4[site].rhs];
            let dg = ks.map(|r| &r.dg_dt);
            let dj = ks.map(|r| &r.dj_dt);
            let dc = ks.map(|r| &r.c_term);
            for c in 0..kk {
                let i = site * kk + c;
                state.g[i] += comb(dg, c);
                state.j[i] += comb(dj, c);
                c_int[i] += comb(dc, c);
            }
        }
        state.t = t0 + (step + 1) as f64 * dt;
        check_state(&state).map_err(|r| halt(step + 1, r))?;
    }
    Ok((state, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{seed_torus_grid, JetRng, Perturbation, Stencil};
    use std::f64::consts::PI;

    fn torus(sites: usize, amplitude: f64, seed: u64) -> GridState {
        let p = Perturbation {
            amplitude,
            ..Default::default()
        };
        seed_torus_grid(4, &[sites; 4], 2.0 * PI / sites as f64, Stencil::Fourth, &p, &mut JetRng::new(seed, 0))
            .unwrap()
    }

    #[test]
    fn flat_torus_is_stationary() {
        let s = torus(5, 0.0, 0);
        let opts = FlowOptions::new(FlowOptions::default_dt(s.h), 3, FlowSettings::gauged());
        let (end, report) = integrate_flow(s.clone(), &opts).unwrap();
        assert_eq!(end.g, s.g);
        assert_eq!(end.j, s.j);
        assert_eq!(report.monitors.len(), 4);
        assert!(report.monitors.iter().all(|m| m.max_ricci_norm == 0.0 && m.dp_norm == 0.0));
    }

    #[test]
    fn perturbed_run_preserves_structure() {
        // the drift left is the Runge–Kutta error on quadratic constraints, O(dt⁴) over a run
        for settings in [FlowSettings::default(), FlowSettings::gauged()] {
            let s = torus(5, 0.05, 2);
            let opts = FlowOptions::new(0.02, 4, settings);
            let (end, report) = integrate_flow(s, &opts).unwrap();
            assert!(report.max_drift() < 1e-7, "{}", report.max_drift());
            assert!((end.t - 4.0 * opts.dt).abs() < 1e-15);
            let mut buf = Vec::new();
            report.write_csv(&mut buf).unwrap();
            let text = String::from_utf8(buf).unwrap();
            assert!(text.starts_with("step,t,J2_drift,compat_drift,dP_norm,dOmegaTilde_norm,max_ricci_norm"));
            assert_eq!(text.lines().count(), 6);
        }
    }

    #[test]
    fn rejects_bad_step_and_halts_on_blowup() {
        let s = torus(5, 0.05, 1);
        let bad = FlowOptions::new(-1.0, 2, FlowSettings::default());
        assert!(matches!(integrate_flow(s.clone(), &bad), Err(Error::Invalid(_))));
        let mut tight = FlowOptions::new(FlowOptions::default_dt(s.h), 2, FlowSettings::default());
        tight.blowup = 1e-30;
        assert!(matches!(integrate_flow(s, &tight), Err(Error::Halted { step: 0, .. })));
    }
}
