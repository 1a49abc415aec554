//! Right-hand side on a periodic grid, in two passes.
//!
//! The first pass builds the first-order fields at every site from first
//! differences of `(g, J)`: the pack values, `Γ`, the Chern coefficients,
//! `ψ^{3,0+0,3}`, `ϑ^♯` and the gauge field `X`. The second pass
//! differences those fields again and hands values and partials to the same
//! assembly used at a jet. Both passes are maps over sites.

use rayon::prelude::*;

use super::rhs::{add_gauge_terms, assemble_terms, rhs_from_traces, FieldAt, FlowRhs, FlowSettings};
use crate::chern::{christoffel_from_partials, chern_coeffs, curvature_parts, ricci_traces};
use crate::field::GridState;
use crate::structures::FirstOrderPack;
use crate::tensor::{matmul, project2, project3, sum, sym_skew, Part2, Part3, SymPart, Tensor, Variance};
use crate::Result;

use Variance::{Down, Up};

/// The right-hand side at one site, with the traces the monitors read.
/// `rc` is the symmetric part of the differenced Ricci tensor.
#[derive(Clone, Debug)]
pub struct SiteRhs {
    pub rhs: FlowRhs,
    pub rc: Tensor,
    pub p: Tensor,
}

struct FirstPass {
    pack: FirstOrderPack<f64>,
    ups: Tensor,
}

/// Component layout of the differenced first-pass array at each site:
/// `Γ`, `Υ`, `ψ^{3,0+0,3}` (each `n³`), `ω` (`n²`), `ϑ^♯`, `X` (each `n`).
struct Layout {
    n: usize,
}

impl Layout {
    fn ncomp(&self) -> usize {
        let n = self.n;
        3 * n * n * n + n * n + 2 * n
    }

    fn split(&self, v: &[f64]) -> [Tensor; 6] {
        let n = self.n;
        let (c3, c2) = (n * n * n, n * n);
        let mut at = 0;
        let mut take = |len: usize, var: &[Variance]| {
            let t = Tensor::from_vec(n, var, v[at..at + len].to_vec()).expect("layout");
            at += len;
            t
        };
        [
            take(c3, &[Down, Down, Up]),
            take(c3, &[Down, Down, Up]),
            take(c3, &[Down, Down, Down]),
            take(c2, &[Down, Down]),
            take(n, &[Up]),
            take(n, &[Up]),
        ]
    }
}

fn partials_of(state: &GridState, data: &[f64], ncomp: usize, site: usize) -> Vec<Vec<f64>> {
    (0..state.n).map(|c| state.fd_first(data, ncomp, site, c)).collect()
}

fn tensor_partials(state: &GridState, data: &[f64], site: usize, var: &[Variance]) -> Vec<Tensor> {
    let k = state.ncomp();
    partials_of(state, data, k, site)
        .into_iter()
        .map(|d| Tensor::from_vec(state.n, var, d).expect("component count"))
        .collect()
}

fn first_pass(state: &GridState, settings: &FlowSettings, site: usize) -> Result<(FirstPass, Vec<f64>)> {
    let n = state.n;
    let (g, j) = (state.g_at(site), state.j_at(site));
    let dg = tensor_partials(state, &state.g, site, &[Down, Down]);
    let dj = tensor_partials(state, &state.j, site, &[Down, Up]);
    let pack = FirstOrderPack::from_partials(&g, &j, &dg, &dj)?;
    let gamma = christoffel_from_partials(&dg, &pack.g_inv);
    let ups = chern_coeffs(&gamma, &pack.g_inv, &pack.theta);
    let psi_pure = project3(&pack.psi, Part3::Pure, &pack.complex())?;
    let gi = &pack.g_inv;
    let bg = &settings.background;
    let mut packed = Vec::with_capacity(Layout { n }.ncomp());
    packed.extend_from_slice(gamma.comps());
    packed.extend_from_slice(ups.comps());
    packed.extend_from_slice(psi_pure.comps());
    packed.extend_from_slice(pack.omega.comps());
    packed.extend((0..n).map(|p| sum(n, |q| gi[[p, q]] * pack.lee[[q]])));
    packed.extend((0..n).map(|q| {
        let mut acc = 0.0;
        for k in 0..n {
            for l in 0..n {
                acc += gi[[k, l]] * (gamma[[k, l, q]] - bg.coeff(k, l, q));
            }
        }
        acc
    }));
    Ok((FirstPass { pack, ups }, packed))
}

/// Projects `(∂g/∂t, ∂J/∂t)` onto the tangent space of `{J² = −1, g = g(J·,J·)}`:
/// `∂J/∂t` keeps its `J`-anti part `½(K + JKJ)`, and the part of `∂g/∂t` odd
/// under `h ↦ JhJᵀ` is replaced by the value the compatibility constraint fixes.
/// Both are the identity on tangent vectors.
fn restore_tangency(rhs: &mut FlowRhs, g: &Tensor, j: &Tensor) {
    let n = g.dim();
    let k = &rhs.dj_dt;
    let jkj = matmul(&matmul(j, k), j);
    let k = Tensor::from_fn(n, &[Down, Up], |ix| 0.5 * (k[[ix[0], ix[1]]] + jkj[[ix[0], ix[1]]]));
    let conj = |h: &Tensor| {
        Tensor::from_fn(n, &[Down, Down], |ix| {
            sum(n, |a| sum(n, |b| j[[ix[0], a]] * h[[a, b]] * j[[ix[1], b]]))
        })
    };
    let dg = &rhs.dg_dt;
    let tdg = conj(dg);
    // S = K g Jᵀ + J g Kᵀ
    let kg = matmul(&k, g);
    let s = |a: usize, b: usize| sum(n, |c| kg[[a, c]] * j[[b, c]] + kg[[b, c]] * j[[a, c]]);
    rhs.dg_dt = Tensor::from_fn(n, &[Down, Down], |ix| {
        let (a, b) = (ix[0], ix[1]);
        0.5 * (dg[[a, b]] + tdg[[a, b]]) + 0.5 * s(a, b)
    });
    rhs.dj_dt = k;
}

/// Right-hand side at every site of the grid.
pub fn lattice_rhs(state: &GridState, settings: &FlowSettings) -> Result<Vec<SiteRhs>> {
    let n = state.n;
    let layout = Layout { n };
    let ncomp = layout.ncomp();
    let first: Vec<(FirstPass, Vec<f64>)> = (0..state.sites())
        .into_par_iter()
        .map(|site| first_pass(state, settings, site))
        .collect::<Result<_>>()?;
    let mut flat = Vec::with_capacity(ncomp * state.sites());
    for (_, packed) in &first {
        flat.extend_from_slice(packed);
    }
    (0..state.sites())
        .into_par_iter()
        .map(|site| {
            let (fp, packed) = &first[site];
            let v = &fp.pack;
            let vals = layout.split(packed);
            let parts: Vec<[Tensor; 6]> = partials_of(state, &flat, ncomp, site)
                .iter()
                .map(|d| layout.split(d))
                .collect();
            let field = |slot: usize| FieldAt {
                value: vals[slot].clone(),
                partials: parts.iter().map(|p| p[slot].clone()).collect(),
            };
            let g = FieldAt {
                value: v.g.clone(),
                partials: tensor_partials(state, &state.g, site, &[Down, Down]),
            };
            let j = FieldAt {
                value: v.j.clone(),
                partials: tensor_partials(state, &state.j, site, &[Down, Up]),
            };
            let gamma = field(0);
            let ups = field(1);
            let rm = curvature_parts(&gamma.value, &gamma.partials, &v.g);
            let omega_curv = curvature_parts(&ups.value, &ups.partials, &v.g);
            let tr = ricci_traces(&rm, &omega_curv, &v.g_inv, &v.omega_inv);
            // differencing Γ breaks the pair symmetry of Rc at O(h⁴); keep its symmetric part so ∂g/∂t stays symmetric
            let rc = sym_skew(&tr.rc, SymPart::Sym)?;
            let mut terms = assemble_terms(v, &g, &j, field(4).to_jets(), &field(2), &fp.ups, &settings.kappa)?;
            // ℧ is skew and J-anti-invariant through identities that differencing satisfies only to O(h⁴)
            terms.mho = sym_skew(&project2(&terms.mho, Part2::JAnti, &v.complex())?, SymPart::Skew)?;
            let unguaged = rhs_from_traces(v, &rc, &tr.p, &terms, settings.frozen_metric);
            let rhs = if settings.gauged {
                let mut r = add_gauge_terms(&unguaged, &g, &j, &field(3), &field(5), settings.frozen_metric);
                // the Lie derivatives are tangent to the constraints only through the product rule
                restore_tangency(&mut r, &v.g, &v.j);
                r
            } else {
                unguaged
            };
            Ok(SiteRhs { rhs, rc, p: tr.p })
        })
        .collect()
}
