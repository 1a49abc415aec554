//! Pointwise right-hand sides of the flow at the base point of a 2-jet.
//!
//! `(∂J/∂t)_a^c = −(𝒫 − 2J·Rc)^{2,0+0,2}_{av} g^{vc} + ℧_av g^{vc}` with
//! `℧_av = κ_av − 2∇^e ψ^{3,0+0,3}_{vae} − ((L_ϑJ)^m_a g_mv)_skew`, and
//! `∂g/∂t = −2Rc`. The gauged system adds `L_X J` and `L_X g` with
//! `X^p = g^{kl}(Γ − Γ̄)_kl^p`.

use std::fmt;
use std::sync::Arc;

use crate::chern::{nabla_parts, Geometry};
use crate::field::StructureJet;
use crate::jet::Jet;
use crate::report::{residual, residual_zero, scale_of, Row, TOL_CURVATURE};
use crate::structures::{DVariant, FirstOrderPack};
use crate::tensor::{project2, project3, sum, sym_skew, AlmostComplex, Part2, Part3, SymPart, Tensor, Variance};
use crate::{Error, Result};

use Variance::{Down, Up};

/// Tolerance for the pointwise preservation identities of the right-hand side.
pub const TOL_RHS: f64 = 1e-10;

/// A tensor field known through first order at a point: its value and
/// `partials[c] = ∂_c T`.
#[derive(Clone, Debug)]
pub struct FieldAt {
    pub value: Tensor,
    pub partials: Vec<Tensor>,
}

impl FieldAt {
    pub fn from_jets(t: &Tensor<Jet>) -> Self {
        FieldAt {
            value: t.values(),
            partials: (0..t.dim()).map(|c| t.map(|x| x.grad(c))).collect(),
        }
    }

    pub fn to_jets(&self) -> Tensor<Jet> {
        let n = self.value.dim();
        let mut k = 0;
        Tensor::from_fn(n, self.value.variance(), |_| {
            let grad: Vec<f64> = self.partials.iter().map(|d| d.comps()[k]).collect();
            let v = self.value.comps()[k];
            k += 1;
            Jet::first_order(v, &grad)
        })
    }
}

/// Coordinate Lie derivative `L_V T` at the base point. `T` and `V` must be
/// valid through first order.
pub fn lie_derivative(t: &Tensor<Jet>, v: &Tensor<Jet>) -> Tensor {
    lie_parts(&FieldAt::from_jets(t), &FieldAt::from_jets(v))
}

/// [`lie_derivative`] for fields given by value and partials.
pub fn lie_parts(t: &FieldAt, v: &FieldAt) -> Tensor {
    let vals = &t.value;
    let n = vals.dim();
    let rank = vals.rank();
    let tc = vals.comps();
    let v0 = v.value.comps();
    // dv[a][k] = ∂_a V^k
    let dv: Vec<&[f64]> = v.partials.iter().map(|d| d.comps()).collect();
    let strides: Vec<usize> = (0..rank).map(|s| n.pow((rank - s - 1) as u32)).collect();
    let comps = (0..tc.len())
        .map(|r| {
            let mut acc = 0.0;
            for k in 0..n {
                acc += v0[k] * t.partials[k].comps()[r];
            }
            for (s, &st) in strides.iter().enumerate() {
                let rs = (r / st) % n;
                let base = r - rs * st;
                for k in 0..n {
                    let tv = tc[base + k * st];
                    match vals.variance()[s] {
                        Down => acc += tv * dv[rs][k],
                        Up => acc -= tv * dv[k][rs],
                    }
                }
            }
            acc
        })
        .collect();
    Tensor::from_vec(n, vals.variance(), comps).expect("component count")
}

/// What a custom κ may depend on: the lowered Nijenhuis tensor, `ψ = dω`,
/// `g` and `J`, all at the base point.
pub struct KappaInput<'a> {
    pub n_low: &'a Tensor,
    pub psi: &'a Tensor,
    pub g: &'a Tensor,
    pub j: &'a Tensor,
}

pub type KappaFn = dyn Fn(&KappaInput) -> Tensor + Send + Sync;

/// The lower-order term κ of ℧. Every evaluation is checked to be skew and
/// J-anti-invariant.
#[derive(Clone, Default)]
pub enum KappaSpec {
    #[default]
    Zero,
    Custom(Arc<KappaFn>),
}

impl fmt::Debug for KappaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KappaSpec::Zero => f.write_str("Zero"),
            KappaSpec::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// Tolerance for the κ validator.
pub const TOL_KAPPA: f64 = 1e-12;

impl KappaSpec {
    pub fn eval(&self, input: &KappaInput) -> Result<Tensor> {
        let n = input.g.dim();
        let k = match self {
            KappaSpec::Zero => return Ok(Tensor::zeros(n, &[Down, Down])),
            KappaSpec::Custom(f) => f(input),
        };
        k.expect_variance(&[Down, Down])?;
        let jc = AlmostComplex { j: input.j.clone() };
        let scale = k.max_abs().max(1.0);
        let skew = residual_zero(&sym_skew(&k, SymPart::Sym)?, scale);
        let anti = residual_zero(&project2(&k, Part2::JInv, &jc)?, scale);
        if !(skew <= TOL_KAPPA && anti <= TOL_KAPPA) {
            return Err(Error::Invalid(format!(
                "κ must be skew and J-anti-invariant (symmetric part {skew:e}, (1,1) part {anti:e})"
            )));
        }
        Ok(k)
    }
}

/// A torsion-free background connection with constant coefficients in the
/// chart. `None` is the coordinate connection.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Background {
    coeffs: Option<Tensor>,
}

impl Background {
    pub fn coordinate() -> Self {
        Background { coeffs: None }
    }

    /// `[k, l, p] = Γ̄_kl^p`; must be symmetric in `k, l`.
    pub fn constant(coeffs: Tensor) -> Result<Self> {
        coeffs.expect_variance(&[Down, Down, Up])?;
        let asym = crate::tensor::max_diff(&coeffs, &coeffs.permute(&[1, 0, 2]));
        if asym > 1e-14 {
            return Err(Error::Invalid(format!("background connection has torsion {asym:e}")));
        }
        Ok(Background { coeffs: Some(coeffs) })
    }

    pub fn coeff(&self, k: usize, l: usize, p: usize) -> f64 {
        self.coeffs.as_ref().map_or(0.0, |c| c[[k, l, p]])
    }
}

#[derive(Clone, Debug, Default)]
pub struct FlowSettings {
    pub kappa: KappaSpec,
    pub background: Background,
    pub gauged: bool,
    /// Hold `g` fixed: `∂g/∂t = 0` and the Ricci term leaves the `J` equation.
    pub frozen_metric: bool,
}

impl FlowSettings {
    pub fn gauged() -> Self {
        FlowSettings {
            gauged: true,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct FlowRhs {
    pub dg_dt: Tensor,
    /// `[a, c] = (∂J/∂t)_a^c`.
    pub dj_dt: Tensor,
    /// 𝒞, so that `∂ω/∂t = −𝒫 + 𝒞`. In the gauged system it also carries `L_X ω`.
    pub c_term: Tensor,
    pub gauged: bool,
}

#[derive(Clone, Debug)]
pub struct GaugeFields {
    /// `X^p = g^{kl}(Γ_kl^p − Γ̄_kl^p)`, valid through first order.
    pub x: Tensor<Jet>,
    /// `Z^p = ω^{kl} ∇̄_k J_l^p`.
    pub z: Tensor,
    /// `g^{kl}(Γ̄ − Γ)_kl^p − ϑ^p`. The sign on `ϑ` follows from
    /// `g^{uk}Θ_ku^p = −ϑ^p`; `+ϑ^p` fails.
    pub z_identity: Tensor,
    pub background: Background,
}

/// Intermediate tensors shared by the right-hand side and its checks.
#[derive(Clone, Debug)]
pub struct FlowTerms {
    /// `ϑ^p = g^{pq} ϑ_q`, valid through first order.
    pub theta_sharp: Tensor<Jet>,
    pub lie_theta_g: Tensor,
    /// `[a, c] = (L_ϑ J)_a^c`.
    pub lie_theta_j: Tensor,
    /// `((L_ϑJ)^m_a g_mv)_skew`.
    pub lie_skew: Tensor,
    /// `[f, i, j, k] = ∇_f ψ^{3,0+0,3}_{ijk}`.
    pub nabla_psi_pure: Tensor,
    pub kappa: Tensor,
    pub mho: Tensor,
}

/// Everything the flow needs at one point.
#[derive(Clone, Debug)]
pub struct FlowPoint {
    pub geo: Geometry,
    pub terms: FlowTerms,
    pub gauge: GaugeFields,
    pub unguaged: FlowRhs,
    pub rhs: FlowRhs,
}

impl FlowPoint {
    pub fn new(jet: &StructureJet, settings: &FlowSettings) -> Result<Self> {
        Self::from_geometry(Geometry::new(jet)?, settings)
    }

    pub fn with_variant(jet: &StructureJet, settings: &FlowSettings, variant: DVariant) -> Result<Self> {
        Self::from_geometry(Geometry::with_variant(jet, variant)?, settings)
    }

    pub fn from_geometry(geo: Geometry, settings: &FlowSettings) -> Result<Self> {
        let terms = flow_terms(&geo, &settings.kappa)?;
        let gauge = gauge_fields(&geo, &terms, &settings.background);
        let unguaged = rhs_unguaged(&geo, &terms, settings.frozen_metric);
        let rhs = if settings.gauged {
            rhs_gauged(&geo, &unguaged, &gauge, settings.frozen_metric)
        } else {
            unguaged.clone()
        };
        Ok(FlowPoint {
            geo,
            terms,
            gauge,
            unguaged,
            rhs,
        })
    }
}

fn covariant_to_mixed(l: &Tensor, g_inv: &Tensor) -> Tensor {
    let n = l.dim();
    Tensor::from_fn(n, &[Down, Up], |ix| sum(n, |v| l[[ix[0], v]] * g_inv[[v, ix[1]]]))
}

fn mixed_to_covariant(m: &Tensor, g: &Tensor) -> Tensor {
    let n = m.dim();
    Tensor::from_fn(n, &[Down, Down], |ix| sum(n, |c| m[[ix[0], c]] * g[[c, ix[1]]]))
}

pub fn flow_terms(geo: &Geometry, kappa: &KappaSpec) -> Result<FlowTerms> {
    let n = geo.dim();
    let p = &geo.pack;
    let gi1 = p.g_inv.truncate(1);
    let theta_sharp = Tensor::from_fn(n, &[Up], |ix| sum(n, |q| gi1[[ix[0], q]] * p.lee[[q]]));
    let jc1 = AlmostComplex { j: p.j.truncate(1) };
    let psi_pure = project3(&p.psi, Part3::Pure, &jc1)?;
    assemble_terms(
        &geo.vals,
        &FieldAt::from_jets(&p.g.truncate(1)),
        &FieldAt::from_jets(&p.j.truncate(1)),
        theta_sharp,
        &FieldAt::from_jets(&psi_pure),
        &geo.ups,
        kappa,
    )
}

/// [`FlowTerms`] from first-order data: `g`, `J`, `ϑ^♯` and `ψ^{3,0+0,3}`
/// with their partials, and the Chern coefficients.
pub fn assemble_terms(
    v: &FirstOrderPack<f64>,
    g: &FieldAt,
    j: &FieldAt,
    theta_sharp: Tensor<Jet>,
    psi_pure: &FieldAt,
    ups: &Tensor,
    kappa: &KappaSpec,
) -> Result<FlowTerms> {
    let n = v.dim();
    let sharp = FieldAt::from_jets(&theta_sharp);
    let lie_theta_g = lie_parts(g, &sharp);
    let lie_theta_j = lie_parts(j, &sharp);
    let lie_skew = sym_skew(&mixed_to_covariant(&lie_theta_j, &v.g), SymPart::Skew)?;
    let nabla_psi_pure = nabla_parts(&psi_pure.value, &psi_pure.partials, ups);
    let kappa = kappa.eval(&KappaInput {
        n_low: &v.n_low,
        psi: &v.psi,
        g: &v.g,
        j: &v.j,
    })?;
    let gi = &v.g_inv;
    let mho = Tensor::from_fn(n, &[Down, Down], |ix| {
        let (a, vv) = (ix[0], ix[1]);
        let mut div = 0.0;
        for e in 0..n {
            for f in 0..n {
                div += gi[[e, f]] * nabla_psi_pure[[f, vv, a, e]];
            }
        }
        kappa[[a, vv]] - 2.0 * div - lie_skew[[a, vv]]
    });
    Ok(FlowTerms {
        theta_sharp,
        lie_theta_g,
        lie_theta_j,
        lie_skew,
        nabla_psi_pure,
        kappa,
        mho,
    })
}

/// `(𝒫 − 2J·Rc)^{2,0+0,2}`, or only `𝒫^{2,0+0,2}` with the metric frozen.
fn curvature_part(v: &FirstOrderPack<f64>, rc: &Tensor, p: &Tensor, frozen_metric: bool) -> Tensor {
    let n = v.dim();
    let j = &v.j;
    let w = Tensor::from_fn(n, &[Down, Down], |ix| {
        let (a, b) = (ix[0], ix[1]);
        let jrc = if frozen_metric { 0.0 } else { sum(n, |y| j[[a, y]] * rc[[y, b]]) };
        p[[a, b]] - 2.0 * jrc
    });
    project2(&w, Part2::JAnti, &v.complex()).expect("covariant 2-tensor")
}

pub fn rhs_unguaged(geo: &Geometry, terms: &FlowTerms, frozen_metric: bool) -> FlowRhs {
    rhs_from_traces(&geo.vals, &geo.bundle.rc, &geo.bundle.p, terms, frozen_metric)
}

/// The ungauged right-hand side from `Rc`, `𝒫` and the flow terms.
pub fn rhs_from_traces(v: &FirstOrderPack<f64>, rc: &Tensor, p: &Tensor, terms: &FlowTerms, frozen_metric: bool) -> FlowRhs {
    let n = v.dim();
    let w_anti = curvature_part(v, rc, p, frozen_metric);
    let lowered = terms.mho.zip_with(&w_anti, |m, w| m - w);
    let dj_dt = covariant_to_mixed(&lowered, &v.g_inv);
    let dg_dt = if frozen_metric {
        Tensor::zeros(n, &[Down, Down])
    } else {
        rc.scale(-2.0)
    };
    let jc = v.complex();
    let p11 = project2(p, Part2::JInv, &jc).expect("covariant");
    let rc11 = project2(rc, Part2::JInv, &jc).expect("covariant");
    let (gi, j) = (&v.g_inv, &v.j);
    let c_term = Tensor::from_fn(n, &[Down, Down], |ix| {
        let (a, bb) = (ix[0], ix[1]);
        let mut acc = p11[[a, bb]] - terms.lie_skew[[a, bb]] + terms.kappa[[a, bb]];
        if !frozen_metric {
            acc -= 2.0 * sum(n, |c| j[[a, c]] * rc11[[bb, c]]);
        }
        for e in 0..n {
            for f in 0..n {
                acc += 2.0 * gi[[e, f]] * terms.nabla_psi_pure[[f, e, a, bb]];
            }
        }
        acc
    });
    FlowRhs {
        dg_dt,
        dj_dt,
        c_term,
        gauged: false,
    }
}

pub fn gauge_fields(geo: &Geometry, terms: &FlowTerms, background: &Background) -> GaugeFields {
    let n = geo.dim();
    let p = &geo.pack;
    let v = &geo.vals;
    let gi1 = p.g_inv.truncate(1);
    let gamma = &geo.lc.coeffs;
    let x = Tensor::from_fn(n, &[Up], |ix| {
        let q = ix[0];
        let mut acc = Jet::constant(0.0);
        for k in 0..n {
            for l in 0..n {
                acc += gi1[[k, l]] * (gamma[[k, l, q]] - Jet::constant(background.coeff(k, l, q)));
            }
        }
        acc
    });
    let z = z_field(geo, background).values();
    let gv = geo.lc.values();
    let z_identity = Tensor::from_fn(n, &[Up], |ix| {
        let q = ix[0];
        let mut acc = -terms.theta_sharp[[q]].value();
        for k in 0..n {
            for u in 0..n {
                acc += v.g_inv[[u, k]] * (background.coeff(k, u, q) - gv[[k, u, q]]);
            }
        }
        acc
    });
    GaugeFields {
        x,
        z,
        z_identity,
        background: background.clone(),
    }
}

/// `Z^p = ω^{kl} ∇̄_k J_l^p` as a jet valid through first order.
pub fn z_field(geo: &Geometry, background: &Background) -> Tensor<Jet> {
    let n = geo.dim();
    let p = &geo.pack;
    let wi1 = p.omega_inv.truncate(1);
    let j1 = p.j.truncate(1);
    Tensor::from_fn(n, &[Up], |ix| {
        let q = ix[0];
        let mut acc = Jet::constant(0.0);
        for k in 0..n {
            for l in 0..n {
                let mut nb = p.j[[l, q]].partial(k);
                for m in 0..n {
                    nb += j1[[m, q]] * -background.coeff(k, l, m) + j1[[l, m]] * background.coeff(k, m, q);
                }
                acc += wi1[[k, l]] * nb;
            }
        }
        acc
    })
}

pub fn rhs_gauged(geo: &Geometry, unguaged: &FlowRhs, gauge: &GaugeFields, frozen_metric: bool) -> FlowRhs {
    let p = &geo.pack;
    add_gauge_terms(
        unguaged,
        &FieldAt::from_jets(&p.g.truncate(1)),
        &FieldAt::from_jets(&p.j.truncate(1)),
        &FieldAt::from_jets(&p.omega.truncate(1)),
        &FieldAt::from_jets(&gauge.x),
        frozen_metric,
    )
}

/// Adds `L_X J`, `L_X g` and `L_X ω` to an ungauged right-hand side.
pub fn add_gauge_terms(
    unguaged: &FlowRhs,
    g: &FieldAt,
    j: &FieldAt,
    omega: &FieldAt,
    x: &FieldAt,
    frozen_metric: bool,
) -> FlowRhs {
    let dg_dt = if frozen_metric {
        unguaged.dg_dt.clone()
    } else {
        &unguaged.dg_dt + &lie_parts(g, x)
    };
    FlowRhs {
        dg_dt,
        dj_dt: &unguaged.dj_dt + &lie_parts(j, x),
        c_term: &unguaged.c_term + &lie_parts(omega, x),
        gauged: true,
    }
}

/// `A(J)_a^c = 4 ω^{cy} (∇_y ϑ_a)^{2,0+0,2}_sym`, stored `[a, c]`.
pub fn operator_a(geo: &Geometry) -> Tensor {
    let v = &geo.vals;
    let anti = project2(&geo.nabla_lee, Part2::JAnti, &v.complex()).expect("covariant");
    let s = sym_skew(&anti, SymPart::Sym).expect("rank 2");
    let n = geo.dim();
    Tensor::from_fn(n, &[Down, Up], |ix| 4.0 * sum(n, |y| v.omega_inv[[ix[1], y]] * s[[y, ix[0]]]))
}

/// `2[ω^{cy}(L_ϑ g)^{2,0+0,2}_{ya} − ⅛ ω^{cy} ϑ^d (N_dya + N_day)]`.
pub fn operator_a_via_lie(geo: &Geometry, terms: &FlowTerms) -> Tensor {
    let n = geo.dim();
    let v = &geo.vals;
    let lg = project2(&terms.lie_theta_g, Part2::JAnti, &v.complex()).expect("covariant");
    let th = terms.theta_sharp.values();
    let nl = &v.n_low;
    Tensor::from_fn(n, &[Down, Up], |ix| {
        let (a, c) = (ix[0], ix[1]);
        2.0 * sum(n, |y| {
            let ntrace = sum(n, |d| th[[d]] * (nl[[d, y, a]] + nl[[d, a, y]]));
            v.omega_inv[[c, y]] * (lg[[y, a]] - 0.125 * ntrace)
        })
    })
}

/// `∇^e ψ_{ija e}`-type divergence: `[i, j] = g^{ef} t[f, i, j, e]`.
fn divergence_last(nt: &Tensor, g_inv: &Tensor) -> Tensor {
    let n = nt.dim();
    Tensor::from_fn(n, &[Down, Down], |ix| {
        let mut acc = 0.0;
        for e in 0..n {
            for f in 0..n {
                acc += g_inv[[e, f]] * nt[[f, ix[0], ix[1], e]];
            }
        }
        acc
    })
}

/// `B(J)_a^c = 2 g^{jc}(∇^e ψ_jae − J_a^k J_e^r ∇^e ψ_jkr)^{2,0+0,2}`, stored `[a, c]`.
pub fn operator_b(geo: &Geometry) -> Tensor {
    let n = geo.dim();
    let v = &geo.vals;
    let (gi, j) = (&v.g_inv, &v.j);
    let np = &geo.nabla_psi;
    let div = divergence_last(np, gi);
    // ∇^e ψ_jkr J_e^r = g^{ef} ∇_f ψ_jkr J_e^r
    let y = Tensor::from_fn(n, &[Down, Down], |ix| {
        let (jj, a) = (ix[0], ix[1]);
        let mut acc = div[[jj, a]];
        for k in 0..n {
            let jak = j[[a, k]];
            if jak == 0.0 {
                continue;
            }
            for e in 0..n {
                for r in 0..n {
                    let jer = j[[e, r]];
                    if jer == 0.0 {
                        continue;
                    }
                    for f in 0..n {
                        acc -= jak * jer * gi[[e, f]] * np[[f, jj, k, r]];
                    }
                }
            }
        }
        acc
    });
    let anti = project2(&y, Part2::JAnti, &v.complex()).expect("covariant");
    Tensor::from_fn(n, &[Down, Up], |ix| 2.0 * sum(n, |jj| gi[[jj, ix[1]]] * anti[[jj, ix[0]]]))
}

/// `4 g^{jc} ∇^e ψ^{3,0+0,3}_{jae}`, projecting each `∇_f ψ` slice.
pub fn operator_b_manipulated(geo: &Geometry) -> Result<Tensor> {
    let n = geo.dim();
    let v = &geo.vals;
    let jc = v.complex();
    let np = &geo.nabla_psi;
    let mut pure = np.clone();
    let block = n * n * n;
    for f in 0..n {
        let slice = Tensor::from_vec(n, &[Down; 3], np.comps()[f * block..(f + 1) * block].to_vec())?;
        let proj = project3(&slice, Part3::Pure, &jc)?;
        pure.comps_mut()[f * block..(f + 1) * block].copy_from_slice(proj.comps());
    }
    let div = divergence_last(&pure, &v.g_inv);
    Ok(Tensor::from_fn(n, &[Down, Up], |ix| {
        4.0 * sum(n, |jj| v.g_inv[[jj, ix[1]]] * div[[jj, ix[0]]])
    }))
}

/// Identity rows of the flow construction and the right-hand side at one jet.
pub fn flow_rows(jet: &StructureJet, seed: u64, settings: &FlowSettings) -> Result<Vec<Row>> {
    let point = FlowPoint::new(jet, settings)?;
    flow_rows_at(&point, seed)
}

pub fn flow_rows_at(point: &FlowPoint, seed: u64) -> Result<Vec<Row>> {
    let geo = &point.geo;
    let t = &point.terms;
    let n = geo.dim();
    let v = &geo.vals;
    let jc = v.complex();
    let mut rows = Vec::new();
    let mut push = |id: &str, r: f64, tol: f64| rows.push(Row::new(id, n, seed, r, tol));

    let b_def = operator_b(geo);
    let b_man = operator_b_manipulated(geo)?;
    let np_scale = geo.nabla_psi.max_abs();
    push("eq:Bmanip", residual(&b_def, &b_man, np_scale), TOL_CURVATURE);
    if n == 4 {
        push("eq:Bmanip.dim4", residual_zero(&b_def, np_scale), 1e-12);
        let pure = project3(&v.psi, Part3::Pure, &jc)?;
        push("eq:3formtypedecomp.dim4", residual_zero(&pure, v.psi.max_abs()), 1e-12);
    }

    let a_def = operator_a(geo);
    let a_lie = operator_a_via_lie(geo, t);
    let a_scale = scale_of(&[&geo.nabla_lee, &t.lie_theta_g]);
    push("lem:A(J)class", residual(&a_def, &a_lie, a_scale), TOL_CURVATURE);

    let mho_scale = scale_of(&[&t.lie_skew, &t.nabla_psi_pure, &t.kappa]);
    let mho_sym = sym_skew(&t.mho, SymPart::Sym)?;
    push("eq:mhocomplete.skew", residual_zero(&mho_sym, mho_scale), TOL_RHS);
    let mho_11 = project2(&t.mho, Part2::JInv, &jc)?;
    push("eq:mhocomplete.Janti", residual_zero(&mho_11, mho_scale), TOL_RHS);

    // (L_ϑ g)^{2,0+0,2}_ij = J_j^b ((L_ϑJ)_i^a g_ab)_sym
    let m = mixed_to_covariant(&t.lie_theta_j, &v.g);
    let m_sym = sym_skew(&m, SymPart::Sym)?;
    let lg_anti = project2(&t.lie_theta_g, Part2::JAnti, &jc)?;
    let dai = Tensor::from_fn(n, &[Down, Down], |ix| sum(n, |b| v.j[[ix[1], b]] * m_sym[[ix[0], b]]));
    let lie_scale = scale_of(&[&t.lie_theta_g, &t.lie_theta_j]);
    push("eq:D2J.dai", residual(&lg_anti, &dai, lie_scale), TOL_CURVATURE);
    let decomp = Tensor::from_fn(n, &[Down, Up], |ix| {
        let (a, c) = (ix[0], ix[1]);
        sum(n, |jj| v.omega_inv[[c, jj]] * lg_anti[[a, jj]] + t.lie_skew[[a, jj]] * v.g_inv[[jj, c]])
    });
    push("eq:D2J.decomp", residual(&t.lie_theta_j, &decomp, lie_scale), TOL_CURVATURE);

    let gf = &point.gauge;
    let x0 = gf.x.values();
    let z_scale = scale_of(&[&gf.z, &x0]).max(t.theta_sharp.values().max_abs());
    push("lem:vectorfield", residual(&gf.z, &gf.z_identity, z_scale), TOL_RHS);
    let zx = Tensor::from_fn(n, &[Up], |ix| {
        gf.z[[ix[0]]] + x0[[ix[0]]] + t.theta_sharp[[ix[0]]].value()
    });
    push("eq:Xdef.ZXtheta", residual_zero(&zx, z_scale), TOL_RHS);

    rows.extend(rhs_rows(point, seed));
    Ok(rows)
}

/// Relative residual of `Z = −X + ϑ`, the form with the opposite sign on `ϑ`.
pub fn plus_theta_gauge_residual(point: &FlowPoint) -> f64 {
    let gf = &point.gauge;
    let x0 = gf.x.values();
    let th = point.terms.theta_sharp.values();
    let scale = scale_of(&[&gf.z, &x0, &th]);
    let d = Tensor::from_fn(th.dim(), &[Up], |ix| gf.z[[ix[0]]] + x0[[ix[0]]] - th[[ix[0]]]);
    residual_zero(&d, scale)
}

/// `{∂J/∂t, J}`, `∂_t[g − g(J·,J·)]`, the type of the lowered `∂J/∂t` and
/// `∂ω/∂t = −𝒫 + 𝒞`, all for the ungauged right-hand side.
pub fn rhs_rows(point: &FlowPoint, seed: u64) -> Vec<Row> {
    let geo = &point.geo;
    let rhs = &point.unguaged;
    let n = geo.dim();
    let v = &geo.vals;
    let (g, j) = (&v.g, &v.j);
    let (dj, dg) = (&rhs.dj_dt, &rhs.dg_dt);
    let scale = scale_of(&[dj, dg]).max(geo.bundle.p.max_abs());
    let mut rows = Vec::new();
    let mut push = |id: &str, r: f64| rows.push(Row::new(id, n, seed, r, TOL_RHS));

    let anti = Tensor::from_fn(n, &[Down, Up], |ix| {
        let (a, c) = (ix[0], ix[1]);
        sum(n, |m| dj[[a, m]] * j[[m, c]] + j[[a, m]] * dj[[m, c]])
    });
    push("eq:AHCF.anticomm", residual_zero(&anti, scale));

    let compat = Tensor::from_fn(n, &[Down, Down], |ix| {
        let (a, b) = (ix[0], ix[1]);
        let mut acc = dg[[a, b]];
        for p in 0..n {
            for q in 0..n {
                acc -= dg[[p, q]] * j[[a, p]] * j[[b, q]]
                    + g[[p, q]] * (dj[[a, p]] * j[[b, q]] + j[[a, p]] * dj[[b, q]]);
            }
        }
        acc
    });
    push("eq:AHCF.compat", residual_zero(&compat, scale));

    let lowered = mixed_to_covariant(dj, g);
    let inv = project2(&lowered, Part2::JInv, &v.complex()).expect("covariant");
    push("eq:AHCF.type", residual_zero(&inv, scale));

    let wdot = Tensor::from_fn(n, &[Down, Down], |ix| {
        let (a, b) = (ix[0], ix[1]);
        sum(n, |c| dj[[a, c]] * g[[c, b]] + j[[a, c]] * dg[[c, b]])
    });
    let target = rhs.c_term.zip_with(&geo.bundle.p, |c, p| c - p);
    push("eq:AHCF.omega", residual(&wdot, &target, scale));
    rows
}
