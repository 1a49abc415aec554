//! Levi-Civita and Chern connections, their curvatures and traces.
//!
//! Connection coefficients put the derivative direction first:
//! `∇_{∂_i} ∂_j = Υ_ij^k ∂_k`, stored as `[i, j, k]`. Curvature follows
//! `R(∂_i, ∂_j)∂_k = (∂_i Γ_jk^l − ∂_j Γ_ik^l + Γ_jk^m Γ_im^l − Γ_ik^m Γ_jm^l) ∂_l`
//! and is lowered as `Rm_ijkl = g(R(∂_i, ∂_j)∂_k, ∂_l)`.

use serde::{Deserialize, Serialize};

use crate::field::StructureJet;
use crate::jet::Jet;
use crate::report::{residual, residual_zero, scale_of, Row, TOL_ALGEBRAIC, TOL_CURVATURE};
use crate::structures::{
    cyclic_sum, dc_omega_parts_from_psi, dc_operator, n_cyclic_from_psi, DVariant, FirstOrderPack,
};
use crate::tensor::{project3, sum, Part3, Scalar, Tensor, TensorError, Variance};
use crate::{Error, Result};

use Variance::{Down, Up};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConnectionKind {
    LeviCivita,
    Chern,
}

#[derive(Clone, Debug)]
pub struct ConnectionCoeffs {
    pub kind: ConnectionKind,
    /// `[i, j, k] = Υ_ij^k`, a jet valid through first order.
    pub coeffs: Tensor<Jet>,
}

impl ConnectionCoeffs {
    pub fn values(&self) -> Tensor {
        self.coeffs.values()
    }
}

/// `Γ_ij^k = ½ g^{kl}(∂_i g_jl + ∂_j g_il − ∂_l g_ij)`.
pub fn levi_civita_from(g: &Tensor<Jet>, g_inv: &Tensor<Jet>) -> ConnectionCoeffs {
    let n = g.dim();
    let dg: Vec<Tensor<Jet>> = (0..n).map(|c| g.partial(c)).collect();
    ConnectionCoeffs {
        kind: ConnectionKind::LeviCivita,
        coeffs: christoffel_from_partials(&dg, &g_inv.truncate(1)),
    }
}

/// Christoffel symbols `[i, j, k]` from `dg[c] = ∂_c g` and `g^{-1}`.
pub fn christoffel_from_partials<S: Scalar>(dg: &[Tensor<S>], g_inv: &Tensor<S>) -> Tensor<S> {
    let n = g_inv.dim();
    let lowered = Tensor::from_fn(n, &[Down, Down, Down], |ix| {
        let (i, j, l) = (ix[0], ix[1], ix[2]);
        (dg[i][[j, l]].clone() + dg[j][[i, l]].clone() - dg[l][[i, j]].clone()) * 0.5
    });
    Tensor::from_fn(n, &[Down, Down, Up], |ix| {
        sum(n, |l| g_inv[[ix[2], l]].clone() * lowered[[ix[0], ix[1], l]].clone())
    })
}

pub fn levi_civita(jet: &StructureJet) -> Result<ConnectionCoeffs> {
    let n = jet.n;
    let g = jet.g_jet();
    let g_inv = Tensor::from_vec(n, &[Up, Up], crate::tensor::invert_matrix(n, g.comps())?)?;
    Ok(levi_civita_from(&g, &g_inv))
}

/// `Υ_ij^k = Γ_ij^k − g^{kl} Θ_ijl`, without checking the characterization.
pub fn chern_from(lc: &ConnectionCoeffs, pack: &FirstOrderPack) -> ConnectionCoeffs {
    ConnectionCoeffs {
        kind: ConnectionKind::Chern,
        coeffs: chern_coeffs(&lc.coeffs, &pack.g_inv.truncate(1), &pack.theta),
    }
}

pub fn chern_coeffs<S: Scalar>(gamma: &Tensor<S>, g_inv: &Tensor<S>, theta: &Tensor<S>) -> Tensor<S> {
    let n = g_inv.dim();
    Tensor::from_fn(n, &[Down, Down, Up], |ix| {
        let (i, j, k) = (ix[0], ix[1], ix[2]);
        gamma[[i, j, k]].clone() - sum(n, |l| g_inv[[k, l]].clone() * theta[[i, j, l]].clone())
    })
}

/// The Chern connection; errors when `∇g`, `∇J` or `τ^{1,1}` exceed 1e−10.
pub fn chern_connection(pack: &FirstOrderPack) -> Result<ConnectionCoeffs> {
    let lc = levi_civita_from(&pack.g, &pack.g_inv);
    let ch = chern_from(&lc, pack);
    let r = characterization(&ch, pack);
    let worst = r.metric.max(r.complex).max(r.torsion_11);
    if !(worst <= 1e-10) {
        return Err(Error::Tensor(TensorError::Constraint {
            what: "Chern characterization",
            residual: worst,
            tol: 1e-10,
        }));
    }
    Ok(ch)
}

/// Covariant derivative `∇_i T_{…}` with the derivative slot first, at the
/// base point. Lower slots take `−Υ_{i s}^m`, upper slots `+Υ_{i m}^s`.
pub fn nabla(t: &Tensor<Jet>, ups: &Tensor) -> Tensor {
    let partials: Vec<Tensor> = (0..t.dim()).map(|c| t.map(|x| x.grad(c))).collect();
    nabla_parts(&t.values(), &partials, ups)
}

/// [`nabla`] from the value of `T` and `partials[c] = ∂_c T`.
pub fn nabla_parts(vals: &Tensor, partials: &[Tensor], ups: &Tensor) -> Tensor {
    let n = vals.dim();
    let rank = vals.rank();
    let block = vals.comps().len();
    let (t, u) = (vals.comps(), ups.comps());
    let mut variance = vec![Down];
    variance.extend_from_slice(vals.variance());
    let strides: Vec<usize> = (0..rank).map(|s| n.pow((rank - s - 1) as u32)).collect();
    let mut comps = Vec::with_capacity(n * block);
    for i in 0..n {
        let d = partials[i].comps();
        for r in 0..block {
            let mut acc = d[r];
            for (s, &st) in strides.iter().enumerate() {
                let rs = (r / st) % n;
                let base = r - rs * st;
                match vals.variance()[s] {
                    Down => {
                        for m in 0..n {
                            acc -= u[(i * n + rs) * n + m] * t[base + m * st];
                        }
                    }
                    Up => {
                        for m in 0..n {
                            acc += u[(i * n + m) * n + rs] * t[base + m * st];
                        }
                    }
                }
            }
            comps.push(acc);
        }
    }
    Tensor::from_vec(n, &variance, comps).expect("component count")
}

/// Lowered curvature of a connection at the base point.
pub fn curvature(conn: &ConnectionCoeffs, g: &Tensor) -> Tensor {
    let dc: Vec<Tensor> = (0..g.dim()).map(|a| conn.coeffs.map(|x| x.grad(a))).collect();
    curvature_parts(&conn.values(), &dc, g)
}

/// [`curvature`] from coefficients `c` and `dc[a] = ∂_a c`.
pub fn curvature_parts(c: &Tensor, dc: &[Tensor], g: &Tensor) -> Tensor {
    let n = g.dim();
    let (cc, gc) = (c.comps(), g.comps());
    let at = |i: usize, j: usize, k: usize| (i * n + j) * n + k;
    let mut r_up = vec![0.0; n * n * n * n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    let mut v = dc[i].comps()[at(j, k, l)] - dc[j].comps()[at(i, k, l)];
                    for m in 0..n {
                        v += cc[at(j, k, m)] * cc[at(i, m, l)] - cc[at(i, k, m)] * cc[at(j, m, l)];
                    }
                    r_up[at(i, j, k) * n + l] = v;
                }
            }
        }
    }
    let mut comps = vec![0.0; n * n * n * n];
    for ijk in 0..n * n * n {
        for l in 0..n {
            comps[ijk * n + l] = (0..n).map(|m| r_up[ijk * n + m] * gc[m * n + l]).sum();
        }
    }
    Tensor::from_vec(n, &[Down; 4], comps).expect("component count")
}

/// Raises one slot of a value tensor with `g^{-1}`.
pub fn raise(t: &Tensor, slot: usize, g_inv: &Tensor) -> Tensor {
    let n = t.dim();
    let mut variance = t.variance().to_vec();
    variance[slot] = Up;
    let mut src = vec![0usize; t.rank()];
    Tensor::from_fn(n, &variance, |ix| {
        src.copy_from_slice(ix);
        (0..n)
            .map(|m| {
                src[slot] = m;
                g_inv[[ix[slot], m]] * t.at(&src)
            })
            .sum()
    })
}

#[derive(Clone, Debug)]
pub struct RicciTraces {
    pub rc: Tensor,
    pub p: Tensor,
    pub v: Tensor,
    pub rho: f64,
}

/// `Rc_jk = g^{il} Rm_ijkl`, `𝒫_ab = ω^{cd} Ω_abcd`, `𝒱_jk = g^{re} Ω_rjke`,
/// `ϱ = ω^{ba} 𝒫_ab`.
pub fn ricci_traces(rm: &Tensor, omega_curv: &Tensor, g_inv: &Tensor, omega_inv: &Tensor) -> RicciTraces {
    let n = rm.dim();
    let rc = Tensor::from_fn(n, &[Down, Down], |ix| {
        let (j, k) = (ix[0], ix[1]);
        let mut v = 0.0;
        for i in 0..n {
            for l in 0..n {
                v += g_inv[[i, l]] * rm[[i, j, k, l]];
            }
        }
        v
    });
    let p = Tensor::from_fn(n, &[Down, Down], |ix| {
        let mut v = 0.0;
        for c in 0..n {
            for d in 0..n {
                v += omega_inv[[c, d]] * omega_curv[[ix[0], ix[1], c, d]];
            }
        }
        v
    });
    let v = Tensor::from_fn(n, &[Down, Down], |ix| {
        let (j, k) = (ix[0], ix[1]);
        let mut v = 0.0;
        for r in 0..n {
            for e in 0..n {
                v += g_inv[[r, e]] * omega_curv[[r, j, k, e]];
            }
        }
        v
    });
    let mut rho = 0.0;
    for a in 0..n {
        for b in 0..n {
            rho += omega_inv[[b, a]] * p[[a, b]];
        }
    }
    RicciTraces { rc, p, v, rho }
}

/// `T_klij = Ω_klij − Ω_ijkl`, stored as `[k, l, i, j]`.
pub fn t_tensor(omega_curv: &Tensor) -> Tensor {
    let n = omega_curv.dim();
    Tensor::from_fn(n, &[Down; 4], |ix| {
        let (k, l, i, j) = (ix[0], ix[1], ix[2], ix[3]);
        omega_curv[[k, l, i, j]] - omega_curv[[i, j, k, l]]
    })
}

#[derive(Clone, Debug)]
pub struct CurvatureBundle {
    pub rm: Tensor,
    /// Chern curvature `Ω`, lowered.
    pub omega: Tensor,
    /// `τ_ij^k`.
    pub tau_up: Tensor,
    /// `τ_ijk = τ_ij^l g_lk`.
    pub tau: Tensor,
    pub rc: Tensor,
    pub p: Tensor,
    pub v: Tensor,
    pub rho: f64,
    pub t: Tensor,
}

/// Everything the identity suite and flow right-hand sides need at a point.
#[derive(Clone, Debug)]
pub struct Geometry {
    pub pack: FirstOrderPack,
    pub vals: FirstOrderPack<f64>,
    pub lc: ConnectionCoeffs,
    pub chern: ConnectionCoeffs,
    pub ups: Tensor,
    pub bundle: CurvatureBundle,
    /// `[i, j, k, l] = ∇_i Θ_jkl`.
    pub nabla_theta: Tensor,
    /// `[j, k] = ∇_j ϑ_k`.
    pub nabla_lee: Tensor,
    /// `[i, j, k, l] = ∇_i ψ_jkl`.
    pub nabla_psi: Tensor,
    /// `Θ_ij^k`.
    pub theta_up: Tensor,
}

impl Geometry {
    pub fn new(jet: &StructureJet) -> Result<Self> {
        Self::with_variant(jet, DVariant::Standard)
    }

    pub fn with_variant(jet: &StructureJet, variant: DVariant) -> Result<Self> {
        let pack = FirstOrderPack::from_jet_variant(jet, variant)?;
        Ok(Self::from_pack(pack))
    }

    pub fn from_pack(pack: FirstOrderPack) -> Self {
        let vals = pack.values();
        let lc = levi_civita_from(&pack.g, &pack.g_inv);
        let chern = chern_from(&lc, &pack);
        let ups = chern.values();
        let rm = curvature(&lc, &vals.g);
        let omega_curv = curvature(&chern, &vals.g);
        let n = pack.dim();
        let tau_up = Tensor::from_fn(n, &[Down, Down, Up], |ix| {
            ups[[ix[0], ix[1], ix[2]]] - ups[[ix[1], ix[0], ix[2]]]
        });
        let tau = Tensor::from_fn(n, &[Down; 3], |ix| {
            (0..n).map(|l| tau_up[[ix[0], ix[1], l]] * vals.g[[l, ix[2]]]).sum()
        });
        let tr = ricci_traces(&rm, &omega_curv, &vals.g_inv, &vals.omega_inv);
        let t = t_tensor(&omega_curv);
        let bundle = CurvatureBundle {
            rm,
            omega: omega_curv,
            tau_up,
            tau,
            rc: tr.rc,
            p: tr.p,
            v: tr.v,
            rho: tr.rho,
            t,
        };
        let nabla_theta = nabla(&pack.theta, &ups);
        let nabla_lee = nabla(&pack.lee, &ups);
        let nabla_psi = nabla(&pack.psi, &ups);
        let theta_up = raise(&vals.theta, 2, &vals.g_inv);
        Geometry {
            pack,
            vals,
            lc,
            chern,
            ups,
            bundle,
            nabla_theta,
            nabla_lee,
            nabla_psi,
            theta_up,
        }
    }

    pub fn dim(&self) -> usize {
        self.vals.g.dim()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CharacterizationResiduals {
    pub metric: f64,
    pub complex: f64,
    pub torsion_11: f64,
}

/// Max-norm of `∇g`, `∇J` and `τ^{1,1}` relative to the size of `∂g`, `∂J`
/// and `τ`.
pub fn characterization(conn: &ConnectionCoeffs, pack: &FirstOrderPack) -> CharacterizationResiduals {
    let n = pack.dim();
    let ups = conn.values();
    let g = pack.g.truncate(1);
    let j = pack.j.truncate(1);
    let dg_scale = (0..n).map(|c| g.partial(c).values().max_abs()).fold(0.0, f64::max);
    let dj_scale = (0..n).map(|c| j.partial(c).values().max_abs()).fold(0.0, f64::max);
    let ng = nabla(&g, &ups);
    let nj = nabla(&j, &ups);
    let gv = pack.g.values();
    let jv = pack.j.values();
    let tau = Tensor::from_fn(n, &[Down; 3], |ix| {
        (0..n)
            .map(|l| (ups[[ix[0], ix[1], l]] - ups[[ix[1], ix[0], l]]) * gv[[l, ix[2]]])
            .sum()
    });
    let tw = tau.twist_slot(0, &jv).twist_slot(1, &jv);
    let tau11 = tau.zip_with(&tw, |a, b| 0.5 * (a + b));
    CharacterizationResiduals {
        metric: residual_zero(&ng, dg_scale),
        complex: residual_zero(&nj, dj_scale),
        torsion_11: residual_zero(&tau11, tau.max_abs()),
    }
}

/// Lowered Nijenhuis antiinvariance in the first and last pairs.
fn nijenhuis_antiinvariance(n_low: &Tensor, j: &Tensor) -> (Tensor, Tensor) {
    let a = n_low.twist_slot(0, j).twist_slot(1, j);
    let b = n_low.twist_slot(1, j).twist_slot(2, j);
    (n_low + &a, n_low + &b)
}

/// Runs every pointwise identity on one jet.
pub fn identity_suite(jet: &StructureJet, seed: u64) -> Result<Vec<Row>> {
    identity_suite_variant(jet, seed, DVariant::Standard)
}

pub fn identity_suite_variant(jet: &StructureJet, seed: u64, variant: DVariant) -> Result<Vec<Row>> {
    let geo = Geometry::with_variant(jet, variant)?;
    let mut rows = first_order_rows(&geo, seed)?;
    rows.extend(curvature_rows(&geo, seed));
    Ok(rows)
}

fn first_order_rows(geo: &Geometry, seed: u64) -> Result<Vec<Row>> {
    let n = geo.dim();
    let v = &geo.vals;
    let (g, gi, wi, j) = (&v.g, &v.g_inv, &v.omega_inv, &v.j);
    let (th, pb, lee) = (&v.theta, &v.psi_big, &v.lee);
    let mut rows = Vec::new();
    let mut push = |id: &str, r: f64, tol: f64| rows.push(Row::new(id, n, seed, r, tol));
    let alg = TOL_ALGEBRAIC;

    let th_scale = th.max_abs();
    let skew = th.zip_with(&th.permute(&[0, 2, 1]), |a, b| a + b);
    push("lem:ThetaPsi.1", residual_zero(&skew, th_scale), alg);

    // contractions of the first two slots, or of a chosen pair
    let contract = |t: &Tensor, w: &Tensor, pair: (usize, usize)| {
        let free = 3 - pair.0 - pair.1;
        Tensor::from_fn(n, &[Down], |ix| {
            let mut acc = 0.0;
            let mut idx = [0usize; 3];
            idx[free] = ix[0];
            for a in 0..n {
                for b in 0..n {
                    idx[pair.0] = a;
                    idx[pair.1] = b;
                    acc += w[[a, b]] * t[idx];
                }
            }
            acc
        })
    };
    let pb_scale = pb.max_abs();
    push(
        "lem:ThetaPsi.2a",
        residual(&contract(pb, wi, (0, 1)), &lee.scale(-2.0), pb_scale),
        alg,
    );
    push("lem:ThetaPsi.2b", residual_zero(&contract(pb, gi, (0, 1)), pb_scale), alg);
    push("lem:ThetaPsi.3a", residual_zero(&contract(th, wi, (0, 1)), th_scale), alg);
    push("lem:ThetaPsi.3b", residual_zero(&contract(th, wi, (0, 2)), th_scale), alg);
    let jlee = Tensor::from_fn(n, &[Down], |ix| -(0..n).map(|p| j[[ix[0], p]] * lee[[p]]).sum::<f64>());
    push("lem:ThetaPsi.3c", residual(&contract(th, wi, (1, 2)), &jlee, th_scale), alg);
    push(
        "lem:ThetaPsi.4a",
        residual(&contract(th, gi, (0, 1)), &lee.scale(-1.0), th_scale),
        alg,
    );
    push("lem:ThetaPsi.4b", residual(&contract(th, gi, (0, 2)), lee, th_scale), alg);
    push("lem:ThetaPsi.4c", residual_zero(&contract(th, gi, (1, 2)), th_scale), alg);

    let n_low = &v.n_low;
    let (a1, a2) = nijenhuis_antiinvariance(n_low, j);
    push("eq:Nijen.anti", residual_zero(&a1, n_low.max_abs()).max(residual_zero(&a2, n_low.max_abs())), alg);

    let jc = geo.pack.complex();
    let dc = dc_operator(&geo.pack.omega, &jc.j.truncate(1));
    let dc_pure = project3(&dc, Part3::Pure, &jc)?.values();
    let dc_mixed = project3(&dc, Part3::Mixed, &jc)?.values();
    let cyc = cyclic_sum(n_low);
    push(
        "eq:Ncyclic",
        residual(&cyc, &dc_pure.scale(8.0), scale_of(&[n_low])),
        alg,
    );
    push(
        "cor:Ncycleid",
        residual(&cyc, &n_cyclic_from_psi(&v.psi, j), scale_of(&[n_low, &v.psi])),
        alg,
    );
    let (pure_psi, mixed_psi) = dc_omega_parts_from_psi(&v.psi, j);
    let psi_scale = v.psi.max_abs();
    push("eq:dcw3003", residual(&dc_pure, &pure_psi, psi_scale), alg);
    push("eq:dc1221", residual(&dc_mixed, &mixed_psi, psi_scale), alg);
    push("eq:Psidef.types", residual(pb, &v.psi_big_by_types()?, psi_scale), alg);
    let pb_skew = pb
        .zip_with(&pb.permute(&[1, 0, 2]), |a, b| a + b)
        .zip_with(&pb.zip_with(&pb.permute(&[0, 2, 1]), |a, b| a + b), |a, b| a.abs().max(b.abs()));
    push("eq:Psidef.skew", residual_zero(&pb_skew, psi_scale), alg);

    let ch = characterization(&geo.chern, &geo.pack);
    push("eq:Cherncharac.g", ch.metric, 1e-10);
    push("eq:Cherncharac.J", ch.complex, 1e-10);
    push("eq:Cherncharac.tau11", ch.torsion_11, 1e-10);
    let tau_theta = Tensor::from_fn(n, &[Down; 3], |ix| th[[ix[1], ix[0], ix[2]]] - th[[ix[0], ix[1], ix[2]]]);
    push("lem:VnJP.torsion", residual(&geo.bundle.tau, &tau_theta, th_scale), 1e-12);
    let _ = g;
    Ok(rows)
}

fn curvature_rows(geo: &Geometry, seed: u64) -> Vec<Row> {
    let n = geo.dim();
    let v = &geo.vals;
    let b = &geo.bundle;
    let (gi, wi, j) = (&v.g_inv, &v.omega_inv, &v.j);
    let th = &v.theta;
    let thu = &geo.theta_up;
    let nth = &geo.nabla_theta;
    let nlee = &geo.nabla_lee;
    let lee = &v.lee;
    let tol = TOL_CURVATURE;
    let mut rows = Vec::new();
    let mut push = |id: &str, r: f64, tol: f64| rows.push(Row::new(id, n, seed, r, tol));

    let om = &b.omega;
    let om_scale = om.max_abs();
    push(
        "lem:Cherncurvsym.ij",
        residual_zero(&om.zip_with(&om.permute(&[1, 0, 2, 3]), |a, b| a + b), om_scale),
        tol,
    );
    push(
        "lem:Cherncurvsym.kl",
        residual_zero(&om.zip_with(&om.permute(&[0, 1, 3, 2]), |a, b| a + b), om_scale),
        tol,
    );
    let om_j = om.twist_slot(2, j).twist_slot(3, j);
    push("lem:Cherncurvsym.J", residual(om, &om_j, om_scale), tol);

    let rm = &b.rm;
    let rm_scale = rm.max_abs();
    let rm_sym = Tensor::from_fn(n, &[Down; 4], |ix| {
        let (i, jj, k, l) = (ix[0], ix[1], ix[2], ix[3]);
        (rm[[i, jj, k, l]] + rm[[jj, i, k, l]])
            .abs()
            .max((rm[[i, jj, k, l]] + rm[[i, jj, l, k]]).abs())
            .max((rm[[i, jj, k, l]] - rm[[k, l, i, jj]]).abs())
    });
    push("Rm.symmetries", residual_zero(&rm_sym, rm_scale), tol);
    push("Rm.bianchi", residual_zero(&cyclic_sum_first3(rm), rm_scale), tol);
    push("Rc.symmetric", residual(&b.rc, &b.rc.permute(&[1, 0]), b.rc.max_abs()), tol);

    // Rm = Ω + ∇_iΘ_jkl − ∇_jΘ_ikl + Θ_isl Θ_jk^s − Θ_jsl Θ_ik^s + τ_ij^s Θ_skl
    let rm_rhs = Tensor::from_fn(n, &[Down; 4], |ix| {
        let (i, jj, k, l) = (ix[0], ix[1], ix[2], ix[3]);
        let mut v = om[[i, jj, k, l]] + nth[[i, jj, k, l]] - nth[[jj, i, k, l]];
        for s in 0..n {
            v += th[[i, s, l]] * thu[[jj, k, s]] - th[[jj, s, l]] * thu[[i, k, s]]
                + b.tau_up[[i, jj, s]] * th[[s, k, l]];
        }
        v
    });
    push("prop:RmOmega", residual(rm, &rm_rhs, scale_of(&[rm, om, nth])), tol);

    // g^{il}∇_iΘ_jkl
    let div_theta = Tensor::from_fn(n, &[Down, Down], |ix| {
        let (jj, k) = (ix[0], ix[1]);
        let mut v = 0.0;
        for i in 0..n {
            for l in 0..n {
                v += gi[[i, l]] * nth[[i, jj, k, l]];
            }
        }
        v
    });
    let quad_rcncv = Tensor::from_fn(n, &[Down, Down], |ix| {
        let (jj, k) = (ix[0], ix[1]);
        let mut v = 0.0;
        for s in 0..n {
            v += lee[[s]] * thu[[jj, k, s]];
            for i in 0..n {
                v -= thu[[i, jj, s]] * thu[[s, k, i]];
            }
        }
        v
    });
    let rcncv = Tensor::from_fn(n, &[Down, Down], |ix| {
        let (jj, k) = (ix[0], ix[1]);
        b.v[[jj, k]] + div_theta[[jj, k]] - nlee[[jj, k]] + quad_rcncv[[jj, k]]
    });
    push("cor:RcncV", residual(&b.rc, &rcncv, scale_of(&[&b.rc, &b.v, &div_theta])), tol);

    // Ω_ijkl + Ω_jkil + Ω_kijl = cyclic ∇τ + cyclic ττ
    let ntau = nabla_values(&geo.chern, &Tensor::from_fn(n, &[Down; 3], |ix| {
        // τ_ijk = Θ_jik − Θ_ijk carries first partials through Θ
        geo.pack.theta[[ix[1], ix[0], ix[2]]] - geo.pack.theta[[ix[0], ix[1], ix[2]]]
    }));
    let tu = &b.tau_up;
    let ta = &b.tau;
    let cyc_rhs = Tensor::from_fn(n, &[Down; 4], |ix| {
        let (i, jj, k, l) = (ix[0], ix[1], ix[2], ix[3]);
        let mut v = ntau[[i, jj, k, l]] + ntau[[jj, k, i, l]] + ntau[[k, i, jj, l]];
        for s in 0..n {
            v += tu[[jj, k, s]] * ta[[s, i, l]] + tu[[k, i, s]] * ta[[s, jj, l]] + tu[[i, jj, s]] * ta[[s, k, l]];
        }
        v
    });
    push(
        "lem:omegacyc",
        residual(&cyclic_sum_first3(om), &cyc_rhs, scale_of(&[om, &ntau])),
        tol,
    );

    // T_klij expansion
    let t_rhs = Tensor::from_fn(n, &[Down; 4], |ix| {
        let (k, l, i, jj) = (ix[0], ix[1], ix[2], ix[3]);
        let mut v = nth[[i, jj, k, l]] - nth[[jj, i, k, l]] - nth[[k, l, i, jj]] + nth[[l, k, i, jj]];
        for s in 0..n {
            v += th[[i, s, l]] * thu[[jj, k, s]] - th[[k, s, jj]] * thu[[l, i, s]]
                - th[[jj, s, l]] * thu[[i, k, s]]
                + th[[l, s, jj]] * thu[[k, i, s]]
                + tu[[i, jj, s]] * th[[s, k, l]]
                - tu[[k, l, s]] * th[[s, i, jj]];
        }
        v
    });
    let t = &b.t;
    push("lem:Chernsymm", residual(t, &t_rhs, scale_of(&[om, nth])), tol);
    let t_sym = Tensor::from_fn(n, &[Down; 4], |ix| {
        let (i, jj, k, l) = (ix[0], ix[1], ix[2], ix[3]);
        (t[[i, jj, k, l]] + t[[k, l, i, jj]])
            .abs()
            .max((t[[i, jj, k, l]] + t[[jj, i, k, l]]).abs())
            .max((t[[i, jj, k, l]] + t[[i, jj, l, k]]).abs())
    });
    push("eq:Tsyms", residual_zero(&t_sym, scale_of(&[om])), tol);

    // shared pieces of the 𝒱 and Rc comparisons
    let jp_half = Tensor::from_fn(n, &[Down, Down], |ix| {
        0.5 * (0..n).map(|a| j[[ix[1], a]] * b.p[[ix[0], a]]).sum::<f64>()
    });
    let jj_nlee = Tensor::from_fn(n, &[Down, Down], |ix| {
        let (jj, k) = (ix[0], ix[1]);
        let mut v = 0.0;
        for a in 0..n {
            for u in 0..n {
                v += j[[k, a]] * j[[jj, u]] * nlee[[a, u]];
            }
        }
        0.5 * v
    });
    let jw_nth = Tensor::from_fn(n, &[Down, Down], |ix| {
        let (jj, k) = (ix[0], ix[1]);
        let mut v = 0.0;
        for a in 0..n {
            let mut inner = 0.0;
            for bb in 0..n {
                for r in 0..n {
                    inner += wi[[bb, r]] * nth[[bb, jj, a, r]];
                }
            }
            v += j[[k, a]] * inner;
        }
        v
    });
    let quad_vnjp = Tensor::from_fn(n, &[Down, Down], |ix| {
        let (jj, k) = (ix[0], ix[1]);
        let mut v = 0.0;
        for a in 0..n {
            let jka = j[[k, a]];
            if jka == 0.0 {
                continue;
            }
            let mut inner = 0.0;
            for bb in 0..n {
                for r in 0..n {
                    let w = wi[[bb, r]];
                    for s in 0..n {
                        inner += w * (thu[[a, r, s]] - thu[[r, a, s]]) * th[[jj, bb, s]]
                            + w * (thu[[jj, bb, s]] - thu[[bb, jj, s]]) * th[[s, a, r]];
                    }
                }
            }
            let mut lee_term = 0.0;
            for s in 0..n {
                let jl: f64 = (0..n).map(|p| j[[s, p]] * lee[[p]]).sum();
                lee_term += jl * (thu[[jj, a, s]] - thu[[a, jj, s]]);
            }
            v += jka * (inner + 0.5 * lee_term);
        }
        v
    });
    let vnjp = Tensor::from_fn(n, &[Down, Down], |ix| {
        let (jj, k) = (ix[0], ix[1]);
        jp_half[[jj, k]] + jw_nth[[jj, k]] + 0.5 * nlee[[jj, k]] + jj_nlee[[jj, k]] + quad_vnjp[[jj, k]]
    });
    push("lem:VnJP", residual(&b.v, &vnjp, scale_of(&[&b.v, &b.p, &jw_nth])), tol);

    let totdif = Tensor::from_fn(n, &[Down, Down], |ix| {
        let (jj, k) = (ix[0], ix[1]);
        jp_half[[jj, k]] - 0.5 * nlee[[jj, k]] + jj_nlee[[jj, k]] + div_theta[[jj, k]] + jw_nth[[jj, k]]
            + quad_vnjp[[jj, k]]
            + quad_rcncv[[jj, k]]
    });
    push(
        "cor:RcJPtotdif",
        residual(&b.rc, &totdif, scale_of(&[&b.rc, &b.p, &jw_nth, &div_theta])),
        tol,
    );
    rows
}

fn nabla_values(conn: &ConnectionCoeffs, t: &Tensor<Jet>) -> Tensor {
    nabla(t, &conn.values())
}

/// `T_ijkl + T_jkil + T_kijl`.
fn cyclic_sum_first3(t: &Tensor) -> Tensor {
    let n = t.dim();
    Tensor::from_fn(n, &[Down; 4], |ix| {
        let (i, j, k, l) = (ix[0], ix[1], ix[2], ix[3]);
        t[[i, j, k, l]] + t[[j, k, i, l]] + t[[k, i, j, l]]
    })
}

/// `Rc_jk − ½J_k^a 𝒫_ja` minus the claimed second-order part
/// `¼∇^l N_klj − ½∇_j ϑ_k + ½J_k^a J_j^y ∇_a ϑ_y − ½∇^e(J_e^r ψ_jkr + J_k^a ψ_jae)`.
pub fn rc_remainder(geo: &Geometry) -> Tensor {
    let n = geo.dim();
    let v = &geo.vals;
    let (gi, j) = (&v.g_inv, &v.j);
    let nlee = &geo.nabla_lee;
    let nn = nabla(&geo.pack.n_low, &geo.ups);
    let jj1 = geo.pack.j.truncate(1);
    let psi = &geo.pack.psi;
    let x = Tensor::from_fn(n, &[Down; 3], |ix| {
        let (e, jj, k) = (ix[0], ix[1], ix[2]);
        sum(n, |r| jj1[[e, r]] * psi[[jj, k, r]] + jj1[[k, r]] * psi[[jj, r, e]])
    });
    let nx = nabla(&x, &geo.ups);
    let b = &geo.bundle;
    Tensor::from_fn(n, &[Down, Down], |ix| {
        let (jj, k) = (ix[0], ix[1]);
        let mut lhs = b.rc[[jj, k]];
        let mut rhs = -0.5 * nlee[[jj, k]];
        for a in 0..n {
            lhs -= 0.5 * j[[k, a]] * b.p[[jj, a]];
            for y in 0..n {
                rhs += 0.5 * j[[k, a]] * j[[jj, y]] * nlee[[a, y]];
            }
        }
        for l in 0..n {
            for m in 0..n {
                rhs += 0.25 * gi[[l, m]] * nn[[m, k, l, jj]] - 0.5 * gi[[l, m]] * nx[[m, l, jj, k]];
            }
        }
        lhs - rhs
    })
}

/// Compares the Ricci remainder of two jets sharing order-0 and order-1 data.
pub fn second_order_isolation(a: &StructureJet, b: &StructureJet, seed: u64) -> Result<Row> {
    if !a.agrees_to_first_order(b, 1e-13) {
        return Err(Error::Invalid(
            "jets differ at order 0 or 1; second-order isolation needs shared low-order data".into(),
        ));
    }
    let (ga, gb) = (Geometry::new(a)?, Geometry::new(b)?);
    let (qa, qb) = (rc_remainder(&ga), rc_remainder(&gb));
    let scale = scale_of(&[&ga.bundle.rc, &gb.bundle.rc, &ga.bundle.p, &gb.bundle.p]);
    Ok(Row::new("prop:RcJPasN", a.n, seed, residual(&qa, &qb, scale), TOL_CURVATURE))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{random_ah_jet, random_kaehler_jet, JetRecipe, JetRng};
    use crate::tensor::{invert_matrix, max_diff};

    fn report(rows: &[Row]) -> String {
        rows.iter()
            .filter(|r| !r.pass)
            .map(|r| format!("{} {:e}\n", r.id, r.residual))
            .collect()
    }

    #[test]
    fn flat_jet_everything_zero() {
        let rows = identity_suite(&StructureJet::flat(4), 0).unwrap();
        assert!(rows.iter().all(|r| r.residual == 0.0), "{rows:?}");
        let geo = Geometry::new(&StructureJet::flat(4)).unwrap();
        assert_eq!(geo.ups.max_abs(), 0.0);
        assert_eq!(geo.bundle.rm.max_abs(), 0.0);
        assert_eq!(geo.bundle.rho, 0.0);
    }

    #[test]
    fn suite_passes_on_random_jets() {
        for n in [4, 6, 8] {
            let mut rng = JetRng::new(2024, n as u64);
            for seed in 0..3 {
                let jet = random_ah_jet(n, &mut rng, 0.1).unwrap();
                let rows = identity_suite(&jet, seed).unwrap();
                assert!(rows.iter().all(|r| r.pass), "n={n}:\n{}", report(&rows));
            }
        }
    }

    #[test]
    fn levi_civita_is_metric_and_symmetric() {
        let jet = random_ah_jet(6, &mut JetRng::new(4, 0), 0.2).unwrap();
        let lc = levi_civita(&jet).unwrap();
        let g = jet.g_jet().truncate(1);
        let dg = nabla(&g, &lc.values());
        assert!(dg.max_abs() < 1e-12);
        assert!(max_diff(&lc.values(), &lc.values().permute(&[1, 0, 2])) < 1e-15);
    }

    #[test]
    fn chern_connection_checked() {
        let jet = random_ah_jet(4, &mut JetRng::new(5, 0), 0.2).unwrap();
        let pack = FirstOrderPack::from_jet(&jet).unwrap();
        chern_connection(&pack).unwrap();
        // a pack with the wrong contorsion is rejected
        let mut bad = pack.clone();
        bad.theta = bad.theta.scale(0.5);
        assert!(chern_connection(&bad).is_err());
    }

    fn p_j_defect(geo: &Geometry) -> f64 {
        let p = &geo.bundle.p;
        let j = &geo.vals.j;
        residual(p, &p.twist_slot(0, j).twist_slot(1, j), p.max_abs())
    }

    #[test]
    fn chern_ricci_j_invariant_only_when_integrable() {
        let mut rng = JetRng::new(31, 0);
        for n in [4, 6] {
            let recipe = JetRecipe::random(n, &mut rng, 0.2).unwrap();
            let herm = Geometry::new(&recipe.with_constant_j().jet().unwrap()).unwrap();
            assert!(herm.vals.n_low.max_abs() < 1e-14);
            assert!(herm.vals.psi.max_abs() > 1e-3);
            assert!(p_j_defect(&herm) < 1e-10, "n={n}");
            let generic = Geometry::new(&recipe.jet().unwrap()).unwrap();
            assert!(p_j_defect(&generic) > 1e-3, "n={n}");
        }
    }

    #[test]
    fn kaehler_jet_has_equal_connections() {
        let jet = random_kaehler_jet(6, &mut JetRng::new(1, 0), 0.1).unwrap();
        let geo = Geometry::new(&jet).unwrap();
        assert!(geo.vals.psi.max_abs() < 1e-14);
        assert!(max_diff(&geo.ups, &geo.lc.values()) < 1e-14);
        assert!(max_diff(&geo.bundle.rm, &geo.bundle.omega) < 1e-12);
    }

    /// Solves the characterization of the Chern connection as a linear
    /// system for the contorsion `A` and compares it with the closed formula.
    #[test]
    fn contorsion_from_characterization_oracle() {
        for n in [4, 6] {
            let jet = random_ah_jet(n, &mut JetRng::new(77, n as u64), 0.2).unwrap();
            let geo = Geometry::new(&jet).unwrap();
            let (g, gi, j) = (&geo.vals.g, &geo.vals.g_inv, &geo.vals.j);
            let dj = nabla(&geo.pack.j.truncate(1), &geo.lc.values());
            let unknowns = n * n * n;
            let var = |i: usize, jj: usize, k: usize| (i * n + jj) * n + k;
            let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
            for k in 0..n {
                for i in 0..n {
                    for jj in 0..n {
                        let mut r = vec![0.0; unknowns];
                        r[var(k, i, jj)] += 1.0;
                        r[var(k, jj, i)] += 1.0;
                        rows.push((r, 0.0));
                    }
                }
            }
            // A_kl^m J_m^p − A_km^p J_l^m = −(DJ)_kl^p
            for k in 0..n {
                for l in 0..n {
                    for p in 0..n {
                        let mut r = vec![0.0; unknowns];
                        for q in 0..n {
                            let c: f64 = (0..n).map(|m| gi[[q, m]] * j[[m, p]]).sum();
                            r[var(k, l, q)] += c;
                            for m in 0..n {
                                r[var(k, m, q)] -= gi[[q, p]] * j[[l, m]];
                            }
                        }
                        rows.push((r, -dj[[k, l, p]]));
                    }
                }
            }
            // (1,1) part of A_ijk − A_jik vanishes
            for i in 0..n {
                for jj in 0..n {
                    for k in 0..n {
                        let mut r = vec![0.0; unknowns];
                        r[var(i, jj, k)] += 1.0;
                        r[var(jj, i, k)] -= 1.0;
                        for a in 0..n {
                            for bb in 0..n {
                                let c = j[[i, a]] * j[[jj, bb]];
                                r[var(a, bb, k)] += c;
                                r[var(bb, a, k)] -= c;
                            }
                        }
                        rows.push((r, 0.0));
                    }
                }
            }
            let mut ata = vec![0.0; unknowns * unknowns];
            let mut atb = vec![0.0; unknowns];
            for (r, rhs) in &rows {
                for (p, &rp) in r.iter().enumerate() {
                    if rp == 0.0 {
                        continue;
                    }
                    atb[p] += rp * rhs;
                    for (q, &rq) in r.iter().enumerate() {
                        ata[p * unknowns + q] += rp * rq;
                    }
                }
            }
            let inv = invert_matrix(unknowns, &ata).unwrap();
            let sol: Vec<f64> = (0..unknowns)
                .map(|p| (0..unknowns).map(|q| inv[p * unknowns + q] * atb[q]).sum())
                .collect();
            let a = Tensor::from_vec(n, &[Down; 3], sol).unwrap();
            assert!(max_diff(&a, &geo.vals.theta) < 1e-10, "n={n}");
            let _ = g;
        }
    }

    #[test]
    fn isolation_identical_jets_is_exactly_zero() {
        let jet = random_ah_jet(4, &mut JetRng::new(6, 0), 0.1).unwrap();
        let row = second_order_isolation(&jet, &jet, 0).unwrap();
        assert_eq!(row.residual, 0.0);
    }

    #[test]
    fn isolation_rejects_mismatched_jets() {
        let mut rng = JetRng::new(6, 0);
        let a = random_ah_jet(4, &mut rng, 0.1).unwrap();
        let b = random_ah_jet(4, &mut rng, 0.1).unwrap();
        assert!(second_order_isolation(&a, &b, 0).is_err());
    }

    #[test]
    fn isolation_on_flat_low_order_pair() {
        let mut rng = JetRng::new(8, 0);
        let r = JetRecipe::random(4, &mut rng, 0.1).unwrap().flatten_low_order();
        let s = r.redraw_second_order(&mut rng, 0.1);
        let row = second_order_isolation(&r.jet().unwrap(), &s.jet().unwrap(), 0).unwrap();
        assert!(row.pass, "{row:?}");
    }
}
