//! First-order invariants of an almost Hermitian structure.
//!
//! Everything here is generic over [`Scalar`]. Fed with jets, each output
//! carries its own exact first partials, which the curvature code consumes.

use serde::{Deserialize, Serialize};

use crate::field::StructureJet;
use crate::jet::Jet;
use crate::tensor::{
    invert_matrix, project3, sum, AlmostComplex, Part3, Scalar, Tensor, TensorError, Variance,
};
use crate::Result;

use Variance::{Down, Up};

/// Which exterior derivative the pipeline uses. `Unsigned` drops the
/// alternating signs and exists only as a negative control.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum DVariant {
    #[default]
    Standard,
    Unsigned,
}

/// `ω_ij = J_i^a g_ja`; errors if the pair is incompatible beyond 1e−10.
pub fn kaehler_form<S: Scalar>(g: &Tensor<S>, j: &Tensor<S>) -> Result<Tensor<S>> {
    g.expect_variance(&[Down, Down])?;
    j.expect_variance(&[Down, Up])?;
    let n = g.dim();
    let compat = (0..n * n)
        .map(|k| {
            let (a, b) = (k / n, k % n);
            let tw: f64 = (0..n)
                .flat_map(|p| (0..n).map(move |q| (p, q)))
                .map(|(p, q)| j[[a, p]].value() * j[[b, q]].value() * g[[p, q]].value())
                .sum();
            (g[[a, b]].value() - tw).abs()
        })
        .fold(0.0, f64::max);
    if compat > 1e-10 {
        return Err(TensorError::Constraint {
            what: "g = g(J·, J·)",
            residual: compat,
            tol: 1e-10,
        }
        .into());
    }
    Ok(omega_unchecked(g, j))
}

pub(crate) fn omega_unchecked<S: Scalar>(g: &Tensor<S>, j: &Tensor<S>) -> Tensor<S> {
    let n = g.dim();
    Tensor::from_fn(n, &[Down, Down], |ix| {
        sum(n, |a| j[[ix[0], a]].clone() * g[[ix[1], a]].clone())
    })
}

/// `(dη)_{i₀…i_k} = Σ_m (−1)^m ∂_{i_m} η_{i₀…î_m…i_k}` from the partials
/// `partials[c] = ∂_c η`.
pub fn exterior_d_from_partials<S: Scalar>(partials: &[Tensor<S>], variant: DVariant) -> Tensor<S> {
    let n = partials.len();
    let k = partials[0].rank();
    let mut rest = vec![0usize; k];
    Tensor::from_fn(n, &vec![Down; k + 1], |ix| {
        let mut acc = S::zero();
        for m in 0..=k {
            let mut p = 0;
            for (s, &i) in ix.iter().enumerate() {
                if s != m {
                    rest[p] = i;
                    p += 1;
                }
            }
            let term = partials[ix[m]].at(&rest).clone();
            if m % 2 == 1 && variant == DVariant::Standard {
                acc -= term;
            } else {
                acc += term;
            }
        }
        acc
    })
}

/// Exterior derivative of a skew covariant jet field.
pub fn exterior_d(eta: &Tensor<Jet>) -> Tensor<Jet> {
    exterior_d_variant(eta, DVariant::Standard)
}

pub fn exterior_d_variant(eta: &Tensor<Jet>, variant: DVariant) -> Tensor<Jet> {
    let n = eta.dim();
    let partials: Vec<_> = (0..n).map(|c| eta.partial(c)).collect();
    exterior_d_from_partials(&partials, variant)
}

/// `(d^c η) = −J^{⊗(k+1)} dη`.
pub fn dc_operator(eta: &Tensor<Jet>, j: &Tensor<Jet>) -> Tensor<Jet> {
    let d = exterior_d(eta);
    let jt = j.truncate(d.comps().first().map_or(2, |x| x.order()));
    let mut out = d;
    for s in 0..out.rank() {
        out = out.twist_slot(s, &jt);
    }
    out.scale(-1.0)
}

/// `N^i_{jk}`, stored as `[j, k, i]`.
pub fn nijenhuis(j: &Tensor<Jet>) -> Tensor<Jet> {
    let n = j.dim();
    let dj: Vec<Tensor<Jet>> = (0..n).map(|c| j.partial(c)).collect();
    nijenhuis_from_partials(&j.truncate(1), &dj)
}

/// The Nijenhuis tensor from `J` and `dj[c] = ∂_c J`.
pub fn nijenhuis_from_partials<S: Scalar>(j: &Tensor<S>, dj: &[Tensor<S>]) -> Tensor<S> {
    let n = j.dim();
    Tensor::from_fn(n, &[Down, Down, Up], |ix| {
        let (jj, k, i) = (ix[0], ix[1], ix[2]);
        let v = sum(n, |p| {
            j[[jj, p]].clone() * dj[p][[k, i]].clone() - j[[k, p]].clone() * dj[p][[jj, i]].clone()
                - j[[p, i]].clone() * dj[jj][[k, p]].clone()
                + j[[p, i]].clone() * dj[k][[jj, p]].clone()
        });
        v * 2.0
    })
}

/// `N_ijk = N^l_{ij} g_lk`.
pub fn lower_nijenhuis<S: Scalar>(n_up: &Tensor<S>, g: &Tensor<S>) -> Tensor<S> {
    let n = g.dim();
    Tensor::from_fn(n, &[Down, Down, Down], |ix| {
        sum(n, |l| n_up[[ix[0], ix[1], l]].clone() * g[[l, ix[2]]].clone())
    })
}

/// `ϑ_k = ½ ω^{ji} ψ_ijk`.
pub fn lee_form<S: Scalar>(omega_inv: &Tensor<S>, psi: &Tensor<S>) -> Tensor<S> {
    let n = psi.dim();
    Tensor::from_fn(n, &[Down], |ix| {
        let v = sum(n, |i| {
            sum(n, |jj| omega_inv[[jj, i]].clone() * psi[[i, jj, ix[0]]].clone())
        });
        v * 0.5
    })
}

/// `Ψ_ijk = ½(ψ_ijk + J_j^q J_k^r ψ_iqr + J_i^q J_k^r ψ_qjr + J_i^p J_j^q ψ_pqk)`.
pub fn psi_big<S: Scalar>(psi: &Tensor<S>, j: &Tensor<S>) -> Tensor<S> {
    let t1 = psi.twist_slot(1, j).twist_slot(2, j);
    let t2 = psi.twist_slot(0, j).twist_slot(2, j);
    let t3 = psi.twist_slot(0, j).twist_slot(1, j);
    let mut out = psi.clone();
    for (k, o) in out.comps_mut().iter_mut().enumerate() {
        *o = (o.clone() + t1.comps()[k].clone() + t2.comps()[k].clone() + t3.comps()[k].clone())
            * 0.5;
    }
    out
}

/// `Θ_ijk = ⅛ N_jki + ½ J_i^p Ψ_pjk`, the negative contorsion of the Chern
/// connection.
pub fn theta<S: Scalar>(n_low: &Tensor<S>, psi_big: &Tensor<S>, j: &Tensor<S>) -> Tensor<S> {
    let n = j.dim();
    let jp = psi_big.twist_slot(0, j);
    Tensor::from_fn(n, &[Down, Down, Down], |ix| {
        let (i, jj, k) = (ix[0], ix[1], ix[2]);
        n_low[[jj, k, i]].clone() * 0.125 + jp[[i, jj, k]].clone() * 0.5
    })
}

/// The `(3,0)+(0,3)` and `(2,1)+(1,2)` parts of `d^c ω` written in `ψ`.
pub fn dc_omega_parts_from_psi<S: Scalar>(psi: &Tensor<S>, j: &Tensor<S>) -> (Tensor<S>, Tensor<S>) {
    let sk = psi.twist_slot(2, j);
    let sj = psi.twist_slot(1, j);
    let si = psi.twist_slot(0, j);
    let sijk = si.twist_slot(1, j).twist_slot(2, j);
    let len = psi.comps().len();
    let mut pure = psi.clone();
    let mut mixed = psi.clone();
    for k in 0..len {
        let single = sk.comps()[k].clone() + si.comps()[k].clone() + sj.comps()[k].clone();
        let triple = sijk.comps()[k].clone();
        pure.comps_mut()[k] = (single.clone() - triple.clone()) * 0.25;
        mixed.comps_mut()[k] = triple * -0.75 - single * 0.25;
    }
    (pure, mixed)
}

/// The right side of the Nijenhuis cyclic identity written in `ψ`:
/// `2(J_k^r ψ_ijr + J_i^p ψ_pjk + J_j^q ψ_iqk − J_i^p J_j^q J_k^r ψ_pqr)`.
pub fn n_cyclic_from_psi<S: Scalar>(psi: &Tensor<S>, j: &Tensor<S>) -> Tensor<S> {
    dc_omega_parts_from_psi(psi, j).0.scale(8.0)
}

/// `N_ijk + N_jki + N_kij`.
pub fn cyclic_sum<S: Scalar>(t: &Tensor<S>) -> Tensor<S> {
    let n = t.dim();
    Tensor::from_fn(n, &[Down, Down, Down], |ix| {
        let (i, j, k) = (ix[0], ix[1], ix[2]);
        t[[i, j, k]].clone() + t[[j, k, i]].clone() + t[[k, i, j]].clone()
    })
}

/// First-order invariants of one structure, with inverses of `g` and `ω`.
#[derive(Clone, Debug)]
pub struct FirstOrderPack<S = Jet> {
    pub g: Tensor<S>,
    pub g_inv: Tensor<S>,
    pub j: Tensor<S>,
    pub omega: Tensor<S>,
    /// Matrix inverse of `ω`: `ω^{ac} ω_cb = δ^a_b`.
    pub omega_inv: Tensor<S>,
    pub psi: Tensor<S>,
    /// `N^i_{jk}` stored as `[j, k, i]`.
    pub n_up: Tensor<S>,
    pub n_low: Tensor<S>,
    pub lee: Tensor<S>,
    pub psi_big: Tensor<S>,
    pub theta: Tensor<S>,
}

impl FirstOrderPack<Jet> {
    pub fn from_jet(jet: &StructureJet) -> Result<Self> {
        Self::from_jet_variant(jet, DVariant::Standard)
    }

    pub fn from_jet_variant(jet: &StructureJet, variant: DVariant) -> Result<Self> {
        let g = jet.g_jet();
        let j = jet.j_jet();
        let n = jet.n;
        let omega = omega_unchecked(&g, &j);
        let g_inv = Tensor::from_vec(n, &[Up, Up], invert_matrix(n, g.comps())?)?;
        let omega_inv = Tensor::from_vec(n, &[Up, Up], invert_matrix(n, omega.comps())?)?;
        let psi = exterior_d_variant(&omega, variant);
        let n_up = nijenhuis(&j);
        // order-1 copies for products with first-order quantities
        let (g1, j1, wi1) = (g.truncate(1), j.truncate(1), omega_inv.truncate(1));
        let n_low = lower_nijenhuis(&n_up, &g1);
        let lee = lee_form(&wi1, &psi);
        let psi_big = psi_big(&psi, &j1);
        let theta = theta(&n_low, &psi_big, &j1);
        Ok(FirstOrderPack {
            g,
            g_inv,
            j,
            omega,
            omega_inv,
            psi,
            n_up,
            n_low,
            lee,
            psi_big,
            theta,
        })
    }

    /// Pointwise values of every field.
    pub fn values(&self) -> FirstOrderPack<f64> {
        FirstOrderPack {
            g: self.g.values(),
            g_inv: self.g_inv.values(),
            j: self.j.values(),
            omega: self.omega.values(),
            omega_inv: self.omega_inv.values(),
            psi: self.psi.values(),
            n_up: self.n_up.values(),
            n_low: self.n_low.values(),
            lee: self.lee.values(),
            psi_big: self.psi_big.values(),
            theta: self.theta.values(),
        }
    }
}

impl FirstOrderPack<f64> {
    /// Values of every field from `(g, J)` and their first partials
    /// `dg[c] = ∂_c g`, `dj[c] = ∂_c J`.
    pub fn from_partials(g: &Tensor, j: &Tensor, dg: &[Tensor], dj: &[Tensor]) -> Result<Self> {
        let n = g.dim();
        let omega = omega_unchecked(g, j);
        let domega: Vec<Tensor> = (0..n)
            .map(|c| &omega_unchecked(g, &dj[c]) + &omega_unchecked(&dg[c], j))
            .collect();
        let g_inv = Tensor::from_vec(n, &[Up, Up], invert_matrix(n, g.comps())?)?;
        let omega_inv = Tensor::from_vec(n, &[Up, Up], invert_matrix(n, omega.comps())?)?;
        let psi = exterior_d_from_partials(&domega, DVariant::Standard);
        let n_up = nijenhuis_from_partials(j, dj);
        let n_low = lower_nijenhuis(&n_up, g);
        let lee = lee_form(&omega_inv, &psi);
        let psi_big = psi_big(&psi, j);
        let theta = theta(&n_low, &psi_big, j);
        Ok(FirstOrderPack {
            g: g.clone(),
            g_inv,
            j: j.clone(),
            omega,
            omega_inv,
            psi,
            n_up,
            n_low,
            lee,
            psi_big,
            theta,
        })
    }
}

impl<S: Scalar> FirstOrderPack<S> {
    pub fn dim(&self) -> usize {
        self.g.dim()
    }

    pub fn complex(&self) -> AlmostComplex<S> {
        AlmostComplex { j: self.j.clone() }
    }

    /// `ψ^{2,1+1,2} − ψ^{3,0+0,3}`.
    pub fn psi_big_by_types(&self) -> Result<Tensor<S>> {
        let jc = self.complex();
        let mixed = project3(&self.psi, Part3::Mixed, &jc)?;
        let pure = project3(&self.psi, Part3::Pure, &jc)?;
        Ok(&mixed - &pure)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{random_ah_jet, JetRng};
    use crate::tensor::max_diff;

    fn sign(p: &[usize]) -> f64 {
        let mut s = 1.0;
        for a in 0..p.len() {
            for b in a + 1..p.len() {
                if p[a] > p[b] {
                    s = -s;
                }
            }
        }
        s
    }

    #[test]
    fn flat_structure_is_trivial() {
        let pack = FirstOrderPack::from_jet(&StructureJet::flat(6)).unwrap().values();
        assert_eq!(pack.omega, crate::tensor::j_standard::<f64>(6).with_variance(&[Down, Down]).unwrap());
        for t in [&pack.psi, &pack.n_low, &pack.lee, &pack.psi_big, &pack.theta] {
            assert_eq!(t.max_abs(), 0.0);
        }
    }

    #[test]
    fn d_matches_permutation_oracle() {
        let jet = random_ah_jet(6, &mut JetRng::new(7, 0), 0.2).unwrap();
        let w = jet.omega_jet();
        let psi = exterior_d(&w).values();
        let perms = crate::field::permutations(3);
        let oracle = Tensor::from_fn(6, &[Down, Down, Down], |ix| {
            // (1/2!) Σ_σ sgn σ ∂_{σ0} ω_{σ1 σ2}
            perms
                .iter()
                .map(|p| sign(p) * w[[ix[p[1]], ix[p[2]]]].grad(ix[p[0]]))
                .sum::<f64>()
                / 2.0
        });
        assert!(max_diff(&psi, &oracle) < 1e-13);
    }

    #[test]
    fn dd_vanishes_on_quadratic_function() {
        // d(df) for f quadratic: ∂_i∂_j f − ∂_j∂_i f = 0
        let n = 4;
        let hess: Vec<f64> = (0..16).map(|k| ((k / 4) * (k % 4)) as f64 + 1.0).collect();
        let f = Jet::new(0.3, &[1.0, -2.0, 0.5, 0.0], &hess);
        let df = Tensor::from_fn(n, &[Down], |ix| f.partial(ix[0]));
        let ddf = exterior_d(&df);
        assert!(ddf.values().max_abs() < 1e-13);
    }

    #[test]
    fn random_structure_basics() {
        let jet = random_ah_jet(6, &mut JetRng::new(42, 0), 0.1).unwrap();
        let pack = FirstOrderPack::from_jet(&jet).unwrap().values();
        let skew = max_diff(&pack.omega, &pack.omega.permute(&[1, 0]).scale(-1.0));
        assert!(skew < 1e-14);
        // g_ij = J_i^s ω_js and J_i^j = ω^{js} g_is
        let g2 = Tensor::from_fn(6, &[Down, Down], |ix| {
            (0..6).map(|s| pack.j[[ix[0], s]] * pack.omega[[ix[1], s]]).sum::<f64>()
        });
        assert!(max_diff(&g2, &pack.g) < 1e-13);
        let j2 = Tensor::from_fn(6, &[Down, Up], |ix| {
            (0..6).map(|s| pack.omega_inv[[ix[1], s]] * pack.g[[ix[0], s]]).sum::<f64>()
        });
        assert!(max_diff(&j2, &pack.j) < 1e-13);
        assert!(pack.n_low.max_abs() > 1e-3);
        assert!(pack.psi.max_abs() > 1e-3);
        for (a, b, c) in [(0, 1, 2), (1, 2, 0)] {
            let p = pack.psi.permute(&[a, b, c]);
            assert!(max_diff(&p, &pack.psi.scale(sign(&[a, b, c]))) < 1e-13);
        }
    }

    #[test]
    fn kaehler_form_rejects_incompatible_pair() {
        let mut g = Tensor::<f64>::identity(4).with_variance(&[Down, Down]).unwrap();
        g[[0, 0]] = 2.0;
        let j = crate::tensor::j_standard::<f64>(4);
        assert!(kaehler_form(&g, &j).is_err());
    }

    #[test]
    fn unsigned_variant_breaks_skewness() {
        let jet = random_ah_jet(4, &mut JetRng::new(2, 0), 0.1).unwrap();
        let p = FirstOrderPack::from_jet_variant(&jet, DVariant::Unsigned).unwrap().values();
        assert!(max_diff(&p.psi, &p.psi.permute(&[1, 0, 2]).scale(-1.0)) > 1e-3);
    }
}
