//! Principal symbols by differentiating along second-order jet perturbations.
//!
//! The operator is evaluated on `jet + ε·V·(ξ⊗ξ)` (second partials only),
//! centrally differenced in `ε` and Richardson-extrapolated over two step sizes.

use std::str::FromStr;

use crate::chern::{curvature, levi_civita, Geometry};
use crate::field::{Field, JetRng, StructureJet};
use crate::jet::Jet;
use crate::report::{residual, residual_zero, Row};
use crate::tensor::{max_diff, project2, sum, AlmostComplex, Part2, Tensor, Variance};
use crate::{Error, Result};

use super::rhs::{lie_derivative, operator_a, z_field, Background, FlowPoint, FlowSettings};

use Variance::{Down, Up};

/// Step sizes for the ε-differencing; the second is half the first.
pub const SYMBOL_EPS: [f64; 2] = [1e-3, 5e-4];
pub const TOL_SYMBOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SymbolOp {
    /// The gauged `J` equation.
    D1,
    /// The gauged metric equation.
    D2,
    /// The operator `A(J)`.
    A,
    /// The ungauged `J` equation plus `−L_Z J + L_ϑ J`, the form `L_X J` takes
    /// under the relation `Z = −X + ϑ`.
    D1Rewritten,
}

impl FromStr for SymbolOp {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "D1" => Ok(SymbolOp::D1),
            "D2" => Ok(SymbolOp::D2),
            "A" => Ok(SymbolOp::A),
            "D1REWRITTEN" => Ok(SymbolOp::D1Rewritten),
            other => Err(Error::Invalid(format!("unknown operator {other:?}; expected D1, D2 or A"))),
        }
    }
}

/// A second-order direction: a `J`-variation `[a, c] = K_a^c` or a metric
/// variation `h_ij`.
#[derive(Clone, Debug)]
pub enum Variation {
    J(Tensor),
    G(Tensor),
}

const TOL_ADMISSIBLE: f64 = 1e-10;

impl Variation {
    /// Checks `KJ + JK = 0` and skewness of `K_a^c g_cb` for `J`-variations,
    /// symmetry for metric variations.
    pub fn validate(&self, jet: &StructureJet) -> Result<()> {
        let n = jet.n;
        match self {
            Variation::J(k) => {
                k.expect_variance(&[Down, Up])?;
                let (g, j) = (&jet.g0, &jet.j0);
                let scale = k.max_abs().max(f64::MIN_POSITIVE);
                let mut worst = 0.0f64;
                for a in 0..n {
                    for c in 0..n {
                        let ac = sum(n, |m| k[[a, m]] * j[[m, c]] + j[[a, m]] * k[[m, c]]);
                        let low = sum(n, |m| k[[a, m]] * g[[m, c]] + k[[c, m]] * g[[m, a]]);
                        worst = worst.max(ac.abs()).max(low.abs());
                    }
                }
                if !(worst / scale <= TOL_ADMISSIBLE) {
                    return Err(Error::Invalid(format!(
                        "not a J-variation: KJ + JK or the symmetric part of Kg is {:e}",
                        worst / scale
                    )));
                }
            }
            Variation::G(h) => {
                h.expect_variance(&[Down, Down])?;
                let asym = max_diff(h, &h.permute(&[1, 0]));
                if !(asym <= TOL_ADMISSIBLE * h.max_abs().max(f64::MIN_POSITIVE)) {
                    return Err(Error::Invalid("metric variation is not symmetric".into()));
                }
            }
        }
        Ok(())
    }

    fn perturb(&self, jet: &StructureJet, xi: &[f64], eps: f64) -> StructureJet {
        match self {
            Variation::J(k) => jet.perturb_second_order(Field::J, k, xi, eps),
            Variation::G(h) => jet.perturb_second_order(Field::G, h, xi, eps),
        }
    }
}

/// `σ̂` of the gauged metric operator only needs `g`: `−2Rc + L_X g`.
pub fn metric_operator(jet: &StructureJet, background: &Background) -> Result<Tensor> {
    let n = jet.n;
    let lc = levi_civita(jet)?;
    let g = jet.g_jet();
    let g_inv = Tensor::from_vec(n, &[Up, Up], crate::tensor::invert_matrix(n, g.comps())?)?;
    let rm = curvature(&lc, &jet.g0);
    let gi0 = g_inv.values();
    let rc = Tensor::from_fn(n, &[Down, Down], |ix| {
        let mut acc = 0.0;
        for i in 0..n {
            for l in 0..n {
                acc += gi0[[i, l]] * rm[[i, ix[0], ix[1], l]];
            }
        }
        acc
    });
    let gi1 = g_inv.truncate(1);
    let x = Tensor::from_fn(n, &[Up], |ix| {
        let mut acc = Jet::constant(0.0);
        for k in 0..n {
            for l in 0..n {
                acc += gi1[[k, l]] * (lc.coeffs[[k, l, ix[0]]] - Jet::constant(background.coeff(k, l, ix[0])));
            }
        }
        acc
    });
    let lxg = lie_derivative(&g.truncate(1), &x);
    Ok(lxg.zip_with(&rc, |l, r| l - 2.0 * r))
}

fn evaluate(op: SymbolOp, jet: &StructureJet, settings: &FlowSettings) -> Result<Tensor> {
    match op {
        SymbolOp::D1 => {
            let s = FlowSettings {
                gauged: true,
                ..settings.clone()
            };
            Ok(FlowPoint::new(jet, &s)?.rhs.dj_dt)
        }
        SymbolOp::D2 => metric_operator(jet, &settings.background),
        SymbolOp::A => Ok(operator_a(&Geometry::new(jet)?)),
        SymbolOp::D1Rewritten => {
            let s = FlowSettings {
                gauged: false,
                ..settings.clone()
            };
            let fp = FlowPoint::new(jet, &s)?;
            let lzj = lie_derivative(&fp.geo.pack.j.truncate(1), &z_field(&fp.geo, &settings.background));
            Ok(fp.rhs.dj_dt.zip_with(&lzj, |d, l| d - l).zip_with(&fp.terms.lie_theta_j, |a, b| a + b))
        }
    }
}

/// Second-order part of the linearization of `op` in the direction of
/// `variation`, for the plane wave `ξ`.
pub fn principal_symbol(
    op: SymbolOp,
    xi: &[f64],
    variation: &Variation,
    jet: &StructureJet,
    settings: &FlowSettings,
) -> Result<Tensor> {
    if xi.len() != jet.n || !(xi.iter().map(|x| x * x).sum::<f64>() > 0.0) {
        return Err(Error::Invalid("ξ must be a nonzero covector of the jet dimension".into()));
    }
    variation.validate(jet)?;
    if op != SymbolOp::D2 && matches!(variation, Variation::G(_)) {
        return Err(Error::Invalid(format!("{op:?} symbols are taken along J-variations")));
    }
    let central = |eps: f64| -> Result<Tensor> {
        let plus = evaluate(op, &variation.perturb(jet, xi, eps), settings)?;
        let minus = evaluate(op, &variation.perturb(jet, xi, -eps), settings)?;
        Ok(plus.zip_with(&minus, |p, m| (p - m) / (2.0 * eps)))
    };
    let coarse = central(SYMBOL_EPS[0])?;
    let fine = central(SYMBOL_EPS[1])?;
    Ok(fine.zip_with(&coarse, |f, c| (4.0 * f - c) / 3.0))
}

/// `|ξ|² = g^{ij} ξ_i ξ_j` at the base point.
pub fn xi_norm_sq(jet: &StructureJet, xi: &[f64]) -> Result<f64> {
    let n = jet.n;
    let gi = crate::tensor::invert_matrix(n, jet.g0.comps())?;
    Ok((0..n).map(|i| (0..n).map(|j| gi[i * n + j] * xi[i] * xi[j]).sum::<f64>()).sum())
}

/// `⟨X, H⟩ = X_a^c H_r^e g^{ar} g_ce`.
pub fn pairing(x: &Tensor, h: &Tensor, g: &Tensor, g_inv: &Tensor) -> f64 {
    let n = g.dim();
    let mut acc = 0.0;
    for a in 0..n {
        for r in 0..n {
            for c in 0..n {
                for e in 0..n {
                    acc += x[[a, c]] * h[[r, e]] * g_inv[[a, r]] * g[[c, e]];
                }
            }
        }
    }
    acc
}

/// `K = (β^{2,0+0,2}) g^{-1}` for a random 2-form `β`.
pub fn random_j_variation(jet: &StructureJet, rng: &mut JetRng) -> Result<Tensor> {
    let n = jet.n;
    let mut beta = Tensor::zeros(n, &[Down, Down]);
    for a in 0..n {
        for b in a + 1..n {
            let x = rng.uniform();
            beta[[a, b]] = x;
            beta[[b, a]] = -x;
        }
    }
    let anti = project2(&beta, Part2::JAnti, &AlmostComplex { j: jet.j0.clone() })?;
    let gi = crate::tensor::invert_matrix(n, jet.g0.comps())?;
    Ok(Tensor::from_fn(n, &[Down, Up], |ix| {
        (0..n).map(|v| anti[[ix[0], v]] * gi[v * n + ix[1]]).sum()
    }))
}

pub fn random_metric_variation(n: usize, rng: &mut JetRng) -> Tensor {
    let mut h = Tensor::zeros(n, &[Down, Down]);
    for a in 0..n {
        for b in a..n {
            let x = rng.uniform();
            h[[a, b]] = x;
            h[[b, a]] = x;
        }
    }
    h
}

/// Orthogonal projection of a mixed tensor onto `J`-variations: lower with
/// `g`, take the skew `(2,0)+(0,2)` part, raise again.
pub fn project_j_variation(t: &Tensor, g: &Tensor, g_inv: &Tensor, j: &Tensor) -> Tensor {
    let n = g.dim();
    let low = Tensor::from_fn(n, &[Down, Down], |ix| sum(n, |c| t[[ix[0], c]] * g[[c, ix[1]]]));
    let skew = crate::tensor::sym_skew(&low, crate::tensor::SymPart::Skew).expect("rank 2");
    let anti = project2(&skew, Part2::JAnti, &AlmostComplex { j: j.clone() }).expect("covariant");
    Tensor::from_fn(n, &[Down, Up], |ix| sum(n, |v| anti[[ix[0], v]] * g_inv[[v, ix[1]]]))
}

/// Symbol rows for `samples` random `(ξ, K, H, h)` at one jet.
pub fn symbol_rows(
    jet: &StructureJet,
    seed: u64,
    samples: usize,
    ops: &[SymbolOp],
    settings: &FlowSettings,
    rng: &mut JetRng,
) -> Result<Vec<Row>> {
    let n = jet.n;
    let gi = Tensor::from_vec(n, &[Up, Up], crate::tensor::invert_matrix(n, jet.g0.comps())?)?;
    let g = &jet.g0;
    let mut rows = Vec::new();
    for _ in 0..samples {
        let xi = rng.unit_covector(n);
        let k = random_j_variation(jet, rng)?;
        let hj = random_j_variation(jet, rng)?;
        let h = random_metric_variation(n, rng);
        let xi2 = xi_norm_sq(jet, &xi)?;
        let kv = Variation::J(k.clone());
        let norm = |t: &Tensor| pairing(t, t, g, &gi).abs().sqrt();
        for &op in ops {
            match op {
                SymbolOp::D1 => {
                    let s = principal_symbol(op, &xi, &kv, jet, settings)?;
                    let want = k.scale(xi2);
                    rows.push(Row::new("ss:mtproof.D1", n, seed, residual(&s, &want, 0.0), TOL_SYMBOL));
                }
                SymbolOp::D1Rewritten => {
                    let s = principal_symbol(op, &xi, &kv, jet, settings)?;
                    let s = project_j_variation(&s, g, &gi, &jet.j0);
                    let want = k.scale(xi2);
                    let r = residual(&s, &want, 0.0);
                    rows.push(Row::new("ss:mtproof.D1rewritten", n, seed, r, TOL_SYMBOL));
                }
                SymbolOp::D2 => {
                    let s = principal_symbol(op, &xi, &Variation::G(h.clone()), jet, settings)?;
                    let want = h.scale(xi2);
                    rows.push(Row::new("ss:mtproof.D2g", n, seed, residual(&s, &want, 0.0), TOL_SYMBOL));
                    let s = principal_symbol(op, &xi, &kv, jet, settings)?;
                    let r = residual_zero(&s, xi2 * k.max_abs());
                    rows.push(Row::new("ss:mtproof.D2J", n, seed, r, TOL_SYMBOL));
                }
                SymbolOp::A => {
                    let s = principal_symbol(op, &xi, &kv, jet, settings)?;
                    let p = pairing(&s, &hj, g, &gi);
                    let scale = xi2 * norm(&k) * norm(&hj);
                    let r = crate::report::relative(p.abs(), scale);
                    rows.push(Row::new("prop:dim4leeform", n, seed, r, TOL_SYMBOL));
                }
            }
        }
    }
    Ok(rows)
}
