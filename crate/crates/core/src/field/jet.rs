//! Exact 2-jets of almost Hermitian structures at a point.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::jet::{Jet, MAX_DIM};
use crate::tensor::{invert_matrix, is_positive_definite, j_standard, sum, Tensor, Variance};
use crate::{Error, Result};

use Variance::{Down, Up};

const MAX_DRAWS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Field {
    G,
    J,
    Omega,
}

/// Seeded generator for jets. The same `(seed, stream)` pair always
/// produces bitwise identical output.
#[derive(Clone, Debug)]
pub struct JetRng {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl JetRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        JetRng { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.gen_range(-1.0..1.0)
    }

    pub fn unit_covector(&mut self, n: usize) -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..n).map(|_| self.uniform()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.1 {
                return v.into_iter().map(|x| x / norm).collect();
            }
        }
    }
}

/// Value, first and second partials of `(g, J)` at a point.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StructureJet {
    pub n: usize,
    pub g0: Tensor,
    pub j0: Tensor,
    /// `dg[c]` is `∂_c g`.
    pub dg: Vec<Tensor>,
    pub dj: Vec<Tensor>,
    /// `ddg[c * n + d]` is `∂_c ∂_d g`; symmetric in `(c, d)`.
    pub ddg: Vec<Tensor>,
    pub ddj: Vec<Tensor>,
}

fn pack_jets(n: usize, var: &[Variance], v: &Tensor, d: &[Tensor], dd: &[Tensor]) -> Tensor<Jet> {
    Tensor::from_fn(n, var, |ix| {
        let k = v.offset(ix);
        let grad: Vec<f64> = (0..n).map(|c| d[c].comps()[k]).collect();
        let hess: Vec<f64> = (0..n * n).map(|cd| dd[cd].comps()[k]).collect();
        Jet::new(v.comps()[k], &grad, &hess)
    })
}

fn unpack_jets(t: &Tensor<Jet>) -> (Tensor, Vec<Tensor>, Vec<Tensor>) {
    let n = t.dim();
    let v = t.values();
    let d = (0..n).map(|c| t.map(|x| x.grad(c))).collect();
    let dd = (0..n * n)
        .map(|cd| t.map(|x| x.hess(cd / n, cd % n)))
        .collect();
    (v, d, dd)
}

pub(crate) fn omega_from(g: &Tensor<Jet>, j: &Tensor<Jet>) -> Tensor<Jet> {
    // ω_ij = J_i^a g_ja
    let n = g.dim();
    Tensor::from_fn(n, &[Down, Down], |ix| {
        sum(n, |a| j[[ix[0], a]] * g[[ix[1], a]])
    })
}

impl StructureJet {
    pub fn from_jets(g: &Tensor<Jet>, j: &Tensor<Jet>) -> Self {
        let n = g.dim();
        let (g0, dg, ddg) = unpack_jets(g);
        let (j0, dj, ddj) = unpack_jets(j);
        StructureJet {
            n,
            g0,
            j0,
            dg,
            dj,
            ddg,
            ddj,
        }
    }

    /// `g = δ`, `J = J_std`, all partials zero.
    pub fn flat(n: usize) -> Self {
        let g = Tensor::<Jet>::identity(n)
            .with_variance(&[Down, Down])
            .unwrap()
            .map(|x| Jet::new(x.value(), &vec![0.0; n], &vec![0.0; n * n]));
        let j = j_standard::<f64>(n).map(|&x| Jet::new(x, &vec![0.0; n], &vec![0.0; n * n]));
        StructureJet::from_jets(&g, &j)
    }

    pub fn g_jet(&self) -> Tensor<Jet> {
        pack_jets(self.n, &[Down, Down], &self.g0, &self.dg, &self.ddg)
    }

    pub fn j_jet(&self) -> Tensor<Jet> {
        pack_jets(self.n, &[Down, Up], &self.j0, &self.dj, &self.ddj)
    }

    pub fn omega_jet(&self) -> Tensor<Jet> {
        omega_from(&self.g_jet(), &self.j_jet())
    }

    /// Largest residual of `J² = −Id` and `g = g(J·, J·)` over orders 0–2.
    pub fn constraint_residuals(&self) -> ConstraintResiduals {
        let n = self.n;
        let g = self.g_jet();
        let j = self.j_jet();
        let jsq = Tensor::from_fn(n, &[Down, Up], |ix| {
            let delta = if ix[0] == ix[1] { 1.0 } else { 0.0 };
            sum(n, |p| j[[ix[0], p]] * j[[p, ix[1]]]) + Jet::constant(delta)
        });
        let compat = Tensor::from_fn(n, &[Down, Down], |ix| {
            let tw = sum(n, |a| {
                sum(n, |b| j[[ix[0], a]] * j[[ix[1], b]] * g[[a, b]])
            });
            g[[ix[0], ix[1]]] - tw
        });
        ConstraintResiduals {
            j_squared: order_maxima(&jsq),
            compatibility: order_maxima(&compat),
            g_asymmetry: (0..n)
                .flat_map(|a| (0..n).map(move |b| (a, b)))
                .map(|(a, b)| (self.g0[[a, b]] - self.g0[[b, a]]).abs())
                .fold(0.0, f64::max),
            positive_definite: is_positive_definite(n, self.g0.comps()),
        }
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        let r = self.constraint_residuals();
        if !r.positive_definite {
            return Err(Error::Invalid("metric is not positive definite".into()));
        }
        let worst = r.worst();
        if worst > tol {
            return Err(Error::Invalid(format!(
                "structure jet constraint residual {worst:e} exceeds {tol:e}"
            )));
        }
        Ok(())
    }

    /// Returns a copy whose second partials of `J` are shifted by
    /// `eps · K · ξ_c ξ_d`.
    pub fn perturb_second_order(&self, field: Field, k: &Tensor, xi: &[f64], eps: f64) -> Self {
        let mut out = self.clone();
        let n = self.n;
        let target = match field {
            Field::G => &mut out.ddg,
            Field::J => &mut out.ddj,
            Field::Omega => panic!("ω is derived; perturb g or J"),
        };
        for c in 0..n {
            for d in 0..n {
                let w = eps * xi[c] * xi[d];
                let t = &mut target[c * n + d];
                for (x, kv) in t.comps_mut().iter_mut().zip(k.comps()) {
                    *x += w * kv;
                }
            }
        }
        out
    }

    /// True when order-0 and order-1 data agree to `tol`.
    pub fn agrees_to_first_order(&self, other: &StructureJet, tol: f64) -> bool {
        use crate::tensor::max_diff;
        self.n == other.n
            && max_diff(&self.g0, &other.g0) <= tol
            && max_diff(&self.j0, &other.j0) <= tol
            && self
                .dg
                .iter()
                .zip(&other.dg)
                .chain(self.dj.iter().zip(&other.dj))
                .all(|(a, b)| max_diff(a, b) <= tol)
    }
}

/// Reads one stored first-partial coefficient. `∂ω` is assembled by the
/// Leibniz rule from `∂J` and `∂g`.
pub fn jet_partial(jet: &StructureJet, field: Field, direction: usize) -> Tensor {
    let n = jet.n;
    assert!(direction < n, "direction {direction} out of range");
    match field {
        Field::G => jet.dg[direction].clone(),
        Field::J => jet.dj[direction].clone(),
        Field::Omega => {
            let dj = &jet.dj[direction];
            let dg = &jet.dg[direction];
            Tensor::from_fn(n, &[Down, Down], |ix| {
                let (i, j) = (ix[0], ix[1]);
                (0..n)
                    .map(|a| dj[[i, a]] * jet.g0[[j, a]] + jet.j0[[i, a]] * dg[[j, a]])
                    .sum()
            })
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConstraintResiduals {
    /// Max residual of `J² + Id` at orders 0, 1, 2.
    pub j_squared: [f64; 3],
    pub compatibility: [f64; 3],
    pub g_asymmetry: f64,
    pub positive_definite: bool,
}

impl ConstraintResiduals {
    pub fn worst(&self) -> f64 {
        self.j_squared
            .iter()
            .chain(&self.compatibility)
            .copied()
            .fold(self.g_asymmetry, f64::max)
    }
}

fn order_maxima(t: &Tensor<Jet>) -> [f64; 3] {
    let n = t.dim();
    let mut out = [0.0f64; 3];
    for x in t.comps() {
        out[0] = out[0].max(x.value().abs());
        for c in 0..n {
            out[1] = out[1].max(x.grad(c).abs());
            for d in 0..n {
                out[2] = out[2].max(x.hess(c, d).abs());
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Random admissible jets

/// Polynomial coefficients behind a random jet: `A(x)` and `h(x)` of degree 2.
/// `J = A J_std A⁻¹` and `g = ½(h + h(J·, J·))`.
#[derive(Clone, Debug)]
pub struct JetRecipe {
    pub n: usize,
    pub a0: Vec<f64>,
    pub a1: Vec<Vec<f64>>,
    pub a2: Vec<Vec<f64>>,
    pub h0: Vec<f64>,
    pub h1: Vec<Vec<f64>>,
    pub h2: Vec<Vec<f64>>,
}

fn random_matrix(rng: &mut JetRng, n: usize, scale: f64, symmetric: bool) -> Vec<f64> {
    let mut m: Vec<f64> = (0..n * n).map(|_| scale * rng.uniform()).collect();
    if symmetric {
        for i in 0..n {
            for j in 0..i {
                let s = 0.5 * (m[i * n + j] + m[j * n + i]);
                m[i * n + j] = s;
                m[j * n + i] = s;
            }
        }
    }
    m
}

fn second_order_coeffs(rng: &mut JetRng, n: usize, scale: f64, symmetric: bool) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new(); n * n];
    for c in 0..n {
        for d in c..n {
            let m = random_matrix(rng, n, scale, symmetric);
            out[c * n + d] = m.clone();
            out[d * n + c] = m;
        }
    }
    out
}

fn add_identity(mut m: Vec<f64>, n: usize) -> Vec<f64> {
    for i in 0..n {
        m[i * n + i] += 1.0;
    }
    m
}

fn check_dims(n: usize) -> Result<()> {
    if n % 2 != 0 || !(4..=MAX_DIM).contains(&n) {
        return Err(Error::Invalid(format!(
            "dimension must be even and in 4..=8, got {n}"
        )));
    }
    Ok(())
}

impl JetRecipe {
    pub fn random(n: usize, rng: &mut JetRng, amplitude: f64) -> Result<Self> {
        check_dims(n)?;
        if !(0.0..=0.3).contains(&amplitude) {
            return Err(Error::Invalid(format!(
                "amplitude must lie in [0, 0.3], got {amplitude}"
            )));
        }
        for _ in 0..MAX_DRAWS {
            let recipe = JetRecipe {
                n,
                a0: add_identity(random_matrix(rng, n, amplitude, false), n),
                a1: (0..n).map(|_| random_matrix(rng, n, amplitude, false)).collect(),
                a2: second_order_coeffs(rng, n, amplitude, false),
                h0: add_identity(random_matrix(rng, n, amplitude, true), n),
                h1: (0..n).map(|_| random_matrix(rng, n, amplitude, true)).collect(),
                h2: second_order_coeffs(rng, n, amplitude, true),
            };
            if let Ok(jet) = recipe.jet() {
                if is_positive_definite(n, jet.g0.comps()) {
                    return Ok(recipe);
                }
            }
        }
        Err(Error::Invalid(format!(
            "no positive definite metric after {MAX_DRAWS} draws; use a smaller amplitude"
        )))
    }

    /// Keeps order-0 and order-1 coefficients and redraws the quadratic ones.
    pub fn redraw_second_order(&self, rng: &mut JetRng, amplitude: f64) -> Self {
        let n = self.n;
        JetRecipe {
            a2: second_order_coeffs(rng, n, amplitude, false),
            h2: second_order_coeffs(rng, n, amplitude, true),
            ..self.clone()
        }
    }

    /// Flat order-0/1 data (`A = Id + O(x²)`, `h = Id + O(x²)`).
    pub fn flatten_low_order(&self) -> Self {
        let n = self.n;
        let id = add_identity(vec![0.0; n * n], n);
        JetRecipe {
            a0: id.clone(),
            a1: vec![vec![0.0; n * n]; n],
            h0: id,
            h1: vec![vec![0.0; n * n]; n],
            ..self.clone()
        }
    }

    /// Freezes `A` at its value, so `J` is constant and integrable.
    pub fn with_constant_j(&self) -> Self {
        let n = self.n;
        JetRecipe {
            a1: vec![vec![0.0; n * n]; n],
            a2: vec![vec![0.0; n * n]; n * n],
            ..self.clone()
        }
    }

    fn poly_jet(&self, c0: &[f64], c1: &[Vec<f64>], c2: &[Vec<f64>], var: &[Variance]) -> Tensor<Jet> {
        let n = self.n;
        Tensor::from_fn(n, var, |ix| {
            let k = ix[0] * n + ix[1];
            let grad: Vec<f64> = (0..n).map(|c| c1[c][k]).collect();
            let hess: Vec<f64> = (0..n * n).map(|cd| c2[cd][k]).collect();
            Jet::new(c0[k], &grad, &hess)
        })
    }

    pub fn jet(&self) -> Result<StructureJet> {
        let a = self.poly_jet(&self.a0, &self.a1, &self.a2, &[Down, Up]);
        let h = self.poly_jet(&self.h0, &self.h1, &self.h2, &[Down, Down]);
        let (g, j) = conjugate_and_average(&a, &h)?;
        Ok(StructureJet::from_jets(&g, &j))
    }

    /// Evaluates the underlying functions `(g(x), J(x))` at a point.
    pub fn eval_at(&self, x: &[f64]) -> Result<(Tensor, Tensor)> {
        let n = self.n;
        let poly = |c0: &[f64], c1: &[Vec<f64>], c2: &[Vec<f64>], var: &[Variance]| {
            Tensor::from_fn(n, var, |ix| {
                let k = ix[0] * n + ix[1];
                let mut v = c0[k];
                for c in 0..n {
                    v += c1[c][k] * x[c];
                    for d in 0..n {
                        v += 0.5 * c2[c * n + d][k] * x[c] * x[d];
                    }
                }
                v
            })
        };
        let a = poly(&self.a0, &self.a1, &self.a2, &[Down, Up]);
        let h = poly(&self.h0, &self.h1, &self.h2, &[Down, Down]);
        conjugate_and_average(&a, &h)
    }
}

/// `J = A J_std A⁻¹`, `g_ij = ½(h_ij + J_i^a J_j^b h_ab)`.
pub(crate) fn conjugate_and_average<S: crate::tensor::Scalar>(
    a: &Tensor<S>,
    h: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let n = a.dim();
    let ainv = Tensor::from_vec(n, &[Down, Up], invert_matrix(n, a.comps())?)?;
    let js = j_standard::<S>(n);
    let aj = crate::tensor::matmul(a, &js);
    let j = crate::tensor::matmul(&aj, &ainv);
    let hj = crate::tensor::matmul(h, &j.permute(&[1, 0]));
    let avg = Tensor::from_fn(n, &[Down, Down], |ix| {
        let tw = sum(n, |a| j[[ix[0], a]].clone() * hj[[a, ix[1]]].clone());
        (h[[ix[0], ix[1]]].clone() + tw) * 0.5
    });
    // exact symmetry, not just up to rounding
    let g = Tensor::from_fn(n, &[Down, Down], |ix| {
        (avg[[ix[0], ix[1]]].clone() + avg[[ix[1], ix[0]]].clone()) * 0.5
    });
    Ok((g, j.with_variance(&[Down, Up])?))
}

/// Random admissible almost Hermitian 2-jet.
pub fn random_ah_jet(n: usize, rng: &mut JetRng, amplitude: f64) -> Result<StructureJet> {
    JetRecipe::random(n, rng, amplitude)?.jet()
}

/// A jet with constant `J = J_std` and `ω = ω₀ + dd^cφ` for a random quartic
/// potential. `dω` and `N` vanish identically, so it is Kähler to the order
/// the jet carries.
pub fn random_kaehler_jet(n: usize, rng: &mut JetRng, amplitude: f64) -> Result<StructureJet> {
    check_dims(n)?;
    let js = j_standard::<f64>(n);
    for _ in 0..MAX_DRAWS {
        let phi2 = symmetric_random(rng, n, 2, amplitude);
        let phi3 = symmetric_random(rng, n, 3, amplitude);
        let phi4 = symmetric_random(rng, n, 4, amplitude);
        // ω_ab = J_a^e ∂_b∂_e φ − J_b^e ∂_a∂_e φ
        let omega = Tensor::from_fn(n, &[Down, Down], |ix| {
            let (a, b) = (ix[0], ix[1]);
            let v: f64 = (0..n)
                .map(|e| js[[a, e]] * phi2[b * n + e] - js[[b, e]] * phi2[a * n + e])
                .sum();
            let w0 = js[[a, b]];
            let grad: Vec<f64> = (0..n)
                .map(|c| {
                    (0..n)
                        .map(|e| {
                            js[[a, e]] * phi3[(b * n + e) * n + c]
                                - js[[b, e]] * phi3[(a * n + e) * n + c]
                        })
                        .sum()
                })
                .collect();
            let hess: Vec<f64> = (0..n * n)
                .map(|cd| {
                    (0..n)
                        .map(|e| {
                            js[[a, e]] * phi4[(b * n + e) * n * n + cd]
                                - js[[b, e]] * phi4[(a * n + e) * n * n + cd]
                        })
                        .sum()
                })
                .collect();
            Jet::new(w0 + v, &grad, &hess)
        });
        // g_ij = J_j^b ω_ib
        let jj = js.map(|&x| Jet::constant(x));
        let g = Tensor::from_fn(n, &[Down, Down], |ix| {
            sum(n, |b| jj[[ix[1], b]] * omega[[ix[0], b]])
        });
        if is_positive_definite(n, g.values().comps()) {
            let j = js.map(|&x| Jet::new(x, &vec![0.0; n], &vec![0.0; n * n]));
            return Ok(StructureJet::from_jets(&g, &j));
        }
    }
    Err(Error::Invalid("Kähler potential too large".into()))
}

// fully symmetric random tensor of the given rank, flattened row-major
fn symmetric_random(rng: &mut JetRng, n: usize, rank: usize, scale: f64) -> Vec<f64> {
    let len = n.pow(rank as u32);
    let raw: Vec<f64> = (0..len).map(|_| scale * rng.uniform()).collect();
    let mut out = vec![0.0; len];
    let perms = permutations(rank);
    let mut idx = vec![0usize; rank];
    for (k, o) in out.iter_mut().enumerate() {
        let mut r = k;
        for s in (0..rank).rev() {
            idx[s] = r % n;
            r /= n;
        }
        let mut acc = 0.0;
        for p in &perms {
            let off = p.iter().fold(0, |acc, &s| acc * n + idx[s]);
            acc += raw[off];
        }
        *o = acc / perms.len() as f64;
    }
    out
}

pub(crate) fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::max_diff;

    #[test]
    fn zero_amplitude_is_flat() {
        let mut rng = JetRng::new(1, 0);
        let jet = random_ah_jet(4, &mut rng, 0.0).unwrap();
        let flat = StructureJet::flat(4);
        assert_eq!(jet.g0, flat.g0);
        assert_eq!(jet.j0, flat.j0);
        assert!(jet.dg.iter().chain(&jet.ddj).all(|t| t.max_abs() == 0.0));
    }

    #[test]
    fn random_jets_satisfy_constraints() {
        for n in [4, 6, 8] {
            let mut rng = JetRng::new(42, n as u64);
            for _ in 0..5 {
                let jet = random_ah_jet(n, &mut rng, 0.1).unwrap();
                let r = jet.constraint_residuals();
                assert!(r.worst() < 1e-12, "n={n}: {r:?}");
                assert!(r.positive_definite);
            }
        }
    }

    #[test]
    fn same_seed_same_bits() {
        let a = random_ah_jet(6, &mut JetRng::new(9, 3), 0.2).unwrap();
        let b = random_ah_jet(6, &mut JetRng::new(9, 3), 0.2).unwrap();
        let c = random_ah_jet(6, &mut JetRng::new(9, 4), 0.2).unwrap();
        assert_eq!(a.ddj, b.ddj);
        assert_eq!(a.g0, b.g0);
        assert_ne!(a.g0, c.g0);
    }

    #[test]
    fn omega_partial_two_routes() {
        let jet = random_ah_jet(6, &mut JetRng::new(5, 0), 0.2).unwrap();
        let w = jet.omega_jet();
        for c in 0..6 {
            let leibniz = jet_partial(&jet, Field::Omega, c);
            let direct = w.map(|x| x.grad(c));
            assert!(max_diff(&leibniz, &direct) < 1e-13);
        }
    }

    #[test]
    fn bad_inputs_rejected() {
        let mut rng = JetRng::new(0, 0);
        assert!(random_ah_jet(5, &mut rng, 0.1).is_err());
        assert!(random_ah_jet(10, &mut rng, 0.1).is_err());
        assert!(random_ah_jet(4, &mut rng, 0.5).is_err());
    }

    #[test]
    fn shared_low_order_pair() {
        let mut rng = JetRng::new(3, 0);
        let r = JetRecipe::random(6, &mut rng, 0.1).unwrap();
        let s = r.redraw_second_order(&mut rng, 0.1);
        let (a, b) = (r.jet().unwrap(), s.jet().unwrap());
        assert!(a.agrees_to_first_order(&b, 1e-14));
        assert!(max_diff(&a.ddj[1], &b.ddj[1]) > 1e-3);
        assert!(b.constraint_residuals().worst() < 1e-12);
    }

    #[test]
    fn kaehler_jet_is_admissible() {
        let jet = random_kaehler_jet(6, &mut JetRng::new(8, 0), 0.1).unwrap();
        assert!(jet.constraint_residuals().worst() < 1e-12);
    }
}
