//! Periodic lattices of `(g, J)` with central finite differences.
//!
//! Binary snapshot layout (little endian):
//!
//! | bytes            | content                                   |
//! |------------------|-------------------------------------------|
//! | 8                | magic `AHRFGRD1`                          |
//! | 4 (u32)          | dimension `n`                             |
//! | 8·n (u64)        | sites per axis                            |
//! | 8 (f64)          | spacing `h`                               |
//! | 1 (u8)           | stencil order (2 or 4)                    |
//! | 8 (f64)          | time `t`                                  |
//! | 8·N·n² (f64)     | `g_ij` per site, row-major `i, j`         |
//! | 8·N·n² (f64)     | `J_i^j` per site, row-major `i, j`        |
//!
//! Sites are ordered row-major in the lattice index, last axis fastest.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::jet::{conjugate_and_average, Field, JetRng, StructureJet};
use crate::jet::Jet;
use crate::tensor::{is_positive_definite, Scalar, Tensor, Variance};
use crate::{Error, Result};

use Variance::{Down, Up};

const MAGIC: &[u8; 8] = b"AHRFGRD1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stencil {
    Second,
    Fourth,
}

impl Stencil {
    pub fn from_order(order: u8) -> Result<Self> {
        match order {
            2 => Ok(Stencil::Second),
            4 => Ok(Stencil::Fourth),
            _ => Err(Error::Invalid(format!("stencil order must be 2 or 4, got {order}"))),
        }
    }

    pub fn order(self) -> u8 {
        match self {
            Stencil::Second => 2,
            Stencil::Fourth => 4,
        }
    }

    /// `(k, w)` pairs: `∂f ≈ Σ w (f(x + k h) − f(x − k h)) / h`.
    fn first(self) -> &'static [(isize, f64)] {
        match self {
            Stencil::Second => &[(1, 0.5)],
            Stencil::Fourth => &[(1, 8.0 / 12.0), (2, -1.0 / 12.0)],
        }
    }

    /// `(k, w)` pairs: `∂²f ≈ Σ w (f(x + k h) + f(x − k h) − 2 f(x)) / h²`.
    fn second(self) -> &'static [(isize, f64)] {
        match self {
            Stencil::Second => &[(1, 1.0)],
            Stencil::Fourth => &[(1, 16.0 / 12.0), (2, -1.0 / 12.0)],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridState {
    pub n: usize,
    pub shape: Vec<usize>,
    pub h: f64,
    pub stencil: Stencil,
    pub t: f64,
    /// `n²` metric components per site.
    pub g: Vec<f64>,
    /// `n²` components of `J` per site.
    pub j: Vec<f64>,
}

/// Trigonometric perturbation of the flat structure.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Perturbation {
    pub amplitude: f64,
    /// Number of Fourier modes in `A(x)` and `h(x)`.
    pub modes: usize,
    /// Largest integer wave number per axis.
    pub max_wavenumber: i64,
}

impl Default for Perturbation {
    fn default() -> Self {
        Perturbation {
            amplitude: 0.05,
            modes: 3,
            max_wavenumber: 1,
        }
    }
}

impl GridState {
    /// Samples `(g, J)` at every site; `f` receives coordinates `x = i·h`.
    pub fn from_fn(
        n: usize,
        shape: &[usize],
        h: f64,
        stencil: Stencil,
        mut f: impl FnMut(&[f64]) -> Result<(Tensor, Tensor)>,
    ) -> Result<Self> {
        if shape.len() != n {
            return Err(Error::Invalid(format!(
                "grid shape has {} axes, expected {n}",
                shape.len()
            )));
        }
        let min_sites = 2 * stencil.order() as usize / 2 + 1;
        if shape.iter().any(|&s| s < min_sites) {
            return Err(Error::Invalid(format!(
                "each axis needs at least {min_sites} sites"
            )));
        }
        if !(h > 0.0) {
            return Err(Error::Invalid("grid spacing must be positive".into()));
        }
        let total: usize = shape.iter().product();
        let mut state = GridState {
            n,
            shape: shape.to_vec(),
            h,
            stencil,
            t: 0.0,
            g: Vec::with_capacity(total * n * n),
            j: Vec::with_capacity(total * n * n),
        };
        let mut x = vec![0.0; n];
        for site in 0..total {
            for (axis, c) in state.coords(site).into_iter().enumerate() {
                x[axis] = c as f64 * h;
            }
            let (g, j) = f(&x)?;
            state.g.extend_from_slice(g.comps());
            state.j.extend_from_slice(j.comps());
        }
        Ok(state)
    }

    pub fn sites(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn ncomp(&self) -> usize {
        self.n * self.n
    }

    pub fn coords(&self, site: usize) -> Vec<usize> {
        let mut c = vec![0; self.n];
        let mut r = site;
        for axis in (0..self.n).rev() {
            c[axis] = r % self.shape[axis];
            r /= self.shape[axis];
        }
        c
    }

    fn stride(&self, axis: usize) -> usize {
        self.shape[axis + 1..].iter().product()
    }

    /// Site reached by moving `offset` steps along `axis`, with wrap.
    pub fn neighbor(&self, site: usize, axis: usize, offset: isize) -> usize {
        let len = self.shape[axis];
        let stride = self.stride(axis);
        let c = (site / stride) % len;
        let moved = (c as isize + offset).rem_euclid(len as isize) as usize;
        site - c * stride + moved * stride
    }

    pub fn g_at(&self, site: usize) -> Tensor {
        let k = self.ncomp();
        Tensor::from_vec(self.n, &[Down, Down], self.g[site * k..(site + 1) * k].to_vec())
            .expect("component count")
    }

    pub fn j_at(&self, site: usize) -> Tensor {
        let k = self.ncomp();
        Tensor::from_vec(self.n, &[Down, Up], self.j[site * k..(site + 1) * k].to_vec())
            .expect("component count")
    }

    pub fn omega_at(&self, site: usize) -> Tensor {
        let n = self.n;
        let (g, j) = (self.g_at(site), self.j_at(site));
        Tensor::from_fn(n, &[Down, Down], |ix| {
            (0..n).map(|a| j[[ix[0], a]] * g[[ix[1], a]]).sum()
        })
    }

    /// First central difference of a field with `ncomp` components per site.
    pub fn fd_first(&self, data: &[f64], ncomp: usize, site: usize, axis: usize) -> Vec<f64> {
        let mut out = vec![0.0; ncomp];
        self.add_first(data, ncomp, site, axis, 1.0 / self.h, &mut out);
        out
    }

    fn add_first(&self, data: &[f64], ncomp: usize, site: usize, axis: usize, scale: f64, out: &mut [f64]) {
        for &(k, w) in self.stencil.first() {
            let p = self.neighbor(site, axis, k) * ncomp;
            let m = self.neighbor(site, axis, -k) * ncomp;
            for (c, o) in out.iter_mut().enumerate() {
                *o += w * scale * (data[p + c] - data[m + c]);
            }
        }
    }

    /// Second difference: the standard stencil on the diagonal, composed
    /// first differences for mixed partials.
    pub fn fd_second(&self, data: &[f64], ncomp: usize, site: usize, a: usize, b: usize) -> Vec<f64> {
        let mut out = vec![0.0; ncomp];
        let inv_h2 = 1.0 / (self.h * self.h);
        if a == b {
            let z = site * ncomp;
            for &(k, w) in self.stencil.second() {
                let p = self.neighbor(site, a, k) * ncomp;
                let m = self.neighbor(site, a, -k) * ncomp;
                for (c, o) in out.iter_mut().enumerate() {
                    *o += w * inv_h2 * (data[p + c] + data[m + c] - 2.0 * data[z + c]);
                }
            }
        } else {
            for &(k, w) in self.stencil.first() {
                let mut plus = vec![0.0; ncomp];
                let mut minus = vec![0.0; ncomp];
                self.add_first(data, ncomp, self.neighbor(site, a, k), b, 1.0, &mut plus);
                self.add_first(data, ncomp, self.neighbor(site, a, -k), b, 1.0, &mut minus);
                for (c, o) in out.iter_mut().enumerate() {
                    *o += w * inv_h2 * (plus[c] - minus[c]);
                }
            }
        }
        out
    }

    /// 2-jet of `(g, J)` at a site from finite differences.
    pub fn site_jet(&self, site: usize) -> StructureJet {
        let n = self.n;
        let k = self.ncomp();
        let field = |data: &[f64], var: &[Variance]| {
            let d: Vec<Tensor> = (0..n)
                .map(|c| Tensor::from_vec(n, var, self.fd_first(data, k, site, c)).unwrap())
                .collect();
            let mut dd = vec![Tensor::zeros(n, var); n * n];
            for c in 0..n {
                for e in c..n {
                    let t = Tensor::from_vec(n, var, self.fd_second(data, k, site, c, e)).unwrap();
                    dd[e * n + c] = t.clone();
                    dd[c * n + e] = t;
                }
            }
            (d, dd)
        };
        let (dg, ddg) = field(&self.g, &[Down, Down]);
        let (dj, ddj) = field(&self.j, &[Down, Up]);
        StructureJet {
            n,
            g0: self.g_at(site),
            j0: self.j_at(site),
            dg,
            dj,
            ddg,
            ddj,
        }
    }

    /// Largest pointwise `|J² + Id|` and `|g − g(J·,J·)|` over the grid.
    pub fn pointwise_drift(&self) -> (f64, f64) {
        let n = self.n;
        let mut j2 = 0.0f64;
        let mut compat = 0.0f64;
        for site in 0..self.sites() {
            let (g, j) = (self.g_at(site), self.j_at(site));
            for a in 0..n {
                for b in 0..n {
                    let delta = if a == b { 1.0 } else { 0.0 };
                    let sq: f64 = (0..n).map(|p| j[[a, p]] * j[[p, b]]).sum();
                    j2 = j2.max((sq + delta).abs());
                    let mut tw = 0.0;
                    for p in 0..n {
                        for q in 0..n {
                            tw += j[[a, p]] * j[[b, q]] * g[[p, q]];
                        }
                    }
                    compat = compat.max((g[[a, b]] - tw).abs());
                }
            }
        }
        (j2, compat)
    }

    /// Checks pointwise constraints and positivity at every site.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let k = self.ncomp();
        if self.g.len() != self.sites() * k || self.j.len() != self.sites() * k {
            return Err(Error::Invalid("grid component arrays have wrong length".into()));
        }
        for site in 0..self.sites() {
            if !is_positive_definite(self.n, &self.g[site * k..(site + 1) * k]) {
                return Err(Error::Invalid(format!("metric not positive definite at site {site}")));
            }
        }
        let (j2, compat) = self.pointwise_drift();
        if j2 > tol || compat > tol {
            return Err(Error::Invalid(format!(
                "grid constraints violated: J² drift {j2:e}, compatibility drift {compat:e}"
            )));
        }
        Ok(())
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.n as u32).to_le_bytes())?;
        for &s in &self.shape {
            w.write_all(&(s as u64).to_le_bytes())?;
        }
        w.write_all(&self.h.to_le_bytes())?;
        w.write_all(&[self.stencil.order()])?;
        w.write_all(&self.t.to_le_bytes())?;
        for v in self.g.iter().chain(&self.j) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Snapshot("bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        let n = u32::from_le_bytes(b4) as usize;
        if n == 0 || n > crate::jet::MAX_DIM {
            return Err(Error::Snapshot(format!("bad dimension {n}")));
        }
        let mut shape = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut b8)?;
            shape.push(u64::from_le_bytes(b8) as usize);
        }
        r.read_exact(&mut b8)?;
        let h = f64::from_le_bytes(b8);
        let mut b1 = [0u8; 1];
        r.read_exact(&mut b1)?;
        let stencil = Stencil::from_order(b1[0])?;
        r.read_exact(&mut b8)?;
        let t = f64::from_le_bytes(b8);
        let len = shape.iter().product::<usize>() * n * n;
        let mut read_field = || -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(len);
            for _ in 0..len {
                r.read_exact(&mut b8)?;
                out.push(f64::from_le_bytes(b8));
            }
            Ok(out)
        };
        let g = read_field()?;
        let j = read_field()?;
        Ok(GridState {
            n,
            shape,
            h,
            stencil,
            t,
            g,
            j,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Finite-difference first partial of `g`, `J` or `ω` at a site.
pub fn grid_partial(state: &GridState, field: Field, direction: usize, site: usize) -> Tensor {
    let n = state.n;
    let k = state.ncomp();
    match field {
        Field::G => Tensor::from_vec(n, &[Down, Down], state.fd_first(&state.g, k, site, direction)),
        Field::J => Tensor::from_vec(n, &[Down, Up], state.fd_first(&state.j, k, site, direction)),
        Field::Omega => {
            let omega: Vec<f64> = (0..state.sites())
                .flat_map(|s| state.omega_at(s).into_comps())
                .collect();
            Tensor::from_vec(n, &[Down, Down], state.fd_first(&omega, k, site, direction))
        }
    }
    .expect("component count")
}

struct Mode {
    k: Vec<f64>,
    phase: f64,
    a: Vec<f64>,
    h: Vec<f64>,
}

/// Periodic trigonometric perturbation of `(δ, J_std)`, built with the same
/// conjugation and averaging as random jets, so pointwise constraints hold
/// to rounding at every site. The fields are known in closed form, so
/// [`TorusSeed::jet`] gives their exact 2-jet anywhere.
pub struct TorusSeed {
    n: usize,
    modes: Vec<Mode>,
}

impl TorusSeed {
    /// Draws modes periodic on a torus with `shape` sites of spacing `h`.
    pub fn random(n: usize, shape: &[usize], h: f64, perturbation: &Perturbation, rng: &mut JetRng) -> Result<Self> {
        if n % 2 != 0 || n < 2 || n > crate::jet::MAX_DIM {
            return Err(Error::Invalid(format!("grid dimension must be even, got {n}")));
        }
        if shape.len() != n {
            return Err(Error::Invalid(format!("grid shape needs {n} axes")));
        }
        let amp = perturbation.amplitude;
        let mut modes = Vec::new();
        if amp != 0.0 {
            let kmax = perturbation.max_wavenumber.max(1);
            for _ in 0..perturbation.modes {
                let k: Vec<f64> = loop {
                    let m: Vec<i64> = (0..n)
                        .map(|_| {
                            let u = (rng.uniform() + 1.0) * 0.5;
                            ((u * (2 * kmax + 1) as f64).floor() as i64 - kmax).clamp(-kmax, kmax)
                        })
                        .collect();
                    if m.iter().any(|&x| x != 0) {
                        break m
                            .iter()
                            .zip(shape)
                            .map(|(&mi, &len)| 2.0 * std::f64::consts::PI * mi as f64 / (len as f64 * h))
                            .collect();
                    }
                };
                let phase = std::f64::consts::PI * rng.uniform();
                let a: Vec<f64> = (0..n * n).map(|_| amp * rng.uniform()).collect();
                let mut hs: Vec<f64> = (0..n * n).map(|_| amp * rng.uniform()).collect();
                for i in 0..n {
                    for j in 0..i {
                        let s = 0.5 * (hs[i * n + j] + hs[j * n + i]);
                        hs[i * n + j] = s;
                        hs[j * n + i] = s;
                    }
                }
                modes.push(Mode { k, phase, a, h: hs });
            }
        }
        Ok(TorusSeed { n, modes })
    }

    fn build<S: Scalar>(&self, wave: impl Fn(&Mode) -> S) -> Result<(Tensor<S>, Tensor<S>)> {
        let n = self.n;
        let mut a = Tensor::<S>::identity(n).with_variance(&[Down, Up])?;
        let mut hm = Tensor::<S>::identity(n).with_variance(&[Down, Down])?;
        for m in &self.modes {
            let s = wave(m);
            for (dst, c) in a.comps_mut().iter_mut().zip(&m.a) {
                *dst += s.clone() * *c;
            }
            for (dst, c) in hm.comps_mut().iter_mut().zip(&m.h) {
                *dst += s.clone() * *c;
            }
        }
        Ok(conjugate_and_average(&a, &hm)?)
    }

    /// `(g, J)` at the point `x`.
    pub fn sample(&self, x: &[f64]) -> Result<(Tensor, Tensor)> {
        self.build(|m| (m.k.iter().zip(x).map(|(k, x)| k * x).sum::<f64>() + m.phase).sin())
    }

    /// The exact 2-jet of `(g, J)` at `x`.
    pub fn jet(&self, x: &[f64]) -> Result<StructureJet> {
        let n = self.n;
        let (g, j) = self.build(|m| {
            let th = m.k.iter().zip(x).map(|(k, x)| k * x).sum::<f64>() + m.phase;
            let (s, c) = th.sin_cos();
            let grad: Vec<f64> = m.k.iter().map(|k| k * c).collect();
            let hess: Vec<f64> = (0..n * n).map(|ab| -m.k[ab / n] * m.k[ab % n] * s).collect();
            Jet::new(s, &grad, &hess)
        })?;
        Ok(StructureJet::from_jets(&g, &j))
    }
}

pub fn seed_torus_grid(
    n: usize,
    shape: &[usize],
    h: f64,
    stencil: Stencil,
    perturbation: &Perturbation,
    rng: &mut JetRng,
) -> Result<GridState> {
    seed_torus_grid_with(n, shape, h, stencil, perturbation, rng).map(|(s, _)| s)
}

/// [`seed_torus_grid`], also returning the seed it sampled.
pub fn seed_torus_grid_with(
    n: usize,
    shape: &[usize],
    h: f64,
    stencil: Stencil,
    perturbation: &Perturbation,
    rng: &mut JetRng,
) -> Result<(GridState, TorusSeed)> {
    let seed = TorusSeed::random(n, shape, h, perturbation, rng)?;
    let state = GridState::from_fn(n, shape, h, stencil, |x| {
        let (g, j) = seed.sample(x)?;
        if !is_positive_definite(n, g.comps()) {
            return Err(Error::Invalid(
                "perturbed metric lost positivity; reduce the amplitude".into(),
            ));
        }
        Ok((g, j))
    })?;
    Ok((state, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{jet_partial, JetRecipe};
    use crate::tensor::max_diff;
    use std::f64::consts::PI;

    fn flat(shape: usize, stencil: Stencil) -> GridState {
        let p = Perturbation {
            amplitude: 0.0,
            ..Default::default()
        };
        seed_torus_grid(4, &[shape; 4], 2.0 * PI / shape as f64, stencil, &p, &mut JetRng::new(0, 0))
            .unwrap()
    }

    #[test]
    fn constant_field_has_zero_derivative() {
        let s = flat(6, Stencil::Fourth);
        for dir in 0..4 {
            assert_eq!(grid_partial(&s, Field::J, dir, 17).max_abs(), 0.0);
            assert_eq!(grid_partial(&s, Field::G, dir, 0).max_abs(), 0.0);
        }
    }

    #[test]
    fn neighbor_wraps() {
        let s = flat(5, Stencil::Second);
        assert_eq!(s.coords(s.neighbor(0, 2, -1)), vec![0, 0, 4, 0]);
        assert_eq!(s.neighbor(s.neighbor(123, 1, 3), 1, -3), 123);
    }

    fn sine_error(sites: usize, stencil: Stencil) -> f64 {
        let l = 2.0;
        let h = l / sites as f64;
        let mut s = flat(sites, stencil);
        s.h = h;
        let data: Vec<f64> = (0..s.sites())
            .map(|site| (2.0 * PI * s.coords(site)[0] as f64 * h / l).sin())
            .collect();
        (0..s.sites())
            .map(|site| {
                let x = s.coords(site)[0] as f64 * h;
                let exact = 2.0 * PI / l * (2.0 * PI * x / l).cos();
                (s.fd_first(&data, 1, site, 0)[0] - exact).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn sine_convergence_orders() {
        for (stencil, want) in [(Stencil::Second, 2.0), (Stencil::Fourth, 4.0)] {
            let e1 = sine_error(8, stencil);
            let e2 = sine_error(16, stencil);
            let slope = (e1 / e2).log2();
            assert!(slope > want - 0.2, "{stencil:?}: slope {slope}");
        }
    }

    /// Errors of the first, pure second and mixed second differences of
    /// sine waves on `sites⁴` points over a torus of side 2π.
    fn stencil_errors(sites: usize) -> [f64; 3] {
        let mut s = flat(sites, Stencil::Fourth);
        s.h = 2.0 * PI / sites as f64;
        let h = s.h;
        let x = |site: usize, a: usize| s.coords(site)[a] as f64 * h;
        let one: Vec<f64> = (0..s.sites()).map(|p| x(p, 0).sin()).collect();
        let two: Vec<f64> = (0..s.sites()).map(|p| (x(p, 0) + x(p, 1)).sin()).collect();
        let mut e = [0.0f64; 3];
        for p in 0..s.sites() {
            e[0] = e[0].max((s.fd_first(&one, 1, p, 0)[0] - x(p, 0).cos()).abs());
            e[1] = e[1].max((s.fd_second(&one, 1, p, 0, 0)[0] + x(p, 0).sin()).abs());
            e[2] = e[2].max((s.fd_second(&two, 1, p, 0, 1)[0] + (x(p, 0) + x(p, 1)).sin()).abs());
        }
        e
    }

    #[test]
    fn stencil_refinement_slopes() {
        let e: Vec<[f64; 3]> = [8, 12, 16].into_iter().map(stencil_errors).collect();
        for k in 0..3 {
            let s1 = (e[0][k] / e[1][k]).ln() / 1.5f64.ln();
            let s2 = (e[1][k] / e[2][k]).ln() / (16.0f64 / 12.0).ln();
            assert!(s1 > 3.8 && s2 > 3.8, "stencil {k}: slopes {s1}, {s2}");
        }
    }

    #[test]
    fn polynomial_grid_matches_jet() {
        let recipe = JetRecipe::random(4, &mut JetRng::new(11, 0), 0.1).unwrap();
        let jet = recipe.jet().unwrap();
        let base = [4usize; 4];
        let errs: Vec<f64> = [0.02, 0.01]
            .iter()
            .map(|&h| {
                let s = GridState::from_fn(4, &[9; 4], h, Stencil::Fourth, |x| {
                    let y: Vec<f64> = x.iter().zip(base).map(|(x, b)| x - b as f64 * h).collect();
                    recipe.eval_at(&y)
                })
                .unwrap();
                let site = (0..s.sites()).find(|&k| s.coords(k) == base).unwrap();
                (0..4)
                    .map(|d| {
                        max_diff(&grid_partial(&s, Field::J, d, site), &jet_partial(&jet, Field::J, d))
                            .max(max_diff(&grid_partial(&s, Field::Omega, d, site), &jet_partial(&jet, Field::Omega, d)))
                    })
                    .fold(0.0, f64::max)
            })
            .collect();
        assert!(errs[0] < 1e-5, "{errs:?}");
        assert!((errs[0] / errs[1]).log2() > 3.5, "{errs:?}");
    }

    /// Grid 2-jets of the seeded fields against their closed-form jets.
    #[test]
    fn seeded_grid_derivatives_converge_at_fourth_order() {
        let p = Perturbation { amplitude: 0.01, ..Default::default() };
        let err = |sites: usize| {
            let h = 2.0 * PI / sites as f64;
            let (s, seed) =
                seed_torus_grid_with(4, &[sites; 4], h, Stencil::Fourth, &p, &mut JetRng::new(4, 0)).unwrap();
            let mut e = 0.0f64;
            for site in (0..s.sites()).step_by(97) {
                let x: Vec<f64> = s.coords(site).iter().map(|&c| c as f64 * h).collect();
                let exact = seed.jet(&x).unwrap();
                let grid = s.site_jet(site);
                for (a, b) in [(&grid.dg, &exact.dg), (&grid.dj, &exact.dj), (&grid.ddg, &exact.ddg), (&grid.ddj, &exact.ddj)] {
                    for (u, v) in a.iter().zip(b) {
                        e = e.max(max_diff(u, v));
                    }
                }
                assert!(max_diff(&grid.g0, &exact.g0) < 1e-15);
            }
            e
        };
        let e: Vec<f64> = [8, 12, 16].into_iter().map(err).collect();
        let s1 = (e[0] / e[1]).ln() / 1.5f64.ln();
        let s2 = (e[1] / e[2]).ln() / (16.0f64 / 12.0).ln();
        // harmonics of the nonlinear construction keep 8–16 sites slightly short of the asymptotic regime
        assert!(s1 > 3.3 && s2 > 3.3, "{e:?}: slopes {s1}, {s2}");
    }

    #[test]
    fn seeded_grid_is_admissible_and_deterministic() {
        let p = Perturbation::default();
        let a = seed_torus_grid(4, &[5; 4], 0.5, Stencil::Fourth, &p, &mut JetRng::new(3, 1)).unwrap();
        let b = seed_torus_grid(4, &[5; 4], 0.5, Stencil::Fourth, &p, &mut JetRng::new(3, 1)).unwrap();
        assert_eq!(a, b);
        a.validate(1e-12).unwrap();
        assert!(a.g.iter().zip(&flat(5, Stencil::Fourth).g).any(|(x, y)| (x - y).abs() > 1e-3));
    }

    #[test]
    fn snapshot_round_trips() {
        let p = Perturbation::default();
        let a = seed_torus_grid(4, &[5; 4], 0.5, Stencil::Second, &p, &mut JetRng::new(1, 0)).unwrap();
        let mut buf = Vec::new();
        a.write_binary(&mut buf).unwrap();
        assert_eq!(GridState::read_binary(&buf[..]).unwrap(), a);
        assert_eq!(GridState::from_json(&a.to_json().unwrap()).unwrap(), a);
        assert!(GridState::read_binary(&b"AHRFGRD0"[..]).is_err());
    }
}
