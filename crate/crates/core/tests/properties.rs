//! Property tests over seeded random structures.

use ahrf::field::{random_ah_jet, seed_torus_grid, JetRng, Perturbation, Stencil};
use ahrf::flow::{FlowPoint, FlowSettings};
use ahrf::tensor::{
    j_twist2, max_diff, project2, project3, AlmostComplex, Part2, Part3, Tensor, Variance,
};
use num_complex::Complex64;
use proptest::prelude::*;

use Variance::Down;

fn dims() -> impl Strategy<Value = usize> {
    prop_oneof![Just(4usize), Just(6), Just(8)]
}

fn structure(n: usize, seed: u64) -> AlmostComplex {
    let jet = random_ah_jet(n, &mut JetRng::new(seed, n as u64), 0.2).unwrap();
    AlmostComplex::new(jet.j0).unwrap()
}

fn random_tensor(n: usize, rank: usize, seed: u64) -> Tensor {
    let mut rng = JetRng::new(seed, 1000 + n as u64);
    Tensor::from_fn(n, &vec![Down; rank], |_| rng.uniform())
}

fn skew3(b: &Tensor) -> Tensor {
    let perms: [([usize; 3], f64); 6] = [
        ([0, 1, 2], 1.0),
        ([1, 2, 0], 1.0),
        ([2, 0, 1], 1.0),
        ([1, 0, 2], -1.0),
        ([0, 2, 1], -1.0),
        ([2, 1, 0], -1.0),
    ];
    Tensor::from_fn(b.dim(), b.variance(), |ix| {
        perms.iter().map(|(p, s)| s * b[[ix[p[0]], ix[p[1]], ix[p[2]]]]).sum::<f64>() / 6.0
    })
}

/// `(3,0)+(0,3)` part through the complex eigenprojections `½(1 ∓ iJ)` on
/// each slot, with `J` acting on covectors as `α ↦ J_i^a α_a`.
fn pure_part_complex(b: &Tensor, j: &Tensor) -> Tensor {
    let n = b.dim();
    let apply = |t: &[Complex64], slot: usize, sign: f64| -> Vec<Complex64> {
        let stride = n.pow(2 - slot as u32);
        (0..t.len())
            .map(|k| {
                let i = (k / stride) % n;
                let base = k - i * stride;
                let tw: Complex64 = (0..n).map(|a| t[base + a * stride] * j[[i, a]]).sum();
                (t[k] - Complex64::i() * sign * tw) * 0.5
            })
            .collect()
    };
    let start: Vec<Complex64> = b.comps().iter().map(|&x| Complex64::new(x, 0.0)).collect();
    let mut total = vec![Complex64::new(0.0, 0.0); start.len()];
    for sign in [1.0, -1.0] {
        let mut t = start.clone();
        for slot in 0..3 {
            t = apply(&t, slot, sign);
        }
        for (acc, x) in total.iter_mut().zip(t) {
            *acc += x;
        }
    }
    assert!(total.iter().all(|z| z.im.abs() < 1e-12));
    Tensor::from_vec(n, &[Down; 3], total.iter().map(|z| z.re).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn type_projections_are_idempotent_and_typed(n in dims(), seed in any::<u64>()) {
        let jc = structure(n, seed);
        let a = random_tensor(n, 2, seed);
        for (part, sign) in [(Part2::JInv, 1.0), (Part2::JAnti, -1.0)] {
            let p = project2(&a, part, &jc).unwrap();
            prop_assert!(max_diff(&project2(&p, part, &jc).unwrap(), &p) < 1e-12);
            prop_assert!(max_diff(&j_twist2(&p, &jc.j), &p.scale(sign)) < 1e-12);
        }
        let b = skew3(&random_tensor(n, 3, seed));
        for part in [Part3::Pure, Part3::Mixed] {
            let p = project3(&b, part, &jc).unwrap();
            prop_assert!(max_diff(&project3(&p, part, &jc).unwrap(), &p) < 1e-12);
        }
    }

    #[test]
    fn pure_projection_matches_complexified_construction(
        n in prop_oneof![Just(4usize), Just(6)],
        seed in any::<u64>(),
    ) {
        let jc = structure(n, seed);
        let b = skew3(&random_tensor(n, 3, seed));
        let real = project3(&b, Part3::Pure, &jc).unwrap();
        let cplx = pure_part_complex(&b, &jc.j);
        prop_assert!(max_diff(&real, &cplx) < 1e-12, "{}", max_diff(&real, &cplx));
    }

    #[test]
    fn pure_part_vanishes_in_dim4(seed in any::<u64>()) {
        let jc = structure(4, seed);
        let b = skew3(&random_tensor(4, 3, seed));
        prop_assert!(project3(&b, Part3::Pure, &jc).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn random_jets_satisfy_constraints_to_second_order(n in dims(), seed in any::<u64>()) {
        let jet = random_ah_jet(n, &mut JetRng::new(seed, n as u64), 0.1).unwrap();
        let r = jet.constraint_residuals();
        prop_assert!(r.positive_definite);
        prop_assert!(r.worst() <= 1e-12, "{:?}", r);
    }

    #[test]
    fn same_seed_same_jet(n in dims(), seed in any::<u64>()) {
        let a = random_ah_jet(n, &mut JetRng::new(seed, n as u64), 0.1).unwrap();
        let b = random_ah_jet(n, &mut JetRng::new(seed, n as u64), 0.1).unwrap();
        prop_assert!(a.g_jet() == b.g_jet() && a.j_jet() == b.j_jet());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn right_hand_side_is_tangent_to_the_constraints(
        n in prop_oneof![Just(4usize), Just(6)],
        seed in any::<u64>(),
        gauged in any::<bool>(),
    ) {
        let jet = random_ah_jet(n, &mut JetRng::new(seed, n as u64), 0.1).unwrap();
        let settings = FlowSettings { gauged, ..Default::default() };
        let pt = FlowPoint::new(&jet, &settings).unwrap();
        let (g, j) = (&jet.g0, &jet.j0);
        let (dg, dj) = (&pt.rhs.dg_dt, &pt.rhs.dj_dt);
        let scale = dg.max_abs().max(dj.max_abs()).max(1.0);
        let anti = Tensor::from_fn(n, &[Down, Variance::Up], |ix| {
            (0..n).map(|m| dj[[ix[0], m]] * j[[m, ix[1]]] + j[[ix[0], m]] * dj[[m, ix[1]]]).sum::<f64>()
        });
        prop_assert!(anti.max_abs() <= 1e-10 * scale);
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
        prop_assert!(compat.max_abs() <= 1e-10 * scale);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn seeded_grids_are_deterministic_and_admissible(seed in any::<u64>()) {
        let make = || {
            seed_torus_grid(4, &[5; 4], 1.2, Stencil::Fourth, &Perturbation::default(), &mut JetRng::new(seed, 4))
                .unwrap()
        };
        let (a, b) = (make(), make());
        prop_assert_eq!(&a.g, &b.g);
        prop_assert_eq!(&a.j, &b.j);
        let (j2, compat) = a.pointwise_drift();
        prop_assert!(j2 < 1e-14 && compat < 1e-14);
    }
}
