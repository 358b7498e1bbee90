//! Forward (McKean-Vlasov) propagation of the mean-field state.

use crate::env::{check_row, KernelFn};
use crate::error::{Error, Result};
use crate::prescription::Prescription;
use crate::simplex::MeanFieldState;

/// Row-sum tolerance applied to kernel rows during propagation.
pub const PROPAGATION_ROW_TOL: f64 = 1e-9;

/// `z'(y) = sum_x sum_a z(x) gamma(a|x) tau(y | x, a, z)`.
pub fn propagate_mean_field(z: &MeanFieldState, gamma: &Prescription, kernel: &KernelFn) -> Result<MeanFieldState> {
    let n = z.n_types();
    if gamma.n_types() != n {
        return Err(Error::DimensionMismatch(format!(
            "state has {n} types, prescription {}",
            gamma.n_types()
        )));
    }
    let mut next = vec![0.0; n];
    let mut row = vec![0.0; n];
    for x in 0..n {
        let mass = z[x];
        for a in 0..gamma.n_actions() {
            // Rows are validated even where they carry no mass.
            kernel(x, a, z, &mut row);
            check_row(x, a, &row, PROPAGATION_ROW_TOL)?;
            let w = mass * gamma.prob(x, a);
            if w == 0.0 {
                continue;
            }
            for (acc, p) in next.iter_mut().zip(&row) {
                *acc += w * p;
            }
        }
    }
    MeanFieldState::from_unnormalized(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{malware_env, MalwareParams};
    use crate::simplex::build_grid;
    use approx::assert_abs_diff_eq;

    fn kernel_env() -> crate::env::EnvModel {
        malware_env(MalwareParams::default()).unwrap()
    }

    #[test]
    fn always_repair_resets_population() {
        let env = kernel_env();
        let gamma = Prescription::constant_action(2, 2, 1);
        for z1 in [0.0, 0.3, 1.0] {
            let z = MeanFieldState::binary(z1).unwrap();
            let next = propagate_mean_field(&z, &gamma, env.kernel().unwrap()).unwrap();
            assert_eq!(next.probs(), &[1.0, 0.0]);
        }
    }

    #[test]
    fn never_repair_spreads() {
        let env = kernel_env();
        let gamma = Prescription::constant_action(2, 2, 0);
        let z = MeanFieldState::binary(0.5).unwrap();
        let next = propagate_mean_field(&z, &gamma, env.kernel().unwrap()).unwrap();
        // 0.5 already infected + 0.5 healthy * 0.9
        assert_abs_diff_eq!(next[1], 0.95, epsilon = 1e-15);
    }

    #[test]
    fn vertex_with_pure_action_returns_kernel_row() {
        let env = kernel_env();
        let z = MeanFieldState::vertex(2, 0);
        let gamma = Prescription::deterministic(&[0, 1], 2);
        let next = propagate_mean_field(&z, &gamma, env.kernel().unwrap()).unwrap();
        assert_eq!(next.probs(), env.kernel_row(0, 0, &z).unwrap().as_slice());
    }

    #[test]
    fn rejects_leaky_kernel() {
        let kernel = |_: usize, _: usize, _: &MeanFieldState, out: &mut [f64]| {
            out[0] = 0.6;
            out[1] = 0.3;
        };
        let z = MeanFieldState::uniform(2);
        let gamma = Prescription::uniform(2, 2);
        assert!(matches!(
            propagate_mean_field(&z, &gamma, &kernel),
            Err(Error::KernelNotStochastic { .. })
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        // A z-dependent three-type kernel so the properties are not
        // exercised only on the z-independent malware dynamics.
        fn coupled(x: usize, a: usize, z: &MeanFieldState, out: &mut [f64]) {
            let s = 0.2 + 0.6 * z[(x + a) % 3];
            out.fill((1.0 - s) / 2.0);
            out[(x + 2 * a + 1) % 3] = s;
        }

        fn random_prescription(raw: &[f64], n_types: usize, n_actions: usize) -> Prescription {
            let mut p = raw.to_vec();
            for row in p.chunks_mut(n_actions) {
                let s: f64 = row.iter().sum::<f64>();
                row.iter_mut().for_each(|v| *v /= s);
            }
            Prescription::from_raw_normalized(n_types, n_actions, p)
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(1000))]

            #[test]
            fn conserves_probability(raw in proptest::collection::vec(0.01f64..1.0, 6)) {
                let grid = build_grid(3, 6).unwrap();
                let gamma = random_prescription(&raw, 3, 2);
                for z in grid.points() {
                    let next = propagate_mean_field(z, &gamma, &coupled).unwrap();
                    prop_assert!((next.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    prop_assert!(next.probs().iter().all(|p| *p >= -1e-15));
                }
            }

            #[test]
            fn affine_in_prescription(
                a in proptest::collection::vec(0.01f64..1.0, 6),
                b in proptest::collection::vec(0.01f64..1.0, 6),
                beta in 0.0f64..=1.0,
                zi in 0usize..28,
            ) {
                let grid = build_grid(3, 6).unwrap();
                let z = grid.point(zi);
                let g1 = random_prescription(&a, 3, 2);
                let g2 = random_prescription(&b, 3, 2);
                let mixed = g1.mix(&g2, beta);
                let lhs = propagate_mean_field(z, &mixed, &coupled).unwrap();
                let r1 = propagate_mean_field(z, &g1, &coupled).unwrap();
                let r2 = propagate_mean_field(z, &g2, &coupled).unwrap();
                for y in 0..3 {
                    let rhs = beta * r1[y] + (1.0 - beta) * r2[y];
                    prop_assert!((lhs[y] - rhs).abs() < 1e-12);
                }
            }
        }
    }
}
