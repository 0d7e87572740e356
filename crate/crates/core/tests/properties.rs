use std::f64::consts::PI;

use nalgebra::DMatrix;
use proptest::prelude::*;

use vlasov_lowrank::config::{parse_config, Event, EventKind, RunConfig};
use vlasov_lowrank::diagnostics::{diagnostics, fit_rate};
use vlasov_lowrank::eulerian::{eulerian_reference_step, DenseState};
use vlasov_lowrank::grid::{orthonormalize, FunctionFamily, Grid};
use vlasov_lowrank::linalg::expm_skew;
use vlasov_lowrank::lowrank::{FieldModel, Integrator2D, LowRankState2D, Splitting};
use vlasov_lowrank::scenarios::{init_landau_2d, ScenarioKind};

fn skew_from(entries: &[f64], r: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(r, r, |i, j| entries[i * r + j]);
    (&a - a.transpose()) * 0.5
}

#[test]
fn lowrank_landau_tracks_the_eulerian_reference() {
    let gx = Grid::new(64, 0.0, 4.0 * PI).unwrap();
    let gv = Grid::new(256, -6.0, 6.0).unwrap();
    let mut st = init_landau_2d(0.01, 0.5, &gx, &gv, 20).unwrap();
    let mut dense = DenseState::from_fn(&gx, &gv, |x, v| {
        (-v * v / 2.0).exp() / (2.0 * PI).sqrt() * (1.0 + 0.01 * (0.5 * x).cos())
    });
    let integrator = Integrator2D::default();
    for _ in 0..200 {
        st = integrator.step(&st, 0.025, Splitting::Strang);
        dense = eulerian_reference_step(&dense, 0.025, FieldModel::SelfConsistent);
    }
    let gap = (st.to_dense() - &dense.f).norm() / dense.f.norm();
    assert!(gap <= 1e-4, "relative L2 gap {gap:e} at t = 5");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fit_rate_ignores_positive_scaling(gamma in -0.3f64..-0.05, omega in 0.8f64..2.0, scale in 1e-6f64..1e6) {
        let series: Vec<(f64, f64)> = (0..3000)
            .map(|i| {
                let t = i as f64 * 0.01;
                (t, (2.0 * gamma * t).exp() * (omega * t + 0.2).sin().powi(2) + 1e-300)
            })
            .collect();
        let scaled: Vec<(f64, f64)> = series.iter().map(|&(t, e)| (t, scale * e)).collect();
        let a = fit_rate(&series, (0.0, 30.0)).unwrap();
        let b = fit_rate(&scaled, (0.0, 30.0)).unwrap();
        prop_assert!((a - b).abs() <= 1e-12, "{} vs {}", a, b);
        prop_assert!((a - gamma).abs() <= 1e-6);
    }

    #[test]
    fn observables_survive_refactorization(e1 in prop::collection::vec(-2.0f64..2.0, 16), e2 in prop::collection::vec(-2.0f64..2.0, 16)) {
        let gx = Grid::new(32, 0.0, 4.0 * PI).unwrap();
        let gv = Grid::new(64, -6.0, 6.0).unwrap();
        let st = Integrator2D::default().strang_step(&init_landau_2d(0.05, 0.5, &gx, &gv, 4).unwrap(), 0.1);
        let q1 = expm_skew(&skew_from(&e1, 4));
        let q2 = expm_skew(&skew_from(&e2, 4));
        let rot = LowRankState2D::new(st.x.combine(&q1), q1.transpose() * &st.s * &q2, st.v.combine(&q2), st.t).unwrap();
        let (a, b) = (diagnostics(&rot, None), diagnostics(&st, None));
        for (p, q) in [(a.mass, b.mass), (a.electric_energy, b.electric_energy), (a.kinetic_energy, b.kinetic_energy), (a.l2_norm, b.l2_norm)] {
            prop_assert!((p - q).abs() <= 1e-12, "{} vs {}", p, q);
        }
    }

    #[test]
    fn orthonormalize_reconstructs_and_is_idempotent(coeffs in prop::collection::vec(-1.0f64..1.0, 15)) {
        let grid = Grid::new(48, 0.0, 2.0 * PI).unwrap();
        let family = FunctionFamily::from_fn(grid.clone(), 3, |j, x| {
            (0..5).map(|m| coeffs[j * 5 + m] * (m as f64 * x).cos()).sum()
        });
        let (q, r) = orthonormalize(&family);
        let scale = family.values().amax().max(1e-300);
        prop_assert!((q.values() * &r - family.values()).amax() <= 1e-12 * scale);
        let (q2, r2) = orthonormalize(&q);
        prop_assert!((q2.values() - q.values()).amax() <= 1e-12);
        prop_assert!((r2 - DMatrix::identity(3, 3)).amax() <= 1e-12);
    }

    #[test]
    fn config_text_round_trips(
        kind in prop::sample::select(ScenarioKind::ALL.to_vec()),
        lie in any::<bool>(),
        rank in 1usize..6,
        extra in 0usize..3,
        grid in prop::collection::vec(8usize..64, 4),
        tau in 1e-4f64..0.5,
        t_final in 0.0f64..100.0,
        stride in 1usize..50,
        pulse in 0.0f64..1.0,
    ) {
        let hierarchical = kind.is_hierarchical();
        let config = RunConfig {
            scenario: kind,
            integrator: if lie || hierarchical { Splitting::Lie } else { Splitting::Strang },
            rank,
            rank_x: hierarchical.then_some(rank + extra),
            rank_v: hierarchical.then_some(rank + 1),
            rank_field: (hierarchical && extra > 0).then_some(extra),
            grid: if hierarchical { grid } else { grid[..2].to_vec() },
            tau,
            t_final,
            stride,
            output: format!("runs/{}.csv", kind.name()).into(),
            events: if kind == ScenarioKind::Echo { vec![Event { kind: EventKind::Pulse, t: pulse * t_final }] } else { Vec::new() },
        };
        let parsed = parse_config(&config.to_string());
        prop_assert_eq!(parsed.as_ref().ok(), Some(&config), "{:?}", parsed);
    }
}

#[test]
fn fuzz_seeds_parse_or_fail_with_a_key() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus/parse_config");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let text = std::fs::read_to_string(entry.unwrap().path()).unwrap();
        match parse_config(&text) {
            Ok(config) => assert_eq!(parse_config(&config.to_string()).unwrap(), config),
            Err(e) => assert!(e.to_string().contains("key `"), "{e}"),
        }
        seen += 1;
    }
    assert!(seen >= 5);
}
