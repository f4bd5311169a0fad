mod common;

use common::*;
use p2p_clear::clearing::verify_kkt;
use p2p_clear::grid::{build_modified_tf, build_ptdf, envelope, fit_loss_linearization, Operator};
use p2p_clear::io::{casegen, LoadedCase};
use p2p_clear::policy::{PolicyDescriptor, PolicyKind};
use p2p_clear::settlement::{line_loading, settle};
use proptest::prelude::*;

fn random(n_tso: usize, n_dso: usize, seed: u64) -> LoadedCase {
    casegen::random_case(n_tso, n_dso, seed).unwrap().build().unwrap()
}

fn policy_kind() -> impl Strategy<Value = PolicyKind> {
    prop_oneof![Just(PolicyKind::Soc), Just(PolicyKind::Ind), Just(PolicyKind::Cap)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn loss_envelope_tracks_the_quadratic(
        r in 1e-6f64..1e-2,
        cap in 1.0f64..500.0,
        segments in 1usize..6,
        frac in -1.0f64..1.0,
    ) {
        let segs = fit_loss_linearization(r, cap, segments);
        let h = cap / segments as f64;
        let f = frac * cap;
        let err = envelope(&segs, f) - r * f * f;
        prop_assert!(err <= r * h * h / 12.0 * (1.0 + 1e-9) + 1e-12, "over by {err}");
        prop_assert!(err >= -r * h * h / 6.0 * (1.0 + 1e-9) - 1e-12, "under by {err}");
    }

    #[test]
    fn single_segment_fit_is_closed_form(r in 1e-6f64..1.0, cap in 0.1f64..1000.0) {
        let s = fit_loss_linearization(r, cap, 1)[0];
        prop_assert!((s.slope - r * cap).abs() <= 1e-9 * (1.0 + r * cap));
        prop_assert!((s.intercept + r * cap * cap / 6.0).abs() <= 1e-9 * (1.0 + r * cap * cap));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn ptdf_flows_satisfy_kirchhoff(seed in any::<u64>(), n in 3usize..7, inj in prop::collection::vec(-50.0f64..50.0, 7)) {
        let case = random(n, 1, seed);
        let grid = &case.grid;
        let ptdf = build_ptdf(grid).unwrap();
        prop_assert!(ptdf.columns.iter().all(|&b| b != grid.slack || ptdf.values.column(ptdf.column(b).unwrap()).amax() == 0.0));
        let buses = grid.transmission_buses();
        let p: Vec<f64> = buses.iter().enumerate().map(|(i, &b)| if b == grid.slack { 0.0 } else { inj[i] }).collect();
        let flows: Vec<f64> = (0..grid.ac_lines.len())
            .map(|k| buses.iter().zip(&p).map(|(&b, pb)| ptdf.get(k, b) * pb).sum())
            .collect();
        for (i, &b) in buses.iter().enumerate() {
            if b == grid.slack {
                continue;
            }
            let out: f64 = grid.ac_lines.iter().zip(&flows).map(|(l, f)| {
                if l.from == b { *f } else if l.to == b { -*f } else { 0.0 }
            }).sum();
            prop_assert!((out - p[i]).abs() < 1e-8, "bus {} net outflow {out} vs injection {}", grid.buses[b].id, p[i]);
        }
    }

    #[test]
    fn distribution_buses_inherit_their_connection_column(seed in any::<u64>(), n_dso in 1usize..3) {
        let case = random(4, n_dso, seed);
        let grid = &case.grid;
        let tf = build_modified_tf(grid, &build_ptdf(grid).unwrap()).unwrap();
        let n_ac = grid.ac_lines.len();
        for (b, bus) in grid.buses.iter().enumerate() {
            if let Operator::Dso(d) = bus.operator {
                let c = grid.dso_connection_bus(d);
                for k in 0..n_ac {
                    prop_assert_eq!(tf[(k, b)], tf[(k, c)]);
                }
                for l in 0..grid.dist_lines.len() {
                    let owner = grid.line_operator(n_ac + l);
                    if owner != bus.operator {
                        prop_assert_eq!(tf[(n_ac + l, b)], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn allocation_columns_are_distributions(seed in any::<u64>(), kind in policy_kind(), chi in 0.0f64..=1.0) {
        let case = random(4, 2, seed);
        let a = allocation(&case, PolicyDescriptor::new(kind, Some(chi)));
        prop_assert!(a.check_conservation(&case.grid, &case.agents, &case.graph, 1e-12).is_ok());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cleared_random_markets_conserve_energy_and_money(seed in any::<u64>(), kind in policy_kind(), chi in 0.0f64..=1.0) {
        let case = random(3, 1, seed);
        let policy = PolicyDescriptor::new(kind, Some(chi));
        let run = clear(&case, case.options, policy);
        let sol = &run.solution;
        for k in 0..case.graph.trades().len() {
            let r = case.graph.reverse(k).unwrap();
            prop_assert!((sol.t[k] + sol.t[r]).abs() <= 1e-7);
        }
        let allocated: f64 = sol.w.iter().sum();
        let physical: f64 = sol.w_line.iter().sum();
        prop_assert!((allocated - physical).abs() <= 1e-6 * physical.max(1.0));
        prop_assert!(sol.w.iter().all(|&w| w >= -1e-9));

        let kkt = verify_kkt(&run.problem, sol, 1e-6).unwrap();
        prop_assert!(kkt.max_price_residual() <= 1e-6, "price residual {}", kkt.max_price_residual());

        let report = settle(&market(&case, run.allocation.as_ref()), sol, None).unwrap();
        prop_assert!(report.ledger.relative_imbalance <= 1e-6);
        for l in line_loading(sol, &case.grid).unwrap() {
            prop_assert!(l.loading <= 1.0 + 1e-6, "{} loaded {}", l.line, l.loading);
        }
        let mut q_by_dso = vec![0.0; case.grid.dsos.len()];
        for (i, a) in case.agents.iter().enumerate() {
            if let Operator::Dso(d) = case.grid.buses[a.bus].operator {
                q_by_dso[d] += sol.q[i];
            }
        }
        prop_assert!(q_by_dso.iter().all(|q| q.abs() <= 1e-6));
    }
}
