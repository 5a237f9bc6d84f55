use drcal_core::case::{FIVE_BUS_JSON, PTDF_TOL};
use drcal_core::{compute_ptdf, CaseDescription, CaseError, NetworkCase};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn two_bus() -> CaseDescription {
    CaseDescription::from_json(
        r#"{
        "buses": 2,
        "generators": [{"bus": 1, "pmin_mw": 0, "pmax_mw": 100, "cost_energy": 10,
            "cost_reserve": 15, "cost_activation": 20, "cost_in": 20,
            "cost_out_up": 100, "cost_out_dn": 100}],
        "lines": [{"from": 1, "to": 2, "susceptance_pu": 10, "limit_mw": 50}],
        "wind": [{"bus": 2, "capacity_mw": 20}],
        "demand_mw": [0, 30]
    }"#,
    )
    .unwrap()
}

/// Flows from an independent dense solve of `B θ = p` with the slack angle fixed.
fn oracle_ptdf(nb: usize, lines: &[(usize, usize, f64)], slack: usize) -> DMatrix<f64> {
    let mut b: DMatrix<f64> = DMatrix::zeros(nb, nb);
    for &(f, t, s) in lines {
        b[(f, f)] += s;
        b[(t, t)] += s;
        b[(f, t)] -= s;
        b[(t, f)] -= s;
    }
    let keep: Vec<usize> = (0..nb).filter(|k| *k != slack).collect();
    let red = b.select_rows(&keep).select_columns(&keep);
    let inv = red.try_inverse().unwrap();
    let mut out: DMatrix<f64> = DMatrix::zeros(lines.len(), nb);
    for (kk, &bus) in keep.iter().enumerate() {
        let mut p: DVector<f64> = DVector::zeros(keep.len());
        p[kk] = 1.0;
        let th_red: DVector<f64> = &inv * p;
        let mut th: DVector<f64> = DVector::zeros(nb);
        for (i, &k) in keep.iter().enumerate() {
            th[k] = th_red[i];
        }
        for (l, &(f, t, s)) in lines.iter().enumerate() {
            out[(l, bus)] = s * (th[f] - th[t]);
        }
    }
    out
}

#[test]
fn bundled_case_loads() {
    let case = NetworkCase::five_bus();
    assert_eq!(case.n_buses, 5);
    assert_eq!(case.n_generators, 3);
    assert_eq!(case.n_wind, 1);
    assert_eq!(case.wind_capacity, vec![200.0]);
    assert_eq!(case.cost_energy, vec![14.0, 30.0, 10.0]);
    for g in 0..3 {
        assert_eq!(case.cost_reserve[g], 1.5 * case.cost_energy[g]);
        assert_eq!(case.cost_activation[g], 2.0 * case.cost_energy[g]);
        assert_eq!(case.cost_out_up[g], 10.0 * case.cost_energy[g]);
    }
    let two = NetworkCase::five_bus_two_farms();
    assert_eq!(two.n_wind, 2);
}

#[test]
fn bundled_ptdf_matches_dense_oracle() {
    let case = NetworkCase::five_bus();
    let lines: Vec<_> = (0..case.n_lines)
        .map(|l| (case.line_from[l], case.line_to[l], case.line_susceptance[l]))
        .collect();
    let oracle = oracle_ptdf(5, &lines, 0);
    for l in 0..case.n_lines {
        for b in 0..5 {
            assert!((case.ptdf[(l, b)] - oracle[(l, b)]).abs() < 1e-9);
        }
        assert_eq!(case.ptdf[(l, 0)], 0.0);
    }
    // unit injection at bus 3 withdrawn at the slack: flows conserve at every bus
    let mut net = [0.0; 5];
    for l in 0..case.n_lines {
        let f = case.ptdf[(l, 2)];
        net[case.line_from[l]] -= f;
        net[case.line_to[l]] += f;
    }
    let expected = [-1.0, 0.0, 1.0, 0.0, 0.0];
    for b in 0..5 {
        assert!((net[b] + expected[b]).abs() < 1e-12, "bus {b}: {}", net[b]);
    }
}

#[test]
fn two_bus_ptdf() {
    let case = NetworkCase::from_description(&two_bus()).unwrap();
    assert_eq!(case.ptdf.shape(), (1, 2));
    assert_eq!(case.ptdf[(0, 0)], 0.0);
    assert!((case.ptdf[(0, 1)] + 1.0).abs() < 1e-12);
}

#[test]
fn triangle_splits_two_thirds() {
    let lines = [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)];
    let ptdf = compute_ptdf(3, &lines, 0).unwrap();
    // injection at bus 2 (index 1) flows back to bus 1 directly (2/3) and via bus 3 (1/3)
    assert!((ptdf[(0, 1)] + 2.0 / 3.0).abs() < 1e-12);
    assert!((ptdf[(1, 1)] - 1.0 / 3.0).abs() < 1e-12);
    assert!((ptdf[(2, 1)] + 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn disconnected_network_is_singular() {
    let lines = [(0, 1, 1.0), (2, 3, 1.0)];
    assert_eq!(compute_ptdf(4, &lines, 0), Err(CaseError::SingularNetwork));
}

#[test]
fn validation_names_the_field() {
    let mut desc = two_bus();
    desc.generators[0].pmin_mw = 200.0;
    match NetworkCase::from_description(&desc) {
        Err(CaseError::Validation { field, detail }) => {
            assert!(field.contains("generators[0]"), "{field}");
            assert!(detail.contains("generator 1"), "{detail}");
        }
        other => panic!("{other:?}"),
    }

    let mut desc = two_bus();
    desc.lines[0].limit_mw = 0.0;
    assert!(matches!(
        NetworkCase::from_description(&desc),
        Err(CaseError::Validation { field, .. }) if field == "lines[0].limit_mw"
    ));

    let mut desc = two_bus();
    desc.wind[0].bus = 3;
    assert!(NetworkCase::from_description(&desc).is_err());

    let mut desc = two_bus();
    desc.generators[0].cost_in = -1.0;
    assert!(NetworkCase::from_description(&desc).is_err());

    assert!(matches!(NetworkCase::from_json("{"), Err(CaseError::Parse(_))));
    assert!(matches!(NetworkCase::from_json(r#"{"buses": 2}"#), Err(CaseError::Parse(_))));
}

#[test]
fn explicit_ptdf_is_checked() {
    let mut desc = two_bus();
    desc.ptdf = Some(vec![0.0, -1.0]);
    assert!(NetworkCase::from_description(&desc).is_ok());
    desc.ptdf = Some(vec![0.0, -1.0 + 10.0 * PTDF_TOL]);
    assert!(NetworkCase::from_description(&desc).is_err());
    desc.ptdf = Some(vec![0.0]);
    assert!(NetworkCase::from_description(&desc).is_err());
}

#[test]
fn slack_bus_override() {
    let mut desc = two_bus();
    desc.slack_bus = Some(2);
    let case = NetworkCase::from_description(&desc).unwrap();
    assert!((case.ptdf[(0, 0)] - 1.0).abs() < 1e-12);
    assert_eq!(case.ptdf[(0, 1)], 0.0);
}

#[test]
fn description_round_trip() {
    let case = NetworkCase::from_json(FIVE_BUS_JSON).unwrap();
    let again = NetworkCase::from_description(&case.to_description()).unwrap();
    assert_eq!(case, again);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_networks_match_oracle(
        nb in 2usize..7,
        extra in prop::collection::vec((0usize..7, 0usize..7, 0.5..20.0f64), 0..6),
        tree_b in prop::collection::vec(0.5..20.0f64, 6),
        slack in 0usize..7,
    ) {
        let slack = slack % nb;
        // spanning path plus random chords keeps the graph connected
        let mut lines: Vec<(usize, usize, f64)> = (1..nb).map(|b| (b - 1, b, tree_b[b - 1])).collect();
        for (f, t, b) in extra {
            let (f, t) = (f % nb, t % nb);
            if f != t {
                lines.push((f, t, b));
            }
        }
        let ptdf = compute_ptdf(nb, &lines, slack).unwrap();
        let oracle = oracle_ptdf(nb, &lines, slack);
        for l in 0..lines.len() {
            for b in 0..nb {
                prop_assert!((ptdf[(l, b)] - oracle[(l, b)]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn radial_line_carries_the_full_injection(b in 0.1..100.0f64, amount in -50.0..50.0f64) {
        let ptdf = compute_ptdf(2, &[(0, 1, b)], 0).unwrap();
        // +amount at bus 1, -amount at bus 2
        let flow = ptdf[(0, 0)] * amount - ptdf[(0, 1)] * amount;
        prop_assert!((flow - amount).abs() < 1e-9);
    }
}
