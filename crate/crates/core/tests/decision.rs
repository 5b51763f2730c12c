use soec_core::decision::*;
use soec_core::indices::PerformanceIndices;
use soec_core::optimize::{GridSpec, Objective, OptimizeError, ParetoFront, ParetoSolution};

/// Builds a front whose nodes carry the given objective rows, one
/// temperature level per row and a single utilisation level.
fn front(p_ele: f64, rows: &[[f64; 6]]) -> ParetoFront {
    let grid = GridSpec {
        t_levels: (0..rows.len()).map(|k| 600.0 + k as f64).collect(),
        su_levels: vec![0.5],
    };
    let solutions = rows
        .iter()
        .enumerate()
        .map(|(k, o)| ParetoSolution {
            t_index: k,
            su_index: 0,
            t_fur: o[4],
            su_target: o[3],
            p_ele,
            q_air: 100.0,
            v_cell: o[2],
            q_st: 50.0,
            response: None,
            indices: Some(PerformanceIndices {
                ih_i: o[0],
                ih_t: o[1],
                su: o[3],
                i_tot: o[5],
                q_h2: 0.0,
                p_ele,
                open_circuit: false,
                steam_starved: false,
            }),
            feasible: true,
            dominated: false,
            power_residual: 0.0,
            su_residual: 0.0,
            diagnostics: String::new(),
        })
        .collect();
    ParetoFront {
        p_ele,
        grid,
        solutions,
        dominated_log: vec![],
    }
}

#[test]
fn printed_best_worst_rows_give_the_printed_percentages() {
    let best = [0.21, 0.47, 1.31, 0.90, 630.0, 7.63];
    let worst = [0.54, 5.25, 1.70, 0.50, 750.0, 5.88];
    let chosen = [0.35, 1.69, 1.42, 0.70, 720.0, 7.05];
    let f = front(10.0, &[best, worst, chosen]);
    let mut r = linmap_select(&f, &WeightVector::case1()).unwrap();
    r.objectives = chosen;
    let expected = [43.2, 25.5, 27.7, 50.0, 75.0, 33.2];
    for (k, got) in r.relative_distance().iter().enumerate() {
        assert!((100.0 * got - expected[k]).abs() <= 1.5, "{k}: {got}");
    }
    assert_eq!(r.best, best);
    assert_eq!(r.worst, worst);
}

#[test]
fn ideal_member_is_chosen_with_zero_distance() {
    // second row is best on every objective
    let rows = [[0.5, 3.0, 1.5, 0.6, 700.0, 6.0], [0.2, 1.0, 1.3, 0.9, 640.0, 7.5], [0.4, 2.0, 1.6, 0.5, 750.0, 6.5]];
    let r = linmap_select(&front(10.0, &rows), &WeightVector::case1()).unwrap();
    assert_eq!(r.index, 1);
    assert_eq!(r.distance, 0.0);
}

#[test]
fn ties_go_to_the_lower_grid_index() {
    let rows = [[0.0, 1.0, 1.3, 0.9, 640.0, 7.5], [1.0, 0.0, 1.3, 0.9, 640.0, 7.5]];
    let r = linmap_select(&front(10.0, &rows), &WeightVector::case1()).unwrap();
    assert_eq!((r.index, r.su_index, r.t_index), (0, 0, 0));
}

#[test]
fn affine_rescaling_leaves_normalisation_unchanged() {
    let rows = vec![[0.1, 2.0, 1.3, 0.6, 650.0, 5.0], [0.3, 1.0, 1.5, 0.8, 700.0, 6.0], [0.2, 4.0, 1.4, 0.7, 720.0, 7.0]];
    let scaled: Vec<[f64; 6]> = rows.iter().map(|r| r.map(|x| 3.0 * x + 7.0)).collect();
    for (a, b) in linmap_normalize(&rows).iter().zip(&linmap_normalize(&scaled)) {
        for k in 0..6 {
            assert!((a[k] - b[k]).abs() < 1e-12);
        }
    }
}

#[test]
fn curve_skips_missing_fronts_and_writes_csvs() {
    let rows = [[0.2, 1.0, 1.3, 0.7, 700.0, 7.0], [0.3, 0.5, 1.4, 0.8, 720.0, 6.5]];
    let sweep = vec![
        (9.0, Err(OptimizeError::EmptyFront { p_ele: 9.0 })),
        (10.0, Ok(front(10.0, &rows))),
    ];
    let c = operating_curve(&sweep, &WeightVector::case2());
    assert_eq!(c.points.len(), 1);
    assert_eq!(c.skipped.len(), 1);
    assert_eq!(c.points[0].get(Objective::Su), 0.8);
    let csv = c.to_csv();
    assert_eq!(csv.lines().next().unwrap(), CURVE_HEADER);
    assert_eq!(csv.lines().count(), 2);
    let env = c.envelope_csv();
    assert_eq!(env.lines().count(), 3);
    assert!(env.contains("\n10,best,0.2,0.5,1.3,0.8,700,7\n"));
}

#[test]
fn empty_front_is_an_error() {
    let mut f = front(10.0, &[[0.2, 1.0, 1.3, 0.7, 700.0, 7.0]]);
    f.solutions[0].feasible = false;
    assert!(matches!(
        linmap_select(&f, &WeightVector::case1()),
        Err(DecisionError::EmptyFront { .. })
    ));
}
