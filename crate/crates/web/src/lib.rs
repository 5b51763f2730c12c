//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Results cross the boundary as flat `Float64Array`s; the row layouts are
//! documented on each export.

use std::sync::OnceLock;

use wasm_bindgen::prelude::*;

use soec_core::decision::{linmap_select, WeightVector};
use soec_core::indices::performance_indices;
use soec_core::optimize::{build_front, GridSpec, Objective};
use soec_core::physics::{iv_sweep, simulate_cell, CellParameters, Scenario};
use soec_core::surrogate::SurrogateEnsemble;
use soec_core::types::OperatingPoint;

const MODEL: &str = include_str!("../assets/model.txt");

fn ensemble() -> &'static SurrogateEnsemble {
    static E: OnceLock<SurrogateEnsemble> = OnceLock::new();
    E.get_or_init(|| SurrogateEnsemble::from_text(MODEL).expect("embedded model parses"))
}

/// Columns per row of [`iv_curve`].
pub const IV_COLS: usize = 6;
/// Columns per member row of [`linmap`].
pub const FRONT_COLS: usize = 8;

/// Rows `[v_cell, i_up, i_mid, i_down, t_max, t_min]` for `n` voltages from
/// `v_min` to `v_max`; NaN where the model fails.
pub fn iv_rows(scenario: &str, v_min: f64, v_max: f64, n: usize) -> Result<Vec<f64>, String> {
    let sc = Scenario::from_name(scenario).ok_or_else(|| format!("unknown scenario `{scenario}`"))?;
    if n < 2 || !(v_max > v_min) {
        return Err("need n >= 2 and v_max > v_min".into());
    }
    let grid: Vec<f64> = (0..n).map(|k| v_min + (v_max - v_min) * k as f64 / (n - 1) as f64).collect();
    let res = iv_sweep(&sc.operating_point(v_min), &grid, &CellParameters::default()).map_err(|e| e.to_string())?;
    let mut out = Vec::with_capacity(n * IV_COLS);
    for (v, r) in grid.iter().zip(res) {
        match r {
            Ok(r) => out.extend([*v, r.i_up, r.i_mid, r.i_down, r.t_max, r.t_min]),
            Err(_) => out.extend([*v, f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN]),
        }
    }
    Ok(out)
}

/// `[t_max, t_min, i_up, i_mid, i_down, su, ih_i, ih_t, i_tot]` from the
/// cell model.
pub fn point(t_fur: f64, q_air: f64, q_st: f64, v_cell: f64) -> Result<Vec<f64>, String> {
    let op = OperatingPoint::new(t_fur, q_air, q_st, v_cell);
    let r = simulate_cell(&op, &CellParameters::default()).map_err(|e| e.to_string())?;
    let p = performance_indices(&op, &r).map_err(|e| e.to_string())?;
    Ok(vec![r.t_max, r.t_min, r.i_up, r.i_mid, r.i_down, p.su, p.ih_i, p.ih_t, p.i_tot])
}

/// Front at `p_ele` from the embedded surrogate and its LINMAP choice.
/// Layout: `[chosen_row, n_rows, rows...]`, each row
/// `[ih_i, ih_t, v_cell, su, t_fur, i_tot, q_st, distance]`.
pub fn linmap_rows(p_ele: f64, weights: &str) -> Result<Vec<f64>, String> {
    let w = match weights {
        "case1" => WeightVector::case1(),
        "case2" => WeightVector::case2(),
        s => WeightVector::parse(s).map_err(|e| e.to_string())?,
    };
    let front = build_front(ensemble(), p_ele, &GridSpec::default()).map_err(|e| e.to_string())?;
    let chosen = linmap_select(&front, &w).map_err(|e| e.to_string())?;
    let members: Vec<_> = front.members().collect();
    let row = members
        .iter()
        .position(|s| s.t_index == chosen.t_index && s.su_index == chosen.su_index)
        .expect("chosen solution is a member");
    let mut out = vec![row as f64, members.len() as f64];
    for s in members {
        let o = s.objectives().expect("members are feasible");
        out.extend(Objective::ALL.map(|k| o[k as usize]));
        let d = if s.t_index == chosen.t_index && s.su_index == chosen.su_index {
            chosen.distance
        } else {
            f64::NAN
        };
        out.extend([s.q_st, d]);
    }
    Ok(out)
}

#[wasm_bindgen]
pub fn iv_curve(scenario: &str, v_min: f64, v_max: f64, n: usize) -> Result<Vec<f64>, JsError> {
    iv_rows(scenario, v_min, v_max, n).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn simulate(t_fur: f64, q_air: f64, q_st: f64, v_cell: f64) -> Result<Vec<f64>, JsError> {
    point(t_fur, q_air, q_st, v_cell).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn linmap(p_ele: f64, weights: &str) -> Result<Vec<f64>, JsError> {
    linmap_rows(p_ele, weights).map_err(|e| JsError::new(&e))
}
