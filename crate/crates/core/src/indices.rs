//! Inhomogeneity and utilisation indices derived from a cell response.

use serde::{Deserialize, Serialize};

use crate::types::{mol_per_s_to_sccm, sccm_to_mol_per_s, CellResponse, DomainError, OperatingPoint, FARADAY};

/// Performance indices of one operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerformanceIndices {
    /// Current inhomogeneity `1 − i_down / i_up`. NaN when `open_circuit`.
    pub ih_i: f64,
    /// Temperature inhomogeneity `t_max − t_min`, °C.
    pub ih_t: f64,
    /// Steam utilisation.
    pub su: f64,
    /// Total current, A.
    pub i_tot: f64,
    /// Hydrogen production, sccm.
    pub q_h2: f64,
    /// Electrolysis power, W.
    pub p_ele: f64,
    /// Up-stream current is zero, so `ih_i` is undefined.
    pub open_circuit: bool,
    /// `su > 1`: more steam converted than fed, outside model validity.
    pub steam_starved: bool,
}

/// Computes the performance indices of `op` given the cell response `r`.
///
/// Fails only when the steam flow is negative or not finite.
pub fn performance_indices(
    op: &OperatingPoint,
    r: &CellResponse,
) -> Result<PerformanceIndices, DomainError> {
    let n_st = sccm_to_mol_per_s(op.q_st)?;
    let i_tot = r.i_tot();
    let open_circuit = r.i_up <= 0.0;
    let ih_i = if open_circuit {
        f64::NAN
    } else {
        1.0 - r.i_down / r.i_up
    };
    let su = i_tot / (2.0 * FARADAY * n_st);
    let n_h2 = i_tot / (2.0 * FARADAY);
    Ok(PerformanceIndices {
        ih_i,
        ih_t: r.t_max - r.t_min,
        su,
        i_tot,
        q_h2: mol_per_s_to_sccm(n_h2),
        p_ele: op.v_cell * i_tot,
        open_circuit,
        steam_starved: su > 1.0,
    })
}

/// Hydrogen molar production rate for a total current, mol/s.
pub fn h2_mol_per_s(i_tot: f64) -> f64 {
    i_tot / (2.0 * FARADAY)
}

/// Steam flow (sccm) that gives utilisation `su` at total current `i_tot`.
pub fn steam_flow_for(i_tot: f64, su: f64) -> f64 {
    mol_per_s_to_sccm(i_tot / (2.0 * FARADAY * su))
}
