//! Domain value types shared by every stage of the pipeline: operating
//! points, cell responses, physical constants and unit bridges.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Faraday constant, C/mol.
pub const FARADAY: f64 = 96485.33;
/// Universal gas constant, J/(mol K).
pub const GAS_CONSTANT: f64 = 8.314462618;
/// Ideal-gas molar volume at 25 °C and 1 atm, cm³/mol. Flow rates in sccm are
/// referenced to this state.
pub const MOLAR_VOLUME_REF: f64 = 24465.0;
/// Atmospheric pressure, Pa.
pub const P_ATM: f64 = 101_325.0;

const KELVIN_OFFSET: f64 = 273.15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    pub faraday: f64,
    pub gas_constant: f64,
    pub molar_volume_ref: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            faraday: FARADAY,
            gas_constant: GAS_CONSTANT,
            molar_volume_ref: MOLAR_VOLUME_REF,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DomainError {
    #[error("flow rate must be non-negative, got {0} sccm")]
    NegativeFlow(f64),
    #[error("{name} = {value} is not finite")]
    NotFinite { name: &'static str, value: f64 },
}

/// Converts a volumetric flow in sccm to a molar flow in mol/s.
pub fn sccm_to_mol_per_s(q: f64) -> Result<f64, DomainError> {
    if !q.is_finite() {
        return Err(DomainError::NotFinite { name: "flow", value: q });
    }
    if q < 0.0 {
        return Err(DomainError::NegativeFlow(q));
    }
    Ok(q / (MOLAR_VOLUME_REF * 60.0))
}

/// Inverse of [`sccm_to_mol_per_s`], without validation.
pub fn mol_per_s_to_sccm(n: f64) -> f64 {
    n * MOLAR_VOLUME_REF * 60.0
}

pub fn celsius_to_kelvin(t: f64) -> f64 {
    t + KELVIN_OFFSET
}

pub fn kelvin_to_celsius(t: f64) -> f64 {
    t - KELVIN_OFFSET
}

/// The four controllable inputs of the cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    /// Furnace temperature, °C.
    pub t_fur: f64,
    /// Air flow, sccm.
    pub q_air: f64,
    /// Steam flow, sccm.
    pub q_st: f64,
    /// Cell voltage, V.
    pub v_cell: f64,
}

impl OperatingPoint {
    pub fn new(t_fur: f64, q_air: f64, q_st: f64, v_cell: f64) -> Self {
        Self {
            t_fur,
            q_air,
            q_st,
            v_cell,
        }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.t_fur, self.q_air, self.q_st, self.v_cell]
    }

    pub fn from_array(x: [f64; 4]) -> Self {
        Self::new(x[0], x[1], x[2], x[3])
    }

    pub fn get(&self, input: Input) -> f64 {
        self.to_array()[input as usize]
    }

    pub fn with(mut self, input: Input, value: f64) -> Self {
        match input {
            Input::TFur => self.t_fur = value,
            Input::QAir => self.q_air = value,
            Input::QSt => self.q_st = value,
            Input::VCell => self.v_cell = value,
        }
        self
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Surrogate inputs, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Input {
    TFur = 0,
    QAir = 1,
    QSt = 2,
    VCell = 3,
}

impl Input {
    pub const ALL: [Input; 4] = [Input::TFur, Input::QAir, Input::QSt, Input::VCell];

    pub fn name(self) -> &'static str {
        match self {
            Input::TFur => "t_fur",
            Input::QAir => "q_air",
            Input::QSt => "q_st",
            Input::VCell => "v_cell",
        }
    }
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    /// Range widened by `frac` of its width on both sides.
    pub fn widened(&self, frac: f64) -> Range {
        let pad = frac * self.width();
        Range::new(self.lo - pad, self.hi + pad)
    }

    /// Maps `u ∈ [0, 1]` onto the range.
    pub fn lerp(&self, u: f64) -> f64 {
        self.lo + u * self.width()
    }

    pub fn is_valid(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.hi > self.lo
    }
}

/// Per-input sampling / validity box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputRanges {
    pub t_fur: Range,
    pub q_air: Range,
    pub q_st: Range,
    pub v_cell: Range,
}

impl InputRanges {
    /// The surrogate training domain.
    pub const DOMAIN: InputRanges = InputRanges {
        t_fur: Range::new(600.0, 750.0),
        q_air: Range::new(40.0, 300.0),
        q_st: Range::new(20.0, 150.0),
        v_cell: Range::new(1.0, 1.7),
    };

    pub fn get(&self, input: Input) -> Range {
        match input {
            Input::TFur => self.t_fur,
            Input::QAir => self.q_air,
            Input::QSt => self.q_st,
            Input::VCell => self.v_cell,
        }
    }

    pub fn to_array(&self) -> [Range; 4] {
        [self.t_fur, self.q_air, self.q_st, self.v_cell]
    }

    pub fn widened(&self, frac: f64) -> InputRanges {
        InputRanges {
            t_fur: self.t_fur.widened(frac),
            q_air: self.q_air.widened(frac),
            q_st: self.q_st.widened(frac),
            v_cell: self.v_cell.widened(frac),
        }
    }

    pub fn contains(&self, op: &OperatingPoint) -> bool {
        Input::ALL
            .iter()
            .all(|&i| self.get(i).contains(op.get(i)))
    }

    /// First input that falls outside the box, if any.
    pub fn first_violation(&self, op: &OperatingPoint) -> Option<Input> {
        Input::ALL
            .iter()
            .copied()
            .find(|&i| !self.get(i).contains(op.get(i)))
    }

    pub fn is_valid(&self) -> bool {
        self.to_array().iter().all(Range::is_valid)
    }
}

impl Default for InputRanges {
    fn default() -> Self {
        Self::DOMAIN
    }
}

/// The five observed outputs of the cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellResponse {
    /// Hottest segment temperature, °C.
    pub t_max: f64,
    /// Coldest segment temperature, °C.
    pub t_min: f64,
    /// Segment currents, A (electrolysis positive).
    pub i_up: f64,
    pub i_mid: f64,
    pub i_down: f64,
}

impl CellResponse {
    pub fn i_tot(&self) -> f64 {
        self.i_up + self.i_mid + self.i_down
    }

    pub fn get(&self, output: Output) -> f64 {
        self.to_array()[output as usize]
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.t_max, self.t_min, self.i_up, self.i_mid, self.i_down]
    }

    pub fn from_array(y: [f64; 5]) -> Self {
        Self {
            t_max: y[0],
            t_min: y[1],
            i_up: y[2],
            i_mid: y[3],
            i_down: y[4],
        }
    }

    /// Checks `t_max ≥ t_min` and non-negative currents.
    pub fn is_consistent(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
            && self.t_max >= self.t_min
            && self.i_up >= 0.0
            && self.i_mid >= 0.0
            && self.i_down >= 0.0
    }
}

/// Surrogate outputs, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Output {
    TMax = 0,
    TMin = 1,
    IUp = 2,
    IMid = 3,
    IDown = 4,
}

impl Output {
    pub const ALL: [Output; 5] = [
        Output::TMax,
        Output::TMin,
        Output::IUp,
        Output::IMid,
        Output::IDown,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Output::TMax => "t_max",
            Output::TMin => "t_min",
            Output::IUp => "i_up",
            Output::IMid => "i_mid",
            Output::IDown => "i_down",
        }
    }

    pub fn from_name(name: &str) -> Option<Output> {
        Output::ALL.iter().copied().find(|o| o.name() == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sccm_conversion() {
        assert_eq!(sccm_to_mol_per_s(0.0).unwrap(), 0.0);
        // 100 / (24465 * 60)
        assert_relative_eq!(sccm_to_mol_per_s(100.0).unwrap(), 6.8125e-5, max_relative = 1e-4);
        assert_relative_eq!(sccm_to_mol_per_s(76.6).unwrap(), 5.218e-5, max_relative = 1e-3);
        assert_eq!(
            sccm_to_mol_per_s(-1.0),
            Err(DomainError::NegativeFlow(-1.0))
        );
        assert!(sccm_to_mol_per_s(f64::NAN).is_err());
        let n = sccm_to_mol_per_s(42.0).unwrap();
        assert_relative_eq!(mol_per_s_to_sccm(n), 42.0, max_relative = 1e-15);
    }

    #[test]
    fn domain_box() {
        let d = InputRanges::DOMAIN;
        assert!(d.contains(&OperatingPoint::new(675.0, 170.0, 85.0, 1.35)));
        let hot = OperatingPoint::new(1000.0, 170.0, 85.0, 1.35);
        assert_eq!(d.first_violation(&hot), Some(Input::TFur));
        let w = d.widened(0.1);
        assert_eq!(w.t_fur, Range::new(585.0, 765.0));
    }

    #[test]
    fn accessors_round_trip() {
        let op = OperatingPoint::new(700.0, 100.0, 60.0, 1.4);
        assert_eq!(OperatingPoint::from_array(op.to_array()), op);
        assert_eq!(op.get(Input::QSt), 60.0);
        assert_eq!(op.with(Input::VCell, 1.5).v_cell, 1.5);
        assert_eq!(Output::from_name("i_mid"), Some(Output::IMid));
    }
}
