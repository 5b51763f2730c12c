//! Reduced-order steady-state model of a three-segment planar SOEC.
//!
//! The cathode gas (steam + hydrogen carrier) flows through the up-, mid- and
//! down-stream segments in series. All segments share the cell voltage. Each
//! segment is a lumped element with
//!
//! * a Nernst reversible potential at its mean gas composition,
//! * Butler-Volmer activation losses on both electrodes,
//! * an Arrhenius ohmic resistance,
//! * a heat balance against the furnace, the air stream and its neighbours.
//!
//! Steam consumed by a segment (`I / 2F`) is removed from the gas passed to
//! the next one, which is what makes the down-stream current the lowest.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::roots::{self, RootError, Tolerance};
use crate::types::{
    celsius_to_kelvin, kelvin_to_celsius, sccm_to_mol_per_s, CellResponse, OperatingPoint,
    FARADAY, GAS_CONSTANT, P_ATM,
};

const DEFAULT_PARAMS: &str = include_str!("../config/cell_params.toml");
const PARAMS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PhysicsError {
    #[error("mole fraction {name} = {value} outside (0, 1]")]
    MoleFraction { name: &'static str, value: f64 },
    #[error("temperature must be positive and finite, got {0} K")]
    Temperature(f64),
    #[error("invalid operating point: {0}")]
    OperatingPoint(String),
    #[error("polarization root not bracketed{}: {source}", segment_suffix(*.segment))]
    Bracket {
        segment: Option<Segment>,
        #[source]
        source: RootError,
    },
    #[error("steam starvation in the {segment} segment: v_cell exceeds the full-conversion voltage {v_limit:.4} V")]
    Starvation { segment: Segment, v_limit: f64 },
    #[error("no convergence after {iterations} outer iterations (|dI| = {current_change:e} A, |dT| = {temperature_change:e} K)")]
    NonConvergence {
        iterations: usize,
        current_change: f64,
        temperature_change: f64,
    },
    #[error("voltage grid must be sorted ascending")]
    UnsortedGrid,
    #[error("parameter file: {0}")]
    Config(String),
}

fn segment_suffix(s: Option<Segment>) -> String {
    s.map(|s| format!(" in the {s} segment")).unwrap_or_default()
}

/// Position of a segment along the cathode flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Segment {
    Up = 0,
    Mid = 1,
    Down = 2,
}

impl Segment {
    pub const ALL: [Segment; 3] = [Segment::Up, Segment::Mid, Segment::Down];
}

impl std::fmt::Display for Segment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Segment::Up => "up-stream",
            Segment::Mid => "middle-stream",
            Segment::Down => "down-stream",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Electrode {
    Anode,
    Cathode,
}

/// How a segment's representative steam fraction is formed from its inlet
/// and outlet values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Closure {
    Arithmetic,
    LogMean,
    /// Well-mixed segment: the outlet composition.
    Outlet,
}

impl Closure {
    pub fn mean(self, x_in: f64, x_out: f64) -> f64 {
        match self {
            Closure::Arithmetic => 0.5 * (x_in + x_out),
            Closure::LogMean => {
                if x_out <= 0.0 {
                    0.0
                } else if (x_in - x_out).abs() <= 1e-12 * x_in {
                    0.5 * (x_in + x_out)
                } else {
                    (x_in - x_out) / (x_in / x_out).ln()
                }
            }
            Closure::Outlet => x_out,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSettings {
    pub max_outer_iterations: usize,
    /// Convergence threshold on segment currents between iterations, A.
    pub current_tol: f64,
    /// Convergence threshold on segment temperatures between iterations, K.
    pub temperature_tol: f64,
    /// Relaxation factor applied to temperature updates.
    pub damping: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_outer_iterations: 200,
            current_tol: 1e-8,
            temperature_tol: 1e-7,
            damping: 0.5,
        }
    }
}

/// Material, kinetic and thermal parameters of the cell. See
/// `config/cell_params.toml` for units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellParameters {
    pub version: u32,
    pub e_ref_0: f64,
    pub t_ref: f64,
    pub delta_s_r: f64,
    pub alpha: f64,
    pub i0_a_pre: f64,
    pub e_act_a: f64,
    pub i0_c_pre: f64,
    pub e_act_c: f64,
    pub asr_ohm_pre: f64,
    pub e_act_ohm: f64,
    pub x_ref_h2: f64,
    pub x_ref_h2o: f64,
    pub x_ref_o2: f64,
    pub x_o2_air: f64,
    pub p_anode: f64,
    pub h2_ratio: f64,
    pub seg_area: f64,
    pub h_fur: f64,
    pub k_axial: f64,
    pub h_air: f64,
    /// Steam diffusion resistance of the cathode support: the electrode sees
    /// `x_h2o − k·i` with `k = R T L / (2 F p D_eff)`. Zero disables it.
    pub cathode_thickness: f64,
    pub d_eff: f64,
    pub closure: Closure,
    #[serde(default)]
    pub solver: SolverSettings,
}

impl Default for CellParameters {
    fn default() -> Self {
        Self::from_toml(DEFAULT_PARAMS).expect("bundled parameter file is valid")
    }
}

impl CellParameters {
    pub fn from_toml(text: &str) -> Result<Self, PhysicsError> {
        let p: CellParameters =
            toml::from_str(text).map_err(|e| PhysicsError::Config(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("parameters serialize")
    }

    pub fn load(path: &std::path::Path) -> Result<Self, PhysicsError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PhysicsError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), PhysicsError> {
        if self.version != PARAMS_VERSION {
            return Err(PhysicsError::Config(format!(
                "unsupported version {} (expected {PARAMS_VERSION})",
                self.version
            )));
        }
        let positive = [
            ("e_ref_0", self.e_ref_0),
            ("t_ref", self.t_ref),
            ("delta_s_r", self.delta_s_r),
            ("alpha", self.alpha),
            ("i0_a_pre", self.i0_a_pre),
            ("e_act_a", self.e_act_a),
            ("i0_c_pre", self.i0_c_pre),
            ("e_act_c", self.e_act_c),
            ("asr_ohm_pre", self.asr_ohm_pre),
            ("e_act_ohm", self.e_act_ohm),
            ("x_ref_h2", self.x_ref_h2),
            ("x_ref_h2o", self.x_ref_h2o),
            ("x_ref_o2", self.x_ref_o2),
            ("x_o2_air", self.x_o2_air),
            ("p_anode", self.p_anode),
            ("h2_ratio", self.h2_ratio),
            ("seg_area", self.seg_area),
            ("h_fur", self.h_fur),
            ("k_axial", self.k_axial),
            ("h_air", self.h_air),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(PhysicsError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("cathode_thickness", self.cathode_thickness), ("d_eff", self.d_eff)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(PhysicsError::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        let s = &self.solver;
        if !(s.damping > 0.0 && s.damping <= 1.0) || s.max_outer_iterations == 0 {
            return Err(PhysicsError::Config("invalid solver settings".into()));
        }
        Ok(())
    }

    /// Temperature-dependent standard potential, V.
    pub fn standard_potential(&self, t: f64) -> f64 {
        self.e_ref_0 - self.delta_s_r / (2.0 * FARADAY) * (t - self.t_ref)
    }

    /// Exchange current density at temperature `t`, A/m².
    pub fn exchange_current(&self, t: f64, electrode: Electrode) -> f64 {
        let (pre, e_act) = match electrode {
            Electrode::Anode => (self.i0_a_pre, self.e_act_a),
            Electrode::Cathode => (self.i0_c_pre, self.e_act_c),
        };
        pre * (-e_act / (GAS_CONSTANT * t)).exp()
    }

    /// Ohmic area-specific resistance at temperature `t`, Ω·m².
    pub fn asr_ohm(&self, t: f64) -> f64 {
        self.asr_ohm_pre * (self.e_act_ohm / (GAS_CONSTANT * t)).exp()
    }

    /// Drop in steam mole fraction across the cathode support per unit
    /// current density, m²/A.
    pub fn diffusion_coefficient(&self, t: f64) -> f64 {
        if self.cathode_thickness == 0.0 || self.d_eff == 0.0 {
            0.0
        } else {
            GAS_CONSTANT * t * self.cathode_thickness / (2.0 * FARADAY * P_ATM * self.d_eff)
        }
    }
}

/// Gas composition seen by both electrodes of a segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Composition {
    pub x_h2o: f64,
    pub x_h2: f64,
    pub x_o2: f64,
}

impl Composition {
    pub fn validate(&self) -> Result<(), PhysicsError> {
        check_fraction("x_h2o", self.x_h2o)?;
        check_fraction("x_h2", self.x_h2)?;
        check_fraction("x_o2", self.x_o2)
    }
}

fn check_fraction(name: &'static str, value: f64) -> Result<(), PhysicsError> {
    if value > 0.0 && value <= 1.0 {
        Ok(())
    } else {
        Err(PhysicsError::MoleFraction { name, value })
    }
}

fn check_temperature(t: f64) -> Result<(), PhysicsError> {
    if t.is_finite() && t > 0.0 {
        Ok(())
    } else {
        Err(PhysicsError::Temperature(t))
    }
}

/// Reversible electrolysis voltage: the anode reference potential minus the
/// cathode reference potential. A richer steam feed lowers it.
pub fn nernst_potential(
    t: f64,
    x_h2o: f64,
    x_h2: f64,
    x_o2: f64,
    p_anode: f64,
    params: &CellParameters,
) -> Result<f64, PhysicsError> {
    check_temperature(t)?;
    Composition { x_h2o, x_h2, x_o2 }.validate()?;
    if !(p_anode > 0.0) {
        return Err(PhysicsError::OperatingPoint(format!("anode pressure {p_anode} Pa")));
    }
    let rt_f = GAS_CONSTANT * t / FARADAY;
    let e_anode = params.standard_potential(t) + rt_f / 4.0 * (x_o2 * p_anode / P_ATM).ln();
    let e_cathode = rt_f / 2.0 * (x_h2o / x_h2).ln();
    Ok(e_anode - e_cathode)
}

/// Concentration-dependent Butler-Volmer current density (A/m²) at signed
/// overpotential `eta`. Anodic current is positive.
pub fn butler_volmer_current(
    eta: f64,
    t: f64,
    x: &Composition,
    params: &CellParameters,
    electrode: Electrode,
) -> Result<f64, PhysicsError> {
    check_temperature(t)?;
    x.validate()?;
    let f = params.alpha * FARADAY / (GAS_CONSTANT * t);
    let i0 = params.exchange_current(t, electrode);
    let (fwd, bwd) = concentration_factors(x, params, electrode);
    Ok(i0 * (fwd * (f * eta).exp() - bwd * (-f * eta).exp()))
}

fn concentration_factors(x: &Composition, p: &CellParameters, electrode: Electrode) -> (f64, f64) {
    match electrode {
        Electrode::Cathode => (x.x_h2 / p.x_ref_h2, x.x_h2o / p.x_ref_h2o),
        Electrode::Anode => (x.x_o2 / p.x_ref_o2, 1.0),
    }
}

/// Signed overpotential at which the electrode carries `i` (A/m², ≥ 0) of
/// electrolysis current: anodic on the anode, cathodic on the cathode.
pub fn electrode_overpotential(
    i: f64,
    t: f64,
    x: &Composition,
    params: &CellParameters,
    electrode: Electrode,
) -> f64 {
    let f = params.alpha * FARADAY / (GAS_CONSTANT * t);
    let i0 = params.exchange_current(t, electrode);
    let (fwd, bwd) = concentration_factors(x, params, electrode);
    let eq = 0.5 * (bwd / fwd).ln() / f;
    let loss = activation_loss_raw(i, i0, fwd, bwd, f);
    match electrode {
        Electrode::Anode => eq + loss,
        Electrode::Cathode => eq - loss,
    }
}

/// Activation loss (V, ≥ 0) measured from the electrode's zero-current
/// potential: `asinh(i / (2 i0 √(fwd·bwd))) / f`.
pub fn activation_loss(
    i: f64,
    t: f64,
    x: &Composition,
    params: &CellParameters,
    electrode: Electrode,
) -> f64 {
    let f = params.alpha * FARADAY / (GAS_CONSTANT * t);
    let i0 = params.exchange_current(t, electrode);
    let (fwd, bwd) = concentration_factors(x, params, electrode);
    activation_loss_raw(i, i0, fwd, bwd, f)
}

fn activation_loss_raw(i: f64, i0: f64, fwd: f64, bwd: f64, f: f64) -> f64 {
    (i / (2.0 * i0 * (fwd * bwd).sqrt())).asinh() / f
}

/// Voltage breakdown of one segment at a given current.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Polarization {
    /// Reversible voltage of the gas in the channel.
    pub e_ref: f64,
    /// Extra reversible voltage from steam depletion across the support.
    pub eta_conc: f64,
    pub eta_act_a: f64,
    pub eta_act_c: f64,
    pub v_ohm: f64,
}

impl Polarization {
    pub fn voltage(&self) -> f64 {
        self.e_ref + self.losses()
    }

    pub fn losses(&self) -> f64 {
        self.eta_conc + self.eta_act_a + self.eta_act_c + self.v_ohm
    }
}

/// Segment voltage needed to drive `current` (A) at temperature `t` and
/// channel composition `x`. Fails with a mole-fraction error once the
/// current exceeds the diffusion limit of the cathode support.
pub fn polarization(
    current: f64,
    t: f64,
    x: &Composition,
    params: &CellParameters,
) -> Result<Polarization, PhysicsError> {
    let e_ref = nernst_potential(t, x.x_h2o, x.x_h2, x.x_o2, params.p_anode, params)?;
    let i = current / params.seg_area;
    let shift = params.diffusion_coefficient(t) * i;
    let surface = Composition {
        x_h2o: x.x_h2o - shift,
        x_h2: (x.x_h2 + shift).min(1.0),
        x_o2: x.x_o2,
    };
    let e_surface = if shift == 0.0 {
        e_ref
    } else {
        nernst_potential(t, surface.x_h2o, surface.x_h2, surface.x_o2, params.p_anode, params)?
    };
    Ok(Polarization {
        e_ref,
        eta_conc: e_surface - e_ref,
        eta_act_a: activation_loss(i, t, &surface, params, Electrode::Anode),
        eta_act_c: activation_loss(i, t, &surface, params, Electrode::Cathode),
        v_ohm: i * params.asr_ohm(t),
    })
}

/// Residual used by the polarization root finders. Currents beyond the
/// diffusion or depletion limit map to a large positive value, which keeps
/// the residual monotone in the current.
const OUT_OF_DOMAIN: f64 = 1e3;

/// Current (A) one segment draws at voltage `v_cell`, temperature `t` (K) and
/// a fixed mean cathode composition. Zero at or below the reversible voltage.
pub fn segment_polarization(
    v_cell: f64,
    t: f64,
    x_h2o_mean: f64,
    x_h2_mean: f64,
    params: &CellParameters,
) -> Result<f64, PhysicsError> {
    if !(v_cell >= 0.0) {
        return Err(PhysicsError::OperatingPoint(format!("v_cell = {v_cell}")));
    }
    let x = Composition {
        x_h2o: x_h2o_mean,
        x_h2: x_h2_mean,
        x_o2: params.x_o2_air,
    };
    let e_ref = polarization(0.0, t, &x, params)?.e_ref;
    if v_cell <= e_ref {
        return Ok(0.0);
    }
    let g = |i: f64| {
        polarization(i, t, &x, params)
            .map(|p| p.voltage() - v_cell)
            .unwrap_or(OUT_OF_DOMAIN)
    };
    const I_LIMIT: f64 = 1e4;
    let mut hi = 1.0;
    while g(hi) < 0.0 {
        hi *= 2.0;
        if hi > I_LIMIT {
            return Err(PhysicsError::Bracket {
                segment: None,
                source: RootError::NoBracket {
                    lo: 0.0,
                    hi: I_LIMIT,
                    f_lo: e_ref - v_cell,
                    f_hi: g(I_LIMIT),
                },
            });
        }
    }
    roots::brent(g, 0.0, hi, Tolerance::default())
        .map_err(|source| PhysicsError::Bracket { segment: None, source })
}

/// Converged state of one segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentState {
    pub index: Segment,
    /// K.
    pub temperature: f64,
    pub x_h2o_in: f64,
    pub x_h2o_out: f64,
    /// A.
    pub current: f64,
    pub eta_conc: f64,
    pub eta_act_a: f64,
    pub eta_act_c: f64,
    pub v_ohm: f64,
    pub e_ref: f64,
    /// Heat released in the segment, W (negative when endothermic).
    pub q_heat: f64,
}

/// Full solution of [`simulate_cell`], with diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSolution {
    pub segments: [SegmentState; 3],
    pub response: CellResponse,
    pub outer_iterations: usize,
    /// Steam molar flow at the cathode inlet and outlet, mol/s.
    pub steam_in: f64,
    pub steam_out: f64,
    /// Heat balance residual of each segment at the returned state, W.
    pub thermal_residuals: [f64; 3],
}

impl CellSolution {
    pub fn temperatures(&self) -> [f64; 3] {
        self.segments.map(|s| s.temperature)
    }
}

struct Inlet {
    n_h2o: f64,
    n_total: f64,
}

fn segment_heat(current: f64, temperature: f64, pol: &Polarization, params: &CellParameters) -> f64 {
    current * pol.losses()
        - current * temperature * params.delta_s_r / (2.0 * FARADAY)
}

/// Solves one segment with its composition coupled to its own consumption.
fn solve_segment(
    segment: Segment,
    v_cell: f64,
    t: f64,
    inlet: &Inlet,
    params: &CellParameters,
) -> Result<SegmentState, PhysicsError> {
    let x_in = inlet.n_h2o / inlet.n_total;
    let i_max = 2.0 * FARADAY * inlet.n_h2o;
    let composition = |current: f64| {
        let x_out = (inlet.n_h2o - current / (2.0 * FARADAY)) / inlet.n_total;
        let x_h2o = params.closure.mean(x_in, x_out);
        (
            x_out,
            Composition {
                x_h2o,
                x_h2: 1.0 - x_h2o,
                x_o2: params.x_o2_air,
            },
        )
    };
    let voltage_at = |current: f64| -> Result<(f64, Polarization), PhysicsError> {
        let (x_out, x) = composition(current);
        let pol = polarization(current, t, &x, params)?;
        Ok((x_out, pol))
    };
    let state = |current: f64, x_out: f64, pol: Polarization| SegmentState {
        index: segment,
        temperature: t,
        x_h2o_in: x_in,
        x_h2o_out: x_out,
        current,
        eta_conc: pol.eta_conc,
        eta_act_a: pol.eta_act_a,
        eta_act_c: pol.eta_act_c,
        v_ohm: pol.v_ohm,
        e_ref: pol.e_ref,
        q_heat: segment_heat(current, t, &pol, params),
    };

    let (x_out0, pol0) = voltage_at(0.0)?;
    if v_cell <= pol0.voltage() {
        return Ok(state(0.0, x_out0, pol0));
    }
    // Largest current that leaves a positive steam fraction at the outlet.
    let i_top = i_max * (1.0 - 1e-12);
    if let Ok((_, pol)) = voltage_at(i_top) {
        let v_limit = pol.voltage();
        if v_cell >= v_limit {
            return Err(PhysicsError::Starvation { segment, v_limit });
        }
    }
    let g = |i: f64| {
        voltage_at(i)
            .map(|(_, p)| p.voltage() - v_cell)
            .unwrap_or(OUT_OF_DOMAIN)
    };
    let tol = Tolerance {
        x_abs: 1e-14,
        x_rel: 1e-15,
        max_iterations: 300,
    };
    let current = roots::brent(g, 0.0, i_top, tol).map_err(|source| PhysicsError::Bracket {
        segment: Some(segment),
        source,
    })?;
    let (x_out, pol) = voltage_at(current)?;
    Ok(state(current, x_out, pol))
}

fn validate_op(op: &OperatingPoint) -> Result<(), PhysicsError> {
    let ok = op.is_finite()
        && op.q_st > 0.0
        && op.q_air >= 0.0
        && op.v_cell >= 0.0
        && celsius_to_kelvin(op.t_fur) > 0.0;
    if ok {
        Ok(())
    } else {
        Err(PhysicsError::OperatingPoint(format!("{op:?}")))
    }
}

fn solve_segments(
    op: &OperatingPoint,
    temps: &[f64; 3],
    n_h2o0: f64,
    n_total: f64,
    params: &CellParameters,
) -> Result<[SegmentState; 3], PhysicsError> {
    let mut n_h2o = n_h2o0;
    let mut out = Vec::with_capacity(3);
    for seg in Segment::ALL {
        let inlet = Inlet { n_h2o, n_total };
        let s = solve_segment(seg, op.v_cell, temps[seg as usize], &inlet, params)?;
        n_h2o -= s.current / (2.0 * FARADAY);
        out.push(s);
    }
    Ok([out[0], out[1], out[2]])
}

/// Conductance from each segment to the furnace, W/K.
fn furnace_conductance(op: &OperatingPoint, params: &CellParameters) -> f64 {
    params.h_fur * params.seg_area + params.h_air * op.q_air
}

/// Steady segment temperatures for fixed electrochemical heat terms. The
/// reversible heat is proportional to T and moves to the left-hand side.
fn thermal_solve(
    segs: &[SegmentState; 3],
    t_fur: f64,
    g_fur: f64,
    params: &CellParameters,
) -> [f64; 3] {
    let k = params.k_axial;
    let mut diag = [0.0; 3];
    let mut rhs = [0.0; 3];
    for (j, s) in segs.iter().enumerate() {
        let neighbours = if j == 1 { 2.0 } else { 1.0 };
        let rev = s.current * params.delta_s_r / (2.0 * FARADAY);
        diag[j] = g_fur + rev + k * neighbours;
        rhs[j] = s.current * (s.eta_conc + s.eta_act_a + s.eta_act_c + s.v_ohm) + g_fur * t_fur;
    }
    // Tridiagonal with off-diagonals -k (Thomas algorithm).
    let c0 = -k / diag[0];
    let d0 = rhs[0] / diag[0];
    let m1 = diag[1] + k * c0;
    let c1 = -k / m1;
    let d1 = (rhs[1] + k * d0) / m1;
    let m2 = diag[2] + k * c1;
    let t2 = (rhs[2] + k * d1) / m2;
    let t1 = d1 - c1 * t2;
    let t0 = d0 - c0 * t1;
    [t0, t1, t2]
}

fn thermal_residuals(segs: &[SegmentState; 3], t_fur: f64, g_fur: f64, k: f64) -> [f64; 3] {
    let t = segs.map(|s| s.temperature);
    let mut r = [0.0; 3];
    for j in 0..3 {
        let mut cond = 0.0;
        if j > 0 {
            cond += k * (t[j - 1] - t[j]);
        }
        if j < 2 {
            cond += k * (t[j + 1] - t[j]);
        }
        r[j] = segs[j].q_heat + cond - g_fur * (t[j] - t_fur);
    }
    r
}

/// Simulates the cell at `op`, starting the temperature iteration from the
/// furnace temperature.
pub fn simulate_cell(op: &OperatingPoint, params: &CellParameters) -> Result<CellResponse, PhysicsError> {
    simulate_cell_detailed(op, params, None).map(|s| s.response)
}

/// Simulates the cell at `op`. `initial_temperatures` (K) warm-starts the
/// outer fixed-point iteration.
pub fn simulate_cell_detailed(
    op: &OperatingPoint,
    params: &CellParameters,
    initial_temperatures: Option<[f64; 3]>,
) -> Result<CellSolution, PhysicsError> {
    validate_op(op)?;
    let t_fur = celsius_to_kelvin(op.t_fur);
    let n_h2o0 = sccm_to_mol_per_s(op.q_st).map_err(|e| PhysicsError::OperatingPoint(e.to_string()))?;
    let n_total = n_h2o0 * (1.0 + params.h2_ratio);
    let g_fur = furnace_conductance(op, params);
    let settings = params.solver;

    let mut temps = initial_temperatures.unwrap_or([t_fur; 3]);
    let mut prev_currents: Option<[f64; 3]> = None;
    let (mut d_i, mut d_t) = (f64::INFINITY, f64::INFINITY);
    for iteration in 1..=settings.max_outer_iterations {
        let segs = solve_segments(op, &temps, n_h2o0, n_total, params)?;
        let currents = segs.map(|s| s.current);
        let target = thermal_solve(&segs, t_fur, g_fur, params);
        d_t = (0..3).map(|j| (target[j] - temps[j]).abs()).fold(0.0, f64::max);
        d_i = prev_currents
            .map(|p| (0..3).map(|j| (currents[j] - p[j]).abs()).fold(0.0, f64::max))
            .unwrap_or(f64::INFINITY);
        if d_t < settings.temperature_tol && (d_i < settings.current_tol || iteration == 1 && d_t == 0.0) {
            let steam_out = n_h2o0 - currents.iter().sum::<f64>() / (2.0 * FARADAY);
            let t_c = segs.map(|s| kelvin_to_celsius(s.temperature));
            let response = CellResponse {
                t_max: t_c.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                t_min: t_c.iter().copied().fold(f64::INFINITY, f64::min),
                i_up: currents[0],
                i_mid: currents[1],
                i_down: currents[2],
            };
            return Ok(CellSolution {
                thermal_residuals: thermal_residuals(&segs, t_fur, g_fur, params.k_axial),
                segments: segs,
                response,
                outer_iterations: iteration,
                steam_in: n_h2o0,
                steam_out,
            });
        }
        for j in 0..3 {
            temps[j] += settings.damping * (target[j] - temps[j]);
        }
        prev_currents = Some(currents);
    }
    Err(PhysicsError::NonConvergence {
        iterations: settings.max_outer_iterations,
        current_change: d_i,
        temperature_change: d_t,
    })
}

/// Simulates the cell along an ascending voltage grid, warm-starting each
/// point from the previous converged temperatures. Failed points are
/// reported in place.
pub fn iv_sweep(
    op_base: &OperatingPoint,
    v_grid: &[f64],
    params: &CellParameters,
) -> Result<Vec<Result<CellResponse, PhysicsError>>, PhysicsError> {
    if v_grid.windows(2).any(|w| !(w[1] >= w[0])) {
        return Err(PhysicsError::UnsortedGrid);
    }
    let mut warm: Option<[f64; 3]> = None;
    Ok(v_grid
        .iter()
        .map(|&v| {
            let op = OperatingPoint { v_cell: v, ..*op_base };
            let sol = simulate_cell_detailed(&op, params, warm);
            if let Ok(s) = &sol {
                warm = Some(s.temperatures());
            }
            sol.map(|s| s.response)
        })
        .collect())
}

/// Named laboratory conditions of the segmented-cell experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// 660 °C, 400 sccm air, 40 sccm steam + 40 sccm hydrogen.
    Condition1,
    /// 660 °C, 400 sccm air, 120 sccm steam + 120 sccm hydrogen.
    Condition2,
}

impl Scenario {
    pub fn operating_point(self, v_cell: f64) -> OperatingPoint {
        match self {
            Scenario::Condition1 => OperatingPoint::new(660.0, 400.0, 40.0, v_cell),
            Scenario::Condition2 => OperatingPoint::new(660.0, 400.0, 120.0, v_cell),
        }
    }

    pub fn from_name(name: &str) -> Option<Scenario> {
        match name {
            "condition1" => Some(Scenario::Condition1),
            "condition2" => Some(Scenario::Condition2),
            _ => None,
        }
    }
}

/// Reversible voltage of the fresh inlet gas, V. Below this the cell draws no
/// electrolysis current.
pub fn open_circuit_voltage(op: &OperatingPoint, params: &CellParameters) -> Result<f64, PhysicsError> {
    let x_h2o = 1.0 / (1.0 + params.h2_ratio);
    nernst_potential(
        celsius_to_kelvin(op.t_fur),
        x_h2o,
        1.0 - x_h2o,
        params.x_o2_air,
        params.p_anode,
        params,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params() -> CellParameters {
        CellParameters::default()
    }

    #[test]
    fn bundled_parameters_parse_and_round_trip() {
        let p = params();
        assert_relative_eq!(p.seg_area, 0.048 * 0.015 / 3.0, max_relative = 1e-12);
        let again = CellParameters::from_toml(&p.to_toml()).unwrap();
        assert_eq!(again, p);
    }

    #[test]
    fn bad_parameter_files_rejected() {
        let p = params();
        let mut text = p.to_toml().replace("version = 1", "version = 7");
        assert!(CellParameters::from_toml(&text).is_err());
        text = p.to_toml().replace("alpha = 0.5", "alpha = -0.5");
        assert!(matches!(CellParameters::from_toml(&text), Err(PhysicsError::Config(_))));
        assert!(CellParameters::from_toml("version = 1\nbogus = 3").is_err());
    }

    #[test]
    fn nernst_reduces_to_standard_potential() {
        let p = params();
        let t = 950.0;
        let e = nernst_potential(t, 0.3, 0.3, 1.0, P_ATM, &p).unwrap();
        assert_eq!(e, p.standard_potential(t));
    }

    #[test]
    fn nernst_oxygen_term_at_660c() {
        // (R * 933 / 4F) * ln(0.21) = -0.03137 V
        let p = params();
        let e = nernst_potential(933.0, 0.5, 0.5, 0.21, P_ATM, &p).unwrap();
        assert!((e - p.standard_potential(933.0) + 0.0314).abs() < 1e-4);
    }

    #[test]
    fn nernst_rises_as_steam_is_consumed() {
        let p = params();
        let rich = nernst_potential(933.0, 0.5, 0.5, 0.21, P_ATM, &p).unwrap();
        let lean = nernst_potential(933.0, 0.2, 0.5, 0.21, P_ATM, &p).unwrap();
        assert!(lean > rich);
    }

    #[test]
    fn nernst_rejects_bad_fractions() {
        let p = params();
        assert!(matches!(
            nernst_potential(933.0, 0.0, 0.5, 0.21, P_ATM, &p),
            Err(PhysicsError::MoleFraction { name: "x_h2o", .. })
        ));
        assert!(nernst_potential(933.0, 0.5, -0.1, 0.21, P_ATM, &p).is_err());
        assert!(nernst_potential(-5.0, 0.5, 0.5, 0.21, P_ATM, &p).is_err());
    }

    #[test]
    fn butler_volmer_properties() {
        let p = params();
        let reference = Composition {
            x_h2o: p.x_ref_h2o,
            x_h2: p.x_ref_h2,
            x_o2: p.x_ref_o2,
        };
        for e in [Electrode::Anode, Electrode::Cathode] {
            assert_eq!(butler_volmer_current(0.0, 1000.0, &reference, &p, e).unwrap(), 0.0);
            let mut last = f64::NEG_INFINITY;
            for k in -20..=20 {
                let i = butler_volmer_current(k as f64 * 0.01, 1000.0, &reference, &p, e).unwrap();
                assert!(i > last);
                last = i;
            }
            let mut doubled = p.clone();
            doubled.i0_a_pre *= 2.0;
            doubled.i0_c_pre *= 2.0;
            let x = Composition { x_h2o: 0.3, x_h2: 0.7, x_o2: 0.21 };
            let a = butler_volmer_current(0.07, 980.0, &x, &p, e).unwrap();
            let b = butler_volmer_current(0.07, 980.0, &x, &doubled, e).unwrap();
            assert_relative_eq!(b, 2.0 * a, max_relative = 1e-14);
        }
    }

    #[test]
    fn overpotential_inverts_butler_volmer() {
        let p = params();
        let x = Composition { x_h2o: 0.23, x_h2: 0.77, x_o2: 0.21 };
        for i in [0.0, 10.0, 3e3, 2e4] {
            let eta_a = electrode_overpotential(i, 990.0, &x, &p, Electrode::Anode);
            let eta_c = electrode_overpotential(i, 990.0, &x, &p, Electrode::Cathode);
            let ia = butler_volmer_current(eta_a, 990.0, &x, &p, Electrode::Anode).unwrap();
            let ic = butler_volmer_current(eta_c, 990.0, &x, &p, Electrode::Cathode).unwrap();
            assert!((ia - i).abs() <= 1e-9 * i.max(1.0), "{ia} vs {i}");
            assert!((ic + i).abs() <= 1e-9 * i.max(1.0), "{ic} vs {i}");
            let eq = electrode_overpotential(0.0, 990.0, &x, &p, Electrode::Cathode);
            assert_relative_eq!(
                eq - eta_c,
                activation_loss(i, 990.0, &x, &p, Electrode::Cathode),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn segment_polarization_open_circuit_and_monotone() {
        let p = params();
        let t = 950.0;
        let e = nernst_potential(t, 0.4, 0.6, p.x_o2_air, p.p_anode, &p).unwrap();
        assert_eq!(segment_polarization(e, t, 0.4, 0.6, &p).unwrap(), 0.0);
        assert_eq!(segment_polarization(e - 0.1, t, 0.4, 0.6, &p).unwrap(), 0.0);
        let mut last = 0.0;
        for k in 1..=14 {
            let v = e + 0.05 * k as f64;
            let i = segment_polarization(v, t, 0.4, 0.6, &p).unwrap();
            assert!(i > last);
            last = i;
        }
        assert!(segment_polarization(-1.0, t, 0.4, 0.6, &p).is_err());
    }

    #[test]
    fn segment_polarization_matches_bisection_oracle() {
        // Independent oracle: bisection on the raw voltage balance.
        let p = params();
        let t = 980.0;
        let v = 1.35;
        let k = GAS_CONSTANT * t * p.cathode_thickness / (2.0 * FARADAY * P_ATM * p.d_eff);
        let oracle = |x_h2o: f64| {
            let f = |i: f64| {
                let j = i / p.seg_area;
                let x = Composition {
                    x_h2o: x_h2o - k * j,
                    x_h2: 1.0 - x_h2o + k * j,
                    x_o2: p.x_o2_air,
                };
                let e = nernst_potential(t, x.x_h2o, x.x_h2, x.x_o2, p.p_anode, &p).unwrap();
                let eta_a = electrode_overpotential(j, t, &x, &p, Electrode::Anode)
                    - electrode_overpotential(0.0, t, &x, &p, Electrode::Anode);
                let eta_c = electrode_overpotential(0.0, t, &x, &p, Electrode::Cathode)
                    - electrode_overpotential(j, t, &x, &p, Electrode::Cathode);
                e + eta_a + eta_c + j * p.asr_ohm(t) - v
            };
            let i_lim = x_h2o / k * p.seg_area * (1.0 - 1e-12);
            roots::bisect(f, 0.0, i_lim, Tolerance::default()).unwrap()
        };
        let rich_oracle = oracle(0.45);
        let lean_oracle = oracle(0.15);
        assert!(lean_oracle < rich_oracle);
        let rich = segment_polarization(v, t, 0.45, 0.55, &p).unwrap();
        let lean = segment_polarization(v, t, 0.15, 0.85, &p).unwrap();
        assert_relative_eq!(rich, rich_oracle, max_relative = 1e-9);
        assert_relative_eq!(lean, lean_oracle, max_relative = 1e-9);
    }

    #[test]
    fn closures() {
        assert_eq!(Closure::Arithmetic.mean(0.5, 0.1), 0.3);
        assert_eq!(Closure::Outlet.mean(0.5, 0.1), 0.1);
        let lm = Closure::LogMean.mean(0.5, 0.1);
        assert_relative_eq!(lm, 0.4 / 5f64.ln(), max_relative = 1e-14);
        assert_eq!(Closure::LogMean.mean(0.5, 0.5), 0.5);
    }

    #[test]
    fn open_circuit_cell_is_isothermal_and_idle() {
        let p = params();
        let mut op = OperatingPoint::new(700.0, 100.0, 60.0, 0.0);
        op.v_cell = open_circuit_voltage(&op, &p).unwrap();
        let sol = simulate_cell_detailed(&op, &p, None).unwrap();
        for s in &sol.segments {
            assert!(s.current.abs() < 1e-12);
            assert!((s.temperature - celsius_to_kelvin(700.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn faraday_bookkeeping_and_thermal_residual() {
        let p = params();
        let op = OperatingPoint::new(720.0, 100.0, 76.6, 1.42);
        let sol = simulate_cell_detailed(&op, &p, None).unwrap();
        let i_tot = sol.response.i_tot();
        let consumed = (sol.steam_in - sol.steam_out) * 2.0 * FARADAY;
        assert!((consumed - i_tot).abs() <= 1e-9 * i_tot);
        for r in sol.thermal_residuals {
            assert!(r.abs() < 1e-6, "residual {r}");
        }
        let s = sol.segments;
        assert!(s[0].current >= s[1].current && s[1].current >= s[2].current);
        assert!(s[0].x_h2o_out <= s[0].x_h2o_in);
        assert_relative_eq!(s[1].x_h2o_in, s[0].x_h2o_out, max_relative = 1e-12);
    }

    #[test]
    fn heat_sign_follows_thermoneutral_voltage() {
        // Thermoneutral voltage at the inlet composition is roughly
        // e_ref_0 + t_ref * dS / 2F = 0.998 + 0.2866 = 1.285 V.
        let p = params();
        let hot = simulate_cell(&OperatingPoint::new(700.0, 100.0, 100.0, 1.55), &p).unwrap();
        assert!(hot.t_max > 700.0, "{hot:?}");
        let cold = simulate_cell(&OperatingPoint::new(700.0, 100.0, 100.0, 1.12), &p).unwrap();
        assert!(cold.t_max < 700.0, "{cold:?}");
    }

    #[test]
    fn iv_sweep_contracts() {
        let p = params();
        let op = Scenario::Condition2.operating_point(1.0);
        let single = iv_sweep(&op, &[1.3], &p).unwrap();
        assert_eq!(single.len(), 1);
        let direct = simulate_cell(&Scenario::Condition2.operating_point(1.3), &p).unwrap();
        let swept = single[0].as_ref().unwrap();
        assert!((swept.i_tot() - direct.i_tot()).abs() < 1e-7);
        assert!(matches!(iv_sweep(&op, &[1.3, 1.2], &p), Err(PhysicsError::UnsortedGrid)));
    }

    #[test]
    fn arithmetic_closure_can_starve() {
        let mut p = params();
        p.closure = Closure::Arithmetic;
        let op = OperatingPoint::new(750.0, 100.0, 20.0, 1.7);
        match simulate_cell(&op, &p) {
            Err(PhysicsError::Starvation { .. }) => {}
            other => panic!("expected starvation, got {other:?}"),
        }
    }

    #[test]
    fn invalid_operating_points() {
        let p = params();
        assert!(simulate_cell(&OperatingPoint::new(700.0, 100.0, 0.0, 1.3), &p).is_err());
        assert!(simulate_cell(&OperatingPoint::new(f64::NAN, 100.0, 50.0, 1.3), &p).is_err());
        assert_eq!(Scenario::from_name("condition3"), None);
    }

    #[test]
    fn support_diffusion_caps_segment_current() {
        let p = params();
        let mut free = p.clone();
        free.d_eff = 0.0;
        let t = 1000.0;
        let limited = segment_polarization(1.6, t, 0.2, 0.8, &p).unwrap();
        let unlimited = segment_polarization(1.6, t, 0.2, 0.8, &free).unwrap();
        assert!(limited < unlimited);
        let i_lim = 0.2 / p.diffusion_coefficient(t) * p.seg_area;
        let near = segment_polarization(50.0, t, 0.2, 0.8, &p).unwrap();
        assert!(near < i_lim && near > 0.99 * i_lim, "{near} vs {i_lim}");
        assert!(polarization(1.01 * i_lim, t, &Composition { x_h2o: 0.2, x_h2: 0.8, x_o2: 0.21 }, &p).is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::test_runner::Config::with_cases(64))]
        #[test]
        fn in_domain_points_conserve_charge_and_order_segments(
            t in 600.0f64..750.0, q_air in 40.0f64..300.0,
            q_st in 20.0f64..150.0, v in 1.0f64..1.7,
        ) {
            let p = params();
            let op = OperatingPoint::new(t, q_air, q_st, v);
            let sol = simulate_cell_detailed(&op, &p, None).unwrap();
            let i_tot = sol.response.i_tot();
            let consumed = (sol.steam_in - sol.steam_out) * 2.0 * FARADAY;
            proptest::prop_assert!((consumed - i_tot).abs() <= 1e-9 * i_tot.max(1e-12));
            proptest::prop_assert!(sol.response.is_consistent());
            let su = i_tot / (2.0 * FARADAY * sol.steam_in);
            if su >= 0.3 {
                let r = sol.response;
                proptest::prop_assert!(r.i_up >= r.i_mid && r.i_mid >= r.i_down, "{r:?}");
            }
        }
    }
}
