//! Grid decomposition of the six-objective operating problem at fixed
//! electrolysis power, Pareto filtering and power sweeps.
//!
//! At every `(t_fur, su)` grid node the two equality constraints
//! `v_cell · i_tot = p_ele` and `SU = su` fix the remaining decision
//! variables `(v_cell, q_st)`; air flow is held at [`Q_AIR_FIXED`].

use std::fmt::Write as _;

use thiserror::Error;

use crate::indices::{performance_indices, PerformanceIndices};
use crate::par;
use crate::physics::{simulate_cell, CellParameters};
use crate::roots::{self, Tolerance};
use crate::surrogate::SurrogateEnsemble;
use crate::types::{CellResponse, InputRanges, OperatingPoint, Range};

pub const Q_AIR_FIXED: f64 = 100.0;
pub const T_FUR_BOUNDS: Range = InputRanges::DOMAIN.t_fur;
pub const SU_BOUNDS: Range = Range::new(0.5, 0.9);
pub const V_BOUNDS: Range = InputRanges::DOMAIN.v_cell;
pub const Q_ST_BOUNDS: Range = InputRanges::DOMAIN.q_st;

/// Tolerance on objective comparisons in the dominance filter.
pub const DOMINANCE_TOL: f64 = 1e-9;
/// Relative residual accepted for the two equality constraints.
pub const CONSTRAINT_TOL: f64 = 1e-6;

const NEWTON_MAX_ITER: usize = 100;
const FD_FRACTION: f64 = 1e-4;
const SU_SCAN_POINTS: usize = 36;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimizeError {
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("electrolysis power must be positive and finite (got {0})")]
    Power(f64),
    #[error("power list is empty")]
    EmptyPowerList,
    #[error("power list must be strictly ascending")]
    UnsortedPowerList,
    #[error("no feasible grid node at {p_ele} W")]
    EmptyFront { p_ele: f64 },
}

/// Anything that maps an operating point to the five cell outputs.
pub trait ResponseModel: Sync {
    fn response(&self, op: &OperatingPoint) -> Option<CellResponse>;
}

impl ResponseModel for SurrogateEnsemble {
    fn response(&self, op: &OperatingPoint) -> Option<CellResponse> {
        Some(self.predict(op))
    }
}

/// The reduced-order cell model itself, for checks without a surrogate.
#[derive(Debug, Clone, Copy)]
pub struct PhysicsModel<'a>(pub &'a CellParameters);

impl ResponseModel for PhysicsModel<'_> {
    fn response(&self, op: &OperatingPoint) -> Option<CellResponse> {
        simulate_cell(op, self.0).ok()
    }
}

fn evaluate<M: ResponseModel + ?Sized>(
    model: &M,
    t_fur: f64,
    q_st: f64,
    v_cell: f64,
) -> Option<(CellResponse, PerformanceIndices)> {
    let op = OperatingPoint::new(t_fur, Q_AIR_FIXED, q_st, v_cell);
    let r = model.response(&op)?;
    let p = performance_indices(&op, &r).ok()?;
    (p.su.is_finite() && p.i_tot.is_finite()).then_some((r, p))
}

/// The six objectives, in the order used for weights and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Objective {
    IhI = 0,
    IhT = 1,
    VCell = 2,
    Su = 3,
    TFur = 4,
    ITot = 5,
}

impl Objective {
    pub const ALL: [Objective; 6] = [
        Objective::IhI,
        Objective::IhT,
        Objective::VCell,
        Objective::Su,
        Objective::TFur,
        Objective::ITot,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Objective::IhI => "ih_i",
            Objective::IhT => "ih_t",
            Objective::VCell => "v_cell",
            Objective::Su => "su",
            Objective::TFur => "t_fur",
            Objective::ITot => "i_tot",
        }
    }

    /// Steam utilisation and total current are maximised, the rest
    /// minimised.
    pub fn maximize(self) -> bool {
        matches!(self, Objective::Su | Objective::ITot)
    }
}

/// Levels of furnace temperature and steam utilisation.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub t_levels: Vec<f64>,
    pub su_levels: Vec<f64>,
}

impl Default for GridSpec {
    /// 16 temperatures (600-750 °C, step 10) by 17 utilisations (0.5-0.9,
    /// step 0.025).
    fn default() -> Self {
        GridSpec::uniform(16, 17).expect("default grid is valid")
    }
}

impl GridSpec {
    /// Evenly spaced levels spanning the full bounds.
    pub fn uniform(n_t: usize, n_su: usize) -> Result<GridSpec, OptimizeError> {
        let lin = |r: Range, n: usize| -> Vec<f64> {
            if n == 1 {
                vec![r.lo]
            } else {
                (0..n).map(|k| r.lo + r.width() * k as f64 / (n - 1) as f64).collect()
            }
        };
        let g = GridSpec {
            t_levels: lin(T_FUR_BOUNDS, n_t),
            su_levels: lin(SU_BOUNDS, n_su),
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), OptimizeError> {
        let check = |name: &str, v: &[f64], b: Range| -> Result<(), OptimizeError> {
            if v.is_empty() {
                return Err(OptimizeError::Grid(format!("no {name} levels")));
            }
            if v.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(OptimizeError::Grid(format!("{name} levels must be strictly increasing")));
            }
            if v.iter().any(|&x| !(b.contains(x))) {
                return Err(OptimizeError::Grid(format!("{name} levels must lie in [{}, {}]", b.lo, b.hi)));
            }
            Ok(())
        };
        check("t_fur", &self.t_levels, T_FUR_BOUNDS)?;
        check("su", &self.su_levels, SU_BOUNDS)
    }

    pub fn len(&self) -> usize {
        self.t_levels.len() * self.su_levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index of node `(t_index, su_index)`; temperature is the outer
    /// axis.
    pub fn index(&self, t_index: usize, su_index: usize) -> usize {
        t_index * self.su_levels.len() + su_index
    }
}

/// Why a voltage could not be found for a utilisation target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SuSolve {
    Solved(f64),
    /// The target is below the utilisation reached at the lowest voltage.
    InfeasibleLow { su_at_min: f64 },
    /// The target is above the utilisation reached at the highest voltage.
    InfeasibleHigh { su_at_max: f64 },
    ModelFailure,
}

impl SuSolve {
    pub fn voltage(self) -> Option<f64> {
        match self {
            SuSolve::Solved(v) => Some(v),
            _ => None,
        }
    }
}

/// Cell voltage in [1.0, 1.7] V at which the model reaches `su_target`
/// with furnace temperature `t_fur` and steam flow `q_st`. A coarse scan
/// locates the first sign change, so the smallest root is returned when
/// utilisation is not monotone in voltage.
pub fn solve_vcell_for_su<M: ResponseModel + ?Sized>(
    model: &M,
    t_fur: f64,
    q_st: f64,
    su_target: f64,
) -> SuSolve {
    let g = |v: f64| evaluate(model, t_fur, q_st, v).map(|(_, p)| p.su - su_target);
    let grid: Vec<f64> = (0..SU_SCAN_POINTS)
        .map(|k| V_BOUNDS.lo + V_BOUNDS.width() * k as f64 / (SU_SCAN_POINTS - 1) as f64)
        .collect();
    let mut values = Vec::with_capacity(grid.len());
    for &v in &grid {
        match g(v) {
            Some(x) => values.push(x),
            None => return SuSolve::ModelFailure,
        }
    }
    if values[0] > 0.0 {
        return SuSolve::InfeasibleLow {
            su_at_min: values[0] + su_target,
        };
    }
    if values[0] == 0.0 {
        return SuSolve::Solved(grid[0]);
    }
    let changes = values.windows(2).filter(|w| (w[0] < 0.0) != (w[1] < 0.0)).count();
    let Some(k) = values.iter().position(|&x| x >= 0.0) else {
        return SuSolve::InfeasibleHigh {
            su_at_max: values[values.len() - 1] + su_target,
        };
    };
    if changes > 1 {
        log::warn!(
            "SU is not monotone in v_cell at t_fur = {t_fur}, q_st = {q_st}; taking the smallest root"
        );
    }
    let tol = Tolerance {
        x_abs: 1e-13,
        x_rel: 1e-15,
        max_iterations: 200,
    };
    match roots::brent(|v| g(v).unwrap_or(f64::NAN), grid[k - 1], grid[k], tol) {
        Ok(v) => SuSolve::Solved(v),
        Err(_) => SuSolve::ModelFailure,
    }
}

/// One node of a [`contour_scan`].
#[derive(Debug, Clone, PartialEq)]
pub struct ContourPoint {
    pub t_fur: f64,
    pub q_st: f64,
    pub su: f64,
    pub status: SuSolve,
    /// NaN when the node is infeasible.
    pub v_cell: f64,
    pub ih_t: f64,
    pub ih_i: f64,
    pub q_h2: f64,
}

/// Solves for the voltage at every `(t_fur, q_st, su)` node. Infeasible
/// nodes are kept with NaN values.
pub fn contour_scan<M: ResponseModel + ?Sized>(
    model: &M,
    t_levels: &[f64],
    q_levels: &[f64],
    su_levels: &[f64],
) -> Vec<ContourPoint> {
    let nodes: Vec<(f64, f64, f64)> = t_levels
        .iter()
        .flat_map(|&t| {
            q_levels
                .iter()
                .flat_map(move |&q| su_levels.iter().map(move |&s| (t, q, s)))
        })
        .collect();
    par::map(&nodes, |&(t_fur, q_st, su)| {
        let status = solve_vcell_for_su(model, t_fur, q_st, su);
        let solved = status.voltage().and_then(|v| evaluate(model, t_fur, q_st, v).map(|(_, p)| (v, p)));
        let (v_cell, ih_t, ih_i, q_h2) = match solved {
            Some((v, p)) => (v, p.ih_t, p.ih_i, p.q_h2),
            None => (f64::NAN, f64::NAN, f64::NAN, f64::NAN),
        };
        ContourPoint {
            t_fur,
            q_st,
            su,
            status,
            v_cell,
            ih_t,
            ih_i,
            q_h2,
        }
    })
}

pub fn contour_csv(points: &[ContourPoint]) -> String {
    let mut s = String::from("t_fur_C,q_st_sccm,su,v_cell_V,ih_t_C,ih_i,q_h2_sccm,status\n");
    for p in points {
        let status = match p.status {
            SuSolve::Solved(_) => "solved",
            SuSolve::InfeasibleLow { .. } => "infeasible-low",
            SuSolve::InfeasibleHigh { .. } => "infeasible-high",
            SuSolve::ModelFailure => "model-failure",
        };
        writeln!(
            s,
            "{},{},{},{},{},{},{},{status}",
            p.t_fur,
            p.q_st,
            p.su,
            opt(p.v_cell),
            opt(p.ih_t),
            opt(p.ih_i),
            opt(p.q_h2)
        )
        .unwrap();
    }
    s
}

fn opt(x: f64) -> String {
    if x.is_finite() {
        x.to_string()
    } else {
        String::new()
    }
}

/// Constrained-optimal operating point at one grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct ParetoSolution {
    pub t_index: usize,
    pub su_index: usize,
    pub t_fur: f64,
    /// Utilisation level of the node (the constraint target).
    pub su_target: f64,
    pub p_ele: f64,
    pub q_air: f64,
    /// NaN when infeasible.
    pub v_cell: f64,
    pub q_st: f64,
    pub response: Option<CellResponse>,
    pub indices: Option<PerformanceIndices>,
    pub feasible: bool,
    pub dominated: bool,
    /// `(v_cell · i_tot − p_ele) / p_ele`.
    pub power_residual: f64,
    /// `SU − su_target`.
    pub su_residual: f64,
    pub diagnostics: String,
}

impl ParetoSolution {
    /// Objective values in [`Objective::ALL`] order; `None` when infeasible.
    pub fn objectives(&self) -> Option<[f64; 6]> {
        if !self.feasible {
            return None;
        }
        let p = self.indices.as_ref()?;
        Some([p.ih_i, p.ih_t, self.v_cell, p.su, self.t_fur, p.i_tot])
    }

    fn infeasible(t_fur: f64, su: f64, p_ele: f64, diagnostics: String) -> ParetoSolution {
        ParetoSolution {
            t_index: 0,
            su_index: 0,
            t_fur,
            su_target: su,
            p_ele,
            q_air: Q_AIR_FIXED,
            v_cell: f64::NAN,
            q_st: f64::NAN,
            response: None,
            indices: None,
            feasible: false,
            dominated: false,
            power_residual: f64::NAN,
            su_residual: f64::NAN,
            diagnostics,
        }
    }
}

struct Constraints<'a, M: ?Sized> {
    model: &'a M,
    t_fur: f64,
    su: f64,
    p_ele: f64,
}

impl<M: ResponseModel + ?Sized> Constraints<'_, M> {
    fn residual(&self, x: [f64; 2]) -> Option<[f64; 2]> {
        let (_, p) = evaluate(self.model, self.t_fur, x[1], x[0])?;
        Some([(x[0] * p.i_tot - self.p_ele) / self.p_ele, p.su - self.su])
    }
}

fn project(x: [f64; 2]) -> [f64; 2] {
    [
        x[0].clamp(V_BOUNDS.lo, V_BOUNDS.hi),
        x[1].clamp(Q_ST_BOUNDS.lo, Q_ST_BOUNDS.hi),
    ]
}

fn norm(r: [f64; 2]) -> f64 {
    r[0].hypot(r[1])
}

/// Damped Newton on the two constraints with a central-difference
/// Jacobian. Returns the final point and its residual.
fn newton<M: ResponseModel + ?Sized>(c: &Constraints<'_, M>, start: [f64; 2]) -> Option<([f64; 2], [f64; 2])> {
    let h = [FD_FRACTION * V_BOUNDS.width(), FD_FRACTION * Q_ST_BOUNDS.width()];
    let mut x = start;
    let mut r = c.residual(x)?;
    for _ in 0..NEWTON_MAX_ITER {
        if r[0].abs() <= 1e-13 && r[1].abs() <= 1e-13 {
            break;
        }
        let mut jac = [[0.0; 2]; 2];
        for k in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[k] += h[k];
            xm[k] -= h[k];
            let rp = c.residual(xp)?;
            let rm = c.residual(xm)?;
            for i in 0..2 {
                jac[i][k] = (rp[i] - rm[i]) / (2.0 * h[k]);
            }
        }
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        if !det.is_finite() || det == 0.0 {
            break;
        }
        let step = [
            -(jac[1][1] * r[0] - jac[0][1] * r[1]) / det,
            -(-jac[1][0] * r[0] + jac[0][0] * r[1]) / det,
        ];
        let base = norm(r);
        let mut accepted = false;
        let mut alpha = 1.0;
        for _ in 0..40 {
            let cand = project([x[0] + alpha * step[0], x[1] + alpha * step[1]]);
            if let Some(rc) = c.residual(cand) {
                if norm(rc) < base {
                    x = cand;
                    r = rc;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Some((x, r))
}

/// Solves `v_cell · i_tot = p_ele` and `SU = su` for `(v_cell, q_st)`
/// inside the box, starting Newton from its four corners. When several
/// starts converge to different roots the lowest voltage wins.
pub fn solve_constrained<M: ResponseModel + ?Sized>(
    model: &M,
    t_fur: f64,
    su: f64,
    p_ele: f64,
) -> ParetoSolution {
    let c = Constraints { model, t_fur, su, p_ele };
    let corners = [
        [V_BOUNDS.lo, Q_ST_BOUNDS.lo],
        [V_BOUNDS.lo, Q_ST_BOUNDS.hi],
        [V_BOUNDS.hi, Q_ST_BOUNDS.lo],
        [V_BOUNDS.hi, Q_ST_BOUNDS.hi],
    ];
    let mut best: Option<([f64; 2], [f64; 2])> = None;
    let mut closest = f64::INFINITY;
    for start in corners {
        let Some((x, r)) = newton(&c, start) else { continue };
        closest = closest.min(norm(r));
        let converged = r[0].abs() <= CONSTRAINT_TOL && r[1].abs() <= CONSTRAINT_TOL;
        if converged && best.is_none_or(|(b, _)| x[0] < b[0]) {
            best = Some((x, r));
        }
    }
    let Some((x, r)) = best else {
        return ParetoSolution::infeasible(
            t_fur,
            su,
            p_ele,
            format!("no in-bounds root from 4 starts (smallest residual norm {closest:e})"),
        );
    };
    let (response, indices) = evaluate(model, t_fur, x[1], x[0]).expect("evaluated during the solve");
    ParetoSolution {
        t_index: 0,
        su_index: 0,
        t_fur,
        su_target: su,
        p_ele,
        q_air: Q_AIR_FIXED,
        v_cell: x[0],
        q_st: x[1],
        response: Some(response),
        indices: Some(indices),
        feasible: true,
        dominated: false,
        power_residual: r[0],
        su_residual: r[1],
        diagnostics: String::new(),
    }
}

/// Objectives of a feasible solution, all oriented for minimisation.
fn minimised(s: &ParetoSolution) -> Option<[f64; 6]> {
    let o = s.objectives()?;
    Some(std::array::from_fn(|k| if Objective::ALL[k].maximize() { -o[k] } else { o[k] }))
}

/// `a` dominates `b`: no worse on every objective and strictly better on
/// at least one, both beyond [`DOMINANCE_TOL`].
pub fn dominates(a: &[f64; 6], b: &[f64; 6]) -> bool {
    let no_worse = a.iter().zip(b).all(|(x, y)| *x <= *y + DOMINANCE_TOL);
    let better = a.iter().zip(b).any(|(x, y)| *x < *y - DOMINANCE_TOL);
    no_worse && better
}

/// Constrained solutions over a grid at one power.
#[derive(Debug, Clone, PartialEq)]
pub struct ParetoFront {
    pub p_ele: f64,
    pub grid: GridSpec,
    /// One per node, temperature-major (see [`GridSpec::index`]).
    pub solutions: Vec<ParetoSolution>,
    /// `(dominated, dominating)` flat indices found by the filter.
    pub dominated_log: Vec<(usize, usize)>,
}

impl ParetoFront {
    pub fn get(&self, t_index: usize, su_index: usize) -> &ParetoSolution {
        &self.solutions[self.grid.index(t_index, su_index)]
    }

    /// Feasible, non-dominated solutions in grid order.
    pub fn members(&self) -> impl Iterator<Item = &ParetoSolution> + '_ {
        self.solutions.iter().filter(|s| s.feasible && !s.dominated)
    }

    /// Re-runs the dominance check on the members; returns the indices it
    /// would remove. Empty for a filtered front.
    pub fn recheck_dominance(&self) -> Vec<usize> {
        let members: Vec<(usize, [f64; 6])> = self
            .solutions
            .iter()
            .enumerate()
            .filter(|(_, s)| s.feasible && !s.dominated)
            .filter_map(|(i, s)| minimised(s).map(|o| (i, o)))
            .collect();
        members
            .iter()
            .filter(|(_, o)| members.iter().any(|(_, p)| dominates(p, o)))
            .map(|(i, _)| *i)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(FRONT_HEADER);
        s.push('\n');
        self.write_rows(&mut s);
        s
    }

    fn write_rows(&self, s: &mut String) {
        for sol in &self.solutions {
            let (i_tot, ih_i, ih_t) = sol
                .indices
                .map(|p| (p.i_tot, p.ih_i, p.ih_t))
                .unwrap_or((f64::NAN, f64::NAN, f64::NAN));
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                self.p_ele,
                sol.t_fur,
                sol.su_target,
                opt(sol.q_st),
                opt(sol.v_cell),
                opt(i_tot),
                opt(ih_i),
                opt(ih_t),
                sol.feasible,
                sol.dominated
            )
            .unwrap();
        }
    }
}

pub const FRONT_HEADER: &str = "p_ele_W,t_fur_C,su,q_st_sccm,v_cell_V,i_tot_A,ih_i,ih_t_C,feasible,dominated";

/// All fronts of a sweep in one CSV.
pub fn fronts_csv<'a>(fronts: impl IntoIterator<Item = &'a ParetoFront>) -> String {
    let mut s = String::from(FRONT_HEADER);
    s.push('\n');
    for f in fronts {
        f.write_rows(&mut s);
    }
    s
}

/// Solves every grid node at `p_ele` and flags dominated solutions.
pub fn build_front<M: ResponseModel + ?Sized>(
    model: &M,
    p_ele: f64,
    grid: &GridSpec,
) -> Result<ParetoFront, OptimizeError> {
    if !(p_ele.is_finite() && p_ele > 0.0) {
        return Err(OptimizeError::Power(p_ele));
    }
    grid.validate()?;
    let nodes: Vec<(usize, usize)> = (0..grid.t_levels.len())
        .flat_map(|i| (0..grid.su_levels.len()).map(move |j| (i, j)))
        .collect();
    let mut solutions = par::map(&nodes, |&(i, j)| {
        let mut s = solve_constrained(model, grid.t_levels[i], grid.su_levels[j], p_ele);
        s.t_index = i;
        s.su_index = j;
        s
    });
    let objectives: Vec<Option<[f64; 6]>> = solutions.iter().map(minimised).collect();
    if objectives.iter().all(Option::is_none) {
        return Err(OptimizeError::EmptyFront { p_ele });
    }
    let mut dominated_log = Vec::new();
    for (i, oi) in objectives.iter().enumerate() {
        let Some(oi) = oi else { continue };
        let by = objectives
            .iter()
            .enumerate()
            .find(|(_, oj)| oj.as_ref().is_some_and(|oj| dominates(oj, oi)))
            .map(|(j, _)| j);
        if let Some(j) = by {
            dominated_log.push((i, j));
        }
    }
    for &(i, j) in &dominated_log {
        solutions[i].dominated = true;
        log::debug!("{p_ele} W: node {i} dominated by node {j}");
    }
    Ok(ParetoFront {
        p_ele,
        grid: grid.clone(),
        solutions,
        dominated_log,
    })
}

/// The 2-27 W sweep in 1 W steps.
pub fn default_power_list() -> Vec<f64> {
    (2..=27).map(f64::from).collect()
}

/// Evenly stepped power list from `min` to `max` inclusive.
pub fn power_list(min: f64, max: f64, step: f64) -> Result<Vec<f64>, OptimizeError> {
    if !(min > 0.0 && max >= min && step > 0.0 && max.is_finite()) {
        return Err(OptimizeError::Power(if min > 0.0 { step } else { min }));
    }
    let n = ((max - min) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| min + step * k as f64).collect())
}

/// One entry per requested power, in order.
pub type SweepResult = Vec<(f64, Result<ParetoFront, OptimizeError>)>;

/// Builds one front per power. Failures at individual powers are logged and
/// returned in place.
pub fn sweep_power<M: ResponseModel + ?Sized>(
    model: &M,
    p_list: &[f64],
    grid: &GridSpec,
) -> Result<SweepResult, OptimizeError> {
    if p_list.is_empty() {
        return Err(OptimizeError::EmptyPowerList);
    }
    if p_list.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(OptimizeError::UnsortedPowerList);
    }
    grid.validate()?;
    Ok(p_list
        .iter()
        .map(|&p| {
            let f = build_front(model, p, grid);
            if let Err(e) = &f {
                log::warn!("{p} W: {e}");
            }
            (p, f)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Analytic stand-in: current grows linearly above 1 V and with
    /// temperature, split 40/33/27 over the segments.
    struct Toy;

    impl ResponseModel for Toy {
        fn response(&self, op: &OperatingPoint) -> Option<CellResponse> {
            let i = (op.v_cell - 1.0) * (op.t_fur - 500.0) * 0.08 * (op.q_st / (op.q_st + 30.0));
            Some(CellResponse {
                t_max: op.t_fur + 2.0 * (op.v_cell - 1.2),
                t_min: op.t_fur,
                i_up: 0.40 * i,
                i_mid: 0.33 * i,
                i_down: 0.27 * i,
            })
        }
    }

    #[test]
    fn default_grid_shape() {
        let g = GridSpec::default();
        assert_eq!((g.t_levels.len(), g.su_levels.len()), (16, 17));
        assert!((g.t_levels[1] - 610.0).abs() < 1e-12);
        assert!((g.su_levels[1] - 0.525).abs() < 1e-12);
        assert_eq!(*g.su_levels.last().unwrap(), 0.9);
        let bad = GridSpec {
            t_levels: vec![600.0, 600.0],
            su_levels: vec![0.5],
        };
        assert!(bad.validate().is_err());
        let out = GridSpec {
            t_levels: vec![800.0],
            su_levels: vec![0.5],
        };
        assert!(out.validate().is_err());
    }

    #[test]
    fn su_solve_bounds_and_monotonicity() {
        let m = Toy;
        let low = solve_vcell_for_su(&m, 700.0, 60.0, 1e-9);
        assert!(matches!(low, SuSolve::InfeasibleLow { .. } | SuSolve::Solved(_)));
        assert!(matches!(solve_vcell_for_su(&m, 700.0, 150.0, 0.99), SuSolve::InfeasibleHigh { .. }));
        let mut last = 0.0;
        for su in [0.1, 0.2, 0.3, 0.4] {
            let v = solve_vcell_for_su(&m, 700.0, 60.0, su).voltage().unwrap();
            assert!(v > last);
            last = v;
        }
        assert!(contour_scan(&m, &[], &[60.0], &[0.5]).is_empty());
    }

    #[test]
    fn constrained_solution_meets_both_constraints() {
        let s = solve_constrained(&Toy, 700.0, 0.7, 4.0);
        assert!(s.feasible, "{}", s.diagnostics);
        let p = s.indices.unwrap();
        assert!((s.v_cell * p.i_tot - 4.0).abs() <= 1e-6 * 4.0);
        assert!((p.su - 0.7).abs() <= 1e-6);
        assert!(V_BOUNDS.contains(s.v_cell) && Q_ST_BOUNDS.contains(s.q_st));
    }

    #[test]
    fn unreachable_power_is_infeasible() {
        let s = solve_constrained(&Toy, 600.0, 0.9, 500.0);
        assert!(!s.feasible);
        assert!(s.objectives().is_none());
        assert!(!s.diagnostics.is_empty());
    }

    #[test]
    fn dominance_relation() {
        let a = [0.1, 1.0, 1.3, -0.7, 700.0, -7.0];
        let mut b = a;
        assert!(!dominates(&a, &b));
        b[0] += 0.01;
        assert!(dominates(&a, &b));
        assert!(!dominates(&b, &a));
        b[1] -= 0.01;
        assert!(!dominates(&a, &b) && !dominates(&b, &a));
    }

    #[test]
    fn power_lists() {
        assert_eq!(default_power_list().len(), 26);
        assert_eq!(power_list(2.0, 27.0, 1.0).unwrap(), default_power_list());
        assert_eq!(power_list(1.0, 2.0, 0.5).unwrap(), vec![1.0, 1.5, 2.0]);
        assert!(matches!(sweep_power(&Toy, &[], &GridSpec::default()), Err(OptimizeError::EmptyPowerList)));
        assert!(matches!(
            sweep_power(&Toy, &[3.0, 2.0], &GridSpec::default()),
            Err(OptimizeError::UnsortedPowerList)
        ));
    }
}
