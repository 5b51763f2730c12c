//! LINMAP selection of one operating point per Pareto front.
//!
//! Objectives are min-max normalised over the front members. The chosen
//! point minimises the weighted Euclidean distance to the ideal corner
//! (1 for maximised objectives, 0 for minimised ones).

use std::fmt::Write as _;

use thiserror::Error;

use crate::optimize::{Objective, OptimizeError, ParetoFront};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecisionError {
    #[error("weights must be six finite non-negative numbers, not all zero (got {0})")]
    Weights(String),
    #[error("front at {p_ele} W has no members")]
    EmptyFront { p_ele: f64 },
}

/// Per-objective weights in [`Objective::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightVector([f64; 6]);

impl WeightVector {
    pub fn new(w: [f64; 6]) -> Result<WeightVector, DecisionError> {
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) || w.iter().all(|x| *x == 0.0) {
            return Err(DecisionError::Weights(format!("{w:?}")));
        }
        Ok(WeightVector(w))
    }

    /// Equal weights.
    pub fn case1() -> WeightVector {
        WeightVector([1.0; 6])
    }

    /// Steam utilisation weighted five times the others.
    pub fn case2() -> WeightVector {
        let mut w = [1.0; 6];
        w[Objective::Su as usize] = 5.0;
        WeightVector(w)
    }

    /// Parses `"w1,w2,w3,w4,w5,w6"`.
    pub fn parse(s: &str) -> Result<WeightVector, DecisionError> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 6 {
            return Err(DecisionError::Weights(s.to_string()));
        }
        let mut w = [0.0; 6];
        for (slot, p) in w.iter_mut().zip(&parts) {
            *slot = p.parse().map_err(|_| DecisionError::Weights(s.to_string()))?;
        }
        WeightVector::new(w)
    }

    pub fn get(&self, o: Objective) -> f64 {
        self.0[o as usize]
    }

    pub fn as_array(&self) -> [f64; 6] {
        self.0
    }
}

/// Min-max normalisation per objective. A column with no spread maps to 0.5.
pub fn linmap_normalize(objectives: &[[f64; 6]]) -> Vec<[f64; 6]> {
    let (lo, hi) = envelope(objectives);
    objectives
        .iter()
        .map(|o| {
            std::array::from_fn(|k| {
                let span = hi[k] - lo[k];
                if span > 0.0 {
                    (o[k] - lo[k]) / span
                } else {
                    0.5
                }
            })
        })
        .collect()
}

fn envelope(objectives: &[[f64; 6]]) -> ([f64; 6], [f64; 6]) {
    let mut lo = [f64::INFINITY; 6];
    let mut hi = [f64::NEG_INFINITY; 6];
    for o in objectives {
        for k in 0..6 {
            lo[k] = lo[k].min(o[k]);
            hi[k] = hi[k].max(o[k]);
        }
    }
    (lo, hi)
}

fn ideal() -> [f64; 6] {
    Objective::ALL.map(|o| if o.maximize() { 1.0 } else { 0.0 })
}

/// Weighted distance of every normalised point to the ideal corner.
pub fn linmap_distances(normalized: &[[f64; 6]], w: &WeightVector) -> Vec<f64> {
    let ideal = ideal();
    normalized
        .iter()
        .map(|f| (0..6).map(|k| w.0[k] * (f[k] - ideal[k]).powi(2)).sum::<f64>().sqrt())
        .collect()
}

/// The LINMAP choice on one front, with the front's best and worst values
/// for context.
#[derive(Debug, Clone, PartialEq)]
pub struct LinmapResult {
    pub p_ele: f64,
    /// Flat index into `front.solutions`.
    pub index: usize,
    pub t_index: usize,
    pub su_index: usize,
    pub q_st: f64,
    pub distance: f64,
    pub objectives: [f64; 6],
    pub normalized: [f64; 6],
    /// Best value of each objective over the front members.
    pub best: [f64; 6],
    pub worst: [f64; 6],
}

impl LinmapResult {
    /// `|chosen − best| / |worst − best|` per objective; 0 where the front
    /// has no spread.
    pub fn relative_distance(&self) -> [f64; 6] {
        std::array::from_fn(|k| {
            let span = (self.worst[k] - self.best[k]).abs();
            if span > 0.0 {
                (self.objectives[k] - self.best[k]).abs() / span
            } else {
                0.0
            }
        })
    }

    pub fn get(&self, o: Objective) -> f64 {
        self.objectives[o as usize]
    }
}

/// Relative tolerance under which two distances count as tied.
const TIE_TOL: f64 = 1e-12;

/// Picks the member closest to the ideal point. Ties go to the lower
/// utilisation index, then the lower temperature index.
pub fn linmap_select(front: &ParetoFront, w: &WeightVector) -> Result<LinmapResult, DecisionError> {
    let members: Vec<(usize, [f64; 6])> = front
        .solutions
        .iter()
        .enumerate()
        .filter(|(_, s)| s.feasible && !s.dominated)
        .filter_map(|(i, s)| s.objectives().map(|o| (i, o)))
        .collect();
    if members.is_empty() {
        return Err(DecisionError::EmptyFront { p_ele: front.p_ele });
    }
    let objs: Vec<[f64; 6]> = members.iter().map(|m| m.1).collect();
    let normalized = linmap_normalize(&objs);
    let d = linmap_distances(&normalized, w);
    let key = |m: usize| {
        let s = &front.solutions[members[m].0];
        (s.su_index, s.t_index)
    };
    let mut pick = 0;
    for m in 1..members.len() {
        let tie = (d[m] - d[pick]).abs() <= TIE_TOL * d[pick].max(1.0);
        if (!tie && d[m] < d[pick]) || (tie && key(m) < key(pick)) {
            pick = m;
        }
    }
    let (lo, hi) = envelope(&objs);
    let oriented = |max: bool, a: f64, b: f64| if max { b } else { a };
    let best = std::array::from_fn(|k| oriented(Objective::ALL[k].maximize(), lo[k], hi[k]));
    let worst = std::array::from_fn(|k| oriented(Objective::ALL[k].maximize(), hi[k], lo[k]));
    let s = &front.solutions[members[pick].0];
    Ok(LinmapResult {
        p_ele: front.p_ele,
        index: members[pick].0,
        t_index: s.t_index,
        su_index: s.su_index,
        q_st: s.q_st,
        distance: d[pick],
        objectives: objs[pick],
        normalized: normalized[pick],
        best,
        worst,
    })
}

/// LINMAP choices across a power sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingCurve {
    pub weights: WeightVector,
    pub points: Vec<LinmapResult>,
    /// Powers without a front, with the reason.
    pub skipped: Vec<(f64, String)>,
}

pub fn operating_curve(
    sweep: &[(f64, Result<ParetoFront, OptimizeError>)],
    w: &WeightVector,
) -> OperatingCurve {
    let mut points = Vec::new();
    let mut skipped = Vec::new();
    for (p, f) in sweep {
        match f.as_ref().map_err(|e| e.to_string()).and_then(|f| linmap_select(f, w).map_err(|e| e.to_string())) {
            Ok(r) => points.push(r),
            Err(e) => skipped.push((*p, e)),
        }
    }
    OperatingCurve {
        weights: *w,
        points,
        skipped,
    }
}

pub const CURVE_HEADER: &str = "p_ele_W,t_fur_C,su,q_st_sccm,v_cell_V,i_tot_A,ih_i,ih_t_C,d";
pub const ENVELOPE_HEADER: &str = "p_ele_W,bound,ih_i,ih_t_C,v_cell_V,su,t_fur_C,i_tot_A";

impl OperatingCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CURVE_HEADER);
        s.push('\n');
        for r in &self.points {
            let g = |o| r.get(o);
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.p_ele,
                g(Objective::TFur),
                g(Objective::Su),
                r.q_st,
                g(Objective::VCell),
                g(Objective::ITot),
                g(Objective::IhI),
                g(Objective::IhT),
                r.distance
            )
            .unwrap();
        }
        s
    }

    /// Best and worst member values per power, objectives in weight order.
    pub fn envelope_csv(&self) -> String {
        let mut s = String::from(ENVELOPE_HEADER);
        s.push('\n');
        for r in &self.points {
            for (name, v) in [("best", &r.best), ("worst", &r.worst)] {
                writeln!(s, "{},{name},{},{},{},{},{},{}", r.p_ele, v[0], v[1], v[2], v[3], v[4], v[5]).unwrap();
            }
        }
        s
    }
}
