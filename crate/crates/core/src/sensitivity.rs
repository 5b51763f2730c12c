//! Variance-based (Sobol) sensitivity indices by Saltelli's quasi-Monte
//! Carlo scheme.
//!
//! The two base matrices come from one 8-dimensional Sobol sequence
//! (dimensions 1-4 for `A`, 5-8 for `B`) with Joe-Kuo direction numbers and a
//! seeded random digital shift. First-order indices use Saltelli (2010),
//! total effects use Jansen's estimator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::indices::performance_indices;
use crate::par;
use crate::surrogate::SurrogateEnsemble;
use crate::types::{Input, InputRanges, OperatingPoint};

const BITS: usize = 32;

/// `(s, a, m_1..m_s)` for dimensions 2-8 (dimension 1 is van der Corput).
const DIRECTIONS: [(u32, u32, &[u32]); 7] = [
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
];

pub const MAX_DIMS: usize = 8;
pub const MIN_BASE_SAMPLES: usize = 256;
const BOOTSTRAP_RESAMPLES: usize = 200;
const MIN_VARIANCE: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SensitivityError {
    #[error("constant function: output variance {0:e} below 1e-14")]
    ConstantFunction(f64),
    #[error("n_base must be at least {MIN_BASE_SAMPLES} (got {0})")]
    TooFewSamples(usize),
    #[error("function returned a non-finite value at {0:?}")]
    NonFinite([f64; 4]),
    #[error("sampling ranges must be finite with lo < hi")]
    InvalidRanges,
}

/// Gray-code Sobol sequence in up to eight dimensions.
#[derive(Debug, Clone)]
pub struct SobolSequence {
    dims: usize,
    v: Vec<[u32; BITS]>,
    state: Vec<u32>,
    shift: Vec<u32>,
    index: u64,
}

impl SobolSequence {
    /// Unscrambled sequence starting at the origin.
    pub fn new(dims: usize) -> SobolSequence {
        assert!((1..=MAX_DIMS).contains(&dims), "1..=8 dimensions supported");
        let mut v = Vec::with_capacity(dims);
        let mut first = [0u32; BITS];
        for (k, slot) in first.iter_mut().enumerate() {
            *slot = 1 << (BITS - 1 - k);
        }
        v.push(first);
        for &(s, a, m) in DIRECTIONS.iter().take(dims - 1) {
            let s = s as usize;
            let mut d = [0u32; BITS];
            for k in 0..s {
                d[k] = m[k] << (BITS - 1 - k);
            }
            for k in s..BITS {
                let mut x = d[k - s] ^ (d[k - s] >> s);
                for l in 1..s {
                    if (a >> (s - 1 - l)) & 1 == 1 {
                        x ^= d[k - l];
                    }
                }
                d[k] = x;
            }
            v.push(d);
        }
        SobolSequence {
            dims,
            v,
            state: vec![0; dims],
            shift: vec![0; dims],
            index: 0,
        }
    }

    /// Sequence XOR-ed with a random digital shift drawn from `seed`.
    pub fn scrambled(dims: usize, seed: u64) -> SobolSequence {
        let mut s = SobolSequence::new(dims);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        s.shift = (0..dims).map(|_| rng.gen()).collect();
        s
    }

    /// Next point as 32-bit integer coordinates.
    pub fn next_raw(&mut self) -> Vec<u32> {
        let out: Vec<u32> = self.state.iter().zip(&self.shift).map(|(x, s)| x ^ s).collect();
        let c = (!self.index).trailing_zeros() as usize;
        assert!(c < BITS, "Sobol sequence exhausted");
        for (x, d) in self.state.iter_mut().zip(&self.v) {
            *x ^= d[c];
        }
        self.index += 1;
        out
    }

    /// Next point in `[0, 1)^dims`.
    pub fn next_point(&mut self) -> Vec<f64> {
        self.next_raw()
            .into_iter()
            .map(|x| x as f64 / (1u64 << BITS) as f64)
            .collect()
    }

    pub fn dims(&self) -> usize {
        self.dims
    }
}

/// Pairwise (cascade) summation; the result does not depend on how the
/// values were produced, only on their order.
pub fn pairwise_sum(x: &[f64]) -> f64 {
    if x.len() <= 8 {
        x.iter().sum()
    } else {
        let (a, b) = x.split_at(x.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

/// Sobol indices for four inputs. Raw estimates are kept, so small
/// negative values are possible.
#[derive(Debug, Clone, PartialEq)]
pub struct SobolResult {
    pub first_order: [f64; 4],
    pub total: [f64; 4],
    /// Bootstrap 95% half-widths of the estimates.
    pub first_order_ci: [f64; 4],
    pub total_ci: [f64; 4],
    pub n_base: usize,
    pub variance: f64,
}

struct Evaluations {
    fa: Vec<f64>,
    fb: Vec<f64>,
    fab: [Vec<f64>; 4],
}

fn estimate(e: &Evaluations, idx: &[usize]) -> Option<([f64; 4], [f64; 4], f64)> {
    let n = idx.len() as f64;
    let pooled: Vec<f64> = idx.iter().flat_map(|&j| [e.fa[j], e.fb[j]]).collect();
    let mean = pairwise_sum(&pooled) / pooled.len() as f64;
    let dev: Vec<f64> = pooled.iter().map(|y| (y - mean) * (y - mean)).collect();
    let var = pairwise_sum(&dev) / pooled.len() as f64;
    if !(var >= MIN_VARIANCE) {
        return None;
    }
    let mut s = [0.0; 4];
    let mut st = [0.0; 4];
    for i in 0..4 {
        let fab = &e.fab[i];
        let vi: Vec<f64> = idx.iter().map(|&j| e.fb[j] * (fab[j] - e.fa[j])).collect();
        let vti: Vec<f64> = idx
            .iter()
            .map(|&j| {
                let d = e.fa[j] - fab[j];
                d * d
            })
            .collect();
        s[i] = pairwise_sum(&vi) / n / var;
        st[i] = 0.5 * pairwise_sum(&vti) / n / var;
    }
    Some((s, st, var))
}

/// First-order and total-effect indices of `f` over `ranges`.
pub fn sobol_indices<F>(
    f: F,
    ranges: &InputRanges,
    n_base: usize,
    seed: u64,
) -> Result<SobolResult, SensitivityError>
where
    F: Fn(&[f64; 4]) -> f64 + Sync + Send,
{
    if n_base < MIN_BASE_SAMPLES {
        return Err(SensitivityError::TooFewSamples(n_base));
    }
    if !ranges.is_valid() {
        return Err(SensitivityError::InvalidRanges);
    }
    if !n_base.is_power_of_two() {
        log::warn!("n_base = {n_base} is not a power of two; balance properties of the Sobol sequence are lost");
    }
    let r = ranges.to_array();
    let mut seq = SobolSequence::scrambled(8, seed);
    let mut a = Vec::with_capacity(n_base);
    let mut b = Vec::with_capacity(n_base);
    for _ in 0..n_base {
        let u = seq.next_point();
        a.push(std::array::from_fn::<f64, 4, _>(|k| r[k].lerp(u[k])));
        b.push(std::array::from_fn::<f64, 4, _>(|k| r[k].lerp(u[k + 4])));
    }
    // Rows: A, B, then A with column i taken from B for i = 0..4.
    let mut rows = Vec::with_capacity(6 * n_base);
    rows.extend_from_slice(&a);
    rows.extend_from_slice(&b);
    for i in 0..4 {
        rows.extend(a.iter().zip(&b).map(|(ra, rb)| {
            let mut x = *ra;
            x[i] = rb[i];
            x
        }));
    }
    let y = par::map(&rows, |x| f(x));
    if let Some(k) = y.iter().position(|v| !v.is_finite()) {
        return Err(SensitivityError::NonFinite(rows[k]));
    }
    let chunk = |k: usize| y[k * n_base..(k + 1) * n_base].to_vec();
    let e = Evaluations {
        fa: chunk(0),
        fb: chunk(1),
        fab: [chunk(2), chunk(3), chunk(4), chunk(5)],
    };
    let all: Vec<usize> = (0..n_base).collect();
    let (s, st, var) = match estimate(&e, &all) {
        Some(v) => v,
        None => {
            let m = pairwise_sum(&y) / y.len() as f64;
            let dev: Vec<f64> = y.iter().map(|v| (v - m) * (v - m)).collect();
            return Err(SensitivityError::ConstantFunction(pairwise_sum(&dev) / y.len() as f64));
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb007_57a9);
    let mut boot_s = vec![[0.0; 4]; 0];
    let mut boot_st = vec![[0.0; 4]; 0];
    for _ in 0..BOOTSTRAP_RESAMPLES {
        let idx: Vec<usize> = (0..n_base).map(|_| rng.gen_range(0..n_base)).collect();
        if let Some((bs, bst, _)) = estimate(&e, &idx) {
            boot_s.push(bs);
            boot_st.push(bst);
        }
    }
    let half_width = |samples: &[[f64; 4]], i: usize| {
        if samples.len() < 2 {
            return f64::NAN;
        }
        let v: Vec<f64> = samples.iter().map(|s| s[i]).collect();
        let m = pairwise_sum(&v) / v.len() as f64;
        let d: Vec<f64> = v.iter().map(|x| (x - m) * (x - m)).collect();
        1.96 * (pairwise_sum(&d) / (v.len() - 1) as f64).sqrt()
    };
    Ok(SobolResult {
        first_order: s,
        total: st,
        first_order_ci: std::array::from_fn(|i| half_width(&boot_s, i)),
        total_ci: std::array::from_fn(|i| half_width(&boot_st, i)),
        n_base,
        variance: var,
    })
}

/// Performance indices analysed by [`index_report`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Su,
    IhI,
    IhT,
}

impl Target {
    pub const ALL: [Target; 3] = [Target::Su, Target::IhI, Target::IhT];

    pub fn name(self) -> &'static str {
        match self {
            Target::Su => "SU",
            Target::IhI => "IH_I",
            Target::IhT => "IH_T",
        }
    }

    pub fn from_name(s: &str) -> Option<Target> {
        Target::ALL.into_iter().find(|t| t.name().eq_ignore_ascii_case(s))
    }
}

/// Value of `target` at `op` predicted by the ensemble.
///
/// Near open circuit the predicted currents are small compared with the
/// surrogate error, and `1 − i_down/i_up` becomes heavy-tailed. IH_I is
/// therefore projected onto its physical range [0, 1].
pub fn target_value(ens: &SurrogateEnsemble, target: Target, op: &OperatingPoint) -> f64 {
    let r = ens.predict(op);
    let Ok(p) = performance_indices(op, &r) else {
        return f64::NAN;
    };
    match target {
        Target::Su => p.su,
        Target::IhI => {
            if p.open_circuit {
                0.0
            } else {
                p.ih_i.clamp(0.0, 1.0)
            }
        }
        Target::IhT => p.ih_t,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexReport {
    pub rows: Vec<(Target, SobolResult)>,
}

/// Sobol indices of each target over `ranges`.
pub fn index_report(
    ens: &SurrogateEnsemble,
    targets: &[Target],
    ranges: &InputRanges,
    n_base: usize,
    seed: u64,
) -> Result<IndexReport, SensitivityError> {
    let mut rows = Vec::with_capacity(targets.len());
    for &t in targets {
        let res = sobol_indices(
            |x| target_value(ens, t, &OperatingPoint::from_array(*x)),
            ranges,
            n_base,
            seed,
        )?;
        rows.push((t, res));
    }
    Ok(IndexReport { rows })
}

impl IndexReport {
    pub fn get(&self, target: Target) -> Option<&SobolResult> {
        self.rows.iter().find(|(t, _)| *t == target).map(|(_, r)| r)
    }

    /// Two rows per target (`S_i`, `ST_i`) with one column per input in
    /// the order T_fur, Q_air, Q_st, V_cell. Negative estimates are clamped
    /// to zero here; the raw values stay in the result.
    pub fn to_csv(&self) -> String {
        let order = [Input::TFur, Input::QAir, Input::QSt, Input::VCell];
        let mut s = String::from("target,index,T_fur,Q_air,Q_st,V_cell\n");
        for (t, r) in &self.rows {
            for (label, v) in [("S_i", &r.first_order), ("ST_i", &r.total)] {
                s.push_str(t.name());
                s.push(',');
                s.push_str(label);
                for i in order {
                    s.push_str(&format!(",{}", v[i as usize].max(0.0)));
                }
                s.push('\n');
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Range;

    fn unit() -> InputRanges {
        let u = Range::new(0.0, 1.0);
        InputRanges {
            t_fur: u,
            q_air: u,
            q_st: u,
            v_cell: u,
        }
    }

    #[test]
    fn matches_reference_implementation() {
        // Unscrambled points from an independent implementation (scipy
        // qmc.Sobol, Joe-Kuo 6.21201), as integers scaled by 2^30.
        let expected: [(usize, [u64; 8]); 9] = [
            (1, [536870912; 8]),
            (2, [805306368, 268435456, 268435456, 268435456, 805306368, 805306368, 268435456, 805306368]),
            (3, [268435456, 805306368, 805306368, 805306368, 268435456, 268435456, 805306368, 268435456]),
            (5, [939524096, 939524096, 134217728, 402653184, 939524096, 671088640, 939524096, 402653184]),
            (7, [134217728, 671088640, 402653184, 134217728, 134217728, 402653184, 671088640, 671088640]),
            (13, [872415232, 738197504, 872415232, 67108864, 469762048, 1006632960, 603979776, 603979776]),
            (31, [33554432, 570425344, 973078528, 1040187392, 1040187392, 838860800, 369098752, 570425344]),
            (1000, [235929600, 103809024, 556793856, 726663168, 300941312, 974127104, 49283072, 965738496]),
            (4095, [262144, 1010565120, 358875136, 968097792, 1009516544, 84672512, 1019478016, 419692544]),
        ];
        let mut seq = SobolSequence::new(8);
        let pts: Vec<Vec<u32>> = (0..4096).map(|_| seq.next_raw()).collect();
        assert!(pts[0].iter().all(|&x| x == 0));
        for (i, want) in expected {
            let got: Vec<u64> = pts[i].iter().map(|&x| (x >> 2) as u64).collect();
            assert_eq!(got, want.to_vec(), "point {i}");
        }
    }

    #[test]
    fn digital_shift_keeps_strata_balanced() {
        let mut seq = SobolSequence::scrambled(8, 42);
        let mut counts = [[0usize; 16]; 8];
        for _ in 0..256 {
            for (d, x) in seq.next_point().into_iter().enumerate() {
                counts[d][(x * 16.0) as usize] += 1;
            }
        }
        assert!(counts.iter().flatten().all(|&c| c == 16));
    }

    #[test]
    fn pairwise_sum_is_exact_on_integers() {
        let v: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&v), 500500.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    #[test]
    fn additive_function() {
        // Closed form: x1 + x2 on unit ranges splits the variance evenly.
        let r = sobol_indices(|x| x[0] + x[1], &unit(), 4096, 1).unwrap();
        let want = [0.5, 0.5, 0.0, 0.0];
        for i in 0..4 {
            assert!((r.first_order[i] - want[i]).abs() <= 0.02, "{r:?}");
            assert!((r.total[i] - want[i]).abs() <= 0.02, "{r:?}");
        }
    }

    #[test]
    fn constant_function_and_bad_requests() {
        assert!(matches!(
            sobol_indices(|_| 3.0, &unit(), 256, 0),
            Err(SensitivityError::ConstantFunction(_))
        ));
        assert_eq!(
            sobol_indices(|x| x[0], &unit(), 128, 0).unwrap_err(),
            SensitivityError::TooFewSamples(128)
        );
        assert!(matches!(
            sobol_indices(|x| 1.0 / (x[0] - x[0]), &unit(), 256, 0),
            Err(SensitivityError::NonFinite(_))
        ));
    }

    #[test]
    fn deterministic_given_seed() {
        let f = |x: &[f64; 4]| x[0] * x[1] + x[2].sin();
        let a = sobol_indices(f, &unit(), 512, 9).unwrap();
        let b = sobol_indices(f, &unit(), 512, 9).unwrap();
        assert_eq!(a, b);
    }
}
