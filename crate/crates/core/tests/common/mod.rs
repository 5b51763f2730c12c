//! Oracles shared by the integration targets.
#![allow(dead_code)]

use std::f64::consts::PI;

use soec_core::types::{InputRanges, Range};

pub const ISHIGAMI_A: f64 = 7.0;
pub const ISHIGAMI_B: f64 = 0.1;

pub fn ishigami(x: &[f64; 4]) -> f64 {
    x[0].sin() + ISHIGAMI_A * x[1].sin().powi(2) + ISHIGAMI_B * x[2].powi(4) * x[0].sin()
}

/// Ishigami on the first three inputs; the fourth is inert.
pub fn ishigami_ranges() -> InputRanges {
    InputRanges {
        t_fur: Range::new(-PI, PI),
        q_air: Range::new(-PI, PI),
        q_st: Range::new(-PI, PI),
        v_cell: Range::new(0.0, 1.0),
    }
}

/// Composite Simpson nodes and weights for the mean over [−π, π].
fn simpson(n: usize) -> Vec<(f64, f64)> {
    assert!(n.is_multiple_of(2));
    let h = 2.0 * PI / n as f64;
    (0..=n)
        .map(|k| {
            let w = if k == 0 || k == n {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            (-PI + h * k as f64, w / (3.0 * n as f64))
        })
        .collect()
}

/// First-order and total indices of the Ishigami function by nested
/// quadrature of the variance decomposition.
pub fn ishigami_quadrature() -> ([f64; 3], [f64; 3]) {
    let q = simpson(120);
    let f = |a: f64, b: f64, c: f64| ishigami(&[a, b, c, 0.0]);
    let permute = |i: usize, u: f64, v: f64, w: f64| match i {
        0 => (u, v, w),
        1 => (v, u, w),
        _ => (v, w, u),
    };
    let (mut m1, mut m2) = (0.0, 0.0);
    for &(a, wa) in &q {
        for &(b, wb) in &q {
            for &(c, wc) in &q {
                let y = f(a, b, c);
                m1 += wa * wb * wc * y;
                m2 += wa * wb * wc * y * y;
            }
        }
    }
    let var = m2 - m1 * m1;
    let mut s = [0.0; 3];
    let mut st = [0.0; 3];
    for i in 0..3 {
        // Var over x_i of E[f | x_i]
        let mut e2 = 0.0;
        for &(u, wu) in &q {
            let mut cond = 0.0;
            for &(v, wv) in &q {
                for &(w, ww) in &q {
                    let (a, b, c) = permute(i, u, v, w);
                    cond += wv * ww * f(a, b, c);
                }
            }
            e2 += wu * cond * cond;
        }
        s[i] = (e2 - m1 * m1) / var;
        // E over the others of Var over x_i
        let mut ev = 0.0;
        for &(v, wv) in &q {
            for &(w, ww) in &q {
                let (mut c1, mut c2) = (0.0, 0.0);
                for &(u, wu) in &q {
                    let (a, b, c) = permute(i, u, v, w);
                    let y = f(a, b, c);
                    c1 += wu * y;
                    c2 += wu * y * y;
                }
                ev += wv * ww * (c2 - c1 * c1);
            }
        }
        st[i] = ev / var;
    }
    (s, st)
}
