//! Independent naive-loop oracles for the acceptance suite. These deliberately
//! re-derive every quantity with plain loops and textbook formulas, sharing no
//! code with the library implementations they check.

#![allow(dead_code)]

pub fn oracle_mse(a: &[f64], p: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        let d = a[i] - p[i];
        s += d * d;
    }
    s / a.len() as f64
}

pub fn oracle_mae(a: &[f64], p: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - p[i]).abs();
    }
    s / a.len() as f64
}

pub fn oracle_swae(a: &[f64], p: &[f64], v: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - p[i]).abs() * v[i];
    }
    s / a.len() as f64
}

/// Cumulative speed-weighted absolute error over one sequence: mean over
/// full windows of |sum over the window of (a - p) * v|.
pub fn oracle_cumulative(a: &[f64], p: &[f64], v: &[f64], window: usize) -> Option<f64> {
    let n = a.len();
    if n < window + 1 {
        return None;
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for start in 0..(n - window) {
        let mut acc = 0.0;
        for t in 0..=window {
            acc += (a[start + t] - p[start + t]) * v[start + t];
        }
        total += acc.abs();
        count += 1;
    }
    Some(total / count as f64)
}

fn q(x: f64, sigma: f64) -> i32 {
    if x < -sigma {
        -1
    } else if x < sigma {
        0
    } else {
        1
    }
}

pub fn oracle_qce(a: &[f64], p: &[f64], sigma: f64) -> f64 {
    let mut wrong = 0usize;
    for i in 0..a.len() {
        if q(a[i], sigma) != q(p[i], sigma) {
            wrong += 1;
        }
    }
    wrong as f64 / a.len() as f64
}

pub fn oracle_tre(a: &[f64], p: &[f64], alpha: f64) -> f64 {
    let mut over = 0usize;
    for i in 0..a.len() {
        if (p[i] - a[i]).abs() > alpha * a[i].abs() {
            over += 1;
        }
    }
    over as f64 / a.len() as f64
}

/// 4-way accuracy breakdown over integer class codes
/// (0 straight, 1 stop, 2 left, 3 right).
pub struct OracleBreakdown {
    pub all_data: f64,
    pub straight: Option<f64>,
    pub stop: Option<f64>,
    pub turns: Option<f64>,
    pub speed_weighted_all: Option<f64>,
    pub speed_weighted_turns: Option<f64>,
}

pub fn oracle_accuracy(labels: &[u8], preds: &[u8], speeds: &[f64]) -> OracleBreakdown {
    let n = labels.len();
    let mut hit = 0usize;
    let mut sub_hit = [0usize; 3];
    let mut sub_n = [0usize; 3];
    let mut w_hit = 0.0;
    let mut w_all = 0.0;
    let mut tw_hit = 0.0;
    let mut tw_all = 0.0;
    for i in 0..n {
        let ok = labels[i] == preds[i];
        let sub = match labels[i] {
            0 => 0,
            1 => 1,
            _ => 2,
        };
        sub_n[sub] += 1;
        if ok {
            hit += 1;
            sub_hit[sub] += 1;
            w_hit += speeds[i];
        }
        w_all += speeds[i];
        if sub == 2 {
            tw_all += speeds[i];
            if ok {
                tw_hit += speeds[i];
            }
        }
    }
    let frac = |h: usize, m: usize| if m == 0 { None } else { Some(h as f64 / m as f64) };
    OracleBreakdown {
        all_data: hit as f64 / n as f64,
        straight: frac(sub_hit[0], sub_n[0]),
        stop: frac(sub_hit[1], sub_n[1]),
        turns: frac(sub_hit[2], sub_n[2]),
        speed_weighted_all: if w_all > 0.0 { Some(w_hit / w_all) } else { None },
        speed_weighted_turns: if tw_all > 0.0 { Some(tw_hit / tw_all) } else { None },
    }
}

/// Textbook Pearson formula:
/// (n sum xy - sum x sum y) / sqrt((n sum x2 - (sum x)^2)(n sum y2 - (sum y)^2)).
pub fn oracle_pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxy = 0.0;
    let mut sx2 = 0.0;
    let mut sy2 = 0.0;
    for i in 0..x.len() {
        sx += x[i];
        sy += y[i];
        sxy += x[i] * y[i];
        sx2 += x[i] * x[i];
        sy2 += y[i] * y[i];
    }
    let denom = ((n * sx2 - sx * sx) * (n * sy2 - sy * sy)).sqrt();
    if denom == 0.0 || !denom.is_finite() {
        return None;
    }
    Some((n * sxy - sx * sy) / denom)
}

/// Algebraic least-squares circle fit (Kasa): returns (cx, cy, radius).
pub fn oracle_circle_fit(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut sxz, mut syz, mut sz) = (0.0, 0.0, 0.0);
    for &(x, y) in points {
        let z = x * x + y * y;
        sx += x;
        sy += y;
        sxx += x * x;
        syy += y * y;
        sxy += x * y;
        sxz += x * z;
        syz += y * z;
        sz += z;
    }
    let m = [[sxx, sxy, sx], [sxy, syy, sy], [sx, sy, n]];
    let rhs = [sxz, syz, sz];
    let det3 = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det3(&m);
    let mut sol = [0.0; 3];
    for k in 0..3 {
        let mut mk = m;
        for r in 0..3 {
            mk[r][k] = rhs[r];
        }
        sol[k] = det3(&mk) / d;
    }
    let cx = sol[0] / 2.0;
    let cy = sol[1] / 2.0;
    let r = (sol[2] + cx * cx + cy * cy).sqrt();
    (cx, cy, r)
}
