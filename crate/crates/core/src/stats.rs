//! Small numeric helpers shared by the simulators and checks.

/// CDF of a centered Gaussian with standard deviation `scale`.
pub fn normal_cdf(x: f64, scale: f64) -> f64 {
    0.5 * libm::erfc(-x / (scale * std::f64::consts::SQRT_2))
}

/// Logistic function with temperature `s`, evaluated without overflow.
///
/// The negative branch is `1 - sigmoid(|v|)`; the subtraction is exact on
/// [0.5, 1], so `sigmoid(v) + sigmoid(-v) == 1.0` holds bit for bit.
pub fn sigmoid(v: f64, s: f64) -> f64 {
    let t = v / s;
    let upper = 1.0 / (1.0 + (-t.abs()).exp());
    if t >= 0.0 {
        upper
    } else {
        1.0 - upper
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator); zero for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}
