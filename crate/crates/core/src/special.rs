//! Special functions needed by the kernels and duration laws.

/// `e^{-t} I_n(t)` by its power series, summed in log space.
pub fn scaled_bessel_i(n: u64, t: f64) -> f64 {
    if t == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    let half_log = (0.5 * t).ln();
    let lgamma = |k: u64| statrs::function::gamma::ln_gamma(k as f64 + 1.0);
    let mut sum = 0.0;
    let mut k = 0u64;
    loop {
        let log_term = (2 * k + n) as f64 * half_log - lgamma(k) - lgamma(k + n) - t;
        let term = log_term.exp();
        sum += term;
        if k as f64 > 0.5 * t && term < 1e-18 * sum.max(1e-300) {
            break;
        }
        if k > 10_000 {
            break;
        }
        k += 1;
    }
    sum
}

/// Exponential integral `E_1(x) = ∫_x^∞ e^{-s}/s ds` for `x > 0`.
pub fn exp_integral_e1(x: f64) -> f64 {
    assert!(x > 0.0, "E1 needs a positive argument");
    const EULER: f64 = 0.577_215_664_901_532_9;
    if x <= 1.0 {
        let mut sum = 0.0;
        let mut term = 1.0;
        let mut k = 1.0;
        loop {
            term *= -x / k;
            let add = -term / k;
            sum += add;
            if add.abs() < 1e-17 * sum.abs().max(1e-300) {
                break;
            }
            k += 1.0;
        }
        -EULER - x.ln() + sum
    } else {
        // modified Lentz continued fraction
        let tiny = 1e-300;
        let mut b = x + 1.0;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        let mut i = 1.0;
        loop {
            let a = -i * i;
            b += 2.0;
            d = 1.0 / (a * d + b);
            c = b + a / c;
            let del = c * d;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
            i += 1.0;
            if i > 10_000.0 {
                break;
            }
        }
        h * (-x).exp()
    }
}
