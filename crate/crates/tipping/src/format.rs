//! Human-readable numbers: six significant digits, `%g` style.

pub const SIGNIFICANT_DIGITS: usize = 6;

/// Formats `x` with six significant digits, trailing zeros removed.
pub fn sig(x: f64) -> String {
    sig_n(x, SIGNIFICANT_DIGITS)
}

pub fn sig_n(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".to_string()
        } else if x > 0.0 {
            "inf".to_string()
        } else {
            "-inf".to_string()
        };
    }
    let digits = digits.max(1);
    // Round first so that e.g. 999999.5 moves to the next decade.
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if exp < -4 || exp >= digits as i32 {
        format!("{}e{}{:02}", trim(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn trim(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn sig_opt(x: Option<f64>) -> String {
    x.map(sig).unwrap_or_else(|| "absent".to_string())
}
