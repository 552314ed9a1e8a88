//! Canonical float formatting and small numeric helpers shared by the file
//! writers.

/// Format a float with 9 significant digits, `%.9g` style: fixed notation for
/// moderate exponents, scientific otherwise, trailing zeros trimmed. All file
/// formats in this project (case files, dataset CSV, model JSON) use this so
/// outputs are byte-stable across runs.
pub fn fmt_sig9(v: f64) -> String {
    fmt_sig(v, 9)
}

pub fn fmt_sig(v: f64, digits: usize) -> String {
    assert!(digits >= 1);
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let sci = format!("{:.*e}", digits - 1, v);
    let (_, exp) = sci.split_once('e').expect("exponent in sci notation");
    let e: i32 = exp.parse().expect("numeric exponent");
    if e >= -4 && e < digits as i32 {
        let frac = (digits as i32 - 1 - e).max(0) as usize;
        trim_zeros(format!("{v:.frac$}"))
    } else {
        let (mant, _) = sci.split_once('e').unwrap();
        format!("{}e{}", trim_zeros(mant.to_string()), e)
    }
}

/// Round a value to 9 significant decimal digits (the nearest double to its
/// 9-digit rendering).
pub fn round_sig9(v: f64) -> f64 {
    if !v.is_finite() {
        return v;
    }
    fmt_sig9(v).parse().expect("formatted float reparses")
}

fn trim_zeros(mut s: String) -> String {
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    if s == "-0" {
        s = "0".to_string();
    }
    s
}

/// Quantile with linear interpolation between order statistics, `q` in [0, 1].
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    assert!((0.0..=1.0).contains(&q));
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = pos - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
    quantile(&v, 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig9_fixed_and_scientific() {
        assert_eq!(fmt_sig9(0.0), "0");
        assert_eq!(fmt_sig9(-0.0), "0");
        assert_eq!(fmt_sig9(1.0), "1");
        assert_eq!(fmt_sig9(-0.5), "-0.5");
        assert_eq!(fmt_sig9(0.05917), "0.05917");
        assert_eq!(fmt_sig9(123456789.0), "123456789");
        assert_eq!(fmt_sig9(1234567890.0), "1.23456789e9");
        assert_eq!(fmt_sig9(0.000123456789), "0.000123456789");
        assert_eq!(fmt_sig9(0.0000123456789), "1.23456789e-5");
        assert_eq!(fmt_sig9(std::f64::consts::PI), "3.14159265");
    }

    #[test]
    fn sig9_roundtrip_is_stable() {
        for &v in &[std::f64::consts::PI, 1.0 / 3.0, 2.5e-13, -9.87654321e14] {
            let once = fmt_sig9(v);
            let twice = fmt_sig9(once.parse::<f64>().unwrap());
            assert_eq!(once, twice);
        }
    }

    #[test]
    fn quantile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    }
}
