//! Small numeric helpers shared across modules.

pub(crate) fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

fn raw_sig(v: f64, digits: i32) -> String {
    if v == 0.0 {
        // avoid "-0" artifacts
        return format!("{:.*}", (digits - 1) as usize, 0.0);
    }
    let exp = v.abs().log10().floor() as i32;
    let decimals = (digits - 1 - exp).max(0) as usize;
    format!("{:.*}", decimals, v)
}

/// Format with a fixed number of significant digits, '.' decimal separator.
///
/// The result is stable under reparse-and-reformat, which makes file
/// round-trips byte-exact: `format_sig(parse(format_sig(v))) == format_sig(v)`.
pub fn format_sig(v: f64, digits: u32) -> String {
    let digits = digits as i32;
    let first = raw_sig(v, digits);
    let reparsed: f64 = first.parse().expect("own formatting parses back");
    raw_sig(reparsed, digits)
}

pub(crate) fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Exact integer-ratio division reported as a real.
pub(crate) fn exact_ratio(num: u128, den: u128) -> f64 {
    debug_assert!(den > 0);
    let g = gcd(num, den);
    (num / g) as f64 / (den / g) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(format_sig(0.35, 6), "0.350000");
        assert_eq!(format_sig(1.0, 6), "1.00000");
        assert_eq!(format_sig(84375.0, 6), "84375.0");
        assert_eq!(format_sig(0.0123456789, 6), "0.0123457");
        assert_eq!(format_sig(0.0, 6), "0.00000");
    }

    #[test]
    fn formatting_is_idempotent_at_rounding_boundaries() {
        for &v in &[0.999_999_96, 0.099_999_97, 1.000_000_4, 0.123_456_54] {
            let s1 = format_sig(v, 6);
            let reparsed: f64 = s1.parse().unwrap();
            assert_eq!(format_sig(reparsed, 6), s1, "not idempotent for {v}");
        }
    }

    #[test]
    fn exact_ratio_cancels() {
        assert_eq!(exact_ratio(9_450_000, 112), 84375.0);
        assert_eq!(exact_ratio(3, 2), 1.5);
    }
}
