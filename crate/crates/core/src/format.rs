//! Number formatting shared by the CSV and report writers.

/// Formats like C's `%.9g`: nine significant digits, trailing zeros removed.
pub fn format_g9(x: f64) -> String {
    format_sig(x, 9)
}

pub fn format_sig(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if exp < -5 || exp >= digits as i32 {
        format!("{}e{}", trim_zeros(mantissa), exp)
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g9_style() {
        assert_eq!(format_g9(0.0), "0");
        assert_eq!(format_g9(214.982109375), "214.982109");
        assert_eq!(format_g9(2.0), "2");
        assert_eq!(format_g9(0.5), "0.5");
        assert_eq!(format_g9(-1.25e-7), "-1.25e-7");
        assert_eq!(format_g9(123456789012.0), "1.23456789e11");
        assert_eq!(format_g9(1.0 / 3.0), "0.333333333");
    }
}
