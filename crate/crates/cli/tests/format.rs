use proptest::prelude::*;
use tdm_cli::output::fmt_num;

/// Round the exact decimal expansion of `x` to six significant digits,
/// ties to even. Returns the digits as an integer and the decimal exponent
/// of the leading digit.
fn oracle(x: f64) -> (u64, i32) {
    let exact = format!("{:.1100e}", x.abs());
    let (mant, exp) = exact.split_once('e').unwrap();
    let mut exp: i32 = exp.parse().unwrap();
    let digits: Vec<u8> = mant.bytes().filter(u8::is_ascii_digit).map(|b| b - b'0').collect();
    let mut kept = digits[..6].iter().fold(0u64, |a, &d| a * 10 + d as u64);
    let rest = &digits[6..];
    let round_up = match rest[0].cmp(&5) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Equal => rest[1..].iter().any(|&d| d != 0) || kept % 2 == 1,
    };
    if round_up {
        kept += 1;
        if kept == 1_000_000 {
            kept = 100_000;
            exp += 1;
        }
    }
    (kept, exp)
}

fn significant_digits(s: &str) -> usize {
    let mant = s.split('e').next().unwrap();
    let digits: String = mant.chars().filter(char::is_ascii_digit).collect();
    let digits = digits.trim_start_matches('0');
    // trailing zeros of an integer only place the decimal point
    let digits = if mant.contains('.') { digits } else { digits.trim_end_matches('0') };
    digits.len()
}

fn check(x: f64) {
    let s = fmt_num(x);
    let (kept, exp) = oracle(x);
    let expect: f64 = format!("{}{}e{}", if x < 0.0 { "-" } else { "" }, kept, exp - 5).parse().unwrap();
    let got: f64 = s.parse().unwrap_or_else(|_| panic!("unparsable {s}"));
    assert_eq!(got, expect, "x = {x:e}, printed {s}");
    assert!(significant_digits(&s) <= 6, "{s}");
    let plain = (-5..15).contains(&exp);
    assert_eq!(!s.contains('e'), plain, "notation of {s}");
    if let Some((_, frac)) = s.split('e').next().unwrap().split_once('.') {
        assert!(!frac.ends_with('0'), "trailing zero in {s}");
    }
}

#[test]
fn exact_ties_round_to_even() {
    assert_eq!(fmt_num(0.125), "0.125");
    assert_eq!(fmt_num(1234565.0), "1234560");
    assert_eq!(fmt_num(1234575.0), "1234580");
    assert_eq!(fmt_num(2.5), "2.5");
    assert_eq!(fmt_num(1000002.5), "1000000");
    assert_eq!(fmt_num(1000003.5), "1000000");
    assert_eq!(fmt_num(1000005.0), "1000000");
    assert_eq!(fmt_num(1000015.0), "1000020");
}

#[test]
fn plain_and_scientific_ranges() {
    assert_eq!(fmt_num(0.0), "0");
    assert_eq!(fmt_num(-0.0), "0");
    assert_eq!(fmt_num(10.0), "10");
    assert_eq!(fmt_num(-52.123456), "-52.1235");
    assert_eq!(fmt_num(0.00001), "0.00001");
    assert_eq!(fmt_num(0.000001), "1e-6");
    assert_eq!(fmt_num(1.5e-7), "1.5e-7");
    assert_eq!(fmt_num(2.25287e-14), "2.25287e-14");
    assert_eq!(fmt_num(1e15), "1e15");
    assert_eq!(fmt_num(123456789012345.0), "123457000000000");
    assert_eq!(fmt_num(999999.5), "1000000");
    assert_eq!(fmt_num(f64::NAN), "nan");
    assert_eq!(fmt_num(f64::NEG_INFINITY), "-inf");
}

proptest! {
    #[test]
    fn matches_exact_decimal_rounding(m in -1.0e6f64..1.0e6, e in -12i32..20) {
        let x = m * 10f64.powi(e);
        prop_assume!(x != 0.0);
        check(x);
    }

    #[test]
    fn matches_on_constructed_ties(k in 100_000u64..1_000_000, j in 0u32..8) {
        // seven digits ending in 5 are exact halfway cases for six digits
        let x = ((k * 10 + 5) * 10u64.pow(j)) as f64;
        check(x);
        check(x / 10.0 / 2.0 * 2.0);
    }
}
