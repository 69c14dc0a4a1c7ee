//! Simulated time: exact rational seconds.
//!
//! Using exact arithmetic (rather than floats) keeps event ordering and
//! trace output bit-stable across runs and platforms.

use num_rational::Rational64;
use num_traits::Zero;

pub type Time = Rational64;

pub fn secs(v: i64) -> Time {
    Rational64::from_integer(v)
}

pub fn time_zero() -> Time {
    Rational64::zero()
}

/// Parse `"5"`, `"5/2"` or `"0.25"` into an exact time value.
pub fn parse_time(s: &str) -> Result<Time, String> {
    let term = crate::term::Term::parse(s).map_err(|e| e.to_string())?;
    term.as_rational().ok_or_else(|| format!("not a number: {s}"))
}

/// Canonical rendering: integer seconds print bare, otherwise `num/den`.
pub fn format_time(t: &Time) -> String {
    if t.is_integer() {
        t.to_integer().to_string()
    } else {
        format!("{}/{}", t.numer(), t.denom())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_format() {
        assert_eq!(parse_time("5").unwrap(), secs(5));
        assert_eq!(parse_time("5/2").unwrap(), Rational64::new(5, 2));
        assert_eq!(parse_time("0.1").unwrap(), Rational64::new(1, 10));
        assert_eq!(format_time(&secs(3)), "3");
        assert_eq!(format_time(&Rational64::new(7, 2)), "7/2");
        assert!(parse_time("abc").is_err());
    }
}
