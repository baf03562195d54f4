//! Shared CSV number formatting.

/// Formats with 17 significant digits, enough for an exact `f64` round trip.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

#[cfg(test)]
mod tests {
    use super::fmt_num;

    #[test]
    fn round_trip_is_exact() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE, 0.0] {
            assert_eq!(fmt_num(x).parse::<f64>().unwrap(), x);
        }
    }
}
