//! Quantities with mandatory unit suffixes. Scenario values like `"15.08 ns"`
//! deserialize straight into SI numbers; a bare number or an unknown suffix is
//! rejected, and the TOML parser anchors the error to its line.

use std::f64::consts::PI;
use std::fmt;

use serde::de::{self, Deserializer, Visitor};
use serde::Deserialize;

const TIME: &[(&str, f64)] = &[("s", 1.0), ("ms", 1e-3), ("us", 1e-6), ("µs", 1e-6), ("ns", 1e-9), ("ps", 1e-12)];

const FREQUENCY: &[(&str, f64)] = &[("Hz", 1.0), ("kHz", 1e3), ("MHz", 1e6), ("GHz", 1e9)];

const ANGLE: &[(&str, f64)] = &[("rad", 1.0), ("mrad", 1e-3), ("deg", PI / 180.0)];

/// Splits `"<number> <unit>"` (the space is optional) and scales by the unit.
pub fn parse(text: &str, units: &[(&str, f64)]) -> Result<f64, String> {
    let s = text.trim();
    let split = s
        .char_indices()
        .find(|&(_, c)| !(c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E')))
        .map(|(i, _)| i)
        .unwrap_or(s.len());
    let (num, unit) = s.split_at(split);
    let unit = unit.trim();
    if num.is_empty() {
        return Err(format!("`{text}` has no numeric value"));
    }
    let value: f64 = num.parse().map_err(|_| format!("`{num}` is not a number"))?;
    if !value.is_finite() {
        return Err(format!("`{text}` is not finite"));
    }
    if unit.is_empty() {
        let names: Vec<&str> = units.iter().map(|u| u.0).collect();
        return Err(format!("`{text}` needs a unit ({})", names.join(", ")));
    }
    match units.iter().find(|u| u.0 == unit) {
        Some(&(_, scale)) => Ok(value * scale),
        None => {
            let names: Vec<&str> = units.iter().map(|u| u.0).collect();
            Err(format!("unknown unit `{unit}` in `{text}` (expected one of {})", names.join(", ")))
        }
    }
}

macro_rules! quantity {
    ($(#[$doc:meta])* $name:ident, $what:literal, $parse:expr) => {
        $(#[$doc])*
        #[derive(Debug, Clone, Copy, PartialEq)]
        pub struct $name(pub f64);

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                struct V;
                impl<'de> Visitor<'de> for V {
                    type Value = $name;
                    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                        write!(f, "a {} string with a unit", $what)
                    }
                    fn visit_str<E: de::Error>(self, s: &str) -> Result<$name, E> {
                        let parse: fn(&str) -> Result<f64, String> = $parse;
                        parse(s).map($name).map_err(E::custom)
                    }
                }
                d.deserialize_str(V)
            }
        }
    };
}

quantity!(
    /// Duration in seconds.
    Time,
    "time",
    |s| parse(s, TIME)
);

quantity!(
    /// Ordinary frequency in Hz. Used for count rates.
    Rate,
    "rate",
    |s| parse(s, FREQUENCY)
);

quantity!(
    /// Angular frequency in rad/s. `"40 MHz"` means 2π × 40 MHz; a value in
    /// `rad/s` is taken as is.
    Angular,
    "angular frequency",
    |s| match s.trim().strip_suffix("rad/s") {
        Some(raw) => raw.trim().parse::<f64>().map_err(|_| format!("`{s}` is not a number in rad/s")),
        None => parse(s, FREQUENCY).map(|f| 2.0 * PI * f),
    }
);

quantity!(
    /// Angle in radians.
    Angle,
    "angle",
    |s| parse(s, ANGLE)
);

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Deserialize)]
    struct Doc {
        t: Time,
        w: Angular,
        a: Angle,
    }

    #[test]
    fn suffixes() {
        assert_eq!(parse("15.08 ns", TIME).unwrap(), 15.08e-9);
        assert_eq!(parse("625ps", TIME).unwrap(), 625e-12);
        assert_eq!(parse("-1.5e2 us", TIME).unwrap(), -1.5e-4);
        assert_eq!(parse("2 kHz", FREQUENCY).unwrap(), 2e3);
    }

    #[test]
    fn strictness() {
        assert!(parse("15.08", TIME).unwrap_err().contains("needs a unit"));
        assert!(parse("15 nsec", TIME).unwrap_err().contains("unknown unit"));
        assert!(parse("ns", TIME).is_err());
        assert!(parse("1.2.3 ns", TIME).is_err());
        assert!(parse("15 NS", TIME).is_err());
    }

    #[test]
    fn angular_values() {
        let d: Doc = toml::from_str("t = \"1 us\"\nw = \"50 kHz\"\na = \"90 deg\"").unwrap();
        assert_eq!(d.t.0, 1e-6);
        assert!((d.w.0 - 2.0 * PI * 5e4).abs() < 1e-9);
        assert!((d.a.0 - PI / 2.0).abs() < 1e-15);
        let raw: Doc = toml::from_str("t = \"1 s\"\nw = \"3.5e6 rad/s\"\na = \"0 rad\"").unwrap();
        assert_eq!(raw.w.0, 3.5e6);
    }

    #[test]
    fn errors_point_at_the_line() {
        let e = toml::from_str::<Doc>("t = \"1 us\"\nw = \"50 kHz\"\na = 0.3").err().unwrap().to_string();
        assert!(e.contains("line 3"), "{e}");
        let e = toml::from_str::<Doc>("t = \"1 ms\"\nw = \"50 kHz\"\na = \"3 furlongs\"").err().unwrap().to_string();
        assert!(e.contains("line 3") && e.contains("unknown unit"), "{e}");
    }
}
