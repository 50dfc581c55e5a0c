//! Typed literal values with exact decimal arithmetic.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Datatypes a property or expression can carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Datatype {
    Real,
    Integer,
    Boolean,
    String,
}

impl Datatype {
    pub fn is_numeric(self) -> bool {
        matches!(self, Datatype::Real | Datatype::Integer)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Datatype::Real => "real",
            Datatype::Integer => "integer",
            Datatype::Boolean => "boolean",
            Datatype::String => "string",
        }
    }
}

impl fmt::Display for Datatype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Datatype {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "real" => Ok(Datatype::Real),
            "integer" => Ok(Datatype::Integer),
            "boolean" => Ok(Datatype::Boolean),
            "string" => Ok(Datatype::String),
            other => Err(format!("unknown datatype `{other}`")),
        }
    }
}

/// An exact rational number. Written as a decimal whenever the expansion
/// terminates, otherwise as `n/d`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Decimal(pub BigRational);

impl Decimal {
    pub fn from_integer(value: impl Into<BigInt>) -> Self {
        Decimal(BigRational::from_integer(value.into()))
    }

    pub fn is_integer(&self) -> bool {
        self.0.is_integer()
    }

    /// Numerator and denominator; the denominator is always positive.
    pub fn parts(&self) -> (&BigInt, &BigInt) {
        (self.0.numer(), self.0.denom())
    }

    /// Returns the terminating decimal expansion, or `None` when the
    /// denominator has prime factors other than 2 and 5.
    pub fn to_decimal_string(&self) -> Option<String> {
        let (numer, denom) = (self.0.numer().clone(), self.0.denom().clone());
        let two = BigInt::from(2);
        let five = BigInt::from(5);
        let mut rest = denom.clone();
        let mut twos = 0u32;
        let mut fives = 0u32;
        while rest.is_even() {
            rest /= &two;
            twos += 1;
        }
        while (&rest % &five).is_zero() {
            rest /= &five;
            fives += 1;
        }
        if !rest.is_one() {
            return None;
        }
        let digits = twos.max(fives);
        let scale = num_traits::pow(BigInt::from(10), digits as usize);
        let scaled = numer.abs() * (&scale / &denom);
        let sign = if numer.is_negative() { "-" } else { "" };
        if digits == 0 {
            return Some(format!("{sign}{scaled}"));
        }
        let (int_part, frac_part) = scaled.div_rem(&scale);
        let frac = format!("{:0>width$}", frac_part.to_string(), width = digits as usize);
        let frac = frac.trim_end_matches('0');
        if frac.is_empty() {
            Some(format!("{sign}{int_part}"))
        } else {
            Some(format!("{sign}{int_part}.{frac}"))
        }
    }
}

impl fmt::Display for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.to_decimal_string() {
            Some(s) => f.write_str(&s),
            None => write!(f, "{}/{}", self.0.numer(), self.0.denom()),
        }
    }
}

impl FromStr for Decimal {
    type Err = String;

    /// Accepts `7`, `-3`, `7.50`, `.5`, and `1/3`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Some((n, d)) = s.split_once('/') {
            let n: BigInt = n.trim().parse().map_err(|_| format!("invalid numerator in `{s}`"))?;
            let d: BigInt = d.trim().parse().map_err(|_| format!("invalid denominator in `{s}`"))?;
            if d.is_zero() {
                return Err(format!("zero denominator in `{s}`"));
            }
            return Ok(Decimal(BigRational::new(n, d)));
        }
        let (negative, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s.strip_prefix('+').unwrap_or(s)),
        };
        let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(format!("invalid number `{s}`"));
        }
        if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
            return Err(format!("invalid number `{s}`"));
        }
        let digits = format!("{int_part}{frac_part}");
        let numer: BigInt = if digits.is_empty() { BigInt::zero() } else { digits.parse().unwrap() };
        let denom = num_traits::pow(BigInt::from(10), frac_part.len());
        let value = BigRational::new(numer, denom);
        Ok(Decimal(if negative { -value } else { value }))
    }
}

impl Serialize for Decimal {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Decimal {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// A constant value. Numeric payloads are exact.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Literal {
    Real(Decimal),
    Integer(Decimal),
    Boolean(bool),
    String(String),
}

impl Literal {
    pub fn real(text: &str) -> Self {
        Literal::Real(text.parse().expect("valid decimal literal"))
    }

    pub fn integer(value: i64) -> Self {
        Literal::Integer(Decimal::from_integer(value))
    }

    pub fn datatype(&self) -> Datatype {
        match self {
            Literal::Real(_) => Datatype::Real,
            Literal::Integer(_) => Datatype::Integer,
            Literal::Boolean(_) => Datatype::Boolean,
            Literal::String(_) => Datatype::String,
        }
    }

    pub fn as_number(&self) -> Option<&Decimal> {
        match self {
            Literal::Real(d) | Literal::Integer(d) => Some(d),
            _ => None,
        }
    }

    /// Builds a literal of `datatype` from its lexical form.
    pub fn parse_as(datatype: Datatype, text: &str) -> Result<Self, String> {
        match datatype {
            Datatype::Real => Ok(Literal::Real(text.parse()?)),
            Datatype::Integer => {
                let d: Decimal = text.parse()?;
                if !d.is_integer() {
                    return Err(format!("`{text}` is not an integer"));
                }
                Ok(Literal::Integer(d))
            }
            Datatype::Boolean => match text {
                "true" => Ok(Literal::Boolean(true)),
                "false" => Ok(Literal::Boolean(false)),
                _ => Err(format!("`{text}` is not a boolean")),
            },
            Datatype::String => Ok(Literal::String(text.to_string())),
        }
    }

    /// Lexical form without datatype decoration.
    pub fn lexical(&self) -> String {
        match self {
            Literal::Real(d) | Literal::Integer(d) => d.to_string(),
            Literal::Boolean(b) => b.to_string(),
            Literal::String(s) => s.clone(),
        }
    }

    /// Checks the internal consistency of the literal (integers must be whole).
    pub fn is_well_formed(&self) -> bool {
        match self {
            Literal::Integer(d) => d.is_integer(),
            _ => true,
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::String(s) => write!(f, "\"{s}\""),
            other => f.write_str(&other.lexical()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimal_parse_and_print() {
        for (input, expected) in [
            ("7", "7"),
            ("7.0", "7"),
            ("7.50", "7.5"),
            ("-3", "-3"),
            ("-0.25", "-0.25"),
            (".5", "0.5"),
            ("1/3", "1/3"),
            ("2/4", "0.5"),
            ("-1/8", "-0.125"),
        ] {
            let d: Decimal = input.parse().unwrap();
            assert_eq!(d.to_string(), expected, "input {input}");
        }
    }

    #[test]
    fn decimal_rejects_garbage() {
        assert!("".parse::<Decimal>().is_err());
        assert!("1e5".parse::<Decimal>().is_err());
        assert!("1/0".parse::<Decimal>().is_err());
        assert!("-".parse::<Decimal>().is_err());
    }

    #[test]
    fn integer_literal_must_be_whole() {
        assert!(Literal::parse_as(Datatype::Integer, "3").is_ok());
        assert!(Literal::parse_as(Datatype::Integer, "3.5").is_err());
        assert!(Literal::parse_as(Datatype::Boolean, "yes").is_err());
    }

    #[test]
    fn literal_json_shape() {
        let lit = Literal::real("5");
        assert_eq!(serde_json::to_string(&lit).unwrap(), r#"{"real":"5"}"#);
        let back: Literal = serde_json::from_str(r#"{"integer":"3"}"#).unwrap();
        assert_eq!(back, Literal::integer(3));
    }
}
