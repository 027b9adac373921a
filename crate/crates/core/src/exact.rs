//! Exact rational arithmetic for credit values.
//!
//! Currency and ratio inputs arrive as decimals; every product and quotient
//! the engine forms is kept as an exact rational so that monthly totals never
//! drift. Values are only rounded when they are written out.

use std::cmp::Ordering;
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, Div, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rust_decimal::Decimal;
use serde::{Serialize, Serializer};

/// An exact rational quantity.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Exact(BigRational);

impl Exact {
    pub fn zero() -> Self {
        Exact(BigRational::zero())
    }

    pub fn one() -> Self {
        Exact(BigRational::one())
    }

    pub fn from_integer(n: i64) -> Self {
        Exact(BigRational::from_integer(BigInt::from(n)))
    }

    pub fn from_decimal(d: Decimal) -> Self {
        let numer = BigInt::from(d.mantissa());
        let denom = BigInt::from(10).pow(d.scale());
        Exact(BigRational::new(numer, denom))
    }

    /// Exact binary expansion of a finite float. Returns `None` for NaN or infinities.
    pub fn from_f64(v: f64) -> Option<Self> {
        BigRational::from_float(v).map(Exact)
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn is_negative(&self) -> bool {
        self.0.is_negative()
    }

    pub fn is_positive(&self) -> bool {
        self.0.is_positive()
    }

    pub fn abs(&self) -> Self {
        Exact(self.0.abs())
    }

    /// `None` when dividing by zero.
    pub fn checked_div(&self, rhs: &Exact) -> Option<Exact> {
        if rhs.is_zero() {
            None
        } else {
            Some(Exact(&self.0 / &rhs.0))
        }
    }

    pub fn max(self, other: Exact) -> Exact {
        if self >= other {
            self
        } else {
            other
        }
    }

    pub fn min(self, other: Exact) -> Exact {
        if self <= other {
            self
        } else {
            other
        }
    }

    pub fn clamp(self, lo: &Exact, hi: &Exact) -> Exact {
        if &self < lo {
            lo.clone()
        } else if &self > hi {
            hi.clone()
        } else {
            self
        }
    }

    /// Round half away from zero to `places` fractional digits and format
    /// with exactly that many digits.
    pub fn to_fixed(&self, places: u32) -> String {
        let scale = BigInt::from(10).pow(places);
        let scaled = self.0.abs() * BigRational::from_integer(scale.clone());
        let two = BigInt::from(2);
        // floor(x + 1/2) on the magnitude
        let rounded = (scaled.numer() * &two + scaled.denom()).div_floor(&(scaled.denom() * &two));
        let negative = self.0.is_negative() && !rounded.is_zero();
        let (int_part, frac_part) = rounded.div_rem(&scale);
        let mut out = String::new();
        if negative {
            out.push('-');
        }
        out.push_str(&int_part.to_string());
        if places > 0 {
            let frac = frac_part.to_string();
            out.push('.');
            for _ in frac.len()..places as usize {
                out.push('0');
            }
            out.push_str(&frac);
        }
        out
    }

    /// Four-digit fixed rendering used by every machine-readable output.
    pub fn fixed4(&self) -> String {
        self.to_fixed(4)
    }

    pub fn as_ratio(&self) -> &BigRational {
        &self.0
    }
}

impl fmt::Debug for Exact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Exact({})", self.0)
    }
}

impl fmt::Display for Exact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.fixed4())
    }
}

impl From<Decimal> for Exact {
    fn from(d: Decimal) -> Self {
        Exact::from_decimal(d)
    }
}

impl From<i64> for Exact {
    fn from(n: i64) -> Self {
        Exact::from_integer(n)
    }
}

impl Serialize for Exact {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.fixed4())
    }
}

macro_rules! binop {
    ($tr:ident, $method:ident) => {
        impl $tr<&Exact> for &Exact {
            type Output = Exact;
            fn $method(self, rhs: &Exact) -> Exact {
                Exact($tr::$method(&self.0, &rhs.0))
            }
        }
        impl $tr<Exact> for Exact {
            type Output = Exact;
            fn $method(self, rhs: Exact) -> Exact {
                Exact($tr::$method(self.0, rhs.0))
            }
        }
        impl $tr<&Exact> for Exact {
            type Output = Exact;
            fn $method(self, rhs: &Exact) -> Exact {
                Exact($tr::$method(self.0, &rhs.0))
            }
        }
    };
}

binop!(Add, add);
binop!(Sub, sub);
binop!(Mul, mul);

/// Panics on a zero divisor; use [`Exact::checked_div`] where the divisor is data.
impl Div<&Exact> for &Exact {
    type Output = Exact;
    fn div(self, rhs: &Exact) -> Exact {
        self.checked_div(rhs).expect("division by zero")
    }
}

impl Div<&Exact> for Exact {
    type Output = Exact;
    fn div(self, rhs: &Exact) -> Exact {
        &self / rhs
    }
}

impl Div for Exact {
    type Output = Exact;
    fn div(self, rhs: Exact) -> Exact {
        &self / &rhs
    }
}

impl Neg for Exact {
    type Output = Exact;
    fn neg(self) -> Exact {
        Exact(-self.0)
    }
}

impl Sum for Exact {
    fn sum<I: Iterator<Item = Exact>>(iter: I) -> Exact {
        Exact(iter.fold(BigRational::zero(), |acc, x| acc + x.0))
    }
}

impl<'a> Sum<&'a Exact> for Exact {
    fn sum<I: Iterator<Item = &'a Exact>>(iter: I) -> Exact {
        Exact(iter.fold(BigRational::zero(), |acc, x| acc + &x.0))
    }
}

impl PartialEq<i64> for Exact {
    fn eq(&self, other: &i64) -> bool {
        self.0 == BigRational::from_integer(BigInt::from(*other))
    }
}

impl PartialOrd<i64> for Exact {
    fn partial_cmp(&self, other: &i64) -> Option<Ordering> {
        self.0.partial_cmp(&BigRational::from_integer(BigInt::from(*other)))
    }
}
