//! Double-double scalar for resolving finite differences below f64 roundoff.

use std::fmt;
use std::iter::Sum;
use std::num::FpCategory;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Rem, RemAssign, Sub, SubAssign};

use num_traits::{Float, FromPrimitive, Num, NumCast, One, ToPrimitive, Zero};
use twofloat::TwoFloat;

use crate::tensor::{DType, Scalar};

const LN_2_HI: f64 = std::f64::consts::LN_2;
const LN_2_LO: f64 = 2.319_046_813_846_299_6e-17;

/// About 106 bits of mantissa. Only used to evaluate programs, never stored.
#[derive(Clone, Copy, Debug, Default, PartialEq, PartialOrd)]
pub struct Dd(pub TwoFloat);

impl Dd {
    pub fn from_f64(v: f64) -> Self {
        Dd(<TwoFloat as From<f64>>::from(v))
    }

    /// Rounded to the nearest f64.
    pub fn hi(self) -> f64 {
        self.0.hi() + self.0.lo()
    }
}

macro_rules! binop {
    ($tr:ident, $f:ident, $atr:ident, $af:ident, $op:tt) => {
        impl $tr for Dd {
            type Output = Dd;
            fn $f(self, rhs: Dd) -> Dd {
                Dd(self.0 $op rhs.0)
            }
        }
        impl $atr for Dd {
            fn $af(&mut self, rhs: Dd) {
                self.0 = self.0 $op rhs.0;
            }
        }
    };
}

binop!(Add, add, AddAssign, add_assign, +);
binop!(Sub, sub, SubAssign, sub_assign, -);
binop!(Mul, mul, MulAssign, mul_assign, *);

// The library quotient forms its correction term without a fused multiply
// and ends up no better than f64, so the long division is done here.
impl Div for Dd {
    type Output = Dd;
    fn div(self, rhs: Dd) -> Dd {
        let (a, b) = (self.0, rhs.0);
        let q1 = a.hi() / b.hi();
        let r = a - b * q1;
        let q2 = r.hi() / b.hi();
        let r = r - b * q2;
        let q3 = r.hi() / b.hi();
        Dd(TwoFloat::new_add(q1, q2) + q3)
    }
}

impl DivAssign for Dd {
    fn div_assign(&mut self, rhs: Dd) {
        *self = *self / rhs;
    }
}
binop!(Rem, rem, RemAssign, rem_assign, %);

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd(-self.0)
    }
}

impl Sum for Dd {
    fn sum<I: Iterator<Item = Dd>>(iter: I) -> Dd {
        iter.fold(Dd::zero(), |a, b| a + b)
    }
}

impl fmt::Display for Dd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

impl Zero for Dd {
    fn zero() -> Self {
        Dd(TwoFloat::zero())
    }
    fn is_zero(&self) -> bool {
        self.0.is_zero()
    }
}

impl One for Dd {
    fn one() -> Self {
        Dd(TwoFloat::one())
    }
}

impl Num for Dd {
    type FromStrRadixErr = <TwoFloat as Num>::FromStrRadixErr;
    fn from_str_radix(s: &str, radix: u32) -> Result<Self, Self::FromStrRadixErr> {
        TwoFloat::from_str_radix(s, radix).map(Dd)
    }
}

impl ToPrimitive for Dd {
    fn to_i64(&self) -> Option<i64> {
        self.0.to_i64()
    }
    fn to_u64(&self) -> Option<u64> {
        self.0.to_u64()
    }
    fn to_f64(&self) -> Option<f64> {
        Some(self.hi())
    }
}

impl FromPrimitive for Dd {
    fn from_i64(n: i64) -> Option<Self> {
        TwoFloat::from_i64(n).map(Dd)
    }
    fn from_u64(n: u64) -> Option<Self> {
        TwoFloat::from_u64(n).map(Dd)
    }
    fn from_f64(n: f64) -> Option<Self> {
        Some(Dd::from_f64(n))
    }
}

impl NumCast for Dd {
    fn from<N: ToPrimitive>(n: N) -> Option<Self> {
        <TwoFloat as NumCast>::from(n).map(Dd)
    }
}

macro_rules! unary {
    ($($f:ident),*) => {
        $(fn $f(self) -> Self { Dd(Float::$f(self.0)) })*
    };
}

macro_rules! predicate {
    ($($f:ident),*) => {
        $(fn $f(self) -> bool { Float::$f(self.0) })*
    };
}

macro_rules! constant {
    ($($f:ident),*) => {
        $(fn $f() -> Self { Dd(<TwoFloat as Float>::$f()) })*
    };
}

macro_rules! binary {
    ($($f:ident),*) => {
        $(fn $f(self, other: Self) -> Self { Dd(Float::$f(self.0, other.0)) })*
    };
}

impl Float for Dd {
    constant!(nan, infinity, neg_infinity, neg_zero, min_value, min_positive_value, max_value, epsilon);
    predicate!(is_nan, is_infinite, is_finite, is_normal, is_sign_positive, is_sign_negative);
    unary!(
        floor, ceil, round, trunc, fract, abs, signum, sqrt, exp2, ln, log2, log10, cbrt, sin, cos, tan,
        asin, acos, atan, exp_m1, ln_1p, sinh, cosh, tanh, asinh, acosh, atanh
    );
    binary!(powf, log, max, min, abs_sub, hypot, atan2);

    /// The library routine loses about half the mantissa, so this one reduces
    /// by ln 2, shrinks the remainder by 2^10, sums the Taylor series and
    /// squares back.
    fn exp(self) -> Self {
        let x = self.hi();
        if !x.is_finite() || x.abs() > 700.0 {
            return Dd(Float::exp(self.0));
        }
        let ln2 = Dd(TwoFloat::try_from((LN_2_HI, LN_2_LO)).expect("normalized"));
        let k = (x / std::f64::consts::LN_2).round();
        let r = (self - ln2 * Dd::from_f64(k)) * Dd::from_f64(1.0 / 1024.0);
        let mut term = r;
        let mut m = r;
        for n in 2..=12 {
            term = term * r / Dd::from_f64(n as f64);
            m += term;
        }
        for _ in 0..10 {
            m = m * (m + Dd::from_f64(2.0));
        }
        (m + Dd::one()) * Dd::from_f64(2f64.powi(k as i32))
    }

    fn recip(self) -> Self {
        Dd::one() / self
    }

    fn classify(self) -> FpCategory {
        Float::classify(self.0)
    }

    fn mul_add(self, a: Self, b: Self) -> Self {
        self * a + b
    }

    fn powi(self, n: i32) -> Self {
        Dd(Float::powi(self.0, n))
    }

    fn sin_cos(self) -> (Self, Self) {
        let (s, c) = Float::sin_cos(self.0);
        (Dd(s), Dd(c))
    }

    fn integer_decode(self) -> (u64, i16, i8) {
        Float::integer_decode(self.0)
    }
}

impl Scalar for Dd {
    // Nearest storable type; values are rounded when serialized.
    const DTYPE: DType = DType::F64;

    fn from_f64_lossy(v: f64) -> Self {
        Dd::from_f64(v)
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.hi().to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        Dd::from_f64(f64::from_le_bytes(bytes.try_into().expect("8 bytes")))
    }
}
