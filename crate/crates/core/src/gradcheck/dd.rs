//! Double-double arithmetic: an unevaluated sum `hi + lo` carrying about
//! 32 significant digits, enough that the oracle's central differences are
//! limited by truncation rather than round-off.

use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Dd {
    hi: f64,
    lo: f64,
}

const LN2: Dd = Dd {
    hi: std::f64::consts::LN_2,
    lo: 2.3190468138462996e-17,
};
const EXP_HALVINGS: i32 = 4;
const TAYLOR_TERMS: usize = 30;

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl From<f64> for Dd {
    fn from(hi: f64) -> Self {
        Dd { hi, lo: 0.0 }
    }
}

impl Dd {
    pub(crate) const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub(crate) const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    pub(crate) fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub(crate) fn hi(self) -> f64 {
        self.hi
    }

    pub(crate) fn is_finite(self) -> bool {
        self.hi.is_finite() && self.lo.is_finite()
    }

    fn scale_pow2(self, k: i32) -> Dd {
        let s = 2f64.powi(k);
        Dd {
            hi: self.hi * s,
            lo: self.lo * s,
        }
    }

    pub(crate) fn max(self, other: Dd) -> Dd {
        if (self.hi, self.lo) >= (other.hi, other.lo) {
            self
        } else {
            other
        }
    }

    pub(crate) fn min(self, other: Dd) -> Dd {
        if (self.hi, self.lo) <= (other.hi, other.lo) {
            self
        } else {
            other
        }
    }

    pub(crate) fn less_than(self, other: Dd) -> bool {
        (self.hi, self.lo) < (other.hi, other.lo)
    }

    /// Range reduction by `ln 2`, then by `2^4`, a Taylor series, and
    /// repeated squaring.
    pub(crate) fn exp(self) -> Dd {
        if self.hi > 709.0 {
            return Dd::from(f64::INFINITY);
        }
        if self.hi < -745.0 {
            return Dd::ZERO;
        }
        let k = (self.hi / LN2.hi).round();
        let r = (self - LN2 * k).scale_pow2(-EXP_HALVINGS);
        let mut sum = Dd::ONE + r;
        let mut term = r;
        for n in 2..TAYLOR_TERMS {
            term = term * r / n as f64;
            sum = sum + term;
            if term.hi.abs() < 1e-34 {
                break;
            }
        }
        for _ in 0..EXP_HALVINGS {
            sum = sum * sum;
        }
        sum.scale_pow2(k as i32)
    }

    /// Newton's method on `exp(y) = x` from the `f64` logarithm.
    pub(crate) fn ln(self) -> Dd {
        if self.hi <= 0.0 {
            return Dd::from(if self.hi == 0.0 {
                f64::NEG_INFINITY
            } else {
                f64::NAN
            });
        }
        let mut y = Dd::from(self.hi.ln());
        for _ in 0..2 {
            y = y + self * (-y).exp() - Dd::ONE;
        }
        y
    }

    /// `self^e` for `self ≥ 0`, with `0^e = 0` for `e > 0`.
    pub(crate) fn powf(self, e: Dd) -> Dd {
        if self.hi == 0.0 {
            return if e.hi > 0.0 { Dd::ZERO } else { Dd::ONE };
        }
        (e * self.ln()).exp()
    }
}

impl Neg for Dd {
    type Output = Dd;

    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Add for Dd {
    type Output = Dd;

    fn add(self, b: Dd) -> Dd {
        let (s1, s2) = two_sum(self.hi, b.hi);
        let (t1, t2) = two_sum(self.lo, b.lo);
        let (s1, s2) = quick_two_sum(s1, s2 + t1);
        let (hi, lo) = quick_two_sum(s1, s2 + t2);
        Dd { hi, lo }
    }
}

impl Sub for Dd {
    type Output = Dd;

    fn sub(self, b: Dd) -> Dd {
        self + (-b)
    }
}

impl Mul for Dd {
    type Output = Dd;

    fn mul(self, b: Dd) -> Dd {
        let (p1, p2) = two_prod(self.hi, b.hi);
        let (hi, lo) = quick_two_sum(p1, p2 + (self.hi * b.lo + self.lo * b.hi));
        Dd { hi, lo }
    }
}

impl Mul<f64> for Dd {
    type Output = Dd;

    fn mul(self, b: f64) -> Dd {
        let (p1, p2) = two_prod(self.hi, b);
        let (hi, lo) = quick_two_sum(p1, p2 + self.lo * b);
        Dd { hi, lo }
    }
}

impl Div for Dd {
    type Output = Dd;

    fn div(self, b: Dd) -> Dd {
        let q1 = self.hi / b.hi;
        let r = self - b * q1;
        let q2 = r.hi / b.hi;
        let r = r - b * q2;
        let q3 = r.hi / b.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo } + Dd::from(q3)
    }
}

impl Div<f64> for Dd {
    type Output = Dd;

    fn div(self, b: f64) -> Dd {
        self / Dd::from(b)
    }
}
