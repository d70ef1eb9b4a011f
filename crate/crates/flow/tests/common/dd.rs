//! Double-double arithmetic (about 106 bits of mantissa) for reference values.

#![allow(dead_code)]

use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DD {
    pub hi: f64,
    pub lo: f64,
}

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

impl DD {
    pub fn new(x: f64) -> Self {
        Self { hi: x, lo: 0.0 }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn sqrt(self) -> Self {
        if self.hi == 0.0 {
            return Self::new(0.0);
        }
        // one Newton step from the double estimate doubles the precision
        let x = self.hi.sqrt();
        let xx = DD::new(x) * DD::new(x);
        let corr = (self - xx).to_f64() / (2.0 * x);
        let (hi, lo) = quick_two_sum(x, corr);
        Self { hi, lo }
    }

    pub fn powi(self, n: u32) -> Self {
        (0..n).fold(DD::new(1.0), |acc, _| acc * self)
    }

    /// Positive real `n`-th root by Newton iteration.
    pub fn root(self, n: u32) -> Self {
        let mut y = DD::new(self.to_f64().powf(1.0 / n as f64));
        for _ in 0..4 {
            let f = y.powi(n) - self;
            let df = DD::new(n as f64) * y.powi(n - 1);
            y = y - f / df;
        }
        y
    }
}

impl Add for DD {
    type Output = DD;
    fn add(self, o: DD) -> DD {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        DD { hi, lo }
    }
}

impl Neg for DD {
    type Output = DD;
    fn neg(self) -> DD {
        DD { hi: -self.hi, lo: -self.lo }
    }
}

impl Sub for DD {
    type Output = DD;
    fn sub(self, o: DD) -> DD {
        self + (-o)
    }
}

impl Mul for DD {
    type Output = DD;
    fn mul(self, o: DD) -> DD {
        let (p, e) = two_prod(self.hi, o.hi);
        let e = e + (self.hi * o.lo + self.lo * o.hi);
        let (hi, lo) = quick_two_sum(p, e);
        DD { hi, lo }
    }
}

impl Div for DD {
    type Output = DD;
    fn div(self, o: DD) -> DD {
        let q1 = self.hi / o.hi;
        let r = self - o * DD::new(q1);
        let q2 = r.hi / o.hi;
        let r = r - o * DD::new(q2);
        let q3 = r.hi / o.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        DD { hi, lo } + DD::new(q3)
    }
}

/// Reference `√(m/n)·t / (1 + (√(m/n) − 1)·t)`.
pub fn shift_ref(t: f64, n: u64, m: u64) -> f64 {
    let a = (DD::new(m as f64) / DD::new(n as f64)).sqrt();
    let t = DD::new(t);
    (a * t / (DD::new(1.0) + (a - DD::new(1.0)) * t)).to_f64()
}

/// Reference power-form noise level for integer `rho`.
pub fn edm_sigma_ref(t: f64, sigma_min: f64, sigma_max: f64, rho: u32) -> f64 {
    let lo = DD::new(sigma_min).root(rho);
    let hi = DD::new(sigma_max).root(rho);
    ((hi - lo) * DD::new(t) + lo).powi(rho).to_f64()
}
