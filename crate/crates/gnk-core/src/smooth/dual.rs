//! Forward-mode dual numbers and the scalar tower used for exact derivatives.
//!
//! A [`Dual`] carries one infinitesimal direction. Nesting gives higher
//! derivatives: `Dual<Dual<f64>>` yields mixed second derivatives, and so on.
//! The concrete tower stops at [`D3`]; asking for a derivative beyond that
//! depth panics with a clear message.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use super::MapBody;

/// Field operations plus the elementary functions needed by built-in maps.
pub trait Real:
    Copy
    + Debug
    + PartialEq
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    fn cst(v: f64) -> Self;
    /// Real part at the bottom of the tower.
    fn value(self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn powi(self, n: i32) -> Self;

    fn zero() -> Self {
        Self::cst(0.0)
    }
    fn one() -> Self {
        Self::cst(1.0)
    }
    fn scale(self, k: f64) -> Self {
        self * Self::cst(k)
    }
    fn cosh(self) -> Self {
        (self.exp() + (-self).exp()).scale(0.5)
    }
    fn sinh(self) -> Self {
        (self.exp() - (-self).exp()).scale(0.5)
    }
    fn abs(self) -> Self {
        if self.value() < 0.0 {
            -self
        } else {
            self
        }
    }
}

impl Real for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn value(self) -> f64 {
        self
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
}

/// `re + eps·ε` with `ε² = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<T> {
    pub re: T,
    pub eps: T,
}

impl<T: Real> Dual<T> {
    pub fn new(re: T, eps: T) -> Self {
        Dual { re, eps }
    }
    pub fn constant(re: T) -> Self {
        Dual { re, eps: T::zero() }
    }
}

impl<T: Real> Add for Dual<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Dual::new(self.re + o.re, self.eps + o.eps)
    }
}
impl<T: Real> Sub for Dual<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Dual::new(self.re - o.re, self.eps - o.eps)
    }
}
impl<T: Real> Mul for Dual<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Dual::new(self.re * o.re, self.re * o.eps + self.eps * o.re)
    }
}
impl<T: Real> Div for Dual<T> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let q = self.re / o.re;
        Dual::new(q, (self.eps - q * o.eps) / o.re)
    }
}
impl<T: Real> Neg for Dual<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Dual::new(-self.re, -self.eps)
    }
}
impl<T: Real> AddAssign for Dual<T> {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}
impl<T: Real> SubAssign for Dual<T> {
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}
impl<T: Real> MulAssign for Dual<T> {
    fn mul_assign(&mut self, o: Self) {
        *self = *self * o;
    }
}

impl<T: Real> Real for Dual<T> {
    fn cst(v: f64) -> Self {
        Dual::constant(T::cst(v))
    }
    fn value(self) -> f64 {
        self.re.value()
    }
    fn sin(self) -> Self {
        Dual::new(self.re.sin(), self.eps * self.re.cos())
    }
    fn cos(self) -> Self {
        Dual::new(self.re.cos(), -(self.eps * self.re.sin()))
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        Dual::new(e, self.eps * e)
    }
    fn ln(self) -> Self {
        Dual::new(self.re.ln(), self.eps / self.re)
    }
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        Dual::new(s, self.eps / (s + s))
    }
    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Self::one();
        }
        Dual::new(self.re.powi(n), self.eps * self.re.powi(n - 1).scale(n as f64))
    }
}

pub type D1 = Dual<f64>;
pub type D2 = Dual<D1>;
pub type D3 = Dual<D2>;

/// Scalars that can evaluate a type-erased map body and push one more
/// derivative level through it.
pub trait Scalar: Real {
    fn eval_body(body: &dyn MapBody, x: &[Self]) -> Vec<Self>;
    /// Value and directional derivative of `body` at `x` along `dir`.
    fn jvp_body(body: &dyn MapBody, x: &[Self], dir: &[Self]) -> (Vec<Self>, Vec<Self>);
}

fn seed<T: Real>(x: &[T], dir: &[T]) -> Vec<Dual<T>> {
    x.iter().zip(dir).map(|(&a, &b)| Dual::new(a, b)).collect()
}

fn split<T: Real>(v: Vec<Dual<T>>) -> (Vec<T>, Vec<T>) {
    v.into_iter().map(|d| (d.re, d.eps)).unzip()
}

impl Scalar for f64 {
    fn eval_body(body: &dyn MapBody, x: &[Self]) -> Vec<Self> {
        body.eval_f64(x)
    }
    fn jvp_body(body: &dyn MapBody, x: &[Self], dir: &[Self]) -> (Vec<Self>, Vec<Self>) {
        split(body.eval_d1(&seed(x, dir)))
    }
}

impl Scalar for D1 {
    fn eval_body(body: &dyn MapBody, x: &[Self]) -> Vec<Self> {
        body.eval_d1(x)
    }
    fn jvp_body(body: &dyn MapBody, x: &[Self], dir: &[Self]) -> (Vec<Self>, Vec<Self>) {
        split(body.eval_d2(&seed(x, dir)))
    }
}

impl Scalar for D2 {
    fn eval_body(body: &dyn MapBody, x: &[Self]) -> Vec<Self> {
        body.eval_d2(x)
    }
    fn jvp_body(body: &dyn MapBody, x: &[Self], dir: &[Self]) -> (Vec<Self>, Vec<Self>) {
        split(body.eval_d3(&seed(x, dir)))
    }
}

impl Scalar for D3 {
    fn eval_body(body: &dyn MapBody, x: &[Self]) -> Vec<Self> {
        body.eval_d3(x)
    }
    fn jvp_body(_: &dyn MapBody, _: &[Self], _: &[Self]) -> (Vec<Self>, Vec<Self>) {
        panic!("differentiation depth exceeded: the dual tower stops at third order")
    }
}

pub fn values<S: Real>(v: &[S]) -> Vec<f64> {
    v.iter().map(|s| s.value()).collect()
}

pub fn lift<S: Real>(v: &[f64]) -> Vec<S> {
    v.iter().map(|&a| S::cst(a)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule() {
        let x = Dual::new(2.0, 1.0);
        let y = Dual::new(3.0, 0.0);
        assert_eq!((x * y).eps, 3.0);
    }

    #[test]
    fn quotient_and_sqrt() {
        let x = Dual::new(4.0, 1.0);
        assert!((x.sqrt().eps - 0.25).abs() < 1e-15);
        let q = Dual::<f64>::one() / x;
        assert!((q.eps + 1.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn nested_second_derivative_of_sin() {
        let x: D2 = Dual::new(Dual::new(0.7, 1.0), Dual::new(1.0, 0.0));
        let s = x.sin();
        assert!((s.eps.eps + 0.7f64.sin()).abs() < 1e-14);
    }

    #[test]
    fn powi_matches_repeated_product() {
        let x = Dual::new(1.3, 1.0);
        let a = x.powi(3);
        let b = x * x * x;
        assert!((a.re - b.re).abs() < 1e-14 && (a.eps - b.eps).abs() < 1e-14);
    }
}
