//! Scalar abstraction and small fixed-size vector helpers.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point scalar the whole crate is generic over (`f32` or `f64`).
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + LowerExp
    + Default
    + Send
    + Sync
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Converts an `f64` literal into `T`.
#[inline(always)]
pub fn c<T: Real>(x: f64) -> T {
    T::from_f64(x).unwrap()
}

/// Converts a count into `T`.
#[inline(always)]
pub fn cu<T: Real>(x: usize) -> T {
    T::from_usize(x).unwrap()
}

/// Converts `T` into `f64`.
#[inline(always)]
pub fn f64_of<T: Real>(x: T) -> f64 {
    x.to_f64().unwrap()
}

/// Points and vectors are stored with three slots; planar data leaves the
/// third slot at zero.
pub type Vec3<T> = [T; 3];

#[inline(always)]
pub fn zero3<T: Real>() -> Vec3<T> {
    [T::zero(); 3]
}

#[inline(always)]
pub fn add<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline(always)]
pub fn sub<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline(always)]
pub fn scale<T: Real>(a: Vec3<T>, s: T) -> Vec3<T> {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline(always)]
pub fn dot<T: Real>(a: Vec3<T>, b: Vec3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline(always)]
pub fn cross<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline(always)]
pub fn norm<T: Real>(a: Vec3<T>) -> T {
    dot(a, a).sqrt()
}

#[inline(always)]
pub fn dist<T: Real>(a: Vec3<T>, b: Vec3<T>) -> T {
    norm(sub(a, b))
}

#[inline(always)]
pub fn normalize<T: Real>(a: Vec3<T>) -> Vec3<T> {
    let r = norm(a);
    scale(a, T::one() / r)
}

/// Euclidean norm of a slice.
pub fn norm_slice<T: Real>(a: &[T]) -> T {
    a.iter().map(|&x| x * x).sum::<T>().sqrt()
}
