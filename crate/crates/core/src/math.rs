//! Float math that `core` does not provide, routed through `std` or `libm`.

#[cfg(feature = "std")]
mod imp {
    #[inline]
    pub fn exp32(x: f32) -> f32 {
        x.exp()
    }
    #[inline]
    pub fn tanh32(x: f32) -> f32 {
        x.tanh()
    }
    #[inline]
    pub fn sqrt32(x: f32) -> f32 {
        x.sqrt()
    }
    #[inline]
    pub fn exp64(x: f64) -> f64 {
        x.exp()
    }
    #[inline]
    pub fn ln64(x: f64) -> f64 {
        x.ln()
    }
    #[inline]
    pub fn sqrt64(x: f64) -> f64 {
        x.sqrt()
    }
    #[inline]
    pub fn cos64(x: f64) -> f64 {
        x.cos()
    }
}

#[cfg(not(feature = "std"))]
mod imp {
    #[inline]
    pub fn exp32(x: f32) -> f32 {
        libm::expf(x)
    }
    #[inline]
    pub fn tanh32(x: f32) -> f32 {
        libm::tanhf(x)
    }
    #[inline]
    pub fn sqrt32(x: f32) -> f32 {
        libm::sqrtf(x)
    }
    #[inline]
    pub fn exp64(x: f64) -> f64 {
        libm::exp(x)
    }
    #[inline]
    pub fn ln64(x: f64) -> f64 {
        libm::log(x)
    }
    #[inline]
    pub fn sqrt64(x: f64) -> f64 {
        libm::sqrt(x)
    }
    #[inline]
    pub fn cos64(x: f64) -> f64 {
        libm::cos(x)
    }
}

pub(crate) use imp::*;

#[inline]
pub(crate) fn sigmoid32(x: f32) -> f32 {
    1.0 / (1.0 + exp32(-x))
}

/// Integer power by binary exponentiation; same result on std and no_std.
pub(crate) fn powi64(mut base: f64, mut n: u64) -> f64 {
    let mut acc = 1.0;
    while n > 0 {
        if n & 1 == 1 {
            acc *= base;
        }
        base *= base;
        n >>= 1;
    }
    acc
}
