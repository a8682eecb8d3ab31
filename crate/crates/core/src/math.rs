//! Scalar helpers backed by `libm` so results are identical on every target.

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

/// `base^e` with `0^0 = 1`.
#[inline]
pub fn powf(base: f64, e: f64) -> f64 {
    if e == 0.0 {
        1.0
    } else {
        libm::pow(base, e)
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + exp(-z))
    } else {
        let e = exp(z);
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else if z < -30.0 {
        exp(z)
    } else {
        libm::log1p(exp(z))
    }
}

/// Inverse of [`softplus`] for `y > 0`.
#[inline]
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        ln(libm::expm1(y))
    }
}

#[inline]
pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}
