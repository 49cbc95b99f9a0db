//! `f64` functions from the pure-Rust libm, so results do not depend on
//! whether `std` float intrinsics are linked.

pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

pub fn sin_cos(x: f64) -> (f64, f64) {
    libm::sincos(x)
}

pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

pub fn round(x: f64) -> f64 {
    libm::round(x)
}

pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

/// Remainder in `[0, m)`.
pub fn rem_euclid(x: f64, m: f64) -> f64 {
    let r = x - m * floor(x / m);
    if r >= m {
        0.0
    } else {
        r
    }
}

#[cfg(test)]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}
