// Routed through num-traits so the same code builds against std or libm.

#[inline]
pub(crate) fn exp(x: f64) -> f64 {
    num_traits::Float::exp(x)
}

#[inline]
pub(crate) fn ln(x: f64) -> f64 {
    num_traits::Float::ln(x)
}

#[inline]
pub(crate) fn sqrt(x: f64) -> f64 {
    num_traits::Float::sqrt(x)
}
