use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Scalar bound for the numeric kernels: `f32` or `f64`.
pub trait Float:
    num_traits::Float + num_traits::FromPrimitive + num_traits::NumAssign + Sum + Debug + Display + 'static
{
    fn from_f(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant representable")
    }
    fn from_n(n: usize) -> Self {
        Self::from_usize(n).expect("count representable")
    }
}

impl Float for f32 {}
impl Float for f64 {}
