use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating-point scalar the value recursion can run on.
pub trait Real:
    Float + FromPrimitive + NumAssign + Sum + Debug + Display + Send + Sync + 'static
{
    /// Absolute tolerance for treating two action values as tied.
    const TIE_TOL: f64;

    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl Real for f64 {
    const TIE_TOL: f64 = 1e-10;
}

// f32 accumulates ~1e-7 relative rounding per layer, so exact ties drift further apart.
impl Real for f32 {
    const TIE_TOL: f64 = 1e-5;
}
