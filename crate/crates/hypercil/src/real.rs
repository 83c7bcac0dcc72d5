use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

/// Floating-point scalar the geometry and autodiff cores are generic over:
/// f32 or f64.
pub trait Real: Float + FromPrimitive + Debug + Display + LowerExp + Sum + 'static {
    /// Conversion from an f64 constant; total for f32/f64.
    fn of(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite f64 constant")
    }
}

impl<T> Real for T where T: Float + FromPrimitive + Debug + Display + LowerExp + Sum + 'static {}
