use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float as NumFloat, FromPrimitive, ToPrimitive};

/// Scalar used by the metric, statistics and optimizer code.
///
/// Implemented for `f32` and `f64`; the crate root exposes `f64` aliases for
/// the common types.
pub trait Float:
    NumFloat + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    fn cast(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 is representable")
    }

    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count is representable")
    }

    fn half() -> Self {
        Self::cast(0.5)
    }
}

impl Float for f32 {}
impl Float for f64 {}
