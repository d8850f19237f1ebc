use std::fmt::{Debug, Display};
use std::str::FromStr;

use num_traits::Float;

/// Floating element kind stored in a [`Tensor`](crate::Tensor).
///
/// Training runs in `f32`; gradient checks and oracle comparisons run in `f64`.
pub trait Scalar:
    Float + Default + Debug + Display + FromStr + Send + Sync + std::iter::Sum + 'static
{
    const NAME: &'static str;

    fn lit(v: f64) -> Self;

    fn as_f64(self) -> f64;

    /// `c = alpha * a * b + beta * c` for row-major matrices with explicit
    /// row strides (`a` is m x k, `b` is k x n, `c` is m x n).
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_rs: isize,
        a_cs: isize,
        b: &[Self],
        b_rs: isize,
        b_cs: isize,
        beta: Self,
        c: &mut [Self],
    );
}

macro_rules! impl_scalar {
    ($t:ty, $name:literal, $kernel:path) => {
        impl Scalar for $t {
            const NAME: &'static str = $name;

            #[inline]
            fn lit(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_rs: isize,
                a_cs: isize,
                b: &[Self],
                b_rs: isize,
                b_cs: isize,
                beta: Self,
                c: &mut [Self],
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                assert!(c.len() >= m * n, "gemm: output buffer too small");
                if k > 0 {
                    assert!(span(m, k, a_rs, a_cs) <= a.len(), "gemm: lhs out of bounds");
                    assert!(span(k, n, b_rs, b_cs) <= b.len(), "gemm: rhs out of bounds");
                }
                // SAFETY: strided extents of all three operands are bounds-checked above.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        a_rs,
                        a_cs,
                        b.as_ptr(),
                        b_rs,
                        b_cs,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, "f32", matrixmultiply::sgemm);
impl_scalar!(f64, "f64", matrixmultiply::dgemm);

fn span(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    assert!(rs >= 0 && cs >= 0, "gemm: negative strides unsupported");
    (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
}
