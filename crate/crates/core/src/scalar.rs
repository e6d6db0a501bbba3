//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point element type of tensors: `f32` for training runs, `f64` for
/// correctness checks.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Tag written into model and array files.
    const TAG: &'static str;
    /// IDX element type code (0x0D single, 0x0E double).
    const IDX_TYPE: u8;
    const BYTES: usize;

    /// `c = alpha * a * b + beta * c` on strided row/column layouts.
    ///
    /// `a` is `m x k`, `b` is `k x n`, `c` is `m x n`; strides are in elements.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
        c_strides: (isize, isize),
    );

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
    fn write_be(self, out: &mut Vec<u8>);
    fn read_be(bytes: &[u8]) -> Self;

    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("scalar conversion")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

#[allow(clippy::too_many_arguments)]
fn check_gemm_bounds(
    m: usize,
    k: usize,
    n: usize,
    a: usize,
    sa: (isize, isize),
    b: usize,
    sb: (isize, isize),
    c: usize,
    sc: (isize, isize),
) {
    let extent = |rows: usize, cols: usize, s: (isize, isize)| -> usize {
        if rows == 0 || cols == 0 {
            return 0;
        }
        (rows - 1) * s.0 as usize + (cols - 1) * s.1 as usize + 1
    };
    assert!(extent(m, k, sa) <= a, "gemm: lhs buffer too small");
    assert!(extent(k, n, sb) <= b, "gemm: rhs buffer too small");
    assert!(extent(m, n, sc) <= c, "gemm: output buffer too small");
}

macro_rules! impl_scalar {
    ($t:ty, $tag:expr, $code:expr, $kernel:ident) => {
        impl Scalar for $t {
            const TAG: &'static str = $tag;
            const IDX_TYPE: u8 = $code;
            const BYTES: usize = std::mem::size_of::<$t>();

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                sa: (isize, isize),
                b: &[Self],
                sb: (isize, isize),
                beta: Self,
                c: &mut [Self],
                sc: (isize, isize),
            ) {
                assert!(sa.0 >= 0 && sa.1 >= 0 && sb.0 >= 0 && sb.1 >= 0 && sc.0 >= 0 && sc.1 >= 0);
                check_gemm_bounds(m, k, n, a.len(), sa, b.len(), sb, c.len(), sc);
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: all three operands were bounds-checked against their
                // strides above and `c` is exclusively borrowed.
                unsafe {
                    matrixmultiply::$kernel(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        sa.0,
                        sa.1,
                        b.as_ptr(),
                        sb.0,
                        sb.1,
                        beta,
                        c.as_mut_ptr(),
                        sc.0,
                        sc.1,
                    );
                }
            }

            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }

            fn read_le(bytes: &[u8]) -> Self {
                <$t>::from_le_bytes(bytes.try_into().expect("scalar width"))
            }

            fn write_be(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_be_bytes());
            }

            fn read_be(bytes: &[u8]) -> Self {
                <$t>::from_be_bytes(bytes.try_into().expect("scalar width"))
            }
        }
    };
}

impl_scalar!(f32, "f32", 0x0D, sgemm);
impl_scalar!(f64, "f64", 0x0E, dgemm);

/// Sign with `sgn(0) = 0`.
#[inline]
pub fn sgn<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}
