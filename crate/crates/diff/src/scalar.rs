use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Element type code used by the binary array container.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 1,
    F64 = 2,
    U8 = 3,
    U32 = 4,
}

impl DType {
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(DType::F32),
            2 => Some(DType::F64),
            3 => Some(DType::U8),
            4 => Some(DType::U32),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 | DType::U32 => 4,
            DType::F64 => 8,
            DType::U8 => 1,
        }
    }
}

/// Floating point element: f32 or f64.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    const DTYPE: DType;

    /// Converts a literal; every f64 is representable (possibly rounded).
    fn lit(v: f64) -> Self;

    fn f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn write_le(self, out: &mut Vec<u8>);

    fn read_le(bytes: &[u8]) -> Self;

    /// `c[m,n] = a[m,k] · b[k,n]` over strided operands; `c` is overwritten.
    #[allow(clippy::too_many_arguments)]
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], a_s: (isize, isize), b: &[Self], b_s: (isize, isize), c: &mut [Self]);
}

impl Scalar for f32 {
    const DTYPE: DType = DType::F32;

    fn lit(v: f64) -> Self {
        v as f32
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"))
    }

    fn gemm(m: usize, k: usize, n: usize, a: &[Self], a_s: (isize, isize), b: &[Self], b_s: (isize, isize), c: &mut [Self]) {
        assert!(c.len() >= m * n);
        if m == 0 || n == 0 {
            return;
        }
        if k == 0 {
            c[..m * n].fill(0.0);
            return;
        }
        let span = |rows: usize, cols: usize, s: (isize, isize)| (rows - 1) as isize * s.0 + (cols - 1) as isize * s.1;
        assert!(span(m, k, a_s) < a.len() as isize && span(k, n, b_s) < b.len() as isize);
        // SAFETY: the asserts above keep every strided access inside the slices.
        unsafe {
            matrixmultiply::sgemm(m, k, n, 1.0, a.as_ptr(), a_s.0, a_s.1, b.as_ptr(), b_s.0, b_s.1, 0.0, c.as_mut_ptr(), n as isize, 1);
        }
    }
}

impl Scalar for f64 {
    const DTYPE: DType = DType::F64;

    fn lit(v: f64) -> Self {
        v
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
    }

    fn gemm(m: usize, k: usize, n: usize, a: &[Self], a_s: (isize, isize), b: &[Self], b_s: (isize, isize), c: &mut [Self]) {
        assert!(c.len() >= m * n);
        if m == 0 || n == 0 {
            return;
        }
        if k == 0 {
            c[..m * n].fill(0.0);
            return;
        }
        let span = |rows: usize, cols: usize, s: (isize, isize)| (rows - 1) as isize * s.0 + (cols - 1) as isize * s.1;
        assert!(span(m, k, a_s) < a.len() as isize && span(k, n, b_s) < b.len() as isize);
        // SAFETY: the asserts above keep every strided access inside the slices.
        unsafe {
            matrixmultiply::dgemm(m, k, n, 1.0, a.as_ptr(), a_s.0, a_s.1, b.as_ptr(), b_s.0, b_s.1, 0.0, c.as_mut_ptr(), n as isize, 1);
        }
    }
}
