use std::fmt::Debug;

use num_complex::{Complex32, Complex64};

/// Element type tag stored in every record header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum ElemTag {
    Bytes = 0,
    I32 = 1,
    I64 = 2,
    F32 = 3,
    F64 = 4,
    C64 = 5,
    C128 = 6,
}

impl ElemTag {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            0 => ElemTag::Bytes,
            1 => ElemTag::I32,
            2 => ElemTag::I64,
            3 => ElemTag::F32,
            4 => ElemTag::F64,
            5 => ElemTag::C64,
            6 => ElemTag::C128,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            ElemTag::Bytes => "bytes",
            ElemTag::I32 => "i32",
            ElemTag::I64 => "i64",
            ElemTag::F32 => "f32",
            ElemTag::F64 => "f64",
            ElemTag::C64 => "complex<f32>",
            ElemTag::C128 => "complex<f64>",
        }
    }
}

/// Plain-old-data element with a fixed little-endian encoding.
///
/// Floats are encoded through their bit patterns so NaN payloads survive a
/// round trip. Complex values are stored as `(re, im)`.
pub trait Element: Copy + Default + Debug + PartialEq + Send + Sync + 'static {
    const TAG: ElemTag;
    const SIZE: usize;

    fn put(&self, out: &mut Vec<u8>);

    /// Decode from exactly `SIZE` bytes.
    fn get(bytes: &[u8]) -> Self;

    /// Bit-level equality (distinguishes NaN payloads and signed zeros).
    fn bit_eq(&self, other: &Self) -> bool {
        let mut a = Vec::with_capacity(Self::SIZE);
        let mut b = Vec::with_capacity(Self::SIZE);
        self.put(&mut a);
        other.put(&mut b);
        a == b
    }
}

macro_rules! int_element {
    ($t:ty, $tag:expr) => {
        impl Element for $t {
            const TAG: ElemTag = $tag;
            const SIZE: usize = std::mem::size_of::<$t>();

            fn put(&self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }

            fn get(bytes: &[u8]) -> Self {
                <$t>::from_le_bytes(bytes.try_into().expect("element width"))
            }
        }
    };
}

int_element!(i32, ElemTag::I32);
int_element!(i64, ElemTag::I64);

impl Element for f32 {
    const TAG: ElemTag = ElemTag::F32;
    const SIZE: usize = 4;

    fn put(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_bits().to_le_bytes());
    }

    fn get(bytes: &[u8]) -> Self {
        f32::from_bits(u32::from_le_bytes(bytes.try_into().expect("element width")))
    }
}

impl Element for f64 {
    const TAG: ElemTag = ElemTag::F64;
    const SIZE: usize = 8;

    fn put(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_bits().to_le_bytes());
    }

    fn get(bytes: &[u8]) -> Self {
        f64::from_bits(u64::from_le_bytes(bytes.try_into().expect("element width")))
    }
}

impl Element for Complex32 {
    const TAG: ElemTag = ElemTag::C64;
    const SIZE: usize = 8;

    fn put(&self, out: &mut Vec<u8>) {
        self.re.put(out);
        self.im.put(out);
    }

    fn get(bytes: &[u8]) -> Self {
        Complex32::new(f32::get(&bytes[..4]), f32::get(&bytes[4..8]))
    }
}

impl Element for Complex64 {
    const TAG: ElemTag = ElemTag::C128;
    const SIZE: usize = 16;

    fn put(&self, out: &mut Vec<u8>) {
        self.re.put(out);
        self.im.put(out);
    }

    fn get(bytes: &[u8]) -> Self {
        Complex64::new(f64::get(&bytes[..8]), f64::get(&bytes[8..16]))
    }
}

pub(crate) fn put_slice<T: Element>(items: &[T], out: &mut Vec<u8>) {
    out.reserve(items.len() * T::SIZE);
    for x in items {
        x.put(out);
    }
}

pub(crate) fn get_into<T: Element>(bytes: &[u8], dst: &mut [T]) {
    debug_assert_eq!(bytes.len(), dst.len() * T::SIZE);
    for (d, chunk) in dst.iter_mut().zip(bytes.chunks_exact(T::SIZE)) {
        *d = T::get(chunk);
    }
}
