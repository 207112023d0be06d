use std::fmt;
use std::ops::{Deref, DerefMut, Index, IndexMut};

use super::element::{get_into, put_slice, ElemTag, Element};
use super::format::{self, EntryKind, RecordHeader};
use super::Checkpointable;
use crate::error::FormatError;

/// A single value.
#[derive(Debug, Clone, PartialEq)]
pub struct Scalar<T: Element> {
    value: T,
    shadow: Option<T>,
}

impl<T: Element> Scalar<T> {
    pub fn new(value: T) -> Self {
        Scalar { value, shadow: None }
    }

    pub fn get(&self) -> T {
        self.value
    }

    pub fn set(&mut self, value: T) {
        self.value = value;
    }

    pub fn shadow(&self) -> Option<T> {
        self.shadow
    }

    fn header() -> RecordHeader {
        RecordHeader { kind: EntryKind::Scalar, elem: T::TAG, dim0: 1, dim1: 1, column: -1 }
    }
}

impl<T: Element> Deref for Scalar<T> {
    type Target = T;
    fn deref(&self) -> &T {
        &self.value
    }
}

impl<T: Element> DerefMut for Scalar<T> {
    fn deref_mut(&mut self) -> &mut T {
        &mut self.value
    }
}

impl<T: Element> Checkpointable for Scalar<T> {
    fn write_to(&self, out: &mut Vec<u8>) {
        let mut payload = Vec::with_capacity(T::SIZE);
        self.shadow.unwrap_or(self.value).put(&mut payload);
        format::encode(&Self::header(), &payload, out);
    }

    fn read_from(&mut self, bytes: &[u8]) -> Result<(), FormatError> {
        let payload = format::decode_expect(bytes, &Self::header())?;
        self.value = T::get(payload);
        Ok(())
    }

    fn update(&mut self) {
        if self.shadow.is_some() {
            self.shadow = Some(self.value);
        }
    }

    fn supports_update(&self) -> bool {
        true
    }

    fn enable_shadow(&mut self) {
        self.shadow = Some(self.value);
    }
}

/// A contiguous, fixed-length sequence of elements.
#[derive(Debug, Clone, PartialEq)]
pub struct Array<T: Element> {
    data: Vec<T>,
    shadow: Option<Vec<T>>,
}

impl<T: Element> Array<T> {
    /// # Panics
    /// If `data` is empty.
    pub fn new(data: Vec<T>) -> Self {
        assert!(!data.is_empty(), "checkpointed arrays must be non-empty");
        Array { data, shadow: None }
    }

    pub fn zeroed(len: usize) -> Self {
        Self::new(vec![T::default(); len])
    }

    pub fn shadow(&self) -> Option<&[T]> {
        self.shadow.as_deref()
    }

    pub fn into_inner(self) -> Vec<T> {
        self.data
    }

    fn header(&self) -> RecordHeader {
        RecordHeader {
            kind: EntryKind::Array,
            elem: T::TAG,
            dim0: self.data.len() as u64,
            dim1: 1,
            column: -1,
        }
    }
}

impl<T: Element> Deref for Array<T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        &self.data
    }
}

impl<T: Element> DerefMut for Array<T> {
    fn deref_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
}

impl<T: Element> Checkpointable for Array<T> {
    fn write_to(&self, out: &mut Vec<u8>) {
        let src = self.shadow.as_deref().unwrap_or(&self.data);
        let mut payload = Vec::new();
        put_slice(src, &mut payload);
        format::encode(&self.header(), &payload, out);
    }

    fn read_from(&mut self, bytes: &[u8]) -> Result<(), FormatError> {
        let payload = format::decode_expect(bytes, &self.header())?;
        get_into(payload, &mut self.data);
        Ok(())
    }

    fn update(&mut self) {
        if let Some(shadow) = self.shadow.as_mut() {
            shadow.copy_from_slice(&self.data);
        }
    }

    fn supports_update(&self) -> bool {
        true
    }

    fn enable_shadow(&mut self) {
        self.shadow = Some(self.data.clone());
    }
}

/// An `rows × cols` matrix in row-major order, optionally checkpointing only a
/// single column.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiArray<T: Element> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
    column: Option<usize>,
    shadow: Option<Vec<T>>,
}

impl<T: Element> MultiArray<T> {
    /// `column = None` checkpoints every column.
    ///
    /// # Panics
    /// If the shape is empty, `data` does not match it, or `column` is out of
    /// range.
    pub fn new(rows: usize, cols: usize, data: Vec<T>, column: Option<usize>) -> Self {
        assert!(rows > 0 && cols > 0, "empty multi-array");
        assert_eq!(data.len(), rows * cols, "data does not match {rows}x{cols}");
        if let Some(c) = column {
            assert!(c < cols, "column {c} out of range for {cols} columns");
        }
        MultiArray { rows, cols, data, column, shadow: None }
    }

    pub fn zeroed(rows: usize, cols: usize, column: Option<usize>) -> Self {
        Self::new(rows, cols, vec![T::default(); rows * cols], column)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn selected_column(&self) -> Option<usize> {
        self.column
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn column(&self, c: usize) -> Vec<T> {
        (0..self.rows).map(|r| self.data[r * self.cols + c]).collect()
    }

    /// The region that gets checkpointed, in payload order.
    fn selected(&self) -> Vec<T> {
        match self.column {
            Some(c) => self.column(c),
            None => self.data.clone(),
        }
    }

    fn header(&self) -> RecordHeader {
        RecordHeader {
            kind: EntryKind::MultiArray,
            elem: T::TAG,
            dim0: self.rows as u64,
            dim1: self.cols as u64,
            column: self.column.map_or(-1, |c| c as i64),
        }
    }
}

impl<T: Element> Index<(usize, usize)> for MultiArray<T> {
    type Output = T;
    fn index(&self, (r, c): (usize, usize)) -> &T {
        assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl<T: Element> IndexMut<(usize, usize)> for MultiArray<T> {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

impl<T: Element> Checkpointable for MultiArray<T> {
    fn write_to(&self, out: &mut Vec<u8>) {
        let mut payload = Vec::new();
        match &self.shadow {
            Some(s) => put_slice(s, &mut payload),
            None => put_slice(&self.selected(), &mut payload),
        }
        format::encode(&self.header(), &payload, out);
    }

    fn read_from(&mut self, bytes: &[u8]) -> Result<(), FormatError> {
        let payload = format::decode_expect(bytes, &self.header())?;
        match self.column {
            None => get_into(payload, &mut self.data),
            Some(c) => {
                for (r, chunk) in payload.chunks_exact(T::SIZE).enumerate() {
                    self.data[r * self.cols + c] = T::get(chunk);
                }
            }
        }
        Ok(())
    }

    fn update(&mut self) {
        if self.shadow.is_some() {
            self.shadow = Some(self.selected());
        }
    }

    fn supports_update(&self) -> bool {
        true
    }

    fn enable_shadow(&mut self) {
        self.shadow = Some(self.selected());
    }
}

type PackFn = Box<dyn Fn() -> Vec<u8> + Send + Sync>;
type UnpackFn = Box<dyn FnMut(&[u8]) -> Result<(), String> + Send + Sync>;

/// Opaque bytes produced by a caller-supplied `pack` function and consumed by
/// the matching `unpack`.
pub struct Packed {
    pack: PackFn,
    unpack: UnpackFn,
    declared_size: usize,
    shadow: Option<Vec<u8>>,
}

impl Packed {
    /// `declared_size` bounds the output of `pack`.
    pub fn new(
        declared_size: usize,
        pack: impl Fn() -> Vec<u8> + Send + Sync + 'static,
        unpack: impl FnMut(&[u8]) -> Result<(), String> + Send + Sync + 'static,
    ) -> Self {
        Packed { pack: Box::new(pack), unpack: Box::new(unpack), declared_size, shadow: None }
    }

    pub fn declared_size(&self) -> usize {
        self.declared_size
    }

    fn header(&self) -> RecordHeader {
        RecordHeader {
            kind: EntryKind::Packed,
            elem: ElemTag::Bytes,
            dim0: self.declared_size as u64,
            dim1: 1,
            column: -1,
        }
    }

    fn packed(&self) -> Vec<u8> {
        let bytes = (self.pack)();
        assert!(
            bytes.len() <= self.declared_size,
            "pack produced {} bytes, more than the declared {}",
            bytes.len(),
            self.declared_size
        );
        bytes
    }
}

impl fmt::Debug for Packed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Packed").field("declared_size", &self.declared_size).finish_non_exhaustive()
    }
}

impl Checkpointable for Packed {
    fn write_to(&self, out: &mut Vec<u8>) {
        match &self.shadow {
            Some(s) => format::encode(&self.header(), s, out),
            None => format::encode(&self.header(), &self.packed(), out),
        }
    }

    fn read_from(&mut self, bytes: &[u8]) -> Result<(), FormatError> {
        let payload = format::decode_expect(bytes, &self.header())?;
        (self.unpack)(payload).map_err(FormatError::Malformed)
    }

    fn update(&mut self) {
        if self.shadow.is_some() {
            self.shadow = Some(self.packed());
        }
    }

    fn supports_update(&self) -> bool {
        true
    }

    fn enable_shadow(&mut self) {
        self.shadow = Some(self.packed());
    }
}

type WriteFn<T> = Box<dyn Fn(&T, &mut Vec<u8>) + Send + Sync>;
type ReadFn<T> = Box<dyn Fn(&mut T, &[u8]) -> Result<(), FormatError> + Send + Sync>;
type CopyFn<T> = Box<dyn Fn(&T) -> T + Send + Sync>;

/// Adapter turning any value plus read/write (and optionally update)
/// functions into a checkpointable entry.
///
/// The write function produces the raw payload; the adapter adds the record
/// header and checksum. Without an update function the entry cannot be used
/// by asynchronous copy-mode checkpoints.
pub struct CustomEntry<T: Send + Sync + 'static> {
    live: T,
    shadow: Option<T>,
    write: WriteFn<T>,
    read: ReadFn<T>,
    copy: Option<CopyFn<T>>,
}

impl<T: Send + Sync + 'static> CustomEntry<T> {
    pub fn new(
        live: T,
        write: impl Fn(&T, &mut Vec<u8>) + Send + Sync + 'static,
        read: impl Fn(&mut T, &[u8]) -> Result<(), FormatError> + Send + Sync + 'static,
    ) -> Self {
        CustomEntry { live, shadow: None, write: Box::new(write), read: Box::new(read), copy: None }
    }

    /// Supply the function that refreshes the shadow copy from live data.
    pub fn with_update(mut self, copy: impl Fn(&T) -> T + Send + Sync + 'static) -> Self {
        self.copy = Some(Box::new(copy));
        self
    }
}

impl<T: Send + Sync + 'static> Deref for CustomEntry<T> {
    type Target = T;
    fn deref(&self) -> &T {
        &self.live
    }
}

impl<T: Send + Sync + 'static> DerefMut for CustomEntry<T> {
    fn deref_mut(&mut self) -> &mut T {
        &mut self.live
    }
}

impl<T: Send + Sync + 'static> Checkpointable for CustomEntry<T> {
    fn write_to(&self, out: &mut Vec<u8>) {
        let mut payload = Vec::new();
        (self.write)(self.shadow.as_ref().unwrap_or(&self.live), &mut payload);
        format::encode_custom(&payload, out);
    }

    fn read_from(&mut self, bytes: &[u8]) -> Result<(), FormatError> {
        let payload = format::decode_custom(bytes)?;
        (self.read)(&mut self.live, payload)
    }

    fn update(&mut self) {
        if let (Some(copy), Some(_)) = (&self.copy, &self.shadow) {
            self.shadow = Some(copy(&self.live));
        }
    }

    fn supports_update(&self) -> bool {
        self.copy.is_some()
    }

    fn enable_shadow(&mut self) {
        if let Some(copy) = &self.copy {
            self.shadow = Some(copy(&self.live));
        }
    }
}
