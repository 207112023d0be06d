//! Checkpointable data types.
//!
//! Every entry registered with a [`Checkpoint`](crate::Checkpoint) implements
//! [`Checkpointable`]. Built-in implementations cover scalars, arrays,
//! single-column views of two-dimensional arrays and opaque packed buffers.
//! User-defined types either implement the trait directly or go through
//! [`CustomEntry`].

mod element;
mod entries;
pub mod format;

use std::fmt;
use std::sync::Arc;

use parking_lot::{RwLock, RwLockReadGuard, RwLockWriteGuard};

pub use element::{ElemTag, Element};
pub use entries::{Array, CustomEntry, MultiArray, Packed, Scalar};

use crate::error::FormatError;

/// Contract for data that can be written to and restored from a checkpoint.
///
/// `write_to` serializes the shadow copy when one has been enabled and the
/// live data otherwise. `update` refreshes the shadow copy from the live data;
/// it is only called for asynchronous copy-mode checkpoints.
pub trait Checkpointable: Send + Sync + 'static {
    fn write_to(&self, out: &mut Vec<u8>);

    fn read_from(&mut self, bytes: &[u8]) -> Result<(), FormatError>;

    fn update(&mut self) {}

    /// Whether `update` maintains a shadow copy.
    fn supports_update(&self) -> bool {
        false
    }

    /// Allocate the shadow copy. Called once, when the entry is added to an
    /// asynchronous copy-mode checkpoint.
    fn enable_shadow(&mut self) {}
}

/// Handle shared between the application and the checkpoint holding an entry.
pub struct Shared<T: ?Sized>(Arc<RwLock<T>>);

impl<T> Shared<T> {
    pub fn new(value: T) -> Self {
        Shared(Arc::new(RwLock::new(value)))
    }
}

impl<T: ?Sized> Shared<T> {
    pub fn read(&self) -> RwLockReadGuard<'_, T> {
        self.0.read()
    }

    pub fn write(&self) -> RwLockWriteGuard<'_, T> {
        self.0.write()
    }
}

impl<T: Checkpointable> Shared<T> {
    pub(crate) fn erase(&self) -> Shared<dyn Checkpointable> {
        let arc: Arc<RwLock<dyn Checkpointable>> = self.0.clone();
        Shared(arc)
    }
}

impl<T: ?Sized> Clone for Shared<T> {
    fn clone(&self) -> Self {
        Shared(self.0.clone())
    }
}

impl<T: ?Sized + fmt::Debug> fmt::Debug for Shared<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("Shared").field(&&*self.0.read()).finish()
    }
}

/// Serialize an entry into a standalone record.
pub fn serialize_entry(entry: &dyn Checkpointable) -> Vec<u8> {
    let mut out = Vec::new();
    entry.write_to(&mut out);
    out
}

/// Restore an entry from a record produced by [`serialize_entry`].
pub fn deserialize_entry(bytes: &[u8], target: &mut dyn Checkpointable) -> Result<(), FormatError> {
    target.read_from(bytes)
}
