//! Raw shared access to buffers written by parallel scanline workers.
//!
//! Within one direction the scanlines partition the grid, so every worker
//! writes a disjoint set of node cells and index slots. Callers uphold that
//! partition; this type only carries the pointer across threads.

use std::marker::PhantomData;

#[derive(Clone, Copy)]
pub(crate) struct SharedMut<'a, T> {
    ptr: *mut T,
    len: usize,
    _marker: PhantomData<&'a mut [T]>,
}

unsafe impl<T: Send> Send for SharedMut<'_, T> {}
unsafe impl<T: Send> Sync for SharedMut<'_, T> {}

impl<'a, T> SharedMut<'a, T> {
    pub(crate) fn new(slice: &'a mut [T]) -> Self {
        Self { ptr: slice.as_mut_ptr(), len: slice.len(), _marker: PhantomData }
    }

    /// # Safety
    /// No other live reference may alias `start..start + len` mutably.
    #[inline]
    pub(crate) unsafe fn slice(&self, start: usize, len: usize) -> &'a [T] {
        debug_assert!(start + len <= self.len);
        std::slice::from_raw_parts(self.ptr.add(start), len)
    }

    /// # Safety
    /// The caller must be the only accessor of `start..start + len`.
    #[inline]
    #[allow(clippy::mut_from_ref)]
    pub(crate) unsafe fn slice_mut(&self, start: usize, len: usize) -> &'a mut [T] {
        debug_assert!(start + len <= self.len);
        std::slice::from_raw_parts_mut(self.ptr.add(start), len)
    }
}
