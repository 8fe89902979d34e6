//! Page-aligned read buffers and unbuffered file access.

use std::alloc::{alloc_zeroed, dealloc, Layout};
use std::fs::{File, OpenOptions};
use std::io;
use std::ops::{Deref, DerefMut};
use std::os::unix::fs::FileExt;
use std::path::Path;
use std::ptr::NonNull;

pub(crate) const ALIGNMENT: usize = 4096;

/// Zero-initialized heap buffer aligned to [`ALIGNMENT`].
pub struct AlignedBuf {
    ptr: NonNull<u8>,
    len: usize,
}

// The buffer owns its allocation exclusively.
unsafe impl Send for AlignedBuf {}
unsafe impl Sync for AlignedBuf {}

impl AlignedBuf {
    pub fn zeroed(len: usize) -> Self {
        assert!(len > 0, "aligned buffer must not be empty");
        let layout = Layout::from_size_align(len, ALIGNMENT).expect("valid buffer layout");
        // SAFETY: layout has non-zero size.
        let raw = unsafe { alloc_zeroed(layout) };
        let ptr = NonNull::new(raw).unwrap_or_else(|| std::alloc::handle_alloc_error(layout));
        Self { ptr, len }
    }
}

impl Drop for AlignedBuf {
    fn drop(&mut self) {
        let layout = Layout::from_size_align(self.len, ALIGNMENT).unwrap();
        // SAFETY: allocated in `zeroed` with this exact layout.
        unsafe { dealloc(self.ptr.as_ptr(), layout) }
    }
}

impl Deref for AlignedBuf {
    type Target = [u8];

    fn deref(&self) -> &[u8] {
        // SAFETY: ptr is valid for len initialized bytes.
        unsafe { std::slice::from_raw_parts(self.ptr.as_ptr(), self.len) }
    }
}

impl DerefMut for AlignedBuf {
    fn deref_mut(&mut self) -> &mut [u8] {
        // SAFETY: ptr is valid for len bytes and uniquely borrowed.
        unsafe { std::slice::from_raw_parts_mut(self.ptr.as_ptr(), self.len) }
    }
}

impl std::fmt::Debug for AlignedBuf {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AlignedBuf").field("len", &self.len).finish()
    }
}

#[cfg(target_os = "linux")]
fn open_direct(path: &Path) -> io::Result<File> {
    use std::os::unix::fs::OpenOptionsExt;
    OpenOptions::new().read(true).custom_flags(libc::O_DIRECT).open(path)
}

#[cfg(not(target_os = "linux"))]
fn open_direct(_path: &Path) -> io::Result<File> {
    Err(io::Error::from(io::ErrorKind::Unsupported))
}

/// Opens `path` bypassing the page cache when the filesystem allows it.
///
/// A probe read of `probe_len` bytes at offset 0 decides; on failure the
/// file is reopened buffered. Returns the file and whether it is direct.
pub(crate) fn open_for_blocks(path: &Path, probe_len: usize, want_direct: bool) -> io::Result<(File, bool)> {
    if want_direct && probe_len.is_multiple_of(ALIGNMENT) {
        if let Ok(file) = open_direct(path) {
            let mut probe = AlignedBuf::zeroed(probe_len);
            if file.read_exact_at(&mut probe, 0).is_ok() {
                return Ok((file, true));
            }
        }
        log::debug!("unbuffered reads unavailable for {}, using the page cache", path.display());
    }
    Ok((File::open(path)?, false))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn buffer_is_aligned_and_zeroed() {
        let mut buf = AlignedBuf::zeroed(8192);
        assert_eq!(buf.as_ptr() as usize % ALIGNMENT, 0);
        assert!(buf.iter().all(|&b| b == 0));
        buf[8191] = 7;
        assert_eq!(buf[8191], 7);
        assert_eq!(buf.len(), 8192);
    }

    #[test]
    fn open_falls_back_or_goes_direct() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("blocks");
        std::fs::write(&path, vec![3u8; 2 * ALIGNMENT]).unwrap();
        let (file, _direct) = open_for_blocks(&path, ALIGNMENT, true).unwrap();
        let mut buf = AlignedBuf::zeroed(ALIGNMENT);
        file.read_exact_at(&mut buf, ALIGNMENT as u64).unwrap();
        assert!(buf.iter().all(|&b| b == 3));
        let (_, direct) = open_for_blocks(&path, 100, true).unwrap();
        assert!(!direct);
    }
}
