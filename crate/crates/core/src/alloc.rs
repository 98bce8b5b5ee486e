//! Allocator tuning for training workloads.

/// Keeps freed large blocks in the heap instead of returning them to the
/// OS, so per-step tensors of several megabytes reuse warm pages.
///
/// No effect outside glibc targets. Call once at program start.
pub fn retain_freed_memory() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 1 << 30);
        libc::mallopt(libc::M_TRIM_THRESHOLD, i32::MAX);
        libc::mallopt(libc::M_TOP_PAD, 256 << 20);
    }
}
