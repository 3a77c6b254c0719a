//! Thread-local allocation metering.
//!
//! [`CountingAllocator`] wraps the system allocator and tracks per-thread
//! live bytes and their high-water mark, so a measurement on one thread is
//! immune to allocations made by concurrently running tests or worker
//! threads. Binaries that want measurements register it:
//!
//! ```ignore
//! #[global_allocator]
//! static ALLOC: pape_harness::alloc_meter::CountingAllocator =
//!     pape_harness::alloc_meter::CountingAllocator;
//! ```
//!
//! Without that registration [`is_active`] stays false and measured peaks
//! read zero; callers must treat such measurements as unavailable rather
//! than as evidence.

use std::alloc::{GlobalAlloc, Layout, System};
use std::cell::Cell;
use std::sync::atomic::{AtomicBool, Ordering};

static ACTIVE: AtomicBool = AtomicBool::new(false);

thread_local! {
    static CURRENT: Cell<usize> = const { Cell::new(0) };
    static PEAK: Cell<usize> = const { Cell::new(0) };
}

pub struct CountingAllocator;

fn on_alloc(size: usize) {
    let _ = CURRENT.try_with(|c| {
        let v = c.get().saturating_add(size);
        c.set(v);
        let _ = PEAK.try_with(|p| {
            if v > p.get() {
                p.set(v);
            }
        });
    });
}

fn on_dealloc(size: usize) {
    let _ = CURRENT.try_with(|c| c.set(c.get().saturating_sub(size)));
}

unsafe impl GlobalAlloc for CountingAllocator {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        ACTIVE.store(true, Ordering::Relaxed);
        let p = System.alloc(layout);
        if !p.is_null() {
            on_alloc(layout.size());
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        on_dealloc(layout.size());
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        ACTIVE.store(true, Ordering::Relaxed);
        let p = System.alloc_zeroed(layout);
        if !p.is_null() {
            on_alloc(layout.size());
        }
        p
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = System.realloc(ptr, layout, new_size);
        if !p.is_null() {
            on_dealloc(layout.size());
            on_alloc(new_size);
        }
        p
    }
}

/// Whether the counting allocator is registered in this binary.
pub fn is_active() -> bool {
    ACTIVE.load(Ordering::Relaxed)
}

/// Peak extra bytes allocated on this thread while running `f`, relative to
/// the live bytes at entry. Zero when the allocator is not registered.
pub fn measure_peak<R>(f: impl FnOnce() -> R) -> (R, usize) {
    let start = CURRENT.with(|c| c.get());
    PEAK.with(|p| p.set(start));
    let result = f();
    let peak = PEAK.with(|p| p.get());
    (result, peak.saturating_sub(start))
}
