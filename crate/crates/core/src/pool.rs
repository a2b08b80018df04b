//! Work-stealing worker pools shared by both engines.

use rayon::{ThreadPool, ThreadPoolBuilder};

/// Builds a pool of `workers` threads. With `pin`, worker `i` is bound to
/// CPU `i mod ncpu` (Linux only; elsewhere the flag is ignored).
pub fn build(workers: usize, pin: bool, name: &'static str) -> Result<ThreadPool, String> {
    let mut builder = ThreadPoolBuilder::new()
        .num_threads(workers)
        .thread_name(move |i| format!("{name}-{i}"));
    if pin {
        builder = builder.start_handler(pin_current);
    }
    builder.build().map_err(|e| e.to_string())
}

#[cfg(target_os = "linux")]
fn pin_current(index: usize) {
    let ncpu = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    // SAFETY: cpu_set_t is plain data; sched_setaffinity only reads it.
    unsafe {
        let mut set: libc::cpu_set_t = std::mem::zeroed();
        libc::CPU_SET(index % ncpu, &mut set);
        libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &set);
    }
}

#[cfg(not(target_os = "linux"))]
fn pin_current(_index: usize) {}

pub fn hardware_threads() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}
