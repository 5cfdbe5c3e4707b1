//! Small shared plumbing: atomic file writes and a deterministic
//! fixed-order parallel map with a configurable thread cap.

use crate::error::{Error, Result};
use std::path::Path;

/// Writes bytes to a sibling temp file and renames it over the target, so
/// a failed run never leaves a partial file behind.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Validation(format!("{} has no file name", path.display())))?;
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Environment variable capping internal parallelism; unset means
/// sequential execution.
pub const THREADS_ENV: &str = "MEMALIGN_THREADS";

/// Reads the thread cap from the environment. Unset means 1 (sequential);
/// a set value must parse as a positive integer.
pub fn thread_cap_from_env() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Err(std::env::VarError::NotPresent) => Ok(1),
        Err(std::env::VarError::NotUnicode(_)) => Err(Error::config(
            THREADS_ENV,
            "must be valid unicode",
        )),
        Ok(raw) => match raw.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::config(
                THREADS_ENV,
                format!("must be a positive integer, got {raw:?}"),
            )),
        },
    }
}

/// Applies `f` to every index in 0..n and returns the results in index
/// order. With threads > 1 the indices are processed by a chunked scoped
/// thread pool; results are identical to the sequential order because each
/// index is independent and the final collection is by index.
pub fn parallel_map_indexed<T, F>(n: usize, threads: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let threads = threads.max(1).min(n.max(1));
    if threads == 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let mut slots: Vec<Option<T>> = (0..n).map(|_| None).collect();
    let chunk = n.div_ceil(threads);
    std::thread::scope(|scope| {
        for (t, slice) in slots.chunks_mut(chunk).enumerate() {
            let f = &f;
            scope.spawn(move || {
                for (offset, slot) in slice.iter_mut().enumerate() {
                    *slot = Some(f(t * chunk + offset));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("filled by worker")).collect()
}
