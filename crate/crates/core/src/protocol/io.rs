//! Atomic file commits and a write counter for crash injection.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

/// Writes to `<path>.tmp`, fsyncs, then renames over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    if let Some(dir) = path.parent() {
        if let Ok(d) = File::open(dir) {
            let _ = d.sync_all();
        }
    }
    Ok(())
}

/// Appends `bytes` and fsyncs.
pub fn append_sync(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(bytes)?;
    f.sync_all()
}

/// Every protocol write goes through here. With `crash_at = Some(n)` the
/// n-th write (1-based) and all later ones fail without touching disk,
/// simulating a process killed right after write `n - 1` committed.
#[derive(Clone, Debug, Default)]
pub struct Storage {
    crash_at: Option<usize>,
    writes: Arc<AtomicUsize>,
}

pub const CRASH_MESSAGE: &str = "injected crash";

impl Storage {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn crash_at(n: usize) -> Self {
        Self {
            crash_at: Some(n),
            writes: Arc::default(),
        }
    }

    /// Writes attempted so far (including the failing one).
    pub fn writes(&self) -> usize {
        self.writes.load(Ordering::SeqCst)
    }

    fn tick(&self) -> io::Result<()> {
        let n = self.writes.fetch_add(1, Ordering::SeqCst) + 1;
        match self.crash_at {
            Some(c) if n >= c => Err(io::Error::other(CRASH_MESSAGE)),
            _ => Ok(()),
        }
    }

    pub fn write(&self, path: &Path, bytes: &[u8]) -> io::Result<()> {
        self.tick()?;
        atomic_write(path, bytes)
    }

    pub fn append(&self, path: &Path, bytes: &[u8]) -> io::Result<()> {
        self.tick()?;
        append_sync(path, bytes)
    }
}

pub fn is_injected_crash(e: &io::Error) -> bool {
    e.to_string() == CRASH_MESSAGE
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_and_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.json");
        atomic_write(&p, b"one").unwrap();
        atomic_write(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn storage_fails_from_the_nth_write() {
        let dir = tempfile::tempdir().unwrap();
        let s = Storage::crash_at(2);
        s.write(&dir.path().join("x"), b"1").unwrap();
        let e = s.write(&dir.path().join("y"), b"2").unwrap_err();
        assert!(is_injected_crash(&e));
        assert!(!dir.path().join("y").exists());
        assert!(s.append(&dir.path().join("z"), b"3").is_err());
    }
}
