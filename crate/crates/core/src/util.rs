//! Small helpers shared across modules.

use std::fs::{self, File};
use std::io;
use std::path::{Path, PathBuf};

/// 64-bit FNV-1a. Used for lock-file names, scratch directory names and
/// tree digests; not for anything adversarial.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn path_key(path: &Path) -> u64 {
    let canonical = fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf());
    fnv1a(canonical.as_os_str().as_encoded_bytes())
}

/// Exclusive advisory lock keyed by a path. Released on drop.
///
/// Backed by `flock`, so two guards for the same key conflict even inside one
/// process (each guard opens its own file description).
#[derive(Debug)]
pub struct PathLock {
    _file: File,
    path: PathBuf,
}

impl PathLock {
    pub fn acquire(key: &Path, purpose: &str) -> io::Result<Self> {
        let dir = std::env::temp_dir().join("taskforge-locks");
        fs::create_dir_all(&dir)?;
        let path = dir.join(format!("{:016x}.{purpose}.lock", path_key(key)));
        let file = File::options().create(true).truncate(false).write(true).open(&path)?;
        file.lock()?;
        Ok(Self { _file: file, path })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Keeps at most `cap` bytes of `text`, cutting on a char boundary and
/// appending a marker with the number of dropped bytes.
pub fn truncate_text(text: &str, cap: usize) -> String {
    if text.len() <= cap {
        return text.to_string();
    }
    let mut end = cap;
    while !text.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}\n[truncated {} bytes]", &text[..end], text.len() - end)
}

/// Last `cap` bytes of `text`, for stderr tails.
pub fn tail_text(text: &str, cap: usize) -> String {
    if text.len() <= cap {
        return text.to_string();
    }
    let mut start = text.len() - cap;
    while !text.is_char_boundary(start) {
        start += 1;
    }
    format!("[{} bytes omitted]\n{}", start, &text[start..])
}

/// Recursively copies `src` into `dst`, creating `dst`.
pub fn copy_dir(src: &Path, dst: &Path) -> io::Result<()> {
    fs::create_dir_all(dst)?;
    for entry in walkdir::WalkDir::new(src).min_depth(1).sort_by_file_name() {
        let entry = entry.map_err(io::Error::other)?;
        let rel = entry.path().strip_prefix(src).expect("walk stays under root");
        let target = dst.join(rel);
        if entry.file_type().is_dir() {
            fs::create_dir_all(&target)?;
        } else if entry.file_type().is_file() {
            fs::copy(entry.path(), &target)?;
        }
    }
    Ok(())
}

/// Relative path -> content hash for every regular file under `root`.
pub fn tree_digest(root: &Path) -> io::Result<std::collections::BTreeMap<String, u64>> {
    let mut out = std::collections::BTreeMap::new();
    if !root.is_dir() {
        return Ok(out);
    }
    for entry in walkdir::WalkDir::new(root).min_depth(1).sort_by_file_name() {
        let entry = entry.map_err(io::Error::other)?;
        if entry.file_type().is_file() {
            let rel = entry.path().strip_prefix(root).expect("walk stays under root");
            out.insert(rel.to_string_lossy().into_owned(), fnv1a(&fs::read(entry.path())?));
        }
    }
    Ok(out)
}

/// Removes `dir` if present and recreates it empty.
pub fn fresh_dir(dir: &Path) -> io::Result<()> {
    match fs::remove_dir_all(dir) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::NotFound => {}
        Err(e) => return Err(e),
    }
    fs::create_dir_all(dir)
}
