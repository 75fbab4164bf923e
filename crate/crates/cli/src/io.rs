//! File helpers: typed NDJSON reads, atomic writes and content hashes.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use linkforge::model::{read_records, NdjsonWriter, Record};
use sha2::{Digest, Sha256};

pub fn read<R: Record>(path: &Path) -> Result<Vec<R>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_records(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

/// Write to a sibling temporary file and rename into place, so a failed
/// stage never leaves a truncated output behind.
fn atomic<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let file = File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
    let mut w = BufWriter::new(file);
    fill(&mut w)?;
    w.flush().with_context(|| format!("writing {}", tmp.display()))?;
    drop(w);
    fs::rename(&tmp, path).with_context(|| format!("renaming {} into place", tmp.display()))
}

pub fn write<'a, R: Record + 'a>(path: &Path, records: impl IntoIterator<Item = &'a R>) -> Result<usize> {
    let mut n = 0;
    atomic(path, |w| {
        let mut out = NdjsonWriter::for_record::<R>(w)?;
        for r in records {
            out.write(r).with_context(|| format!("writing {}", path.display()))?;
        }
        n = out.written();
        out.finish()?;
        Ok(())
    })?;
    Ok(n)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    atomic(path, |w| Ok(w.write_all(text.as_bytes())?))
}

/// Regular, non-hidden files under `dir`, recursively, sorted by path.
pub fn list_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).with_context(|| format!("listing {}", d.display()))? {
            let entry = entry?;
            if entry.file_name().to_string_lossy().starts_with('.') {
                continue;
            }
            let path = entry.path();
            let ty = entry.file_type()?;
            if ty.is_dir() {
                stack.push(path);
            } else if ty.is_file() {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// SHA-256 of a file, or for a directory of its sorted (relative path,
/// content hash) listing.
pub fn content_hash(path: &Path) -> Result<String> {
    let meta = fs::metadata(path).with_context(|| format!("missing input {}", path.display()))?;
    if meta.is_dir() {
        let mut h = Sha256::new();
        for f in list_files(path)? {
            let rel = f.strip_prefix(path).expect("listed under dir");
            h.update(rel.to_string_lossy().as_bytes());
            h.update([0]);
            h.update(content_hash(&f)?.as_bytes());
            h.update(b"\n");
        }
        Ok(hex::encode(h.finalize()))
    } else {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }
}
