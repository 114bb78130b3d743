//! File-backed bundle access and storage accounting.

use std::fs::{self, File};
use std::io::{Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};

use cafm_core::bundle::{BundleReader, ByteSource, StorageReport};

use crate::error::{IoContext, Result};

/// Reads bundle byte ranges straight from a file.
#[derive(Debug)]
pub struct FileSource {
    file: File,
    size: u64,
}

impl FileSource {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).at(path)?;
        let size = file.metadata().at(path)?.len();
        Ok(Self { file, size })
    }
}

impl ByteSource for FileSource {
    fn size(&self) -> u64 {
        self.size
    }

    fn read_at(&mut self, offset: u64, buf: &mut [u8]) -> cafm_core::Result<()> {
        let io = |e: std::io::Error| cafm_core::Error::Source(e.to_string());
        self.file.seek(SeekFrom::Start(offset)).map_err(io)?;
        self.file.read_exact(buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => cafm_core::Error::Truncated {
                offset: offset as usize,
                needed: buf.len(),
                available: self.size.saturating_sub(offset) as usize,
            },
            _ => io(e),
        })
    }
}

pub fn open_reader(path: &Path) -> Result<BundleReader<FileSource>> {
    Ok(BundleReader::open(FileSource::open(path)?)?)
}

pub fn file_size(path: &Path) -> Result<u64> {
    Ok(fs::metadata(path).at(path)?.len())
}

/// Byte accounting of one delivery: the LR video files plus one bundle,
/// split into its shared part and each chunk's modulation section.
pub fn storage_report(bundle: &Path, lr_video_files: &[PathBuf]) -> Result<StorageReport> {
    let lr = lr_video_files.iter().map(|p| file_size(p)).sum::<Result<u64>>()?;
    let reader = open_reader(bundle)?;
    let per_chunk = reader.chunk_section_bytes();
    let shared = file_size(bundle)? - per_chunk.iter().sum::<u64>();
    Ok(StorageReport::new(lr, shared, per_chunk))
}

/// Accounting for `n` independent full models: every model counts as a chunk payload.
pub fn storage_report_separate(bundles: &[PathBuf], lr_video_files: &[PathBuf]) -> Result<StorageReport> {
    let lr = lr_video_files.iter().map(|p| file_size(p)).sum::<Result<u64>>()?;
    let per_chunk = bundles.iter().map(|p| file_size(p)).collect::<Result<Vec<_>>>()?;
    Ok(StorageReport::new(lr, 0, per_chunk))
}
