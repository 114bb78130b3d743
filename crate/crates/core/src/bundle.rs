//! The delivery bundle: one shared backbone, `n` per-chunk modulation sets and
//! a JSON manifest in a single little-endian file.
//!
//! ```text
//! "CAFM" | version u32 | manifest length u32 | manifest JSON
//! tensor count u32
//! per tensor: name length u16 | name | section u8 | dtype u8 | ndim u8 | dims u32 * ndim | f32 payload
//! trailer: start offset u64 of each section (shared, chunk 1, .., chunk n)
//! ```
//!
//! Section 0 is the backbone, section `i + 1` the modulation of chunk `i`.
//! Tensors are stored section by section, so every chunk can be fetched on its
//! own through the trailer.

use alloc::borrow::ToOwned;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::cafm::{check_kernel, identity_for, CafmSet};
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::media::{validate_chunks, ChunkSpec};
use crate::nn::{forward, Architecture, BackboneConfig, BackboneParams};
use crate::train::TrainedModel;

pub const MAGIC: [u8; 4] = *b"CAFM";
pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;

const HEADER_LEN: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub backbone: BackboneConfig,
    pub scale: usize,
    /// Number of modulation sets.
    pub n: usize,
    /// Modulation kernel; absent when `n == 0`.
    pub kernel: Option<usize>,
    /// Frame ranges of the chunks, in playback order. May be empty.
    pub chunks: Vec<ChunkSpec>,
}

impl Manifest {
    pub fn new(backbone: BackboneConfig, kernel: Option<usize>, n: usize, chunks: Vec<ChunkSpec>) -> Self {
        Self { format_version: FORMAT_VERSION, scale: backbone.scale, backbone, n, kernel, chunks }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Manifest(m));
        if self.format_version != FORMAT_VERSION {
            return bad(format!("format version {} in manifest", self.format_version));
        }
        self.backbone.validate().map_err(|e| Error::Manifest(format!("{e}")))?;
        if self.scale != self.backbone.scale {
            return bad(format!("scale {} does not match backbone scale {}", self.scale, self.backbone.scale));
        }
        match (self.n, self.kernel) {
            (0, None) => {}
            (0, Some(_)) => return bad(String::from("kernel given without modulation sets")),
            (_, None) => return bad(String::from("modulation sets without a kernel")),
            (_, Some(k)) => check_kernel(k).map_err(|e| Error::Manifest(format!("{e}")))?,
        }
        if !self.chunks.is_empty() {
            if self.n > 0 && self.chunks.len() != self.n {
                return bad(format!("{} chunk ranges for {} modulation sets", self.chunks.len(), self.n));
            }
            let frames = self.chunks.last().map_or(0, |c| c.end);
            validate_chunks(&self.chunks, frames).map_err(|e| Error::Manifest(format!("{e}")))?;
        }
        if self.n > u8::MAX as usize {
            return bad(format!("{} modulation sets exceed the section tag range", self.n));
        }
        Ok(())
    }

    pub fn frame_count(&self) -> Option<usize> {
        self.chunks.last().map(|c| c.end)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub manifest: Manifest,
    pub shared: BackboneParams,
    pub cafms: Vec<CafmSet>,
}

impl ModelBundle {
    /// Checks the manifest and every modulation set against the backbone.
    /// Set `i` is renumbered to chunk `i`.
    pub fn new(manifest: Manifest, shared: BackboneParams, mut cafms: Vec<CafmSet>) -> Result<Self> {
        manifest.validate()?;
        if *shared.config() != manifest.backbone {
            return Err(Error::Shape(String::from("backbone parameters do not match the manifest")));
        }
        if !shared.all_finite() {
            return Err(Error::Shape(String::from("backbone has non-finite values")));
        }
        if cafms.len() != manifest.n {
            return Err(Error::Shape(format!("{} modulation sets, manifest says {}", cafms.len(), manifest.n)));
        }
        for (i, set) in cafms.iter_mut().enumerate() {
            set.validate(shared.architecture())?;
            if Some(set.kernel) != manifest.kernel {
                return Err(Error::Shape(format!("set {i} has kernel {}, manifest says {:?}", set.kernel, manifest.kernel)));
            }
            set.chunk_index = i;
        }
        Ok(Self { manifest, shared, cafms })
    }

    pub fn from_model(model: &TrainedModel, chunks: Vec<ChunkSpec>) -> Result<Self> {
        let kernel = model.cafms.first().map(|c| c.kernel);
        let manifest = Manifest::new(*model.shared.config(), kernel, model.cafms.len(), chunks);
        Self::new(manifest, model.shared.clone(), model.cafms.clone())
    }
}

fn put_tensor(out: &mut Vec<u8>, name: &str, section: u8, dims: &[usize], data: &[f32]) -> Result<()> {
    let name_len = u16::try_from(name.len()).map_err(|_| Error::Layout(format!("tensor name `{name}` too long")))?;
    out.extend_from_slice(&name_len.to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(section);
    out.push(DTYPE_F32);
    out.push(dims.len() as u8);
    for &d in dims {
        let d = u32::try_from(d).map_err(|_| Error::Layout(format!("dimension {d} of `{name}` too large")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

fn cafm_tensors(set: &CafmSet) -> impl Iterator<Item = (String, [usize; 3], usize, &[f32])> {
    let k = set.kernel;
    set.entries.iter().flat_map(move |e| {
        [
            (format!("{}.a", e.layer), [e.channels, k, k], 3, e.scale.as_slice()),
            (format!("{}.b", e.layer), [e.channels, 0, 0], 1, e.bias.as_slice()),
        ]
    })
}

/// Serializes `bundle`. Identical inputs give identical bytes.
pub fn pack(bundle: &ModelBundle) -> Result<Vec<u8>> {
    let bundle = ModelBundle::new(bundle.manifest.clone(), bundle.shared.clone(), bundle.cafms.clone())?;
    let manifest = serde_json::to_vec(&bundle.manifest).map_err(|e| Error::Manifest(format!("{e}")))?;
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
    out.extend_from_slice(&manifest);
    let shared = bundle.shared.named_tensors();
    let count = shared.len() + bundle.cafms.iter().map(|s| 2 * s.entries.len()).sum::<usize>();
    out.extend_from_slice(&(count as u32).to_le_bytes());
    let mut offsets = vec![out.len() as u64];
    for t in &shared {
        put_tensor(&mut out, &t.name(), 0, t.dims(), t.data)?;
    }
    for (i, set) in bundle.cafms.iter().enumerate() {
        offsets.push(out.len() as u64);
        for (name, dims, ndim, data) in cafm_tensors(set) {
            put_tensor(&mut out, &name, (i + 1) as u8, &dims[..ndim], data)?;
        }
    }
    for o in offsets {
        out.extend_from_slice(&o.to_le_bytes());
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    /// File offset of `buf[0]`.
    base: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8], base: usize) -> Self {
        Self { buf, pos: 0, base }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(Error::Truncated { offset: self.base + self.pos, needed: n, available });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn offset(&self) -> usize {
        self.base + self.pos
    }

    fn at_end(&self) -> bool {
        self.pos == self.buf.len()
    }
}

struct RawTensor {
    name: String,
    section: u8,
    dims: Vec<usize>,
    data: Vec<f32>,
}

fn read_tensor(cur: &mut Cursor<'_>) -> Result<RawTensor> {
    let name_len = cur.u16()? as usize;
    let name = core::str::from_utf8(cur.take(name_len)?)
        .map_err(|_| Error::Layout(String::from("tensor name is not UTF-8")))?
        .to_owned();
    let section = cur.u8()?;
    let dtype = cur.u8()?;
    if dtype != DTYPE_F32 {
        return Err(Error::Layout(format!("tensor `{name}` has unknown dtype {dtype}")));
    }
    let ndim = cur.u8()? as usize;
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        dims.push(cur.u32()? as usize);
    }
    let bytes = dims
        .iter()
        .try_fold(4usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Layout(format!("tensor `{name}` is too large")))?;
    let data = cur.take(bytes)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    Ok(RawTensor { name, section, dims, data })
}

struct Header {
    manifest: Manifest,
    tensor_count: usize,
    /// Offset of the first tensor record.
    table_start: usize,
}

fn read_header(cur: &mut Cursor<'_>) -> Result<Header> {
    let magic: [u8; 4] = match cur.take(4) {
        Ok(m) => m.try_into().expect("4 bytes"),
        Err(e) => return Err(e),
    };
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = cur.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let len = cur.u32()? as usize;
    let manifest: Manifest =
        serde_json::from_slice(cur.take(len)?).map_err(|e| Error::Manifest(format!("{e}")))?;
    manifest.validate()?;
    let tensor_count = cur.u32()? as usize;
    Ok(Header { manifest, tensor_count, table_start: cur.offset() })
}

fn expect_name(t: &RawTensor, want: &str, dims: &[usize]) -> Result<()> {
    if t.name != want {
        return Err(Error::Shape(format!("expected tensor `{want}`, found `{}`", t.name)));
    }
    if t.dims != dims {
        return Err(Error::Shape(format!("tensor `{want}` has shape {:?}, expected {dims:?}", t.dims)));
    }
    Ok(())
}

fn build_shared(config: &BackboneConfig, tensors: &[RawTensor]) -> Result<BackboneParams> {
    let mut params = BackboneParams::zeros(config)?;
    let expected: Vec<(String, Vec<usize>)> =
        params.named_tensors().iter().map(|t| (t.name(), t.dims().to_vec())).collect();
    if expected.len() != tensors.len() {
        return Err(Error::Shape(format!("backbone section has {} tensors, expected {}", tensors.len(), expected.len())));
    }
    for ((name, dims), t) in expected.iter().zip(tensors) {
        expect_name(t, name, dims)?;
        params.set_tensor(name, dims, t.data.clone())?;
    }
    if !params.all_finite() {
        return Err(Error::Shape(String::from("backbone has non-finite values")));
    }
    Ok(params)
}

fn build_cafm(arch: &Architecture, kernel: usize, chunk: usize, tensors: &[RawTensor]) -> Result<CafmSet> {
    let mut set = identity_for(arch, kernel, chunk);
    if tensors.len() != 2 * set.entries.len() {
        return Err(Error::Shape(format!(
            "chunk {chunk} section has {} tensors, expected {}",
            tensors.len(),
            2 * set.entries.len()
        )));
    }
    for (e, pair) in set.entries.iter_mut().zip(tensors.chunks_exact(2)) {
        expect_name(&pair[0], &format!("{}.a", e.layer), &[e.channels, kernel, kernel])?;
        expect_name(&pair[1], &format!("{}.b", e.layer), &[e.channels])?;
        e.scale.clone_from(&pair[0].data);
        e.bias.clone_from(&pair[1].data);
    }
    set.validate(arch)?;
    Ok(set)
}

/// Parses and fully validates a bundle.
pub fn unpack(bytes: &[u8]) -> Result<ModelBundle> {
    let mut cur = Cursor::new(bytes, 0);
    let header = read_header(&mut cur)?;
    let n = header.manifest.n;
    let mut sections: Vec<Vec<RawTensor>> = (0..=n).map(|_| Vec::new()).collect();
    let mut offsets: Vec<u64> = Vec::with_capacity(n + 1);
    let mut current: Option<u8> = None;
    for _ in 0..header.tensor_count {
        let start = cur.offset() as u64;
        let t = read_tensor(&mut cur)?;
        if t.section as usize > n {
            return Err(Error::Layout(format!("tensor `{}` in section {} of {n}", t.name, t.section)));
        }
        if current.map_or(t.section != 0, |c| t.section != c && t.section != c + 1) {
            return Err(Error::Layout(format!("tensor `{}` is out of section order", t.name)));
        }
        if current != Some(t.section) {
            offsets.push(start);
            current = Some(t.section);
        }
        sections[t.section as usize].push(t);
    }
    if offsets.len() != n + 1 {
        return Err(Error::Layout(format!("{} sections present, expected {}", offsets.len(), n + 1)));
    }
    for (s, &want) in offsets.iter().enumerate() {
        let got = cur.u64()?;
        if got != want {
            return Err(Error::Layout(format!("offset of section {s} is {got}, tensors start at {want}")));
        }
    }
    if !cur.at_end() {
        return Err(Error::Layout(format!("{} trailing bytes", bytes.len() - cur.offset())));
    }
    let manifest = header.manifest;
    let shared = build_shared(&manifest.backbone, &sections[0])?;
    let cafms = match manifest.kernel {
        Some(k) => (0..n)
            .map(|i| build_cafm(shared.architecture(), k, i, &sections[i + 1]))
            .collect::<Result<Vec<_>>>()?,
        None => Vec::new(),
    };
    ModelBundle::new(manifest, shared, cafms)
}

/// One entry of the tensor table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub section: u8,
    pub dims: Vec<usize>,
    /// File offset of the record.
    pub offset: u64,
    /// Record size in bytes, header included.
    pub bytes: u64,
}

/// Manifest and tensor table of a bundle, without building the model.
pub fn table(bytes: &[u8]) -> Result<(Manifest, Vec<TensorInfo>)> {
    let mut cur = Cursor::new(bytes, 0);
    let header = read_header(&mut cur)?;
    let mut out = Vec::with_capacity(header.tensor_count);
    for _ in 0..header.tensor_count {
        let offset = cur.offset() as u64;
        let t = read_tensor(&mut cur)?;
        out.push(TensorInfo { name: t.name, section: t.section, dims: t.dims, offset, bytes: cur.offset() as u64 - offset });
    }
    Ok((header.manifest, out))
}

/// Random-access byte storage behind a [`BundleReader`].
pub trait ByteSource {
    fn size(&self) -> u64;
    fn read_at(&mut self, offset: u64, buf: &mut [u8]) -> Result<()>;
}

impl ByteSource for &[u8] {
    fn size(&self) -> u64 {
        self.len() as u64
    }

    fn read_at(&mut self, offset: u64, buf: &mut [u8]) -> Result<()> {
        let start = offset as usize;
        let end = start.checked_add(buf.len()).filter(|&e| e <= self.len()).ok_or(Error::Truncated {
            offset: start,
            needed: buf.len(),
            available: self.len().saturating_sub(start),
        })?;
        buf.copy_from_slice(&self[start..end]);
        Ok(())
    }
}

/// Lazy bundle access: the header and trailer are read up front, sections on
/// demand. Every read is logged as `(offset, length)`.
#[derive(Debug)]
pub struct BundleReader<S> {
    source: S,
    manifest: Manifest,
    /// `n + 2` boundaries: section starts, then the trailer start.
    bounds: Vec<u64>,
    shared: Option<BackboneParams>,
    reads: Vec<(u64, u64)>,
}

impl<S: ByteSource> BundleReader<S> {
    pub fn open(mut source: S) -> Result<Self> {
        let size = source.size();
        let mut reads = Vec::new();
        let mut fixed = [0u8; HEADER_LEN];
        let head = (size as usize).min(HEADER_LEN);
        source.read_at(0, &mut fixed[..head])?;
        reads.push((0, head as u64));
        let manifest_len = if head == HEADER_LEN { u32::from_le_bytes(fixed[8..12].try_into().expect("4")) } else { 0 };
        let head_len = (HEADER_LEN + manifest_len as usize + 4).min(size as usize);
        let mut buf = vec![0u8; head_len];
        source.read_at(0, &mut buf)?;
        reads.push((0, head_len as u64));
        let header = read_header(&mut Cursor::new(&buf, 0))?;
        let n = header.manifest.n;
        let trailer_len = 8 * (n as u64 + 1);
        let trailer_start = size
            .checked_sub(trailer_len)
            .filter(|&t| t >= header.table_start as u64)
            .ok_or(Error::Truncated { offset: header.table_start, needed: trailer_len as usize, available: 0 })?;
        let mut trailer = vec![0u8; trailer_len as usize];
        source.read_at(trailer_start, &mut trailer)?;
        reads.push((trailer_start, trailer_len));
        let mut bounds: Vec<u64> =
            trailer.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        bounds.push(trailer_start);
        if bounds[0] != header.table_start as u64 || bounds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Layout(String::from("section offsets are not increasing from the tensor table")));
        }
        Ok(Self { source, manifest: header.manifest, bounds, shared: None, reads })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    /// `[start, end)` byte range of section `s` (0 = backbone, `i + 1` = chunk `i`).
    pub fn section_range(&self, s: usize) -> Option<(u64, u64)> {
        (s + 1 < self.bounds.len()).then(|| (self.bounds[s], self.bounds[s + 1]))
    }

    /// Byte size of each chunk's modulation section.
    pub fn chunk_section_bytes(&self) -> Vec<u64> {
        (1..=self.manifest.n).map(|s| self.bounds[s + 1] - self.bounds[s]).collect()
    }

    pub fn reads(&self) -> &[(u64, u64)] {
        &self.reads
    }

    pub fn clear_reads(&mut self) {
        self.reads.clear();
    }

    fn section(&mut self, s: usize) -> Result<Vec<RawTensor>> {
        let (start, end) = self.section_range(s).expect("section index checked by caller");
        let mut buf = vec![0u8; (end - start) as usize];
        self.source.read_at(start, &mut buf)?;
        self.reads.push((start, end - start));
        let mut cur = Cursor::new(&buf, start as usize);
        let mut out = Vec::new();
        while !cur.at_end() {
            let t = read_tensor(&mut cur)?;
            if t.section as usize != s {
                return Err(Error::Layout(format!("tensor `{}` of section {} found in section {s}", t.name, t.section)));
            }
            out.push(t);
        }
        Ok(out)
    }

    pub fn shared(&mut self) -> Result<&BackboneParams> {
        if self.shared.is_none() {
            let tensors = self.section(0)?;
            self.shared = Some(build_shared(&self.manifest.backbone, &tensors)?);
        }
        Ok(self.shared.as_ref().expect("just loaded"))
    }

    /// Loads the modulation set of `chunk` and nothing else.
    pub fn cafm(&mut self, chunk: usize) -> Result<CafmSet> {
        let n = self.manifest.n;
        if chunk >= n {
            return Err(Error::ChunkRange { index: chunk, count: n });
        }
        let kernel = self.manifest.kernel.expect("validated manifest");
        let tensors = self.section(chunk + 1)?;
        let arch = Architecture::build(&self.manifest.backbone)?;
        build_cafm(&arch, kernel, chunk, &tensors)
    }

    pub fn reconstruct_chunk(&mut self, chunk: usize, lr: &[Frame]) -> Result<Vec<Frame>> {
        let cafm = if self.manifest.n == 0 {
            check_plain_chunk(&self.manifest, chunk)?;
            None
        } else {
            Some(self.cafm(chunk)?)
        };
        let shared = self.shared()?;
        forward(shared, cafm.as_ref(), lr)
    }
}

fn check_plain_chunk(manifest: &Manifest, chunk: usize) -> Result<()> {
    let count = manifest.chunks.len();
    if count > 0 && chunk >= count {
        return Err(Error::ChunkRange { index: chunk, count });
    }
    Ok(())
}

/// Super-resolves the frames of one chunk with that chunk's modulation.
/// Bundles without modulation use the plain backbone for every chunk.
pub fn reconstruct_chunk(bundle: &ModelBundle, chunk: usize, lr: &[Frame]) -> Result<Vec<Frame>> {
    let cafm = if bundle.cafms.is_empty() {
        check_plain_chunk(&bundle.manifest, chunk)?;
        None
    } else {
        Some(bundle.cafms.get(chunk).ok_or(Error::ChunkRange { index: chunk, count: bundle.cafms.len() })?)
    };
    forward(&bundle.shared, cafm, lr)
}

/// Super-resolves a whole LR video chunk by chunk in manifest order.
pub fn reconstruct_video(bundle: &ModelBundle, lr: &[Frame]) -> Result<Vec<Frame>> {
    let chunks = &bundle.manifest.chunks;
    if chunks.is_empty() {
        return reconstruct_chunk(bundle, 0, lr);
    }
    let frames = bundle.manifest.frame_count().unwrap_or(0);
    if lr.len() != frames {
        return Err(Error::Shape(format!("video has {} frames, manifest covers {frames}", lr.len())));
    }
    let mut out = Vec::with_capacity(lr.len());
    for c in chunks {
        out.extend(reconstruct_chunk(bundle, c.index, &lr[c.start..c.end])?);
    }
    Ok(out)
}

/// Bytes delivered to a client.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StorageReport {
    pub lr_video_bytes: u64,
    /// Everything in the bundle except the chunk sections.
    pub shared_bytes: u64,
    pub per_chunk_cafm_bytes: Vec<u64>,
    pub total_bytes: u64,
}

impl StorageReport {
    pub fn new(lr_video_bytes: u64, shared_bytes: u64, per_chunk_cafm_bytes: Vec<u64>) -> Self {
        let total_bytes = lr_video_bytes + shared_bytes + per_chunk_cafm_bytes.iter().sum::<u64>();
        Self { lr_video_bytes, shared_bytes, per_chunk_cafm_bytes, total_bytes }
    }

    pub fn model_bytes(&self) -> u64 {
        self.total_bytes - self.lr_video_bytes
    }
}

/// Splits a serialized bundle into shared and per-chunk bytes.
pub fn section_sizes(bytes: &[u8]) -> Result<(u64, Vec<u64>)> {
    let reader = BundleReader::open(bytes)?;
    let per_chunk = reader.chunk_section_bytes();
    Ok((bytes.len() as u64 - per_chunk.iter().sum::<u64>(), per_chunk))
}
