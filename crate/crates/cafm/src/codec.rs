//! Classical codec baseline: encode the HR video with x264/x265 at a bitrate
//! whose output matches a byte budget, decode it and score it.

use std::env;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};

use cafm_core::metrics::psnr;
use cafm_core::rate::{search_bitrate, RateOutcome, RateSearch};
use cafm_core::Frame;

use crate::error::{CliError, IoContext, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Codec {
    #[default]
    H264,
    H265,
}

impl Codec {
    pub fn name(self) -> &'static str {
        match self {
            Codec::H264 => "h264",
            Codec::H265 => "h265",
        }
    }

    fn encoder(self) -> &'static str {
        match self {
            Codec::H264 => "libx264",
            Codec::H265 => "libx265",
        }
    }

    /// File extension of the raw bitstream.
    pub fn extension(self) -> &'static str {
        self.muxer()
    }

    fn muxer(self) -> &'static str {
        match self {
            Codec::H264 => "h264",
            Codec::H265 => "hevc",
        }
    }
}

/// `explicit`, then `$CAFM_FFMPEG`, then `ffmpeg` on `PATH`.
pub fn locate_ffmpeg(explicit: Option<&Path>) -> Option<PathBuf> {
    if let Some(p) = explicit {
        return p.is_file().then(|| p.to_path_buf());
    }
    if let Some(p) = env::var_os("CAFM_FFMPEG") {
        let p = PathBuf::from(p);
        return p.is_file().then_some(p);
    }
    env::split_paths(&env::var_os("PATH")?).map(|d| d.join("ffmpeg")).find(|p| p.is_file())
}

/// A pinned encoder configuration working on one raw clip.
#[derive(Debug)]
pub struct Encoder {
    ffmpeg: PathBuf,
    codec: Codec,
    preset: String,
    width: usize,
    height: usize,
    frames: usize,
    fps: f64,
    scratch: tempfile::TempDir,
    raw: PathBuf,
}

fn run(mut cmd: Command) -> Result<()> {
    log::info!("running {cmd:?}");
    let out = cmd.stdin(Stdio::null()).output().map_err(|e| CliError::Environment(format!("{cmd:?}: {e}")))?;
    if !out.status.success() {
        return Err(CliError::Data(format!("{cmd:?} failed: {}", String::from_utf8_lossy(&out.stderr).trim())));
    }
    Ok(())
}

impl Encoder {
    /// Writes `frames` to a raw RGB scratch file.
    pub fn new(ffmpeg: Option<&Path>, codec: Codec, preset: &str, frames: &[Frame], fps: f64) -> Result<Self> {
        let ffmpeg = locate_ffmpeg(ffmpeg)
            .ok_or_else(|| CliError::Environment(String::from("ffmpeg not found (set CAFM_FFMPEG or add it to PATH)")))?;
        let first = frames.first().ok_or_else(|| CliError::Data(String::from("no frames to encode")))?;
        let scratch = tempfile::tempdir().at(Path::new("temporary directory"))?;
        let raw = scratch.path().join("input.rgb");
        let mut f = fs::File::create(&raw).at(&raw)?;
        for fr in frames {
            f.write_all(&fr.to_rgb8()).at(&raw)?;
        }
        Ok(Self {
            ffmpeg,
            codec,
            preset: preset.to_string(),
            width: first.width(),
            height: first.height(),
            frames: frames.len(),
            fps,
            scratch,
            raw,
        })
    }

    fn base(&self) -> Command {
        let mut c = Command::new(&self.ffmpeg);
        c.args(["-hide_banner", "-loglevel", "error", "-nostdin", "-y"])
            .args(["-f", "rawvideo", "-pix_fmt", "rgb24"])
            .args(["-s", &format!("{}x{}", self.width, self.height)])
            .args(["-r", &format!("{}", self.fps)])
            .arg("-i")
            .arg(&self.raw)
            .args(["-an", "-c:v", self.codec.encoder(), "-preset", &self.preset, "-pix_fmt", "yuv420p"])
            .args(["-threads", "1"]);
        c
    }

    /// Two-pass average-bitrate encode; returns the output size in bytes.
    pub fn encode(&self, bitrate: u64, out: &Path) -> Result<u64> {
        Ok(self.encode_with_rate(bitrate, out)?.1)
    }

    /// Like [`Encoder::encode`], but a rate under the encoder's own minimum is
    /// raised to that minimum. Returns the rate used and the output size.
    pub fn encode_with_rate(&self, bitrate: u64, out: &Path) -> Result<(u64, u64)> {
        let mut rate = bitrate;
        // the minimum is re-estimated from each first pass, so it can move up
        for _ in 0..8 {
            match self.encode_at(rate, out) {
                Ok(size) => return Ok((rate, size)),
                Err(CliError::Data(msg)) => match encoder_minimum(&msg) {
                    Some(m) => {
                        // the reported minimum is rounded down to whole kbps
                        let next = if m > rate { m } else { rate + KBPS };
                        log::info!("{} rejects {rate} b/s, retrying at {next} b/s", self.codec.name());
                        rate = next;
                    }
                    None => return Err(CliError::Data(msg)),
                },
                Err(e) => return Err(e),
            }
        }
        Err(CliError::Data(format!("{} kept rejecting rates up to {rate} b/s", self.codec.name())))
    }

    fn encode_at(&self, bitrate: u64, out: &Path) -> Result<u64> {
        let stats = self.scratch.path().join("passlog");
        let rate = bitrate.to_string();
        for pass in [1, 2] {
            let mut c = self.base();
            c.args(["-b:v", &rate]);
            match self.codec {
                Codec::H264 => {
                    c.args(["-pass", &pass.to_string()]).arg("-passlogfile").arg(&stats);
                    c.args(["-x264-params", "threads=1:lookahead-threads=1"]);
                }
                Codec::H265 => {
                    let p = format!("pass={pass}:stats={}:log-level=error:pools=none:frame-threads=1", stats.display());
                    c.args(["-x265-params", &p]);
                }
            }
            if pass == 1 {
                c.args(["-f", "null", "-"]);
            } else {
                c.args(["-f", self.codec.muxer()]).arg(out);
            }
            run(c)?;
        }
        Ok(fs::metadata(out).at(out)?.len())
    }

    pub fn decode(&self, path: &Path) -> Result<Vec<Frame>> {
        let mut c = Command::new(&self.ffmpeg);
        c.args(["-hide_banner", "-loglevel", "error", "-nostdin", "-f", self.codec.muxer(), "-i"])
            .arg(path)
            .args(["-f", "rawvideo", "-pix_fmt", "rgb24", "-"]);
        log::info!("running {c:?}");
        let out = c.stdin(Stdio::null()).output().map_err(|e| CliError::Environment(format!("{e}")))?;
        if !out.status.success() {
            return Err(CliError::Decode(String::from_utf8_lossy(&out.stderr).trim().to_string()));
        }
        let size = self.width * self.height * 3;
        if out.stdout.len() != size * self.frames {
            return Err(CliError::Decode(format!(
                "decoded {} bytes, expected {} frames of {size}",
                out.stdout.len(),
                self.frames
            )));
        }
        out.stdout
            .chunks_exact(size)
            .map(|b| Ok(Frame::from_rgb8(self.height, self.width, b)?))
            .collect()
    }

    /// Lowest rate worth asking for: `MIN_BITS_PER_PIXEL` per pixel per frame,
    /// in whole kbps. Below it both encoders jump erratically between sizes.
    pub fn min_bitrate(&self) -> u64 {
        let bits = MIN_BITS_PER_PIXEL * (self.width * self.height) as f64 * self.fps;
        ((bits / KBPS as f64).ceil() as u64).max(1) * KBPS
    }

    /// The search settings actually used for this clip.
    pub fn search_for(&self, search: &RateSearch) -> RateSearch {
        RateSearch { min_bitrate: search.min_bitrate.max(self.min_bitrate()), step: search.step.max(KBPS), ..*search }
    }

    /// Size of the output at the lowest bitrate the search will try.
    pub fn floor_size(&self, search: &RateSearch) -> Result<u64> {
        let out = self.scratch.path().join("floor.bin");
        self.encode(self.search_for(search).min_bitrate, &out)
    }
}

/// Both encoders take their target rate in whole kbps.
const KBPS: u64 = 1000;

pub const MIN_BITS_PER_PIXEL: f64 = 0.01;

/// Bits per second from x264's "estimated minimum is N kbps" refusal.
fn encoder_minimum(stderr: &str) -> Option<u64> {
    let rest = &stderr[stderr.find("estimated minimum is ")? + "estimated minimum is ".len()..];
    let digits: String = rest.chars().take_while(char::is_ascii_digit).collect();
    let kbps: u64 = digits.parse().ok()?;
    rest[digits.len()..].trim_start().starts_with("kbps").then_some(kbps * 1000)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecResult {
    pub codec: Codec,
    pub budget: u64,
    pub rate: RateOutcome,
    pub bytes: u64,
    /// PSNR of every frame against the original.
    pub frame_psnr: Vec<f64>,
}

/// Matches `budget` bytes, writes the chosen bitstream to `out` and scores
/// every decoded frame against `frames`.
pub fn codec_baseline(encoder: &Encoder, frames: &[Frame], search: &RateSearch, out: &Path) -> Result<CodecResult> {
    let probe_out = encoder.scratch.path().join("probe.bin");
    let search = encoder.search_for(search);
    let (lowest, _) = encoder.encode_with_rate(search.min_bitrate, &probe_out)?;
    let search = &RateSearch { min_bitrate: lowest, ..search };
    let rate = search_bitrate(search, |b| {
        encoder.encode(b, &probe_out).map_err(|e| cafm_core::Error::Rate(e.to_string()))
    })?;
    // the accepted probe is always the last one encoded
    fs::copy(&probe_out, out).at(out)?;
    let bytes = fs::metadata(out).at(out)?.len();
    let decoded = encoder.decode(out)?;
    let frame_psnr = frames.iter().zip(&decoded).map(|(a, b)| psnr(a, b)).collect::<cafm_core::Result<Vec<_>>>()?;
    log::info!("{}: {} bytes at {} b/s after {} probes", encoder.codec.name(), bytes, rate.bitrate, rate.probes.len());
    Ok(CodecResult { codec: encoder.codec, budget: search.budget, rate, bytes, frame_psnr })
}
