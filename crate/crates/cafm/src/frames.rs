//! Frame files: PNG read/write and video decoding through ffmpeg.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use cafm_core::media::VideoAsset;
use cafm_core::Frame;

use crate::codec::locate_ffmpeg;
use crate::error::{CliError, IoContext, Result};

pub fn load_png(path: &Path) -> Result<Frame> {
    let img = image::open(path).map_err(|e| CliError::Decode(format!("{}: {e}", path.display())))?.to_rgb8();
    let (w, h) = img.dimensions();
    Ok(Frame::from_rgb8(h as usize, w as usize, img.as_raw())?)
}

pub fn save_png(path: &Path, frame: &Frame) -> Result<()> {
    let img = image::RgbImage::from_raw(frame.width() as u32, frame.height() as u32, frame.to_rgb8())
        .expect("buffer matches dimensions");
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Image files of a directory in name order.
pub fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .at(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg" | "bmp"))
        })
        .collect();
    files.sort();
    Ok(files)
}

pub fn load_dir(dir: &Path, limit: Option<usize>) -> Result<Vec<Frame>> {
    image_files(dir)?.iter().take(limit.unwrap_or(usize::MAX)).map(|p| load_png(p)).collect()
}

/// `dir/000000.png`, `dir/000001.png`, ...
pub fn save_sequence(dir: &Path, frames: &[Frame]) -> Result<()> {
    fs::create_dir_all(dir).at(dir)?;
    for (i, f) in frames.iter().enumerate() {
        save_png(&dir.join(format!("{i:06}.png")), f)?;
    }
    Ok(())
}

/// Decodes a video file (through ffmpeg) or a directory of images into frames
/// in presentation order.
pub fn decode_frames(path: &Path, limit: Option<usize>, fps: f64) -> Result<VideoAsset> {
    let frames = if path.is_dir() {
        load_dir(path, limit)?
    } else {
        if !path.exists() {
            return Err(CliError::Decode(format!("{} does not exist", path.display())));
        }
        let ffmpeg = locate_ffmpeg(None).ok_or_else(|| {
            CliError::Environment(String::from("decoding a video file needs ffmpeg (set CAFM_FFMPEG or add it to PATH)"))
        })?;
        let tmp = tempfile::tempdir().at(Path::new("temporary directory"))?;
        let mut cmd = Command::new(&ffmpeg);
        cmd.args(["-hide_banner", "-loglevel", "error", "-nostdin", "-i"]).arg(path);
        if let Some(n) = limit {
            cmd.args(["-frames:v", &n.to_string()]);
        }
        cmd.args(["-vsync", "0"]).arg(tmp.path().join("%06d.png"));
        log::info!("running {cmd:?}");
        let out = cmd.output().at(&ffmpeg)?;
        if !out.status.success() {
            return Err(CliError::Decode(format!(
                "{}: {}",
                path.display(),
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        load_dir(tmp.path(), limit)?
    };
    let source = path.display().to_string();
    Ok(VideoAsset::new(frames, fps, source)?)
}
