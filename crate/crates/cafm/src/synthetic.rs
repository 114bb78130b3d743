//! Synthetic test footage: two visually distinct moving clips back to back.

use cafm_core::media::VideoAsset;
use cafm_core::Frame;

/// Warm diagonal stripes drifting right.
pub fn stripes_frame(size: usize, t: usize) -> Frame {
    Frame::from_fn(size, size, |y, x| {
        let (xf, yf, tf) = (x as f32, y as f32, t as f32);
        let v = 0.5 + 0.45 * ((xf + 1.5 * tf) * 0.35 + (yf * 0.12).sin() * 2.0).sin();
        [v, 0.6 * v + 0.2, 0.3]
    })
    .expect("values in range")
}

/// Cool concentric rings over a checkerboard, sliding horizontally.
pub fn rings_frame(size: usize, t: usize) -> Frame {
    let c = size as f32 / 2.0;
    let cell = (size / 8).max(1);
    Frame::from_fn(size, size, |y, x| {
        let (xf, yf, tf) = (x as f32, y as f32, t as f32);
        let r = ((xf - c + tf).powi(2) + (yf - c).powi(2)).sqrt();
        let sign = if (x / cell + y / cell) % 2 == 0 { 1.0 } else { -0.6 };
        let v = 0.5 + 0.45 * (r * 0.5).cos() * sign;
        [0.3, 1.0 - v, v]
    })
    .expect("values in range")
}

/// `frames_per_clip` stripe frames followed by as many ring frames.
pub fn two_clip_video(frames_per_clip: usize, size: usize) -> VideoAsset {
    let frames = (0..frames_per_clip)
        .map(|t| stripes_frame(size, t))
        .chain((0..frames_per_clip).map(|t| rings_frame(size, t)))
        .collect();
    VideoAsset::new(frames, 30.0, "synthetic:two-clip").expect("non-empty")
}
