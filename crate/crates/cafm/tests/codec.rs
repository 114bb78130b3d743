use cafm::codec::{codec_baseline, locate_ffmpeg, Codec, Encoder};
use cafm::synthetic::two_clip_video;
use cafm_core::rate::RateSearch;
use cafm_core::Error;

fn encoder(codec: Codec) -> Option<(Encoder, Vec<cafm_core::Frame>)> {
    if locate_ffmpeg(None).is_none() {
        eprintln!("SKIP: no ffmpeg on this system");
        return None;
    }
    let video = two_clip_video(16, 256);
    let frames = video.frames().to_vec();
    Some((Encoder::new(None, codec, "medium", &frames, video.fps).unwrap(), frames))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn budget_above_floor_lands_in_window_and_quality_rises() {
    for codec in [Codec::H264, Codec::H265] {
        let Some((enc, frames)) = encoder(codec) else { return };
        let dir = tempfile::tempdir().unwrap();
        let floor = enc.floor_size(&RateSearch::new(u64::MAX)).unwrap();
        let small = RateSearch::new(floor * 12 / 10);
        let large = RateSearch::new(floor * 3);
        let a = codec_baseline(&enc, &frames, &small, &dir.path().join("a.bin")).unwrap();
        let b = codec_baseline(&enc, &frames, &large, &dir.path().join("b.bin")).unwrap();
        for (r, s) in [(&a, &small), (&b, &large)] {
            assert!(s.accepts(r.bytes), "{codec:?}: {} bytes for budget {}", r.bytes, s.budget);
            assert!(r.rate.probes.len() <= 8);
            assert_eq!(r.frame_psnr.len(), frames.len());
        }
        assert!(mean(&b.frame_psnr) >= mean(&a.frame_psnr), "{codec:?}");
    }
}

#[test]
fn generous_budget_is_near_lossless_on_gray_content() {
    if locate_ffmpeg(None).is_none() {
        eprintln!("SKIP: no ffmpeg on this system");
        return;
    }
    // gray keeps 4:2:0 chroma subsampling out of the error
    let frames: Vec<cafm_core::Frame> = (0..8)
        .map(|t| {
            cafm_core::Frame::from_fn(64, 64, |y, x| {
                let v = 0.5 + 0.3 * ((x as f32 + t as f32) * 0.15).sin() * ((y as f32) * 0.1).cos();
                [v, v, v]
            })
            .unwrap()
        })
        .collect();
    let enc = Encoder::new(None, Codec::H264, "medium", &frames, 30.0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let big = enc.encode(20_000_000, &dir.path().join("big.bin")).unwrap();
    let r = codec_baseline(&enc, &frames, &RateSearch::new(big), &dir.path().join("out.bin")).unwrap();
    assert!(mean(&r.frame_psnr) >= 45.0, "{}", mean(&r.frame_psnr));
}

#[test]
fn budget_below_floor_reports_the_floor() {
    let Some((enc, frames)) = encoder(Codec::H264) else { return };
    let dir = tempfile::tempdir().unwrap();
    let search = RateSearch::new(100);
    let floor = enc.floor_size(&search).unwrap();
    match codec_baseline(&enc, &frames, &search, &dir.path().join("x.bin")) {
        Err(cafm::CliError::Core(Error::BudgetBelowFloor { budget, floor: f })) => {
            assert_eq!(budget, 100);
            assert_eq!(f, floor);
        }
        other => panic!("expected a floor error, got {other:?}"),
    }
}
