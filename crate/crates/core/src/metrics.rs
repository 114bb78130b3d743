//! Image quality metrics. Peak value is 1.0.

use alloc::format;

use crate::error::{Error, Result};
use crate::frame::Frame;

/// Value written to tables in place of an infinite PSNR.
pub const PSNR_CAP: f64 = 99.99;

fn check(a: &Frame, b: &Frame) -> Result<()> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::Shape(format!(
            "cannot compare {}x{} with {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

/// Mean squared error over every RGB sample.
pub fn mse(reference: &Frame, test: &Frame) -> Result<f64> {
    check(reference, test)?;
    let sum: f64 = reference
        .data()
        .iter()
        .zip(test.data())
        .map(|(a, b)| {
            let d = *a as f64 - *b as f64;
            d * d
        })
        .sum();
    Ok(sum / reference.data().len() as f64)
}

/// `10·log10(1 / mse)`; `+inf` when `mse == 0`.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * libm::log10(mse)
    }
}

/// RGB PSNR in dB.
pub fn psnr(reference: &Frame, test: &Frame) -> Result<f64> {
    Ok(psnr_from_mse(mse(reference, test)?))
}

fn luma(r: f32, g: f32, b: f32) -> f64 {
    (16.0 + 65.481 * r as f64 + 128.553 * g as f64 + 24.966 * b as f64) / 255.0
}

/// PSNR of the BT.601 luma channel.
pub fn psnr_y(reference: &Frame, test: &Frame) -> Result<f64> {
    check(reference, test)?;
    let (a, b) = (reference.data(), test.data());
    let n = a.len() / 3;
    let sum: f64 = (0..n)
        .map(|i| {
            let p = 3 * i;
            let d = luma(a[p], a[p + 1], a[p + 2]) - luma(b[p], b[p + 1], b[p + 2]);
            d * d
        })
        .sum();
    Ok(psnr_from_mse(sum / n as f64))
}

/// Finite stand-in for tables.
pub fn capped(psnr: f64) -> f64 {
    if psnr.is_nan() {
        psnr
    } else {
        psnr.min(PSNR_CAP)
    }
}
