//! Bitrate search: find an encoder target bitrate whose output lands in
//! `[low_fraction · budget, budget]` bytes.
//!
//! The encoder is a callback from bitrate (bits per second) to output size, so
//! the search is independent of any particular codec.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSearch {
    pub budget: u64,
    /// Acceptance window is `[low_fraction · budget, budget]`.
    pub low_fraction: f64,
    /// Total encoder invocations, the floor probe included.
    pub max_probes: usize,
    /// Lowest bitrate tried; its output size is the codec floor.
    pub min_bitrate: u64,
    pub max_bitrate: u64,
    /// Bitrate resolution of the encoder; probes are multiples of it.
    pub step: u64,
}

impl RateSearch {
    pub fn new(budget: u64) -> Self {
        Self { budget, low_fraction: 0.95, max_probes: 8, min_bitrate: 1_000, max_bitrate: 200_000_000, step: 1 }
    }

    fn low(&self) -> u64 {
        libm::ceil(self.budget as f64 * self.low_fraction) as u64
    }

    pub fn accepts(&self, size: u64) -> bool {
        size <= self.budget && size >= self.low()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Probe {
    pub bitrate: u64,
    pub size: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateOutcome {
    pub bitrate: u64,
    pub size: u64,
    pub probes: Vec<Probe>,
}

/// Bracketing search. The lower end starts at the floor probe; each new probe
/// interpolates the target size inside the bracket and falls back to the
/// geometric midpoint when the interpolation leaves it.
pub fn search_bitrate(config: &RateSearch, mut encode: impl FnMut(u64) -> Result<u64>) -> Result<RateOutcome> {
    if config.max_probes == 0 || config.min_bitrate == 0 || config.step == 0 || config.min_bitrate >= config.max_bitrate {
        return Err(Error::Rate(format!("invalid search settings {config:?}")));
    }
    let mut probes = Vec::new();
    let floor = encode(config.min_bitrate)?;
    probes.push(Probe { bitrate: config.min_bitrate, size: floor });
    if floor > config.budget {
        return Err(Error::BudgetBelowFloor { budget: config.budget, floor });
    }
    if config.accepts(floor) {
        return Ok(RateOutcome { bitrate: config.min_bitrate, size: floor, probes });
    }
    let target = (config.budget as f64 + config.low() as f64) / 2.0;
    let mut lo = probes[0];
    let mut hi: Option<Probe> = None;
    while probes.len() < config.max_probes {
        let geometric = |a: u64, b: u64| libm::sqrt(a as f64 * b as f64);
        let next = match hi {
            None => {
                let grow = (target / lo.size.max(1) as f64).max(1.5);
                (lo.bitrate as f64 * grow).min(config.max_bitrate as f64)
            }
            Some(h) => {
                let span = (h.size - lo.size) as f64;
                let t = if span > 0.0 { (target - lo.size as f64) / span } else { 0.5 };
                let guess = lo.bitrate as f64 + t * (h.bitrate - lo.bitrate) as f64;
                let margin = 0.1 * (h.bitrate - lo.bitrate) as f64;
                if guess > lo.bitrate as f64 + margin && guess < h.bitrate as f64 - margin {
                    guess
                } else {
                    geometric(lo.bitrate, h.bitrate)
                }
            }
        };
        let step = config.step;
        let mut bitrate = (libm::round(next / step as f64) as u64).saturating_mul(step).max(lo.bitrate + step);
        if let Some(h) = hi {
            bitrate = bitrate.min(h.bitrate.saturating_sub(step));
        }
        if bitrate <= lo.bitrate || hi.is_some_and(|h| bitrate >= h.bitrate) {
            break;
        }
        let size = encode(bitrate)?;
        let p = Probe { bitrate, size };
        probes.push(p);
        if config.accepts(size) {
            return Ok(RateOutcome { bitrate, size, probes });
        }
        if size > config.budget {
            hi = Some(p);
        } else {
            lo = p;
        }
        if hi.is_none() && bitrate >= config.max_bitrate {
            break;
        }
    }
    Err(Error::Rate(format!(
        "no bitrate within {} probes landed in [{}, {}] bytes; closest below was {} bytes at {} b/s",
        probes.len(),
        config.low(),
        config.budget,
        lo.size,
        lo.bitrate
    )))
}
