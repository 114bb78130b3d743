use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moment estimates for one parameter group, flattened in iteration order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<f32>,
    v: Vec<f32>,
}

impl Adam {
    pub fn new(config: AdamConfig, len: usize) -> Self {
        Self { config, step: 0, m: vec![0.0; len], v: vec![0.0; len] }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One bias-corrected update. `params` and `grads` are visited in lockstep.
    pub fn step<'p, 'g>(
        &mut self,
        params: impl IntoIterator<Item = &'p mut [f32]>,
        grads: impl IntoIterator<Item = &'g [f32]>,
        lr: f32,
    ) {
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - libm::pow(beta1 as f64, self.step as f64);
        let bc2 = 1.0 - libm::pow(beta2 as f64, self.step as f64);
        let step_size = (lr as f64 / bc1) as f32;
        let bc2_sqrt = libm::sqrt(bc2) as f32;
        let mut offset = 0;
        for (p, g) in params.into_iter().zip(grads) {
            assert_eq!(p.len(), g.len());
            let m = &mut self.m[offset..offset + p.len()];
            let v = &mut self.v[offset..offset + p.len()];
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let denom = libm::sqrtf(v[i]) / bc2_sqrt + eps;
                p[i] -= step_size * m[i] / denom;
            }
            offset += p.len();
        }
        assert_eq!(offset, self.m.len(), "parameter group size changed");
    }

    /// `step u64 | len u64 | m f32… | v f32…`, little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.m.len());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.m.len() as u64).to_le_bytes());
        for v in self.m.iter().chain(&self.v) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(config: AdamConfig, bytes: &[u8]) -> Result<(Self, usize)> {
        let need = |n: usize| -> Result<()> {
            if bytes.len() < n {
                Err(Error::Truncated { offset: 0, needed: n, available: bytes.len() })
            } else {
                Ok(())
            }
        };
        need(16)?;
        let step = u64::from_le_bytes(bytes[0..8].try_into().unwrap());
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let total = 16 + 8 * len;
        need(total)?;
        let floats: Vec<f32> =
            bytes[16..total].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let (m, v) = floats.split_at(len);
        Ok((Self { config, step, m: m.to_vec(), v: v.to_vec() }, total))
    }
}
