//! Network interpreter: runs an [`Architecture`] program forwards (optionally
//! recording a tape) and backwards.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::arch::Op;
use super::ops::{conv2d, conv2d_backward, depthwise, depthwise_backward, pixel_shuffle, pixel_unshuffle};
use super::params::{BackboneParams, ParamGrads};
use crate::cafm::{CafmGrads, CafmSet};
use crate::error::{Error, Result};
use crate::frame::{FeatureMap, Frame, Tensor};
use crate::media::resample;

enum Record {
    Conv {
        input: Tensor,
        /// Convolution output before modulation (only kept for modulated layers).
        pre_mod: Option<Tensor>,
        /// Activation output (only kept when the layer has an activation).
        post_act: Option<Tensor>,
    },
    Save,
    Add,
    Shuffle,
    Shift,
}

/// Intermediate values of one forward pass, consumed by [`backward`].
pub struct Tape {
    records: Vec<Record>,
}

fn check_cafm(params: &BackboneParams, cafm: Option<&CafmSet>) -> Result<()> {
    match cafm {
        Some(set) => set.validate(params.architecture()),
        None => Ok(()),
    }
}

/// Bicubic pre-upscale of a planar tensor, clamped to `[0, 1]`.
fn upscale_tensor(x: &Tensor, s: usize) -> Tensor {
    let (h, w) = (x.height * s, x.width * s);
    let mut out = Tensor::zeros(x.channels, h, w);
    for c in 0..x.channels {
        let plane = resample(x.channel(c), x.height, x.width, 1, h, w);
        for (o, v) in out.channel_mut(c).iter_mut().zip(plane) {
            *o = v.clamp(0.0, 1.0);
        }
    }
    out
}

fn run(
    params: &BackboneParams,
    cafm: Option<&CafmSet>,
    lr: &Tensor,
    mut tape: Option<&mut Vec<Record>>,
    mut capture: Option<(&[usize], &mut Vec<(usize, Tensor)>)>,
) -> Result<Tensor> {
    let arch = params.architecture();
    if lr.channels != 3 || lr.height < arch.min_input_side() || lr.width < arch.min_input_side() {
        return Err(Error::Shape(format!("input {}x{}x{} is not an RGB image", lr.channels, lr.height, lr.width)));
    }
    let mut x = if arch.config.arch.pre_upsampled() { upscale_tensor(lr, arch.config.scale) } else { lr.clone() };
    let mut slots: Vec<Option<Tensor>> = vec![None; arch.slots];
    for op in &arch.ops {
        match *op {
            Op::Conv(l) => {
                let spec = &arch.layers[l];
                let p = &params.layers[l];
                let mut y = conv2d(&x, &p.weight, &p.bias, spec.out_channels, spec.kernel);
                let mut pre_mod = None;
                if let (Some(slot), Some(set)) = (arch.modulation_slot[l], cafm) {
                    let e = &set.entries[slot];
                    let m = depthwise(&y, &e.scale, &e.bias, set.kernel);
                    if tape.is_some() {
                        pre_mod = Some(y);
                    }
                    y = m;
                }
                if let Some(act) = spec.activation {
                    act.apply(&mut y);
                }
                if let Some((layers, out)) = capture.as_mut() {
                    if layers.contains(&l) {
                        out.push((l, y.clone()));
                    }
                }
                let input = core::mem::replace(&mut x, y);
                if let Some(t) = tape.as_mut() {
                    let post_act = spec.activation.map(|_| x.clone());
                    t.push(Record::Conv { input, pre_mod, post_act });
                }
            }
            Op::Save(slot) => {
                slots[slot] = Some(x.clone());
                if let Some(t) = tape.as_mut() {
                    t.push(Record::Save);
                }
            }
            Op::AddSaved { slot, scale } => {
                let saved = slots[slot].take().expect("slot saved before use");
                if !saved.same_shape(&x) {
                    return Err(Error::Shape(String::from("skip connection shape mismatch")));
                }
                if scale == 1.0 {
                    for (v, s) in x.data.iter_mut().zip(&saved.data) {
                        *v += *s;
                    }
                } else {
                    for (v, s) in x.data.iter_mut().zip(&saved.data) {
                        *v = *s + scale * *v;
                    }
                }
                if let Some(t) = tape.as_mut() {
                    t.push(Record::Add);
                }
            }
            Op::Shift(offsets) => {
                let plane = x.plane();
                for (c, o) in offsets.iter().enumerate() {
                    for v in &mut x.data[c * plane..(c + 1) * plane] {
                        *v += *o;
                    }
                }
                if let Some(t) = tape.as_mut() {
                    t.push(Record::Shift);
                }
            }
            Op::Shuffle(r) => {
                x = pixel_shuffle(&x, r);
                if let Some(t) = tape.as_mut() {
                    t.push(Record::Shuffle);
                }
            }
        }
    }
    Ok(x)
}

/// Super-resolves one planar LR tensor. The output is not clamped.
pub fn forward_tensor(params: &BackboneParams, cafm: Option<&CafmSet>, lr: &Tensor) -> Result<Tensor> {
    check_cafm(params, cafm)?;
    run(params, cafm, lr, None, None)
}

/// Super-resolves a batch of frames; outputs are clamped to `[0, 1]`.
pub fn forward(params: &BackboneParams, cafm: Option<&CafmSet>, lr: &[Frame]) -> Result<Vec<Frame>> {
    check_cafm(params, cafm)?;
    lr.iter()
        .map(|f| {
            let y = run(params, cafm, &f.to_tensor(), None, None)?;
            Frame::from_tensor(&y)
        })
        .collect()
}

/// Forward pass that records what [`backward`] needs.
pub fn forward_train(params: &BackboneParams, cafm: Option<&CafmSet>, lr: &Tensor) -> Result<(Tensor, Tape)> {
    check_cafm(params, cafm)?;
    let mut records = Vec::with_capacity(params.architecture().ops.len());
    let out = run(params, cafm, lr, Some(&mut records), None)?;
    Ok((out, Tape { records }))
}

/// Backpropagates `grad_out` through a recorded pass, accumulating into
/// `shared` and `cafm_grads` when given. Passing `None` for either skips that
/// parameter group's gradient work.
pub fn backward(
    params: &BackboneParams,
    cafm: Option<&CafmSet>,
    tape: &Tape,
    grad_out: Tensor,
    mut shared: Option<&mut ParamGrads>,
    mut cafm_grads: Option<&mut CafmGrads>,
) -> Result<()> {
    let arch = params.architecture();
    if tape.records.len() != arch.ops.len() {
        return Err(Error::Shape(String::from("tape does not belong to this network")));
    }
    // Earliest layer whose input gradient is still needed.
    let first_needed = if cafm_grads.is_some() && cafm.is_some() {
        arch.modulation_slot.iter().position(Option::is_some).unwrap_or(usize::MAX)
    } else {
        usize::MAX
    };
    let mut g = grad_out;
    let mut slot_grads: Vec<Option<Tensor>> = vec![None; arch.slots];
    for (op, rec) in arch.ops.iter().zip(&tape.records).rev() {
        match (*op, rec) {
            (Op::Conv(l), Record::Conv { input, pre_mod, post_act }) => {
                let spec = &arch.layers[l];
                if let (Some(act), Some(out)) = (spec.activation, post_act) {
                    act.backward(out, &mut g);
                }
                if let (Some(slot), Some(set)) = (arch.modulation_slot[l], cafm) {
                    let e = &set.entries[slot];
                    let pre = pre_mod.as_ref().expect("modulated layer records its input");
                    let pg = cafm_grads.as_mut().map(|cg| {
                        let (ga, gb) = &mut cg.entries[slot];
                        (ga.as_mut_slice(), gb.as_mut_slice())
                    });
                    g = depthwise_backward(pre, &e.scale, &g, set.kernel, pg);
                }
                let need_input = l > 0 && (shared.is_some() || l > first_needed);
                let pg = shared.as_mut().map(|sg| {
                    let p = &mut sg.layers[l];
                    (p.weight.as_mut_slice(), p.bias.as_mut_slice())
                });
                match conv2d_backward(input, &params.layers[l].weight, &g, spec.kernel, pg, need_input) {
                    Some(dx) => g = dx,
                    None => {
                        g = Tensor::zeros(input.channels, input.height, input.width);
                    }
                }
            }
            (Op::Save(slot), Record::Save) => {
                if let Some(extra) = slot_grads[slot].take() {
                    for (v, e) in g.data.iter_mut().zip(&extra.data) {
                        *v += *e;
                    }
                }
            }
            (Op::AddSaved { slot, scale }, Record::Add) => {
                slot_grads[slot] = Some(g.clone());
                if scale != 1.0 {
                    for v in g.data.iter_mut() {
                        *v *= scale;
                    }
                }
            }
            (Op::Shuffle(r), Record::Shuffle) => {
                g = pixel_unshuffle(&g, r);
            }
            (Op::Shift(_), Record::Shift) => {}
            _ => return Err(Error::Shape(String::from("tape does not match the op program"))),
        }
    }
    Ok(())
}

/// Activations of the requested conv layers, taken after each layer's
/// activation (or after its modulation when it has no activation).
pub fn extract_features(
    params: &BackboneParams,
    cafm: Option<&CafmSet>,
    lr: &Frame,
    layers: &[usize],
) -> Result<Vec<FeatureMap>> {
    let count = params.architecture().layers.len();
    if let Some(&bad) = layers.iter().find(|&&l| l >= count) {
        return Err(Error::LayerRange { index: bad, count });
    }
    if layers.is_empty() {
        return Ok(Vec::new());
    }
    check_cafm(params, cafm)?;
    let mut captured = Vec::new();
    run(params, cafm, &lr.to_tensor(), None, Some((layers, &mut captured)))?;
    Ok(layers
        .iter()
        .map(|&l| {
            let tensor = captured.iter().find(|(i, _)| *i == l).map(|(_, t)| t.clone()).expect("captured");
            FeatureMap { model_index: 0, layer_index: l, tensor }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cafm::make_identity_cafm;
    use crate::media::bicubic_upscale;
    use crate::nn::arch::{Arch, BackboneConfig};
    use crate::nn::params::build_backbone;
    use crate::rng::rng_from;
    use rand::Rng;

    fn random_frame(h: usize, w: usize, seed: u64) -> Frame {
        let mut rng = rng_from(seed);
        Frame::from_fn(h, w, |_, _| [rng.gen(), rng.gen(), rng.gen()]).unwrap()
    }

    fn bits(f: &[Frame]) -> Vec<u32> {
        f.iter().flat_map(|f| f.data().iter().map(|v| v.to_bits())).collect()
    }

    #[test]
    fn output_is_scaled_input() {
        for arch in Arch::ALL {
            for s in 2..=4 {
                let p = build_backbone(&BackboneConfig::tiny(arch, s), 1).unwrap();
                let out = forward(&p, None, &[random_frame(5, 7, 2)]).unwrap();
                assert_eq!((out[0].height(), out[0].width()), (5 * s, 7 * s), "{arch:?} x{s}");
            }
        }
    }

    #[test]
    fn identity_modulation_is_bitwise_transparent() {
        for arch in Arch::ALL {
            let cfg = BackboneConfig::tiny(arch, 2);
            let p = build_backbone(&cfg, 3).unwrap();
            let x = [random_frame(6, 6, 4)];
            for k in crate::cafm::KERNELS {
                let id = make_identity_cafm(&cfg, k).unwrap();
                assert_eq!(bits(&forward(&p, Some(&id), &x).unwrap()), bits(&forward(&p, None, &x).unwrap()));
            }
        }
    }

    #[test]
    fn zero_output_layer_makes_vdsr_bicubic() {
        let cfg = BackboneConfig::tiny(Arch::Vdsr, 3);
        let mut p = build_backbone(&cfg, 0).unwrap();
        let last = p.layers.len() - 1;
        p.layers[last].weight.iter_mut().for_each(|v| *v = 0.0);
        let x = random_frame(5, 4, 9);
        let out = forward(&p, None, core::slice::from_ref(&x)).unwrap();
        assert_eq!(out[0], bicubic_upscale(&x, 3).unwrap());
    }

    #[test]
    fn mismatched_modulation_is_rejected() {
        let p = build_backbone(&BackboneConfig::tiny(Arch::EdsrM, 2), 0).unwrap();
        let other = make_identity_cafm(&BackboneConfig::tiny(Arch::Vdsr, 2), 1).unwrap();
        assert!(forward(&p, Some(&other), &[random_frame(4, 4, 0)]).is_err());
        let bad = Tensor::zeros(2, 4, 4);
        assert!(matches!(forward_tensor(&p, None, &bad), Err(Error::Shape(_))));
    }

    #[test]
    fn feature_extraction_edges() {
        let cfg = BackboneConfig::tiny(Arch::EdsrM, 2);
        let p = build_backbone(&cfg, 0).unwrap();
        let x = random_frame(4, 4, 1);
        assert!(extract_features(&p, None, &x, &[]).unwrap().is_empty());
        assert!(matches!(extract_features(&p, None, &x, &[99]), Err(Error::LayerRange { index: 99, .. })));
        let a = extract_features(&p, None, &x, &[0, 2]).unwrap();
        assert_eq!(a, extract_features(&p, None, &x, &[0, 2]).unwrap());
        assert_eq!(a[1].tensor.channels, 8);
        assert_eq!(a[1].layer_index, 2);

        // Zero biases and an input equal to the mean shift give zero features.
        let zero = Frame::from_fn(4, 4, |_, _| crate::nn::arch::EDSR_RGB_MEAN).unwrap();
        let layers: Vec<usize> = (0..p.layers.len()).collect();
        for f in extract_features(&p, None, &zero, &layers).unwrap() {
            assert!(f.tensor.data.iter().all(|&v| v == 0.0));
        }
    }
}
