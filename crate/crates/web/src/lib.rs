//! WebAssembly bindings for the static demo page in `www/`.

use wasm_bindgen::prelude::*;

use reborn::activations::{make_activation, ActivationSpec};
use reborn::layers::Mode;
use reborn::models::{Arch, Model, ModelConfig, ParamFilter};
use reborn::pgm::render_feature_map;
use reborn::train::procedural_image;
use reborn::{Rng, Tensor};

fn spec(text: &str) -> Result<ActivationSpec, String> {
    text.parse::<ActivationSpec>().map_err(|e| e.to_string())
}

/// `f(x)` on `n` evenly spaced points in `[lo, hi]`; CReLU yields two curves
/// back to back.
pub fn curve(activation: &str, lo: f64, hi: f64, n: usize) -> Result<Vec<f64>, String> {
    let spec = spec(activation)?;
    if matches!(spec, ActivationSpec::Reborn(_)) {
        return Err(format!("`{activation}` mixes neighbouring pixels and has no scalar curve"));
    }
    if n < 2 || !(hi > lo) {
        return Err("need at least two points and hi > lo".into());
    }
    let step = (hi - lo) / (n - 1) as f64;
    let x = Tensor::from_fn(vec![1, 1, 1, n], |i| lo + step * i as f64).map_err(|e| e.to_string())?;
    let (mut layer, _) = make_activation::<f64>(&spec, 1, &mut Rng::new(0)).map_err(|e| e.to_string())?;
    Ok(layer.forward(&x, Mode::Eval).map_err(|e| e.to_string())?.into_data())
}

/// Rendered first-layer feature maps of a fresh five-layer net: one
/// `size × size` gray image per channel, concatenated.
pub fn maps(activation: &str, rgb: &[u8], size: usize, seed: u64) -> Result<Vec<u8>, String> {
    if rgb.len() != 3 * size * size || size == 0 {
        return Err(format!("expected {} RGB bytes for a {size}x{size} image", 3 * size * size));
    }
    let input = Tensor::<f32>::from_fn(vec![1, 3, size, size], |i| {
        let (ch, px) = (i / (size * size), i % (size * size));
        rgb[px * 3 + ch] as f32 / 255.0
    })
    .map_err(|e| e.to_string())?;
    let mut cfg = ModelConfig::new(Arch::VizNet5, spec(activation)?);
    cfg.input_size = size;
    let mut model: Model<f32> = Model::build(&cfg, &Rng::new(seed).derive("init")).map_err(|e| e.to_string())?;
    model.set_mode(Mode::Eval);
    let out = model.features(&input, 1).map_err(|e| e.to_string())?;
    let plane = size * size;
    Ok(out.data().chunks(plane).flat_map(render_feature_map).collect())
}

/// `[all learned parameters, backbone conv weights]` of ConvNet-8 on 32×32 RGB.
pub fn counts(activation: &str, width: f64) -> Result<Vec<f64>, String> {
    let mut cfg = ModelConfig::new(Arch::ConvNet8, spec(activation)?);
    cfg.width_mult = width;
    let mut model: Model<f32> = Model::build(&cfg, &Rng::new(0)).map_err(|e| e.to_string())?;
    Ok(vec![
        model.count_params(ParamFilter::All) as f64,
        model.count_params(ParamFilter::ConvWeights) as f64,
    ])
}

/// The built-in test pattern as interleaved RGB bytes.
pub fn pattern(size: usize) -> Result<Vec<u8>, String> {
    let t = procedural_image(3, size).map_err(|e| e.to_string())?;
    let plane = size * size;
    Ok((0..3 * plane)
        .map(|i| {
            let (px, ch) = (i / 3, i % 3);
            (t.data()[ch * plane + px] * 255.0).round() as u8
        })
        .collect())
}

#[wasm_bindgen]
pub fn activation_curve(activation: &str, lo: f64, hi: f64, n: usize) -> Result<Vec<f64>, JsError> {
    curve(activation, lo, hi, n).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn feature_maps(activation: &str, rgb: &[u8], size: usize, seed: u32) -> Result<Vec<u8>, JsError> {
    maps(activation, rgb, size, seed as u64).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn param_counts(activation: &str, width: f64) -> Result<Vec<f64>, JsError> {
    counts(activation, width).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn test_pattern(size: usize) -> Result<Vec<u8>, JsError> {
    pattern(size).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_and_crelu_curves() {
        assert_eq!(curve("relu", -1.0, 1.0, 3).unwrap(), vec![0.0, 0.0, 1.0]);
        assert_eq!(curve("crelu", -1.0, 1.0, 3).unwrap(), vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        assert!(curve("reborn", -1.0, 1.0, 3).is_err());
        assert!(curve("relu", 1.0, -1.0, 3).is_err());
    }

    #[test]
    fn maps_cover_32_channels() {
        let rgb = pattern(16).unwrap();
        let out = maps("reborn", &rgb, 16, 1).unwrap();
        assert_eq!(out.len(), 32 * 16 * 16);
        assert!(maps("relu", &rgb[1..], 16, 1).is_err());
    }

    #[test]
    fn counts_match_known_totals() {
        assert_eq!(counts("relu", 1.0).unwrap()[1], 1_171_296.0);
        assert!(counts("reborn", 0.5).unwrap()[0] > counts("relu", 0.5).unwrap()[0]);
    }
}
