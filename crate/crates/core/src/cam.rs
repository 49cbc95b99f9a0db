//! Grad-CAM over the last conv block's pre-pool activation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::Graph;
use crate::data::objects::BoundingBox;
use crate::error::{Error, Result};
use crate::math;
use crate::model::AdldaModel;
use crate::tensor::{Scalar, Tensor};

/// Row-major map in `[0, 1]` at input resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub values: Vec<f64>,
    pub height: usize,
    pub width: usize,
    /// Spatial shape of the activation the map was computed on.
    pub source: [usize; 2],
}

impl Heatmap {
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// First position of the maximum in row-major order.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }
}

/// `relu(Σ_k w_k·A_k)` with `w_k` the spatial mean of `∂y/∂A_k`, divided by
/// its max and upsampled to `out_h × out_w` (then rescaled to peak at 1).
///
/// `activation` and `gradient` are `[F, h, w]`.
pub fn cam_from_parts<T: Scalar>(
    activation: &Tensor<T>,
    gradient: &Tensor<T>,
    out_h: usize,
    out_w: usize,
) -> Result<Heatmap> {
    if activation.rank() != 3 || activation.shape() != gradient.shape() {
        return Err(Error::ShapeMismatch {
            op: "grad_cam",
            lhs: activation.shape().to_vec(),
            rhs: gradient.shape().to_vec(),
        });
    }
    let (f, h, w) = (activation.shape()[0], activation.shape()[1], activation.shape()[2]);
    if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
        return Err(Error::param("grad_cam", "empty spatial shape"));
    }
    let hw = h * w;
    let (a, g) = (activation.to_f64_vec(), gradient.to_f64_vec());
    let mut raw = vec![0.0; hw];
    for k in 0..f {
        let plane = k * hw..(k + 1) * hw;
        let weight = g[plane.clone()].iter().sum::<f64>() / hw as f64;
        for (r, v) in raw.iter_mut().zip(&a[plane]) {
            *r += weight * v;
        }
    }
    let peak = raw.iter().fold(0.0f64, |m, v| m.max(*v));
    for r in raw.iter_mut() {
        *r = if peak > 0.0 { r.max(0.0) / peak } else { 0.0 };
    }
    // Interior source maxima can fall between output samples.
    let mut values = upsample_bilinear(&raw, h, w, out_h, out_w);
    let peak = values.iter().fold(0.0f64, |m, v| m.max(*v));
    if peak > 0.0 {
        values.iter_mut().for_each(|v| *v /= peak);
    }
    Ok(Heatmap {
        values,
        height: out_h,
        width: out_w,
        source: [h, w],
    })
}

/// Corner-aligned bilinear resize of a row-major `h×w` grid.
pub fn upsample_bilinear(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let coord = |i: usize, n_in: usize, n_out: usize| -> (usize, usize, f64) {
        if n_in == 1 || n_out == 1 {
            return (0, 0, 0.0);
        }
        let pos = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
        let lo = (math::floor(pos) as usize).min(n_in - 1);
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, pos - lo as f64)
    };
    let mut out = Vec::with_capacity(out_h * out_w);
    for oy in 0..out_h {
        let (y0, y1, ty) = coord(oy, h, out_h);
        for ox in 0..out_w {
            let (x0, x1, tx) = coord(ox, w, out_w);
            let top = src[y0 * w + x0] * (1.0 - tx) + src[y0 * w + x1] * tx;
            let bottom = src[y1 * w + x0] * (1.0 - tx) + src[y1 * w + x1] * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}

/// Heatmap of `target_class` for one `[C, H, W]` image. Runs the class path only.
pub fn grad_cam<T: Scalar>(model: &AdldaModel<T>, image: &Tensor<T>, target_class: usize) -> Result<Heatmap> {
    let config = model.config();
    if target_class >= config.class_count {
        return Err(Error::LabelOutOfRange {
            label: target_class,
            count: config.class_count,
        });
    }
    if model.conv_block_count() == 0 {
        return Err(Error::param("grad_cam", "model has no conv block"));
    }
    let [c, h, w] = config.input;
    if image.shape() != [c, h, w] {
        return Err(Error::ShapeMismatch {
            op: "grad_cam",
            lhs: image.shape().to_vec(),
            rhs: vec![c, h, w],
        });
    }
    let g = Graph::new();
    let bound = model.params().bind(&g);
    let x = g.constant(image.reshape(&[1, c, h, w])?);
    let out = model.forward_class(&g, &bound, x)?;
    let act = out
        .last_conv_activation
        .ok_or_else(|| Error::param("grad_cam", "missing conv activation"))?;
    let mut selector = vec![T::zero(); config.class_count];
    selector[target_class] = T::one();
    let logit = g.weighted_sum(out.logits, &selector)?;
    let grads = g.backward(logit)?;

    let shape = g.shape(act);
    let map_shape = [shape[1], shape[2], shape[3]];
    let activation = g.value(act).reshape(&map_shape)?;
    let gradient = match grads.get(act) {
        Some(t) => t.reshape(&map_shape)?,
        None => Tensor::zeros(&map_shape),
    };
    cam_from_parts(&activation, &gradient, h, w)
}

/// Binary PPM overlay: `r = (1−α)·gray + α·heat`, `g = b = (1−α)·gray`.
///
/// `base` is `[C, H, W]` in `[0, 1]`; gray is the channel mean.
pub fn heatmap_to_ppm<T: Scalar>(heatmap: &Heatmap, base: &Tensor<T>, alpha: f64) -> Result<Vec<u8>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::param("alpha", "must lie in [0, 1]"));
    }
    if base.rank() != 3 || base.shape()[1..] != [heatmap.height, heatmap.width] {
        return Err(Error::ShapeMismatch {
            op: "heatmap_to_ppm",
            lhs: vec![heatmap.height, heatmap.width],
            rhs: base.shape().to_vec(),
        });
    }
    let (c, hw) = (base.shape()[0], heatmap.height * heatmap.width);
    let pixels = base.to_f64_vec();
    let byte = |v: f64| math::round(v.clamp(0.0, 1.0) * 255.0) as u8;
    let mut out = format!("P6\n{} {}\n255\n", heatmap.width, heatmap.height).into_bytes();
    out.reserve(3 * hw);
    for i in 0..hw {
        let gray = (0..c).map(|ch| pixels[ch * hw + i]).sum::<f64>() / c as f64;
        let shade = (1.0 - alpha) * gray;
        out.extend_from_slice(&[byte(shade + alpha * heatmap.values[i]), byte(shade), byte(shade)]);
    }
    Ok(out)
}

/// Share of the heatmap's total mass inside `bbox`; 0 for an all-zero map.
pub fn box_mass_fraction(heatmap: &Heatmap, bbox: &BoundingBox) -> f64 {
    let (mut inside, mut total) = (0.0, 0.0);
    for y in 0..heatmap.height {
        for x in 0..heatmap.width {
            let v = heatmap.at(y, x);
            total += v;
            if bbox.contains(y, x) {
                inside += v;
            }
        }
    }
    if total > 0.0 {
        inside / total
    } else {
        0.0
    }
}
