//! Layer definitions and their forward/backward kernels.
//!
//! Activations travel between layers as `batch × width` row-major buffers;
//! convolutional layers interpret each row as a `channels × height × width`
//! feature map.

use crate::error::{Error, Result};
use crate::tensor::Real;

/// Side length of every convolution kernel.
pub const KERNEL: usize = 5;
const PAD: usize = KERNEL / 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    /// Fully-connected layer, weights stored `outputs × inputs`.
    Dense { inputs: usize, outputs: usize },
    /// 5×5 convolution, stride 1, same padding. `height`/`width` are the
    /// input (and output) spatial size. Weights stored `out × in × 5 × 5`.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        height: usize,
        width: usize,
    },
    /// 2×2 max pooling with stride 2 over a `channels × height × width` map.
    MaxPool2x2 {
        channels: usize,
        height: usize,
        width: usize,
    },
    Relu,
    Sigmoid,
    Softmax,
}

impl LayerSpec {
    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. })
    }

    pub fn weight_shape(&self) -> Option<Vec<usize>> {
        match *self {
            LayerSpec::Dense { inputs, outputs } => Some(vec![outputs, inputs]),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                ..
            } => Some(vec![out_channels, in_channels, KERNEL, KERNEL]),
            _ => None,
        }
    }

    pub fn bias_len(&self) -> Option<usize> {
        match *self {
            LayerSpec::Dense { outputs, .. } => Some(outputs),
            LayerSpec::Conv2d { out_channels, .. } => Some(out_channels),
            _ => None,
        }
    }

    /// `(fan_in, fan_out)` used for uniform initialization.
    pub fn fans(&self) -> Option<(usize, usize)> {
        match *self {
            LayerSpec::Dense { inputs, outputs } => Some((inputs, outputs)),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                ..
            } => Some((in_channels * KERNEL * KERNEL, out_channels * KERNEL * KERNEL)),
            _ => None,
        }
    }

    /// Width of one output row given the width of one input row.
    pub fn output_width(&self, input_width: usize) -> Result<usize> {
        let expect = |want: usize| {
            if want == input_width {
                Ok(())
            } else {
                Err(Error::Shape(format!(
                    "{self:?} expects input width {want}, previous layer produces {input_width}"
                )))
            }
        };
        match *self {
            LayerSpec::Dense { inputs, outputs } => {
                expect(inputs)?;
                Ok(outputs)
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                height,
                width,
            } => {
                expect(in_channels * height * width)?;
                Ok(out_channels * height * width)
            }
            LayerSpec::MaxPool2x2 {
                channels,
                height,
                width,
            } => {
                if height % 2 != 0 || width % 2 != 0 {
                    return Err(Error::Shape(format!(
                        "max pooling needs even spatial dims, got {height}x{width}"
                    )));
                }
                expect(channels * height * width)?;
                Ok(channels * (height / 2) * (width / 2))
            }
            LayerSpec::Relu | LayerSpec::Sigmoid | LayerSpec::Softmax => Ok(input_width),
        }
    }

    fn validate(&self) -> Result<()> {
        let dims: &[usize] = match self {
            LayerSpec::Dense { inputs, outputs } => &[*inputs, *outputs],
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                height,
                width,
            } => &[*in_channels, *out_channels, *height, *width],
            LayerSpec::MaxPool2x2 {
                channels,
                height,
                width,
            } => &[*channels, *height, *width],
            _ => &[],
        };
        if dims.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "layer dimensions must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    pub(crate) fn check(&self, input_width: usize) -> Result<usize> {
        self.validate()?;
        self.output_width(input_width)
    }
}

/// Forward pass of one layer over a batch. `params` is `(weights, bias)` for
/// parameterized layers.
pub(crate) fn forward<T: Real>(
    spec: &LayerSpec,
    params: Option<(&[T], &[T])>,
    input: &[T],
    batch: usize,
) -> Vec<T> {
    match *spec {
        LayerSpec::Dense { inputs, outputs } => {
            let (w, b) = params.expect("dense layer parameters");
            let mut out = Vec::with_capacity(batch * outputs);
            for _ in 0..batch {
                out.extend_from_slice(b);
            }
            // out[B×O] += x[B×I] · Wᵀ
            T::gemm(
                batch,
                inputs,
                outputs,
                T::one(),
                input,
                (inputs as isize, 1),
                w,
                (1, inputs as isize),
                T::one(),
                &mut out,
                (outputs as isize, 1),
            );
            out
        }
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            height,
            width,
        } => {
            let (w, b) = params.expect("conv layer parameters");
            let area = height * width;
            let patch = in_channels * KERNEL * KERNEL;
            let in_w = in_channels * area;
            let out_w = out_channels * area;
            let mut out = vec![T::zero(); batch * out_w];
            let mut col = vec![T::zero(); patch * area];
            for s in 0..batch {
                im2col(&input[s * in_w..(s + 1) * in_w], in_channels, height, width, &mut col);
                let dst = &mut out[s * out_w..(s + 1) * out_w];
                for (o, row) in dst.chunks_exact_mut(area).enumerate() {
                    row.fill(b[o]);
                }
                T::gemm(
                    out_channels,
                    patch,
                    area,
                    T::one(),
                    w,
                    (patch as isize, 1),
                    &col,
                    (area as isize, 1),
                    T::one(),
                    dst,
                    (area as isize, 1),
                );
            }
            out
        }
        LayerSpec::MaxPool2x2 {
            channels,
            height,
            width,
        } => {
            let (oh, ow) = (height / 2, width / 2);
            let in_w = channels * height * width;
            let mut out = Vec::with_capacity(batch * channels * oh * ow);
            for s in 0..batch {
                let x = &input[s * in_w..(s + 1) * in_w];
                for c in 0..channels {
                    let plane = &x[c * height * width..(c + 1) * height * width];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let idx = pool_argmax(plane, width, oy, ox);
                            out.push(plane[idx]);
                        }
                    }
                }
            }
            out
        }
        LayerSpec::Relu => input
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect(),
        LayerSpec::Sigmoid => input.iter().map(|&v| sigmoid(v)).collect(),
        LayerSpec::Softmax => {
            let width = input.len() / batch;
            let mut out = input.to_vec();
            for row in out.chunks_exact_mut(width) {
                softmax_in_place(row);
            }
            out
        }
    }
}

/// Backward pass of one layer. Accumulates parameter gradients into
/// `grads` and returns the gradient with respect to the layer input.
/// Softmax is handled by the loss and never reaches this function.
pub(crate) fn backward<T: Real>(
    spec: &LayerSpec,
    params: Option<(&[T], &[T])>,
    grads: Option<(&mut [T], &mut [T])>,
    input: &[T],
    output: &[T],
    delta: &[T],
    batch: usize,
) -> Vec<T> {
    match *spec {
        LayerSpec::Dense { inputs, outputs } => {
            let (w, _) = params.expect("dense layer parameters");
            let (gw, gb) = grads.expect("dense layer gradients");
            // dW[O×I] += δᵀ[O×B] · x[B×I]
            T::gemm(
                outputs,
                batch,
                inputs,
                T::one(),
                delta,
                (1, outputs as isize),
                input,
                (inputs as isize, 1),
                T::one(),
                gw,
                (inputs as isize, 1),
            );
            for row in delta.chunks_exact(outputs) {
                for (g, &d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
            // dx[B×I] = δ[B×O] · W[O×I]
            let mut dx = vec![T::zero(); batch * inputs];
            T::gemm(
                batch,
                outputs,
                inputs,
                T::one(),
                delta,
                (outputs as isize, 1),
                w,
                (inputs as isize, 1),
                T::zero(),
                &mut dx,
                (inputs as isize, 1),
            );
            dx
        }
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            height,
            width,
        } => {
            let (w, _) = params.expect("conv layer parameters");
            let (gw, gb) = grads.expect("conv layer gradients");
            let area = height * width;
            let patch = in_channels * KERNEL * KERNEL;
            let in_w = in_channels * area;
            let out_w = out_channels * area;
            let mut col = vec![T::zero(); patch * area];
            let mut dcol = vec![T::zero(); patch * area];
            let mut dx = vec![T::zero(); batch * in_w];
            for s in 0..batch {
                let d = &delta[s * out_w..(s + 1) * out_w];
                im2col(&input[s * in_w..(s + 1) * in_w], in_channels, height, width, &mut col);
                // dW[O×P] += δ[O×A] · colᵀ[A×P]
                T::gemm(
                    out_channels,
                    area,
                    patch,
                    T::one(),
                    d,
                    (area as isize, 1),
                    &col,
                    (1, area as isize),
                    T::one(),
                    gw,
                    (patch as isize, 1),
                );
                for (g, row) in gb.iter_mut().zip(d.chunks_exact(area)) {
                    *g += row.iter().copied().sum::<T>();
                }
                // dcol[P×A] = Wᵀ[P×O] · δ[O×A]
                T::gemm(
                    patch,
                    out_channels,
                    area,
                    T::one(),
                    w,
                    (1, patch as isize),
                    d,
                    (area as isize, 1),
                    T::zero(),
                    &mut dcol,
                    (area as isize, 1),
                );
                col2im(&dcol, in_channels, height, width, &mut dx[s * in_w..(s + 1) * in_w]);
            }
            dx
        }
        LayerSpec::MaxPool2x2 {
            channels,
            height,
            width,
        } => {
            let (oh, ow) = (height / 2, width / 2);
            let in_w = channels * height * width;
            let out_w = channels * oh * ow;
            let mut dx = vec![T::zero(); batch * in_w];
            for s in 0..batch {
                let x = &input[s * in_w..(s + 1) * in_w];
                let d = &delta[s * out_w..(s + 1) * out_w];
                let g = &mut dx[s * in_w..(s + 1) * in_w];
                for c in 0..channels {
                    let off = c * height * width;
                    let plane = &x[off..off + height * width];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let idx = pool_argmax(plane, width, oy, ox);
                            g[off + idx] += d[c * oh * ow + oy * ow + ox];
                        }
                    }
                }
            }
            dx
        }
        LayerSpec::Relu => delta
            .iter()
            .zip(output)
            .map(|(&d, &y)| if y > T::zero() { d } else { T::zero() })
            .collect(),
        LayerSpec::Sigmoid => delta
            .iter()
            .zip(output)
            .map(|(&d, &y)| d * y * (T::one() - y))
            .collect(),
        LayerSpec::Softmax => unreachable!("softmax gradient is fused with the loss"),
    }
}

/// Index (within the plane) of the maximum of the 2×2 window at `(oy, ox)`.
/// Ties resolve to the first element in row-major order.
fn pool_argmax<T: Real>(plane: &[T], width: usize, oy: usize, ox: usize) -> usize {
    let base = 2 * oy * width + 2 * ox;
    let mut best = base;
    for idx in [base + 1, base + width, base + width + 1] {
        if plane[idx] > plane[best] {
            best = idx;
        }
    }
    best
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

/// Unfolds a `c × h × w` map into a `(c·25) × (h·w)` patch matrix with
/// zero padding of 2 on every side.
fn im2col<T: Real>(x: &[T], channels: usize, height: usize, width: usize, col: &mut [T]) {
    let area = height * width;
    for c in 0..channels {
        let plane = &x[c * area..(c + 1) * area];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &mut col[((c * KERNEL + ky) * KERNEL + kx) * area..][..area];
                for oy in 0..height {
                    let dst = &mut row[oy * width..(oy + 1) * width];
                    let iy = oy + ky;
                    if iy < PAD || iy - PAD >= height {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[(iy - PAD) * width..(iy - PAD + 1) * width];
                    for (ox, v) in dst.iter_mut().enumerate() {
                        let ix = ox + kx;
                        *v = if ix < PAD || ix - PAD >= width {
                            T::zero()
                        } else {
                            src[ix - PAD]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the map.
fn col2im<T: Real>(col: &[T], channels: usize, height: usize, width: usize, dx: &mut [T]) {
    let area = height * width;
    for c in 0..channels {
        let plane = &mut dx[c * area..(c + 1) * area];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &col[((c * KERNEL + ky) * KERNEL + kx) * area..][..area];
                for oy in 0..height {
                    let iy = oy + ky;
                    if iy < PAD || iy - PAD >= height {
                        continue;
                    }
                    let dst = &mut plane[(iy - PAD) * width..(iy - PAD + 1) * width];
                    for (ox, &g) in row[oy * width..(oy + 1) * width].iter().enumerate() {
                        let ix = ox + kx;
                        if ix >= PAD && ix - PAD < width {
                            dst[ix - PAD] += g;
                        }
                    }
                }
            }
        }
    }
}
