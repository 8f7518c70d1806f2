//! 3×3 convolution, stride 1, zero "same" padding, NHWC layout.
//!
//! Lowered to GEMM through an im2col buffer built for a bounded run of
//! output pixels at a time, so memory stays flat for large batches.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const KERNEL: usize = 3;
const PAD: isize = 1;
/// Upper bound on im2col buffer elements per chunk.
const COL_BUDGET: usize = 1 << 21;

#[derive(Clone, Copy)]
struct Geometry {
    n: usize,
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
}

impl Geometry {
    fn pixels(&self) -> usize {
        self.n * self.h * self.w
    }

    fn patch(&self) -> usize {
        KERNEL * KERNEL * self.cin
    }

    fn chunk_rows(&self) -> usize {
        (COL_BUDGET / self.patch()).max(1)
    }
}

fn geometry<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Geometry> {
    let (n, h, w, cin) = input.nhwc("conv2d")?;
    weights.expect_rank("conv2d", 4)?;
    let ws = weights.shape();
    if ws[0] != KERNEL {
        return Err(Error::dim("conv2d", "weights 0 (kernel height)", KERNEL, ws[0]));
    }
    if ws[1] != KERNEL {
        return Err(Error::dim("conv2d", "weights 1 (kernel width)", KERNEL, ws[1]));
    }
    if ws[2] != cin {
        return Err(Error::dim("conv2d", "3 (input channels)", ws[2], cin));
    }
    let cout = ws[3];
    if bias.shape() != [cout] {
        return Err(Error::dim("conv2d", "bias 0 (output channels)", cout, format!("{:?}", bias.shape())));
    }
    Ok(Geometry { n, h, w, cin, cout })
}

/// Fills `col` with patches for flat output pixels `start..start + rows`.
fn im2col<T: Scalar>(x: &[T], g: Geometry, start: usize, rows: usize, col: &mut [T]) {
    let patch = g.patch();
    for r in 0..rows {
        let p = start + r;
        let n = p / (g.h * g.w);
        let y = (p / g.w) % g.h;
        let xx = p % g.w;
        let dst = &mut col[r * patch..(r + 1) * patch];
        for ky in 0..KERNEL {
            let iy = y as isize + ky as isize - PAD;
            for kx in 0..KERNEL {
                let ix = xx as isize + kx as isize - PAD;
                let off = (ky * KERNEL + kx) * g.cin;
                let cell = &mut dst[off..off + g.cin];
                if iy < 0 || iy >= g.h as isize || ix < 0 || ix >= g.w as isize {
                    cell.fill(T::zero());
                } else {
                    let src = ((n * g.h + iy as usize) * g.w + ix as usize) * g.cin;
                    cell.copy_from_slice(&x[src..src + g.cin]);
                }
            }
        }
    }
}

/// Scatter-adds patch gradients back onto the input gradient.
fn col2im<T: Scalar>(col: &[T], g: Geometry, start: usize, rows: usize, dx: &mut [T]) {
    let patch = g.patch();
    for r in 0..rows {
        let p = start + r;
        let n = p / (g.h * g.w);
        let y = (p / g.w) % g.h;
        let xx = p % g.w;
        let src = &col[r * patch..(r + 1) * patch];
        for ky in 0..KERNEL {
            let iy = y as isize + ky as isize - PAD;
            if iy < 0 || iy >= g.h as isize {
                continue;
            }
            for kx in 0..KERNEL {
                let ix = xx as isize + kx as isize - PAD;
                if ix < 0 || ix >= g.w as isize {
                    continue;
                }
                let off = (ky * KERNEL + kx) * g.cin;
                let dst = ((n * g.h + iy as usize) * g.w + ix as usize) * g.cin;
                for (d, &s) in dx[dst..dst + g.cin].iter_mut().zip(&src[off..off + g.cin]) {
                    *d += s;
                }
            }
        }
    }
}

/// Forward convolution: `[N,H,W,Cin] * [3,3,Cin,Cout] + [Cout] -> [N,H,W,Cout]`.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let g = geometry(input, weights, bias)?;
    let patch = g.patch();
    let mut out = vec![T::zero(); g.pixels() * g.cout];
    for row in out.chunks_exact_mut(g.cout) {
        row.copy_from_slice(bias.data());
    }
    let chunk = g.chunk_rows();
    let mut col = vec![T::zero(); chunk.min(g.pixels()) * patch];
    let mut start = 0;
    while start < g.pixels() {
        let rows = chunk.min(g.pixels() - start);
        im2col(input.data(), g, start, rows, &mut col);
        T::gemm(
            rows,
            patch,
            g.cout,
            T::one(),
            &col,
            (patch as isize, 1),
            weights.data(),
            (g.cout as isize, 1),
            T::one(),
            &mut out[start * g.cout..(start + rows) * g.cout],
            (g.cout as isize, 1),
        );
        start += rows;
    }
    Tensor::new(&[g.n, g.h, g.w, g.cout], out)
}

/// Gradients of a convolution with respect to input, weights and bias.
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let g = geometry(input, weights, bias)?;
    grad_out.expect_shape("conv2d backward", &[g.n, g.h, g.w, g.cout])?;
    let patch = g.patch();
    let dy = grad_out.data();

    let mut dw = vec![T::zero(); patch * g.cout];
    let mut db = vec![T::zero(); g.cout];
    let mut dx = vec![T::zero(); input.len()];
    for row in dy.chunks_exact(g.cout) {
        for (b, &v) in db.iter_mut().zip(row) {
            *b += v;
        }
    }

    let chunk = g.chunk_rows();
    let cap = chunk.min(g.pixels());
    let mut col = vec![T::zero(); cap * patch];
    let mut dcol = vec![T::zero(); cap * patch];
    let mut start = 0;
    while start < g.pixels() {
        let rows = chunk.min(g.pixels() - start);
        let dy_chunk = &dy[start * g.cout..(start + rows) * g.cout];
        im2col(input.data(), g, start, rows, &mut col);
        // dW += col^T · dY
        T::gemm(
            patch,
            rows,
            g.cout,
            T::one(),
            &col,
            (1, patch as isize),
            dy_chunk,
            (g.cout as isize, 1),
            T::one(),
            &mut dw,
            (g.cout as isize, 1),
        );
        // dcol = dY · W^T
        T::gemm(
            rows,
            g.cout,
            patch,
            T::one(),
            dy_chunk,
            (g.cout as isize, 1),
            weights.data(),
            (1, g.cout as isize),
            T::zero(),
            &mut dcol[..rows * patch],
            (patch as isize, 1),
        );
        col2im(&dcol, g, start, rows, &mut dx);
        start += rows;
    }

    Ok(ConvGrads {
        input: Tensor::new(input.shape(), dx)?,
        weights: Tensor::new(weights.shape(), dw)?,
        bias: Tensor::new(bias.shape(), db)?,
    })
}

/// Convolution layer with owned parameters and a cached input.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub name: String,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(name: impl Into<String>, weight: Tensor<T>, bias: Tensor<T>) -> Self {
        Self {
            name: name.into(),
            weight,
            bias,
            cache: None,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[3]
    }

    pub fn forward(&mut self, x: &Tensor<T>, keep: bool) -> Result<Tensor<T>> {
        let y = conv2d(x, &self.weight, &self.bias)?;
        self.cache = keep.then(|| x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self
            .cache
            .take()
            .ok_or_else(|| Error::InvalidArgument(format!("{}: backward without forward", self.name)))?;
        let grads = conv2d_backward(&x, &self.weight, &self.bias, grad_out)?;
        accumulate(&mut self.weight, &grads.weights);
        accumulate(&mut self.bias, &grads.bias);
        Ok(grads.input)
    }
}

pub(crate) fn accumulate<T: Scalar>(param: &mut Tensor<T>, grad: &Tensor<T>) {
    for (g, &d) in param.grad_mut().iter_mut().zip(grad.data()) {
        *g += d;
    }
}
