//! 2-D convolution and its transpose (NCHW, weights `[Cout, Cin, kh, kw]`).
//!
//! Both are lowered to im2col + GEMM. The transposed convolution is the
//! input-gradient of the forward convolution, so the two share three kernels:
//! forward, input-backward and weight-backward.

use super::real::{gemm, Real, Trans};
use super::tape::Tape;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Explicit zero-padding per side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Pad2d {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Pad2d {
    pub const ZERO: Pad2d = Pad2d {
        top: 0,
        bottom: 0,
        left: 0,
        right: 0,
    };

    pub fn uniform(p: usize) -> Self {
        Self {
            top: p,
            bottom: p,
            left: p,
            right: p,
        }
    }

    /// TensorFlow-style "same" padding: output extent `ceil(in / stride)`,
    /// with any odd remainder placed after (bottom/right).
    pub fn same(h: usize, w: usize, kh: usize, kw: usize, stride: (usize, usize)) -> Self {
        let split = |n: usize, k: usize, s: usize| {
            let out = n.div_ceil(s);
            let total = ((out - 1) * s + k).saturating_sub(n);
            (total / 2, total - total / 2)
        };
        let (top, bottom) = split(h, kh, stride.0);
        let (left, right) = split(w, kw, stride.1);
        Self {
            top,
            bottom,
            left,
            right,
        }
    }
}

/// Geometry shared by the three kernels.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: (usize, usize),
    pub pad: Pad2d,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(
        c_in: usize,
        h: usize,
        w: usize,
        kh: usize,
        kw: usize,
        stride: (usize, usize),
        pad: Pad2d,
    ) -> Result<Self> {
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::invalid(format!("non-positive stride {stride:?}")));
        }
        let ph = h + pad.top + pad.bottom;
        let pw = w + pad.left + pad.right;
        if ph < kh || pw < kw || kh == 0 || kw == 0 {
            return Err(Error::shape(format!(
                "kernel {kh}x{kw} larger than padded input {ph}x{pw}"
            )));
        }
        Ok(Self {
            c_in,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            oh: (ph - kh) / stride.0 + 1,
            ow: (pw - kw) / stride.1 + 1,
        })
    }

    fn rows(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }
}

/// Unfolds one sample `[C, H, W]` into a `[C·kh·kw, oh·ow]` matrix.
fn im2col<T: Real>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let npix = g.cols();
    let (sh, sw) = g.stride;
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * npix..(row + 1) * npix];
                for oy in 0..g.oh {
                    let iy = (oy * sh + ki) as isize - g.pad.top as isize;
                    let out = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        out.fill(T::ZERO);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, o) in out.iter_mut().enumerate() {
                        let ix = (ox * sw + kj) as isize - g.pad.left as isize;
                        *o = if ix < 0 || ix >= g.w as isize {
                            T::ZERO
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Folds a `[C·kh·kw, oh·ow]` matrix back onto one sample, accumulating.
fn col2im<T: Real>(cols: &[T], g: &ConvGeom, x: &mut [T]) {
    let npix = g.cols();
    let (sh, sw) = g.stride;
    for c in 0..g.c_in {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * npix..(row + 1) * npix];
                for oy in 0..g.oh {
                    let iy = (oy * sh + ki) as isize - g.pad.top as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * sw + kj) as isize - g.pad.left as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `y[n] = W · im2col(x[n]) + b`.
pub(crate) fn conv_forward<T: Real>(
    x: &[T],
    n: usize,
    weight: &[T],
    c_out: usize,
    bias: Option<&[T]>,
    g: &ConvGeom,
) -> Vec<T> {
    let (rows, npix) = (g.rows(), g.cols());
    let in_len = g.c_in * g.h * g.w;
    let mut cols = vec![T::ZERO; rows * npix];
    let mut y = vec![T::ZERO; n * c_out * npix];
    for s in 0..n {
        im2col(&x[s * in_len..(s + 1) * in_len], g, &mut cols);
        let ys = &mut y[s * c_out * npix..(s + 1) * c_out * npix];
        if let Some(b) = bias {
            for (co, chunk) in ys.chunks_mut(npix).enumerate() {
                chunk.fill(b[co]);
            }
        }
        let beta = if bias.is_some() { T::ONE } else { T::ZERO };
        gemm(
            c_out,
            rows,
            npix,
            weight,
            Trans::No,
            &cols,
            Trans::No,
            ys,
            beta,
        );
    }
    y
}

/// Gradient w.r.t. the input: `x̄[n] = col2im(Wᵀ · ȳ[n])`.
pub(crate) fn conv_backward_input<T: Real>(
    gy: &[T],
    n: usize,
    weight: &[T],
    c_out: usize,
    g: &ConvGeom,
) -> Vec<T> {
    let (rows, npix) = (g.rows(), g.cols());
    let in_len = g.c_in * g.h * g.w;
    let mut cols = vec![T::ZERO; rows * npix];
    let mut gx = vec![T::ZERO; n * in_len];
    for s in 0..n {
        gemm(
            rows,
            c_out,
            npix,
            weight,
            Trans::Yes,
            &gy[s * c_out * npix..(s + 1) * c_out * npix],
            Trans::No,
            &mut cols,
            T::ZERO,
        );
        col2im(&cols, g, &mut gx[s * in_len..(s + 1) * in_len]);
    }
    gx
}

/// Gradient w.r.t. the weight: `W̄ = Σₙ ȳ[n] · im2col(x[n])ᵀ`.
pub(crate) fn conv_backward_weight<T: Real>(
    x: &[T],
    gy: &[T],
    n: usize,
    c_out: usize,
    g: &ConvGeom,
) -> Vec<T> {
    let (rows, npix) = (g.rows(), g.cols());
    let in_len = g.c_in * g.h * g.w;
    let mut cols = vec![T::ZERO; rows * npix];
    let mut gw = vec![T::ZERO; c_out * rows];
    for s in 0..n {
        im2col(&x[s * in_len..(s + 1) * in_len], g, &mut cols);
        gemm(
            c_out,
            npix,
            rows,
            &gy[s * c_out * npix..(s + 1) * c_out * npix],
            Trans::No,
            &cols,
            Trans::Yes,
            &mut gw,
            T::ONE,
        );
    }
    gw
}

fn bias_grad<T: Real>(gy: &[T], n: usize, c: usize, npix: usize) -> Vec<T> {
    let mut gb = vec![T::ZERO; c];
    for s in 0..n {
        for (co, g) in gb.iter_mut().enumerate() {
            let start = (s * c + co) * npix;
            *g += gy[start..start + npix].iter().copied().sum::<T>();
        }
    }
    gb
}

fn check_bias<T: Real>(bias: Option<&Tensor<T>>, c: usize) -> Result<()> {
    match bias {
        Some(b) if b.shape() != [c] => Err(Error::shape(format!(
            "bias shape {:?}, expected [{c}]",
            b.shape()
        ))),
        _ => Ok(()),
    }
}

impl<T: Real> Tape<T> {
    /// Zero-padded strided convolution.
    pub fn conv2d(
        &self,
        input: &Tensor<T>,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: (usize, usize),
        pad: Pad2d,
    ) -> Result<Tensor<T>> {
        let [n, c_in, h, w] = input.dims4()?;
        let [c_out, wc_in, kh, kw] = weight.dims4()?;
        if wc_in != c_in {
            return Err(Error::shape(format!(
                "conv2d channel mismatch: input has {c_in}, weight expects {wc_in}"
            )));
        }
        check_bias(bias, c_out)?;
        let g = ConvGeom::new(c_in, h, w, kh, kw, stride, pad)?;
        let y = conv_forward(
            input.data(),
            n,
            weight.data(),
            c_out,
            bias.map(|b| b.data()),
            &g,
        );
        let shape = vec![n, c_out, g.oh, g.ow];

        let mut inputs = vec![input, weight];
        if let Some(b) = bias {
            inputs.push(b);
        }
        let xs = input.shared_data();
        let ws = weight.shared_data();
        let has_bias = bias.is_some();
        self.record(
            &inputs,
            shape,
            y,
            Box::new(move |gy, need| {
                let mut out = vec![
                    need[0].then(|| conv_backward_input(gy, n, &ws, c_out, &g)),
                    need[1].then(|| conv_backward_weight(&xs, gy, n, c_out, &g)),
                ];
                if has_bias {
                    out.push(need[2].then(|| bias_grad(gy, n, c_out, g.oh * g.ow)));
                }
                out
            }),
        )
    }

    /// Transposed convolution with weight `[Cin, Cout, kh, kw]`; the forward
    /// map is the input-gradient of [`Tape::conv2d`] with the same weight.
    pub fn conv2d_transpose(
        &self,
        input: &Tensor<T>,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: (usize, usize),
        padding: (usize, usize),
        output_padding: (usize, usize),
    ) -> Result<Tensor<T>> {
        let [n, c_in, h, w] = input.dims4()?;
        let [wc_in, c_out, kh, kw] = weight.dims4()?;
        if wc_in != c_in {
            return Err(Error::shape(format!(
                "conv2d_transpose channel mismatch: input has {c_in}, weight expects {wc_in}"
            )));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::invalid(format!("non-positive stride {stride:?}")));
        }
        if output_padding.0 >= stride.0 || output_padding.1 >= stride.1 {
            return Err(Error::invalid(format!(
                "output_padding {output_padding:?} must be smaller than stride {stride:?}"
            )));
        }
        check_bias(bias, c_out)?;
        let full_h = (h - 1) * stride.0 + kh + output_padding.0;
        let full_w = (w - 1) * stride.1 + kw + output_padding.1;
        if full_h <= 2 * padding.0 || full_w <= 2 * padding.1 {
            return Err(Error::shape("padding consumes the whole output"));
        }
        let oh = full_h - 2 * padding.0;
        let ow = full_w - 2 * padding.1;
        // The adjoint convolution maps [c_out, oh, ow] -> [c_in, h, w].
        let g = ConvGeom::new(
            c_out,
            oh,
            ow,
            kh,
            kw,
            stride,
            Pad2d {
                top: padding.0,
                bottom: padding.0,
                left: padding.1,
                right: padding.1,
            },
        )?;
        debug_assert_eq!((g.oh, g.ow), (h, w));
        let mut y = conv_backward_input(input.data(), n, weight.data(), c_in, &g);
        if let Some(b) = bias {
            let npix = oh * ow;
            for s in 0..n {
                for (co, &bv) in b.data().iter().enumerate() {
                    let start = (s * c_out + co) * npix;
                    y[start..start + npix].iter_mut().for_each(|v| *v += bv);
                }
            }
        }
        let shape = vec![n, c_out, oh, ow];

        let mut inputs = vec![input, weight];
        if let Some(b) = bias {
            inputs.push(b);
        }
        let xs = input.shared_data();
        let ws = weight.shared_data();
        let has_bias = bias.is_some();
        self.record(
            &inputs,
            shape,
            y,
            Box::new(move |gy, need| {
                let mut out = vec![
                    need[0].then(|| conv_forward(gy, n, &ws, c_in, None, &g)),
                    need[1].then(|| conv_backward_weight(gy, &xs, n, c_in, &g)),
                ];
                if has_bias {
                    out.push(need[2].then(|| bias_grad(gy, n, c_out, oh * ow)));
                }
                out
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    /// Direct seven-loop convolution.
    fn naive_conv(
        x: &Tensor<f64>,
        w: &Tensor<f64>,
        stride: (usize, usize),
        pad: Pad2d,
    ) -> Vec<f64> {
        let [n, ci, h, wd] = x.dims4().unwrap();
        let [co, _, kh, kw] = w.dims4().unwrap();
        let oh = (h + pad.top + pad.bottom - kh) / stride.0 + 1;
        let ow = (wd + pad.left + pad.right - kw) / stride.1 + 1;
        let mut y = vec![0.0; n * co * oh * ow];
        for s in 0..n {
            for o in 0..co {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for c in 0..ci {
                            for i in 0..kh {
                                for j in 0..kw {
                                    let iy = (oy * stride.0 + i) as isize - pad.top as isize;
                                    let ix = (ox * stride.1 + j) as isize - pad.left as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd
                                    {
                                        acc += x.data()
                                            [((s * ci + c) * h + iy as usize) * wd + ix as usize]
                                            * w.data()[((o * ci + c) * kh + i) * kw + j];
                                    }
                                }
                            }
                        }
                        y[((s * co + o) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn ones_kernel_sums_to_nine() {
        let tape = Tape::<f64>::inference();
        let x = Tensor::ones([1, 1, 3, 3]);
        let w = Tensor::ones([1, 1, 3, 3]);
        let y = tape.conv2d(&x, &w, None, (1, 1), Pad2d::ZERO).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn unit_kernel_is_identity() {
        let tape = Tape::<f64>::inference();
        let x = t(
            &[2, 1, 3, 4],
            (0..24).map(|v| v as f64 * 0.5 - 3.0).collect(),
        );
        let w = Tensor::ones([1, 1, 1, 1]);
        let y = tape.conv2d(&x, &w, None, (1, 1), Pad2d::ZERO).unwrap();
        assert!(y.bit_eq(&x));
        let yt = tape
            .conv2d_transpose(&x, &w, None, (1, 1), (0, 0), (0, 0))
            .unwrap();
        assert!(yt.bit_eq(&x));
    }

    #[test]
    fn matches_naive_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f64>::randn([2, 3, 7, 6], 0.0, 1.0, &mut rng);
        let w = Tensor::<f64>::randn([4, 3, 3, 2], 0.0, 1.0, &mut rng);
        let pad = Pad2d {
            top: 1,
            bottom: 0,
            left: 2,
            right: 1,
        };
        let y = Tape::inference().conv2d(&x, &w, None, (2, 1), pad).unwrap();
        let want = naive_conv(&x, &w, (2, 1), pad);
        for (a, b) in y.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn output_extent_formula() {
        let tape = Tape::<f32>::inference();
        let x = Tensor::zeros([1, 2, 11, 9]);
        let w = Tensor::zeros([3, 2, 4, 3]);
        let pad = Pad2d {
            top: 1,
            bottom: 2,
            left: 0,
            right: 1,
        };
        let y = tape.conv2d(&x, &w, None, (3, 2), pad).unwrap();
        assert_eq!(
            y.shape(),
            &[1, 3, (11 + 3 - 4) / 3 + 1, (9 + 1 - 3) / 2 + 1]
        );
    }

    #[test]
    fn transpose_decoder_extent() {
        let tape = Tape::<f32>::inference();
        let x = Tensor::zeros([1, 1, 31, 31]);
        let w = Tensor::zeros([1, 1, 3, 3]);
        let y = tape
            .conv2d_transpose(&x, &w, None, (2, 2), (1, 1), (1, 1))
            .unwrap();
        assert_eq!(y.shape(), &[1, 1, 62, 62]);
    }

    #[test]
    fn errors() {
        let tape = Tape::<f32>::inference();
        let x = Tensor::zeros([1, 2, 5, 5]);
        let w = Tensor::zeros([1, 3, 3, 3]);
        assert!(matches!(
            tape.conv2d(&x, &w, None, (1, 1), Pad2d::ZERO),
            Err(Error::Shape(_))
        ));
        let w = Tensor::zeros([1, 2, 3, 3]);
        assert!(matches!(
            tape.conv2d(&x, &w, None, (0, 1), Pad2d::ZERO),
            Err(Error::InvalidArgument(_))
        ));
        let wt = Tensor::zeros([2, 1, 3, 3]);
        assert!(matches!(
            tape.conv2d_transpose(&x, &wt, None, (2, 2), (1, 1), (2, 0)),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn same_padding_matches_tensorflow() {
        assert_eq!(Pad2d::same(124, 124, 4, 4, (2, 2)), Pad2d::uniform(1));
        let p = Pad2d::same(31, 31, 4, 4, (2, 2));
        assert_eq!((p.top, p.bottom), (1, 2));
        let p = Pad2d::same(16, 16, 4, 4, (1, 1));
        assert_eq!((p.top, p.bottom), (1, 2));
        assert_eq!(Pad2d::same(62, 62, 3, 3, (1, 1)), Pad2d::uniform(1));
    }

    /// ⟨conv(x), y⟩ = ⟨x, convᵀ(y)⟩ and convᵀ equals the input-gradient of conv.
    #[test]
    fn transpose_is_adjoint_of_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = Tensor::<f64>::randn([3, 2, 3, 3], 0.0, 1.0, &mut rng);
        let x = Tensor::<f64>::randn([1, 2, 8, 8], 0.0, 1.0, &mut rng);
        let tape = Tape::<f64>::new();
        let y = tape
            .conv2d(&x, &w, None, (2, 2), Pad2d::uniform(1))
            .unwrap();
        let gy = Tensor::<f64>::randn(y.shape().to_vec(), 0.0, 1.0, &mut rng);
        let xt = tape
            .conv2d_transpose(&gy, &w, None, (2, 2), (1, 1), (1, 1))
            .unwrap();
        assert_eq!(xt.shape(), x.shape());

        let xl = tape.leaf(&x);
        let yl = tape
            .conv2d(&xl, &w, None, (2, 2), Pad2d::uniform(1))
            .unwrap();
        let gyc = Tensor::new(gy.shape().to_vec(), gy.data().to_vec()).unwrap();
        let prod = tape.mul(&yl, &gyc).unwrap();
        let loss = tape.sum(&prod).unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert!(grads.wrt(&xl).bit_eq(&xt));
    }
}
