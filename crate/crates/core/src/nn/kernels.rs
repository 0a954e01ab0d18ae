//! Forward and adjoint kernels on channel-by-time arrays.

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3, Axis};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    History,
    Future,
}

/// Left padding of a "same" convolution with kernel `k`.
pub fn same_pad(k: usize) -> usize {
    (k - 1) / 2
}

/// Cropping applied by a transposed convolution so the output is `t * stride` long.
pub fn transpose_pad(k: usize, stride: usize) -> usize {
    k.saturating_sub(stride) / 2
}

pub fn pointwise(x: ArrayView2<f64>, w: ArrayView2<f64>, b: Option<ArrayView1<f64>>) -> Array2<f64> {
    let mut y = w.dot(&x);
    if let Some(b) = b {
        y += &b.insert_axis(Axis(1));
    }
    y
}

pub fn depthwise(x: ArrayView2<f64>, coeffs: ArrayView2<f64>, dilation: usize, dir: Direction) -> Array2<f64> {
    let (c, t) = x.dim();
    let mut y = Array2::zeros((c, t));
    for ch in 0..c {
        let xr = x.row(ch);
        let mut yr = y.row_mut(ch);
        for (i, &a) in coeffs.row(ch).iter().enumerate() {
            let shift = match dir {
                Direction::History => dilation * i,
                Direction::Future => dilation * (i + 1),
            };
            if shift >= t {
                continue;
            }
            match dir {
                Direction::History => yr.slice_mut(s![shift..]).scaled_add(a, &xr.slice(s![..t - shift])),
                Direction::Future => yr.slice_mut(s![..t - shift]).scaled_add(a, &xr.slice(s![shift..])),
            }
        }
    }
    y
}

/// Input and coefficient gradients of [`depthwise`].
pub fn depthwise_backward(
    x: ArrayView2<f64>,
    coeffs: ArrayView2<f64>,
    dy: ArrayView2<f64>,
    dilation: usize,
    dir: Direction,
) -> (Array2<f64>, Array2<f64>) {
    let (c, t) = x.dim();
    let mut dx = Array2::zeros((c, t));
    let mut dc = Array2::zeros(coeffs.dim());
    for ch in 0..c {
        let xr = x.row(ch);
        let gr = dy.row(ch);
        let mut dxr = dx.row_mut(ch);
        for (i, &a) in coeffs.row(ch).iter().enumerate() {
            let shift = match dir {
                Direction::History => dilation * i,
                Direction::Future => dilation * (i + 1),
            };
            if shift >= t {
                continue;
            }
            let (gs, xs) = match dir {
                Direction::History => (gr.slice(s![shift..]), xr.slice(s![..t - shift])),
                Direction::Future => (gr.slice(s![..t - shift]), xr.slice(s![shift..])),
            };
            dc[[ch, i]] = gs.dot(&xs);
            match dir {
                Direction::History => dxr.slice_mut(s![..t - shift]).scaled_add(a, &gs),
                Direction::Future => dxr.slice_mut(s![shift..]).scaled_add(a, &gs),
            }
        }
    }
    (dx, dc)
}

fn im2col(x: ArrayView2<f64>, k: usize, stride: usize, pad: usize, t_out: usize) -> Array2<f64> {
    let (c, t) = x.dim();
    let mut cols = Array2::zeros((c * k, t_out));
    for ci in 0..c {
        let xr = x.row(ci);
        for kk in 0..k {
            let mut row = cols.row_mut(ci * k + kk);
            for (o, v) in row.iter_mut().enumerate() {
                let src = (o * stride + kk) as isize - pad as isize;
                if src >= 0 && (src as usize) < t {
                    *v = xr[src as usize];
                }
            }
        }
    }
    cols
}

fn col2im(cols: ArrayView2<f64>, c: usize, k: usize, stride: usize, pad: usize, t: usize) -> Array2<f64> {
    let mut x = Array2::zeros((c, t));
    for ci in 0..c {
        let mut xr = x.row_mut(ci);
        for kk in 0..k {
            let row = cols.row(ci * k + kk);
            for (o, &v) in row.iter().enumerate() {
                let dst = (o * stride + kk) as isize - pad as isize;
                if dst >= 0 && (dst as usize) < t {
                    xr[dst as usize] += v;
                }
            }
        }
    }
    x
}

fn flat(w: ArrayView3<f64>) -> ArrayView2<f64> {
    let (co, ci, k) = w.dim();
    w.into_shape_with_order((co, ci * k)).expect("contiguous kernel")
}

/// `y[o, t] = sum_{i,k} w[o, i, k] x[i, t*stride + k - pad] + b[o]`, `t < t_out`.
pub fn conv(
    x: ArrayView2<f64>,
    w: ArrayView3<f64>,
    b: Option<ArrayView1<f64>>,
    stride: usize,
    pad: usize,
    t_out: usize,
) -> Array2<f64> {
    let w = w.as_standard_layout();
    let cols = im2col(x, w.dim().2, stride, pad, t_out);
    let mut y = flat(w.view()).dot(&cols);
    if let Some(b) = b {
        y += &b.insert_axis(Axis(1));
    }
    y
}

/// Adjoint of [`conv`] with respect to its input, producing `t_in` samples.
pub fn conv_input_grad(dy: ArrayView2<f64>, w: ArrayView3<f64>, stride: usize, pad: usize, t_in: usize) -> Array2<f64> {
    let w = w.as_standard_layout();
    let (_, ci, k) = w.dim();
    let dcols = flat(w.view()).t().dot(&dy);
    col2im(dcols.view(), ci, k, stride, pad, t_in)
}

/// Gradient of [`conv`] with respect to its kernel.
pub fn conv_weight_grad(x: ArrayView2<f64>, dy: ArrayView2<f64>, k: usize, stride: usize, pad: usize) -> Array3<f64> {
    let cols = im2col(x, k, stride, pad, dy.dim().1);
    let dw = dy.dot(&cols.t());
    let (co, ci) = (dy.dim().0, x.dim().0);
    dw.into_shape_with_order((co, ci, k)).expect("kernel shape")
}

/// Transposed convolution with kernel `w` of shape `(c_in, c_out, k)`; output is `t * stride` long.
pub fn conv_transpose(x: ArrayView2<f64>, w: ArrayView3<f64>, b: Option<ArrayView1<f64>>, stride: usize) -> Array2<f64> {
    let k = w.dim().2;
    let t_out = x.dim().1 * stride;
    let mut y = conv_input_grad(x, w, stride, transpose_pad(k, stride), t_out);
    if let Some(b) = b {
        y += &b.insert_axis(Axis(1));
    }
    y
}

pub fn pixel_shuffle(x: ArrayView2<f64>, r: usize) -> Array2<f64> {
    let (cr, t) = x.dim();
    let c = cr / r;
    let mut y = Array2::zeros((c, t * r));
    for ch in 0..c {
        for j in 0..r {
            y.row_mut(ch).slice_mut(s![j..;r]).assign(&x.row(ch * r + j));
        }
    }
    y
}

pub fn pixel_unshuffle(y: ArrayView2<f64>, r: usize) -> Array2<f64> {
    let (c, tr) = y.dim();
    let t = tr / r;
    let mut x = Array2::zeros((c * r, t));
    for ch in 0..c {
        for j in 0..r {
            x.row_mut(ch * r + j).assign(&y.row(ch).slice(s![j..;r]));
        }
    }
    x
}

pub fn upsample(x: ArrayView2<f64>, r: usize) -> Array2<f64> {
    let (c, t) = x.dim();
    let mut y = Array2::zeros((c, t * r));
    for j in 0..r {
        y.slice_mut(s![.., j..;r]).assign(&x);
    }
    y
}

pub fn upsample_adjoint(dy: ArrayView2<f64>, r: usize) -> Array2<f64> {
    let (c, tr) = dy.dim();
    let mut dx = Array2::zeros((c, tr / r));
    for j in 0..r {
        dx += &dy.slice(s![.., j..;r]);
    }
    dx
}

pub fn sum_time(dy: ArrayView2<f64>) -> Array1<f64> {
    dy.sum_axis(Axis(1))
}
