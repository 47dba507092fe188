use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::{gemm, Param, Parameterized, Tensor};

/// 2-D convolution without bias (always followed by batch norm here).
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    cache: Option<ConvCache>,
}

#[derive(Debug, Clone)]
struct ConvCache {
    col: Vec<f32>,
    in_shape: [usize; 4],
    out_hw: (usize, usize),
}

impl Conv2d {
    /// Kaiming-normal initialization (fan-out, ReLU gain).
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let std = (2.0 / (cout * kernel * kernel) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let value = (0..cout * cin * kernel * kernel)
            .map(|_| normal.sample(rng) as f32)
            .collect();
        Conv2d {
            weight: Param::new(format!("{name}.weight"), vec![cout, cin, kernel, kernel], value),
            cin,
            cout,
            kernel,
            stride,
            pad,
            cache: None,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    /// Column matrix `[cin*k*k, n*oh*ow]`.
    fn im2col(&self, x: &Tensor) -> (Vec<f32>, (usize, usize)) {
        let [n, c, h, w] = x.shape;
        assert_eq!(c, self.cin, "{} expects {} input channels", self.weight.name, self.cin);
        let (oh, ow) = self.out_hw(h, w);
        let p = oh * ow;
        let np = n * p;
        let k = self.kernel;
        let mut col = vec![0.0f32; c * k * k * np];
        for ci in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((ci * k + ky) * k + kx) * np;
                    for b in 0..n {
                        let plane = &x.data[(b * c + ci) * h * w..(b * c + ci + 1) * h * w];
                        let dst = &mut col[row + b * p..row + (b + 1) * p];
                        for oy in 0..oh {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                            for ox in 0..ow {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix >= 0 && ix < w as isize {
                                    dst[oy * ow + ox] = src_row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        (col, (oh, ow))
    }

    fn apply(&self, col: &[f32], n: usize, (oh, ow): (usize, usize)) -> Tensor {
        let p = oh * ow;
        let kk = self.cin * self.kernel * self.kernel;
        let mut ymat = vec![0.0f32; self.cout * n * p];
        gemm(
            self.cout,
            kk,
            n * p,
            &self.weight.value,
            (kk as isize, 1),
            col,
            ((n * p) as isize, 1),
            &mut ymat,
            false,
        );
        let mut y = Tensor::zeros([n, self.cout, oh, ow]);
        for co in 0..self.cout {
            for b in 0..n {
                y.data[(b * self.cout + co) * p..(b * self.cout + co + 1) * p]
                    .copy_from_slice(&ymat[co * n * p + b * p..co * n * p + (b + 1) * p]);
            }
        }
        y
    }

    pub fn infer(&self, x: &Tensor) -> Tensor {
        let (col, hw) = self.im2col(x);
        self.apply(&col, x.batch(), hw)
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let (col, hw) = self.im2col(x);
        let y = self.apply(&col, x.batch(), hw);
        self.cache = Some(ConvCache {
            col,
            in_shape: x.shape,
            out_hw: hw,
        });
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let cache = self.cache.take().expect("Conv2d::backward without forward");
        let [n, c, h, w] = cache.in_shape;
        let (oh, ow) = cache.out_hw;
        let p = oh * ow;
        let np = n * p;
        let k = self.kernel;
        let kk = c * k * k;

        let mut dymat = vec![0.0f32; self.cout * np];
        for co in 0..self.cout {
            for b in 0..n {
                dymat[co * np + b * p..co * np + (b + 1) * p]
                    .copy_from_slice(&dy.data[(b * self.cout + co) * p..(b * self.cout + co + 1) * p]);
            }
        }
        // dW += dY * col^T
        gemm(
            self.cout,
            np,
            kk,
            &dymat,
            (np as isize, 1),
            &cache.col,
            (1, np as isize),
            &mut self.weight.grad,
            true,
        );
        // dcol = W^T * dY
        let mut dcol = vec![0.0f32; kk * np];
        gemm(
            kk,
            self.cout,
            np,
            &self.weight.value,
            (1, kk as isize),
            &dymat,
            (np as isize, 1),
            &mut dcol,
            false,
        );
        let mut dx = Tensor::zeros(cache.in_shape);
        for ci in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((ci * k + ky) * k + kx) * np;
                    for b in 0..n {
                        let src = &dcol[row + b * p..row + (b + 1) * p];
                        let plane = &mut dx.data[(b * c + ci) * h * w..(b * c + ci + 1) * h * w];
                        for oy in 0..oh {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for ox in 0..ow {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix >= 0 && ix < w as isize {
                                    plane[iy as usize * w + ix as usize] += src[oy * ow + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

impl Parameterized for Conv2d {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    pub momentum: f32,
    pub eps: f32,
    cache: Option<(Vec<f32>, Vec<f32>, [usize; 4])>,
}

impl BatchNorm2d {
    pub fn new(name: &str, channels: usize) -> Self {
        BatchNorm2d {
            gamma: Param::new(format!("{name}.weight"), vec![channels], vec![1.0; channels]),
            beta: Param::new(format!("{name}.bias"), vec![channels], vec![0.0; channels]),
            running_mean: Param::buffer(format!("{name}.running_mean"), vec![channels], vec![0.0; channels]),
            running_var: Param::buffer(format!("{name}.running_var"), vec![channels], vec![1.0; channels]),
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn infer(&self, x: &Tensor) -> Tensor {
        let [n, c, h, w] = x.shape;
        let hw = h * w;
        let mut y = x.clone();
        for ci in 0..c {
            let scale = self.gamma.value[ci] / (self.running_var.value[ci] + self.eps).sqrt();
            let shift = self.beta.value[ci] - self.running_mean.value[ci] * scale;
            for b in 0..n {
                for v in &mut y.data[(b * c + ci) * hw..(b * c + ci + 1) * hw] {
                    *v = *v * scale + shift;
                }
            }
        }
        y
    }

    /// Batch statistics; updates the running estimates.
    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let [n, c, h, w] = x.shape;
        let hw = h * w;
        let m = (n * hw) as f64;
        let mut xhat = vec![0.0f32; x.data.len()];
        let mut inv_std = vec![0.0f32; c];
        let mut y = Tensor::zeros(x.shape);
        for ci in 0..c {
            let mut sum = 0.0f64;
            for b in 0..n {
                sum += x.data[(b * c + ci) * hw..(b * c + ci + 1) * hw]
                    .iter()
                    .map(|&v| v as f64)
                    .sum::<f64>();
            }
            let mean = sum / m;
            let mut sq = 0.0f64;
            for b in 0..n {
                sq += x.data[(b * c + ci) * hw..(b * c + ci + 1) * hw]
                    .iter()
                    .map(|&v| (v as f64 - mean).powi(2))
                    .sum::<f64>();
            }
            let var = sq / m;
            let istd = 1.0 / (var + self.eps as f64).sqrt();
            inv_std[ci] = istd as f32;
            let (g, bt) = (self.gamma.value[ci], self.beta.value[ci]);
            for b in 0..n {
                let range = (b * c + ci) * hw..(b * c + ci + 1) * hw;
                for i in range {
                    let xh = ((x.data[i] as f64 - mean) * istd) as f32;
                    xhat[i] = xh;
                    y.data[i] = g * xh + bt;
                }
            }
            let unbiased = if m > 1.0 { var * m / (m - 1.0) } else { var };
            let mom = self.momentum;
            self.running_mean.value[ci] = (1.0 - mom) * self.running_mean.value[ci] + mom * mean as f32;
            self.running_var.value[ci] = (1.0 - mom) * self.running_var.value[ci] + mom * unbiased as f32;
        }
        self.cache = Some((xhat, inv_std, x.shape));
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let (xhat, inv_std, shape) = self.cache.take().expect("BatchNorm2d::backward without forward");
        let [n, c, h, w] = shape;
        let hw = h * w;
        let m = (n * hw) as f32;
        let mut dx = Tensor::zeros(shape);
        for ci in 0..c {
            let (mut sum_dy, mut sum_dy_xhat) = (0.0f64, 0.0f64);
            for b in 0..n {
                for i in (b * c + ci) * hw..(b * c + ci + 1) * hw {
                    sum_dy += dy.data[i] as f64;
                    sum_dy_xhat += (dy.data[i] * xhat[i]) as f64;
                }
            }
            self.gamma.grad[ci] += sum_dy_xhat as f32;
            self.beta.grad[ci] += sum_dy as f32;
            let k = self.gamma.value[ci] * inv_std[ci] / m;
            let (sd, sdx) = (sum_dy as f32, sum_dy_xhat as f32);
            for b in 0..n {
                for i in (b * c + ci) * hw..(b * c + ci + 1) * hw {
                    dx.data[i] = k * (m * dy.data[i] - sd - xhat[i] * sdx);
                }
            }
        }
        dx
    }
}

impl Parameterized for BatchNorm2d {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.gamma);
        f(&self.beta);
        f(&self.running_mean);
        f(&self.running_var);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.gamma);
        f(&mut self.beta);
        f(&mut self.running_mean);
        f(&mut self.running_var);
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Vec<bool>,
}

impl Relu {
    pub fn infer(x: &Tensor) -> Tensor {
        let mut y = x.clone();
        y.data.iter_mut().for_each(|v| *v = v.max(0.0));
        y
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        self.mask = x.data.iter().map(|&v| v > 0.0).collect();
        Relu::infer(x)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let mut dx = dy.clone();
        for (g, &keep) in dx.data.iter_mut().zip(&self.mask) {
            if !keep {
                *g = 0.0;
            }
        }
        dx
    }
}

/// Fully connected layer on `[n, d, 1, 1]` inputs.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    pub n_in: usize,
    pub n_out: usize,
    cache: Option<Tensor>,
}

impl Linear {
    /// Uniform `(-1/sqrt(n_in), 1/sqrt(n_in))` initialization for weights and bias.
    pub fn new<R: Rng + ?Sized>(name: &str, n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (n_in as f32).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let weight = (0..n_in * n_out).map(|_| dist.sample(rng)).collect();
        let bias = (0..n_out).map(|_| dist.sample(rng)).collect();
        Linear {
            weight: Param::new(format!("{name}.weight"), vec![n_out, n_in], weight),
            bias: Param::new(format!("{name}.bias"), vec![n_out], bias),
            n_in,
            n_out,
            cache: None,
        }
    }

    pub fn infer(&self, x: &Tensor) -> Tensor {
        let n = x.batch();
        assert_eq!(
            x.item_len(),
            self.n_in,
            "{} expects {} inputs",
            self.weight.name,
            self.n_in
        );
        let mut y = vec![0.0f32; n * self.n_out];
        for row in y.chunks_exact_mut(self.n_out) {
            row.copy_from_slice(&self.bias.value);
        }
        gemm(
            n,
            self.n_in,
            self.n_out,
            &x.data,
            (self.n_in as isize, 1),
            &self.weight.value,
            (1, self.n_in as isize),
            &mut y,
            true,
        );
        Tensor::matrix(n, self.n_out, y)
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let y = self.infer(x);
        self.cache = Some(x.clone());
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let x = self.cache.take().expect("Linear::backward without forward");
        let n = x.batch();
        gemm(
            self.n_out,
            n,
            self.n_in,
            &dy.data,
            (1, self.n_out as isize),
            &x.data,
            (self.n_in as isize, 1),
            &mut self.weight.grad,
            true,
        );
        for row in dy.data.chunks_exact(self.n_out) {
            for (g, d) in self.bias.grad.iter_mut().zip(row) {
                *g += d;
            }
        }
        let mut dx = vec![0.0f32; n * self.n_in];
        gemm(
            n,
            self.n_out,
            self.n_in,
            &dy.data,
            (self.n_out as isize, 1),
            &self.weight.value,
            (self.n_in as isize, 1),
            &mut dx,
            false,
        );
        Tensor::from_vec(x.shape, dx)
    }
}

impl Parameterized for Linear {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// Inverted dropout: kept units are scaled by `1 / (1 - rate)`.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub rate: f32,
    mask: Vec<f32>,
}

impl Dropout {
    pub fn new(rate: f32) -> Self {
        Dropout { rate, mask: Vec::new() }
    }

    pub fn forward<R: Rng + ?Sized>(&mut self, x: &Tensor, rng: &mut R) -> Tensor {
        let keep = 1.0 - self.rate;
        let scale = if keep > 0.0 { 1.0 / keep } else { 0.0 };
        self.mask = (0..x.data.len())
            .map(|_| if rng.random::<f32>() < self.rate { 0.0 } else { scale })
            .collect();
        let mut y = x.clone();
        for (v, m) in y.data.iter_mut().zip(&self.mask) {
            *v *= m;
        }
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let mut dx = dy.clone();
        for (g, m) in dx.data.iter_mut().zip(&self.mask) {
            *g *= m;
        }
        dx
    }

    /// Mask applied by the last training forward (0 = dropped).
    pub fn last_mask(&self) -> &[f32] {
        &self.mask
    }
}

/// Non-overlapping `k x k` average pooling (remainders are discarded).
#[derive(Debug, Clone)]
pub struct AvgPool {
    pub k: usize,
    in_shape: [usize; 4],
}

impl AvgPool {
    pub fn new(k: usize) -> Self {
        AvgPool { k, in_shape: [0; 4] }
    }

    pub fn infer(&self, x: &Tensor) -> Tensor {
        let [n, c, h, w] = x.shape;
        let k = self.k;
        if k == 1 {
            return x.clone();
        }
        let (oh, ow) = (h / k, w / k);
        let mut y = Tensor::zeros([n, c, oh, ow]);
        let inv = 1.0 / (k * k) as f32;
        for plane in 0..n * c {
            let src = &x.data[plane * h * w..(plane + 1) * h * w];
            let dst = &mut y.data[plane * oh * ow..(plane + 1) * oh * ow];
            for oy in 0..oh {
                for ky in 0..k {
                    let row = &src[(oy * k + ky) * w..(oy * k + ky) * w + ow * k];
                    for (ox, chunk) in row.chunks_exact(k).enumerate() {
                        dst[oy * ow + ox] += chunk.iter().sum::<f32>();
                    }
                }
            }
            dst.iter_mut().for_each(|v| *v *= inv);
        }
        y
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        self.in_shape = x.shape;
        self.infer(x)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let [n, c, h, w] = self.in_shape;
        let k = self.k;
        if k == 1 {
            return dy.clone();
        }
        let (oh, ow) = (h / k, w / k);
        let inv = 1.0 / (k * k) as f32;
        let mut dx = Tensor::zeros(self.in_shape);
        for plane in 0..n * c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = dy.data[plane * oh * ow + oy * ow + ox] * inv;
                    for ky in 0..k {
                        for kx in 0..k {
                            dx.data[plane * h * w + (oy * k + ky) * w + ox * k + kx] = g;
                        }
                    }
                }
            }
        }
        dx
    }
}

/// `[n, c, h, w] -> [n, c, 1, 1]`.
#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    in_shape: [usize; 4],
}

impl GlobalAvgPool {
    pub fn infer(x: &Tensor) -> Tensor {
        let [n, c, h, w] = x.shape;
        let hw = h * w;
        let data = x
            .data
            .chunks_exact(hw)
            .map(|p| p.iter().sum::<f32>() / hw as f32)
            .collect();
        Tensor::from_vec([n, c, 1, 1], data)
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        self.in_shape = x.shape;
        GlobalAvgPool::infer(x)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let [_, _, h, w] = self.in_shape;
        let hw = h * w;
        let mut dx = Tensor::zeros(self.in_shape);
        for (plane, g) in dx.data.chunks_exact_mut(hw).zip(&dy.data) {
            plane.iter_mut().for_each(|v| *v = g / hw as f32);
        }
        dx
    }
}

/// `3 x 3`, stride 2, padding 1 max pooling.
#[derive(Debug, Clone, Default)]
pub struct MaxPool {
    argmax: Vec<usize>,
    in_shape: [usize; 4],
}

impl MaxPool {
    fn run(x: &Tensor) -> (Tensor, Vec<usize>) {
        let [n, c, h, w] = x.shape;
        let (oh, ow) = ((h + 2 - 3) / 2 + 1, (w + 2 - 3) / 2 + 1);
        let mut y = Tensor::zeros([n, c, oh, ow]);
        let mut arg = vec![0usize; y.data.len()];
        for plane in 0..n * c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_i = 0;
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let iy = (oy * 2 + ky) as isize - 1;
                            let ix = (ox * 2 + kx) as isize - 1;
                            if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                                let i = plane * h * w + iy as usize * w + ix as usize;
                                if x.data[i] > best {
                                    best = x.data[i];
                                    best_i = i;
                                }
                            }
                        }
                    }
                    let o = plane * oh * ow + oy * ow + ox;
                    y.data[o] = best;
                    arg[o] = best_i;
                }
            }
        }
        (y, arg)
    }

    pub fn infer(x: &Tensor) -> Tensor {
        MaxPool::run(x).0
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let (y, arg) = MaxPool::run(x);
        self.argmax = arg;
        self.in_shape = x.shape;
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let mut dx = Tensor::zeros(self.in_shape);
        for (g, &i) in dy.data.iter().zip(&self.argmax) {
            dx.data[i] += g;
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_from_seed;

    fn rand_tensor(shape: [usize; 4], seed: u64) -> Tensor {
        let mut rng = stream_from_seed(seed);
        let data = (0..shape.iter().product::<usize>())
            .map(|_| rng.random::<f32>() * 2.0 - 1.0)
            .collect();
        Tensor::from_vec(shape, data)
    }

    /// Loss = sum(y * r) for a fixed random r; returns (loss, dL/dy).
    fn probe(y: &Tensor, seed: u64) -> (f64, Tensor) {
        let r = rand_tensor(y.shape, seed);
        let loss = y.data.iter().zip(&r.data).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        (loss, r)
    }

    fn check_close(analytic: f32, numeric: f64, what: &str) {
        let err = (analytic as f64 - numeric).abs();
        let scale = numeric.abs().max(analytic.abs() as f64).max(1e-2);
        assert!(err / scale < 2e-2, "{what}: analytic {analytic} numeric {numeric}");
    }

    #[test]
    fn conv_gradients() {
        let mut rng = stream_from_seed(1);
        let mut conv = Conv2d::new("c", 2, 3, 3, 2, 1, &mut rng);
        let x = rand_tensor([2, 2, 5, 5], 2);
        let y = conv.forward(&x);
        assert_eq!(y.shape, [2, 3, 3, 3]);
        let (_, r) = probe(&y, 3);
        let dx = conv.backward(&r);
        let eps = 1e-2f32;
        for i in [0, 7, 19, 33, 49] {
            let mut xp = x.clone();
            xp.data[i] += eps;
            let mut xm = x.clone();
            xm.data[i] -= eps;
            let num = (probe(&conv.infer(&xp), 3).0 - probe(&conv.infer(&xm), 3).0) / (2.0 * eps as f64);
            check_close(dx.data[i], num, "conv dx");
        }
        for i in [0, 5, 17, 40, 53] {
            let mut cp = conv.clone();
            cp.weight.value[i] += eps;
            let mut cm = conv.clone();
            cm.weight.value[i] -= eps;
            let num = (probe(&cp.infer(&x), 3).0 - probe(&cm.infer(&x), 3).0) / (2.0 * eps as f64);
            check_close(conv.weight.grad[i], num, "conv dw");
        }
    }

    #[test]
    fn batchnorm_gradients() {
        let mut bn = BatchNorm2d::new("bn", 3);
        bn.gamma.value = vec![0.5, 1.5, -1.0];
        bn.beta.value = vec![0.1, -0.2, 0.3];
        let x = rand_tensor([4, 3, 2, 2], 4);
        let y = bn.clone().forward(&x);
        let (_, r) = probe(&y, 5);
        let mut bn_run = bn.clone();
        bn_run.forward(&x);
        let dx = bn_run.backward(&r);
        let eps = 1e-2f32;
        for i in [0, 3, 11, 20, 47] {
            let mut xp = x.clone();
            xp.data[i] += eps;
            let mut xm = x.clone();
            xm.data[i] -= eps;
            let lp = probe(&bn.clone().forward(&xp), 5).0;
            let lm = probe(&bn.clone().forward(&xm), 5).0;
            check_close(dx.data[i], (lp - lm) / (2.0 * eps as f64), "bn dx");
        }
        for c in 0..3 {
            let mut bp = bn.clone();
            bp.gamma.value[c] += eps;
            let mut bm = bn.clone();
            bm.gamma.value[c] -= eps;
            let num = (probe(&bp.forward(&x), 5).0 - probe(&bm.forward(&x), 5).0) / (2.0 * eps as f64);
            check_close(bn_run.gamma.grad[c], num, "bn dgamma");
        }
    }

    #[test]
    fn batchnorm_running_stats_drive_inference() {
        let mut bn = BatchNorm2d::new("bn", 1);
        let x = Tensor::from_vec([2, 1, 1, 2], vec![1.0, 3.0, 5.0, 7.0]);
        bn.forward(&x);
        assert!((bn.running_mean.value[0] - 0.4).abs() < 1e-6);
        // unbiased variance of [1,3,5,7] is 20/3
        assert!((bn.running_var.value[0] - (0.9 + 0.1 * 20.0 / 3.0)).abs() < 1e-5);
        let y = bn.infer(&x);
        let expect = (1.0 - 0.4) / (bn.running_var.value[0] + 1e-5).sqrt();
        assert!((y.data[0] - expect).abs() < 1e-5);
    }

    #[test]
    fn linear_gradients() {
        let mut rng = stream_from_seed(6);
        let mut fc = Linear::new("fc", 4, 3, &mut rng);
        let x = rand_tensor([5, 4, 1, 1], 7);
        let y = fc.forward(&x);
        let (_, r) = probe(&y, 8);
        let dx = fc.backward(&r);
        let eps = 1e-2f32;
        for i in [0, 6, 13, 19] {
            let mut xp = x.clone();
            xp.data[i] += eps;
            let mut xm = x.clone();
            xm.data[i] -= eps;
            let num = (probe(&fc.infer(&xp), 8).0 - probe(&fc.infer(&xm), 8).0) / (2.0 * eps as f64);
            check_close(dx.data[i], num, "fc dx");
        }
        for i in [0, 5, 11] {
            let mut fp = fc.clone();
            fp.weight.value[i] += eps;
            let mut fm = fc.clone();
            fm.weight.value[i] -= eps;
            let num = (probe(&fp.infer(&x), 8).0 - probe(&fm.infer(&x), 8).0) / (2.0 * eps as f64);
            check_close(fc.weight.grad[i], num, "fc dw");
        }
        let bias_grad: f32 = (0..5).map(|n| r.data[n * 3 + 1]).sum();
        assert!((fc.bias.grad[1] - bias_grad).abs() < 1e-5);
    }

    #[test]
    fn pooling_gradients_distribute() {
        let x = rand_tensor([1, 2, 4, 4], 9);
        let mut pool = AvgPool::new(2);
        let y = pool.forward(&x);
        assert_eq!(y.shape, [1, 2, 2, 2]);
        let expect = (x.data[0] + x.data[1] + x.data[4] + x.data[5]) / 4.0;
        assert!((y.data[0] - expect).abs() < 1e-6);
        let dx = pool.backward(&Tensor::from_vec(y.shape, vec![4.0; 8]));
        assert!(dx.data.iter().all(|&v| v == 1.0));

        let mut gap = GlobalAvgPool::default();
        let g = gap.forward(&x);
        assert_eq!(g.shape, [1, 2, 1, 1]);
        let dx = gap.backward(&Tensor::from_vec([1, 2, 1, 1], vec![16.0, 32.0]));
        assert!(dx.data[..16].iter().all(|&v| v == 1.0));
        assert!(dx.data[16..].iter().all(|&v| v == 2.0));

        let mut mp = MaxPool::default();
        let m = mp.forward(&x);
        assert_eq!(m.shape, [1, 2, 2, 2]);
        let dx = mp.backward(&Tensor::from_vec(m.shape, vec![1.0; 8]));
        assert!((dx.data.iter().sum::<f32>() - 8.0).abs() < 1e-6);
    }

    #[test]
    fn relu_and_dropout() {
        let x = Tensor::from_vec([1, 4, 1, 1], vec![-1.0, 0.5, 0.0, 2.0]);
        let mut relu = Relu::default();
        assert_eq!(relu.forward(&x).data, vec![0.0, 0.5, 0.0, 2.0]);
        assert_eq!(
            relu.backward(&Tensor::from_vec([1, 4, 1, 1], vec![1.0; 4])).data,
            vec![0.0, 1.0, 0.0, 1.0]
        );

        let mut drop = Dropout::new(0.5);
        let y = drop.forward(&Tensor::from_vec([1, 4, 1, 1], vec![1.0; 4]), &mut stream_from_seed(0));
        for (v, m) in y.data.iter().zip(drop.last_mask()) {
            assert!(*v == 0.0 || *v == 2.0);
            assert_eq!(v, m);
        }
    }
}
