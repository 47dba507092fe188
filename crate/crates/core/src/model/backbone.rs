use rand::Rng;

use crate::nn::{AvgPool, BatchNorm2d, Conv2d, GlobalAvgPool, MaxPool, Param, Parameterized, Relu, Tensor};

/// conv -> batch norm, the unit every residual block is built from.
#[derive(Debug, Clone)]
struct ConvBn {
    conv: Conv2d,
    bn: BatchNorm2d,
}

impl ConvBn {
    #[allow(clippy::too_many_arguments)]
    fn new<R: Rng + ?Sized>(
        conv_name: &str,
        bn_name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        ConvBn {
            conv: Conv2d::new(conv_name, cin, cout, k, stride, pad, rng),
            bn: BatchNorm2d::new(bn_name, cout),
        }
    }

    fn forward(&mut self, x: &Tensor) -> Tensor {
        self.bn.forward(&self.conv.forward(x))
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        self.conv.backward(&self.bn.backward(dy))
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        self.bn.infer(&self.conv.infer(x))
    }

    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.conv.visit(f);
        self.bn.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.conv.visit_mut(f);
        self.bn.visit_mut(f);
    }
}

fn relu_inplace(t: &mut Tensor) {
    t.data.iter_mut().for_each(|v| *v = v.max(0.0));
}

fn relu_grad(dy: &Tensor, out: &Tensor) -> Tensor {
    let mut d = dy.clone();
    for (g, &y) in d.data.iter_mut().zip(&out.data) {
        if y <= 0.0 {
            *g = 0.0;
        }
    }
    d
}

/// A residual block: 2 (basic) or 3 (bottleneck) conv-bn units on the main
/// path and an optional projection shortcut.
#[derive(Debug, Clone)]
struct Block {
    units: Vec<ConvBn>,
    shortcut: Option<ConvBn>,
    // post-activation outputs of each unit but the last, then the block output
    acts: Vec<Tensor>,
}

impl Block {
    fn basic<R: Rng + ?Sized>(prefix: &str, cin: usize, cout: usize, stride: usize, rng: &mut R) -> Self {
        let units = vec![
            ConvBn::new(
                &format!("{prefix}.conv1"),
                &format!("{prefix}.bn1"),
                cin,
                cout,
                3,
                stride,
                1,
                rng,
            ),
            ConvBn::new(
                &format!("{prefix}.conv2"),
                &format!("{prefix}.bn2"),
                cout,
                cout,
                3,
                1,
                1,
                rng,
            ),
        ];
        let shortcut = (stride != 1 || cin != cout).then(|| {
            ConvBn::new(
                &format!("{prefix}.downsample.0"),
                &format!("{prefix}.downsample.1"),
                cin,
                cout,
                1,
                stride,
                0,
                rng,
            )
        });
        Block {
            units,
            shortcut,
            acts: Vec::new(),
        }
    }

    fn bottleneck<R: Rng + ?Sized>(prefix: &str, cin: usize, width: usize, stride: usize, rng: &mut R) -> Self {
        let cout = width * 4;
        let units = vec![
            ConvBn::new(
                &format!("{prefix}.conv1"),
                &format!("{prefix}.bn1"),
                cin,
                width,
                1,
                1,
                0,
                rng,
            ),
            ConvBn::new(
                &format!("{prefix}.conv2"),
                &format!("{prefix}.bn2"),
                width,
                width,
                3,
                stride,
                1,
                rng,
            ),
            ConvBn::new(
                &format!("{prefix}.conv3"),
                &format!("{prefix}.bn3"),
                width,
                cout,
                1,
                1,
                0,
                rng,
            ),
        ];
        let shortcut = (stride != 1 || cin != cout).then(|| {
            ConvBn::new(
                &format!("{prefix}.downsample.0"),
                &format!("{prefix}.downsample.1"),
                cin,
                cout,
                1,
                stride,
                0,
                rng,
            )
        });
        Block {
            units,
            shortcut,
            acts: Vec::new(),
        }
    }

    fn forward(&mut self, x: &Tensor) -> Tensor {
        self.acts.clear();
        let last = self.units.len() - 1;
        let mut h = x.clone();
        for (i, unit) in self.units.iter_mut().enumerate() {
            h = unit.forward(&h);
            if i < last {
                relu_inplace(&mut h);
                self.acts.push(h.clone());
            }
        }
        match &mut self.shortcut {
            Some(s) => h.add_assign(&s.forward(x)),
            None => h.add_assign(x),
        }
        relu_inplace(&mut h);
        self.acts.push(h.clone());
        h
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let out = self.acts.pop().expect("Block::backward without forward");
        let d = relu_grad(dy, &out);
        let mut dx = match &mut self.shortcut {
            Some(s) => s.backward(&d),
            None => d.clone(),
        };
        let mut g = d;
        for i in (0..self.units.len()).rev() {
            g = self.units[i].backward(&g);
            if i > 0 {
                let act = self.acts.pop().expect("cached activation");
                g = relu_grad(&g, &act);
            }
        }
        dx.add_assign(&g);
        dx
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        let last = self.units.len() - 1;
        let mut h = x.clone();
        for (i, unit) in self.units.iter().enumerate() {
            h = unit.infer(&h);
            if i < last {
                relu_inplace(&mut h);
            }
        }
        match &self.shortcut {
            Some(s) => h.add_assign(&s.infer(x)),
            None => h.add_assign(x),
        }
        relu_inplace(&mut h);
        h
    }

    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        for u in &self.units {
            u.visit(f);
        }
        if let Some(s) = &self.shortcut {
            s.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for u in &mut self.units {
            u.visit_mut(f);
        }
        if let Some(s) = &mut self.shortcut {
            s.visit_mut(f);
        }
    }
}

/// Stem pooling choices for a residual network.
#[derive(Debug, Clone)]
enum StemPool {
    /// Fixed `k x k` average pooling before the first conv (desk-scale network).
    Avg(AvgPool),
    /// `3 x 3` stride-2 max pooling after the first conv (reference network).
    Max(MaxPool),
}

/// A residual convolutional network ending in global average pooling.
#[derive(Debug, Clone)]
pub struct ResidualNet {
    stem: ConvBn,
    stem_pool: StemPool,
    blocks: Vec<Block>,
    gap: GlobalAvgPool,
    relu: Relu,
    pub feature_dim: usize,
}

impl ResidualNet {
    /// Input avg-pool by `stem_pool`, a 3x3 stem and four stride-2 basic blocks.
    pub fn small<R: Rng + ?Sized>(feature_dim: usize, stem_pool: usize, rng: &mut R) -> Self {
        let stem = ConvBn::new("backbone.conv1", "backbone.bn1", 3, 16, 3, 1, 1, rng);
        let widths = [16, 32, 64, feature_dim];
        let mut blocks = Vec::new();
        let mut cin = 16;
        for (i, &w) in widths.iter().enumerate() {
            blocks.push(Block::basic(&format!("backbone.layer{}.0", i + 1), cin, w, 2, rng));
            cin = w;
        }
        ResidualNet {
            stem,
            stem_pool: StemPool::Avg(AvgPool::new(stem_pool.max(1))),
            blocks,
            gap: GlobalAvgPool::default(),
            relu: Relu::default(),
            feature_dim,
        }
    }

    /// The standard 50-layer bottleneck network (2048 features).
    pub fn reference50<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let stem = ConvBn::new("backbone.conv1", "backbone.bn1", 3, 64, 7, 2, 3, rng);
        let mut blocks = Vec::new();
        let mut cin = 64;
        for (layer, (&n, &width)) in [3usize, 4, 6, 3].iter().zip(&[64usize, 128, 256, 512]).enumerate() {
            for b in 0..n {
                let stride = if b == 0 && layer > 0 { 2 } else { 1 };
                blocks.push(Block::bottleneck(
                    &format!("backbone.layer{}.{b}", layer + 1),
                    cin,
                    width,
                    stride,
                    rng,
                ));
                cin = width * 4;
            }
        }
        ResidualNet {
            stem,
            stem_pool: StemPool::Max(MaxPool::default()),
            blocks,
            gap: GlobalAvgPool::default(),
            relu: Relu::default(),
            feature_dim: cin,
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let mut h = match &mut self.stem_pool {
            StemPool::Avg(p) => {
                let pooled = p.forward(x);
                let h = self.stem.forward(&pooled);
                self.relu.forward(&h)
            }
            StemPool::Max(p) => {
                let h = self.stem.forward(x);
                let h = self.relu.forward(&h);
                p.forward(&h)
            }
        };
        for b in &mut self.blocks {
            h = b.forward(&h);
        }
        self.gap.forward(&h).flatten()
    }

    /// Backpropagates feature gradients; the input gradient is not needed.
    pub fn backward(&mut self, dfeat: &Tensor) {
        let mut g = self.gap.backward(dfeat);
        for b in self.blocks.iter_mut().rev() {
            g = b.backward(&g);
        }
        match &mut self.stem_pool {
            StemPool::Avg(_) => {
                let g = self.relu.backward(&g);
                self.stem.backward(&g);
            }
            StemPool::Max(p) => {
                let g = p.backward(&g);
                let g = self.relu.backward(&g);
                self.stem.backward(&g);
            }
        }
    }

    pub fn infer(&self, x: &Tensor) -> Tensor {
        let mut h = match &self.stem_pool {
            StemPool::Avg(p) => Relu::infer(&self.stem.infer(&p.infer(x))),
            StemPool::Max(_) => MaxPool::infer(&Relu::infer(&self.stem.infer(x))),
        };
        for b in &self.blocks {
            h = b.infer(&h);
        }
        GlobalAvgPool::infer(&h).flatten()
    }
}

impl Parameterized for ResidualNet {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.stem.visit(f);
        for b in &self.blocks {
            b.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.stem.visit_mut(f);
        for b in &mut self.blocks {
            b.visit_mut(f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_from_seed;

    #[test]
    fn block_gradient_matches_finite_difference() {
        let mut rng = stream_from_seed(3);
        let mut block = Block::basic("b", 2, 3, 2, &mut rng);
        let x_data: Vec<f32> = (0..2 * 2 * 6 * 6).map(|_| rng.random::<f32>() - 0.5).collect();
        let x = Tensor::from_vec([2, 2, 6, 6], x_data);
        let r: Vec<f32> = (0..2 * 3 * 3 * 3).map(|_| rng.random::<f32>() - 0.5).collect();
        let loss = |b: &mut Block| -> f64 {
            let y = b.forward(&x);
            y.data.iter().zip(&r).map(|(a, b)| (*a as f64) * (*b as f64)).sum()
        };
        let mut work = block.clone();
        work.forward(&x);
        work.backward(&Tensor::from_vec([2, 3, 3, 3], r.clone()));
        let mut grads = Vec::new();
        work.visit(&mut |p| grads.push(p.grad.clone()));

        let eps = 1e-2f32;
        let n_params = grads.len();
        for pi in 0..n_params {
            for idx in [0usize, 1] {
                let mut plus = block.clone();
                let mut k = 0;
                plus.visit_mut(&mut |p| {
                    if k == pi && p.trainable {
                        p.value[idx] += eps;
                    }
                    k += 1;
                });
                let mut minus = block.clone();
                let mut k = 0;
                minus.visit_mut(&mut |p| {
                    if k == pi && p.trainable {
                        p.value[idx] -= eps;
                    }
                    k += 1;
                });
                let mut trainable = false;
                let mut k = 0;
                block.visit(&mut |p| {
                    if k == pi {
                        trainable = p.trainable;
                    }
                    k += 1;
                });
                if !trainable {
                    continue;
                }
                let num = (loss(&mut plus) - loss(&mut minus)) / (2.0 * eps as f64);
                let ana = grads[pi][idx] as f64;
                let scale = num.abs().max(ana.abs()).max(1e-2);
                assert!((num - ana).abs() / scale < 5e-2, "param {pi}[{idx}]: {ana} vs {num}");
            }
        }
        let _ = &mut block;
    }

    #[test]
    fn small_net_feature_shape() {
        let net = ResidualNet::small(24, 8, &mut stream_from_seed(0));
        let x = Tensor::zeros([2, 3, 64, 64]);
        assert_eq!(net.infer(&x).shape, [2, 24, 1, 1]);
    }
}
