//! Causal self-attention block with rotary position mixing, plus its
//! hand-written backward pass.

use rand::Rng;

use super::tensor::{axpy, dot, gelu, gelu_grad, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl Block {
    pub fn init<R: Rng + ?Sized>(d: usize, ffn: usize, rng: &mut R) -> Self {
        Self {
            wq: Tensor::fan_in_uniform(&[d, d], rng),
            wk: Tensor::fan_in_uniform(&[d, d], rng),
            wv: Tensor::fan_in_uniform(&[d, d], rng),
            wo: Tensor::fan_in_uniform(&[d, d], rng),
            w1: Tensor::fan_in_uniform(&[ffn, d], rng),
            b1: Tensor::zeros(&[ffn]),
            w2: Tensor::fan_in_uniform(&[d, ffn], rng),
            b2: Tensor::zeros(&[d]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let z = |t: &Tensor| Tensor::zeros(&t.shape);
        Self {
            wq: z(&self.wq),
            wk: z(&self.wk),
            wv: z(&self.wv),
            wo: z(&self.wo),
            w1: z(&self.w1),
            b1: z(&self.b1),
            w2: z(&self.w2),
            b2: z(&self.b2),
        }
    }

    pub fn tensors(&self) -> [(&'static str, &Tensor); 8] {
        [
            ("wq", &self.wq),
            ("wk", &self.wk),
            ("wv", &self.wv),
            ("wo", &self.wo),
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Tensor); 8] {
        [
            ("wq", &mut self.wq),
            ("wk", &mut self.wk),
            ("wv", &mut self.wv),
            ("wo", &mut self.wo),
            ("w1", &mut self.w1),
            ("b1", &mut self.b1),
            ("w2", &mut self.w2),
            ("b2", &mut self.b2),
        ]
    }
}

/// Rotary tables: position `i` rotates pair `(2m, 2m+1)` by `i · 10000^{−2m/d}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rope {
    cos: Vec<Vec<f64>>,
    sin: Vec<Vec<f64>>,
}

impl Rope {
    pub fn new(max_len: usize, d: usize) -> Self {
        let pairs = d / 2;
        let mut cos = Vec::with_capacity(max_len);
        let mut sin = Vec::with_capacity(max_len);
        for pos in 0..max_len {
            let (c, s): (Vec<f64>, Vec<f64>) = (0..pairs)
                .map(|m| {
                    let freq = 10000f64.powf(-2.0 * m as f64 / d as f64);
                    let a = pos as f64 * freq;
                    (a.cos(), a.sin())
                })
                .unzip();
            cos.push(c);
            sin.push(s);
        }
        Self { cos, sin }
    }

    fn rotate(&self, pos: usize, x: &mut [f64], transpose: bool) {
        let (c, s) = (&self.cos[pos], &self.sin[pos]);
        for m in 0..c.len() {
            let (a, b) = (x[2 * m], x[2 * m + 1]);
            let sn = if transpose { -s[m] } else { s[m] };
            x[2 * m] = a * c[m] - b * sn;
            x[2 * m + 1] = a * sn + b * c[m];
        }
    }
}

/// Activations kept for the backward pass. Query rows are `start..n`.
#[derive(Debug, Clone)]
pub struct BlockCache {
    start: usize,
    x: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    p: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
    f: Vec<Vec<f64>>,
    g: Vec<Vec<f64>>,
}

/// Runs one block over `x` (`n` rows) and returns output rows `start..n`.
pub fn block_forward(
    block: &Block,
    rope: &Rope,
    x: &[Vec<f64>],
    start: usize,
) -> (Vec<Vec<f64>>, BlockCache) {
    let n = x.len();
    let d = block.wq.cols();
    let scale = 1.0 / (d as f64).sqrt();
    let k: Vec<Vec<f64>> = x
        .iter()
        .enumerate()
        .map(|(j, xj)| {
            let mut kj = block.wk.matvec(xj);
            rope.rotate(j, &mut kj, false);
            kj
        })
        .collect();
    let v: Vec<Vec<f64>> = x.iter().map(|xj| block.wv.matvec(xj)).collect();
    let rows = n - start;
    let mut cache = BlockCache {
        start,
        x: x.to_vec(),
        q: Vec::with_capacity(rows),
        k,
        v,
        p: Vec::with_capacity(rows),
        c: Vec::with_capacity(rows),
        y: Vec::with_capacity(rows),
        f: Vec::with_capacity(rows),
        g: Vec::with_capacity(rows),
    };
    let mut out = Vec::with_capacity(rows);
    for i in start..n {
        let mut qi = block.wq.matvec(&x[i]);
        rope.rotate(i, &mut qi, false);
        let logits: Vec<f64> = (0..=i).map(|j| dot(&qi, &cache.k[j]) * scale).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut p: Vec<f64> = logits.iter().map(|a| (a - max).exp()).collect();
        let z: f64 = p.iter().sum();
        p.iter_mut().for_each(|w| *w /= z);
        let mut ci = vec![0.0; d];
        for (j, &w) in p.iter().enumerate() {
            axpy(w, &cache.v[j], &mut ci);
        }
        let oi = block.wo.matvec(&ci);
        let yi: Vec<f64> = x[i].iter().zip(&oi).map(|(a, b)| a + b).collect();
        let fi: Vec<f64> = block
            .w1
            .matvec(&yi)
            .iter()
            .zip(&block.b1.data)
            .map(|(a, b)| a + b)
            .collect();
        let gi: Vec<f64> = fi.iter().map(|v| gelu(*v)).collect();
        let zi: Vec<f64> = block
            .w2
            .matvec(&gi)
            .iter()
            .zip(&block.b2.data)
            .zip(&yi)
            .map(|((a, b), r)| a + b + r)
            .collect();
        out.push(zi);
        cache.q.push(qi);
        cache.p.push(p);
        cache.c.push(ci);
        cache.y.push(yi);
        cache.f.push(fi);
        cache.g.push(gi);
    }
    (out, cache)
}

/// Accumulates parameter gradients into `grads` and returns `∂/∂x` for all
/// `n` input rows. `d_out` holds gradients for output rows `start..n`.
pub fn block_backward(
    block: &Block,
    rope: &Rope,
    cache: &BlockCache,
    d_out: &[Vec<f64>],
    grads: &mut Block,
) -> Vec<Vec<f64>> {
    let n = cache.x.len();
    let d = block.wq.cols();
    let ffn = block.b1.data.len();
    let scale = 1.0 / (d as f64).sqrt();
    let mut dx = vec![vec![0.0; d]; n];
    let mut dk = vec![vec![0.0; d]; n];
    let mut dv = vec![vec![0.0; d]; n];
    for (r, dz) in d_out.iter().enumerate() {
        if dz.iter().all(|v| *v == 0.0) {
            continue;
        }
        let i = cache.start + r;
        // feed-forward with residual
        let mut dy = dz.clone();
        axpy(1.0, dz, &mut grads.b2.data);
        grads.w2.outer_acc(dz, &cache.g[r]);
        let mut dg = vec![0.0; ffn];
        block.w2.matvec_t_acc(dz, &mut dg);
        let df: Vec<f64> = dg
            .iter()
            .zip(&cache.f[r])
            .map(|(g, f)| g * gelu_grad(*f))
            .collect();
        axpy(1.0, &df, &mut grads.b1.data);
        grads.w1.outer_acc(&df, &cache.y[r]);
        block.w1.matvec_t_acc(&df, &mut dy);
        // attention with residual
        axpy(1.0, &dy, &mut dx[i]);
        grads.wo.outer_acc(&dy, &cache.c[r]);
        let mut dc = vec![0.0; d];
        block.wo.matvec_t_acc(&dy, &mut dc);
        let p = &cache.p[r];
        let dp: Vec<f64> = (0..=i).map(|j| dot(&dc, &cache.v[j])).collect();
        let mean: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
        let mut dq = vec![0.0; d];
        for j in 0..=i {
            axpy(p[j], &dc, &mut dv[j]);
            let da = p[j] * (dp[j] - mean) * scale;
            axpy(da, &cache.k[j], &mut dq);
            axpy(da, &cache.q[r], &mut dk[j]);
        }
        rope.rotate(i, &mut dq, true);
        grads.wq.outer_acc(&dq, &cache.x[i]);
        block.wq.matvec_t_acc(&dq, &mut dx[i]);
    }
    for j in 0..n {
        let mut dkj = std::mem::take(&mut dk[j]);
        if dkj.iter().any(|v| *v != 0.0) {
            rope.rotate(j, &mut dkj, true);
            grads.wk.outer_acc(&dkj, &cache.x[j]);
            block.wk.matvec_t_acc(&dkj, &mut dx[j]);
        }
        if dv[j].iter().any(|v| *v != 0.0) {
            grads.wv.outer_acc(&dv[j], &cache.x[j]);
            block.wv.matvec_t_acc(&dv[j], &mut dx[j]);
        }
    }
    dx
}
