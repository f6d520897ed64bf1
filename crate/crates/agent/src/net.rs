//! Actor-critic network: token embedding, a stacked LSTM encoder, and two
//! tanh MLP heads (policy logits over the action vocabulary, scalar value).
//! Parameters live in one flat vector so the optimizer and the gradient
//! checks can treat them uniformly.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Number of actions; token ids `0..vocab_size` plus the begin id
    /// `vocab_size` are embedded.
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub head_hidden: usize,
    /// Dropout between recurrent layers, used only in training passes.
    pub dropout: f64,
}

impl NetConfig {
    pub fn standard(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            embed_dim: 32,
            hidden: 128,
            layers: 2,
            head_hidden: 64,
            dropout: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Dense {
    w: usize,
    b: usize,
    rows: usize,
    cols: usize,
}

impl Dense {
    fn size(&self) -> usize {
        self.rows * self.cols + self.rows
    }
}

#[derive(Debug, Clone)]
struct Layout {
    embed: usize,
    lstm: Vec<Dense>,
    policy: [Dense; 3],
    value: [Dense; 3],
    total: usize,
}

impl Layout {
    fn new(c: &NetConfig) -> Self {
        let embed = 0;
        let mut at = (c.vocab_size + 1) * c.embed_dim;
        let mut dense = |rows: usize, cols: usize| {
            let d = Dense {
                w: at,
                b: at + rows * cols,
                rows,
                cols,
            };
            at += d.size();
            d
        };
        let lstm = (0..c.layers)
            .map(|l| {
                let input = if l == 0 { c.embed_dim } else { c.hidden };
                dense(4 * c.hidden, input + c.hidden)
            })
            .collect();
        let policy = [
            dense(c.head_hidden, c.hidden),
            dense(c.head_hidden, c.head_hidden),
            dense(c.vocab_size, c.head_hidden),
        ];
        let value = [
            dense(c.head_hidden, c.hidden),
            dense(c.head_hidden, c.head_hidden),
            dense(1, c.head_hidden),
        ];
        Self {
            embed,
            lstm,
            policy,
            value,
            total: at,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PolicyNet {
    config: NetConfig,
    layout: Layout,
    pub params: Vec<f64>,
}

/// Recurrent state carried between single-token steps.
#[derive(Debug, Clone)]
pub struct Carry {
    h: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
}

/// Per-position outputs of a forward pass.
#[derive(Debug, Clone)]
pub struct HeadOut {
    pub logits: Vec<f64>,
    pub value: f64,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4 * 4;
    for (x, y) in a[..chunks].chunks_exact(4).zip(b[..chunks].chunks_exact(4)) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in a[chunks..].iter().zip(&b[chunks..]) {
        s += x * y;
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Dense {
    fn forward(&self, p: &[f64], x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate().take(self.rows) {
            *o = p[self.b + r] + dot(&p[self.w + r * self.cols..self.w + (r + 1) * self.cols], x);
        }
    }

    /// Accumulates parameter gradients and `dx += W^T dy`.
    fn backward(&self, p: &[f64], x: &[f64], dy: &[f64], grad: &mut [f64], dx: Option<&mut [f64]>) {
        for (r, &d) in dy.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            grad[self.b + r] += d;
            let row = self.w + r * self.cols;
            axpy(d, x, &mut grad[row..row + self.cols]);
        }
        if let Some(dx) = dx {
            for (r, &d) in dy.iter().enumerate() {
                if d != 0.0 {
                    axpy(d, &p[self.w + r * self.cols..self.w + (r + 1) * self.cols], dx);
                }
            }
        }
    }
}

/// Cached activations of one recurrent layer at one position.
#[derive(Debug, Clone)]
struct CellCache {
    xh: Vec<f64>,
    c_prev: Vec<f64>,
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

#[derive(Debug, Clone)]
struct HeadCache {
    z1: Vec<f64>,
    z2: Vec<f64>,
}

/// Everything a backward pass over one token sequence needs.
#[derive(Debug, Clone)]
pub struct SeqTrace {
    tokens: Vec<usize>,
    cells: Vec<Vec<CellCache>>,
    /// Dropout scale applied to layer `l` output before layer `l + 1`.
    drop: Vec<Vec<Vec<f64>>>,
    top: Vec<Vec<f64>>,
    policy: Vec<HeadCache>,
    value: Vec<HeadCache>,
    pub outputs: Vec<HeadOut>,
}

impl PolicyNet {
    pub fn new<R: Rng + ?Sized>(config: NetConfig, rng: &mut R) -> Self {
        assert!(config.layers >= 1 && config.hidden >= 1 && config.embed_dim >= 1);
        assert!((0.0..1.0).contains(&config.dropout));
        let layout = Layout::new(&config);
        let mut params = vec![0.0; layout.total];
        for v in &mut params[..(config.vocab_size + 1) * config.embed_dim] {
            *v = StandardNormal.sample(rng);
        }
        let bound = 1.0 / (config.hidden as f64).sqrt();
        for d in &layout.lstm {
            for v in &mut params[d.w..d.b + d.rows] {
                *v = rng.random_range(-bound..bound);
            }
        }
        for (i, d) in layout.policy.iter().chain(&layout.value).enumerate() {
            let bound = 1.0 / (d.cols as f64).sqrt();
            // near-uniform initial policy
            let scale = if i == 2 { 0.01 } else { 1.0 };
            for v in &mut params[d.w..d.b + d.rows] {
                *v = scale * rng.random_range(-bound..bound);
            }
        }
        Self { config, layout, params }
    }

    /// Rebuilds a network from stored parameters.
    pub fn from_params(config: NetConfig, params: Vec<f64>) -> Option<Self> {
        let layout = Layout::new(&config);
        (params.len() == layout.total).then_some(Self { config, layout, params })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn num_params(&self) -> usize {
        self.layout.total
    }

    pub fn begin_id(&self) -> usize {
        self.config.vocab_size
    }

    pub fn initial_carry(&self) -> Carry {
        let h = self.config.hidden;
        Carry {
            h: vec![vec![0.0; h]; self.config.layers],
            c: vec![vec![0.0; h]; self.config.layers],
        }
    }

    fn embedding(&self, token: usize) -> &[f64] {
        let e = self.config.embed_dim;
        &self.params[self.layout.embed + token * e..self.layout.embed + (token + 1) * e]
    }

    /// One LSTM cell update; returns the cache when `keep` is set.
    fn cell(&self, layer: usize, x: &[f64], h: &mut [f64], c: &mut [f64], keep: bool) -> Option<CellCache> {
        let d = &self.layout.lstm[layer];
        let hid = self.config.hidden;
        let mut xh = Vec::with_capacity(x.len() + hid);
        xh.extend_from_slice(x);
        xh.extend_from_slice(h);
        let mut gates = vec![0.0; 4 * hid];
        d.forward(&self.params, &xh, &mut gates);
        let c_prev = c.to_vec();
        let mut tanh_c = vec![0.0; hid];
        for k in 0..hid {
            let i = sigmoid(gates[k]);
            let f = sigmoid(gates[hid + k]);
            let g = gates[2 * hid + k].tanh();
            let o = sigmoid(gates[3 * hid + k]);
            gates[k] = i;
            gates[hid + k] = f;
            gates[2 * hid + k] = g;
            gates[3 * hid + k] = o;
            c[k] = f * c_prev[k] + i * g;
            tanh_c[k] = c[k].tanh();
            h[k] = o * tanh_c[k];
        }
        keep.then_some(CellCache {
            xh,
            c_prev,
            gates,
            tanh_c,
        })
    }

    fn head(&self, dense: &[Dense; 3], h: &[f64]) -> (Vec<f64>, HeadCache) {
        let hh = self.config.head_hidden;
        let mut z1 = vec![0.0; hh];
        dense[0].forward(&self.params, h, &mut z1);
        z1.iter_mut().for_each(|v| *v = v.tanh());
        let mut z2 = vec![0.0; hh];
        dense[1].forward(&self.params, &z1, &mut z2);
        z2.iter_mut().for_each(|v| *v = v.tanh());
        let mut out = vec![0.0; dense[2].rows];
        dense[2].forward(&self.params, &z2, &mut out);
        (out, HeadCache { z1, z2 })
    }

    /// Feeds one token and returns the heads' output for the new prefix.
    /// No dropout: used for acting.
    pub fn step(&self, carry: &mut Carry, token: usize) -> HeadOut {
        let mut x = self.embedding(token).to_vec();
        for l in 0..self.config.layers {
            let (h, c) = (&mut carry.h[l], &mut carry.c[l]);
            self.cell(l, &x, h, c, false);
            x = h.clone();
        }
        let (logits, _) = self.head(&self.layout.policy, &x);
        let (v, _) = self.head(&self.layout.value, &x);
        HeadOut { logits, value: v[0] }
    }

    /// Runs a whole sequence, keeping activations for [`Self::backward`].
    /// `dropout_rng` enables inter-layer dropout.
    pub fn forward_trace<R: Rng + ?Sized>(&self, tokens: &[usize], mut dropout_rng: Option<&mut R>) -> SeqTrace {
        let (layers, hid) = (self.config.layers, self.config.hidden);
        let p = self.config.dropout;
        let mut carry = self.initial_carry();
        let mut cells = vec![Vec::with_capacity(tokens.len()); layers];
        let mut drop = vec![Vec::with_capacity(tokens.len()); layers.saturating_sub(1)];
        let mut top = Vec::with_capacity(tokens.len());
        let (mut policy, mut value, mut outputs) = (Vec::new(), Vec::new(), Vec::new());
        for &tok in tokens {
            let mut x = self.embedding(tok).to_vec();
            for l in 0..layers {
                let (h, c) = (&mut carry.h[l], &mut carry.c[l]);
                cells[l].push(self.cell(l, &x, h, c, true).expect("kept"));
                x = h.clone();
                if l + 1 < layers {
                    let scale: Vec<f64> = match dropout_rng.as_deref_mut() {
                        Some(rng) if p > 0.0 => (0..hid)
                            .map(|_| if rng.random::<f64>() < p { 0.0 } else { 1.0 / (1.0 - p) })
                            .collect(),
                        _ => vec![1.0; hid],
                    };
                    x.iter_mut().zip(&scale).for_each(|(v, s)| *v *= s);
                    drop[l].push(scale);
                }
            }
            let (logits, pc) = self.head(&self.layout.policy, &x);
            let (v, vc) = self.head(&self.layout.value, &x);
            top.push(x);
            policy.push(pc);
            value.push(vc);
            outputs.push(HeadOut { logits, value: v[0] });
        }
        SeqTrace {
            tokens: tokens.to_vec(),
            cells,
            drop,
            top,
            policy,
            value,
            outputs,
        }
    }

    fn head_backward(
        &self,
        dense: &[Dense; 3],
        h: &[f64],
        cache: &HeadCache,
        dout: &[f64],
        grad: &mut [f64],
        dh: &mut [f64],
    ) {
        let hh = self.config.head_hidden;
        let mut dz2 = vec![0.0; hh];
        dense[2].backward(&self.params, &cache.z2, dout, grad, Some(&mut dz2));
        dz2.iter_mut().zip(&cache.z2).for_each(|(d, z)| *d *= 1.0 - z * z);
        let mut dz1 = vec![0.0; hh];
        dense[1].backward(&self.params, &cache.z1, &dz2, grad, Some(&mut dz1));
        dz1.iter_mut().zip(&cache.z1).for_each(|(d, z)| *d *= 1.0 - z * z);
        dense[0].backward(&self.params, h, &dz1, grad, Some(dh));
    }

    /// Accumulates into `grad` the gradient of a loss whose derivatives with
    /// respect to each position's logits and value are given.
    pub fn backward(&self, trace: &SeqTrace, dlogits: &[Vec<f64>], dvalue: &[f64], grad: &mut [f64]) {
        assert_eq!(grad.len(), self.layout.total);
        let (layers, hid, emb) = (self.config.layers, self.config.hidden, self.config.embed_dim);
        let len = trace.tokens.len();

        // gradient flowing into the top layer's output at each position
        let mut dtop = vec![vec![0.0; hid]; len];
        for t in 0..len {
            let h = &trace.top[t];
            if dlogits[t].iter().any(|&d| d != 0.0) {
                self.head_backward(
                    &self.layout.policy,
                    h,
                    &trace.policy[t],
                    &dlogits[t],
                    grad,
                    &mut dtop[t],
                );
            }
            if dvalue[t] != 0.0 {
                self.head_backward(&self.layout.value, h, &trace.value[t], &[dvalue[t]], grad, &mut dtop[t]);
            }
        }

        let mut dout = dtop;
        for l in (0..layers).rev() {
            let d = &self.layout.lstm[l];
            let input = if l == 0 { emb } else { hid };
            let mut dinput = vec![vec![0.0; input]; len];
            let mut dh_next = vec![0.0; hid];
            let mut dc_next = vec![0.0; hid];
            let mut da = vec![0.0; 4 * hid];
            for t in (0..len).rev() {
                let cc = &trace.cells[l][t];
                for k in 0..hid {
                    let (i, f, g, o) = (
                        cc.gates[k],
                        cc.gates[hid + k],
                        cc.gates[2 * hid + k],
                        cc.gates[3 * hid + k],
                    );
                    let dh = dout[t][k] + dh_next[k];
                    let tc = cc.tanh_c[k];
                    let dc = dc_next[k] + dh * o * (1.0 - tc * tc);
                    da[k] = dc * g * i * (1.0 - i);
                    da[hid + k] = dc * cc.c_prev[k] * f * (1.0 - f);
                    da[2 * hid + k] = dc * i * (1.0 - g * g);
                    da[3 * hid + k] = dh * tc * o * (1.0 - o);
                    dc_next[k] = dc * f;
                }
                let mut dxh = vec![0.0; input + hid];
                d.backward(&self.params, &cc.xh, &da, grad, Some(&mut dxh));
                dinput[t].copy_from_slice(&dxh[..input]);
                dh_next.copy_from_slice(&dxh[input..]);
            }
            if l > 0 {
                for (t, di) in dinput.iter_mut().enumerate() {
                    di.iter_mut().zip(&trace.drop[l - 1][t]).for_each(|(v, s)| *v *= s);
                }
                dout = dinput;
            } else {
                for (t, di) in dinput.iter().enumerate() {
                    let row = self.layout.embed + trace.tokens[t] * emb;
                    axpy(1.0, di, &mut grad[row..row + emb]);
                }
            }
        }
    }
}
