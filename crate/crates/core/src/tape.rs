//! Reverse-mode autodiff over f64 vector nodes.
//!
//! Forward evaluation is eager; `backward` walks the tape in reverse. Every
//! node is a retained activation, so `Tape::len()` doubles as the
//! computation-graph size used by the memory probes. Softmax outputs,
//! attention weights and normalization statistics are recomputed in the
//! backward pass instead of being stored.

pub type NodeId = usize;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// wte[row] + wpe[pos]
    Embed {
        table: NodeId,
        row: usize,
        pos_table: NodeId,
        pos: usize,
    },
    /// y = sum_v weights[v] * table[v, :]
    MixRows {
        table: NodeId,
        weights: NodeId,
        cols: usize,
    },
    LookupRow {
        table: NodeId,
        row: usize,
        cols: usize,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    /// y = W x + b with W row-major [out x inp]
    Affine {
        w: NodeId,
        b: NodeId,
        x: NodeId,
        out: usize,
        inp: usize,
    },
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
    },
    Gelu {
        x: NodeId,
    },
    /// Multi-head scaled dot-product attention of one query over a causal
    /// prefix of per-position key/value nodes.
    AttendCausal {
        q: NodeId,
        keys: Vec<NodeId>,
        vals: Vec<NodeId>,
        heads: usize,
    },
    Softmax {
        x: NodeId,
    },
    LogSoftmax {
        x: NodeId,
    },
    /// scalar = x[idx]
    Pick {
        x: NodeId,
        idx: usize,
    },
    /// scalar = sum_v softmax(q_logits)[v] * (log_softmax(p_logits)[v] - log_softmax(q_logits)[v])
    KlTerm {
        q_logits: NodeId,
        p_logits: NodeId,
    },
    /// Straight-through row: the value is onehot(token), gradients pass to
    /// the probability node unchanged.
    StraightThrough {
        probs: NodeId,
    },
    SumScalars {
        xs: Vec<NodeId>,
    },
    Scale {
        x: NodeId,
        c: f64,
    },
    Exp {
        x: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
}

struct Node {
    value: Vec<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&l| l - lse).collect()
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let inner = C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let dinner = C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[id].value.len(), 1);
        self.nodes[id].value[0]
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn leaf(&mut self, value: Vec<f64>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Token embedding plus positional embedding in one node.
    pub fn embed(
        &mut self,
        table: NodeId,
        row: usize,
        pos_table: NodeId,
        pos: usize,
        cols: usize,
    ) -> NodeId {
        let tok = &self.nodes[table].value[row * cols..(row + 1) * cols];
        let posr = &self.nodes[pos_table].value[pos * cols..(pos + 1) * cols];
        let value = tok.iter().zip(posr).map(|(a, b)| a + b).collect();
        self.push(
            value,
            Op::Embed {
                table,
                row,
                pos_table,
                pos,
            },
        )
    }

    pub fn mix_rows(&mut self, table: NodeId, weights: NodeId, cols: usize) -> NodeId {
        let w = &self.nodes[weights].value;
        let t = &self.nodes[table].value;
        let mut value = vec![0.0; cols];
        for (v, &wv) in w.iter().enumerate() {
            if wv != 0.0 {
                let row = &t[v * cols..(v + 1) * cols];
                for (o, r) in value.iter_mut().zip(row) {
                    *o += wv * r;
                }
            }
        }
        self.push(
            value,
            Op::MixRows {
                table,
                weights,
                cols,
            },
        )
    }

    pub fn lookup_row(&mut self, table: NodeId, row: usize, cols: usize) -> NodeId {
        let value = self.nodes[table].value[row * cols..(row + 1) * cols].to_vec();
        self.push(value, Op::LookupRow { table, row, cols })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.nodes[a]
            .value
            .iter()
            .zip(&self.nodes[b].value)
            .map(|(x, y)| x + y)
            .collect();
        self.push(value, Op::Add { a, b })
    }

    pub fn affine(&mut self, w: NodeId, b: NodeId, x: NodeId, out: usize, inp: usize) -> NodeId {
        let wv = &self.nodes[w].value;
        let xv = &self.nodes[x].value;
        let bv = &self.nodes[b].value;
        debug_assert_eq!(xv.len(), inp);
        debug_assert_eq!(bv.len(), out);
        let mut value = Vec::with_capacity(out);
        for o in 0..out {
            let row = &wv[o * inp..(o + 1) * inp];
            let dot: f64 = row.iter().zip(xv).map(|(a, b)| a * b).sum();
            value.push(dot + bv[o]);
        }
        self.push(value, Op::Affine { w, b, x, out, inp })
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> NodeId {
        let xv = &self.nodes[x].value;
        let n = xv.len() as f64;
        let mean = xv.iter().sum::<f64>() / n;
        let var = xv.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        let g = &self.nodes[gain].value;
        let b = &self.nodes[bias].value;
        let value = xv
            .iter()
            .enumerate()
            .map(|(i, v)| (v - mean) * inv * g[i] + b[i])
            .collect();
        self.push(value, Op::LayerNorm { x, gain, bias })
    }

    pub fn gelu_node(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x].value.iter().map(|&v| gelu(v)).collect();
        self.push(value, Op::Gelu { x })
    }

    pub fn attend_causal(
        &mut self,
        q: NodeId,
        keys: Vec<NodeId>,
        vals: Vec<NodeId>,
        heads: usize,
    ) -> NodeId {
        debug_assert_eq!(keys.len(), vals.len());
        let dim = self.nodes[q].value.len();
        let dh = dim / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut value = vec![0.0; dim];
        for h in 0..heads {
            let span = h * dh..(h + 1) * dh;
            let qv = &self.nodes[q].value[span.clone()];
            let scores: Vec<f64> = keys
                .iter()
                .map(|&k| {
                    let kv = &self.nodes[k].value[span.clone()];
                    qv.iter().zip(kv).map(|(a, b)| a * b).sum::<f64>() * scale
                })
                .collect();
            let weights = softmax(&scores);
            for (j, &v) in vals.iter().enumerate() {
                let vv = &self.nodes[v].value[span.clone()];
                for (d, val) in vv.iter().enumerate() {
                    value[h * dh + d] += weights[j] * val;
                }
            }
        }
        self.push(
            value,
            Op::AttendCausal {
                q,
                keys,
                vals,
                heads,
            },
        )
    }

    pub fn softmax_node(&mut self, x: NodeId) -> NodeId {
        let value = softmax(&self.nodes[x].value);
        self.push(value, Op::Softmax { x })
    }

    pub fn log_softmax_node(&mut self, x: NodeId) -> NodeId {
        let value = log_softmax(&self.nodes[x].value);
        self.push(value, Op::LogSoftmax { x })
    }

    pub fn pick(&mut self, x: NodeId, idx: usize) -> NodeId {
        let value = vec![self.nodes[x].value[idx]];
        self.push(value, Op::Pick { x, idx })
    }

    /// The analytic per-position term sum_v q(v) log(p(v)/q(v)) over the full
    /// vocabulary; equals -KL(q || p), hence always <= 0.
    pub fn kl_term(&mut self, q_logits: NodeId, p_logits: NodeId) -> NodeId {
        let lq = log_softmax(&self.nodes[q_logits].value);
        let lp = log_softmax(&self.nodes[p_logits].value);
        let s: f64 = lq
            .iter()
            .zip(&lp)
            .map(|(&lqv, &lpv)| lqv.exp() * (lpv - lqv))
            .sum();
        self.push(vec![s], Op::KlTerm { q_logits, p_logits })
    }

    /// Straight-through wrap of a sampled token: forward value is the exact
    /// one-hot row, the backward pass routes gradients into `probs`.
    pub fn straight_through(&mut self, probs: NodeId, token: usize) -> NodeId {
        let k = self.nodes[probs].value.len();
        let mut value = vec![0.0; k];
        value[token] = 1.0;
        self.push(value, Op::StraightThrough { probs })
    }

    pub fn sum_scalars(&mut self, xs: Vec<NodeId>) -> NodeId {
        let value = vec![xs.iter().map(|&x| self.nodes[x].value[0]).sum()];
        self.push(value, Op::SumScalars { xs })
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let value = self.nodes[x].value.iter().map(|v| c * v).collect();
        self.push(value, Op::Scale { x, c })
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x].value.iter().map(|v| v.exp()).collect();
        self.push(value, Op::Exp { x })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.nodes[a]
            .value
            .iter()
            .zip(&self.nodes[b].value)
            .map(|(x, y)| x * y)
            .collect();
        self.push(value, Op::Mul { a, b })
    }

    /// Reverse pass from a scalar root; returns one gradient buffer per node
    /// (empty for untouched nodes).
    pub fn backward(&self, root: NodeId) -> Vec<Vec<f64>> {
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); self.nodes.len()];
        grads[root] = vec![1.0; self.nodes[root].value.len()];
        for id in (0..=root).rev() {
            if grads[id].is_empty() {
                continue;
            }
            let g = std::mem::take(&mut grads[id]);
            self.accumulate(id, &g, &mut grads);
            grads[id] = g;
        }
        grads
    }

    fn acc<'a>(grads: &'a mut [Vec<f64>], id: NodeId, len: usize) -> &'a mut [f64] {
        if grads[id].is_empty() {
            grads[id] = vec![0.0; len];
        }
        &mut grads[id]
    }

    fn accumulate(&self, id: NodeId, g: &[f64], grads: &mut [Vec<f64>]) {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Embed {
                table,
                row,
                pos_table,
                pos,
            } => {
                let cols = g.len();
                let gt = Self::acc(grads, *table, self.nodes[*table].value.len());
                for (d, gv) in g.iter().enumerate() {
                    gt[row * cols + d] += gv;
                }
                let gp = Self::acc(grads, *pos_table, self.nodes[*pos_table].value.len());
                for (d, gv) in g.iter().enumerate() {
                    gp[pos * cols + d] += gv;
                }
            }
            Op::MixRows {
                table,
                weights,
                cols,
            } => {
                let w = self.nodes[*weights].value.clone();
                let t = &self.nodes[*table];
                let tv = t.value.clone();
                {
                    let gt = Self::acc(grads, *table, tv.len());
                    for (v, &wv) in w.iter().enumerate() {
                        if wv != 0.0 {
                            for (d, gv) in g.iter().enumerate() {
                                gt[v * cols + d] += wv * gv;
                            }
                        }
                    }
                }
                let gw = Self::acc(grads, *weights, w.len());
                for (v, gwv) in gw.iter_mut().enumerate() {
                    let row = &tv[v * cols..(v + 1) * cols];
                    *gwv += row.iter().zip(g).map(|(r, gv)| r * gv).sum::<f64>();
                }
            }
            Op::LookupRow { table, row, cols } => {
                let gt = Self::acc(grads, *table, self.nodes[*table].value.len());
                for (d, gv) in g.iter().enumerate() {
                    gt[row * cols + d] += gv;
                }
            }
            Op::Add { a, b } => {
                let ga = Self::acc(grads, *a, g.len());
                for (x, gv) in ga.iter_mut().zip(g) {
                    *x += gv;
                }
                let gb = Self::acc(grads, *b, g.len());
                for (x, gv) in gb.iter_mut().zip(g) {
                    *x += gv;
                }
            }
            Op::Affine { w, b, x, out, inp } => {
                let wv = self.nodes[*w].value.clone();
                let xv = self.nodes[*x].value.clone();
                {
                    let gw = Self::acc(grads, *w, wv.len());
                    for o in 0..*out {
                        if g[o] != 0.0 {
                            for i in 0..*inp {
                                gw[o * inp + i] += g[o] * xv[i];
                            }
                        }
                    }
                }
                {
                    let gb = Self::acc(grads, *b, *out);
                    for (x, gv) in gb.iter_mut().zip(g) {
                        *x += gv;
                    }
                }
                let gx = Self::acc(grads, *x, *inp);
                for o in 0..*out {
                    if g[o] != 0.0 {
                        let row = &wv[o * inp..(o + 1) * inp];
                        for (i, r) in row.iter().enumerate() {
                            gx[i] += g[o] * r;
                        }
                    }
                }
            }
            Op::LayerNorm { x, gain, bias } => {
                let xv = self.nodes[*x].value.clone();
                let gv = self.nodes[*gain].value.clone();
                let n = xv.len();
                let nf = n as f64;
                let mean = xv.iter().sum::<f64>() / nf;
                let var = xv.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
                let inv = 1.0 / (var + LN_EPS).sqrt();
                let xhat: Vec<f64> = xv.iter().map(|v| (v - mean) * inv).collect();
                {
                    let ggain = Self::acc(grads, *gain, n);
                    for i in 0..n {
                        ggain[i] += g[i] * xhat[i];
                    }
                }
                {
                    let gbias = Self::acc(grads, *bias, n);
                    for (x, gvv) in gbias.iter_mut().zip(g) {
                        *x += gvv;
                    }
                }
                let dxhat: Vec<f64> = (0..n).map(|i| g[i] * gv[i]).collect();
                let mean_dxhat = dxhat.iter().sum::<f64>() / nf;
                let mean_dxhat_xhat =
                    dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / nf;
                let gx = Self::acc(grads, *x, n);
                for i in 0..n {
                    gx[i] += inv * (dxhat[i] - mean_dxhat - xhat[i] * mean_dxhat_xhat);
                }
            }
            Op::Gelu { x } => {
                let xv = self.nodes[*x].value.clone();
                let gx = Self::acc(grads, *x, xv.len());
                for (i, &v) in xv.iter().enumerate() {
                    gx[i] += g[i] * gelu_grad(v);
                }
            }
            Op::AttendCausal {
                q,
                keys,
                vals,
                heads,
            } => {
                let dim = self.nodes[*q].value.len();
                let dh = dim / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let qv = self.nodes[*q].value.clone();
                for h in 0..*heads {
                    let span = h * dh..(h + 1) * dh;
                    let qh = &qv[span.clone()];
                    let scores: Vec<f64> = keys
                        .iter()
                        .map(|&k| {
                            let kv = &self.nodes[k].value[span.clone()];
                            qh.iter().zip(kv).map(|(a, b)| a * b).sum::<f64>() * scale
                        })
                        .collect();
                    let weights = softmax(&scores);
                    // dw_j = sum_d g[hd+d] * v_j[hd+d]
                    let dw: Vec<f64> = vals
                        .iter()
                        .map(|&v| {
                            let vv = &self.nodes[v].value[span.clone()];
                            vv.iter()
                                .zip(&g[span.clone()])
                                .map(|(a, b)| a * b)
                                .sum::<f64>()
                        })
                        .collect();
                    let dot: f64 = weights.iter().zip(&dw).map(|(w, d)| w * d).sum();
                    let dscores: Vec<f64> =
                        weights.iter().zip(&dw).map(|(w, d)| w * (d - dot)).collect();
                    // grads to values
                    for (j, &v) in vals.iter().enumerate() {
                        if weights[j] != 0.0 {
                            let gvn = Self::acc(grads, v, dim);
                            for d in 0..dh {
                                gvn[h * dh + d] += weights[j] * g[h * dh + d];
                            }
                        }
                    }
                    // grads to keys and query
                    for (j, &k) in keys.iter().enumerate() {
                        if dscores[j] != 0.0 {
                            let kv = self.nodes[k].value[span.clone()].to_vec();
                            let gkn = Self::acc(grads, k, dim);
                            for d in 0..dh {
                                gkn[h * dh + d] += dscores[j] * qh[d] * scale;
                            }
                            let gq = Self::acc(grads, *q, dim);
                            for d in 0..dh {
                                gq[h * dh + d] += dscores[j] * kv[d] * scale;
                            }
                        }
                    }
                }
            }
            Op::Softmax { x } => {
                let y = self.nodes[id].value.clone();
                let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
                let gx = Self::acc(grads, *x, y.len());
                for i in 0..y.len() {
                    gx[i] += y[i] * (g[i] - dot);
                }
            }
            Op::LogSoftmax { x } => {
                let y = self.nodes[id].value.clone();
                let sum_g: f64 = g.iter().sum();
                let gx = Self::acc(grads, *x, y.len());
                for i in 0..y.len() {
                    gx[i] += g[i] - y[i].exp() * sum_g;
                }
            }
            Op::Pick { x, idx } => {
                let gx = Self::acc(grads, *x, self.nodes[*x].value.len());
                gx[*idx] += g[0];
            }
            Op::KlTerm { q_logits, p_logits } => {
                let lq = log_softmax(&self.nodes[*q_logits].value);
                let lp = log_softmax(&self.nodes[*p_logits].value);
                let s = self.nodes[id].value[0];
                let gy = g[0];
                {
                    let gq = Self::acc(grads, *q_logits, lq.len());
                    for i in 0..lq.len() {
                        gq[i] += gy * lq[i].exp() * ((lp[i] - lq[i]) - s);
                    }
                }
                let gp = Self::acc(grads, *p_logits, lp.len());
                for i in 0..lp.len() {
                    gp[i] += gy * (lq[i].exp() - lp[i].exp());
                }
            }
            Op::StraightThrough { probs } => {
                let gp = Self::acc(grads, *probs, g.len());
                for (x, gv) in gp.iter_mut().zip(g) {
                    *x += gv;
                }
            }
            Op::SumScalars { xs } => {
                for &x in xs {
                    let gx = Self::acc(grads, x, 1);
                    gx[0] += g[0];
                }
            }
            Op::Scale { x, c } => {
                let gx = Self::acc(grads, *x, g.len());
                for (xg, gv) in gx.iter_mut().zip(g) {
                    *xg += c * gv;
                }
            }
            Op::Exp { x } => {
                let y = self.nodes[id].value.clone();
                let gx = Self::acc(grads, *x, y.len());
                for i in 0..y.len() {
                    gx[i] += g[i] * y[i];
                }
            }
            Op::Mul { a, b } => {
                let av = self.nodes[*a].value.clone();
                let bv = self.nodes[*b].value.clone();
                {
                    let ga = Self::acc(grads, *a, av.len());
                    for i in 0..av.len() {
                        ga[i] += g[i] * bv[i];
                    }
                }
                let gb = Self::acc(grads, *b, bv.len());
                for i in 0..bv.len() {
                    gb[i] += g[i] * av[i];
                }
            }
        }
    }
}
