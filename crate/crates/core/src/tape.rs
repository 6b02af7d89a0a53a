//! Vector-valued reverse-mode autodiff tape.
//!
//! Each node holds a contiguous slice of the value arena. Nodes that depend on
//! no trainable parameter are marked constant and skipped during backward.

use alloc::vec::Vec;

use crate::math;
use crate::params::{Grads, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(u32);

#[derive(Debug, Clone, Copy)]
enum Op {
    Const,
    Param(ParamId),
    MatVec(ParamId, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    OneMinus(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Softplus(Var),
    Ln1p(Var),
    Square(Var),
    Concat(u32, u32),
    Dot(Var, Var),
    Softmax(Var),
    WeightedSum(Var, u32, u32),
    Sum(Var),
}

#[derive(Debug, Clone, Copy)]
struct Node {
    op: Op,
    off: u32,
    len: u32,
    grad: bool,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    trainable: &'p [bool],
    nodes: Vec<Node>,
    vals: Vec<f64>,
    adj: Vec<f64>,
    args: Vec<Var>,
    param_cache: Vec<Option<Var>>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore, trainable: &'p [bool]) -> Self {
        assert_eq!(params.len(), trainable.len());
        Tape {
            params,
            trainable,
            nodes: Vec::new(),
            vals: Vec::new(),
            adj: Vec::new(),
            args: Vec::new(),
            param_cache: alloc::vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
        self.vals.clear();
        self.args.clear();
        self.param_cache.iter_mut().for_each(|c| *c = None);
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        let n = self.nodes[v.0 as usize];
        &self.vals[n.off as usize..(n.off + n.len) as usize]
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let s = self.value(v);
        debug_assert_eq!(s.len(), 1);
        s[0]
    }

    pub fn len_of(&self, v: Var) -> usize {
        self.nodes[v.0 as usize].len as usize
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0 as usize].grad
    }

    fn push(&mut self, op: Op, len: usize, grad: bool, fill: impl FnOnce(&[f64], &mut [f64], &[Node], &[Var])) -> Var {
        let off = self.vals.len();
        self.vals.resize(off + len, 0.0);
        let (inp, out) = self.vals.split_at_mut(off);
        fill(inp, out, &self.nodes, &self.args);
        let id = Var(self.nodes.len() as u32);
        self.nodes.push(Node { op, off: off as u32, len: len as u32, grad });
        id
    }

    fn slice<'a>(vals: &'a [f64], nodes: &[Node], v: Var) -> &'a [f64] {
        let n = nodes[v.0 as usize];
        &vals[n.off as usize..(n.off + n.len) as usize]
    }

    pub fn constant(&mut self, values: &[f64]) -> Var {
        self.push(Op::Const, values.len(), false, |_, out, _, _| out.copy_from_slice(values))
    }

    pub fn zeros(&mut self, len: usize) -> Var {
        self.push(Op::Const, len, false, |_, _, _, _| {})
    }

    /// The parameter as a flat vector node (cached per tape).
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_cache[id.index()] {
            return v;
        }
        let params = self.params;
        let data = &params.get(id).data;
        let grad = self.trainable[id.index()];
        let v = self.push(Op::Param(id), data.len(), grad, |_, out, _, _| out.copy_from_slice(data));
        self.param_cache[id.index()] = Some(v);
        v
    }

    pub fn matvec(&mut self, w: ParamId, x: Var) -> Var {
        let params = self.params;
        let t = params.get(w);
        assert_eq!(t.cols, self.len_of(x), "matvec shape for {}", self.params.name(w));
        let grad = self.trainable[w.index()] || self.needs(x);
        let (rows, cols, data) = (t.rows, t.cols, &t.data);
        self.push(Op::MatVec(w, x), rows, grad, |inp, out, nodes, _| {
            let xv = Self::slice(inp, nodes, x);
            for (r, o) in out.iter_mut().enumerate() {
                let row = &data[r * cols..(r + 1) * cols];
                *o = row.iter().zip(xv).map(|(a, b)| a * b).sum();
            }
        })
    }

    /// `W x + b`.
    pub fn affine(&mut self, w: ParamId, b: ParamId, x: Var) -> Var {
        let wx = self.matvec(w, x);
        let bv = self.param(b);
        self.add(wx, bv)
    }

    fn binary(&mut self, op: Op, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Var {
        let len = self.len_of(a);
        assert_eq!(len, self.len_of(b), "elementwise length mismatch");
        let grad = self.needs(a) || self.needs(b);
        self.push(op, len, grad, |inp, out, nodes, _| {
            let (av, bv) = (Self::slice(inp, nodes, a), Self::slice(inp, nodes, b));
            for ((o, x), y) in out.iter_mut().zip(av).zip(bv) {
                *o = f(*x, *y);
            }
        })
    }

    fn unary(&mut self, op: Op, a: Var, f: impl Fn(f64) -> f64) -> Var {
        let len = self.len_of(a);
        let grad = self.needs(a);
        self.push(op, len, grad, |inp, out, nodes, _| {
            for (o, x) in out.iter_mut().zip(Self::slice(inp, nodes, a)) {
                *o = f(*x);
            }
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(Op::Add(a, b), a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(Op::Sub(a, b), a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(Op::Mul(a, b), a, b, |x, y| x * y)
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        self.unary(Op::OneMinus(a), a, |x| 1.0 - x)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(Op::Scale(a, c), a, |x| c * x)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(Op::AddScalar(a), a, |x| x + c)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(Op::Sigmoid(a), a, math::sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(Op::Tanh(a), a, math::tanh)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(Op::Relu(a), a, |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(Op::LeakyRelu(a, slope), a, |x| if x > 0.0 { x } else { slope * x })
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(Op::Softplus(a), a, math::softplus)
    }

    pub fn ln_1p(&mut self, a: Var) -> Var {
        self.unary(Op::Ln1p(a), a, math::ln_1p)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(Op::Square(a), a, |x| x * x)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let start = self.args.len() as u32;
        self.args.extend_from_slice(parts);
        let len = parts.iter().map(|&p| self.len_of(p)).sum();
        let grad = parts.iter().any(|&p| self.needs(p));
        self.push(Op::Concat(start, parts.len() as u32), len, grad, |inp, out, nodes, _| {
            let mut o = 0;
            for &p in parts {
                let s = Self::slice(inp, nodes, p);
                out[o..o + s.len()].copy_from_slice(s);
                o += s.len();
            }
        })
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.len_of(a), self.len_of(b), "dot length mismatch");
        let grad = self.needs(a) || self.needs(b);
        self.push(Op::Dot(a, b), 1, grad, |inp, out, nodes, _| {
            out[0] = Self::slice(inp, nodes, a).iter().zip(Self::slice(inp, nodes, b)).map(|(x, y)| x * y).sum();
        })
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let grad = self.needs(a);
        self.push(Op::Sum(a), 1, grad, |inp, out, nodes, _| out[0] = Self::slice(inp, nodes, a).iter().sum())
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let len = self.len_of(a);
        let grad = self.needs(a);
        self.push(Op::Softmax(a), len, grad, |inp, out, nodes, _| softmax_into(Self::slice(inp, nodes, a), out))
    }

    /// `sum_k w[k] * items[k]`.
    pub fn weighted_sum(&mut self, w: Var, items: &[Var]) -> Var {
        assert_eq!(self.len_of(w), items.len());
        assert!(!items.is_empty());
        let len = self.len_of(items[0]);
        assert!(items.iter().all(|&i| self.len_of(i) == len));
        let start = self.args.len() as u32;
        self.args.extend_from_slice(items);
        let grad = self.needs(w) || items.iter().any(|&i| self.needs(i));
        self.push(Op::WeightedSum(w, start, items.len() as u32), len, grad, |inp, out, nodes, _| {
            let wv = Self::slice(inp, nodes, w);
            for (k, &item) in items.iter().enumerate() {
                for (o, x) in out.iter_mut().zip(Self::slice(inp, nodes, item)) {
                    *o += wv[k] * x;
                }
            }
        })
    }

    /// Accumulates `seed * d(root)/d(theta)` into `grads` for every trainable
    /// parameter.
    pub fn backward(&mut self, root: Var, seed: f64, grads: &mut Grads) {
        assert_eq!(self.len_of(root), 1, "backward needs a scalar root");
        self.adj.clear();
        self.adj.resize(self.vals.len(), 0.0);
        let r = self.nodes[root.0 as usize];
        self.adj[r.off as usize] = seed;
        for idx in (0..=root.0 as usize).rev() {
            let node = self.nodes[idx];
            if !node.grad {
                continue;
            }
            let (o, l) = (node.off as usize, node.len as usize);
            if self.adj[o..o + l].iter().all(|&g| g == 0.0) {
                continue;
            }
            self.propagate(node, grads);
        }
    }

    fn propagate(&mut self, node: Node, grads: &mut Grads) {
        let (o, l) = (node.off as usize, node.len as usize);
        let Tape { params, trainable, nodes, vals, adj, args, .. } = self;
        let range = |v: Var| {
            let n = nodes[v.0 as usize];
            (n.off as usize, n.len as usize, n.grad)
        };
        // adjoint of this node is always at a higher offset than its inputs
        macro_rules! split {
            () => {{
                let (lo, hi) = adj.split_at_mut(o);
                (lo, &hi[..l])
            }};
        }
        match node.op {
            Op::Const => {}
            Op::Param(id) => {
                let g = grads.get_mut(id);
                for (gi, a) in g.iter_mut().zip(&adj[o..o + l]) {
                    *gi += a;
                }
            }
            Op::MatVec(w, x) => {
                let t = params.get(w);
                let (xo, xl, xg) = range(x);
                let (lo, dy) = split!();
                if trainable[w.index()] {
                    let g = grads.get_mut(w);
                    let xv = &vals[xo..xo + xl];
                    for (r, &d) in dy.iter().enumerate() {
                        if d == 0.0 {
                            continue;
                        }
                        for (gi, xi) in g[r * t.cols..(r + 1) * t.cols].iter_mut().zip(xv) {
                            *gi += d * xi;
                        }
                    }
                }
                if xg {
                    let dx = &mut lo[xo..xo + xl];
                    for (r, &d) in dy.iter().enumerate() {
                        if d == 0.0 {
                            continue;
                        }
                        for (dxi, wi) in dx.iter_mut().zip(&t.data[r * t.cols..(r + 1) * t.cols]) {
                            *dxi += d * wi;
                        }
                    }
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                let (ao, _, ag) = range(a);
                let (bo, _, bg) = range(b);
                let (lo, dy) = split!();
                for i in 0..l {
                    if ag {
                        lo[ao + i] += dy[i];
                    }
                    if bg {
                        lo[bo + i] += sign * dy[i];
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ao, _, ag) = range(a);
                let (bo, _, bg) = range(b);
                let (lo, dy) = split!();
                for i in 0..l {
                    if ag {
                        lo[ao + i] += dy[i] * vals[bo + i];
                    }
                    if bg {
                        lo[bo + i] += dy[i] * vals[ao + i];
                    }
                }
            }
            Op::OneMinus(a) | Op::Scale(a, _) | Op::AddScalar(a) | Op::Sigmoid(a) | Op::Tanh(a) | Op::Relu(a)
            | Op::LeakyRelu(a, _) | Op::Softplus(a) | Op::Ln1p(a) | Op::Square(a) => {
                let (ao, _, _) = range(a);
                let (lo, dy) = split!();
                for i in 0..l {
                    let x = vals[ao + i];
                    let y = vals[o + i];
                    let d = match node.op {
                        Op::OneMinus(_) => -1.0,
                        Op::Scale(_, c) => c,
                        Op::AddScalar(_) => 1.0,
                        Op::Sigmoid(_) => y * (1.0 - y),
                        Op::Tanh(_) => 1.0 - y * y,
                        Op::Relu(_) => {
                            if x > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        Op::LeakyRelu(_, s) => {
                            if x > 0.0 {
                                1.0
                            } else {
                                s
                            }
                        }
                        Op::Softplus(_) => math::sigmoid(x),
                        Op::Ln1p(_) => 1.0 / (1.0 + x),
                        Op::Square(_) => 2.0 * x,
                        _ => unreachable!(),
                    };
                    lo[ao + i] += dy[i] * d;
                }
            }
            Op::Concat(start, count) => {
                let mut pos = 0;
                for k in 0..count {
                    let p = args[(start + k) as usize];
                    let (po, pl, pg) = range(p);
                    let (lo, dy) = split!();
                    if pg {
                        for i in 0..pl {
                            lo[po + i] += dy[pos + i];
                        }
                    }
                    pos += pl;
                }
            }
            Op::Dot(a, b) => {
                let (ao, al, ag) = range(a);
                let (bo, _, bg) = range(b);
                let (lo, dy) = split!();
                let d = dy[0];
                for i in 0..al {
                    if ag {
                        lo[ao + i] += d * vals[bo + i];
                    }
                    if bg {
                        lo[bo + i] += d * vals[ao + i];
                    }
                }
            }
            Op::Sum(a) => {
                let (ao, al, _) = range(a);
                let (lo, dy) = split!();
                let d = dy[0];
                lo[ao..ao + al].iter_mut().for_each(|g| *g += d);
            }
            Op::Softmax(a) => {
                let (ao, _, _) = range(a);
                let (lo, dy) = split!();
                let y = &vals[o..o + l];
                let inner: f64 = dy.iter().zip(y).map(|(d, y)| d * y).sum();
                for i in 0..l {
                    lo[ao + i] += y[i] * (dy[i] - inner);
                }
            }
            Op::WeightedSum(w, start, count) => {
                let (wo, _, wg) = range(w);
                for k in 0..count as usize {
                    let item = args[start as usize + k];
                    let (io, _, ig) = range(item);
                    let (lo, dy) = split!();
                    if wg {
                        lo[wo + k] += dy.iter().zip(&vals[io..io + l]).map(|(d, x)| d * x).sum::<f64>();
                    }
                    if ig {
                        let wk = vals[wo + k];
                        for i in 0..l {
                            lo[io + i] += wk * dy[i];
                        }
                    }
                }
            }
        }
    }
}

/// Numerically stable softmax.
pub fn softmax_into(x: &[f64], out: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = math::exp(v - max);
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Init;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", 3, 4, Init::Fan);
        s.add("b", 3, 1, Init::Fan);
        s.add("v", 3, 1, Init::Fan);
        s.initialize(&mut ChaCha8Rng::seed_from_u64(11));
        s
    }

    /// Exercises every op; returns the scalar output.
    fn graph(t: &mut Tape, x: &[f64]) -> Var {
        let (w, b, v) = (ParamId(0), ParamId(1), ParamId(2));
        let xv = t.constant(x);
        let h = t.affine(w, b, xv);
        let s = t.sigmoid(h);
        let th = t.tanh(h);
        let r = t.relu(th);
        let lr = t.leaky_relu(h, 0.2);
        let m = t.mul(s, lr);
        let om = t.one_minus(m);
        let vp = t.param(v);
        let d = t.sub(om, vp);
        let sc = t.scale(d, 0.7);
        let sp = t.softplus(sc);
        let e1 = t.dot(sp, r);
        let e2 = t.dot(vp, th);
        let e3 = t.sum(lr);
        let logits = t.concat(&[e1, e2, e3]);
        let a = t.softmax(logits);
        let ws = t.weighted_sum(a, &[sp, r, s]);
        let q = t.square(ws);
        let l = t.ln_1p(q);
        let tot = t.sum(l);
        t.add_scalar(tot, 0.25)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let s = store();
        let trainable = vec![true; 3];
        let x = [0.3, -1.2, 0.8, 0.05];
        let mut tape = Tape::new(&s, &trainable);
        let out = graph(&mut tape, &x);
        let mut grads = Grads::zeros_like(&s);
        tape.backward(out, 1.0, &mut grads);
        for id in s.ids() {
            for k in 0..s.get(id).len() {
                let eval = |delta: f64| {
                    let mut p = s.clone();
                    p.get_mut(id).data[k] += delta;
                    let mut t = Tape::new(&p, &trainable);
                    let o = graph(&mut t, &x);
                    t.scalar(o)
                };
                let h = 1e-5;
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let an = grads.get(id)[k];
                assert!((fd - an).abs() <= 1e-6 * (1.0 + fd.abs()), "{} [{k}]: fd {fd} vs {an}", s.name(id));
            }
        }
    }

    #[test]
    fn frozen_parameters_receive_no_gradient() {
        let s = store();
        let trainable = vec![false, true, false];
        let mut tape = Tape::new(&s, &trainable);
        let out = graph(&mut tape, &[1.0, 2.0, 3.0, 4.0]);
        let mut grads = Grads::zeros_like(&s);
        tape.backward(out, 1.0, &mut grads);
        assert!(grads.get(ParamId(0)).iter().all(|&g| g == 0.0));
        assert!(grads.get(ParamId(2)).iter().all(|&g| g == 0.0));
        assert!(grads.get(ParamId(1)).iter().any(|&g| g != 0.0));
    }

    #[test]
    fn seed_scales_gradients() {
        let s = store();
        let trainable = vec![true; 3];
        let mut g1 = Grads::zeros_like(&s);
        let mut g2 = Grads::zeros_like(&s);
        let mut tape = Tape::new(&s, &trainable);
        let out = graph(&mut tape, &[0.1, 0.2, 0.3, 0.4]);
        tape.backward(out, 1.0, &mut g1);
        tape.backward(out, 2.0, &mut g2);
        for (a, b) in g1.data.iter().flatten().zip(g2.data.iter().flatten()) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn softmax_is_a_distribution() {
        let mut out = [0.0; 3];
        softmax_into(&[1000.0, 1000.0, -1000.0], &mut out);
        assert_eq!(out[0], 0.5);
        assert_eq!(out[2], 0.0);
    }
}
