//! Parameter storage, layers built on the tape, and the Adam optimizer.

use std::io::{Read, Write};
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::tape::{Gradients, Graph, Mat, Var};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }

    pub fn from_index(index: usize) -> Self {
        Self(index)
    }
}

/// Named parameter matrices. Values are reference counted so that graphs can
/// borrow them without copying; the optimizer copies on write only while a
/// graph is still alive.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Arc<Mat>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        self.names.push(name.into());
        self.values.push(Arc::new(value));
        ParamId(self.values.len() - 1)
    }

    pub fn uniform(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        bound: f64,
        rng: &mut ChaCha8Rng,
    ) -> ParamId {
        let value = Mat::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound));
        self.add(name, value)
    }

    pub fn zeros(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.add(name, Mat::zeros((rows, cols)))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        Arc::make_mut(&mut self.values[id.0])
    }

    pub fn shared(&self, id: ParamId) -> Arc<Mat> {
        Arc::clone(&self.values[id.0])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.values.iter().map(|v| &**v))
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// SHA-256 over names, shapes, and the exact bit patterns of every value.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, value) in self.iter() {
            hasher.update(name.as_bytes());
            hasher.update((value.nrows() as u64).to_le_bytes());
            hasher.update((value.ncols() as u64).to_le_bytes());
            for x in value.iter() {
                hasher.update(x.to_bits().to_le_bytes());
            }
        }
        hex(&hasher.finalize())
    }

    /// Appends all entries to `out` as `<prefix><name>` records.
    pub fn write_records(&self, prefix: &str, out: &mut impl Write) -> std::io::Result<()> {
        for (name, value) in self.iter() {
            let full = format!("{prefix}{name}");
            out.write_all(&(full.len() as u32).to_le_bytes())?;
            out.write_all(full.as_bytes())?;
            out.write_all(&(value.nrows() as u32).to_le_bytes())?;
            out.write_all(&(value.ncols() as u32).to_le_bytes())?;
            for x in value.iter() {
                out.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Overwrites every entry from `records`, which must contain
    /// `<prefix><name>` with a matching shape for each parameter.
    pub fn load_records(&mut self, prefix: &str, records: &WeightRecords) -> Result<()> {
        for i in 0..self.values.len() {
            let full = format!("{prefix}{}", self.names[i]);
            let value = records
                .get(&full)
                .ok_or_else(|| Error::Checkpoint(format!("missing weight `{full}`")))?;
            if value.dim() != self.values[i].dim() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for `{full}`: stored {:?}, expected {:?}",
                    value.dim(),
                    self.values[i].dim()
                )));
            }
            self.values[i] = Arc::new(value.clone());
        }
        Ok(())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

const WEIGHTS_MAGIC: &[u8; 8] = b"LRWGHT01";

/// Flat name -> matrix table used by the weights blob.
#[derive(Debug, Default)]
pub struct WeightRecords {
    entries: Vec<(String, Mat)>,
}

impl WeightRecords {
    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn read(input: &mut impl Read) -> Result<Self> {
        let corrupt = |what: &str| Error::Checkpoint(format!("corrupt weights blob: {what}"));
        let mut magic = [0u8; 8];
        input
            .read_exact(&mut magic)
            .map_err(|_| corrupt("truncated header"))?;
        if &magic != WEIGHTS_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            if pos + n > bytes.len() {
                return Err(corrupt("truncated record"));
            }
            let out = &bytes[pos..pos + n];
            pos += n;
            Ok(out)
        };
        let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize;
        let count = u32_at(take(4)?);
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let len = u32_at(take(4)?);
            let name =
                String::from_utf8(take(len)?.to_vec()).map_err(|_| corrupt("non-utf8 name"))?;
            let rows = u32_at(take(4)?);
            let cols = u32_at(take(4)?);
            let raw = take(rows * cols * 8)?;
            let data: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let mat = Mat::from_shape_vec((rows, cols), data).map_err(|_| corrupt("bad shape"))?;
            entries.push((name, mat));
        }
        Ok(Self { entries })
    }
}

/// Writes the stores, each under its prefix, into one blob.
pub fn write_weights(stores: &[(&str, &ParamStore)], out: &mut impl Write) -> std::io::Result<()> {
    out.write_all(WEIGHTS_MAGIC)?;
    let count: usize = stores.iter().map(|(_, s)| s.len()).sum();
    out.write_all(&(count as u32).to_le_bytes())?;
    for (prefix, store) in stores {
        store.write_records(prefix, out)?;
    }
    Ok(())
}

/// Lazily binds parameters of one store onto a graph.
pub struct Binder<'a> {
    store: &'a ParamStore,
    vars: Vec<Option<Var>>,
    trainable: bool,
}

impl<'a> Binder<'a> {
    pub fn new(store: &'a ParamStore, trainable: bool) -> Self {
        Self {
            store,
            vars: vec![None; store.len()],
            trainable,
        }
    }

    pub fn get(&mut self, g: &mut Graph, id: ParamId) -> Var {
        if let Some(v) = self.vars[id.0] {
            return v;
        }
        let v = g.shared(self.store.shared(id), self.trainable);
        self.vars[id.0] = Some(v);
        v
    }

    /// Gradients for every parameter, zero-filled for parameters that were
    /// never bound or received no gradient.
    pub fn collect(&self, grads: &Gradients) -> Vec<Mat> {
        self.vars
            .iter()
            .enumerate()
            .map(|(i, v)| match v.and_then(|v| grads.get(v)) {
                Some(g) => g.clone(),
                None => Mat::zeros(self.store.values[i].raw_dim()),
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = store.uniform(&format!("{name}.w"), fan_in, fan_out, bound, rng);
        let b = bias.then(|| store.zeros(&format!("{name}.b"), 1, fan_out));
        Self {
            w,
            b,
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &mut Binder, x: Var) -> Var {
        let w = p.get(g, self.w);
        let y = g.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = p.get(g, b);
                g.add_row(y, b)
            }
            None => y,
        }
    }
}

/// Feed-forward network with `tanh` between layers and a linear output.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, widths: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], true, rng))
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty mlp").fan_out
    }

    pub fn forward(&self, g: &mut Graph, p: &mut Binder, x: Var) -> Var {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, p, h);
            if i < last {
                h = g.tanh(h);
            }
        }
        h
    }
}

/// Single-layer GRU cell with gate order (reset, update, candidate).
#[derive(Clone, Debug)]
pub struct Gru {
    pub wx: ParamId,
    pub wh: ParamId,
    pub bx: ParamId,
    pub bh: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl Gru {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Self {
            wx: store.uniform(&format!("{name}.wx"), input, 3 * hidden, bound, rng),
            wh: store.uniform(&format!("{name}.wh"), hidden, 3 * hidden, bound, rng),
            bx: store.uniform(&format!("{name}.bx"), 1, 3 * hidden, bound, rng),
            bh: store.uniform(&format!("{name}.bh"), 1, 3 * hidden, bound, rng),
            input,
            hidden,
        }
    }

    /// Input contribution `x Wx + bx` for any number of stacked rows.
    pub fn project_input(&self, g: &mut Graph, p: &mut Binder, x: Var) -> Var {
        let wx = p.get(g, self.wx);
        let bx = p.get(g, self.bx);
        let y = g.matmul(x, wx);
        g.add_row(y, bx)
    }

    /// One step given the projected input `gx` (`B x 3H`) and state `h`.
    pub fn step(&self, g: &mut Graph, p: &mut Binder, gx: Var, h: Var) -> Var {
        let hd = self.hidden;
        let wh = p.get(g, self.wh);
        let bh = p.get(g, self.bh);
        let gh = g.matmul(h, wh);
        let gh = g.add_row(gh, bh);
        let xr = g.slice_cols(gx, 0, hd);
        let hr = g.slice_cols(gh, 0, hd);
        let r = g.add(xr, hr);
        let r = g.sigmoid(r);
        let xu = g.slice_cols(gx, hd, hd);
        let hu = g.slice_cols(gh, hd, hd);
        let u = g.add(xu, hu);
        let u = g.sigmoid(u);
        let xn = g.slice_cols(gx, 2 * hd, hd);
        let hn = g.slice_cols(gh, 2 * hd, hd);
        let rn = g.mul(r, hn);
        let n = g.add(xn, rn);
        let n = g.tanh(n);
        // h' = n + u * (h - n)
        let diff = g.sub(h, n);
        let keep = g.mul(u, diff);
        g.add(n, keep)
    }
}

/// Single-layer LSTM cell with gate order (input, forget, cell, output).
#[derive(Clone, Debug)]
pub struct Lstm {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl Lstm {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Self {
            wx: store.uniform(&format!("{name}.wx"), input, 4 * hidden, bound, rng),
            wh: store.uniform(&format!("{name}.wh"), hidden, 4 * hidden, bound, rng),
            b: store.zeros(&format!("{name}.b"), 1, 4 * hidden),
            hidden,
        }
    }

    pub fn project_input(&self, g: &mut Graph, p: &mut Binder, x: Var) -> Var {
        let wx = p.get(g, self.wx);
        let b = p.get(g, self.b);
        let y = g.matmul(x, wx);
        g.add_row(y, b)
    }

    /// Returns `(h', c')`.
    pub fn step(&self, g: &mut Graph, p: &mut Binder, gx: Var, h: Var, c: Var) -> (Var, Var) {
        let hd = self.hidden;
        let wh = p.get(g, self.wh);
        let gh = g.matmul(h, wh);
        let gates = g.add(gx, gh);
        let i = g.slice_cols(gates, 0, hd);
        let i = g.sigmoid(i);
        let f = g.slice_cols(gates, hd, hd);
        let f = g.sigmoid(f);
        let cand = g.slice_cols(gates, 2 * hd, hd);
        let cand = g.tanh(cand);
        let o = g.slice_cols(gates, 3 * hd, hd);
        let o = g.sigmoid(o);
        let fc = g.mul(f, c);
        let ic = g.mul(i, cand);
        let c2 = g.add(fc, ic);
        let tc = g.tanh(c2);
        let h2 = g.mul(o, tc);
        (h2, c2)
    }
}

/// `h + mask * (new - h)` with a constant `B x 1` mask.
pub fn masked_update(g: &mut Graph, h: Var, new: Var, mask: &Mat) -> Var {
    let diff = g.sub(new, h);
    let gated = g.mul_col(diff, mask.clone());
    g.add(h, gated)
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay: each step also shrinks parameters by `lr * weight_decay`.
    pub weight_decay: f64,
    t: u64,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros = |s: &ParamStore| {
            s.values
                .iter()
                .map(|v| Mat::zeros(v.raw_dim()))
                .collect::<Vec<_>>()
        };
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            t: 0,
            m: zeros(store),
            v: zeros(store),
        }
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Mat]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        let shrink = 1.0 - lr * self.weight_decay;
        for (i, g) in grads.iter().enumerate() {
            let param = Arc::make_mut(&mut store.values[i]);
            ndarray::Zip::from(param)
                .and(&mut self.m[i])
                .and(&mut self.v[i])
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let mh = *m / bc1;
                    let vh = *v / bc2;
                    *p = *p * shrink - lr * mh / (vh.sqrt() + eps);
                });
        }
    }
}

/// Rescales all gradient groups so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(groups: &mut [&mut Vec<Mat>], max_norm: f64) -> f64 {
    let norm = groups
        .iter()
        .flat_map(|g| g.iter())
        .map(|m| m.iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let scale = max_norm / norm;
        for group in groups.iter_mut() {
            for m in group.iter_mut() {
                m.mapv_inplace(|x| x * scale);
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;

    #[test]
    fn adam_descends_on_a_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("x", array![[3.0, -2.0]]);
        let mut opt = Adam::new(&store, 0.1);
        for _ in 0..500 {
            let grad = store.get(id).mapv(|x| 2.0 * x);
            opt.step(&mut store, &[grad]);
        }
        assert!(store.get(id).iter().all(|x| x.abs() < 1e-2));
    }

    #[test]
    fn clipping_caps_the_joint_norm() {
        let mut a = vec![array![[3.0]]];
        let mut b = vec![array![[4.0]]];
        let before = clip_global_norm(&mut [&mut a, &mut b], 1.0);
        assert_eq!(before, 5.0);
        assert!((a[0][[0, 0]] - 0.6).abs() < 1e-12);
        assert!((b[0][[0, 0]] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn weights_blob_roundtrip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        Mlp::new(&mut store, "m", &[3, 4, 2], &mut rng);
        let mut buf = Vec::new();
        write_weights(&[("p.", &store)], &mut buf).unwrap();
        let records = WeightRecords::read(&mut buf.as_slice()).unwrap();
        let mut other = ParamStore::new();
        Mlp::new(
            &mut other,
            "m",
            &[3, 4, 2],
            &mut ChaCha8Rng::seed_from_u64(99),
        );
        assert_ne!(other.checksum(), store.checksum());
        other.load_records("p.", &records).unwrap();
        assert_eq!(other.checksum(), store.checksum());
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let mut store = ParamStore::new();
        store.add("x", array![[1.0, 2.0]]);
        let mut buf = Vec::new();
        write_weights(&[("", &store)], &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(WeightRecords::read(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn gru_step_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let gru = Gru::new(&mut store, "g", 2, 3, &mut rng);
        let x = array![[0.4, -0.3], [0.1, 0.9]];
        let f = |h0: &Mat, grad: bool| {
            let mut g = Graph::new();
            let mut p = Binder::new(&store, false);
            let xv = g.constant(x.clone());
            let hv = if grad {
                g.input(h0.clone())
            } else {
                g.constant(h0.clone())
            };
            let gx = gru.project_input(&mut g, &mut p, xv);
            let h1 = gru.step(&mut g, &mut p, gx, hv);
            let h2 = gru.step(&mut g, &mut p, gx, h1);
            let out = g.weighted_sum(h2, array![[1.0, -2.0, 0.5], [0.3, 0.2, 0.1]]);
            (
                g.scalar(out),
                grad.then(|| g.backward(out).get(hv).unwrap().clone()),
            )
        };
        let h0 = array![[0.2, -0.1, 0.05], [0.0, 0.3, -0.4]];
        let analytic = f(&h0, true).1.unwrap();
        let eps = 1e-6;
        for idx in 0..h0.len() {
            let (r, c) = (idx / 3, idx % 3);
            let mut hp = h0.clone();
            hp[[r, c]] += eps;
            let mut hm = h0.clone();
            hm[[r, c]] -= eps;
            let num = (f(&hp, false).0 - f(&hm, false).0) / (2.0 * eps);
            assert!((num - analytic[[r, c]]).abs() < 1e-7);
        }
    }
}
