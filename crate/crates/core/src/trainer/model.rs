//! A small DLRM-style model: a bottom MLP over dense features, one embedding
//! lookup per categorical feature, pairwise dot-product interactions and a
//! top MLP producing a click logit.
//!
//! Embedding rows are stored as `f32` in an [`EmbeddingShardSet`]; all
//! arithmetic runs in `f64`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::data::Split;
use super::metrics::{auc, logloss, sigmoid, softplus, TrainMetrics};
use crate::embedding::{EmbeddingShardSet, Instrumentation, TableSpec};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub emb_dim: usize,
    pub bottom_hidden: usize,
    pub top_hidden: usize,
    /// Embedding rows start uniform in `[-init_scale, init_scale]`.
    pub init_scale: f32,
    pub emb_lr: f64,
    pub mlp_lr: f64,
    /// Row-wise adaptive step sizes for embeddings instead of plain SGD.
    pub row_adagrad: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            emb_dim: 16,
            bottom_hidden: 16,
            top_hidden: 16,
            init_scale: 0.2,
            emb_lr: 0.005,
            mlp_lr: 0.2,
            row_adagrad: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.emb_dim == 0 || self.bottom_hidden == 0 || self.top_hidden == 0 {
            return Err(Error::InvalidInput("layer widths must be >= 1".into()));
        }
        for (name, v) in [("emb_lr", self.emb_lr), ("mlp_lr", self.mlp_lr)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::domain(name, v, "finite and >= 0"));
            }
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::domain("init_scale", self.init_scale as f64, "finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major `n_out x n_in`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    fn new(n_in: usize, n_out: usize, rng: &mut impl Rng) -> Self {
        let std = (2.0 / (n_in + n_out) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        Dense {
            n_in,
            n_out,
            w: (0..n_in * n_out).map(|_| normal.sample(rng)).collect(),
            b: vec![0.0; n_out],
        }
    }

    fn zeros_like(&self) -> Self {
        Dense {
            n_in: self.n_in,
            n_out: self.n_out,
            w: vec![0.0; self.w.len()],
            b: vec![0.0; self.b.len()],
        }
    }

    fn forward(&self, x: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out.iter_mut().zip(self.w.chunks_exact(self.n_in).zip(&self.b)) {
            *o = b + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>();
        }
    }

    /// Accumulates parameter gradients into `grad` and writes `dx`.
    fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Dense, dx: &mut [f64]) {
        dx.iter_mut().for_each(|v| *v = 0.0);
        for o in 0..self.n_out {
            let g = dy[o];
            if g == 0.0 {
                continue;
            }
            grad.b[o] += g;
            let row = &self.w[o * self.n_in..(o + 1) * self.n_in];
            let grow = &mut grad.w[o * self.n_in..(o + 1) * self.n_in];
            for i in 0..self.n_in {
                grow[i] += g * x[i];
                dx[i] += g * row[i];
            }
        }
    }

    fn axpy(&mut self, alpha: f64, g: &Dense) {
        for (w, gw) in self.w.iter_mut().zip(&g.w) {
            *w += alpha * gw;
        }
        for (b, gb) in self.b.iter_mut().zip(&g.b) {
            *b += alpha * gb;
        }
    }
}

/// Dense (replicated) parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub bottom1: Dense,
    pub bottom2: Dense,
    pub top1: Dense,
    pub top2: Dense,
}

impl Mlp {
    fn zeros_like(&self) -> Self {
        Mlp {
            bottom1: self.bottom1.zeros_like(),
            bottom2: self.bottom2.zeros_like(),
            top1: self.top1.zeros_like(),
            top2: self.top2.zeros_like(),
        }
    }

    fn axpy(&mut self, alpha: f64, g: &Mlp) {
        self.bottom1.axpy(alpha, &g.bottom1);
        self.bottom2.axpy(alpha, &g.bottom2);
        self.top1.axpy(alpha, &g.top1);
        self.top2.axpy(alpha, &g.top2);
    }

    pub fn layers(&self) -> [&Dense; 4] {
        [&self.bottom1, &self.bottom2, &self.top1, &self.top2]
    }

    pub fn layers_mut(&mut self) -> [&mut Dense; 4] {
        [&mut self.bottom1, &mut self.bottom2, &mut self.top1, &mut self.top2]
    }
}

/// Gradient of the mean batch loss with respect to touched embedding rows,
/// one entry per distinct (table, row), sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbGrads {
    pub dim: usize,
    /// Per table: sorted distinct rows and their `dim`-wide gradients.
    pub rows: Vec<Vec<usize>>,
    pub grads: Vec<Vec<f64>>,
}

struct Scratch {
    x: Vec<f64>,
    h1_pre: Vec<f64>,
    h1: Vec<f64>,
    /// (n_tables + 1) vectors: bottom output then one embedding per table.
    vecs: Vec<f64>,
    feat: Vec<f64>,
    t1_pre: Vec<f64>,
    t1: Vec<f64>,
    out: [f64; 1],
    // backward buffers
    d_t1: Vec<f64>,
    d_feat: Vec<f64>,
    d_vecs: Vec<f64>,
    d_h1: Vec<f64>,
    d_x: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ToyModel {
    pub emb: EmbeddingShardSet,
    pub mlp: Mlp,
    pub config: ModelConfig,
    dense_dim: usize,
}

impl ToyModel {
    pub fn new(
        cfg: &ModelConfig,
        vocab_sizes: &[usize],
        dense_dim: usize,
        n_shards: usize,
        instrumentation: Instrumentation,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let specs: Vec<TableSpec> = vocab_sizes
            .iter()
            .map(|&rows| TableSpec {
                rows,
                dim: cfg.emb_dim,
            })
            .collect();
        let mut emb = EmbeddingShardSet::new(
            &specs,
            n_shards,
            instrumentation,
            cfg.row_adagrad,
            derive_seed(seed, stream::MODEL_INIT, 1),
        )?;
        emb.init_uniform(cfg.init_scale, derive_seed(seed, stream::MODEL_INIT, 2));
        let mut rng = rng_from_seed(derive_seed(seed, stream::MODEL_INIT, 3));
        let d = cfg.emb_dim;
        let nv = vocab_sizes.len() + 1;
        let n_feat = d + nv * (nv - 1) / 2;
        let mlp = Mlp {
            bottom1: Dense::new(dense_dim, cfg.bottom_hidden, &mut rng),
            bottom2: Dense::new(cfg.bottom_hidden, d, &mut rng),
            top1: Dense::new(n_feat, cfg.top_hidden, &mut rng),
            top2: Dense::new(cfg.top_hidden, 1, &mut rng),
        };
        Ok(ToyModel {
            emb,
            mlp,
            config: cfg.clone(),
            dense_dim,
        })
    }

    pub fn n_tables(&self) -> usize {
        self.emb.n_tables()
    }

    fn scratch(&self) -> Scratch {
        let d = self.config.emb_dim;
        let nv = self.n_tables() + 1;
        Scratch {
            x: vec![0.0; self.dense_dim],
            h1_pre: vec![0.0; self.config.bottom_hidden],
            h1: vec![0.0; self.config.bottom_hidden],
            vecs: vec![0.0; nv * d],
            feat: vec![0.0; self.mlp.top1.n_in],
            t1_pre: vec![0.0; self.config.top_hidden],
            t1: vec![0.0; self.config.top_hidden],
            out: [0.0],
            d_t1: vec![0.0; self.config.top_hidden],
            d_feat: vec![0.0; self.mlp.top1.n_in],
            d_vecs: vec![0.0; nv * d],
            d_h1: vec![0.0; self.config.bottom_hidden],
            d_x: vec![0.0; self.dense_dim],
        }
    }

    fn check_sample(&self, ids: &[u32], dense: &[f32]) -> Result<()> {
        if ids.len() != self.n_tables() || dense.len() != self.dense_dim {
            return Err(Error::ShapeMismatch(format!(
                "sample has {} ids and {} dense values",
                ids.len(),
                dense.len()
            )));
        }
        for (t, &id) in ids.iter().enumerate() {
            let rows = self.emb.table(t)?.rows();
            if id as usize >= rows {
                return Err(Error::IndexOutOfRange {
                    table: t,
                    index: id as u64,
                    rows,
                });
            }
        }
        Ok(())
    }

    fn forward(&self, ids: &[u32], dense: &[f32], s: &mut Scratch) -> f64 {
        let d = self.config.emb_dim;
        for (x, v) in s.x.iter_mut().zip(dense) {
            *x = *v as f64;
        }
        self.mlp.bottom1.forward(&s.x, &mut s.h1_pre);
        for (h, p) in s.h1.iter_mut().zip(&s.h1_pre) {
            *h = p.max(0.0);
        }
        self.mlp.bottom2.forward(&s.h1, &mut s.vecs[..d]);
        for (t, &id) in ids.iter().enumerate() {
            let row = self.emb.tables()[t].row(id as usize);
            for (dst, v) in s.vecs[(t + 1) * d..(t + 2) * d].iter_mut().zip(row) {
                *dst = *v as f64;
            }
        }
        let nv = ids.len() + 1;
        s.feat[..d].copy_from_slice(&s.vecs[..d]);
        let mut k = d;
        for i in 0..nv {
            for j in (i + 1)..nv {
                let a = &s.vecs[i * d..(i + 1) * d];
                let b = &s.vecs[j * d..(j + 1) * d];
                s.feat[k] = a.iter().zip(b).map(|(x, y)| x * y).sum();
                k += 1;
            }
        }
        self.mlp.top1.forward(&s.feat, &mut s.t1_pre);
        for (h, p) in s.t1.iter_mut().zip(&s.t1_pre) {
            *h = p.max(0.0);
        }
        self.mlp.top2.forward(&s.t1, &mut s.out);
        s.out[0]
    }

    /// Backpropagates `dlogit` through the cached forward pass; embedding
    /// gradients land in `s.d_vecs[d..]`.
    fn backward(&self, dlogit: f64, s: &mut Scratch, g: &mut Mlp) {
        let d = self.config.emb_dim;
        let nv = self.n_tables() + 1;
        self.mlp.top2.backward(&s.t1, &[dlogit], &mut g.top2, &mut s.d_t1);
        for (dt, p) in s.d_t1.iter_mut().zip(&s.t1_pre) {
            if *p <= 0.0 {
                *dt = 0.0;
            }
        }
        self.mlp.top1.backward(&s.feat, &s.d_t1, &mut g.top1, &mut s.d_feat);
        s.d_vecs.iter_mut().for_each(|v| *v = 0.0);
        s.d_vecs[..d].copy_from_slice(&s.d_feat[..d]);
        let mut k = d;
        for i in 0..nv {
            for j in (i + 1)..nv {
                let gk = s.d_feat[k];
                k += 1;
                if gk == 0.0 {
                    continue;
                }
                for c in 0..d {
                    let (vi, vj) = (s.vecs[i * d + c], s.vecs[j * d + c]);
                    s.d_vecs[i * d + c] += gk * vj;
                    s.d_vecs[j * d + c] += gk * vi;
                }
            }
        }
        let mut d_h1 = std::mem::take(&mut s.d_h1);
        self.mlp.bottom2.backward(&s.h1, &s.d_vecs[..d], &mut g.bottom2, &mut d_h1);
        for (dh, p) in d_h1.iter_mut().zip(&s.h1_pre) {
            if *p <= 0.0 {
                *dh = 0.0;
            }
        }
        self.mlp.bottom1.backward(&s.x, &d_h1, &mut g.bottom1, &mut s.d_x);
        s.d_h1 = d_h1;
    }

    pub fn logit(&self, ids: &[u32], dense: &[f32]) -> Result<f64> {
        self.check_sample(ids, dense)?;
        let mut s = self.scratch();
        Ok(self.forward(ids, dense, &mut s))
    }

    pub fn predict(&self, split: &Split) -> Result<Vec<f64>> {
        let mut s = self.scratch();
        (0..split.len())
            .map(|i| {
                self.check_sample(split.ids(i), split.dense(i))?;
                Ok(self.forward(split.ids(i), split.dense(i), &mut s))
            })
            .collect()
    }

    pub fn evaluate(&self, split: &Split, samples_seen: u64) -> Result<TrainMetrics> {
        let logits = self.predict(split)?;
        Ok(TrainMetrics {
            logloss: logloss(&logits, &split.labels),
            auc: auc(&logits, &split.labels)?,
            samples_seen,
        })
    }

    /// Mean loss and gradients over samples `range` of `split`.
    pub fn batch_gradients(
        &self,
        split: &Split,
        range: std::ops::Range<usize>,
    ) -> Result<(f64, Mlp, EmbGrads)> {
        let d = self.config.emb_dim;
        let nt = self.n_tables();
        let n = range.len();
        if n == 0 {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let mut s = self.scratch();
        let mut g = self.mlp.zeros_like();
        let mut per_table: Vec<Vec<(usize, usize)>> = vec![Vec::with_capacity(n); nt];
        let mut sample_grads = vec![0.0; n * nt * d];
        let mut loss = 0.0;
        let inv = 1.0 / n as f64;
        for (k, i) in range.enumerate() {
            let (ids, dense) = (split.ids(i), split.dense(i));
            self.check_sample(ids, dense)?;
            let z = self.forward(ids, dense, &mut s);
            let y = split.labels[i] as f64;
            loss += softplus(z) - y * z;
            self.backward((sigmoid(z) - y) * inv, &mut s, &mut g);
            for t in 0..nt {
                let off = (k * nt + t) * d;
                sample_grads[off..off + d].copy_from_slice(&s.d_vecs[(t + 1) * d..(t + 2) * d]);
                per_table[t].push((ids[t] as usize, k));
            }
        }
        let mut emb = EmbGrads {
            dim: d,
            rows: Vec::with_capacity(nt),
            grads: Vec::with_capacity(nt),
        };
        for (t, mut list) in per_table.into_iter().enumerate() {
            list.sort_unstable();
            let mut rows = Vec::new();
            let mut grads: Vec<f64> = Vec::new();
            for (row, k) in list {
                if rows.last() != Some(&row) {
                    rows.push(row);
                    grads.extend(std::iter::repeat_n(0.0, d));
                }
                let dst = grads.len() - d;
                let off = (k * nt + t) * d;
                for c in 0..d {
                    grads[dst + c] += sample_grads[off + c];
                }
            }
            emb.rows.push(rows);
            emb.grads.push(grads);
        }
        Ok((loss * inv, g, emb))
    }

    /// One SGD step on samples `range`; counts every embedding lookup.
    pub fn train_step(&mut self, split: &Split, range: std::ops::Range<usize>, step: usize) -> Result<f64> {
        for i in range.clone() {
            for (t, &id) in split.ids(i).iter().enumerate() {
                self.emb.count_access(t, id as usize)?;
            }
        }
        let (loss, g, eg) = self.batch_gradients(split, range)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { step });
        }
        self.mlp.axpy(-self.config.mlp_lr, &g);
        let d = eg.dim;
        for t in 0..self.n_tables() {
            let rows = &eg.rows[t];
            let grads = &eg.grads[t];
            let mut upd = vec![0f32; grads.len()];
            if self.config.row_adagrad {
                let table = self.emb.table_mut(t)?;
                for (k, &r) in rows.iter().enumerate() {
                    let gk = &grads[k * d..(k + 1) * d];
                    let ms = gk.iter().map(|x| x * x).sum::<f64>() / d as f64;
                    let acc = table.opt_state()[r] as f64 + ms;
                    table.opt_state_mut()[r] = acc as f32;
                    let scale = self.config.emb_lr / (acc.sqrt() + 1e-8);
                    for c in 0..d {
                        upd[k * d + c] = (-scale * gk[c]) as f32;
                    }
                }
            } else {
                for (u, g) in upd.iter_mut().zip(grads) {
                    *u = (-self.config.emb_lr * g) as f32;
                }
            }
            self.emb.apply_updates(t, rows, &upd).map_err(|e| match e {
                Error::NonFinite(_) => Error::Diverged { step },
                other => other,
            })?;
        }
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::data::{generate_dataset, DataConfig};

    fn tiny() -> (ToyModel, Split) {
        let cfg = DataConfig {
            vocab_sizes: vec![7, 5, 3],
            dense_dim: 3,
            n_train: 6,
            n_test: 4,
            ..DataConfig::default()
        };
        let data = generate_dataset(&cfg, 11).unwrap();
        let mcfg = ModelConfig {
            emb_dim: 4,
            bottom_hidden: 5,
            top_hidden: 6,
            init_scale: 0.5,
            ..ModelConfig::default()
        };
        let model = ToyModel::new(&mcfg, &cfg.vocab_sizes, 3, 2, Instrumentation::default(), 3).unwrap();
        (model, data.train)
    }

    fn loss(m: &ToyModel, split: &Split) -> f64 {
        m.batch_gradients(split, 0..split.len()).unwrap().0
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-4 * a.abs().max(b.abs()).max(1e-3)
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        let (model, split) = tiny();
        let (_, g, _) = model.batch_gradients(&split, 0..split.len()).unwrap();
        let h = 1e-6;
        for li in 0..4 {
            let n = model.mlp.layers()[li].w.len();
            for wi in (0..n).step_by(3) {
                let mut p = model.clone();
                p.mlp.layers_mut()[li].w[wi] += h;
                let mut m = model.clone();
                m.mlp.layers_mut()[li].w[wi] -= h;
                let fd = (loss(&p, &split) - loss(&m, &split)) / (2.0 * h);
                let an = g.layers()[li].w[wi];
                assert!(close(fd, an), "layer {li} w{wi}: fd {fd} vs {an}");
            }
            for bi in 0..model.mlp.layers()[li].b.len() {
                let mut p = model.clone();
                p.mlp.layers_mut()[li].b[bi] += h;
                let mut m = model.clone();
                m.mlp.layers_mut()[li].b[bi] -= h;
                let fd = (loss(&p, &split) - loss(&m, &split)) / (2.0 * h);
                assert!(close(fd, g.layers()[li].b[bi]), "layer {li} b{bi}");
            }
        }
    }

    #[test]
    fn embedding_gradients_match_finite_differences() {
        let (model, split) = tiny();
        let (_, _, eg) = model.batch_gradients(&split, 0..split.len()).unwrap();
        for t in 0..model.n_tables() {
            for (k, &row) in eg.rows[t].iter().enumerate() {
                for c in 0..eg.dim {
                    let base = model.emb.table(t).unwrap().row(row)[c];
                    let step = 1e-3f32;
                    let (hi, lo) = (base + step, base - step);
                    let mut p = model.clone();
                    p.emb.table_mut(t).unwrap().row_mut(row)[c] = hi;
                    let mut m = model.clone();
                    m.emb.table_mut(t).unwrap().row_mut(row)[c] = lo;
                    // Divide by the perturbation actually representable in f32.
                    let fd = (loss(&p, &split) - loss(&m, &split)) / (hi as f64 - lo as f64);
                    let an = eg.grads[t][k * eg.dim + c];
                    assert!(close(fd, an), "table {t} row {row} c{c}: fd {fd} vs {an}");
                }
            }
        }
    }

    #[test]
    fn same_seed_same_initialization() {
        let (a, _) = tiny();
        let (b, _) = tiny();
        assert_eq!(a.mlp, b.mlp);
        assert_eq!(a.emb.table(0).unwrap().values(), b.emb.table(0).unwrap().values());
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let (mut model, split) = tiny();
        model.config.emb_lr = 0.0;
        model.config.mlp_lr = 0.0;
        let before = model.clone();
        model.train_step(&split, 0..split.len(), 0).unwrap();
        assert_eq!(model.mlp, before.mlp);
        assert_eq!(model.emb.table(1).unwrap().values(), before.emb.table(1).unwrap().values());
    }
}
