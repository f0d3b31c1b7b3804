//! Synthetic click-through data with Zipf-distributed categorical ids and
//! labels drawn from a planted logistic model.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, Zipf};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Vocabulary size per categorical feature (one embedding table each).
    pub vocab_sizes: Vec<usize>,
    pub dense_dim: usize,
    pub zipf_s: f64,
    pub n_train: usize,
    pub n_test: usize,
    /// Scale of the planted per-id effects.
    pub effect_scale: f64,
    pub effect_dist: EffectDist,
    /// Strength of the planted pairwise interaction between features 0 and 1.
    pub interaction_scale: f64,
    /// Weight norm of the planted dense-feature term.
    pub dense_scale: f64,
    pub bias: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            vocab_sizes: vec![20_000, 20_000, 10_000, 5_000, 200, 100, 50, 20],
            dense_dim: 4,
            zipf_s: 1.05,
            n_train: 4096 * 64,
            n_test: 16_384,
            effect_scale: 1.0,
            effect_dist: EffectDist::AlternatingSign,
            interaction_scale: 0.5,
            dense_scale: 0.5,
            bias: 0.0,
        }
    }
}

/// Shape of the planted per-id effects before scaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectDist {
    /// Standard normal.
    Gaussian,
    /// Uniform random sign: every id moves the logit by the same amount.
    Sign,
    /// Fixed magnitude with signs alternating along popularity rank, so the
    /// access-weighted mean effect of each table is close to zero.
    AlternatingSign,
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_sizes.is_empty() {
            return Err(Error::InvalidInput("need at least one categorical feature".into()));
        }
        if let Some(v) = self.vocab_sizes.iter().find(|&&v| v < 2 || v > u32::MAX as usize) {
            return Err(Error::InvalidInput(format!("vocabulary size {v} must be >= 2")));
        }
        if !(self.zipf_s >= 0.0 && self.zipf_s.is_finite()) {
            return Err(Error::domain("zipf_s", self.zipf_s, "finite and >= 0"));
        }
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::InvalidInput("n_train and n_test must be >= 1".into()));
        }
        for (name, v) in [
            ("effect_scale", self.effect_scale),
            ("interaction_scale", self.interaction_scale),
            ("dense_scale", self.dense_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::domain(name, v, "finite and >= 0"));
            }
        }
        Ok(())
    }

    pub fn n_tables(&self) -> usize {
        self.vocab_sizes.len()
    }
}

/// Row-major columnar samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub n_tables: usize,
    pub dense_dim: usize,
    /// `len * n_tables` ids.
    pub ids: Vec<u32>,
    /// `len * dense_dim` values.
    pub dense: Vec<f32>,
    pub labels: Vec<u8>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn ids(&self, i: usize) -> &[u32] {
        &self.ids[i * self.n_tables..(i + 1) * self.n_tables]
    }

    pub fn dense(&self, i: usize) -> &[f32] {
        &self.dense[i * self.dense_dim..(i + 1) * self.dense_dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub vocab_sizes: Vec<usize>,
    pub train: Split,
    pub test: Split,
    /// Planted logit of every test sample, for the Bayes-optimal AUC.
    pub test_true_logits: Vec<f64>,
}

struct Planted {
    effects: Vec<Vec<f64>>,
    inter: [Vec<f64>; 2],
    dense_w: Vec<f64>,
    bias: f64,
    interaction_scale: f64,
}

impl Planted {
    fn logit(&self, ids: &[u32], dense: &[f32]) -> f64 {
        let mut z = self.bias;
        for (t, &id) in ids.iter().enumerate() {
            z += self.effects[t][id as usize];
        }
        if ids.len() >= 2 {
            z += self.interaction_scale * self.inter[0][ids[0] as usize] * self.inter[1][ids[1] as usize];
        }
        z + dense
            .iter()
            .zip(&self.dense_w)
            .map(|(x, w)| *x as f64 * w)
            .sum::<f64>()
    }
}

/// Per-table samplers: Zipf rank, then a fixed random permutation so that
/// popular ids are spread over the row space.
struct IdSampler {
    zipf: Vec<Zipf<f64>>,
    perm: Vec<Vec<u32>>,
}

impl IdSampler {
    fn new(cfg: &DataConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut zipf = Vec::new();
        let mut perm = Vec::new();
        for &v in &cfg.vocab_sizes {
            zipf.push(
                Zipf::new(v as f64, cfg.zipf_s)
                    .map_err(|e| Error::InvalidInput(format!("zipf: {e}")))?,
            );
            let mut p: Vec<u32> = (0..v as u32).collect();
            p.shuffle(rng);
            perm.push(p);
        }
        Ok(IdSampler { zipf, perm })
    }

    fn sample(&self, t: usize, rng: &mut impl Rng) -> u32 {
        let k = self.zipf[t].sample(rng) as usize;
        self.perm[t][k - 1]
    }
}

fn draw_split(
    n: usize,
    cfg: &DataConfig,
    ids: &IdSampler,
    planted: &Planted,
    rng: &mut impl Rng,
) -> (Split, Vec<f64>) {
    let nt = cfg.n_tables();
    let mut split = Split {
        n_tables: nt,
        dense_dim: cfg.dense_dim,
        ids: Vec::with_capacity(n * nt),
        dense: Vec::with_capacity(n * cfg.dense_dim),
        labels: Vec::with_capacity(n),
    };
    let mut logits = Vec::with_capacity(n);
    let normal = Normal::new(0.0f32, 1.0).expect("unit normal");
    for i in 0..n {
        for t in 0..nt {
            split.ids.push(ids.sample(t, rng));
        }
        for _ in 0..cfg.dense_dim {
            split.dense.push(normal.sample(rng));
        }
        let z = planted.logit(split.ids(i), split.dense(i));
        let p = 1.0 / (1.0 + (-z).exp());
        split.labels.push(u8::from(rng.random::<f64>() < p));
        logits.push(z);
    }
    (split, logits)
}

pub fn generate_dataset(cfg: &DataConfig, seed: u64) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let mut rng = rng_from_seed(derive_seed(seed, stream::DATASET, 0));
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let ids = IdSampler::new(cfg, &mut rng)?;
    let effects = cfg
        .vocab_sizes
        .iter()
        .enumerate()
        .map(|(t, &v)| {
            let first = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let mut e = vec![0.0; v];
            for (rank, &id) in ids.perm[t].iter().enumerate() {
                e[id as usize] = cfg.effect_scale
                    * match cfg.effect_dist {
                        EffectDist::Gaussian => std.sample(&mut rng),
                        EffectDist::Sign if rng.random::<bool>() => 1.0,
                        EffectDist::Sign => -1.0,
                        EffectDist::AlternatingSign if rank % 2 == 0 => first,
                        EffectDist::AlternatingSign => -first,
                    };
            }
            e
        })
        .collect();
    let v0 = cfg.vocab_sizes[0];
    let v1 = cfg.vocab_sizes.get(1).copied().unwrap_or(1);
    let inter = [
        (0..v0).map(|_| std.sample(&mut rng)).collect(),
        (0..v1).map(|_| std.sample(&mut rng)).collect(),
    ];
    let dense_w: Vec<f64> = (0..cfg.dense_dim)
        .map(|_| cfg.dense_scale * std.sample(&mut rng) / (cfg.dense_dim as f64).sqrt().max(1.0))
        .collect();
    let planted = Planted {
        effects,
        inter,
        dense_w,
        bias: cfg.bias,
        interaction_scale: cfg.interaction_scale,
    };
    let (train, _) = draw_split(cfg.n_train, cfg, &ids, &planted, &mut rng);
    let (test, test_true_logits) = draw_split(cfg.n_test, cfg, &ids, &planted, &mut rng);
    Ok(SyntheticDataset {
        vocab_sizes: cfg.vocab_sizes.clone(),
        train,
        test,
        test_true_logits,
    })
}

/// Share of Zipf(s) draws over `n` ranks that land in the top `k` ranks.
pub fn zipf_top_mass(n: usize, s: f64, k: usize) -> f64 {
    let w = |r: usize| (r as f64).powf(-s);
    let top: f64 = (1..=k.min(n)).map(w).sum();
    let all: f64 = (1..=n).map(w).sum();
    top / all
}

const DATA_MAGIC: [u8; 4] = *b"CPRD";
const DATA_VERSION: u16 = 1;

fn write_split<W: Write>(w: &mut W, s: &Split) -> Result<()> {
    w.write_all(&(s.len() as u64).to_le_bytes())?;
    for i in 0..s.len() {
        for id in s.ids(i) {
            w.write_all(&id.to_le_bytes())?;
        }
        for x in s.dense(i) {
            w.write_all(&x.to_le_bytes())?;
        }
        w.write_all(&[s.labels[i]])?;
    }
    Ok(())
}

fn read_exact<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)
        .map_err(|e| Error::Format(format!("dataset truncated: {e}")))?;
    Ok(b)
}

fn read_split<R: Read>(r: &mut R, n_tables: usize, dense_dim: usize) -> Result<Split> {
    let n = u64::from_le_bytes(read_exact(r)?) as usize;
    let mut s = Split {
        n_tables,
        dense_dim,
        ids: Vec::with_capacity(n * n_tables),
        dense: Vec::with_capacity(n * dense_dim),
        labels: Vec::with_capacity(n),
    };
    for _ in 0..n {
        for _ in 0..n_tables {
            s.ids.push(u32::from_le_bytes(read_exact(r)?));
        }
        for _ in 0..dense_dim {
            s.dense.push(f32::from_le_bytes(read_exact(r)?));
        }
        let [label] = read_exact::<1, _>(r)?;
        if label > 1 {
            return Err(Error::Format(format!("label {label} is not 0 or 1")));
        }
        s.labels.push(label);
    }
    Ok(s)
}

impl SyntheticDataset {
    /// Columnar binary export: header (magic, version, table count, dense
    /// dim, vocab sizes), then train and test record blocks of fixed-width
    /// little-endian records (ids as u32, dense as f32, label as u8).
    /// Planted logits are not exported.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&DATA_MAGIC)?;
        w.write_all(&DATA_VERSION.to_le_bytes())?;
        w.write_all(&(self.train.n_tables as u32).to_le_bytes())?;
        w.write_all(&(self.train.dense_dim as u32).to_le_bytes())?;
        for &v in &self.vocab_sizes {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        write_split(&mut w, &self.train)?;
        write_split(&mut w, &self.test)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<SyntheticDataset> {
        if read_exact::<4, _>(&mut r)? != DATA_MAGIC {
            return Err(Error::Format("not a dataset file".into()));
        }
        let version = u16::from_le_bytes(read_exact(&mut r)?);
        if version != DATA_VERSION {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        let nt = u32::from_le_bytes(read_exact(&mut r)?) as usize;
        let dd = u32::from_le_bytes(read_exact(&mut r)?) as usize;
        let vocab_sizes: Vec<usize> = (0..nt)
            .map(|_| read_exact(&mut r).map(|b| u64::from_le_bytes(b) as usize))
            .collect::<Result<_>>()?;
        let train = read_split(&mut r, nt, dd)?;
        let test = read_split(&mut r, nt, dd)?;
        for split in [&train, &test] {
            for (i, &id) in split.ids.iter().enumerate() {
                if id as usize >= vocab_sizes[i % nt] {
                    return Err(Error::Format(format!("id {id} exceeds its vocabulary")));
                }
            }
        }
        Ok(SyntheticDataset {
            vocab_sizes,
            train,
            test,
            test_true_logits: Vec::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(s: f64) -> DataConfig {
        DataConfig {
            vocab_sizes: vec![50, 10],
            n_train: 20_000,
            n_test: 500,
            zipf_s: s,
            ..DataConfig::default()
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = generate_dataset(&small(1.05), 3).unwrap();
        let b = generate_dataset(&small(1.05), 3).unwrap();
        let (mut x, mut y) = (Vec::new(), Vec::new());
        a.write_to(&mut x).unwrap();
        b.write_to(&mut y).unwrap();
        assert_eq!(x, y);
        let c = generate_dataset(&small(1.05), 4).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn export_round_trip() {
        let a = generate_dataset(&small(1.05), 3).unwrap();
        let mut buf = Vec::new();
        a.write_to(&mut buf).unwrap();
        let b = SyntheticDataset::read_from(&buf[..]).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        assert!(SyntheticDataset::read_from(&buf[..buf.len() - 1]).is_err());
    }

    #[test]
    fn zero_exponent_is_uniform() {
        let d = generate_dataset(&small(0.0), 1).unwrap();
        let mut counts = [0usize; 50];
        for i in 0..d.train.len() {
            counts[d.train.ids(i)[0] as usize] += 1;
        }
        // 400 expected per id; 5 sigma is 100.
        assert!(counts.iter().all(|&c| (300..=500).contains(&c)), "{counts:?}");
    }

    #[test]
    fn top_percent_mass_at_default_skew() {
        let exact = zipf_top_mass(10_000, 1.05, 100);
        assert!(exact >= 0.30, "{exact}");
        let cfg = DataConfig {
            vocab_sizes: vec![10_000],
            n_train: 100_000,
            n_test: 1,
            ..DataConfig::default()
        };
        let d = generate_dataset(&cfg, 2).unwrap();
        let mut counts = vec![0usize; 10_000];
        for &id in &d.train.ids {
            counts[id as usize] += 1;
        }
        counts.sort_unstable_by(|a, b| b.cmp(a));
        let top: usize = counts[..100].iter().sum();
        let empirical = top as f64 / 100_000.0;
        assert!((empirical - exact).abs() < 0.02, "{empirical} vs {exact}");
    }

    #[test]
    fn labels_are_binary_and_informative() {
        let d = generate_dataset(&small(1.05), 5).unwrap();
        assert!(d.train.labels.iter().all(|&l| l <= 1));
        let auc = super::super::metrics::auc(&d.test_true_logits, &d.test.labels).unwrap();
        assert!(auc > 0.6, "{auc}");
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(generate_dataset(&small(-1.0), 0).is_err());
        let mut c = small(1.0);
        c.vocab_sizes = vec![1];
        assert!(generate_dataset(&c, 0).is_err());
        c.vocab_sizes = vec![];
        assert!(generate_dataset(&c, 0).is_err());
    }
}
