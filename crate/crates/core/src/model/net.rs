//! Two-branch frame-level detector: a trainable CNN branch and a seeded,
//! initially frozen embedder branch, aligned to a common frame rate,
//! concatenated, passed through a bidirectional GRU, and read out by a
//! per-frame strong head and an attention-pooled weak head.

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::align::{align_map, AlignMethod};
use crate::model::params::ParamStore;
use crate::model::tape::{SparseMap, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_bins: usize,
    pub input_frames: usize,
    pub n_classes: usize,
    /// Leading classes of the union vocabulary that belong to DESED.
    pub n_desed_classes: usize,
    pub cnn_channels: [usize; 2],
    pub cnn_dim: usize,
    pub emb_dim: usize,
    pub emb_kernel: usize,
    pub emb_stride: usize,
    pub emb_layers: usize,
    pub hidden: usize,
    pub align: AlignMethod,
    /// One extra bidirectional GRU per dataset in front of its class heads.
    pub separate_rnn: bool,
    pub input_mean: f64,
    pub input_std: f64,
    pub init_seed: u64,
    pub embedder_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_bins: 32,
            input_frames: 100,
            n_classes: 9,
            n_desed_classes: 5,
            cnn_channels: [4, 8],
            cnn_dim: 16,
            emb_dim: 16,
            emb_kernel: 10,
            emb_stride: 3,
            emb_layers: 3,
            hidden: 32,
            align: AlignMethod::NearestExact,
            separate_rnn: false,
            input_mean: 0.0,
            input_std: 1.0,
            init_seed: 0,
            embedder_seed: 1234,
        }
    }
}

impl ModelConfig {
    /// Frequency bins after the two pooling stages (2×2 then 2×1).
    pub fn cnn_bins(&self) -> usize {
        self.n_bins / 4
    }

    /// CNN frames; also the model's output frame count.
    pub fn output_frames(&self) -> usize {
        self.input_frames / 2
    }

    pub fn embedder_frames(&self) -> usize {
        (self.input_frames - self.emb_kernel) / self.emb_stride + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_bins < 4 || self.input_frames < 2 {
            return Err(Error::Config("input grid too small for the CNN".into()));
        }
        if self.input_frames < self.emb_kernel || self.emb_stride == 0 || self.emb_layers == 0 {
            return Err(Error::Config("embedder geometry invalid".into()));
        }
        if self.n_classes == 0 || self.n_desed_classes > self.n_classes || self.hidden == 0 {
            return Err(Error::Config("class or hidden sizes invalid".into()));
        }
        if !(self.input_std > 0.0) {
            return Err(Error::Config("input_std must be positive".into()));
        }
        Ok(())
    }
}

/// Optimizer parameter group of a named parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    Cnn,
    /// Recurrent layers and heads.
    Rnn,
    /// Embedder layer, `depth` counted from the output (0 = last layer).
    Embedder {
        depth: usize,
    },
}

pub fn is_embedder_param(name: &str) -> bool {
    name.starts_with("emb.")
}

struct Plan {
    conv1: Arc<SparseMap>,
    pool1: Arc<SparseMap>,
    conv2: Arc<SparseMap>,
    pool2: Arc<SparseMap>,
    permute: Arc<SparseMap>,
    unfold: Arc<SparseMap>,
    align: Arc<SparseMap>,
}

/// 3×3 same-padded patches of a `[F, T, C]` grid as `[F·T, 9·C]`.
fn im2col(bins: usize, frames: usize, ch: usize) -> SparseMap {
    let mut rows = Vec::with_capacity(bins * frames * 9 * ch);
    for f in 0..bins {
        for t in 0..frames {
            for df in 0..3 {
                for dt in 0..3 {
                    for c in 0..ch {
                        let (ff, tt) = (f as isize + df as isize - 1, t as isize + dt as isize - 1);
                        if ff < 0 || tt < 0 || ff >= bins as isize || tt >= frames as isize {
                            rows.push(vec![]);
                        } else {
                            let idx = ((ff as usize * frames) + tt as usize) * ch + c;
                            rows.push(vec![(idx, 1.0)]);
                        }
                    }
                }
            }
        }
    }
    SparseMap::from_rows(vec![bins * frames, 9 * ch], rows)
}

/// Non-overlapping average pooling of a `[F, T, C]` grid.
fn avg_pool(bins: usize, frames: usize, ch: usize, pf: usize, pt: usize) -> SparseMap {
    let (ob, of) = (bins / pf, frames / pt);
    let w = 1.0 / (pf * pt) as f64;
    let mut rows = Vec::with_capacity(ob * of * ch);
    for f in 0..ob {
        for t in 0..of {
            for c in 0..ch {
                let mut row = Vec::with_capacity(pf * pt);
                for i in 0..pf {
                    for j in 0..pt {
                        row.push((((f * pf + i) * frames + t * pt + j) * ch + c, w));
                    }
                }
                rows.push(row);
            }
        }
    }
    SparseMap::from_rows(vec![ob * of, ch], rows)
}

impl Plan {
    fn new(cfg: &ModelConfig) -> Result<Self> {
        let (f0, t0) = (cfg.n_bins, cfg.input_frames);
        let (f1, t1) = (f0 / 2, t0 / 2);
        let (f2, t2) = (f1 / 2, t1);
        let [c1, c2] = cfg.cnn_channels;
        let mut permute = Vec::with_capacity(t2 * f2 * c2);
        for t in 0..t2 {
            for f in 0..f2 {
                for c in 0..c2 {
                    permute.push(vec![((f * t2 + t) * c2 + c, 1.0)]);
                }
            }
        }
        let te = cfg.embedder_frames();
        let k = cfg.emb_kernel;
        let mut unfold = Vec::with_capacity(te * f0 * k);
        for e in 0..te {
            for f in 0..f0 {
                for j in 0..k {
                    unfold.push(vec![(f * t0 + e * cfg.emb_stride + j, 1.0)]);
                }
            }
        }
        Ok(Plan {
            conv1: Arc::new(im2col(f0, t0, 1)),
            pool1: Arc::new(avg_pool(f0, t0, c1, 2, 2)),
            conv2: Arc::new(im2col(f1, t1, c1)),
            pool2: Arc::new(avg_pool(f1, t1, c2, 2, 1)),
            permute: Arc::new(SparseMap::from_rows(vec![t2, f2 * c2], permute)),
            unfold: Arc::new(SparseMap::from_rows(vec![te, f0 * k], unfold)),
            align: Arc::new(align_map(te, t2, cfg.emb_dim, cfg.align)?),
        })
    }
}

#[derive(Clone)]
pub struct ToyModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    plan: Arc<Plan>,
}

impl std::fmt::Debug for ToyModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ToyModel")
            .field("config", &self.config)
            .field("n_params", &self.params.n_values())
            .finish()
    }
}

/// Tape handles produced by one forward pass.
pub struct ForwardOutput {
    /// `[T_out, C]`
    pub strong_logits: Var,
    /// `[1, C]`
    pub weak_logits: Var,
    pub strong: Var,
    pub weak: Var,
}

/// Tape leaves of every parameter, in [`ParamStore`] order.
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub vars: Vec<Var>,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-bound..bound)).collect(),
    )
}

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    uniform(
        rng,
        &[fan_in, fan_out],
        (6.0 / (fan_in + fan_out) as f64).sqrt(),
    )
}

fn gru_params(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, d_in: usize, h: usize) {
    for dir in ["fwd", "bwd"] {
        let bound = 1.0 / (h as f64).sqrt();
        store.insert(
            format!("{prefix}.{dir}.wx"),
            uniform(rng, &[d_in, 3 * h], bound),
        );
        store.insert(format!("{prefix}.{dir}.bx"), Tensor::zeros(&[3 * h]));
        store.insert(
            format!("{prefix}.{dir}.u"),
            uniform(rng, &[h, 3 * h], bound),
        );
        store.insert(format!("{prefix}.{dir}.bh"), Tensor::zeros(&[3 * h]));
    }
}

fn head_params(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, d_in: usize, c: usize) {
    store.insert(format!("{prefix}.strong.w"), glorot(rng, d_in, c));
    store.insert(format!("{prefix}.strong.b"), Tensor::zeros(&[c]));
    store.insert(format!("{prefix}.att.w"), glorot(rng, d_in, c));
    store.insert(format!("{prefix}.att.b"), Tensor::zeros(&[c]));
}

impl ToyModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let plan = Arc::new(Plan::new(&config)?);
        let mut model = ToyModel {
            config,
            params: ParamStore::new(),
            plan,
        };
        model.params = model.init_params();
        Ok(model)
    }

    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let template = ToyModel::new(config.clone())?;
        if !template.params.same_layout(&params) {
            return Err(Error::Shape(
                "parameter layout does not match the model config".into(),
            ));
        }
        Ok(ToyModel {
            config,
            params,
            plan: template.plan,
        })
    }

    fn init_params(&self) -> ParamStore {
        let cfg = &self.config;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        let [c1, c2] = cfg.cnn_channels;
        store.insert("cnn.conv1.w", glorot(&mut rng, 9, 2 * c1));
        store.insert("cnn.conv1.b", Tensor::zeros(&[2 * c1]));
        store.insert("cnn.conv2.w", glorot(&mut rng, 9 * c1, 2 * c2));
        store.insert("cnn.conv2.b", Tensor::zeros(&[2 * c2]));
        store.insert(
            "cnn.proj.w",
            glorot(&mut rng, cfg.cnn_bins() * c2, 2 * cfg.cnn_dim),
        );
        store.insert("cnn.proj.b", Tensor::zeros(&[2 * cfg.cnn_dim]));
        self.init_embedder(&mut store);
        let d_in = cfg.cnn_dim + cfg.emb_dim;
        let h = cfg.hidden;
        gru_params(&mut store, &mut rng, "rnn", d_in, h);
        if cfg.separate_rnn {
            let n_maestro = cfg.n_classes - cfg.n_desed_classes;
            gru_params(&mut store, &mut rng, "rnn_desed", 2 * h, h);
            gru_params(&mut store, &mut rng, "rnn_maestro", 2 * h, h);
            head_params(
                &mut store,
                &mut rng,
                "head_desed",
                2 * h,
                cfg.n_desed_classes,
            );
            head_params(&mut store, &mut rng, "head_maestro", 2 * h, n_maestro);
        } else {
            head_params(&mut store, &mut rng, "head", 2 * h, cfg.n_classes);
        }
        store
    }

    fn init_embedder(&self, store: &mut ParamStore) {
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.embedder_seed);
        let d = cfg.emb_dim;
        let patch = cfg.n_bins * cfg.emb_kernel;
        store.insert("emb.0.w", glorot(&mut rng, patch, d));
        store.insert("emb.0.b", Tensor::zeros(&[d]));
        for layer in 1..cfg.emb_layers {
            store.insert(format!("emb.{layer}.w"), glorot(&mut rng, d, d));
            store.insert(format!("emb.{layer}.b"), Tensor::zeros(&[d]));
        }
    }

    /// Re-draws every parameter outside the embedder from `seed`.
    pub fn reinit_trainable(&mut self, seed: u64) -> Result<()> {
        let mut cfg = self.config.clone();
        cfg.init_seed = seed;
        let fresh = ToyModel::new(cfg.clone())?;
        for (name, t) in fresh.params.iter() {
            if !is_embedder_param(name) {
                *self.params.get_mut(name).expect("same layout") = t.clone();
            }
        }
        self.config = cfg;
        Ok(())
    }

    pub fn param_group(&self, name: &str) -> ParamGroup {
        if let Some(rest) = name.strip_prefix("emb.") {
            let layer: usize = rest
                .split('.')
                .next()
                .and_then(|s| s.parse().ok())
                .unwrap_or(0);
            ParamGroup::Embedder {
                depth: self.config.emb_layers - 1 - layer,
            }
        } else if name.starts_with("cnn.") {
            ParamGroup::Cnn
        } else {
            ParamGroup::Rnn
        }
    }

    fn check_geometry(&self, features: &Array2<f64>) -> Result<()> {
        let (f, t) = features.dim();
        if f != self.config.n_bins || t != self.config.input_frames {
            return Err(Error::Shape(format!(
                "features are {f}×{t}, model expects {}×{}",
                self.config.n_bins, self.config.input_frames
            )));
        }
        Ok(())
    }

    /// Standardizes raw features with the configured input statistics.
    pub fn normalize(&self, features: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_geometry(features)?;
        let (m, s) = (self.config.input_mean, self.config.input_std);
        Ok(features.mapv(|v| (v - m) / s))
    }

    fn input_tensor(&self, normalized: &Array2<f64>) -> Result<Tensor> {
        self.check_geometry(normalized)?;
        let (f, t) = normalized.dim();
        Ok(Tensor::matrix(f, t, normalized.iter().copied().collect()))
    }

    fn bigru(&self, tape: &mut Tape, x: Var, prefix: &str, p: &Bound) -> Var {
        let t_len = tape.value(x).rows();
        let h = self.config.hidden;
        let mut dirs = Vec::with_capacity(2);
        for (dir, reverse) in [("fwd", false), ("bwd", true)] {
            let wx = p.get(&format!("{prefix}.{dir}.wx"));
            let bx = p.get(&format!("{prefix}.{dir}.bx"));
            let u = p.get(&format!("{prefix}.{dir}.u"));
            let bh = p.get(&format!("{prefix}.{dir}.bh"));
            let xp = tape.matmul(x, wx);
            let xp = tape.add_bias(xp, bx);
            let mut state = tape.constant(Tensor::zeros(&[1, h]));
            let mut states = vec![state; t_len];
            let order: Vec<usize> = if reverse {
                (0..t_len).rev().collect()
            } else {
                (0..t_len).collect()
            };
            for t in order {
                state = tape.gru_step(xp, t, state, u, bh);
                states[t] = state;
            }
            dirs.push(tape.stack_rows(&states));
        }
        tape.concat_cols(dirs[0], dirs[1])
    }

    fn heads(&self, tape: &mut Tape, h: Var, prefix: &str, p: &Bound) -> (Var, Var) {
        let ws = p.get(&format!("{prefix}.strong.w"));
        let bs = p.get(&format!("{prefix}.strong.b"));
        let wa = p.get(&format!("{prefix}.att.w"));
        let ba = p.get(&format!("{prefix}.att.b"));
        let s = tape.matmul(h, ws);
        let s = tape.add_bias(s, bs);
        let a = tape.matmul(h, wa);
        let a = tape.add_bias(a, ba);
        (s, a)
    }

    fn embedder(&self, tape: &mut Tape, x: Var, p: &Bound) -> Var {
        let patches = tape.sparse(x, self.plan.unfold.clone());
        let mut e = patches;
        for layer in 0..self.config.emb_layers {
            let w = p.get(&format!("emb.{layer}.w"));
            let b = p.get(&format!("emb.{layer}.b"));
            e = tape.matmul(e, w);
            e = tape.add_bias(e, b);
            e = tape.tanh(e);
        }
        e
    }

    /// Adds every parameter to the tape as a leaf. Parameters for which
    /// `trainable` returns false do not receive gradients.
    pub fn bind(&self, tape: &mut Tape, trainable: &dyn Fn(&str) -> bool) -> BoundParams {
        BoundParams {
            vars: self
                .params
                .iter()
                .map(|(name, t)| tape.leaf(t.clone(), trainable(name)))
                .collect(),
        }
    }

    /// Records the forward pass of one clip of raw features.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        features: &Array2<f64>,
    ) -> Result<ForwardOutput> {
        let normalized = self.normalize(features)?;
        self.forward_normalized(tape, bound, &normalized)
    }

    /// Records the forward pass of one clip of already standardized features.
    pub fn forward_normalized(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        normalized: &Array2<f64>,
    ) -> Result<ForwardOutput> {
        let input = self.input_tensor(normalized)?;
        let bound = Bound {
            vars: &bound.vars,
            store: &self.params,
        };
        let p = &bound;
        let x = tape.constant(input);

        // CNN branch: [F, T] -> [T_out, cnn_dim]
        let c = tape.sparse(x, self.plan.conv1.clone());
        let c = tape.matmul(c, p.get("cnn.conv1.w"));
        let c = tape.add_bias(c, p.get("cnn.conv1.b"));
        let c = tape.glu(c);
        let c = tape.sparse(c, self.plan.pool1.clone());
        let c = tape.sparse(c, self.plan.conv2.clone());
        let c = tape.matmul(c, p.get("cnn.conv2.w"));
        let c = tape.add_bias(c, p.get("cnn.conv2.b"));
        let c = tape.glu(c);
        let c = tape.sparse(c, self.plan.pool2.clone());
        let c = tape.sparse(c, self.plan.permute.clone());
        let c = tape.matmul(c, p.get("cnn.proj.w"));
        let c = tape.add_bias(c, p.get("cnn.proj.b"));
        let cnn = tape.glu(c);

        // embedder branch: [F, T] -> [T_emb, emb_dim] -> [T_out, emb_dim]
        let e = self.embedder(tape, x, p);
        let e = tape.sparse(e, self.plan.align.clone());

        let joint = tape.concat_cols(cnn, e);
        let h = self.bigru(tape, joint, "rnn", p);
        let (strong_logits, att) = if self.config.separate_rnn {
            let hd = self.bigru(tape, h, "rnn_desed", p);
            let hm = self.bigru(tape, h, "rnn_maestro", p);
            let (sd, ad) = self.heads(tape, hd, "head_desed", p);
            let (sm, am) = self.heads(tape, hm, "head_maestro", p);
            (tape.concat_cols(sd, sm), tape.concat_cols(ad, am))
        } else {
            self.heads(tape, h, "head", p)
        };
        let weak_logits = tape.attn_pool(att, strong_logits);
        let strong = tape.sigmoid(strong_logits);
        let weak = tape.sigmoid(weak_logits);
        Ok(ForwardOutput {
            strong_logits,
            weak_logits,
            strong,
            weak,
        })
    }

    /// Strong logits (`C × T_out`) and weak logits for one clip.
    pub fn infer(&self, features: &Array2<f64>) -> Result<(Array2<f64>, Vec<f64>)> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, &|_| false);
        let out = self.forward(&mut tape, &bound, features)?;
        let s = tape.value(out.strong_logits);
        let (t_len, c_len) = (s.rows(), s.cols());
        let strong = Array2::from_shape_fn((c_len, t_len), |(c, t)| s.data[t * c_len + c]);
        Ok((strong, tape.value(out.weak_logits).data.clone()))
    }

    /// Embedder activations (`T_emb × emb_dim`) before alignment.
    pub fn embedder_output(&self, features: &Array2<f64>) -> Result<Array2<f64>> {
        let input = self.input_tensor(&self.normalize(features)?)?;
        let mut tape = Tape::new();
        let vars: Vec<Var> = self
            .params
            .iter()
            .map(|(_, t)| tape.leaf(t.clone(), false))
            .collect();
        let bound = Bound {
            vars: &vars,
            store: &self.params,
        };
        let x = tape.constant(input);
        let e = self.embedder(&mut tape, x, &bound);
        let v = tape.value(e);
        Ok(Array2::from_shape_vec((v.rows(), v.cols()), v.data.clone()).expect("shape"))
    }

    /// Names of every parameter in store order.
    pub fn param_names(&self) -> &[String] {
        self.params.names()
    }

    pub fn name_index(&self) -> HashMap<String, usize> {
        self.params
            .names()
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect()
    }
}

struct Bound<'a> {
    vars: &'a [Var],
    store: &'a ParamStore,
}

impl Bound<'_> {
    fn get(&self, name: &str) -> Var {
        let i = self
            .store
            .position(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"));
        self.vars[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn features(cfg: &ModelConfig, phase: f64) -> Array2<f64> {
        Array2::from_shape_fn((cfg.n_bins, cfg.input_frames), |(f, t)| {
            ((f * 7 + t) as f64 * 0.13 + phase).sin()
        })
    }

    #[test]
    fn geometry() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.output_frames(), 50);
        assert_eq!(cfg.embedder_frames(), 31);
        let model = ToyModel::new(cfg.clone()).unwrap();
        let (strong, weak) = model.infer(&features(&cfg, 0.0)).unwrap();
        assert_eq!(strong.dim(), (9, 50));
        assert_eq!(weak.len(), 9);
        assert_eq!(
            model.embedder_output(&features(&cfg, 0.0)).unwrap().dim(),
            (31, 16)
        );
    }

    #[test]
    fn zero_heads_give_half_posteriors() {
        let cfg = ModelConfig::default();
        let mut model = ToyModel::new(cfg.clone()).unwrap();
        for name in ["head.strong.w", "head.strong.b"] {
            let t = model.params.get_mut(name).unwrap();
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, &|_| false);
        let out = model
            .forward(&mut tape, &bound, &features(&cfg, 0.3))
            .unwrap();
        assert!(tape.value(out.strong).data.iter().all(|&p| p == 0.5));
        assert!(tape.value(out.weak).data.iter().all(|&p| p == 0.5));
    }

    #[test]
    fn deterministic_forward() {
        let cfg = ModelConfig::default();
        let model = ToyModel::new(cfg.clone()).unwrap();
        let x = features(&cfg, 1.0);
        assert_eq!(model.infer(&x).unwrap(), model.infer(&x).unwrap());
    }

    #[test]
    fn geometry_mismatch_errors() {
        let model = ToyModel::new(ModelConfig::default()).unwrap();
        let bad = Array2::zeros((31, 100));
        assert!(matches!(model.infer(&bad), Err(Error::Shape(_))));
    }

    #[test]
    fn separate_rnn_and_all_align_methods_run() {
        for align in AlignMethod::ALL {
            let cfg = ModelConfig {
                align,
                separate_rnn: true,
                hidden: 8,
                ..ModelConfig::default()
            };
            let model = ToyModel::new(cfg.clone()).unwrap();
            let (strong, _) = model.infer(&features(&cfg, 0.0)).unwrap();
            assert_eq!(strong.dim(), (9, 50));
            assert!(strong.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn embedder_depth_from_output() {
        let model = ToyModel::new(ModelConfig::default()).unwrap();
        assert_eq!(
            model.param_group("emb.2.w"),
            ParamGroup::Embedder { depth: 0 }
        );
        assert_eq!(
            model.param_group("emb.0.b"),
            ParamGroup::Embedder { depth: 2 }
        );
        assert_eq!(model.param_group("cnn.conv1.w"), ParamGroup::Cnn);
        assert_eq!(model.param_group("rnn.fwd.u"), ParamGroup::Rnn);
        assert_eq!(model.param_group("head.att.b"), ParamGroup::Rnn);
    }

    #[test]
    fn reinit_keeps_embedder() {
        let mut model = ToyModel::new(ModelConfig::default()).unwrap();
        let emb = model.params.hash_filtered(is_embedder_param);
        let rest = model.params.hash_filtered(|n| !is_embedder_param(n));
        model.reinit_trainable(99).unwrap();
        assert_eq!(model.params.hash_filtered(is_embedder_param), emb);
        assert_ne!(model.params.hash_filtered(|n| !is_embedder_param(n)), rest);
    }
}
