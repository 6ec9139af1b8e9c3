//! The reconstruction network.
//!
//! Each window becomes a grid of `5·N` tokens, one per (metric, segment).
//! A token is the affine projection of its `t_e` raw points plus a learned
//! metric embedding and a learned segment embedding. Masked metrics have
//! their `T_e` content swapped for the model's fixed random series before
//! projection. Full self-attention over the grid covers both attention
//! patterns at once: tokens sharing a segment attend across metrics, and
//! tokens sharing a metric attend across segments `T_a..T_d` toward `T_e`.
//!
//! Token order inside a window is metric-major: row `i·5 + s`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::config::{AttentionScope, ModelConfig};
use super::mask::{inference_groups, MaskPlan};
use crate::data::{WindowSample, SEGMENTS};
use crate::error::{Error, Result};
use crate::numerics::{grad_check, AttentionDims, GradCheckOptions, GradCheckReport, Graph, NodeId, Tensor};

const TARGET_SEGMENT: usize = SEGMENTS - 1;

/// Rows a single inference batch may hold, in (window, mask group) sequences.
const INFERENCE_BATCH: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct GenAdModel {
    config: ModelConfig,
    mask_series: Vec<f64>,
    names: Vec<String>,
    params: Vec<Tensor>,
}

/// Token vectors of one window, `5·N × d_model`.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenGrid {
    pub tokens: Tensor,
}

/// Output of [`GenAdModel::reconstruct_all`].
#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    /// `N × t_e` reconstructed target segment.
    pub recon: Tensor,
    /// `|x − x̂|`, same shape.
    pub errors: Tensor,
}

/// Training inputs for one step: token contents, which `T_e` tokens to
/// decode, and their targets.
#[derive(Clone, Debug)]
pub struct TrainingBatch {
    contents: Tensor,
    decode_rows: Vec<usize>,
    targets: Tensor,
    sequences: usize,
}

impl TrainingBatch {
    pub fn sequences(&self) -> usize {
        self.sequences
    }
}

fn param_shapes(c: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (d, ff, n, t_e) = (c.d_model, c.ff_width(), c.n_metrics, c.t_e);
    let mut v = vec![
        ("segment_embed".to_string(), vec![SEGMENTS, d]),
        ("metric_embed".to_string(), vec![n, d]),
        ("input_proj.weight".to_string(), vec![t_e, d]),
        ("input_proj.bias".to_string(), vec![d]),
    ];
    for l in 0..c.n_layers {
        let p = |s: &str| format!("layers.{l}.{s}");
        v.extend([
            (p("attn.query"), vec![d, d]),
            (p("attn.key"), vec![d, d]),
            (p("attn.value"), vec![d, d]),
            (p("attn.out.weight"), vec![d, d]),
            (p("attn.out.bias"), vec![d]),
            (p("norm1.gain"), vec![d]),
            (p("norm1.bias"), vec![d]),
            (p("ff.in.weight"), vec![d, ff]),
            (p("ff.in.bias"), vec![ff]),
            (p("ff.out.weight"), vec![ff, d]),
            (p("ff.out.bias"), vec![d]),
            (p("norm2.gain"), vec![d]),
            (p("norm2.bias"), vec![d]),
        ]);
    }
    v.push(("head.weight".to_string(), vec![d, t_e]));
    v.push(("head.bias".to_string(), vec![t_e]));
    v
}

/// Index of each parameter in the manifest, resolved once per layout.
struct Layout {
    segment_embed: usize,
    metric_embed: usize,
    input_w: usize,
    input_b: usize,
    layers: Vec<usize>,
    head_w: usize,
    head_b: usize,
}

const PER_LAYER: usize = 13;

impl Layout {
    fn new(c: &ModelConfig) -> Self {
        let layers = (0..c.n_layers).map(|l| 4 + l * PER_LAYER).collect();
        let head_w = 4 + c.n_layers * PER_LAYER;
        Self { segment_embed: 0, metric_embed: 1, input_w: 2, input_b: 3, layers, head_w, head_b: head_w + 1 }
    }
}

fn attention_mask(c: &ModelConfig) -> Option<Vec<bool>> {
    let t = c.tokens();
    let rule: fn(usize, usize, usize, usize) -> bool = match c.attention {
        AttentionScope::Full => return None,
        AttentionScope::CrossMetricOnly => |_, si, _, sj| si == sj,
        AttentionScope::TemporalOnly => |mi, _, mj, _| mi == mj,
    };
    let mut mask = vec![false; t * t];
    for a in 0..t {
        for b in 0..t {
            mask[a * t + b] = rule(a / SEGMENTS, a % SEGMENTS, b / SEGMENTS, b % SEGMENTS);
        }
    }
    Some(mask)
}

impl GenAdModel {
    /// Fresh model: the mask series from a seeded standard normal, affine
    /// maps Glorot-uniform, embeddings `N(0, 0.02²)`, biases zero, norm gains one.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mask_series: Vec<f64> = (0..config.t_e).map(|_| StandardNormal.sample(&mut rng)).collect();
        let embed = Normal::new(0.0, 0.02).expect("valid normal");
        let mut names = Vec::new();
        let mut params = Vec::new();
        for (name, shape) in param_shapes(&config) {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = if name.ends_with("_embed") {
                (0..n).map(|_| embed.sample(&mut rng)).collect()
            } else if name.ends_with(".gain") {
                vec![1.0; n]
            } else if shape.len() == 2 {
                let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                (0..n).map(|_| rng.random_range(-limit..limit)).collect()
            } else {
                vec![0.0; n]
            };
            names.push(name);
            params.push(Tensor::new(shape, data)?);
        }
        Ok(Self { config, mask_series, names, params })
    }

    /// Reassembles a model from stored parts, checking the manifest.
    pub fn from_parts(config: ModelConfig, mask_series: Vec<f64>, named: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        if mask_series.len() != config.t_e {
            return Err(Error::shape("mask series length differs from t_e"));
        }
        let expected = param_shapes(&config);
        if expected.len() != named.len() {
            return Err(Error::shape(format!("expected {} parameters, found {}", expected.len(), named.len())));
        }
        for ((en, es), (n, t)) in expected.iter().zip(&named) {
            if en != n || es.as_slice() != t.shape() {
                return Err(Error::shape(format!("parameter {n} {:?} does not match {en} {es:?}", t.shape())));
            }
        }
        let (names, params) = named.into_iter().unzip();
        Ok(Self { config, mask_series, names, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn mask_series(&self) -> &[f64] {
        &self.mask_series
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    /// Parameter count implied by a configuration.
    pub fn parameter_count_for(config: &ModelConfig) -> usize {
        param_shapes(config).iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }

    /// Reorders metrics: row `i` of the new metric embedding is row `perm[i]` of the old.
    pub fn permute_metrics(&self, perm: &[usize]) -> Result<Self> {
        let n = self.config.n_metrics;
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::shape("not a permutation of the metrics"));
        }
        let mut out = self.clone();
        let old = &self.params[Layout::new(&self.config).metric_embed];
        let d = self.config.d_model;
        let data = perm.iter().flat_map(|&p| old.row(p).to_vec()).collect();
        out.params[Layout::new(&self.config).metric_embed] = Tensor::new(vec![n, d], data)?;
        Ok(out)
    }

    fn check_window(&self, w: &WindowSample) -> Result<()> {
        if w.n_metrics() != self.config.n_metrics || w.t_e() != self.config.t_e {
            return Err(Error::shape(format!(
                "window is {}x{} segments, model expects {} metrics with t_e {}",
                w.n_metrics(),
                w.t_e(),
                self.config.n_metrics,
                self.config.t_e
            )));
        }
        Ok(())
    }

    fn check_plan(&self, plan: &MaskPlan) -> Result<()> {
        if plan.indices().iter().any(|&i| i >= self.config.n_metrics) {
            return Err(Error::shape("mask plan refers to a metric the model does not have"));
        }
        Ok(())
    }

    /// Appends one window's `5·N × t_e` token contents, with the mask applied.
    fn push_contents(&self, w: &WindowSample, plan: &MaskPlan, out: &mut Vec<f64>) {
        for i in 0..self.config.n_metrics {
            for s in 0..SEGMENTS {
                if s == TARGET_SEGMENT && plan.contains(i) {
                    out.extend_from_slice(&self.mask_series);
                } else {
                    out.extend_from_slice(w.segment_of(i, s));
                }
            }
        }
    }

    fn leaves(&self, g: &mut Graph, trainable: bool) -> Vec<NodeId> {
        self.names
            .iter()
            .zip(&self.params)
            .map(|(n, p)| if trainable { g.parameter(n.clone(), p.clone()) } else { g.constant(p.clone()) })
            .collect()
    }

    fn embed(&self, g: &mut Graph, p: &[NodeId], contents: Tensor, sequences: usize) -> Result<NodeId> {
        let lay = Layout::new(&self.config);
        let x = g.constant(contents);
        let h = g.linear(x, p[lay.input_w], p[lay.input_b])?;
        let t = self.config.tokens();
        let metric_idx = (0..sequences * t).map(|r| (r % t) / SEGMENTS).collect();
        let seg_idx = (0..sequences * t).map(|r| r % SEGMENTS).collect();
        let me = g.gather_rows(p[lay.metric_embed], metric_idx)?;
        let se = g.gather_rows(p[lay.segment_embed], seg_idx)?;
        let h = g.add(h, me)?;
        g.add(h, se)
    }

    fn dropout(&self, g: &mut Graph, x: NodeId, rng: Option<&mut ChaCha8Rng>) -> Result<NodeId> {
        match rng {
            Some(rng) if self.config.dropout > 0.0 => {
                let keep_p = 1.0 - self.config.dropout;
                let keep: Vec<bool> = (0..g.value(x).numel()).map(|_| rng.random_bool(keep_p)).collect();
                g.dropout(x, &keep, self.config.dropout)
            }
            _ => Ok(x),
        }
    }

    fn encode(&self, g: &mut Graph, p: &[NodeId], mut h: NodeId, mut rng: Option<&mut ChaCha8Rng>) -> Result<NodeId> {
        let c = &self.config;
        let dims = AttentionDims { group: c.tokens(), heads: c.n_heads, dk: c.head_width(), dv: c.head_width() };
        let allowed = attention_mask(c);
        for &base in &Layout::new(c).layers {
            let q = g.matmul(h, p[base])?;
            let k = g.matmul(h, p[base + 1])?;
            let v = g.matmul(h, p[base + 2])?;
            let a = g.attention(q, k, v, dims, allowed.clone())?;
            let o = g.linear(a, p[base + 3], p[base + 4])?;
            let o = self.dropout(g, o, rng.as_deref_mut())?;
            let r = g.add(h, o)?;
            h = g.layer_norm(r, p[base + 5], p[base + 6])?;
            let f = g.linear(h, p[base + 7], p[base + 8])?;
            let f = g.relu(f)?;
            let f = g.linear(f, p[base + 9], p[base + 10])?;
            let f = self.dropout(g, f, rng.as_deref_mut())?;
            let r = g.add(h, f)?;
            h = g.layer_norm(r, p[base + 11], p[base + 12])?;
        }
        Ok(h)
    }

    fn decode(&self, g: &mut Graph, p: &[NodeId], h: NodeId, rows: Vec<usize>) -> Result<NodeId> {
        let lay = Layout::new(&self.config);
        let sel = g.gather_rows(h, rows)?;
        g.linear(sel, p[lay.head_w], p[lay.head_b])
    }

    /// Token grid of one window under `plan`.
    pub fn tokenize(&self, window: &WindowSample, plan: &MaskPlan) -> Result<TokenGrid> {
        self.check_window(window)?;
        self.check_plan(plan)?;
        let mut contents = Vec::with_capacity(self.config.tokens() * self.config.t_e);
        self.push_contents(window, plan, &mut contents);
        let mut g = Graph::new();
        let p = self.leaves(&mut g, false);
        let contents = Tensor::new(vec![self.config.tokens(), self.config.t_e], contents)?;
        let h = self.embed(&mut g, &p, contents, 1)?;
        Ok(TokenGrid { tokens: g.value(h).clone() })
    }

    /// Runs the layer stack and decodes every metric's `T_e` token: `N × t_e`.
    pub fn forward(&self, grid: &TokenGrid) -> Result<Tensor> {
        let c = &self.config;
        if grid.tokens.shape() != [c.tokens(), c.d_model] {
            return Err(Error::shape(format!(
                "token grid {:?}, model expects [{}, {}]",
                grid.tokens.shape(),
                c.tokens(),
                c.d_model
            )));
        }
        let mut g = Graph::new();
        let p = self.leaves(&mut g, false);
        let h = g.constant(grid.tokens.clone());
        let h = self.encode(&mut g, &p, h, None)?;
        let rows = (0..c.n_metrics).map(|i| i * SEGMENTS + TARGET_SEGMENT).collect();
        let out = self.decode(&mut g, &p, h, rows)?;
        Ok(g.value(out).clone())
    }

    /// Assembles a training batch: window `b` is masked with `plans[b]` and
    /// only its masked `T_e` tokens are decoded.
    pub fn training_batch(&self, windows: &[&WindowSample], plans: &[MaskPlan]) -> Result<TrainingBatch> {
        if windows.is_empty() || windows.len() != plans.len() {
            return Err(Error::shape("need one mask plan per window"));
        }
        let c = &self.config;
        let mut contents = Vec::with_capacity(windows.len() * c.tokens() * c.t_e);
        let mut decode_rows = Vec::new();
        let mut targets = Vec::new();
        for (b, (w, plan)) in windows.iter().zip(plans).enumerate() {
            self.check_window(w)?;
            self.check_plan(plan)?;
            if plan.is_empty() {
                return Err(Error::contract("training needs a non-empty mask plan"));
            }
            self.push_contents(w, plan, &mut contents);
            for &i in plan.indices() {
                decode_rows.push(b * c.tokens() + i * SEGMENTS + TARGET_SEGMENT);
                targets.extend_from_slice(w.segment_of(i, TARGET_SEGMENT));
            }
        }
        let sequences = windows.len();
        Ok(TrainingBatch {
            contents: Tensor::new(vec![sequences * c.tokens(), c.t_e], contents)?,
            targets: Tensor::new(vec![decode_rows.len(), c.t_e], targets)?,
            decode_rows,
            sequences,
        })
    }

    /// Records the masked log-cosh loss of a batch on `g`; returns the loss
    /// node and the parameter leaves in manifest order.
    pub fn record_loss(
        &self,
        g: &mut Graph,
        batch: &TrainingBatch,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(NodeId, Vec<NodeId>)> {
        let p = self.leaves(g, true);
        let h = self.embed(g, &p, batch.contents.clone(), batch.sequences)?;
        let h = self.encode(g, &p, h, dropout_rng)?;
        let out = self.decode(g, &p, h, batch.decode_rows.clone())?;
        let loss = g.log_cosh_loss(out, batch.targets.clone())?;
        Ok((loss, p))
    }

    /// Loss and parameter gradients (manifest order) for one batch.
    pub fn loss_and_grads(
        &self,
        batch: &TrainingBatch,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, Vec<Tensor>)> {
        let mut g = Graph::new();
        let (loss, p) = self.record_loss(&mut g, batch, dropout_rng)?;
        let mut grads = g.backward(loss)?;
        let value = g.value(loss).data()[0];
        let grads = p
            .iter()
            .zip(&self.params)
            .map(|(&id, t)| grads.take(id).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        Ok((value, grads))
    }

    /// Reconstructs every metric's `T_e` segment, masking metrics in
    /// consecutive groups of `mask_count` and reading each metric from the
    /// pass in which it was hidden.
    pub fn reconstruct_all(&self, window: &WindowSample) -> Result<Reconstruction> {
        Ok(self.reconstruct_windows(std::slice::from_ref(window))?.remove(0))
    }

    /// [`GenAdModel::reconstruct_all`] over many windows, batched.
    pub fn reconstruct_windows(&self, windows: &[WindowSample]) -> Result<Vec<Reconstruction>> {
        let c = &self.config;
        let groups = inference_groups(c.n_metrics, c.mask_count());
        let jobs: Vec<(usize, &MaskPlan)> =
            (0..windows.len()).flat_map(|w| groups.iter().map(move |p| (w, p))).collect();
        let mut recon: Vec<Vec<f64>> = vec![vec![0.0; c.n_metrics * c.t_e]; windows.len()];
        for w in windows {
            self.check_window(w)?;
        }
        for chunk in jobs.chunks(INFERENCE_BATCH) {
            let mut contents = Vec::with_capacity(chunk.len() * c.tokens() * c.t_e);
            let mut rows = Vec::new();
            for (b, (w, plan)) in chunk.iter().enumerate() {
                self.push_contents(&windows[*w], plan, &mut contents);
                rows.extend(plan.indices().iter().map(|&i| b * c.tokens() + i * SEGMENTS + TARGET_SEGMENT));
            }
            let mut g = Graph::new();
            let p = self.leaves(&mut g, false);
            let contents = Tensor::new(vec![chunk.len() * c.tokens(), c.t_e], contents)?;
            let h = self.embed(&mut g, &p, contents, chunk.len())?;
            let h = self.encode(&mut g, &p, h, None)?;
            let out = self.decode(&mut g, &p, h, rows)?;
            let out = g.value(out);
            let mut r = 0;
            for (w, plan) in chunk {
                for &i in plan.indices() {
                    recon[*w][i * c.t_e..(i + 1) * c.t_e].copy_from_slice(out.row(r));
                    r += 1;
                }
            }
        }
        windows
            .iter()
            .zip(recon)
            .map(|(w, rec)| {
                let target = w.target();
                let errors = rec.iter().zip(target.data()).map(|(a, b)| (a - b).abs()).collect();
                Ok(Reconstruction {
                    recon: Tensor::new(vec![c.n_metrics, c.t_e], rec)?,
                    errors: Tensor::new(vec![c.n_metrics, c.t_e], errors)?,
                })
            })
            .collect()
    }

    /// Mean log-cosh reconstruction loss over all metrics of `windows`.
    pub fn reconstruction_loss(&self, windows: &[WindowSample]) -> Result<f64> {
        if windows.is_empty() {
            return Err(Error::contract("reconstruction loss of no windows"));
        }
        let recs = self.reconstruct_windows(windows)?;
        let mut total = 0.0;
        for (w, r) in windows.iter().zip(&recs) {
            total += crate::numerics::log_cosh_loss(&r.recon, &w.target())?;
        }
        Ok(total / windows.len() as f64)
    }
}

/// Gradient check of the whole network: one random window, one masked
/// metric, dropout active with a fixed pattern.
pub fn gradcheck_model(
    config: &ModelConfig,
    seed: u64,
    corrupt: bool,
    opts: GradCheckOptions,
) -> Result<GradCheckReport> {
    let model = GenAdModel::new(ModelConfig { seed, ..config.clone() })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let rows: Vec<Vec<f64>> = (0..config.n_metrics)
        .map(|_| (0..config.window_len()).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let window = WindowSample::from_rows(&rows, config.t_e)?;
    let plan = super::mask::build_mask_plan(config.n_metrics, config.mask_ratio, &mut rng)?;
    let batch = model.training_batch(&[&window], &[plan])?;
    let mut g = Graph::new();
    let (loss, _) = model.record_loss(&mut g, &batch, Some(&mut rng))?;
    if corrupt {
        g.corrupt_gradients_for_testing();
    }
    grad_check(&mut g, loss, opts)
}

/// Mean log-cosh over the masked metrics' `T_e` points only.
pub fn masked_loss(recon: &Tensor, window: &WindowSample, plan: &MaskPlan) -> Result<f64> {
    if plan.is_empty() {
        return Err(Error::contract("masked loss needs a non-empty plan"));
    }
    let (n, t_e) = recon.require_rank2("masked_loss")?;
    if n != window.n_metrics() || t_e != window.t_e() {
        return Err(Error::shape("reconstruction does not match the window"));
    }
    let mut pred = Vec::with_capacity(plan.len() * t_e);
    let mut target = Vec::with_capacity(plan.len() * t_e);
    for &i in plan.indices() {
        if i >= n {
            return Err(Error::shape("mask index out of range"));
        }
        pred.extend_from_slice(recon.row(i));
        target.extend_from_slice(window.segment_of(i, TARGET_SEGMENT));
    }
    crate::numerics::log_cosh_loss(
        &Tensor::new(vec![plan.len(), t_e], pred)?,
        &Tensor::new(vec![plan.len(), t_e], target)?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn small(n: usize, seed: u64) -> ModelConfig {
        ModelConfig { t_e: 4, d_model: 8, n_heads: 2, n_layers: 2, seed, ..ModelConfig::new(n) }
    }

    fn window(n: usize, t_e: usize, seed: u64) -> WindowSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> =
            (0..n).map(|_| (0..SEGMENTS * t_e).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        WindowSample::from_rows(&rows, t_e).unwrap()
    }

    fn rows_of(w: &WindowSample) -> Vec<Vec<f64>> {
        (0..w.n_metrics()).map(|i| w.metric(i).to_vec()).collect()
    }

    fn plan(idx: &[usize], n: usize) -> MaskPlan {
        MaskPlan::new(idx.to_vec(), n).unwrap()
    }

    #[test]
    fn default_shapes() {
        let m = GenAdModel::new(ModelConfig { n_layers: 2, ..ModelConfig::new(18) }).unwrap();
        let w = window(18, 32, 1);
        let grid = m.tokenize(&w, &plan(&[0, 5, 9, 17], 18)).unwrap();
        assert_eq!(grid.tokens.shape(), &[90, 64]);
        assert_eq!(m.forward(&grid).unwrap().shape(), &[18, 32]);
        assert_eq!(m.parameter_count(), GenAdModel::parameter_count_for(m.config()));
    }

    #[test]
    fn mismatched_window_is_a_shape_error() {
        let m = GenAdModel::new(small(4, 0)).unwrap();
        assert!(matches!(m.tokenize(&window(5, 4, 0), &MaskPlan::empty()), Err(Error::Shape(_))));
        assert!(matches!(m.tokenize(&window(4, 3, 0), &MaskPlan::empty()), Err(Error::Shape(_))));
    }

    #[test]
    fn masking_changes_only_the_masked_token() {
        let m = GenAdModel::new(small(5, 2)).unwrap();
        let w = window(5, 4, 3);
        let base = m.tokenize(&w, &MaskPlan::empty()).unwrap().tokens;
        let masked = m.tokenize(&w, &plan(&[3], 5)).unwrap().tokens;
        let differing: Vec<usize> = (0..base.rows()).filter(|&r| base.row(r) != masked.row(r)).collect();
        assert_eq!(differing, vec![3 * SEGMENTS + TARGET_SEGMENT]);
    }

    #[test]
    fn untrained_loss_near_zero_baseline() {
        let m = GenAdModel::new(small(6, 4)).unwrap();
        let w = window(6, 4, 5);
        let p = plan(&[1, 4], 6);
        let recon = m.forward(&m.tokenize(&w, &p).unwrap()).unwrap();
        assert!(recon.is_finite());
        let loss = masked_loss(&recon, &w, &p).unwrap();
        let baseline = masked_loss(&Tensor::zeros(&[6, 4]), &w, &p).unwrap();
        assert!(loss < 10.0 * baseline, "{loss} vs {baseline}");
    }

    #[test]
    fn masked_loss_examples() {
        let w = window(3, 4, 6);
        let target = w.target();
        let p = plan(&[1], 3);
        assert_eq!(masked_loss(&target, &w, &p).unwrap(), 0.0);
        let mut shifted = target.clone();
        for j in 0..4 {
            shifted.data_mut()[4 + j] += 2f64.ln();
            shifted.data_mut()[j] += 7.0;
        }
        assert!((masked_loss(&shifted, &w, &p).unwrap() - 1.25f64.ln()).abs() < 1e-12);
        assert!(matches!(masked_loss(&target, &w, &MaskPlan::empty()), Err(Error::Contract(_))));
    }

    #[test]
    fn reconstruct_all_reads_each_metric_from_its_masked_pass() {
        let m = GenAdModel::new(ModelConfig { mask_ratio: 0.4, ..small(5, 7) }).unwrap();
        let w = window(5, 4, 8);
        let r = m.reconstruct_all(&w).unwrap();
        for g in inference_groups(5, 2) {
            let out = m.forward(&m.tokenize(&w, &g).unwrap()).unwrap();
            for &i in g.indices() {
                assert_eq!(r.recon.row(i), out.row(i));
            }
        }
        let t = w.target();
        for (e, (a, b)) in r.errors.data().iter().zip(r.recon.data().iter().zip(t.data())) {
            assert_eq!(*e, (a - b).abs());
        }
        let windows = vec![w.clone(), window(5, 4, 9), w];
        let batched = m.reconstruct_windows(&windows).unwrap();
        assert_eq!(batched[0], r);
        assert_eq!(batched[2], r);
    }

    #[test]
    fn batched_training_loss_matches_single_windows() {
        let m = GenAdModel::new(ModelConfig { dropout: 0.0, ..small(4, 1) }).unwrap();
        let (a, b) = (window(4, 4, 1), window(4, 4, 2));
        let (pa, pb) = (plan(&[2], 4), plan(&[0], 4));
        let batch = m.training_batch(&[&a, &b], &[pa.clone(), pb.clone()]).unwrap();
        let (loss, _) = m.loss_and_grads(&batch, None).unwrap();
        let la = masked_loss(&m.forward(&m.tokenize(&a, &pa).unwrap()).unwrap(), &a, &pa).unwrap();
        let lb = masked_loss(&m.forward(&m.tokenize(&b, &pb).unwrap()).unwrap(), &b, &pb).unwrap();
        assert!((loss - (la + lb) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn gradients_are_deterministic() {
        let m = GenAdModel::new(small(4, 3)).unwrap();
        let w = window(4, 4, 4);
        let batch = m.training_batch(&[&w], &[plan(&[1], 4)]).unwrap();
        let a = m.loss_and_grads(&batch, Some(&mut ChaCha8Rng::seed_from_u64(1))).unwrap();
        let b = m.loss_and_grads(&batch, Some(&mut ChaCha8Rng::seed_from_u64(1))).unwrap();
        assert_eq!(a, b);
        assert_eq!(GenAdModel::new(small(4, 3)).unwrap(), m);
    }

    #[test]
    fn whole_model_gradcheck() {
        for scope in [AttentionScope::Full, AttentionScope::TemporalOnly, AttentionScope::CrossMetricOnly] {
            let m = GenAdModel::new(ModelConfig { attention: scope, ..small(3, 11) }).unwrap();
            let w = window(3, 4, 12);
            let batch = m.training_batch(&[&w], &[plan(&[0], 3)]).unwrap();
            let mut g = Graph::new();
            let (loss, _) = m.record_loss(&mut g, &batch, Some(&mut ChaCha8Rng::seed_from_u64(2))).unwrap();
            let report =
                grad_check(&mut g, loss, GradCheckOptions { max_elements: 300, ..Default::default() }).unwrap();
            assert!(report.max_rel_error < 1e-4, "{scope:?}: {report:?}");
        }
    }

    #[test]
    fn from_parts_checks_manifest() {
        let m = GenAdModel::new(small(3, 0)).unwrap();
        let named: Vec<(String, Tensor)> = m.param_names().iter().cloned().zip(m.params().iter().cloned()).collect();
        let back = GenAdModel::from_parts(m.config().clone(), m.mask_series().to_vec(), named.clone()).unwrap();
        assert_eq!(back, m);
        let mut bad = named;
        bad.swap(0, 1);
        assert!(GenAdModel::from_parts(m.config().clone(), m.mask_series().to_vec(), bad).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn masked_content_is_invisible(seed in 0u64..1000, masked in 0usize..4, noise in -5.0f64..5.0) {
            let m = GenAdModel::new(small(4, seed)).unwrap();
            let w = window(4, 4, seed + 1);
            let mut rows = rows_of(&w);
            for x in &mut rows[masked][TARGET_SEGMENT * 4..] {
                *x += noise;
            }
            let w2 = WindowSample::from_rows(&rows, 4).unwrap();
            let p = plan(&[masked], 4);
            let a = m.forward(&m.tokenize(&w, &p).unwrap()).unwrap();
            let b = m.forward(&m.tokenize(&w2, &p).unwrap()).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn metric_permutation_is_equivariant(
            seed in 0u64..1000,
            perm in Just((0..5).collect::<Vec<usize>>()).prop_shuffle(),
            masked in proptest::sample::subsequence((0..5).collect::<Vec<usize>>(), 1..4),
        ) {
            let m = GenAdModel::new(small(5, seed)).unwrap();
            let w = window(5, 4, seed + 7);
            let old_rows = rows_of(&w);
            let pm = m.permute_metrics(&perm).unwrap();
            let new_rows: Vec<Vec<f64>> = perm.iter().map(|&p| old_rows[p].clone()).collect();
            let pw = WindowSample::from_rows(&new_rows, 4).unwrap();
            let new_masked: Vec<usize> = (0..5).filter(|j| masked.contains(&perm[*j])).collect();
            let out = m.forward(&m.tokenize(&w, &plan(&masked, 5)).unwrap()).unwrap();
            let pout = pm.forward(&pm.tokenize(&pw, &plan(&new_masked, 5)).unwrap()).unwrap();
            for (i, &p) in perm.iter().enumerate() {
                prop_assert_eq!(pout.row(i), out.row(p));
            }
        }
    }
}
