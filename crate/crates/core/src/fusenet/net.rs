use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::loss::{cov_from_raw, raw_nll, sigmoid, COV_ORIGIN_STD, DEFAULT_UNMATCHED_PENALTY};
use super::tape::{Mat, Tape, Var};
use crate::dataprep::{InputSequence, Normalizer};
use crate::error::{Error, Result};
use crate::linalg::State;
use crate::mb::{BernoulliComponent, FusionOutput};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub model_dim: usize,
    pub input_dim: usize,
    /// Largest absolute time step the time table can encode.
    pub max_time: usize,
    /// Largest 1-based position inside a trajectory.
    pub max_traj_index: usize,
    pub num_sensors: usize,
}

impl EmbeddingConfig {
    pub fn new(input_dim: usize, horizon: usize, num_sensors: usize) -> Self {
        EmbeddingConfig {
            model_dim: 256,
            input_dim,
            max_time: horizon,
            max_traj_index: horizon,
            num_sensors,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub attention_heads: usize,
    pub ffn_dim: usize,
    pub num_queries: usize,
    pub dropout: f64,
    pub unmatched_penalty: f64,
    pub cov_origin_std: f64,
    /// Weight of the encoder-side auxiliary loss that trains the query scores.
    pub selection_loss_weight: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            encoder_layers: 2,
            decoder_layers: 2,
            attention_heads: 4,
            ffn_dim: 512,
            num_queries: 16,
            dropout: 0.0,
            unmatched_penalty: DEFAULT_UNMATCHED_PENALTY,
            cov_origin_std: COV_ORIGIN_STD,
            selection_loss_weight: 1.0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self, emb: &EmbeddingConfig) -> Result<()> {
        let positive = [
            ("encoder_layers", self.encoder_layers),
            ("decoder_layers", self.decoder_layers),
            ("attention_heads", self.attention_heads),
            ("ffn_dim", self.ffn_dim),
            ("num_queries", self.num_queries),
            ("model_dim", emb.model_dim),
            ("input_dim", emb.input_dim),
            ("max_time", emb.max_time),
            ("max_traj_index", emb.max_traj_index),
            ("num_sensors", emb.num_sensors),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !emb.model_dim.is_multiple_of(self.attention_heads) {
            return Err(Error::Config(format!(
                "model_dim {} not divisible by {} heads",
                emb.model_dim, self.attention_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must be in [0, 1)".into()));
        }
        if !(self.cov_origin_std > 0.0) {
            return Err(Error::Config("cov_origin_std must be positive".into()));
        }
        Ok(())
    }
}

/// Named parameter matrices in registration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
}

impl ParamStore {
    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> usize {
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Mat] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Mat] {
        &mut self.values
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.index_of(name).map(|i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Mat> {
        self.index_of(name).map(|i| &mut self.values[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }
}

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    g: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

#[derive(Debug, Clone, Copy)]
struct EncoderLayer {
    ln_attn: Norm,
    attn: Attention,
    ln_ffn: Norm,
    ff1: Linear,
    ff2: Linear,
}

#[derive(Debug, Clone, Copy)]
struct DecoderLayer {
    ln_self: Norm,
    self_attn: Attention,
    ln_cross: Norm,
    cross_attn: Attention,
    ln_ffn: Norm,
    ff1: Linear,
    ff2: Linear,
    reference: Linear,
    delta: Linear,
}

struct Init<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl Init<'_> {
    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, gain: f64) -> Linear {
        let bound = gain * (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = Mat::from_shape_fn((fan_in, fan_out), |_| self.rng.random_range(-bound..=bound));
        Linear {
            w: self.store.add(format!("{name}.weight"), w),
            b: self.store.add(format!("{name}.bias"), Mat::zeros((1, fan_out))),
        }
    }

    fn norm(&mut self, name: &str, dim: usize) -> Norm {
        Norm {
            g: self.store.add(format!("{name}.gamma"), Mat::ones((1, dim))),
            b: self.store.add(format!("{name}.beta"), Mat::zeros((1, dim))),
        }
    }

    fn table(&mut self, name: &str, rows: usize, dim: usize) -> usize {
        let t = Mat::from_shape_fn((rows, dim), |_| {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            0.02 * z
        });
        self.store.add(name, t)
    }

    fn attention(&mut self, name: &str, d: usize) -> Attention {
        Attention {
            q: self.linear(&format!("{name}.q"), d, d, 1.0),
            k: self.linear(&format!("{name}.k"), d, d, 1.0),
            v: self.linear(&format!("{name}.v"), d, d, 1.0),
            o: self.linear(&format!("{name}.o"), d, d, 1.0),
        }
    }
}

/// Per-layer prediction heads in normalised coordinates.
#[derive(Debug, Clone, Copy)]
pub struct HeadOutput {
    /// `k x 1` existence logits.
    pub logits: Var,
    /// `k x 4` state means.
    pub mean: Var,
    /// `k x 10` raw covariance-factor outputs.
    pub raw_cov: Var,
}

/// Cross-attention weights, `layers[layer][query][position]`, averaged over
/// heads.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttentionRecord {
    pub layers: Vec<Vec<Vec<f64>>>,
}

/// Everything produced by one forward pass, still attached to its tape.
pub struct Forward {
    pub tape: Tape,
    pub params: Vec<Var>,
    pub encoded: Var,
    /// Encoder-side prediction, one component per input token.
    pub selection: HeadOutput,
    pub selected: Vec<usize>,
    /// `k x 4` refinement start: selected positions with zero velocity.
    pub initial: Mat,
    pub layers: Vec<HeadOutput>,
    /// `deltas[l]` is the `k x 4` offset emitted by decoder layer `l`.
    pub deltas: Vec<Mat>,
    pub attention: AttentionRecord,
}

impl Forward {
    pub fn final_head(&self) -> &HeadOutput {
        self.layers.last().expect("at least one decoder layer")
    }
}

/// Indices of the `k` highest scores, ties broken toward the lower index.
/// When `k` exceeds the number of scores the ranking is repeated.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    if scores.is_empty() {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    (0..k).map(|i| order[i % order.len()]).collect()
}

#[derive(Debug, Clone)]
pub struct FusionNet {
    pub emb: EmbeddingConfig,
    pub cfg: NetConfig,
    pub params: ParamStore,
    embed: Linear,
    time_table: usize,
    traj_table: usize,
    sensor_table: usize,
    encoder: Vec<EncoderLayer>,
    ln_select: Norm,
    score: Linear,
    select_delta: Linear,
    select_cov: Linear,
    query: Linear,
    ln_memory: Norm,
    decoder: Vec<DecoderLayer>,
    ln_out: Norm,
    existence: Linear,
    cov: Linear,
}

impl FusionNet {
    pub fn new(emb: EmbeddingConfig, cfg: NetConfig, seed: u64) -> Result<Self> {
        cfg.validate(&emb)?;
        let d = emb.model_dim;
        let mut store = ParamStore::default();
        let mut init = Init {
            store: &mut store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let embed = init.linear("embed", emb.input_dim, d, 1.0);
        let time_table = init.table("pos.time", emb.max_time + 1, d);
        let traj_table = init.table("pos.trajectory", emb.max_traj_index + 1, d);
        let sensor_table = init.table("pos.sensor", emb.num_sensors, d);
        let encoder = (0..cfg.encoder_layers)
            .map(|l| {
                let p = format!("encoder.{l}");
                EncoderLayer {
                    ln_attn: init.norm(&format!("{p}.ln_attn"), d),
                    attn: init.attention(&format!("{p}.attn"), d),
                    ln_ffn: init.norm(&format!("{p}.ln_ffn"), d),
                    ff1: init.linear(&format!("{p}.ff1"), d, cfg.ffn_dim, 1.0),
                    ff2: init.linear(&format!("{p}.ff2"), cfg.ffn_dim, d, 1.0),
                }
            })
            .collect();
        let ln_select = init.norm("select.ln", d);
        let score = init.linear("select.score", d, 1, 1.0);
        let select_delta = init.linear("select.delta", d, 4, 0.01);
        let select_cov = init.linear("select.cov", d, 10, 0.01);
        let query = init.linear("select.query", d, d, 1.0);
        let ln_memory = init.norm("decoder.ln_memory", d);
        let decoder = (0..cfg.decoder_layers)
            .map(|l| {
                let p = format!("decoder.{l}");
                DecoderLayer {
                    ln_self: init.norm(&format!("{p}.ln_self"), d),
                    self_attn: init.attention(&format!("{p}.self_attn"), d),
                    ln_cross: init.norm(&format!("{p}.ln_cross"), d),
                    cross_attn: init.attention(&format!("{p}.cross_attn"), d),
                    ln_ffn: init.norm(&format!("{p}.ln_ffn"), d),
                    ff1: init.linear(&format!("{p}.ff1"), d, cfg.ffn_dim, 1.0),
                    ff2: init.linear(&format!("{p}.ff2"), cfg.ffn_dim, d, 1.0),
                    reference: init.linear(&format!("{p}.reference"), 4, d, 1.0),
                    delta: init.linear(&format!("{p}.delta"), d, 4, 0.01),
                }
            })
            .collect();
        let ln_out = init.norm("head.ln", d);
        let existence = init.linear("head.existence", d, 1, 1.0);
        let cov = init.linear("head.cov", d, 10, 0.01);
        Ok(FusionNet {
            emb,
            cfg,
            params: store,
            embed,
            time_table,
            traj_table,
            sensor_table,
            encoder,
            ln_select,
            score,
            select_delta,
            select_cov,
            query,
            ln_memory,
            decoder,
            ln_out,
            existence,
            cov,
        })
    }

    /// Same architecture with parameters taken from `params`, which must match
    /// names and shapes of a freshly built network.
    pub fn with_params(emb: EmbeddingConfig, cfg: NetConfig, params: ParamStore) -> Result<Self> {
        let mut net = Self::new(emb, cfg, 0)?;
        if net.params.names() != params.names() {
            return Err(Error::Format {
                what: "parameters",
                detail: "parameter names do not match the configured architecture".into(),
            });
        }
        for ((name, have), want) in params.names().iter().zip(params.values()).zip(net.params.values()) {
            if have.dim() != want.dim() {
                return Err(Error::Format {
                    what: "parameters",
                    detail: format!("{name} has shape {:?}, expected {:?}", have.dim(), want.dim()),
                });
            }
        }
        net.params = params;
        Ok(net)
    }

    fn linear(&self, t: &mut Tape, p: &[Var], l: Linear, x: Var) -> Var {
        let y = t.matmul(x, p[l.w]);
        t.add_row(y, p[l.b])
    }

    fn norm(&self, t: &mut Tape, p: &[Var], n: Norm, x: Var) -> Var {
        t.layer_norm(x, p[n.g], p[n.b])
    }

    fn dropout(&self, t: &mut Tape, x: Var, rng: &mut Option<&mut ChaCha8Rng>) -> Var {
        let p = self.cfg.dropout;
        match rng {
            Some(rng) if p > 0.0 => {
                let keep = 1.0 / (1.0 - p);
                let mask = Mat::from_shape_fn(
                    t.value(x).raw_dim(),
                    |_| if rng.random::<f64>() < p { 0.0 } else { keep },
                );
                let m = t.constant(mask);
                t.mul(x, m)
            }
            _ => x,
        }
    }

    /// Multi-head attention; also returns the head-averaged weight matrix.
    fn attention(&self, t: &mut Tape, p: &[Var], a: Attention, query: Var, key: Var, value: Var) -> (Var, Mat) {
        let d = self.emb.model_dim;
        let h = self.cfg.attention_heads;
        let dh = d / h;
        let q = self.linear(t, p, a.q, query);
        let k = self.linear(t, p, a.k, key);
        let v = self.linear(t, p, a.v, value);
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(h);
        let mut avg = Mat::zeros((t.value(q).nrows(), t.value(k).nrows()));
        for i in 0..h {
            let qh = t.slice_cols(q, i * dh, dh);
            let kh = t.slice_cols(k, i * dh, dh);
            let vh = t.slice_cols(v, i * dh, dh);
            let s = t.matmul_t(qh, kh);
            let s = t.scale(s, scale);
            let w = t.softmax_rows(s);
            avg += t.value(w);
            heads.push(t.matmul(w, vh));
        }
        avg /= h as f64;
        let cat = if h == 1 { heads[0] } else { t.concat_cols(&heads) };
        (self.linear(t, p, a.o, cat), avg)
    }

    fn ffn(&self, t: &mut Tape, p: &[Var], ff1: Linear, ff2: Linear, x: Var) -> Var {
        let hidden = self.linear(t, p, ff1, x);
        let act = t.gelu(hidden);
        self.linear(t, p, ff2, act)
    }

    fn bind(&self, t: &mut Tape) -> Vec<Var> {
        self.params
            .values()
            .iter()
            .enumerate()
            .map(|(i, v)| t.param(i, v.clone()))
            .collect()
    }

    fn check_indices(&self, seq: &InputSequence) -> Result<()> {
        if seq.dim != self.emb.input_dim {
            return Err(Error::InvalidArgument(format!(
                "sequence dimension {} does not match network input {}",
                seq.dim, self.emb.input_dim
            )));
        }
        for (k, v) in seq.vectors.iter().enumerate() {
            if v.time > self.emb.max_time || v.traj_index > self.emb.max_traj_index || v.sensor >= self.emb.num_sensors
            {
                return Err(Error::InvalidArgument(format!(
                    "vector {k} index (t={}, j={}, s={}) outside embedding tables",
                    v.time, v.traj_index, v.sensor
                )));
            }
        }
        Ok(())
    }

    /// Linear embedding plus time, trajectory-position and sensor encodings.
    pub fn embed(&self, t: &mut Tape, p: &[Var], seq: &InputSequence) -> Result<Var> {
        self.check_indices(seq)?;
        let l = seq.len();
        let u = Mat::from_shape_fn((l, seq.dim), |(r, c)| seq.vectors[r].values[c]);
        let u = t.constant(u);
        let base = self.linear(t, p, self.embed, u);
        let times: Vec<usize> = seq.vectors.iter().map(|v| v.time).collect();
        let trajs: Vec<usize> = seq.vectors.iter().map(|v| v.traj_index).collect();
        let sensors: Vec<usize> = seq.vectors.iter().map(|v| v.sensor).collect();
        let tt = t.gather_rows(p[self.time_table], &times);
        let tj = t.gather_rows(p[self.traj_table], &trajs);
        let ts = t.gather_rows(p[self.sensor_table], &sensors);
        let x = t.add(base, tt);
        let x = t.add(x, tj);
        Ok(t.add(x, ts))
    }

    pub fn encode(&self, t: &mut Tape, p: &[Var], x: Var, mut rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
        if t.value(x).nrows() == 0 {
            return Err(Error::InvalidArgument("cannot encode an empty sequence".into()));
        }
        let mut x = x;
        for layer in &self.encoder {
            let h = self.norm(t, p, layer.ln_attn, x);
            let (a, _) = self.attention(t, p, layer.attn, h, h, h);
            let a = self.dropout(t, a, &mut rng);
            x = t.add(x, a);
            let h = self.norm(t, p, layer.ln_ffn, x);
            let f = self.ffn(t, p, layer.ff1, layer.ff2, h);
            let f = self.dropout(t, f, &mut rng);
            x = t.add(x, f);
        }
        Ok(x)
    }

    /// Scores every encoder output, keeps the top `k`, and returns the
    /// encoder-side prediction head, the selected indices, the initial states
    /// and the object queries.
    pub fn select_queries(
        &self,
        t: &mut Tape,
        p: &[Var],
        encoded: Var,
        seq: &InputSequence,
    ) -> (HeadOutput, Vec<usize>, Mat, Var) {
        let h = self.norm(t, p, self.ln_select, encoded);
        let logits = self.linear(t, p, self.score, h);
        let tokens = t.constant(Mat::from_shape_fn((seq.len(), 4), |(r, c)| seq.vectors[r].values[c]));
        let delta = self.linear(t, p, self.select_delta, h);
        let mean = t.add(tokens, delta);
        let raw_cov = self.linear(t, p, self.select_cov, h);
        let scores: Vec<f64> = t.value(logits).iter().copied().collect();
        let selected = top_k(&scores, self.cfg.num_queries);
        let initial = Mat::from_shape_fn((selected.len(), 4), |(r, c)| {
            if c < 2 {
                seq.vectors[selected[r]].values[c]
            } else {
                0.0
            }
        });
        let picked = t.gather_rows(h, &selected);
        let queries = self.linear(t, p, self.query, picked);
        (HeadOutput { logits, mean, raw_cov }, selected, initial, queries)
    }

    fn heads(&self, t: &mut Tape, p: &[Var], o: Var, mean: Var) -> HeadOutput {
        let h = self.norm(t, p, self.ln_out, o);
        HeadOutput {
            logits: self.linear(t, p, self.existence, h),
            mean,
            raw_cov: self.linear(t, p, self.cov, h),
        }
    }

    /// Decoder with iterative refinement of the running state estimate.
    pub fn decode(
        &self,
        t: &mut Tape,
        p: &[Var],
        encoded: Var,
        initial: &Mat,
        queries: Var,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> (Vec<HeadOutput>, Vec<Mat>, AttentionRecord) {
        let memory = self.norm(t, p, self.ln_memory, encoded);
        let mut o = queries;
        let mut state = t.constant(initial.clone());
        let mut outputs = Vec::with_capacity(self.decoder.len());
        let mut deltas = Vec::with_capacity(self.decoder.len());
        let mut record = AttentionRecord::default();
        for layer in &self.decoder {
            let qpos = self.linear(t, p, layer.reference, state);

            let h = self.norm(t, p, layer.ln_self, o);
            let hq = t.add(h, qpos);
            let (a, _) = self.attention(t, p, layer.self_attn, hq, hq, h);
            let a = self.dropout(t, a, &mut rng);
            o = t.add(o, a);

            let h = self.norm(t, p, layer.ln_cross, o);
            let hq = t.add(h, qpos);
            let (a, weights) = self.attention(t, p, layer.cross_attn, hq, memory, memory);
            let a = self.dropout(t, a, &mut rng);
            o = t.add(o, a);
            record
                .layers
                .push(weights.rows().into_iter().map(|r| r.to_vec()).collect());

            let h = self.norm(t, p, layer.ln_ffn, o);
            let f = self.ffn(t, p, layer.ff1, layer.ff2, h);
            let f = self.dropout(t, f, &mut rng);
            o = t.add(o, f);

            let hd = self.norm(t, p, self.ln_out, o);
            let delta = self.linear(t, p, layer.delta, hd);
            deltas.push(t.value(delta).clone());
            state = t.add(state, delta);
            outputs.push(self.heads(t, p, o, state));
        }
        (outputs, deltas, record)
    }

    /// Full forward pass on a normalised, nonempty sequence. Passing `rng`
    /// enables dropout.
    pub fn forward(&self, seq: &InputSequence, mut rng: Option<&mut ChaCha8Rng>) -> Result<Forward> {
        if seq.is_empty() {
            return Err(Error::InvalidArgument("empty input sequence".into()));
        }
        let mut t = Tape::new();
        let p = self.bind(&mut t);
        let x = self.embed(&mut t, &p, seq)?;
        let encoded = self.encode(&mut t, &p, x, rng.as_deref_mut())?;
        let (selection, selected, initial, queries) = self.select_queries(&mut t, &p, encoded, seq);
        let (layers, deltas, attention) = self.decode(&mut t, &p, encoded, &initial, queries, rng);
        Ok(Forward {
            tape: t,
            params: p,
            encoded,
            selection,
            selected,
            initial,
            layers,
            deltas,
            attention,
        })
    }

    fn head_loss(&self, t: &mut Tape, head: &HeadOutput, truth: &[State]) -> Var {
        let nll = raw_nll(
            t.value(head.logits),
            t.value(head.mean),
            t.value(head.raw_cov),
            truth,
            self.cfg.unmatched_penalty,
            self.cfg.cov_origin_std,
        );
        t.scalar(
            nll.loss,
            vec![head.logits, head.mean, head.raw_cov],
            vec![nll.grad_logits, nll.grad_mean, nll.grad_raw],
        )
    }

    /// Training objective: MB NLL of every decoder layer plus the weighted
    /// encoder-side selection loss, all in normalised coordinates.
    pub fn loss(&self, fwd: &mut Forward, truth: &[State]) -> Var {
        let mut total = self.head_loss(&mut fwd.tape, &fwd.layers[0], truth);
        for head in &fwd.layers[1..] {
            let l = self.head_loss(&mut fwd.tape, head, truth);
            total = fwd.tape.add(total, l);
        }
        if self.cfg.selection_loss_weight > 0.0 {
            let sel = fwd.selection;
            let l = self.head_loss(&mut fwd.tape, &sel, truth);
            let l = fwd.tape.scale(l, self.cfg.selection_loss_weight);
            total = fwd.tape.add(total, l);
        }
        total
    }

    /// Loss and parameter gradients for one record. Parameters that do not
    /// reach the loss get zero gradients.
    pub fn loss_and_grad(
        &self,
        seq: &InputSequence,
        truth: &[State],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, Vec<Mat>)> {
        let mut fwd = self.forward(seq, rng)?;
        let total = self.loss(&mut fwd, truth);
        let value = fwd.tape.value(total)[(0, 0)];
        let grads = fwd
            .tape
            .backward(total, self.params.len())
            .into_iter()
            .zip(self.params.values())
            .map(|(g, v)| g.unwrap_or_else(|| Mat::zeros(v.raw_dim())))
            .collect();
        Ok((value, grads))
    }

    /// Final-layer MB density in normalised coordinates.
    pub fn output_normalized(&self, fwd: &Forward) -> FusionOutput {
        let head = fwd.final_head();
        let t = &fwd.tape;
        let (lg, mu, raw) = (t.value(head.logits), t.value(head.mean), t.value(head.raw_cov));
        FusionOutput {
            components: (0..lg.nrows())
                .map(|i| BernoulliComponent {
                    existence: sigmoid(lg[(i, 0)]),
                    mean: State::from_iterator(mu.row(i).iter().copied()),
                    cov: cov_from_raw(&raw.row(i).to_vec(), self.cfg.cov_origin_std),
                })
                .collect(),
        }
    }

    /// Inference on a world-coordinate sequence. An empty sequence yields an
    /// empty output.
    pub fn predict(&self, seq: &InputSequence, norm: &Normalizer) -> Result<(FusionOutput, AttentionRecord)> {
        if seq.is_empty() {
            return Ok((FusionOutput::default(), AttentionRecord::default()));
        }
        let fwd = self.forward(&norm.normalize(seq), None)?;
        let mut out = self.output_normalized(&fwd);
        for c in &mut out.components {
            c.mean = norm.state_to_world(&c.mean);
            c.cov = norm.cov_to_world(&c.cov);
        }
        Ok((out, fwd.attention))
    }
}
