use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::EmotionEmbedding;
use crate::numerics::{gelu_grad, gelu_matrix, softmax_in_place, Init, Linear, Matrix, ParamId, ParamStore};

/// Per-sequence conditioning: audio features, emotion and identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioning {
    pub audio: Matrix,
    pub emotion: EmotionEmbedding,
    pub identity: Vec<f64>,
}

impl Conditioning {
    pub fn new(audio: Matrix, emotion: EmotionEmbedding, identity: Vec<f64>) -> Result<Self> {
        if identity.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("identity conditioning".into()));
        }
        Ok(Self { audio, emotion, identity })
    }

    pub fn frames(&self) -> usize {
        self.audio.rows()
    }
}

/// How the output projection starts out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputInit {
    #[default]
    Zero,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    /// Per-frame parameter dimension `D`.
    pub param_dim: usize,
    pub audio_dim: usize,
    pub emo_dim: usize,
    pub id_dim: usize,
    #[serde(default = "default_d_model")]
    pub d_model: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    /// Width of the sinusoidal embedding and of the time-MLP output.
    #[serde(default = "default_time_dim")]
    pub time_dim: usize,
    #[serde(default = "default_ffn_hidden")]
    pub ffn_hidden: usize,
    #[serde(default)]
    pub output_init: OutputInit,
}

fn default_d_model() -> usize {
    32
}
fn default_heads() -> usize {
    2
}
fn default_time_dim() -> usize {
    16
}
fn default_ffn_hidden() -> usize {
    64
}

impl DenoiserConfig {
    pub fn new(param_dim: usize, audio_dim: usize, emo_dim: usize, id_dim: usize) -> Self {
        Self {
            param_dim,
            audio_dim,
            emo_dim,
            id_dim,
            d_model: default_d_model(),
            heads: default_heads(),
            time_dim: default_time_dim(),
            ffn_hidden: default_ffn_hidden(),
            output_init: OutputInit::Zero,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("param_dim", self.param_dim),
            ("audio_dim", self.audio_dim),
            ("emo_dim", self.emo_dim),
            ("id_dim", self.id_dim),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("ffn_hidden", self.ffn_hidden),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("denoiser {name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::invalid(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if self.time_dim < 2 || !self.time_dim.is_multiple_of(2) {
            return Err(Error::invalid("time_dim must be even and at least 2"));
        }
        Ok(())
    }
}

/// Sinusoidal embedding of a diffusion step: `[sin(t·f_i) | cos(t·f_i)]`.
pub fn timestep_embedding(t: usize, dim: usize) -> Matrix {
    let half = dim / 2;
    let mut m = Matrix::zeros(1, dim);
    for i in 0..half {
        let freq = (-(10_000f64).ln() * i as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        m.set(0, i, arg.sin());
        m.set(0, half + i, arg.cos());
    }
    m
}

/// x₀-predicting denoiser: per-frame tokens, one cross-attention block over
/// two memory tokens (emotion, identity), a GELU feed-forward block, and an
/// output projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Denoiser {
    config: DenoiserConfig,
    time1: Linear,
    time2: Linear,
    input: Linear,
    emo_proj: Linear,
    id_proj: Linear,
    query: Linear,
    /// Keys carry no bias: it would shift both scores equally and cancel in the softmax.
    key: ParamId,
    value: Linear,
    attn_out: Linear,
    ff1: Linear,
    ff2: Linear,
    output: Linear,
}

/// Activations kept for [`Denoiser::backward`].
#[derive(Debug, Clone)]
pub struct DenoiserTrace {
    time_in: Matrix,
    time_pre: Matrix,
    time_hidden: Matrix,
    tokens_in: Matrix,
    h0: Matrix,
    emo_in: Matrix,
    id_in: Matrix,
    memory: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    attention: Vec<Matrix>,
    mixed: Matrix,
    h1: Matrix,
    ff_pre: Matrix,
    ff_hidden: Matrix,
    h2: Matrix,
    pub output: Matrix,
}

impl DenoiserTrace {
    /// `T × 2` attention weights of head `h`.
    pub fn attention(&self, head: usize) -> &Matrix {
        &self.attention[head]
    }
}

const LAYERS: [&str; 11] = [
    "time1", "time2", "input", "emo_proj", "id_proj", "query", "value", "attn_out", "ff1", "ff2", "output",
];
const KEY: &str = "key.weight";

impl Denoiser {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        config: DenoiserConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let init = Init::Scaled(1.0);
        let out_init = match c.output_init {
            OutputInit::Zero => Init::Zero,
            OutputInit::Random => Init::Scaled(1.0),
        };
        let token_in = c.param_dim + c.audio_dim + c.time_dim;
        let shapes = [
            (c.time_dim, c.d_model, init),
            (c.d_model, c.time_dim, init),
            (token_in, c.d_model, init),
            (c.emo_dim, c.d_model, init),
            (c.id_dim, c.d_model, init),
            (c.d_model, c.d_model, init),
            (c.d_model, c.d_model, init),
            (c.d_model, c.d_model, init),
            (c.d_model, c.ffn_hidden, init),
            (c.ffn_hidden, c.d_model, init),
            (c.d_model, c.param_dim, out_init),
        ];
        let mut layers = Vec::with_capacity(LAYERS.len());
        for (name, (fan_in, fan_out, init)) in LAYERS.iter().zip(shapes) {
            layers.push(Linear::register(store, &format!("{prefix}.{name}"), fan_in, fan_out, init, rng)?);
        }
        let normal = Normal::new(0.0, 1.0 / (c.d_model as f64).sqrt()).expect("positive std");
        let key = store.insert(
            format!("{prefix}.{KEY}"),
            Matrix::from_fn(c.d_model, c.d_model, |_, _| normal.sample(rng)),
        )?;
        Ok(Self::from_layers(config, &layers, key))
    }

    /// Rebinds to layers already present in `store`, checking their shapes.
    pub fn lookup(store: &ParamStore, prefix: &str, config: DenoiserConfig) -> Result<Self> {
        config.validate()?;
        let layers = LAYERS
            .iter()
            .map(|name| Linear::lookup(store, &format!("{prefix}.{name}")))
            .collect::<Result<Vec<_>>>()?;
        let key = store.require(&format!("{prefix}.{KEY}"))?;
        if store.value(key).shape() != (config.d_model, config.d_model) {
            return Err(Error::shape("key projection has the wrong shape"));
        }
        let den = Self::from_layers(config, &layers, key);
        let c = &config;
        let expected = [
            (den.time1, c.time_dim, c.d_model),
            (den.time2, c.d_model, c.time_dim),
            (den.input, c.param_dim + c.audio_dim + c.time_dim, c.d_model),
            (den.emo_proj, c.emo_dim, c.d_model),
            (den.id_proj, c.id_dim, c.d_model),
            (den.query, c.d_model, c.d_model),
            (den.value, c.d_model, c.d_model),
            (den.attn_out, c.d_model, c.d_model),
            (den.ff1, c.d_model, c.ffn_hidden),
            (den.ff2, c.ffn_hidden, c.d_model),
            (den.output, c.d_model, c.param_dim),
        ];
        for (layer, fan_in, fan_out) in expected {
            if layer.in_dim(store) != fan_in
                || layer.out_dim(store) != fan_out
                || store.value(layer.bias).cols() != fan_out
            {
                return Err(Error::shape(format!(
                    "layer {} has shape {:?}, expected {fan_out}×{fan_in}",
                    store.name(layer.weight),
                    store.value(layer.weight).shape()
                )));
            }
        }
        Ok(den)
    }

    fn from_layers(config: DenoiserConfig, l: &[Linear], key: ParamId) -> Self {
        Self {
            config,
            time1: l[0],
            time2: l[1],
            input: l[2],
            emo_proj: l[3],
            id_proj: l[4],
            query: l[5],
            key,
            value: l[6],
            attn_out: l[7],
            ff1: l[8],
            ff2: l[9],
            output: l[10],
        }
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn forward(&self, store: &ParamStore, x_t: &Matrix, t: usize, c: &Conditioning) -> Result<DenoiserTrace> {
        let cfg = &self.config;
        let frames = x_t.rows();
        if frames == 0 {
            return Err(Error::EmptyInput);
        }
        if x_t.cols() != cfg.param_dim {
            return Err(Error::shape(format!("x_t has {} columns, expected {}", x_t.cols(), cfg.param_dim)));
        }
        if c.audio.shape() != (frames, cfg.audio_dim) {
            return Err(Error::shape(format!(
                "audio is {:?}, expected ({frames}, {})",
                c.audio.shape(),
                cfg.audio_dim
            )));
        }
        if c.emotion.dim() != cfg.emo_dim || c.identity.len() != cfg.id_dim {
            return Err(Error::shape("conditioning dimensions do not match the denoiser"));
        }

        let time_in = timestep_embedding(t, cfg.time_dim);
        let time_pre = self.time1.forward(store, &time_in)?;
        let time_hidden = gelu_matrix(&time_pre);
        let temb = self.time2.forward(store, &time_hidden)?;
        let temb_rows = Matrix::from_fn(frames, cfg.time_dim, |_, j| temb.get(0, j));
        let tokens_in = Matrix::hstack(&[x_t, &c.audio, &temb_rows])?;
        let h0 = self.input.forward(store, &tokens_in)?;

        let emo_in = Matrix::row_vector(c.emotion.as_slice());
        let id_in = Matrix::row_vector(&c.identity);
        let me = self.emo_proj.forward(store, &emo_in)?;
        let mi = self.id_proj.forward(store, &id_in)?;
        let memory = Matrix::new(2, cfg.d_model, [me.data(), mi.data()].concat())?;

        let q = self.query.forward(store, &h0)?;
        let k = memory.matmul_nt(store.value(self.key))?;
        let v = self.value.forward(store, &memory)?;
        let dh = cfg.d_model / cfg.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut mixed = Matrix::zeros(frames, cfg.d_model);
        let mut attention = Vec::with_capacity(cfg.heads);
        for h in 0..cfg.heads {
            let cols = h * dh..(h + 1) * dh;
            let mut a = Matrix::zeros(frames, 2);
            for r in 0..frames {
                let qr = &q.row(r)[cols.clone()];
                let row = a.row_mut(r);
                for (m, slot) in row.iter_mut().enumerate() {
                    *slot = scale * qr.iter().zip(&k.row(m)[cols.clone()]).map(|(x, y)| x * y).sum::<f64>();
                }
                softmax_in_place(row);
                for j in cols.clone() {
                    mixed.set(r, j, a.get(r, 0) * v.get(0, j) + a.get(r, 1) * v.get(1, j));
                }
            }
            attention.push(a);
        }
        let h1 = h0.add(&self.attn_out.forward(store, &mixed)?)?;
        let ff_pre = self.ff1.forward(store, &h1)?;
        let ff_hidden = gelu_matrix(&ff_pre);
        let h2 = h1.add(&self.ff2.forward(store, &ff_hidden)?)?;
        let output = self.output.forward(store, &h2)?;
        Ok(DenoiserTrace {
            time_in,
            time_pre,
            time_hidden,
            tokens_in,
            h0,
            emo_in,
            id_in,
            memory,
            q,
            k,
            v,
            attention,
            mixed,
            h1,
            ff_pre,
            ff_hidden,
            h2,
            output,
        })
    }

    /// Accumulates parameter gradients for `dL/d(output)`.
    pub fn backward(&self, store: &mut ParamStore, tr: &DenoiserTrace, d_out: &Matrix) -> Result<()> {
        let cfg = &self.config;
        let frames = tr.h0.rows();
        let dh2 = self.output.backward(store, &tr.h2, d_out)?;
        let d_ff_hidden = self.ff2.backward(store, &tr.ff_hidden, &dh2)?;
        let d_ff_pre = Matrix::from_fn(frames, cfg.ffn_hidden, |r, j| {
            d_ff_hidden.get(r, j) * gelu_grad(tr.ff_pre.get(r, j))
        });
        let mut dh1 = dh2;
        dh1.add_assign(&self.ff1.backward(store, &tr.h1, &d_ff_pre)?)?;
        let d_mixed = self.attn_out.backward(store, &tr.mixed, &dh1)?;
        let mut dh0 = dh1;

        let dh = cfg.d_model / cfg.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = Matrix::zeros(frames, cfg.d_model);
        let mut dk = Matrix::zeros(2, cfg.d_model);
        let mut dv = Matrix::zeros(2, cfg.d_model);
        for (h, a) in tr.attention.iter().enumerate() {
            let cols = h * dh..(h + 1) * dh;
            for r in 0..frames {
                let mut da = [0.0; 2];
                for j in cols.clone() {
                    let g = d_mixed.get(r, j);
                    da[0] += g * tr.v.get(0, j);
                    da[1] += g * tr.v.get(1, j);
                    dv.add_at(0, j, a.get(r, 0) * g);
                    dv.add_at(1, j, a.get(r, 1) * g);
                }
                let inner = a.get(r, 0) * da[0] + a.get(r, 1) * da[1];
                for m in 0..2 {
                    let ds = a.get(r, m) * (da[m] - inner) * scale;
                    for j in cols.clone() {
                        dq.add_at(r, j, ds * tr.k.get(m, j));
                        dk.add_at(m, j, ds * tr.q.get(r, j));
                    }
                }
            }
        }
        dh0.add_assign(&self.query.backward(store, &tr.h0, &dq)?)?;
        store.accumulate(self.key, &dk.matmul_tn(&tr.memory)?)?;
        let mut d_memory = dk.matmul(store.value(self.key))?;
        d_memory.add_assign(&self.value.backward(store, &tr.memory, &dv)?)?;
        self.emo_proj.backward(store, &tr.emo_in, &Matrix::row_vector(d_memory.row(0)))?;
        self.id_proj.backward(store, &tr.id_in, &Matrix::row_vector(d_memory.row(1)))?;

        let d_tokens = self.input.backward(store, &tr.tokens_in, &dh0)?;
        let offset = cfg.param_dim + cfg.audio_dim;
        let d_temb = d_tokens.columns(offset, offset + cfg.time_dim).col_sums();
        let d_time_hidden = self.time2.backward(store, &tr.time_hidden, &d_temb)?;
        let d_time_pre = Matrix::from_fn(1, cfg.d_model, |_, j| {
            d_time_hidden.get(0, j) * gelu_grad(tr.time_pre.get(0, j))
        });
        self.time1.backward(store, &tr.time_in, &d_time_pre)?;
        Ok(())
    }
}
