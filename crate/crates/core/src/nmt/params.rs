use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Precision, Tensor, Var};
use crate::error::{Error, Result};

/// Model dimensions. `lang_embed_dim` may differ from `embed_dim` only when
/// `flag_projection` is enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub lang_count: usize,
    pub lang_embed_dim: usize,
    pub attention_dim: usize,
    #[serde(default)]
    pub flag_projection: bool,
    #[serde(default)]
    pub precision: Precision,
}

impl ModelConfig {
    /// Config with `lang_embed_dim == embed_dim` and no flag projection.
    pub fn new(
        vocab_size: usize,
        embed_dim: usize,
        hidden_dim: usize,
        attention_dim: usize,
        lang_count: usize,
    ) -> Self {
        ModelConfig {
            vocab_size,
            embed_dim,
            hidden_dim,
            lang_count,
            lang_embed_dim: embed_dim,
            attention_dim,
            flag_projection: false,
            precision: Precision::F32,
        }
    }

    pub fn with_precision(mut self, precision: Precision) -> Self {
        self.precision = precision;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("lang_count", self.lang_count),
            ("lang_embed_dim", self.lang_embed_dim),
            ("attention_dim", self.attention_dim),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, d)| *d == 0) {
            return Err(Error::Config(format!("{name} must be >= 1")));
        }
        if self.vocab_size < 5 {
            return Err(Error::Config(format!(
                "vocab_size must be >= 5, got {}",
                self.vocab_size
            )));
        }
        if self.lang_embed_dim != self.embed_dim && !self.flag_projection {
            return Err(Error::Config(format!(
                "lang_embed_dim {} differs from embed_dim {} without flag projection",
                self.lang_embed_dim, self.embed_dim
            )));
        }
        Ok(())
    }
}

/// Gated recurrent unit weights (row-vector convention: `x·W`).
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_z: Tensor,
    pub u_z: Tensor,
    pub b_z: Tensor,
    pub w_r: Tensor,
    pub u_r: Tensor,
    pub b_r: Tensor,
    pub w_h: Tensor,
    pub u_h: Tensor,
    pub b_h: Tensor,
}

fn glorot(rows: usize, cols: usize, p: Precision, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::uniform(&[rows, cols], bound, p, rng).with_grad()
}

fn bias(n: usize) -> Tensor {
    Tensor::zeros(&[n]).with_grad()
}

impl GruParams {
    fn init(input: usize, hidden: usize, p: Precision, rng: &mut ChaCha8Rng) -> Self {
        GruParams {
            w_z: glorot(input, hidden, p, rng),
            u_z: glorot(hidden, hidden, p, rng),
            b_z: bias(hidden),
            w_r: glorot(input, hidden, p, rng),
            u_r: glorot(hidden, hidden, p, rng),
            b_r: bias(hidden),
            w_h: glorot(input, hidden, p, rng),
            u_h: glorot(hidden, hidden, p, rng),
            b_h: bias(hidden),
        }
    }

    fn parts(&self) -> [(&'static str, &Tensor); 9] {
        [
            ("w_z", &self.w_z),
            ("u_z", &self.u_z),
            ("b_z", &self.b_z),
            ("w_r", &self.w_r),
            ("u_r", &self.u_r),
            ("b_r", &self.b_r),
            ("w_h", &self.w_h),
            ("u_h", &self.u_h),
            ("b_h", &self.b_h),
        ]
    }

    fn parts_mut(&mut self) -> [&mut Tensor; 9] {
        [
            &mut self.w_z,
            &mut self.u_z,
            &mut self.b_z,
            &mut self.w_r,
            &mut self.u_r,
            &mut self.b_r,
            &mut self.w_h,
            &mut self.u_h,
            &mut self.b_h,
        ]
    }
}

/// Every trainable table. `lang_embed` row `i` is the embedding of language
/// index `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub embed: Tensor,
    pub lang_embed: Tensor,
    pub flag_proj: Option<Tensor>,
    pub enc_fwd: GruParams,
    pub enc_bwd: GruParams,
    pub dec: GruParams,
    pub attn_w: Tensor,
    pub attn_u: Tensor,
    pub attn_v: Tensor,
    pub init_w: Tensor,
    pub out_w: Tensor,
    pub out_b: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BoundGru {
    pub w_z: Var,
    pub u_z: Var,
    pub b_z: Var,
    pub w_r: Var,
    pub u_r: Var,
    pub b_r: Var,
    pub w_h: Var,
    pub u_h: Var,
    pub b_h: Var,
}

/// Graph handles for every parameter, in [`ModelParams::named`] order.
#[derive(Debug, Clone)]
pub struct Bound {
    pub(crate) embed: Var,
    pub(crate) lang_embed: Var,
    pub(crate) flag_proj: Option<Var>,
    pub(crate) enc_fwd: BoundGru,
    pub(crate) enc_bwd: BoundGru,
    pub(crate) dec: BoundGru,
    pub(crate) attn_w: Var,
    pub(crate) attn_u: Var,
    pub(crate) attn_v: Var,
    pub(crate) init_w: Var,
    pub(crate) out_w: Var,
    pub(crate) out_b: Var,
    all: Vec<Var>,
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.all
    }
}

impl ModelParams {
    /// Seeded initialization: Glorot-uniform matrices, zero biases and
    /// `±0.1` uniform embedding tables.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let p = config.precision;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (v, de, dh, da) = (
            config.vocab_size,
            config.embed_dim,
            config.hidden_dim,
            config.attention_dim,
        );
        let embed = Tensor::uniform(&[v, de], 0.1, p, &mut rng).with_grad();
        let lang_embed = Tensor::uniform(
            &[config.lang_count, config.lang_embed_dim],
            0.1,
            p,
            &mut rng,
        )
        .with_grad();
        let flag_proj = config
            .flag_projection
            .then(|| glorot(config.lang_embed_dim, de, p, &mut rng));
        let enc_fwd = GruParams::init(de, dh, p, &mut rng);
        let enc_bwd = GruParams::init(de, dh, p, &mut rng);
        let dec = GruParams::init(de + 2 * dh, dh, p, &mut rng);
        Ok(ModelParams {
            config,
            embed,
            lang_embed,
            flag_proj,
            enc_fwd,
            enc_bwd,
            dec,
            attn_w: glorot(dh, da, p, &mut rng),
            attn_u: glorot(2 * dh, da, p, &mut rng),
            attn_v: glorot(da, 1, p, &mut rng),
            init_w: glorot(dh, dh, p, &mut rng),
            out_w: glorot(3 * dh, v, p, &mut rng),
            out_b: bias(v),
        })
    }

    /// `(name, tensor)` for every parameter in a fixed order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("embed".into(), &self.embed),
            ("lang_embed".into(), &self.lang_embed),
        ];
        if let Some(fp) = &self.flag_proj {
            out.push(("flag_proj".into(), fp));
        }
        for (prefix, gru) in [
            ("enc_fwd", &self.enc_fwd),
            ("enc_bwd", &self.enc_bwd),
            ("dec", &self.dec),
        ] {
            out.extend(
                gru.parts()
                    .into_iter()
                    .map(|(n, t)| (format!("{prefix}.{n}"), t)),
            );
        }
        out.extend([
            ("attn_w".into(), &self.attn_w),
            ("attn_u".into(), &self.attn_u),
            ("attn_v".into(), &self.attn_v),
            ("init_w".into(), &self.init_w),
            ("out_w".into(), &self.out_w),
            ("out_b".into(), &self.out_b),
        ]);
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.named().into_iter().map(|(_, t)| t).collect()
    }

    /// Mutable tensors in [`ModelParams::named`] order.
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = vec![&mut self.embed, &mut self.lang_embed];
        if let Some(fp) = &mut self.flag_proj {
            out.push(fp);
        }
        out.extend(self.enc_fwd.parts_mut());
        out.extend(self.enc_bwd.parts_mut());
        out.extend(self.dec.parts_mut());
        out.extend([
            &mut self.attn_w,
            &mut self.attn_u,
            &mut self.attn_v,
            &mut self.init_w,
            &mut self.out_w,
            &mut self.out_b,
        ]);
        out
    }

    /// Rebuilds a parameter set from named tensors, checking every shape
    /// against `config`.
    pub fn from_named(config: ModelConfig, mut tensors: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let template = ModelParams::init(config, 0)?;
        let expected: Vec<(String, Vec<usize>)> = template
            .named()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        if tensors.len() != expected.len() {
            return Err(Error::Header(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                tensors.len()
            )));
        }
        let mut params = template;
        for ((name, shape), slot) in expected.iter().zip(params.tensors_mut()) {
            let pos = tensors
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| Error::Header(format!("missing tensor `{name}`")))?;
            let (_, t) = tensors.swap_remove(pos);
            if t.shape() != &shape[..] {
                return Err(Error::Header(format!(
                    "tensor `{name}` has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            *slot = t.with_grad();
        }
        Ok(params)
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        self.tensors_mut().into_iter().for_each(Tensor::zero_grad);
    }

    /// Binds every parameter into `g` by reference.
    pub fn bind<'p>(&'p self, g: &mut Graph<'p>) -> Bound {
        let gru = |g: &mut Graph<'p>, p: &'p GruParams| BoundGru {
            w_z: g.leaf(&p.w_z),
            u_z: g.leaf(&p.u_z),
            b_z: g.leaf(&p.b_z),
            w_r: g.leaf(&p.w_r),
            u_r: g.leaf(&p.u_r),
            b_r: g.leaf(&p.b_r),
            w_h: g.leaf(&p.w_h),
            u_h: g.leaf(&p.u_h),
            b_h: g.leaf(&p.b_h),
        };
        let embed = g.leaf(&self.embed);
        let lang_embed = g.leaf(&self.lang_embed);
        let flag_proj = self.flag_proj.as_ref().map(|t| g.leaf(t));
        let (enc_fwd, enc_bwd, dec) = (
            gru(g, &self.enc_fwd),
            gru(g, &self.enc_bwd),
            gru(g, &self.dec),
        );
        let mut b = Bound {
            embed,
            lang_embed,
            flag_proj,
            enc_fwd,
            enc_bwd,
            dec,
            attn_w: g.leaf(&self.attn_w),
            attn_u: g.leaf(&self.attn_u),
            attn_v: g.leaf(&self.attn_v),
            init_w: g.leaf(&self.init_w),
            out_w: g.leaf(&self.out_w),
            out_b: g.leaf(&self.out_b),
            all: Vec::new(),
        };
        let mut all = vec![b.embed, b.lang_embed];
        all.extend(b.flag_proj);
        for r in [&b.enc_fwd, &b.enc_bwd, &b.dec] {
            all.extend([
                r.w_z, r.u_z, r.b_z, r.w_r, r.u_r, r.b_r, r.w_h, r.u_h, r.b_h,
            ]);
        }
        all.extend([b.attn_w, b.attn_u, b.attn_v, b.init_w, b.out_w, b.out_b]);
        b.all = all;
        b
    }
}
