//! Parameter initialization, batch preparation, the forward pass, and the
//! two readout decoders.

use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Mode, TrainingWindow};
use crate::tensor::{trunc_normal, BoolMask, Graph, ParamStore, Scalar, Tensor};
use crate::util::fnv1a64;

use super::{ModelConfig, ModelError, Result, Vocab};

const INIT_STD: f64 = 0.02;

/// Register one parameter, drawing its values from an rng derived from
/// (seed, name) so the init is independent of registration order.
fn add<E: Scalar>(
    store: &mut ParamStore<E>,
    seed: u64,
    name: &str,
    shape: Vec<usize>,
    kind: Init,
) {
    let n: usize = shape.iter().product();
    let data = match kind {
        Init::TruncNormal => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a64(name.as_bytes()));
            (0..n).map(|_| trunc_normal::<E, _>(&mut rng, INIT_STD)).collect()
        }
        Init::Zeros => vec![E::zero(); n],
        Init::Ones => vec![E::one(); n],
    };
    store.insert(name, shape, data).expect("unique param name");
}

enum Init {
    TruncNormal,
    Zeros,
    Ones,
}

fn add_linear<E: Scalar>(
    store: &mut ParamStore<E>,
    seed: u64,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
) {
    add(store, seed, &format!("{prefix}.w"), vec![fan_in, fan_out], Init::TruncNormal);
    add(store, seed, &format!("{prefix}.b"), vec![fan_out], Init::Zeros);
}

fn add_layer_norm<E: Scalar>(store: &mut ParamStore<E>, seed: u64, prefix: &str, dim: usize) {
    add(store, seed, &format!("{prefix}.g"), vec![dim], Init::Ones);
    add(store, seed, &format!("{prefix}.beta"), vec![dim], Init::Zeros);
}

fn add_encoder_block<E: Scalar>(store: &mut ParamStore<E>, seed: u64, prefix: &str, dim: usize) {
    add_layer_norm(store, seed, &format!("{prefix}.ln1"), dim);
    add_linear(store, seed, &format!("{prefix}.attn.qkv"), dim, 3 * dim);
    add_linear(store, seed, &format!("{prefix}.attn.proj"), dim, dim);
    add_layer_norm(store, seed, &format!("{prefix}.ln2"), dim);
    add_linear(store, seed, &format!("{prefix}.ffn.fc1"), dim, 4 * dim);
    add_linear(store, seed, &format!("{prefix}.ffn.fc2"), 4 * dim, dim);
}

/// Seeded GPT-2 style initialization: truncated normal (std 0.02) weights,
/// zero biases and layer-norm shifts, unit layer-norm scales.
pub fn init_params<E: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<ParamStore<E>> {
    cfg.validate()?;
    let d = cfg.embed_dim;
    let rs = cfg.resampler_dim;
    let dec = cfg.image_decoder_dim;
    let mut store = ParamStore::new();

    add_linear(&mut store, seed, "tokenizer.patch", cfg.patch_dim(), rs);
    add(&mut store, seed, "tokenizer.patch.pos", vec![cfg.num_patches(), rs], Init::TruncNormal);
    add(&mut store, seed, "resampler.latents", vec![cfg.resampler_latents, rs], Init::TruncNormal);
    for i in 0..cfg.resampler_layers {
        let p = format!("resampler.l{i}");
        add_layer_norm(&mut store, seed, &format!("{p}.ln_q"), rs);
        add_layer_norm(&mut store, seed, &format!("{p}.ln_kv"), rs);
        add_linear(&mut store, seed, &format!("{p}.q"), rs, rs);
        add_linear(&mut store, seed, &format!("{p}.k"), rs, rs);
        add_linear(&mut store, seed, &format!("{p}.v"), rs, rs);
        add_linear(&mut store, seed, &format!("{p}.proj"), rs, rs);
        add_layer_norm(&mut store, seed, &format!("{p}.ln2"), rs);
        add_linear(&mut store, seed, &format!("{p}.ffn.fc1"), rs, 4 * rs);
        add_linear(&mut store, seed, &format!("{p}.ffn.fc2"), 4 * rs, rs);
    }
    add_linear(&mut store, seed, "img_proj", rs, d);

    add_linear(&mut store, seed, "tokenizer.state.arm", cfg.state_dim - 2, d / 2);
    add_linear(&mut store, seed, "tokenizer.state.grip", 2, d / 2);
    add_linear(&mut store, seed, "tokenizer.state.out", d, d);
    add(&mut store, seed, "tokenizer.lang.table", vec![cfg.vocab_size, d], Init::TruncNormal);
    add_linear(&mut store, seed, "tokenizer.lang.proj", d, d);

    add(&mut store, seed, "posemb.timestep", vec![cfg.history, d], Init::TruncNormal);
    add(&mut store, seed, "readout.frs", vec![2, d], Init::TruncNormal);
    add(&mut store, seed, "readout.inv", vec![cfg.chunk, d], Init::TruncNormal);

    for i in 0..cfg.backbone_layers {
        add_encoder_block(&mut store, seed, &format!("backbone.l{i}"), d);
    }
    add_layer_norm(&mut store, seed, "backbone.lnf", d);

    add_linear(&mut store, seed, "imgdec.proj", d, dec);
    add(&mut store, seed, "imgdec.mask_token", vec![1, dec], Init::TruncNormal);
    for i in 0..cfg.image_decoder_layers {
        add_encoder_block(&mut store, seed, &format!("imgdec.l{i}"), dec);
    }
    add_layer_norm(&mut store, seed, "imgdec.lnf", dec);
    add_linear(&mut store, seed, "imgdec.head", dec, cfg.patch_dim());

    add_linear(&mut store, seed, "actdec.fc1", d, d);
    add_linear(&mut store, seed, "actdec.fc2", d, d);
    add_linear(&mut store, seed, "actdec.arm", d, cfg.arm_dim);
    add_linear(&mut store, seed, "actdec.grip", d, 1);
    Ok(store)
}

/// Whether AdamW's decoupled decay applies: weight matrices only, never
/// biases, layer norms, position embeddings, or readout/latent embeddings.
pub fn decays(name: &str) -> bool {
    name.ends_with(".w")
}

/// Parameters of the visual and text embedders, frozen by the
/// `freeze_encoders` regime.
pub fn is_encoder_param(name: &str) -> bool {
    name.starts_with("tokenizer.patch.") || name.starts_with("tokenizer.lang.")
}

fn linear<E: Scalar>(
    g: &Graph<E>,
    store: &ParamStore<E>,
    x: &Tensor<E>,
    prefix: &str,
) -> Result<Tensor<E>> {
    Ok(x
        .matmul(&g.param(store, &format!("{prefix}.w")))?
        .add(&g.param(store, &format!("{prefix}.b")))?)
}

fn layer_norm<E: Scalar>(
    g: &Graph<E>,
    store: &ParamStore<E>,
    x: &Tensor<E>,
    prefix: &str,
) -> Result<Tensor<E>> {
    Ok(x.layer_norm(
        &g.param(store, &format!("{prefix}.g")),
        &g.param(store, &format!("{prefix}.beta")),
    )?)
}

/// Multi-head attention on pre-normalized q/kv sources; heads are contiguous
/// column slices of the projections.
fn attend<E: Scalar>(
    q: &Tensor<E>,
    k: &Tensor<E>,
    v: &Tensor<E>,
    heads: usize,
    blocked: Option<&Rc<BoolMask>>,
) -> Result<Tensor<E>> {
    let dim = *q.shape().last().unwrap();
    let hd = dim / heads;
    let axis = q.rank() - 1;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = q.slice(axis, h * hd, hd)?;
        let kh = k.slice(axis, h * hd, hd)?;
        let vh = v.slice(axis, h * hd, hd)?;
        let mut scores = qh.matmul(&kh.transpose()?)?.scale(scale)?;
        if let Some(b) = blocked {
            scores = scores.masked_fill(b)?;
        }
        outs.push(scores.softmax()?.matmul(&vh)?);
    }
    Ok(Tensor::concat(&outs, axis)?)
}

/// One pre-LN transformer block with residuals.
fn encoder_block<E: Scalar>(
    g: &Graph<E>,
    store: &ParamStore<E>,
    prefix: &str,
    x: &Tensor<E>,
    heads: usize,
    blocked: Option<&Rc<BoolMask>>,
) -> Result<Tensor<E>> {
    let xn = layer_norm(g, store, x, &format!("{prefix}.ln1"))?;
    let dim = *x.shape().last().unwrap();
    let qkv = linear(g, store, &xn, &format!("{prefix}.attn.qkv"))?;
    let axis = qkv.rank() - 1;
    let q = qkv.slice(axis, 0, dim)?;
    let k = qkv.slice(axis, dim, dim)?;
    let v = qkv.slice(axis, 2 * dim, dim)?;
    let att = attend(&q, &k, &v, heads, blocked)?;
    let att = linear(g, store, &att, &format!("{prefix}.attn.proj"))?;
    let x = x.add(&att)?;
    let xn = layer_norm(g, store, &x, &format!("{prefix}.ln2"))?;
    let h = linear(g, store, &xn, &format!("{prefix}.ffn.fc1"))?.gelu()?;
    let h = linear(g, store, &h, &format!("{prefix}.ffn.fc2"))?;
    Ok(x.add(&h)?)
}

/// Scale raw image bytes into patch rows: [patches, patch_dim] in [0, 1].
pub fn patchify<E: Scalar>(img: &[u8], img_size: usize, patch: usize, out: &mut Vec<E>) {
    let side = img_size / patch;
    for pr in 0..side {
        for pc in 0..side {
            for r in 0..patch {
                for c in 0..patch {
                    let px = ((pr * patch + r) * img_size + (pc * patch + c)) * 3;
                    for ch in 0..3 {
                        out.push(E::from_f64(img[px + ch] as f64 / 255.0));
                    }
                }
            }
        }
    }
}

/// Inverse of [`patchify`] on predicted values.
pub fn unpatchify<E: Scalar>(patches: &[E], img_size: usize, patch: usize) -> Vec<f64> {
    let side = img_size / patch;
    let mut out = vec![0.0; img_size * img_size * 3];
    let pdim = patch * patch * 3;
    for pr in 0..side {
        for pc in 0..side {
            let base = (pr * side + pc) * pdim;
            for r in 0..patch {
                for c in 0..patch {
                    let px = ((pr * patch + r) * img_size + (pc * patch + c)) * 3;
                    let src = base + (r * patch + c) * 3;
                    for ch in 0..3 {
                        out[px + ch] = patches[src + ch].as_f64();
                    }
                }
            }
        }
    }
    out
}

/// Fixed 2D sine-cosine position table for the image decoder, [side*side, dim].
pub fn sincos_2d<E: Scalar>(side: usize, dim: usize) -> Vec<E> {
    assert_eq!(dim % 4, 0);
    let half = dim / 2;
    let one_d = |pos: usize| -> Vec<f64> {
        let quarter = half / 2;
        let mut out = vec![0.0; half];
        for j in 0..quarter {
            let omega = 1.0 / 10000f64.powf(j as f64 / quarter as f64);
            out[2 * j] = (pos as f64 * omega).sin();
            out[2 * j + 1] = (pos as f64 * omega).cos();
        }
        out
    };
    let mut out = Vec::with_capacity(side * side * dim);
    for r in 0..side {
        for c in 0..side {
            for v in one_d(r) {
                out.push(E::from_f64(v));
            }
            for v in one_d(c) {
                out.push(E::from_f64(v));
            }
        }
    }
    out
}

/// Window batch lowered to flat numeric buffers ready to become graph
/// constants.
#[derive(Debug, Clone)]
pub struct PreparedBatch<E> {
    pub batch: usize,
    pub mode: Mode,
    /// [B*m*2, P, patch_dim]
    pub hist_patches: Vec<E>,
    /// [B, m, state_dim]
    pub hist_states: Vec<E>,
    /// Token ids per window (fine-tuning goal).
    pub instr_ids: Vec<Vec<usize>>,
    /// [B, state_dim] (pretraining goal).
    pub goal_states: Vec<E>,
    /// [B*m*2, P, patch_dim]
    pub target_patches: Vec<E>,
    /// [B, m, n, arm_dim]
    pub target_arm: Vec<E>,
    /// [B, m, n, 1]
    pub target_grip: Vec<E>,
    /// [B*m]
    pub valid: Vec<bool>,
}

impl<E: Scalar> PreparedBatch<E> {
    /// Row indices of valid (window, timestep) pairs.
    pub fn valid_rows(&self) -> Vec<usize> {
        self.valid
            .iter()
            .enumerate()
            .filter_map(|(i, &v)| v.then_some(i))
            .collect()
    }

    /// Same, doubled out over the two views: [B*m*2] granularity.
    pub fn valid_view_rows(&self) -> Vec<usize> {
        let mut rows = Vec::new();
        for (i, &v) in self.valid.iter().enumerate() {
            if v {
                rows.push(2 * i);
                rows.push(2 * i + 1);
            }
        }
        rows
    }
}

pub fn prepare_batch<E: Scalar>(
    cfg: &ModelConfig,
    vocab: &Vocab,
    windows: &[TrainingWindow],
) -> Result<PreparedBatch<E>> {
    assert!(!windows.is_empty());
    if vocab.len() > cfg.vocab_size {
        return Err(ModelError::VocabTooLarge {
            words: vocab.len(),
            limit: cfg.vocab_size,
        });
    }
    let b = windows.len();
    let (m, n) = (cfg.history, cfg.chunk);
    let mut out = PreparedBatch {
        batch: b,
        mode: cfg.mode,
        hist_patches: Vec::with_capacity(b * m * 2 * cfg.num_patches() * cfg.patch_dim()),
        hist_states: Vec::with_capacity(b * m * cfg.state_dim),
        instr_ids: Vec::new(),
        goal_states: Vec::new(),
        target_patches: Vec::with_capacity(b * m * 2 * cfg.num_patches() * cfg.patch_dim()),
        target_arm: Vec::with_capacity(b * m * n * cfg.arm_dim),
        target_grip: Vec::with_capacity(b * m * n),
        valid: Vec::with_capacity(b * m),
    };
    for w in windows {
        if w.mode != cfg.mode {
            return Err(ModelError::ModeMismatch {
                window: w.mode,
                model: cfg.mode,
            });
        }
        if w.m != m
            || w.n != n
            || w.views != 2
            || w.height != cfg.img_size
            || w.width != cfg.img_size
            || w.state_dim != cfg.state_dim
            || w.action_dim != cfg.arm_dim + 1
        {
            return Err(ModelError::WindowMismatch(format!(
                "window m={} n={} {}x{} state={} action={}",
                w.m, w.n, w.height, w.width, w.state_dim, w.action_dim
            )));
        }
        let fb = w.frame_bytes();
        for t in 0..m {
            for view in 0..2 {
                let img = &w.hist_images[(t * 2 + view) * fb..(t * 2 + view + 1) * fb];
                patchify(img, cfg.img_size, cfg.patch_size, &mut out.hist_patches);
                let timg = &w.target_images[(t * 2 + view) * fb..(t * 2 + view + 1) * fb];
                patchify(timg, cfg.img_size, cfg.patch_size, &mut out.target_patches);
            }
        }
        out.hist_states
            .extend(w.hist_states.iter().map(|&v| E::from_f64(v as f64)));
        match cfg.mode {
            Mode::Finetune => {
                let text = w.instruction.as_deref().expect("finetune window");
                out.instr_ids.push(vocab.tokenize(text)?);
            }
            Mode::Pretrain => {
                let goal = w.goal_state.as_deref().expect("pretrain window");
                out.goal_states
                    .extend(goal.iter().map(|&v| E::from_f64(v as f64)));
            }
        }
        for t in 0..m {
            for s in 0..n {
                let a = &w.target_actions
                    [(t * n + s) * w.action_dim..(t * n + s + 1) * w.action_dim];
                for &v in &a[..cfg.arm_dim] {
                    out.target_arm.push(E::from_f64(v as f64));
                }
                out.target_grip.push(E::from_f64(a[cfg.arm_dim] as f64));
            }
        }
        out.valid.extend_from_slice(&w.valid);
    }
    Ok(out)
}

/// Readout latents: foresight [B, m, 2, d] and action [B, m, n, d].
pub struct Latents<E: Scalar> {
    pub frs: Tensor<E>,
    pub inv: Tensor<E>,
}

/// Tokenize, resample, assemble the token sequence, and run the masked
/// backbone; returns the readout rows.
pub fn forward<E: Scalar>(
    cfg: &ModelConfig,
    g: &Graph<E>,
    store: &ParamStore<E>,
    batch: &PreparedBatch<E>,
    blocked: &Rc<BoolMask>,
) -> Result<Latents<E>> {
    let b = batch.batch;
    let (m, n, d) = (cfg.history, cfg.chunk, cfg.embed_dim);
    let k = cfg.resampler_latents;
    let p = cfg.num_patches();
    let layout = cfg.layout();
    let np = b * m * 2;

    // Patch embedding + learned 2D positions, then the perceiver resampler.
    let patches = g.constant(vec![np, p, cfg.patch_dim()], batch.hist_patches.clone());
    let ptok = linear(g, store, &patches, "tokenizer.patch")?
        .add(&g.param(store, "tokenizer.patch.pos"))?;
    let lat = resample(cfg, g, store, &ptok)?;
    let img_tokens = linear(g, store, &lat, "img_proj")?.reshape(vec![b, m * 2 * k, d])?;

    let state_tokens = state_tokenizer(
        cfg,
        g,
        store,
        &g.constant(vec![b, m, cfg.state_dim], batch.hist_states.clone()),
    )?;

    let goal = match cfg.mode {
        Mode::Finetune => {
            let table = g.param(store, "tokenizer.lang.table");
            let mut pooled = Vec::with_capacity(b);
            for ids in &batch.instr_ids {
                let embs = table.gather(0, ids)?;
                let len = ids.len();
                let avg = g.constant(vec![1, len], vec![E::from_f64(1.0 / len as f64); len]);
                pooled.push(avg.matmul(&embs)?);
            }
            let pooled = Tensor::concat(&pooled, 0)?;
            linear(g, store, &pooled, "tokenizer.lang.proj")?.reshape(vec![b, 1, d])?
        }
        Mode::Pretrain => {
            let gs = g.constant(vec![b, 1, cfg.state_dim], batch.goal_states.clone());
            state_tokenizer(cfg, g, store, &gs)?
        }
    };

    let frs_emb = g.param(store, "readout.frs").broadcast_to(b)?;
    let inv_emb = g.param(store, "readout.inv").broadcast_to(b)?;

    let mut segments = Vec::with_capacity(m);
    for t in 0..m {
        let img_t = img_tokens.slice(1, t * 2 * k, 2 * k)?;
        let state_t = state_tokens.slice(1, t, 1)?;
        segments.push(Tensor::concat(
            &[goal.clone(), img_t, state_t, frs_emb.clone(), inv_emb.clone()],
            1,
        )?);
    }
    let mut x = Tensor::concat(&segments, 1)?;

    let pos_idx: Vec<usize> = (0..m).flat_map(|t| std::iter::repeat(t).take(layout.width())).collect();
    let pos = g.param(store, "posemb.timestep").gather(0, &pos_idx)?;
    x = x.add(&pos)?;

    for i in 0..cfg.backbone_layers {
        x = encoder_block(g, store, &format!("backbone.l{i}"), &x, cfg.backbone_heads, Some(blocked))?;
    }
    x = layer_norm(g, store, &x, "backbone.lnf")?;

    let frs_idx: Vec<usize> = (0..m)
        .flat_map(|t| (0..2).map(move |v| layout.frs(t, v)))
        .collect();
    let inv_idx: Vec<usize> = (0..m)
        .flat_map(|t| (0..n).map(move |s| layout.inv(t, s)))
        .collect();
    let frs = x.gather(1, &frs_idx)?.reshape(vec![b, m, 2, d])?;
    let inv = x.gather(1, &inv_idx)?.reshape(vec![b, m, n, d])?;
    Ok(Latents { frs, inv })
}

/// Perceiver resampler: k learnable latents cross-attend to the patch tokens
/// (plus the latents themselves) over a few rounds of attention and
/// feed-forward, compressing each view to k tokens.
/// Input [N, P, rs_dim], output [N, k, rs_dim].
pub fn resample<E: Scalar>(
    cfg: &ModelConfig,
    g: &Graph<E>,
    store: &ParamStore<E>,
    patch_tokens: &Tensor<E>,
) -> Result<Tensor<E>> {
    let np = patch_tokens.shape()[0];
    let mut lat = g.param(store, "resampler.latents").broadcast_to(np)?;
    for i in 0..cfg.resampler_layers {
        let pre = format!("resampler.l{i}");
        let qsrc = layer_norm(g, store, &lat, &format!("{pre}.ln_q"))?;
        let feats = Tensor::concat(&[patch_tokens.clone(), lat.clone()], 1)?;
        let kvsrc = layer_norm(g, store, &feats, &format!("{pre}.ln_kv"))?;
        let q = linear(g, store, &qsrc, &format!("{pre}.q"))?;
        let kk = linear(g, store, &kvsrc, &format!("{pre}.k"))?;
        let vv = linear(g, store, &kvsrc, &format!("{pre}.v"))?;
        let att = attend(&q, &kk, &vv, cfg.resampler_heads, None)?;
        lat = lat.add(&linear(g, store, &att, &format!("{pre}.proj"))?)?;
        let ln2 = layer_norm(g, store, &lat, &format!("{pre}.ln2"))?;
        let h = linear(g, store, &ln2, &format!("{pre}.ffn.fc1"))?.gelu()?;
        lat = lat.add(&linear(g, store, &h, &format!("{pre}.ffn.fc2"))?)?;
    }
    Ok(lat)
}

/// Robot-state tokenizer: separate linear layers for the arm state and the
/// one-hot gripper, concatenated then mixed by a final linear layer.
fn state_tokenizer<E: Scalar>(
    cfg: &ModelConfig,
    g: &Graph<E>,
    store: &ParamStore<E>,
    states: &Tensor<E>,
) -> Result<Tensor<E>> {
    let sd = cfg.state_dim;
    let axis = states.rank() - 1;
    let arm = states.slice(axis, 0, sd - 2)?;
    let grip = states.slice(axis, sd - 2, 2)?;
    let arm = linear(g, store, &arm, "tokenizer.state.arm")?;
    let grip = linear(g, store, &grip, "tokenizer.state.grip")?;
    let cat = Tensor::concat(&[arm, grip], axis)?;
    linear(g, store, &cat, "tokenizer.state.out")
}

/// Action decoder: shared relu trunk, then a tanh arm head and a sigmoid
/// gripper head. Slot i of timestep tau decodes the action at tau + i.
/// Output [B, m, n, arm_dim + 1] with the gripper probability last.
pub fn decode_actions<E: Scalar>(
    g: &Graph<E>,
    store: &ParamStore<E>,
    inv: &Tensor<E>,
) -> Result<Tensor<E>> {
    let h = linear(g, store, inv, "actdec.fc1")?.relu()?;
    let h = linear(g, store, &h, "actdec.fc2")?.relu()?;
    let arm = linear(g, store, &h, "actdec.arm")?.tanh_act()?;
    let grip = linear(g, store, &h, "actdec.grip")?.sigmoid()?;
    let axis = inv.rank() - 1;
    Ok(Tensor::concat(&[arm, grip], axis)?)
}

/// Image decoder: per-view latent plus shared mask tokens with fixed 2D
/// sin-cos positions through a small transformer; each mask-token output maps
/// to one patch. Input [B, m, 2, d], output [B*m*2, P, patch_dim].
pub fn decode_image_patches<E: Scalar>(
    cfg: &ModelConfig,
    g: &Graph<E>,
    store: &ParamStore<E>,
    frs: &Tensor<E>,
) -> Result<Tensor<E>> {
    let shape = frs.shape().to_vec();
    let d: usize = *shape.last().unwrap();
    let np: usize = shape[..shape.len() - 1].iter().product();
    let p = cfg.num_patches();
    let dec = cfg.image_decoder_dim;
    let side = cfg.img_size / cfg.patch_size;

    let lat = frs.reshape(vec![np, 1, d])?;
    let lat = linear(g, store, &lat, "imgdec.proj")?;
    let masks = g
        .param(store, "imgdec.mask_token")
        .gather(0, &vec![0; p])?
        .add(&g.constant(vec![p, dec], sincos_2d(side, dec)))?
        .broadcast_to(np)?;
    let mut x = Tensor::concat(&[lat, masks], 1)?;
    for i in 0..cfg.image_decoder_layers {
        x = encoder_block(
            g,
            store,
            &format!("imgdec.l{i}"),
            &x,
            cfg.image_decoder_heads,
            None,
        )?;
    }
    let x = layer_norm(g, store, &x, "imgdec.lnf")?;
    let tokens = x.slice(1, 1, p)?;
    linear(g, store, &tokens, "imgdec.head")
}
