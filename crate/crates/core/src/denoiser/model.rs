use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::layout::{Init, Layout, Slot};
use super::rope::rotate_in_place;
use super::{AttentionMode, DenoiserConfig};
use crate::error::{invalid, Result};

const LN_EPS: f64 = 1e-5;
const TOKEN_INIT_STD: f64 = 0.02;

/// Sinusoidal encoding `[sin(t·f_0..f_{h-1}) | cos(t·f_0..f_{h-1})]`,
/// `f_i = 10000^(−i/h)`, `h = dim / 2`.
pub fn sinusoidal_embedding(t: f64, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return invalid(format!("timestep embedding width must be even and positive, got {dim}"));
    }
    let half = dim / 2;
    let freqs = (0..half).map(|i| (-(10_000f64.ln()) * i as f64 / half as f64).exp());
    let (sin, cos): (Vec<f64>, Vec<f64>) = freqs.map(|f| (t * f).sin_cos()).unzip();
    Ok(sin.into_iter().chain(cos).collect())
}

/// A batch of equally sized structured inputs stacked row-wise.
#[derive(Debug, Clone)]
pub struct DenoiseBatch {
    /// `(B · seq_len) × latent_dim`
    pub inputs: Array2<f64>,
    /// `(B · (seq_len − 2)) × audio_dim`, aligned with the motion rows.
    pub audio: Array2<f64>,
    pub timesteps: Vec<usize>,
    pub seq_len: usize,
}

impl DenoiseBatch {
    pub fn single(input: ArrayView2<f64>, audio: ArrayView2<f64>, t: usize) -> Self {
        Self {
            inputs: input.to_owned(),
            audio: audio.to_owned(),
            timesteps: vec![t],
            seq_len: input.nrows(),
        }
    }

    pub fn batch_size(&self) -> usize {
        self.timesteps.len()
    }

    fn validate(&self, cfg: &DenoiserConfig) -> Result<()> {
        let b = self.batch_size();
        let s = self.seq_len;
        if b == 0 {
            return invalid("empty batch");
        }
        if s < 2 {
            return invalid("structured input needs the two reference rows");
        }
        if s > cfg.max_seq {
            return invalid(format!(
                "sequence of {s} rows exceeds the model limit of {}",
                cfg.max_seq
            ));
        }
        if self.inputs.dim() != (b * s, cfg.latent_dim) {
            return invalid(format!(
                "inputs have shape {:?}, expected ({}, {})",
                self.inputs.dim(),
                b * s,
                cfg.latent_dim
            ));
        }
        if self.audio.dim() != (b * (s - 2), cfg.audio_dim) {
            return invalid(format!(
                "audio features have shape {:?}, expected ({}, {}) for {} motion rows",
                self.audio.dim(),
                b * (s - 2),
                cfg.audio_dim,
                s - 2
            ));
        }
        if let Some(&t) = self.timesteps.iter().find(|&&t| t > cfg.schedule.steps) {
            return invalid(format!("timestep {t} exceeds the {}-step schedule", cfg.schedule.steps));
        }
        Ok(())
    }
}

struct BlockCache {
    scale_shift: Array2<f64>,
    n1: Array2<f64>,
    inv1: Array1<f64>,
    modulated: Array2<f64>,
    f1: Array2<f64>,
    g: Array2<f64>,
    attn: Option<AttnCache>,
}

struct AttnCache {
    n2: Array2<f64>,
    inv2: Array1<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    o: Array2<f64>,
}

/// Activations retained by [`Denoiser::forward_train`] for the backward pass.
pub struct ForwardCache {
    batch: usize,
    seq_len: usize,
    inputs: Array2<f64>,
    skip_in: Array2<f64>,
    audio: Array2<f64>,
    emb: Array2<f64>,
    te: Array2<f64>,
    ta: Array2<f64>,
    cin: Array2<f64>,
    cond: Array2<f64>,
    gc: Array2<f64>,
    blocks: Vec<BlockCache>,
    h_final: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    config: DenoiserConfig,
    layout: Layout,
    params: Vec<f64>,
    /// `√(1 − ᾱ_t)` for `t = 0..=T`.
    skip_scale: Vec<f64>,
}

fn skip_scales(cfg: &DenoiserConfig) -> Result<Vec<f64>> {
    let sched = crate::diffusion::DiffusionSchedule::from_config(&cfg.schedule)?;
    Ok((0..=sched.len()).map(|t| (1.0 - sched.alpha_bar(t)).sqrt()).collect())
}

fn linear(x: &ArrayView2<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let mut y = x.dot(&w);
    y += &b;
    y
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn silu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v * sigmoid(v))
}

/// `d/dx [x σ(x)]` multiplied into the incoming gradient.
fn silu_backward(x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    Zip::from(x).and(dy).map_collect(|&v, &g| {
        let sg = sigmoid(v);
        g * sg * (1.0 + v * (1.0 - sg))
    })
}

/// Row-wise layer norm without affine parameters.
fn layer_norm(x: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let d = x.ncols() as f64;
    let mut y = x.clone();
    let mut inv = Array1::zeros(x.nrows());
    for (mut row, inv_r) in y.rows_mut().into_iter().zip(inv.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *inv_r = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| v * *inv_r);
    }
    (y, inv)
}

fn layer_norm_backward(dy: &Array2<f64>, y: &Array2<f64>, inv: &Array1<f64>) -> Array2<f64> {
    let d = y.ncols() as f64;
    let mut dx = Array2::zeros(y.dim());
    for (((mut dxr, dyr), yr), &iv) in dx.rows_mut().into_iter().zip(dy.rows()).zip(y.rows()).zip(inv.iter()) {
        let mean_dy = dyr.sum() / d;
        let mean_dyy = dyr.dot(&yr) / d;
        Zip::from(&mut dxr)
            .and(&dyr)
            .and(&yr)
            .for_each(|o, &g, &v| *o = iv * (g - mean_dy - v * mean_dyy));
    }
    dx
}

fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

fn accumulate(grads: &mut [f64], slot: Slot, g: &Array2<f64>) {
    let mut dst = slot.mat_mut(grads);
    dst += g;
}

fn accumulate_bias(grads: &mut [f64], slot: Slot, g: &Array2<f64>) {
    let col = g.sum_axis(Axis(0));
    for (dst, v) in grads[slot.range()].iter_mut().zip(col.iter()) {
        *dst += v;
    }
}

/// Temporal positions of the rows of one structured input.
pub(crate) fn row_positions(seq_len: usize) -> Vec<f64> {
    (0..seq_len).map(|r| r as f64 - 2.0).collect()
}

impl Denoiser {
    /// Fresh model with fan-in scaled normal weights, zero biases and a
    /// zero output projection.
    pub fn new(config: DenoiserConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; layout.total];
        for g in &layout.groups {
            let std = match g.init {
                Init::FanIn(fan_in) => (1.0 / fan_in as f64).sqrt(),
                Init::Token => TOKEN_INIT_STD,
                Init::Zero => continue,
            };
            for p in &mut params[g.slot.range()] {
                *p = std * rng.sample::<f64, _>(StandardNormal);
            }
        }
        Ok(Self {
            skip_scale: skip_scales(&config)?,
            config,
            layout,
            params,
        })
    }

    pub fn with_params(config: DenoiserConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total {
            return invalid(format!(
                "parameter vector has {} entries, configuration needs {}",
                params.len(),
                layout.total
            ));
        }
        Ok(Self {
            skip_scale: skip_scales(&config)?,
            config,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn tensor(&self, name: &str) -> Option<ArrayView2<'_, f64>> {
        self.layout.group(name).map(|g| g.slot.mat(&self.params))
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<ndarray::ArrayViewMut2<'_, f64>> {
        let slot = self.layout.group(name)?.slot;
        Some(slot.mat_mut(&mut self.params))
    }

    /// Sinusoidal encoding of `t` passed through the time MLP.
    pub fn timestep_embedding(&self, t: usize) -> Result<Array1<f64>> {
        let emb = Array2::from_shape_vec(
            (1, self.config.model_dim),
            sinusoidal_embedding(t as f64, self.config.model_dim)?,
        )
        .expect("embedding width");
        let (_, _, tm) = self.time_mlp(&emb);
        Ok(tm.row(0).to_owned())
    }

    fn time_mlp(&self, emb: &Array2<f64>) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let p = &self.params;
        let l = &self.layout;
        let te = linear(&emb.view(), l.time_w1.mat(p), l.time_b1.vec(p));
        let ta = silu(&te);
        let tm = linear(&ta.view(), l.time_w2.mat(p), l.time_b2.vec(p));
        (te, ta, tm)
    }

    /// Fused time and audio condition for every row of one structured input:
    /// `[time_mlp(t) | audio token] · W + b`, with the reference rows using
    /// the learned null token. Returns an `(n + 2) × model_dim` matrix.
    pub fn fuse_condition(&self, t: usize, audio: ArrayView2<f64>, n: usize) -> Result<Array2<f64>> {
        if audio.nrows() != n {
            return invalid(format!(
                "audio has {} rows but the window has {n} motion frames",
                audio.nrows()
            ));
        }
        if audio.ncols() != self.config.audio_dim {
            return invalid(format!(
                "audio width {} does not match model audio_dim {}",
                audio.ncols(),
                self.config.audio_dim
            ));
        }
        let emb = Array2::from_shape_vec(
            (1, self.config.model_dim),
            sinusoidal_embedding(t as f64, self.config.model_dim)?,
        )
        .expect("embedding width");
        let (_, _, tm) = self.time_mlp(&emb);
        let cin = self.condition_input(&tm, &audio, 1, n + 2);
        let p = &self.params;
        Ok(linear(
            &cin.view(),
            self.layout.fuse_w.mat(p),
            self.layout.fuse_b.vec(p),
        ))
    }

    fn condition_input(&self, tm: &Array2<f64>, audio: &ArrayView2<f64>, batch: usize, seq_len: usize) -> Array2<f64> {
        let p = &self.params;
        let l = &self.layout;
        let d = self.config.model_dim;
        let n = seq_len - 2;
        let au = linear(audio, l.audio_w.mat(p), l.audio_b.vec(p));
        let null = l.null_audio.vec(p);
        let mut cin = Array2::zeros((batch * seq_len, 2 * d));
        for b in 0..batch {
            for r in 0..seq_len {
                let mut row = cin.row_mut(b * seq_len + r);
                row.slice_mut(s![..d]).assign(&tm.row(b));
                if r < 2 {
                    row.slice_mut(s![d..]).assign(&null);
                } else {
                    row.slice_mut(s![d..]).assign(&au.row(b * n + r - 2));
                }
            }
        }
        cin
    }

    /// Noise prediction for one structured input of `n + 2` rows.
    pub fn denoise(&self, input: ArrayView2<f64>, audio: ArrayView2<f64>, t: usize) -> Result<Array2<f64>> {
        self.forward(&DenoiseBatch::single(input, audio, t))
    }

    pub fn forward(&self, batch: &DenoiseBatch) -> Result<Array2<f64>> {
        self.forward_train(batch).map(|(out, _)| out)
    }

    pub fn forward_train(&self, batch: &DenoiseBatch) -> Result<(Array2<f64>, ForwardCache)> {
        batch.validate(&self.config)?;
        let cfg = &self.config;
        let p = &self.params;
        let l = &self.layout;
        let d = cfg.model_dim;
        let bsz = batch.batch_size();
        let s_len = batch.seq_len;
        let dh = cfg.head_dim();
        let attn_scale = 1.0 / (dh as f64).sqrt();
        let positions = row_positions(s_len);

        let mut h = linear(&batch.inputs.view(), l.in_w.mat(p), l.in_b.vec(p));

        let mut emb = Array2::zeros((bsz, d));
        for (mut row, &t) in emb.rows_mut().into_iter().zip(&batch.timesteps) {
            row.assign(&ArrayView1::from(&sinusoidal_embedding(t as f64, d)?));
        }
        let (te, ta, tm) = self.time_mlp(&emb);
        let cin = self.condition_input(&tm, &batch.audio.view(), bsz, s_len);
        let cond = linear(&cin.view(), l.fuse_w.mat(p), l.fuse_b.vec(p));
        let gc = silu(&cond);

        let mut blocks = Vec::with_capacity(l.blocks.len());
        for bl in &l.blocks {
            let scale_shift = linear(&gc.view(), bl.film_w.mat(p), bl.film_b.vec(p));
            let (n1, inv1) = layer_norm(&h);
            let scale = scale_shift.slice(s![.., ..d]);
            let shift = scale_shift.slice(s![.., d..]);
            let modulated = Zip::from(&n1)
                .and(&scale)
                .and(&shift)
                .map_collect(|&x, &sc, &sh| x * (1.0 + sc) + sh);
            let f1 = linear(&modulated.view(), bl.ff_w1.mat(p), bl.ff_b1.vec(p));
            let g = silu(&f1);
            h += &linear(&g.view(), bl.ff_w2.mat(p), bl.ff_b2.vec(p));

            let attn = if let Some(at) = &bl.attn {
                let (n2, inv2) = layer_norm(&h);
                let mut q = n2.dot(&at.q_w.mat(p));
                let mut k = n2.dot(&at.k_w.mat(p));
                let v = n2.dot(&at.v_w.mat(p));
                let mut o = Array2::zeros((bsz * s_len, d));
                let mut probs = Vec::with_capacity(bsz * cfg.n_heads);
                for b in 0..bsz {
                    let rows = b * s_len..(b + 1) * s_len;
                    for hd in 0..cfg.n_heads {
                        let cols = hd * dh..(hd + 1) * dh;
                        if cfg.attention == AttentionMode::Rope {
                            rotate_in_place(q.slice_mut(s![rows.clone(), cols.clone()]), &positions, false);
                            rotate_in_place(k.slice_mut(s![rows.clone(), cols.clone()]), &positions, false);
                        }
                        let qs = q.slice(s![rows.clone(), cols.clone()]);
                        let ks = k.slice(s![rows.clone(), cols.clone()]);
                        let mut pr = qs.dot(&ks.t());
                        pr *= attn_scale;
                        softmax_rows(&mut pr);
                        o.slice_mut(s![rows.clone(), cols.clone()])
                            .assign(&pr.dot(&v.slice(s![rows.clone(), cols])));
                        probs.push(pr);
                    }
                }
                h += &linear(&o.view(), at.o_w.mat(p), at.o_b.vec(p));
                Some(AttnCache {
                    n2,
                    inv2,
                    q,
                    k,
                    v,
                    probs,
                    o,
                })
            } else {
                None
            };
            blocks.push(BlockCache {
                scale_shift,
                n1,
                inv1,
                modulated,
                f1,
                g,
                attn,
            });
        }

        let mut out = linear(&h.view(), l.out_w.mat(p), l.out_b.vec(p));
        let mut skip_in = batch.inputs.clone();
        for (b, &t) in batch.timesteps.iter().enumerate() {
            let c = self.skip_scale[t];
            skip_in
                .slice_mut(s![b * s_len..(b + 1) * s_len, ..])
                .mapv_inplace(|v| v * c);
        }
        out += &(&skip_in * &l.skip.vec(p));
        let cache = ForwardCache {
            batch: bsz,
            seq_len: s_len,
            inputs: batch.inputs.clone(),
            skip_in,
            audio: batch.audio.clone(),
            emb,
            te,
            ta,
            cin,
            cond,
            gc,
            blocks,
            h_final: h,
        };
        Ok((out, cache))
    }

    /// Gradient of a scalar loss with respect to every parameter, given the
    /// loss gradient `d_out` with respect to the forward output.
    pub fn backward(&self, cache: &ForwardCache, d_out: ArrayView2<f64>) -> Vec<f64> {
        let cfg = &self.config;
        let p = &self.params;
        let l = &self.layout;
        let d = cfg.model_dim;
        let dh = cfg.head_dim();
        let attn_scale = 1.0 / (dh as f64).sqrt();
        let (bsz, s_len) = (cache.batch, cache.seq_len);
        let n = s_len - 2;
        let positions = row_positions(s_len);
        let mut grads = vec![0.0; l.total];
        let d_out = d_out.to_owned();

        accumulate(&mut grads, l.out_w, &cache.h_final.t().dot(&d_out));
        accumulate_bias(&mut grads, l.out_b, &d_out);
        accumulate_bias(&mut grads, l.skip, &(&cache.skip_in * &d_out));
        let mut dh_res = d_out.dot(&l.out_w.mat(p).t());
        let mut dgc = Array2::<f64>::zeros(cache.gc.dim());

        for (bl, bc) in l.blocks.iter().zip(&cache.blocks).rev() {
            if let (Some(at), Some(ac)) = (&bl.attn, &bc.attn) {
                accumulate(&mut grads, at.o_w, &ac.o.t().dot(&dh_res));
                accumulate_bias(&mut grads, at.o_b, &dh_res);
                let d_o = dh_res.dot(&at.o_w.mat(p).t());
                let mut dq = Array2::<f64>::zeros((bsz * s_len, d));
                let mut dk = Array2::<f64>::zeros((bsz * s_len, d));
                let mut dv = Array2::<f64>::zeros((bsz * s_len, d));
                for b in 0..bsz {
                    let rows = b * s_len..(b + 1) * s_len;
                    for hd in 0..cfg.n_heads {
                        let cols = hd * dh..(hd + 1) * dh;
                        let pr = &ac.probs[b * cfg.n_heads + hd];
                        let dos = d_o.slice(s![rows.clone(), cols.clone()]);
                        let vs = ac.v.slice(s![rows.clone(), cols.clone()]);
                        let qs = ac.q.slice(s![rows.clone(), cols.clone()]);
                        let ks = ac.k.slice(s![rows.clone(), cols.clone()]);
                        let dp = dos.dot(&vs.t());
                        dv.slice_mut(s![rows.clone(), cols.clone()]).assign(&pr.t().dot(&dos));
                        let mut ds = Zip::from(pr).and(&dp).map_collect(|&a, &b| a * b);
                        for (mut ds_row, (p_row, dp_row)) in
                            ds.rows_mut().into_iter().zip(pr.rows().into_iter().zip(dp.rows()))
                        {
                            let dot = p_row.dot(&dp_row);
                            Zip::from(&mut ds_row).and(&p_row).for_each(|x, &pv| *x -= pv * dot);
                        }
                        ds *= attn_scale;
                        dq.slice_mut(s![rows.clone(), cols.clone()]).assign(&ds.dot(&ks));
                        dk.slice_mut(s![rows.clone(), cols.clone()]).assign(&ds.t().dot(&qs));
                        if cfg.attention == AttentionMode::Rope {
                            rotate_in_place(dq.slice_mut(s![rows.clone(), cols.clone()]), &positions, true);
                            rotate_in_place(dk.slice_mut(s![rows.clone(), cols]), &positions, true);
                        }
                    }
                }
                accumulate(&mut grads, at.q_w, &ac.n2.t().dot(&dq));
                accumulate(&mut grads, at.k_w, &ac.n2.t().dot(&dk));
                accumulate(&mut grads, at.v_w, &ac.n2.t().dot(&dv));
                let dn2 = dq.dot(&at.q_w.mat(p).t()) + dk.dot(&at.k_w.mat(p).t()) + dv.dot(&at.v_w.mat(p).t());
                dh_res += &layer_norm_backward(&dn2, &ac.n2, &ac.inv2);
            }

            accumulate(&mut grads, bl.ff_w2, &bc.g.t().dot(&dh_res));
            accumulate_bias(&mut grads, bl.ff_b2, &dh_res);
            let dg = dh_res.dot(&bl.ff_w2.mat(p).t());
            let df1 = silu_backward(&bc.f1, &dg);
            accumulate(&mut grads, bl.ff_w1, &bc.modulated.t().dot(&df1));
            accumulate_bias(&mut grads, bl.ff_b1, &df1);
            let dm = df1.dot(&bl.ff_w1.mat(p).t());
            let scale = bc.scale_shift.slice(s![.., ..d]);
            let dscale = &dm * &bc.n1;
            let dn1 = Zip::from(&dm).and(&scale).map_collect(|&g, &sc| g * (1.0 + sc));
            let dss = concatenate![Axis(1), dscale, dm];
            dh_res += &layer_norm_backward(&dn1, &bc.n1, &bc.inv1);
            accumulate(&mut grads, bl.film_w, &cache.gc.t().dot(&dss));
            accumulate_bias(&mut grads, bl.film_b, &dss);
            dgc += &dss.dot(&bl.film_w.mat(p).t());
        }

        let dcond = silu_backward(&cache.cond, &dgc);
        accumulate(&mut grads, l.fuse_w, &cache.cin.t().dot(&dcond));
        accumulate_bias(&mut grads, l.fuse_b, &dcond);
        let dcin = dcond.dot(&l.fuse_w.mat(p).t());

        let mut dtm = Array2::<f64>::zeros((bsz, d));
        let mut dau = Array2::<f64>::zeros((bsz * n, d));
        let mut dnull = Array2::<f64>::zeros((1, d));
        for b in 0..bsz {
            for r in 0..s_len {
                let row = dcin.row(b * s_len + r);
                let mut t_row = dtm.row_mut(b);
                t_row += &row.slice(s![..d]);
                if r < 2 {
                    let mut nr = dnull.row_mut(0);
                    nr += &row.slice(s![d..]);
                } else {
                    dau.row_mut(b * n + r - 2).assign(&row.slice(s![d..]));
                }
            }
        }
        accumulate(&mut grads, l.null_audio, &dnull);
        accumulate(&mut grads, l.audio_w, &cache.audio.t().dot(&dau));
        accumulate_bias(&mut grads, l.audio_b, &dau);

        accumulate(&mut grads, l.time_w2, &cache.ta.t().dot(&dtm));
        accumulate_bias(&mut grads, l.time_b2, &dtm);
        let dta = dtm.dot(&l.time_w2.mat(p).t());
        let dte = silu_backward(&cache.te, &dta);
        accumulate(&mut grads, l.time_w1, &cache.emb.t().dot(&dte));
        accumulate_bias(&mut grads, l.time_b1, &dte);

        accumulate(&mut grads, l.in_w, &cache.inputs.t().dot(&dh_res));
        accumulate_bias(&mut grads, l.in_b, &dh_res);
        grads
    }
}
