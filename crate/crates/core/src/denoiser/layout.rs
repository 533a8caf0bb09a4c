//! Flat parameter storage layout.
//!
//! Every trainable tensor lives in one contiguous `Vec<f64>`; a [`Slot`] names
//! its offset and 2-D shape (biases are `1 × n`). Gradients use the same layout.

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut2};

use super::{AttentionMode, DenoiserConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    pub fn mat<'a>(&self, data: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((self.rows, self.cols), &data[self.range()]).expect("slot shape matches layout")
    }

    pub fn mat_mut<'a>(&self, data: &'a mut [f64]) -> ArrayViewMut2<'a, f64> {
        ArrayViewMut2::from_shape((self.rows, self.cols), &mut data[self.range()]).expect("slot shape matches layout")
    }

    pub fn vec<'a>(&self, data: &'a [f64]) -> ArrayView1<'a, f64> {
        ArrayView1::from(&data[self.range()])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Normal with variance `1 / fan_in`.
    FanIn(usize),
    Zero,
    /// Small normal, for learned embedding tokens.
    Token,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamGroup {
    pub name: String,
    pub slot: Slot,
    pub init: Init,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttnSlots {
    pub q_w: Slot,
    pub k_w: Slot,
    pub v_w: Slot,
    pub o_w: Slot,
    pub o_b: Slot,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSlots {
    pub film_w: Slot,
    pub film_b: Slot,
    pub ff_w1: Slot,
    pub ff_b1: Slot,
    pub ff_w2: Slot,
    pub ff_b2: Slot,
    pub attn: Option<AttnSlots>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub in_w: Slot,
    pub in_b: Slot,
    pub time_w1: Slot,
    pub time_b1: Slot,
    pub time_w2: Slot,
    pub time_b2: Slot,
    pub audio_w: Slot,
    pub audio_b: Slot,
    pub null_audio: Slot,
    pub fuse_w: Slot,
    pub fuse_b: Slot,
    pub blocks: Vec<BlockSlots>,
    pub out_w: Slot,
    pub out_b: Slot,
    /// Per-channel gate on the input→output skip connection.
    pub skip: Slot,
    pub groups: Vec<ParamGroup>,
    pub total: usize,
}

struct Builder {
    offset: usize,
    groups: Vec<ParamGroup>,
}

impl Builder {
    fn add(&mut self, name: String, rows: usize, cols: usize, init: Init) -> Slot {
        let slot = Slot {
            offset: self.offset,
            rows,
            cols,
        };
        self.offset += slot.len();
        self.groups.push(ParamGroup { name, slot, init });
        slot
    }

    fn weight(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> Slot {
        self.add(name.into(), rows, cols, Init::FanIn(rows))
    }

    fn bias(&mut self, name: impl Into<String>, len: usize) -> Slot {
        self.add(name.into(), 1, len, Init::Zero)
    }
}

impl Layout {
    pub fn new(cfg: &DenoiserConfig) -> Self {
        let d = cfg.model_dim;
        let hidden = cfg.ff_mult * d;
        let mut b = Builder {
            offset: 0,
            groups: Vec::new(),
        };
        let in_w = b.weight("input.weight", cfg.latent_dim, d);
        let in_b = b.bias("input.bias", d);
        let time_w1 = b.weight("time_mlp.0.weight", d, d);
        let time_b1 = b.bias("time_mlp.0.bias", d);
        let time_w2 = b.weight("time_mlp.2.weight", d, d);
        let time_b2 = b.bias("time_mlp.2.bias", d);
        let audio_w = b.weight("audio.weight", cfg.audio_dim, d);
        let audio_b = b.bias("audio.bias", d);
        let null_audio = b.add("audio.null_token".into(), 1, d, Init::Token);
        let fuse_w = b.weight("fuse.weight", 2 * d, d);
        let fuse_b = b.bias("fuse.bias", d);
        let blocks = (0..cfg.n_blocks)
            .map(|i| {
                let p = format!("blocks.{i}");
                let film_w = b.weight(format!("{p}.film.weight"), d, 2 * d);
                let film_b = b.bias(format!("{p}.film.bias"), 2 * d);
                let ff_w1 = b.weight(format!("{p}.ff.0.weight"), d, hidden);
                let ff_b1 = b.bias(format!("{p}.ff.0.bias"), hidden);
                let ff_w2 = b.weight(format!("{p}.ff.2.weight"), hidden, d);
                let ff_b2 = b.bias(format!("{p}.ff.2.bias"), d);
                let attn = (cfg.attention != AttentionMode::Off).then(|| AttnSlots {
                    q_w: b.weight(format!("{p}.attn.q.weight"), d, d),
                    k_w: b.weight(format!("{p}.attn.k.weight"), d, d),
                    v_w: b.weight(format!("{p}.attn.v.weight"), d, d),
                    o_w: b.weight(format!("{p}.attn.out.weight"), d, d),
                    o_b: b.bias(format!("{p}.attn.out.bias"), d),
                });
                BlockSlots {
                    film_w,
                    film_b,
                    ff_w1,
                    ff_b1,
                    ff_w2,
                    ff_b2,
                    attn,
                }
            })
            .collect();
        let out_w = b.add("output.weight".into(), d, cfg.latent_dim, Init::Zero);
        let out_b = b.bias("output.bias", cfg.latent_dim);
        let skip = b.add("output.skip".into(), 1, cfg.latent_dim, Init::Zero);
        Self {
            in_w,
            in_b,
            time_w1,
            time_b1,
            time_w2,
            time_b2,
            audio_w,
            audio_b,
            null_audio,
            fuse_w,
            fuse_b,
            blocks,
            out_w,
            out_b,
            skip,
            total: b.offset,
            groups: b.groups,
        }
    }

    pub fn group(&self, name: &str) -> Option<&ParamGroup> {
        self.groups.iter().find(|g| g.name == name)
    }
}
