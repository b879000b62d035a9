//! Top-down (FPN), top-down plus bottom-up (PAFPN) and attention-augmented
//! (HAFPN) fusion over three feature levels.
//!
//! ```text
//! o5 = A5(p5)
//! o4 = fuse4(A4(p4 + up(o5)))
//! o3 = fuse3(A3(p3 + up(o4)))
//! ```
//!
//! `A*` is the identity unless attention is enabled. With pre-merge
//! placement the attention block moves onto the lateral input instead:
//! `o4 = fuse4(A4(p4) + up(o5))`. The bottom-up path of PAFPN is
//!
//! ```text
//! n3 = o3
//! n4 = bfuse4(o4 + down3(n3))
//! n5 = bfuse5(o5 + down4(n4))
//! ```

use std::fmt;
use std::str::FromStr;

use crate::attention::{Ham, HamCache, HamConfig, DEFAULT_HEADS, DEFAULT_REDUCTION};
use crate::error::{Error, Result};
use crate::nn::conv::Conv2d;
use crate::nn::mlp::DEFAULT_HIDDEN_RATIO;
use crate::nn::params::{join, Params};
use crate::nn::pool::{upsample_nearest_2x, upsample_nearest_2x_backward};
use crate::pyramid::levels::FeatureLevels;
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_CHANNELS: usize = 8;
pub const DEFAULT_SEED: u64 = 0;

const STREAM_BACKBONE: u64 = 1;
const STREAM_TOP_DOWN: u64 = 2;
const STREAM_BOTTOM_UP: u64 = 3;
const STREAM_ATTENTION: u64 = 4;

macro_rules! keyword_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident => $kw:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn name(self) -> &'static str {
                match self { $($name::$variant => $kw),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($kw => Ok($name::$variant),)+
                    other => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($name), " `{}`"), other
                    ))),
                }
            }
        }
    };
}

keyword_enum!(Variant { Fpn => "fpn", Pafpn => "pafpn", Hafpn => "hafpn" });
keyword_enum!(
    /// Where each attention block sits relative to its top-down merge.
    Placement { PostMerge => "post-merge", PreMerge => "pre-merge" }
);
keyword_enum!(
    /// How a lateral map and an upsampled (or downsampled) map are combined.
    /// `Concat` stacks channels and the following fusion conv maps back to C.
    MergeMode { Add => "add", Concat => "concat" }
);
keyword_enum!(
    /// `Identity` keeps the configured wiring but replaces every attention
    /// block with the identity map.
    AttentionMode { Full => "full", Identity => "identity" }
);

#[derive(Debug, Clone, PartialEq)]
pub struct NeckConfig {
    pub variant: Variant,
    pub use_emsa: bool,
    pub use_ca: bool,
    pub channels: usize,
    pub heads: usize,
    pub reduction: usize,
    pub hidden_ratio: f64,
    pub placement: Placement,
    pub merge: MergeMode,
    pub attention: AttentionMode,
    pub seed: u64,
}

impl Default for NeckConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Hafpn,
            use_emsa: true,
            use_ca: true,
            channels: DEFAULT_CHANNELS,
            heads: DEFAULT_HEADS,
            reduction: DEFAULT_REDUCTION,
            hidden_ratio: DEFAULT_HIDDEN_RATIO,
            placement: Placement::PostMerge,
            merge: MergeMode::Add,
            attention: AttentionMode::Full,
            seed: DEFAULT_SEED,
        }
    }
}

impl NeckConfig {
    pub fn plain(variant: Variant, channels: usize) -> Self {
        Self {
            variant,
            use_emsa: false,
            use_ca: false,
            channels,
            ..Self::default()
        }
    }

    /// Whether attention blocks are present in the dataflow.
    pub fn has_attention(&self) -> bool {
        self.use_emsa || self.use_ca
    }

    /// Channel count seen by the attention block at `level` (0 = p3).
    pub fn attention_channels(&self, level: usize) -> usize {
        let merged = level < 2 && self.placement == Placement::PostMerge;
        if merged && self.merge == MergeMode::Concat {
            2 * self.channels
        } else {
            self.channels
        }
    }

    pub fn ham_config(&self, level: usize) -> HamConfig {
        HamConfig {
            channels: self.attention_channels(level),
            heads: self.heads,
            reduction: self.reduction,
            hidden_ratio: self.hidden_ratio,
            use_emsa: self.use_emsa,
            use_ca: self.use_ca,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::Config("channels must be positive".into()));
        }
        if self.variant == Variant::Hafpn && !self.has_attention() {
            return Err(Error::Config("hafpn requires at least one of use_emsa / use_ca".into()));
        }
        if self.has_attention() {
            for level in 0..3 {
                self.ham_config(level).validate()?;
            }
        }
        Ok(())
    }
}

impl fmt::Display for NeckConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "variant={}", self.variant)?;
        writeln!(f, "use_emsa={}", self.use_emsa)?;
        writeln!(f, "use_ca={}", self.use_ca)?;
        writeln!(f, "channels={}", self.channels)?;
        writeln!(f, "heads={}", self.heads)?;
        writeln!(f, "reduction={}", self.reduction)?;
        writeln!(f, "hidden_ratio={}", self.hidden_ratio)?;
        writeln!(f, "placement={}", self.placement)?;
        writeln!(f, "merge={}", self.merge)?;
        writeln!(f, "attention={}", self.attention)?;
        write!(f, "seed={}", self.seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AttentionBlock<T> {
    Identity,
    Ham(Box<Ham<T>>),
}

impl<T: Scalar> Params<T> for AttentionBlock<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor<T>)) {
        if let AttentionBlock::Ham(h) = self {
            h.visit(prefix, f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        if let AttentionBlock::Ham(h) = self {
            h.visit_mut(prefix, f);
        }
    }
}

impl<T: Scalar> AttentionBlock<T> {
    fn apply(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Option<HamCache<T>>)> {
        match self {
            AttentionBlock::Identity => Ok((x.clone(), None)),
            AttentionBlock::Ham(h) => {
                let (y, c) = h.forward_cached(x)?;
                Ok((y, Some(c)))
            }
        }
    }

    fn back(&self, cache: &Option<HamCache<T>>, dy: Tensor<T>) -> Result<(Tensor<T>, Self)> {
        match (self, cache) {
            (AttentionBlock::Ham(h), Some(c)) => {
                let (dx, g) = h.backward(c, &dy)?;
                Ok((dx, AttentionBlock::Ham(Box::new(g))))
            }
            _ => Ok((dy, AttentionBlock::Identity)),
        }
    }
}

/// Bottom-up path parameters: stride-2 downsamplers and fusion convs.
#[derive(Debug, Clone, PartialEq)]
pub struct BottomUp<T> {
    pub down3: Conv2d<T>,
    pub down4: Conv2d<T>,
    pub fuse4: Conv2d<T>,
    pub fuse5: Conv2d<T>,
}

impl<T: Scalar> Params<T> for BottomUp<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor<T>)) {
        self.down3.visit(&join(prefix, "down3"), f);
        self.down4.visit(&join(prefix, "down4"), f);
        self.fuse4.visit(&join(prefix, "fuse4"), f);
        self.fuse5.visit(&join(prefix, "fuse5"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.down3.visit_mut(&join(prefix, "down3"), f);
        self.down4.visit_mut(&join(prefix, "down4"), f);
        self.fuse4.visit_mut(&join(prefix, "fuse4"), f);
        self.fuse5.visit_mut(&join(prefix, "fuse5"), f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neck<T> {
    pub variant: Variant,
    pub placement: Placement,
    pub merge: MergeMode,
    pub channels: usize,
    pub fuse4: Conv2d<T>,
    pub fuse3: Conv2d<T>,
    pub bottom_up: Option<BottomUp<T>>,
    /// Attention blocks for p3, p4, p5.
    pub attention: Option<[AttentionBlock<T>; 3]>,
}

impl<T: Scalar> Params<T> for Neck<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor<T>)) {
        self.fuse4.visit(&join(prefix, "fuse4"), f);
        self.fuse3.visit(&join(prefix, "fuse3"), f);
        if let Some(b) = &self.bottom_up {
            b.visit(&join(prefix, "bottom_up"), f);
        }
        if let Some(a) = &self.attention {
            for (i, blk) in a.iter().enumerate() {
                blk.visit(&join(prefix, &format!("ham{}", i + 3)), f);
            }
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.fuse4.visit_mut(&join(prefix, "fuse4"), f);
        self.fuse3.visit_mut(&join(prefix, "fuse3"), f);
        if let Some(b) = &mut self.bottom_up {
            b.visit_mut(&join(prefix, "bottom_up"), f);
        }
        if let Some(a) = &mut self.attention {
            for (i, blk) in a.iter_mut().enumerate() {
                blk.visit_mut(&join(prefix, &format!("ham{}", i + 3)), f);
            }
        }
    }
}

/// Intermediates of one neck evaluation.
#[derive(Debug, Clone)]
pub struct NeckCache<T> {
    levels: FeatureLevels<T>,
    /// Inputs of the top-down fusion convs for p3 and p4.
    fuse_in: [Tensor<T>; 2],
    ham: [Option<HamCache<T>>; 3],
    outputs: [Tensor<T>; 3],
    /// Inputs of down3, down4, bfuse4, bfuse5.
    bottom_up: Option<[Tensor<T>; 4]>,
}

fn merge<T: Scalar>(mode: MergeMode, lateral: &Tensor<T>, other: &Tensor<T>) -> Result<Tensor<T>> {
    match mode {
        MergeMode::Add => lateral.add(other),
        MergeMode::Concat => Tensor::concat(&[lateral, other], 1),
    }
}

fn merge_back<T: Scalar>(mode: MergeMode, channels: usize, d: Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    match mode {
        MergeMode::Add => Ok((d.clone(), d)),
        MergeMode::Concat => {
            let mut parts = d.split(1, &[channels, channels])?.into_iter();
            Ok((parts.next().unwrap(), parts.next().unwrap()))
        }
    }
}

impl<T: Scalar> Neck<T> {
    /// Parameter streams are forked per component, so variants that share a
    /// component (for example the top-down convs of fpn and hafpn) get
    /// identical weights under the same seed.
    pub fn init(cfg: &NeckConfig, rng: &Rng) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        let fuse_in = match cfg.merge {
            MergeMode::Add => c,
            MergeMode::Concat => 2 * c,
        };
        let mut td = rng.fork(STREAM_TOP_DOWN);
        let fuse4 = Conv2d::init(fuse_in, c, 3, 1, 1, 1, true, &mut td)?;
        let fuse3 = Conv2d::init(fuse_in, c, 3, 1, 1, 1, true, &mut td)?;
        let bottom_up = if cfg.variant == Variant::Pafpn {
            let mut bu = rng.fork(STREAM_BOTTOM_UP);
            Some(BottomUp {
                down3: Conv2d::init(c, c, 3, 2, 1, 1, true, &mut bu)?,
                down4: Conv2d::init(c, c, 3, 2, 1, 1, true, &mut bu)?,
                fuse4: Conv2d::init(fuse_in, c, 3, 1, 1, 1, true, &mut bu)?,
                fuse5: Conv2d::init(fuse_in, c, 3, 1, 1, 1, true, &mut bu)?,
            })
        } else {
            None
        };
        let attention = if cfg.has_attention() {
            let mut ar = rng.fork(STREAM_ATTENTION);
            let mut block = |level: usize| -> Result<AttentionBlock<T>> {
                match cfg.attention {
                    AttentionMode::Identity => Ok(AttentionBlock::Identity),
                    AttentionMode::Full => Ok(AttentionBlock::Ham(Box::new(Ham::init(
                        &cfg.ham_config(level),
                        &mut ar,
                    )?))),
                }
            };
            Some([block(0)?, block(1)?, block(2)?])
        } else {
            None
        };
        Ok(Self {
            variant: cfg.variant,
            placement: cfg.placement,
            merge: cfg.merge,
            channels: c,
            fuse4,
            fuse3,
            bottom_up,
            attention,
        })
    }

    fn check_levels(&self, levels: &FeatureLevels<T>) -> Result<()> {
        levels.validate()?;
        if levels.channels() != self.channels {
            return Err(Error::shape(
                "neck",
                format!("{} channels", self.channels),
                format!("{} channels", levels.channels()),
            ));
        }
        Ok(())
    }

    fn attend(&self, level: usize, x: &Tensor<T>) -> Result<(Tensor<T>, Option<HamCache<T>>)> {
        match &self.attention {
            Some(a) => a[level].apply(x),
            None => Ok((x.clone(), None)),
        }
    }

    pub fn forward(&self, levels: &FeatureLevels<T>) -> Result<FeatureLevels<T>> {
        Ok(self.forward_cached(levels)?.0)
    }

    pub fn forward_cached(&self, levels: &FeatureLevels<T>) -> Result<(FeatureLevels<T>, NeckCache<T>)> {
        self.check_levels(levels)?;
        let post = self.placement == Placement::PostMerge;
        let (o5, h5) = self.attend(2, &levels.p5)?;

        let step = |level: usize, lateral: &Tensor<T>, coarse: &Tensor<T>, fuse: &Conv2d<T>| {
            let up = upsample_nearest_2x(coarse)?;
            let (fin, cache) = if post {
                let m = merge(self.merge, lateral, &up)?;
                self.attend(level, &m)?
            } else {
                let (q, cache) = self.attend(level, lateral)?;
                (merge(self.merge, &q, &up)?, cache)
            };
            let out = fuse.forward(&fin)?;
            Ok::<_, Error>((out, fin, cache))
        };
        let (o4, f4, h4) = step(1, &levels.p4, &o5, &self.fuse4)?;
        let (o3, f3, h3) = step(0, &levels.p3, &o4, &self.fuse3)?;

        let (out, bottom_up) = match &self.bottom_up {
            None => (FeatureLevels::new(o3.clone(), o4.clone(), o5.clone())?, None),
            Some(bu) => {
                let d3 = bu.down3.forward(&o3)?;
                let b4 = merge(self.merge, &o4, &d3)?;
                let n4 = bu.fuse4.forward(&b4)?;
                let d4 = bu.down4.forward(&n4)?;
                let b5 = merge(self.merge, &o5, &d4)?;
                let n5 = bu.fuse5.forward(&b5)?;
                let cache = [o3.clone(), n4.clone(), b4, b5];
                (FeatureLevels::new(o3.clone(), n4, n5)?, Some(cache))
            }
        };
        let cache = NeckCache {
            levels: levels.clone(),
            fuse_in: [f3, f4],
            ham: [h3, h4, h5],
            outputs: [o3, o4, o5],
            bottom_up,
        };
        Ok((out, cache))
    }

    pub fn backward(&self, cache: &NeckCache<T>, d: &FeatureLevels<T>) -> Result<(FeatureLevels<T>, Self)> {
        let c = self.channels;
        let [o3, o4, o5] = &cache.outputs;
        let (mut do3, mut do4, mut do5) = (d.p3.clone(), d.p4.clone(), d.p5.clone());
        let mut grads = self.clone();

        if let (Some(bu), Some([n3, n4, b4, b5])) = (&self.bottom_up, &cache.bottom_up) {
            // Outputs are (n3, n4, n5); n3 is o3 itself.
            let dn5 = d.p5.clone();
            let mut dn4 = d.p4.clone();
            let (db5, g_f5) = bu.fuse5.backward(b5, &dn5)?;
            let (d_o5, dd4) = merge_back(self.merge, c, db5)?;
            let (dn4_extra, g_d4) = bu.down4.backward(n4, &dd4)?;
            dn4.add_assign(&dn4_extra)?;
            let (db4, g_f4) = bu.fuse4.backward(b4, &dn4)?;
            let (d_o4, dd3) = merge_back(self.merge, c, db4)?;
            let (dn3_extra, g_d3) = bu.down3.backward(n3, &dd3)?;
            do3.add_assign(&dn3_extra)?;
            do4 = d_o4;
            do5 = d_o5;
            grads.bottom_up = Some(BottomUp {
                down3: g_d3,
                down4: g_d4,
                fuse4: g_f4,
                fuse5: g_f5,
            });
        }
        debug_assert_eq!(o5.shape(), do5.shape());

        let post = self.placement == Placement::PostMerge;
        let mut g_att: [Option<AttentionBlock<T>>; 3] = [None, None, None];
        let mut back_attention = |level: usize, dy: Tensor<T>| -> Result<Tensor<T>> {
            match &self.attention {
                Some(a) => {
                    let (dx, g) = a[level].back(&cache.ham[level], dy)?;
                    g_att[level] = Some(g);
                    Ok(dx)
                }
                None => Ok(dy),
            }
        };

        // p3 level.
        let (dfin3, g_fuse3) = self.fuse3.backward(&cache.fuse_in[0], &do3)?;
        let (dp3, du4) = if post {
            merge_back(self.merge, c, back_attention(0, dfin3)?)?
        } else {
            let (dq, du) = merge_back(self.merge, c, dfin3)?;
            (back_attention(0, dq)?, du)
        };
        do4.add_assign(&upsample_nearest_2x_backward(&du4)?)?;
        debug_assert_eq!(o4.shape(), do4.shape());
        debug_assert_eq!(o3.shape(), do3.shape());

        // p4 level.
        let (dfin4, g_fuse4) = self.fuse4.backward(&cache.fuse_in[1], &do4)?;
        let (dp4, du5) = if post {
            merge_back(self.merge, c, back_attention(1, dfin4)?)?
        } else {
            let (dq, du) = merge_back(self.merge, c, dfin4)?;
            (back_attention(1, dq)?, du)
        };
        do5.add_assign(&upsample_nearest_2x_backward(&du5)?)?;

        let dp5 = back_attention(2, do5)?;

        grads.fuse3 = g_fuse3;
        grads.fuse4 = g_fuse4;
        if grads.attention.is_some() {
            let [a, b, c] = g_att.map(|g| g.expect("attention gradient"));
            grads.attention = Some([a, b, c]);
        }
        let dlevels = FeatureLevels::new(dp3, dp4, dp5)?;
        debug_assert_eq!(dlevels.shapes(), cache.levels.shapes());
        Ok((dlevels, grads))
    }
}

fn require_variant<T: Scalar>(neck: &Neck<T>, want: Variant) -> Result<()> {
    if neck.variant != want {
        return Err(Error::Config(format!(
            "{want}_fuse called with a {} neck",
            neck.variant
        )));
    }
    Ok(())
}

pub fn fpn_fuse<T: Scalar>(levels: &FeatureLevels<T>, neck: &Neck<T>) -> Result<FeatureLevels<T>> {
    require_variant(neck, Variant::Fpn)?;
    neck.forward(levels)
}

pub fn pafpn_fuse<T: Scalar>(levels: &FeatureLevels<T>, neck: &Neck<T>) -> Result<FeatureLevels<T>> {
    require_variant(neck, Variant::Pafpn)?;
    neck.forward(levels)
}

pub fn hafpn_fuse<T: Scalar>(levels: &FeatureLevels<T>, neck: &Neck<T>) -> Result<FeatureLevels<T>> {
    require_variant(neck, Variant::Hafpn)?;
    neck.forward(levels)
}

pub(crate) fn backbone_stream(rng: &Rng) -> Rng {
    rng.fork(STREAM_BACKBONE)
}
