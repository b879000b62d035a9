//! Seeded finite-difference verification of every backward pass, grouped
//! into scopes. Each op is checked on [`CASES_PER_OP`] random inputs and
//! parameter draws in double precision.

use std::fmt;

use crate::attention::{CoordAttention, Emsa, Ham, HamConfig};
use crate::error::{Error, Result};
use crate::grad::{check_case, BlockCase, GradCase, DEFAULT_EPS};
use crate::nn::params::{map_all, Params};
use crate::nn::pool;
use crate::nn::{Activation, Conv2d, LayerNorm, Linear, Mlp};
use crate::pyramid::{self, Backbone, MergeMode, NeckConfig, Placement, PyramidModel, Variant};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const CASES_PER_OP: usize = 20;
pub const LAYER_THRESHOLD: f64 = 1e-5;
pub const NECK_THRESHOLD: f64 = 1e-4;
/// End-to-end cases per neck variant; each covers thousands of coordinates.
pub const NECK_CASES: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Layer,
    Attention,
    Neck,
}

impl Scope {
    pub const ALL: [Scope; 3] = [Scope::Layer, Scope::Attention, Scope::Neck];

    pub fn name(self) -> &'static str {
        match self {
            Scope::Layer => "layer",
            Scope::Attention => "attention",
            Scope::Neck => "neck",
        }
    }

    pub fn threshold(self) -> f64 {
        match self {
            Scope::Layer | Scope::Attention => LAYER_THRESHOLD,
            Scope::Neck => NECK_THRESHOLD,
        }
    }
}

impl std::str::FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "layer" => Ok(Scope::Layer),
            "attention" => Ok(Scope::Attention),
            "neck" => Ok(Scope::Neck),
            other => Err(Error::Config(format!("unknown gradcheck scope `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OpReport {
    pub op: String,
    pub cases: usize,
    pub max_rel_err: f64,
    /// Tensor (input or parameter) where the worst error occurred.
    pub worst: String,
    pub threshold: f64,
}

impl OpReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.threshold
    }
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub scope: Scope,
    pub ops: Vec<OpReport>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.ops.iter().all(OpReport::passed)
    }
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "gradcheck scope={} threshold={:e}",
            self.scope.name(),
            self.scope.threshold()
        )?;
        for op in &self.ops {
            writeln!(
                f,
                "{:<6} {:<22} cases={:<3} max_rel_err={:.3e} worst={}",
                if op.passed() { "PASS" } else { "FAIL" },
                op.op,
                op.cases,
                op.max_rel_err,
                op.worst
            )?;
        }
        Ok(())
    }
}

/// Runs a list of cases for one op and folds them into a report row.
pub fn check_op(op: &str, cases: &[Box<dyn GradCase>], threshold: f64) -> Result<OpReport> {
    let mut worst = (0.0f64, String::from("-"));
    for case in cases {
        let res = check_case(case.as_ref(), DEFAULT_EPS)?;
        for (seg, e) in res.segments {
            if e > worst.0 || e.is_nan() {
                worst = (e, seg);
            }
        }
    }
    Ok(OpReport {
        op: op.to_string(),
        cases: cases.len(),
        max_rel_err: worst.0,
        worst: worst.1,
        threshold,
    })
}

pub fn run_scope(scope: Scope, seed: u64) -> Result<GradReport> {
    let ops = match scope {
        Scope::Layer => layer_ops(seed)?,
        Scope::Attention => attention_ops(seed)?,
        Scope::Neck => neck_ops(seed)?,
    };
    let reports = ops
        .iter()
        .map(|(name, cases)| check_op(name, cases, scope.threshold()))
        .collect::<Result<Vec<_>>>()?;
    Ok(GradReport { scope, ops: reports })
}

type OpCases = (String, Vec<Box<dyn GradCase>>);
type MakeCase = dyn Fn(&str, &mut Rng) -> Result<Box<dyn GradCase>>;

/// Adds `U(-scale, scale)` noise to every learnable scalar.
pub fn jitter<P: Params<f64>>(p: &mut P, rng: &mut Rng, scale: f64) {
    map_all(p, |_, t| {
        for v in t.data_mut() {
            *v += rng.uniform::<f64>(-scale, scale);
        }
    });
}

/// Redraws entries with magnitude in `[0.5, 1)` and random sign. Used for
/// the head-mixing weights: with few heads a near-zero entry cuts the
/// query/key path, leaving gradients there at the finite-difference noise
/// floor.
fn away_from_zero(t: &mut Tensor<f64>, rng: &mut Rng) {
    for v in t.data_mut() {
        let m = rng.uniform::<f64>(0.5, 1.0);
        *v = if rng.below(2) == 0 { m } else { -m };
    }
}

fn rand(shape: &[usize], rng: &mut Rng, lo: f64, hi: f64) -> Result<Tensor<f64>> {
    Tensor::rand_uniform(shape, rng, lo, hi)
}

fn case_rng(seed: u64, op: u64, i: usize) -> Rng {
    Rng::new(seed).fork(op * 1024 + i as u64)
}

/// Single-input, single-output block case from plain closures.
fn block<P, F, B>(name: &str, x: Tensor<f64>, params: P, probe: Tensor<f64>, f: F, b: B) -> Box<dyn GradCase>
where
    P: Params<f64> + Clone + Sync + 'static,
    F: Fn(&P, &Tensor<f64>) -> Result<Tensor<f64>> + Sync + 'static,
    B: Fn(&P, &Tensor<f64>, &Tensor<f64>) -> Result<(Tensor<f64>, P)> + Sync + 'static,
{
    Box::new(BlockCase {
        name: name.to_string(),
        inputs: vec![x],
        params,
        probes: vec![probe],
        forward: Box::new(move |p, xs| Ok(vec![f(p, &xs[0])?])),
        backward: Box::new(move |p, xs, dys| {
            let (dx, g) = b(p, &xs[0], &dys[0])?;
            Ok((vec![dx], g))
        }),
    })
}

fn probe_for(shape: &[usize], rng: &mut Rng) -> Result<Tensor<f64>> {
    rand(shape, rng, -1.0, 1.0)
}

fn conv_case(name: &str, rng: &mut Rng, groups: usize, stride: usize, depthwise: bool) -> Result<Box<dyn GradCase>> {
    let n = 1 + rng.below(2);
    let (c, out_c, k, pad) = if depthwise {
        let c = 2 + rng.below(3);
        (c, c, 3, 1)
    } else {
        (
            groups * (1 + rng.below(2)),
            groups * (1 + rng.below(3)),
            1 + 2 * rng.below(2),
            rng.below(2),
        )
    };
    let g = if depthwise { c } else { groups };
    let h = 3 + rng.below(4);
    let w = 3 + rng.below(4);
    let mut conv = Conv2d::init(c, out_c, k, stride, pad, g, true, rng)?;
    jitter(&mut conv, rng, 0.2);
    let x = rand(&[n, c, h, w], rng, -1.0, 1.0)?;
    let y = conv.forward(&x)?;
    let probe = probe_for(y.shape(), rng)?;
    Ok(block(
        name,
        x,
        conv,
        probe,
        |p, x| p.forward(x),
        |p, x, dy| p.backward(x, dy),
    ))
}

/// Input in `[-5, 5]` kept at least `1e-3` away from the hard-sigmoid kinks.
fn activation_input(shape: &[usize], rng: &mut Rng) -> Result<Tensor<f64>> {
    let mut x = rand(shape, rng, -5.0, 5.0)?;
    for v in x.data_mut() {
        while (v.abs() - 3.0).abs() < 1e-3 {
            *v = rng.uniform(-5.0, 5.0);
        }
    }
    Ok(x)
}

fn layer_ops(seed: u64) -> Result<Vec<OpCases>> {
    let mut ops: Vec<OpCases> = Vec::new();
    let mut push = |name: &str, op_id: u64, make: &MakeCase| -> Result<()> {
        let cases = (0..CASES_PER_OP)
            .map(|i| make(name, &mut case_rng(seed, op_id, i)))
            .collect::<Result<Vec<_>>>()?;
        ops.push((name.to_string(), cases));
        Ok(())
    };

    push("conv2d", 1, &|name, rng| {
        let stride = 1 + rng.below(2);
        conv_case(name, rng, 1, stride, false)
    })?;
    push("conv2d_grouped", 2, &|name, rng| conv_case(name, rng, 2, 1, false))?;
    push("dwconv3x3", 3, &|name, rng| conv_case(name, rng, 1, 1, true))?;
    push("linear", 4, &|name, rng| {
        let (m, fi, fo) = (1 + rng.below(4), 1 + rng.below(5), 1 + rng.below(5));
        let mut l = Linear::init(fi, fo, rng)?;
        jitter(&mut l, rng, 0.2);
        let x = rand(&[2, m, fi], rng, -1.0, 1.0)?;
        let probe = probe_for(&[2, m, fo], rng)?;
        Ok(block(
            name,
            x,
            l,
            probe,
            |p, x| p.forward(x),
            |p, x, dy| p.backward(x, dy),
        ))
    })?;
    push("layer_norm", 5, &|name, rng| {
        let c = 2 + rng.below(5);
        let mut ln = LayerNorm::identity(c)?;
        jitter(&mut ln, rng, 0.5);
        let x = rand(&[2, c, 1 + rng.below(3), 1 + rng.below(3)], rng, -2.0, 2.0)?;
        let probe = probe_for(x.shape(), rng)?;
        Ok(block(
            name,
            x,
            ln,
            probe,
            |p, x| p.forward(x),
            |p, x, dy| p.backward(x, dy),
        ))
    })?;
    for (i, act) in Activation::ALL.into_iter().enumerate() {
        push(act.name(), 10 + i as u64, &move |name, rng| {
            let x = activation_input(&[2, 3, 2, 2], rng)?;
            let probe = probe_for(x.shape(), rng)?;
            Ok(block(
                name,
                x,
                (),
                probe,
                move |_, x| act.forward(x),
                move |_, x, dy| Ok((act.backward(x, dy)?, ())),
            ))
        })?;
    }
    push("global_avg_pool_h", 20, &|name, rng| {
        let x = rand(&[2, 2, 1 + rng.below(4), 1 + rng.below(4)], rng, -1.0, 1.0)?;
        let y = pool::global_avg_pool_h(&x)?;
        let probe = probe_for(y.shape(), rng)?;
        Ok(block(
            name,
            x,
            (),
            probe,
            |_, x| pool::global_avg_pool_h(x),
            |_, x, dy| Ok((pool::global_avg_pool_h_backward(x.shape(), dy)?, ())),
        ))
    })?;
    push("global_avg_pool_w", 21, &|name, rng| {
        let x = rand(&[2, 2, 1 + rng.below(4), 1 + rng.below(4)], rng, -1.0, 1.0)?;
        let y = pool::global_avg_pool_w(&x)?;
        let probe = probe_for(y.shape(), rng)?;
        Ok(block(
            name,
            x,
            (),
            probe,
            |_, x| pool::global_avg_pool_w(x),
            |_, x, dy| Ok((pool::global_avg_pool_w_backward(x.shape(), dy)?, ())),
        ))
    })?;
    push("upsample_nearest_2x", 22, &|name, rng| {
        let x = rand(&[1, 2, 1 + rng.below(3), 1 + rng.below(3)], rng, -1.0, 1.0)?;
        let y = pool::upsample_nearest_2x(&x)?;
        let probe = probe_for(y.shape(), rng)?;
        Ok(block(
            name,
            x,
            (),
            probe,
            |_, x| pool::upsample_nearest_2x(x),
            |_, _, dy| Ok((pool::upsample_nearest_2x_backward(dy)?, ())),
        ))
    })?;
    push("mlp", 23, &|name, rng| {
        let f = 2 + rng.below(4);
        let mut m = Mlp::init(f, 2.0, rng)?;
        jitter(&mut m, rng, 0.2);
        let x = rand(&[2, 1 + rng.below(4), f], rng, -1.0, 1.0)?;
        let probe = probe_for(x.shape(), rng)?;
        Ok(block(
            name,
            x,
            m,
            probe,
            |p, x| p.forward(x),
            |p, x, dy| p.backward(x, dy),
        ))
    })?;
    Ok(ops)
}

fn emsa_case(name: &str, rng: &mut Rng, heads: usize, shape: Option<[usize; 4]>) -> Result<Box<dyn GradCase>> {
    let shape = shape.unwrap_or_else(|| {
        [
            1 + rng.below(2),
            heads * (1 + rng.below(2)),
            1 + rng.below(3),
            1 + rng.below(3),
        ]
    });
    let mut e = Emsa::init(shape[1], heads, rng)?;
    jitter(&mut e, rng, 0.3);
    away_from_zero(&mut e.score_fc.weight, rng);
    away_from_zero(&mut e.mix_fc.weight, rng);
    let x = rand(&shape, rng, -1.0, 1.0)?;
    let probe = probe_for(&shape, rng)?;
    Ok(block(
        name,
        x,
        e,
        probe,
        |p, x| p.forward(x),
        |p, x, dy| {
            let (_, cache) = p.forward_cached(x)?;
            p.backward(&cache, dy)
        },
    ))
}

fn ham_case(name: &str, rng: &mut Rng, use_emsa: bool, use_ca: bool, shape: [usize; 4]) -> Result<Box<dyn GradCase>> {
    let cfg = HamConfig {
        channels: shape[1],
        heads: 2,
        reduction: 2,
        hidden_ratio: 2.0,
        use_emsa,
        use_ca,
    };
    let mut ham = Ham::init(&cfg, rng)?;
    jitter(&mut ham, rng, 0.2);
    if let Some(e) = ham.emsa.as_mut() {
        away_from_zero(&mut e.score_fc.weight, rng);
        away_from_zero(&mut e.mix_fc.weight, rng);
    }
    let x = rand(&shape, rng, -1.0, 1.0)?;
    let probe = probe_for(&shape, rng)?;
    Ok(block(
        name,
        x,
        ham,
        probe,
        |p, x| p.forward(x),
        |p, x, dy| {
            let (_, cache) = p.forward_cached(x)?;
            p.backward(&cache, dy)
        },
    ))
}

fn attention_ops(seed: u64) -> Result<Vec<OpCases>> {
    let mut ops: Vec<OpCases> = Vec::new();
    let mut push = |name: &str, op_id: u64, make: &MakeCase| -> Result<()> {
        let cases = (0..CASES_PER_OP)
            .map(|i| make(name, &mut case_rng(seed, op_id, i)))
            .collect::<Result<Vec<_>>>()?;
        ops.push((name.to_string(), cases));
        Ok(())
    };
    push("emsa", 100, &|name, rng| {
        let shape = if rng.below(2) == 0 { Some([1, 4, 2, 2]) } else { None };
        emsa_case(name, rng, 2, shape)
    })?;
    push("emsa_single_head", 101, &|name, rng| emsa_case(name, rng, 1, None))?;
    push("coord_attention", 102, &|name, rng| {
        let mut ca = CoordAttention::init(4, 2, rng)?;
        jitter(&mut ca, rng, 0.3);
        let shape = [1 + rng.below(2), 4, 3, 5];
        let x = rand(&shape, rng, -1.0, 1.0)?;
        let probe = probe_for(&shape, rng)?;
        Ok(block(
            name,
            x,
            ca,
            probe,
            |p, x| p.forward(x),
            |p, x, dy| {
                let (_, cache) = p.forward_cached(x)?;
                p.backward(&cache, dy)
            },
        ))
    })?;
    push("ham", 103, &|name, rng| ham_case(name, rng, true, true, [1, 4, 2, 3]))?;
    push("ham_emsa_only", 104, &|name, rng| {
        ham_case(name, rng, true, false, [1, 4, 3, 2])
    })?;
    push("ham_ca_only", 105, &|name, rng| {
        ham_case(name, rng, false, true, [2, 4, 2, 3])
    })?;
    Ok(ops)
}

/// Backbone plus neck on a `[1, 3, 16, 16]` image with four channels.
pub fn composite_case(name: &str, cfg: &NeckConfig, rng: &mut Rng) -> Result<Box<dyn GradCase>> {
    let mut model = PyramidModel::<f64>::init(cfg, rng)?;
    jitter(&mut model, rng, 0.1);
    let image = rand(&[1, 3, 16, 16], rng, -1.0, 1.0)?;
    let out = model.forward(&image)?;
    let probes = out
        .as_array()
        .iter()
        .map(|t| probe_for(t.shape(), rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(Box::new(BlockCase {
        name: name.to_string(),
        inputs: vec![image],
        params: model,
        probes,
        forward: Box::new(|m: &PyramidModel<f64>, xs| Ok(m.forward(&xs[0])?.into_vec())),
        backward: Box::new(|m: &PyramidModel<f64>, xs, dys| {
            let (dx, g) = m.backward(&xs[0], &pyramid::FeatureLevels::from_slice(dys)?)?;
            Ok((vec![dx], g))
        }),
    }))
}

fn neck_ops(seed: u64) -> Result<Vec<OpCases>> {
    let base = NeckConfig {
        channels: 4,
        heads: 2,
        reduction: 2,
        ..NeckConfig::default()
    };
    let variants: Vec<(&str, NeckConfig)> = vec![
        (
            "backbone_fpn",
            NeckConfig {
                variant: Variant::Fpn,
                use_emsa: false,
                use_ca: false,
                ..base.clone()
            },
        ),
        (
            "backbone_pafpn",
            NeckConfig {
                variant: Variant::Pafpn,
                use_emsa: false,
                use_ca: false,
                ..base.clone()
            },
        ),
        (
            "backbone_hafpn",
            NeckConfig {
                variant: Variant::Hafpn,
                ..base.clone()
            },
        ),
        (
            "backbone_hafpn_premerge",
            NeckConfig {
                variant: Variant::Hafpn,
                placement: Placement::PreMerge,
                use_ca: false,
                ..base.clone()
            },
        ),
        (
            "backbone_pafpn_concat_ham",
            NeckConfig {
                variant: Variant::Pafpn,
                merge: MergeMode::Concat,
                ..base.clone()
            },
        ),
    ];
    let mut ops = Vec::new();
    for (op_id, (name, cfg)) in variants.into_iter().enumerate() {
        let cases = (0..NECK_CASES)
            .map(|i| composite_case(name, &cfg, &mut case_rng(seed, 200 + op_id as u64, i)))
            .collect::<Result<Vec<_>>>()?;
        ops.push((name.to_string(), cases));
    }
    // The backbone alone, checked at the layer threshold's scope of inputs.
    let cases = (0..NECK_CASES)
        .map(|i| {
            let rng = &mut case_rng(seed, 250, i);
            let mut bb = Backbone::<f64>::init(4, rng)?;
            jitter(&mut bb, rng, 0.1);
            let x = rand(&[1, 3, 8, 16], rng, -1.0, 1.0)?;
            let out = bb.forward(&x)?;
            let probes = out
                .as_array()
                .iter()
                .map(|t| probe_for(t.shape(), rng))
                .collect::<Result<Vec<_>>>()?;
            Ok(Box::new(BlockCase {
                name: "toy_backbone".into(),
                inputs: vec![x],
                params: bb,
                probes,
                forward: Box::new(|b: &Backbone<f64>, xs| Ok(b.forward(&xs[0])?.into_vec())),
                backward: Box::new(|b: &Backbone<f64>, xs, dys| {
                    let (dx, g) = b.backward(&xs[0], &pyramid::FeatureLevels::from_slice(dys)?)?;
                    Ok((vec![dx], g))
                }),
            }) as Box<dyn GradCase>)
        })
        .collect::<Result<Vec<_>>>()?;
    ops.push(("toy_backbone".to_string(), cases));
    Ok(ops)
}
