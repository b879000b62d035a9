mod common;

use common::{identity_conv, subsample_oracle, upsample_oracle};
use hafpn_core::attention::Ham;
use hafpn_core::nn::norm::{layer_norm_channels, LayerNorm};
use hafpn_core::nn::params::{map_all, zero_all};
use hafpn_core::pyramid::{
    fpn_fuse, hafpn_fuse, pafpn_fuse, toy_backbone, AttentionBlock, AttentionMode, Backbone, FeatureLevels, MergeMode,
    Neck, NeckConfig, Placement, PyramidModel, Variant,
};
use hafpn_core::{Rng, Tensor};
use proptest::prelude::*;

fn random_levels(n: usize, c: usize, base: usize, rng: &mut Rng) -> FeatureLevels<f32> {
    let mk = |s: usize, rng: &mut Rng| Tensor::rand_uniform(&[n, c, s, s], rng, -1.0, 1.0).unwrap();
    let p3 = mk(4 * base, rng);
    let p4 = mk(2 * base, rng);
    let p5 = mk(base, rng);
    FeatureLevels::new(p3, p4, p5).unwrap()
}

fn cfg(variant: Variant, c: usize, seed: u64) -> NeckConfig {
    NeckConfig {
        variant,
        channels: c,
        heads: 2,
        reduction: 2,
        seed,
        ..NeckConfig::default()
    }
}

fn plain(variant: Variant, c: usize, seed: u64) -> NeckConfig {
    NeckConfig {
        use_emsa: false,
        use_ca: false,
        ..cfg(variant, c, seed)
    }
}

#[test]
fn backbone_stride_contract() {
    let mut rng = Rng::new(1);
    let bb = Backbone::<f32>::init(8, &mut rng).unwrap();
    let img = Tensor::rand_uniform(&[1, 3, 32, 32], &mut rng, 0.0, 1.0).unwrap();
    let lv = toy_backbone(&img, &bb).unwrap();
    assert_eq!(lv.shapes(), [vec![1, 8, 16, 16], vec![1, 8, 8, 8], vec![1, 8, 4, 4]]);
    let img = Tensor::rand_uniform(&[2, 3, 16, 24], &mut rng, 0.0, 1.0).unwrap();
    assert_eq!(toy_backbone(&img, &bb).unwrap().p5.shape(), &[2, 8, 2, 3]);
    assert!(toy_backbone(&Tensor::zeros(&[1, 3, 20, 32]).unwrap(), &bb).is_err());
    assert!(toy_backbone(&Tensor::zeros(&[1, 4, 32, 32]).unwrap(), &bb).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn necks_preserve_level_shapes(
        variant_idx in 0usize..3, m in 1usize..3, base in 1usize..3, n in 1usize..3,
        concat in any::<bool>(), pre in any::<bool>(), one_head in any::<bool>(), seed in any::<u64>(),
    ) {
        let c = 4 * m;
        let mut cfg = cfg(Variant::ALL[variant_idx], c, seed);
        cfg.merge = if concat { MergeMode::Concat } else { MergeMode::Add };
        cfg.placement = if pre { Placement::PreMerge } else { Placement::PostMerge };
        if one_head {
            cfg.heads = 1;
            cfg.use_ca = false;
        }
        let mut rng = Rng::new(seed);
        let levels = random_levels(n, c, base, &mut rng);
        let neck = Neck::init(&cfg, &Rng::new(seed)).unwrap();
        let out = neck.forward(&levels).unwrap();
        prop_assert_eq!(out.shapes(), levels.shapes());
    }
}

/// Replaces every fusion conv with a centred identity; bottom-up down
/// convs become even-index subsampling.
fn identity_convs(neck: &mut Neck<f32>) {
    let c = neck.channels;
    let fin = neck.fuse4.in_channels();
    neck.fuse4 = identity_conv(fin, c, 1);
    neck.fuse3 = identity_conv(fin, c, 1);
    if let Some(bu) = &mut neck.bottom_up {
        bu.down3 = identity_conv(c, c, 2);
        bu.down4 = identity_conv(c, c, 2);
        bu.fuse4 = identity_conv(fin, c, 1);
        bu.fuse5 = identity_conv(fin, c, 1);
    }
}

fn add(a: &Tensor<f32>, b: &Tensor<f32>) -> Tensor<f32> {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::from_vec(a.shape(), data).unwrap()
}

#[test]
fn fpn_hand_trace() {
    let mut rng = Rng::new(2);
    let lv = random_levels(2, 4, 2, &mut rng);
    let mut neck = Neck::init(&plain(Variant::Fpn, 4, 0), &rng).unwrap();
    identity_convs(&mut neck);
    let out = fpn_fuse(&lv, &neck).unwrap();
    let o5 = lv.p5.clone();
    let o4 = add(&lv.p4, &upsample_oracle(&o5));
    let o3 = add(&lv.p3, &upsample_oracle(&o4));
    assert_eq!(out.p5, o5);
    assert_eq!(out.p4, o4);
    assert_eq!(out.p3, o3);
}

#[test]
fn pafpn_hand_trace() {
    let mut rng = Rng::new(3);
    let lv = random_levels(1, 4, 2, &mut rng);
    let mut neck = Neck::init(&plain(Variant::Pafpn, 4, 0), &rng).unwrap();
    identity_convs(&mut neck);
    let out = pafpn_fuse(&lv, &neck).unwrap();
    let o5 = lv.p5.clone();
    let o4 = add(&lv.p4, &upsample_oracle(&o5));
    let o3 = add(&lv.p3, &upsample_oracle(&o4));
    let n4 = add(&o4, &subsample_oracle(&o3));
    let n5 = add(&o5, &subsample_oracle(&n4));
    assert_eq!(out.p3, o3);
    assert_eq!(out.p4, n4);
    assert_eq!(out.p5, n5);
}

#[test]
fn pafpn_with_silent_bottom_up_is_fpn() {
    let mut rng = Rng::new(4);
    let lv = random_levels(1, 6, 1, &mut rng);
    let fpn = Neck::init(&plain(Variant::Fpn, 6, 9), &Rng::new(9)).unwrap();
    let mut pafpn = Neck::init(&plain(Variant::Pafpn, 6, 9), &Rng::new(9)).unwrap();
    assert_eq!(pafpn.fuse3, fpn.fuse3);
    let bu = pafpn.bottom_up.as_mut().unwrap();
    map_all(&mut bu.down3, |_, t| *t = t.zeros_like());
    map_all(&mut bu.down4, |_, t| *t = t.zeros_like());
    bu.fuse4 = identity_conv(6, 6, 1);
    bu.fuse5 = identity_conv(6, 6, 1);
    assert_eq!(pafpn.forward(&lv).unwrap(), fpn.forward(&lv).unwrap());
}

fn zeroed_ham(ham: &mut Ham<f32>) {
    zero_all(ham);
    let c = ham.ln1.channels();
    ham.ln1 = LayerNorm::identity(c).unwrap();
    ham.ln2 = LayerNorm::identity(c).unwrap();
}

#[test]
fn hafpn_zero_ham_trace() {
    let mut rng = Rng::new(5);
    let lv = random_levels(1, 4, 2, &mut rng);
    let mut neck = Neck::init(&cfg(Variant::Hafpn, 4, 0), &rng).unwrap();
    identity_convs(&mut neck);
    for blk in neck.attention.as_mut().unwrap() {
        match blk {
            AttentionBlock::Ham(h) => zeroed_ham(h),
            AttentionBlock::Identity => unreachable!(),
        }
    }
    let ham = |x: &Tensor<f32>| {
        let c = x.shape()[1];
        let l = layer_norm_channels(x, &LayerNorm::identity(c).unwrap()).unwrap();
        let data = l
            .data()
            .iter()
            .zip(x.data())
            .map(|(&l, &v)| (0.25 * l + l) + v)
            .collect();
        Tensor::from_vec(x.shape(), data).unwrap()
    };
    let out = hafpn_fuse(&lv, &neck).unwrap();
    let o5 = ham(&lv.p5);
    let o4 = ham(&add(&lv.p4, &upsample_oracle(&o5)));
    let o3 = ham(&add(&lv.p3, &upsample_oracle(&o4)));
    assert_eq!(out.p5, o5);
    assert_eq!(out.p4, o4);
    assert_eq!(out.p3, o3);
}

#[test]
fn identity_attention_is_bit_identical_to_plain() {
    let mut rng = Rng::new(6);
    for seed in 0..5 {
        let img = Tensor::rand_uniform(&[1, 3, 32, 32], &mut rng, 0.0, 1.0).unwrap();
        for (with, without) in [(Variant::Hafpn, Variant::Fpn), (Variant::Pafpn, Variant::Pafpn)] {
            let mut identity = cfg(with, 8, seed);
            identity.attention = AttentionMode::Identity;
            let a = PyramidModel::<f32>::from_config(&identity)
                .unwrap()
                .forward(&img)
                .unwrap();
            let b = PyramidModel::<f32>::from_config(&plain(without, 8, seed))
                .unwrap()
                .forward(&img)
                .unwrap();
            for (x, y) in a.as_array().iter().zip(b.as_array()) {
                let xb: Vec<u32> = x.data().iter().map(|v| v.to_bits()).collect();
                let yb: Vec<u32> = y.data().iter().map(|v| v.to_bits()).collect();
                assert_eq!(xb, yb);
            }
        }
    }
}

#[test]
fn deterministic_under_seed() {
    let img = Tensor::rand_uniform(&[1, 3, 16, 16], &mut Rng::new(7), 0.0, 1.0).unwrap();
    let run = |seed| {
        PyramidModel::<f32>::from_config(&cfg(Variant::Hafpn, 4, seed))
            .unwrap()
            .forward(&img)
            .unwrap()
    };
    assert_eq!(run(3), run(3));
    assert_ne!(run(3), run(4));
}

#[test]
fn fuse_entry_points_check_variant_and_levels() {
    let mut rng = Rng::new(8);
    let lv = random_levels(1, 4, 1, &mut rng);
    let fpn = Neck::init(&plain(Variant::Fpn, 4, 0), &rng).unwrap();
    assert!(fpn_fuse(&lv, &fpn).is_ok());
    assert!(pafpn_fuse(&lv, &fpn).is_err());
    assert!(hafpn_fuse(&lv, &fpn).is_err());
    let wrong = random_levels(1, 6, 1, &mut rng);
    assert!(fpn.forward(&wrong).is_err());
    assert!(FeatureLevels::new(lv.p3.clone(), lv.p3.clone(), lv.p5.clone()).is_err());
    assert!(NeckConfig {
        use_emsa: false,
        use_ca: false,
        ..cfg(Variant::Hafpn, 4, 0)
    }
    .validate()
    .is_err());
}
