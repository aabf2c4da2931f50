use dtnet_core::gradcheck::random_tensor;
use dtnet_core::{
    attach_side_branch, detach_side_branch, BlockKind, BlockSpec, CgmVariant, Ctx, FbmVariant, Graph, Mode,
    Network, NetworkConfig, ParamStore, Placement, ResidualBlock, Tensor,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn image(n: usize, size: usize, seed: u64) -> Tensor {
    random_tensor([n, 3, size, size], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn block_shape_laws(
        kind in prop::sample::select(vec![BlockKind::Plain, BlockKind::Down, BlockKind::Up]),
        cin in 1usize..5,
        cout in 1usize..5,
        h in 2usize..9,
        w in 2usize..9,
        n in 1usize..3,
        norm in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let mut store = ParamStore::new(seed);
        let spec = if norm { BlockSpec::new(cin, cout) } else { BlockSpec::new(cin, cout).without_norm() };
        let block = ResidualBlock::new(&mut store, "b", kind, spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mode = if norm { Mode::Train } else { Mode::Eval };
        let mut ctx = Ctx::new(&store, mode);
        let x = ctx.input(random_tensor([n, cin, h, w], -2.0, 2.0, &mut rng));
        let y = block.forward(&mut ctx, x).unwrap();
        let want = match kind {
            BlockKind::Plain => [n, cout, h, w],
            BlockKind::Down => [n, cout, h.div_ceil(2), w.div_ceil(2)],
            BlockKind::Up => [n, cout, 2 * h, 2 * w],
        };
        prop_assert_eq!(ctx.value(y).shape(), want);
        prop_assert!(ctx.value(y).all_finite());
        prop_assert!(ctx.value(y).data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn bilinear_upsampling_preserves_constants(c in -3.0..3.0f64, h in 1usize..6, w in 1usize..6) {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::full([1, 2, h, w], c));
        let y = g.upsample2x(x);
        prop_assert_eq!(g.value(y).shape(), [1, 2, 2 * h, 2 * w]);
        for &v in g.value(y).data() {
            prop_assert!((v - c).abs() <= 1e-12);
        }
    }
}

#[test]
fn outputs_are_probabilities_at_input_size() {
    for size in [16, 32, 48] {
        for cfg in [NetworkConfig::baseline(), NetworkConfig::dtnet()] {
            let dual = cfg.side_branch;
            let net = Network::build(&cfg.with_width(2)).unwrap();
            let pred = net.forward(&image(2, size, 1)).unwrap();
            assert_eq!(pred.road.shape(), [2, 1, size, size]);
            assert!(pred.road.data().iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(pred.edge.is_some(), dual);
            if let Some(e) = pred.edge {
                assert_eq!(e.shape(), [2, 1, size, size]);
                assert!(e.data().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }
}

#[test]
fn illegal_inputs_are_rejected() {
    let net = Network::build(&NetworkConfig::dtnet().with_width(2)).unwrap();
    assert!(net.forward(&image(1, 24, 0)).is_err());
    assert!(net.forward(&Tensor::zeros([1, 1, 16, 16])).is_err());
    let bad = NetworkConfig {
        fbm_encoder_variant: FbmVariant::DeepMaskBridge,
        ..NetworkConfig::dtnet()
    };
    assert!(Network::build(&bad).is_err());
    assert!(Network::build(&NetworkConfig::dtnet().with_width(0)).is_err());
}

#[test]
fn inference_is_per_image() {
    let net = Network::build(&NetworkConfig::dtnet().with_width(2)).unwrap();
    let batch = image(3, 16, 2);
    let whole = net.forward(&batch).unwrap();
    for n in 0..3 {
        let single = net.forward(&batch.select(n)).unwrap();
        for (a, b) in single.road.data().iter().zip(whole.road.item(n)) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}

fn perturb(net: &mut Network, prefix: &str) -> usize {
    let names: Vec<String> = net
        .params()
        .entries()
        .iter()
        .filter(|e| e.name.starts_with(prefix) && e.name.ends_with(".w"))
        .map(|e| e.name.clone())
        .collect();
    for n in &names {
        net.params_mut().get_mut(n).unwrap().data_mut()[0] += 0.25;
    }
    names.len()
}

#[test]
fn bridges_flow_from_side_to_main_only() {
    let x = image(1, 16, 3);
    let net = Network::build(&NetworkConfig::dtnet().with_width(2)).unwrap();
    let before = net.forward(&x).unwrap();

    let mut main_changed = net.clone();
    let touched = main_changed
        .params()
        .entries()
        .iter()
        .filter(|e| !e.name.starts_with("side") && e.name.ends_with(".w"))
        .count();
    assert!(touched > 0);
    for e in main_changed.params_mut().entries_mut() {
        if !e.name.starts_with("side") && e.name.ends_with(".w") {
            e.value.data_mut()[0] += 0.25;
        }
    }
    let after = main_changed.forward(&x).unwrap();
    assert_eq!(before.edge, after.edge, "main weights must not reach the edge head");
    assert_ne!(before.road, after.road);

    let mut side_changed = net.clone();
    assert!(perturb(&mut side_changed, "side") > 0);
    assert_ne!(side_changed.forward(&x).unwrap().road, before.road, "bridges carry side features");
}

#[test]
fn unbridged_side_branch_leaves_the_road_map_alone() {
    let x = image(1, 16, 4);
    let cfg = NetworkConfig {
        placement: Placement::None,
        ..NetworkConfig::dtnet().with_width(2)
    };
    let net = Network::build(&cfg).unwrap();
    let mut changed = net.clone();
    assert!(perturb(&mut changed, "side") > 0);
    assert_eq!(net.forward(&x).unwrap().road, changed.forward(&x).unwrap().road);
}

#[test]
fn parameter_counts_follow_the_architecture() {
    let w = 2;
    let base = Network::build(&NetworkConfig::baseline().with_width(w)).unwrap();
    let full = Network::build(&NetworkConfig::dtnet().with_width(w)).unwrap();
    let a_only = Network::build(&NetworkConfig {
        cgm_variant: CgmVariant::AC,
        ..NetworkConfig::baseline().with_width(w)
    })
    .unwrap();
    let b_only = Network::build(&NetworkConfig {
        cgm_variant: CgmVariant::BD,
        ..NetworkConfig::baseline().with_width(w)
    })
    .unwrap();
    // Strategy B and D are parameter-free.
    assert_eq!(b_only.parameter_count(), base.parameter_count());
    assert!(a_only.parameter_count() > base.parameter_count());
    assert!(full.parameter_count() > a_only.parameter_count());
}

#[test]
fn side_branch_helpers_round_trip() {
    let base = NetworkConfig::baseline().with_width(4);
    let dual = attach_side_branch(&base, FbmVariant::MaskBridge, FbmVariant::DeepMaskBridge, Placement::I);
    assert!(dual.bridges());
    assert!(detach_side_branch(&dual).equivalent(&base));
    let unplaced = attach_side_branch(&base, FbmVariant::BaseAdd, FbmVariant::BaseAdd, Placement::None);
    assert!(!unplaced.bridges());
}

#[test]
fn every_placement_bridges_the_documented_sites() {
    let expect = [
        (Placement::None, [false; 4], [false; 4]),
        (Placement::I, [true; 4], [true; 4]),
        (Placement::II, [true; 4], [false; 4]),
        (Placement::III, [false; 4], [true; 4]),
        (Placement::IV, [false, false, false, true], [true, false, false, false]),
    ];
    for (p, enc, dec) in expect {
        for i in 0..4 {
            assert_eq!(p.encoder_site(i + 1), enc[i], "{p} encoder {}", i + 1);
            assert_eq!(p.decoder_site(i + 1), dec[i], "{p} decoder {}", i + 1);
        }
    }
}

#[test]
fn same_seed_same_weights_different_seed_different_weights() {
    let a = Network::build(&NetworkConfig::dtnet().with_width(2).with_seed(5)).unwrap();
    let b = Network::build(&NetworkConfig::dtnet().with_width(2).with_seed(5)).unwrap();
    let c = Network::build(&NetworkConfig::dtnet().with_width(2).with_seed(6)).unwrap();
    let bits = |n: &Network| -> Vec<u64> {
        n.params().entries().iter().flat_map(|e| e.value.data().iter().map(|v| v.to_bits())).collect()
    };
    assert_eq!(bits(&a), bits(&b));
    assert_ne!(bits(&a), bits(&c));
}

/// Mirrors every kernel left-to-right and averages, so the convolution
/// commutes with horizontal flips.
fn symmetrize(store: &mut ParamStore) {
    for e in store.entries_mut() {
        let [o, i, k, kw] = e.value.shape();
        if k != kw || k == 1 {
            continue;
        }
        let src = e.value.clone();
        for a in 0..o {
            for b in 0..i {
                for y in 0..k {
                    for x in 0..k {
                        let v = 0.5 * (src.at(a, b, y, x) + src.at(a, b, y, k - 1 - x));
                        e.value.set(a, b, y, x, v);
                    }
                }
            }
        }
    }
}

#[test]
fn symmetric_kernels_make_resolution_preserving_blocks_flip_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for kind in [BlockKind::Plain, BlockKind::Up] {
        let mut store = ParamStore::new(3);
        let block = ResidualBlock::new(&mut store, "b", kind, BlockSpec::new(3, 4).without_norm()).unwrap();
        symmetrize(&mut store);
        let x = random_tensor([1, 3, 5, 6], -1.0, 1.0, &mut rng);
        let run = |input: Tensor| {
            let mut ctx = Ctx::new(&store, Mode::Eval);
            let v = ctx.input(input);
            let y = block.forward(&mut ctx, v).unwrap();
            ctx.value(y).clone()
        };
        let flipped_out = run(x.flip_horizontal());
        let out_flipped = run(x).flip_horizontal();
        for (a, b) in flipped_out.data().iter().zip(out_flipped.data()) {
            assert!((a - b).abs() <= 1e-12, "{kind:?}: {a} vs {b}");
        }
    }
}
