//! Fusion modules against straight-line recompositions built from naive
//! loops, sharing no code with the graph ops.

use dtnet_core::cgm::{enhance_encoder, P_MAP_EPS};
use dtnet_core::fbm::{BridgeSite, Fbm, FbmVariant};
use dtnet_core::gradcheck::random_tensor;
use dtnet_core::{Cgm, CgmVariant, Ctx, EncoderStrategy, Mode, ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-12;

/// Same-padded stride-1 convolution, one loop per index.
fn conv(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let [n, c, h, wd] = x.shape();
    let [o, ci, k, _] = w.shape();
    assert_eq!(c, ci);
    let pad = (k / 2) as isize;
    let mut out = Tensor::zeros([n, o, h, wd]);
    for bi in 0..n {
        for oc in 0..o {
            for y in 0..h {
                for xx in 0..wd {
                    let mut acc = b.data()[oc];
                    for ic in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let sy = y as isize + ky as isize - pad;
                                let sx = xx as isize + kx as isize - pad;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                                    continue;
                                }
                                acc += w.at(oc, ic, ky, kx) * x.at(bi, ic, sy as usize, sx as usize);
                            }
                        }
                    }
                    out.set(bi, oc, y, xx, acc);
                }
            }
        }
    }
    out
}

fn concat(a: &Tensor, b: &Tensor) -> Tensor {
    let [n, ca, h, w] = a.shape();
    let cb = b.channels();
    let mut out = Tensor::zeros([n, ca + cb, h, w]);
    for bi in 0..n {
        for c in 0..ca + cb {
            for y in 0..h {
                for x in 0..w {
                    let v = if c < ca { a.at(bi, c, y, x) } else { b.at(bi, c - ca, y, x) };
                    out.set(bi, c, y, x, v);
                }
            }
        }
    }
    out
}

fn channel_mean(x: &Tensor) -> Vec<Vec<f64>> {
    let [n, c, h, w] = x.shape();
    (0..n)
        .map(|b| {
            (0..h * w)
                .map(|i| (0..c).map(|ch| x.channel_plane(b, ch)[i]).sum::<f64>() / c as f64)
                .collect()
        })
        .collect()
}

fn p_ref(x: &Tensor) -> Vec<Vec<f64>> {
    channel_mean(x)
        .into_iter()
        .map(|m| {
            let max = m.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if max <= 0.0 {
                vec![0.0; m.len()]
            } else {
                m.iter().map(|v| v / max / (1.0 + P_MAP_EPS)).collect()
            }
        })
        .collect()
}

fn q_ref(x: &Tensor) -> Vec<Vec<f64>> {
    channel_mean(&x.map(|v| v * v))
        .into_iter()
        .map(|m| {
            let z: f64 = m.iter().map(|v| v.exp()).sum();
            m.iter().map(|v| v.exp() / z).collect()
        })
        .collect()
}

fn gate(x: &Tensor, mask: &[Vec<f64>]) -> Tensor {
    let [n, c, h, w] = x.shape();
    let mut out = x.clone();
    for b in 0..n {
        for ch in 0..c {
            for i in 0..h * w {
                out.set(b, ch, i / w, i % w, x.at(b, ch, i / w, i % w) * mask[b][i]);
            }
        }
    }
    out
}

fn add(a: &Tensor, b: &Tensor) -> Tensor {
    a.zip_map(b, |u, v| u + v)
}

/// Gives every bias a random value so the oracle also covers them.
fn randomize_biases(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    let names: Vec<String> = store
        .entries()
        .iter()
        .filter(|e| e.name.ends_with(".b"))
        .map(|e| e.name.clone())
        .collect();
    for name in names {
        let shape = store.get(&name).unwrap().shape();
        *store.get_mut(&name).unwrap() = random_tensor(shape, -0.5, 0.5, rng);
    }
}

fn wb<'a>(store: &'a ParamStore, prefix: &str) -> (&'a Tensor, &'a Tensor) {
    (
        store.get(&format!("{prefix}.w")).unwrap(),
        store.get(&format!("{prefix}.b")).unwrap(),
    )
}

fn assert_close(a: &Tensor, b: &Tensor, what: &str) {
    assert_eq!(a.shape(), b.shape(), "{what}");
    for (i, (u, v)) in a.data().iter().zip(b.data()).enumerate() {
        assert!((u - v).abs() <= TOL, "{what}[{i}]: {u} vs {v}");
    }
}

fn cgm_reference(store: &ParamStore, variant: CgmVariant, e: &Tensor, d: &Tensor) -> Tensor {
    let (fw, fb) = wb(store, "cgm.fuse");
    let both = match variant {
        CgmVariant::Base => concat(d, e),
        v => {
            let spatial = match v {
                CgmVariant::AC | CgmVariant::AD => {
                    let (w1, b1) = wb(store, "cgm.spatial1");
                    let (w2, b2) = wb(store, "cgm.spatial2");
                    let h = conv(&concat(e, d), w1, b1).map(|v| v.max(0.0));
                    conv(&h, w2, b2)
                }
                _ => {
                    let non_salient: Vec<Vec<f64>> =
                        p_ref(d).into_iter().map(|m| m.into_iter().map(|v| 1.0 - v).collect()).collect();
                    gate(e, &non_salient)
                }
            };
            let semantic = match v {
                CgmVariant::AC | CgmVariant::BC => e.zip_map(d, |a, b| a * b),
                _ => gate(e, &p_ref(d)),
            };
            concat(&add(d, &spatial), &semantic)
        }
    };
    conv(&both, fw, fb)
}

#[test]
fn every_cgm_variant_matches_its_recomposition() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for variant in CgmVariant::ALL {
        for shape in [[1, 2, 4, 4], [2, 3, 5, 3]] {
            let mut store = ParamStore::new(3);
            let cgm = Cgm::new(&mut store, "cgm", variant, shape[1]);
            randomize_biases(&mut store, &mut rng);
            let e = random_tensor(shape, -1.0, 1.0, &mut rng);
            let d = random_tensor(shape, -0.2, 1.0, &mut rng);
            let mut ctx = Ctx::new(&store, Mode::Eval);
            let (ev, dv) = (ctx.input(e.clone()), ctx.input(d.clone()));
            let out = cgm.forward(&mut ctx, ev, dv).unwrap();
            let expect = cgm_reference(&store, variant, &e, &d);
            assert_close(ctx.value(out), &expect, &format!("{variant} {shape:?}"));
        }
    }
}

#[test]
fn strategy_c_is_symmetric_and_d_uses_the_decoder_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let store = ParamStore::new(0);
    let e = random_tensor([1, 3, 4, 4], -1.0, 1.0, &mut rng);
    let d = random_tensor([1, 3, 4, 4], 0.0, 1.0, &mut rng);
    let mut ctx = Ctx::new(&store, Mode::Eval);
    let (ev, dv) = (ctx.input(e.clone()), ctx.input(d.clone()));
    let ed = enhance_encoder(&mut ctx, ev, dv, EncoderStrategy::C).unwrap();
    let de = enhance_encoder(&mut ctx, dv, ev, EncoderStrategy::C).unwrap();
    assert_eq!(ctx.value(ed), ctx.value(de));
    let masked = enhance_encoder(&mut ctx, ev, dv, EncoderStrategy::D).unwrap();
    assert_close(ctx.value(masked), &gate(&e, &p_ref(&d)), "strategy D");
}

#[test]
fn strategy_d_hand_case() {
    let store = ParamStore::new(0);
    let e = Tensor::full([1, 2, 2, 2], 1.0);
    let d = Tensor::from_vec([1, 1, 2, 2], vec![1.0, 3.0, 2.0, 4.0]).unwrap();
    let d2 = concat(&d, &d);
    let mut ctx = Ctx::new(&store, Mode::Eval);
    let (ev, dv) = (ctx.input(e), ctx.input(d2));
    let out = enhance_encoder(&mut ctx, ev, dv, EncoderStrategy::D).unwrap();
    for ch in 0..2 {
        let plane = ctx.value(out).channel_plane(0, ch);
        for (v, want) in plane.iter().zip([0.25, 0.75, 0.5, 1.0]) {
            assert!((v - want).abs() < 1e-5, "{v} vs {want}");
        }
    }
}

fn fbm_reference(store: &ParamStore, variant: FbmVariant, main: &Tensor, side: &Tensor, skip: &Tensor) -> Tensor {
    match variant {
        FbmVariant::BaseAdd => add(main, side),
        FbmVariant::BaseConcat => {
            let (w, b) = wb(store, "fbm.fuse");
            conv(&concat(main, side), w, b)
        }
        FbmVariant::MaskBridge => {
            let (w, b) = wb(store, "fbm.fuse");
            conv(&concat(&gate(main, &p_ref(side)), main), w, b)
        }
        FbmVariant::DeepMaskBridge => {
            let (we, be) = wb(store, "fbm.enrich");
            let (w, b) = wb(store, "fbm.fuse");
            let tmp = conv(&concat(main, skip), we, be);
            conv(&concat(&gate(&tmp, &q_ref(side)), main), w, b)
        }
    }
}

#[test]
fn every_fbm_variant_matches_its_recomposition() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for variant in FbmVariant::DECODER {
        let shape = [2, 3, 4, 5];
        let mut store = ParamStore::new(8);
        let fbm = Fbm::new(&mut store, "fbm", variant, BridgeSite::Decoder, 3, 2, false).unwrap();
        randomize_biases(&mut store, &mut rng);
        let main = random_tensor(shape, -1.0, 1.0, &mut rng);
        let side = random_tensor(shape, 0.0, 1.5, &mut rng);
        let skip = random_tensor([2, 2, 4, 5], -1.0, 1.0, &mut rng);
        let mut ctx = Ctx::new(&store, Mode::Eval);
        let (m, s, k) = (ctx.input(main.clone()), ctx.input(side.clone()), ctx.input(skip.clone()));
        let out = fbm.forward(&mut ctx, m, s, Some(k)).unwrap();
        let expect = fbm_reference(&store, variant, &main, &side, &skip);
        assert_close(ctx.value(out), &expect, variant.as_str());
    }
}

#[test]
fn rescaled_deep_bridge_multiplies_the_mask_by_area() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let shape = [1, 2, 3, 4];
    let mut store = ParamStore::new(1);
    let fbm = Fbm::new(&mut store, "fbm", FbmVariant::DeepMaskBridge, BridgeSite::Decoder, 2, 2, true).unwrap();
    let main = random_tensor(shape, -1.0, 1.0, &mut rng);
    let side = random_tensor(shape, -1.0, 1.0, &mut rng);
    let skip = random_tensor(shape, -1.0, 1.0, &mut rng);
    let mut ctx = Ctx::new(&store, Mode::Eval);
    let (m, s, k) = (ctx.input(main.clone()), ctx.input(side.clone()), ctx.input(skip.clone()));
    let out = fbm.forward(&mut ctx, m, s, Some(k)).unwrap();
    let (we, be) = wb(&store, "fbm.enrich");
    let (w, b) = wb(&store, "fbm.fuse");
    let mask: Vec<Vec<f64>> = q_ref(&side).into_iter().map(|q| q.into_iter().map(|v| v * 12.0).collect()).collect();
    let expect = conv(&concat(&gate(&conv(&concat(&main, &skip), we, be), &mask), &main), w, b);
    assert_close(ctx.value(out), &expect, "rescaled");
}

#[test]
fn strategy_b_saturates_to_identity_on_constant_decoder() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParamStore::new(2);
    let cgm = Cgm::new(&mut store, "cgm", CgmVariant::BD, 2);
    let e = random_tensor([1, 2, 3, 3], -1.0, 1.0, &mut rng);
    let d = Tensor::full([1, 2, 3, 3], 0.7);
    let mut ctx = Ctx::new(&store, Mode::Eval);
    let (ev, dv) = (ctx.input(e), ctx.input(d.clone()));
    let enhanced = cgm
        .enhance_decoder(&mut ctx, ev, dv, dtnet_core::DecoderStrategy::B)
        .unwrap();
    for (u, v) in ctx.value(enhanced).data().iter().zip(d.data()) {
        assert!((u - v).abs() < 1e-5);
    }
}
