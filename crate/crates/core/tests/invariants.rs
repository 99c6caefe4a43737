use fecanet_core::crm::self_similarity_kernel;
use fecanet_core::decoder::MemoryBank;
use fecanet_core::fem::{cross_image_attention, FemParams};
use fecanet_core::init::{seeded, uniform};
use fecanet_core::io::container::{decode_tensor, encode_tensor};
use fecanet_core::io::pgm::{decode_pgm, encode_pgm};
use fecanet_core::ops::transpose;
use fecanet_core::pipeline::metrics::MetricsAccumulator;
use fecanet_core::{kshot_fuse, oracles, BinaryMask, KShotConfig, ParamSet, Tensor};
use proptest::prelude::*;

fn maps(h: usize, w: usize, vals: &[Vec<f32>]) -> Vec<Tensor<f32>> {
    vals.iter().map(|v| Tensor::new([h, w], v.clone()).unwrap()).collect()
}

fn map_set() -> impl Strategy<Value = (usize, usize, Vec<Vec<f32>>)> {
    (1usize..5, 1usize..5, 1usize..6).prop_flat_map(|(h, w, k)| {
        (
            Just(h),
            Just(w),
            prop::collection::vec(prop::collection::vec(0.0f32..1.0, h * w), k),
        )
    })
}

proptest! {
    #[test]
    fn kshot_ignores_support_order((h, w, vals) in map_set(), rot in 0usize..6, tau in 0.05f64..0.95) {
        let cfg = KShotConfig::new(vals.len(), tau).unwrap();
        let mut rev = vals.clone();
        rev.reverse();
        let r = rot % vals.len();
        rev.rotate_left(r);
        let a = kshot_fuse(&maps(h, w, &vals), &cfg).unwrap();
        let b = kshot_fuse(&maps(h, w, &rev), &cfg).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn kshot_duplicates_are_idempotent((h, w, vals) in map_set(), tau in 0.05f64..0.95) {
        let cfg = KShotConfig::new(1, tau).unwrap();
        let one = maps(h, w, &vals[..1]);
        let dup = maps(h, w, &vec![vals[0].clone(); vals.len()]);
        prop_assert_eq!(kshot_fuse(&one, &cfg).unwrap(), kshot_fuse(&dup, &cfg).unwrap());
    }

    #[test]
    fn kshot_matches_oracle((h, w, vals) in map_set(), tau in 0.05f64..0.95) {
        let cfg = KShotConfig::new(vals.len(), tau).unwrap();
        let got = kshot_fuse(&maps(h, w, &vals), &cfg).unwrap();
        let f64s: Vec<Vec<f64>> = vals.iter().map(|v| v.iter().map(|&x| x as f64).collect()).collect();
        prop_assert_eq!(got.data(), &oracles::kshot_fuse(&f64s, tau)[..]);
    }

    #[test]
    fn self_similarity_ignores_channel_order(c in 1usize..5, h in 1usize..7, w in 1usize..7, k in prop::sample::select(vec![1usize, 3, 5, 7]), seed in any::<u64>()) {
        let x: Tensor<f64> = uniform(&[c, h, w], 1.0, &mut seeded(seed));
        let n = h * w;
        let mut perm = x.data().to_vec();
        for ch in 0..c {
            let src = c - 1 - ch;
            perm[ch * n..(ch + 1) * n].copy_from_slice(&x.data()[src * n..(src + 1) * n]);
        }
        let xp = Tensor::new([c, h, w], perm).unwrap();
        let a = self_similarity_kernel(&x, k).unwrap();
        let b = self_similarity_kernel(&xp, k).unwrap();
        prop_assert!(oracles::max_abs_diff(a.data(), b.data()) < 1e-12);
        let o = oracles::self_similarity(x.data(), c, h, w, k);
        prop_assert!(oracles::max_abs_diff(a.data(), &o) < 1e-12);
    }

    #[test]
    fn metrics_stay_in_unit_interval(h in 1usize..6, w in 1usize..6, pairs in prop::collection::vec((0u32..3, any::<u64>()), 1..6)) {
        let mut acc = MetricsAccumulator::new();
        let mut samples = Vec::new();
        for (class, s) in pairs {
            let mut rng = seeded(s);
            let p: Tensor<f64> = uniform(&[h * w], 1.0, &mut rng);
            let g: Tensor<f64> = uniform(&[h * w], 1.0, &mut rng);
            let pd: Vec<u8> = p.data().iter().map(|v| (*v > 0.0) as u8).collect();
            let gd: Vec<u8> = g.data().iter().map(|v| (*v > 0.0) as u8).collect();
            acc.add(class, &BinaryMask::new(h, w, pd.clone()).unwrap(), &BinaryMask::new(h, w, gd.clone()).unwrap()).unwrap();
            samples.push((class, pd, gd));
        }
        match oracles::metrics(&samples) {
            Some((miou, fb)) => {
                let (m, f) = (acc.miou().unwrap(), acc.fb_iou().unwrap());
                prop_assert!((0.0..=1.0).contains(&m) && (0.0..=1.0).contains(&f));
                prop_assert!((m - miou).abs() < 1e-12 && (f - fb).abs() < 1e-12);
            }
            None => prop_assert!(acc.miou().is_err()),
        }
    }

    #[test]
    fn container_round_trip(dims in prop::collection::vec(1usize..5, 0..4), seed in any::<u64>()) {
        let t: Tensor<f32> = uniform(&dims, 10.0, &mut seeded(seed));
        let bytes = encode_tensor(&t);
        let (back, used) = decode_tensor(&bytes).unwrap();
        prop_assert_eq!(used, bytes.len());
        prop_assert_eq!(back, t);
    }

    #[test]
    fn pgm_round_trip(h in 1usize..20, w in 1usize..20, seed in any::<u64>()) {
        let t: Tensor<f64> = uniform(&[h * w], 1.0, &mut seeded(seed));
        let m = BinaryMask::new(h, w, t.data().iter().map(|v| (*v > 0.0) as u8).collect()).unwrap();
        prop_assert_eq!(decode_pgm(&encode_pgm(&m)).unwrap(), m);
    }

    #[test]
    fn bank_keeps_last_write_per_query(writes in prop::collection::vec((0usize..4, 0.0f32..1.0), 0..20)) {
        let mut bank = MemoryBank::new();
        let mut expect: std::collections::BTreeMap<String, f32> = Default::default();
        for (q, v) in &writes {
            let id = format!("q{q}");
            bank.insert(id.clone(), Tensor::full([1, 2, 2], *v));
            expect.insert(id, *v);
        }
        prop_assert_eq!(bank.len(), expect.len());
        for (id, v) in &expect {
            prop_assert_eq!(bank.fetch(id, 2, 2), Tensor::full([1, 2, 2], *v));
        }
        prop_assert_eq!(bank.fetch("absent", 2, 3), Tensor::zeros([1, 2, 3]));
    }
}

#[test]
fn pgm_reference_bytes() {
    let bytes = b"P5\n# comment\n3 2\n255\n\x00\xff\x00\xff\xff\x00";
    let m = decode_pgm(bytes).unwrap();
    assert_eq!(m.dims(), (2, 3));
    assert_eq!(m.data(), &[0, 1, 0, 1, 1, 0]);
}

#[test]
fn attention_maps_are_transposes() {
    for seed in 0..20 {
        let mut ps = ParamSet::<f32>::new();
        let mut rng = seeded(seed);
        let p = FemParams::new(&mut ps, "fem", 6, &mut rng);
        let fs: Tensor<f32> = uniform(&[6, 3, 4], 1.0, &mut rng);
        let fq: Tensor<f32> = uniform(&[6, 3, 4], 1.0, &mut rng);
        let (_, _, att) = cross_image_attention(&fs, &fq, &p, &ps).unwrap();
        assert_eq!(att.a_s, transpose(&att.aq).unwrap());
    }
}

#[test]
fn self_similarity_constant_map() {
    let x = Tensor::<f64>::full([2, 4, 5], 1.5);
    let s = self_similarity_kernel(&x, 3).unwrap();
    for d in 0..9 {
        let (di, dj) = (d as isize / 3 - 1, d as isize % 3 - 1);
        for i in 0..4isize {
            for j in 0..5isize {
                let inside = (0..4).contains(&(i + di)) && (0..5).contains(&(j + dj));
                let v = s.data()[d * 20 + (i * 5 + j) as usize];
                assert_eq!(v, if inside { 4.5 } else { 0.0 });
            }
        }
    }
}
