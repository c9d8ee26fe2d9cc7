use bfctn::degradation::{upsample_nearest, KernelSpec};
use bfctn::io::{decode_payload, encode_payload, parse_header, ImageHeader};
use bfctn::metrics::{psnr, relative_error, sam};
use bfctn::patchwork::{aggregate, extract_image, PatchGrid};
use bfctn::sylvester::{relative_residual, solve_sylvester};
use bfctn::tensor::{fctn_compose, fctn_element, FactorSet};
use bfctn::{DenseTensor, FctnRanks};
use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tensor(max_order: usize, max_dim: usize) -> impl Strategy<Value = DenseTensor> {
    prop::collection::vec(1..=max_dim, 1..=max_order).prop_flat_map(|shape| {
        let n: usize = shape.iter().product();
        prop::collection::vec(-10.0..10.0f64, n).prop_map(move |d| DenseTensor::new(shape.clone(), d).unwrap())
    })
}

fn ranks(max: usize) -> impl Strategy<Value = FctnRanks> {
    prop::array::uniform6(1..=max).prop_map(|r| FctnRanks::new(r).unwrap())
}

fn factors() -> impl Strategy<Value = FactorSet> {
    (prop::array::uniform4(1..=3usize), ranks(3), any::<u64>())
        .prop_map(|(d, r, s)| FactorSet::random(d, r, 1.0, &mut ChaCha8Rng::seed_from_u64(s)).unwrap())
}

fn spd(n: usize, seed: &[f64], shift: f64) -> Array2<f64> {
    let g = Array2::from_shape_fn((n, n), |(i, j)| seed[(i * n + j) % seed.len()]);
    g.dot(&g.t()) + Array2::<f64>::eye(n) * shift
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn unfold_then_fold_is_identity(t in tensor(5, 4), pick in any::<prop::sample::Index>()) {
        let mode = pick.index(t.order());
        let back = DenseTensor::fold(&t.unfold(mode).unwrap(), mode, t.shape()).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn permute_then_inverse_is_identity(t in tensor(4, 4), perm in Just(()).prop_perturb(|_, mut rng| {
        let mut p: Vec<usize> = (0..4).collect();
        for i in (1..4).rev() { p.swap(i, rng.random_range(0..=i)); }
        p
    })) {
        let p: Vec<usize> = perm.into_iter().filter(|&i| i < t.order()).collect();
        let mut inv = vec![0; p.len()];
        for (k, &v) in p.iter().enumerate() { inv[v] = k; }
        let back = t.permute(&p).unwrap().permute(&inv).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn compose_agrees_with_elementwise_sum(f in factors()) {
        let z = fctn_compose(&f);
        let d = f.dims();
        for ix in [[0, 0, 0, 0], [d[0] - 1, d[1] - 1, d[2] - 1, d[3] - 1], [d[0] / 2, 0, d[2] - 1, d[3] / 2]] {
            let a = z.get(&ix).unwrap();
            let b = fctn_element(&f, ix).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn mode_product_moves_into_the_factor(f in factors(), rows in 1..4usize, n in 0..4usize, seed in prop::collection::vec(-1.0..1.0f64, 12)) {
        let p = Array2::from_shape_fn((rows, f.dims()[n]), |(i, j)| seed[(i * 5 + j) % seed.len()]);
        let lhs = fctn_compose(&f.with_mode_product(n, &p).unwrap());
        let rhs = fctn_compose(&f).mode_product(&p, n).unwrap();
        let err = lhs.sq_distance(&rhs).unwrap().sqrt();
        prop_assert!(err <= 1e-12 * (1.0 + rhs.frobenius_norm()));
    }

    #[test]
    fn patch_round_trip(sf in 1..4usize, lm in 2..6usize, lp in 0..5usize, extra_w in 0..6usize, extra_h in 0..6usize, bands in 1..3usize, seed in any::<u64>()) {
        prop_assume!(lp < lm);
        let (m, p) = (lm * sf, lp * sf);
        let (w, h) = (m + extra_w * sf, m + extra_h * sf);
        let grid = PatchGrid::plan(w, h, m, p, sf).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = DenseTensor::from_fn(&[w, h, bands], |_| rand::Rng::random_range(&mut rng, 0.0..1.0)).unwrap();
        let back = aggregate(&extract_image(&img, &grid).unwrap(), &grid).unwrap();
        prop_assert!(back.sq_distance(&img).unwrap().sqrt() <= 1e-12 * img.frobenius_norm());
        prop_assert_eq!(*grid.col_starts.last().unwrap(), w - m);
        prop_assert!(grid.col_starts.iter().all(|s| s % sf == 0));
    }

    #[test]
    fn container_round_trip(w in 1..6usize, h in 1..6usize, b in 1..5usize, scale in prop_oneof![Just(1.0), Just(255.0), Just(4095.0)],
                            wl in prop::option::of(prop::collection::vec(300.0..1100.0f64, 4)), seed in any::<u64>()) {
        let wavelengths = wl.map(|v| v[..b].to_vec());
        let header = ImageHeader { wavelengths, value_scale: scale, ..ImageHeader::new(w, h, b) };
        prop_assert_eq!(parse_header(&header.to_string()).unwrap(), header.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = DenseTensor::from_fn(&[w, h, b], |_| rand::Rng::random_range(&mut rng, 0.0..1.0)).unwrap();
        let back = decode_payload(&header, &encode_payload(&img, scale).unwrap()).unwrap();
        for (x, y) in img.data().iter().zip(back.data()) {
            prop_assert!((x - y).abs() <= 1e-6 * x.abs().max(1e-3));
        }
    }

    #[test]
    fn truncated_payload_is_rejected(w in 1..5usize, h in 1..5usize, cut in 1..4usize) {
        let header = ImageHeader::new(w, h, 1);
        let bytes = vec![0u8; header.payload_bytes() - cut];
        prop_assert!(decode_payload(&header, &bytes).is_err());
    }

    #[test]
    fn ranks_display_parse_round_trip(r in ranks(64)) {
        prop_assert_eq!(r.to_string().parse::<FctnRanks>().unwrap(), r);
        let bracketed = format!("[{}]", r.to_string().replace(',', ", "));
        prop_assert_eq!(bracketed.parse::<FctnRanks>().unwrap(), r);
    }

    #[test]
    fn kernel_display_parse_round_trip(k in prop_oneof![
        (1..9usize).prop_map(|size| KernelSpec::Average { size }),
        (0.3..4.0f64, 2..12usize).prop_map(|(sigma, support)| KernelSpec::Gaussian { sigma, support }),
        (1.0..8.0f64, -89.0..89.0f64).prop_map(|(length, angle_deg)| KernelSpec::Motion { length, angle_deg }),
        (0.5..3.0f64, 0.5..3.0f64, 0.0..180.0f64, 3..15usize).prop_map(|(sigma_x, sigma_y, angle_deg, support)| KernelSpec::Elliptical { sigma_x, sigma_y, angle_deg, support }),
        (0.5..3.0f64, 1.0..2.0f64).prop_map(|(lo, d)| KernelSpec::SensorVarying { sigma_min: lo, sigma_max: lo * d, support: 7 }),
    ]) {
        prop_assert_eq!(k.to_string().parse::<KernelSpec>().unwrap(), k);
    }

    #[test]
    fn sylvester_residual_is_small(p in 1..7usize, q in 1..7usize, seed in prop::collection::vec(-1.0..1.0f64, 7..20), shift in 0.1..2.0f64) {
        let s1 = spd(q, &seed, shift);
        let s2 = spd(q, &seed[1..], 0.0);
        let b = spd(p, &seed[2..], 0.0);
        let e = Array2::from_shape_fn((p, q), |(i, j)| seed[(3 * i + j) % seed.len()]);
        let x = solve_sylvester(&s1, &b, &s2, &e).unwrap().x;
        prop_assert!(relative_residual(&s1, &b, &s2, &e, &x) < 1e-9);
    }

    #[test]
    fn upsampled_blocks_average_back(t in tensor(3, 4).prop_filter("3rd order", |t| t.order() == 3), sf in 1..4usize) {
        let up = upsample_nearest(&t, sf).unwrap();
        let s = t.shape();
        for z in 0..s[2] { for y in 0..s[1] { for x in 0..s[0] {
            let mut acc = 0.0;
            for j in 0..sf { for i in 0..sf { acc += up.get(&[x * sf + i, y * sf + j, z]).unwrap(); } }
            prop_assert!((acc / (sf * sf) as f64 - t.get(&[x, y, z]).unwrap()).abs() < 1e-12);
        }}}
    }

    #[test]
    fn metrics_are_scale_and_identity_consistent(t in tensor(3, 5).prop_filter("3rd order", |t| t.order() == 3), c in 0.5..2.0f64) {
        let pos = t.map(|v| v.abs() + 0.1);
        // acos near 1 turns one ulp into sqrt(2 eps) rad, about 1.2e-6 deg.
        prop_assert!(sam(&pos, &pos.scale(c)).unwrap() < 1e-5);
        let (p, _) = psnr(&pos, &pos, 1.0).unwrap();
        prop_assert!(p.is_infinite() && p > 0.0);
        let r = relative_error(&pos, &pos.scale(c)).unwrap();
        prop_assert!((r - (c - 1.0).abs().ln()).abs() < 1e-9);
    }
}
