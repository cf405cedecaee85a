use hyperzoo::augment::{apply_permutation, forward_deviation, invert};
use hyperzoo::encoder::{Tokenization, Tokenizer};
use hyperzoo::probe::{kendall_tau, r2_score, ridge_solve};
use hyperzoo::ssl::ntxent_loss;
use hyperzoo::zoo::{build_cnn_mnist, build_ffn_tetris, init_weights, InitMethod};
use hyperzoo::{LayerLayout, Tape, WeightVector};
use proptest::prelude::*;

fn ffn() -> (hyperzoo::ArchSpec, LayerLayout) {
    let a = build_ffn_tetris();
    let l = LayerLayout::from_arch(&a).unwrap();
    (a, l)
}

/// A permutation of `0..n` from a vector of sort keys.
fn perm_from_keys(keys: &[u32]) -> Vec<usize> {
    let mut p: Vec<usize> = (0..keys.len()).collect();
    p.sort_by_key(|&i| (keys[i], i));
    p
}

fn brute_tau(a: &[f64], b: &[f64]) -> f64 {
    let (mut c, mut d, mut ta, mut tb) = (0i64, 0i64, 0i64, 0i64);
    let n = a.len();
    for i in 0..n {
        for j in i + 1..n {
            let x = (a[i] - a[j]).signum() * if a[i] == a[j] { 0.0 } else { 1.0 };
            let y = (b[i] - b[j]).signum() * if b[i] == b[j] { 0.0 } else { 1.0 };
            if x == 0.0 {
                ta += 1;
            }
            if y == 0.0 {
                tb += 1;
            }
            if x * y > 0.0 {
                c += 1;
            } else if x * y < 0.0 {
                d += 1;
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    (c - d) as f64 / (((n0 - ta) as f64) * ((n0 - tb) as f64)).sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn permutation_round_trips_and_preserves_function(
        seed in any::<u64>(),
        keys in prop::collection::vec(any::<u32>(), 64),
        cnn in any::<bool>(),
    ) {
        let arch = if cnn { build_cnn_mnist() } else { build_ffn_tetris() };
        let layout = LayerLayout::from_arch(&arch).unwrap();
        let w = init_weights(&arch, InitMethod::Normal, seed);
        let owned: Vec<(usize, Vec<usize>)> = layout
            .permutable_layers()
            .enumerate()
            .map(|(i, l)| {
                let n = layout.layers[l].units;
                let k: Vec<u32> = (0..n).map(|u| keys[(u + 7 * i) % keys.len()] ^ i as u32).collect();
                (l, perm_from_keys(&k))
            })
            .collect();
        let perms: Vec<(usize, &[usize])> = owned.iter().map(|(l, p)| (*l, p.as_slice())).collect();
        let inverse: Vec<(usize, Vec<usize>)> = owned.iter().map(|(l, p)| (*l, invert(p))).collect();
        let inv: Vec<(usize, &[usize])> = inverse.iter().map(|(l, p)| (*l, p.as_slice())).collect();
        let moved = apply_permutation(&w, &layout, &perms).unwrap();
        prop_assert_eq!(&apply_permutation(&moved, &layout, &inv).unwrap(), &w);
        let mut sorted_a = w.clone();
        let mut sorted_b = moved;
        sorted_a.sort_by(f32::total_cmp);
        sorted_b.sort_by(f32::total_cmp);
        prop_assert_eq!(sorted_a, sorted_b);
        let n_in = if cnn { 2 } else { 10 };
        let x: Vec<f32> = (0..n_in * arch.input.iter().product::<usize>()).map(|i| ((i * 31 % 17) as f32) / 17.0).collect();
        prop_assert!(forward_deviation(&arch, &layout, &w, &perms, &x, n_in).unwrap() < 1e-5);
    }

    #[test]
    fn tau_matches_brute_force_and_is_rank_invariant(
        pairs in prop::collection::vec((0u8..8, 0u8..8), 3..50),
    ) {
        let a: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let b: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
        let t = kendall_tau(&a, &b).unwrap();
        let bf = brute_tau(&a, &b);
        if bf.is_nan() {
            prop_assert!(t.is_nan());
        } else {
            prop_assert!((t - bf).abs() < 1e-12);
            let ea: Vec<f64> = a.iter().map(|v| (v * 0.7).exp() * 3.0 - 1.0).collect();
            prop_assert!((kendall_tau(&ea, &b).unwrap() - t).abs() < 1e-10);
            let na: Vec<f64> = a.iter().map(|v| -v).collect();
            prop_assert!((kendall_tau(&na, &b).unwrap() + t).abs() < 1e-10);
            prop_assert!((kendall_tau(&b, &a).unwrap() - t).abs() < 1e-12);
        }
    }

    #[test]
    fn r2_is_at_most_one(
        pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 2..40),
    ) {
        let p: Vec<f64> = pairs.iter().map(|x| x.0).collect();
        let t: Vec<f64> = pairs.iter().map(|x| x.1).collect();
        let r = r2_score(&p, &t).unwrap();
        prop_assert!(r.is_nan() || r <= 1.0 + 1e-12);
        let s = r2_score(&t, &t).unwrap();
        prop_assert!(s.is_nan() || (s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ridge_is_affine_equivariant_in_the_target(
        x in prop::collection::vec(-1.0f64..1.0, 60),
        t in prop::collection::vec(-1.0f64..1.0, 20),
        a in 0.1f64..5.0,
        b in -3.0f64..3.0,
        log_alpha in -5.0f64..3.0,
    ) {
        let alpha = 10f64.powf(log_alpha);
        let (w, c) = ridge_solve(&x, &t, 3, alpha).unwrap();
        let t2: Vec<f64> = t.iter().map(|v| a * v + b).collect();
        let (w2, c2) = ridge_solve(&x, &t2, 3, alpha).unwrap();
        for (u, v) in w.iter().zip(&w2) {
            prop_assert!((a * u - v).abs() < 1e-9 * (1.0 + v.abs()));
        }
        prop_assert!((a * c + b - c2).abs() < 1e-9 * (1.0 + c2.abs()));
    }

    #[test]
    fn ntxent_ignores_pair_order(
        z in prop::collection::vec(-1.0f64..1.0, 4 * 2 * 3),
        keys in prop::collection::vec(any::<u32>(), 4),
    ) {
        let (m, p) = (4, 3);
        let perm = perm_from_keys(&keys);
        let mut shuffled = vec![0.0; z.len()];
        for view in 0..2 {
            for (new, &old) in perm.iter().enumerate() {
                let (dst, src) = ((view * m + new) * p, (view * m + old) * p);
                shuffled[dst..dst + p].copy_from_slice(&z[src..src + p]);
            }
        }
        let loss = |data: Vec<f64>| {
            let mut tape = Tape::<f64>::new();
            let v = tape.constant(&[2 * m, p], data).unwrap();
            let l = ntxent_loss(&mut tape, v, 0.5).unwrap();
            tape.value(l)[0]
        };
        prop_assert!((loss(z) - loss(shuffled)).abs() < 1e-10);
    }

    #[test]
    fn tokenizer_and_checkpoint_round_trip(w in prop::collection::vec(-2.0f32..2.0, 200)) {
        let (_, layout) = ffn();
        for kind in [Tokenization::PerWeight, Tokenization::PerNeuron] {
            let tok = Tokenizer::new(kind, &layout).unwrap();
            let grid = tok.tokenize(&w, 2).unwrap();
            prop_assert_eq!(tok.detokenize(&grid, 2).unwrap(), w.clone());
        }
        let v = WeightVector::new(w[..100].to_vec(), &layout, 3, 7).unwrap();
        let back = WeightVector::from_bytes(&v.to_bytes(), Some(&layout)).unwrap();
        prop_assert_eq!(back, v);
    }
}
