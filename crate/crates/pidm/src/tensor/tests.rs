use std::rc::Rc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn consts(g: &Graph<f64>, shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect();
    g.constant(shape.to_vec(), data)
}

fn store_with(rng: &mut ChaCha8Rng, entries: &[(&str, &[usize])]) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    for (name, shape) in entries {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.2..1.2)).collect();
        s.insert(name, shape.to_vec(), data).unwrap();
    }
    s
}

#[test]
fn softmax_uniform_on_equal_logits() {
    let g: Graph<f64> = Graph::new();
    let x = g.constant(vec![3], vec![0.0, 0.0, 0.0]);
    let p = x.softmax().unwrap().to_vec();
    for v in p {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn smooth_l1_half_is_huber_quadratic_branch() {
    let g: Graph<f64> = Graph::new();
    let p = g.constant(vec![1], vec![0.5]);
    let t = g.constant(vec![1], vec![0.0]);
    assert!((p.smooth_l1(&t).unwrap().item() - 0.125).abs() < 1e-15);
}

#[test]
fn bce_at_half_is_ln2() {
    let g: Graph<f64> = Graph::new();
    let p = g.constant(vec![1], vec![0.5]);
    let y = g.constant(vec![1], vec![1.0]);
    let v = p.bce(&y).unwrap().item();
    assert!((v - 0.693147).abs() < 1e-6, "bce = {v}");
}

#[test]
fn backward_linear_and_quadratic() {
    // loss = sum(w * x), x = [1, 2] -> grad(w) = [1, 2]
    let mut store = ParamStore::new();
    store.insert("w", vec![2], vec![0.3, -0.7]).unwrap();
    let g: Graph<f64> = Graph::new();
    let w = g.param(&store, "w");
    let x = g.constant(vec![2], vec![1.0, 2.0]);
    let loss = w.mul(&x).unwrap().sum_all().unwrap();
    let grads = loss.backward(&store).unwrap();
    assert_eq!(grads.get("w").data, vec![1.0, 2.0]);

    // loss = sum(w^2), w = [3] -> grad = [6]
    let mut store = ParamStore::new();
    store.insert("w", vec![1], vec![3.0]).unwrap();
    let g: Graph<f64> = Graph::new();
    let w = g.param(&store, "w");
    let loss = w.mul(&w).unwrap().sum_all().unwrap();
    let grads = loss.backward(&store).unwrap();
    assert_eq!(grads.get("w").data, vec![6.0]);
}

#[test]
fn unreachable_param_gets_zero_gradient() {
    let mut store = ParamStore::new();
    store.insert("used", vec![1], vec![2.0]).unwrap();
    store.insert("unused", vec![3], vec![1.0, 1.0, 1.0]).unwrap();
    let g: Graph<f64> = Graph::new();
    let w = g.param(&store, "used");
    let loss = w.mul(&w).unwrap().sum_all().unwrap();
    let grads = loss.backward(&store).unwrap();
    assert_eq!(grads.get("unused").data, vec![0.0; 3]);
}

#[test]
fn non_scalar_loss_is_an_error() {
    let mut store = ParamStore::new();
    store.insert("w", vec![2], vec![1.0, 2.0]).unwrap();
    let g: Graph<f64> = Graph::new();
    let w = g.param(&store, "w");
    assert!(matches!(
        w.backward(&store),
        Err(TensorError::NonScalarLoss(_))
    ));
}

#[test]
fn masked_softmax_gives_exact_zero_to_masked_keys() {
    let g: Graph<f64> = Graph::new();
    let x = g.constant(vec![2, 4], vec![0.3, -1.0, 2.0, 0.5, 1.0, 1.0, 1.0, 1.0]);
    let mask = Rc::new(BoolMask::new(
        vec![4],
        vec![false, true, false, true],
    ));
    let p = x.masked_fill(&mask).unwrap().softmax().unwrap().to_vec();
    assert_eq!(p[1], 0.0);
    assert_eq!(p[3], 0.0);
    assert_eq!(p[5], 0.0);
    assert_eq!(p[7], 0.0);
    assert!((p[0] + p[2] - 1.0).abs() < 1e-12);
}

#[test]
fn fully_masked_row_errors() {
    let g: Graph<f64> = Graph::new();
    let x = g.constant(vec![1, 2], vec![0.3, -1.0]);
    let mask = Rc::new(BoolMask::new(vec![2], vec![true, true]));
    let masked = x.masked_fill(&mask).unwrap();
    assert!(matches!(
        masked.softmax(),
        Err(TensorError::FullyMaskedRow { row: 0 })
    ));
}

#[test]
fn shape_mismatch_is_descriptive() {
    let g: Graph<f64> = Graph::new();
    let a = g.constant(vec![2, 3], vec![0.0; 6]);
    let b = g.constant(vec![4, 2], vec![0.0; 8]);
    let err = a.matmul(&b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
}

#[test]
fn forward_is_bit_identical_across_runs() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g: Graph<f64> = Graph::new();
        let a = consts(&g, &[6, 33, 17], &mut rng);
        let b = consts(&g, &[17, 29], &mut rng);
        let c = a.matmul(&b).unwrap().gelu().unwrap();
        let d = c.softmax().unwrap().sum_all().unwrap();
        d.item().to_bits()
    };
    assert_eq!(run(), run());
}

#[test]
fn gradcheck_scalar_quadratic_is_tiny() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let store = store_with(&mut rng, &[("w", &[4])]);
    let err = gradcheck(
        |g, s| {
            let w = g.param(s, "w");
            w.mul(&w)?.sum_all()
        },
        &store,
        1e-4,
    )
    .unwrap();
    assert!(err <= 1e-9, "err = {err}");
}

#[test]
fn gradcheck_zero_params_returns_zero() {
    let store: ParamStore<f64> = ParamStore::new();
    let err = gradcheck(
        |g, _| {
            let c = g.constant(vec![1], vec![2.0]);
            c.mul(&c)?.sum_all()
        },
        &store,
        1e-4,
    )
    .unwrap();
    assert_eq!(err, 0.0);
}

#[test]
fn gradcheck_two_layer_net_matches_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let store = store_with(
        &mut rng,
        &[
            ("w1", &[5, 7]),
            ("b1", &[7]),
            ("w2", &[7, 3]),
            ("b2", &[3]),
        ],
    );
    let x: Vec<f64> = (0..2 * 5).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let t: Vec<f64> = (0..2 * 3).map(|_| rng.gen_range(-0.8..0.8)).collect();
    let err = gradcheck(
        |g, s| {
            let input = g.constant(vec![2, 5], x.clone());
            let target = g.constant(vec![2, 3], t.clone());
            let h = input
                .matmul(&g.param(s, "w1"))?
                .add(&g.param(s, "b1"))?
                .tanh_act()?;
            let y = h.matmul(&g.param(s, "w2"))?.add(&g.param(s, "b2"))?;
            let diff = y.sub(&target)?;
            diff.mul(&diff)?.mean_all()
        },
        &store,
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-7, "err = {err}");
}

/// One randomized compound graph exercising a given primitive; returns the
/// gradcheck error for seeds 0..N.
fn primitive_fd_error(seed: u64, which: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed * 101 + which as u64);
    let store = store_with(&mut rng, &[("p", &[3, 4]), ("q", &[4]), ("r", &[4])]);
    let xs: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let idx = vec![2, 0, 1, 1];
    let mask = Rc::new(BoolMask::new(
        vec![4],
        vec![false, true, false, false],
    ));
    gradcheck(
        move |g, s| {
            let p = g.param(s, "p");
            let q = g.param(s, "q");
            let r = g.param(s, "r");
            let c = g.constant(vec![3, 4], xs.clone());
            let y = match which {
                0 => p.add(&q)?,
                1 => p.sub(&q)?,
                2 => p.mul(&q)?,
                3 => p.matmul(&q.reshape(vec![4, 1])?)?,
                4 => p.transpose()?,
                5 => p.reshape(vec![2, 6])?,
                6 => Tensor::concat(&[p.clone(), c.clone()], 0)?,
                7 => p.slice(1, 1, 2)?,
                8 => p.gather(0, &idx)?,
                9 => q.broadcast_to(3)?,
                10 => p.softmax()?,
                11 => p.masked_fill(&mask)?.softmax()?,
                12 => p.layer_norm(&q, &r)?,
                13 => p.relu()?,
                14 => p.gelu()?,
                15 => p.tanh_act()?,
                16 => p.sigmoid()?,
                17 => p.scale(1.7)?,
                18 => p.add_scalar(-0.3)?,
                19 => p.smooth_l1(&c)?,
                20 => p.sigmoid()?.bce(&c.sigmoid()?)?,
                _ => unreachable!(),
            };
            // Mix with a constant so gradients are not trivially uniform.
            y.mul(&g.constant(
                y.shape().to_vec(),
                (0..y.numel()).map(|i| 0.3 + 0.1 * i as f64).collect(),
            ))?
            .sum_all()
        },
        &store,
        1e-5,
    )
    .unwrap()
}

#[test]
fn all_primitives_match_finite_differences_over_seeds() {
    // Spec-level property: every primitive's reverse-mode gradient matches
    // central finite differences within 1e-6 relative, >= 20 seeds.
    for which in 0..=20 {
        for seed in 0..20 {
            let err = primitive_fd_error(seed, which);
            assert!(
                err <= 1e-6,
                "primitive #{which} seed {seed}: fd error {err}"
            );
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn matmul_shapes_and_fd(m in 1usize..4, k in 1usize..4, n in 1usize..4, seed in 0u64..50) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let data: Vec<f64> = (0..m * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        store.insert("a", vec![m, k], data).unwrap();
        let bdata: Vec<f64> = (0..k * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let err = gradcheck(
            move |g, s| {
                let a = g.param(s, "a");
                let b = g.constant(vec![k, n], bdata.clone());
                a.matmul(&b)?.sum_all()
            },
            &store,
            1e-5,
        ).unwrap();
        prop_assert!(err <= 1e-6);
    }

    #[test]
    fn batched_matmul_matches_per_slice(b in 1usize..4, m in 1usize..4, k in 1usize..4, n in 1usize..4, seed in 0u64..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g: Graph<f64> = Graph::new();
        let a = consts(&g, &[b, m, k], &mut rng);
        let w = consts(&g, &[k, n], &mut rng);
        let full = a.matmul(&w).unwrap().to_vec();
        for bi in 0..b {
            let part = a.slice(0, bi, 1).unwrap().reshape(vec![m, k]).unwrap();
            let pv = part.matmul(&w).unwrap().to_vec();
            prop_assert_eq!(&full[bi * m * n..(bi + 1) * m * n], &pv[..]);
        }
    }
}
