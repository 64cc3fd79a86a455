use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use natsel::model::{batch_losses, softmax, Classifier, ClassifierConfig, LossConfig};
use natsel::tape::{Tape, Var};
use natsel::tensor::{self, UnaryOp};
use natsel::trainer::weighted_batch_loss;
use natsel::Tensor;

const H: f64 = 1e-6;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Builds a scalar from one leaf; the closure is replayed for each
/// finite-difference evaluation.
type Build = dyn Fn(&mut Tape, Var) -> Var;

fn check(x: &Tensor, build: &Build) -> f64 {
    let mut tape = Tape::new();
    let p = tape.param(x.clone());
    let root = build(&mut tape, p);
    let g = tape.backward(root).unwrap().into_vec().remove(0);
    let value = |xv: Tensor| {
        let mut t = Tape::new();
        let p = t.param(xv);
        let r = build(&mut t, p);
        t.value(r).unwrap().item().unwrap()
    };
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let shifted = |d: f64| {
            let mut v = x.data().to_vec();
            v[i] += d;
            Tensor::new(x.shape().to_vec(), v).unwrap()
        };
        let fd = (value(shifted(H)) - value(shifted(-H))) / (2.0 * H);
        let a = g.data()[i];
        worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-3));
    }
    worst
}

/// Weighted sum with fixed coefficients so every output element matters.
fn project(t: &mut Tape, v: Var, seed: u64) -> Var {
    let shape = t.value(v).unwrap().shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = t.constant(rand_tensor(&mut rng, &shape, -1.0, 1.0));
    let m = t.mul(v, c).unwrap();
    t.sum(m).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn elementwise_ops(seed in any::<u64>(), r in 1usize..4, c in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut rng, &[r, c], 0.2, 2.0);
        let other = rand_tensor(&mut rng, &[r, c], -1.5, 1.5);
        let builds: Vec<Box<Build>> = vec![
            Box::new(move |t, v| { let e = t.exp(v).unwrap(); project(t, e, seed) }),
            Box::new(move |t, v| { let e = t.log(v).unwrap(); project(t, e, seed) }),
            Box::new(move |t, v| { let e = t.scale(v, -2.5).unwrap(); project(t, e, seed) }),
            Box::new(move |t, v| { let e = t.unary(UnaryOp::AddScalar(0.7), v).unwrap(); project(t, e, seed) }),
            Box::new(move |t, v| { let e = t.unary(UnaryOp::Pow(2.5), v).unwrap(); project(t, e, seed) }),
            Box::new(move |t, v| { let e = t.unary(UnaryOp::ClampMin(-10.0), v).unwrap(); project(t, e, seed) }),
            Box::new({ let o = other.clone(); move |t, v| { let k = t.constant(o.clone()); let e = t.mul(v, k).unwrap(); project(t, e, seed) } }),
            Box::new({ let o = other.clone(); move |t, v| { let k = t.constant(o.clone()); let e = t.sub(k, v).unwrap(); project(t, e, seed) } }),
            Box::new(move |t, v| { let e = t.mul(v, v).unwrap(); project(t, e, seed) }),
            Box::new(move |t, v| { let s = t.sum(v).unwrap(); let e = t.add(v, s).unwrap(); project(t, e, seed) }),
            Box::new(move |t, v| { let e = t.mean(v).unwrap(); t.scale(e, 3.0).unwrap() }),
        ];
        for b in &builds {
            let err = check(&x, b.as_ref());
            prop_assert!(err <= 1e-5, "relative error {}", err);
        }
    }

    #[test]
    fn relu_away_from_kink(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::new(vec![6], (0..6).map(|i| {
            let m = rng.random_range(0.1..2.0);
            if i % 2 == 0 { m } else { -m }
        }).collect()).unwrap();
        let err = check(&x, &move |t, v| { let e = t.relu(v).unwrap(); project(t, e, seed) });
        prop_assert!(err <= 1e-5, "relative error {}", err);
    }

    #[test]
    fn matrix_ops(seed in any::<u64>(), m in 1usize..4, k in 1usize..4, n in 2usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_tensor(&mut rng, &[m, k], -1.0, 1.0);
        let b = rand_tensor(&mut rng, &[k, n], -1.0, 1.0);
        let bias = rand_tensor(&mut rng, &[n], -1.0, 1.0);
        let idx: Vec<usize> = (0..m).map(|_| rng.random_range(0..n)).collect();
        let (b1, b2) = (b.clone(), bias.clone());
        let err = check(&a, &move |t, v| { let w = t.constant(b1.clone()); let z = t.matmul(v, w).unwrap(); project(t, z, seed) });
        prop_assert!(err <= 1e-5, "relative error {}", err);
        let a1 = a.clone();
        let err = check(&b, &move |t, v| { let x = t.constant(a1.clone()); let z = t.matmul(x, v).unwrap(); project(t, z, seed) });
        prop_assert!(err <= 1e-5, "relative error {}", err);
        let a2 = a.clone();
        let bw = b.clone();
        let err = check(&bias, &move |t, v| {
            let x = t.constant(a2.clone());
            let w = t.constant(bw.clone());
            let z = t.matmul(x, w).unwrap();
            let z = t.add_bias(z, v).unwrap();
            project(t, z, seed)
        });
        prop_assert!(err <= 1e-5, "relative error {}", err);
        let z0 = tensor::matmul(&a, &b).unwrap();
        let z0 = tensor::add_bias(&z0, &b2).unwrap();
        let i1 = idx.clone();
        let err = check(&z0, &move |t, v| {
            let l = t.log_softmax_rows(v).unwrap();
            let g = t.gather_rows(l, &i1).unwrap();
            t.sum(g).unwrap()
        });
        prop_assert!(err <= 1e-5, "relative error {}", err);
        let err = check(&z0, &move |t, v| { let r = t.row_sum(v).unwrap(); project(t, r, seed) });
        prop_assert!(err <= 1e-5, "relative error {}", err);
        let err = check(&z0, &move |t, v| { let r = t.reshape(v, &[m * n]).unwrap(); project(t, r, seed) });
        prop_assert!(err <= 1e-5, "relative error {}", err);
    }

    #[test]
    fn im2col_gradient(seed in any::<u64>(), h in 2usize..5, w in 2usize..5, c in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut rng, &[2, h, w, c], -1.0, 1.0);
        let err = check(&x, &move |t, v| { let p = t.im2col(v, 2).unwrap(); project(t, p, seed) });
        prop_assert!(err <= 1e-5, "relative error {}", err);
    }

    #[test]
    fn backward_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut rng, &[3, 4], 0.1, 1.5);
        let l1 = |t: &mut Tape, v: Var| { let e = t.exp(v).unwrap(); project(t, e, seed) };
        let l2 = |t: &mut Tape, v: Var| { let e = t.log(v).unwrap(); let m = t.mul(e, v).unwrap(); t.sum(m).unwrap() };
        let grad = |f: &dyn Fn(&mut Tape, Var) -> Var| {
            let mut t = Tape::new();
            let p = t.param(x.clone());
            let r = f(&mut t, p);
            t.backward(r).unwrap().into_vec().remove(0)
        };
        let combined = grad(&|t, v| {
            let r1 = l1(t, v);
            let r2 = l2(t, v);
            let s1 = t.scale(r1, a).unwrap();
            let s2 = t.scale(r2, b).unwrap();
            t.add(s1, s2).unwrap()
        });
        let (g1, g2) = (grad(&l1), grad(&l2));
        for i in 0..x.len() {
            let expect = a * g1.data()[i] + b * g2.data()[i];
            prop_assert!((combined.data()[i] - expect).abs() <= 1e-10);
        }
    }

    #[test]
    fn ce_gradient_is_p_minus_onehot(seed in any::<u64>(), b in 1usize..5, k in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = rand_tensor(&mut rng, &[b, k], -4.0, 4.0);
        let y: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();
        let mut t = Tape::new();
        let v = t.param(z.clone());
        let l = batch_losses(&mut t, v, &y, &LossConfig::cross_entropy()).unwrap();
        let s = t.sum(l).unwrap();
        let g = t.backward(s).unwrap().into_vec().remove(0);
        for r in 0..b {
            let row = Tensor::new(vec![k], z.data()[r * k..(r + 1) * k].to_vec()).unwrap();
            let p = softmax(&row).unwrap();
            for j in 0..k {
                let expect = p.data()[j] - f64::from(u8::from(j == y[r]));
                prop_assert!((g.data()[r * k + j] - expect).abs() <= 1e-10);
            }
        }
    }
}

fn small_model(seed: u64) -> Classifier {
    Classifier::new(ClassifierConfig {
        height: 3,
        width: 3,
        channels: 1,
        hidden: vec![5],
        conv: None,
        classes: 3,
        init_seed: seed,
    })
    .unwrap()
}

#[test]
fn weighted_gradient_is_weighted_mean_of_sample_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for case in 0..10 {
        let model = small_model(case);
        let b = 5;
        let x = rand_tensor(&mut rng, &[b, 9], -1.0, 1.0);
        let y: Vec<usize> = (0..b).map(|_| rng.random_range(0..3)).collect();
        let w: Vec<f64> = (0..b).map(|_| rng.random_range(0.0..2.5)).collect();
        let grads = |rows: &[usize], weights: &[f64]| {
            let xs = Tensor::new(
                vec![rows.len(), 9],
                rows.iter().flat_map(|&r| x.data()[r * 9..(r + 1) * 9].to_vec()).collect(),
            )
            .unwrap();
            let ys: Vec<usize> = rows.iter().map(|&r| y[r]).collect();
            let mut t = Tape::new();
            let vars = model.register(&mut t);
            let z = model.forward_taped(&mut t, &vars, &xs).unwrap();
            let l = batch_losses(&mut t, z, &ys, &LossConfig::cross_entropy()).unwrap();
            let total = weighted_batch_loss(&mut t, l, weights).unwrap();
            t.backward(total).unwrap().into_vec()
        };
        let all: Vec<usize> = (0..b).collect();
        let full = grads(&all, &w);
        let mut sum: Vec<Vec<f64>> = full.iter().map(|g| vec![0.0; g.len()]).collect();
        for i in 0..b {
            for (acc, g) in sum.iter_mut().zip(grads(&[i], &[1.0])) {
                for (a, v) in acc.iter_mut().zip(g.data()) {
                    *a += w[i] * v / b as f64;
                }
            }
        }
        for (g, s) in full.iter().zip(&sum) {
            for (a, e) in g.data().iter().zip(s) {
                assert!((a - e).abs() <= 1e-12 * (1.0 + e.abs()), "{a} vs {e}");
            }
        }
    }
}

#[test]
fn taped_forward_is_deterministic() {
    let model = small_model(5);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = rand_tensor(&mut rng, &[4, 9], -1.0, 1.0);
    let run = || {
        let mut t = Tape::new();
        let vars = model.register(&mut t);
        let z = model.forward_taped(&mut t, &vars, &x).unwrap();
        let l = batch_losses(&mut t, z, &[0, 1, 2, 0], &LossConfig::cross_entropy()).unwrap();
        let m = t.mean(l).unwrap();
        let g = t.backward(m).unwrap().into_vec();
        (t.value(z).unwrap().clone(), g)
    };
    let (z1, g1) = run();
    let (z2, g2) = run();
    assert_eq!(z1, z2);
    assert_eq!(g1, g2);
    assert_eq!(z1, model.logits_batch(&x).unwrap());
}
