//! Gradient-sign attacks on a linear softmax model, where the input gradient
//! has a closed form, plus invariants on random small networks.

use dustbin::attack::{fgs_step, run_attack_batch, tfgs_step, AttackConfig, AttackKind};
use dustbin::data::{Dataset, Label};
use dustbin::nn::{build_mlp, Architecture, LayerSpec, Model, Param};
use dustbin::tensor::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn linear_model(d: usize, k: usize, augmented: bool, rng: &mut ChaCha8Rng) -> Model<f64> {
    let arch = Architecture {
        name: "linear".into(),
        input_shape: vec![d],
        layers: vec![LayerSpec::Dense { units: k }, LayerSpec::Softmax],
    };
    let params = vec![
        Param {
            name: "dense1.weight".into(),
            value: Tensor::from_fn(vec![d, k], |_| rng.gen_range(-1.0..1.0)),
        },
        Param {
            name: "dense1.bias".into(),
            value: Tensor::from_fn(vec![k], |_| rng.gen_range(-0.5..0.5)),
        },
    ];
    Model::from_parts(arch, params, augmented.then_some(k - 1)).unwrap()
}

/// Closed-form dL/dx for cross-entropy of softmax(xW + b) towards `target`:
/// W (p - e_target).
fn linear_grad(model: &Model<f64>, x: &[f64], target: usize) -> (Vec<f64>, Vec<f64>) {
    let w = &model.params()[0].value;
    let b = &model.params()[1].value;
    let (d, k) = (w.shape()[0], w.shape()[1]);
    let z: Vec<f64> = (0..k)
        .map(|j| b.data()[j] + (0..d).map(|i| x[i] * w.data()[i * k + j]).sum::<f64>())
        .collect();
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    let p: Vec<f64> = e.iter().map(|v| v / s).collect();
    let g = (0..d)
        .map(|i| {
            (0..k)
                .map(|j| w.data()[i * k + j] * (p[j] - f64::from(u8::from(j == target))))
                .sum()
        })
        .collect();
    (g, p)
}

fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn points(rng: &mut ChaCha8Rng, n: usize, d: usize, k: usize) -> Dataset<f64> {
    let data = (0..n * d).map(|_| rng.gen_range(0.0..1.0)).collect();
    let labels = (0..n).map(|_| Label::Class(rng.gen_range(0..k))).collect();
    Dataset::new(vec![d], data, labels, k, "points").unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn fgs_matches_closed_form(d in 1usize..8, k in 2usize..6, eps in 0.01f64..0.5, clip: bool, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = linear_model(d, k, false, &mut rng);
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(0.0..1.0)).collect();
        let y = rng.gen_range(0..k);
        let adv = fgs_step(&model, &Tensor::new(vec![1, d], x.clone()).unwrap(), &[y], eps, clip).unwrap();
        let (g, _) = linear_grad(&model, &x, y);
        for i in 0..d {
            let mut want = x[i] + eps * sgn(g[i]);
            if clip {
                want = want.clamp(0.0, 1.0);
            }
            prop_assert!((adv.data()[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn tfgs_descends_towards_least_likely(d in 1usize..8, k in 3usize..6, eps in 0.01f64..0.5, forbid: bool, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = linear_model(d, k, true, &mut rng);
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(0.0..1.0)).collect();
        let (adv, targets) = tfgs_step(&model, &Tensor::new(vec![1, d], x.clone()).unwrap(), eps, true, forbid).unwrap();
        let (_, p) = linear_grad(&model, &x, 0);
        let candidates: Vec<usize> = (0..k).filter(|&j| !(forbid && j == k - 1)).collect();
        let least = candidates.iter().copied().fold(candidates[0], |b, j| if p[j] < p[b] { j } else { b });
        prop_assert_eq!(targets[0], least);
        if forbid {
            prop_assert!(targets[0] != k - 1);
        }
        let (g, _) = linear_grad(&model, &x, least);
        for i in 0..d {
            let want = (x[i] - eps * sgn(g[i])).clamp(0.0, 1.0);
            prop_assert!((adv.data()[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn perturbation_stays_on_the_sign_grid(n in 1usize..20, eps in 0.0f64..0.4, iters in 1usize..4, tfgs: bool, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = build_mlp::<f64>(5, &[8], 3, true, seed).unwrap();
        let data = points(&mut rng, n, 5, 3);
        let kind = if tfgs { AttackKind::Tfgs } else { AttackKind::Fgs };
        let cfg = AttackConfig::of_kind(kind, eps, iters, true);
        let batch = run_attack_batch(&model, &data, &cfg, 1).unwrap();
        for (o, (a, x)) in batch.outcomes.iter().zip(batch.adversarial.raw().chunks(5).zip(data.raw().chunks(5))) {
            prop_assert!(o.iterations >= 1 && o.iterations <= iters);
            for (&av, &xv) in a.iter().zip(x) {
                prop_assert!((0.0..=1.0).contains(&av));
                prop_assert!((av - xv).abs() <= eps * o.iterations as f64 + 1e-12);
                // A single step moves a coordinate by -eps, 0 or +eps unless
                // clipping lands it on the boundary.
                if iters == 1 && av != 0.0 && av != 1.0 {
                    let d = (av - xv).abs();
                    prop_assert!(d < 1e-12 || (d - eps).abs() < 1e-12);
                }
            }
            if let Some(t) = o.target {
                prop_assert!(t != 3, "dustbin targeted");
            }
            let rms = (a.iter().zip(x).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / 5.0).sqrt();
            prop_assert!((o.distortion - rms).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_epsilon_is_identity(n in 1usize..20, tfgs: bool, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = build_mlp::<f64>(4, &[6], 3, false, seed).unwrap();
        let data = points(&mut rng, n, 4, 3);
        let kind = if tfgs { AttackKind::Tfgs } else { AttackKind::Fgs };
        let batch = run_attack_batch(&model, &data, &AttackConfig::of_kind(kind, 0.0, 2, false), 1).unwrap();
        prop_assert_eq!(batch.adversarial.raw(), data.raw());
        let preds = model.probabilities(&data.range_tensor(0..n)).unwrap();
        for (o, row) in batch.outcomes.iter().zip(preds.rows()) {
            prop_assert_eq!(o.distortion, 0.0);
            let pred = dustbin::nn::argmax(row).0;
            let want = match (kind, o.true_label) {
                (AttackKind::Fgs, Label::Class(y)) => pred != y,
                (AttackKind::Tfgs, _) => Some(pred) == o.target,
                _ => unreachable!(),
            };
            prop_assert_eq!(o.success, want);
        }
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = build_mlp::<f64>(6, &[10], 4, true, 8).unwrap();
    let data = points(&mut rng, 700, 6, 4);
    let cfg = AttackConfig::tfgs(0.1, 2, true);
    let one = run_attack_batch(&model, &data, &cfg, 1).unwrap();
    let three = run_attack_batch(&model, &data, &cfg, 3).unwrap();
    assert_eq!(one.adversarial.raw(), three.adversarial.raw());
    assert_eq!(one.outcomes, three.outcomes);
}
