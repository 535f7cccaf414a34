use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use veram::agent::{AgentConfig, AgentParams, RecurrentKind};
use veram::confidence::{attach_confidences, train_confidence_net, ReadoutConfig, SoftmaxRegression};
use veram::data::{generate_synthetic, Dataset, SyntheticConfig};
use veram::diffcore::{SgdState, Tensor};
use veram::learning::{accuracies, baseline_update, evaluate, train, train_step, SchemeConfig, TrainConfig, Variant};
use veram::oracle::{best_fixed_sequence, sequence_accuracy, OracleConfig};

fn tiny(seed: u64, noise: f64, informative: usize) -> SyntheticConfig {
    SyntheticConfig {
        classes: 4,
        per_class: 10,
        dim: 6,
        informative,
        noise,
        rows: 4,
        cols: 4,
        seed,
        ..Default::default()
    }
}

#[test]
fn standard_benchmark_is_pinned() {
    let a = generate_synthetic(&SyntheticConfig::default()).unwrap();
    let b = generate_synthetic(&SyntheticConfig::default()).unwrap();
    assert_eq!(a, b);
    assert_eq!((a.train.len(), a.test.len()), (480, 120));
    assert_eq!(
        (format!("{:016x}", a.train.checksum()), format!("{:016x}", a.test.checksum())),
        ("2bdcc71f5500b7e2".to_string(), "fb5d16f0ed1700a3".to_string())
    );
}

/// Zero weights except a view bias at the shared informative cell, a copy
/// of the features into the hidden state and a nearest-mean classifier.
#[test]
fn hand_built_policy_on_the_informative_cell_is_always_right() {
    let split = generate_synthetic(&SyntheticConfig {
        pool: Some(1),
        informative: 1,
        noise: 0.0,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let cell = split.layout[0][0];
    assert!(split.layout.iter().all(|l| l == &[cell]));
    let (d, k) = (split.train.dim, split.train.num_classes());
    let cfg = AgentConfig {
        embed: 1,
        hidden: 2 * d,
        steps: 1,
        ..AgentConfig::new(split.train.space, d, k)
    };
    let mut p = AgentParams::<f64>::seeded(cfg, 0).unwrap();
    p.zero();
    let center = split.train.space.center::<f64>(cell);
    p.set.get_mut(p.view.1).data_mut().copy_from_slice(&[center.r, center.c]);
    let f = 1 + d;
    let mut lv = vec![0.0; 2 * d * f];
    for i in 0..d {
        lv[i * f + 1 + i] = 1.0;
        lv[(d + i) * f + 1 + i] = -1.0;
    }
    *p.set.get_mut(p.lv.0) = Tensor::matrix(2 * d, f, lv).unwrap();
    let mut w = vec![0.0; k * 2 * d];
    let mut b = vec![0.0; k];
    for c in 0..k {
        let s = split.train.shapes.iter().find(|s| s.label == c).unwrap();
        let mu: Vec<f64> = s.view(cell).iter().map(|&x| x as f64).collect();
        for i in 0..d {
            w[c * 2 * d + i] = mu[i];
            w[c * 2 * d + d + i] = -mu[i];
        }
        b[c] = -0.5 * mu.iter().map(|x| x * x).sum::<f64>();
    }
    *p.set.get_mut(p.class.0) = Tensor::matrix(k, 2 * d, w).unwrap();
    *p.set.get_mut(p.class.1) = Tensor::vector(b);

    for ds in [&split.train, &split.test] {
        let ev = evaluate(ds, &p).unwrap();
        assert_eq!(ev.instance_accuracy, 1.0);
        assert_eq!(ev.visits[0][split.train.space.offset(cell)], ds.len());
    }
}

#[test]
fn oracle_single_view_picks_an_informative_cell() {
    let split = generate_synthetic(&SyntheticConfig {
        noise: 0.0,
        ..tiny(3, 0.0, 1)
    })
    .unwrap();
    let cfg = OracleConfig::new(1);
    let best = best_fixed_sequence(&split.train, &split.test, &cfg).unwrap();
    assert_eq!(best.evaluated, 16);
    let cell = best.sequence[0];
    assert!(split.layout.iter().any(|l| l.contains(&cell)));
    for g in split.train.space.all_cells() {
        let acc = sequence_accuracy(&split.train, &split.test, &[g], &cfg.readout).unwrap();
        assert!(acc <= best.accuracy);
    }
    // every class informative at the chosen cell is classified perfectly
    let xs: Vec<&[f32]> = split.train.shapes.iter().map(|s| s.view(cell)).collect();
    let ys: Vec<usize> = split.train.shapes.iter().map(|s| s.label).collect();
    let net = SoftmaxRegression::fit(&xs, &ys, 4, &cfg.readout).unwrap();
    for s in &split.test.shapes {
        if split.layout[s.label].contains(&cell) {
            assert_eq!(net.predict(s.view(cell)), s.label);
        }
    }
}

#[test]
fn repeated_cells_add_nothing_without_noise() {
    let split = generate_synthetic(&tiny(5, 0.0, 1)).unwrap();
    let readout = ReadoutConfig::default();
    for g in split.train.space.all_cells() {
        let once = sequence_accuracy(&split.train, &split.test, &[g], &readout).unwrap();
        let twice = sequence_accuracy(&split.train, &split.test, &[g, g], &readout).unwrap();
        assert!(twice <= once, "{g:?}: {twice} > {once}");
    }
}

#[test]
fn oracle_is_deterministic() {
    let split = generate_synthetic(&tiny(8, 0.1, 1)).unwrap();
    let cfg = OracleConfig::new(2);
    let a = best_fixed_sequence(&split.train, &split.test, &cfg).unwrap();
    let b = best_fixed_sequence(&split.train, &split.test, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.evaluated, 256);
}

#[test]
fn ambiguous_cells_get_lower_confidence() {
    let mut split = generate_synthetic(&SyntheticConfig::default()).unwrap();
    let net = train_confidence_net(&split.train, &ReadoutConfig::default()).unwrap();
    attach_confidences(&net, &mut split.test).unwrap();
    let (mut inf, mut amb) = ((0.0, 0usize), (0.0, 0usize));
    for s in &split.test.shapes {
        for g in split.test.space.all_cells() {
            let c = s.confidence(g).unwrap() as f64;
            assert!((0.0..=1.0).contains(&c));
            if split.layout[s.label].contains(&g) {
                inf = (inf.0 + c, inf.1 + 1);
            } else {
                amb = (amb.0 + c, amb.1 + 1);
            }
        }
    }
    let (inf, amb) = (inf.0 / inf.1 as f64, amb.0 / amb.1 as f64);
    assert!(amb < inf, "ambiguous {amb} vs informative {inf}");
}

#[test]
fn shuffled_labels_fall_to_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (n, d, k) = (4000, 8, 4);
    let xs: Vec<Vec<f32>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let ys: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let refs: Vec<&[f32]> = xs.iter().map(Vec::as_slice).collect();
    let net = SoftmaxRegression::fit(&refs[..2000], &ys[..2000], k, &ReadoutConfig::default()).unwrap();
    let acc = net.accuracy(&refs[2000..], &ys[2000..]);
    // binomial sd at p = 0.25, n = 2000 is about 0.0097
    assert!((acc - 0.25).abs() < 0.04, "{acc}");
}

#[test]
fn random_guesses_score_one_over_k() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let k = 10;
    let mut confusion = vec![vec![0usize; k]; k];
    for row in confusion.iter_mut() {
        for _ in 0..1000 {
            row[rng.random_range(0..k)] += 1;
        }
    }
    let (inst, class, missing) = accuracies(&confusion);
    assert!(missing.is_empty());
    // sd of the mean of 10^4 Bernoulli(0.1) is 0.003
    assert!((inst - 0.1).abs() < 0.015 && (class - 0.1).abs() < 0.015, "{inst} {class}");
}

#[test]
fn baseline_tracks_the_mean_reward() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // stationary sd at rate 0.005 is about 0.023
    let mut b: f64 = 0.0;
    for _ in 0..1000 {
        let r = if rng.random_bool(0.7) { 1.0 } else { 0.0 };
        b = baseline_update(b, r, 0.005);
    }
    assert!((b - 0.7).abs() <= 0.05, "{b}");
}

fn small_agent(ds: &Dataset, steps: usize) -> AgentConfig {
    AgentConfig {
        hidden: 16,
        embed: 4,
        steps,
        ..AgentConfig::new(ds.space, ds.dim, ds.num_classes())
    }
}

#[test]
fn loss_falls_with_uniform_weights_and_wide_policy() {
    for seed in 0..5 {
        let split = generate_synthetic(&tiny(seed, 0.1, 2)).unwrap();
        let cfg = AgentConfig {
            delta: 0.5,
            ..small_agent(&split.train, 2)
        };
        let mut params = AgentParams::<f64>::seeded(cfg, seed).unwrap();
        let mut opt = SgdState::new(&params.set, 0.9);
        let tc = TrainConfig {
            scheme: SchemeConfig {
                delta: 0.5,
                lambda_loc: 0.0,
                ..SchemeConfig::new(Variant::Boundary)
            },
            batch: 10,
            schedule: veram::diffcore::LrSchedule::compressed(1e-2, 1e-4, 50),
            seed,
            ..TrainConfig::new(Variant::Boundary, 50)
        };
        let m = train(&split.train, &mut params, &mut opt, &tc, |_, _, _| Ok(())).unwrap();
        let (first, last) = (m[0].nll, m[49].nll);
        assert!(last < first, "seed {seed}: nll {first} -> {last}");
    }
}

#[test]
fn single_shape_step_is_repeatable() {
    let split = generate_synthetic(&tiny(11, 0.3, 1)).unwrap();
    let shape = &split.train.shapes[0];
    let delta = |_: ()| {
        let mut p = AgentParams::<f64>::seeded(small_agent(&split.train, 3), 4).unwrap();
        let mut opt = SgdState::new(&p.set, 0.9);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        train_step(&[shape], &mut p, &mut opt, 0.01, &SchemeConfig::new(Variant::Boundary), &mut rng).unwrap();
        p.checksum()
    };
    assert_eq!(delta(()), delta(()));
}

#[test]
fn single_thread_training_is_bit_reproducible() {
    let mut split = generate_synthetic(&tiny(13, 0.2, 1)).unwrap();
    let net = train_confidence_net(&split.train, &ReadoutConfig::default()).unwrap();
    attach_confidences(&net, &mut split.train).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let run = || {
        pool.install(|| {
            let cfg = AgentConfig {
                recurrent: RecurrentKind::Lstm,
                ..small_agent(&split.train, 3)
            };
            let mut p = AgentParams::<f64>::seeded(cfg, 1).unwrap();
            let mut opt = SgdState::new(&p.set, 0.9);
            let tc = TrainConfig {
                seed: 6,
                batch: 7,
                ..TrainConfig::new(Variant::Loc, 5)
            };
            let m = train(&split.train, &mut p, &mut opt, &tc, |_, _, _| Ok(())).unwrap();
            (m, p.checksum())
        })
    };
    assert_eq!(run(), run());
}
