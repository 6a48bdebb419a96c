use rand::Rng;

use help_core::archspace::{
    default_reference_set, sample_architectures, Architecture, SearchSpace,
};
use help_core::devicesim::{
    build_dataset, generate_pool, DeviceKind, DevicePool, PoolConfig, Split,
};
use help_core::embedding::TaskSource;
use help_core::metalearn::{
    adapted_theta, episode_gradient, evaluate, inner_adapt, meta_train, read_log, EpisodeTensors,
    InnerScope, InnerSettings, LatencyPredictor, MetaError, MetaTrainConfig, OraclePredictor,
    TrainState, Variant,
};
use help_core::nnet::gradcheck::relative_error;
use help_core::nnet::{ParamSet, Shape, Tape, Tensor};
use help_core::predictor::{HelpModel, ModelConfig};
use help_core::rng;

struct Fixture {
    pool: DevicePool,
    source: TaskSource,
    train_ids: Vec<String>,
}

fn fixture() -> Fixture {
    let pool = generate_pool(&PoolConfig::default(), 5, 1).unwrap();
    let archs = sample_architectures(SearchSpace::Cell, 400, 2).unwrap();
    let ds = build_dataset(&pool, &archs, 300, 3).unwrap();
    let refset = default_reference_set(SearchSpace::Cell, 10, 0).unwrap();
    let source = TaskSource::new(&ds, pool.profiles(), refset, false, 4).unwrap();
    let train_ids = pool.ids_in_split(Split::MetaTrain);
    Fixture {
        pool,
        source,
        train_ids,
    }
}

fn small() -> ModelConfig {
    ModelConfig {
        arch_hidden: 6,
        gcn_layers: 2,
        device_hidden: 5,
        header_hidden: 7,
        modulator_hidden: 4,
        ..ModelConfig::for_space(SearchSpace::Cell)
    }
}

fn perturbed(model: &HelpModel, params: &ParamSet, seed: u64) -> ParamSet {
    let mut r = rng::rng(seed);
    let mut p = params.clone();
    for i in model.modulator_indices() {
        for x in p.tensor_mut(i).data_mut() {
            *x += 0.1 * r.random_range(-1.0..1.0);
        }
    }
    for &i in model.alpha_indices() {
        for x in p.tensor_mut(i).data_mut() {
            *x = r.random_range(0.02..0.1);
        }
    }
    p
}

fn full_settings(steps: usize) -> InnerSettings {
    InnerSettings {
        steps,
        use_modulator: true,
        scope: InnerScope::All,
        create_graph: true,
    }
}

#[test]
fn meta_gradient_matches_finite_differences_through_two_steps() {
    let f = fixture();
    let settings = full_settings(2);
    for seed in 0..3 {
        let (model, base) = HelpModel::init(small(), 1e-2, seed).unwrap();
        let params = perturbed(&model, &base, seed);
        let ep = f
            .source
            .sample_episode(&f.train_ids[0], 10, 20, seed)
            .unwrap();
        let ep = EpisodeTensors::new(&model, &ep, Variant::Full).unwrap();
        let g = episode_gradient(&model, &params, &ep, &settings).unwrap();
        let loss = |p: &ParamSet| {
            episode_gradient(&model, p, &ep, &settings)
                .unwrap()
                .query_loss
        };

        let groups = [
            model.predictor_indices().to_vec(),
            model.modulator_indices(),
            model.alpha_indices().to_vec(),
        ];
        let mut r = rng::child_rng(seed, "coords", 0);
        for group in groups {
            let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
            for _ in 0..32 {
                let i = group[r.random_range(0..group.len())];
                let j = r.random_range(0..params.tensor(i).data().len());
                let h = 1e-5;
                let mut p = params.clone();
                p.tensor_mut(i).data_mut()[j] += h;
                let up = loss(&p);
                p.tensor_mut(i).data_mut()[j] -= 2.0 * h;
                let down = loss(&p);
                numeric.push((up - down) / (2.0 * h));
                analytic.push(g.grads[i].as_ref().unwrap().data()[j]);
            }
            let err = relative_error(&[Tensor::row(analytic)], &[Tensor::row(numeric)]);
            assert!(err < 1e-3, "seed {seed}: relative error {err}");
        }
    }
}

#[test]
fn identity_modulator_with_no_steps_is_bit_identical_to_plain_forward() {
    let f = fixture();
    let (model, params) = HelpModel::init(small(), 1e-2, 5).unwrap();
    let archs = sample_architectures(SearchSpace::Cell, 100, 9).unwrap();
    let v_h = f.source.embedding(&f.train_ids[0], 0).unwrap().values;
    let v_row = Tensor::row(v_h.clone());
    let settings = InnerSettings {
        steps: 0,
        ..full_settings(0)
    };
    let empty = model.batch(&[]).unwrap();
    let y = Tensor::zeros(Shape::new(0, 1));
    let (theta, _) = adapted_theta(&model, &params, &empty, &y, &v_row, &settings).unwrap();
    let modulated = model.predict_with(&theta, &archs, &v_h).unwrap();
    let plain = model.predict_standardized(&params, &archs, &v_h).unwrap();
    assert_eq!(
        modulated.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
        plain.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn weight_scale_of_two_doubles_header_weights() {
    let (model, mut params) = HelpModel::init(small(), 1e-2, 0).unwrap();
    let mut weight_slots = Vec::new();
    let mut offset = 0;
    for name in ["head.fc0", "head.fc1", "head.fc2"] {
        let w = params.get(&format!("{name}.w")).unwrap().shape().len();
        let b = params.get(&format!("{name}.b")).unwrap().shape().len();
        weight_slots.push(offset..offset + w);
        offset += w + b;
    }
    let bias = params.get_mut("mod.fc1.b").unwrap();
    for range in &weight_slots {
        for x in &mut bias.data_mut()[range.clone()] {
            *x = 2.0;
        }
    }
    let mut tape = Tape::new();
    let theta = model.predictor_vars(&mut tape, &params).unwrap();
    let phi = model.modulator_vars(&mut tape, &params).unwrap();
    let v = tape.constant(Tensor::row(vec![0.5; 10])).unwrap();
    let out = model.modulate(&mut tape, &theta, &phi, v).unwrap();
    for pos in model.header_positions() {
        let before = tape.value(theta[pos]).clone();
        let after = tape.value(out[pos]).clone();
        let is_weight = (pos - model.header_positions()[0]) % 2 == 0;
        let want = if is_weight {
            before.map(|x| 2.0 * x)
        } else {
            before
        };
        assert_eq!(after, want, "position {pos}");
    }
}

#[test]
fn zero_rates_leave_the_predictor_unchanged() {
    let f = fixture();
    let (model, mut params) = HelpModel::init(small(), 0.0, 1).unwrap();
    let ep = f.source.sample_episode(&f.train_ids[1], 10, 5, 3).unwrap();
    let ep = EpisodeTensors::new(&model, &ep, Variant::FewShot).unwrap();
    let settings = InnerSettings {
        use_modulator: false,
        ..full_settings(3)
    };
    let (theta, _) = adapted_theta(
        &model,
        &params,
        &ep.support,
        &ep.support_y,
        &ep.v_h,
        &settings,
    )
    .unwrap();
    for (t, &i) in theta.iter().zip(model.predictor_indices()) {
        assert_eq!(t, params.tensor(i));
    }
    // and small positive rates move it downhill on the support loss
    for &i in model.alpha_indices() {
        for x in params.tensor_mut(i).data_mut() {
            *x = 1e-3;
        }
    }
    let mut tape = Tape::new();
    let th = model.predictor_vars(&mut tape, &params).unwrap();
    let al = model.alpha_vars(&mut tape, &params).unwrap();
    let v = tape.constant(ep.v_h.clone()).unwrap();
    let sx = tape.constant(ep.support.features.clone()).unwrap();
    let sy = tape.constant(ep.support_y.clone()).unwrap();
    let one = InnerSettings {
        steps: 1,
        ..settings
    };
    let res = inner_adapt(
        &model,
        &mut tape,
        &th,
        None,
        &al,
        sx,
        ep.support.len,
        sy,
        v,
        &one,
    )
    .unwrap();
    let pred = model
        .forward_var(&mut tape, &res.theta, sx, ep.support.len, v)
        .unwrap();
    let after = tape.mse(pred, sy).unwrap();
    assert!(tape.value(after).item() < res.support_loss);
}

#[test]
fn zero_meta_learning_rate_keeps_parameters() {
    let f = fixture();
    let (model, params) = HelpModel::init(small(), 1e-2, 2).unwrap();
    let cfg = MetaTrainConfig {
        episodes: 2,
        meta_batch: 2,
        query_size: 16,
        meta_lr: Some(0.0),
        ..MetaTrainConfig::default()
    };
    let out = meta_train(
        &model,
        &f.source,
        &f.train_ids,
        &cfg,
        TrainState::new(params.clone()),
        None,
    )
    .unwrap();
    assert_eq!(out.state.params, params);
    assert_eq!(out.log.len(), 2);
}

#[test]
fn resumed_training_reproduces_the_uninterrupted_run() {
    let f = fixture();
    let (model, params) = HelpModel::init(small(), 1e-2, 3).unwrap();
    let cfg = MetaTrainConfig {
        episodes: 4,
        meta_batch: 2,
        query_size: 16,
        meta_lr: Some(1e-3),
        checkpoint_every: 2,
        ..MetaTrainConfig::default()
    };
    let a = tempfile::tempdir().unwrap();
    let straight = meta_train(
        &model,
        &f.source,
        &f.train_ids,
        &cfg,
        TrainState::new(params.clone()),
        Some(a.path()),
    )
    .unwrap();

    let b = tempfile::tempdir().unwrap();
    let half = MetaTrainConfig {
        episodes: 2,
        ..cfg.clone()
    };
    meta_train(
        &model,
        &f.source,
        &f.train_ids,
        &half,
        TrainState::new(params),
        Some(b.path()),
    )
    .unwrap();
    let state = TrainState::load(&b.path().join("checkpoint")).unwrap();
    assert_eq!(state.iteration, 2);
    let resumed = meta_train(&model, &f.source, &f.train_ids, &cfg, state, Some(b.path())).unwrap();

    assert_eq!(resumed.state.params, straight.state.params);
    let strip = |rows: Vec<help_core::metalearn::LogRow>| -> Vec<(usize, u64, u64)> {
        rows.iter()
            .map(|r| {
                (
                    r.iteration,
                    r.mean_support_loss.to_bits(),
                    r.mean_query_loss.to_bits(),
                )
            })
            .collect()
    };
    assert_eq!(
        strip(read_log(&a.path().join("train_log.csv")).unwrap()),
        strip(read_log(&b.path().join("train_log.csv")).unwrap())
    );
}

#[test]
fn training_lowers_the_query_loss() {
    let f = fixture();
    let (model, params) = HelpModel::init(small(), 1e-2, 4).unwrap();
    let cfg = MetaTrainConfig {
        episodes: 60,
        meta_batch: 4,
        query_size: 32,
        meta_lr: Some(3e-3),
        ..MetaTrainConfig::default()
    };
    let out = meta_train(
        &model,
        &f.source,
        &f.train_ids,
        &cfg,
        TrainState::new(params),
        None,
    )
    .unwrap();
    let head: f64 = out.log[..10].iter().map(|r| r.mean_query_loss).sum();
    let tail: f64 = out.log[50..].iter().map(|r| r.mean_query_loss).sum();
    assert!(tail < head, "first ten {head}, last ten {tail}");
}

#[test]
fn oracle_scores_one_and_a_constant_predictor_is_rejected() {
    let f = fixture();
    let device = f.pool.profiles().next().unwrap();
    let archs = sample_architectures(SearchSpace::Cell, 200, 11).unwrap();
    let mut noiseless = device.clone();
    if let DeviceKind::Synthetic(s) = &mut noiseless.kind {
        s.noise_cv = 0.0;
    }
    let rho = evaluate(&OraclePredictor(&noiseless), &noiseless, &archs, 0).unwrap();
    assert_eq!(rho, 1.0);

    struct Constant;
    impl LatencyPredictor for Constant {
        fn predict_ms(&self, archs: &[Architecture]) -> Result<Vec<f64>, MetaError> {
            Ok(vec![1.0; archs.len()])
        }
    }
    assert!(matches!(
        evaluate(&Constant, device, &archs, 0),
        Err(MetaError::Stats(_))
    ));
}

#[test]
fn empty_support_with_steps_is_an_error() {
    let (model, params) = HelpModel::init(small(), 1e-2, 0).unwrap();
    let empty = model.batch(&[]).unwrap();
    let y = Tensor::zeros(Shape::new(0, 1));
    let v = Tensor::row(vec![0.0; 10]);
    let err = adapted_theta(&model, &params, &empty, &y, &v, &full_settings(2)).unwrap_err();
    assert!(matches!(err, MetaError::EmptySupport));
}
