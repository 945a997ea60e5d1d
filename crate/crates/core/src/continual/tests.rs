use super::*;
use crate::data::{generate_synthetic_stream, SyntheticSpec, TaskStream};
use crate::error::AglaError;
use crate::nets::{HeadMode, Module};

fn tiny(tasks: usize) -> TaskStream<f64> {
    generate_synthetic_stream(&SyntheticSpec {
        tasks,
        input_dim: 6,
        train_per_class: 30,
        test_per_class: 10,
        separation: 4.0,
        ..Default::default()
    })
    .unwrap()
}

fn quick(method: Method) -> TrainConfig {
    TrainConfig {
        method,
        epochs: 2,
        batch_size: 16,
        memory_per_class: 5,
        check_invariants: true,
        ..Default::default()
    }
}

fn params_of(l: &ContinualLearner<f64>) -> Vec<Vec<f64>> {
    l.base()
        .params()
        .into_iter()
        .chain(l.assessor().params())
        .map(|p| p.data().to_vec())
        .collect()
}

#[test]
fn tasks_must_arrive_in_order() {
    let s = tiny(3);
    let mut l = ContinualLearner::<f64>::new(&quick(Method::Agla), s.input_dim()).unwrap();
    assert!(matches!(l.run_task(&s, 1), Err(AglaError::Protocol(_))));
    l.run_task(&s, 0).unwrap();
    assert!(matches!(l.run_task(&s, 0), Err(AglaError::Protocol(_))));
    assert_eq!(l.next_task(), 1);
}

#[test]
fn first_task_never_touches_memory_paths() {
    let s = tiny(2);
    let full = quick(Method::Agla);
    let bare = TrainConfig { der_loss: false, distill_loss: false, augment: false, cos_weights: false, ..full.clone() };
    let mut a = ContinualLearner::<f64>::new(&full, s.input_dim()).unwrap();
    let mut b = ContinualLearner::<f64>::new(&bare, s.input_dim()).unwrap();
    let ta = a.run_task(&s, 0).unwrap();
    let tb = b.run_task(&s, 0).unwrap();
    assert_eq!(params_of(&a), params_of(&b));
    assert_eq!(ta, tb);
}

#[test]
fn assessor_off_uses_fixed_weights() {
    let s = tiny(2);
    let cfg = Ablation::A.apply(&quick(Method::Agla));
    let r = run_experiment(&s, &cfg).unwrap();
    for t in &r.traces {
        assert_eq!((t.mean_alpha, t.mean_beta, t.mean_gamma), (1.0, 0.5, 0.5));
    }
}

#[test]
fn same_seed_is_bitwise_identical() {
    let s = tiny(3);
    let cfg = quick(Method::Agla);
    let run = || {
        let mut l = ContinualLearner::<f64>::new(&cfg, s.input_dim()).unwrap();
        for k in 0..3 {
            l.run_task(&s, k).unwrap();
        }
        params_of(&l)
    };
    assert_eq!(run(), run());
    let a = run_experiment(&s, &cfg).unwrap();
    let b = run_experiment(&s, &cfg).unwrap();
    assert_eq!(a, b);
    let c = run_experiment(&s, &TrainConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(a.traces, c.traces);
}

#[test]
fn replay_is_agla_with_components_off() {
    let s = tiny(3);
    let replay = run_baseline(Method::ReplayDer, &s, &quick(Method::Agla)).unwrap();
    let agla = TrainConfig {
        assessor: false,
        augment: false,
        random_transform: false,
        cos_weights: false,
        ..quick(Method::Agla)
    };
    let stripped = run_experiment(&s, &agla).unwrap();
    assert_eq!(replay.matrix, stripped.matrix);
    assert_eq!(replay.traces, stripped.traces);
}

#[test]
fn invariant_checks_hold_in_both_modes() {
    let s = tiny(3);
    for mode in [HeadMode::ClassIncremental, HeadMode::TaskIncremental] {
        let r = run_experiment(&s, &TrainConfig { mode, ..quick(Method::Agla) }).unwrap();
        assert_eq!(r.matrix.cells().count(), 6);
        assert!(r.traces.iter().all(|t| t.train_loss.is_finite() && t.val_loss.is_finite()));
    }
}

#[test]
fn joint_fills_only_the_final_row() {
    let s = tiny(3);
    let r = run_baseline(Method::Joint, &s, &quick(Method::Agla)).unwrap();
    assert_eq!(r.matrix.cells().map(|(k, _, _)| k).collect::<Vec<_>>(), vec![2, 2, 2]);
    assert!(r.forgetting.degenerate);
    assert_eq!(r.forgetting.value, 0.0);
    assert!(r.traces.iter().all(|t| t.task == 3));
}

#[test]
fn single_task_forgetting_is_flagged() {
    let s = tiny(1);
    let r = run_experiment(&s, &quick(Method::Agla)).unwrap();
    assert!(r.forgetting.degenerate);
    assert_eq!(r.forgetting.value, 0.0);
}

#[test]
fn finetune_keeps_no_memory() {
    let s = tiny(2);
    let mut l = ContinualLearner::<f64>::new(&quick(Method::Finetune), s.input_dim()).unwrap();
    l.run_task(&s, 0).unwrap();
    l.run_task(&s, 1).unwrap();
    assert!(l.memory().is_empty());
    assert!(!l.toggles().der_loss && !l.toggles().assessor);
}

#[test]
fn agla_is_not_a_baseline() {
    let s = tiny(1);
    assert!(run_baseline(Method::Agla, &s, &quick(Method::Agla)).is_err());
}

#[test]
fn reset_option_reinitialises_assessor() {
    let s = tiny(2);
    let cfg = TrainConfig { reset_assessor: true, ..quick(Method::Agla) };
    let mut l = ContinualLearner::<f64>::new(&cfg, s.input_dim()).unwrap();
    l.run_task(&s, 0).unwrap();
    let trained: Vec<Vec<f64>> = l.assessor().params().iter().map(|p| p.data().to_vec()).collect();
    l.run_task(&s, 1).unwrap();
    let after: Vec<Vec<f64>> = l.assessor().params().iter().map(|p| p.data().to_vec()).collect();
    assert_ne!(trained, after);
}

#[test]
fn ablations_switch_one_component() {
    let base = TrainConfig::default();
    let on = base.effective_toggles();
    for a in Ablation::ALL {
        let t = a.apply(&base).effective_toggles();
        let flags = |t: Toggles| [t.assessor, t.augment, t.random_transform, t.cos_weights, t.der_loss, t.distill_loss];
        let diff = flags(on).iter().zip(flags(t)).filter(|(x, y)| **x != *y).count();
        assert_eq!(diff, 1, "{a:?}");
    }
}

#[test]
fn config_validation() {
    assert!(TrainConfig { epochs: 0, ..Default::default() }.validate().is_err());
    assert!(TrainConfig { lr: 0.0, ..Default::default() }.validate().is_err());
    assert!(TrainConfig { assessor_lr: -1.0, ..Default::default() }.validate().is_err());
    assert!(TrainConfig { fixed_weights: [1.5, 0.5, 0.5], ..Default::default() }.validate().is_err());
    assert!(TrainConfig::default().validate().is_ok());
    assert_eq!("replay_der".parse::<Method>().unwrap(), Method::ReplayDer);
    assert!("der".parse::<Method>().is_err());
}

#[test]
fn runs_in_f32() {
    let s: TaskStream<f32> = generate_synthetic_stream(&SyntheticSpec {
        tasks: 2,
        input_dim: 6,
        train_per_class: 20,
        test_per_class: 5,
        ..Default::default()
    })
    .unwrap();
    let r = run_experiment(&s, &quick(Method::Agla)).unwrap();
    assert!((0.0..=1.0).contains(&r.average_accuracy));
}
