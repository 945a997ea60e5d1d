use agla::continual::{run_experiment, ExperimentResult, Method, TrainConfig};
use agla::data::{generate_synthetic_stream, SyntheticSpec};
use agla::nets::HeadMode;

fn run(config: TrainConfig) -> ExperimentResult {
    let stream = generate_synthetic_stream::<f64>(&SyntheticSpec::default()).unwrap();
    run_experiment(&stream, &config).unwrap()
}

#[test]
fn validation_loss_trends_down_within_tasks() {
    let r = run(TrainConfig::reference(Method::Agla));
    let e = r.traces.iter().map(|t| t.epoch).max().unwrap();
    let quarter = (e / 4).max(1);
    let mut decreasing = 0;
    for task in 1..=5 {
        let val: Vec<f64> = r.traces.iter().filter(|t| t.task == task).map(|t| t.val_loss).collect();
        let first = val[..quarter].iter().sum::<f64>() / quarter as f64;
        let last = val[e - quarter..].iter().sum::<f64>() / quarter as f64;
        if last <= first {
            decreasing += 1;
        }
    }
    assert!(decreasing >= 4, "only {decreasing} of 5 tasks");
}

#[test]
fn finetune_forgets_and_never_improves_old_tasks() {
    let r = run(TrainConfig::reference(Method::Finetune));
    assert!(r.forgetting.value > 0.0);
    for k in 1..5 {
        for j in 0..k {
            let (now, then) = (r.matrix.get(k, j).unwrap(), r.matrix.get(j, j).unwrap());
            assert!(now <= then + 0.05, "a[{k}][{j}] = {now} vs a[{j}][{j}] = {then}");
        }
    }
}

#[test]
fn joint_beats_finetune_and_memory_beats_none() {
    let joint = run(TrainConfig::reference(Method::Joint));
    let finetune = run(TrainConfig::reference(Method::Finetune));
    let agla = run(TrainConfig::reference(Method::Agla));
    assert!(joint.average_accuracy >= finetune.average_accuracy);
    assert!(finetune.average_accuracy < agla.average_accuracy);
    assert!(joint.forgetting.degenerate);
}

#[test]
fn task_incremental_is_easier_for_finetune() {
    let class_il = run(TrainConfig::reference(Method::Finetune));
    let task_il = run(TrainConfig { mode: HeadMode::TaskIncremental, ..TrainConfig::reference(Method::Finetune) });
    assert!(task_il.average_accuracy > class_il.average_accuracy);
    assert!(task_il.average_accuracy > 0.5);
}
