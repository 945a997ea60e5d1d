//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs as a plain binary so the lines print in order.

use std::path::Path;
use std::time::Instant;

use agla::continual::{run_experiment, Ablation, ExperimentResult, Method, TrainConfig};
use agla::cos::{compute_cos_stats, cos_weight, mse_reduction_experiment, normalize_weights, Augmentation, MseExperimentConfig};
use agla::data::{generate_synthetic_stream, Sample, SyntheticSpec};
use agla::gradcheck::{network_cases, op_cases};
use agla::losses::{ce_rows, combined_loss, LossBatch, LossTerms, MetaWeights};
use agla::memory::ReservoirBuffer;
use agla::ndmath::Tape;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// ---------------------------------------------------------------- 1

fn gradients() -> Outcome {
    let start = Instant::now();
    let (mut worst, mut worst_name, mut checked) = (0.0f64, String::new(), 0usize);
    for seed in 0..100 {
        for case in op_cases(seed).into_iter().chain(network_cases(seed)) {
            let e = match case.max_rel_err() {
                Ok(e) => e,
                Err(err) => return outcome(false, format!("{}: {err}", case.name)),
            };
            checked += 1;
            if !(e <= worst) {
                worst = e;
                worst_name = case.name.clone();
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < 1e-4 && secs < 60.0,
        format!("{checked} checks over 100 seeds, max rel err {worst:.2e} ({worst_name}), {secs:.1} s"),
    )
}

// ---------------------------------------------------------------- 2

fn ce(o: &[f64], y: usize) -> f64 {
    let m = o.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = o.iter().map(|v| (v - m).exp()).sum();
    m + z.ln() - o[y]
}

fn softmax(o: &[f64], t: f64) -> Vec<f64> {
    let m = o.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = o.iter().map(|v| ((v - m) / t).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn loss_schedule() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (rows, classes, current, temp) = (6, 4, 3, 2.0);
    let (mut k1_exact, mut k1_oracle, mut k3_err, mut sched_err) = (true, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..200 {
        let o: Vec<f64> = (0..rows * classes).map(|_| rng.random_range(-3.0..3.0)).collect();
        let h: Vec<f64> = (0..(rows - current) * classes).map(|_| rng.random_range(-3.0..3.0)).collect();
        let w: Vec<f64> = (0..rows * 3).map(|_| rng.random_range(0.01..0.99)).collect();
        let labels: Vec<usize> = (0..rows).map(|_| rng.random_range(0..classes)).collect();
        let scale = vec![1.0; rows - current];
        let eval = |k: usize| {
            let mut t = Tape::<f64>::new();
            let ov = t.constant(vec![rows, classes], o.clone()).unwrap();
            let hv = t.constant(vec![rows - current, classes], h.clone()).unwrap();
            let wv = t.constant(vec![rows, 3], w.clone()).unwrap();
            let batch = LossBatch { logits: ov, labels: &labels, weights: wv, current, stored: Some(hv), memory_scale: &scale, task: k };
            let l = combined_loss(&mut t, &batch, &LossTerms { der: true, distill: true, temperature: temp }).unwrap();
            // alpha * ce assembled from the same primitives
            let c = ce_rows(&mut t, ov, &labels).unwrap();
            let a = t.slice(wv, 1, 0, 1).unwrap();
            let ac = t.mul(a, c).unwrap();
            let m = t.mean(ac, None).unwrap();
            (t.value(l)[0], t.value(m)[0])
        };
        let (l1, alpha_ce) = eval(1);
        k1_exact &= l1 == alpha_ce;
        let oracle1: f64 = (0..rows).map(|r| w[r * 3] * ce(&o[r * classes..][..classes], labels[r])).sum::<f64>() / rows as f64;
        k1_oracle = k1_oracle.max((l1 - oracle1).abs());

        let (l3, _) = eval(3);
        let mut want = 0.0;
        for r in 0..rows {
            let orow = &o[r * classes..][..classes];
            let (a, b, g) = (w[r * 3], w[r * 3 + 1], w[r * 3 + 2]);
            let c = ce(orow, labels[r]);
            want += a * c;
            if r >= current {
                let hrow = &h[(r - current) * classes..][..classes];
                let mse = orow.iter().zip(hrow).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / classes as f64;
                let p = softmax(hrow, temp);
                let q = softmax(orow, temp);
                let dist = -p.iter().zip(&q).map(|(p, q)| p * q.ln()).sum::<f64>();
                want += 3.0 * b * (mse + c) + 3.0 * g * dist;
            }
        }
        k3_err = k3_err.max((l3 - want / rows as f64).abs());

        let mw = MetaWeights::new(w[0], w[1], w[2]).unwrap();
        sched_err = sched_err.max((mw.lambda(3) - 3.0 * w[1]).abs()).max((mw.pi(3) - 3.0 * w[2]).abs());
        k1_exact &= mw.lambda(1) == 0.0 && mw.pi(1) == 0.0;
    }
    outcome(
        k1_exact && k1_oracle < 1e-12 && k3_err < 1e-12 && sched_err < 1e-12,
        format!(
            "k=1 equals alpha*CE bit for bit: {k1_exact} (oracle gap {k1_oracle:.1e}); k=3 loss gap {k3_err:.1e}, schedule gap {sched_err:.1e}"
        ),
    )
}

// ---------------------------------------------------------------- 3

fn groups(rng: &mut ChaCha8Rng, n: usize, m: usize, d: usize) -> Vec<Vec<Vec<f64>>> {
    (0..n)
        .map(|_| (0..m).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect())
        .collect()
}

/// Entry-by-entry double loop over all samples.
fn brute_cov(g: &[Vec<Vec<f64>>], eps: f64) -> Vec<f64> {
    let d = g[0][0].len();
    let total: usize = g.iter().map(Vec::len).sum();
    let mut out = vec![0.0; d * d];
    for a in 0..d {
        for b in 0..d {
            let mut s = 0.0;
            for grp in g {
                let ma = grp.iter().map(|z| z[a]).sum::<f64>() / grp.len() as f64;
                let mb = grp.iter().map(|z| z[b]).sum::<f64>() / grp.len() as f64;
                for z in grp {
                    s += (z[a] - ma) * (z[b] - mb);
                }
            }
            out[a * d + b] = s / total as f64 + if a == b { eps } else { 0.0 };
        }
    }
    out
}

fn rotation(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let mut q: Vec<Vec<f64>> = Vec::new();
    while q.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        for u in &q {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-3 {
            q.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    q.concat()
}

fn rotate(r: &[f64], v: &[f64]) -> Vec<f64> {
    let d = v.len();
    (0..d).map(|i| (0..d).map(|j| r[i * d + j] * v[j]).sum()).collect()
}

fn conjugate(r: &[f64], s: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = (0..d).flat_map(|a| (0..d).map(move |b| (a, b))).map(|(a, b)| r[i * d + a] * s[a * d + b] * r[j * d + b]).sum();
        }
    }
    out
}

fn argsort(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
    idx
}

fn cos_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut cov_err, mut sum_err, mut rot_err, mut order_ok) = (0.0f64, 0.0f64, 0.0f64, true);
    for trial in 0..100 {
        let d = 1 + trial % 6;
        let g = groups(&mut rng, 2 + trial % 5, 1 + trial % 4, d);
        let s = compute_cos_stats(&g, 1.0, 1e-3).unwrap();
        for (a, b) in s.covariance.iter().zip(brute_cov(&g, 1e-3)) {
            cov_err = cov_err.max((a - b).abs());
        }

        let n = rng.random_range(1..64);
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(1e-6..1.0)).collect();
        sum_err = sum_err.max((normalize_weights(&w).unwrap().iter().sum::<f64>() - 1.0).abs());

        let d = 2 + trial % 4;
        let g = groups(&mut rng, 6, 3, d);
        let s = compute_cos_stats(&g, 1.5, 1e-3).unwrap();
        let z: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let r = rotation(&mut rng, d);
        let w0 = cos_weight(&z, &s.means[0], &s.covariance, 1.5).unwrap();
        let w1 = cos_weight(&rotate(&r, &z), &rotate(&r, &s.means[0]), &conjugate(&r, &s.covariance, d), 1.5).unwrap();
        rot_err = rot_err.max((w0 - w1).abs());

        let g = groups(&mut rng, 8, 4, 3);
        let orders: Vec<Vec<usize>> = [0.5, 1.0, 2.0]
            .iter()
            .map(|&tau| {
                let s = compute_cos_stats(&g, tau, 1e-6).unwrap();
                let raw: Vec<f64> =
                    g.iter().enumerate().flat_map(|(i, grp)| grp.iter().map(move |z| (i, z))).map(|(i, z)| s.weight(i, z).unwrap()).collect();
                argsort(&normalize_weights(&raw).unwrap())
            })
            .collect();
        order_ok &= orders[0] == orders[1] && orders[1] == orders[2];
    }
    outcome(
        cov_err <= 1e-12 && sum_err <= 1e-12 && rot_err <= 1e-8 && order_ok,
        format!("covariance gap {cov_err:.1e}, weight-sum gap {sum_err:.1e}, rotation gap {rot_err:.1e}, argsort stable across tau: {order_ok}"),
    )
}

// ---------------------------------------------------------------- 4

fn mse_reduction() -> Outcome {
    let start = Instant::now();
    let outliers = MseExperimentConfig::default();
    let identity = MseExperimentConfig { augmentation: Augmentation::Identity, ..MseExperimentConfig::default() };
    let (a, b) = match (mse_reduction_experiment::<f64>(&outliers), mse_reduction_experiment::<f64>(&identity)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return outcome(false, e.to_string()),
    };
    let gap = (b.mean_weighted - b.mean_unweighted).abs() / b.mean_unweighted;
    let secs = start.elapsed().as_secs_f64();
    outcome(
        a.mean_weighted < a.mean_unweighted && a.p_value < 0.05 && gap < 0.02 && secs < 120.0,
        format!(
            "R={}: weighted {:.5} vs unweighted {:.5}, p = {:.2e}; identity gap {:.3}%; {secs:.1} s",
            outliers.seeds,
            a.mean_weighted,
            a.mean_unweighted,
            a.p_value,
            gap * 100.0
        ),
    )
}

// ---------------------------------------------------------------- 5

fn reservoir_p(capacity: usize, stream: usize, trials: usize) -> f64 {
    let samples: Vec<Sample<f64>> = (0..stream).map(|i| Sample { x: vec![i as f64], y: 0 }).collect();
    let mut counts = vec![0u64; stream];
    for trial in 0..trials {
        let mut buf = ReservoirBuffer::<f64>::new(capacity, trial as u64);
        for s in &samples {
            buf.insert(s, 0);
        }
        for e in buf.class_entries(0) {
            counts[e.x[0] as usize] += 1;
        }
    }
    let expected = trials as f64 * capacity as f64 / stream as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    1.0 - ChiSquared::new((stream - 1) as f64).unwrap().cdf(chi2)
}

fn reservoir() -> Outcome {
    let small = reservoir_p(2, 100, 100_000);
    let large = reservoir_p(50, 1000, 100_000);
    outcome(small > 0.01 && large > 0.01, format!("p = {small:.3} for (2, 100), p = {large:.3} for (50, 1000)"))
}

// ---------------------------------------------------------------- 6, 7, 8

const SEEDS: u64 = 5;

struct Averages {
    accuracy: f64,
    forgetting: f64,
    /// Final-epoch validation loss per task.
    val: Vec<f64>,
}

fn averaged(config: &TrainConfig) -> agla::Result<Averages> {
    let mut runs: Vec<ExperimentResult> = Vec::new();
    for seed in 0..SEEDS {
        let stream = generate_synthetic_stream::<f64>(&SyntheticSpec { seed, ..SyntheticSpec::default() })?;
        runs.push(run_experiment(&stream, &TrainConfig { seed, ..config.clone() })?);
    }
    let n = SEEDS as f64;
    let tasks = SyntheticSpec::default().tasks;
    let mut val = vec![0.0; tasks];
    for r in &runs {
        for t in r.traces.iter().filter(|t| t.epoch == config.epochs) {
            val[t.task - 1] += t.val_loss / n;
        }
    }
    Ok(Averages {
        accuracy: runs.iter().map(|r| r.average_accuracy).sum::<f64>() / n,
        forgetting: runs.iter().map(|r| r.forgetting.value).sum::<f64>() / n,
        val,
    })
}

fn continual() -> (Outcome, Outcome, Outcome) {
    let start = Instant::now();
    let run = |m: Method| averaged(&TrainConfig::reference(m));
    let results = (|| -> agla::Result<_> {
        Ok((run(Method::Joint)?, run(Method::Finetune)?, run(Method::ReplayDer)?, run(Method::Agla)?))
    })();
    let (joint, finetune, replay, full) = match results {
        Ok(r) => r,
        Err(e) => {
            let o = || outcome(false, e.to_string());
            return (o(), o(), o());
        }
    };
    let secs = start.elapsed().as_secs_f64();
    let six = outcome(
        joint.accuracy > full.accuracy
            && full.accuracy > replay.accuracy
            && replay.accuracy >= finetune.accuracy
            && full.accuracy - finetune.accuracy >= 0.10
            && secs < 600.0,
        format!(
            "joint {:.4} > AGLA {:.4} > replay_der {:.4} >= finetune {:.4}, AGLA - finetune = {:.4}; {secs:.1} s",
            joint.accuracy,
            full.accuracy,
            replay.accuracy,
            finetune.accuracy,
            full.accuracy - finetune.accuracy
        ),
    );

    let reference = TrainConfig::reference(Method::Agla);
    let seven = match averaged(&Ablation::F.apply(&reference)) {
        Ok(f) => outcome(
            f.accuracy < full.accuracy && f.forgetting > full.forgetting,
            format!(
                "F accuracy {:.4} vs AGLA {:.4}; F forgetting {:.4} vs AGLA {:.4}",
                f.accuracy, full.accuracy, f.forgetting, full.forgetting
            ),
        ),
        Err(e) => outcome(false, e.to_string()),
    };
    let eight = match averaged(&Ablation::A.apply(&reference)) {
        Ok(a) => {
            let wins = full.val.iter().zip(&a.val).filter(|(g, a)| g <= a).count();
            let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
            outcome(wins >= 3, format!("AGLA <= A on {wins}/5 tasks; AGLA [{}] vs A [{}]", fmt(&full.val), fmt(&a.val)))
        }
        Err(e) => outcome(false, e.to_string()),
    };
    (six, seven, eight)
}

// ---------------------------------------------------------------- 9

fn complexity() -> Outcome {
    let sizes = [1000usize, 2000, 4000, 8000];
    let config = TrainConfig { epochs: 5, ..TrainConfig::reference(Method::Agla) };
    let mut times = Vec::new();
    for &n in &sizes {
        let spec = SyntheticSpec { train_per_class: n / 10, ..SyntheticSpec::default() };
        let stream = match generate_synthetic_stream::<f64>(&spec) {
            Ok(s) => s,
            Err(e) => return outcome(false, e.to_string()),
        };
        // best of three to damp scheduler noise
        let mut best = f64::INFINITY;
        for _ in 0..3 {
            let t = Instant::now();
            if let Err(e) = run_experiment(&stream, &config) {
                return outcome(false, e.to_string());
            }
            best = best.min(t.elapsed().as_secs_f64());
        }
        times.push(best);
    }
    let xs: Vec<f64> = sizes.iter().map(|&n| n as f64).collect();
    let k = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / k, times.iter().sum::<f64>() / k);
    let sxy: f64 = xs.iter().zip(&times).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = times.iter().map(|y| (y - my).powi(2)).sum();
    let r2 = sxy * sxy / (sxx * syy);
    let fmt = times.iter().map(|t| format!("{t:.2}")).collect::<Vec<_>>().join(", ");
    outcome(r2 > 0.95, format!("E = 5, seconds at N = 1k, 2k, 4k, 8k: [{fmt}]; R^2 = {r2:.4}"))
}

// ---------------------------------------------------------------- 10

fn determinism() -> Outcome {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/reference.json");
    let tmp = tempfile::tempdir().expect("temp dir");
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        let args = ["agla", "run", "--config", config.to_str().unwrap(), "--seed", "7", "--out", out.to_str().unwrap()];
        let code = agla_cli::run_cli(args);
        if code != 0 {
            return outcome(false, format!("run exited with {code}"));
        }
    }
    let same = |f: &str| std::fs::read(tmp.path().join("a").join(f)).ok() == std::fs::read(tmp.path().join("b").join(f)).ok();
    let (m, a) = (same("metrics.csv"), same("acc_matrix.csv"));
    outcome(m && a, format!("metrics.csv identical: {m}, acc_matrix.csv identical: {a}"))
}

fn main() {
    let mut failed = Vec::new();
    let mut report = |n: usize, name: &str, o: Outcome| {
        println!("criterion {n:>2} {name}: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed.push(n);
        }
    };
    report(1, "gradient integrity", gradients());
    report(2, "loss schedule", loss_schedule());
    report(3, "COS oracles", cos_oracles());
    report(4, "weighted-augmentation MSE reduction", mse_reduction());
    report(5, "reservoir uniformity", reservoir());
    let (six, seven, eight) = continual();
    report(6, "method ordering", six);
    report(7, "distillation ablation", seven);
    report(8, "assessor validation loss", eight);
    report(9, "linear wall-clock", complexity());
    report(10, "determinism", determinism());
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
