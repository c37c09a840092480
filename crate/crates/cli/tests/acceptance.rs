//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Set `DMLP_MADELON_DIR` to a directory holding the original
//! `madelon_{train,valid}.{data,labels}` files to score criterion 6 on them
//! instead of the in-process replica.

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use dmlp::experiment::{run_centralized, run_distributed, run_overlap_sweep, run_suite, ExperimentConfig};
use dmlp::gossip::{build_topology, run_training, NodeState, TopologyKind, TrainingConfig};
use dmlp::metrics::{hanley_mcneil_ci, roc_auc};
use dmlp::nn::{architecture, output_residual, Activation, Layer, LayerSpec, LossKind, MlpModel, PROB_CLAMP};
use dmlp::Matrix;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str, overrides: &[&str]) -> ExperimentConfig {
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    let cfg = ExperimentConfig::from_file(&configs().join(name), &o).expect("config parses");
    cfg.validate().expect("config validates");
    cfg
}

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

// Independent arithmetic for criterion 1: plain loops over the stored weights.
fn act(a: Activation, x: f64) -> f64 {
    match a {
        Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        Activation::Relu => x.max(0.0),
        Activation::Tanh => x.tanh(),
        Activation::Linear => x,
    }
}

fn naive(model: &MlpModel, x: &[f64]) -> (f64, f64) {
    let mut input = x.to_vec();
    let mut kink = f64::INFINITY;
    for layer in model.layers() {
        let mut out = Vec::with_capacity(layer.spec.out_units);
        for j in 0..layer.spec.out_units {
            let mut a = layer.biases[j];
            for (i, v) in input.iter().enumerate() {
                a += v * layer.weights.get(j, i);
            }
            if layer.spec.activation == Activation::Relu {
                kink = kink.min(a.abs());
            }
            out.push(act(layer.spec.activation, a));
        }
        input = out;
    }
    (input[0], kink)
}

fn naive_loss(kind: LossKind, model: &MlpModel, x: &Matrix, y: &[f64]) -> f64 {
    (0..x.rows())
        .map(|i| {
            let p = naive(model, x.row(i)).0;
            match kind {
                LossKind::SquaredError => 0.5 * (y[i] - p).powi(2),
                LossKind::CrossEntropy => {
                    let c = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                    -(y[i] * c.ln() + (1.0 - y[i]) * (1.0 - c).ln())
                }
            }
        })
        .sum()
}

fn gradient_oracle() -> Verdict {
    const PER_COMBO: usize = 13;
    const H: f64 = 1e-6;
    let mut rng = StdRng::seed_from_u64(1);
    let mut checked = 0;
    // Error relative to the tolerance `max(1e-4 * |g|, 1e-8)`; at most 1 passes.
    let mut worst: f64 = 0.0;
    let mut worst_rel: f64 = 0.0;
    for a in Activation::ALL {
        for loss in LossKind::ALL {
            let mut done = 0;
            while done < PER_COMBO {
                let inputs = rng.gen_range(1..6);
                let hidden: Vec<usize> = (0..rng.gen_range(1..3)).map(|_| rng.gen_range(1..6)).collect();
                let rows = rng.gen_range(1..8);
                let model = MlpModel::init(&architecture(inputs, &hidden, a), rng.gen()).unwrap();
                let x = Matrix::from_vec(rows, inputs, (0..rows * inputs).map(|_| rng.gen_range(-2.0..2.0)).collect())
                    .unwrap();
                let y: Vec<f64> = (0..rows).map(|_| f64::from(rng.gen_range(0u8..2))).collect();
                let kink = (0..rows).map(|i| naive(&model, x.row(i)).1).fold(f64::INFINITY, f64::min);
                if kink < 1e-4 {
                    continue;
                }
                let trace = model.forward_batch(&x).unwrap();
                let r = output_residual(loss, &y, &trace.predictions()).unwrap();
                let analytic = model.backward(&trace, &r).unwrap().flatten();
                let base = model.parameters();
                let mut probe = model.clone();
                for k in 0..base.len() {
                    let mut p = base.clone();
                    p[k] += H;
                    probe.set_parameters(&p).unwrap();
                    let plus = naive_loss(loss, &probe, &x, &y);
                    p[k] = base[k] - H;
                    probe.set_parameters(&p).unwrap();
                    let numeric = (plus - naive_loss(loss, &probe, &x, &y)) / (2.0 * H);
                    let err = (analytic[k] - numeric).abs();
                    let scale = analytic[k].abs().max(numeric.abs());
                    worst_rel = worst_rel.max(err / scale.max(f64::MIN_POSITIVE));
                    worst = worst.max(err / (1e-4 * scale).max(1e-8));
                }
                done += 1;
                checked += 1;
            }
        }
    }
    verdict(
        worst <= 1.0,
        format!(
            "{checked} networks, worst error/tolerance {worst:.3} (rel 1e-4, abs floor 1e-8), worst raw relative error {worst_rel:.2e}"
        ),
    )
}

fn auc_oracle() -> Verdict {
    let mut rng = StdRng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut instances = 0;
    while instances < 1000 {
        let n = rng.gen_range(2..=200);
        let levels = rng.gen_range(2..20);
        let y: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0u8..2))).collect();
        if !y.contains(&0.0) || !y.contains(&1.0) {
            continue;
        }
        let s: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..levels)) / levels as f64).collect();
        let (mut credit, mut pairs) = (0.0, 0.0);
        for i in (0..n).filter(|&i| y[i] == 1.0) {
            for j in (0..n).filter(|&j| y[j] == 0.0) {
                pairs += 1.0;
                credit += if s[i] > s[j] { 1.0 } else if s[i] == s[j] { 0.5 } else { 0.0 };
            }
        }
        worst = worst.max((roc_auc(&y, &s).unwrap().theta - credit / pairs).abs());
        instances += 1;
    }
    verdict(worst <= 1e-12, format!("{instances} tied instances, worst |diff| {worst:.2e} (tol 1e-12)"))
}

fn hanley_mcneil() -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for (theta, n, lo, hi) in [(0.92, 100, 0.88, 0.96), (0.63, 600, 0.60, 0.66)] {
        let ci = hanley_mcneil_ci(theta, n).unwrap();
        pass &= (ci.lower - lo).abs() <= 0.005 && (ci.upper - hi).abs() <= 0.005;
        parts.push(format!("({theta}, {n}) -> [{:.4}, {:.4}] vs [{lo}, {hi}]", ci.lower, ci.upper));
    }
    verdict(pass, format!("{} (tol 0.005)", parts.join("; ")))
}

fn centralized_reduction() -> Verdict {
    let cfg = load("synthetic.toml", &["network.m=1", "training.T=50", "training.stop_tol=0.0"]);
    let ds = cfg.load_dataset().unwrap();
    let mut worst: f64 = 0.0;
    let mut rounds = Vec::new();
    for &seed in &cfg.seeds {
        let cent = run_centralized(&cfg, &ds, seed).unwrap();
        let dist = run_distributed(&cfg, &ds, seed, None).unwrap();
        rounds.push(dist.rounds_used);
        worst = worst.max(cent.model.max_abs_diff(&dist.nodes[0].model));
    }
    let pass = worst <= 1e-12 && rounds.iter().all(|&r| r == 50);
    verdict(pass, format!("seeds {:?}, rounds {rounds:?}, max |w_C - w_D| {worst:.2e} (tol 1e-12)", cfg.seeds))
}

fn saturated_node() -> MlpModel {
    MlpModel::from_layers(vec![
        Layer {
            spec: LayerSpec::new(1, 1, Activation::Linear),
            weights: Matrix::from_vec(1, 1, vec![1.0]).unwrap(),
            biases: vec![0.0],
        },
        Layer {
            spec: LayerSpec::new(1, 1, Activation::Sigmoid),
            weights: Matrix::from_vec(1, 1, vec![60.0]).unwrap(),
            biases: vec![0.0],
        },
    ])
    .unwrap()
}

fn fixed_point() -> Verdict {
    let x = Matrix::from_vec(6, 1, vec![1.0, -1.0, 2.0, -2.0, 1.5, -0.5]).unwrap();
    let y = vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
    let mut worst: f64 = 0.0;
    for loss in LossKind::ALL {
        let mut nodes: Vec<NodeState> = (0..4).map(|i| NodeState::new(i, saturated_node(), vec![0])).collect();
        let topo = build_topology(TopologyKind::Complete, 4, 0).unwrap();
        let data = vec![x.clone(); 4];
        let cfg = TrainingConfig { loss, learning_rate: 0.5, max_rounds: 1, ..TrainingConfig::default() };
        run_training(&mut nodes, &topo, &data, &y, &cfg, 0, None).unwrap();
        for n in &nodes {
            worst = worst.max(n.model.max_abs_diff(&saturated_node()));
        }
    }
    verdict(worst < 1e-12, format!("max weight change over one round {worst:.2e} (tol 1e-12)"))
}

fn madelon() -> Verdict {
    let cfg = match std::env::var_os("DMLP_MADELON_DIR") {
        Some(dir) => {
            let dir = PathBuf::from(dir);
            let set = |key: &str, file: &str| format!("dataset.{key}=\"{}\"", dir.join(file).display());
            let o = [
                set("train_path", "madelon_train.data"),
                set("train_labels_path", "madelon_train.labels"),
                set("test_path", "madelon_valid.data"),
                set("test_labels_path", "madelon_valid.labels"),
            ];
            let refs: Vec<&str> = o.iter().map(String::as_str).collect();
            load("madelon_files.toml", &refs)
        }
        None => load("madelon.toml", &[]),
    };
    let ds = cfg.load_dataset().unwrap();
    let run = match run_suite(&cfg, &ds, cfg.seeds.len()) {
        Ok(r) => r.report,
        Err(e) => return verdict(false, format!("suite failed: {e}")),
    };
    let d = run.theta_distributed.as_ref().unwrap().mean;
    let c = run.theta_centralized.as_ref().unwrap().mean;
    let ci = run.ci.map(|ci| format!("[{:.4}, {:.4}]", ci.lower, ci.upper)).unwrap_or_else(|| "none".into());
    let comparable = run.comparable == Some(true);
    verdict(
        (d - 0.63).abs() <= 0.08 && comparable,
        format!(
            "{}: theta_D {d:.4} (target 0.63 +/- 0.08), theta_C {c:.4}, CI {ci}, comparable {comparable}, I_C {:.1}, I_D {:.1}",
            cfg.name,
            run.iterations_centralized.as_ref().unwrap().mean,
            run.rounds_distributed.as_ref().unwrap().mean
        ),
    )
}

fn moving_average(v: &[f64], w: usize) -> Vec<f64> {
    v.windows(w).map(|s| s.iter().sum::<f64>() / w as f64).collect()
}

fn convergence() -> Verdict {
    let cfg = load("synthetic.toml", &[]);
    let ds = cfg.load_dataset().unwrap();
    let mut traces = Vec::new();
    for &seed in &cfg.seeds {
        let cent = run_centralized(&cfg, &ds, seed).unwrap();
        traces.push(run_distributed(&cfg, &ds, seed, Some(&cent)).unwrap().convergence_trace);
    }
    let len = traces.iter().map(Vec::len).min().unwrap();
    let mean: Vec<f64> = (0..len).map(|r| traces.iter().map(|t| t[r]).sum::<f64>() / traces.len() as f64).collect();
    let ma = moving_average(&mean, 5);
    let rises = ma.windows(2).filter(|w| w[1] > w[0]).count();
    let (first, last) = (mean[0], mean[len - 1]);
    verdict(
        last < first && rises == 0,
        format!(
            "seed-mean metric round 1 {first:.4}, round {len} {last:.4}; 5-round moving average rises at {rises} of {} steps",
            ma.len().saturating_sub(1)
        ),
    )
}

fn overlap_trend() -> Verdict {
    let cfg = load("synthetic.toml", &[]);
    let ds = cfg.load_dataset().unwrap();
    let rows = run_overlap_sweep(&cfg, &ds, &[0.0, 1.0], false).unwrap();
    let (lo, hi) = (rows[0].theta_distributed.mean, rows[1].theta_distributed.mean);
    verdict(hi >= lo, format!("mean theta_D over seeds {:?}: overlap 0.0 {lo:.4}, overlap 1.0 {hi:.4}", cfg.seeds))
}

fn determinism() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let config = configs().join("synthetic.toml");
    let mut reports = Vec::new();
    for k in 0..2 {
        let out = tmp.path().join(format!("run{k}"));
        let status = Command::new(env!("CARGO_BIN_EXE_dmlp"))
            .args(["run", "--parallel-trials", "3", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        if !status.status.success() {
            return verdict(false, format!("run {k} exited with {}", status.status));
        }
        reports.push(std::fs::read(out.join("report.json")).unwrap());
    }
    verdict(reports[0] == reports[1], format!("report.json sizes {} and {} bytes", reports[0].len(), reports[1].len()))
}

type Criterion = (&'static str, fn() -> Verdict);

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("gradient oracle", gradient_oracle),
        ("AUC oracle equivalence", auc_oracle),
        ("Hanley-McNeil reproduction", hanley_mcneil),
        ("centralized reduction", centralized_reduction),
        ("gossip fixed point", fixed_point),
        ("Madelon reproduction", madelon),
        ("convergence diagnostic", convergence),
        ("overlap trend", overlap_trend),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let v = check();
        let status = if v.pass { "PASS" } else { "FAIL" };
        println!("{status} {} {name}: {} [{:.1}s]", i + 1, v.detail, start.elapsed().as_secs_f64());
        failed += usize::from(!v.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
