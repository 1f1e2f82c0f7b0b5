//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Real benchmark files are used when `CLAIRE_SECOM_DIR` (holding
//! `secom.data` and `secom_labels.data`) or `CLAIRE_TEP_FILE` is set;
//! otherwise the synthetic stand-ins are generated. The source is printed.
//!
//! Correctness criteria gate the exit status. The directional comparisons
//! against the baselines depend on the data and are reported without gating.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use claire::data::synth::{secom_like, tep_like, SecomLikeConfig, TepLikeConfig};
use claire::data::{load_secom, load_tep, prepare, FaultSelection, PreprocessConfig, TabularDataset, FAILURE, SUCCESS};
use claire::evaluate::{compute_metrics, lda_fit};
use claire::explain::{default_coalitions, kernel_shap};
use claire::network::{
    backward, corrupt, evaluate_losses, forward, total_loss, Architecture, LossWeights, MaskSource, Mode, NetworkParams,
};
use claire::numerics::{median, random_matrix, Matrix, RngStream};
use claire::pipeline::{fit_prepared, PipelineConfig};
use claire::svm::{decision_values, kernel_eval, kkt_violation, smo_train, KernelSpec, SmoConfig};
use claire::training::{TrainConfig, TrainMode};

struct Outcome {
    name: &'static str,
    pass: bool,
    gating: bool,
}

fn report(name: &'static str, pass: bool, gating: bool, detail: String) -> Outcome {
    println!("{} {:<28} {}", if pass { "PASS" } else { "FAIL" }, name, detail);
    Outcome { name, pass, gating }
}

fn outcome(name: &'static str, pass: bool, detail: String) -> Outcome {
    report(name, pass, true, detail)
}

/// A comparison whose outcome depends on the dataset rather than on the
/// correctness of the code.
fn directional(name: &'static str, pass: bool, detail: String) -> Outcome {
    report(name, pass, false, detail)
}

// ---------------------------------------------------------------- gradients

fn objective(p: &NetworkParams, x_in: &Matrix, x: &Matrix, y: &[u8], w: &LossWeights, masks: &[Matrix]) -> f64 {
    let mut src = MaskSource::replay(masks);
    let t = forward(p, x_in, &mut Mode::Training(&mut src)).unwrap();
    total_loss(&evaluate_losses(&t, x, y).unwrap(), w).unwrap()
}

fn gradient_oracle() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut rng = RngStream::new(2024);
    for _ in 0..20 {
        let d = 2 + rng.below(9);
        let k = 1 + rng.below(4);
        let n = 2 + rng.below(7);
        let hidden: Vec<usize> = (0..1 + rng.below(2)).map(|_| 2 + rng.below(6)).collect();
        let w = LossWeights {
            lambda: rng.uniform_range(0.0, 2.0),
            alpha: rng.uniform_range(0.0, 2.0),
            beta: rng.uniform_range(-0.5, 0.5),
        };
        let arch = Architecture {
            hidden,
            ..Architecture::new(d, k)
        };
        let params = NetworkParams::init(&arch, &mut rng).unwrap();
        let x = random_matrix(n, d, 0.0, 1.0, &mut rng);
        let x_in = corrupt(&x, 0.1, &mut rng);
        let mut y: Vec<u8> = (0..n).map(|_| u8::from(rng.bernoulli(0.5))).collect();
        y[0] = FAILURE;
        y[n - 1] = SUCCESS;
        let trace = forward(&params, &x_in, &mut Mode::Training(&mut MaskSource::Sample(&mut rng))).unwrap();
        let masks = trace.masks();
        let grads = backward(&params, &trace, &x, &y, &w).unwrap();
        let h = 1e-5;
        let mut probe = params.clone();
        for t in 0..grads.tensors.len() {
            for i in 0..grads.tensors[t].len() {
                let orig = probe.tensors()[t][i];
                probe.tensors_mut()[t][i] = orig + h;
                let up = objective(&probe, &x_in, &x, &y, &w, &masks);
                probe.tensors_mut()[t][i] = orig - h;
                let down = objective(&probe, &x_in, &x, &y, &w, &masks);
                probe.tensors_mut()[t][i] = orig;
                let numeric = (up - down) / (2.0 * h);
                let analytic = grads.tensors[t][i];
                worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6));
            }
        }
    }
    let took = start.elapsed();
    outcome(
        "gradient-oracle",
        worst < 1e-4 && took < Duration::from_secs(60),
        format!("20 nets, max rel err {worst:.2e} (< 1e-4), {took:.1?}"),
    )
}

// ------------------------------------------------------------------ shapley

/// Permutation-definition Shapley values over tabulated coalition values.
fn permutation_shapley(f: &dyn Fn(&[f64]) -> f64, x: &[f64], bg: &Matrix) -> Vec<f64> {
    let d = x.len();
    let v: Vec<f64> = (0..1usize << d)
        .map(|mask| {
            bg.iter_rows()
                .map(|b| {
                    f(&(0..d)
                        .map(|i| if mask >> i & 1 == 1 { x[i] } else { b[i] })
                        .collect::<Vec<_>>())
                })
                .sum::<f64>()
                / bg.rows() as f64
        })
        .collect();
    let mut phi = vec![0.0; d];
    let mut count = 0.0;
    let mut perm: Vec<usize> = (0..d).collect();
    loop {
        let mut mask = 0usize;
        for &i in &perm {
            let before = v[mask];
            mask |= 1 << i;
            phi[i] += v[mask] - before;
        }
        count += 1.0;
        // next lexicographic permutation
        let Some(p) = (0..d - 1).rev().find(|&p| perm[p] < perm[p + 1]) else {
            break;
        };
        let q = (p + 1..d).rev().find(|&q| perm[q] > perm[p]).unwrap();
        perm.swap(p, q);
        perm[p + 1..].reverse();
    }
    phi.iter().map(|s| s / count).collect()
}

fn random_nonlinear(d: usize, rng: &mut RngStream) -> impl Fn(&[f64]) -> f64 {
    let a: Vec<f64> = (0..d).map(|_| rng.uniform_range(-2.0, 2.0)).collect();
    let b: Vec<f64> = (0..d).map(|_| rng.uniform_range(-2.0, 2.0)).collect();
    move |x: &[f64]| {
        let lin: f64 = x.iter().zip(&a).map(|(u, v)| u * v).sum();
        let inter: f64 = (0..d).map(|i| b[i] * x[i] * x[(i + 1) % d]).sum();
        lin.tanh() + (inter).sin() + x[0].max(x[d - 1])
    }
}

fn shapley_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = RngStream::new(7);
    let mut worst_oracle = 0.0f64;
    let mut worst_exact_add = 0.0f64;
    for d in [3usize, 5, 8] {
        for _ in 0..3 {
            let f = random_nonlinear(d, &mut rng);
            let bg = random_matrix(6, d, 0.0, 1.0, &mut rng);
            let x = random_matrix(4, d, 0.0, 1.0, &mut rng);
            let batched = |m: &Matrix| Matrix::from_vec(m.rows(), 1, m.iter_rows().map(&f).collect());
            let attr = kernel_shap(batched, &bg, &x, 0, 1).unwrap();
            for j in 0..x.rows() {
                let oracle = permutation_shapley(&f, x.row(j), &bg);
                for (i, o) in oracle.iter().enumerate() {
                    worst_oracle = worst_oracle.max((attr.get(j, i, 0) - o).abs());
                }
            }
            worst_exact_add = worst_exact_add.max(attr.additivity_error());
        }
    }
    let mut worst_sampled_add = 0.0f64;
    for d in [16usize, 40] {
        let f = random_nonlinear(d, &mut rng);
        let bg = random_matrix(10, d, 0.0, 1.0, &mut rng);
        let x = random_matrix(5, d, 0.0, 1.0, &mut rng);
        let batched = |m: &Matrix| Matrix::from_vec(m.rows(), 1, m.iter_rows().map(&f).collect());
        let attr = kernel_shap(batched, &bg, &x, default_coalitions(d), 3).unwrap();
        worst_sampled_add = worst_sampled_add.max(attr.additivity_error());
    }
    let took = start.elapsed();
    outcome(
        "shapley-oracle",
        worst_oracle < 1e-6 && worst_exact_add < 1e-8 && worst_sampled_add < 1e-4 && took < Duration::from_secs(120),
        format!(
            "oracle {worst_oracle:.1e} (< 1e-6), additivity exhaustive {worst_exact_add:.1e} (< 1e-8) sampled {worst_sampled_add:.1e} (< 1e-4), {took:.1?}"
        ),
    )
}

// ---------------------------------------------------------------------- svm

/// Dual optimum by coarse-to-fine grid search over the free multipliers,
/// the last one fixed by the equality constraint.
fn grid_dual(x: &Matrix, y: &[f64], kernel: &KernelSpec, c: f64) -> Vec<f64> {
    let n = x.rows();
    let k: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| kernel_eval(kernel, x.row(i), x.row(j)).unwrap())
                .collect()
        })
        .collect();
    let dual = |a: &[f64]| {
        let mut q = 0.0;
        for i in 0..n {
            for j in 0..n {
                q += a[i] * a[j] * y[i] * y[j] * k[i][j];
            }
        }
        a.iter().sum::<f64>() - 0.5 * q
    };
    let free = n - 1;
    let steps = 10usize;
    let mut lo = vec![0.0; free];
    let mut hi = vec![c; free];
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..80 {
        let total = (steps + 1).pow(free as u32);
        for idx in 0..total {
            let mut a = vec![0.0; n];
            let mut r = idx;
            for p in 0..free {
                a[p] = lo[p] + (hi[p] - lo[p]) * (r % (steps + 1)) as f64 / steps as f64;
                r /= steps + 1;
            }
            let last = -y[n - 1] * (0..free).map(|p| a[p] * y[p]).sum::<f64>();
            if !(-1e-12..=c + 1e-12).contains(&last) {
                continue;
            }
            a[n - 1] = last.clamp(0.0, c);
            let v = dual(&a);
            if best.as_ref().is_none_or(|(bv, _)| v > *bv) {
                best = Some((v, a));
            }
        }
        let centre = best.as_ref().unwrap().1.clone();
        for p in 0..free {
            let half = (hi[p] - lo[p]) * 0.3;
            lo[p] = (centre[p] - half).max(0.0);
            hi[p] = (centre[p] + half).min(c);
        }
    }
    best.unwrap().1
}

fn svm_correctness() -> Outcome {
    let start = Instant::now();
    // XOR under RBF
    let xor = Matrix::from_rows(&[[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]]).unwrap();
    let xor_y = [-1.0, -1.0, 1.0, 1.0];
    let rbf = KernelSpec::Rbf { gamma: 1.0 };
    let xor_model = smo_train(
        &xor,
        &xor_y,
        rbf,
        &SmoConfig {
            c: 10.0,
            ..SmoConfig::default()
        },
        1,
    )
    .unwrap();
    let xor_acc = decision_values(&xor_model, &xor)
        .unwrap()
        .iter()
        .zip(&xor_y)
        .filter(|(f, y)| (**f >= 0.0) == (**y > 0.0))
        .count() as f64
        / 4.0;

    // KKT on a desk of instances at the default tolerance
    let mut rng = RngStream::new(99);
    let mut desk: Vec<(Matrix, Vec<f64>, KernelSpec, f64)> = vec![
        (xor.clone(), xor_y.to_vec(), rbf, 10.0),
        (
            Matrix::from_rows(&[[0.0], [2.0]]).unwrap(),
            vec![-1.0, 1.0],
            KernelSpec::Linear,
            1.0,
        ),
    ];
    for (kernel, c) in [
        (KernelSpec::Linear, 1.0),
        (KernelSpec::Polynomial { c: 1.0, degree: 2 }, 0.5),
        (KernelSpec::Rbf { gamma: 0.5 }, 1.0),
        (KernelSpec::Rbf { gamma: 2.0 }, 100.0),
    ] {
        let n = 40;
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let label = if i % 2 == 0 { 1.0 } else { -1.0 };
            rows.push(vec![
                rng.normal() + 0.8 * label,
                rng.normal() - 0.5 * label,
                rng.normal(),
            ]);
            y.push(label);
        }
        desk.push((Matrix::from_rows(&rows).unwrap(), y, kernel, c));
    }
    let mut worst_kkt = 0.0f64;
    for (x, y, kernel, c) in &desk {
        let cfg = SmoConfig {
            c: *c,
            ..SmoConfig::default()
        };
        let m = smo_train(x, y, *kernel, &cfg, 5).unwrap();
        let f = decision_values(&m, x).unwrap();
        worst_kkt = worst_kkt.max(kkt_violation(&m.alphas(x.rows()), y, &f, *c));
    }

    // tiny duals against the grid oracle
    let mut worst_dual = 0.0f64;
    let tiny: Vec<(Matrix, Vec<f64>, KernelSpec, f64)> = vec![
        (xor.clone(), xor_y.to_vec(), rbf, 10.0),
        (xor.clone(), xor_y.to_vec(), rbf, 0.3),
        (
            Matrix::from_rows(&[[0.0, 0.5], [1.0, 0.2], [0.4, 1.0]]).unwrap(),
            vec![1.0, -1.0, 1.0],
            KernelSpec::Rbf { gamma: 0.7 },
            1.0,
        ),
        (
            Matrix::from_rows(&[[0.1, 0.1], [0.9, 0.8], [0.2, 0.7], [0.6, 0.3]]).unwrap(),
            vec![1.0, -1.0, -1.0, 1.0],
            KernelSpec::Rbf { gamma: 3.0 },
            2.0,
        ),
    ];
    for (x, y, kernel, c) in &tiny {
        let cfg = SmoConfig {
            c: *c,
            tol: 1e-7,
            ..SmoConfig::default()
        };
        let m = smo_train(x, y, *kernel, &cfg, 2).unwrap();
        let oracle = grid_dual(x, y, kernel, *c);
        for (a, o) in m.alphas(x.rows()).iter().zip(&oracle) {
            worst_dual = worst_dual.max((a - o).abs());
        }
    }
    let took = start.elapsed();
    outcome(
        "svm-correctness",
        xor_acc == 1.0 && worst_kkt <= 1e-3 && worst_dual < 1e-4 && took < Duration::from_secs(60),
        format!(
            "XOR acc {xor_acc}, max KKT violation {worst_kkt:.1e} over {} instances (<= 1e-3), dual vs grid oracle {worst_dual:.1e} (< 1e-4), {took:.1?}",
            desk.len()
        ),
    )
}

// --------------------------------------------------------------- pipelines

enum Source {
    Real(PathBuf),
    Synthetic,
}

impl Source {
    fn describe(&self) -> String {
        match self {
            Source::Real(p) => format!("real files at {}", p.display()),
            Source::Synthetic => "synthetic stand-in".into(),
        }
    }
}

fn secom_data() -> (TabularDataset, Source) {
    if let Ok(dir) = std::env::var("CLAIRE_SECOM_DIR") {
        let dir = PathBuf::from(dir);
        let ds =
            load_secom(&dir.join("secom.data"), &dir.join("secom_labels.data")).expect("CLAIRE_SECOM_DIR unreadable");
        return (ds, Source::Real(dir));
    }
    (secom_like(&SecomLikeConfig::default(), 0), Source::Synthetic)
}

fn tep_data() -> (TabularDataset, Source) {
    if let Ok(file) = std::env::var("CLAIRE_TEP_FILE") {
        let file = PathBuf::from(file);
        let ds = load_tep(&file, &FaultSelection::All).expect("CLAIRE_TEP_FILE unreadable");
        return (ds, Source::Real(file));
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tep.csv");
    claire::data::synth::write_tep(&tep_like(&TepLikeConfig::default(), 0), &path).unwrap();
    (load_tep(&path, &FaultSelection::All).unwrap(), Source::Synthetic)
}

#[derive(Default)]
struct ModeRuns {
    accuracy: Vec<f64>,
    macro_f1: Vec<f64>,
    /// LDA fitted and measured on the training latents.
    dprime: Vec<f64>,
    /// Same direction, measured on the held-out split.
    dprime_test: Vec<f64>,
    logs: Vec<Vec<claire::training::EpochLog>>,
}

fn sweep(raw: &TabularDataset, preset: &TrainConfig, modes: &[TrainMode], seeds: &[u64]) -> Vec<ModeRuns> {
    let mut out: Vec<ModeRuns> = modes.iter().map(|_| ModeRuns::default()).collect();
    for &seed in seeds {
        let prepared = prepare(raw, &PreprocessConfig::default(), seed).unwrap();
        for (runs, &mode) in out.iter_mut().zip(modes) {
            let cfg = PipelineConfig {
                train: TrainConfig { mode, ..preset.clone() },
                ..PipelineConfig::default()
            };
            let fit = fit_prepared(prepared.clone(), &cfg, seed).unwrap();
            let b = &fit.bundle;
            let pred = b.predict_prepared(&prepared.test.features).unwrap();
            let m = compute_metrics(&prepared.test.labels, &pred).unwrap();
            runs.accuracy.push(m.accuracy);
            runs.macro_f1.push(m.macro_f1);
            let train = b.svm_inputs(&prepared.train).unwrap();
            let test = b.svm_inputs(&prepared.test).unwrap();
            let lda = lda_fit(&train.codes, &train.labels).unwrap();
            runs.dprime.push(lda.summary.dprime);
            runs.dprime_test
                .push(lda.summarize(&test.codes, &test.labels).unwrap().dprime);
            runs.logs.push(fit.logs);
        }
    }
    out
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn fmt(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ")
}

fn loss_convergence(claire_runs: &ModeRuns) -> Outcome {
    let logs = &claire_runs.logs[0];
    let totals: Vec<f64> = logs.iter().map(|l| l.l_total).collect();
    let early = median(&totals[..5]).unwrap();
    let late = median(&totals[totals.len() - 5..]).unwrap();
    let finite = logs
        .iter()
        .all(|l| [l.l_recon, l.l_latent, l.l_clf, l.l_ent].iter().all(|v| v.is_finite()));
    directional(
        "loss-convergence",
        logs.len() == 40 && late < early && finite,
        format!(
            "seed 1, {} epochs: median L_total epochs 1-5 {early:.4}, 36-40 {late:.4}; all terms finite: {finite}",
            logs.len()
        ),
    )
}

fn table2(runs: &[ModeRuns]) -> Outcome {
    let [claire, plain, raw] = [&runs[0], &runs[1], &runs[2]];
    let acc = [mean(&claire.accuracy), mean(&plain.accuracy), mean(&raw.accuracy)];
    let f1 = [mean(&claire.macro_f1), mean(&plain.macro_f1), mean(&raw.macro_f1)];
    let gap = acc[0] - acc[1].max(acc[2]);
    let pass = acc[0] > acc[1] && acc[0] > acc[2] && f1[0] > f1[1] && f1[0] > f1[2] && gap >= 0.03;
    directional(
        "table2-directional",
        pass,
        format!(
            "mean test acc CLAIRE {:.3} PlainAE {:.3} RawSVM {:.3} (gap {gap:+.3}, need >= 0.03); macro-F1 {:.3} {:.3} {:.3}; per-seed acc CLAIRE [{}] PlainAE [{}] RawSVM [{}]",
            acc[0], acc[1], acc[2], f1[0], f1[1], f1[2],
            fmt(&claire.accuracy), fmt(&plain.accuracy), fmt(&raw.accuracy)
        ),
    )
}

fn dprime_directional(secom: &[ModeRuns], tep: &[ModeRuns]) -> Outcome {
    let wins = |r: &[ModeRuns]| r[0].dprime.iter().zip(&r[1].dprime).filter(|(a, b)| a > b).count();
    let (sw, tw) = (wins(secom), wins(tep));
    let n = secom[0].dprime.len();
    directional(
        "dprime-directional",
        sw == n && tw == tep[0].dprime.len(),
        format!(
            "CLAIRE > PlainAE on {sw}/{n} SECOM seeds (d' CLAIRE [{}] PlainAE [{}]), {tw}/{} TEP seeds (CLAIRE [{}] PlainAE [{}]); held-out d' SECOM CLAIRE [{}] PlainAE [{}], TEP CLAIRE [{}] PlainAE [{}]",
            fmt(&secom[0].dprime), fmt(&secom[1].dprime),
            tep[0].dprime.len(), fmt(&tep[0].dprime), fmt(&tep[1].dprime),
            fmt(&secom[0].dprime_test), fmt(&secom[1].dprime_test),
            fmt(&tep[0].dprime_test), fmt(&tep[1].dprime_test)
        ),
    )
}

fn dprime_unit() -> Outcome {
    let mut rng = RngStream::new(31);
    let n = 2000;
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for class in [FAILURE, SUCCESS] {
        for _ in 0..n {
            let shift = if class == SUCCESS { 2.0 } else { 0.0 };
            rows.push(vec![rng.normal() + shift, 0.3 * rng.normal()]);
            labels.push(class);
        }
    }
    let d = lda_fit(&Matrix::from_rows(&rows).unwrap(), &labels)
        .unwrap()
        .summary
        .dprime;
    outcome(
        "dprime-unit",
        (d - 2.0).abs() <= 0.15,
        format!("d' = {d:.4} (2.0 +/- 0.15)"),
    )
}

fn preprocessing_invariants(raw: &TabularDataset) -> Outcome {
    let mut worst_prop = 0.0f64;
    let mut clean = true;
    let mut balanced = true;
    for seed in 1..=5 {
        let p = prepare(raw, &PreprocessConfig::default(), seed).unwrap();
        for ds in [&p.train, &p.test] {
            clean &= ds.features.as_slice().iter().all(|v| (0.0..=1.0).contains(v));
        }
        let after = p.train.class_counts();
        balanced &= after.failure == after.success;
        let total = raw.class_counts();
        let test = p.test.class_counts();
        for (t, n) in [(test.failure, total.failure), (test.success, total.success)] {
            worst_prop = worst_prop.max((t as f64 - 0.2 * n as f64).abs());
        }
    }
    outcome(
        "preprocessing-invariants",
        clean && balanced && worst_prop <= 1.0,
        format!("5 seeds: no NaN and in [0,1]: {clean}; balanced train: {balanced}; worst test count deviation {worst_prop:.2} rows (<= 1)"),
    )
}

// -------------------------------------------------------------- determinism

fn run_cli(args: &[&str]) {
    let status = Command::new(env!("CARGO_BIN_EXE_claire"))
        .args(args)
        .stdout(std::process::Stdio::null())
        .status()
        .unwrap();
    assert!(status.success(), "claire {args:?} failed");
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(dir).unwrap().display().to_string(),
                    std::fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let small = SecomLikeConfig {
        rows: 240,
        columns: 40,
        failures: 30,
        factors: 4,
        constant_columns: 2,
        noise_columns: 6,
        sparse_columns: 3,
        ..SecomLikeConfig::default()
    };
    std::fs::create_dir_all(&data).unwrap();
    let (f, l) = (data.join("f.txt"), data.join("l.txt"));
    claire::data::synth::write_secom(&secom_like(&small, 2), &f, &l).unwrap();
    let config = tmp.path().join("config.json");
    std::fs::write(
        &config,
        r#"{"format":"claire-config/1",
            "train":{"mode":"claire","epochs":3,"batch_size":32,"learning_rate":0.001,
                     "weights":{"lambda":0.1,"alpha":1.0,"beta":0.01},"dropout_rate":0.3,
                     "bn_momentum":0.9,"corruption_std":0.1,"hidden":[16,16],"latent_dim":16,"seed":0},
            "explain":{"n_background":10,"n_eval":12}}"#,
    )
    .unwrap();
    let dataset = format!("secom:{},{}", f.display(), l.display());
    let out = tmp.path().join("out");
    let o = out.to_str().unwrap();
    let mut trees = Vec::new();
    for _ in 0..2 {
        let _ = std::fs::remove_dir_all(&out);
        let common = [
            "--config",
            config.to_str().unwrap(),
            "--dataset",
            &dataset,
            "--seed",
            "9",
            "--out",
            o,
        ];
        for cmd in ["preprocess", "train", "eval", "explain", "project"] {
            let mut args = vec![cmd];
            args.extend_from_slice(&common);
            run_cli(&args);
        }
        run_cli(&["synth", "--out", out.join("synth").to_str().unwrap(), "--seed", "4"]);
        trees.push(tree_bytes(&out));
    }
    let files = trees[0].len();
    let identical = trees[0] == trees[1];
    outcome(
        "determinism",
        identical && files >= 15,
        format!("preprocess/train/eval/explain/project/synth run twice with seed 9: {files} files, byte-identical: {identical}"),
    )
}

fn main() {
    let started = Instant::now();
    let (secom, secom_src) = secom_data();
    let (tep, tep_src) = tep_data();
    println!(
        "SECOM source: {} ({} rows x {} columns)",
        secom_src.describe(),
        secom.len(),
        secom.n_features()
    );
    println!(
        "TEP source:   {} ({} rows x {} columns)",
        tep_src.describe(),
        tep.len(),
        tep.n_features()
    );

    let mut results = vec![gradient_oracle(), shapley_oracle(), svm_correctness()];
    let seeds = [1, 2, 3, 4, 5];
    let secom_runs = sweep(
        &secom,
        &TrainConfig::secom(),
        &[TrainMode::Claire, TrainMode::PlainAe, TrainMode::RawSvm],
        &seeds,
    );
    let tep_runs = sweep(
        &tep,
        &TrainConfig::tep(),
        &[TrainMode::Claire, TrainMode::PlainAe],
        &seeds,
    );
    results.push(loss_convergence(&secom_runs[0]));
    results.push(table2(&secom_runs));
    results.push(dprime_directional(&secom_runs, &tep_runs));
    results.push(dprime_unit());
    results.push(determinism());
    results.push(preprocessing_invariants(&secom));

    let failed: Vec<&str> = results.iter().filter(|o| !o.pass).map(|o| o.name).collect();
    println!(
        "{} of {} criteria passed in {:.0?}{}",
        results.len() - failed.len(),
        results.len(),
        started.elapsed(),
        if failed.is_empty() {
            String::new()
        } else {
            format!("; failed: {}", failed.join(", "))
        }
    );
    if results.iter().any(|o| o.gating && !o.pass) {
        std::process::exit(1);
    }
}
