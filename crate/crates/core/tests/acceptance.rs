//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

#![allow(clippy::unnecessary_cast, clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use blobnet::backend::{Backend, Kernel, Real};
use blobnet::cartpole::{self, CartPoleState, FORCE_MAG};
use blobnet::imagedb::{Dataset, ImageEntry, SampleMethod};
use blobnet::layers::{InnerProductParam, LayerSpec, LayerState, LayerType};
use blobnet::net::{Net, NetDef};
use blobnet::pg_trainer::{self, *};
use blobnet::{prototxt, Blob, Shape, Solver, SolverConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = std::result::Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn close(a: Real, b: Real, tol: Real) -> bool {
    (a - b).abs() <= tol
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// MemoryData(width) → InnerProduct(width, no bias) with identity weights.
fn identity_net(width: usize) -> Net {
    let mut ip = LayerSpec::inner_product("ip", "data", "result", width);
    ip.inner_product = Some(InnerProductParam {
        num_output: Some(width),
        bias_term: Some(false),
        extra: vec![],
    });
    let def = NetDef {
        layers: vec![LayerSpec::memory_data("in", "data", Shape::vector(width)), ip],
        ..Default::default()
    };
    let net = Net::build(&def, &Arc::new(Backend::new()), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let mut eye = vec![0.0; width * width];
    for i in 0..width {
        eye[i * width + i] = 1.0;
    }
    net.params().next().unwrap().write_data(&eye).unwrap();
    net
}

fn net_result(net: &mut Net, data: &[Real]) -> Vec<Real> {
    net.enqueue("in", data).unwrap();
    net.forward().unwrap();
    net.blob("result").unwrap().read_data().unwrap()
}

/// Writes per-weight diffs on the diagonal of the identity weights, applies
/// one SGD step with lr = 1 and returns the new diagonal.
fn apply_diagonal(net: &Net, diff: &[Real]) -> Vec<Real> {
    let w = diff.len();
    let mut full = vec![0.0; w * w];
    for i in 0..w {
        full[i * w + i] = diff[i];
    }
    net.params().next().unwrap().write_diff(&full).unwrap();
    Solver::new(SolverConfig::sgd(1.0)).unwrap().apply_update(net).unwrap();
    let weights = net.params().next().unwrap().read_data().unwrap();
    (0..w).map(|i| weights[i * w + i]).collect()
}

fn criterion_1() -> Check {
    // Aprob, action, Dlogps, diff, new weight, data, old result, new result
    let rows: [(Real, usize, Real, Real, Real, Real, Real, Real); 4] = [
        (0.0, 1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0),
        (0.1, 1, -0.1, 0.1, 0.9, 0.1, 0.1, 0.09),
        (0.9, 0, 0.1, -0.1, 1.1, 0.9, 0.9, 0.99),
        (1.0, 0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0),
    ];
    for (i, &(aprob, action, dlogps, diff, new_w, data, old_r, new_r)) in rows.iter().enumerate() {
        let row = i + 1;
        let mut net = identity_net(1);
        let before = net_result(&mut net, &[data])[0];
        ensure!(close(before, old_r, 1e-12), "row {row}: old result {before} != {old_r}");
        // the table feeds the previous output back in as data
        ensure!(close(data, aprob, 1e-12), "row {row}: data {data} != Aprob {aprob}");
        let d = dlogps_sigmoid(action, aprob);
        ensure!(close(d, dlogps, 1e-12), "row {row}: Dlogps {d} != {dlogps}");
        let m = modulate_gradients(&[vec![d]], &[1.0], Variant::Sigmoid).map_err(|e| e.to_string())?;
        ensure!(close(m[0][0], diff, 1e-12), "row {row}: diff {} != {diff}", m[0][0]);
        let w = apply_diagonal(&net, &m[0])[0];
        ensure!(close(w, new_w, 1e-12), "row {row}: new weight {w} != {new_w}");
        let after = net_result(&mut net, &[data])[0];
        ensure!(close(after, new_r, 1e-12), "row {row}: new result {after} != {new_r}");
    }
    Ok("4 rows".into())
}

fn criterion_2() -> Check {
    // probs, targets, gradient (= diff), new weights, new results
    type Pair = [Real; 2];
    let rows: [(Pair, Pair, Pair, Pair, Pair); 4] = [
        ([0.0, 1.0], [0.0, 1.0], [0.0, 0.0], [1.0, 1.0], [0.0, 1.0]),
        ([0.1, 0.9], [0.0, 1.0], [0.1, -0.1], [0.9, 1.1], [0.09, 0.99]),
        ([0.9, 0.1], [1.0, 0.0], [-0.1, 0.1], [1.1, 0.9], [0.99, 0.09]),
        ([1.0, 0.0], [1.0, 0.0], [0.0, 0.0], [1.0, 1.0], [1.0, 0.0]),
    ];
    for (i, (probs, target, grad, new_w, new_r)) in rows.iter().enumerate() {
        let row = i + 1;
        let action = target.iter().position(|&t| t == 1.0).unwrap();
        let g = dlogps_softmax(probs, action).map_err(|e| e.to_string())?;
        let m = modulate_gradients(std::slice::from_ref(&g), &[1.0], Variant::Softmax).map_err(|e| e.to_string())?;
        let mut net = identity_net(2);
        let old = net_result(&mut net, probs);
        let w = apply_diagonal(&net, &m[0]);
        let new = net_result(&mut net, probs);
        for k in 0..2 {
            ensure!(close(g[k], grad[k], 1e-12), "row {row} action {k}: gradient {} != {}", g[k], grad[k]);
            ensure!(close(m[0][k], grad[k], 1e-12), "row {row} action {k}: diff {} != {}", m[0][k], grad[k]);
            ensure!(close(old[k], probs[k], 1e-12), "row {row} action {k}: old result {}", old[k]);
            ensure!(close(w[k], new_w[k], 1e-12), "row {row} action {k}: new weight {} != {}", w[k], new_w[k]);
            ensure!(close(new[k], new_r[k], 1e-12), "row {row} action {k}: new result {} != {}", new[k], new_r[k]);
        }
    }
    Ok("4 rows x 2 actions".into())
}

/// Largest relative error of a central finite-difference check of one layer
/// under L = Σ cᵢ·topᵢ.
fn layer_fd_error(spec: &LayerSpec, shape: Shape, seed: u64, avoid_kink: bool) -> Real {
    const EPS: Real = 1e-4;
    let be = Arc::new(Backend::new());
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    let (mut layer, tops) = LayerState::setup(spec, &[shape], &be, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let bottom = Blob::new(&be, "b", shape).unwrap();
    let top = Blob::new(&be, "t", tops[0]).unwrap();
    let x: Vec<Real> = (0..bottom.count())
        .map(|_| loop {
            let v: Real = rng.gen_range(-2.0..2.0);
            if !avoid_kink || v.abs() > 0.05 {
                break v;
            }
        })
        .collect();
    let c: Vec<Real> = (0..top.count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    bottom.write_data(&x).unwrap();
    layer.forward(&[&bottom], &[&top]).unwrap();
    top.write_diff(&c).unwrap();
    layer.params().iter().for_each(|p| p.zero_diff().unwrap());
    layer.backward(&[&top], &[&bottom]).unwrap();

    let bottom_grad = bottom.read_diff().unwrap();
    let param_grads: Vec<Vec<Real>> = layer.params().iter().map(|p| p.read_diff().unwrap()).collect();
    let mut worst: Real = 0.0;
    let mut score = |a: Real, n: Real| {
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-2);
        worst = worst.max(rel);
    };
    let objective = |layer: &mut LayerState| -> Real {
        layer.forward(&[&bottom], &[&top]).unwrap();
        top.read_data().unwrap().iter().zip(&c).map(|(y, k)| y * k).sum()
    };
    for j in 0..x.len() {
        let mut p = x.clone();
        p[j] = x[j] + EPS;
        bottom.write_data(&p).unwrap();
        let lp = objective(&mut layer);
        p[j] = x[j] - EPS;
        bottom.write_data(&p).unwrap();
        let lm = objective(&mut layer);
        score(bottom_grad[j], (lp - lm) / (2.0 * EPS));
    }
    bottom.write_data(&x).unwrap();
    for (pi, grad) in param_grads.iter().enumerate() {
        let v = layer.params()[pi].read_data().unwrap();
        for j in 0..v.len() {
            let mut p = v.clone();
            p[j] = v[j] + EPS;
            layer.params()[pi].write_data(&p).unwrap();
            let lp = objective(&mut layer);
            p[j] = v[j] - EPS;
            layer.params()[pi].write_data(&p).unwrap();
            let lm = objective(&mut layer);
            score(grad[j], (lp - lm) / (2.0 * EPS));
        }
        layer.params()[pi].write_data(&v).unwrap();
    }
    worst
}

fn policy(variant: Variant, seed: u64) -> PolicyNet {
    let text = match variant {
        Variant::Sigmoid => blobnet::cli::SIGMOID_MODEL,
        Variant::Softmax => blobnet::cli::SOFTMAX_MODEL,
    };
    let def = prototxt::parse(text).unwrap();
    let net = Net::build(&def, &Arc::new(Backend::new()), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    PolicyNet::new(net, variant).unwrap()
}

/// Relative error between the parameter diffs accumulated for a frozen
/// episode and finite differences of J(w) = Σ_t (−diff_tᵀ·logits_t).
///
/// Since the solver descends along the accumulated diff, that diff is the
/// gradient of −J; the check compares diff against −∇J.
///
/// Cart-Pole states are near zero and biases start at zero, so some ReLU
/// pre-activations sit within 1e-4 of the kink; a step of 1e-4 straddles it
/// for seed 0. The smaller step keeps the difference quotient on one side.
fn injected_episode_error(variant: Variant, seed: u64) -> Real {
    const EPS: Real = 1e-6;
    let mut p = policy(variant, seed);
    let mut env = CartPoleEnv { max_steps: 40 };
    let ep = run_episode(&mut env, &mut p, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let batch = GradientBatch::from_episode(&ep, variant, 0.99, true).unwrap();
    p.net().clear_param_diffs().unwrap();
    pg_trainer::accumulate_episode(&env, &mut p, &ep, &batch).unwrap();
    let analytic: Vec<Real> = p.net().params().flat_map(|b| b.read_diff().unwrap()).collect();

    let observations: Vec<Vec<Real>> = ep.steps.iter().map(|s| env.observe(&s.state0)).collect();
    let logits_blob = p.logits_blob().to_string();
    let objective = |p: &mut PolicyNet| -> Real {
        let mut j = 0.0;
        for (obs, diff) in observations.iter().zip(&batch.diffs) {
            p.probabilities(obs).unwrap();
            let logits = p.net().blob(&logits_blob).unwrap().read_data().unwrap();
            j -= logits.iter().zip(diff).map(|(l, d)| l * d).sum::<Real>();
        }
        j
    };
    let mut numeric = Vec::with_capacity(analytic.len());
    let n_params = p.net().params().count();
    for pi in 0..n_params {
        let v = p.net().params().nth(pi).unwrap().read_data().unwrap();
        for j in 0..v.len() {
            let mut w = v.clone();
            w[j] = v[j] + EPS;
            p.net().params().nth(pi).unwrap().write_data(&w).unwrap();
            let jp = objective(&mut p);
            w[j] = v[j] - EPS;
            p.net().params().nth(pi).unwrap().write_data(&w).unwrap();
            let jm = objective(&mut p);
            numeric.push(-(jp - jm) / (2.0 * EPS));
        }
        p.net().params().nth(pi).unwrap().write_data(&v).unwrap();
    }
    let diff: Real = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<Real>().sqrt();
    let norm_a: Real = analytic.iter().map(|a| a * a).sum::<Real>().sqrt();
    let norm_n: Real = numeric.iter().map(|n| n * n).sum::<Real>().sqrt();
    diff / norm_a.max(norm_n).max(1e-12)
}

fn criterion_3() -> Check {
    let cases: Vec<(&str, LayerSpec, Shape, bool)> = vec![
        ("InnerProduct", LayerSpec::inner_product("ip", "b", "t", 3), Shape::new(2, 1, 1, 4), false),
        ("InnerProduct chw", LayerSpec::inner_product("ip", "b", "t", 2), Shape::new(2, 2, 2, 2), false),
        ("ReLU", LayerSpec::new("r", LayerType::ReLU, &["b"], &["t"]), Shape::new(2, 1, 2, 5), true),
        ("Sigmoid", LayerSpec::new("s", LayerType::Sigmoid, &["b"], &["t"]), Shape::new(3, 1, 1, 4), false),
        ("Softmax", LayerSpec::new("m", LayerType::Softmax, &["b"], &["t"]), Shape::new(3, 1, 1, 4), false),
    ];
    let mut worst_layer: Real = 0.0;
    for (name, spec, shape, kink) in &cases {
        for seed in 0..20 {
            let e = layer_fd_error(spec, *shape, seed, *kink);
            ensure!(e < 1e-4, "{name} seed {seed}: relative error {e:e}");
            worst_layer = worst_layer.max(e);
        }
    }
    let mut worst_episode: Real = 0.0;
    for variant in [Variant::Sigmoid, Variant::Softmax] {
        for seed in 0..5 {
            let e = injected_episode_error(variant, seed);
            ensure!(e < 1e-3, "{variant} episode seed {seed}: relative error {e:e}");
            worst_episode = worst_episode.max(e);
        }
    }
    Ok(format!(
        "layers worst rel err {worst_layer:.1e} over 20 seeds each, episodes worst {worst_episode:.1e}"
    ))
}

struct LearningRun {
    variant: Variant,
    seed: u64,
    episodes: usize,
    best: usize,
    best_mean: Real,
    solved: bool,
}

fn learn(variant: Variant, seed: u64) -> LearningRun {
    let mut p = policy(variant, seed);
    let cfg = TrainerConfig {
        variant,
        max_episodes: 10_000,
        seed,
        ..Default::default()
    };
    let (mut best, mut best_mean, mut episodes, mut solved) = (0, 0.0, 0, false);
    pg_trainer::train(&mut CartPoleEnv::default(), &mut p, SolverConfig::default(), &cfg, &mut |s| {
        episodes = s.episode + 1;
        best = best.max(s.length);
        if s.episode >= 99 {
            best_mean = Real::max(best_mean, s.mean_length_last_100);
        }
        if best >= 3000 && best_mean >= 500.0 {
            solved = true;
            return ControlFlow::Break(());
        }
        ControlFlow::Continue(())
    })
    .unwrap();
    LearningRun {
        variant,
        seed,
        episodes,
        best,
        best_mean,
        solved,
    }
}

fn criterion_4() -> Check {
    let handles: Vec<_> = [Variant::Sigmoid, Variant::Softmax]
        .into_iter()
        .flat_map(|v| (0..3).map(move |s| (v, s)))
        .map(|(v, s)| std::thread::spawn(move || learn(v, s)))
        .collect();
    let runs: Vec<LearningRun> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    let mut summary = Vec::new();
    let mut ok = true;
    for variant in [Variant::Sigmoid, Variant::Softmax] {
        let mine: Vec<&LearningRun> = runs.iter().filter(|r| r.variant == variant).collect();
        let solved = mine.iter().filter(|r| r.solved).count();
        ok &= solved >= 2;
        let detail: Vec<String> = mine
            .iter()
            .map(|r| {
                format!(
                    "seed {}: {} after {} ep (best {}, best mean100 {:.0})",
                    r.seed,
                    if r.solved { "met" } else { "missed" },
                    r.episodes,
                    r.best,
                    r.best_mean
                )
            })
            .collect();
        summary.push(format!("{variant} {solved}/3 [{}]", detail.join("; ")));
    }
    let text = summary.join(" | ");
    if ok {
        Ok(text)
    } else {
        Err(text)
    }
}

fn corpus_files() -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = Vec::new();
    for dir in [repo_root().join("models"), Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/corpus")] {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().is_some_and(|e| e == "prototxt") {
                files.push(path);
            }
        }
    }
    files.sort();
    files
}

fn criterion_5() -> Check {
    let files = corpus_files();
    ensure!(files.len() >= 10, "corpus has only {} files", files.len());
    for f in &files {
        let name = f.file_name().unwrap().to_string_lossy();
        let text = std::fs::read_to_string(f).unwrap();
        let first = prototxt::parse(&text).map_err(|e| format!("{name}: {e}"))?;
        let printed = prototxt::print(&first);
        let second = prototxt::parse(&printed).map_err(|e| format!("{name} (printed): {e}"))?;
        ensure!(second == first, "{name}: parse(print(parse(f))) differs");
        ensure!(prototxt::print(&second) == printed, "{name}: print is not a fixpoint");
    }
    Ok(format!("{} files", files.len()))
}

fn entry(id: i64, label: i64, boost: f64) -> ImageEntry {
    ImageEntry {
        id,
        label,
        boost,
        dims: [1, 1, 1],
        tensor: vec![id as f32],
    }
}

fn criterion_6() -> Check {
    let mut ds = Dataset::new();
    for i in 0..10 {
        ds.insert(entry(i, if i < 9 { 0 } else { 1 }, 1.0)).unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let draws = 100_000;
    let minority = (0..draws)
        .filter(|_| ds.sample(SampleMethod::LabelBalanced, false, &mut rng).unwrap().label == 1)
        .count() as f64
        / draws as f64;
    ensure!((minority - 0.5).abs() <= 0.02, "label-balanced minority frequency {minority}");

    let mut ds = Dataset::new();
    for (i, b) in [3.0, 1.0, 1.0, 1.0].into_iter().enumerate() {
        ds.insert(entry(i as i64, 0, b)).unwrap();
    }
    let boosted = (0..draws)
        .filter(|_| ds.sample(SampleMethod::Uniform, true, &mut rng).unwrap().id == 0)
        .count() as f64
        / draws as f64;
    ensure!((boosted - 0.5).abs() <= 0.02, "boosted entry frequency {boosted}");
    Ok(format!("minority {minority:.4}, boosted {boosted:.4}"))
}

fn criterion_7() -> Check {
    let rest = CartPoleState::default();
    let (xa, ta) = cartpole::accelerations(&rest, FORCE_MAG);
    ensure!(close(xa, 9.7560976, 1e-6), "x acceleration {xa}");
    ensure!(close(ta, -14.6341463, 1e-6), "theta acceleration {ta}");
    let s = cartpole::step(&rest, 1).map_err(|e| e.to_string())?.state;
    ensure!(close(s.x_dot, 0.19512195, 1e-6), "next x_dot {}", s.x_dot);
    ensure!(close(s.theta_dot, -0.29268293, 1e-6), "next theta_dot {}", s.theta_dot);

    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let s = CartPoleState {
            x: rng.gen_range(-2.4..2.4),
            x_dot: rng.gen_range(-3.0..3.0),
            theta: rng.gen_range(-0.35..0.35),
            theta_dot: rng.gen_range(-3.0..3.0),
        };
        for a in 0..2 {
            let f = cartpole::step(&s, a).unwrap();
            let m = cartpole::step(&-s, 1 - a).unwrap();
            for (p, q) in f.state.to_array().iter().zip(m.state.to_array()) {
                worst = worst.max((p + q).abs());
            }
            ensure!(f.done == m.done, "mirror changed termination at {s:?}");
        }
    }
    ensure!(worst <= 1e-12, "mirror asymmetry {worst:e}");
    Ok(format!("mirror max deviation {worst:.1e}"))
}

fn blobnet_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_blobnet"))
}

fn criterion_8() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut sizes = Vec::new();
    for variant in ["sigmoid", "softmax"] {
        let mut outputs = Vec::new();
        for run in 0..2 {
            let out = dir.path().join(format!("{variant}_{run}.csv"));
            let status = blobnet_bin()
                .args(["train-rl", "--variant", variant, "--seed", "0", "--episodes", "200", "--out"])
                .arg(&out)
                .output()
                .map_err(|e| e.to_string())?;
            ensure!(status.status.success(), "{variant} run {run} failed: {}", String::from_utf8_lossy(&status.stderr));
            outputs.push(std::fs::read(&out).map_err(|e| e.to_string())?);
        }
        ensure!(outputs[0] == outputs[1], "{variant}: statistics files differ");
        let lines = outputs[0].iter().filter(|&&b| b == b'\n').count();
        ensure!(lines == 201, "{variant}: expected 201 lines, got {lines}");
        sizes.push(format!("{variant} {} bytes identical", outputs[0].len()));
    }
    Ok(sizes.join(", "))
}

fn bench_row() -> std::result::Result<(String, usize, f64), String> {
    let out = blobnet_bin()
        .args(["bench", "--iters", "50"])
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(out.status.success(), "bench failed: {}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).map_err(|e| e.to_string())?;
    let lines: Vec<&str> = text.lines().collect();
    ensure!(lines.len() == 2, "expected header and one row, got {lines:?}");
    ensure!(lines[0] == "model\tbatch\tfwd_bwd_ms", "unexpected header {:?}", lines[0]);
    let cols: Vec<&str> = lines[1].split('\t').collect();
    ensure!(cols.len() == 3, "row {:?}", lines[1]);
    let batch: usize = cols[1].parse().map_err(|_| format!("batch {:?}", cols[1]))?;
    let ms: f64 = cols[2].parse().map_err(|_| format!("ms {:?}", cols[2]))?;
    Ok((cols[0].to_string(), batch, ms))
}

/// Fills `n` fresh buffers in two identical sets.
fn twin_buffers(be: &Backend, sizes: &[usize], rng: &mut ChaCha8Rng) -> (Vec<blobnet::Handle>, Vec<blobnet::Handle>) {
    let mut a = Vec::new();
    let mut b = Vec::new();
    for &n in sizes {
        let v: Vec<Real> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let (ha, hb) = (be.alloc_buffer(n).unwrap(), be.alloc_buffer(n).unwrap());
        be.write(ha, &v).unwrap();
        be.write(hb, &v).unwrap();
        a.push(ha);
        b.push(hb);
    }
    (a, b)
}

fn bits(be: &Backend, hs: &[blobnet::Handle]) -> Vec<Vec<u64>> {
    hs.iter()
        .map(|&h| be.read(h).unwrap().iter().map(|v| (*v as f64).to_bits()).collect())
        .collect()
}

fn dispatch_matches_direct() -> Check {
    let be = Backend::new();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let h = |x: blobnet::Handle| x.as_param();
    for kernel in Kernel::ALL {
        let idx = kernel.index();
        let (direct, via): (Vec<Real>, Vec<f64>);
        let (a, b) = match kernel {
            Kernel::Set | Kernel::Scal | Kernel::Amax => twin_buffers(&be, &[7], &mut rng),
            Kernel::Copy | Kernel::Axpy | Kernel::Dot | Kernel::ReluForward | Kernel::SigmoidForward => {
                twin_buffers(&be, &[7, 7], &mut rng)
            }
            Kernel::ReluBackward | Kernel::SigmoidBackward => twin_buffers(&be, &[7, 7, 7], &mut rng),
            Kernel::SoftmaxForward => twin_buffers(&be, &[12, 12], &mut rng),
            Kernel::SoftmaxBackward => twin_buffers(&be, &[12, 12, 12], &mut rng),
            Kernel::Gemm => twin_buffers(&be, &[6, 12, 8], &mut rng),
            Kernel::RmspropUpdate => {
                let (a, b) = twin_buffers(&be, &[7, 7, 7], &mut rng);
                // the cache must be non-negative
                for hs in [&a, &b] {
                    let c: Vec<Real> = be.read(hs[1]).unwrap().iter().map(|v| v.abs()).collect();
                    be.write(hs[1], &c).unwrap();
                }
                (a, b)
            }
            Kernel::RngUniform => {
                let (mut a, mut b) = twin_buffers(&be, &[7], &mut rng);
                a.insert(0, be.create_rng(5));
                b.insert(0, be.create_rng(5));
                (a, b)
            }
        };
        match kernel {
            Kernel::Set => {
                be.set(7, 0.25, a[0]).unwrap();
                be.dispatch(idx, &[7.0, 0.25, h(b[0])]).unwrap();
            }
            Kernel::Copy => {
                be.copy(7, a[0], a[1]).unwrap();
                be.dispatch(idx, &[7.0, h(b[0]), h(b[1])]).unwrap();
            }
            Kernel::Scal => {
                be.scal(7, -1.5, a[0]).unwrap();
                be.dispatch(idx, &[7.0, -1.5, h(b[0])]).unwrap();
            }
            Kernel::Axpy => {
                be.axpy(7, 0.3, a[0], a[1]).unwrap();
                be.dispatch(idx, &[7.0, 0.3, h(b[0]), h(b[1])]).unwrap();
            }
            Kernel::Gemm => {
                // C(2x4) = 0.5·A(2x3)·Bᵀ(4x3)ᵀ + 0.25·C
                be.gemm(false, true, 2, 4, 3, 0.5, a[0], a[1], 0.25, a[2]).unwrap();
                be.dispatch(idx, &[0.0, 1.0, 2.0, 4.0, 3.0, 0.5, h(b[0]), h(b[1]), 0.25, h(b[2])])
                    .unwrap();
            }
            Kernel::Dot => {
                direct = vec![be.dot(7, a[0], a[1]).unwrap()];
                via = be.dispatch(idx, &[7.0, h(b[0]), h(b[1])]).unwrap();
                ensure!(
                    direct.iter().map(|v| (*v as f64).to_bits()).eq(via.iter().map(|v| v.to_bits())),
                    "dot results differ"
                );
            }
            Kernel::Amax => {
                direct = vec![be.amax(7, a[0]).unwrap()];
                via = be.dispatch(idx, &[7.0, h(b[0])]).unwrap();
                ensure!(
                    direct.iter().map(|v| (*v as f64).to_bits()).eq(via.iter().map(|v| v.to_bits())),
                    "amax results differ"
                );
            }
            Kernel::ReluForward => {
                be.relu_forward(7, a[0], a[1]).unwrap();
                be.dispatch(idx, &[7.0, h(b[0]), h(b[1])]).unwrap();
            }
            Kernel::ReluBackward => {
                be.relu_backward(7, a[0], a[1], a[2]).unwrap();
                be.dispatch(idx, &[7.0, h(b[0]), h(b[1]), h(b[2])]).unwrap();
            }
            Kernel::SigmoidForward => {
                be.sigmoid_forward(7, a[0], a[1]).unwrap();
                be.dispatch(idx, &[7.0, h(b[0]), h(b[1])]).unwrap();
            }
            Kernel::SigmoidBackward => {
                be.sigmoid_backward(7, a[0], a[1], a[2]).unwrap();
                be.dispatch(idx, &[7.0, h(b[0]), h(b[1]), h(b[2])]).unwrap();
            }
            Kernel::SoftmaxForward => {
                be.softmax_forward(3, 4, a[0], a[1]).unwrap();
                be.dispatch(idx, &[3.0, 4.0, h(b[0]), h(b[1])]).unwrap();
            }
            Kernel::SoftmaxBackward => {
                be.softmax_backward(3, 4, a[0], a[1], a[2]).unwrap();
                be.dispatch(idx, &[3.0, 4.0, h(b[0]), h(b[1]), h(b[2])]).unwrap();
            }
            Kernel::RmspropUpdate => {
                be.rmsprop_update(7, 1e-3, 0.99, 1e-8, a[0], a[1], a[2]).unwrap();
                be.dispatch(idx, &[7.0, 1e-3, 0.99, 1e-8, h(b[0]), h(b[1]), h(b[2])]).unwrap();
            }
            Kernel::RngUniform => {
                be.rng_uniform(a[0], 7, -1.0, 2.0, a[1]).unwrap();
                be.dispatch(idx, &[h(b[0]), 7.0, -1.0, 2.0, h(b[1])]).unwrap();
            }
        }
        let skip = usize::from(kernel == Kernel::RngUniform);
        ensure!(bits(&be, &a[skip..]) == bits(&be, &b[skip..]), "{kernel:?}: buffers differ");
    }
    Ok(format!("{} kernels bit-identical", Kernel::ALL.len()))
}

fn criterion_9() -> Check {
    let (name1, batch1, ms1) = bench_row()?;
    let (name2, batch2, ms2) = bench_row()?;
    ensure!(name1 == "pg_sigmoid" && name1 == name2, "model names {name1:?} / {name2:?}");
    ensure!(batch1 == 1 && batch2 == 1, "batch sizes {batch1} / {batch2}");
    for ms in [ms1, ms2] {
        ensure!(ms.is_finite() && ms > 0.0, "timing {ms}");
    }
    let kernels = dispatch_matches_direct()?;
    Ok(format!("{name1} batch {batch1}: {ms1:.4} ms / {ms2:.4} ms; {kernels}"))
}

fn main() {
    // `cargo test -- <filter>` passes arguments through; allow filtering by number.
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let criteria: [(&str, fn() -> Check, Option<Duration>); 9] = [
        ("sigmoid gradient table reproduction", criterion_1, Some(Duration::from_secs(1))),
        ("softmax gradient table reproduction", criterion_2, Some(Duration::from_secs(1))),
        ("gradient oracle suite", criterion_3, Some(Duration::from_secs(30))),
        ("cart-pole learning", criterion_4, None),
        ("prototxt round trip", criterion_5, Some(Duration::from_secs(1))),
        ("sampler statistics", criterion_6, Some(Duration::from_secs(5))),
        ("cart-pole dynamics", criterion_7, None),
        ("training determinism", criterion_8, None),
        ("benchmark format and dispatch equivalence", criterion_9, None),
    ];
    let mut failed = 0;
    for (i, (name, check, limit)) in criteria.iter().enumerate() {
        let number = (i + 1).to_string();
        if !filter.is_empty() && !filter.contains(&number) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let outcome = match (outcome, limit) {
            (Ok(_), Some(l)) if elapsed > *l => Err(format!("took {elapsed:.2?}, limit {l:?}")),
            (o, _) => o,
        };
        match outcome {
            Ok(detail) => println!("PASS criterion {number}: {name} ({detail}) [{elapsed:.2?}]"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {number}: {name}: {why} [{elapsed:.2?}]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
