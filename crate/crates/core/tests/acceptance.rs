//! End-to-end acceptance run. Prints one PASS/FAIL/SKIP line per criterion
//! and fails if any criterion fails.
//!
//! Criteria 5, 6 and 8 train the shallow model on 2000 synthetic images for
//! 20 epochs three times, so expect this target to take several minutes.

mod common;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::naive::{naive_conv, naive_matmul, naive_maxpool, naive_mse, random};
use common::{run, stderr, synth_data};
use inpaint::autograd::check::{standard_cases, GradCheckConfig, TOLERANCE};
use inpaint::dataset::{self, RawImage, IMAGE_LEN};
use inpaint::layers::{self, Padding};
use inpaint::loss;
use inpaint::tensor::{Shape, Tensor};
use inpaint::train::{Checkpoint, LossCurve, BEST_FILE, CURVE_FILE, FINAL_FILE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn show(line: &str) {
    // straight to the handle so the harness does not swallow it
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn json(o: &std::process::Output) -> Result<serde_json::Value, String> {
    serde_json::from_slice(&o.stdout).map_err(|e| format!("bad json: {e}"))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn max_rel(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| rel(*x, *y)).fold(0.0, f64::max)
}

fn gradients() -> Verdict {
    let start = Instant::now();
    let cases = standard_cases();
    let mut worst: f64 = 0.0;
    for case in &cases {
        for seed in 0..10 {
            let report = case
                .run(&GradCheckConfig {
                    seed,
                    ..GradCheckConfig::default()
                })
                .map_err(|e| e.to_string())?;
            ensure!(report.passed(), "{} seed {seed}: max rel err {:e}", case.name, report.max_error());
            worst = worst.max(report.max_error());
        }
    }
    for kind in ["conv valid", "conv same", "maxpool", "deconv valid stride 1", "deconv same stride 2", "dense", "relu", "sigmoid", "clip01", "mse"] {
        ensure!(cases.iter().any(|c| c.name.starts_with(kind)), "no gradient case for {kind}");
    }
    let took = start.elapsed();
    ensure!(took < Duration::from_secs(60), "took {took:?}");
    Ok(format!("{} layer kinds x 10 seeds, worst {worst:.2e} < {TOLERANCE:e}, {took:.1?}", cases.len()))
}

fn audit() -> Verdict {
    let start = Instant::now();
    let o = run(&["audit", "--model", "all", "--json"]);
    let took = start.elapsed();
    ensure!(o.status.success(), "audit exited {:?}", o.status.code());
    let j = json(&o)?;
    let models = j["models"].as_array().ok_or("no models")?;
    ensure!(models.len() == 6, "{} models", models.len());
    let mut steps = 0;
    for m in models {
        for s in m["steps"].as_array().ok_or("no steps")? {
            ensure!(s["pass"] == true && s["expected"] == s["inferred"], "{} step {}", m["model"], s["step"]);
            steps += 1;
        }
    }
    ensure!(took < Duration::from_secs(1), "took {took:?}");
    Ok(format!("6 models, {steps} steps, {took:.1?}"))
}

fn oracles() -> Verdict {
    const N: usize = 100;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for case in 0..N {
        let k = [1, 3, 5][case % 3];
        let (h, w) = (rng.random_range(k..=8), rng.random_range(k..=8));
        let (cin, cout) = (rng.random_range(1..=3), rng.random_range(1..=4));
        let (padding, stride, pad) = match case % 3 {
            0 => (Padding::Valid, 1, 0),
            1 => (Padding::Same, 1, (k - 1) / 2),
            _ => (Padding::Valid, 2, 0),
        };
        let x = random(&mut rng, &[1, h, w, cin]);
        let kernel = random(&mut rng, &[k, k, cin, cout]);
        let bias = random(&mut rng, &[cout]);
        let got = layers::conv2d(&x, &kernel, &bias, padding, stride).map_err(|e| e.to_string())?;
        let (oh, ow) = (got.dims()[1], got.dims()[2]);
        let err = max_rel(&got, &naive_conv(&x, &kernel, &bias, pad, stride, oh, ow));
        ensure!(err <= 1e-12, "conv case {case}: {err:e}");
        worst = worst.max(err);

        let (ph, pw) = (2 * rng.random_range(1..=4), 2 * rng.random_range(1..=4));
        // coarse values make ties common
        let p = random(&mut rng, &[ph, pw, cin]).map(|v| (v * 3.0).round());
        let pooled = layers::maxpool2x2_forward(&p).map_err(|e| e.to_string())?;
        let (vals, args) = naive_maxpool(&p);
        ensure!(pooled.output.data() == &vals[..] && pooled.argmax == args, "maxpool case {case}");

        let (m, kk, n) = (rng.random_range(1..=16), rng.random_range(1..=16), rng.random_range(1..=16));
        let (a, b) = (random(&mut rng, &[m, kk]), random(&mut rng, &[kk, n]));
        let err = max_rel(&a.matmul(&b).map_err(|e| e.to_string())?, &naive_matmul(&a, &b));
        ensure!(err <= 1e-12, "matmul case {case}: {err:e}");
        worst = worst.max(err);

        let rows = rng.random_range(1..=4);
        let (y, yhat) = (random(&mut rng, &[rows, 192]), random(&mut rng, &[rows, 192]));
        let want = naive_mse(&y, &yhat).iter().sum::<f64>() / rows as f64;
        let err = rel(loss::mse(&y, &yhat).map_err(|e| e.to_string())?, want);
        ensure!(err <= 1e-12, "mse case {case}: {err:e}");
        worst = worst.max(err);

        let ks = [1, 3, 4][case % 3];
        let s = 1 + case % 2;
        let small = rng.random_range(1..=4);
        let big = layers::deconv_output_extent(small, ks, s, Padding::Valid).map_err(|e| e.to_string())?;
        let kernel = random(&mut rng, &[ks, ks, 2, 3]);
        let (xa, yb) = (random(&mut rng, &[big, big, 2]), random(&mut rng, &[small, small, 3]));
        let zeros = |c: usize| Tensor::zeros(&Shape::new(&[c]).unwrap());
        let conv = layers::conv2d(&xa, &kernel, &zeros(3), Padding::Valid, s).map_err(|e| e.to_string())?;
        let deconv = layers::deconv2d(&yb, &kernel, &zeros(2), Padding::Valid, s).map_err(|e| e.to_string())?;
        let gap = (conv.dot(&yb).unwrap() - xa.dot(&deconv).unwrap()).abs();
        ensure!(gap < 1e-10, "adjoint case {case}: {gap:e}");
    }
    Ok(format!("{N} instances each of conv, maxpool, matmul, mse, adjoint; worst rel err {worst:.1e}"))
}

fn pipeline() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for n in 0..1000 {
        let bytes: Vec<u8> = (0..IMAGE_LEN).map(|_| rng.random()).collect();
        let img = RawImage::from_hwc(&bytes, rng.random_range(0..10)).map_err(|e| e.to_string())?;
        let px = img.pixels();
        let ex = dataset::make_example(&img);
        ensure!(ex.label.dims() == [192], "image {n}: label {}", ex.label.shape());
        ensure!(dataset::recompose(&ex.input, &ex.label).map_err(|e| e.to_string())? == px, "image {n}: recompose");
        ensure!(ex.input.slice_region(12, 12, 8, 8).unwrap().data().iter().all(|&v| v == 0.0), "image {n}: mask");
        let in_range = |t: &Tensor| t.data().iter().all(|v| (0.0..=1.0).contains(v));
        ensure!(in_range(&px) && in_range(&ex.input) && in_range(&ex.label), "image {n}: range");
    }
    Ok("1000 random images recompose bit-exactly".into())
}

struct Run {
    dir: PathBuf,
    curve: LossCurve,
}

fn train(root: &Path, name: &str, extra: &[&str]) -> Result<Run, String> {
    let dir = root.join(name);
    let mut args = vec![
        "train",
        "--model",
        "shallow",
        "--subset",
        "2000",
        "--epochs",
        "20",
        "--seed",
        "1",
        "--data",
        synth_data().to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    let o = run(&args);
    ensure!(o.status.success(), "train {name} failed: {}", stderr(&o));
    let curve = LossCurve::read(&dir.join(CURVE_FILE)).map_err(|e| e.to_string())?;
    ensure!(curve.records.len() == 20, "{name}: {} epochs recorded", curve.records.len());
    Ok(Run { dir, curve })
}

fn learning(a: &Run) -> Verdict {
    let o = run(&["baseline", "--data", synth_data().to_str().unwrap(), "--subset", "2000", "--json"]);
    ensure!(o.status.success(), "baseline failed: {}", stderr(&o));
    let j = json(&o)?;
    let constant = j["splits"]["train"]["constant_half"].as_f64().ok_or("no constant baseline")?;
    let mean = j["splits"]["train"]["train_mean"].as_f64().ok_or("no mean baseline")?;
    let (first, last) = (a.curve.records[0].train_mse, a.curve.records[19].train_mse);
    ensure!(last < constant, "final train {last:.6} vs constant 0.5 {constant:.6}");
    ensure!(last < mean, "final train {last:.6} vs mean patch {mean:.6}");
    ensure!(last < first, "final train {last:.6} vs first {first:.6}");
    Ok(format!("train mse {first:.6} -> {last:.6}; baselines constant {constant:.6}, mean patch {mean:.6}"))
}

fn determinism(a: &Run, b: &Run) -> Verdict {
    for f in [CURVE_FILE, BEST_FILE, FINAL_FILE] {
        let read = |d: &Path| std::fs::read(d.join(f)).map_err(|e| format!("{f}: {e}"));
        ensure!(read(&a.dir)? == read(&b.dir)?, "{f} differs between identical runs");
    }

    let ckpt = Checkpoint::load(&a.dir.join(FINAL_FILE)).map_err(|e| e.to_string())?;
    let copy = a.dir.join("roundtrip.ckpt");
    ckpt.save(&copy).map_err(|e| e.to_string())?;
    let back = Checkpoint::load(&copy).map_err(|e| e.to_string())?;
    ensure!(back == ckpt, "checkpoint fields changed on reload");
    let images = dataset::synthetic::synth_images(16, 99, 0);
    let (x, _) = dataset::batch_tensors(images.iter()).map_err(|e| e.to_string())?;
    let before = ckpt.spec().forward_batch(&ckpt.params, &x).map_err(|e| e.to_string())?;
    let after = back.spec().forward_batch(&back.params, &x).map_err(|e| e.to_string())?;
    ensure!(before.data() == after.data(), "forward output changed after reload");

    let best = Checkpoint::load(&a.dir.join(BEST_FILE)).map_err(|e| e.to_string())?;
    let o = run(&[
        "eval",
        "--checkpoint",
        a.dir.join(BEST_FILE).to_str().unwrap(),
        "--split",
        "dev",
        "--data",
        synth_data().to_str().unwrap(),
        "--json",
    ]);
    let mse = json(&o)?["mse"].as_f64().ok_or("no mse")?;
    ensure!(mse == best.dev_loss, "eval {mse} vs stored {}", best.dev_loss);
    Ok("loss curves and checkpoints byte-identical; reload forward bit-exact".into())
}

fn heads(relu: &Run, sigmoid: &Run) -> Verdict {
    let summary = |r: &Run| {
        let last = r.curve.records.last().unwrap();
        let best = r.curve.best_dev().map(|(_, v)| v).unwrap_or(f64::NAN);
        (last.train_mse, best)
    };
    let (rt, rd) = summary(relu);
    let (st, sd) = summary(sigmoid);
    ensure!(rt.is_finite() && st.is_finite() && rd.is_finite() && sd.is_finite(), "non-finite loss");
    let head = Checkpoint::load(&sigmoid.dir.join(FINAL_FILE)).map_err(|e| e.to_string())?.head;
    ensure!(head == inpaint::model::Head::Sigmoid, "sigmoid run saved head {head}");
    Ok(format!(
        "relu_clip train {rt:.6} dev {rd:.6}; sigmoid train {st:.6} dev {sd:.6} (curves in {} and {})",
        relu.dir.display(),
        sigmoid.dir.display()
    ))
}

#[test]
fn acceptance() {
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = std::fs::remove_dir_all(&root);
    std::fs::create_dir_all(&root).unwrap();

    let mut failed = Vec::new();
    let mut report = |id: u32, name: &str, verdict: Verdict| match verdict {
        Ok(detail) => show(&format!("criterion {id} {name}: PASS ({detail})")),
        Err(why) => {
            show(&format!("criterion {id} {name}: FAIL ({why})"));
            failed.push(id);
        }
    };

    report(1, "gradient correctness", gradients());
    report(2, "shape audit", audit());
    report(3, "oracle equivalence", oracles());
    report(4, "pipeline exactness", pipeline());

    let a = train(&root, "relu_a", &[]);
    let b = train(&root, "relu_b", &[]);
    let s = train(&root, "sigmoid", &["--head", "sigmoid"]);
    report(5, "desk-scale learning", a.as_ref().map_err(Clone::clone).and_then(learning));
    report(
        6,
        "determinism",
        match (&a, &b) {
            (Ok(a), Ok(b)) => determinism(a, b),
            (Err(e), _) | (_, Err(e)) => Err(e.clone()),
        },
    );
    show("criterion 7 long-run ordering: SKIP (needs real CIFAR-10; set INPAINT_CIFAR10 and run --ignored)");
    report(
        8,
        "sigmoid vs clipped relu",
        match (&a, &s) {
            (Ok(a), Ok(s)) => heads(a, s),
            (Err(e), _) | (_, Err(e)) => Err(e.clone()),
        },
    );

    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

/// Full-dataset ordering check. Days of CPU time; run by hand with
/// `INPAINT_CIFAR10=/path/to/cifar-10-batches-bin cargo test --test acceptance -- --ignored`.
#[test]
#[ignore]
fn long_run_ordering() {
    let data = std::env::var("INPAINT_CIFAR10").expect("INPAINT_CIFAR10 not set");
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("long-run");
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut results = Vec::new();
    for model in ["shallow", "deep", "fully_connected"] {
        let out = root.join(model);
        let config = configs.join(format!("{model}.toml"));
        let o = run(&[
            "train",
            "--config",
            config.to_str().unwrap(),
            "--data",
            &data,
            "--out",
            out.to_str().unwrap(),
            "--epochs",
            "100",
        ]);
        assert!(o.status.success(), "{model}: {}", stderr(&o));
        let curve = LossCurve::read(&out.join(CURVE_FILE)).unwrap();
        let last = curve.records.last().unwrap().clone();
        show(&format!("{model}: train {:.6} dev {:.6}", last.train_mse, last.dev_mse.unwrap()));
        results.push(last);
    }
    let (shallow, deep, fc) = (&results[0], &results[1], &results[2]);
    let ordered = deep.dev_mse.unwrap() < shallow.dev_mse.unwrap();
    let gap = fc.train_mse < fc.dev_mse.unwrap();
    show(&format!(
        "criterion 7 long-run ordering: {} (deep below shallow on dev: {ordered}; fully_connected train below dev: {gap})",
        if ordered && gap { "PASS" } else { "FAIL" }
    ));
    assert!(ordered && gap);
}

