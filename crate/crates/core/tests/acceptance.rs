//! One line per acceptance criterion, then a single assertion over all of them.
//! Tolerances and budgets are pinned in the constants below.

use anyhow::{anyhow, ensure, Context, Result};
use ppat::caption::mock_caption;
use ppat::encoders::{encode_image, encode_sequence, TemporalParams, VisualParams};
use ppat::eval::{
    cross_validate, cross_validate_logreg, make_folds, synth_corpus, DatasetRecord, LogRegConfig, MetricsRecord,
};
use ppat::model::{train, Assessment, LossKind, ModelConfig, VsLlm};
use ppat::sketch::{cumulative_counts, parse_sketch_json, rasterize, RasterImage, Sketch, Stroke, SUB_SKETCH_COUNT};
use ppat::tensor::{
    check_param_gradients, focal_loss_value, init_lstm, lstm_forward, relative_error, FocalLossConfig, ParamSet,
    Tape, Tensor, TensorError, Var,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

const DECOMPOSE_BUDGET: Duration = Duration::from_secs(1);
const FOCAL_CE_TOL: f64 = 1e-12;
const FOCAL_GRAD_TOL: f64 = 1e-4;
const FOCAL_BUDGET: Duration = Duration::from_secs(5);
const GRAD_TOL: f64 = 1e-3;
const GRAD_BUDGET: Duration = Duration::from_secs(60);
const TRAIN_ACC: f64 = 0.95;
const TRAIN_EPOCHS: usize = 50;
const CV_ACC: f64 = 0.85;
const TRAIN_BUDGET: Duration = Duration::from_secs(600);
const TRAJECTORY_TOL: f64 = 1e-9;
const FUZZ_SKETCHES: usize = 100;

struct Line {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn run(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> Line {
    let start = Instant::now();
    let (pass, detail) = match f() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e:#}")),
    };
    let line = Line {
        name,
        pass,
        detail: format!("{detail} [{:.2}s]", start.elapsed().as_secs_f64()),
    };
    println!("{} {}: {}", if line.pass { "PASS" } else { "FAIL" }, line.name, line.detail);
    line
}

fn captions(records: &[DatasetRecord]) -> Vec<String> {
    records.iter().map(|r| mock_caption(&r.sketch)).collect()
}

// ---------------------------------------------------------------- decomposition

/// Direct piecewise evaluation: frame j of n strokes.
fn oracle(n: usize, j: usize) -> usize {
    let step = n / 12;
    if step == 0 {
        if j <= n {
            j
        } else {
            n
        }
    } else if j == 12 {
        n
    } else {
        j * step
    }
}

fn decomposition() -> Result<(bool, String)> {
    let start = Instant::now();
    let mut mismatches = 0;
    for n in 1..=200 {
        let got = cumulative_counts(n)?;
        let want: Vec<usize> = (1..=SUB_SKETCH_COUNT).map(|j| oracle(n, j)).collect();
        if got.as_slice() != want.as_slice() {
            mismatches += 1;
        }
    }
    let examples = [
        (24, [2, 4, 6, 8, 10, 12, 14, 16, 18, 20, 22, 24]),
        (7, [1, 2, 3, 4, 5, 6, 7, 7, 7, 7, 7, 7]),
        (30, [2, 4, 6, 8, 10, 12, 14, 16, 18, 20, 22, 30]),
    ];
    let examples_ok = examples.iter().all(|(n, want)| cumulative_counts(*n).ok().as_ref() == Some(want));
    let elapsed = start.elapsed();
    Ok((
        mismatches == 0 && examples_ok && elapsed < DECOMPOSE_BUDGET,
        format!("n=1..200 mismatches={mismatches}, examples 24/7/30 exact={examples_ok}, {elapsed:?} < {DECOMPOSE_BUDGET:?}"),
    ))
}

// ---------------------------------------------------------------- focal loss

fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

fn focal() -> Result<(bool, String)> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let zero = FocalLossConfig::new(0.0)?;
    let mut worst_id: f64 = 0.0;
    for _ in 0..1000 {
        let logits = [rng.random_range(-15.0..15.0), rng.random_range(-15.0..15.0)];
        let label = rng.random_range(0..2);
        let diff = (focal_loss_value(&logits, label, &zero)? - cross_entropy(&logits, label)).abs();
        worst_id = worst_id.max(diff);
    }

    let h = 1e-6;
    let mut worst_grad: f64 = 0.0;
    for &gamma in &[0.0, 0.5, 1.0, 2.0, 3.0] {
        let cfg = FocalLossConfig::new(gamma)?;
        for _ in 0..100 {
            let logits = vec![rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)];
            let label = rng.random_range(0..2);
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::new(vec![1, 2], logits.clone())?);
            let loss = tape.focal_loss(x, &[label], &cfg)?;
            let grads = tape.backward(loss)?;
            let g = grads.get(x).ok_or_else(|| anyhow!("no gradient for logits"))?.data().to_vec();
            for k in 0..2 {
                let (mut up, mut down) = (logits.clone(), logits.clone());
                up[k] += h;
                down[k] -= h;
                let numeric =
                    (focal_loss_value(&up, label, &cfg)? - focal_loss_value(&down, label, &cfg)?) / (2.0 * h);
                worst_grad = worst_grad.max(relative_error(g[k], numeric));
            }
        }
    }
    let elapsed = start.elapsed();
    Ok((
        worst_id <= FOCAL_CE_TOL && worst_grad < FOCAL_GRAD_TOL && elapsed < FOCAL_BUDGET,
        format!(
            "max |focal(γ=0) - CE| = {worst_id:.1e} <= {FOCAL_CE_TOL:.0e}; max grad rel err = {worst_grad:.1e} < {FOCAL_GRAD_TOL:.0e}; {elapsed:?} < {FOCAL_BUDGET:?}"
        ),
    ))
}

// ---------------------------------------------------------------- autodiff

/// Contracts `y` with a fixed pseudo-random tensor of the same shape.
fn contract(tape: &mut Tape<'_>, y: Var, seed: u64) -> Result<Var, TensorError> {
    let shape = tape.shape(y).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = tape.constant(Tensor::uniform(&shape, 1.0, &mut rng));
    let prod = tape.mul(y, r)?;
    Ok(tape.sum(prod))
}

fn input(shape: &[usize], seed: u64) -> Tensor {
    Tensor::uniform(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn gradients() -> Result<(bool, String)> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut results = Vec::new();

    let mut conv = ParamSet::new();
    let cw = conv.add("w", Tensor::uniform(&[3, 3, 3, 3], 0.5, &mut rng));
    let cb = conv.add("b", Tensor::uniform(&[3], 0.5, &mut rng));
    let x_img = input(&[3, 9, 9], 11);
    let r = check_param_gradients(
        &conv,
        |t| {
            let x = t.constant(x_img.clone());
            let (w, b) = (t.param(cw), t.param(cb));
            let y = t.conv2d(x, w, Some(b), 2, 1)?;
            contract(t, y, 1)
        },
        usize::MAX,
        1e-6,
    )?;
    results.push(("conv2d", r.max_rel_error));

    let r = check_param_gradients(
        &conv,
        |t| {
            let x = t.constant(x_img.clone());
            let (w, b) = (t.param(cw), t.param(cb));
            let y = t.conv2d(x, w, Some(b), 1, 1)?;
            let p = t.max_pool2d(y, 2, 2)?;
            contract(t, p, 2)
        },
        usize::MAX,
        1e-6,
    )?;
    results.push(("max_pool2d", r.max_rel_error));

    let mut lin = ParamSet::new();
    let lw = lin.add("w", Tensor::uniform(&[5, 7], 0.5, &mut rng));
    let lb = lin.add("b", Tensor::uniform(&[5], 0.5, &mut rng));
    let x_vec = input(&[4, 7], 12);
    let r = check_param_gradients(
        &lin,
        |t| {
            let x = t.constant(x_vec.clone());
            let (w, b) = (t.param(lw), t.param(lb));
            let y = t.linear(x, w, Some(b))?;
            let y = t.tanh(y);
            contract(t, y, 3)
        },
        usize::MAX,
        1e-6,
    )?;
    results.push(("linear", r.max_rel_error));

    let mut lstm = ParamSet::new();
    let layers = init_lstm(&mut lstm, "lstm.", 6, 5, 2, &mut rng);
    let x_seq = input(&[12, 6], 13);
    let r = check_param_gradients(
        &lstm,
        |t| {
            let x = t.constant(x_seq.clone());
            let y = lstm_forward(t, x, &layers)?;
            contract(t, y, 4)
        },
        24,
        1e-6,
    )?;
    results.push(("lstm", r.max_rel_error));

    let model = VsLlm::new(ModelConfig::tiny())?;
    let records = synth_corpus(10, 0.5, 3)?;
    let rec = &records[0];
    let sample = model.prepare(&rec.sketch, &mock_caption(&rec.sketch), rec.label)?;
    let r = check_param_gradients(
        model.params(),
        |t| {
            model
                .loss_graph(t, &sample)
                .map(|(loss, _)| loss)
                .map_err(|e| TensorError::InvalidConfig(e.to_string()))
        },
        4,
        1e-6,
    )?;
    results.push(("composite(tiny)", r.max_rel_error));

    let elapsed = start.elapsed();
    let pass = results.iter().all(|(_, e)| *e < GRAD_TOL) && elapsed < GRAD_BUDGET;
    let listing: Vec<String> = results.iter().map(|(n, e)| format!("{n}={e:.1e}")).collect();
    Ok((
        pass,
        format!("max rel err {} (all < {GRAD_TOL:.0e}); {elapsed:?} < {GRAD_BUDGET:?}", listing.join(", ")),
    ))
}

// ---------------------------------------------------------------- shapes

fn shapes() -> Result<(bool, String)> {
    let cfg = ModelConfig::reference();
    let model = VsLlm::new(cfg.clone())?;
    let rec = synth_corpus(10, 0.5, 4)?.remove(0);
    let vp = VisualParams::resolve(model.params(), &cfg.encoder)?;
    let size = cfg.encoder.image_size;
    let frames: Vec<_> = ppat::sketch::decompose(&rec.sketch)?
        .sub_sketches
        .iter()
        .map(|s| encode_image(&rasterize(s, size, size)?, model.params(), &vp).map_err(anyhow::Error::from))
        .collect::<Result<_>>()?;
    let visual = frames[0].tensor().shape().to_vec();
    let tp = TemporalParams::resolve(model.params())?;
    let temporal = encode_sequence(&frames, model.params(), &tp, cfg.encoder.fusion)?;
    let temporal_shape = temporal.steps().shape().to_vec();
    let sample = model.prepare(&rec.sketch, &mock_caption(&rec.sketch), 0)?;
    let fused = model.fused_features(&sample)?.len();
    let pass = visual[1..] == [3, 3] && temporal_shape == [12, 100] && fused == 228;
    Ok((
        pass,
        format!("visual {visual:?} (spatial 3x3), temporal {temporal_shape:?} == [12, 100], decoder input {fused} == 228"),
    ))
}

// ---------------------------------------------------------------- training

fn training() -> Result<(bool, String)> {
    let start = Instant::now();
    let records = synth_corpus(200, 0.5, 21)?;
    let caps = captions(&records);
    let cfg = ModelConfig {
        epochs: TRAIN_EPOCHS,
        patience: TRAIN_EPOCHS,
        ..ModelConfig::desk()
    };
    let mut model = VsLlm::new(cfg.clone())?;
    let samples = records
        .iter()
        .zip(&caps)
        .map(|(r, c)| model.prepare(&r.sketch, c, r.label))
        .collect::<Result<Vec<_>, _>>()?;
    let mut reached = None;
    let log = train(&mut model, &samples, |e, _| {
        if reached.is_none() && e.train_accuracy >= TRAIN_ACC {
            reached = Some(e.epoch + 1);
        }
    })?;
    let final_acc = samples
        .iter()
        .map(|s| model.logits(s).map(|l| usize::from(l[1] > l[0]) == s.label))
        .collect::<Result<Vec<_>, _>>()?
        .iter()
        .filter(|ok| **ok)
        .count() as f64
        / samples.len() as f64;

    let cv_cfg = ModelConfig {
        epochs: 10,
        ..ModelConfig::desk()
    };
    let plan = make_folds(&records, 5, 7)?;
    let cv = cross_validate(&records, &caps, &cv_cfg, &plan, "vs_llm")?;
    let elapsed = start.elapsed();
    let pass = reached.is_some() && cv.mean_acc >= CV_ACC && elapsed < TRAIN_BUDGET;
    Ok((
        pass,
        format!(
            "train acc >= {TRAIN_ACC} at epoch {reached:?} (limit {TRAIN_EPOCHS}, ran {}), final train acc {final_acc:.3}; \
             5-fold mean acc {:.3} >= {CV_ACC}; {elapsed:?} < {TRAIN_BUDGET:?}",
            log.epochs.len(),
            cv.mean_acc
        ),
    ))
}

fn ordering() -> Result<(bool, String)> {
    let records = synth_corpus(690, 117.0 / 690.0, 7)?;
    ensure!(records.iter().filter(|r| r.label == 1).count() == 117);
    let caps = captions(&records);
    let plan = make_folds(&records, 5, 7)?;
    let cfg = ModelConfig {
        epochs: 8,
        ..ModelConfig::desk()
    };
    let vs = cross_validate(&records, &caps, &cfg, &plan, "vs_llm")?;
    let lr = cross_validate_logreg(&records, &plan, &LogRegConfig::default())?;
    Ok((
        vs.mean_acc >= lr.mean_acc,
        format!("n=690 (117 positive), VS-LLM {:.4} >= FEATS logreg {:.4} on one FoldPlan", vs.mean_acc, lr.mean_acc),
    ))
}

// ---------------------------------------------------------------- ablation

fn ablation(dir: &Path) -> Result<(bool, String)> {
    let corpus = dir.join("ablate.ndjson");
    let cfg = ModelConfig {
        epochs: 1,
        ..ModelConfig::tiny()
    };
    std::fs::write(dir.join("tiny.json"), serde_json::to_string(&cfg)?)?;
    let synth = ppat_cmd(dir)
        .args(["synth", "--n", "30", "--pos-frac", "0.3", "--seed", "9", "--out"])
        .arg(&corpus)
        .output()?;
    ensure!(synth.status.success(), "synth failed");
    let out = ppat_cmd(dir)
        .args(["ablate", "--config", "tiny.json", "--folds", "3", "--corpus"])
        .arg(&corpus)
        .output()?;
    ensure!(out.status.success(), "ablate failed: {}", String::from_utf8_lossy(&out.stderr));
    let rows: Vec<MetricsRecord> = String::from_utf8(out.stdout)?
        .lines()
        .map(serde_json::from_str)
        .collect::<Result<_, _>>()?;
    let names: Vec<&str> = rows.iter().map(|r| r.variant.as_str()).collect();
    let rows_ok = names == ["no_caption", "no_temporal", "ce", "full"];

    let records = synth_corpus(24, 0.5, 10)?;
    let caps = captions(&records);
    let trajectory = |loss: LossKind| -> Result<Vec<Vec<f64>>> {
        let cfg = ModelConfig {
            loss,
            gamma: 0.0,
            epochs: 3,
            patience: 3,
            ..ModelConfig::tiny()
        };
        let mut model = VsLlm::new(cfg)?;
        let samples = records
            .iter()
            .zip(&caps)
            .map(|(r, c)| model.prepare(&r.sketch, c, r.label))
            .collect::<Result<Vec<_>, _>>()?;
        let mut snaps = Vec::new();
        train(&mut model, &samples, |_, p| {
            snaps.push(p.iter().flat_map(|(_, t)| t.data().to_vec()).collect());
        })?;
        Ok(snaps)
    };
    let focal = trajectory(LossKind::Focal)?;
    let ce = trajectory(LossKind::Ce)?;
    ensure!(focal.len() == ce.len(), "epoch counts differ");
    let worst = focal
        .iter()
        .zip(&ce)
        .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    Ok((
        rows_ok && worst <= TRAJECTORY_TOL,
        format!(
            "rows {names:?} from one `ppat ablate`; γ=0 focal vs CE parameter trajectory max diff {worst:.1e} <= {TRAJECTORY_TOL:.0e} over {} epochs",
            focal.len()
        ),
    ))
}

// ---------------------------------------------------------------- rasterizer

fn fuzz_sketch(rng: &mut ChaCha8Rng, i: usize) -> Result<Sketch> {
    let n = rng.random_range(1..40);
    let mut t = 0;
    let strokes = (0..n)
        .map(|_| {
            let points = (0..rng.random_range(1..12))
                .map(|_| [rng.random_range(0.0..=512.0), rng.random_range(0.0..=512.0)])
                .collect();
            t += rng.random_range(0..500u64);
            let len = rng.random_range(0..400u64);
            Stroke {
                points,
                color: [rng.random(), rng.random(), rng.random()],
                width: rng.random_range(0.5..30.0),
                t_start: t,
                t_end: t + len,
            }
        })
        .collect();
    Ok(Sketch::new(format!("fuzz-{i:03}"), strokes)?)
}

fn render_all(dir: &Path, tag: &str) -> Result<Vec<Vec<u8>>> {
    (0..FUZZ_SKETCHES)
        .map(|i| {
            let out = dir.join(format!("{tag}-{i:03}.raw"));
            let status = ppat_cmd(dir)
                .args(["render", &format!("fuzz-{i:03}.json"), "--size", "64", "--out"])
                .arg(&out)
                .status()?;
            ensure!(status.success(), "render {i} failed");
            Ok(std::fs::read(out)?)
        })
        .collect()
}

fn rasterizer(dir: &Path) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut in_process = Vec::new();
    for i in 0..FUZZ_SKETCHES {
        let sketch = fuzz_sketch(&mut rng, i)?;
        let text = sketch.to_json();
        std::fs::write(dir.join(format!("fuzz-{i:03}.json")), &text)?;
        let parsed = parse_sketch_json(text.as_bytes())?;
        in_process.push(rasterize(&parsed, 64, 64)?.to_raw_bytes());
    }
    let a = render_all(dir, "a")?;
    let b = render_all(dir, "b")?;
    let across = a.iter().zip(&b).filter(|(x, y)| x == y).count();
    let local = a.iter().zip(&in_process).filter(|(x, y)| x == y).count();
    let valid = a.iter().all(|r| RasterImage::from_raw_bytes(r).is_ok());
    Ok((
        across == FUZZ_SKETCHES && local == FUZZ_SKETCHES && valid,
        format!("{across}/{FUZZ_SKETCHES} byte-identical across two processes, {local}/{FUZZ_SKETCHES} equal to in-process render"),
    ))
}

// ---------------------------------------------------------------- service

fn ppat_cmd(dir: &Path) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ppat"));
    c.current_dir(dir);
    c
}

struct Server {
    child: Child,
    base: String,
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn start_server(dir: &Path) -> Result<Server> {
    let mut child = ppat_cmd(dir)
        .args(["serve", "--ckpt", "model.ckpt", "--store", "store", "--port", "0", "--provider", "mock"])
        .env_remove("PPAT_SERVICE_TOKEN")
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()?;
    let stdout = child.stdout.take().context("no stdout")?;
    let mut line = String::new();
    BufReader::new(stdout).read_line(&mut line)?;
    let base = line
        .trim()
        .strip_prefix("listening on ")
        .with_context(|| format!("unexpected banner {line:?}"))?
        .to_string();
    Ok(Server { child, base })
}

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(Duration::from_secs(60)))
        .build()
        .into()
}

fn post(agent: &ureq::Agent, url: &str, body: &str) -> Result<(u16, String)> {
    let mut resp = agent.post(url).header("content-type", "application/json").send(body)?;
    Ok((resp.status().as_u16(), resp.body_mut().read_to_string()?))
}

fn get(agent: &ureq::Agent, url: &str) -> Result<(u16, String)> {
    let mut resp = agent.get(url).call()?;
    Ok((resp.status().as_u16(), resp.body_mut().read_to_string()?))
}

fn service(dir: &Path) -> Result<(bool, String)> {
    let model = VsLlm::new(ModelConfig::tiny())?;
    model.save(std::fs::File::create(dir.join("model.ckpt"))?)?;
    let rec = synth_corpus(10, 0.5, 12)?.remove(0);
    let envelope = serde_json::json!({
        "participant_ref": "p-001",
        "sketch": rec.sketch.to_json_value(),
        "client_version": "acceptance",
    })
    .to_string();
    let http = agent();

    let server = start_server(dir)?;
    let (created, body) = post(&http, &format!("{}/v1/submissions", server.base), &envelope)?;
    let id = serde_json::from_str::<serde_json::Value>(&body)?["record_id"]
        .as_u64()
        .context("no record_id")?;
    let assess_url = format!("{}/v1/submissions/{id}/assess", server.base);
    let (s1, first) = post(&http, &assess_url, "")?;
    let (s2, second) = post(&http, &assess_url, "")?;
    drop(server);

    let server = start_server(dir)?;
    let (s3, after) = post(&http, &format!("{}/v1/submissions/{id}/assess", server.base), "")?;
    let (s4, view) = get(&http, &format!("{}/v1/submissions/{id}", server.base))?;
    drop(server);

    let assessment: Assessment = serde_json::from_str(&first)?;
    let stored: serde_json::Value = serde_json::from_str(&view)?;
    let stored_matches = stored["assessment"] == serde_json::to_value(&assessment)?;
    let pass = created == 201
        && (s1, s2, s3, s4) == (200, 200, 200, 200)
        && first == second
        && first == after
        && stored_matches;
    Ok((
        pass,
        format!(
            "submit {created}, assess {s1}/{s2} byte-identical={}, after restart assess {s3} identical={} and record {s4} keeps assessment={stored_matches}",
            first == second,
            first == after
        ),
    ))
}

#[test]
fn acceptance() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let lines = vec![
        run("decomposition oracle", decomposition),
        run("focal-loss identity", focal),
        run("autodiff gradient suite", gradients),
        run("shape contracts", shapes),
        run("training sanity", training),
        run("ordering vs FEATS logreg", ordering),
        run("ablation harness", || ablation(d)),
        run("rasterizer determinism", || rasterizer(d)),
        run("service round trip", || service(d)),
    ];
    let failed: Vec<&str> = lines.iter().filter(|l| !l.pass).map(|l| l.name).collect();
    println!("{}/{} criteria passed", lines.len() - failed.len(), lines.len());
    assert!(failed.is_empty(), "failed: {failed:?}");
}
