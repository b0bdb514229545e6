//! Acceptance report: one PASS/FAIL line per criterion. Exits nonzero if
//! any criterion fails.

mod common;

use std::cell::OnceCell;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::{random_tensor, rng, toy_config};
use nalgebra::DMatrix;
use rand::Rng;
use tllm_core::analysis::cka;
use tllm_core::checkpoint::{self, Entry};
use tllm_core::config::{desk_config, RunConfig};
use tllm_core::data::{
    batch_tensors, fewshot_take, make_splits, windows, zeroshot_pair, SeriesDataset, SeriesWindow, Split, SplitSpec,
};
use tllm_core::distill::{loss_schedule_for_task, total_loss, LossInputs, LossWeights, Task};
use tllm_core::eval::{mae, mase, mse, owa, smape};
use tllm_core::model::{JointModel, JointOutput, StudentModel};
use tllm_core::numerics::{
    grad_check, rfft, ComplexSpectrum, LossKind, MaskGradient, ParamId, ParamStore, Real, Tape, Tensor, Var,
};
use tllm_core::pipeline;
use tllm_core::teacher::{adaptive_spectral_tensor, select_capacity, CapacitySchedule};
use tllm_core::Error;

type Verdict = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

// ---------------------------------------------------------------- 1

const EPS: f64 = 1e-6;
const TOL: f64 = 1e-4;

fn op_check<const N: usize>(
    name: &str,
    shapes: [&[usize]; N],
    seed: u64,
    f: impl for<'s> Fn(&mut Tape<'s, f64>, [Var; N]) -> tllm_core::Result<Var>,
) -> Result<usize, String> {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let ids: Vec<ParamId> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| store.add(format!("p{i}"), random_tensor(&mut r, s, 1.0), true))
        .collect();
    let report = grad_check(&mut store, &ids, EPS, TOL, |tape| {
        let vars: [Var; N] = std::array::from_fn(|i| tape.param(ids[i]));
        let out = f(tape, vars)?;
        let n = tape.value(out).numel();
        let w: Vec<f64> = (0..n).map(|k| 0.3 + 0.17 * ((k * 7919) % 13) as f64).collect();
        let wv = tape.constant(Tensor::new(tape.shape(out).to_vec(), w)?);
        let p = tape.mul(out, wv)?;
        Ok(tape.sum(p))
    })
    .map_err(|e| format!("{name}: {e}"))?;
    ensure!(report.passed(), "{name}: {:?}", report.failures());
    Ok(1)
}

fn op_suite() -> Result<usize, String> {
    let mut n = 0;
    n += op_check("matmul", [&[2, 3, 4], &[4, 5]], 1, |t, [a, b]| t.matmul(a, b))?;
    n += op_check("bmm", [&[2, 3, 4], &[2, 4, 2]], 2, |t, [a, b]| t.matmul(a, b))?;
    n += op_check("permute", [&[2, 3, 4]], 3, |t, [a]| t.permute(a, &[2, 0, 1]))?;
    n += op_check("transpose", [&[2, 3, 4]], 4, |t, [a]| t.transpose(a))?;
    n += op_check("reshape", [&[2, 3, 4]], 5, |t, [a]| t.reshape(a, &[6, 4]))?;
    n += op_check("add", [&[2, 3], &[3]], 6, |t, [a, b]| t.add(a, b))?;
    n += op_check("sub", [&[2, 3], &[2, 1]], 7, |t, [a, b]| t.sub(a, b))?;
    n += op_check("mul", [&[2, 3], &[1, 3]], 8, |t, [a, b]| t.mul(a, b))?;
    n += op_check("scale", [&[4]], 9, |t, [a]| Ok(t.scale(a, -1.7)))?;
    n += op_check("offset", [&[4]], 10, |t, [a]| Ok(t.offset(a, 0.3)))?;
    n += op_check("gelu", [&[3, 4]], 11, |t, [a]| Ok(t.gelu(a)))?;
    n += op_check("sigmoid", [&[3, 4]], 12, |t, [a]| Ok(t.sigmoid(a)))?;
    n += op_check("magnitude", [&[3, 4], &[3, 4]], 13, |t, [a, b]| t.magnitude(a, b))?;
    n += op_check("softmax", [&[3, 5]], 14, |t, [a]| t.softmax(a))?;
    n += op_check("layernorm", [&[3, 6]], 15, |t, [a]| Ok(t.normalize(a, 1e-5)))?;
    n += op_check("mean_last", [&[2, 3, 4]], 16, |t, [a]| Ok(t.mean_last(a)))?;
    n += op_check("concat", [&[2, 3], &[2, 1], &[2, 2]], 17, |t, [a, b, c]| t.concat_last(&[a, b, c]))?;
    n += op_check("sum", [&[2, 3]], 18, |t, [a]| Ok(t.sum(a)))?;
    n += op_check("mean", [&[2, 3]], 19, |t, [a]| Ok(t.mean(a)))?;
    for (seed, d) in [(20, 8), (21, 7)] {
        n += op_check("rfft", [&[2, d]], seed, |t, [a]| {
            let s = t.rfft(a)?;
            let p = t.mul(s.re, s.im)?;
            let q = t.add(s.re, s.im)?;
            t.add(p, q)
        })?;
    }
    for kind in [LossKind::L1, LossKind::SmoothL1, LossKind::Mse, LossKind::Smape] {
        n += op_check("loss", [&[2, 3], &[2, 3]], 23, move |t, [a, b]| t.loss(a, b, kind, None))?;
    }
    n += op_check("mase", [&[2, 3], &[2, 3]], 24, |t, [a, b]| t.loss(a, b, LossKind::Mase, Some(&[0.5, 2.0])))?;
    n += op_check("mask", [&[2, 5]], 25, |t, [p]| {
        let th = t.constant(Tensor::scalar(0.1));
        t.threshold_mask(p, th, MaskGradient::Exact)
    })?;
    Ok(n)
}

fn graph_suite() -> Result<usize, String> {
    let cfg = toy_config();
    let mut model = JointModel::<f64>::new(cfg.clone(), 21, None).map_err(|e| e.to_string())?;
    let mut r = rng(22);
    let x = random_tensor::<f64>(&mut r, &[2, cfg.lookback, cfg.channels], 1.0);
    let y = random_tensor::<f64>(&mut r, &[2, cfg.horizon, cfg.channels], 1.0);
    let e1 = model.teacher_input(&x).map_err(|e| e.to_string())?;
    model.teacher.calibrate_thresholds(&mut model.store, &e1).map_err(|e| e.to_string())?;
    let thetas: Vec<_> = model.teacher.blocks.iter().map(|b| b.theta).collect();
    for &id in &thetas {
        let v = model.store.value(id).map(|t| t * 1.3);
        model.store.set(id, v).map_err(|e| e.to_string())?;
    }
    for id in model.store.ids_with_prefix("student.blocks.") {
        if model.store.get(id).name.contains(".lora_") {
            let shape = model.store.value(id).shape().to_vec();
            model.store.set(id, random_tensor(&mut r, &shape, 0.5)).map_err(|e| e.to_string())?;
        }
    }
    let snapshot = model.clone();
    let z1 = random_tensor::<f64>(&mut r, &[2, cfg.channels, cfg.d_model], 1.0);

    let teacher_ids: Vec<_> = model.store.ids_with_prefix("teacher.").into_iter().filter(|id| !thetas.contains(id)).collect();
    let teacher = grad_check(&mut model.store, &teacher_ids, EPS, TOL, |tape| {
        let e = tape.constant(e1.clone());
        let out = snapshot.teacher.forward(tape, e)?;
        let yv = tape.constant(y.clone());
        tape.loss(out.pred, yv, LossKind::Mse, None)
    })
    .map_err(|e| e.to_string())?;
    ensure!(teacher.passed(), "teacher graph: {:?}", teacher.failures());

    let student_ids = model.store.ids_with_prefix("student.");
    let student = grad_check(&mut model.store, &student_ids, EPS, TOL, |tape| {
        let z = tape.constant(z1.clone());
        let out = snapshot.student.forward(tape, z)?;
        let yv = tape.constant(y.clone());
        tape.loss(out.pred, yv, LossKind::Mse, None)
    })
    .map_err(|e| e.to_string())?;
    ensure!(student.passed(), "student graph: {:?}", student.failures());
    ensure!(student.frozen_violations.is_empty(), "frozen parameters changed");

    let joint_ids: Vec<_> = model.store.ids().filter(|id| !thetas.contains(id)).collect();
    let sched = loss_schedule_for_task(Task::LongTermOther);
    let weights = LossWeights::default();
    let joint = grad_check(&mut model.store, &joint_ids, EPS, TOL, |tape| {
        let m = &snapshot;
        let xv = tape.constant(x.clone());
        let inputs = m.input.forward(tape, xv)?;
        let teacher = m.teacher.forward(tape, inputs.e1)?;
        let student = m.student.forward(tape, inputs.z1)?;
        let out = JointOutput { inputs, teacher, student };
        let pairs = m.guidance_pairs(tape, &out)?;
        let target = tape.constant(y.clone());
        let inp = LossInputs {
            teacher_pred: out.teacher.pred,
            student_pred: out.student.pred,
            target,
            guidance: &pairs,
            mase_scale: None,
        };
        Ok(total_loss(tape, inp, &weights, &sched, false)?.0)
    })
    .map_err(|e| e.to_string())?;
    ensure!(joint.passed(), "joint graph: {:?}", joint.failures());
    Ok(teacher_ids.len() + student_ids.len() + joint_ids.len())
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let ops = op_suite()?;
    let tensors = graph_suite()?;
    let took = start.elapsed();
    ensure!(took < Duration::from_secs(120), "suite took {took:.1?}");
    Ok(format!("{ops} op checks, {tensors} parameter tensors over teacher/student/joint graphs, {took:.1?}"))
}

// ---------------------------------------------------------------- 2

fn naive_dft(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d = x.len();
    let mut re = vec![0.0; d / 2 + 1];
    let mut im = vec![0.0; d / 2 + 1];
    for k in 0..re.len() {
        for (n, &v) in x.iter().enumerate() {
            let ang = -2.0 * std::f64::consts::PI * (k * n) as f64 / d as f64;
            re[k] += v * ang.cos();
            im[k] += v * ang.sin();
        }
    }
    (re, im)
}

fn criterion_2() -> Verdict {
    let mut r = rng(30);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let d = r.random_range(2..=64);
        let x = random_tensor::<f64>(&mut r, &[1, d], 3.0);
        let s = rfft(&x).map_err(|e| e.to_string())?;
        let (re, im) = naive_dft(x.data());
        worst = worst.max(common::max_abs_diff(s.re.data(), &re)).max(common::max_abs_diff(s.im.data(), &im));
    }
    ensure!(worst <= 1e-10, "rfft error {worst:e}");

    let (c, d) = (3, 16);
    let k = d / 2 + 1;
    let e = random_tensor::<f64>(&mut r, &[c, d], 1.0);
    let f = rfft(&e).map_err(|e| e.to_string())?;
    let p = f.power();
    let (pmin, pmax) = p.data().iter().fold((f64::MAX, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
    let mut gains = || {
        let re = random_tensor::<f64>(&mut r, &[c, k], 1.0);
        let im = random_tensor::<f64>(&mut r, &[c, k], 1.0);
        ComplexSpectrum::new(re, im).unwrap()
    };
    let (gg, gl) = (gains(), gains());
    let cmul = |a: &ComplexSpectrum<f64>, i: usize| {
        (
            a.re.data()[i] * f.re.data()[i] - a.im.data()[i] * f.im.data()[i],
            a.re.data()[i] * f.im.data()[i] + a.im.data()[i] * f.re.data()[i],
        )
    };
    let above = adaptive_spectral_tensor(&e, &gg, &gl, &Tensor::scalar(pmax + 1.0)).map_err(|e| e.to_string())?;
    let below = adaptive_spectral_tensor(&e, &gg, &gl, &Tensor::scalar(pmin - 1.0)).map_err(|e| e.to_string())?;
    for i in 0..c * k {
        let (gr, gi) = cmul(&gg, i);
        let (lr, li) = cmul(&gl, i);
        ensure!(above.re.data()[i] == gr && above.im.data()[i] == gi, "theta above max: bin {i} differs");
        ensure!(below.re.data()[i] == gr + lr && below.im.data()[i] == gi + li, "theta below min: bin {i} differs");
    }
    Ok(format!("max rfft error {worst:.1e} on 200 signals; both threshold endpoints exact"))
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Verdict {
    let mut r = rng(2024);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let len = r.random_range(1..=10);
        let m = r.random_range(1..=3);
        let ins_len = r.random_range(m + 1..=m + 10);
        let mut draw = |k: usize| (0..k).map(|_| r.random_range(-5.0..5.0)).collect::<Vec<f64>>();
        let (p, y, ins) = (draw(len), draw(len), draw(ins_len));
        let (mut se, mut ae, mut sm) = (0.0, 0.0, 0.0);
        for i in 0..len {
            se += (p[i] - y[i]) * (p[i] - y[i]);
            ae += (p[i] - y[i]).abs();
            sm += 2.0 * (p[i] - y[i]).abs() / (p[i].abs() + y[i].abs());
        }
        let n = len as f64;
        let mut scale = 0.0;
        for t in m..ins_len {
            scale += (ins[t] - ins[t - m]).abs();
        }
        scale /= (ins_len - m) as f64;
        let want_mase = ae / n / scale;
        let e = |x: tllm_core::Result<f64>| x.map_err(|e| e.to_string());
        let s = e(smape(&p, &y))?;
        let ms = e(mase(&p, &y, &ins, m))?;
        let (s2, m2) = (s * 1.3 + 0.5, ms * 0.7 + 0.1);
        let want_owa = 0.5 * (s / s2 + ms / m2);
        for err in [
            (e(mse(&p, &y))? - se / n).abs(),
            (e(mae(&p, &y))? - ae / n).abs(),
            (s - 100.0 * sm / n).abs(),
            (ms - want_mase).abs(),
            (e(owa(s, ms, s2, m2))? - want_owa).abs(),
            (s - e(smape(&y, &p))?).abs(),
        ] {
            worst = worst.max(err);
        }
        ensure!(e(owa(s2, m2, s2, m2))? == 1.0, "OWA(Naive2, Naive2) != 1");
    }
    ensure!(worst <= 1e-9, "max metric error {worst:e}");
    Ok(format!("500 cases, max error {worst:.1e}; OWA(Naive2, Naive2) = 1 exactly"))
}

// ---------------------------------------------------------------- 4

fn trained_like<F: Real>(seed: u64) -> JointModel<F> {
    let mut model = JointModel::<F>::new(toy_config(), seed, None).unwrap();
    let mut r = rng(seed + 100);
    for id in model.store.ids_with_prefix("student.") {
        let p = model.store.get(id);
        if p.trainable {
            let shape = p.value.shape().to_vec();
            model.store.set(id, random_tensor(&mut r, &shape, 0.3)).unwrap();
        }
    }
    model
}

fn export_max_diff<F: Real>(dir: &Path, merge: bool, seed: u64) -> Result<f64, String> {
    let model = trained_like::<F>(seed);
    let ck = dir.join(format!("joint{seed}.tllm"));
    let out = dir.join(format!("student{seed}.tllm"));
    let mut entries = model.entries().map_err(|e| e.to_string())?;
    entries.push(Entry::bytes("meta.finished", &[1]));
    checkpoint::save(&ck, &entries).map_err(|e| e.to_string())?;
    pipeline::export::<F>(&ck, &out, merge).map_err(|e| e.to_string())?;
    let student = StudentModel::<F>::load(&out).map_err(|e| e.to_string())?;
    ensure!(student.store.iter().all(|(_, p)| !p.name.starts_with("teacher.")), "teacher tensors in the artifact");
    let cfg = toy_config();
    let mut r = rng(seed + 1);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let x = random_tensor::<F>(&mut r, &[1, cfg.lookback, cfg.channels], 2.0);
        let a = model.predict_student(&x).map_err(|e| e.to_string())?;
        let b = student.predict(&x).map_err(|e| e.to_string())?;
        worst = worst.max(a.max_abs_diff(&b).as_f64());
    }
    Ok(worst)
}

fn criterion_4() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let unmerged = export_max_diff::<f64>(dir.path(), false, 2)?;
    let merged = export_max_diff::<f32>(dir.path(), true, 4)?;
    ensure!(unmerged <= 1e-12, "unmerged export differs by {unmerged:e}");
    ensure!(merged <= 1e-5, "merged f32 export differs by {merged:e}");
    Ok(format!("unmerged max diff {unmerged:.1e} (f64), merged {merged:.1e} (f32), 100 inputs each"))
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Verdict {
    let cfg = toy_config();
    let model = JointModel::<f64>::new(cfg.clone(), 4, None).map_err(|e| e.to_string())?;
    let backbone = model.export_student(None, true).map_err(|e| e.to_string())?;
    let mut r = rng(5);
    for _ in 0..20 {
        let x = random_tensor::<f64>(&mut r, &[2, cfg.lookback, cfg.channels], 2.0);
        let a = model.predict_student(&x).map_err(|e| e.to_string())?;
        let b = backbone.predict(&x).map_err(|e| e.to_string())?;
        ensure!(a.data() == b.data(), "adapter output differs from the frozen backbone");
    }
    let x = random_tensor::<f64>(&mut r, &[2, cfg.lookback, cfg.channels], 1.0);
    let y = random_tensor::<f64>(&mut r, &[2, cfg.horizon, cfg.channels], 1.0);
    let mut tape = Tape::with_params(&model.store);
    let out = model.forward(&mut tape, &x).map_err(|e| e.to_string())?;
    let yv = tape.constant(y);
    let pairs = model.guidance_pairs(&mut tape, &out).map_err(|e| e.to_string())?;
    let inp = LossInputs {
        teacher_pred: out.teacher.pred,
        student_pred: out.student.pred,
        target: yv,
        guidance: &pairs,
        mase_scale: None,
    };
    let sched = loss_schedule_for_task(Task::LongTermOther);
    let (loss, _) = total_loss(&mut tape, inp, &LossWeights::default(), &sched, true).map_err(|e| e.to_string())?;
    let g = tape.backward(loss).map_err(|e| e.to_string())?;
    let mut frozen = 0;
    for (id, p) in model.store.iter() {
        if !p.trainable {
            frozen += 1;
            ensure!(
                g.param(id).is_none_or(|t| t.data().iter().all(|&v| v == 0.0)),
                "{} received a gradient",
                p.name
            );
        }
    }
    Ok(format!("20 inputs bitwise identical; {frozen} frozen tensors with zero gradient"))
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Verdict {
    let mut r = rng(77);
    let mut checked = 0;
    for _ in 0..20 {
        let len = r.random_range(1..=8);
        let mut hs: Vec<usize> = (0..len).map(|_| r.random_range(1..=1000)).collect();
        hs.sort_unstable();
        hs.dedup();
        let pairs: Vec<(usize, usize)> = hs.iter().map(|&h| (h, r.random_range(1..=256))).collect();
        let s = CapacitySchedule::new(pairs.clone()).map_err(|e| e.to_string())?;
        for _ in 0..1000 {
            let t = r.random_range(0..=1500);
            // Nearest horizon, ties to the smaller one.
            let mut best = (usize::MAX, 0, 0);
            for &(h, c) in &pairs {
                let d = h.abs_diff(t);
                if d < best.0 || (d == best.0 && h < best.1) {
                    best = (d, h, c);
                }
            }
            ensure!(select_capacity(t, &s) == best.2, "T={t} schedule {pairs:?}");
            checked += 1;
        }
    }
    Ok(format!("{checked} horizon lookups agree"))
}

// ---------------------------------------------------------------- 10

fn criterion_10() -> Verdict {
    let ett = |name: &str, rows: usize, c: usize| {
        let v = (0..rows * c).map(|i| ((i * 37) % 101) as f64 * 0.1 + (i % c) as f64).collect();
        make_splits(SeriesDataset::new(name, v, c).unwrap(), &SplitSpec::Auto)
    };
    let h1 = ett("ETTh1", 17420, 7).map_err(|e| e.to_string())?;
    let sizes = h1.splits().map_err(|e| e.to_string())?.sizes();
    ensure!(sizes == (8209, 2785, 2785), "splits {sizes:?}");
    let fs = fewshot_take(&h1, 0.10, false).map_err(|e| e.to_string())?;
    let rows = fs.splits().map_err(|e| e.to_string())?.train.len();
    ensure!(rows == 820, "few-shot keeps {rows} rows");
    let other = ett("other", 600, 3).map_err(|e| e.to_string())?;
    ensure!(
        matches!(zeroshot_pair(h1, other), Err(Error::Refused(_))),
        "zero-shot accepted a 7 -> 3 channel pair"
    );
    Ok("splits (8209, 2785, 2785); few-shot 820 rows; 7 -> 3 channel zero-shot refused".into())
}

// ---------------------------------------------------------------- 11

fn criterion_11() -> Verdict {
    let mut r = rng(11);
    let mut worst = 0.0f64;
    let row_major = |m: &DMatrix<f64>| m.transpose().as_slice().to_vec();
    for _ in 0..100 {
        let n = r.random_range(3..12);
        let (p, q) = (r.random_range(1..6), r.random_range(1..6));
        let x = DMatrix::from_fn(n, p, |_, _| r.random_range(-1.0..1.0));
        let y = DMatrix::from_fn(n, q, |_, _| r.random_range(-1.0..1.0));
        let rot = DMatrix::from_fn(p, p, |_, _| r.random_range(-1.0..1.0)).qr().q();
        let (xs, ys) = (row_major(&x), row_major(&y));
        let k = |a: &[f64], b: &[f64]| cka(a, b, n).unwrap();
        let xy = k(&xs, &ys);
        let scaled: Vec<f64> = xs.iter().map(|v| v * 2.5).collect();
        for err in [
            (k(&xs, &xs) - 1.0).abs(),
            (k(&ys, &xs) - xy).abs(),
            (k(&row_major(&(&x * rot)), &ys) - xy).abs(),
            (k(&scaled, &ys) - xy).abs(),
        ] {
            worst = worst.max(err);
        }
    }
    ensure!(worst <= 1e-9, "max deviation {worst:e}");
    Ok(format!("100 matrices, max deviation {worst:.1e}"))
}

// ---------------------------------------------------------------- desk runs

struct DeskRun {
    dir: PathBuf,
    took: Duration,
    worst_decomposition: f64,
    batches: usize,
    history: Vec<tllm_core::distill::EpochRecord>,
    test: Vec<SeriesWindow>,
}

fn desk_run(cfg: &RunConfig) -> Result<DeskRun, String> {
    let start = Instant::now();
    let weights = cfg.loss.weights;
    let (mut worst, mut batches) = (0.0f64, 0usize);
    let summary = pipeline::train_run_observed::<f32>(cfg, false, &mut |_, r| {
        worst = worst.max(r.decomposition_error(&weights));
        batches += 1;
    })
    .map_err(|e| e.to_string())?;
    let took = start.elapsed();
    let test = windows(&summary.dataset, Split::Test, cfg.model.lookback, cfg.model.horizon, cfg.data.stride)
        .map_err(|e| e.to_string())?;
    Ok(DeskRun { dir: cfg.output_dir.clone(), took, worst_decomposition: worst, batches, history: summary.history, test })
}

/// Teacher, student and repeat-last test MSE in normalized units.
fn desk_scores(run: &DeskRun) -> Result<(f64, f64, f64), String> {
    let (model, _) = pipeline::load_finished::<f32>(&run.dir.join(pipeline::CHECKPOINT)).map_err(|e| e.to_string())?;
    let c = model.config.channels;
    let (mut t, mut s, mut n) = (0.0, 0.0, 0.0);
    let refs: Vec<&SeriesWindow> = run.test.iter().collect();
    for chunk in refs.chunks(256) {
        let (x, y) = batch_tensors::<f32>(chunk, c).map_err(|e| e.to_string())?;
        let pt = model.predict_teacher(&x).map_err(|e| e.to_string())?;
        let ps = model.predict_student(&x).map_err(|e| e.to_string())?;
        let y = y.to_f64_vec();
        let sq = |p: &[f64]| p.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        t += sq(&pt.to_f64_vec());
        s += sq(&ps.to_f64_vec());
        let mut naive = Vec::with_capacity(y.len());
        for w in chunk {
            let last = &w.input[w.input.len() - c..];
            for _ in 0..model.config.horizon {
                naive.extend_from_slice(last);
            }
        }
        n += sq(&naive);
    }
    let cells = (run.test.len() * model.config.horizon * c) as f64;
    Ok((t / cells, s / cells, n / cells))
}

struct Desk {
    root: tempfile::TempDir,
    main: OnceCell<Result<DeskRun, String>>,
}

impl Desk {
    fn config(&self, sub: &str) -> RunConfig {
        let mut cfg = desk_config();
        cfg.output_dir = self.root.path().join(sub);
        cfg
    }

    fn main(&self) -> Result<&DeskRun, String> {
        self.main.get_or_init(|| desk_run(&self.config("run"))).as_ref().map_err(Clone::clone)
    }
}

fn criterion_6(desk: &Desk) -> Verdict {
    let run = desk.main()?;
    let w = LossWeights::default();
    let cfg = desk.config("run");
    ensure!(cfg.loss.weights == w, "desk run does not use the default weights");
    ensure!(run.batches > 0, "no batches observed");
    ensure!(run.worst_decomposition <= 1e-6, "decomposition error {:e}", run.worst_decomposition);
    Ok(format!(
        "{} batches at weights ({}, {}, {}), max |total - sum| {:.1e}",
        run.batches, w.lambda1, w.lambda2, w.lambda3, run.worst_decomposition
    ))
}

fn criterion_8(desk: &Desk) -> Verdict {
    let run = desk.main()?;
    let (teacher, student, naive) = desk_scores(run)?;
    let first = run.history.first().map(|r| r.l_imit).unwrap_or(f64::NAN);
    let last = run.history.last().map(|r| r.l_imit).unwrap_or(f64::NAN);
    let detail = format!(
        "{} epochs in {:.1?}: teacher {teacher:.4}, student {student:.4}, naive {naive:.4}; l_imit {first:.4} -> {last:.4}",
        run.history.len(),
        run.took
    );
    ensure!(run.history.len() <= 50, "{detail}: too many epochs");
    ensure!(run.took < Duration::from_secs(600), "{detail}: over 10 minutes");
    ensure!(teacher <= 0.1 * naive, "(a) {detail}");
    ensure!(last < first, "(b) {detail}");
    ensure!(student <= 1.2 * teacher, "(c) {detail}");
    ensure!(student < naive, "(d) {detail}");
    Ok(detail)
}

fn criterion_9(desk: &Desk) -> Verdict {
    let (_, full, _) = desk_scores(desk.main()?)?;
    let mut no_imit = desk.config("no_imit_guide");
    no_imit.loss.weights.lambda1 = 0.0;
    no_imit.loss.weights.lambda2 = 0.0;
    let (_, without_distill, _) = desk_scores(&desk_run(&no_imit)?)?;
    let mut no_stud = desk.config("no_stud");
    no_stud.loss.weights.lambda3 = 0.0;
    let (_, without_stud, _) = desk_scores(&desk_run(&no_stud)?)?;
    let detail = format!(
        "student test MSE: full {full:.6}, without imitation+guidance {without_distill:.6}, without supervision {without_stud:.6}"
    );
    ensure!(without_distill > full, "(a) {detail}");
    ensure!(without_stud > full, "(b) {detail}");
    Ok(detail)
}

fn criterion_12(desk: &Desk) -> Verdict {
    let first = desk.main()?;
    // The run directory is part of the stored config, so the repeat
    // reuses the path after moving the first run aside.
    let moved = desk.root.path().join("run_first");
    std::fs::rename(&first.dir, &moved).map_err(|e| e.to_string())?;
    let second = desk_run(&desk.config("run"));
    let restore = std::fs::rename(&first.dir, desk.root.path().join("run_second"))
        .and_then(|_| std::fs::rename(&moved, &first.dir));
    let second = second?;
    restore.map_err(|e| e.to_string())?;
    let read = |p: PathBuf| std::fs::read(&p).map_err(|e| format!("{}: {e}", p.display()));
    let again = desk.root.path().join("run_second");
    for f in [pipeline::HISTORY, pipeline::CHECKPOINT] {
        let a = read(first.dir.join(f))?;
        let b = read(again.join(f))?;
        ensure!(a == b, "{f} differs between runs");
    }
    Ok(format!("history and checkpoint byte-identical across two {}-epoch runs", second.history.len()))
}

// ---------------------------------------------------------------- driver

fn main() {
    let desk = Desk {
        root: tempfile::tempdir().expect("temporary directory"),
        main: OnceCell::new(),
    };
    let criteria: Vec<(&str, Box<dyn Fn() -> Verdict + '_>)> = vec![
        ("gradient suite", Box::new(criterion_1)),
        ("spectral oracle", Box::new(criterion_2)),
        ("metric oracle", Box::new(criterion_3)),
        ("teacher-removal equivalence", Box::new(criterion_4)),
        ("LoRA zero-init equivalence", Box::new(criterion_5)),
        ("loss decomposition", Box::new(|| criterion_6(&desk))),
        ("capacity schedule", Box::new(criterion_7)),
        ("desk distillation run", Box::new(|| criterion_8(&desk))),
        ("ablation direction", Box::new(|| criterion_9(&desk))),
        ("protocol plumbing", Box::new(criterion_10)),
        ("CKA suite", Box::new(criterion_11)),
        ("determinism", Box::new(|| criterion_12(&desk))),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let verdict = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(v) => v,
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        match verdict {
            Ok(d) => println!("criterion {:>2} PASS  {name}: {d}", i + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {d}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
