//! Acceptance criteria, one line each. Exits non-zero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use fecanet_core::crm::{local_self_similarity, self_similarity_kernel};
use fecanet_core::encoder4d::sparsified_equivalence;
use fecanet_core::fem::{cross_image_attention, FemParams};
use fecanet_core::gradcheck::{grad_check, GRAD_TOL};
use fecanet_core::init::{seeded, uniform};
use fecanet_core::io::config::RunConfig;
use fecanet_core::io::fixtures::synthetic_episodes;
use fecanet_core::ops::transpose;
use fecanet_core::oracles::{self, oracle_suite};
use fecanet_core::pipeline::{forward_episode, train};
use fecanet_core::{
    evaluate, kshot_fuse, Ablation, Adam, BinaryMask, FecaModel, KShotConfig, MemoryBank, MetricsAccumulator,
    ModelConfig, ParamSet, Tensor,
};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

type Check = fn() -> Result<Outcome, String>;

fn within(t: Duration, limit_s: u64) -> bool {
    t < Duration::from_secs(limit_s)
}

fn ac1() -> Result<Outcome, String> {
    let t = Instant::now();
    let trials = 20;
    let diff = sparsified_equivalence(1, trials).map_err(|e| e.to_string())?;
    let el = t.elapsed();
    Ok(outcome(
        diff < 1e-5 && within(el, 10),
        format!("{trials} inputs, max abs diff {diff:.2e}, {:.2} s", el.as_secs_f64()),
    ))
}

fn ac2() -> Result<Outcome, String> {
    let t = Instant::now();
    let rows = grad_check(7).map_err(|e| e.to_string())?;
    let el = t.elapsed();
    let worst = rows.iter().map(|r| r.max_rel).fold(0.0, f64::max);
    let parts: Vec<String> = rows
        .iter()
        .map(|r| format!("{} {:.1e} ({} coords)", r.module, r.max_rel, r.coords))
        .collect();
    Ok(outcome(
        rows.len() == 4 && rows.iter().all(|r| r.pass) && worst < GRAD_TOL && within(el, 60),
        format!("{}, {:.1} s", parts.join(", "), el.as_secs_f64()),
    ))
}

fn ac3() -> Result<Outcome, String> {
    let t = Instant::now();
    let reports = oracle_suite(0);
    let el = t.elapsed();
    let failed: Vec<&str> = reports.iter().filter(|r| !r.pass).map(|r| r.op.as_str()).collect();
    let tols_ok = reports.iter().all(|r| r.tolerance <= 1e-5);
    Ok(outcome(
        failed.is_empty() && tols_ok && within(el, 30),
        format!(
            "{} ops, failed {:?}, {:.2} s",
            reports.len(),
            failed,
            el.as_secs_f64()
        ),
    ))
}

fn ac4() -> Result<Outcome, String> {
    let mut rng = seeded(4);
    for i in 0..100u64 {
        let c = rng.gen_range(1..=8);
        let (h, w) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
        let mut ps = ParamSet::<f32>::new();
        let p = FemParams::new(&mut ps, "fem", c, &mut seeded(i));
        let fs: Tensor<f32> = uniform(&[c, h, w], 1.0, &mut rng);
        let fq: Tensor<f32> = uniform(&[c, h, w], 1.0, &mut rng);
        let (_, _, att) = cross_image_attention(&fs, &fq, &p, &ps).map_err(|e| e.to_string())?;
        let t = transpose(&att.aq).map_err(|e| e.to_string())?;
        if att.a_s != t {
            return Ok(outcome(false, format!("instance {i} differs")));
        }
    }
    Ok(outcome(true, "100 instances bit-exact"))
}

fn ac5() -> Result<Outcome, String> {
    let e = |e: fecanet_core::Error| e.to_string();
    // constant map: every in-bounds offset is C * v^2, every padded one 0
    let x = Tensor::<f64>::full([3, 4, 6], 2.0);
    let s = self_similarity_kernel(&x, 5).map_err(e)?;
    let constant_ok = (0..25).all(|d| {
        let (di, dj) = (d as isize / 5 - 2, d as isize % 5 - 2);
        (0..4isize).all(|i| {
            (0..6isize).all(|j| {
                let inside = (0..4).contains(&(i + di)) && (0..6).contains(&(j + dj));
                s.data()[d * 24 + (i * 6 + j) as usize] == if inside { 12.0 } else { 0.0 }
            })
        })
    });
    // 1x1 map: only the centre offset is in bounds
    let one = Tensor::<f64>::new([2, 1, 1], vec![3.0, -1.0]).map_err(e)?;
    let s1 = self_similarity_kernel(&one, 3).map_err(e)?;
    let border_ok = s1.data().iter().enumerate().all(|(d, &v)| v == if d == 4 { 10.0 } else { 0.0 });

    let mut rng = seeded(5);
    let mut worst: f64 = 0.0;
    for k in [3, 5, 7, 9] {
        let x: Tensor<f32> = uniform(&[8, 7, 9], 1.0, &mut rng);
        let got = local_self_similarity(&x, k).map_err(e)?;
        let want = oracles::self_similarity(&x.to_f64_vec(), 8, 7, 9, k);
        worst = worst.max(oracles::max_abs_diff(&got.to_f64_vec(), &want));
    }
    let ep = synthetic_episodes(1, 24, 1, 5).remove(0);
    let mut sweeps = Vec::new();
    for (k, depth) in [3, 5, 7, 9].map(|k| (k, 2)).into_iter().chain((1..=4).map(|n| (5, n))) {
        let cfg = ModelConfig {
            k,
            depth,
            ..ModelConfig::default()
        };
        let model = FecaModel::new(cfg, 0).map_err(e)?;
        let pred = forward_episode(&model, &ep, &mut MemoryBank::new()).map_err(e)?;
        sweeps.push(pred.dims() == (24, 24));
    }
    let sweep_ok = sweeps.iter().all(|&b| b);
    Ok(outcome(
        constant_ok && border_ok && worst < 1e-6 && sweep_ok,
        format!(
            "constant {constant_ok}, border {border_ok}, oracle max diff {worst:.1e}, k 3/5/7/9 and N 1..4 ran {sweep_ok}"
        ),
    ))
}

fn ac6() -> Result<Outcome, String> {
    let e = |e: fecanet_core::Error| e.to_string();
    let t = Instant::now();
    let eps = synthetic_episodes(4, 32, 1, 0);
    let mut model = FecaModel::new(ModelConfig::default(), 0).map_err(e)?;
    let mut adam = Adam::new(&model.params, 1e-3);
    let mut bank = MemoryBank::new();
    let losses = train(&mut model, &eps, 500, 4, &mut adam, &mut bank).map_err(e)?;
    let report = evaluate(&mut &model, &eps, &KShotConfig::default()).map_err(e)?;
    let el = t.elapsed();
    let loss = *losses.last().unwrap();
    Ok(outcome(
        loss < 0.05 && report.miou >= 0.95 && within(el, 300),
        format!(
            "500 steps, final loss {loss:.4}, mIoU {:.4} (FB-IoU {:.4}), {:.0} s",
            report.miou,
            report.fb_iou,
            el.as_secs_f64()
        ),
    ))
}

fn ac7() -> Result<Outcome, String> {
    let m = |d: &[u8]| BinaryMask::new(1, 4, d.to_vec()).unwrap();
    let score = |p: &[u8], g: &[u8]| -> Result<(f64, f64), String> {
        let mut acc = MetricsAccumulator::new();
        acc.add(0, &m(p), &m(g)).map_err(|e| e.to_string())?;
        Ok((acc.miou().map_err(|e| e.to_string())?, acc.fb_iou().map_err(|e| e.to_string())?))
    };
    let perfect = score(&[1, 1, 0, 0], &[1, 1, 0, 0])?;
    let disjoint = score(&[1, 1, 0, 0], &[0, 0, 1, 1])?;
    let half = score(&[1, 1, 0, 0], &[1, 1, 1, 1])?;
    Ok(outcome(
        perfect == (1.0, 1.0) && disjoint == (0.0, 0.0) && half.0 == 0.5,
        format!("perfect {perfect:?}, disjoint {disjoint:?}, TP=2 FN=2 FP=0 mIoU {}", half.0),
    ))
}

fn ac8() -> Result<Outcome, String> {
    let defaults = KShotConfig::default().tau == 0.5 && RunConfig::default().tau == 0.5;
    let mut rng = seeded(8);
    for trial in 0..100 {
        let k = rng.gen_range(2..=5);
        let (h, w) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
        let maps: Vec<Tensor<f32>> = (0..k)
            .map(|_| Tensor::from_fn([h, w], |_| rng.gen::<f32>()))
            .collect();
        let cfg = KShotConfig::new(k, 0.5).map_err(|e| e.to_string())?;
        let base = kshot_fuse(&maps, &cfg).map_err(|e| e.to_string())?;
        let mut shuffled = maps.clone();
        shuffled.rotate_left(rng.gen_range(1..k));
        shuffled.swap(0, k - 1);
        let permuted = kshot_fuse(&shuffled, &cfg).map_err(|e| e.to_string())?;
        let single = kshot_fuse(&maps[..1], &cfg).map_err(|e| e.to_string())?;
        let dup = kshot_fuse(&vec![maps[0].clone(); k], &cfg).map_err(|e| e.to_string())?;
        if base != permuted || single != dup {
            return Ok(outcome(false, format!("trial {trial} broke invariance")));
        }
    }
    Ok(outcome(defaults, format!("100 trials invariant, default tau 0.5: {defaults}")))
}

fn ac9() -> Result<Outcome, String> {
    let eps = synthetic_episodes(2, 32, 1, 9);
    let mut failures = Vec::new();
    for ab in Ablation::lattice() {
        let cfg = ModelConfig {
            ablation: ab,
            ..ModelConfig::default()
        };
        let run = || -> fecanet_core::Result<()> {
            let mut model = FecaModel::new(cfg, 9)?;
            let mut adam = Adam::new(&model.params, 1e-3);
            let mut bank = MemoryBank::new();
            train(&mut model, &eps, 3, 2, &mut adam, &mut bank)?;
            evaluate(&mut &model, &eps, &KShotConfig::default())?;
            Ok(())
        };
        if let Err(e) = run() {
            failures.push(format!("{ab:?}: {e}"));
        }
    }
    Ok(outcome(failures.is_empty(), format!("16 configurations, failures {failures:?}")))
}

fn cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_fecanet"))
        .args(args)
        .current_dir(dir)
        .env_remove("FECANET_SEED")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(())
}

fn full_run(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    cli(dir, &["export-fixtures", "--out", "fx", "--count", "4", "--seed", "10"])?;
    cli(dir, &["train", "--manifest", "fx/manifest.json", "--checkpoint", "ck.bin", "--steps", "10", "--seed", "10"])?;
    cli(dir, &["eval", "--manifest", "fx/manifest.json", "--checkpoint", "ck.bin", "--out", "metrics.json"])?;
    cli(
        dir,
        &["run-episode", "--manifest", "fx/manifest.json", "--checkpoint", "ck.bin", "--mask-out", "mask.pgm", "--probs-out", "probs.feca"],
    )?;
    ["ck.bin", "ck.bin.loss.csv", "metrics.json", "mask.pgm", "probs.feca"]
        .iter()
        .map(|f| Ok((f.to_string(), std::fs::read(dir.join(f)).map_err(|e| e.to_string())?)))
        .collect()
}

fn ac10() -> Result<Outcome, String> {
    let (a, b) = (
        tempfile::tempdir().map_err(|e| e.to_string())?,
        tempfile::tempdir().map_err(|e| e.to_string())?,
    );
    let (ra, rb) = (full_run(a.path())?, full_run(b.path())?);
    let differing: Vec<&str> = ra
        .iter()
        .zip(&rb)
        .filter(|(x, y)| x.1 != y.1)
        .map(|(x, _)| x.0.as_str())
        .collect();
    Ok(outcome(
        differing.is_empty(),
        format!("{} artifacts compared, differing {differing:?}", ra.len()),
    ))
}

const CRITERIA: [(&str, &str, Check); 10] = [
    ("AC1", "center-pivot equivalence", ac1),
    ("AC2", "gradient integrity", ac2),
    ("AC3", "oracle suite", ac3),
    ("AC4", "attention transpose", ac4),
    ("AC5", "self-similarity contract", ac5),
    ("AC6", "overfit", ac6),
    ("AC7", "metrics ground truth", ac7),
    ("AC8", "k-shot behavior", ac8),
    ("AC9", "ablation lattice", ac9),
    ("AC10", "determinism", ac10),
];

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (id, name, check) in CRITERIA {
        if !filter.is_empty() && !filter.iter().any(|f| f == id) {
            continue;
        }
        let (pass, detail) = match check() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!pass);
        println!("{id:<5} {:<26} {}  {detail}", name, if pass { "PASS" } else { "FAIL" });
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
