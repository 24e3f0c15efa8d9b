//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use softts::{load_plan, Pipeline};
use softts_core::losses::{
    batch_loss, cross_entropy, entropy, kl_divergence, method_loss, smooth_targets,
    softened_target, Target,
};
use softts_core::reporting::ranks::{fractional_ranks, rank_report};
use softts_core::reporting::{aggregate_table, AccuracyMatrix};
use softts_core::representation::load_representations;
use softts_core::results::RunStatus;
use softts_core::softlabel::{
    average_class_distance, build_soft_labels, validate_criteria, SoftLabelConfig,
};
use softts_core::synthetic::{separable_toy, write_archive};
use softts_core::{ExperimentResult, MethodConfig, RepresentationMatrix};
use softts_nn::{run_experiment, ModelSpec, TrainConfig};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

struct Instance {
    reps: RepresentationMatrix,
    labels: Vec<usize>,
    classes: usize,
}

/// Random representations with every class populated.
fn instance(rng: &mut ChaCha8Rng, classes: usize) -> Instance {
    let n = rng.random_range(classes..=100);
    let d = rng.random_range(1..=16);
    let values = Array2::from_shape_fn((n, d), |_| rng.random_range(-5.0..5.0));
    let mut labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
    for (c, label) in labels.iter_mut().take(classes).enumerate() {
        *label = c;
    }
    Instance {
        reps: RepresentationMatrix::new(values, "random").unwrap(),
        labels,
        classes,
    }
}

fn naive_distance(inst: &Instance, m: usize, class: usize) -> f64 {
    let (mut sum, mut count) = (0.0, 0);
    for j in 0..inst.labels.len() {
        if inst.labels[j] == class {
            let mut sq = 0.0;
            for k in 0..inst.reps.dim() {
                let diff = inst.reps.reps[(m, k)] - inst.reps.reps[(j, k)];
                sq += diff * diff;
            }
            sum += sq.sqrt();
            count += 1;
        }
    }
    sum / count as f64
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = SoftLabelConfig::default();
    let mut rows = 0;
    for case in 0..200 {
        let l = rng.random_range(3..=6);
        let inst = instance(&mut rng, l);
        let soft = build_soft_labels(&inst.reps, &inst.labels, l, &cfg).map_err(|e| e.to_string())?;
        for (m, p) in soft.probs.outer_iter().enumerate() {
            let own = inst.labels[m];
            let sum: f64 = p.sum();
            check((sum - 1.0).abs() <= 1e-9, format!("case {case} row {m} sums to {sum}"))?;
            check(
                (0..l).all(|c| c == own || p[own] > p[c]),
                format!("case {case} row {m}: true class is not the argmax"),
            )?;
            let r: Vec<f64> = (0..l).map(|c| naive_distance(&inst, m, c)).collect();
            for i in (0..l).filter(|&i| i != own) {
                for j in (0..l).filter(|&j| j != own) {
                    check(
                        !(r[i] < r[j]) || p[i] > p[j],
                        format!("case {case} row {m}: class {i} is closer than {j} but not more likely"),
                    )?;
                }
            }
            rows += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 10.0, format!("took {secs:.1}s"))?;
    Ok(format!("200 instances, {rows} rows, {secs:.2}s"))
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = SoftLabelConfig::default();
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let l = rng.random_range(3..=6);
        let inst = instance(&mut rng, l);
        let table = average_class_distance(&inst.reps, &inst.labels, inst.classes, &cfg)
            .map_err(|e| e.to_string())?;
        for m in 0..inst.labels.len() {
            for c in 0..l {
                match table.get(m, c) {
                    None => check(c == inst.labels[m], format!("row {m} class {c} missing"))?,
                    Some(v) => {
                        let oracle = naive_distance(&inst, m, c).max(cfg.distance_floor);
                        worst = worst.max((v - oracle).abs());
                    }
                }
            }
        }
    }
    check(worst <= 1e-9, format!("max deviation {worst:e}"))?;
    Ok(format!("200 instances, max deviation {worst:.1e}"))
}

fn random_distribution(rng: &mut ChaCha8Rng, l: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..l).map(|_| rng.random_range(1e-3..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut kl_worst, mut ls_worst): (f64, f64) = (0.0, 0.0);
    for _ in 0..1000 {
        let l = rng.random_range(2..=10);
        let p = random_distribution(&mut rng, l);
        let u = vec![1.0 / l as f64; l];
        kl_worst = kl_worst.max((kl_divergence(&p, &u) - ((l as f64).ln() - entropy(&p))).abs());

        let z: Vec<f64> = (0..l).map(|_| rng.random_range(-4.0..4.0)).collect();
        let y = rng.random_range(0..l);
        let eps = rng.random_range(0.0..0.99);
        let ce = |t: Target<'_>| cross_entropy(&z, t).unwrap().value.total;
        let smoothed = ce(Target::Probs(&smooth_targets(y, l, eps)));
        let mixed = (1.0 - eps) * ce(Target::Class(y)) + eps * ce(Target::Probs(&u));
        ls_worst = ls_worst.max((smoothed - mixed).abs());
    }
    check(kl_worst <= 1e-8, format!("KL identity off by {kl_worst:e}"))?;
    check(ls_worst <= 1e-8, format!("LS identity off by {ls_worst:e}"))?;

    let h = 1e-5;
    let mut grad_worst: f64 = 0.0;
    let configs = [
        MethodConfig::baseline(),
        MethodConfig::label_smoothing(0.1),
        MethodConfig::confidence_penalty(0.1),
        MethodConfig::soft_label(0.5, 2.0),
    ];
    for _ in 0..300 {
        let l = rng.random_range(2..=10);
        let z: Vec<f64> = (0..l).map(|_| rng.random_range(-4.0..4.0)).collect();
        let a: Vec<f64> = (0..l).map(|_| rng.random_range(0.0..2.0)).collect();
        let y = rng.random_range(0..l);
        for cfg in &configs {
            let f = |v: &[f64]| method_loss(v, y, cfg, Some(&a)).unwrap().value.total;
            let analytic = method_loss(&z, y, cfg, Some(&a)).unwrap().grad;
            for k in 0..l {
                let (mut up, mut down) = (z.clone(), z.clone());
                up[k] += h;
                down[k] -= h;
                let numeric = (f(&up) - f(&down)) / (2.0 * h);
                let rel = (analytic[k] - numeric).abs() / analytic[k].abs().max(numeric.abs()).max(1e-3);
                grad_worst = grad_worst.max(rel);
            }
        }
    }
    check(grad_worst < 1e-4, format!("gradient relative error {grad_worst:e}"))?;
    Ok(format!(
        "KL {kl_worst:.1e}, LS {ls_worst:.1e} over 1000 draws; worst gradient rel. error {grad_worst:.1e} over 4 losses"
    ))
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut rows = 0;
    for case in 0..50 {
        let inst = instance(&mut rng, 2);
        let soft = build_soft_labels(&inst.reps, &inst.labels, 2, &SoftLabelConfig::default())
            .map_err(|e| e.to_string())?;
        for p in soft.probs.outer_iter() {
            check(
                (p[0] - 0.5).abs() <= 1e-12 && (p[1] - 0.5).abs() <= 1e-12,
                format!("case {case}: row {p} is not [0.5, 0.5]"),
            )?;
        }
        let report = validate_criteria(&soft, &inst.labels);
        check(
            report.non_strict_argmax.len() == inst.labels.len(),
            format!("case {case}: {} of {} rows flagged", report.non_strict_argmax.len(), inst.labels.len()),
        )?;
        rows += inst.labels.len();
    }
    Ok(format!("50 binary instances, all {rows} rows flat and flagged"))
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut loss_worst, mut target_worst): (f64, f64) = (0.0, 0.0);
    for _ in 0..200 {
        let l = rng.random_range(2..=10);
        let b = rng.random_range(1..=16);
        let logits: Vec<f64> = (0..b * l).map(|_| rng.random_range(-4.0..4.0)).collect();
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..l)).collect();
        let conf: Vec<Vec<f64>> = (0..b)
            .map(|_| (0..l).map(|_| rng.random_range(0.0..3.0)).collect())
            .collect();
        let ss = MethodConfig::soft_label(1e-12, 2.0);
        let (v_ss, _) = batch_loss(&logits, l, &labels, &ss, |i| Some(conf[i].as_slice()))
            .map_err(|e| e.to_string())?;
        let (v_base, _) = batch_loss(&logits, l, &labels, &MethodConfig::baseline(), |_| None)
            .map_err(|e| e.to_string())?;
        loss_worst = loss_worst.max((v_ss.total - v_base.total).abs());
        for a in &conf {
            let t = softened_target(a, 1e6);
            target_worst = target_worst.max(t.iter().map(|p| (p - 1.0 / l as f64).abs()).fold(0.0, f64::max));
        }
    }
    check(loss_worst <= 1e-8, format!("ss vs baseline off by {loss_worst:e}"))?;
    check(target_worst <= 1e-6, format!("target off uniform by {target_worst:e}"))?;
    Ok(format!("loss gap {loss_worst:.1e}, uniform gap {target_worst:.1e}"))
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let (train, test) = separable_toy(40, 40, 16, 11);
    let spec = ModelSpec::inception(1, 2, 16, 0);
    let cfg = TrainConfig {
        epochs: 200,
        ..TrainConfig::default()
    };
    let run = run_experiment(&train, &test, &spec, &MethodConfig::baseline(), &cfg, None)
        .map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let acc = run.result.best_accuracy;
    check(acc == 1.0, format!("best accuracy {acc}"))?;
    check(secs < 120.0, format!("took {secs:.1}s"))?;
    Ok(format!("best accuracy {acc:.4} in {secs:.1}s"))
}

/// The desk-scale matrix shared by criteria 7, 8 and 10.
struct DeskRun {
    pipeline: Pipeline,
    records: Vec<ExperimentResult>,
    secs: f64,
}

fn desk_run(root: &Path) -> Result<DeskRun, String> {
    let start = Instant::now();
    let archive = root.join("archive");
    write_archive(&archive, 0).map_err(|e| e.to_string())?;
    let mut plan = load_plan("desk-scale").map_err(|e| format!("{e:#}"))?;
    plan.data.archive_root = archive;
    plan.output_dir = root.join("run");
    let pipeline = Pipeline::new(plan, false).map_err(|e| format!("{e:#}"))?;
    pipeline.encode().map_err(|e| format!("{e:#}"))?;
    pipeline.labels().map_err(|e| format!("{e:#}"))?;
    let summary = pipeline.train(1).map_err(|e| format!("{e:#}"))?;
    check(summary.failed.is_empty(), format!("failed cells: {:?}", summary.failed))?;
    pipeline.report().map_err(|e| format!("{e:#}"))?;
    let records = pipeline.plan_records().map_err(|e| format!("{e:#}"))?;
    Ok(DeskRun {
        pipeline,
        records,
        secs: start.elapsed().as_secs_f64(),
    })
}

fn method_means(records: &[ExperimentResult]) -> BTreeMap<String, f64> {
    let table = aggregate_table(records, None).unwrap();
    table
        .cells
        .iter()
        .map(|((_, method), cell)| (method.clone(), cell.mean_accuracy))
        .collect()
}

fn criterion_7(run: &Result<DeskRun, String>) -> Outcome {
    let run = run.as_ref().map_err(Clone::clone)?;
    let plan = &run.pipeline.plan;
    check(run.pipeline.datasets.len() >= 5, "fewer than 5 datasets")?;
    check(
        plan.models.iter().all(|m| m.preset == softts::ModelPreset::Inception(1)),
        "model is not inceptiontime-1",
    )?;
    check(plan.train.epochs == 200 && plan.train.seeds.len() == 3, "not 200 epochs x 3 seeds")?;
    let arms: Vec<&ExperimentResult> = run
        .records
        .iter()
        .filter(|r| r.method == "baseline" || r.method == "ss")
        .collect();
    let expected = run.pipeline.datasets.len() * 2 * 3;
    check(arms.len() == expected, format!("{} of {expected} records", arms.len()))?;
    check(
        arms.iter().all(|r| r.status == RunStatus::Ok),
        "a cell diverged",
    )?;
    let pair: Vec<ExperimentResult> = arms.into_iter().cloned().collect();
    let means = method_means(&pair);
    let (base, ss) = (means["baseline"], means["ss"]);
    let matrix = softts_core::reporting::accuracy_matrix(&run.records, "inceptiontime-1")
        .map_err(|e| e.to_string())?;
    let ranks = rank_report(&matrix, plan.report.alpha).map_err(|e| e.to_string())?;
    let ranking: Vec<String> = ranks
        .ranking()
        .iter()
        .map(|(m, r)| format!("{m} {r:.2}"))
        .collect();
    let direction = if ss >= base - 0.01 { "met" } else { "not met" };
    Ok(format!(
        "{} datasets x 3 seeds: baseline {base:.4}, ss {ss:.4} (direction ss >= baseline - 0.01 {direction}; reference 0.6604 vs 0.7318); average ranks [{}]; {:.0}s",
        run.pipeline.datasets.len(),
        ranking.join(", "),
        run.secs
    ))
}

fn criterion_8(run: &Result<DeskRun, String>) -> Outcome {
    let run = run.as_ref().map_err(Clone::clone)?;
    let arm = run
        .pipeline
        .plan
        .methods
        .iter()
        .find(|m| m.encoder.as_ref().is_some_and(|e| e.kind == softts_core::EncoderKind::Identity))
        .ok_or("no identity-encoder arm in the plan")?;
    let expected = run.pipeline.datasets.len() * 3;
    let records: Vec<&ExperimentResult> = run.records.iter().filter(|r| r.method == arm.label).collect();
    check(records.len() == expected, format!("{} of {expected} identity records", records.len()))?;
    check(
        records.iter().all(|r| r.encoder.as_deref() == Some("identity") && r.status == RunStatus::Ok),
        "identity records are incomplete",
    )?;
    // the identity representations are the raw training series
    for d in &run.pipeline.datasets {
        let path = run
            .pipeline
            .layout
            .representations(d, arm.encoder.as_ref().unwrap());
        let reps = load_representations(&path).map_err(|e| e.to_string())?;
        let splits = run.pipeline.splits(d).map_err(|e| e.to_string())?;
        check(reps.reps == splits.0.samples, format!("{d}: identity reps differ from the series"))?;
    }
    let means = method_means(&run.records);
    Ok(format!(
        "{} records for {}; mean {:.4} (baseline {:.4}, ss {:.4})",
        records.len(),
        arm.label,
        means[&arm.label],
        means["baseline"],
        means["ss"]
    ))
}

fn brute_force_ranks(scores: &[f64]) -> Vec<f64> {
    fn permute(p: &mut Vec<usize>, at: usize, visit: &mut dyn FnMut(&[usize])) {
        if at == p.len() {
            visit(p);
            return;
        }
        for i in at..p.len() {
            p.swap(at, i);
            permute(p, at + 1, visit);
            p.swap(at, i);
        }
    }
    let k = scores.len();
    let mut totals = vec![0.0; k];
    let mut valid = 0usize;
    let mut perm: Vec<usize> = (0..k).collect();
    permute(&mut perm, 0, &mut |p| {
        if p.windows(2).all(|w| scores[w[0]] >= scores[w[1]]) {
            valid += 1;
            for (pos, &i) in p.iter().enumerate() {
                totals[i] += (pos + 1) as f64;
            }
        }
    });
    totals.into_iter().map(|t| t / valid as f64).collect()
}

fn record(dataset: &str, method: &str, seed: u64, acc: f64) -> ExperimentResult {
    ExperimentResult {
        dataset: dataset.into(),
        model: "resnet18".into(),
        depth: None,
        method: method.into(),
        seed,
        gamma: 0.0,
        beta: 0.0,
        tau: 1.0,
        epsilon: 0.0,
        best_accuracy: acc,
        eval_points: vec![],
        wall_time: 0.0,
        encoder: None,
        status: RunStatus::Ok,
        message: None,
    }
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let grid = [0.5, 0.6, 0.7, 0.8, 0.9];
    for case in 0..100 {
        let n = rng.random_range(1..=8);
        let k = rng.random_range(2..=6);
        let values = Array2::from_shape_fn((n, k), |_| grid[rng.random_range(0..grid.len())]);
        for row in values.outer_iter() {
            let scores = row.to_vec();
            let got = fractional_ranks(&scores);
            let want = brute_force_ranks(&scores);
            check(
                got.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-12),
                format!("case {case}: {got:?} vs {want:?} for {scores:?}"),
            )?;
        }
    }

    let tie = AccuracyMatrix {
        model: "net".into(),
        datasets: (0..5).map(|i| format!("D{i}")).collect(),
        methods: ["baseline", "ss", "ls", "cp"].map(String::from).to_vec(),
        values: Array2::from_elem((5, 4), 0.75),
    };
    let report = rank_report(&tie, 0.05).map_err(|e| e.to_string())?;
    check(
        report.cliques.len() == 1 && report.cliques[0].len() == 4,
        format!("full tie gave cliques {:?}", report.cliques),
    )?;

    let recs = vec![
        record("A", "baseline", 0, 0.80),
        record("A", "baseline", 1, 0.90),
        record("B", "baseline", 0, 0.50),
        record("B", "baseline", 1, 0.70),
        record("A", "ss", 0, 1.0),
        record("A", "ss", 1, 1.0),
        record("B", "ss", 0, 0.25),
        record("B", "ss", 1, 0.75),
    ];
    let table = aggregate_table(&recs, None).map_err(|e| e.to_string())?;
    let base = table.get("resnet18", "baseline").unwrap().mean_accuracy;
    let ss = table.get("resnet18", "ss").unwrap().mean_accuracy;
    check(base == ((0.80 + 0.90) / 2.0 + (0.50 + 0.70) / 2.0) / 2.0, format!("baseline mean {base}"))?;
    check(ss == 0.75, format!("ss mean {ss}"))?;
    Ok("100 random matrices match enumeration; full tie is one clique; table means exact".into())
}

fn criterion_10(run: &Result<DeskRun, String>, root: &Path) -> Outcome {
    let run = run.as_ref().map_err(Clone::clone)?;
    let mut plan = run.pipeline.plan.clone();
    let first = run.pipeline.datasets[0].clone();
    plan.data.datasets = softts::plan::DatasetSelection::Named(vec![first.clone()]);
    plan.train.seeds = vec![plan.train.seeds[0]];
    plan.output_dir = root.join("rerun");
    let rerun = Pipeline::new(plan, false).map_err(|e| format!("{e:#}"))?;
    let summary = rerun.train(1).map_err(|e| format!("{e:#}"))?;
    check(summary.failed.is_empty(), format!("failed cells: {:?}", summary.failed))?;
    let again = rerun.plan_records().map_err(|e| format!("{e:#}"))?;
    for r in &again {
        let original = run
            .records
            .iter()
            .find(|o| o.key() == r.key())
            .ok_or_else(|| format!("no original record for {:?}", r.key()))?;
        check(
            original.eval_points == r.eval_points,
            format!("{}/{}: eval_points differ", r.dataset, r.method),
        )?;
    }
    let mut caches = 0;
    for entry in fs::read_dir(rerun.layout.root.join("softlabels")).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        let name = path.file_name().unwrap();
        let a = fs::read(&path).map_err(|e| e.to_string())?;
        let b = fs::read(run.pipeline.layout.root.join("softlabels").join(name)).map_err(|e| e.to_string())?;
        check(a == b, format!("{} differs", name.to_string_lossy()))?;
        caches += 1;
    }
    check(caches > 0, "no soft-label caches written")?;
    Ok(format!(
        "{} cells on {first} rerun with identical eval_points; {caches} soft-label caches byte-identical",
        again.len()
    ))
}

fn main() -> ExitCode {
    // cargo passes harness flags such as --list or a name filter; honour --list only
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    let tmp = tempfile::tempdir().expect("temporary directory");
    let mut lines: Vec<(usize, Outcome)> = vec![
        (1, criterion_1()),
        (2, criterion_2()),
        (3, criterion_3()),
        (4, criterion_4()),
        (5, criterion_5()),
        (6, criterion_6()),
    ];
    let desk = desk_run(tmp.path());
    lines.push((7, criterion_7(&desk)));
    lines.push((8, criterion_8(&desk)));
    lines.push((9, criterion_9()));
    lines.push((10, criterion_10(&desk, tmp.path())));

    let mut failed = 0;
    for (n, outcome) in &lines {
        match outcome {
            Ok(detail) => println!("criterion {n:>2}: PASS  {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {n:>2}: FAIL  {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", lines.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
