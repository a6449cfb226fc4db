//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any hard criterion fails. Trend checks only warn.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng;

use common::{oracle_assign, oracle_nms, random_detections, random_scene, rng};
use srf_tad::autodiff::Tensor;
use srf_tad::data::{generate_dataset, load_dataset, write_dataset, SyntheticDataset};
use srf_tad::decode_eval::{
    decode, mean_average_precision, nms, CenternessMode, DecodeParams, Detection, VideoResult,
};
use srf_tad::gradient_suite::run_gradient_suite;
use srf_tad::head::HeadOutputs;
use srf_tad::loss::tiou_loss;
use srf_tad::model::{Model, ModelConfig};
use srf_tad::srfc::{Srfc, SrfcConfig, SrfcVariant};
use srf_tad::targets::{assign_targets, centerness_target, ActionInstance};
use srf_tad::trainer::{
    ablation_run, configure_threads, evaluate, train_and_evaluate, Checkpoint, ExperimentConfig,
};

const GRADIENT_BUDGET: Duration = Duration::from_secs(60);
const TRAINING_BUDGET: Duration = Duration::from_secs(30 * 60);
const MAP_TARGET: f64 = 0.75;

#[derive(Default)]
struct Tally {
    failed: Vec<usize>,
}

impl Tally {
    fn record(&mut self, id: usize, ok: bool, detail: String) {
        let status = if ok { "PASS" } else { "FAIL" };
        println!("[{status}] criterion {id}: {detail}");
        if !ok {
            self.failed.push(id);
        }
    }
}

fn gradient_suite(t: &mut Tally) {
    let seeds: Vec<u64> = (0..10).collect();
    let start = Instant::now();
    let reports = run_gradient_suite(&seeds).expect("gradient suite runs");
    let elapsed = start.elapsed();
    for r in &reports {
        println!(
            "    {:<24} max rel err {:.2e} (tol {:.0e}) {}",
            r.op,
            r.max_rel_error,
            r.tolerance,
            if r.passed() { "ok" } else { "FAILED" }
        );
    }
    let required = [
        "conv1d_dilation_1",
        "conv1d_dilation_3",
        "conv1d_dilation_5",
        "relu",
        "sigmoid",
        "channel_pool",
        "temporal_maxpool_2_2",
        "softmax_channels",
        "focal_loss",
        "tiou_loss",
        "bce_with_logits",
        "full_model",
    ];
    let missing: Vec<&str> = required
        .iter()
        .filter(|op| !reports.iter().any(|r| r.op == **op))
        .copied()
        .collect();
    let all_pass = reports.iter().all(|r| r.passed() && r.seeds == seeds.len());
    t.record(
        1,
        all_pass && missing.is_empty() && elapsed < GRADIENT_BUDGET,
        format!(
            "gradient suite, {} ops x {} seeds in {:.1}s (budget {}s){}",
            reports.len(),
            seeds.len(),
            elapsed.as_secs_f64(),
            GRADIENT_BUDGET.as_secs(),
            if missing.is_empty() { String::new() } else { format!(", missing {missing:?}") }
        ),
    );
}

fn attention_normalisation(t: &mut Tally) {
    let mut r = rng(2);
    let mut worst = 0.0f64;
    let mut columns = 0usize;
    let model = Model::new(ModelConfig::default(), 7).unwrap();
    for i in 0..100 {
        let scale = r.random_range(0.01..10.0);
        let m = if i % 2 == 0 {
            let srfc = Srfc::new(SrfcConfig::default(), r.random_range(0.01..1.0), &mut r).unwrap();
            let len = r.random_range(1..200);
            let x = Tensor::randn(&[64, len], scale, &mut r);
            let [a, b, c] = srfc.split(&x).unwrap();
            srfc.fuse([&a, &b, &c]).unwrap().attention
        } else {
            let len = 16 * r.random_range(1..64);
            let x = Tensor::randn(&[16, len], scale, &mut r);
            let (_, trace) = model.forward(&x).unwrap();
            trace.attention().unwrap().clone()
        };
        for x in 0..m.len() {
            worst = worst.max((m.column(x).iter().sum::<f64>() - 1.0).abs());
            columns += 1;
        }
    }
    t.record(
        2,
        worst <= 1e-9,
        format!("attention columns sum to 1 over 100 inputs ({columns} columns, worst |sum-1| = {worst:.1e})"),
    );
}

fn oracle_equivalences(t: &mut Tally) {
    let mut r = rng(3);
    let mut scene_mismatch = 0;
    for _ in 0..1000 {
        let len = r.random_range(1..64);
        let stride = [1, 2, 4, 8, 16][r.random_range(0..5)];
        let scene = random_scene(&mut r, len, stride, 8);
        let got = assign_targets(&scene, len, stride).unwrap();
        let want = oracle_assign(&scene, len, stride);
        let same = want.iter().enumerate().all(|(x, (label, off, ctr))| {
            got.labels[x] == *label && got.offsets[x] == *off && got.centerness[x] == *ctr
        });
        scene_mismatch += usize::from(!same);
    }
    let mut nms_mismatch = 0;
    for _ in 0..200 {
        let n = r.random_range(0..80);
        let dets = random_detections(&mut r, n);
        nms_mismatch += usize::from(nms(dets.clone(), 0.3) != oracle_nms(&dets, 0.3));
    }
    // Two ground truths; ranked hits at 1 and 3 with a miss between:
    // precision 1 up to recall 0.5, then 2/3 up to recall 1.
    let fixture_ap = 0.5 * 1.0 + 0.5 * (2.0 / 3.0);
    let gt = |s: f64, e: f64| ActionInstance::new(s, e, 1).unwrap();
    let det = |s: f64, e: f64, score: f64| Detection { start: s, end: e, label: 1, score };
    let report = mean_average_precision(
        &[VideoResult {
            video_id: "fixture".into(),
            ground_truth: vec![gt(0.0, 10.0), gt(40.0, 50.0)],
            detections: vec![det(0.0, 10.0, 0.9), det(20.0, 30.0, 0.8), det(40.0, 50.0, 0.7)],
        }],
        &[0.5],
    );
    let ap_err = (report.map[0] - fixture_ap).abs();
    t.record(
        3,
        scene_mismatch == 0 && nms_mismatch == 0 && ap_err <= 1e-9,
        format!(
            "assignment mismatches {scene_mismatch}/1000, NMS mismatches {nms_mismatch}/200, PR fixture AP {:.10} (|err| {ap_err:.1e})",
            report.map[0]
        ),
    );
}

fn formula_fixtures(t: &mut Tally) {
    let ctr = centerness_target(1.0, 4.0);
    let (loss, _) = tiou_loss((1.0, 1.0), (1.0, 3.0)).unwrap();
    let want = -(0.5f64).ln();
    t.record(
        4,
        (ctr - 0.5).abs() <= 1e-12 && (loss - want).abs() <= 1e-12,
        format!("centerness(1,4) = {ctr}, tIoU loss = {loss:.15} (want {want:.15})"),
    );
}

struct Benchmark {
    exp: ExperimentConfig,
    data: SyntheticDataset,
    checkpoint: Checkpoint,
    report: srf_tad::decode_eval::EvalReport,
}

fn end_to_end(t: &mut Tally) -> Benchmark {
    let exp = ExperimentConfig::default();
    assert_eq!(exp.synth.seed, 42);
    let data = generate_dataset(&exp.synth).unwrap();
    let start = Instant::now();
    let (outcome, report) = train_and_evaluate(&exp, &data, &mut |m| {
        println!(
            "    epoch {:>2} lr {:.2e} loss {:.4} (cls {:.4} loc {:.4} ctr {:.4}) clipped {}",
            m.epoch, m.lr, m.loss, m.cls, m.loc, m.ctr, m.clipped_steps
        );
    })
    .unwrap();
    let elapsed = start.elapsed();
    let map = report.map_at(0.5).unwrap();
    println!("{}", report.table("SRF + center-ness"));
    t.record(
        5,
        map >= MAP_TARGET && elapsed <= TRAINING_BUDGET,
        format!(
            "synthetic benchmark mAP@0.5 = {map:.4} (target >= {MAP_TARGET}), {} train / {} eval sequences, {} epochs, {:.0}s on {} thread(s) (budget {}s)",
            data.train.len(),
            data.eval.len(),
            exp.train.epochs,
            elapsed.as_secs_f64(),
            rayon::current_num_threads(),
            TRAINING_BUDGET.as_secs()
        ),
    );
    Benchmark {
        exp,
        data,
        checkpoint: outcome.checkpoint,
        report,
    }
}

/// Returns the repeated (srf, learned) run for the determinism check.
fn ablation(t: &mut Tally, bench: &Benchmark) -> srf_tad::trainer::AblationRun {
    let report = ablation_run(
        &bench.exp,
        &bench.data,
        &SrfcVariant::ALL,
        &CenternessMode::ALL,
        &mut |run| {
            println!(
                "    trained {} / {}: mAP@0.5 = {:.4}",
                run.variant,
                run.centerness,
                run.report.map_at(0.5).unwrap_or(f64::NAN)
            );
        },
    )
    .unwrap();
    print!("{}", report.variant_table());
    print!("{}", report.centerness_table());
    let at = |v| report.variant_map(v, 0.5).unwrap();
    let best_single = [SrfcVariant::C0Only, SrfcVariant::C1Only, SrfcVariant::C2Only]
        .into_iter()
        .map(at)
        .fold(f64::NEG_INFINITY, f64::max);
    let srf = at(SrfcVariant::Srf);
    let learned = report.centerness_map(CenternessMode::Learned, 0.5).unwrap();
    let none = report.centerness_map(CenternessMode::None, 0.5).unwrap();
    let trend_variant = srf >= best_single;
    let trend_ctr = learned >= none;
    for (ok, what) in [
        (trend_variant, format!("srf {srf:.4} vs best single branch {best_single:.4}")),
        (trend_ctr, format!("learned center-ness {learned:.4} vs none {none:.4}")),
    ] {
        if !ok {
            println!("    WARNING: trend not reproduced: {what}");
        }
    }
    // Completing and reporting every configuration is the hard requirement.
    let complete = report.variants.len() == 5 && report.centerness.len() == 3;
    t.record(
        6,
        complete,
        format!(
            "ablation reported for 5 variants and 3 center-ness modes; trends: srf >= best single {} ({srf:.4} vs {best_single:.4}), learned >= none {} ({learned:.4} vs {none:.4})",
            if trend_variant { "holds" } else { "WARN" },
            if trend_ctr { "holds" } else { "WARN" },
        ),
    );
    report
        .variants
        .into_iter()
        .find(|r| r.variant == SrfcVariant::Srf && r.centerness == CenternessMode::Learned)
        .unwrap()
}

fn determinism(t: &mut Tally, bench: &Benchmark, rerun: &srf_tad::trainer::AblationRun) {
    let first = bench.checkpoint.content_hash().unwrap();
    let same_ckpt = first == rerun.checkpoint_hash;
    let same_report = bench.report == rerun.report;
    t.record(
        7,
        same_ckpt && same_report,
        format!(
            "rerun with seed 42: checkpoint sha256 {} ({}), EvalReport {}",
            &first[..16],
            if same_ckpt { "identical" } else { "DIFFERS" },
            if same_report { "identical" } else { "DIFFERS" }
        ),
    );
}

fn round_trips(t: &mut Tally, bench: &Benchmark) {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("eval");
    write_dataset(&data_dir, &bench.data.eval, &bench.exp.synth).unwrap();
    let data_ok = load_dataset(&data_dir).unwrap() == bench.data.eval;

    let ck_path = dir.path().join("model.ckpt");
    bench.checkpoint.save(&ck_path).unwrap();
    let loaded = Checkpoint::load(&ck_path).unwrap();
    let model = loaded.model().unwrap();
    let ck_ok = loaded == bench.checkpoint
        && evaluate(&model, bench.exp.train.centerness, &bench.data.eval, &bench.exp.eval).unwrap()
            == bench.report;

    // Ground truth from the eval split plus shifted copies with fractional bounds.
    let (stride, len, classes) = (16usize, 48usize, 3usize);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    let mut r = rng(8);
    for seq in &bench.data.eval {
        for inst in &seq.instances {
            let shift = r.random_range(0.0..1.0);
            let frac = ActionInstance::new(inst.start + shift, inst.end + shift * 0.5, inst.label).unwrap();
            for gt in [*inst, frac] {
                let targets = assign_targets(&[gt], len, stride).unwrap();
                let mut out = HeadOutputs {
                    cls: Tensor::zeros(&[classes, len]),
                    reg: Tensor::zeros(&[2, len]),
                    ctr: Tensor::zeros(&[1, len]),
                };
                for x in 0..len {
                    if let Some((l, rr)) = targets.offsets[x] {
                        out.reg.row_mut(0)[x] = (l / stride as f64).ln();
                        out.reg.row_mut(1)[x] = (rr / stride as f64).ln();
                    }
                }
                let params = DecodeParams {
                    stride,
                    window_offset: 0.0,
                    video_len: 1e9,
                    centerness: CenternessMode::None,
                };
                let dets = decode(&out, &params);
                for x in (0..len).filter(|&x| targets.labels[x] > 0) {
                    let d = dets[x * classes + gt.label - 1];
                    worst = worst.max((d.start - gt.start).abs()).max((d.end - gt.end).abs());
                    checked += 1;
                }
            }
        }
    }
    t.record(
        8,
        data_ok && ck_ok && worst <= 1e-9 && checked > 0,
        format!(
            "features+annotations {}, checkpoint {}, targets encode/decode over {checked} locations max err {worst:.1e} frames",
            if data_ok { "identical" } else { "DIFFER" },
            if ck_ok { "identical" } else { "DIFFERS" },
        ),
    );
}

fn main() -> ExitCode {
    configure_threads().expect("valid thread setting");
    let mut t = Tally::default();
    gradient_suite(&mut t);
    attention_normalisation(&mut t);
    oracle_equivalences(&mut t);
    formula_fixtures(&mut t);
    let bench = end_to_end(&mut t);
    let rerun = ablation(&mut t, &bench);
    determinism(&mut t, &bench, &rerun);
    round_trips(&mut t, &bench);
    if t.failed.is_empty() {
        println!("acceptance: all 8 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {:?}", t.failed);
        ExitCode::FAILURE
    }
}
