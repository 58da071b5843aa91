//! Acceptance suite: one line per criterion, non-zero exit if any fails.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use evfusion::evalbench::{
    build_corpus, cosine_table, run_ablation, score_counting, score_multichoice, score_responses, ChoicePair,
    CosineTable, FusionStrategy, LoadedSample, StubSource, StubSourceConfig, Tabular,
};
use evfusion::events::{simulate_events, LOG_EPS};
use evfusion::fusion::{
    fd_gradcheck, lora_attach, lora_merge, train_stage1, train_stage2_lora, AdaptedModel, FusionConfig, FusionDims,
    FusionModel, LoraConfig, TrainConfig, Triplet,
};
use evfusion::illumination::{quantize8, ratio_ladder, ImageTensor};
use evfusion::synth::{generate, mock_responses, SynthConfig};
use evfusion::{Rng, Tensor};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

/// The shipped corpus (`synth --n 64 --seed 7`) and everything derived from
/// default-config stage-1 training on it.
struct Shipped {
    samples: Vec<LoadedSample>,
    source: StubSource,
    corpus: Vec<Triplet>,
    model: FusionModel,
    history: Vec<f64>,
    table: CosineTable,
    elapsed: Duration,
}

fn shipped() -> Shipped {
    let start = Instant::now();
    let samples: Vec<LoadedSample> = generate(&SynthConfig::default())
        .unwrap()
        .into_iter()
        .map(|s| LoadedSample {
            id: s.id,
            image: s.image,
            events: s.events,
            qa: s.qa,
        })
        .collect();
    assert_eq!(samples.len(), 64);
    let source = StubSource::new(&StubSourceConfig::default()).unwrap();
    let corpus = build_corpus(&source, &samples, ratio_ladder().ratios()).unwrap();
    let (model, history) = train_stage1(&corpus, &TrainConfig::default(), &FusionConfig::default()).unwrap();
    let table = cosine_table(&source, Some(&model), &samples, &ratio_ladder()).unwrap();
    Shipped {
        samples,
        source,
        corpus,
        model,
        history,
        table,
        elapsed: start.elapsed(),
    }
}

fn random_tensor(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| 0.5 * rng.normal()).collect()).unwrap()
}

fn c1_gradcheck() -> Outcome {
    let start = Instant::now();
    let dims = FusionDims {
        d: 16,
        d_illu: 4,
        d_ev: 8,
        d_dino: 16,
    };
    let mut worst = 0.0f64;
    for seed in 0..10u64 {
        let cfg = FusionConfig {
            dims,
            init_seed: seed,
            ..FusionConfig::default()
        };
        let model = FusionModel::init(&cfg).unwrap();
        let mut rng = Rng::new(1000 + seed);
        let batch: Vec<Triplet> = (0..4)
            .map(|_| Triplet {
                extreme: random_tensor(&mut rng, 4, 16),
                dino: random_tensor(&mut rng, 4, 16),
                event: random_tensor(&mut rng, 4, 16),
                original: random_tensor(&mut rng, 4, 16),
            })
            .collect();
        let refs: Vec<&Triplet> = batch.iter().collect();
        let err = fd_gradcheck(&model, &refs, 1e-6).unwrap();
        ensure!(err < 1e-6, "seed {seed}: max relative error {err:e}");
        worst = worst.max(err);
    }
    let t = start.elapsed();
    ensure!(t < Duration::from_secs(30), "took {t:?}");
    Ok(format!("max relative error {worst:.2e} over 10 seeds in {:.2}s", t.as_secs_f64()))
}

fn c2_alignment_gain(s: &Shipped) -> Outcome {
    let mut parts = Vec::new();
    for r in [0.05, 20.0] {
        let row = s.table.row(r).unwrap();
        let gain = row.fusion.unwrap() - row.no_fusion;
        ensure!(gain >= 0.10, "ratio {r}: gain {gain:.4} < 0.10 ({:.4} -> {:.4})", row.no_fusion, row.fusion.unwrap());
        parts.push(format!("ratio {r}: {:.4} -> {:.4} (+{gain:.4})", row.no_fusion, row.fusion.unwrap()));
    }
    ensure!(s.elapsed < Duration::from_secs(300), "took {:?}", s.elapsed);
    Ok(format!("{}; {:.1}s", parts.join(", "), s.elapsed.as_secs_f64()))
}

fn c3_u_shape(s: &Shipped) -> Outcome {
    let col: Vec<f64> = s.table.rows.iter().map(|r| r.no_fusion).collect();
    let one = ratio_ladder().identity_index();
    ensure!(col[one] == 1.0, "similarity at ratio 1.0 is {:e}, not exactly 1", col[one]);
    ensure!(col.iter().all(|&c| c <= 1.0), "similarity above 1");
    for i in 0..one {
        ensure!(col[i] <= col[i + 1] + 1e-9, "under-exposure branch rises between rows {i} and {}", i + 1);
    }
    for i in one..col.len() - 1 {
        ensure!(col[i + 1] <= col[i] + 1e-9, "over-exposure branch rises between rows {i} and {}", i + 1);
    }
    Ok(format!(
        "max 1.0 at ratio 1; ends {:.4} (0.05) and {:.4} (20)",
        col[0],
        col[col.len() - 1]
    ))
}

fn c4_training_sanity(s: &Shipped) -> Outcome {
    let (first, last) = (s.history[0], *s.history.last().unwrap());
    ensure!(s.history.len() == 30, "history has {} epochs", s.history.len());
    ensure!(last < 0.5 * first, "final loss {last:e} not below half of first {first:e}");
    let frozen = TrainConfig {
        lr: 0.0,
        ..TrainConfig::default()
    };
    let (_, hist) = train_stage1(&s.corpus, &frozen, &FusionConfig::default()).unwrap();
    ensure!(
        hist.iter().all(|h| h.to_bits() == hist[0].to_bits()),
        "lr=0 history varies: {hist:?}"
    );
    Ok(format!(
        "loss {first:.4e} -> {last:.4e} (ratio {:.3}); lr=0 history bit-constant over {} epochs",
        last / first,
        hist.len()
    ))
}

fn c5_ablation(s: &Shipped) -> Outcome {
    let t = run_ablation(
        &s.source,
        &s.samples,
        ratio_ladder().ratios(),
        &TrainConfig::default(),
        &FusionConfig::default(),
    )
    .unwrap();
    let (pre, post, ours) = (
        t.score(FusionStrategy::PreFusion),
        t.score(FusionStrategy::PostFusion),
        t.score(FusionStrategy::Ours),
    );
    ensure!(ours >= post && post >= pre, "ordering violated: pre {pre:.4}, post {post:.4}, ours {ours:.4}");
    Ok(format!("pre-fusion {pre:.4} <= post-fusion {post:.4} <= ours {ours:.4}"))
}

fn brute_multichoice(pairs: &[ChoicePair]) -> (f64, f64) {
    let mut exact = 0u32;
    let (mut tp, mut fp, mut fneg) = (0u32, 0u32, 0u32);
    for p in pairs {
        let mut same = true;
        for letter in ('A'..='H').take(p.n_options) {
            let (inp, ing) = (p.pred.contains(&letter), p.gt.contains(&letter));
            same &= inp == ing;
            match (inp, ing) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                _ => {}
            }
        }
        exact += same as u32;
    }
    let f1 = if tp + fp + fneg == 0 {
        1.0
    } else {
        (2 * tp) as f64 / (2 * tp + fp + fneg) as f64
    };
    (exact as f64 / pairs.len() as f64, f1)
}

fn brute_counting(pairs: &[(u32, u32)]) -> (f64, f64) {
    let mut hits = 0u32;
    let mut abs = 0u64;
    for &(p, g) in pairs {
        hits += (p == g) as u32;
        abs += if p > g { p - g } else { g - p } as u64;
    }
    (hits as f64 / pairs.len() as f64, abs as f64 / pairs.len() as f64)
}

fn c6_metric_oracle() -> Outcome {
    let mut rng = Rng::new(606);
    let pick = |rng: &mut Rng, n: usize| -> BTreeSet<char> {
        ('A'..='H').take(n).filter(|_| rng.below(2) == 1).collect()
    };
    for set in 0..1000 {
        let len = 1 + rng.below(12);
        let pairs: Vec<ChoicePair> = (0..len)
            .map(|_| {
                let n = 1 + rng.below(8);
                ChoicePair {
                    pred: pick(&mut rng, n),
                    gt: pick(&mut rng, n),
                    n_options: n,
                }
            })
            .collect();
        let got = score_multichoice(&pairs).unwrap();
        let want = brute_multichoice(&pairs);
        ensure!(got == want, "multi-choice set {set}: {got:?} vs reference {want:?}");
    }
    for set in 0..1000 {
        let len = 1 + rng.below(12);
        let pairs: Vec<(u32, u32)> = (0..len).map(|_| (rng.below(10) as u32, rng.below(10) as u32)).collect();
        let got = score_counting(&pairs).unwrap();
        let want = brute_counting(&pairs);
        ensure!(got == want, "counting set {set}: {got:?} vs reference {want:?}");
    }
    Ok("1000 multi-choice and 1000 counting sets agree exactly".into())
}

fn c7_lora(s: &Shipped) -> Outcome {
    let adapted = lora_attach(&s.model, 2, 2.0, 0).unwrap();
    for t in &s.corpus {
        let a = s.model.forward(&t.extreme, &t.dino, &t.event).unwrap();
        let b = adapted.forward(&t.extreme, &t.dino, &t.event).unwrap();
        let same = a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
        ensure!(same, "fresh adapters changed an output");
    }
    let before: Vec<u64> = s.model.flat_params().iter().map(|v| v.to_bits()).collect();
    let stage1_loss = s.model.mean_loss(&s.corpus).unwrap();
    let lc = LoraConfig::default();
    ensure!(lc.epochs == 1, "default stage-2 epochs is {}", lc.epochs);
    let (set, hist) = train_stage2_lora(&s.model, &s.corpus, &TrainConfig::default(), &lc).unwrap();
    ensure!(hist.len() == 1, "stage 2 ran {} epochs", hist.len());
    let after: Vec<u64> = s.model.flat_params().iter().map(|v| v.to_bits()).collect();
    ensure!(before == after, "base weights changed during stage 2");
    let trained = AdaptedModel {
        base: s.model.clone(),
        lora: set,
    };
    let merged = lora_merge(&trained);
    let mut worst = 0.0f64;
    for t in &s.corpus {
        let a = trained.forward(&t.extreme, &t.dino, &t.event).unwrap();
        let b = merged.forward(&t.extreme, &t.dino, &t.event).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            worst = worst.max((x - y).abs());
        }
    }
    ensure!(worst < 1e-12, "merge differs from adapted forward by {worst:e}");
    let stage2_loss = merged.mean_loss(&s.corpus).unwrap();
    Ok(format!(
        "fresh adapters bitwise identical; merge max diff {worst:.1e}; base unchanged; loss {stage1_loss:.4e} -> {stage2_loss:.4e}"
    ))
}

fn c8_protocol(s: &Shipped) -> Outcome {
    let expected = [
        0.05, 0.08, 0.1, 0.125, 0.2, 0.4, 0.5, 0.75, 1.0, 2.0, 3.0, 5.0, 7.5, 8.0, 10.0, 15.0, 20.0,
    ];
    ensure!(ratio_ladder().ratios() == expected, "ladder {:?}", ratio_ladder().ratios());
    let manifest: Vec<_> = generate(&SynthConfig::default())
        .unwrap()
        .into_iter()
        .map(|x| evfusion::evalbench::TripletSample {
            id: x.id,
            original: "unused".into(),
            events: "unused".into(),
            qa: x.qa,
        })
        .collect();
    let responses = mock_responses(&manifest, &expected, 7);
    let rep = score_responses(&manifest, &responses, &ratio_ladder()).unwrap();
    ensure!(rep.rows.len() == 17, "{} ratio rows", rep.rows.len());
    let rows: Vec<f64> = rep.rows.iter().map(|r| r.ratio).collect();
    ensure!(rows == expected, "row ratios {rows:?}");
    type Get = fn(&evfusion::evalbench::Metrics) -> Option<f64>;
    let getters: [(&str, Get); 4] = [
        ("mc_accuracy", |m| m.mc_accuracy),
        ("mc_micro_f1", |m| m.mc_micro_f1),
        ("cnt_accuracy", |m| m.cnt_accuracy),
        ("cnt_mae", |m| m.cnt_mae),
    ];
    for (name, get) in getters {
        let mean = rep.rows.iter().map(|r| get(&r.metrics).unwrap()).sum::<f64>() / 17.0;
        let avg = get(&rep.average).unwrap();
        ensure!((avg - mean).abs() < 1e-12, "{name}: average {avg} vs mean {mean}");
    }
    let csv = rep.to_csv();
    ensure!(csv.lines().count() == 19, "csv has {} lines", csv.lines().count());
    ensure!(csv.lines().last().unwrap().starts_with("avg,"), "last csv row is not avg");
    let ct = s.table.to_csv();
    ensure!(ct.lines().count() == 19, "cosine csv has {} lines", ct.lines().count());
    Ok("ladder exact; eval report and cosine table have 17 ratio rows + avg; avg is the unweighted mean".into())
}

fn run_cli(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_evfusion"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn evfusion");
    assert!(
        out.status.success(),
        "evfusion {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn end_to_end(dir: &Path) {
    run_cli(dir, &["synth", "--out", "corpus", "--n", "64", "--seed", "7"]);
    run_cli(dir, &["train", "--manifest", "corpus/manifest.jsonl", "--out", "run/model.evck"]);
    run_cli(
        dir,
        &["eval-features", "--manifest", "corpus/manifest.jsonl", "--checkpoint", "run/model.evck", "--out", "run"],
    );
    run_cli(dir, &["report", "--in", "run"]);
}

fn c9_determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    end_to_end(a.path());
    end_to_end(b.path());
    let files = [
        "corpus/manifest.jsonl",
        "run/model.evck",
        "run/loss_history.csv",
        "run/cosine_table.csv",
        "run/cosine_table.json",
        "run/pca.csv",
        "run/report.md",
    ];
    for f in files {
        let x = std::fs::read(a.path().join(f)).map_err(|e| format!("{f}: {e}"))?;
        let y = std::fs::read(b.path().join(f)).map_err(|e| format!("{f}: {e}"))?;
        ensure!(x == y, "{f} differs between runs");
    }
    Ok(format!("synth -> train -> eval-features -> report twice: {} artifacts byte-identical", files.len()))
}

fn c10_event_oracle() -> Outcome {
    let mut rng = Rng::new(1010);
    let mut total = 0u64;
    for frame in 0..100 {
        let (h, w) = (1 + rng.below(24), 1 + rng.below(24));
        let vals: Vec<f64> = (0..h * w).map(|_| quantize8(rng.uniform())).collect();
        let img = ImageTensor::new(h, w, 1, vals.clone()).unwrap();
        let c = 0.05 + 0.5 * rng.uniform();
        let shift = rng.below(7) as i64 - 3;
        let stream = simulate_events(&img, shift, c).unwrap();
        let mut expect = 0u64;
        for y in 0..h {
            for x in 0..w {
                let sx = (x as i64 + shift).max(0).min(w as i64 - 1) as usize;
                let delta = (vals[y * w + sx] + LOG_EPS).ln() - (vals[y * w + x] + LOG_EPS).ln();
                expect += (delta.abs() / c).floor() as u64;
            }
        }
        ensure!(
            stream.len() as u64 == expect,
            "frame {frame}: simulator {} vs brute force {expect}",
            stream.len()
        );
        total += expect;
    }
    Ok(format!("100 random frames, {total} events, exact match"))
}

fn check(id: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    match result {
        Ok(detail) => {
            println!("criterion {id:>2} PASS  {name}: {detail}");
            true
        }
        Err(why) => {
            println!("criterion {id:>2} FAIL  {name}: {why}");
            false
        }
    }
}

fn main() {
    // `cargo test -- --list` and similar harness probes: nothing to enumerate.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let shipped = catch_unwind(shipped).ok();
    let need = |s: &Option<Shipped>| -> Result<(), String> {
        s.as_ref().map(|_| ()).ok_or_else(|| "shipped corpus fixture failed to build".to_string())
    };
    let with = |f: fn(&Shipped) -> Outcome| {
        let s = &shipped;
        move || {
            need(s)?;
            f(s.as_ref().unwrap())
        }
    };
    let results = [
        check(1, "gradient correctness", c1_gradcheck),
        check(2, "stage-1 alignment gain", with(c2_alignment_gain)),
        check(3, "degradation U-shape", with(c3_u_shape)),
        check(4, "training sanity", with(c4_training_sanity)),
        check(5, "ablation ordering", with(c5_ablation)),
        check(6, "metric oracle equivalence", c6_metric_oracle),
        check(7, "LoRA identity", with(c7_lora)),
        check(8, "protocol fidelity", with(c8_protocol)),
        check(9, "determinism", c9_determinism),
        check(10, "event simulator oracle", c10_event_oracle),
    ];
    let passed = results.iter().filter(|&&r| r).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
