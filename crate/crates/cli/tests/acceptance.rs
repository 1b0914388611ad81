//! Acceptance suite: one PASS/FAIL line per criterion. Exits nonzero if any fail.

#[path = "../../core/tests/support/oracles.rs"]
mod oracles;

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use oracles::*;
use stopline_core::background::BackgroundModel;
use stopline_core::image::{abs_diff, mean_gray, mean_of_images, GrayImage};
use stopline_core::stopline::{longest_run, occlusion_score, rasterize_band, StopLineGeometry};

type Outcome = Result<String, String>;

fn check(cond: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what())
    }
}

fn arithmetic_oracles() -> Outcome {
    let mut worst = Duration::ZERO;
    let mut total = Duration::ZERO;
    for i in 0..100u64 {
        let a = random_gray(704, 576, 10_000 + i);
        let b = random_gray(704, 576, 20_000 + i);
        let five: Vec<GrayImage> = (0..5).map(|k| random_gray(704, 576, 30_000 + 5 * i + k)).collect();

        let start = Instant::now();
        let diff = abs_diff(&a, &b).map_err(|e| e.to_string())?;
        let mean = mean_gray(&a).map_err(|e| e.to_string())?;
        let avg = mean_of_images(&five).map_err(|e| e.to_string())?;
        let elapsed = start.elapsed();
        worst = worst.max(elapsed);
        total += elapsed;

        check(diff.pixels() == &abs_diff_oracle(&a, &b)[..], || format!("abs_diff differs on image {i}"))?;
        check(mean == mean_gray_oracle(&a), || format!("mean_gray differs on image {i}"))?;
        check(avg.pixels() == &mean_of_images_oracle(&five)[..], || format!("mean_of_images differs on image {i}"))?;
    }
    check(worst < Duration::from_millis(50), || format!("slowest triple {worst:?} >= 50ms"))?;
    Ok(format!("100 images exact; triple mean {:?}, max {worst:?}", total / 100))
}

fn longest_run_oracle_match() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..1000 {
        let len = (rng.next_u32() % 2001) as usize;
        let density = [0.05, 0.5, 0.9, 0.995][i % 4];
        let v = random_bools(len, density, &mut rng);
        let (got, want) = (longest_run(&v), longest_run_oracle(&v));
        check(got == want, || format!("vector {i} (len {len}): {got} vs {want}"))?;
    }
    Ok("1000 vectors, lengths 0-2000, zero mismatches".into())
}

fn background_replay() -> Outcome {
    let (w, h) = (64u32, 48u32);
    let mut accepts = 0;
    let mut rejects = 0;
    for seq in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(77 + seq);
        let seeds: Vec<GrayImage> = (0..5)
            .map(|_| GrayImage::from_fn(w, h, |_, _| 80 + (rng.next_u32() % 7) as u8).unwrap())
            .collect();
        let mut model = BackgroundModel::seed(seeds.clone(), 70.0).map_err(|e| e.to_string())?;
        let mut reference = ReferenceBackground::new(&seeds, 70.0);
        for step in 0..200 {
            let drift = (step / 8) as u32;
            let intruder = rng.next_u32() % 4 == 0;
            let frame = GrayImage::from_fn(w, h, |x, _| {
                let base = 80 + drift + rng.next_u32() % 7;
                if intruder && x < 56 { (base + 150).min(255) as u8 } else { base as u8 }
            })
            .unwrap();
            let class = model.classify_and_update(&frame).map_err(|e| e.to_string())?;
            let (bg, diff) = reference.step(frame.pixels());
            check(class.is_background() == bg && class.mean_diff() == diff, || {
                format!("sequence {seq} step {step}: classification differs")
            })?;
            let ring_equal = model.ring().map(|r| r.pixels()).eq(reference.ring.iter().map(|r| r.as_slice()));
            check(ring_equal, || format!("sequence {seq} step {step}: ring differs"))?;
            check(model.current_background().pixels() == &reference.mean[..], || {
                format!("sequence {seq} step {step}: mean_bg differs")
            })?;
            if bg {
                accepts += 1;
            } else {
                rejects += 1;
            }
        }
    }
    check(accepts > 0 && rejects > 0, || "sequences were not mixed".into())?;
    Ok(format!("3 x 200 frames identical ({accepts} accepted, {rejects} rejected)"))
}

fn band_geometry() -> Outcome {
    let mut worst = 0i64;
    for skew in [0.0, 5.0, -5.0, 10.0, -10.0, 20.0, -20.0] {
        let geom = StopLineGeometry::new([40, 300], 600, skew);
        let band = rasterize_band(&geom, 704, 576).map_err(|e| e.to_string())?;
        for (k, line) in band.lines.iter().enumerate() {
            let ideal = line_samples_oracle(geom.anchor, geom.length, geom.skew_deg, geom.gap_px, k as u32);
            check(line.len() == ideal.len(), || format!("skew {skew}: sample count"))?;
            for (p, (ox, oy)) in line.iter().zip(ideal) {
                let err = (p.y as i64 - oy).abs();
                check(p.x as i64 == ox && err <= 1, || format!("skew {skew} line {k}: ({},{}) vs ({ox},{oy})", p.x, p.y))?;
                check(skew != 0.0 || err == 0, || format!("axis-aligned sample off at x={ox}"))?;
                worst = worst.max(err);
            }
        }
    }
    Ok(format!("7 skews x 5 lines, max deviation {worst}px, 0 deg exact"))
}

fn cli(args: &[&str]) -> Result<String, String> {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut argv = vec!["stopline"];
    argv.extend_from_slice(args);
    let code = stopline_cli::main_with(argv, &mut out, &mut err);
    if code != 0 {
        return Err(format!("`{}` exited {code}: {}", args.join(" "), String::from_utf8_lossy(&err).trim()));
    }
    String::from_utf8(out).map_err(|e| e.to_string())
}

fn last_json(out: &str) -> Result<Value, String> {
    serde_json::from_str(out.lines().last().unwrap_or_default()).map_err(|e| e.to_string())
}

struct Bench {
    report: Value,
    eval_output: String,
    store: Vec<u8>,
    summary: Value,
    elapsed: Duration,
}

fn benchmark(dir: &Path, noise: &str, illumination: &str) -> Result<Bench, String> {
    let s = |p: &Path| p.to_str().expect("utf-8 temp path").to_string();
    let data = dir.join("data");
    let store = dir.join("store.jsonl");
    let start = Instant::now();
    cli(&["gen", "--n", "500", "--mix", "0.4,0.3,0.3", "--noise", noise, "--illumination", illumination, "--seed", "500", "--out", &s(&data)])?;
    let run = cli(&["run", "--config", &s(&data.join("config.toml")), "--list", &s(&data.join("frames.lst")), "--store", &s(&store)])?;
    let eval_output = cli(&["eval", "--store", &s(&store), "--labels", &s(&data.join("labels.txt"))])?;
    let elapsed = start.elapsed();
    Ok(Bench {
        report: last_json(&eval_output)?,
        eval_output,
        store: fs::read(&store).map_err(|e| e.to_string())?,
        summary: last_json(&run)?,
        elapsed,
    })
}

fn label_positives(dir: &Path) -> usize {
    fs::read_to_string(dir.join("data/labels.txt"))
        .map(|t| t.lines().filter(|l| l.contains(";true;")).count())
        .unwrap_or(0)
}

fn noise_free_benchmark(tmp: &Path) -> Outcome {
    let dir = tmp.join("clean");
    let b = benchmark(&dir, "0", "0")?;
    let errors = b.report["false_positives"].as_u64().unwrap_or(u64::MAX).saturating_add(b.report["false_negatives"].as_u64().unwrap_or(u64::MAX));
    let positives = label_positives(&dir) as u64;
    check(errors == 0, || format!("{errors} misclassified frames"))?;
    check(b.summary["violations"].as_u64() == Some(positives), || {
        format!("run flagged {} but labels hold {positives}", b.summary["violations"])
    })?;
    check(b.elapsed < Duration::from_secs(30), || format!("took {:?}", b.elapsed))?;
    Ok(format!("500 frames, {positives} violations, 0 errors, {:.1}s (gen+run+eval)", b.elapsed.as_secs_f64()))
}

fn noisy_benchmark(tmp: &Path) -> Result<(String, Bench), String> {
    let b = benchmark(&tmp.join("noisy_a"), "8", "10")?;
    let tpr = b.report["true_positive_rate"].as_f64().ok_or("no rate in report")?;
    let fpr = b.report["false_positive_rate"].as_f64().unwrap_or(f64::NAN);
    check(tpr >= 0.92, || format!("true positive rate {tpr:.4} < 0.92"))?;
    Ok((format!("sigma 8, illumination +-10: TPR {tpr:.4}, FPR {fpr:.4}"), b))
}

fn determinism(tmp: &Path, first: &Bench) -> Outcome {
    let second = benchmark(&tmp.join("noisy_b"), "8", "10")?;
    check(first.store == second.store, || "record stores differ".into())?;
    check(first.eval_output == second.eval_output, || "eval reports differ".into())?;
    Ok(format!("two noisy runs: {}-byte stores and reports identical", first.store.len()))
}

fn boundary_semantics() -> Outcome {
    let (w, h) = (200u32, 40u32);
    let bg = GrayImage::filled(w, h, 50).unwrap();
    let mut model = BackgroundModel::seed(vec![bg.clone(); 5], 70.0).map_err(|e| e.to_string())?;
    let at = model.classify_and_update(&GrayImage::filled(w, h, 120).unwrap()).map_err(|e| e.to_string())?;
    check(at.mean_diff() == 70.0 && at.is_background(), || format!("diff == D_th gave {at:?}"))?;
    let mut model = BackgroundModel::seed(vec![bg; 5], 70.0).map_err(|e| e.to_string())?;
    let above = model.classify_and_update(&GrayImage::filled(w, h, 121).unwrap()).map_err(|e| e.to_string())?;
    check(!above.is_background(), || "diff just above D_th stayed background".into())?;

    let geom = StopLineGeometry::new([10, 10], 180, 0.0);
    let band = rasterize_band(&geom, w, h).map_err(|e| e.to_string())?;
    let runs = |len: u32| GrayImage::from_fn(w, h, |x, _| if (10..10 + len).contains(&x) { 255 } else { 0 }).unwrap();
    let exact = occlusion_score(&runs(140), &band, 25).map_err(|e| e.to_string())?;
    check(exact.mean_longest_run == 140.0 && !exact.judge(140.0).violated, || "run == L_th flagged".into())?;
    let over = occlusion_score(&runs(141), &band, 25).map_err(|e| e.to_string())?;
    check(over.judge(140.0).violated, || "run just above L_th not flagged".into())?;
    // uneven lines averaging exactly L_th
    let stair = GrayImage::from_fn(w, h, |x, y| {
        let len = [130, 150, 140, 135, 145][(y.saturating_sub(10) / 3).min(4) as usize];
        if y >= 10 && (10..10 + len).contains(&x) { 255 } else { 0 }
    })
    .unwrap();
    let mixed = occlusion_score(&stair, &band, 25).map_err(|e| e.to_string())?;
    check(mixed.mean_longest_run == 140.0 && !mixed.judge(140.0).violated, || format!("uneven band per-line {:?}", [130, 150, 140, 135, 145]))?;
    Ok("diff == 70 -> background; mean run == 140 -> no violation".into())
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let mut results: Vec<(&str, Outcome)> = vec![
        ("arithmetic oracles", arithmetic_oracles()),
        ("longest-run oracle", longest_run_oracle_match()),
        ("background model replay", background_replay()),
        ("stop-line geometry", band_geometry()),
        ("synthetic end-to-end, noise-free", noise_free_benchmark(tmp.path())),
    ];
    match noisy_benchmark(tmp.path()) {
        Ok((msg, bench)) => {
            results.push(("synthetic end-to-end, noisy", Ok(msg)));
            results.push(("determinism", determinism(tmp.path(), &bench)));
        }
        Err(e) => {
            results.push(("synthetic end-to-end, noisy", Err(e)));
            results.push(("determinism", Err("not run: noisy benchmark failed".into())));
        }
    }
    results.push(("boundary semantics", boundary_semantics()));

    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
