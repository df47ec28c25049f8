//! Acceptance checks, one printed line per criterion. Pass criterion
//! numbers as arguments to run a subset, e.g.
//! `cargo test --test acceptance -- 1 2`.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use common::*;
use ctgsm::gmm::fit_gmm;
use ctgsm::metrics::{confusion, per_class_metrics, roc_auc};
use ctgsm::nn::{cross_entropy_loss, focal_loss, softmax_rows, FocalLossConfig};
use ctgsm::pipeline::{self, PipelineConfig, Variant};
use ctgsm::resample::{enn_filter, smote, EnnParams, SmoteAmount, SmoteParams};
use ctgsm::rng::rng_from_seed;
use rand::Rng;

type Check = std::result::Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn gradients() -> Check {
    let start = Instant::now();
    let losses = [
        LossChoice::Focal(FocalLossConfig::default()),
        LossChoice::Focal(FocalLossConfig::new(0.5, 1.0).unwrap()),
        LossChoice::CrossEntropy,
        LossChoice::Bce,
        LossChoice::SquaredError,
    ];
    let mut worst: f64 = 0.0;
    for i in 0..20u64 {
        let case = if i < 4 {
            // Detection-model shape (78 inputs, two hidden layers, 6 classes) at reduced widths.
            random_grad_case(1000 + i, 78, &[16, 8], 6, LossChoice::Focal(FocalLossConfig::default()))
        } else {
            let hidden: &[usize] = [&[6][..], &[5, 4], &[4, 3, 5]][i as usize % 3];
            random_grad_case(2000 + i, 5, hidden, 4, losses[i as usize % losses.len()])
        };
        let r = gradient_check(&case.net, &case.x, case.loss, &case.targets, 1e-5);
        worst = worst.max(r.max_rel_error);
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst < 1e-4, format!("max relative error {worst:.2e}"))?;
    ensure(secs < 60.0, format!("took {secs:.1}s"))?;
    Ok(format!("20 networks, max relative error {worst:.2e}, {secs:.1}s"))
}

fn focal_reduction() -> Check {
    let mut rng = rng_from_seed(2);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let rows = rng.random_range(1..40);
        let classes = rng.random_range(2..8);
        let probs = softmax_rows(random_matrix(rows, classes, 4.0, &mut rng).view());
        let t: Vec<usize> = (0..rows).map(|_| rng.random_range(0..classes)).collect();
        let (fl, fg) = focal_loss(probs.view(), &t, FocalLossConfig::new(1.0, 0.0).unwrap()).unwrap();
        let (ce, cg) = cross_entropy_loss(probs.view(), &t).unwrap();
        worst = worst.max((fl - ce).abs());
        worst = fg.iter().zip(cg.iter()).fold(worst, |w, (a, b)| w.max((a - b).abs()));
    }
    ensure(worst <= 1e-12, format!("max difference {worst:.2e}"))?;
    Ok(format!("100 batches, max difference {worst:.2e}"))
}

fn em_monotonicity() -> Check {
    let mut rng = rng_from_seed(3);
    let mut worst_drop: f64 = 0.0;
    let mut fits = 0;
    for ds in 0..50u64 {
        let n = rng.random_range(50..400);
        let modes = rng.random_range(1..5);
        let centres: Vec<f64> = (0..modes).map(|_| rng.random_range(-10.0..10.0)).collect();
        let values: Vec<f64> = (0..n)
            .map(|_| centres[rng.random_range(0..modes)] + rng.random_range(0.05..2.0) * rng.random_range(-1.0..1.0))
            .collect();
        for k in [1, 2, 5, 10] {
            let fit = fit_gmm(&values, k, 0.0, 100, ds).map_err(|e| e.to_string())?;
            for w in fit.log_likelihood.windows(2) {
                worst_drop = worst_drop.max(w[0] - w[1]);
            }
            fits += 1;
        }
    }
    ensure(worst_drop <= 1e-9, format!("log-likelihood fell by {worst_drop:.2e}"))?;
    Ok(format!("{fits} fits, largest decrease {worst_drop:.2e}"))
}

fn smote_geometry() -> Check {
    let mut rng = rng_from_seed(4);
    let mut checked = 0;
    for ds in 0..50u64 {
        let classes = rng.random_range(2..5);
        let data = random_dataset(rng.random_range(40..150), rng.random_range(1..6), classes, ds);
        let k = rng.random_range(1..6);
        let counts = data.class_counts();
        let targets: Vec<usize> = (0..classes).filter(|&c| counts[c] > k && rng.random_bool(0.7)).collect();
        let mut params = SmoteParams::new(SmoteAmount::PerSample(rng.random_range(1..4)), targets.clone(), ds);
        params.k_neighbors = k;
        let out = smote(&data, &params).map_err(|e| e.to_string())?;
        for (r, o) in out.origins.iter().enumerate() {
            let p = out.synthetic.features.row(r).to_vec();
            let a = data.features.row(o.source).to_vec();
            let b = data.features.row(o.neighbor).to_vec();
            ensure(on_segment(&p, &a, &b, 1e-9), format!("dataset {ds} row {r} off its segment"))?;
            ensure(brute_force_class_knn(&data, o.source, k).contains(&o.neighbor), format!("dataset {ds} row {r}: neighbour not among the {k} nearest"))?;
            ensure(targets.contains(&out.synthetic.labels[r]), format!("dataset {ds} row {r}: label outside targets"))?;
            checked += 1;
        }
    }
    Ok(format!("{checked} synthetic rows on segments to verified neighbours"))
}

fn enn_oracle() -> Check {
    let mut rng = rng_from_seed(5);
    let mut removed = 0;
    for ds in 0..100u64 {
        let data = random_dataset(rng.random_range(5..=200), rng.random_range(1..5), rng.random_range(2..5), ds);
        let k = rng.random_range(1..6).min(data.n_rows() - 1);
        let got = enn_filter(&data, &EnnParams { k_neighbors: k }).map_err(|e| e.to_string())?;
        let want = data.select(&brute_force_enn(&data, k));
        ensure(got == want, format!("dataset {ds} differs from the brute-force filter"))?;
        removed += data.n_rows() - got.n_rows();
    }
    Ok(format!("100 datasets identical, {removed} rows removed in total"))
}

fn metrics_oracle() -> Check {
    let mut rng = rng_from_seed(6);
    let mut worst: f64 = 0.0;
    let mut worst_auc: f64 = 0.0;
    for inst in 0..100 {
        let n = rng.random_range(2..3000);
        let c = rng.random_range(2..7);
        let t: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let p: Vec<usize> = (0..n).map(|i| if rng.random_bool(0.6) { t[i] } else { rng.random_range(0..c) }).collect();
        let cm = confusion(&t, &p, c).map_err(|e| e.to_string())?;
        ensure(cm.counts == tally(&t, &p, c), format!("instance {inst}: confusion counts differ"))?;
        let report = per_class_metrics(&cm).map_err(|e| e.to_string())?;
        for (k, m) in report.per_class.iter().enumerate() {
            let tp = (0..n).filter(|&i| t[i] == k && p[i] == k).count() as f64;
            let fp = (0..n).filter(|&i| t[i] != k && p[i] == k).count() as f64;
            let fn_ = (0..n).filter(|&i| t[i] == k && p[i] != k).count() as f64;
            let pr = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let re = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
            let f1 = if pr + re > 0.0 { 2.0 * pr * re / (pr + re) } else { 0.0 };
            worst = [pr - m.precision, re - m.recall, f1 - m.f1].iter().fold(worst, |w, d| w.max(d.abs()));
        }
        let acc = (0..n).filter(|&i| t[i] == p[i]).count() as f64 / n as f64;
        worst = worst.max((acc - report.accuracy).abs());

        let scores: Vec<f64> = (0..n).map(|_| (rng.random_range(0..50) as f64) / 7.0).collect();
        let labels: Vec<bool> = (0..n).map(|i| rng.random_bool(0.3 + 0.01 * (scores[i] as f64))).collect();
        if labels.iter().any(|&l| l) && labels.iter().any(|&l| !l) {
            let auc = roc_auc(&scores, &labels).map_err(|e| e.to_string())?.auc;
            worst_auc = worst_auc.max((auc - mann_whitney_auc(&scores, &labels)).abs());
        }
    }
    ensure(worst <= 1e-12, format!("metric mismatch {worst:.2e}"))?;
    ensure(worst_auc <= 1e-9, format!("AUC mismatch {worst_auc:.2e}"))?;
    Ok(format!("100 instances, metric error {worst:.2e}, AUC error {worst_auc:.2e}"))
}

fn argmax(xs: &[f64]) -> usize {
    (0..xs.len()).fold(0, |b, i| if xs[i] > xs[b] { i } else { b })
}

fn ctgan_conditioning() -> Check {
    let cfg = PipelineConfig { seed: 7, ..PipelineConfig::default() };
    let data = pipeline::ingest(&cfg).map_err(|e| e.to_string())?;
    let rare = cfg.rare_ids(&data).map_err(|e| e.to_string())?;
    let split = pipeline::preprocess(&cfg, &data).map_err(|e| e.to_string())?;
    let aug = pipeline::augment(&cfg, &split.train, &rare, cfg.seed).map_err(|e| e.to_string())?;
    let model = aug.model.ok_or("augmentation produced no model")?;
    let mut rng = rng_from_seed(70);
    for c in 0..data.n_classes() {
        let generated = model.generate(&split.train, c, 1000, &mut rng).map_err(|e| e.to_string())?;
        ensure(generated.labels.iter().all(|&l| l == c), format!("class {c}: generated label differs from condition"))?;
    }
    // The generator is trained on rare-class conditions only, so the label
    // group is compared for those.
    let (mut rows, mut group_match) = (0, 0);
    for &c in &rare {
        let enc = model.generate_encoded(c, 1000, &mut rng).map_err(|e| e.to_string())?;
        for row in enc.rows() {
            for g in model.codec.softmax_groups() {
                let s: f64 = row.slice(ndarray::s![g]).sum();
                ensure((s - 1.0).abs() <= 1e-9, format!("softmax group sums to {s}"))?;
            }
            for j in 0..model.codec.n_features() {
                ensure(row[model.codec.alpha_index(j)].abs() <= 1.0, "alpha slot outside [-1, 1]")?;
            }
            let labels = row.slice(ndarray::s![model.codec.label_span()]).to_vec();
            group_match += usize::from(argmax(&labels) == c);
            rows += 1;
        }
    }
    let gained: Vec<usize> =
        rare.iter().map(|&c| aug.data.class_counts()[c] - split.train.class_counts()[c]).collect();
    ensure(gained.iter().all(|&g| g == cfg.ctgan.samples_per_class), format!("rare classes gained {gained:?}"))?;
    Ok(format!(
        "{} decoded rows carry their condition; {rows} encoded rare-class rows well-formed, label group agrees for {:.1}%",
        1000 * data.n_classes(),
        100.0 * group_match as f64 / rows as f64
    ))
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

fn fmt_list(xs: &[f64]) -> String {
    xs.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join("/")
}

fn rare_class_improvement() -> Check {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (mut full, mut base) = (Vec::new(), Vec::new());
    for seed in 1..=5u64 {
        let cfg = PipelineConfig {
            seed,
            folds: 0,
            projection: false,
            out_dir: dir.path().join(format!("seed{seed}")),
            ..PipelineConfig::default()
        };
        for (variant, into) in [(Variant::Proposed, &mut full), (Variant::PlainDnn, &mut base)] {
            let e = pipeline::run_pipeline(&variant.configure(&cfg)).map_err(|e| e.to_string())?.evaluation;
            into.push((e.rare_recall_mean(), e.metrics.macro_avg.f1, e.metrics.accuracy));
        }
    }
    let col = |v: &[(f64, f64, f64)], i: usize| -> Vec<f64> {
        v.iter().map(|r| [r.0, r.1, r.2][i]).collect()
    };
    let (fr, ff, fa) = (col(&full, 0), col(&full, 1), col(&full, 2));
    let (br, bf, ba) = (col(&base, 0), col(&base, 1), col(&base, 2));
    let detail = format!(
        "rare recall {} vs {}, macro-F1 {} vs {}, accuracy {} vs {}, {:.0}s",
        fmt_list(&fr),
        fmt_list(&br),
        fmt_list(&ff),
        fmt_list(&bf),
        fmt_list(&fa),
        fmt_list(&ba),
        start.elapsed().as_secs_f64()
    );
    let (mr_f, mr_b) = (median(fr), median(br));
    let (mf_f, mf_b) = (median(ff), median(bf));
    let (ma_f, ma_b) = (median(fa), median(ba));
    ensure(mr_f > mr_b, format!("median rare recall {mr_f:.3} not above {mr_b:.3}; {detail}"))?;
    ensure(mf_f - mf_b >= 0.05, format!("median macro-F1 gain {:.3} < 0.05; {detail}", mf_f - mf_b))?;
    ensure((ma_f - ma_b).abs() <= 0.01, format!("median accuracy {ma_f:.4} vs {ma_b:.4}; {detail}"))?;
    ensure(start.elapsed().as_secs_f64() < 900.0, format!("over 15 minutes; {detail}"))?;
    Ok(format!(
        "medians: rare recall {mr_f:.3} vs {mr_b:.3}, macro-F1 {mf_f:.3} vs {mf_b:.3}, accuracy {ma_f:.4} vs {ma_b:.4} ({detail})"
    ))
}

fn csv_files(dir: &Path) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map(|it| it.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.extension().is_some_and(|x| x == "csv")).collect())
        .unwrap_or_default();
    files.sort();
    files
}

fn table_shape() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = PipelineConfig { folds: 0, projection: false, out_dir: dir.path().to_path_buf(), ..PipelineConfig::default() };
    let real = std::env::var_os("CTGSM_CIC_DIR").map(PathBuf::from);
    match &real {
        Some(d) => {
            cfg.inputs = csv_files(d);
            ensure(!cfg.inputs.is_empty(), format!("no CSV files in {}", d.display()))?;
        }
        None => {
            // SQL Injection keeps 6 training rows, enough for SMOTE with k = 5.
            cfg.benchmark = cfg.benchmark.scaled(0.4);
            cfg.ctgan.model.epochs = 100;
        }
    }
    let results = pipeline::compare_variants(&cfg, &Variant::ALL).map_err(|e| e.to_string())?;
    let names: Vec<&str> = results.iter().map(|r| r.variant.name()).collect();
    ensure(names == ["proposed", "cross_entropy", "plain_dnn", "dnn_smote"], format!("variants {names:?}"))?;
    for r in &results {
        for v in [r.macro_precision, r.macro_recall, r.macro_f1] {
            ensure((0.0..=1.0).contains(&v), format!("{} has metric {v}", r.variant.name()))?;
        }
    }
    let csv = fs::read_to_string(dir.path().join("comparison.csv")).map_err(|e| e.to_string())?;
    ensure(csv.lines().count() == 5, "comparison.csv should have a header and four rows")?;
    let table = results.iter().map(|r| format!("{} F1 {:.3}", r.variant.name(), r.macro_f1)).collect::<Vec<_>>().join(", ");
    Ok(match real {
        Some(d) => format!("CSE-CIC-IDS2018 run from {} completed: {table}", d.display()),
        None => format!("table shape verified on reduced benchmark ({table}); CSE-CIC-IDS2018 run skipped, CTGSM_CIC_DIR unset"),
    })
}

fn bundle_without_timing(dir: &Path) -> std::result::Result<Vec<(String, Vec<u8>)>, String> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).map_err(|e| e.to_string())? {
            let p = e.map_err(|e| e.to_string())?.path();
            if p.is_dir() {
                stack.push(p);
                continue;
            }
            let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
            let mut bytes = fs::read(&p).map_err(|e| e.to_string())?;
            if rel == "manifest.json" {
                let mut m: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| e.to_string())?;
                for s in m["stages"].as_array_mut().ok_or("manifest without stages")? {
                    s["seconds"] = serde_json::Value::Null;
                }
                bytes = serde_json::to_vec(&m).map_err(|e| e.to_string())?;
            }
            out.push((rel, bytes));
        }
    }
    out.sort();
    Ok(out)
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = dir.path().join("out");
    let mut cfg = PipelineConfig { seed: 11, ..PipelineConfig::default() };
    cfg.benchmark = cfg.benchmark.scaled(0.4);
    cfg.ctgan.model.epochs = 100;
    cfg.classifier.epochs = 10;
    let cfg_path = dir.path().join("config.json");
    fs::write(&cfg_path, serde_json::to_string(&cfg).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let mut bundles = Vec::new();
    for _ in 0..2 {
        let status = Command::new(env!("CARGO_BIN_EXE_ctgsm"))
            .args(["run", "--config"])
            .arg(&cfg_path)
            .arg("--out")
            .arg(&out)
            .env("RUST_LOG", "warn")
            .output()
            .map_err(|e| e.to_string())?
            .status;
        ensure(status.success(), format!("run exited with {status}"))?;
        bundles.push(bundle_without_timing(&out)?);
        fs::remove_dir_all(&out).map_err(|e| e.to_string())?;
    }
    let (a, b) = (&bundles[0], &bundles[1]);
    ensure(a.len() == b.len(), "different file sets")?;
    for ((na, ba), (nb, bb)) in a.iter().zip(b) {
        ensure(na == nb && ba == bb, format!("{na} differs"))?;
    }
    Ok(format!("two `ctgsm run` executions, {} files byte-identical outside timing", a.len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("gradient correctness", gradients),
        ("focal loss reduces to cross-entropy", focal_reduction),
        ("EM monotonicity", em_monotonicity),
        ("SMOTE geometry", smote_geometry),
        ("ENN oracle equivalence", enn_oracle),
        ("metrics oracle equivalence", metrics_oracle),
        ("CTGAN conditioning", ctgan_conditioning),
        ("end-to-end rare-class improvement", rare_class_improvement),
        ("comparison table of variants", table_shape),
        ("determinism", determinism),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        match check() {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {why}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
