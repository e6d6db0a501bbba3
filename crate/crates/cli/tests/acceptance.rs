//! End-to-end acceptance criteria. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any criterion fails.
//!
//! MNIST-scale runs go through the `dustbin` binary and are cached under the
//! cargo target tmp dir, keyed by arguments and input digests. Set
//! `DUSTBIN_RETRAIN=1` to ignore the cache and `DUSTBIN_DATA` to point at a
//! data directory other than `<workspace>/data`.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use dustbin::data::{load_cifar10, load_cifar100, CIFAR100_EXCLUDED_SUPERCLASSES, CIFAR_RECORD_PIXELS};
use dustbin::digest::{sha256_bytes, sha256_file};
use dustbin::features::pca_fit;
use dustbin::tensor::Tensor;
use serde_json::Value;

/// Bump to invalidate cached runs after behavior changes.
const CACHE_VERSION: &str = "1";
const SPLIT_SEED: &str = "7";
const N_OUT: &str = "10000";

type Check = Result<String, String>;

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, id: u32, name: &str, outcome: Check) {
        match outcome {
            Ok(detail) => println!("PASS [{id}] {name}: {detail}"),
            Err(detail) => {
                self.failures += 1;
                println!("FAIL [{id}] {name}: {detail}");
            }
        }
    }
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_dustbin")
}

fn data_dir() -> PathBuf {
    std::env::var_os("DUSTBIN_DATA")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

fn cache_root() -> PathBuf {
    Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance-cache")
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Run the binary with `args` writing into `out`; returns wall seconds.
fn run_cli(args: &[String], out: &Path) -> Result<f64, String> {
    let t = Instant::now();
    let res = Command::new(bin())
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .map_err(|e| format!("spawn: {e}"))?;
    if !res.status.success() {
        return Err(format!(
            "`dustbin {}` exited with {}: {}",
            args.join(" "),
            res.status,
            String::from_utf8_lossy(&res.stderr).lines().last().unwrap_or("")
        ));
    }
    Ok(t.elapsed().as_secs_f64())
}

/// Cached run: reuses a previous output directory when arguments and input
/// digests match. Returns the directory and the recorded wall time.
fn cached(name: &str, args: &[String], inputs: &[PathBuf]) -> Result<(PathBuf, f64), String> {
    let mut key = format!("{CACHE_VERSION}\0{}", args.join("\0"));
    for p in inputs {
        key.push('\0');
        key.push_str(&sha256_file(p).map_err(|e| e.to_string())?);
    }
    let dir = cache_root().join(format!("{name}-{}", &sha256_bytes(key.as_bytes())[..16]));
    let stamp = dir.join("elapsed_secs");
    if std::env::var_os("DUSTBIN_RETRAIN").is_none() && dir.join("manifest.json").exists() {
        if let Ok(s) = std::fs::read_to_string(&stamp) {
            if let Ok(secs) = s.trim().parse() {
                println!("  (cached) {name}");
                return Ok((dir, secs));
            }
        }
    }
    let _ = std::fs::remove_dir_all(&dir);
    println!("  running {name}: dustbin {}", args.join(" "));
    let secs = run_cli(args, &dir)?;
    std::fs::write(&stamp, format!("{secs}\n")).map_err(|e| e.to_string())?;
    println!("  {name} done in {secs:.0}s");
    Ok((dir, secs))
}

fn read_json(path: &Path) -> Result<Value, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn num(v: &Value, ptr: &str) -> Result<f64, String> {
    v.pointer(ptr)
        .and_then(Value::as_f64)
        .ok_or_else(|| format!("missing {ptr}"))
}

fn strs(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn path_arg(p: &Path) -> String {
    p.display().to_string()
}

// ---- 1: gradient oracle suite ----

fn gradients(tmp: &Path) -> Check {
    let out = tmp.join("gradcheck");
    let secs = run_cli(
        &strs(&["gradcheck", "--seed", "1", "--cases", "20", "--tol", "1e-4"]),
        &out,
    )?;
    let csv = std::fs::read_to_string(out.join("gradcheck.csv")).map_err(|e| e.to_string())?;
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    let ops: Vec<&Vec<&str>> = rows.iter().filter(|r| r[0] != "negative_control").collect();
    ensure(ops.len() >= 15, || format!("only {} op kinds checked", ops.len()))?;
    let worst = ops
        .iter()
        .map(|r| r[2].parse::<f64>().unwrap_or(f64::INFINITY))
        .fold(0.0, f64::max);
    for r in &ops {
        ensure(r[3] == "true", || format!("{} failed ({})", r[0], r[2]))?;
        ensure(r[1].parse::<usize>().unwrap_or(0) >= 20, || {
            format!("{} ran {} cases", r[0], r[1])
        })?;
    }
    let control = rows
        .iter()
        .find(|r| r[0] == "negative_control")
        .ok_or("no negative control row")?;
    ensure(control[3] == "true", || "corrupted backward was not detected".into())?;
    ensure(secs < 120.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "{} op kinds x 20 shapes, worst rel err {worst:.1e}, negative control caught, {secs:.1}s",
        ops.len()
    ))
}

// ---- 6: two-moons toy ----

fn moons(tmp: &Path) -> Check {
    let out = tmp.join("moons");
    let secs = run_cli(&strs(&["moons", "--seed", "1"]), &out)?;
    let s = read_json(&out.join("summary.json"))?;
    let far = num(&s, "/augmented_far/acc")?;
    let conf = num(&s, "/naive_far_confidence")?;
    let naive = num(&s, "/naive_clean/acc")?;
    let aug = num(&s, "/augmented_clean/acc")?;
    let detail = format!(
        "far-background dustbin {far:.3}, naive far confidence {conf:.3}, clean {naive:.3}/{aug:.3}, {secs:.1}s"
    );
    ensure(far >= 0.90, || format!("dustbin rate too low; {detail}"))?;
    ensure(conf >= 0.9, || format!("naive confidence too low; {detail}"))?;
    ensure(naive >= 0.95 && aug >= 0.95, || {
        format!("clean accuracy too low; {detail}")
    })?;
    ensure(secs < 60.0, || format!("too slow; {detail}"))?;
    Ok(detail)
}

// ---- 10: CIFAR loaders (format and counts only) ----

fn cifar_pixel(record: usize, i: usize) -> u8 {
    ((record * 31 + i * 7) % 256) as u8
}

fn write_cifar(path: &Path, n: usize, first: usize, label_bytes: impl Fn(usize) -> Vec<u8>) -> Result<(), String> {
    let mut bytes = Vec::with_capacity(n * (2 + CIFAR_RECORD_PIXELS));
    for r in first..first + n {
        bytes.extend(label_bytes(r));
        bytes.extend((0..CIFAR_RECORD_PIXELS).map(|i| cifar_pixel(r, i)));
    }
    std::fs::write(path, bytes).map_err(|e| e.to_string())
}

fn pixels_match(ds: &dustbin::data::Dataset<f32>, idx: usize, record: usize) -> bool {
    ds.input(idx)
        .iter()
        .enumerate()
        .all(|(i, &v)| (f64::from(v) - cifar_pixel(record, i) as f64 / 255.0).abs() < 1e-7)
}

fn cifar(tmp: &Path) -> Check {
    let dir = tmp.join("cifar");
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let c10 = |r: usize| vec![(r % 10) as u8];
    let mut train = Vec::new();
    for b in 0..5 {
        let p = dir.join(format!("data_batch_{}.bin", b + 1));
        write_cifar(&p, 10_000, b * 10_000, c10)?;
        train.push(p);
    }
    let test = dir.join("test_batch.bin");
    write_cifar(&test, 10_000, 0, c10)?;
    let tr = load_cifar10::<f32, _>(&train).map_err(|e| e.to_string())?;
    ensure(tr.len() == 50_000, || {
        format!("CIFAR-10 train has {} records", tr.len())
    })?;
    ensure(pixels_match(&tr, 49_999, 49_999), || {
        "CIFAR-10 pixel round-trip mismatch".into()
    })?;
    drop(tr);
    let te = load_cifar10::<f32, _>(&[&test]).map_err(|e| e.to_string())?;
    ensure(te.len() == 10_000, || format!("CIFAR-10 test has {} records", te.len()))?;
    drop(te);
    for p in train.iter().chain([&test]) {
        let _ = std::fs::remove_file(p);
    }

    // Fine class f belongs to superclass f % 20, five fine classes each.
    let c100 = |r: usize| {
        let fine = r % 100;
        vec![(fine % 20) as u8, fine as u8]
    };
    let (tr100, te100) = (dir.join("train.bin"), dir.join("test.bin"));
    write_cifar(&tr100, 50_000, 0, c100)?;
    write_cifar(&te100, 10_000, 0, c100)?;
    let all = load_cifar100::<f32, _>(&[&tr100], &[]).map_err(|e| e.to_string())?;
    ensure(all.len() == 50_000, || {
        format!("CIFAR-100 train has {} records", all.len())
    })?;
    drop(all);
    let kept = load_cifar100::<f32, _>(&[&tr100], &CIFAR100_EXCLUDED_SUPERCLASSES).map_err(|e| e.to_string())?;
    let classes = kept.histogram().len();
    ensure(classes == 75, || {
        format!("{classes} fine classes remain after exclusion")
    })?;
    ensure(kept.len() == 37_500, || {
        format!("{} records remain after exclusion", kept.len())
    })?;
    drop(kept);
    let kept_test = load_cifar100::<f32, _>(&[&te100], &CIFAR100_EXCLUDED_SUPERCLASSES).map_err(|e| e.to_string())?;
    ensure(kept_test.len() == 7_500, || {
        format!("{} test records remain", kept_test.len())
    })?;
    ensure(pixels_match(&kept_test, 0, 0), || {
        "CIFAR-100 pixel round-trip mismatch".into()
    })?;
    let _ = std::fs::remove_dir_all(&dir);
    Ok(
        "CIFAR-10 50000/10000 records, CIFAR-100 25 of 100 fine classes removed (75 kept); model numbers excluded"
            .into(),
    )
}

// ---- 9: determinism ----

fn same_tree(a: &Path, b: &Path) -> Result<usize, String> {
    let list = |d: &Path| -> Result<Vec<String>, String> {
        let mut v: Vec<String> = std::fs::read_dir(d)
            .map_err(|e| e.to_string())?
            .map(|e| {
                e.map(|e| e.file_name().to_string_lossy().into_owned())
                    .map_err(|e| e.to_string())
            })
            .collect::<Result<_, _>>()?;
        v.sort();
        Ok(v)
    };
    let (fa, fb) = (list(a)?, list(b)?);
    ensure(fa == fb, || format!("file sets differ: {fa:?} vs {fb:?}"))?;
    for f in &fa {
        let (x, y) = (std::fs::read(a.join(f)), std::fs::read(b.join(f)));
        ensure(x.map_err(|e| e.to_string())? == y.map_err(|e| e.to_string())?, || {
            format!("{} differs between reruns", f)
        })?;
    }
    Ok(fa.len())
}

fn determinism(tmp: &Path, data: &Path) -> Check {
    let d = path_arg(data);
    let notmnist = path_arg(&data.join("notmnist/images-idx3-ubyte"));
    let common = |mut v: Vec<String>| {
        v.extend(strs(&["--threads", "1", "--data-dir"]));
        v.push(d.clone());
        v
    };
    let train = |arch: &str, seed: &str, augment: bool| {
        let mut a = strs(&[
            "train", "--arch", arch, "--seed", seed, "--limit", "1000", "--epochs", "1",
        ]);
        if augment {
            a.extend(strs(&[
                "--augment",
                &notmnist,
                "--n-out",
                "300",
                "--split-seed",
                SPLIT_SEED,
            ]));
        }
        common(a)
    };
    let mut experiments: Vec<(&str, Vec<String>)> = vec![
        ("train-naive", train("victim", "4", false)),
        ("train-augmented", train("victim", "5", true)),
        ("train-generator", train("generator", "6", false)),
        ("moons", common(strs(&["moons", "--seed", "2", "--grid", "60"]))),
        ("gradcheck", common(strs(&["gradcheck", "--seed", "3", "--cases", "5"]))),
    ];
    let mut total = 0;
    let mut run_pair = |name: &str, args: &[String]| -> Result<PathBuf, String> {
        let (a, b) = (tmp.join(format!("det-{name}-a")), tmp.join(format!("det-{name}-b")));
        run_cli(args, &a)?;
        run_cli(args, &b)?;
        total += same_tree(&a, &b).map_err(|e| format!("{name}: {e}"))?;
        Ok(a)
    };
    let mut dirs = Vec::new();
    for (name, args) in experiments.drain(..) {
        dirs.push(run_pair(name, &args)?);
    }
    let model = |i: usize| path_arg(&dirs[i].join("model.bin"));
    let limit = ["--limit", "300"];
    let mut attack = strs(&[
        "attack",
        "--model",
        &model(1),
        "--kind",
        "tfgs",
        "--iters",
        "2",
        "--forbid-dustbin",
    ]);
    attack.extend(strs(&limit));
    run_pair("attack", &common(attack))?;
    let mut wb = strs(&["eval-whitebox", "--naive", &model(0), "--augmented", &model(1)]);
    wb.extend(strs(&limit));
    run_pair("eval-whitebox", &common(wb))?;
    let mut bb = strs(&[
        "eval-blackbox",
        "--generator",
        &model(2),
        "--naive",
        &model(0),
        "--augmented",
        &model(1),
    ]);
    bb.extend(strs(&["--n-out", "300", "--split-seed", SPLIT_SEED]));
    bb.extend(strs(&limit));
    run_pair("eval-blackbox", &common(bb))?;
    let mut ft = strs(&[
        "features",
        "--model",
        &model(1),
        "--generator",
        &model(2),
        "--n-out",
        "300",
    ]);
    ft.extend(strs(&limit));
    run_pair("features", &common(ft))?;
    Ok(format!(
        "9 subcommand runs repeated with --threads 1, {total} output files byte-identical"
    ))
}

// ---- 7: PCA brute-force check ----

fn pca_small_d() -> Result<f64, String> {
    let (n, d) = (40, 5);
    let rows: Vec<f64> = (0..n * d)
        .map(|i| {
            let (r, c) = (i / d, i % d);
            ((r * 37 + c * 11) % 17) as f64 * (c + 1) as f64 * 0.1 + ((r * c) % 5) as f64 * 0.03
        })
        .collect();
    let pca =
        pca_fit(&Tensor::new(vec![n, d], rows.clone()).map_err(|e| e.to_string())?, 3).map_err(|e| e.to_string())?;
    let x = nalgebra::DMatrix::from_row_slice(n, d, &rows);
    let mean = x.row_mean();
    let mut c = x.clone();
    for mut r in c.row_iter_mut() {
        r -= &mean;
    }
    let cov = c.transpose() * &c / (n as f64 - 1.0);
    let mut want: Vec<f64> = nalgebra::SymmetricEigen::new(cov).eigenvalues.iter().copied().collect();
    want.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(pca
        .explained_variance
        .iter()
        .zip(&want)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

fn pca_file_checks(dir: &Path) -> Result<(), String> {
    let pca = read_json(&dir.join("pca.json"))?;
    let comps: Vec<Vec<f64>> = serde_json::from_value(pca["components"].clone()).map_err(|e| e.to_string())?;
    let vars: Vec<f64> = serde_json::from_value(pca["explained_variance"].clone()).map_err(|e| e.to_string())?;
    for i in 0..comps.len() {
        for j in 0..comps.len() {
            let dot: f64 = comps[i].iter().zip(&comps[j]).map(|(a, b)| a * b).sum();
            let want = if i == j { 1.0 } else { 0.0 };
            ensure((dot - want).abs() < 1e-8, || format!("components {i},{j} dot {dot}"))?;
        }
    }
    // Variance of each projected coordinate equals its explained variance.
    let csv = std::fs::read_to_string(dir.join("pointcloud.csv")).map_err(|e| e.to_string())?;
    let pts: Vec<[f64; 3]> = csv
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<f64> = l.split(',').take(3).map(|v| v.parse().unwrap_or(f64::NAN)).collect();
            [f[0], f[1], f[2]]
        })
        .collect();
    let n = pts.len() as f64;
    for k in 0..3 {
        let m = pts.iter().map(|p| p[k]).sum::<f64>() / n;
        let var = pts.iter().map(|p| (p[k] - m).powi(2)).sum::<f64>() / (n - 1.0);
        ensure((var - vars[k]).abs() <= 1e-8 * vars[k].abs().max(1.0), || {
            format!("pc{} variance {var} vs explained {}", k + 1, vars[k])
        })?;
    }
    Ok(())
}

// ---- MNIST-scale runs ----

struct Runs {
    naive_train_secs: f64,
    blackbox: Value,
    whitebox: Value,
    features_naive: PathBuf,
    features_aug: PathBuf,
}

fn mnist_runs(data: &Path) -> Result<Runs, String> {
    let mnist = |f: &str| data.join("mnist").join(f);
    let notmnist = data.join("notmnist/images-idx3-ubyte");
    let train_in = vec![mnist("train-images-idx3-ubyte"), mnist("train-labels-idx1-ubyte")];
    let test_in = vec![mnist("t10k-images-idx3-ubyte"), mnist("t10k-labels-idx1-ubyte")];
    for p in train_in.iter().chain(&test_in).chain([&notmnist]) {
        ensure(p.exists(), || format!("missing {}", p.display()))?;
    }
    let base = |mut v: Vec<String>| {
        v.extend(strs(&["--threads", "1", "--data-dir"]));
        v.push(path_arg(data));
        v
    };
    let (naive, naive_secs) = cached(
        "naive",
        &base(strs(&["train", "--arch", "victim", "--seed", "1"])),
        &train_in,
    )?;
    let mut aug_args = strs(&["train", "--arch", "victim", "--seed", "2", "--augment"]);
    aug_args.extend([
        path_arg(&notmnist),
        "--n-out".into(),
        N_OUT.into(),
        "--split-seed".into(),
        SPLIT_SEED.into(),
    ]);
    let mut aug_in = train_in.clone();
    aug_in.push(notmnist.clone());
    let (aug, _) = cached("augmented", &base(aug_args), &aug_in)?;
    let (gen, _) = cached(
        "generator",
        &base(strs(&["train", "--arch", "generator", "--seed", "3"])),
        &train_in,
    )?;

    let models = [naive.join("model.bin"), aug.join("model.bin"), gen.join("model.bin")];
    let mut eval_in = test_in.clone();
    eval_in.extend(models.iter().cloned());
    eval_in.push(notmnist.clone());
    let m = |i: usize| path_arg(&models[i]);
    let outdist = ["--n-out", N_OUT, "--split-seed", SPLIT_SEED];

    let mut bb = strs(&[
        "eval-blackbox",
        "--generator",
        &m(2),
        "--naive",
        &m(0),
        "--augmented",
        &m(1),
    ]);
    bb.extend(strs(&outdist));
    let (bb_dir, _) = cached("eval-blackbox", &base(bb), &eval_in)?;
    let wb = strs(&[
        "eval-whitebox",
        "--naive",
        &m(0),
        "--augmented",
        &m(1),
        "--eps",
        "0.2",
        "--iters",
        "2",
    ]);
    let (wb_dir, _) = cached("eval-whitebox", &base(wb), &eval_in)?;
    let feat = |i: usize| {
        let mut a = strs(&["features", "--model", &m(i), "--generator", &m(2)]);
        a.extend(strs(&outdist));
        base(a)
    };
    let (f_naive, _) = cached("features-naive", &feat(0), &eval_in)?;
    let (f_aug, _) = cached("features-augmented", &feat(1), &eval_in)?;
    Ok(Runs {
        naive_train_secs: naive_secs,
        blackbox: read_json(&bb_dir.join("blackbox.json"))?,
        whitebox: read_json(&wb_dir.join("whitebox.json"))?,
        features_naive: f_naive,
        features_aug: f_aug,
    })
}

fn victim<'a>(report: &'a Value, name: &str) -> Result<&'a Value, String> {
    report["victims"]
        .as_array()
        .and_then(|v| v.iter().find(|r| r["model"] == name))
        .ok_or_else(|| format!("no {name} victim in report"))
}

fn naive_victim(r: &Runs) -> Check {
    let acc = num(victim(&r.blackbox, "naive")?, "/clean/acc")?;
    let mins = r.naive_train_secs / 60.0;
    let detail = format!("clean accuracy {:.2}%, training {mins:.1} min", acc * 100.0);
    ensure(acc >= 0.99, || detail.clone())?;
    ensure(mins <= 60.0, || detail.clone())?;
    Ok(detail)
}

fn augmented_victim(r: &Runs) -> Check {
    let naive = num(victim(&r.blackbox, "naive")?, "/clean/acc")?;
    let aug = victim(&r.blackbox, "augmented")?;
    let clean = num(aug, "/clean/acc")?;
    let out = num(aug, "/out/acc")?;
    let n_out = num(aug, "/out/n")? as usize;
    let detail = format!(
        "clean {:.2}% vs naive {:.2}%, held-out dustbin rate {:.2}% on {n_out} samples",
        clean * 100.0,
        naive * 100.0,
        out * 100.0
    );
    ensure((clean - naive).abs() <= 0.005, || {
        format!("clean gap too large; {detail}")
    })?;
    ensure(n_out == 8724, || format!("held-out set size; {detail}"))?;
    ensure(out >= 0.95, || format!("dustbin rate too low; {detail}"))?;
    Ok(detail)
}

fn blackbox(r: &Runs) -> Check {
    let (n, a) = (victim(&r.blackbox, "naive")?, victim(&r.blackbox, "augmented")?);
    let mut rows = vec![r.blackbox["generator"]["clean"].clone()];
    for v in [n, a] {
        for k in ["clean", "out", "fgs", "tfgs"] {
            rows.push(v[k].clone());
        }
    }
    for row in &rows {
        let s = num(row, "/acc")? + num(row, "/dust")? + num(row, "/err")?;
        ensure((s - 1.0).abs() <= 1e-9, || format!("acc+dust+err = {s} in {row}"))?;
    }
    let g = |v: &Value, p: &str| num(v, p);
    let detail = format!(
        "Err FGS {:.2}% -> {:.2}%, T-FGS {:.2}% -> {:.2}%; augmented Dust FGS {:.2}%, T-FGS {:.2}%",
        g(n, "/fgs/err")? * 100.0,
        g(a, "/fgs/err")? * 100.0,
        g(n, "/tfgs/err")? * 100.0,
        g(a, "/tfgs/err")? * 100.0,
        g(a, "/fgs/dust")? * 100.0,
        g(a, "/tfgs/dust")? * 100.0
    );
    ensure(g(a, "/fgs/err")? < g(n, "/fgs/err")?, || {
        format!("FGS Err not reduced; {detail}")
    })?;
    ensure(g(a, "/tfgs/err")? < g(n, "/tfgs/err")?, || {
        format!("T-FGS Err not reduced; {detail}")
    })?;
    ensure(g(a, "/tfgs/dust")? >= 0.5, || format!("T-FGS Dust too low; {detail}"))?;
    ensure(g(a, "/fgs/dust")? >= 0.4, || format!("FGS Dust too low; {detail}"))?;
    Ok(detail)
}

fn whitebox(r: &Runs) -> Check {
    let (n, a) = (victim(&r.whitebox, "naive")?, victim(&r.whitebox, "augmented")?);
    let mut parts = Vec::new();
    let mut problems = Vec::new();
    for kind in ["fgs", "tfgs"] {
        let (sn, sa) = (
            num(n, &format!("/{kind}/success_rate"))?,
            num(a, &format!("/{kind}/success_rate"))?,
        );
        parts.push(format!("{kind} success {:.2}% -> {:.2}%", sn * 100.0, sa * 100.0));
        if !(0.80..=1.0).contains(&sn) {
            problems.push(format!("naive {kind} success outside [0.80, 1.00]"));
        }
        if sa > 0.6 * sn {
            problems.push(format!("augmented {kind} success above 0.6 x naive"));
        }
        for (name, v) in [("naive", n), ("augmented", a)] {
            match v[kind]["mean_distortion"].as_f64() {
                Some(d) => {
                    parts.push(format!("{name} {kind} distortion {d:.3}"));
                    if !(0.12..=0.25).contains(&d) {
                        problems.push(format!("{name} {kind} distortion outside [0.12, 0.25]"));
                    }
                }
                None => problems.push(format!("{name} {kind} distortion not reported")),
            }
        }
    }
    let detail = parts.join(", ");
    ensure(problems.is_empty(), || format!("{}; {detail}", problems.join("; ")))?;
    Ok(detail)
}

fn feature_space(r: &Runs) -> Check {
    let sn = read_json(&r.features_naive.join("separation.json"))?;
    let sa = read_json(&r.features_aug.join("separation.json"))?;
    let (nf, af) = (num(&sn, "/fgs")?, num(&sa, "/fgs")?);
    let (nt, at) = (num(&sn, "/tfgs")?, num(&sa, "/tfgs")?);
    pca_file_checks(&r.features_naive)?;
    pca_file_checks(&r.features_aug)?;
    let brute = pca_small_d()?;
    let detail = format!(
        "separation FGS {nf:.3} -> {af:.3}, T-FGS {nt:.3} -> {at:.3}; components orthonormal, small-d eigensolve max diff {brute:.1e}"
    );
    ensure(af > nf && at > nt, || format!("separation not increased; {detail}"))?;
    ensure(brute < 1e-8, || format!("eigenvalue mismatch; {detail}"))?;
    Ok(detail)
}

fn confidence(r: &Runs) -> Check {
    let mean = num(&r.blackbox, "/outdist_confidence/naive/mean")?;
    let n = num(&r.blackbox, "/outdist_confidence/naive/n")?;
    let detail = format!("naive mean max-confidence on held-out NotMNIST {mean:.3} over {n} samples");
    ensure((0.75..=0.95).contains(&mean), || detail.clone())?;
    Ok(detail)
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let data = data_dir();
    let mut report = Report { failures: 0 };
    println!("acceptance: data {}, cache {}", data.display(), cache_root().display());

    report.line(1, "gradient oracle suite", gradients(tmp.path()));
    report.line(6, "two-moons toy", moons(tmp.path()));
    report.line(10, "CIFAR loaders (numbers excluded)", cifar(tmp.path()));
    report.line(9, "determinism", determinism(tmp.path(), &data));

    match mnist_runs(&data) {
        Ok(runs) => {
            report.line(2, "MNIST naive victim", naive_victim(&runs));
            report.line(3, "MNIST augmented victim", augmented_victim(&runs));
            report.line(4, "black-box suite", blackbox(&runs));
            report.line(5, "white-box suite", whitebox(&runs));
            report.line(7, "feature-space separation and PCA", feature_space(&runs));
            report.line(8, "naive confidence on out-distribution", confidence(&runs));
        }
        Err(e) => {
            for (id, name) in [
                (2, "MNIST naive victim"),
                (3, "MNIST augmented victim"),
                (4, "black-box suite"),
                (5, "white-box suite"),
                (7, "feature-space separation and PCA"),
                (8, "naive confidence on out-distribution"),
            ] {
                report.line(id, name, Err(format!("MNIST-scale runs unavailable: {e}")));
            }
        }
    }

    println!("acceptance: {} failing criteria", report.failures);
    if report.failures > 0 {
        std::process::exit(1);
    }
}
