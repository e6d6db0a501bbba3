//! Subcommand implementations. Each command loads and computes everything
//! first, then stages its outputs and commits them with a manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dustbin::attack::{generate_blackbox_set, run_attack_batch, write_sidecar_csv, AttackConfig, AttackKind};
use dustbin::data::{
    assemble_augmented, load_idx, load_outdist_images, save_idx, split_out, write_points_csv, Dataset, MOONS_BOX_SCALE,
};
use dustbin::features::{build_pointcloud, separation_score, write_pointcloud_csv, Category};
use dustbin::gradcheck::{negative_control, op_suite};
use dustbin::harness::{emit_tables, run_blackbox_suite, run_whitebox_suite, TableFormat, Victim, WhiteboxRow};
use dustbin::nn::{build_generator_cnn, build_victim_cnn, load_model, save_model, Model};
use dustbin::toy::{decision_raster, run_moons, write_raster_csv, MoonsConfig};
use dustbin::train::{confidence_stats, train_with_observer, write_history_csv, TrainConfig};
use dustbin::Scalar;
use serde::Serialize;

use crate::manifest::{Manifest, Staging};
use crate::{
    Arch, AttackArgs, BlackboxArgs, Cli, Command, FeaturesArgs, Global, GradcheckArgs, MoonsArgs, OutDist, Precision,
    TestData, TrainArgs, WhiteboxArgs,
};

#[derive(Debug)]
pub enum Failure {
    Core(dustbin::Error),
    Usage(String),
    /// The command ran to completion but a numerical check failed.
    Check(String),
}

impl From<dustbin::Error> for Failure {
    fn from(e: dustbin::Error) -> Self {
        Failure::Core(e)
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Core(e) => write!(f, "{e}"),
            Failure::Usage(m) | Failure::Check(m) => f.write_str(m),
        }
    }
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Core(dustbin::Error::InvalidArgument { .. }) => 1,
            Failure::Core(e) if e.is_numerical() => 3,
            Failure::Core(_) => 2,
            Failure::Check(_) => 3,
        }
    }
}

type Res<T = ()> = std::result::Result<T, Failure>;

pub fn run(cli: &Cli) -> Res {
    if cli.global.threads == 0 {
        return Err(Failure::Usage("--threads must be at least 1".into()));
    }
    match cli.global.precision {
        Precision::F32 => dispatch::<f32>(&cli.global, &cli.command),
        Precision::F64 => dispatch::<f64>(&cli.global, &cli.command),
    }
}

fn dispatch<T: Scalar>(g: &Global, cmd: &Command) -> Res {
    match cmd {
        Command::Train(a) => train::<T>(g, a),
        Command::Attack(a) => attack::<T>(g, a),
        Command::EvalBlackbox(a) => eval_blackbox::<T>(g, a),
        Command::EvalWhitebox(a) => eval_whitebox::<T>(g, a),
        Command::Features(a) => features::<T>(g, a),
        Command::Moons(a) => moons::<T>(g, a),
        Command::Gradcheck(a) => gradcheck(g, a),
    }
}

fn or_default(p: &Option<PathBuf>, g: &Global, rel: &str) -> PathBuf {
    p.clone().unwrap_or_else(|| g.data_dir.join(rel))
}

fn limited<T: Scalar>(ds: Dataset<T>, limit: Option<usize>) -> Dataset<T> {
    match limit {
        Some(n) if n < ds.len() => ds.take(n),
        _ => ds,
    }
}

fn load_test<T: Scalar>(g: &Global, t: &TestData, m: &mut Manifest) -> Res<Dataset<T>> {
    let images = or_default(&t.test_images, g, "mnist/t10k-images-idx3-ubyte");
    let labels = or_default(&t.test_labels, g, "mnist/t10k-labels-idx1-ubyte");
    let ds = load_idx::<T>(&images, &labels)?;
    m.input("test_images", &images)?;
    m.input("test_labels", &labels)?;
    Ok(limited(ds, t.limit))
}

/// Held-out part of the out-distribution set (the complement of the samples
/// drawn for augmentation).
fn load_heldout<T: Scalar>(g: &Global, o: &OutDist, k: usize, m: &mut Manifest) -> Res<Dataset<T>> {
    let images = or_default(&o.outdist_images, g, "notmnist/images-idx3-ubyte");
    let out = load_outdist_images::<T>(&images, k)?;
    m.input("outdist_images", &images)?;
    let (_, held) = split_out(&out, o.n_out, o.split_seed)?;
    if held.is_empty() {
        return Err(Failure::Usage(format!(
            "--n-out {} leaves no held-out samples out of {}",
            o.n_out,
            out.len()
        )));
    }
    Ok(held)
}

fn load_net<T: Scalar>(role: &str, path: &Path, m: &mut Manifest) -> Res<Model<T>> {
    let model = load_model::<T>(path)?;
    m.input(role, path)?;
    Ok(model)
}

fn json<S: Serialize>(v: &S) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

fn train<T: Scalar>(g: &Global, a: &TrainArgs) -> Res {
    let mut m = Manifest::new("train", g, a, Some(a.seed));
    let images = or_default(&a.train_images, g, "mnist/train-images-idx3-ubyte");
    let labels = or_default(&a.train_labels, g, "mnist/train-labels-idx1-ubyte");
    let data = limited(load_idx::<T>(&images, &labels)?, a.limit);
    m.input("train_images", &images)?;
    m.input("train_labels", &labels)?;
    let k = data.num_in_classes();
    let (mut model, data) = match (a.arch, &a.augment) {
        (Arch::Generator, Some(_)) => {
            return Err(Failure::Usage("the generator network cannot be augmented".into()));
        }
        (Arch::Generator, None) => (build_generator_cnn::<T>(data.sample_shape(), k, a.seed)?, data),
        (Arch::Victim, None) => (build_victim_cnn::<T>(data.sample_shape(), k, false, a.seed)?, data),
        (Arch::Victim, Some(path)) => {
            let out = load_outdist_images::<T>(path, k)?;
            m.input("augment_images", path)?;
            let aug = assemble_augmented(&data, &out, a.n_out, a.split_seed)?;
            (build_victim_cnn::<T>(data.sample_shape(), k, true, a.seed)?, aug)
        }
    };
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        lr_decay: a.lr_decay,
        decay_at: a.decay_at,
        momentum: a.momentum,
        weight_decay: a.weight_decay,
        seed: a.seed,
        ..TrainConfig::default()
    };
    eprintln!("training {} on {} samples", model.architecture().name, data.len());
    let history = train_with_observer(&mut model, &data, &cfg, |r| {
        eprintln!("epoch {} loss {:.5} train_acc {:.4}", r.epoch, r.loss, r.train_acc);
    })?;

    let mut s = Staging::new(&g.out)?;
    save_model(&model, s.file("model.bin"))?;
    write_history_csv(&history, s.file("history.csv"))?;
    s.commit(m)?;
    Ok(())
}

#[derive(Serialize)]
struct AttackSummary {
    model: String,
    config: AttackConfig,
    #[serde(flatten)]
    row: WhiteboxRow,
}

fn attack<T: Scalar>(g: &Global, a: &AttackArgs) -> Res {
    let mut m = Manifest::new("attack", g, a, None);
    let model = load_net::<T>("model", &a.model, &mut m)?;
    let test = load_test::<T>(g, &a.test, &mut m)?;
    let kind: AttackKind = a.kind.parse()?;
    let cfg = AttackConfig {
        clip: !a.no_clip,
        ..AttackConfig::of_kind(kind, a.eps, a.iters, a.forbid_dustbin)
    };
    let batch = run_attack_batch(&model, &test, &cfg, g.threads)?;
    let summary = AttackSummary {
        model: model.architecture().name.clone(),
        config: cfg,
        row: WhiteboxRow::from_outcomes(&batch.outcomes)?,
    };

    let mut s = Staging::new(&g.out)?;
    let (img, lab) = (s.file("adversarial-images-idx3"), s.file("adversarial-labels-idx1"));
    save_idx(&batch.adversarial, img, lab)?;
    write_sidecar_csv(&batch.outcomes, s.file("attack.csv"))?;
    s.write("summary.json", json(&summary))?;
    s.commit(m)?;
    Ok(())
}

#[derive(Serialize)]
struct BlackboxOutput<'a> {
    #[serde(flatten)]
    report: &'a dustbin::harness::BlackboxReport,
    /// Max-confidence summary of each victim on the held-out
    /// out-distribution samples.
    outdist_confidence: BTreeMap<String, dustbin::train::ConfidenceStats>,
}

fn eval_blackbox<T: Scalar>(g: &Global, a: &BlackboxArgs) -> Res {
    let mut m = Manifest::new("eval-blackbox", g, a, None);
    let generator = load_net::<T>("generator", &a.generator, &mut m)?;
    let naive = load_net::<T>("naive", &a.naive, &mut m)?;
    let augmented = load_net::<T>("augmented", &a.augmented, &mut m)?;
    let test = load_test::<T>(g, &a.test, &mut m)?;
    let held = load_heldout::<T>(g, &a.outdist, test.num_in_classes(), &mut m)?;
    let victims = [Victim::new("naive", &naive), Victim::new("augmented", &augmented)];
    let run = run_blackbox_suite(
        &Victim::new("generator", &generator),
        &victims,
        &test,
        &held,
        &AttackConfig::fgs(a.eps, 1),
        &AttackConfig::tfgs(a.eps, 1, false),
        g.threads,
    )?;
    let mut outdist_confidence = BTreeMap::new();
    for v in &victims {
        outdist_confidence.insert(v.name.clone(), confidence_stats(v.model, &held, false, g.threads)?);
    }
    let table = run.report.table();

    let mut s = Staging::new(&g.out)?;
    emit_tables(&table, s.file("table1.csv"), TableFormat::Csv)?;
    emit_tables(&table, s.file("table1.txt"), TableFormat::Text)?;
    let out = BlackboxOutput {
        report: &run.report,
        outdist_confidence,
    };
    s.write("blackbox.json", json(&out))?;
    for (name, batch) in [("fgs", &run.fgs), ("tfgs", &run.tfgs)] {
        let img = s.file(&format!("{name}-images-idx3"));
        let lab = s.file(&format!("{name}-labels-idx1"));
        save_idx(&batch.adversarial, img, lab)?;
    }
    s.commit(m)?;
    Ok(())
}

fn eval_whitebox<T: Scalar>(g: &Global, a: &WhiteboxArgs) -> Res {
    let mut m = Manifest::new("eval-whitebox", g, a, None);
    let naive = load_net::<T>("naive", &a.naive, &mut m)?;
    let augmented = load_net::<T>("augmented", &a.augmented, &mut m)?;
    let test = load_test::<T>(g, &a.test, &mut m)?;
    let victims = [Victim::new("naive", &naive), Victim::new("augmented", &augmented)];
    let run = run_whitebox_suite(
        &victims,
        &test,
        &AttackConfig::fgs(a.eps, a.iters),
        &AttackConfig::tfgs(a.eps, a.iters, true),
        g.threads,
    )?;
    let table = run.report.table();

    let mut s = Staging::new(&g.out)?;
    emit_tables(&table, s.file("table2.csv"), TableFormat::Csv)?;
    emit_tables(&table, s.file("table2.txt"), TableFormat::Text)?;
    s.write("whitebox.json", json(&run.report))?;
    for (v, (fgs, tfgs)) in victims.iter().zip(&run.batches) {
        write_sidecar_csv(&fgs.outcomes, s.file(&format!("whitebox-{}-fgs.csv", v.name)))?;
        write_sidecar_csv(&tfgs.outcomes, s.file(&format!("whitebox-{}-tfgs.csv", v.name)))?;
    }
    s.commit(m)?;
    Ok(())
}

#[derive(Serialize)]
struct Separation {
    model: String,
    augmented: bool,
    outdist: f64,
    fgs: f64,
    tfgs: f64,
}

fn features<T: Scalar>(g: &Global, a: &FeaturesArgs) -> Res {
    let mut m = Manifest::new("features", g, a, None);
    let model = load_net::<T>("model", &a.model, &mut m)?;
    let generator = load_net::<T>("generator", &a.generator, &mut m)?;
    let test = load_test::<T>(g, &a.test, &mut m)?;
    let held = limited(
        load_heldout::<T>(g, &a.outdist, test.num_in_classes(), &mut m)?,
        a.test.limit,
    );
    let fgs = generate_blackbox_set(&generator, &test, &AttackConfig::fgs(a.eps, 1), g.threads)?;
    let tfgs = generate_blackbox_set(&generator, &test, &AttackConfig::tfgs(a.eps, 1, false), g.threads)?;
    let (cloud, pca, feats) = build_pointcloud(&model, &test, &held, &fgs.adversarial, &tfgs.adversarial, g.threads)?;
    let sep = Separation {
        model: model.architecture().name.clone(),
        augmented: model.is_augmented(),
        outdist: separation_score(&feats, Category::OutDist)?,
        fgs: separation_score(&feats, Category::Fgs)?,
        tfgs: separation_score(&feats, Category::Tfgs)?,
    };

    let mut s = Staging::new(&g.out)?;
    write_pointcloud_csv(&cloud, s.file("pointcloud.csv"))?;
    pca.save(s.file("pca.json"))?;
    s.write("separation.json", json(&sep))?;
    s.commit(m)?;
    Ok(())
}

fn moons<T: Scalar>(g: &Global, a: &MoonsArgs) -> Res {
    let m = Manifest::new("moons", g, a, Some(a.seed));
    let defaults = MoonsConfig::default();
    let cfg = MoonsConfig {
        n_per_class: a.n,
        noise: a.noise,
        n_out: a.n_out,
        exclusion_radius: a.radius,
        grid: a.grid,
        train: TrainConfig {
            epochs: a.epochs,
            batch_size: a.batch_size,
            learning_rate: a.lr,
            ..defaults.train.clone()
        },
        ..defaults
    };
    let run = run_moons::<T>(&cfg, a.seed)?;
    let naive_raster = decision_raster(&run.naive, cfg.grid, MOONS_BOX_SCALE)?;
    let aug_raster = decision_raster(&run.augmented, cfg.grid, MOONS_BOX_SCALE)?;
    eprintln!(
        "naive clean {:.4}, augmented clean {:.4}, far-background dustbin {:.4}",
        run.summary.naive_clean.acc, run.summary.augmented_clean.acc, run.summary.augmented_far.acc
    );

    let mut s = Staging::new(&g.out)?;
    write_points_csv(&run.train_set, s.file("moons.csv"))?;
    save_model(&run.naive, s.file("naive.bin"))?;
    save_model(&run.augmented, s.file("augmented.bin"))?;
    write_raster_csv(&naive_raster, None, s.file("regions-naive.csv"))?;
    write_raster_csv(
        &aug_raster,
        run.augmented.dustbin_index(),
        s.file("regions-augmented.csv"),
    )?;
    s.write("summary.json", json(&run.summary))?;
    s.commit(m)?;
    Ok(())
}

fn gradcheck(g: &Global, a: &GradcheckArgs) -> Res {
    let m = Manifest::new("gradcheck", g, a, Some(a.seed));
    let checks = op_suite(a.cases, a.seed, a.step, a.tol)?;
    let control = negative_control(a.step, a.tol)?;
    let mut csv = String::from("op,cases,max_rel_error,pass\n");
    for c in &checks {
        csv.push_str(&format!("{},{},{:e},{}\n", c.op, c.cases, c.max_rel_error, c.pass));
    }
    // The corrupted backward must be caught, so "pass" here means it failed.
    csv.push_str(&format!(
        "negative_control,1,{:e},{}\n",
        control.max_rel_error, !control.pass
    ));
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.op).collect();

    let mut s = Staging::new(&g.out)?;
    s.write("gradcheck.csv", csv)?;
    s.commit(m)?;
    if !failed.is_empty() {
        return Err(Failure::Check(format!(
            "gradient check failed for {}",
            failed.join(", ")
        )));
    }
    if control.pass {
        return Err(Failure::Check("negative control was not detected".into()));
    }
    Ok(())
}
