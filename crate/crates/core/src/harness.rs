//! Black-box transfer and white-box generation experiments, and their
//! tabular output.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attack::{generate_blackbox_set, run_attack_batch, AttackBatch, AttackConfig, AttackOutcome};
use crate::data::Dataset;
use crate::digest::sha256_dataset;
use crate::error::{Error, Result};
use crate::nn::Model;
use crate::scalar::Scalar;
use crate::train::{evaluate_threads, EvalRow};

/// A named model under evaluation.
pub struct Victim<'a, T> {
    pub name: String,
    pub model: &'a Model<T>,
}

impl<'a, T> Victim<'a, T> {
    pub fn new(name: impl Into<String>, model: &'a Model<T>) -> Self {
        Self {
            name: name.into(),
            model,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlackboxVictimRows {
    pub model: String,
    pub augmented: bool,
    pub clean: EvalRow,
    pub out: EvalRow,
    pub fgs: EvalRow,
    pub tfgs: EvalRow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorInfo {
    pub name: String,
    pub clean: EvalRow,
    pub fgs_config: AttackConfig,
    pub tfgs_config: AttackConfig,
    /// Digests of the adversarial sets every victim was evaluated on.
    pub fgs_set_sha256: String,
    pub tfgs_set_sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlackboxReport {
    pub generator: GeneratorInfo,
    pub victims: Vec<BlackboxVictimRows>,
}

/// Report plus the adversarial sets it was computed on.
pub struct BlackboxRun<T> {
    pub report: BlackboxReport,
    pub fgs: AttackBatch<T>,
    pub tfgs: AttackBatch<T>,
}

fn check_arity<T: Scalar>(name: &str, model: &Model<T>, data: &Dataset<T>) -> Result<()> {
    if model.in_classes() != data.num_in_classes() || model.input_shape() != data.sample_shape() {
        return Err(Error::invalid(
            "suite",
            format!(
                "model {name} ({} classes, input {:?}) does not match dataset {} ({} classes, samples {:?})",
                model.in_classes(),
                model.input_shape(),
                data.provenance(),
                data.num_in_classes(),
                data.sample_shape()
            ),
        ));
    }
    Ok(())
}

/// Craft FGS and T-FGS sets once on `generator` and evaluate every victim on
/// clean, out-distribution and both adversarial sets.
pub fn run_blackbox_suite<T: Scalar>(
    generator: &Victim<'_, T>,
    victims: &[Victim<'_, T>],
    clean_test: &Dataset<T>,
    out_test: &Dataset<T>,
    fgs_config: &AttackConfig,
    tfgs_config: &AttackConfig,
    threads: usize,
) -> Result<BlackboxRun<T>> {
    check_arity(&generator.name, generator.model, clean_test)?;
    for v in victims {
        check_arity(&v.name, v.model, clean_test)?;
    }
    let fgs = generate_blackbox_set(generator.model, clean_test, fgs_config, threads)?;
    let tfgs = generate_blackbox_set(generator.model, clean_test, tfgs_config, threads)?;
    let mut rows = Vec::with_capacity(victims.len());
    for v in victims {
        rows.push(BlackboxVictimRows {
            model: v.name.clone(),
            augmented: v.model.is_augmented(),
            clean: evaluate_threads(v.model, clean_test, threads)?,
            out: evaluate_threads(v.model, out_test, threads)?,
            fgs: evaluate_threads(v.model, &fgs.adversarial, threads)?,
            tfgs: evaluate_threads(v.model, &tfgs.adversarial, threads)?,
        });
    }
    let report = BlackboxReport {
        generator: GeneratorInfo {
            name: generator.name.clone(),
            clean: evaluate_threads(generator.model, clean_test, threads)?,
            fgs_config: *fgs_config,
            tfgs_config: *tfgs_config,
            fgs_set_sha256: sha256_dataset(&fgs.adversarial),
            tfgs_set_sha256: sha256_dataset(&tfgs.adversarial),
        },
        victims: rows,
    };
    Ok(BlackboxRun { report, fgs, tfgs })
}

/// Success rate and mean distortion over successful adversaries.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WhiteboxRow {
    pub n: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// `None` when no attack succeeded.
    pub mean_distortion: Option<f64>,
    /// Mean distortion over all samples, successful or not.
    pub mean_distortion_all: f64,
}

impl WhiteboxRow {
    pub fn from_outcomes(outcomes: &[AttackOutcome]) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::Data("no attack outcomes".into()));
        }
        let succ: Vec<f64> = outcomes.iter().filter(|o| o.success).map(|o| o.distortion).collect();
        let n = outcomes.len();
        Ok(Self {
            n,
            successes: succ.len(),
            success_rate: succ.len() as f64 / n as f64,
            mean_distortion: (!succ.is_empty()).then(|| succ.iter().sum::<f64>() / succ.len() as f64),
            mean_distortion_all: outcomes.iter().map(|o| o.distortion).sum::<f64>() / n as f64,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WhiteboxVictimRows {
    pub model: String,
    pub augmented: bool,
    pub fgs: WhiteboxRow,
    pub tfgs: WhiteboxRow,
    /// T-FGS configuration actually used (dustbin targets are forbidden only
    /// on augmented models).
    pub tfgs_config: AttackConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WhiteboxReport {
    pub fgs_config: AttackConfig,
    pub tfgs_config: AttackConfig,
    pub victims: Vec<WhiteboxVictimRows>,
}

pub struct WhiteboxRun<T> {
    pub report: WhiteboxReport,
    /// Per victim, FGS then T-FGS attack batches.
    pub batches: Vec<(AttackBatch<T>, AttackBatch<T>)>,
}

/// Attack every test sample of each victim with its own gradients.
pub fn run_whitebox_suite<T: Scalar>(
    victims: &[Victim<'_, T>],
    test: &Dataset<T>,
    fgs_config: &AttackConfig,
    tfgs_config: &AttackConfig,
    threads: usize,
) -> Result<WhiteboxRun<T>> {
    let mut rows = Vec::with_capacity(victims.len());
    let mut batches = Vec::with_capacity(victims.len());
    for v in victims {
        check_arity(&v.name, v.model, test)?;
        let tcfg = AttackConfig {
            forbid_dustbin_target: tfgs_config.forbid_dustbin_target && v.model.is_augmented(),
            ..*tfgs_config
        };
        let fgs = run_attack_batch(v.model, test, fgs_config, threads)?;
        let tfgs = run_attack_batch(v.model, test, &tcfg, threads)?;
        rows.push(WhiteboxVictimRows {
            model: v.name.clone(),
            augmented: v.model.is_augmented(),
            fgs: WhiteboxRow::from_outcomes(&fgs.outcomes)?,
            tfgs: WhiteboxRow::from_outcomes(&tfgs.outcomes)?,
            tfgs_config: tcfg,
        });
        batches.push((fgs, tfgs));
    }
    Ok(WhiteboxRun {
        report: WhiteboxReport {
            fgs_config: *fgs_config,
            tfgs_config: *tfgs_config,
            victims: rows,
        },
        batches,
    })
}

/// Rows that render as a fixed-column table.
pub trait TableRow: Sized {
    const HEADER: &'static [&'static str];
    fn cells(&self) -> Vec<String>;
    fn parse(cells: &[&str]) -> Result<Self>;
}

fn round_to(v: f64, places: i32) -> f64 {
    let s = 10f64.powi(places);
    (v * s).round() / s
}

fn pct(v: f64) -> f64 {
    round_to(v * 100.0, 2)
}

fn opt_cell(v: Option<f64>, places: usize) -> String {
    v.map(|v| format!("{v:.places$}")).unwrap_or_else(|| "-".into())
}

fn parse_num(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Data(format!("bad table cell {s:?}")))
}

fn parse_opt(s: &str) -> Result<Option<f64>> {
    if s.trim() == "-" {
        Ok(None)
    } else {
        parse_num(s).map(Some)
    }
}

/// Black-box table row; percentages with two decimals. Dustbin columns are
/// absent for models without a dustbin output.
#[derive(Clone, Debug, PartialEq)]
pub struct Table1Row {
    pub model: String,
    pub clean_acc: f64,
    pub out_acc: Option<f64>,
    pub fgs_acc: f64,
    pub fgs_dust: Option<f64>,
    pub fgs_err: f64,
    pub tfgs_acc: f64,
    pub tfgs_dust: Option<f64>,
    pub tfgs_err: f64,
}

impl TableRow for Table1Row {
    const HEADER: &'static [&'static str] = &[
        "Model",
        "CleanAcc",
        "OutAcc",
        "FGS_Acc",
        "FGS_Dust",
        "FGS_Err",
        "TFGS_Acc",
        "TFGS_Dust",
        "TFGS_Err",
    ];

    fn cells(&self) -> Vec<String> {
        vec![
            self.model.clone(),
            format!("{:.2}", self.clean_acc),
            opt_cell(self.out_acc, 2),
            format!("{:.2}", self.fgs_acc),
            opt_cell(self.fgs_dust, 2),
            format!("{:.2}", self.fgs_err),
            format!("{:.2}", self.tfgs_acc),
            opt_cell(self.tfgs_dust, 2),
            format!("{:.2}", self.tfgs_err),
        ]
    }

    fn parse(c: &[&str]) -> Result<Self> {
        Ok(Self {
            model: c[0].trim().to_string(),
            clean_acc: parse_num(c[1])?,
            out_acc: parse_opt(c[2])?,
            fgs_acc: parse_num(c[3])?,
            fgs_dust: parse_opt(c[4])?,
            fgs_err: parse_num(c[5])?,
            tfgs_acc: parse_num(c[6])?,
            tfgs_dust: parse_opt(c[7])?,
            tfgs_err: parse_num(c[8])?,
        })
    }
}

impl BlackboxReport {
    pub fn table(&self) -> Vec<Table1Row> {
        self.victims
            .iter()
            .map(|v| {
                let aug = |x: f64| v.augmented.then(|| pct(x));
                Table1Row {
                    model: v.model.clone(),
                    clean_acc: pct(v.clean.acc),
                    out_acc: aug(v.out.acc),
                    fgs_acc: pct(v.fgs.acc),
                    fgs_dust: aug(v.fgs.dust),
                    fgs_err: pct(v.fgs.err),
                    tfgs_acc: pct(v.tfgs.acc),
                    tfgs_dust: aug(v.tfgs.dust),
                    tfgs_err: pct(v.tfgs.err),
                }
            })
            .collect()
    }
}

/// White-box table row: success percentages with two decimals, mean
/// distortion over successes with three.
#[derive(Clone, Debug, PartialEq)]
pub struct Table2Row {
    pub model: String,
    pub fgs_success: f64,
    pub fgs_distortion: Option<f64>,
    pub tfgs_success: f64,
    pub tfgs_distortion: Option<f64>,
}

impl TableRow for Table2Row {
    const HEADER: &'static [&'static str] = &[
        "Model",
        "FGS_Success",
        "FGS_Distortion",
        "TFGS_Success",
        "TFGS_Distortion",
    ];

    fn cells(&self) -> Vec<String> {
        vec![
            self.model.clone(),
            format!("{:.2}", self.fgs_success),
            opt_cell(self.fgs_distortion, 3),
            format!("{:.2}", self.tfgs_success),
            opt_cell(self.tfgs_distortion, 3),
        ]
    }

    fn parse(c: &[&str]) -> Result<Self> {
        Ok(Self {
            model: c[0].trim().to_string(),
            fgs_success: parse_num(c[1])?,
            fgs_distortion: parse_opt(c[2])?,
            tfgs_success: parse_num(c[3])?,
            tfgs_distortion: parse_opt(c[4])?,
        })
    }
}

impl WhiteboxReport {
    pub fn table(&self) -> Vec<Table2Row> {
        self.victims
            .iter()
            .map(|v| Table2Row {
                model: v.model.clone(),
                fgs_success: pct(v.fgs.success_rate),
                fgs_distortion: v.fgs.mean_distortion.map(|d| round_to(d, 3)),
                tfgs_success: pct(v.tfgs.success_rate),
                tfgs_distortion: v.tfgs.mean_distortion.map(|d| round_to(d, 3)),
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Text,
}

pub fn render_table<R: TableRow>(rows: &[R], format: TableFormat) -> String {
    let body: Vec<Vec<String>> = rows.iter().map(|r| r.cells()).collect();
    let header: Vec<String> = R::HEADER.iter().map(|s| s.to_string()).collect();
    match format {
        TableFormat::Csv => std::iter::once(&header)
            .chain(&body)
            .map(|r| r.join(",") + "\n")
            .collect(),
        TableFormat::Text => {
            let widths: Vec<usize> = (0..header.len())
                .map(|i| {
                    std::iter::once(&header)
                        .chain(&body)
                        .map(|r| r[i].len())
                        .max()
                        .unwrap_or(0)
                })
                .collect();
            std::iter::once(&header)
                .chain(&body)
                .map(|r| {
                    let cells: Vec<String> = r
                        .iter()
                        .zip(&widths)
                        .enumerate()
                        .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                        .collect();
                    cells.join("  ") + "\n"
                })
                .collect()
        }
    }
}

pub fn emit_tables<R: TableRow>(rows: &[R], path: impl AsRef<Path>, format: TableFormat) -> Result<()> {
    let path = path.as_ref();
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(render_table(rows, format).as_bytes()))
        .map_err(|e| Error::io(path, e))
}

/// Parse a table written with [`TableFormat::Csv`].
pub fn parse_table_csv<R: TableRow>(text: &str) -> Result<Vec<R>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Data("empty table".into()))?;
    if header.split(',').collect::<Vec<_>>() != R::HEADER {
        return Err(Error::Data(format!("unexpected table header {header:?}")));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let cells: Vec<&str> = l.split(',').collect();
            if cells.len() != R::HEADER.len() {
                return Err(Error::Data(format!("row {l:?} has {} cells", cells.len())));
            }
            R::parse(&cells)
        })
        .collect()
}
