//! Transfer-success measurement, parameter sweeps, and table emission.

use crate::attack::{attack_batch, AttackConfig, GradientSource};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::models::Classifier;
use crate::sampling::SamplerKind;
use crate::tensor::Tensor;
use crate::update::UpdateRule;

/// Surrogate x target success-rate matrix plus run metadata.
#[derive(Debug, Clone)]
pub struct TransferReport {
    pub surrogates: Vec<String>,
    pub targets: Vec<String>,
    /// Percent success per `[surrogate][target]` cell.
    pub rates: Vec<Vec<f64>>,
    /// Eligible sample count behind each cell.
    pub counts: Vec<Vec<usize>>,
    /// Set exactly where surrogate name equals target name.
    pub white_box: Vec<Vec<bool>>,
    pub fingerprint: u64,
}

/// Success rates along one swept hyperparameter.
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub parameter: String,
    pub grid: Vec<f64>,
    pub targets: Vec<String>,
    /// Percent success per `[grid point][target]`.
    pub rates: Vec<Vec<f64>>,
}

/// Which hyperparameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    SampleCount,
    Beta,
    RescaleFactor,
}

impl SweepParam {
    pub fn parse(s: &str) -> Result<SweepParam> {
        match s {
            "n" => Ok(SweepParam::SampleCount),
            "beta" => Ok(SweepParam::Beta),
            "c" => Ok(SweepParam::RescaleFactor),
            other => Err(Error::Config(format!(
                "unknown sweep parameter '{other}' (expected n, beta or c)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::SampleCount => "n",
            SweepParam::Beta => "beta",
            SweepParam::RescaleFactor => "c",
        }
    }

    fn apply(&self, base: &AttackConfig, value: f64) -> Result<AttackConfig> {
        let mut cfg = base.clone();
        match self {
            SweepParam::SampleCount => {
                if value < 0.0 || value.fract() != 0.0 {
                    return Err(Error::Config(format!(
                        "sample count must be a non-negative integer, got {value}"
                    )));
                }
                cfg.sampler.n = value as usize;
                if cfg.sampler.kind == SamplerKind::None {
                    cfg.sampler.kind = SamplerKind::DepthFirst;
                }
            }
            SweepParam::Beta => {
                cfg.sampler.beta = value;
                if cfg.sampler.kind == SamplerKind::None {
                    cfg.sampler.kind = SamplerKind::DepthFirst;
                }
            }
            SweepParam::RescaleFactor => cfg.rule = UpdateRule::rescale(value),
        }
        Ok(cfg)
    }
}

/// Mask of images the surrogate classifies correctly before any attack.
pub fn eligibility_mask(
    surrogate: &Classifier,
    images: &[Tensor],
    labels: &[usize],
) -> Result<Vec<bool>> {
    images
        .iter()
        .zip(labels)
        .map(|(x, &y)| Ok(surrogate.classify(x)? == y))
        .collect()
}

/// Percent of eligible images whose adversarial version the target
/// misclassifies. The mask marks images the surrogate got right pre-attack.
pub fn success_rate(
    target: &Classifier,
    originals: &[Tensor],
    adversarials: &[Tensor],
    labels: &[usize],
    eligible: &[bool],
) -> Result<f64> {
    if originals.len() != adversarials.len()
        || originals.len() != labels.len()
        || originals.len() != eligible.len()
    {
        return Err(Error::Data(format!(
            "misaligned evaluation inputs: {} originals, {} adversarials, {} labels, {} mask entries",
            originals.len(),
            adversarials.len(),
            labels.len(),
            eligible.len()
        )));
    }
    let total = eligible.iter().filter(|&&e| e).count();
    if total == 0 {
        return Err(Error::NoEligibleSamples);
    }
    let mut fooled = 0usize;
    for i in 0..originals.len() {
        if !eligible[i] {
            continue;
        }
        originals[i].check_same_shape(&adversarials[i])?;
        if target.classify(&adversarials[i])? != labels[i] {
            fooled += 1;
        }
    }
    Ok(100.0 * fooled as f64 / total as f64)
}

fn craft_all(
    surrogate: &Classifier,
    dataset: &LabeledDataset,
    cfg: &AttackConfig,
) -> Result<Vec<Tensor>> {
    let source = GradientSource::Single(surrogate);
    attack_batch(&source, &dataset.images, &dataset.labels, cfg, 0)
        .into_iter()
        .map(|r| r.map(|o| o.adversarial))
        .collect()
}

/// For each surrogate: craft adversarial examples once, then score them
/// against every target. Deterministic per config seed.
pub fn transfer_matrix(
    surrogates: &[(String, Classifier)],
    targets: &[(String, Classifier)],
    dataset: &LabeledDataset,
    cfg: &AttackConfig,
) -> Result<TransferReport> {
    if dataset.is_empty() {
        return Err(Error::Data("transfer evaluation needs a nonempty dataset".into()));
    }
    dataset.validate()?;
    let mut rates = Vec::with_capacity(surrogates.len());
    let mut counts = Vec::with_capacity(surrogates.len());
    let mut white_box = Vec::with_capacity(surrogates.len());
    for (surrogate_name, surrogate) in surrogates {
        let adversarials = craft_all(surrogate, dataset, cfg)?;
        let mask = eligibility_mask(surrogate, &dataset.images, &dataset.labels)?;
        let eligible = mask.iter().filter(|&&e| e).count();
        let mut row_rates = Vec::with_capacity(targets.len());
        let mut row_counts = Vec::with_capacity(targets.len());
        let mut row_white = Vec::with_capacity(targets.len());
        for (target_name, target) in targets {
            row_rates.push(success_rate(
                target,
                &dataset.images,
                &adversarials,
                &dataset.labels,
                &mask,
            )?);
            row_counts.push(eligible);
            row_white.push(surrogate_name == target_name);
        }
        rates.push(row_rates);
        counts.push(row_counts);
        white_box.push(row_white);
    }
    Ok(TransferReport {
        surrogates: surrogates.iter().map(|(n, _)| n.clone()).collect(),
        targets: targets.iter().map(|(n, _)| n.clone()).collect(),
        rates,
        counts,
        white_box,
        fingerprint: cfg.fingerprint(),
    })
}

/// One transfer evaluation per grid point, all other parameters fixed.
pub fn run_sweep(
    param: SweepParam,
    grid: &[f64],
    base: &AttackConfig,
    surrogate: &(String, Classifier),
    targets: &[(String, Classifier)],
    dataset: &LabeledDataset,
) -> Result<SweepResult> {
    if grid.is_empty() {
        return Err(Error::Config("sweep grid must be nonempty".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config(format!(
            "sweep grid must be strictly increasing, got {grid:?}"
        )));
    }
    let mut rates = Vec::with_capacity(grid.len());
    for &value in grid {
        let cfg = param.apply(base, value)?;
        let report = transfer_matrix(std::slice::from_ref(surrogate), targets, dataset, &cfg)?;
        rates.push(report.rates[0].clone());
    }
    Ok(SweepResult {
        parameter: param.name().to_string(),
        grid: grid.to_vec(),
        targets: targets.iter().map(|(n, _)| n.clone()).collect(),
        rates,
    })
}

/// Output format for reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Result<ReportFormat> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" => Ok(ReportFormat::Markdown),
            other => Err(Error::Config(format!(
                "unknown report format '{other}' (expected csv or markdown)"
            ))),
        }
    }
}

/// Render a transfer report. Rates print with exactly one decimal.
pub fn emit_report(report: &TransferReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => {
            let mut out = String::from("surrogate,target,success_rate,n,white_box\n");
            for (si, surrogate) in report.surrogates.iter().enumerate() {
                for (ti, target) in report.targets.iter().enumerate() {
                    out.push_str(&format!(
                        "{},{},{:.1},{},{}\n",
                        surrogate,
                        target,
                        report.rates[si][ti],
                        report.counts[si][ti],
                        report.white_box[si][ti]
                    ));
                }
            }
            out
        }
        ReportFormat::Markdown => {
            let mut out = String::new();
            for (si, surrogate) in report.surrogates.iter().enumerate() {
                out.push_str(&format!("### crafted on {surrogate}\n\n"));
                out.push_str("| target | success rate (%) | n | white-box |\n");
                out.push_str("|---|---:|---:|:---:|\n");
                for (ti, target) in report.targets.iter().enumerate() {
                    out.push_str(&format!(
                        "| {} | {:.1} | {} | {} |\n",
                        target,
                        report.rates[si][ti],
                        report.counts[si][ti],
                        if report.white_box[si][ti] { "*" } else { "" }
                    ));
                }
                out.push('\n');
            }
            out
        }
    }
}

/// Render a sweep as CSV: one row per (grid value, target).
pub fn emit_sweep(sweep: &SweepResult) -> String {
    let mut out = String::from("param,value,target,success_rate\n");
    for (gi, &value) in sweep.grid.iter().enumerate() {
        for (ti, target) in sweep.targets.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{:.1}\n",
                sweep.parameter, value, target, sweep.rates[gi][ti]
            ));
        }
    }
    out
}
