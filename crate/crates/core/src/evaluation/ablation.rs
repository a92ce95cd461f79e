//! Variant comparison over shared benchmark episodes.

use std::fmt::Write as _;

use super::benchmark::{run_benchmark, BenchmarkConfig, BenchmarkReport, Split};
use super::metrics::MetricCell;
use crate::agent::{DecodeMode, ModelAgent, Policy};
use crate::error::{Error, Result};
use crate::mapper::CHANNEL_NAMES;
use crate::world::{CityWorld, Difficulty};

/// Variant axes: one variant per `lambda_rl` value, one per dropped channel,
/// and a flat-controller variant when `flat` is set.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AblationAxes {
    pub lambda_rl: Vec<f64>,
    pub drop_channels: Vec<usize>,
    pub flat: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum VariantKind {
    LambdaRl(f64),
    DropChannel(usize),
    Flat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub name: String,
    pub kind: VariantKind,
}

impl AblationAxes {
    pub fn variants(&self) -> Result<Vec<Variant>> {
        let mut out = Vec::new();
        for &l in &self.lambda_rl {
            crate::training::check_lambda_rl(l)?;
            out.push(Variant { name: format!("lambda_rl={l}"), kind: VariantKind::LambdaRl(l) });
        }
        for &c in &self.drop_channels {
            let name = CHANNEL_NAMES.get(c).ok_or_else(|| Error::Config(format!("drop channel {c} does not exist")))?;
            out.push(Variant { name: format!("drop={name}"), kind: VariantKind::DropChannel(c) });
        }
        if self.flat {
            out.push(Variant { name: "flat".into(), kind: VariantKind::Flat });
        }
        Ok(out)
    }
}

/// Trained models of one variant, keyed by training seed; `None` marks a missing checkpoint.
pub struct VariantModels<'p> {
    pub variant: Variant,
    pub models: Vec<(u64, Option<&'p Policy>)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeedResult {
    pub train_seed: u64,
    pub report: BenchmarkReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariantResult {
    pub variant: Variant,
    pub runs: Vec<SeedResult>,
    /// Training seeds without a checkpoint.
    pub untrained: Vec<u64>,
}

impl VariantResult {
    /// Seed-mean cell; `None` when no run has it.
    pub fn mean_cell(&self, split: Split, tier: Option<Difficulty>) -> Option<MetricCell> {
        let cells: Vec<&MetricCell> = self.runs.iter().filter_map(|r| r.report.cell(split, tier)).collect();
        if cells.is_empty() {
            return None;
        }
        let k = cells.len() as f64;
        let mean = |f: fn(&MetricCell) -> f64| cells.iter().map(|c| f(c)).sum::<f64>() / k;
        Some(MetricCell { n: cells.iter().map(|c| c.n).sum(), ne: mean(|c| c.ne), sr: mean(|c| c.sr), osr: mean(|c| c.osr), spl: mean(|c| c.spl) })
    }

    fn seed_cell(&self, seed: u64, split: Split, tier: Option<Difficulty>) -> Option<&MetricCell> {
        self.runs.iter().find(|r| r.train_seed == seed).and_then(|r| r.report.cell(split, tier))
    }
}

/// Mean over shared training seeds of `variant - reference` for SR and SPL.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairedDelta {
    pub sr: f64,
    pub spl: f64,
    pub pairs: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub reference: String,
    pub variants: Vec<VariantResult>,
    pub tiers: Vec<Difficulty>,
    pub eval_seeds: Vec<u64>,
}

pub const ABLATION_COLUMNS: [&str; 13] = ["variant", "status", "split", "tier", "NE", "SR", "OSR", "SPL", "n", "train_seeds", "paired", "dSR", "dSPL"];

impl AblationReport {
    pub fn variant(&self, name: &str) -> Option<&VariantResult> {
        self.variants.iter().find(|v| v.variant.name == name)
    }

    /// Paired-by-training-seed delta of `name` against the reference.
    pub fn delta(&self, name: &str, split: Split, tier: Option<Difficulty>) -> Option<PairedDelta> {
        let v = self.variant(name)?;
        let r = self.variant(&self.reference)?;
        let pairs: Vec<(&MetricCell, &MetricCell)> = v.runs.iter().filter_map(|run| Some((run.report.cell(split, tier)?, r.seed_cell(run.train_seed, split, tier)?))).collect();
        if pairs.is_empty() {
            return None;
        }
        let k = pairs.len() as f64;
        Some(PairedDelta { sr: pairs.iter().map(|(a, b)| a.sr - b.sr).sum::<f64>() / k, spl: pairs.iter().map(|(a, b)| a.spl - b.spl).sum::<f64>() / k, pairs: pairs.len() })
    }

    pub fn to_csv(&self) -> String {
        let mut out = ABLATION_COLUMNS.join(",");
        out.push('\n');
        let tiers: Vec<Option<Difficulty>> = self.tiers.iter().copied().map(Some).chain([None]).collect();
        for v in &self.variants {
            let seeds = v.runs.iter().map(|r| r.train_seed.to_string()).collect::<Vec<_>>().join(";");
            if v.runs.is_empty() {
                let _ = writeln!(out, "{},untrained,,,,,,,,,,,", v.variant.name);
                continue;
            }
            let status = if v.untrained.is_empty() { "trained" } else { "partial" };
            for split in [Split::Seen, Split::Unseen] {
                for &tier in &tiers {
                    let Some(c) = v.mean_cell(split, tier) else { continue };
                    let tier_name = tier.map_or("all", Difficulty::name);
                    let _ = write!(out, "{},{status},{},{tier_name},{:.4},{:.4},{:.4},{:.4},{},{seeds}", v.variant.name, split.name(), c.ne, c.sr, c.osr, c.spl, c.n);
                    match self.delta(&v.variant.name, split, tier) {
                        Some(d) => {
                            let _ = writeln!(out, ",{},{:.4},{:.4}", d.pairs, d.sr, d.spl);
                        }
                        None => out.push_str(",0,,\n"),
                    }
                }
            }
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<22} {:<7} {:>9} {:>7} {:>7} {:>7} {:>8} {:>8}", "variant", "split", "NE(m)", "SR", "OSR", "SPL", "dSR", "dSPL");
        for v in &self.variants {
            if v.runs.is_empty() {
                let _ = writeln!(out, "{:<22} untrained", v.variant.name);
                continue;
            }
            for split in [Split::Seen, Split::Unseen] {
                let Some(c) = v.mean_cell(split, None) else { continue };
                let d = self.delta(&v.variant.name, split, None);
                let fmt = |x: Option<f64>| x.map_or("-".to_string(), |x| format!("{x:+.2}"));
                let _ = writeln!(out, "{:<22} {:<7} {:>9.2} {:>7.2} {:>7.2} {:>7.2} {:>8} {:>8}", v.variant.name, split.name(), c.ne, c.sr, c.osr, c.spl, fmt(d.map(|d| d.sr)), fmt(d.map(|d| d.spl)));
            }
            if !v.untrained.is_empty() {
                let _ = writeln!(out, "{:<22} untrained seeds: {:?}", "", v.untrained);
            }
        }
        let _ = writeln!(out, "reference: {}", self.reference);
        let _ = writeln!(out, "eval seeds: {:?}", self.eval_seeds);
        out
    }
}

/// Benchmarks every available model on the same episodes (`eval_seeds`) and
/// pairs variants with `reference` by training seed. Missing models are
/// listed as untrained.
pub fn ablation_suite(variants: &[VariantModels<'_>], reference: &str, seen: &[CityWorld], unseen: &[CityWorld], cfg: &BenchmarkConfig, eval_seeds: &[u64]) -> Result<AblationReport> {
    if !variants.iter().any(|v| v.variant.name == reference) {
        return Err(Error::Config(format!("reference variant {reference:?} is not among the variants")));
    }
    let mut out = Vec::with_capacity(variants.len());
    for v in variants {
        let mut runs = Vec::new();
        let mut untrained = Vec::new();
        for &(seed, model) in &v.models {
            match model {
                Some(p) => {
                    let report = run_benchmark(&|| Box::new(ModelAgent::new(p, DecodeMode::Greedy)), seen, unseen, cfg, eval_seeds)?;
                    runs.push(SeedResult { train_seed: seed, report });
                }
                None => untrained.push(seed),
            }
        }
        out.push(VariantResult { variant: v.variant.clone(), runs, untrained });
    }
    Ok(AblationReport { reference: reference.to_string(), variants: out, tiers: cfg.tiers.clone(), eval_seeds: eval_seeds.to_vec() })
}
