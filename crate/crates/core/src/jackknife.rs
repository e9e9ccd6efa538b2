//! Split-panel jackknife bias correction.
//!
//! Countries are split into two halves; the model is re-estimated on the
//! four exporter-half by importer-half subpanels and the estimates are
//! combined as `2 b - (b_aa + b_ab + b_ba + b_bb) / 4`.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{fit, FeModel, FitOptions};
use crate::panel::{prune_sample, PanelData};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    /// Number of independent partitions averaged over.
    pub replicates: usize,
    /// Split countries by their order in the panel instead of at random.
    /// Only the first replicate uses the ordered split.
    pub ordered: bool,
    pub seed: u64,
    /// Fresh random partitions tried when a subpanel cannot be estimated.
    pub max_redraws: usize,
}

impl PartitionPlan {
    pub fn ordered() -> Self {
        PartitionPlan { replicates: 1, ordered: true, seed: 0, max_redraws: 20 }
    }

    pub fn random(replicates: usize, seed: u64) -> Self {
        PartitionPlan { replicates, ordered: false, seed, max_redraws: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JackknifeResult {
    pub beta: Vec<f64>,
    pub beta_full: Vec<f64>,
    /// Bias-corrected slopes from each partition.
    pub replicate_betas: Vec<Vec<f64>>,
    /// Partitions discarded because a subpanel failed.
    pub redraws: usize,
}

/// Membership of each exporter and importer in the first half.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub exporter_in_a: Vec<bool>,
    pub importer_in_a: Vec<bool>,
}

fn split_first_half(items: &[usize], flags: &mut BTreeMap<usize, bool>) {
    let half = items.len().div_ceil(2);
    for (n, &c) in items.iter().enumerate() {
        flags.insert(c, n < half);
    }
}

/// Splits the countries into halves. Countries that appear both as exporter
/// and importer stay in the same half in both roles; countries appearing in
/// only one role are split within their own role set. With an odd count the
/// first half receives the extra country.
pub fn partition(panel: &PanelData, ordered: bool, seed: u64, draw: u64) -> Partition {
    let mut ids: BTreeMap<&str, usize> = BTreeMap::new();
    let mut order: Vec<&str> = Vec::new();
    for l in panel.exporters.iter().chain(panel.importers.iter()) {
        if !ids.contains_key(l.as_str()) {
            ids.insert(l.as_str(), order.len());
            order.push(l.as_str());
        }
    }
    let is_exp: BTreeMap<&str, bool> = panel.exporters.iter().map(|l| (l.as_str(), true)).collect();
    let is_imp: BTreeMap<&str, bool> = panel.importers.iter().map(|l| (l.as_str(), true)).collect();
    let mut both = Vec::new();
    let mut exp_only = Vec::new();
    let mut imp_only = Vec::new();
    for (c, l) in order.iter().enumerate() {
        match (is_exp.contains_key(l), is_imp.contains_key(l)) {
            (true, true) => both.push(c),
            (true, false) => exp_only.push(c),
            _ => imp_only.push(c),
        }
    }
    if !ordered {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(draw);
        both.shuffle(&mut rng);
        exp_only.shuffle(&mut rng);
        imp_only.shuffle(&mut rng);
    }
    let mut flags = BTreeMap::new();
    split_first_half(&both, &mut flags);
    split_first_half(&exp_only, &mut flags);
    split_first_half(&imp_only, &mut flags);
    Partition {
        exporter_in_a: panel.exporters.iter().map(|l| flags[&ids[l.as_str()]]).collect(),
        importer_in_a: panel.importers.iter().map(|l| flags[&ids[l.as_str()]]).collect(),
    }
}

/// The four subpanels `(a,a), (a,b), (b,a), (b,b)` (exporter half first),
/// each pruned for the three-way model.
pub fn subpanels(panel: &PanelData, part: &Partition) -> Result<[PanelData; 4]> {
    let mut out: Vec<PanelData> = Vec::with_capacity(4);
    for (ea, ia) in [(true, true), (true, false), (false, true), (false, false)] {
        let keep: Vec<usize> = panel
            .pairs
            .iter()
            .enumerate()
            .filter(|(_, p)| part.exporter_in_a[p.i] == ea && part.importer_in_a[p.j] == ia)
            .map(|(q, _)| q)
            .collect();
        if keep.is_empty() {
            return Err(Error::PartitionDegenerate(String::from("empty subpanel")));
        }
        let sub = panel.select_pairs(&keep);
        let (sub, _) = prune_sample(&sub, FeModel::ThreeWay)
            .map_err(|_| Error::PartitionDegenerate(String::from("subpanel empty after pruning")))?;
        out.push(sub);
    }
    let mut it = out.into_iter();
    Ok([it.next().unwrap(), it.next().unwrap(), it.next().unwrap(), it.next().unwrap()])
}

/// Split-panel corrected slopes for one partition.
pub fn split_estimate(panel: &PanelData, opts: &FitOptions, part: &Partition, beta_full: &[f64]) -> Result<Vec<f64>> {
    let subs = subpanels(panel, part)?;
    let k = beta_full.len();
    let mut acc = vec![0.0; k];
    for sub in subs.iter() {
        let f = fit(sub, opts)?;
        for r in 0..k {
            acc[r] += f.beta[r];
        }
    }
    Ok((0..k).map(|r| 2.0 * beta_full[r] - 0.25 * acc[r]).collect())
}

/// One partition replicate, redrawing the partition when a subpanel cannot
/// be estimated. Returns the corrected slopes and the number of redraws.
pub fn jackknife_replicate(
    panel: &PanelData,
    opts: &FitOptions,
    plan: &PartitionPlan,
    replicate: usize,
    beta_full: &[f64],
) -> Result<(Vec<f64>, usize)> {
    for attempt in 0..=plan.max_redraws {
        let ordered = plan.ordered && replicate == 0 && attempt == 0;
        let draw = ((replicate as u64) << 20) | attempt as u64;
        let part = partition(panel, ordered, plan.seed, draw);
        if let Ok(b) = split_estimate(panel, opts, &part, beta_full) {
            return Ok((b, attempt));
        }
    }
    Err(Error::JackknifeFailed { attempts: plan.max_redraws + 1 })
}

/// Averages replicate corrections into the final jackknife estimate.
pub fn combine(beta_full: &[f64], reps: Vec<(Vec<f64>, usize)>) -> JackknifeResult {
    let k = beta_full.len();
    let n = reps.len().max(1) as f64;
    let mut beta = vec![0.0; k];
    let mut redraws = 0;
    for (b, r) in &reps {
        redraws += r;
        for i in 0..k {
            beta[i] += b[i] / n;
        }
    }
    JackknifeResult {
        beta,
        beta_full: beta_full.to_vec(),
        replicate_betas: reps.into_iter().map(|(b, _)| b).collect(),
        redraws,
    }
}

pub fn jackknife_correct(
    panel: &PanelData,
    opts: &FitOptions,
    plan: &PartitionPlan,
    beta_full: &[f64],
) -> Result<JackknifeResult> {
    if opts.model != FeModel::ThreeWay {
        return Err(Error::InvalidSpec("jackknife correction is defined for the three-way model".into()));
    }
    if plan.replicates == 0 {
        return Err(Error::InvalidSpec("jackknife needs at least one partition".into()));
    }
    let mut reps = Vec::with_capacity(plan.replicates);
    for r in 0..plan.replicates {
        reps.push(jackknife_replicate(panel, opts, plan, r, beta_full)?);
    }
    Ok(combine(beta_full, reps))
}
