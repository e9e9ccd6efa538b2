//! Panel construction, sample pruning and within-pair trade shares.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::FeModel;

/// One observed (exporter, importer, period) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub exporter: String,
    pub importer: String,
    pub period: String,
    pub y: f64,
    pub x: Vec<f64>,
}

/// All periods of one exporter-importer pair. Absent cells carry `y = 0`,
/// zero regressors and `present = false`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairBlock {
    pub i: usize,
    pub j: usize,
    pub y: Vec<f64>,
    /// Regressors in period-major order: `x[t * k + r]`.
    pub x: Vec<f64>,
    pub present: Vec<bool>,
}

impl PairBlock {
    #[inline]
    pub fn x_at(&self, t: usize, r: usize, k: usize) -> f64 {
        self.x[t * k + r]
    }

    pub fn n_present(&self) -> usize {
        self.present.iter().filter(|&&p| p).count()
    }

    pub fn sum_y(&self) -> f64 {
        self.y.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelData {
    pub exporters: Vec<String>,
    pub importers: Vec<String>,
    pub periods: Vec<String>,
    pub regressor_names: Vec<String>,
    pub pairs: Vec<PairBlock>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PanelSummary {
    pub n_exporters: usize,
    pub n_importers: usize,
    pub n_periods: usize,
    pub n_pairs: usize,
    pub n_obs: usize,
    pub n_regressors: usize,
}

impl PanelData {
    pub fn n_exporters(&self) -> usize {
        self.exporters.len()
    }
    pub fn n_importers(&self) -> usize {
        self.importers.len()
    }
    pub fn n_periods(&self) -> usize {
        self.periods.len()
    }
    pub fn k(&self) -> usize {
        self.regressor_names.len()
    }
    pub fn n_obs(&self) -> usize {
        self.pairs.iter().map(|p| p.n_present()).sum()
    }

    pub fn summary(&self) -> PanelSummary {
        PanelSummary {
            n_exporters: self.n_exporters(),
            n_importers: self.n_importers(),
            n_periods: self.n_periods(),
            n_pairs: self.pairs.len(),
            n_obs: self.n_obs(),
            n_regressors: self.k(),
        }
    }

    pub fn mean_y(&self) -> f64 {
        let n = self.n_obs();
        if n == 0 {
            return 0.0;
        }
        self.pairs.iter().map(|p| p.sum_y()).sum::<f64>() / n as f64
    }

    /// Checks internal consistency: block shapes, index ranges and outcome
    /// values.
    pub fn validate(&self) -> Result<()> {
        let t = self.n_periods();
        let k = self.k();
        for p in &self.pairs {
            if p.i >= self.n_exporters() || p.j >= self.n_importers() {
                return Err(Error::InvalidSpec("pair index out of range".into()));
            }
            if p.y.len() != t || p.present.len() != t || p.x.len() != t * k {
                return Err(Error::InvalidSpec("pair block has wrong dimensions".into()));
            }
            for s in 0..t {
                if !p.y[s].is_finite() || p.x[s * k..(s + 1) * k].iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("panel data".into()));
                }
                if p.y[s] < 0.0 {
                    return Err(Error::NegativeOutcome {
                        exporter: self.exporters[p.i].clone(),
                        importer: self.importers[p.j].clone(),
                        period: self.periods[s].clone(),
                        value: p.y[s],
                    });
                }
            }
        }
        Ok(())
    }

    /// Keeps only the listed pairs (by position) and compacts the country
    /// index sets to the countries that still appear.
    pub fn select_pairs(&self, keep: &[usize]) -> PanelData {
        let mut exp_map = vec![usize::MAX; self.n_exporters()];
        let mut imp_map = vec![usize::MAX; self.n_importers()];
        for &q in keep {
            let p = &self.pairs[q];
            exp_map[p.i] = 0;
            imp_map[p.j] = 0;
        }
        let mut exporters = Vec::new();
        for (i, m) in exp_map.iter_mut().enumerate() {
            if *m == 0 {
                *m = exporters.len();
                exporters.push(self.exporters[i].clone());
            }
        }
        let mut importers = Vec::new();
        for (j, m) in imp_map.iter_mut().enumerate() {
            if *m == 0 {
                *m = importers.len();
                importers.push(self.importers[j].clone());
            }
        }
        let mut pairs: Vec<PairBlock> = keep
            .iter()
            .map(|&q| {
                let mut b = self.pairs[q].clone();
                b.i = exp_map[b.i];
                b.j = imp_map[b.j];
                b
            })
            .collect();
        pairs.sort_by_key(|b| (b.i, b.j));
        PanelData {
            exporters,
            importers,
            periods: self.periods.clone(),
            regressor_names: self.regressor_names.clone(),
            pairs,
        }
    }
}

/// Orders labels numerically when every label parses as a number and
/// lexicographically otherwise.
pub fn natural_order(labels: &mut Vec<String>) {
    let nums: Option<Vec<f64>> = labels.iter().map(|s| s.trim().parse::<f64>().ok()).collect();
    match nums {
        Some(vals) if vals.iter().all(|v| v.is_finite()) => {
            let mut idx: Vec<usize> = (0..labels.len()).collect();
            idx.sort_by(|&a, &b| {
                vals[a]
                    .partial_cmp(&vals[b])
                    .unwrap_or(core::cmp::Ordering::Equal)
                    .then_with(|| labels[a].cmp(&labels[b]))
            });
            let sorted: Vec<String> = idx.iter().map(|&k| labels[k].clone()).collect();
            *labels = sorted;
        }
        _ => labels.sort(),
    }
}

/// Groups records by pair and aligns them on the common period axis.
pub fn build_panel(records: &[Record], regressor_names: &[String]) -> Result<PanelData> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let k = regressor_names.len();
    let mut exp_set = BTreeMap::new();
    let mut imp_set = BTreeMap::new();
    let mut per_set = BTreeMap::new();
    for (row, r) in records.iter().enumerate() {
        if r.x.len() != k {
            return Err(Error::InconsistentRegressors { row, expected: k, found: r.x.len() });
        }
        if !r.y.is_finite() || r.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(alloc::format!("record {row}")));
        }
        if r.y < 0.0 {
            return Err(Error::NegativeOutcome {
                exporter: r.exporter.clone(),
                importer: r.importer.clone(),
                period: r.period.clone(),
                value: r.y,
            });
        }
        exp_set.insert(r.exporter.clone(), ());
        imp_set.insert(r.importer.clone(), ());
        per_set.insert(r.period.clone(), ());
    }
    let mut exporters: Vec<String> = exp_set.into_keys().collect();
    let mut importers: Vec<String> = imp_set.into_keys().collect();
    let mut periods: Vec<String> = per_set.into_keys().collect();
    natural_order(&mut exporters);
    natural_order(&mut importers);
    natural_order(&mut periods);
    let index = |v: &[String]| -> BTreeMap<String, usize> {
        v.iter().enumerate().map(|(n, s)| (s.clone(), n)).collect()
    };
    let ei = index(&exporters);
    let ii = index(&importers);
    let pi = index(&periods);
    let t = periods.len();

    let mut blocks: BTreeMap<(usize, usize), PairBlock> = BTreeMap::new();
    for r in records {
        let (i, j, s) = (ei[&r.exporter], ii[&r.importer], pi[&r.period]);
        let b = blocks.entry((i, j)).or_insert_with(|| PairBlock {
            i,
            j,
            y: vec![0.0; t],
            x: vec![0.0; t * k],
            present: vec![false; t],
        });
        if b.present[s] {
            return Err(Error::DuplicateCell {
                exporter: r.exporter.clone(),
                importer: r.importer.clone(),
                period: r.period.clone(),
            });
        }
        b.present[s] = true;
        b.y[s] = r.y;
        b.x[s * k..(s + 1) * k].copy_from_slice(&r.x);
    }
    Ok(PanelData {
        exporters,
        importers,
        periods,
        regressor_names: regressor_names.to_vec(),
        pairs: blocks.into_values().collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PruneReason {
    /// Every outcome of the pair is zero; the pair fixed effect diverges.
    AllZeroPair,
    /// Every outcome of the exporter in that period is zero.
    ZeroExporterPeriod,
    /// Every outcome of the importer in that period is zero.
    ZeroImporterPeriod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneEntry {
    pub reason: PruneReason,
    pub exporter: Option<String>,
    pub importer: Option<String>,
    pub period: Option<String>,
    /// Number of cells removed by this entry.
    pub cells: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PruneLog {
    pub entries: Vec<PruneEntry>,
    /// Pairs observed in a single period. They are kept but carry no
    /// information on the slope parameters in the three-way model.
    pub single_period_pairs: Vec<(String, String)>,
    pub rounds: usize,
}

impl PruneLog {
    pub fn cells_dropped(&self) -> usize {
        self.entries.iter().map(|e| e.cells).sum()
    }
}

/// Removes observations whose fixed effects would diverge: pairs with no
/// positive outcome (three-way model only) and exporter-period or
/// importer-period cells whose outcomes are all zero. Repeats until nothing
/// changes.
pub fn prune_sample(panel: &PanelData, model: FeModel) -> Result<(PanelData, PruneLog)> {
    let t = panel.n_periods();
    let k = panel.k();
    let mut work = panel.clone();
    let mut log = PruneLog::default();
    loop {
        log.rounds += 1;
        let mut changed = false;

        let mut exp_pos = vec![false; work.n_exporters() * t];
        let mut exp_any = vec![false; work.n_exporters() * t];
        let mut imp_pos = vec![false; work.n_importers() * t];
        let mut imp_any = vec![false; work.n_importers() * t];
        for p in &work.pairs {
            for s in 0..t {
                if p.present[s] {
                    exp_any[p.i * t + s] = true;
                    imp_any[p.j * t + s] = true;
                    if p.y[s] > 0.0 {
                        exp_pos[p.i * t + s] = true;
                        imp_pos[p.j * t + s] = true;
                    }
                }
            }
        }
        let mut cnt_exp = vec![0usize; work.n_exporters() * t];
        let mut cnt_imp = vec![0usize; work.n_importers() * t];
        for p in work.pairs.iter_mut() {
            for s in 0..t {
                if !p.present[s] {
                    continue;
                }
                let ce = exp_any[p.i * t + s] && !exp_pos[p.i * t + s];
                let ci = imp_any[p.j * t + s] && !imp_pos[p.j * t + s];
                if ce || ci {
                    if ce {
                        cnt_exp[p.i * t + s] += 1;
                    } else {
                        cnt_imp[p.j * t + s] += 1;
                    }
                    p.present[s] = false;
                    p.y[s] = 0.0;
                    for r in 0..k {
                        p.x[s * k + r] = 0.0;
                    }
                    changed = true;
                }
            }
        }
        for (c, &n) in cnt_exp.iter().enumerate() {
            if n > 0 {
                log.entries.push(PruneEntry {
                    reason: PruneReason::ZeroExporterPeriod,
                    exporter: Some(work.exporters[c / t].clone()),
                    importer: None,
                    period: Some(work.periods[c % t].clone()),
                    cells: n,
                });
            }
        }
        for (c, &n) in cnt_imp.iter().enumerate() {
            if n > 0 {
                log.entries.push(PruneEntry {
                    reason: PruneReason::ZeroImporterPeriod,
                    exporter: None,
                    importer: Some(work.importers[c / t].clone()),
                    period: Some(work.periods[c % t].clone()),
                    cells: n,
                });
            }
        }

        let mut keep = Vec::with_capacity(work.pairs.len());
        for (q, p) in work.pairs.iter().enumerate() {
            let n = p.n_present();
            if n == 0 {
                changed = true;
                continue;
            }
            if model == FeModel::ThreeWay && p.sum_y() <= 0.0 {
                log.entries.push(PruneEntry {
                    reason: PruneReason::AllZeroPair,
                    exporter: Some(work.exporters[p.i].clone()),
                    importer: Some(work.importers[p.j].clone()),
                    period: None,
                    cells: n,
                });
                changed = true;
                continue;
            }
            keep.push(q);
        }
        if keep.len() != work.pairs.len() {
            work = work.select_pairs(&keep);
        }
        if !changed {
            break;
        }
    }
    if work.pairs.is_empty() {
        return Err(Error::EmptySample);
    }
    // compact exporters/importers that lost all pairs
    let all: Vec<usize> = (0..work.pairs.len()).collect();
    let work = work.select_pairs(&all);
    for p in &work.pairs {
        if p.n_present() == 1 {
            log.single_period_pairs
                .push((work.exporters[p.i].to_string(), work.importers[p.j].to_string()));
        }
    }
    Ok((work, log))
}

/// Within-pair shares `lambda_t / sum_s lambda_s`.
pub fn theta(lambda: &[f64]) -> Result<Vec<f64>> {
    if lambda.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::NonFinite("theta input".into()));
    }
    let total: f64 = lambda.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::BadFit);
    }
    Ok(lambda.iter().map(|v| v / total).collect())
}
