//! Fidelity (exact match, word-level F1) and consistency (Real, WM, W2R,
//! consistency ratio) metrics, plus report tables.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{HarnessError, Result};
use crate::rollout::{PrefixProbe, Regime, RolloutRecord};
use crate::wm::WmPrediction;

/// Ground truth for one transition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Truth {
    pub observation: String,
    pub reward: u8,
    pub terminated: bool,
}

fn normalize_em(text: &str) -> String {
    text.replace("\r\n", "\n").trim().to_string()
}

/// 1 iff observation (after CRLF folding and trimming), reward, and
/// termination all agree.
pub fn exact_match(pred: &WmPrediction, truth: &Truth) -> u8 {
    u8::from(
        normalize_em(&pred.observation) == normalize_em(&truth.observation)
            && pred.reward == truth.reward
            && pred.terminated == truth.terminated,
    )
}

fn f1_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .nfc()
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// Word-level F1 over token multisets.
pub fn word_f1(pred: &str, truth: &str) -> f64 {
    let p = f1_tokens(pred);
    let t = f1_tokens(truth);
    match (p.is_empty(), t.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for tok in &t {
        *counts.entry(tok).or_default() += 1;
    }
    let mut overlap = 0usize;
    for tok in &p {
        if let Some(c) = counts.get_mut(tok.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / p.len() as f64;
    let recall = overlap as f64 / t.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepFidelity {
    pub probes: usize,
    pub em: f64,
    pub f1_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub probes_total: usize,
    pub probes_valid: usize,
    pub em: f64,
    pub f1_mean: f64,
    /// Keyed by 1-based step index.
    pub per_step: BTreeMap<usize, StepFidelity>,
}

/// Micro-averaged fidelity over valid probes.
pub fn fidelity(probes: &[PrefixProbe]) -> FidelityReport {
    let mut em_sum = 0u64;
    let mut f1_sum = 0.0;
    let mut valid = 0usize;
    let mut steps: BTreeMap<usize, (usize, u64, f64)> = BTreeMap::new();
    for p in probes {
        let Some(pred) = &p.prediction else { continue };
        let em = exact_match(pred, &p.truth) as u64;
        let f1 = if em == 1 {
            1.0
        } else {
            word_f1(&pred.observation, &p.truth.observation)
        };
        valid += 1;
        em_sum += em;
        f1_sum += f1;
        let e = steps.entry(p.step).or_default();
        e.0 += 1;
        e.1 += em;
        e.2 += f1;
    }
    let div = |x: f64, n: usize| if n == 0 { 0.0 } else { x / n as f64 };
    FidelityReport {
        probes_total: probes.len(),
        probes_valid: valid,
        em: div(em_sum as f64, valid),
        f1_mean: div(f1_sum, valid),
        per_step: steps
            .into_iter()
            .map(|(k, (n, em, f1))| {
                (
                    k,
                    StepFidelity {
                        probes: n,
                        em: div(em as f64, n),
                        f1_mean: div(f1, n),
                    },
                )
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub real_rate: f64,
    pub wm_rate: f64,
    pub w2r_rate: f64,
    /// `w2r_rate / real_rate`; absent when the real rate is zero.
    pub cr: Option<f64>,
    pub n_episodes: usize,
    pub n_aborted: usize,
}

impl ConsistencyReport {
    pub fn from_rates(real_rate: f64, wm_rate: f64, w2r_rate: f64, n_episodes: usize) -> Self {
        ConsistencyReport {
            real_rate,
            wm_rate,
            w2r_rate,
            cr: (real_rate > 0.0).then(|| w2r_rate / real_rate),
            n_episodes,
            n_aborted: 0,
        }
    }
}

fn episode_key(r: &RolloutRecord) -> (String, String, u64) {
    let e = &r.trajectory.episode;
    (e.env_kind.to_string(), e.split.to_string(), e.seed)
}

/// Success over non-aborted records.
pub fn success_rate(records: &[RolloutRecord]) -> f64 {
    let valid: Vec<_> = records.iter().filter(|r| r.aborted.is_none()).collect();
    if valid.is_empty() {
        return 0.0;
    }
    valid.iter().filter(|r| r.success == 1).count() as f64 / valid.len() as f64
}

/// Real, WM, and W2R success rates over the same episode list.
pub fn consistency(
    real: &[RolloutRecord],
    wm: &[RolloutRecord],
    w2r: &[RolloutRecord],
) -> Result<ConsistencyReport> {
    for (set, regime) in [(real, Regime::Real), (wm, Regime::Wm), (w2r, Regime::W2r)] {
        if let Some(r) = set.iter().find(|r| r.regime != regime) {
            return Err(HarnessError::Input(format!(
                "record {} has regime {:?} in the {regime:?} set",
                r.trajectory.id(),
                r.regime
            )));
        }
    }
    let keys = |s: &[RolloutRecord]| s.iter().map(episode_key).collect::<BTreeSet<_>>();
    let (kr, kw, kx) = (keys(real), keys(wm), keys(w2r));
    if kr != kw || kr != kx {
        let all: BTreeSet<_> = kr.union(&kw).chain(kx.iter()).cloned().collect();
        let offending: Vec<String> = all
            .into_iter()
            .filter(|k| !(kr.contains(k) && kw.contains(k) && kx.contains(k)))
            .map(|(env, split, seed)| format!("{env}/{split}/{seed}"))
            .collect();
        return Err(HarnessError::Input(format!(
            "episode lists differ across regimes: {}",
            offending.join(", ")
        )));
    }
    let aborted: BTreeSet<_> = real
        .iter()
        .chain(wm)
        .chain(w2r)
        .filter(|r| r.aborted.is_some())
        .map(episode_key)
        .collect();
    let mut report = ConsistencyReport::from_rates(
        success_rate(real),
        success_rate(wm),
        success_rate(w2r),
        kr.len(),
    );
    report.n_aborted = aborted.len();
    Ok(report)
}

/// One (agent, environment, world model) cell of a report table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub agent: String,
    pub env: String,
    pub wm: String,
    pub consistency: ConsistencyReport,
    pub fidelity: Option<FidelityReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageRow {
    pub env: String,
    pub wm: String,
    pub real_rate: f64,
    pub wm_rate: f64,
    pub w2r_rate: f64,
    /// Ratio of the mean W2R rate to the mean Real rate.
    pub cr: Option<f64>,
    pub agents: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub cells: Vec<Cell>,
    pub averages: Vec<AverageRow>,
}

/// Sort cells and add one unweighted average row per (environment, world
/// model) column.
pub fn aggregate(mut cells: Vec<Cell>) -> ReportTable {
    cells.sort_by(|a, b| (&a.env, &a.wm, &a.agent).cmp(&(&b.env, &b.wm, &b.agent)));
    let mut groups: BTreeMap<(String, String), Vec<&Cell>> = BTreeMap::new();
    for c in &cells {
        groups.entry((c.env.clone(), c.wm.clone())).or_default().push(c);
    }
    let averages = groups
        .into_iter()
        .map(|((env, wm), cs)| {
            let n = cs.len() as f64;
            let mean = |f: fn(&ConsistencyReport) -> f64| {
                cs.iter().map(|c| f(&c.consistency)).sum::<f64>() / n
            };
            let real_rate = mean(|r| r.real_rate);
            let w2r_rate = mean(|r| r.w2r_rate);
            AverageRow {
                env,
                wm,
                real_rate,
                wm_rate: mean(|r| r.wm_rate),
                w2r_rate,
                cr: (real_rate > 0.0).then(|| w2r_rate / real_rate),
                agents: cs.len(),
            }
        })
        .collect();
    ReportTable { cells, averages }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_default()
}

impl ReportTable {
    /// Machine table: one row per cell, then the averages with agent "average".
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "agent", "env", "wm", "real", "wm_rate", "w2r", "cr", "em", "f1", "n",
        ])
        .map_err(csv_err)?;
        for c in &self.cells {
            let r = &c.consistency;
            w.write_record([
                c.agent.clone(),
                c.env.clone(),
                c.wm.clone(),
                format!("{:.6}", r.real_rate),
                format!("{:.6}", r.wm_rate),
                format!("{:.6}", r.w2r_rate),
                opt(r.cr),
                opt(c.fidelity.as_ref().map(|f| f.em)),
                opt(c.fidelity.as_ref().map(|f| f.f1_mean)),
                r.n_episodes.to_string(),
            ])
            .map_err(csv_err)?;
        }
        for a in &self.averages {
            w.write_record([
                "average".to_string(),
                a.env.clone(),
                a.wm.clone(),
                format!("{:.6}", a.real_rate),
                format!("{:.6}", a.wm_rate),
                format!("{:.6}", a.w2r_rate),
                opt(a.cr),
                String::new(),
                String::new(),
                a.agents.to_string(),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| HarnessError::Input(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    /// Human-readable table with percentages and two-decimal ratios.
    pub fn to_text(&self) -> String {
        let pct = |x: f64| format!("{:.2}", 100.0 * x);
        let ratio = |x: Option<f64>| x.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into());
        let mut rows: Vec<[String; 10]> = vec![["agent", "env", "wm", "Real", "WM", "W2R", "CR", "EM", "F1", "n"].map(String::from)];
        for c in &self.cells {
            let r = &c.consistency;
            let f = c.fidelity.as_ref();
            rows.push([
                c.agent.clone(),
                c.env.clone(),
                c.wm.clone(),
                pct(r.real_rate),
                pct(r.wm_rate),
                pct(r.w2r_rate),
                ratio(r.cr),
                f.map(|f| pct(f.em)).unwrap_or_else(|| "-".into()),
                f.map(|f| pct(f.f1_mean)).unwrap_or_else(|| "-".into()),
                r.n_episodes.to_string(),
            ]);
        }
        for a in &self.averages {
            rows.push([
                "Average".into(),
                a.env.clone(),
                a.wm.clone(),
                pct(a.real_rate),
                pct(a.wm_rate),
                pct(a.w2r_rate),
                ratio(a.cr),
                "-".into(),
                "-".into(),
                a.agents.to_string(),
            ]);
        }
        let mut widths = [0usize; 10];
        for row in &rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let mut out = String::new();
        for row in &rows {
            let cells: Vec<String> = row
                .iter()
                .zip(widths)
                .enumerate()
                .map(|(i, (cell, w))| if i < 3 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }
}

fn csv_err(e: csv::Error) -> HarnessError {
    HarnessError::Input(format!("csv: {e}"))
}

impl FidelityReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["step", "probes", "em", "f1"]).map_err(csv_err)?;
        w.write_record([
            "all".to_string(),
            self.probes_valid.to_string(),
            format!("{:.6}", self.em),
            format!("{:.6}", self.f1_mean),
        ])
        .map_err(csv_err)?;
        for (k, s) in &self.per_step {
            w.write_record([
                k.to_string(),
                s.probes.to_string(),
                format!("{:.6}", s.em),
                format!("{:.6}", s.f1_mean),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| HarnessError::Input(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn to_text(&self) -> String {
        format!(
            "probes {} (valid {})\nEM {:.2}%\nF1 {:.2}%\n",
            self.probes_total,
            self.probes_valid,
            100.0 * self.em,
            100.0 * self.f1_mean
        )
    }
}
