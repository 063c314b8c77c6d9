use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::evalkit::{MetricsReport, REPORT_COLUMNS};
use crate::synthgen::Dataset;

use super::config::{Arm, RunConfig};
use super::data::Prepared;
use super::eval::evaluate;
use super::train::train;

/// A named arm; two specs may share an arm for A/A checks.
#[derive(Clone, Debug, PartialEq)]
pub struct ArmSpec {
    pub label: String,
    pub arm: Arm,
}

impl ArmSpec {
    pub fn new(arm: Arm) -> Self {
        Self { label: arm.to_string(), arm }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRow {
    pub label: String,
    pub seed: u64,
    pub test_hash: String,
    pub result: std::result::Result<MetricsReport, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricStat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArmSummary {
    pub label: String,
    pub complete: bool,
    pub metrics: BTreeMap<String, MetricStat>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CriterionCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationOutcome {
    pub rows: Vec<RunRow>,
    pub summary: Vec<ArmSummary>,
}

/// Numeric report fields by column name.
pub fn metric_values(r: &MetricsReport) -> Vec<(&'static str, f64)> {
    let recall = |k| r.recall.get(&k).copied().unwrap_or(f64::NAN);
    vec![
        ("bleu", r.bleu),
        ("bleu_x100", r.bleu * 100.0),
        ("semantic_similarity", r.semantic_similarity),
        ("recall@1", recall(1)),
        ("recall@5", recall(5)),
        ("recall@10", recall(10)),
        ("mrr", r.mrr),
        ("ctr", r.ctr),
        ("cvr", r.cvr),
        ("polysemous_top1", r.polysemous_top1),
    ]
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn summarize(specs: &[ArmSpec], rows: &[RunRow]) -> Vec<ArmSummary> {
    specs
        .iter()
        .map(|s| {
            let mine: Vec<&RunRow> = rows.iter().filter(|r| r.label == s.label).collect();
            let ok: Vec<&MetricsReport> = mine.iter().filter_map(|r| r.result.as_ref().ok()).collect();
            let mut metrics = BTreeMap::new();
            if !ok.is_empty() {
                for (i, (name, _)) in metric_values(ok[0]).into_iter().enumerate() {
                    let vals: Vec<f64> = ok.iter().map(|r| metric_values(r)[i].1).collect();
                    let (mean, std) = mean_std(&vals);
                    metrics.insert(name.to_string(), MetricStat { mean, std, n: vals.len() });
                }
            }
            ArmSummary {
                label: s.label.clone(),
                complete: !mine.is_empty() && ok.len() == mine.len(),
                metrics,
            }
        })
        .collect()
}

/// Trains and evaluates every `(arm, seed)` on one shared split. A failed
/// run is recorded and marks its arm incomplete.
pub fn run_ablation(base: &RunConfig, dataset: &Dataset, specs: &[ArmSpec], seeds: &[u64]) -> Result<AblationOutcome> {
    if specs.len() < 2 || seeds.len() < 3 {
        return Err(Error::config("an ablation needs at least 2 arms and 3 seeds"));
    }
    let mut base = base.clone();
    base.split_seed = Some(base.split_seed());
    let prep = Prepared::new(dataset.clone(), &base)?;
    let test_hash = prep.split.test_hash(&prep.keys);
    let mut rows = Vec::new();
    for spec in specs {
        for &seed in seeds {
            let cfg = RunConfig { arm: spec.arm, seed, ..base.clone() };
            let result = train(&cfg, &prep).and_then(|t| evaluate(&cfg, &prep, &t.checkpoint));
            if let Err(e) = &result {
                log::error!("{} seed {seed} failed: {e}", spec.label);
            }
            rows.push(RunRow {
                label: spec.label.clone(),
                seed,
                test_hash: test_hash.clone(),
                result: result.map_err(|e| e.to_string()),
            });
        }
    }
    let summary = summarize(specs, &rows);
    Ok(AblationOutcome { rows, summary })
}

impl AblationOutcome {
    pub fn arm(&self, label: &str) -> Option<&ArmSummary> {
        self.summary.iter().find(|s| s.label == label)
    }

    fn mean(&self, label: &str, metric: &str) -> Option<f64> {
        self.arm(label).filter(|a| a.complete)?.metrics.get(metric).map(|m| m.mean)
    }

    /// Directional checks: FULL ahead of both other arms on recall@10 by
    /// 0.02, on CTR and on semantic similarity, and ahead of ENCODER_ONLY
    /// on polysemous top-1 accuracy by 0.10.
    pub fn ordering(&self) -> Vec<CriterionCheck> {
        let mut out = Vec::new();
        let full = Arm::Full.to_string();
        let mut check = |name: String, metric: &str, other: &str, margin: f64, strict: bool| {
            let (f, o) = (self.mean(&full, metric), self.mean(other, metric));
            let (passed, detail) = match (f, o) {
                (Some(f), Some(o)) => {
                    let d = f - o;
                    (if strict { d > margin } else { d >= margin }, format!("{full} {f:.4} vs {other} {o:.4}"))
                }
                _ => (false, "arm missing or incomplete".to_string()),
            };
            out.push(CriterionCheck { name, passed, detail });
        };
        for other in [Arm::EncoderOnly, Arm::GatOnly] {
            let o = other.to_string();
            check(format!("recall@10 FULL-{o} >= 0.02"), "recall@10", &o, 0.02, false);
            check(format!("ctr FULL-{o} > 0"), "ctr", &o, 0.0, true);
            check(format!("semantic_similarity FULL-{o} > 0"), "semantic_similarity", &o, 0.0, true);
        }
        check("polysemous_top1 FULL-ENCODER_ONLY >= 0.10".into(), "polysemous_top1", &Arm::EncoderOnly.to_string(), 0.10, false);
        out
    }

    pub fn results_tsv(&self) -> String {
        let mut s = format!("label\t{}\tstatus\ttest_hash\n", REPORT_COLUMNS.join("\t"));
        for r in &self.rows {
            let (body, status) = match &r.result {
                Ok(m) => (m.tsv_row(), "ok".to_string()),
                Err(e) => {
                    let mut cells = vec![String::new(); REPORT_COLUMNS.len()];
                    cells[1] = r.seed.to_string();
                    (cells.join("\t"), format!("failed: {}", e.replace(['\t', '\n'], " ")))
                }
            };
            s.push_str(&format!("{}\t{body}\t{status}\t{}\n", r.label, r.test_hash));
        }
        s
    }

    pub fn summary_tsv(&self) -> String {
        let mut s = String::from("label\tmetric\tmean\tstd\tn\tcomplete\n");
        for a in &self.summary {
            for (m, st) in &a.metrics {
                s.push_str(&format!("{}\t{m}\t{}\t{}\t{}\t{}\n", a.label, st.mean, st.std, st.n, a.complete));
            }
            if a.metrics.is_empty() {
                s.push_str(&format!("{}\t-\tNaN\tNaN\t0\tfalse\n", a.label));
            }
        }
        s
    }

    pub fn save(&self, out: &Path) -> Result<()> {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let mut checks = String::from("criterion\tpassed\tdetail\n");
        for c in self.ordering() {
            checks.push_str(&format!("{}\t{}\t{}\n", c.name, c.passed, c.detail));
        }
        for (name, text) in [("results.tsv", self.results_tsv()), ("summary.tsv", self.summary_tsv()), ("ordering.tsv", checks)] {
            let p = out.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(p, e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(arm: &str, seed: u64, recall10: f64) -> MetricsReport {
        MetricsReport {
            arm: arm.into(),
            seed,
            bleu: 0.1 * seed as f64,
            semantic_similarity: 0.5,
            recall: [(1, 0.1), (5, 0.2), (10, recall10)].into(),
            mrr: 0.3,
            ctr: 0.1,
            cvr: 0.2,
            polysemous_top1: 0.4,
            n_queries: 5,
        }
    }

    #[test]
    fn summary_means_match_hand_averages() {
        let specs = [ArmSpec::new(Arm::Full), ArmSpec::new(Arm::EncoderOnly)];
        let mut rows = Vec::new();
        for (label, r10) in [("FULL", [0.5, 0.7, 0.9]), ("ENCODER_ONLY", [0.2, 0.2, 0.2])] {
            for (i, v) in r10.iter().enumerate() {
                rows.push(RunRow {
                    label: label.into(),
                    seed: i as u64 + 1,
                    test_hash: "h".into(),
                    result: Ok(report(label, i as u64 + 1, *v)),
                });
            }
        }
        let out = AblationOutcome { summary: summarize(&specs, &rows), rows };
        let full = out.arm("FULL").unwrap();
        assert!((full.metrics["recall@10"].mean - 0.7).abs() < 1e-12);
        assert!((full.metrics["recall@10"].std - 0.2).abs() < 1e-12);
        assert!((full.metrics["bleu"].mean - 0.2).abs() < 1e-12);
        assert_eq!(out.results_tsv().lines().count(), 7);
        let checks = out.ordering();
        assert!(checks[0].passed);
        // GAT_ONLY never ran
        assert!(!checks[3].passed);
    }

    #[test]
    fn failed_runs_mark_the_arm_incomplete() {
        let specs = [ArmSpec::new(Arm::Full)];
        let rows = vec![
            RunRow { label: "FULL".into(), seed: 1, test_hash: "h".into(), result: Ok(report("FULL", 1, 0.5)) },
            RunRow { label: "FULL".into(), seed: 2, test_hash: "h".into(), result: Err("numeric failure".into()) },
        ];
        let s = summarize(&specs, &rows);
        assert!(!s[0].complete);
        assert_eq!(s[0].metrics["recall@10"].n, 1);
    }

    #[test]
    fn ablation_preconditions() {
        let base = RunConfig::default();
        let two = [ArmSpec::new(Arm::Full), ArmSpec::new(Arm::EncoderOnly)];
        assert!(matches!(run_ablation(&base, &Dataset::default(), &two, &[1, 2]), Err(Error::Config(_))));
        assert!(matches!(run_ablation(&base, &Dataset::default(), &two[..1], &[1, 2, 3]), Err(Error::Config(_))));
    }
}
