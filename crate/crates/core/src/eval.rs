//! Metrics, the agreement-regime breakdown and report rendering.

use std::fmt::Write as _;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::baselines::{confidence_vote_predict, majority_vote_predict, single_agent_predict};
use crate::domain::{AgentOutput, ConfidenceSource, FeatureVector, Lens};
use crate::error::{Error, Result};
use crate::features::{confidence_gap, labels_and_confidences, most_confident_agent, order_by_lens};
use crate::meta::MetaModel;

pub const DEFAULT_DELTA: f64 = 0.1;

/// Binary confusion counts with class 1 as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub balanced_accuracy: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ConfusionMatrix {
    /// Builds from `(prediction, target)` pairs.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (u8, u8)>) -> Self {
        let mut cm = Self::default();
        for (pred, target) in pairs {
            match (pred == 1, target == 1) {
                (true, true) => cm.tp += 1,
                (true, false) => cm.fp += 1,
                (false, false) => cm.tn += 1,
                (false, true) => cm.fn_ += 1,
            }
        }
        cm
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// True when one class is absent from the targets, so its recall is
    /// undefined and reported as 0.
    pub fn has_undefined_recall(&self) -> bool {
        self.tp + self.fn_ == 0 || self.tn + self.fp == 0
    }

    /// Accuracy, macro F1 over the two classes, and balanced accuracy.
    /// Zero-denominator F1 and recall are 0.
    pub fn metrics(&self) -> Result<Metrics> {
        let n = self.total();
        if n == 0 {
            return Err(Error::RejectedInput("metrics of an empty confusion matrix".into()));
        }
        let recall_pos = ratio(self.tp, self.tp + self.fn_);
        let recall_neg = ratio(self.tn, self.tn + self.fp);
        let f1_pos = ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_);
        let f1_neg = ratio(2 * self.tn, 2 * self.tn + self.fn_ + self.fp);
        Ok(Metrics {
            accuracy: ratio(self.tp + self.tn, n),
            macro_f1: 0.5 * (f1_pos + f1_neg),
            balanced_accuracy: 0.5 * (recall_pos + recall_neg),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Unanimous,
    SplitDominant,
    HighConflict,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Self::Unanimous, Self::SplitDominant, Self::HighConflict];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Unanimous => "unanimous",
            Self::SplitDominant => "split_dominant",
            Self::HighConflict => "high_conflict",
        }
    }
}

/// Unanimous when all labels match. A 2-1 split whose most confident agent
/// sits on the majority side with a top-two gap of at least `delta` is
/// split-dominant. Everything else is high conflict.
pub fn regime_of(outputs: &[&AgentOutput], delta: f64) -> Result<Regime> {
    let ordered = order_by_lens(outputs)?;
    let (labels, confs) = labels_and_confidences(&ordered);
    if labels[0] == labels[1] && labels[1] == labels[2] {
        return Ok(Regime::Unanimous);
    }
    let majority = if labels[0] == labels[1] || labels[0] == labels[2] {
        Some(labels[0])
    } else if labels[1] == labels[2] {
        Some(labels[1])
    } else {
        None
    };
    let dominant = majority.is_some_and(|m| {
        labels[most_confident_agent(confs)] == m && confidence_gap(confs) >= delta
    });
    Ok(if dominant {
        Regime::SplitDominant
    } else {
        Regime::HighConflict
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Agent(Lens),
    MajorityVote,
    ConfidenceVote,
    Aggregator,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Agent(Lens::Performance),
        Method::Agent(Lens::Guidance),
        Method::Agent(Lens::Risk),
        Method::MajorityVote,
        Method::ConfidenceVote,
        Method::Aggregator,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Method::Agent(Lens::Performance) => "performance_agent",
            Method::Agent(Lens::Guidance) => "guidance_agent",
            Method::Agent(Lens::Risk) => "risk_agent",
            Method::MajorityVote => "majority_vote",
            Method::ConfidenceVote => "confidence_vote",
            Method::Aggregator => "aggregator",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Method::Agent(Lens::Performance) => "Performance agent",
            Method::Agent(Lens::Guidance) => "Guidance agent",
            Method::Agent(Lens::Risk) => "Risk agent",
            Method::MajorityVote => "Majority vote",
            Method::ConfidenceVote => "Conf. vote",
            Method::Aggregator => "Aggregator",
        }
    }
}

/// Regime name to method name to balanced accuracy; `None` for an empty
/// regime.
pub type RegimeTable = IndexMap<String, IndexMap<String, Option<f64>>>;

/// One test disclosure with its three outputs in lens order.
#[derive(Debug, Clone)]
pub struct EvalCase<'a> {
    pub disclosure_id: &'a str,
    pub outputs: [&'a AgentOutput; 3],
    pub features: FeatureVector,
    pub target: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub test: usize,
    pub positive_targets: usize,
    pub regimes: IndexMap<String, usize>,
    pub fallback_outputs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaSensitivity {
    pub delta: f64,
    pub counts: IndexMap<String, usize>,
    pub balanced_accuracy: RegimeTable,
}

/// A disclosure where the aggregator is right and majority vote is wrong.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correction {
    pub disclosure_id: String,
    pub regime: Regime,
    pub labels: [i8; 3],
    pub confidences: [f64; 3],
    pub target: u8,
    pub majority_vote: u8,
    pub confidence_vote: u8,
    pub aggregator: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub methods: IndexMap<String, Metrics>,
    pub regimes: RegimeTable,
    pub counts: Counts,
    pub delta: f64,
    pub delta_sensitivity: Vec<DeltaSensitivity>,
    pub corrections: Vec<Correction>,
    pub warnings: Vec<String>,
}

impl EvalReport {
    pub fn method(&self, m: Method) -> Option<&Metrics> {
        self.methods.get(m.key())
    }

    /// Aggregator minus majority-vote balanced accuracy within a regime.
    pub fn regime_gain(&self, regime: Regime) -> Option<f64> {
        let row = self.regimes.get(regime.as_str())?;
        Some(row.get(Method::Aggregator.key())?.as_ref()? - row.get(Method::MajorityVote.key())?.as_ref()?)
    }
}

struct Predictions {
    by_method: Vec<Vec<u8>>,
}

fn predict_all(cases: &[EvalCase<'_>], model: &MetaModel) -> Result<Predictions> {
    let mut by_method = vec![Vec::with_capacity(cases.len()); Method::ALL.len()];
    for case in cases {
        for (slot, method) in Method::ALL.iter().enumerate() {
            let p = match method {
                Method::Agent(lens) => single_agent_predict(case.outputs[lens.index()]),
                Method::MajorityVote => majority_vote_predict(&case.outputs)?,
                Method::ConfidenceVote => confidence_vote_predict(&case.outputs),
                Method::Aggregator => model.predict(&case.features),
            };
            by_method[slot].push(p);
        }
    }
    Ok(Predictions { by_method })
}

fn regime_table(
    cases: &[EvalCase<'_>],
    preds: &Predictions,
    regimes: &[Regime],
    warnings: &mut Vec<String>,
    label: &str,
) -> (IndexMap<String, usize>, RegimeTable) {
    let mut counts = IndexMap::new();
    let mut table = IndexMap::new();
    for regime in Regime::ALL {
        let members: Vec<usize> = (0..cases.len()).filter(|&i| regimes[i] == regime).collect();
        counts.insert(regime.as_str().to_string(), members.len());
        let mut row = IndexMap::new();
        for method in [Method::MajorityVote, Method::Aggregator] {
            let slot = Method::ALL.iter().position(|m| *m == method).expect("listed");
            let cm = ConfusionMatrix::from_pairs(
                members.iter().map(|&i| (preds.by_method[slot][i], cases[i].target)),
            );
            let value = cm.metrics().ok().map(|m| m.balanced_accuracy);
            if value.is_none() && method == Method::MajorityVote {
                warnings.push(format!("{label}regime {} is empty", regime.as_str()));
            } else if cm.has_undefined_recall() && method == Method::MajorityVote {
                warnings.push(format!(
                    "{label}regime {} has a single target class; its recall is reported as 0",
                    regime.as_str()
                ));
            }
            row.insert(method.key().to_string(), value);
        }
        table.insert(regime.as_str().to_string(), row);
    }
    (counts, table)
}

/// Scores every method on the test cases and breaks majority vote and the
/// aggregator down by agreement regime.
pub fn evaluate(
    cases: &[EvalCase<'_>],
    model: &MetaModel,
    delta: f64,
    sensitivity: &[f64],
) -> Result<EvalReport> {
    if cases.is_empty() {
        return Err(Error::RejectedInput("no test cases to evaluate".into()));
    }
    let preds = predict_all(cases, model)?;
    let mut warnings = Vec::new();

    let mut methods = IndexMap::new();
    for (slot, method) in Method::ALL.iter().enumerate() {
        let cm = ConfusionMatrix::from_pairs(
            preds.by_method[slot].iter().zip(cases).map(|(&p, c)| (p, c.target)),
        );
        if cm.has_undefined_recall() && slot == 0 {
            warnings.push("test targets contain a single class; its recall is reported as 0".into());
        }
        methods.insert(method.key().to_string(), cm.metrics()?);
    }

    let regimes_at = |d: f64| -> Result<Vec<Regime>> {
        cases.iter().map(|c| regime_of(&c.outputs, d)).collect()
    };
    let regimes = regimes_at(delta)?;
    let (regime_counts, regime_table_main) = regime_table(cases, &preds, &regimes, &mut warnings, "");

    let mut delta_sensitivity = Vec::new();
    for &d in sensitivity {
        let r = regimes_at(d)?;
        let mut scratch = Vec::new();
        let (counts, balanced_accuracy) = regime_table(cases, &preds, &r, &mut scratch, "");
        delta_sensitivity.push(DeltaSensitivity {
            delta: d,
            counts,
            balanced_accuracy,
        });
    }

    let slot = |m: Method| Method::ALL.iter().position(|x| *x == m).expect("listed");
    let (mv, cv, agg) = (
        slot(Method::MajorityVote),
        slot(Method::ConfidenceVote),
        slot(Method::Aggregator),
    );
    let corrections = cases
        .iter()
        .enumerate()
        .filter(|(i, c)| preds.by_method[agg][*i] == c.target && preds.by_method[mv][*i] != c.target)
        .map(|(i, c)| Correction {
            disclosure_id: c.disclosure_id.to_string(),
            regime: regimes[i],
            labels: c.outputs.map(|o| o.label.code()),
            confidences: c.outputs.map(|o| o.confidence),
            target: c.target,
            majority_vote: preds.by_method[mv][i],
            confidence_vote: preds.by_method[cv][i],
            aggregator: preds.by_method[agg][i],
        })
        .collect();

    let fallback_outputs = cases
        .iter()
        .flat_map(|c| c.outputs)
        .filter(|o| o.confidence_source == ConfidenceSource::Fallback)
        .count();

    Ok(EvalReport {
        methods,
        regimes: regime_table_main,
        counts: Counts {
            test: cases.len(),
            positive_targets: cases.iter().filter(|c| c.target == 1).count(),
            regimes: regime_counts,
            fallback_outputs,
        },
        delta,
        delta_sensitivity,
        corrections,
        warnings,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "  -  ".into())
}

/// Plain-text rendering: the method table, then the regime table, then
/// a short list of corrected disclosures.
pub fn render_text(report: &EvalReport) -> String {
    let mut s = String::new();
    let pos_rate = report.counts.positive_targets as f64 / report.counts.test.max(1) as f64;
    let _ = writeln!(
        s,
        "Out-of-sample results ({} disclosures, {:.1}% positive)",
        report.counts.test,
        100.0 * pos_rate
    );
    let _ = writeln!(s, "{:<20} {:>6} {:>9} {:>9}", "Method", "Acc.", "Macro F1", "Bal. Acc.");
    for method in Method::ALL {
        if let Some(m) = report.method(method) {
            let _ = writeln!(
                s,
                "{:<20} {:>6.3} {:>9.3} {:>9.3}",
                method.title(),
                m.accuracy,
                m.macro_f1,
                m.balanced_accuracy
            );
        }
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "Balanced accuracy by agreement regime (delta = {})", report.delta);
    let _ = writeln!(s, "{:<20} {:>6} {:>10} {:>10}", "Case", "N", "Maj. vote", "Aggregator");
    for regime in Regime::ALL {
        let title = match regime {
            Regime::Unanimous => "3-agent agreement",
            Regime::SplitDominant => "2-1 split",
            Regime::HighConflict => "High conflict",
        };
        let row = &report.regimes[regime.as_str()];
        let _ = writeln!(
            s,
            "{:<20} {:>6} {:>10} {:>10}",
            title,
            report.counts.regimes[regime.as_str()],
            opt(row[Method::MajorityVote.key()]),
            opt(row[Method::Aggregator.key()])
        );
    }
    if !report.delta_sensitivity.is_empty() {
        let _ = writeln!(s);
        let _ = writeln!(s, "Regime sensitivity to delta (N; maj. vote / aggregator)");
        for row in &report.delta_sensitivity {
            let cells: Vec<String> = Regime::ALL
                .iter()
                .map(|r| {
                    let k = r.as_str();
                    let b = &row.balanced_accuracy[k];
                    format!(
                        "{k} {} {}/{}",
                        row.counts[k],
                        opt(b[Method::MajorityVote.key()]),
                        opt(b[Method::Aggregator.key()])
                    )
                })
                .collect();
            let _ = writeln!(s, "  delta {:<5} {}", row.delta, cells.join("  "));
        }
    }
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "Aggregator corrects majority vote on {} disclosures; {} agent outputs are fallbacks",
        report.corrections.len(),
        report.counts.fallback_outputs
    );
    for c in report.corrections.iter().take(10) {
        let _ = writeln!(
            s,
            "  {:<16} {:<15} labels {:?} conf [{:.2}, {:.2}, {:.2}] target {}",
            c.disclosure_id,
            c.regime.as_str(),
            c.labels,
            c.confidences[0],
            c.confidences[1],
            c.confidences[2],
            c.target
        );
    }
    for w in &report.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    s
}
