//! Friedman test across methods and the Nemenyi post-hoc comparison.
//!
//! Scores are always "higher is better"; rank 1 is the best method on a case.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use serde::Serialize;
use statrs::function::gamma::gamma_ur;

use crate::error::{ensure, Error, Result};
use crate::metrics::{CaseMetrics, Metric};

/// Critical values `q_α` for the Nemenyi test (Studentized range over √2,
/// infinite degrees of freedom), indexed by the number of methods minus two.
const Q_005: [f64; 9] = [1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164];
const Q_010: [f64; 9] = [1.645, 2.052, 2.291, 2.459, 2.589, 2.693, 2.780, 2.855, 2.920];
const Q_001: [f64; 9] = [2.576, 2.913, 3.113, 3.255, 3.364, 3.452, 3.526, 3.590, 3.646];

/// Scores of `M` methods on `N` cases.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub methods: Vec<String>,
    pub cases: Vec<String>,
    /// `scores[case][method]`.
    pub scores: Vec<Vec<f64>>,
    pub metric_name: String,
}

impl ScoreMatrix {
    pub fn new(
        methods: Vec<String>,
        cases: Vec<String>,
        scores: Vec<Vec<f64>>,
        metric_name: impl Into<String>,
    ) -> Result<Self> {
        let m = methods.len();
        ensure!(m >= 2, InvalidInput, "need at least two methods, got {m}");
        ensure!(cases.len() >= 2, InvalidInput, "need at least two cases, got {}", cases.len());
        ensure!(scores.len() == cases.len(), Shape, "{} score rows for {} cases", scores.len(), cases.len());
        for row in &scores {
            ensure!(row.len() == m, Shape, "score row of length {} for {m} methods", row.len());
            ensure!(row.iter().all(|v| v.is_finite()), InvalidInput, "scores must be finite");
        }
        Ok(ScoreMatrix {
            methods,
            cases,
            scores,
            metric_name: metric_name.into(),
        })
    }

    pub fn num_methods(&self) -> usize {
        self.methods.len()
    }

    pub fn num_cases(&self) -> usize {
        self.cases.len()
    }
}

/// Ranks within one case: 1 for the highest score, ties share the average rank.
pub fn rank_descending(row: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
    let mut ranks = vec![0.0; row.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && row[order[j + 1]] == row[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = avg;
        }
        i = j + 1;
    }
    ranks
}

pub fn mean_ranks(scores: &ScoreMatrix) -> Vec<f64> {
    let m = scores.num_methods();
    let mut sum = vec![0.0; m];
    for row in &scores.scores {
        for (s, r) in sum.iter_mut().zip(rank_descending(row)) {
            *s += r;
        }
    }
    sum.iter().map(|s| s / scores.num_cases() as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FriedmanResult {
    pub statistic: f64,
    pub p_value: f64,
    pub mean_ranks: Vec<f64>,
}

/// `12N / (M(M+1)) · (Σ R̄² − M(M+1)²/4)`, chi-square with `M − 1` degrees of freedom.
pub fn friedman_statistic(n: usize, ranks: &[f64]) -> f64 {
    let m = ranks.len() as f64;
    let n = n as f64;
    let sum_sq: f64 = ranks.iter().map(|r| r * r).sum();
    (12.0 * n / (m * (m + 1.0)) * (sum_sq - m * (m + 1.0).powi(2) / 4.0)).max(0.0)
}

pub fn friedman(scores: &ScoreMatrix) -> FriedmanResult {
    let mean_ranks = mean_ranks(scores);
    let statistic = friedman_statistic(scores.num_cases(), &mean_ranks);
    let dof = (scores.num_methods() - 1) as f64;
    let p_value = if statistic <= 0.0 {
        1.0
    } else {
        gamma_ur(dof / 2.0, statistic / 2.0).clamp(0.0, 1.0)
    };
    FriedmanResult {
        statistic,
        p_value,
        mean_ranks,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// Row method ranked significantly higher.
    Better,
    Same,
    Worse,
}

impl Verdict {
    pub fn symbol(self) -> &'static str {
        match self {
            Verdict::Better => "+",
            Verdict::Same => "0",
            Verdict::Worse => "-",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseVerdict {
    pub methods: Vec<String>,
    pub alpha: f64,
    pub critical_difference: f64,
    pub mean_ranks: Vec<f64>,
    /// `cells[row][col]`, `None` on the diagonal.
    pub cells: Vec<Vec<Option<Verdict>>>,
}

/// `q_α` for `m` methods.
pub fn nemenyi_q(alpha: f64, m: usize) -> Result<f64> {
    let table = if (alpha - 0.05).abs() < 1e-12 {
        &Q_005
    } else if (alpha - 0.01).abs() < 1e-12 {
        &Q_001
    } else if (alpha - 0.10).abs() < 1e-12 {
        &Q_010
    } else {
        return Err(Error::InvalidInput(format!(
            "no Nemenyi critical values for alpha {alpha}; use 0.01, 0.05 or 0.10"
        )));
    };
    ensure!(
        (2..=10).contains(&m),
        InvalidInput,
        "Nemenyi critical values cover 2 to 10 methods, got {m}"
    );
    Ok(table[m - 2])
}

pub fn nemenyi(scores: &ScoreMatrix, alpha: f64) -> Result<PairwiseVerdict> {
    let m = scores.num_methods();
    let q = nemenyi_q(alpha, m)?;
    let cd = q * ((m * (m + 1)) as f64 / (6.0 * scores.num_cases() as f64)).sqrt();
    let ranks = mean_ranks(scores);
    let cells = (0..m)
        .map(|a| {
            (0..m)
                .map(|b| {
                    (a != b).then(|| {
                        if (ranks[a] - ranks[b]).abs() < cd {
                            Verdict::Same
                        } else if ranks[a] < ranks[b] {
                            Verdict::Better
                        } else {
                            Verdict::Worse
                        }
                    })
                })
                .collect()
        })
        .collect();
    Ok(PairwiseVerdict {
        methods: scores.methods.clone(),
        alpha,
        critical_difference: cd,
        mean_ranks: ranks,
        cells,
    })
}

impl PairwiseVerdict {
    pub fn get(&self, row: &str, col: &str) -> Option<Verdict> {
        let r = self.methods.iter().position(|m| m == row)?;
        let c = self.methods.iter().position(|m| m == col)?;
        self.cells[r][c]
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![String::new()];
        header.extend(self.methods.iter().cloned());
        w.write_record(&header)?;
        for (name, row) in self.methods.iter().zip(&self.cells) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(|c| c.map(|v| v.symbol().to_string()).unwrap_or_default()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

impl fmt::Display for PairwiseVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.methods.iter().map(String::len).max().unwrap_or(0).max(3);
        write!(f, "{:width$}", "")?;
        for m in &self.methods {
            write!(f, "  {m:>width$}")?;
        }
        writeln!(f)?;
        for (name, row) in self.methods.iter().zip(&self.cells) {
            write!(f, "{name:>width$}")?;
            for c in row {
                let s = c.map(Verdict::symbol).unwrap_or("");
                write!(f, "  {s:>width$}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Turns a metric value into a higher-is-better score.
pub fn oriented_score(metric: Metric, value: f64) -> f64 {
    match metric {
        Metric::Dsc => value,
        Metric::Hd95 | Metric::Assd => -value,
        Metric::Ravd => -value.abs(),
    }
}

/// Builds a score matrix with one case per `(structure, patient)`.
///
/// Every method must report the same cases. Cases where any method's metric is
/// undefined are dropped.
pub fn build_score_matrix(methods: &[(String, Vec<CaseMetrics>)], metric: Metric) -> Result<ScoreMatrix> {
    let key = |c: &CaseMetrics| format!("{}/{}", c.structure, c.patient);
    let tables: Vec<BTreeMap<String, Option<f64>>> = methods
        .iter()
        .map(|(_, cases)| cases.iter().map(|c| (key(c), c.get(metric))).collect())
        .collect();
    let Some(first) = tables.first() else {
        return Err(Error::InvalidInput("no methods given".into()));
    };
    let reference: BTreeSet<&String> = first.keys().collect();
    for ((name, _), t) in methods.iter().zip(&tables) {
        let keys: BTreeSet<&String> = t.keys().collect();
        ensure!(
            keys == reference,
            InvalidInput,
            "method {name} was evaluated on different cases than {}",
            methods[0].0
        );
    }
    let mut cases = Vec::new();
    let mut scores = Vec::new();
    // keep the first method's case order
    let mut seen = BTreeSet::new();
    for c in &methods[0].1 {
        let k = key(c);
        if !seen.insert(k.clone()) {
            continue;
        }
        let row: Option<Vec<f64>> = tables
            .iter()
            .map(|t| t[&k].map(|v| oriented_score(metric, v)))
            .collect();
        if let Some(row) = row {
            cases.push(k);
            scores.push(row);
        }
    }
    ScoreMatrix::new(
        methods.iter().map(|(n, _)| n.clone()).collect(),
        cases,
        scores,
        metric.as_str(),
    )
}
