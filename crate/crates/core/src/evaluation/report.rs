use std::fmt::Write;

use super::{EvalReport, OperatingPoint, SampleMeta, SweepRow};
use crate::spectra::ClassRole;
use crate::tensor::Tensor;

/// Uniform bins between 0 and the pooled 99th percentile of ‖F‖; one extra
/// overflow bin collects everything at or above that bound.
pub const HISTOGRAM_BINS: usize = 50;

const ROLES: [ClassRole; 3] = [ClassRole::Known, ClassRole::Ignored, ClassRole::NeverSeen];

#[derive(Clone, Debug, PartialEq)]
pub struct RoleHistogram {
    pub role: ClassRole,
    pub count: usize,
    pub mean: f64,
    /// `HISTOGRAM_BINS` regular bins followed by the overflow bin.
    pub counts: Vec<usize>,
}

/// Distribution of deep-feature magnitudes per role.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureNormStats {
    /// Upper edge of the last regular bin.
    pub upper: f64,
    /// Roles without samples are omitted.
    pub roles: Vec<RoleHistogram>,
}

impl FeatureNormStats {
    pub fn compute(norms: &[f64], roles: &[ClassRole]) -> Self {
        let mut sorted = norms.to_vec();
        sorted.sort_by(f64::total_cmp);
        // Nearest-rank percentile.
        let p99 = match sorted.len() {
            0 => 0.0,
            n => sorted[((0.99 * n as f64).ceil() as usize).clamp(1, n) - 1],
        };
        let upper = if p99 > 0.0 { p99 } else { 1.0 };
        let width = upper / HISTOGRAM_BINS as f64;
        let mut out = Vec::new();
        for role in ROLES {
            let vals: Vec<f64> = norms.iter().zip(roles).filter(|(_, r)| **r == role).map(|(v, _)| *v).collect();
            if vals.is_empty() {
                continue;
            }
            let mut counts = vec![0; HISTOGRAM_BINS + 1];
            for v in &vals {
                let bin = if *v >= upper { HISTOGRAM_BINS } else { ((v / width) as usize).min(HISTOGRAM_BINS - 1) };
                counts[bin] += 1;
            }
            out.push(RoleHistogram {
                role,
                count: vals.len(),
                mean: vals.iter().sum::<f64>() / vals.len() as f64,
                counts,
            });
        }
        Self { upper, roles: out }
    }

    pub fn mean(&self, role: ClassRole) -> Option<f64> {
        self.roles.iter().find(|r| r.role == role).map(|r| r.mean)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{:.2}%", 100.0 * x))
}

/// `metric,value` rows; absent rates are left empty.
pub fn metrics_csv(r: &EvalReport) -> String {
    let mut s = String::from("metric,value\n");
    let mut line = |k: &str, v: String| writeln!(s, "{k},{v}").unwrap();
    line("strategy", r.strategy.to_string());
    line("lambda", r.lambda.to_string());
    line("known_samples", r.known_total.to_string());
    line("ignored_samples", r.ignored_total.to_string());
    line("never_seen_samples", r.never_seen_total.to_string());
    line("accuracy", opt(r.accuracy));
    line("wrong", opt(r.wrong));
    line("inconclusive", opt(r.inconclusive));
    line("fp_ignored", opt(r.fp_ignored));
    line("fp_never_seen", opt(r.fp_never_seen));
    for (i, a) in r.run_accuracy.iter().enumerate() {
        line(&format!("run_{i}_accuracy"), opt(*a));
    }
    s
}

pub fn confusion_csv(r: &EvalReport) -> String {
    let c = r.confusion.classes;
    let mut s = String::from("class_id,role");
    for k in 0..c {
        write!(s, ",pred_{k}").unwrap();
    }
    s.push_str(",reject\n");
    for row in &r.confusion.rows {
        write!(s, "{},{}", row.class_id, row.role.as_str()).unwrap();
        for n in &row.counts {
            write!(s, ",{n}").unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("lambda,fp_never_seen,fp_ignored,inconclusive,accuracy\n");
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{}",
            r.lambda,
            opt(r.fp_never_seen),
            opt(r.fp_ignored),
            opt(r.inconclusive),
            opt(r.accuracy)
        )
        .unwrap();
    }
    s
}

/// `role,bin,lower,upper,count`, then one `role,mean,...` summary row per
/// role with the sample count in the last column.
pub fn histogram_csv(stats: &FeatureNormStats) -> String {
    let width = stats.upper / HISTOGRAM_BINS as f64;
    let mut s = String::from("role,bin,lower,upper,count\n");
    for h in &stats.roles {
        for (i, n) in h.counts.iter().enumerate() {
            let lower = i as f64 * width;
            let upper = if i == HISTOGRAM_BINS { "inf".to_string() } else { ((i + 1) as f64 * width).to_string() };
            writeln!(s, "{},{i},{lower},{upper},{n}", h.role.as_str()).unwrap();
        }
    }
    for h in &stats.roles {
        writeln!(s, "{},mean,{},,{}", h.role.as_str(), h.mean, h.count).unwrap();
    }
    s
}

/// `sample_id,class_id,role,f0,…` for external embedding tools.
pub fn features_csv(samples: &[SampleMeta], features: &Tensor) -> String {
    let d = features.shape().get(1).copied().unwrap_or(0);
    let mut s = String::from("sample_id,class_id,role");
    for j in 0..d {
        write!(s, ",f{j}").unwrap();
    }
    s.push('\n');
    for (m, row) in samples.iter().zip(features.rows()) {
        write!(s, "{},{},{}", m.id, m.class_id, m.role.as_str()).unwrap();
        for v in row {
            write!(s, ",{v}").unwrap();
        }
        s.push('\n');
    }
    s
}

/// Human-readable digest of a report.
pub fn summary_text(r: &EvalReport, op: Option<&OperatingPoint>, norms: Option<&FeatureNormStats>) -> String {
    let mut s = String::new();
    writeln!(s, "strategy:            {}", r.strategy).unwrap();
    writeln!(s, "cutoff:              {}", r.lambda).unwrap();
    if let Some(op) = op {
        let how = if op.fp_zero_reached {
            "lowest inconclusive rate with no false positives on ignored classes"
        } else {
            "WARNING: no cutoff reaches zero false positives on ignored classes; lowest rate used"
        };
        writeln!(s, "cutoff selection:    {how}").unwrap();
    }
    writeln!(
        s,
        "samples:             {} known, {} ignored, {} never seen",
        r.known_total, r.ignored_total, r.never_seen_total
    )
    .unwrap();
    writeln!(s, "known accuracy:      {}", pct(r.accuracy)).unwrap();
    writeln!(s, "known wrong:         {}", pct(r.wrong)).unwrap();
    writeln!(s, "known inconclusive:  {}", pct(r.inconclusive)).unwrap();
    writeln!(s, "FP on ignored:       {}", pct(r.fp_ignored)).unwrap();
    writeln!(s, "FP on never seen:    {}", pct(r.fp_never_seen)).unwrap();
    if !r.run_accuracy.is_empty() {
        let runs: Vec<String> = r.run_accuracy.iter().map(|a| pct(*a)).collect();
        writeln!(s, "per-run accuracy:    {}", runs.join(", ")).unwrap();
    }
    if let Some(n) = norms {
        for h in &n.roles {
            writeln!(s, "mean |F| {:<11} {:.4} (n={})", format!("{}:", h.role.as_str()), h.mean, h.count).unwrap();
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::evaluate;
    use crate::losses::LossStrategy;
    use crate::network::feature_norm;

    #[test]
    fn zero_features_spike_at_first_bin() {
        let stats = FeatureNormStats::compute(&[0.0; 5], &[ClassRole::Known; 5]);
        assert_eq!(stats.upper, 1.0);
        let h = &stats.roles[0];
        assert_eq!(h.counts[0], 5);
        assert_eq!(h.counts.iter().sum::<usize>(), 5);
        assert_eq!(h.mean, 0.0);
    }

    #[test]
    fn means_of_three_four_and_six_eight() {
        let f = Tensor::from_rows(&[vec![3.0, 4.0], vec![6.0, 8.0]]).unwrap();
        let norms = feature_norm(&f);
        let stats = FeatureNormStats::compute(&norms, &[ClassRole::Known; 2]);
        assert_eq!(stats.mean(ClassRole::Known), Some(7.5));
        assert_eq!(stats.mean(ClassRole::Ignored), None);
        assert_eq!(stats.roles.len(), 1);
    }

    #[test]
    fn overflow_bin_and_counts() {
        let norms: Vec<f64> = (1..=200).map(f64::from).collect();
        let roles: Vec<ClassRole> = (0..200).map(|i| if i % 2 == 0 { ClassRole::Known } else { ClassRole::Ignored }).collect();
        let stats = FeatureNormStats::compute(&norms, &roles);
        assert_eq!(stats.upper, 198.0);
        let total: usize = stats.roles.iter().map(|h| h.counts.iter().sum::<usize>()).sum();
        assert_eq!(total, 200);
        let overflow: usize = stats.roles.iter().map(|h| h.counts[HISTOGRAM_BINS]).sum();
        assert_eq!(overflow, 3);
    }

    #[test]
    fn csv_shapes() {
        let scores = Tensor::from_rows(&[vec![0.9, 0.1], vec![0.5, 0.5]]).unwrap();
        let meta = [
            SampleMeta {
                id: 0,
                class_id: 0,
                role: ClassRole::Known,
                label: Some(0),
            },
            SampleMeta {
                id: 1,
                class_id: 5,
                role: ClassRole::NeverSeen,
                label: None,
            },
        ];
        let r = evaluate(&scores, &[], &meta, 0.6, LossStrategy::EntropicOpenSet, 2).unwrap();
        let m = metrics_csv(&r);
        assert!(m.contains("accuracy,1\n"));
        assert!(m.contains("fp_ignored,\n"));
        let c = confusion_csv(&r);
        assert_eq!(c.lines().next().unwrap(), "class_id,role,pred_0,pred_1,reject");
        assert!(c.contains("5,never_seen,0,0,1"));
        let f = features_csv(&meta, &scores);
        assert_eq!(f.lines().nth(2).unwrap(), "1,5,never_seen,0.5,0.5");
        let text = summary_text(&r, None, None);
        assert!(text.contains("FP on ignored:       n/a"));
    }
}
