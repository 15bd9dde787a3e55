//! Command-line driver and HTTP review service for the weakspot pipeline.

pub mod service;

use std::fmt::Write;
use std::path::PathBuf;

use weakspot_core::pipeline::{AuditReport, EnhanceReport, PipelineConfig};

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub offline: bool,
}

impl Overrides {
    pub fn apply(&self, config: &mut PipelineConfig) {
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(out) = &self.out {
            config.output_dir = out.clone();
        }
        config.offline |= self.offline;
    }
}

pub fn summarize_audit(r: &AuditReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "baseline accuracy {:.2}% ({}/{})",
        r.baseline.overall_accuracy, r.baseline.correct, r.baseline.total
    );
    for d in &r.disparities {
        let _ = writeln!(
            s,
            "disparity {} {}={:.2}% {}={:.2}%: {:.2} pts",
            d.attribute, d.group_a, d.accuracy_a, d.group_b, d.accuracy_b, d.disparity
        );
    }
    let _ = writeln!(
        s,
        "weakspots at d={:.4}, t_perp={:.2}: {}",
        r.audit.radius,
        r.audit.perplexity_threshold,
        r.weakspots.len()
    );
    for p in &r.pairs {
        let _ = writeln!(s, "  {} -> {}: {}", p.true_class, p.predicted_class, p.count);
    }
    let _ = writeln!(s, "grid:");
    for row in &r.grid.rows {
        let _ = writeln!(s, "  d={:.4} {}", row.radius, row.weakspot_count);
    }
    let _ = writeln!(
        s,
        "associations mined {}, shortlisted {}",
        r.associations.len(),
        r.shortlist.len()
    );
    s
}

pub fn summarize_enhance(r: &EnhanceReport) -> String {
    let mut s = String::new();
    let p = &r.procurement;
    let _ = writeln!(
        s,
        "accuracy {:.2}% -> {:.2}% ({:+.2} pts)",
        r.before.overall_accuracy,
        r.after.overall_accuracy,
        r.accuracy_delta()
    );
    for d in &r.disparities {
        let reduction = d.reduction.map_or_else(|| "n/a".to_string(), |x| format!("{x:.2}%"));
        let _ = writeln!(
            s,
            "disparity {} {}/{}: {:.2} -> {:.2} pts, reduction {reduction}",
            d.before.attribute, d.before.group_a, d.before.group_b, d.before.disparity, d.after.disparity
        );
    }
    let _ = writeln!(
        s,
        "weakspots at d={:.4}: {} -> {}",
        r.audit.radius, r.weakspots_before, r.weakspots_after
    );
    let _ = writeln!(s, "grid (before, after):");
    for (b, a) in r.grid_before.rows.iter().zip(&r.grid_after.rows) {
        let _ = writeln!(s, "  d={:.4} {} {}", b.radius, b.weakspot_count, a.weakspot_count);
    }
    let _ = writeln!(
        s,
        "prompts {} weakspot + {} mitigation, requests {} ({} fulfilled, {} failed)",
        p.weakspot_descriptions,
        p.mitigation_descriptions,
        p.requests,
        p.fulfilled_requests,
        p.failures.len()
    );
    let _ = writeln!(
        s,
        "procured {} records{}, training set {} -> {} (+{:.2}%)",
        p.procured_records,
        if p.screened { "" } else { " (unscreened)" },
        p.train_records,
        p.merged_records,
        p.augmentation_fraction
    );
    s
}

#[cfg(test)]
mod tests {
    use weakspot_core::pipeline::benchmark::BenchmarkSpec;
    use weakspot_core::pipeline::benchmark_config;

    use super::*;

    #[test]
    fn overrides_take_precedence() {
        let mut cfg = benchmark_config(&BenchmarkSpec::default());
        cfg.offline = false;
        Overrides {
            seed: Some(11),
            out: Some("elsewhere".into()),
            offline: true,
        }
        .apply(&mut cfg);
        assert_eq!((cfg.seed, cfg.offline), (11, true));
        assert_eq!(cfg.output_dir, PathBuf::from("elsewhere"));
    }

    #[test]
    fn absent_overrides_keep_config() {
        let cfg = benchmark_config(&BenchmarkSpec::default());
        let mut same = cfg.clone();
        Overrides::default().apply(&mut same);
        assert_eq!(same, cfg);
    }
}
