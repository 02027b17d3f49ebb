//! Plain-text run summaries.

use std::fmt::Write;

use rarity_core::theorem::Rule;

use crate::run::{rule_name, ExperimentResult};

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

/// One `<property>: PASS|FAIL` line per report, each followed by its
/// comparisons, then any experiment notes and the overall verdict.
pub fn summarize(result: &ExperimentResult) -> String {
    let mut s = String::new();
    let cfg = &result.config;
    writeln!(s, "experiment: {}", cfg.experiment.kind()).unwrap();
    writeln!(s, "seed: {}", cfg.seed).unwrap();
    for r in &result.reports {
        writeln!(s, "{}: {}", r.property.label(), verdict(r.pass)).unwrap();
        for c in &r.comparisons {
            if c.rule == Rule::Info {
                writeln!(s, "  {}: {}", c.name, c.empirical).unwrap();
            } else {
                writeln!(
                    s,
                    "  {}: empirical {} vs expected {} ({} {}) {}",
                    c.name,
                    c.empirical,
                    c.reference,
                    rule_name(c.rule),
                    c.tolerance,
                    if c.passes() { "ok" } else { "VIOLATED" }
                )
                .unwrap();
            }
        }
    }
    for note in &result.notes {
        writeln!(s, "{note}").unwrap();
    }
    writeln!(s, "overall: {}", verdict(result.pass)).unwrap();
    s
}
