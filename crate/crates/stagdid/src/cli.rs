//! Command implementations behind the binary: estimate, simulate, validate.
//! All outputs are deterministic functions of the config (no timestamps,
//! sorted keys), so reruns are byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::inference::{bootstrap, BootstrapOutput};
use crate::pipeline::{estimand_points, run_pipeline, EstimandKey, PipelineOutput};
use crate::runner::{prepare, PreparedRun};
use crate::validate::{run_all_criteria, CriterionResult};

fn fmt(v: f64) -> String {
    let mut s = format!("{v}");
    if !s.contains('.') && !s.contains('e') && !s.contains("inf") && !s.contains("NaN") {
        s.push_str(".0");
    }
    s
}

fn config_sha256(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    format!("{:x}", hasher.finalize())
}

fn write_text(dir: &Path, name: &str, content: &str) -> Result<()> {
    fs::write(dir.join(name), content)?;
    Ok(())
}

fn interval_json(e: &crate::inference::IntervalEstimate) -> serde_json::Value {
    json!({
        "point": e.point,
        "se": e.se,
        "ci_low": e.ci_low,
        "ci_high": e.ci_high,
        "band_low": e.band_low,
        "band_high": e.band_high,
    })
}

fn manifest_json(config: &RunConfig, config_text: &str) -> serde_json::Value {
    json!({
        "tool": "stagdid",
        "version": env!("CARGO_PKG_VERSION"),
        "config_sha256": config_sha256(config_text),
        "config": config,
    })
}

fn attgt_csv(output: &PipelineOutput) -> String {
    let mut s = String::from("d,g,t,event_time,estimate,n_treated,n_control\n");
    for (d, estimates) in &output.attgt {
        for e in estimates {
            s.push_str(&format!(
                "{d},{},{},{},{},{},{}\n",
                e.g,
                e.t,
                e.event_time(),
                fmt(e.estimate),
                fmt(e.n_treated),
                fmt(e.n_control)
            ));
        }
    }
    s
}

fn eventstudy_csv(
    d: u8,
    output: &PipelineOutput,
    boot: Option<&BootstrapOutput>,
) -> String {
    let mut s = String::from("e,theta,se,ci_low,ci_high,band_low,band_high,cohorts\n");
    for agg in &output.event_study[&d] {
        let e = match agg.kind {
            crate::aggregate::AggregateKind::EventStudy { e } => e,
            _ => continue,
        };
        let cohorts = agg
            .cohorts
            .iter()
            .map(|g| g.to_string())
            .collect::<Vec<_>>()
            .join(";");
        let inference = boot
            .and_then(|b| b.estimates.get(&EstimandKey::EventStudy(d, e)))
            .map(|iv| {
                format!(
                    "{},{},{},{},{}",
                    fmt(iv.se),
                    fmt(iv.ci_low),
                    fmt(iv.ci_high),
                    fmt(iv.band_low),
                    fmt(iv.band_high)
                )
            })
            .unwrap_or_else(|| ",,,,".to_string());
        s.push_str(&format!("{e},{},{inference},{cohorts}\n", fmt(agg.theta)));
    }
    s
}

fn complement_csv(output: &PipelineOutput) -> Option<String> {
    let c = output.complement.as_ref()?;
    let mut s = String::from("g,t,delta,att4,att2\n");
    for d in &c.deltas {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            d.g,
            d.t,
            fmt(d.delta),
            fmt(d.att4),
            fmt(d.att2)
        ));
    }
    Some(s)
}

fn aggregates_json(output: &PipelineOutput, boot: Option<&BootstrapOutput>) -> serde_json::Value {
    let mut overall = serde_json::Map::new();
    for (&d, agg) in &output.overall {
        let v = match boot.and_then(|b| b.estimates.get(&EstimandKey::Overall(d))) {
            Some(iv) => interval_json(iv),
            None => json!({ "point": agg.theta }),
        };
        overall.insert(d.to_string(), v);
    }
    let complement = output.complement.as_ref().map(|c| {
        match boot.and_then(|b| b.estimates.get(&EstimandKey::Complement)) {
            Some(iv) => {
                let mut v = interval_json(iv);
                v["excluded_cells"] = json!(c.excluded_cells);
                v
            }
            None => json!({ "point": c.overall.theta, "excluded_cells": c.excluded_cells }),
        }
    });
    let skips: BTreeMap<String, Vec<serde_json::Value>> = output
        .skips
        .iter()
        .map(|(d, logs)| {
            (
                d.to_string(),
                logs.iter()
                    .map(|l| json!({ "g": l.g, "reason": l.reason }))
                    .collect(),
            )
        })
        .collect();
    json!({
        "overall": overall,
        "complement": complement,
        "skips": skips,
        "bootstrap": boot.map(|b| json!({
            "draws": b.draws,
            "discarded": b.discarded,
            "alpha": b.alpha,
            "seed": b.seed,
        })),
    })
}

/// Estimate on the configured input and write the output files.
pub fn cmd_estimate(config: &RunConfig, config_text: &str) -> Result<()> {
    let run: PreparedRun = prepare(config)?;
    let (output, boot) = match &config.bootstrap {
        Some(b) => {
            let (out, boot) = bootstrap(&run.dataset, &run.spec, b.draws, b.alpha, b.seed)?;
            (out, Some(boot))
        }
        None => (run_pipeline(&run.dataset, &run.spec, None)?, None),
    };

    let dir = &config.output.dir;
    fs::create_dir_all(dir)?;
    write_text(dir, "attgt.csv", &attgt_csv(&output))?;
    for &d in output.event_study.keys() {
        write_text(
            dir,
            &format!("eventstudy_d{d}.csv"),
            &eventstudy_csv(d, &output, boot.as_ref()),
        )?;
    }
    if let Some(csv) = complement_csv(&output) {
        write_text(dir, "complement.csv", &csv)?;
    }
    let aggregates = aggregates_json(&output, boot.as_ref());
    write_text(
        dir,
        "aggregates.json",
        &format!("{:#}\n", aggregates),
    )?;
    let mut manifest = manifest_json(config, config_text);
    manifest["ipw_trimmed"] = json!(run.ipw_trimmed);
    if let Some(report) = &run.load_report {
        manifest["load_report"] = json!({
            "rejected_rows": report.rejected_rows.len(),
            "dropped_units": report.dropped_units,
        });
    }
    write_text(dir, "manifest.json", &format!("{:#}\n", manifest))?;
    Ok(())
}

/// True value of an estimand under the generator, if defined.
fn truth_of(truth: &crate::dgp::DgpTruth, key: &EstimandKey) -> Option<f64> {
    match key {
        EstimandKey::Overall(d) => truth.overall.get(d).copied(),
        EstimandKey::EventStudy(d, e) => {
            if *e < 0 {
                Some(0.0)
            } else {
                truth.event_study.get(&(*d, *e)).copied()
            }
        }
        EstimandKey::Complement => truth.complement_overall,
    }
}

struct RepResult {
    points: BTreeMap<EstimandKey, f64>,
    covered: Option<BTreeMap<EstimandKey, (bool, bool)>>,
}

/// Monte Carlo study of the configured estimator against the generator's
/// truth: per-estimand bias, RMSE, and (with bootstrap) CI and band
/// coverage. Coverage is reported as NA with a single replication.
pub fn cmd_simulate(config: &RunConfig, config_text: &str) -> Result<()> {
    let sim = config
        .simulate
        .as_ref()
        .ok_or_else(|| Error::Config("simulate section missing".into()))?
        .clone();
    let base = config.dgp_config()?;
    let truth = crate::dgp::true_effects(&base)?;

    let reps: Vec<Result<RepResult>> = (0..sim.replications as u64)
        .into_par_iter()
        .map(|r| {
            let mut rep_config = config.clone();
            rep_config.input.seed = Some(sim.base_seed.wrapping_add(r));
            let run = prepare(&rep_config)?;
            match &config.bootstrap {
                Some(b) => {
                    let (out, boot) = bootstrap(
                        &run.dataset,
                        &run.spec,
                        b.draws,
                        b.alpha,
                        b.seed.wrapping_add(r),
                    )?;
                    let points = estimand_points(&out);
                    let covered = boot
                        .estimates
                        .iter()
                        .filter_map(|(k, iv)| {
                            truth_of(&truth, k).map(|tv| {
                                (
                                    *k,
                                    (
                                        iv.ci_low <= tv && tv <= iv.ci_high,
                                        iv.band_low <= tv && tv <= iv.band_high,
                                    ),
                                )
                            })
                        })
                        .collect();
                    Ok(RepResult {
                        points,
                        covered: Some(covered),
                    })
                }
                None => {
                    let out = run_pipeline(&run.dataset, &run.spec, None)?;
                    Ok(RepResult {
                        points: estimand_points(&out),
                        covered: None,
                    })
                }
            }
        })
        .collect();
    let reps = reps.into_iter().collect::<Result<Vec<_>>>()?;

    // Estimands present in every replication (cohort coverage can vary at
    // the window edges).
    let mut keys: Vec<EstimandKey> = reps[0].points.keys().copied().collect();
    keys.retain(|k| reps.iter().all(|r| r.points.contains_key(k)));
    let n = reps.len() as f64;
    let coverage_defined = config.bootstrap.is_some() && reps.len() > 1;

    let mut csv = String::from("estimand,truth,mean,bias,rmse,coverage,band_coverage\n");
    let mut summary = format!(
        "simulation: {} replications of the configured generator\n",
        reps.len()
    );
    if !coverage_defined {
        summary.push_str("coverage: NA (needs bootstrap inference and more than one replication)\n");
    }
    for k in &keys {
        let Some(tv) = truth_of(&truth, k) else {
            continue;
        };
        let vals: Vec<f64> = reps.iter().map(|r| r.points[k]).collect();
        let mean = vals.iter().sum::<f64>() / n;
        let bias = mean - tv;
        let rmse = (vals.iter().map(|v| (v - tv).powi(2)).sum::<f64>() / n).sqrt();
        let (cov, band) = if coverage_defined {
            let mut c = 0usize;
            let mut bc = 0usize;
            for r in &reps {
                if let Some((ci_ok, band_ok)) = r.covered.as_ref().and_then(|m| m.get(k)) {
                    c += *ci_ok as usize;
                    bc += *band_ok as usize;
                }
            }
            (fmt(c as f64 / n), fmt(bc as f64 / n))
        } else {
            ("NA".to_string(), "NA".to_string())
        };
        csv.push_str(&format!(
            "{k},{},{},{},{},{cov},{band}\n",
            fmt(tv),
            fmt(mean),
            fmt(bias),
            fmt(rmse)
        ));
        summary.push_str(&format!(
            "{k}: truth {} mean {} bias {} rmse {} coverage {} band {}\n",
            fmt(tv),
            fmt(mean),
            fmt(bias),
            fmt(rmse),
            cov,
            band
        ));
    }

    let dir = &config.output.dir;
    fs::create_dir_all(dir)?;
    write_text(dir, "simulate.csv", &csv)?;
    write_text(dir, "summary.txt", &summary)?;
    write_text(
        dir,
        "manifest.json",
        &format!("{:#}\n", manifest_json(config, config_text)),
    )?;
    print!("{summary}");
    std::io::stdout().flush()?;
    Ok(())
}

/// Run the built-in acceptance criteria; returns the failure count.
pub fn cmd_validate(names: Option<&[String]>) -> usize {
    let started = std::time::Instant::now();
    let results: Vec<CriterionResult> = run_all_criteria(names);
    let mut failed = 0usize;
    for r in &results {
        if !r.passed {
            failed += 1;
        }
        println!(
            "{}: {} ({:.1}s) {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.seconds,
            r.detail
        );
    }
    println!(
        "{} of {} criteria passed in {:.1}s",
        results.len() - failed,
        results.len(),
        started.elapsed().as_secs_f64()
    );
    failed
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn s1_config(dir: &Path, bootstrap: bool) -> (RunConfig, String) {
        let text = format!(
            "[input]\nscenario = \"s1\"\nseed = 4\n\
             [estimation]\ntreatments = [1]\nevent_window = [-3, 5]\n{}\
             [output]\ndir = \"{}\"\n",
            if bootstrap {
                "[bootstrap]\ndraws = 100\nseed = 5\n"
            } else {
                ""
            },
            dir.display()
        );
        (RunConfig::parse(&text).unwrap(), text)
    }

    #[test]
    fn estimate_writes_expected_files() {
        let dir = tempdir().unwrap();
        let (config, text) = s1_config(dir.path(), false);
        cmd_estimate(&config, &text).unwrap();
        for f in ["attgt.csv", "eventstudy_d1.csv", "aggregates.json", "manifest.json"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let agg: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("aggregates.json")).unwrap())
                .unwrap();
        let theta = agg["overall"]["1"]["point"].as_f64().unwrap();
        assert!((theta - 2.0).abs() < 0.5, "{theta}");
    }

    #[test]
    fn estimate_rerun_is_byte_identical() {
        let d1 = tempdir().unwrap();
        let d2 = tempdir().unwrap();
        for (d, seed_dir) in [(&d1, 1), (&d2, 2)] {
            let _ = seed_dir;
            let (config, text) = s1_config(d.path(), true);
            cmd_estimate(&config, &text).unwrap();
        }
        for f in ["attgt.csv", "eventstudy_d1.csv", "aggregates.json"] {
            let a = fs::read(d1.path().join(f)).unwrap();
            let b = fs::read(d2.path().join(f)).unwrap();
            assert_eq!(a, b, "{f}");
        }
    }

    #[test]
    fn simulate_single_rep_flags_na_coverage() {
        let dir = tempdir().unwrap();
        let text = format!(
            "[input]\nscenario = \"s1\"\n\
             [estimation]\ntreatments = [1]\nevent_window = [-2, 3]\n\
             [simulate]\nreplications = 1\n\
             [output]\ndir = \"{}\"\n",
            dir.path().display()
        );
        let config = RunConfig::parse(&text).unwrap();
        cmd_simulate(&config, &text).unwrap();
        let csv = fs::read_to_string(dir.path().join("simulate.csv")).unwrap();
        assert!(csv.lines().nth(1).unwrap().ends_with("NA,NA"), "{csv}");
        let summary = fs::read_to_string(dir.path().join("summary.txt")).unwrap();
        assert!(summary.contains("NA"));
    }
}
