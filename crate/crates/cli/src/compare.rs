//! Side-by-side report of two run directories.

use crate::runner::log_file_name;
use chloros::{Error, Result};
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoosterComparison {
    pub booster: String,
    /// Mean over common seeds of the setpoint sum over the step window.
    pub a: f64,
    pub b: f64,
    /// `b - a`.
    pub difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub dir: String,
    pub mode: String,
    pub violating_runs: u64,
    pub max_violation: f64,
    pub mean_energy_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub from_step: usize,
    pub to_step: usize,
    pub seeds: Vec<u64>,
    pub a: RunSummary,
    pub b: RunSummary,
    pub injection: Vec<BoosterComparison>,
}

fn read_metrics(dir: &Path) -> Result<serde_json::Value> {
    let path = dir.join("metrics.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

fn summary(dir: &Path, m: &serde_json::Value) -> RunSummary {
    let agg = &m["aggregate"];
    RunSummary {
        dir: dir.display().to_string(),
        mode: m["mode"].as_str().unwrap_or("unknown").to_string(),
        violating_runs: agg["violating_runs"].as_u64().unwrap_or(0),
        max_violation: agg["max_violation"].as_f64().unwrap_or(0.0),
        mean_energy_cost: agg["mean_energy_cost"].as_f64().unwrap_or(0.0),
    }
}

/// Sum of every `u_<id>` column over rows with step in `from..to`.
pub fn injection_sums(csv_path: &Path, from: usize, to: usize) -> Result<BTreeMap<String, f64>> {
    let mut rdr = csv::Reader::from_path(csv_path)?;
    let header = rdr.headers()?.clone();
    let cols: Vec<(usize, String)> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("u_"))
        .map(|(i, h)| (i, h[2..].to_string()))
        .collect();
    let rows: Vec<csv::StringRecord> = rdr.records().collect::<std::result::Result<_, _>>()?;
    let time = |r: &csv::StringRecord| -> Result<f64> {
        r[0].parse::<f64>().map_err(|e| Error::Config(format!("{}: bad time_s: {e}", csv_path.display())))
    };
    let dt = match rows.as_slice() {
        [a, b, ..] => time(b)? - time(a)?,
        _ => 1.0,
    };
    let mut sums: BTreeMap<String, f64> = cols.iter().map(|(_, id)| (id.clone(), 0.0)).collect();
    for r in &rows {
        let step = (time(r)? / dt).round() as usize;
        if step < from || step >= to {
            continue;
        }
        for (i, id) in &cols {
            let v: f64 = r[*i].parse().map_err(|e| Error::Config(format!("{}: bad value: {e}", csv_path.display())))?;
            *sums.get_mut(id).expect("column listed") += v;
        }
    }
    Ok(sums)
}

pub fn compare(dir_a: &Path, dir_b: &Path, from: usize, to: usize) -> Result<Report> {
    let (ma, mb) = (read_metrics(dir_a)?, read_metrics(dir_b)?);
    let seeds_of = |m: &serde_json::Value| -> Vec<u64> {
        m["seeds"].as_array().map(|s| s.iter().filter_map(|v| v.as_u64()).collect()).unwrap_or_default()
    };
    let sb = seeds_of(&mb);
    let seeds: Vec<u64> = seeds_of(&ma).into_iter().filter(|s| sb.contains(s)).collect();
    if seeds.is_empty() {
        return Err(Error::Config("the two runs share no seeds".into()));
    }
    let mut total_a: BTreeMap<String, f64> = BTreeMap::new();
    let mut total_b: BTreeMap<String, f64> = BTreeMap::new();
    for &s in &seeds {
        for (dir, total) in [(dir_a, &mut total_a), (dir_b, &mut total_b)] {
            for (id, v) in injection_sums(&dir.join(log_file_name(s)), from, to)? {
                *total.entry(id).or_insert(0.0) += v;
            }
        }
    }
    let n = seeds.len() as f64;
    let injection = total_a
        .iter()
        .filter_map(|(id, a)| {
            total_b.get(id).map(|b| BoosterComparison {
                booster: id.clone(),
                a: a / n,
                b: b / n,
                difference: (b - a) / n,
            })
        })
        .collect();
    Ok(Report {
        from_step: from,
        to_step: to,
        seeds,
        a: summary(dir_a, &ma),
        b: summary(dir_b, &mb),
        injection,
    })
}

impl std::fmt::Display for Report {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "A: {} ({})  B: {} ({})", self.a.dir, self.a.mode, self.b.dir, self.b.mode)?;
        writeln!(f, "seeds compared: {}", self.seeds.len())?;
        writeln!(
            f,
            "violating runs: A {} (max {:.3e})  B {} (max {:.3e})",
            self.a.violating_runs, self.a.max_violation, self.b.violating_runs, self.b.max_violation
        )?;
        writeln!(f, "mean energy cost: A {:.3}  B {:.3}", self.a.mean_energy_cost, self.b.mean_energy_cost)?;
        writeln!(f, "injection setpoint sum, steps {}..{}:", self.from_step, self.to_step)?;
        for c in &self.injection {
            writeln!(f, "  node {:>4}: A {:10.4}  B {:10.4}  B-A {:+10.4}", c.booster, c.a, c.b, c.difference)?;
        }
        Ok(())
    }
}
