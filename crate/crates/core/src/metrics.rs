//! Prescriptiveness competitive ratio on empirical cost samples.

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Per-observation costs of a policy, the benchmark and the hindsight decision.
#[derive(Debug, Clone, PartialEq)]
pub struct CostTriple {
    pub policy_costs: Vec<f64>,
    pub benchmark_costs: Vec<f64>,
    pub hindsight_costs: Vec<f64>,
}

impl CostTriple {
    pub fn new(policy_costs: Vec<f64>, benchmark_costs: Vec<f64>, hindsight_costs: Vec<f64>) -> Result<Self> {
        let n = policy_costs.len();
        if n == 0 {
            return Err(Error::invalid("cost triple is empty"));
        }
        if benchmark_costs.len() != n || hindsight_costs.len() != n {
            return Err(Error::invalid(format!(
                "cost sequences differ in length: {n}, {}, {}",
                benchmark_costs.len(),
                hindsight_costs.len()
            )));
        }
        let all = policy_costs.iter().chain(&benchmark_costs).chain(&hindsight_costs);
        if all.into_iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("costs must be finite"));
        }
        Ok(CostTriple {
            policy_costs,
            benchmark_costs,
            hindsight_costs,
        })
    }

    pub fn len(&self) -> usize {
        self.policy_costs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policy_costs.is_empty()
    }

    /// Largest violation of `hindsight <= min(policy, benchmark)`.
    pub fn hindsight_violation(&self) -> f64 {
        (0..self.len())
            .map(|i| {
                self.hindsight_costs[i] - self.policy_costs[i].min(self.benchmark_costs[i])
            })
            .fold(0.0, f64::max)
    }

    pub fn means(&self) -> (f64, f64, f64) {
        (
            mean(&self.policy_costs),
            mean(&self.benchmark_costs),
            mean(&self.hindsight_costs),
        )
    }

    /// `policy,benchmark,hindsight`, one row per observation, floats in
    /// shortest round-trip form.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["policy", "benchmark", "hindsight"])?;
        for i in 0..self.len() {
            w.write_record([
                self.policy_costs[i].to_string(),
                self.benchmark_costs[i].to_string(),
                self.hindsight_costs[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["policy", "benchmark", "hindsight"] {
            return Err(Error::invalid("cost file header must be policy,benchmark,hindsight"));
        }
        let (mut p, mut b, mut h) = (Vec::new(), Vec::new(), Vec::new());
        for rec in r.records() {
            let rec = rec?;
            let field = |i: usize| -> Result<f64> {
                rec[i]
                    .parse()
                    .map_err(|_| Error::invalid(format!("bad cost value `{}`", &rec[i])))
            };
            p.push(field(0)?);
            b.push(field(1)?);
            h.push(field(2)?);
        }
        CostTriple::new(p, b, h)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `1 - (E[policy] - E[hind]) / (E[bench] - E[hind])`; `1` when all three
/// means coincide; `-inf` when only the benchmark attains hindsight.
/// "Coincide" means within `1e-9 (1 + |E[hind]|)`.
pub fn pcr(triple: &CostTriple) -> f64 {
    let (p, b, h) = triple.means();
    pcr_from_means(p, b, h)
}

pub fn pcr_from_means(policy: f64, benchmark: f64, hindsight: f64) -> f64 {
    let tau = 1e-9 * (1.0 + hindsight.abs());
    let denom = benchmark - hindsight;
    if denom > tau {
        1.0 - (policy - hindsight) / denom
    } else if denom.abs() <= tau && (policy - hindsight).abs() <= tau {
        1.0
    } else {
        f64::NEG_INFINITY
    }
}

/// CSV rendering of a score: `-inf` for the sentinel, shortest round-trip
/// decimal otherwise.
pub fn format_score(value: f64) -> String {
    if value == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        value.to_string()
    }
}

pub fn parse_score(text: &str) -> Result<f64> {
    match text.trim() {
        "-inf" => Ok(f64::NEG_INFINITY),
        t => t
            .parse::<f64>()
            .map_err(|_| Error::invalid(format!("not a score: `{t}`"))),
    }
}

/// Linear-interpolated quantile of the finite values (type 7); `-inf`
/// entries sort first.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 >= v.len() || frac == 0.0 {
        return v[i];
    }
    if v[i] == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    v[i] + frac * (v[i + 1] - v[i])
}
