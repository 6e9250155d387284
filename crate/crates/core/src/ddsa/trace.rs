//! Iterate traces and their CSV form.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub const CSV_HEADER: &str = "t,objective,dual_value,eq_viol,ineq_viol,v_metric,z_dispersion,subsolver_tol_max,wall_ms";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    /// `Σ f_j(x_j(t))`.
    pub objective: f64,
    /// `Σ D_j(z̄(t))`, `NaN` when dual evaluation is switched off.
    pub dual_value: f64,
    /// `‖Σ g^E‖₂`.
    pub eq_viol: f64,
    /// `‖max(Σ g^I, 0)‖₂`.
    pub ineq_viol: f64,
    /// `objective - dual_value + (η t / 2N) ‖π_Z[Σ g]‖²`.
    pub v_metric: f64,
    /// `Σ_j ‖Z_j - Z̄‖` for the averaged method, `Σ_j ‖z_j - z̄‖` for the
    /// classical one.
    pub z_dispersion: f64,
    /// Worst subsolver accuracy since the previous row.
    pub subsolver_tol_max: f64,
    /// Elapsed milliseconds; zero unless timing is switched on.
    pub wall_ms: f64,
    /// `‖Z̄(t) - Z̄(0) - (t/N) Σ g_j(x_j(t))‖_∞`, not written to CSV.
    #[serde(skip)]
    pub centroid_error: f64,
}

impl TraceRow {
    pub fn violation_norm(&self) -> f64 {
        self.eq_viol.hypot(self.ineq_viol)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterateTrace {
    pub rows: Vec<TraceRow>,
}

impl IterateTrace {
    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(64 * (self.rows.len() + 1));
        s.push_str(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.t,
                r.objective,
                r.dual_value,
                r.eq_viol,
                r.ineq_viol,
                r.v_metric,
                r.z_dispersion,
                r.subsolver_tol_max,
                r.wall_ms
            )
            .expect("writing to a String");
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, String> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next() {
            Some(h) if h.trim() == CSV_HEADER => {}
            Some(h) => return Err(format!("unexpected trace header {h:?}")),
            None => return Err("empty trace".into()),
        }
        let mut rows = Vec::new();
        for (i, l) in lines.enumerate() {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 9 {
                return Err(format!("trace row {} has {} fields", i + 1, f.len()));
            }
            let num = |k: usize| -> Result<f64, String> {
                f[k].trim()
                    .parse::<f64>()
                    .map_err(|e| format!("trace row {} field {}: {e}", i + 1, k + 1))
            };
            rows.push(TraceRow {
                t: f[0].trim().parse().map_err(|e| format!("trace row {}: {e}", i + 1))?,
                objective: num(1)?,
                dual_value: num(2)?,
                eq_viol: num(3)?,
                ineq_viol: num(4)?,
                v_metric: num(5)?,
                z_dispersion: num(6)?,
                subsolver_tol_max: num(7)?,
                wall_ms: num(8)?,
                centroid_error: f64::NAN,
            });
        }
        Ok(Self { rows })
    }
}

/// Which iterations get a trace row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordSchedule {
    Every(usize),
    /// Rows at `t = 1` and then whenever `t` exceeds the last recorded value
    /// by the given ratio.
    Geometric(f64),
}

impl Default for RecordSchedule {
    fn default() -> Self {
        RecordSchedule::Geometric(1.3)
    }
}

impl RecordSchedule {
    /// The sorted list of recorded iterations in `1..=horizon`. The horizon
    /// itself is always included.
    pub fn points(&self, horizon: usize) -> Vec<usize> {
        let mut out = Vec::new();
        match *self {
            RecordSchedule::Every(k) => {
                let k = k.max(1);
                let mut t = k;
                while t <= horizon {
                    out.push(t);
                    t += k;
                }
            }
            RecordSchedule::Geometric(ratio) => {
                let ratio = ratio.max(1.0 + 1e-9);
                let mut t = 1usize;
                while t <= horizon {
                    out.push(t);
                    let next = ((t as f64) * ratio).ceil() as usize;
                    t = next.max(t + 1);
                }
            }
        }
        if out.last() != Some(&horizon) && horizon > 0 {
            out.push(horizon);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedules() {
        assert_eq!(RecordSchedule::Every(1).points(10), (1..=10).collect::<Vec<_>>());
        assert_eq!(RecordSchedule::Every(4).points(10), vec![4, 8, 10]);
        let g = RecordSchedule::Geometric(1.3).points(1_000_000);
        assert_eq!(g[0], 1);
        assert_eq!(*g.last().unwrap(), 1_000_000);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert!(g.len() < 80);
    }

    #[test]
    fn csv_roundtrip() {
        let t = IterateTrace {
            rows: vec![TraceRow {
                t: 3,
                objective: 0.1,
                dual_value: -1.5e-7,
                eq_viol: 0.0,
                ineq_viol: 2.0,
                v_metric: 1.0 / 3.0,
                z_dispersion: 0.0,
                subsolver_tol_max: 1e-10,
                wall_ms: 0.0,
                centroid_error: 0.0,
            }],
        };
        let csv = t.to_csv();
        assert!(csv.starts_with(CSV_HEADER));
        let back = IterateTrace::from_csv(&csv).unwrap();
        assert_eq!(back.rows[0].v_metric, 1.0 / 3.0);
        assert_eq!(back.to_csv(), csv);
    }
}
