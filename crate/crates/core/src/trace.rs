//! Per-iteration records of the outer loops and their CSV form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "iter,U,LB,gap,num_cuts,card_Pi,t_sub_ms,t_master_ms";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    /// Best objective found so far.
    pub upper: f64,
    /// Running maximum of the master bounds.
    pub lower: f64,
    pub num_cuts: usize,
    /// Distinct integer points evaluated so far.
    pub card_pi: usize,
    pub t_sub_ms: f64,
    pub t_master_ms: f64,
    /// Bound returned by this iteration's master alone.
    #[serde(default)]
    pub master_bound: f64,
    /// Block subproblem values of this iteration (empty for plain OA).
    #[serde(default)]
    pub block_values: Vec<f64>,
    /// OA iterations of each block subproblem.
    #[serde(default)]
    pub block_iters: Vec<usize>,
}

impl TraceRow {
    pub fn gap(&self) -> f64 {
        self.upper - self.lower
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub rows: Vec<TraceRow>,
}

impl IterationTrace {
    pub fn push(&mut self, row: TraceRow) {
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    /// CSV with [`CSV_HEADER`], followed by `V_k` and `inner_k` columns when
    /// the rows carry block subproblem data. Without timings the two time
    /// columns are zero, which makes the output a pure function of the inputs.
    pub fn to_csv(&self, timings: bool) -> String {
        let blocks = self.rows.iter().map(|r| r.block_values.len()).max().unwrap_or(0);
        let mut out = String::from(CSV_HEADER);
        for k in 1..=blocks {
            out.push_str(&format!(",V_{k}"));
        }
        for k in 1..=blocks {
            out.push_str(&format!(",inner_{k}"));
        }
        out.push('\n');
        for r in &self.rows {
            let (ts, tm) = if timings { (r.t_sub_ms, r.t_master_ms) } else { (0.0, 0.0) };
            out.push_str(&format!(
                "{},{},{},{},{},{},{:.3},{:.3}\n",
                r.iter,
                fmt_f64(r.upper),
                fmt_f64(r.lower),
                fmt_f64(r.gap()),
                r.num_cuts,
                r.card_pi,
                ts,
                tm
            ));
            if blocks > 0 {
                out.pop();
                for k in 0..blocks {
                    out.push(',');
                    out.push_str(&r.block_values.get(k).map_or(String::new(), |v| fmt_f64(*v)));
                }
                for k in 0..blocks {
                    out.push(',');
                    out.push_str(&r.block_iters.get(k).map_or(String::new(), |v| v.to_string()));
                }
                out.push('\n');
            }
        }
        out
    }

    /// Reads the columns written by [`IterationTrace::to_csv`]; per-block
    /// columns are ignored.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.trim().starts_with(CSV_HEADER) => {}
            Some((n, _)) => {
                return Err(Error::Parse {
                    line: n + 1,
                    column: 1,
                    message: format!("expected header `{CSV_HEADER}`"),
                })
            }
            None => {
                return Err(Error::Parse {
                    line: 1,
                    column: 1,
                    message: "empty trace".into(),
                })
            }
        }
        let mut trace = IterationTrace::default();
        for (n, line) in lines {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() < 8 {
                return Err(Error::Parse {
                    line: n + 1,
                    column: 1,
                    message: format!("expected at least 8 fields, found {}", fields.len()),
                });
            }
            let column_of = |k: usize| fields[..k].iter().map(|f| f.len() + 1).sum::<usize>() + 1;
            let num = |k: usize| -> Result<f64> {
                fields[k].parse::<f64>().map_err(|e| Error::Parse {
                    line: n + 1,
                    column: column_of(k),
                    message: format!("field {k}: {e}"),
                })
            };
            let int = |k: usize| -> Result<usize> {
                fields[k].parse::<usize>().map_err(|e| Error::Parse {
                    line: n + 1,
                    column: column_of(k),
                    message: format!("field {k}: {e}"),
                })
            };
            let lower = num(2)?;
            trace.push(TraceRow {
                iter: int(0)?,
                upper: num(1)?,
                lower,
                num_cuts: int(4)?,
                card_pi: int(5)?,
                t_sub_ms: num(6)?,
                t_master_ms: num(7)?,
                master_bound: lower,
                block_values: Vec::new(),
                block_iters: Vec::new(),
            });
        }
        Ok(trace)
    }
}

/// Shortest representation that round-trips, with `inf` spelled out.
fn fmt_f64(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v:?}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> IterationTrace {
        let mut t = IterationTrace::default();
        t.push(TraceRow {
            iter: 1,
            upper: 2.5,
            lower: f64::NEG_INFINITY,
            num_cuts: 3,
            card_pi: 1,
            t_sub_ms: 1.25,
            t_master_ms: 0.5,
            master_bound: f64::NEG_INFINITY,
            block_values: vec![],
            block_iters: vec![],
        });
        t.push(TraceRow {
            iter: 2,
            upper: 0.5,
            lower: 0.4999999,
            num_cuts: 5,
            card_pi: 2,
            t_sub_ms: 2.0,
            t_master_ms: 0.75,
            master_bound: 0.4999999,
            block_values: vec![],
            block_iters: vec![],
        });
        t
    }

    #[test]
    fn csv_round_trip() {
        let t = sample();
        let back = IterationTrace::from_csv(&t.to_csv(true)).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.rows[1].upper, 0.5);
        assert_eq!(back.rows[1].lower, 0.4999999);
        assert_eq!(back.rows[0].lower, f64::NEG_INFINITY);
        assert_eq!(back.rows[0].t_sub_ms, 1.25);
        assert_eq!(back.to_csv(true), t.to_csv(true));
    }

    #[test]
    fn no_timings_zeroes_time_columns() {
        let csv = sample().to_csv(false);
        assert!(csv.lines().skip(1).all(|l| l.ends_with(",0.000,0.000")));
    }

    #[test]
    fn block_columns_follow_the_fixed_ones() {
        let mut t = sample();
        t.rows[1].block_values = vec![0.5, 1.0];
        t.rows[1].block_iters = vec![2, 3];
        let csv = t.to_csv(false);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), format!("{CSV_HEADER},V_1,V_2,inner_1,inner_2"));
        assert!(lines.next().unwrap().ends_with(",0.000,0.000,,,,"));
        assert!(lines.next().unwrap().ends_with(",0.000,0.000,0.5,1.0,2,3"));
        assert_eq!(IterationTrace::from_csv(&csv).unwrap().len(), 2);
    }

    #[test]
    fn bad_field_reports_position() {
        let text = format!("{CSV_HEADER}\n1,2.0,x,0,1,1,0,0\n");
        match IterationTrace::from_csv(&text) {
            Err(Error::Parse { line, column, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(column, 7);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
