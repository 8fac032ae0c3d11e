//! Scheduling of on/off cooling units in adjacent rooms. Room `i` has
//! temperatures `T_i(0..=H)` and switches `u_i(0..H)` with
//!
//! ```text
//! T_i(t+1) = T_i(t) + b u_i(t) + a (T_i(t) + T_amb(t) + sum_{j ~ i} T_j(t)) / (|N(i)| + 2) - a T_i(t)
//! ```
//!
//! and cost `sum_t c(t) u_i(t) + gamma (T_i(t) - T_ref)^p`. The switches enter
//! the coupling dynamics, so the generated instance carries continuous copies
//! of them with an absolute-value penalty.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    reformulate_integer_coupling, BlockSpec, Coupling, ObjectiveTerm, StructuredMicp, DEFAULT_PENALTY,
};

const DEFAULT_AMBIENT: &str = include_str!("../data/ambient.csv");
pub const HIGH_PRICE: f64 = 25.67;
pub const LOW_PRICE: f64 = 2.46;
pub const MEDIUM_PRICE: f64 = 4.62;
/// Tolerance for simulation and copy consistency of decoded schedules.
pub const DECODE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Topology {
    /// Every pair of rooms is adjacent.
    #[serde(alias = "three-room", alias = "triangle")]
    Complete,
    #[serde(alias = "four-room")]
    Cycle,
    /// Rooms in a line.
    #[serde(alias = "linear-n", alias = "line")]
    Path,
}

impl Topology {
    pub fn neighbors(self, rooms: usize) -> Vec<Vec<usize>> {
        (0..rooms)
            .map(|i| {
                (0..rooms)
                    .filter(|&j| {
                        j != i
                            && match self {
                                Topology::Complete => true,
                                Topology::Path => i.abs_diff(j) == 1,
                                Topology::Cycle => {
                                    i.abs_diff(j) == 1 || (rooms > 2 && i.abs_diff(j) == rooms - 1)
                                }
                            }
                    })
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TclConfig {
    pub rooms: usize,
    pub horizon: usize,
    pub topology: Topology,
    /// Symmetric 0/1 adjacency matrix; overrides `topology` when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adjacency: Option<Vec<Vec<u8>>>,
    pub gamma: f64,
    /// Exponent of the comfort term, 2 or 4.
    pub order: u32,
    /// Price per step; defaults to [`default_prices`].
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prices: Option<Vec<f64>>,
    pub deadband: [f64; 2],
    pub a: f64,
    pub b: f64,
    pub t0: f64,
    pub t_ref: f64,
    /// Ambient temperature per step (`horizon + 1` values); defaults to the
    /// bundled profile.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ambient: Option<Vec<f64>>,
    pub penalty: f64,
}

impl Default for TclConfig {
    fn default() -> Self {
        Self {
            rooms: 3,
            horizon: 8,
            topology: Topology::Complete,
            adjacency: None,
            gamma: 0.0,
            order: 2,
            prices: None,
            deadband: [18.0, 24.0],
            a: 0.2,
            b: -2.0,
            t0: 20.0,
            t_ref: 21.0,
            ambient: None,
            penalty: DEFAULT_PENALTY,
        }
    }
}

impl TclConfig {
    pub fn new(rooms: usize, horizon: usize, topology: Topology) -> Self {
        Self {
            rooms,
            horizon,
            topology,
            ..Self::default()
        }
    }

    pub fn neighbors(&self) -> Result<Vec<Vec<usize>>> {
        let Some(adj) = &self.adjacency else {
            return Ok(self.topology.neighbors(self.rooms));
        };
        if adj.len() != self.rooms || adj.iter().any(|r| r.len() != self.rooms) {
            return Err(Error::InvalidParameter(format!("adjacency must be {0}x{0}", self.rooms)));
        }
        for i in 0..self.rooms {
            if adj[i][i] != 0 {
                return Err(Error::InvalidParameter(format!("adjacency has a self loop at room {i}")));
            }
            for j in 0..self.rooms {
                if adj[i][j] != adj[j][i] || adj[i][j] > 1 {
                    return Err(Error::InvalidParameter("adjacency must be a symmetric 0/1 matrix".into()));
                }
            }
        }
        Ok((0..self.rooms).map(|i| (0..self.rooms).filter(|&j| adj[i][j] == 1).collect()).collect())
    }

    pub fn prices(&self) -> Result<Vec<f64>> {
        match &self.prices {
            None => Ok(default_prices(self.horizon)),
            Some(p) if p.len() >= self.horizon && p.iter().all(|v| v.is_finite()) => {
                Ok(p[..self.horizon].to_vec())
            }
            Some(p) => Err(Error::InvalidParameter(format!(
                "{} finite prices needed, got {}",
                self.horizon,
                p.len()
            ))),
        }
    }

    pub fn ambient(&self) -> Result<Vec<f64>> {
        let amb = match &self.ambient {
            Some(a) => a.clone(),
            None => parse_ambient(DEFAULT_AMBIENT, 0)?,
        };
        if amb.len() < self.horizon + 1 {
            return Err(Error::InvalidParameter(format!(
                "ambient profile has {} values, need horizon + 1 = {}",
                amb.len(),
                self.horizon + 1
            )));
        }
        Ok(amb[..=self.horizon].to_vec())
    }

    pub fn check(&self) -> Result<()> {
        let [lo, hi] = self.deadband;
        if self.rooms == 0 || self.horizon == 0 {
            return Err(Error::InvalidParameter("rooms and horizon must be at least 1".into()));
        }
        if !(lo < self.t0 && self.t0 < hi) {
            return Err(Error::InvalidParameter(format!(
                "initial temperature {} must lie strictly inside the deadband [{lo}, {hi}]",
                self.t0
            )));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::InvalidParameter(format!("gamma must be nonnegative, got {}", self.gamma)));
        }
        if self.order != 2 && self.order != 4 {
            return Err(Error::InvalidParameter(format!("order must be 2 or 4, got {}", self.order)));
        }
        if ![self.a, self.b, self.t_ref].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter("a, b and t_ref must be finite".into()));
        }
        self.neighbors()?;
        self.prices()?;
        self.ambient()?;
        Ok(())
    }
}

/// High price on steps 6..=12 and 29..=35; elsewhere blocks of six steps
/// alternate between the low and the medium price.
pub fn default_prices(horizon: usize) -> Vec<f64> {
    (0..horizon)
        .map(|t| {
            if (6..=12).contains(&t) || (29..=35).contains(&t) {
                HIGH_PRICE
            } else if (t / 6) % 2 == 0 {
                LOW_PRICE
            } else {
                MEDIUM_PRICE
            }
        })
        .collect()
}

/// `mean + amplitude sin(2 pi (t + phase) / 24)` for `t = 0..=horizon`.
pub fn synth_ambient(horizon: usize, mean: f64, amplitude: f64, phase: f64) -> Result<Vec<f64>> {
    if ![mean, amplitude, phase].iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidParameter("ambient parameters must be finite".into()));
    }
    Ok((0..=horizon)
        .map(|t| mean + amplitude * (2.0 * std::f64::consts::PI * (t as f64 + phase) / 24.0).sin())
        .collect())
}

/// One value per line; a non-numeric first line is taken as a header. At
/// least `horizon + 1` values are required.
pub fn parse_ambient(text: &str, horizon: usize) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let field = line.split(',').next().unwrap_or("").trim();
        if field.is_empty() {
            continue;
        }
        match field.parse::<f64>() {
            Ok(v) if v.is_finite() => out.push(v),
            _ if n == 0 => continue,
            _ => {
                return Err(Error::Parse {
                    line: n + 1,
                    column: 1,
                    message: format!("not a temperature: `{field}`"),
                })
            }
        }
    }
    if out.len() < horizon + 1 {
        return Err(Error::InvalidParameter(format!(
            "ambient file has {} values, need {}",
            out.len(),
            horizon + 1
        )));
    }
    Ok(out)
}

pub fn load_ambient(path: &Path, horizon: usize) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_ambient(&text, horizon)
}

/// The bundled ambient profile: 49 hourly values of a hot day,
/// `synth_ambient(48, 28, 6, 0)` rounded to 1e-3.
pub fn default_ambient() -> Vec<f64> {
    parse_ambient(DEFAULT_AMBIENT, 0).expect("bundled profile parses")
}

/// Layout of room `i` in the generated instance: `T_i(t)` is local
/// continuous variable `t`, the copy of `u_i(t)` is `horizon + 1 + t` and
/// `u_i(t)` is local integer `t`.
pub fn generate(config: &TclConfig) -> Result<StructuredMicp> {
    config.check()?;
    let h = config.horizon;
    let r = config.rooms;
    let neighbors = config.neighbors()?;
    let prices = config.prices()?;
    let ambient = config.ambient()?;
    let [lo, hi] = config.deadband;
    let mut blocks = Vec::with_capacity(r);
    for _ in 0..r {
        let mut bounds_x = vec![[lo, hi]; h + 1];
        bounds_x[0] = [config.t0, config.t0];
        let mut a = vec![0.0; h + 1];
        a.extend(&prices);
        let mut terms = vec![ObjectiveTerm::Affine { a, c: 0.0 }];
        if config.gamma > 0.0 {
            for t in 1..=h {
                let mut q = vec![0.0; 2 * h + 1];
                q[t] = 1.0;
                terms.push(ObjectiveTerm::Power {
                    q,
                    r: config.t_ref,
                    p: config.order,
                    w: config.gamma,
                });
            }
        }
        blocks.push(BlockSpec {
            nx: h + 1,
            nz: h,
            bounds_x,
            bounds_z: vec![[0.0, 1.0]; h],
            ineqs: vec![],
            terms,
        });
    }
    let mut coupling = Coupling::default();
    let mut coupling_z = Vec::with_capacity(r * h);
    for i in 0..r {
        let d = neighbors[i].len() as f64 + 2.0;
        let share = config.a / d;
        for t in 0..h {
            let row = i * h + t;
            let col = |room: usize, step: usize| room * (h + 1) + step;
            coupling.triplets.push((row, col(i, t + 1), 1.0));
            coupling.triplets.push((row, col(i, t), -(1.0 - config.a + share)));
            for &j in &neighbors[i] {
                coupling.triplets.push((row, col(j, t), -share));
            }
            coupling.rhs.push(share * ambient[t]);
            coupling_z.push((row, i * h + t, -config.b));
        }
    }
    let pre = StructuredMicp {
        blocks,
        coupling,
        copies: vec![],
    };
    reformulate_integer_coupling(&pre, &coupling_z, config.penalty)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomSchedule {
    /// Temperatures re-simulated from the switches.
    pub temperature: Vec<f64>,
    pub switches: Vec<u8>,
    pub energy_cost: f64,
    pub comfort_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TclSolution {
    pub rooms: Vec<RoomSchedule>,
    pub energy_cost: f64,
    pub comfort_cost: f64,
    /// Largest gap between simulated and solver temperatures.
    pub max_simulation_error: f64,
    /// Largest `|y - u|` over the switch copies.
    pub max_copy_mismatch: f64,
    /// Largest excursion of the simulated temperatures out of the deadband.
    pub max_deadband_violation: f64,
    pub warnings: Vec<String>,
}

/// Re-simulates the dynamics from the switches in `z` and compares with the
/// solver's temperatures and switch copies in `x`.
pub fn decode_solution(config: &TclConfig, x: &[f64], z: &[f64]) -> Result<TclSolution> {
    config.check()?;
    let h = config.horizon;
    let r = config.rooms;
    if x.len() != r * (2 * h + 1) || z.len() != r * h {
        return Err(Error::Dimension(format!(
            "expected {} continuous and {} integer values, got {} and {}",
            r * (2 * h + 1),
            r * h,
            x.len(),
            z.len()
        )));
    }
    let neighbors = config.neighbors()?;
    let prices = config.prices()?;
    let ambient = config.ambient()?;
    let u = |i: usize, t: usize| z[i * h + t].round();
    let solver_t = |i: usize, t: usize| x[i * (2 * h + 1) + t];
    let copy = |i: usize, t: usize| x[i * (2 * h + 1) + h + 1 + t];
    let mut temps = vec![vec![config.t0; h + 1]; r];
    for t in 0..h {
        for i in 0..r {
            let d = neighbors[i].len() as f64 + 2.0;
            let sum: f64 = temps[i][t] + ambient[t] + neighbors[i].iter().map(|&j| temps[j][t]).sum::<f64>();
            temps[i][t + 1] = temps[i][t] + config.b * u(i, t) + config.a * (sum / d - temps[i][t]);
        }
    }
    let [lo, hi] = config.deadband;
    let mut sol = TclSolution {
        rooms: Vec::with_capacity(r),
        energy_cost: 0.0,
        comfort_cost: 0.0,
        max_simulation_error: 0.0,
        max_copy_mismatch: 0.0,
        max_deadband_violation: 0.0,
        warnings: Vec::new(),
    };
    for (i, temperature) in temps.into_iter().enumerate() {
        let switches: Vec<u8> = (0..h).map(|t| u(i, t) as u8).collect();
        let energy_cost: f64 = (0..h).map(|t| prices[t] * u(i, t)).sum();
        let comfort_cost: f64 = if config.gamma > 0.0 {
            (1..=h)
                .map(|t| config.gamma * (temperature[t] - config.t_ref).powi(config.order as i32))
                .sum()
        } else {
            0.0
        };
        for t in 0..=h {
            sol.max_simulation_error = sol.max_simulation_error.max((temperature[t] - solver_t(i, t)).abs());
            sol.max_deadband_violation = sol
                .max_deadband_violation
                .max(lo - temperature[t])
                .max(temperature[t] - hi);
        }
        for t in 0..h {
            sol.max_copy_mismatch = sol.max_copy_mismatch.max((copy(i, t) - u(i, t)).abs());
        }
        sol.energy_cost += energy_cost;
        sol.comfort_cost += comfort_cost;
        sol.rooms.push(RoomSchedule {
            temperature,
            switches,
            energy_cost,
            comfort_cost,
        });
    }
    if sol.max_copy_mismatch > DECODE_TOL {
        let msg = format!(
            "switch copies differ from the switches by {:.3e}; increase the penalty",
            sol.max_copy_mismatch
        );
        log::warn!("{msg}");
        sol.warnings.push(msg);
    }
    if sol.max_simulation_error > DECODE_TOL {
        let msg = format!("simulated temperatures differ by {:.3e}", sol.max_simulation_error);
        log::warn!("{msg}");
        sol.warnings.push(msg);
    }
    Ok(sol)
}
