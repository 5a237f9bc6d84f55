//! Network description, validation and DC power-flow sensitivities.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dense::{Cholesky, SymMatrix};
use crate::matrix::Matrix;

/// The bundled 5-bus system with one 200 MW wind farm at bus 3.
pub const FIVE_BUS_JSON: &str = include_str!("../data/case5.json");
/// Same system with a second wind farm at bus 5.
pub const FIVE_BUS_TWO_FARMS_JSON: &str = include_str!("../data/case5_2w.json");

/// Tolerance for the PTDF consistency check.
pub const PTDF_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CaseError {
    #[error("case file does not parse: {0}")]
    Parse(String),
    #[error("invalid case field `{field}`: {detail}")]
    Validation { field: String, detail: String },
    #[error("network is disconnected or has a singular susceptance matrix")]
    SingularNetwork,
}

fn invalid(field: impl Into<String>, detail: impl Into<String>) -> CaseError {
    CaseError::Validation { field: field.into(), detail: detail.into() }
}

/// On-disk case format. Bus numbers are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseDescription {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub buses: usize,
    pub generators: Vec<GeneratorDesc>,
    pub lines: Vec<LineDesc>,
    pub wind: Vec<WindDesc>,
    pub demand_mw: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ptdf: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slack_bus: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorDesc {
    pub bus: usize,
    pub pmin_mw: f64,
    pub pmax_mw: f64,
    pub cost_energy: f64,
    pub cost_reserve: f64,
    pub cost_activation: f64,
    pub cost_in: f64,
    pub cost_out_up: f64,
    pub cost_out_dn: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineDesc {
    pub from: usize,
    pub to: usize,
    pub susceptance_pu: f64,
    pub limit_mw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindDesc {
    pub bus: usize,
    pub capacity_mw: f64,
}

/// Validated network. All indices are 0-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkCase {
    pub n_buses: usize,
    pub n_generators: usize,
    pub n_lines: usize,
    pub n_wind: usize,
    pub gen_bus: Vec<usize>,
    pub wind_bus: Vec<usize>,
    pub wind_capacity: Vec<f64>,
    pub demand: Vec<f64>,
    pub gen_min: Vec<f64>,
    pub gen_max: Vec<f64>,
    pub line_from: Vec<usize>,
    pub line_to: Vec<usize>,
    pub line_limit: Vec<f64>,
    pub line_susceptance: Vec<f64>,
    pub slack_bus: usize,
    /// Lines × buses; flow on line `l` is positive in the `from → to` direction.
    pub ptdf: Matrix,
    pub cost_energy: Vec<f64>,
    pub cost_reserve: Vec<f64>,
    pub cost_activation: Vec<f64>,
    pub cost_in: Vec<f64>,
    pub cost_out_up: Vec<f64>,
    pub cost_out_dn: Vec<f64>,
}

impl CaseDescription {
    pub fn from_json(text: &str) -> Result<Self, CaseError> {
        serde_json::from_str(text).map_err(|e| CaseError::Parse(e.to_string()))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("case description serializes")
    }
}

impl NetworkCase {
    pub fn from_json(text: &str) -> Result<Self, CaseError> {
        Self::from_description(&CaseDescription::from_json(text)?)
    }

    pub fn five_bus() -> Self {
        Self::from_json(FIVE_BUS_JSON).expect("bundled case is valid")
    }

    pub fn five_bus_two_farms() -> Self {
        Self::from_json(FIVE_BUS_TWO_FARMS_JSON).expect("bundled case is valid")
    }

    pub fn from_description(desc: &CaseDescription) -> Result<Self, CaseError> {
        let nb = desc.buses;
        if nb == 0 {
            return Err(invalid("buses", "at least one bus is required"));
        }
        if desc.generators.is_empty() {
            return Err(invalid("generators", "at least one generator is required"));
        }
        let bus = |field: String, b: usize| {
            if (1..=nb).contains(&b) {
                Ok(b - 1)
            } else {
                Err(invalid(field, format!("bus {b} is not in 1..={nb}")))
            }
        };
        let nonneg = |field: String, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(v)
            } else {
                Err(invalid(field, format!("must be finite and >= 0, got {v}")))
            }
        };

        let ng = desc.generators.len();
        let mut gen_bus = Vec::with_capacity(ng);
        let (mut gen_min, mut gen_max) = (Vec::with_capacity(ng), Vec::with_capacity(ng));
        let mut costs: [Vec<f64>; 6] = Default::default();
        for (k, g) in desc.generators.iter().enumerate() {
            let f = |name: &str| format!("generators[{k}].{name}");
            gen_bus.push(bus(f("bus"), g.bus)?);
            if !(g.pmin_mw.is_finite() && g.pmax_mw.is_finite()) || g.pmin_mw > g.pmax_mw {
                return Err(invalid(
                    f("pmin_mw"),
                    format!("generator {} has pmin {} > pmax {}", k + 1, g.pmin_mw, g.pmax_mw),
                ));
            }
            gen_min.push(g.pmin_mw);
            gen_max.push(g.pmax_mw);
            let values = [
                ("cost_energy", g.cost_energy),
                ("cost_reserve", g.cost_reserve),
                ("cost_activation", g.cost_activation),
                ("cost_in", g.cost_in),
                ("cost_out_up", g.cost_out_up),
                ("cost_out_dn", g.cost_out_dn),
            ];
            for (slot, (name, v)) in costs.iter_mut().zip(values) {
                slot.push(nonneg(f(name), v)?);
            }
        }

        let nl = desc.lines.len();
        let mut lines = Vec::with_capacity(nl);
        let mut line_limit = Vec::with_capacity(nl);
        for (k, l) in desc.lines.iter().enumerate() {
            let f = |name: &str| format!("lines[{k}].{name}");
            let from = bus(f("from"), l.from)?;
            let to = bus(f("to"), l.to)?;
            if from == to {
                return Err(invalid(f("to"), "line endpoints must differ"));
            }
            if !(l.susceptance_pu.is_finite() && l.susceptance_pu > 0.0) {
                return Err(invalid(f("susceptance_pu"), "must be > 0"));
            }
            if !(l.limit_mw.is_finite() && l.limit_mw > 0.0) {
                return Err(invalid(f("limit_mw"), "must be > 0"));
            }
            lines.push((from, to, l.susceptance_pu));
            line_limit.push(l.limit_mw);
        }

        let mut wind_bus = Vec::with_capacity(desc.wind.len());
        let mut wind_capacity = Vec::with_capacity(desc.wind.len());
        for (k, w) in desc.wind.iter().enumerate() {
            wind_bus.push(bus(format!("wind[{k}].bus"), w.bus)?);
            wind_capacity.push(nonneg(format!("wind[{k}].capacity_mw"), w.capacity_mw)?);
        }

        if desc.demand_mw.len() != nb {
            return Err(invalid(
                "demand_mw",
                format!("expected {nb} entries, got {}", desc.demand_mw.len()),
            ));
        }
        if !crate::math::all_finite(&desc.demand_mw) {
            return Err(invalid("demand_mw", "entries must be finite"));
        }
        let slack_bus = bus("slack_bus".into(), desc.slack_bus.unwrap_or(1))?;

        let computed = compute_ptdf(nb, &lines, slack_bus)?;
        let ptdf = match &desc.ptdf {
            None => computed,
            Some(given) => {
                let given = Matrix::from_row_major(nl, nb, given.clone()).ok_or_else(|| {
                    invalid("ptdf", format!("expected {nl} x {nb} = {} entries", nl * nb))
                })?;
                let diff = given.max_abs_diff(&computed);
                if !(diff <= PTDF_TOL) {
                    return Err(invalid(
                        "ptdf",
                        format!("differs from the susceptance flow solve by {diff:e}"),
                    ));
                }
                given
            }
        };

        let [cost_energy, cost_reserve, cost_activation, cost_in, cost_out_up, cost_out_dn] =
            costs;
        Ok(Self {
            n_buses: nb,
            n_generators: ng,
            n_lines: nl,
            n_wind: wind_bus.len(),
            gen_bus,
            wind_bus,
            wind_capacity,
            demand: desc.demand_mw.clone(),
            gen_min,
            gen_max,
            line_from: lines.iter().map(|l| l.0).collect(),
            line_to: lines.iter().map(|l| l.1).collect(),
            line_limit,
            line_susceptance: lines.iter().map(|l| l.2).collect(),
            slack_bus,
            ptdf,
            cost_energy,
            cost_reserve,
            cost_activation,
            cost_in,
            cost_out_up,
            cost_out_dn,
        })
    }

    /// `Φ S_g`, lines × generators.
    pub fn ptdf_gen(&self) -> Matrix {
        self.ptdf_columns(&self.gen_bus)
    }

    /// `Φ S_w`, lines × wind farms.
    pub fn ptdf_wind(&self) -> Matrix {
        self.ptdf_columns(&self.wind_bus)
    }

    fn ptdf_columns(&self, buses: &[usize]) -> Matrix {
        let mut m = Matrix::zeros(self.n_lines, buses.len());
        for l in 0..self.n_lines {
            for (k, b) in buses.iter().enumerate() {
                m[(l, k)] = self.ptdf[(l, *b)];
            }
        }
        m
    }

    /// Line flows for the given generator and wind injections.
    pub fn line_flows(&self, gen: &[f64], wind: &[f64]) -> Vec<f64> {
        let mut inj: Vec<f64> = self.demand.iter().map(|d| -d).collect();
        for (g, b) in gen.iter().zip(&self.gen_bus) {
            inj[*b] += g;
        }
        for (w, b) in wind.iter().zip(&self.wind_bus) {
            inj[*b] += w;
        }
        self.ptdf.mul_vec(&inj)
    }

    pub fn total_demand(&self) -> f64 {
        self.demand.iter().sum()
    }

    /// Rebuilds a case description (1-based buses, no explicit PTDF).
    pub fn to_description(&self) -> CaseDescription {
        CaseDescription {
            name: None,
            buses: self.n_buses,
            generators: (0..self.n_generators)
                .map(|g| GeneratorDesc {
                    bus: self.gen_bus[g] + 1,
                    pmin_mw: self.gen_min[g],
                    pmax_mw: self.gen_max[g],
                    cost_energy: self.cost_energy[g],
                    cost_reserve: self.cost_reserve[g],
                    cost_activation: self.cost_activation[g],
                    cost_in: self.cost_in[g],
                    cost_out_up: self.cost_out_up[g],
                    cost_out_dn: self.cost_out_dn[g],
                })
                .collect(),
            lines: (0..self.n_lines)
                .map(|l| LineDesc {
                    from: self.line_from[l] + 1,
                    to: self.line_to[l] + 1,
                    susceptance_pu: self.line_susceptance[l],
                    limit_mw: self.line_limit[l],
                })
                .collect(),
            wind: (0..self.n_wind)
                .map(|w| WindDesc { bus: self.wind_bus[w] + 1, capacity_mw: self.wind_capacity[w] })
                .collect(),
            demand_mw: self.demand.clone(),
            ptdf: None,
            slack_bus: Some(self.slack_bus + 1),
        }
    }
}

/// DC power-flow sensitivities for `lines = (from, to, susceptance)` with
/// 0-based buses. Column `slack_bus` is zero.
pub fn compute_ptdf(
    n_buses: usize,
    lines: &[(usize, usize, f64)],
    slack_bus: usize,
) -> Result<Matrix, CaseError> {
    if slack_bus >= n_buses {
        return Err(invalid("slack_bus", "out of range"));
    }
    if !connected(n_buses, lines) {
        return Err(CaseError::SingularNetwork);
    }
    // reduced susceptance matrix without the slack row and column
    let red = |b: usize| if b < slack_bus { Some(b) } else if b > slack_bus { Some(b - 1) } else { None };
    let m = n_buses - 1;
    let mut bmat = SymMatrix::zeros(m);
    for &(f, t, b) in lines {
        let (rf, rt) = (red(f), red(t));
        if let Some(i) = rf {
            bmat.add(i, i, b);
        }
        if let Some(j) = rt {
            bmat.add(j, j, b);
        }
        if let (Some(i), Some(j)) = (rf, rt) {
            let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
            bmat.add(hi, lo, -b);
        }
    }
    let chol = Cholesky::factor(&bmat);
    if chol.dropped() > 0 {
        return Err(CaseError::SingularNetwork);
    }
    let mut ptdf = Matrix::zeros(lines.len(), n_buses);
    let mut unit = vec![0.0; m];
    for bus in 0..n_buses {
        let Some(k) = red(bus) else { continue };
        unit.iter_mut().for_each(|v| *v = 0.0);
        unit[k] = 1.0;
        let theta_red = chol.solve(&unit);
        let angle = |b: usize| red(b).map_or(0.0, |i| theta_red[i]);
        for (l, &(f, t, b)) in lines.iter().enumerate() {
            ptdf[(l, bus)] = b * (angle(f) - angle(t));
        }
    }
    Ok(ptdf)
}

fn connected(n: usize, lines: &[(usize, usize, f64)]) -> bool {
    let mut adj = vec![Vec::new(); n];
    for &(f, t, _) in lines {
        adj[f].push(t);
        adj[t].push(f);
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    while let Some(b) = queue.pop_front() {
        for &nb in &adj[b] {
            if !seen[nb] {
                seen[nb] = true;
                queue.push_back(nb);
            }
        }
    }
    seen.into_iter().all(|s| s)
}
