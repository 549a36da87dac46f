//! Simplified radial 110 kV network model and AC power-flow solver.
//!
//! The network is a minimum spanning tree over substation coordinates plus a
//! slack bus at their centroid tied to the nearest substation. Lines follow
//! the π model with per-km parameters; defaults are standard values for a
//! 149-AL1/24-ST1A overhead conductor. The solver is Newton–Raphson on the
//! polar power-flow equations with all load buses treated as PQ.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Substation, SubstationId};
use crate::scalar::Scalar;

/// Per-km line parameters of the π model, editable.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LineParams {
    pub resistance_ohm_per_km: f64,
    pub reactance_ohm_per_km: f64,
    pub shunt_capacitance_nf_per_km: f64,
    pub thermal_rating_ka: f64,
}

impl Default for LineParams {
    fn default() -> Self {
        // 149-AL1/24-ST1A overhead conductor at 110 kV
        Self {
            resistance_ohm_per_km: 0.194,
            reactance_ohm_per_km: 0.41,
            shunt_capacitance_nf_per_km: 8.75,
            thermal_rating_ka: 0.47,
        }
    }
}

/// System frequency used for the shunt susceptance, Hz.
pub const GRID_FREQUENCY_HZ: f64 = 50.0;

/// Per-unit system base power, MVA.
pub const BASE_MVA: f64 = 100.0;

/// Nominal voltage, kV.
pub const BASE_KV: f64 = 110.0;

/// Slack bus voltage setpoint, p.u.
pub const SLACK_VOLTAGE_PU: f64 = 1.02;

/// Lines shorter than this are clamped to keep impedances nonsingular, km.
pub const MIN_LINE_LENGTH_KM: f64 = 0.01;

/// Newton–Raphson convergence threshold on the power mismatch, p.u.
pub const MISMATCH_TOL_PU: f64 = 1e-8;

/// Newton–Raphson iteration budget.
pub const MAX_ITERATIONS: usize = 50;

/// One branch of the radial network, indexed by bus position.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct NetworkEdge {
    pub from: usize,
    pub to: usize,
    pub length_km: f64,
}

/// Radial network: substation load buses plus one slack bus (last index).
#[derive(Clone, Debug)]
pub struct NetworkModel {
    /// Bus coordinates, km; the slack bus is the final entry.
    pub bus_coords: Vec<(f64, f64)>,
    /// Substation behind each load bus, aligned with `bus_coords[..n-1]`.
    pub substation_ids: Vec<SubstationId>,
    pub slack_bus: usize,
    pub edges: Vec<NetworkEdge>,
    pub line_params: LineParams,
}

/// Euclidean minimum spanning tree over a point set, via Kruskal with a
/// deterministic tie-break on the lexicographic edge (i, j).
pub fn build_mst<F: Scalar>(points: &[(F, F)]) -> Result<Vec<(usize, usize)>> {
    let n = points.len();
    if n < 2 {
        return Err(Error::PowerFlow(format!(
            "minimum spanning tree needs at least 2 points, got {n}"
        )));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if points[i] == points[j] {
                return Err(Error::PowerFlow(format!(
                    "duplicate coordinates at points {i} and {j}"
                )));
            }
        }
    }
    let mut edges: Vec<(f64, usize, usize)> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = (points[i].0 - points[j].0).to_f64_lossy();
            let dy = (points[i].1 - points[j].1).to_f64_lossy();
            edges.push(((dx * dx + dy * dy).sqrt(), i, j));
        }
    }
    edges.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });

    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut tree = Vec::with_capacity(n - 1);
    for (_, i, j) in edges {
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
        if ri != rj {
            parent[ri] = rj;
            tree.push((i, j));
            if tree.len() == n - 1 {
                break;
            }
        }
    }
    Ok(tree)
}

/// Builds the radial network: MST over the substations, slack bus at their
/// centroid connected to the nearest substation (ties to the lowest id).
pub fn build_network<F: Scalar>(
    substations: &[Substation<F>],
    line_params: LineParams,
) -> Result<NetworkModel> {
    if substations.is_empty() {
        return Err(Error::PowerFlow("network needs at least one substation".into()));
    }
    let mut subs: Vec<&Substation<F>> = substations.iter().collect();
    subs.sort_by_key(|s| s.id);

    let coords: Vec<(f64, f64)> = subs
        .iter()
        .map(|s| (s.x.to_f64_lossy(), s.y.to_f64_lossy()))
        .collect();
    let n = coords.len();
    let centroid = (
        coords.iter().map(|c| c.0).sum::<f64>() / n as f64,
        coords.iter().map(|c| c.1).sum::<f64>() / n as f64,
    );

    let mut edges: Vec<NetworkEdge> = if n >= 2 {
        let pts: Vec<(f64, f64)> = coords.clone();
        build_mst(&pts)?
            .into_iter()
            .map(|(i, j)| NetworkEdge {
                from: i,
                to: j,
                length_km: segment_length(coords[i], coords[j]),
            })
            .collect()
    } else {
        Vec::new()
    };

    // slack tie: nearest substation, strict < keeps the lowest id on ties
    let mut nearest = 0usize;
    let mut best = f64::INFINITY;
    for (idx, &c) in coords.iter().enumerate() {
        let d = segment_length(centroid, c);
        if d < best {
            best = d;
            nearest = idx;
        }
    }
    edges.push(NetworkEdge {
        from: nearest,
        to: n,
        length_km: segment_length(centroid, coords[nearest]),
    });

    let mut bus_coords = coords;
    bus_coords.push(centroid);
    let network = NetworkModel {
        bus_coords,
        substation_ids: subs.iter().map(|s| s.id).collect(),
        slack_bus: n,
        edges,
        line_params,
    };
    network.validate()?;
    Ok(network)
}

fn segment_length(a: (f64, f64), b: (f64, f64)) -> f64 {
    let dx = a.0 - b.0;
    let dy = a.1 - b.1;
    (dx * dx + dy * dy).sqrt().max(MIN_LINE_LENGTH_KM)
}

impl NetworkModel {
    pub fn n_buses(&self) -> usize {
        self.bus_coords.len()
    }

    /// Connected radial tree: edge count is bus count minus one.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_buses();
        if self.edges.len() + 1 != n {
            return Err(Error::PowerFlow(format!(
                "{} buses need {} edges for a radial tree, got {}",
                n,
                n - 1,
                self.edges.len()
            )));
        }
        let mut seen = vec![false; n];
        let mut stack = vec![self.slack_bus];
        seen[self.slack_bus] = true;
        while let Some(bus) = stack.pop() {
            for edge in &self.edges {
                for (a, b) in [(edge.from, edge.to), (edge.to, edge.from)] {
                    if a == bus && !seen[b] {
                        seen[b] = true;
                        stack.push(b);
                    }
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::PowerFlow("network graph is not connected".into()));
        }
        Ok(())
    }

    /// Series admittance and half shunt susceptance per edge, per unit.
    fn edge_admittances(&self) -> Vec<(f64, f64, f64)> {
        let z_base = BASE_KV * BASE_KV / BASE_MVA;
        self.edges
            .iter()
            .map(|edge| {
                let r = self.line_params.resistance_ohm_per_km * edge.length_km / z_base;
                let x = self.line_params.reactance_ohm_per_km * edge.length_km / z_base;
                let denom = r * r + x * x;
                let g = r / denom;
                let b = -x / denom;
                let b_shunt_siemens = 2.0
                    * std::f64::consts::PI
                    * GRID_FREQUENCY_HZ
                    * self.line_params.shunt_capacitance_nf_per_km
                    * 1e-9
                    * edge.length_km;
                let b_half = b_shunt_siemens * z_base / 2.0;
                (g, b, b_half)
            })
            .collect()
    }

    /// Dense bus admittance matrix (G, B), per unit.
    fn ybus(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let n = self.n_buses();
        let mut g = vec![vec![0.0; n]; n];
        let mut b = vec![vec![0.0; n]; n];
        for (edge, &(ge, be, b_half)) in self.edges.iter().zip(&self.edge_admittances()) {
            let (i, j) = (edge.from, edge.to);
            g[i][j] -= ge;
            g[j][i] -= ge;
            b[i][j] -= be;
            b[j][i] -= be;
            g[i][i] += ge;
            g[j][j] += ge;
            b[i][i] += be + b_half;
            b[j][j] += be + b_half;
        }
        (g, b)
    }
}

/// Result of one AC power-flow solve.
#[derive(Clone, Debug)]
pub struct PowerFlowSolution {
    /// Voltage magnitude per bus, p.u.
    pub v_mag: Vec<f64>,
    /// Voltage angle per bus, rad.
    pub v_ang: Vec<f64>,
    /// Line current per edge, kA (larger of the two ends).
    pub line_current_ka: Vec<f64>,
    /// Line loading per edge, % of the thermal rating.
    pub line_loading_pct: Vec<f64>,
    pub converged: bool,
    pub max_mismatch_pu: f64,
    pub iterations: usize,
}

/// Converts apparent demand (MVA) into PQ loads at a fixed power factor.
pub fn loads_from_mva<F: Scalar>(demand_mva: &[F], power_factor: f64) -> (Vec<f64>, Vec<f64>) {
    let sin_phi = (1.0 - power_factor * power_factor).max(0.0).sqrt();
    let p = demand_mva
        .iter()
        .map(|d| d.to_f64_lossy() * power_factor)
        .collect();
    let q = demand_mva
        .iter()
        .map(|d| d.to_f64_lossy() * sin_phi)
        .collect();
    (p, q)
}

/// Newton–Raphson AC power flow. Loads are given per load bus (MW, MVAr) in
/// the order of `network.substation_ids`; the slack bus holds 1.02 p.u. at
/// angle zero and every other bus is PQ. Starts flat at 1.0 p.u., 0 rad.
pub fn solve_ac(network: &NetworkModel, p_mw: &[f64], q_mvar: &[f64]) -> Result<PowerFlowSolution> {
    let n = network.n_buses();
    let n_pq = n - 1;
    if p_mw.len() != n_pq || q_mvar.len() != n_pq {
        return Err(Error::PowerFlow(format!(
            "expected loads for {n_pq} buses, got {} / {}",
            p_mw.len(),
            q_mvar.len()
        )));
    }
    if p_mw.iter().chain(q_mvar).any(|v| !v.is_finite()) {
        return Err(Error::PowerFlow("loads must be finite".into()));
    }
    let (g, b) = network.ybus();
    let slack = network.slack_bus;

    // net injections, p.u.; loads consume
    let mut p_spec = vec![0.0; n];
    let mut q_spec = vec![0.0; n];
    let mut pq_buses = Vec::with_capacity(n_pq);
    let mut load_idx = 0usize;
    for bus in 0..n {
        if bus == slack {
            continue;
        }
        p_spec[bus] = -p_mw[load_idx] / BASE_MVA;
        q_spec[bus] = -q_mvar[load_idx] / BASE_MVA;
        pq_buses.push(bus);
        load_idx += 1;
    }

    let mut v = vec![1.0; n];
    let mut theta = vec![0.0; n];
    v[slack] = SLACK_VOLTAGE_PU;

    let calc_pq = |v: &[f64], theta: &[f64]| {
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        for i in 0..n {
            for k in 0..n {
                let dt = theta[i] - theta[k];
                let (sin, cos) = dt.sin_cos();
                p[i] += v[i] * v[k] * (g[i][k] * cos + b[i][k] * sin);
                q[i] += v[i] * v[k] * (g[i][k] * sin - b[i][k] * cos);
            }
        }
        (p, q)
    };

    let mut converged = false;
    let mut max_mismatch = f64::INFINITY;
    let mut iterations = 0;
    for iter in 0..=MAX_ITERATIONS {
        let (p, q) = calc_pq(&v, &theta);
        let dp: Vec<f64> = pq_buses.iter().map(|&i| p_spec[i] - p[i]).collect();
        let dq: Vec<f64> = pq_buses.iter().map(|&i| q_spec[i] - q[i]).collect();
        max_mismatch = dp
            .iter()
            .chain(&dq)
            .fold(0.0_f64, |acc, m| acc.max(m.abs()));
        iterations = iter;
        if max_mismatch <= MISMATCH_TOL_PU {
            converged = true;
            break;
        }
        if iter == MAX_ITERATIONS {
            break;
        }

        // polar Jacobian over PQ buses: [dP/dθ dP/dV; dQ/dθ dQ/dV]
        let m = pq_buses.len();
        let mut jac = vec![vec![0.0; 2 * m]; 2 * m];
        for (r, &i) in pq_buses.iter().enumerate() {
            for (c, &j) in pq_buses.iter().enumerate() {
                if i == j {
                    jac[r][c] = -q[i] - b[i][i] * v[i] * v[i];
                    jac[r][m + c] = p[i] / v[i] + g[i][i] * v[i];
                    jac[m + r][c] = p[i] - g[i][i] * v[i] * v[i];
                    jac[m + r][m + c] = q[i] / v[i] - b[i][i] * v[i];
                } else {
                    let dt = theta[i] - theta[j];
                    let (sin, cos) = dt.sin_cos();
                    jac[r][c] = v[i] * v[j] * (g[i][j] * sin - b[i][j] * cos);
                    jac[r][m + c] = v[i] * (g[i][j] * cos + b[i][j] * sin);
                    jac[m + r][c] = -v[i] * v[j] * (g[i][j] * cos + b[i][j] * sin);
                    jac[m + r][m + c] = v[i] * (g[i][j] * sin - b[i][j] * cos);
                }
            }
        }
        let rhs: Vec<f64> = dp.into_iter().chain(dq).collect();
        let delta = solve_dense(jac, rhs)
            .ok_or_else(|| Error::PowerFlow("singular Jacobian".into()))?;
        for (r, &i) in pq_buses.iter().enumerate() {
            theta[i] += delta[r];
            v[i] += delta[m + r];
        }
    }

    // branch currents from both ends, p.u. -> kA
    let i_base_ka = BASE_MVA / (3.0_f64.sqrt() * BASE_KV);
    let admittances = network.edge_admittances();
    let mut line_current_ka = Vec::with_capacity(network.edges.len());
    let mut line_loading_pct = Vec::with_capacity(network.edges.len());
    for (edge, &(ge, be, b_half)) in network.edges.iter().zip(&admittances) {
        let current = |from: usize, to: usize| {
            let (vf_re, vf_im) = polar(v[from], theta[from]);
            let (vt_re, vt_im) = polar(v[to], theta[to]);
            let (d_re, d_im) = (vf_re - vt_re, vf_im - vt_im);
            // I = y_series (V_f - V_t) + j b_half V_f
            let i_re = ge * d_re - be * d_im - b_half * vf_im;
            let i_im = ge * d_im + be * d_re + b_half * vf_re;
            (i_re * i_re + i_im * i_im).sqrt()
        };
        let i_pu = current(edge.from, edge.to).max(current(edge.to, edge.from));
        let i_ka = i_pu * i_base_ka;
        line_current_ka.push(i_ka);
        line_loading_pct.push(100.0 * i_ka / network.line_params.thermal_rating_ka);
    }

    Ok(PowerFlowSolution {
        v_mag: v,
        v_ang: theta,
        line_current_ka,
        line_loading_pct,
        converged,
        max_mismatch_pu: max_mismatch,
        iterations,
    })
}

fn polar(mag: f64, ang: f64) -> (f64, f64) {
    let (sin, cos) = ang.sin_cos();
    (mag * cos, mag * sin)
}

/// Gaussian elimination with partial pivoting; `None` on singularity.
fn solve_dense(mut a: Vec<Vec<f64>>, mut rhs: Vec<f64>) -> Option<Vec<f64>> {
    let n = rhs.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-14 {
            return None;
        }
        a.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in (col + 1)..n {
            let factor = a[row][col] / a[col][col];
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = rhs[row];
        for k in (row + 1)..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}

/// Per-line loading deviation between a solution and a reference on the
/// same network.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct LoadingDeviation {
    /// Mean absolute per-line loading deviation, percentage points.
    pub delta_mae_pp: f64,
    /// Maximum line loading of the evaluated solution, %.
    pub max_loading_pct: f64,
}

pub fn loading_deviation(
    solution: &PowerFlowSolution,
    reference: &PowerFlowSolution,
) -> Result<LoadingDeviation> {
    if solution.line_loading_pct.len() != reference.line_loading_pct.len() {
        return Err(Error::PowerFlow(
            "solutions come from different networks".into(),
        ));
    }
    let n = solution.line_loading_pct.len() as f64;
    let delta_mae_pp = solution
        .line_loading_pct
        .iter()
        .zip(&reference.line_loading_pct)
        .map(|(s, r)| (s - r).abs())
        .sum::<f64>()
        / n;
    let max_loading_pct = solution
        .line_loading_pct
        .iter()
        .fold(0.0_f64, |acc, &l| acc.max(l));
    Ok(LoadingDeviation {
        delta_mae_pp,
        max_loading_pct,
    })
}

#[derive(Serialize, Deserialize)]
struct NetworkDocument {
    version: u32,
    base_mva: f64,
    base_kv: f64,
    slack_voltage_pu: f64,
    slack_bus: usize,
    substation_ids: Vec<u64>,
    bus_coords: Vec<(f64, f64)>,
    edges: Vec<NetworkEdge>,
    line_params: LineParams,
}

/// Writes the network as a JSON document.
pub fn save_network(network: &NetworkModel, path: &Path) -> Result<()> {
    let doc = NetworkDocument {
        version: 1,
        base_mva: BASE_MVA,
        base_kv: BASE_KV,
        slack_voltage_pu: SLACK_VOLTAGE_PU,
        slack_bus: network.slack_bus,
        substation_ids: network.substation_ids.iter().map(|s| s.0).collect(),
        bus_coords: network.bus_coords.clone(),
        edges: network.edges.clone(),
        line_params: network.line_params,
    };
    let json = serde_json::to_string_pretty(&doc).expect("network serializes");
    std::fs::write(path, json).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads a network written by [`save_network`].
pub fn load_network(path: &Path) -> Result<NetworkModel> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let doc: NetworkDocument = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let network = NetworkModel {
        bus_coords: doc.bus_coords,
        substation_ids: doc.substation_ids.into_iter().map(SubstationId).collect(),
        slack_bus: doc.slack_bus,
        edges: doc.edges,
        line_params: doc.line_params,
    };
    network.validate()?;
    Ok(network)
}

/// Per-line loading CSV; columns for the reference and each named solution.
pub fn loading_csv(
    network: &NetworkModel,
    solutions: &BTreeMap<String, &PowerFlowSolution>,
) -> String {
    let mut out = String::from("edge,from_bus,to_bus,length_km");
    for name in solutions.keys() {
        out.push_str(&format!(",loading_pct_{name},current_ka_{name}"));
    }
    out.push('\n');
    for (idx, edge) in network.edges.iter().enumerate() {
        out.push_str(&format!(
            "{idx},{},{},{}",
            edge.from, edge.to, edge.length_km
        ));
        for solution in solutions.values() {
            out.push_str(&format!(
                ",{},{}",
                solution.line_loading_pct[idx], solution.line_current_ka[idx]
            ));
        }
        out.push('\n');
    }
    out
}
