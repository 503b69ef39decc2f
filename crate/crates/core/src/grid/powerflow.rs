use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{BusId, GridError, GridModel, Sgen};

/// Convergence threshold on the largest active/reactive mismatch, in pu.
pub const MISMATCH_TOLERANCE: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridState {
    /// Bus ids in model order; `vm`/`va` are indexed the same way.
    pub bus_ids: Vec<BusId>,
    pub vm: Vec<f64>,
    /// Angles in radians, slack at zero.
    pub va: Vec<f64>,
    /// Apparent-power flow over rating, per line.
    pub line_loading: Vec<f64>,
    pub slack_p_mw: f64,
    pub slack_q_mvar: f64,
    pub converged: bool,
    pub iterations: usize,
    pub max_mismatch_pu: f64,
}

impl GridState {
    pub fn vm_of(&self, bus: BusId) -> Option<f64> {
        self.bus_ids.iter().position(|b| *b == bus).map(|i| self.vm[i])
    }
}

fn admittance(model: &GridModel) -> DMatrix<Complex64> {
    let pos = model.positions();
    let n = model.buses.len();
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for l in &model.lines {
        let (f, t) = (pos[&l.from_bus], pos[&l.to_bus]);
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(l.r_pu, l.x_pu);
        let ysh = Complex64::new(0.0, l.b_shunt_pu / 2.0);
        y[(f, f)] += ys + ysh;
        y[(t, t)] += ys + ysh;
        y[(f, t)] -= ys;
        y[(t, f)] -= ys;
    }
    y
}

fn injections(y: &DMatrix<Complex64>, v: &[Complex64]) -> Vec<Complex64> {
    let n = v.len();
    (0..n)
        .map(|i| {
            let current: Complex64 = (0..n).map(|k| y[(i, k)] * v[k]).sum();
            v[i] * current.conj()
        })
        .collect()
}

fn polar(vm: &[f64], va: &[f64]) -> Vec<Complex64> {
    vm.iter().zip(va).map(|(&m, &a)| Complex64::from_polar(m, a)).collect()
}

/// Per-line π-model flows in pu.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchFlow {
    pub s_from: Complex64,
    pub s_to: Complex64,
}

impl BranchFlow {
    pub fn loss(&self) -> Complex64 {
        self.s_from + self.s_to
    }
}

pub fn branch_flows(model: &GridModel, vm: &[f64], va: &[f64]) -> Vec<BranchFlow> {
    let pos = model.positions();
    let v = polar(vm, va);
    model
        .lines
        .iter()
        .map(|l| {
            let (f, t) = (pos[&l.from_bus], pos[&l.to_bus]);
            let ys = Complex64::new(1.0, 0.0) / Complex64::new(l.r_pu, l.x_pu);
            let ysh = Complex64::new(0.0, l.b_shunt_pu / 2.0);
            let i_f = (v[f] - v[t]) * ys + v[f] * ysh;
            let i_t = (v[t] - v[f]) * ys + v[t] * ysh;
            BranchFlow {
                s_from: v[f] * i_f.conj(),
                s_to: v[t] * i_t.conj(),
            }
        })
        .collect()
}

/// Newton-Raphson power flow in polar coordinates from a flat start.
///
/// Non-convergence is not an error: the last iterate is returned with
/// `converged = false`. A singular Jacobian is reported as
/// [`GridError::SingularJacobian`].
pub fn solve_power_flow(model: &GridModel) -> Result<GridState, GridError> {
    model.validate()?;
    let n = model.buses.len();
    let slack = model.slack_index();
    let y = admittance(model);
    let spec: Vec<Complex64> = model
        .net_injection_mw()
        .into_iter()
        .map(|(p, q)| Complex64::new(p, q) / model.base_mva)
        .collect();

    let mut vm = vec![1.0; n];
    let mut va = vec![0.0; n];
    vm[slack] = model.buses[slack].vm_setpoint;

    // unknown ordering: angles of all non-slack buses, then their magnitudes
    let pq: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let m = pq.len();

    let mut iterations = 0;
    let mut mismatch;
    loop {
        let v = polar(&vm, &va);
        let s = injections(&y, &v);
        let mut f = DVector::zeros(2 * m);
        for (r, &i) in pq.iter().enumerate() {
            let d = spec[i] - s[i];
            f[r] = d.re;
            f[m + r] = d.im;
        }
        mismatch = f.amax();
        if mismatch < MISMATCH_TOLERANCE || iterations >= MAX_ITERATIONS || !mismatch.is_finite() {
            break;
        }

        let mut jac = DMatrix::zeros(2 * m, 2 * m);
        for (r, &i) in pq.iter().enumerate() {
            let (pi, qi) = (s[i].re, s[i].im);
            for (c, &k) in pq.iter().enumerate() {
                let (g, b) = (y[(i, k)].re, y[(i, k)].im);
                if i == k {
                    jac[(r, c)] = -qi - b * vm[i] * vm[i];
                    jac[(r, m + c)] = pi / vm[i] + g * vm[i];
                    jac[(m + r, c)] = pi - g * vm[i] * vm[i];
                    jac[(m + r, m + c)] = qi / vm[i] - b * vm[i];
                } else {
                    let th = va[i] - va[k];
                    let (sn, cs) = th.sin_cos();
                    jac[(r, c)] = vm[i] * vm[k] * (g * sn - b * cs);
                    jac[(r, m + c)] = vm[i] * (g * cs + b * sn);
                    jac[(m + r, c)] = -vm[i] * vm[k] * (g * cs + b * sn);
                    jac[(m + r, m + c)] = vm[i] * (g * sn - b * cs);
                }
            }
        }
        let dx = jac
            .lu()
            .solve(&f)
            .ok_or(GridError::SingularJacobian { iteration: iterations })?;
        if dx.iter().any(|x| !x.is_finite()) {
            return Err(GridError::SingularJacobian { iteration: iterations });
        }
        for (r, &i) in pq.iter().enumerate() {
            va[i] += dx[r];
            vm[i] += dx[m + r];
        }
        iterations += 1;
    }

    let converged = mismatch < MISMATCH_TOLERANCE;
    let v = polar(&vm, &va);
    let s = injections(&y, &v);
    let (slack_load_p, slack_load_q) = model.net_injection_mw()[slack];
    let flows = branch_flows(model, &vm, &va);
    let line_loading = model
        .lines
        .iter()
        .zip(&flows)
        .map(|(l, fl)| fl.s_from.norm().max(fl.s_to.norm()) * model.base_mva / l.rating_mva)
        .collect();

    Ok(GridState {
        bus_ids: model.buses.iter().map(|b| b.id).collect(),
        vm,
        va,
        line_loading,
        // slack generation = computed injection + local load - local sgens
        slack_p_mw: s[slack].re * model.base_mva - slack_load_p,
        slack_q_mvar: s[slack].im * model.base_mva - slack_load_q,
        converged,
        iterations,
        max_mismatch_pu: mismatch,
    })
}

/// dVm(observed) / dQ(injection) in pu per Mvar by central differences with
/// a perturbation of `1e-4 * base_mva` Mvar.
pub fn voltage_sensitivity(
    model: &GridModel,
    state: &GridState,
    observed_bus: BusId,
    injection_bus: BusId,
) -> Result<f64, GridError> {
    if !state.converged {
        return Err(GridError::NotConverged {
            iterations: state.iterations,
            mismatch: state.max_mismatch_pu,
        });
    }
    let obs = model.bus_position(observed_bus)?;
    model.bus_position(injection_bus)?;
    let delta = 0.01 * model.base_mva * 0.01;
    let perturbed = |q: f64| -> Result<f64, GridError> {
        let mut m = model.clone();
        m.sgens.push(Sgen::reactive(injection_bus, q));
        let st = solve_power_flow(&m)?;
        if !st.converged {
            return Err(GridError::NotConverged {
                iterations: st.iterations,
                mismatch: st.max_mismatch_pu,
            });
        }
        Ok(st.vm[obs])
    };
    let up = perturbed(delta)?;
    let down = perturbed(-delta)?;
    Ok((up - down) / (2.0 * delta))
}
