//! Simplified 4-DOF Fossen model of a small ROV (surge, sway, heave, yaw).
//!
//! The same right-hand side drives the ground-truth simulator and the
//! physics residual used during training, so the learning problem is
//! self-consistent whatever parameter set is loaded.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{PincError, Result};

/// Rigid-body, added-mass, drag and hydrostatic parameters.
///
/// Drag coefficients follow the convention `(X_u + X_uu |u|) u`, so they must
/// be non-positive for the model to dissipate energy. The quadratic terms are
/// also accepted under their `*_uc` aliases (`X_uc`, `Y_vc`, `Z_wc`, `N_rc`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalParams {
    pub m: f64,
    #[serde(rename = "I_zz")]
    pub i_zz: f64,
    pub g: f64,
    pub rho_water: f64,
    #[serde(rename = "V_sub")]
    pub v_sub: f64,
    #[serde(rename = "X_du")]
    pub x_du: f64,
    #[serde(rename = "Y_dv")]
    pub y_dv: f64,
    #[serde(rename = "Z_dw")]
    pub z_dw: f64,
    #[serde(rename = "N_dr")]
    pub n_dr: f64,
    #[serde(rename = "X_u")]
    pub x_u: f64,
    #[serde(rename = "Y_v")]
    pub y_v: f64,
    #[serde(rename = "Z_w")]
    pub z_w: f64,
    #[serde(rename = "N_r")]
    pub n_r: f64,
    #[serde(rename = "X_uu", alias = "X_uc")]
    pub x_uu: f64,
    #[serde(rename = "Y_vv", alias = "Y_vc")]
    pub y_vv: f64,
    #[serde(rename = "Z_ww", alias = "Z_wc")]
    pub z_ww: f64,
    #[serde(rename = "N_rr", alias = "N_rc")]
    pub n_rr: f64,
}

impl Default for PhysicalParams {
    /// BlueROV2-class identification values (heavy-ish frame, ~11.5 kg).
    fn default() -> Self {
        PhysicalParams {
            m: 11.5,
            i_zz: 0.16,
            g: 9.82,
            rho_water: 1000.0,
            v_sub: 0.0117,
            x_du: -5.5,
            y_dv: -12.7,
            z_dw: -14.57,
            n_dr: -0.12,
            x_u: -4.03,
            y_v: -6.22,
            z_w: -5.18,
            n_r: -0.07,
            x_uu: -18.18,
            y_vv: -21.66,
            z_ww: -36.99,
            n_rr: -1.55,
        }
    }
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("m", self.m),
            ("I_zz", self.i_zz),
            ("g", self.g),
            ("rho_water", self.rho_water),
            ("V_sub", self.v_sub),
            ("X_du", self.x_du),
            ("Y_dv", self.y_dv),
            ("Z_dw", self.z_dw),
            ("N_dr", self.n_dr),
            ("X_u", self.x_u),
            ("Y_v", self.y_v),
            ("Z_w", self.z_w),
            ("N_r", self.n_r),
            ("X_uu", self.x_uu),
            ("Y_vv", self.y_vv),
            ("Z_ww", self.z_ww),
            ("N_rr", self.n_rr),
        ];
        if let Some((name, _)) = named.iter().find(|(_, v)| !v.is_finite()) {
            return Err(PincError::InvalidParams(format!("{name} is not finite")));
        }
        let effective = [
            ("m - X_du", self.m - self.x_du),
            ("m - Y_dv", self.m - self.y_dv),
            ("m - Z_dw", self.m - self.z_dw),
            ("I_zz - N_dr", self.i_zz - self.n_dr),
        ];
        if let Some((name, v)) = effective.iter().find(|(_, v)| *v <= 0.0) {
            return Err(PincError::InvalidParams(format!("{name} = {v} must be positive")));
        }
        let drag = [
            ("X_u", self.x_u),
            ("Y_v", self.y_v),
            ("Z_w", self.z_w),
            ("N_r", self.n_r),
            ("X_uu", self.x_uu),
            ("Y_vv", self.y_vv),
            ("Z_ww", self.z_ww),
            ("N_rr", self.n_rr),
        ];
        if let Some((name, v)) = drag.iter().find(|(_, v)| *v > 0.0) {
            return Err(PincError::InvalidParams(format!("drag coefficient {name} = {v} must be <= 0")));
        }
        Ok(())
    }

    /// Parses a `name = value` parameter file (TOML syntax). Missing keys
    /// fall back to the defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| PincError::config("params", e.to_string()))?;
        let mut merged = toml::Table::try_from(PhysicalParams::default())
            .map_err(|e| PincError::config("params", e.to_string()))?;
        for (key, value) in table {
            let canonical = match key.as_str() {
                "X_uc" => "X_uu".to_string(),
                "Y_vc" => "Y_vv".to_string(),
                "Z_wc" => "Z_ww".to_string(),
                "N_rc" => "N_rr".to_string(),
                _ => key.clone(),
            };
            if !merged.contains_key(&canonical) {
                return Err(PincError::config(key, "unknown physical parameter"));
            }
            let value = match value {
                toml::Value::Integer(i) => toml::Value::Float(i as f64),
                toml::Value::Float(_) => value,
                _ => return Err(PincError::config(key, "expected a number")),
            };
            merged.insert(canonical, value);
        }
        let params: PhysicalParams = merged
            .try_into()
            .map_err(|e: toml::de::Error| PincError::config("params", e.to_string()))?;
        params.validate()?;
        Ok(params)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat float table always serializes")
    }

    /// Net vertical hydrostatic force `m g - rho g V` (positive sinks).
    pub fn net_weight(&self) -> f64 {
        self.m * self.g - self.rho_water * self.g * self.v_sub
    }

    /// Copy with `V_sub` adjusted so weight and buoyancy cancel.
    pub fn neutrally_buoyant(mut self) -> Self {
        self.v_sub = self.m / self.rho_water;
        self
    }
}

/// Physical state `[x, y, z, psi, u, v, w, r]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StateVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub psi: f64,
    pub u: f64,
    pub v: f64,
    pub w: f64,
    pub r: f64,
}

impl StateVector {
    pub fn to_array(&self) -> [f64; 8] {
        [self.x, self.y, self.z, self.psi, self.u, self.v, self.w, self.r]
    }

    pub fn from_array(a: [f64; 8]) -> Self {
        StateVector { x: a[0], y: a[1], z: a[2], psi: a[3], u: a[4], v: a[5], w: a[6], r: a[7] }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Body-frame wrench `[X, Y, Z, Psi]`, held constant over one sampling interval.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub fx: f64,
    pub fy: f64,
    pub fz: f64,
    pub mz: f64,
}

impl ControlInput {
    pub const ZERO: ControlInput = ControlInput { fx: 0.0, fy: 0.0, fz: 0.0, mz: 0.0 };

    pub fn to_array(&self) -> [f64; 4] {
        [self.fx, self.fy, self.fz, self.mz]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        ControlInput { fx: a[0], fy: a[1], fz: a[2], mz: a[3] }
    }
}

/// Network-side state: yaw replaced by its cosine and sine.
///
/// Also used for rates (`d/dt` of each component).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NetState {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub cos_psi: f64,
    pub sin_psi: f64,
    pub u: f64,
    pub v: f64,
    pub w: f64,
    pub r: f64,
}

pub const NET_DIM: usize = 9;

impl NetState {
    pub fn to_array(&self) -> [f64; NET_DIM] {
        [self.x, self.y, self.z, self.cos_psi, self.sin_psi, self.u, self.v, self.w, self.r]
    }

    pub fn from_array(a: [f64; NET_DIM]) -> Self {
        NetState {
            x: a[0],
            y: a[1],
            z: a[2],
            cos_psi: a[3],
            sin_psi: a[4],
            u: a[5],
            v: a[6],
            w: a[7],
            r: a[8],
        }
    }

    pub fn from_slice(a: &[f64]) -> Self {
        let mut out = [0.0; NET_DIM];
        out.copy_from_slice(&a[..NET_DIM]);
        Self::from_array(out)
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn squared_distance(&self, other: &NetState) -> f64 {
        self.to_array()
            .iter()
            .zip(other.to_array())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub fn position_error(&self, other: &NetState) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2) + (self.z - other.z).powi(2)).sqrt()
    }
}

impl From<StateVector> for NetState {
    fn from(s: StateVector) -> Self {
        to_net_state(&s)
    }
}

pub fn to_net_state(s: &StateVector) -> NetState {
    NetState {
        x: s.x,
        y: s.y,
        z: s.z,
        cos_psi: s.psi.cos(),
        sin_psi: s.psi.sin(),
        u: s.u,
        v: s.v,
        w: s.w,
        r: s.r,
    }
}

pub fn from_net_state(ns: &NetState) -> Result<StateVector> {
    if ns.cos_psi == 0.0 && ns.sin_psi == 0.0 {
        return Err(PincError::DegenerateYaw);
    }
    Ok(StateVector {
        x: ns.x,
        y: ns.y,
        z: ns.z,
        psi: ns.sin_psi.atan2(ns.cos_psi),
        u: ns.u,
        v: ns.v,
        w: ns.w,
        r: ns.r,
    })
}

/// Maps an angle onto `(-pi, pi]`.
pub fn wrap_angle(psi: f64) -> f64 {
    let w = psi.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Right-hand side of the vehicle ODE.
pub fn state_derivative(s: &StateVector, u: &ControlInput, p: &PhysicalParams) -> StateVector {
    let (sin_psi, cos_psi) = s.psi.sin_cos();
    body_rates(s.u, s.v, s.w, s.r, cos_psi, sin_psi, u, p).into_state(s.r)
}

/// Derivative in the network representation; the yaw pair follows
/// `d(cos)/dt = -sin r`, `d(sin)/dt = cos r`.
pub fn lifted_derivative(ns: &NetState, u: &ControlInput, p: &PhysicalParams) -> NetState {
    let rates = body_rates(ns.u, ns.v, ns.w, ns.r, ns.cos_psi, ns.sin_psi, u, p);
    NetState {
        x: rates.xdot,
        y: rates.ydot,
        z: rates.zdot,
        cos_psi: -ns.sin_psi * ns.r,
        sin_psi: ns.cos_psi * ns.r,
        u: rates.udot,
        v: rates.vdot,
        w: rates.wdot,
        r: rates.rdot,
    }
}

/// Jacobian of [`lifted_derivative`] with respect to the network state,
/// `j[i][k] = d f_i / d ns_k` in [`NetState::to_array`] order.
pub fn lifted_jacobian(ns: &NetState, p: &PhysicalParams) -> [[f64; NET_DIM]; NET_DIM] {
    let NetState { cos_psi: c, sin_psi: s, u, v, w, r, .. } = *ns;
    let mu = p.m - p.x_du;
    let mv = p.m - p.y_dv;
    let mw = p.m - p.z_dw;
    let iz = p.i_zz - p.n_dr;
    let mut j = [[0.0; NET_DIM]; NET_DIM];
    j[0][3] = u;
    j[0][4] = -v;
    j[0][5] = c;
    j[0][6] = -s;
    j[1][3] = v;
    j[1][4] = u;
    j[1][5] = s;
    j[1][6] = c;
    j[2][7] = 1.0;
    j[3][4] = -r;
    j[3][8] = -s;
    j[4][3] = r;
    j[4][8] = c;
    // d(|x| x)/dx = 2|x|
    j[5][5] = (p.x_u + 2.0 * p.x_uu * u.abs()) / mu;
    j[5][6] = mv * r / mu;
    j[5][8] = mv * v / mu;
    j[6][5] = -mu * r / mv;
    j[6][6] = (p.y_v + 2.0 * p.y_vv * v.abs()) / mv;
    j[6][8] = -mu * u / mv;
    j[7][7] = (p.z_w + 2.0 * p.z_ww * w.abs()) / mw;
    j[8][5] = -(p.x_du - p.y_dv) * v / iz;
    j[8][6] = -(p.x_du - p.y_dv) * u / iz;
    j[8][8] = (p.n_r + 2.0 * p.n_rr * r.abs()) / iz;
    j
}

struct Rates {
    xdot: f64,
    ydot: f64,
    zdot: f64,
    udot: f64,
    vdot: f64,
    wdot: f64,
    rdot: f64,
}

impl Rates {
    fn into_state(self, psidot: f64) -> StateVector {
        StateVector {
            x: self.xdot,
            y: self.ydot,
            z: self.zdot,
            psi: psidot,
            u: self.udot,
            v: self.vdot,
            w: self.wdot,
            r: self.rdot,
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn body_rates(
    u: f64,
    v: f64,
    w: f64,
    r: f64,
    cos_psi: f64,
    sin_psi: f64,
    tau: &ControlInput,
    p: &PhysicalParams,
) -> Rates {
    let mu = p.m - p.x_du;
    let mv = p.m - p.y_dv;
    let mw = p.m - p.z_dw;
    let iz = p.i_zz - p.n_dr;
    // weight minus buoyancy, both in newtons
    let restoring = p.m * p.g - p.v_sub * p.rho_water * p.g;
    Rates {
        xdot: cos_psi * u - sin_psi * v,
        ydot: sin_psi * u + cos_psi * v,
        zdot: w,
        udot: (tau.fx + mv * v * r + (p.x_u + p.x_uu * u.abs()) * u) / mu,
        vdot: (tau.fy - mu * u * r + (p.y_v + p.y_vv * v.abs()) * v) / mv,
        wdot: (tau.fz + (p.z_w + p.z_ww * w.abs()) * w + restoring) / mw,
        rdot: (tau.mz - (p.x_du - p.y_dv) * u * v + (p.n_r + p.n_rr * r.abs()) * r) / iz,
    }
}

fn rhs(x: &[f64; 8], u: &ControlInput, p: &PhysicalParams) -> [f64; 8] {
    state_derivative(&StateVector::from_array(*x), u, p).to_array()
}

/// Advances one zero-order-hold interval with classical RK4.
pub fn integrate_step(
    s: &StateVector,
    u: &ControlInput,
    p: &PhysicalParams,
    dt: f64,
    substeps: usize,
) -> Result<StateVector> {
    assert!(dt >= 0.0 && substeps >= 1, "integrate_step needs dt >= 0 and substeps >= 1");
    let h = dt / substeps as f64;
    let mut x = s.to_array();
    for _ in 0..substeps {
        let k1 = rhs(&x, u, p);
        let k2 = rhs(&axpy(&x, 0.5 * h, &k1), u, p);
        let k3 = rhs(&axpy(&x, 0.5 * h, &k2), u, p);
        let k4 = rhs(&axpy(&x, h, &k3), u, p);
        for i in 0..8 {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    x[3] = wrap_angle(x[3]);
    let out = StateVector::from_array(x);
    if !out.is_finite() {
        return Err(PincError::NonFiniteState { dt, substeps });
    }
    Ok(out)
}

fn axpy(x: &[f64; 8], a: f64, k: &[f64; 8]) -> [f64; 8] {
    let mut out = *x;
    for i in 0..8 {
        out[i] += a * k[i];
    }
    out
}

/// Integrates a whole trajectory; `controls[n]` is held over `[nT, (n+1)T)`.
pub fn simulate_trajectory(
    x0: &StateVector,
    controls: &[ControlInput],
    p: &PhysicalParams,
    period: f64,
    substeps: usize,
) -> Result<Vec<StateVector>> {
    assert!(period > 0.0, "sampling period must be positive");
    let mut states = Vec::with_capacity(controls.len() + 1);
    states.push(*x0);
    let mut s = *x0;
    for u in controls {
        s = integrate_step(&s, u, p, period, substeps)?;
        states.push(s);
    }
    Ok(states)
}
