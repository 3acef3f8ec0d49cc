//! Sims-Flanagan transcription of a rendezvous transfer.
//!
//! The transfer is cut into `n` equal segments. Each segment coasts half a
//! segment, receives a bounded impulse, and coasts the other half. The first
//! ⌈n/2⌉ segments are flown forward from the departure body, the rest backward
//! from the arrival body, and the two legs meet at the match point.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::astro::{kepler_propagate, StateVector, Vec3};
use crate::error::{Error, Result};
use crate::units::{days_to_tu, m_s_to_vu, vu_to_km_s, DAY_S, G0_M_S2};

/// Spacecraft and engine constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spacecraft {
    pub m_dry: f64,
    pub t_max_n: f64,
    pub isp_s: f64,
}

impl Default for Spacecraft {
    /// NEXT-class electric propulsion on a 1,000 kg dry spacecraft.
    fn default() -> Self {
        Self {
            m_dry: 1000.0,
            t_max_n: 0.236,
            isp_s: 4190.0,
        }
    }
}

pub const DEFAULT_SEGMENTS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SfProblem {
    /// Departure body state; its mass is the initial spacecraft mass.
    pub departure: StateVector,
    pub arrival_position: Vec3,
    pub arrival_velocity: Vec3,
    pub epoch_mjd: f64,
    pub m0: f64,
    pub tof_days: f64,
    pub n_segments: usize,
    pub spacecraft: Spacecraft,
}

impl SfProblem {
    pub fn new(
        departure: StateVector,
        arrival: StateVector,
        epoch_mjd: f64,
        m0: f64,
        tof_days: f64,
        n_segments: usize,
        spacecraft: Spacecraft,
    ) -> Result<Self> {
        let p = Self {
            departure: departure.with_mass(m0),
            arrival_position: arrival.position,
            arrival_velocity: arrival.velocity,
            epoch_mjd,
            m0,
            tof_days,
            n_segments,
            spacecraft,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let sc = &self.spacecraft;
        if self.n_segments < 2 {
            return Err(Error::Input(format!("n_segments {} < 2", self.n_segments)));
        }
        if !(self.tof_days > 0.0) {
            return Err(Error::Input(format!("tof {} days must be positive", self.tof_days)));
        }
        if !(self.m0 > sc.m_dry && sc.m_dry > 0.0) {
            return Err(Error::Input(format!(
                "need m0 > m_dry > 0 (m0 = {}, m_dry = {})",
                self.m0, sc.m_dry
            )));
        }
        if !(sc.t_max_n > 0.0 && sc.isp_s > 0.0) {
            return Err(Error::Input("thrust and specific impulse must be positive".into()));
        }
        self.departure.validate()
    }

    pub fn tof_tu(&self) -> f64 {
        days_to_tu(self.tof_days)
    }

    pub fn seg_dt_tu(&self) -> f64 {
        self.tof_tu() / self.n_segments as f64
    }

    pub fn seg_dt_s(&self) -> f64 {
        self.tof_days * DAY_S / self.n_segments as f64
    }

    /// Number of segments flown forward, ⌈n/2⌉.
    pub fn n_forward(&self) -> usize {
        self.n_segments.div_ceil(2)
    }

    pub fn t_match_tu(&self) -> f64 {
        self.seg_dt_tu() * self.n_forward() as f64
    }

    pub fn arrival_state(&self, mass: f64) -> StateVector {
        StateVector::new(self.arrival_position, self.arrival_velocity, mass)
    }

    /// Largest velocity change the engine can deliver over the whole transfer
    /// at dry mass, in km/s.
    pub fn dv_capacity_km_s(&self) -> f64 {
        self.spacecraft.t_max_n * self.tof_days * DAY_S / self.spacecraft.m_dry / 1000.0
    }

    pub fn flat_len(&self) -> usize {
        3 * self.n_segments + 1
    }
}

/// Unit-bounded controls per segment plus the arrival mass (kg).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionVector {
    pub controls: Vec<Vec3>,
    pub m_f: f64,
}

impl DecisionVector {
    pub fn ballistic(n_segments: usize, m_f: f64) -> Self {
        Self {
            controls: vec![Vec3::zeros(); n_segments],
            m_f,
        }
    }

    /// Flat layout `[u0x, u0y, u0z, u1x, ..., m_f / m0]`.
    pub fn encode(&self, m0: f64) -> Vec<f64> {
        let mut flat = Vec::with_capacity(3 * self.controls.len() + 1);
        for u in &self.controls {
            flat.extend_from_slice(u.as_slice());
        }
        flat.push(self.m_f / m0);
        flat
    }

    pub fn decode(flat: &[f64], m0: f64) -> Result<Self> {
        if flat.is_empty() || (flat.len() - 1) % 3 != 0 {
            return Err(Error::Input(format!(
                "flat decision length {} is not 3n + 1",
                flat.len()
            )));
        }
        let n = (flat.len() - 1) / 3;
        let controls = (0..n)
            .map(|i| Vec3::new(flat[3 * i], flat[3 * i + 1], flat[3 * i + 2]))
            .collect();
        Ok(Self {
            controls,
            m_f: flat[3 * n] * m0,
        })
    }
}

/// Box bounds of the flat decision vector.
pub fn decision_bounds(problem: &SfProblem) -> (Vec<f64>, Vec<f64>) {
    let n = problem.flat_len();
    let mut lo = vec![-1.0; n];
    let mut hi = vec![1.0; n];
    lo[n - 1] = problem.spacecraft.m_dry / problem.m0;
    hi[n - 1] = 1.0;
    (lo, hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchDefect {
    pub dp: Vec3,
    pub dv: Vec3,
    /// Mass mismatch divided by m0.
    pub dm: f64,
}

impl MatchDefect {
    pub fn as_array(&self) -> [f64; 7] {
        [
            self.dp.x, self.dp.y, self.dp.z, self.dv.x, self.dv.y, self.dv.z, self.dm,
        ]
    }

    pub fn inf_norm(&self) -> f64 {
        self.as_array().iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// Applies one bounded impulse of duration `seg_dt` (canonical time).
///
/// Forward: Δv = T_max‖u‖Δt/m⁻ and m⁺ = m⁻exp(−Δv/(I_sp g0)). Backward runs
/// the exact inverse: the pre-impulse mass is recovered from the carried
/// post-impulse mass, and that Δv is removed from the velocity.
pub fn apply_impulse(
    state: &StateVector,
    u: &Vec3,
    seg_dt: f64,
    problem: &SfProblem,
    direction: Direction,
) -> Result<StateVector> {
    let norm = u.norm();
    if norm == 0.0 {
        return Ok(*state);
    }
    if !(norm <= 3f64.sqrt() + 1e-12) {
        return Err(Error::Input(format!("control magnitude {norm} outside the unit box")));
    }
    let sc = &problem.spacecraft;
    let dt_s = seg_dt * crate::units::tu_s();
    let exhaust = sc.isp_s * G0_M_S2;
    // propellant scale T‖u‖Δt / (I_sp g0), kg
    let burn = sc.t_max_n * norm * dt_s / exhaust;
    let dir = u / norm;
    match direction {
        Direction::Forward => {
            let m_pre = state.mass;
            let m_post = m_pre * (-burn / m_pre).exp();
            if m_post < sc.m_dry {
                return Err(Error::InfeasibleMass {
                    mass: m_post,
                    m_dry: sc.m_dry,
                });
            }
            let dv = sc.t_max_n * norm * dt_s / m_pre;
            Ok(StateVector::new(
                state.position,
                state.velocity + dir * m_s_to_vu(dv),
                m_post,
            ))
        }
        Direction::Backward => {
            let m_pre = pre_impulse_mass(state.mass, burn)?;
            let dv = sc.t_max_n * norm * dt_s / m_pre;
            Ok(StateVector::new(
                state.position,
                state.velocity - dir * m_s_to_vu(dv),
                m_pre,
            ))
        }
    }
}

/// Solves m exp(−burn/m) = m_post for m; the left side is increasing in m.
fn pre_impulse_mass(m_post: f64, burn: f64) -> Result<f64> {
    let mut m = m_post + burn;
    for _ in 0..50 {
        let e = (-burn / m).exp();
        let f = m * e - m_post;
        let df = e * (1.0 + burn / m);
        let step = f / df;
        m -= step;
        if step.abs() <= 1e-15 * m {
            return Ok(m);
        }
    }
    let residual = (m * (-burn / m).exp() - m_post).abs();
    if residual <= 1e-10 * m_post {
        Ok(m)
    } else {
        Err(Error::NumericalFailure {
            context: "backward impulse mass",
            residual,
        })
    }
}

/// Runs forward segments `start..n_forward` beginning at the segment-`start`
/// impulse point. `mid` receives the pre-impulse state of every segment run.
pub(crate) fn forward_from(
    problem: &SfProblem,
    controls: &[Vec3],
    start: usize,
    at_impulse: StateVector,
    mut mid: Option<&mut Vec<StateVector>>,
) -> Result<StateVector> {
    let half = 0.5 * problem.seg_dt_tu();
    let dt = problem.seg_dt_tu();
    let mut state = at_impulse;
    for (i, u) in controls.iter().enumerate().take(problem.n_forward()).skip(start) {
        if i > start {
            state = kepler_propagate(&state, half)?;
        }
        if let Some(m) = mid.as_deref_mut() {
            m.push(state);
        }
        state = apply_impulse(&state, u, dt, problem, Direction::Forward)?;
        state = kepler_propagate(&state, half)?;
    }
    Ok(state)
}

/// Runs backward segments from index `start` (counting down to `n_forward`)
/// beginning at that segment's impulse point.
pub(crate) fn backward_from(
    problem: &SfProblem,
    controls: &[Vec3],
    start: usize,
    at_impulse: StateVector,
    mut mid: Option<&mut Vec<StateVector>>,
) -> Result<StateVector> {
    let half = 0.5 * problem.seg_dt_tu();
    let dt = problem.seg_dt_tu();
    let nf = problem.n_forward();
    let mut state = at_impulse;
    for i in (nf..=start).rev() {
        if i < start {
            state = kepler_propagate(&state, -half)?;
        }
        if let Some(m) = mid.as_deref_mut() {
            m.push(state);
        }
        state = apply_impulse(&state, &controls[i], dt, problem, Direction::Backward)?;
        state = kepler_propagate(&state, -half)?;
    }
    Ok(state)
}

pub(crate) fn forward_start(problem: &SfProblem) -> Result<StateVector> {
    kepler_propagate(&problem.departure, 0.5 * problem.seg_dt_tu())
}

pub(crate) fn backward_start(problem: &SfProblem, m_f: f64) -> Result<StateVector> {
    kepler_propagate(&problem.arrival_state(m_f), -0.5 * problem.seg_dt_tu())
}

fn check_decision(problem: &SfProblem, decision: &DecisionVector) -> Result<()> {
    if decision.controls.len() != problem.n_segments {
        return Err(Error::Shape {
            expected: problem.n_segments,
            got: decision.controls.len(),
        });
    }
    if !(decision.m_f > 0.0) {
        return Err(Error::Input(format!("arrival mass {} must be positive", decision.m_f)));
    }
    Ok(())
}

/// State at the match point reached by the forward or backward leg.
pub fn propagate_leg(
    problem: &SfProblem,
    decision: &DecisionVector,
    direction: Direction,
) -> Result<StateVector> {
    check_decision(problem, decision)?;
    match direction {
        Direction::Forward => {
            forward_from(problem, &decision.controls, 0, forward_start(problem)?, None)
        }
        Direction::Backward => backward_from(
            problem,
            &decision.controls,
            problem.n_segments - 1,
            backward_start(problem, decision.m_f)?,
            None,
        ),
    }
}

pub(crate) fn defect_between(problem: &SfProblem, fwd: &StateVector, bwd: &StateVector) -> MatchDefect {
    MatchDefect {
        dp: fwd.position - bwd.position,
        dv: fwd.velocity - bwd.velocity,
        dm: (fwd.mass - bwd.mass) / problem.m0,
    }
}

/// Forward-minus-backward mismatch at the match point.
pub fn match_defect(problem: &SfProblem, decision: &DecisionVector) -> Result<MatchDefect> {
    let fwd = propagate_leg(problem, decision, Direction::Forward)?;
    let bwd = propagate_leg(problem, decision, Direction::Backward)?;
    Ok(defect_between(problem, &fwd, &bwd))
}

/// Normalized final-mass objective in minimization form, −m_f/m0.
pub fn objective(problem: &SfProblem, decision: &DecisionVector) -> f64 {
    -decision.m_f / problem.m0
}

/// One row of a trajectory dump: the state just after the impulse of a
/// segment, in forward time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub segment: usize,
    pub epoch_mjd: f64,
    pub x_au: f64,
    pub y_au: f64,
    pub z_au: f64,
    pub vx_km_s: f64,
    pub vy_km_s: f64,
    pub vz_km_s: f64,
    pub mass_kg: f64,
    pub dv_m_s: f64,
}

pub fn trajectory_rows(problem: &SfProblem, decision: &DecisionVector) -> Result<Vec<TrajectoryRow>> {
    check_decision(problem, decision)?;
    let seg_days = problem.tof_days / problem.n_segments as f64;
    let dt = problem.seg_dt_tu();
    let row = |i: usize, post: &StateVector, dv_m_s: f64| TrajectoryRow {
        segment: i,
        epoch_mjd: problem.epoch_mjd + (i as f64 + 0.5) * seg_days,
        x_au: post.position.x,
        y_au: post.position.y,
        z_au: post.position.z,
        vx_km_s: vu_to_km_s(post.velocity.x),
        vy_km_s: vu_to_km_s(post.velocity.y),
        vz_km_s: vu_to_km_s(post.velocity.z),
        mass_kg: post.mass,
        dv_m_s,
    };
    let impulse_dv = |pre: &StateVector, post: &StateVector| {
        crate::units::vu_to_m_s((post.velocity - pre.velocity).norm())
    };

    let mut rows = Vec::with_capacity(problem.n_segments);
    let mut fwd_mid = Vec::new();
    forward_from(
        problem,
        &decision.controls,
        0,
        forward_start(problem)?,
        Some(&mut fwd_mid),
    )?;
    for (i, pre) in fwd_mid.iter().enumerate() {
        let post = apply_impulse(pre, &decision.controls[i], dt, problem, Direction::Forward)?;
        rows.push(row(i, &post, impulse_dv(pre, &post)));
    }
    let mut bwd_mid = Vec::new();
    backward_from(
        problem,
        &decision.controls,
        problem.n_segments - 1,
        backward_start(problem, decision.m_f)?,
        Some(&mut bwd_mid),
    )?;
    // bwd_mid runs from the last segment down to n_forward
    for (offset, post) in bwd_mid.iter().enumerate().rev() {
        let i = problem.n_segments - 1 - offset;
        let pre = apply_impulse(post, &decision.controls[i], dt, problem, Direction::Backward)?;
        rows.push(row(i, post, impulse_dv(&pre, post)));
    }
    Ok(rows)
}

pub fn write_trajectory_csv(rows: &[TrajectoryRow], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    let mut inner = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    inner.flush().map_err(|e| Error::io(path, e))
}
