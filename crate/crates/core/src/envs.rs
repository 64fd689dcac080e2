//! Two small deterministic control tasks with scripted experts.
//!
//! * `pendulum`: state `(theta, theta_dot)`,
//!   `theta_ddot = -(g/l) sin(theta) + u / (m l^2)`, reward
//!   `-(theta^2 + 0.1 theta_dot^2 + 0.001 u^2)` on the pre-step state.
//! * `racer`: state `(p, v)`, `v_dot = (u - c v |v|) / m`, reward is the
//!   forward progress `v' dt` of the step.
//!
//! Both integrate with semi-implicit Euler (velocity first, then position).

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Pendulum,
    Racer,
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvKind::Pendulum => "pendulum",
            EnvKind::Racer => "racer",
        })
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pendulum" => Ok(EnvKind::Pendulum),
            "racer" => Ok(EnvKind::Racer),
            other => Err(Error::contract(format!(
                "unknown environment `{other}` (expected pendulum or racer)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub mass: f64,
    /// Pendulum length; unused by the racer.
    pub length: f64,
    /// Quadratic drag coefficient; unused by the pendulum.
    pub drag: f64,
    pub gravity: f64,
    pub dt: f64,
    pub horizon: usize,
    /// Actions are clamped to `[-action_limit, action_limit]`.
    pub action_limit: f64,
}

pub const RACER_GAIN: f64 = 5.0;
pub const RACER_TARGET_SPEED: f64 = 2.0;

impl EnvSpec {
    pub fn pendulum() -> Self {
        EnvSpec {
            kind: EnvKind::Pendulum,
            mass: 1.0,
            length: 1.0,
            drag: 0.0,
            gravity: 9.81,
            dt: 0.05,
            horizon: 200,
            action_limit: 5.0,
        }
    }

    pub fn racer() -> Self {
        EnvSpec {
            kind: EnvKind::Racer,
            mass: 1.0,
            length: 1.0,
            drag: 0.1,
            gravity: 9.81,
            dt: 0.05,
            horizon: 200,
            action_limit: 3.0,
        }
    }

    pub fn default_for(kind: EnvKind) -> Self {
        match kind {
            EnvKind::Pendulum => Self::pendulum(),
            EnvKind::Racer => Self::racer(),
        }
    }

    /// The perturbed task used for generalization tests: heavier, shorter
    /// pendulum; heavier racer with more drag.
    pub fn canonical_variant(&self) -> Result<Self> {
        let overrides = match self.kind {
            EnvKind::Pendulum => Overrides {
                mass: Some(1.5),
                length: Some(0.7),
                drag: None,
            },
            EnvKind::Racer => Overrides {
                mass: Some(1.6),
                length: None,
                drag: Some(0.35),
            },
        };
        make_variant(self, &overrides)
    }

    pub fn state_dim(&self) -> usize {
        2
    }

    pub fn action_dim(&self) -> usize {
        1
    }

    pub fn validate(&self) -> Result<()> {
        let positive = self.mass > 0.0
            && self.length > 0.0
            && self.dt > 0.0
            && self.action_limit > 0.0
            && self.gravity.is_finite()
            && match self.kind {
                EnvKind::Pendulum => true,
                EnvKind::Racer => self.drag > 0.0,
            };
        if !positive || self.horizon == 0 {
            return Err(Error::contract(format!("invalid environment spec {self:?}")));
        }
        Ok(())
    }

    fn clamp(&self, u: f64) -> f64 {
        u.clamp(-self.action_limit, self.action_limit)
    }
}

/// Physical parameter substitutions; `None` keeps the original value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Overrides {
    pub mass: Option<f64>,
    pub length: Option<f64>,
    pub drag: Option<f64>,
}

impl Overrides {
    pub fn is_empty(&self) -> bool {
        self.mass.is_none() && self.length.is_none() && self.drag.is_none()
    }
}

impl FromStr for Overrides {
    type Err = Error;

    /// Parses `k=v,...` with keys `m`/`mass`, `l`/`length`, `c`/`drag`.
    fn from_str(s: &str) -> Result<Self> {
        let mut o = Overrides::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::contract(format!("override `{part}` is not key=value")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::contract(format!("override `{part}` has a non-numeric value")))?;
            match k.trim() {
                "m" | "mass" => o.mass = Some(v),
                "l" | "length" => o.length = Some(v),
                "c" | "drag" => o.drag = Some(v),
                other => return Err(Error::contract(format!("unknown override key `{other}`"))),
            }
        }
        Ok(o)
    }
}

/// Applies `overrides`; every substituted value must be positive.
pub fn make_variant(spec: &EnvSpec, overrides: &Overrides) -> Result<EnvSpec> {
    let mut out = spec.clone();
    for (name, v, slot) in [
        ("mass", overrides.mass, &mut out.mass),
        ("length", overrides.length, &mut out.length),
        ("drag", overrides.drag, &mut out.drag),
    ] {
        if let Some(v) = v {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::contract(format!("{name} override must be positive, got {v}")));
            }
            *slot = v;
        }
    }
    out.validate()?;
    Ok(out)
}

pub type State = [f64; 2];

fn wrap_angle(theta: f64) -> f64 {
    use std::f64::consts::PI;
    let mut t = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if t <= -PI {
        t += 2.0 * PI;
    }
    t
}

/// Advances one step with the (already clamped) action.
pub fn step(spec: &EnvSpec, state: State, action: f64) -> Result<(State, f64)> {
    if !state.iter().all(|v| v.is_finite()) || !action.is_finite() {
        return Err(Error::non_finite("environment step input"));
    }
    let u = spec.clamp(action);
    let dt = spec.dt;
    let out = match spec.kind {
        EnvKind::Pendulum => {
            let [theta, omega] = state;
            let ml2 = spec.mass * spec.length * spec.length;
            let alpha = -(spec.gravity / spec.length) * theta.sin() + u / ml2;
            let omega2 = omega + dt * alpha;
            let theta2 = wrap_angle(theta + dt * omega2);
            let reward = -(theta * theta + 0.1 * omega * omega + 0.001 * u * u);
            ([theta2, omega2], reward)
        }
        EnvKind::Racer => {
            let [p, v] = state;
            let accel = (u - spec.drag * v * v.abs()) / spec.mass;
            let v2 = v + dt * accel;
            let p2 = p + dt * v2;
            ([p2, v2], v2 * dt)
        }
    };
    if !out.0.iter().all(|v| v.is_finite()) || !out.1.is_finite() {
        return Err(Error::non_finite("environment state"));
    }
    Ok(out)
}

/// Scripted demonstrator: PD control for the pendulum, proportional speed
/// tracking for the racer.
pub fn expert_action(spec: &EnvSpec, state: State) -> f64 {
    let raw = match spec.kind {
        EnvKind::Pendulum => -12.0 * state[0] - 3.0 * state[1],
        EnvKind::Racer => RACER_GAIN * (RACER_TARGET_SPEED - state[1]),
    };
    spec.clamp(raw)
}

/// Seeded initial state of episode `episode`.
pub fn initial_state(spec: &EnvSpec, seed: u64, episode: usize) -> State {
    let mut r = rng::stream(seed, Purpose::ENV_START, episode as u64, 0);
    match spec.kind {
        EnvKind::Pendulum => [r.random_range(-0.8..0.8), r.random_range(-0.5..0.5)],
        EnvKind::Racer => [0.0, r.random_range(0.0..0.5)],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: State,
    pub action: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub episode: usize,
    pub steps: Vec<Transition>,
    pub episodic_return: f64,
}

impl Trajectory {
    /// One JSON object per step.
    pub fn to_jsonl(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Line<'a> {
            episode: usize,
            t: usize,
            state: &'a State,
            action: f64,
            reward: f64,
        }
        let mut out = String::new();
        for (t, s) in self.steps.iter().enumerate() {
            out.push_str(&serde_json::to_string(&Line {
                episode: self.episode,
                t,
                state: &s.state,
                action: s.action,
                reward: s.reward,
            })?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Runs `policy` for one episode from `start`.
pub fn run_episode(
    spec: &EnvSpec,
    start: State,
    episode: usize,
    policy: &mut dyn FnMut(&State) -> Result<f64>,
) -> Result<Trajectory> {
    spec.validate()?;
    let mut state = start;
    let mut steps = Vec::with_capacity(spec.horizon);
    let mut total = 0.0;
    for t in 0..spec.horizon {
        let raw = policy(&state)?;
        if !raw.is_finite() {
            return Err(Error::non_finite(format!("policy action at step {t}")));
        }
        let action = spec.clamp(raw);
        let (next, reward) = step(spec, state, action)?;
        steps.push(Transition { state, action, reward });
        total += reward;
        state = next;
    }
    Ok(Trajectory {
        episode,
        steps,
        episodic_return: total,
    })
}

/// Expert demonstrations: dataset of `(state, expert action)` rows tagged
/// with episode ids, plus the trajectories.
pub fn generate_demos(spec: &EnvSpec, episodes: usize, seed: u64) -> Result<(Dataset<f64>, Vec<Trajectory>)> {
    if episodes == 0 {
        return Err(Error::contract("episodes must be >= 1"));
    }
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    let mut ids = Vec::new();
    let mut trajectories = Vec::with_capacity(episodes);
    for e in 0..episodes {
        let mut expert = |s: &State| Ok(expert_action(spec, *s));
        let traj = run_episode(spec, initial_state(spec, seed, e), e, &mut expert)?;
        for tr in &traj.steps {
            inputs.extend_from_slice(&tr.state);
            targets.push(tr.action);
            ids.push(e);
        }
        trajectories.push(traj);
    }
    let data = Dataset::new(spec.state_dim(), spec.action_dim(), inputs, targets)?.with_episodes(ids)?;
    Ok((data, trajectories))
}

/// Mean episodic return of `policy` over `episodes` seeded starts.
pub fn rollout_policy(
    spec: &EnvSpec,
    policy: &mut dyn FnMut(&State) -> Result<f64>,
    episodes: usize,
    seed: u64,
) -> Result<f64> {
    if episodes == 0 {
        return Err(Error::contract("episodes must be >= 1"));
    }
    let mut total = 0.0;
    for e in 0..episodes {
        total += run_episode(spec, initial_state(spec, seed, e), e, policy)?.episodic_return;
    }
    Ok(total / episodes as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equilibria() {
        let p = EnvSpec::pendulum();
        assert_eq!(step(&p, [0.0, 0.0], 0.0).unwrap(), ([0.0, 0.0], 0.0));
        let r = EnvSpec::racer();
        assert_eq!(step(&r, [0.0, 0.0], 0.0).unwrap(), ([0.0, 0.0], 0.0));
        assert_eq!(expert_action(&p, [0.0, 0.0]), 0.0);
        assert_eq!(expert_action(&r, [3.0, RACER_TARGET_SPEED]), 0.0);
    }

    #[test]
    fn pendulum_single_step() {
        let p = EnvSpec::pendulum();
        let ([theta, omega], _) = step(&p, [0.1, 0.0], 0.0).unwrap();
        assert!((omega + 0.048_968_290_865_269_22).abs() < 1e-15);
        assert!((theta - 0.097_551_585_456_736_54).abs() < 1e-15);
    }

    #[test]
    fn expert_pd_law() {
        let mut wide = EnvSpec::pendulum();
        wide.action_limit = 100.0;
        assert!((expert_action(&wide, [0.2, 0.0]) + 2.4).abs() < 1e-15);
        assert_eq!(expert_action(&EnvSpec::pendulum(), [1.0, 1.0]), -5.0);
    }

    #[test]
    fn variants() {
        let p = EnvSpec::pendulum();
        assert_eq!(make_variant(&p, &Overrides::default()).unwrap(), p);
        let v = p.canonical_variant().unwrap();
        assert_eq!((v.mass, v.length), (1.5, 0.7));
        let r = EnvSpec::racer().canonical_variant().unwrap();
        assert_eq!((r.mass, r.drag), (1.6, 0.35));
        assert!(make_variant(&p, &"m=-1".parse().unwrap()).is_err());
        assert!("q=1".parse::<Overrides>().is_err());
        let o: Overrides = "m=2, l=0.5".parse().unwrap();
        assert_eq!((o.mass, o.length, o.drag), (Some(2.0), Some(0.5), None));
    }

    #[test]
    fn demos_shape_and_determinism() {
        let p = EnvSpec::pendulum();
        let (d, t) = generate_demos(&p, 10, 7).unwrap();
        assert_eq!(d.len(), 2000);
        assert_eq!(t.len(), 10);
        let (d2, _) = generate_demos(&p, 10, 7).unwrap();
        assert_eq!(d.to_csv(), d2.to_csv());
        assert!(generate_demos(&p, 0, 7).is_err());
    }

    #[test]
    fn zero_policy_racer() {
        let r = EnvSpec::racer();
        let mut zero = |_: &State| Ok(0.0);
        // v stays at its start value decaying under drag; start from rest
        let traj = run_episode(&r, [0.0, 0.0], 0, &mut zero).unwrap();
        assert_eq!(traj.episodic_return, 0.0);
    }

    #[test]
    fn non_finite_action_names_step() {
        let p = EnvSpec::pendulum();
        let mut bad = |_: &State| Ok(f64::NAN);
        let err = rollout_policy(&p, &mut bad, 1, 0).unwrap_err();
        assert!(err.to_string().contains("step 0"));
    }

    #[test]
    fn wrap_keeps_half_open_interval() {
        use std::f64::consts::PI;
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }
}
