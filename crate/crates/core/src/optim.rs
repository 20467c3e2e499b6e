//! Reference Adam and SGD-with-momentum steppers and epoch runners.
//!
//! Adam follows the bias-corrected recursion with `ε` inside the square root:
//! the update is `−η m̂ / sqrt(v̂ + ε)`.

use crate::error::{ensure, Error, Result};
use crate::problem::{check_theta, PartitionSpec, PerSampleProblem};
use crate::Vector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Step size, Adam betas and `ε`, and the SGDM momentum `β`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Momentum for SGD with momentum; unused by Adam.
    pub beta: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            eta: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            beta: 0.9,
        }
    }
}

impl HyperParams {
    pub fn adam(eta: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            eta,
            beta1,
            beta2,
            eps,
            ..Self::default()
        }
    }

    pub fn sgdm(eta: f64, beta: f64) -> Self {
        Self {
            eta,
            beta,
            ..Self::default()
        }
    }

    pub fn with_eta(self, eta: f64) -> Self {
        Self { eta, ..self }
    }

    /// Checks every field against its admissible range.
    ///
    /// `η = 0` and `ε = 0` are accepted: the former freezes the iterate, the
    /// latter is only meaningful while gradients stay nonzero.
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..1.0).contains(&x);
        ensure(self.eta.is_finite() && self.eta >= 0.0, || {
            format!("eta must be finite and ≥ 0, got {}", self.eta)
        })?;
        ensure(unit(self.beta1), || {
            format!("beta1 must lie in [0, 1), got {}", self.beta1)
        })?;
        ensure(unit(self.beta2), || {
            format!("beta2 must lie in [0, 1), got {}", self.beta2)
        })?;
        ensure(unit(self.beta), || {
            format!("beta must lie in [0, 1), got {}", self.beta)
        })?;
        ensure(self.eps.is_finite() && self.eps >= 0.0, || {
            format!("eps must be finite and ≥ 0, got {}", self.eps)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Adam,
    Sgdm,
}

/// First and second moment estimates and the number of steps taken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vector,
    pub v: Vector,
    pub t: usize,
}

impl AdamState {
    pub fn new(dim: usize) -> Self {
        Self {
            m: Vector::zeros(dim),
            v: Vector::zeros(dim),
            t: 0,
        }
    }
}

fn ensure_finite(v: &Vector, what: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// One Adam step; returns the new state and the parameter increment.
pub fn adam_step(
    state: &AdamState,
    grad: &Vector,
    hp: &HyperParams,
) -> Result<(AdamState, Vector)> {
    ensure_finite(grad, "gradient")?;
    if grad.len() != state.m.len() {
        return Err(Error::DimensionMismatch {
            expected: state.m.len(),
            got: grad.len(),
        });
    }
    let m = &state.m * hp.beta1 + grad * (1.0 - hp.beta1);
    let v = &state.v * hp.beta2 + grad.component_mul(grad) * (1.0 - hp.beta2);
    let power = i32::try_from(state.t + 1)
        .map_err(|_| Error::InvalidArgument("step counter overflow".into()))?;
    let c1 = 1.0 - hp.beta1.powi(power);
    let c2 = 1.0 - hp.beta2.powi(power);
    let delta = Vector::from_iterator(
        grad.len(),
        m.iter().zip(v.iter()).map(|(mi, vi)| {
            let denom = (vi / c2 + hp.eps).sqrt();
            // Only reachable with ε = 0 and a zero history, where m̂ = 0 too.
            if denom == 0.0 {
                0.0
            } else {
                -hp.eta * (mi / c1) / denom
            }
        }),
    );
    Ok((
        AdamState {
            m,
            v,
            t: state.t + 1,
        },
        delta,
    ))
}

/// One SGD-with-momentum step: `velocity' = β velocity + grad`, `delta = −η velocity'`.
pub fn sgdm_step(velocity: &Vector, grad: &Vector, hp: &HyperParams) -> Result<(Vector, Vector)> {
    ensure_finite(grad, "gradient")?;
    ensure_finite(velocity, "velocity")?;
    if grad.len() != velocity.len() {
        return Err(Error::DimensionMismatch {
            expected: velocity.len(),
            got: grad.len(),
        });
    }
    let next = velocity * hp.beta + grad;
    let delta = &next * -hp.eta;
    Ok((next, delta))
}

/// Which iteration produced a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IterationKind {
    MiniBatch,
    Memoryless,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub algorithm: Algorithm,
    pub kind: IterationKind,
    pub hyper: HyperParams,
    /// The single-epoch partition; `None` for multi-epoch runs.
    pub partition: Option<PartitionSpec>,
    pub epochs: usize,
    pub seed: Option<u64>,
}

/// Iterates `θ_0, …, θ_T` and the settings that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<Vector>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// CSV with columns `t, theta_1, …, theta_dim`.
    pub fn to_csv(&self) -> String {
        let dim = self.points.first().map_or(0, |p| p.len());
        let mut out = String::from("t");
        for i in 1..=dim {
            let _ = write!(out, ",theta_{i}");
        }
        out.push('\n');
        for (t, p) in self.points.iter().enumerate() {
            let _ = write!(out, "{t}");
            for v in p.iter() {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trajectory serialization cannot fail")
    }
}

/// Runs `steps ≤ m` optimizer steps of one epoch, using `∇L_k(θ_k)` for batch
/// `k` in partition order.
pub fn run_epoch<P: PerSampleProblem + ?Sized>(
    problem: &P,
    partition: &PartitionSpec,
    hp: &HyperParams,
    theta0: &Vector,
    algo: Algorithm,
    steps: usize,
) -> Result<Trajectory> {
    hp.validate()?;
    check_theta(problem, theta0)?;
    partition.check_against(problem)?;
    if steps > partition.m() {
        return Err(Error::InvalidArgument(format!(
            "single-epoch horizon {steps} exceeds the {} available batches",
            partition.m()
        )));
    }
    let mut stepper = Stepper::new(algo, problem.dim());
    let mut points = Vec::with_capacity(steps + 1);
    points.push(theta0.clone());
    let mut theta = theta0.clone();
    for k in 0..steps {
        let g = batch_gradient(problem, partition.batch(k), &theta);
        theta += stepper.step(&g, hp)?;
        points.push(theta.clone());
    }
    let meta = TrajectoryMeta {
        algorithm: algo,
        kind: IterationKind::MiniBatch,
        hyper: *hp,
        partition: Some(partition.clone()),
        epochs: 1,
        seed: None,
    };
    Ok(Trajectory { points, meta })
}

/// Multi-epoch training with a fresh uniformly random permutation per epoch.
///
/// Optimizer state carries over between epochs. The returned trajectory holds
/// `θ_0` followed by the iterate at the end of every epoch.
pub fn run_epochs<P: PerSampleProblem + ?Sized>(
    problem: &P,
    hp: &HyperParams,
    theta0: &Vector,
    algo: Algorithm,
    batch_size: usize,
    epochs: usize,
    seed: u64,
) -> Result<Trajectory> {
    hp.validate()?;
    check_theta(problem, theta0)?;
    let n = problem.n_samples();
    ensure(batch_size >= 1 && n.is_multiple_of(batch_size), || {
        format!("batch size {batch_size} must divide N = {n}")
    })?;
    let m = n / batch_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stepper = Stepper::new(algo, problem.dim());
    let mut theta = theta0.clone();
    let mut points = vec![theta0.clone()];
    for _ in 0..epochs {
        let part = PartitionSpec::random(m, batch_size, &mut rng)?;
        for k in 0..m {
            let g = batch_gradient(problem, part.batch(k), &theta);
            theta += stepper.step(&g, hp)?;
        }
        points.push(theta.clone());
    }
    let meta = TrajectoryMeta {
        algorithm: algo,
        kind: IterationKind::MiniBatch,
        hyper: *hp,
        partition: None,
        epochs,
        seed: Some(seed),
    };
    Ok(Trajectory { points, meta })
}

/// Mean gradient over the given samples.
pub fn batch_gradient<P: PerSampleProblem + ?Sized>(
    problem: &P,
    batch: &[usize],
    theta: &Vector,
) -> Vector {
    let mut g = Vector::zeros(theta.len());
    for &p in batch {
        g += problem.per_sample_grad(p, theta);
    }
    g / batch.len() as f64
}

enum Stepper {
    Adam(AdamState),
    Sgdm(Vector),
}

impl Stepper {
    fn new(algo: Algorithm, dim: usize) -> Self {
        match algo {
            Algorithm::Adam => Stepper::Adam(AdamState::new(dim)),
            Algorithm::Sgdm => Stepper::Sgdm(Vector::zeros(dim)),
        }
    }

    fn step(&mut self, g: &Vector, hp: &HyperParams) -> Result<Vector> {
        match self {
            Stepper::Adam(state) => {
                let (next, delta) = adam_step(state, g, hp)?;
                *state = next;
                Ok(delta)
            }
            Stepper::Sgdm(vel) => {
                let (next, delta) = sgdm_step(vel, g, hp)?;
                *vel = next;
                Ok(delta)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::ShiftedQuadratic;

    fn v1(x: f64) -> Vector {
        Vector::from_element(1, x)
    }

    #[test]
    fn first_adam_step_is_normalized() {
        let hp = HyperParams::adam(0.1, 0.9, 0.999, 1e-300);
        let (_, d) = adam_step(&AdamState::new(1), &v1(3.0), &hp).unwrap();
        assert!((d[0] + 0.1).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_moves_by_eta_per_step() {
        let hp = HyperParams::adam(0.1, 0.9, 0.999, 0.0);
        let mut st = AdamState::new(1);
        let mut theta = 0.0;
        for _ in 0..2 {
            let (next, d) = adam_step(&st, &v1(3.0), &hp).unwrap();
            st = next;
            theta += d[0];
        }
        assert!((theta + 0.2).abs() < 1e-14);
    }

    #[test]
    fn zero_gradient_never_moves() {
        let hp = HyperParams::adam(0.1, 0.9, 0.999, 1e-8);
        let mut st = AdamState::new(2);
        for _ in 0..5 {
            let (next, d) = adam_step(&st, &Vector::zeros(2), &hp).unwrap();
            assert_eq!(d.amax(), 0.0);
            st = next;
        }
        assert_eq!(st.m.amax() + st.v.amax(), 0.0);
        assert_eq!(st.t, 5);
    }

    #[test]
    fn nonfinite_gradient_is_an_error() {
        let hp = HyperParams::default();
        assert!(adam_step(&AdamState::new(1), &v1(f64::NAN), &hp).is_err());
        assert!(sgdm_step(&v1(0.0), &v1(f64::INFINITY), &hp).is_err());
    }

    #[test]
    fn sgdm_accumulates_geometrically() {
        let hp = HyperParams::sgdm(0.1, 0.5);
        let (v, d) = sgdm_step(&v1(0.0), &v1(1.0), &hp).unwrap();
        assert_eq!((v[0], d[0]), (1.0, -0.1));
        let (v, _) = sgdm_step(&v, &v1(1.0), &hp).unwrap();
        assert_eq!(v[0], 1.5);
        let plain = HyperParams::sgdm(0.1, 0.0);
        assert_eq!(sgdm_step(&v1(4.0), &v1(2.0), &plain).unwrap().1[0], -0.2);
    }

    #[test]
    fn velocity_approaches_geometric_limit() {
        let hp = HyperParams::sgdm(0.1, 0.8);
        let mut vel = v1(0.0);
        for _ in 0..300 {
            vel = sgdm_step(&vel, &v1(2.0), &hp).unwrap().0;
        }
        assert!((vel[0] - 2.0 / 0.2).abs() < 1e-10);
    }

    #[test]
    fn epoch_horizon_is_bounded_by_batch_count() {
        let q = ShiftedQuadratic::from_centers(vec![v1(1.0), v1(2.0)]).unwrap();
        let part = PartitionSpec::identity(2, 1).unwrap();
        assert!(run_epoch(
            &q,
            &part,
            &HyperParams::default(),
            &v1(0.0),
            Algorithm::Adam,
            3
        )
        .is_err());
    }

    #[test]
    fn two_adam_steps_match_hand_recursion() {
        let q = ShiftedQuadratic::from_centers(vec![v1(1.0), v1(2.0), v1(3.0), v1(6.0)]).unwrap();
        let part = PartitionSpec::new(2, 2, vec![3, 0, 1, 2]).unwrap();
        let (eta, b1, b2, eps) = (0.1, 0.9, 0.99, 1e-8);
        let hp = HyperParams::adam(eta, b1, b2, eps);
        let traj = run_epoch(&q, &part, &hp, &v1(0.5), Algorithm::Adam, 2).unwrap();
        // Batch {6, 1} then {2, 3}; ∇ℓ_p = θ − a_p.
        let g0 = 0.5 - 3.5;
        let m0 = (1.0 - b1) * g0;
        let v0 = (1.0 - b2) * g0 * g0;
        let th1 = 0.5 - eta * (m0 / (1.0 - b1)) / (v0 / (1.0 - b2) + eps).sqrt();
        let g1 = th1 - 2.5;
        let m1 = b1 * m0 + (1.0 - b1) * g1;
        let v1_ = b2 * v0 + (1.0 - b2) * g1 * g1;
        let th2 = th1 - eta * (m1 / (1.0 - b1 * b1)) / (v1_ / (1.0 - b2 * b2) + eps).sqrt();
        assert!((traj.points[1][0] - th1).abs() < 1e-14);
        assert!((traj.points[2][0] - th2).abs() < 1e-14);
    }

    #[test]
    fn trajectory_csv_layout() {
        let q = ShiftedQuadratic::from_centers(vec![Vector::from_vec(vec![1.0, 2.0])]).unwrap();
        let part = PartitionSpec::identity(1, 1).unwrap();
        let traj = run_epoch(
            &q,
            &part,
            &HyperParams::default(),
            &Vector::zeros(2),
            Algorithm::Sgdm,
            1,
        )
        .unwrap();
        let csv = traj.to_csv();
        assert!(csv.starts_with("t,theta_1,theta_2\n0,0,0\n1,"));
        let back: Trajectory = serde_json::from_str(&traj.to_json()).unwrap();
        assert_eq!(back, traj);
    }
}
