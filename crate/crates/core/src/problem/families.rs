//! Built-in loss families with analytic derivatives.

use super::{FamilyId, PerSampleProblem};
use crate::error::{ensure, Error, Result};
use crate::{Matrix, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

fn normal_vec(rng: &mut ChaCha8Rng, len: usize) -> Vector {
    Vector::from_iterator(len, (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

fn same_dims(vs: &[Vector]) -> Result<usize> {
    ensure(!vs.is_empty(), || "at least one sample is required".into())?;
    let d = vs[0].len();
    ensure(d > 0, || "dimension must be positive".into())?;
    for v in vs {
        if v.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: v.len(),
            });
        }
    }
    Ok(d)
}

/// `ℓ_p(θ) = ½ ‖θ − a_p‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftedQuadratic {
    centers: Vec<Vector>,
}

impl ShiftedQuadratic {
    pub fn from_centers(centers: Vec<Vector>) -> Result<Self> {
        same_dims(&centers)?;
        Ok(Self { centers })
    }

    /// Centers drawn from a standard normal.
    pub fn random(n: usize, dim: usize, seed: u64) -> Result<Self> {
        ensure(n > 0 && dim > 0, || "n and dim must be positive".into())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::from_centers((0..n).map(|_| normal_vec(&mut rng, dim)).collect())
    }

    pub fn centers(&self) -> &[Vector] {
        &self.centers
    }
}

impl PerSampleProblem for ShiftedQuadratic {
    fn n_samples(&self) -> usize {
        self.centers.len()
    }
    fn dim(&self) -> usize {
        self.centers[0].len()
    }
    fn family_id(&self) -> FamilyId {
        FamilyId::ShiftedQuadratic
    }
    fn per_sample_value(&self, p: usize, theta: &Vector) -> f64 {
        0.5 * (theta - &self.centers[p]).norm_squared()
    }
    fn per_sample_grad(&self, p: usize, theta: &Vector) -> Vector {
        theta - &self.centers[p]
    }
    fn per_sample_hess(&self, _p: usize, theta: &Vector) -> Matrix {
        Matrix::identity(theta.len(), theta.len())
    }
}

/// `ℓ_p(θ) = ½ (θ − a_p)ᵀ A_p (θ − a_p)` with `A_p` symmetric positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomPsdQuadratic {
    mats: Vec<Matrix>,
    centers: Vec<Vector>,
}

impl RandomPsdQuadratic {
    pub fn from_parts(mats: Vec<Matrix>, centers: Vec<Vector>) -> Result<Self> {
        let d = same_dims(&centers)?;
        ensure(mats.len() == centers.len(), || {
            "one matrix per center is required".into()
        })?;
        for a in &mats {
            ensure(a.nrows() == d && a.ncols() == d, || {
                format!("matrices must be {d}×{d}")
            })?;
            ensure(
                (a - a.transpose()).amax() <= 1e-12 * (1.0 + a.amax()),
                || "matrices must be symmetric".into(),
            )?;
        }
        Ok(Self { mats, centers })
    }

    /// `A_p = Q_p Q_pᵀ / dim + I/2` with Gaussian `Q_p`, centers standard normal.
    pub fn random(n: usize, dim: usize, seed: u64) -> Result<Self> {
        ensure(n > 0 && dim > 0, || "n and dim must be positive".into())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mats = Vec::with_capacity(n);
        let mut centers = Vec::with_capacity(n);
        for _ in 0..n {
            let q = Matrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
            let a = &q * q.transpose() / dim as f64 + Matrix::identity(dim, dim) * 0.5;
            mats.push((&a + a.transpose()) * 0.5);
            centers.push(normal_vec(&mut rng, dim));
        }
        Self::from_parts(mats, centers)
    }

    pub fn matrices(&self) -> &[Matrix] {
        &self.mats
    }

    pub fn centers(&self) -> &[Vector] {
        &self.centers
    }

    /// Unique minimizer of the full-batch loss, `(Σ A_p)⁻¹ Σ A_p a_p`.
    pub fn minimizer(&self) -> Result<Vector> {
        let d = self.dim();
        let mut a = Matrix::zeros(d, d);
        let mut rhs = Vector::zeros(d);
        for (m, c) in self.mats.iter().zip(&self.centers) {
            a += m;
            rhs += m * c;
        }
        a.cholesky()
            .map(|ch| ch.solve(&rhs))
            .ok_or_else(|| Error::InvalidArgument("summed Hessian is not positive definite".into()))
    }
}

impl PerSampleProblem for RandomPsdQuadratic {
    fn n_samples(&self) -> usize {
        self.centers.len()
    }
    fn dim(&self) -> usize {
        self.centers[0].len()
    }
    fn family_id(&self) -> FamilyId {
        FamilyId::RandomPsdQuadratic
    }
    fn per_sample_value(&self, p: usize, theta: &Vector) -> f64 {
        let r = theta - &self.centers[p];
        0.5 * r.dot(&(&self.mats[p] * &r))
    }
    fn per_sample_grad(&self, p: usize, theta: &Vector) -> Vector {
        &self.mats[p] * (theta - &self.centers[p])
    }
    fn per_sample_hess(&self, p: usize, _theta: &Vector) -> Matrix {
        self.mats[p].clone()
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Two-feature logistic regression, `ℓ_p(θ) = log(1 + exp(−y_p x_pᵀθ))` with labels ±1.
#[derive(Debug, Clone, PartialEq)]
pub struct Logistic2D {
    xs: Vec<Vector>,
    ys: Vec<f64>,
}

impl Logistic2D {
    pub fn from_samples(xs: Vec<Vector>, ys: Vec<f64>) -> Result<Self> {
        let d = same_dims(&xs)?;
        ensure(d == 2, || {
            format!("features must be two-dimensional, got {d}")
        })?;
        ensure(xs.len() == ys.len(), || {
            "one label per sample is required".into()
        })?;
        ensure(ys.iter().all(|y| *y == 1.0 || *y == -1.0), || {
            "labels must be ±1".into()
        })?;
        Ok(Self { xs, ys })
    }

    /// Gaussian features labelled by a fixed linear teacher, with 10% label flips.
    pub fn random(n: usize, seed: u64) -> Result<Self> {
        ensure(n > 0, || "n must be positive".into())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let teacher = [1.5, -1.0];
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let x = normal_vec(&mut rng, 2);
            let mut y = if teacher[0] * x[0] + teacher[1] * x[1] >= 0.0 {
                1.0
            } else {
                -1.0
            };
            if rng.random::<f64>() < 0.1 {
                y = -y;
            }
            xs.push(x);
            ys.push(y);
        }
        Self::from_samples(xs, ys)
    }

    /// Disjoint training and validation sets drawn from the same distribution.
    pub fn split(n_train: usize, n_val: usize, seed: u64) -> Result<(Self, Self)> {
        let all = Self::random(n_train + n_val, seed)?;
        let (xt, xv) = all.xs.split_at(n_train);
        let (yt, yv) = all.ys.split_at(n_train);
        Ok((
            Self::from_samples(xt.to_vec(), yt.to_vec())?,
            Self::from_samples(xv.to_vec(), yv.to_vec())?,
        ))
    }
}

impl PerSampleProblem for Logistic2D {
    fn n_samples(&self) -> usize {
        self.xs.len()
    }
    fn dim(&self) -> usize {
        2
    }
    fn family_id(&self) -> FamilyId {
        FamilyId::Logistic2D
    }
    fn per_sample_value(&self, p: usize, theta: &Vector) -> f64 {
        softplus(-self.ys[p] * self.xs[p].dot(theta))
    }
    fn per_sample_grad(&self, p: usize, theta: &Vector) -> Vector {
        let z = -self.ys[p] * self.xs[p].dot(theta);
        &self.xs[p] * (-self.ys[p] * logistic(z))
    }
    fn per_sample_hess(&self, p: usize, theta: &Vector) -> Matrix {
        let z = -self.ys[p] * self.xs[p].dot(theta);
        let s = logistic(z);
        &self.xs[p] * self.xs[p].transpose() * (s * (1.0 - s))
    }
}

/// Shape and data settings for the teacher–student regression task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherStudentConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub n_train: usize,
    pub n_val: usize,
    /// Standard deviation of the Gaussian label noise.
    pub label_noise: f64,
    pub data_seed: u64,
}

impl Default for TeacherStudentConfig {
    fn default() -> Self {
        Self {
            input_dim: 5,
            hidden: 16,
            n_train: 128,
            n_val: 512,
            label_noise: 0.5,
            data_seed: 0,
        }
    }
}

/// One-hidden-layer tanh network with squared loss, `ℓ_p = ½ (f(x_p; θ) − y_p)²`.
///
/// Parameter layout: for each hidden unit `a`, its `input_dim` input weights
/// followed by its bias; then the `hidden` output weights; then the output bias.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherStudentMlp {
    input_dim: usize,
    hidden: usize,
    xs: Vec<Vector>,
    ys: Vec<f64>,
}

/// Cached forward pass of one sample.
struct Forward {
    out: f64,
    act: Vec<f64>,
    dact: Vec<f64>,
}

impl TeacherStudentMlp {
    pub fn n_params(input_dim: usize, hidden: usize) -> usize {
        hidden * (input_dim + 1) + hidden + 1
    }

    pub fn from_samples(
        input_dim: usize,
        hidden: usize,
        xs: Vec<Vector>,
        ys: Vec<f64>,
    ) -> Result<Self> {
        let d = same_dims(&xs)?;
        ensure(d == input_dim, || {
            format!("inputs have dimension {d}, expected {input_dim}")
        })?;
        ensure(hidden > 0, || "hidden width must be positive".into())?;
        ensure(xs.len() == ys.len(), || {
            "one target per input is required".into()
        })?;
        Ok(Self {
            input_dim,
            hidden,
            xs,
            ys,
        })
    }

    /// Draws a random teacher network, labels Gaussian inputs with it plus
    /// label noise, and returns `(train, validation)` students sharing that teacher.
    pub fn generate(cfg: &TeacherStudentConfig) -> Result<(Self, Self)> {
        ensure(cfg.n_train > 0 && cfg.n_val > 0, || {
            "train and validation sets must be nonempty".into()
        })?;
        ensure(cfg.label_noise >= 0.0, || {
            "label noise must be nonnegative".into()
        })?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.data_seed);
        let teacher_net = Self::from_samples(
            cfg.input_dim,
            cfg.hidden,
            vec![Vector::zeros(cfg.input_dim)],
            vec![0.0],
        )?;
        let teacher = teacher_net.random_params(&mut rng, 1.0);
        let mut draw = |count: usize| -> (Vec<Vector>, Vec<f64>) {
            let mut xs = Vec::with_capacity(count);
            let mut ys = Vec::with_capacity(count);
            for _ in 0..count {
                let x = normal_vec(&mut rng, cfg.input_dim);
                let y = teacher_net.forward(&x, &teacher).out
                    + cfg.label_noise * rng.sample::<f64, _>(StandardNormal);
                xs.push(x);
                ys.push(y);
            }
            (xs, ys)
        };
        let (xt, yt) = draw(cfg.n_train);
        let (xv, yv) = draw(cfg.n_val);
        Ok((
            Self::from_samples(cfg.input_dim, cfg.hidden, xt, yt)?,
            Self::from_samples(cfg.input_dim, cfg.hidden, xv, yv)?,
        ))
    }

    /// A random student initialization with fan-in scaling.
    pub fn init_params(&self, seed: u64) -> Vector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.random_params(&mut rng, 0.5)
    }

    fn random_params(&self, rng: &mut ChaCha8Rng, gain: f64) -> Vector {
        let (d, h) = (self.input_dim, self.hidden);
        let w_in = gain / (d as f64).sqrt();
        let w_out = gain / (h as f64).sqrt();
        let mut theta = Vector::zeros(Self::n_params(d, h));
        for (idx, v) in theta.iter_mut().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            *v = if idx < h * (d + 1) {
                if idx % (d + 1) == d {
                    0.1 * z
                } else {
                    w_in * z
                }
            } else if idx < h * (d + 2) {
                w_out * z
            } else {
                0.0
            };
        }
        theta
    }

    fn forward(&self, x: &Vector, theta: &Vector) -> Forward {
        let (d, h) = (self.input_dim, self.hidden);
        let mut act = Vec::with_capacity(h);
        let mut dact = Vec::with_capacity(h);
        let mut out = theta[h * (d + 2)];
        for a in 0..h {
            let row = a * (d + 1);
            let mut z = theta[row + d];
            for c in 0..d {
                z += theta[row + c] * x[c];
            }
            let t = z.tanh();
            out += theta[h * (d + 1) + a] * t;
            act.push(t);
            dact.push(1.0 - t * t);
        }
        Forward { out, act, dact }
    }

    /// Network output gradient `∇_θ f(x; θ)`.
    fn output_grad(&self, x: &Vector, theta: &Vector, fw: &Forward) -> Vector {
        let (d, h) = (self.input_dim, self.hidden);
        let mut g = Vector::zeros(theta.len());
        for a in 0..h {
            let w2 = theta[h * (d + 1) + a];
            let row = a * (d + 1);
            let s = w2 * fw.dact[a];
            for c in 0..d {
                g[row + c] = s * x[c];
            }
            g[row + d] = s;
            g[h * (d + 1) + a] = fw.act[a];
        }
        g[h * (d + 2)] = 1.0;
        g
    }
}

impl PerSampleProblem for TeacherStudentMlp {
    fn n_samples(&self) -> usize {
        self.xs.len()
    }
    fn dim(&self) -> usize {
        Self::n_params(self.input_dim, self.hidden)
    }
    fn family_id(&self) -> FamilyId {
        FamilyId::TeacherStudentMlp
    }
    fn per_sample_value(&self, p: usize, theta: &Vector) -> f64 {
        let r = self.forward(&self.xs[p], theta).out - self.ys[p];
        0.5 * r * r
    }
    fn per_sample_grad(&self, p: usize, theta: &Vector) -> Vector {
        let fw = self.forward(&self.xs[p], theta);
        let r = fw.out - self.ys[p];
        self.output_grad(&self.xs[p], theta, &fw) * r
    }
    fn per_sample_hess(&self, p: usize, theta: &Vector) -> Matrix {
        let (d, h) = (self.input_dim, self.hidden);
        let x = &self.xs[p];
        let fw = self.forward(x, theta);
        let r = fw.out - self.ys[p];
        let gf = self.output_grad(x, theta, &fw);
        let mut hess = &gf * gf.transpose();
        // r · ∇²f: nonzero only within a hidden unit's input block and between
        // that block and the unit's output weight.
        let xt = |c: usize| if c == d { 1.0 } else { x[c] };
        for a in 0..h {
            let row = a * (d + 1);
            let out_idx = h * (d + 1) + a;
            let w2 = theta[out_idx];
            let ddact = -2.0 * fw.act[a] * fw.dact[a];
            for c in 0..=d {
                for c2 in 0..=d {
                    hess[(row + c, row + c2)] += r * w2 * ddact * xt(c) * xt(c2);
                }
                hess[(row + c, out_idx)] += r * fw.dact[a] * xt(c);
                hess[(out_idx, row + c)] += r * fw.dact[a] * xt(c);
            }
        }
        hess
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psd_quadratic_minimizer_solves_normal_equations() {
        let q = RandomPsdQuadratic::random(7, 4, 5).unwrap();
        let th = q.minimizer().unwrap();
        let mut g = Vector::zeros(4);
        for p in 0..7 {
            g += q.per_sample_grad(p, &th);
        }
        assert!(g.amax() < 1e-10);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = RandomPsdQuadratic::random(4, 3, 9).unwrap();
        let b = RandomPsdQuadratic::random(4, 3, 9).unwrap();
        assert_eq!(a, b);
        let cfg = TeacherStudentConfig::default();
        assert_eq!(
            TeacherStudentMlp::generate(&cfg).unwrap(),
            TeacherStudentMlp::generate(&cfg).unwrap()
        );
    }

    #[test]
    fn logistic_is_stable_for_large_margins() {
        let l =
            Logistic2D::from_samples(vec![Vector::from_vec(vec![1.0, 0.0])], vec![1.0]).unwrap();
        let th = Vector::from_vec(vec![-800.0, 0.0]);
        assert!((l.per_sample_value(0, &th) - 800.0).abs() < 1e-9);
        assert!(l.per_sample_grad(0, &th).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn mlp_parameter_count_stays_small() {
        let cfg = TeacherStudentConfig::default();
        assert!(TeacherStudentMlp::n_params(cfg.input_dim, cfg.hidden) <= 200);
    }

    #[test]
    fn rejects_bad_samples() {
        assert!(ShiftedQuadratic::from_centers(vec![]).is_err());
        assert!(Logistic2D::from_samples(vec![Vector::zeros(2)], vec![0.5]).is_err());
        assert!(RandomPsdQuadratic::from_parts(
            vec![Matrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0])],
            vec![Vector::zeros(2)]
        )
        .is_err());
    }
}
