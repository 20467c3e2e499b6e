//! Construction of problem families from key-value configuration.

use super::{
    replicate, scale_noise, FamilyId, Logistic2D, PerSampleProblem, RandomPsdQuadratic,
    ShiftedQuadratic, TeacherStudentConfig, TeacherStudentMlp,
};
use crate::error::{ensure, Result};
use serde::{Deserialize, Serialize};

/// Declarative description of a problem instance; deterministic given `seed`.
///
/// For `teacher-student-mlp`, `dim` is the input dimension and `hidden` the
/// width; the parameter count follows from both. `logistic-2d` requires `dim = 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub family: FamilyId,
    pub n_samples: usize,
    pub dim: usize,
    pub seed: u64,
    #[serde(default = "one")]
    pub noise_scale: f64,
    #[serde(default = "one_copy")]
    pub replicate: usize,
    #[serde(default)]
    pub hidden: Option<usize>,
}

fn one() -> f64 {
    1.0
}

fn one_copy() -> usize {
    1
}

impl ProblemConfig {
    pub fn new(family: FamilyId, n_samples: usize, dim: usize, seed: u64) -> Self {
        Self {
            family,
            n_samples,
            dim,
            seed,
            noise_scale: 1.0,
            replicate: 1,
            hidden: None,
        }
    }

    pub fn build(&self) -> Result<Box<dyn PerSampleProblem>> {
        ensure(self.n_samples > 0, || "n_samples must be positive".into())?;
        ensure(self.dim > 0, || "dim must be positive".into())?;
        let base: Box<dyn PerSampleProblem> = match self.family {
            FamilyId::ShiftedQuadratic => Box::new(ShiftedQuadratic::random(
                self.n_samples,
                self.dim,
                self.seed,
            )?),
            FamilyId::RandomPsdQuadratic => Box::new(RandomPsdQuadratic::random(
                self.n_samples,
                self.dim,
                self.seed,
            )?),
            FamilyId::Logistic2D => {
                ensure(self.dim == 2, || {
                    format!("logistic family needs dim = 2, got {}", self.dim)
                })?;
                Box::new(Logistic2D::random(self.n_samples, self.seed)?)
            }
            FamilyId::TeacherStudentMlp => {
                let cfg = TeacherStudentConfig {
                    input_dim: self.dim,
                    hidden: self.hidden.unwrap_or(8),
                    n_train: self.n_samples,
                    n_val: 1,
                    label_noise: 0.5,
                    data_seed: self.seed,
                };
                Box::new(TeacherStudentMlp::generate(&cfg)?.0)
            }
        };
        let scaled: Box<dyn PerSampleProblem> = if self.noise_scale == 1.0 {
            base
        } else {
            Box::new(scale_noise(base, self.noise_scale)?)
        };
        Ok(if self.replicate == 1 {
            scaled
        } else {
            Box::new(replicate(scaled, self.replicate)?)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builds_every_family() {
        for fam in [
            FamilyId::ShiftedQuadratic,
            FamilyId::RandomPsdQuadratic,
            FamilyId::Logistic2D,
            FamilyId::TeacherStudentMlp,
        ] {
            let p = ProblemConfig::new(fam, 6, 2, 3).build().unwrap();
            assert_eq!(p.n_samples(), 6);
            assert_eq!(p.family_id(), fam);
        }
    }

    #[test]
    fn replication_and_scaling_apply() {
        let mut cfg = ProblemConfig::new(FamilyId::ShiftedQuadratic, 3, 2, 1);
        cfg.replicate = 2;
        cfg.noise_scale = 0.5;
        assert_eq!(cfg.build().unwrap().n_samples(), 6);
        cfg.noise_scale = -1.0;
        assert!(cfg.build().is_err());
    }

    #[test]
    fn logistic_dimension_is_checked() {
        assert!(ProblemConfig::new(FamilyId::Logistic2D, 4, 3, 0)
            .build()
            .is_err());
    }
}
