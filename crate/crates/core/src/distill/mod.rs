//! Distillation objective: temperature-softened teacher targets, soft and
//! hard losses, and their alpha-mixed combination.
//!
//! Conventions: both soft losses compare probability vectors — teacher and
//! student logits go through the same temperature softmax — and both CE
//! forms are negated so that training minimizes them. The hard loss
//! normalizes multi-positive label vectors to the target distribution
//! `y / c`. Temperature 0 is the argmax sentinel: the teacher target
//! becomes one-hot (ties to the lowest index) and the student side uses the
//! plain softmax. There is no T^2 rescaling of the soft term; alpha alone
//! balances the mix.

mod cache;
mod train;

pub use cache::{score_teacher, TeacherLogitCache};
pub use train::{score_sets, train, Adam, EpochReport, TrainConfig, TrainData, TrainOutcome};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::metrics::MetricsError;
use crate::models::{Checkpoint, ModelError, StudentVariant};
use crate::tensor::{Tape, TensorError, TensorId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SoftLossKind {
    #[serde(rename = "ce")]
    CrossEntropy,
    #[serde(rename = "mse")]
    MeanSquaredError,
}

impl fmt::Display for SoftLossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SoftLossKind::CrossEntropy => "ce",
            SoftLossKind::MeanSquaredError => "mse",
        })
    }
}

/// The distillation objective: `alpha * SoftLoss + (1 - alpha) * HardLoss`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub alpha: f64,
    pub temperature: f64,
    pub soft_loss: SoftLossKind,
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), DistillError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(DistillError::Config {
                detail: format!("alpha {} outside [0,1]", self.alpha),
            });
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(DistillError::Config {
                detail: format!("temperature {} must be >= 0", self.temperature),
            });
        }
        Ok(())
    }
}

#[derive(Debug)]
pub enum DistillError {
    /// Non-finite logits or an invalid temperature at evaluation time.
    Numerics { detail: String },
    /// Teacher/student logit lengths disagree.
    Shape { teacher: usize, student: usize },
    /// All-zero label vector.
    Label { claim_id: String },
    /// alpha > 0 but no teacher logits available.
    Cache { detail: String },
    /// Claims, candidates and cached logits do not line up.
    Alignment { detail: String },
    /// Training hit a non-finite loss; the boxed checkpoint holds the last
    /// finite parameters.
    Divergence { epoch: usize, checkpoint: Box<Checkpoint> },
    Config { detail: String },
    Model(ModelError),
    Metrics(MetricsError),
}

impl fmt::Display for DistillError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistillError::Numerics { detail } => write!(f, "numerics: {detail}"),
            DistillError::Shape { teacher, student } => {
                write!(f, "logit length mismatch: teacher {teacher} vs student {student}")
            }
            DistillError::Label { claim_id } => {
                write!(f, "claim {claim_id}: label vector has no positives")
            }
            DistillError::Cache { detail } => write!(f, "teacher cache: {detail}"),
            DistillError::Alignment { detail } => write!(f, "alignment: {detail}"),
            DistillError::Divergence { epoch, .. } => {
                write!(f, "training diverged (non-finite loss) in epoch {epoch}")
            }
            DistillError::Config { detail } => write!(f, "config: {detail}"),
            DistillError::Model(e) => write!(f, "{e}"),
            DistillError::Metrics(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for DistillError {}

impl From<ModelError> for DistillError {
    fn from(e: ModelError) -> Self {
        DistillError::Model(e)
    }
}

impl From<TensorError> for DistillError {
    fn from(e: TensorError) -> Self {
        DistillError::Model(ModelError::Tensor(e))
    }
}

impl From<MetricsError> for DistillError {
    fn from(e: MetricsError) -> Self {
        DistillError::Metrics(e)
    }
}

/// Temperature softmax. T > 0 softens `exp(x/T)` stably; T = 0 is the
/// argmax sentinel returning a one-hot vector (ties to the lowest index).
pub fn temperature_softmax(logits: &[f64], temperature: f64) -> Result<Vec<f64>, DistillError> {
    if logits.is_empty() {
        return Err(DistillError::Numerics { detail: "empty logit vector".into() });
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(DistillError::Numerics { detail: "non-finite logits".into() });
    }
    if !temperature.is_finite() || temperature < 0.0 {
        return Err(DistillError::Numerics {
            detail: format!("temperature {temperature} must be >= 0"),
        });
    }
    if temperature == 0.0 {
        let mut best = 0usize;
        for (i, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = i;
            }
        }
        let mut out = vec![0.0; logits.len()];
        out[best] = 1.0;
        return Ok(out);
    }
    let scaled: Vec<f64> = logits.iter().map(|&v| v / temperature).collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scaled.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    Ok(out)
}

fn check_pair(teacher: &[f64], student: &[f64]) -> Result<(), DistillError> {
    if teacher.len() != student.len() {
        return Err(DistillError::Shape { teacher: teacher.len(), student: student.len() });
    }
    Ok(())
}

/// Student-side temperature: matches the teacher for T > 0; the T = 0
/// sentinel softens the student at T = 1 (only the teacher collapses).
fn student_temperature(temperature: f64) -> f64 {
    if temperature == 0.0 {
        1.0
    } else {
        temperature
    }
}

/// `-sum_i t'_i ln p_i` over temperature-softened teacher and student
/// distributions. Minimized (at the entropy of t') when p = t'.
pub fn soft_loss_ce(
    teacher_logits: &[f64],
    student_logits: &[f64],
    temperature: f64,
) -> Result<f64, DistillError> {
    check_pair(teacher_logits, student_logits)?;
    let target = temperature_softmax(teacher_logits, temperature)?;
    let p = temperature_softmax(student_logits, student_temperature(temperature))?;
    Ok(-target.iter().zip(&p).map(|(t, p)| t * p.ln()).sum::<f64>())
}

/// `sum_i (t'_i - p_i)^2` over the two softened distributions; zero iff they
/// coincide.
pub fn soft_loss_mse(
    teacher_logits: &[f64],
    student_logits: &[f64],
    temperature: f64,
) -> Result<f64, DistillError> {
    check_pair(teacher_logits, student_logits)?;
    let target = temperature_softmax(teacher_logits, temperature)?;
    let p = temperature_softmax(student_logits, student_temperature(temperature))?;
    Ok(target.iter().zip(&p).map(|(t, p)| (t - p) * (t - p)).sum())
}

/// `-sum_i (y_i / c) ln softmax(s)_i`: listwise cross-entropy against the
/// normalized annotation distribution. Reduces to standard cross-entropy
/// when the claim has a single positive.
pub fn hard_loss(labels: &[u8], student_logits: &[f64]) -> Result<f64, DistillError> {
    if labels.len() != student_logits.len() {
        return Err(DistillError::Shape { teacher: labels.len(), student: student_logits.len() });
    }
    let c: u32 = labels.iter().map(|&l| u32::from(l)).sum();
    if c == 0 {
        return Err(DistillError::Label { claim_id: String::new() });
    }
    let p = temperature_softmax(student_logits, 1.0)?;
    Ok(-labels
        .iter()
        .zip(&p)
        .map(|(&y, p)| f64::from(y) / f64::from(c) * p.ln())
        .sum::<f64>())
}

/// `alpha * SoftLoss + (1 - alpha) * HardLoss`. At alpha = 0 the teacher
/// logits are never read; at alpha = 1 the labels are never read.
pub fn combined_loss(
    config: &LossConfig,
    labels: &[u8],
    teacher_logits: Option<&[f64]>,
    student_logits: &[f64],
) -> Result<f64, DistillError> {
    config.validate()?;
    if config.alpha == 0.0 {
        return hard_loss(labels, student_logits);
    }
    let teacher = teacher_logits.ok_or_else(|| DistillError::Cache {
        detail: format!("alpha {} > 0 requires teacher logits", config.alpha),
    })?;
    let soft = match config.soft_loss {
        SoftLossKind::CrossEntropy => soft_loss_ce(teacher, student_logits, config.temperature)?,
        SoftLossKind::MeanSquaredError => {
            soft_loss_mse(teacher, student_logits, config.temperature)?
        }
    };
    if config.alpha == 1.0 {
        return Ok(soft);
    }
    let hard = hard_loss(labels, student_logits)?;
    Ok(config.alpha * soft + (1.0 - config.alpha) * hard)
}

/// Tape form of [`combined_loss`] for training: the student logits stay
/// differentiable, teacher targets and labels enter as constants.
pub fn combined_loss_on(
    tape: &mut Tape,
    config: &LossConfig,
    labels: &[u8],
    teacher_logits: Option<&[f64]>,
    student_logits: TensorId,
) -> Result<TensorId, DistillError> {
    config.validate()?;
    let hard = |tape: &mut Tape, student: TensorId| -> Result<TensorId, DistillError> {
        let c: u32 = labels.iter().map(|&l| u32::from(l)).sum();
        if c == 0 {
            return Err(DistillError::Label { claim_id: String::new() });
        }
        let targets: Vec<f64> =
            labels.iter().map(|&y| f64::from(y) / f64::from(c)).collect();
        let n = targets.len();
        let p = tape.softmax_rows(student)?;
        let lp = tape.log(p);
        let w = tape.leaf(targets, &[n])?;
        let picked = tape.mul(lp, w)?;
        let sum = tape.sum_all(picked);
        Ok(tape.scale(sum, -1.0))
    };
    if config.alpha == 0.0 {
        return hard(tape, student_logits);
    }
    let teacher = teacher_logits.ok_or_else(|| DistillError::Cache {
        detail: format!("alpha {} > 0 requires teacher logits", config.alpha),
    })?;
    if teacher.len() != tape.value(student_logits).len() {
        return Err(DistillError::Shape {
            teacher: teacher.len(),
            student: tape.value(student_logits).len(),
        });
    }
    let target = temperature_softmax(teacher, config.temperature)?;
    let n = target.len();
    let t_student = student_temperature(config.temperature);
    let scaled = tape.scale(student_logits, 1.0 / t_student);
    let p = tape.softmax_rows(scaled)?;
    let soft = match config.soft_loss {
        SoftLossKind::CrossEntropy => {
            let lp = tape.log(p);
            let w = tape.leaf(target, &[n])?;
            let picked = tape.mul(lp, w)?;
            let sum = tape.sum_all(picked);
            tape.scale(sum, -1.0)
        }
        SoftLossKind::MeanSquaredError => {
            let t = tape.leaf(target, &[n])?;
            let d = tape.sub(t, p)?;
            let sq = tape.mul(d, d)?;
            tape.sum_all(sq)
        }
    };
    if config.alpha == 1.0 {
        return Ok(soft);
    }
    let hard_part = hard(tape, student_logits)?;
    let soft_scaled = tape.scale(soft, config.alpha);
    let hard_scaled = tape.scale(hard_part, 1.0 - config.alpha);
    Ok(tape.add(soft_scaled, hard_scaled)?)
}

/// On-disk experiment settings; command-line flags override file values,
/// which override these defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub alpha: f64,
    pub temperature: f64,
    pub soft_loss: SoftLossKind,
    pub student: StudentVariant,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub data_fraction: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            alpha: 0.0,
            temperature: 1.0,
            soft_loss: SoftLossKind::MeanSquaredError,
            student: StudentVariant::Lstm,
            epochs: 3,
            lr: 1e-3,
            batch_size: 8,
            seed: 0,
            data_fraction: 1.0,
        }
    }
}

impl ExperimentConfig {
    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            alpha: self.alpha,
            temperature: self.temperature,
            soft_loss: self.soft_loss,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            data_fraction: self.data_fraction,
            ..TrainConfig::default()
        }
    }
}

#[cfg(test)]
mod tests;
