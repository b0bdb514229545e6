//! The four-term distillation objective.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{LossKind, Real, Tape, Var};

/// Weights of the imitation, guidance and student terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 1.0,
            lambda2: 0.01,
            lambda3: 1.0,
        }
    }
}

/// Forecasting task family, which fixes the similarity used per term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    LongTermEtt,
    LongTermOther,
    ShortTermM4,
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "long_term_ett" => Ok(Task::LongTermEtt),
            "long_term_other" => Ok(Task::LongTermOther),
            "short_term_m4" => Ok(Task::ShortTermM4),
            _ => Err(Error::config(format!(
                "unknown task `{s}` (expected long_term_ett, long_term_other, short_term_m4)"
            ))),
        }
    }
}

impl Task {
    /// ETT-named datasets use the ETT schedule, everything else the
    /// generic long-term one.
    pub fn for_dataset(name: &str) -> Task {
        if name.to_ascii_lowercase().starts_with("ett") {
            Task::LongTermEtt
        } else {
            Task::LongTermOther
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossSchedule {
    pub teach: LossKind,
    pub stud: LossKind,
    pub imit: LossKind,
    pub guide: LossKind,
}

pub fn loss_schedule_for_task(task: Task) -> LossSchedule {
    use LossKind::*;
    match task {
        Task::LongTermEtt => LossSchedule { teach: L1, stud: L1, imit: L1, guide: L1 },
        Task::LongTermOther => LossSchedule { teach: SmoothL1, stud: SmoothL1, imit: SmoothL1, guide: SmoothL1 },
        Task::ShortTermM4 => LossSchedule { teach: Smape, stud: Smape, imit: Mase, guide: SmoothL1 },
    }
}

/// Per-batch loss components and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DistillLossReport {
    pub l_teach: f64,
    pub l_imit: f64,
    pub l_guide: f64,
    pub l_stud: f64,
    pub total: f64,
}

impl DistillLossReport {
    /// `|total - (teach + l1 imit + l2 guide + l3 stud)|`.
    pub fn decomposition_error(&self, w: &LossWeights) -> f64 {
        (self.total - (self.l_teach + w.lambda1 * self.l_imit + w.lambda2 * self.l_guide + w.lambda3 * self.l_stud)).abs()
    }

    /// Component-wise `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Self {
        DistillLossReport {
            l_teach: a * self.l_teach + b * other.l_teach,
            l_imit: a * self.l_imit + b * other.l_imit,
            l_guide: a * self.l_guide + b * other.l_guide,
            l_stud: a * self.l_stud + b * other.l_stud,
            total: a * self.total + b * other.total,
        }
    }
}

/// Mean-reduced similarity between equally shaped tensors. `scale` holds
/// the per-sample denominators MASE needs.
pub fn sim<F: Real>(tape: &mut Tape<'_, F>, a: Var, b: Var, kind: LossKind, scale: Option<&[F]>) -> Result<Var> {
    tape.loss(a, b, kind, scale)
}

/// `sum_k omega_k sim(psi_S(Z_k), psi_T(E_k))` over already projected
/// `(student, teacher, omega)` triples; an empty list gives zero.
pub fn guidance_loss<F: Real>(tape: &mut Tape<'_, F>, pairs: &[(Var, Var, f64)], kind: LossKind) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for &(s, t, w) in pairs {
        let l = sim(tape, s, t, kind, None)?;
        let l = tape.scale(l, F::lit(w));
        acc = Some(match acc {
            Some(a) => tape.add(a, l)?,
            None => l,
        });
    }
    Ok(acc.unwrap_or_else(|| tape.constant(crate::numerics::Tensor::scalar(F::zero()))))
}

/// Everything [`total_loss`] needs besides the tape.
#[derive(Debug, Clone, Copy)]
pub struct LossInputs<'a, F> {
    pub teacher_pred: Var,
    pub student_pred: Var,
    pub target: Var,
    pub guidance: &'a [(Var, Var, f64)],
    /// Per-sample MASE denominators, used by MASE terms only.
    pub mase_scale: Option<&'a [F]>,
}

/// Build the weighted objective on the tape. With `detach_teacher` the
/// imitation term sees the teacher prediction as a constant.
pub fn total_loss<F: Real>(
    tape: &mut Tape<'_, F>,
    inp: LossInputs<'_, F>,
    weights: &LossWeights,
    schedule: &LossSchedule,
    detach_teacher: bool,
) -> Result<(Var, DistillLossReport)> {
    let scale_for = |k: LossKind| if k == LossKind::Mase { inp.mase_scale } else { None };
    let teach = sim(tape, inp.teacher_pred, inp.target, schedule.teach, scale_for(schedule.teach))?;
    let stud = sim(tape, inp.student_pred, inp.target, schedule.stud, scale_for(schedule.stud))?;
    let reference = if detach_teacher { tape.detach(inp.teacher_pred) } else { inp.teacher_pred };
    let imit = sim(tape, inp.student_pred, reference, schedule.imit, scale_for(schedule.imit))?;
    let guide = guidance_loss(tape, inp.guidance, schedule.guide)?;

    let a = tape.scale(imit, F::lit(weights.lambda1));
    let b = tape.scale(guide, F::lit(weights.lambda2));
    let c = tape.scale(stud, F::lit(weights.lambda3));
    let t = tape.add(teach, a)?;
    let t = tape.add(t, b)?;
    let total = tape.add(t, c)?;
    let v = |tape: &Tape<'_, F>, x: Var| tape.value(x).item().as_f64();
    let report = DistillLossReport {
        l_teach: v(tape, teach),
        l_imit: v(tape, imit),
        l_guide: v(tape, guide),
        l_stud: v(tape, stud),
        total: v(tape, total),
    };
    Ok((total, report))
}

/// Per-sample seasonal-naive MAE of `[B, L, C]` inputs at lag `m`,
/// floored at `1e-8` so the imitation MASE stays finite.
pub fn mase_scales<F: Real>(x: &crate::numerics::Tensor<F>, m: usize) -> Result<Vec<F>> {
    let s = x.shape();
    if s.len() != 3 || m == 0 || s[1] <= m {
        return Err(Error::config(format!("MASE scale needs lookback > m (lookback {}, m {m})", s.get(1).unwrap_or(&0))));
    }
    let (b, l, c) = (s[0], s[1], s[2]);
    let d = x.data();
    Ok((0..b)
        .map(|i| {
            let mut acc = 0.0;
            for t in m..l {
                for ch in 0..c {
                    acc += (d[(i * l + t) * c + ch].as_f64() - d[(i * l + t - m) * c + ch].as_f64()).abs();
                }
            }
            F::lit((acc / ((l - m) * c) as f64).max(1e-8))
        })
        .collect())
}
