use serde::{Deserialize, Serialize};

use super::{PromptSource, ResponseSource, WorldError, WorldSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftKind {
    Prompt,
    Response,
    /// Prompts and responses together.
    Mixture,
}

/// Moves a world towards alternative generators by `strength`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftSpec {
    pub kind: ShiftKind,
    pub strength: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompts: Option<PromptSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub responses: Option<ResponseSource>,
}

fn mix<T: Clone>(base: &T, alt: &T, strength: f64, wrap: impl Fn(Box<T>, Box<T>, f64) -> T) -> T {
    if strength == 1.0 {
        alt.clone()
    } else {
        wrap(Box::new(base.clone()), Box::new(alt.clone()), strength)
    }
}

/// The shifted world. Only generators move; the true reward, the labeling
/// mode, the architecture and the sampling seed are carried over. Strength
/// 0 returns `base` unchanged.
pub fn apply_shift(base: &WorldSpec, shift: &ShiftSpec) -> Result<WorldSpec, WorldError> {
    if !(0.0..=1.0).contains(&shift.strength) {
        return Err(WorldError::InvalidSpec(format!(
            "shift strength {} outside [0, 1]",
            shift.strength
        )));
    }
    let wants_prompts = matches!(shift.kind, ShiftKind::Prompt | ShiftKind::Mixture);
    let wants_responses = matches!(shift.kind, ShiftKind::Response | ShiftKind::Mixture);
    let alt_prompts = match (&shift.prompts, wants_prompts) {
        (Some(p), true) => Some(p),
        (None, true) => return Err(WorldError::InvalidSpec("prompt shift needs alternative prompts".into())),
        (Some(_), false) => {
            return Err(WorldError::InvalidSpec(
                "response shift must not carry alternative prompts".into(),
            ))
        }
        (None, false) => None,
    };
    let alt_responses = match (&shift.responses, wants_responses) {
        (Some(r), true) => Some(r),
        (None, true) => return Err(WorldError::InvalidSpec("response shift needs alternative responses".into())),
        (Some(_), false) => {
            return Err(WorldError::InvalidSpec(
                "prompt shift must not carry alternative responses".into(),
            ))
        }
        (None, false) => None,
    };
    let mut out = base.clone();
    if shift.strength == 0.0 {
        return Ok(out);
    }
    if let Some(alt) = alt_prompts {
        out.prompts = mix(&base.prompts, alt, shift.strength, |base, alt, weight| PromptSource::Mixture {
            base,
            alt,
            weight,
        });
    }
    if let Some(alt) = alt_responses {
        out.responses = mix(&base.responses, alt, shift.strength, |base, alt, weight| {
            ResponseSource::Mixture { base, alt, weight }
        });
    }
    Ok(out)
}
