//! Retention filter: keep pairs the model answers correctly on both prompts.

use serde::{Deserialize, Serialize};

use super::sample::ContrastPair;
use super::templates::Depth;
use crate::error::Result;
use crate::model::HookedModel;
use crate::scalar::Scalar as _;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthRetention {
    pub depth: Depth,
    pub total: usize,
    pub retained: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionReport {
    pub model_id: String,
    pub total: usize,
    pub retained: usize,
    pub rate: f64,
    pub by_depth: Vec<DepthRetention>,
}

fn rate(retained: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        retained as f64 / total as f64
    }
}

/// Restricted argmax over the two answer tokens; ties count as wrong.
pub fn predicts<M: HookedModel + ?Sized>(model: &M, prompt: &str, answer: bool, pair: &ContrastPair) -> Result<bool> {
    let answers = model.answer_tokens(pair.value_style)?;
    let (logits, _) = model.run_with_capture(prompt, &[])?;
    let right = logits[answers.id_for(answer) as usize];
    let wrong = logits[answers.id_for(!answer) as usize];
    Ok(right.f64() > wrong.f64())
}

pub fn filter_by_model<M: HookedModel + ?Sized>(
    pairs: &[ContrastPair],
    model: &M,
) -> Result<(Vec<ContrastPair>, RetentionReport)> {
    let mut retained = Vec::new();
    for p in pairs {
        let ok = (|| -> Result<bool> {
            Ok(predicts(model, &p.prompt_clean, p.answer_clean, p)?
                && predicts(model, &p.prompt_corrupt, p.answer_corrupt, p)?)
        })()
        .map_err(|e| e.for_pair(&p.id))?;
        if ok {
            retained.push(p.clone());
        }
    }
    let by_depth = Depth::ALL
        .iter()
        .map(|&d| {
            let total = pairs.iter().filter(|p| p.depth == d).count();
            let kept = retained.iter().filter(|p| p.depth == d).count();
            DepthRetention {
                depth: d,
                total,
                retained: kept,
                rate: rate(kept, total),
            }
        })
        .collect();
    let report = RetentionReport {
        model_id: model.spec().model_id.clone(),
        total: pairs.len(),
        retained: retained.len(),
        rate: rate(retained.len(), pairs.len()),
        by_depth,
    };
    Ok((retained, report))
}
