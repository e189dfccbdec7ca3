use crate::{Slot, StudyKey, StudyRecord};
use serde::{Deserialize, Serialize};

pub const ORIENTATION: &str = "1 = strongly prefer method_a, 3 = equivalent, 5 = strongly prefer method_b";

/// Per-criterion tallies over the five Likert categories, unblinded and
/// oriented so that low categories favour `method_a`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub study_id: String,
    pub method_a: String,
    pub method_b: String,
    pub orientation: String,
    pub n_responses: usize,
    pub sharpness: [u64; 5],
    pub noise: [u64; 5],
    pub mean_review_ms: Option<f64>,
}

pub fn tally(key: &StudyKey, records: &[StudyRecord]) -> Summary {
    let mut sharpness = [0u64; 5];
    let mut noise = [0u64; 5];
    let mut review = 0u64;
    for r in records {
        // Raw scores say how much the left image wins; flip when the left
        // image came from method_b.
        let left_is_a = key.entry(&r.pair_id).is_some_and(|e| {
            let label = match r.left {
                Slot::A => &e.a,
                Slot::B => &e.b,
            };
            *label == key.method_a
        });
        let orient = |s: u8| if left_is_a { s } else { 6 - s };
        sharpness[orient(r.sharpness) as usize - 1] += 1;
        noise[orient(r.noise) as usize - 1] += 1;
        review += r.submitted_at - r.served_at;
    }
    Summary {
        study_id: key.study_id.clone(),
        method_a: key.method_a.clone(),
        method_b: key.method_b.clone(),
        orientation: ORIENTATION.to_string(),
        n_responses: records.len(),
        sharpness,
        noise,
        mean_review_ms: (!records.is_empty()).then(|| review as f64 / records.len() as f64),
    }
}
