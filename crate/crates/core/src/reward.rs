//! Response parsing and the multi-objective reward
//! `r = w_task * r_task + w_spatial * r_spatial + w_fmt * r_fmt`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bbox_reward, iou, Box2D, BoxVariant};
use crate::text_metrics::{open_ended_reward, tokenize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    SingleChoice,
    MultiChoice,
    Counting,
    #[serde(rename = "bbox")]
    BBox,
    Boundary,
    OpenEnded,
    OrdinalShortAnswer,
    TripletShortAnswer,
}

impl TaskKind {
    pub const ALL: [TaskKind; 8] = [
        TaskKind::SingleChoice,
        TaskKind::MultiChoice,
        TaskKind::Counting,
        TaskKind::BBox,
        TaskKind::Boundary,
        TaskKind::OpenEnded,
        TaskKind::OrdinalShortAnswer,
        TaskKind::TripletShortAnswer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::SingleChoice => "single_choice",
            TaskKind::MultiChoice => "multi_choice",
            TaskKind::Counting => "counting",
            TaskKind::BBox => "bbox",
            TaskKind::Boundary => "boundary",
            TaskKind::OpenEnded => "open_ended",
            TaskKind::OrdinalShortAnswer => "ordinal_short_answer",
            TaskKind::TripletShortAnswer => "triplet_short_answer",
        }
    }

    /// Kinds that carry a spatial sub-reward.
    pub fn is_spatial(self) -> bool {
        matches!(self, TaskKind::BBox | TaskKind::Boundary)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown task kind `{s}`")))
    }
}

/// The four cognitive tiers used as the coarse scaling granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CognitiveDomain {
    #[serde(alias = "SP")]
    SpatialPerception,
    #[serde(alias = "OU")]
    ObjectUnderstanding,
    #[serde(alias = "SU")]
    SceneUnderstanding,
    #[serde(alias = "SR")]
    SceneReasoning,
}

impl CognitiveDomain {
    pub const ALL: [CognitiveDomain; 4] = [
        CognitiveDomain::SpatialPerception,
        CognitiveDomain::ObjectUnderstanding,
        CognitiveDomain::SceneUnderstanding,
        CognitiveDomain::SceneReasoning,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CognitiveDomain::SpatialPerception => "spatial_perception",
            CognitiveDomain::ObjectUnderstanding => "object_understanding",
            CognitiveDomain::SceneUnderstanding => "scene_understanding",
            CognitiveDomain::SceneReasoning => "scene_reasoning",
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            CognitiveDomain::SpatialPerception => "SP",
            CognitiveDomain::ObjectUnderstanding => "OU",
            CognitiveDomain::SceneUnderstanding => "SU",
            CognitiveDomain::SceneReasoning => "SR",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for CognitiveDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CognitiveDomain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CognitiveDomain::ALL
            .into_iter()
            .find(|d| d.as_str() == s || d.code() == s)
            .ok_or_else(|| Error::invalid(format!("unknown domain `{s}`")))
    }
}

/// Normalized (entity, attribute, value) fact.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[String; 3]", into = "[String; 3]")]
pub struct Triplet {
    pub entity: String,
    pub attribute: String,
    pub value: String,
}

impl Triplet {
    /// Builds a triplet with each field lowercased and reduced to its
    /// space-joined tokens.
    pub fn new(entity: &str, attribute: &str, value: &str) -> Self {
        let norm = |s: &str| tokenize(s).tokens().join(" ");
        Self {
            entity: norm(entity),
            attribute: norm(attribute),
            value: norm(value),
        }
    }

    fn is_complete(&self) -> bool {
        !self.entity.is_empty() && !self.attribute.is_empty() && !self.value.is_empty()
    }
}

impl From<[String; 3]> for Triplet {
    fn from([e, a, v]: [String; 3]) -> Self {
        Triplet::new(&e, &a, &v)
    }
}

impl From<Triplet> for [String; 3] {
    fn from(t: Triplet) -> Self {
        [t.entity, t.attribute, t.value]
    }
}

/// Reference answer. The tag must agree with the record's [`TaskKind`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum GroundTruth {
    Choice {
        answer: char,
    },
    Choices {
        answers: BTreeSet<char>,
    },
    Count {
        value: i64,
    },
    Box {
        value: Box2D,
    },
    Text {
        value: String,
    },
    /// `index` into an ordered stage scale (e.g. growth stages).
    Ordinal {
        index: usize,
        scale: Vec<String>,
    },
    Triplets {
        triplets: Vec<Triplet>,
    },
}

impl GroundTruth {
    pub fn tag(&self) -> &'static str {
        match self {
            GroundTruth::Choice { .. } => "choice",
            GroundTruth::Choices { .. } => "choices",
            GroundTruth::Count { .. } => "count",
            GroundTruth::Box { .. } => "box",
            GroundTruth::Text { .. } => "text",
            GroundTruth::Ordinal { .. } => "ordinal",
            GroundTruth::Triplets { .. } => "triplets",
        }
    }

    pub fn matches_kind(&self, kind: TaskKind) -> bool {
        matches!(
            (self, kind),
            (GroundTruth::Choice { .. }, TaskKind::SingleChoice)
                | (GroundTruth::Choices { .. }, TaskKind::MultiChoice)
                | (GroundTruth::Count { .. }, TaskKind::Counting)
                | (GroundTruth::Box { .. }, TaskKind::BBox | TaskKind::Boundary)
                | (GroundTruth::Text { .. }, TaskKind::OpenEnded)
                | (GroundTruth::Ordinal { .. }, TaskKind::OrdinalShortAnswer)
                | (GroundTruth::Triplets { .. }, TaskKind::TripletShortAnswer)
        )
    }

    /// Checks the tag against `kind` plus the per-tag invariants.
    pub fn validate(&self, kind: TaskKind) -> Result<()> {
        if !self.matches_kind(kind) {
            return Err(Error::invalid(format!(
                "ground truth of type `{}` does not fit task kind `{kind}`",
                self.tag()
            )));
        }
        match self {
            GroundTruth::Choice { answer } if !answer.is_ascii_alphabetic() => Err(Error::invalid(
                format!("choice `{answer}` is not an option letter"),
            )),
            GroundTruth::Choices { answers } if answers.is_empty() => {
                Err(Error::invalid("multi-choice ground truth is empty"))
            }
            GroundTruth::Choices { answers } if !answers.iter().all(char::is_ascii_alphabetic) => {
                Err(Error::invalid(
                    "multi-choice answers must be option letters",
                ))
            }
            GroundTruth::Ordinal { index, scale } if scale.len() < 2 || *index >= scale.len() => {
                Err(Error::invalid(format!(
                    "ordinal index {index} invalid for a scale of {} stages",
                    scale.len()
                )))
            }
            GroundTruth::Triplets { triplets } if triplets.is_empty() => {
                Err(Error::invalid("triplet ground truth is empty"))
            }
            _ => Ok(()),
        }
    }
}

/// Extracted answer. Box corners are kept raw so that out-of-range
/// predictions can still be reported and scored as format failures.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Choice(char),
    Choices(BTreeSet<char>),
    Count(i64),
    Box([f64; 4]),
    Text(String),
    Triplets(Vec<Triplet>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedResponse {
    pub raw: String,
    pub payload: Option<Payload>,
}

impl ParsedResponse {
    pub fn parse_ok(&self) -> bool {
        self.payload.is_some()
    }
}

fn is_option_letter(c: char) -> bool {
    matches!(c.to_ascii_uppercase(), 'A'..='J')
}

/// Upper case "I" followed by an apostrophe or by a lower case word, as in
/// "I think" or "I'm".
fn is_pronoun(chars: &[char], i: usize) -> bool {
    chars[i] == 'I'
        && match chars.get(i + 1) {
            Some('\'' | '\u{2019}') => true,
            Some(' ') => chars.get(i + 2).is_some_and(|c| c.is_lowercase()),
            _ => false,
        }
}

/// Option letters A-J that are not glued to other alphanumerics. Upper
/// case letters win; lower case ones are used only when no upper case
/// letter is present, so articles like "a" do not shadow a real answer.
fn option_letters(text: &str) -> Vec<char> {
    let chars: Vec<char> = text.chars().collect();
    let standalone = |i: usize| {
        let before = i == 0 || !chars[i - 1].is_alphanumeric();
        let after = i + 1 == chars.len() || !chars[i + 1].is_alphanumeric();
        is_option_letter(chars[i]) && before && after && !is_pronoun(&chars, i)
    };
    let found: Vec<char> = (0..chars.len())
        .filter(|&i| standalone(i))
        .map(|i| chars[i])
        .collect();
    let upper: Vec<char> = found
        .iter()
        .copied()
        .filter(char::is_ascii_uppercase)
        .collect();
    if upper.is_empty() {
        found.iter().map(char::to_ascii_uppercase).collect()
    } else {
        upper
    }
}

fn integer_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?:^|[^0-9A-Za-z.])(-?)(\d+)").unwrap())
}

fn box_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        let num = r"\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*";
        Regex::new(&format!(r"[\[(]{num},{num},{num},{num}[\])]")).unwrap()
    })
}

fn triplet_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\(([^(),]+),([^(),]+),([^(),]+)\)").unwrap())
}

fn parse_integer(text: &str) -> Option<i64> {
    let caps = integer_re().captures(text)?;
    let magnitude: i64 = caps[2].parse().ok()?;
    Some(if caps[1].is_empty() {
        magnitude
    } else {
        -magnitude
    })
}

fn parse_box(text: &str) -> Option<[f64; 4]> {
    let caps = box_re().captures(text)?;
    let mut out = [0.0; 4];
    for (slot, i) in out.iter_mut().zip(1..=4) {
        *slot = caps[i].parse().ok()?;
    }
    Some(out)
}

fn parse_triplets(text: &str) -> Vec<Triplet> {
    triplet_re()
        .captures_iter(text)
        .map(|c| Triplet::new(&c[1], &c[2], &c[3]))
        .filter(Triplet::is_complete)
        .collect()
}

/// Extracts the answer payload for `kind`. Failure is reported through
/// an absent payload, never as an error.
pub fn parse_response(text: &str, kind: TaskKind) -> ParsedResponse {
    let payload = match kind {
        TaskKind::SingleChoice => option_letters(text).first().copied().map(Payload::Choice),
        TaskKind::MultiChoice => {
            let set: BTreeSet<char> = option_letters(text).into_iter().collect();
            (!set.is_empty()).then_some(Payload::Choices(set))
        }
        TaskKind::Counting => parse_integer(text).map(Payload::Count),
        TaskKind::BBox | TaskKind::Boundary => parse_box(text).map(Payload::Box),
        TaskKind::OpenEnded | TaskKind::OrdinalShortAnswer => {
            let trimmed = text.trim();
            (!tokenize(trimmed).is_empty()).then(|| Payload::Text(trimmed.to_string()))
        }
        TaskKind::TripletShortAnswer => {
            let triplets = parse_triplets(text);
            (!triplets.is_empty()).then_some(Payload::Triplets(triplets))
        }
    };
    ParsedResponse {
        raw: text.to_string(),
        payload,
    }
}

pub fn score_single_choice(pred: char, gt: char) -> f64 {
    if pred.eq_ignore_ascii_case(&gt) {
        1.0
    } else {
        0.0
    }
}

/// `max(0, 1 - |pred - gt| / max(|gt|, 1))`.
pub fn score_counting(pred: i64, gt: i64) -> f64 {
    let err = (pred as f64 - gt as f64).abs();
    let scale = (gt.unsigned_abs() as f64).max(1.0);
    (1.0 - err / scale).max(0.0)
}

/// Geometric mean of set IoU and recall.
pub fn score_multi_choice(pred: &BTreeSet<char>, gt: &BTreeSet<char>) -> Result<f64> {
    if gt.is_empty() {
        return Err(Error::invalid("multi-choice ground truth is empty"));
    }
    let up =
        |s: &BTreeSet<char>| -> BTreeSet<char> { s.iter().map(char::to_ascii_uppercase).collect() };
    let (pred, gt) = (up(pred), up(gt));
    if pred.is_empty() {
        return Ok(0.0);
    }
    let inter = pred.intersection(&gt).count() as f64;
    let union = pred.union(&gt).count() as f64;
    Ok(((inter / union) * (inter / gt.len() as f64)).sqrt())
}

/// `1 - |pred - gt| / (K - 1)` on a K-stage scale.
pub fn score_ordinal(pred_idx: usize, gt_idx: usize, scale_len: usize) -> Result<f64> {
    if scale_len < 2 {
        return Err(Error::invalid(format!(
            "ordinal scale needs at least 2 stages, got {scale_len}"
        )));
    }
    if pred_idx >= scale_len || gt_idx >= scale_len {
        return Err(Error::invalid(format!(
            "ordinal index out of range: pred {pred_idx}, gt {gt_idx}, scale {scale_len}"
        )));
    }
    Ok(1.0 - pred_idx.abs_diff(gt_idx) as f64 / (scale_len - 1) as f64)
}

/// Locates a stage name in free text. The earliest mention wins; between
/// stages mentioned at the same position the longer label wins.
pub fn resolve_stage(text: &str, scale: &[String]) -> Option<usize> {
    let words = tokenize(text);
    let words = words.tokens();
    let mut best: Option<(usize, usize, usize)> = None; // (position, len, idx)
    for (idx, stage) in scale.iter().enumerate() {
        let label = tokenize(stage);
        let label = label.tokens();
        if label.is_empty() || label.len() > words.len() {
            continue;
        }
        if let Some(pos) = words.windows(label.len()).position(|w| w == label) {
            let better = match best {
                None => true,
                Some((bp, blen, _)) => pos < bp || (pos == bp && label.len() > blen),
            };
            if better {
                best = Some((pos, label.len(), idx));
            }
        }
    }
    best.map(|(_, _, idx)| idx)
}

/// Exact-match F1 over triplet sets.
pub fn score_triplets(pred: &[Triplet], gt: &[Triplet]) -> Result<f64> {
    let gt: BTreeSet<&Triplet> = gt.iter().collect();
    if gt.is_empty() {
        return Err(Error::invalid("triplet ground truth is empty"));
    }
    let pred: BTreeSet<&Triplet> = pred.iter().collect();
    if pred.is_empty() {
        return Ok(0.0);
    }
    let hits = pred.intersection(&gt).count() as f64;
    Ok(2.0 * hits / (pred.len() + gt.len()) as f64)
}

/// 1 when the response parsed and its payload is well formed for `kind`.
pub fn score_format(resp: &ParsedResponse, kind: TaskKind) -> f64 {
    let ok = match (&resp.payload, kind) {
        (Some(Payload::Choice(c)), TaskKind::SingleChoice) => is_option_letter(*c),
        (Some(Payload::Choices(s)), TaskKind::MultiChoice) => !s.is_empty(),
        (Some(Payload::Count(n)), TaskKind::Counting) => *n >= 0,
        (Some(Payload::Box(c)), TaskKind::BBox | TaskKind::Boundary) => Box2D::try_from(*c).is_ok(),
        (Some(Payload::Text(t)), TaskKind::OpenEnded | TaskKind::OrdinalShortAnswer) => {
            !tokenize(t).is_empty()
        }
        (Some(Payload::Triplets(t)), TaskKind::TripletShortAnswer) => !t.is_empty(),
        _ => false,
    };
    if ok {
        1.0
    } else {
        0.0
    }
}

fn predicted_box(resp: &ParsedResponse) -> Option<Box2D> {
    match resp.payload {
        Some(Payload::Box(c)) => Box2D::try_from(c).ok(),
        _ => None,
    }
}

/// IoU against the reference region for box kinds; 0 for everything else.
pub fn score_spatial(resp: &ParsedResponse, gt: &GroundTruth, kind: TaskKind) -> f64 {
    if !kind.is_spatial() {
        return 0.0;
    }
    match (predicted_box(resp), gt) {
        (Some(pred), GroundTruth::Box { value }) => iou(&pred, value),
        _ => 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardWeights {
    pub task: f64,
    pub spatial: f64,
    pub format: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            task: 0.8,
            spatial: 0.1,
            format: 0.1,
        }
    }
}

impl RewardWeights {
    pub fn new(task: f64, spatial: f64, format: f64) -> Result<Self> {
        let w = Self {
            task,
            spatial,
            format,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("task", self.task),
            ("spatial", self.spatial),
            ("format", self.format),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!(
                    "{name} weight must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

impl FromStr for RewardWeights {
    type Err = Error;

    /// Parses `"task,spatial,format"`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::invalid(format!("bad weight `{}`", p.trim())))
            })
            .collect::<Result<_>>()?;
        match parts.as_slice() {
            [t, sp, f] => RewardWeights::new(*t, *sp, *f),
            _ => Err(Error::invalid(format!(
                "expected three comma-separated weights, got `{s}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub weights: RewardWeights,
    /// Scoring rule for `bbox` tasks.
    pub bbox_variant: BoxVariant,
    /// Scoring rule for `boundary` tasks.
    pub boundary_variant: BoxVariant,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            weights: RewardWeights::default(),
            bbox_variant: BoxVariant::Bonus,
            boundary_variant: BoxVariant::Plain,
        }
    }
}

impl RewardConfig {
    pub fn with_weights(weights: RewardWeights) -> Self {
        Self {
            weights,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_task: f64,
    pub r_spatial: f64,
    pub r_fmt: f64,
    pub r_total: f64,
}

pub fn combine(r_task: f64, r_spatial: f64, r_fmt: f64, w: &RewardWeights) -> Result<f64> {
    w.validate()?;
    Ok(w.task * r_task + w.spatial * r_spatial + w.format * r_fmt)
}

fn score_task(
    resp: &ParsedResponse,
    gt: &GroundTruth,
    kind: TaskKind,
    cfg: &RewardConfig,
) -> Result<f64> {
    let Some(payload) = &resp.payload else {
        return Ok(0.0);
    };
    Ok(match (payload, gt) {
        (Payload::Choice(p), GroundTruth::Choice { answer }) => score_single_choice(*p, *answer),
        (Payload::Choices(p), GroundTruth::Choices { answers }) => score_multi_choice(p, answers)?,
        (Payload::Count(p), GroundTruth::Count { value }) => score_counting(*p, *value),
        (Payload::Box(c), GroundTruth::Box { value }) => {
            let variant = if kind == TaskKind::BBox {
                cfg.bbox_variant
            } else {
                cfg.boundary_variant
            };
            Box2D::try_from(*c)
                .map(|pred| bbox_reward(&pred, value, variant))
                .unwrap_or(0.0)
        }
        (Payload::Text(t), GroundTruth::Text { value }) => open_ended_reward(t, value),
        (Payload::Text(t), GroundTruth::Ordinal { index, scale }) => {
            match resolve_stage(t, scale) {
                Some(pred) => score_ordinal(pred, *index, scale.len())?,
                None => 0.0,
            }
        }
        (Payload::Triplets(p), GroundTruth::Triplets { triplets }) => score_triplets(p, triplets)?,
        _ => 0.0,
    })
}

/// Parses `text` as an answer to a `kind` task and scores every component.
pub fn score_rollout(
    text: &str,
    gt: &GroundTruth,
    kind: TaskKind,
    cfg: &RewardConfig,
) -> Result<RewardBreakdown> {
    gt.validate(kind)?;
    let resp = parse_response(text, kind);
    let r_task = score_task(&resp, gt, kind, cfg)?;
    let r_spatial = score_spatial(&resp, gt, kind);
    let r_fmt = score_format(&resp, kind);
    let r_total = combine(r_task, r_spatial, r_fmt, &cfg.weights)?;
    Ok(RewardBreakdown {
        r_task,
        r_spatial,
        r_fmt,
        r_total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn letters(s: &str) -> BTreeSet<char> {
        s.chars().collect()
    }

    fn bx(c: [f64; 4]) -> GroundTruth {
        GroundTruth::Box {
            value: Box2D::try_from(c).unwrap(),
        }
    }

    #[test]
    fn parse_examples() {
        let r = parse_response("B", TaskKind::SingleChoice);
        assert_eq!(r.payload, Some(Payload::Choice('B')));
        let r = parse_response("(0.1, 0.2, 0.5, 0.9)", TaskKind::BBox);
        assert_eq!(r.payload, Some(Payload::Box([0.1, 0.2, 0.5, 0.9])));
        assert!(!parse_response("banana", TaskKind::Counting).parse_ok());
    }

    #[test]
    fn parse_details() {
        assert_eq!(
            parse_response("I think the answer is C.", TaskKind::SingleChoice).payload,
            Some(Payload::Choice('C'))
        );
        assert_eq!(
            parse_response("a healthy crop, so B", TaskKind::SingleChoice).payload,
            Some(Payload::Choice('B'))
        );
        assert_eq!(
            parse_response("answer: b", TaskKind::SingleChoice).payload,
            Some(Payload::Choice('B'))
        );
        assert_eq!(
            parse_response("A, C and E", TaskKind::MultiChoice).payload,
            Some(Payload::Choices(letters("ACE")))
        );
        assert_eq!(
            parse_response("There are 12 trees", TaskKind::Counting).payload,
            Some(Payload::Count(12))
        );
        assert_eq!(
            parse_response("-3 plants", TaskKind::Counting).payload,
            Some(Payload::Count(-3))
        );
        assert_eq!(
            parse_response("box: [0, .25, 1, 1e-1]", TaskKind::Boundary).payload,
            Some(Payload::Box([0.0, 0.25, 1.0, 0.1]))
        );
        assert!(!parse_response("(0.1, 0.2, 0.5)", TaskKind::BBox).parse_ok());
        assert!(!parse_response("  ...  ", TaskKind::OpenEnded).parse_ok());
        let t = parse_response(
            "(Field, Crop, Wheat); (field, stage, Heading)",
            TaskKind::TripletShortAnswer,
        );
        assert_eq!(
            t.payload,
            Some(Payload::Triplets(vec![
                Triplet::new("field", "crop", "wheat"),
                Triplet::new("field", "stage", "heading"),
            ]))
        );
    }

    #[test]
    fn single_choice() {
        assert_eq!(score_single_choice('B', 'B'), 1.0);
        assert_eq!(score_single_choice('b', 'B'), 1.0);
        assert_eq!(score_single_choice('A', 'B'), 0.0);
    }

    #[test]
    fn counting() {
        assert_eq!(score_counting(10, 10), 1.0);
        assert!((score_counting(8, 10) - 0.8).abs() < 1e-12);
        assert_eq!(score_counting(3, 0), 0.0);
        assert_eq!(score_counting(0, 0), 1.0);
        assert_eq!(score_counting(40, 10), 0.0);
    }

    #[test]
    fn multi_choice() {
        assert_eq!(
            score_multi_choice(&letters("AB"), &letters("AB")).unwrap(),
            1.0
        );
        assert!((score_multi_choice(&letters("A"), &letters("AB")).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(
            score_multi_choice(&letters("C"), &letters("AB")).unwrap(),
            0.0
        );
        assert_eq!(
            score_multi_choice(&letters(""), &letters("AB")).unwrap(),
            0.0
        );
        assert!(score_multi_choice(&letters("A"), &letters("")).is_err());
    }

    #[test]
    fn ordinal() {
        assert_eq!(score_ordinal(3, 3, 5).unwrap(), 1.0);
        assert_eq!(score_ordinal(2, 4, 5).unwrap(), 0.5);
        assert_eq!(score_ordinal(0, 4, 5).unwrap(), 0.0);
        assert!(score_ordinal(5, 4, 5).is_err());
        assert!(score_ordinal(0, 0, 1).is_err());
    }

    #[test]
    fn stage_resolution() {
        let scale: Vec<String> = [
            "seedling",
            "tillering",
            "heading",
            "late heading",
            "ripening",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        assert_eq!(
            resolve_stage("It is at the Heading stage.", &scale),
            Some(2)
        );
        assert_eq!(resolve_stage("late heading, not ripening", &scale), Some(3));
        assert_eq!(resolve_stage("no idea", &scale), None);
    }

    #[test]
    fn triplets() {
        let a = Triplet::new("field", "crop", "wheat");
        let b = Triplet::new("field", "stage", "heading");
        let c = Triplet::new("field", "soil", "clay");
        assert_eq!(
            score_triplets(&[a.clone(), b.clone()], &[a.clone(), b.clone()]).unwrap(),
            1.0
        );
        let partial = score_triplets(std::slice::from_ref(&a), &[a.clone(), b.clone()]).unwrap();
        assert!((partial - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(score_triplets(&[c], &[a.clone(), b]).unwrap(), 0.0);
        assert_eq!(score_triplets(&[], std::slice::from_ref(&a)).unwrap(), 0.0);
        assert!(score_triplets(&[a], &[]).is_err());
    }

    #[test]
    fn format_checks() {
        let ok = parse_response("B", TaskKind::SingleChoice);
        assert_eq!(score_format(&ok, TaskKind::SingleChoice), 1.0);
        let flipped = parse_response("[0.6, 0.1, 0.5, 0.9]", TaskKind::BBox);
        assert!(flipped.parse_ok());
        assert_eq!(score_format(&flipped, TaskKind::BBox), 0.0);
        let junk = parse_response("many", TaskKind::Counting);
        assert_eq!(score_format(&junk, TaskKind::Counting), 0.0);
    }

    #[test]
    fn spatial() {
        let gt = bx([0.0, 0.0, 1.0, 1.0]);
        let perfect = parse_response("[0, 0, 1, 1]", TaskKind::Boundary);
        assert_eq!(score_spatial(&perfect, &gt, TaskKind::Boundary), 1.0);
        let choice = parse_response("A", TaskKind::SingleChoice);
        assert_eq!(score_spatial(&choice, &gt, TaskKind::SingleChoice), 0.0);
        let half = parse_response("[0.5, 0, 1, 1]", TaskKind::Boundary);
        assert!((score_spatial(&half, &gt, TaskKind::Boundary) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn combine_examples() {
        let w = RewardWeights::default();
        assert!((combine(1.0, 0.5, 1.0, &w).unwrap() - 0.95).abs() < 1e-12);
        assert_eq!(combine(0.0, 0.0, 0.0, &w).unwrap(), 0.0);
        assert_eq!(combine(1.0, 1.0, 1.0, &w).unwrap(), 1.0);
        let neg = RewardWeights { task: -0.1, ..w };
        assert!(combine(1.0, 1.0, 1.0, &neg).is_err());
        assert!(RewardWeights::new(0.5, -1.0, 0.0).is_err());
    }

    #[test]
    fn weights_from_flag() {
        let w: RewardWeights = "0.8, 0.1,0.1".parse().unwrap();
        assert_eq!(w, RewardWeights::default());
        assert!("0.8,0.1".parse::<RewardWeights>().is_err());
        assert!("0.8,x,0.1".parse::<RewardWeights>().is_err());
    }

    #[test]
    fn rollout_examples() {
        let cfg = RewardConfig::default();
        let gt = GroundTruth::Choice { answer: 'B' };
        let r = score_rollout("B", &gt, TaskKind::SingleChoice, &cfg).unwrap();
        assert_eq!((r.r_task, r.r_spatial, r.r_fmt), (1.0, 0.0, 1.0));
        assert_eq!(r.r_total, 0.9);

        let gt = bx([0.1, 0.1, 0.6, 0.7]);
        let r = score_rollout("[0.1, 0.1, 0.6, 0.7]", &gt, TaskKind::Boundary, &cfg).unwrap();
        assert_eq!(
            (r.r_task, r.r_spatial, r.r_fmt, r.r_total),
            (1.0, 1.0, 1.0, 1.0)
        );

        let r = score_rollout("@@@", &gt, TaskKind::BBox, &cfg).unwrap();
        assert_eq!(
            (r.r_task, r.r_spatial, r.r_fmt, r.r_total),
            (0.0, 0.0, 0.0, 0.0)
        );

        assert!(score_rollout("B", &gt, TaskKind::SingleChoice, &cfg).is_err());
    }

    #[test]
    fn bbox_and_boundary_use_their_variants() {
        let cfg = RewardConfig::default();
        let gt = bx([0.0, 0.0, 1.0, 1.0]);
        // IoU 0.6 against the unit square.
        let text = "[0, 0, 0.6, 1]";
        let bbox = score_rollout(text, &gt, TaskKind::BBox, &cfg).unwrap();
        let boundary = score_rollout(text, &gt, TaskKind::Boundary, &cfg).unwrap();
        assert_eq!(bbox.r_task, 1.0);
        assert!((boundary.r_task - 0.6).abs() < 1e-12);
        assert!((bbox.r_spatial - 0.6).abs() < 1e-12);
    }

    #[test]
    fn ground_truth_json() {
        let gt: GroundTruth =
            serde_json::from_str(r#"{"type":"ordinal","index":2,"scale":["a","b","c"]}"#).unwrap();
        assert!(gt.validate(TaskKind::OrdinalShortAnswer).is_ok());
        let bad: GroundTruth =
            serde_json::from_str(r#"{"type":"ordinal","index":3,"scale":["a","b","c"]}"#).unwrap();
        assert!(bad.validate(TaskKind::OrdinalShortAnswer).is_err());
        let gt: GroundTruth =
            serde_json::from_str(r#"{"type":"triplets","triplets":[["Field","Crop","Wheat"]]}"#)
                .unwrap();
        assert_eq!(
            gt,
            GroundTruth::Triplets {
                triplets: vec![Triplet::new("field", "crop", "wheat")]
            }
        );
        assert!(
            serde_json::from_str::<GroundTruth>(r#"{"type":"box","value":[0.5,0,0.1,1]}"#).is_err()
        );
        assert!("nonsense".parse::<TaskKind>().is_err());
        assert_eq!(
            "SR".parse::<CognitiveDomain>().unwrap(),
            CognitiveDomain::SceneReasoning
        );
    }
}
