//! JSONL rollout records: parsing, scoring and grouping by prompt.

use serde::{Deserialize, Serialize};

use crate::advantage::RolloutGroup;
use crate::error::{Error, Result};
use crate::reward::{
    score_rollout, CognitiveDomain, GroundTruth, RewardBreakdown, RewardConfig, TaskKind,
};

/// One sampled response together with its reference answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutRecord {
    pub prompt_id: String,
    pub domain: CognitiveDomain,
    pub task_kind: TaskKind,
    pub response: String,
    pub ground_truth: GroundTruth,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kl: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
}

/// A record and the 1-based line it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct LineRecord {
    pub line: usize,
    pub record: RolloutRecord,
}

/// Parses one JSONL line; `line` is only used for diagnostics.
pub fn parse_record(text: &str, line: usize) -> Result<RolloutRecord> {
    let record: RolloutRecord = serde_json::from_str(text).map_err(|e| Error::Schema {
        line,
        message: e.to_string(),
    })?;
    record
        .ground_truth
        .validate(record.task_kind)
        .map_err(|e| Error::Schema {
            line,
            message: e.to_string(),
        })?;
    if record.kl.is_some_and(|k| !k.is_finite()) {
        return Err(Error::Schema {
            line,
            message: "kl must be finite".into(),
        });
    }
    Ok(record)
}

/// Parses a whole JSONL document. Blank lines are ignored; the first bad
/// line rejects the document.
pub fn parse_jsonl(text: &str) -> Result<Vec<LineRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            parse_record(l, i + 1).map(|record| LineRecord {
                line: i + 1,
                record,
            })
        })
        .collect()
}

/// Output line of the scoring command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRecord {
    pub prompt_id: String,
    pub line: usize,
    #[serde(flatten)]
    pub breakdown: RewardBreakdown,
}

pub fn score_record(rec: &LineRecord, cfg: &RewardConfig) -> Result<ScoredRecord> {
    let r = &rec.record;
    let breakdown = score_rollout(&r.response, &r.ground_truth, r.task_kind, cfg)?;
    Ok(ScoredRecord {
        prompt_id: r.prompt_id.clone(),
        line: rec.line,
        breakdown,
    })
}

/// Groups scored records by `prompt_id` in order of first appearance.
///
/// Every group must have the same size `G >= 2` and a single domain.
/// `rewards[i]` is the total reward of `records[i]`. Missing KL values count
/// as 0.
pub fn group_records(records: &[LineRecord], rewards: &[f64]) -> Result<Vec<RolloutGroup>> {
    if records.len() != rewards.len() {
        return Err(Error::DimensionMismatch {
            expected: records.len(),
            got: rewards.len(),
        });
    }
    let mut order: Vec<&str> = Vec::new();
    let mut members: std::collections::HashMap<&str, Vec<usize>> = Default::default();
    for (i, rec) in records.iter().enumerate() {
        let id = rec.record.prompt_id.as_str();
        members
            .entry(id)
            .or_insert_with(|| {
                order.push(id);
                Vec::new()
            })
            .push(i);
    }
    let mut groups = Vec::with_capacity(order.len());
    let mut size: Option<(usize, &str)> = None;
    for id in order {
        let idx = &members[id];
        let first = &records[idx[0]];
        if let Some(other) = idx
            .iter()
            .find(|&&i| records[i].record.domain != first.record.domain)
        {
            return Err(Error::Schema {
                line: records[*other].line,
                message: format!("prompt `{id}` mixes domains"),
            });
        }
        match size {
            None => size = Some((idx.len(), id)),
            Some((g, ref_id)) if g != idx.len() => {
                return Err(Error::invalid(format!(
                    "prompt `{id}` has {} responses but prompt `{ref_id}` has {g}; groups must share one size",
                    idx.len()
                )))
            }
            _ => {}
        }
        let group_rewards = idx.iter().map(|&i| rewards[i]).collect();
        let kl = idx
            .iter()
            .map(|&i| records[i].record.kl.unwrap_or(0.0))
            .collect();
        groups.push(RolloutGroup::new(
            id,
            first.record.domain,
            group_rewards,
            Some(kl),
        )?);
    }
    Ok(groups)
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"{"prompt_id":"p1","domain":"scene_reasoning","task_kind":"single_choice","response":"B","ground_truth":{"type":"choice","answer":"B"}}"#;

    #[test]
    fn parses_valid_line() {
        let r = parse_record(GOOD, 1).unwrap();
        assert_eq!(r.domain, CognitiveDomain::SceneReasoning);
        assert_eq!(r.task_kind, TaskKind::SingleChoice);
        assert_eq!(r.kl, None);
    }

    #[test]
    fn unknown_kind_names_line() {
        let bad = GOOD.replace("single_choice", "haiku");
        let doc = format!("{GOOD}\n{bad}\n");
        match parse_jsonl(&doc) {
            Err(Error::Schema { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("haiku"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mismatched_ground_truth_rejected() {
        let bad = GOOD.replace(
            r#"{"type":"choice","answer":"B"}"#,
            r#"{"type":"count","value":3}"#,
        );
        assert!(matches!(
            parse_record(&bad, 7),
            Err(Error::Schema { line: 7, .. })
        ));
    }

    #[test]
    fn blank_lines_skipped() {
        let doc = format!("\n{GOOD}\n\n{GOOD}\n");
        let recs = parse_jsonl(&doc).unwrap();
        assert_eq!(recs.iter().map(|r| r.line).collect::<Vec<_>>(), vec![2, 4]);
        assert!(parse_jsonl("").unwrap().is_empty());
    }

    fn rec(id: &str, line: usize) -> LineRecord {
        let mut record = parse_record(GOOD, line).unwrap();
        record.prompt_id = id.into();
        LineRecord { line, record }
    }

    #[test]
    fn grouping() {
        let recs = vec![rec("a", 1), rec("b", 2), rec("a", 3), rec("b", 4)];
        let g = group_records(&recs, &[1.0, 0.0, 0.5, 0.25]).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].prompt_id, "a");
        assert_eq!(g[0].rewards(), &[1.0, 0.5]);
        assert_eq!(g[1].rewards(), &[0.0, 0.25]);

        let ragged = vec![
            rec("a", 1),
            rec("a", 2),
            rec("b", 3),
            rec("b", 4),
            rec("b", 5),
        ];
        let err = group_records(&ragged, &[0.0; 5]).unwrap_err().to_string();
        assert!(err.contains("`b`"), "{err}");

        let single = vec![rec("solo", 1)];
        let err = group_records(&single, &[1.0]).unwrap_err().to_string();
        assert!(err.contains("solo"), "{err}");
    }
}
