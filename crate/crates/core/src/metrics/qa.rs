use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaResponse {
    pub id: String,
    pub response: String,
    pub gold: String,
}

/// Groups of interchangeable answer strings. A response matches the gold
/// answer if it contains the gold string or any string grouped with it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AliasTable {
    pub groups: Vec<Vec<String>>,
}

impl Default for AliasTable {
    fn default() -> Self {
        let unknown = [
            "cannot be determined",
            "can't be determined",
            "unknown",
            "undetermined",
            "not enough information",
            "not enough info",
            "cannot be answered",
            "can't be answered",
            "cannot tell",
            "can't tell",
        ];
        Self {
            groups: vec![unknown.iter().map(|s| s.to_string()).collect()],
        }
    }
}

fn normalize(s: &str) -> String {
    s.trim().replace('\u{2019}', "'").to_lowercase()
}

impl AliasTable {
    pub fn empty() -> Self {
        Self { groups: Vec::new() }
    }

    fn candidates(&self, gold: &str) -> Vec<String> {
        let g = normalize(gold);
        let mut out = vec![g.clone()];
        for group in &self.groups {
            if group.iter().any(|a| normalize(a) == g) {
                out.extend(group.iter().map(|a| normalize(a)));
            }
        }
        out.retain(|c| !c.is_empty());
        out
    }

    pub fn matches(&self, response: &str, gold: &str) -> bool {
        let r = normalize(response);
        self.candidates(gold).iter().any(|c| r.contains(c.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaReport {
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// Ids of items judged wrong.
    pub incorrect_ids: Vec<String>,
}

/// Parses a JSON-lines response file; blank lines are ignored.
pub fn parse_responses(text: &str) -> Result<Vec<QaResponse>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Validation(format!("responses line {}: {e}", i + 1)))
        })
        .collect()
}

pub fn ambiguous_qa_accuracy(responses: &[QaResponse], aliases: &AliasTable) -> Result<QaReport> {
    if responses.is_empty() {
        return Err(Error::EmptyDataset("no QA responses".into()));
    }
    if let Some(r) = responses.iter().find(|r| r.gold.trim().is_empty()) {
        return Err(Error::Validation(format!("item `{}` has an empty gold answer", r.id)));
    }
    let incorrect_ids: Vec<String> = responses
        .iter()
        .filter(|r| !aliases.matches(&r.response, &r.gold))
        .map(|r| r.id.clone())
        .collect();
    let correct = responses.len() - incorrect_ids.len();
    Ok(QaReport {
        total: responses.len(),
        correct,
        accuracy: correct as f64 / responses.len() as f64,
        incorrect_ids,
    })
}
