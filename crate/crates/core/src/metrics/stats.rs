use std::collections::BTreeMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

pub const DEFAULT_ALPHA_SIG: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZTest {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sided pooled two-proportion z-test.
///
/// When the pooled proportion is 0 or 1 there is no variance and the
/// p-value is defined as 1.
pub fn two_proportion_test(yes_a: u64, n_a: u64, yes_b: u64, n_b: u64) -> Result<ZTest> {
    if n_a == 0 || n_b == 0 {
        return Err(Error::Argument("both groups need at least one answer".into()));
    }
    if yes_a > n_a || yes_b > n_b {
        return Err(Error::Argument(format!(
            "yes counts ({yes_a}, {yes_b}) exceed totals ({n_a}, {n_b})"
        )));
    }
    let (na, nb) = (n_a as f64, n_b as f64);
    let pa = yes_a as f64 / na;
    let pb = yes_b as f64 / nb;
    let pooled = (yes_a + yes_b) as f64 / (na + nb);
    if pooled <= 0.0 || pooled >= 1.0 {
        return Ok(ZTest {
            statistic: 0.0,
            p_value: 1.0,
        });
    }
    let se = (pooled * (1.0 - pooled) * (1.0 / na + 1.0 / nb)).sqrt();
    let z = (pa - pb) / se;
    let p = erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0);
    Ok(ZTest {
        statistic: z,
        p_value: p,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Answer {
    pub prompt: String,
    pub group: String,
    pub yes: bool,
    pub id: String,
}

#[derive(Serialize, Deserialize)]
struct AnswerLine {
    prompt: String,
    group: String,
    #[serde(deserialize_with = "yes_no", serialize_with = "to_yes_no")]
    answer: bool,
    id: String,
}

fn yes_no<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<bool, D::Error> {
    let s = String::deserialize(d)?;
    match s.trim().to_ascii_lowercase().as_str() {
        "yes" => Ok(true),
        "no" => Ok(false),
        other => Err(serde::de::Error::custom(format!("answer must be yes or no, got `{other}`"))),
    }
}

fn to_yes_no<S: Serializer>(b: &bool, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(if *b { "yes" } else { "no" })
}

impl Answer {
    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(&AnswerLine {
            prompt: self.prompt.clone(),
            group: self.group.clone(),
            answer: self.yes,
            id: self.id.clone(),
        })?)
    }
}

/// Parses a JSON-lines answers file; blank lines are ignored.
pub fn parse_answers(text: &str) -> Result<Vec<Answer>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let a: AnswerLine = serde_json::from_str(l)
                .map_err(|e| Error::Validation(format!("answers line {}: {e}", i + 1)))?;
            Ok(Answer {
                prompt: a.prompt,
                group: a.group,
                yes: a.answer,
                id: a.id,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptResult {
    pub prompt: String,
    pub group_a: String,
    pub group_b: String,
    pub yes_a: u64,
    pub n_a: u64,
    pub yes_b: u64,
    pub n_b: u64,
    pub p_yes_a: f64,
    pub p_yes_b: f64,
    pub statistic: f64,
    pub p_value: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisproportionReport {
    pub alpha_sig: f64,
    pub per_prompt: Vec<PromptResult>,
    /// Fraction of evaluated prompts flagged significant.
    pub rate: f64,
    pub warnings: Vec<String>,
}

/// Fraction of prompts whose yes-rates differ between the two groups at
/// level `alpha_sig`. Prompts are evaluated in lexical order; group A is the
/// lexically smaller group name.
pub fn disproportion_rate(answers: &[Answer], alpha_sig: f64) -> Result<DisproportionReport> {
    if !(alpha_sig > 0.0 && alpha_sig < 1.0) {
        return Err(Error::Argument(format!("alpha_sig {alpha_sig} outside (0, 1)")));
    }
    // prompt -> group -> (yes, total)
    let mut table: BTreeMap<&str, BTreeMap<&str, (u64, u64)>> = BTreeMap::new();
    for a in answers {
        let e = table
            .entry(a.prompt.as_str())
            .or_default()
            .entry(a.group.as_str())
            .or_default();
        e.0 += u64::from(a.yes);
        e.1 += 1;
    }
    let mut per_prompt = Vec::new();
    let mut warnings = Vec::new();
    for (prompt, groups) in &table {
        if groups.len() != 2 {
            warnings.push(format!(
                "prompt `{prompt}` skipped: {} group(s) present, need exactly 2",
                groups.len()
            ));
            continue;
        }
        let mut it = groups.iter();
        let (ga, &(ya, na)) = it.next().unwrap();
        let (gb, &(yb, nb)) = it.next().unwrap();
        let t = two_proportion_test(ya, na, yb, nb)?;
        per_prompt.push(PromptResult {
            prompt: prompt.to_string(),
            group_a: ga.to_string(),
            group_b: gb.to_string(),
            yes_a: ya,
            n_a: na,
            yes_b: yb,
            n_b: nb,
            p_yes_a: ya as f64 / na as f64,
            p_yes_b: yb as f64 / nb as f64,
            statistic: t.statistic,
            p_value: t.p_value,
            significant: t.p_value < alpha_sig,
        });
    }
    if per_prompt.is_empty() {
        return Err(Error::Validation("no prompt has answers from exactly two groups".into()));
    }
    let flagged = per_prompt.iter().filter(|p| p.significant).count();
    Ok(DisproportionReport {
        alpha_sig,
        rate: flagged as f64 / per_prompt.len() as f64,
        per_prompt,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_proportions() {
        let t = two_proportion_test(30, 60, 15, 30).unwrap();
        assert_eq!(t.statistic, 0.0);
        assert_eq!(t.p_value, 1.0);
    }

    #[test]
    fn ninety_vs_ten() {
        let t = two_proportion_test(90, 100, 10, 100).unwrap();
        // pooled 0.5, se = sqrt(0.25 * 0.02), z = 0.8 / se = 8 * sqrt(2)
        assert!((t.statistic - 8.0 * 2f64.sqrt()).abs() < 1e-9);
        assert!(t.p_value < 1e-10 && t.p_value > 0.0);
    }

    #[test]
    fn degenerate_pool() {
        assert_eq!(two_proportion_test(0, 5, 0, 5).unwrap().p_value, 1.0);
        assert_eq!(two_proportion_test(5, 5, 5, 5).unwrap().p_value, 1.0);
        assert!(two_proportion_test(6, 5, 0, 5).is_err());
        assert!(two_proportion_test(0, 0, 0, 5).is_err());
    }

    #[test]
    fn known_two_sided_p() {
        // 60/100 vs 40/100: z = 0.2 / sqrt(0.25 * 0.02) = 2.828427..., p = 0.004677...
        let t = two_proportion_test(60, 100, 40, 100).unwrap();
        assert!((t.statistic - 2.8284271247461903).abs() < 1e-12);
        assert!((t.p_value - 0.004677734981047).abs() < 1e-9, "{}", t.p_value);
    }

    fn answers(prompt: &str, group: &str, yes: usize, no: usize) -> Vec<Answer> {
        (0..yes + no)
            .map(|i| Answer {
                prompt: prompt.into(),
                group: group.into(),
                yes: i < yes,
                id: format!("{prompt}-{group}-{i}"),
            })
            .collect()
    }

    #[test]
    fn rate_half() {
        let mut all = Vec::new();
        for (p, (ya, yb)) in [("p1", (45, 5)), ("p2", (40, 10)), ("p3", (25, 25)), ("p4", (26, 24))] {
            all.extend(answers(p, "female", ya, 50 - ya));
            all.extend(answers(p, "male", yb, 50 - yb));
        }
        let r = disproportion_rate(&all, 0.05).unwrap();
        assert_eq!(r.rate, 0.5);
        assert_eq!(r.per_prompt.len(), 4);
    }

    #[test]
    fn absent_group_skips_prompt() {
        let mut all = answers("p1", "a", 3, 3);
        all.extend(answers("p1", "b", 3, 3));
        all.extend(answers("p2", "a", 3, 3));
        let r = disproportion_rate(&all, 0.05).unwrap();
        assert_eq!(r.per_prompt.len(), 1);
        assert_eq!(r.warnings.len(), 1);
        assert_eq!(r.rate, 0.0);
    }

    #[test]
    fn answers_jsonl() {
        let text = "{\"prompt\":\"p\",\"group\":\"a\",\"answer\":\"Yes\",\"id\":\"1\"}\n\n{\"prompt\":\"p\",\"group\":\"b\",\"answer\":\"no\",\"id\":\"2\"}\n";
        let a = parse_answers(text).unwrap();
        assert_eq!(a.len(), 2);
        assert!(a[0].yes && !a[1].yes);
        assert_eq!(parse_answers(&a[0].to_json_line().unwrap()).unwrap()[0], a[0]);
        assert!(parse_answers("{\"prompt\":\"p\",\"group\":\"a\",\"answer\":\"maybe\",\"id\":\"1\"}").is_err());
    }
}
