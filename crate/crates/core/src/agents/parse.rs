use crate::game::Action;
use regex::Regex;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("response names neither `{0}` nor `{1}`")]
    NoMatch(String, String),
    #[error("response names both `{0}` and `{1}`")]
    Ambiguous(String, String),
}

fn label_parts(label: &str) -> Vec<String> {
    let mut parts: Vec<String> = Vec::new();
    let mut prev: Option<char> = None;
    for ch in label.chars() {
        let boundary = match prev {
            None => true,
            Some(p) => {
                (p.is_lowercase() && ch.is_uppercase())
                    || (p.is_alphabetic() != ch.is_alphabetic())
                    || !ch.is_alphanumeric()
            }
        };
        if ch.is_alphanumeric() {
            if boundary || parts.is_empty() {
                parts.push(String::new());
            }
            parts.last_mut().unwrap().push(ch);
        }
        prev = Some(ch);
    }
    parts
}

fn label_pattern(label: &str) -> Regex {
    let body = label_parts(label)
        .iter()
        .map(|p| regex::escape(p))
        .collect::<Vec<_>>()
        .join(r"[\s_\-]*");
    Regex::new(&format!(r"(?i)\b{body}\b")).expect("escaped label pattern")
}

fn squash(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

/// Maps free-form agent output onto one of two labelled actions.
///
/// An answer that is exactly a label (ignoring case, spacing and surrounding
/// punctuation) wins. Otherwise the response must mention exactly one label.
pub fn parse_action(response: &str, vocab: &[(&str, Action); 2]) -> Result<Action, ParseError> {
    let trimmed = response
        .trim()
        .trim_matches(|c: char| !c.is_alphanumeric())
        .trim();
    let squashed = squash(trimmed);
    if let Some((_, a)) = vocab
        .iter()
        .find(|(l, _)| !squashed.is_empty() && squash(l) == squashed)
    {
        return Ok(*a);
    }
    let hits: Vec<Action> = vocab
        .iter()
        .filter(|(l, _)| label_pattern(l).is_match(response))
        .map(|(_, a)| *a)
        .collect();
    match hits.as_slice() {
        [a] => Ok(*a),
        [] => Err(ParseError::NoMatch(vocab[0].0.into(), vocab[1].0.into())),
        _ => Err(ParseError::Ambiguous(vocab[0].0.into(), vocab[1].0.into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::GameKind;

    #[test]
    fn exact_labels() {
        let v = GameKind::Pgg.vocab();
        assert_eq!(parse_action("Contribute", &v).unwrap(), Action::Cooperate);
        assert_eq!(parse_action("  keep.\n", &v).unwrap(), Action::Defect);
        assert_eq!(parse_action("**Keep**", &v).unwrap(), Action::Defect);
    }

    #[test]
    fn embedded_labels() {
        let v = GameKind::Pd.vocab();
        let corpus = [
            ("I choose Option B.", Action::Cooperate),
            ("My answer: OptionA", Action::Defect),
            ("option_b", Action::Cooperate),
            ("After thinking it over, I'll go with Option-A this round.", Action::Defect),
            ("Lựa chọn của tôi: OptionB", Action::Cooperate),
            ("OPTION A", Action::Defect),
        ];
        for (text, expected) in corpus {
            assert_eq!(parse_action(text, &v).unwrap(), expected, "{text}");
        }
    }

    #[test]
    fn rejects_unclear_answers() {
        let v = GameKind::Pd.vocab();
        assert!(matches!(parse_action("Both options look fine", &v), Err(ParseError::NoMatch(..))));
        assert!(matches!(
            parse_action("OptionA or OptionB, hard to say", &v),
            Err(ParseError::Ambiguous(..))
        ));
        assert!(parse_action("", &v).is_err());
        assert!(parse_action("This is optional", &v).is_err());
        let v = GameKind::Pgg.vocab();
        assert!(matches!(parse_action("contribute? keep?", &v), Err(ParseError::Ambiguous(..))));
    }

    #[test]
    fn label_splitting() {
        assert_eq!(label_parts("OptionA"), vec!["Option", "A"]);
        assert_eq!(label_parts("Contribute"), vec!["Contribute"]);
    }
}
