use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const PLACEHOLDER: &str = "{text}";

pub const DEFAULT_TEMPLATE: &str = "Task: assess urgency, event type, affected location, and sentiment polarity of this crisis post: {text}";

/// A prompt with exactly one `{text}` placeholder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PromptTemplate(String);

impl PromptTemplate {
    pub fn new(template: impl Into<String>) -> Result<Self> {
        let template = template.into();
        match template.matches(PLACEHOLDER).count() {
            1 => Ok(Self(template)),
            n => Err(Error::invalid(format!(
                "prompt template must contain exactly one {PLACEHOLDER} placeholder, found {n}"
            ))),
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self(DEFAULT_TEMPLATE.to_string())
    }
}

impl TryFrom<String> for PromptTemplate {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        Self::new(s)
    }
}

impl From<PromptTemplate> for String {
    fn from(t: PromptTemplate) -> Self {
        t.0
    }
}

/// Substitutes `text` into the placeholder; nothing else is altered.
pub fn compose_prompt(tpl: &PromptTemplate, text: &str) -> Result<String> {
    if text.trim().is_empty() {
        return Err(Error::invalid("cannot compose a prompt around empty text"));
    }
    Ok(tpl.0.replacen(PLACEHOLDER, text, 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substitutes_placeholder() {
        let tpl = PromptTemplate::new("Classify disaster relevance: {text}").unwrap();
        assert_eq!(
            compose_prompt(&tpl, "flood in Houston").unwrap(),
            "Classify disaster relevance: flood in Houston"
        );
    }

    #[test]
    fn keeps_tweet_verbatim() {
        let tweet = "The flood is rising, people are trapped";
        let p = compose_prompt(&PromptTemplate::default(), tweet).unwrap();
        assert!(p.contains(tweet));
        assert!(p.starts_with("Task: assess urgency"));
    }

    #[test]
    fn rejects_empty_text_and_bad_templates() {
        assert!(compose_prompt(&PromptTemplate::default(), "  \t").is_err());
        assert!(PromptTemplate::new("no placeholder").is_err());
        assert!(PromptTemplate::new("{text} and {text}").is_err());
        // braces inside the tweet are not re-expanded
        let tpl = PromptTemplate::new("[{text}]").unwrap();
        assert_eq!(compose_prompt(&tpl, "{text}").unwrap(), "[{text}]");
    }
}
