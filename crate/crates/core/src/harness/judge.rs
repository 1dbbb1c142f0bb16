//! Client for a remote YES/NO judge behind an OpenAI-style chat-completions endpoint.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::constraints::{
    content, soft_key_criteria, Judge, JudgeVerdict, Token, VerdictSource, Vocab,
};
use crate::error::{HirError, Result};

/// Environment variable holding the bearer token for the judge endpoint.
pub const API_KEY_ENV: &str = "HIR_JUDGE_API_KEY";

const PROMPT_HEAD: &str = "Based on the provided Input (if any) and Generated Text, judge whether the generated text fulfills the Criteria Item with either a YES or NO choice. Your selection should be based on your judgment as well as the following rules:

- YES: Select 'YES' if the generated text entirely fulfills the condition specified in the Criteria Item. However, note that even minor inaccuracies exclude the text from receiving a 'YES' rating. As an illustration, consider a Criteria Item \"Each sentence in the generated text uses a second person\". If even one sentence does not use the second person, the answer should NOT be 'YES'. To qualify for a 'YES' rating, the generated text must be entirely accurate and satisfy the criteria.

- NO: Opt for 'NO' if the generated text fails to meet the criteria or provides no information that could be utilized to judge. For instance, the Criteria Item asks \"Is the second sentence in the generated text a compound sentence?\" and the generated text only has one sentence. It offers no relevant information to judge whether this criteria is met. Consequently, the answer should be 'NO'.

";

const PROMPT_TAIL: &str = "You only need to judge whether the generated text satisfiy the given Criteria Item and do NOT affect by other requirements in Input (if any). Return either a 'YES' or 'NO' choice without any additional text in your response.";

/// The judge prompt with its three slots filled. Slot contents are inserted verbatim, so text
/// that happens to look like a slot is never substituted twice.
pub fn judge_prompt(input_text: &str, generated_text: &str, criteria_item: &str) -> String {
    format!(
        "{PROMPT_HEAD}Input:\n{input_text}\n\nGenerated Text:\n{generated_text}\n\nCriteria Item:\n{criteria_item}\n\n{PROMPT_TAIL}"
    )
}

/// Strict parsing accepts only `YES`/`NO` (trimmed, any case); relaxed parsing accepts any reply
/// that starts with one of them.
pub fn parse_verdict(reply: &str, relaxed: bool) -> Result<bool> {
    let t = reply.trim().to_ascii_uppercase();
    let verdict = if relaxed {
        if t.starts_with("YES") {
            Some(true)
        } else if t.starts_with("NO") {
            Some(false)
        } else {
            None
        }
    } else {
        match t.as_str() {
            "YES" => Some(true),
            "NO" => Some(false),
            _ => None,
        }
    };
    verdict.ok_or_else(|| HirError::JudgeParseError(reply.chars().take(200).collect()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteJudgeConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    pub timeout_secs: u64,
    /// Extra attempts after a transport failure.
    pub retries: u32,
    pub max_in_flight: usize,
    pub relaxed: bool,
}

impl Default for RemoteJudgeConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            model: "judge".into(),
            timeout_secs: 30,
            retries: 2,
            max_in_flight: 4,
            relaxed: false,
        }
    }
}

/// Counting gate that bounds concurrent requests.
struct Gate {
    in_flight: Mutex<usize>,
    freed: Condvar,
    cap: usize,
}

impl Gate {
    fn acquire(&self) -> GateGuard<'_> {
        let mut n = self.in_flight.lock().unwrap();
        while *n >= self.cap {
            n = self.freed.wait(n).unwrap();
        }
        *n += 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

pub struct RemoteJudge {
    config: RemoteJudgeConfig,
    vocab: Vocab,
    api_key: Option<String>,
    agent: ureq::Agent,
    gate: Gate,
}

impl RemoteJudge {
    /// Reads the API key from [`API_KEY_ENV`] if set.
    pub fn new(config: RemoteJudgeConfig, vocab: Vocab) -> Result<Self> {
        Self::with_key(config, vocab, std::env::var(API_KEY_ENV).ok())
    }

    pub fn with_key(
        config: RemoteJudgeConfig,
        vocab: Vocab,
        api_key: Option<String>,
    ) -> Result<Self> {
        if config.endpoint.is_empty() {
            return Err(HirError::Config("remote judge needs an endpoint".into()));
        }
        if config.max_in_flight == 0 {
            return Err(HirError::Config(
                "remote judge needs max_in_flight ≥ 1".into(),
            ));
        }
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build();
        let gate = Gate {
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
            cap: config.max_in_flight,
        };
        Ok(Self {
            config,
            vocab,
            api_key,
            agent,
            gate,
        })
    }

    /// Sends one prompt and returns the model's reply text.
    pub fn complete(&self, prompt: &str) -> Result<String> {
        let body = json!({
            "model": self.config.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": prompt}],
        })
        .to_string();
        let _slot = self.gate.acquire();
        let mut last = String::new();
        for _ in 0..=self.config.retries {
            let mut req = self
                .agent
                .post(&self.config.endpoint)
                .set("Content-Type", "application/json");
            if let Some(key) = &self.api_key {
                req = req.set("Authorization", &format!("Bearer {key}"));
            }
            match req.send_string(&body) {
                Ok(resp) => {
                    let text = resp.into_string()?;
                    let v: serde_json::Value = serde_json::from_str(&text)
                        .map_err(|e| HirError::JudgeParseError(format!("unreadable body: {e}")))?;
                    return v["choices"][0]["message"]["content"]
                        .as_str()
                        .map(str::to_string)
                        .ok_or_else(|| {
                            HirError::JudgeParseError(format!("no reply content in {v}"))
                        });
                }
                Err(ureq::Error::Status(code, _)) if code != 429 && code < 500 => {
                    return Err(HirError::JudgeUnavailable(format!(
                        "endpoint answered {code}"
                    )));
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(HirError::JudgeUnavailable(last))
    }

    pub fn judge_text(
        &self,
        input_text: &str,
        generated_text: &str,
        criteria_item: &str,
    ) -> Result<bool> {
        let reply = self.complete(&judge_prompt(input_text, generated_text, criteria_item))?;
        parse_verdict(&reply, self.config.relaxed)
    }
}

impl Judge for RemoteJudge {
    fn judge(&self, key: &str, instruction: &[Token], response: &[Token]) -> Result<JudgeVerdict> {
        let criteria =
            soft_key_criteria(key).ok_or_else(|| HirError::UnknownJudgeKey(key.to_string()))?;
        let satisfied = self.judge_text(
            &self.vocab.spell_all(instruction),
            &self.vocab.spell_all(content(response)),
            criteria,
        )?;
        Ok(JudgeVerdict {
            satisfied,
            source: VerdictSource::RemoteJudge,
        })
    }
}
