//! Dialogue-act annotators.

use std::collections::BTreeSet;
use std::sync::Mutex;

use cgbench_agents::llm::{BackendError, ChatBackend, ChatMessage, Role};
use cgbench_core::catalog::Lexicon;
use cgbench_core::config::Seat;

use crate::grounding::{annotate_rule_based, mentioned, rule_based_act, Annotator, DialogueAct, DialogueActLabel, Utterance};

/// Earlier utterances of the same trial shown to an external annotator.
pub const CONTEXT_WINDOW: usize = 6;

pub trait ActAnnotator: Send + Sync {
    /// One label per utterance, in order. Utterances are grouped by session
    /// and trial in transcript order.
    fn annotate(&self, utterances: &[Utterance], lexicon: &Lexicon) -> Vec<DialogueActLabel>;

    fn name(&self) -> String;
}

pub struct RuleBasedAnnotator;

impl ActAnnotator for RuleBasedAnnotator {
    fn annotate(&self, utterances: &[Utterance], lexicon: &Lexicon) -> Vec<DialogueActLabel> {
        annotate_rule_based(utterances, lexicon)
    }

    fn name(&self) -> String {
        "rule_based".into()
    }
}

const INSTRUCTIONS: &str = "\
You label messages from a two-person puzzle task. One person (the Helper) can see a target \
arrangement of pieces on a grid; the other (the Worker) moves pieces and cannot see the target. \
Label the final message with exactly one grounding act:
presentation - the speaker puts forward new content, such as an instruction or a piece or \
location not mentioned before.
clarification - the speaker asks for the meaning of something said earlier to be made clear.
repair - the speaker corrects something, either their own earlier wording or the partner's \
understanding or placement.
acceptance - the speaker signals that earlier content was understood or done, or invites the \
next step.
other - none of the above.
Answer with the label and a confidence between 0 and 1, for example: repair 0.8";

/// Labels through a chat model; any endpoint failure or unusable reply
/// falls back to the rule-based label, recorded as such.
pub struct ExternalAnnotator {
    backend: Mutex<Box<dyn ChatBackend + Send>>,
    model_name: String,
}

impl ExternalAnnotator {
    pub fn new(backend: Box<dyn ChatBackend + Send>, model_name: impl Into<String>) -> Self {
        ExternalAnnotator { backend: Mutex::new(backend), model_name: model_name.into() }
    }

    fn prompt(context: &[&Utterance], target: &Utterance) -> Vec<ChatMessage> {
        let line = |u: &Utterance| {
            let who = match u.seat {
                Seat::Helper => "Helper",
                Seat::Worker => "Worker",
            };
            format!("{who}: {}", u.text)
        };
        let mut body = String::new();
        if !context.is_empty() {
            body.push_str("Earlier in this round:\n");
            for u in context {
                body.push_str(&line(u));
                body.push('\n');
            }
            body.push('\n');
        }
        body.push_str("Message to label:\n");
        body.push_str(&line(target));
        vec![ChatMessage::text(Role::System, INSTRUCTIONS), ChatMessage::text(Role::User, body)]
    }

    fn ask(&self, messages: &[ChatMessage]) -> Result<String, BackendError> {
        let backend = self.backend.lock().unwrap_or_else(|e| e.into_inner());
        let policy = backend.retry_policy();
        let mut attempts = 0;
        loop {
            match backend.complete(messages) {
                Err(BackendError::Transient(m)) => {
                    attempts += 1;
                    if attempts >= policy.max_attempts.max(1) {
                        return Err(BackendError::Transient(m));
                    }
                    std::thread::sleep(policy.delay(attempts - 1));
                }
                other => return other,
            }
        }
    }
}

/// Reads "<act> [confidence]" from a model reply.
pub fn parse_reply(reply: &str) -> Option<(DialogueAct, f64)> {
    let mut words = reply.split_whitespace();
    let act = DialogueAct::parse(words.next()?)?;
    let confidence = words
        .next()
        .and_then(|w| w.trim_matches(|c: char| !c.is_ascii_digit() && c != '.').parse::<f64>().ok())
        .filter(|c| (0.0..=1.0).contains(c))
        .unwrap_or(1.0);
    Some((act, confidence))
}

impl ActAnnotator for ExternalAnnotator {
    fn annotate(&self, utterances: &[Utterance], lexicon: &Lexicon) -> Vec<DialogueActLabel> {
        let mut out = Vec::with_capacity(utterances.len());
        let mut seen: BTreeSet<String> = BTreeSet::new();
        for (i, u) in utterances.iter().enumerate() {
            let same_trial = |p: &&Utterance| p.session_id == u.session_id && p.trial_index == u.trial_index;
            if i == 0 || !same_trial(&&utterances[i - 1]) {
                seen.clear();
            }
            let start = utterances[..i].iter().rposition(|p| !same_trial(&p)).map_or(0, |k| k + 1);
            let context: Vec<&Utterance> = utterances[start.max(i.saturating_sub(CONTEXT_WINDOW))..i].iter().collect();
            let label = match self.ask(&Self::prompt(&context, u)).map(|r| parse_reply(&r)) {
                Ok(Some((act, confidence))) => DialogueActLabel {
                    act,
                    annotator: Annotator::External { model_name: self.model_name.clone() },
                    confidence,
                },
                result => {
                    tracing::warn!(session = %u.session_id, seq = u.seq, ?result, "external annotation failed, using rules");
                    DialogueActLabel {
                        act: rule_based_act(&u.text, &seen, lexicon),
                        annotator: Annotator::RuleBased,
                        confidence: 1.0,
                    }
                }
            };
            seen.extend(mentioned(&u.text, lexicon));
            out.push(label);
        }
        out
    }

    fn name(&self) -> String {
        format!("external:{}", self.model_name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grounding::Party;
    use cgbench_core::catalog::PieceCatalog;
    use std::sync::Arc;

    struct Canned {
        replies: Arc<Mutex<Vec<Result<String, BackendError>>>>,
        seen: Arc<Mutex<Vec<Vec<ChatMessage>>>>,
    }

    impl ChatBackend for Canned {
        fn complete(&self, messages: &[ChatMessage]) -> Result<String, BackendError> {
            self.seen.lock().unwrap().push(messages.to_vec());
            self.replies.lock().unwrap().remove(0)
        }

        fn retry_policy(&self) -> cgbench_agents::RetryPolicy {
            cgbench_agents::RetryPolicy { max_attempts: 2, base_delay_ms: 0, max_delay_ms: 0 }
        }
    }

    fn utt(trial: u32, seat: Seat, text: &str) -> Utterance {
        Utterance {
            session_id: "s".into(),
            trial_index: trial,
            seq: 0,
            turn_index: 0,
            seat,
            party: Party::Ai,
            text: text.into(),
            word_count: 0,
        }
    }

    #[test]
    fn replies_parse() {
        assert_eq!(parse_reply("Repair 0.8"), Some((DialogueAct::Repair, 0.8)));
        assert_eq!(parse_reply("acceptance."), Some((DialogueAct::Acceptance, 1.0)));
        assert_eq!(parse_reply("maybe repair"), None);
        assert_eq!(parse_reply("other 7"), Some((DialogueAct::Other, 1.0)));
    }

    #[test]
    fn failures_fall_back_to_rules() {
        let replies = Arc::new(Mutex::new(vec![
            Ok("presentation 0.9".to_string()),
            Err(BackendError::Transient("503".into())),
            Err(BackendError::Transient("503".into())),
            Ok("no idea".to_string()),
        ]));
        let seen = Arc::new(Mutex::new(Vec::new()));
        let a = ExternalAnnotator::new(Box::new(Canned { replies, seen: seen.clone() }), "judge");
        let lex = PieceCatalog::default_bundled().lexicon().clone();
        let us = [
            utt(1, Seat::Helper, "place the red piece at the top"),
            utt(1, Seat::Worker, "which red piece?"),
            utt(2, Seat::Worker, "Done. What is next?"),
        ];
        let labels = a.annotate(&us, &lex);
        assert_eq!(labels[0].act, DialogueAct::Presentation);
        assert_eq!(labels[0].annotator, Annotator::External { model_name: "judge".into() });
        assert_eq!(labels[0].confidence, 0.9);
        assert_eq!(labels[1].act, DialogueAct::Clarification);
        assert_eq!(labels[1].annotator, Annotator::RuleBased);
        assert_eq!(labels[2].act, DialogueAct::Acceptance);
        assert_eq!(labels[2].annotator, Annotator::RuleBased);

        let prompts = seen.lock().unwrap();
        let user_text = |i: usize| match &prompts[i][1].content[0] {
            cgbench_agents::llm::ContentPart::Text(t) => t.clone(),
            _ => unreachable!(),
        };
        assert!(user_text(1).contains("Helper: place the red piece"));
        // new trial, no carried context
        assert!(!user_text(3).contains("Earlier"));
    }
}
