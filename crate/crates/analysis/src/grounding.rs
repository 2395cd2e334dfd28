//! Object- and communication-level measures over session transcripts:
//! turn segmentation, piece noun phrases, reference classification,
//! vocabulary sharing and dialogue acts.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::LazyLock;

use cgbench_core::catalog::Lexicon;
use cgbench_core::config::{Seat, SessionConfig};
use cgbench_core::dsl;
use cgbench_core::session::SessionEvent;
use cgbench_core::transcript::SessionLog;
use regex::Regex;
use serde::{Deserialize, Serialize};

/// Who produced an utterance, as opposed to which seat it came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Party {
    Human,
    Ai,
}

impl Party {
    pub fn of(config: &SessionConfig, seat: Seat) -> Party {
        match config.agent(seat) {
            Some(a) if a.is_human() => Party::Human,
            _ => Party::Ai,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub session_id: String,
    pub trial_index: u32,
    pub seq: u64,
    /// Position within the trial, from 0.
    pub turn_index: u32,
    pub seat: Seat,
    pub party: Party,
    pub text: String,
    pub word_count: u32,
}

pub fn word_count(text: &str) -> u32 {
    text.split_whitespace().count() as u32
}

/// One utterance per non-empty seat chat message; system notices excluded.
pub fn segment_turns(log: &SessionLog) -> Vec<Utterance> {
    segment_events(&log.header.session_id, &log.header.config, &log.events)
}

pub fn segment_events(session_id: &str, config: &SessionConfig, events: &[SessionEvent]) -> Vec<Utterance> {
    let mut turns: BTreeMap<u32, u32> = BTreeMap::new();
    events
        .iter()
        .filter_map(|e| {
            let (seat, text) = e.seat_chat()?;
            if text.trim().is_empty() {
                return None;
            }
            let turn = turns.entry(e.trial_index).or_insert(0);
            let u = Utterance {
                session_id: session_id.to_string(),
                trial_index: e.trial_index,
                seq: e.seq,
                turn_index: *turn,
                seat,
                party: Party::of(config, seat),
                text: text.to_string(),
                word_count: word_count(text),
            };
            *turn += 1;
            Some(u)
        })
        .collect()
}

// Chunk grammar: (Det)? (Premod)* Head (PostmodWith)?

const DETERMINERS: &[&str] = &["the", "a", "an", "this", "that", "some"];
const HEAD_NOUNS: &[&str] = &["piece", "pieces", "tile", "tiles", "one"];
const GENERIC_ADJECTIVES: &[&str] = &[
    "big", "small", "large", "little", "same", "other", "last", "first", "second", "third", "fourth", "new", "dark",
    "light", "bright", "pale", "striped", "spotted", "checkered", "checked", "plain", "black", "blue", "orange",
    "purple", "brown", "grey", "gray", "crisscross", "diagonal", "horizontal", "vertical", "wavy", "pattern",
    "patterned", "colored", "coloured",
];
/// Words that end a `with ...` modifier.
const POSTMOD_STOPS: &[&str] = &[
    "at", "in", "on", "to", "into", "onto", "from", "of", "by", "for", "next", "near", "beside", "below", "above",
    "under", "over", "between", "and", "or", "but", "then", "so", "please", "is", "are", "it", "which", "that",
    "where", "when", "left", "right", "top", "bottom", "middle", "center", "centre", "corner", "position", "row",
    "column", "place", "put", "move", "rotate", "remove", "done",
];
const POSTMOD_MAX: usize = 6;

static TOKEN: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\(\s*\d+\s*,\s*\d+\s*\)|\d+\s*,\s*\d+|[a-z]+\d+|[a-z]+(?:'[a-z]+)?|\d+|[^\sa-z\d]").unwrap()
});
static ID_TOKEN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^id\d+$").unwrap());

/// Identifier forms: `id 3`, `ID0`, `piece 3`, `(1,2)`, `1,2`.
pub static IDENTIFIER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\bid\s*\d+|piece\s+\d+|\(\d+\s*,\s*\d+\)|\b\d+\s*,\s*\d+\b").unwrap());

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Word,
    Number,
    Coord,
    Punct,
}

#[derive(Debug, Clone)]
struct Token<'a> {
    text: &'a str,
    start: usize,
    end: usize,
    kind: Kind,
}

fn tokenize(lower: &str) -> Vec<Token<'_>> {
    TOKEN
        .find_iter(lower)
        .map(|m| {
            let t = m.as_str();
            let kind = if t.starts_with('(') || (t.contains(',') && t.starts_with(|c: char| c.is_ascii_digit())) {
                Kind::Coord
            } else if t.chars().all(|c| c.is_ascii_digit()) {
                Kind::Number
            } else if t.starts_with(|c: char| c.is_ascii_lowercase()) {
                Kind::Word
            } else {
                Kind::Punct
            };
            Token { text: t, start: m.start(), end: m.end(), kind }
        })
        .collect()
}

struct Chunker<'l> {
    lexicon: &'l Lexicon,
}

impl Chunker<'_> {
    fn is_pattern(&self, w: &str) -> bool {
        self.lexicon.is_pattern(w)
            || w.strip_suffix('s').is_some_and(|s| self.lexicon.is_pattern(s))
            || self.lexicon.is_pattern(&format!("{w}s"))
    }

    fn is_lexical(&self, w: &str) -> bool {
        self.lexicon.is_color(w) || self.is_pattern(w)
    }

    fn is_premod(&self, t: &Token) -> bool {
        t.kind == Kind::Word && (self.is_lexical(t.text) || GENERIC_ADJECTIVES.contains(&t.text))
    }

    /// Length of an identifier starting at `i` (`id3`, `id 3`), if any.
    fn identifier_len(&self, toks: &[Token], i: usize) -> Option<usize> {
        let t = toks.get(i)?;
        if t.kind == Kind::Word && ID_TOKEN.is_match(t.text) {
            return Some(1);
        }
        (t.text == "id" && toks.get(i + 1).is_some_and(|n| n.kind == Kind::Number)).then_some(2)
    }

    /// Head at `i`: returns (end, is_piece_marker).
    fn head(&self, toks: &[Token], i: usize) -> Option<(usize, bool)> {
        if let Some(n) = self.identifier_len(toks, i) {
            return Some((i + n, true));
        }
        let t = toks.get(i).filter(|t| t.kind == Kind::Word)?;
        if HEAD_NOUNS.contains(&t.text) {
            let numbered = t.text == "piece" && toks.get(i + 1).is_some_and(|n| n.kind == Kind::Number);
            return Some((i + 1 + numbered as usize, t.text != "one"));
        }
        self.is_pattern(t.text).then_some((i + 1, true))
    }

    fn chunk_at(&self, toks: &[Token], i: usize) -> Option<usize> {
        let mut j = i;
        if toks[j].kind == Kind::Word && DETERMINERS.contains(&toks[j].text) {
            j += 1;
        }
        let premods = j;
        while j < toks.len() && self.is_premod(&toks[j]) && self.identifier_len(toks, j).is_none() {
            j += 1;
        }
        let (mut end, mut marked) = match self.head(toks, j) {
            Some(h) => h,
            // the last modifier can itself be the head: "the spiral"
            None if j > premods && self.is_pattern(toks[j - 1].text) => (j, true),
            None => return None,
        };
        marked |= toks[premods..end].iter().any(|t| t.kind == Kind::Word && self.is_lexical(t.text));
        if toks.get(end).is_some_and(|t| t.text == "with") {
            let mut k = end + 1;
            while k < toks.len()
                && k - end - 1 < POSTMOD_MAX
                && matches!(toks[k].kind, Kind::Word | Kind::Number)
                && !POSTMOD_STOPS.contains(&toks[k].text)
                && !toks[k].text.ends_with("ly")
            {
                marked |= toks[k].kind == Kind::Word && self.is_lexical(toks[k].text);
                k += 1;
            }
            if k > end + 1 {
                end = k;
            }
        }
        marked.then_some(end)
    }
}

/// Lowercase, single spaces, no trailing punctuation.
pub fn normalize_phrase(s: &str) -> String {
    let collapsed = s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    collapsed.trim_end_matches(|c: char| c.is_ascii_punctuation() && c != ')').to_string()
}

/// Maximal noun-phrase chunks that refer to puzzle pieces, normalized.
pub fn extract_piece_noun_phrases(text: &str, lexicon: &Lexicon) -> Vec<String> {
    let lower = text.to_lowercase();
    let toks = tokenize(&lower);
    let chunker = Chunker { lexicon };
    let mut out = Vec::new();
    let mut i = 0;
    while i < toks.len() {
        match chunker.chunk_at(&toks, i) {
            Some(end) => {
                out.push(normalize_phrase(&lower[toks[i].start..toks[end - 1].end]));
                i = end;
            }
            None => i += 1,
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Definiteness {
    Definite,
    Indefinite,
    Bare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefType {
    Descriptive,
    Identifier,
}

pub fn classify_reference(phrase: &str) -> (Definiteness, RefType) {
    let first = phrase.split_whitespace().next().unwrap_or("").to_lowercase();
    let definiteness = match first.as_str() {
        "the" | "this" | "that" => Definiteness::Definite,
        "a" | "an" | "some" => Definiteness::Indefinite,
        _ => Definiteness::Bare,
    };
    let ref_type = if IDENTIFIER.is_match(phrase) { RefType::Identifier } else { RefType::Descriptive };
    (definiteness, ref_type)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PieceReference {
    pub surface: String,
    pub definiteness: Definiteness,
    pub ref_type: RefType,
    pub seat: Seat,
    pub party: Party,
    pub trial_index: u32,
}

pub fn references(utterance: &Utterance, lexicon: &Lexicon) -> Vec<PieceReference> {
    extract_piece_noun_phrases(&utterance.text, lexicon)
        .into_iter()
        .map(|surface| {
            let (definiteness, ref_type) = classify_reference(&surface);
            PieceReference {
                surface,
                definiteness,
                ref_type,
                seat: utterance.seat,
                party: utterance.party,
                trial_index: utterance.trial_index,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialVocabulary {
    pub human_only: BTreeSet<String>,
    pub ai_only: BTreeSet<String>,
    pub joint: BTreeSet<String>,
    /// Mean surface length in characters, per party that used any phrase.
    pub mean_phrase_chars: BTreeMap<Party, f64>,
}

/// Per-trial split of phrases into those used only by the human, only by
/// the AI, or by both.
pub fn partition_vocabulary(refs: &[PieceReference]) -> BTreeMap<u32, TrialVocabulary> {
    let mut by_trial: BTreeMap<u32, BTreeMap<Party, Vec<&str>>> = BTreeMap::new();
    for r in refs {
        by_trial.entry(r.trial_index).or_default().entry(r.party).or_default().push(&r.surface);
    }
    by_trial
        .into_iter()
        .map(|(trial, parties)| {
            let set = |p: Party| -> BTreeSet<String> {
                parties.get(&p).into_iter().flatten().map(|s| s.to_string()).collect()
            };
            let (human, ai) = (set(Party::Human), set(Party::Ai));
            let mean_phrase_chars = parties
                .iter()
                .map(|(p, v)| (*p, v.iter().map(|s| s.chars().count()).sum::<usize>() as f64 / v.len() as f64))
                .collect();
            let v = TrialVocabulary {
                human_only: human.difference(&ai).cloned().collect(),
                ai_only: ai.difference(&human).cloned().collect(),
                joint: human.intersection(&ai).cloned().collect(),
                mean_phrase_chars,
            };
            (trial, v)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DialogueAct {
    Presentation,
    Clarification,
    Repair,
    Acceptance,
    Other,
}

impl DialogueAct {
    pub const ALL: [DialogueAct; 5] = [
        DialogueAct::Presentation,
        DialogueAct::Clarification,
        DialogueAct::Repair,
        DialogueAct::Acceptance,
        DialogueAct::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DialogueAct::Presentation => "presentation",
            DialogueAct::Clarification => "clarification",
            DialogueAct::Repair => "repair",
            DialogueAct::Acceptance => "acceptance",
            DialogueAct::Other => "other",
        }
    }

    pub fn parse(s: &str) -> Option<DialogueAct> {
        let s = s.trim().trim_matches(|c: char| !c.is_ascii_alphabetic()).to_ascii_lowercase();
        DialogueAct::ALL.into_iter().find(|a| a.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Annotator {
    RuleBased,
    External { model_name: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueActLabel {
    pub act: DialogueAct,
    pub annotator: Annotator,
    pub confidence: f64,
}

static INTERROGATIVE_START: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*(which|what|where|do|does|is|are|can|could|should|shall)\b").unwrap());
static CLARIFY_CUE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"\bwhich\b|\bdo you mean\b|\byou mean\b|\bis it the\b|\bis that the\b|\bare you sure\b|\bwhat do you\b|\bwhere exactly\b|\bwhat colou?r\b|\bwhat pattern\b|\bpardon\b|\bor the\b|\bhow many\b",
    )
    .unwrap()
});
static REPAIR_CUE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"\bno\b|\bnope\b|\bnot\b|n't\b|\bwrong\b|\binstead\b|\bactually\b|\bsorry\b|\bi meant\b|\bmistake\b|\bundo\b|\bremove\b|\btake (it|that|this) (off|out|away)\b|\bmove it\b|\bthe one with\b|\bthe other (one|piece)\b|\bneeds? (turning|rotating|to be rotated|to be turned)\b|\bswap\b",
    )
    .unwrap()
});
static ACCEPT_CUE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"^\s*now\b|\b(ok|okay|done|yes|yep|yeah|great|good|perfect|correct|thanks|thank you|alright|got it|cool|nice|excellent|well done)\b|\bwhat('s| is) next\b|\bwhat now\b|\banything else\b|\bwhat should i do next\b",
    )
    .unwrap()
});

/// References a message makes: normalized noun phrases plus `#<id>` for
/// every piece id it names (in commands or identifiers).
pub fn mentioned(text: &str, lexicon: &Lexicon) -> BTreeSet<String> {
    static NUM: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\d+").unwrap());
    let mut out: BTreeSet<String> = extract_piece_noun_phrases(text, lexicon).into_iter().collect();
    let ids: Vec<String> = out
        .iter()
        .filter_map(|p| IDENTIFIER.find(p))
        .filter(|m| !m.as_str().contains(','))
        .filter_map(|m| NUM.find(m.as_str())?.as_str().parse::<u32>().ok())
        .map(|n| format!("#{n}"))
        .collect();
    out.extend(ids);
    if let Ok(cmds) = dsl::parse(text) {
        out.extend(cmds.iter().filter_map(|c| c.piece_id()).map(|id| format!("#{}", id.0)));
    }
    out
}

/// Rule-based act for `text` given what the trial has already mentioned.
/// Precedence: Clarification, Repair, Acceptance, Presentation; an
/// acceptance that also introduces a new reference counts as Presentation.
pub fn rule_based_act(text: &str, seen: &BTreeSet<String>, lexicon: &Lexicon) -> DialogueAct {
    let lower = text.to_lowercase();
    let interrogative = lower.contains('?') || INTERROGATIVE_START.is_match(&lower);
    if interrogative && CLARIFY_CUE.is_match(&lower) {
        return DialogueAct::Clarification;
    }
    if REPAIR_CUE.is_match(&lower) {
        return DialogueAct::Repair;
    }
    let introduces = mentioned(text, lexicon).iter().any(|m| !seen.contains(m));
    match (ACCEPT_CUE.is_match(&lower), introduces) {
        (_, true) => DialogueAct::Presentation,
        (true, false) => DialogueAct::Acceptance,
        (false, false) => DialogueAct::Other,
    }
}

/// Labels one utterance given the earlier utterances of its trial.
pub fn annotate_dialogue_act(text: &str, context: &[&str], lexicon: &Lexicon) -> DialogueActLabel {
    let seen: BTreeSet<String> = context.iter().flat_map(|t| mentioned(t, lexicon)).collect();
    DialogueActLabel { act: rule_based_act(text, &seen, lexicon), annotator: Annotator::RuleBased, confidence: 1.0 }
}

/// Labels every utterance, carrying the mentioned-set through each trial.
pub fn annotate_rule_based(utterances: &[Utterance], lexicon: &Lexicon) -> Vec<DialogueActLabel> {
    let mut seen: BTreeMap<(&str, u32), BTreeSet<String>> = BTreeMap::new();
    utterances
        .iter()
        .map(|u| {
            let trial_seen = seen.entry((u.session_id.as_str(), u.trial_index)).or_default();
            let act = rule_based_act(&u.text, trial_seen, lexicon);
            trial_seen.extend(mentioned(&u.text, lexicon));
            DialogueActLabel { act, annotator: Annotator::RuleBased, confidence: 1.0 }
        })
        .collect()
}
