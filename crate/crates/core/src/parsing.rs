//! Tagged-output templates: parsing, rendering, and moment validity.
//!
//! Both agents communicate through literal, case-sensitive tag blocks:
//! the proposer emits `<time>...</time>` / `<description>...</description>`
//! pairs, the solver emits `<think>...</think>` / `<answer>...</answer>`.
//! Parsing is total: malformed input yields `template_ok = false`, never an
//! error.

use serde::{Deserialize, Serialize};

use crate::moment::Moment;

pub const TIME_OPEN: &str = "<time>";
pub const TIME_CLOSE: &str = "</time>";
pub const DESC_OPEN: &str = "<description>";
pub const DESC_CLOSE: &str = "</description>";
pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const ANSWER_OPEN: &str = "<answer>";
pub const ANSWER_CLOSE: &str = "</answer>";

/// One rendered query with its temporal moment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMoment {
    pub query: String,
    pub moment: Moment,
}

impl QueryMoment {
    fn pad() -> Self {
        QueryMoment { query: String::new(), moment: Moment::ZERO }
    }
}

/// Parsed proposer response, padded with zero moments up to the required
/// pair count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposerOutput {
    pub template_ok: bool,
    /// Exactly `n_required` entries; entries at index `>= parsed` are pads.
    pub pairs: Vec<QueryMoment>,
    /// Number of complete tag-block pairs extracted (before padding).
    pub parsed: usize,
}

impl ProposerOutput {
    /// An all-pads output for template failures.
    pub fn invalid(n_required: usize) -> Self {
        ProposerOutput {
            template_ok: false,
            pairs: (0..n_required).map(|_| QueryMoment::pad()).collect(),
            parsed: 0,
        }
    }

    pub fn is_padded_slot(&self, index: usize) -> bool {
        index >= self.parsed
    }
}

/// Parsed solver response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOutput {
    pub template_ok: bool,
    pub think_text: String,
    pub answer_moment: Option<Moment>,
}

impl SolverOutput {
    pub fn invalid() -> Self {
        SolverOutput { template_ok: false, think_text: String::new(), answer_moment: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BlockKind {
    First,
    Second,
}

/// Scan `text` for literal blocks of two kinds. Returns the blocks in
/// document order, or `None` when tags are unbalanced, nested, or
/// interleaved. Text outside blocks is ignored.
fn scan_blocks<'t>(
    text: &'t str,
    open1: &str,
    close1: &str,
    open2: &str,
    close2: &str,
) -> Option<Vec<(BlockKind, &'t str)>> {
    let tags = [open1, close1, open2, close2];
    let mut blocks = Vec::new();
    // (kind, content start) while inside a block.
    let mut state: Option<(BlockKind, usize)> = None;
    let mut pos = 0;
    while pos < text.len() {
        // Earliest next tag occurrence from pos.
        let mut next: Option<(usize, usize)> = None; // (byte offset, tag index)
        for (ti, tag) in tags.iter().enumerate() {
            if let Some(off) = text[pos..].find(tag) {
                let at = pos + off;
                if next.map_or(true, |(b, _)| at < b) {
                    next = Some((at, ti));
                }
            }
        }
        let Some((at, ti)) = next else { break };
        match (state, ti) {
            (None, 0) => state = Some((BlockKind::First, at + open1.len())),
            (None, 2) => state = Some((BlockKind::Second, at + open2.len())),
            (Some((BlockKind::First, content_start)), 1) => {
                blocks.push((BlockKind::First, &text[content_start..at]));
                state = None;
            }
            (Some((BlockKind::Second, content_start)), 3) => {
                blocks.push((BlockKind::Second, &text[content_start..at]));
                state = None;
            }
            // Close without open, or any tag inside an open block of the
            // other kind: the template is malformed.
            _ => return None,
        }
        pos = at + tags[ti].len();
    }
    if state.is_some() {
        return None; // unclosed block
    }
    Some(blocks)
}

/// Parse a token in plain integer or decimal notation (optional leading
/// minus). Scientific notation, unit suffixes, and specials are rejected.
fn parse_plain_number(tok: &str) -> Option<f64> {
    let body = tok.strip_prefix('-').unwrap_or(tok);
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (body, None),
    };
    if int_part.is_empty() || !int_part.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    if let Some(f) = frac_part {
        if f.is_empty() || !f.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
    }
    tok.parse().ok()
}

/// Split block content on whitespace/commas and parse exactly two numbers.
fn parse_two_numbers(content: &str) -> Option<(f64, f64)> {
    let mut nums = Vec::with_capacity(2);
    for tok in content.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()) {
        if nums.len() == 2 {
            return None;
        }
        nums.push(parse_plain_number(tok)?);
    }
    if nums.len() == 2 {
        Some((nums[0], nums[1]))
    } else {
        None
    }
}

/// Parse a proposer response into exactly `n_required` query-moment slots.
///
/// Well-formed `(time, description)` block pairs are extracted in document
/// order, truncated beyond `n_required` and padded with zero moments below
/// it. `template_ok` is false when the tags are malformed/unbalanced or no
/// complete pair exists.
pub fn parse_proposer(text: &str, n_required: usize) -> ProposerOutput {
    debug_assert!(n_required >= 1);
    let Some(blocks) = scan_blocks(text, TIME_OPEN, TIME_CLOSE, DESC_OPEN, DESC_CLOSE) else {
        return ProposerOutput::invalid(n_required);
    };
    let mut pairs: Vec<QueryMoment> = Vec::new();
    let mut i = 0;
    while i < blocks.len() && pairs.len() < n_required {
        if blocks[i].0 == BlockKind::First && i + 1 < blocks.len() && blocks[i + 1].0 == BlockKind::Second {
            if let Some((start, end)) = parse_two_numbers(blocks[i].1) {
                pairs.push(QueryMoment {
                    query: blocks[i + 1].1.to_string(),
                    moment: Moment::new(start, end),
                });
                i += 2;
                continue;
            }
        }
        i += 1;
    }
    if pairs.is_empty() {
        return ProposerOutput::invalid(n_required);
    }
    let parsed = pairs.len();
    while pairs.len() < n_required {
        pairs.push(QueryMoment::pad());
    }
    ProposerOutput { template_ok: true, pairs, parsed }
}

/// Parse a solver response.
///
/// `template_ok` requires exactly one think block followed by exactly one
/// answer block, with the answer holding exactly two parseable numbers.
pub fn parse_solver(text: &str) -> SolverOutput {
    let Some(blocks) = scan_blocks(text, THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, ANSWER_CLOSE) else {
        return SolverOutput::invalid();
    };
    if blocks.len() != 2 || blocks[0].0 != BlockKind::First || blocks[1].0 != BlockKind::Second {
        return SolverOutput::invalid();
    }
    let think_text = blocks[0].1.to_string();
    match parse_two_numbers(blocks[1].1) {
        Some((start, end)) => SolverOutput {
            template_ok: true,
            think_text,
            answer_moment: Some(Moment::new(start, end)),
        },
        None => SolverOutput { template_ok: false, think_text, answer_moment: None },
    }
}

/// Membership in the validity set: in range and longer than `min_length`.
pub fn is_valid_moment(m: &Moment, video_duration: f64, min_length: f64) -> bool {
    debug_assert!(video_duration > 0.0);
    m.start >= 0.0 && m.end <= video_duration && m.end - m.start > min_length
}

/// Render query-moment pairs in the proposer template. Numbers use the
/// shortest round-trip representation so `parse_proposer` recovers the pairs
/// exactly.
pub fn render_proposer(pairs: &[QueryMoment]) -> String {
    let mut out = String::new();
    for p in pairs {
        out.push_str(&format!(
            "{TIME_OPEN}{} {}{TIME_CLOSE}\n{DESC_OPEN}{}{DESC_CLOSE}\n",
            p.moment.start, p.moment.end, p.query
        ));
    }
    out
}

/// Render a solver response in the think/answer template.
pub fn render_solver(think_text: &str, answer: Moment) -> String {
    format!(
        "{THINK_OPEN}{think_text}{THINK_CLOSE}\n{ANSWER_OPEN}{} {}{ANSWER_CLOSE}",
        answer.start, answer.end
    )
}
