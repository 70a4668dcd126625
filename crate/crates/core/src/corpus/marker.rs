use super::{CorpusError, MergedCorpus};

const USER: &str = "### User";
const ASSISTANT: &str = "### Assistant";

/// `### User\n{user}\n### Assistant\n{assistant}`, nothing appended.
pub fn format_marker(user: &str, assistant: &str) -> String {
    format!("{USER}\n{user}\n{ASSISTANT}\n{assistant}")
}

fn has_marker_line(text: &str) -> bool {
    text.lines()
        .any(|l| l.trim_end() == USER || l.trim_end() == ASSISTANT)
}

/// Serializes a merged corpus in the marker format.
///
/// Both sections must be non-blank and must not themselves contain a marker
/// line, otherwise the output could not be split back unambiguously.
pub fn export_marker_format(merged: &MergedCorpus) -> Result<String, CorpusError> {
    let (user, assistant) = (&merged.user, &merged.assistant);
    if user.trim().is_empty() {
        return Err(CorpusError::Marker("empty user section".into()));
    }
    if assistant.trim().is_empty() {
        return Err(CorpusError::Marker("empty assistant section".into()));
    }
    if has_marker_line(user) || has_marker_line(assistant) {
        return Err(CorpusError::Marker(
            "section text contains a literal marker line".into(),
        ));
    }
    Ok(format_marker(user, assistant))
}

/// Exact inverse of [`format_marker`].
pub fn parse_marker(text: &str) -> Result<(String, String), CorpusError> {
    let body = text
        .strip_prefix("### User\n")
        .ok_or_else(|| CorpusError::Marker("text does not start with `### User`".into()))?;
    let sep = "\n### Assistant\n";
    let at = body
        .find(sep)
        .ok_or_else(|| CorpusError::Marker("missing `### Assistant` section".into()))?;
    Ok((body[..at].to_string(), body[at + sep.len()..].to_string()))
}

/// Lenient parse of a model reply: tolerates preamble text, code fences,
/// trailing colons on the marker lines and surrounding whitespace. Sections
/// come back trimmed.
pub fn parse_marker_reply(text: &str) -> Result<(String, String), CorpusError> {
    let lines: Vec<&str> = text.lines().collect();
    let is = |line: &str, tag: &str| {
        let l = line.trim().trim_end_matches(':').trim_end();
        l.eq_ignore_ascii_case(tag)
    };
    let u = lines
        .iter()
        .position(|l| is(l, USER))
        .ok_or_else(|| CorpusError::Marker("reply has no `### User` section".into()))?;
    let a = lines[u + 1..]
        .iter()
        .position(|l| is(l, ASSISTANT))
        .map(|p| p + u + 1)
        .ok_or_else(|| CorpusError::Marker("reply has no `### Assistant` section".into()))?;
    let user = lines[u + 1..a].join("\n").trim().to_string();
    let mut tail: Vec<&str> = lines[a + 1..].to_vec();
    // drop a closing code fence the model may have wrapped around the reply
    while tail.last().is_some_and(|l| l.trim().is_empty() || l.trim() == "```") {
        tail.pop();
    }
    let assistant = tail.join("\n").trim().to_string();
    if user.is_empty() {
        return Err(CorpusError::Marker("reply has an empty user section".into()));
    }
    if assistant.is_empty() {
        return Err(CorpusError::Marker("reply has an empty assistant section".into()));
    }
    Ok((user, assistant))
}
