//! Extraction of matrices, component lists and validator verdicts from raw model text.
//!
//! Model output is noisy: code fences, LaTeX wrappers, `<think>` blocks, echoed
//! prompt examples and intermediate drafts. The extractors strip the wrappers and
//! take the last complete candidate for matrices.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsm::Grid;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("no matrix found")]
    NoMatrixFound,
    #[error("row {row} has {got} cells, expected {expected}")]
    RowLengthMismatch { row: usize, expected: usize, got: usize },
    #[error("illegal cell {0:?}; only 0, 1 and 2 are allowed")]
    IllegalCell(String),
    #[error("expected a {expected}x{expected} matrix, got {got} rows")]
    SizeMismatch { expected: usize, got: usize },
    #[error("no list of strings found")]
    NoListFound,
    #[error("expected {expected} components, got {got}")]
    CountMismatch { expected: usize, got: usize },
    #[error("empty component name at position {0}")]
    EmptyEntry(usize),
}

/// Model reply as received, kept verbatim for replay.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawResponse {
    pub text: String,
    pub model_id: String,
    pub timestamp: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Valid,
    Invalid,
    Unparseable,
}

/// Removes `<think>…</think>` blocks. An unclosed block swallows the rest of the text.
fn strip_think(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find("<think>") {
        out.push_str(&rest[..start]);
        match rest[start..].find("</think>") {
            Some(end) => rest = &rest[start + end + "</think>".len()..],
            None => {
                rest = "";
                break;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Drops code-fence markers and common LaTeX math wrappers.
fn clean(text: &str) -> String {
    let text = strip_think(text);
    let mut out = String::with_capacity(text.len());
    for line in text.lines() {
        let t = line.trim_start();
        if let Some(rest) = t.strip_prefix("```") {
            // keep anything after a fence on the same line only if it is not a language tag
            if rest.contains('[') {
                out.push_str(rest);
            }
            out.push('\n');
            continue;
        }
        out.push_str(line);
        out.push('\n');
    }
    for w in ["\\[", "\\]", "\\(", "\\)", "$$", "$"] {
        out = out.replace(w, " ");
    }
    out
}

/// Byte ranges of every balanced `[...]` span (outermost only) in `s`.
fn balanced_lists(s: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut depth = 0usize;
    let mut start = 0usize;
    let mut in_str: Option<char> = None;
    let mut escaped = false;
    for (i, ch) in s.char_indices() {
        if let Some(q) = in_str {
            if escaped {
                escaped = false;
            } else if ch == '\\' {
                escaped = true;
            } else if ch == q {
                in_str = None;
            }
            continue;
        }
        match ch {
            '"' if depth > 0 => in_str = Some('"'),
            '[' => {
                if depth == 0 {
                    start = i;
                }
                depth += 1;
            }
            ']' if depth > 0 => {
                depth -= 1;
                if depth == 0 {
                    spans.push((start, i + 1));
                }
            }
            _ => {}
        }
    }
    spans
}

enum Candidate {
    NotMatrix,
    Matrix(Result<Grid, ParseError>),
}

/// Parses `[[a, b], [c, d]]` strictly. Anything that is not a list of lists of
/// bare tokens is `NotMatrix`; a list of lists with bad tokens is an error.
fn parse_matrix_literal(s: &str) -> Candidate {
    let inner = s.trim();
    let Some(inner) = inner.strip_prefix('[').and_then(|x| x.strip_suffix(']')) else {
        return Candidate::NotMatrix;
    };
    let inner = inner.trim().trim_end_matches(',').trim();
    if !inner.starts_with('[') {
        return Candidate::NotMatrix;
    }
    let mut rows: Vec<Vec<&str>> = Vec::new();
    let mut rest = inner;
    loop {
        rest = rest.trim_start();
        if rest.is_empty() {
            break;
        }
        let Some(r) = rest.strip_prefix('[') else {
            return Candidate::NotMatrix;
        };
        let Some(end) = r.find(']') else {
            return Candidate::NotMatrix;
        };
        let body = &r[..end];
        if body.contains('[') || body.contains('"') || body.contains('\'') {
            return Candidate::NotMatrix;
        }
        let toks: Vec<&str> = body.split(',').map(str::trim).filter(|t| !t.is_empty()).collect();
        rows.push(toks);
        rest = r[end + 1..].trim_start();
        if let Some(r2) = rest.strip_prefix(',') {
            rest = r2;
        } else if !rest.is_empty() {
            return Candidate::NotMatrix;
        }
    }
    if rows.is_empty() || rows.iter().all(|r| r.is_empty()) {
        return Candidate::NotMatrix;
    }
    // every token must at least look numeric for this to be a matrix candidate
    let numeric = |t: &str| t.chars().all(|c| c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E'));
    if rows.iter().flatten().any(|t| !numeric(t)) {
        return Candidate::NotMatrix;
    }
    Candidate::Matrix(build_grid(&rows))
}

fn build_grid(rows: &[Vec<&str>]) -> Result<Grid, ParseError> {
    let width = rows[0].len();
    let mut grid = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        if row.len() != width {
            return Err(ParseError::RowLengthMismatch { row: i, expected: width, got: row.len() });
        }
        let mut out = Vec::with_capacity(width);
        for tok in row {
            let v = match *tok {
                "0" => 0,
                "1" => 1,
                "2" => 2,
                other => return Err(ParseError::IllegalCell(other.to_string())),
            };
            out.push(v);
        }
        grid.push(out);
    }
    Ok(grid)
}

/// Last matrix candidate among the balanced lists that start at or after one of `anchors`.
fn last_matrix_after(text: &str, anchors: &[usize]) -> Option<Result<Grid, ParseError>> {
    let spans = balanced_lists(text);
    let mut found = None;
    for &a in anchors {
        if let Some(&(s, e)) = spans.iter().find(|(s, _)| *s >= a) {
            // the span must follow the anchor with nothing but separators in between
            let gap = &text[a..s];
            if gap.chars().all(|c| c.is_whitespace() || matches!(c, ':' | '=' | '"' | '\'')) {
                if let Candidate::Matrix(r) = parse_matrix_literal(&text[s..e]) {
                    found = Some(r);
                }
            }
        }
    }
    found
}

fn anchors(text: &str, re: &regex::Regex) -> Vec<usize> {
    re.find_iter(text).map(|m| m.end()).collect()
}

fn json_key_re() -> &'static regex::Regex {
    static RE: std::sync::OnceLock<regex::Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| regex::Regex::new(r#"(?i)"final[_ ]response"\s*:"#).unwrap())
}

fn marker_re() -> &'static regex::Regex {
    static RE: std::sync::OnceLock<regex::Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| regex::Regex::new(r"(?i)final[_ ]response\s*=").unwrap())
}

/// Extracts a DSM grid from a model reply.
///
/// Tried in order: a JSON `"final_response"` key, the `final response =` marker,
/// then any list of lists. Within a route the last candidate wins.
pub fn extract_matrix(text: &str, expected_n: Option<usize>) -> Result<Grid, ParseError> {
    let text = clean(text);
    let mut result = last_matrix_after(&text, &anchors(&text, json_key_re()))
        .or_else(|| last_matrix_after(&text, &anchors(&text, marker_re())));
    if result.is_none() {
        for (s, e) in balanced_lists(&text) {
            if let Candidate::Matrix(r) = parse_matrix_literal(&text[s..e]) {
                result = Some(r);
            }
        }
    }
    let grid = result.ok_or(ParseError::NoMatrixFound)??;
    if let Some(n) = expected_n {
        if grid.len() != n || grid[0].len() != n {
            return Err(ParseError::SizeMismatch { expected: n, got: grid.len() });
        }
    }
    Ok(grid)
}

/// Parses a flat list of quoted strings. `None` if the span is not one.
fn parse_string_list(s: &str) -> Option<Vec<String>> {
    let body = s.trim().strip_prefix('[')?.strip_suffix(']')?;
    let mut out = Vec::new();
    let mut chars = body.chars().peekable();
    loop {
        while chars.peek().is_some_and(|c| c.is_whitespace() || *c == ',') {
            chars.next();
        }
        let Some(q) = chars.next() else { break };
        if q != '"' && q != '\'' {
            return None;
        }
        let mut item = String::new();
        let mut closed = false;
        while let Some(c) = chars.next() {
            if c == '\\' {
                if let Some(n) = chars.next() {
                    item.push(n);
                }
            } else if c == q {
                closed = true;
                break;
            } else {
                item.push(c);
            }
        }
        if !closed {
            return None;
        }
        out.push(item);
        while chars.peek().is_some_and(|c| c.is_whitespace()) {
            chars.next();
        }
        match chars.peek() {
            None | Some(',') => {}
            Some(_) => return None,
        }
    }
    Some(out)
}

/// Extracts a list of component names.
///
/// Prefers the last list after a `final response` marker, otherwise the first
/// list of quoted strings in the text.
pub fn extract_components(text: &str, expected_k: Option<usize>) -> Result<Vec<String>, ParseError> {
    let text = clean(text);
    let spans = balanced_lists(&text);
    let mut chosen: Option<Vec<String>> = None;
    let mut marks = anchors(&text, marker_re());
    marks.extend(anchors(&text, json_key_re()));
    marks.sort_unstable();
    for a in marks {
        if let Some(&(s, e)) = spans.iter().find(|(s, _)| *s >= a) {
            if let Some(list) = parse_string_list(&text[s..e]) {
                if !list.is_empty() {
                    chosen = Some(list);
                }
            }
        }
    }
    if chosen.is_none() {
        chosen = spans
            .iter()
            .filter_map(|&(s, e)| parse_string_list(&text[s..e]))
            .find(|l| !l.is_empty());
    }
    let list = chosen.ok_or(ParseError::NoListFound)?;
    let mut out = Vec::with_capacity(list.len());
    for (i, item) in list.into_iter().enumerate() {
        let t = item.trim();
        if t.is_empty() {
            return Err(ParseError::EmptyEntry(i));
        }
        out.push(t.to_string());
    }
    if let Some(k) = expected_k {
        if out.len() != k {
            return Err(ParseError::CountMismatch { expected: k, got: out.len() });
        }
    }
    Ok(out)
}

/// Case-insensitive whole-word scan for `valid` / `invalid`; first occurrence wins.
pub fn parse_verdict(text: &str) -> Verdict {
    let text = strip_think(text).to_lowercase();
    let mut word = String::new();
    for ch in text.chars().chain(std::iter::once(' ')) {
        if ch.is_alphanumeric() || ch == '_' {
            word.push(ch);
            continue;
        }
        match word.as_str() {
            "valid" => return Verdict::Valid,
            "invalid" => return Verdict::Invalid,
            _ => word.clear(),
        }
    }
    Verdict::Unparseable
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn marker_format() {
        assert_eq!(
            extract_matrix("final response = [[1, 0],[0, 1]]", None).unwrap(),
            vec![vec![1, 0], vec![0, 1]]
        );
    }

    #[test]
    fn json_format() {
        assert_eq!(
            extract_matrix("{\"final_response\": [[1,2],[2,1]]}", Some(2)).unwrap(),
            vec![vec![1, 2], vec![2, 1]]
        );
    }

    #[test]
    fn ragged_rows_rejected() {
        assert_eq!(
            extract_matrix("```\n[[1,0],[0]]\n```", None),
            Err(ParseError::RowLengthMismatch { row: 1, expected: 2, got: 1 })
        );
    }

    #[test]
    fn float_cells_rejected() {
        assert_eq!(
            extract_matrix("final response = [[1.0, 0],[0, 1]]", None),
            Err(ParseError::IllegalCell("1.0".into()))
        );
        assert_eq!(
            extract_matrix("[[1, 3],[0, 1]]", None),
            Err(ParseError::IllegalCell("3".into()))
        );
    }

    #[test]
    fn size_checked() {
        assert_eq!(
            extract_matrix("[[1, 0],[0, 1]]", Some(3)),
            Err(ParseError::SizeMismatch { expected: 3, got: 2 })
        );
    }

    #[test]
    fn last_candidate_wins_and_think_is_stripped() {
        let text = "<think>maybe final response = [[1,1],[1,1]]</think>\n\
                    Draft: [[1,2],[2,1]]\nAfter checking:\nfinal response = [[1,2],[2,1]]\n\
                    Correction: final response = [[1,0],[0,1]]";
        assert_eq!(extract_matrix(text, Some(2)).unwrap(), vec![vec![1, 0], vec![0, 1]]);
    }

    #[test]
    fn latex_and_fences() {
        let text = "Here it is:\n```python\nfinal response = [[1, 1],\n [1, 1]]\n```";
        assert_eq!(extract_matrix(text, Some(2)).unwrap(), vec![vec![1, 1], vec![1, 1]]);
        let tex = "$$ [[1, 0], [0, 1]] $$";
        assert_eq!(extract_matrix(tex, Some(2)).unwrap(), vec![vec![1, 0], vec![0, 1]]);
    }

    #[test]
    fn no_matrix() {
        assert_eq!(extract_matrix("I don't know", None), Err(ParseError::NoMatrixFound));
        assert_eq!(extract_matrix("[\"a\", \"b\"]", None), Err(ParseError::NoMatrixFound));
        assert_eq!(extract_matrix("[[]]", None), Err(ParseError::NoMatrixFound));
    }

    #[test]
    fn components_basic() {
        assert_eq!(
            extract_components("final response = [ \"component 1\", \"component 2\" ]", None).unwrap(),
            vec!["component 1", "component 2"]
        );
    }

    #[test]
    fn components_empty_list() {
        assert_eq!(extract_components("[]", None), Err(ParseError::NoListFound));
    }

    #[test]
    fn components_fenced_with_count() {
        let text = "Sure! The components are:\n```json\n[\"Motor\", \"Housing\"]\n```\nHope this helps.";
        assert_eq!(extract_components(text, Some(2)).unwrap(), vec!["Motor", "Housing"]);
        assert_eq!(
            extract_components(text, Some(3)),
            Err(ParseError::CountMismatch { expected: 3, got: 2 })
        );
    }

    #[test]
    fn components_python_repr_and_empty_entry() {
        assert_eq!(
            extract_components("['Power', 'Payload']", None).unwrap(),
            vec!["Power", "Payload"]
        );
        assert_eq!(extract_components("[\"A\", \"  \"]", None), Err(ParseError::EmptyEntry(1)));
    }

    #[test]
    fn components_prefers_marker() {
        let text = "Example: [\"x\", \"y\"]\nfinal response = [\"Bit\", \"Motor\", \"Housing\"]";
        assert_eq!(extract_components(text, Some(3)).unwrap(), vec!["Bit", "Motor", "Housing"]);
    }

    #[test]
    fn verdicts() {
        assert_eq!(parse_verdict("Valid"), Verdict::Valid);
        assert_eq!(parse_verdict("  invalid\n"), Verdict::Invalid);
        assert_eq!(parse_verdict("The answer is Valid because…"), Verdict::Valid);
        assert_eq!(parse_verdict("Invalid. A valid response needs 7 rows"), Verdict::Invalid);
        assert_eq!(parse_verdict("validated"), Verdict::Unparseable);
        assert_eq!(parse_verdict(""), Verdict::Unparseable);
    }
}
