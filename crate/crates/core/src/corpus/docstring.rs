//! Docstring extraction for the docstring-as-first-statement convention
//! (`def` / `class` bodies whose first statement is a string literal).

/// Splits a single function definition into `(docstring, code without it)`.
///
/// The docstring is returned with its quotes (and any `r`/`u` prefix) removed
/// and surrounding whitespace trimmed; inner characters are kept verbatim.
/// Returns `None` when the body does not open with a string literal.
pub fn extract_docstring(source: &str) -> Option<(String, String)> {
    let bytes = source.as_bytes();
    let header = find_header(source)?;
    let colon = find_body_colon(bytes, header)?;
    let start = skip_to_first_statement(bytes, colon + 1)?;
    let lit = parse_literal(bytes, start)?;

    // the literal must be the whole statement
    let mut after = lit.end;
    while after < bytes.len() && matches!(bytes[after], b' ' | b'\t') {
        after += 1;
    }
    let mut cut_end = lit.end;
    match bytes.get(after) {
        None | Some(b'\n') | Some(b'\r') | Some(b'#') => {}
        Some(b';') => {
            cut_end = after + 1;
            while cut_end < bytes.len() && matches!(bytes[cut_end], b' ' | b'\t') {
                cut_end += 1;
            }
        }
        Some(_) => return None,
    }

    let text = source[lit.content_start..lit.content_end]
        .trim()
        .to_string();

    // drop the whole line when the literal was alone on it
    let line_start = source[..start].rfind('\n').map_or(0, |p| p + 1);
    let only_indent_before = source[line_start..start]
        .chars()
        .all(|c| c == ' ' || c == '\t');
    let line_end = source[cut_end..]
        .find('\n')
        .map_or(source.len(), |p| cut_end + p + 1);
    let rest_blank = source[cut_end..line_end].trim().is_empty();
    let code = if only_indent_before && rest_blank && line_start > 0 {
        format!("{}{}", &source[..line_start], &source[line_end..])
    } else {
        format!("{}{}", &source[..start], &source[cut_end..])
    };
    Some((text, code))
}

fn find_header(source: &str) -> Option<usize> {
    let mut offset = 0;
    for line in source.split_inclusive('\n') {
        let trimmed = line.trim_start();
        let indent = line.len() - trimmed.len();
        for kw in ["async def ", "def ", "class "] {
            if trimmed.starts_with(kw) {
                return Some(offset + indent + kw.len());
            }
        }
        offset += line.len();
    }
    None
}

fn find_body_colon(bytes: &[u8], from: usize) -> Option<usize> {
    let mut depth = 0i32;
    let mut i = from;
    while i < bytes.len() {
        match bytes[i] {
            b'(' | b'[' | b'{' => depth += 1,
            b')' | b']' | b'}' => depth -= 1,
            b'"' | b'\'' => {
                i = parse_literal(bytes, i)?.end;
                continue;
            }
            b'#' => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
                continue;
            }
            b':' if depth == 0 => return Some(i),
            _ => {}
        }
        i += 1;
    }
    None
}

fn skip_to_first_statement(bytes: &[u8], mut i: usize) -> Option<usize> {
    while i < bytes.len() {
        match bytes[i] {
            b' ' | b'\t' | b'\r' | b'\n' => i += 1,
            b'\\' if bytes.get(i + 1) == Some(&b'\n') => i += 2,
            b'#' => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            _ => return Some(i),
        }
    }
    None
}

struct Literal {
    content_start: usize,
    content_end: usize,
    end: usize,
}

/// Parses a plain, raw or unicode string literal starting at `i` (prefix
/// included). Byte strings and f-strings are not docstrings.
fn parse_literal(bytes: &[u8], i: usize) -> Option<Literal> {
    let mut q = i;
    while q < bytes.len() && q - i < 2 && matches!(bytes[q], b'r' | b'R' | b'u' | b'U') {
        q += 1;
    }
    let quote = *bytes.get(q)?;
    if quote != b'"' && quote != b'\'' {
        return None;
    }
    let triple = bytes.get(q + 1) == Some(&quote) && bytes.get(q + 2) == Some(&quote);
    let content_start = q + if triple { 3 } else { 1 };
    let mut j = content_start;
    while j < bytes.len() {
        match bytes[j] {
            b'\\' => j += 2,
            b'\n' if !triple => return None,
            c if c == quote => {
                if !triple {
                    return Some(Literal {
                        content_start,
                        content_end: j,
                        end: j + 1,
                    });
                }
                if bytes.get(j + 1) == Some(&quote) && bytes.get(j + 2) == Some(&quote) {
                    return Some(Literal {
                        content_start,
                        content_end: j,
                        end: j + 3,
                    });
                }
                j += 1;
            }
            _ => j += 1,
        }
    }
    None
}
