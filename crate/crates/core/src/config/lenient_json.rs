//! Decoding of JS object-literal payloads that are "almost JSON": single
//! quotes, unquoted keys, comments, trailing commas, `!0`/`!1` and elided
//! `...` segments are normalized before handing the text to serde_json.

use serde_json::Value;

use super::scanner::{skip_comment, skip_string, unquote_js};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Str(String),
    Punct(u8),
    Word(String),
}

fn tokenize(text: &str) -> Result<Vec<Tok>, String> {
    let src = text.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < src.len() {
        let b = src[i];
        match b {
            b'"' | b'\'' | b'`' => {
                let end = skip_string(src, i);
                let lit = &text[i..end];
                let s = unquote_js(lit).ok_or_else(|| format!("bad string literal at {i}"))?;
                toks.push(Tok::Str(s));
                i = end;
            }
            b'/' => match skip_comment(src, i) {
                Some(end) => i = end,
                None => return Err(format!("unexpected '/' at {i}")),
            },
            b'{' | b'}' | b'[' | b']' | b':' | b',' => {
                toks.push(Tok::Punct(b));
                i += 1;
            }
            b'.' if src[i..].starts_with(b"...") => i += 3,
            b if b.is_ascii_whitespace() || b == b';' => i += 1,
            _ => {
                let start = i;
                while i < src.len()
                    && !src[i].is_ascii_whitespace()
                    && !b"{}[]:,\"'`;".contains(&src[i])
                    && !(src[i] == b'/' && skip_comment(src, i).is_some())
                    && !src[i..].starts_with(b"...")
                {
                    i += 1;
                }
                toks.push(Tok::Word(text[start..i].to_string()));
            }
        }
    }
    Ok(toks)
}

fn word_to_json(w: &str) -> Result<String, String> {
    match w {
        "true" | "!0" => Ok("true".into()),
        "false" | "!1" => Ok("false".into()),
        "null" | "undefined" => Ok("null".into()),
        _ => {
            let n: serde_json::Number = w
                .parse()
                .map_err(|_| format!("unsupported bare token {w:?}"))?;
            Ok(n.to_string())
        }
    }
}

fn is_key_word(w: &str) -> bool {
    let b = w.as_bytes();
    !b.is_empty()
        && (b[0].is_ascii_alphabetic() || b[0] == b'_' || b[0] == b'$' || b[0].is_ascii_digit())
        && b.iter().all(|c| c.is_ascii_alphanumeric() || *c == b'_' || *c == b'$')
}

/// Parse a lenient payload into a JSON value.
pub fn parse_lenient(text: &str) -> Result<Value, String> {
    if let Ok(v) = serde_json::from_str(text) {
        return Ok(v);
    }
    let toks = tokenize(text)?;
    let mut out = String::with_capacity(text.len());
    // last emitted significant token, for comma placement
    let mut last: Option<u8> = None;
    let mut pending_comma = false;
    let mut stack: Vec<u8> = Vec::new();

    for (idx, tok) in toks.iter().enumerate() {
        let next_is_colon = matches!(toks.get(idx + 1), Some(Tok::Punct(b':')));
        if let Tok::Punct(b',') = tok {
            pending_comma = true;
            continue;
        }
        let closes = matches!(tok, Tok::Punct(b'}') | Tok::Punct(b']'));
        if pending_comma && !closes && !matches!(last, None | Some(b'{') | Some(b'[') | Some(b',')) {
            out.push(',');
        }
        pending_comma = false;
        match tok {
            Tok::Str(s) => {
                out.push_str(&serde_json::to_string(s).expect("string serializes"));
                last = Some(b'"');
            }
            Tok::Word(w) => {
                let in_object = stack.last() == Some(&b'{');
                if in_object && next_is_colon && is_key_word(w) {
                    out.push_str(&serde_json::to_string(w).expect("string serializes"));
                } else {
                    out.push_str(&word_to_json(w)?);
                }
                last = Some(b'w');
            }
            Tok::Punct(p) => {
                match p {
                    b'{' | b'[' => stack.push(*p),
                    b'}' | b']' => {
                        stack.pop();
                    }
                    _ => {}
                }
                out.push(*p as char);
                last = Some(*p);
            }
        }
    }
    serde_json::from_str(&out).map_err(|e| format!("{e} in normalized payload"))
}
