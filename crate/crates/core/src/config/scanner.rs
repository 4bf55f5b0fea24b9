//! String-, comment- and regex-literal aware scanning over minified script
//! text. Only the three structured call shapes are located; everything else
//! is skipped without being understood.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CallKind {
    /// `instance.optIn(<pixel>, <name>, <bool>)`
    OptIn,
    /// `config.set(<pixel>, <name>, <json>)`
    ConfigSet,
    /// `fbq.set(<name>, <pixel>, <json>)`
    FbqSet,
}

impl CallKind {
    fn from_head(head: &str) -> Option<Self> {
        match head {
            "instance.optIn" => Some(Self::OptIn),
            "config.set" => Some(Self::ConfigSet),
            "fbq.set" => Some(Self::FbqSet),
            _ => None,
        }
    }

    pub fn head(self) -> &'static str {
        match self {
            Self::OptIn => "instance.optIn",
            Self::ConfigSet => "config.set",
            Self::FbqSet => "fbq.set",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Call<'a> {
    pub kind: CallKind,
    /// Byte offset of the call head.
    pub offset: usize,
    pub args: Vec<&'a str>,
}

/// Outcome of scanning: located calls plus byte offsets of call heads whose
/// argument list never closed.
#[derive(Debug, Default)]
pub struct ScanOutcome<'a> {
    pub calls: Vec<Call<'a>>,
    pub unterminated: Vec<usize>,
}

fn is_ident_start(b: u8) -> bool {
    b.is_ascii_alphabetic() || b == b'_' || b == b'$'
}

fn is_ident_char(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_' || b == b'$'
}

/// Whether a `/` following `prev` (last significant byte) starts a regex literal.
fn regex_allowed(prev: Option<u8>) -> bool {
    match prev {
        None => true,
        Some(b) => b"(,=:[!&|?{};+-*%<>~^".contains(&b),
    }
}

/// End (exclusive) of the string literal starting at `i`. Unterminated
/// single/double-quoted strings end at the line break.
pub(crate) fn skip_string(src: &[u8], i: usize) -> usize {
    let q = src[i];
    let mut j = i + 1;
    while j < src.len() {
        match src[j] {
            b'\\' => j += 2,
            b'\n' if q != b'`' => return j,
            b if b == q => return j + 1,
            _ => j += 1,
        }
    }
    src.len()
}

/// If a comment starts at `i`, return its end (exclusive).
pub(crate) fn skip_comment(src: &[u8], i: usize) -> Option<usize> {
    if src.get(i) != Some(&b'/') {
        return None;
    }
    match src.get(i + 1) {
        Some(b'/') => Some(
            src[i..]
                .iter()
                .position(|&b| b == b'\n')
                .map_or(src.len(), |p| i + p),
        ),
        Some(b'*') => Some(
            src[i + 2..]
                .windows(2)
                .position(|w| w == b"*/")
                .map_or(src.len(), |p| i + 2 + p + 2),
        ),
        _ => None,
    }
}

fn skip_regex(src: &[u8], i: usize) -> usize {
    let mut j = i + 1;
    let mut in_class = false;
    while j < src.len() {
        match src[j] {
            b'\\' => j += 2,
            b'\n' => return j,
            b'[' => {
                in_class = true;
                j += 1
            }
            b']' => {
                in_class = false;
                j += 1
            }
            b'/' if !in_class => {
                j += 1;
                while j < src.len() && src[j].is_ascii_alphabetic() {
                    j += 1;
                }
                return j;
            }
            _ => j += 1,
        }
    }
    src.len()
}

/// Split the argument list whose `(` is at `open`. Returns the top-level
/// argument slices and the index just past the closing `)`.
fn split_args(text: &str, open: usize) -> Option<(Vec<&str>, usize)> {
    let src = text.as_bytes();
    let mut depth = 0usize;
    let mut args = Vec::new();
    let mut start = open + 1;
    let mut prev: Option<u8> = Some(b'(');
    let mut j = open + 1;
    while j < src.len() {
        let b = src[j];
        match b {
            b'"' | b'\'' | b'`' => {
                j = skip_string(src, j);
                prev = Some(b);
                continue;
            }
            b'/' => {
                if let Some(end) = skip_comment(src, j) {
                    j = end;
                    continue;
                }
                if regex_allowed(prev) {
                    j = skip_regex(src, j);
                    prev = Some(b'/');
                    continue;
                }
            }
            b'(' | b'[' | b'{' => depth += 1,
            b')' | b']' | b'}' => {
                if depth == 0 {
                    if b != b')' {
                        return None;
                    }
                    let last = text[start..j].trim();
                    if !last.is_empty() || !args.is_empty() {
                        args.push(last);
                    }
                    return Some((args, j + 1));
                }
                depth -= 1;
            }
            b',' if depth == 0 => {
                args.push(text[start..j].trim());
                start = j + 1;
            }
            _ => {}
        }
        if !b.is_ascii_whitespace() {
            prev = Some(b);
        }
        j += 1;
    }
    None
}

/// Locate every structured call in `text`.
pub fn find_calls(text: &str) -> ScanOutcome<'_> {
    let src = text.as_bytes();
    let mut out = ScanOutcome::default();
    let mut prev: Option<u8> = None;
    let mut i = 0;
    while i < src.len() {
        let b = src[i];
        match b {
            b'"' | b'\'' | b'`' => {
                i = skip_string(src, i);
                prev = Some(b);
            }
            b'/' => {
                if let Some(end) = skip_comment(src, i) {
                    i = end;
                } else if regex_allowed(prev) {
                    i = skip_regex(src, i);
                    prev = Some(b'/');
                } else {
                    prev = Some(b);
                    i += 1;
                }
            }
            b if is_ident_start(b) && !(i > 0 && is_ident_char(src[i - 1])) => {
                let mut j = i;
                while j < src.len() && (is_ident_char(src[j]) || src[j] == b'.') {
                    j += 1;
                }
                let head = &text[i..j];
                let preceded_by_dot = i > 0 && src[i - 1] == b'.';
                let mut k = j;
                while k < src.len() && src[k].is_ascii_whitespace() {
                    k += 1;
                }
                match CallKind::from_head(head) {
                    Some(kind) if !preceded_by_dot && src.get(k) == Some(&b'(') => {
                        match split_args(text, k) {
                            Some((args, end)) => {
                                out.calls.push(Call {
                                    kind,
                                    offset: i,
                                    args,
                                });
                                i = end;
                                prev = Some(b')');
                            }
                            None => {
                                out.unterminated.push(i);
                                i = k + 1;
                                prev = Some(b'(');
                            }
                        }
                    }
                    _ => {
                        i = j;
                        prev = Some(src[j - 1]);
                    }
                }
            }
            b if b.is_ascii_whitespace() => i += 1,
            _ => {
                prev = Some(b);
                i += 1;
            }
        }
    }
    out
}

/// Decode a JS string literal (quotes included). `None` if `lit` is not one.
pub fn unquote_js(lit: &str) -> Option<String> {
    let bytes = lit.as_bytes();
    let q = *bytes.first()?;
    if !matches!(q, b'"' | b'\'' | b'`') || bytes.len() < 2 || *bytes.last()? != q {
        return None;
    }
    let inner = &lit[1..lit.len() - 1];
    let mut out = String::with_capacity(inner.len());
    let mut chars = inner.chars().peekable();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next()? {
            'n' => out.push('\n'),
            't' => out.push('\t'),
            'r' => out.push('\r'),
            'b' => out.push('\u{8}'),
            'f' => out.push('\u{c}'),
            'v' => out.push('\u{b}'),
            '0' => out.push('\0'),
            '\n' => {}
            'x' => {
                let hex: String = (0..2).filter_map(|_| chars.next()).collect();
                out.push(char::from_u32(u32::from_str_radix(&hex, 16).ok()?)?);
            }
            'u' => {
                let code = if chars.peek() == Some(&'{') {
                    chars.next();
                    let hex: String = chars.by_ref().take_while(|&c| c != '}').collect();
                    u32::from_str_radix(&hex, 16).ok()?
                } else {
                    let hex: String = (0..4).filter_map(|_| chars.next()).collect();
                    let hi = u32::from_str_radix(&hex, 16).ok()?;
                    if (0xD800..0xDC00).contains(&hi) {
                        // surrogate pair
                        let mut rest = chars.clone();
                        if rest.next() == Some('\\') && rest.next() == Some('u') {
                            let lo_hex: String = (0..4).filter_map(|_| rest.next()).collect();
                            if let Ok(lo) = u32::from_str_radix(&lo_hex, 16) {
                                if (0xDC00..0xE000).contains(&lo) {
                                    chars = rest;
                                    0x10000 + ((hi - 0xD800) << 10) + (lo - 0xDC00)
                                } else {
                                    0xFFFD
                                }
                            } else {
                                0xFFFD
                            }
                        } else {
                            0xFFFD
                        }
                    } else {
                        hi
                    }
                };
                out.push(char::from_u32(code).unwrap_or('\u{FFFD}'));
            }
            other => out.push(other),
        }
    }
    Some(out)
}
