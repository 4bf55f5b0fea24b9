//! Query-string rewriting done by hand so untouched parts of a URL keep
//! their exact spelling (no added slashes, no re-encoding).

pub const REMOVED: &str = "_removed_";

/// Replace the value of every query parameter whose name satisfies
/// `matches` with `_removed_`. The fragment is preserved.
pub fn redact_query(url: &str, matches: impl Fn(&str) -> bool) -> String {
    let (before_frag, frag) = match url.find('#') {
        Some(i) => (&url[..i], Some(&url[i..])),
        None => (url, None),
    };
    let Some(q) = before_frag.find('?') else {
        return url.to_string();
    };
    let (base, query) = (&before_frag[..q], &before_frag[q + 1..]);
    let rewritten: Vec<String> = query
        .split('&')
        .map(|pair| {
            let name = pair.split_once('=').map_or(pair, |(n, _)| n);
            if !name.is_empty() && matches(&decode_name(name)) {
                format!("{name}={REMOVED}")
            } else {
                pair.to_string()
            }
        })
        .collect();
    let mut out = format!("{base}?{}", rewritten.join("&"));
    if let Some(f) = frag {
        out.push_str(f);
    }
    out
}

fn decode_name(name: &str) -> String {
    url::form_urlencoded::parse(name.as_bytes())
        .next()
        .map(|(k, _)| k.into_owned())
        .unwrap_or_else(|| name.to_string())
}

/// Query parameter names present in `url`, decoded.
pub fn query_names(url: &str) -> Vec<String> {
    let before_frag = url.split('#').next().unwrap_or("");
    match before_frag.split_once('?') {
        Some((_, q)) => q
            .split('&')
            .filter(|p| !p.is_empty())
            .map(|p| decode_name(p.split_once('=').map_or(p, |(n, _)| n)))
            .collect(),
        None => Vec::new(),
    }
}

/// Scheme and host (plus an explicit port) only.
pub fn truncate_to_origin(url: &str) -> String {
    if url.is_empty() {
        return String::new();
    }
    match url::Url::parse(url) {
        Ok(u) if u.host_str().is_some() => {
            let mut out = format!("{}://{}", u.scheme(), u.host_str().unwrap_or_default());
            if let Some(port) = u.port() {
                out.push_str(&format!(":{port}"));
            }
            out
        }
        _ => {
            let start = url.find("://").map_or(0, |i| i + 3);
            let end = url[start..]
                .find(['/', '?', '#'])
                .map_or(url.len(), |i| start + i);
            url[..end].to_string()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example() {
        let out = redact_query("https://www.example.com?lat=40.00&lng=35.00", |n| {
            n == "lat" || n == "lng"
        });
        assert_eq!(out, "https://www.example.com?lat=_removed_&lng=_removed_");
    }

    #[test]
    fn untouched_parameters_and_fragment() {
        let out = redact_query("https://a.org/p?x=1&lat=2&flag#top", |n| n == "lat");
        assert_eq!(out, "https://a.org/p?x=1&lat=_removed_&flag#top");
        assert_eq!(redact_query("https://a.org/p", |_| true), "https://a.org/p");
        assert_eq!(redact_query("https://a.org/?flag", |_| true), "https://a.org/?flag=_removed_");
    }

    #[test]
    fn encoded_names_match_decoded() {
        let out = redact_query("https://a.org/?first%20name=Bo", |n| n == "first name");
        assert_eq!(out, "https://a.org/?first%20name=_removed_");
        assert_eq!(query_names("https://a.org/?a=1&b%5B%5D=2#x"), ["a", "b[]"]);
    }

    #[test]
    fn origin_truncation() {
        assert_eq!(truncate_to_origin("https://host.org/a/b?q=flu"), "https://host.org");
        assert_eq!(truncate_to_origin("http://h.org:8080/x"), "http://h.org:8080");
        assert_eq!(truncate_to_origin("https://h.org"), "https://h.org");
        assert_eq!(truncate_to_origin(""), "");
    }
}
