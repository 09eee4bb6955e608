/// Minimal answer normalization used for label assignment.
///
/// Strips surrounding whitespace, a leading `ANSWER:` tag, `\boxed{...}`
/// wrappers, dollar signs and trailing periods, collapses inner whitespace and
/// rewrites plain numbers to a canonical decimal form (`10.0` -> `10`).
pub fn canonicalize_answer(raw: &str) -> String {
    let mut s = raw.trim();
    if let Some(rest) = strip_prefix_ignore_case(s, "answer:") {
        s = rest.trim();
    }
    let mut s = unwrap_boxed(s.trim_end_matches('.').trim_end());
    s = s.replace("\\$", "").replace('$', "");
    let s = s.trim().trim_end_matches('.').trim();
    let collapsed = s.split_whitespace().collect::<Vec<_>>().join(" ");
    normalize_number(&collapsed).unwrap_or(collapsed)
}

fn strip_prefix_ignore_case<'a>(s: &'a str, prefix: &str) -> Option<&'a str> {
    let head = s.get(..prefix.len())?;
    head.eq_ignore_ascii_case(prefix)
        .then(|| &s[prefix.len()..])
}

fn unwrap_boxed(s: &str) -> String {
    let mut s = s.to_string();
    loop {
        let t = s.trim();
        let inner = ["\\boxed{", "\\fbox{"]
            .iter()
            .find_map(|p| t.strip_prefix(p))
            .and_then(|rest| rest.strip_suffix('}'));
        match inner {
            Some(inner) => s = inner.to_string(),
            None => return s,
        }
    }
}

fn normalize_number(s: &str) -> Option<String> {
    let body = s.strip_prefix(['-', '+']).unwrap_or(s);
    if body.is_empty()
        || !body
            .chars()
            .all(|c| c.is_ascii_digit() || c == '.' || c == ',')
    {
        return None;
    }
    if !body.chars().any(|c| c.is_ascii_digit()) {
        return None;
    }
    let unsigned = if body.contains(',') {
        let int_part = body.split('.').next().unwrap_or("");
        let groups: Vec<&str> = int_part.split(',').collect();
        let ok = !groups[0].is_empty()
            && groups[0].len() <= 3
            && groups[1..].iter().all(|g| g.len() == 3)
            && !body.split('.').nth(1).is_some_and(|f| f.contains(','));
        if !ok {
            return None;
        }
        body.replace(',', "")
    } else {
        body.to_string()
    };
    let value: f64 = unsigned.parse().ok()?;
    let value = if s.starts_with('-') { -value } else { value };
    if value == 0.0 {
        return Some("0".into());
    }
    if value.fract() == 0.0 && value.abs() < 1e15 {
        Some(format!("{}", value as i64))
    } else {
        Some(format!("{value}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn answer_tag_and_dollar() {
        assert_eq!(canonicalize_answer("ANSWER: \\$10"), "10");
        assert_eq!(canonicalize_answer("ANSWER: $10"), "10");
        assert_eq!(canonicalize_answer("  answer:   $10.00 "), "10");
    }

    #[test]
    fn empty_is_empty() {
        assert_eq!(canonicalize_answer(""), "");
        assert_eq!(canonicalize_answer("   "), "");
    }

    #[test]
    fn trailing_period() {
        assert_eq!(canonicalize_answer("7800."), canonicalize_answer("7800"));
        assert_eq!(canonicalize_answer("ANSWER: 7800"), "7800");
    }

    #[test]
    fn boxed_and_numbers() {
        assert_eq!(canonicalize_answer("\\boxed{1,820}"), "1820");
        assert_eq!(canonicalize_answer("10.0"), canonicalize_answer("10"));
        assert_eq!(canonicalize_answer("-0.50"), "-0.5");
        assert_eq!(canonicalize_answer("-0"), "0");
    }

    #[test]
    fn text_answers_collapse_whitespace() {
        assert_eq!(
            canonicalize_answer("  x  =   \\frac{1}{2} "),
            "x = \\frac{1}{2}"
        );
        assert_eq!(canonicalize_answer("1,82"), "1,82");
        assert_eq!(canonicalize_answer("."), "");
    }
}
