//! `key = value` text files: one pair per line, `#` starts a comment.

use std::str::FromStr;

use crate::error::{Error, Result};

pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {}: expected `key = value`, got `{raw}`", i + 1)));
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn render<K: AsRef<str>, V: AsRef<str>>(pairs: impl IntoIterator<Item = (K, V)>) -> String {
    let mut s = String::new();
    for (k, v) in pairs {
        s.push_str(k.as_ref());
        s.push_str(" = ");
        s.push_str(v.as_ref());
        s.push('\n');
    }
    s
}

pub fn value<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse `{v}`")))
}

pub fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got `{v}`"))),
    }
}

/// `224x176` → `(224, 176)`.
pub fn size(key: &str, v: &str) -> Result<(usize, usize)> {
    let (h, w) = v
        .split_once(['x', 'X'])
        .ok_or_else(|| Error::Config(format!("{key}: expected HxW, got `{v}`")))?;
    Ok((value(key, h.trim())?, value(key, w.trim())?))
}

pub fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').filter(|s| !s.trim().is_empty()).map(|s| value(key, s.trim())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let kv = parse("# header\n a = 1 \n\nb=x # trailing\n").unwrap();
        assert_eq!(kv, vec![("a".into(), "1".into()), ("b".into(), "x".into())]);
        assert!(parse("novalue\n").is_err());
    }

    #[test]
    fn helpers() {
        assert_eq!(size("s", "224x176").unwrap(), (224, 176));
        assert_eq!(list::<usize>("r", "1, 6,12").unwrap(), vec![1, 6, 12]);
        assert!(flag("f", "maybe").is_err());
        assert_eq!(render([("a", "1")]), "a = 1\n");
    }
}
