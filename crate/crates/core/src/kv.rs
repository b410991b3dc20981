//! `key=value` text format shared by run configs and dataset manifests.
//!
//! Blank lines and lines starting with `#` are ignored. Values are trimmed unless written in
//! double quotes, where `\"`, `\\` and `\n` are the only escapes.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

pub fn parse(text: &str, source_name: &str) -> Result<Vec<Entry>> {
    let mut out: Vec<Entry> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let err = |key: &str, message: String| Error::Config {
            source_name: source_name.to_string(),
            line,
            key: key.to_string(),
            message,
        };
        let Some((key, value)) = trimmed.split_once('=') else {
            return Err(err(trimmed, "expected key=value".into()));
        };
        let key = key.trim();
        if key.is_empty() {
            return Err(err(key, "empty key".into()));
        }
        if let Some(prev) = out.iter().find(|e| e.key == key) {
            return Err(err(key, format!("duplicate key (first set on line {})", prev.line)));
        }
        let value = unquote(value.trim()).map_err(|m| err(key, m))?;
        out.push(Entry {
            key: key.to_string(),
            value,
            line,
        });
    }
    Ok(out)
}

fn unquote(v: &str) -> std::result::Result<String, String> {
    let Some(inner) = v.strip_prefix('"') else {
        return Ok(v.to_string());
    };
    let Some(inner) = inner.strip_suffix('"') else {
        return Err("unterminated quoted value".into());
    };
    let mut out = String::with_capacity(inner.len());
    let mut chars = inner.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('"') => out.push('"'),
            Some('\\') => out.push('\\'),
            Some('n') => out.push('\n'),
            other => return Err(format!("unknown escape \\{}", other.map(String::from).unwrap_or_default())),
        }
    }
    Ok(out)
}

/// Quotes `v` so that [`parse`] returns it verbatim.
pub fn quote(v: &str) -> String {
    let mut out = String::from("\"");
    for c in v.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Typed access to parsed entries that reports the offending key and line on failure.
pub struct Reader<'a> {
    source_name: &'a str,
    entries: Vec<Entry>,
    used: Vec<bool>,
}

impl<'a> Reader<'a> {
    pub fn new(text: &str, source_name: &'a str) -> Result<Self> {
        let entries = parse(text, source_name)?;
        let used = vec![false; entries.len()];
        Ok(Reader {
            source_name,
            entries,
            used,
        })
    }

    pub fn error(&self, key: &str, message: impl Into<String>) -> Error {
        let line = self.entries.iter().find(|e| e.key == key).map_or(0, |e| e.line);
        Error::Config {
            source_name: self.source_name.to_string(),
            line,
            key: key.to_string(),
            message: message.into(),
        }
    }

    pub fn raw(&mut self, key: &str) -> Option<&str> {
        let i = self.entries.iter().position(|e| e.key == key)?;
        self.used[i] = true;
        Some(&self.entries[i].value)
    }

    /// Parses `key` with `FromStr`, falling back to `default` when absent.
    pub fn get<V: std::str::FromStr>(&mut self, key: &str, default: V) -> Result<V>
    where
        V::Err: std::fmt::Display,
    {
        match self.raw(key).map(str::to_string) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e| self.error(key, format!("cannot parse {v:?}: {e}"))),
        }
    }

    pub fn require<V: std::str::FromStr>(&mut self, key: &str) -> Result<V>
    where
        V::Err: std::fmt::Display,
    {
        match self.raw(key).map(str::to_string) {
            None => Err(Error::Config {
                source_name: self.source_name.to_string(),
                line: 0,
                key: key.to_string(),
                message: "missing required key".into(),
            }),
            Some(v) => v.parse().map_err(|e| self.error(key, format!("cannot parse {v:?}: {e}"))),
        }
    }

    /// Comma-separated list; empty string is an empty list.
    pub fn list<V: std::str::FromStr>(&mut self, key: &str, default: Vec<V>) -> Result<Vec<V>>
    where
        V::Err: std::fmt::Display,
    {
        let Some(v) = self.raw(key).map(str::to_string) else {
            return Ok(default);
        };
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| self.error(key, format!("cannot parse {s:?}: {e}"))))
            .collect()
    }

    /// Fails on the first key nobody asked for.
    pub fn finish(self) -> Result<()> {
        match self.entries.iter().zip(&self.used).find(|(_, &u)| !u) {
            None => Ok(()),
            Some((e, _)) => Err(Error::Config {
                source_name: self.source_name.to_string(),
                line: e.line,
                key: e.key.clone(),
                message: "unknown key".into(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_quotes_and_lines() {
        let text = "# header\n\nlr = 0.01\nalphabet=\" ab\\\"c\"\n";
        let e = parse(text, "cfg").unwrap();
        assert_eq!(e[0], Entry { key: "lr".into(), value: "0.01".into(), line: 3 });
        assert_eq!(e[1].value, " ab\"c");
    }

    #[test]
    fn quote_round_trips() {
        for s in [" ,.ab", "a\"b\\c\nd", ""] {
            let text = format!("k={}", quote(s));
            assert_eq!(parse(&text, "x").unwrap()[0].value, s);
        }
    }

    #[test]
    fn errors_name_key_and_line() {
        let err = parse("a=1\nbroken\n", "cfg").unwrap_err();
        assert_eq!(err.to_string(), "cfg:2: key `broken`: expected key=value");
        let err = parse("a=1\na=2\n", "cfg").unwrap_err();
        assert!(err.to_string().starts_with("cfg:2: key `a`: duplicate"));

        let mut r = Reader::new("a=1\nzzz=2\n", "cfg").unwrap();
        let bad: Result<f64> = Reader::new("a=x\n", "cfg").unwrap().get("a", 0.0);
        assert!(bad.unwrap_err().to_string().starts_with("cfg:1: key `a`"));
        assert_eq!(r.get("a", 0usize).unwrap(), 1);
        assert_eq!(r.finish().unwrap_err().to_string(), "cfg:2: key `zzz`: unknown key");
    }
}
