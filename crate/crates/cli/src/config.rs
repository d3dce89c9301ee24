//! Flat `key = value` configuration files with `[section]` headers.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crate::error::CliError;

#[derive(Clone, Debug)]
struct Entry {
    value: String,
    line: usize,
}

#[derive(Debug)]
pub struct Config {
    path: PathBuf,
    sections: BTreeMap<String, BTreeMap<String, Entry>>,
    used: Mutex<BTreeSet<(String, String)>>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self, CliError> {
        let mut sections: BTreeMap<String, BTreeMap<String, Entry>> = BTreeMap::new();
        let mut current = String::new();
        sections.insert(current.clone(), BTreeMap::new());
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let s = strip_comment(raw).trim();
            if s.is_empty() {
                continue;
            }
            if let Some(rest) = s.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| CliError::Config(format!("{}:{line}: unterminated section header", path.display())))?
                    .trim();
                if name.is_empty() {
                    return Err(CliError::Config(format!("{}:{line}: empty section name", path.display())));
                }
                current = name.to_lowercase();
                sections.entry(current.clone()).or_default();
                continue;
            }
            let (key, value) = s
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("{}:{line}: expected key = value", path.display())))?;
            let key = key.trim().to_lowercase();
            if key.is_empty() {
                return Err(CliError::Config(format!("{}:{line}: empty key", path.display())));
            }
            let sec = sections.get_mut(&current).expect("section exists");
            if let Some(prev) = sec.get(&key) {
                return Err(CliError::Config(format!(
                    "{}:{line}: duplicate key {key} (first set on line {})",
                    path.display(),
                    prev.line
                )));
            }
            sec.insert(
                key,
                Entry {
                    value: value.trim().to_string(),
                    line,
                },
            );
        }
        Ok(Config {
            path: path.to_path_buf(),
            sections,
            used: Mutex::new(BTreeSet::new()),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Resolves a path given in the config relative to the config's directory.
    pub fn resolve(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.path.parent().unwrap_or(Path::new(".")).join(p)
        }
    }

    fn entry(&self, section: &str, key: &str) -> Option<&Entry> {
        let e = self.sections.get(section)?.get(key)?;
        self.used.lock().expect("config lock").insert((section.to_string(), key.to_string()));
        Some(e)
    }

    fn err(&self, section: &str, key: &str, e: &Entry, what: &str) -> CliError {
        CliError::Config(format!(
            "{}:{}: [{section}] {key} = {:?} is not {what}",
            self.path.display(),
            e.line,
            e.value
        ))
    }

    pub fn str(&self, section: &str, key: &str) -> Option<String> {
        self.entry(section, key).map(|e| e.value.clone())
    }

    pub fn str_or(&self, section: &str, key: &str, default: &str) -> String {
        self.str(section, key).unwrap_or_else(|| default.to_string())
    }

    pub fn require(&self, section: &str, key: &str) -> Result<String, CliError> {
        self.str(section, key)
            .ok_or_else(|| CliError::Config(format!("{}: missing [{section}] {key}", self.path.display())))
    }

    pub fn f64(&self, section: &str, key: &str) -> Result<Option<f64>, CliError> {
        match self.entry(section, key) {
            None => Ok(None),
            Some(e) => match e.value.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(Some(v)),
                _ => Err(self.err(section, key, e, "a finite number")),
            },
        }
    }

    pub fn f64_or(&self, section: &str, key: &str, default: f64) -> Result<f64, CliError> {
        Ok(self.f64(section, key)?.unwrap_or(default))
    }

    pub fn usize_or(&self, section: &str, key: &str, default: usize) -> Result<usize, CliError> {
        match self.entry(section, key) {
            None => Ok(default),
            Some(e) => e.value.parse().map_err(|_| self.err(section, key, e, "a nonnegative integer")),
        }
    }

    pub fn u64_or(&self, section: &str, key: &str, default: u64) -> Result<u64, CliError> {
        match self.entry(section, key) {
            None => Ok(default),
            Some(e) => e.value.parse().map_err(|_| self.err(section, key, e, "a nonnegative integer")),
        }
    }

    pub fn bool_or(&self, section: &str, key: &str, default: bool) -> Result<bool, CliError> {
        match self.entry(section, key) {
            None => Ok(default),
            Some(e) => match e.value.to_lowercase().as_str() {
                "true" | "yes" | "1" | "on" => Ok(true),
                "false" | "no" | "0" | "off" => Ok(false),
                _ => Err(self.err(section, key, e, "a boolean")),
            },
        }
    }

    /// Comma-separated numbers.
    pub fn f64_list(&self, section: &str, key: &str) -> Result<Option<Vec<f64>>, CliError> {
        match self.entry(section, key) {
            None => Ok(None),
            Some(e) => {
                let mut out = Vec::new();
                for part in e.value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                    match part.parse::<f64>() {
                        Ok(v) if v.is_finite() => out.push(v),
                        _ => return Err(self.err(section, key, e, "a comma-separated list of numbers")),
                    }
                }
                Ok(Some(out))
            }
        }
    }

    pub fn usize_list(&self, section: &str, key: &str) -> Result<Option<Vec<usize>>, CliError> {
        match self.entry(section, key) {
            None => Ok(None),
            Some(e) => e
                .value
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<usize>().map_err(|_| self.err(section, key, e, "a comma-separated list of integers")))
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
        }
    }

    pub fn point(&self, section: &str, key: &str) -> Result<Option<[f64; 3]>, CliError> {
        match self.f64_list(section, key)? {
            None => Ok(None),
            Some(v) if v.len() == 3 => Ok(Some([v[0], v[1], v[2]])),
            Some(_) => {
                let e = self.entry(section, key).expect("present");
                Err(self.err(section, key, e, "three comma-separated coordinates"))
            }
        }
    }

    /// Points separated by `;`, coordinates by `,`.
    pub fn points(&self, section: &str, key: &str) -> Result<Vec<[f64; 3]>, CliError> {
        let Some(e) = self.entry(section, key) else {
            return Ok(Vec::new());
        };
        let mut out = Vec::new();
        for chunk in e.value.split(';').map(str::trim).filter(|s| !s.is_empty()) {
            let c: Result<Vec<f64>, _> = chunk.split(',').map(|s| s.trim().parse::<f64>()).collect();
            match c {
                Ok(c) if c.len() == 3 && c.iter().all(|v| v.is_finite()) => out.push([c[0], c[1], c[2]]),
                _ => return Err(self.err(section, key, e, "a list of x,y,z points separated by ';'")),
            }
        }
        Ok(out)
    }

    /// Fails on keys no command looked at.
    pub fn check_unused(&self) -> Result<(), CliError> {
        let used = self.used.lock().expect("config lock");
        let mut unknown = Vec::new();
        for (sec, keys) in &self.sections {
            for (k, e) in keys {
                if !used.contains(&(sec.clone(), k.clone())) {
                    let name = if sec.is_empty() { k.clone() } else { format!("[{sec}] {k}") };
                    unknown.push(format!("{name} (line {})", e.line));
                }
            }
        }
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(format!(
                "{}: unknown or unused keys: {}",
                self.path.display(),
                unknown.join(", ")
            )))
        }
    }
}

fn strip_comment(s: &str) -> &str {
    if s.trim_start().starts_with(';') {
        return "";
    }
    let cut = s.find('#').filter(|&i| i == 0 || s[..i].ends_with(char::is_whitespace));
    match cut {
        Some(i) => &s[..i],
        None => s,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(t: &str) -> Result<Config, CliError> {
        Config::parse(t, Path::new("test.cfg"))
    }

    #[test]
    fn sections_and_comments() {
        let c = parse("top = 1\n# note\n[Mesh]\nlevel = 2 # trailing\npoints = 0,0,0.5; 1,2,3\n").unwrap();
        assert_eq!(c.usize_or("", "top", 0).unwrap(), 1);
        assert_eq!(c.usize_or("mesh", "level", 0).unwrap(), 2);
        assert_eq!(c.points("mesh", "points").unwrap(), vec![[0.0, 0.0, 0.5], [1.0, 2.0, 3.0]]);
        c.check_unused().unwrap();
    }

    #[test]
    fn errors() {
        assert!(parse("[mesh\n").is_err());
        assert!(parse("a = 1\na = 2\n").is_err());
        assert!(parse("novalue\n").is_err());
        let c = parse("[k]\nx = abc\ny = 1\n").unwrap();
        assert!(c.f64("k", "x").is_err());
        assert!(c.check_unused().is_err());
    }
}
