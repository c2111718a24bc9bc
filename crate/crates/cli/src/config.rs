//! `key = value` configuration files merged under command-line flags.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

/// Settings from a config file plus the problems found while resolving them.
#[derive(Debug, Default)]
pub struct Settings {
    file: BTreeMap<String, String>,
    used: Vec<String>,
    pub problems: Vec<String>,
}

impl Settings {
    /// Reads `key = value` lines; blank lines and `#` comments are ignored.
    pub fn load(path: Option<&Path>) -> Settings {
        let mut s = Settings::default();
        let Some(path) = path else {
            return s;
        };
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                s.problems.push(format!("cannot read config {}: {e}", path.display()));
                return s;
            }
        };
        for (k, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            match line.split_once('=') {
                Some((key, value)) => {
                    let key = key.trim().replace('_', "-");
                    if s.file.insert(key.clone(), value.trim().to_string()).is_some() {
                        s.problems.push(format!("{}:{}: duplicate key `{key}`", path.display(), k + 1));
                    }
                }
                None => s
                    .problems
                    .push(format!("{}:{}: expected `key = value`", path.display(), k + 1)),
            }
        }
        s
    }

    /// The flag value if given, else the file value, parsed as `T`.
    pub fn get<T>(&mut self, key: &str, flag: Option<&str>) -> Option<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.used.push(key.to_string());
        let raw = flag.map(str::to_string).or_else(|| self.file.get(key).cloned())?;
        match raw.parse() {
            Ok(v) => Some(v),
            Err(e) => {
                self.problems.push(format!("--{key} `{raw}`: {e}"));
                None
            }
        }
    }

    pub fn get_or<T>(&mut self, key: &str, flag: Option<&str>, default: T) -> T
    where
        T: FromStr,
        T::Err: Display,
    {
        self.get(key, flag).unwrap_or(default)
    }

    pub fn require<T>(&mut self, key: &str, flag: Option<&str>) -> Option<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        let had = flag.is_some() || self.file.contains_key(key);
        let v = self.get(key, flag);
        if !had {
            self.problems.push(format!("--{key} is required"));
        }
        v
    }

    pub fn check(&mut self, ok: bool, message: impl Into<String>) {
        if !ok {
            self.problems.push(message.into());
        }
    }

    /// Flags every file key no command asked for.
    pub fn finish(mut self) -> Vec<String> {
        for key in self.file.keys() {
            if !self.used.iter().any(|u| u == key) {
                self.problems.push(format!("unknown config key `{key}`"));
            }
        }
        self.problems
    }
}

/// A comma-separated list.
#[derive(Debug, Clone, PartialEq)]
pub struct List<T>(pub Vec<T>);

impl<T> FromStr for List<T>
where
    T: FromStr,
    T::Err: Display,
{
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| p.parse::<T>().map_err(|e| format!("`{p}`: {e}")))
            .collect::<Result<Vec<_>, _>>()
            .map(List)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn flags_override_file() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "# comment\nhorizon = 10\nseed=3\nbogus = 1").unwrap();
        let mut s = Settings::load(Some(f.path()));
        assert_eq!(s.get::<usize>("horizon", Some("5")), Some(5));
        assert_eq!(s.get::<u64>("seed", None), Some(3));
        let problems = s.finish();
        assert_eq!(problems, vec!["unknown config key `bogus`".to_string()]);
    }

    #[test]
    fn collects_every_problem() {
        let mut s = Settings::default();
        let _: Option<usize> = s.get("n", Some("x"));
        let _: Option<f64> = s.require("alpha", None);
        assert_eq!(s.finish().len(), 2);
    }

    #[test]
    fn parses_lists() {
        let l: List<usize> = "1, 2,3".parse().unwrap();
        assert_eq!(l.0, vec![1, 2, 3]);
        assert!("1,a".parse::<List<usize>>().is_err());
    }
}
