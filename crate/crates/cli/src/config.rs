//! `key = value` config files and flag > file > default resolution.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::CliError;

/// An optional setting; `none` on the command line or in a file clears it.
#[derive(Clone, Debug, PartialEq)]
pub struct Maybe<T>(pub Option<T>);

impl<T: FromStr> FromStr for Maybe<T>
where
    T::Err: fmt::Display,
{
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("none") {
            Ok(Maybe(None))
        } else {
            s.parse().map(|v| Maybe(Some(v))).map_err(|e: T::Err| e.to_string())
        }
    }
}

impl<T: fmt::Display> fmt::Display for Maybe<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.0 {
            Some(v) => v.fmt(f),
            None => f.write_str("none"),
        }
    }
}

/// Values of a config file plus the resolved settings of one command, in
/// resolution order.
#[derive(Debug, Default)]
pub struct Resolver {
    file: BTreeMap<String, String>,
    resolved: Vec<(String, String)>,
}

fn canonical_key(k: &str) -> String {
    k.trim().replace('_', "-").to_ascii_lowercase()
}

pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| format!("line {}: expected key = value", i + 1))?;
        let key = canonical_key(k);
        if key.is_empty() {
            return Err(format!("line {}: empty key", i + 1));
        }
        if map.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(format!("line {}: duplicate key {key}", i + 1));
        }
    }
    Ok(map)
}

impl Resolver {
    pub fn new(config: Option<&Path>) -> Result<Self, CliError> {
        let file = match config {
            None => BTreeMap::new(),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
                parse_config_text(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
            }
        };
        Ok(Self { file, resolved: Vec::new() })
    }

    fn from_file<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: fmt::Display,
    {
        match self.file.remove(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|e| CliError::Usage(format!("config key {key}: {e}"))),
        }
    }

    /// Flag, else file, else `default`.
    pub fn pick<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T: FromStr + fmt::Display,
        T::Err: fmt::Display,
    {
        let file = self.from_file(key)?;
        let v = flag.or(file).unwrap_or(default);
        self.resolved.push((key.to_string(), v.to_string()));
        Ok(v)
    }

    /// Optional setting whose default is unset.
    pub fn pick_opt<T>(&mut self, key: &str, flag: Option<Maybe<T>>, default: Option<T>) -> Result<Option<T>, CliError>
    where
        T: FromStr + fmt::Display,
        T::Err: fmt::Display,
    {
        Ok(self.pick(key, flag, Maybe(default))?.0)
    }

    pub fn require_path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<PathBuf, CliError> {
        let file = self.file.remove(key).map(PathBuf::from);
        let v = flag.or(file).ok_or_else(|| CliError::Usage(format!("missing required setting --{key}")))?;
        self.resolved.push((key.to_string(), v.display().to_string()));
        Ok(v)
    }

    pub fn opt_path(&mut self, key: &str, flag: Option<PathBuf>) -> Option<PathBuf> {
        let file = self.file.remove(key).map(PathBuf::from);
        let v = flag.or(file).filter(|p| !p.as_os_str().eq_ignore_ascii_case("none"));
        self.resolved.push((key.to_string(), v.as_ref().map_or("none".into(), |p| p.display().to_string())));
        v
    }

    /// Errors on config keys that no setting consumed.
    pub fn finish(self) -> Result<ResolvedConfig, CliError> {
        if let Some(k) = self.file.keys().next() {
            return Err(CliError::Usage(format!("unknown config key {k}")));
        }
        Ok(ResolvedConfig(self.resolved))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedConfig(pub Vec<(String, String)>);

impl ResolvedConfig {
    pub fn render(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Writes `config.txt` into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<(), CliError> {
        let p = dir.join("config.txt");
        fs::write(&p, self.render()).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolver(text: &str) -> Resolver {
        Resolver { file: parse_config_text(text).unwrap(), resolved: Vec::new() }
    }

    #[test]
    fn flag_beats_file_beats_default() {
        let mut r = resolver("epochs = 7\nlearning_rate = 0.01\n");
        assert_eq!(r.pick("epochs", Some(3usize), 20).unwrap(), 3);
        assert_eq!(r.pick("learning-rate", None, 1e-3).unwrap(), 0.01);
        assert_eq!(r.pick("seed", None, 5u64).unwrap(), 5);
        let c = r.finish().unwrap();
        assert_eq!(c.render(), "epochs = 3\nlearning-rate = 0.01\nseed = 5\n");
    }

    #[test]
    fn comments_blank_lines_and_none() {
        let mut r = resolver("# header\n\npatience = none  # off\nclip-norm = 2.5\n");
        assert_eq!(r.pick_opt::<usize>("patience", None, Some(3)).unwrap(), None);
        assert_eq!(r.pick_opt::<f64>("clip-norm", None, Some(5.0)).unwrap(), Some(2.5));
        assert_eq!(r.pick_opt::<f64>("target-f1", Some(Maybe(None)), Some(0.9)).unwrap(), None);
    }

    #[test]
    fn bad_files_are_usage_errors() {
        assert!(parse_config_text("epochs 3").is_err());
        assert!(parse_config_text("a = 1\na = 2").is_err());
        assert!(parse_config_text(" = 2").is_err());
        let mut r = resolver("epochs = many");
        assert!(matches!(r.pick("epochs", None, 1usize), Err(CliError::Usage(_))));
        let r = resolver("bogus = 1");
        assert!(matches!(r.finish(), Err(CliError::Usage(_))));
    }

    #[test]
    fn missing_required_setting() {
        let mut r = resolver("");
        assert!(matches!(r.require_path("out", None), Err(CliError::Usage(_))));
        let mut r = resolver("out = data");
        assert_eq!(r.require_path("out", None).unwrap(), PathBuf::from("data"));
    }
}
