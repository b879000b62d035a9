//! Plain-text `key=value` configuration files (`neck.cfg`, `ham.cfg`).
//! Blank lines and `#` comments are ignored; unknown or repeated keys are
//! errors.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::attention::HamConfig;
use crate::error::{Error, Result};
use crate::pyramid::NeckConfig;

pub const NECK_KEYS: [&str; 11] = [
    "variant",
    "use_emsa",
    "use_ca",
    "channels",
    "heads",
    "reduction",
    "hidden_ratio",
    "placement",
    "merge",
    "attention",
    "seed",
];

pub const HAM_KEYS: [&str; 6] = ["channels", "heads", "reduction", "hidden_ratio", "use_emsa", "use_ca"];

/// Key/value pairs with the line each came from.
#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    source: String,
    values: HashMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(text: &str, source: &str, allowed: &[&str]) -> Result<Self> {
        let mut values = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(source, line_no, format!("expected key=value, got `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            if !allowed.contains(&k) {
                return Err(Error::parse(source, line_no, format!("unknown key `{k}`")));
            }
            if v.is_empty() {
                return Err(Error::parse(source, line_no, format!("empty value for `{k}`")));
            }
            if values.insert(k.to_string(), (line_no, v.to_string())).is_some() {
                return Err(Error::parse(source, line_no, format!("duplicate key `{k}`")));
            }
        }
        Ok(Self {
            source: source.to_string(),
            values,
        })
    }

    /// Parses `key` into `slot` if present.
    pub fn set<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<()> {
        if let Some((line, v)) = self.values.get(key) {
            *slot = v
                .parse()
                .map_err(|_| Error::parse(&self.source, *line, format!("invalid value `{v}` for `{key}`")))?;
        }
        Ok(())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }
}

/// Applies the keys found in `text` on top of `base`.
pub fn parse_neck_cfg(text: &str, source: &str, base: NeckConfig) -> Result<NeckConfig> {
    let kv = KeyValues::parse(text, source, &NECK_KEYS)?;
    let mut c = base;
    kv.set("variant", &mut c.variant)?;
    kv.set("use_emsa", &mut c.use_emsa)?;
    kv.set("use_ca", &mut c.use_ca)?;
    kv.set("channels", &mut c.channels)?;
    kv.set("heads", &mut c.heads)?;
    kv.set("reduction", &mut c.reduction)?;
    kv.set("hidden_ratio", &mut c.hidden_ratio)?;
    kv.set("placement", &mut c.placement)?;
    kv.set("merge", &mut c.merge)?;
    kv.set("attention", &mut c.attention)?;
    kv.set("seed", &mut c.seed)?;
    Ok(c)
}

pub fn parse_ham_cfg(text: &str, source: &str) -> Result<HamConfig> {
    let kv = KeyValues::parse(text, source, &HAM_KEYS)?;
    if !kv.contains("channels") {
        return Err(Error::Config(format!("{source}: `channels` is required")));
    }
    let mut c = HamConfig::new(0);
    kv.set("channels", &mut c.channels)?;
    kv.set("heads", &mut c.heads)?;
    kv.set("reduction", &mut c.reduction)?;
    kv.set("hidden_ratio", &mut c.hidden_ratio)?;
    kv.set("use_emsa", &mut c.use_emsa)?;
    kv.set("use_ca", &mut c.use_ca)?;
    Ok(c)
}

pub fn format_ham_cfg(c: &HamConfig) -> String {
    format!(
        "channels={}\nheads={}\nreduction={}\nhidden_ratio={}\nuse_emsa={}\nuse_ca={}\n",
        c.channels, c.heads, c.reduction, c.hidden_ratio, c.use_emsa, c.use_ca
    )
}

pub fn load_neck_cfg(path: impl AsRef<Path>, base: NeckConfig) -> Result<NeckConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_neck_cfg(&text, &path.display().to_string(), base)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pyramid::{MergeMode, Variant};

    #[test]
    fn display_round_trip() {
        let c = NeckConfig {
            variant: Variant::Pafpn,
            merge: MergeMode::Concat,
            hidden_ratio: 1.5,
            seed: 99,
            ..NeckConfig::default()
        };
        let text = c.to_string();
        assert_eq!(parse_neck_cfg(&text, "t", NeckConfig::default()).unwrap(), c);
    }

    #[test]
    fn comments_and_errors() {
        let c = parse_neck_cfg(
            "# neck\nvariant = fpn  # plain\nuse_emsa=false\nuse_ca=false\n",
            "t",
            NeckConfig::default(),
        )
        .unwrap();
        assert_eq!(c.variant, Variant::Fpn);
        assert!(parse_neck_cfg("colour=red", "t", NeckConfig::default()).is_err());
        assert!(parse_neck_cfg("heads=2\nheads=4", "t", NeckConfig::default()).is_err());
        assert!(parse_neck_cfg("heads=two", "t", NeckConfig::default()).is_err());
        assert!(parse_neck_cfg("variant=bifpn", "t", NeckConfig::default()).is_err());
        let e = parse_neck_cfg("\nheads", "n.cfg", NeckConfig::default()).unwrap_err();
        assert!(e.to_string().starts_with("n.cfg:2:"), "{e}");
    }

    #[test]
    fn ham_cfg() {
        let c = parse_ham_cfg("channels=16\nheads=4\n", "h").unwrap();
        assert_eq!((c.channels, c.heads, c.reduction), (16, 4, 8));
        assert_eq!(parse_ham_cfg(&format_ham_cfg(&c), "h").unwrap(), c);
        assert!(parse_ham_cfg("heads=4", "h").is_err());
        assert!(parse_ham_cfg("variant=fpn\nchannels=8", "h").is_err());
    }
}
