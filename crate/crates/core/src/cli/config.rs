//! Flat `key = value` run configuration with dotted section prefixes.
//!
//! ```text
//! # comments and blank lines are ignored
//! seed = 7
//! cem.rates = 3,12,24
//! input.shape = 1,3,128,128
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::pyramid::AcfpnConfig;
use crate::tensor::{Precision, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Distribution {
    /// `U(0, 1)` from the run seed.
    Uniform,
    Zeros,
    /// `(x + y) / (w + h)` in every channel.
    Ramp,
}

impl FromStr for Distribution {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "uniform" => Ok(Distribution::Uniform),
            "zeros" => Ok(Distribution::Zeros),
            "ramp" => Ok(Distribution::Ramp),
            _ => Err(format!("unknown distribution `{s}` (uniform, zeros, ramp)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InputSource {
    Synthetic { shape: Shape, distribution: Distribution },
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// `None` lets each command pick its default.
    pub precision: Option<Precision>,
    pub network: AcfpnConfig,
    pub input: InputSource,
    pub output_dir: PathBuf,
    /// Write ACFT dumps of every pyramid level.
    pub dump: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            precision: None,
            network: AcfpnConfig::default(),
            input: InputSource::Synthetic {
                shape: Shape::new(1, 3, 128, 128),
                distribution: Distribution::Uniform,
            },
            output_dir: PathBuf::from("acfpn-out"),
            dump: false,
        }
    }
}

/// Every key the parser accepts.
pub const KEYS: &[&str] = &[
    "seed",
    "precision",
    "cem.rates",
    "cem.in_channels",
    "cem.mid_channels",
    "cem.path_channels",
    "cem.out_channels",
    "cem.use_deformable",
    "cem.use_dense",
    "am.cxam",
    "am.cnam",
    "am.key_channels",
    "am.cnam_channels",
    "backbone.stem_channels",
    "backbone.stage_channels",
    "pyramid.lateral_channels",
    "input.kind",
    "input.shape",
    "input.distribution",
    "input.path",
    "output.dir",
    "output.dump",
];

fn parse_value<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| Error::ConfigParse { line, msg: format!("{key}: cannot parse `{v}`: {e}") })
}

fn parse_list(line: usize, key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|p| parse_value(line, key, p.trim())).collect()
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::ConfigParse { line, msg: format!("{key}: expected a boolean, got `{v}`") }),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = BTreeSet::new();
        let mut kind: Option<String> = None;
        let mut shape = Shape::new(1, 3, 128, 128);
        let mut distribution = Distribution::Uniform;
        let mut path: Option<PathBuf> = None;
        let net = &mut cfg.network;

        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::ConfigParse { line, msg: format!("expected `key = value`, got `{content}`") })?;
            if !KEYS.contains(&key) {
                return Err(Error::ConfigParse { line, msg: format!("unknown key `{key}`") });
            }
            if !seen.insert(key.to_string()) {
                return Err(Error::ConfigParse { line, msg: format!("duplicate key `{key}`") });
            }
            match key {
                "seed" => cfg.seed = parse_value(line, key, value)?,
                "precision" => cfg.precision = Some(parse_value(line, key, value)?),
                "cem.rates" => net.cem.rates = parse_list(line, key, value)?,
                "cem.in_channels" => net.cem.in_channels = parse_value(line, key, value)?,
                "cem.mid_channels" => net.cem.mid_channels = parse_value(line, key, value)?,
                "cem.path_channels" => net.cem.path_channels = parse_value(line, key, value)?,
                "cem.out_channels" => net.cem.out_channels = parse_value(line, key, value)?,
                "cem.use_deformable" => net.cem.use_deformable = parse_bool(line, key, value)?,
                "cem.use_dense" => net.cem.use_dense = parse_bool(line, key, value)?,
                "am.cxam" => net.am.cxam = parse_bool(line, key, value)?,
                "am.cnam" => net.am.cnam = parse_bool(line, key, value)?,
                "am.key_channels" => net.am.key_channels = parse_value(line, key, value)?,
                "am.cnam_channels" => net.am.cnam_channels = parse_value(line, key, value)?,
                "backbone.stem_channels" => net.backbone.stem_channels = parse_value(line, key, value)?,
                "backbone.stage_channels" => {
                    let v = parse_list(line, key, value)?;
                    net.backbone.stage_channels = v.try_into().map_err(|v: Vec<usize>| Error::ConfigParse {
                        line,
                        msg: format!("{key}: expected 4 widths, got {}", v.len()),
                    })?;
                }
                "pyramid.lateral_channels" => net.pyramid.lateral_channels = parse_value(line, key, value)?,
                "input.kind" => kind = Some(value.to_string()),
                "input.shape" => {
                    let v = parse_list(line, key, value)?;
                    let [n, c, h, w]: [usize; 4] = v.try_into().map_err(|v: Vec<usize>| Error::ConfigParse {
                        line,
                        msg: format!("{key}: expected n,c,h,w, got {} values", v.len()),
                    })?;
                    shape = Shape::new(n, c, h, w);
                }
                "input.distribution" => {
                    distribution = value.parse().map_err(|msg| Error::ConfigParse { line, msg })?;
                }
                "input.path" => path = Some(PathBuf::from(value)),
                "output.dir" => cfg.output_dir = PathBuf::from(value),
                "output.dump" => cfg.dump = parse_bool(line, key, value)?,
                _ => unreachable!("key list and match arms agree"),
            }
        }

        cfg.input = match (kind.as_deref(), path) {
            (None | Some("synthetic"), None) => InputSource::Synthetic { shape, distribution },
            (None | Some("file"), Some(p)) => InputSource::File(p),
            (Some("file"), None) => return Err(Error::Config("input.kind = file needs input.path".into())),
            (Some("synthetic"), Some(_)) => return Err(Error::Config("input.path given with input.kind = synthetic".into())),
            (Some(other), _) => return Err(Error::Config(format!("unknown input.kind `{other}` (synthetic, file)"))),
        };
        cfg.sync_widths();
        cfg.network.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Widths implied by other sections: attention reads the CEM output and F5.
    fn sync_widths(&mut self) {
        let n = &mut self.network;
        n.am.channels = n.cem.out_channels;
        n.am.context_channels = n.backbone.stage_channels[3];
    }

    /// Renders the config back to the text format, one key per line.
    pub fn to_text(&self) -> String {
        let n = &self.network;
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let mut lines = vec![
            format!("seed = {}", self.seed),
            format!("cem.rates = {}", join(&n.cem.rates)),
            format!("cem.in_channels = {}", n.cem.in_channels),
            format!("cem.mid_channels = {}", n.cem.mid_channels),
            format!("cem.path_channels = {}", n.cem.path_channels),
            format!("cem.out_channels = {}", n.cem.out_channels),
            format!("cem.use_deformable = {}", n.cem.use_deformable),
            format!("cem.use_dense = {}", n.cem.use_dense),
            format!("am.cxam = {}", n.am.cxam),
            format!("am.cnam = {}", n.am.cnam),
            format!("am.key_channels = {}", n.am.key_channels),
            format!("am.cnam_channels = {}", n.am.cnam_channels),
            format!("backbone.stem_channels = {}", n.backbone.stem_channels),
            format!("backbone.stage_channels = {}", join(&n.backbone.stage_channels)),
            format!("pyramid.lateral_channels = {}", n.pyramid.lateral_channels),
        ];
        if let Some(p) = self.precision {
            lines.insert(1, format!("precision = {}", p.as_str()));
        }
        match &self.input {
            InputSource::Synthetic { shape, distribution } => {
                let d = match distribution {
                    Distribution::Uniform => "uniform",
                    Distribution::Zeros => "zeros",
                    Distribution::Ramp => "ramp",
                };
                lines.push("input.kind = synthetic".into());
                lines.push(format!("input.shape = {}", join(&shape.0)));
                lines.push(format!("input.distribution = {d}"));
            }
            InputSource::File(p) => {
                lines.push("input.kind = file".into());
                lines.push(format!("input.path = {}", p.display()));
            }
        }
        lines.push(format!("output.dir = {}", self.output_dir.display()));
        lines.push(format!("output.dump = {}", self.dump));
        lines.join("\n") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_is_default() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
        assert_eq!(RunConfig::parse("# nothing\n\n").unwrap(), RunConfig::default());
    }

    #[test]
    fn parses_sections() {
        let cfg = RunConfig::parse(
            "seed = 9\nprecision = f64\ncem.rates = 3, 12,24  # three paths\ncem.use_dense = false\nam.cnam = off\noutput.dir = /tmp/x\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.precision, Some(Precision::Double));
        assert_eq!(cfg.network.cem.rates, [3, 12, 24]);
        assert!(!cfg.network.cem.use_dense && !cfg.network.am.cnam);
        assert_eq!(cfg.output_dir, PathBuf::from("/tmp/x"));
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        for bad in [
            "cem.ratez = 3",
            "seed 3",
            "seed = x",
            "seed = 1\nseed = 2",
            "cem.rates = 3,,6",
            "cem.use_dense = maybe",
            "input.shape = 1,3,32",
            "input.kind = file",
            "input.kind = camera",
            "input.distribution = cauchy",
            "backbone.stage_channels = 1,2,3",
            "cem.rates = 0",
            "precision = f16",
        ] {
            assert!(RunConfig::parse(bad).is_err(), "{bad}");
        }
        match RunConfig::parse("seed = 1\n\nbogus = 2") {
            Err(Error::ConfigParse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn file_input() {
        let cfg = RunConfig::parse("input.path = img.ppm").unwrap();
        assert_eq!(cfg.input, InputSource::File(PathBuf::from("img.ppm")));
    }

    #[test]
    fn text_round_trip() {
        let cfg = RunConfig::parse("seed = 4\ncem.rates = 1\ninput.distribution = ramp\nprecision = f64").unwrap();
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn widths_follow_sections() {
        let cfg = RunConfig::parse(
            "backbone.stage_channels = 16,32,64,128\ncem.in_channels = 128\ncem.out_channels = 16\npyramid.lateral_channels = 16",
        )
        .unwrap();
        assert_eq!((cfg.network.am.channels, cfg.network.am.context_channels), (16, 128));
        assert!(RunConfig::parse("cem.in_channels = 100").is_err());
    }
}
