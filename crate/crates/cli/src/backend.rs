use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use resseg::trainer::{
    ConstantBackend, ExternalBackend, IntensityBackend, SegmenterBackend, TinyFcn,
};

/// Which segmenter produces probability maps, written as `kind[:argument]`:
/// `external:DIR`, `tiny-fcn:CHECKPOINT`, `constant:P`, `intensity` or
/// `intensity-inverted`.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendSpec {
    External(PathBuf),
    TinyFcn(PathBuf),
    Constant(f32),
    Intensity { invert: bool },
}

impl BackendSpec {
    /// Resolves relative paths against `base`.
    pub fn relative_to(self, base: &Path) -> BackendSpec {
        match self {
            BackendSpec::External(p) => BackendSpec::External(base.join(p)),
            BackendSpec::TinyFcn(p) => BackendSpec::TinyFcn(base.join(p)),
            other => other,
        }
    }

    pub fn build(&self) -> Result<Box<dyn SegmenterBackend>> {
        Ok(match self {
            BackendSpec::External(dir) => {
                if !dir.is_dir() {
                    return Err(resseg::Error::Io {
                        path: dir.clone(),
                        source: std::io::Error::new(
                            std::io::ErrorKind::NotFound,
                            "backend directory not found",
                        ),
                    }
                    .into());
                }
                Box::new(ExternalBackend::new(dir))
            }
            BackendSpec::TinyFcn(path) => Box::new(
                TinyFcn::load(path)
                    .with_context(|| format!("loading checkpoint {}", path.display()))?,
            ),
            BackendSpec::Constant(p) => Box::new(ConstantBackend(*p)),
            BackendSpec::Intensity { invert } => Box::new(IntensityBackend { invert: *invert }),
        })
    }
}

impl FromStr for BackendSpec {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (s, None),
        };
        let need = |what: &str| -> Result<&str> {
            match arg {
                Some(a) if !a.is_empty() => Ok(a),
                _ => Err(invalid(format!(
                    "backend `{kind}` needs {what}, as `{kind}:<{what}>`"
                ))),
            }
        };
        Ok(match kind {
            "external" => BackendSpec::External(need("dir")?.into()),
            "tiny-fcn" => BackendSpec::TinyFcn(need("checkpoint")?.into()),
            "constant" => {
                let p: f32 = need("p")?
                    .parse()
                    .map_err(|_| invalid(format!("`{s}`: not a number")))?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(invalid(format!(
                        "constant probability {p} is outside [0, 1]"
                    )));
                }
                BackendSpec::Constant(p)
            }
            "intensity" => BackendSpec::Intensity { invert: false },
            "intensity-inverted" => BackendSpec::Intensity { invert: true },
            _ => bail!(resseg::Error::UnknownId(format!("backend {kind}"))),
        })
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendSpec::External(p) => write!(f, "external:{}", p.display()),
            BackendSpec::TinyFcn(p) => write!(f, "tiny-fcn:{}", p.display()),
            BackendSpec::Constant(p) => write!(f, "constant:{p}"),
            BackendSpec::Intensity { invert: false } => f.write_str("intensity"),
            BackendSpec::Intensity { invert: true } => f.write_str("intensity-inverted"),
        }
    }
}

fn invalid(msg: String) -> anyhow::Error {
    resseg::Error::Validation {
        what: "backend",
        msg,
    }
    .into()
}
