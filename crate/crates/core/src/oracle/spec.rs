use std::fmt;
use std::str::FromStr;

use super::{blob_oracle, BlobOracleParams, Endpoint, Oracle, OracleError, WireOracle};

/// Text selector for an oracle: `blob:<window>:<tau>`, `tcp:<host>:<port>`
/// or `cmd:<program args...>`.
#[derive(Debug, Clone, PartialEq)]
pub enum OracleSpec {
    Blob { window: usize, threshold: f64 },
    Remote(Endpoint),
}

impl OracleSpec {
    /// Instantiates the oracle. Remote endpoints are connected eagerly.
    pub fn build(&self, retries: u32) -> Result<Box<dyn Oracle>, OracleError> {
        match self {
            OracleSpec::Blob { window, threshold } => Ok(Box::new(blob_oracle(
                BlobOracleParams::new(*window, *threshold),
            )?)),
            OracleSpec::Remote(endpoint) => Ok(Box::new(
                WireOracle::connect(endpoint.clone())?.with_retries(retries),
            )),
        }
    }
}

impl FromStr for OracleSpec {
    type Err = OracleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |why: &str| OracleError::InvalidParams(format!("oracle spec {s:?}: {why}"));
        let (kind, rest) = s.split_once(':').ok_or_else(|| bad("missing ':'"))?;
        match kind {
            "blob" => {
                let (w, t) = rest
                    .split_once(':')
                    .ok_or_else(|| bad("expected blob:<window>:<tau>"))?;
                let window = w.parse().map_err(|_| bad("window is not an integer"))?;
                let threshold = t.parse().map_err(|_| bad("tau is not a number"))?;
                Ok(OracleSpec::Blob { window, threshold })
            }
            "tcp" => {
                let (host, port) = rest
                    .rsplit_once(':')
                    .ok_or_else(|| bad("expected tcp:<host>:<port>"))?;
                if host.is_empty() || port.parse::<u16>().is_err() {
                    return Err(bad("expected tcp:<host>:<port>"));
                }
                Ok(OracleSpec::Remote(Endpoint::Tcp(rest.to_string())))
            }
            "cmd" => {
                let argv: Vec<String> = rest.split_whitespace().map(str::to_string).collect();
                if argv.is_empty() {
                    return Err(bad("empty command"));
                }
                Ok(OracleSpec::Remote(Endpoint::Command(argv)))
            }
            _ => Err(bad("kind must be blob, tcp or cmd")),
        }
    }
}

impl fmt::Display for OracleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleSpec::Blob { window, threshold } => write!(f, "blob:{window}:{threshold}"),
            OracleSpec::Remote(endpoint) => endpoint.fmt(f),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_kinds() {
        assert_eq!(
            "blob:16:0.8".parse::<OracleSpec>().unwrap(),
            OracleSpec::Blob {
                window: 16,
                threshold: 0.8
            }
        );
        assert_eq!(
            "tcp:localhost:7070".parse::<OracleSpec>().unwrap(),
            OracleSpec::Remote(Endpoint::Tcp("localhost:7070".into()))
        );
        assert_eq!(
            "cmd:python3 serve.py --stdio".parse::<OracleSpec>().unwrap(),
            OracleSpec::Remote(Endpoint::Command(vec![
                "python3".into(),
                "serve.py".into(),
                "--stdio".into()
            ]))
        );
    }

    #[test]
    fn display_round_trips() {
        for s in ["blob:8:0.8", "tcp:127.0.0.1:9", "cmd:model --stdio"] {
            assert_eq!(s.parse::<OracleSpec>().unwrap().to_string(), s);
        }
    }

    #[test]
    fn rejects_malformed() {
        for s in ["", "blob", "blob:8", "blob:x:0.8", "tcp:host", "tcp::80", "cmd:", "ftp:x"] {
            assert!(s.parse::<OracleSpec>().is_err(), "{s}");
        }
    }

    #[test]
    fn builds_blob() {
        let oracle = "blob:2:0.5".parse::<OracleSpec>().unwrap().build(0).unwrap();
        assert_eq!(oracle.query_count(), 0);
        assert!("blob:0:0.5".parse::<OracleSpec>().unwrap().build(0).is_err());
    }
}
