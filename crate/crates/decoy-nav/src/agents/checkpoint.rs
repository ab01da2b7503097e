//! Versioned flat-text subagent checkpoints.
//!
//! Layout: the header line, `key=value` metadata (backend, mode, k_index,
//! config_hash), then one `table`/`net` section per tensor. Floats are
//! written in shortest round-trip form, so save/load is value-exact.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use super::mlp::Mlp;
use super::qtable::QTable;
use crate::env::Mode;

pub const AGENT_HEADER: &str = "decoy-nav agent v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad checkpoint header {0:?}")]
    BadHeader(String),
    #[error("checkpoint config hash {found} does not match expected {expected}")]
    HashMismatch { expected: String, found: String },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum CheckpointBody {
    Table(QTable),
    Ac {
        actor: Mlp,
        critic: Mlp,
        target: Mlp,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub backend: String,
    pub mode: Mode,
    pub k_index: usize,
    pub config_hash: String,
    pub body: CheckpointBody,
}

fn write_values(out: &mut String, values: &[f64]) {
    for chunk in values.chunks(8) {
        let line: Vec<String> = chunk.iter().map(|v| format!("{v}")).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
}

pub fn render_checkpoint(ck: &Checkpoint) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{AGENT_HEADER}");
    let _ = writeln!(out, "backend={}", ck.backend);
    let _ = writeln!(out, "mode={}", ck.mode);
    let _ = writeln!(out, "k_index={}", ck.k_index);
    let _ = writeln!(out, "config_hash={}", ck.config_hash);
    match &ck.body {
        CheckpointBody::Table(q) => {
            let _ = writeln!(out, "table {} {}", q.width(), q.height());
            write_values(&mut out, q.values());
        }
        CheckpointBody::Ac {
            actor,
            critic,
            target,
        } => {
            for (name, net) in [("actor", actor), ("critic", critic), ("target", target)] {
                let dims: Vec<String> = net.dims().iter().map(|d| d.to_string()).collect();
                let _ = writeln!(out, "net {name} {}", dims.join(","));
                write_values(&mut out, net.params());
            }
        }
    }
    out
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), CheckpointError> {
    std::fs::write(path, render_checkpoint(ck)).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn malformed(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Malformed(msg.into())
}

fn take_floats<'a>(
    it: &mut impl Iterator<Item = &'a str>,
    n: usize,
) -> Result<Vec<f64>, CheckpointError> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let tok = it.next().ok_or_else(|| malformed("truncated value block"))?;
        out.push(
            tok.parse::<f64>()
                .map_err(|_| malformed(format!("bad float {tok:?}")))?,
        );
    }
    Ok(out)
}

pub fn parse_checkpoint(
    text: &str,
    expected_hash: Option<&str>,
) -> Result<Checkpoint, CheckpointError> {
    let mut lines = text.lines().peekable();
    let header = lines.next().unwrap_or_default();
    if header != AGENT_HEADER {
        return Err(CheckpointError::BadHeader(header.to_string()));
    }
    let mut backend = None;
    let mut mode = None;
    let mut k_index = None;
    let mut config_hash = None;
    while let Some(line) = lines.peek() {
        let Some((key, value)) = line.split_once('=') else {
            break;
        };
        match key {
            "backend" => backend = Some(value.to_string()),
            "mode" => {
                mode = Some(match value {
                    "discrete" => Mode::Discrete,
                    "continuous" => Mode::Continuous,
                    other => return Err(malformed(format!("unknown mode {other:?}"))),
                })
            }
            "k_index" => {
                k_index = Some(
                    value
                        .parse::<usize>()
                        .map_err(|_| malformed(format!("bad k_index {value:?}")))?,
                )
            }
            "config_hash" => config_hash = Some(value.to_string()),
            other => return Err(malformed(format!("unknown metadata key {other:?}"))),
        }
        lines.next();
    }
    let backend = backend.ok_or_else(|| malformed("missing backend"))?;
    let mode = mode.ok_or_else(|| malformed("missing mode"))?;
    let k_index = k_index.ok_or_else(|| malformed("missing k_index"))?;
    let config_hash = config_hash.ok_or_else(|| malformed("missing config_hash"))?;
    if let Some(expected) = expected_hash {
        if expected != config_hash {
            return Err(CheckpointError::HashMismatch {
                expected: expected.to_string(),
                found: config_hash,
            });
        }
    }

    let mut tokens = lines.flat_map(|l| l.split_whitespace()).peekable();
    let body = match tokens.next() {
        Some("table") => {
            let w: i32 = tokens
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| malformed("bad table width"))?;
            let h: i32 = tokens
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| malformed("bad table height"))?;
            let values = take_floats(&mut tokens, (w * h) as usize * 8)?;
            CheckpointBody::Table(QTable::from_values(w, h, values))
        }
        Some("net") => {
            let mut actor = None;
            let mut critic = None;
            let mut target = None;
            loop {
                let name = tokens
                    .next()
                    .ok_or_else(|| malformed("missing net name"))?;
                let dims_tok = tokens
                    .next()
                    .ok_or_else(|| malformed("missing net dims"))?;
                let dims: Vec<usize> = dims_tok
                    .split(',')
                    .map(|d| d.parse::<usize>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| malformed(format!("bad net dims {dims_tok:?}")))?;
                if dims.len() < 2 {
                    return Err(malformed(format!("net {name} needs at least two dims")));
                }
                let params = take_floats(&mut tokens, Mlp::param_count_for(&dims))?;
                let net = Mlp::from_params(&dims, params);
                match name {
                    "actor" => actor = Some(net),
                    "critic" => critic = Some(net),
                    "target" => target = Some(net),
                    other => return Err(malformed(format!("unknown net name {other:?}"))),
                }
                match tokens.next() {
                    None => break,
                    Some("net") => continue,
                    Some(tok) => {
                        return Err(malformed(format!("unexpected token {tok:?} after net")))
                    }
                }
            }
            CheckpointBody::Ac {
                actor: actor.ok_or_else(|| malformed("missing actor net"))?,
                critic: critic.ok_or_else(|| malformed("missing critic net"))?,
                target: target.ok_or_else(|| malformed("missing target net"))?,
            }
        }
        other => return Err(malformed(format!("unknown body section {other:?}"))),
    };

    Ok(Checkpoint {
        backend,
        mode,
        k_index,
        config_hash,
        body,
    })
}

pub fn load_checkpoint(
    path: &Path,
    expected_hash: Option<&str>,
) -> Result<Checkpoint, CheckpointError> {
    let text = std::fs::read_to_string(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_checkpoint(&text, expected_hash)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn table_checkpoint_round_trips_exactly() {
        let mut q = QTable::zeros(3, 3);
        q.set(
            crate::grid::Cell::new(1, 2),
            crate::env::Move::UpLeft,
            98.60000000000001,
        );
        q.set(
            crate::grid::Cell::new(0, 0),
            crate::env::Move::Up,
            -std::f64::consts::SQRT_2,
        );
        let ck = Checkpoint {
            backend: "tabular".into(),
            mode: Mode::Discrete,
            k_index: 1,
            config_hash: "deadbeef".into(),
            body: CheckpointBody::Table(q),
        };
        let text = render_checkpoint(&ck);
        let back = parse_checkpoint(&text, Some("deadbeef")).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn ac_checkpoint_round_trips_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let actor = Mlp::new(&[2, 8, 4], &mut rng);
        let critic = Mlp::new(&[4, 8, 1], &mut rng);
        let target = critic.clone();
        let ck = Checkpoint {
            backend: "ac".into(),
            mode: Mode::Continuous,
            k_index: 0,
            config_hash: "0123abcd".into(),
            body: CheckpointBody::Ac {
                actor,
                critic,
                target,
            },
        };
        let text = render_checkpoint(&ck);
        let back = parse_checkpoint(&text, None).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn hash_mismatch_is_rejected_with_both_hashes() {
        let ck = Checkpoint {
            backend: "tabular".into(),
            mode: Mode::Discrete,
            k_index: 0,
            config_hash: "aaaa".into(),
            body: CheckpointBody::Table(QTable::zeros(3, 3)),
        };
        let text = render_checkpoint(&ck);
        let err = parse_checkpoint(&text, Some("bbbb")).unwrap_err();
        match err {
            CheckpointError::HashMismatch { expected, found } => {
                assert_eq!(expected, "bbbb");
                assert_eq!(found, "aaaa");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }
}
