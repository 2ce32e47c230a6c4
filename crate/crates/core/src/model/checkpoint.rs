//! Plain-text checkpoints.
//!
//! ```text
//! graphite-checkpoint 1
//! patch_size 225
//! ...
//! tensor conv1.theta0 6 8
//! <48 values>
//! ...
//! adam <t> <lr> <beta1> <beta2> <eps>      (optional)
//! m conv1.theta0 6 8
//! <48 values>
//! ...
//! teacher conv1.theta0 6 8                 (optional)
//! <48 values>
//! ...
//! end
//! ```
//!
//! Floats are written in shortest round-trip form, so load(save(x)) == x bit
//! for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Frame, GraphiteModel, ModelConfig, Parameters, ScoreTap};
use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &str = "graphite-checkpoint";

/// A model plus optional optimizer state for resuming training.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: GraphiteModel,
    /// Completed training epochs.
    pub epoch: usize,
    pub optimizer: Option<Adam>,
    /// Frozen parameters anchoring stage-2 scores.
    pub teacher: Option<Parameters>,
}

pub fn save_checkpoint(model: &GraphiteModel, path: &Path) -> Result<()> {
    Checkpoint {
        model: model.clone(),
        epoch: 0,
        optimizer: None,
        teacher: None,
    }
    .save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<GraphiteModel> {
    Checkpoint::load(path).map(|c| c.model)
}

fn write_tensor(out: &mut String, tag: &str, name: &str, t: &Tensor) {
    let _ = writeln!(out, "{tag} {name} {} {}", t.rows(), t.cols());
    let mut first = true;
    for v in t.data() {
        if !first {
            out.push(' ');
        }
        first = false;
        let _ = write!(out, "{v:?}");
    }
    out.push('\n');
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let c = &self.model.config;
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC} {CHECKPOINT_VERSION}");
        let _ = writeln!(out, "patch_size {}", c.patch_size);
        let _ = writeln!(out, "descriptor_len {}", c.descriptor_len);
        let _ = writeln!(out, "radius_multiplier {:?}", c.radius_multiplier);
        let _ = writeln!(out, "hidden_activation {}", c.hidden_activation.name());
        let _ = writeln!(out, "descriptor_fc_layers {}", c.descriptor_fc_layers);
        let tap = match c.score_tap {
            ScoreTap::Post => "post",
            ScoreTap::Pre => "pre",
        };
        let _ = writeln!(out, "score_tap {tap}");
        let _ = writeln!(out, "frame {}", c.frame.name());
        let _ = writeln!(out, "epoch {}", self.epoch);
        let names = self.model.params.names();
        for (name, t) in names.iter().zip(self.model.params.tensors()) {
            write_tensor(&mut out, "tensor", name, t);
        }
        if let Some(opt) = &self.optimizer {
            let _ = writeln!(
                out,
                "adam {} {:?} {:?} {:?} {:?}",
                opt.t, opt.lr, opt.beta1, opt.beta2, opt.eps
            );
            if !opt.m.is_empty() {
                for (name, t) in names.iter().zip(&opt.m) {
                    write_tensor(&mut out, "m", name, t);
                }
                for (name, t) in names.iter().zip(&opt.v) {
                    write_tensor(&mut out, "v", name, t);
                }
            }
        }
        if let Some(t) = &self.teacher {
            for (name, t) in names.iter().zip(t.tensors()) {
                write_tensor(&mut out, "teacher", name, t);
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = Lines {
            inner: text.lines().enumerate(),
            pending: None,
        };
        let (_, first) = lines.next().ok_or_else(|| bad("empty checkpoint"))?;
        let mut head = first.split_whitespace();
        if head.next() != Some(MAGIC) {
            return Err(bad("not a graphite checkpoint"));
        }
        let version: u32 = head
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("missing version"))?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!(
                "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }

        let mut config = ModelConfig::default();
        let mut epoch = 0;
        while let Some((no, line)) = lines.peek() {
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap_or("");
            if key == "tensor" {
                break;
            }
            let value = parts.next().ok_or_else(|| bad_at(no, "missing value"))?;
            let num = |v: &str| -> Result<usize> { v.parse().map_err(|_| bad_at(no, "bad integer")) };
            match key {
                "patch_size" => config.patch_size = num(value)?,
                "descriptor_len" => config.descriptor_len = num(value)?,
                "radius_multiplier" => {
                    config.radius_multiplier = value.parse().map_err(|_| bad_at(no, "bad float"))?
                }
                "hidden_activation" => {
                    config.hidden_activation =
                        Activation::parse(value).ok_or_else(|| bad_at(no, "unknown activation"))?
                }
                "descriptor_fc_layers" => config.descriptor_fc_layers = num(value)?,
                "score_tap" => {
                    config.score_tap = match value {
                        "post" => ScoreTap::Post,
                        "pre" => ScoreTap::Pre,
                        _ => return Err(bad_at(no, "unknown score_tap")),
                    }
                }
                "frame" => config.frame = Frame::parse(value).ok_or_else(|| bad_at(no, "unknown frame"))?,
                "epoch" => epoch = num(value)?,
                _ => return Err(bad_at(no, &format!("unknown header key `{key}`"))),
            }
            lines.next();
        }
        config
            .validate()
            .map_err(|e| bad(&format!("invalid architecture: {e}")))?;

        let mut params = Parameters::init(0, &config).zeros_like();
        let names = params.names();
        for (name, t) in names.iter().zip(params.tensors_mut()) {
            *t = read_tensor(&mut lines, "tensor", name, t.shape())?;
        }

        let mut optimizer = None;
        let (no, line) = lines.next().ok_or_else(|| bad("truncated checkpoint"))?;
        let mut parts = line.split_whitespace();
        let tail = match parts.next() {
            Some("adam") => {
                let vals: Vec<&str> = parts.collect();
                if vals.len() != 5 {
                    return Err(bad_at(no, "adam line needs 5 fields"));
                }
                let f = |s: &str| -> Result<f64> { s.parse().map_err(|_| bad_at(no, "bad float")) };
                let mut opt = Adam::new(f(vals[1])?);
                opt.t = vals[0].parse().map_err(|_| bad_at(no, "bad step count"))?;
                opt.beta1 = f(vals[2])?;
                opt.beta2 = f(vals[3])?;
                opt.eps = f(vals[4])?;
                if matches!(lines.peek(), Some((_, l)) if l.starts_with("m ")) {
                    let shapes: Vec<[usize; 2]> = params.tensors().iter().map(|t| t.shape()).collect();
                    for tag in ["m", "v"] {
                        let mut buf = Vec::with_capacity(names.len());
                        for (name, &shape) in names.iter().zip(&shapes) {
                            buf.push(read_tensor(&mut lines, tag, name, shape)?);
                        }
                        if tag == "m" {
                            opt.m = buf;
                        } else {
                            opt.v = buf;
                        }
                    }
                }
                optimizer = Some(opt);
                lines.next().ok_or_else(|| bad("truncated checkpoint"))?
            }
            _ => (no, line),
        };
        let mut teacher = None;
        let tail = if tail.1.starts_with("teacher ") {
            lines.pending = Some(tail);
            let mut t = params.zeros_like();
            for (name, slot) in names.iter().zip(t.tensors_mut()) {
                *slot = read_tensor(&mut lines, "teacher", name, slot.shape())?;
            }
            teacher = Some(t);
            lines.next().ok_or_else(|| bad("truncated checkpoint"))?
        } else {
            tail
        };
        if tail.1.trim() != "end" {
            return Err(bad_at(tail.0, "expected `end`"));
        }
        Ok(Self {
            model: GraphiteModel { config, params },
            epoch,
            optimizer,
            teacher,
        })
    }
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    pending: Option<(usize, &'a str)>,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Option<(usize, &'a str)> {
        if let Some(p) = self.pending.take() {
            return Some(p);
        }
        self.inner
            .by_ref()
            .map(|(i, l)| (i + 1, l))
            .find(|(_, l)| !l.trim().is_empty())
    }

    fn peek(&mut self) -> Option<(usize, &'a str)> {
        if self.pending.is_none() {
            self.pending = self.next();
        }
        self.pending
    }
}

fn read_tensor(lines: &mut Lines<'_>, tag: &str, name: &str, shape: [usize; 2]) -> Result<Tensor> {
    let (no, header) = lines
        .next()
        .ok_or_else(|| bad(&format!("truncated checkpoint: missing {name}")))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 4 || parts[0] != tag || parts[1] != name {
        return Err(bad_at(no, &format!("expected `{tag} {name}`")));
    }
    let dims: Vec<usize> = parts[2..]
        .iter()
        .map(|d| d.parse().map_err(|_| bad_at(no, "bad dimension")))
        .collect::<Result<_>>()?;
    if dims != shape {
        return Err(bad_at(
            no,
            &format!(
                "{name} has shape {}x{}, architecture expects {}x{}",
                dims[0], dims[1], shape[0], shape[1]
            ),
        ));
    }
    let (no, body) = lines
        .next()
        .ok_or_else(|| bad(&format!("truncated checkpoint: missing values of {name}")))?;
    let data: Vec<f64> = body
        .split_whitespace()
        .map(|v| v.parse::<f64>().map_err(|_| bad_at(no, "bad float")))
        .collect::<Result<_>>()?;
    if data.len() != shape[0] * shape[1] {
        return Err(bad_at(
            no,
            &format!("{name}: {} values, expected {}", data.len(), shape[0] * shape[1]),
        ));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(bad_at(no, &format!("{name}: non-finite value")));
    }
    Tensor::from_vec(shape[0], shape[1], data)
}

fn bad(msg: &str) -> Error {
    Error::Checkpoint(msg.to_string())
}

fn bad_at(line: usize, msg: &str) -> Error {
    Error::Checkpoint(format!("line {line}: {msg}"))
}
