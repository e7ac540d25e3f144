//! Line-oriented trace format: `t_ns cpu op target offset len`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use super::WorkloadError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OpKind {
    Create,
    Open,
    Read,
    Write,
    Fsync,
    Close,
    Delete,
    SockOpen,
    Send,
    Recv,
    SockClose,
    AppTouch,
}

impl OpKind {
    pub const ALL: [OpKind; 12] = [
        OpKind::Create,
        OpKind::Open,
        OpKind::Read,
        OpKind::Write,
        OpKind::Fsync,
        OpKind::Close,
        OpKind::Delete,
        OpKind::SockOpen,
        OpKind::Send,
        OpKind::Recv,
        OpKind::SockClose,
        OpKind::AppTouch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Create => "CREATE",
            OpKind::Open => "OPEN",
            OpKind::Read => "READ",
            OpKind::Write => "WRITE",
            OpKind::Fsync => "FSYNC",
            OpKind::Close => "CLOSE",
            OpKind::Delete => "DELETE",
            OpKind::SockOpen => "SOCK_OPEN",
            OpKind::Send => "SEND",
            OpKind::Recv => "RECV",
            OpKind::SockClose => "SOCK_CLOSE",
            OpKind::AppTouch => "APP_TOUCH",
        }
    }

    pub fn needs_len(self) -> bool {
        matches!(self, OpKind::Read | OpKind::Write | OpKind::Send | OpKind::Recv | OpKind::AppTouch)
    }

    pub fn is_socket(self) -> bool {
        matches!(self, OpKind::SockOpen | OpKind::Send | OpKind::Recv | OpKind::SockClose)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OpKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| format!("unknown op `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceOp {
    pub t_ns: u64,
    pub cpu: u32,
    pub op: OpKind,
    pub target: u64,
    pub offset: u64,
    pub len: u64,
}

impl TraceOp {
    pub fn new(t_ns: u64, cpu: u32, op: OpKind, target: u64, offset: u64, len: u64) -> Self {
        Self { t_ns, cpu, op, target, offset, len }
    }
}

impl fmt::Display for TraceOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} {} {} {}", self.t_ns, self.cpu, self.op, self.target, self.offset, self.len)
    }
}

fn parse_line(line: &str, lineno: usize) -> Result<TraceOp, WorkloadError> {
    let err = |reason: String| WorkloadError::ParseError { line: lineno, reason };
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 6 {
        return Err(err(format!("expected 6 fields, found {}", fields.len())));
    }
    let num = |i: usize, name: &str| -> Result<u64, WorkloadError> {
        fields[i].parse::<u64>().map_err(|e| err(format!("bad {name} `{}`: {e}", fields[i])))
    };
    let cpu = u32::try_from(num(1, "cpu")?).map_err(|_| err("cpu out of range".into()))?;
    let op: OpKind = fields[2].parse().map_err(err)?;
    let t = TraceOp::new(num(0, "t_ns")?, cpu, op, num(3, "target")?, num(4, "offset")?, num(5, "len")?);
    if op.needs_len() && t.len == 0 {
        return Err(err(format!("{op} requires len > 0")));
    }
    Ok(t)
}

/// Checks per-cpu timestamp order.
pub fn validate(ops: &[TraceOp]) -> Result<(), WorkloadError> {
    let mut last: BTreeMap<u32, u64> = BTreeMap::new();
    for (i, op) in ops.iter().enumerate() {
        if op.op.needs_len() && op.len == 0 {
            return Err(WorkloadError::ParseError { line: i + 1, reason: format!("{} requires len > 0", op.op) });
        }
        let prev = last.entry(op.cpu).or_insert(op.t_ns);
        if op.t_ns < *prev {
            return Err(WorkloadError::OrderingViolation { line: i + 1, cpu: op.cpu });
        }
        *prev = op.t_ns;
    }
    Ok(())
}

pub fn parse_trace<R: BufRead>(input: R) -> Result<Vec<TraceOp>, WorkloadError> {
    let mut ops = Vec::new();
    let mut last: BTreeMap<u32, u64> = BTreeMap::new();
    for (i, line) in input.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| WorkloadError::ParseError { line: lineno, reason: e.to_string() })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let op = parse_line(trimmed, lineno)?;
        let prev = last.entry(op.cpu).or_insert(op.t_ns);
        if op.t_ns < *prev {
            return Err(WorkloadError::OrderingViolation { line: lineno, cpu: op.cpu });
        }
        *prev = op.t_ns;
        ops.push(op);
    }
    Ok(ops)
}

pub fn parse_trace_str(s: &str) -> Result<Vec<TraceOp>, WorkloadError> {
    parse_trace(s.as_bytes())
}

pub fn write_trace<W: Write>(mut out: W, ops: &[TraceOp]) -> io::Result<()> {
    for op in ops {
        writeln!(out, "{op}")?;
    }
    Ok(())
}

pub fn format_trace(ops: &[TraceOp]) -> String {
    let mut buf = Vec::new();
    write_trace(&mut buf, ops).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("trace text is ascii")
}
