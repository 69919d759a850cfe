//! Text formats: terms, trace files (one event per line, oldest first) and
//! rule scripts (`RuleName KEY=value ...` per line, `#` starts a comment).

use std::collections::BTreeMap;
use std::fmt;

use crate::algebra::{AgentName, KeyTerm, Message, NonceBody, Role};
use crate::rules::{Binding, Resumption, RuleId, Session};
use crate::trace::{Event, Trace};

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}: {}", self.line, self.column, self.message)
    }
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
    line: usize,
    /// Column of `src[0]` within the physical line, 1-based.
    base_col: usize,
}

type PResult<T> = Result<T, ParseError>;

impl<'a> Cursor<'a> {
    fn new(src: &'a str, line: usize, base_col: usize) -> Self {
        Cursor {
            src,
            pos: 0,
            line,
            base_col,
        }
    }

    fn err<T>(&self, msg: impl Into<String>) -> PResult<T> {
        Err(ParseError {
            line: self.line,
            column: self.base_col + self.src[..self.pos].chars().count(),
            message: msg.into(),
        })
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.src.len() - trimmed.len();
    }

    fn at_end(&mut self) -> bool {
        self.skip_ws();
        self.pos == self.src.len()
    }

    fn eat(&mut self, c: char) -> bool {
        self.skip_ws();
        if self.rest().starts_with(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> PResult<()> {
        if self.eat(c) {
            Ok(())
        } else if self.at_end() {
            self.err(format!("expected '{c}' but the input ended"))
        } else {
            self.err(format!("expected '{c}'"))
        }
    }

    fn word(&mut self) -> PResult<&'a str> {
        self.skip_ws();
        let rest = self.rest();
        let len = rest
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(rest.len());
        if len == 0 {
            return if rest.is_empty() {
                self.err("unexpected end of input")
            } else {
                self.err("expected a name")
            };
        }
        self.pos += len;
        Ok(&rest[..len])
    }

    fn number(&mut self) -> PResult<u64> {
        self.skip_ws();
        let start = self.pos;
        let w = self.word()?;
        w.parse().or_else(|_| {
            self.pos = start;
            self.err(format!("expected a number, found '{w}'"))
        })
    }

    fn agent(&mut self) -> PResult<AgentName> {
        self.skip_ws();
        let start = self.pos;
        let w = self.word()?;
        parse_agent_name(w).ok_or(()).or_else(|_| {
            self.pos = start;
            self.err(format!("unknown agent '{w}'"))
        })
    }

    fn role(&mut self) -> PResult<Role> {
        self.skip_ws();
        let start = self.pos;
        match self.word()? {
            "client" => Ok(Role::ClientRole),
            "server" => Ok(Role::ServerRole),
            w => {
                self.pos = start;
                self.err(format!("expected 'client' or 'server', found '{w}'"))
            }
        }
    }

    fn nonce(&mut self) -> PResult<NonceBody> {
        self.skip_ws();
        let start = self.pos;
        let w = self.word()?;
        if w == "PRF" {
            self.expect('(')?;
            let a = self.nonce()?;
            self.expect(',')?;
            let b = self.nonce()?;
            self.expect(',')?;
            let c = self.nonce()?;
            self.expect(')')?;
            return Ok(NonceBody::prf(a, b, c));
        }
        match w.strip_prefix('n').and_then(|d| d.parse::<u32>().ok()) {
            Some(i) => Ok(NonceBody::Atom(i)),
            None => {
                self.pos = start;
                self.err(format!("expected a nonce like n1 or PRF(..), found '{w}'"))
            }
        }
    }

    fn key(&mut self) -> PResult<KeyTerm> {
        self.skip_ws();
        let start = self.pos;
        let w = self.word()?;
        self.expect('(')?;
        let k = match w {
            "pub" => KeyTerm::Pub(self.agent()?),
            "pri" => KeyTerm::Pri(self.agent()?),
            "sessK" => {
                let na = self.nonce()?;
                self.expect(',')?;
                let nb = self.nonce()?;
                self.expect(',')?;
                let m = self.nonce()?;
                self.expect(',')?;
                let role = self.role()?;
                KeyTerm::session(na, nb, m, role)
            }
            _ => {
                self.pos = start;
                return self.err(format!("expected pub, pri or sessK, found '{w}'"));
            }
        };
        self.expect(')')?;
        Ok(k)
    }

    fn term(&mut self) -> PResult<Message> {
        self.skip_ws();
        let start = self.pos;
        let w = self.word()?;
        self.expect('(')?;
        let m = match w {
            "Agent" => Message::Agent(self.agent()?),
            "Num" => Message::Number(self.number()?),
            "Nonce" => Message::Nonce(self.nonce()?),
            "Key" => Message::Key(self.key()?),
            "Hash" => Message::hash(self.term()?),
            "Crypt" => {
                let k = self.key()?;
                self.expect(',')?;
                Message::crypt(k, self.term()?)
            }
            "Pair" => {
                let mut items = vec![self.term()?];
                while self.eat(',') {
                    items.push(self.term()?);
                }
                if items.len() < 2 {
                    return self.err("Pair needs at least two components");
                }
                Message::tuple(items)
            }
            _ => {
                self.pos = start;
                return self.err(format!("unknown term constructor '{w}'"));
            }
        };
        self.expect(')')?;
        Ok(m)
    }

    fn finish(&mut self) -> PResult<()> {
        if self.at_end() {
            Ok(())
        } else {
            self.err("unexpected trailing input")
        }
    }
}

pub fn parse_agent_name(w: &str) -> Option<AgentName> {
    match w {
        "Server" => Some(AgentName::Server),
        "Spy" => Some(AgentName::Spy),
        _ => w
            .strip_prefix("Friend")
            .filter(|d| !d.is_empty() && d.chars().all(|c| c.is_ascii_digit()))
            .and_then(|d| d.parse().ok())
            .map(AgentName::Friend),
    }
}

/// Parses one term, e.g. `Crypt(pub(Friend2), Nonce(n3))`.
pub fn parse_term(src: &str) -> Result<Message, ParseError> {
    let mut c = Cursor::new(src, 1, 1);
    let m = c.term()?;
    c.finish()?;
    Ok(m)
}

fn parse_event(c: &mut Cursor) -> PResult<Event> {
    c.skip_ws();
    let start = c.pos;
    match c.word()? {
        "Says" => {
            let a = c.agent()?;
            let b = c.agent()?;
            Ok(Event::Says(a, b, c.term()?))
        }
        "Notes" => {
            let a = c.agent()?;
            Ok(Event::Notes(a, c.term()?))
        }
        w => {
            c.pos = start;
            c.err(format!("expected Says or Notes, found '{w}'"))
        }
    }
}

/// Parses a trace file. Blank lines and `#` comments are ignored.
pub fn parse_trace(src: &str) -> Result<Trace, ParseError> {
    let mut events = Vec::new();
    for (i, line) in src.lines().enumerate() {
        let body = strip_comment(line);
        if body.trim().is_empty() {
            continue;
        }
        let mut c = Cursor::new(body, i + 1, 1);
        events.push(parse_event(&mut c)?);
        c.finish()?;
    }
    Ok(Trace::from_chronological(events))
}

/// One event per line, oldest first, newline-terminated. Empty for Nil.
pub fn format_trace(t: &Trace) -> String {
    let mut out = String::new();
    for e in t.chronological() {
        out.push_str(&e.to_string());
        out.push('\n');
    }
    out
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
}

/// Field names of each rule's binding, in print order.
pub fn binding_fields(r: RuleId) -> &'static [&'static str] {
    match r {
        RuleId::Nil => &[],
        RuleId::Fake => &["B", "X"],
        RuleId::SpyKeys => &["NA", "NB", "M", "ROLE"],
        RuleId::ClientHello => &["A", "B", "NA", "SID", "PA"],
        RuleId::ServerHello => &["B", "A", "NA", "SID", "PA", "NB", "PB"],
        RuleId::Certificate => &["B", "A"],
        RuleId::ClientKeyExch => &["A", "B", "KB", "PMS"],
        RuleId::CertVerify => &["A", "B", "NB", "SID", "PB", "PMS"],
        RuleId::ClientFinished
        | RuleId::ServerFinished
        | RuleId::ClientAccepts
        | RuleId::ServerAccepts => &["A", "B", "NA", "SID", "PA", "NB", "PB", "PMS"],
        RuleId::ClientResume | RuleId::ServerResume => {
            &["A", "B", "NA", "SID", "PA", "NB", "PB", "M"]
        }
        RuleId::Oops => &["A", "KEY"],
    }
}

fn binding_values(b: &Binding) -> Vec<String> {
    fn session(s: &Session) -> Vec<String> {
        vec![
            s.a.to_string(),
            s.b.to_string(),
            s.na.to_string(),
            s.sid.to_string(),
            s.pa.to_string(),
            s.nb.to_string(),
            s.pb.to_string(),
            s.pms.to_string(),
        ]
    }
    fn resumption(r: &Resumption) -> Vec<String> {
        vec![
            r.a.to_string(),
            r.b.to_string(),
            r.na.to_string(),
            r.sid.to_string(),
            r.pa.to_string(),
            r.nb.to_string(),
            r.pb.to_string(),
            r.m.to_string(),
        ]
    }
    match b {
        Binding::Nil => vec![],
        Binding::Fake { b, x } => vec![b.to_string(), x.to_string()],
        Binding::SpyKeys { na, nb, m, role } => {
            vec![na.to_string(), nb.to_string(), m.to_string(), role.to_string()]
        }
        Binding::ClientHello { a, b, na, sid, pa } => vec![
            a.to_string(),
            b.to_string(),
            na.to_string(),
            sid.to_string(),
            pa.to_string(),
        ],
        Binding::ServerHello { b, a, na, sid, pa, nb, pb } => vec![
            b.to_string(),
            a.to_string(),
            na.to_string(),
            sid.to_string(),
            pa.to_string(),
            nb.to_string(),
            pb.to_string(),
        ],
        Binding::Certificate { b, a } => vec![b.to_string(), a.to_string()],
        Binding::ClientKeyExch { a, b, kb, pms } => {
            vec![a.to_string(), b.to_string(), kb.to_string(), pms.to_string()]
        }
        Binding::CertVerify { a, b, nb, sid, pb, pms } => vec![
            a.to_string(),
            b.to_string(),
            nb.to_string(),
            sid.to_string(),
            pb.to_string(),
            pms.to_string(),
        ],
        Binding::ClientFinished(s)
        | Binding::ServerFinished(s)
        | Binding::ClientAccepts(s)
        | Binding::ServerAccepts(s) => session(s),
        Binding::ClientResume(r) | Binding::ServerResume(r) => resumption(r),
        Binding::Oops { a, key } => vec![a.to_string(), key.to_string()],
    }
}

/// One script line, e.g. `ClientHello A=Friend1 B=Friend2 NA=n1 SID=0 PA=0`.
pub fn format_binding(b: &Binding) -> String {
    let mut out = b.rule().name().to_string();
    for (k, v) in binding_fields(b.rule()).iter().zip(binding_values(b)) {
        out.push(' ');
        out.push_str(k);
        out.push('=');
        out.push_str(&v);
    }
    out
}

pub fn format_script(script: &[Binding]) -> String {
    let mut out = String::new();
    for b in script {
        out.push_str(&format_binding(b));
        out.push('\n');
    }
    out
}

/// Splits `KEY=value` pairs on whitespace outside parentheses; returns
/// `(key, value, column of value)`.
fn split_pairs(body: &str, line: usize, base_col: usize) -> PResult<Vec<(String, String, usize)>> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start: Option<usize> = None;
    let mut push = |from: usize, to: usize| -> PResult<()> {
        let tok = &body[from..to];
        let col = base_col + body[..from].chars().count();
        match tok.find('=') {
            Some(eq) => {
                let value_col = col + tok[..=eq].chars().count();
                out.push((tok[..eq].to_string(), tok[eq + 1..].to_string(), value_col));
                Ok(())
            }
            None => Err(ParseError {
                line,
                column: col,
                message: format!("expected KEY=value, found '{tok}'"),
            }),
        }
    };
    for (i, ch) in body.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            _ => {}
        }
        if ch.is_whitespace() && depth <= 0 {
            if let Some(s) = start.take() {
                push(s, i)?;
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        push(s, body.len())?;
    }
    Ok(out)
}

/// Values of one script line, parsed on demand with their source columns.
struct Fields<'a> {
    values: BTreeMap<&'a str, (String, usize)>,
    line: usize,
}

impl Fields<'_> {
    fn whole<T>(&self, name: &str, p: impl FnOnce(&mut Cursor) -> PResult<T>) -> PResult<T> {
        let (v, col) = &self.values[name];
        let mut c = Cursor::new(v.as_str(), self.line, *col);
        let out = p(&mut c)?;
        c.finish()?;
        Ok(out)
    }

    fn agent(&self, name: &str) -> PResult<AgentName> {
        self.whole(name, |c| c.agent())
    }

    fn nonce(&self, name: &str) -> PResult<NonceBody> {
        self.whole(name, |c| c.nonce())
    }

    fn number(&self, name: &str) -> PResult<u64> {
        self.whole(name, |c| c.number())
    }
}

fn parse_binding_line(body: &str, line: usize) -> PResult<Binding> {
    let lead = body.len() - body.trim_start().len();
    let trimmed = body.trim();
    let name_len = trimmed.find(char::is_whitespace).unwrap_or(trimmed.len());
    let name = &trimmed[..name_len];
    let rule = RuleId::from_name(name).ok_or_else(|| ParseError {
        line,
        column: lead + 1,
        message: format!("unknown rule '{name}'"),
    })?;
    let rest = &trimmed[name_len..];
    let rest_col = lead + 1 + name_len;
    let pairs = split_pairs(rest, line, rest_col)?;
    let fields = binding_fields(rule);
    let mut values: BTreeMap<&str, (String, usize)> = BTreeMap::new();
    for (k, v, col) in pairs {
        let Some(f) = fields.iter().find(|f| **f == k) else {
            return Err(ParseError {
                line,
                column: col.saturating_sub(k.len() + 1),
                message: format!("{name} has no field '{k}'"),
            });
        };
        if values.insert(f, (v, col)).is_some() {
            return Err(ParseError {
                line,
                column: col,
                message: format!("field '{k}' given twice"),
            });
        }
    }
    for f in fields {
        if !values.contains_key(f) {
            return Err(ParseError {
                line,
                column: body.trim_end().chars().count() + 1,
                message: format!("{name} is missing field '{f}'"),
            });
        }
    }
    let f = Fields { values, line };
    let session = || -> PResult<Session> {
        Ok(Session {
            a: f.agent("A")?,
            b: f.agent("B")?,
            na: f.nonce("NA")?,
            sid: f.number("SID")?,
            pa: f.number("PA")?,
            nb: f.nonce("NB")?,
            pb: f.number("PB")?,
            pms: f.nonce("PMS")?,
        })
    };
    let resumption = || -> PResult<Resumption> {
        Ok(Resumption {
            a: f.agent("A")?,
            b: f.agent("B")?,
            na: f.nonce("NA")?,
            sid: f.number("SID")?,
            pa: f.number("PA")?,
            nb: f.nonce("NB")?,
            pb: f.number("PB")?,
            m: f.nonce("M")?,
        })
    };
    Ok(match rule {
        RuleId::Nil => Binding::Nil,
        RuleId::Fake => Binding::Fake {
            b: f.agent("B")?,
            x: f.whole("X", |c| c.term())?,
        },
        RuleId::SpyKeys => Binding::SpyKeys {
            na: f.nonce("NA")?,
            nb: f.nonce("NB")?,
            m: f.nonce("M")?,
            role: f.whole("ROLE", |c| c.role())?,
        },
        RuleId::ClientHello => Binding::ClientHello {
            a: f.agent("A")?,
            b: f.agent("B")?,
            na: f.nonce("NA")?,
            sid: f.number("SID")?,
            pa: f.number("PA")?,
        },
        RuleId::ServerHello => Binding::ServerHello {
            b: f.agent("B")?,
            a: f.agent("A")?,
            na: f.nonce("NA")?,
            sid: f.number("SID")?,
            pa: f.number("PA")?,
            nb: f.nonce("NB")?,
            pb: f.number("PB")?,
        },
        RuleId::Certificate => Binding::Certificate {
            b: f.agent("B")?,
            a: f.agent("A")?,
        },
        RuleId::ClientKeyExch => Binding::ClientKeyExch {
            a: f.agent("A")?,
            b: f.agent("B")?,
            kb: f.whole("KB", |c| c.key())?,
            pms: f.nonce("PMS")?,
        },
        RuleId::CertVerify => Binding::CertVerify {
            a: f.agent("A")?,
            b: f.agent("B")?,
            nb: f.nonce("NB")?,
            sid: f.number("SID")?,
            pb: f.number("PB")?,
            pms: f.nonce("PMS")?,
        },
        RuleId::ClientFinished => Binding::ClientFinished(session()?),
        RuleId::ServerFinished => Binding::ServerFinished(session()?),
        RuleId::ClientAccepts => Binding::ClientAccepts(session()?),
        RuleId::ServerAccepts => Binding::ServerAccepts(session()?),
        RuleId::ClientResume => Binding::ClientResume(resumption()?),
        RuleId::ServerResume => Binding::ServerResume(resumption()?),
        RuleId::Oops => Binding::Oops {
            a: f.agent("A")?,
            key: f.whole("KEY", |c| c.key())?,
        },
    })
}

/// A script step with the line it came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScriptStep {
    pub line: usize,
    pub binding: Binding,
}

pub fn parse_script(src: &str) -> Result<Vec<ScriptStep>, ParseError> {
    let mut out = Vec::new();
    for (i, line) in src.lines().enumerate() {
        let body = strip_comment(line);
        if body.trim().is_empty() {
            continue;
        }
        out.push(ScriptStep {
            line: i + 1,
            binding: parse_binding_line(body, i + 1)?,
        });
    }
    Ok(out)
}
