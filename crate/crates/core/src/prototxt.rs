//! Parser and canonical printer for prototxt model descriptions.
//!
//! Parsing happens in two stages: text becomes a generic tree of
//! [`ProtoNode`]s (order-preserving, comments dropped), then the tree is read
//! into a [`NetDef`]. Fields the model layer does not understand are kept as
//! opaque nodes so they survive a parse/print round trip.
//!
//! The printed form is canonical: two-space indentation, one field per line,
//! strings double-quoted. Printing is not byte-preserving with respect to the
//! original text, but `parse(print(parse(x))) == parse(x)` always holds.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::layers::{InnerProductParam, LayerSpec, MemoryDataParam};
use crate::net::NetDef;

#[derive(Debug, Clone, PartialEq)]
pub enum ProtoValue {
    Str(String),
    /// Numeric literal, stored as written.
    Number(String),
    /// Bare identifier such as an enum value or `true`.
    Ident(String),
    Block(Vec<ProtoNode>),
}

#[derive(Debug, Clone)]
pub struct ProtoNode {
    pub key: String,
    pub value: ProtoValue,
    /// 1-based source line; not part of equality.
    pub line: usize,
}

impl PartialEq for ProtoNode {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key && self.value == other.value
    }
}

impl ProtoNode {
    pub fn new(key: impl Into<String>, value: ProtoValue) -> Self {
        ProtoNode {
            key: key.into(),
            value,
            line: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Str(String),
    Colon,
    Open,
    Close,
    Sep,
}

fn perr<T>(line: usize, message: impl Into<String>) -> Result<T> {
    Err(Error::Parse {
        line,
        message: message.into(),
    })
}

fn tokenize(text: &str) -> Result<Vec<(Tok, usize)>> {
    let mut out = Vec::new();
    let mut chars = text.chars().peekable();
    let mut line = 1;
    while let Some(&c) = chars.peek() {
        match c {
            '\n' => {
                line += 1;
                chars.next();
            }
            c if c.is_whitespace() => {
                chars.next();
            }
            '#' => {
                while let Some(&c) = chars.peek() {
                    if c == '\n' {
                        break;
                    }
                    chars.next();
                }
            }
            ':' => {
                chars.next();
                out.push((Tok::Colon, line));
            }
            '{' => {
                chars.next();
                out.push((Tok::Open, line));
            }
            '}' => {
                chars.next();
                out.push((Tok::Close, line));
            }
            ';' | ',' => {
                chars.next();
                out.push((Tok::Sep, line));
            }
            '"' | '\'' => {
                let quote = c;
                let start = line;
                chars.next();
                let mut s = String::new();
                loop {
                    match chars.next() {
                        None => return perr(start, "unterminated string"),
                        Some('\n') => return perr(start, "unterminated string"),
                        Some(c) if c == quote => break,
                        Some('\\') => match chars.next() {
                            Some('n') => s.push('\n'),
                            Some('t') => s.push('\t'),
                            Some('r') => s.push('\r'),
                            Some(c @ ('\\' | '"' | '\'')) => s.push(c),
                            Some(c) => return perr(line, format!("unknown escape '\\{c}'")),
                            None => return perr(start, "unterminated string"),
                        },
                        Some(c) => s.push(c),
                    }
                }
                out.push((Tok::Str(s), start));
            }
            c if c.is_alphanumeric() || matches!(c, '_' | '-' | '+' | '.') => {
                let mut w = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_alphanumeric() || matches!(c, '_' | '-' | '+' | '.') {
                        w.push(c);
                        chars.next();
                    } else {
                        break;
                    }
                }
                out.push((Tok::Word(w), line));
            }
            c => return perr(line, format!("unexpected character '{c}'")),
        }
    }
    Ok(out)
}

fn is_identifier(w: &str) -> bool {
    let mut chars = w.chars();
    matches!(chars.next(), Some(c) if c.is_alphabetic() || c == '_')
        && chars.all(|c| c.is_alphanumeric() || c == '_' || c == '.')
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn line(&self) -> usize {
        self.toks
            .get(self.pos)
            .or_else(|| self.toks.last())
            .map_or(1, |(_, l)| *l)
    }

    fn next(&mut self) -> Option<(Tok, usize)> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    /// Parses fields until `}` (when `open_line` is set) or end of input.
    fn nodes(&mut self, open_line: Option<usize>) -> Result<Vec<ProtoNode>> {
        let mut nodes = Vec::new();
        loop {
            let (tok, line) = match self.next() {
                Some(t) => t,
                None => {
                    return match open_line {
                        Some(l) => perr(l, "unbalanced braces: '{' is never closed"),
                        None => Ok(nodes),
                    }
                }
            };
            let key = match tok {
                Tok::Close if open_line.is_some() => return Ok(nodes),
                Tok::Close => return perr(line, "unbalanced braces: unexpected '}'"),
                Tok::Sep => continue,
                Tok::Word(w) if is_identifier(&w) => w,
                other => return perr(line, format!("expected a field name, found {}", describe(&other))),
            };
            let had_colon = matches!(self.peek(), Some(Tok::Colon));
            if had_colon {
                self.next();
            }
            let value = match self.next() {
                Some((Tok::Open, l)) => ProtoValue::Block(self.nodes(Some(l))?),
                Some((Tok::Str(s), _)) if had_colon => ProtoValue::Str(s),
                Some((Tok::Word(w), l)) if had_colon => {
                    if w.starts_with(|c: char| c.is_ascii_digit() || matches!(c, '-' | '+' | '.')) {
                        ProtoValue::Number(w)
                    } else if is_identifier(&w) {
                        ProtoValue::Ident(w)
                    } else {
                        return perr(l, format!("malformed value '{w}'"));
                    }
                }
                Some((other, l)) => {
                    return perr(l, format!("expected a value for '{key}', found {}", describe(&other)))
                }
                None => {
                    return perr(
                        open_line.unwrap_or(line),
                        format!("unexpected end of input after '{key}'"),
                    )
                }
            };
            nodes.push(ProtoNode { key, value, line });
        }
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Word(w) => format!("'{w}'"),
        Tok::Str(s) => format!("string \"{s}\""),
        Tok::Colon => "':'".into(),
        Tok::Open => "'{'".into(),
        Tok::Close => "'}'".into(),
        Tok::Sep => "separator".into(),
    }
}

/// Parses prototxt text into its generic node tree.
pub fn parse_nodes(text: &str) -> Result<Vec<ProtoNode>> {
    let mut p = Parser {
        toks: tokenize(text)?,
        pos: 0,
    };
    let nodes = p.nodes(None)?;
    if p.pos < p.toks.len() {
        return perr(p.line(), "trailing input");
    }
    Ok(nodes)
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn write_nodes(out: &mut String, nodes: &[ProtoNode], depth: usize) {
    for n in nodes {
        write_node(out, n, depth);
    }
}

fn write_node(out: &mut String, node: &ProtoNode, depth: usize) {
    let pad = "  ".repeat(depth);
    match &node.value {
        ProtoValue::Block(children) => {
            let _ = writeln!(out, "{pad}{} {{", node.key);
            write_nodes(out, children, depth + 1);
            let _ = writeln!(out, "{pad}}}");
        }
        ProtoValue::Str(s) => {
            let _ = writeln!(out, "{pad}{}: {}", node.key, quote(s));
        }
        ProtoValue::Number(v) | ProtoValue::Ident(v) => {
            let _ = writeln!(out, "{pad}{}: {v}", node.key);
        }
    }
}

/// Prints a node tree in canonical form.
pub fn print_nodes(nodes: &[ProtoNode]) -> String {
    let mut out = String::new();
    write_nodes(&mut out, nodes, 0);
    out
}

fn scalar_text(node: &ProtoNode) -> Result<&str> {
    match &node.value {
        ProtoValue::Str(s) | ProtoValue::Number(s) | ProtoValue::Ident(s) => Ok(s),
        ProtoValue::Block(_) => perr(node.line, format!("'{}' must be a scalar, not a block", node.key)),
    }
}

fn string_field(node: &ProtoNode) -> Result<String> {
    scalar_text(node).map(str::to_string)
}

fn uint_field(node: &ProtoNode) -> Result<usize> {
    match &node.value {
        ProtoValue::Number(s) => s
            .parse::<usize>()
            .or_else(|_| perr(node.line, format!("'{}' must be a non-negative integer, got '{s}'", node.key))),
        _ => perr(node.line, format!("'{}' must be a non-negative integer", node.key)),
    }
}

fn bool_field(node: &ProtoNode) -> Result<bool> {
    match scalar_text(node)? {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        other => perr(node.line, format!("'{}' must be true or false, got '{other}'", node.key)),
    }
}

fn block(node: &ProtoNode) -> Result<&[ProtoNode]> {
    match &node.value {
        ProtoValue::Block(children) => Ok(children),
        _ => perr(node.line, format!("'{}' must be a block", node.key)),
    }
}

/// Stores a scalar, warning when the key was already set.
fn set_once<T>(slot: &mut Option<T>, value: T, node: &ProtoNode) {
    if slot.is_some() {
        log::warn!(
            "line {}: duplicate '{}' field, last value wins",
            node.line,
            node.key
        );
    }
    *slot = Some(value);
}

fn inner_product_param(node: &ProtoNode) -> Result<InnerProductParam> {
    let mut p = InnerProductParam::default();
    for child in block(node)? {
        match child.key.as_str() {
            "num_output" => set_once(&mut p.num_output, uint_field(child)?, child),
            "bias_term" => set_once(&mut p.bias_term, bool_field(child)?, child),
            _ => p.extra.push(child.clone()),
        }
    }
    Ok(p)
}

fn memory_data_param(node: &ProtoNode) -> Result<MemoryDataParam> {
    let mut p = MemoryDataParam::default();
    for child in block(node)? {
        let slot = match child.key.as_str() {
            "batch_size" => &mut p.batch_size,
            "channels" => &mut p.channels,
            "height" => &mut p.height,
            "width" => &mut p.width,
            _ => {
                p.extra.push(child.clone());
                continue;
            }
        };
        set_once(slot, uint_field(child)?, child);
    }
    Ok(p)
}

fn layer_spec(node: &ProtoNode) -> Result<LayerSpec> {
    let mut spec = LayerSpec {
        line: node.line,
        ..Default::default()
    };
    let mut name = None;
    let mut layer_type = None;
    for child in block(node)? {
        match child.key.as_str() {
            "name" => set_once(&mut name, string_field(child)?, child),
            "type" => set_once(&mut layer_type, string_field(child)?, child),
            "bottom" => spec.bottoms.push(string_field(child)?),
            "top" => spec.tops.push(string_field(child)?),
            "inner_product_param" => {
                let p = inner_product_param(child)?;
                set_once(&mut spec.inner_product, p, child);
            }
            "memory_data_param" => {
                let p = memory_data_param(child)?;
                set_once(&mut spec.memory_data, p, child);
            }
            _ => spec.extra.push(child.clone()),
        }
    }
    spec.name = name.unwrap_or_default();
    spec.layer_type = layer_type.unwrap_or_default();
    Ok(spec)
}

/// Reads a node tree into a model description.
pub fn net_def_from_nodes(nodes: &[ProtoNode]) -> Result<NetDef> {
    let mut def = NetDef::default();
    let mut name = None;
    for node in nodes {
        match node.key.as_str() {
            "name" => set_once(&mut name, string_field(node)?, node),
            "layer" => def.layers.push(layer_spec(node)?),
            _ => def.extra.push(node.clone()),
        }
    }
    def.name = name;
    Ok(def)
}

/// Parses prototxt text into a [`NetDef`].
pub fn parse(text: &str) -> Result<NetDef> {
    net_def_from_nodes(&parse_nodes(text)?)
}

fn str_node(key: &str, v: &str) -> ProtoNode {
    ProtoNode::new(key, ProtoValue::Str(v.to_string()))
}

fn num_node(key: &str, v: usize) -> ProtoNode {
    ProtoNode::new(key, ProtoValue::Number(v.to_string()))
}

fn layer_nodes(spec: &LayerSpec) -> Vec<ProtoNode> {
    let mut n = vec![str_node("name", &spec.name), str_node("type", &spec.layer_type)];
    n.extend(spec.bottoms.iter().map(|b| str_node("bottom", b)));
    n.extend(spec.tops.iter().map(|t| str_node("top", t)));
    if let Some(p) = &spec.inner_product {
        let mut c = Vec::new();
        if let Some(v) = p.num_output {
            c.push(num_node("num_output", v));
        }
        if let Some(v) = p.bias_term {
            c.push(ProtoNode::new("bias_term", ProtoValue::Ident(v.to_string())));
        }
        c.extend(p.extra.iter().cloned());
        n.push(ProtoNode::new("inner_product_param", ProtoValue::Block(c)));
    }
    if let Some(p) = &spec.memory_data {
        let mut c = Vec::new();
        for (key, v) in [
            ("batch_size", p.batch_size),
            ("channels", p.channels),
            ("height", p.height),
            ("width", p.width),
        ] {
            if let Some(v) = v {
                c.push(num_node(key, v));
            }
        }
        c.extend(p.extra.iter().cloned());
        n.push(ProtoNode::new("memory_data_param", ProtoValue::Block(c)));
    }
    n.extend(spec.extra.iter().cloned());
    n
}

/// Converts a model description back to a node tree.
pub fn net_def_to_nodes(def: &NetDef) -> Vec<ProtoNode> {
    let mut nodes = Vec::new();
    if let Some(name) = &def.name {
        nodes.push(str_node("name", name));
    }
    nodes.extend(def.extra.iter().cloned());
    for layer in &def.layers {
        nodes.push(ProtoNode::new("layer", ProtoValue::Block(layer_nodes(layer))));
    }
    nodes
}

/// Prints a model description in canonical prototxt form.
pub fn print(def: &NetDef) -> String {
    print_nodes(&net_def_to_nodes(def))
}
