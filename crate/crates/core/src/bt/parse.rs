//! Textual tree format.
//!
//! ```text
//! tree := (seq tree+) | (fb tree+) | (cond NAME)
//!       | (act NAME [:label LABEL] [:success PRED] [:failure PRED])
//! pred := NAME | true | false | (not pred) | (and pred*) | (or pred*)
//! ```
//!
//! `;` starts a comment running to the end of the line. Atom names are bound
//! against an environment's [`AtomTable`] at load time.

use std::fmt::Write as _;

use super::predicate::{AtomTable, Predicate};
use super::tree::{BtNode, NodeKind};
use super::BtError;

#[derive(Clone, Debug, PartialEq)]
enum Token {
    Open,
    Close,
    Symbol(String),
}

fn tokenize(text: &str) -> Vec<(Token, usize)> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split(';').next().unwrap_or("");
        let mut sym = String::new();
        let flush = |sym: &mut String, out: &mut Vec<(Token, usize)>| {
            if !sym.is_empty() {
                out.push((Token::Symbol(std::mem::take(sym)), lineno + 1));
            }
        };
        for ch in line.chars() {
            match ch {
                '(' => {
                    flush(&mut sym, &mut out);
                    out.push((Token::Open, lineno + 1));
                }
                ')' => {
                    flush(&mut sym, &mut out);
                    out.push((Token::Close, lineno + 1));
                }
                c if c.is_whitespace() => flush(&mut sym, &mut out),
                c => sym.push(c),
            }
        }
        flush(&mut sym, &mut out);
    }
    out
}

struct Parser<'a> {
    tokens: Vec<(Token, usize)>,
    pos: usize,
    atoms: &'a AtomTable,
}

impl Parser<'_> {
    fn line(&self) -> usize {
        self.tokens
            .get(self.pos)
            .or_else(|| self.tokens.last())
            .map(|t| t.1)
            .unwrap_or(1)
    }

    fn err(&self, msg: impl Into<String>) -> BtError {
        BtError::Parse { line: self.line(), message: msg.into() }
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).map(|t| t.0.clone());
        self.pos += 1;
        t
    }

    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|t| &t.0)
    }

    fn expect_open(&mut self) -> Result<(), BtError> {
        match self.next() {
            Some(Token::Open) => Ok(()),
            _ => {
                self.pos -= 1;
                Err(self.err("expected `(`"))
            }
        }
    }

    fn expect_close(&mut self) -> Result<(), BtError> {
        match self.next() {
            Some(Token::Close) => Ok(()),
            _ => {
                self.pos -= 1;
                Err(self.err("expected `)`"))
            }
        }
    }

    fn symbol(&mut self) -> Result<String, BtError> {
        match self.next() {
            Some(Token::Symbol(s)) => Ok(s),
            _ => {
                self.pos -= 1;
                Err(self.err("expected a name"))
            }
        }
    }

    fn node(&mut self) -> Result<BtNode, BtError> {
        self.expect_open()?;
        let head = self.symbol()?;
        let node = match head.as_str() {
            "seq" | "fb" => {
                let mut children = Vec::new();
                while self.peek() == Some(&Token::Open) {
                    children.push(self.node()?);
                }
                if children.is_empty() {
                    return Err(self.err(format!("`{head}` needs at least one child")));
                }
                if head == "seq" {
                    BtNode::sequence(children)
                } else {
                    BtNode::fallback(children)
                }
            }
            "cond" => {
                let name = self.symbol()?;
                let atom = self.atoms.lookup(&name).map_err(|_| self.err(format!("unknown atom `{name}`")))?;
                BtNode::condition(atom)
            }
            "act" => {
                let controller = self.symbol()?;
                let mut label = controller.clone();
                let mut success = Predicate::False;
                let mut failure = Predicate::False;
                while let Some(Token::Symbol(key)) = self.peek().cloned() {
                    self.pos += 1;
                    match key.as_str() {
                        ":label" => label = self.symbol()?,
                        ":success" => success = self.predicate()?,
                        ":failure" => failure = self.predicate()?,
                        other => return Err(self.err(format!("unknown behavior option `{other}`"))),
                    }
                }
                BtNode::behavior_with(&controller, &label, success, failure)
            }
            other => return Err(self.err(format!("unknown node kind `{other}`"))),
        };
        self.expect_close()?;
        Ok(node)
    }

    fn predicate(&mut self) -> Result<Predicate, BtError> {
        match self.next() {
            Some(Token::Symbol(s)) => match s.as_str() {
                "true" => Ok(Predicate::True),
                "false" => Ok(Predicate::False),
                name => {
                    self.pos -= 1;
                    let atom = self.atoms.lookup(name).map_err(|_| self.err(format!("unknown atom `{name}`")))?;
                    self.pos += 1;
                    Ok(Predicate::Atom(atom))
                }
            },
            Some(Token::Open) => {
                let op = self.symbol()?;
                let mut args = Vec::new();
                while self.peek() != Some(&Token::Close) {
                    if self.peek().is_none() {
                        return Err(self.err("unterminated predicate"));
                    }
                    args.push(self.predicate()?);
                }
                self.expect_close()?;
                // keep the written structure so printing round-trips
                match op.as_str() {
                    "not" if args.len() == 1 => Ok(Predicate::Not(Box::new(args.pop().unwrap()))),
                    "and" => Ok(Predicate::And(args)),
                    "or" => Ok(Predicate::Or(args)),
                    _ => Err(self.err(format!("bad predicate operator `{op}`"))),
                }
            }
            _ => {
                self.pos -= 1;
                Err(self.err("expected a predicate"))
            }
        }
    }
}

/// Parses a tree description, binding atom names against `atoms`.
pub fn parse_tree(text: &str, atoms: &AtomTable) -> Result<BtNode, BtError> {
    let mut p = Parser { tokens: tokenize(text), pos: 0, atoms };
    let node = p.node()?;
    if p.pos < p.tokens.len() {
        return Err(p.err("trailing input after tree"));
    }
    Ok(node)
}

/// Parses a single predicate such as `(and HaveItem (not AtGoal))`.
pub fn parse_predicate(text: &str, atoms: &AtomTable) -> Result<Predicate, BtError> {
    let mut p = Parser { tokens: tokenize(text), pos: 0, atoms };
    let pred = p.predicate()?;
    if p.pos < p.tokens.len() {
        return Err(p.err("trailing input after predicate"));
    }
    Ok(pred)
}

/// Canonical text form; [`parse_tree`] of the output yields an identical tree.
pub fn print_tree(node: &BtNode, atoms: &AtomTable) -> String {
    let mut out = String::new();
    print_node(node, atoms, 0, &mut out);
    out.push('\n');
    out
}

fn print_node(node: &BtNode, atoms: &AtomTable, depth: usize, out: &mut String) {
    let pad = "  ".repeat(depth);
    match &node.kind {
        NodeKind::Sequence | NodeKind::Fallback => {
            let head = if matches!(node.kind, NodeKind::Sequence) { "seq" } else { "fb" };
            let _ = write!(out, "{pad}({head}");
            for c in &node.children {
                out.push('\n');
                print_node(c, atoms, depth + 1, out);
            }
            out.push(')');
        }
        NodeKind::Condition { atom } => {
            let _ = write!(out, "{pad}(cond {})", atoms.name(*atom));
        }
        NodeKind::Behavior { controller, label, success, failure } => {
            let _ = write!(out, "{pad}(act {controller}");
            if label != controller {
                let _ = write!(out, " :label {label}");
            }
            if *success != Predicate::False {
                let _ = write!(out, " :success {}", success.display(atoms));
            }
            if *failure != Predicate::False {
                let _ = write!(out, " :failure {}", failure.display(atoms));
            }
            out.push(')');
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bt::fixtures::{FIG1_ATOMS, FIG1_TEXT};

    #[test]
    fn standalone_predicates() {
        let atoms = AtomTable::new(["A", "B"]).unwrap();
        let p = parse_predicate("(and A (not B))", &atoms).unwrap();
        assert!(p.eval(0b01) && !p.eval(0b11));
        assert!(parse_predicate("A B", &atoms).is_err());
        assert!(parse_predicate("C", &atoms).is_err());
    }

    #[test]
    fn fig1_round_trip() {
        let atoms = AtomTable::new(FIG1_ATOMS).unwrap();
        let tree = parse_tree(FIG1_TEXT, &atoms).unwrap();
        let printed = print_tree(&tree, &atoms);
        assert_eq!(parse_tree(&printed, &atoms).unwrap(), tree);
    }

    #[test]
    fn behavior_options() {
        let atoms = AtomTable::new(["Safe", "AtGoal"]).unwrap();
        let text = "(seq (fb (cond Safe) (act Safety)) (act Goal :success (and AtGoal Safe)))";
        let tree = parse_tree(text, &atoms).unwrap();
        let NodeKind::Behavior { success, .. } = &tree.children[1].kind else { panic!() };
        assert_eq!(*success, Predicate::And(vec![Predicate::Atom(1), Predicate::Atom(0)]));
        assert_eq!(parse_tree(&print_tree(&tree, &atoms), &atoms).unwrap(), tree);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let atoms = AtomTable::new(["Safe"]).unwrap();
        match parse_tree("(seq\n  (cond Nope))", &atoms) {
            Err(BtError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_tree("(seq)", &atoms).is_err());
        assert!(parse_tree("(act A) (act B)", &atoms).is_err());
        assert!(parse_tree("(act A :speed 3)", &atoms).is_err());
    }
}
