//! Region predicates over atom valuations.
//!
//! Every environment exposes a fixed table of named atomic predicates. A state
//! is reduced to a [`Valuation`] (bit `i` set iff atom `i` holds), and all BT
//! region sets are boolean expressions over those bits. This keeps region
//! membership exact and cheap, and lets enumerable environments materialize
//! any region as a bitset.

use std::fmt;

use fixedbitset::FixedBitSet;

use super::BtError;

/// Truth assignment of every atom for one state, bit `i` = atom `i`.
pub type Valuation = u64;

/// Maximum number of atoms an environment may register.
pub const MAX_ATOMS: usize = 64;

/// Ordered table of atom names; the index of a name is its valuation bit.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AtomTable {
    names: Vec<String>,
}

impl AtomTable {
    pub fn new<I, S>(names: I) -> Result<Self, BtError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut table = AtomTable::default();
        for name in names {
            table.push(name.into())?;
        }
        Ok(table)
    }

    fn push(&mut self, name: String) -> Result<usize, BtError> {
        if self.names.contains(&name) {
            return Err(BtError::DuplicateAtom(name));
        }
        if self.names.len() >= MAX_ATOMS {
            return Err(BtError::TooManyAtoms);
        }
        self.names.push(name);
        Ok(self.names.len() - 1)
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn lookup(&self, name: &str) -> Result<usize, BtError> {
        self.index(name)
            .ok_or_else(|| BtError::UnknownAtom(name.to_string()))
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Every valuation of the table's atoms, in increasing bit order.
    ///
    /// Only meaningful for small tables (the symbolic 2^n state space).
    pub fn all_valuations(&self) -> Vec<Valuation> {
        assert!(self.len() < 24, "too many atoms to enumerate");
        (0..(1u64 << self.len())).collect()
    }

    /// Builds a valuation from `(name, value)` pairs; unnamed atoms are false.
    pub fn valuation(&self, assignments: &[(&str, bool)]) -> Result<Valuation, BtError> {
        let mut v = 0;
        for (name, value) in assignments {
            if *value {
                v |= 1 << self.lookup(name)?;
            }
        }
        Ok(v)
    }
}

/// Boolean expression over atoms.
///
/// Constructed through [`Predicate::and`], [`Predicate::or`] and
/// [`Predicate::not`], which fold constants and flatten nested operators.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Predicate {
    True,
    False,
    Atom(usize),
    Not(Box<Predicate>),
    And(Vec<Predicate>),
    Or(Vec<Predicate>),
}

impl Predicate {
    pub fn atom(index: usize) -> Self {
        Predicate::Atom(index)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(p: Predicate) -> Self {
        match p {
            Predicate::True => Predicate::False,
            Predicate::False => Predicate::True,
            Predicate::Not(inner) => *inner,
            other => Predicate::Not(Box::new(other)),
        }
    }

    pub fn and<I: IntoIterator<Item = Predicate>>(parts: I) -> Self {
        let mut terms = Vec::new();
        for p in parts {
            match p {
                Predicate::True => {}
                Predicate::False => return Predicate::False,
                Predicate::And(inner) => {
                    for q in inner {
                        if !terms.contains(&q) {
                            terms.push(q);
                        }
                    }
                }
                other => {
                    if !terms.contains(&other) {
                        terms.push(other);
                    }
                }
            }
        }
        match terms.len() {
            0 => Predicate::True,
            1 => terms.pop().unwrap(),
            _ => Predicate::And(terms),
        }
    }

    pub fn or<I: IntoIterator<Item = Predicate>>(parts: I) -> Self {
        let mut terms = Vec::new();
        for p in parts {
            match p {
                Predicate::False => {}
                Predicate::True => return Predicate::True,
                Predicate::Or(inner) => {
                    for q in inner {
                        if !terms.contains(&q) {
                            terms.push(q);
                        }
                    }
                }
                other => {
                    if !terms.contains(&other) {
                        terms.push(other);
                    }
                }
            }
        }
        match terms.len() {
            0 => Predicate::False,
            1 => terms.pop().unwrap(),
            _ => Predicate::Or(terms),
        }
    }

    pub fn eval(&self, v: Valuation) -> bool {
        match self {
            Predicate::True => true,
            Predicate::False => false,
            Predicate::Atom(i) => v >> i & 1 == 1,
            Predicate::Not(p) => !p.eval(v),
            Predicate::And(ps) => ps.iter().all(|p| p.eval(v)),
            Predicate::Or(ps) => ps.iter().any(|p| p.eval(v)),
        }
    }

    /// Evaluates the predicate on every valuation, bit `k` of the result
    /// standing for `valuations[k]`.
    pub fn materialize(&self, valuations: &[Valuation]) -> FixedBitSet {
        let mut set = FixedBitSet::with_capacity(valuations.len());
        for (k, &v) in valuations.iter().enumerate() {
            if self.eval(v) {
                set.insert(k);
            }
        }
        set
    }

    /// Highest atom index referenced, if any.
    pub fn max_atom(&self) -> Option<usize> {
        match self {
            Predicate::True | Predicate::False => None,
            Predicate::Atom(i) => Some(*i),
            Predicate::Not(p) => p.max_atom(),
            Predicate::And(ps) | Predicate::Or(ps) => ps.iter().filter_map(|p| p.max_atom()).max(),
        }
    }

    /// Renders the predicate in the tree-file syntax.
    pub fn display<'a>(&'a self, atoms: &'a AtomTable) -> PredicateDisplay<'a> {
        PredicateDisplay { pred: self, atoms }
    }
}

pub struct PredicateDisplay<'a> {
    pred: &'a Predicate,
    atoms: &'a AtomTable,
}

impl fmt::Display for PredicateDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.pred {
            Predicate::True => write!(f, "true"),
            Predicate::False => write!(f, "false"),
            Predicate::Atom(i) => write!(f, "{}", self.atoms.name(*i)),
            Predicate::Not(p) => write!(f, "(not {})", p.display(self.atoms)),
            Predicate::And(ps) | Predicate::Or(ps) => {
                let op = if matches!(self.pred, Predicate::And(_)) { "and" } else { "or" };
                write!(f, "({op}")?;
                for p in ps {
                    write!(f, " {}", p.display(self.atoms))?;
                }
                write!(f, ")")
            }
        }
    }
}
