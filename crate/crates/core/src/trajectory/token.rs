//! Closed symbolic vocabulary the policy emits.

use alloc::format;
use alloc::string::String;
use core::fmt;
use core::str::FromStr;

use crate::world::MAX_HOPS;

/// Distinct think words.
pub const THINK_WORDS: u8 = 4;
/// Equivalent phrasings for every plan item kind.
pub const PLAN_VARIANTS: u8 = 3;
/// Search results the agent may point a browse at.
pub const RESULT_SLOTS: u8 = 3;

/// What a plan item tells the executor to do next.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ItemKind {
    Search,
    Browse,
    Answer,
}

impl ItemKind {
    pub const ALL: [ItemKind; 3] = [ItemKind::Search, ItemKind::Browse, ItemKind::Answer];

    pub fn index(self) -> usize {
        self as usize
    }

    fn name(self) -> &'static str {
        match self {
            ItemKind::Search => "search",
            ItemKind::Browse => "browse",
            ItemKind::Answer => "answer",
        }
    }
}

/// Entity references an argument can make.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EntitySlot {
    /// The entity most recently read from a tool response (the query's start
    /// entity before any lookup).
    Known,
    /// The start entity named in the query.
    Start,
}

/// Argument symbol carried by an [`ActionToken::Arg`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Symbol {
    Item(ItemKind, u8),
    Entity(EntitySlot),
    /// 1-based position of a relation in the query's hop chain.
    Relation(u8),
    /// 0-based rank in the most recent search results.
    Result(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TokenKind {
    Think,
    Plan,
    Search,
    Browse,
    Answer,
    Arg,
    EndSeg,
}

/// One generated token. `Think` and `Arg` carry a symbol, the rest do not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ActionToken {
    Think(u8),
    Plan,
    Search,
    Browse,
    Answer,
    Arg(Symbol),
    End,
}

const N_ITEMS: usize = 3 * PLAN_VARIANTS as usize;
const OFF_OPENERS: usize = THINK_WORDS as usize;
const OFF_ITEMS: usize = OFF_OPENERS + 4;
const OFF_ENTITIES: usize = OFF_ITEMS + N_ITEMS;
const OFF_RELATIONS: usize = OFF_ENTITIES + 2;
const OFF_RESULTS: usize = OFF_RELATIONS + MAX_HOPS as usize;
const OFF_END: usize = OFF_RESULTS + RESULT_SLOTS as usize;

/// Number of distinct tokens.
pub const VOCAB_SIZE: usize = OFF_END + 1;

impl ActionToken {
    pub fn kind(self) -> TokenKind {
        match self {
            ActionToken::Think(_) => TokenKind::Think,
            ActionToken::Plan => TokenKind::Plan,
            ActionToken::Search => TokenKind::Search,
            ActionToken::Browse => TokenKind::Browse,
            ActionToken::Answer => TokenKind::Answer,
            ActionToken::Arg(_) => TokenKind::Arg,
            ActionToken::End => TokenKind::EndSeg,
        }
    }

    /// True for the tokens that open an action segment.
    pub fn is_opener(self) -> bool {
        matches!(self, ActionToken::Plan | ActionToken::Search | ActionToken::Browse | ActionToken::Answer)
    }

    pub fn index(self) -> usize {
        match self {
            ActionToken::Think(w) => w as usize,
            ActionToken::Plan => OFF_OPENERS,
            ActionToken::Search => OFF_OPENERS + 1,
            ActionToken::Browse => OFF_OPENERS + 2,
            ActionToken::Answer => OFF_OPENERS + 3,
            ActionToken::Arg(Symbol::Item(k, v)) => OFF_ITEMS + k.index() * PLAN_VARIANTS as usize + v as usize,
            ActionToken::Arg(Symbol::Entity(EntitySlot::Known)) => OFF_ENTITIES,
            ActionToken::Arg(Symbol::Entity(EntitySlot::Start)) => OFF_ENTITIES + 1,
            ActionToken::Arg(Symbol::Relation(i)) => OFF_RELATIONS + i as usize - 1,
            ActionToken::Arg(Symbol::Result(r)) => OFF_RESULTS + r as usize,
            ActionToken::End => OFF_END,
        }
    }

    pub fn from_index(i: usize) -> Option<ActionToken> {
        Some(match i {
            i if i < OFF_OPENERS => ActionToken::Think(i as u8),
            i if i == OFF_OPENERS => ActionToken::Plan,
            i if i == OFF_OPENERS + 1 => ActionToken::Search,
            i if i == OFF_OPENERS + 2 => ActionToken::Browse,
            i if i == OFF_OPENERS + 3 => ActionToken::Answer,
            i if i < OFF_ENTITIES => {
                let j = i - OFF_ITEMS;
                let v = PLAN_VARIANTS as usize;
                ActionToken::Arg(Symbol::Item(ItemKind::ALL[j / v], (j % v) as u8))
            }
            i if i == OFF_ENTITIES => ActionToken::Arg(Symbol::Entity(EntitySlot::Known)),
            i if i == OFF_ENTITIES + 1 => ActionToken::Arg(Symbol::Entity(EntitySlot::Start)),
            i if i < OFF_RESULTS => ActionToken::Arg(Symbol::Relation((i - OFF_RELATIONS + 1) as u8)),
            i if i < OFF_END => ActionToken::Arg(Symbol::Result((i - OFF_RESULTS) as u8)),
            i if i == OFF_END => ActionToken::End,
            _ => return None,
        })
    }

    pub fn all() -> impl Iterator<Item = ActionToken> {
        (0..VOCAB_SIZE).map(|i| ActionToken::from_index(i).expect("index in vocabulary"))
    }
}

impl fmt::Display for ActionToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActionToken::Think(w) => write!(f, "think:{w}"),
            ActionToken::Plan => f.write_str("plan"),
            ActionToken::Search => f.write_str("search"),
            ActionToken::Browse => f.write_str("browse"),
            ActionToken::Answer => f.write_str("answer"),
            ActionToken::Arg(Symbol::Item(k, v)) => write!(f, "item:{}:{v}", k.name()),
            ActionToken::Arg(Symbol::Entity(EntitySlot::Known)) => f.write_str("ent:known"),
            ActionToken::Arg(Symbol::Entity(EntitySlot::Start)) => f.write_str("ent:start"),
            ActionToken::Arg(Symbol::Relation(i)) => write!(f, "rel:{i}"),
            ActionToken::Arg(Symbol::Result(r)) => write!(f, "url:{r}"),
            ActionToken::End => f.write_str("end"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown token {0:?}")]
pub struct TokenParseError(pub String);

impl FromStr for ActionToken {
    type Err = TokenParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || TokenParseError(s.into());
        let num = |t: &str| t.parse::<u8>().map_err(|_| bad());
        let tok = match s.split(':').collect::<alloc::vec::Vec<_>>().as_slice() {
            ["think", w] => ActionToken::Think(num(w)?),
            ["plan"] => ActionToken::Plan,
            ["search"] => ActionToken::Search,
            ["browse"] => ActionToken::Browse,
            ["answer"] => ActionToken::Answer,
            ["end"] => ActionToken::End,
            ["ent", "known"] => ActionToken::Arg(Symbol::Entity(EntitySlot::Known)),
            ["ent", "start"] => ActionToken::Arg(Symbol::Entity(EntitySlot::Start)),
            ["rel", i] => ActionToken::Arg(Symbol::Relation(num(i)?)),
            ["url", r] => ActionToken::Arg(Symbol::Result(num(r)?)),
            ["item", k, v] => {
                let kind = ItemKind::ALL.into_iter().find(|x| x.name() == *k).ok_or_else(bad)?;
                ActionToken::Arg(Symbol::Item(kind, num(v)?))
            }
            _ => return Err(bad()),
        };
        // out-of-range symbols are not part of the vocabulary
        let ok = match tok {
            ActionToken::Think(w) => w < THINK_WORDS,
            ActionToken::Arg(Symbol::Item(_, v)) => v < PLAN_VARIANTS,
            ActionToken::Arg(Symbol::Relation(i)) => (1..=MAX_HOPS).contains(&i),
            ActionToken::Arg(Symbol::Result(r)) => r < RESULT_SLOTS,
            _ => true,
        };
        if ok {
            Ok(tok)
        } else {
            Err(TokenParseError(format!("{s} (out of range)")))
        }
    }
}

#[cfg(feature = "serde")]
impl serde::Serialize for ActionToken {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[cfg(feature = "serde")]
impl<'de> serde::Deserialize<'de> for ActionToken {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = <alloc::borrow::Cow<'de, str>>::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
