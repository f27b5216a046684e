//! Action grammar shared by both environments.
//!
//! | form                        | verb        | arguments        |
//! |-----------------------------|-------------|------------------|
//! | `go to <r>`                 | `GoTo`      | `[r]`            |
//! | `open <r>` / `close <r>`    | `Open`/`Close` | `[r]`         |
//! | `take <o> from <r>`         | `TakeFrom`  | `[o, r]`         |
//! | `move <o> to <r>`           | `MoveTo`    | `[o, r]`         |
//! | `inventory`, `look`, `help` | ...         | `[]`             |
//! | `search[<q>]`               | `Search`    | `[q]`            |
//! | `click[<v>]`                | `Click`     | `[v]`            |
//! | `buy now`                   | `Buy`       | `[]`             |
//!
//! Verbs and connective words match case-insensitively; arguments keep the
//! caller's spelling. Anything else parses to [`ParsedAction::Unparseable`].

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verb {
    GoTo,
    Open,
    Close,
    TakeFrom,
    MoveTo,
    Inventory,
    Look,
    Help,
    Search,
    Click,
    Buy,
}

impl Verb {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verb::GoTo => "go-to",
            Verb::Open => "open",
            Verb::Close => "close",
            Verb::TakeFrom => "take-from",
            Verb::MoveTo => "move-to",
            Verb::Inventory => "inventory",
            Verb::Look => "look",
            Verb::Help => "help",
            Verb::Search => "search",
            Verb::Click => "click",
            Verb::Buy => "buy",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        let v = match name.trim().to_ascii_lowercase().as_str() {
            "go-to" | "goto" | "go" => Verb::GoTo,
            "open" => Verb::Open,
            "close" => Verb::Close,
            "take-from" | "take" => Verb::TakeFrom,
            "move-to" | "move" => Verb::MoveTo,
            "inventory" => Verb::Inventory,
            "look" => Verb::Look,
            "help" => Verb::Help,
            "search" => Verb::Search,
            "click" => Verb::Click,
            "buy" => Verb::Buy,
            _ => return None,
        };
        Some(v)
    }
}

impl fmt::Display for Verb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionCommand {
    pub verb: Verb,
    pub arguments: Vec<String>,
    pub raw: String,
}

impl ActionCommand {
    /// Builds a command whose `raw` is the canonical rendering.
    pub fn new(verb: Verb, arguments: Vec<String>) -> Self {
        let raw = render(verb, &arguments);
        ActionCommand {
            verb,
            arguments,
            raw,
        }
    }

    /// Canonical text for this verb and argument list.
    pub fn render(&self) -> String {
        render(self.verb, &self.arguments)
    }

    pub fn arg(&self, i: usize) -> &str {
        self.arguments.get(i).map(String::as_str).unwrap_or("")
    }
}

fn render(verb: Verb, args: &[String]) -> String {
    let a = |i: usize| args.get(i).map(String::as_str).unwrap_or("");
    match verb {
        Verb::GoTo => format!("go to {}", a(0)),
        Verb::Open => format!("open {}", a(0)),
        Verb::Close => format!("close {}", a(0)),
        Verb::TakeFrom => format!("take {} from {}", a(0), a(1)),
        Verb::MoveTo => format!("move {} to {}", a(0), a(1)),
        Verb::Inventory => "inventory".into(),
        Verb::Look => "look".into(),
        Verb::Help => "help".into(),
        Verb::Search => format!("search[{}]", a(0)),
        Verb::Click => format!("click[{}]", a(0)),
        Verb::Buy => "buy now".into(),
    }
}

/// Result of [`parse_action`]: a command, or the input kept verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParsedAction {
    Command(ActionCommand),
    Unparseable { raw: String },
}

impl ParsedAction {
    pub fn raw(&self) -> &str {
        match self {
            ParsedAction::Command(c) => &c.raw,
            ParsedAction::Unparseable { raw } => raw,
        }
    }

    pub fn command(&self) -> Option<&ActionCommand> {
        match self {
            ParsedAction::Command(c) => Some(c),
            ParsedAction::Unparseable { .. } => None,
        }
    }

    pub fn verb(&self) -> Option<Verb> {
        self.command().map(|c| c.verb)
    }
}

/// Parse free text into an action. Never fails.
pub fn parse_action(raw: &str) -> ParsedAction {
    let text = raw.trim();
    match parse_command(text) {
        Some((verb, arguments)) => ParsedAction::Command(ActionCommand {
            verb,
            arguments,
            raw: text.to_string(),
        }),
        None => ParsedAction::Unparseable {
            raw: text.to_string(),
        },
    }
}

fn parse_command(text: &str) -> Option<(Verb, Vec<String>)> {
    if text.is_empty() {
        return None;
    }
    let lower = text.to_ascii_lowercase();

    if let Some(inner) = bracketed(text, &lower, "search") {
        return Some((Verb::Search, vec![inner.to_string()]));
    }
    if let Some(inner) = bracketed(text, &lower, "click") {
        if inner.trim().is_empty() {
            return None;
        }
        return Some((Verb::Click, vec![inner.to_string()]));
    }

    match lower.as_str() {
        "inventory" => return Some((Verb::Inventory, vec![])),
        "look" => return Some((Verb::Look, vec![])),
        "help" => return Some((Verb::Help, vec![])),
        "buy now" => return Some((Verb::Buy, vec![])),
        _ => {}
    }

    if let Some(target) = after_prefix(text, &lower, "go to ") {
        return Some((Verb::GoTo, vec![target]));
    }
    if let Some(target) = after_prefix(text, &lower, "open ") {
        return Some((Verb::Open, vec![target]));
    }
    if let Some(target) = after_prefix(text, &lower, "close ") {
        return Some((Verb::Close, vec![target]));
    }
    if let Some((o, r)) = two_place(text, &lower, "take ", " from ") {
        return Some((Verb::TakeFrom, vec![o, r]));
    }
    if let Some((o, r)) = two_place(text, &lower, "move ", " to ") {
        return Some((Verb::MoveTo, vec![o, r]));
    }
    None
}

fn bracketed<'a>(text: &'a str, lower: &str, verb: &str) -> Option<&'a str> {
    let open = verb.len();
    if lower.starts_with(verb) && lower[open..].starts_with('[') && text.ends_with(']') {
        Some(&text[open + 1..text.len() - 1])
    } else {
        None
    }
}

fn after_prefix(text: &str, lower: &str, prefix: &str) -> Option<String> {
    if !lower.starts_with(prefix) {
        return None;
    }
    let rest = &text[prefix.len()..];
    (!rest.trim().is_empty() && rest == rest.trim()).then(|| rest.to_string())
}

fn two_place(text: &str, lower: &str, prefix: &str, sep: &str) -> Option<(String, String)> {
    if !lower.starts_with(prefix) {
        return None;
    }
    let at = lower[prefix.len()..].find(sep)? + prefix.len();
    let first = &text[prefix.len()..at];
    let second = &text[at + sep.len()..];
    let ok = |s: &str| !s.trim().is_empty() && s == s.trim();
    (ok(first) && ok(second)).then(|| (first.to_string(), second.to_string()))
}
