//! Strategy and analytical-logic catalog, and the flat action space the
//! Q-network indexes: `action = strategy_id * logic_count + logic_id`.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The catalog shipped with the crate: 52 strategies and 9 logics.
pub const DEFAULT_CATALOG: &str = include_str!("../assets/catalog.txt");

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CatalogError {
    #[error("line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("duplicate name {0:?}")]
    DuplicateName(String),
    #[error("line {line}: unknown category {category:?}")]
    UnknownCategory { line: usize, category: String },
    #[error("index ({strategy}, {logic}) outside a {strategies}x{logics} catalog")]
    IndexOutOfRange {
        strategy: usize,
        logic: usize,
        strategies: usize,
        logics: usize,
    },
    #[error("action {action} outside an action space of {size}")]
    ActionOutOfRange { action: usize, size: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    BasicTactics,
    Defensive,
    Offensive,
    Opening,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::BasicTactics,
        Category::Defensive,
        Category::Offensive,
        Category::Opening,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::BasicTactics => "basic-tactics",
            Category::Defensive => "defensive",
            Category::Offensive => "offensive",
            Category::Opening => "opening",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s.trim())
            .ok_or(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Strategy {
    pub id: usize,
    pub name: String,
    pub category: Category,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Logic {
    pub id: usize,
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionIndex(pub usize);

impl fmt::Display for ActionIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Catalog {
    strategies: Vec<Strategy>,
    logics: Vec<Logic>,
}

enum Section {
    None,
    Strategies(Category),
    Logics,
}

impl Catalog {
    pub fn default_catalog() -> Catalog {
        Catalog::parse(DEFAULT_CATALOG).expect("shipped catalog is valid")
    }

    /// Parse the line-oriented catalog format.
    pub fn parse(source: &str) -> Result<Catalog, CatalogError> {
        let mut strategies = Vec::new();
        let mut logics = Vec::new();
        let mut section = Section::None;
        let mut strategy_names = HashSet::new();
        let mut logic_names = HashSet::new();

        for (i, raw) in source.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(header) = line.strip_prefix('[') {
                let header = header.strip_suffix(']').ok_or_else(|| CatalogError::ParseError {
                    line: line_no,
                    message: format!("unterminated section header {line:?}"),
                })?;
                section = if header.trim() == "logics" {
                    Section::Logics
                } else if let Some(cat) = header.strip_prefix("strategies:") {
                    let category = cat.parse().map_err(|_| CatalogError::UnknownCategory {
                        line: line_no,
                        category: cat.trim().to_string(),
                    })?;
                    Section::Strategies(category)
                } else {
                    return Err(CatalogError::ParseError {
                        line: line_no,
                        message: format!("unknown section [{header}]"),
                    });
                };
                continue;
            }
            let (name, description) = line.split_once('|').ok_or_else(|| CatalogError::ParseError {
                line: line_no,
                message: "expected `name | description`".into(),
            })?;
            let name = name.trim().to_string();
            let description = description.trim().to_string();
            if name.is_empty() || description.is_empty() {
                return Err(CatalogError::ParseError {
                    line: line_no,
                    message: "empty name or description".into(),
                });
            }
            match section {
                Section::None => {
                    return Err(CatalogError::ParseError {
                        line: line_no,
                        message: "entry before any section header".into(),
                    })
                }
                Section::Strategies(category) => {
                    if !strategy_names.insert(name.clone()) {
                        return Err(CatalogError::DuplicateName(name));
                    }
                    strategies.push(Strategy {
                        id: strategies.len(),
                        name,
                        category,
                        description,
                    });
                }
                Section::Logics => {
                    if !logic_names.insert(name.clone()) {
                        return Err(CatalogError::DuplicateName(name));
                    }
                    logics.push(Logic {
                        id: logics.len(),
                        name,
                        description,
                    });
                }
            }
        }
        if strategies.is_empty() || logics.is_empty() {
            return Err(CatalogError::ParseError {
                line: 0,
                message: "catalog needs at least one strategy and one logic".into(),
            });
        }
        Ok(Catalog { strategies, logics })
    }

    pub fn load(path: &std::path::Path) -> Result<Catalog, CatalogError> {
        let text = std::fs::read_to_string(path).map_err(|e| CatalogError::ParseError {
            line: 0,
            message: format!("{}: {e}", path.display()),
        })?;
        Catalog::parse(&text)
    }

    pub fn strategies(&self) -> &[Strategy] {
        &self.strategies
    }

    pub fn logics(&self) -> &[Logic] {
        &self.logics
    }

    pub fn action_space_size(&self) -> usize {
        self.strategies.len() * self.logics.len()
    }

    pub fn encode_action(&self, strategy: usize, logic: usize) -> Result<ActionIndex, CatalogError> {
        if strategy >= self.strategies.len() || logic >= self.logics.len() {
            return Err(CatalogError::IndexOutOfRange {
                strategy,
                logic,
                strategies: self.strategies.len(),
                logics: self.logics.len(),
            });
        }
        Ok(ActionIndex(strategy * self.logics.len() + logic))
    }

    pub fn decode_action(&self, action: ActionIndex) -> Result<(&Strategy, &Logic), CatalogError> {
        let size = self.action_space_size();
        if action.0 >= size {
            return Err(CatalogError::ActionOutOfRange {
                action: action.0,
                size,
            });
        }
        let n = self.logics.len();
        Ok((&self.strategies[action.0 / n], &self.logics[action.0 % n]))
    }
}
