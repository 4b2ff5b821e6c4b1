//! Identifier newtypes shared by every stage of the pipeline.

use std::fmt;

/// Slot index: `floor(timestamp / slot_len)`. Travel-graph levels are slots.
pub type Slot = u64;

/// Absolute seconds from the configured epoch.
pub type Timestamp = u64;

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

string_id!(
    /// A BTS cell identifier.
    CellId
);
string_id!(
    /// An observed entity (phone), also the label of its personal agent.
    AgentId
);
string_id!(
    /// A transit line identifier.
    LineId
);

/// Token check used by every line-oriented format: ids may not contain
/// whitespace and may not be empty.
pub(crate) fn is_valid_token(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(char::is_whitespace)
}
