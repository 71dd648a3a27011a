use std::fmt;
use std::path::Path;

use regex::Regex;
use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Pattern used for attributes whose values are arbitrary text (dynamic schemas).
pub const FREE_TEXT_PATTERN: &str = r"(?s).+";

const ISO_DATE_PROBES: [&str; 2] = ["1982-10-31", "2020-01-01"];
const NUMBER_PROBE: &str = "1833";
const WORDS_PROBE: &str = "hello world";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    Date,
    FreeText,
    Numeric,
}

impl ValueKind {
    /// Classify a value pattern by probing it with representative values.
    fn infer(regex: &Regex) -> ValueKind {
        let words = regex.is_match(WORDS_PROBE);
        let number = regex.is_match(NUMBER_PROBE);
        if !words && !number && ISO_DATE_PROBES.iter().all(|p| regex.is_match(p)) {
            ValueKind::Date
        } else if number && !words {
            ValueKind::Numeric
        } else {
            ValueKind::FreeText
        }
    }
}

#[derive(Debug, Clone)]
pub struct Attribute {
    pub name: String,
    pub pattern: String,
    pub kind: ValueKind,
    anchored: Regex,
}

impl Attribute {
    /// Whole-value match against the attribute's pattern.
    pub fn conforms(&self, value: &str) -> bool {
        self.anchored.is_match(value)
    }
}

impl PartialEq for Attribute {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.pattern == other.pattern && self.kind == other.kind
    }
}

/// Ordered set of slots to fill per document. Each slot's value type is a regex.
#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    attributes: Vec<Attribute>,
}

impl Schema {
    pub fn from_entries<I, K, V>(entries: I) -> Result<Schema>
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let mut attributes: Vec<Attribute> = Vec::new();
        for (name, pattern) in entries {
            let name = name.into();
            let pattern = pattern.into();
            if name.trim().is_empty() {
                return Err(Error::schema(name, "attribute name is empty"));
            }
            if attributes.iter().any(|a| a.name == name) {
                return Err(Error::schema(name, "duplicate attribute"));
            }
            let anchored = Regex::new(&format!("^(?:{pattern})$"))
                .map_err(|e| Error::schema(&name, format!("pattern does not compile: {e}")))?;
            let kind = ValueKind::infer(&anchored);
            attributes.push(Attribute {
                name,
                pattern,
                kind,
                anchored,
            });
        }
        if attributes.is_empty() {
            return Err(Error::schema("", "a schema must define at least one attribute"));
        }
        Ok(Schema { attributes })
    }

    pub fn from_json_str(text: &str) -> Result<Schema> {
        let entries: OrderedEntries = serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            match msg.strip_prefix("duplicate attribute ") {
                Some(rest) => {
                    let name = rest.split('`').nth(1).unwrap_or(rest).to_string();
                    Error::schema(name, "duplicate attribute")
                }
                None => Error::schema("", format!("invalid schema file: {msg}")),
            }
        })?;
        Schema::from_entries(entries.0)
    }

    /// The six registration-form attributes of the VRDU benchmark.
    pub fn vrdu_registration() -> Schema {
        Schema::from_entries([
            ("file_date", r"\d{4}-\d{2}-\d{2}"),
            ("foreign_princ_name", r"[\w\s.,'&-]+"),
            ("registrant_name", r"[\w\s.,'&-]+"),
            ("registration_num", r"\d+"),
            ("signer_name", r"[\w\s'.-]+"),
            ("signer_title", r"[\w\s.,'&-]+"),
        ])
        .expect("built-in schema is valid")
    }

    /// A schema of free-text slots, one per key, in the given order.
    pub fn dynamic<I, S>(keys: I) -> Result<Schema>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Schema::from_entries(keys.into_iter().map(|k| (k.into(), FREE_TEXT_PATTERN)))
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn get(&self, name: &str) -> Option<&Attribute> {
        self.attributes.iter().find(|a| a.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.attributes.iter().map(|a| a.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    /// Pretty JSON mapping of attribute name to pattern, in schema order.
    pub fn representation(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    /// Short content hash of the schema representation.
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(serde_json::to_vec(self).expect("schema serializes"));
        hex::encode(&hash[..8])
    }
}

pub fn load_schema(path: impl AsRef<Path>) -> Result<Schema> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Schema::from_json_str(&text)
}

impl Serialize for Schema {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.attributes.len()))?;
        for attr in &self.attributes {
            map.serialize_entry(&attr.name, &attr.pattern)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for Schema {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let entries = OrderedEntries::deserialize(deserializer)?;
        Schema::from_entries(entries.0).map_err(serde::de::Error::custom)
    }
}

/// JSON object read in file order, rejecting repeated keys.
struct OrderedEntries(Vec<(String, String)>);

impl<'de> Deserialize<'de> for OrderedEntries {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct EntriesVisitor;

        impl<'de> Visitor<'de> for EntriesVisitor {
            type Value = OrderedEntries;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a mapping of attribute name to pattern string")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> std::result::Result<Self::Value, A::Error> {
                let mut entries: Vec<(String, String)> = Vec::new();
                while let Some((key, value)) = access.next_entry::<String, String>()? {
                    if entries.iter().any(|(k, _)| *k == key) {
                        return Err(serde::de::Error::custom(format!("duplicate attribute `{key}`")));
                    }
                    entries.push((key, value));
                }
                Ok(OrderedEntries(entries))
            }
        }

        deserializer.deserialize_map(EntriesVisitor)
    }
}
