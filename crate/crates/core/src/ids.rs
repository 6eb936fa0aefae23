//! Process and object identifiers.

use alloc::string::String;
use core::fmt;
use core::str::FromStr;

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

/// Whether a process replicates objects or invokes operations on them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Server,
    Client,
}

/// A process identity, unique within a scenario. Rendered as `S3` / `C1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProcessId {
    pub role: Role,
    pub index: u32,
}

impl ProcessId {
    pub const fn server(index: u32) -> Self {
        ProcessId { role: Role::Server, index }
    }

    pub const fn client(index: u32) -> Self {
        ProcessId { role: Role::Client, index }
    }

    pub fn is_server(&self) -> bool {
        self.role == Role::Server
    }

    pub fn is_client(&self) -> bool {
        self.role == Role::Client
    }
}

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.role {
            Role::Server => write!(f, "S{}", self.index),
            Role::Client => write!(f, "C{}", self.index),
        }
    }
}

impl FromStr for ProcessId {
    type Err = ParseIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (head, rest) = s.split_at(s.len().min(1));
        let role = match head {
            "S" => Role::Server,
            "C" => Role::Client,
            _ => return Err(ParseIdError),
        };
        let index = rest.parse().map_err(|_| ParseIdError)?;
        Ok(ProcessId { role, index })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParseIdError;

impl fmt::Display for ParseIdError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "process ids look like S0 or C1")
    }
}

impl Serialize for ProcessId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        if serializer.is_human_readable() {
            serializer.collect_str(self)
        } else {
            let role = match self.role {
                Role::Server => 0u64,
                Role::Client => 1,
            };
            serializer.serialize_u64(role << 32 | self.index as u64)
        }
    }
}

impl<'de> Deserialize<'de> for ProcessId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        if deserializer.is_human_readable() {
            let s = alloc::string::String::deserialize(deserializer)?;
            s.parse().map_err(|_| de::Error::custom("invalid process id"))
        } else {
            let packed = u64::deserialize(deserializer)?;
            let role = match packed >> 32 {
                0 => Role::Server,
                1 => Role::Client,
                _ => return Err(de::Error::custom("invalid process id")),
            };
            Ok(ProcessId { role, index: packed as u32 })
        }
    }
}

/// Name of a logical replicated object in a scenario (`"GS"`, `"L0"`, ...).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjectId(pub String);

impl ObjectId {
    pub fn new(name: &str) -> Self {
        ObjectId(String::from(name))
    }
}

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ObjectId {
    fn from(s: &str) -> Self {
        ObjectId::new(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_and_parses() {
        let s = ProcessId::server(3);
        let c = ProcessId::client(1);
        assert_eq!(alloc::format!("{s}"), "S3");
        assert_eq!(alloc::format!("{c}"), "C1");
        assert_eq!("S3".parse::<ProcessId>().unwrap(), s);
        assert_eq!("C1".parse::<ProcessId>().unwrap(), c);
        assert!("X9".parse::<ProcessId>().is_err());
        assert!("S".parse::<ProcessId>().is_err());
    }

    #[test]
    fn json_round_trip() {
        let id = ProcessId::server(7);
        let json = serde_json::to_string(&id).unwrap();
        assert_eq!(json, "\"S7\"");
        let back: ProcessId = serde_json::from_str(&json).unwrap();
        assert_eq!(back, id);
    }
}
