//! Fixed-size chain identifiers and amounts with `0x`-hex serde.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;
use num_traits::{Num, Zero};
use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HexError {
    #[error("missing 0x prefix in {0:?}")]
    MissingPrefix(String),
    #[error("expected {expected} bytes, got {got} in {input:?}")]
    Length {
        expected: usize,
        got: usize,
        input: String,
    },
    #[error("invalid hex in {0:?}")]
    Invalid(String),
    #[error("invalid quantity {0:?}")]
    Quantity(String),
}

fn strip_0x(s: &str) -> Result<&str, HexError> {
    s.strip_prefix("0x")
        .or_else(|| s.strip_prefix("0X"))
        .ok_or_else(|| HexError::MissingPrefix(s.to_string()))
}

fn decode_fixed<const N: usize>(s: &str) -> Result<[u8; N], HexError> {
    let body = strip_0x(s)?;
    if body.len() != 2 * N {
        return Err(HexError::Length {
            expected: N,
            got: body.len() / 2,
            input: s.to_string(),
        });
    }
    let mut out = [0u8; N];
    hex::decode_to_slice(body, &mut out).map_err(|_| HexError::Invalid(s.to_string()))?;
    Ok(out)
}

macro_rules! fixed_bytes {
    ($(#[$meta:meta])* $name:ident, $len:expr) => {
        $(#[$meta])*
        #[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
        pub struct $name(pub [u8; $len]);

        impl $name {
            pub const LEN: usize = $len;
            pub const ZERO: Self = Self([0u8; $len]);

            pub fn as_bytes(&self) -> &[u8; $len] {
                &self.0
            }

            pub fn is_zero(&self) -> bool {
                self.0.iter().all(|b| *b == 0)
            }

            pub fn from_slice(bytes: &[u8]) -> Option<Self> {
                <[u8; $len]>::try_from(bytes).ok().map(Self)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "0x{}", hex::encode(self.0))
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                fmt::Display::fmt(self, f)
            }
        }

        impl FromStr for $name {
            type Err = HexError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                decode_fixed::<$len>(s.trim()).map(Self)
            }
        }

        impl From<[u8; $len]> for $name {
            fn from(bytes: [u8; $len]) -> Self {
                Self(bytes)
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                let s = String::deserialize(deserializer)?;
                s.parse().map_err(de::Error::custom)
            }
        }
    };
}

fixed_bytes!(
    /// 20-byte account address. Always rendered as lowercase hex with a `0x` prefix.
    Address,
    20
);
fixed_bytes!(
    /// 32-byte transaction hash.
    TxHash,
    32
);
fixed_bytes!(
    /// 4-byte function selector.
    Selector,
    4
);

impl Address {
    /// Deterministic address derived from a label; used by fixtures and synthetic data.
    pub fn from_label(label: &str) -> Self {
        let h = crate::keccak::keccak256(label.as_bytes());
        let mut out = [0u8; 20];
        out.copy_from_slice(&h[12..]);
        Self(out)
    }
}

impl TxHash {
    pub fn from_label(label: &str) -> Self {
        Self(crate::keccak::keccak256(label.as_bytes()))
    }
}

/// Arbitrary-length byte string rendered as `0x`-hex.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Bytes(pub Vec<u8>);

impl Bytes {
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }
}

impl fmt::Display for Bytes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", hex::encode(&self.0))
    }
}

impl fmt::Debug for Bytes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for Bytes {
    type Err = HexError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let body = strip_0x(s.trim())?;
        hex::decode(body)
            .map(Bytes)
            .map_err(|_| HexError::Invalid(s.to_string()))
    }
}

impl From<Vec<u8>> for Bytes {
    fn from(v: Vec<u8>) -> Self {
        Bytes(v)
    }
}

impl AsRef<[u8]> for Bytes {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

impl Serialize for Bytes {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Bytes {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(de::Error::custom)
    }
}

/// Unsigned 256-bit amount in wei.
///
/// Serialized as a decimal string; deserializes from decimal strings, `0x` quantities
/// or plain JSON integers.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Wei(BigUint);

impl Wei {
    pub fn zero() -> Self {
        Wei(BigUint::zero())
    }

    pub fn from_u128(v: u128) -> Self {
        Wei(BigUint::from(v))
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn as_biguint(&self) -> &BigUint {
        &self.0
    }

    /// Renders as an RPC quantity (`0x` hex without leading zeros).
    pub fn to_quantity(&self) -> String {
        format!("0x{}", self.0.to_str_radix(16))
    }

    pub fn from_quantity(s: &str) -> Result<Self, HexError> {
        let body = strip_0x(s)?;
        if body.is_empty() {
            return Ok(Wei::zero());
        }
        BigUint::from_str_radix(body, 16)
            .map(Wei)
            .map_err(|_| HexError::Quantity(s.to_string()))
    }

    pub fn checked_sub(&self, other: &Wei) -> Option<Wei> {
        (self.0 >= other.0).then(|| Wei(&self.0 - &other.0))
    }
}

impl std::ops::Add for &Wei {
    type Output = Wei;
    fn add(self, rhs: &Wei) -> Wei {
        Wei(&self.0 + &rhs.0)
    }
}

impl fmt::Display for Wei {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

impl fmt::Debug for Wei {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Wei({})", self.0)
    }
}

impl FromStr for Wei {
    type Err = HexError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.starts_with("0x") || s.starts_with("0X") {
            Wei::from_quantity(s)
        } else {
            BigUint::from_str_radix(s, 10)
                .map(Wei)
                .map_err(|_| HexError::Quantity(s.to_string()))
        }
    }
}

impl Serialize for Wei {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Wei {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        match serde_json::Value::deserialize(deserializer)? {
            serde_json::Value::String(s) => s.parse().map_err(de::Error::custom),
            serde_json::Value::Number(n) => n
                .as_u64()
                .map(|v| Wei(BigUint::from(v)))
                .ok_or_else(|| de::Error::custom(format!("invalid wei amount {n}"))),
            other => Err(de::Error::custom(format!("invalid wei amount {other}"))),
        }
    }
}

/// Parses an RPC block-number quantity.
pub fn parse_quantity_u64(s: &str) -> Result<u64, HexError> {
    let body = strip_0x(s)?;
    u64::from_str_radix(body, 16).map_err(|_| HexError::Quantity(s.to_string()))
}

pub fn quantity(n: u64) -> String {
    format!("0x{n:x}")
}
