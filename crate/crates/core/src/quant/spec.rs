use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of quantized layers (conv1, conv2, fc1, fc2).
pub const LAYERS: usize = 4;

/// Per-layer bit-width, shared by the layer's weights and input activations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct QuantSpec {
    bits: [u32; LAYERS],
}

impl QuantSpec {
    pub fn new(bits: [u32; LAYERS]) -> Result<Self> {
        if let Some(b) = bits.iter().find(|b| **b != 4 && **b != 8) {
            return Err(Error::InvalidArgument(format!(
                "only 4- and 8-bit layers are supported, got {b}"
            )));
        }
        Ok(Self { bits })
    }

    pub fn uniform(bits: u32) -> Result<Self> {
        Self::new([bits; LAYERS])
    }

    pub fn bits(&self) -> [u32; LAYERS] {
        self.bits
    }

    pub fn layer(&self, i: usize) -> u32 {
        self.bits[i]
    }
}

impl fmt::Display for QuantSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d] = self.bits;
        write!(f, "{a}-{b}-{c}-{d}")
    }
}

impl FromStr for QuantSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<u32> = s
            .split('-')
            .map(|p| p.trim().parse::<u32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::InvalidArgument(format!("bad precision spec `{s}`")))?;
        let bits: [u32; LAYERS] = parts
            .try_into()
            .map_err(|_| Error::InvalidArgument(format!("spec `{s}` needs {LAYERS} layers")))?;
        Self::new(bits)
    }
}

impl TryFrom<String> for QuantSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<QuantSpec> for String {
    fn from(s: QuantSpec) -> String {
        s.to_string()
    }
}

/// Every layer-wise INT4/INT8 assignment, in lexicographic order with 8
/// before 4 (so `8-8-8-8` comes first). With `first_fixed_8` the first layer
/// is pinned to 8 bits.
pub fn enumerate_specs(first_fixed_8: bool) -> Vec<QuantSpec> {
    let mut out = Vec::new();
    for mask in 0u32..(1 << LAYERS) {
        let mut bits = [8u32; LAYERS];
        for (i, b) in bits.iter_mut().enumerate() {
            if mask & (1 << (LAYERS - 1 - i)) != 0 {
                *b = 4;
            }
        }
        if first_fixed_8 && bits[0] != 8 {
            continue;
        }
        out.push(QuantSpec { bits });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_fixed_gives_eight_specs() {
        let specs = enumerate_specs(true);
        assert_eq!(specs.len(), 8);
        assert!(specs.iter().all(|s| s.layer(0) == 8));
        assert!(specs.contains(&"8-8-4-8".parse().unwrap()));
    }

    #[test]
    fn all_sixteen() {
        let specs = enumerate_specs(false);
        assert_eq!(specs.len(), 16);
        let mut dedup = specs.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), 16);
        assert_eq!(specs[0].to_string(), "8-8-8-8");
        assert_eq!(specs[15].to_string(), "4-4-4-4");
        assert_eq!(enumerate_specs(false), specs);
    }

    #[test]
    fn parse_rejects_two_bit() {
        assert!("8-2-8-8".parse::<QuantSpec>().is_err());
        assert!("8-8-8".parse::<QuantSpec>().is_err());
        assert_eq!("8-4-4-8".parse::<QuantSpec>().unwrap().bits(), [8, 4, 4, 8]);
    }
}
