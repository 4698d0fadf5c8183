//! Linear EVM bytecode disassembly.

use std::collections::BTreeSet;

use crate::primitives::{Address, Selector};

pub const DELEGATECALL: u8 = 0xf4;
pub const PUSH1: u8 = 0x60;
pub const PUSH4: u8 = 0x63;
pub const PUSH32: u8 = 0x7f;

const MINIMAL_PROXY_PREFIX: [u8; 10] = [0x36, 0x3d, 0x3d, 0x37, 0x3d, 0x3d, 0x3d, 0x36, 0x3d, 0x73];
const MINIMAL_PROXY_SUFFIX: [u8; 15] = [
    0x5a, 0xf4, 0x3d, 0x82, 0x80, 0x3e, 0x90, 0x3d, 0x91, 0x60, 0x2b, 0x57, 0xfd, 0x5b, 0xf3,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Instruction<'a> {
    pub offset: usize,
    pub opcode: u8,
    /// PUSH data; shorter than declared when the code ends mid-immediate.
    pub immediate: &'a [u8],
}

/// Immediate length of `opcode`: 1..=32 for PUSH1..PUSH32, else 0.
pub fn immediate_len(opcode: u8) -> usize {
    if (PUSH1..=PUSH32).contains(&opcode) {
        (opcode - PUSH1 + 1) as usize
    } else {
        0
    }
}

pub fn instructions(code: &[u8]) -> impl Iterator<Item = Instruction<'_>> {
    let mut pc = 0;
    std::iter::from_fn(move || {
        let &opcode = code.get(pc)?;
        let start = pc + 1;
        let end = (start + immediate_len(opcode)).min(code.len());
        let ins = Instruction {
            offset: pc,
            opcode,
            immediate: &code[start..end],
        };
        pc = end;
        Some(ins)
    })
}

pub fn has_opcode(code: &[u8], opcode: u8) -> bool {
    instructions(code).any(|i| i.opcode == opcode)
}

/// Candidate function selectors: the data of every complete PUSH4.
pub fn push4_selectors(code: &[u8]) -> BTreeSet<Selector> {
    instructions(code)
        .filter(|i| i.opcode == PUSH4)
        .filter_map(|i| Selector::from_slice(i.immediate))
        .collect()
}

/// Implementation address embedded in an EIP-1167 minimal proxy.
pub fn minimal_proxy_target(code: &[u8]) -> Option<Address> {
    let n = MINIMAL_PROXY_PREFIX.len();
    let total = n + 20 + MINIMAL_PROXY_SUFFIX.len();
    code.windows(total).find_map(|w| {
        (w[..n] == MINIMAL_PROXY_PREFIX && w[n + 20..] == MINIMAL_PROXY_SUFFIX)
            .then(|| Address::from_slice(&w[n..n + 20]).expect("20-byte window"))
    })
}

/// Runtime code of an EIP-1167 proxy for `implementation`.
pub fn minimal_proxy_code(implementation: &Address) -> Vec<u8> {
    let mut code = MINIMAL_PROXY_PREFIX.to_vec();
    code.extend_from_slice(implementation.as_bytes());
    code.extend_from_slice(&MINIMAL_PROXY_SUFFIX);
    code
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn push_data_is_skipped() {
        // PUSH32 whose data is all 0xf4, then STOP
        let mut code = vec![PUSH32];
        code.extend([DELEGATECALL; 32]);
        code.push(0x00);
        assert!(!has_opcode(&code, DELEGATECALL));
        let ops: Vec<_> = instructions(&code).map(|i| (i.offset, i.opcode)).collect();
        assert_eq!(ops, vec![(0, PUSH32), (33, 0x00)]);
    }

    #[test]
    fn truncated_push() {
        let code = [0x61, 0xf4];
        let ins: Vec<_> = instructions(&code).collect();
        assert_eq!(ins.len(), 1);
        assert_eq!(ins[0].immediate, &[0xf4]);
    }

    #[test]
    fn minimal_proxy_roundtrip() {
        let a = Address::from_label("impl");
        let code = minimal_proxy_code(&a);
        assert_eq!(code.len(), 45);
        assert_eq!(
            hex::encode(&code),
            format!("363d3d373d3d3d363d73{}5af43d82803e903d91602b57fd5bf3", hex::encode(a.0))
        );
        assert_eq!(minimal_proxy_target(&code), Some(a));
        assert!(has_opcode(&code, DELEGATECALL));
        assert_eq!(minimal_proxy_target(&code[..44]), None);
    }

    #[test]
    fn selectors_from_push4() {
        let code = [0x63, 0xa9, 0x05, 0x9c, 0xbb, 0x14, 0x63, 0x70, 0xa0];
        let sels = push4_selectors(&code);
        assert_eq!(sels, [Selector([0xa9, 0x05, 0x9c, 0xbb])].into());
    }
}
