//! FNV-1a fingerprints for freeze contracts and manifest ids.

use alloc::string::String;
use core::fmt::Write as _;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, Clone)]
pub struct Fnv1a(u64);

impl Fnv1a {
    pub fn new() -> Self {
        Fnv1a(FNV_OFFSET)
    }

    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(FNV_PRIME);
        }
    }

    pub fn write_u64(&mut self, v: u64) {
        self.write(&v.to_le_bytes());
    }

    pub fn write_f64(&mut self, v: f64) {
        self.write(&v.to_le_bytes());
    }

    pub fn write_f64s(&mut self, vs: &[f64]) {
        for &v in vs {
            self.write_f64(v);
        }
    }

    pub fn write_str(&mut self, s: &str) {
        self.write_u64(s.len() as u64);
        self.write(s.as_bytes());
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv1a {
    fn default() -> Self {
        Self::new()
    }
}

pub fn hash_f64s(vs: &[f64]) -> u64 {
    let mut h = Fnv1a::new();
    h.write_f64s(vs);
    h.finish()
}

/// Fixed-width lowercase hex, convenient as an id string.
pub fn hex(v: u64) -> String {
    let mut s = String::with_capacity(16);
    write!(s, "{v:016x}").expect("writing to String cannot fail");
    s
}

/// Fingerprint of a list of named tensors; order-sensitive.
pub fn hash_tensors(tensors: &[(&str, &[f64])]) -> u64 {
    let mut h = Fnv1a::new();
    for (name, data) in tensors {
        h.write_str(name);
        h.write_u64(data.len() as u64);
        h.write_f64s(data);
    }
    h.finish()
}

pub fn hash_strings<'a>(items: impl IntoIterator<Item = &'a str>) -> u64 {
    let mut h = Fnv1a::new();
    for s in items {
        h.write_str(s);
    }
    h.finish()
}

#[allow(dead_code)]
pub fn hash_bytes(bytes: &[u8]) -> u64 {
    let mut h = Fnv1a::new();
    h.write(bytes);
    h.finish()
}

pub fn hash_many(parts: &[u64]) -> u64 {
    let mut h = Fnv1a::new();
    for &p in parts {
        h.write_u64(p);
    }
    h.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn distinct_inputs_distinct_hashes() {
        assert_ne!(hash_f64s(&[1.0, 2.0]), hash_f64s(&[2.0, 1.0]));
        assert_ne!(hash_strings(["a", "b"]), hash_strings(["ab"]));
    }

    #[test]
    fn hex_is_fixed_width() {
        assert_eq!(hex(0).len(), 16);
        assert_eq!(hex(u64::MAX).len(), 16);
    }

    #[test]
    fn tensor_names_matter() {
        let data = vec![0.5, -1.5];
        assert_ne!(
            hash_tensors(&[("a", &data)]),
            hash_tensors(&[("b", &data)])
        );
    }
}
