//! Canonical byte encoding used for every signature and MAC in the crate.
//!
//! Each field is written as a 4-byte big-endian length followed by the field
//! bytes. Integers are 8-byte big-endian, reals are their IEEE-754 bit pattern
//! (big-endian), booleans a single byte. Sequences write their element count
//! as an integer field followed by each element as a nested length-prefixed
//! blob. Fields are always written in declared order.

/// Types with a canonical byte form.
pub trait Canonical {
    fn encode(&self, w: &mut CanonWriter);

    fn canonical_bytes(&self) -> Vec<u8> {
        let mut w = CanonWriter::new();
        self.encode(&mut w);
        w.into_bytes()
    }
}

#[derive(Debug, Default, Clone)]
pub struct CanonWriter {
    buf: Vec<u8>,
}

impl CanonWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        let len = u32::try_from(b.len()).expect("canonical field exceeds 4 GiB");
        self.buf.extend_from_slice(&len.to_be_bytes());
        self.buf.extend_from_slice(b);
        self
    }

    pub fn str(&mut self, s: &str) -> &mut Self {
        self.bytes(s.as_bytes())
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.bytes(&v.to_be_bytes())
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.bytes(&v.to_bits().to_be_bytes())
    }

    pub fn bool(&mut self, v: bool) -> &mut Self {
        self.bytes(&[u8::from(v)])
    }

    pub fn opt_u64(&mut self, v: Option<u64>) -> &mut Self {
        match v {
            Some(v) => self.bool(true).u64(v),
            None => self.bool(false),
        }
    }

    /// Writes a nested value as a single length-prefixed blob.
    pub fn nested<T: Canonical + ?Sized>(&mut self, v: &T) -> &mut Self {
        let inner = v.canonical_bytes();
        self.bytes(&inner)
    }

    pub fn seq<'a, T, I>(&mut self, items: I) -> &mut Self
    where
        T: Canonical + 'a,
        I: IntoIterator<Item = &'a T>,
        I::IntoIter: ExactSizeIterator,
    {
        let it = items.into_iter();
        self.u64(it.len() as u64);
        for item in it {
            self.nested(item);
        }
        self
    }

    pub fn str_seq<'a, I>(&mut self, items: I) -> &mut Self
    where
        I: IntoIterator<Item = &'a String>,
        I::IntoIter: ExactSizeIterator,
    {
        let it = items.into_iter();
        self.u64(it.len() as u64);
        for s in it {
            self.str(s);
        }
        self
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}

impl Canonical for String {
    fn encode(&self, w: &mut CanonWriter) {
        w.str(self);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_prefix_and_big_endian_integers() {
        let mut w = CanonWriter::new();
        w.str("ab").u64(258);
        assert_eq!(
            w.into_bytes(),
            vec![0, 0, 0, 2, b'a', b'b', 0, 0, 0, 8, 0, 0, 0, 0, 0, 0, 1, 2]
        );
    }

    #[test]
    fn field_boundaries_are_unambiguous() {
        let mut a = CanonWriter::new();
        a.str("ab").str("c");
        let mut b = CanonWriter::new();
        b.str("a").str("bc");
        assert_ne!(a.into_bytes(), b.into_bytes());
    }
}
