use std::fmt;

use bytes::Bytes;

use super::CodecError;

pub const MAX_KEY_LEN: usize = 1024;

/// Identity of a stored object: a non-empty byte string of at most 1 KiB.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ObjectKey(Bytes);

impl ObjectKey {
    pub fn new(name: impl Into<Bytes>) -> Result<Self, CodecError> {
        let name = name.into();
        if name.is_empty() || name.len() > MAX_KEY_LEN {
            return Err(CodecError::InvalidKey(name.len()));
        }
        Ok(ObjectKey(name))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<&str> for ObjectKey {
    type Error = CodecError;

    fn try_from(s: &str) -> Result<Self, CodecError> {
        ObjectKey::new(Bytes::copy_from_slice(s.as_bytes()))
    }
}

impl TryFrom<&[u8]> for ObjectKey {
    type Error = CodecError;

    fn try_from(s: &[u8]) -> Result<Self, CodecError> {
        ObjectKey::new(Bytes::copy_from_slice(s))
    }
}

impl fmt::Debug for ObjectKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ObjectKey({})", self)
    }
}

impl fmt::Display for ObjectKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match std::str::from_utf8(&self.0) {
            Ok(s) => f.write_str(s),
            Err(_) => {
                for b in self.0.iter() {
                    write!(f, "{b:02x}")?;
                }
                Ok(())
            }
        }
    }
}

/// Address of one chunk: object key, large-object piece index, EC chunk index.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ChunkRef {
    pub key: ObjectKey,
    pub piece_id: u32,
    pub chunk_id: u16,
}

impl ChunkRef {
    pub fn new(key: ObjectKey, piece_id: u32, chunk_id: u16) -> Self {
        ChunkRef { key, piece_id, chunk_id }
    }
}

impl fmt::Display for ChunkRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}.{}", self.key, self.piece_id, self.chunk_id)
    }
}

/// An erasure-coded fragment of one object piece.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Chunk {
    pub key: ObjectKey,
    pub chunk_id: u16,
    pub piece_id: u32,
    /// Length of the piece before padding; decode truncates to this.
    pub original_size: u64,
    pub payload: Bytes,
}

impl Chunk {
    pub fn size(&self) -> u64 {
        self.payload.len() as u64
    }

    pub fn chunk_ref(&self) -> ChunkRef {
        ChunkRef::new(self.key.clone(), self.piece_id, self.chunk_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_bounds() {
        assert!(ObjectKey::new(Bytes::new()).is_err());
        assert!(ObjectKey::new(vec![7u8; MAX_KEY_LEN]).is_ok());
        assert!(ObjectKey::new(vec![7u8; MAX_KEY_LEN + 1]).is_err());
        let a = ObjectKey::try_from("layer/1").unwrap();
        let b = ObjectKey::try_from(b"layer/1".as_slice()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, ObjectKey::try_from("layer/2").unwrap());
    }
}
