/// Outcome of probing one function for a chunk.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Probe {
    Accept,
    /// Storage would pass the hardcap.
    Full,
    /// The request queue the chunk would enter is at capacity.
    Busy,
}

/// The open-function view the placement walk runs against.
pub trait OpenFunctions {
    type Error;

    fn len(&self) -> usize;
    /// Launches one more function group at the end of the list.
    fn scale_out(&mut self) -> Result<(), Self::Error>;
    fn test_and_place(&mut self, index: usize) -> Probe;
}

/// Walks the open-function list from `chunk_id` in strides of `o` until a
/// function accepts, scaling out when the pointer runs off the end. Returns
/// the accepting index.
///
/// Every probed index is congruent to `chunk_id` modulo `o`, so chunks with
/// distinct ids never land on the same slot of a group.
pub fn place<F: OpenFunctions>(chunk_id: usize, o: usize, funcs: &mut F) -> Result<usize, F::Error> {
    let mut ptr = chunk_id;
    loop {
        while ptr >= funcs.len() {
            funcs.scale_out()?;
        }
        match funcs.test_and_place(ptr) {
            Probe::Accept => return Ok(ptr),
            Probe::Full | Probe::Busy => ptr += o,
        }
    }
}
