use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    #[error("length mismatch: expected {expected} bytes, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("unsupported block width: {0} bits")]
    UnsupportedWidth(usize),

    #[error("invalid hex: {0}")]
    InvalidHex(String),

    #[error("invalid key: {0}")]
    InvalidKey(String),

    #[error(
        "sector size {sector_size} is not a positive multiple of the {block_bytes}-byte block"
    )]
    SectorNotBlockMultiple {
        sector_size: usize,
        block_bytes: usize,
    },

    #[error("data unit of {blocks} blocks exceeds the limit of 2^20 blocks")]
    DataUnitTooLarge { blocks: u64 },

    #[error("sector number {sector} does not fit in a {block_bytes}-byte block")]
    SectorNumberTooWide { sector: u64, block_bytes: usize },

    #[error("sector {sector} is outside the device (S = {sectors})")]
    SectorOutOfRange { sector: u64, sectors: u64 },

    #[error("block index {block} is outside the sector (J = {blocks})")]
    BlockOutOfRange { block: u64, blocks: u64 },

    #[error("image of {len} bytes is not a whole number of {sector_size}-byte sectors")]
    ImageSize { len: u64, sector_size: usize },

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("plan infeasible: {0}")]
    PlanInfeasible(String),

    #[error("keyring holds {have} keys but the policy needs {need}")]
    KeyringTooSmall { have: usize, need: u64 },

    #[error("unsupported resize: {0}")]
    UnsupportedResize(String),

    #[error("collision precondition violated: {0}")]
    NotACollision(String),

    #[error("address {0} is outside the device's address space")]
    OutOfAddressSpace(String),

    #[error("keyring file: {0}")]
    KeyringFormat(String),

    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
