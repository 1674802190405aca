use std::fmt;

pub const USAGE: u8 = 1;
pub const DATA: u8 = 2;
pub const CHECK: u8 = 3;

/// A failed command, classified by the exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags, invalid configuration, or a refusal to clobber outputs.
    Usage(anyhow::Error),
    /// Unreadable, malformed or inconsistent inputs, and I/O errors.
    Data(anyhow::Error),
    /// The verification suite ran and reported failing checks.
    Check(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => USAGE,
            Failure::Data(_) => DATA,
            Failure::Check(_) => CHECK,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(e) | Failure::Data(e) => write!(f, "{e:#}"),
            Failure::Check(s) => f.write_str(s),
        }
    }
}

pub type Result<T> = std::result::Result<T, Failure>;

pub fn usage(msg: impl fmt::Display) -> Failure {
    Failure::Usage(anyhow::anyhow!("{msg}"))
}

pub fn data(msg: impl fmt::Display) -> Failure {
    Failure::Data(anyhow::anyhow!("{msg}"))
}

/// Classifies an error with context attached.
pub trait Classify<T> {
    fn data_err(self, ctx: impl fmt::Display) -> Result<T>;
    fn usage_err(self, ctx: impl fmt::Display) -> Result<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for std::result::Result<T, E> {
    fn data_err(self, ctx: impl fmt::Display) -> Result<T> {
        self.map_err(|e| Failure::Data(e.into().context(ctx.to_string())))
    }

    fn usage_err(self, ctx: impl fmt::Display) -> Result<T> {
        self.map_err(|e| Failure::Usage(e.into().context(ctx.to_string())))
    }
}
