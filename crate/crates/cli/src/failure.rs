use std::fmt::Display;

/// A failed command, classified for the exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad arguments, missing or malformed input files, invalid config. Exit 1.
    User(anyhow::Error),
    /// A model, embedding or web provider failed. Exit 2.
    Provider(anyhow::Error),
    /// Anything else. Exit 3.
    Internal(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::User(_) => 1,
            Failure::Provider(_) => 2,
            Failure::Internal(_) => 3,
        }
    }

    pub fn class(&self) -> &'static str {
        match self {
            Failure::User(_) => "user",
            Failure::Provider(_) => "provider",
            Failure::Internal(_) => "internal",
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::User(e) | Failure::Provider(e) | Failure::Internal(e) => e,
        }
    }

    /// The error chain joined with `: `, skipping causes whose text an outer
    /// message already repeats.
    pub fn message(&self) -> String {
        let mut out = String::new();
        for cause in self.error().chain() {
            let text = cause.to_string();
            if out.contains(&text) {
                continue;
            }
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
        out
    }

    pub fn user(message: impl Display) -> Self {
        Failure::User(anyhow::anyhow!("{message}"))
    }
}

/// Attaches a class and a context line to any error.
pub trait Classify<T> {
    fn user(self, context: impl Display) -> Result<T, Failure>;
    fn provider(self, context: impl Display) -> Result<T, Failure>;
    fn internal(self, context: impl Display) -> Result<T, Failure>;
}

impl<T, E> Classify<T> for Result<T, E>
where
    E: std::error::Error + Send + Sync + 'static,
{
    fn user(self, context: impl Display) -> Result<T, Failure> {
        self.map_err(|e| Failure::User(anyhow::Error::new(e).context(context.to_string())))
    }

    fn provider(self, context: impl Display) -> Result<T, Failure> {
        self.map_err(|e| Failure::Provider(anyhow::Error::new(e).context(context.to_string())))
    }

    fn internal(self, context: impl Display) -> Result<T, Failure> {
        self.map_err(|e| Failure::Internal(anyhow::Error::new(e).context(context.to_string())))
    }
}
