use std::path::PathBuf;
use std::process::Command;
use std::sync::atomic::{AtomicU64, Ordering};

use image::RgbImage;

use crate::error::{Error, Result};

/// Reads the text rendered in an image crop.
pub trait TextRecognizer {
    fn recognize(&mut self, image: &RgbImage) -> Result<String>;
}

/// Runs an external program with the crop's PNG path appended to its
/// arguments and takes the trimmed stdout as the recognized text.
#[derive(Clone, Debug)]
pub struct CommandRecognizer {
    pub program: PathBuf,
    pub args: Vec<String>,
}

static COUNTER: AtomicU64 = AtomicU64::new(0);

impl CommandRecognizer {
    pub fn new(program: impl Into<PathBuf>, args: Vec<String>) -> Self {
        Self {
            program: program.into(),
            args,
        }
    }
}

impl TextRecognizer for CommandRecognizer {
    fn recognize(&mut self, image: &RgbImage) -> Result<String> {
        let path = std::env::temp_dir().join(format!(
            "omnitext-ocr-{}-{}.png",
            std::process::id(),
            COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        image.save(&path)?;
        let output = Command::new(&self.program).args(&self.args).arg(&path).output();
        let _ = std::fs::remove_file(&path);
        let output = output?;
        if !output.status.success() {
            return Err(Error::External(format!(
                "recognizer {} exited with {}",
                self.program.display(),
                output.status
            )));
        }
        Ok(String::from_utf8_lossy(&output.stdout).trim().to_owned())
    }
}
