use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::GatewayError;

/// One (image, caption) demonstration for the captioner.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShot {
    pub image: String,
    pub caption: String,
}

/// A few-shot captioning profile: a directory holding `profile.json` and
/// the shot images it names. The engine only validates and forwards the
/// profile name; the content is for the captioner service.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotProfile {
    pub name: String,
    pub shots: Vec<FewShot>,
    #[serde(skip)]
    pub dir: PathBuf,
}

impl FewShotProfile {
    pub fn load(dir: &Path) -> Result<Self, GatewayError> {
        let path = dir.join("profile.json");
        let text = fs::read_to_string(&path)
            .map_err(|e| GatewayError::BackendConfig(format!("{}: {e}", path.display())))?;
        let mut profile: FewShotProfile = serde_json::from_str(&text)
            .map_err(|e| GatewayError::BackendConfig(format!("{}: {e}", path.display())))?;
        if profile.name.trim().is_empty() {
            return Err(GatewayError::BackendConfig("profile name is empty".into()));
        }
        for shot in &profile.shots {
            if !dir.join(&shot.image).is_file() {
                return Err(GatewayError::BackendConfig(format!(
                    "profile `{}` names missing image `{}`",
                    profile.name, shot.image
                )));
            }
        }
        profile.dir = dir.to_path_buf();
        Ok(profile)
    }
}
