//! Turning raw media into text context. Benchmark samples already carry
//! text, so passthrough is the default; the remote clients call a vision
//! chat endpoint and a speech transcription endpoint.

use std::path::{Path, PathBuf};
use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use super::backend::read_credential;

pub const VISUAL_CONTEXT_PROMPT: &str = include_str!("../../prompts/visual_context.txt");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PerceptionError {
    #[error("perception client unavailable: {0}")]
    ClientUnavailable(String),
    #[error("unsupported media: {0}")]
    UnsupportedMedia(String),
}

/// What to extract from: text that is already a description, or media files
/// (image frames for vision, one audio file for speech).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MediaInput {
    Text(String),
    Files(Vec<PathBuf>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum PerceptionClient {
    Passthrough,
    /// Returns a canned description or transcript.
    Stub {
        text: String,
    },
    Remote {
        endpoint: String,
        model: String,
        #[serde(default)]
        credential_env: Option<String>,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
}

fn default_timeout() -> u64 {
    120
}

const IMAGE_TYPES: &[(&str, &str)] = &[
    ("jpg", "image/jpeg"),
    ("jpeg", "image/jpeg"),
    ("png", "image/png"),
    ("webp", "image/webp"),
    ("gif", "image/gif"),
];
const AUDIO_TYPES: &[&str] = &["wav", "mp3", "m4a", "flac", "ogg", "webm"];

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or_default()
        .to_ascii_lowercase()
}

fn image_mime(path: &Path) -> Result<&'static str, PerceptionError> {
    let ext = extension(path);
    IMAGE_TYPES
        .iter()
        .find(|(e, _)| *e == ext)
        .map(|(_, m)| *m)
        .ok_or_else(|| PerceptionError::UnsupportedMedia(format!("{} is not an image frame", path.display())))
}

fn check_audio(path: &Path) -> Result<(), PerceptionError> {
    if AUDIO_TYPES.contains(&extension(path).as_str()) {
        Ok(())
    } else {
        Err(PerceptionError::UnsupportedMedia(format!(
            "{} is not an audio file",
            path.display()
        )))
    }
}

fn client(timeout_secs: u64) -> Result<reqwest::blocking::Client, PerceptionError> {
    reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(timeout_secs))
        .build()
        .map_err(|e| PerceptionError::ClientUnavailable(e.to_string()))
}

fn credential(env: Option<&str>) -> Result<Option<String>, PerceptionError> {
    read_credential(env).map_err(|e| PerceptionError::ClientUnavailable(e.to_string()))
}

fn read(path: &Path) -> Result<Vec<u8>, PerceptionError> {
    std::fs::read(path).map_err(|e| PerceptionError::UnsupportedMedia(format!("{}: {e}", path.display())))
}

fn unavailable(e: impl std::fmt::Display) -> PerceptionError {
    PerceptionError::ClientUnavailable(e.to_string())
}

/// Describes the scene in `input` for the reasoner.
pub fn extract_visual(input: &MediaInput, client_cfg: &PerceptionClient) -> Result<String, PerceptionError> {
    let frames = match (input, client_cfg) {
        (MediaInput::Text(t), _) => return Ok(t.clone()),
        (MediaInput::Files(_), PerceptionClient::Passthrough) => {
            return Err(unavailable("passthrough mode needs text, not media"))
        }
        (MediaInput::Files(files), _) if files.is_empty() => {
            return Err(PerceptionError::UnsupportedMedia("no frames given".into()))
        }
        (MediaInput::Files(files), _) => files,
    };
    let mimes = frames.iter().map(|f| image_mime(f)).collect::<Result<Vec<_>, _>>()?;
    let PerceptionClient::Remote {
        endpoint,
        model,
        credential_env,
        timeout_secs,
    } = client_cfg
    else {
        let PerceptionClient::Stub { text } = client_cfg else {
            unreachable!()
        };
        return Ok(text.clone());
    };

    let mut content = vec![json!({"type": "text", "text": VISUAL_CONTEXT_PROMPT})];
    for (frame, mime) in frames.iter().zip(mimes) {
        let data = base64::engine::general_purpose::STANDARD.encode(read(frame)?);
        content.push(json!({"type": "image_url", "image_url": {"url": format!("data:{mime};base64,{data}")}}));
    }
    let body = json!({"model": model, "messages": [{"role": "user", "content": content}]});
    let mut req = client(*timeout_secs)?.post(endpoint).json(&body);
    if let Some(key) = credential(credential_env.as_deref())? {
        req = req.bearer_auth(key);
    }
    let resp = req.send().map_err(unavailable)?;
    if !resp.status().is_success() {
        return Err(unavailable(format!("HTTP {}", resp.status())));
    }
    let value: serde_json::Value = resp.json().map_err(unavailable)?;
    value["choices"][0]["message"]["content"]
        .as_str()
        .map(|s| s.trim().to_owned())
        .ok_or_else(|| unavailable("response has no choices[0].message.content"))
}

/// Transcribes the speech in `input`.
pub fn extract_audio(input: &MediaInput, client_cfg: &PerceptionClient) -> Result<String, PerceptionError> {
    let path = match (input, client_cfg) {
        (MediaInput::Text(t), _) => return Ok(t.clone()),
        (MediaInput::Files(_), PerceptionClient::Passthrough) => {
            return Err(unavailable("passthrough mode needs text, not media"))
        }
        (MediaInput::Files(files), _) => match files.as_slice() {
            [one] => one,
            _ => {
                return Err(PerceptionError::UnsupportedMedia(
                    "expected exactly one audio file".into(),
                ))
            }
        },
    };
    check_audio(path)?;
    let PerceptionClient::Remote {
        endpoint,
        model,
        credential_env,
        timeout_secs,
    } = client_cfg
    else {
        let PerceptionClient::Stub { text } = client_cfg else {
            unreachable!()
        };
        return Ok(text.clone());
    };

    let file_name = path.file_name().and_then(|n| n.to_str()).unwrap_or("audio").to_owned();
    let part = reqwest::blocking::multipart::Part::bytes(read(path)?).file_name(file_name);
    let form = reqwest::blocking::multipart::Form::new()
        .text("model", model.clone())
        .part("file", part);
    let mut req = client(*timeout_secs)?.post(endpoint).multipart(form);
    if let Some(key) = credential(credential_env.as_deref())? {
        req = req.bearer_auth(key);
    }
    let resp = req.send().map_err(unavailable)?;
    if !resp.status().is_success() {
        return Err(unavailable(format!("HTTP {}", resp.status())));
    }
    let value: serde_json::Value = resp.json().map_err(unavailable)?;
    value["text"]
        .as_str()
        .map(|s| s.trim().to_owned())
        .ok_or_else(|| unavailable("response has no \"text\""))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn passthrough_is_identity() {
        let text = "user at a bus stop, the bus has just departed";
        let got = extract_visual(&MediaInput::Text(text.into()), &PerceptionClient::Passthrough).unwrap();
        assert_eq!(got, text);
        let got = extract_audio(&MediaInput::Text(text.into()), &PerceptionClient::Passthrough).unwrap();
        assert_eq!(got, text);
    }

    #[test]
    fn stub_returns_canned_text() {
        let stub = PerceptionClient::Stub {
            text: "Visual information shows a kitchen.".into(),
        };
        let frames = MediaInput::Files(vec!["frame_001.jpg".into()]);
        assert_eq!(
            extract_visual(&frames, &stub).unwrap(),
            "Visual information shows a kitchen."
        );
    }

    #[test]
    fn no_client_no_text() {
        let files = MediaInput::Files(vec!["clip.png".into()]);
        assert!(matches!(
            extract_visual(&files, &PerceptionClient::Passthrough),
            Err(PerceptionError::ClientUnavailable(_))
        ));
        assert!(matches!(
            extract_audio(&MediaInput::Files(vec!["a.wav".into()]), &PerceptionClient::Passthrough),
            Err(PerceptionError::ClientUnavailable(_))
        ));
    }

    #[test]
    fn unsupported_media() {
        let stub = PerceptionClient::Stub { text: "x".into() };
        assert!(matches!(
            extract_visual(&MediaInput::Files(vec!["clip.mp4".into()]), &stub),
            Err(PerceptionError::UnsupportedMedia(_))
        ));
        assert!(matches!(
            extract_audio(&MediaInput::Files(vec!["speech.txt".into()]), &stub),
            Err(PerceptionError::UnsupportedMedia(_))
        ));
    }

    #[test]
    fn remote_unreachable() {
        let dir = tempfile::tempdir().unwrap();
        let frame = dir.path().join("f.png");
        std::fs::write(&frame, [0u8; 8]).unwrap();
        let remote = PerceptionClient::Remote {
            endpoint: "http://127.0.0.1:1/v1/chat/completions".into(),
            model: "vlm".into(),
            credential_env: None,
            timeout_secs: 2,
        };
        assert!(matches!(
            extract_visual(&MediaInput::Files(vec![frame]), &remote),
            Err(PerceptionError::ClientUnavailable(_))
        ));
    }

    #[test]
    fn prompt_has_five_exemplars() {
        for i in 1..=5 {
            assert!(VISUAL_CONTEXT_PROMPT.contains(&format!("\n{i}. Visual information")));
        }
    }
}
