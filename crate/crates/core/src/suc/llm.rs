//! Action-shared semantics: summary text from a language model (or a
//! fixture) and the desk-scale text encoder that embeds it.

use std::path::PathBuf;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::DenseArray;

pub const ACTIONS_PLACEHOLDER: &str = "⟨Actions⟩";

pub const DEFAULT_TEMPLATE: &str = "You are given the following action categories ⟨Actions⟩: Please summarize the shared characteristics across these action categories, from the perspective of motion patterns and body dynamics.";

/// Used when fixture mode has no file configured.
pub const EMBEDDED_FIXTURE: &str = include_str!("../../fixtures/shared_semantics.txt");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SourceMode {
    #[default]
    Fixture,
    Live,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SharedSemanticsSource {
    pub mode: SourceMode,
    pub fixture_path: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub timeout_ms: u64,
    pub template: String,
}

impl Default for SharedSemanticsSource {
    fn default() -> Self {
        Self {
            mode: SourceMode::Fixture,
            fixture_path: None,
            endpoint: None,
            timeout_ms: 10_000,
            template: DEFAULT_TEMPLATE.to_string(),
        }
    }
}

pub fn render_prompt(template: &str, categories: &[String]) -> Result<String> {
    if !template.contains(ACTIONS_PLACEHOLDER) {
        return Err(Error::Config(format!(
            "prompt template lacks the {ACTIONS_PLACEHOLDER} placeholder"
        )));
    }
    Ok(template.replace(ACTIONS_PLACEHOLDER, &categories.join(", ")))
}

#[derive(Serialize)]
struct PromptBody<'a> {
    prompt: &'a str,
}

#[derive(Deserialize)]
struct ReplyBody {
    text: String,
}

fn live(endpoint: &str, timeout_ms: u64, prompt: &str) -> Result<String> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_millis(timeout_ms)))
        .build()
        .into();
    let mut resp = agent
        .post(endpoint)
        .send_json(PromptBody { prompt })
        .map_err(|e| Error::Transport(format!("{endpoint}: {e}")))?;
    let reply: ReplyBody = resp
        .body_mut()
        .read_json()
        .map_err(|e| Error::Transport(format!("{endpoint}: bad reply: {e}")))?;
    Ok(reply.text)
}

pub fn llm_summarize(src: &SharedSemanticsSource, categories: &[String]) -> Result<String> {
    if categories.is_empty() {
        return Err(Error::Precondition("no categories to summarize".into()));
    }
    let prompt = render_prompt(&src.template, categories)?;
    match src.mode {
        SourceMode::Fixture => match &src.fixture_path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("fixture {}: {e}", p.display()))),
            None => Ok(EMBEDDED_FIXTURE.to_string()),
        },
        SourceMode::Live => {
            let endpoint = src
                .endpoint
                .as_deref()
                .ok_or_else(|| Error::Config("suc.endpoint is required in live mode".into()))?;
            live(endpoint, src.timeout_ms, &prompt)
        }
    }
}

/// Stand-in text encoder: the normalised mean of `prototypes` plus a
/// perturbation of scale `perturb` seeded by a hash of `summary`.
pub fn encode_shared(summary: &str, prototypes: &DenseArray, perturb: f64) -> Result<DenseArray> {
    if summary.is_empty() {
        return Err(Error::Precondition("empty summary".into()));
    }
    let digest = Sha256::digest(summary.as_bytes());
    let seed = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = prototypes.mean_rows()?;
    let noise = DenseArray::randn(v.shape(), 1.0, &mut rng);
    v.add_assign_scaled(&noise, perturb);
    if v.norm() == 0.0 {
        return Err(Error::NonFinite("shared embedding has zero norm".into()));
    }
    Ok(v.normalized())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("a{i}")).collect()
    }

    #[test]
    fn fixture_is_passthrough() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("fx.txt");
        std::fs::write(&p, "exact text\nline two").unwrap();
        let src = SharedSemanticsSource {
            fixture_path: Some(p),
            ..Default::default()
        };
        assert_eq!(llm_summarize(&src, &names(3)).unwrap(), "exact text\nline two");
        assert_eq!(llm_summarize(&src, &names(1)).unwrap(), "exact text\nline two");
        let embedded = SharedSemanticsSource::default();
        assert_eq!(llm_summarize(&embedded, &names(2)).unwrap(), EMBEDDED_FIXTURE);
    }

    #[test]
    fn missing_fixture_is_config_error() {
        let src = SharedSemanticsSource {
            fixture_path: Some("/nonexistent/fx.txt".into()),
            ..Default::default()
        };
        assert!(matches!(llm_summarize(&src, &names(1)), Err(Error::Config(_))));
        assert!(matches!(
            llm_summarize(&SharedSemanticsSource::default(), &[]),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn template_substitution() {
        let p = render_prompt(DEFAULT_TEMPLATE, &["run".into(), "jump".into()]).unwrap();
        assert!(p.starts_with("You are given the following action categories run, jump: Please"));
        assert!(!p.contains(ACTIONS_PLACEHOLDER));
        assert!(render_prompt("no slot", &names(1)).is_err());
    }

    #[test]
    fn live_mode_against_mock_server() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let (mut sock, _) = listener.accept().unwrap();
            let mut buf = Vec::new();
            let mut chunk = [0u8; 1024];
            // read headers and the declared body
            loop {
                let n = sock.read(&mut chunk).unwrap();
                buf.extend_from_slice(&chunk[..n]);
                let text = String::from_utf8_lossy(&buf).to_string();
                if let Some(h) = text.find("\r\n\r\n") {
                    let len = text[..h]
                        .lines()
                        .find_map(|l| {
                            let l = l.to_ascii_lowercase();
                            l.strip_prefix("content-length:").map(|v| v.trim().parse::<usize>().unwrap())
                        })
                        .unwrap_or(0);
                    if buf.len() >= h + 4 + len {
                        break;
                    }
                }
                if n == 0 {
                    break;
                }
            }
            let body = "{\"text\":\"X\"}";
            write!(
                sock,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
            String::from_utf8_lossy(&buf).to_string()
        });
        let src = SharedSemanticsSource {
            mode: SourceMode::Live,
            endpoint: Some(format!("http://{addr}/summarize")),
            timeout_ms: 5000,
            ..Default::default()
        };
        assert_eq!(llm_summarize(&src, &["run".into(), "swim".into()]).unwrap(), "X");
        let request = server.join().unwrap();
        assert!(request.starts_with("POST /summarize"));
        assert!(request.contains("action categories run, swim:"));
    }

    #[test]
    fn unreachable_endpoint_is_transport_error() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let src = SharedSemanticsSource {
            mode: SourceMode::Live,
            endpoint: Some(format!("http://127.0.0.1:{port}/")),
            timeout_ms: 2000,
            ..Default::default()
        };
        assert!(matches!(llm_summarize(&src, &names(2)), Err(Error::Transport(_))));
    }

    #[test]
    fn encoder_contract() {
        let protos = DenseArray::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]).unwrap();
        let plain = encode_shared("s", &protos, 0.0).unwrap();
        let h = 0.5f64.sqrt();
        assert!(plain.max_abs_diff(&DenseArray::row_vector(vec![h, h, 0.0])) < 1e-15);
        let a = encode_shared("summary", &protos, 0.3).unwrap();
        let b = encode_shared("summary", &protos, 0.3).unwrap();
        assert_eq!(a, b);
        assert!((a.norm() - 1.0).abs() < 1e-9);
        let c = encode_shared("other summary", &protos, 0.3).unwrap();
        assert_ne!(a, c);
        assert!(encode_shared("", &protos, 0.3).is_err());
    }
}
